//! Sequential convolution variants: the direct single-pass sum (generic and
//! hand-unrolled for width 5), the horizontal/vertical two-pass pipeline,
//! copy-back, and exact arithmetic accounting.
//!
//! Every variant accumulates its terms in kernel row-major order, left to
//! right, starting from the first product. That fixes the rounding sequence,
//! so the generic and unrolled single-pass paths agree bit for bit and the
//! parallel executors reproduce sequential output exactly.
//!
//! The row kernels here take a whole source plane plus a destination slice
//! covering exactly the rows being produced; the executors in
//! [`crate::exec`] hand disjoint row blocks of one destination to different
//! workers.

use std::cell::Cell;
use std::fmt;
use std::ops::{Add, Mul, Range};

use crate::error::{Error, Result};
use crate::image::{Plane, ValidRegion};
use crate::kernel::{DenseKernel, SeparableKernel};

/// Relative tolerance when comparing two-pass against single-pass output.
pub const CROSS_ALGORITHM_REL_TOL: f64 = 1e-4;
/// Absolute floor paired with [`CROSS_ALGORITHM_REL_TOL`].
pub const CROSS_ALGORITHM_ABS_TOL: f64 = 1e-5;

/// Arithmetic the row kernels need. Implemented for `f32`, and for a counting
/// wrapper used by [`shadow_count`].
pub trait Sample: Copy + Add<Output = Self> + Mul<Output = Self> + Send + Sync {
    const ZERO: Self;
}

impl Sample for f32 {
    const ZERO: f32 = 0.0;
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Algorithm {
    /// Four nested loops over image and kernel.
    SinglePassGeneric,
    /// Kernel loops unrolled into one 25-term expression.
    SinglePassUnrolled5,
    /// Horizontal 1-D pass into scratch, then vertical pass back.
    TwoPass,
}

impl Algorithm {
    pub fn name(self) -> &'static str {
        match self {
            Algorithm::SinglePassGeneric => "single-generic",
            Algorithm::SinglePassUnrolled5 => "single-unrolled",
            Algorithm::TwoPass => "two-pass",
        }
    }

    pub fn from_name(name: &str) -> Option<Self> {
        match name {
            "single-generic" => Some(Algorithm::SinglePassGeneric),
            "single-unrolled" => Some(Algorithm::SinglePassUnrolled5),
            "two-pass" => Some(Algorithm::TwoPass),
            _ => None,
        }
    }

    pub fn is_single_pass(self) -> bool {
        !matches!(self, Algorithm::TwoPass)
    }
}

impl fmt::Display for Algorithm {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

/// An algorithm plus whether a single-pass result is copied back into the
/// source. Two-pass always finishes in the source plane.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct ConvVariant {
    pub algorithm: Algorithm,
    pub copy_back: bool,
}

impl ConvVariant {
    pub fn new(algorithm: Algorithm, copy_back: bool) -> Self {
        ConvVariant {
            algorithm,
            copy_back: copy_back || algorithm == Algorithm::TwoPass,
        }
    }

    pub fn single_generic(copy_back: bool) -> Self {
        Self::new(Algorithm::SinglePassGeneric, copy_back)
    }

    pub fn single_unrolled(copy_back: bool) -> Self {
        Self::new(Algorithm::SinglePassUnrolled5, copy_back)
    }

    pub fn two_pass() -> Self {
        Self::new(Algorithm::TwoPass, true)
    }

    /// Whether the convolved values end up in the source buffer rather than
    /// the scratch buffer.
    pub fn result_in_source(&self) -> bool {
        self.algorithm == Algorithm::TwoPass || self.copy_back
    }

    pub fn check_width(&self, width: usize) -> Result<()> {
        if self.algorithm == Algorithm::SinglePassUnrolled5 && width != 5 {
            return Err(Error::UnsupportedWidth {
                width,
                context: "the unrolled single-pass body exists only for width 5",
            });
        }
        Ok(())
    }
}

/// Exact operation counts for convolving one plane.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub struct ArithCount {
    pub multiplications: u64,
    pub additions: u64,
}

// ---------------------------------------------------------------------------
// Row kernels. `dst` covers exactly the rows in `rows`, full width.
// ---------------------------------------------------------------------------

pub(crate) fn single_pass_rows<T: Sample>(
    src: &[T],
    cols: usize,
    kernel: &[T],
    width: usize,
    rows: Range<usize>,
    dst: &mut [T],
) {
    debug_assert_eq!(dst.len(), rows.len() * cols);
    let r = (width - 1) / 2;
    for (t, i) in rows.enumerate() {
        for j in r..cols - r {
            let mut acc = src[(i - r) * cols + (j - r)] * kernel[0];
            for ki in 0..width {
                for kj in 0..width {
                    if ki == 0 && kj == 0 {
                        continue;
                    }
                    acc = acc + src[(i + ki - r) * cols + (j + kj - r)] * kernel[ki * width + kj];
                }
            }
            dst[t * cols + j] = acc;
        }
    }
}

pub(crate) fn single_pass5_rows<T: Sample>(
    src: &[T],
    cols: usize,
    k: &[T],
    rows: Range<usize>,
    dst: &mut [T],
) {
    debug_assert_eq!(dst.len(), rows.len() * cols);
    let k: &[T; 25] = k.try_into().expect("width-5 dense kernel");
    let n = cols - 4;
    for (t, i) in rows.enumerate() {
        let at = |d: usize| &src[(i + d - 2) * cols..][..n + 4];
        let (a, b, c, d, e) = (at(0), at(1), at(2), at(3), at(4));
        let out = &mut dst[t * cols + 2..][..n];
        for j in 0..n {
            out[j] = a[j] * k[0]
                + a[j + 1] * k[1]
                + a[j + 2] * k[2]
                + a[j + 3] * k[3]
                + a[j + 4] * k[4]
                + b[j] * k[5]
                + b[j + 1] * k[6]
                + b[j + 2] * k[7]
                + b[j + 3] * k[8]
                + b[j + 4] * k[9]
                + c[j] * k[10]
                + c[j + 1] * k[11]
                + c[j + 2] * k[12]
                + c[j + 3] * k[13]
                + c[j + 4] * k[14]
                + d[j] * k[15]
                + d[j + 1] * k[16]
                + d[j + 2] * k[17]
                + d[j + 3] * k[18]
                + d[j + 4] * k[19]
                + e[j] * k[20]
                + e[j + 1] * k[21]
                + e[j + 2] * k[22]
                + e[j + 3] * k[23]
                + e[j + 4] * k[24];
        }
    }
}

pub(crate) fn horizontal_rows<T: Sample>(
    src: &[T],
    cols: usize,
    k: &[T],
    rows: Range<usize>,
    dst: &mut [T],
) {
    debug_assert_eq!(dst.len(), rows.len() * cols);
    let w = k.len();
    let r = (w - 1) / 2;
    let n = cols - 2 * r;
    for (t, i) in rows.enumerate() {
        let row = &src[i * cols..][..cols];
        let out = &mut dst[t * cols + r..][..n];
        if let Ok(k) = <&[T; 5]>::try_from(k) {
            for j in 0..n {
                let s = &row[j..j + 5];
                out[j] = s[0] * k[0] + s[1] * k[1] + s[2] * k[2] + s[3] * k[3] + s[4] * k[4];
            }
        } else {
            for j in 0..n {
                let mut acc = row[j] * k[0];
                for m in 1..w {
                    acc = acc + row[j + m] * k[m];
                }
                out[j] = acc;
            }
        }
    }
}

pub(crate) fn vertical_rows<T: Sample>(
    src: &[T],
    cols: usize,
    k: &[T],
    rows: Range<usize>,
    dst: &mut [T],
) {
    debug_assert_eq!(dst.len(), rows.len() * cols);
    let w = k.len();
    let r = (w - 1) / 2;
    let n = cols - 2 * r;
    for (t, i) in rows.enumerate() {
        let out = &mut dst[t * cols + r..][..n];
        let at = |m: usize| &src[(i + m - r) * cols + r..][..n];
        if let Ok(k) = <&[T; 5]>::try_from(k) {
            let (a, b, c, d, e) = (at(0), at(1), at(2), at(3), at(4));
            for j in 0..n {
                out[j] = a[j] * k[0] + b[j] * k[1] + c[j] * k[2] + d[j] * k[3] + e[j] * k[4];
            }
        } else {
            let first = at(0);
            for j in 0..n {
                out[j] = first[j] * k[0];
            }
            for (m, &km) in k.iter().enumerate().skip(1) {
                let s = at(m);
                for j in 0..n {
                    out[j] = out[j] + s[j] * km;
                }
            }
        }
    }
}

pub(crate) fn copy_rows<T: Copy>(
    src: &[T],
    cols: usize,
    col_range: Range<usize>,
    rows: Range<usize>,
    dst: &mut [T],
) {
    debug_assert_eq!(dst.len(), rows.len() * cols);
    for (t, i) in rows.enumerate() {
        dst[t * cols..][col_range.clone()].copy_from_slice(&src[i * cols..][col_range.clone()]);
    }
}

/// Zeroes every scratch sample the horizontal pass will not write, so a
/// vertical pass reading border rows sees zeros rather than stale data.
pub(crate) fn zero_horizontal_complement<T: Sample>(
    scratch: &mut [T],
    rows: usize,
    cols: usize,
    radius: usize,
    written_rows: Range<usize>,
) {
    for i in 0..rows {
        let row = &mut scratch[i * cols..][..cols];
        if written_rows.contains(&i) {
            row[..radius].fill(T::ZERO);
            row[cols - radius..].fill(T::ZERO);
        } else {
            row.fill(T::ZERO);
        }
    }
}

// ---------------------------------------------------------------------------
// Plane-level operations.
// ---------------------------------------------------------------------------

fn check_pair(src: &Plane, dst: &Plane, width: usize) -> Result<ValidRegion> {
    src.same_dims(dst)?;
    ValidRegion::for_radius(src.rows(), src.cols(), (width - 1) / 2)
}

/// Direct evaluation of the 2-D sum over the valid region of `dst`.
pub fn conv_single_pass_generic(src: &Plane, kernel: &DenseKernel, dst: &mut Plane) -> Result<()> {
    let region = check_pair(src, dst, kernel.width())?;
    let cols = src.cols();
    let out = &mut dst.as_mut_slice()[region.row_lo * cols..region.row_hi * cols];
    single_pass_rows(
        src.as_slice(),
        cols,
        kernel.as_slice(),
        kernel.width(),
        region.rows(),
        out,
    );
    Ok(())
}

/// Same contract and bit-identical result as [`conv_single_pass_generic`],
/// with the 25 products written out.
pub fn conv_single_pass_unrolled5(
    src: &Plane,
    kernel: &DenseKernel,
    dst: &mut Plane,
) -> Result<()> {
    ConvVariant::single_unrolled(false).check_width(kernel.width())?;
    let region = check_pair(src, dst, kernel.width())?;
    let cols = src.cols();
    let out = &mut dst.as_mut_slice()[region.row_lo * cols..region.row_hi * cols];
    single_pass5_rows(src.as_slice(), cols, kernel.as_slice(), region.rows(), out);
    Ok(())
}

/// 1-D convolution along each row of the valid region.
pub fn horizontal_pass(src: &Plane, k: &SeparableKernel, dst: &mut Plane) -> Result<()> {
    let region = check_pair(src, dst, k.width())?;
    horizontal_over(src, k, dst, region.rows());
    Ok(())
}

fn horizontal_over(src: &Plane, k: &SeparableKernel, dst: &mut Plane, rows: Range<usize>) {
    let cols = src.cols();
    let out = &mut dst.as_mut_slice()[rows.start * cols..rows.end * cols];
    horizontal_rows(src.as_slice(), cols, k.weights(), rows, out);
}

/// 1-D convolution along each column of the valid region.
pub fn vertical_pass(src: &Plane, k: &SeparableKernel, dst: &mut Plane) -> Result<()> {
    let region = check_pair(src, dst, k.width())?;
    let cols = src.cols();
    let out = &mut dst.as_mut_slice()[region.row_lo * cols..region.row_hi * cols];
    vertical_rows(src.as_slice(), cols, k.weights(), region.rows(), out);
    Ok(())
}

/// Horizontal pass `a -> scratch`, then vertical pass `scratch -> a`.
///
/// The horizontal pass covers rows `[r, rows - r)` only, so the result agrees
/// with the single-pass sum on the doubly-interior rows `[2r, rows - 2r)`.
pub fn conv_two_pass(a: &mut Plane, k: &SeparableKernel, scratch: &mut Plane) -> Result<()> {
    let region = check_pair(a, scratch, k.width())?;
    two_pass_with_rows(a, k, scratch, region.rows());
    Ok(())
}

/// Two-pass variant whose horizontal pass covers every row, which makes it
/// agree with the single-pass sum on the whole valid region.
pub fn conv_two_pass_full_rows(
    a: &mut Plane,
    k: &SeparableKernel,
    scratch: &mut Plane,
) -> Result<()> {
    check_pair(a, scratch, k.width())?;
    two_pass_with_rows(a, k, scratch, 0..a.rows());
    Ok(())
}

fn two_pass_with_rows(
    a: &mut Plane,
    k: &SeparableKernel,
    scratch: &mut Plane,
    h_rows: Range<usize>,
) {
    let (rows, cols) = a.dims();
    zero_horizontal_complement(
        scratch.as_mut_slice(),
        rows,
        cols,
        k.radius(),
        h_rows.clone(),
    );
    horizontal_over(a, k, scratch, h_rows);
    let r = k.radius();
    let out = &mut a.as_mut_slice()[r * cols..(rows - r) * cols];
    vertical_rows(scratch.as_slice(), cols, k.weights(), r..rows - r, out);
}

/// Copies `region` of `src` into `dst`, leaving the rest of `dst` alone.
pub fn copy_back(src: &Plane, dst: &mut Plane, region: &ValidRegion) -> Result<()> {
    src.same_dims(dst)?;
    region.check_within(src.rows(), src.cols())?;
    let cols = src.cols();
    let out = &mut dst.as_mut_slice()[region.row_lo * cols..region.row_hi * cols];
    copy_rows(src.as_slice(), cols, region.cols(), region.rows(), out);
    Ok(())
}

/// Runs `variant` on one plane sequentially. The result lands in `a` when
/// [`ConvVariant::result_in_source`] holds, otherwise in `scratch`.
pub fn convolve_plane(
    a: &mut Plane,
    k: &SeparableKernel,
    variant: ConvVariant,
    scratch: &mut Plane,
) -> Result<()> {
    variant.check_width(k.width())?;
    match variant.algorithm {
        Algorithm::TwoPass => conv_two_pass(a, k, scratch),
        single => {
            let dense = k.outer_product();
            if single == Algorithm::SinglePassGeneric {
                conv_single_pass_generic(a, &dense, scratch)?;
            } else {
                conv_single_pass_unrolled5(a, &dense, scratch)?;
            }
            if variant.copy_back {
                let region = ValidRegion::for_radius(a.rows(), a.cols(), k.radius())?;
                copy_back(scratch, a, &region)?;
            }
            Ok(())
        }
    }
}

/// Closed-form operation counts for one plane.
pub fn arith_count(variant: ConvVariant, rows: usize, cols: usize, width: usize) -> ArithCount {
    let r = width.saturating_sub(1) / 2;
    let valid = (rows.saturating_sub(2 * r) * cols.saturating_sub(2 * r)) as u64;
    let w = width as u64;
    let (terms, accumulations) = match variant.algorithm {
        Algorithm::TwoPass => (w, 2),
        _ => (w * w, 1),
    };
    ArithCount {
        multiplications: terms * accumulations * valid,
        additions: (terms - 1) * accumulations * valid,
    }
}

thread_local! {
    static MULS: Cell<u64> = const { Cell::new(0) };
    static ADDS: Cell<u64> = const { Cell::new(0) };
}

/// `f32` that counts the operations applied to it on the current thread.
#[derive(Clone, Copy, Debug)]
struct Tally(f32);

impl Add for Tally {
    type Output = Tally;
    fn add(self, rhs: Tally) -> Tally {
        ADDS.with(|c| c.set(c.get() + 1));
        Tally(self.0 + rhs.0)
    }
}

#[allow(clippy::suspicious_arithmetic_impl)]
impl Mul for Tally {
    type Output = Tally;
    fn mul(self, rhs: Tally) -> Tally {
        MULS.with(|c| c.set(c.get() + 1));
        Tally(self.0 * rhs.0)
    }
}

impl Sample for Tally {
    const ZERO: Tally = Tally(0.0);
}

/// Counts the arithmetic the implementation actually performs by running the
/// real row kernels for `variant` on a zero `rows x cols` plane of counting
/// samples, with a kernel of the given width.
pub fn shadow_count(
    variant: ConvVariant,
    rows: usize,
    cols: usize,
    width: usize,
) -> Result<ArithCount> {
    let k = SeparableKernel::new(vec![1.0; width])?;
    variant.check_width(width)?;
    let region = ValidRegion::for_radius(rows, cols, k.radius())?;
    let src = vec![Tally(0.0); rows * cols];
    let mut dst = vec![Tally(0.0); rows * cols];
    let weights: Vec<Tally> = k.weights().iter().map(|&w| Tally(w)).collect();
    let dense: Vec<Tally> = k
        .outer_product()
        .as_slice()
        .iter()
        .map(|&w| Tally(w))
        .collect();

    MULS.with(|c| c.set(0));
    ADDS.with(|c| c.set(0));
    let band = region.row_lo * cols..region.row_hi * cols;
    match variant.algorithm {
        Algorithm::SinglePassGeneric => {
            single_pass_rows(&src, cols, &dense, width, region.rows(), &mut dst[band]);
        }
        Algorithm::SinglePassUnrolled5 => {
            single_pass5_rows(&src, cols, &dense, region.rows(), &mut dst[band]);
        }
        Algorithm::TwoPass => {
            let mut a = src;
            zero_horizontal_complement(&mut dst, rows, cols, k.radius(), region.rows());
            horizontal_rows(&a, cols, &weights, region.rows(), &mut dst[band.clone()]);
            vertical_rows(&dst, cols, &weights, region.rows(), &mut a[band]);
        }
    }
    Ok(ArithCount {
        multiplications: MULS.with(Cell::get),
        additions: ADDS.with(Cell::get),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::image::{all_close, make_synthetic, max_abs_diff};
    use proptest::prelude::*;

    fn synth(rows: usize, cols: usize, seed: u64) -> Plane {
        make_synthetic(rows, cols, 1, seed)
            .unwrap()
            .into_planes()
            .remove(0)
    }

    fn bits(p: &Plane, region: &ValidRegion) -> Vec<u32> {
        region
            .rows()
            .flat_map(|i| region.cols().map(move |j| (i, j)))
            .map(|(i, j)| p.get(i, j).to_bits())
            .collect()
    }

    /// Independent scalar evaluation of one output pixel, accumulated in the
    /// same row-major order the contract fixes.
    fn oracle_pixel(src: &Plane, k: &[f32], y: usize, x: usize) -> f32 {
        let w = k.len();
        let r = (w - 1) / 2;
        let mut acc: Option<f32> = None;
        for i in 0..w {
            for j in 0..w {
                let term = src.get(y + i - r, x + j - r) * (k[i] * k[j]);
                acc = Some(match acc {
                    None => term,
                    Some(a) => a + term,
                });
            }
        }
        acc.unwrap()
    }

    #[test]
    fn single_pass_matches_scalar_oracle() {
        let src = synth(7, 7, 42);
        let k = SeparableKernel::gaussian5();
        let mut g = Plane::new(7, 7).unwrap();
        let mut u = Plane::new(7, 7).unwrap();
        conv_single_pass_generic(&src, &k.outer_product(), &mut g).unwrap();
        conv_single_pass_unrolled5(&src, &k.outer_product(), &mut u).unwrap();
        let expect = oracle_pixel(&src, k.weights(), 3, 3);
        assert_eq!(g.get(3, 3).to_bits(), expect.to_bits());
        assert_eq!(u.get(3, 3).to_bits(), expect.to_bits());
        let region = ValidRegion::for_radius(7, 7, 2).unwrap();
        for i in region.rows() {
            for j in region.cols() {
                assert_eq!(
                    g.get(i, j).to_bits(),
                    oracle_pixel(&src, k.weights(), i, j).to_bits()
                );
            }
        }
    }

    #[test]
    fn delta_is_identity() {
        let src = synth(9, 11, 3);
        let delta = SeparableKernel::delta(5).unwrap();
        let region = ValidRegion::for_radius(9, 11, 2).unwrap();
        let mut dst = Plane::new(9, 11).unwrap();
        conv_single_pass_generic(&src, &delta.outer_product(), &mut dst).unwrap();
        assert_eq!(bits(&dst, &region), bits(&src, &region));
        conv_single_pass_unrolled5(&src, &delta.outer_product(), &mut dst).unwrap();
        assert_eq!(bits(&dst, &region), bits(&src, &region));
        horizontal_pass(&src, &delta, &mut dst).unwrap();
        assert_eq!(bits(&dst, &region), bits(&src, &region));
        vertical_pass(&src, &delta, &mut dst).unwrap();
        assert_eq!(bits(&dst, &region), bits(&src, &region));

        let mut a = src.clone();
        let mut scratch = Plane::new(9, 11).unwrap();
        conv_two_pass(&mut a, &delta, &mut scratch).unwrap();
        let inner = ValidRegion::doubly_interior(9, 11, 2).unwrap();
        assert_eq!(bits(&a, &inner), bits(&src, &inner));
    }

    #[test]
    fn constant_is_preserved() {
        let c = 77.25f32;
        let src = Plane::filled(10, 10, c).unwrap();
        let k = SeparableKernel::gaussian5();
        let mut dst = Plane::new(10, 10).unwrap();
        conv_single_pass_generic(&src, &k.outer_product(), &mut dst).unwrap();
        let region = ValidRegion::for_radius(10, 10, 2).unwrap();
        assert!(
            max_abs_diff(&dst, &src, &region).unwrap() <= f64::from(c) * f64::from(f32::EPSILON)
        );

        let mut a = src.clone();
        let mut scratch = Plane::new(10, 10).unwrap();
        conv_two_pass(&mut a, &k, &mut scratch).unwrap();
        let inner = ValidRegion::doubly_interior(10, 10, 2).unwrap();
        assert_eq!(max_abs_diff(&a, &src, &inner).unwrap(), 0.0);
    }

    #[test]
    fn horizontal_hand_values() {
        let row = [3.0, 1.0, 4.0, 1.0, 5.0, 9.0, 2.0];
        let src = Plane::from_fn(5, 7, |_, j| row[j]).unwrap();
        let mut dst = Plane::new(5, 7).unwrap();
        horizontal_pass(&src, &SeparableKernel::gaussian5(), &mut dst).unwrap();
        assert_eq!(dst.get(2, 2), 2.5);

        let col = Plane::from_fn(7, 5, |i, _| row[i]).unwrap();
        let mut dst = Plane::new(7, 5).unwrap();
        vertical_pass(&col, &SeparableKernel::gaussian5(), &mut dst).unwrap();
        assert_eq!(dst.get(2, 2), 2.5);
    }

    #[test]
    fn ramp_survives_symmetric_kernel() {
        let src = Plane::from_fn(8, 12, |_, j| j as f32).unwrap();
        let mut dst = Plane::new(8, 12).unwrap();
        horizontal_pass(&src, &SeparableKernel::gaussian5(), &mut dst).unwrap();
        let region = ValidRegion::for_radius(8, 12, 2).unwrap();
        assert_eq!(max_abs_diff(&dst, &src, &region).unwrap(), 0.0);
    }

    #[test]
    fn vertical_is_transposed_horizontal() {
        let src = synth(9, 13, 5);
        let k = SeparableKernel::gaussian5();
        let mut v = Plane::new(9, 13).unwrap();
        vertical_pass(&src, &k, &mut v).unwrap();
        let t = src.transpose();
        let mut h = Plane::new(13, 9).unwrap();
        horizontal_pass(&t, &k, &mut h).unwrap();
        let h = h.transpose();
        let region = ValidRegion::for_radius(9, 13, 2).unwrap();
        assert_eq!(bits(&v, &region), bits(&h, &region));
    }

    #[test]
    fn two_pass_agrees_with_single_pass() {
        let src = synth(12, 12, 7);
        let k = SeparableKernel::gaussian5();
        let mut single = Plane::new(12, 12).unwrap();
        conv_single_pass_generic(&src, &k.outer_product(), &mut single).unwrap();
        let mut a = src.clone();
        let mut scratch = Plane::new(12, 12).unwrap();
        conv_two_pass(&mut a, &k, &mut scratch).unwrap();
        let inner = ValidRegion::doubly_interior(12, 12, 2).unwrap();
        assert!(all_close(&a, &single, &inner, 1e-4, 0.0).unwrap());

        // Full-row mode extends the agreement to the whole valid region.
        let mut a = src.clone();
        conv_two_pass_full_rows(&mut a, &k, &mut scratch).unwrap();
        let region = ValidRegion::for_radius(12, 12, 2).unwrap();
        assert!(all_close(&a, &single, &region, 1e-4, 0.0).unwrap());
    }

    #[test]
    fn two_pass_border_rows_see_zero_scratch() {
        // Stale scratch content must not leak into the output.
        let src = synth(12, 12, 9);
        let k = SeparableKernel::gaussian5();
        let mut a1 = src.clone();
        conv_two_pass(&mut a1, &k, &mut Plane::new(12, 12).unwrap()).unwrap();
        let mut a2 = src.clone();
        conv_two_pass(&mut a2, &k, &mut Plane::filled(12, 12, 1e6).unwrap()).unwrap();
        assert_eq!(a1, a2);
    }

    #[test]
    fn copy_back_region_only() {
        let src = synth(8, 8, 1);
        let mut dst = Plane::filled(8, 8, -1.0).unwrap();
        let region = ValidRegion::for_radius(8, 8, 2).unwrap();
        copy_back(&src, &mut dst, &region).unwrap();
        assert_eq!(max_abs_diff(&src, &dst, &region).unwrap(), 0.0);
        assert_eq!(dst.get(0, 0), -1.0);
        assert_eq!(dst.get(7, 3), -1.0);
        assert_eq!(dst.get(3, 1), -1.0);
        assert!(copy_back(&src, &mut Plane::new(8, 9).unwrap(), &region).is_err());
    }

    #[test]
    fn copy_back_matches_no_copy_result() {
        let src = synth(16, 16, 42);
        let k = SeparableKernel::gaussian5();
        let region = ValidRegion::for_radius(16, 16, 2).unwrap();
        let mut a = src.clone();
        let mut b = Plane::new(16, 16).unwrap();
        convolve_plane(&mut a, &k, ConvVariant::single_unrolled(true), &mut b).unwrap();
        let mut a2 = src.clone();
        let mut b2 = Plane::new(16, 16).unwrap();
        convolve_plane(&mut a2, &k, ConvVariant::single_unrolled(false), &mut b2).unwrap();
        assert_eq!(bits(&a, &region), bits(&b2, &region));
        assert_eq!(a2, src);
        for j in 0..16 {
            assert_eq!(a.get(0, j), src.get(0, j));
            assert_eq!(a.get(15, j), src.get(15, j));
        }
    }

    #[test]
    fn errors() {
        let src = synth(8, 8, 1);
        let mut wrong = Plane::new(8, 9).unwrap();
        let k = SeparableKernel::gaussian5();
        assert!(matches!(
            conv_single_pass_generic(&src, &k.outer_product(), &mut wrong),
            Err(Error::InvalidArgument(_))
        ));
        let k3 = SeparableKernel::new(vec![0.25, 0.5, 0.25]).unwrap();
        let mut dst = Plane::new(8, 8).unwrap();
        assert!(matches!(
            conv_single_pass_unrolled5(&src, &k3.outer_product(), &mut dst),
            Err(Error::UnsupportedWidth { width: 3, .. })
        ));
        let tiny = Plane::new(4, 8).unwrap();
        assert!(matches!(
            horizontal_pass(&tiny, &k, &mut Plane::new(4, 8).unwrap()),
            Err(Error::InvalidDimension(_))
        ));
    }

    #[test]
    fn arith_count_closed_forms() {
        let valid = 1148u64 * 1148;
        let s = arith_count(ConvVariant::single_generic(true), 1152, 1152, 5);
        assert_eq!(s.multiplications, 25 * valid);
        assert_eq!(s.additions, 24 * valid);
        let t = arith_count(ConvVariant::two_pass(), 1152, 1152, 5);
        assert_eq!(t.multiplications, 10 * valid);
        assert_eq!(t.additions, 8 * valid);
        let d1 = arith_count(ConvVariant::single_generic(false), 9, 9, 1);
        assert_eq!(d1.multiplications, 81);
        assert_eq!(
            arith_count(ConvVariant::two_pass(), 9, 9, 1).multiplications,
            162
        );
    }

    #[test]
    fn shadow_counts_match_closed_form() {
        for (variant, width) in [
            (ConvVariant::single_generic(true), 5),
            (ConvVariant::single_generic(true), 3),
            (ConvVariant::single_generic(true), 1),
            (ConvVariant::single_unrolled(false), 5),
            (ConvVariant::two_pass(), 5),
            (ConvVariant::two_pass(), 7),
            (ConvVariant::two_pass(), 1),
        ] {
            for (rows, cols) in [(9, 9), (12, 17), (30, 11)] {
                assert_eq!(
                    shadow_count(variant, rows, cols, width).unwrap(),
                    arith_count(variant, rows, cols, width),
                    "{variant:?} w={width} {rows}x{cols}"
                );
            }
        }
    }

    #[test]
    fn generic_widths_two_pass() {
        // Width 3 and 7 go through the non-unrolled paths.
        for w in [3usize, 7] {
            let weights: Vec<f32> = (0..w).map(|i| (i + 1) as f32 / 16.0).collect();
            let k = SeparableKernel::new(weights).unwrap();
            let src = synth(30, 25, w as u64);
            let mut single = Plane::new(30, 25).unwrap();
            conv_single_pass_generic(&src, &k.outer_product(), &mut single).unwrap();
            let mut a = src.clone();
            conv_two_pass(&mut a, &k, &mut Plane::new(30, 25).unwrap()).unwrap();
            let inner = ValidRegion::doubly_interior(30, 25, k.radius()).unwrap();
            assert!(all_close(&a, &single, &inner, 1e-4, 1e-5).unwrap());
        }
    }

    fn run_variant(src: &Plane, k: &SeparableKernel, variant: ConvVariant) -> Plane {
        let mut a = src.clone();
        let mut scratch = src.clone();
        convolve_plane(&mut a, k, variant, &mut scratch).unwrap();
        if variant.result_in_source() {
            a
        } else {
            scratch
        }
    }

    const VARIANTS: [ConvVariant; 3] = [
        ConvVariant {
            algorithm: Algorithm::SinglePassGeneric,
            copy_back: false,
        },
        ConvVariant {
            algorithm: Algorithm::SinglePassUnrolled5,
            copy_back: true,
        },
        ConvVariant {
            algorithm: Algorithm::TwoPass,
            copy_back: true,
        },
    ];

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(32))]

        #[test]
        fn unrolled_bitwise_equals_generic(rows in 12usize..40, cols in 12usize..40, seed in any::<u64>()) {
            let src = synth(rows, cols, seed);
            let k = SeparableKernel::gaussian5().outer_product();
            let mut g = Plane::new(rows, cols).unwrap();
            let mut u = Plane::new(rows, cols).unwrap();
            conv_single_pass_generic(&src, &k, &mut g).unwrap();
            conv_single_pass_unrolled5(&src, &k, &mut u).unwrap();
            prop_assert_eq!(g, u);
        }

        #[test]
        fn writes_stay_in_region(rows in 12usize..30, cols in 12usize..30, seed in any::<u64>()) {
            let src = synth(rows, cols, seed);
            let k = SeparableKernel::gaussian5();
            let region = ValidRegion::for_radius(rows, cols, 2).unwrap();
            let sentinel = -12345.5f32;
            let check = |p: &Plane| {
                for i in 0..rows {
                    for j in 0..cols {
                        if !region.contains(i, j) && p.get(i, j) != sentinel {
                            return false;
                        }
                    }
                }
                true
            };
            let mut dst = Plane::filled(rows, cols, sentinel).unwrap();
            conv_single_pass_generic(&src, &k.outer_product(), &mut dst).unwrap();
            prop_assert!(check(&dst));
            let mut dst = Plane::filled(rows, cols, sentinel).unwrap();
            conv_single_pass_unrolled5(&src, &k.outer_product(), &mut dst).unwrap();
            prop_assert!(check(&dst));
            let mut dst = Plane::filled(rows, cols, sentinel).unwrap();
            horizontal_pass(&src, &k, &mut dst).unwrap();
            prop_assert!(check(&dst));
            let mut dst = Plane::filled(rows, cols, sentinel).unwrap();
            vertical_pass(&src, &k, &mut dst).unwrap();
            prop_assert!(check(&dst));
            // Two-pass leaves the borders of its source plane alone.
            let mut a = src.clone();
            conv_two_pass(&mut a, &k, &mut Plane::new(rows, cols).unwrap()).unwrap();
            for i in 0..rows {
                for j in 0..cols {
                    if !region.contains(i, j) {
                        prop_assert_eq!(a.get(i, j).to_bits(), src.get(i, j).to_bits());
                    }
                }
            }
        }

        #[test]
        fn linearity(seed in any::<u64>(), alpha in 0.1f32..2.0, beta in 0.1f32..2.0) {
            let (rows, cols) = (16, 18);
            let a = synth(rows, cols, seed);
            let b = synth(rows, cols, seed ^ 0xABCD);
            let mix = Plane::from_fn(rows, cols, |i, j| alpha * a.get(i, j) + beta * b.get(i, j)).unwrap();
            let k = SeparableKernel::gaussian5();
            let region = ValidRegion::doubly_interior(rows, cols, 2).unwrap();
            for v in VARIANTS {
                let (ca, cb, cm) = (run_variant(&a, &k, v), run_variant(&b, &k, v), run_variant(&mix, &k, v));
                for i in region.rows() {
                    for j in region.cols() {
                        let lhs = f64::from(cm.get(i, j));
                        let x = f64::from(alpha) * f64::from(ca.get(i, j));
                        let y = f64::from(beta) * f64::from(cb.get(i, j));
                        prop_assert!((lhs - (x + y)).abs() <= 1e-4 * (x.abs() + y.abs()));
                    }
                }
            }
        }

        #[test]
        fn shift_equivariance(seed in any::<u64>()) {
            let (rows, cols) = (14, 20);
            let wide = synth(rows, cols + 1, seed);
            let left = Plane::from_fn(rows, cols, |i, j| wide.get(i, j)).unwrap();
            let right = Plane::from_fn(rows, cols, |i, j| wide.get(i, j + 1)).unwrap();
            let k = SeparableKernel::gaussian5();
            let region = ValidRegion::doubly_interior(rows, cols, 2).unwrap();
            for v in VARIANTS {
                let (l, r) = (run_variant(&left, &k, v), run_variant(&right, &k, v));
                for i in region.rows() {
                    for j in region.col_lo..region.col_hi - 1 {
                        prop_assert_eq!(r.get(i, j).to_bits(), l.get(i, j + 1).to_bits());
                    }
                }
            }
        }
    }
}
