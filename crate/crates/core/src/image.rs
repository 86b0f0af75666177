//! Planes, multi-plane images and the helpers around them: synthetic
//! generation, binary PPM I/O and region-restricted comparison.
//!
//! Samples are `f32` stored row-major with unit stride along columns, so the
//! innermost loop of every convolution variant walks contiguous memory.

use std::fs;
use std::ops::Range;
use std::path::Path;

use crate::error::{Error, Result};

/// Smallest image side the synthetic generator accepts (one width-5 window).
pub const MIN_SYNTHETIC_SIDE: usize = 5;

/// Plane count used when none is given.
pub const DEFAULT_PLANES: usize = 3;

/// One colour plane: a `rows x cols` grid of samples in row-major order.
#[derive(Clone, Debug, PartialEq)]
pub struct Plane {
    rows: usize,
    cols: usize,
    data: Vec<f32>,
}

impl Plane {
    /// A zero-filled plane.
    pub fn new(rows: usize, cols: usize) -> Result<Self> {
        Self::filled(rows, cols, 0.0)
    }

    pub fn filled(rows: usize, cols: usize, value: f32) -> Result<Self> {
        check_dims(rows, cols)?;
        Ok(Plane {
            rows,
            cols,
            data: vec![value; rows * cols],
        })
    }

    pub fn from_vec(rows: usize, cols: usize, data: Vec<f32>) -> Result<Self> {
        check_dims(rows, cols)?;
        if data.len() != rows * cols {
            return Err(Error::InvalidArgument(format!(
                "buffer holds {} samples, expected {rows}x{cols} = {}",
                data.len(),
                rows * cols
            )));
        }
        Ok(Plane { rows, cols, data })
    }

    /// Builds a plane by evaluating `f(row, col)` at every position.
    pub fn from_fn(
        rows: usize,
        cols: usize,
        mut f: impl FnMut(usize, usize) -> f32,
    ) -> Result<Self> {
        check_dims(rows, cols)?;
        let mut data = Vec::with_capacity(rows * cols);
        for i in 0..rows {
            for j in 0..cols {
                data.push(f(i, j));
            }
        }
        Ok(Plane { rows, cols, data })
    }

    #[inline]
    pub fn rows(&self) -> usize {
        self.rows
    }

    #[inline]
    pub fn cols(&self) -> usize {
        self.cols
    }

    #[inline]
    pub fn dims(&self) -> (usize, usize) {
        (self.rows, self.cols)
    }

    /// Flat offset of element `(row, col)`.
    #[inline]
    pub fn flatten(&self, row: usize, col: usize) -> usize {
        debug_assert!(row < self.rows && col < self.cols);
        row * self.cols + col
    }

    /// Inverse of [`Plane::flatten`].
    #[inline]
    pub fn unflatten(&self, offset: usize) -> (usize, usize) {
        debug_assert!(offset < self.data.len());
        (offset / self.cols, offset % self.cols)
    }

    #[inline]
    pub fn get(&self, row: usize, col: usize) -> f32 {
        self.data[self.flatten(row, col)]
    }

    #[inline]
    pub fn set(&mut self, row: usize, col: usize, value: f32) {
        let idx = self.flatten(row, col);
        self.data[idx] = value;
    }

    #[inline]
    pub fn row(&self, row: usize) -> &[f32] {
        &self.data[row * self.cols..(row + 1) * self.cols]
    }

    #[inline]
    pub fn row_mut(&mut self, row: usize) -> &mut [f32] {
        &mut self.data[row * self.cols..(row + 1) * self.cols]
    }

    #[inline]
    pub fn as_slice(&self) -> &[f32] {
        &self.data
    }

    #[inline]
    pub fn as_mut_slice(&mut self) -> &mut [f32] {
        &mut self.data
    }

    pub fn into_vec(self) -> Vec<f32> {
        self.data
    }

    pub fn fill(&mut self, value: f32) {
        self.data.fill(value);
    }

    pub fn transpose(&self) -> Plane {
        let mut out = vec![0.0; self.data.len()];
        for i in 0..self.rows {
            for j in 0..self.cols {
                out[j * self.rows + i] = self.data[i * self.cols + j];
            }
        }
        Plane {
            rows: self.cols,
            cols: self.rows,
            data: out,
        }
    }

    pub(crate) fn same_dims(&self, other: &Plane) -> Result<()> {
        if self.dims() != other.dims() {
            return Err(Error::InvalidArgument(format!(
                "plane dimensions differ: {}x{} vs {}x{}",
                self.rows, self.cols, other.rows, other.cols
            )));
        }
        Ok(())
    }
}

fn check_dims(rows: usize, cols: usize) -> Result<()> {
    if rows == 0 || cols == 0 {
        return Err(Error::InvalidDimension(format!(
            "plane must be non-empty, got {rows}x{cols}"
        )));
    }
    Ok(())
}

/// An ordered list of equally sized planes.
#[derive(Clone, Debug, PartialEq)]
pub struct Image {
    planes: Vec<Plane>,
}

impl Image {
    pub fn new(planes: Vec<Plane>) -> Result<Self> {
        let first = planes
            .first()
            .ok_or_else(|| Error::InvalidArgument("image needs at least one plane".into()))?;
        let dims = first.dims();
        if let Some(bad) = planes.iter().find(|p| p.dims() != dims) {
            return Err(Error::InvalidArgument(format!(
                "all planes must be {}x{}, found {}x{}",
                dims.0, dims.1, bad.rows, bad.cols
            )));
        }
        Ok(Image { planes })
    }

    pub fn zeros(rows: usize, cols: usize, planes: usize) -> Result<Self> {
        if planes == 0 {
            return Err(Error::InvalidArgument(
                "image needs at least one plane".into(),
            ));
        }
        let plane = Plane::new(rows, cols)?;
        Ok(Image {
            planes: vec![plane; planes],
        })
    }

    #[inline]
    pub fn rows(&self) -> usize {
        self.planes[0].rows
    }

    #[inline]
    pub fn cols(&self) -> usize {
        self.planes[0].cols
    }

    #[inline]
    pub fn plane_count(&self) -> usize {
        self.planes.len()
    }

    pub fn planes(&self) -> &[Plane] {
        &self.planes
    }

    pub fn planes_mut(&mut self) -> &mut [Plane] {
        &mut self.planes
    }

    pub fn plane(&self, index: usize) -> &Plane {
        &self.planes[index]
    }

    pub fn plane_mut(&mut self, index: usize) -> &mut Plane {
        &mut self.planes[index]
    }

    pub fn into_planes(self) -> Vec<Plane> {
        self.planes
    }

    pub(crate) fn same_shape(&self, other: &Image) -> Result<()> {
        if self.plane_count() != other.plane_count()
            || self.planes[0].dims() != other.planes[0].dims()
        {
            return Err(Error::InvalidArgument(format!(
                "image shapes differ: {}x{}x{} vs {}x{}x{}",
                self.plane_count(),
                self.rows(),
                self.cols(),
                other.plane_count(),
                other.rows(),
                other.cols()
            )));
        }
        Ok(())
    }
}

/// Half-open bounds of the pixels a convolution writes.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct ValidRegion {
    pub row_lo: usize,
    pub row_hi: usize,
    pub col_lo: usize,
    pub col_hi: usize,
}

impl ValidRegion {
    /// Interior whose full `(2 * radius + 1)`-wide window lies inside the image.
    pub fn for_radius(rows: usize, cols: usize, radius: usize) -> Result<Self> {
        let width = 2 * radius + 1;
        if rows < width || cols < width {
            return Err(Error::InvalidDimension(format!(
                "{rows}x{cols} image is smaller than the {width}x{width} kernel window"
            )));
        }
        Ok(ValidRegion {
            row_lo: radius,
            row_hi: rows - radius,
            col_lo: radius,
            col_hi: cols - radius,
        })
    }

    /// Rows `[2r, rows - 2r)` by columns `[r, cols - r)`: where a two-pass
    /// result whose horizontal pass skipped the border rows still reads only
    /// horizontally convolved samples.
    pub fn doubly_interior(rows: usize, cols: usize, radius: usize) -> Result<Self> {
        let region = Self::for_radius(rows, cols, radius)?;
        if rows < 4 * radius + 1 {
            return Err(Error::InvalidDimension(format!(
                "{rows} rows leave no doubly-interior rows for radius {radius}"
            )));
        }
        Ok(ValidRegion {
            row_lo: 2 * radius,
            row_hi: rows - 2 * radius,
            ..region
        })
    }

    /// The whole plane.
    pub fn full(rows: usize, cols: usize) -> Self {
        ValidRegion {
            row_lo: 0,
            row_hi: rows,
            col_lo: 0,
            col_hi: cols,
        }
    }

    #[inline]
    pub fn rows(&self) -> Range<usize> {
        self.row_lo..self.row_hi
    }

    #[inline]
    pub fn cols(&self) -> Range<usize> {
        self.col_lo..self.col_hi
    }

    pub fn len(&self) -> usize {
        self.row_hi.saturating_sub(self.row_lo) * self.col_hi.saturating_sub(self.col_lo)
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn contains(&self, row: usize, col: usize) -> bool {
        self.rows().contains(&row) && self.cols().contains(&col)
    }

    pub(crate) fn check_within(&self, rows: usize, cols: usize) -> Result<()> {
        if self.row_lo > self.row_hi
            || self.col_lo > self.col_hi
            || self.row_hi > rows
            || self.col_hi > cols
        {
            return Err(Error::InvalidArgument(format!(
                "region rows {:?} cols {:?} does not fit a {rows}x{cols} plane",
                self.rows(),
                self.cols()
            )));
        }
        Ok(())
    }
}

/// Largest absolute difference between `a` and `b` over `region`.
pub fn max_abs_diff(a: &Plane, b: &Plane, region: &ValidRegion) -> Result<f64> {
    a.same_dims(b)?;
    region.check_within(a.rows, a.cols)?;
    let mut worst = 0.0f64;
    for i in region.rows() {
        let (ra, rb) = (&a.row(i)[region.cols()], &b.row(i)[region.cols()]);
        for (&x, &y) in ra.iter().zip(rb) {
            let d = (f64::from(x) - f64::from(y)).abs();
            // NaN never compares greater, so fold it in explicitly.
            if d > worst || d.is_nan() {
                worst = d;
            }
        }
    }
    Ok(worst)
}

/// Whether every sample in `region` satisfies `|a - b| <= abs + rel * |b|`.
pub fn all_close(a: &Plane, b: &Plane, region: &ValidRegion, rel: f64, abs: f64) -> Result<bool> {
    a.same_dims(b)?;
    region.check_within(a.rows, a.cols)?;
    for i in region.rows() {
        let (ra, rb) = (&a.row(i)[region.cols()], &b.row(i)[region.cols()]);
        for (&x, &y) in ra.iter().zip(rb) {
            let (x, y) = (f64::from(x), f64::from(y));
            // A NaN on either side makes the comparison false.
            let close = (x - y).abs() <= abs + rel * y.abs();
            if !close {
                return Ok(false);
            }
        }
    }
    Ok(true)
}

/// splitmix64 stream, the generator behind [`make_synthetic`].
#[derive(Clone, Debug)]
pub struct SplitMix64 {
    state: u64,
}

impl SplitMix64 {
    pub fn new(seed: u64) -> Self {
        SplitMix64 { state: seed }
    }

    pub fn next_u64(&mut self) -> u64 {
        self.state = self.state.wrapping_add(0x9E37_79B9_7F4A_7C15);
        let mut z = self.state;
        z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
        z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
        z ^ (z >> 31)
    }

    /// Next sample in `[0, 256)`: the top 24 bits scaled by `256 / 2^24`,
    /// which is exact in `f32`.
    pub fn next_sample(&mut self) -> f32 {
        let top = (self.next_u64() >> 40) as f32;
        top / (1u32 << 24) as f32 * 256.0
    }
}

/// Deterministic test image: planes filled in order, each row-major, from one
/// splitmix64 stream seeded with `seed`.
pub fn make_synthetic(rows: usize, cols: usize, planes: usize, seed: u64) -> Result<Image> {
    if rows < MIN_SYNTHETIC_SIDE || cols < MIN_SYNTHETIC_SIDE {
        return Err(Error::InvalidDimension(format!(
            "synthetic images need at least {MIN_SYNTHETIC_SIDE}x{MIN_SYNTHETIC_SIDE}, got {rows}x{cols}"
        )));
    }
    if planes == 0 {
        return Err(Error::InvalidDimension(
            "plane count must be at least 1".into(),
        ));
    }
    let mut rng = SplitMix64::new(seed);
    let planes = (0..planes)
        .map(|_| Plane::from_fn(rows, cols, |_, _| rng.next_sample()))
        .collect::<Result<Vec<_>>>()?;
    Image::new(planes)
}

/// Decodes a binary `P6` pixmap with maxval 255 into three planes (R, G, B).
pub fn decode_ppm(bytes: &[u8]) -> Result<Image> {
    let mut cursor = HeaderCursor { bytes, pos: 0 };
    if bytes.len() < 2 {
        return Err(Error::parse(0, "truncated header: missing magic"));
    }
    if &bytes[..2] != b"P6" {
        return Err(Error::parse(
            0,
            format!(
                "unsupported magic {:?}",
                String::from_utf8_lossy(&bytes[..2])
            ),
        ));
    }
    cursor.pos = 2;
    let cols = cursor.number("width")?;
    let rows = cursor.number("height")?;
    let maxval_at = cursor.pos;
    let maxval = cursor.number("maxval")?;
    if maxval != 255 {
        return Err(Error::parse(
            maxval_at,
            format!("maxval {maxval} unsupported, expected 255"),
        ));
    }
    match bytes.get(cursor.pos) {
        Some(b) if b.is_ascii_whitespace() => cursor.pos += 1,
        Some(_) => return Err(Error::parse(cursor.pos, "expected whitespace after maxval")),
        None => return Err(Error::parse(cursor.pos, "truncated header after maxval")),
    }
    if rows == 0 || cols == 0 {
        return Err(Error::parse(
            maxval_at,
            format!("empty image {cols}x{rows}"),
        ));
    }
    let start = cursor.pos;
    let expected = rows
        .checked_mul(cols)
        .and_then(|n| n.checked_mul(3))
        .ok_or_else(|| Error::parse(start, "image dimensions overflow"))?;
    let payload = &bytes[start..];
    if payload.len() < expected {
        return Err(Error::parse(
            bytes.len(),
            format!("truncated payload: {} of {expected} bytes", payload.len()),
        ));
    }
    let mut planes: Vec<Vec<f32>> = (0..3).map(|_| Vec::with_capacity(rows * cols)).collect();
    for px in payload[..expected].chunks_exact(3) {
        for (plane, &byte) in planes.iter_mut().zip(px) {
            plane.push(f32::from(byte));
        }
    }
    let planes = planes
        .into_iter()
        .map(|data| Plane::from_vec(rows, cols, data))
        .collect::<Result<Vec<_>>>()?;
    Image::new(planes)
}

/// Encodes a three-plane image as `P6`, rounding half to even and clamping
/// into `[0, 255]`.
pub fn encode_ppm(image: &Image) -> Result<Vec<u8>> {
    if image.plane_count() != 3 {
        return Err(Error::InvalidArgument(format!(
            "PPM output needs exactly 3 planes, image has {}",
            image.plane_count()
        )));
    }
    let (rows, cols) = (image.rows(), image.cols());
    let header = format!("P6\n{cols} {rows}\n255\n");
    let mut out = Vec::with_capacity(header.len() + rows * cols * 3);
    out.extend_from_slice(header.as_bytes());
    let [r, g, b] = [0, 1, 2].map(|p| image.plane(p).as_slice());
    for ((&r, &g), &b) in r.iter().zip(g).zip(b) {
        out.extend_from_slice(&[to_byte(r), to_byte(g), to_byte(b)]);
    }
    Ok(out)
}

#[inline]
fn to_byte(v: f32) -> u8 {
    // `as` saturates and maps NaN to 0.
    v.round_ties_even().clamp(0.0, 255.0) as u8
}

pub fn read_ppm(path: impl AsRef<Path>) -> Result<Image> {
    decode_ppm(&fs::read(path)?)
}

pub fn write_ppm(image: &Image, path: impl AsRef<Path>) -> Result<()> {
    fs::write(path, encode_ppm(image)?)?;
    Ok(())
}

struct HeaderCursor<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl HeaderCursor<'_> {
    fn skip_space_and_comments(&mut self) {
        while let Some(&b) = self.bytes.get(self.pos) {
            if b == b'#' {
                while let Some(&c) = self.bytes.get(self.pos) {
                    self.pos += 1;
                    if c == b'\n' || c == b'\r' {
                        break;
                    }
                }
            } else if b.is_ascii_whitespace() {
                self.pos += 1;
            } else {
                break;
            }
        }
    }

    fn number(&mut self, what: &str) -> Result<usize> {
        let before = self.pos;
        self.skip_space_and_comments();
        if self.pos == before {
            return Err(Error::parse(
                self.pos,
                format!("expected whitespace before {what}"),
            ));
        }
        let start = self.pos;
        while self.bytes.get(self.pos).is_some_and(u8::is_ascii_digit) {
            self.pos += 1;
        }
        if start == self.pos {
            return Err(match self.bytes.get(self.pos) {
                None => Error::parse(self.pos, format!("truncated header: missing {what}")),
                Some(_) => Error::parse(self.pos, format!("expected decimal {what}")),
            });
        }
        std::str::from_utf8(&self.bytes[start..self.pos])
            .ok()
            .and_then(|s| s.parse().ok())
            .ok_or_else(|| Error::parse(start, format!("{what} out of range")))
    }
}
