//! Browser bindings for the blur preview page.
//!
//! The exported functions are thin wrappers over plain Rust functions in this
//! module so the logic is tested natively. Everything runs sequentially: the
//! page has no threads.

use sepconv::conv::arith_count;
use sepconv::{
    convolve_image, make_synthetic, partition_block, Algorithm, ConvVariant, Error, ExecPlan,
    Image, Plane, Result, SeparableKernel,
};
use wasm_bindgen::prelude::*;

/// RGB planes of an RGBA buffer; alpha is dropped.
pub fn rgba_to_image(rgba: &[u8], width: usize, height: usize) -> Result<Image> {
    if rgba.len() != width * height * 4 {
        return Err(Error::InvalidArgument(format!(
            "{width}x{height} RGBA needs {} bytes, got {}",
            width * height * 4,
            rgba.len()
        )));
    }
    let planes = (0..3)
        .map(|c| {
            Plane::from_fn(height, width, |i, j| {
                f32::from(rgba[(i * width + j) * 4 + c])
            })
        })
        .collect::<Result<Vec<_>>>()?;
    Image::new(planes)
}

/// Opaque RGBA from the first three planes, rounded and clamped to bytes.
pub fn image_to_rgba(image: &Image) -> Vec<u8> {
    let (rows, cols) = (image.rows(), image.cols());
    let mut out = vec![255u8; rows * cols * 4];
    for (c, plane) in image.planes().iter().take(3).enumerate() {
        for (px, v) in plane.as_slice().iter().enumerate() {
            out[px * 4 + c] = v.round_ties_even().clamp(0.0, 255.0) as u8;
        }
    }
    out
}

/// Blurs `rgba` `passes` times with the named algorithm.
pub fn blur_rgba(
    rgba: &[u8],
    width: usize,
    height: usize,
    algorithm: &str,
    kernel: &str,
    passes: u32,
) -> Result<Vec<u8>> {
    let algorithm = Algorithm::from_name(algorithm)
        .ok_or_else(|| Error::InvalidArgument(format!("unknown algorithm {algorithm:?}")))?;
    let k: SeparableKernel = kernel.parse()?;
    let variant = ConvVariant::new(algorithm, true);
    let mut image = rgba_to_image(rgba, width, height)?;
    let mut scratch = image.clone();
    for _ in 0..passes {
        convolve_image(&mut image, &mut scratch, &k, variant, ExecPlan::Sequential)?;
    }
    Ok(image_to_rgba(&image))
}

/// A test card: `noise` is the seeded synthetic image, `checker` an 8-pixel
/// checkerboard with coloured stripes.
pub fn pattern_rgba(width: usize, height: usize, pattern: &str, seed: u64) -> Result<Vec<u8>> {
    let image = match pattern {
        "noise" => make_synthetic(height, width, 3, seed)?,
        "checker" => {
            let planes = (0..3)
                .map(|c| {
                    Plane::from_fn(height, width, |i, j| {
                        let cell = ((i / 8) + (j / 8)) % 2 == 0;
                        let stripe = (j / 32 + c) % 3 == 0;
                        match (cell, stripe) {
                            (true, _) => 255.0,
                            (false, true) => 160.0,
                            (false, false) => 0.0,
                        }
                    })
                })
                .collect::<Result<Vec<_>>>()?;
            Image::new(planes)?
        }
        other => return Err(Error::InvalidArgument(format!("unknown pattern {other:?}"))),
    };
    Ok(image_to_rgba(&image))
}

/// Block boundaries `b0 = lo, b1, …, b_cutoff = hi` of the balanced split.
pub fn chunk_bounds(lo: usize, hi: usize, cutoff: usize) -> Result<Vec<usize>> {
    if cutoff == 0 {
        return Err(Error::InvalidArgument("cutoff must be at least 1".into()));
    }
    let mut bounds = vec![lo];
    for i in 0..cutoff {
        bounds.push(partition_block(lo, hi, i, cutoff)?.end);
    }
    Ok(bounds)
}

/// `[single-pass mults, single-pass adds, two-pass mults, two-pass adds]`.
pub fn counts(rows: usize, cols: usize, width: usize) -> [u64; 4] {
    let single = arith_count(ConvVariant::single_generic(false), rows, cols, width);
    let two = arith_count(ConvVariant::two_pass(), rows, cols, width);
    [
        single.multiplications,
        single.additions,
        two.multiplications,
        two.additions,
    ]
}

fn js(e: Error) -> JsError {
    JsError::new(&e.to_string())
}

#[wasm_bindgen]
pub fn blur(
    rgba: &[u8],
    width: usize,
    height: usize,
    algorithm: &str,
    kernel: &str,
    passes: u32,
) -> std::result::Result<Vec<u8>, JsError> {
    blur_rgba(rgba, width, height, algorithm, kernel, passes).map_err(js)
}

#[wasm_bindgen]
pub fn pattern(
    width: usize,
    height: usize,
    pattern: &str,
    seed: u64,
) -> std::result::Result<Vec<u8>, JsError> {
    pattern_rgba(width, height, pattern, seed).map_err(js)
}

#[wasm_bindgen]
pub fn partition(rows: usize, cutoff: usize) -> std::result::Result<Vec<u32>, JsError> {
    let bounds = chunk_bounds(0, rows, cutoff).map_err(js)?;
    Ok(bounds.into_iter().map(|b| b as u32).collect())
}

/// Counts as doubles, since JavaScript numbers cannot hold every u64.
#[wasm_bindgen]
pub fn arithmetic(rows: usize, cols: usize, width: usize) -> Vec<f64> {
    counts(rows, cols, width)
        .iter()
        .map(|&c| c as f64)
        .collect()
}
