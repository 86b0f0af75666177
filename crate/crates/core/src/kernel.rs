//! Separable kernels and their dense outer-product expansion.

use std::str::FromStr;

use crate::error::{Error, Result};

/// A 1-D weight vector `k` of odd width; the 2-D kernel is `k kᵀ`.
#[derive(Clone, Debug, PartialEq)]
pub struct SeparableKernel {
    weights: Vec<f32>,
}

impl SeparableKernel {
    pub fn new(weights: Vec<f32>) -> Result<Self> {
        if weights.len().is_multiple_of(2) {
            return Err(Error::InvalidArgument(format!(
                "kernel width must be odd and positive, got {}",
                weights.len()
            )));
        }
        Ok(SeparableKernel { weights })
    }

    /// Binomial `[1, 4, 6, 4, 1] / 16`, the width-5 discrete Gaussian.
    pub fn gaussian5() -> Self {
        SeparableKernel {
            weights: [1.0, 4.0, 6.0, 4.0, 1.0].iter().map(|w| w / 16.0).collect(),
        }
    }

    /// Unit impulse of the given odd width.
    pub fn delta(width: usize) -> Result<Self> {
        let mut weights = vec![0.0; width];
        if let Some(mid) = weights.get_mut(width / 2) {
            *mid = 1.0;
        }
        Self::new(weights)
    }

    #[inline]
    pub fn weights(&self) -> &[f32] {
        &self.weights
    }

    #[inline]
    pub fn width(&self) -> usize {
        self.weights.len()
    }

    #[inline]
    pub fn radius(&self) -> usize {
        (self.weights.len() - 1) / 2
    }

    pub fn outer_product(&self) -> DenseKernel {
        outer_product(self)
    }
}

/// Parses `gaussian5` or comma-separated weights. Weights are used as
/// given, never normalised.
impl FromStr for SeparableKernel {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        if s.trim() == "gaussian5" {
            return Ok(Self::gaussian5());
        }
        let weights = s
            .split(',')
            .map(|w| {
                w.trim()
                    .parse::<f32>()
                    .map_err(|_| Error::InvalidArgument(format!("bad kernel weight {w:?}")))
            })
            .collect::<Result<Vec<_>>>()?;
        Self::new(weights)
    }
}

/// A `W x W` kernel matrix in row-major order.
#[derive(Clone, Debug, PartialEq)]
pub struct DenseKernel {
    width: usize,
    matrix: Vec<f32>,
}

impl DenseKernel {
    pub fn new(width: usize, matrix: Vec<f32>) -> Result<Self> {
        if width.is_multiple_of(2) {
            return Err(Error::InvalidArgument(format!(
                "kernel width must be odd and positive, got {width}"
            )));
        }
        if matrix.len() != width * width {
            return Err(Error::InvalidArgument(format!(
                "{width}x{width} kernel needs {} coefficients, got {}",
                width * width,
                matrix.len()
            )));
        }
        Ok(DenseKernel { width, matrix })
    }

    #[inline]
    pub fn width(&self) -> usize {
        self.width
    }

    #[inline]
    pub fn radius(&self) -> usize {
        (self.width - 1) / 2
    }

    #[inline]
    pub fn get(&self, i: usize, j: usize) -> f32 {
        self.matrix[i * self.width + j]
    }

    /// Coefficients row by row.
    #[inline]
    pub fn as_slice(&self) -> &[f32] {
        &self.matrix
    }

    pub fn row(&self, i: usize) -> &[f32] {
        &self.matrix[i * self.width..(i + 1) * self.width]
    }
}

/// `K[i][j] = k[i] * k[j]`, each entry a single rounded product.
pub fn outer_product(k: &SeparableKernel) -> DenseKernel {
    let w = k.weights();
    let matrix = w
        .iter()
        .flat_map(|&a| w.iter().map(move |&b| a * b))
        .collect();
    DenseKernel {
        width: w.len(),
        matrix,
    }
}
