use nalgebra::DMatrix;

use crate::error::{Error, Result};
use crate::frame_ops::FfCoefficients;

/// Proxy-loss Hessian `H = sum C C^T` over calibration batches of frame coefficients.
/// Damping `lambda = damping_fraction * mean(diag H)` is applied only when the matrix is
/// factored.
#[derive(Debug, Clone, PartialEq)]
pub struct HessianAccumulator {
    pub h: DMatrix<f64>,
    pub sample_count: usize,
    pub damping_fraction: f64,
}

impl HessianAccumulator {
    pub fn new(dim: usize, damping_fraction: f64) -> Self {
        Self {
            h: DMatrix::zeros(dim, dim),
            sample_count: 0,
            damping_fraction,
        }
    }

    pub fn dim(&self) -> usize {
        self.h.nrows()
    }

    pub fn add_batch(&mut self, c: &DMatrix<f64>) -> Result<()> {
        if c.nrows() != self.dim() {
            return Err(Error::shape(format!(
                "calibration batch has {} rows, Hessian dimension is {}",
                c.nrows(),
                self.dim()
            )));
        }
        let m = self.dim();
        let cct = c * c.transpose();
        for j in 0..m {
            for i in j..m {
                let v = cct[(i, j)];
                self.h[(i, j)] += v;
                if i != j {
                    self.h[(j, i)] += v;
                }
            }
        }
        self.sample_count += c.ncols();
        Ok(())
    }

    pub fn from_batches<'a>(
        batches: impl IntoIterator<Item = &'a DMatrix<f64>>,
        damping_fraction: f64,
    ) -> Result<Self> {
        let mut it = batches.into_iter().peekable();
        let dim = it
            .peek()
            .map(|b| b.nrows())
            .ok_or_else(|| Error::invalid("no calibration batches"))?;
        let mut acc = Self::new(dim, damping_fraction);
        for b in it {
            acc.add_batch(b)?;
        }
        Ok(acc)
    }

    /// `H = sum C_prev C_prev^T` over frame-coefficient batches.
    pub fn from_coefficients(batches: &[FfCoefficients], damping_fraction: f64) -> Result<Self> {
        Self::from_batches(batches.iter().map(|c| &c.data), damping_fraction)
    }

    pub fn damping(&self) -> f64 {
        let m = self.dim().max(1) as f64;
        self.damping_fraction * self.h.diagonal().sum() / m
    }

    pub fn damped(&self) -> DMatrix<f64> {
        let lambda = self.damping();
        let mut h = self.h.clone();
        for i in 0..self.dim() {
            h[(i, i)] += lambda;
        }
        h
    }
}
