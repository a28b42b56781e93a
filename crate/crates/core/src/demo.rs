//! Synthetic models and inputs, so that experiments need no external downloads.

use nalgebra::DMatrix;

use crate::error::{Error, Result};
use crate::quantizer::{LayerWeights, Mlp};
use crate::rng::{derive_seed, Stream};

/// Heavy-tailed weight entries mixed into the Gaussian bulk.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct OutlierSpec {
    /// Fraction of entries replaced by outliers.
    pub fraction: f64,
    /// Outlier magnitude in units of the bulk standard deviation.
    pub scale: f64,
}

impl Default for OutlierSpec {
    fn default() -> Self {
        Self {
            fraction: 0.01,
            scale: 10.0,
        }
    }
}

/// Parses `mlp:d0,d1,...,dL` into activation widths.
pub fn parse_spec(spec: &str) -> Result<Vec<usize>> {
    let dims = spec
        .strip_prefix("mlp:")
        .ok_or_else(|| Error::invalid(format!("demo spec must look like mlp:d0,d1,d2, got {spec:?}")))?;
    let dims = dims
        .split(',')
        .map(|s| {
            s.trim()
                .parse::<usize>()
                .ok()
                .filter(|&d| d > 0)
                .ok_or_else(|| Error::invalid(format!("bad width {s:?} in demo spec")))
        })
        .collect::<Result<Vec<_>>>()?;
    if dims.len() < 2 {
        return Err(Error::invalid("demo spec needs at least two widths"));
    }
    Ok(dims)
}

/// `d_out x d_in` weights with `N(0, 1/d_in)` entries, a fraction of them replaced by
/// `+-scale` standard deviations.
pub fn outlier_weights(d_out: usize, d_in: usize, seed: u64, outliers: &OutlierSpec) -> DMatrix<f64> {
    let mut s = Stream::new(seed);
    let sd = 1.0 / (d_in as f64).sqrt();
    DMatrix::from_fn(d_out, d_in, |_, _| {
        let bulk = s.normal() * sd;
        if s.uniform() < outliers.fraction {
            let sign = if s.uniform() < 0.5 { -1.0 } else { 1.0 };
            sign * outliers.scale * sd
        } else {
            bulk
        }
    })
}

pub fn demo_mlp(dims: &[usize], seed: u64, outliers: &OutlierSpec) -> Result<Mlp> {
    let layers = dims
        .windows(2)
        .enumerate()
        .map(|(i, w)| {
            LayerWeights::new(
                format!("layer{i}"),
                outlier_weights(w[1], w[0], derive_seed(seed, i as u64), outliers),
            )
        })
        .collect::<Result<Vec<_>>>()?;
    Mlp::new(layers)
}

/// `d x n` inputs: Gaussian samples with per-feature scales spread over about an order
/// of magnitude, like hidden activations.
pub fn demo_inputs(d: usize, n: usize, seed: u64) -> DMatrix<f64> {
    let mut s = Stream::new(derive_seed(seed, u64::MAX));
    let scales: Vec<f64> = (0..d).map(|_| (0.6 * s.normal()).exp()).collect();
    DMatrix::from_fn(d, n, |i, _| scales[i] * s.normal())
}
