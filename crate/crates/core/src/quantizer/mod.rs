//! Frame-space weight quantization.
//!
//! A layer `Theta` (`d_out x d_in`) is moved to `D = P_out^T Theta P_in`, clipped to a
//! band around its global mean, gridded per row and quantized by a Hessian-guided
//! column sweep, with the Hessian built from frame coefficients of the layer inputs.

pub mod activations;
pub mod clip;
pub mod gptq;
pub mod grid;
pub mod hessian;
pub mod pipeline;

use nalgebra::DMatrix;

pub use activations::{quantize_activations, ActivationCodes};
pub use clip::{clip_sigma_band, matrix_stats, ClipStats};
pub use gptq::{gptq_quantize, proxy_loss_direct, proxy_loss_hessian, GptqResult};
pub use grid::{dequantize_code, quant_grid_per_row, round_to_nearest, RowGrid};
pub use hessian::HessianAccumulator;
pub use pipeline::{
    activation_frame, framequant_layer, quantize_model, quantize_model_with, transform_weights,
    LayerOutcome,
    LayerWeights, Mlp, QuantizedModel,
};

use crate::error::{Error, Result};
use crate::tff::FrameParams;

#[derive(Debug, Clone, PartialEq)]
pub struct QuantConfig {
    pub bits: u8,
    /// Clip band half-width in standard deviations; `None` disables clipping.
    pub clip_sigmas: Option<f64>,
    pub block_size: usize,
    /// Target redundancy; the frame actually used is the closest one not above it.
    pub redundancy: f64,
    pub seed: u64,
    pub damping_fraction: f64,
    pub act_order: bool,
}

impl Default for QuantConfig {
    fn default() -> Self {
        Self {
            bits: 2,
            clip_sigmas: Some(2.0),
            block_size: 128,
            redundancy: 1.1,
            seed: 0,
            damping_fraction: 0.01,
            act_order: false,
        }
    }
}

impl QuantConfig {
    pub fn validate(&self) -> Result<()> {
        grid::check_bits(self.bits)?;
        if self.block_size == 0 {
            return Err(Error::invalid("block size must be at least 1"));
        }
        if !(self.redundancy >= 1.0) || !self.redundancy.is_finite() {
            return Err(Error::invalid(format!(
                "redundancy must be a finite number >= 1, got {}",
                self.redundancy
            )));
        }
        if let Some(s) = self.clip_sigmas {
            if !(s > 0.0) || !s.is_finite() {
                return Err(Error::invalid(format!(
                    "clip band must be a positive number of standard deviations, got {s}"
                )));
            }
        }
        if !(self.damping_fraction >= 0.0) || !self.damping_fraction.is_finite() {
            return Err(Error::invalid(format!(
                "damping fraction must be >= 0, got {}",
                self.damping_fraction
            )));
        }
        Ok(())
    }
}

/// Everything needed to rebuild a quantized layer: codes, per-row grids, clip statistics
/// and the frame parameters (with seeds) on both sides.
#[derive(Debug, Clone, PartialEq)]
pub struct QuantizedLayer {
    pub name: String,
    pub frame_out: FrameParams,
    pub frame_in: FrameParams,
    pub bits: u8,
    pub rows: usize,
    pub cols: usize,
    /// Row-major, `rows x cols`, each below `2^bits`.
    pub codes: Vec<u8>,
    pub row_scale: Vec<f32>,
    pub row_zero: Vec<f32>,
    pub clip_mu: f32,
    pub clip_sigma: f32,
    /// Clip band in standard deviations, 0 when clipping was disabled.
    pub clip_sigmas: f32,
}

impl QuantizedLayer {
    pub fn grid(&self) -> RowGrid {
        RowGrid {
            bits: self.bits,
            scale: self.row_scale.clone(),
            zero: self.row_zero.clone(),
        }
    }

    pub fn code(&self, i: usize, j: usize) -> u8 {
        self.codes[i * self.cols + j]
    }

    /// `D_hat[i][j] = (code - zero_i) * scale_i`.
    pub fn dequantize(&self) -> DMatrix<f64> {
        DMatrix::from_fn(self.rows, self.cols, |i, j| {
            dequantize_code(self.code(i, j), self.row_scale[i], self.row_zero[i])
        })
    }

    /// Checks internal consistency: shapes against frames, code range, finite grids.
    pub fn validate(&self) -> Result<()> {
        grid::check_bits(self.bits)?;
        if self.rows != self.frame_out.frame_dim() || self.cols != self.frame_in.frame_dim() {
            return Err(Error::shape(format!(
                "layer {}: codes are {}x{}, frames give {}x{}",
                self.name,
                self.rows,
                self.cols,
                self.frame_out.frame_dim(),
                self.frame_in.frame_dim()
            )));
        }
        if self.codes.len() != self.rows * self.cols
            || self.row_scale.len() != self.rows
            || self.row_zero.len() != self.rows
        {
            return Err(Error::shape(format!(
                "layer {}: buffer lengths do not match {}x{}",
                self.name, self.rows, self.cols
            )));
        }
        let maxq = (1u16 << self.bits) - 1;
        if let Some(c) = self.codes.iter().find(|&&c| c as u16 > maxq) {
            return Err(Error::invalid(format!(
                "layer {}: code {c} exceeds {maxq} for {} bits",
                self.name, self.bits
            )));
        }
        if self
            .row_scale
            .iter()
            .chain(&self.row_zero)
            .any(|v| !v.is_finite())
        {
            return Err(Error::invalid(format!("layer {}: non-finite grid", self.name)));
        }
        Ok(())
    }
}
