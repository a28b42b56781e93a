//! Comparison of a packed model against its full-precision reference.

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::packfmt::{storage_report, StorageReport};
use crate::quantizer::pipeline::relu;
use crate::quantizer::{proxy_loss_direct, Mlp};
use crate::runtime::LoadedModel;
use crate::tff::FrameDescriptor;

pub const EVAL_SCHEMA_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LayerEval {
    pub name: String,
    pub d_out: usize,
    pub d_in: usize,
    pub bits: u8,
    pub frame_out: FrameDescriptor,
    pub frame_in: FrameDescriptor,
    /// `||(D - D_hat) C||_F^2` with `C` the frame coefficients of this layer's inputs
    /// in the quantized forward pass.
    pub proxy_loss: f64,
    /// `||Theta_hat - Theta||_F / ||Theta||_F`.
    pub weight_relative_error: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EvalEcho {
    pub quantized: String,
    pub reference_weights: String,
    pub data: String,
    pub activation_bits: Option<u8>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EvalReport {
    pub schema_version: u32,
    pub samples: usize,
    pub layers: Vec<LayerEval>,
    /// Mean over all output entries of the squared difference to the reference.
    pub output_mse: f64,
    /// Mean squared reference output, for scale.
    pub reference_output_power: f64,
    pub storage: StorageReport,
    pub config: EvalEcho,
}

impl EvalReport {
    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    /// Parses a report, rejecting unknown fields and other schema versions.
    pub fn from_json(s: &str) -> Result<Self> {
        let r: Self = serde_json::from_str(s)?;
        if r.schema_version != EVAL_SCHEMA_VERSION {
            return Err(Error::invalid(format!(
                "report schema version {}, expected {EVAL_SCHEMA_VERSION}",
                r.schema_version
            )));
        }
        Ok(r)
    }
}

/// Output MSE between two equally shaped matrices.
pub fn output_mse(a: &DMatrix<f64>, b: &DMatrix<f64>) -> f64 {
    (a - b).norm_squared() / a.len().max(1) as f64
}

/// Runs `data` (`d_0 x n`) through both models and measures the frame-space proxy loss
/// of every layer on the quantized model's own activations.
pub fn evaluate(
    model: &LoadedModel,
    reference: &Mlp,
    data: &DMatrix<f64>,
    config: EvalEcho,
) -> Result<EvalReport> {
    if model.layers.len() != reference.layers.len() {
        return Err(Error::shape(format!(
            "quantized model has {} layers, reference has {}",
            model.layers.len(),
            reference.layers.len()
        )));
    }
    let mut layers = Vec::with_capacity(model.layers.len());
    let mut a = data.clone();
    for (i, (q, w)) in model.layers.iter().zip(&reference.layers).enumerate() {
        if (q.d_out(), q.d_in()) != w.theta.shape() {
            return Err(Error::shape(format!(
                "layer {i}: quantized {}x{}, reference {}x{}",
                q.d_out(),
                q.d_in(),
                w.d_out(),
                w.d_in()
            )));
        }
        if a.nrows() != q.d_in() {
            return Err(Error::shape(format!(
                "data has {} features, model takes {}",
                a.nrows(),
                q.d_in()
            )));
        }
        let d = q.frame_out.synthesis().tr_mul(&w.theta) * q.frame_in.synthesis();
        let c = q.frame_in.synthesis().tr_mul(&a);
        let theta_hat = q.reconstruct_theta();
        let norm = w.theta.norm();
        layers.push(LayerEval {
            name: q.record.name.clone(),
            d_out: q.d_out(),
            d_in: q.d_in(),
            bits: q.record.bits,
            frame_out: FrameDescriptor::from_params(&q.record.frame_out),
            frame_in: FrameDescriptor::from_params(&q.record.frame_in),
            proxy_loss: proxy_loss_direct(&d, &q.dequantized, &c),
            weight_relative_error: if norm > 0.0 {
                (theta_hat - &w.theta).norm() / norm
            } else {
                theta_hat.norm()
            },
        });
        a = match config.activation_bits {
            Some(b) => q.forward_int_activations(&a, b)?,
            None => q.forward(&a)?,
        };
        if i + 1 < model.layers.len() {
            a = relu(a);
        }
    }
    let reference_out = reference.forward(data)?;
    let records: Vec<_> = model.layers.iter().map(|l| l.record.clone()).collect();
    Ok(EvalReport {
        schema_version: EVAL_SCHEMA_VERSION,
        samples: data.ncols(),
        layers,
        output_mse: output_mse(&a, &reference_out),
        reference_output_power: reference_out.norm_squared() / reference_out.len().max(1) as f64,
        storage: storage_report(&records),
        config,
    })
}
