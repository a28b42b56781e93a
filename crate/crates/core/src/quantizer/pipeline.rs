use nalgebra::DMatrix;

use super::clip::{clip_sigma_band, matrix_stats};
use super::gptq::{gptq_quantize, proxy_loss_hessian};
use super::grid::quant_grid_per_row;
use super::hessian::HessianAccumulator;
use super::{QuantConfig, QuantizedLayer};
use crate::container::{Tensor, TensorContainer};
use crate::error::{Error, Result};
use crate::tff::{build_fusion_frame, FusionFrame};

#[derive(Debug, Clone, PartialEq)]
pub struct LayerWeights {
    pub name: String,
    /// `d_out x d_in`.
    pub theta: DMatrix<f64>,
}

impl LayerWeights {
    pub fn new(name: impl Into<String>, theta: DMatrix<f64>) -> Result<Self> {
        let name = name.into();
        if theta.iter().any(|v| !v.is_finite()) {
            return Err(Error::invalid(format!("layer {name} has non-finite weights")));
        }
        Ok(Self { name, theta })
    }

    pub fn d_out(&self) -> usize {
        self.theta.nrows()
    }

    pub fn d_in(&self) -> usize {
        self.theta.ncols()
    }
}

/// `D = P_out^T Theta P_in`.
pub fn transform_weights(
    theta: &LayerWeights,
    frame_out: &FusionFrame,
    frame_in: &FusionFrame,
) -> Result<DMatrix<f64>> {
    if theta.d_out() != frame_out.dim() || theta.d_in() != frame_in.dim() {
        return Err(Error::shape(format!(
            "layer {} is {}x{}, frames act on R^{} (out) and R^{} (in)",
            theta.name,
            theta.d_out(),
            theta.d_in(),
            frame_out.dim(),
            frame_in.dim()
        )));
    }
    Ok(frame_out.synthesis().tr_mul(&theta.theta) * frame_in.synthesis())
}

#[derive(Debug, Clone)]
pub struct LayerOutcome {
    pub layer: QuantizedLayer,
    /// `P_out D_hat C_prev`, the layer output in signal space (`d_out x n`).
    pub outputs: DMatrix<f64>,
    pub dequantized: DMatrix<f64>,
    /// Frame-space weights before clipping.
    pub transformed: DMatrix<f64>,
    pub hessian: HessianAccumulator,
    /// `tr((D - D_hat) H (D - D_hat)^T)` against the unclipped `D`.
    pub proxy_loss: f64,
    /// The same loss against the clipped matrix the sweep actually saw.
    pub gptq_loss: f64,
}

/// Quantizes one layer given its input activations `a_prev` (`d_in x n`).
pub fn framequant_layer(
    theta: &LayerWeights,
    a_prev: &DMatrix<f64>,
    config: &QuantConfig,
    frame_out: &FusionFrame,
    frame_in: &FusionFrame,
) -> Result<LayerOutcome> {
    config.validate()?;
    if a_prev.nrows() != theta.d_in() {
        return Err(Error::shape(format!(
            "layer {} expects {} input features, activations have {}",
            theta.name,
            theta.d_in(),
            a_prev.nrows()
        )));
    }
    if a_prev.ncols() == 0 {
        return Err(Error::invalid("empty calibration set"));
    }
    let c_prev = frame_in.synthesis().tr_mul(a_prev);
    let d = transform_weights(theta, frame_out, frame_in)?;
    let (clipped, stats, clip_sigmas) = match config.clip_sigmas {
        Some(s) => {
            let (c, st) = clip_sigma_band(&d, s);
            (c, st, s)
        }
        None => (d.clone(), matrix_stats(&d), 0.0),
    };
    let grid = quant_grid_per_row(&clipped, config.bits)?;
    let hessian = HessianAccumulator::from_batches([&c_prev], config.damping_fraction)?;
    let g = gptq_quantize(&clipped, &hessian, &grid, config.block_size, config.act_order)?;
    let outputs = frame_out.synthesis() * (&g.dequantized * &c_prev);
    let proxy_loss = proxy_loss_hessian(&d, &g.dequantized, &hessian.h);
    let layer = QuantizedLayer {
        name: theta.name.clone(),
        frame_out: *frame_out.params(),
        frame_in: *frame_in.params(),
        bits: config.bits,
        rows: d.nrows(),
        cols: d.ncols(),
        codes: g.codes,
        row_scale: grid.scale,
        row_zero: grid.zero,
        clip_mu: stats.mu as f32,
        clip_sigma: stats.sigma as f32,
        clip_sigmas: clip_sigmas as f32,
    };
    Ok(LayerOutcome {
        layer,
        outputs,
        dequantized: g.dequantized,
        transformed: d,
        hessian,
        proxy_loss,
        gptq_loss: g.loss,
    })
}

/// Feed-forward stack `x -> Theta_L relu(... relu(Theta_1 x))`, no biases.
#[derive(Debug, Clone, PartialEq)]
pub struct Mlp {
    pub layers: Vec<LayerWeights>,
}

pub(crate) fn relu(m: DMatrix<f64>) -> DMatrix<f64> {
    m.map(|v| v.max(0.0))
}

impl Mlp {
    pub fn new(layers: Vec<LayerWeights>) -> Result<Self> {
        if layers.is_empty() {
            return Err(Error::invalid("model has no layers"));
        }
        for w in layers.windows(2) {
            if w[0].d_out() != w[1].d_in() {
                return Err(Error::shape(format!(
                    "layer {} outputs {} features but layer {} takes {}",
                    w[0].name,
                    w[0].d_out(),
                    w[1].name,
                    w[1].d_in()
                )));
            }
        }
        Ok(Self { layers })
    }

    /// Activation widths `d_0, ..., d_L`.
    pub fn dims(&self) -> Vec<usize> {
        std::iter::once(self.layers[0].d_in())
            .chain(self.layers.iter().map(|l| l.d_out()))
            .collect()
    }

    /// `x` is `d_0 x n`.
    pub fn forward(&self, x: &DMatrix<f64>) -> Result<DMatrix<f64>> {
        if x.nrows() != self.layers[0].d_in() {
            return Err(Error::shape(format!(
                "model takes {} features, input has {}",
                self.layers[0].d_in(),
                x.nrows()
            )));
        }
        let mut a = x.clone();
        for (i, l) in self.layers.iter().enumerate() {
            a = &l.theta * a;
            if i + 1 < self.layers.len() {
                a = relu(a);
            }
        }
        Ok(a)
    }

    /// Every 2-D tensor of the container, in order, is one layer.
    pub fn from_container(c: &TensorContainer) -> Result<Self> {
        let layers = c
            .tensors
            .iter()
            .filter(|t| t.shape.len() == 2)
            .map(|t| LayerWeights::new(t.name.clone(), t.to_matrix()?))
            .collect::<Result<Vec<_>>>()?;
        Self::new(layers)
    }

    pub fn to_container(&self) -> TensorContainer {
        TensorContainer {
            tensors: self
                .layers
                .iter()
                .map(|l| Tensor::from_matrix(&l.name, &l.theta))
                .collect(),
        }
    }
}

#[derive(Debug, Clone)]
pub struct QuantizedModel {
    pub layers: Vec<QuantizedLayer>,
    pub proxy_losses: Vec<f64>,
}

/// Frame for activation `index` (0 is the model input) of width `dim`.
pub fn activation_frame(dim: usize, config: &QuantConfig, index: usize) -> Result<FusionFrame> {
    build_fusion_frame(dim, config.redundancy, config.seed ^ index as u64)
}

/// Quantizes `model` shallow to deep. `calib` is `d_0 x n`; every layer is calibrated
/// on the ReLU of the previous layer's quantized output.
pub fn quantize_model(model: &Mlp, calib: &DMatrix<f64>, config: &QuantConfig) -> Result<QuantizedModel> {
    quantize_model_with(model, calib, config, |_, _| {})
}

/// [`quantize_model`] with a callback receiving every layer's full outcome.
pub fn quantize_model_with(
    model: &Mlp,
    calib: &DMatrix<f64>,
    config: &QuantConfig,
    mut observe: impl FnMut(usize, &LayerOutcome),
) -> Result<QuantizedModel> {
    config.validate()?;
    if calib.ncols() == 0 {
        return Err(Error::invalid("empty calibration set"));
    }
    let dims = model.dims();
    let mut frame_in = activation_frame(dims[0], config, 0)?;
    let mut a = calib.clone();
    let mut layers = Vec::with_capacity(model.layers.len());
    let mut proxy_losses = Vec::with_capacity(model.layers.len());
    for (l, w) in model.layers.iter().enumerate() {
        let frame_out = activation_frame(dims[l + 1], config, l + 1)?;
        let outcome = framequant_layer(w, &a, config, &frame_out, &frame_in)?;
        observe(l, &outcome);
        a = if l + 1 < model.layers.len() {
            relu(outcome.outputs)
        } else {
            outcome.outputs
        };
        proxy_losses.push(outcome.proxy_loss);
        layers.push(outcome.layer);
        frame_in = frame_out;
    }
    Ok(QuantizedModel {
        layers,
        proxy_losses,
    })
}
