//! Inference from packed models.
//!
//! Frames are regenerated from their stored parameters and seeds. A layer is applied as
//! `P_out (D_hat (P_in^T A))` where `P = R T`: the rotation `R` is a dense `d x d`
//! matmul, the unrotated frame `T` is applied through its sparse columns. Codes are
//! dequantized once at load time in FP32 and promoted to FP64; all accumulation is FP64.

use std::collections::HashMap;
use std::path::Path;
use std::sync::Arc;

use nalgebra::DMatrix;

use crate::container::{Tensor, TensorContainer};
use crate::error::{Error, Result};
use crate::packfmt;
use crate::quantizer::pipeline::relu;
use crate::quantizer::{quantize_activations, QuantizedLayer};
use crate::tff::{FrameParams, FusionFrame};

/// Multiply-add counts of one structured forward pass.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct OpCounts {
    /// Sparse `T` and `T^T` applications.
    pub frame: u64,
    /// Dense rotations.
    pub rotation: u64,
    /// The frame-space product `D_hat C`.
    pub weights: u64,
}

impl OpCounts {
    pub fn total(&self) -> u64 {
        self.frame + self.rotation + self.weights
    }
}

impl std::ops::AddAssign for OpCounts {
    fn add_assign(&mut self, o: Self) {
        self.frame += o.frame;
        self.rotation += o.rotation;
        self.weights += o.weights;
    }
}

#[derive(Debug, Clone)]
pub struct LoadedLayer {
    pub record: QuantizedLayer,
    pub dequantized: DMatrix<f64>,
    pub frame_out: Arc<FusionFrame>,
    pub frame_in: Arc<FusionFrame>,
}

/// Builds frames once per distinct parameter set.
#[derive(Default)]
pub struct FrameCache {
    frames: HashMap<FrameParams, Arc<FusionFrame>>,
}

impl FrameCache {
    pub fn get(&mut self, p: &FrameParams) -> Result<Arc<FusionFrame>> {
        if let Some(f) = self.frames.get(p) {
            return Ok(f.clone());
        }
        let f = Arc::new(FusionFrame::from_params(*p)?);
        self.frames.insert(*p, f.clone());
        Ok(f)
    }
}

impl LoadedLayer {
    pub fn load(record: QuantizedLayer, cache: &mut FrameCache) -> Result<Self> {
        record.validate()?;
        let frame_out = cache.get(&record.frame_out)?;
        let frame_in = cache.get(&record.frame_in)?;
        let dequantized = dequantize_weights(&record);
        Ok(Self {
            record,
            dequantized,
            frame_out,
            frame_in,
        })
    }

    /// Bypasses the codes: serves an arbitrary frame-space matrix through the same frames.
    pub fn with_weights(mut self, d: DMatrix<f64>) -> Result<Self> {
        if d.shape() != self.dequantized.shape() {
            return Err(Error::shape(format!(
                "replacement weights are {:?}, layer is {:?}",
                d.shape(),
                self.dequantized.shape()
            )));
        }
        self.dequantized = d;
        Ok(self)
    }

    pub fn d_in(&self) -> usize {
        self.frame_in.dim()
    }

    pub fn d_out(&self) -> usize {
        self.frame_out.dim()
    }

    fn check_input(&self, a: &DMatrix<f64>) -> Result<()> {
        if a.nrows() != self.d_in() {
            return Err(Error::shape(format!(
                "layer {} takes {} features, activations have {}",
                self.record.name,
                self.d_in(),
                a.nrows()
            )));
        }
        Ok(())
    }

    /// `P_in^T A` through the rotation and the sparse frame.
    pub fn analyze(&self, a: &DMatrix<f64>, ops: &mut OpCounts) -> DMatrix<f64> {
        let f = &self.frame_in;
        let rotated = match f.rotation_matrix() {
            Some(r) => {
                ops.rotation += (r.len() * a.ncols()) as u64;
                r.tr_mul(a)
            }
            None => a.clone(),
        };
        f.unrotated().analysis(&rotated, &mut ops.frame)
    }

    /// `P_out Y`.
    pub fn synthesize(&self, y: &DMatrix<f64>, ops: &mut OpCounts) -> DMatrix<f64> {
        let f = &self.frame_out;
        let t = f.unrotated().synthesis(y, &mut ops.frame);
        match f.rotation_matrix() {
            Some(r) => {
                ops.rotation += (r.len() * y.ncols()) as u64;
                r * t
            }
            None => t,
        }
    }

    /// Structured `P_out (D_hat (P_in^T A))` with operation counts.
    pub fn forward_counted(&self, a: &DMatrix<f64>) -> Result<(DMatrix<f64>, OpCounts)> {
        self.check_input(a)?;
        let mut ops = OpCounts::default();
        let c = self.analyze(a, &mut ops);
        ops.weights += (self.dequantized.len() * a.ncols()) as u64;
        let y = &self.dequantized * c;
        Ok((self.synthesize(&y, &mut ops), ops))
    }

    pub fn forward(&self, a: &DMatrix<f64>) -> Result<DMatrix<f64>> {
        self.forward_counted(a).map(|(y, _)| y)
    }

    /// Naive dense triple product with the explicit synthesis matrices.
    pub fn forward_dense(&self, a: &DMatrix<f64>) -> Result<DMatrix<f64>> {
        self.check_input(a)?;
        let c = self.frame_in.synthesis().tr_mul(a);
        Ok(self.frame_out.synthesis() * (&self.dequantized * c))
    }

    /// Forward pass with the frame coefficients of `a` quantized to `n_bits` integers.
    pub fn forward_int_activations(&self, a: &DMatrix<f64>, n_bits: u8) -> Result<DMatrix<f64>> {
        self.check_input(a)?;
        let mut ops = OpCounts::default();
        let c = self.analyze(a, &mut ops);
        let q = quantize_activations(&c, n_bits)?;
        let y = &self.dequantized * q.dequantize();
        Ok(self.synthesize(&y, &mut ops))
    }

    /// `Theta_hat = P_out D_hat P_in^T`.
    pub fn reconstruct_theta(&self) -> DMatrix<f64> {
        let mut ops = 0u64;
        let right = self.frame_in.unrotated().right_transpose(&self.dequantized, &mut ops);
        let right = match self.frame_in.rotation_matrix() {
            Some(r) => right * r.transpose(),
            None => right,
        };
        let t = self.frame_out.unrotated().synthesis(&right, &mut ops);
        match self.frame_out.rotation_matrix() {
            Some(r) => r * t,
            None => t,
        }
    }
}

/// `D_hat[i][j] = (codes[i][j] - row_zero[i]) * row_scale[i]`.
pub fn dequantize_weights(layer: &QuantizedLayer) -> DMatrix<f64> {
    layer.dequantize()
}

/// Options for [`LoadedModel::forward_with`].
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct ForwardOptions {
    /// Quantize frame coefficients of every layer input to this many bits.
    pub activation_bits: Option<u8>,
}

#[derive(Debug, Clone)]
pub struct LoadedModel {
    pub layers: Vec<LoadedLayer>,
}

impl LoadedModel {
    pub fn from_layers(records: Vec<QuantizedLayer>) -> Result<Self> {
        let mut cache = FrameCache::default();
        let layers = records
            .into_iter()
            .map(|r| LoadedLayer::load(r, &mut cache))
            .collect::<Result<Vec<_>>>()?;
        for w in layers.windows(2) {
            if w[0].d_out() != w[1].d_in() {
                return Err(Error::shape(format!(
                    "layer {} outputs {} features but layer {} takes {}",
                    w[0].record.name,
                    w[0].d_out(),
                    w[1].record.name,
                    w[1].d_in()
                )));
            }
        }
        Ok(Self { layers })
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        Self::from_layers(packfmt::deserialize(bytes)?)
    }

    pub fn read(path: &Path) -> Result<Self> {
        Self::from_bytes(&std::fs::read(path)?)
    }

    /// ReLU between layers, matching the quantization pipeline.
    pub fn forward(&self, x: &DMatrix<f64>) -> Result<DMatrix<f64>> {
        self.forward_with(x, ForwardOptions::default())
    }

    pub fn forward_with(&self, x: &DMatrix<f64>, opts: ForwardOptions) -> Result<DMatrix<f64>> {
        let mut a = x.clone();
        for (i, l) in self.layers.iter().enumerate() {
            a = match opts.activation_bits {
                Some(b) => l.forward_int_activations(&a, b)?,
                None => l.forward(&a)?,
            };
            if i + 1 < self.layers.len() {
                a = relu(a);
            }
        }
        Ok(a)
    }

    /// Reconstructed signal-space weights of every layer.
    pub fn export_theta(&self) -> TensorContainer {
        TensorContainer {
            tensors: self
                .layers
                .iter()
                .map(|l| Tensor::from_matrix(&l.record.name, &l.reconstruct_theta()))
                .collect(),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::quantizer::{activation_frame, framequant_layer, LayerWeights, QuantConfig};
    use crate::rng::Stream;
    use crate::tff::Rotation;

    fn random(rows: usize, cols: usize, seed: u64) -> DMatrix<f64> {
        let mut s = Stream::new(seed);
        DMatrix::from_fn(rows, cols, |_, _| s.normal())
    }

    fn quantized(d_out: usize, d_in: usize, r: f64, seed: u64) -> (QuantizedLayer, DMatrix<f64>) {
        let config = QuantConfig {
            redundancy: r,
            seed,
            ..QuantConfig::default()
        };
        let w = LayerWeights::new("l", random(d_out, d_in, seed)).unwrap();
        let fo = activation_frame(d_out, &config, 1).unwrap();
        let fi = activation_frame(d_in, &config, 0).unwrap();
        let out = framequant_layer(&w, &random(d_in, 32, seed + 1), &config, &fo, &fi).unwrap();
        (out.layer, out.dequantized)
    }

    #[test]
    fn runtime_matches_quantizer_bit_for_bit() {
        let (q, dhat) = quantized(12, 10, 1.5, 3);
        let bytes = packfmt::serialize(std::slice::from_ref(&q)).unwrap();
        let m = LoadedModel::from_bytes(&bytes).unwrap();
        assert_eq!(m.layers[0].dequantized, dhat);
    }

    #[test]
    fn zero_point_codes_give_zero() {
        let (mut q, _) = quantized(4, 4, 1.0, 1);
        for i in 0..q.rows {
            q.row_zero[i] = 1.0;
            for j in 0..q.cols {
                q.codes[i * q.cols + j] = 1;
            }
        }
        assert!(dequantize_weights(&q).iter().all(|v| *v == 0.0));
        let l = LoadedLayer::load(q, &mut FrameCache::default()).unwrap();
        assert!(l.reconstruct_theta().iter().all(|v| *v == 0.0));
    }

    #[test]
    fn structured_dense_and_reconstructed_agree() {
        for (d_out, d_in, r) in [(12, 10, 1.5), (16, 16, 1.25), (7, 9, 1.0), (8, 6, 2.0)] {
            let (q, _) = quantized(d_out, d_in, r, 5);
            let l = LoadedLayer::load(q, &mut FrameCache::default()).unwrap();
            let a = random(d_in, 9, 6);
            let s = l.forward(&a).unwrap();
            let d = l.forward_dense(&a).unwrap();
            let t = l.reconstruct_theta() * &a;
            assert!((&s - &d).amax() < 1e-9);
            assert!((&s - &t).norm() <= 1e-9 * a.norm());
        }
    }

    #[test]
    fn unquantized_weights_reconstruct_theta() {
        let theta = random(6, 8, 2);
        let (q, _) = quantized(6, 8, 1.5, 2);
        let l = LoadedLayer::load(q, &mut FrameCache::default()).unwrap();
        let d = l.frame_out.synthesis().tr_mul(&theta) * l.frame_in.synthesis();
        let l = l.with_weights(d).unwrap();
        assert!((l.reconstruct_theta() - &theta).amax() < 1e-9);
        let a = random(8, 4, 3);
        assert!((l.forward(&a).unwrap() - &theta * &a).amax() < 1e-9);
    }

    #[test]
    fn parseval_round_trip_through_layer() {
        // identity frame-space weights on the (3, 2, 4) frame: P D P^T = P P^T = I
        let p = FrameParams::new(3, 2, 4, Rotation::Seeded(9));
        let q = QuantizedLayer {
            name: "id".into(),
            frame_out: p,
            frame_in: p,
            bits: 2,
            rows: 6,
            cols: 6,
            codes: vec![0; 36],
            row_scale: vec![1.0; 6],
            row_zero: vec![0.0; 6],
            clip_mu: 0.0,
            clip_sigma: 0.0,
            clip_sigmas: 0.0,
        };
        let l = LoadedLayer::load(q, &mut FrameCache::default())
            .unwrap()
            .with_weights(DMatrix::identity(6, 6))
            .unwrap();
        let a = random(4, 5, 1);
        assert!((l.forward(&a).unwrap() - &a).amax() < 1e-12);
    }

    #[test]
    fn int_activations_close_to_fp() {
        let (q, _) = quantized(8, 8, 1.25, 4);
        let l = LoadedLayer::load(q, &mut FrameCache::default()).unwrap();
        let a = random(8, 16, 5);
        let fp = l.forward(&a).unwrap();
        let i8 = l.forward_int_activations(&a, 8).unwrap();
        let i4 = l.forward_int_activations(&a, 4).unwrap();
        let e8 = (&i8 - &fp).norm();
        let e4 = (&i4 - &fp).norm();
        assert!(e8 < e4 && e8 < 0.05 * fp.norm(), "{e8} {e4}");
    }

    #[test]
    fn thread_count_independent() {
        let (q, _) = quantized(16, 12, 1.5, 8);
        let m = LoadedModel::from_layers(vec![q]).unwrap();
        let a = random(12, 20, 9);
        let one = rayon::ThreadPoolBuilder::new().num_threads(1).build().unwrap();
        let y1 = one.install(|| m.forward(&a).unwrap());
        let y2 = m.forward(&a).unwrap();
        assert!((y1 - y2).amax() <= 1e-10);
    }

    #[test]
    fn shape_errors() {
        let (q, _) = quantized(4, 6, 1.0, 1);
        let l = LoadedLayer::load(q.clone(), &mut FrameCache::default()).unwrap();
        assert!(l.forward(&random(5, 2, 1)).is_err());
        assert!(l.clone().with_weights(DMatrix::zeros(2, 2)).is_err());
        let (q2, _) = quantized(4, 5, 1.0, 1);
        assert!(LoadedModel::from_layers(vec![q, q2]).is_err());
    }
}
