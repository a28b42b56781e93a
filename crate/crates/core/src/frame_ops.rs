//! Analysis, synthesis and subspace projections for fusion frames.

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};
use crate::tff::{FrameParams, FusionFrame};

/// Frame-space representation of `n` column signals: a `k rho x n` matrix.
#[derive(Debug, Clone, PartialEq)]
pub struct FfCoefficients {
    pub data: DMatrix<f64>,
    pub frame_params: FrameParams,
}

impl FfCoefficients {
    pub fn new(data: DMatrix<f64>, frame_params: FrameParams) -> Result<Self> {
        if data.nrows() != frame_params.frame_dim() {
            return Err(Error::shape(format!(
                "coefficients have {} rows, frame {} has k*rho = {}",
                data.nrows(),
                frame_params,
                frame_params.frame_dim()
            )));
        }
        Ok(Self { data, frame_params })
    }

    pub fn ncols(&self) -> usize {
        self.data.ncols()
    }
}

/// `P^T X`.
pub fn analysis(frame: &FusionFrame, x: &DMatrix<f64>) -> Result<FfCoefficients> {
    if x.nrows() != frame.dim() {
        return Err(Error::shape(format!(
            "analysis: signal has {} rows, frame dimension is {}",
            x.nrows(),
            frame.dim()
        )));
    }
    Ok(FfCoefficients {
        data: frame.synthesis().tr_mul(x),
        frame_params: *frame.params(),
    })
}

/// `P C`.
pub fn synthesis(frame: &FusionFrame, c: &FfCoefficients) -> Result<DMatrix<f64>> {
    if c.data.nrows() != frame.frame_dim() {
        return Err(Error::shape(format!(
            "synthesis: coefficients have {} rows, frame has k*rho = {}",
            c.data.nrows(),
            frame.frame_dim()
        )));
    }
    Ok(frame.synthesis() * &c.data)
}

/// `w_i^2 U_i x = P_i (P_i^T x)` for the zero-based subspace index `i`.
pub fn project_subspace(frame: &FusionFrame, i: usize, x: &DVector<f64>) -> Result<DVector<f64>> {
    if i >= frame.k() {
        return Err(Error::invalid(format!(
            "subspace index {i} out of range (k = {})",
            frame.k()
        )));
    }
    if x.len() != frame.dim() {
        return Err(Error::shape(format!(
            "projection: vector has length {}, frame dimension is {}",
            x.len(),
            frame.dim()
        )));
    }
    let rho = frame.rho();
    let p = frame.synthesis().columns(i * rho, rho);
    Ok(p * p.tr_mul(x))
}

/// `max |sum_i w_i^2 U_i - I|` entrywise, the Parseval certificate.
pub fn frame_operator_deviation(frame: &FusionFrame) -> f64 {
    synthesis_deviation(frame.synthesis())
}

/// Parseval deviation of an arbitrary synthesis matrix.
pub fn synthesis_deviation(p: &DMatrix<f64>) -> f64 {
    let d = p.nrows();
    let s = p * p.transpose();
    let mut worst = 0.0f64;
    for i in 0..d {
        for j in 0..d {
            let target = if i == j { 1.0 } else { 0.0 };
            worst = worst.max((s[(i, j)] - target).abs());
        }
    }
    worst
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::Stream;
    use crate::tff::{build_fusion_frame, FrameParams, Rotation};

    fn random(rows: usize, cols: usize, seed: u64) -> DMatrix<f64> {
        let mut s = Stream::new(seed);
        DMatrix::from_fn(rows, cols, |_, _| s.normal())
    }

    #[test]
    fn trivial_frame_analysis_is_identity() {
        let frame = FusionFrame::from_params(FrameParams::trivial(5, Rotation::Identity)).unwrap();
        let x = random(5, 3, 1);
        assert_eq!(analysis(&frame, &x).unwrap().data, x);
        assert_eq!(frame_operator_deviation(&frame), 0.0);
    }

    #[test]
    fn norm_preservation_and_round_trip() {
        let frame = build_fusion_frame(12, 1.5, 3).unwrap();
        let x = random(12, 7, 2);
        let c = analysis(&frame, &x).unwrap();
        assert!((c.data.norm() - x.norm()).abs() <= 1e-9 * x.norm());
        let back = synthesis(&frame, &c).unwrap();
        assert!((back - &x).norm() <= 1e-9 * x.norm());
    }

    #[test]
    fn zero_coefficients_synthesize_to_zero() {
        let frame = build_fusion_frame(8, 2.0, 3).unwrap();
        let c = FfCoefficients::new(DMatrix::zeros(frame.frame_dim(), 2), *frame.params()).unwrap();
        assert_eq!(synthesis(&frame, &c).unwrap(), DMatrix::zeros(8, 2));
    }

    #[test]
    fn projections_resolve_identity_and_are_idempotent() {
        let frame = build_fusion_frame(10, 2.0, 8).unwrap();
        let x = DVector::from_column_slice(random(10, 1, 5).as_slice());
        let mut sum = DVector::zeros(10);
        let w2 = frame.weight().powi(2);
        for i in 0..frame.k() {
            let p = project_subspace(&frame, i, &x).unwrap();
            // U_i (U_i x) = U_i x, with w_i^2 U_i applied twice giving w_i^2 * (w_i^2 U_i x)
            let twice = project_subspace(&frame, i, &p).unwrap();
            assert!((twice - &p * w2).norm() < 1e-10);
            sum += p;
        }
        assert!((sum - x).norm() < 1e-9);
    }

    #[test]
    fn projection_of_orthogonal_vector_vanishes() {
        let frame = FusionFrame::from_params(FrameParams::new(2, 2, 4, Rotation::Identity)).unwrap();
        let b0 = frame.basis(0);
        // any vector in the span of the other subspace is orthogonal to subspace 0
        let x = frame.basis(1).column(0).into_owned();
        assert!(b0.tr_mul(&x).norm() < 1e-12);
        assert!(project_subspace(&frame, 0, &x).unwrap().norm() < 1e-12);
    }

    #[test]
    fn errors_on_mismatch() {
        let frame = build_fusion_frame(6, 1.5, 1).unwrap();
        assert!(analysis(&frame, &DMatrix::zeros(5, 1)).is_err());
        assert!(project_subspace(&frame, frame.k(), &DVector::zeros(6)).is_err());
        assert!(FfCoefficients::new(DMatrix::zeros(3, 1), *frame.params()).is_err());
    }

    #[test]
    fn analysis_is_linear() {
        let frame = build_fusion_frame(9, 2.0, 4).unwrap();
        let (x, y) = (random(9, 4, 1), random(9, 4, 2));
        let lhs = analysis(&frame, &(&x * 2.5 - &y * 0.5)).unwrap().data;
        let rhs = analysis(&frame, &x).unwrap().data * 2.5 - analysis(&frame, &y).unwrap().data * 0.5;
        assert!((lhs - rhs).amax() < 1e-12);
    }
}
