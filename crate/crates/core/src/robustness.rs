//! Noise robustness of frame representations: Monte Carlo MSE against redundancy,
//! scalar Wiener shrinkage and consistent reconstruction from quantized coefficients.
//!
//! Trials draw from per-trial substreams of the experiment seed and are reduced in
//! trial order, so results do not depend on the thread count.

use std::fmt::Write as _;

use nalgebra::{DMatrix, DVector};
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::rng::Stream;
use crate::tff::{build_fusion_frame, FusionFrame};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum NoiseModel {
    AdditiveGaussian,
    /// Subtractively dithered uniform quantizer, whose error is uniform and independent
    /// of the input.
    UniformMemoryless,
}

#[derive(Debug, Clone, PartialEq)]
pub struct NoiseExperimentConfig {
    pub d: usize,
    pub redundancies: Vec<f64>,
    /// Ratio of mean coefficient power to noise power per coefficient.
    pub snr_db: f64,
    pub trials: usize,
    pub seed: u64,
    pub noise: NoiseModel,
}

#[derive(Debug, Clone, PartialEq)]
pub struct BenchRow {
    /// Redundancy `k rho / d` of the frame actually used.
    pub r: f64,
    pub trials: usize,
    pub mse: f64,
    /// `mse / mse(first row)`.
    pub ratio: f64,
    /// Least-squares slope of `ln mse` against `ln r` over all rows.
    pub slope: f64,
}

/// Least-squares slope of `ln y` against `ln x`; NaN with fewer than two distinct `x`.
pub fn loglog_slope(x: &[f64], y: &[f64]) -> f64 {
    let n = x.len() as f64;
    let lx: Vec<f64> = x.iter().map(|v| v.ln()).collect();
    let ly: Vec<f64> = y.iter().map(|v| v.ln()).collect();
    let mx = lx.iter().sum::<f64>() / n;
    let my = ly.iter().sum::<f64>() / n;
    let sxy: f64 = lx.iter().zip(&ly).map(|(a, b)| (a - mx) * (b - my)).sum();
    let sxx: f64 = lx.iter().map(|a| (a - mx) * (a - mx)).sum();
    if sxx > 0.0 {
        sxy / sxx
    } else {
        f64::NAN
    }
}

fn finish_rows(points: Vec<(f64, usize, f64)>) -> Vec<BenchRow> {
    let rs: Vec<f64> = points.iter().map(|p| p.0).collect();
    let ms: Vec<f64> = points.iter().map(|p| p.2).collect();
    let slope = loglog_slope(&rs, &ms);
    let base = ms.first().copied().unwrap_or(f64::NAN);
    points
        .into_iter()
        .map(|(r, trials, mse)| BenchRow {
            r,
            trials,
            mse,
            ratio: mse / base,
            slope,
        })
        .collect()
}

/// Rows as CSV with header `r,trials,mse,ratio,slope`.
pub fn rows_to_csv(rows: &[BenchRow]) -> String {
    let mut s = String::from("r,trials,mse,ratio,slope\n");
    for r in rows {
        let _ = writeln!(s, "{},{},{:e},{},{}", r.r, r.trials, r.mse, r.ratio, r.slope);
    }
    s
}

fn random_unit(stream: &mut Stream, d: usize) -> DVector<f64> {
    loop {
        let v = DVector::from_fn(d, |_, _| stream.normal());
        let n = v.norm();
        if n > 1e-12 {
            return v / n;
        }
    }
}

fn mean_in_order(v: &[f64]) -> f64 {
    v.iter().sum::<f64>() / v.len() as f64
}

/// For each redundancy: random unit-norm `x`, coefficients `P^T x`, noise at `snr_db`
/// relative to the mean coefficient power `1 / (k rho)`, synthesis, squared error.
pub fn noise_mse_experiment(cfg: &NoiseExperimentConfig) -> Result<Vec<BenchRow>> {
    if cfg.trials == 0 {
        return Err(Error::invalid("trials must be at least 1"));
    }
    if !cfg.snr_db.is_finite() {
        return Err(Error::invalid("SNR must be finite"));
    }
    if cfg.redundancies.is_empty() {
        return Err(Error::invalid("no redundancies given"));
    }
    let snr = 10f64.powf(cfg.snr_db / 10.0);
    let mut points = Vec::with_capacity(cfg.redundancies.len());
    for (ri, &target) in cfg.redundancies.iter().enumerate() {
        let frame = build_fusion_frame(cfg.d, target, cfg.seed)?;
        let p = frame.synthesis();
        let m = frame.frame_dim();
        let noise_var = 1.0 / (m as f64 * snr);
        let errs: Vec<f64> = (0..cfg.trials)
            .into_par_iter()
            .map(|t| {
                let mut s = Stream::substream(cfg.seed, ((ri as u64) << 40) | t as u64);
                let x = random_unit(&mut s, cfg.d);
                let mut c = p.tr_mul(&x);
                add_noise(&mut c, noise_var, cfg.noise, &mut s);
                (p * c - x).norm_squared()
            })
            .collect();
        points.push((frame.redundancy().as_f64(), cfg.trials, mean_in_order(&errs)));
    }
    Ok(finish_rows(points))
}

fn add_noise(c: &mut DVector<f64>, var: f64, model: NoiseModel, s: &mut Stream) {
    match model {
        NoiseModel::AdditiveGaussian => {
            let sd = var.sqrt();
            for v in c.iter_mut() {
                *v += sd * s.normal();
            }
        }
        NoiseModel::UniformMemoryless => {
            let step = (12.0 * var).sqrt();
            for v in c.iter_mut() {
                let dither = (s.uniform() - 0.5) * step;
                *v = step * ((*v + dither) / step).round() - dither;
            }
        }
    }
}

/// Scalar Wiener gain `signal_var / (signal_var + noise_var)`.
pub fn wiener_gain(signal_var: f64, noise_var: f64) -> Result<f64> {
    if !(signal_var >= 0.0 && noise_var >= 0.0) || signal_var + noise_var == 0.0 {
        return Err(Error::invalid(format!(
            "variances must be nonnegative and not both zero (signal {signal_var}, noise {noise_var})"
        )));
    }
    Ok(signal_var / (signal_var + noise_var))
}

/// Reconstruction operator `c P` (`d x k rho`) with the scalar Wiener gain `c`.
///
/// `signal_var` is the per-coordinate variance of a white signal, `noise_var` the
/// variance of white noise on each frame coefficient. Since `P P^T = I` the noise
/// reaches the reconstruction with the same per-coordinate variance, and the best
/// scalar gain is the one above.
pub fn wiener_shrinkage(frame: &FusionFrame, signal_var: f64, noise_var: f64) -> Result<DMatrix<f64>> {
    Ok(frame.synthesis() * wiener_gain(signal_var, noise_var)?)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct WienerComparison {
    pub r: f64,
    pub trials: usize,
    pub plain_mse: f64,
    pub wiener_mse: f64,
}

/// White Gaussian signal of variance 1 per coordinate; coefficient noise at `snr_db`
/// relative to the mean coefficient power.
pub fn wiener_experiment(
    d: usize,
    redundancy: f64,
    snr_db: f64,
    trials: usize,
    seed: u64,
) -> Result<WienerComparison> {
    if trials == 0 {
        return Err(Error::invalid("trials must be at least 1"));
    }
    let frame = build_fusion_frame(d, redundancy, seed)?;
    let r = frame.redundancy().as_f64();
    let signal_var = 1.0;
    let noise_var = signal_var / r / 10f64.powf(snr_db / 10.0);
    let plain = frame.synthesis();
    let shrink = wiener_shrinkage(&frame, signal_var, noise_var)?;
    let pairs: Vec<(f64, f64)> = (0..trials)
        .into_par_iter()
        .map(|t| {
            let mut s = Stream::substream(seed, t as u64);
            let x = DVector::from_fn(d, |_, _| s.normal() * signal_var.sqrt());
            let mut c = plain.tr_mul(&x);
            add_noise(&mut c, noise_var, NoiseModel::AdditiveGaussian, &mut s);
            ((plain * &c - &x).norm_squared(), (&shrink * &c - &x).norm_squared())
        })
        .collect();
    let n = trials as f64;
    Ok(WienerComparison {
        r,
        trials,
        plain_mse: pairs.iter().map(|p| p.0).sum::<f64>() / n,
        wiener_mse: pairs.iter().map(|p| p.1).sum::<f64>() / n,
    })
}

/// Find `x` with `|t_j^T x - y_j| <= delta / 2` for every column `t_j` of `analysis`.
#[derive(Debug, Clone, PartialEq)]
pub struct ConsistentLpProblem {
    /// `d x m`; column `j` produced coefficient `j`.
    pub analysis: DMatrix<f64>,
    /// Observed quantized coefficients.
    pub observed: DVector<f64>,
    pub delta: f64,
}

pub const DEFAULT_MAX_SWEEPS: usize = 100_000;

#[derive(Debug, Clone, PartialEq)]
pub struct ConsistentSolution {
    pub x: DVector<f64>,
    pub max_violation: f64,
    /// Sweeps needed to reach the cell, before centering.
    pub sweeps: usize,
}

impl ConsistentLpProblem {
    pub fn new(analysis: DMatrix<f64>, observed: DVector<f64>, delta: f64) -> Result<Self> {
        if analysis.ncols() != observed.len() {
            return Err(Error::shape(format!(
                "{} analysis vectors, {} observations",
                analysis.ncols(),
                observed.len()
            )));
        }
        if !(delta > 0.0) || !delta.is_finite() {
            return Err(Error::invalid(format!("quantization step must be > 0, got {delta}")));
        }
        Ok(Self {
            analysis,
            observed,
            delta,
        })
    }

    /// Largest constraint violation `max_j (|t_j^T x - y_j| - delta / 2)^+`.
    pub fn max_violation(&self, x: &DVector<f64>) -> f64 {
        let half = self.delta / 2.0;
        let c = self.analysis.tr_mul(x);
        c.iter()
            .zip(self.observed.iter())
            .map(|(a, y)| ((a - y).abs() - half).max(0.0))
            .fold(0.0, f64::max)
    }

    /// Least-squares solution of `T^T x = y`.
    pub fn linear_estimate(&self) -> Result<DVector<f64>> {
        let g = &self.analysis * self.analysis.transpose();
        let rhs = &self.analysis * &self.observed;
        g.cholesky()
            .map(|c| c.solve(&rhs))
            .ok_or_else(|| Error::Numerical("analysis vectors do not span the space".into()))
    }
}

/// Cyclic projections onto the constraint slabs, starting from the least-squares
/// estimate. Slabs are narrowed by `tol / 2` while projecting so that the iteration
/// reaches the true cell in finitely many sweeps. The feasible point is then pushed
/// toward the middle of the cell by bisecting on the largest slab margin that the
/// projections can still satisfy; a point deep inside the cell is a much better
/// estimate than one on its boundary.
pub fn consistent_reconstruct(problem: &ConsistentLpProblem, tol: f64) -> Result<ConsistentSolution> {
    consistent_reconstruct_capped(problem, tol, DEFAULT_MAX_SWEEPS)
}

/// Bisection steps and per-step sweep budget of the centering stage.
const CENTER_STEPS: usize = 12;
const CENTER_SWEEPS: usize = 200;

/// One cyclic pass over the slabs `|t_j^T x - y_j| <= half`. Returns the largest
/// correction applied.
fn project_sweep(problem: &ConsistentLpProblem, norms: &[f64], half: f64, x: &mut DVector<f64>) -> f64 {
    let mut moved = 0.0f64;
    for (j, col) in problem.analysis.column_iter().enumerate() {
        if norms[j] == 0.0 {
            continue;
        }
        let r = col.dot(x) - problem.observed[j];
        let excess = if r > half {
            r - half
        } else if r < -half {
            r + half
        } else {
            continue;
        };
        moved = moved.max(excess.abs());
        x.axpy(-excess / norms[j], &col, 1.0);
    }
    moved
}

pub fn consistent_reconstruct_capped(
    problem: &ConsistentLpProblem,
    tol: f64,
    max_sweeps: usize,
) -> Result<ConsistentSolution> {
    if !(tol > 0.0) {
        return Err(Error::invalid("tolerance must be > 0"));
    }
    let half = problem.delta / 2.0;
    let inner = (half - tol / 2.0).max(half / 2.0);
    let norms: Vec<f64> = problem.analysis.column_iter().map(|c| c.norm_squared()).collect();
    let mut x = problem.linear_estimate()?;
    let mut sweeps = 0;
    loop {
        let v = problem.max_violation(&x);
        if v <= tol {
            break;
        }
        if sweeps == max_sweeps {
            return Err(Error::Numerical(format!(
                "consistent reconstruction did not converge in {max_sweeps} sweeps \
                 (max violation {v:e}); the constraints may be infeasible"
            )));
        }
        project_sweep(problem, &norms, inner, &mut x);
        sweeps += 1;
    }

    let (mut lo, mut hi) = (0.0, half);
    for _ in 0..CENTER_STEPS {
        let margin = 0.5 * (lo + hi);
        let mut y = x.clone();
        let ok = (0..CENTER_SWEEPS).any(|_| project_sweep(problem, &norms, half - margin, &mut y) <= tol * 1e-3);
        if ok && problem.max_violation(&y) <= tol {
            x = y;
            lo = margin;
        } else {
            hi = margin;
        }
    }
    Ok(ConsistentSolution {
        max_violation: problem.max_violation(&x),
        x,
        sweeps,
    })
}

/// Uniform quantizer `delta * round(v / delta)`.
pub fn quantize_uniform(v: f64, delta: f64) -> f64 {
    delta * (v / delta).round()
}

#[derive(Debug, Clone, PartialEq)]
pub struct ConsistentRow {
    pub r: f64,
    pub trials: usize,
    pub linear_mse: f64,
    pub consistent_mse: f64,
    /// Worst constraint violation over all trials.
    pub max_violation: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ConsistentExperimentConfig {
    pub d: usize,
    pub redundancies: Vec<f64>,
    pub delta: f64,
    pub trials: usize,
    pub seed: u64,
    pub tol: f64,
}

impl Default for ConsistentExperimentConfig {
    fn default() -> Self {
        Self {
            d: 8,
            redundancies: vec![1.0, 2.0, 4.0, 8.0],
            delta: 0.05,
            trials: 500,
            seed: 0,
            tol: 1e-6,
        }
    }
}

/// Quantizes the unit-norm frame coefficients `T^T x` of random unit vectors with step
/// `delta` and compares linear and consistent reconstruction.
pub fn consistent_experiment(cfg: &ConsistentExperimentConfig) -> Result<Vec<ConsistentRow>> {
    if cfg.trials == 0 {
        return Err(Error::invalid("trials must be at least 1"));
    }
    let mut rows = Vec::with_capacity(cfg.redundancies.len());
    for (ri, &target) in cfg.redundancies.iter().enumerate() {
        let frame = build_fusion_frame(cfg.d, target, cfg.seed)?;
        let t = frame.synthesis() / frame.weight();
        let results: Vec<Result<(f64, f64, f64)>> = (0..cfg.trials)
            .into_par_iter()
            .map(|k| {
                let mut s = Stream::substream(cfg.seed, ((ri as u64) << 40) | k as u64);
                let x = random_unit(&mut s, cfg.d);
                let y = t.tr_mul(&x).map(|v| quantize_uniform(v, cfg.delta));
                let problem = ConsistentLpProblem::new(t.clone(), y, cfg.delta)?;
                let lin = problem.linear_estimate()?;
                let sol = consistent_reconstruct(&problem, cfg.tol)?;
                Ok((
                    (lin - &x).norm_squared(),
                    (sol.x - &x).norm_squared(),
                    sol.max_violation,
                ))
            })
            .collect();
        let results = results.into_iter().collect::<Result<Vec<_>>>()?;
        let n = cfg.trials as f64;
        rows.push(ConsistentRow {
            r: frame.redundancy().as_f64(),
            trials: cfg.trials,
            linear_mse: results.iter().map(|v| v.0).sum::<f64>() / n,
            consistent_mse: results.iter().map(|v| v.1).sum::<f64>() / n,
            max_violation: results.iter().map(|v| v.2).fold(0.0, f64::max),
        });
    }
    Ok(rows)
}

/// Consistent-reconstruction MSE as bench rows.
pub fn consistent_bench_rows(rows: &[ConsistentRow]) -> Vec<BenchRow> {
    finish_rows(
        rows.iter()
            .map(|r| (r.r, r.trials, r.consistent_mse))
            .collect(),
    )
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tff::{FrameParams, Rotation};

    #[test]
    fn slope_of_power_law() {
        let x = [1.0, 2.0, 4.0];
        let y: Vec<f64> = x.iter().map(|v: &f64| 3.0 * v.powf(-1.5)).collect();
        assert!((loglog_slope(&x, &y) + 1.5).abs() < 1e-12);
        assert!(loglog_slope(&[2.0], &[1.0]).is_nan());
    }

    #[test]
    fn orthogonal_frame_keeps_noise_power() {
        let cfg = NoiseExperimentConfig {
            d: 6,
            redundancies: vec![1.0],
            snr_db: 10.0,
            trials: 4000,
            seed: 1,
            noise: NoiseModel::AdditiveGaussian,
        };
        let rows = noise_mse_experiment(&cfg).unwrap();
        // noise variance per coefficient 1 / (6 * 10), d = 6 coordinates
        let expected = 6.0 / 60.0;
        assert!((rows[0].mse / expected - 1.0).abs() < 0.05, "{rows:?}");
        assert_eq!(rows[0].ratio, 1.0);
        assert!(rows[0].slope.is_nan());
    }

    #[test]
    fn dithered_quantizer_behaves_like_noise() {
        let cfg = NoiseExperimentConfig {
            d: 4,
            redundancies: vec![1.0, 2.0],
            snr_db: 10.0,
            trials: 3000,
            seed: 2,
            noise: NoiseModel::UniformMemoryless,
        };
        let rows = noise_mse_experiment(&cfg).unwrap();
        assert!((rows[0].mse / 0.1 - 1.0).abs() < 0.05);
        assert!((rows[1].ratio - 0.5).abs() < 0.05);
    }

    #[test]
    fn deterministic_under_seed() {
        let cfg = NoiseExperimentConfig {
            d: 4,
            redundancies: vec![1.0, 1.5],
            snr_db: 10.0,
            trials: 50,
            seed: 7,
            noise: NoiseModel::AdditiveGaussian,
        };
        assert_eq!(noise_mse_experiment(&cfg).unwrap(), noise_mse_experiment(&cfg).unwrap());
        let bad = NoiseExperimentConfig { trials: 0, ..cfg };
        assert!(noise_mse_experiment(&bad).is_err());
    }

    #[test]
    fn wiener_gain_limits() {
        assert_eq!(wiener_gain(1.0, 0.0).unwrap(), 1.0);
        assert_eq!(wiener_gain(2.0, 2.0).unwrap(), 0.5);
        assert!(wiener_gain(0.0, 0.0).is_err());
        assert!(wiener_gain(-1.0, 1.0).is_err());
        let f = build_fusion_frame(4, 1.5, 0).unwrap();
        assert_eq!(&wiener_shrinkage(&f, 1.0, 0.0).unwrap(), f.synthesis());
    }

    #[test]
    fn wiener_helps() {
        let w = wiener_experiment(8, 2.0, 0.0, 5000, 3).unwrap();
        assert!(w.wiener_mse < 0.9 * w.plain_mse, "{w:?}");
    }

    #[test]
    fn one_dimensional_cell() {
        let p = ConsistentLpProblem::new(
            DMatrix::from_element(1, 1, 1.0),
            DVector::from_element(1, 0.3),
            0.1,
        )
        .unwrap();
        let s = consistent_reconstruct(&p, 1e-9).unwrap();
        assert!((s.x[0] - 0.3).abs() <= 0.05 + 1e-9);
    }

    #[test]
    fn orthogonal_frame_cell_is_a_box() {
        let f = FusionFrame::from_params(FrameParams::trivial(5, Rotation::Seeded(4))).unwrap();
        let t = f.synthesis().clone();
        let mut s = Stream::new(5);
        let x = random_unit(&mut s, 5);
        let delta = 0.2;
        let y = t.tr_mul(&x).map(|v| quantize_uniform(v, delta));
        let p = ConsistentLpProblem::new(t.clone(), y, delta).unwrap();
        let sol = consistent_reconstruct(&p, 1e-9).unwrap();
        let err = t.tr_mul(&(sol.x - &x));
        assert!(err.amax() <= delta + 1e-9);
        assert_eq!(sol.sweeps, 0);
    }

    #[test]
    fn redundant_cell_is_reached() {
        let f = build_fusion_frame(8, 4.0, 6).unwrap();
        let t = f.synthesis() / f.weight();
        let mut s = Stream::new(7);
        for _ in 0..20 {
            let x = random_unit(&mut s, 8);
            let y = t.tr_mul(&x).map(|v| quantize_uniform(v, 0.05));
            let p = ConsistentLpProblem::new(t.clone(), y, 0.05).unwrap();
            let sol = consistent_reconstruct(&p, 1e-6).unwrap();
            assert!(p.max_violation(&sol.x) <= 1e-6);
            // the truth is consistent, so the cell is never empty
            assert!(p.max_violation(&x) <= 1e-12);
        }
    }

    #[test]
    fn infeasible_problem_reports_violation() {
        // x = 0 and x = 1 cannot both hold to within 0.05
        let p = ConsistentLpProblem::new(
            DMatrix::from_row_slice(1, 2, &[1.0, 1.0]),
            DVector::from_row_slice(&[0.0, 1.0]),
            0.1,
        )
        .unwrap();
        match consistent_reconstruct_capped(&p, 1e-6, 50) {
            Err(Error::Numerical(msg)) => assert!(msg.contains("max violation")),
            other => panic!("{other:?}"),
        }
        assert!(ConsistentLpProblem::new(DMatrix::zeros(1, 2), DVector::zeros(2), 0.0).is_err());
    }

    #[test]
    fn csv_layout() {
        let rows = finish_rows(vec![(1.0, 10, 0.2), (2.0, 10, 0.1)]);
        let csv = rows_to_csv(&rows);
        let lines: Vec<&str> = csv.lines().collect();
        assert_eq!(lines[0], "r,trials,mse,ratio,slope");
        assert_eq!(lines.len(), 3);
        assert!((rows[1].slope + 1.0).abs() < 1e-12);
    }
}
