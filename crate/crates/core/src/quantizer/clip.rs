use nalgebra::DMatrix;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ClipStats {
    pub mu: f64,
    /// Population standard deviation of all entries.
    pub sigma: f64,
}

/// Clamps every entry to `[mu - sigmas * sigma, mu + sigmas * sigma]` using the global
/// mean and standard deviation. Returns the input unchanged when `sigma == 0`.
pub fn clip_sigma_band(d: &DMatrix<f64>, sigmas: f64) -> (DMatrix<f64>, ClipStats) {
    let stats = matrix_stats(d);
    if stats.sigma == 0.0 {
        return (d.clone(), stats);
    }
    let lo = stats.mu - sigmas * stats.sigma;
    let hi = stats.mu + sigmas * stats.sigma;
    (d.map(|v| v.clamp(lo, hi)), stats)
}

pub fn matrix_stats(d: &DMatrix<f64>) -> ClipStats {
    let n = d.len().max(1) as f64;
    let mu = d.sum() / n;
    let var = d.iter().map(|v| (v - mu) * (v - mu)).sum::<f64>() / n;
    ClipStats {
        mu,
        sigma: var.sqrt(),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::Stream;

    #[test]
    fn constant_matrix_is_unchanged() {
        let d = DMatrix::from_element(3, 4, 2.5);
        let (c, s) = clip_sigma_band(&d, 2.0);
        assert_eq!(c, d);
        assert_eq!(s.sigma, 0.0);
    }

    #[test]
    fn single_outlier_is_pinned() {
        let mut v = vec![0.0; 16];
        v[5] = 10.0;
        let d = DMatrix::from_row_slice(4, 4, &v);
        // hand computation: mu = 10/16, var = (15 mu^2 + (10 - mu)^2) / 16
        let mu = 0.625;
        let sigma = ((15.0 * mu * mu + (10.0 - mu) * (10.0f64 - mu)) / 16.0).sqrt();
        let (c, s) = clip_sigma_band(&d, 2.0);
        assert!((s.mu - mu).abs() < 1e-15);
        assert!((s.sigma - sigma).abs() < 1e-12);
        assert!((c[(1, 1)] - (mu + 2.0 * sigma)).abs() < 1e-12);
        for (i, x) in c.transpose().iter().enumerate() {
            if i != 5 {
                assert_eq!(*x, 0.0);
            }
        }
    }

    #[test]
    fn gaussian_clip_fraction() {
        let mut s = Stream::new(2024);
        let d = DMatrix::from_fn(1000, 1000, |_, _| s.normal());
        let (c, _) = clip_sigma_band(&d, 2.0);
        let clipped = d.iter().zip(c.iter()).filter(|(a, b)| a != b).count();
        let frac = clipped as f64 / d.len() as f64;
        // 2 * Phi(-2) = 0.0455
        assert!((frac - 0.0455).abs() < 0.001, "{frac}");
    }
}
