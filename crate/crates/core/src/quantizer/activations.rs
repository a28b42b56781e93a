use nalgebra::DMatrix;

use crate::error::{Error, Result};

/// Symmetric per-tensor INT-N activation codes.
#[derive(Debug, Clone, PartialEq)]
pub struct ActivationCodes {
    pub n_bits: u8,
    /// `max |C| / (2^(n_bits - 1) - 1)`, or 1 for an all-zero input.
    pub scale: f64,
    pub codes: DMatrix<i16>,
}

impl ActivationCodes {
    pub fn max_code(&self) -> i16 {
        (1i16 << (self.n_bits - 1)) - 1
    }

    pub fn dequantize(&self) -> DMatrix<f64> {
        self.codes.map(|c| c as f64 * self.scale)
    }
}

/// Rounds `C / scale` to the nearest integer (ties away from zero) and clamps it to
/// `[-(2^(N-1) - 1), 2^(N-1) - 1]`.
pub fn quantize_activations(c: &DMatrix<f64>, n_bits: u8) -> Result<ActivationCodes> {
    if !matches!(n_bits, 4 | 6 | 8) {
        return Err(Error::invalid(format!(
            "activation bits must be 4, 6 or 8, got {n_bits}"
        )));
    }
    let maxq = ((1i32 << (n_bits - 1)) - 1) as f64;
    let amax = c.amax();
    let scale = if amax > 0.0 { amax / maxq } else { 1.0 };
    let codes = c.map(|v| (v / scale).round().clamp(-maxq, maxq) as i16);
    Ok(ActivationCodes {
        n_bits,
        scale,
        codes,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::Stream;

    #[test]
    fn formula_example() {
        let c = DMatrix::from_row_slice(1, 3, &[12.7, -3.0, 0.37]);
        let q = quantize_activations(&c, 8).unwrap();
        assert!((q.scale - 0.1).abs() < 1e-12);
        assert_eq!(q.codes[(0, 2)], 4);
        assert_eq!(q.codes[(0, 0)], 127);
        assert_eq!(q.codes[(0, 1)], -30);
    }

    #[test]
    fn zero_input() {
        let q = quantize_activations(&DMatrix::zeros(3, 2), 4).unwrap();
        assert_eq!(q.scale, 1.0);
        assert!(q.codes.iter().all(|c| *c == 0));
    }

    #[test]
    fn half_step_error_bound() {
        let mut s = Stream::new(2);
        let c = DMatrix::from_fn(8, 16, |_, _| s.normal() * 3.0);
        for bits in [4, 6, 8] {
            let q = quantize_activations(&c, bits).unwrap();
            let err = (q.dequantize() - &c).amax();
            assert!(err <= q.scale / 2.0 * (1.0 + 1e-12), "{bits}: {err}");
            assert!(q.codes.iter().all(|v| v.abs() <= q.max_code()));
        }
    }

    #[test]
    fn ties_round_away_from_zero() {
        // max 7 at 4 bits gives scale 1, so 2.5 and -2.5 sit exactly on ties
        let c = DMatrix::from_row_slice(1, 3, &[7.0, 2.5, -2.5]);
        let q = quantize_activations(&c, 4).unwrap();
        assert_eq!(q.scale, 1.0);
        assert_eq!((q.codes[(0, 1)], q.codes[(0, 2)]), (3, -3));
    }

    #[test]
    fn unsupported_widths() {
        let c = DMatrix::from_element(1, 1, 1.0);
        for bits in [0, 2, 3, 5, 7, 9] {
            assert!(quantize_activations(&c, bits).is_err());
        }
    }
}
