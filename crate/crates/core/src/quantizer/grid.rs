use nalgebra::DMatrix;

use crate::error::{Error, Result};

/// Per-row asymmetric uniform grids: value `v` of row `i` maps to code
/// `clamp(round(v / scale_i) + zero_i, 0, 2^bits - 1)` and back to
/// `(code - zero_i) * scale_i`, evaluated in FP32.
#[derive(Debug, Clone, PartialEq)]
pub struct RowGrid {
    pub bits: u8,
    pub scale: Vec<f32>,
    pub zero: Vec<f32>,
}

pub(crate) fn check_bits(bits: u8) -> Result<()> {
    if (2..=8).contains(&bits) {
        Ok(())
    } else {
        Err(Error::invalid(format!("bits must be in [2, 8], got {bits}")))
    }
}

impl RowGrid {
    pub fn rows(&self) -> usize {
        self.scale.len()
    }

    pub fn max_code(&self) -> u8 {
        ((1u16 << self.bits) - 1) as u8
    }

    pub fn encode(&self, row: usize, v: f64) -> u8 {
        let q = (v / self.scale[row] as f64).round() + self.zero[row] as f64;
        q.clamp(0.0, self.max_code() as f64) as u8
    }

    pub fn decode(&self, row: usize, code: u8) -> f64 {
        dequantize_code(code, self.scale[row], self.zero[row])
    }
}

/// `(code - zero) * scale` in FP32, promoted to FP64. Shared by the quantizer and the
/// runtime so that both see bit-identical weights.
pub fn dequantize_code(code: u8, scale: f32, zero: f32) -> f64 {
    ((code as f32 - zero) * scale) as f64
}

/// Min/max grid per row. The row range is widened to include zero, so the zero point
/// always lands inside `[0, 2^bits - 1]`; an all-zero row gets `scale = 1, zero = 0`.
pub fn quant_grid_per_row(d: &DMatrix<f64>, bits: u8) -> Result<RowGrid> {
    check_bits(bits)?;
    let maxq = ((1u32 << bits) - 1) as f64;
    let mut scale = Vec::with_capacity(d.nrows());
    let mut zero = Vec::with_capacity(d.nrows());
    for row in d.row_iter() {
        let lo = row.iter().copied().fold(0.0f64, f64::min);
        let hi = row.iter().copied().fold(0.0f64, f64::max);
        let s = ((hi - lo) / maxq) as f32;
        if hi == lo || s == 0.0 || !s.is_finite() {
            scale.push(1.0);
            zero.push(0.0);
            continue;
        }
        scale.push(s);
        zero.push(((-lo) * maxq / (hi - lo)).round().clamp(0.0, maxq) as f32);
    }
    Ok(RowGrid { bits, scale, zero })
}

/// Independent rounding of every entry to its row grid.
pub fn round_to_nearest(d: &DMatrix<f64>, grid: &RowGrid) -> (Vec<u8>, DMatrix<f64>) {
    let (rows, cols) = d.shape();
    let mut codes = vec![0u8; rows * cols];
    let mut q = DMatrix::zeros(rows, cols);
    for i in 0..rows {
        for j in 0..cols {
            let c = grid.encode(i, d[(i, j)]);
            codes[i * cols + j] = c;
            q[(i, j)] = grid.decode(i, c);
        }
    }
    (codes, q)
}
