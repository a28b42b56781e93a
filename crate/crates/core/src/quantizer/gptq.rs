//! Hessian-guided column sweep (GPTQ / OBS error feedback) on frame-space weights.

use nalgebra::DMatrix;
use rayon::prelude::*;

use super::grid::RowGrid;
use super::hessian::HessianAccumulator;
use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq)]
pub struct GptqResult {
    /// Row-major codes, `rows x cols`.
    pub codes: Vec<u8>,
    pub dequantized: DMatrix<f64>,
    /// `tr((D - D_hat) H (D - D_hat)^T)` with the undamped Hessian.
    pub loss: f64,
}

/// Quantizes `d` column by column. Each rounding error is divided by the matching
/// diagonal of the upper Cholesky factor `U` of `H^-1` and fed forward to the not yet
/// quantized columns through row `i` of `U`; within a block of `block_size` columns the
/// feedback is immediate, the rest of the matrix receives it once per block.
///
/// Rows never interact, so they are swept in parallel with identical results for any
/// thread count.
pub fn gptq_quantize(
    d: &DMatrix<f64>,
    hessian: &HessianAccumulator,
    grid: &RowGrid,
    block_size: usize,
    act_order: bool,
) -> Result<GptqResult> {
    let (rows, m) = d.shape();
    if hessian.dim() != m {
        return Err(Error::shape(format!(
            "Hessian is {0}x{0}, weights have {m} columns",
            hessian.dim()
        )));
    }
    if grid.rows() != rows {
        return Err(Error::shape(format!(
            "grid has {} rows, weights have {rows}",
            grid.rows()
        )));
    }
    if block_size == 0 {
        return Err(Error::invalid("block size must be at least 1"));
    }

    let mut h = hessian.h.clone();
    for i in 0..m {
        if h[(i, i)] == 0.0 {
            h[(i, i)] = 1.0;
        }
    }
    let lambda = hessian.damping_fraction * h.diagonal().sum() / m.max(1) as f64;
    for i in 0..m {
        h[(i, i)] += lambda;
    }

    let mut perm: Vec<usize> = (0..m).collect();
    if act_order {
        perm.sort_by(|&a, &b| h[(b, b)].total_cmp(&h[(a, a)]).then(a.cmp(&b)));
    }
    let hp = DMatrix::from_fn(m, m, |a, b| h[(perm[a], perm[b])]);

    let damping_hint = || {
        format!(
            "Hessian not positive definite after damping {} (lambda = {lambda:e}); \
             increase damping_fraction",
            hessian.damping_fraction
        )
    };
    let hinv = hp
        .cholesky()
        .ok_or_else(|| Error::Numerical(damping_hint()))?
        .inverse();
    let l = hinv
        .cholesky()
        .ok_or_else(|| Error::Numerical(damping_hint()))?
        .unpack();
    // row-major upper factor: u[i * m + j] = U[i][j] = L[j][i]
    let mut u = vec![0.0f64; m * m];
    for i in 0..m {
        for j in i..m {
            u[i * m + j] = l[(j, i)];
        }
    }

    let sweep = |r: usize| -> Vec<u8> {
        let mut w: Vec<f64> = perm.iter().map(|&c| d[(r, c)]).collect();
        let mut codes = vec![0u8; m];
        let mut err = vec![0.0f64; block_size];
        let mut i1 = 0;
        while i1 < m {
            let i2 = (i1 + block_size).min(m);
            for i in i1..i2 {
                let code = grid.encode(r, w[i]);
                codes[i] = code;
                let e = (w[i] - grid.decode(r, code)) / u[i * m + i];
                err[i - i1] = e;
                let urow = &u[i * m..(i + 1) * m];
                for j in i + 1..i2 {
                    w[j] -= e * urow[j];
                }
            }
            for (t, e) in err[..i2 - i1].iter().enumerate() {
                let urow = &u[(i1 + t) * m..(i1 + t + 1) * m];
                for j in i2..m {
                    w[j] -= e * urow[j];
                }
            }
            i1 = i2;
        }
        let mut out = vec![0u8; m];
        for (a, &c) in perm.iter().enumerate() {
            out[c] = codes[a];
        }
        out
    };
    let per_row: Vec<Vec<u8>> = (0..rows).into_par_iter().map(sweep).collect();

    let codes: Vec<u8> = per_row.concat();
    let dequantized = DMatrix::from_fn(rows, m, |i, j| grid.decode(i, codes[i * m + j]));
    let loss = proxy_loss_hessian(d, &dequantized, &hessian.h);
    Ok(GptqResult {
        codes,
        dequantized,
        loss,
    })
}

/// `tr((D - D_hat) H (D - D_hat)^T)`.
pub fn proxy_loss_hessian(d: &DMatrix<f64>, dhat: &DMatrix<f64>, h: &DMatrix<f64>) -> f64 {
    let e = d - dhat;
    (&e * h).component_mul(&e).sum()
}

/// `||(D - D_hat) C||_F^2`.
pub fn proxy_loss_direct(d: &DMatrix<f64>, dhat: &DMatrix<f64>, c: &DMatrix<f64>) -> f64 {
    ((d - dhat) * c).norm_squared()
}
