//! Construction of (k, rho, d) tight fusion frames.
//!
//! A frame is built in three stages:
//!
//! 1. Spectral Tetris produces a `rho x d` unit-norm tight frame `F` (unit columns,
//!    `F F^T = (d / rho) I`), filling each row left to right with 1-columns and closing
//!    the row with a 2x2 `T(x)` block.
//! 2. Modulation turns the rows of `F` into `k` subspaces of dimension `rho`. The
//!    result is tight exactly when no row of `F` spans more than `k` columns, since
//!    column pairs a multiple of `k` apart must then have disjoint supports.
//! 3. The frame is carried to the real field, weighted to be Parseval, and rotated by a
//!    seeded random orthogonal matrix.
//!
//! For even `d` and even `rho` the modulation uses complex roots of unity on
//! `C^(d/2)` followed by the entrywise map `x + iy -> [[x, -y], [y, x]]`. Otherwise
//! (odd `d` in particular) the rows are modulated by the columns of a Sylvester
//! Hadamard matrix, which needs `k` to be a power of two. `(1, d, d)` is the trivial
//! frame and is always available.

use std::fmt;

use nalgebra::DMatrix;
use num_complex::Complex64;
use num_integer::Integer;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng::{Stream, PRNG_NAME};

/// Version of the construction routes below. Stored alongside frame parameters so that
/// files written by a different construction are rejected instead of silently
/// regenerating different frames.
pub const CONSTRUCTION_VERSION: u16 = 1;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Rotation {
    /// No rotation; the frame keeps its sparse block structure in signal coordinates.
    Identity,
    Seeded(u64),
}

impl Rotation {
    pub fn seed(&self) -> Option<u64> {
        match self {
            Rotation::Identity => None,
            Rotation::Seeded(s) => Some(*s),
        }
    }
}

/// Exact redundancy `k * rho / d` in lowest terms.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Redundancy {
    pub num: usize,
    pub den: usize,
}

impl Redundancy {
    pub fn new(num: usize, den: usize) -> Self {
        let g = num.gcd(&den).max(1);
        Self {
            num: num / g,
            den: den / g,
        }
    }

    pub fn as_f64(&self) -> f64 {
        self.num as f64 / self.den as f64
    }
}

impl fmt::Display for Redundancy {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}/{}", self.num, self.den)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct FrameParams {
    pub k: usize,
    pub rho: usize,
    pub d: usize,
    pub rotation: Rotation,
}

impl FrameParams {
    pub fn new(k: usize, rho: usize, d: usize, rotation: Rotation) -> Self {
        Self { k, rho, d, rotation }
    }

    /// The orthonormal-basis frame `(1, d, d)`.
    pub fn trivial(d: usize, rotation: Rotation) -> Self {
        Self::new(1, d, d, rotation)
    }

    /// Number of frame coefficients, `k * rho`.
    pub fn frame_dim(&self) -> usize {
        self.k * self.rho
    }

    pub fn redundancy(&self) -> Redundancy {
        Redundancy::new(self.k * self.rho, self.d)
    }

    pub fn weight(&self) -> f64 {
        (self.d as f64 / (self.k * self.rho) as f64).sqrt()
    }
}

impl fmt::Display for FrameParams {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "({}, {}, {})", self.k, self.rho, self.d)?;
        match self.rotation {
            Rotation::Identity => write!(f, " unrotated"),
            Rotation::Seeded(s) => write!(f, " seed={s}"),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum InvalidReason {
    ZeroArgument,
    /// `k * rho < d`: the subspaces cannot span the space.
    DoesNotSpan { k: usize, rho: usize, d: usize },
    /// `d < 2 rho` with a nontrivial `k`: Spectral Tetris cannot place its 2x2 blocks.
    TetrisInfeasible { rho: usize, d: usize },
}

impl fmt::Display for InvalidReason {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            InvalidReason::ZeroArgument => write!(f, "k, rho and d must all be at least 1"),
            InvalidReason::DoesNotSpan { k, rho, d } => {
                write!(f, "k*rho = {} < d = {d}, the subspaces do not span", k * rho)
            }
            InvalidReason::TetrisInfeasible { rho, d } => write!(
                f,
                "Spectral Tetris needs d >= 2*rho (d = {d}, 2*rho = {}) unless k = 1 and rho = d",
                2 * rho
            ),
        }
    }
}

/// Existence verdict for a `(k, rho, d)` triple.
pub fn validate_params(k: usize, rho: usize, d: usize) -> Result<(), InvalidReason> {
    if k == 0 || rho == 0 || d == 0 {
        return Err(InvalidReason::ZeroArgument);
    }
    if k * rho < d {
        return Err(InvalidReason::DoesNotSpan { k, rho, d });
    }
    if d >= 2 * rho || (k == 1 && rho == d) {
        Ok(())
    } else {
        Err(InvalidReason::TetrisInfeasible { rho, d })
    }
}

fn invalid_frame(k: usize, rho: usize, d: usize, reason: impl ToString) -> Error {
    Error::InvalidFrame {
        k,
        rho,
        d,
        reason: reason.to_string(),
    }
}

#[derive(Debug, Clone, Copy)]
enum Placement {
    One { row: usize, col: usize },
    /// `T(x)` with `x = rem / rho`, occupying rows `row, row+1` and columns `col, col+1`.
    Block { row: usize, col: usize, rem: usize },
}

struct TetrisLayout {
    placements: Vec<Placement>,
    /// Half-open column range touched by each row.
    row_spans: Vec<(usize, usize)>,
}

/// Runs Spectral Tetris on integer masses measured in units of `1 / rho`, so every
/// branch decision is exact. Each row must collect mass `d / rho` (= `d` units), a
/// unit column carries `rho` units.
fn tetris_layout(rho: usize, d: usize) -> Result<TetrisLayout> {
    if rho == 0 || d == 0 {
        return Err(invalid_frame(0, rho, d, InvalidReason::ZeroArgument));
    }
    if d < 2 * rho {
        return Err(invalid_frame(
            0,
            rho,
            d,
            InvalidReason::TetrisInfeasible { rho, d },
        ));
    }
    let mut placements = Vec::with_capacity(d);
    let mut row_spans = Vec::with_capacity(rho);
    let mut col = 0usize;
    let mut carry = 0usize;
    for row in 0..rho {
        let start = if carry > 0 { col - 2 } else { col };
        let mut rem = d - carry;
        while rem >= rho {
            placements.push(Placement::One { row, col });
            col += 1;
            rem -= rho;
        }
        if rem > 0 {
            if row + 1 == rho {
                return Err(Error::Numerical(format!(
                    "Spectral Tetris left mass {rem}/{rho} in the last row (rho={rho}, d={d})"
                )));
            }
            placements.push(Placement::Block { row, col, rem });
            col += 2;
            carry = 2 * rho - rem;
        } else {
            carry = 0;
        }
        row_spans.push((start, col));
    }
    debug_assert_eq!(col, d);
    Ok(TetrisLayout {
        placements,
        row_spans,
    })
}

/// Unit-norm tight frame of `d` vectors in `R^rho`, stored as the `rho x d` matrix `F`.
#[derive(Debug, Clone, PartialEq)]
pub struct UntfMatrix {
    entries: DMatrix<f64>,
    row_spans: Vec<(usize, usize)>,
}

impl UntfMatrix {
    pub fn entries(&self) -> &DMatrix<f64> {
        &self.entries
    }

    pub fn rho(&self) -> usize {
        self.entries.nrows()
    }

    pub fn d(&self) -> usize {
        self.entries.ncols()
    }

    /// Half-open range of columns where row `j` may be nonzero.
    pub fn row_span(&self, j: usize) -> (usize, usize) {
        self.row_spans[j]
    }

    /// Widest row support; modulation by `k` roots is tight iff this is at most `k`.
    pub fn max_row_span(&self) -> usize {
        self.row_spans.iter().map(|(a, b)| b - a).max().unwrap_or(0)
    }
}

pub fn spectral_tetris(rho: usize, d: usize) -> Result<UntfMatrix> {
    let layout = tetris_layout(rho, d)?;
    let mut f = DMatrix::<f64>::zeros(rho, d);
    let two_rho = (2 * rho) as f64;
    for p in &layout.placements {
        match *p {
            Placement::One { row, col } => f[(row, col)] = 1.0,
            Placement::Block { row, col, rem } => {
                let a = (rem as f64 / two_rho).sqrt();
                let b = ((2 * rho - rem) as f64 / two_rho).sqrt();
                f[(row, col)] = a;
                f[(row, col + 1)] = a;
                f[(row + 1, col)] = b;
                f[(row + 1, col + 1)] = -b;
            }
        }
    }
    Ok(UntfMatrix {
        entries: f,
        row_spans: layout.row_spans,
    })
}

fn max_tetris_span(rho: usize, d: usize) -> Option<usize> {
    tetris_layout(rho, d)
        .ok()
        .map(|l| l.row_spans.iter().map(|(a, b)| b - a).max().unwrap_or(0))
}

/// Modulates each row of `F` with `w = [1, z, z^2, ..., z^(d-1)]`, `z = exp(2 pi i m / k)`,
/// for `m = 0..k`. Returns `k` matrices of shape `rho x d` whose rows are an orthonormal
/// basis of the corresponding subspace of `C^d`.
pub fn modulate(f: &UntfMatrix, k: usize) -> Result<Vec<DMatrix<Complex64>>> {
    if k == 0 {
        return Err(Error::invalid("modulation needs k >= 1"));
    }
    let (rho, d) = (f.rho(), f.d());
    let scale = (rho as f64 / d as f64).sqrt();
    let bases = (0..k)
        .map(|m| {
            DMatrix::from_fn(rho, d, |j, n| {
                let angle = std::f64::consts::TAU * ((n * m) % k) as f64 / k as f64;
                Complex64::from_polar(f.entries[(j, n)] * scale, angle)
            })
        })
        .collect();
    Ok(bases)
}

fn hadamard_sign(a: usize, b: usize) -> f64 {
    if (a & b).count_ones().is_multiple_of(2) {
        1.0
    } else {
        -1.0
    }
}

/// Real counterpart of [`modulate`]: row `j` of subspace `m` is `F_j` times the sign
/// sequence `n -> H[n mod k][m]` of the Sylvester Hadamard matrix of order `k`.
/// Distinct residues mod `k` get orthogonal sign patterns, which is the only property of
/// the roots of unity that tightness relies on.
pub fn modulate_signs(f: &UntfMatrix, k: usize) -> Result<Vec<DMatrix<f64>>> {
    if !k.is_power_of_two() {
        return Err(Error::invalid(format!(
            "sign modulation needs k to be a power of two, got {k}"
        )));
    }
    let (rho, d) = (f.rho(), f.d());
    let scale = (rho as f64 / d as f64).sqrt();
    Ok((0..k)
        .map(|m| {
            DMatrix::from_fn(rho, d, |j, n| {
                f.entries[(j, n)] * scale * hadamard_sign(n % k, m)
            })
        })
        .collect())
}

/// The entrywise map `x + iy -> [[x, -y], [y, x]]`.
pub fn complex_block(z: Complex64) -> [[f64; 2]; 2] {
    [[z.re, -z.im], [z.im, z.re]]
}

/// Applies [`complex_block`] to every entry, giving a `2m x 2n` real matrix.
pub fn complex_matrix_to_real(m: &DMatrix<Complex64>) -> DMatrix<f64> {
    let mut out = DMatrix::zeros(2 * m.nrows(), 2 * m.ncols());
    for i in 0..m.nrows() {
        for j in 0..m.ncols() {
            let b = complex_block(m[(i, j)]);
            out[(2 * i, 2 * j)] = b[0][0];
            out[(2 * i, 2 * j + 1)] = b[0][1];
            out[(2 * i + 1, 2 * j)] = b[1][0];
            out[(2 * i + 1, 2 * j + 1)] = b[1][1];
        }
    }
    out
}

/// Carries a complex fusion frame on `C^d`, given as per-subspace synthesis matrices
/// (`d x rho`, columns are basis vectors), to a real one on `R^(2d)` with subspaces of
/// dimension `2 rho`. The map is a *-homomorphism, so `sum B_i B_i^H = A I` becomes
/// `sum R_i R_i^T = A I` with the same constant.
pub fn complex_to_real(bases: &[DMatrix<Complex64>]) -> Vec<DMatrix<f64>> {
    bases.iter().map(complex_matrix_to_real).collect()
}

/// Seeded orthogonal matrix with determinant +1: QR of a Gaussian matrix (filled
/// row-major from [`Stream`]), signs fixed so the triangular factor has a positive
/// diagonal, last column negated if needed to land in SO(d).
pub fn random_rotation(d: usize, seed: u64) -> DMatrix<f64> {
    assert!(d >= 1, "rotation dimension must be at least 1");
    let mut stream = Stream::new(seed);
    let g = DMatrix::from_row_iterator(d, d, (0..d * d).map(|_| stream.normal()));
    let qr = g.qr();
    let r = qr.r();
    let mut q = qr.q();
    for j in 0..d {
        if r[(j, j)] < 0.0 {
            q.column_mut(j).neg_mut();
        }
    }
    if q.determinant() < 0.0 {
        q.column_mut(d - 1).neg_mut();
    }
    q
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Route {
    Trivial,
    /// Complex modulation on `C^(d/2)` with a `(rho/2) x (d/2)` tetris matrix.
    Complex,
    /// Hadamard sign modulation on `R^d`.
    Signs,
}

fn route(k: usize, rho: usize, d: usize) -> Result<Route> {
    if k == 1 && rho == d && d > 0 {
        return Ok(Route::Trivial);
    }
    validate_params(k, rho, d).map_err(|r| invalid_frame(k, rho, d, r))?;
    if d.is_multiple_of(2) && rho.is_multiple_of(2) {
        if let Some(span) = max_tetris_span(rho / 2, d / 2) {
            if span <= k {
                return Ok(Route::Complex);
            }
        }
    }
    if k.is_power_of_two() {
        if let Some(span) = max_tetris_span(rho, d) {
            if span <= k {
                return Ok(Route::Signs);
            }
        }
    }
    Err(invalid_frame(
        k,
        rho,
        d,
        "no construction route: modulation by k would alias overlapping tetris columns \
         (or k is not a power of two for the real sign route)",
    ))
}

/// Whether [`FusionFrame::from_params`] can build `(k, rho, d)`.
pub fn is_constructible(k: usize, rho: usize, d: usize) -> bool {
    route(k, rho, d).is_ok()
}

/// Picks `(k, rho)` with `k rho / d` as large as possible without exceeding
/// `target_redundancy`, preferring larger `rho` on ties. Falls back to `(1, d)`.
pub fn select_params(d: usize, target_redundancy: f64) -> Result<(usize, usize)> {
    if d == 0 {
        return Err(Error::invalid("frame dimension must be at least 1"));
    }
    if !(target_redundancy >= 1.0) || !target_redundancy.is_finite() {
        return Err(Error::invalid(format!(
            "redundancy must be a finite number >= 1, got {target_redundancy}"
        )));
    }
    let max_cols = (target_redundancy * d as f64 + 1e-9).floor() as usize;
    for total in (d..=max_cols.max(d)).rev() {
        let largest = if total == d { d } else { (d / 2).min(total) };
        for rho in (1..=largest).rev() {
            if total % rho == 0 && is_constructible(total / rho, rho, d) {
                return Ok((total / rho, rho));
            }
        }
    }
    Ok((1, d))
}

/// Sparse column storage for the unrotated frame `T` (`d x k rho`). Every frame vector
/// is supported on a contiguous coordinate range of length at most about `2 (d/rho + 2)`.
#[derive(Debug, Clone, PartialEq)]
pub struct SparseBasis {
    rows: usize,
    columns: Vec<SparseColumn>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SparseColumn {
    pub start: usize,
    pub values: Vec<f64>,
}

impl SparseBasis {
    fn from_dense(m: &DMatrix<f64>) -> Self {
        let columns = (0..m.ncols())
            .map(|c| {
                let col = m.column(c);
                let first = col.iter().position(|v| *v != 0.0);
                match first {
                    None => SparseColumn {
                        start: 0,
                        values: Vec::new(),
                    },
                    Some(first) => {
                        let last = col.iter().rposition(|v| *v != 0.0).unwrap();
                        SparseColumn {
                            start: first,
                            values: col.rows(first, last - first + 1).iter().copied().collect(),
                        }
                    }
                }
            })
            .collect();
        Self {
            rows: m.nrows(),
            columns,
        }
    }

    pub fn nrows(&self) -> usize {
        self.rows
    }

    pub fn ncols(&self) -> usize {
        self.columns.len()
    }

    pub fn columns(&self) -> &[SparseColumn] {
        &self.columns
    }

    pub fn nnz(&self) -> usize {
        self.columns.iter().map(|c| c.values.len()).sum()
    }

    pub fn to_dense(&self) -> DMatrix<f64> {
        let mut m = DMatrix::zeros(self.rows, self.columns.len());
        for (c, col) in self.columns.iter().enumerate() {
            for (t, v) in col.values.iter().enumerate() {
                m[(col.start + t, c)] = *v;
            }
        }
        m
    }

    /// `T^T X`; adds the multiply-add count to `ops`.
    pub fn analysis(&self, x: &DMatrix<f64>, ops: &mut u64) -> DMatrix<f64> {
        assert_eq!(x.nrows(), self.rows);
        let n = x.ncols();
        let mut out = DMatrix::zeros(self.columns.len(), n);
        for j in 0..n {
            let xj = x.column(j);
            for (c, col) in self.columns.iter().enumerate() {
                let mut acc = 0.0;
                for (t, v) in col.values.iter().enumerate() {
                    acc += v * xj[col.start + t];
                }
                out[(c, j)] = acc;
            }
        }
        *ops += (self.nnz() * n) as u64;
        out
    }

    /// `T Y`.
    pub fn synthesis(&self, y: &DMatrix<f64>, ops: &mut u64) -> DMatrix<f64> {
        assert_eq!(y.nrows(), self.columns.len());
        let n = y.ncols();
        let mut out = DMatrix::zeros(self.rows, n);
        for j in 0..n {
            for (c, col) in self.columns.iter().enumerate() {
                let coef = y[(c, j)];
                let mut oj = out.column_mut(j);
                for (t, v) in col.values.iter().enumerate() {
                    oj[col.start + t] += v * coef;
                }
            }
        }
        *ops += (self.nnz() * n) as u64;
        out
    }

    /// `M T^T` for `M` with `k rho` columns.
    pub fn right_transpose(&self, m: &DMatrix<f64>, ops: &mut u64) -> DMatrix<f64> {
        assert_eq!(m.ncols(), self.columns.len());
        let mut out = DMatrix::zeros(m.nrows(), self.rows);
        for (c, col) in self.columns.iter().enumerate() {
            let mc = m.column(c);
            for (t, v) in col.values.iter().enumerate() {
                out.column_mut(col.start + t).axpy(*v, &mc, 1.0);
            }
        }
        *ops += (self.nnz() * m.nrows()) as u64;
        out
    }
}

/// A Parseval `(k, rho, d)` fusion frame over `R^d`.
///
/// `synthesis()` is the vectorized `d x k rho` matrix `P = [P_1 ... P_k]` with the
/// weight `w = sqrt(d / (k rho))` absorbed into every `P_i`, so `P P^T = I`. Frames are
/// never serialized as matrices: `(params)` alone regenerates them bit-identically.
#[derive(Debug, Clone)]
pub struct FusionFrame {
    params: FrameParams,
    weight: f64,
    unrotated: SparseBasis,
    rotation: Option<DMatrix<f64>>,
    synthesis: DMatrix<f64>,
}

impl FusionFrame {
    pub fn from_params(params: FrameParams) -> Result<Self> {
        let FrameParams { k, rho, d, .. } = params;
        let route = route(k, rho, d)?;
        let weight = params.weight();
        let mut t = DMatrix::<f64>::zeros(d, k * rho);
        match route {
            Route::Trivial => t.fill_with_identity(),
            Route::Complex => {
                let f = spectral_tetris(rho / 2, d / 2)?;
                let rows = modulate(&f, k)?;
                for (i, b) in rows.iter().enumerate() {
                    let real = complex_matrix_to_real(&b.transpose());
                    t.columns_mut(i * rho, rho).copy_from(&(real * weight));
                }
            }
            Route::Signs => {
                let f = spectral_tetris(rho, d)?;
                let rows = modulate_signs(&f, k)?;
                for (i, b) in rows.iter().enumerate() {
                    t.columns_mut(i * rho, rho).copy_from(&(b.transpose() * weight));
                }
            }
        }
        let rotation = params.rotation.seed().map(|s| random_rotation(d, s));
        let synthesis = match &rotation {
            Some(r) => r * &t,
            None => t.clone(),
        };
        Ok(Self {
            params,
            weight,
            unrotated: SparseBasis::from_dense(&t),
            rotation,
            synthesis,
        })
    }

    pub fn params(&self) -> &FrameParams {
        &self.params
    }

    pub fn k(&self) -> usize {
        self.params.k
    }

    pub fn rho(&self) -> usize {
        self.params.rho
    }

    pub fn dim(&self) -> usize {
        self.params.d
    }

    pub fn frame_dim(&self) -> usize {
        self.params.frame_dim()
    }

    pub fn weight(&self) -> f64 {
        self.weight
    }

    pub fn redundancy(&self) -> Redundancy {
        self.params.redundancy()
    }

    /// `P`, the rotated, weighted synthesis matrix (`d x k rho`).
    pub fn synthesis(&self) -> &DMatrix<f64> {
        &self.synthesis
    }

    pub fn rotation_matrix(&self) -> Option<&DMatrix<f64>> {
        self.rotation.as_ref()
    }

    /// Weighted frame before rotation, in sparse form.
    pub fn unrotated(&self) -> &SparseBasis {
        &self.unrotated
    }

    /// `w P_i`: the weighted, rotated basis of subspace `i` (`d x rho`).
    pub fn basis(&self, i: usize) -> DMatrix<f64> {
        self.synthesis.columns(i * self.params.rho, self.params.rho).into_owned()
    }

    /// Orthonormal basis of subspace `i` before weighting and rotation.
    pub fn unweighted_basis(&self, i: usize) -> DMatrix<f64> {
        let rho = self.params.rho;
        self.unrotated.to_dense().columns(i * rho, rho) / self.weight
    }

    pub fn descriptor(&self) -> FrameDescriptor {
        FrameDescriptor::from_params(&self.params)
    }
}

/// Builds the Parseval frame for `d` with redundancy closest to (not above) the target,
/// rotated by `seed`.
pub fn build_fusion_frame(d: usize, target_redundancy: f64, seed: u64) -> Result<FusionFrame> {
    let (k, rho) = select_params(d, target_redundancy)?;
    FusionFrame::from_params(FrameParams::new(k, rho, d, Rotation::Seeded(seed)))
}

/// Text manifest for a frame. Matrices are never stored; they are regenerated from
/// these fields.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FrameDescriptor {
    pub k: usize,
    pub rho: usize,
    pub d: usize,
    pub redundancy: String,
    pub weight: f64,
    pub rotation_seed: Option<u64>,
    pub prng_name: String,
    pub construction_version: u16,
}

impl FrameDescriptor {
    pub fn from_params(p: &FrameParams) -> Self {
        Self {
            k: p.k,
            rho: p.rho,
            d: p.d,
            redundancy: p.redundancy().to_string(),
            weight: p.weight(),
            rotation_seed: p.rotation.seed(),
            prng_name: PRNG_NAME.to_string(),
            construction_version: CONSTRUCTION_VERSION,
        }
    }

    pub fn to_params(&self) -> Result<FrameParams> {
        if self.prng_name != PRNG_NAME || self.construction_version != CONSTRUCTION_VERSION {
            return Err(Error::invalid(format!(
                "frame descriptor was written by {} v{}, this build regenerates {} v{}",
                self.prng_name, self.construction_version, PRNG_NAME, CONSTRUCTION_VERSION
            )));
        }
        let rotation = match self.rotation_seed {
            Some(s) => Rotation::Seeded(s),
            None => Rotation::Identity,
        };
        Ok(FrameParams::new(self.k, self.rho, self.d, rotation))
    }
}
