//! Symplectic linear algebra in the quadrature representation.
//!
//! Quadratures are ordered in blocks, all `x` first and then all `p`, and the
//! annihilation operator is `a = (x + i p) / 2`, so the vacuum has unit
//! quadrature variance. A mode unitary `U = X + iY` acts on quadratures as
//! `[[X, -Y], [Y, X]]`.

use nalgebra::{DMatrix, DVector};
use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::{
    frobenius, frobenius_c, from_blocks, imag_part, nearest_unitary, omega, passive_block,
    real_part, sorted_symmetric_eigen,
};

/// Unitarity tolerance on `‖U U† - I‖_F`.
pub const UNITARY_TOL: f64 = 1e-10;
/// Symplecticity tolerance on `‖S Ω Sᵀ - Ω‖_F`.
pub const SYMPLECTIC_TOL: f64 = 1e-10;
/// Default bound on `‖𝒴‖_F` below which an operation counts as trivial.
pub const DEFAULT_TRIVIAL_TOL: f64 = 1e-9;

const RECOMPOSE_TOL: f64 = 1e-8;

/// An `N × N` unitary acting on annihilation operators.
#[derive(Debug, Clone, PartialEq)]
pub struct ModeUnitary {
    entries: DMatrix<Complex64>,
}

impl ModeUnitary {
    pub fn new(entries: DMatrix<Complex64>) -> Result<Self> {
        if !entries.is_square() || entries.nrows() == 0 {
            return Err(Error::DimensionMismatch {
                what: "mode unitary (square)",
                expected: entries.nrows(),
                found: entries.ncols(),
            });
        }
        let residual = unitarity_residual(&entries);
        if residual > UNITARY_TOL {
            return Err(Error::NonUnitary { residual });
        }
        Ok(Self { entries })
    }

    pub fn from_parts(re: &DMatrix<f64>, im: &DMatrix<f64>) -> Result<Self> {
        if re.shape() != im.shape() {
            return Err(Error::DimensionMismatch {
                what: "imaginary part rows",
                expected: re.nrows(),
                found: im.nrows(),
            });
        }
        Self::new(re.zip_map(im, Complex64::new))
    }

    /// Projects an almost-unitary matrix onto the nearest unitary and returns
    /// the Frobenius distance moved.
    pub fn nearest(entries: &DMatrix<Complex64>) -> Result<(Self, f64)> {
        if !entries.is_square() || entries.nrows() == 0 {
            return Err(Error::DimensionMismatch {
                what: "mode unitary (square)",
                expected: entries.nrows(),
                found: entries.ncols(),
            });
        }
        let projected = nearest_unitary(entries);
        let moved = frobenius_c(&(entries - &projected));
        Ok((Self::new(projected)?, moved))
    }

    pub fn identity(n: usize) -> Self {
        Self {
            entries: DMatrix::identity(n, n),
        }
    }

    /// `diag(e^{iφ₁}, …, e^{iφ_N})`.
    pub fn phases(phi: &[f64]) -> Self {
        let diag = DVector::from_iterator(phi.len(), phi.iter().map(|&p| Complex64::cis(p)));
        Self {
            entries: DMatrix::from_diagonal(&diag),
        }
    }

    /// Real orthogonal matrices are unitaries too.
    pub fn from_orthogonal(o: &DMatrix<f64>) -> Result<Self> {
        Self::new(o.map(|v| Complex64::new(v, 0.0)))
    }

    /// Wraps a product of unitaries without re-checking.
    pub(crate) fn from_product(entries: DMatrix<Complex64>) -> Self {
        Self { entries }
    }

    pub fn dim(&self) -> usize {
        self.entries.nrows()
    }

    pub fn matrix(&self) -> &DMatrix<Complex64> {
        &self.entries
    }

    pub fn re(&self) -> DMatrix<f64> {
        real_part(&self.entries)
    }

    pub fn im(&self) -> DMatrix<f64> {
        imag_part(&self.entries)
    }

    pub fn compose(&self, rhs: &ModeUnitary) -> ModeUnitary {
        Self::from_product(&self.entries * &rhs.entries)
    }

    pub fn residual(&self) -> f64 {
        unitarity_residual(&self.entries)
    }
}

pub fn unitarity_residual(m: &DMatrix<Complex64>) -> f64 {
    let n = m.nrows();
    frobenius_c(&(m * m.adjoint() - DMatrix::<Complex64>::identity(n, n)))
}

/// A `2n × 2n` real symplectic matrix in `(x⃗, p⃗)` block form.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "SymplecticRows", into = "SymplecticRows")]
pub struct QuadSymplectic {
    n: usize,
    matrix: DMatrix<f64>,
}

impl QuadSymplectic {
    pub fn new(matrix: DMatrix<f64>) -> Result<Self> {
        Self::with_tolerance(matrix, SYMPLECTIC_TOL)
    }

    pub fn with_tolerance(matrix: DMatrix<f64>, tol: f64) -> Result<Self> {
        if !is_symplectic(&matrix, tol)? {
            return Err(Error::NotSymplectic {
                residual: symplectic_residual(&matrix),
            });
        }
        Ok(Self {
            n: matrix.nrows() / 2,
            matrix,
        })
    }

    pub fn from_blocks(
        a: &DMatrix<f64>,
        b: &DMatrix<f64>,
        c: &DMatrix<f64>,
        d: &DMatrix<f64>,
    ) -> Result<Self> {
        let n = a.nrows();
        for m in [a, b, c, d] {
            if m.nrows() != n || m.ncols() != n {
                return Err(Error::DimensionMismatch {
                    what: "symplectic block",
                    expected: n,
                    found: m.ncols(),
                });
            }
        }
        Self::new(from_blocks(a, b, c, d))
    }

    pub fn identity(n: usize) -> Self {
        Self {
            n,
            matrix: DMatrix::identity(2 * n, 2 * n),
        }
    }

    /// Single-mode Fourier transform `x → -p, p → x`.
    pub fn fourier() -> Self {
        Self {
            n: 1,
            matrix: DMatrix::from_row_slice(2, 2, &[0.0, -1.0, 1.0, 0.0]),
        }
    }

    /// Controlled-phase gate `[[I, 0], [V, I]]` for a symmetric weight matrix `V`.
    pub fn controlled_z(v: &DMatrix<f64>) -> Result<Self> {
        let n = v.nrows();
        let eye = DMatrix::identity(n, n);
        Self::from_blocks(&eye, &DMatrix::zeros(n, n), v, &eye)
    }

    /// Local squeezer `diag(R⁻¹, R)`.
    pub fn squeezer(gains: &[f64]) -> Result<Self> {
        if gains.iter().any(|&g| g <= 0.0 || !g.is_finite()) {
            return Err(Error::InvalidFactor("squeezing gains must be positive".into()));
        }
        let n = gains.len();
        let diag = DVector::from_iterator(
            2 * n,
            gains.iter().map(|g| 1.0 / g).chain(gains.iter().copied()),
        );
        Ok(Self {
            n,
            matrix: DMatrix::from_diagonal(&diag),
        })
    }

    pub fn n_modes(&self) -> usize {
        self.n
    }

    pub fn matrix(&self) -> &DMatrix<f64> {
        &self.matrix
    }

    fn block(&self, r: usize, c: usize) -> DMatrix<f64> {
        self.matrix
            .view((r * self.n, c * self.n), (self.n, self.n))
            .into_owned()
    }

    pub fn a(&self) -> DMatrix<f64> {
        self.block(0, 0)
    }

    pub fn b(&self) -> DMatrix<f64> {
        self.block(0, 1)
    }

    pub fn c(&self) -> DMatrix<f64> {
        self.block(1, 0)
    }

    pub fn d(&self) -> DMatrix<f64> {
        self.block(1, 1)
    }

    pub fn compose(&self, rhs: &QuadSymplectic) -> QuadSymplectic {
        QuadSymplectic {
            n: self.n,
            matrix: &self.matrix * &rhs.matrix,
        }
    }
}

/// Row-major serialized form of a symplectic matrix.
#[derive(Serialize, Deserialize)]
struct SymplecticRows {
    rows: Vec<Vec<f64>>,
}

impl TryFrom<SymplecticRows> for QuadSymplectic {
    type Error = Error;

    fn try_from(value: SymplecticRows) -> Result<Self> {
        let m = crate::io::matrix_from_rows(&value.rows)?;
        QuadSymplectic::new(m)
    }
}

impl From<QuadSymplectic> for SymplecticRows {
    fn from(value: QuadSymplectic) -> Self {
        SymplecticRows {
            rows: crate::io::matrix_to_rows(&value.matrix),
        }
    }
}

pub fn symplectic_residual(s: &DMatrix<f64>) -> f64 {
    let w = omega(s.nrows() / 2);
    frobenius(&(s * &w * s.transpose() - w))
}

/// `true` iff `‖S Ω Sᵀ - Ω‖_F ≤ tol`.
pub fn is_symplectic(s: &DMatrix<f64>, tol: f64) -> Result<bool> {
    if !s.is_square() || !s.nrows().is_multiple_of(2) || s.nrows() == 0 {
        return Err(Error::DimensionMismatch {
            what: "symplectic matrix (square, even)",
            expected: s.nrows() + s.nrows() % 2,
            found: s.ncols(),
        });
    }
    Ok(symplectic_residual(s) <= tol)
}

/// `U = X + iY ↦ [[X, -Y], [Y, X]]`.
pub fn unitary_to_quad_symplectic(u: &ModeUnitary) -> QuadSymplectic {
    QuadSymplectic {
        n: u.dim(),
        matrix: passive_block(&u.re(), &u.im()),
    }
}

/// The real and imaginary parts of a mode unitary.
#[derive(Debug, Clone, PartialEq)]
pub struct PassivePair {
    pub x: DMatrix<f64>,
    pub y: DMatrix<f64>,
}

impl PassivePair {
    pub fn new(x: DMatrix<f64>, y: DMatrix<f64>) -> Result<Self> {
        let pair = Self { x, y };
        let residual = pair.residual();
        if residual > UNITARY_TOL {
            return Err(Error::NonUnitary { residual });
        }
        Ok(pair)
    }

    pub fn from_orthogonal(o: DMatrix<f64>) -> Result<Self> {
        let n = o.nrows();
        Self::new(o, DMatrix::zeros(n, n))
    }

    /// Largest violation of `XXᵀ + YYᵀ = I` and `XYᵀ = YXᵀ`.
    pub fn residual(&self) -> f64 {
        let n = self.x.nrows();
        let norm = &self.x * self.x.transpose() + &self.y * self.y.transpose()
            - DMatrix::<f64>::identity(n, n);
        let sym = &self.x * self.y.transpose() - &self.y * self.x.transpose();
        frobenius(&norm).max(frobenius(&sym))
    }

    pub fn matrix(&self) -> DMatrix<f64> {
        passive_block(&self.x, &self.y)
    }

    pub fn unitary(&self) -> DMatrix<Complex64> {
        self.x.zip_map(&self.y, Complex64::new)
    }
}

/// `S = [[𝒳, -𝒴], [𝒴, 𝒳]] · diag(K^{-1/2}, K^{1/2}) · [[𝒳′, -𝒴′], [𝒴′, 𝒳′]]`.
///
/// `squeeze` holds the diagonal of `K^{1/2}`, so the `x` quadrature of mode
/// `k` is scaled by `1 / squeeze[k]` and `p` by `squeeze[k]`.
#[derive(Debug, Clone)]
pub struct BlochMessiahFactors {
    pub left: PassivePair,
    pub squeeze: DVector<f64>,
    pub right: PassivePair,
}

impl BlochMessiahFactors {
    pub fn recompose(&self) -> DMatrix<f64> {
        let middle = DMatrix::from_diagonal(&DVector::from_iterator(
            2 * self.squeeze.len(),
            self.squeeze
                .iter()
                .map(|s| 1.0 / s)
                .chain(self.squeeze.iter().copied()),
        ));
        self.left.matrix() * middle * self.right.matrix()
    }

    /// Diagonal of `K^{-1/2}`.
    pub fn anti_squeeze(&self) -> DVector<f64> {
        self.squeeze.map(|s| 1.0 / s)
    }

    /// All `2n` singular values of the decomposed matrix, ascending.
    pub fn singular_values(&self) -> Vec<f64> {
        let mut all: Vec<f64> = self
            .squeeze
            .iter()
            .flat_map(|&s| [s, 1.0 / s])
            .collect();
        all.sort_by(f64::total_cmp);
        all
    }
}

/// Bloch–Messiah decomposition via a Takagi factorization of the symmetric
/// part of `S Sᵀ`.
///
/// With `G = S Sᵀ` the complex symmetric matrix
/// `M = (Gxx - Gpp)/2 + i (Gxp + Gpx)/2` factors as `W Λ Wᵀ` with `W` the left
/// mode unitary and `Λ = (K⁻¹ - K)/2`. Each degenerate eigenspace of the real
/// embedding of `M` first tries a purely real basis (which yields `𝒴 = 0`
/// whenever the operation admits one) and otherwise takes the `K ≤ 1`
/// branch. Column signs are fixed so the first nonzero entry is positive.
pub fn bloch_messiah(s: &QuadSymplectic) -> Result<BlochMessiahFactors> {
    let n = s.n_modes();
    let sm = s.matrix();
    let g = sm * sm.transpose();
    let gxx = g.view((0, 0), (n, n));
    let gxp = g.view((0, n), (n, n));
    let gpx = g.view((n, 0), (n, n));
    let gpp = g.view((n, n), (n, n));
    let mr = (gxx - gpp) * 0.5;
    let mi = (gxp + gpx) * 0.5;
    let embedding = from_blocks(&mr, &mi, &mi, &(-&mr));
    let (values, vectors) = sorted_symmetric_eigen(&embedding);

    let scale = values.iter().fold(1.0_f64, |acc, v| acc.max(v.abs()));
    let tol = 1e-8 * scale;

    // Group ascending eigenvalues into clusters of (numerically) equal value.
    let mut clusters: Vec<(f64, Vec<usize>)> = Vec::new();
    for (i, &v) in values.iter().enumerate() {
        match clusters.last_mut() {
            Some((_, idx)) if (v - values[idx[idx.len() - 1]]).abs() <= tol => idx.push(i),
            _ => clusters.push((v, vec![i])),
        }
    }
    for c in clusters.iter_mut() {
        c.0 = c.1.iter().map(|&i| values[i]).sum::<f64>() / c.1.len() as f64;
    }

    let mut picks: Vec<(DVector<f64>, f64)> = Vec::with_capacity(n);
    let real_axes: Vec<DVector<f64>> = (0..n).map(|k| unit(2 * n, k)).collect();
    let all_axes: Vec<DVector<f64>> = (0..2 * n).map(|k| unit(2 * n, k)).collect();

    for (mu, idx) in &clusters {
        let basis = columns(&vectors, idx);
        if mu.abs() <= tol {
            if idx.len() % 2 != 0 {
                return Err(Error::NumericalBreakdown(
                    "null space of the Takagi embedding has odd dimension".into(),
                ));
            }
            let sides = [Side {
                basis: basis.clone(),
                lambda: 0.0,
                partner: 0,
            }];
            picks.extend(greedy_pick(idx.len() / 2, &all_axes, &sides));
        } else if *mu > 0.0 {
            let d = idx.len();
            let mirrored = apply_j(&basis);
            let both = [
                Side {
                    basis: basis.clone(),
                    lambda: *mu,
                    partner: 1,
                },
                Side {
                    basis: mirrored,
                    lambda: -*mu,
                    partner: 0,
                },
            ];
            let real_try = greedy_pick(d, &real_axes, &both);
            let is_real = real_try
                .iter()
                .all(|(z, _)| z.rows(n, n).norm() <= 1e-8);
            if is_real {
                picks.extend(real_try);
            } else {
                let positive = [Side {
                    basis,
                    lambda: *mu,
                    partner: 0,
                }];
                picks.extend(greedy_pick_unpaired(d, &real_axes, &all_axes, &positive[0]));
            }
        }
    }

    if picks.len() != n {
        return Err(Error::NumericalBreakdown(format!(
            "expected {n} Takagi vectors, paired {}",
            picks.len()
        )));
    }

    for (z, _) in picks.iter_mut() {
        if let Some(first) = z.iter().copied().find(|v| v.abs() > 1e-10) {
            if first < 0.0 {
                *z = -z.clone();
            }
        }
    }

    let mut entries: Vec<(DVector<f64>, f64)> = picks
        .into_iter()
        .map(|(z, lambda)| {
            let k = (lambda * lambda + 1.0).sqrt() - lambda;
            (z, k.sqrt())
        })
        .collect();
    // Stable sort keeps the pick order among equal squeeze values.
    entries.sort_by(|a, b| b.1.total_cmp(&a.1));

    let mut x = DMatrix::zeros(n, n);
    let mut y = DMatrix::zeros(n, n);
    let mut squeeze = DVector::zeros(n);
    for (k, (z, sq)) in entries.iter().enumerate() {
        x.set_column(k, &z.rows(0, n));
        y.set_column(k, &z.rows(n, n));
        squeeze[k] = *sq;
    }
    let left = PassivePair { x, y };

    let inv_middle = DMatrix::from_diagonal(&DVector::from_iterator(
        2 * n,
        squeeze
            .iter()
            .copied()
            .chain(squeeze.iter().map(|s| 1.0 / s)),
    ));
    let right_full = inv_middle * left.matrix().transpose() * sm;
    let xr = right_full.view((0, 0), (n, n)).into_owned();
    let yr = right_full.view((n, 0), (n, n)).into_owned();
    let structure = frobenius(&(&right_full - passive_block(&xr, &yr)));
    if structure > 1e-6 * scale.sqrt().max(1.0) {
        return Err(Error::NumericalBreakdown(format!(
            "right factor is not passive (residual {structure:.3e})"
        )));
    }
    let factors = BlochMessiahFactors {
        left,
        squeeze,
        right: PassivePair { x: xr, y: yr },
    };
    let err = frobenius(&(factors.recompose() - sm));
    if err > RECOMPOSE_TOL * frobenius(sm).max(1.0) {
        return Err(Error::NumericalBreakdown(format!(
            "recomposition error {err:.3e}"
        )));
    }
    Ok(factors)
}

struct Side {
    basis: DMatrix<f64>,
    lambda: f64,
    partner: usize,
}

fn unit(len: usize, k: usize) -> DVector<f64> {
    let mut v = DVector::zeros(len);
    v[k] = 1.0;
    v
}

fn columns(m: &DMatrix<f64>, idx: &[usize]) -> DMatrix<f64> {
    let mut out = DMatrix::zeros(m.nrows(), idx.len());
    for (dst, &src) in idx.iter().enumerate() {
        out.set_column(dst, &m.column(src));
    }
    out
}

/// `(u; v) ↦ (-v; u)`, i.e. multiplication of `u + iv` by `i`.
fn j_vec(z: &DVector<f64>) -> DVector<f64> {
    let n = z.len() / 2;
    let mut out = DVector::zeros(z.len());
    for k in 0..n {
        out[k] = -z[n + k];
        out[n + k] = z[k];
    }
    out
}

fn apply_j(basis: &DMatrix<f64>) -> DMatrix<f64> {
    let mut out = DMatrix::zeros(basis.nrows(), basis.ncols());
    for c in 0..basis.ncols() {
        out.set_column(c, &j_vec(&basis.column(c).into_owned()));
    }
    out
}

fn project_out(v: &mut DVector<f64>, occupied: &[DVector<f64>]) {
    for _ in 0..2 {
        for o in occupied {
            let c = o.dot(v);
            v.axpy(-c, o, 1.0);
        }
    }
}

/// Greedy complex Gram–Schmidt: repeatedly project every candidate on every
/// side, keep the largest, and block both it and its `J` image.
fn greedy_pick(count: usize, candidates: &[DVector<f64>], sides: &[Side]) -> Vec<(DVector<f64>, f64)> {
    let mut occupied: Vec<Vec<DVector<f64>>> = vec![Vec::new(); sides.len()];
    let mut out = Vec::with_capacity(count);
    for _ in 0..count {
        let mut best: Option<(f64, usize, DVector<f64>)> = None;
        for cand in candidates {
            for (s, side) in sides.iter().enumerate() {
                let mut proj = &side.basis * (side.basis.transpose() * cand);
                project_out(&mut proj, &occupied[s]);
                let norm = proj.norm();
                if best.as_ref().is_none_or(|(b, _, _)| norm > *b + 1e-12) {
                    best = Some((norm, s, proj));
                }
            }
        }
        let Some((norm, s, proj)) = best else { break };
        if norm <= 1e-12 {
            break;
        }
        let z = proj / norm;
        let jz = j_vec(&z);
        occupied[s].push(z.clone());
        occupied[sides[s].partner].push(jz);
        out.push((z, sides[s].lambda));
    }
    out
}

/// Like [`greedy_pick`] on a single side, preferring `primary` candidates
/// while they still have a well-conditioned projection.
fn greedy_pick_unpaired(
    count: usize,
    primary: &[DVector<f64>],
    fallback: &[DVector<f64>],
    side: &Side,
) -> Vec<(DVector<f64>, f64)> {
    let mut occupied: Vec<DVector<f64>> = Vec::new();
    let mut out = Vec::with_capacity(count);
    let best_of = |candidates: &[DVector<f64>], occupied: &[DVector<f64>]| {
        let mut best: Option<(f64, DVector<f64>)> = None;
        for cand in candidates {
            let mut proj = &side.basis * (side.basis.transpose() * cand);
            project_out(&mut proj, occupied);
            let norm = proj.norm();
            if best.as_ref().is_none_or(|(b, _)| norm > *b + 1e-12) {
                best = Some((norm, proj));
            }
        }
        best
    };
    for _ in 0..count {
        let best = match best_of(primary, &occupied) {
            Some((norm, proj)) if norm > 1e-3 => Some((norm, proj)),
            _ => best_of(fallback, &occupied),
        };
        let Some((norm, proj)) = best else { break };
        if norm <= 1e-12 {
            break;
        }
        let z = proj / norm;
        occupied.push(z.clone());
        out.push((z, side.lambda));
    }
    out
}

/// Realization `diag(O, O) · diag(R⁻¹, R) · [[X′, -Y′], [Y′, X′]]` of a
/// trivially implementable operation.
#[derive(Debug, Clone)]
pub struct TrivialRealization {
    pub o: DMatrix<f64>,
    pub r: DVector<f64>,
    pub right: PassivePair,
}

impl TrivialRealization {
    pub fn recompose(&self) -> DMatrix<f64> {
        let n = self.o.nrows();
        let zero = DMatrix::zeros(n, n);
        let rot = from_blocks(&self.o, &zero, &zero, &self.o);
        let gain = DMatrix::from_diagonal(&DVector::from_iterator(
            2 * n,
            self.r.iter().map(|r| 1.0 / r).chain(self.r.iter().copied()),
        ));
        rot * gain * self.right.matrix()
    }
}

#[derive(Debug, Clone)]
pub enum Triviality {
    Trivial(TrivialRealization),
    RequiresAncillas { left_y_norm: f64 },
}

impl Triviality {
    pub fn is_trivial(&self) -> bool {
        matches!(self, Triviality::Trivial(_))
    }
}

/// Decides whether `S` is reachable with passive optics, homodyne detection and
/// real post-processing alone, i.e. whether its Bloch–Messiah left factor has
/// `‖𝒴‖_F ≤ tol`.
pub fn classify_trivial(s: &QuadSymplectic, tol: f64) -> Result<Triviality> {
    let bm = bloch_messiah(s)?;
    let y_norm = frobenius(&bm.left.y);
    if y_norm > tol {
        return Ok(Triviality::RequiresAncillas { left_y_norm: y_norm });
    }
    let real = TrivialRealization {
        o: bm.left.x,
        r: bm.squeeze,
        right: bm.right,
    };
    let err = frobenius(&(real.recompose() - s.matrix()));
    if err > RECOMPOSE_TOL * frobenius(s.matrix()).max(1.0) {
        return Err(Error::NumericalBreakdown(format!(
            "trivial realization recomposition error {err:.3e}"
        )));
    }
    Ok(Triviality::Trivial(real))
}

/// A digital post-processing factor acting on measured `p` records.
#[derive(Debug, Clone)]
pub enum PostFactor {
    Orthogonal(DMatrix<f64>),
    Gain(DVector<f64>),
}

/// `O · R · O′` with `O`, `O′` orthogonal and `R` positive diagonal.
#[derive(Debug, Clone)]
pub struct NormalizedPostProcessing {
    pub o: DMatrix<f64>,
    pub r: DVector<f64>,
    pub o_prime: DMatrix<f64>,
}

impl NormalizedPostProcessing {
    pub fn product(&self) -> DMatrix<f64> {
        &self.o * DMatrix::from_diagonal(&self.r) * &self.o_prime
    }
}

/// Collapses any product of orthogonal and gain factors into `O · R · O′`.
pub fn normalize_postprocessing(factors: &[PostFactor]) -> Result<NormalizedPostProcessing> {
    let dim = match factors.first() {
        Some(PostFactor::Orthogonal(o)) => o.nrows(),
        Some(PostFactor::Gain(r)) => r.len(),
        None => return Err(Error::InvalidFactor("no factors given".into())),
    };
    let mut product = DMatrix::<f64>::identity(dim, dim);
    for (i, f) in factors.iter().enumerate() {
        let m = match f {
            PostFactor::Orthogonal(o) => {
                if o.nrows() != dim || o.ncols() != dim {
                    return Err(Error::InvalidFactor(format!("factor {i} has wrong shape")));
                }
                let res = frobenius(&(o * o.transpose() - DMatrix::<f64>::identity(dim, dim)));
                if res > UNITARY_TOL {
                    return Err(Error::InvalidFactor(format!(
                        "factor {i} is not orthogonal (residual {res:.3e})"
                    )));
                }
                o.clone()
            }
            PostFactor::Gain(r) => {
                if r.len() != dim {
                    return Err(Error::InvalidFactor(format!("factor {i} has wrong length")));
                }
                if r.iter().any(|&g| g <= 0.0 || !g.is_finite()) {
                    return Err(Error::InvalidFactor(format!(
                        "factor {i} has a non-positive gain"
                    )));
                }
                DMatrix::from_diagonal(r)
            }
        };
        product *= m;
    }
    let eye = DMatrix::<f64>::identity(dim, dim);
    if frobenius(&(&product * product.transpose() - &eye)) <= UNITARY_TOL {
        return Ok(NormalizedPostProcessing {
            o: product,
            r: DVector::from_element(dim, 1.0),
            o_prime: eye,
        });
    }
    let svd = product.svd(true, true);
    Ok(NormalizedPostProcessing {
        o: svd.u.expect("u requested"),
        r: svd.singular_values,
        o_prime: svd.v_t.expect("v_t requested"),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::random::{haar_unitary, random_orthogonal, random_symplectic};
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn cz_pair() -> QuadSymplectic {
        let v = DMatrix::from_row_slice(2, 2, &[0.0, 1.0, 1.0, 0.0]);
        QuadSymplectic::controlled_z(&v).unwrap()
    }

    #[test]
    fn identity_unitary_maps_to_identity() {
        let s = unitary_to_quad_symplectic(&ModeUnitary::identity(2));
        assert_eq!(s.matrix(), &DMatrix::<f64>::identity(4, 4));
    }

    #[test]
    fn quarter_phase_is_fourier() {
        let u = ModeUnitary::phases(&[std::f64::consts::FRAC_PI_2]);
        let s = unitary_to_quad_symplectic(&u);
        assert!(frobenius(&(s.matrix() - QuadSymplectic::fourier().matrix())) < 1e-15);
    }

    #[test]
    fn haar_unitaries_are_symplectic_orthogonal() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        for _ in 0..20 {
            let u = haar_unitary(4, &mut rng);
            let s = unitary_to_quad_symplectic(&u);
            assert!(is_symplectic(s.matrix(), 1e-10).unwrap());
            let pair = PassivePair {
                x: u.re(),
                y: u.im(),
            };
            assert!(pair.residual() < 1e-10);
        }
    }

    #[test]
    fn non_unitary_is_rejected() {
        let m = DMatrix::from_element(2, 2, Complex64::new(1.0, 0.0));
        assert!(matches!(ModeUnitary::new(m), Err(Error::NonUnitary { .. })));
    }

    #[test]
    fn symplectic_checks() {
        assert!(is_symplectic(&DMatrix::identity(2, 2), 1e-12).unwrap());
        assert!(is_symplectic(cz_pair().matrix(), 1e-12).unwrap());
        let shear = DMatrix::from_row_slice(2, 2, &[2.0, 2.0, 0.0, 2.0]);
        assert!(!is_symplectic(&shear, 1e-12).unwrap());
        assert!(matches!(
            is_symplectic(&DMatrix::identity(3, 3), 1e-12),
            Err(Error::DimensionMismatch { .. })
        ));
    }

    #[test]
    fn bloch_messiah_of_identity() {
        let bm = bloch_messiah(&QuadSymplectic::identity(3)).unwrap();
        assert!(bm.squeeze.iter().all(|&s| (s - 1.0).abs() < 1e-12));
        assert!(frobenius(&(bm.left.x.clone() - DMatrix::identity(3, 3))) < 1e-12);
        assert!(frobenius(&bm.left.y) < 1e-12);
        assert!(frobenius(&(bm.right.x.clone() - DMatrix::identity(3, 3))) < 1e-12);
    }

    #[test]
    fn bloch_messiah_of_cz_matches_closed_form() {
        let bm = bloch_messiah(&cz_pair()).unwrap();
        let r5 = 5f64.sqrt();
        let x = (1.0 + r5) / (2.0 * (5.0 + 2.0 * r5).sqrt());
        let y = (3.0 + r5) / (2.0 * (5.0 + 2.0 * r5).sqrt());
        let k = 0.5 * (1.0 + r5);
        let want_x = DMatrix::from_row_slice(2, 2, &[x, 0.0, 0.0, x]);
        let want_y = DMatrix::from_row_slice(2, 2, &[0.0, y, y, 0.0]);
        assert!(frobenius(&(&bm.left.x - want_x)) < 1e-10, "{}", bm.left.x);
        assert!(frobenius(&(&bm.left.y - want_y)) < 1e-10, "{}", bm.left.y);
        for a in bm.anti_squeeze().iter() {
            assert!((a - k).abs() < 1e-10);
        }
    }

    #[test]
    fn construct_then_decompose_recovers_spectrum() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        for n in 1..=5 {
            let (s, gains) = random_symplectic(n, 1.0, &mut rng);
            let bm = bloch_messiah(&s).unwrap();
            let mut want: Vec<f64> = gains.iter().flat_map(|&g| [g, 1.0 / g]).collect();
            want.sort_by(f64::total_cmp);
            for (a, b) in bm.singular_values().iter().zip(&want) {
                assert!((a - b).abs() < 1e-8, "{a} vs {b}");
            }
            assert!(frobenius(&(bm.recompose() - s.matrix())) < 1e-8);
            assert!(bm.left.residual() < 1e-10 && bm.right.residual() < 1e-9);
        }
    }

    #[test]
    fn fourier_and_squeezer_are_trivial() {
        assert!(classify_trivial(&QuadSymplectic::fourier(), DEFAULT_TRIVIAL_TOL)
            .unwrap()
            .is_trivial());
        let sq = QuadSymplectic::squeezer(&[2.0]).unwrap();
        match classify_trivial(&sq, DEFAULT_TRIVIAL_TOL).unwrap() {
            Triviality::Trivial(t) => {
                assert!((t.o[(0, 0)].abs() - 1.0).abs() < 1e-12);
                assert!((t.r[0] - 2.0).abs() < 1e-12);
                assert!(frobenius(&(t.recompose() - sq.matrix())) < 1e-12);
            }
            other => panic!("expected trivial, got {other:?}"),
        }
    }

    #[test]
    fn cz_requires_ancillas() {
        let c = classify_trivial(&cz_pair(), DEFAULT_TRIVIAL_TOL).unwrap();
        assert!(!c.is_trivial());
    }

    #[test]
    fn postprocessing_single_orthogonal() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let o = random_orthogonal(3, &mut rng);
        let p = normalize_postprocessing(&[PostFactor::Orthogonal(o.clone())]).unwrap();
        assert!(frobenius(&(p.o - o)) < 1e-12);
        assert!(p.r.iter().all(|&r| (r - 1.0).abs() < 1e-12));
        assert!(frobenius(&(p.o_prime - DMatrix::<f64>::identity(3, 3))) < 1e-12);
    }

    #[test]
    fn postprocessing_mixed_product() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let r1 = DVector::from_vec(vec![0.5, 1.5, 2.0]);
        let r2 = DVector::from_vec(vec![3.0, 0.2, 1.1]);
        let o1 = random_orthogonal(3, &mut rng);
        let direct = DMatrix::from_diagonal(&r1) * &o1 * DMatrix::from_diagonal(&r2);
        let p = normalize_postprocessing(&[
            PostFactor::Gain(r1),
            PostFactor::Orthogonal(o1),
            PostFactor::Gain(r2),
        ])
        .unwrap();
        assert!(frobenius(&(p.product() - direct)) < 1e-10);
        assert!(p.r.iter().all(|&r| r > 0.0));
    }

    #[test]
    fn postprocessing_orthogonal_closure() {
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let o1 = random_orthogonal(4, &mut rng);
        let o2 = random_orthogonal(4, &mut rng);
        let p = normalize_postprocessing(&[PostFactor::Orthogonal(o1), PostFactor::Orthogonal(o2)])
            .unwrap();
        assert!(p.r.iter().all(|&r| (r - 1.0).abs() < 1e-12));
    }

    #[test]
    fn postprocessing_rejects_bad_factors() {
        let bad = DMatrix::from_row_slice(2, 2, &[1.0, 1.0, 0.0, 1.0]);
        assert!(matches!(
            normalize_postprocessing(&[PostFactor::Orthogonal(bad)]),
            Err(Error::InvalidFactor(_))
        ));
        assert!(matches!(
            normalize_postprocessing(&[PostFactor::Gain(DVector::from_vec(vec![1.0, -1.0]))]),
            Err(Error::InvalidFactor(_))
        ));
    }
}
