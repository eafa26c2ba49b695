//! Independent checks of the elimination: Gaussian covariance calculus and
//! Monte-Carlo regression on sampled quadratures.

use nalgebra::{Cholesky, DMatrix, DVector};
use num_rational::BigRational;
use num_traits::{One, ToPrimitive, Zero};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::linalg::{from_blocks, omega, pseudo_inverse, select, sorted_symmetric_eigen};
use crate::mbqc::{ancilla_slots, MbqcResult, SqueezingSpec};
use crate::symplectic::{unitary_to_quad_symplectic, ModeUnitary, QuadSymplectic};

pub const UNCERTAINTY_TOL: f64 = 1e-8;
pub const MIN_SAMPLES: usize = 10_000;
/// Variance given to anti-squeezed quadratures when sampling; large enough
/// that the regression sees them as unconstrained.
pub const ANTI_SQUEEZED_VARIANCE: f64 = 1e8;
const CHUNK: usize = 4096;

/// Mean and covariance in `(x⃗, p⃗)` ordering, vacuum covariance `I`.
#[derive(Debug, Clone, PartialEq)]
pub struct GaussianState {
    mean: DVector<f64>,
    cov: DMatrix<f64>,
}

impl GaussianState {
    pub fn new(mean: DVector<f64>, cov: DMatrix<f64>) -> Result<Self> {
        let dim = cov.nrows();
        if !cov.is_square() || !dim.is_multiple_of(2) || mean.len() != dim {
            return Err(Error::DimensionMismatch {
                what: "Gaussian state",
                expected: dim,
                found: mean.len(),
            });
        }
        let asym = (&cov - cov.transpose()).amax();
        if asym > UNCERTAINTY_TOL {
            return Err(Error::Validation(format!(
                "covariance is not symmetric (max deviation {asym:.3e})"
            )));
        }
        let state = Self { mean, cov };
        let min = state.uncertainty_margin();
        if min < -UNCERTAINTY_TOL {
            return Err(Error::Validation(format!(
                "covariance violates the uncertainty relation (eigenvalue {min:.3e})"
            )));
        }
        Ok(state)
    }

    pub fn vacuum(n: usize) -> Self {
        Self {
            mean: DVector::zeros(2 * n),
            cov: DMatrix::identity(2 * n, 2 * n),
        }
    }

    /// Product of p-squeezed vacua with p variances `v` (x variances `1/v`).
    pub fn squeezed(squeezing: &SqueezingSpec) -> Self {
        let v = squeezing.variances();
        let diag = DVector::from_iterator(
            2 * v.len(),
            v.iter().map(|x| 1.0 / x).chain(v.iter().copied()),
        );
        Self {
            mean: DVector::zeros(2 * v.len()),
            cov: DMatrix::from_diagonal(&diag),
        }
    }

    pub fn n_modes(&self) -> usize {
        self.cov.nrows() / 2
    }

    pub fn mean(&self) -> &DVector<f64> {
        &self.mean
    }

    pub fn cov(&self) -> &DMatrix<f64> {
        &self.cov
    }

    /// Smallest eigenvalue of `cov + iΩ`, via its real symmetric embedding.
    pub fn uncertainty_margin(&self) -> f64 {
        let w = omega(self.n_modes());
        let embed = from_blocks(&self.cov, &w, &-&w, &self.cov);
        sorted_symmetric_eigen(&embed).0[0]
    }
}

pub fn propagate(state: &GaussianState, s: &QuadSymplectic) -> Result<GaussianState> {
    if s.n_modes() != state.n_modes() {
        return Err(Error::DimensionMismatch {
            what: "symplectic modes",
            expected: state.n_modes(),
            found: s.n_modes(),
        });
    }
    let m = s.matrix();
    Ok(GaussianState {
        mean: m * &state.mean,
        cov: m * &state.cov * m.transpose(),
    })
}

/// Covariance of the unmeasured modes after homodyning `p` on `measured`.
#[derive(Debug, Clone, PartialEq)]
pub struct ConditionalCovariance {
    /// Remaining mode indices, ascending.
    pub modes: Vec<usize>,
    /// `(x⃗, p⃗)` covariance of `modes`.
    pub cov: DMatrix<f64>,
}

/// Schur complement of the measured `p` block. The result does not depend on
/// the outcomes; a pseudo-inverse handles singular measured blocks.
pub fn condition_on_p_measurements(
    state: &GaussianState,
    measured: &[usize],
) -> Result<ConditionalCovariance> {
    let n = state.n_modes();
    let mut is_measured = vec![false; n];
    for &k in measured {
        if k >= n {
            return Err(Error::Validation(format!("measured mode {k} out of range")));
        }
        is_measured[k] = true;
    }
    let modes: Vec<usize> = (0..n).filter(|&k| !is_measured[k]).collect();
    let keep: Vec<usize> = modes.iter().copied().chain(modes.iter().map(|k| n + k)).collect();
    let meas: Vec<usize> = measured.iter().map(|k| n + k).collect();
    let s_keep = select(&state.cov, &keep, &keep);
    let s_cross = select(&state.cov, &keep, &meas);
    let s_meas = select(&state.cov, &meas, &meas);
    let cov = s_keep - &s_cross * pseudo_inverse(&s_meas, 1e-13) * s_cross.transpose();
    Ok(ConditionalCovariance { modes, cov })
}

/// Output covariance predicted by an elimination for unit-covariance
/// inputs: `S_eff S_effᵀ` plus the excess-noise covariance.
pub fn elimination_output_covariance(result: &MbqcResult, squeezing: &SqueezingSpec) -> DMatrix<f64> {
    let eff = result.effective();
    let v = DMatrix::from_diagonal(&DVector::from_column_slice(squeezing.variances()));
    let xx = &result.c_x * &v * result.c_x.transpose();
    let xp = &result.c_x * &v * result.c_p.transpose();
    let pp = &result.c_p * &v * result.c_p.transpose();
    &eff * eff.transpose() + from_blocks(&xx, &xp, &xp.transpose(), &pp)
}

/// Output covariance after conditioning on the measured `p` values when the
/// anti-squeezed ancilla quadratures carry no prior information, computed in
/// information form: the IN precision is propagated through the network, the
/// measured rows are conditioned on and the measured `x` rows marginalized.
/// Inputs are vacuum.
///
/// Evaluated in exact rational arithmetic on the floating-point inputs, so the
/// only rounding is the final conversion.
pub fn flat_prior_conditional_covariance(
    u_total: &ModeUnitary,
    n: usize,
    m: usize,
    input_positions: &[usize],
    squeezing: &SqueezingSpec,
) -> Result<DMatrix<f64>> {
    let total = n + m;
    if u_total.dim() != total || squeezing.m() != m {
        return Err(Error::DimensionMismatch {
            what: "network modes",
            expected: total,
            found: u_total.dim(),
        });
    }
    let q = ancilla_slots(total, n, input_positions)?;
    let exact = |v: f64| {
        BigRational::from_float(v)
            .ok_or_else(|| Error::NumericalBreakdown(format!("non-finite value {v}")))
    };
    let dim = 2 * total;
    let mut precision_in = vec![BigRational::zero(); dim];
    for &i in input_positions {
        precision_in[i] = BigRational::one();
        precision_in[total + i] = BigRational::one();
    }
    for (j, &slot) in q.iter().enumerate() {
        precision_in[total + slot] = exact(squeezing.variances()[j])?.recip();
    }
    let s = unitary_to_quad_symplectic(u_total);
    let sm = s.matrix();
    let mut s_exact = Vec::with_capacity(dim);
    for r in 0..dim {
        s_exact.push((0..dim).map(|c| exact(sm[(r, c)])).collect::<Result<Vec<_>>>()?);
    }
    let singular = || Error::NumericalBreakdown("conditional precision is singular".into());
    // Outputs are S·z, so the precision over outputs is S⁻ᵀ Λ_in S⁻¹.
    let s_inv = rational_inverse(s_exact).ok_or_else(singular)?;
    let keep: Vec<usize> = (0..m).chain(m..total).chain(total + m..dim).collect();
    let precision: Vec<Vec<BigRational>> = keep
        .iter()
        .map(|&a| {
            keep.iter()
                .map(|&b| {
                    (0..dim).fold(BigRational::zero(), |acc, k| {
                        if precision_in[k].is_zero() {
                            acc
                        } else {
                            acc + &s_inv[k][a] * &s_inv[k][b] * &precision_in[k]
                        }
                    })
                })
                .collect()
        })
        .collect();
    // Marginalize the measured x rows by eliminating them first.
    let reduced = rational_schur_complement(precision, m).ok_or_else(singular)?;
    let cov = rational_inverse(reduced).ok_or_else(singular)?;
    let k = cov.len();
    Ok(DMatrix::from_fn(k, k, |i, j| cov[i][j].to_f64().unwrap_or(f64::NAN)))
}

/// Schur complement of the leading `h × h` block.
fn rational_schur_complement(mut a: Vec<Vec<BigRational>>, h: usize) -> Option<Vec<Vec<BigRational>>> {
    for p in 0..h {
        let pivot_row = (p..h).find(|&r| !a[r][p].is_zero())?;
        a.swap(p, pivot_row);
        for row in a.iter_mut() {
            row.swap(p, pivot_row);
        }
        let pivot = a[p][p].clone();
        let (top, bottom) = a.split_at_mut(p + 1);
        let leading = &top[p];
        for row in bottom.iter_mut() {
            if row[p].is_zero() {
                continue;
            }
            let factor = &row[p] / &pivot;
            for (dst, src) in row[p..].iter_mut().zip(&leading[p..]) {
                *dst -= &factor * src;
            }
        }
    }
    Some(a[h..].iter().map(|row| row[h..].to_vec()).collect())
}

/// Gauss-Jordan inverse.
fn rational_inverse(mut a: Vec<Vec<BigRational>>) -> Option<Vec<Vec<BigRational>>> {
    let n = a.len();
    let mut inv: Vec<Vec<BigRational>> = (0..n)
        .map(|i| (0..n).map(|j| if i == j { BigRational::one() } else { BigRational::zero() }).collect())
        .collect();
    for p in 0..n {
        let pivot_row = (p..n).find(|&r| !a[r][p].is_zero())?;
        a.swap(p, pivot_row);
        inv.swap(p, pivot_row);
        let pivot = a[p][p].recip();
        for c in 0..n {
            a[p][c] *= &pivot;
            inv[p][c] *= &pivot;
        }
        for r in 0..n {
            if r == p || a[r][p].is_zero() {
                continue;
            }
            let factor = a[r][p].clone();
            for c in 0..n {
                let da = &factor * &a[p][c];
                a[r][c] -= da;
                let di = &factor * &inv[p][c];
                inv[r][c] -= di;
            }
        }
    }
    Some(inv)
}

/// Regression estimates with standard errors.
#[derive(Debug, Clone)]
pub struct McEstimate {
    pub samples: usize,
    /// Rows: regressors `(x_in, p_in, p_meas)`; columns: responses `(x_out, p_out)`.
    pub coefficients: DMatrix<f64>,
    pub coefficient_se: DMatrix<f64>,
    /// Residual variances of `(x_out, p_out)`.
    pub residual_var: DVector<f64>,
    pub residual_var_se: DVector<f64>,
    n: usize,
}

impl McEstimate {
    /// Estimated `[[A, B], [C, D]]`.
    pub fn effective(&self) -> DMatrix<f64> {
        self.coefficients.rows(0, 2 * self.n).transpose()
    }

    pub fn effective_se(&self) -> DMatrix<f64> {
        self.coefficient_se.rows(0, 2 * self.n).transpose()
    }

    /// Estimated `[l_x; l_p]`.
    pub fn displacement(&self) -> DMatrix<f64> {
        let m = self.coefficients.nrows() - 2 * self.n;
        self.coefficients.rows(2 * self.n, m).transpose()
    }

    pub fn noise_var_x(&self) -> DVector<f64> {
        self.residual_var.rows(0, self.n).into_owned()
    }

    pub fn noise_var_p(&self) -> DVector<f64> {
        self.residual_var.rows(self.n, self.n).into_owned()
    }

    /// `(estimate - analytic) / se` for every entry of `A, B, C, D` and every
    /// noise variance.
    pub fn z_scores(&self, analytic: &MbqcResult) -> Vec<f64> {
        let eff = analytic.effective();
        let est = self.effective();
        let se = self.effective_se();
        let noise = DVector::from_iterator(
            2 * self.n,
            analytic.noise_var_x.iter().chain(analytic.noise_var_p.iter()).copied(),
        );
        let mut z: Vec<f64> = est
            .iter()
            .zip(eff.iter())
            .zip(se.iter())
            .map(|((e, a), s)| z_score(*e, *a, *s))
            .collect();
        z.extend(
            self.residual_var
                .iter()
                .zip(noise.iter())
                .zip(self.residual_var_se.iter())
                .map(|((e, a), s)| z_score(*e, *a, *s)),
        );
        z
    }
}

fn z_score(estimate: f64, analytic: f64, se: f64) -> f64 {
    let diff = estimate - analytic;
    if se < 1e-12 {
        if diff.abs() <= 1e-9 {
            0.0
        } else {
            f64::INFINITY
        }
    } else {
        diff / se
    }
}

struct Sampler<'a> {
    s: &'a DMatrix<f64>,
    total: usize,
    sd_x: Vec<f64>,
    sd_p: Vec<f64>,
    regressors: Vec<usize>,
    responses: Vec<usize>,
    seed: u64,
}

impl Sampler<'_> {
    fn chunk(&self, index: usize, len: usize) -> (DMatrix<f64>, DMatrix<f64>) {
        let mut rng = ChaCha8Rng::seed_from_u64(self.seed);
        rng.set_stream(index as u64);
        let t = self.total;
        let mut inputs = DMatrix::zeros(2 * t, len);
        for c in 0..len {
            for k in 0..t {
                inputs[(k, c)] = self.sd_x[k] * rng.sample::<f64, _>(StandardNormal);
                inputs[(t + k, c)] = self.sd_p[k] * rng.sample::<f64, _>(StandardNormal);
            }
        }
        let out = self.s * inputs;
        let z = DMatrix::from_fn(self.regressors.len(), len, |r, c| out[(self.regressors[r], c)]);
        let y = DMatrix::from_fn(self.responses.len(), len, |r, c| out[(self.responses[r], c)]);
        (z, y)
    }
}

/// Samples the network with unit-variance probe inputs and squeezed ancillas
/// and regresses the outputs on `(x_in, p_in, p_meas)` without intercept.
///
/// Samples are drawn in chunks whose RNG streams depend only on
/// `(seed, chunk)`, and chunk sums are reduced in chunk order, so the result
/// is independent of the thread count.
pub fn mc_estimate_network(
    u_total: &ModeUnitary,
    n: usize,
    m: usize,
    input_positions: &[usize],
    squeezing: &SqueezingSpec,
    samples: usize,
    seed: u64,
) -> Result<McEstimate> {
    if samples < MIN_SAMPLES {
        return Err(Error::InsufficientSamples {
            required: MIN_SAMPLES,
            found: samples,
        });
    }
    let total = n + m;
    if u_total.dim() != total || squeezing.m() != m {
        return Err(Error::DimensionMismatch {
            what: "network modes",
            expected: total,
            found: u_total.dim(),
        });
    }
    let q = ancilla_slots(total, n, input_positions)?;
    let mut sd_x = vec![1.0; total];
    let mut sd_p = vec![1.0; total];
    for (j, &slot) in q.iter().enumerate() {
        sd_x[slot] = ANTI_SQUEEZED_VARIANCE.sqrt();
        sd_p[slot] = squeezing.variances()[j].sqrt();
    }
    let s = unitary_to_quad_symplectic(u_total).matrix().clone();
    // OUT x rows 0..N, p rows N..2N; inputs are unmeasured, so their
    // quadratures enter through the IN slots.
    let mut in_rows = DMatrix::<f64>::zeros(2 * n, 2 * total);
    for (r, &i) in input_positions.iter().enumerate() {
        in_rows[(r, i)] = 1.0;
        in_rows[(n + r, total + i)] = 1.0;
    }
    let s_aug = {
        let mut a = DMatrix::zeros(2 * total + 2 * n, 2 * total);
        a.rows_mut(0, 2 * total).copy_from(&s);
        a.rows_mut(2 * total, 2 * n).copy_from(&in_rows);
        a
    };
    let regressors: Vec<usize> = (0..2 * n)
        .map(|k| 2 * total + k)
        .chain((0..m).map(|k| total + k))
        .collect();
    let responses: Vec<usize> = (m..total).chain(total + m..2 * total).collect();
    let sampler = Sampler {
        s: &s_aug,
        total,
        sd_x,
        sd_p,
        regressors,
        responses,
        seed,
    };
    let p = sampler.regressors.len();
    let r = sampler.responses.len();
    let chunks: Vec<(usize, usize)> = (0..samples.div_ceil(CHUNK))
        .map(|c| (c, CHUNK.min(samples - c * CHUNK)))
        .collect();

    let partial: Vec<(DMatrix<f64>, DMatrix<f64>)> = chunks
        .par_iter()
        .map(|&(c, len)| {
            let (z, y) = sampler.chunk(c, len);
            (&z * z.transpose(), &z * y.transpose())
        })
        .collect();
    let mut ztz = DMatrix::zeros(p, p);
    let mut zty = DMatrix::zeros(p, r);
    for (a, b) in &partial {
        ztz += a;
        zty += b;
    }
    // Column scaling keeps the normal equations well conditioned despite the
    // very different regressor variances.
    let scale = DVector::from_fn(p, |i, _| 1.0 / ztz[(i, i)].sqrt().max(f64::MIN_POSITIVE));
    let scaled = DMatrix::from_fn(p, p, |i, j| ztz[(i, j)] * scale[i] * scale[j]);
    let chol = Cholesky::new(scaled).ok_or_else(|| {
        Error::NumericalBreakdown("regressor Gram matrix is not positive definite".into())
    })?;
    let rhs = DMatrix::from_fn(p, r, |i, j| zty[(i, j)] * scale[i]);
    let beta_scaled = chol.solve(&rhs);
    let beta = DMatrix::from_fn(p, r, |i, j| beta_scaled[(i, j)] * scale[i]);
    let inv_diag = {
        let inv = chol.inverse();
        DVector::from_fn(p, |i, _| inv[(i, i)] * scale[i] * scale[i])
    };

    let bt = beta.transpose();
    let rss_parts: Vec<DVector<f64>> = chunks
        .par_iter()
        .map(|&(c, len)| {
            let (z, y) = sampler.chunk(c, len);
            let resid = y - &bt * z;
            DVector::from_fn(r, |i, _| resid.row(i).iter().map(|v| v * v).sum())
        })
        .collect();
    let mut rss = DVector::zeros(r);
    for part in &rss_parts {
        rss += part;
    }
    let dof = (samples - p) as f64;
    let residual_var = rss / dof;
    let coefficient_se = DMatrix::from_fn(p, r, |i, j| (residual_var[j] * inv_diag[i]).sqrt());
    let residual_var_se = residual_var.map(|s2| s2 * (2.0 / dof).sqrt());
    Ok(McEstimate {
        samples,
        coefficients: beta,
        coefficient_se,
        residual_var,
        residual_var_se,
        n,
    })
}
