//! Effective operation and excess noise of a measured linear-optical network.
//!
//! The network `U` acts on `N = n + m` IN slots: `n` of them carry the input
//! state and the rest are p-squeezed ancillas. The first `m` OUT modes are
//! measured in p; the last `n` are the outputs. Solving the measured
//! equations for the anti-squeezed ancilla quadratures and substituting gives
//!
//! ```text
//! x_out = A x_in + B p_in + c_x p_sq + l_x p_meas
//! p_out = C x_in + D p_in + c_p p_sq + l_p p_meas
//! ```

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::{frobenius, from_blocks, select};
use crate::symplectic::{ModeUnitary, QuadSymplectic};

/// Largest accepted condition number of the measured anti-squeezed block.
pub const MAX_CONDITION: f64 = 1e12;

pub fn db_to_variance(level_db: f64) -> f64 {
    10f64.powf(level_db / 10.0)
}

/// Variance `e^{-2r}` of a state squeezed with parameter `r`.
pub fn r_to_variance(r: f64) -> f64 {
    (-2.0 * r).exp()
}

/// Squeezed-quadrature variances of the ancillas in shot-noise units.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "Vec<f64>", into = "Vec<f64>")]
pub struct SqueezingSpec {
    variances: Vec<f64>,
}

impl SqueezingSpec {
    pub fn new(variances: Vec<f64>) -> Result<Self> {
        if let Some(v) = variances.iter().find(|v| !(v.is_finite() && **v > 0.0)) {
            return Err(Error::Validation(format!(
                "squeezing variance must be positive and finite, got {v}"
            )));
        }
        Ok(Self { variances })
    }

    pub fn from_db(levels: &[f64]) -> Result<Self> {
        Self::new(levels.iter().map(|&d| db_to_variance(d)).collect())
    }

    pub fn from_r(rs: &[f64]) -> Result<Self> {
        Self::new(rs.iter().map(|&r| r_to_variance(r)).collect())
    }

    pub fn vacuum(m: usize) -> Self {
        Self {
            variances: vec![1.0; m],
        }
    }

    pub fn m(&self) -> usize {
        self.variances.len()
    }

    pub fn variances(&self) -> &[f64] {
        &self.variances
    }
}

impl TryFrom<Vec<f64>> for SqueezingSpec {
    type Error = Error;

    fn try_from(value: Vec<f64>) -> Result<Self> {
        Self::new(value)
    }
}

impl From<SqueezingSpec> for Vec<f64> {
    fn from(value: SqueezingSpec) -> Self {
        value.variances
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct MbqcResult {
    pub a: DMatrix<f64>,
    pub b: DMatrix<f64>,
    pub c: DMatrix<f64>,
    pub d: DMatrix<f64>,
    pub c_x: DMatrix<f64>,
    pub c_p: DMatrix<f64>,
    pub l_x: DMatrix<f64>,
    pub l_p: DMatrix<f64>,
    pub noise_var_x: DVector<f64>,
    pub noise_var_p: DVector<f64>,
}

impl MbqcResult {
    pub fn n(&self) -> usize {
        self.a.nrows()
    }

    pub fn m(&self) -> usize {
        self.c_x.ncols()
    }

    /// `[[A, B], [C, D]]`.
    pub fn effective(&self) -> DMatrix<f64> {
        from_blocks(&self.a, &self.b, &self.c, &self.d)
    }

    /// Recomputes the noise variances for another set of ancilla variances.
    pub fn with_squeezing(&self, squeezing: &SqueezingSpec) -> Result<MbqcResult> {
        if squeezing.m() != self.m() {
            return Err(Error::DimensionMismatch {
                what: "squeezing variances",
                expected: self.m(),
                found: squeezing.m(),
            });
        }
        let mut out = self.clone();
        out.noise_var_x = noise_variances(&self.c_x, squeezing.variances());
        out.noise_var_p = noise_variances(&self.c_p, squeezing.variances());
        Ok(out)
    }
}

fn noise_variances(c: &DMatrix<f64>, variances: &[f64]) -> DVector<f64> {
    DVector::from_fn(c.nrows(), |i, _| {
        (0..c.ncols()).map(|j| c[(i, j)].powi(2) * variances[j]).sum()
    })
}

/// Checks that `positions` is a duplicate-free subset of `0..total` of size `n`
/// and returns the complementary ancilla slots in ascending order.
pub fn ancilla_slots(total: usize, n: usize, positions: &[usize]) -> Result<Vec<usize>> {
    if positions.len() != n {
        return Err(Error::DimensionMismatch {
            what: "input positions",
            expected: n,
            found: positions.len(),
        });
    }
    let mut used = vec![false; total];
    for &p in positions {
        if p >= total {
            return Err(Error::Validation(format!(
                "input position {p} out of range for {total} modes"
            )));
        }
        if used[p] {
            return Err(Error::Validation(format!("input position {p} repeated")));
        }
        used[p] = true;
    }
    Ok((0..total).filter(|&i| !used[i]).collect())
}

/// Eliminates the anti-squeezed ancilla quadratures from the output equations.
///
/// Ancilla slot `j` (the `j`-th slot not listed in `input_positions`) carries
/// variance `squeezing.variances()[j]`.
pub fn eliminate(
    u_total: &ModeUnitary,
    n: usize,
    m: usize,
    input_positions: &[usize],
    squeezing: &SqueezingSpec,
) -> Result<MbqcResult> {
    let total = n + m;
    if u_total.dim() != total {
        return Err(Error::DimensionMismatch {
            what: "total unitary",
            expected: total,
            found: u_total.dim(),
        });
    }
    if squeezing.m() != m {
        return Err(Error::DimensionMismatch {
            what: "squeezing variances",
            expected: m,
            found: squeezing.m(),
        });
    }
    let q = ancilla_slots(total, n, input_positions)?;
    let ins = input_positions;
    let meas: Vec<usize> = (0..m).collect();
    let outs: Vec<usize> = (m..total).collect();
    let x = u_total.re();
    let y = u_total.im();

    let x_oi = select(&x, &outs, ins);
    let y_oi = select(&y, &outs, ins);
    let x_oq = select(&x, &outs, &q);
    let y_oq = select(&y, &outs, &q);

    let (a, b, c, d, c_x, c_p, l_x, l_p);
    if m == 0 {
        a = x_oi.clone();
        b = -&y_oi;
        c = y_oi;
        d = x_oi;
        c_x = -y_oq;
        c_p = x_oq;
        l_x = DMatrix::zeros(n, 0);
        l_p = DMatrix::zeros(n, 0);
    } else {
        let y_mq = select(&y, &meas, &q);
        let g = solve_measured(y_mq, &x_oq, &y_oq)?;
        let x_mi = select(&x, &meas, ins);
        let y_mi = select(&y, &meas, ins);
        let x_mq = select(&x, &meas, &q);
        let xg = &x_oq * &g;
        let yg = &y_oq * &g;
        a = &x_oi - &xg * &y_mi;
        b = -&y_oi - &xg * &x_mi;
        c = &y_oi - &yg * &y_mi;
        d = &x_oi - &yg * &x_mi;
        c_x = -&y_oq - &xg * &x_mq;
        c_p = &x_oq - &yg * &x_mq;
        l_x = xg;
        l_p = yg;
    }
    let noise_var_x = noise_variances(&c_x, squeezing.variances());
    let noise_var_p = noise_variances(&c_p, squeezing.variances());
    Ok(MbqcResult {
        a,
        b,
        c,
        d,
        c_x,
        c_p,
        l_x,
        l_p,
        noise_var_x,
        noise_var_p,
    })
}

/// Rank-revealing inverse of the measured anti-squeezed block `Y_MQ`.
///
/// Directions of `x_sq` that the measurements cannot resolve are tolerated
/// only when they do not reach the outputs.
fn solve_measured(
    y_mq: DMatrix<f64>,
    x_oq: &DMatrix<f64>,
    y_oq: &DMatrix<f64>,
) -> Result<DMatrix<f64>> {
    let m = y_mq.nrows();
    let svd = y_mq.svd(true, true);
    let sv = &svd.singular_values;
    let max = sv.max();
    let min = sv.min();
    let condition = if min > 0.0 { max / min } else { f64::INFINITY };
    let u = svd.u.as_ref().expect("u requested");
    let vt = svd.v_t.as_ref().expect("v_t requested");
    let mut g = DMatrix::zeros(m, m);
    for k in 0..m {
        if max > 0.0 && sv[k] * MAX_CONDITION >= max {
            g += vt.row(k).transpose() * u.column(k).transpose() / sv[k];
        } else {
            let null = vt.row(k).transpose();
            let leak = (x_oq * &null).norm() + (y_oq * &null).norm();
            if leak > 1e-9 {
                return Err(Error::SingularElimination { condition });
            }
        }
    }
    Ok(g)
}

/// `‖[[A, B], [C, D]] - target‖_F`.
pub fn fitness_f1(result: &MbqcResult, target: &QuadSymplectic) -> Result<f64> {
    if target.n_modes() != result.n() {
        return Err(Error::DimensionMismatch {
            what: "target modes",
            expected: result.n(),
            found: target.n_modes(),
        });
    }
    Ok(frobenius(&(result.effective() - target.matrix())))
}

/// Total excess-noise variance.
pub fn fitness_f2(result: &MbqcResult) -> f64 {
    result.noise_var_x.sum() + result.noise_var_p.sum()
}

/// Weighted graph of a target cluster state.
#[derive(Debug, Clone, PartialEq)]
pub struct ClusterGraph {
    v: DMatrix<f64>,
}

impl ClusterGraph {
    pub fn new(v: DMatrix<f64>) -> Result<Self> {
        if !v.is_square() {
            return Err(Error::DimensionMismatch {
                what: "adjacency matrix (square)",
                expected: v.nrows(),
                found: v.ncols(),
            });
        }
        for i in 0..v.nrows() {
            if v[(i, i)] != 0.0 {
                return Err(Error::Validation(format!("adjacency diagonal entry {i} is nonzero")));
            }
            for j in 0..i {
                if v[(i, j)] != v[(j, i)] {
                    return Err(Error::Validation(format!(
                        "adjacency matrix is not symmetric at ({i}, {j})"
                    )));
                }
            }
        }
        Ok(Self { v })
    }

    /// Unit-weight path `0 - 1 - … - (m-1)`.
    pub fn path(m: usize) -> Self {
        let mut v = DMatrix::zeros(m, m);
        for i in 1..m {
            v[(i - 1, i)] = 1.0;
            v[(i, i - 1)] = 1.0;
        }
        Self { v }
    }

    pub fn m(&self) -> usize {
        self.v.nrows()
    }

    pub fn adjacency(&self) -> &DMatrix<f64> {
        &self.v
    }

    /// Vacuum variance `1 + Σⱼ Vᵢⱼ²` of nullifier `i`.
    pub fn shot_noise(&self, i: usize) -> f64 {
        1.0 + self.v.row(i).iter().map(|w| w * w).sum::<f64>()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct NullifierVariance {
    pub absolute: f64,
    pub shot_noise: f64,
}

impl NullifierVariance {
    pub fn relative(&self) -> f64 {
        self.absolute / self.shot_noise
    }
}

/// Variances of `ζᵢ = p_out,i - Σⱼ Vᵢⱼ x_out,j` when every IN slot holds a
/// p-squeezed state of the given variance (its x quadrature has the inverse).
pub fn nullifier_variances(
    u_total: &ModeUnitary,
    squeezing: &SqueezingSpec,
    graph: &ClusterGraph,
) -> Result<Vec<NullifierVariance>> {
    let m = graph.m();
    if u_total.dim() != m {
        return Err(Error::DimensionMismatch {
            what: "total unitary",
            expected: m,
            found: u_total.dim(),
        });
    }
    if squeezing.m() != m {
        return Err(Error::DimensionMismatch {
            what: "squeezing variances",
            expected: m,
            found: squeezing.m(),
        });
    }
    let x = u_total.re();
    let y = u_total.im();
    let v = graph.adjacency();
    let on_x = &y - v * &x;
    let on_p = &x + v * &y;
    let vars = squeezing.variances();
    Ok((0..m)
        .map(|i| NullifierVariance {
            absolute: (0..m)
                .map(|k| on_x[(i, k)].powi(2) / vars[k] + on_p[(i, k)].powi(2) * vars[k])
                .sum(),
            shot_noise: graph.shot_noise(i),
        })
        .collect())
}

/// Mean absolute nullifier variance.
pub fn fitness_f3(variances: &[NullifierVariance]) -> f64 {
    if variances.is_empty() {
        return 0.0;
    }
    variances.iter().map(|v| v.absolute).sum::<f64>() / variances.len() as f64
}
