//! End-to-end synthesis runs, self-verifying reports and classification.

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};
use statrs::distribution::{Binomial, ContinuousCDF, DiscreteCDF, Normal};

use crate::error::{Error, Result};
use crate::io::{lossy_f64, matrix_to_rows};
use crate::linalg::frobenius;
use crate::mbqc::MbqcResult;
use crate::optimizer::{multistart, OptimizationTrace, RestartSummary};
use crate::oracle::{elimination_output_covariance, flat_prior_conditional_covariance, McEstimate};
use crate::parameterization::{dof_lower_bound, AngleVector};
use crate::scenario::{ComplexRows, Objective, ScenarioFile, SynthesisProblem};
use crate::symplectic::{classify_trivial, QuadSymplectic, Triviality};

pub const TOOL_VERSION: &str = env!("CARGO_PKG_VERSION");
/// Family-wise false-alarm rate of the Monte-Carlo agreement test, the
/// two-sided tail mass beyond three standard errors.
pub const FAMILY_ALPHA: f64 = 0.0027;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ResultView {
    pub a: Vec<Vec<f64>>,
    pub b: Vec<Vec<f64>>,
    pub c: Vec<Vec<f64>>,
    pub d: Vec<Vec<f64>>,
    pub c_x: Vec<Vec<f64>>,
    pub c_p: Vec<Vec<f64>>,
    pub l_x: Vec<Vec<f64>>,
    pub l_p: Vec<Vec<f64>>,
    pub noise_var_x: Vec<f64>,
    pub noise_var_p: Vec<f64>,
}

impl From<&MbqcResult> for ResultView {
    fn from(r: &MbqcResult) -> Self {
        Self {
            a: matrix_to_rows(&r.a),
            b: matrix_to_rows(&r.b),
            c: matrix_to_rows(&r.c),
            d: matrix_to_rows(&r.d),
            c_x: matrix_to_rows(&r.c_x),
            c_p: matrix_to_rows(&r.c_p),
            l_x: matrix_to_rows(&r.l_x),
            l_p: matrix_to_rows(&r.l_p),
            noise_var_x: r.noise_var_x.iter().copied().collect(),
            noise_var_p: r.noise_var_p.iter().copied().collect(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NullifierRow {
    pub node: usize,
    pub absolute: f64,
    pub shot_noise: f64,
    pub relative: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunReport {
    pub tool_version: String,
    pub problem_digest: String,
    pub scenario: ScenarioFile,
    pub u_t_projection_residual: f64,
    pub seed: u64,
    /// Parameters exactly as optimized, `[θ…, φ…]` split into parts.
    pub best_angles: AngleVector,
    pub best_angles_wrapped: AngleVector,
    pub umhd: ComplexRows,
    #[serde(with = "lossy_f64")]
    pub fitness: f64,
    pub f1: Option<f64>,
    pub f2: Option<f64>,
    pub f3: Option<f64>,
    pub result: Option<ResultView>,
    pub nullifiers: Option<Vec<NullifierRow>>,
    /// Largest entry of the difference between the elimination's output
    /// covariance and direct Gaussian conditioning.
    pub conditioning_deviation: Option<f64>,
    pub restarts: Vec<RestartSummary>,
    pub trace: OptimizationTrace,
}

/// Multistart optimization followed by a full evaluation of the best point.
pub fn run_scenario(problem: &SynthesisProblem) -> Result<RunReport> {
    let outcome = multistart(problem, &problem.optimizer, problem.restarts)?;
    let best = &outcome.best;
    if !best.best.fitness.is_finite() {
        return Err(Error::NumericalBreakdown(
            "no feasible parameter point was found".into(),
        ));
    }
    let angles = AngleVector::from_flat(&best.best_x, &problem.plan)?;
    let solution = problem.solve(&angles)?;
    let conditioning_deviation = match (&solution.result, &problem.objective) {
        (Some(result), Objective::F1 | Objective::F1PlusWeightedF2(_)) => {
            let direct = flat_prior_conditional_covariance(
                &solution.umhd,
                problem.n,
                problem.m,
                &problem.input_positions,
                &problem.squeezing,
            )?;
            let predicted = elimination_output_covariance(result, &problem.squeezing);
            Some((direct - predicted).amax())
        }
        _ => None,
    };
    let e = solution.evaluation;
    Ok(RunReport {
        tool_version: TOOL_VERSION.into(),
        problem_digest: problem.digest(),
        scenario: problem.to_file().clone(),
        u_t_projection_residual: problem.u_t_projection_residual,
        seed: best.seed,
        best_angles_wrapped: angles.wrapped(),
        best_angles: angles,
        umhd: ComplexRows::from_matrix(solution.umhd.matrix()),
        fitness: e.fitness,
        f1: e.f1,
        f2: e.f2,
        f3: e.f3,
        result: solution.result.as_ref().map(ResultView::from),
        nullifiers: solution.nullifiers.as_ref().map(|nv| {
            nv.iter()
                .enumerate()
                .map(|(node, v)| NullifierRow {
                    node,
                    absolute: v.absolute,
                    shot_noise: v.shot_noise,
                    relative: v.relative(),
                })
                .collect()
        }),
        conditioning_deviation,
        restarts: outcome.restarts,
        trace: outcome.best,
    })
}

/// Two-sided `|z|` bound that keeps the family-wise false-alarm rate at
/// `alpha` over `comparisons` tests.
pub fn bonferroni_threshold(comparisons: usize, alpha: f64) -> f64 {
    let normal = Normal::standard();
    normal.inverse_cdf(1.0 - alpha / (2.0 * comparisons.max(1) as f64))
}

/// Largest count of `|z| > 3` among `comparisons` independent null tests that
/// is still consistent at false-alarm rate `alpha`.
pub fn exceedance_bound(comparisons: usize, alpha: f64) -> u64 {
    let p = 2.0 * (1.0 - Normal::standard().cdf(3.0));
    let b = Binomial::new(p, comparisons as u64).expect("valid binomial");
    (0..=comparisons as u64)
        .find(|&k| 1.0 - b.cdf(k) <= alpha)
        .unwrap_or(comparisons as u64)
}

/// Agreement between Monte-Carlo regression and the analytic elimination.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct McComparison {
    pub samples: usize,
    pub seed: u64,
    pub comparisons: usize,
    pub max_abs_z: f64,
    pub beyond_three_sigma: usize,
    pub threshold: f64,
    pub effective_estimate: Vec<Vec<f64>>,
    pub effective_se: Vec<Vec<f64>>,
    pub noise_var_estimate: Vec<f64>,
    pub passed: bool,
}

impl McComparison {
    pub fn new(est: &McEstimate, analytic: &MbqcResult, seed: u64) -> Self {
        let z = est.z_scores(analytic);
        let comparisons = z.len();
        let threshold = bonferroni_threshold(comparisons, FAMILY_ALPHA);
        let max_abs_z = z.iter().fold(0.0_f64, |m, v| m.max(v.abs()));
        Self {
            samples: est.samples,
            seed,
            comparisons,
            max_abs_z,
            beyond_three_sigma: z.iter().filter(|v| v.abs() > 3.0).count(),
            threshold,
            effective_estimate: matrix_to_rows(&est.effective()),
            effective_se: matrix_to_rows(&est.effective_se()),
            noise_var_estimate: est.residual_var.iter().copied().collect(),
            passed: max_abs_z <= threshold,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Verification {
    pub digest_matches: bool,
    pub fitness_reproduced: bool,
    pub monte_carlo: Option<McComparison>,
}

impl Verification {
    pub fn passed(&self) -> bool {
        self.digest_matches
            && self.fitness_reproduced
            && self.monte_carlo.as_ref().is_none_or(|m| m.passed)
    }
}

fn same_bits(a: Option<f64>, b: Option<f64>) -> bool {
    match (a, b) {
        (Some(x), Some(y)) => x.to_bits() == y.to_bits(),
        (None, None) => true,
        _ => false,
    }
}

/// Rebuilds the problem from the embedded scenario, recomputes the claimed
/// fitness from the stored angles and, for problems with inputs, compares the
/// analytic elimination with a Monte-Carlo regression.
pub fn verify_report(report: &RunReport, samples: usize, seed: u64) -> Result<Verification> {
    let problem = SynthesisProblem::from_file(report.scenario.clone())?;
    let digest_matches = problem.digest() == report.problem_digest;
    let solution = problem.solve(&report.best_angles)?;
    let e = solution.evaluation;
    let fitness_reproduced = e.fitness.to_bits() == report.fitness.to_bits()
        && same_bits(e.f1, report.f1)
        && same_bits(e.f2, report.f2)
        && same_bits(e.f3, report.f3);
    let monte_carlo = match &solution.result {
        Some(result) if problem.n > 0 => {
            let est = problem.mc_estimate(&report.best_angles, samples, seed)?;
            Some(McComparison::new(&est, result, seed))
        }
        _ => None,
    };
    Ok(Verification {
        digest_matches,
        fitness_reproduced,
        monte_carlo,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "class", rename_all = "snake_case")]
pub enum Classification {
    Trivial {
        o: Vec<Vec<f64>>,
        r: Vec<f64>,
        right_x: Vec<Vec<f64>>,
        right_y: Vec<Vec<f64>>,
        recomposition_error: f64,
    },
    RequiresAncillas {
        left_y_norm: f64,
        min_ancillas: usize,
    },
}

pub fn classify_report(target: &QuadSymplectic, tol: f64) -> Result<Classification> {
    Ok(match classify_trivial(target, tol)? {
        Triviality::Trivial(t) => Classification::Trivial {
            o: matrix_to_rows(&t.o),
            r: t.r.iter().copied().collect(),
            right_x: matrix_to_rows(&t.right.x),
            right_y: matrix_to_rows(&t.right.y),
            recomposition_error: frobenius(&(t.recompose() - target.matrix())),
        },
        Triviality::RequiresAncillas { left_y_norm } => Classification::RequiresAncillas {
            left_y_norm,
            min_ancillas: dof_lower_bound(target.n_modes()),
        },
    })
}

/// Reads a target symplectic given as `{"rows": [[...], ...]}`.
pub fn parse_target(text: &str) -> Result<QuadSymplectic> {
    #[derive(Deserialize)]
    #[serde(deny_unknown_fields)]
    struct TargetFile {
        rows: Vec<Vec<f64>>,
    }
    let mut de = serde_json::Deserializer::from_str(text);
    let file: TargetFile = serde_path_to_error::deserialize(&mut de).map_err(|e| {
        let path = e.path().to_string();
        let inner = e.into_inner();
        Error::Parse {
            location: format!("line {} column {} (field `{path}`)", inner.line(), inner.column()),
            message: inner.to_string(),
        }
    })?;
    let m: DMatrix<f64> = crate::io::matrix_from_rows(&file.rows)?;
    if !m.is_square() || !m.nrows().is_multiple_of(2) || m.nrows() == 0 {
        return Err(Error::Validation(format!(
            "target must be square with even dimension, got {}x{}",
            m.nrows(),
            m.ncols()
        )));
    }
    QuadSymplectic::new(m)
}
