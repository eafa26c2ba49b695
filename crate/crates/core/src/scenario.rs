//! Scenario files, built-in scenarios and the synthesis problem they describe.

use std::path::Path;

use nalgebra::DMatrix;
use num_complex::Complex64;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::io::{matrix_from_rows, matrix_to_rows};
use crate::mbqc::{
    ancilla_slots, db_to_variance, eliminate, fitness_f1, fitness_f2, fitness_f3,
    nullifier_variances, r_to_variance, ClusterGraph, MbqcResult, NullifierVariance,
    SqueezingSpec,
};
use crate::optimizer::{default_population, Evaluation, FitnessFunction, OptimizerConfig};
use crate::oracle::{mc_estimate_network, McEstimate};
use crate::parameterization::{assemble_umhd, AngleVector, RotationPlan};
use crate::symplectic::{ModeUnitary, QuadSymplectic, UNITARY_TOL};

pub const UNITS: &str = "shot_noise";
pub const DEFAULT_RESTARTS: usize = 8;

/// A complex matrix as separate real and imaginary row-major arrays.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ComplexRows {
    pub re: Vec<Vec<f64>>,
    #[serde(default)]
    pub im: Option<Vec<Vec<f64>>>,
}

impl ComplexRows {
    pub fn from_matrix(m: &DMatrix<Complex64>) -> Self {
        Self {
            re: matrix_to_rows(&m.map(|v| v.re)),
            im: Some(matrix_to_rows(&m.map(|v| v.im))),
        }
    }

    pub fn to_matrix(&self) -> Result<DMatrix<Complex64>> {
        let re = matrix_from_rows(&self.re)?;
        let im = match &self.im {
            Some(rows) => matrix_from_rows(rows)?,
            None => DMatrix::zeros(re.nrows(), re.ncols()),
        };
        if re.shape() != im.shape() {
            return Err(Error::Validation(format!(
                "real part is {}x{} but imaginary part is {}x{}",
                re.nrows(),
                re.ncols(),
                im.nrows(),
                im.ncols()
            )));
        }
        Ok(re.zip_map(&im, Complex64::new))
    }
}

/// Diagonal entries of a complex diagonal matrix.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ComplexDiagonal {
    pub re: Vec<f64>,
    pub im: Vec<f64>,
}

/// One ancilla's squeezing, in exactly one unit.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", deny_unknown_fields)]
pub enum SqueezingEntry {
    /// Squeezed variance in decibels relative to shot noise.
    Db(f64),
    /// Squeezing parameter, variance `e^{-2r}`.
    R(f64),
    /// Squeezed variance in shot-noise units.
    Variance(f64),
}

impl SqueezingEntry {
    pub fn variance(&self) -> f64 {
        match *self {
            SqueezingEntry::Db(d) => db_to_variance(d),
            SqueezingEntry::R(r) => r_to_variance(r),
            SqueezingEntry::Variance(v) => v,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum ObjectiveSpec {
    F1,
    F1PlusWeightedF2 { weight: f64 },
    F3 { graph: Vec<Vec<f64>> },
}

/// Optimizer settings; omitted fields take dimension-dependent defaults.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OptimizerSpec {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub population: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub generations: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub sigma0: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub seed: Option<u64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub noise_weight: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub restarts: Option<usize>,
}

/// On-disk scenario description.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScenarioFile {
    pub name: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub description: Option<String>,
    pub units: String,
    pub n: usize,
    pub m: usize,
    pub u_t: ComplexRows,
    /// Replace `u_t` by its nearest unitary instead of rejecting it.
    #[serde(default)]
    pub repair_unitary: bool,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub fixed_premultiplier: Option<ComplexDiagonal>,
    pub input_positions: Vec<usize>,
    pub squeezing: Vec<SqueezingEntry>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub target: Option<Vec<Vec<f64>>>,
    pub objective: ObjectiveSpec,
    #[serde(default)]
    pub optimizer: OptimizerSpec,
}

#[derive(Debug, Clone, PartialEq)]
pub enum Objective {
    F1,
    F1PlusWeightedF2(f64),
    F3(ClusterGraph),
}

/// A validated scenario.
#[derive(Debug, Clone)]
pub struct SynthesisProblem {
    pub name: String,
    pub n: usize,
    pub m: usize,
    pub u_t: ModeUnitary,
    /// Frobenius distance moved when projecting the given `U_T` to a unitary.
    pub u_t_projection_residual: f64,
    pub fixed_premultiplier: Option<Vec<Complex64>>,
    pub input_positions: Vec<usize>,
    pub squeezing: SqueezingSpec,
    pub target: Option<QuadSymplectic>,
    pub objective: Objective,
    pub optimizer: OptimizerConfig,
    pub restarts: usize,
    pub plan: RotationPlan,
    u_t_eff: ModeUnitary,
    source: ScenarioFile,
}

/// Everything derived from one parameter point.
#[derive(Debug, Clone)]
pub struct Solution {
    pub angles: AngleVector,
    pub umhd: ModeUnitary,
    pub result: Option<MbqcResult>,
    pub nullifiers: Option<Vec<NullifierVariance>>,
    pub evaluation: Evaluation,
}

impl SynthesisProblem {
    pub fn from_file(file: ScenarioFile) -> Result<Self> {
        if file.units != UNITS {
            return Err(Error::Validation(format!(
                "units must be \"{UNITS}\", got \"{}\"",
                file.units
            )));
        }
        let total = file.n + file.m;
        if total == 0 {
            return Err(Error::Validation("scenario has no modes".into()));
        }
        let raw = file.u_t.to_matrix()?;
        if raw.nrows() != total || raw.ncols() != total {
            return Err(Error::Validation(format!(
                "u_t is {}x{} but n + m = {total}",
                raw.nrows(),
                raw.ncols()
            )));
        }
        let (u_t, u_t_projection_residual) = if file.repair_unitary {
            ModeUnitary::nearest(&raw)?
        } else {
            (ModeUnitary::new(raw)?, 0.0)
        };

        let fixed_premultiplier = match &file.fixed_premultiplier {
            None => None,
            Some(d) => {
                if d.re.len() != total || d.im.len() != total {
                    return Err(Error::Validation(format!(
                        "fixed_premultiplier must have {total} entries"
                    )));
                }
                let entries: Vec<Complex64> = d
                    .re
                    .iter()
                    .zip(&d.im)
                    .map(|(&a, &b)| Complex64::new(a, b))
                    .collect();
                if let Some(k) = entries.iter().position(|z| (z.norm() - 1.0).abs() > UNITARY_TOL) {
                    return Err(Error::Validation(format!(
                        "fixed_premultiplier entry {k} does not have unit modulus"
                    )));
                }
                Some(entries)
            }
        };
        let u_t_eff = match &fixed_premultiplier {
            None => u_t.clone(),
            Some(d) => {
                let mut m = u_t.matrix().clone();
                for (c, z) in d.iter().enumerate() {
                    m.column_mut(c).iter_mut().for_each(|v| *v *= z);
                }
                ModeUnitary::new(m)?
            }
        };

        ancilla_slots(total, file.n, &file.input_positions).map_err(|e| match e {
            Error::DimensionMismatch { expected, found, .. } => Error::Validation(format!(
                "input_positions has {found} entries but n = {expected}"
            )),
            other => other,
        })?;
        if file.squeezing.len() != file.m {
            return Err(Error::Validation(format!(
                "squeezing has {} entries but m = {}",
                file.squeezing.len(),
                file.m
            )));
        }
        let squeezing =
            SqueezingSpec::new(file.squeezing.iter().map(SqueezingEntry::variance).collect())?;

        let (objective, target, plan) = match &file.objective {
            ObjectiveSpec::F3 { graph } => {
                if file.n != 0 {
                    return Err(Error::Validation("objective f3 requires n = 0".into()));
                }
                if file.target.is_some() {
                    return Err(Error::Validation("objective f3 takes no target".into()));
                }
                let g = ClusterGraph::new(matrix_from_rows(graph)?)?;
                if g.m() != file.m {
                    return Err(Error::Validation(format!(
                        "graph has {} nodes but m = {}",
                        g.m(),
                        file.m
                    )));
                }
                (Objective::F3(g), None, RotationPlan::full(total))
            }
            spec => {
                if file.n == 0 {
                    return Err(Error::Validation("objectives f1/f2 need n >= 1".into()));
                }
                let rows = file
                    .target
                    .as_ref()
                    .ok_or_else(|| Error::Validation("target is required".into()))?;
                let t = matrix_from_rows(rows)?;
                if t.nrows() != 2 * file.n || t.ncols() != 2 * file.n {
                    return Err(Error::Validation(format!(
                        "target is {}x{} but must be {}x{}",
                        t.nrows(),
                        t.ncols(),
                        2 * file.n,
                        2 * file.n
                    )));
                }
                let target = QuadSymplectic::new(t)?;
                let objective = match spec {
                    ObjectiveSpec::F1PlusWeightedF2 { weight } => {
                        if !(weight.is_finite() && *weight >= 0.0) {
                            return Err(Error::Validation(format!(
                                "noise weight must be nonnegative, got {weight}"
                            )));
                        }
                        Objective::F1PlusWeightedF2(*weight)
                    }
                    _ => Objective::F1,
                };
                (objective, Some(target), RotationPlan::for_outputs(file.n, file.m))
            }
        };

        let dim = plan.len() + total;
        let o = &file.optimizer;
        let noise_weight = match objective {
            Objective::F1PlusWeightedF2(w) => w,
            _ => o.noise_weight.unwrap_or(0.0),
        };
        let optimizer = OptimizerConfig {
            population: o.population.unwrap_or_else(|| default_population(dim)),
            generations: o.generations.unwrap_or(crate::optimizer::DEFAULT_GENERATIONS),
            sigma0: o.sigma0.unwrap_or(crate::optimizer::DEFAULT_SIGMA0),
            seed: o.seed.unwrap_or(0),
            noise_weight,
        };
        optimizer
            .validate()
            .map_err(|e| Error::Validation(e.to_string()))?;
        let restarts = o.restarts.unwrap_or(DEFAULT_RESTARTS);
        if restarts == 0 {
            return Err(Error::Validation("restarts must be at least 1".into()));
        }

        Ok(Self {
            name: file.name.clone(),
            n: file.n,
            m: file.m,
            u_t,
            u_t_projection_residual,
            fixed_premultiplier,
            input_positions: file.input_positions.clone(),
            squeezing,
            target,
            objective,
            optimizer,
            restarts,
            plan,
            u_t_eff,
            source: file,
        })
    }

    /// The scenario this problem was built from, with any overrides applied.
    pub fn to_file(&self) -> &ScenarioFile {
        &self.source
    }

    /// Replaces the optimizer settings and restart count.
    pub fn with_optimizer(&self, config: OptimizerConfig, restarts: usize) -> Result<Self> {
        let mut file = self.source.clone();
        if let ObjectiveSpec::F1PlusWeightedF2 { .. } = file.objective {
            file.objective = ObjectiveSpec::F1PlusWeightedF2 {
                weight: config.noise_weight,
            };
        } else if config.noise_weight > 0.0 && matches!(file.objective, ObjectiveSpec::F1) {
            file.objective = ObjectiveSpec::F1PlusWeightedF2 {
                weight: config.noise_weight,
            };
        }
        file.optimizer = OptimizerSpec {
            population: Some(config.population),
            generations: Some(config.generations),
            sigma0: Some(config.sigma0),
            seed: Some(config.seed),
            noise_weight: Some(config.noise_weight),
            restarts: Some(restarts),
        };
        Self::from_file(file)
    }

    /// SHA-256 of the canonical JSON encoding of the scenario.
    pub fn digest(&self) -> String {
        let bytes = serde_json::to_vec(&self.source).expect("scenario serializes");
        let hash = Sha256::digest(&bytes);
        hash.iter().map(|b| format!("{b:02x}")).collect()
    }

    pub fn total_modes(&self) -> usize {
        self.n + self.m
    }

    /// `U_T` with the fixed premultiplier applied from the right.
    pub fn effective_u_t(&self) -> &ModeUnitary {
        &self.u_t_eff
    }

    pub fn n_parameters(&self) -> usize {
        self.plan.len() + self.total_modes()
    }

    pub fn umhd(&self, angles: &AngleVector) -> Result<ModeUnitary> {
        assemble_umhd(&angles.theta, &angles.phi, &self.u_t_eff, &self.plan)
    }

    /// Evaluates every quantity of interest at `angles`.
    pub fn solve(&self, angles: &AngleVector) -> Result<Solution> {
        let umhd = self.umhd(angles)?;
        match &self.objective {
            Objective::F3(graph) => {
                let nv = nullifier_variances(&umhd, &self.squeezing, graph)?;
                let f3 = fitness_f3(&nv);
                Ok(Solution {
                    angles: angles.clone(),
                    umhd,
                    result: None,
                    nullifiers: Some(nv),
                    evaluation: Evaluation {
                        fitness: f3,
                        f1: None,
                        f2: None,
                        f3: Some(f3),
                    },
                })
            }
            _ => {
                let result = eliminate(&umhd, self.n, self.m, &self.input_positions, &self.squeezing)?;
                let target = self.target.as_ref().expect("validated target");
                let f1 = fitness_f1(&result, target)?;
                let f2 = fitness_f2(&result);
                Ok(Solution {
                    angles: angles.clone(),
                    umhd,
                    result: Some(result),
                    nullifiers: None,
                    evaluation: Evaluation {
                        fitness: f1 + self.optimizer.noise_weight * f2,
                        f1: Some(f1),
                        f2: Some(f2),
                        f3: None,
                    },
                })
            }
        }
    }

    /// Monte-Carlo regression estimate of the effective operation at `angles`.
    pub fn mc_estimate(&self, angles: &AngleVector, samples: usize, seed: u64) -> Result<McEstimate> {
        if self.n == 0 {
            return Err(Error::Validation(
                "Monte-Carlo regression needs at least one input mode".into(),
            ));
        }
        let umhd = self.umhd(angles)?;
        mc_estimate_network(
            &umhd,
            self.n,
            self.m,
            &self.input_positions,
            &self.squeezing,
            samples,
            seed,
        )
    }
}

impl FitnessFunction for SynthesisProblem {
    fn dim(&self) -> usize {
        self.n_parameters()
    }

    fn evaluate(&self, x: &[f64]) -> Evaluation {
        let Ok(angles) = AngleVector::from_flat(x, &self.plan) else {
            return Evaluation::infeasible();
        };
        match self.solve(&angles) {
            Ok(s) => s.evaluation,
            Err(_) => Evaluation::infeasible(),
        }
    }
}

fn parse_error(e: serde_path_to_error::Error<serde_json::Error>) -> Error {
    let path = e.path().to_string();
    let inner = e.into_inner();
    let location = if path.is_empty() || path == "." {
        format!("line {} column {}", inner.line(), inner.column())
    } else {
        format!("line {} column {} (field `{path}`)", inner.line(), inner.column())
    };
    Error::Parse {
        location,
        message: inner.to_string(),
    }
}

pub fn parse_scenario(text: &str) -> Result<ScenarioFile> {
    let mut de = serde_json::Deserializer::from_str(text);
    let file: ScenarioFile = serde_path_to_error::deserialize(&mut de).map_err(parse_error)?;
    de.end().map_err(|e| Error::Parse {
        location: format!("line {} column {}", e.line(), e.column()),
        message: e.to_string(),
    })?;
    Ok(file)
}

pub fn load_scenario(path: &Path) -> Result<SynthesisProblem> {
    let text = std::fs::read_to_string(path)?;
    SynthesisProblem::from_file(parse_scenario(&text)?)
}

pub fn save_scenario(problem: &SynthesisProblem, path: &Path) -> Result<()> {
    let text = serde_json::to_string_pretty(problem.to_file()).expect("scenario serializes");
    std::fs::write(path, text + "\n")?;
    Ok(())
}

/// A built-in name, or otherwise a path to a scenario file.
pub fn resolve_scenario(name_or_path: &str) -> Result<SynthesisProblem> {
    match builtin(name_or_path) {
        Some(file) => SynthesisProblem::from_file(file),
        None => load_scenario(Path::new(name_or_path)),
    }
}

pub const BUILTIN_NAMES: [&str; 3] = ["fourier4", "cz6", "linear_cluster4"];

/// The 6×6 pixel-basis change of basis of the six-mode experiment, as printed
/// to three significant figures.
pub const PIXEL_BASIS_6: [[f64; 6]; 6] = [
    [-0.45, -0.619, 0.536, 0.334, -0.124, -0.00859],
    [-0.363, -0.326, -0.161, -0.635, 0.521, 0.246],
    [-0.334, -0.133, -0.383, -0.248, -0.402, -0.708],
    [-0.326, 0.0013, -0.466, 0.143, -0.498, 0.639],
    [-0.365, 0.155, -0.382, 0.607, 0.547, -0.174],
    [-0.561, 0.685, 0.421, -0.187, -0.0645, 0.0107],
];

/// Non-canonical stand-in for the four-mode basis change: columns are the
/// sign patterns `++++`, `++--`, `+--+`, `+-+-` over four spectral pixels.
pub const PIXEL_STANDIN_4: [[f64; 4]; 4] = [
    [0.5, 0.5, 0.5, 0.5],
    [0.5, 0.5, -0.5, -0.5],
    [0.5, -0.5, -0.5, 0.5],
    [0.5, -0.5, 0.5, -0.5],
];

fn rows<const N: usize>(m: &[[f64; N]; N]) -> Vec<Vec<f64>> {
    m.iter().map(|r| r.to_vec()).collect()
}

fn fourier_target() -> Vec<Vec<f64>> {
    vec![vec![0.0, -1.0], vec![1.0, 0.0]]
}

fn cz_target() -> Vec<Vec<f64>> {
    vec![
        vec![1.0, 0.0, 0.0, 0.0],
        vec![0.0, 1.0, 0.0, 0.0],
        vec![0.0, 1.0, 1.0, 0.0],
        vec![1.0, 0.0, 0.0, 1.0],
    ]
}

pub fn builtin(name: &str) -> Option<ScenarioFile> {
    let file = match name {
        "fourier4" => ScenarioFile {
            name: name.into(),
            description: Some(
                "Single-mode Fourier transform; u_t is a non-canonical 4-pixel stand-in".into(),
            ),
            units: UNITS.into(),
            n: 1,
            m: 3,
            u_t: ComplexRows {
                re: rows(&PIXEL_STANDIN_4),
                im: None,
            },
            repair_unitary: false,
            fixed_premultiplier: None,
            input_positions: vec![3],
            squeezing: vec![
                SqueezingEntry::Db(-7.0),
                SqueezingEntry::Db(-6.0),
                SqueezingEntry::Db(-4.0),
            ],
            target: Some(fourier_target()),
            objective: ObjectiveSpec::F1,
            optimizer: OptimizerSpec::default(),
        },
        "cz6" => ScenarioFile {
            name: name.into(),
            description: Some("Two-mode C_Z gate on the six-mode pixel basis".into()),
            units: UNITS.into(),
            n: 2,
            m: 4,
            u_t: ComplexRows {
                re: rows(&PIXEL_BASIS_6),
                im: None,
            },
            repair_unitary: true,
            fixed_premultiplier: Some(ComplexDiagonal {
                re: vec![1.0, 1.0, 0.0, 1.0, 0.0, 1.0],
                im: vec![0.0, 0.0, 1.0, 0.0, 1.0, 0.0],
            }),
            input_positions: vec![0, 1],
            squeezing: [0.79, 0.36, 0.14, 0.05]
                .into_iter()
                .map(SqueezingEntry::R)
                .collect(),
            target: Some(cz_target()),
            objective: ObjectiveSpec::F1,
            optimizer: OptimizerSpec::default(),
        },
        "linear_cluster4" => ScenarioFile {
            name: name.into(),
            description: Some(
                "Four-node linear cluster nullifiers; u_t is the 4-pixel stand-in".into(),
            ),
            units: UNITS.into(),
            n: 0,
            m: 4,
            u_t: ComplexRows {
                re: rows(&PIXEL_STANDIN_4),
                im: None,
            },
            repair_unitary: false,
            fixed_premultiplier: None,
            input_positions: vec![],
            squeezing: [-7.0, -6.0, -4.0, 0.0]
                .into_iter()
                .map(SqueezingEntry::Db)
                .collect(),
            target: None,
            objective: ObjectiveSpec::F3 {
                graph: matrix_to_rows(ClusterGraph::path(4).adjacency()),
            },
            optimizer: OptimizerSpec::default(),
        },
        _ => return None,
    };
    Some(file)
}
