//! Covariance-matrix-adaptation evolution strategy with deterministic,
//! evaluation-order independent seeding.

use std::f64::consts::TAU;

use nalgebra::{DMatrix, DVector, SymmetricEigen};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::io::lossy_f64;

pub const DEFAULT_GENERATIONS: usize = 5000;
pub const DEFAULT_SIGMA0: f64 = 0.3;
/// Restarts whose fitness is within this of the best are ranked by `f2`.
pub const TIE_TOLERANCE: f64 = 1e-10;

const SIGMA_MIN: f64 = 1e-20;
const SIGMA_MAX: f64 = 1e3;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OptimizerConfig {
    pub population: usize,
    pub generations: usize,
    pub sigma0: f64,
    pub seed: u64,
    #[serde(default)]
    pub noise_weight: f64,
}

/// `4 + ⌊3 ln dim⌋`, rounded up to an even number.
pub fn default_population(dim: usize) -> usize {
    let base = 4 + (3.0 * (dim.max(1) as f64).ln()).floor() as usize;
    base + base % 2
}

impl OptimizerConfig {
    pub fn for_dimension(dim: usize) -> Self {
        Self {
            population: default_population(dim),
            generations: DEFAULT_GENERATIONS,
            sigma0: DEFAULT_SIGMA0,
            seed: 0,
            noise_weight: 0.0,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.population < 4 || !self.population.is_multiple_of(2) {
            return Err(Error::InvalidConfig(format!(
                "population must be even and at least 4, got {}",
                self.population
            )));
        }
        if self.generations == 0 {
            return Err(Error::InvalidConfig("generations must be positive".into()));
        }
        if !(self.sigma0.is_finite() && self.sigma0 > 0.0) {
            return Err(Error::InvalidConfig(format!(
                "initial step must be positive, got {}",
                self.sigma0
            )));
        }
        if !(self.noise_weight.is_finite() && self.noise_weight >= 0.0) {
            return Err(Error::InvalidConfig(format!(
                "noise weight must be nonnegative, got {}",
                self.noise_weight
            )));
        }
        Ok(())
    }
}

/// Scalar fitness together with the components it was built from.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Evaluation {
    #[serde(with = "lossy_f64")]
    pub fitness: f64,
    pub f1: Option<f64>,
    pub f2: Option<f64>,
    pub f3: Option<f64>,
}

impl Evaluation {
    pub fn scalar(fitness: f64) -> Self {
        Self {
            fitness,
            f1: None,
            f2: None,
            f3: None,
        }
    }

    pub fn infeasible() -> Self {
        Self::scalar(f64::INFINITY)
    }

    /// NaN counts as infeasible.
    fn rank_key(&self) -> f64 {
        if self.fitness.is_nan() {
            f64::INFINITY
        } else {
            self.fitness
        }
    }
}

/// A pure objective over `ℝ^dim`.
pub trait FitnessFunction: Sync {
    fn dim(&self) -> usize;
    fn evaluate(&self, x: &[f64]) -> Evaluation;
}

/// Adapts a closure returning a plain scalar.
pub struct ScalarFitness<F> {
    dim: usize,
    f: F,
}

impl<F: Fn(&[f64]) -> f64 + Sync> ScalarFitness<F> {
    pub fn new(dim: usize, f: F) -> Self {
        Self { dim, f }
    }
}

impl<F: Fn(&[f64]) -> f64 + Sync> FitnessFunction for ScalarFitness<F> {
    fn dim(&self) -> usize {
        self.dim
    }

    fn evaluate(&self, x: &[f64]) -> Evaluation {
        Evaluation::scalar((self.f)(x))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GenerationRecord {
    pub generation: usize,
    /// Best fitness seen so far, including this generation.
    #[serde(with = "lossy_f64")]
    pub best_fitness: f64,
    /// Mean over the feasible mutants of this generation.
    #[serde(with = "lossy_f64")]
    pub mean_fitness: f64,
    pub sigma: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OptimizationTrace {
    pub seed: u64,
    pub records: Vec<GenerationRecord>,
    pub best_x: Vec<f64>,
    pub best: Evaluation,
    pub evaluations: usize,
}

fn stream_rng(seed: u64, stream: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}

fn mutant_stream(generation: usize, index: usize) -> u64 {
    ((generation as u64) << 32) | index as u64
}

const INITIAL_STREAM: u64 = u64::MAX;

/// Runs `config.generations` generations of CMA-ES from a mean drawn
/// uniformly in `[0, 2π)^dim`.
pub fn optimize<F: FitnessFunction + ?Sized>(f: &F, config: &OptimizerConfig) -> Result<OptimizationTrace> {
    config.validate()?;
    let n = f.dim();
    if n == 0 {
        return Err(Error::InvalidConfig("objective has no parameters".into()));
    }
    let lambda = config.population;
    let mu = lambda / 2;
    let raw: Vec<f64> = (1..=mu)
        .map(|i| (mu as f64 + 0.5).ln() - (i as f64).ln())
        .collect();
    let total: f64 = raw.iter().sum();
    let weights: Vec<f64> = raw.iter().map(|w| w / total).collect();
    let mu_eff = 1.0 / weights.iter().map(|w| w * w).sum::<f64>();
    let nf = n as f64;

    let c_sigma = (mu_eff + 2.0) / (nf + mu_eff + 5.0);
    let d_sigma = 1.0 + 2.0 * (((mu_eff - 1.0) / (nf + 1.0)).sqrt() - 1.0).max(0.0) + c_sigma;
    let c_c = (4.0 + mu_eff / nf) / (nf + 4.0 + 2.0 * mu_eff / nf);
    let c_1 = 2.0 / ((nf + 1.3).powi(2) + mu_eff);
    let c_mu = (1.0 - c_1).min(2.0 * (mu_eff - 2.0 + 1.0 / mu_eff) / ((nf + 2.0).powi(2) + mu_eff));
    let chi_n = nf.sqrt() * (1.0 - 1.0 / (4.0 * nf) + 1.0 / (21.0 * nf * nf));

    let mut init_rng = stream_rng(config.seed, INITIAL_STREAM);
    let mut mean = DVector::from_fn(n, |_, _| init_rng.random_range(0.0..TAU));
    let mut sigma = config.sigma0;
    let mut cov = DMatrix::<f64>::identity(n, n);
    let mut p_sigma = DVector::<f64>::zeros(n);
    let mut p_c = DVector::<f64>::zeros(n);

    let first = f.evaluate(mean.as_slice());
    let mut evaluations = 1;
    let mut best = first;
    let mut best_x = mean.as_slice().to_vec();
    let mut records = Vec::with_capacity(config.generations);

    for generation in 0..config.generations {
        let eig = SymmetricEigen::new(cov.clone());
        let max_ev = eig.eigenvalues.max().max(f64::MIN_POSITIVE);
        let d = eig.eigenvalues.map(|v| v.max(max_ev * 1e-28).sqrt());
        let b = eig.eigenvectors;
        let bd = &b * DMatrix::from_diagonal(&d);

        let steps: Vec<DVector<f64>> = (0..lambda)
            .map(|k| {
                let mut rng = stream_rng(config.seed, mutant_stream(generation, k));
                let z = DVector::from_fn(n, |_, _| rng.sample::<f64, _>(StandardNormal));
                &bd * z
            })
            .collect();
        let points: Vec<DVector<f64>> = steps.iter().map(|y| &mean + y * sigma).collect();
        let evals: Vec<Evaluation> = points
            .par_iter()
            .map(|x| f.evaluate(x.as_slice()))
            .collect();
        evaluations += lambda;

        let mut order: Vec<usize> = (0..lambda).collect();
        order.sort_by(|&a, &b| {
            evals[a]
                .rank_key()
                .total_cmp(&evals[b].rank_key())
                .then(a.cmp(&b))
        });

        let top = order[0];
        if evals[top].rank_key() < best.rank_key() {
            best = evals[top];
            best_x = points[top].as_slice().to_vec();
        }
        let feasible: Vec<f64> = evals
            .iter()
            .map(Evaluation::rank_key)
            .filter(|v| v.is_finite())
            .collect();
        let mean_fitness = if feasible.is_empty() {
            f64::INFINITY
        } else {
            feasible.iter().sum::<f64>() / feasible.len() as f64
        };

        let mut y_w = DVector::zeros(n);
        for (w, &i) in weights.iter().zip(&order) {
            y_w.axpy(*w, &steps[i], 1.0);
        }
        mean += &y_w * sigma;

        let inv_sqrt = &b * DMatrix::from_diagonal(&d.map(|v| 1.0 / v)) * b.transpose();
        p_sigma = &p_sigma * (1.0 - c_sigma) + (&inv_sqrt * &y_w) * (c_sigma * (2.0 - c_sigma) * mu_eff).sqrt();
        let ps_norm = p_sigma.norm();
        let denom = (1.0 - (1.0 - c_sigma).powi(2 * (generation as i32 + 1))).sqrt();
        let h_sigma = if ps_norm / denom < (1.4 + 2.0 / (nf + 1.0)) * chi_n { 1.0 } else { 0.0 };
        p_c = &p_c * (1.0 - c_c) + &y_w * (h_sigma * (c_c * (2.0 - c_c) * mu_eff).sqrt());

        let mut rank_mu = DMatrix::zeros(n, n);
        for (w, &i) in weights.iter().zip(&order) {
            rank_mu += &steps[i] * steps[i].transpose() * *w;
        }
        let decay = 1.0 - c_1 - c_mu + (1.0 - h_sigma) * c_1 * c_c * (2.0 - c_c);
        cov = &cov * decay + &p_c * p_c.transpose() * c_1 + rank_mu * c_mu;
        cov = (&cov + cov.transpose()) * 0.5;

        sigma *= ((c_sigma / d_sigma) * (ps_norm / chi_n - 1.0)).exp();
        sigma = sigma.clamp(SIGMA_MIN, SIGMA_MAX);

        records.push(GenerationRecord {
            generation,
            best_fitness: best.rank_key(),
            mean_fitness,
            sigma,
        });
    }

    Ok(OptimizationTrace {
        seed: config.seed,
        records,
        best_x,
        best,
        evaluations,
    })
}

/// Summary of one restart.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RestartSummary {
    pub seed: u64,
    #[serde(with = "lossy_f64")]
    pub fitness: f64,
    pub f2: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MultistartOutcome {
    pub best: OptimizationTrace,
    pub restarts: Vec<RestartSummary>,
}

/// Runs `restarts` independent optimizations with seeds `seed, seed+1, …`
/// and keeps the lowest fitness. Runs within [`TIE_TOLERANCE`] of the best
/// are ranked by `f2` when it is reported, then by seed.
pub fn multistart<F: FitnessFunction + ?Sized>(
    f: &F,
    config: &OptimizerConfig,
    restarts: usize,
) -> Result<MultistartOutcome> {
    if restarts == 0 {
        return Err(Error::InvalidConfig("restarts must be at least 1".into()));
    }
    config.validate()?;
    let traces: Vec<OptimizationTrace> = (0..restarts)
        .into_par_iter()
        .map(|r| {
            let cfg = OptimizerConfig {
                seed: config.seed.wrapping_add(r as u64),
                ..config.clone()
            };
            optimize(f, &cfg)
        })
        .collect::<Result<_>>()?;
    let min = traces
        .iter()
        .map(|t| t.best.rank_key())
        .fold(f64::INFINITY, f64::min);
    let chosen = traces
        .iter()
        .enumerate()
        .filter(|(_, t)| t.best.rank_key() <= min + TIE_TOLERANCE)
        .min_by(|(ia, a), (ib, b)| {
            let ka = a.best.f2.unwrap_or(a.best.rank_key());
            let kb = b.best.f2.unwrap_or(b.best.rank_key());
            ka.total_cmp(&kb)
                .then(a.best.rank_key().total_cmp(&b.best.rank_key()))
                .then(ia.cmp(ib))
        })
        .map(|(i, _)| i)
        .expect("at least one restart");
    let restarts = traces
        .iter()
        .map(|t| RestartSummary {
            seed: t.seed,
            fitness: t.best.rank_key(),
            f2: t.best.f2,
        })
        .collect();
    Ok(MultistartOutcome {
        best: traces[chosen].clone(),
        restarts,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sphere(x: &[f64]) -> f64 {
        x.iter().map(|v| v * v).sum()
    }

    #[test]
    fn default_population_is_even() {
        assert_eq!(default_population(7), 10);
        assert_eq!(default_population(15), 12);
        for d in 1..50 {
            let p = default_population(d);
            assert!(p >= 4 && p.is_multiple_of(2));
        }
    }

    #[test]
    fn config_validation() {
        let mut c = OptimizerConfig::for_dimension(5);
        assert!(c.validate().is_ok());
        c.population = 5;
        assert!(matches!(c.validate(), Err(Error::InvalidConfig(_))));
        c.population = 2;
        assert!(c.validate().is_err());
        c.population = 6;
        c.sigma0 = 0.0;
        assert!(c.validate().is_err());
    }

    #[test]
    fn sphere_converges() {
        let f = ScalarFitness::new(7, sphere);
        let cfg = OptimizerConfig {
            population: 14,
            generations: 500,
            sigma0: 1.0,
            seed: 1,
            noise_weight: 0.0,
        };
        let t = optimize(&f, &cfg).unwrap();
        assert!(t.best.fitness <= 1e-10, "{}", t.best.fitness);
        assert!(t.evaluations <= 14 * 500 + 1);
    }

    #[test]
    fn incumbent_is_monotone() {
        let f = ScalarFitness::new(4, |x: &[f64]| sphere(x) + (3.0 * x[0]).sin());
        let cfg = OptimizerConfig {
            generations: 200,
            ..OptimizerConfig::for_dimension(4)
        };
        let t = optimize(&f, &cfg).unwrap();
        for w in t.records.windows(2) {
            assert!(w[1].best_fitness <= w[0].best_fitness);
        }
    }

    #[test]
    fn infeasible_points_do_not_abort() {
        let f = ScalarFitness::new(3, |x: &[f64]| if x[0] > 3.0 { f64::NAN } else { sphere(x) });
        let cfg = OptimizerConfig {
            generations: 300,
            ..OptimizerConfig::for_dimension(3)
        };
        let t = optimize(&f, &cfg).unwrap();
        assert!(t.best.fitness < 1e-6);
    }

    #[test]
    fn identical_seeds_are_bit_identical() {
        let f = ScalarFitness::new(5, |x: &[f64]| sphere(x) + x[1].cos());
        let cfg = OptimizerConfig {
            generations: 100,
            seed: 42,
            ..OptimizerConfig::for_dimension(5)
        };
        let a = optimize(&f, &cfg).unwrap();
        let b = optimize(&f, &cfg).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn multistart_single_equals_optimize() {
        let f = ScalarFitness::new(3, sphere);
        let cfg = OptimizerConfig {
            generations: 50,
            seed: 9,
            ..OptimizerConfig::for_dimension(3)
        };
        let single = optimize(&f, &cfg).unwrap();
        let multi = multistart(&f, &cfg, 1).unwrap();
        assert_eq!(single, multi.best);
        assert!(multistart(&f, &cfg, 0).is_err());
    }

    #[test]
    fn multistart_is_no_worse() {
        let f = ScalarFitness::new(6, |x: &[f64]| sphere(x) + 2.0 * (2.0 * x[2]).sin().abs());
        let cfg = OptimizerConfig {
            generations: 40,
            seed: 3,
            ..OptimizerConfig::for_dimension(6)
        };
        let single = optimize(&f, &cfg).unwrap();
        let multi = multistart(&f, &cfg, 3).unwrap();
        assert!(multi.best.best.fitness <= single.best.fitness);
        assert_eq!(multi.restarts.len(), 3);
    }
}
