//! Tunable network `U_MHD(θ, φ) = O(θ) · Δ_LO(φ) · U_T`.

use std::f64::consts::TAU;

use nalgebra::DMatrix;
use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::symplectic::ModeUnitary;

/// Ordered planar rotations, each touching at least one output mode.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RotationPlan {
    n_modes: usize,
    pairs: Vec<(usize, usize)>,
}

impl RotationPlan {
    pub fn new(n_modes: usize, outputs: &[usize], pairs: Vec<(usize, usize)>) -> Result<Self> {
        for &(i, j) in &pairs {
            if i >= n_modes || j >= n_modes || i == j {
                return Err(Error::Validation(format!(
                    "rotation pair ({i}, {j}) invalid for {n_modes} modes"
                )));
            }
            if !outputs.contains(&i) && !outputs.contains(&j) {
                return Err(Error::Validation(format!(
                    "rotation pair ({i}, {j}) does not touch an output mode"
                )));
            }
        }
        Ok(Self { n_modes, pairs })
    }

    /// Output–ancilla pairs then output–output pairs, for `n` outputs placed
    /// after `m` measured modes. Length `n·m + n(n-1)/2`.
    pub fn for_outputs(n: usize, m: usize) -> Self {
        let outputs = m..n + m;
        let mut pairs = Vec::with_capacity(n * m + n * n.saturating_sub(1) / 2);
        for o in outputs.clone() {
            for a in 0..m {
                pairs.push((a, o));
            }
        }
        for o1 in outputs.clone() {
            for o2 in o1 + 1..n + m {
                pairs.push((o1, o2));
            }
        }
        Self {
            n_modes: n + m,
            pairs,
        }
    }

    /// Every pair `i < j`, for problems in which all modes are read out.
    pub fn full(n_modes: usize) -> Self {
        let pairs = (0..n_modes)
            .flat_map(|i| (i + 1..n_modes).map(move |j| (i, j)))
            .collect();
        Self { n_modes, pairs }
    }

    pub fn n_modes(&self) -> usize {
        self.n_modes
    }

    pub fn len(&self) -> usize {
        self.pairs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.pairs.is_empty()
    }

    pub fn pairs(&self) -> &[(usize, usize)] {
        &self.pairs
    }
}

/// Rotation angles `θ` and LO phases `φ`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AngleVector {
    pub theta: Vec<f64>,
    pub phi: Vec<f64>,
}

impl AngleVector {
    pub fn new(theta: Vec<f64>, phi: Vec<f64>, plan: &RotationPlan) -> Result<Self> {
        if theta.len() != plan.len() {
            return Err(Error::PlanMismatch {
                expected: plan.len(),
                found: theta.len(),
            });
        }
        if phi.len() != plan.n_modes() {
            return Err(Error::DimensionMismatch {
                what: "LO phases",
                expected: plan.n_modes(),
                found: phi.len(),
            });
        }
        Ok(Self { theta, phi })
    }

    /// Splits the optimizer layout `[θ…, φ…]`.
    pub fn from_flat(flat: &[f64], plan: &RotationPlan) -> Result<Self> {
        let k = plan.len();
        if flat.len() != k + plan.n_modes() {
            return Err(Error::DimensionMismatch {
                what: "parameter vector",
                expected: k + plan.n_modes(),
                found: flat.len(),
            });
        }
        Ok(Self {
            theta: flat[..k].to_vec(),
            phi: flat[k..].to_vec(),
        })
    }

    pub fn to_flat(&self) -> Vec<f64> {
        self.theta.iter().chain(&self.phi).copied().collect()
    }

    /// All angles reduced to `[0, 2π)`.
    pub fn wrapped(&self) -> Self {
        Self {
            theta: self.theta.iter().map(|t| t.rem_euclid(TAU)).collect(),
            phi: self.phi.iter().map(|p| p.rem_euclid(TAU)).collect(),
        }
    }
}

pub fn build_delta_lo(phi: &[f64]) -> ModeUnitary {
    ModeUnitary::phases(phi)
}

/// Planar rotation with `[i,i] = [j,j] = cos θ`, `[i,j] = -sin θ`, `[j,i] = sin θ`.
pub fn givens(n: usize, i: usize, j: usize, theta: f64) -> DMatrix<f64> {
    let mut g = DMatrix::identity(n, n);
    let (s, c) = theta.sin_cos();
    g[(i, i)] = c;
    g[(j, j)] = c;
    g[(i, j)] = -s;
    g[(j, i)] = s;
    g
}

/// `O(θ) = G₁ G₂ ⋯ G_K` in plan order.
pub fn build_postprocessing(theta: &[f64], plan: &RotationPlan) -> Result<DMatrix<f64>> {
    if theta.len() != plan.len() {
        return Err(Error::PlanMismatch {
            expected: plan.len(),
            found: theta.len(),
        });
    }
    let n = plan.n_modes();
    let mut o = DMatrix::identity(n, n);
    for (&(i, j), &t) in plan.pairs().iter().zip(theta).rev() {
        rotate_rows(&mut o, i, j, t.rem_euclid(TAU));
    }
    Ok(o)
}

/// Left-multiplies `m` by the planar rotation on rows `i`, `j`.
fn rotate_rows<T>(m: &mut DMatrix<T>, i: usize, j: usize, theta: f64)
where
    T: nalgebra::Scalar + Copy + std::ops::Mul<f64, Output = T> + std::ops::Add<Output = T> + std::ops::Sub<Output = T>,
{
    let (s, c) = theta.sin_cos();
    for k in 0..m.ncols() {
        let a = m[(i, k)];
        let b = m[(j, k)];
        m[(i, k)] = a * c - b * s;
        m[(j, k)] = a * s + b * c;
    }
}

/// `O(θ) · Δ_LO(φ) · U_T`.
pub fn assemble_umhd(
    theta: &[f64],
    phi: &[f64],
    u_t: &ModeUnitary,
    plan: &RotationPlan,
) -> Result<ModeUnitary> {
    let n = u_t.dim();
    if plan.n_modes() != n {
        return Err(Error::DimensionMismatch {
            what: "rotation plan modes",
            expected: n,
            found: plan.n_modes(),
        });
    }
    if phi.len() != n {
        return Err(Error::DimensionMismatch {
            what: "LO phases",
            expected: n,
            found: phi.len(),
        });
    }
    if theta.len() != plan.len() {
        return Err(Error::PlanMismatch {
            expected: plan.len(),
            found: theta.len(),
        });
    }
    let mut m: DMatrix<Complex64> = u_t.matrix().clone();
    for (r, &p) in phi.iter().enumerate() {
        let z = Complex64::cis(p.rem_euclid(TAU));
        m.row_mut(r).iter_mut().for_each(|v| *v *= z);
    }
    for (&(i, j), &t) in plan.pairs().iter().zip(theta).rev() {
        rotate_rows(&mut m, i, j, t.rem_euclid(TAU));
    }
    Ok(ModeUnitary::from_product(m))
}

/// Smallest ancilla count `⌈3n/2⌉` allowed by parameter counting.
pub fn dof_lower_bound(n: usize) -> usize {
    (3 * n).div_ceil(2)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::linalg::{frobenius, frobenius_c};
    use crate::random::haar_unitary;
    use crate::symplectic::unitary_to_quad_symplectic;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;
    use std::f64::consts::FRAC_PI_2;

    #[test]
    fn delta_lo() {
        assert_eq!(build_delta_lo(&[0.0; 3]).matrix(), &DMatrix::identity(3, 3));
        let d = build_delta_lo(&[FRAC_PI_2, 0.0]);
        assert!((d.matrix()[(0, 0)] - Complex64::i()).norm() < 1e-15);
        let opo = build_delta_lo(&[0.0, 0.0, FRAC_PI_2, 0.0, FRAC_PI_2, 0.0]);
        let want = [1.0, 1.0, 0.0, 1.0, 0.0, 1.0];
        for (k, w) in want.iter().enumerate() {
            let z = opo.matrix()[(k, k)];
            assert!((z.re - w).abs() < 1e-15 && (z.im - (1.0 - w)).abs() < 1e-15);
        }
    }

    #[test]
    fn zero_angles_give_identity() {
        let plan = RotationPlan::for_outputs(2, 3);
        let o = build_postprocessing(&vec![0.0; plan.len()], &plan).unwrap();
        assert_eq!(o, DMatrix::identity(5, 5));
    }

    #[test]
    fn quarter_turn_swaps_with_sign() {
        let plan = RotationPlan::new(4, &[3], vec![(0, 3)]).unwrap();
        let o = build_postprocessing(&[FRAC_PI_2], &plan).unwrap();
        let mut want = DMatrix::zeros(4, 4);
        want[(0, 3)] = -1.0;
        want[(3, 0)] = 1.0;
        want[(1, 1)] = 1.0;
        want[(2, 2)] = 1.0;
        assert!(frobenius(&(o - want)) < 1e-15);
    }

    #[test]
    fn plan_lengths() {
        assert_eq!(RotationPlan::for_outputs(1, 3).len(), 3);
        for n in 0..5 {
            for m in 0..6 {
                assert_eq!(RotationPlan::for_outputs(n, m).len(), n * m + n * n.saturating_sub(1) / 2);
            }
        }
        assert_eq!(RotationPlan::full(4).len(), 6);
        let p = RotationPlan::for_outputs(2, 2);
        assert_eq!(p.pairs(), &[(0, 2), (1, 2), (0, 3), (1, 3), (2, 3)]);
    }

    #[test]
    fn plan_rejects_pairs_without_output() {
        assert!(RotationPlan::new(4, &[3], vec![(0, 1)]).is_err());
        assert!(RotationPlan::new(4, &[3], vec![(3, 3)]).is_err());
    }

    #[test]
    fn mismatched_theta() {
        let plan = RotationPlan::for_outputs(1, 3);
        assert!(matches!(
            build_postprocessing(&[0.0; 2], &plan),
            Err(Error::PlanMismatch { expected: 3, found: 2 })
        ));
    }

    #[test]
    fn product_matches_explicit_givens() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let plan = RotationPlan::for_outputs(2, 3);
        let theta: Vec<f64> = (0..plan.len()).map(|_| rng.random_range(-7.0..7.0)).collect();
        let o = build_postprocessing(&theta, &plan).unwrap();
        let mut want = DMatrix::identity(5, 5);
        for (&(i, j), &t) in plan.pairs().iter().zip(&theta) {
            want *= givens(5, i, j, t);
        }
        assert!(frobenius(&(&o - want)) < 1e-13);
        assert!(frobenius(&(&o * o.transpose() - DMatrix::identity(5, 5))) < 1e-12);
    }

    #[test]
    fn postprocessing_acts_blockwise_on_quadratures() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let plan = RotationPlan::for_outputs(2, 2);
        let theta: Vec<f64> = (0..plan.len()).map(|_| rng.random_range(0.0..TAU)).collect();
        let o = build_postprocessing(&theta, &plan).unwrap();
        let s = unitary_to_quad_symplectic(&ModeUnitary::from_orthogonal(&o).unwrap());
        assert_eq!(s.b(), DMatrix::zeros(4, 4));
        assert_eq!(s.c(), DMatrix::zeros(4, 4));
        assert_eq!(s.a(), o);
        assert_eq!(s.d(), o);
    }

    #[test]
    fn umhd_with_zero_angles_is_u_t() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let u = haar_unitary(4, &mut rng);
        let plan = RotationPlan::for_outputs(1, 3);
        let got = assemble_umhd(&[0.0; 3], &[0.0; 4], &u, &plan).unwrap();
        assert!(frobenius_c(&(got.matrix() - u.matrix())) < 1e-15);
    }

    #[test]
    fn umhd_matches_explicit_product() {
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        let u = haar_unitary(4, &mut rng);
        let plan = RotationPlan::for_outputs(1, 3);
        let theta = [0.3, -1.2, 4.0];
        let phi = [0.1, 2.0, -0.5, 9.0];
        let got = assemble_umhd(&theta, &phi, &u, &plan).unwrap();
        let o = build_postprocessing(&theta, &plan).unwrap().map(|v| Complex64::new(v, 0.0));
        let want = o * build_delta_lo(&phi).matrix() * u.matrix();
        assert!(frobenius_c(&(got.matrix() - want)) < 1e-13);
        assert!(got.residual() < 1e-10);
    }

    #[test]
    fn angle_vector_layout() {
        let plan = RotationPlan::for_outputs(1, 3);
        let a = AngleVector::from_flat(&[1.0, 2.0, 3.0, 4.0, 5.0, 6.0, 7.0], &plan).unwrap();
        assert_eq!(a.theta, vec![1.0, 2.0, 3.0]);
        assert_eq!(a.phi, vec![4.0, 5.0, 6.0, 7.0]);
        assert_eq!(a.to_flat().len(), 7);
        assert!(AngleVector::from_flat(&[0.0; 6], &plan).is_err());
        let w = AngleVector::new(vec![-1.0, 7.0, 0.0], vec![0.0; 4], &plan).unwrap().wrapped();
        assert!(w.theta.iter().all(|t| (0.0..TAU).contains(t)));
    }

    #[test]
    fn dof_bound() {
        assert_eq!(dof_lower_bound(1), 2);
        assert_eq!(dof_lower_bound(2), 3);
        assert_eq!(dof_lower_bound(3), 5);
        assert_eq!(dof_lower_bound(4), 6);
    }
}
