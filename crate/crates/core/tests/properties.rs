use dmbqc::linalg::{from_blocks, frobenius, passive_block};
use dmbqc::mbqc::{eliminate, nullifier_variances, ClusterGraph, SqueezingSpec};
use dmbqc::linalg::{condition_number, select};
use dmbqc::oracle::{elimination_output_covariance, flat_prior_conditional_covariance, propagate, GaussianState};
use dmbqc::parameterization::{assemble_umhd, build_postprocessing, RotationPlan};
use dmbqc::random::{haar_unitary, random_orthogonal, random_symplectic, random_trivial};
use dmbqc::symplectic::{
    bloch_messiah, classify_trivial, is_symplectic, symplectic_residual, unitary_to_quad_symplectic,
    ModeUnitary, QuadSymplectic, DEFAULT_TRIVIAL_TOL,
};
use nalgebra::DMatrix;
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

/// `diag(O, O) · diag(R⁻¹, R)` with random `O` and gains.
fn postprocessing_factor(n: usize, rng: &mut ChaCha8Rng) -> DMatrix<f64> {
    let o = random_orthogonal(n, rng);
    let z = DMatrix::zeros(n, n);
    let gains: Vec<f64> = (0..n).map(|_| rng.random_range(-0.7f64..0.7).exp()).collect();
    from_blocks(&o, &z, &z, &o) * QuadSymplectic::squeezer(&gains).unwrap().matrix()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn unitaries_map_to_orthogonal_symplectics(seed in any::<u64>(), n in 1usize..=8) {
        let u = haar_unitary(n, &mut rng(seed));
        let s = unitary_to_quad_symplectic(&u);
        prop_assert!(symplectic_residual(s.matrix()) <= 1e-10);
        let gram = s.matrix().transpose() * s.matrix();
        prop_assert!(frobenius(&(gram - DMatrix::identity(2 * n, 2 * n))) <= 1e-10);
    }

    #[test]
    fn real_rotations_act_on_quadratures_separately(seed in any::<u64>(), n in 1usize..=6) {
        let plan = RotationPlan::full(n);
        let mut r = rng(seed);
        let theta: Vec<f64> = (0..plan.len()).map(|_| r.random_range(-10.0..10.0)).collect();
        let o = build_postprocessing(&theta, &plan).unwrap();
        let s = unitary_to_quad_symplectic(&ModeUnitary::from_orthogonal(&o).unwrap());
        let z = DMatrix::zeros(n, n);
        prop_assert!(frobenius(&(s.matrix() - from_blocks(&o, &z, &z, &o))) <= 1e-12);
    }

    #[test]
    fn plan_length_counts_rotations(n in 0usize..=6, m in 0usize..=6) {
        prop_assert_eq!(RotationPlan::for_outputs(n, m).len(), n * m + n * n.saturating_sub(1) / 2);
    }

    #[test]
    fn assembled_network_is_unitary(seed in any::<u64>(), n in 1usize..=3, m in 0usize..=4) {
        let mut r = rng(seed);
        let u_t = haar_unitary(n + m, &mut r);
        let plan = RotationPlan::for_outputs(n, m);
        let theta: Vec<f64> = (0..plan.len()).map(|_| r.random_range(-1e3..1e3)).collect();
        let phi: Vec<f64> = (0..n + m).map(|_| r.random_range(-1e3..1e3)).collect();
        prop_assert!(assemble_umhd(&theta, &phi, &u_t, &plan).unwrap().residual() <= 1e-10);
    }

    #[test]
    fn bloch_messiah_round_trip(seed in any::<u64>(), n in 1usize..=8, spread in 0.0f64..2.0) {
        let (s, gains) = random_symplectic(n, spread, &mut rng(seed));
        let bm = bloch_messiah(&s).unwrap();
        prop_assert!(frobenius(&(bm.recompose() - s.matrix())) <= 1e-8);
        prop_assert!(bm.left.residual() <= 1e-10 && bm.right.residual() <= 1e-10);
        let mut want: Vec<f64> = gains.iter().flat_map(|g| [*g, 1.0 / g]).collect();
        want.sort_by(f64::total_cmp);
        for (got, want) in bm.singular_values().iter().zip(&want) {
            prop_assert!((got - want).abs() <= 1e-8 * want.max(1.0));
        }
        for s in bm.squeeze.iter() {
            prop_assert!(*s <= 1.0 + 1e-12);
        }
    }

    #[test]
    fn degenerate_squeezing_round_trip(seed in any::<u64>(), n in 2usize..=6, g in 0.1f64..1.5) {
        let mut r = rng(seed);
        let left = haar_unitary(n, &mut r);
        let right = haar_unitary(n, &mut r);
        let gains: Vec<f64> = (0..n).map(|k| if k % 2 == 0 { g.exp() } else { 1.0 }).collect();
        let middle = QuadSymplectic::squeezer(&gains).unwrap();
        let s = passive_block(&left.re(), &left.im()) * middle.matrix() * passive_block(&right.re(), &right.im());
        let s = QuadSymplectic::with_tolerance(s, 1e-8).unwrap();
        let bm = bloch_messiah(&s).unwrap();
        prop_assert!(frobenius(&(bm.recompose() - s.matrix())) <= 1e-8);
    }

    #[test]
    fn trivial_family_is_classified_trivial(seed in any::<u64>(), n in 1usize..=6) {
        let mut r = rng(seed);
        let u = haar_unitary(n, &mut r);
        let s = postprocessing_factor(n, &mut r) * unitary_to_quad_symplectic(&u).matrix();
        let s = QuadSymplectic::with_tolerance(s, 1e-8).unwrap();
        prop_assert!(classify_trivial(&s, DEFAULT_TRIVIAL_TOL).unwrap().is_trivial());
        let t = random_trivial(n, 1.0, &mut r);
        prop_assert!(classify_trivial(&t, DEFAULT_TRIVIAL_TOL).unwrap().is_trivial());
    }

    #[test]
    fn classification_ignores_left_postprocessing(seed in any::<u64>(), n in 1usize..=5) {
        let mut r = rng(seed);
        let (s, _) = random_symplectic(n, 1.0, &mut r);
        let p = postprocessing_factor(n, &mut r);
        let ps = QuadSymplectic::with_tolerance(p * s.matrix(), 1e-8).unwrap();
        let before = classify_trivial(&s, DEFAULT_TRIVIAL_TOL).unwrap().is_trivial();
        let after = classify_trivial(&ps, DEFAULT_TRIVIAL_TOL).unwrap().is_trivial();
        prop_assert_eq!(before, after);
    }

    #[test]
    fn noiseless_limit_is_symplectic(seed in any::<u64>(), n in 1usize..=3, m in 1usize..=3) {
        let mut r = rng(seed);
        let u = haar_unitary(n + m, &mut r);
        let positions: Vec<usize> = (m..n + m).collect();
        let res = eliminate(&u, n, m, &positions, &SqueezingSpec::vacuum(m)).unwrap();
        let eff = res.effective();
        let scale = eff.amax().max(1.0);
        prop_assert!(is_symplectic(&eff, 1e-8 * scale * scale).unwrap());
    }

    #[test]
    fn vacuum_noise_is_row_sum_of_squares(seed in any::<u64>(), n in 1usize..=3, m in 1usize..=3) {
        let mut r = rng(seed);
        let u = haar_unitary(n + m, &mut r);
        let positions: Vec<usize> = (0..n).collect();
        if let Ok(res) = eliminate(&u, n, m, &positions, &SqueezingSpec::vacuum(m)) {
            for i in 0..n {
                let sx: f64 = res.c_x.row(i).iter().map(|c| c * c).sum();
                let sp: f64 = res.c_p.row(i).iter().map(|c| c * c).sum();
                prop_assert!((res.noise_var_x[i] - sx).abs() <= 1e-9 * sx.max(1.0));
                prop_assert!((res.noise_var_p[i] - sp).abs() <= 1e-9 * sp.max(1.0));
            }
        }
    }

    #[test]
    fn shot_noise_references_are_exact(seed in any::<u64>(), m in 2usize..=6) {
        let mut r = rng(seed);
        let mut v = DMatrix::zeros(m, m);
        for i in 0..m {
            for j in i + 1..m {
                let w = if r.random_bool(0.5) { r.random_range(-2.0..2.0) } else { 0.0 };
                v[(i, j)] = w;
                v[(j, i)] = w;
            }
        }
        let graph = ClusterGraph::new(v.clone()).unwrap();
        let u = haar_unitary(m, &mut r);
        let rows = nullifier_variances(&u, &SqueezingSpec::vacuum(m), &graph).unwrap();
        for (i, row) in rows.iter().enumerate() {
            let want = 1.0 + v.row(i).iter().map(|w| w * w).sum::<f64>();
            prop_assert_eq!(row.shot_noise, want);
            prop_assert_eq!(graph.shot_noise(i), want);
        }
    }

    #[test]
    fn propagation_preserves_uncertainty(seed in any::<u64>(), n in 1usize..=5, spread in 0.0f64..1.5) {
        let mut r = rng(seed);
        let db: Vec<f64> = (0..n).map(|_| r.random_range(-10.0..0.0)).collect();
        let state = GaussianState::squeezed(&SqueezingSpec::from_db(&db).unwrap());
        let (s, _) = random_symplectic(n, spread, &mut r);
        let out = propagate(&state, &s).unwrap();
        prop_assert!(out.uncertainty_margin() >= -1e-8 * out.cov().amax().max(1.0));
    }

    #[test]
    fn conditioning_agrees_with_elimination(seed in any::<u64>(), n in 1usize..=3, m in 1usize..=3) {
        let mut r = rng(seed);
        let u = haar_unitary(n + m, &mut r);
        let positions = rand::seq::index::sample(&mut r, n + m, n).into_vec();
        let q = dmbqc::mbqc::ancilla_slots(n + m, n, &positions).unwrap();
        let meas: Vec<usize> = (0..m).collect();
        prop_assume!(condition_number(&select(&u.im(), &meas, &q)) <= 1e3);
        let db: Vec<f64> = (0..m).map(|_| r.random_range(-12.0..0.0)).collect();
        let sq = SqueezingSpec::from_db(&db).unwrap();
        let res = eliminate(&u, n, m, &positions, &sq).unwrap();
        let direct = flat_prior_conditional_covariance(&u, n, m, &positions, &sq).unwrap();
        prop_assert!((direct - elimination_output_covariance(&res, &sq)).amax() <= 1e-8);
    }
}
