//! Random matrix ensembles used by tests and the verification harness.

use nalgebra::{DMatrix, DVector};
use num_complex::Complex64;
use rand::Rng;
use rand_distr::StandardNormal;

use crate::linalg::{from_blocks, passive_block};
use crate::symplectic::{ModeUnitary, QuadSymplectic};

/// Haar-distributed unitary from the QR decomposition of a complex Ginibre matrix.
pub fn haar_unitary<R: Rng + ?Sized>(n: usize, rng: &mut R) -> ModeUnitary {
    let g = DMatrix::from_fn(n, n, |_, _| {
        let re: f64 = rng.sample(StandardNormal);
        let im: f64 = rng.sample(StandardNormal);
        Complex64::new(re, im) / std::f64::consts::SQRT_2
    });
    let qr = g.qr();
    let mut q = qr.q();
    let r = qr.r();
    for j in 0..n {
        let d = r[(j, j)];
        let phase = if d.norm() > 0.0 { d / d.norm() } else { Complex64::new(1.0, 0.0) };
        let mut col = q.column_mut(j);
        col *= phase;
    }
    ModeUnitary::new(q).expect("QR factor is unitary")
}

/// Haar-distributed real orthogonal matrix.
pub fn random_orthogonal<R: Rng + ?Sized>(n: usize, rng: &mut R) -> DMatrix<f64> {
    let g = DMatrix::from_fn(n, n, |_, _| rng.sample::<f64, _>(StandardNormal));
    let qr = g.qr();
    let mut q = qr.q();
    let r = qr.r();
    for j in 0..n {
        if r[(j, j)] < 0.0 {
            let mut col = q.column_mut(j);
            col *= -1.0;
        }
    }
    q
}

/// `passive · diag(g⁻¹, g) · passive` with `ln g` uniform in `[-spread, spread]`.
/// Returns the symplectic and the gains `g`.
pub fn random_symplectic<R: Rng + ?Sized>(
    n: usize,
    spread: f64,
    rng: &mut R,
) -> (QuadSymplectic, Vec<f64>) {
    let left = haar_unitary(n, rng);
    let right = haar_unitary(n, rng);
    let gains: Vec<f64> = (0..n)
        .map(|_| rng.random_range(-spread..=spread).exp())
        .collect();
    let s = squeeze_between(&left, &gains, &right);
    (
        QuadSymplectic::with_tolerance(s, 1e-8).expect("product of symplectics"),
        gains,
    )
}

fn squeeze_between(left: &ModeUnitary, gains: &[f64], right: &ModeUnitary) -> DMatrix<f64> {
    let n = gains.len();
    let middle = DMatrix::from_diagonal(&DVector::from_iterator(
        2 * n,
        gains.iter().map(|g| 1.0 / g).chain(gains.iter().copied()),
    ));
    passive_block(&left.re(), &left.im()) * middle * passive_block(&right.re(), &right.im())
}

/// `diag(O, O) · diag(R⁻¹, R) · passive`: a member of the trivially implementable family.
pub fn random_trivial<R: Rng + ?Sized>(n: usize, spread: f64, rng: &mut R) -> QuadSymplectic {
    let o = random_orthogonal(n, rng);
    let zero = DMatrix::zeros(n, n);
    let rot = from_blocks(&o, &zero, &zero, &o);
    let right = haar_unitary(n, rng);
    let gains: Vec<f64> = (0..n)
        .map(|_| rng.random_range(-spread..=spread).exp())
        .collect();
    let s = rot * squeeze_between(&ModeUnitary::identity(n), &gains, &right);
    QuadSymplectic::with_tolerance(s, 1e-8).expect("product of symplectics")
}
