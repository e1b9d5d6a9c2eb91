//! Random matrices shared by unit tests, integration tests and the theory
//! battery.

use rand::Rng;
use rand_distr::StandardNormal;

use crate::symcore::SymMat;

/// Symmetric matrix with i.i.d. `N(0, scale^2)` upper-triangle entries.
pub fn random_sym<R: Rng>(rng: &mut R, p: usize, scale: f64) -> SymMat {
    SymMat::from_fn(p, |_, _| scale * rng.sample::<f64, _>(StandardNormal)).expect("finite entries")
}

/// Random positive definite matrix `B B^T / p + shift I`.
pub fn random_spd<R: Rng>(rng: &mut R, p: usize, shift: f64) -> SymMat {
    let b = nalgebra::DMatrix::<f64>::from_fn(p, p, |_, _| rng.sample(StandardNormal));
    let m = &b * b.transpose() / p as f64 + nalgebra::DMatrix::identity(p, p) * shift;
    SymMat::new(m).expect("symmetric by construction")
}

/// Sample covariance of `n` draws from `N(0, I_p)`.
pub fn random_sample_cov<R: Rng>(rng: &mut R, p: usize, n: usize) -> SymMat {
    let x = nalgebra::DMatrix::<f64>::from_fn(n, p, |_, _| rng.sample(StandardNormal));
    SymMat::new(x.transpose() * &x / n as f64).expect("symmetric by construction")
}
