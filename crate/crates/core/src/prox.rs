//! Proximal operators used by the splitting iterations.
//!
//! Every operator takes the step `t` directly (for the linearized scheme
//! `t = 1/(rho * phi)`), so the classical solvers, the baselines and the
//! learned-stage iteration share one interface.

use crate::error::{Error, Result};
use crate::symcore::{psd_floor_project, sym_eig, SymMat};

/// Iteration cap of the inner solver for non-scalar spectral weighted proxes.
pub const WEIGHTED_PROX_MAX_ITER: usize = 200;
/// Fixed-point residual at which the inner solver stops.
pub const WEIGHTED_PROX_TOL: f64 = 1e-9;

/// Off-diagonal soft-thresholding; the diagonal is copied unchanged.
pub fn soft_threshold_offdiag(b: &SymMat, tau: f64) -> Result<SymMat> {
    if !(tau >= 0.0) {
        return Err(Error::NegativeThreshold(tau));
    }
    if tau == 0.0 {
        return Ok(b.clone());
    }
    Ok(b.map_indexed(|i, j, v| if i == j { v } else { soft(v, tau) }))
}

#[inline]
pub(crate) fn soft(v: f64, tau: f64) -> f64 {
    v.signum() * (v.abs() - tau).max(0.0)
}

/// `argmin_{X >= eps I} 1/2 ||X - S||^2 + 1/(2t) ||X - M||^2`.
pub fn prox_cov_f(m: &SymMat, s: &SymMat, t: f64, eps: f64) -> Result<SymMat> {
    if !(t > 0.0) {
        return Err(Error::NonPositiveStep(t));
    }
    let center = s.lin_comb(t / (1.0 + t), m, 1.0 / (1.0 + t));
    psd_floor_project(&center, eps)
}

/// Positive root of `x^2 - d x - t = 0`, computed without cancellation.
#[inline]
pub(crate) fn logdet_root(d: f64, t: f64) -> f64 {
    let r = (d * d + 4.0 * t).sqrt();
    if d >= 0.0 {
        0.5 * (d + r)
    } else {
        2.0 * t / (r - d)
    }
}

/// `argmin_{X >= eps I} tr(S X) - log det X + 1/(2t) ||X - M||^2`.
///
/// Closed form: eigendecompose `M - t S = Q diag(d) Q^T` and map each
/// eigenvalue to `max((d + sqrt(d^2 + 4t))/2, eps)`.
pub fn prox_logdet_g(m: &SymMat, s: &SymMat, t: f64, eps: f64) -> Result<SymMat> {
    if !(t > 0.0) {
        return Err(Error::NonPositiveStep(t));
    }
    if !(eps > 0.0) {
        return Err(Error::InvalidParameter(format!("eigenvalue floor must be positive, got {eps}")));
    }
    let shifted = m.lin_comb(1.0, s, -t);
    let eig = sym_eig(&shifted)?;
    Ok(eig.map_spectrum(|d| logdet_root(d, t).max(eps)))
}

/// Which function a weighted prox is taken of.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ProxKind {
    /// `1/2 ||X - S||^2 + indicator(X >= eps I)`
    CovF,
    /// `tr(S X) - log det X + indicator(X >= eps I)`
    LogDetG,
    /// `lambda ||Y||_{1,off}`
    L1Off,
}

/// Problem data a prox needs.
#[derive(Debug, Clone, Copy)]
pub struct ProxContext<'a> {
    pub s: &'a SymMat,
    pub lambda: f64,
    pub eps: f64,
}

#[derive(Debug, Clone, PartialEq)]
enum Weights {
    Scalar(f64),
    Entrywise(SymMat),
}

/// Entrywise positive prox weights with their bounds `c1 <= w_ij <= c2`.
#[derive(Debug, Clone, PartialEq)]
pub struct WeightMat {
    w: Weights,
    c1: f64,
    c2: f64,
}

impl WeightMat {
    pub fn scalar(t: f64) -> Result<Self> {
        if !(t > 0.0) || !t.is_finite() {
            return Err(Error::NonPositiveWeight(t));
        }
        Ok(Self { w: Weights::Scalar(t), c1: t, c2: t })
    }

    pub fn entrywise(w: SymMat) -> Result<Self> {
        let (c1, c2) = (w.min_entry(), w.max_entry());
        if !(c1 > 0.0) {
            return Err(Error::NonPositiveWeight(c1));
        }
        if c1 == c2 {
            return Self::scalar(c1);
        }
        Ok(Self { w: Weights::Entrywise(w), c1, c2 })
    }

    pub fn c1(&self) -> f64 {
        self.c1
    }

    pub fn c2(&self) -> f64 {
        self.c2
    }

    /// The common value when every weight is equal.
    pub fn as_scalar(&self) -> Option<f64> {
        match self.w {
            Weights::Scalar(t) => Some(t),
            Weights::Entrywise(_) => None,
        }
    }

    fn at(&self, i: usize, j: usize) -> f64 {
        match &self.w {
            Weights::Scalar(t) => *t,
            Weights::Entrywise(m) => m.get(i, j),
        }
    }
}

fn plain_spectral_prox(kind: ProxKind, m: &SymMat, ctx: &ProxContext<'_>, t: f64) -> Result<SymMat> {
    match kind {
        ProxKind::CovF => prox_cov_f(m, ctx.s, t, ctx.eps),
        ProxKind::LogDetG => prox_logdet_g(m, ctx.s, t, ctx.eps),
        ProxKind::L1Off => soft_threshold_offdiag(m, ctx.lambda * t),
    }
}

/// Prox of `kind` in the metric `||(1/sqrt(w)) o (.)||_F`:
/// `argmin_X F(X) + 1/2 sum_ij (X_ij - M_ij)^2 / w_ij`.
///
/// Scalar weights reduce to the plain operators. Entrywise weights are
/// separable for `L1Off`. For the spectral kinds the stationarity condition
/// `0 in dF(X) + (X - M)/w` is solved by the fixed point
/// `X = prox_{t F}(M + (1 - t/w) o (X - M))` with `t = 2 c1 c2 / (c1 + c2)`,
/// a contraction with factor at most `(c2 - c1)/(c2 + c1)`.
pub fn weighted_prox(kind: ProxKind, m: &SymMat, ctx: &ProxContext<'_>, w: &WeightMat) -> Result<SymMat> {
    if let Some(t) = w.as_scalar() {
        return plain_spectral_prox(kind, m, ctx, t);
    }
    if m.dim() != ctx.s.dim() {
        return Err(Error::DimMismatch { left: m.dim(), right: ctx.s.dim() });
    }
    if kind == ProxKind::L1Off {
        let lambda = ctx.lambda;
        return Ok(m.map_indexed(|i, j, v| if i == j { v } else { soft(v, lambda * w.at(i, j)) }));
    }

    let t_bar = 2.0 * w.c1 * w.c2 / (w.c1 + w.c2);
    let coef = m.map_indexed(|i, j, _| 1.0 - t_bar / w.at(i, j));
    let mut x = plain_spectral_prox(kind, m, ctx, t_bar)?;
    let mut residual = f64::INFINITY;
    for _ in 0..WEIGHTED_PROX_MAX_ITER {
        let z = &(&x - m).hadamard(&coef) + m;
        let next = plain_spectral_prox(kind, &z, ctx, t_bar)?;
        residual = next.dist(&x);
        x = next;
        if residual <= WEIGHTED_PROX_TOL * x.frob_norm().max(1.0) {
            return Ok(x);
        }
    }
    Err(Error::InnerNoConvergence { iters: WEIGHTED_PROX_MAX_ITER, residual })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::symcore::min_eigenvalue;
    use crate::testutil::{random_spd, random_sym};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn offdiag(v: f64, d: f64) -> SymMat {
        SymMat::from_fn(3, |i, j| if i == j { d } else { v }).unwrap()
    }

    #[test]
    fn soft_threshold_examples() {
        let b = offdiag(0.5, 2.0);
        let out = soft_threshold_offdiag(&b, 0.2).unwrap();
        assert!((out.get(0, 1) - 0.3).abs() < 1e-15);
        assert_eq!(out.diagonal(), b.diagonal());

        let out = soft_threshold_offdiag(&offdiag(-0.1, 5.0), 0.2).unwrap();
        assert_eq!(out.get(1, 2), 0.0);
        assert_eq!(out.get(2, 2), 5.0);

        assert_eq!(soft_threshold_offdiag(&b, 0.0).unwrap(), b);
        assert_eq!(soft_threshold_offdiag(&b, -1.0).unwrap_err(), Error::NegativeThreshold(-1.0));
    }

    #[test]
    fn cov_prox_limits() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let s = random_sym(&mut rng, 5, 1.0);
        let m = random_sym(&mut rng, 5, 1.0);
        let eps = 1e-4;
        let same = prox_cov_f(&s, &s, 0.37, eps).unwrap();
        assert!(same.dist(&psd_floor_project(&s, eps).unwrap()) < 1e-12);
        let tiny = prox_cov_f(&m, &s, 1e-8, eps).unwrap();
        assert!(tiny.dist(&psd_floor_project(&m, eps).unwrap()) < 1e-6);
        assert_eq!(prox_cov_f(&m, &s, 0.0, eps).unwrap_err(), Error::NonPositiveStep(0.0));
    }

    #[test]
    fn logdet_prox_scalar_cases() {
        let zero = SymMat::zeros(1);
        let out = prox_logdet_g(&zero, &zero, 1.0, 1e-4).unwrap();
        assert!((out.get(0, 0) - 1.0).abs() < 1e-15);
        // Stationarity of -1/theta + theta - d = 0 (S = 0, t = 1).
        for d in [-3.0, 0.0, 5.0] {
            let m = SymMat::from_diagonal(&[d]).unwrap();
            let th = prox_logdet_g(&m, &zero, 1.0, 1e-8).unwrap().get(0, 0);
            assert!((-1.0 / th + th - d).abs() < 1e-12, "d={d} theta={th}");
        }
        // Floor dominates.
        let m = SymMat::scaled_identity(3, -100.0);
        let out = prox_logdet_g(&m, &SymMat::zeros(3), 1e-3, 0.5).unwrap();
        assert!(out.dist(&SymMat::scaled_identity(3, 0.5)) < 1e-12);
    }

    #[test]
    fn logdet_prox_respects_floor() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let s = random_spd(&mut rng, 6, 0.1);
        let m = random_sym(&mut rng, 6, 3.0);
        let out = prox_logdet_g(&m, &s, 0.2, 0.05).unwrap();
        assert!(min_eigenvalue(&out).unwrap() >= 0.05 - 1e-10);
    }

    #[test]
    fn scalar_weight_reduces_to_plain() {
        let mut rng = ChaCha8Rng::seed_from_u64(21);
        let s = random_spd(&mut rng, 4, 0.2);
        let m = random_sym(&mut rng, 4, 1.0);
        let ctx = ProxContext { s: &s, lambda: 0.3, eps: 1e-3 };
        let t = 0.7;
        let uniform = WeightMat::entrywise(SymMat::from_fn(4, |_, _| t).unwrap()).unwrap();
        assert_eq!(uniform.as_scalar(), Some(t));
        let cases = [
            (ProxKind::CovF, prox_cov_f(&m, &s, t, 1e-3).unwrap()),
            (ProxKind::LogDetG, prox_logdet_g(&m, &s, t, 1e-3).unwrap()),
            (ProxKind::L1Off, soft_threshold_offdiag(&m, 0.3 * t).unwrap()),
        ];
        for (kind, plain) in cases {
            let out = weighted_prox(kind, &m, &ctx, &uniform).unwrap();
            assert!(out.dist(&plain) <= 1e-10, "{kind:?}");
        }
    }

    #[test]
    fn l1_weighted_is_separable() {
        let m = offdiag(1.0, 3.0);
        let s = SymMat::identity(3);
        let ctx = ProxContext { s: &s, lambda: 0.1, eps: 1e-4 };
        let t = 0.5;
        let w = SymMat::from_fn(3, |i, j| if (i, j) == (0, 1) { 2.0 * t } else { t }).unwrap();
        let out = weighted_prox(ProxKind::L1Off, &m, &ctx, &WeightMat::entrywise(w).unwrap()).unwrap();
        assert!((out.get(0, 1) - (1.0 - 2.0 * 0.1 * t)).abs() < 1e-15);
        assert!((out.get(1, 2) - (1.0 - 0.1 * t)).abs() < 1e-15);
        assert_eq!(out.get(0, 0), 3.0);
    }

    #[test]
    fn weighted_spectral_prox_satisfies_stationarity() {
        // For the unconstrained covariance case the weighted prox is
        // entrywise: X = (S + M/w) / (1 + 1/w).
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let s = random_spd(&mut rng, 4, 1.0);
        let m = &s + &random_sym(&mut rng, 4, 0.05);
        let w = SymMat::from_fn(4, |_, _| rng.random_range(0.5..2.0)).unwrap();
        let ctx = ProxContext { s: &s, lambda: 0.0, eps: 1e-6 };
        let out = weighted_prox(ProxKind::CovF, &m, &ctx, &WeightMat::entrywise(w.clone()).unwrap()).unwrap();
        let expect = SymMat::from_fn(4, |i, j| {
            let wij = w.get(i, j);
            (s.get(i, j) + m.get(i, j) / wij) / (1.0 + 1.0 / wij)
        })
        .unwrap();
        assert!(out.dist(&expect) < 1e-9);
    }

    #[test]
    fn non_positive_weights_rejected() {
        assert_eq!(WeightMat::scalar(0.0).unwrap_err(), Error::NonPositiveWeight(0.0));
        let w = SymMat::from_fn(2, |i, j| if i == j { 1.0 } else { -1.0 }).unwrap();
        assert!(matches!(WeightMat::entrywise(w), Err(Error::NonPositiveWeight(_))));
    }
}
