//! Comparison solvers: three-operator splitting, forward-backward splitting
//! and FISTA for the covariance problem; proximal gradient with
//! backtracking and spectral projected gradient for the precision problem.

use nalgebra::{Cholesky, DMatrix};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::problem::{IterateState, ProblemKind, SplitProblem};
use crate::prox::soft_threshold_offdiag;
use crate::solvers::{Phase, Recorder, RunTrace, Status};
use crate::symcore::{psd_floor_project, spd_inverse_logdet, SymMat};

/// Maximum step reductions in one line search.
pub const MAX_BACKTRACKS: usize = 60;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct BaselineConfig {
    pub step: f64,
    pub max_iter: usize,
    pub tol_gap: f64,
    /// Stop once an iteration moves the estimate less than this.
    pub tol_step: f64,
    /// Nonmonotone window for SPG.
    pub bb_memory: usize,
    pub backtrack_factor: f64,
    /// Gradient-based momentum restart for FISTA.
    pub restart: bool,
    pub record_every: usize,
}

impl Default for BaselineConfig {
    fn default() -> Self {
        Self {
            step: 1.0,
            max_iter: 5000,
            tol_gap: 1e-7,
            tol_step: 1e-10,
            bb_memory: 10,
            backtrack_factor: 0.5,
            restart: false,
            record_every: 1,
        }
    }
}

impl BaselineConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.step > 0.0) || !self.step.is_finite() {
            return Err(Error::NonPositiveStep(self.step));
        }
        if !(self.backtrack_factor > 0.0 && self.backtrack_factor < 1.0) {
            return Err(Error::InvalidParameter(format!("backtrack_factor must lie in (0, 1), got {}", self.backtrack_factor)));
        }
        if self.record_every == 0 {
            return Err(Error::InvalidParameter("record_every must be positive".into()));
        }
        Ok(())
    }
}

/// `(f, d, gap)` for a single estimate. The covariance dual point is the
/// clipped residual `M - S`; the precision one is built from `M^{-1}`.
pub fn estimate_gap(pb: &SplitProblem, m: &SymMat) -> (f64, f64, f64) {
    let v = match pb.kind {
        ProblemKind::Covariance => &pb.s - m,
        ProblemKind::Precision => SymMat::zeros(pb.dim()),
    };
    let st = IterateState { x: m.clone(), y: m.clone(), v };
    crate::solvers::gap_or_nan(pb, &st)
}

fn require(pb: &SplitProblem, kind: ProblemKind, init: &SymMat) -> Result<()> {
    if pb.kind != kind {
        return Err(Error::InvalidParameter(format!("expected a {} problem", kind.as_str())));
    }
    if init.dim() != pb.dim() {
        return Err(Error::DimMismatch { left: init.dim(), right: pb.dim() });
    }
    Ok(())
}

/// Common loop bookkeeping: records, divergence guard and stopping.
struct Monitor<'a> {
    pb: &'a SplitProblem,
    cfg: &'a BaselineConfig,
    rec: Recorder,
    limit: f64,
}

enum Verdict {
    Continue,
    Stop(Status),
}

impl<'a> Monitor<'a> {
    fn new(pb: &'a SplitProblem, cfg: &'a BaselineConfig, init: &SymMat) -> Self {
        let mut rec = Recorder::new();
        let fdg = estimate_gap(pb, init);
        rec.push(0, fdg, 0.0, 0.0, None, Phase::Classic);
        let limit = 10.0 * fdg.0.abs().max(1.0);
        Self { pb, cfg, rec, limit }
    }

    fn observe(&mut self, k: usize, m: &SymMat, moved: f64, dual_res: f64) -> Verdict {
        if !m.max_abs().is_finite() {
            self.rec.push(k, (f64::NAN, f64::NAN, f64::NAN), moved, dual_res, None, Phase::Classic);
            return Verdict::Stop(Status::Diverged);
        }
        let small_step = moved <= self.cfg.tol_step;
        if !(small_step || k.is_multiple_of(self.cfg.record_every) || k == self.cfg.max_iter) {
            return Verdict::Continue;
        }
        let fdg = estimate_gap(self.pb, m);
        self.rec.push(k, fdg, moved, dual_res, None, Phase::Classic);
        if fdg.0 > self.limit {
            Verdict::Stop(Status::Diverged)
        } else if small_step || fdg.2 <= self.cfg.tol_gap {
            Verdict::Stop(Status::Converged)
        } else {
            Verdict::Continue
        }
    }

    fn finish(self, status: Status, iters: usize) -> RunTrace {
        self.rec.finish(status, iters)
    }
}

/// Davis-Yin splitting with `h = 1/2 ||. - S||^2`, `g1 = lambda ||.||_{1,off}`
/// and `g2` the eigenvalue-floor indicator. Returns `prox_{g2}(z)`.
pub fn tosa_covariance(pb: &SplitProblem, cfg: &BaselineConfig, init: &SymMat) -> Result<(SymMat, RunTrace)> {
    require(pb, ProblemKind::Covariance, init)?;
    cfg.validate()?;
    let gamma = cfg.step;
    if !(gamma < 2.0) {
        return Err(Error::StepOutOfRange(gamma));
    }
    let mut z = init.clone();
    let mut xg = psd_floor_project(&z, pb.eps)?;
    let mut mon = Monitor::new(pb, cfg, &xg);
    for k in 1..=cfg.max_iter {
        let grad = &xg - &pb.s;
        let reflected = &(&xg.scale(2.0) - &z) - &grad.scale(gamma);
        let xf = soft_threshold_offdiag(&reflected, gamma * pb.lambda)?;
        let dz = &xf - &xg;
        z = &z + &dz;
        let next = psd_floor_project(&z, pb.eps)?;
        let moved = next.dist(&xg);
        xg = next;
        if let Verdict::Stop(status) = mon.observe(k, &xg, moved, dz.frob_norm()) {
            return Ok((xg, mon.finish(status, k)));
        }
    }
    Ok((xg, mon.finish(Status::MaxIter, cfg.max_iter)))
}

/// Forward step on the quadratic, then soft-thresholding followed by the
/// eigenvalue-floor projection. The composite backward step is exact only
/// when the floor does not bind.
fn forward_backward(pb: &SplitProblem, m: &SymMat, gamma: f64) -> Result<SymMat> {
    let forward = m.lin_comb(1.0 - gamma, &pb.s, gamma);
    psd_floor_project(&soft_threshold_offdiag(&forward, gamma * pb.lambda)?, pb.eps)
}

pub fn pfbs_covariance(pb: &SplitProblem, cfg: &BaselineConfig, init: &SymMat) -> Result<(SymMat, RunTrace)> {
    require(pb, ProblemKind::Covariance, init)?;
    cfg.validate()?;
    if cfg.step > 1.0 {
        return Err(Error::StepOutOfRange(cfg.step));
    }
    let mut x = init.clone();
    let mut mon = Monitor::new(pb, cfg, &x);
    for k in 1..=cfg.max_iter {
        let next = forward_backward(pb, &x, cfg.step)?;
        let moved = next.dist(&x);
        x = next;
        if let Verdict::Stop(status) = mon.observe(k, &x, moved, 0.0) {
            return Ok((x, mon.finish(status, k)));
        }
    }
    Ok((x, mon.finish(Status::MaxIter, cfg.max_iter)))
}

/// `t_{k+1} = (1 + sqrt(1 + 4 t_k^2)) / 2`.
pub fn fista_t_next(t: f64) -> f64 {
    0.5 * (1.0 + (1.0 + 4.0 * t * t).sqrt())
}

pub fn fista_covariance(pb: &SplitProblem, cfg: &BaselineConfig, init: &SymMat) -> Result<(SymMat, RunTrace)> {
    require(pb, ProblemKind::Covariance, init)?;
    cfg.validate()?;
    if cfg.step > 1.0 {
        return Err(Error::StepOutOfRange(cfg.step));
    }
    let mut x = init.clone();
    let mut y = init.clone();
    let mut t = 1.0;
    let mut mon = Monitor::new(pb, cfg, &x);
    for k in 1..=cfg.max_iter {
        let next = forward_backward(pb, &y, cfg.step)?;
        let dx = &next - &x;
        if cfg.restart && (&y - &next).inner(&dx) > 0.0 {
            t = 1.0;
        }
        let t_next = fista_t_next(t);
        y = &next + &dx.scale((t - 1.0) / t_next);
        t = t_next;
        let moved = dx.frob_norm();
        x = next;
        if let Verdict::Stop(status) = mon.observe(k, &x, moved, 0.0) {
            return Ok((x, mon.finish(status, k)));
        }
    }
    Ok((x, mon.finish(Status::MaxIter, cfg.max_iter)))
}

/// `tr(S X) - log det X` and `X^{-1}`, or `None` unless `X - (eps/2) I` is
/// positive definite.
fn smooth_precision(pb: &SplitProblem, x: &SymMat) -> Option<(f64, SymMat)> {
    let p = pb.dim();
    let shifted = x.matrix() - DMatrix::<f64>::identity(p, p) * (0.5 * pb.eps);
    Cholesky::new(shifted)?;
    let (inv, logdet) = spd_inverse_logdet(x).ok()?;
    Some((pb.s.inner(x) - logdet, inv))
}

/// One prox-gradient trial at step `gamma`.
fn prox_grad_trial(pb: &SplitProblem, x: &SymMat, grad: &SymMat, gamma: f64) -> Result<SymMat> {
    soft_threshold_offdiag(&(x - &grad.scale(gamma)), gamma * pb.lambda)
}

fn precision_start(pb: &SplitProblem, init: &SymMat) -> Result<(f64, SymMat)> {
    smooth_precision(pb, init).ok_or_else(|| Error::NotPositiveDefinite(crate::symcore::min_eigenvalue(init).unwrap_or(f64::NAN)))
}

/// Proximal gradient on the graphical lasso with a sufficient-decrease line
/// search that also keeps iterates positive definite.
pub fn proxgrad_precision(pb: &SplitProblem, cfg: &BaselineConfig, init: &SymMat) -> Result<(SymMat, RunTrace)> {
    require(pb, ProblemKind::Precision, init)?;
    cfg.validate()?;
    let mut x = init.clone();
    let (mut h, mut inv) = precision_start(pb, &x)?;
    let mut gamma = cfg.step;
    let mut mon = Monitor::new(pb, cfg, &x);
    for k in 1..=cfg.max_iter {
        let grad = &pb.s - &inv;
        gamma = (gamma / cfg.backtrack_factor).min(cfg.step);
        let mut accepted = None;
        for _ in 0..MAX_BACKTRACKS {
            let cand = prox_grad_trial(pb, &x, &grad, gamma)?;
            if let Some((h_new, inv_new)) = smooth_precision(pb, &cand) {
                let d = &cand - &x;
                if h_new <= h + grad.inner(&d) + d.frob_norm_sq() / (2.0 * gamma) {
                    accepted = Some((cand, h_new, inv_new));
                    break;
                }
            }
            gamma *= cfg.backtrack_factor;
        }
        let Some((cand, h_new, inv_new)) = accepted else {
            return Err(Error::LineSearchStalled(MAX_BACKTRACKS));
        };
        let moved = cand.dist(&x);
        x = cand;
        h = h_new;
        inv = inv_new;
        if let Verdict::Stop(status) = mon.observe(k, &x, moved, 0.0) {
            return Ok((x, mon.finish(status, k)));
        }
    }
    Ok((x, mon.finish(Status::MaxIter, cfg.max_iter)))
}

/// Barzilai-Borwein step `<s, s> / <s, y>` clipped to `[1e-8, 1e8]`.
pub fn bb_step(s: &SymMat, y: &SymMat) -> f64 {
    let sy = s.inner(y);
    if !(sy > 0.0) {
        return 1e8;
    }
    (s.frob_norm_sq() / sy).clamp(1e-8, 1e8)
}

/// Spectral projected gradient: BB steps accepted against the maximum of
/// the last `bb_memory` objective values.
pub fn spg_precision(pb: &SplitProblem, cfg: &BaselineConfig, init: &SymMat) -> Result<(SymMat, RunTrace)> {
    require(pb, ProblemKind::Precision, init)?;
    cfg.validate()?;
    const SIGMA: f64 = 1e-4;
    let memory = cfg.bb_memory.max(1);
    let mut x = init.clone();
    let (h0, mut inv) = precision_start(pb, &x)?;
    let mut history = vec![h0 + pb.g_value(&x)];
    let mut gamma = cfg.step;
    let mut mon = Monitor::new(pb, cfg, &x);
    for k in 1..=cfg.max_iter {
        let grad = &pb.s - &inv;
        let reference = history.iter().rev().take(memory).cloned().fold(f64::NEG_INFINITY, f64::max);
        let mut accepted = None;
        for _ in 0..MAX_BACKTRACKS {
            let cand = prox_grad_trial(pb, &x, &grad, gamma)?;
            if let Some((h_new, inv_new)) = smooth_precision(pb, &cand) {
                let f_new = h_new + pb.g_value(&cand);
                let d = &cand - &x;
                if f_new <= reference - SIGMA / (2.0 * gamma) * d.frob_norm_sq() {
                    accepted = Some((cand, f_new, inv_new));
                    break;
                }
            }
            gamma *= cfg.backtrack_factor;
        }
        let Some((cand, f_new, inv_new)) = accepted else {
            return Err(Error::LineSearchStalled(MAX_BACKTRACKS));
        };
        let s = &cand - &x;
        let grad_new = &pb.s - &inv_new;
        gamma = bb_step(&s, &(&grad_new - &grad));
        let moved = s.frob_norm();
        x = cand;
        inv = inv_new;
        history.push(f_new);
        if let Verdict::Stop(status) = mon.observe(k, &x, moved, 0.0) {
            return Ok((x, mon.finish(status, k)));
        }
    }
    Ok((x, mon.finish(Status::MaxIter, cfg.max_iter)))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::solvers::{admm_covariance, default_init, SolverConfig};
    use crate::testutil::{random_sample_cov, random_spd};
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn tight() -> BaselineConfig {
        BaselineConfig { tol_gap: 1e-15, tol_step: 1e-12, max_iter: 20000, ..BaselineConfig::default() }
    }

    fn two_by_two() -> SplitProblem {
        let s = SymMat::from_row_major(2, &[1.0, 0.5, 0.5, 1.0]).unwrap();
        SplitProblem::new(ProblemKind::Covariance, s, 0.3, 1e-4, 100).unwrap()
    }

    #[test]
    fn covariance_baselines_two_by_two() {
        let pb = two_by_two();
        let init = pb.s.clone();
        for (name, out) in [
            ("tosa", tosa_covariance(&pb, &tight(), &init)),
            ("pfbs", pfbs_covariance(&pb, &tight(), &init)),
            ("fista", fista_covariance(&pb, &tight(), &init)),
        ] {
            let (x, trace) = out.unwrap();
            assert_eq!(trace.status, Status::Converged, "{name}");
            assert!((x.get(0, 1) - 0.2).abs() < 1e-8, "{name}: {}", x.get(0, 1));
        }
    }

    #[test]
    fn tosa_fixed_point_and_step_range() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let s = random_spd(&mut rng, 5, 0.5);
        let pb = SplitProblem::new(ProblemKind::Covariance, s.clone(), 0.0, 1e-8, 10).unwrap();
        let (x, _) = tosa_covariance(&pb, &tight(), &s).unwrap();
        assert!(x.dist(&s) < 1e-12);
        let bad = BaselineConfig { step: 2.0, ..BaselineConfig::default() };
        assert!(matches!(tosa_covariance(&pb, &bad, &s), Err(Error::StepOutOfRange(_))));
        let bad = BaselineConfig { step: 1.5, ..BaselineConfig::default() };
        assert!(matches!(pfbs_covariance(&pb, &bad, &s), Err(Error::StepOutOfRange(_))));
    }

    #[test]
    fn tosa_step_robust() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let s = random_sample_cov(&mut rng, 8, 20);
        let pb = SplitProblem::new(ProblemKind::Covariance, s.clone(), 0.2, 1e-4, 20).unwrap();
        let (a, _) = tosa_covariance(&pb, &BaselineConfig { step: 1.9, ..tight() }, &s).unwrap();
        let (b, _) = tosa_covariance(&pb, &BaselineConfig { step: 0.5, ..tight() }, &s).unwrap();
        assert!(a.dist(&b) < 1e-5);
    }

    #[test]
    fn pfbs_linear_rate_without_penalty() {
        // lambda = 0: iterates contract toward the projection of S at rate 1 - gamma.
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let s = random_spd(&mut rng, 6, 0.5);
        let pb = SplitProblem::new(ProblemKind::Covariance, s.clone(), 0.0, 1e-4, 10).unwrap();
        let gamma = 0.3;
        let mut x = SymMat::scaled_identity(6, 5.0);
        let mut err = x.dist(&s);
        for _ in 0..20 {
            x = forward_backward(&pb, &x, gamma).unwrap();
            let e = x.dist(&s);
            assert!(e <= (1.0 - gamma / 2.0) * err + 1e-15);
            err = e;
        }
    }

    #[test]
    fn fista_t_sequence() {
        assert_eq!(fista_t_next(1.0), 0.5 * (1.0 + 5f64.sqrt()));
    }

    #[test]
    fn fista_not_slower_than_pfbs() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        for _ in 0..5 {
            let s = random_spd(&mut rng, 6, 0.5);
            let pb = SplitProblem::new(ProblemKind::Covariance, s, 0.0, 1e-4, 10).unwrap();
            let init = SymMat::scaled_identity(6, 3.0);
            let cfg = BaselineConfig { step: 0.2, max_iter: 30, tol_gap: 1e-300, tol_step: 0.0, ..BaselineConfig::default() };
            let (_, pf) = pfbs_covariance(&pb, &cfg, &init).unwrap();
            let (_, fi) = fista_covariance(&pb, &cfg, &init).unwrap();
            for k in 5..=30 {
                assert!(fi.rows[k].f <= pf.rows[k].f + 1e-12, "iter {k}");
            }
        }
    }

    #[test]
    fn pfbs_binding_floor_close_to_admm() {
        let s = SymMat::from_row_major(3, &[1.0, 0.2, 0.0, 0.2, -0.5, 0.3, 0.0, 0.3, 1.0]).unwrap();
        let pb = SplitProblem::new(ProblemKind::Covariance, s.clone(), 0.1, 1e-4, 10).unwrap();
        let solver = SolverConfig { tol_gap: 1e-15, tol_primal: 1e-12, tol_dual: 1e-12, max_iter: 100000, ..SolverConfig::default() };
        let (st, _) = admm_covariance(&pb, &solver, default_init(&pb)).unwrap();
        // The threshold-then-project bias shrinks linearly with the step.
        let (x, _) = pfbs_covariance(&pb, &BaselineConfig { step: 0.1, ..tight() }, &s).unwrap();
        assert!(x.dist(&st.x) < 1e-3, "{}", x.dist(&st.x));
        let (coarse, _) = pfbs_covariance(&pb, &tight(), &s).unwrap();
        assert!(coarse.dist(&st.x) > x.dist(&st.x));
    }

    #[test]
    fn proxgrad_precision_identity() {
        let pb = SplitProblem::new(ProblemKind::Precision, SymMat::identity(4), 0.0, 1e-4, 10).unwrap();
        let init = SymMat::scaled_identity(4, 2.0);
        let (x, trace) = proxgrad_precision(&pb, &tight(), &init).unwrap();
        assert!(x.dist(&SymMat::identity(4)) < 1e-8);
        let fs: Vec<f64> = trace.rows.iter().map(|r| r.f).collect();
        assert!(fs.windows(2).all(|w| w[1] <= w[0] + 1e-12));
    }

    #[test]
    fn proxgrad_monotone_on_random_instances() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        for _ in 0..5 {
            let s = random_sample_cov(&mut rng, 8, 40);
            let pb = SplitProblem::new(ProblemKind::Precision, s, 0.15, 1e-4, 40).unwrap();
            let init = default_init(&pb).x;
            let (_, trace) = proxgrad_precision(&pb, &BaselineConfig { max_iter: 300, ..BaselineConfig::default() }, &init).unwrap();
            assert!(trace.rows.windows(2).all(|w| w[1].f <= w[0].f + 1e-12));
        }
    }

    #[test]
    fn spg_scalar_bb_step() {
        let s = SymMat::from_row_major(1, &[1.0]).unwrap();
        let pb = SplitProblem::new(ProblemKind::Precision, s, 0.0, 1e-4, 10).unwrap();
        let theta = 1.0 + 1e-4;
        let a = SymMat::from_row_major(1, &[theta]).unwrap();
        let b = SymMat::from_row_major(1, &[theta + 1e-6]).unwrap();
        let ga = &pb.s - &crate::symcore::spd_inverse_logdet(&a).unwrap().0;
        let gb = &pb.s - &crate::symcore::spd_inverse_logdet(&b).unwrap().0;
        let step = bb_step(&(&b - &a), &(&gb - &ga));
        assert!((step - 1.0).abs() < 1e-3);
    }

    #[test]
    fn spg_nonmonotone_bound() {
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        let s = random_sample_cov(&mut rng, 8, 40);
        let pb = SplitProblem::new(ProblemKind::Precision, s, 0.15, 1e-4, 40).unwrap();
        let cfg = BaselineConfig { max_iter: 300, ..BaselineConfig::default() };
        let (_, trace) = spg_precision(&pb, &cfg, &default_init(&pb).x).unwrap();
        let fs: Vec<f64> = trace.rows.iter().map(|r| r.f).collect();
        for k in 1..fs.len() {
            let lo = k.saturating_sub(cfg.bb_memory);
            let cap = fs[lo..k].iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            assert!(fs[k] <= cap + 1e-12);
        }
    }

    #[test]
    fn precision_baselines_rejects_non_pd_init() {
        let pb = SplitProblem::new(ProblemKind::Precision, SymMat::identity(2), 0.1, 1e-4, 10).unwrap();
        assert!(proxgrad_precision(&pb, &BaselineConfig::default(), &SymMat::zeros(2)).is_err());
        assert!(spg_precision(&pb, &BaselineConfig::default(), &SymMat::zeros(2)).is_err());
    }
}
