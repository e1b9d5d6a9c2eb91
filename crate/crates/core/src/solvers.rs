//! ADMM and linearized ADMM on the split problem, with stopping rules and
//! per-iteration traces.

use std::fmt::Write as _;
use std::time::Instant;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::problem::{IterateState, ProblemKind, SplitProblem};
use crate::prox::{prox_cov_f, prox_logdet_g, soft_threshold_offdiag};
use crate::symcore::{psd_floor_project, SymMat};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SolverConfig {
    pub rho: f64,
    pub phi1: f64,
    pub phi2: f64,
    pub max_iter: usize,
    pub tol_primal: f64,
    pub tol_dual: f64,
    pub tol_gap: f64,
    pub record_every: usize,
    /// Start from `phi = 1` and grow by 1.5 whenever the linearized
    /// surrogate fails to majorize the coupling term.
    pub backtracking: bool,
}

impl Default for SolverConfig {
    fn default() -> Self {
        Self {
            rho: 1.0,
            phi1: 1.5,
            phi2: 1.5,
            max_iter: 5000,
            tol_primal: 1e-6,
            tol_dual: 1e-6,
            tol_gap: 1e-7,
            record_every: 1,
            backtracking: false,
        }
    }
}

impl SolverConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.rho > 0.0) || !self.rho.is_finite() {
            return Err(Error::InvalidParameter(format!("rho must be positive, got {}", self.rho)));
        }
        if !self.backtracking && !(self.phi1 > 1.0 && self.phi2 > 1.0) {
            return Err(Error::InvalidParameter(format!("phi1 and phi2 must exceed 1, got {} and {}", self.phi1, self.phi2)));
        }
        self.validate_common()
    }

    fn validate_common(&self) -> Result<()> {
        if self.record_every == 0 {
            return Err(Error::InvalidParameter("record_every must be positive".into()));
        }
        for (name, v) in [("tol_primal", self.tol_primal), ("tol_dual", self.tol_dual), ("tol_gap", self.tol_gap)] {
            if !(v > 0.0) {
                return Err(Error::InvalidParameter(format!("{name} must be positive, got {v}")));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Status {
    Converged,
    MaxIter,
    Diverged,
    Failed,
}

impl Status {
    pub fn as_str(&self) -> &'static str {
        match self {
            Status::Converged => "converged",
            Status::MaxIter => "maxiter",
            Status::Diverged => "diverged",
            Status::Failed => "failed",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Phase {
    Classic,
    Learned,
    Tail,
}

impl Phase {
    pub fn as_str(self) -> &'static str {
        match self {
            Phase::Classic => "classic",
            Phase::Learned => "learned",
            Phase::Tail => "tail",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TraceRow {
    pub iter: usize,
    pub f: f64,
    pub d: f64,
    pub gap: f64,
    pub primal_res: f64,
    pub dual_res: f64,
    /// Lyapunov energy against a reference triple, when one was supplied.
    pub energy: Option<f64>,
    pub seconds: f64,
    pub phase: Phase,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunTrace {
    pub rows: Vec<TraceRow>,
    pub status: Status,
    /// Number of iterations performed.
    pub iters: usize,
}

pub const TRACE_HEADER: &str = "iter,f,d,gap,primal_res,dual_res,energy,seconds,phase";

impl RunTrace {
    pub fn last(&self) -> Option<&TraceRow> {
        self.rows.last()
    }

    pub fn final_gap(&self) -> f64 {
        self.last().map_or(f64::NAN, |r| r.gap)
    }

    pub fn seconds(&self) -> f64 {
        self.last().map_or(0.0, |r| r.seconds)
    }

    pub fn to_csv(&self) -> String {
        let mut out = String::from(TRACE_HEADER);
        out.push('\n');
        for r in &self.rows {
            let energy = r.energy.map(|e| format!("{e:e}")).unwrap_or_default();
            let _ = writeln!(
                out,
                "{},{:e},{:e},{:e},{:e},{:e},{},{:.6},{}",
                r.iter,
                r.f,
                r.d,
                r.gap,
                r.primal_res,
                r.dual_res,
                energy,
                r.seconds,
                r.phase.as_str()
            );
        }
        out
    }

    pub fn write_csv(&self, path: &std::path::Path) -> Result<()> {
        std::fs::write(path, self.to_csv())?;
        Ok(())
    }
}

/// Collects trace rows with a shared clock.
pub(crate) struct Recorder {
    start: Instant,
    pub rows: Vec<TraceRow>,
}

impl Recorder {
    pub fn new() -> Self {
        Self { start: Instant::now(), rows: Vec::new() }
    }

    pub fn elapsed(&self) -> f64 {
        self.start.elapsed().as_secs_f64()
    }

    #[allow(clippy::too_many_arguments)]
    pub fn push(&mut self, iter: usize, fdg: (f64, f64, f64), primal_res: f64, dual_res: f64, energy: Option<f64>, phase: Phase) {
        let seconds = self.elapsed();
        self.rows.push(TraceRow { iter, f: fdg.0, d: fdg.1, gap: fdg.2, primal_res, dual_res, energy, seconds, phase });
    }

    pub fn finish(self, status: Status, iters: usize) -> RunTrace {
        RunTrace { rows: self.rows, status, iters }
    }
}

/// `(f, d, gap)` at an iterate, with NaN where a dual point cannot be built.
pub(crate) fn gap_or_nan(pb: &SplitProblem, st: &IterateState) -> (f64, f64, f64) {
    let f = pb.primal_objective(&st.x).unwrap_or(f64::NAN);
    let d = pb.dual_feasible_from_iterate(st).and_then(|dual| pb.dual_objective(&dual)).unwrap_or(f64::NAN);
    (f, d, f - d)
}

/// `(phi1 - 1)||X - X*||^2 + ||Y - Y*||^2 + rho^-2 ||V - V*||^2`.
pub fn lyapunov_energy(st: &IterateState, reference: &IterateState, rho: f64, phi1: f64) -> f64 {
    (phi1 - 1.0) * st.x.dist(&reference.x).powi(2) + st.y.dist(&reference.y).powi(2) + st.v.dist(&reference.v).powi(2) / (rho * rho)
}

/// `prox_{t F}` for the problem's kind.
pub(crate) fn prox_f(pb: &SplitProblem, m: &SymMat, t: f64) -> Result<SymMat> {
    match pb.kind {
        ProblemKind::Covariance => prox_cov_f(m, &pb.s, t, pb.eps),
        ProblemKind::Precision => prox_logdet_g(m, &pb.s, t, pb.eps),
    }
}

/// One linearized ADMM iteration; `phi1 = phi2 = 1` is plain ADMM.
pub fn ladmm_step(pb: &SplitProblem, st: &IterateState, rho: f64, phi1: f64, phi2: f64) -> Result<IterateState> {
    let x_arg = &st.x - &(&(&st.x - &st.y) + &st.v.scale(1.0 / rho)).scale(1.0 / phi1);
    let x = prox_f(pb, &x_arg, 1.0 / (rho * phi1))?;
    let y_arg = &st.y - &(&(&st.y - &x) - &st.v.scale(1.0 / rho)).scale(1.0 / phi2);
    let y = soft_threshold_offdiag(&y_arg, pb.lambda / (rho * phi2))?;
    let v = &st.v + &(&x - &y).scale(rho);
    Ok(IterateState { x, y, v })
}

/// Whether the linearized X-surrogate majorizes the coupling at `x_new`.
/// The coupling `rho/2 ||X - Y + V/rho||^2` has curvature `rho`, so any
/// `phi >= 1` passes up to rounding.
fn majorizes(st: &IterateState, x_new: &SymMat, rho: f64, phi: f64) -> bool {
    let c = |x: &SymMat| 0.5 * rho * (&(x - &st.y) + &st.v.scale(1.0 / rho)).frob_norm_sq();
    let grad = &(&st.x - &st.y).scale(rho) + &st.v;
    let dx = x_new - &st.x;
    let surrogate = c(&st.x) + grad.inner(&dx) + 0.5 * rho * phi * dx.frob_norm_sq();
    c(x_new) <= surrogate + 1e-12 * surrogate.abs().max(1.0)
}

pub fn default_init(pb: &SplitProblem) -> IterateState {
    let p = pb.dim();
    let x = match pb.kind {
        ProblemKind::Covariance => psd_floor_project(&pb.s, pb.eps).expect("eps validated positive"),
        ProblemKind::Precision => {
            let mean_diag = pb.s.trace() / p as f64;
            let scale = if mean_diag > 0.0 { (1.0 / mean_diag).max(1.0) } else { 1.0 };
            SymMat::scaled_identity(p, scale)
        }
    };
    IterateState { y: x.clone(), x, v: SymMat::zeros(p) }
}

fn check_init(pb: &SplitProblem, init: &IterateState) -> Result<()> {
    if init.dim() != pb.dim() || init.y.dim() != pb.dim() || init.v.dim() != pb.dim() {
        return Err(Error::DimMismatch { left: init.dim(), right: pb.dim() });
    }
    Ok(())
}

pub(crate) fn is_finite(st: &IterateState) -> bool {
    st.x.max_abs().is_finite() && st.y.max_abs().is_finite() && st.v.max_abs().is_finite()
}

/// Shared driver for the ADMM family. `iter_offset` and `phase` let the
/// learned solver continue a trace.
#[allow(clippy::too_many_arguments)]
pub(crate) fn run_ladmm(
    pb: &SplitProblem,
    cfg: &SolverConfig,
    init: IterateState,
    phi: (f64, f64),
    reference: Option<&IterateState>,
    rec: &mut Recorder,
    iter_offset: usize,
    phase: Phase,
) -> Result<(IterateState, Status, usize)> {
    let (mut phi1, phi2) = phi;
    let mut st = init;
    let energy = |st: &IterateState, phi1: f64| reference.map(|r| lyapunov_energy(st, r, cfg.rho, phi1));
    if iter_offset == 0 {
        rec.push(0, gap_or_nan(pb, &st), st.x.dist(&st.y), 0.0, energy(&st, phi1), phase);
    }
    for k in 1..=cfg.max_iter {
        let mut next = ladmm_step(pb, &st, cfg.rho, phi1, phi2)?;
        if cfg.backtracking {
            let mut grown = 0;
            while !majorizes(&st, &next.x, cfg.rho, phi1) && grown < 60 {
                phi1 *= 1.5;
                next = ladmm_step(pb, &st, cfg.rho, phi1, phi2)?;
                grown += 1;
            }
        }
        let iter = iter_offset + k;
        if !is_finite(&next) {
            rec.push(iter, (f64::NAN, f64::NAN, f64::NAN), f64::NAN, f64::NAN, None, phase);
            return Ok((st, Status::Diverged, k));
        }
        let primal_res = next.x.dist(&next.y);
        let dual_res = cfg.rho * next.y.dist(&st.y);
        st = next;
        let residual_ok = primal_res <= cfg.tol_primal && dual_res <= cfg.tol_dual;
        if residual_ok || k % cfg.record_every == 0 || k == cfg.max_iter {
            let fdg = gap_or_nan(pb, &st);
            rec.push(iter, fdg, primal_res, dual_res, energy(&st, phi1), phase);
            if residual_ok || fdg.2 <= cfg.tol_gap {
                return Ok((st, Status::Converged, k));
            }
        }
    }
    Ok((st, Status::MaxIter, cfg.max_iter))
}

/// Linearized ADMM: `X <- prox_{F/(rho phi1)}(X - (X - Y + V/rho)/phi1)`,
/// `Y <- prox_{G/(rho phi2)}(Y - (Y - X+ - V/rho)/phi2)`, `V <- V + rho (X+ - Y+)`.
pub fn ladmm_unified(pb: &SplitProblem, cfg: &SolverConfig, init: IterateState) -> Result<(IterateState, RunTrace)> {
    ladmm_unified_with_reference(pb, cfg, init, None)
}

/// As [`ladmm_unified`], recording the Lyapunov energy against `reference`.
pub fn ladmm_unified_with_reference(
    pb: &SplitProblem,
    cfg: &SolverConfig,
    init: IterateState,
    reference: Option<&IterateState>,
) -> Result<(IterateState, RunTrace)> {
    cfg.validate()?;
    check_init(pb, &init)?;
    let phi = if cfg.backtracking { (1.0, 1.0) } else { (cfg.phi1, cfg.phi2) };
    let mut rec = Recorder::new();
    let (st, status, iters) = run_ladmm(pb, cfg, init, phi, reference, &mut rec, 0, Phase::Classic)?;
    Ok((st, rec.finish(status, iters)))
}

fn admm(pb: &SplitProblem, cfg: &SolverConfig, init: IterateState, kind: ProblemKind) -> Result<(IterateState, RunTrace)> {
    if pb.kind != kind {
        return Err(Error::InvalidParameter(format!("expected a {} problem", kind.as_str())));
    }
    if !(cfg.rho > 0.0) {
        return Err(Error::InvalidParameter(format!("rho must be positive, got {}", cfg.rho)));
    }
    cfg.validate_common()?;
    check_init(pb, &init)?;
    let mut rec = Recorder::new();
    let (st, status, iters) = run_ladmm(pb, cfg, init, (1.0, 1.0), None, &mut rec, 0, Phase::Classic)?;
    Ok((st, rec.finish(status, iters)))
}

/// ADMM for the covariance problem: eigenvalue-floor projection of the
/// averaged point, soft-thresholding at `lambda/rho`, multiplier ascent.
pub fn admm_covariance(pb: &SplitProblem, cfg: &SolverConfig, init: IterateState) -> Result<(IterateState, RunTrace)> {
    admm(pb, cfg, init, ProblemKind::Covariance)
}

/// ADMM for the graphical lasso, with the log-det step in closed form.
pub fn admm_precision(pb: &SplitProblem, cfg: &SolverConfig, init: IterateState) -> Result<(IterateState, RunTrace)> {
    admm(pb, cfg, init, ProblemKind::Precision)
}

/// Tight ADMM solve used as the reference triple for energies and
/// distance checks.
pub fn reference_solution(pb: &SplitProblem, max_iter: usize) -> Result<IterateState> {
    let cfg = SolverConfig {
        max_iter,
        tol_primal: 1e-13,
        tol_dual: 1e-13,
        tol_gap: 1e-300,
        record_every: max_iter.max(1),
        ..SolverConfig::default()
    };
    let (st, _) = admm(pb, &cfg, default_init(pb), pb.kind)?;
    Ok(st)
}

/// `c^2 |A| log p / n`, the statistical precision below which further
/// optimization does not improve the estimation error.
pub fn statistical_threshold(pb: &SplitProblem, support_size: usize, c: f64) -> f64 {
    c * c * support_size as f64 * (pb.dim() as f64).ln() / pb.n as f64
}

/// First recorded iteration whose gap is below the statistical threshold.
pub fn early_stop_statistical(trace: &RunTrace, pb: &SplitProblem, support_size: usize, c: f64) -> Option<usize> {
    let threshold = statistical_threshold(pb, support_size, c);
    trace.rows.iter().find(|r| r.gap <= threshold).map(|r| r.iter)
}
