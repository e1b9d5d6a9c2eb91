//! Reparameterized linearized ADMM with stage-wise step schedules.
//!
//! Stage `k` applies
//!
//! ```text
//! X+ = prox_{alpha F}(X - alpha o (V + gamma o (X - Y)))
//! Y+ = prox_{beta G}(Y + beta o (V + gamma o (X+ - Y)))
//! V+ = V + gamma o (X+ - Y+)
//! ```
//!
//! where the proxes are taken in the metric weighted by `alpha` and `beta`.
//! In weighted-prox mode `gamma = 1/beta` and `0 < alpha < beta`, which makes
//! every stage a contraction in the metric
//! `H_k = diag(1/alpha - 1/beta, 1/beta, beta)` on `(X, Y, V)`.

use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::problem::{IterateState, SplitProblem};
use crate::prox::{weighted_prox, ProxKind, WeightMat};
use crate::solvers::{gap_or_nan, is_finite, ladmm_step, run_ladmm, Phase, Recorder, RunTrace, SolverConfig, Status};
use crate::symcore::SymMat;

/// A stage parameter: one positive number or an entrywise positive matrix.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "ParamRepr", into = "ParamRepr")]
pub enum Param {
    Scalar(f64),
    Entrywise(SymMat),
}

#[derive(Serialize, Deserialize)]
#[serde(untagged)]
enum ParamRepr {
    Scalar(f64),
    Matrix(Vec<Vec<f64>>),
}

impl TryFrom<ParamRepr> for Param {
    type Error = Error;
    fn try_from(r: ParamRepr) -> Result<Self> {
        match r {
            ParamRepr::Scalar(v) => Ok(Param::Scalar(v)),
            ParamRepr::Matrix(rows) => {
                let p = rows.len();
                if rows.iter().any(|r| r.len() != p) {
                    return Err(Error::Parse("entrywise parameter must be square".into()));
                }
                let flat: Vec<f64> = rows.into_iter().flatten().collect();
                Ok(Param::Entrywise(SymMat::from_row_major(p, &flat)?))
            }
        }
    }
}

impl From<Param> for ParamRepr {
    fn from(p: Param) -> Self {
        match p {
            Param::Scalar(v) => ParamRepr::Scalar(v),
            Param::Entrywise(m) => ParamRepr::Matrix(m.to_rows()),
        }
    }
}

impl Param {
    pub fn min(&self) -> f64 {
        match self {
            Param::Scalar(v) => *v,
            Param::Entrywise(m) => m.min_entry(),
        }
    }

    pub fn max(&self) -> f64 {
        match self {
            Param::Scalar(v) => *v,
            Param::Entrywise(m) => m.max_entry(),
        }
    }

    pub fn scalar(&self) -> Option<f64> {
        match self {
            Param::Scalar(v) => Some(*v),
            Param::Entrywise(_) => None,
        }
    }

    /// `self o m`.
    pub fn apply(&self, m: &SymMat) -> SymMat {
        match self {
            Param::Scalar(v) => m.scale(*v),
            Param::Entrywise(w) => w.hadamard(m),
        }
    }

    pub fn recip(&self) -> Param {
        self.map(|v| 1.0 / v)
    }

    pub fn map(&self, f: impl Fn(f64) -> f64) -> Param {
        match self {
            Param::Scalar(v) => Param::Scalar(f(*v)),
            Param::Entrywise(m) => Param::Entrywise(m.map(f)),
        }
    }

    fn zip(&self, other: &Param, f: impl Fn(f64, f64) -> f64) -> Param {
        match (self, other) {
            (Param::Scalar(a), Param::Scalar(b)) => Param::Scalar(f(*a, *b)),
            (Param::Entrywise(a), Param::Scalar(b)) => Param::Entrywise(a.map(|x| f(x, *b))),
            (Param::Scalar(a), Param::Entrywise(b)) => Param::Entrywise(b.map(|y| f(*a, y))),
            (Param::Entrywise(a), Param::Entrywise(b)) => Param::Entrywise(a.zip_map(b, f)),
        }
    }

    fn all_pairs(&self, other: &Param, f: impl Fn(f64, f64) -> bool) -> bool {
        match self.zip(other, |a, b| if f(a, b) { 1.0 } else { 0.0 }) {
            Param::Scalar(v) => v == 1.0,
            Param::Entrywise(m) => m.min_entry() == 1.0,
        }
    }

    fn weight(&self) -> Result<WeightMat> {
        match self {
            Param::Scalar(v) => WeightMat::scalar(*v),
            Param::Entrywise(m) => WeightMat::entrywise(m.clone()),
        }
    }

    /// Sum of `self o m o m`.
    fn weighted_sq(&self, m: &SymMat) -> f64 {
        match self {
            Param::Scalar(v) => v * m.frob_norm_sq(),
            Param::Entrywise(w) => w.inner(&m.hadamard(m)),
        }
    }

    fn dim(&self) -> Option<usize> {
        match self {
            Param::Scalar(_) => None,
            Param::Entrywise(m) => Some(m.dim()),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Mode {
    /// `gamma = 1/beta`, `0 < alpha < beta`; the analyzed case.
    WeightedProx,
    /// All three parameters free and positive.
    General,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Stage {
    pub alpha: Param,
    pub beta: Param,
    pub gamma: Param,
}

impl Stage {
    pub fn scalar(alpha: f64, beta: f64, gamma: f64) -> Self {
        Self { alpha: Param::Scalar(alpha), beta: Param::Scalar(beta), gamma: Param::Scalar(gamma) }
    }

    /// Weighted-prox stage with `gamma = 1/beta`.
    pub fn weighted(alpha: Param, beta: Param) -> Self {
        let gamma = beta.recip();
        Self { alpha, beta, gamma }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StageParams {
    #[serde(rename = "K")]
    pub k_stages: usize,
    pub mode: Mode,
    pub stages: Vec<Stage>,
}

impl StageParams {
    pub fn new(mode: Mode, stages: Vec<Stage>) -> Result<Self> {
        let sp = Self { k_stages: stages.len(), mode, stages };
        sp.validate()?;
        Ok(sp)
    }

    /// Stages that reproduce linearized ADMM with `(rho, phi1, phi2)`:
    /// `alpha = 1/(rho phi1)`, `beta = 1/(rho phi2)`, `gamma = rho`.
    pub fn canonical(k: usize, cfg: &SolverConfig) -> Self {
        let stage = Stage::scalar(1.0 / (cfg.rho * cfg.phi1), 1.0 / (cfg.rho * cfg.phi2), cfg.rho);
        Self { k_stages: k, mode: Mode::General, stages: vec![stage; k] }
    }

    /// Weighted-prox stages equal to linearized ADMM with `(rho, phi1)` and
    /// an exact `Y` step: `alpha = 1/(rho phi1)`, `beta = 1/rho`.
    pub fn canonical_weighted(k: usize, rho: f64, phi1: f64) -> Self {
        let stage = Stage::weighted(Param::Scalar(1.0 / (rho * phi1)), Param::Scalar(1.0 / rho));
        Self { k_stages: k, mode: Mode::WeightedProx, stages: vec![stage; k] }
    }

    pub fn validate(&self) -> Result<()> {
        if self.stages.len() != self.k_stages {
            return Err(Error::InvalidParameter(format!("K = {} but {} stages given", self.k_stages, self.stages.len())));
        }
        let mut dim = None;
        for (k, st) in self.stages.iter().enumerate() {
            for p in [&st.alpha, &st.beta, &st.gamma] {
                if !(p.min() > 0.0) || !p.max().is_finite() {
                    return Err(Error::NonPositiveWeight(p.min()));
                }
                if let Some(d) = p.dim() {
                    if *dim.get_or_insert(d) != d {
                        return Err(Error::DimMismatch { left: d, right: dim.unwrap_or(d) });
                    }
                }
            }
            if self.mode == Mode::WeightedProx {
                if !st.alpha.all_pairs(&st.beta, |a, b| a < b) {
                    return Err(Error::InvalidMetric { stage: k });
                }
                let tied = st.gamma.all_pairs(&st.beta, |g, b| (g * b - 1.0).abs() <= 1e-12);
                if !tied {
                    return Err(Error::InvalidParameter(format!("stage {k}: gamma must equal 1/beta")));
                }
            }
        }
        Ok(())
    }

    pub fn stage(&self, k: usize) -> Result<&Stage> {
        self.stages.get(k).ok_or_else(|| Error::InvalidParameter(format!("stage {k} out of range (K = {})", self.k_stages)))
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    pub fn from_json(s: &str) -> Result<Self> {
        let sp: StageParams = serde_json::from_str(s)?;
        sp.validate()?;
        Ok(sp)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_json()?)?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_json(&std::fs::read_to_string(path)?)
    }
}

/// One learned stage.
pub fn lbo_step(pb: &SplitProblem, st: &IterateState, sp: &StageParams, k: usize) -> Result<IterateState> {
    let stage = sp.stage(k)?;
    apply_stage(pb, st, stage)
}

pub(crate) fn apply_stage(pb: &SplitProblem, st: &IterateState, stage: &Stage) -> Result<IterateState> {
    let ctx = pb.prox_context();
    let coupling = &st.v + &stage.gamma.apply(&(&st.x - &st.y));
    let x_arg = &st.x - &stage.alpha.apply(&coupling);
    let x = weighted_prox(pb.f_kind(), &x_arg, &ctx, &stage.alpha.weight()?)?;
    let y_arg = &st.y + &stage.beta.apply(&(&st.v + &stage.gamma.apply(&(&x - &st.y))));
    let y = weighted_prox(ProxKind::L1Off, &y_arg, &ctx, &stage.beta.weight()?)?;
    let v = &st.v + &stage.gamma.apply(&(&x - &y));
    Ok(IterateState { x, y, v })
}

/// Runs the `K` learned stages only, returning every iterate `omega_0..omega_K`.
pub fn lbo_iterates(pb: &SplitProblem, sp: &StageParams, init: IterateState) -> Result<Vec<IterateState>> {
    sp.validate()?;
    let mut out = Vec::with_capacity(sp.k_stages + 1);
    out.push(init);
    for k in 0..sp.k_stages {
        let next = lbo_step(pb, out.last().expect("nonempty"), sp, k)?;
        out.push(next);
    }
    Ok(out)
}

/// `K` learned stages, then linearized ADMM with `tail_cfg` when its
/// `max_iter` is positive.
pub fn lbo_solve(pb: &SplitProblem, sp: &StageParams, init: IterateState, tail_cfg: &SolverConfig) -> Result<(IterateState, RunTrace)> {
    sp.validate()?;
    if tail_cfg.max_iter > 0 {
        tail_cfg.validate()?;
    }
    if init.dim() != pb.dim() {
        return Err(Error::DimMismatch { left: init.dim(), right: pb.dim() });
    }
    let mut rec = Recorder::new();
    let mut st = init;
    if sp.k_stages > 0 || tail_cfg.max_iter == 0 {
        // With no learned stages the tail driver writes the initial row.
        rec.push(0, gap_or_nan(pb, &st), st.x.dist(&st.y), 0.0, None, Phase::Classic);
    }
    for k in 0..sp.k_stages {
        let stage = &sp.stages[k];
        let next = apply_stage(pb, &st, stage)?;
        if !is_finite(&next) {
            rec.push(k + 1, (f64::NAN, f64::NAN, f64::NAN), f64::NAN, f64::NAN, None, Phase::Learned);
            return Ok((st, rec.finish(Status::Diverged, k + 1)));
        }
        let primal_res = next.x.dist(&next.y);
        let dual_res = stage.gamma.apply(&(&next.y - &st.y)).frob_norm();
        st = next;
        rec.push(k + 1, gap_or_nan(pb, &st), primal_res, dual_res, None, Phase::Learned);
    }
    if tail_cfg.max_iter == 0 {
        let iters = sp.k_stages;
        return Ok((st, rec.finish(Status::MaxIter, iters)));
    }
    let phase = if sp.k_stages == 0 { Phase::Classic } else { Phase::Tail };
    let phi = if tail_cfg.backtracking { (1.0, 1.0) } else { (tail_cfg.phi1, tail_cfg.phi2) };
    let (st, status, iters) = run_ladmm(pb, tail_cfg, st, phi, None, &mut rec, sp.k_stages, phase)?;
    Ok((st, rec.finish(status, sp.k_stages + iters)))
}

/// Block weights `(1/alpha - 1/beta, 1/beta, beta)` of `H_k`.
pub fn hk_blocks(sp: &StageParams, k: usize) -> Result<(Param, Param, Param)> {
    let stage = sp.stage(k)?;
    if !stage.alpha.all_pairs(&stage.beta, |a, b| a < b) {
        return Err(Error::InvalidMetric { stage: k });
    }
    let a = stage.alpha.zip(&stage.beta, |a, b| 1.0 / a - 1.0 / b);
    Ok((a, stage.beta.recip(), stage.beta.clone()))
}

/// `||omega||_{H_k}^2`.
pub fn hk_norm_sq(sp: &StageParams, k: usize, omega: &IterateState) -> Result<f64> {
    let (a, b, c) = hk_blocks(sp, k)?;
    Ok(a.weighted_sq(&omega.x) + b.weighted_sq(&omega.y) + c.weighted_sq(&omega.v))
}

pub fn hk_norm(sp: &StageParams, k: usize, omega: &IterateState) -> Result<f64> {
    Ok(hk_norm_sq(sp, k, omega)?.sqrt())
}

fn diff(a: &IterateState, b: &IterateState) -> IterateState {
    IterateState { x: &a.x - &b.x, y: &a.y - &b.y, v: &a.v - &b.v }
}

/// `||a - b||_{H_k}^2`.
pub fn hk_dist_sq(sp: &StageParams, k: usize, a: &IterateState, b: &IterateState) -> Result<f64> {
    hk_norm_sq(sp, k, &diff(a, b))
}

/// `dist^2_{H_{k+1}}(omega_{k+1}, ref) - dist^2_{H_k}(omega_k, ref)`. The
/// last stage's metric is reused past the end of the schedule.
pub fn hk_dist_drop(sp: &StageParams, k: usize, omega_k: &IterateState, omega_k1: &IterateState, reference: &IterateState) -> Result<f64> {
    let next = (k + 1).min(sp.k_stages.saturating_sub(1));
    Ok(hk_dist_sq(sp, next, omega_k1, reference)? - hk_dist_sq(sp, k, omega_k, reference)?)
}

/// Contraction slack at stage `k`:
/// `||w_k - w*||^2 - ||w_{k+1} - w*||^2 - ||w_k - w_{k+1}||^2`, all in `H_k`.
/// Nonnegative when the stage is a contraction toward `reference`.
pub fn contraction_slack(
    sp: &StageParams,
    k: usize,
    omega_k: &IterateState,
    omega_k1: &IterateState,
    reference: &IterateState,
) -> Result<f64> {
    Ok(hk_dist_sq(sp, k, omega_k, reference)? - hk_dist_sq(sp, k, omega_k1, reference)? - hk_dist_sq(sp, k, omega_k, omega_k1)?)
}

/// Least-squares slope of `log d_k` against `k` over the last half of the
/// sequence; negative slopes mean linear convergence at rate `exp(slope)`.
pub fn linear_rate(dists: &[f64]) -> Option<f64> {
    let start = dists.len() / 2;
    let pts: Vec<(f64, f64)> =
        dists[start..].iter().enumerate().filter(|(_, d)| **d > 0.0 && d.is_finite()).map(|(i, d)| ((start + i) as f64, d.ln())).collect();
    if pts.len() < 2 {
        return None;
    }
    let n = pts.len() as f64;
    let mx = pts.iter().map(|p| p.0).sum::<f64>() / n;
    let my = pts.iter().map(|p| p.1).sum::<f64>() / n;
    let sxy: f64 = pts.iter().map(|p| (p.0 - mx) * (p.1 - my)).sum();
    let sxx: f64 = pts.iter().map(|p| (p.0 - mx).powi(2)).sum();
    Some(sxy / sxx)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainSettings {
    pub k_stages: usize,
    /// Per-stage loss weights; empty means all ones.
    pub loss_weights: Vec<f64>,
    pub lr: f64,
    pub epochs: usize,
    /// Relative central-difference probe: `h = fd_step (1 + |param|)`.
    pub fd_step: f64,
    /// Margin keeping `delta <= alpha <= beta - delta`.
    pub delta: f64,
    /// `c0` of the band `||H_{k+1} - H_k|| <= c0/(k+1)^2 ||H_{k+1}||`.
    pub schedule_decay: Option<f64>,
    /// Penalty and linearization of the canonical starting schedule.
    pub init_rho: f64,
    pub init_phi1: f64,
}

impl Default for TrainSettings {
    fn default() -> Self {
        Self {
            k_stages: 10,
            loss_weights: Vec::new(),
            lr: 0.5,
            epochs: 50,
            fd_step: 1e-4,
            delta: 1e-3,
            schedule_decay: None,
            init_rho: 1.0,
            init_phi1: 1.5,
        }
    }
}

impl TrainSettings {
    pub fn validate(&self) -> Result<()> {
        if self.k_stages == 0 {
            return Err(Error::InvalidParameter("training needs at least one stage".into()));
        }
        for (name, v) in [("lr", self.lr), ("fd_step", self.fd_step), ("delta", self.delta)] {
            if !(v > 0.0) {
                return Err(Error::InvalidParameter(format!("{name} must be positive, got {v}")));
            }
        }
        if !self.loss_weights.is_empty() && self.loss_weights.len() != self.k_stages {
            return Err(Error::InvalidParameter("loss_weights must have one entry per stage".into()));
        }
        if self.loss_weights.iter().any(|w| !(*w >= 0.0)) {
            return Err(Error::InvalidParameter("loss weights must be nonnegative".into()));
        }
        if let Some(c0) = self.schedule_decay {
            if !(c0 >= 0.0) {
                return Err(Error::InvalidParameter(format!("schedule_decay must be nonnegative, got {c0}")));
            }
        }
        Ok(())
    }

    fn weight(&self, k: usize) -> f64 {
        self.loss_weights.get(k).copied().unwrap_or(1.0)
    }
}

#[derive(Debug, Clone)]
pub struct TrainConfig {
    pub instance_batch: Vec<SplitProblem>,
    pub settings: TrainSettings,
    /// Starting schedule; the canonical weighted schedule when absent.
    pub init: Option<StageParams>,
}

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    pub params: StageParams,
    pub initial_loss: f64,
    pub best_loss: f64,
    /// Loss of the accepted schedule after each epoch.
    pub history: Vec<f64>,
}

/// `sum_k w_k gap(omega_k)` on one instance, from the default start.
pub fn schedule_loss(pb: &SplitProblem, sp: &StageParams, settings: &TrainSettings) -> Result<f64> {
    let mut st = crate::solvers::default_init(pb);
    let mut loss = 0.0;
    for k in 0..sp.k_stages {
        st = apply_stage(pb, &st, &sp.stages[k])?;
        let w = settings.weight(k);
        if w == 0.0 {
            continue;
        }
        let (_, _, gap) = gap_or_nan(pb, &st);
        if !gap.is_finite() {
            return Err(Error::NonFiniteLoss { stage: k });
        }
        loss += w * gap;
    }
    Ok(loss)
}

/// Gap after the last stage, from the default start.
pub fn final_gap(pb: &SplitProblem, sp: &StageParams) -> Result<f64> {
    let iterates = lbo_iterates(pb, sp, crate::solvers::default_init(pb))?;
    Ok(gap_or_nan(pb, iterates.last().expect("nonempty")).2)
}

fn batch_loss(batch: &[SplitProblem], sp: &StageParams, settings: &TrainSettings) -> Result<f64> {
    let losses: Result<Vec<f64>> = batch.par_iter().map(|pb| schedule_loss(pb, sp, settings)).collect();
    Ok(losses?.iter().sum())
}

/// Scalar `(alpha_k, beta_k)` pairs of a weighted schedule.
fn free_params(sp: &StageParams) -> Result<Vec<f64>> {
    let mut out = Vec::with_capacity(2 * sp.k_stages);
    for (k, st) in sp.stages.iter().enumerate() {
        match (st.alpha.scalar(), st.beta.scalar()) {
            (Some(a), Some(b)) => out.extend([a, b]),
            _ => return Err(Error::InvalidParameter(format!("stage {k}: training uses scalar parameters"))),
        }
    }
    Ok(out)
}

fn from_free(theta: &[f64]) -> StageParams {
    let stages = theta.chunks(2).map(|ab| Stage::weighted(Param::Scalar(ab[0]), Param::Scalar(ab[1]))).collect::<Vec<_>>();
    StageParams { k_stages: stages.len(), mode: Mode::WeightedProx, stages }
}

fn metric_vec(a: f64, b: f64) -> [f64; 3] {
    [1.0 / a - 1.0 / b, 1.0 / b, b]
}

fn norm3(v: [f64; 3]) -> f64 {
    v.iter().map(|x| x * x).sum::<f64>().sqrt()
}

fn within_band(prev: (f64, f64), next: (f64, f64), bound: f64) -> bool {
    let (hp, hn) = (metric_vec(prev.0, prev.1), metric_vec(next.0, next.1));
    norm3([hn[0] - hp[0], hn[1] - hp[1], hn[2] - hp[2]]) <= bound * norm3(hn) * (1.0 + 1e-12)
}

/// Projects onto `{delta <= alpha <= beta - delta}` and then, stage by
/// stage, pulls `(alpha, beta)_{k+1}` toward `(alpha, beta)_k` until the
/// decay band holds.
pub fn project_schedule(theta: &mut [f64], delta: f64, decay: Option<f64>) {
    for ab in theta.chunks_mut(2) {
        ab[0] = ab[0].max(delta);
        ab[1] = ab[1].max(ab[0] + delta);
    }
    let Some(c0) = decay else { return };
    let k = theta.len() / 2;
    for i in 0..k.saturating_sub(1) {
        let prev = (theta[2 * i], theta[2 * i + 1]);
        let target = (theta[2 * i + 2], theta[2 * i + 3]);
        let bound = c0 / ((i + 1) as f64).powi(2);
        if within_band(prev, target, bound) {
            continue;
        }
        let at = |t: f64| (prev.0 + t * (target.0 - prev.0), prev.1 + t * (target.1 - prev.1));
        let (mut lo, mut hi) = (0.0, 1.0);
        for _ in 0..60 {
            let mid = 0.5 * (lo + hi);
            if within_band(prev, at(mid), bound) {
                lo = mid;
            } else {
                hi = mid;
            }
        }
        let (a, b) = at(lo);
        theta[2 * i + 2] = a;
        theta[2 * i + 3] = b;
    }
}

/// Whether a scalar weighted schedule satisfies the decay band with `c0`.
pub fn satisfies_decay(sp: &StageParams, c0: f64) -> bool {
    let Ok(theta) = free_params(sp) else { return false };
    (0..sp.k_stages.saturating_sub(1))
        .all(|i| within_band((theta[2 * i], theta[2 * i + 1]), (theta[2 * i + 2], theta[2 * i + 3]), c0 / ((i + 1) as f64).powi(2)))
}

/// Projected finite-difference descent on the summed per-stage gaps of the
/// batch. The step adapts: an epoch whose update raises the loss is
/// rejected and the step halved; accepted epochs grow it by 1.2. The best
/// schedule seen is returned.
pub fn train_schedule(cfg: &TrainConfig) -> Result<TrainOutcome> {
    let s = &cfg.settings;
    s.validate()?;
    let first = cfg.instance_batch.first().ok_or_else(|| Error::InvalidParameter("training batch is empty".into()))?;
    if cfg.instance_batch.iter().any(|pb| pb.dim() != first.dim() || pb.kind != first.kind) {
        return Err(Error::InvalidParameter("batch instances must share kind and dimension".into()));
    }
    let init = match &cfg.init {
        Some(sp) => sp.clone(),
        None => StageParams::canonical_weighted(s.k_stages, s.init_rho, s.init_phi1),
    };
    if init.mode != Mode::WeightedProx || init.k_stages != s.k_stages {
        return Err(Error::InvalidParameter("initial schedule must be weighted-prox with K stages".into()));
    }
    let mut theta = free_params(&init)?;
    if s.epochs == 0 {
        let loss = batch_loss(&cfg.instance_batch, &init, s)?;
        return Ok(TrainOutcome { params: init, initial_loss: loss, best_loss: loss, history: Vec::new() });
    }
    project_schedule(&mut theta, s.delta, s.schedule_decay);
    let eval = |th: &[f64]| batch_loss(&cfg.instance_batch, &from_free(th), s);
    let initial_loss = batch_loss(&cfg.instance_batch, &init, s)?;
    let mut current = eval(&theta)?;
    let scale = initial_loss.abs().max(f64::MIN_POSITIVE);
    let mut best = if current < initial_loss { (current, theta.clone()) } else { (initial_loss, free_params(&init)?) };
    let mut lr = s.lr;
    let mut history = Vec::with_capacity(s.epochs);
    for _ in 0..s.epochs {
        let mut grad = vec![0.0; theta.len()];
        for i in 0..theta.len() {
            let h = s.fd_step * (1.0 + theta[i].abs());
            let mut plus = theta.clone();
            plus[i] += h;
            let mut minus = theta.clone();
            minus[i] -= h;
            grad[i] = (eval(&plus)? - eval(&minus)?) / (2.0 * h * scale);
        }
        let mut cand: Vec<f64> = theta.iter().zip(&grad).map(|(t, g)| t - lr * g).collect();
        project_schedule(&mut cand, s.delta, s.schedule_decay);
        let loss = eval(&cand)?;
        if loss < current {
            theta = cand;
            current = loss;
            lr *= 1.2;
            if loss < best.0 {
                best = (loss, theta.clone());
            }
        } else {
            lr *= 0.5;
        }
        history.push(current);
    }
    Ok(TrainOutcome { params: from_free(&best.1), initial_loss, best_loss: best.0, history })
}

/// Content hash naming a cached schedule.
pub fn schedule_cache_key(pb: &SplitProblem, tag: &str, settings: &TrainSettings, batch_len: usize) -> Result<String> {
    #[derive(Serialize)]
    struct Key<'a> {
        kind: &'a str,
        p: usize,
        lambda: f64,
        tag: &'a str,
        batch: usize,
        settings: &'a TrainSettings,
    }
    let key = Key { kind: pb.kind.as_str(), p: pb.dim(), lambda: pb.lambda, tag, batch: batch_len, settings };
    let digest = Sha256::digest(serde_json::to_vec(&key)?);
    Ok(hex::encode(&digest[..12]))
}

/// Loads `<dir>/<hash>.json` or trains and writes it.
pub fn train_cached(cfg: &TrainConfig, tag: &str, dir: &Path) -> Result<StageParams> {
    let first = cfg.instance_batch.first().ok_or_else(|| Error::InvalidParameter("training batch is empty".into()))?;
    let key = schedule_cache_key(first, tag, &cfg.settings, cfg.instance_batch.len())?;
    let path = dir.join(format!("{key}.json"));
    if path.exists() {
        if let Ok(sp) = StageParams::load(&path) {
            return Ok(sp);
        }
    }
    let out = train_schedule(cfg)?;
    std::fs::create_dir_all(dir)?;
    out.params.save(&path)?;
    Ok(out.params)
}

/// Searches single-stage parameters whose step from `st` lands strictly
/// closer to `reference` than the linearized ADMM step with `cfg`.
///
/// Probes multiply the canonical `alpha = 1/(rho phi1)` and
/// `beta = 1/(rho phi2)` by `exp(s u)` with `u` uniform in `[-1, 1]^2` and
/// scales `s` cycling from `ln 4` down by halves, so every probe stays within
/// `[1/4, 4]` of canonical; `gamma = rho` throughout.
pub fn superiority_search(
    pb: &SplitProblem,
    st: &IterateState,
    cfg: &SolverConfig,
    probes: usize,
    reference: &IterateState,
    seed: u64,
) -> Result<Option<StageParams>> {
    if !(cfg.rho > 0.0 && cfg.rho < 1.0) {
        return Err(Error::InvalidParameter(format!("superiority search assumes 0 < rho < 1, got {}", cfg.rho)));
    }
    let classic = ladmm_step(pb, st, cfg.rho, cfg.phi1, cfg.phi2)?;
    let base_err = classic.dist(reference);
    let (a0, b0) = (1.0 / (cfg.rho * cfg.phi1), 1.0 / (cfg.rho * cfg.phi2));
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    for j in 0..probes {
        let scale = 4f64.ln() / f64::powi(2.0, (j % 8) as i32);
        let (ua, ub): (f64, f64) = (rng.random_range(-1.0..=1.0), rng.random_range(-1.0..=1.0));
        let stage = Stage::scalar(a0 * (scale * ua).exp(), b0 * (scale * ub).exp(), cfg.rho);
        let next = apply_stage(pb, st, &stage)?;
        if next.dist(reference) < base_err - 1e-12 {
            return Ok(Some(StageParams { k_stages: 1, mode: Mode::General, stages: vec![stage] }));
        }
    }
    Ok(None)
}
