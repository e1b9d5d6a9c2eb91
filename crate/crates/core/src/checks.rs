//! Property battery behind the `check` command. Each suite runs a fixed,
//! seeded set of instances and reports one pass/fail line.

use std::fmt;
use std::str::FromStr;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::generators::{concentration_experiment, derive_seed, Instance, StructureSpec};
use crate::lbo::{
    contraction_slack, hk_dist_drop, lbo_iterates, lbo_step, project_schedule, superiority_search, Mode, Param, Stage, StageParams,
};
use crate::problem::{IterateState, ProblemKind, SplitProblem};
use crate::solvers::{default_init, ladmm_step, ladmm_unified_with_reference, reference_solution, SolverConfig};
use crate::testutil::random_sym;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Suite {
    Lyapunov,
    Contraction,
    Monotonicity,
    Reduction,
    Superiority,
    Concentration,
}

impl Suite {
    pub const ALL: [Suite; 6] =
        [Suite::Lyapunov, Suite::Contraction, Suite::Monotonicity, Suite::Reduction, Suite::Superiority, Suite::Concentration];

    pub fn as_str(self) -> &'static str {
        match self {
            Suite::Lyapunov => "lyapunov",
            Suite::Contraction => "contraction",
            Suite::Monotonicity => "monotonicity",
            Suite::Reduction => "reduction",
            Suite::Superiority => "superiority",
            Suite::Concentration => "concentration",
        }
    }
}

impl fmt::Display for Suite {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Suite {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Suite::ALL.into_iter().find(|x| x.as_str() == s).ok_or_else(|| Error::InvalidParameter(format!("unknown check suite '{s}'")))
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct CheckResult {
    pub suite: Suite,
    pub passed: bool,
    pub detail: String,
}

impl fmt::Display for CheckResult {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let tag = if self.passed { "PASS" } else { "FAIL" };
        write!(f, "{tag} {}: {}", self.suite, self.detail)
    }
}

pub fn run_suite(suite: Suite, seed: u64) -> Result<CheckResult> {
    let (passed, detail) = match suite {
        Suite::Lyapunov => lyapunov(seed)?,
        Suite::Contraction => contraction(seed)?,
        Suite::Monotonicity => monotonicity(seed)?,
        Suite::Reduction => reduction(seed)?,
        Suite::Superiority => superiority(seed)?,
        Suite::Concentration => concentration(seed)?,
    };
    Ok(CheckResult { suite, passed, detail })
}

/// Covariance instance with `n < p`, so the eigenvalue floor is active.
fn covariance_instance(p: usize, seed: u64) -> Result<SplitProblem> {
    let n = (2 * p) / 3;
    let inst = Instance::generate(&StructureSpec::toeplitz(0.7), p, n, 0, seed)?;
    SplitProblem::with_defaults(ProblemKind::Covariance, inst.sample_cov, n)
}

fn precision_instance(p: usize, seed: u64) -> Result<SplitProblem> {
    let n = 4 * p;
    let inst = Instance::generate(&StructureSpec::banded(2), p, n, 0, seed)?;
    SplitProblem::with_defaults(ProblemKind::Precision, inst.sample_cov, n)
}

fn mixed_instances(count: usize, p: usize, seed: u64) -> Result<Vec<SplitProblem>> {
    (0..count)
        .map(|i| {
            let s = derive_seed(seed, i as u64);
            if i % 2 == 0 {
                covariance_instance(p, s)
            } else {
                precision_instance(p, s)
            }
        })
        .collect()
}

/// Random weighted schedule with `alpha` in `[0.2, 1.5]` and a gap to
/// `beta` in `[0.1, 1.5]`, optionally projected onto a decay band.
pub fn random_schedule(rng: &mut impl Rng, k: usize, decay: Option<f64>) -> Result<StageParams> {
    let mut theta = Vec::with_capacity(2 * k);
    for _ in 0..k {
        let a: f64 = rng.random_range(0.2..1.5);
        theta.push(a);
        theta.push(a + rng.random_range(0.1..1.5));
    }
    project_schedule(&mut theta, 1e-3, decay);
    let stages = theta.chunks(2).map(|ab| Stage::weighted(Param::Scalar(ab[0]), Param::Scalar(ab[1]))).collect();
    StageParams::new(Mode::WeightedProx, stages)
}

fn lyapunov(seed: u64) -> Result<(bool, String)> {
    let instances = mixed_instances(6, 15, seed)?;
    let mut worst_rise = f64::NEG_INFINITY;
    let mut worst_res: f64 = 0.0;
    for pb in &instances {
        let reference = reference_solution(pb, 200_000)?;
        for phi in [1.1, 1.5, 3.0] {
            let cfg = SolverConfig { phi1: phi, phi2: phi, max_iter: 5000, tol_gap: 1e-300, ..SolverConfig::default() };
            let (_, trace) = ladmm_unified_with_reference(pb, &cfg, default_init(pb), Some(&reference))?;
            let energies: Vec<f64> = trace.rows.iter().filter_map(|r| r.energy).collect();
            for w in energies.windows(2) {
                worst_rise = worst_rise.max(w[1] - w[0]);
            }
            worst_res = worst_res.max(trace.last().map_or(f64::INFINITY, |r| r.primal_res));
        }
    }
    let passed = worst_rise <= 1e-7 && worst_res <= 1e-6;
    Ok((passed, format!("max energy increase {worst_rise:.3e}, max final primal residual {worst_res:.3e}")))
}

fn contraction(seed: u64) -> Result<(bool, String)> {
    let instances = mixed_instances(6, 15, seed)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut worst = f64::INFINITY;
    for pb in &instances {
        let reference = reference_solution(pb, 200_000)?;
        let sp = random_schedule(&mut rng, 30, None)?;
        let it = lbo_iterates(pb, &sp, default_init(pb))?;
        for k in 1..sp.k_stages {
            worst = worst.min(contraction_slack(&sp, k, &it[k], &it[k + 1], &reference)?);
        }
    }
    Ok((worst >= -1e-7, format!("min contraction slack {worst:.3e}")))
}

fn monotonicity(seed: u64) -> Result<(bool, String)> {
    let instances = mixed_instances(6, 15, seed)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 1);
    let mut worst = f64::NEG_INFINITY;
    for pb in &instances {
        let reference = reference_solution(pb, 200_000)?;
        let sp = random_schedule(&mut rng, 30, Some(0.5))?;
        let it = lbo_iterates(pb, &sp, default_init(pb))?;
        for k in 5..sp.k_stages - 1 {
            worst = worst.max(hk_dist_drop(&sp, k, &it[k], &it[k + 1], &reference)?);
        }
    }
    Ok((worst <= 1e-7, format!("max H-distance increase after burn-in {worst:.3e}")))
}

fn reduction(seed: u64) -> Result<(bool, String)> {
    let cfg = SolverConfig::default();
    let sp = StageParams::canonical(100, &cfg);
    let mut worst: f64 = 0.0;
    for pb in [covariance_instance(20, seed)?, precision_instance(20, seed)?] {
        let mut a = default_init(&pb);
        let mut b = a.clone();
        for k in 0..sp.k_stages {
            a = lbo_step(&pb, &a, &sp, k)?;
            b = ladmm_step(&pb, &b, cfg.rho, cfg.phi1, cfg.phi2)?;
            worst = worst.max(a.dist(&b));
        }
    }
    Ok((worst <= 1e-10, format!("max stage deviation {worst:.3e}")))
}

/// Random triple with `N(0, 1)` entries.
pub fn random_state(rng: &mut impl Rng, p: usize) -> IterateState {
    IterateState { x: random_sym(rng, p, 1.0), y: random_sym(rng, p, 1.0), v: random_sym(rng, p, 1.0) }
}

/// Fraction of random non-optimal 5x5 covariance states where the
/// single-stage search finds a strictly better step than LADMM.
pub fn superiority_rate(states: usize, probes: usize, seed: u64) -> Result<f64> {
    let cfg = SolverConfig { rho: 0.5, ..SolverConfig::default() };
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut hits = 0;
    for t in 0..states {
        let pb = covariance_instance(5, derive_seed(seed, t as u64))?;
        let reference = reference_solution(&pb, 200_000)?;
        let mut st = random_state(&mut rng, 5);
        while st.dist(&reference) <= 1e-6 {
            st = random_state(&mut rng, 5);
        }
        if superiority_search(&pb, &st, &cfg, probes, &reference, derive_seed(seed, 1000 + t as u64))?.is_some() {
            hits += 1;
        }
    }
    Ok(hits as f64 / states as f64)
}

fn superiority(seed: u64) -> Result<(bool, String)> {
    let rate = superiority_rate(100, 64, seed)?;
    Ok((rate >= 0.9, format!("success rate {:.0}%", 100.0 * rate)))
}

fn concentration(seed: u64) -> Result<(bool, String)> {
    let rows = concentration_experiment(&StructureSpec::toeplitz(0.5), &[25, 100, 400], &[100, 400, 1600], 50, seed)?;
    let ratios: Vec<f64> = rows.iter().map(|r| r.ratio).collect();
    let (lo, hi) = ratios.iter().fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), r| (lo.min(*r), hi.max(*r)));
    Ok((hi / lo <= 3.0, format!("ratio range [{lo:.3}, {hi:.3}], spread {:.2}x", hi / lo)))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn suite_names_round_trip() {
        for s in Suite::ALL {
            assert_eq!(s.as_str().parse::<Suite>().unwrap(), s);
        }
        assert!("nope".parse::<Suite>().is_err());
    }

    #[test]
    fn reduction_suite_passes() {
        let r = run_suite(Suite::Reduction, 3).unwrap();
        assert!(r.passed, "{r}");
        assert!(r.to_string().starts_with("PASS reduction"));
    }

    #[test]
    fn random_schedule_in_band() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let sp = random_schedule(&mut rng, 12, Some(0.5)).unwrap();
        assert!(crate::lbo::satisfies_decay(&sp, 0.5));
        sp.validate().unwrap();
    }
}
