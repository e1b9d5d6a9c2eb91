use std::collections::BTreeMap;
use std::fmt;
use std::path::{Path, PathBuf};

use matest::generators::{derive_seed, StructureSpec};
use matest::ProblemKind;
use serde::{Deserialize, Serialize};

use crate::error::{CliError, CliResult};

pub const DEFAULT_N: usize = 500;

/// Environment variable replacing the default base seed.
pub const SEED_ENV: &str = "MATEST_SEED";

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "lowercase")]
pub enum SolverName {
    Admm,
    Ladmm,
    Lbo,
    Tosa,
    Pfbs,
    Fista,
    Proxgrad,
    Spg,
}

impl SolverName {
    pub const ALL: [SolverName; 8] = [
        SolverName::Admm,
        SolverName::Ladmm,
        SolverName::Lbo,
        SolverName::Tosa,
        SolverName::Pfbs,
        SolverName::Fista,
        SolverName::Proxgrad,
        SolverName::Spg,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            SolverName::Admm => "admm",
            SolverName::Ladmm => "ladmm",
            SolverName::Lbo => "lbo",
            SolverName::Tosa => "tosa",
            SolverName::Pfbs => "pfbs",
            SolverName::Fista => "fista",
            SolverName::Proxgrad => "proxgrad",
            SolverName::Spg => "spg",
        }
    }

    pub fn supports(self, kind: ProblemKind) -> bool {
        match self {
            SolverName::Admm | SolverName::Ladmm | SolverName::Lbo => true,
            SolverName::Tosa | SolverName::Pfbs | SolverName::Fista => kind == ProblemKind::Covariance,
            SolverName::Proxgrad | SolverName::Spg => kind == ProblemKind::Precision,
        }
    }
}

impl fmt::Display for SolverName {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

/// Per-solver settings; unset fields keep the library defaults.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SolverOverrides {
    pub lambda: Option<f64>,
    pub rho: Option<f64>,
    pub phi1: Option<f64>,
    pub phi2: Option<f64>,
    pub max_iter: Option<usize>,
    pub tol_gap: Option<f64>,
    pub tol_primal: Option<f64>,
    pub tol_dual: Option<f64>,
    /// Step size of the proximal-gradient baselines.
    pub step: Option<f64>,
}

impl SolverOverrides {
    /// Fields set in `top` win over `self`.
    pub fn merged(&self, top: &SolverOverrides) -> SolverOverrides {
        SolverOverrides {
            lambda: top.lambda.or(self.lambda),
            rho: top.rho.or(self.rho),
            phi1: top.phi1.or(self.phi1),
            phi2: top.phi2.or(self.phi2),
            max_iter: top.max_iter.or(self.max_iter),
            tol_gap: top.tol_gap.or(self.tol_gap),
            tol_primal: top.tol_primal.or(self.tol_primal),
            tol_dual: top.tol_dual.or(self.tol_dual),
            step: top.step.or(self.step),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct LboPlan {
    pub stages: usize,
    pub epochs: usize,
    pub lr: f64,
    pub train_instances: usize,
    /// Continue with linearized ADMM after the learned stages.
    pub tail: bool,
}

impl Default for LboPlan {
    fn default() -> Self {
        Self { stages: 10, epochs: 15, lr: 0.5, train_instances: 4, tail: true }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentPlan {
    pub name: String,
    pub structures: Vec<StructureSpec>,
    pub p: Vec<usize>,
    #[serde(default = "default_n")]
    pub n: usize,
    pub solvers: Vec<SolverName>,
    #[serde(default)]
    pub overrides: BTreeMap<SolverName, SolverOverrides>,
    #[serde(default = "default_seeds")]
    pub seeds: Vec<u64>,
    #[serde(default)]
    pub output: Option<PathBuf>,
    #[serde(default)]
    pub lbo: LboPlan,
}

fn default_n() -> usize {
    DEFAULT_N
}

fn default_seeds() -> Vec<u64> {
    vec![0]
}

/// One `(structure, p)` combination of a plan.
#[derive(Debug, Clone, PartialEq)]
pub struct Family {
    pub structure: StructureSpec,
    pub p: usize,
}

impl Family {
    pub fn tag(&self) -> String {
        format!("{}_{}_p{}", self.structure.name(), self.structure.param_label().replace('=', ""), self.p)
    }
}

impl ExperimentPlan {
    pub fn load(path: &Path) -> CliResult<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| CliError::Usage(format!("cannot read plan {}: {e}", path.display())))?;
        let plan: ExperimentPlan =
            serde_json::from_str(&text).map_err(|e| CliError::Usage(format!("invalid plan {}: {e}", path.display())))?;
        plan.validate()?;
        Ok(plan)
    }

    pub fn validate(&self) -> CliResult<()> {
        let usage = |m: &str| Err(CliError::Usage(format!("plan '{}': {m}", self.name)));
        if self.structures.is_empty() || self.p.is_empty() || self.solvers.is_empty() || self.seeds.is_empty() {
            return usage("structure, p, solver and seed lists must be nonempty");
        }
        if self.n == 0 {
            return usage("n must be positive");
        }
        if self.solvers.contains(&SolverName::Lbo)
            && (self.lbo.stages == 0 || self.lbo.train_instances == 0 || self.lbo.lr.is_nan() || self.lbo.lr <= 0.0)
        {
            return usage("lbo needs positive stages, train_instances and lr");
        }
        for fam in self.families() {
            fam.structure.validate(fam.p).map_err(|e| CliError::Usage(format!("plan '{}': {e}", self.name)))?;
        }
        Ok(())
    }

    pub fn families(&self) -> Vec<Family> {
        self.structures.iter().flat_map(|s| self.p.iter().map(move |&p| Family { structure: s.at_dim(p), p })).collect()
    }

    pub fn output_dir(&self) -> PathBuf {
        self.output.clone().unwrap_or_else(|| PathBuf::from("results").join(&self.name))
    }

    pub fn overrides_for(&self, solver: SolverName) -> SolverOverrides {
        self.overrides.get(&solver).cloned().unwrap_or_default()
    }
}

/// `MATEST_SEED` if set and numeric, else 0.
pub fn base_seed() -> CliResult<u64> {
    match std::env::var(SEED_ENV) {
        Ok(v) => v.trim().parse().map_err(|_| CliError::Usage(format!("{SEED_ENV} must be an unsigned integer, got '{v}'"))),
        Err(_) => Ok(0),
    }
}

/// Truth and sample seeds of the instance for plan seed `seed`.
pub fn instance_seeds(base: u64, seed: u64) -> (u64, u64) {
    let truth = derive_seed(base, seed);
    (truth, derive_seed(truth, 1))
}
