//! `matest` command line: instance generation, single solves, schedule
//! training, benchmark grids, property checks and result tables.

use std::ffi::OsString;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand, ValueEnum};
use matest::checks::{run_suite, Suite};
use matest::generators::{Instance, StructureSpec};
use matest::lbo::{train_schedule, StageParams, TrainConfig};
use matest::metrics::evaluate;
use matest::ProblemKind;
use serde::Serialize;

pub mod error;
pub mod plan;
pub mod report;
pub mod runner;

pub use error::{CliError, CliResult};
use plan::{base_seed, instance_seeds, ExperimentPlan, LboPlan, SolverName, SolverOverrides};
use runner::{problem_for, run_plan, run_solver, train_settings, training_batch, BenchOptions};

#[derive(Parser, Debug)]
#[command(name = "matest", version, about = "Sparse covariance and precision estimation benchmarks")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Subcommand, Debug)]
pub enum Command {
    /// Write the instances of a plan to disk
    Generate(GenerateArgs),
    /// Run one solver on one instance
    Solve(SolveArgs),
    /// Train a stage schedule for a problem family
    Train(TrainArgs),
    /// Run a full experiment plan into results.csv
    Bench(BenchArgs),
    /// Run the property battery
    Check(CheckArgs),
    /// Aggregate a results.csv into per-solver tables
    Report(ReportArgs),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum KindArg {
    Covariance,
    Precision,
}

impl From<KindArg> for ProblemKind {
    fn from(k: KindArg) -> Self {
        match k {
            KindArg::Covariance => ProblemKind::Covariance,
            KindArg::Precision => ProblemKind::Precision,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum StructureArg {
    Toeplitz,
    Factor,
    Sparse,
    Block,
    Banded1,
    Banded2,
    Grid,
}

#[derive(Args, Debug, Clone)]
pub struct InstanceArgs {
    /// Load a saved instance directory instead of generating one
    #[arg(long)]
    pub instance: Option<PathBuf>,
    /// Must agree with the structure when given
    #[arg(long, value_enum)]
    pub kind: Option<KindArg>,
    #[arg(long, value_enum, default_value = "toeplitz")]
    pub structure: StructureArg,
    #[arg(long, default_value_t = 0.5)]
    pub varrho: f64,
    #[arg(long, default_value_t = 3)]
    pub m: usize,
    #[arg(long, default_value_t = 0.3)]
    pub q: f64,
    #[arg(long, default_value_t = 10)]
    pub block_size: usize,
    #[arg(long, default_value_t = 50)]
    pub p: usize,
    #[arg(long, default_value_t = plan::DEFAULT_N)]
    pub n: usize,
    /// Base seed; defaults to MATEST_SEED, then 0
    #[arg(long)]
    pub seed: Option<u64>,
}

impl InstanceArgs {
    pub fn structure_spec(&self) -> StructureSpec {
        let spec = match self.structure {
            StructureArg::Toeplitz => StructureSpec::toeplitz(self.varrho),
            StructureArg::Factor => StructureSpec::factor(self.m),
            StructureArg::Sparse => StructureSpec::sparse(self.q),
            StructureArg::Block => StructureSpec::block(self.block_size),
            StructureArg::Banded1 => StructureSpec::banded(2),
            StructureArg::Banded2 => StructureSpec::banded(4),
            StructureArg::Grid => StructureSpec::grid(0),
        };
        spec.at_dim(self.p)
    }

    fn checked_spec(&self) -> CliResult<StructureSpec> {
        let spec = self.structure_spec();
        if let Some(kind) = self.kind {
            if ProblemKind::from(kind) != spec.kind() {
                return Err(CliError::Usage(format!(
                    "structure {} yields a {} problem, not {}",
                    spec.name(),
                    spec.kind().as_str(),
                    ProblemKind::from(kind).as_str()
                )));
            }
        }
        spec.validate(self.p).map_err(|e| CliError::Usage(e.to_string()))?;
        Ok(spec)
    }

    fn seed(&self) -> CliResult<u64> {
        self.seed.map_or_else(base_seed, Ok)
    }

    pub fn load_or_generate(&self) -> CliResult<Instance> {
        if let Some(dir) = &self.instance {
            return Ok(Instance::load(dir)?);
        }
        let spec = self.checked_spec()?;
        let (ts, ss) = instance_seeds(self.seed()?, 0);
        Ok(Instance::generate(&spec, self.p, self.n, ts, ss)?)
    }
}

#[derive(Args, Debug)]
pub struct SolveArgs {
    #[command(flatten)]
    pub instance: InstanceArgs,
    #[arg(long, value_enum, default_value = "ladmm")]
    pub solver: SolverName,
    #[arg(long)]
    pub lambda: Option<f64>,
    #[arg(long)]
    pub rho: Option<f64>,
    #[arg(long)]
    pub phi1: Option<f64>,
    #[arg(long)]
    pub phi2: Option<f64>,
    #[arg(long)]
    pub max_iter: Option<usize>,
    #[arg(long)]
    pub tol_gap: Option<f64>,
    #[arg(long)]
    pub tol_primal: Option<f64>,
    #[arg(long)]
    pub tol_dual: Option<f64>,
    /// Step size of tosa, pfbs, fista, proxgrad and spg
    #[arg(long)]
    pub step: Option<f64>,
    /// Stage schedule JSON for the lbo solver
    #[arg(long)]
    pub schedule: Option<PathBuf>,
    /// Stages of the canonical schedule used by lbo without --schedule
    #[arg(long, default_value_t = 10)]
    pub stages: usize,
    #[arg(long)]
    pub trace: Option<PathBuf>,
    /// Write the estimate as a matrix text file
    #[arg(long)]
    pub estimate: Option<PathBuf>,
    /// Save the generated instance directory
    #[arg(long)]
    pub save_instance: Option<PathBuf>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum LossArg {
    /// Sum of gaps over all stages
    All,
    /// Gap after the last stage only
    Last,
}

#[derive(Args, Debug)]
pub struct TrainArgs {
    #[command(flatten)]
    pub instance: InstanceArgs,
    #[arg(long, default_value_t = 10)]
    pub stages: usize,
    #[arg(long, default_value_t = 50)]
    pub epochs: usize,
    #[arg(long, default_value_t = 0.5)]
    pub lr: f64,
    /// Number of training instances
    #[arg(long, default_value_t = 8)]
    pub batch: usize,
    #[arg(long, value_enum, default_value = "all")]
    pub loss: LossArg,
    /// Decay band constant c0
    #[arg(long)]
    pub decay: Option<f64>,
    #[arg(long)]
    pub lambda: Option<f64>,
    #[arg(long)]
    pub rho: Option<f64>,
    #[arg(long)]
    pub phi1: Option<f64>,
    #[arg(long, default_value = "schedule.json")]
    pub out: PathBuf,
}

#[derive(Args, Debug)]
pub struct BenchArgs {
    #[arg(long)]
    pub plan: PathBuf,
    #[arg(long)]
    pub output: Option<PathBuf>,
    /// Worker threads; defaults to all cores
    #[arg(long)]
    pub jobs: Option<usize>,
    /// Write eigenvalue, error-matrix and trace CSVs per run
    #[arg(long)]
    pub emit_figures: bool,
    #[arg(long)]
    pub n: Option<usize>,
    #[arg(long, value_delimiter = ',')]
    pub seeds: Option<Vec<u64>>,
    #[arg(long, value_delimiter = ',')]
    pub solvers: Option<Vec<SolverName>>,
}

#[derive(Args, Debug)]
pub struct GenerateArgs {
    #[arg(long)]
    pub plan: PathBuf,
    #[arg(long)]
    pub output: Option<PathBuf>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum SuiteArg {
    Lyapunov,
    Contraction,
    Monotonicity,
    Reduction,
    Superiority,
    Concentration,
    All,
}

#[derive(Args, Debug)]
pub struct CheckArgs {
    #[arg(long, value_enum)]
    pub suite: Vec<SuiteArg>,
    /// Same as --suite all
    #[arg(long)]
    pub all: bool,
    #[arg(long)]
    pub seed: Option<u64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum ReportFormat {
    Table,
    Csv,
}

#[derive(Args, Debug)]
pub struct ReportArgs {
    #[arg(default_value = "results.csv")]
    pub results: PathBuf,
    #[arg(long, value_enum, default_value = "table")]
    pub format: ReportFormat,
    #[arg(long)]
    pub out: Option<PathBuf>,
}

/// Parses `args` (program name first), runs the command and returns the
/// process exit code. Messages go to standard error.
pub fn cli_main<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return code;
        }
    };
    match run(cli.command) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {e}");
            e.exit_code()
        }
    }
}

pub fn run(cmd: Command) -> CliResult<()> {
    match cmd {
        Command::Generate(a) => generate(a),
        Command::Solve(a) => solve(a),
        Command::Train(a) => train(a),
        Command::Bench(a) => bench(a),
        Command::Check(a) => check(a),
        Command::Report(a) => report_cmd(a),
    }
}

fn generate(a: GenerateArgs) -> CliResult<()> {
    let mut plan = ExperimentPlan::load(&a.plan)?;
    if a.output.is_some() {
        plan.output = a.output;
    }
    let base = base_seed()?;
    let dir = plan.output_dir().join("instances");
    for fam in plan.families() {
        for &seed in &plan.seeds {
            let (ts, ss) = instance_seeds(base, seed);
            let inst = Instance::generate(&fam.structure, fam.p, plan.n, ts, ss)?;
            let target = dir.join(format!("{}_s{seed}", fam.tag()));
            inst.save(&target)?;
            eprintln!("wrote {}", target.display());
        }
    }
    Ok(())
}

#[derive(Serialize)]
struct SolveOutput<'a> {
    solver: &'a str,
    status: &'a str,
    #[serde(flatten)]
    report: matest::metrics::EvalReport,
}

fn solve(a: SolveArgs) -> CliResult<()> {
    let inst = a.instance.load_or_generate()?;
    if let Some(dir) = &a.save_instance {
        inst.save(dir)?;
    }
    let ov = SolverOverrides {
        lambda: a.lambda,
        rho: a.rho,
        phi1: a.phi1,
        phi2: a.phi2,
        max_iter: a.max_iter,
        tol_gap: a.tol_gap,
        tol_primal: a.tol_primal,
        tol_dual: a.tol_dual,
        step: a.step,
    };
    let schedule = a.schedule.as_deref().map(StageParams::load).transpose()?;
    let lbo = LboPlan { stages: a.stages, ..LboPlan::default() };
    let pb = problem_for(&inst, &ov)?;
    let (est, trace) = run_solver(a.solver, &pb, &ov, schedule.as_ref(), &lbo)?;
    if let Some(path) = &a.trace {
        trace.write_csv(path)?;
    }
    if let Some(path) = &a.estimate {
        matest::symcore::save(&est, path)?;
    }
    let report = evaluate(&est, &inst, &trace)?;
    let out = SolveOutput { solver: a.solver.as_str(), status: trace.status.as_str(), report };
    println!("{}", serde_json::to_string_pretty(&out)?);
    Ok(())
}

fn train(a: TrainArgs) -> CliResult<()> {
    let spec = a.instance.checked_spec()?;
    let fam = plan::Family { structure: spec, p: a.instance.p };
    let ov = SolverOverrides { lambda: a.lambda, rho: a.rho, phi1: a.phi1, ..Default::default() };
    let lbo = LboPlan { stages: a.stages, epochs: a.epochs, lr: a.lr, train_instances: a.batch, tail: true };
    if a.batch == 0 {
        return Err(CliError::Usage("--batch must be positive".into()));
    }
    let batch = training_batch(&fam, a.instance.n, a.batch, a.instance.seed()?, &ov)?;
    let mut settings = train_settings(&lbo, &ov);
    settings.schedule_decay = a.decay;
    if a.loss == LossArg::Last {
        settings.loss_weights = (0..a.stages).map(|k| if k + 1 == a.stages { 1.0 } else { 0.0 }).collect();
    }
    settings.validate().map_err(|e| CliError::Usage(e.to_string()))?;
    let outcome = train_schedule(&TrainConfig { instance_batch: batch, settings, init: None })?;
    outcome.params.save(&a.out)?;
    eprintln!(
        "trained {} stages on {} instances: loss {:.4e} -> {:.4e}, wrote {}",
        a.stages,
        a.batch,
        outcome.initial_loss,
        outcome.best_loss,
        a.out.display()
    );
    Ok(())
}

fn bench(a: BenchArgs) -> CliResult<()> {
    let mut plan = ExperimentPlan::load(&a.plan)?;
    if a.output.is_some() {
        plan.output = a.output;
    }
    if let Some(n) = a.n {
        plan.n = n;
    }
    if let Some(seeds) = a.seeds {
        plan.seeds = seeds;
    }
    if let Some(solvers) = a.solvers {
        plan.solvers = solvers;
    }
    if a.jobs == Some(0) {
        return Err(CliError::Usage("--jobs must be positive".into()));
    }
    let opts = BenchOptions { jobs: a.jobs, emit_figures: a.emit_figures, base_seed: base_seed()? };
    let path = run_plan(&plan, &opts)?;
    eprintln!("wrote {}", path.display());
    Ok(())
}

fn suites_of(a: &CheckArgs) -> Vec<Suite> {
    if a.all || a.suite.is_empty() || a.suite.contains(&SuiteArg::All) {
        return Suite::ALL.to_vec();
    }
    a.suite
        .iter()
        .map(|s| match s {
            SuiteArg::Lyapunov => Suite::Lyapunov,
            SuiteArg::Contraction => Suite::Contraction,
            SuiteArg::Monotonicity => Suite::Monotonicity,
            SuiteArg::Reduction => Suite::Reduction,
            SuiteArg::Superiority => Suite::Superiority,
            SuiteArg::Concentration => Suite::Concentration,
            SuiteArg::All => unreachable!("handled above"),
        })
        .collect()
}

fn check(a: CheckArgs) -> CliResult<()> {
    let seed = a.seed.map_or_else(base_seed, Ok)?;
    let mut failed = 0;
    for suite in suites_of(&a) {
        let result = run_suite(suite, seed)?;
        println!("{result}");
        failed += usize::from(!result.passed);
    }
    if failed > 0 {
        return Err(CliError::CheckFailed(failed));
    }
    Ok(())
}

fn report_cmd(a: ReportArgs) -> CliResult<()> {
    let rows = runner::read_results(&a.results)?;
    let lines = report::aggregate(&rows);
    let text = match a.format {
        ReportFormat::Table => report::render_table(&lines),
        ReportFormat::Csv => report::render_csv(&lines),
    };
    match &a.out {
        Some(path) => write_text(path, &text)?,
        None => print!("{text}"),
    }
    Ok(())
}

fn write_text(path: &Path, text: &str) -> CliResult<()> {
    Ok(std::fs::write(path, text)?)
}
