use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use matest::baselines::{fista_covariance, pfbs_covariance, proxgrad_precision, spg_precision, tosa_covariance, BaselineConfig};
use matest::generators::{derive_seed, Instance};
use matest::lbo::{lbo_solve, train_cached, StageParams, TrainConfig, TrainSettings};
use matest::metrics::{evaluate, EvalReport};
use matest::problem::default_lambda;
use matest::solvers::{admm_covariance, admm_precision, default_init, ladmm_unified, RunTrace, SolverConfig};
use matest::symcore::sym_eig;
use matest::{ProblemKind, SplitProblem, SymMat};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{CliError, CliResult};
use crate::plan::{instance_seeds, ExperimentPlan, Family, LboPlan, SolverName, SolverOverrides};

pub const RESULTS_VERSION_LINE: &str = "# matest-results v1";
pub const RESULTS_FILE: &str = "results.csv";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ResultRow {
    pub structure: String,
    pub param: String,
    pub p: usize,
    pub n: usize,
    pub seed: u64,
    pub solver: String,
    pub seconds: f64,
    pub iters: usize,
    pub frob_err: f64,
    pub nuclear: f64,
    pub gap_final: f64,
    pub status: String,
}

pub fn problem_for(inst: &Instance, ov: &SolverOverrides) -> CliResult<SplitProblem> {
    let lambda = ov.lambda.unwrap_or_else(|| default_lambda(inst.dim(), inst.n));
    Ok(SplitProblem::new(inst.kind, inst.sample_cov.clone(), lambda, matest::problem::DEFAULT_EPS, inst.n)?)
}

/// Residual tolerance of command-line runs. Tighter than the library
/// default so that the gap test decides convergence.
pub const RESIDUAL_TOL: f64 = 1e-8;

pub fn solver_config(ov: &SolverOverrides) -> SolverConfig {
    let d = SolverConfig::default();
    SolverConfig {
        rho: ov.rho.unwrap_or(d.rho),
        phi1: ov.phi1.unwrap_or(d.phi1),
        phi2: ov.phi2.unwrap_or(d.phi2),
        max_iter: ov.max_iter.unwrap_or(d.max_iter),
        tol_gap: ov.tol_gap.unwrap_or(d.tol_gap),
        tol_primal: ov.tol_primal.unwrap_or(RESIDUAL_TOL),
        tol_dual: ov.tol_dual.unwrap_or(RESIDUAL_TOL),
        ..d
    }
}

pub fn baseline_config(ov: &SolverOverrides) -> BaselineConfig {
    let d = BaselineConfig::default();
    BaselineConfig {
        step: ov.step.unwrap_or(d.step),
        max_iter: ov.max_iter.unwrap_or(d.max_iter),
        tol_gap: ov.tol_gap.unwrap_or(d.tol_gap),
        ..d
    }
}

/// Runs one solver. The ADMM family returns the sparse iterate `Y`.
/// `lbo` without a schedule uses the canonical weighted schedule.
pub fn run_solver(
    solver: SolverName,
    pb: &SplitProblem,
    ov: &SolverOverrides,
    schedule: Option<&StageParams>,
    lbo: &LboPlan,
) -> CliResult<(SymMat, RunTrace)> {
    if !solver.supports(pb.kind) {
        return Err(CliError::Usage(format!("solver {solver} does not handle {} problems", pb.kind.as_str())));
    }
    let cfg = solver_config(ov);
    let bcfg = baseline_config(ov);
    let out = match solver {
        SolverName::Admm => {
            let run = if pb.kind == ProblemKind::Covariance { admm_covariance } else { admm_precision };
            let (st, tr) = run(pb, &cfg, default_init(pb))?;
            (st.y, tr)
        }
        SolverName::Ladmm => {
            let (st, tr) = ladmm_unified(pb, &cfg, default_init(pb))?;
            (st.y, tr)
        }
        SolverName::Lbo => {
            let canonical;
            let sp = match schedule {
                Some(sp) => sp,
                None => {
                    canonical = StageParams::canonical_weighted(lbo.stages, cfg.rho, cfg.phi1);
                    &canonical
                }
            };
            let tail = SolverConfig { max_iter: if lbo.tail { cfg.max_iter } else { 0 }, ..cfg };
            let (st, tr) = lbo_solve(pb, sp, default_init(pb), &tail)?;
            (st.y, tr)
        }
        SolverName::Tosa => tosa_covariance(pb, &bcfg, &pb.s)?,
        SolverName::Pfbs => pfbs_covariance(pb, &bcfg, &pb.s)?,
        SolverName::Fista => fista_covariance(pb, &bcfg, &pb.s)?,
        SolverName::Proxgrad => proxgrad_precision(pb, &bcfg, &default_init(pb).x)?,
        SolverName::Spg => spg_precision(pb, &bcfg, &default_init(pb).x)?,
    };
    Ok(out)
}

/// Training batch for a family: fresh sample draws from one truth.
pub fn training_batch(fam: &Family, n: usize, count: usize, base: u64, ov: &SolverOverrides) -> CliResult<Vec<SplitProblem>> {
    let truth_seed = derive_seed(base, u64::MAX);
    (0..count)
        .map(|i| {
            let inst = Instance::generate(&fam.structure, fam.p, n, truth_seed, derive_seed(truth_seed, 100 + i as u64))?;
            problem_for(&inst, ov)
        })
        .collect()
}

pub fn train_settings(lbo: &LboPlan, ov: &SolverOverrides) -> TrainSettings {
    let cfg = solver_config(ov);
    TrainSettings {
        k_stages: lbo.stages,
        epochs: lbo.epochs,
        lr: lbo.lr,
        init_rho: cfg.rho,
        init_phi1: cfg.phi1,
        ..TrainSettings::default()
    }
}

fn family_schedule(plan: &ExperimentPlan, fam: &Family, base: u64, cache: &Path) -> CliResult<StageParams> {
    let ov = plan.overrides_for(SolverName::Lbo);
    let batch = training_batch(fam, plan.n, plan.lbo.train_instances, base, &ov)?;
    let cfg = TrainConfig { instance_batch: batch, settings: train_settings(&plan.lbo, &ov), init: None };
    Ok(train_cached(&cfg, &fam.tag(), cache)?)
}

fn status_of(trace: &RunTrace) -> String {
    trace.status.as_str().to_string()
}

fn row(fam: &Family, plan: &ExperimentPlan, seed: u64, solver: SolverName, report: Option<&EvalReport>, status: String) -> ResultRow {
    let nan = f64::NAN;
    ResultRow {
        structure: fam.structure.name().to_string(),
        param: fam.structure.param_label(),
        p: fam.p,
        n: plan.n,
        seed,
        solver: solver.as_str().to_string(),
        seconds: report.map_or(nan, |r| r.seconds),
        iters: report.map_or(0, |r| r.iters),
        frob_err: report.map_or(nan, |r| r.frob_err),
        nuclear: report.map_or(nan, |r| r.nuclear),
        gap_final: report.map_or(nan, |r| r.gap_final),
        status,
    }
}

#[derive(Debug, Clone, Default)]
pub struct BenchOptions {
    pub jobs: Option<usize>,
    pub emit_figures: bool,
    pub base_seed: u64,
}

fn emit_figures(dir: &Path, stem: &str, est: &SymMat, truth: &SymMat, trace: &RunTrace) -> CliResult<()> {
    std::fs::create_dir_all(dir)?;
    let mut eig = sym_eig(est)?.d.to_vec();
    eig.sort_by(|a, b| b.total_cmp(a));
    let mut w = BufWriter::new(File::create(dir.join(format!("{stem}_eigen.csv")))?);
    writeln!(w, "index,eigenvalue")?;
    for (i, v) in eig.iter().take(1000).enumerate() {
        writeln!(w, "{},{v:e}", i + 1)?;
    }
    let mut w = BufWriter::new(File::create(dir.join(format!("{stem}_error.csv")))?);
    for row in (est - truth).to_rows() {
        let line: Vec<String> = row.iter().map(|v| format!("{v:e}")).collect();
        writeln!(w, "{}", line.join(","))?;
    }
    trace.write_csv(&dir.join(format!("{stem}_trace.csv")))?;
    Ok(())
}

struct Cell {
    fam: usize,
    seed: u64,
    solver: SolverName,
}

/// Runs the whole grid and writes `results.csv` into the plan's output
/// directory. Cell failures become rows with an `error` status.
pub fn run_plan(plan: &ExperimentPlan, opts: &BenchOptions) -> CliResult<PathBuf> {
    plan.validate()?;
    let out = plan.output_dir();
    std::fs::create_dir_all(&out)?;
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(opts.jobs.unwrap_or(0))
        .build()
        .map_err(|e| CliError::Usage(format!("cannot start worker pool: {e}")))?;
    let families = plan.families();
    let base = opts.base_seed;

    let schedules: Vec<Option<Result<StageParams, String>>> = pool.install(|| {
        families
            .par_iter()
            .map(|fam| {
                plan.solvers
                    .contains(&SolverName::Lbo)
                    .then(|| family_schedule(plan, fam, base, &out.join("schedules")).map_err(|e| e.to_string()))
            })
            .collect()
    });

    let instances: Vec<Vec<Result<Instance, String>>> = pool.install(|| {
        families
            .par_iter()
            .map(|fam| {
                plan.seeds
                    .iter()
                    .map(|&seed| {
                        let (ts, ss) = instance_seeds(base, seed);
                        Instance::generate(&fam.structure, fam.p, plan.n, ts, ss).map_err(|e| e.to_string())
                    })
                    .collect()
            })
            .collect()
    });

    let mut cells = Vec::new();
    for (fi, fam) in families.iter().enumerate() {
        for &seed in &plan.seeds {
            for &solver in &plan.solvers {
                if solver.supports(fam.structure.kind()) {
                    cells.push(Cell { fam: fi, seed, solver });
                }
            }
        }
    }

    let figures = out.join("figures");
    let rows: Vec<ResultRow> = pool.install(|| {
        cells
            .par_iter()
            .map(|cell| {
                let fam = &families[cell.fam];
                let si = plan.seeds.iter().position(|s| *s == cell.seed).expect("seed from plan");
                let inst = match &instances[cell.fam][si] {
                    Ok(inst) => inst,
                    Err(e) => {
                        eprintln!("{} seed {}: instance generation failed: {e}", fam.tag(), cell.seed);
                        return row(fam, plan, cell.seed, cell.solver, None, "error".into());
                    }
                };
                let schedule = match (&schedules[cell.fam], cell.solver) {
                    (Some(Ok(sp)), SolverName::Lbo) => Some(sp),
                    (Some(Err(e)), SolverName::Lbo) => {
                        eprintln!("{}: schedule training failed: {e}", fam.tag());
                        return row(fam, plan, cell.seed, cell.solver, None, "error".into());
                    }
                    _ => None,
                };
                let ov = plan.overrides_for(cell.solver);
                let run = problem_for(inst, &ov).and_then(|pb| run_solver(cell.solver, &pb, &ov, schedule, &plan.lbo));
                let result = run.and_then(|(est, trace)| {
                    let report = evaluate(&est, inst, &trace)?;
                    if opts.emit_figures {
                        let stem = format!("{}_s{}_{}", fam.tag(), cell.seed, cell.solver);
                        emit_figures(&figures, &stem, &est, &inst.truth, &trace)?;
                    }
                    Ok((report, status_of(&trace)))
                });
                match result {
                    Ok((report, status)) => row(fam, plan, cell.seed, cell.solver, Some(&report), status),
                    Err(e) => {
                        eprintln!("{} seed {} {}: {e}", fam.tag(), cell.seed, cell.solver);
                        row(fam, plan, cell.seed, cell.solver, None, "error".into())
                    }
                }
            })
            .collect()
    });

    let path = out.join(crate::runner::RESULTS_FILE);
    write_results(&path, &rows)?;
    Ok(path)
}

pub fn write_results(path: &Path, rows: &[ResultRow]) -> CliResult<()> {
    let mut file = BufWriter::new(File::create(path)?);
    writeln!(file, "{RESULTS_VERSION_LINE}")?;
    let mut w = csv::Writer::from_writer(file);
    for r in rows {
        w.serialize(r)?;
        w.flush()?;
    }
    Ok(())
}

pub fn read_results(path: &Path) -> CliResult<Vec<ResultRow>> {
    let mut rdr = csv::ReaderBuilder::new().comment(Some(b'#')).from_path(path)?;
    Ok(rdr.deserialize().collect::<Result<Vec<ResultRow>, _>>()?)
}
