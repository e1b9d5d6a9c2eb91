use std::fmt::Write as _;

use crate::runner::ResultRow;

/// Means over seeds of one `(structure, param, p, solver)` group.
#[derive(Debug, Clone, PartialEq)]
pub struct ReportLine {
    pub structure: String,
    pub param: String,
    pub p: usize,
    pub solver: String,
    pub runs: usize,
    pub converged: usize,
    pub seconds: f64,
    pub iters: f64,
    pub frob_err: f64,
    pub nuclear: f64,
    pub gap_final: f64,
}

fn mean(vals: impl Iterator<Item = f64>) -> f64 {
    let (sum, count) = vals.filter(|v| v.is_finite()).fold((0.0, 0usize), |(s, c), v| (s + v, c + 1));
    if count == 0 {
        f64::NAN
    } else {
        sum / count as f64
    }
}

/// Groups in first-appearance order.
pub fn aggregate(rows: &[ResultRow]) -> Vec<ReportLine> {
    let mut keys: Vec<(String, String, usize, String)> = Vec::new();
    for r in rows {
        let k = (r.structure.clone(), r.param.clone(), r.p, r.solver.clone());
        if !keys.contains(&k) {
            keys.push(k);
        }
    }
    keys.into_iter()
        .map(|(structure, param, p, solver)| {
            let group: Vec<&ResultRow> =
                rows.iter().filter(|r| r.structure == structure && r.param == param && r.p == p && r.solver == solver).collect();
            ReportLine {
                runs: group.len(),
                converged: group.iter().filter(|r| r.status == "converged").count(),
                seconds: mean(group.iter().map(|r| r.seconds)),
                iters: mean(group.iter().map(|r| r.iters as f64)),
                frob_err: mean(group.iter().map(|r| r.frob_err)),
                nuclear: mean(group.iter().map(|r| r.nuclear)),
                gap_final: mean(group.iter().map(|r| r.gap_final)),
                structure,
                param,
                p,
                solver,
            }
        })
        .collect()
}

/// Fixed-width table, one block per structure parameter, solvers as rows.
pub fn render_table(lines: &[ReportLine]) -> String {
    let mut out = String::new();
    let mut last: Option<(&str, &str)> = None;
    for l in lines {
        if last != Some((&l.structure, &l.param)) {
            if last.is_some() {
                out.push('\n');
            }
            let _ = writeln!(out, "{} {}", l.structure, l.param);
            let _ = writeln!(
                out,
                "{:>6}  {:<9} {:>6} {:>10} {:>8} {:>12} {:>12} {:>11}",
                "p", "solver", "ok", "time(s)", "iters", "frobenius", "nuclear", "gap"
            );
            last = Some((&l.structure, &l.param));
        }
        let _ = writeln!(
            out,
            "{:>6}  {:<9} {:>6} {:>10.4} {:>8.1} {:>12.4e} {:>12.4e} {:>11.3e}",
            l.p,
            l.solver,
            format!("{}/{}", l.converged, l.runs),
            l.seconds,
            l.iters,
            l.frob_err,
            l.nuclear,
            l.gap_final
        );
    }
    out
}

pub fn render_csv(lines: &[ReportLine]) -> String {
    let mut out = String::from("structure,param,p,solver,runs,converged,seconds,iters,frob_err,nuclear,gap_final\n");
    for l in lines {
        let _ = writeln!(
            out,
            "{},{},{},{},{},{},{:e},{},{:e},{:e},{:e}",
            l.structure, l.param, l.p, l.solver, l.runs, l.converged, l.seconds, l.iters, l.frob_err, l.nuclear, l.gap_final
        );
    }
    out
}
