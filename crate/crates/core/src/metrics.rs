//! Estimation error, nuclear norm and support recovery of an estimate.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::generators::Instance;
use crate::solvers::RunTrace;
use crate::symcore::{nuclear_norm, SymMat};

/// Entries at or below this magnitude count as zero in an estimate.
pub const SUPPORT_THRESHOLD: f64 = 1e-6;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    /// `||est - truth||_F`
    pub frob_err: f64,
    pub nuclear: f64,
    pub gap_final: f64,
    pub seconds: f64,
    pub support_precision: f64,
    pub support_recall: f64,
    pub iters: usize,
}

/// Off-diagonal support precision and recall of `est` against `truth`.
/// Empty predicted (true) supports give precision (recall) 1.
pub fn support_scores(est: &SymMat, truth: &SymMat, threshold: f64) -> (f64, f64) {
    let p = est.dim();
    let (mut tp, mut predicted, mut actual) = (0usize, 0usize, 0usize);
    for i in 0..p {
        for j in 0..p {
            if i == j {
                continue;
            }
            let hit = est.get(i, j).abs() > threshold;
            let real = truth.get(i, j) != 0.0;
            predicted += hit as usize;
            actual += real as usize;
            tp += (hit && real) as usize;
        }
    }
    let ratio = |num: usize, den: usize| if den == 0 { 1.0 } else { num as f64 / den as f64 };
    (ratio(tp, predicted), ratio(tp, actual))
}

pub fn evaluate_against(est: &SymMat, truth: &SymMat, trace: &RunTrace, threshold: f64) -> Result<EvalReport> {
    if est.dim() != truth.dim() {
        return Err(Error::DimMismatch { left: est.dim(), right: truth.dim() });
    }
    let (support_precision, support_recall) = support_scores(est, truth, threshold);
    Ok(EvalReport {
        frob_err: est.dist(truth),
        nuclear: nuclear_norm(est)?,
        gap_final: trace.final_gap(),
        seconds: trace.seconds(),
        support_precision,
        support_recall,
        iters: trace.iters,
    })
}

pub fn evaluate(est: &SymMat, inst: &Instance, trace: &RunTrace) -> Result<EvalReport> {
    evaluate_against(est, &inst.truth, trace, SUPPORT_THRESHOLD)
}

/// Number of nonzero off-diagonal entries (ordered pairs) of a truth matrix.
pub fn support_size(truth: &SymMat) -> usize {
    let p = truth.dim();
    (0..p).flat_map(|i| (0..p).map(move |j| (i, j))).filter(|&(i, j)| i != j && truth.get(i, j) != 0.0).count()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::generators::{make_truth, StructureSpec};
    use crate::solvers::Status;

    fn empty_trace() -> RunTrace {
        RunTrace { rows: Vec::new(), status: Status::Converged, iters: 0 }
    }

    #[test]
    fn perfect_estimate() {
        let t = make_truth(&StructureSpec::toeplitz(0.5), 6, 0).unwrap();
        let r = evaluate_against(&t, &t, &empty_trace(), SUPPORT_THRESHOLD).unwrap();
        assert_eq!(r.frob_err, 0.0);
        assert_eq!((r.support_precision, r.support_recall), (1.0, 1.0));
        assert!((r.nuclear - t.trace()).abs() < 1e-8);
    }

    #[test]
    fn diagonal_estimate_has_zero_recall() {
        let t = make_truth(&StructureSpec::toeplitz(0.5), 6, 0).unwrap();
        let est = SymMat::identity(6);
        let r = evaluate_against(&est, &t, &empty_trace(), SUPPORT_THRESHOLD).unwrap();
        assert_eq!(r.support_recall, 0.0);
    }

    #[test]
    fn frob_error_is_one_lipschitz() {
        let t = make_truth(&StructureSpec::banded(2), 6, 0).unwrap();
        let a = SymMat::identity(6);
        let b = SymMat::scaled_identity(6, 1.3);
        let ra = evaluate_against(&a, &t, &empty_trace(), SUPPORT_THRESHOLD).unwrap();
        let rb = evaluate_against(&b, &t, &empty_trace(), SUPPORT_THRESHOLD).unwrap();
        assert!((ra.frob_err - rb.frob_err).abs() <= a.dist(&b) + 1e-15);
    }

    #[test]
    fn dimension_mismatch() {
        let t = SymMat::identity(3);
        assert!(evaluate_against(&SymMat::identity(2), &t, &empty_trace(), 1e-6).is_err());
    }

    #[test]
    fn support_counts() {
        let t = make_truth(&StructureSpec::banded(2), 6, 0).unwrap();
        // Rows have 2, 3, 4, 4, 3, 2 neighbors within distance 2.
        assert_eq!(support_size(&t), 18);
    }
}
