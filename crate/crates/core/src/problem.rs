//! The split problem `min F(X) + G(Y)  s.t.  X = Y` for both estimation
//! tasks, with primal and dual objectives and the duality gap.
//!
//! * Covariance: `F(X) = 1/2 ||X - S||_F^2 + indicator(X >= eps I)`.
//! * Precision: `F(X) = tr(S X) - log det X + indicator(X >= eps I)`.
//! * Both: `G(Y) = lambda ||Y||_{1,off}`.
//!
//! The multiplier `V` is the unscaled one of the unified linearized
//! iteration; at a KKT point `-V in dF(X)` and `V in dG(Y)`.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::prox::{ProxContext, ProxKind};
use crate::symcore::{chol_logdet, spd_inverse_logdet, sym_eig, SymMat};

/// Default eigenvalue floor.
pub const DEFAULT_EPS: f64 = 1e-4;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ProblemKind {
    Covariance,
    Precision,
}

impl ProblemKind {
    pub fn as_str(self) -> &'static str {
        match self {
            ProblemKind::Covariance => "covariance",
            ProblemKind::Precision => "precision",
        }
    }
}

impl std::str::FromStr for ProblemKind {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "covariance" | "cov" => Ok(ProblemKind::Covariance),
            "precision" | "prec" | "glasso" => Ok(ProblemKind::Precision),
            other => Err(Error::Parse(format!("unknown problem kind {other:?}"))),
        }
    }
}

/// `2 sqrt(log p / n)`.
pub fn default_lambda(p: usize, n: usize) -> f64 {
    2.0 * ((p as f64).ln().max(0.0) / n as f64).sqrt()
}

#[derive(Debug, Clone)]
pub struct SplitProblem {
    pub kind: ProblemKind,
    pub s: SymMat,
    pub lambda: f64,
    pub eps: f64,
    pub n: usize,
}

/// `(X, Y, V)`.
#[derive(Debug, Clone, PartialEq)]
pub struct IterateState {
    pub x: SymMat,
    pub y: SymMat,
    pub v: SymMat,
}

impl IterateState {
    pub fn new(x: SymMat, y: SymMat, v: SymMat) -> Result<Self> {
        if x.dim() != y.dim() || x.dim() != v.dim() {
            return Err(Error::DimMismatch { left: x.dim(), right: y.dim().max(v.dim()) });
        }
        Ok(Self { x, y, v })
    }

    pub fn dim(&self) -> usize {
        self.x.dim()
    }

    /// Frobenius distance over the stacked triple.
    pub fn dist(&self, other: &IterateState) -> f64 {
        (self.x.dist(&other.x).powi(2) + self.y.dist(&other.y).powi(2) + self.v.dist(&other.v).powi(2)).sqrt()
    }
}

/// KKT residuals of a triple.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct KktResidual {
    /// `||X - Y||_F`
    pub primal: f64,
    /// Distance of `-V` to `dF(X)`, including the normal cone of the floor.
    pub dual: f64,
    /// Distance of `V` to `dG(Y)`.
    pub subgrad: f64,
}

impl KktResidual {
    pub fn max(&self) -> f64 {
        self.primal.max(self.dual).max(self.subgrad)
    }
}

/// Persisted problem description; the matrix lives in its own file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProblemFile {
    pub kind: ProblemKind,
    pub p: usize,
    pub n: usize,
    pub lambda: f64,
    pub eps: f64,
    /// Path of the sample covariance matrix, relative to the JSON document.
    pub s: String,
}

impl SplitProblem {
    pub fn new(kind: ProblemKind, s: SymMat, lambda: f64, eps: f64, n: usize) -> Result<Self> {
        if !(lambda >= 0.0) || !lambda.is_finite() {
            return Err(Error::InvalidParameter(format!("lambda must be nonnegative, got {lambda}")));
        }
        if !(eps > 0.0) || !eps.is_finite() {
            return Err(Error::InvalidParameter(format!("eps must be positive, got {eps}")));
        }
        if n == 0 {
            return Err(Error::InvalidParameter("sample count must be positive".into()));
        }
        Ok(Self { kind, s, lambda, eps, n })
    }

    /// Problem with `lambda = 2 sqrt(log p / n)` and `eps = 1e-4`.
    pub fn with_defaults(kind: ProblemKind, s: SymMat, n: usize) -> Result<Self> {
        let lambda = default_lambda(s.dim(), n);
        Self::new(kind, s, lambda, DEFAULT_EPS, n)
    }

    pub fn dim(&self) -> usize {
        self.s.dim()
    }

    pub fn prox_context(&self) -> ProxContext<'_> {
        ProxContext { s: &self.s, lambda: self.lambda, eps: self.eps }
    }

    /// The prox kind of `F`.
    pub fn f_kind(&self) -> ProxKind {
        match self.kind {
            ProblemKind::Covariance => ProxKind::CovF,
            ProblemKind::Precision => ProxKind::LogDetG,
        }
    }

    pub fn g_value(&self, y: &SymMat) -> f64 {
        self.lambda * y.offdiag_l1()
    }

    /// Gradient of the smooth part of `F`: `X - S` or `S - X^{-1}`.
    pub fn smooth_gradient(&self, x: &SymMat) -> Result<SymMat> {
        match self.kind {
            ProblemKind::Covariance => Ok(x - &self.s),
            ProblemKind::Precision => {
                let (inv, _) = spd_inverse_logdet(x)?;
                Ok(&self.s - &inv)
            }
        }
    }

    /// `f1` or `f2` at `m` (penalized objective without the floor indicator).
    pub fn primal_objective(&self, m: &SymMat) -> Result<f64> {
        self.check_dim(m)?;
        match self.kind {
            ProblemKind::Covariance => Ok(0.5 * m.dist(&self.s).powi(2) + self.g_value(m)),
            ProblemKind::Precision => {
                let logdet = match chol_logdet(m) {
                    Some(v) => v,
                    None => return Err(Error::NotPositiveDefinite(sym_eig(m)?.min())),
                };
                Ok(self.s.inner(m) - logdet + self.g_value(m))
            }
        }
    }

    /// Dual objective.
    ///
    /// Covariance: `d1(L) = -<L, S> - 1/2 ||L||_F^2`, a lower bound on the
    /// optimum whenever `L` is dual feasible (`L_ii = 0`, `|L_ij| <= lambda`).
    /// Precision: `d2(X) = log det(S - X) + p`, feasible when `S - X` is
    /// positive definite, `X_ii = 0` and `|X_ij| <= lambda`.
    pub fn dual_objective(&self, dualvar: &SymMat) -> Result<f64> {
        self.check_dim(dualvar)?;
        match self.kind {
            ProblemKind::Covariance => Ok(-dualvar.inner(&self.s) - 0.5 * dualvar.frob_norm_sq()),
            ProblemKind::Precision => {
                let shifted = &self.s - dualvar;
                match chol_logdet(&shifted) {
                    Some(v) => Ok(v + self.dim() as f64),
                    None => Err(Error::InfeasibleDual(format!("S - Xi has smallest eigenvalue {:e}", sym_eig(&shifted)?.min()))),
                }
            }
        }
    }

    /// Whether `dualvar` satisfies the box and diagonal constraints of the
    /// dual, up to `tol`.
    pub fn is_dual_feasible(&self, dualvar: &SymMat, tol: f64) -> bool {
        let p = self.dim();
        (0..p).all(|i| {
            (0..p).all(|j| {
                let v = dualvar.get(i, j);
                if i == j {
                    v.abs() <= tol
                } else {
                    v.abs() <= self.lambda + tol
                }
            })
        })
    }

    /// Dual-feasible point built from the current iterate.
    ///
    /// Covariance: `L = -V` with the diagonal zeroed and off-diagonals clipped
    /// to `[-lambda, lambda]`; clipping is inactive at a KKT point.
    /// Precision: `X = S - X_iter^{-1}`, same clipping, then halved toward
    /// zero until `S - X` is positive definite.
    pub fn dual_feasible_from_iterate(&self, st: &IterateState) -> Result<SymMat> {
        let lambda = self.lambda;
        let clip = |i: usize, j: usize, v: f64| if i == j { 0.0 } else { v.clamp(-lambda, lambda) };
        match self.kind {
            ProblemKind::Covariance => Ok((-&st.v).map_indexed(clip)),
            ProblemKind::Precision => {
                let (inv, _) = spd_inverse_logdet(&st.x)?;
                let mut xi = (&self.s - &inv).map_indexed(clip);
                const MAX_HALVINGS: usize = 60;
                for _ in 0..=MAX_HALVINGS {
                    if chol_logdet(&(&self.s - &xi)).is_some() {
                        return Ok(xi);
                    }
                    xi = xi.scale(0.5);
                }
                Err(Error::DualConstructionFailed(MAX_HALVINGS))
            }
        }
    }

    pub fn duality_gap(&self, m: &SymMat, dualvar: &SymMat) -> Result<f64> {
        Ok(self.primal_objective(m)? - self.dual_objective(dualvar)?)
    }

    /// `(f(X), d(dual(X, V)), gap)` for an iterate.
    pub fn gap_at(&self, st: &IterateState) -> Result<(f64, f64, f64)> {
        let f = self.primal_objective(&st.x)?;
        let dual = self.dual_feasible_from_iterate(st)?;
        let d = self.dual_objective(&dual)?;
        Ok((f, d, f - d))
    }

    /// Residuals of `X = Y`, `-V in dF(X)` and `V in dG(Y)`.
    pub fn kkt_residual(&self, st: &IterateState) -> KktResidual {
        let primal = st.x.dist(&st.y);
        let dual = self.dual_residual(&st.x, &st.v).unwrap_or(f64::INFINITY);
        let p = self.dim();
        let mut sub = 0.0;
        for i in 0..p {
            for j in 0..p {
                let v = st.v.get(i, j);
                let y = st.y.get(i, j);
                let r = if i == j {
                    v.abs()
                } else if y == 0.0 {
                    (v.abs() - self.lambda).max(0.0)
                } else {
                    (v - self.lambda * y.signum()).abs()
                };
                sub += r * r;
            }
        }
        KktResidual { primal, dual, subgrad: sub.sqrt() }
    }

    /// Distance of `R = -V - grad(X)` to the normal cone of `{X >= eps I}`
    /// at `X`, which is `{-Q_A M Q_A^T : M >= 0}` for the eigenvectors `Q_A`
    /// whose eigenvalues sit on the floor.
    fn dual_residual(&self, x: &SymMat, v: &SymMat) -> Result<f64> {
        let grad = self.smooth_gradient(x)?;
        let r = (-v).lin_comb(1.0, &grad, -1.0);
        let eig = sym_eig(x)?;
        let tol = 1e-8 + 1e-9 * eig.max().abs();
        let active: Vec<usize> = (0..eig.d.len()).filter(|&k| eig.d[k] <= self.eps + tol).collect();
        let total = r.frob_norm_sq();
        if active.is_empty() {
            return Ok(total.sqrt());
        }
        let qa = eig.q.select_columns(&active);
        let block = qa.transpose() * r.matrix() * &qa;
        let block = SymMat::symmetrized(block);
        let removable: f64 = sym_eig(&block)?.d.iter().filter(|d| **d < 0.0).map(|d| d * d).sum();
        Ok((total - removable).max(0.0).sqrt())
    }

    fn check_dim(&self, m: &SymMat) -> Result<()> {
        if m.dim() != self.dim() {
            return Err(Error::DimMismatch { left: m.dim(), right: self.dim() });
        }
        Ok(())
    }

    /// Writes `<stem>.json` and the matrix file `<stem>.S.txt` next to it.
    pub fn save(&self, json_path: &std::path::Path) -> Result<()> {
        let stem = json_path.file_stem().and_then(|s| s.to_str()).unwrap_or("problem");
        let matrix_name = format!("{stem}.S.txt");
        let dir = json_path.parent().unwrap_or_else(|| std::path::Path::new("."));
        crate::symcore::save(&self.s, &dir.join(&matrix_name))?;
        let doc = ProblemFile { kind: self.kind, p: self.dim(), n: self.n, lambda: self.lambda, eps: self.eps, s: matrix_name };
        std::fs::write(json_path, serde_json::to_string_pretty(&doc)?)?;
        Ok(())
    }

    pub fn load(json_path: &std::path::Path) -> Result<Self> {
        let doc: ProblemFile = serde_json::from_str(&std::fs::read_to_string(json_path)?)?;
        let dir = json_path.parent().unwrap_or_else(|| std::path::Path::new("."));
        let s = crate::symcore::load(&dir.join(&doc.s))?;
        if s.dim() != doc.p {
            return Err(Error::DimMismatch { left: s.dim(), right: doc.p });
        }
        Self::new(doc.kind, s, doc.lambda, doc.eps, doc.n)
    }
}
