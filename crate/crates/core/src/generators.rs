//! Ground-truth covariance and precision structures, Gaussian sampling and
//! sample covariances.

use std::fmt::Write as _;
use std::path::Path;

use nalgebra::{Cholesky, DMatrix};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::problem::ProblemKind;
use crate::symcore::{self, sym_eig, SymMat};

/// Smallest eigenvalue a loaded sparse or block truth is pushed up to.
pub const LOADING_FLOOR: f64 = 0.05;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "lowercase")]
pub enum StructureSpec {
    Toeplitz {
        varrho: f64,
    },
    Factor {
        m: usize,
        #[serde(default = "one")]
        sigma_b: f64,
        #[serde(default = "noise")]
        sigma_n: f64,
    },
    Sparse {
        q: f64,
        #[serde(default = "sparse_diag")]
        diag: (f64, f64),
        #[serde(default = "sparse_off")]
        offdiag: (f64, f64),
    },
    Block {
        block_size: usize,
        #[serde(default = "rho_w")]
        rho_w: f64,
        #[serde(default = "rho_b")]
        rho_b: f64,
        #[serde(default = "pi_b")]
        pi_b: f64,
    },
    Banded {
        width: usize,
        #[serde(default = "one")]
        diag: f64,
        #[serde(default = "band_off")]
        off: f64,
    },
    /// `side = 0` takes the side from the dimension, see [`StructureSpec::at_dim`].
    Grid {
        #[serde(default)]
        side: usize,
    },
}

fn one() -> f64 {
    1.0
}
fn noise() -> f64 {
    0.04
}
fn sparse_diag() -> (f64, f64) {
    (0.5, 2.0)
}
fn sparse_off() -> (f64, f64) {
    (0.1, 0.8)
}
fn rho_w() -> f64 {
    0.7
}
fn rho_b() -> f64 {
    0.1
}
fn pi_b() -> f64 {
    0.3
}
fn band_off() -> f64 {
    0.2
}

impl StructureSpec {
    pub fn toeplitz(varrho: f64) -> Self {
        StructureSpec::Toeplitz { varrho }
    }

    pub fn factor(m: usize) -> Self {
        StructureSpec::Factor { m, sigma_b: one(), sigma_n: noise() }
    }

    pub fn sparse(q: f64) -> Self {
        StructureSpec::Sparse { q, diag: sparse_diag(), offdiag: sparse_off() }
    }

    pub fn block(block_size: usize) -> Self {
        StructureSpec::Block { block_size, rho_w: rho_w(), rho_b: rho_b(), pi_b: pi_b() }
    }

    /// Banded precision with `|i - j| <= width`; widths 2 and 4 are the two
    /// banded families.
    pub fn banded(width: usize) -> Self {
        StructureSpec::Banded { width, diag: one(), off: band_off() }
    }

    pub fn grid(side: usize) -> Self {
        StructureSpec::Grid { side }
    }

    /// Fills in dimension-dependent fields: a grid with `side = 0` gets
    /// the nearest integer to `sqrt(p)`.
    pub fn at_dim(&self, p: usize) -> StructureSpec {
        match *self {
            StructureSpec::Grid { side: 0 } => StructureSpec::Grid { side: (p as f64).sqrt().round() as usize },
            ref other => other.clone(),
        }
    }

    /// Whether the truth is a covariance or a precision matrix.
    pub fn kind(&self) -> ProblemKind {
        match self {
            StructureSpec::Banded { .. } | StructureSpec::Grid { .. } => ProblemKind::Precision,
            _ => ProblemKind::Covariance,
        }
    }

    pub fn name(&self) -> &'static str {
        match self {
            StructureSpec::Toeplitz { .. } => "toeplitz",
            StructureSpec::Factor { .. } => "factor",
            StructureSpec::Sparse { .. } => "sparse",
            StructureSpec::Block { .. } => "block",
            StructureSpec::Banded { width: 2, .. } => "banded1",
            StructureSpec::Banded { width: 4, .. } => "banded2",
            StructureSpec::Banded { .. } => "banded",
            StructureSpec::Grid { .. } => "grid",
        }
    }

    /// The varied parameter, as printed in result tables.
    pub fn param_label(&self) -> String {
        match self {
            StructureSpec::Toeplitz { varrho } => format!("varrho={varrho}"),
            StructureSpec::Factor { m, .. } => format!("m={m}"),
            StructureSpec::Sparse { q, .. } => format!("q={q}"),
            StructureSpec::Block { block_size, .. } => format!("block={block_size}"),
            StructureSpec::Banded { width, .. } => format!("width={width}"),
            StructureSpec::Grid { side } => format!("side={side}"),
        }
    }

    pub fn validate(&self, p: usize) -> Result<()> {
        let bad = |msg: String| Err(Error::SpecViolation(msg));
        if p == 0 {
            return bad("dimension must be positive".into());
        }
        match *self {
            StructureSpec::Toeplitz { varrho } if !(varrho.abs() < 1.0) => bad(format!("|varrho| must be < 1, got {varrho}")),
            StructureSpec::Factor { m, sigma_b, sigma_n } if m == 0 || !(sigma_b > 0.0) || !(sigma_n > 0.0) => {
                bad("factor model needs m >= 1 and positive sigma_b, sigma_n".into())
            }
            StructureSpec::Sparse { q, diag, offdiag }
                if !(0.0..=1.0).contains(&q) || !(0.0 < diag.0 && diag.0 <= diag.1) || !(0.0 <= offdiag.0 && offdiag.0 <= offdiag.1) =>
            {
                bad("sparse model needs q in [0, 1] and ordered positive intervals".into())
            }
            StructureSpec::Block { block_size, pi_b, .. } if block_size == 0 || !(0.0..=1.0).contains(&pi_b) => {
                bad("block model needs block_size >= 1 and pi_b in [0, 1]".into())
            }
            StructureSpec::Banded { width, .. } if width != 2 && width != 4 => bad(format!("banded width must be 2 or 4, got {width}")),
            StructureSpec::Grid { side } if side * side != p => bad(format!("grid needs p = side^2, got p = {p}, side = {side}")),
            _ => Ok(()),
        }
    }
}

/// Adds `tau I` with `tau = 0.01, 0.02, 0.04, ...` until the smallest
/// eigenvalue reaches [`LOADING_FLOOR`].
fn load_diagonal(m: SymMat) -> Result<SymMat> {
    let lmin = symcore::min_eigenvalue(&m)?;
    if lmin >= LOADING_FLOOR {
        return Ok(m);
    }
    let mut tau = 0.01;
    while lmin + tau < LOADING_FLOOR {
        tau *= 2.0;
    }
    Ok(&m + &SymMat::scaled_identity(m.dim(), tau))
}

pub fn make_truth(spec: &StructureSpec, p: usize, seed: u64) -> Result<SymMat> {
    spec.validate(p)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    match *spec {
        StructureSpec::Toeplitz { varrho } => SymMat::from_fn(p, |i, j| varrho.powi(i.abs_diff(j) as i32)),
        StructureSpec::Factor { m, sigma_b, sigma_n } => {
            let sd = sigma_b.sqrt();
            let b = DMatrix::<f64>::from_fn(p, m, |_, _| sd * rng.sample::<f64, _>(StandardNormal));
            let bbt = &b * b.transpose();
            Ok(&SymMat::symmetrized(bbt) + &SymMat::scaled_identity(p, sigma_n))
        }
        StructureSpec::Sparse { q, diag, offdiag } => {
            let mut out = DMatrix::<f64>::zeros(p, p);
            for i in 0..p {
                out[(i, i)] = rng.random_range(diag.0..=diag.1);
                for j in (i + 1)..p {
                    if rng.random::<f64>() < q {
                        let mag = rng.random_range(offdiag.0..=offdiag.1);
                        let v = if rng.random::<bool>() { mag } else { -mag };
                        out[(i, j)] = v;
                        out[(j, i)] = v;
                    }
                }
            }
            load_diagonal(SymMat::new(out)?)
        }
        StructureSpec::Block { block_size, rho_w, rho_b, pi_b } => {
            let block_of = |i: usize| i / block_size;
            let mut out = DMatrix::<f64>::from_fn(p, p, |i, j| {
                if i == j {
                    1.0
                } else if block_of(i) == block_of(j) {
                    rho_w
                } else {
                    0.0
                }
            });
            let nblocks = p.div_ceil(block_size);
            let members = |b: usize| (b * block_size, ((b + 1) * block_size).min(p));
            for b1 in 0..nblocks {
                for b2 in (b1 + 1)..nblocks {
                    if rng.random::<f64>() < pi_b {
                        let (s1, e1) = members(b1);
                        let (s2, e2) = members(b2);
                        let i = rng.random_range(s1..e1);
                        let j = rng.random_range(s2..e2);
                        out[(i, j)] = rho_b;
                        out[(j, i)] = rho_b;
                    }
                }
            }
            load_diagonal(SymMat::new(out)?)
        }
        StructureSpec::Banded { width, diag, off } => SymMat::from_fn(p, |i, j| match i.abs_diff(j) {
            0 => diag,
            d if d <= width => off,
            _ => 0.0,
        }),
        StructureSpec::Grid { side } => SymMat::from_fn(p, |i, j| {
            if i == j {
                return 1.0;
            }
            let (a, b) = (i.min(j), i.max(j));
            let horizontal = b == a + 1 && (a + 1) % side != 0;
            let vertical = b == a + side;
            if horizontal || vertical {
                0.2
            } else {
                0.0
            }
        }),
    }
}

/// Covariance of the sampling distribution and its Cholesky factor.
#[derive(Debug, Clone)]
pub struct SamplingFactor {
    pub sigma: SymMat,
    l: DMatrix<f64>,
}

impl SamplingFactor {
    /// `truth` is the covariance, or the precision matrix for `Precision`.
    pub fn new(truth: &SymMat, kind: ProblemKind) -> Result<Self> {
        let sigma = match kind {
            ProblemKind::Covariance => truth.clone(),
            ProblemKind::Precision => {
                let eig = sym_eig(truth)?;
                if eig.min() <= 0.0 {
                    return Err(Error::TruthNotPD);
                }
                eig.map_spectrum(|d| 1.0 / d)
            }
        };
        let chol = Cholesky::new(sigma.matrix().clone()).ok_or(Error::TruthNotPD)?;
        Ok(Self { l: chol.l(), sigma })
    }

    /// `(1/n) sum x_i x_i^T` for `n` draws `x = L z`, `z ~ N(0, I)`.
    pub fn sample_cov(&self, n: usize, seed: u64) -> Result<SymMat> {
        if n == 0 {
            return Err(Error::InvalidParameter("sample size must be positive".into()));
        }
        let p = self.l.nrows();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let z = DMatrix::<f64>::from_fn(p, n, |_, _| rng.sample(StandardNormal));
        let x = &self.l * z;
        let s = (&x * x.transpose()) / n as f64;
        Ok(SymMat::symmetrized(s))
    }
}

#[derive(Debug, Clone)]
pub struct Instance {
    pub structure: StructureSpec,
    pub kind: ProblemKind,
    pub truth: SymMat,
    pub truth_seed: u64,
    pub samples_seed: u64,
    pub n: usize,
    pub sample_cov: SymMat,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct InstanceMeta {
    structure: StructureSpec,
    kind: ProblemKind,
    p: usize,
    n: usize,
    truth_seed: u64,
    samples_seed: u64,
}

pub fn sample_instance(truth: &SymMat, kind: ProblemKind, n: usize, seed: u64) -> Result<SymMat> {
    SamplingFactor::new(truth, kind)?.sample_cov(n, seed)
}

impl Instance {
    /// Truth from `(structure, p, truth_seed)`, sample covariance from
    /// `(n, samples_seed)`.
    pub fn generate(structure: &StructureSpec, p: usize, n: usize, truth_seed: u64, samples_seed: u64) -> Result<Self> {
        let truth = make_truth(structure, p, truth_seed)?;
        let kind = structure.kind();
        let sample_cov = sample_instance(&truth, kind, n, samples_seed)?;
        Ok(Self { structure: structure.clone(), kind, truth, truth_seed, samples_seed, n, sample_cov })
    }

    pub fn dim(&self) -> usize {
        self.truth.dim()
    }

    /// Writes `spec.json`, `truth.txt` and `S.txt` into `dir`.
    pub fn save(&self, dir: &Path) -> Result<()> {
        std::fs::create_dir_all(dir)?;
        let meta = InstanceMeta {
            structure: self.structure.clone(),
            kind: self.kind,
            p: self.dim(),
            n: self.n,
            truth_seed: self.truth_seed,
            samples_seed: self.samples_seed,
        };
        std::fs::write(dir.join("spec.json"), serde_json::to_string_pretty(&meta)?)?;
        symcore::save(&self.truth, &dir.join("truth.txt"))?;
        symcore::save(&self.sample_cov, &dir.join("S.txt"))?;
        Ok(())
    }

    pub fn load(dir: &Path) -> Result<Self> {
        let meta: InstanceMeta = serde_json::from_str(&std::fs::read_to_string(dir.join("spec.json"))?)?;
        let truth = symcore::load(&dir.join("truth.txt"))?;
        let sample_cov = symcore::load(&dir.join("S.txt"))?;
        if truth.dim() != meta.p || sample_cov.dim() != meta.p {
            return Err(Error::DimMismatch { left: truth.dim(), right: meta.p });
        }
        Ok(Self {
            structure: meta.structure,
            kind: meta.kind,
            truth,
            truth_seed: meta.truth_seed,
            samples_seed: meta.samples_seed,
            n: meta.n,
            sample_cov,
        })
    }
}

/// Mixes a base seed with an index into an independent-looking seed.
pub fn derive_seed(base: u64, index: u64) -> u64 {
    let mut z = base ^ index.wrapping_mul(0x9E37_79B9_7F4A_7C15).wrapping_add(0xD1B5_4A32_D192_ED03);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConcentrationRow {
    pub p: usize,
    pub n: usize,
    pub median: f64,
    pub p95: f64,
    /// `median / sqrt(log p / n)`.
    pub ratio: f64,
}

fn quantile(sorted: &[f64], q: f64) -> f64 {
    let pos = q * (sorted.len() - 1) as f64;
    let lo = pos.floor() as usize;
    let hi = pos.ceil() as usize;
    sorted[lo] + (pos - lo as f64) * (sorted[hi] - sorted[lo])
}

/// Distribution of `||S - Sigma*||_max` over `reps` sample draws per `(p, n)`.
pub fn concentration_experiment(
    spec: &StructureSpec,
    p_list: &[usize],
    n_list: &[usize],
    reps: usize,
    seed: u64,
) -> Result<Vec<ConcentrationRow>> {
    if reps < 30 {
        return Err(Error::InvalidParameter(format!("at least 30 repetitions required, got {reps}")));
    }
    let mut rows = Vec::new();
    for (pi, &p) in p_list.iter().enumerate() {
        let truth = make_truth(spec, p, derive_seed(seed, pi as u64))?;
        let factor = SamplingFactor::new(&truth, spec.kind())?;
        for &n in n_list {
            let mut errs = Vec::with_capacity(reps);
            for r in 0..reps {
                let s = factor.sample_cov(n, derive_seed(seed, ((p as u64) << 40) ^ ((n as u64) << 20) ^ r as u64))?;
                errs.push((&s - &factor.sigma).max_abs());
            }
            errs.sort_by(f64::total_cmp);
            let median = quantile(&errs, 0.5);
            let scale = ((p as f64).ln() / n as f64).sqrt();
            rows.push(ConcentrationRow { p, n, median, p95: quantile(&errs, 0.95), ratio: median / scale });
        }
    }
    Ok(rows)
}

pub fn concentration_csv(rows: &[ConcentrationRow]) -> String {
    let mut out = String::from("p,n,median,p95,ratio\n");
    for r in rows {
        let _ = writeln!(out, "{},{},{:e},{:e},{:e}", r.p, r.n, r.median, r.p95, r.ratio);
    }
    out
}
