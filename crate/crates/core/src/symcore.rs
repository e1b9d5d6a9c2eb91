//! Dense symmetric matrices and the spectral primitives every proximal
//! operator is built from.
//!
//! [`SymMat`] stores the full `p x p` array. Construction checks symmetry
//! (relative tolerance `1e-6`) and then replaces the input by `(A + A^T)/2`,
//! so every value that leaves this module is exactly symmetric.

use std::io::{BufRead, Read, Write};
use std::ops::{Add, Mul, Neg, Sub};

use nalgebra::{DMatrix, SymmetricEigen};

use crate::error::{Error, Result};

/// Relative asymmetry accepted by [`SymMat::new`] before symmetrization.
pub const SYMMETRY_TOL: f64 = 1e-6;

#[derive(Debug, Clone, PartialEq)]
pub struct SymMat {
    data: DMatrix<f64>,
}

impl SymMat {
    /// Validates and symmetrizes a square matrix.
    pub fn new(m: DMatrix<f64>) -> Result<Self> {
        let (rows, cols) = m.shape();
        if rows != cols || rows == 0 {
            return Err(Error::BadShape { rows, cols });
        }
        for j in 0..cols {
            for i in 0..rows {
                if !m[(i, j)].is_finite() {
                    return Err(Error::NonFinite { row: i, col: j });
                }
            }
        }
        for j in 0..cols {
            for i in (j + 1)..rows {
                let (a, b) = (m[(i, j)], m[(j, i)]);
                let gap = (a - b).abs();
                if gap > SYMMETRY_TOL * 1f64.max(a.abs()).max(b.abs()) {
                    return Err(Error::NotSymmetric { row: i, col: j, gap });
                }
            }
        }
        Ok(Self::symmetrized(m))
    }

    /// Builds from a row-major slice of length `p * p`.
    pub fn from_row_major(p: usize, values: &[f64]) -> Result<Self> {
        if p == 0 || values.len() != p * p {
            return Err(Error::BadShape { rows: p, cols: values.len() / p.max(1) });
        }
        Self::new(DMatrix::from_row_slice(p, p, values))
    }

    /// Builds from `f(i, j)` evaluated on the upper triangle and mirrored.
    pub fn from_fn(p: usize, mut f: impl FnMut(usize, usize) -> f64) -> Result<Self> {
        if p == 0 {
            return Err(Error::BadShape { rows: 0, cols: 0 });
        }
        let mut m = DMatrix::zeros(p, p);
        for j in 0..p {
            for i in 0..=j {
                let v = f(i, j);
                if !v.is_finite() {
                    return Err(Error::NonFinite { row: i, col: j });
                }
                m[(i, j)] = v;
                m[(j, i)] = v;
            }
        }
        Ok(Self { data: m })
    }

    pub fn zeros(p: usize) -> Self {
        assert!(p > 0, "dimension must be positive");
        Self { data: DMatrix::zeros(p, p) }
    }

    pub fn identity(p: usize) -> Self {
        Self::scaled_identity(p, 1.0)
    }

    pub fn scaled_identity(p: usize, value: f64) -> Self {
        assert!(p > 0, "dimension must be positive");
        Self { data: DMatrix::from_diagonal_element(p, p, value) }
    }

    pub fn from_diagonal(d: &[f64]) -> Result<Self> {
        Self::from_fn(d.len(), |i, j| if i == j { d[i] } else { 0.0 })
    }

    /// Wraps a matrix that is symmetric by construction, averaging away
    /// rounding-level asymmetry.
    pub(crate) fn symmetrized(mut m: DMatrix<f64>) -> Self {
        let p = m.nrows();
        for j in 0..p {
            for i in (j + 1)..p {
                let avg = 0.5 * (m[(i, j)] + m[(j, i)]);
                m[(i, j)] = avg;
                m[(j, i)] = avg;
            }
        }
        Self { data: m }
    }

    pub fn dim(&self) -> usize {
        self.data.nrows()
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.data[(i, j)]
    }

    pub fn matrix(&self) -> &DMatrix<f64> {
        &self.data
    }

    pub fn into_matrix(self) -> DMatrix<f64> {
        self.data
    }

    pub fn diagonal(&self) -> Vec<f64> {
        (0..self.dim()).map(|i| self.data[(i, i)]).collect()
    }

    pub fn to_row_major(&self) -> Vec<f64> {
        let p = self.dim();
        let mut out = Vec::with_capacity(p * p);
        for i in 0..p {
            for j in 0..p {
                out.push(self.data[(i, j)]);
            }
        }
        out
    }

    pub fn to_rows(&self) -> Vec<Vec<f64>> {
        let p = self.dim();
        (0..p).map(|i| (0..p).map(|j| self.data[(i, j)]).collect()).collect()
    }

    /// Applies `f` to every entry. Symmetry is preserved because `f` sees
    /// `(i, j)` and `(j, i)` with the same value.
    pub fn map(&self, f: impl Fn(f64) -> f64) -> Self {
        Self { data: self.data.map(f) }
    }

    /// Entrywise map that also receives the index; `f` must be symmetric in
    /// `(i, j)`.
    pub fn map_indexed(&self, f: impl Fn(usize, usize, f64) -> f64) -> Self {
        let p = self.dim();
        let mut m = self.data.clone();
        for j in 0..p {
            for i in 0..=j {
                let v = f(i, j, self.data[(i, j)]);
                m[(i, j)] = v;
                m[(j, i)] = v;
            }
        }
        Self { data: m }
    }

    pub fn zip_map(&self, other: &SymMat, f: impl Fn(f64, f64) -> f64) -> Self {
        assert_eq!(self.dim(), other.dim(), "dimension mismatch");
        Self { data: self.data.zip_map(&other.data, f) }
    }

    pub fn hadamard(&self, other: &SymMat) -> Self {
        self.zip_map(other, |a, b| a * b)
    }

    pub fn scale(&self, a: f64) -> Self {
        Self { data: &self.data * a }
    }

    /// `a * self + b * other`.
    pub fn lin_comb(&self, a: f64, other: &SymMat, b: f64) -> Self {
        self.zip_map(other, |x, y| a * x + b * y)
    }

    pub fn trace(&self) -> f64 {
        self.data.trace()
    }

    pub fn frob_norm(&self) -> f64 {
        self.data.norm()
    }

    pub fn frob_norm_sq(&self) -> f64 {
        self.data.norm_squared()
    }

    /// Frobenius inner product `tr(A^T B)`.
    pub fn inner(&self, other: &SymMat) -> f64 {
        assert_eq!(self.dim(), other.dim(), "dimension mismatch");
        self.data.dot(&other.data)
    }

    /// Largest absolute entry.
    pub fn max_abs(&self) -> f64 {
        self.data.amax()
    }

    /// `sum_{i != j} |a_ij|`.
    pub fn offdiag_l1(&self) -> f64 {
        let p = self.dim();
        let mut s = 0.0;
        for j in 0..p {
            for i in 0..p {
                if i != j {
                    s += self.data[(i, j)].abs();
                }
            }
        }
        s
    }

    pub fn min_entry(&self) -> f64 {
        self.data.min()
    }

    pub fn max_entry(&self) -> f64 {
        self.data.max()
    }

    /// Frobenius distance `||self - other||_F`.
    pub fn dist(&self, other: &SymMat) -> f64 {
        assert_eq!(self.dim(), other.dim(), "dimension mismatch");
        let mut s = 0.0;
        for (a, b) in self.data.iter().zip(other.data.iter()) {
            s += (a - b) * (a - b);
        }
        s.sqrt()
    }
}

impl Add for &SymMat {
    type Output = SymMat;
    fn add(self, rhs: &SymMat) -> SymMat {
        assert_eq!(self.dim(), rhs.dim(), "dimension mismatch");
        SymMat { data: &self.data + &rhs.data }
    }
}

impl Sub for &SymMat {
    type Output = SymMat;
    fn sub(self, rhs: &SymMat) -> SymMat {
        assert_eq!(self.dim(), rhs.dim(), "dimension mismatch");
        SymMat { data: &self.data - &rhs.data }
    }
}

impl Mul<f64> for &SymMat {
    type Output = SymMat;
    fn mul(self, rhs: f64) -> SymMat {
        self.scale(rhs)
    }
}

impl Neg for &SymMat {
    type Output = SymMat;
    fn neg(self) -> SymMat {
        SymMat { data: -&self.data }
    }
}

/// Orthogonal eigendecomposition `A = Q diag(d) Q^T`, eigenvalues ascending.
#[derive(Debug, Clone)]
pub struct EigenDecomp {
    pub q: DMatrix<f64>,
    pub d: Vec<f64>,
}

impl EigenDecomp {
    /// `Q diag(f(d)) Q^T`.
    pub fn map_spectrum(&self, f: impl Fn(f64) -> f64) -> SymMat {
        let mut scaled = self.q.clone();
        for (k, &dk) in self.d.iter().enumerate() {
            let fk = f(dk);
            scaled.column_mut(k).scale_mut(fk);
        }
        SymMat::symmetrized(scaled * self.q.transpose())
    }

    pub fn reconstruct(&self) -> SymMat {
        self.map_spectrum(|d| d)
    }

    pub fn min(&self) -> f64 {
        self.d[0]
    }

    pub fn max(&self) -> f64 {
        *self.d.last().expect("nonempty spectrum")
    }
}

/// Symmetric eigendecomposition with ascending, stably sorted eigenvalues.
pub fn sym_eig(a: &SymMat) -> Result<EigenDecomp> {
    let p = a.dim();
    if let Some((idx, _)) = a.data.iter().enumerate().find(|(_, v)| !v.is_finite()) {
        return Err(Error::NonFinite { row: idx % p, col: idx / p });
    }
    let max_iter = 1000 + 100 * p;
    let eig = SymmetricEigen::try_new(a.data.clone(), f64::EPSILON, max_iter).ok_or(Error::NoConvergence)?;
    let mut order: Vec<usize> = (0..p).collect();
    order.sort_by(|&i, &j| eig.eigenvalues[i].total_cmp(&eig.eigenvalues[j]));
    let d = order.iter().map(|&k| eig.eigenvalues[k]).collect();
    let q = DMatrix::from_fn(p, p, |i, j| eig.eigenvectors[(i, order[j])]);
    Ok(EigenDecomp { q, d })
}

pub fn min_eigenvalue(a: &SymMat) -> Result<f64> {
    Ok(sym_eig(a)?.min())
}

/// Frobenius projection onto `{X : X >= eps I}`: eigenvalues clipped at `eps`.
pub fn psd_floor_project(a: &SymMat, eps: f64) -> Result<SymMat> {
    if !(eps > 0.0) {
        return Err(Error::InvalidParameter(format!("eigenvalue floor must be positive, got {eps}")));
    }
    // A successful factorization of A - eps I certifies the floor holds.
    let shifted = a.matrix() - DMatrix::<f64>::identity(a.dim(), a.dim()) * eps;
    if nalgebra::Cholesky::new(shifted).is_some() {
        return Ok(a.clone());
    }
    let eig = sym_eig(a)?;
    if eig.min() >= eps {
        return Ok(a.clone());
    }
    Ok(eig.map_spectrum(|d| d.max(eps)))
}

/// `log det A` by Cholesky, `None` when `A` is not positive definite.
pub fn chol_logdet(a: &SymMat) -> Option<f64> {
    let c = nalgebra::Cholesky::new(a.matrix().clone())?;
    Some(2.0 * c.l_dirty().diagonal().iter().map(|d| d.ln()).sum::<f64>())
}

/// Inverse and log-determinant of a positive definite matrix.
pub fn spd_inverse_logdet(a: &SymMat) -> Result<(SymMat, f64)> {
    if let Some(c) = nalgebra::Cholesky::new(a.matrix().clone()) {
        let logdet = 2.0 * c.l_dirty().diagonal().iter().map(|d| d.ln()).sum::<f64>();
        return Ok((SymMat::symmetrized(c.inverse()), logdet));
    }
    let eig = sym_eig(a)?;
    if eig.min() <= 0.0 {
        return Err(Error::NotPositiveDefinite(eig.min()));
    }
    let logdet = eig.d.iter().map(|d| d.ln()).sum();
    Ok((eig.map_spectrum(|d| 1.0 / d), logdet))
}

pub fn frob_norm(a: &SymMat) -> f64 {
    a.frob_norm()
}

/// Sum of absolute eigenvalues.
pub fn nuclear_norm(a: &SymMat) -> Result<f64> {
    Ok(sym_eig(a)?.d.iter().map(|d| d.abs()).sum())
}

pub fn inner(a: &SymMat, b: &SymMat) -> Result<f64> {
    if a.dim() != b.dim() {
        return Err(Error::DimMismatch { left: a.dim(), right: b.dim() });
    }
    Ok(a.inner(b))
}

/// Writes the text form: `p` on the first line, then `p` rows of
/// space-separated values in shortest round-trip notation.
pub fn write_text<W: Write>(a: &SymMat, mut w: W) -> Result<()> {
    let p = a.dim();
    writeln!(w, "{p}")?;
    for i in 0..p {
        let row: Vec<String> = (0..p).map(|j| format!("{:?}", a.get(i, j))).collect();
        writeln!(w, "{}", row.join(" "))?;
    }
    Ok(())
}

pub fn read_text<R: BufRead>(r: R) -> Result<SymMat> {
    let mut lines = r.lines().filter(|l| l.as_ref().map(|s| !s.trim().is_empty()).unwrap_or(true));
    let header = lines.next().ok_or_else(|| Error::Parse("empty matrix file".into()))??;
    let p: usize = header.trim().parse().map_err(|e| Error::Parse(format!("bad dimension line {header:?}: {e}")))?;
    let mut values = Vec::with_capacity(p * p);
    for row in 0..p {
        let line = lines.next().ok_or_else(|| Error::Parse(format!("expected {p} rows, found {row}")))??;
        let before = values.len();
        for tok in line.split_whitespace() {
            let v: f64 = tok.parse().map_err(|e| Error::Parse(format!("bad value {tok:?}: {e}")))?;
            values.push(v);
        }
        if values.len() - before != p {
            return Err(Error::Parse(format!("row {row} has {} values, expected {p}", values.len() - before)));
        }
    }
    SymMat::from_row_major(p, &values)
}

/// Binary form: little-endian `u64` dimension followed by `p*p` row-major
/// `f64` values.
pub fn write_binary<W: Write>(a: &SymMat, mut w: W) -> Result<()> {
    w.write_all(&(a.dim() as u64).to_le_bytes())?;
    for v in a.to_row_major() {
        w.write_all(&v.to_le_bytes())?;
    }
    Ok(())
}

pub fn read_binary<R: Read>(mut r: R) -> Result<SymMat> {
    let mut buf8 = [0u8; 8];
    r.read_exact(&mut buf8)?;
    let p = u64::from_le_bytes(buf8) as usize;
    if p == 0 || p > 1 << 16 {
        return Err(Error::Parse(format!("implausible dimension {p}")));
    }
    let mut values = Vec::with_capacity(p * p);
    for _ in 0..p * p {
        r.read_exact(&mut buf8)?;
        values.push(f64::from_le_bytes(buf8));
    }
    SymMat::from_row_major(p, &values)
}

/// Reads a matrix file, choosing the format from the extension (`.bin` is
/// binary, anything else is text).
pub fn load(path: &std::path::Path) -> Result<SymMat> {
    let f = std::fs::File::open(path)?;
    if path.extension().is_some_and(|e| e == "bin") {
        read_binary(std::io::BufReader::new(f))
    } else {
        read_text(std::io::BufReader::new(f))
    }
}

pub fn save(a: &SymMat, path: &std::path::Path) -> Result<()> {
    let f = std::io::BufWriter::new(std::fs::File::create(path)?);
    if path.extension().is_some_and(|e| e == "bin") {
        write_binary(a, f)
    } else {
        write_text(a, f)
    }
}
