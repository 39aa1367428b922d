//! Dense complex vectors and matrices with fixed dimensions.

use num_complex::Complex64;

use crate::{Error, Result};

pub type C64 = Complex64;

/// Complex column vector. The length is fixed at construction.
#[derive(Debug, Clone, PartialEq)]
pub struct ComplexVec {
    data: Vec<C64>,
}

impl ComplexVec {
    pub fn zeros(len: usize) -> Self {
        Self {
            data: vec![C64::new(0.0, 0.0); len],
        }
    }

    pub fn from_vec(data: Vec<C64>) -> Self {
        Self { data }
    }

    /// Build from separate real and imaginary parts of equal length.
    pub fn from_parts(re: &[f64], im: &[f64]) -> Result<Self> {
        if re.len() != im.len() {
            return Err(Error::shape(format!(
                "real part has {} entries, imaginary part {}",
                re.len(),
                im.len()
            )));
        }
        Ok(Self {
            data: re.iter().zip(im).map(|(&r, &i)| C64::new(r, i)).collect(),
        })
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn as_slice(&self) -> &[C64] {
        &self.data
    }

    pub fn as_mut_slice(&mut self) -> &mut [C64] {
        &mut self.data
    }

    pub fn into_vec(self) -> Vec<C64> {
        self.data
    }

    /// Hermitian inner product `selfᴴ · other`.
    pub fn dot(&self, other: &ComplexVec) -> C64 {
        debug_assert_eq!(self.len(), other.len());
        dot(&self.data, &other.data)
    }

    pub fn norm_sqr(&self) -> f64 {
        self.data.iter().map(|z| z.norm_sqr()).sum()
    }

    pub fn scale(&self, s: C64) -> ComplexVec {
        Self {
            data: self.data.iter().map(|z| z * s).collect(),
        }
    }

    pub fn scale_real(&self, s: f64) -> ComplexVec {
        Self {
            data: self.data.iter().map(|z| z * s).collect(),
        }
    }

    pub fn add(&self, other: &ComplexVec) -> ComplexVec {
        debug_assert_eq!(self.len(), other.len());
        Self {
            data: self
                .data
                .iter()
                .zip(&other.data)
                .map(|(a, b)| a + b)
                .collect(),
        }
    }

    pub fn sub(&self, other: &ComplexVec) -> ComplexVec {
        debug_assert_eq!(self.len(), other.len());
        Self {
            data: self
                .data
                .iter()
                .zip(&other.data)
                .map(|(a, b)| a - b)
                .collect(),
        }
    }

    /// `self + s·other` without intermediate allocation.
    pub fn axpy(&mut self, s: C64, other: &ComplexVec) {
        for (a, b) in self.data.iter_mut().zip(&other.data) {
            *a += s * b;
        }
    }

    pub fn is_finite(&self) -> bool {
        self.data
            .iter()
            .all(|z| z.re.is_finite() && z.im.is_finite())
    }
}

impl std::ops::Index<usize> for ComplexVec {
    type Output = C64;
    fn index(&self, i: usize) -> &C64 {
        &self.data[i]
    }
}

impl std::ops::IndexMut<usize> for ComplexVec {
    fn index_mut(&mut self, i: usize) -> &mut C64 {
        &mut self.data[i]
    }
}

/// `aᴴ b` over slices.
pub fn dot(a: &[C64], b: &[C64]) -> C64 {
    let mut re = 0.0;
    let mut im = 0.0;
    for (x, y) in a.iter().zip(b) {
        re += x.re * y.re + x.im * y.im;
        im += x.re * y.im - x.im * y.re;
    }
    C64::new(re, im)
}

/// Row-major complex matrix with fixed dimensions.
#[derive(Debug, Clone, PartialEq)]
pub struct ComplexMat {
    rows: usize,
    cols: usize,
    data: Vec<C64>,
}

impl ComplexMat {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        Self {
            rows,
            cols,
            data: vec![C64::new(0.0, 0.0); rows * cols],
        }
    }

    pub fn identity(n: usize) -> Self {
        let mut m = Self::zeros(n, n);
        for i in 0..n {
            m.data[i * n + i] = C64::new(1.0, 0.0);
        }
        m
    }

    pub fn from_vec(rows: usize, cols: usize, data: Vec<C64>) -> Result<Self> {
        if data.len() != rows * cols {
            return Err(Error::shape(format!(
                "{} entries for a {rows}x{cols} matrix",
                data.len()
            )));
        }
        Ok(Self { rows, cols, data })
    }

    /// Outer product `a bᴴ`.
    pub fn outer(a: &ComplexVec, b: &ComplexVec) -> Self {
        let mut m = Self::zeros(a.len(), b.len());
        for i in 0..a.len() {
            for j in 0..b.len() {
                m.data[i * b.len() + j] = a[i] * b[j].conj();
            }
        }
        m
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn as_slice(&self) -> &[C64] {
        &self.data
    }

    pub fn row(&self, r: usize) -> &[C64] {
        &self.data[r * self.cols..(r + 1) * self.cols]
    }

    pub fn get(&self, r: usize, c: usize) -> C64 {
        self.data[r * self.cols + c]
    }

    pub fn set(&mut self, r: usize, c: usize, v: C64) {
        self.data[r * self.cols + c] = v;
    }

    pub fn trace(&self) -> C64 {
        (0..self.rows.min(self.cols)).map(|i| self.get(i, i)).sum()
    }

    pub fn scale(&self, s: f64) -> Self {
        Self {
            rows: self.rows,
            cols: self.cols,
            data: self.data.iter().map(|z| z * s).collect(),
        }
    }

    pub fn add(&self, other: &ComplexMat) -> Result<Self> {
        if self.rows != other.rows || self.cols != other.cols {
            return Err(Error::shape("matrix sum dimension mismatch"));
        }
        Ok(Self {
            rows: self.rows,
            cols: self.cols,
            data: self
                .data
                .iter()
                .zip(&other.data)
                .map(|(a, b)| a + b)
                .collect(),
        })
    }

    pub fn adjoint(&self) -> Self {
        let mut m = Self::zeros(self.cols, self.rows);
        for r in 0..self.rows {
            for c in 0..self.cols {
                m.data[c * self.rows + r] = self.data[r * self.cols + c].conj();
            }
        }
        m
    }

    pub fn matvec(&self, x: &ComplexVec) -> Result<ComplexVec> {
        if x.len() != self.cols {
            return Err(Error::shape(format!(
                "{}x{} matrix times length-{} vector",
                self.rows,
                self.cols,
                x.len()
            )));
        }
        Ok(ComplexVec::from_vec(
            (0..self.rows)
                .map(|r| {
                    self.row(r)
                        .iter()
                        .zip(x.as_slice())
                        .map(|(a, b)| a * b)
                        .sum()
                })
                .collect(),
        ))
    }

    pub fn matmul(&self, other: &ComplexMat) -> Result<Self> {
        if self.cols != other.rows {
            return Err(Error::shape(format!(
                "{}x{} times {}x{}",
                self.rows, self.cols, other.rows, other.cols
            )));
        }
        let mut out = Self::zeros(self.rows, other.cols);
        for r in 0..self.rows {
            for k in 0..self.cols {
                let a = self.data[r * self.cols + k];
                if a == C64::new(0.0, 0.0) {
                    continue;
                }
                for c in 0..other.cols {
                    out.data[r * other.cols + c] += a * other.data[k * other.cols + c];
                }
            }
        }
        Ok(out)
    }

    /// Lower-triangular factor `C` with `C Cᴴ = self` for a Hermitian PSD
    /// matrix. Pivots that round to non-positive values are clamped to zero,
    /// so rank-deficient inputs are accepted.
    pub fn cholesky_psd(&self) -> Result<ComplexMat> {
        if self.rows != self.cols {
            return Err(Error::shape("cholesky of a non-square matrix"));
        }
        let n = self.rows;
        let scale = (0..n).map(|i| self.get(i, i).re.abs()).fold(0.0, f64::max);
        let floor = 1e-13 * scale.max(f64::MIN_POSITIVE);
        let mut l = Self::zeros(n, n);
        for j in 0..n {
            let mut d = self.get(j, j).re;
            for k in 0..j {
                d -= l.get(j, k).norm_sqr();
            }
            if d <= floor {
                continue;
            }
            let ljj = d.sqrt();
            l.set(j, j, C64::new(ljj, 0.0));
            for i in (j + 1)..n {
                let mut s = self.get(i, j);
                for k in 0..j {
                    s -= l.get(i, k) * l.get(j, k).conj();
                }
                l.set(i, j, s / ljj);
            }
        }
        Ok(l)
    }

    /// Maximum deviation from Hermitian symmetry, `max |A_ij − conj(A_ji)|`.
    pub fn hermitian_defect(&self) -> f64 {
        let mut worst: f64 = 0.0;
        for r in 0..self.rows {
            for c in 0..self.cols {
                worst = worst.max((self.get(r, c) - self.get(c, r).conj()).norm());
            }
        }
        worst
    }
}

/// Real symmetric PSD Cholesky with clamped pivots; returns row-major `n×n`.
pub fn cholesky_real_psd(a: &[f64], n: usize) -> Result<Vec<f64>> {
    if a.len() != n * n {
        return Err(Error::shape(format!("{} entries for {n}x{n}", a.len())));
    }
    let scale = (0..n).map(|i| a[i * n + i].abs()).fold(0.0, f64::max);
    let floor = 1e-13 * scale.max(f64::MIN_POSITIVE);
    let mut l = vec![0.0; n * n];
    for j in 0..n {
        let mut d = a[j * n + j];
        for k in 0..j {
            d -= l[j * n + k] * l[j * n + k];
        }
        if d <= floor {
            continue;
        }
        let ljj = d.sqrt();
        l[j * n + j] = ljj;
        for i in (j + 1)..n {
            let mut s = a[i * n + j];
            for k in 0..j {
                s -= l[i * n + k] * l[j * n + k];
            }
            l[i * n + j] = s / ljj;
        }
    }
    Ok(l)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn c(re: f64, im: f64) -> C64 {
        C64::new(re, im)
    }

    #[test]
    fn dot_is_conjugate_symmetric() {
        let a = ComplexVec::from_vec(vec![c(1.0, 2.0), c(-0.5, 0.3)]);
        let b = ComplexVec::from_vec(vec![c(0.2, -1.0), c(3.0, 0.7)]);
        let ab = a.dot(&b);
        let ba = b.dot(&a);
        assert!((ab - ba.conj()).norm() <= 1e-12 * ab.norm());
        assert!((a.dot(&a).re - a.norm_sqr()).abs() < 1e-15);
    }

    #[test]
    fn cholesky_reconstructs_hermitian_matrix() {
        let a = ComplexVec::from_vec(vec![c(1.0, 0.0), c(0.0, 1.0), c(0.5, -0.5)]);
        let m = ComplexMat::outer(&a, &a)
            .add(&ComplexMat::identity(3).scale(0.3))
            .unwrap();
        let l = m.cholesky_psd().unwrap();
        let back = l.matmul(&l.adjoint()).unwrap();
        for (x, y) in back.as_slice().iter().zip(m.as_slice()) {
            assert!((x - y).norm() < 1e-12);
        }
    }

    #[test]
    fn cholesky_accepts_rank_deficient() {
        let a = ComplexVec::from_vec(vec![c(1.0, 0.0), c(0.0, 1.0)]);
        let m = ComplexMat::outer(&a, &a);
        let l = m.cholesky_psd().unwrap();
        let back = l.matmul(&l.adjoint()).unwrap();
        for (x, y) in back.as_slice().iter().zip(m.as_slice()) {
            assert!((x - y).norm() < 1e-12);
        }
    }

    #[test]
    fn real_cholesky_matches_product() {
        let a = [4.0, 2.0, 2.0, 3.0];
        let l = cholesky_real_psd(&a, 2).unwrap();
        assert!((l[0] - 2.0).abs() < 1e-15);
        assert!((l[2] - 1.0).abs() < 1e-15);
        assert!((l[3] - 2f64.sqrt()).abs() < 1e-15);
        assert_eq!(l[1], 0.0);
    }

    #[test]
    fn shape_errors_are_reported() {
        assert!(ComplexMat::from_vec(2, 2, vec![c(0.0, 0.0); 3]).is_err());
        let m = ComplexMat::zeros(2, 3);
        assert!(m.matvec(&ComplexVec::zeros(2)).is_err());
        assert!(ComplexVec::from_parts(&[1.0], &[]).is_err());
    }
}
