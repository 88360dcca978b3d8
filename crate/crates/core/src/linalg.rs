//! Symmetric tridiagonal matrices and their Cholesky factors.
//!
//! Everything here is O(n) in time and memory. The factor `L` is lower
//! bidiagonal with `L L' = A`.

use nalgebra::DMatrix;

use crate::error::{Error, Result};

/// Symmetric tridiagonal matrix stored as its diagonal and first sub-diagonal.
#[derive(Debug, Clone, PartialEq)]
pub struct SymTridiagonal {
    diag: Vec<f64>,
    sub: Vec<f64>,
}

impl SymTridiagonal {
    pub fn new(diag: Vec<f64>, sub: Vec<f64>) -> Result<Self> {
        if diag.is_empty() {
            return Err(Error::invalid("tridiagonal matrix must be non-empty"));
        }
        if sub.len() + 1 != diag.len() {
            return Err(Error::Dimension {
                context: "tridiagonal sub-diagonal",
                expected: diag.len() - 1,
                actual: sub.len(),
            });
        }
        Ok(Self { diag, sub })
    }

    pub fn identity_scaled(n: usize, value: f64) -> Self {
        Self {
            diag: vec![value; n],
            sub: vec![0.0; n.saturating_sub(1)],
        }
    }

    pub fn len(&self) -> usize {
        self.diag.len()
    }

    pub fn is_empty(&self) -> bool {
        self.diag.is_empty()
    }

    pub fn diag(&self) -> &[f64] {
        &self.diag
    }

    pub fn sub(&self) -> &[f64] {
        &self.sub
    }

    /// Adds `d` to the diagonal.
    pub fn add_diagonal(&self, d: &[f64]) -> Self {
        debug_assert_eq!(d.len(), self.diag.len());
        Self {
            diag: self.diag.iter().zip(d).map(|(a, b)| a + b).collect(),
            sub: self.sub.clone(),
        }
    }

    pub fn scaled(&self, factor: f64) -> Self {
        Self {
            diag: self.diag.iter().map(|v| v * factor).collect(),
            sub: self.sub.iter().map(|v| v * factor).collect(),
        }
    }

    pub fn matvec(&self, x: &[f64]) -> Vec<f64> {
        let n = self.len();
        debug_assert_eq!(x.len(), n);
        let mut y: Vec<f64> = self.diag.iter().zip(x).map(|(d, v)| d * v).collect();
        for k in 0..n - 1 {
            y[k] += self.sub[k] * x[k + 1];
            y[k + 1] += self.sub[k] * x[k];
        }
        y
    }

    /// x' A x
    pub fn quad_form(&self, x: &[f64]) -> f64 {
        let mut acc = 0.0;
        for (k, (&d, &v)) in self.diag.iter().zip(x).enumerate() {
            acc += d * v * v;
            if k + 1 < x.len() {
                acc += 2.0 * self.sub[k] * v * x[k + 1];
            }
        }
        acc
    }

    pub fn to_dense(&self) -> DMatrix<f64> {
        let n = self.len();
        let mut m = DMatrix::zeros(n, n);
        for k in 0..n {
            m[(k, k)] = self.diag[k];
            if k + 1 < n {
                m[(k + 1, k)] = self.sub[k];
                m[(k, k + 1)] = self.sub[k];
            }
        }
        m
    }

    pub fn cholesky(&self) -> Result<TridiagCholesky> {
        TridiagCholesky::factor(self)
    }
}

/// Lower-bidiagonal Cholesky factor of a [`SymTridiagonal`].
#[derive(Debug, Clone)]
pub struct TridiagCholesky {
    diag: Vec<f64>,
    sub: Vec<f64>,
}

impl TridiagCholesky {
    pub fn factor(a: &SymTridiagonal) -> Result<Self> {
        let n = a.len();
        let mut diag = Vec::with_capacity(n);
        let mut sub = Vec::with_capacity(n.saturating_sub(1));
        let mut prev = 0.0;
        for k in 0..n {
            let mut pivot = a.diag[k];
            if k > 0 {
                let l = a.sub[k - 1] / prev;
                sub.push(l);
                pivot -= l * l;
            }
            if !(pivot > 0.0) || !pivot.is_finite() {
                return Err(Error::NotPositiveDefinite {
                    context: "tridiagonal Cholesky",
                });
            }
            prev = pivot.sqrt();
            diag.push(prev);
        }
        Ok(Self { diag, sub })
    }

    pub fn len(&self) -> usize {
        self.diag.len()
    }

    pub fn is_empty(&self) -> bool {
        self.diag.is_empty()
    }

    /// log |A| = 2 sum log L_kk
    pub fn log_det(&self) -> f64 {
        // one ln per block of eight pivots unless the block product leaves
        // the normal range
        let mut total = 0.0;
        for block in self.diag.chunks(8) {
            let prod: f64 = block.iter().product();
            total += if prod.is_normal() {
                prod.ln()
            } else {
                block.iter().map(|d| d.ln()).sum()
            };
        }
        2.0 * total
    }

    /// Solves L y = b in place.
    pub fn solve_lower_in_place(&self, b: &mut [f64]) {
        b[0] /= self.diag[0];
        for k in 1..b.len() {
            b[k] = (b[k] - self.sub[k - 1] * b[k - 1]) / self.diag[k];
        }
    }

    /// Solves L' x = y in place.
    pub fn solve_upper_in_place(&self, y: &mut [f64]) {
        let n = y.len();
        y[n - 1] /= self.diag[n - 1];
        for k in (0..n - 1).rev() {
            y[k] = (y[k] - self.sub[k] * y[k + 1]) / self.diag[k];
        }
    }

    /// Solves A x = b in place.
    pub fn solve_in_place(&self, b: &mut [f64]) {
        self.solve_lower_in_place(b);
        self.solve_upper_in_place(b);
    }

    pub fn solve(&self, b: &[f64]) -> Vec<f64> {
        let mut x = b.to_vec();
        self.solve_in_place(&mut x);
        x
    }
}
