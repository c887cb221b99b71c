//! Small dense square matrices. Only what the cost builders need: products,
//! transposes and a partial-pivot inverse for `n ≤ 16`-ish sizes.

use std::ops::{Add, Index, IndexMut, Mul, Sub};

use crate::error::{Error, Result};
use crate::scalar::Real;

/// Row-major `n × n` matrix.
#[derive(Clone, Debug, PartialEq)]
pub struct SquareMatrix<S> {
    n: usize,
    data: Vec<S>,
}

impl<S: Real> SquareMatrix<S> {
    pub fn zeros(n: usize) -> Self {
        Self { n, data: vec![S::zero(); n * n] }
    }

    pub fn identity(n: usize) -> Self {
        Self::from_fn(n, |i, j| if i == j { S::one() } else { S::zero() })
    }

    pub fn diagonal(values: &[S]) -> Self {
        let n = values.len();
        Self::from_fn(n, |i, j| if i == j { values[i] } else { S::zero() })
    }

    pub fn from_fn(n: usize, mut f: impl FnMut(usize, usize) -> S) -> Self {
        let mut data = Vec::with_capacity(n * n);
        for i in 0..n {
            for j in 0..n {
                data.push(f(i, j));
            }
        }
        Self { n, data }
    }

    /// Builds from row-major entries; `entries.len()` must be a perfect square.
    pub fn from_row_major(entries: &[S]) -> Result<Self> {
        let n = (entries.len() as f64).sqrt().round() as usize;
        if n * n != entries.len() {
            return Err(Error::DimensionMismatch { expected: n * n, got: entries.len() });
        }
        Ok(Self { n, data: entries.to_vec() })
    }

    #[inline]
    pub fn size(&self) -> usize {
        self.n
    }

    pub fn as_slice(&self) -> &[S] {
        &self.data
    }

    pub fn transpose(&self) -> Self {
        Self::from_fn(self.n, |i, j| self[(j, i)])
    }

    pub fn scale(&self, s: S) -> Self {
        Self { n: self.n, data: self.data.iter().map(|&x| x * s).collect() }
    }

    pub fn trace(&self) -> S {
        (0..self.n).map(|i| self[(i, i)]).sum()
    }

    /// Largest absolute entry.
    pub fn max_abs(&self) -> S {
        self.data.iter().fold(S::zero(), |m, &x| m.max(x.abs()))
    }

    pub fn mul_vec(&self, v: &[S]) -> Vec<S> {
        (0..self.n)
            .map(|i| (0..self.n).map(|j| self[(i, j)] * v[j]).sum())
            .collect()
    }

    /// `vᵀ A v`.
    pub fn quadratic_form(&self, v: &[S]) -> S {
        let mut acc = S::zero();
        for i in 0..self.n {
            let mut row = S::zero();
            for j in 0..self.n {
                row += self[(i, j)] * v[j];
            }
            acc += v[i] * row;
        }
        acc
    }

    /// Kronecker product with the `d`-dimensional identity: every scalar
    /// entry becomes a `d × d` diagonal block.
    pub fn kron_identity(&self, d: usize) -> Self {
        Self::from_fn(self.n * d, |r, c| {
            if r % d == c % d {
                self[(r / d, c / d)]
            } else {
                S::zero()
            }
        })
    }

    pub fn is_symmetric(&self, tol: S) -> bool {
        (0..self.n).all(|i| (0..i).all(|j| (self[(i, j)] - self[(j, i)]).abs() <= tol))
    }

    /// Inverse by Gauss-Jordan elimination with partial pivoting.
    pub fn inverse(&self) -> Result<Self> {
        let n = self.n;
        let mut a = self.clone();
        let mut inv = Self::identity(n);
        for col in 0..n {
            let pivot = (col..n)
                .max_by(|&r, &s| a[(r, col)].abs().partial_cmp(&a[(s, col)].abs()).unwrap())
                .unwrap_or(col);
            let p = a[(pivot, col)];
            if !p.is_finite() || p == S::zero() {
                return Err(Error::SingularMatrix);
            }
            if pivot != col {
                a.swap_rows(pivot, col);
                inv.swap_rows(pivot, col);
            }
            let p_inv = S::one() / p;
            for j in 0..n {
                a[(col, j)] *= p_inv;
                inv[(col, j)] *= p_inv;
            }
            for r in 0..n {
                if r == col {
                    continue;
                }
                let factor = a[(r, col)];
                if factor == S::zero() {
                    continue;
                }
                for j in 0..n {
                    let (acj, icj) = (a[(col, j)], inv[(col, j)]);
                    a[(r, j)] -= factor * acj;
                    inv[(r, j)] -= factor * icj;
                }
            }
        }
        if inv.data.iter().any(|x| !x.is_finite()) {
            return Err(Error::SingularMatrix);
        }
        Ok(inv)
    }

    /// Solves `X · B = A` for `X` (right division), i.e. `X = A B⁻¹`.
    pub fn right_divide(&self, b: &Self) -> Result<Self> {
        // X B = A  <=>  Bᵀ Xᵀ = Aᵀ
        let bt_inv = b.transpose().inverse()?;
        Ok((&bt_inv * &self.transpose()).transpose())
    }

    /// Symmetric eigenvalue lower bound check via Cholesky of `A + shift·I`.
    pub fn is_positive_semidefinite(&self, tol: S) -> bool {
        let n = self.n;
        let mut l = vec![S::zero(); n * n];
        let shifted = |i: usize, j: usize| {
            let v = self[(i, j)];
            if i == j {
                v + tol
            } else {
                v
            }
        };
        for i in 0..n {
            for j in 0..=i {
                let mut s = shifted(i, j);
                for k in 0..j {
                    s -= l[i * n + k] * l[j * n + k];
                }
                if i == j {
                    if s < S::zero() {
                        return false;
                    }
                    l[i * n + i] = s.sqrt();
                } else if l[j * n + j] > S::zero() {
                    l[i * n + j] = s / l[j * n + j];
                } else if s.abs() > tol {
                    return false;
                }
            }
        }
        true
    }

    fn swap_rows(&mut self, r: usize, s: usize) {
        for j in 0..self.n {
            self.data.swap(r * self.n + j, s * self.n + j);
        }
    }
}

impl<S> Index<(usize, usize)> for SquareMatrix<S> {
    type Output = S;
    #[inline]
    fn index(&self, (i, j): (usize, usize)) -> &S {
        &self.data[i * self.n + j]
    }
}

impl<S> IndexMut<(usize, usize)> for SquareMatrix<S> {
    #[inline]
    fn index_mut(&mut self, (i, j): (usize, usize)) -> &mut S {
        &mut self.data[i * self.n + j]
    }
}

impl<S: Real> Mul for &SquareMatrix<S> {
    type Output = SquareMatrix<S>;
    fn mul(self, rhs: Self) -> SquareMatrix<S> {
        assert_eq!(self.n, rhs.n, "matrix size mismatch");
        let n = self.n;
        let mut out = SquareMatrix::zeros(n);
        for i in 0..n {
            for k in 0..n {
                let a = self[(i, k)];
                if a == S::zero() {
                    continue;
                }
                for j in 0..n {
                    out[(i, j)] += a * rhs[(k, j)];
                }
            }
        }
        out
    }
}

impl<S: Real> Add for &SquareMatrix<S> {
    type Output = SquareMatrix<S>;
    fn add(self, rhs: Self) -> SquareMatrix<S> {
        assert_eq!(self.n, rhs.n, "matrix size mismatch");
        SquareMatrix {
            n: self.n,
            data: self.data.iter().zip(&rhs.data).map(|(&a, &b)| a + b).collect(),
        }
    }
}

impl<S: Real> Sub for &SquareMatrix<S> {
    type Output = SquareMatrix<S>;
    fn sub(self, rhs: Self) -> SquareMatrix<S> {
        assert_eq!(self.n, rhs.n, "matrix size mismatch");
        SquareMatrix {
            n: self.n,
            data: self.data.iter().zip(&rhs.data).map(|(&a, &b)| a - b).collect(),
        }
    }
}
