//! Matrix algebra behind the mean-squared-derivative cost of an `n`-chain
//! `dξ_1 = ξ_2 dt, …, dξ_n = -∇f dt + √2 dW`.
//!
//! All matrices here are stored as scalar `n × n` matrices; the physical
//! operators act blockwise on `ℝ^{n·d̃}`, i.e. every entry multiplies the
//! `d̃`-dimensional identity (see [`SquareMatrix::kron_identity`]).

use crate::error::{Error, Result};
use crate::linalg::SquareMatrix;
use crate::scalar::Real;

/// Longest chain for which the integer matrices invert accurately in `f64`.
pub const MAX_CHAIN_LENGTH: usize = 8;

fn factorial(k: usize) -> f64 {
    (1..=k).fold(1.0, |acc, j| acc * j as f64)
}

fn binomial(n: usize, k: usize) -> f64 {
    if k > n {
        return 0.0;
    }
    (0..k).fold(1.0, |acc, j| acc * (n - j) as f64 / (j + 1) as f64).round()
}

/// Matrices `M₁, M₂, M = M₁M₂⁻¹, J₁(h), J₂(h), J = J₂⁻¹J₁, K_h, D, Q` for a
/// chain of length `n`.
#[derive(Clone, Debug)]
pub struct MsdMatrices<S> {
    n: usize,
    block_dim: usize,
    h: S,
    pub m1: SquareMatrix<S>,
    pub m2: SquareMatrix<S>,
    pub m: SquareMatrix<S>,
    pub j1: SquareMatrix<S>,
    pub j2: SquareMatrix<S>,
    /// `J` from its closed form `(-1)^{j-i} h^{j-i}/(j-i)!`.
    pub j: SquareMatrix<S>,
    /// `K_h` from its closed form `(-1)^{n-j} h^{2n-i-j}/(2n-i-j+1)!`.
    pub k_h: SquareMatrix<S>,
    pub d: SquareMatrix<S>,
    pub q: SquareMatrix<S>,
    /// `h^{j-i}/(j-i)!` for `j ≥ i` (flow-forward coefficients).
    flow: SquareMatrix<S>,
    /// `h^{i-1}`.
    row_scale: Vec<S>,
    /// `h^{2-2n}`.
    prefactor: S,
}

impl<S: Real> MsdMatrices<S> {
    pub fn new(n: usize, block_dim: usize, h: S) -> Result<Self> {
        if n == 0 || n > MAX_CHAIN_LENGTH {
            return Err(Error::ChainLengthUnsupported(n));
        }
        if block_dim == 0 {
            return Err(Error::InvalidParameter { name: "block_dim", reason: "must be ≥ 1".into() });
        }
        if !(h > S::zero() && h.is_finite()) {
            return Err(Error::InvalidParameter { name: "h", reason: format!("must be positive, got {h}") });
        }
        let lit = S::lit;
        let hp = |k: i32| h.powi(k);

        // 1-based (k, i) in the formulas, 0-based storage.
        let m1 = SquareMatrix::from_fn(n, |r, c| {
            let (k, i) = (r + 1, c + 1);
            if k + i >= n + 1 {
                let sign = if (n - k) % 2 == 0 { 1.0 } else { -1.0 };
                lit(sign * factorial(n + i - 1) / factorial(k + i - n - 1))
            } else {
                S::zero()
            }
        });
        // row r: r!·C(n + c, r) for columns c = 0..n-1 (binomials from n to 2n-1)
        let m2 = SquareMatrix::from_fn(n, |r, c| lit(factorial(r) * binomial(n + c, r)));
        let m = m1.right_divide(&m2)?;

        let j1 = SquareMatrix::diagonal(&(0..n).map(|i| hp(i as i32)).collect::<Vec<_>>());
        let j2 = SquareMatrix::from_fn(n, |i, j| {
            if j >= i {
                hp(j as i32) / lit(factorial(j - i))
            } else {
                S::zero()
            }
        });
        let j = SquareMatrix::from_fn(n, |i, jj| {
            if jj >= i {
                let sign = if (jj - i) % 2 == 0 { S::one() } else { -S::one() };
                sign * hp((jj - i) as i32) / lit(factorial(jj - i))
            } else {
                S::zero()
            }
        });
        let k_h = SquareMatrix::from_fn(n, |r, c| {
            let (i, jj) = (r + 1, c + 1);
            let sign = if (n - jj) % 2 == 0 { S::one() } else { -S::one() };
            let e = 2 * n - i - jj;
            sign * hp(e as i32) / lit(factorial(e + 1))
        });
        let mut d = SquareMatrix::zeros(n);
        d[(n - 1, n - 1)] = S::one();
        let q = SquareMatrix::from_fn(n, |i, j| if i == j + 1 { S::one() } else { S::zero() });
        let flow = SquareMatrix::from_fn(n, |i, j| {
            if j >= i {
                hp((j - i) as i32) / lit(factorial(j - i))
            } else {
                S::zero()
            }
        });
        let row_scale = (0..n).map(|i| hp(i as i32)).collect();
        let prefactor = hp(2 - 2 * n as i32);
        Ok(Self { n, block_dim, h, m1, m2, m, j1, j2, j, k_h, d, q, flow, row_scale, prefactor })
    }

    pub fn chain_length(&self) -> usize {
        self.n
    }

    pub fn block_dim(&self) -> usize {
        self.block_dim
    }

    pub fn h(&self) -> S {
        self.h
    }

    /// Dimension `n·d̃` of the state space.
    pub fn state_dim(&self) -> usize {
        self.n * self.block_dim
    }

    /// Entrywise `d/dh` of `J₁`.
    pub fn j1_prime(&self) -> SquareMatrix<S> {
        let h = self.h;
        SquareMatrix::from_fn(self.n, |i, j| {
            if i == j && i > 0 {
                S::from_usize_lossy(i) * h.powi(i as i32 - 1)
            } else {
                S::zero()
            }
        })
    }

    /// Entrywise `d/dh` of `J₂`.
    pub fn j2_prime(&self) -> SquareMatrix<S> {
        let h = self.h;
        SquareMatrix::from_fn(self.n, |i, j| {
            if j >= i && j > 0 {
                S::from_usize_lossy(j) * h.powi(j as i32 - 1) / S::lit(factorial(j - i))
            } else {
                S::zero()
            }
        })
    }

    /// `J₀ = h^{2-2n} J₂ D J₂ᵀ`.
    pub fn j0(&self) -> SquareMatrix<S> {
        (&(&self.j2 * &self.d) * &self.j2.transpose()).scale(self.prefactor)
    }

    /// `T₁ = (2n-1) J₁ᵀMJ₁ - 2h (J₁')ᵀMJ₁ - h^{2-2n} J₁ᵀMJ₂DJ₂ᵀMJ₁`.
    pub fn t1(&self) -> SquareMatrix<S> {
        let (m, j1, j2) = (&self.m, &self.j1, &self.j2);
        let two_n_minus_1 = S::from_usize_lossy(2 * self.n - 1);
        let mj1 = m * j1;
        let a = (&j1.transpose() * &mj1).scale(two_n_minus_1);
        let b = (&self.j1_prime().transpose() * &mj1).scale(S::lit(2.0) * self.h);
        let c = &(&(&(&j1.transpose() * m) * j2) * &self.d) * &(&j2.transpose() * &mj1);
        &(&a - &b) - &c.scale(self.prefactor)
    }

    /// `T₂ = (1-2n) J₂ᵀMJ₁ + h((J₂')ᵀMJ₁ + J₂ᵀMJ₁') - h Q J₂ᵀMJ₁ + J₂ᵀ M J₀ M J₁`.
    pub fn t2(&self) -> SquareMatrix<S> {
        let (m, j1, j2, h) = (&self.m, &self.j1, &self.j2, self.h);
        let j2t = j2.transpose();
        let mj1 = m * j1;
        let base = &j2t * &mj1;
        let a = base.scale(S::one() - S::from_usize_lossy(2 * self.n));
        let b = &(&self.j2_prime().transpose() * &mj1) + &(&(&j2t * m) * &self.j1_prime());
        let c = &self.q * &base;
        let d = &(&(&j2t * m) * &self.j0()) * &mj1;
        &(&(&a + &b.scale(h)) - &c.scale(h)) + &d
    }

    /// `T₃ = (2n-1) J₂ᵀMJ₂ - 2h (J₂')ᵀMJ₂ + 2h Q J₂ᵀMJ₂ - h^{2-2n} J₂ᵀMJ₂DJ₂ᵀMJ₂`.
    pub fn t3(&self) -> SquareMatrix<S> {
        let (m, j2, h) = (&self.m, &self.j2, self.h);
        let j2t = j2.transpose();
        let base = &(&j2t * m) * j2;
        let a = base.scale(S::from_usize_lossy(2 * self.n - 1));
        let b = (&(&self.j2_prime().transpose() * m) * j2).scale(S::lit(2.0) * h);
        let c = (&self.q * &base).scale(S::lit(2.0) * h);
        let d = (&(&base * &self.d) * &base).scale(self.prefactor);
        &(&(&a - &b) + &c) - &d
    }

    /// `J₂⁻¹ J₁`, to compare with the closed form [`j`](Self::j).
    pub fn j_via_inverse(&self) -> Result<SquareMatrix<S>> {
        Ok(&self.j2.inverse()? * &self.j1)
    }

    /// `h^{2n-2} (J₂ᵀ M J₁)⁻¹`, to compare with the closed form [`k_h`](Self::k_h).
    pub fn k_h_via_inverse(&self) -> Result<SquareMatrix<S>> {
        let inner = &(&self.j2.transpose() * &self.m) * &self.j1;
        Ok(inner.inverse()?.scale(self.h.powi(2 * self.n as i32 - 2)))
    }

    /// `(Tr(D J₂ᵀ M J₂) · d̃, n² d̃ h^{2(n-1)})` for the block operators.
    pub fn trace_identity(&self) -> (S, S) {
        let lhs = (&(&(&self.d * &self.j2.transpose()) * &self.m) * &self.j2).trace();
        let bd = S::from_usize_lossy(self.block_dim);
        let n = S::from_usize_lossy(self.n);
        (lhs * bd, n * n * bd * self.h.powi(2 * (self.n as i32 - 1)))
    }

    /// `b(h, x, y)` with blocks `h^{i-1}(y_i - Σ_{j≥i} h^{j-i}/(j-i)! x_j)`.
    pub fn b_vector(&self, x: &[S], y: &[S]) -> Result<Vec<S>> {
        self.check_dims(x, y)?;
        let mut b = vec![S::zero(); self.state_dim()];
        self.b_into(x, y, &mut b);
        Ok(b)
    }

    fn b_into(&self, x: &[S], y: &[S], b: &mut [S]) {
        let dd = self.block_dim;
        for i in 0..self.n {
            for c in 0..dd {
                let mut acc = y[i * dd + c];
                for j in i..self.n {
                    acc -= self.flow[(i, j)] * x[j * dd + c];
                }
                b[i * dd + c] = self.row_scale[i] * acc;
            }
        }
    }

    /// `y_i = Σ_{j≥i} h^{j-i}/(j-i)! x_j`: the noiseless flow of `x` over `h`.
    pub fn flow_forward(&self, x: &[S]) -> Vec<S> {
        let dd = self.block_dim;
        let mut y = vec![S::zero(); x.len()];
        for i in 0..self.n {
            for c in 0..dd {
                y[i * dd + c] = (i..self.n).map(|j| self.flow[(i, j)] * x[j * dd + c]).sum();
            }
        }
        y
    }

    /// `c_h(x, y) = h^{2-2n} bᵀ M b`.
    pub fn cost(&self, x: &[S], y: &[S]) -> Result<S> {
        self.check_dims(x, y)?;
        Ok(self.cost_unchecked(x, y))
    }

    pub(crate) fn cost_unchecked(&self, x: &[S], y: &[S]) -> S {
        let dd = self.block_dim;
        // n·d̃ ≤ small; stack buffer avoided for generic S
        let mut b = [S::zero(); 64];
        let len = self.state_dim();
        if len <= 64 {
            self.b_into(x, y, &mut b[..len]);
            self.form(&b[..len], dd)
        } else {
            let mut v = vec![S::zero(); len];
            self.b_into(x, y, &mut v);
            self.form(&v, dd)
        }
    }

    fn form(&self, b: &[S], dd: usize) -> S {
        let mut acc = S::zero();
        for k in 0..self.n {
            for l in 0..self.n {
                let mkl = self.m[(k, l)];
                let mut dot = S::zero();
                for c in 0..dd {
                    dot += b[k * dd + c] * b[l * dd + c];
                }
                acc += mkl * dot;
            }
        }
        (self.prefactor * acc).max(S::zero())
    }

    fn check_dims(&self, x: &[S], y: &[S]) -> Result<()> {
        let expected = self.state_dim();
        for v in [x, y] {
            if v.len() != expected {
                return Err(Error::DimensionMismatch { expected, got: v.len() });
            }
        }
        Ok(())
    }
}
