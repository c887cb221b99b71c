//! Gibbs kernel `K_ij = exp(-c(x_i, x_j)/ε)` on a grid, with optional
//! absorbed log-potentials so that the stored entries are
//! `exp((α_i + β_j - c_ij)/ε)`.

use rayon::prelude::*;

use crate::cost::{CostSpec, TransportCost};
use crate::error::{Error, Result};
use crate::grid::UniformGrid;
use crate::scalar::Real;

/// Width of the column blocks used by transposed products.
const COLUMN_BLOCK: usize = 128;

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub enum KernelMode {
    /// Explicit `M × M` cost and kernel matrices.
    #[default]
    Dense,
    /// Entries regenerated from the cost on every product.
    MatrixFree,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct KernelOptions {
    pub mode: KernelMode,
    /// Rows per parallel tile.
    pub tile_rows: usize,
    /// Upper bound in bytes for the dense cost and kernel caches together.
    pub memory_budget: usize,
}

impl Default for KernelOptions {
    fn default() -> Self {
        Self { mode: KernelMode::Dense, tile_rows: 1024, memory_budget: 1 << 30 }
    }
}

impl KernelOptions {
    pub fn dense() -> Self {
        Self::default()
    }

    pub fn matrix_free() -> Self {
        Self { mode: KernelMode::MatrixFree, ..Self::default() }
    }
}

/// Square Gibbs kernel acting on vectors indexed by grid points.
#[derive(Clone, Debug)]
pub struct KernelOperator<S> {
    coords: Vec<S>,
    dim: usize,
    m: usize,
    cost: TransportCost<S>,
    eps: S,
    options: KernelOptions,
    cost_cache: Option<Vec<S>>,
    kernel: Option<Vec<S>>,
    alpha: Vec<S>,
    beta: Vec<S>,
}

/// Builds the kernel of `cost` on the points of `grid`.
pub fn gibbs_kernel<S: Real>(cost: &CostSpec<S>, grid: &UniformGrid<S>, eps: S, options: KernelOptions) -> Result<KernelOperator<S>> {
    if cost.dim() != grid.dim() {
        return Err(Error::DimensionMismatch { expected: grid.dim(), got: cost.dim() });
    }
    KernelOperator::new(cost.compile()?, grid.coordinates(), grid.dim(), eps, options)
}

impl<S: Real> KernelOperator<S> {
    /// `coords` holds `M` points of dimension `dim`, stored contiguously.
    pub fn new(cost: TransportCost<S>, coords: Vec<S>, dim: usize, eps: S, options: KernelOptions) -> Result<Self> {
        if !(eps > S::zero() && eps.is_finite()) {
            return Err(Error::InvalidParameter { name: "epsilon", reason: format!("must be positive and finite, got {eps}") });
        }
        if dim == 0 || cost.dim() != dim || coords.len() % dim != 0 {
            return Err(Error::DimensionMismatch { expected: cost.dim(), got: dim });
        }
        if options.tile_rows == 0 {
            return Err(Error::InvalidParameter { name: "tile_rows", reason: "must be ≥ 1".into() });
        }
        let m = coords.len() / dim;
        let mut op = Self {
            coords,
            dim,
            m,
            cost,
            eps,
            options,
            cost_cache: None,
            kernel: None,
            alpha: vec![S::zero(); m],
            beta: vec![S::zero(); m],
        };
        if options.mode == KernelMode::Dense {
            let needed = 2usize.saturating_mul(m).saturating_mul(m).saturating_mul(std::mem::size_of::<S>());
            if needed > options.memory_budget {
                return Err(Error::MemoryBudget { needed, budget: options.memory_budget });
            }
            op.build_cost_cache();
            op.rebuild();
        }
        Ok(op)
    }

    #[inline]
    pub fn len(&self) -> usize {
        self.m
    }

    pub fn is_empty(&self) -> bool {
        self.m == 0
    }

    pub fn epsilon(&self) -> S {
        self.eps
    }

    pub fn mode(&self) -> KernelMode {
        self.options.mode
    }

    pub fn options(&self) -> KernelOptions {
        self.options
    }

    pub fn transport_cost(&self) -> &TransportCost<S> {
        &self.cost
    }

    /// Absorbed row potentials `α`.
    pub fn alpha(&self) -> &[S] {
        &self.alpha
    }

    /// Absorbed column potentials `β`.
    pub fn beta(&self) -> &[S] {
        &self.beta
    }

    #[inline]
    fn point(&self, i: usize) -> &[S] {
        &self.coords[i * self.dim..(i + 1) * self.dim]
    }

    /// `c(x_i, x_j)`.
    #[inline]
    pub fn cost(&self, i: usize, j: usize) -> S {
        match &self.cost_cache {
            Some(c) => c[i * self.m + j],
            None => self.cost.eval(self.point(i), self.point(j)),
        }
    }

    pub fn cost_row(&self, i: usize, out: &mut [S]) {
        for (j, o) in out.iter_mut().enumerate().take(self.m) {
            *o = self.cost(i, j);
        }
    }

    #[inline]
    fn exponent(&self, i: usize, j: usize, c: S) -> S {
        ((self.alpha[i] + self.beta[j]) - c) / self.eps
    }

    /// Stored (absorbed) entry `exp((α_i + β_j - c_ij)/ε)`.
    #[inline]
    pub fn entry(&self, i: usize, j: usize) -> S {
        match &self.kernel {
            Some(k) => k[i * self.m + j],
            None => self.exponent(i, j, self.cost(i, j)).exp(),
        }
    }

    fn build_cost_cache(&mut self) {
        let m = self.m;
        let mut c = vec![S::zero(); m * m];
        let this = &*self;
        c.par_chunks_mut(m).enumerate().for_each(|(i, row)| {
            let xi = this.point(i);
            for (j, v) in row.iter_mut().enumerate() {
                *v = this.cost.eval(xi, this.point(j));
            }
        });
        self.cost_cache = Some(c);
    }

    /// Recomputes the dense kernel after the potentials changed.
    fn rebuild(&mut self) {
        let Some(costs) = &self.cost_cache else { return };
        let m = self.m;
        let mut k = self.kernel.take().unwrap_or_else(|| vec![S::zero(); m * m]);
        let (alpha, beta, eps) = (&self.alpha, &self.beta, self.eps);
        k.par_chunks_mut(m).zip(costs.par_chunks(m)).enumerate().for_each(|(i, (krow, crow))| {
            for j in 0..m {
                krow[j] = (((alpha[i] + beta[j]) - crow[j]) / eps).exp();
            }
        });
        self.kernel = Some(k);
    }

    /// Adds `da`, `db` to the absorbed potentials. Non-finite increments are
    /// skipped (they come from zero scalings).
    pub fn absorb(&mut self, da: &[S], db: &[S]) {
        for (a, &d) in self.alpha.iter_mut().zip(da) {
            if d.is_finite() {
                *a += d;
            }
        }
        for (b, &d) in self.beta.iter_mut().zip(db) {
            if d.is_finite() {
                *b += d;
            }
        }
        self.rebuild();
    }

    /// Replaces the absorbed potentials.
    pub fn set_potentials(&mut self, alpha: &[S], beta: &[S]) -> Result<()> {
        if alpha.len() != self.m || beta.len() != self.m {
            return Err(Error::DimensionMismatch { expected: self.m, got: alpha.len().min(beta.len()) });
        }
        self.alpha.copy_from_slice(alpha);
        self.beta.copy_from_slice(beta);
        self.rebuild();
        Ok(())
    }

    pub fn reset_potentials(&mut self) {
        self.alpha.iter_mut().for_each(|a| *a = S::zero());
        self.beta.iter_mut().for_each(|b| *b = S::zero());
        self.rebuild();
    }

    /// Sets `α_i = min_j c_ij`, then `β_j = min_i (c_ij - α_i)`, so every row
    /// and every column of the stored kernel has maximum entry 1.
    pub fn balance(&mut self) {
        let m = self.m;
        let this = &*self;
        let alpha: Vec<S> = (0..m)
            .into_par_iter()
            .map(|i| (0..m).fold(S::infinity(), |acc, j| acc.min(this.cost(i, j))))
            .collect();
        let beta: Vec<S> = (0..m)
            .into_par_iter()
            .map(|j| (0..m).fold(S::infinity(), |acc, i| acc.min(this.cost(i, j) - alpha[i])))
            .collect();
        self.alpha = alpha;
        self.beta = beta;
        self.rebuild();
    }

    fn check_len(&self, v: &[S], out: &[S]) -> Result<()> {
        if v.len() != self.m {
            return Err(Error::DimensionMismatch { expected: self.m, got: v.len() });
        }
        if out.len() != self.m {
            return Err(Error::DimensionMismatch { expected: self.m, got: out.len() });
        }
        Ok(())
    }

    /// `out = K v`. Zero entries of `v` are skipped, so infinite kernel entries
    /// in unused columns do not poison the product.
    pub fn apply(&self, v: &[S], out: &mut [S]) -> Result<()> {
        self.check_len(v, out)?;
        let m = self.m;
        let tile = self.options.tile_rows;
        out.par_chunks_mut(tile).enumerate().for_each(|(t, chunk)| {
            for (r, o) in chunk.iter_mut().enumerate() {
                let i = t * tile + r;
                let mut acc = S::zero();
                match &self.kernel {
                    Some(k) => {
                        for (kij, &vj) in k[i * m..(i + 1) * m].iter().zip(v) {
                            if vj != S::zero() {
                                acc += *kij * vj;
                            }
                        }
                    }
                    None => {
                        let xi = self.point(i);
                        for (j, &vj) in v.iter().enumerate() {
                            if vj == S::zero() {
                                continue;
                            }
                            let c = self.cost.eval(xi, self.point(j));
                            acc += self.exponent(i, j, c).exp() * vj;
                        }
                    }
                }
                *o = acc;
            }
        });
        Ok(())
    }

    /// `out = Kᵀ u`.
    pub fn apply_transpose(&self, u: &[S], out: &mut [S]) -> Result<()> {
        self.check_len(u, out)?;
        let m = self.m;
        out.par_chunks_mut(COLUMN_BLOCK).enumerate().for_each(|(b, chunk)| {
            let j0 = b * COLUMN_BLOCK;
            chunk.iter_mut().for_each(|o| *o = S::zero());
            match &self.kernel {
                Some(k) => {
                    for (i, &ui) in u.iter().enumerate() {
                        if ui == S::zero() {
                            continue;
                        }
                        let row = &k[i * m + j0..i * m + j0 + chunk.len()];
                        for (o, &kij) in chunk.iter_mut().zip(row) {
                            *o += kij * ui;
                        }
                    }
                }
                None => {
                    for (i, &ui) in u.iter().enumerate() {
                        if ui == S::zero() {
                            continue;
                        }
                        let xi = self.point(i);
                        for (r, o) in chunk.iter_mut().enumerate() {
                            let j = j0 + r;
                            let c = self.cost.eval(xi, self.point(j));
                            *o += self.exponent(i, j, c).exp() * ui;
                        }
                    }
                }
            }
        });
        Ok(())
    }

    /// `out_i = log Σ_j exp((α_i + β_j - c_ij)/ε + log_v_j)`, evaluated
    /// without forming the exponentials.
    pub fn log_apply(&self, log_v: &[S], out: &mut [S]) -> Result<()> {
        self.check_len(log_v, out)?;
        let tile = self.options.tile_rows;
        out.par_chunks_mut(tile).enumerate().for_each(|(t, chunk)| {
            for (r, o) in chunk.iter_mut().enumerate() {
                let i = t * tile + r;
                let mut acc = OnlineLse::new();
                for (j, &lv) in log_v.iter().enumerate() {
                    acc.push(self.exponent(i, j, self.cost(i, j)) + lv);
                }
                *o = acc.finish();
            }
        });
        Ok(())
    }

    /// Transposed counterpart of [`log_apply`](Self::log_apply).
    pub fn log_apply_transpose(&self, log_u: &[S], out: &mut [S]) -> Result<()> {
        self.check_len(log_u, out)?;
        out.par_iter_mut().enumerate().for_each(|(j, o)| {
            let mut acc = OnlineLse::new();
            for (i, &lu) in log_u.iter().enumerate() {
                acc.push(self.exponent(i, j, self.cost(i, j)) + lu);
            }
            *o = acc.finish();
        });
        Ok(())
    }
}

/// Streaming log-sum-exp with a running maximum.
#[derive(Clone, Copy, Debug)]
pub(crate) struct OnlineLse<S> {
    max: S,
    sum: S,
}

impl<S: Real> OnlineLse<S> {
    pub(crate) fn new() -> Self {
        Self { max: S::neg_infinity(), sum: S::zero() }
    }

    #[inline]
    pub(crate) fn push(&mut self, z: S) {
        if z == S::neg_infinity() || z.is_nan() {
            return;
        }
        if z > self.max {
            self.sum = self.sum * (self.max - z).exp() + S::one();
            self.max = z;
        } else {
            self.sum += (z - self.max).exp();
        }
    }

    pub(crate) fn finish(self) -> S {
        if self.max == S::neg_infinity() {
            S::neg_infinity()
        } else {
            self.max + self.sum.ln()
        }
    }
}
