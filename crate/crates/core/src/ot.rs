//! Entropic optimal transport between two measures on the same grid.

use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::grid::DiscreteMeasure;
use crate::kernel::KernelOperator;
use crate::scalar::{compensated_sum, Real};

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct SinkhornOptions<S> {
    pub tol: S,
    pub max_iter: usize,
    /// Absorb large scalings into the kernel potentials instead of failing.
    pub log_domain: bool,
    pub absorb_threshold: S,
}

impl<S: Real> Default for SinkhornOptions<S> {
    fn default() -> Self {
        Self { tol: S::lit(1e-8), max_iter: 10_000, log_domain: true, absorb_threshold: S::lit(1e50) }
    }
}

/// Scalings and iteration history of a Sinkhorn solve.
#[derive(Clone, Debug, PartialEq)]
pub struct ScalingState<S> {
    /// Scalings relative to the kernel's absorbed potentials.
    pub a: Vec<S>,
    pub b: Vec<S>,
    /// Full dual potentials `f = α + ε log a`, `g = β + ε log b`.
    pub f: Vec<S>,
    pub g: Vec<S>,
    pub iterations: usize,
    /// L¹ marginal residual after each iteration.
    pub residuals: Vec<S>,
    pub converged: bool,
    pub absorptions: usize,
}

impl<S: Real> ScalingState<S> {
    pub fn residual(&self) -> S {
        self.residuals.last().copied().unwrap_or(S::infinity())
    }
}

/// Coupling between two grid measures.
#[derive(Clone, Debug, PartialEq)]
pub enum TransportPlan<S> {
    /// Row-major `M × M` entries.
    Dense { m: usize, values: Vec<S> },
    /// `π_ij = exp((f_i + g_j - c_ij)/ε)`.
    Factored { f: Vec<S>, g: Vec<S>, eps: S },
}

impl<S: Real> TransportPlan<S> {
    pub fn len(&self) -> usize {
        match self {
            TransportPlan::Dense { m, .. } => *m,
            TransportPlan::Factored { f, .. } => f.len(),
        }
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    #[inline]
    pub fn entry(&self, kernel: &KernelOperator<S>, i: usize, j: usize) -> S {
        match self {
            TransportPlan::Dense { m, values } => values[i * m + j],
            TransportPlan::Factored { f, g, eps } => ((f[i] + g[j] - kernel.cost(i, j)) / *eps).exp(),
        }
    }

    pub fn to_dense(&self, kernel: &KernelOperator<S>) -> Result<Self> {
        let m = self.checked_len(kernel)?;
        let mut values = vec![S::zero(); m * m];
        values.par_chunks_mut(m).enumerate().for_each(|(i, row)| {
            for (j, v) in row.iter_mut().enumerate() {
                *v = self.entry(kernel, i, j);
            }
        });
        Ok(TransportPlan::Dense { m, values })
    }

    /// Row sums `π𝟙` and column sums `πᵀ𝟙`.
    pub fn marginals(&self, kernel: &KernelOperator<S>) -> Result<(Vec<S>, Vec<S>)> {
        let m = self.checked_len(kernel)?;
        let rows = (0..m)
            .into_par_iter()
            .map(|i| compensated_sum((0..m).map(|j| self.entry(kernel, i, j))))
            .collect();
        let cols = (0..m)
            .into_par_iter()
            .map(|j| compensated_sum((0..m).map(|i| self.entry(kernel, i, j))))
            .collect();
        Ok((rows, cols))
    }

    pub fn total_mass(&self, kernel: &KernelOperator<S>) -> Result<S> {
        self.sum_entries(kernel, |_, p| p)
    }

    fn checked_len(&self, kernel: &KernelOperator<S>) -> Result<usize> {
        if self.len() != kernel.len() {
            return Err(Error::DimensionMismatch { expected: kernel.len(), got: self.len() });
        }
        Ok(self.len())
    }

    /// `Σ_ij term(c_ij, π_ij)`, summed row by row in a fixed order.
    fn sum_entries(&self, kernel: &KernelOperator<S>, term: impl Fn(S, S) -> S + Sync) -> Result<S> {
        let m = self.checked_len(kernel)?;
        let rows: Vec<S> = (0..m)
            .into_par_iter()
            .map(|i| compensated_sum((0..m).map(|j| term(kernel.cost(i, j), self.entry(kernel, i, j)))))
            .collect();
        Ok(compensated_sum(rows))
    }
}

/// `Σ c_ij π_ij`.
pub fn transport_cost<S: Real>(plan: &TransportPlan<S>, kernel: &KernelOperator<S>) -> Result<S> {
    plan.sum_entries(kernel, |c, p| c * p)
}

/// `Σ c_ij π_ij + ε π_ij log(π_ij / λ²)`.
pub fn regularized_cost<S: Real>(plan: &TransportPlan<S>, kernel: &KernelOperator<S>, lambda: S) -> Result<S> {
    let eps = kernel.epsilon();
    let log_l2 = (lambda * lambda).ln();
    plan.sum_entries(kernel, |c, p| c * p + eps * (p.xlogx() - p * log_l2))
}

/// `KL(π‖K) = Σ π log(π/K) - π + K` against the unabsorbed kernel
/// `K = exp(-c/ε)`. Returns `+∞` if `π > 0` where `K` vanishes.
pub fn kl_divergence<S: Real>(plan: &TransportPlan<S>, kernel: &KernelOperator<S>) -> Result<S> {
    let eps = kernel.epsilon();
    plan.sum_entries(kernel, |c, p| {
        let log_k = -c / eps;
        let k = log_k.exp();
        if p == S::zero() {
            k
        } else if log_k == S::neg_infinity() {
            S::infinity()
        } else {
            p * (p.ln() - log_k) - p + k
        }
    })
}

fn l1_residual<S: Real>(scale: &[S], product: &[S], target: &[S]) -> S {
    compensated_sum(
        scale
            .iter()
            .zip(product)
            .zip(target)
            .map(|((&s, &p), &t)| if s == S::zero() { t.abs() } else { (s * p - t).abs() }),
    )
}

/// Divides `target` by `product`; `None` if a product vanishes where the
/// target has mass.
fn divide<S: Real>(target: &[S], product: &[S], out: &mut [S]) -> bool {
    for ((o, &t), &p) in out.iter_mut().zip(target).zip(product) {
        if t == S::zero() {
            *o = S::zero();
        } else if p > S::zero() && p.is_finite() {
            *o = t / p;
            if !o.is_finite() {
                return false;
            }
        } else {
            return false;
        }
    }
    true
}

fn log_or_neg_inf<S: Real>(x: S) -> S {
    if x > S::zero() {
        x.ln()
    } else {
        S::neg_infinity()
    }
}

fn out_of_range<S: Real>(v: &[S], threshold: S) -> bool {
    v.iter().any(|&x| x > threshold || (x > S::zero() && x < S::one() / threshold))
}

/// Alternating scaling `a ← μ ⊘ (K b)`, `b ← ν ⊘ (Kᵀ a)` until the L¹ marginal
/// residual drops below `tol`. Running out of iterations is reported through
/// `converged = false`, not as an error.
pub fn sinkhorn<S: Real>(
    kernel: &mut KernelOperator<S>,
    mu: &DiscreteMeasure<S>,
    nu: &DiscreteMeasure<S>,
    opts: &SinkhornOptions<S>,
) -> Result<(TransportPlan<S>, ScalingState<S>)> {
    let m = kernel.len();
    for w in [mu, nu] {
        if w.weights().len() != m {
            return Err(Error::DimensionMismatch { expected: m, got: w.weights().len() });
        }
    }
    if !(opts.tol > S::zero()) {
        return Err(Error::InvalidParameter { name: "tol", reason: "must be positive".into() });
    }
    if opts.log_domain {
        kernel.balance();
    }
    let eps = kernel.epsilon();
    let (mu, nu) = (mu.weights(), nu.weights());
    let mut a = vec![S::one(); m];
    let mut b = vec![S::one(); m];
    let mut kb = vec![S::zero(); m];
    let mut kta = vec![S::zero(); m];
    let mut residuals = Vec::new();
    let mut absorptions = 0;
    let mut converged = false;
    let mut second = S::zero();
    let mut iteration = 0;

    loop {
        kernel.apply(&b, &mut kb)?;
        if iteration > 0 {
            let r = l1_residual(&a, &kb, mu).max(second);
            residuals.push(r);
            if r <= opts.tol {
                converged = true;
                break;
            }
        }
        if iteration == opts.max_iter {
            break;
        }
        iteration += 1;

        if !divide(mu, &kb, &mut a) {
            if !opts.log_domain {
                return Err(Error::Underflow { iteration });
            }
            let log_b: Vec<S> = b.iter().map(|&x| log_or_neg_inf(x)).collect();
            let mut log_kb = vec![S::zero(); m];
            kernel.log_apply(&log_b, &mut log_kb)?;
            let da: Vec<S> = mu.iter().zip(&log_kb).map(|(&t, &l)| eps * (log_or_neg_inf(t) - l)).collect();
            let db: Vec<S> = log_b.iter().map(|&l| eps * l).collect();
            kernel.absorb(&da, &db);
            absorptions += 1;
            reset_scalings(&mut a, mu);
            b.iter_mut().for_each(|x| *x = if *x > S::zero() { S::one() } else { S::zero() });
        }

        kernel.apply_transpose(&a, &mut kta)?;
        if !divide(nu, &kta, &mut b) {
            if !opts.log_domain {
                return Err(Error::Underflow { iteration });
            }
            let log_a: Vec<S> = a.iter().map(|&x| log_or_neg_inf(x)).collect();
            let mut log_kta = vec![S::zero(); m];
            kernel.log_apply_transpose(&log_a, &mut log_kta)?;
            let db: Vec<S> = nu.iter().zip(&log_kta).map(|(&t, &l)| eps * (log_or_neg_inf(t) - l)).collect();
            let da: Vec<S> = log_a.iter().map(|&l| eps * l).collect();
            kernel.absorb(&da, &db);
            absorptions += 1;
            reset_scalings(&mut b, nu);
            a.iter_mut().for_each(|x| *x = if *x > S::zero() { S::one() } else { S::zero() });
            kernel.apply_transpose(&a, &mut kta)?;
        }
        second = l1_residual(&b, &kta, nu);

        if out_of_range(&a, opts.absorb_threshold) || out_of_range(&b, opts.absorb_threshold) {
            if !opts.log_domain {
                return Err(Error::Underflow { iteration });
            }
            let da: Vec<S> = a.iter().map(|&x| eps * log_or_neg_inf(x)).collect();
            let db: Vec<S> = b.iter().map(|&x| eps * log_or_neg_inf(x)).collect();
            kernel.absorb(&da, &db);
            absorptions += 1;
            reset_scalings(&mut a, mu);
            reset_scalings(&mut b, nu);
        }
    }

    let f: Vec<S> = kernel.alpha().iter().zip(&a).map(|(&al, &x)| al + eps * log_or_neg_inf(x)).collect();
    let g: Vec<S> = kernel.beta().iter().zip(&b).map(|(&be, &x)| be + eps * log_or_neg_inf(x)).collect();
    let plan = TransportPlan::Factored { f: f.clone(), g: g.clone(), eps };
    let state = ScalingState { a, b, f, g, iterations: iteration, residuals, converged, absorptions };
    Ok((plan, state))
}

fn reset_scalings<S: Real>(s: &mut [S], target: &[S]) {
    for (x, &t) in s.iter_mut().zip(target) {
        *x = if t > S::zero() { S::one() } else { S::zero() };
    }
}
