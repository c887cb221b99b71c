//! Entropic JKO time stepping.
//!
//! Each step minimises `(1/2h) W̄_ε(ρⁿ⁻¹, ρ) + F̄(ρ)` over `ρ` by alternating a
//! hard projection on the first marginal with a KL-proximal step on the
//! second. The loop runs on the log-potential `g` of the second marginal and
//! is accelerated with Anderson mixing.

use std::collections::VecDeque;
use std::sync::Arc;

use log::{debug, info, warn};
use thiserror::Error as ThisError;

use crate::cost::CostSpec;
use crate::energy::FreeEnergySpec;
use crate::error::{Error, Result};
use crate::grid::{DiscreteMeasure, UniformGrid};
use crate::kernel::{gibbs_kernel, KernelOperator, KernelOptions};
use crate::linalg::SquareMatrix;
use crate::ot::{regularized_cost, TransportPlan};
use crate::scalar::{compensated_sum, Real};

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct InnerOptions<S> {
    /// Bound on both the first-marginal L¹ residual and the relative change
    /// of the second scaling.
    pub tol: S,
    pub max_iter: usize,
    /// Number of past iterates used for Anderson mixing; 0 disables it.
    pub anderson_depth: usize,
    pub log_domain: bool,
    pub absorb_threshold: S,
}

impl<S: Real> Default for InnerOptions<S> {
    fn default() -> Self {
        Self { tol: S::lit(1e-8), max_iter: 20_000, anderson_depth: 5, log_domain: true, absorb_threshold: S::lit(1e50) }
    }
}

/// Time step, regularisation and horizon of a run.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct SchemeConfig<S> {
    pub h: S,
    pub eps: S,
    pub steps: usize,
    pub inner: InnerOptions<S>,
    pub kernel: KernelOptions,
}

impl<S: Real> SchemeConfig<S> {
    /// `N = round(T/h)`; rejects horizons that are not a multiple of `h`.
    pub fn new(h: S, eps: S, horizon: S) -> Result<Self> {
        for (name, v) in [("h", h), ("epsilon", eps)] {
            if !(v > S::zero() && v.is_finite()) {
                return Err(Error::InvalidParameter { name, reason: format!("must be positive, got {v}") });
            }
        }
        if !(horizon >= S::zero() && horizon.is_finite()) {
            return Err(Error::InvalidParameter { name: "T", reason: format!("must be nonnegative, got {horizon}") });
        }
        let n = (horizon / h).round();
        if (n * h - horizon).abs() > S::lit(1e-9) * S::one().max(horizon) {
            return Err(Error::InvalidParameter { name: "T", reason: format!("{horizon} is not a multiple of h = {h}") });
        }
        let steps = n.to_usize().ok_or_else(|| Error::InvalidParameter { name: "T", reason: "too many steps".into() })?;
        Ok(Self { h, eps, steps, inner: InnerOptions::default(), kernel: KernelOptions::default() })
    }

    pub fn with_inner(mut self, inner: InnerOptions<S>) -> Self {
        self.inner = inner;
        self
    }

    pub fn with_kernel(mut self, kernel: KernelOptions) -> Self {
        self.kernel = kernel;
        self
    }

    pub fn horizon(&self) -> S {
        self.h * S::from_usize_lossy(self.steps)
    }

    /// `ε |log ε| / h²`.
    pub fn scaling_ratio(&self) -> S {
        self.eps * self.eps.ln().abs() / (self.h * self.h)
    }
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct StepDiagnostics<S> {
    pub inner_iterations: usize,
    /// `‖a ⊙ K b - ρⁿ⁻¹‖₁` at exit.
    pub residual: S,
    /// `Σ_j ρ_j |b_j^new / b_j - 1|` at exit.
    pub scaling_change: S,
    /// `|Σ ρ - 1|` before renormalisation.
    pub mass_drift: S,
    /// `W̄_ε(ρⁿ⁻¹, ρⁿ)` of the returned plan.
    pub transport_objective: S,
    pub absorptions: usize,
}

/// Result of one step: the new iterate, the plan potentials and diagnostics.
#[derive(Clone, Debug)]
pub struct JkoStep<S> {
    pub rho: DiscreteMeasure<S>,
    pub f: Vec<S>,
    pub g: Vec<S>,
    pub diagnostics: StepDiagnostics<S>,
}

impl<S: Real> JkoStep<S> {
    pub fn plan(&self, eps: S) -> TransportPlan<S> {
        TransportPlan::Factored { f: self.f.clone(), g: self.g.clone(), eps }
    }
}

struct Anderson<S> {
    depth: usize,
    xs: VecDeque<Vec<S>>,
    rs: VecDeque<Vec<S>>,
}

impl<S: Real> Anderson<S> {
    fn new(depth: usize) -> Self {
        Self { depth, xs: VecDeque::new(), rs: VecDeque::new() }
    }

    fn clear(&mut self) {
        self.xs.clear();
        self.rs.clear();
    }

    /// Next iterate given `x` and its image `gx`.
    fn mix(&mut self, x: &[S], gx: &[S]) -> Vec<S> {
        if self.depth == 0 {
            return gx.to_vec();
        }
        let r: Vec<S> = gx.iter().zip(x).map(|(&a, &b)| a - b).collect();
        self.xs.push_back(x.to_vec());
        self.rs.push_back(r.clone());
        if self.xs.len() > self.depth + 1 {
            self.xs.pop_front();
            self.rs.pop_front();
        }
        let k = self.xs.len() - 1;
        if k == 0 {
            return gx.to_vec();
        }
        let df: Vec<Vec<S>> = (0..k).map(|i| diff(&self.rs[i + 1], &self.rs[i])).collect();
        let dx: Vec<Vec<S>> = (0..k).map(|i| diff(&self.xs[i + 1], &self.xs[i])).collect();
        let mut gram = SquareMatrix::from_fn(k, |i, j| dot(&df[i], &df[j]));
        let shift = S::lit(1e-12) * (0..k).fold(S::zero(), |m, i| m.max(gram[(i, i)]));
        for i in 0..k {
            gram[(i, i)] += shift;
        }
        let rhs: Vec<S> = df.iter().map(|d| dot(d, &r)).collect();
        let gamma = match gram.inverse() {
            Ok(inv) => inv.mul_vec(&rhs),
            Err(_) => {
                self.clear();
                return gx.to_vec();
            }
        };
        let mut out = gx.to_vec();
        for (i, &c) in gamma.iter().enumerate() {
            for ((o, &a), &b) in out.iter_mut().zip(&dx[i]).zip(&df[i]) {
                *o -= c * (a + b);
            }
        }
        if out.iter().any(|v| !v.is_finite()) {
            self.clear();
            return gx.to_vec();
        }
        out
    }
}

fn diff<S: Real>(a: &[S], b: &[S]) -> Vec<S> {
    a.iter().zip(b).map(|(&x, &y)| x - y).collect()
}

fn dot<S: Real>(a: &[S], b: &[S]) -> S {
    a.iter().zip(b).fold(S::zero(), |acc, (&x, &y)| acc + x * y)
}

fn ln_or_neg_inf<S: Real>(x: S) -> S {
    if x > S::zero() {
        x.ln()
    } else {
        S::neg_infinity()
    }
}

/// Scalings `exp((pot - shift)/ε)`, absorbing `pot` into the kernel first
/// when they would leave `[1/threshold, threshold]`.
fn scalings<S: Real>(
    kernel: &mut KernelOperator<S>,
    pot: &[S],
    rows: bool,
    opts: &InnerOptions<S>,
    absorptions: &mut usize,
    iteration: usize,
) -> Result<Vec<S>> {
    let eps = kernel.epsilon();
    let limit = opts.absorb_threshold.ln();
    let shift = if rows { kernel.alpha() } else { kernel.beta() };
    let exceeds = pot.iter().zip(shift).any(|(&p, &s)| p.is_finite() && ((p - s) / eps).abs() > limit);
    if exceeds {
        if !opts.log_domain {
            return Err(Error::Underflow { iteration });
        }
        let delta: Vec<S> = pot.iter().zip(shift).map(|(&p, &s)| p - s).collect();
        let zeros = vec![S::zero(); delta.len()];
        if rows {
            kernel.absorb(&delta, &zeros);
        } else {
            kernel.absorb(&zeros, &delta);
        }
        *absorptions += 1;
    }
    let shift = if rows { kernel.alpha() } else { kernel.beta() };
    Ok(pot
        .iter()
        .zip(shift)
        .map(|(&p, &s)| if p == S::neg_infinity() { S::zero() } else { ((p - s) / eps).exp() })
        .collect())
}

/// Logarithm of `K v` (or `Kᵀ v`), with a log-sum-exp fallback when the
/// plain product underflows on an entry that matters.
fn log_product<S: Real>(
    kernel: &KernelOperator<S>,
    v: &[S],
    transpose: bool,
    needed: impl Fn(usize) -> bool,
    log_domain: bool,
    iteration: usize,
) -> Result<Vec<S>> {
    let m = kernel.len();
    let mut out = vec![S::zero(); m];
    if transpose {
        kernel.apply_transpose(v, &mut out)?;
    } else {
        kernel.apply(v, &mut out)?;
    }
    let bad = out.iter().enumerate().any(|(i, &x)| needed(i) && !(x > S::zero() && x.is_finite()));
    if !bad {
        return Ok(out.into_iter().map(ln_or_neg_inf).collect());
    }
    if !log_domain {
        return Err(Error::Underflow { iteration });
    }
    let log_v: Vec<S> = v.iter().map(|&x| ln_or_neg_inf(x)).collect();
    if transpose {
        kernel.log_apply_transpose(&log_v, &mut out)?;
    } else {
        kernel.log_apply(&log_v, &mut out)?;
    }
    Ok(out)
}

/// One entropic JKO step from `rho_prev`. `warm_g` is the second-marginal
/// potential of a previous step; the kernel's absorbed potentials are used
/// when it is absent.
pub fn jko_step<S: Real>(
    rho_prev: &DiscreteMeasure<S>,
    kernel: &mut KernelOperator<S>,
    spec: &FreeEnergySpec<S>,
    h: S,
    opts: &InnerOptions<S>,
    warm_g: Option<&[S]>,
) -> Result<JkoStep<S>> {
    let m = kernel.len();
    if **rho_prev.grid() != **spec.grid() {
        return Err(Error::GridMismatch);
    }
    if rho_prev.weights().len() != m {
        return Err(Error::DimensionMismatch { expected: m, got: rho_prev.weights().len() });
    }
    if !(h > S::zero()) {
        return Err(Error::InvalidParameter { name: "h", reason: "must be positive".into() });
    }
    let eps = kernel.epsilon();
    let kappa = (h + h) / eps;
    let lambda = spec.grid().tile_volume();
    let p = rho_prev.weights();
    let log_p: Vec<S> = p.iter().map(|&x| ln_or_neg_inf(x)).collect();

    let mut g = match warm_g {
        Some(w) if w.len() == m && w.iter().all(|v| v.is_finite()) => w.to_vec(),
        Some(w) if w.len() != m => return Err(Error::DimensionMismatch { expected: m, got: w.len() }),
        _ => kernel.beta().to_vec(),
    };
    let mut anderson = Anderson::new(opts.anderson_depth);
    let mut absorptions = 0;
    let mut log_rho = vec![S::zero(); m];
    let mut f = vec![S::zero(); m];
    let mut g_new = vec![S::zero(); m];
    let mut residual = S::infinity();
    let mut change = S::infinity();

    for it in 1..=opts.max_iter {
        // a ← ρⁿ⁻¹ ⊘ K b
        let b = scalings(kernel, &g, false, opts, &mut absorptions, it)?;
        let log_kb = log_product(kernel, &b, false, |i| p[i] > S::zero(), opts.log_domain, it)?;
        let alpha = kernel.alpha();
        for i in 0..m {
            f[i] = alpha[i] + eps * (log_p[i] - log_kb[i]);
        }

        // b ← prox(Kᵀa) ⊘ Kᵀa
        let a = scalings(kernel, &f, true, opts, &mut absorptions, it)?;
        let log_kta = log_product(kernel, &a, true, |_| true, opts.log_domain, it)?;
        let log_q: Vec<S> = log_kta.iter().zip(kernel.beta()).map(|(&l, &be)| l - be / eps).collect();
        spec.kl_prox_log(&log_q, kappa, &mut log_rho)?;
        for j in 0..m {
            g_new[j] = eps * (log_rho[j] - log_q[j]);
        }

        change = compensated_sum((0..m).map(|j| log_rho[j].exp() * ((g_new[j] - g[j]) / eps).exp_m1().abs()));

        // first-marginal residual of the plan (f, g_new)
        let b_new = scalings(kernel, &g_new, false, opts, &mut absorptions, it)?;
        let log_kb_new = log_product(kernel, &b_new, false, |i| p[i] > S::zero(), opts.log_domain, it)?;
        let alpha = kernel.alpha();
        residual = compensated_sum(
            (0..m).map(|i| if f[i] == S::neg_infinity() { p[i] } else { (((f[i] - alpha[i]) / eps + log_kb_new[i]).exp() - p[i]).abs() }),
        );
        if residual.is_nan() || g_new.iter().any(|v| v.is_nan()) {
            return Err(Error::NotConverged { iterations: it, residual: f64::NAN });
        }
        if residual <= opts.tol && change <= opts.tol {
            let weights: Vec<S> = log_rho.iter().map(|&l| l.exp()).collect();
            let mass = compensated_sum(weights.iter().copied());
            let rho = DiscreteMeasure::from_weights(rho_prev.grid().clone(), weights)?;
            let plan = TransportPlan::Factored { f: f.clone(), g: g_new.clone(), eps };
            let transport_objective = regularized_cost(&plan, kernel, lambda)?;
            debug!("jko step converged in {it} iterations, residual {residual:e}");
            return Ok(JkoStep {
                rho,
                f,
                g: g_new,
                diagnostics: StepDiagnostics {
                    inner_iterations: it,
                    residual,
                    scaling_change: change,
                    mass_drift: (mass - S::one()).abs(),
                    transport_objective,
                    absorptions,
                },
            });
        }
        g = anderson.mix(&g, &g_new);
    }
    let worst = residual.max(change);
    Err(Error::NotConverged { iterations: opts.max_iter, residual: worst.to_f64_lossy() })
}

/// Iterates `ρ⁰ … ρᴺ` with per-iterate functionals and per-step diagnostics.
#[derive(Clone, Debug)]
pub struct SchemeRun<S> {
    pub config: SchemeConfig<S>,
    pub iterates: Vec<DiscreteMeasure<S>>,
    pub free_energy: Vec<S>,
    pub entropy: Vec<S>,
    pub second_moment: Vec<S>,
    pub steps: Vec<StepDiagnostics<S>>,
}

impl<S: Real> SchemeRun<S> {
    fn start(config: SchemeConfig<S>, rho0: DiscreteMeasure<S>, spec: &FreeEnergySpec<S>) -> Result<Self> {
        let mut run = Self {
            config,
            iterates: Vec::with_capacity(config.steps + 1),
            free_energy: Vec::new(),
            entropy: Vec::new(),
            second_moment: Vec::new(),
            steps: Vec::new(),
        };
        run.push(rho0, spec)?;
        Ok(run)
    }

    fn push(&mut self, rho: DiscreteMeasure<S>, spec: &FreeEnergySpec<S>) -> Result<()> {
        self.free_energy.push(spec.discrete_free_energy(&rho)?);
        self.entropy.push(rho.entropy());
        self.second_moment.push(rho.second_moment());
        self.iterates.push(rho);
        Ok(())
    }

    /// Number of completed steps.
    pub fn completed_steps(&self) -> usize {
        self.iterates.len() - 1
    }

    pub fn time(&self, n: usize) -> S {
        self.config.h * S::from_usize_lossy(n)
    }

    pub fn grid(&self) -> &Arc<UniformGrid<S>> {
        self.iterates[0].grid()
    }

    /// Piecewise-constant interpolation: `ρⁿ⁺¹` on `[nh, (n+1)h)`, `ρᴺ` at `T`.
    pub fn interpolate(&self, t: S) -> Result<&DiscreteMeasure<S>> {
        let n_steps = self.completed_steps();
        let horizon = self.time(n_steps);
        if !(t >= S::zero() && t <= horizon) {
            return Err(Error::TimeOutOfRange { t: t.to_f64_lossy(), horizon: horizon.to_f64_lossy() });
        }
        if n_steps == 0 {
            return Ok(&self.iterates[0]);
        }
        let n = (t / self.config.h).floor().to_usize().unwrap_or(n_steps);
        Ok(&self.iterates[(n + 1).min(n_steps)])
    }
}

/// A run that stopped early: the iterates computed so far and the failing
/// step (1-based).
#[derive(Debug, ThisError)]
#[error("step {step} failed: {error}")]
pub struct RunFailure<S: Real> {
    pub run: Box<SchemeRun<S>>,
    pub step: usize,
    #[source]
    pub error: Error,
}

/// Runs the scheme with a kernel built from `cost` on the grid of `rho0`.
pub fn run_scheme<S: Real>(
    rho0: &DiscreteMeasure<S>,
    cost: &CostSpec<S>,
    spec: &FreeEnergySpec<S>,
    config: &SchemeConfig<S>,
) -> std::result::Result<SchemeRun<S>, Box<RunFailure<S>>> {
    let empty = |error: Error| {
        let run = SchemeRun {
            config: *config,
            iterates: vec![rho0.clone()],
            free_energy: Vec::new(),
            entropy: Vec::new(),
            second_moment: Vec::new(),
            steps: Vec::new(),
        };
        Box::new(RunFailure { run: Box::new(run), step: 0, error })
    };
    if (cost.h - config.h).abs() > S::lit(1e-12) * config.h {
        return Err(empty(Error::InvalidParameter { name: "h", reason: "cost and scheme time steps differ".into() }));
    }
    let mut kernel = gibbs_kernel(cost, rho0.grid(), config.eps, config.kernel).map_err(empty)?;
    run_scheme_with_kernel(rho0, &mut kernel, spec, config)
}

/// Runs the scheme with a prebuilt kernel (whose ε must match the config).
pub fn run_scheme_with_kernel<S: Real>(
    rho0: &DiscreteMeasure<S>,
    kernel: &mut KernelOperator<S>,
    spec: &FreeEnergySpec<S>,
    config: &SchemeConfig<S>,
) -> std::result::Result<SchemeRun<S>, Box<RunFailure<S>>> {
    let fail = |run: SchemeRun<S>, step: usize, error: Error| Box::new(RunFailure { run: Box::new(run), step, error });
    let mut run = match SchemeRun::start(*config, rho0.clone(), spec) {
        Ok(r) => r,
        Err(e) => {
            let run = SchemeRun {
                config: *config,
                iterates: vec![rho0.clone()],
                free_energy: Vec::new(),
                entropy: Vec::new(),
                second_moment: Vec::new(),
                steps: Vec::new(),
            };
            return Err(fail(run, 0, e));
        }
    };
    if (kernel.epsilon() - config.eps).abs() > S::lit(1e-12) * config.eps {
        let e = Error::InvalidParameter { name: "epsilon", reason: "kernel and scheme regularisation differ".into() };
        return Err(fail(run, 0, e));
    }
    let ratio = config.scaling_ratio();
    if ratio > S::one() {
        warn!("scaling ratio eps|log eps|/h^2 = {ratio:.4} exceeds 1");
    }
    if config.inner.log_domain {
        kernel.balance();
    }
    let mut warm: Option<Vec<S>> = None;
    for n in 1..=config.steps {
        let prev = &run.iterates[n - 1];
        match jko_step(prev, kernel, spec, config.h, &config.inner, warm.as_deref()) {
            Ok(step) => {
                info!(
                    "step {n}/{}: {} inner iterations, residual {:e}",
                    config.steps, step.diagnostics.inner_iterations, step.diagnostics.residual
                );
                run.steps.push(step.diagnostics);
                warm = Some(step.g);
                if let Err(e) = run.push(step.rho, spec) {
                    return Err(fail(run, n, e));
                }
            }
            Err(e) => return Err(fail(run, n, e)),
        }
    }
    Ok(run)
}
