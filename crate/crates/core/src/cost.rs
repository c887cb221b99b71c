//! Time-step dependent transport costs `c_h(x, y)`.

use crate::error::{Error, Result};
use crate::linalg::SquareMatrix;
use crate::msd::MsdMatrices;
use crate::scalar::Real;

/// Hamiltonian force `∇g` entering the explicit kinetic cost.
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum ForceField<S> {
    Zero,
    /// `g(x) = k/2 ‖x‖²`, so `∇g(x) = k x`.
    Quadratic(S),
}

impl<S: Real> ForceField<S> {
    #[inline]
    pub fn gradient_component(&self, x: S) -> S {
        match *self {
            ForceField::Zero => S::zero(),
            ForceField::Quadratic(k) => k * x,
        }
    }
}

/// Which cost, with its parameters (the time step lives in [`CostSpec`]).
#[derive(Clone, Debug, PartialEq)]
pub enum CostKind<S> {
    /// `⟨(A + hI)⁻¹(x - y), x - y⟩` for symmetric PSD `A`.
    WeightedQuadratic(SquareMatrix<S>),
    /// `‖v' - v + h∇g(x)‖² + 12 ‖(x' - x)/h - (v' + v)/2‖²` on
    /// phase space `(x, v) ∈ ℝ^{2d̃}`.
    KramersExplicit { force: ForceField<S>, half_dim: usize },
    /// Mean-squared-derivative cost of an `n`-chain with `d̃`-dimensional
    /// blocks.
    KolmogorovMsd { chain_length: usize, block_dim: usize },
}

#[derive(Clone, Debug, PartialEq)]
pub struct CostSpec<S> {
    pub kind: CostKind<S>,
    pub h: S,
}

impl<S: Real> CostSpec<S> {
    pub fn new(kind: CostKind<S>, h: S) -> Result<Self> {
        let spec = Self { kind, h };
        spec.validate()?;
        Ok(spec)
    }

    pub fn weighted(a: SquareMatrix<S>, h: S) -> Result<Self> {
        Self::new(CostKind::WeightedQuadratic(a), h)
    }

    pub fn kramers(force: ForceField<S>, half_dim: usize, h: S) -> Result<Self> {
        Self::new(CostKind::KramersExplicit { force, half_dim }, h)
    }

    pub fn kolmogorov(chain_length: usize, block_dim: usize, h: S) -> Result<Self> {
        Self::new(CostKind::KolmogorovMsd { chain_length, block_dim }, h)
    }

    /// State-space dimension the cost acts on.
    pub fn dim(&self) -> usize {
        match &self.kind {
            CostKind::WeightedQuadratic(a) => a.size(),
            CostKind::KramersExplicit { half_dim, .. } => 2 * half_dim,
            CostKind::KolmogorovMsd { chain_length, block_dim } => chain_length * block_dim,
        }
    }

    fn validate(&self) -> Result<()> {
        if !(self.h > S::zero() && self.h.is_finite()) {
            return Err(Error::InvalidParameter { name: "h", reason: format!("must be positive, got {}", self.h) });
        }
        match &self.kind {
            CostKind::WeightedQuadratic(a) => {
                let tol = S::lit(1e-12);
                if !a.is_symmetric(tol * (S::one() + a.max_abs())) {
                    return Err(Error::InvalidParameter { name: "diffusion_matrix", reason: "must be symmetric".into() });
                }
                if !a.is_positive_semidefinite(tol * (S::one() + a.max_abs())) {
                    return Err(Error::InvalidParameter {
                        name: "diffusion_matrix",
                        reason: "must be positive semi-definite".into(),
                    });
                }
            }
            CostKind::KramersExplicit { half_dim, .. } if *half_dim == 0 => {
                return Err(Error::InvalidParameter { name: "half_dim", reason: "must be ≥ 1".into() });
            }
            CostKind::KolmogorovMsd { chain_length, .. } if !(1..=crate::msd::MAX_CHAIN_LENGTH).contains(chain_length) => {
                return Err(Error::ChainLengthUnsupported(*chain_length));
            }
            _ => {}
        }
        Ok(())
    }

    /// Precomputes everything that depends only on `(kind, h)`.
    pub fn compile(&self) -> Result<TransportCost<S>> {
        self.validate()?;
        Ok(match &self.kind {
            CostKind::WeightedQuadratic(a) => {
                let shifted = a + &SquareMatrix::identity(a.size()).scale(self.h);
                TransportCost::Weighted { inverse: shifted.inverse()? }
            }
            CostKind::KramersExplicit { force, half_dim } => {
                TransportCost::Kramers { force: *force, half_dim: *half_dim, h: self.h }
            }
            CostKind::KolmogorovMsd { chain_length, block_dim } => {
                TransportCost::Kolmogorov(MsdMatrices::new(*chain_length, *block_dim, self.h)?)
            }
        })
    }
}

/// A cost ready for repeated pointwise evaluation.
#[derive(Clone, Debug)]
pub enum TransportCost<S> {
    Weighted { inverse: SquareMatrix<S> },
    Kramers { force: ForceField<S>, half_dim: usize, h: S },
    Kolmogorov(MsdMatrices<S>),
}

impl<S: Real> TransportCost<S> {
    pub fn dim(&self) -> usize {
        match self {
            TransportCost::Weighted { inverse } => inverse.size(),
            TransportCost::Kramers { half_dim, .. } => 2 * half_dim,
            TransportCost::Kolmogorov(m) => m.state_dim(),
        }
    }

    /// `c_h(x, y)`; both slices must have length [`dim`](Self::dim).
    #[inline]
    pub fn eval(&self, x: &[S], y: &[S]) -> S {
        match self {
            TransportCost::Weighted { inverse } => weighted_form(inverse, x, y),
            TransportCost::Kramers { force, half_dim, h } => {
                let (px, pv) = x.split_at(*half_dim);
                let (qx, qv) = y.split_at(*half_dim);
                kramers_form(force, *h, px, pv, qx, qv)
            }
            TransportCost::Kolmogorov(m) => m.cost_unchecked(x, y),
        }
    }

    pub fn eval_checked(&self, x: &[S], y: &[S]) -> Result<S> {
        let d = self.dim();
        for v in [x, y] {
            if v.len() != d {
                return Err(Error::DimensionMismatch { expected: d, got: v.len() });
            }
        }
        Ok(self.eval(x, y))
    }
}

fn weighted_form<S: Real>(inverse: &SquareMatrix<S>, x: &[S], y: &[S]) -> S {
    let n = inverse.size();
    let mut acc = S::zero();
    for i in 0..n {
        let di = x[i] - y[i];
        let mut row = S::zero();
        for j in 0..n {
            row += inverse[(i, j)] * (x[j] - y[j]);
        }
        acc += di * row;
    }
    acc.max(S::zero())
}

#[inline]
fn kramers_form<S: Real>(force: &ForceField<S>, h: S, x: &[S], v: &[S], x2: &[S], v2: &[S]) -> S {
    let twelve = S::lit(12.0);
    let half = S::lit(0.5);
    let mut kinetic = S::zero();
    let mut positional = S::zero();
    for k in 0..x.len() {
        let dv = v2[k] - v[k] + h * force.gradient_component(x[k]);
        let dx = (x2[k] - x[k]) / h - half * (v2[k] + v[k]);
        kinetic += dv * dv;
        positional += dx * dx;
    }
    kinetic + twelve * positional
}

/// `⟨(A + hI)⁻¹(x - y), x - y⟩`, factorising `A + hI` on every call.
pub fn cost_weighted<S: Real>(a: &SquareMatrix<S>, h: S, x: &[S], y: &[S]) -> Result<S> {
    CostSpec::weighted(a.clone(), h)?.compile()?.eval_checked(x, y)
}

/// Explicit kinetic cost between phase-space points `(x, v)` and `(x2, v2)`.
pub fn cost_kramers<S: Real>(force: &ForceField<S>, h: S, x: &[S], v: &[S], x2: &[S], v2: &[S]) -> Result<S> {
    if !(h > S::zero()) {
        return Err(Error::InvalidParameter { name: "h", reason: "must be positive".into() });
    }
    let d = x.len();
    for s in [v, x2, v2] {
        if s.len() != d {
            return Err(Error::DimensionMismatch { expected: d, got: s.len() });
        }
    }
    Ok(kramers_form(force, h, x, v, x2, v2))
}

/// Mean-squared-derivative cost using prebuilt matrices.
pub fn cost_kolmogorov<S: Real>(mats: &MsdMatrices<S>, x: &[S], y: &[S]) -> Result<S> {
    mats.cost(x, y)
}
