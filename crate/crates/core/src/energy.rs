//! Internal energy, pressure, the discrete free energy
//! `F̄(ρ) = Σ f(x_i) ρ_i + λ u(ρ_i / λ)`, and its proximal map in KL geometry.

use std::sync::Arc;

use crate::error::{Error, Result};
use crate::grid::{DiscreteMeasure, UniformGrid};
use crate::scalar::{compensated_sum, Real};

const PROX_MAX_ITER: usize = 200;

/// Convex density functional `u` acting on `ρ / λ`.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum InternalEnergy {
    /// `u(s) = s log s`, pressure `p(s) = s`.
    Boltzmann,
    /// `u(s) = s^m / (m - 1)` for integer `m ≥ 2`, pressure `p(s) = s^m`.
    PowerLaw(u32),
}

impl InternalEnergy {
    pub fn validate(&self) -> Result<()> {
        match *self {
            InternalEnergy::PowerLaw(m) if m < 2 => Err(Error::InvalidParameter {
                name: "power_exponent",
                reason: format!("exponent must be ≥ 2, got {m}"),
            }),
            _ => Ok(()),
        }
    }

    /// `u(s)`, with `u(0) = 0`.
    pub fn energy<S: Real>(&self, s: S) -> S {
        match *self {
            InternalEnergy::Boltzmann => s.xlogx(),
            InternalEnergy::PowerLaw(m) => s.powi(m as i32) / S::from_u32(m - 1).unwrap(),
        }
    }

    /// `u'(s)`; `-inf` at zero for Boltzmann.
    pub fn derivative<S: Real>(&self, s: S) -> S {
        match *self {
            InternalEnergy::Boltzmann => s.ln() + S::one(),
            InternalEnergy::PowerLaw(m) => {
                let mf = S::from_u32(m).unwrap();
                mf / (mf - S::one()) * s.powi(m as i32 - 1)
            }
        }
    }

    /// Pressure `p(s) = u'(s) s - u(s)`.
    pub fn pressure<S: Real>(&self, s: S) -> Result<S> {
        if !(s >= S::zero()) {
            return Err(Error::NegativeDensity(s.to_f64_lossy()));
        }
        Ok(match *self {
            InternalEnergy::Boltzmann => s,
            InternalEnergy::PowerLaw(m) => s.powi(m as i32),
        })
    }
}

/// Potential samples `f(x_i) ≥ 0` on a grid plus an internal energy.
#[derive(Clone, Debug)]
pub struct FreeEnergySpec<S> {
    grid: Arc<UniformGrid<S>>,
    potential: Vec<S>,
    internal: InternalEnergy,
}

impl<S: Real> FreeEnergySpec<S> {
    pub fn new(grid: Arc<UniformGrid<S>>, potential: Vec<S>, internal: InternalEnergy) -> Result<Self> {
        internal.validate()?;
        if potential.len() != grid.len() {
            return Err(Error::DimensionMismatch { expected: grid.len(), got: potential.len() });
        }
        if let Some((i, f)) = potential.iter().enumerate().find(|(_, f)| !(f.is_finite() && **f >= S::zero())) {
            return Err(Error::InvalidParameter {
                name: "potential",
                reason: format!("f(x_{i}) = {f}; the potential must be finite and nonnegative"),
            });
        }
        Ok(Self { grid, potential, internal })
    }

    /// Zero potential.
    pub fn free(grid: Arc<UniformGrid<S>>, internal: InternalEnergy) -> Result<Self> {
        let m = grid.len();
        Self::new(grid, vec![S::zero(); m], internal)
    }

    /// `f(x) = coefficient/2 · Σ_{a ∈ axes} x_a²`.
    pub fn quadratic(grid: Arc<UniformGrid<S>>, coefficient: S, axes: &[usize], internal: InternalEnergy) -> Result<Self> {
        if !(coefficient >= S::zero()) {
            return Err(Error::InvalidParameter {
                name: "potential_coefficient",
                reason: "must be nonnegative".into(),
            });
        }
        if axes.iter().any(|&a| a >= grid.dim()) {
            return Err(Error::InvalidAxes { dim: grid.dim() });
        }
        let half = S::lit(0.5) * coefficient;
        let f = (0..grid.len())
            .map(|i| {
                let p = grid.point(i);
                half * axes.iter().map(|&a| p[a] * p[a]).sum::<S>()
            })
            .collect();
        Self::new(grid, f, internal)
    }

    pub fn grid(&self) -> &Arc<UniformGrid<S>> {
        &self.grid
    }

    pub fn potential(&self) -> &[S] {
        &self.potential
    }

    pub fn internal(&self) -> InternalEnergy {
        self.internal
    }

    /// `F̄(ρ) = Σ f_i ρ_i + λ u(ρ_i / λ)`.
    pub fn discrete_free_energy(&self, rho: &DiscreteMeasure<S>) -> Result<S> {
        if **rho.grid() != *self.grid {
            return Err(Error::GridMismatch);
        }
        let lambda = self.grid.tile_volume();
        Ok(compensated_sum(
            rho.weights()
                .iter()
                .zip(&self.potential)
                .map(|(&r, &f)| f * r + lambda * self.internal.energy(r / lambda)),
        ))
    }

    /// Minimiser of `KL(ρ‖q) + κ F̄(ρ)`, computed componentwise.
    pub fn kl_prox(&self, q: &[S], kappa: S) -> Result<Vec<S>> {
        if q.len() != self.potential.len() {
            return Err(Error::DimensionMismatch { expected: self.potential.len(), got: q.len() });
        }
        if let Some((index, &v)) = q.iter().enumerate().find(|(_, v)| !(v.is_finite() && **v > S::zero())) {
            return Err(Error::NonPositiveReference { index, value: v.to_f64_lossy() });
        }
        let log_q: Vec<S> = q.iter().map(|v| v.ln()).collect();
        let mut out = vec![S::zero(); q.len()];
        self.kl_prox_log(&log_q, kappa, &mut out)?;
        for v in &mut out {
            *v = v.exp();
        }
        Ok(out)
    }

    /// Log-space version of [`kl_prox`](Self::kl_prox): reads `log q`, writes
    /// `log ρ`. Used inside the scaling loop where `q` may sit far outside
    /// the floating-point range.
    pub fn kl_prox_log(&self, log_q: &[S], kappa: S, log_out: &mut [S]) -> Result<()> {
        if !(kappa > S::zero() && kappa.is_finite()) {
            return Err(Error::InvalidParameter { name: "kappa", reason: format!("must be positive and finite, got {kappa}") });
        }
        let log_lambda = self.grid.tile_volume().ln();
        match self.internal {
            InternalEnergy::Boltzmann => {
                // (1+κ) log ρ = log q + κ log λ - κ (f + 1)
                let denom = S::one() + kappa;
                for ((out, &lq), &f) in log_out.iter_mut().zip(log_q).zip(&self.potential) {
                    *out = (lq + kappa * (log_lambda - f - S::one())) / denom;
                }
                Ok(())
            }
            InternalEnergy::PowerLaw(m) => {
                for (index, ((out, &lq), &f)) in log_out.iter_mut().zip(log_q).zip(&self.potential).enumerate() {
                    *out = power_prox_log(lq, f, kappa, m, log_lambda).ok_or(Error::ProxFailure { index })?;
                }
                Ok(())
            }
        }
    }
}

/// Root of `φ(y) = y - log q + κ f + κ m/(m-1) (e^y/λ)^{m-1}` (strictly
/// increasing in `y = log ρ`). Bracketed bisection refined by Newton.
fn power_prox_log<S: Real>(log_q: S, f: S, kappa: S, m: u32, log_lambda: S) -> Option<S> {
    if log_q == S::neg_infinity() {
        return Some(log_q);
    }
    if !log_q.is_finite() {
        return None;
    }
    let mf = S::from_u32(m).unwrap();
    let c = kappa * mf / (mf - S::one());
    let e = mf - S::one();
    let power = |y: S| ((y - log_lambda) * e).exp();
    let phi = |y: S| y - log_q + kappa * f + c * power(y);
    let dphi = |y: S| S::one() + c * e * power(y);

    // φ(hi) ≥ 0 because the power term is nonnegative.
    let hi0 = log_q - kappa * f;
    let mut hi = hi0;
    let mut lo = hi0 - c * power(hi0);
    if !lo.is_finite() {
        lo = hi0 - S::one();
    }
    let mut step = S::one();
    let mut guard = 0;
    while phi(lo) > S::zero() {
        step = step + step;
        lo = hi0 - step;
        guard += 1;
        if guard > 2000 {
            return None;
        }
    }
    let tol = S::lit(1e-14).max(S::epsilon() * S::lit(4.0));
    let mut y = if phi(hi) <= S::zero() { return Some(hi) } else { S::lit(0.5) * (lo + hi) };
    for _ in 0..PROX_MAX_ITER {
        let v = phi(y);
        if v == S::zero() {
            return Some(y);
        }
        if v > S::zero() {
            hi = y;
        } else {
            lo = y;
        }
        let newton = y - v / dphi(y);
        let next = if newton > lo && newton < hi && newton.is_finite() {
            newton
        } else {
            S::lit(0.5) * (lo + hi)
        };
        let scale = S::one().max(next.abs());
        if (next - y).abs() <= tol * scale || (hi - lo) <= tol * scale {
            return Some(next);
        }
        y = next;
    }
    None
}

#[cfg(test)]
mod tests {
    use super::*;

    fn unit_grid(m: usize) -> Arc<UniformGrid<f64>> {
        // spacing 1 → λ = 1
        Arc::new(UniformGrid::new(&[(0.0, m as f64)], &[m]).unwrap())
    }

    #[test]
    fn pressure_examples() {
        assert_eq!(InternalEnergy::Boltzmann.pressure(0.0_f64).unwrap(), 0.0);
        assert_eq!(InternalEnergy::Boltzmann.pressure(2.0_f64).unwrap(), 2.0);
        assert_eq!(InternalEnergy::PowerLaw(2).pressure(3.0_f64).unwrap(), 9.0);
        assert!(matches!(InternalEnergy::Boltzmann.pressure(-1.0_f64), Err(Error::NegativeDensity(_))));
    }

    #[test]
    fn pressure_is_u_prime_s_minus_u() {
        for u in [InternalEnergy::Boltzmann, InternalEnergy::PowerLaw(2), InternalEnergy::PowerLaw(3)] {
            for k in 1..50 {
                let s = k as f64 * 0.13;
                let direct = u.derivative(s) * s - u.energy(s);
                assert!((u.pressure(s).unwrap() - direct).abs() < 1e-12 * (1.0 + direct.abs()));
            }
        }
    }

    #[test]
    fn energies_are_convex_with_monotone_pressure() {
        for u in [InternalEnergy::Boltzmann, InternalEnergy::PowerLaw(2), InternalEnergy::PowerLaw(4)] {
            assert_eq!(u.energy(0.0_f64), 0.0);
            let mut prev_d = f64::NEG_INFINITY;
            let mut prev_p = 0.0;
            for k in 1..200 {
                let s = k as f64 * 0.05;
                let (d, p) = (u.derivative(s), u.pressure(s).unwrap());
                assert!(d >= prev_d && p >= prev_p && p >= 0.0);
                prev_d = d;
                prev_p = p;
            }
        }
    }

    #[test]
    fn power_law_pressure_bound_with_unit_constant() {
        for m in 2..6u32 {
            for k in 0..100 {
                let s = k as f64 * 0.37;
                assert!(InternalEnergy::PowerLaw(m).pressure(s).unwrap() <= s.powi(m as i32));
            }
        }
    }

    #[test]
    fn invalid_exponent_rejected() {
        let g = unit_grid(2);
        assert!(FreeEnergySpec::free(g, InternalEnergy::PowerLaw(1)).is_err());
    }

    #[test]
    fn free_energy_reduces_to_entropy() {
        let g = Arc::new(UniformGrid::<f64>::new(&[(0.0, 2.0)], &[5]).unwrap());
        let spec = FreeEnergySpec::free(g.clone(), InternalEnergy::Boltzmann).unwrap();
        let u = DiscreteMeasure::uniform(g.clone());
        let expect = (1.0 / (5.0 * g.tile_volume())).ln();
        assert!((spec.discrete_free_energy(&u).unwrap() - expect).abs() < 1e-14);
    }

    #[test]
    fn free_energy_of_point_mass_at_origin() {
        let g = Arc::new(UniformGrid::new(&[(-1.5, 1.5)], &[3]).unwrap());
        assert_eq!(g.tile_volume(), 1.0);
        let spec = FreeEnergySpec::quadratic(g.clone(), 2.0, &[0], InternalEnergy::Boltzmann).unwrap();
        let origin = DiscreteMeasure::dirac(g, 1).unwrap();
        assert_eq!(spec.discrete_free_energy(&origin).unwrap(), 0.0);
    }

    #[test]
    fn negative_potential_rejected() {
        let g = unit_grid(2);
        assert!(FreeEnergySpec::new(g, vec![0.0, -1.0], InternalEnergy::Boltzmann).is_err());
    }

    #[test]
    fn boltzmann_prox_example() {
        let g = unit_grid(3);
        let spec = FreeEnergySpec::free(g, InternalEnergy::Boltzmann).unwrap();
        let r = spec.kl_prox(&[1.0, 1.0, 1.0], 1.0).unwrap();
        for v in r {
            assert!((v - (-0.5f64).exp()).abs() < 1e-15);
        }
    }

    #[test]
    fn prox_with_vanishing_kappa_is_identity() {
        let g = unit_grid(4);
        let q = [0.1, 2.0, 0.003, 7.5];
        for u in [InternalEnergy::Boltzmann, InternalEnergy::PowerLaw(2)] {
            let spec = FreeEnergySpec::new(g.clone(), vec![0.5, 0.0, 1.0, 2.0], u).unwrap();
            let r = spec.kl_prox(&q, 1e-12).unwrap();
            for (a, b) in r.iter().zip(q) {
                assert!(((a - b) / b).abs() < 1e-8);
            }
        }
    }

    #[test]
    fn prox_rejects_nonpositive_reference() {
        let g = unit_grid(2);
        let spec = FreeEnergySpec::free(g, InternalEnergy::Boltzmann).unwrap();
        assert_eq!(
            spec.kl_prox(&[1.0, 0.0], 1.0),
            Err(Error::NonPositiveReference { index: 1, value: 0.0 })
        );
    }

    #[test]
    fn power_prox_satisfies_stationarity() {
        let g = Arc::new(UniformGrid::<f64>::new(&[(0.0, 0.5)], &[5]).unwrap());
        let lambda = g.tile_volume();
        let f = vec![0.0, 0.3, 1.0, 2.0, 0.1];
        let spec = FreeEnergySpec::new(g, f.clone(), InternalEnergy::PowerLaw(3)).unwrap();
        let q = [1e-6, 0.4, 3.0, 1e3, 0.02];
        let kappa = 0.7;
        let r = spec.kl_prox(&q, kappa).unwrap();
        for i in 0..5 {
            let u = InternalEnergy::PowerLaw(3).derivative(r[i] / lambda);
            let s = (r[i] / q[i]).ln() + kappa * (f[i] + u);
            assert!(s.abs() < 1e-10, "stationarity residual {s} at {i}");
            assert!(r[i] > 0.0 && r[i] <= q[i]);
        }
    }

    #[test]
    fn boltzmann_prox_between_reference_and_large_kappa_limit() {
        // f ≡ 0: as κ → ∞ the prox tends to λ e^{-1}
        let g = Arc::new(UniformGrid::new(&[(0.0, 1.0)], &[4]).unwrap());
        let lambda = g.tile_volume();
        let spec = FreeEnergySpec::free(g, InternalEnergy::Boltzmann).unwrap();
        let q = [0.01, 0.2, 0.09, 3.0];
        let limit = lambda * (-1.0f64).exp();
        for kappa in [0.1, 1.0, 10.0, 1e3] {
            let r = spec.kl_prox(&q, kappa).unwrap();
            for (ri, qi) in r.iter().zip(q) {
                let (lo, hi) = if qi < limit { (qi, limit) } else { (limit, qi) };
                assert!(*ri >= lo - 1e-10 && *ri <= hi + 1e-10);
            }
        }
    }
}
