//! Exact Green function of the linear Kramers equation
//! `∂ρ + v ∂ₓρ = ∂ᵥ(vρ) + ∂ᵥ²ρ` started from a point mass at `(x₀, v₀)`.

use std::sync::Arc;

use log::warn;

use crate::error::{Error, Result};
use crate::grid::{DiscreteMeasure, UniformGrid};
use crate::jko::SchemeRun;
use crate::scalar::Real;

/// Times below this are clamped; the determinant is `O(t⁴)`.
pub const MIN_TIME: f64 = 1e-6;

/// Below this the `S₃` and determinant use their Taylor series.
const SERIES_CUTOFF: f64 = 0.25;
const SERIES_TERMS: i32 = 30;

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct GreenParams<S> {
    pub x0: S,
    pub v0: S,
    /// Offset between scheme time and Green-function time.
    pub t0: S,
}

impl<S: Real> GreenParams<S> {
    pub fn new(x0: S, v0: S, t0: S) -> Result<Self> {
        if !(t0 > S::zero() && t0.is_finite()) {
            return Err(Error::InvalidParameter { name: "t0", reason: format!("must be positive, got {t0}") });
        }
        Ok(Self { x0, v0, t0 })
    }

    /// Mean position and velocity at time `t`.
    pub fn mean(&self, t: S) -> (S, S) {
        let decay = (-t).exp();
        (self.x0 - self.v0 * (-t).exp_m1(), self.v0 * decay)
    }
}

/// `S₁ = 1 - e^{-2t}`, `S₂ = (1 - e^{-t})²`, `S₃ = 2t - 3 + 4e^{-t} - e^{-2t}`
/// and `det = S₁S₃ - S₂²`, the latter from its closed form
/// `2(t - 2 + 4e^{-t} - (t + 2)e^{-2t})`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct SValues<S> {
    pub s1: S,
    pub s2: S,
    pub s3: S,
    pub det: S,
}

pub fn s_functions<S: Real>(t: S) -> Result<SValues<S>> {
    if !(t > S::zero() && t.is_finite()) {
        return Err(Error::InvalidParameter { name: "t", reason: format!("must be positive, got {t}") });
    }
    let s1 = -(-(t + t)).exp_m1();
    let e1 = (-t).exp_m1();
    let s2 = e1 * e1;
    let (s3, half_det) = if t < S::lit(SERIES_CUTOFF) {
        (s3_series(t), e_series(t))
    } else {
        let e = (-t).exp();
        let e2 = e * e;
        let two = S::lit(2.0);
        (two * t - S::lit(3.0) + S::lit(4.0) * e - e2, t - two + S::lit(4.0) * e - (t + two) * e2)
    };
    Ok(SValues { s1, s2, s3, det: half_det + half_det })
}

/// `Σ_{k≥3} (-1)^k (4 - 2^k) t^k / k!`.
fn s3_series<S: Real>(t: S) -> S {
    let mut term = t * t / S::lit(2.0);
    let mut acc = S::zero();
    for k in 3..SERIES_TERMS {
        term = term * t / S::from_i32(k).unwrap();
        let sign = if k % 2 == 0 { S::one() } else { -S::one() };
        acc += sign * (S::lit(4.0) - S::lit(2f64.powi(k))) * term;
    }
    acc
}

/// `t - 2 + 4e^{-t} - (t + 2)e^{-2t} = Σ_{k≥4} (-1)^k (4 + k 2^{k-1} - 2^{k+1}) t^k / k!`.
fn e_series<S: Real>(t: S) -> S {
    let mut term = t * t * t / S::lit(6.0);
    let mut acc = S::zero();
    for k in 4..SERIES_TERMS {
        term = term * t / S::from_i32(k).unwrap();
        let sign = if k % 2 == 0 { S::one() } else { -S::one() };
        let c = 4.0 + f64::from(k) * 2f64.powi(k - 1) - 2f64.powi(k + 1);
        acc += sign * S::lit(c) * term;
    }
    acc
}

fn clamp_time<S: Real>(t: S) -> Result<S> {
    if !(t > S::zero() && t.is_finite()) {
        return Err(Error::InvalidParameter { name: "t", reason: format!("must be positive, got {t}") });
    }
    let min = S::lit(MIN_TIME);
    if t < min {
        warn!("time {t} below {MIN_TIME}, clamped");
        return Ok(min);
    }
    Ok(t)
}

/// Green function `ρ(t, x, v)`: the Gaussian with mean [`GreenParams::mean`]
/// and covariance `[[S₃, S₂], [S₂, S₁]]`.
pub fn green_density<S: Real>(params: &GreenParams<S>, t: S, x: S, v: S) -> Result<S> {
    let t = clamp_time(t)?;
    let sv = s_functions(t)?;
    Ok(density_with(params, t, &sv, x, v))
}

#[inline]
fn density_with<S: Real>(params: &GreenParams<S>, t: S, sv: &SValues<S>, x: S, v: S) -> S {
    let (mx, mv) = params.mean(t);
    let (d1, d2) = (x - mx, v - mv);
    let q = sv.s1 * d1 * d1 - (sv.s2 + sv.s2) * d1 * d2 + sv.s3 * d2 * d2;
    let two = S::lit(2.0);
    (-q / (two * sv.det)).exp() / (two * S::PI() * sv.det.sqrt())
}

/// `λ ρ(t, x_i, v_i)` on a position × velocity grid, renormalised; the mass
/// before renormalisation is kept as [`DiscreteMeasure::raw_mass`].
pub fn sample_on_grid<S: Real>(params: &GreenParams<S>, t: S, grid: &Arc<UniformGrid<S>>) -> Result<DiscreteMeasure<S>> {
    if grid.dim() != 2 {
        return Err(Error::DimensionMismatch { expected: 2, got: grid.dim() });
    }
    let t = clamp_time(t)?;
    let sv = s_functions(t)?;
    DiscreteMeasure::from_density(grid.clone(), |p| density_with(params, t, &sv, p[0], p[1]))
}

/// Scheme iterate `ρⁿ` against the exact solution at `t₀ + nh`:
/// `(t₀ + nh, ‖ρⁿ - ρ_exact‖_{L¹})` for every stored iterate.
pub fn error_curve<S: Real>(run: &SchemeRun<S>, params: &GreenParams<S>) -> Result<Vec<(S, S)>> {
    run.iterates
        .iter()
        .enumerate()
        .map(|(n, rho)| {
            let t = params.t0 + run.time(n);
            let exact = sample_on_grid(params, t, rho.grid())?;
            Ok((t, rho.l1_distance(&exact)?))
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn direct(t: f64) -> (f64, f64, f64) {
        let e = (-t).exp();
        (1.0 - e * e, (1.0 - e).powi(2), 2.0 * t - 3.0 + 4.0 * e - e * e)
    }

    #[test]
    fn values_at_one() {
        let s = s_functions(1.0_f64).unwrap();
        assert!((s.s1 - 0.864665).abs() < 1e-6);
        assert!((s.s2 - 0.399576).abs() < 1e-6);
        assert!((s.s3 - 0.336183).abs() < 1e-6);
        assert!((s.det - 0.1310238).abs() < 1e-7);
        let g = GreenParams::new(0.0_f64, 0.0, 0.1).unwrap();
        assert!((green_density(&g, 1.0, 0.0, 0.0).unwrap() - 0.4396884).abs() < 1e-7);
    }

    #[test]
    fn small_time_limits() {
        let s = s_functions(1e-8_f64).unwrap();
        assert!(s.s1 < 1e-7 && s.s2 < 1e-7 && s.s3 < 1e-7);
        assert!(s.det > 0.0);
        // leading behaviour det ≈ t⁴/3
        let t = 1e-3_f64;
        let s = s_functions(t).unwrap();
        assert!((s.det / (t.powi(4) / 3.0) - 1.0).abs() < 1e-2);
    }

    #[test]
    fn series_agrees_with_direct_formula_near_cutoff() {
        for &t in &[0.2_f64, 0.24, 0.2499] {
            let s = s_functions(t).unwrap();
            let (s1, s2, s3) = direct(t);
            assert!((s.s3 - s3).abs() < 1e-13 * s3.abs().max(1e-3));
            assert!((s.det - (s1 * s3 - s2 * s2)).abs() < 1e-10 * s.det);
            assert!((s.s1 - s1).abs() < 1e-15 && (s.s2 - s2).abs() < 1e-15);
        }
    }

    #[test]
    fn peak_value() {
        let g = GreenParams::new(0.3_f64, -1.0, 0.1).unwrap();
        let t = 0.7;
        let (mx, mv) = g.mean(t);
        let s = s_functions(t).unwrap();
        let peak = green_density(&g, t, mx, mv).unwrap();
        assert!((peak - 1.0 / (2.0 * std::f64::consts::PI * s.det.sqrt())).abs() < 1e-12 * peak);
    }

    #[test]
    fn nonpositive_inputs_rejected() {
        assert!(s_functions(0.0_f64).is_err());
        assert!(GreenParams::new(0.0, 0.0, 0.0_f64).is_err());
        let g = GreenParams::new(0.0, 0.0, 0.1).unwrap();
        assert!(green_density(&g, -1.0, 0.0, 0.0).is_err());
        let grid = Arc::new(UniformGrid::new(&[(0.0, 1.0)], &[4]).unwrap());
        assert!(sample_on_grid(&g, 1.0, &grid).is_err());
    }
}
