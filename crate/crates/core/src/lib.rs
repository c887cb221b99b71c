//! Entropic-regularised JKO schemes for drift-diffusion equations.
//!
//! Each time step of the scheme solves
//!
//! ```text
//! ρⁿ = argmin_ρ  W̄_{c_h,ε}(ρⁿ⁻¹, ρ) / 2h  +  F̄(ρ)
//! ```
//!
//! on a uniform grid, where `W̄` is an entropic optimal transport cost and
//! `F̄` a discrete free energy. The transport cost `c_h` may be a weighted
//! quadratic cost (non-linear diffusion), the explicit kinetic cost of the
//! Kramers equation, or the mean-squared-derivative cost of a Kolmogorov
//! chain.
//!
//! Everything is generic over the scalar type; the aliases below fix `f64`.
//!
//! ```
//! use std::sync::Arc;
//! use entropic_jko::{CostSpec, DiscreteMeasure, FreeEnergySpec, Grid, InternalEnergy, SchemeConfig, SquareMatrix};
//!
//! let grid = Arc::new(Grid::new(&[(-3.0, 3.0)], &[60]).unwrap());
//! let rho0 = DiscreteMeasure::gaussian(grid.clone(), &[0.0], 0.25).unwrap();
//! let cost = CostSpec::weighted(SquareMatrix::identity(1), 0.05).unwrap();
//! let energy = FreeEnergySpec::free(grid, InternalEnergy::Boltzmann).unwrap();
//! let config = SchemeConfig::new(0.05, 1e-2, 0.1).unwrap();
//! let run = entropic_jko::run_scheme(&rho0, &cost, &energy, &config).unwrap();
//! assert_eq!(run.iterates.len(), 3);
//! ```

pub mod cost;
pub mod energy;
pub mod error;
pub mod grid;
pub mod jko;
pub mod kernel;
pub mod kramers;
pub mod linalg;
pub mod msd;
pub mod ot;
pub mod scalar;

pub use cost::{cost_kolmogorov, cost_kramers, cost_weighted, CostKind, CostSpec, ForceField, TransportCost};
pub use energy::{FreeEnergySpec, InternalEnergy};
pub use error::{Error, Result};
pub use grid::{DiscreteMeasure, GridConvention, UniformGrid};
pub use jko::{jko_step, run_scheme, run_scheme_with_kernel, InnerOptions, RunFailure, SchemeConfig, SchemeRun, StepDiagnostics};
pub use kernel::{gibbs_kernel, KernelMode, KernelOperator, KernelOptions};
pub use kramers::{error_curve, green_density, s_functions, sample_on_grid, GreenParams, SValues};
pub use linalg::SquareMatrix;
pub use msd::MsdMatrices;
pub use ot::{kl_divergence, regularized_cost, sinkhorn, transport_cost, ScalingState, SinkhornOptions, TransportPlan};
pub use scalar::Real;

pub type Grid = UniformGrid<f64>;
pub type Measure = DiscreteMeasure<f64>;
pub type Kernel = KernelOperator<f64>;
pub type Run = SchemeRun<f64>;
pub type Matrix = SquareMatrix<f64>;
