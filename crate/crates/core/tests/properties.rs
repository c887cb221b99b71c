use std::sync::Arc;

use entropic_jko::{
    gibbs_kernel, green_density, run_scheme, s_functions, sample_on_grid, sinkhorn, transport_cost, CostSpec,
    DiscreteMeasure, ForceField, FreeEnergySpec, GreenParams, Grid, InternalEnergy, KernelOptions, Matrix, Measure,
    SchemeConfig, SinkhornOptions,
};
use proptest::prelude::*;

fn line(m: usize) -> Arc<Grid> {
    Arc::new(Grid::new(&[(-1.0, 1.0)], &[m]).unwrap())
}

fn measure(grid: &Arc<Grid>, w: &[f64]) -> Measure {
    DiscreteMeasure::from_weights(grid.clone(), w.to_vec()).unwrap()
}

fn weights(m: usize) -> impl Strategy<Value = Vec<f64>> {
    prop::collection::vec(0.0..1.0_f64, m).prop_filter("nonzero mass", |w| w.iter().sum::<f64>() > 1e-3)
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn l1_is_a_metric(a in weights(7), b in weights(7), c in weights(7)) {
        let g = line(7);
        let (a, b, c) = (measure(&g, &a), measure(&g, &b), measure(&g, &c));
        prop_assert_eq!(a.l1_distance(&b).unwrap(), b.l1_distance(&a).unwrap());
        let (ab, bc, ac) = (a.l1_distance(&b).unwrap(), b.l1_distance(&c).unwrap(), a.l1_distance(&c).unwrap());
        prop_assert!(ac <= ab + bc + 1e-12);
        prop_assert_eq!(a.l1_distance(&a).unwrap(), 0.0);
    }

    #[test]
    fn marginals_keep_mass(w in weights(12)) {
        let g = Arc::new(Grid::new(&[(0.0, 1.0), (-2.0, 2.0)], &[3, 4]).unwrap());
        let mu = measure(&g, &w);
        for axes in [[0usize], [1]] {
            let m = mu.marginal(&axes).unwrap();
            prop_assert!((m.total_mass() - mu.total_mass()).abs() < 1e-12);
        }
    }

    #[test]
    fn moments_and_entropy_are_bounded_below(w in weights(9)) {
        let g = line(9);
        let mu = measure(&g, &w);
        prop_assert!(mu.second_moment() >= 0.0);
        let floor = (1.0 / (9.0 * g.tile_volume())).ln();
        prop_assert!(mu.entropy() >= floor - 1e-12);
    }

    #[test]
    fn prox_is_positive_and_locally_optimal(
        q in prop::collection::vec(0.01..3.0_f64, 5),
        f in prop::collection::vec(0.0..2.0_f64, 5),
        kappa in 0.01..20.0_f64,
        power in any::<bool>(),
    ) {
        let u = if power { InternalEnergy::PowerLaw(2) } else { InternalEnergy::Boltzmann };
        let g = line(5);
        let lambda = g.tile_volume();
        let spec = FreeEnergySpec::new(g, f.clone(), u).unwrap();
        let rho = spec.kl_prox(&q, kappa).unwrap();
        let phi = |i: usize, r: f64| r * (r / q[i]).ln() - r + kappa * (f[i] * r + lambda * u.energy(r / lambda));
        for i in 0..5 {
            prop_assert!(rho[i] > 0.0);
            for s in [1.0 - 1e-3, 1.0 + 1e-3] {
                prop_assert!(phi(i, rho[i]) <= phi(i, rho[i] * s) + 1e-15);
            }
        }
    }

    #[test]
    fn boltzmann_prox_moves_toward_its_fixed_point(q in prop::collection::vec(0.01..3.0_f64, 4), kappa in 0.0..50.0_f64) {
        let g = line(4);
        let target = g.tile_volume() / std::f64::consts::E;
        let spec = FreeEnergySpec::free(g, InternalEnergy::Boltzmann).unwrap();
        let rho = spec.kl_prox(&q, kappa).unwrap();
        for (r, q) in rho.iter().zip(&q) {
            let (lo, hi) = if *q < target { (*q, target) } else { (target, *q) };
            prop_assert!(*r >= lo - 1e-10 && *r <= hi + 1e-10);
        }
    }

    #[test]
    fn power_pressure_is_s_to_the_m(s in 0.0..10.0_f64, m in 2u32..6) {
        let p = InternalEnergy::PowerLaw(m).pressure(s).unwrap();
        prop_assert!(p <= s.powi(m as i32) * (1.0 + 1e-12));
        prop_assert!(p >= s.powi(m as i32) * (1.0 - 1e-12));
    }

    #[test]
    fn costs_are_nonnegative(p in prop::collection::vec(-5.0..5.0_f64, 4), h in 0.001..1.0_f64) {
        let specs = [
            CostSpec::weighted(Matrix::from_row_major(&[1.0, 0.3, 0.3, 0.5]).unwrap(), h).unwrap(),
            CostSpec::kramers(ForceField::Quadratic(2.0), 1, h).unwrap(),
            CostSpec::kolmogorov(2, 1, h).unwrap(),
        ];
        for spec in specs {
            let c = spec.compile().unwrap();
            prop_assert!(c.eval(&p[..2], &p[2..]) >= 0.0);
        }
    }

    #[test]
    fn sinkhorn_meets_both_marginals(a in weights(6), b in weights(6), eps in 0.05..2.0_f64) {
        let g = line(6);
        let (mu, nu) = (measure(&g, &a), measure(&g, &b));
        let cost = CostSpec::weighted(Matrix::zeros(1), 1.0).unwrap();
        let mut kernel = gibbs_kernel(&cost, &g, eps, KernelOptions::default()).unwrap();
        let (plan, state) = sinkhorn(&mut kernel, &mu, &nu, &SinkhornOptions::default()).unwrap();
        prop_assert!(state.converged);
        let (r, c) = plan.marginals(&kernel).unwrap();
        let l1 = |x: &[f64], y: &[f64]| x.iter().zip(y).map(|(p, q)| (p - q).abs()).sum::<f64>();
        prop_assert!(l1(&r, mu.weights()) <= 1e-8);
        prop_assert!(l1(&c, nu.weights()) <= 1e-8);
    }

    #[test]
    fn reflected_marginals_give_a_reflected_plan(half in weights(3)) {
        let g = line(6);
        let w: Vec<f64> = half.iter().chain(half.iter().rev()).copied().collect();
        let mu = measure(&g, &w);
        let cost = CostSpec::weighted(Matrix::zeros(1), 1.0).unwrap();
        let mut kernel = gibbs_kernel(&cost, &g, 0.3, KernelOptions::default()).unwrap();
        let opts = SinkhornOptions { tol: 1e-13, ..SinkhornOptions::default() };
        let (plan, _) = sinkhorn(&mut kernel, &mu, &mu, &opts).unwrap();
        for i in 0..6 {
            for j in 0..6 {
                let d = plan.entry(&kernel, i, j) - plan.entry(&kernel, 5 - i, 5 - j);
                prop_assert!(d.abs() <= 1e-10);
            }
        }
    }

    #[test]
    fn scheme_conserves_mass(w in weights(8), power in any::<bool>()) {
        let g = line(8);
        let rho0 = measure(&g, &w);
        let u = if power { InternalEnergy::PowerLaw(2) } else { InternalEnergy::Boltzmann };
        let energy = FreeEnergySpec::quadratic(g, 1.0, &[0], u).unwrap();
        let cost = CostSpec::weighted(Matrix::identity(1), 0.1).unwrap();
        let config = SchemeConfig::new(0.1, 0.05, 0.3).unwrap();
        let run = run_scheme(&rho0, &cost, &energy, &config).unwrap();
        for (rho, step) in run.iterates.iter().skip(1).zip(&run.steps) {
            prop_assert!(step.mass_drift <= 1e-8);
            prop_assert!(step.residual <= 1e-8);
            prop_assert!((rho.total_mass() - 1.0).abs() <= 1e-12);
        }
        prop_assert!(run.free_energy.iter().chain(&run.entropy).chain(&run.second_moment).all(|v| v.is_finite()));
    }

    #[test]
    fn green_marginal_means_follow_the_drift(x0 in -0.3..0.3_f64, v0 in -1.0..1.0_f64, t in 0.1..1.0_f64) {
        let g = Arc::new(Grid::new(&[(-3.0, 3.0), (-4.0, 4.0)], &[120, 100]).unwrap());
        let params = GreenParams::new(x0, v0, 0.1).unwrap();
        let rho = sample_on_grid(&params, t, &g).unwrap();
        let (mx, mv) = params.mean(t);
        let mean = rho.mean();
        prop_assert!((mean[0] - (x0 + v0 * (1.0 - (-t).exp()))).abs() <= 2.0 * g.spacing()[0]);
        prop_assert!((mean[1] - v0 * (-t).exp()).abs() <= 2.0 * g.spacing()[1]);
        prop_assert!((mx - mean[0]).abs() <= 2.0 * g.spacing()[0] && (mv - mean[1]).abs() <= 2.0 * g.spacing()[1]);
    }
}

#[test]
fn green_density_is_positive_and_continuous_in_time() {
    let params = GreenParams::new(0.1, -0.5, 0.1).unwrap();
    let at = |t: f64| {
        let (mx, mv) = params.mean(t);
        green_density(&params, t, mx + 0.01, mv + 0.02).unwrap()
    };
    let mut t = 0.05;
    let mut prev = at(t);
    while t < 10.0 {
        t *= 1.0005;
        assert!(s_functions(t).unwrap().det > 0.0);
        let v = at(t);
        assert!(v.is_finite() && v > 0.0);
        assert!((v - prev).abs() <= 0.05 * prev.max(v), "jump at t = {t}");
        prev = v;
    }
}

#[test]
fn transport_cost_decreases_with_epsilon() {
    let g = line(5);
    let mu = measure(&g, &[0.4, 0.1, 0.2, 0.2, 0.1]);
    let nu = measure(&g, &[0.1, 0.1, 0.1, 0.3, 0.4]);
    let cost = CostSpec::weighted(Matrix::zeros(1), 1.0).unwrap();
    let mut last = f64::INFINITY;
    for eps in [1.0, 0.1, 0.01] {
        let mut kernel = gibbs_kernel(&cost, &g, eps, KernelOptions::default()).unwrap();
        let (plan, _) = sinkhorn(&mut kernel, &mu, &nu, &SinkhornOptions::default()).unwrap();
        let c = transport_cost(&plan, &kernel).unwrap();
        assert!(c <= last);
        last = c;
    }
}
