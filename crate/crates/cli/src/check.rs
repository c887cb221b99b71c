//! `ejko check`: quick self-tests against closed forms.

use std::sync::Arc;

use entropic_jko::{
    cost_kolmogorov, cost_kramers, gibbs_kernel, s_functions, sinkhorn, CostSpec, ForceField, Grid, GridConvention,
    KernelOptions, Matrix, Measure, MsdMatrices, SinkhornOptions,
};

pub struct Outcome {
    pub name: String,
    pub pass: bool,
    pub detail: String,
}

fn outcome(name: &str, worst: f64, tol: f64) -> Outcome {
    Outcome { name: name.to_owned(), pass: worst.is_finite() && worst <= tol, detail: format!("{worst:.3e} (tol {tol:.0e})") }
}

fn failed(name: &str, err: impl std::fmt::Display) -> Outcome {
    Outcome { name: name.to_owned(), pass: false, detail: err.to_string() }
}

fn rel(a: f64, b: f64) -> f64 {
    (a - b).abs() / b.abs().max(1e-300)
}

fn max_entry_diff(a: &Matrix, b: &Matrix) -> f64 {
    a.as_slice().iter().zip(b.as_slice()).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max)
}

/// Deterministic points in `[-2, 2)` from a Weyl sequence.
fn points(k: usize, d: usize) -> Vec<f64> {
    const PHI: f64 = 0.618_033_988_749_894_9;
    (0..d).map(|c| ((k * d + c + 1) as f64 * PHI).fract() * 4.0 - 2.0).collect()
}

fn msd_identities() -> Vec<Outcome> {
    let name = "chain matrix identities";
    let j_name = "chain J closed form";
    let mut worst = 0.0_f64;
    let mut j_worst = 0.0_f64;
    for n in 1..=3 {
        for &h in &[0.1, 0.02] {
            let mats = match MsdMatrices::new(n, 1, h) {
                Ok(m) => m,
                Err(e) => return vec![failed(name, e)],
            };
            let scale = 1.0 + mats.m.max_abs();
            for t in [mats.t1(), mats.t3()] {
                let sym = &t + &t.transpose();
                worst = worst.max(sym.max_abs() / (scale * (1.0 + t.max_abs())));
            }
            let t1 = mats.t1();
            worst = worst.max(mats.t2().max_abs() / (scale * (1.0 + t1.max_abs())));
            let (lhs, rhs) = mats.trace_identity();
            worst = worst.max(rel(lhs, rhs));
            match (mats.j_via_inverse(), mats.k_h_via_inverse()) {
                (Ok(j), Ok(k)) => {
                    j_worst = j_worst.max(max_entry_diff(&j, &mats.j));
                    worst = worst.max(max_entry_diff(&k, &mats.k_h) / (1e-300 + mats.k_h.max_abs()));
                }
                (Err(e), _) | (_, Err(e)) => return vec![failed(name, e)],
            }
        }
    }
    vec![outcome(name, worst, 1e-9), outcome(j_name, j_worst, 1e-12)]
}

fn cost_cross_check() -> Outcome {
    let name = "chain cost n = 2 vs kinetic cost";
    let h = 0.05;
    let mats = match MsdMatrices::new(2, 1, h) {
        Ok(m) => m,
        Err(e) => return failed(name, e),
    };
    let mut worst = 0.0_f64;
    for k in 0..1000 {
        let p = points(k, 4);
        let a = cost_kolmogorov(&mats, &p[..2], &p[2..]);
        let b = cost_kramers(&ForceField::Zero, h, &p[..1], &p[1..2], &p[2..3], &p[3..]);
        match (a, b) {
            (Ok(a), Ok(b)) => worst = worst.max((a - b).abs() / b.abs().max(1.0)),
            (Err(e), _) | (_, Err(e)) => return failed(name, e),
        }
    }
    outcome(name, worst, 1e-9)
}

fn green_determinant() -> Outcome {
    let name = "Green determinant closed form";
    let mut worst = 0.0_f64;
    for k in 1..=100 {
        let t = 0.05 * k as f64;
        let s = match s_functions(t) {
            Ok(s) => s,
            Err(e) => return failed(name, e),
        };
        if s.det <= 0.0 {
            return failed(name, format!("nonpositive determinant at t = {t}"));
        }
        worst = worst.max(rel(s.s1 * s.s3 - s.s2 * s.s2, s.det));
    }
    outcome(name, worst, 1e-12)
}

fn two_point_sinkhorn() -> Outcome {
    let name = "two-point entropic plan";
    let run = || -> entropic_jko::Result<f64> {
        let grid = Arc::new(Grid::with_convention(&[(0.0, 1.0)], &[2], GridConvention::Endpoint)?);
        let cost = CostSpec::weighted(Matrix::zeros(1), 1.0)?;
        let mut kernel = gibbs_kernel(&cost, &grid, 1.0, KernelOptions::default())?;
        let mu = Measure::uniform(grid.clone());
        let (plan, _) = sinkhorn(&mut kernel, &mu, &mu, &SinkhornOptions::default())?;
        let e = (-1.0_f64).exp();
        let (alpha, beta) = (0.5 / (1.0 + e), 0.5 * e / (1.0 + e));
        let mut worst = 0.0_f64;
        for i in 0..2 {
            for j in 0..2 {
                let want = if i == j { alpha } else { beta };
                worst = worst.max((plan.entry(&kernel, i, j) - want).abs());
            }
        }
        Ok(worst)
    };
    match run() {
        Ok(w) => outcome(name, w, 1e-9),
        Err(e) => failed(name, e),
    }
}

fn kernel_modes() -> Outcome {
    let name = "dense vs matrix-free products";
    let run = || -> entropic_jko::Result<f64> {
        let grid = Arc::new(Grid::new(&[(-0.5, 0.5), (-2.4, 2.4)], &[12, 8])?);
        let cost = CostSpec::kramers(ForceField::Zero, 1, 0.02)?;
        let dense = gibbs_kernel(&cost, &grid, 0.09, KernelOptions::dense())?;
        let free = gibbs_kernel(&cost, &grid, 0.09, KernelOptions::matrix_free())?;
        let v: Vec<f64> = (0..grid.len()).map(|i| 1.0 + points(i, 1)[0].abs()).collect();
        let m = grid.len();
        let (mut a, mut b, mut at, mut bt) = (vec![0.0; m], vec![0.0; m], vec![0.0; m], vec![0.0; m]);
        dense.apply(&v, &mut a)?;
        free.apply(&v, &mut b)?;
        dense.apply_transpose(&v, &mut at)?;
        free.apply_transpose(&v, &mut bt)?;
        let mut worst = 0.0_f64;
        for (a, b) in [(a, b), (at, bt)] {
            for (x, y) in a.iter().zip(&b) {
                worst = worst.max((x - y).abs() / x.abs().max(1e-300));
            }
        }
        Ok(worst)
    };
    match run() {
        Ok(w) => outcome(name, w, 1e-12),
        Err(e) => failed(name, e),
    }
}

pub fn run_all() -> Vec<Outcome> {
    let mut out = msd_identities();
    out.extend([cost_cross_check(), green_determinant(), two_point_sinkhorn(), kernel_modes()]);
    out
}
