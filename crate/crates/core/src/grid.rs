//! Uniform grids, discrete probability measures on them, and the elementary
//! functionals (moments, entropy, L¹ distance, marginals).
//!
//! Points are stored row-major with the last axis varying fastest. A measure
//! holds probability *masses*; its density with respect to the discrete
//! Lebesgue measure `λ Σ δ_{x_i}` is `weights / λ`.

use std::fmt::Write as _;
use std::sync::Arc;

use crate::error::{Error, Result};
use crate::scalar::{compensated_sum, Real};

/// Where the `count` points of an axis sit inside `[lower, upper]`.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub enum GridConvention {
    /// Midpoints of `count` equal cells; spacing `(upper - lower) / count`.
    #[default]
    CellCenter,
    /// Both endpoints included; spacing `(upper - lower) / (count - 1)`.
    Endpoint,
}

/// Axis-aligned uniform grid on a box in ℝᵈ.
#[derive(Clone, Debug, PartialEq)]
pub struct UniformGrid<S> {
    lower: Vec<S>,
    upper: Vec<S>,
    counts: Vec<usize>,
    spacing: Vec<S>,
    convention: GridConvention,
    tile_volume: S,
    len: usize,
}

impl<S: Real> UniformGrid<S> {
    /// Cell-centred grid over `bounds` with `counts` points per axis.
    pub fn new(bounds: &[(S, S)], counts: &[usize]) -> Result<Self> {
        Self::with_convention(bounds, counts, GridConvention::CellCenter)
    }

    pub fn with_convention(
        bounds: &[(S, S)],
        counts: &[usize],
        convention: GridConvention,
    ) -> Result<Self> {
        if bounds.is_empty() || bounds.len() != counts.len() {
            return Err(Error::DimensionMismatch { expected: bounds.len(), got: counts.len() });
        }
        let mut spacing = Vec::with_capacity(bounds.len());
        for (axis, (&(lo, hi), &n)) in bounds.iter().zip(counts).enumerate() {
            if !(lo.is_finite() && hi.is_finite() && hi > lo) {
                return Err(Error::DegenerateInterval {
                    axis,
                    lower: lo.to_f64_lossy(),
                    upper: hi.to_f64_lossy(),
                });
            }
            if n < 2 {
                return Err(Error::TooFewPoints { axis, count: n });
            }
            let cells = match convention {
                GridConvention::CellCenter => n,
                GridConvention::Endpoint => n - 1,
            };
            spacing.push((hi - lo) / S::from_usize_lossy(cells));
        }
        let tile_volume = spacing.iter().fold(S::one(), |acc, &s| acc * s);
        Ok(Self {
            lower: bounds.iter().map(|b| b.0).collect(),
            upper: bounds.iter().map(|b| b.1).collect(),
            counts: counts.to_vec(),
            spacing,
            convention,
            tile_volume,
            len: counts.iter().product(),
        })
    }

    #[inline]
    pub fn dim(&self) -> usize {
        self.counts.len()
    }

    /// Total number of points `M`.
    #[inline]
    pub fn len(&self) -> usize {
        self.len
    }

    #[inline]
    pub fn is_empty(&self) -> bool {
        self.len == 0
    }

    /// Volume `λ` of one grid tile.
    #[inline]
    pub fn tile_volume(&self) -> S {
        self.tile_volume
    }

    pub fn counts(&self) -> &[usize] {
        &self.counts
    }

    pub fn spacing(&self) -> &[S] {
        &self.spacing
    }

    pub fn bounds(&self) -> Vec<(S, S)> {
        self.lower.iter().copied().zip(self.upper.iter().copied()).collect()
    }

    pub fn convention(&self) -> GridConvention {
        self.convention
    }

    /// Coordinate of the `k`-th point along `axis`.
    #[inline]
    pub fn axis_coord(&self, axis: usize, k: usize) -> S {
        let offset = match self.convention {
            GridConvention::CellCenter => S::from_usize_lossy(k) + S::lit(0.5),
            GridConvention::Endpoint => S::from_usize_lossy(k),
        };
        self.lower[axis] + offset * self.spacing[axis]
    }

    /// All coordinates along `axis`.
    pub fn axis_points(&self, axis: usize) -> Vec<S> {
        (0..self.counts[axis]).map(|k| self.axis_coord(axis, k)).collect()
    }

    /// Per-axis indices of flat index `i`.
    pub fn multi_index(&self, mut i: usize) -> Vec<usize> {
        let mut idx = vec![0; self.dim()];
        for axis in (0..self.dim()).rev() {
            idx[axis] = i % self.counts[axis];
            i /= self.counts[axis];
        }
        idx
    }

    pub fn flat_index(&self, idx: &[usize]) -> usize {
        idx.iter().zip(&self.counts).fold(0, |acc, (&k, &n)| acc * n + k)
    }

    /// Writes the coordinates of point `i` into `out`.
    pub fn point_into(&self, mut i: usize, out: &mut [S]) {
        for axis in (0..self.dim()).rev() {
            let n = self.counts[axis];
            out[axis] = self.axis_coord(axis, i % n);
            i /= n;
        }
    }

    pub fn point(&self, i: usize) -> Vec<S> {
        let mut p = vec![S::zero(); self.dim()];
        self.point_into(i, &mut p);
        p
    }

    /// Flattened `M × d` coordinate table in storage order.
    pub fn coordinates(&self) -> Vec<S> {
        let d = self.dim();
        let mut out = vec![S::zero(); self.len * d];
        for (i, chunk) in out.chunks_mut(d).enumerate() {
            self.point_into(i, chunk);
        }
        out
    }

    /// Grid restricted to the listed axes (in the given order).
    pub fn sub_grid(&self, axes: &[usize]) -> Result<Self> {
        validate_axes(axes, self.dim())?;
        let bounds: Vec<_> = axes.iter().map(|&a| (self.lower[a], self.upper[a])).collect();
        let counts: Vec<_> = axes.iter().map(|&a| self.counts[a]).collect();
        Self::with_convention(&bounds, &counts, self.convention)
    }
}

fn validate_axes(axes: &[usize], dim: usize) -> Result<()> {
    let mut seen = vec![false; dim];
    if axes.is_empty() {
        return Err(Error::InvalidAxes { dim });
    }
    for &a in axes {
        if a >= dim || seen[a] {
            return Err(Error::InvalidAxes { dim });
        }
        seen[a] = true;
    }
    Ok(())
}

/// Probability measure supported on the points of a [`UniformGrid`].
#[derive(Clone, Debug, PartialEq)]
pub struct DiscreteMeasure<S> {
    grid: Arc<UniformGrid<S>>,
    weights: Vec<S>,
    raw_mass: S,
}

impl<S: Real> DiscreteMeasure<S> {
    /// Normalises nonnegative `weights`; the mass before normalisation is kept
    /// as a diagnostic (see [`raw_mass`](Self::raw_mass)).
    pub fn from_weights(grid: Arc<UniformGrid<S>>, weights: Vec<S>) -> Result<Self> {
        if weights.len() != grid.len() {
            return Err(Error::DimensionMismatch { expected: grid.len(), got: weights.len() });
        }
        if let Some((i, w)) = weights.iter().enumerate().find(|(_, w)| !(w.is_finite() && **w >= S::zero())) {
            return Err(Error::InvalidWeights(format!("weight {i} is {w}")));
        }
        let raw_mass = compensated_sum(weights.iter().copied());
        if !(raw_mass > S::zero()) || !raw_mass.is_finite() {
            return Err(Error::InvalidWeights(format!("total mass {raw_mass}")));
        }
        let weights = weights.into_iter().map(|w| w / raw_mass).collect();
        Ok(Self { grid, weights, raw_mass })
    }

    /// Samples a density at the grid points, multiplies by `λ` and normalises.
    pub fn from_density(grid: Arc<UniformGrid<S>>, density: impl Fn(&[S]) -> S) -> Result<Self> {
        let lambda = grid.tile_volume();
        let mut p = vec![S::zero(); grid.dim()];
        let weights = (0..grid.len())
            .map(|i| {
                grid.point_into(i, &mut p);
                density(&p) * lambda
            })
            .collect();
        Self::from_weights(grid, weights)
    }

    /// Isotropic normal density `N(mean, variance·I)` sampled on the grid.
    pub fn gaussian(grid: Arc<UniformGrid<S>>, mean: &[S], variance: S) -> Result<Self> {
        if mean.len() != grid.dim() {
            return Err(Error::DimensionMismatch { expected: grid.dim(), got: mean.len() });
        }
        if !(variance > S::zero()) {
            return Err(Error::InvalidParameter { name: "variance", reason: format!("must be positive, got {variance}") });
        }
        let two_var = variance + variance;
        Self::from_density(grid, |x| {
            let r2: S = x.iter().zip(mean).map(|(&a, &m)| (a - m) * (a - m)).sum();
            (-r2 / two_var).exp()
        })
    }

    pub fn uniform(grid: Arc<UniformGrid<S>>) -> Self {
        let m = grid.len();
        let w = S::one() / S::from_usize_lossy(m);
        Self { grid, weights: vec![w; m], raw_mass: S::one() }
    }

    /// Unit mass at flat index `index`.
    pub fn dirac(grid: Arc<UniformGrid<S>>, index: usize) -> Result<Self> {
        if index >= grid.len() {
            return Err(Error::DimensionMismatch { expected: grid.len(), got: index });
        }
        let mut weights = vec![S::zero(); grid.len()];
        weights[index] = S::one();
        Ok(Self { grid, weights, raw_mass: S::one() })
    }

    pub fn grid(&self) -> &Arc<UniformGrid<S>> {
        &self.grid
    }

    pub fn weights(&self) -> &[S] {
        &self.weights
    }

    pub fn into_weights(self) -> Vec<S> {
        self.weights
    }

    /// Total mass before normalisation.
    pub fn raw_mass(&self) -> S {
        self.raw_mass
    }

    pub fn total_mass(&self) -> S {
        compensated_sum(self.weights.iter().copied())
    }

    /// Density values `weights / λ`.
    pub fn density(&self) -> Vec<S> {
        let lambda = self.grid.tile_volume();
        self.weights.iter().map(|&w| w / lambda).collect()
    }

    pub fn same_grid(&self, other: &Self) -> bool {
        Arc::ptr_eq(&self.grid, &other.grid) || *self.grid == *other.grid
    }

    /// `Σ ‖x_i‖² μ_i`.
    pub fn second_moment(&self) -> S {
        let d = self.grid.dim();
        let mut p = vec![S::zero(); d];
        compensated_sum(self.weights.iter().enumerate().map(|(i, &w)| {
            self.grid.point_into(i, &mut p);
            w * p.iter().map(|&x| x * x).sum::<S>()
        }))
    }

    /// Mean coordinate along every axis.
    pub fn mean(&self) -> Vec<S> {
        let d = self.grid.dim();
        let mut acc = vec![S::zero(); d];
        let mut p = vec![S::zero(); d];
        for (i, &w) in self.weights.iter().enumerate() {
            self.grid.point_into(i, &mut p);
            for (a, &x) in acc.iter_mut().zip(&p) {
                *a += w * x;
            }
        }
        acc
    }

    /// Discrete negative Boltzmann entropy `Σ μ_i log(μ_i / λ)` with
    /// `0 log 0 = 0`.
    pub fn entropy(&self) -> S {
        let lambda = self.grid.tile_volume();
        compensated_sum(
            self.weights
                .iter()
                .map(|&w| if w > S::zero() { w * (w / lambda).ln() } else { S::zero() }),
        )
    }

    /// L¹(Λ) distance of the densities, i.e. `Σ |μ_i - ν_i|`.
    pub fn l1_distance(&self, other: &Self) -> Result<S> {
        if !self.same_grid(other) {
            return Err(Error::GridMismatch);
        }
        Ok(compensated_sum(self.weights.iter().zip(&other.weights).map(|(&a, &b)| (a - b).abs())))
    }

    /// Marginal on the listed axes (result axes ordered as given).
    pub fn marginal(&self, axes: &[usize]) -> Result<Self> {
        let sub = Arc::new(self.grid.sub_grid(axes)?);
        let mut out = vec![S::zero(); sub.len()];
        let mut sub_idx = vec![0; axes.len()];
        for (i, &w) in self.weights.iter().enumerate() {
            let idx = self.grid.multi_index(i);
            for (k, &a) in axes.iter().enumerate() {
                sub_idx[k] = idx[a];
            }
            out[sub.flat_index(&sub_idx)] += w;
        }
        Self::from_weights(sub, out)
    }

    /// CSV with header `index,coord_1,...,coord_d,weight`, one row per point,
    /// 17 significant digits.
    pub fn to_csv(&self) -> String {
        let d = self.grid.dim();
        let mut s = String::with_capacity(self.weights.len() * (d + 2) * 24);
        s.push_str("index");
        for k in 1..=d {
            let _ = write!(s, ",coord_{k}");
        }
        s.push_str(",weight\n");
        let mut p = vec![S::zero(); d];
        for (i, &w) in self.weights.iter().enumerate() {
            self.grid.point_into(i, &mut p);
            let _ = write!(s, "{i}");
            for &x in &p {
                let _ = write!(s, ",{}", fmt_float(x));
            }
            let _ = writeln!(s, ",{}", fmt_float(w));
        }
        s
    }

    /// Parses the CSV written by [`to_csv`](Self::to_csv) onto `grid`,
    /// checking indices and coordinates.
    pub fn from_csv(grid: Arc<UniformGrid<S>>, text: &str) -> Result<Self> {
        let d = grid.dim();
        let mut lines = text.lines().filter(|l| !l.trim().is_empty());
        let header = lines.next().ok_or_else(|| Error::Parse("empty measure file".into()))?;
        let cols: Vec<&str> = header.split(',').map(str::trim).collect();
        if cols.len() != d + 2 || cols[0] != "index" || cols[d + 1] != "weight" {
            return Err(Error::Parse(format!("unexpected header `{header}` for a {d}-dimensional grid")));
        }
        let mut weights = vec![S::zero(); grid.len()];
        let mut seen = 0usize;
        let mut p = vec![S::zero(); d];
        for (row, line) in lines.enumerate() {
            let fields: Vec<&str> = line.split(',').map(str::trim).collect();
            if fields.len() != d + 2 {
                return Err(Error::Parse(format!("row {row}: expected {} fields", d + 2)));
            }
            let i: usize = fields[0]
                .parse()
                .map_err(|_| Error::Parse(format!("row {row}: bad index `{}`", fields[0])))?;
            if i >= grid.len() {
                return Err(Error::Parse(format!("row {row}: index {i} out of range")));
            }
            grid.point_into(i, &mut p);
            for (k, &x) in p.iter().enumerate() {
                let c = parse_float::<S>(fields[k + 1], row)?;
                let tol = S::lit(1e-9) * (S::one() + x.abs());
                if (c - x).abs() > tol {
                    return Err(Error::Parse(format!("row {row}: coordinate {} does not match the grid", k + 1)));
                }
            }
            weights[i] = parse_float(fields[d + 1], row)?;
            seen += 1;
        }
        if seen != grid.len() {
            return Err(Error::Parse(format!("expected {} rows, found {seen}", grid.len())));
        }
        Self::from_weights(grid, weights)
    }
}

fn parse_float<S: Real>(field: &str, row: usize) -> Result<S> {
    field
        .parse::<f64>()
        .ok()
        .and_then(S::from_f64)
        .ok_or_else(|| Error::Parse(format!("row {row}: bad number `{field}`")))
}

/// 17-significant-digit scientific formatting used by every CSV writer.
pub fn fmt_float<S: Real>(x: S) -> String {
    format!("{:.16e}", x.to_f64_lossy())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn grid1(lo: f64, hi: f64, n: usize) -> Arc<UniformGrid<f64>> {
        Arc::new(UniformGrid::new(&[(lo, hi)], &[n]).unwrap())
    }

    #[test]
    fn endpoint_two_point_grid() {
        let g = UniformGrid::with_convention(&[(0.0, 1.0)], &[2], GridConvention::Endpoint).unwrap();
        assert_eq!(g.axis_points(0), vec![0.0, 1.0]);
        assert_eq!(g.spacing(), &[1.0]);
        assert_eq!(g.tile_volume(), 1.0);
    }

    #[test]
    fn cell_center_kramers_grid_has_area_per_point() {
        let g = UniformGrid::<f64>::new(&[(-0.5, 0.5), (-2.4, 2.4)], &[200, 130]).unwrap();
        assert_eq!(g.len(), 26_000);
        let expect = 4.8 / 26_000.0;
        assert!((g.tile_volume() - expect).abs() <= 1e-12 * expect);
        let spacing_product: f64 = g.spacing().iter().product();
        assert!((g.tile_volume() - spacing_product).abs() <= 1e-12 * expect);
    }

    #[test]
    fn degenerate_inputs_rejected() {
        assert_eq!(
            UniformGrid::new(&[(0.0, 1.0)], &[1]),
            Err(Error::TooFewPoints { axis: 0, count: 1 })
        );
        assert!(matches!(
            UniformGrid::new(&[(1.0, 1.0)], &[4]),
            Err(Error::DegenerateInterval { axis: 0, .. })
        ));
    }

    #[test]
    fn storage_order_last_axis_fastest() {
        let g = UniformGrid::with_convention(&[(0.0, 1.0), (0.0, 2.0)], &[2, 3], GridConvention::Endpoint).unwrap();
        assert_eq!(g.point(1), vec![0.0, 1.0]);
        assert_eq!(g.point(3), vec![1.0, 0.0]);
        assert_eq!(g.multi_index(5), vec![1, 2]);
        assert_eq!(g.flat_index(&[1, 2]), 5);
    }

    #[test]
    fn moment_examples() {
        let g = Arc::new(UniformGrid::with_convention(&[(-1.0, 1.0)], &[3], GridConvention::Endpoint).unwrap());
        let origin = DiscreteMeasure::dirac(g.clone(), 1).unwrap();
        assert_eq!(origin.second_moment(), 0.0);
        let two = DiscreteMeasure::from_weights(g, vec![0.5, 0.0, 0.5]).unwrap();
        assert_eq!(two.second_moment(), 1.0);
    }

    #[test]
    fn entropy_examples() {
        let g = grid1(0.0, 3.0, 6);
        let u = DiscreteMeasure::uniform(g.clone());
        let expect = (1.0 / (6.0 * g.tile_volume())).ln();
        assert!((u.entropy() - expect).abs() < 1e-14);
        let unit = Arc::new(UniformGrid::new(&[(0.0, 3.0)], &[3]).unwrap());
        assert_eq!(DiscreteMeasure::dirac(unit, 2).unwrap().entropy(), 0.0);
    }

    #[test]
    fn l1_examples_and_errors() {
        let g = grid1(0.0, 1.0, 4);
        let a = DiscreteMeasure::from_weights(g.clone(), vec![0.5, 0.5, 0.0, 0.0]).unwrap();
        let b = DiscreteMeasure::from_weights(g.clone(), vec![0.0, 0.0, 0.2, 0.8]).unwrap();
        assert_eq!(a.l1_distance(&a).unwrap(), 0.0);
        assert!((a.l1_distance(&b).unwrap() - 2.0).abs() < 1e-15);
        let other = DiscreteMeasure::uniform(grid1(0.0, 2.0, 4));
        assert_eq!(a.l1_distance(&other), Err(Error::GridMismatch));
    }

    #[test]
    fn normalisation_records_raw_mass() {
        let g = grid1(0.0, 1.0, 2);
        let m = DiscreteMeasure::from_weights(g.clone(), vec![1.0, 3.0]).unwrap();
        assert_eq!(m.raw_mass(), 4.0);
        assert_eq!(m.weights(), &[0.25, 0.75]);
        assert!(DiscreteMeasure::from_weights(g.clone(), vec![-1.0, 2.0]).is_err());
        assert!(DiscreteMeasure::from_weights(g, vec![0.0, 0.0]).is_err());
    }

    #[test]
    fn marginal_of_product_and_identity() {
        let g = Arc::new(UniformGrid::new(&[(0.0, 1.0), (0.0, 1.0)], &[2, 3]).unwrap());
        let px = [0.3, 0.7];
        let pv = [0.2, 0.5, 0.3];
        let w: Vec<f64> = (0..6).map(|i| px[i / 3] * pv[i % 3]).collect();
        let m = DiscreteMeasure::from_weights(g, w).unwrap();
        let mx = m.marginal(&[0]).unwrap();
        let mv = m.marginal(&[1]).unwrap();
        for (a, b) in mx.weights().iter().zip(px) {
            assert!((a - b).abs() < 1e-15);
        }
        for (a, b) in mv.weights().iter().zip(pv) {
            assert!((a - b).abs() < 1e-15);
        }
        assert_eq!(m.marginal(&[]), Err(Error::InvalidAxes { dim: 2 }));
        let g1 = grid1(0.0, 1.0, 3);
        let m1 = DiscreteMeasure::from_weights(g1, vec![0.2, 0.3, 0.5]).unwrap();
        assert_eq!(m1.marginal(&[0]).unwrap().weights(), m1.weights());
    }

    #[test]
    fn csv_round_trip_and_header() {
        let g = Arc::new(UniformGrid::new(&[(-1.0, 1.0), (0.0, 1.0)], &[3, 2]).unwrap());
        let m = DiscreteMeasure::from_weights(g.clone(), vec![1.0, 2.0, 3.0, 4.0, 5.0, 6.0]).unwrap();
        let text = m.to_csv();
        assert!(text.starts_with("index,coord_1,coord_2,weight\n"));
        let back = DiscreteMeasure::from_csv(g, &text).unwrap();
        assert_eq!(back.weights(), m.weights());
    }

    #[test]
    fn float_format_has_17_significant_digits() {
        assert_eq!(fmt_float(0.1_f64), "1.0000000000000001e-1");
        assert_eq!(fmt_float(0.1_f64).parse::<f64>().unwrap(), 0.1);
    }
}
