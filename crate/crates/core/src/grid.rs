//! Polar mesh of the unit disk, grid functions and the discrete inner products.
//!
//! Nodes are `(i, j)` with `i` the angular index and `j` the radial index, both
//! zero-based here. The flat index is `i + j * n_phi`, so a vector lists the
//! origin ring first, then each ring outward, and the boundary ring `j = M - 1`
//! last.

use std::f64::consts::PI;
use std::ops::{Index, IndexMut};
use std::sync::Arc;

use crate::error::{Error, Result};

pub const MIN_PHI: usize = 8;
pub const MIN_RADIAL: usize = 3;

/// Nonuniform polar mesh of the unit disk.
#[derive(Debug, Clone, PartialEq)]
pub struct PolarGrid {
    n_phi: usize,
    n_radial: usize,
    phi: Vec<f64>,
    r: Vec<f64>,
    /// `dphi[i] = phi[i] - phi[i-1]`, with `dphi[0] = 2π - phi[N-1]`.
    dphi: Vec<f64>,
    /// Forward radial spacings: `dr[j] = r[j+1] - r[j]`, length `M - 1`.
    dr: Vec<f64>,
    quad_w: Vec<f64>,
}

impl PolarGrid {
    /// Builds the `n_phi x n_radial` mesh. Radii follow `r = 2s - s^2` with
    /// `s = j / (M - 1)`, so the spacing shrinks towards the rim.
    pub fn new(n_phi: usize, n_radial: usize) -> Result<Self> {
        if n_phi < MIN_PHI || n_radial < MIN_RADIAL {
            return Err(Error::GridSize { n_phi, n_radial });
        }
        let phi: Vec<f64> = (0..n_phi)
            .map(|i| 2.0 * PI * i as f64 / n_phi as f64)
            .collect();
        let r: Vec<f64> = (0..n_radial)
            .map(|j| {
                let s = j as f64 / (n_radial - 1) as f64;
                -2.0 * (0.5 * s * s - s)
            })
            .collect();
        let mut dphi = vec![0.0; n_phi];
        dphi[0] = 2.0 * PI - phi[n_phi - 1];
        for i in 1..n_phi {
            dphi[i] = phi[i] - phi[i - 1];
        }
        let dr: Vec<f64> = r.windows(2).map(|w| w[1] - w[0]).collect();

        // midpoint rule in phi, trapezoid rule on g(r) * r in r
        let mut radial_w = vec![0.0; n_radial];
        for j in 0..n_radial {
            let left = if j > 0 { dr[j - 1] } else { 0.0 };
            let right = if j + 1 < n_radial { dr[j] } else { 0.0 };
            radial_w[j] = 0.5 * (left + right) * r[j];
        }
        let mut quad_w = vec![0.0; n_phi * n_radial];
        for j in 0..n_radial {
            for i in 0..n_phi {
                quad_w[i + j * n_phi] = dphi[i] * radial_w[j];
            }
        }
        Ok(Self {
            n_phi,
            n_radial,
            phi,
            r,
            dphi,
            dr,
            quad_w,
        })
    }

    pub fn n_phi(&self) -> usize {
        self.n_phi
    }

    pub fn n_radial(&self) -> usize {
        self.n_radial
    }

    /// Number of nodes, `N * M`.
    pub fn len(&self) -> usize {
        self.n_phi * self.n_radial
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn phi(&self) -> &[f64] {
        &self.phi
    }

    pub fn r(&self) -> &[f64] {
        &self.r
    }

    pub fn dphi(&self) -> &[f64] {
        &self.dphi
    }

    pub fn dr(&self) -> &[f64] {
        &self.dr
    }

    pub fn quad_weights(&self) -> &[f64] {
        &self.quad_w
    }

    #[inline]
    pub fn index(&self, i: usize, j: usize) -> usize {
        debug_assert!(i < self.n_phi && j < self.n_radial);
        i + j * self.n_phi
    }

    /// Inverse of [`PolarGrid::index`].
    #[inline]
    pub fn node(&self, flat: usize) -> (usize, usize) {
        (flat % self.n_phi, flat / self.n_phi)
    }

    /// Angular neighbours `(i - 1, i + 1)` with periodic wrap.
    #[inline]
    pub fn angular_neighbours(&self, i: usize) -> (usize, usize) {
        let n = self.n_phi;
        ((i + n - 1) % n, (i + 1) % n)
    }

    /// Area of the finite-volume cell around the origin, `π (Δr₁/2)²`.
    pub fn origin_cell_area(&self) -> f64 {
        let half = 0.5 * self.dr[0];
        PI * half * half
    }

    pub fn is_boundary(&self, flat: usize) -> bool {
        flat / self.n_phi == self.n_radial - 1
    }

    pub fn is_origin(&self, flat: usize) -> bool {
        flat < self.n_phi
    }

    /// Cartesian coordinates of a node.
    pub fn xy(&self, flat: usize) -> (f64, f64) {
        let (i, j) = self.node(flat);
        let (s, c) = self.phi[i].sin_cos();
        (self.r[j] * c, self.r[j] * s)
    }
}

/// Real values sampled on every node of a [`PolarGrid`].
#[derive(Debug, Clone)]
pub struct ScalarField {
    grid: Arc<PolarGrid>,
    values: Vec<f64>,
}

impl PartialEq for ScalarField {
    fn eq(&self, other: &Self) -> bool {
        self.same_grid(other) && self.values == other.values
    }
}

impl ScalarField {
    pub fn zeros(grid: &Arc<PolarGrid>) -> Self {
        Self::constant(grid, 0.0)
    }

    pub fn constant(grid: &Arc<PolarGrid>, value: f64) -> Self {
        Self {
            grid: Arc::clone(grid),
            values: vec![value; grid.len()],
        }
    }

    /// Samples `f(phi, r)` on every node.
    pub fn from_polar(grid: &Arc<PolarGrid>, f: impl Fn(f64, f64) -> f64) -> Self {
        let values = (0..grid.len())
            .map(|k| {
                let (i, j) = grid.node(k);
                f(grid.phi[i], grid.r[j])
            })
            .collect();
        Self {
            grid: Arc::clone(grid),
            values,
        }
    }

    pub fn from_values(grid: &Arc<PolarGrid>, values: Vec<f64>) -> Result<Self> {
        if values.len() != grid.len() {
            return Err(Error::FieldLength {
                expected: grid.len(),
                found: values.len(),
            });
        }
        if let Some(k) = values.iter().position(|v| !v.is_finite()) {
            return Err(Error::NonFinite { index: k });
        }
        Ok(Self {
            grid: Arc::clone(grid),
            values,
        })
    }

    pub fn grid(&self) -> &Arc<PolarGrid> {
        &self.grid
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn values_mut(&mut self) -> &mut [f64] {
        &mut self.values
    }

    pub fn into_values(self) -> Vec<f64> {
        self.values
    }

    pub fn at(&self, i: usize, j: usize) -> f64 {
        self.values[self.grid.index(i, j)]
    }

    pub fn same_grid(&self, other: &ScalarField) -> bool {
        Arc::ptr_eq(&self.grid, &other.grid)
            || (self.grid.n_phi == other.grid.n_phi && self.grid.n_radial == other.grid.n_radial)
    }

    pub fn check_grid(&self, other: &ScalarField) -> Result<()> {
        if self.same_grid(other) {
            Ok(())
        } else {
            Err(Error::GridMismatch {
                left: (self.grid.n_phi, self.grid.n_radial),
                right: (other.grid.n_phi, other.grid.n_radial),
            })
        }
    }

    pub fn map(&self, f: impl Fn(f64) -> f64) -> Self {
        Self {
            grid: Arc::clone(&self.grid),
            values: self.values.iter().map(|&v| f(v)).collect(),
        }
    }

    /// Pointwise combination of two fields on the same grid.
    pub fn zip_with(&self, other: &ScalarField, f: impl Fn(f64, f64) -> f64) -> Result<Self> {
        self.check_grid(other)?;
        Ok(Self {
            grid: Arc::clone(&self.grid),
            values: self
                .values
                .iter()
                .zip(&other.values)
                .map(|(&a, &b)| f(a, b))
                .collect(),
        })
    }

    pub fn scaled(&self, a: f64) -> Self {
        self.map(|v| a * v)
    }

    /// `self + a * other`
    pub fn add_scaled(&self, a: f64, other: &ScalarField) -> Result<Self> {
        self.zip_with(other, |x, y| x + a * y)
    }

    pub fn max_abs(&self) -> f64 {
        self.values.iter().fold(0.0, |m, v| m.max(v.abs()))
    }

    pub fn max_abs_diff(&self, other: &ScalarField) -> Result<f64> {
        self.check_grid(other)?;
        Ok(self
            .values
            .iter()
            .zip(&other.values)
            .fold(0.0, |m, (a, b)| m.max((a - b).abs())))
    }

    /// Sets every node on the rim `r = 1` to zero.
    pub fn zero_boundary(&mut self) {
        let n = self.grid.n_phi;
        let start = n * (self.grid.n_radial - 1);
        self.values[start..].iter_mut().for_each(|v| *v = 0.0);
    }

    pub fn is_finite(&self) -> bool {
        self.values.iter().all(|v| v.is_finite())
    }
}

impl Index<usize> for ScalarField {
    type Output = f64;

    fn index(&self, k: usize) -> &f64 {
        &self.values[k]
    }
}

impl IndexMut<usize> for ScalarField {
    fn index_mut(&mut self, k: usize) -> &mut f64 {
        &mut self.values[k]
    }
}

/// Quadrature of `f` over the disk.
pub fn integrate(f: &ScalarField) -> f64 {
    f.grid
        .quad_w
        .iter()
        .zip(&f.values)
        .map(|(w, v)| w * v)
        .sum()
}

/// Discrete L² product induced by the quadrature.
pub fn l2_inner(f: &ScalarField, g: &ScalarField) -> Result<f64> {
    f.check_grid(g)?;
    Ok(f.grid
        .quad_w
        .iter()
        .zip(f.values.iter().zip(&g.values))
        .map(|(w, (a, b))| w * a * b)
        .sum())
}

/// Discrete H¹ product: the L² part, the origin cell, and staggered
/// difference quotients on the radial and angular mesh edges. Each edge
/// carries the face length over the node distance, so the form matches the
/// energy of the assembled five-point Laplacian.
pub fn h1_inner(f: &ScalarField, g: &ScalarField) -> Result<f64> {
    f.check_grid(g)?;
    let grid = &f.grid;
    let (n, m) = (grid.n_phi, grid.n_radial);
    let (r, dr, dphi) = (&grid.r, &grid.dr, &grid.dphi);
    let (a, b) = (&f.values, &g.values);
    let mut total = l2_inner(f, g)? + grid.origin_cell_area() * a[0] * b[0];
    for j in 0..m - 1 {
        let face = 0.5 * (r[j] + r[j + 1]) / dr[j];
        for i in 0..n {
            let (lo, hi) = (i + j * n, i + (j + 1) * n);
            total += dphi[i] * face * (a[hi] - a[lo]) * (b[hi] - b[lo]);
        }
    }
    for j in 1..m {
        let left = dr[j - 1];
        let right = if j + 1 < m { dr[j] } else { 0.0 };
        let span = 0.5 * (left + right) / r[j];
        for i in 0..n {
            let (_, ip) = grid.angular_neighbours(i);
            let (here, next) = (i + j * n, ip + j * n);
            total += span / dphi[ip] * (a[next] - a[here]) * (b[next] - b[here]);
        }
    }
    Ok(total)
}

pub fn h1_norm(f: &ScalarField) -> f64 {
    h1_inner(f, f).expect("same field").max(0.0).sqrt()
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use proptest::prelude::*;

    fn grid(n: usize, m: usize) -> Arc<PolarGrid> {
        Arc::new(PolarGrid::new(n, m).unwrap())
    }

    #[test]
    fn rejects_small_sizes() {
        assert!(matches!(PolarGrid::new(7, 10), Err(Error::GridSize { .. })));
        assert!(matches!(PolarGrid::new(8, 2), Err(Error::GridSize { .. })));
    }

    #[test]
    fn paper_default_grid() {
        let g = PolarGrid::new(150, 100).unwrap();
        for &d in g.dphi() {
            assert_relative_eq!(d, 2.0 * PI / 150.0, epsilon = 1e-14);
        }
        assert_eq!(g.r()[0], 0.0);
        assert_eq!(g.r()[99], 1.0);
        assert!(g.r().windows(2).all(|w| w[1] > w[0]));
    }

    #[test]
    fn three_ring_radii() {
        let g = PolarGrid::new(8, 3).unwrap();
        assert_eq!(g.r(), &[0.0, 0.75, 1.0]);
        assert_eq!(g.dr(), &[0.75, 0.25]);
    }

    #[test]
    fn radius_formula_and_spacing() {
        let g = PolarGrid::new(16, 11).unwrap();
        for (j, &r) in g.r().iter().enumerate() {
            let s = j as f64 / 10.0;
            assert_relative_eq!(r, -2.0 * (0.5 * s * s - s), epsilon = 1e-15);
        }
        // spacing shrinks towards the rim
        assert!(g.dr().windows(2).all(|w| w[1] < w[0]));
    }

    #[test]
    fn flat_index_is_bijection() {
        let g = PolarGrid::new(9, 5).unwrap();
        let mut seen = vec![false; g.len()];
        for j in 0..5 {
            for i in 0..9 {
                let k = g.index(i, j);
                assert!(!seen[k]);
                seen[k] = true;
                assert_eq!(g.node(k), (i, j));
            }
        }
        assert!(seen.iter().all(|&s| s));
        assert_eq!(g.index(1, 0), 1);
        assert_eq!(g.index(0, 1), 9);
    }

    #[test]
    fn disk_area() {
        let g = grid(64, 48);
        let area: f64 = g.quad_weights().iter().sum();
        assert!(g.quad_weights().iter().all(|&w| w >= 0.0));
        assert!((area - PI).abs() / PI < 1e-3);
        assert_eq!(g.quad_weights()[0], 0.0);
        assert!((integrate(&ScalarField::constant(&g, 1.0)) - PI).abs() < 1e-3);
        assert_eq!(integrate(&ScalarField::zeros(&g)), 0.0);
    }

    #[test]
    fn quadrature_refinement() {
        // trapezoid on r dr is exact, so the area is exact up to round-off;
        // the r² moment carries the actual discretization error
        let err = |m: usize| {
            let g = Arc::new(PolarGrid::new(32, m).unwrap());
            let area = g.quad_weights().iter().sum::<f64>();
            assert!((area - PI).abs() < 1e-12);
            let f = ScalarField::from_polar(&g, |_, r| r * r);
            (integrate(&f) - PI / 2.0).abs()
        };
        let (e24, e48, e96) = (err(24), err(48), err(96));
        assert!(e48 < e24 && e96 < e48, "{e24} {e48} {e96}");
    }

    #[test]
    fn second_moment() {
        // ∫ r² dA = π/2
        let g = grid(64, 48);
        let f = ScalarField::from_polar(&g, |_, r| r * r);
        assert!((integrate(&f) - PI / 2.0).abs() / (PI / 2.0) < 1e-3);
        let rr = ScalarField::from_polar(&g, |_, r| r);
        assert!((l2_inner(&rr, &rr).unwrap() - PI / 2.0).abs() / (PI / 2.0) < 1e-3);
    }

    #[test]
    fn l2_basic_values() {
        let g = grid(64, 48);
        let one = ScalarField::constant(&g, 1.0);
        let zero = ScalarField::zeros(&g);
        assert!((l2_inner(&one, &one).unwrap() - PI).abs() < 1e-3);
        assert_eq!(l2_inner(&one, &zero).unwrap(), 0.0);
    }

    #[test]
    fn grid_mismatch_is_an_error() {
        let a = ScalarField::zeros(&grid(8, 4));
        let b = ScalarField::zeros(&grid(8, 5));
        assert!(matches!(l2_inner(&a, &b), Err(Error::GridMismatch { .. })));
        assert!(matches!(h1_inner(&a, &b), Err(Error::GridMismatch { .. })));
    }

    #[test]
    fn h1_of_constants() {
        let g = grid(64, 48);
        assert_eq!(
            h1_inner(&ScalarField::zeros(&g), &ScalarField::zeros(&g)).unwrap(),
            0.0
        );
        let c = ScalarField::constant(&g, 1.5);
        let v = h1_inner(&c, &c).unwrap();
        assert!((v - 2.25 * PI).abs() < 2.25 * 1e-3 * PI);
    }

    #[test]
    fn h1_of_smooth_field_converges() {
        // ∫ (1-r²)² + |∇(1-r²)|² over the disk is π/3 + 2π
        let exact = PI / 3.0 + 2.0 * PI;
        let errs: Vec<f64> = [(32, 24), (64, 48), (128, 96)]
            .iter()
            .map(|&(n, m)| {
                let g = grid(n, m);
                let f = ScalarField::from_polar(&g, |_, r| 1.0 - r * r);
                (h1_inner(&f, &f).unwrap() - exact).abs()
            })
            .collect();
        assert!(errs[2] < 1e-3 * exact);
        assert!(errs[1] < errs[0] && errs[2] < errs[1]);
    }

    #[test]
    fn h1_is_symmetric() {
        let g = grid(16, 8);
        let f = ScalarField::from_polar(&g, |p, r| (1.0 - r) * (3.0 * p).sin() + r);
        let h = ScalarField::from_polar(&g, |p, r| r * r * p.cos());
        let (a, b) = (h1_inner(&f, &h).unwrap(), h1_inner(&h, &f).unwrap());
        assert!((a - b).abs() < 1e-14 * a.abs().max(1.0));
    }

    #[test]
    fn from_values_validates() {
        let g = grid(8, 4);
        assert!(ScalarField::from_values(&g, vec![0.0; 31]).is_err());
        let mut v = vec![0.0; 32];
        v[3] = f64::NAN;
        assert!(matches!(
            ScalarField::from_values(&g, v),
            Err(Error::NonFinite { index: 3 })
        ));
    }

    proptest! {
        #[test]
        fn h1_dominates_l2(values in proptest::collection::vec(-5.0f64..5.0, 16 * 6)) {
            let g = grid(16, 6);
            let f = ScalarField::from_values(&g, values).unwrap();
            let l2 = l2_inner(&f, &f).unwrap();
            let h1 = h1_inner(&f, &f).unwrap();
            prop_assert!(l2 >= 0.0);
            prop_assert!(h1 >= l2);
        }

        #[test]
        fn l2_is_symmetric_and_bilinear(
            a in proptest::collection::vec(-2.0f64..2.0, 8 * 4),
            b in proptest::collection::vec(-2.0f64..2.0, 8 * 4),
            s in -3.0f64..3.0,
        ) {
            let g = grid(8, 4);
            let f = ScalarField::from_values(&g, a).unwrap();
            let h = ScalarField::from_values(&g, b).unwrap();
            let fh = l2_inner(&f, &h).unwrap();
            prop_assert!((fh - l2_inner(&h, &f).unwrap()).abs() < 1e-12);
            let lhs = l2_inner(&f.add_scaled(s, &h).unwrap(), &h).unwrap();
            let rhs = fh + s * l2_inner(&h, &h).unwrap();
            prop_assert!((lhs - rhs).abs() < 1e-10);
        }
    }
}
