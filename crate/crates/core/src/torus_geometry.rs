//! Periodic grid calculus on the unit-area flat square torus `R^2 / Z^2`.
//!
//! Samples sit at `p_ij = (i h, j h)` with `h = 1/N`; the flat index is
//! `i N + j`, so `i` runs along `x_1` and `j` along `x_2`. All difference
//! operators wrap periodically, and integrals are plain sample sums times
//! `h^2`.

use alloc::vec;
use alloc::vec::Vec;
use core::fmt;

use crate::math::{ln, sqrt, wrap_half};
use crate::vec3::{self, Vec3};

/// Half the injectivity radius of the unit square torus.
pub const IOTA: f64 = 0.25;
/// Radius of the coordinate disc `F_a(B_iota(a))`.
pub const R0: f64 = IOTA;
/// Largest admissible `lambda * h`; the bubble core then spans at least five cells.
pub const MAX_LAMBDA_H: f64 = 0.2;
/// Smallest supported grid resolution.
pub const MIN_GRID_N: usize = 16;
/// Tolerance on `| |u| - 1 |` for fields flagged as sphere-valued.
pub const ON_SPHERE_TOL: f64 = 1e-12;

#[derive(Debug, Clone, PartialEq)]
pub enum GeometryError {
    GridTooSmall(usize),
    /// `lambda * h` exceeds [`MAX_LAMBDA_H`].
    Underresolved { lambda: f64, h: f64 },
    LengthMismatch { expected: usize, found: usize },
    GridMismatch,
    NonFinite,
    NotOnSphere { index: usize, deviation: f64 },
}

impl fmt::Display for GeometryError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Self::GridTooSmall(n) => write!(f, "grid resolution {n} is below {MIN_GRID_N}"),
            Self::Underresolved { lambda, h } => write!(
                f,
                "lambda*h = {} exceeds {MAX_LAMBDA_H} (lambda = {lambda}, h = {h})",
                lambda * h
            ),
            Self::LengthMismatch { expected, found } => {
                write!(f, "expected {expected} samples, found {found}")
            }
            Self::GridMismatch => write!(f, "fields live on different grids"),
            Self::NonFinite => write!(f, "field contains non-finite values"),
            Self::NotOnSphere { index, deviation } => {
                write!(f, "sample {index} is off the sphere by {deviation:e}")
            }
        }
    }
}

impl core::error::Error for GeometryError {}

/// `N x N` periodic sampling of the unit fundamental domain `[0,1)^2`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct ToroidalGrid {
    n: usize,
}

impl ToroidalGrid {
    pub fn new(n: usize) -> Result<Self, GeometryError> {
        if n < MIN_GRID_N {
            return Err(GeometryError::GridTooSmall(n));
        }
        Ok(Self { n })
    }

    #[inline]
    pub fn n(&self) -> usize {
        self.n
    }

    #[inline]
    pub fn h(&self) -> f64 {
        1.0 / self.n as f64
    }

    #[inline]
    pub fn len(&self) -> usize {
        self.n * self.n
    }

    #[inline]
    pub fn is_empty(&self) -> bool {
        false
    }

    /// Flat index of `(i, j)` with periodic wrapping in both directions.
    #[inline]
    pub fn index(&self, i: isize, j: isize) -> usize {
        let n = self.n as isize;
        (i.rem_euclid(n) * n + j.rem_euclid(n)) as usize
    }

    #[inline]
    pub fn coords(&self, idx: usize) -> (usize, usize) {
        (idx / self.n, idx % self.n)
    }

    #[inline]
    pub fn point(&self, idx: usize) -> [f64; 2] {
        let (i, j) = self.coords(idx);
        [i as f64 * self.h(), j as f64 * self.h()]
    }

    /// Index of the sample nearest to the torus point `p`.
    pub fn nearest(&self, p: [f64; 2]) -> usize {
        let n = self.n as f64;
        let i = crate::math::round(p[0] * n) as isize;
        let j = crate::math::round(p[1] * n) as isize;
        self.index(i, j)
    }

    /// Enforces the resolution rule `lambda * h <= 0.2`.
    pub fn check_resolution(&self, lambda: f64) -> Result<(), GeometryError> {
        if lambda * self.h() > MAX_LAMBDA_H * (1.0 + 1e-12) {
            return Err(GeometryError::Underresolved { lambda, h: self.h() });
        }
        Ok(())
    }
}

/// `F_a(p)`: the representative of `p - a` in `[-1/2, 1/2)^2`.
#[inline]
pub fn translate_coords(a: [f64; 2], p: [f64; 2]) -> [f64; 2] {
    [wrap_half(p[0] - a[0]), wrap_half(p[1] - a[1])]
}

/// `F_a^{-1}(x)`, reduced to `[0, 1)^2`.
#[inline]
pub fn translate_coords_inv(a: [f64; 2], x: [f64; 2]) -> [f64; 2] {
    let reduce = |t: f64| {
        let r = t - crate::math::floor(t);
        if r >= 1.0 {
            0.0
        } else {
            r
        }
    };
    [reduce(a[0] + x[0]), reduce(a[1] + x[1])]
}

/// A scalar sample per grid point.
#[derive(Debug, Clone, PartialEq)]
pub struct ScalarField {
    pub grid: ToroidalGrid,
    pub values: Vec<f64>,
}

impl ScalarField {
    /// `Σ f h^2`
    pub fn integral(&self) -> f64 {
        let h = self.grid.h();
        self.values.iter().sum::<f64>() * h * h
    }
}

/// A map from the torus grid into `R^3`.
#[derive(Debug, Clone, PartialEq)]
pub struct ToroidalField3 {
    grid: ToroidalGrid,
    values: Vec<Vec3>,
    on_sphere: bool,
}

impl ToroidalField3 {
    pub fn new(grid: ToroidalGrid, values: Vec<Vec3>) -> Result<Self, GeometryError> {
        if values.len() != grid.len() {
            return Err(GeometryError::LengthMismatch {
                expected: grid.len(),
                found: values.len(),
            });
        }
        if values.iter().flatten().any(|c| !c.is_finite()) {
            return Err(GeometryError::NonFinite);
        }
        Ok(Self {
            grid,
            values,
            on_sphere: false,
        })
    }

    pub fn zeros(grid: ToroidalGrid) -> Self {
        Self::constant(grid, [0.0; 3])
    }

    pub fn constant(grid: ToroidalGrid, v: Vec3) -> Self {
        let on_sphere = (vec3::norm(v) - 1.0).abs() <= ON_SPHERE_TOL;
        Self {
            grid,
            values: vec![v; grid.len()],
            on_sphere,
        }
    }

    /// Samples `f` at every grid point.
    pub fn from_fn(grid: ToroidalGrid, mut f: impl FnMut([f64; 2]) -> Vec3) -> Self {
        let values = (0..grid.len()).map(|idx| f(grid.point(idx))).collect();
        Self {
            grid,
            values,
            on_sphere: false,
        }
    }

    #[inline]
    pub fn grid(&self) -> ToroidalGrid {
        self.grid
    }

    #[inline]
    pub fn values(&self) -> &[Vec3] {
        &self.values
    }

    pub fn into_values(self) -> Vec<Vec3> {
        self.values
    }

    #[inline]
    pub fn on_sphere(&self) -> bool {
        self.on_sphere
    }

    /// Checks `| |u| - 1 | <= 1e-12` at every sample and sets the flag.
    pub fn into_on_sphere(mut self) -> Result<Self, GeometryError> {
        for (index, v) in self.values.iter().enumerate() {
            let deviation = (vec3::norm(*v) - 1.0).abs();
            if deviation > ON_SPHERE_TOL || !deviation.is_finite() {
                return Err(GeometryError::NotOnSphere { index, deviation });
            }
        }
        self.on_sphere = true;
        Ok(self)
    }

    pub(crate) fn with_flag(grid: ToroidalGrid, values: Vec<Vec3>, on_sphere: bool) -> Self {
        Self {
            grid,
            values,
            on_sphere,
        }
    }

    /// The field translated by whole grid cells: `out(i + di, j + dj) = self(i, j)`.
    pub fn shifted(&self, di: isize, dj: isize) -> Self {
        let g = self.grid;
        let n = g.n() as isize;
        let mut values = vec![[0.0; 3]; g.len()];
        for i in 0..n {
            for j in 0..n {
                values[g.index(i + di, j + dj)] = self.values[g.index(i, j)];
            }
        }
        Self {
            grid: g,
            values,
            on_sphere: self.on_sphere,
        }
    }

    /// Pointwise linear combination `self + s * other`.
    pub fn axpy(&self, s: f64, other: &Self) -> Result<Self, GeometryError> {
        if self.grid != other.grid {
            return Err(GeometryError::GridMismatch);
        }
        let values = self
            .values
            .iter()
            .zip(&other.values)
            .map(|(a, b)| vec3::axpy(*a, s, *b))
            .collect();
        Ok(Self::with_flag(self.grid, values, false))
    }

    /// `Σ u·v h^2`
    pub fn l2_dot(&self, other: &Self) -> f64 {
        let h = self.grid.h();
        self.values
            .iter()
            .zip(&other.values)
            .map(|(a, b)| vec3::dot(*a, *b))
            .sum::<f64>()
            * h
            * h
    }

    pub fn l2_norm(&self) -> f64 {
        sqrt(self.l2_dot(self))
    }

    pub fn max_abs(&self) -> f64 {
        self.values
            .iter()
            .map(|v| vec3::norm(*v))
            .fold(0.0, f64::max)
    }

    /// `Σ u h^2`
    pub fn mean(&self) -> Vec3 {
        let s = 1.0 / self.values.len() as f64;
        let mut m = [0.0; 3];
        for v in &self.values {
            m = vec3::add(m, *v);
        }
        vec3::scale(s, m)
    }
}

/// Five-point periodic Laplacian, applied per component.
pub fn laplacian(u: &ToroidalField3) -> ToroidalField3 {
    let g = u.grid;
    let n = g.n();
    let inv_h2 = (n * n) as f64;
    let vals = &u.values;
    let mut out = vec![[0.0; 3]; g.len()];
    for i in 0..n {
        let ip = if i + 1 == n { 0 } else { i + 1 };
        let im = if i == 0 { n - 1 } else { i - 1 };
        for j in 0..n {
            let jp = if j + 1 == n { 0 } else { j + 1 };
            let jm = if j == 0 { n - 1 } else { j - 1 };
            let c = vals[i * n + j];
            let e = vals[ip * n + j];
            let w = vals[im * n + j];
            let nn = vals[i * n + jp];
            let s = vals[i * n + jm];
            let o = &mut out[i * n + j];
            for k in 0..3 {
                o[k] = (e[k] + w[k] + nn[k] + s[k] - 4.0 * c[k]) * inv_h2;
            }
        }
    }
    ToroidalField3::with_flag(g, out, false)
}

/// Pointwise `|∇u|^2`, taken as the average of the forward and backward
/// squared differences in each direction.
///
/// This is the symmetric discretisation whose grid sum is the Dirichlet
/// form adjoint to [`laplacian`]; on unit-length fields it equals
/// `-u · Δ_h u` exactly.
pub fn gradient_sq(u: &ToroidalField3) -> ScalarField {
    let g = u.grid;
    let n = g.n();
    let inv_h2 = (n * n) as f64;
    let vals = &u.values;
    let mut out = vec![0.0; g.len()];
    for i in 0..n {
        let ip = if i + 1 == n { 0 } else { i + 1 };
        let im = if i == 0 { n - 1 } else { i - 1 };
        for j in 0..n {
            let jp = if j + 1 == n { 0 } else { j + 1 };
            let jm = if j == 0 { n - 1 } else { j - 1 };
            let c = vals[i * n + j];
            let s = dist_sq(vals[ip * n + j], c)
                + dist_sq(vals[im * n + j], c)
                + dist_sq(vals[i * n + jp], c)
                + dist_sq(vals[i * n + jm], c);
            out[i * n + j] = 0.5 * s * inv_h2;
        }
    }
    ScalarField { grid: g, values: out }
}

#[inline]
fn dist_sq(a: Vec3, b: Vec3) -> f64 {
    let d = vec3::sub(a, b);
    vec3::dot(d, d)
}

/// Dirichlet energy `E(u) = ½ Σ |∇u|^2 h^2`.
pub fn energy(u: &ToroidalField3) -> f64 {
    0.5 * dirichlet_form(u, u)
}

/// `Σ D⁺v · D⁺w h^2` over both directions (the `h` factors cancel).
pub fn dirichlet_form(v: &ToroidalField3, w: &ToroidalField3) -> f64 {
    let g = v.grid;
    let n = g.n();
    let (a, b) = (&v.values, &w.values);
    let mut s = 0.0;
    for i in 0..n {
        let ip = if i + 1 == n { 0 } else { i + 1 };
        for j in 0..n {
            let jp = if j + 1 == n { 0 } else { j + 1 };
            let c = i * n + j;
            let da1 = vec3::sub(a[ip * n + j], a[c]);
            let db1 = vec3::sub(b[ip * n + j], b[c]);
            let da2 = vec3::sub(a[i * n + jp], a[c]);
            let db2 = vec3::sub(b[i * n + jp], b[c]);
            s += vec3::dot(da1, db1) + vec3::dot(da2, db2);
        }
    }
    s
}

/// The weight `rho_z` of the bubble-adapted inner product.
#[derive(Debug, Clone, PartialEq)]
pub struct WeightField {
    grid: ToroidalGrid,
    values: Vec<f64>,
    lambda: f64,
    a: [f64; 2],
}

impl WeightField {
    /// `rho = lambda / (1 + lambda^2 |F_a(p)|^2)` on the coordinate disc of
    /// radius `R0`, and the boundary value `lambda / (1 + lambda^2 R0^2)` outside.
    pub fn new(grid: ToroidalGrid, lambda: f64, a: [f64; 2]) -> Result<Self, GeometryError> {
        grid.check_resolution(lambda)?;
        let values = (0..grid.len())
            .map(|idx| weight_at(lambda, translate_coords(a, grid.point(idx))))
            .collect();
        Ok(Self {
            grid,
            values,
            lambda,
            a,
        })
    }

    #[inline]
    pub fn grid(&self) -> ToroidalGrid {
        self.grid
    }

    #[inline]
    pub fn values(&self) -> &[f64] {
        &self.values
    }

    #[inline]
    pub fn lambda(&self) -> f64 {
        self.lambda
    }

    #[inline]
    pub fn center(&self) -> [f64; 2] {
        self.a
    }
}

/// `rho_lambda` at translation coordinate `x`.
#[inline]
pub fn weight_at(lambda: f64, x: [f64; 2]) -> f64 {
    let r2 = (x[0] * x[0] + x[1] * x[1]).min(R0 * R0);
    lambda / (1.0 + lambda * lambda * r2)
}

/// `<v, w>_z = Σ (∇v·∇w + rho^2 v·w) h^2`.
pub fn weighted_inner(v: &ToroidalField3, w: &ToroidalField3, rho: &WeightField) -> f64 {
    let h = v.grid.h();
    let l2: f64 = v
        .values
        .iter()
        .zip(&w.values)
        .zip(&rho.values)
        .map(|((a, b), r)| r * r * vec3::dot(*a, *b))
        .sum();
    dirichlet_form(v, w) + l2 * h * h
}

/// `‖w‖_z`
pub fn weighted_norm(w: &ToroidalField3, rho: &WeightField) -> f64 {
    sqrt(weighted_inner(w, w, rho).max(0.0))
}

/// `|mean w| / ((log lambda)^{1/2} ‖w‖_z)`, the quantity the mean-value
/// estimate bounds uniformly in `lambda`.
pub fn mean_value_check(w: &ToroidalField3, rho: &WeightField) -> f64 {
    let m = vec3::norm(w.mean());
    if m == 0.0 {
        return 0.0;
    }
    m / (sqrt(ln(rho.lambda)) * weighted_norm(w, rho))
}

#[cfg(test)]
mod tests {
    use super::*;
    use core::f64::consts::PI;

    fn grid(n: usize) -> ToroidalGrid {
        ToroidalGrid::new(n).unwrap()
    }

    #[test]
    fn rejects_tiny_grid() {
        assert_eq!(ToroidalGrid::new(8), Err(GeometryError::GridTooSmall(8)));
    }

    #[test]
    fn index_wraps_exactly() {
        let g = grid(32);
        assert_eq!(g.index(3, 5), g.index(3 + 32, 5));
        assert_eq!(g.index(-1, 0), g.index(31, 0));
        assert_eq!(g.index(0, -33), g.index(0, 31));
        assert_eq!(g.n() as f64 * g.h(), 1.0);
    }

    #[test]
    fn constant_field_has_zero_laplacian_and_energy() {
        let u = ToroidalField3::constant(grid(16), [1.0, 0.0, 0.0]);
        assert!(laplacian(&u).max_abs() == 0.0);
        assert_eq!(energy(&u), 0.0);
        assert!(gradient_sq(&u).values.iter().all(|&v| v == 0.0));
    }

    #[test]
    fn sine_laplacian_converges_at_second_order() {
        let err = |n: usize| {
            let g = grid(n);
            let u = ToroidalField3::from_fn(g, |p| [crate::math::sin(2.0 * PI * p[0]), 0.0, 0.0]);
            let lap = laplacian(&u);
            lap.values()
                .iter()
                .zip(u.values())
                .map(|(l, v)| (l[0] + 4.0 * PI * PI * v[0]).abs())
                .fold(0.0, f64::max)
                / (4.0 * PI * PI)
        };
        let (e64, e128) = (err(64), err(128));
        assert!(e64 < 1e-2);
        let ratio = e64 / e128;
        assert!((ratio - 4.0).abs() < 0.6, "ratio {ratio}");
    }

    #[test]
    fn seam_of_unwrapped_linear_field_spikes() {
        let g = grid(16);
        let u = ToroidalField3::from_fn(g, |p| [p[0], 0.0, 0.0]);
        let lap = laplacian(&u);
        for idx in 0..g.len() {
            let (i, _) = g.coords(idx);
            let v = lap.values()[idx][0];
            if i == 0 || i == 15 {
                assert!(v.abs() > 1.0);
            } else {
                assert!(v.abs() < 1e-9);
            }
        }
    }

    #[test]
    fn sine_energy_matches_analytic_integral() {
        let g = grid(64);
        let u = ToroidalField3::from_fn(g, |p| [crate::math::sin(2.0 * PI * p[0]), 0.0, 0.0]);
        let total = gradient_sq(&u).integral();
        // ∫ 4π² cos² = 2π², discrete symbol 4 sin²(πh)/h² per mode
        assert!((total - 2.0 * PI * PI).abs() / (2.0 * PI * PI) < 2e-3);
        assert!((2.0 * energy(&u) - total).abs() < 1e-10);
    }

    #[test]
    fn translate_coords_examples() {
        assert_eq!(translate_coords([0.3, 0.7], [0.3, 0.7]), [0.0, 0.0]);
        let x = translate_coords([0.9, 0.1], [0.1, 0.1]);
        assert!((x[0] - 0.2).abs() < 1e-15 && x[1] == 0.0);
    }

    #[test]
    fn weight_peak_and_floor() {
        let g = grid(256);
        let a = [0.5, 0.5];
        let rho = WeightField::new(g, 40.0, a).unwrap();
        let max = rho.values().iter().cloned().fold(0.0, f64::max);
        assert_eq!(max, 40.0);
        assert_eq!(rho.values()[g.nearest(a)], 40.0);
        let floor = 40.0 / (1.0 + 1600.0 * R0 * R0);
        let min = rho.values().iter().cloned().fold(f64::MAX, f64::min);
        assert!((min - floor).abs() < 1e-15);
    }

    #[test]
    fn weight_rejects_underresolved_lambda() {
        let g = grid(64);
        assert!(matches!(
            WeightField::new(g, 40.0, [0.0, 0.0]),
            Err(GeometryError::Underresolved { .. })
        ));
    }

    #[test]
    fn zero_mean_gives_zero_ratio() {
        let g = grid(128);
        let rho = WeightField::new(g, 20.0, [0.5, 0.5]).unwrap();
        let w = ToroidalField3::from_fn(g, |p| [crate::math::sin(2.0 * PI * p[0]), 0.0, 0.0]);
        assert!(mean_value_check(&w, &rho) < 1e-12);
        assert_eq!(weighted_norm(&ToroidalField3::zeros(g), &rho), 0.0);
    }
}
