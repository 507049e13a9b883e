//! Green's function of the unit-area flat square torus,
//!
//! ```text
//! -Δ G(·, a) = 2π δ_a - 2π,     G(x) = Σ_{k ≠ 0} e^{2πi k·x} / (2π |k|^2),
//! ```
//!
//! evaluated by Ewald splitting `1/|k|^2 = ∫_0^∞ e^{-s|k|^2} ds` at `s = s0`:
//!
//! ```text
//! 2π G(x) = Σ_{k≠0} e^{-s0|k|^2} cos(2π k·x) / |k|^2 + π Σ_n E1(π^2 |x+n|^2 / s0) - s0.
//! ```
//!
//! Because the torus is flat and translation invariant, `G_a(x, y) = G(x - y)`
//! in translation coordinates and nothing depends on the attachment point.

use alloc::vec::Vec;
use core::f64::consts::PI;
use core::fmt;

use crate::math::{ceil, exp, exp_integral_e1, exp_integral_e1_plus_log, expm1, ln, sin_cos, sqrt, wrap_half};
use crate::torus_geometry::ToroidalGrid;

/// Exponent below which Ewald terms are dropped, `e^{-37} ≈ 8.5e-17`.
const TAIL_EXPONENT: f64 = 37.0;

#[derive(Debug, Clone, PartialEq)]
pub enum GreensError {
    AtSingularity,
    /// Scale-to-scale spread of the trace limit, or its gap to the analytic value.
    NonConvergent { spread: f64 },
}

impl fmt::Display for GreensError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Self::AtSingularity => write!(f, "Green's function evaluated at its pole"),
            Self::NonConvergent { spread } => {
                write!(f, "trace limit for J did not converge (spread {spread:e})")
            }
        }
    }
}

impl core::error::Error for GreensError {}

pub type Sym2 = [[f64; 2]; 2];

/// Gradients and Hessians of `G` and of its regular part `J = G + log|x|`
/// at one point.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GreensJet {
    pub grad_regular: [f64; 2],
    pub hess_regular: Sym2,
    /// `None` at the pole.
    pub grad: Option<[f64; 2]>,
    pub hess: Option<Sym2>,
}

/// Ewald evaluator for `G`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Ewald {
    split: f64,
    real_decay: f64,
    real_images: i32,
    fourier_modes: i32,
}

impl Default for Ewald {
    fn default() -> Self {
        Self::with_split(PI)
    }
}

impl Ewald {
    /// Splitting parameter `s0`; the real-space Gaussians decay like
    /// `e^{-π^2 r^2 / s0}` and the Fourier weights like `e^{-s0 |k|^2}`.
    pub fn with_split(split: f64) -> Self {
        assert!(split > 0.0);
        let real_decay = PI * PI / split;
        let real_images = ceil(sqrt(TAIL_EXPONENT / real_decay) + 0.5) as i32;
        let fourier_modes = ceil(sqrt(TAIL_EXPONENT / split)) as i32;
        Self {
            split,
            real_decay,
            real_images,
            fourier_modes,
        }
    }

    pub fn split(&self) -> f64 {
        self.split
    }

    /// Number of image cells and Fourier modes summed per dimension.
    pub fn truncation(&self) -> (usize, usize) {
        (
            (2 * self.real_images + 1) as usize,
            (2 * self.fourier_modes + 1) as usize,
        )
    }

    /// `G(x)`.
    pub fn value(&self, x: [f64; 2]) -> Result<f64, GreensError> {
        let y = wrap(x);
        let r2 = y[0] * y[0] + y[1] * y[1];
        if r2 == 0.0 {
            return Err(GreensError::AtSingularity);
        }
        Ok(self.regular_value(y) - 0.5 * ln(r2))
    }

    /// Real-space and Fourier-space contributions of `2π G(x) + s0`,
    /// reported separately for split-consistency checks.
    pub fn value_parts(&self, x: [f64; 2]) -> Result<(f64, f64), GreensError> {
        let y = wrap(x);
        if y == [0.0, 0.0] {
            return Err(GreensError::AtSingularity);
        }
        let mut real = 0.0;
        let m = self.real_images;
        for n1 in -m..=m {
            for n2 in -m..=m {
                let (a, b) = (y[0] + n1 as f64, y[1] + n2 as f64);
                real += PI * exp_integral_e1(self.real_decay * (a * a + b * b));
            }
        }
        Ok((real, self.fourier_cos_sum(y)))
    }

    fn fourier_cos_sum(&self, y: [f64; 2]) -> f64 {
        let k = self.fourier_modes;
        let mut s = 0.0;
        for k1 in -k..=k {
            for k2 in -k..=k {
                if k1 == 0 && k2 == 0 {
                    continue;
                }
                let kk = (k1 * k1 + k2 * k2) as f64;
                let phase = 2.0 * PI * (k1 as f64 * y[0] + k2 as f64 * y[1]);
                s += exp(-self.split * kk) * crate::math::cos(phase) / kk;
            }
        }
        s
    }

    /// `J(x) = G(x) + log|x|` on the fundamental domain; smooth at `x = 0`.
    pub fn regular_value(&self, x: [f64; 2]) -> f64 {
        let y = wrap(x);
        let c = self.real_decay;
        let m = self.real_images;
        let mut real = 0.0;
        for n1 in -m..=m {
            for n2 in -m..=m {
                let (a, b) = (y[0] + n1 as f64, y[1] + n2 as f64);
                let r2 = a * a + b * b;
                if n1 == 0 && n2 == 0 {
                    // π E1(c r^2) + 2π log r = π [E1(c r^2) + log(c r^2)] - π log c
                    real += PI * (exp_integral_e1_plus_log(c * r2) - ln(c));
                } else {
                    real += PI * exp_integral_e1(c * r2);
                }
            }
        }
        (real + self.fourier_cos_sum(y) - self.split) / (2.0 * PI)
    }

    /// `∇G(x)`.
    pub fn gradient(&self, x: [f64; 2]) -> Result<[f64; 2], GreensError> {
        self.jet(x).grad.ok_or(GreensError::AtSingularity)
    }

    /// Hessian of `G` at `x`.
    pub fn hessian(&self, x: [f64; 2]) -> Result<Sym2, GreensError> {
        self.jet(x).hess.ok_or(GreensError::AtSingularity)
    }

    /// First and second derivatives of `G` and `J` at `x`.
    pub fn jet(&self, x: [f64; 2]) -> GreensJet {
        let y = wrap(x);
        let c = self.real_decay;
        let m = self.real_images;
        let mut grad = [0.0; 2];
        let mut hess = [[0.0; 2]; 2];

        // Real space, n ≠ 0: gradient of ½E1(c|y|^2) is -y e^{-c|y|^2}/|y|^2.
        let nimg = (2 * m + 1) as usize;
        let mut e1 = [0.0; 24];
        let mut e2 = [0.0; 24];
        for (k, n) in (-m..=m).enumerate() {
            let a = y[0] + n as f64;
            let b = y[1] + n as f64;
            e1[k] = exp(-c * a * a);
            e2[k] = exp(-c * b * b);
        }
        for k1 in 0..nimg {
            let a = y[0] + (k1 as i32 - m) as f64;
            for k2 in 0..nimg {
                if k1 as i32 == m && k2 as i32 == m {
                    continue;
                }
                let b = y[1] + (k2 as i32 - m) as f64;
                let r2 = a * a + b * b;
                let e = e1[k1] * e2[k2];
                let inv = 1.0 / r2;
                let ei = e * inv;
                grad[0] -= a * ei;
                grad[1] -= b * ei;
                let q = 2.0 * ei * (c + inv);
                hess[0][0] += q * a * a - ei;
                hess[1][1] += q * b * b - ei;
                hess[0][1] += q * a * b;
            }
        }

        // Fourier space.
        let kmax = self.fourier_modes;
        let nk = (2 * kmax + 1) as usize;
        let mut cs1 = [(0.0, 0.0); 24];
        let mut cs2 = [(0.0, 0.0); 24];
        let (s1, c1) = sin_cos(2.0 * PI * y[0]);
        let (s2, c2) = sin_cos(2.0 * PI * y[1]);
        for (k, kk) in (-kmax..=kmax).enumerate() {
            cs1[k] = rotate_power(c1, s1, kk);
            cs2[k] = rotate_power(c2, s2, kk);
        }
        for i1 in 0..nk {
            let k1 = (i1 as i32 - kmax) as f64;
            for i2 in 0..nk {
                let k2 = (i2 as i32 - kmax) as f64;
                let kk = k1 * k1 + k2 * k2;
                if kk == 0.0 {
                    continue;
                }
                let w = exp(-self.split * kk) / kk;
                let (ca, sa) = cs1[i1];
                let (cb, sb) = cs2[i2];
                let sinp = sa * cb + ca * sb;
                let cosp = ca * cb - sa * sb;
                grad[0] -= k1 * sinp * w;
                grad[1] -= k2 * sinp * w;
                let hc = -2.0 * PI * cosp * w;
                hess[0][0] += hc * k1 * k1;
                hess[1][1] += hc * k2 * k2;
                hess[0][1] += hc * k1 * k2;
            }
        }

        // n = 0 image together with log|y|: smooth combination.
        let r2 = y[0] * y[0] + y[1] * y[1];
        let t = c * r2;
        let f1 = c * one_minus_exp_over_t(t);
        let f2 = 2.0 * c * c * curvature_coeff(t);
        let mut grad_reg = grad;
        let mut hess_reg = hess;
        grad_reg[0] += f1 * y[0];
        grad_reg[1] += f1 * y[1];
        hess_reg[0][0] += f1 + f2 * y[0] * y[0];
        hess_reg[1][1] += f1 + f2 * y[1] * y[1];
        hess_reg[0][1] += f2 * y[0] * y[1];
        hess_reg[1][0] = hess_reg[0][1];

        let (grad, hess) = if r2 > 0.0 {
            let inv = 1.0 / r2;
            let g = [grad_reg[0] - y[0] * inv, grad_reg[1] - y[1] * inv];
            let h = [
                [
                    hess_reg[0][0] - inv + 2.0 * y[0] * y[0] * inv * inv,
                    hess_reg[0][1] + 2.0 * y[0] * y[1] * inv * inv,
                ],
                [
                    hess_reg[0][1] + 2.0 * y[0] * y[1] * inv * inv,
                    hess_reg[1][1] - inv + 2.0 * y[1] * y[1] * inv * inv,
                ],
            ];
            (Some(g), Some(h))
        } else {
            (None, None)
        };
        GreensJet {
            grad_regular: grad_reg,
            hess_regular: hess_reg,
            grad,
            hess,
        }
    }

    /// `∇_y J_a(x, 0) = -∇G(x) - x/|x|^2 = -∇J(x)`, continuous through `x = 0`.
    pub fn grad_regular(&self, x: [f64; 2]) -> [f64; 2] {
        let g = self.jet(x).grad_regular;
        [-g[0], -g[1]]
    }

    /// `J = lim_{x→0} (∂_{y_1}∂_{x_1} + ∂_{y_2}∂_{x_2}) G(x - y) = -lim ΔG(x)`,
    /// Richardson-extrapolated from three approach radii and checked against
    /// `-2π / Area`.
    pub fn j_constant(&self) -> Result<f64, GreensError> {
        let trace = |t: f64| {
            let x = [t * 0.6, t * 0.8];
            let h = self.hessian(x).expect("nonzero probe");
            -(h[0][0] + h[1][1])
        };
        let (t0, t1, t2) = (trace(0.08), trace(0.04), trace(0.02));
        let r01 = (4.0 * t1 - t0) / 3.0;
        let r12 = (4.0 * t2 - t1) / 3.0;
        let spread = (r01 - r12).abs();
        if spread > 1e-4 {
            return Err(GreensError::NonConvergent { spread });
        }
        let analytic = -2.0 * PI;
        if (r12 - analytic).abs() > 1e-4 {
            return Err(GreensError::NonConvergent {
                spread: (r12 - analytic).abs(),
            });
        }
        Ok(r12)
    }
}

/// `(cos kθ, sin kθ)` from `(cos θ, sin θ)`.
fn rotate_power(c: f64, s: f64, k: i32) -> (f64, f64) {
    let (mut rc, mut rs) = (1.0, 0.0);
    for _ in 0..k.unsigned_abs() {
        let nc = rc * c - rs * s;
        rs = rs * c + rc * s;
        rc = nc;
    }
    if k < 0 {
        rs = -rs;
    }
    (rc, rs)
}

/// `(1 - e^{-t}) / t`
fn one_minus_exp_over_t(t: f64) -> f64 {
    if t < 1e-8 {
        1.0 - 0.5 * t
    } else {
        -expm1(-t) / t
    }
}

/// `(t e^{-t} - 1 + e^{-t}) / t^2`, whose Taylor coefficients are
/// `(-1)^{m-1} (m-1)/m!` for `t^{m-2}`.
fn curvature_coeff(t: f64) -> f64 {
    if t < 0.1 {
        let mut s = 0.0;
        let mut fact = 1.0;
        let mut tp = 1.0;
        for m in 2..14 {
            fact *= m as f64;
            let sign = if m % 2 == 0 { -1.0 } else { 1.0 };
            s += sign * (m - 1) as f64 / fact * tp;
            tp *= t;
        }
        s
    } else {
        let e = exp(-t);
        (t * e - 1.0 + e) / (t * t)
    }
}

#[inline]
fn wrap(x: [f64; 2]) -> [f64; 2] {
    [wrap_half(x[0]), wrap_half(x[1])]
}

/// `G` and `∇G` tabulated at the grid samples `wrap(p_ij)`, together with
/// the scalar summary `J` and `∇_y J_a(0, 0)`.
#[derive(Debug, Clone, PartialEq)]
pub struct GreensTable {
    grid: ToroidalGrid,
    ewald: Ewald,
    /// `(x, G(x), ∇G(x))` for every sample except the pole.
    entries: Vec<([f64; 2], f64, [f64; 2])>,
    j_constant: f64,
    grad_regular_origin: [f64; 2],
}

impl GreensTable {
    pub fn build(grid: ToroidalGrid, ewald: Ewald) -> Result<Self, GreensError> {
        let j_constant = ewald.j_constant()?;
        let grad_regular_origin = ewald.grad_regular([0.0, 0.0]);
        let mut entries = Vec::with_capacity(grid.len());
        for idx in 0..grid.len() {
            let x = wrap(grid.point(idx));
            if x == [0.0, 0.0] {
                continue;
            }
            let jet = ewald.jet(x);
            let g = ewald.value(x)?;
            entries.push((x, g, jet.grad.expect("off pole")));
        }
        Ok(Self {
            grid,
            ewald,
            entries,
            j_constant,
            grad_regular_origin,
        })
    }

    pub fn grid(&self) -> ToroidalGrid {
        self.grid
    }

    pub fn ewald(&self) -> &Ewald {
        &self.ewald
    }

    pub fn entries(&self) -> &[([f64; 2], f64, [f64; 2])] {
        &self.entries
    }

    pub fn j_constant(&self) -> f64 {
        self.j_constant
    }

    pub fn grad_regular_origin(&self) -> [f64; 2] {
        self.grad_regular_origin
    }
}

/// Free-function form of [`Ewald::value`] with the default split.
pub fn greens_value(x: [f64; 2]) -> Result<f64, GreensError> {
    Ewald::default().value(x)
}

/// Free-function form of [`Ewald::grad_regular`] with the default split.
pub fn grad_regular(x: [f64; 2]) -> [f64; 2] {
    Ewald::default().grad_regular(x)
}

/// Free-function form of [`Ewald::j_constant`] with the default split.
pub fn j_constant() -> Result<f64, GreensError> {
    Ewald::default().j_constant()
}

/// Tabulated `∇_y J_a(x, 0)` on `[-1/2, 1/2]^2` for fast repeated
/// evaluation, interpolated with a six-point Lagrange stencil per axis.
/// The regular part is smooth on a neighbourhood of the square (its nearest
/// singularities are the poles at distance `1/2` from the edges), so the
/// interpolation error is below `1e-10` at the default spacing.
#[derive(Debug, Clone)]
pub struct RegularGradientTable {
    spacing: f64,
    origin: f64,
    side: usize,
    values: Vec<[f64; 2]>,
}

const TABLE_STENCIL: usize = 6;

impl RegularGradientTable {
    pub const DEFAULT_CELLS: usize = 128;

    pub fn new(ewald: &Ewald, cells: usize) -> Self {
        let spacing = 1.0 / cells as f64;
        let margin = TABLE_STENCIL;
        let origin = -0.5 - margin as f64 * spacing;
        let side = cells + 2 * margin + 1;
        let mut values = Vec::with_capacity(side * side);
        for i in 0..side {
            for j in 0..side {
                let x = [origin + i as f64 * spacing, origin + j as f64 * spacing];
                // Beyond the fundamental square keep `-∇G(x) - x/|x|^2`
                // unwrapped so the tabulated function stays smooth.
                let r2 = x[0] * x[0] + x[1] * x[1];
                let v = if r2 < 0.25 * 0.25 {
                    ewald.grad_regular(x)
                } else {
                    let g = ewald.gradient(x).expect("table nodes avoid the poles");
                    [-g[0] - x[0] / r2, -g[1] - x[1] / r2]
                };
                values.push(v);
            }
        }
        Self {
            spacing,
            origin,
            side,
            values,
        }
    }

    fn weights(&self, t: f64) -> (usize, [f64; TABLE_STENCIL]) {
        let u = (t - self.origin) / self.spacing;
        let base = (crate::math::floor(u) as isize - 2).clamp(0, (self.side - TABLE_STENCIL) as isize) as usize;
        let s = u - base as f64;
        let mut w = [1.0; TABLE_STENCIL];
        for (k, wk) in w.iter_mut().enumerate() {
            for m in 0..TABLE_STENCIL {
                if m != k {
                    *wk *= (s - m as f64) / (k as f64 - m as f64);
                }
            }
        }
        (base, w)
    }

    /// Interpolated `∇_y J_a(x, 0)` for `x ∈ [-1/2, 1/2]^2`.
    pub fn eval(&self, x: [f64; 2]) -> [f64; 2] {
        let (bi, wi) = self.weights(x[0]);
        let (bj, wj) = self.weights(x[1]);
        let mut out = [0.0; 2];
        for (a, wa) in wi.iter().enumerate() {
            let row = &self.values[(bi + a) * self.side + bj..];
            let mut acc = [0.0; 2];
            for (b, wb) in wj.iter().enumerate() {
                acc[0] += wb * row[b][0];
                acc[1] += wb * row[b][1];
            }
            out[0] += wa * acc[0];
            out[1] += wa * acc[1];
        }
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn pole_is_rejected() {
        assert_eq!(greens_value([0.0, 0.0]), Err(GreensError::AtSingularity));
        assert_eq!(greens_value([1.0, -2.0]), Err(GreensError::AtSingularity));
    }

    #[test]
    fn truncation_is_small() {
        let (real, fourier) = Ewald::default().truncation();
        assert!(real <= 40 && fourier <= 40);
    }

    #[test]
    fn even_and_periodic() {
        let e = Ewald::default();
        for x in [[0.13, 0.27], [0.41, -0.33], [0.5, 0.5], [0.01, 0.002]] {
            let a = e.value(x).unwrap();
            let b = e.value([-x[0], -x[1]]).unwrap();
            let c = e.value([x[0] + 1.0, x[1] - 3.0]).unwrap();
            assert!((a - b).abs() < 1e-12 && (a - c).abs() < 1e-12);
        }
    }

    #[test]
    fn splits_agree() {
        let x = [0.23, -0.11];
        let a = Ewald::with_split(PI).value(x).unwrap();
        let b = Ewald::with_split(2.0).value(x).unwrap();
        let c = Ewald::with_split(5.0).value(x).unwrap();
        assert!((a - b).abs() < 1e-12 && (a - c).abs() < 1e-12);
    }

    #[test]
    fn gradient_and_hessian_match_finite_differences() {
        let e = Ewald::default();
        let x = [0.17, -0.29];
        let d = 1e-5;
        let g = e.gradient(x).unwrap();
        let h = e.hessian(x).unwrap();
        for k in 0..2 {
            let mut xp = x;
            let mut xm = x;
            xp[k] += d;
            xm[k] -= d;
            let fd = (e.value(xp).unwrap() - e.value(xm).unwrap()) / (2.0 * d);
            assert!((fd - g[k]).abs() < 1e-8);
            let gp = e.gradient(xp).unwrap();
            let gm = e.gradient(xm).unwrap();
            for i in 0..2 {
                let fd = (gp[i] - gm[i]) / (2.0 * d);
                assert!((fd - h[i][k]).abs() < 1e-7);
            }
        }
    }

    #[test]
    fn regular_part_is_smooth_through_origin() {
        let e = Ewald::default();
        let at0 = e.jet([0.0, 0.0]);
        let near = e.jet([1e-7, 0.0]);
        assert!((at0.hess_regular[0][0] - near.hess_regular[0][0]).abs() < 1e-9);
        assert!(at0.grad_regular[0].abs() < 1e-14);
        // Square symmetry and ΔJ = 2π give Hess J(0) = π Id.
        assert!((at0.hess_regular[0][0] - PI).abs() < 1e-10);
        assert!((at0.hess_regular[1][1] - PI).abs() < 1e-10);
        assert!(at0.hess_regular[0][1].abs() < 1e-12);
    }

    #[test]
    fn j_is_minus_two_pi() {
        let j = j_constant().unwrap();
        assert!((j + 2.0 * PI).abs() < 1e-10);
        assert!(j < 0.0);
    }

    #[test]
    fn interpolated_regular_gradient() {
        let ewald = Ewald::default();
        let table = RegularGradientTable::new(&ewald, RegularGradientTable::DEFAULT_CELLS);
        let mut worst: f64 = 0.0;
        for k in 0..400 {
            let t = k as f64 * 0.618_033_988_749_895;
            let x = [wrap_half(t), wrap_half(1.7 * t + 0.31)];
            let exact = ewald.grad_regular(x);
            let approx = table.eval(x);
            worst = worst.max((exact[0] - approx[0]).abs()).max((exact[1] - approx[1]).abs());
        }
        for x in [[-0.5, -0.5], [0.4999, -0.5], [0.0, 0.0]] {
            let e = ewald.grad_regular(x);
            let a = table.eval(x);
            worst = worst.max((e[0] - a[0]).abs()).max((e[1] - a[1]).abs());
        }
        assert!(worst < 1e-10, "{worst}");
    }
}
