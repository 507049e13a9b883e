//! The round target `S^2 ⊂ R^3`: nearest-point projection, tension, second
//! variation, rescaled inverse stereographic projections and the rotation
//! family `omega = id ∘ R`.

use alloc::vec;
use core::fmt;

use crate::math::{cos, sin, sqrt};
use crate::torus_geometry::{dirichlet_form, gradient_sq, ToroidalField3};
use crate::vec3::{self, Mat3, Vec3};

/// North pole `p* = (0, 0, 1)`, the point omitted by the stereographic chart.
pub const P_STAR: Vec3 = [0.0, 0.0, 1.0];
/// Vectors shorter than this are not projected onto the sphere.
pub const PROJECTION_GUARD: f64 = 0.1;
/// Admissible rotations move `p*` by at most this much.
pub const SIGMA_1: f64 = 0.2;
/// Largest `|v·u|` accepted for a tangential variation.
pub const TANGENTIAL_TOL: f64 = 1e-8;

#[derive(Debug, Clone, PartialEq)]
pub enum SphereError {
    /// `|v|` fell below [`PROJECTION_GUARD`]: the map left the tubular
    /// neighbourhood where projection is trusted.
    BelowGuard { index: usize, norm: f64 },
    NotTangential { index: usize, violation: f64 },
    NotUnit { deviation: f64 },
}

impl fmt::Display for SphereError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Self::BelowGuard { index, norm } => write!(
                f,
                "sample {index} has |v| = {norm:e} below the projection guard {PROJECTION_GUARD}"
            ),
            Self::NotTangential { index, violation } => {
                write!(f, "variation is not tangential at sample {index} (|v·u| = {violation:e})")
            }
            Self::NotUnit { deviation } => write!(f, "vector is off the sphere by {deviation:e}"),
        }
    }
}

impl core::error::Error for SphereError {}

/// A unit vector in `R^3`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SpherePoint(Vec3);

impl SpherePoint {
    pub fn new(v: Vec3) -> Result<Self, SphereError> {
        let deviation = (vec3::norm(v) - 1.0).abs();
        if deviation > 1e-12 {
            return Err(SphereError::NotUnit { deviation });
        }
        Ok(Self(v))
    }

    #[inline]
    pub fn get(&self) -> Vec3 {
        self.0
    }
}

impl From<SpherePoint> for Vec3 {
    fn from(p: SpherePoint) -> Self {
        p.0
    }
}

/// Nearest-point projection `v / |v|`.
pub fn project_to_sphere(v: Vec3) -> Result<SpherePoint, SphereError> {
    project(v)
        .map(SpherePoint)
        .ok_or(SphereError::BelowGuard {
            index: 0,
            norm: vec3::norm(v),
        })
}

#[inline]
pub(crate) fn project(v: Vec3) -> Option<Vec3> {
    let n = vec3::norm(v);
    if n < PROJECTION_GUARD || !n.is_finite() {
        None
    } else {
        Some(vec3::scale(1.0 / n, v))
    }
}

/// Projects every sample of `v`, flagging the result as sphere-valued.
pub fn project_field(v: &ToroidalField3) -> Result<ToroidalField3, SphereError> {
    let mut out = vec![[0.0; 3]; v.values().len()];
    for (index, (o, x)) in out.iter_mut().zip(v.values()).enumerate() {
        *o = project(*x).ok_or(SphereError::BelowGuard {
            index,
            norm: vec3::norm(*x),
        })?;
    }
    Ok(ToroidalField3::with_flag(v.grid(), out, true))
}

/// Discrete tension `τ = Δ_h u + |∇u|^2_h u` of a sphere-valued field.
///
/// With the symmetric `|∇u|^2_h` of [`gradient_sq`] the result is tangential
/// to round-off on unit-length input.
pub fn tension(u: &ToroidalField3) -> ToroidalField3 {
    tension_with_energy(u).0
}

/// [`tension`] together with the energy `½ Σ |∇u|^2_h h^2`, which on the
/// periodic grid equals the forward-difference energy.
pub fn tension_with_energy(u: &ToroidalField3) -> (ToroidalField3, f64) {
    let g = u.grid();
    let n = g.n();
    let inv_h2 = (n * n) as f64;
    let vals = u.values();
    let mut out = vec![[0.0; 3]; g.len()];
    let mut total = 0.0;
    #[inline(always)]
    fn point(c: Vec3, nb: [Vec3; 4], inv_h2: f64, total: &mut f64) -> Vec3 {
        let mut lap = [0.0; 3];
        let mut gsq = 0.0;
        for q in nb {
            let d = [q[0] - c[0], q[1] - c[1], q[2] - c[2]];
            lap = [lap[0] + d[0], lap[1] + d[1], lap[2] + d[2]];
            gsq += d[0] * d[0] + d[1] * d[1] + d[2] * d[2];
        }
        let gsq = 0.5 * gsq;
        *total += gsq;
        [
            inv_h2 * (lap[0] + gsq * c[0]),
            inv_h2 * (lap[1] + gsq * c[1]),
            inv_h2 * (lap[2] + gsq * c[2]),
        ]
    }
    for i in 0..n {
        let ip = if i + 1 == n { 0 } else { i + 1 };
        let im = if i == 0 { n - 1 } else { i - 1 };
        let row = &vals[i * n..(i + 1) * n];
        let up = &vals[ip * n..(ip + 1) * n];
        let down = &vals[im * n..(im + 1) * n];
        let dst = &mut out[i * n..(i + 1) * n];
        dst[0] = point(row[0], [up[0], down[0], row[1], row[n - 1]], inv_h2, &mut total);
        for j in 1..n - 1 {
            dst[j] = point(row[j], [up[j], down[j], row[j + 1], row[j - 1]], inv_h2, &mut total);
        }
        dst[n - 1] = point(row[n - 1], [up[n - 1], down[n - 1], row[0], row[n - 2]], inv_h2, &mut total);
    }
    (ToroidalField3::with_flag(g, out, false), 0.5 * total)
}

/// `‖τ(u)‖_{L^2}`
pub fn tension_l2(u: &ToroidalField3) -> f64 {
    tension(u).l2_norm()
}

fn check_tangential(u: &ToroidalField3, v: &ToroidalField3) -> Result<(), SphereError> {
    for (index, (a, b)) in u.values().iter().zip(v.values()).enumerate() {
        let violation = vec3::dot(*a, *b).abs();
        if violation > TANGENTIAL_TOL {
            return Err(SphereError::NotTangential { index, violation });
        }
    }
    Ok(())
}

/// `d^2E(u)(v, w) = Σ ∇v·∇w - |∇u|^2 v·w` for tangential `v`, `w`.
pub fn second_variation(
    u: &ToroidalField3,
    v: &ToroidalField3,
    w: &ToroidalField3,
) -> Result<f64, SphereError> {
    check_tangential(u, v)?;
    check_tangential(u, w)?;
    let h = u.grid().h();
    let gsq = gradient_sq(u);
    let potential: f64 = gsq
        .values
        .iter()
        .zip(v.values().iter().zip(w.values()))
        .map(|(g, (a, b))| g * vec3::dot(*a, *b))
        .sum();
    Ok(dirichlet_form(v, w) - potential * h * h)
}

/// `dE(u)(w) = -Σ τ(u)·w h^2`.
pub fn first_variation(u: &ToroidalField3, w: &ToroidalField3) -> f64 {
    -tension(u).l2_dot(w)
}

/// `π_λ(x) = π(λx)` with `π` the inverse stereographic projection from `p*`.
#[inline]
pub fn stereographic(lambda: f64, x: [f64; 2]) -> Vec3 {
    let (y1, y2) = (lambda * x[0], lambda * x[1]);
    let q = 1.0 + y1 * y1 + y2 * y2;
    [2.0 * y1 / q, 2.0 * y2 / q, 1.0 - 2.0 / q]
}

/// `|∇π_λ(x)| = 2√2 λ / (1 + λ^2|x|^2)`.
#[inline]
pub fn stereographic_conformal_factor(lambda: f64, x: [f64; 2]) -> f64 {
    2.0 * core::f64::consts::SQRT_2 * lambda / (1.0 + lambda * lambda * (x[0] * x[0] + x[1] * x[1]))
}

/// Value and derivatives of `π_λ` at `x`.
#[derive(Debug, Clone, Copy)]
pub struct StereoJet {
    pub value: Vec3,
    /// `∂_{x_1} π_λ`, `∂_{x_2} π_λ`
    pub dx: [Vec3; 2],
    pub laplacian: Vec3,
    pub dlambda: Vec3,
    pub dlambda_laplacian: Vec3,
}

pub fn stereographic_jet(lambda: f64, x: [f64; 2]) -> StereoJet {
    let r2 = x[0] * x[0] + x[1] * x[1];
    let l2 = lambda * lambda;
    let q = 1.0 + l2 * r2;
    let q2 = q * q;
    let value = [2.0 * lambda * x[0] / q, 2.0 * lambda * x[1] / q, 1.0 - 2.0 / q];
    let mut dx = [[0.0; 3]; 2];
    for (k, d) in dx.iter_mut().enumerate() {
        for i in 0..2 {
            let delta = if i == k { 1.0 } else { 0.0 };
            d[i] = 2.0 * lambda * delta / q - 4.0 * lambda * l2 * x[i] * x[k] / q2;
        }
        d[2] = 4.0 * l2 * x[k] / q2;
    }
    let energy_density = 8.0 * l2 / q2;
    let laplacian = vec3::scale(-energy_density, value);
    let dl_factor = 2.0 * (1.0 - l2 * r2) / q2;
    let dlambda = [dl_factor * x[0], dl_factor * x[1], 4.0 * lambda * r2 / q2];
    let d_density = 16.0 * lambda * (1.0 - l2 * r2) / (q2 * q);
    let dlambda_laplacian = vec3::add(
        vec3::scale(-d_density, value),
        vec3::scale(-energy_density, dlambda),
    );
    StereoJet {
        value,
        dx,
        laplacian,
        dlambda,
        dlambda_laplacian,
    }
}

/// Axis-angle parameter of a rotation `R ∈ SO(3)`; `omega(y) = R y`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RotationParam {
    axis_angle: Vec3,
    matrix: Mat3,
}

impl Default for RotationParam {
    fn default() -> Self {
        Self::identity()
    }
}

impl RotationParam {
    pub fn identity() -> Self {
        Self::new([0.0; 3])
    }

    /// Rodrigues' formula for the rotation by `|r|` radians about `r / |r|`.
    pub fn new(r: Vec3) -> Self {
        let theta = vec3::norm(r);
        let mut m = [[1.0, 0.0, 0.0], [0.0, 1.0, 0.0], [0.0, 0.0, 1.0]];
        if theta > 0.0 {
            let k = vec3::scale(1.0 / theta, r);
            let (s, c) = (sin(theta), cos(theta));
            let kx = [[0.0, -k[2], k[1]], [k[2], 0.0, -k[0]], [-k[1], k[0], 0.0]];
            for (i, row) in m.iter_mut().enumerate() {
                for (j, cell) in row.iter_mut().enumerate() {
                    let kk = k[i] * k[j] - if i == j { 1.0 } else { 0.0 };
                    *cell += s * kx[i][j] + (1.0 - c) * kk;
                }
            }
        }
        Self {
            axis_angle: r,
            matrix: m,
        }
    }

    #[inline]
    pub fn axis_angle(&self) -> Vec3 {
        self.axis_angle
    }

    #[inline]
    pub fn matrix(&self) -> &Mat3 {
        &self.matrix
    }

    /// `|p* - R p*|`
    pub fn pole_displacement(&self) -> f64 {
        vec3::norm(vec3::sub(P_STAR, self.apply(P_STAR)))
    }

    /// Whether `omega = R` lies in the admissible family `|p* - R p*| <= sigma_1`.
    pub fn in_family(&self) -> bool {
        self.pole_displacement() <= SIGMA_1
    }

    #[inline]
    pub fn apply(&self, y: Vec3) -> Vec3 {
        vec3::mat_vec(&self.matrix, y)
    }

    /// Applies `R` to the planar vector `(w_1, w_2, 0)`.
    #[inline]
    pub fn apply_planar(&self, w: [f64; 2]) -> Vec3 {
        let m = &self.matrix;
        [
            m[0][0] * w[0] + m[0][1] * w[1],
            m[1][0] * w[0] + m[1][1] * w[1],
            m[2][0] * w[0] + m[2][1] * w[1],
        ]
    }
}

/// `omega(y) = R y`.
pub fn omega_eval(rot: &RotationParam, y: SpherePoint) -> SpherePoint {
    SpherePoint(rot.apply(y.get()))
}

/// `dω(p*)` restricted to `T_{p*}S^2 = span(e_1, e_2)`: the first two columns of `R`.
pub fn d_omega_pstar(rot: &RotationParam) -> [Vec3; 2] {
    let m = rot.matrix();
    [
        [m[0][0], m[1][0], m[2][0]],
        [m[0][1], m[1][1], m[2][1]],
    ]
}

/// `alpha_omega = |dω(p*)| / √2`.
pub fn alpha_omega(rot: &RotationParam) -> f64 {
    let [c1, c2] = d_omega_pstar(rot);
    sqrt(vec3::dot(c1, c1) + vec3::dot(c2, c2)) / core::f64::consts::SQRT_2
}

/// Dirichlet energy of `omega: S^2 -> S^2` computed through the chart `π`:
/// `½ ∫_{R^2} |∇(ω∘π)|^2 dx`, with the gradient taken by central
/// differences of the composed map. Gauss-Legendre in `σ` with `r = tan σ`,
/// trapezoidal in the angle.
pub fn sphere_energy_pullback(rot: &RotationParam, radial_nodes: usize, angular_nodes: usize) -> f64 {
    let rule = crate::math::gauss_legendre(radial_nodes);
    let half_pi = core::f64::consts::FRAC_PI_2;
    let dtheta = 2.0 * core::f64::consts::PI / angular_nodes as f64;
    let map = |x: [f64; 2]| rot.apply(stereographic(1.0, x));
    let mut total = 0.0;
    for &(t, w) in &rule {
        let sigma = 0.5 * half_pi * (t + 1.0);
        let (s, c) = crate::math::sin_cos(sigma);
        let r = s / c;
        let jac = 0.5 * half_pi * w / (c * c);
        let eps = 1e-5 * (1.0 + r);
        let mut ring = 0.0;
        for k in 0..angular_nodes {
            let (st, ct) = crate::math::sin_cos((k as f64 + 0.5) * dtheta);
            let x = [r * ct, r * st];
            let d1 = vec3::sub(map([x[0] + eps, x[1]]), map([x[0] - eps, x[1]]));
            let d2 = vec3::sub(map([x[0], x[1] + eps]), map([x[0], x[1] - eps]));
            ring += (vec3::dot(d1, d1) + vec3::dot(d2, d2)) / (4.0 * eps * eps);
        }
        total += 0.5 * ring * dtheta * r * jac;
    }
    total
}

/// Signed solid angle of the spherical triangle `(a, b, c)`.
fn solid_angle(a: Vec3, b: Vec3, c: Vec3) -> f64 {
    let num = vec3::dot(a, vec3::cross(b, c));
    let den = 1.0 + vec3::dot(a, b) + vec3::dot(b, c) + vec3::dot(c, a);
    2.0 * crate::math::atan2(num, den)
}

/// Discrete degree: each grid cell is split into two triangles whose signed
/// solid angles are summed and divided by `4π`. For a field with no
/// antipodal neighbours this is an integer up to rounding.
pub fn degree(u: &ToroidalField3) -> f64 {
    let g = u.grid();
    let n = g.n() as isize;
    let v = u.values();
    let mut total = 0.0;
    for i in 0..n {
        for j in 0..n {
            let p00 = v[g.index(i, j)];
            let p10 = v[g.index(i + 1, j)];
            let p11 = v[g.index(i + 1, j + 1)];
            let p01 = v[g.index(i, j + 1)];
            total += solid_angle(p00, p10, p11) + solid_angle(p00, p11, p01);
        }
    }
    total / (4.0 * core::f64::consts::PI)
}
