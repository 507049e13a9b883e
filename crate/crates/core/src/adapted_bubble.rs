//! Adapted bubbles `z = π_N(v)` glued into the torus at `a`.
//!
//! In translation coordinates `x = F_a(p)`:
//!
//! * `|x| < r0/2`: `v = ω∘π_λ + j` with the Green's correction
//!   `j = (2/λ) dω(p*)(∇_y J_a(x,0) - ∇_y J_a(0,0), 0)`;
//! * `r0/2 ≤ |x| < r0`: the cut-off blend of that with the far-field form;
//! * `|x| ≥ r0`: `v = ω(p*) + (2/λ) dω(p*)(∇_y G_a(x,0) - ∇_y J_a(0,0), 0)`.
//!
//! Besides the sampled field this module evaluates the exact first
//! derivatives and Laplacian of `v` ("jets"), so energies and tensions along
//! the bubble family can be sampled without stencil truncation error.

use alloc::vec::Vec;
use core::f64::consts::PI;
use core::fmt;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::greens_torus::{Ewald, GreensJet, RegularGradientTable};
use crate::math::sqrt;
use crate::sphere_maps::{self, stereographic_jet, RotationParam, SphereError};
use crate::torus_geometry::{
    translate_coords, GeometryError, ToroidalField3, ToroidalGrid, WeightField, R0,
};
use crate::vec3::{self, Vec3};

/// Smallest admissible bubble scale.
pub const LAMBDA_1: f64 = 2.0;

#[derive(Debug, Clone, PartialEq)]
pub enum BubbleError {
    LambdaTooSmall(f64),
    InvalidParameter(&'static str),
    Geometry(GeometryError),
    Sphere(SphereError),
}

impl fmt::Display for BubbleError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Self::LambdaTooSmall(l) => write!(f, "bubble scale {l} is below lambda_1 = {LAMBDA_1}"),
            Self::InvalidParameter(what) => write!(f, "invalid bubble parameter: {what}"),
            Self::Geometry(e) => write!(f, "{e}"),
            Self::Sphere(e) => write!(f, "{e}"),
        }
    }
}

impl core::error::Error for BubbleError {}

impl From<GeometryError> for BubbleError {
    fn from(e: GeometryError) -> Self {
        Self::Geometry(e)
    }
}

impl From<SphereError> for BubbleError {
    fn from(e: SphereError) -> Self {
        Self::Sphere(e)
    }
}

/// `(λ, a, R)` indexing the adapted bubble `z_λ^{a, ω}` with `ω = R`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BubbleParams {
    pub lambda: f64,
    pub a: [f64; 2],
    pub rot: RotationParam,
}

impl BubbleParams {
    pub fn new(lambda: f64, a: [f64; 2], rot: RotationParam) -> Result<Self, BubbleError> {
        if !lambda.is_finite() || !a.iter().all(|c| c.is_finite()) {
            return Err(BubbleError::InvalidParameter("non-finite value"));
        }
        if lambda < LAMBDA_1 {
            return Err(BubbleError::LambdaTooSmall(lambda));
        }
        let a = [reduce_unit(a[0]), reduce_unit(a[1])];
        Ok(Self { lambda, a, rot })
    }

    /// `λ` with the attachment point at the centre of the fundamental domain
    /// and `ω` the identity.
    pub fn centered(lambda: f64) -> Result<Self, BubbleError> {
        Self::new(lambda, [0.5, 0.5], RotationParam::identity())
    }

    pub fn with_lambda(&self, lambda: f64) -> Result<Self, BubbleError> {
        Self::new(lambda, self.a, self.rot)
    }

    /// `ω(p*) = R p*`, the value far from the bubble.
    pub fn far_value(&self) -> Vec3 {
        self.rot.apply(sphere_maps::P_STAR)
    }

    /// `ω(-p*) = R (0,0,-1)`, the value at the bubble core.
    pub fn core_value(&self) -> Vec3 {
        self.rot.apply([0.0, 0.0, -1.0])
    }

    /// Checks the resolution rule and `λ ≥ λ_1` for sampling on `grid`.
    pub fn check_grid(&self, grid: &ToroidalGrid) -> Result<(), BubbleError> {
        if self.lambda < LAMBDA_1 {
            return Err(BubbleError::LambdaTooSmall(self.lambda));
        }
        grid.check_resolution(self.lambda)?;
        Ok(())
    }

    pub fn weight(&self, grid: ToroidalGrid) -> Result<WeightField, BubbleError> {
        Ok(WeightField::new(grid, self.lambda, self.a)?)
    }
}

fn reduce_unit(t: f64) -> f64 {
    let r = t - crate::math::floor(t);
    if r >= 1.0 {
        0.0
    } else {
        r
    }
}

/// Quintic smoothstep cut-off: `1` on `[0, r0/2]`, `0` on `[r0, ∞)`, `C^2`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CutoffProfile {
    inner: f64,
    outer: f64,
}

impl Default for CutoffProfile {
    fn default() -> Self {
        Self {
            inner: 0.5 * R0,
            outer: R0,
        }
    }
}

impl CutoffProfile {
    pub fn inner(&self) -> f64 {
        self.inner
    }

    pub fn outer(&self) -> f64 {
        self.outer
    }

    /// `(φ, φ', φ'')` at radius `r`.
    pub fn eval(&self, r: f64) -> (f64, f64, f64) {
        if r <= self.inner {
            return (1.0, 0.0, 0.0);
        }
        if r >= self.outer {
            return (0.0, 0.0, 0.0);
        }
        let w = self.outer - self.inner;
        let s = (r - self.inner) / w;
        let s2 = s * s;
        let step = s2 * s * (10.0 - 15.0 * s + 6.0 * s2);
        let dstep = 30.0 * s2 * (1.0 - s) * (1.0 - s);
        let d2step = 60.0 * s * (1.0 - s) * (1.0 - 2.0 * s);
        (1.0 - step, -dstep / w, -d2step / (w * w))
    }

    pub fn value(&self, r: f64) -> f64 {
        self.eval(r).0
    }
}

/// Exact value, gradient and Laplacian of `v` at one point.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct VJet {
    pub v: Vec3,
    pub dv: [Vec3; 2],
    pub lap: Vec3,
}

/// `z = v/|v|` with its exact gradient and tension at one point.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ZJet {
    pub z: Vec3,
    pub dz: [Vec3; 2],
    pub tension: Vec3,
}

impl VJet {
    pub fn project(&self) -> Option<ZJet> {
        let n = vec3::norm(self.v);
        if n < sphere_maps::PROJECTION_GUARD {
            return None;
        }
        let z = vec3::scale(1.0 / n, self.v);
        let pd = [vec3::tangential(z, self.dv[0]), vec3::tangential(z, self.dv[1])];
        let dz = [vec3::scale(1.0 / n, pd[0]), vec3::scale(1.0 / n, pd[1])];
        let mut tension = vec3::scale(1.0 / n, vec3::tangential(z, self.lap));
        for k in 0..2 {
            let c = -2.0 * vec3::dot(z, self.dv[k]) / (n * n);
            tension = vec3::axpy(tension, c, pd[k]);
        }
        Some(ZJet { z, dz, tension })
    }
}

/// A bubble together with the Green's data it needs.
#[derive(Debug, Clone, Copy)]
pub struct BubbleModel {
    params: BubbleParams,
    ewald: Ewald,
    cutoff: CutoffProfile,
    grad_regular_origin: [f64; 2],
}

impl BubbleModel {
    pub fn new(params: BubbleParams) -> Self {
        let ewald = Ewald::default();
        Self {
            params,
            ewald,
            cutoff: CutoffProfile::default(),
            grad_regular_origin: ewald.grad_regular([0.0, 0.0]),
        }
    }

    pub fn params(&self) -> &BubbleParams {
        &self.params
    }

    pub fn cutoff(&self) -> &CutoffProfile {
        &self.cutoff
    }

    /// `j(x) = (2/λ) dω(p*)(∇_y J_a(x,0) - ∇_y J_a(0,0), 0)`.
    pub fn j_field(&self, x: [f64; 2]) -> Vec3 {
        let g = self.ewald.grad_regular(x);
        let s = 2.0 / self.params.lambda;
        self.params.rot.apply_planar([
            s * (g[0] - self.grad_regular_origin[0]),
            s * (g[1] - self.grad_regular_origin[1]),
        ])
    }

    /// `v` and its derivatives at translation coordinate `x ∈ [-1/2, 1/2)^2`.
    pub fn v_jet(&self, x: [f64; 2]) -> VJet {
        let p = &self.params;
        let s = 2.0 / p.lambda;
        let r2 = x[0] * x[0] + x[1] * x[1];
        let r = sqrt(r2);
        let green: GreensJet = self.ewald.jet(x);
        let c0 = self.grad_regular_origin;
        let far = p.far_value();

        // Far-field form B = ω(p*) + (2/λ) R(-∇G(x) - ∇_y J(0,0), 0).
        let far_form = |gj: &GreensJet| {
            let g = gj.grad.expect("far field away from pole");
            let h = gj.hess.expect("far field away from pole");
            let b = vec3::add(far, p.rot.apply_planar([s * (-g[0] - c0[0]), s * (-g[1] - c0[1])]));
            let db = [
                p.rot.apply_planar([-s * h[0][0], -s * h[1][0]]),
                p.rot.apply_planar([-s * h[0][1], -s * h[1][1]]),
            ];
            (b, db)
        };

        if r >= self.cutoff.outer {
            let (v, dv) = far_form(&green);
            return VJet {
                v,
                dv,
                lap: [0.0; 3],
            };
        }

        // Core form ω̃ + j.
        let st = stereographic_jet(p.lambda, x);
        let gr = green.grad_regular;
        let hr = green.hess_regular;
        let core_v = vec3::add(
            p.rot.apply(st.value),
            p.rot.apply_planar([s * (-gr[0] - c0[0]), s * (-gr[1] - c0[1])]),
        );
        let core_dv = [
            vec3::add(p.rot.apply(st.dx[0]), p.rot.apply_planar([-s * hr[0][0], -s * hr[1][0]])),
            vec3::add(p.rot.apply(st.dx[1]), p.rot.apply_planar([-s * hr[0][1], -s * hr[1][1]])),
        ];
        let core_lap = p.rot.apply(st.laplacian);

        if r <= self.cutoff.inner {
            return VJet {
                v: core_v,
                dv: core_dv,
                lap: core_lap,
            };
        }

        let (phi, dphi, d2phi) = self.cutoff.eval(r);
        let (b, db) = far_form(&green);
        let d = vec3::sub(core_v, b);
        let dd = [vec3::sub(core_dv[0], db[0]), vec3::sub(core_dv[1], db[1])];
        let grad_phi = [dphi * x[0] / r, dphi * x[1] / r];
        let lap_phi = d2phi + dphi / r;
        let v = vec3::axpy(b, phi, d);
        let dv = [
            vec3::add(vec3::axpy(db[0], phi, dd[0]), vec3::scale(grad_phi[0], d)),
            vec3::add(vec3::axpy(db[1], phi, dd[1]), vec3::scale(grad_phi[1], d)),
        ];
        let mut lap = vec3::scale(phi, core_lap);
        lap = vec3::axpy(lap, lap_phi, d);
        lap = vec3::axpy(lap, 2.0 * grad_phi[0], dd[0]);
        lap = vec3::axpy(lap, 2.0 * grad_phi[1], dd[1]);
        VJet { v, dv, lap }
    }

    /// `v` at translation coordinate `x`.
    pub fn v_at(&self, x: [f64; 2]) -> Vec3 {
        self.v_jet(x).v
    }

    /// The far-field formula evaluated at `x ≠ 0` regardless of the cut-off.
    pub fn far_form_at(&self, x: [f64; 2]) -> Vec3 {
        let p = &self.params;
        let s = 2.0 / p.lambda;
        let g = self.ewald.gradient(x).expect("off pole");
        let c0 = self.grad_regular_origin;
        vec3::add(
            p.far_value(),
            p.rot.apply_planar([s * (-g[0] - c0[0]), s * (-g[1] - c0[1])]),
        )
    }

    /// `ω̃_λ(x) + j(x)` regardless of the cut-off.
    pub fn core_form_at(&self, x: [f64; 2]) -> Vec3 {
        vec3::add(
            self.params.rot.apply(sphere_maps::stereographic(self.params.lambda, x)),
            self.j_field(x),
        )
    }

    /// Samples `z = π_N(v)` on `grid`.
    pub fn build(&self, grid: ToroidalGrid) -> Result<ToroidalField3, BubbleError> {
        self.params.check_grid(&grid)?;
        let mut values = Vec::with_capacity(grid.len());
        for idx in 0..grid.len() {
            let x = translate_coords(self.params.a, grid.point(idx));
            let v = self.v_at(x);
            let z = sphere_maps::project(v).ok_or(SphereError::BelowGuard {
                index: idx,
                norm: vec3::norm(v),
            })?;
            values.push(z);
        }
        Ok(ToroidalField3::with_flag(grid, values, true))
    }

    /// Samples the exact jets of `z` on `grid`.
    pub fn build_jets(&self, grid: ToroidalGrid) -> Result<BubbleJetField, BubbleError> {
        self.params.check_grid(&grid)?;
        let mut jets = Vec::with_capacity(grid.len());
        for idx in 0..grid.len() {
            let x = translate_coords(self.params.a, grid.point(idx));
            let vj = self.v_jet(x);
            let zj = vj.project().ok_or(SphereError::BelowGuard {
                index: idx,
                norm: vec3::norm(vj.v),
            })?;
            jets.push(zj);
        }
        Ok(BubbleJetField {
            grid,
            params: self.params,
            jets,
        })
    }
}

/// `j(x)` for the given bubble.
pub fn j_field(params: &BubbleParams, x: [f64; 2]) -> Vec3 {
    BubbleModel::new(*params).j_field(x)
}

/// The adapted bubble `z_λ^{a,ω}` sampled on `grid`.
pub fn build_bubble(params: &BubbleParams, grid: ToroidalGrid) -> Result<ToroidalField3, BubbleError> {
    BubbleModel::new(*params).build(grid)
}

/// Fast sampler for many bubbles on one grid, reading `∇_y J_a(x, 0)` from an
/// interpolation table instead of summing the Ewald series per sample.
#[derive(Debug, Clone)]
pub struct BubbleSampler {
    table: RegularGradientTable,
    cutoff: CutoffProfile,
    origin: [f64; 2],
}

impl Default for BubbleSampler {
    fn default() -> Self {
        Self::new()
    }
}

impl BubbleSampler {
    pub fn new() -> Self {
        let ewald = Ewald::default();
        Self {
            table: RegularGradientTable::new(&ewald, RegularGradientTable::DEFAULT_CELLS),
            cutoff: CutoffProfile::default(),
            origin: ewald.grad_regular([0.0, 0.0]),
        }
    }

    /// `v` at translation coordinate `x`.
    pub fn v_at(&self, params: &BubbleParams, x: [f64; 2]) -> Vec3 {
        let s = 2.0 / params.lambda;
        let gr = self.table.eval(x);
        let c0 = self.origin;
        let r2 = x[0] * x[0] + x[1] * x[1];
        let r = sqrt(r2);
        let far = |gr: [f64; 2]| {
            vec3::add(
                params.far_value(),
                params.rot.apply_planar([
                    s * (gr[0] + x[0] / r2 - c0[0]),
                    s * (gr[1] + x[1] / r2 - c0[1]),
                ]),
            )
        };
        if r >= self.cutoff.outer {
            return far(gr);
        }
        let core = vec3::add(
            params.rot.apply(sphere_maps::stereographic(params.lambda, x)),
            params.rot.apply_planar([s * (gr[0] - c0[0]), s * (gr[1] - c0[1])]),
        );
        if r <= self.cutoff.inner {
            return core;
        }
        let phi = self.cutoff.value(r);
        let b = far(gr);
        vec3::axpy(b, phi, vec3::sub(core, b))
    }

    /// Samples `z = π_N(v)` on `grid`; same contract as [`build_bubble`].
    pub fn build(&self, params: &BubbleParams, grid: ToroidalGrid) -> Result<ToroidalField3, BubbleError> {
        params.check_grid(&grid)?;
        let mut values = Vec::with_capacity(grid.len());
        for idx in 0..grid.len() {
            let x = translate_coords(params.a, grid.point(idx));
            let v = self.v_at(params, x);
            let z = sphere_maps::project(v).ok_or(SphereError::BelowGuard {
                index: idx,
                norm: vec3::norm(v),
            })?;
            values.push(z);
        }
        Ok(ToroidalField3::with_flag(grid, values, true))
    }
}

/// Exact pointwise data of a bubble on a grid.
#[derive(Debug, Clone)]
pub struct BubbleJetField {
    grid: ToroidalGrid,
    params: BubbleParams,
    jets: Vec<ZJet>,
}

impl BubbleJetField {
    pub fn grid(&self) -> ToroidalGrid {
        self.grid
    }

    pub fn params(&self) -> &BubbleParams {
        &self.params
    }

    pub fn jets(&self) -> &[ZJet] {
        &self.jets
    }

    pub fn field(&self) -> ToroidalField3 {
        ToroidalField3::with_flag(self.grid, self.jets.iter().map(|j| j.z).collect(), true)
    }

    pub fn tension_field(&self) -> ToroidalField3 {
        ToroidalField3::with_flag(self.grid, self.jets.iter().map(|j| j.tension).collect(), false)
    }

    /// `½ Σ |∇z|^2 h^2` with the exact gradient.
    pub fn energy(&self) -> f64 {
        let h = self.grid.h();
        0.5 * self
            .jets
            .iter()
            .map(|j| vec3::dot(j.dz[0], j.dz[0]) + vec3::dot(j.dz[1], j.dz[1]))
            .sum::<f64>()
            * h
            * h
    }

    /// `‖τ(z)‖_{L^2}` with the exact tension.
    pub fn tension_l2(&self) -> f64 {
        self.tension_field().l2_norm()
    }
}

/// Energy of `z` from exact jets sampled on `grid`.
pub fn bubble_energy(params: &BubbleParams, grid: ToroidalGrid) -> Result<f64, BubbleError> {
    Ok(BubbleModel::new(*params).build_jets(grid)?.energy())
}

/// `E(z) - E(ω, S^2) = E(z) - 4π`.
pub fn energy_gap(params: &BubbleParams, grid: ToroidalGrid) -> Result<f64, BubbleError> {
    Ok(bubble_energy(params, grid)? - crate::SPHERE_ENERGY)
}

/// Relative step of the central differences in `λ`.
pub const LAMBDA_STEP: f64 = 1e-3;
/// Step of the central differences in the rotation parameter.
pub const ROTATION_STEP: f64 = 1e-3;

/// `∂_λ E(z_λ)` by a central difference with step `1e-3 λ`.
pub fn de_dlambda(params: &BubbleParams, grid: ToroidalGrid) -> Result<f64, BubbleError> {
    let dl = LAMBDA_STEP * params.lambda;
    let ep = bubble_energy(&params.with_lambda(params.lambda + dl)?, grid)?;
    let em = bubble_energy(&params.with_lambda(params.lambda - dl)?, grid)?;
    Ok((ep - em) / (2.0 * dl))
}

/// `4π |dω(p*)|^2 J λ^{-3}`, the predicted leading part of
/// [`leading_term_integral`].
pub fn leading_term_prediction(params: &BubbleParams, j_constant: f64) -> f64 {
    let [c1, c2] = sphere_maps::d_omega_pstar(&params.rot);
    let d_omega_sq = vec3::dot(c1, c1) + vec3::dot(c2, c2);
    4.0 * PI * d_omega_sq * j_constant / (params.lambda * params.lambda * params.lambda)
}

/// `∫_{|x| < r0/2} j · Δ ∂_λ ω̃_λ dx`, with `∂_λ` and `Δ` taken analytically and
/// the disc integrated in polar coordinates: composite Gauss-Legendre in the
/// radius (panels refined geometrically towards the core), trapezoidal in the
/// angle.
pub fn leading_term_integral(params: &BubbleParams) -> f64 {
    let model = BubbleModel::new(*params);
    let outer = model.cutoff.inner;
    let rule = crate::math::gauss_legendre(16);
    let angular = 64;
    let dtheta = 2.0 * PI / angular as f64;
    // Panel edges: 0, then geometric from 1e-3/λ up to r0/2.
    let mut edges = Vec::new();
    edges.push(0.0);
    let mut e = 1e-3 / params.lambda;
    while e < outer {
        edges.push(e);
        e *= 1.5;
    }
    edges.push(outer);
    let mut total = 0.0;
    for w in edges.windows(2) {
        let (lo, hi) = (w[0], w[1]);
        let half = 0.5 * (hi - lo);
        let mid = 0.5 * (hi + lo);
        for &(t, wt) in &rule {
            let r = mid + half * t;
            let mut ring = 0.0;
            for k in 0..angular {
                let (sn, cs) = crate::math::sin_cos((k as f64 + 0.5) * dtheta);
                let x = [r * cs, r * sn];
                let st = stereographic_jet(params.lambda, x);
                let integrand = vec3::dot(model.j_field(x), params.rot.apply(st.dlambda_laplacian));
                ring += integrand;
            }
            total += ring * dtheta * r * wt * half;
        }
    }
    total
}

/// Sup over `Σ \ B_ι(a)` of `|z - ω(p*)|`.
pub fn far_field_sup(z: &ToroidalField3, params: &BubbleParams) -> f64 {
    let g = z.grid();
    let far = params.far_value();
    z.values()
        .iter()
        .enumerate()
        .filter(|(idx, _)| {
            let x = translate_coords(params.a, g.point(*idx));
            x[0] * x[0] + x[1] * x[1] >= R0 * R0
        })
        .map(|(_, v)| vec3::norm(vec3::sub(*v, far)))
        .fold(0.0, f64::max)
}

/// Sup over grid samples in the annulus `r0/2 ≤ |x| < r0` of the gluing
/// error `|ṽ - (ω̃_λ + j)| = (1 - φ)|ω̃_λ + j - B|`.
pub fn seam_error_sup(params: &BubbleParams, grid: ToroidalGrid) -> f64 {
    let model = BubbleModel::new(*params);
    let c = model.cutoff;
    let mut worst: f64 = 0.0;
    for idx in 0..grid.len() {
        let x = translate_coords(params.a, grid.point(idx));
        let r = sqrt(x[0] * x[0] + x[1] * x[1]);
        if r < c.inner || r >= c.outer {
            continue;
        }
        let e = vec3::sub(model.v_at(x), model.core_form_at(x));
        worst = worst.max(vec3::norm(e));
    }
    worst
}

/// Number of random test fields in [`pairing_sup`].
pub const PAIRING_SAMPLES: usize = 50;

/// `sup |Σ τ(z)·w h^2|` over random tangential `w` with `‖w‖_z = 1`.
///
/// Half of the test fields are low Fourier modes (`|k_i| ≤ 2`), half live at
/// the bubble scale, `(1 + λ^2|x|^2)^{-1} (c0 + c1 λx1 + c2 λx2)`; all
/// coefficients are uniform in `[-1, 1]` from a ChaCha8 stream seeded by
/// `seed`. Each field is projected onto `T_z S^2` before normalising.
pub fn pairing_sup(jets: &BubbleJetField, samples: usize, seed: u64) -> Result<f64, BubbleError> {
    let grid = jets.grid;
    let params = jets.params;
    let rho = params.weight(grid)?;
    let z = jets.field();
    let tau = jets.tension_field();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let lambda = params.lambda;
    let mut best: f64 = 0.0;
    for s in 0..samples {
        let local = s % 2 == 1;
        let mut coeff = [[0.0f64; 3]; 50];
        for c in coeff.iter_mut() {
            for v in c.iter_mut() {
                *v = rng.gen_range(-1.0..1.0);
            }
        }
        let mut values = Vec::with_capacity(grid.len());
        for (idx, zv) in z.values().iter().enumerate() {
            let x = translate_coords(params.a, grid.point(idx));
            let mut w = [0.0; 3];
            if local {
                let q = 1.0 / (1.0 + lambda * lambda * (x[0] * x[0] + x[1] * x[1]));
                for d in 0..3 {
                    w[d] = q * (coeff[0][d] + coeff[1][d] * lambda * x[0] + coeff[2][d] * lambda * x[1]);
                }
            } else {
                let mut m = 0;
                for k1 in -2i32..=2 {
                    for k2 in -2i32..=2 {
                        let (sn, cs) = crate::math::sin_cos(2.0 * PI * (k1 as f64 * x[0] + k2 as f64 * x[1]));
                        for d in 0..3 {
                            w[d] += coeff[2 * m][d] * cs + coeff[2 * m + 1][d] * sn;
                        }
                        m += 1;
                    }
                }
            }
            values.push(vec3::tangential(*zv, w));
        }
        let w = ToroidalField3::with_flag(grid, values, false);
        let norm = crate::torus_geometry::weighted_norm(&w, &rho);
        if norm > 0.0 {
            best = best.max(tau.l2_dot(&w).abs() / norm);
        }
    }
    Ok(best)
}

/// Normalised variation norms along the three parameter directions.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct VariationReport {
    pub lambda: f64,
    /// `‖λ ∂_λ z‖_z`
    pub scale_norm: f64,
    /// `‖λ^{-1} ∂_{a_i} z‖_z`
    pub translation_norms: [f64; 2],
    /// `‖∂_{r_k} z‖_z` for the three axis-angle components.
    pub rotation_norms: [f64; 3],
    /// `‖∂_λ ρ_z‖_{L^2}`
    pub weight_variation: f64,
    /// `‖∂_λ ρ_z‖_{L^2} / ‖∂_λ z‖_z`
    pub weight_ratio: f64,
}

/// `‖w‖_z` for `w = (z⁺ - z⁻) / (2δ)` built from two jet fields, with the
/// gradient of `w` differenced from the exact gradients.
fn difference_norm(plus: &BubbleJetField, minus: &BubbleJetField, delta: f64, rho: &WeightField) -> f64 {
    let h = plus.grid.h();
    let inv = 1.0 / (2.0 * delta);
    let mut s = 0.0;
    for ((p, m), r) in plus.jets.iter().zip(&minus.jets).zip(rho.values()) {
        let w = vec3::scale(inv, vec3::sub(p.z, m.z));
        let d1 = vec3::scale(inv, vec3::sub(p.dz[0], m.dz[0]));
        let d2 = vec3::scale(inv, vec3::sub(p.dz[1], m.dz[1]));
        s += vec3::dot(d1, d1) + vec3::dot(d2, d2) + r * r * vec3::dot(w, w);
    }
    sqrt(s * h * h)
}

/// Finite-difference variations of `z` in `λ` (step `1e-3 λ`), in `a` (step
/// `h`) and in the rotation (step `1e-3`), measured in `‖·‖_z`.
pub fn variation_scalings(params: &BubbleParams, grid: ToroidalGrid) -> Result<VariationReport, BubbleError> {
    let rho = params.weight(grid)?;
    let jets = |p: BubbleParams| BubbleModel::new(p).build_jets(grid);
    let lambda = params.lambda;
    let dl = LAMBDA_STEP * lambda;
    let dz_dlambda = difference_norm(
        &jets(params.with_lambda(lambda + dl)?)?,
        &jets(params.with_lambda(lambda - dl)?)?,
        dl,
        &rho,
    );
    let h = grid.h();
    let mut translation_norms = [0.0; 2];
    for (k, out) in translation_norms.iter_mut().enumerate() {
        let mut ap = params.a;
        let mut am = params.a;
        ap[k] += h;
        am[k] -= h;
        let plus = jets(BubbleParams::new(lambda, ap, params.rot)?)?;
        let minus = jets(BubbleParams::new(lambda, am, params.rot)?)?;
        *out = difference_norm(&plus, &minus, h, &rho) / lambda;
    }
    let mut rotation_norms = [0.0; 3];
    for (k, out) in rotation_norms.iter_mut().enumerate() {
        let mut rp = params.rot.axis_angle();
        let mut rm = rp;
        rp[k] += ROTATION_STEP;
        rm[k] -= ROTATION_STEP;
        let plus = jets(BubbleParams::new(lambda, params.a, RotationParam::new(rp))?)?;
        let minus = jets(BubbleParams::new(lambda, params.a, RotationParam::new(rm))?)?;
        *out = difference_norm(&plus, &minus, ROTATION_STEP, &rho);
    }
    let rho_p = WeightField::new(grid, lambda + dl, params.a)?;
    let rho_m = WeightField::new(grid, lambda - dl, params.a)?;
    let weight_variation = sqrt(
        rho_p
            .values()
            .iter()
            .zip(rho_m.values())
            .map(|(a, b)| {
                let d = (a - b) / (2.0 * dl);
                d * d
            })
            .sum::<f64>()
            * h
            * h,
    );
    Ok(VariationReport {
        lambda,
        scale_norm: lambda * dz_dlambda,
        translation_norms,
        rotation_norms,
        weight_variation,
        weight_ratio: weight_variation / dz_dlambda,
    })
}

/// `‖const‖_z^2 / |c|^2`: `Σ ρ^2 h^2`, the semi-analytic comparison used by
/// the mean-value estimate.
pub fn weight_l2_sq(rho: &WeightField) -> f64 {
    let h = rho.grid().h();
    rho.values().iter().map(|r| r * r).sum::<f64>() * h * h
}

/// `π (1 - 1/q) + (1 - π r0^2) λ^2 / q^2` with `q = 1 + λ^2 r0^2`, the
/// continuum value of `∫ ρ_λ^2`.
pub fn weight_l2_sq_continuum(lambda: f64) -> f64 {
    let q = 1.0 + lambda * lambda * R0 * R0;
    PI * (1.0 - 1.0 / q) + (1.0 - PI * R0 * R0) * lambda * lambda / (q * q)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::sphere_maps::degree;

    fn rotated(lambda: f64) -> BubbleParams {
        BubbleParams::new(lambda, [0.3, 0.7], RotationParam::new([0.1, -0.05, 0.4])).unwrap()
    }

    #[test]
    fn cutoff_profile_shape() {
        let c = CutoffProfile::default();
        assert_eq!(c.eval(0.0), (1.0, 0.0, 0.0));
        assert_eq!(c.eval(R0), (0.0, 0.0, 0.0));
        let eps = 1e-7;
        for r in [c.inner(), c.outer()] {
            let lo = c.eval(r - eps);
            let hi = c.eval(r + eps);
            assert!((lo.0 - hi.0).abs() < 1e-9);
            assert!((lo.1 - hi.1).abs() < 1e-4);
            assert!((lo.2 - hi.2).abs() < 1e-2);
        }
        let mut prev = 1.0;
        for k in 0..=200 {
            let v = c.value(0.5 * R0 + 0.5 * R0 * k as f64 / 200.0);
            assert!(v <= prev);
            prev = v;
        }
        for r in [0.13, 0.17, 0.2, 0.24] {
            let (_, d, d2) = c.eval(r);
            let fd = (c.value(r + 1e-6) - c.value(r - 1e-6)) / 2e-6;
            let fd2 = (c.eval(r + 1e-6).1 - c.eval(r - 1e-6).1) / 2e-6;
            assert!((d - fd).abs() < 1e-6, "{d} {fd}");
            assert!((d2 - fd2).abs() < 1e-4, "{d2} {fd2}");
        }
    }

    #[test]
    fn params_validation() {
        assert!(matches!(BubbleParams::centered(1.0), Err(BubbleError::LambdaTooSmall(_))));
        assert!(BubbleParams::centered(f64::NAN).is_err());
        let p = BubbleParams::new(3.0, [1.25, -0.25], RotationParam::identity()).unwrap();
        assert!((p.a[0] - 0.25).abs() < 1e-15 && (p.a[1] - 0.75).abs() < 1e-15);
        let g = ToroidalGrid::new(64).unwrap();
        let p = BubbleParams::centered(40.0).unwrap();
        assert!(matches!(build_bubble(&p, g), Err(BubbleError::Geometry(GeometryError::Underresolved { .. }))));
    }

    #[test]
    fn j_vanishes_at_origin_and_is_tangent() {
        for lambda in [20.0, 40.0] {
            let p = rotated(lambda);
            let j0 = j_field(&p, [0.0, 0.0]);
            assert!(vec3::norm(j0) < 1e-14);
            let far = p.far_value();
            for x in [[0.1, 0.02], [-0.05, 0.2], [0.0, -0.17]] {
                assert!(vec3::dot(j_field(&p, x), far).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn j_is_linear_in_inverse_scale() {
        let x = [0.07, -0.11];
        let r = sqrt(x[0] * x[0] + x[1] * x[1]);
        let consts: Vec<f64> = [20.0, 40.0, 80.0]
            .iter()
            .map(|&l| vec3::norm(j_field(&rotated(l), x)) * l / r)
            .collect();
        assert!((consts[0] - consts[2]).abs() < 1e-12 * consts[0]);
    }

    #[test]
    fn inside_and_outside_formulas_agree_beyond_cutoff() {
        let m = BubbleModel::new(rotated(20.0));
        for x in [[0.25, 0.0], [0.3, -0.2], [-0.45, 0.45], [0.0, 0.26]] {
            let d = vec3::norm(vec3::sub(m.v_at(x), m.far_form_at(x)));
            assert!(d < 1e-10, "{d}");
        }
        for x in [[0.05, 0.0], [0.1, -0.05], [0.0, 0.124]] {
            let d = vec3::norm(vec3::sub(m.v_at(x), m.core_form_at(x)));
            assert!(d < 1e-12, "{d}");
        }
    }

    #[test]
    fn v_jet_matches_finite_differences() {
        let m = BubbleModel::new(rotated(12.0));
        let e = 1e-4;
        for x in [[0.03, -0.02], [0.1, 0.12], [0.17, -0.04], [0.3, 0.21]] {
            let jet = m.v_jet(x);
            let c = m.v_at(x);
            let xp = [m.v_at([x[0] + e, x[1]]), m.v_at([x[0], x[1] + e])];
            let xm = [m.v_at([x[0] - e, x[1]]), m.v_at([x[0], x[1] - e])];
            for k in 0..2 {
                let fd = vec3::scale(0.5 / e, vec3::sub(xp[k], xm[k]));
                assert!(vec3::norm(vec3::sub(fd, jet.dv[k])) < 1e-5 * (1.0 + vec3::norm(fd)), "{x:?} {k} {fd:?} {:?}", jet.dv[k]);
            }
            let mut lap = [0.0; 3];
            for k in 0..2 {
                lap = vec3::add(lap, vec3::scale(1.0 / (e * e), vec3::sub(vec3::add(xp[k], xm[k]), vec3::scale(2.0, c))));
            }
            assert!(vec3::norm(vec3::sub(lap, jet.lap)) < 1e-3 * (1.0 + vec3::norm(lap)), "{lap:?} {:?}", jet.lap);
        }
    }

    #[test]
    fn core_value_and_sphere_invariant() {
        let p = rotated(16.0);
        let g = ToroidalGrid::new(128).unwrap();
        let z = build_bubble(&p, g).unwrap();
        assert!(z.on_sphere());
        for v in z.values() {
            assert!((vec3::norm(*v) - 1.0).abs() < 1e-12);
        }
        let near = z.values()[g.nearest(p.a)];
        assert!(vec3::norm(vec3::sub(near, p.core_value())) < 2.0 * p.lambda * g.h());
        assert!((degree(&z).abs() - 1.0).abs() < 1e-9);
    }

    #[test]
    fn jet_field_matches_sampled_field() {
        let p = rotated(10.0);
        let g = ToroidalGrid::new(64).unwrap();
        let z = build_bubble(&p, g).unwrap();
        let jf = BubbleModel::new(p).build_jets(g).unwrap();
        assert_eq!(jf.field().values(), z.values());
        for j in jf.jets() {
            assert!(vec3::dot(j.z, j.tension).abs() < 1e-10);
        }
    }

    #[test]
    fn leading_term_is_rotation_invariant() {
        let base = leading_term_integral(&BubbleParams::centered(30.0).unwrap());
        let r = leading_term_integral(&rotated(30.0));
        assert!((base - r).abs() < 1e-10 * base.abs());
        assert!(base < 0.0);
    }

    #[test]
    fn weight_norm_continuum_limit() {
        let g = ToroidalGrid::new(256).unwrap();
        let rho = WeightField::new(g, 10.0, [0.5, 0.5]).unwrap();
        let d = weight_l2_sq(&rho);
        let c = weight_l2_sq_continuum(10.0);
        assert!((d - c).abs() < 1e-2 * c, "{d} {c}");
    }

    #[test]
    fn fast_sampler_agrees_with_exact_build() {
        let g = ToroidalGrid::new(128).unwrap();
        let sampler = BubbleSampler::new();
        for p in [rotated(12.0), BubbleParams::new(20.0, [0.01, 0.98], RotationParam::new([0.0, 0.3, 0.0])).unwrap()] {
            let exact = build_bubble(&p, g).unwrap();
            let fast = sampler.build(&p, g).unwrap();
            let worst = exact
                .values()
                .iter()
                .zip(fast.values())
                .map(|(a, b)| vec3::norm(vec3::sub(*a, *b)))
                .fold(0.0, f64::max);
            assert!(worst < 1e-10, "{worst}");
        }
    }
}
