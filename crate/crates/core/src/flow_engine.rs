//! Harmonic map flow `∂_t u = τ(u)` by projected Heun steps, with bubble
//! detection by ball-energy concentration.

use alloc::vec;
use alloc::vec::Vec;
use core::fmt;

use crate::adapted_bubble::{BubbleError, BubbleParams, BubbleSampler};
use crate::diagnostics::{self, DiagnosticsRecord, DistOptions};
use crate::math::{ceil, floor, sqrt};
use crate::sphere_maps::{self, RotationParam, SphereError};
use crate::torus_geometry::{gradient_sq, GeometryError, ToroidalField3, ToroidalGrid};
use crate::vec3::Vec3;
use crate::SPHERE_ENERGY;

/// Largest admissible step as a multiple of `h^2`.
pub const MAX_DT_FACTOR: f64 = 0.2;
/// Accepted steps may raise the energy by at most this fraction of `E(0)`.
pub const ENERGY_SLACK: f64 = 1e-8;
/// Clean steps after which a halved step is grown again by [`DT_GROWTH`].
pub const CLEAN_STEPS_BEFORE_GROWTH: usize = 50;
pub const DT_GROWTH: f64 = 1.1;
/// Relative tolerance of the bisection for the concentration radius.
pub const RADIUS_TOL: f64 = 1e-3;
/// Radii below this many grid spacings count as unresolved.
pub const UNRESOLVED_CELLS: f64 = 3.0;

#[derive(Debug, Clone, PartialEq)]
pub enum FlowError {
    EnergyIncreased { before: f64, after: f64 },
    StepTooLarge { dt: f64, max: f64 },
    NotOnSphere,
    Sphere(SphereError),
    Geometry(GeometryError),
    Bubble(BubbleError),
    RetriesExhausted { t: f64, dt: f64 },
}

impl fmt::Display for FlowError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Self::EnergyIncreased { before, after } => {
                write!(f, "energy increased from {before} to {after}")
            }
            Self::StepTooLarge { dt, max } => write!(f, "time step {dt} exceeds {max}"),
            Self::NotOnSphere => write!(f, "flow state must be a sphere-valued field"),
            Self::Sphere(e) => write!(f, "{e}"),
            Self::Geometry(e) => write!(f, "{e}"),
            Self::Bubble(e) => write!(f, "{e}"),
            Self::RetriesExhausted { t, dt } => {
                write!(f, "step at t = {t} still increases the energy with dt = {dt}")
            }
        }
    }
}

impl core::error::Error for FlowError {}

impl From<SphereError> for FlowError {
    fn from(e: SphereError) -> Self {
        Self::Sphere(e)
    }
}

impl From<GeometryError> for FlowError {
    fn from(e: GeometryError) -> Self {
        Self::Geometry(e)
    }
}

impl From<BubbleError> for FlowError {
    fn from(e: BubbleError) -> Self {
        Self::Bubble(e)
    }
}

/// `u(t)` with cached tension and energy.
#[derive(Debug, Clone)]
pub struct FlowState {
    pub t: f64,
    u: ToroidalField3,
    tension: ToroidalField3,
    pub energy: f64,
    pub tension_l2: f64,
    pub initial_energy: f64,
    pub steps: usize,
    /// Step size of the last accepted step (`0` initially).
    pub dt: f64,
}

impl FlowState {
    pub fn new(u: ToroidalField3) -> Result<Self, FlowError> {
        if !u.on_sphere() {
            return Err(FlowError::NotOnSphere);
        }
        let (tension, e) = sphere_maps::tension_with_energy(&u);
        Ok(Self {
            t: 0.0,
            tension_l2: tension.l2_norm(),
            tension,
            energy: e,
            initial_energy: e,
            u,
            steps: 0,
            dt: 0.0,
        })
    }

    pub fn u(&self) -> &ToroidalField3 {
        &self.u
    }

    pub fn tension(&self) -> &ToroidalField3 {
        &self.tension
    }

    pub fn grid(&self) -> ToroidalGrid {
        self.u.grid()
    }

    /// `MAX_DT_FACTOR h^2`.
    pub fn max_dt(&self) -> f64 {
        let h = self.grid().h();
        MAX_DT_FACTOR * h * h
    }
}

/// One projected Heun step:
/// `u1 = π(u + dt τ(u))`, `u' = π(u + dt/2 (τ(u) + τ(u1)))`.
pub fn step(state: &FlowState, dt: f64) -> Result<FlowState, FlowError> {
    let max = state.max_dt();
    if !(dt > 0.0) || dt > max * (1.0 + 1e-12) {
        return Err(FlowError::StepTooLarge { dt, max });
    }
    let grid = state.grid();
    let u = state.u.values();
    let k1 = state.tension.values();
    fn project_sum(grid: ToroidalGrid, len: usize, f: impl Fn(usize) -> Vec3) -> Result<ToroidalField3, FlowError> {
        let mut out = Vec::with_capacity(len);
        for index in 0..len {
            let v = f(index);
            out.push(sphere_maps::project(v).ok_or(SphereError::BelowGuard {
                index,
                norm: crate::vec3::norm(v),
            })?);
        }
        Ok(ToroidalField3::with_flag(grid, out, true))
    }
    let u1 = project_sum(grid, u.len(), |i| crate::vec3::axpy(u[i], dt, k1[i]))?;
    let k2 = sphere_maps::tension(&u1);
    let k2 = k2.values();
    let next = project_sum(grid, u.len(), |i| crate::vec3::axpy(u[i], 0.5 * dt, crate::vec3::add(k1[i], k2[i])))?;
    let (tension, e) = sphere_maps::tension_with_energy(&next);
    if e > state.energy + ENERGY_SLACK * state.initial_energy {
        return Err(FlowError::EnergyIncreased {
            before: state.energy,
            after: e,
        });
    }
    Ok(FlowState {
        t: state.t + dt,
        tension_l2: tension.l2_norm(),
        tension,
        energy: e,
        initial_energy: state.initial_energy,
        u: next,
        steps: state.steps + 1,
        dt,
    })
}

/// Result of [`detect_bubble`].
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BubbleDetection {
    pub a: [f64; 2],
    /// Grid index of `a`.
    pub center: usize,
    pub lambda: f64,
    pub radius: f64,
    /// `E(u, B_r(a))` at the solved radius.
    pub core_energy: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub enum DetectionError {
    NoBubble { energy: f64 },
    /// Concentration radius below `3h`: a singular event on this grid.
    Unresolved { radius: f64, h: f64, center: usize },
}

impl fmt::Display for DetectionError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Self::NoBubble { energy } => write!(f, "no bubble: total energy {energy} below 2π"),
            Self::Unresolved { radius, h, .. } => {
                write!(f, "concentration radius {radius} is below 3h = {}", 3.0 * h)
            }
        }
    }
}

impl core::error::Error for DetectionError {}

/// Energy density `½|∇u|^2_h h^2` per sample.
fn energy_cells(u: &ToroidalField3) -> Vec<f64> {
    let h = u.grid().h();
    gradient_sq(u).values.iter().map(|g| 0.5 * g * h * h).collect()
}

/// Sample weight of the ball of radius `r` at distance `d`: samples are
/// treated as cells of width `h`, so partially covered cells count with the
/// covered fraction along the radius.
fn ball_weight(d: f64, r: f64, h: f64) -> f64 {
    ((r - d) / h + 0.5).clamp(0.0, 1.0)
}

/// Offset range `lo..=hi` covering a reach, kept inside one period so no
/// sample is counted twice.
fn offset_bounds(reach: isize, n: isize) -> (isize, isize) {
    if 2 * reach + 1 >= n {
        (-(n / 2), n - 1 - n / 2)
    } else {
        (-reach, reach)
    }
}

/// Offsets with nonzero weight for a ball of radius `r`: runs of unit
/// weight `(di, -m..=m)` and individually weighted boundary cells. Summing
/// in this fixed order makes ball energies exactly translation equivariant.
struct BallStencil {
    runs: Vec<(isize, isize)>,
    partial: Vec<(isize, isize, f64)>,
}

impl BallStencil {
    fn new(grid: ToroidalGrid, r: f64) -> Self {
        let h = grid.h();
        let (lo, hi) = offset_bounds(floor(r / h + 0.5) as isize, grid.n() as isize);
        let mut runs = Vec::new();
        let mut partial = Vec::new();
        for di in lo..=hi {
            let dx = di as f64 * h;
            let weight = |dj: isize| {
                let dy = dj as f64 * h;
                ball_weight(sqrt(dx * dx + dy * dy), r, h)
            };
            let mut full = -1isize;
            while full < hi && -(full + 1) >= lo && weight(full + 1) == 1.0 {
                full += 1;
            }
            if full >= 0 {
                runs.push((di, full));
            }
            for dj in lo..=hi {
                if dj.abs() > full {
                    let w = weight(dj);
                    if w > 0.0 {
                        partial.push((di, dj, w));
                    }
                }
            }
        }
        Self { runs, partial }
    }

    fn energy(&self, cells: &[f64], grid: ToroidalGrid, center: usize) -> f64 {
        let n = grid.n() as isize;
        let (ci, cj) = grid.coords(center);
        let (ci, cj) = (ci as isize, cj as isize);
        let mut total = 0.0;
        for &(di, m) in &self.runs {
            let row = ((ci + di).rem_euclid(n) * n) as usize;
            if cj - m >= 0 && cj + m < n {
                total += cells[row + (cj - m) as usize..=row + (cj + m) as usize].iter().sum::<f64>();
            } else {
                for dj in -m..=m {
                    total += cells[row + (cj + dj).rem_euclid(n) as usize];
                }
            }
        }
        for &(di, dj, w) in &self.partial {
            total += w * cells[grid.index(ci + di, cj + dj)];
        }
        total
    }
}

/// Periodic box sums of half-width `reach` around every sample.
fn box_sums(cells: &[f64], grid: ToroidalGrid, reach: isize) -> Vec<f64> {
    let n = grid.n();
    let ni = n as isize;
    let (lo, hi) = offset_bounds(reach, ni);
    let window = |line: &[f64], out: &mut [f64]| {
        let mut acc: f64 = (lo..=hi).map(|d| line[d.rem_euclid(ni) as usize]).sum();
        for (k, o) in out.iter_mut().enumerate() {
            *o = acc;
            let k = k as isize;
            acc += line[(k + hi + 1).rem_euclid(ni) as usize] - line[(k + lo).rem_euclid(ni) as usize];
        }
    };
    let mut rows = vec![0.0; n * n];
    for i in 0..n {
        window(&cells[i * n..(i + 1) * n], &mut rows[i * n..(i + 1) * n]);
    }
    let mut out = vec![0.0; n * n];
    let mut col = vec![0.0; n];
    let mut res = vec![0.0; n];
    for j in 0..n {
        for i in 0..n {
            col[i] = rows[i * n + j];
        }
        window(&col, &mut res);
        for i in 0..n {
            out[i * n + j] = res[i];
        }
    }
    out
}

/// `max_c E(u, B_r(p_c))` over grid samples `c`, with the lowest row-major
/// maximiser. Box sums over the bounding square are upper bounds, so only
/// centres whose bound reaches the running best are evaluated exactly.
fn max_ball_energy(cells: &[f64], grid: ToroidalGrid, r: f64) -> (f64, usize) {
    let reach = floor(r / grid.h() + 0.5) as isize;
    let bounds = box_sums(cells, grid, reach);
    let stencil = BallStencil::new(grid, r);
    let total: f64 = cells.iter().map(|c| c.abs()).sum();
    // Covers rounding in the running-window bounds.
    let slack = 1e-11 * total + 1e-300;
    let seed = (0..grid.len())
        .max_by(|&a, &b| bounds[a].total_cmp(&bounds[b]).then(b.cmp(&a)))
        .unwrap_or(0);
    let mut best = stencil.energy(cells, grid, seed);
    let mut arg = seed;
    for c in 0..grid.len() {
        if c == seed || bounds[c] + slack < best {
            continue;
        }
        let e = stencil.energy(cells, grid, c);
        if e > best || (e == best && c < arg) {
            best = e;
            arg = c;
        }
    }
    (best, arg)
}

/// Locates the concentration point `a` and scale `λ = 1/r`, where `r` is
/// the smallest radius at which some ball carries half the sphere energy,
/// `sup_a E(u, B_r(a)) = 2π`. The radius is bracketed by doubling from `2h`
/// and then bisected.
pub fn detect_bubble(u: &ToroidalField3) -> Result<BubbleDetection, DetectionError> {
    let grid = u.grid();
    let h = grid.h();
    let cells = energy_cells(u);
    let total: f64 = cells.iter().sum();
    let target = 0.5 * SPHERE_ENERGY;
    if total < target {
        return Err(DetectionError::NoBubble { energy: total });
    }
    let mut lo = 0.25 * h;
    let (m_lo, c_lo) = max_ball_energy(&cells, grid, lo);
    if m_lo >= target {
        return Err(DetectionError::Unresolved {
            radius: lo,
            h,
            center: c_lo,
        });
    }
    let mut hi = 2.0 * h;
    loop {
        if max_ball_energy(&cells, grid, hi).0 >= target {
            break;
        }
        if hi >= 0.5 {
            return Err(DetectionError::NoBubble { energy: total });
        }
        lo = hi;
        hi = (2.0 * hi).min(0.5);
    }
    while hi - lo > RADIUS_TOL * hi {
        let mid = 0.5 * (lo + hi);
        if max_ball_energy(&cells, grid, mid).0 >= target {
            hi = mid;
        } else {
            lo = mid;
        }
    }
    let (core_energy, center) = max_ball_energy(&cells, grid, hi);
    if hi < UNRESOLVED_CELLS * h {
        return Err(DetectionError::Unresolved { radius: hi, h, center });
    }
    Ok(BubbleDetection {
        a: grid.point(center),
        center,
        lambda: 1.0 / hi,
        radius: hi,
        core_energy,
    })
}

/// Something that happened between two records.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum FlowEvent {
    DtHalved { t: f64, dt: f64 },
    NoBubble { t: f64 },
    Unresolved { t: f64, radius: f64 },
    DistNotConverged { t: f64 },
}

impl FlowEvent {
    pub fn label(&self) -> &'static str {
        match self {
            Self::DtHalved { .. } => "dt_halved",
            Self::NoBubble { .. } => "no_bubble",
            Self::Unresolved { .. } => "unresolved",
            Self::DistNotConverged { .. } => "dist_not_converged",
        }
    }
}

#[derive(Debug, Clone)]
pub enum InitialData {
    Constant(Vec3),
    Bubble(BubbleParams),
    Field(ToroidalField3),
}

impl InitialData {
    pub fn build(&self, grid: ToroidalGrid) -> Result<ToroidalField3, FlowError> {
        match self {
            Self::Constant(v) => {
                let p = sphere_maps::project_to_sphere(*v)?;
                Ok(ToroidalField3::constant(grid, p.get()).into_on_sphere()?)
            }
            Self::Bubble(p) => Ok(crate::adapted_bubble::build_bubble(p, grid)?),
            Self::Field(u) => {
                if u.grid() != grid {
                    return Err(GeometryError::GridMismatch.into());
                }
                if !u.on_sphere() {
                    return Err(FlowError::NotOnSphere);
                }
                Ok(u.clone())
            }
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FlowConfig {
    /// `dt = dt_safety h^2`, at most [`MAX_DT_FACTOR`].
    pub dt_safety: f64,
    pub t_end: f64,
    /// Record every this many accepted steps.
    pub sample_every: usize,
    /// Limit energy used by the ratios; `4π` for a single bubble.
    pub e_inf: f64,
    /// Compute `dist_z` at every this many records (`0` disables it).
    pub dist_every: usize,
    /// After an unresolved detection, keep flowing for this long before
    /// reading off the post-event energy and stopping.
    pub post_event_time: f64,
    pub max_retries: usize,
}

impl Default for FlowConfig {
    fn default() -> Self {
        Self {
            dt_safety: MAX_DT_FACTOR,
            t_end: 1.0,
            sample_every: 100,
            e_inf: SPHERE_ENERGY,
            dist_every: 0,
            post_event_time: 0.0,
            max_retries: 30,
        }
    }
}

/// Energy bracket around the first unresolved detection.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SingularEvent {
    pub t: f64,
    /// Energy at the last record with a resolved bubble.
    pub energy_before: f64,
    /// Energy `post_event_time` after the event.
    pub energy_after: f64,
}

impl SingularEvent {
    pub fn energy_drop(&self) -> f64 {
        self.energy_before - self.energy_after
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum StopReason {
    EndTime,
    AfterSingularEvent,
}

#[derive(Debug, Clone)]
pub struct FlowRun {
    pub records: Vec<DiagnosticsRecord>,
    pub singular: Option<SingularEvent>,
    pub stop: StopReason,
    pub final_state: FlowState,
}

struct Recorder {
    sampler: Option<BubbleSampler>,
    e_inf: f64,
    dist_every: usize,
    count: usize,
    rot: RotationParam,
    last_resolved_energy: Option<f64>,
}

impl Recorder {
    fn record(&mut self, state: &FlowState, mut events: Vec<FlowEvent>) -> (DiagnosticsRecord, Option<f64>) {
        let mut unresolved = None;
        let (lambda, a) = match detect_bubble(state.u()) {
            Ok(d) => {
                self.last_resolved_energy = Some(state.energy);
                (d.lambda, d.a)
            }
            Err(DetectionError::NoBubble { .. }) => {
                events.push(FlowEvent::NoBubble { t: state.t });
                (f64::NAN, [f64::NAN; 2])
            }
            Err(DetectionError::Unresolved { radius, center, .. }) => {
                events.push(FlowEvent::Unresolved { t: state.t, radius });
                unresolved = Some(radius);
                (1.0 / radius, state.grid().point(center))
            }
        };
        let (ratio_scale, ratio_energy) = diagnostics::loj_ratios(lambda, state.energy, self.e_inf, state.tension_l2);
        let mut dist_z = f64::NAN;
        if self.dist_every > 0 && self.count % self.dist_every == 0 && lambda.is_finite() && unresolved.is_none() {
            let sampler = self.sampler.get_or_insert_with(BubbleSampler::new);
            let seed = BubbleParams::new(lambda, a, self.rot);
            match seed.map(|s| diagnostics::dist_to_z(state.u(), &s, sampler, DistOptions::default())) {
                Ok(Ok(r)) => {
                    dist_z = r.dist;
                    self.rot = r.params.rot;
                }
                _ => events.push(FlowEvent::DistNotConverged { t: state.t }),
            }
        }
        self.count += 1;
        (
            DiagnosticsRecord {
                t: state.t,
                energy: state.energy,
                tension_l2: state.tension_l2,
                lambda,
                a,
                ratio_scale,
                ratio_energy,
                dist_z,
                events,
            },
            unresolved,
        )
    }
}

/// Runs the flow from `initial` on `grid` until `t_end`, or until
/// `post_event_time` after the first unresolved detection. Each record is
/// passed to `sink` as soon as it is produced.
pub fn run(
    grid: ToroidalGrid,
    initial: &InitialData,
    config: &FlowConfig,
    mut sink: impl FnMut(&DiagnosticsRecord),
) -> Result<FlowRun, FlowError> {
    let mut state = FlowState::new(initial.build(grid)?)?;
    let dt_max = config.dt_safety.min(MAX_DT_FACTOR) * grid.h() * grid.h();
    let mut dt = dt_max;
    let mut clean = 0usize;
    let mut recorder = Recorder {
        sampler: None,
        e_inf: config.e_inf,
        dist_every: config.dist_every,
        count: 0,
        rot: match initial {
            InitialData::Bubble(p) => p.rot,
            _ => RotationParam::identity(),
        },
        last_resolved_energy: None,
    };
    let mut records = Vec::new();
    let mut pending: Vec<FlowEvent> = Vec::new();
    let mut event: Option<(f64, f64)> = None;
    let sample_every = config.sample_every.max(1);

    let (rec, unresolved) = recorder.record(&state, Vec::new());
    sink(&rec);
    records.push(rec);
    if unresolved.is_some() {
        event = Some((state.t, state.energy));
    }

    let stop_time = |event: &Option<(f64, f64)>| match event {
        Some((t, _)) => (t + config.post_event_time).min(config.t_end),
        None => config.t_end,
    };
    let mut since_record = 0usize;
    while state.t < stop_time(&event) * (1.0 - 1e-14) {
        let remaining = stop_time(&event) - state.t;
        let mut tries = 0;
        let next = loop {
            let trial_dt = dt.min(remaining);
            match step(&state, trial_dt) {
                Ok(s) => break s,
                Err(FlowError::EnergyIncreased { .. }) if tries < config.max_retries => {
                    tries += 1;
                    dt *= 0.5;
                    clean = 0;
                    pending.push(FlowEvent::DtHalved { t: state.t, dt });
                }
                Err(FlowError::EnergyIncreased { .. }) => {
                    return Err(FlowError::RetriesExhausted { t: state.t, dt });
                }
                Err(e) => return Err(e),
            }
        };
        state = next;
        clean += 1;
        if clean >= CLEAN_STEPS_BEFORE_GROWTH && dt < dt_max {
            dt = (dt * DT_GROWTH).min(dt_max);
            clean = 0;
        }
        since_record += 1;
        let at_end = state.t >= stop_time(&event) * (1.0 - 1e-14);
        if since_record >= sample_every || at_end {
            since_record = 0;
            let (rec, unresolved) = recorder.record(&state, core::mem::take(&mut pending));
            sink(&rec);
            records.push(rec);
            if unresolved.is_some() && event.is_none() {
                let before = recorder.last_resolved_energy.unwrap_or(state.energy);
                event = Some((state.t, before));
            }
        }
    }

    let singular = event.map(|(t, before)| SingularEvent {
        t,
        energy_before: before,
        energy_after: state.energy,
    });
    let stop = if singular.is_some() && stop_time(&event) < config.t_end {
        StopReason::AfterSingularEvent
    } else {
        StopReason::EndTime
    };
    Ok(FlowRun {
        records,
        singular,
        stop,
        final_state: state,
    })
}

/// Initial step size used by [`run`].
pub fn initial_dt(grid: ToroidalGrid, dt_safety: f64) -> f64 {
    dt_safety.min(MAX_DT_FACTOR) * grid.h() * grid.h()
}

/// Smallest grid size on which `λ` is resolved.
pub fn min_grid_for(lambda: f64) -> usize {
    ceil(lambda / crate::torus_geometry::MAX_LAMBDA_H) as usize
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::adapted_bubble::build_bubble;
    use crate::sphere_maps::P_STAR;
    use crate::torus_geometry::energy;

    fn bubble(n: usize, lambda: f64, a: [f64; 2]) -> ToroidalField3 {
        let p = BubbleParams::new(lambda, a, RotationParam::new([0.2, -0.1, 0.3])).unwrap();
        build_bubble(&p, ToroidalGrid::new(n).unwrap()).unwrap()
    }

    #[test]
    fn constant_map_is_a_fixed_point() {
        let g = ToroidalGrid::new(32).unwrap();
        let u = ToroidalField3::constant(g, P_STAR).into_on_sphere().unwrap();
        let s0 = FlowState::new(u.clone()).unwrap();
        let mut s = s0.clone();
        for _ in 0..10 {
            s = step(&s, s.max_dt()).unwrap();
        }
        assert_eq!(s.u().values(), u.values());
        assert_eq!(s.energy, 0.0);
    }

    #[test]
    fn step_bounds_and_sphere_constraint() {
        let s = FlowState::new(bubble(64, 4.0, [0.5, 0.5])).unwrap();
        assert!(matches!(step(&s, 1.01 * s.max_dt()), Err(FlowError::StepTooLarge { .. })));
        assert!(matches!(step(&s, 0.0), Err(FlowError::StepTooLarge { .. })));
        let next = step(&s, s.max_dt()).unwrap();
        for v in next.u().values() {
            assert!((crate::vec3::norm(*v) - 1.0).abs() < 1e-12);
        }
        assert!(next.energy < s.energy);
        assert!((next.energy - energy(next.u())).abs() < 1e-10 * next.energy);
        let raw = ToroidalField3::constant(ToroidalGrid::new(16).unwrap(), [0.0, 0.0, 2.0]);
        assert!(matches!(FlowState::new(raw), Err(FlowError::NotOnSphere)));
    }

    #[test]
    fn dissipation_identity_on_smooth_state() {
        let g = ToroidalGrid::new(128).unwrap();
        let u = ToroidalField3::from_fn(g, |p| {
            let (s1, c1) = crate::math::sin_cos(2.0 * core::f64::consts::PI * p[0]);
            let (s2, _) = crate::math::sin_cos(2.0 * core::f64::consts::PI * (p[0] + 2.0 * p[1]));
            [0.6 * s1, 0.5 * s2, 1.0 + 0.3 * c1]
        });
        let s = FlowState::new(sphere_maps::project_field(&u).unwrap()).unwrap();
        let dt = s.max_dt();
        let next = step(&s, dt).unwrap();
        let rate = (s.energy - next.energy) / dt;
        let t2 = s.tension_l2 * s.tension_l2;
        assert!((rate - t2).abs() < 0.05 * t2, "{rate} {t2}");
    }

    #[test]
    fn detection_of_constant_map() {
        let g = ToroidalGrid::new(32).unwrap();
        let u = ToroidalField3::constant(g, P_STAR).into_on_sphere().unwrap();
        assert!(matches!(detect_bubble(&u), Err(DetectionError::NoBubble { .. })));
    }

    #[test]
    fn detection_finds_scale_and_centre() {
        let u = bubble(128, 10.0, [0.3, 0.65]);
        let d = detect_bubble(&u).unwrap();
        assert!(d.lambda > 10.0 / 1.2 && d.lambda < 12.0, "{d:?}");
        let h = u.grid().h();
        let off = translate(d.a, [0.3, 0.65]);
        assert!(off <= 2.0 * h, "{d:?}");
        assert!((d.core_energy - 2.0 * core::f64::consts::PI).abs() < 0.02);
    }

    fn translate(a: [f64; 2], b: [f64; 2]) -> f64 {
        let x = crate::torus_geometry::translate_coords(a, b);
        sqrt(x[0] * x[0] + x[1] * x[1])
    }

    #[test]
    fn detection_is_translation_equivariant() {
        let u = bubble(96, 8.0, [0.41, 0.37]);
        let d0 = detect_bubble(&u).unwrap();
        for (di, dj) in [(5isize, 0isize), (-17, 30), (48, 48)] {
            let d = detect_bubble(&u.shifted(di, dj)).unwrap();
            assert_eq!(d.radius, d0.radius);
            let (i0, j0) = u.grid().coords(d0.center);
            let expect = u.grid().index(i0 as isize + di, j0 as isize + dj);
            assert_eq!(d.center, expect);
        }
    }

    #[test]
    fn tiny_bubble_is_unresolved() {
        // A raw stereographic bubble far below the construction's
        // resolution rule: half-energy radius 1/40 < 3h.
        let g = ToroidalGrid::new(60).unwrap();
        let u = ToroidalField3::from_fn(g, |p| {
            sphere_maps::stereographic(40.0, crate::torus_geometry::translate_coords([0.5, 0.5], p))
        });
        let u = sphere_maps::project_field(&u).unwrap();
        assert!(matches!(detect_bubble(&u), Err(DetectionError::Unresolved { .. })));
    }

    #[test]
    fn run_from_constant_gives_identical_records() {
        let g = ToroidalGrid::new(16).unwrap();
        let cfg = FlowConfig {
            t_end: 50.0 * initial_dt(g, MAX_DT_FACTOR),
            sample_every: 10,
            ..Default::default()
        };
        let mut seen = 0;
        let run = run(g, &InitialData::Constant(P_STAR), &cfg, |_| seen += 1).unwrap();
        assert_eq!(seen, run.records.len());
        assert_eq!(run.records.len(), 6);
        for r in &run.records {
            assert_eq!(r.energy, 0.0);
            assert_eq!(r.tension_l2, 0.0);
            assert!(r.lambda.is_nan());
            assert_eq!(r.events.len(), 1);
        }
        assert_eq!(run.stop, StopReason::EndTime);
        assert!(run.singular.is_none());
    }

    #[test]
    fn short_bubble_run_is_monotone() {
        let g = ToroidalGrid::new(64).unwrap();
        let p = BubbleParams::centered(4.0).unwrap();
        let cfg = FlowConfig {
            t_end: 200.0 * initial_dt(g, MAX_DT_FACTOR),
            sample_every: 20,
            ..Default::default()
        };
        let run = run(g, &InitialData::Bubble(p), &cfg, |_| {}).unwrap();
        for w in run.records.windows(2) {
            assert!(w[1].energy <= w[0].energy);
            assert!(w[1].t > w[0].t);
        }
        assert!((run.final_state.t - cfg.t_end).abs() < 1e-15);
    }
}
