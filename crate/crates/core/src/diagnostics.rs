//! Lojasiewicz ratios, distance to the bubble family and decay-law fits.
//!
//! Exponents are those of the integrable case, `γ1 = 2` and `γ2 = 1`. All
//! log corrections use the form `1 + |log T|^{1/2}`, which stays finite as
//! `T → 1`.

use alloc::vec;
use alloc::vec::Vec;
use core::fmt;

use crate::adapted_bubble::{BubbleParams, BubbleSampler};
use crate::flow_engine::FlowEvent;
use crate::math::{exp, ln, sqrt};
use crate::nelder_mead::{self, NelderMeadOptions};
use crate::sphere_maps::RotationParam;
use crate::torus_geometry::{translate_coords, weighted_norm, ToroidalField3, WeightField};
use crate::vec3;

pub const GAMMA_1: f64 = 2.0;
pub const GAMMA_2: f64 = 1.0;

/// "Bounded" means running maximum at most this multiple of the median.
pub const BOUNDED_RATIO_FACTOR: f64 = 10.0;

/// One sample of a flow or scan.
#[derive(Debug, Clone, PartialEq)]
pub struct DiagnosticsRecord {
    pub t: f64,
    pub energy: f64,
    pub tension_l2: f64,
    /// `NaN` when no bubble was detected.
    pub lambda: f64,
    pub a: [f64; 2],
    pub ratio_scale: f64,
    pub ratio_energy: f64,
    /// `NaN` when not computed at this sample.
    pub dist_z: f64,
    pub events: Vec<FlowEvent>,
}

/// `1 + |log x|^{1/2}`.
pub fn log_factor(x: f64) -> f64 {
    1.0 + sqrt(ln(x).abs())
}

/// `(ratio_scale, ratio_energy)`:
///
/// * `λ^{-1} / (T (1 + |log T|^{1/2}))`
/// * `|E - E_∞| / (T^{γ1} (1 + |log T|^{1/2})^{γ1})`
///
/// Both are `NaN` when `T` is not positive.
pub fn loj_ratios(lambda: f64, energy: f64, e_inf: f64, tension_l2: f64) -> (f64, f64) {
    if tension_l2.partial_cmp(&0.0) != Some(core::cmp::Ordering::Greater) {
        return (f64::NAN, f64::NAN);
    }
    let lf = log_factor(tension_l2);
    let scale = 1.0 / (lambda * tension_l2 * lf);
    let energy_ratio = (energy - e_inf).abs() / crate::math::powf(tension_l2 * lf, GAMMA_1);
    (scale, energy_ratio)
}

/// `E_d / (|log E_d| T^2)` per sample, `NaN` where undefined.
pub fn ode_ratio_check(series: &[(f64, f64)]) -> Vec<f64> {
    series
        .iter()
        .map(|&(e_d, tension)| {
            if e_d > 0.0 && tension > 0.0 && e_d != 1.0 {
                e_d / (ln(e_d).abs() * tension * tension)
            } else {
                f64::NAN
            }
        })
        .collect()
}

/// Largest `E_d` at which [`ode_ratio_check`] is read: `|log E_d| ≥ 1`. The
/// factor `|log E_d|^{-1}` diverges at `E_d = 1`, away from the small-`E_d`
/// regime the estimate describes.
pub const ODE_REGIME_MAX: f64 = 0.36787944117144233;

/// Whether a sample lies in the small-`E_d` regime of the ODE ratio.
pub fn in_ode_regime(e_d: f64) -> bool {
    e_d > 0.0 && e_d <= ODE_REGIME_MAX
}

/// Running maximum against median of the finite entries.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BoundedRatio {
    pub max: f64,
    pub median: f64,
    pub samples: usize,
    pub pass: bool,
}

pub fn bounded_ratio(series: &[f64]) -> BoundedRatio {
    let mut v: Vec<f64> = series.iter().copied().filter(|x| x.is_finite()).collect();
    if v.is_empty() {
        return BoundedRatio {
            max: f64::NAN,
            median: f64::NAN,
            samples: 0,
            pass: false,
        };
    }
    v.sort_by(f64::total_cmp);
    let n = v.len();
    let median = if n % 2 == 1 { v[n / 2] } else { 0.5 * (v[n / 2 - 1] + v[n / 2]) };
    let max = v[n - 1];
    BoundedRatio {
        max,
        median,
        samples: n,
        pass: max <= BOUNDED_RATIO_FACTOR * median,
    }
}

/// Deviation from the far value away from the bubble, normalised by
/// `E_d^α`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AwayReport {
    /// `sup_{Σ \ B_r(a)} |u - ω(p*)|`
    pub sup: f64,
    /// `‖u - ω(p*)‖_{L^2(Σ \ B_r(a))}`
    pub l2: f64,
    pub sup_ratio: f64,
    pub l2_ratio: f64,
}

/// Compares `u` with the constant `far` outside the ball `B_r(a)`.
pub fn away_convergence_check(
    u: &ToroidalField3,
    a: [f64; 2],
    radius: f64,
    alpha: f64,
    e_d: f64,
    far: vec3::Vec3,
) -> AwayReport {
    let g = u.grid();
    let h = g.h();
    let mut sup: f64 = 0.0;
    let mut l2 = 0.0;
    for (idx, v) in u.values().iter().enumerate() {
        let x = translate_coords(a, g.point(idx));
        if x[0] * x[0] + x[1] * x[1] < radius * radius {
            continue;
        }
        let d = vec3::norm(vec3::sub(*v, far));
        sup = sup.max(d);
        l2 += d * d;
    }
    let l2 = sqrt(l2 * h * h);
    let denom = crate::math::powf(e_d, alpha);
    AwayReport {
        sup,
        l2,
        sup_ratio: sup / denom,
        l2_ratio: l2 / denom,
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum DistError {
    /// The simplex diameter stayed above the threshold after both runs.
    NotConverged { diameter: f64, evals: usize },
    /// The seed itself cannot be sampled on the grid of `u`.
    BadSeed,
}

impl fmt::Display for DistError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Self::NotConverged { diameter, evals } => {
                write!(f, "simplex diameter {diameter:e} after {evals} evaluations")
            }
            Self::BadSeed => write!(f, "seed bubble cannot be sampled on this grid"),
        }
    }
}

impl core::error::Error for DistError {}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DistOptions {
    pub max_evals: usize,
    pub diameter_tol: f64,
    /// Diameter above which the result is reported as not converged.
    pub failure_diameter: f64,
}

impl Default for DistOptions {
    fn default() -> Self {
        Self {
            max_evals: 2000,
            diameter_tol: 1e-8,
            failure_diameter: 1e-4,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DistResult {
    pub dist: f64,
    pub params: BubbleParams,
    pub evals: usize,
    pub diameter: f64,
    /// `‖u - z_seed‖_{z_seed}`
    pub seed_dist: f64,
}

fn theta_of(p: &BubbleParams) -> [f64; 6] {
    let r = p.rot.axis_angle();
    [p.a[0], p.a[1], ln(p.lambda), r[0], r[1], r[2]]
}

fn params_of(theta: &[f64]) -> Option<BubbleParams> {
    BubbleParams::new(
        exp(theta[2]),
        [theta[0], theta[1]],
        RotationParam::new([theta[3], theta[4], theta[5]]),
    )
    .ok()
}

/// `‖u - z(θ)‖_{z(θ)}`, or `None` if `z(θ)` is not admissible on the grid.
pub fn bubble_distance(sampler: &BubbleSampler, u: &ToroidalField3, params: &BubbleParams) -> Option<f64> {
    let grid = u.grid();
    let z = sampler.build(params, grid).ok()?;
    let rho = WeightField::new(grid, params.lambda, params.a).ok()?;
    let diff = u.axpy(-1.0, &z).ok()?;
    Some(weighted_norm(&diff, &rho))
}

/// `dist(u, Z) = inf_θ ‖u - z(θ)‖_{z(θ)}` by simplex descent over
/// `θ = (a1, a2, log λ, rotation vector)`, restarted once from a perturbed
/// copy of the first minimiser. The norm is anchored at the trial bubble.
pub fn dist_to_z(
    u: &ToroidalField3,
    seed: &BubbleParams,
    sampler: &BubbleSampler,
    opts: DistOptions,
) -> Result<DistResult, DistError> {
    let seed_dist = bubble_distance(sampler, u, seed).ok_or(DistError::BadSeed)?;
    let objective = |theta: &[f64]| match params_of(theta) {
        Some(p) => match bubble_distance(sampler, u, &p) {
            Some(d) => d * d,
            None => f64::INFINITY,
        },
        None => f64::INFINITY,
    };
    let nm = NelderMeadOptions {
        diameter_tol: opts.diameter_tol,
        value_tol: 0.0,
        max_evals: opts.max_evals,
    };
    let step_a = 0.25 / seed.lambda;
    let steps = [step_a, step_a, 0.05, 0.05, 0.05, 0.05];
    let first = nelder_mead::minimize(objective, &theta_of(seed), &steps, nm);
    let mut restart = first.x.clone();
    let kick = [0.5 * step_a, -0.5 * step_a, 0.02, 0.02, -0.02, 0.02];
    for (t, k) in restart.iter_mut().zip(kick) {
        *t += k;
    }
    let small: Vec<f64> = steps.iter().map(|s| 0.2 * s).collect();
    let second = nelder_mead::minimize(objective, &restart, &small, nm);
    let evals = first.evals + second.evals;
    let best = if second.value < first.value { second } else { first };
    let diameter = best.diameter;
    if diameter > opts.failure_diameter {
        return Err(DistError::NotConverged { diameter, evals });
    }
    let params = params_of(&best.x).ok_or(DistError::BadSeed)?;
    Ok(DistResult {
        dist: sqrt(best.value),
        params,
        evals,
        diameter,
        seed_dist,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum DecayModel {
    /// `log E_d = b - c1 √t`
    Exponential,
    /// `log E_d = b + p log t + q log log t`
    Power,
}

impl DecayModel {
    pub fn tag(&self) -> &'static str {
        match self {
            Self::Exponential => "exp_sqrt_t",
            Self::Power => "power_log",
        }
    }
}

/// One least-squares model fit.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelFit {
    pub model: DecayModel,
    /// `[b, c1]` for the exponential model; `[b, p, q]` (or `[b, p]` when
    /// some `t ≤ 1`) for the power model.
    pub constants: Vec<f64>,
    /// `R^2` over the held-out tail.
    pub r_squared: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct FitResult {
    pub selected: ModelFit,
    pub rejected: ModelFit,
    /// `[t_lo, t_hi]` of the fitting window; the tail after it is held out.
    pub window: [f64; 2],
}

impl FitResult {
    /// `c1` when the exponential model was selected.
    pub fn rate(&self) -> Option<f64> {
        (self.selected.model == DecayModel::Exponential).then(|| self.selected.constants[1])
    }

    /// The power-law exponent when the power model was selected.
    pub fn exponent(&self) -> Option<f64> {
        (self.selected.model == DecayModel::Power).then(|| self.selected.constants[1])
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum FitError {
    InsufficientData { samples: usize, t_span: f64 },
    Singular,
}

impl fmt::Display for FitError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Self::InsufficientData { samples, t_span } => write!(
                f,
                "need at least {MIN_FIT_SAMPLES} samples over a decade of t (got {samples} over a ratio of {t_span})"
            ),
            Self::Singular => write!(f, "least-squares system is singular"),
        }
    }
}

impl core::error::Error for FitError {}

pub const MIN_FIT_SAMPLES: usize = 30;
/// Fraction of samples (in time order) used for fitting; the rest is held out.
pub const FIT_FRACTION: f64 = 0.7;

/// Solves the normal equations of `y ≈ X c` by Gaussian elimination with
/// partial pivoting, after scaling each column to unit norm.
fn least_squares(rows: &[Vec<f64>], y: &[f64]) -> Option<Vec<f64>> {
    let m = rows[0].len();
    let mut scale = vec![0.0; m];
    for r in rows {
        for (s, v) in scale.iter_mut().zip(r) {
            *s += v * v;
        }
    }
    for s in scale.iter_mut() {
        *s = sqrt(*s);
        if *s == 0.0 {
            return None;
        }
    }
    let mut a = vec![vec![0.0; m + 1]; m];
    for (r, yv) in rows.iter().zip(y) {
        for i in 0..m {
            let ri = r[i] / scale[i];
            for j in 0..m {
                a[i][j] += ri * r[j] / scale[j];
            }
            a[i][m] += ri * yv;
        }
    }
    for col in 0..m {
        let piv = (col..m).max_by(|&i, &j| a[i][col].abs().total_cmp(&a[j][col].abs()))?;
        if a[piv][col].abs() < 1e-13 {
            return None;
        }
        a.swap(col, piv);
        for row in 0..m {
            if row != col {
                let f = a[row][col] / a[col][col];
                for k in col..=m {
                    a[row][k] -= f * a[col][k];
                }
            }
        }
    }
    Some((0..m).map(|i| a[i][m] / a[i][i] / scale[i]).collect())
}

fn held_out_r2(features: impl Fn(f64) -> Vec<f64>, coef: &[f64], tail: &[(f64, f64)]) -> f64 {
    let mean = tail.iter().map(|p| p.1).sum::<f64>() / tail.len() as f64;
    let mut ss_res = 0.0;
    let mut ss_tot = 0.0;
    for &(t, y) in tail {
        let pred: f64 = features(t).iter().zip(coef).map(|(f, c)| f * c).sum();
        ss_res += (y - pred) * (y - pred);
        ss_tot += (y - mean) * (y - mean);
    }
    if ss_tot == 0.0 {
        if ss_res == 0.0 {
            1.0
        } else {
            f64::NEG_INFINITY
        }
    } else {
        1.0 - ss_res / ss_tot
    }
}

/// Fits `log E_d` against `√t` and against `(log t, log log t)` on the first
/// 70% of the samples and selects the model with the larger `R^2` on the
/// remaining 30%.
pub fn fit_decay(series: &[(f64, f64)]) -> Result<FitResult, FitError> {
    let mut pts: Vec<(f64, f64)> = series
        .iter()
        .filter(|(t, e)| *t > 0.0 && *e > 0.0 && t.is_finite() && e.is_finite())
        .map(|&(t, e)| (t, ln(e)))
        .collect();
    pts.sort_by(|a, b| a.0.total_cmp(&b.0));
    let t_span = match (pts.first(), pts.last()) {
        (Some(a), Some(b)) => b.0 / a.0,
        _ => 0.0,
    };
    if pts.len() < MIN_FIT_SAMPLES || t_span < 10.0 {
        return Err(FitError::InsufficientData {
            samples: pts.len(),
            t_span,
        });
    }
    let split = (FIT_FRACTION * pts.len() as f64) as usize;
    let (fit, tail) = pts.split_at(split);
    let y: Vec<f64> = fit.iter().map(|p| p.1).collect();

    let exp_features = |t: f64| vec![1.0, -sqrt(t)];
    let rows: Vec<Vec<f64>> = fit.iter().map(|p| exp_features(p.0)).collect();
    let c_exp = least_squares(&rows, &y).ok_or(FitError::Singular)?;
    let exponential = ModelFit {
        model: DecayModel::Exponential,
        r_squared: held_out_r2(exp_features, &c_exp, tail),
        constants: c_exp,
    };

    let with_loglog = pts[0].0 > 1.0;
    let pow_features = move |t: f64| {
        if with_loglog {
            vec![1.0, ln(t), ln(ln(t))]
        } else {
            vec![1.0, ln(t)]
        }
    };
    let rows: Vec<Vec<f64>> = fit.iter().map(|p| pow_features(p.0)).collect();
    let c_pow = least_squares(&rows, &y).ok_or(FitError::Singular)?;
    let power = ModelFit {
        model: DecayModel::Power,
        r_squared: held_out_r2(pow_features, &c_pow, tail),
        constants: c_pow,
    };

    let window = [fit[0].0, fit[fit.len() - 1].0];
    let (selected, rejected) = if exponential.r_squared >= power.r_squared {
        (exponential, power)
    } else {
        (power, exponential)
    };
    Ok(FitResult {
        selected,
        rejected,
        window,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn exact_law_gives_unit_scale_ratio() {
        for tension in [1e-3, 0.05, 0.5, 0.99, 2.0] {
            let lambda = 1.0 / (tension * log_factor(tension));
            let (rs, _) = loj_ratios(lambda, 0.0, 0.0, tension);
            assert!((rs - 1.0).abs() < 1e-12);
        }
        assert!(loj_ratios(10.0, 1.0, 0.0, 0.0).0.is_nan());
    }

    #[test]
    fn log_factor_versus_bare_log() {
        // For T ≤ 1/e the two normalisations differ by at most a factor 2.
        for k in 1..200 {
            let t = exp(-1.0 - k as f64 * 0.2);
            let bare = sqrt(ln(t).abs());
            let q = log_factor(t) / bare;
            assert!((1.0..=2.0).contains(&q));
        }
    }

    #[test]
    fn saturated_ode_has_unit_ratio() {
        let series: Vec<(f64, f64)> = (1..50)
            .map(|k| {
                let e = exp(-(k as f64) * 0.3);
                (e, sqrt(e / ln(e).abs()))
            })
            .collect();
        for r in ode_ratio_check(&series) {
            assert!((r - 1.0).abs() < 1e-12);
        }
        assert!(ode_ratio_check(&[(1e-14, 1e-3)])[0].is_finite());
    }

    #[test]
    fn ode_regime_threshold() {
        assert_eq!(ODE_REGIME_MAX, exp(-1.0));
        assert!(in_ode_regime(0.3) && !in_ode_regime(0.5) && !in_ode_regime(0.0));
    }

    #[test]
    fn bounded_ratio_median_rule() {
        let b = bounded_ratio(&[1.0, 2.0, 3.0, f64::NAN, 25.0]);
        assert_eq!(b.samples, 4);
        assert_eq!(b.median, 2.5);
        assert!(b.pass);
        assert!(!bounded_ratio(&[1.0, 1.0, 1.0, 11.0]).pass);
    }

    fn synthetic(f: impl Fn(f64) -> f64, t0: f64, t1: f64, n: usize) -> Vec<(f64, f64)> {
        (0..n)
            .map(|k| {
                let t = t0 * crate::math::powf(t1 / t0, k as f64 / (n - 1) as f64);
                (t, f(t))
            })
            .collect()
    }

    #[test]
    fn fit_recovers_exponential_rate() {
        let s = synthetic(|t| exp(-0.3 * sqrt(t)), 1.0, 400.0, 60);
        let fit = fit_decay(&s).unwrap();
        assert_eq!(fit.selected.model, DecayModel::Exponential);
        assert!((fit.rate().unwrap() - 0.3).abs() < 0.003);
    }

    #[test]
    fn fit_recovers_power_exponent() {
        let s = synthetic(|t| ln(t) / (t * t), 3.0, 3000.0, 60);
        let fit = fit_decay(&s).unwrap();
        assert_eq!(fit.selected.model, DecayModel::Power);
        assert!((fit.exponent().unwrap() + 2.0).abs() < 0.1);
    }

    #[test]
    fn fit_requires_enough_data() {
        let s = synthetic(|t| exp(-t), 1.0, 5.0, 60);
        assert!(matches!(fit_decay(&s), Err(FitError::InsufficientData { .. })));
        let s = synthetic(|t| exp(-t), 1.0, 100.0, 10);
        assert!(matches!(fit_decay(&s), Err(FitError::InsufficientData { .. })));
    }
}
