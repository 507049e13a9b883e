//! Measurements along the bubble family and their log-log fits.

use std::f64::consts::PI;

use bubblelab_core::adapted_bubble::{
    self, de_dlambda, far_field_sup, leading_term_integral, leading_term_prediction, pairing_sup,
    BubbleError, BubbleModel, BubbleParams, PAIRING_SAMPLES,
};
use bubblelab_core::greens_torus::GreensError;
use bubblelab_core::torus_geometry::ToroidalGrid;
use bubblelab_core::SPHERE_ENERGY;

/// One scan row: column order of the scan CSV.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ScanRow {
    pub lambda: f64,
    pub energy: f64,
    pub gap: f64,
    pub de_dlambda: f64,
    pub leading_term: f64,
    pub tension_l2: f64,
    pub pairing_sup: f64,
    pub far_field_sup: f64,
}

pub const SCAN_COLUMNS: [&str; 8] = [
    "lambda",
    "energy",
    "gap",
    "dE_dlambda",
    "leading_term",
    "tension_l2",
    "pairing_sup",
    "far_field_sup",
];

impl ScanRow {
    pub fn values(&self) -> [f64; 8] {
        [
            self.lambda,
            self.energy,
            self.gap,
            self.de_dlambda,
            self.leading_term,
            self.tension_l2,
            self.pairing_sup,
            self.far_field_sup,
        ]
    }

    pub fn from_values(v: &[f64]) -> Self {
        Self {
            lambda: v[0],
            energy: v[1],
            gap: v[2],
            de_dlambda: v[3],
            leading_term: v[4],
            tension_l2: v[5],
            pairing_sup: v[6],
            far_field_sup: v[7],
        }
    }
}

/// Smallest grid with `λh ≤ 0.2`, but at least `min_n`.
pub fn grid_for(lambda: f64, min_n: usize) -> usize {
    bubblelab_core::flow_engine::min_grid_for(lambda).max(min_n)
}

/// Measures one bubble `z_λ` centred in the fundamental domain.
pub fn measure(lambda: f64, grid: ToroidalGrid, seed: u64) -> Result<ScanRow, BubbleError> {
    let params = BubbleParams::centered(lambda)?;
    let jets = BubbleModel::new(params).build_jets(grid)?;
    let energy = jets.energy();
    Ok(ScanRow {
        lambda,
        energy,
        gap: energy - SPHERE_ENERGY,
        de_dlambda: de_dlambda(&params, grid)?,
        leading_term: leading_term_integral(&params),
        tension_l2: jets.tension_l2(),
        pairing_sup: pairing_sup(&jets, PAIRING_SAMPLES, seed)?,
        far_field_sup: far_field_sup(&jets.field(), &params),
    })
}

/// Least-squares slope and intercept of `log y` against `log x`.
pub fn loglog_fit(x: &[f64], y: &[f64]) -> (f64, f64) {
    let lx: Vec<f64> = x.iter().map(|v| v.ln()).collect();
    let ly: Vec<f64> = y.iter().map(|v| v.abs().ln()).collect();
    let n = lx.len() as f64;
    let mx = lx.iter().sum::<f64>() / n;
    let my = ly.iter().sum::<f64>() / n;
    let sxy: f64 = lx.iter().zip(&ly).map(|(a, b)| (a - mx) * (b - my)).sum();
    let sxx: f64 = lx.iter().map(|a| (a - mx) * (a - mx)).sum();
    let slope = sxy / sxx;
    (slope, my - slope * mx)
}

/// `8π^2`, the prefactor of the energy gap `E(z_λ) - 4π ≈ 8π^2 λ^{-2}`.
pub const GAP_PREFACTOR: f64 = 8.0 * PI * PI;

/// `-16π^2 λ^{-3}`, the leading part of `∂_λ E(z_λ)`.
pub fn de_dlambda_prediction(lambda: f64) -> f64 {
    -16.0 * PI * PI / (lambda * lambda * lambda)
}

/// Leading prediction of the leading-term integral with the computed `J`.
pub fn leading_prediction(lambda: f64, j_constant: f64) -> Result<f64, BubbleError> {
    Ok(leading_term_prediction(&BubbleParams::centered(lambda)?, j_constant))
}

/// `J` from the Green's function.
pub fn j_constant() -> Result<f64, GreensError> {
    bubblelab_core::greens_torus::j_constant()
}

/// Fit summary quantities over a set of rows (sorted by `λ`).
#[derive(Debug, Clone, PartialEq)]
pub struct ScanFit {
    pub gap_slope: f64,
    /// `gap λ^2 / 8π^2` per row.
    pub gap_prefactor_ratios: Vec<f64>,
    /// `∂_λE / (-16π^2 λ^{-3})` per row.
    pub de_ratios: Vec<f64>,
    /// leading term over its prediction, per row.
    pub leading_ratios: Vec<f64>,
    pub leading_residual_slope: f64,
    pub tension_slope: f64,
    /// Slope of `pairing / (log λ)^{1/2}`.
    pub pairing_slope: f64,
    pub far_field_slope: f64,
}

pub fn fit_rows(rows: &[ScanRow], j: f64) -> ScanFit {
    let l: Vec<f64> = rows.iter().map(|r| r.lambda).collect();
    let col = |f: fn(&ScanRow) -> f64| rows.iter().map(f).collect::<Vec<f64>>();
    let predictions: Vec<f64> = rows
        .iter()
        .map(|r| 4.0 * PI * 2.0 * j / (r.lambda * r.lambda * r.lambda))
        .collect();
    let residuals: Vec<f64> = rows.iter().zip(&predictions).map(|(r, p)| r.leading_term - p).collect();
    let pairing: Vec<f64> = rows.iter().map(|r| r.pairing_sup / r.lambda.ln().sqrt()).collect();
    ScanFit {
        gap_slope: loglog_fit(&l, &col(|r| r.gap)).0,
        gap_prefactor_ratios: rows.iter().map(|r| r.gap * r.lambda * r.lambda / GAP_PREFACTOR).collect(),
        de_ratios: rows.iter().map(|r| r.de_dlambda / de_dlambda_prediction(r.lambda)).collect(),
        leading_ratios: rows.iter().zip(&predictions).map(|(r, p)| r.leading_term / p).collect(),
        leading_residual_slope: loglog_fit(&l, &residuals).0,
        tension_slope: loglog_fit(&l, &col(|r| r.tension_l2)).0,
        pairing_slope: loglog_fit(&l, &pairing).0,
        far_field_slope: loglog_fit(&l, &col(|r| r.far_field_sup)).0,
    }
}

pub use adapted_bubble::variation_scalings;
