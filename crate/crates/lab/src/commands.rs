//! The five subcommands. Each writes its manifest before computing and
//! returns whether every acceptance verdict it evaluated passed.

use std::f64::consts::PI;
use std::fmt::Display;
use std::io;
use std::path::{Path, PathBuf};

use bubblelab_core::adapted_bubble::BubbleSampler;
use bubblelab_core::diagnostics::{
    bounded_ratio, dist_to_z, fit_decay, in_ode_regime, log_factor, loj_ratios, ode_ratio_check, BoundedRatio,
    DistOptions, FitResult,
};
use bubblelab_core::flow_engine::{self, detect_bubble, FlowConfig, FlowEvent, InitialData, StopReason};
use bubblelab_core::greens_torus::{Ewald, GreensTable};
use bubblelab_core::sphere_maps::RotationParam;
use bubblelab_core::torus_geometry::MAX_LAMBDA_H;
use bubblelab_core::vec3::{cross, dot, norm, scale};
use bubblelab_core::{BubbleParams, DiagnosticsRecord, ToroidalField3, ToroidalGrid, SPHERE_ENERGY};
use serde_json::{Map, Value};

use crate::config::{parse_config, ConfigError, InitSpec, RunConfig, Subcommand};
use crate::fields::{read_field, write_field, FieldError};
use crate::output::{fmt_f64, jf, manifest_path, verdict, write_summary, CsvTable, CsvWriter, Manifest};
use crate::plots;
use crate::scan::{self, ScanRow, SCAN_COLUMNS};

#[derive(Debug, thiserror::Error)]
pub enum LabError {
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error("i/o: {0}")]
    Io(#[from] io::Error),
    #[error(transparent)]
    Field(#[from] FieldError),
    #[error("input: {0}")]
    Input(String),
    #[error("computation: {0}")]
    Compute(String),
}

fn compute(e: impl Display) -> LabError {
    LabError::Compute(e.to_string())
}

fn input(e: impl Display) -> LabError {
    LabError::Input(e.to_string())
}

/// Result of a subcommand: the JSON summary path and the overall verdict.
#[derive(Debug, Clone, PartialEq)]
pub struct Outcome {
    pub summary: PathBuf,
    pub pass: bool,
}

/// `out` with its extension replaced by `json`.
pub fn default_json(out: &Path) -> PathBuf {
    out.with_extension("json")
}

fn start(cfg: &RunConfig, out: &Path) -> Result<Manifest, LabError> {
    cfg.validate()?;
    let manifest = Manifest::new(cfg);
    manifest.write(&manifest_path(out))?;
    Ok(manifest)
}

fn all_pass(verdicts: &Map<String, Value>) -> bool {
    verdicts
        .values()
        .all(|v| v.get("pass").and_then(Value::as_bool).unwrap_or(true))
}

fn finish(
    json: PathBuf,
    manifest: &Manifest,
    mut body: Map<String, Value>,
    verdicts: Map<String, Value>,
) -> Result<Outcome, LabError> {
    let pass = all_pass(&verdicts);
    body.insert("verdicts".into(), Value::Object(verdicts));
    body.insert("pass".into(), Value::Bool(pass));
    write_summary(&json, manifest, body)?;
    Ok(Outcome { summary: json, pass })
}

fn ratio_json(r: &BoundedRatio) -> Value {
    let mut m = Map::new();
    m.insert("max".into(), jf(r.max));
    m.insert("median".into(), jf(r.median));
    m.insert("samples".into(), Value::from(r.samples));
    Value::Object(m)
}

fn floats(v: &[f64]) -> Value {
    Value::Array(v.iter().map(|&x| jf(x)).collect())
}

fn within(x: f64, target: f64, rel: f64) -> bool {
    (x / target - 1.0).abs() <= rel
}

/// Ewald table of `G` and `∇G` on the grid samples, with the constants `J`
/// and `∇_y J(0, 0)`.
pub fn greens_table(grid_n: usize, out: &Path, json: Option<&Path>) -> Result<Outcome, LabError> {
    let json = json.map_or_else(|| default_json(out), Path::to_path_buf);
    let cfg = RunConfig {
        subcommand: Subcommand::GreensTable,
        grid_n,
        out_csv: Some(out.to_path_buf()),
        out_json: Some(json.clone()),
        ..RunConfig::default()
    };
    let manifest = start(&cfg, out)?;
    let grid = ToroidalGrid::new(grid_n).map_err(compute)?;
    let table = GreensTable::build(grid, Ewald::default()).map_err(compute)?;
    let mut csv = CsvWriter::create(out, &manifest, &["x1", "x2", "G", "dG1", "dG2"])?;
    for (x, g, dg) in table.entries() {
        csv.row(&[x[0], x[1], *g, dg[0], dg[1]].map(fmt_f64))?;
    }
    csv.finish()?;

    let j = table.j_constant();
    let gr = table.grad_regular_origin();
    let gr_norm = gr[0].hypot(gr[1]);
    let mut body = Map::new();
    body.insert("grid_n".into(), Value::from(grid_n));
    body.insert("j_constant".into(), jf(j));
    body.insert("grad_regular_origin".into(), floats(&gr));
    body.insert("samples".into(), Value::from(table.entries().len()));
    let mut verdicts = Map::new();
    verdicts.insert(
        "j_constant".into(),
        verdict((j + 2.0 * PI).abs() <= 1e-4, jf(j), "-2*pi +- 1e-4"),
    );
    verdicts.insert(
        "grad_regular_origin".into(),
        verdict(gr_norm <= 1e-6, jf(gr_norm), "|grad_y J(0,0)| <= 1e-6"),
    );
    finish(json, &manifest, body, verdicts)
}

fn rows_at<'a>(rows: &'a [ScanRow], lambdas: &[f64]) -> Vec<&'a ScanRow> {
    let hit: Vec<&ScanRow> = rows.iter().filter(|r| lambdas.contains(&r.lambda)).collect();
    if hit.is_empty() {
        rows.iter().collect()
    } else {
        hit
    }
}

/// Verdicts for a set of scan rows. Slopes use every row given; pointwise
/// checks use `λ ∈ {20, 40}` for `∂_λE` and `λ = 40` for the leading term
/// when present, all rows otherwise.
pub fn scan_verdicts(rows: &[ScanRow], j: f64) -> (Map<String, Value>, Map<String, Value>) {
    let fit = scan::fit_rows(rows, j);
    let mut body = Map::new();
    body.insert("lambdas".into(), floats(&rows.iter().map(|r| r.lambda).collect::<Vec<_>>()));
    body.insert("j_constant".into(), jf(j));
    body.insert("gap_prefactor_ratios".into(), floats(&fit.gap_prefactor_ratios));
    body.insert("de_dlambda_ratios".into(), floats(&fit.de_ratios));
    body.insert("leading_term_ratios".into(), floats(&fit.leading_ratios));
    body.insert("far_field_slope".into(), jf(fit.far_field_slope));
    let energy_ratios: Vec<f64> = rows
        .iter()
        .map(|r| loj_ratios(r.lambda, r.energy, SPHERE_ENERGY, r.tension_l2).1)
        .collect();
    body.insert("ratio_energy".into(), floats(&energy_ratios));

    let mut v = Map::new();
    v.insert(
        "gap_slope".into(),
        verdict((fit.gap_slope + 2.0).abs() <= 0.1, jf(fit.gap_slope), "-2 +- 0.1"),
    );
    let worst_gap = fit
        .gap_prefactor_ratios
        .iter()
        .copied()
        .fold(0.0f64, |m, r| m.max((r - 1.0).abs()));
    v.insert(
        "gap_prefactor".into(),
        verdict(worst_gap <= 0.05, floats(&fit.gap_prefactor_ratios), "gap*lambda^2/(8 pi^2) = 1 +- 5% at every lambda"),
    );
    let de: Vec<f64> = rows_at(rows, &[20.0, 40.0])
        .iter()
        .map(|r| r.de_dlambda / scan::de_dlambda_prediction(r.lambda))
        .collect();
    v.insert(
        "de_dlambda".into(),
        verdict(de.iter().all(|&r| within(r, 1.0, 0.05)), floats(&de), "dE/dlambda / (-16 pi^2 lambda^-3) = 1 +- 5%"),
    );
    let lead: Vec<f64> = rows_at(rows, &[40.0])
        .iter()
        .map(|r| r.leading_term / (8.0 * PI * j / r.lambda.powi(3)))
        .collect();
    v.insert(
        "leading_term".into(),
        verdict(lead.iter().all(|&r| within(r, 1.0, 0.05)), floats(&lead), "1 +- 5%"),
    );
    v.insert(
        "leading_residual_slope".into(),
        verdict(
            (fit.leading_residual_slope + 4.0).abs() <= 0.5,
            jf(fit.leading_residual_slope),
            "-4 +- 0.5",
        ),
    );
    v.insert(
        "tension_slope".into(),
        verdict((fit.tension_slope + 1.0).abs() <= 0.15, jf(fit.tension_slope), "-1 +- 0.15"),
    );
    v.insert(
        "pairing_slope".into(),
        verdict((fit.pairing_slope + 2.0).abs() <= 0.3, jf(fit.pairing_slope), "-2 +- 0.3"),
    );
    let er = bounded_ratio(&energy_ratios);
    v.insert(
        "ratio_energy_bounded".into(),
        verdict(er.pass, ratio_json(&er), "max <= 10 * median"),
    );
    (body, v)
}

/// Measures the adapted bubbles at each `λ` and fits the scaling laws.
/// `grid_n = None` picks `max(512, min_grid_for(λ))` per `λ`.
pub fn bubble_scan(
    lambdas: &[f64],
    grid_n: Option<usize>,
    seed: u64,
    out: &Path,
    json: Option<&Path>,
) -> Result<Outcome, LabError> {
    if lambdas.len() < 2 {
        return Err(input("bubble-scan needs at least two lambdas"));
    }
    let json = json.map_or_else(|| default_json(out), Path::to_path_buf);
    let mut sorted = lambdas.to_vec();
    sorted.sort_by(f64::total_cmp);
    let largest = sorted[sorted.len() - 1];
    let cfg = RunConfig {
        subcommand: Subcommand::BubbleScan,
        grid_n: grid_n.unwrap_or_else(|| scan::grid_for(largest, 512)),
        seed,
        lambdas: sorted.clone(),
        out_csv: Some(out.to_path_buf()),
        out_json: Some(json.clone()),
        ..RunConfig::default()
    };
    let manifest = start(&cfg, out)?;
    let j = scan::j_constant().map_err(compute)?;
    let mut csv = CsvWriter::create(out, &manifest, &SCAN_COLUMNS)?;
    let mut rows = Vec::with_capacity(sorted.len());
    for &lambda in &sorted {
        let n = grid_n.unwrap_or_else(|| scan::grid_for(lambda, 512));
        let grid = ToroidalGrid::new(n).map_err(compute)?;
        let row = scan::measure(lambda, grid, seed).map_err(compute)?;
        csv.row(&row.values().map(fmt_f64))?;
        rows.push(row);
    }
    csv.finish()?;
    let (mut body, verdicts) = scan_verdicts(&rows, j);
    body.insert("seed".into(), Value::from(seed));
    finish(json, &manifest, body, verdicts)
}

/// CSV columns of a flow series, in order.
pub const FLOW_COLUMNS: [&str; 10] = [
    "t",
    "energy",
    "tension_l2",
    "lambda",
    "a1",
    "a2",
    "ratio_scale",
    "ratio_energy",
    "dist_z",
    "events",
];

/// One CSV row of a flow record.
pub fn flow_row(r: &DiagnosticsRecord) -> Vec<String> {
    let mut row: Vec<String> = [
        r.t,
        r.energy,
        r.tension_l2,
        r.lambda,
        r.a[0],
        r.a[1],
        r.ratio_scale,
        r.ratio_energy,
        r.dist_z,
    ]
    .iter()
    .map(|&x| fmt_f64(x))
    .collect();
    let labels: Vec<&str> = r.events.iter().map(FlowEvent::label).collect();
    row.push(labels.join(";"));
    row
}

fn initial_data(init: &InitSpec, grid: ToroidalGrid) -> Result<InitialData, LabError> {
    Ok(match init {
        InitSpec::Constant => InitialData::Constant([0.0, 0.0, 1.0]),
        InitSpec::Bubble { lambda, a, rot } => {
            InitialData::Bubble(BubbleParams::new(*lambda, *a, RotationParam::new(*rot)).map_err(input)?)
        }
        InitSpec::File(path) => {
            let u = read_field(path)?;
            if u.grid() != grid {
                return Err(input(format!(
                    "field {} has N = {}, config has grid_n = {}",
                    path.display(),
                    u.grid().n(),
                    grid.n()
                )));
            }
            InitialData::Field(u)
        }
    })
}

/// Runs the flow described by a configuration file.
pub fn flow(config: &Path) -> Result<Outcome, LabError> {
    let text = std::fs::read_to_string(config)?;
    let cfg = parse_config(&text)?;
    if cfg.subcommand != Subcommand::Flow {
        return Err(input(format!("config is for `{}`, not `flow`", cfg.subcommand.name())));
    }
    flow_with(&cfg)
}

/// Runs the flow for an already parsed configuration.
pub fn flow_with(cfg: &RunConfig) -> Result<Outcome, LabError> {
    let out = cfg
        .out_csv
        .clone()
        .ok_or_else(|| input("flow config needs out_csv"))?;
    let json = cfg.out_json.clone().unwrap_or_else(|| default_json(&out));
    let manifest = start(cfg, &out)?;
    let grid = ToroidalGrid::new(cfg.grid_n).map_err(compute)?;
    let initial = initial_data(&cfg.init, grid)?;
    let fc = FlowConfig {
        dt_safety: cfg.dt_safety,
        t_end: cfg.t_end,
        sample_every: cfg.sample_every,
        e_inf: cfg.e_inf,
        dist_every: cfg.dist_every,
        post_event_time: cfg.post_event_time,
        ..FlowConfig::default()
    };

    let mut csv = CsvWriter::create(&out, &manifest, &FLOW_COLUMNS)?;
    let mut write_error: Option<io::Error> = None;
    let run = flow_engine::run(grid, &initial, &fc, |r| {
        if write_error.is_none() {
            if let Err(e) = csv.row(&flow_row(r)) {
                write_error = Some(e);
            }
        }
    })
    .map_err(compute)?;
    if let Some(e) = write_error {
        return Err(e.into());
    }
    csv.finish()?;
    if let Some(path) = &cfg.out_field {
        write_field(path, run.final_state.u(), &manifest)?;
    }

    let e0 = run.records.first().map_or(0.0, |r| r.energy);
    let slack = flow_engine::ENERGY_SLACK * e0;
    let worst_rise = run
        .records
        .windows(2)
        .map(|w| w[1].energy - w[0].energy)
        .fold(f64::NEG_INFINITY, f64::max);
    let monotone = run.records.len() < 2 || worst_rise <= slack;
    let on_sphere = run.final_state.u().on_sphere();

    let mut body = Map::new();
    body.insert("grid_n".into(), Value::from(cfg.grid_n));
    body.insert("records".into(), Value::from(run.records.len()));
    body.insert("steps".into(), Value::from(run.final_state.steps));
    body.insert("t_final".into(), jf(run.final_state.t));
    body.insert("energy_final".into(), jf(run.final_state.energy));
    body.insert("tension_l2_final".into(), jf(run.final_state.tension_l2));
    body.insert(
        "stop_reason".into(),
        Value::from(match run.stop {
            StopReason::EndTime => "end_time",
            StopReason::AfterSingularEvent => "after_singular_event",
        }),
    );
    let mut verdicts = Map::new();
    verdicts.insert(
        "energy_monotone".into(),
        verdict(monotone, jf(worst_rise.max(0.0)), "E(t+dt) <= E(t) + 1e-8 E(0)"),
    );
    verdicts.insert(
        "on_sphere".into(),
        verdict(on_sphere, Value::Bool(on_sphere), "|u| = 1 at every sample"),
    );
    match run.singular {
        Some(ev) => {
            let mut m = Map::new();
            m.insert("t".into(), jf(ev.t));
            m.insert("energy_before".into(), jf(ev.energy_before));
            m.insert("energy_after".into(), jf(ev.energy_after));
            m.insert("energy_drop".into(), jf(ev.energy_drop()));
            m.insert("drop_over_4pi".into(), jf(ev.energy_drop() / SPHERE_ENERGY));
            body.insert("singular_event".into(), Value::Object(m));
        }
        None => {
            body.insert("singular_event".into(), Value::Null);
        }
    }
    finish(json, &manifest, body, verdicts)
}

/// The resolvable window of a flow series: samples with a detected bubble,
/// positive tension and, when `grid_n` is known, `λh ≤ 0.2`, up to the first
/// unresolved detection.
pub fn resolvable_window(records: &[DiagnosticsRecord], grid_n: Option<usize>) -> Vec<usize> {
    let mut out = Vec::new();
    for (k, r) in records.iter().enumerate() {
        if r.events.iter().any(|e| matches!(e, FlowEvent::Unresolved { .. })) {
            break;
        }
        let resolved = grid_n.is_none_or(|n| r.lambda / n as f64 <= MAX_LAMBDA_H);
        if r.lambda.is_finite() && r.tension_l2 > 0.0 && resolved {
            out.push(k);
        }
    }
    out
}

/// ODE ratio over the window samples in the small-`E_d` regime, and over
/// the whole window for reference.
pub fn ode_ratios(records: &[DiagnosticsRecord], window: &[usize], e_inf: f64) -> (BoundedRatio, BoundedRatio) {
    let series: Vec<(f64, f64)> = window
        .iter()
        .map(|&k| (records[k].energy - e_inf, records[k].tension_l2))
        .collect();
    let all = ode_ratio_check(&series);
    let regime: Vec<f64> = series
        .iter()
        .zip(&all)
        .filter(|((e_d, _), _)| in_ode_regime(*e_d))
        .map(|(_, r)| *r)
        .collect();
    (bounded_ratio(&regime), bounded_ratio(&all))
}

/// `dist_z / (T (1 + |log T|^{1/2}))` on samples carrying a distance.
pub fn dist_envelope_ratios(records: &[DiagnosticsRecord], window: &[usize]) -> Vec<f64> {
    window
        .iter()
        .map(|&k| &records[k])
        .filter(|r| r.dist_z.is_finite())
        .map(|r| r.dist_z / (r.tension_l2 * log_factor(r.tension_l2)))
        .collect()
}

/// Envelope check: every ratio within `1.5×` the median ratio.
pub fn dist_envelope_pass(ratios: &[f64]) -> (bool, f64, f64) {
    let b = bounded_ratio(ratios);
    (b.samples > 0 && b.max <= 1.5 * b.median, b.max, b.median)
}

fn event_from_label(label: &str, t: f64) -> Option<FlowEvent> {
    Some(match label {
        "dt_halved" => FlowEvent::DtHalved { t, dt: f64::NAN },
        "no_bubble" => FlowEvent::NoBubble { t },
        "unresolved" => FlowEvent::Unresolved { t, radius: f64::NAN },
        "dist_not_converged" => FlowEvent::DistNotConverged { t },
        _ => return None,
    })
}

/// Parses the records of a flow CSV.
pub fn parse_flow_series(table: &CsvTable) -> Result<Vec<DiagnosticsRecord>, LabError> {
    if table.header != FLOW_COLUMNS {
        return Err(input("flow series must have the columns t, energy, tension_l2, lambda, a1, a2, ratio_scale, ratio_energy, dist_z, events"));
    }
    let col = |name| table.floats(name).map_err(input);
    let (t, e, tn, l) = (col("t")?, col("energy")?, col("tension_l2")?, col("lambda")?);
    let (a1, a2, rs, re, d) = (col("a1")?, col("a2")?, col("ratio_scale")?, col("ratio_energy")?, col("dist_z")?);
    let mut out = Vec::with_capacity(t.len());
    for (k, row) in table.rows.iter().enumerate() {
        let mut events = Vec::new();
        for label in row[9].split(';').filter(|s| !s.is_empty()) {
            events.push(event_from_label(label, t[k]).ok_or_else(|| input(format!("unknown event `{label}`")))?);
        }
        out.push(DiagnosticsRecord {
            t: t[k],
            energy: e[k],
            tension_l2: tn[k],
            lambda: l[k],
            a: [a1[k], a2[k]],
            ratio_scale: rs[k],
            ratio_energy: re[k],
            dist_z: d[k],
            events,
        });
    }
    Ok(out)
}

fn fit_json(fit: &Result<FitResult, bubblelab_core::diagnostics::FitError>) -> Value {
    match fit {
        Ok(f) => {
            let model = |m: &bubblelab_core::diagnostics::ModelFit| {
                let mut o = Map::new();
                o.insert("model".into(), Value::from(m.model.tag()));
                o.insert("constants".into(), floats(&m.constants));
                o.insert("r_squared_held_out".into(), jf(m.r_squared));
                Value::Object(o)
            };
            let mut o = Map::new();
            o.insert("selected".into(), model(&f.selected));
            o.insert("rejected".into(), model(&f.rejected));
            o.insert("window".into(), floats(&f.window));
            Value::Object(o)
        }
        Err(e) => Value::from(format!("not fitted: {e}")),
    }
}

fn write_scripts(out: &Path, scripts: &[(&str, String)]) -> Result<Vec<Value>, LabError> {
    let mut paths = Vec::new();
    for (name, text) in scripts {
        let stem = out.file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_default();
        let path = out.with_file_name(format!("{stem}.{name}.gp"));
        std::fs::write(&path, text)?;
        paths.push(Value::from(path.display().to_string()));
    }
    Ok(paths)
}

/// Checks a flow or scan series. The kind is read off the header.
pub fn loj_check(series: &Path, out: &Path, grid_n: Option<usize>, e_inf: f64) -> Result<Outcome, LabError> {
    let cfg = RunConfig {
        subcommand: Subcommand::LojCheck,
        grid_n: grid_n.unwrap_or(RunConfig::default().grid_n),
        e_inf,
        out_csv: Some(series.to_path_buf()),
        out_json: Some(out.to_path_buf()),
        ..RunConfig::default()
    };
    let manifest = start(&cfg, out)?;
    let table = CsvTable::parse(&std::fs::read_to_string(series)?).map_err(input)?;
    let mut body = Map::new();
    body.insert("series".into(), Value::from(series.display().to_string()));
    if let Some(h) = &table.manifest_hash {
        body.insert("series_manifest_sha256".into(), Value::from(h.clone()));
    }
    let columns: Vec<&str> = table.header.iter().map(String::as_str).collect();
    if table.header == SCAN_COLUMNS {
        body.insert("kind".into(), Value::from("scan"));
        let mut rows = Vec::new();
        for c in &SCAN_COLUMNS {
            rows.push(table.floats(c).map_err(input)?);
        }
        let rows: Vec<ScanRow> = (0..table.rows.len())
            .map(|k| ScanRow::from_values(&rows.iter().map(|c| c[k]).collect::<Vec<_>>()))
            .collect();
        if rows.len() < 2 {
            return Err(input("scan series needs at least two rows"));
        }
        let j = scan::j_constant().map_err(compute)?;
        let (scan_body, verdicts) = scan_verdicts(&rows, j);
        body.extend(scan_body);
        let scripts = write_scripts(out, &[("gap_vs_lambda", plots::gap_vs_lambda(series, &columns))])?;
        body.insert("plots".into(), Value::Array(scripts));
        return finish(out.to_path_buf(), &manifest, body, verdicts);
    }

    let records = parse_flow_series(&table)?;
    body.insert("kind".into(), Value::from("flow"));
    let window = resolvable_window(&records, grid_n);
    let in_window = |f: fn(&DiagnosticsRecord) -> f64| window.iter().map(|&k| f(&records[k])).collect::<Vec<f64>>();
    let scale = bounded_ratio(&in_window(|r| r.ratio_scale));
    let energy = bounded_ratio(&in_window(|r| r.ratio_energy));
    let (ode, ode_all) = ode_ratios(&records, &window, e_inf);
    body.insert("ode_ratio_unrestricted".into(), ratio_json(&ode_all));
    let t_window = match (window.first(), window.last()) {
        (Some(&lo), Some(&hi)) => Value::Array(vec![jf(records[lo].t), jf(records[hi].t)]),
        _ => Value::Null,
    };
    body.insert("window".into(), t_window);
    body.insert("window_samples".into(), Value::from(window.len()));
    body.insert("e_inf".into(), jf(e_inf));

    let decay: Vec<(f64, f64)> = records
        .iter()
        .filter(|r| r.t > 0.0 && r.energy - e_inf > 0.0)
        .map(|r| (r.t, r.energy - e_inf))
        .collect();
    body.insert("decay_fit".into(), fit_json(&fit_decay(&decay)));
    let unresolved = records
        .iter()
        .filter(|r| r.events.iter().any(|e| matches!(e, FlowEvent::Unresolved { .. })))
        .count();
    body.insert("unresolved_samples".into(), Value::from(unresolved));

    let mut verdicts = Map::new();
    for (name, r) in [("ratio_scale", &scale), ("ratio_energy", &energy)] {
        verdicts.insert(name.into(), verdict(r.pass, ratio_json(r), "max <= 10 * median over the window"));
    }
    verdicts.insert(
        "ode_ratio".into(),
        verdict(ode.pass, ratio_json(&ode), "max <= 10 * median over window samples with E_d <= 1/e"),
    );
    let dist = dist_envelope_ratios(&records, &window);
    if !dist.is_empty() {
        let (pass, max, median) = dist_envelope_pass(&dist);
        let mut m = Map::new();
        m.insert("max".into(), jf(max));
        m.insert("median".into(), jf(median));
        m.insert("samples".into(), Value::from(dist.len()));
        verdicts.insert(
            "dist_envelope".into(),
            verdict(pass, Value::Object(m), "dist_z <= 1.5 * median prefactor * T(1+|log T|^1/2)"),
        );
    }
    let scripts = write_scripts(
        out,
        &[
            ("energy_vs_time", plots::energy_vs_time(series, &columns)),
            ("decay_vs_sqrt_t", plots::decay_vs_sqrt_t(series, &columns, e_inf)),
            ("ratios_vs_time", plots::ratios_vs_time(series, &columns)),
        ],
    )?;
    body.insert("plots".into(), Value::Array(scripts));
    finish(out.to_path_buf(), &manifest, body, verdicts)
}

/// Rotation taking `p* = (0, 0, 1)` to the direction of `d` along a great
/// circle.
fn rotation_towards(d: [f64; 3]) -> RotationParam {
    let n = norm(d);
    if n == 0.0 {
        return RotationParam::identity();
    }
    let d = scale(1.0 / n, d);
    let axis = cross([0.0, 0.0, 1.0], d);
    let s = norm(axis);
    let angle = dot([0.0, 0.0, 1.0], d).clamp(-1.0, 1.0).acos();
    if s < 1e-12 {
        return if angle < 1.0 { RotationParam::identity() } else { RotationParam::new([PI, 0.0, 0.0]) };
    }
    RotationParam::new(scale(angle / s, axis))
}

/// Seed bubble for a field: `a` from detection (or given), the rotation
/// mapping `p*` to the mean value of `u` outside the detected ball.
pub fn seed_params(u: &ToroidalField3, lambda: f64, a: Option<[f64; 2]>) -> Result<BubbleParams, LabError> {
    let det = detect_bubble(u).ok();
    let a = match (a, det) {
        (Some(a), _) => a,
        (None, Some(d)) => d.a,
        (None, None) => return Err(input("no bubble detected; pass --seed-a")),
    };
    let radius = det.map_or(0.25, |d| (2.0 * d.radius).min(0.25));
    let grid = u.grid();
    let mut far = [0.0; 3];
    for (idx, v) in u.values().iter().enumerate() {
        let x = bubblelab_core::torus_geometry::translate_coords(a, grid.point(idx));
        if x[0].hypot(x[1]) > radius {
            far = [far[0] + v[0], far[1] + v[1], far[2] + v[2]];
        }
    }
    BubbleParams::new(lambda, a, rotation_towards(far)).map_err(input)
}

/// Distance from a stored field to the bubble family.
pub fn dist_fit(
    field: &Path,
    seed_lambda: f64,
    seed_a: Option<[f64; 2]>,
    out: &Path,
) -> Result<Outcome, LabError> {
    let u = read_field(field)?;
    let cfg = RunConfig {
        subcommand: Subcommand::DistFit,
        grid_n: u.grid().n(),
        lambda: Some(seed_lambda),
        init: InitSpec::File(field.to_path_buf()),
        out_json: Some(out.to_path_buf()),
        ..RunConfig::default()
    };
    let manifest = start(&cfg, out)?;
    let seed = seed_params(&u, seed_lambda, seed_a)?;
    let sampler = BubbleSampler::new();
    let mut body = Map::new();
    body.insert("field".into(), Value::from(field.display().to_string()));
    body.insert("seed_lambda".into(), jf(seed.lambda));
    body.insert("seed_a".into(), floats(&seed.a));
    body.insert("seed_rot".into(), floats(&seed.rot.axis_angle()));
    let mut verdicts = Map::new();
    match dist_to_z(&u, &seed, &sampler, DistOptions::default()) {
        Ok(r) => {
            body.insert("dist".into(), jf(r.dist));
            body.insert("seed_dist".into(), jf(r.seed_dist));
            body.insert("lambda".into(), jf(r.params.lambda));
            body.insert("a".into(), floats(&r.params.a));
            body.insert("rot".into(), floats(&r.params.rot.axis_angle()));
            body.insert("evals".into(), Value::from(r.evals));
            body.insert("simplex_diameter".into(), jf(r.diameter));
            verdicts.insert("converged".into(), verdict(true, jf(r.diameter), "simplex diameter <= 1e-4"));
            verdicts.insert(
                "not_worse_than_seed".into(),
                verdict(r.dist <= r.seed_dist, jf(r.dist - r.seed_dist), "dist <= seed distance"),
            );
        }
        Err(e) => {
            body.insert("error".into(), Value::from(e.to_string()));
            verdicts.insert("converged".into(), verdict(false, Value::from(e.to_string()), "simplex diameter <= 1e-4"));
        }
    }
    finish(out.to_path_buf(), &manifest, body, verdicts)
}
