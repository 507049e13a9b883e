use std::path::Path;
use std::process::Command;

use bubblelab::config::{parse_config, ConfigError, InitSpec};
use bubblelab::fields::{decode_binary, encode_binary, read_field, write_field};
use bubblelab::output::{CsvTable, CsvWriter, Manifest};
use bubblelab_core::adapted_bubble::build_bubble;
use bubblelab_core::{BubbleParams, RotationParam, ToroidalGrid};
use serde_json::Value;

fn bin() -> Command {
    Command::new(env!("CARGO_BIN_EXE_bubblelab"))
}

fn json(path: &Path) -> Value {
    serde_json::from_str(&std::fs::read_to_string(path).unwrap()).unwrap()
}

fn flow_config(dir: &Path, name: &str, extra: &str) -> std::path::PathBuf {
    let cfg = dir.join(format!("{name}.cfg"));
    let text = format!(
        "# small bubble run\ngrid_n=48\ninit=bubble:6,0.5,0.5,0.1,0,0\nt_end=0.004\nsample_every=10\nout_csv={}\n{extra}",
        dir.join(format!("{name}.csv")).display()
    );
    std::fs::write(&cfg, text).unwrap();
    cfg
}

#[test]
fn config_examples() {
    let cfg = parse_config("grid_n=256\ninit=bubble:40,0.5,0.5,0,0,0").unwrap();
    assert!(matches!(cfg.init, InitSpec::Bubble { lambda, .. } if lambda == 40.0));

    let err = parse_config("lambda=1").unwrap_err();
    assert!(matches!(&err, ConfigError::Validation(m) if m.contains("lambda >= 2")), "{err}");

    let err = parse_config("grid_n=64\ninit=bubble:40,0.5,0.5,0,0,0").unwrap_err();
    assert!(matches!(&err, ConfigError::Validation(m) if m.contains("0.625")), "{err}");

    let err = parse_config("grid_n=64\ngrid_size=3").unwrap_err();
    assert!(matches!(err, ConfigError::Parse { line: 2, .. }));
}

#[test]
fn canonical_config_round_trips() {
    let cfg = parse_config("t_end=0.5\ninit=bubble:20,0.25,0.75,0.1,0.2,0.3\nlambdas=20,40\ndist_every=7").unwrap();
    assert_eq!(parse_config(&cfg.canonical()).unwrap(), cfg);
}

#[test]
fn empty_series_is_header_only() {
    let cfg = parse_config("").unwrap();
    let m = Manifest::new(&cfg);
    let w = CsvWriter::new(Vec::new(), &m, &["t", "energy"]).unwrap();
    let text = String::from_utf8(w.finish().unwrap()).unwrap();
    let t = CsvTable::parse(&text).unwrap();
    assert_eq!(t.header, ["t", "energy"]);
    assert!(t.rows.is_empty());
    assert_eq!(t.manifest_hash.as_deref(), Some(m.hash()));
}

#[test]
fn field_files_round_trip() {
    let dir = tempfile::tempdir().unwrap();
    let g = ToroidalGrid::new(32).unwrap();
    let p = BubbleParams::new(5.0, [0.3, 0.6], RotationParam::new([0.1, 0.2, 0.3])).unwrap();
    let u = build_bubble(&p, g).unwrap();
    assert_eq!(decode_binary(&encode_binary(&u)).unwrap().values(), u.values());
    let m = Manifest::new(&parse_config("").unwrap());
    for name in ["u.bin", "u.csv"] {
        let path = dir.path().join(name);
        write_field(&path, &u, &m).unwrap();
        assert_eq!(read_field(&path).unwrap().values(), u.values());
    }
    assert!(decode_binary(&encode_binary(&u)[..100]).is_err());
}

#[test]
fn greens_table_passes() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("g.csv");
    let st = bin().args(["greens-table", "--grid-n", "32", "--out"]).arg(&out).status().unwrap();
    assert_eq!(st.code(), Some(0));
    let s = json(&dir.path().join("g.json"));
    assert_eq!(s["pass"], Value::Bool(true));
    let t = CsvTable::parse(&std::fs::read_to_string(&out).unwrap()).unwrap();
    assert_eq!(t.rows.len(), 32 * 32 - 1);
    assert_eq!(t.manifest_hash.as_deref(), s["manifest_sha256"].as_str());
}

#[test]
fn flow_is_deterministic_and_checkable() {
    let dir = tempfile::tempdir().unwrap();
    let field = dir.path().join("final.bin");
    let mut csvs = Vec::new();
    for name in ["a", "b"] {
        let cfg = flow_config(dir.path(), name, &format!("out_field={}\ndist_every=2\n", field.display()));
        let st = bin().args(["flow", "--config"]).arg(&cfg).status().unwrap();
        assert_eq!(st.code(), Some(0));
        csvs.push(std::fs::read_to_string(dir.path().join(format!("{name}.csv"))).unwrap());
        assert!(dir.path().join(format!("{name}.csv.manifest")).exists());
    }
    // Same physics, different output paths: the data rows agree byte for byte.
    let rows = |s: &str| s.lines().skip(1).map(str::to_string).collect::<Vec<_>>();
    assert_eq!(rows(&csvs[0]), rows(&csvs[1]));
    let t = CsvTable::parse(&csvs[0]).unwrap();
    assert_eq!(
        t.header,
        ["t", "energy", "tension_l2", "lambda", "a1", "a2", "ratio_scale", "ratio_energy", "dist_z", "events"]
    );

    let out = dir.path().join("loj.json");
    let st = bin()
        .args(["loj-check", "--grid-n", "48", "--series"])
        .arg(dir.path().join("a.csv"))
        .arg("--out")
        .arg(&out)
        .status()
        .unwrap();
    let v = json(&out);
    assert_eq!(v["kind"], "flow");
    assert_eq!(st.code() == Some(0), v["pass"] == Value::Bool(true));
    for name in ["ratio_scale", "ratio_energy", "ode_ratio", "dist_envelope"] {
        assert!(v["verdicts"][name]["pass"].is_boolean(), "{name}");
    }
    assert!(dir.path().join("loj.energy_vs_time.gp").exists());

    let dist = dir.path().join("dist.json");
    let st = bin()
        .args(["dist-fit", "--seed-lambda", "6", "--field"])
        .arg(&field)
        .arg("--out")
        .arg(&dist)
        .status()
        .unwrap();
    let d = json(&dist);
    assert_eq!(st.code() == Some(0), d["pass"] == Value::Bool(true));
    assert!(d["dist"].as_f64().unwrap() <= d["seed_dist"].as_f64().unwrap());
}

#[test]
fn identical_configs_give_identical_files() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = flow_config(dir.path(), "same", "");
    let mut outputs = Vec::new();
    for _ in 0..2 {
        assert_eq!(bin().args(["flow", "--config"]).arg(&cfg).status().unwrap().code(), Some(0));
        outputs.push((
            std::fs::read(dir.path().join("same.csv")).unwrap(),
            std::fs::read(dir.path().join("same.json")).unwrap(),
        ));
    }
    assert_eq!(outputs[0], outputs[1]);
}

#[test]
fn invalid_config_is_an_error_before_any_output() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("bad.cfg");
    let csv = dir.path().join("bad.csv");
    std::fs::write(&cfg, format!("grid_n=64\ninit=bubble:40,0.5,0.5,0,0,0\nout_csv={}\n", csv.display())).unwrap();
    let out = bin().args(["flow", "--config"]).arg(&cfg).output().unwrap();
    assert_eq!(out.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&out.stderr).contains("0.625"));
    assert!(!csv.exists());
}

#[test]
fn bubble_scan_exit_code_matches_verdicts() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("scan.csv");
    let st = bin()
        .args(["bubble-scan", "--lambdas", "4,6,8", "--grid-n", "64", "--out"])
        .arg(&out)
        .status()
        .unwrap();
    let v = json(&dir.path().join("scan.json"));
    let pass = v["pass"].as_bool().unwrap();
    assert_eq!(st.code(), Some(if pass { 0 } else { 2 }));
    let t = CsvTable::parse(&std::fs::read_to_string(&out).unwrap()).unwrap();
    assert_eq!(t.rows.len(), 3);
    let gaps = t.floats("gap").unwrap();
    assert!(gaps.windows(2).all(|w| w[1] < w[0]));

    let check = dir.path().join("check.json");
    bin().args(["loj-check", "--series"]).arg(&out).arg("--out").arg(&check).status().unwrap();
    let c = json(&check);
    assert_eq!(c["kind"], "scan");
    assert_eq!(c["verdicts"], v["verdicts"]);
}
