//! Flat `key=value` run configuration.
//!
//! One assignment per line, `#` starts a comment, blank lines are ignored.
//! Unknown keys and repeated keys are errors. Physical preconditions are
//! checked at parse time so a bad run is rejected before any allocation.

use std::collections::BTreeMap;
use std::fmt;
use std::path::PathBuf;
use std::str::FromStr;

use bubblelab_core::adapted_bubble::LAMBDA_1;
use bubblelab_core::flow_engine::MAX_DT_FACTOR;
use bubblelab_core::torus_geometry::{MAX_LAMBDA_H, MIN_GRID_N};
use bubblelab_core::SPHERE_ENERGY;

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum ConfigError {
    #[error("line {line}: {message}")]
    Parse { line: usize, message: String },
    #[error("invalid configuration: {0}")]
    Validation(String),
}

fn parse_err(line: usize, message: impl Into<String>) -> ConfigError {
    ConfigError::Parse {
        line,
        message: message.into(),
    }
}

fn invalid(message: impl Into<String>) -> ConfigError {
    ConfigError::Validation(message.into())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Subcommand {
    GreensTable,
    BubbleScan,
    Flow,
    LojCheck,
    DistFit,
}

impl Subcommand {
    pub fn name(&self) -> &'static str {
        match self {
            Self::GreensTable => "greens-table",
            Self::BubbleScan => "bubble-scan",
            Self::Flow => "flow",
            Self::LojCheck => "loj-check",
            Self::DistFit => "dist-fit",
        }
    }
}

impl FromStr for Subcommand {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Ok(match s {
            "greens-table" => Self::GreensTable,
            "bubble-scan" => Self::BubbleScan,
            "flow" => Self::Flow,
            "loj-check" => Self::LojCheck,
            "dist-fit" => Self::DistFit,
            other => return Err(format!("unknown subcommand `{other}`")),
        })
    }
}

/// Initial data of a flow run.
#[derive(Debug, Clone, PartialEq)]
pub enum InitSpec {
    /// The constant map `p* = (0, 0, 1)`.
    Constant,
    /// `bubble:lambda,a1,a2,rot1,rot2,rot3`
    Bubble { lambda: f64, a: [f64; 2], rot: [f64; 3] },
    /// A field file, binary or CSV by extension.
    File(PathBuf),
}

impl fmt::Display for InitSpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Self::Constant => write!(f, "constant"),
            Self::Bubble { lambda, a, rot } => write!(
                f,
                "bubble:{},{},{},{},{},{}",
                lambda, a[0], a[1], rot[0], rot[1], rot[2]
            ),
            Self::File(p) => write!(f, "file:{}", p.display()),
        }
    }
}

fn parse_init(v: &str) -> Result<InitSpec, String> {
    if v == "constant" {
        return Ok(InitSpec::Constant);
    }
    if let Some(rest) = v.strip_prefix("bubble:") {
        let nums = parse_list(rest)?;
        if nums.len() != 6 {
            return Err(format!("bubble init needs 6 numbers, got {}", nums.len()));
        }
        return Ok(InitSpec::Bubble {
            lambda: nums[0],
            a: [nums[1], nums[2]],
            rot: [nums[3], nums[4], nums[5]],
        });
    }
    if let Some(path) = v.strip_prefix("file:") {
        if path.is_empty() {
            return Err("empty file path".into());
        }
        return Ok(InitSpec::File(PathBuf::from(path)));
    }
    Err(format!("unknown init `{v}` (expected constant, bubble:..., or file:...)"))
}

fn parse_list(v: &str) -> Result<Vec<f64>, String> {
    v.split(',')
        .map(|s| s.trim().parse::<f64>().map_err(|e| format!("`{s}`: {e}")))
        .collect()
}

/// Parameters shared by all subcommands; each reads what it needs.
#[derive(Debug, Clone, PartialEq)]
pub struct RunConfig {
    pub subcommand: Subcommand,
    pub grid_n: usize,
    pub seed: u64,
    /// Single bubble scale (`dist-fit` seed, scan shortcut).
    pub lambda: Option<f64>,
    /// Scan list for `bubble-scan`.
    pub lambdas: Vec<f64>,
    pub dt_safety: f64,
    pub t_end: f64,
    pub sample_every: usize,
    pub init: InitSpec,
    pub e_inf: f64,
    pub dist_every: usize,
    pub post_event_time: f64,
    pub out_csv: Option<PathBuf>,
    pub out_json: Option<PathBuf>,
    pub out_field: Option<PathBuf>,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            subcommand: Subcommand::Flow,
            grid_n: 256,
            seed: 0,
            lambda: None,
            lambdas: Vec::new(),
            dt_safety: MAX_DT_FACTOR,
            t_end: 0.1,
            sample_every: 100,
            init: InitSpec::Constant,
            e_inf: SPHERE_ENERGY,
            dist_every: 0,
            post_event_time: 0.0,
            out_csv: None,
            out_json: None,
            out_field: None,
        }
    }
}

pub const KEYS: &[&str] = &[
    "subcommand",
    "grid_n",
    "seed",
    "lambda",
    "lambdas",
    "dt_safety",
    "t_end",
    "sample_every",
    "init",
    "e_inf",
    "dist_every",
    "post_event_time",
    "out_csv",
    "out_json",
    "out_field",
];

fn value<T: FromStr>(line: usize, key: &str, v: &str) -> Result<T, ConfigError>
where
    T::Err: fmt::Display,
{
    v.parse::<T>()
        .map_err(|e| parse_err(line, format!("{key}: cannot parse `{v}`: {e}")))
}

/// Parses and validates a configuration.
pub fn parse_config(text: &str) -> Result<RunConfig, ConfigError> {
    let mut cfg = RunConfig::default();
    let mut seen = BTreeMap::new();
    for (k, raw) in text.lines().enumerate() {
        let line = k + 1;
        let content = raw.split('#').next().unwrap_or("").trim();
        if content.is_empty() {
            continue;
        }
        let (key, v) = content
            .split_once('=')
            .ok_or_else(|| parse_err(line, format!("expected key=value, got `{content}`")))?;
        let (key, v) = (key.trim(), v.trim());
        if !KEYS.contains(&key) {
            return Err(parse_err(line, format!("unknown key `{key}`")));
        }
        if let Some(prev) = seen.insert(key.to_string(), line) {
            return Err(parse_err(line, format!("`{key}` already set on line {prev}")));
        }
        match key {
            "subcommand" => cfg.subcommand = v.parse().map_err(|e: String| parse_err(line, e))?,
            "grid_n" => cfg.grid_n = value(line, key, v)?,
            "seed" => cfg.seed = value(line, key, v)?,
            "lambda" => cfg.lambda = Some(value(line, key, v)?),
            "lambdas" => cfg.lambdas = parse_list(v).map_err(|e| parse_err(line, e))?,
            "dt_safety" => cfg.dt_safety = value(line, key, v)?,
            "t_end" => cfg.t_end = value(line, key, v)?,
            "sample_every" => cfg.sample_every = value(line, key, v)?,
            "init" => cfg.init = parse_init(v).map_err(|e| parse_err(line, e))?,
            "e_inf" => cfg.e_inf = value(line, key, v)?,
            "dist_every" => cfg.dist_every = value(line, key, v)?,
            "post_event_time" => cfg.post_event_time = value(line, key, v)?,
            "out_csv" => cfg.out_csv = Some(PathBuf::from(v)),
            "out_json" => cfg.out_json = Some(PathBuf::from(v)),
            "out_field" => cfg.out_field = Some(PathBuf::from(v)),
            _ => unreachable!("key list and match arms agree"),
        }
    }
    cfg.validate()?;
    Ok(cfg)
}

fn check_lambda(lambda: f64, grid_n: usize) -> Result<(), ConfigError> {
    if !lambda.is_finite() || lambda < LAMBDA_1 {
        return Err(invalid(format!("lambda = {lambda} violates lambda >= {LAMBDA_1}")));
    }
    let lh = lambda / grid_n as f64;
    if lh > MAX_LAMBDA_H {
        return Err(invalid(format!(
            "lambda*h = {lambda}/{grid_n} = {lh} exceeds {MAX_LAMBDA_H}"
        )));
    }
    Ok(())
}

impl RunConfig {
    pub fn validate(&self) -> Result<(), ConfigError> {
        if self.grid_n < MIN_GRID_N {
            return Err(invalid(format!("grid_n = {} is below {MIN_GRID_N}", self.grid_n)));
        }
        if let Some(l) = self.lambda {
            check_lambda(l, self.grid_n)?;
        }
        for &l in &self.lambdas {
            check_lambda(l, self.grid_n)?;
        }
        if let InitSpec::Bubble { lambda, a, rot } = &self.init {
            check_lambda(*lambda, self.grid_n)?;
            if !a.iter().chain(rot.iter()).all(|x| x.is_finite()) {
                return Err(invalid("bubble init has non-finite entries"));
            }
        }
        if !(self.dt_safety > 0.0 && self.dt_safety <= MAX_DT_FACTOR) {
            return Err(invalid(format!(
                "dt_safety = {} must lie in (0, {MAX_DT_FACTOR}]",
                self.dt_safety
            )));
        }
        if !(self.t_end.is_finite() && self.t_end >= 0.0) {
            return Err(invalid(format!("t_end = {} must be finite and non-negative", self.t_end)));
        }
        if self.sample_every == 0 {
            return Err(invalid("sample_every must be positive"));
        }
        if !(self.post_event_time.is_finite() && self.post_event_time >= 0.0) {
            return Err(invalid("post_event_time must be finite and non-negative"));
        }
        if !self.e_inf.is_finite() {
            return Err(invalid("e_inf must be finite"));
        }
        Ok(())
    }

    /// Canonical `key=value` text, one line per key in sorted order. Parsing
    /// it back yields an equal configuration.
    pub fn canonical(&self) -> String {
        let mut m: BTreeMap<&str, String> = BTreeMap::new();
        m.insert("subcommand", self.subcommand.name().into());
        m.insert("grid_n", self.grid_n.to_string());
        m.insert("seed", self.seed.to_string());
        if let Some(l) = self.lambda {
            m.insert("lambda", format!("{l:?}"));
        }
        if !self.lambdas.is_empty() {
            let parts: Vec<String> = self.lambdas.iter().map(|l| format!("{l:?}")).collect();
            m.insert("lambdas", parts.join(","));
        }
        m.insert("dt_safety", format!("{:?}", self.dt_safety));
        m.insert("t_end", format!("{:?}", self.t_end));
        m.insert("sample_every", self.sample_every.to_string());
        m.insert("init", self.init.to_string());
        m.insert("e_inf", format!("{:?}", self.e_inf));
        m.insert("dist_every", self.dist_every.to_string());
        m.insert("post_event_time", format!("{:?}", self.post_event_time));
        for (k, p) in [("out_csv", &self.out_csv), ("out_json", &self.out_json), ("out_field", &self.out_field)] {
            if let Some(p) = p {
                m.insert(k, p.display().to_string());
            }
        }
        m.into_iter().map(|(k, v)| format!("{k}={v}\n")).collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn minimal_flow_config() {
        let cfg = parse_config("grid_n=256\ninit=bubble:40,0.5,0.5,0,0,0").unwrap();
        assert_eq!(cfg.grid_n, 256);
        assert_eq!(
            cfg.init,
            InitSpec::Bubble {
                lambda: 40.0,
                a: [0.5, 0.5],
                rot: [0.0; 3]
            }
        );
    }

    #[test]
    fn lambda_below_one_is_rejected() {
        let err = parse_config("lambda=1").unwrap_err();
        assert!(matches!(err, ConfigError::Validation(ref m) if m.contains("lambda >= 2")), "{err}");
    }

    #[test]
    fn underresolved_bubble_is_rejected() {
        let err = parse_config("grid_n=64\ninit=bubble:40,0.5,0.5,0,0,0").unwrap_err();
        assert!(matches!(err, ConfigError::Validation(ref m) if m.contains("0.625")), "{err}");
    }

    #[test]
    fn parse_errors_carry_line_numbers() {
        let err = parse_config("# header\ngrid_n=128\n\nbogus=3\n").unwrap_err();
        assert_eq!(
            err,
            ConfigError::Parse {
                line: 4,
                message: "unknown key `bogus`".into()
            }
        );
        assert!(matches!(parse_config("grid_n 12"), Err(ConfigError::Parse { line: 1, .. })));
        assert!(matches!(parse_config("grid_n=x"), Err(ConfigError::Parse { line: 1, .. })));
        assert!(matches!(parse_config("t_end=1\nt_end=2"), Err(ConfigError::Parse { line: 2, .. })));
        assert!(matches!(parse_config("init=sphere"), Err(ConfigError::Parse { line: 1, .. })));
    }

    #[test]
    fn comments_and_whitespace() {
        let cfg = parse_config("  t_end = 0.5  # short\n# all comment\nsample_every=7").unwrap();
        assert_eq!(cfg.t_end, 0.5);
        assert_eq!(cfg.sample_every, 7);
    }

    #[test]
    fn dt_rule() {
        assert!(parse_config("dt_safety=0.25").is_err());
        assert!(parse_config("dt_safety=0").is_err());
        assert!(parse_config("dt_safety=0.1").is_ok());
    }

    #[test]
    fn canonical_round_trip() {
        let cfg = parse_config(
            "subcommand=bubble-scan\ngrid_n=512\nlambdas=20,28,40\ninit=file:u.bin\nout_csv=a.csv\nseed=9",
        )
        .unwrap();
        let again = parse_config(&cfg.canonical()).unwrap();
        assert_eq!(cfg, again);
    }
}
