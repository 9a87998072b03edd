//! Experiment configuration: a strict TOML schema with defaults.
//!
//! Unknown keys, type mismatches and missing blocks are all collected and
//! reported together, each with the line it was found on when known.

use std::fmt;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use toml::{Table, Value};

use retromfg_core::retro::{DEFAULT_A, DEFAULT_ALPHA, DEFAULT_LAMBDA, DEFAULT_NU};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Kind {
    VerifyIdentity,
    VerifyCarleman,
    SolveForward,
    SolveRetro,
    StabilitySweep,
    UniquenessCheck,
}

impl Kind {
    pub fn name(self) -> &'static str {
        match self {
            Kind::VerifyIdentity => "verify-identity",
            Kind::VerifyCarleman => "verify-carleman",
            Kind::SolveForward => "solve-forward",
            Kind::SolveRetro => "solve-retro",
            Kind::StabilitySweep => "stability-sweep",
            Kind::UniquenessCheck => "uniqueness-check",
        }
    }

    fn needs_problem(self) -> bool {
        !matches!(self, Kind::VerifyIdentity | Kind::VerifyCarleman)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub kind: Kind,
    #[serde(default)]
    pub seed: u64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub out: Option<PathBuf>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub workers: Option<usize>,
    pub grid: GridBlock,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub problem: Option<ProblemBlock>,
    #[serde(default)]
    pub picard: PicardBlock,
    #[serde(default)]
    pub weight: WeightBlock,
    #[serde(default)]
    pub identity: IdentityBlock,
    #[serde(default)]
    pub carleman: CarlemanBlock,
    #[serde(default)]
    pub retro: RetroBlock,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub sweep: Option<SweepBlock>,
    #[serde(default)]
    pub uniqueness: UniquenessBlock,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct GridBlock {
    pub half_widths: Vec<f64>,
    pub horizon: f64,
    pub nodes: Vec<usize>,
    pub time_steps: usize,
}

impl Default for GridBlock {
    fn default() -> Self {
        Self {
            half_widths: vec![1.0],
            horizon: 1.0,
            nodes: vec![33],
            time_steps: 33,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Flux {
    Upwind,
    Centered,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ProblemBlock {
    #[serde(default = "one")]
    pub beta: f64,
    #[serde(default = "one_expr")]
    pub kappa: String,
    #[serde(default = "c1")]
    pub c1: f64,
    #[serde(default = "c2")]
    pub c2: f64,
    #[serde(default = "one")]
    pub s1: f64,
    #[serde(default = "one")]
    pub s2: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub g0: Option<String>,
    #[serde(default = "one")]
    pub k0: f64,
    #[serde(default = "sigma_k")]
    pub sigma_k: f64,
    pub v_terminal: String,
    pub m_initial: String,
    #[serde(default = "upwind")]
    pub flux: Flux,
    #[serde(default)]
    pub allow_cfl_violation: bool,
}

fn one() -> f64 {
    1.0
}
fn one_expr() -> String {
    "1".into()
}
fn c1() -> f64 {
    0.3
}
fn c2() -> f64 {
    0.2
}
fn sigma_k() -> f64 {
    0.5
}
fn upwind() -> Flux {
    Flux::Upwind
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PicardBlock {
    pub damping: f64,
    pub tol: f64,
    pub max_iter: usize,
}

impl Default for PicardBlock {
    fn default() -> Self {
        Self {
            damping: 0.5,
            tol: 1e-8,
            max_iter: 200,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct WeightBlock {
    pub lambda: f64,
    pub nu: f64,
    pub a: f64,
}

impl Default for WeightBlock {
    fn default() -> Self {
        Self {
            lambda: DEFAULT_LAMBDA,
            nu: DEFAULT_NU,
            a: DEFAULT_A,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Bc {
    Neumann,
    Dirichlet,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct IdentityBlock {
    pub field: String,
    pub bc: Bc,
    /// Nodes per axis at each resolution; each entry refines every axis.
    pub resolutions: Vec<usize>,
}

impl Default for IdentityBlock {
    fn default() -> Self {
        Self {
            field: "cos(pi*x1)".into(),
            bc: Bc::Neumann,
            resolutions: vec![17, 33, 65],
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Estimate {
    Forward,
    ForwardPrism,
    Backward,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct CarlemanBlock {
    pub estimate: Estimate,
    pub beta: f64,
    pub members: usize,
    pub holdout: usize,
    pub lambda_grid: Vec<f64>,
    /// Candidates for the backward threshold `ν₀`; the forward estimates use `weight.nu`.
    pub nu_grid: Vec<f64>,
    /// Multiply members by `1 − t/T`.
    pub taper: bool,
    pub safety: f64,
    pub max_wavenumber: u32,
    pub n_modes: usize,
}

impl Default for CarlemanBlock {
    fn default() -> Self {
        Self {
            estimate: Estimate::Forward,
            beta: 1.0,
            members: 20,
            holdout: 20,
            lambda_grid: vec![1.0, 2.0, 3.0, 4.0, 5.0],
            nu_grid: vec![3.0, 4.0, 5.0, 6.0, 7.0, 8.0],
            taper: false,
            safety: 0.5,
            max_wavenumber: 4,
            n_modes: 4,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RetroBlock {
    pub alpha_vt: f64,
    pub alpha_m0: f64,
    pub alpha_mt: f64,
    pub max_iter: usize,
    pub grad_tol: f64,
    pub memory: usize,
    pub smoothing: f64,
    /// Noise on the data of a single `solve-retro` run.
    pub delta: f64,
}

impl Default for RetroBlock {
    fn default() -> Self {
        Self {
            alpha_vt: DEFAULT_ALPHA,
            alpha_m0: DEFAULT_ALPHA,
            alpha_mt: DEFAULT_ALPHA,
            max_iter: 20_000,
            grad_tol: 1e-10,
            memory: 12,
            smoothing: 1.0,
            delta: 0.0,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SweepBlock {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub delta_grid: Option<Vec<f64>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub seeds: Option<Vec<u64>>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct UniquenessBlock {
    pub n_inits: usize,
    pub amplitude: f64,
}

impl Default for UniquenessBlock {
    fn default() -> Self {
        Self {
            n_inits: 4,
            amplitude: 0.5,
        }
    }
}

/// Known keys per block; `""` is the top level.
const SCHEMA: &[(&str, &[&str])] = &[
    (
        "",
        &[
            "kind",
            "seed",
            "out",
            "workers",
            "grid",
            "problem",
            "picard",
            "weight",
            "identity",
            "carleman",
            "retro",
            "sweep",
            "uniqueness",
        ],
    ),
    ("grid", &["half_widths", "horizon", "nodes", "time_steps"]),
    (
        "problem",
        &[
            "beta",
            "kappa",
            "c1",
            "c2",
            "s1",
            "s2",
            "g0",
            "k0",
            "sigma_k",
            "v_terminal",
            "m_initial",
            "flux",
            "allow_cfl_violation",
        ],
    ),
    ("picard", &["damping", "tol", "max_iter"]),
    ("weight", &["lambda", "nu", "a"]),
    ("identity", &["field", "bc", "resolutions"]),
    (
        "carleman",
        &[
            "estimate",
            "beta",
            "members",
            "holdout",
            "lambda_grid",
            "nu_grid",
            "taper",
            "safety",
            "max_wavenumber",
            "n_modes",
        ],
    ),
    (
        "retro",
        &[
            "alpha_vt",
            "alpha_m0",
            "alpha_mt",
            "max_iter",
            "grad_tol",
            "memory",
            "smoothing",
            "delta",
        ],
    ),
    ("sweep", &["delta_grid", "seeds"]),
    ("uniqueness", &["n_inits", "amplitude"]),
];

#[derive(Clone, Debug, PartialEq)]
pub struct Issue {
    pub line: Option<usize>,
    pub message: String,
}

impl fmt::Display for Issue {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self.line {
            Some(l) => write!(f, "line {l}: {}", self.message),
            None => f.write_str(&self.message),
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct ConfigError {
    pub issues: Vec<Issue>,
}

impl ConfigError {
    fn one(line: Option<usize>, message: impl Into<String>) -> Self {
        Self {
            issues: vec![Issue {
                line,
                message: message.into(),
            }],
        }
    }
}

impl fmt::Display for ConfigError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for (i, issue) in self.issues.iter().enumerate() {
            if i > 0 {
                writeln!(f)?;
            }
            write!(f, "{issue}")?;
        }
        Ok(())
    }
}

impl std::error::Error for ConfigError {}

pub fn parse_config(path: &Path, overrides: &[String]) -> Result<ExperimentConfig, ConfigError> {
    let src = std::fs::read_to_string(path)
        .map_err(|e| ConfigError::one(None, format!("cannot read {}: {e}", path.display())))?;
    parse_config_str(&src, overrides)
}

pub fn parse_config_str(src: &str, overrides: &[String]) -> Result<ExperimentConfig, ConfigError> {
    let mut table: Table = src.parse().map_err(|e: toml::de::Error| {
        ConfigError::one(e.span().map(|s| line_of(src, s.start)), e.message().trim().to_string())
    })?;
    for o in overrides {
        apply_override(&mut table, o)?;
    }

    let mut issues = unknown_keys(src, &table);
    for (block, _) in SCHEMA.iter().skip(1) {
        if let Some(v) = table.get(*block).filter(|v| !v.is_table()) {
            issues.push(Issue {
                line: find_key(src, None, block),
                message: format!("`{block}` must be a table, found {}", v.type_str()),
            });
        }
    }
    if !issues.is_empty() {
        return Err(ConfigError { issues });
    }

    let cfg: ExperimentConfig = match ExperimentConfig::deserialize(Value::Table(table.clone())) {
        Ok(c) => c,
        Err(e) => {
            // Value-level errors carry no spans; re-parse the text for a line
            // when no override could be responsible.
            let line = if overrides.is_empty() {
                toml::from_str::<ExperimentConfig>(src)
                    .err()
                    .and_then(|e| e.span())
                    .map(|s| line_of(src, s.start))
            } else {
                None
            };
            return Err(ConfigError::one(line, e.message().trim().to_string()));
        }
    };
    validate(&cfg, src)?;
    Ok(cfg)
}

fn line_of(src: &str, offset: usize) -> usize {
    src[..offset.min(src.len())].matches('\n').count() + 1
}

/// Line of `key = …` inside `[block]` (or at the top level).
fn find_key(src: &str, block: Option<&str>, key: &str) -> Option<usize> {
    let mut current: Option<String> = None;
    for (i, raw) in src.lines().enumerate() {
        let line = raw.trim();
        if line.starts_with('[') {
            current = Some(line.trim_matches(|c| c == '[' || c == ']').trim().to_string());
            if block.is_none() && current.as_deref() == Some(key) {
                return Some(i + 1);
            }
            continue;
        }
        if current.as_deref() != block {
            continue;
        }
        if let Some((k, _)) = line.split_once('=') {
            if k.trim().trim_matches('"') == key {
                return Some(i + 1);
            }
        }
    }
    None
}

fn nearest<'a>(key: &str, candidates: &[&'a str]) -> Option<&'a str> {
    candidates
        .iter()
        .map(|c| (strsim::levenshtein(key, c), *c))
        .filter(|(d, c)| *d <= 2.max(c.len() / 3))
        .min_by_key(|(d, _)| *d)
        .map(|(_, c)| c)
}

fn unknown_keys(src: &str, table: &Table) -> Vec<Issue> {
    let mut issues = Vec::new();
    let check = |block: &str, t: &Table, issues: &mut Vec<Issue>| {
        let known = SCHEMA.iter().find(|(b, _)| *b == block).map(|(_, k)| *k).unwrap_or(&[]);
        for key in t.keys() {
            if known.contains(&key.as_str()) {
                continue;
            }
            let place = if block.is_empty() {
                "at top level".to_string()
            } else {
                format!("in [{block}]")
            };
            let hint = nearest(key, known)
                .map(|n| format!("; did you mean `{n}`?"))
                .unwrap_or_default();
            issues.push(Issue {
                line: find_key(src, (!block.is_empty()).then_some(block), key),
                message: format!("unknown key `{key}` {place}{hint}"),
            });
        }
    };
    check("", table, &mut issues);
    for (block, _) in SCHEMA.iter().skip(1) {
        if let Some(Value::Table(t)) = table.get(*block) {
            check(block, t, &mut issues);
        }
    }
    issues
}

/// `a.b.c=value`; the value is read as a TOML literal, falling back to a
/// bare string.
fn apply_override(table: &mut Table, spec: &str) -> Result<(), ConfigError> {
    let (path, raw) = spec
        .split_once('=')
        .ok_or_else(|| ConfigError::one(None, format!("override `{spec}` is not of the form key=value")))?;
    let parts: Vec<&str> = path.trim().split('.').collect();
    if parts.iter().any(|p| p.is_empty()) {
        return Err(ConfigError::one(
            None,
            format!("override `{spec}` has an empty path segment"),
        ));
    }
    let value = format!("v = {}", raw.trim())
        .parse::<Table>()
        .ok()
        .and_then(|mut t| t.remove("v"))
        .unwrap_or_else(|| Value::String(raw.trim().to_string()));
    let mut t = table;
    for p in &parts[..parts.len() - 1] {
        let entry = t.entry(p.to_string()).or_insert_with(|| Value::Table(Table::new()));
        t = entry
            .as_table_mut()
            .ok_or_else(|| ConfigError::one(None, format!("override `{spec}`: `{p}` is not a table")))?;
    }
    t.insert(parts[parts.len() - 1].to_string(), value);
    Ok(())
}

fn validate(cfg: &ExperimentConfig, src: &str) -> Result<(), ConfigError> {
    let mut issues = Vec::new();
    let mut push = |block: Option<&str>, key: &str, message: String| {
        issues.push(Issue {
            line: find_key(src, block, key),
            message,
        });
    };
    let g = &cfg.grid;
    if g.half_widths.is_empty() || g.half_widths.len() != g.nodes.len() {
        push(
            Some("grid"),
            "nodes",
            "grid: `nodes` and `half_widths` must be nonempty and of equal length".into(),
        );
    }
    if cfg.kind.needs_problem() && cfg.problem.is_none() {
        push(
            None,
            "kind",
            format!("missing block [problem] required by kind `{}`", cfg.kind.name()),
        );
    }
    if cfg.kind == Kind::StabilitySweep {
        match &cfg.sweep {
            None => push(
                None,
                "kind",
                "missing block [sweep] required by kind `stability-sweep`".into(),
            ),
            Some(s) => {
                let missing: Vec<&str> = [("delta_grid", s.delta_grid.is_none()), ("seeds", s.seeds.is_none())]
                    .iter()
                    .filter(|(_, m)| *m)
                    .map(|(k, _)| *k)
                    .collect();
                if !missing.is_empty() {
                    push(
                        None,
                        "sweep",
                        format!("sweep block incomplete: missing {}", missing.join(", ")),
                    );
                }
            }
        }
    }
    if cfg.kind == Kind::VerifyIdentity && cfg.identity.resolutions.is_empty() {
        push(
            Some("identity"),
            "resolutions",
            "identity: `resolutions` must be nonempty".into(),
        );
    }
    if cfg.workers == Some(0) {
        push(None, "workers", "`workers` must be positive".into());
    }
    if issues.is_empty() {
        Ok(())
    } else {
        Err(ConfigError { issues })
    }
}

impl ExperimentConfig {
    /// The configuration with every default filled in, as TOML.
    pub fn resolved_toml(&self) -> String {
        toml::to_string_pretty(self).expect("config serializes")
    }
}
