//! Run-configuration ingestion: TOML documents, dotted-path overrides,
//! and validation.
//!
//! A configuration document has up to five sections — `[system]`,
//! `[problem]`, `[data]`, `[numerics]`, `[output]` — all of which can
//! also be filled or overridden from the command line with repeated
//! `--set key=value` flags (flag over file).  Unknown keys anywhere are
//! rejected.  Syntax problems surface as [`ConfigError::Parse`] with a
//! line and column; semantic problems surface as
//! [`ConfigError::Validation`] naming the offending key.

use std::fmt;
use std::path::{Path, PathBuf};

use brk_core::params::Numerics;
use brk_core::system::{registry, HyperbolicSystem};
use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Configuration failures, split by phase.
#[derive(Debug, Error)]
pub enum ConfigError {
    /// The document is not well-formed TOML.
    #[error("parse error at line {line}, column {column}: {message}")]
    Parse { line: usize, column: usize, message: String },
    /// The document is well-formed but names an unknown or invalid key.
    #[error("{0}")]
    Validation(String),
    /// The configuration file could not be read.
    #[error("cannot read {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

fn invalid(msg: impl Into<String>) -> ConfigError {
    ConfigError::Validation(msg.into())
}

/// The problem kinds the driver can dispatch, one subcommand each.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ProblemKind {
    Riemann,
    BoundaryRiemann,
    ClassicalSim,
    SelfsimilarSim,
    CompareLimits,
    BDependence,
    Validate,
    Suite,
}

impl fmt::Display for ProblemKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let s = match self {
            ProblemKind::Riemann => "riemann",
            ProblemKind::BoundaryRiemann => "boundary-riemann",
            ProblemKind::ClassicalSim => "classical-sim",
            ProblemKind::SelfsimilarSim => "selfsimilar-sim",
            ProblemKind::CompareLimits => "compare-limits",
            ProblemKind::BDependence => "b-dependence",
            ProblemKind::Validate => "validate",
            ProblemKind::Suite => "suite",
        };
        f.write_str(s)
    }
}

/// A state vector that may be written as a bare number (`u_minus = 1.0`)
/// or as an array (`u_minus = [1.0, 2.0]`).
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(untagged)]
pub enum StateInput {
    Scalar(f64),
    Vector(Vec<f64>),
}

impl StateInput {
    fn to_dvector(&self) -> DVector<f64> {
        match self {
            StateInput::Scalar(v) => DVector::from_element(1, *v),
            StateInput::Vector(v) => DVector::from_column_slice(v),
        }
    }
}

/// `[system]`: a registry name plus its inline parameters.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SystemConfig {
    /// One of `burgers`, `cubic`, `linear2`, `p-system`.
    pub name: String,
    /// Flux matrix rows; `linear2` only.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub matrix: Option<Vec<Vec<f64>>>,
    /// Pressure coefficient; `p-system` only.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub k_p: Option<f64>,
    /// Adiabatic exponent; `p-system` only.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub gamma: Option<f64>,
    /// Velocity shift; `p-system` only.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub shift: Option<f64>,
    /// Constant viscosity matrix rows replacing the identity.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub viscosity: Option<Vec<Vec<f64>>>,
}

/// `[problem]`: what to run and its scalar parameters.
#[derive(Debug, Clone, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ProblemConfig {
    /// Filled from the subcommand; a value in the file is overridden.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub kind: Option<ProblemKind>,
    /// Viscosity scale for simulations and the B-dependence experiment.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub epsilon: Option<f64>,
    /// Strictly decreasing viscosity sweep for `compare-limits`.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub eps_list: Option<Vec<f64>>,
    /// First viscosity matrix for `b-dependence`.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub viscosity_1: Option<Vec<Vec<f64>>>,
    /// Second viscosity matrix for `b-dependence`.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub viscosity_2: Option<Vec<Vec<f64>>>,
}

/// `[data]`: constant states.  Classical Riemann problems use
/// `u_minus`/`u_plus`; quarter-plane problems use `u_0`/`u_d`.
#[derive(Debug, Clone, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DataConfig {
    #[serde(skip_serializing_if = "Option::is_none")]
    pub u_minus: Option<StateInput>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub u_plus: Option<StateInput>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub u_0: Option<StateInput>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub u_d: Option<StateInput>,
}

/// `[output]`: artifact destination and formats.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OutputConfig {
    /// Artifact directory.  Defaults to `$BRK_OUTPUT_DIR`, then `.`.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub dir: Option<PathBuf>,
    /// Artifact kinds to write; `csv`, `json`, or both.
    #[serde(default = "default_formats")]
    pub formats: Vec<String>,
}

fn default_formats() -> Vec<String> {
    vec!["csv".into(), "json".into()]
}

impl Default for OutputConfig {
    fn default() -> Self {
        Self { dir: None, formats: default_formats() }
    }
}

/// A fully parsed run configuration (defaults not yet resolved).
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    /// Required for every problem kind except `suite`.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub system: Option<SystemConfig>,
    #[serde(default)]
    pub problem: ProblemConfig,
    #[serde(default)]
    pub data: DataConfig,
    #[serde(default)]
    pub numerics: Numerics,
    #[serde(default)]
    pub output: OutputConfig,
}

impl RunConfig {
    /// Parses a document, applies `--set` overrides, forces the problem
    /// kind from the subcommand, and validates.
    pub fn load(
        path: Option<&Path>,
        sets: &[String],
        kind: ProblemKind,
    ) -> Result<Self, ConfigError> {
        let text = match path {
            Some(p) => std::fs::read_to_string(p)
                .map_err(|e| ConfigError::Io { path: p.to_path_buf(), source: e })?,
            None => String::new(),
        };
        let mut config = Self::parse(&text, sets)?;
        config.problem.kind = Some(kind);
        config.validate()?;
        Ok(config)
    }

    /// Parses configuration text and applies the overrides; exposed
    /// separately so tests can feed documents directly.
    pub fn parse(text: &str, sets: &[String]) -> Result<Self, ConfigError> {
        let mut root: toml::Table = text.parse().map_err(|e: toml::de::Error| {
            let (line, column) = position_of(text, e.span().map(|s| s.start).unwrap_or(0));
            ConfigError::Parse { line, column, message: e.message().to_string() }
        })?;
        for entry in sets {
            apply_set(&mut root, entry)?;
        }
        RunConfig::deserialize(toml::Value::Table(root))
            .map_err(|e| invalid(e.message().to_string()))
    }

    /// Semantic checks: tolerances positive, matrices well-shaped, data
    /// dimensions matching the system, per-kind required keys present.
    pub fn validate(&self) -> Result<(), ConfigError> {
        self.validate_numerics()?;
        let kind = self
            .problem
            .kind
            .ok_or_else(|| invalid("problem.kind is required"))?;
        if kind == ProblemKind::Suite {
            return Ok(());
        }
        let sys = self.build_system()?;
        self.validate_problem(kind)?;
        self.validate_data(kind, &sys)?;
        for f in &self.output.formats {
            if f != "csv" && f != "json" {
                return Err(invalid(format!(
                    "output.formats entry {f:?} must be \"csv\" or \"json\""
                )));
            }
        }
        Ok(())
    }

    /// Every float knob in `[numerics]` must be positive and finite and
    /// every iteration or grid count at least one.
    fn validate_numerics(&self) -> Result<(), ConfigError> {
        let table = toml::Value::try_from(&self.numerics)
            .map_err(|e| invalid(format!("numerics are not serialisable: {e}")))?;
        let table = table.as_table().expect("numerics serialise to a table");
        for (key, value) in table {
            match value {
                toml::Value::Float(v) => {
                    if !(*v > 0.0) || !v.is_finite() {
                        return Err(invalid(format!("numerics.{key} must be > 0")));
                    }
                }
                toml::Value::Integer(v) => {
                    if key != "seed" && *v < 1 {
                        return Err(invalid(format!("numerics.{key} must be >= 1")));
                    }
                }
                _ => {}
            }
        }
        Ok(())
    }

    fn validate_problem(&self, kind: ProblemKind) -> Result<(), ConfigError> {
        let p = &self.problem;
        match kind {
            ProblemKind::ClassicalSim | ProblemKind::SelfsimilarSim => {
                let eps = p
                    .epsilon
                    .ok_or_else(|| invalid(format!("problem.epsilon is required for {kind}")))?;
                if !(eps > 0.0) || !eps.is_finite() {
                    return Err(invalid("problem.epsilon must be > 0"));
                }
            }
            ProblemKind::CompareLimits => {
                let list = p.eps_list.as_ref().ok_or_else(|| {
                    invalid("problem.eps_list is required for compare-limits")
                })?;
                if list.is_empty() || list.iter().any(|&e| !(e > 0.0)) {
                    return Err(invalid("problem.eps_list entries must be > 0"));
                }
                if list.windows(2).any(|w| w[1] >= w[0]) {
                    return Err(invalid("problem.eps_list must be strictly decreasing"));
                }
            }
            ProblemKind::BDependence => {
                let eps = p
                    .epsilon
                    .ok_or_else(|| invalid("problem.epsilon is required for b-dependence"))?;
                if !(eps > 0.0) || !eps.is_finite() {
                    return Err(invalid("problem.epsilon must be > 0"));
                }
                for (key, m) in [
                    ("problem.viscosity_1", &p.viscosity_1),
                    ("problem.viscosity_2", &p.viscosity_2),
                ] {
                    let rows = m
                        .as_ref()
                        .ok_or_else(|| invalid(format!("{key} is required for b-dependence")))?;
                    matrix_from_rows(rows, key)?;
                }
            }
            _ => {}
        }
        Ok(())
    }

    fn validate_data(&self, kind: ProblemKind, sys: &HyperbolicSystem) -> Result<(), ConfigError> {
        let pairs: &[(&str, &Option<StateInput>)] = match kind {
            ProblemKind::Riemann => {
                &[("data.u_minus", &self.data.u_minus), ("data.u_plus", &self.data.u_plus)]
            }
            ProblemKind::Suite => &[],
            _ => &[("data.u_0", &self.data.u_0), ("data.u_d", &self.data.u_d)],
        };
        for (key, value) in pairs {
            let state = value
                .as_ref()
                .ok_or_else(|| invalid(format!("{key} is required for the {kind} problem")))?;
            let v = state.to_dvector();
            if v.len() != sys.n() {
                return Err(invalid(format!(
                    "{key} has dimension {} but system {} has n = {}",
                    v.len(),
                    sys.name(),
                    sys.n()
                )));
            }
            if v.iter().any(|x| !x.is_finite()) {
                return Err(invalid(format!("{key} must be finite")));
            }
        }
        Ok(())
    }

    /// Instantiates the configured system, viscosity override included.
    pub fn build_system(&self) -> Result<HyperbolicSystem, ConfigError> {
        let sc = self
            .system
            .as_ref()
            .ok_or_else(|| invalid("system.name is required for this problem"))?;
        let only = |key: &str, present: bool, owner: &str| -> Result<(), ConfigError> {
            if present {
                Err(invalid(format!("system.{key} only applies to {owner}")))
            } else {
                Ok(())
            }
        };
        let sys = match sc.name.as_str() {
            "burgers" | "cubic" => {
                only("matrix", sc.matrix.is_some(), "linear2")?;
                only("k_p", sc.k_p.is_some(), "p-system")?;
                only("gamma", sc.gamma.is_some(), "p-system")?;
                only("shift", sc.shift.is_some(), "p-system")?;
                if sc.name == "burgers" {
                    registry::burgers()
                } else {
                    registry::cubic()
                }
            }
            "linear2" => {
                only("k_p", sc.k_p.is_some(), "p-system")?;
                only("gamma", sc.gamma.is_some(), "p-system")?;
                only("shift", sc.shift.is_some(), "p-system")?;
                let rows = sc
                    .matrix
                    .as_ref()
                    .ok_or_else(|| invalid("system.matrix is required for linear2"))?;
                let a = matrix_from_rows(rows, "system.matrix")?;
                registry::linear2(a).map_err(|e| invalid(format!("system.matrix: {e}")))?
            }
            "p-system" => {
                only("matrix", sc.matrix.is_some(), "linear2")?;
                registry::p_system(
                    sc.k_p.unwrap_or(1.0),
                    sc.gamma.unwrap_or(2.0),
                    sc.shift.unwrap_or(0.0),
                )
                .map_err(|e| invalid(format!("system parameters: {e}")))?
            }
            other => {
                return Err(invalid(format!(
                    "system.name {other:?} is not one of burgers, cubic, linear2, p-system"
                )))
            }
        };
        match &sc.viscosity {
            None => Ok(sys),
            Some(rows) => {
                let b = matrix_from_rows(rows, "system.viscosity")?;
                if b.nrows() != sys.n() {
                    return Err(invalid(format!(
                        "system.viscosity must be {n}x{n} for {}",
                        sys.name(),
                        n = sys.n()
                    )));
                }
                let name = format!("{}+b", sys.name());
                Ok(sys.with_viscosity(&name, move |_| b.clone()))
            }
        }
    }

    /// The states a runner needs, already validated for presence and
    /// dimension.
    pub fn state(&self, key: &str) -> DVector<f64> {
        let v = match key {
            "u_minus" => &self.data.u_minus,
            "u_plus" => &self.data.u_plus,
            "u_0" => &self.data.u_0,
            "u_d" => &self.data.u_d,
            _ => unreachable!("unknown state key {key}"),
        };
        v.as_ref().expect("state presence was validated").to_dvector()
    }

    /// Output directory: configured value, else `$BRK_OUTPUT_DIR`, else
    /// the working directory.
    pub fn output_dir(&self) -> PathBuf {
        if let Some(dir) = &self.output.dir {
            return dir.clone();
        }
        if let Some(root) = std::env::var_os("BRK_OUTPUT_DIR") {
            return PathBuf::from(root);
        }
        PathBuf::from(".")
    }

    pub fn wants(&self, format: &str) -> bool {
        self.output.formats.iter().any(|f| f == format)
    }

    /// The resolved document echoed next to the results.
    pub fn to_toml(&self) -> String {
        toml::to_string_pretty(self).expect("a validated config serialises")
    }
}

/// Builds a dense matrix from row vectors, checking rectangularity.
pub fn matrix_from_rows(rows: &[Vec<f64>], key: &str) -> Result<DMatrix<f64>, ConfigError> {
    let n = rows.len();
    if n == 0 || rows.iter().any(|r| r.len() != n) {
        return Err(invalid(format!("{key} must be a square row-major matrix")));
    }
    if rows.iter().flatten().any(|v| !v.is_finite()) {
        return Err(invalid(format!("{key} entries must be finite")));
    }
    Ok(DMatrix::from_fn(n, n, |i, j| rows[i][j]))
}

/// 1-based line and column of a byte offset.
fn position_of(text: &str, offset: usize) -> (usize, usize) {
    let clamped = offset.min(text.len());
    let upto = &text[..clamped];
    let line = upto.matches('\n').count() + 1;
    let column = clamped - upto.rfind('\n').map_or(0, |p| p + 1) + 1;
    (line, column)
}

/// Applies one `key.path=value` override onto the document table.
fn apply_set(root: &mut toml::Table, entry: &str) -> Result<(), ConfigError> {
    let (key, raw) = entry
        .split_once('=')
        .ok_or_else(|| invalid(format!("--set {entry:?} is not of the form key=value")))?;
    let key = key.trim();
    if key.is_empty() {
        return Err(invalid("--set key must not be empty"));
    }
    let value = parse_set_value(raw.trim())?;
    let segments: Vec<&str> = key.split('.').collect();
    let mut table = root;
    for seg in &segments[..segments.len() - 1] {
        let slot = table
            .entry(seg.to_string())
            .or_insert_with(|| toml::Value::Table(toml::Table::new()));
        table = slot.as_table_mut().ok_or_else(|| {
            invalid(format!("--set {key}: {seg} is not a table in the document"))
        })?;
    }
    table.insert(segments[segments.len() - 1].to_string(), value);
    Ok(())
}

/// Parses the right-hand side of a `--set` as a TOML value; bare words
/// that do not parse (e.g. `burgers`) fall back to strings.
fn parse_set_value(raw: &str) -> Result<toml::Value, ConfigError> {
    let wrapped = format!("v = {raw}");
    if let Ok(table) = wrapped.parse::<toml::Table>() {
        return Ok(table["v"].clone());
    }
    if raw.contains(['=', '[', ']', '{', '}', '"']) {
        return Err(invalid(format!("--set value {raw:?} is not a TOML value")));
    }
    Ok(toml::Value::String(raw.to_string()))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn minimal_riemann_config_fills_defaults() {
        let text = "[system]\nname = \"burgers\"\n[data]\nu_minus = 1.0\nu_plus = -1.0\n";
        let mut cfg = RunConfig::parse(text, &[]).unwrap();
        cfg.problem.kind = Some(ProblemKind::Riemann);
        cfg.validate().unwrap();
        assert_eq!(cfg.state("u_minus"), DVector::from_element(1, 1.0));
        assert_eq!(cfg.numerics.tol_rh, Numerics::default().tol_rh);
        assert!(cfg.wants("csv") && cfg.wants("json"));
    }

    #[test]
    fn unknown_keys_are_rejected() {
        let text = "[system]\nname = \"burgers\"\nwhatever = 1\n";
        let err = RunConfig::parse(text, &[]).unwrap_err();
        assert!(err.to_string().contains("whatever"), "{err}");
    }

    #[test]
    fn negative_tolerance_names_the_key() {
        let text = "[system]\nname = \"burgers\"\n[data]\nu_minus = 1.0\nu_plus = -1.0\n";
        let mut cfg =
            RunConfig::parse(text, &["numerics.tol_rh=-1e-10".into()]).unwrap();
        cfg.problem.kind = Some(ProblemKind::Riemann);
        let err = cfg.validate().unwrap_err();
        assert_eq!(err.to_string(), "numerics.tol_rh must be > 0");
    }

    #[test]
    fn dimension_mismatch_names_system_and_sizes() {
        let text = "[system]\nname = \"burgers\"\n[data]\nu_minus = [1.0, 2.0]\nu_plus = -1.0\n";
        let mut cfg = RunConfig::parse(text, &[]).unwrap();
        cfg.problem.kind = Some(ProblemKind::Riemann);
        let err = cfg.validate().unwrap_err();
        let msg = err.to_string();
        assert!(msg.contains("data.u_minus") && msg.contains("n = 1"), "{msg}");
    }

    #[test]
    fn parse_errors_carry_line_and_column() {
        let err = RunConfig::parse("[system\nname = \"burgers\"\n", &[]).unwrap_err();
        match err {
            ConfigError::Parse { line, .. } => assert_eq!(line, 1),
            other => panic!("expected a parse error, got {other}"),
        }
    }

    #[test]
    fn set_overrides_win_over_the_file() {
        let text = "[system]\nname = \"burgers\"\n[numerics]\ntol_rh = 1e-9\n";
        let cfg = RunConfig::parse(text, &["numerics.tol_rh=1e-12".into()]).unwrap();
        assert_eq!(cfg.numerics.tol_rh, 1e-12);
    }

    #[test]
    fn set_accepts_arrays_and_bare_strings() {
        let cfg = RunConfig::parse(
            "",
            &[
                "system.name=burgers".into(),
                "data.u_minus=[1.0]".into(),
                "data.u_plus=[-1.0]".into(),
            ],
        )
        .unwrap();
        assert_eq!(cfg.system.as_ref().unwrap().name, "burgers");
        assert_eq!(cfg.state("u_plus"), DVector::from_element(1, -1.0));
    }

    #[test]
    fn eps_list_must_decrease() {
        let mut cfg = RunConfig::parse(
            "",
            &[
                "system.name=burgers".into(),
                "data.u_0=0.1".into(),
                "data.u_d=0.2".into(),
                "problem.eps_list=[0.04, 0.08]".into(),
            ],
        )
        .unwrap();
        cfg.problem.kind = Some(ProblemKind::CompareLimits);
        let err = cfg.validate().unwrap_err();
        assert!(err.to_string().contains("eps_list"), "{err}");
    }

    #[test]
    fn stray_inline_parameters_are_named() {
        let text = "[system]\nname = \"burgers\"\nk_p = 2.0\n[data]\nu_minus = 1.0\nu_plus = -1.0\n";
        let mut cfg = RunConfig::parse(text, &[]).unwrap();
        cfg.problem.kind = Some(ProblemKind::Riemann);
        let err = cfg.validate().unwrap_err();
        assert!(err.to_string().contains("system.k_p"), "{err}");
    }

    #[test]
    fn effective_echo_round_trips() {
        let text = "[system]\nname = \"p-system\"\n[data]\nu_0 = [1.0, 0.2]\nu_d = [1.0, 0.21]\n";
        let mut cfg = RunConfig::parse(text, &[]).unwrap();
        cfg.problem.kind = Some(ProblemKind::BoundaryRiemann);
        cfg.validate().unwrap();
        let echoed = cfg.to_toml();
        let back = RunConfig::parse(&echoed, &[]).unwrap();
        back.validate().unwrap();
        assert_eq!(back.numerics.seed, cfg.numerics.seed);
    }
}
