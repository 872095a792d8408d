//! Run configuration: a JSON file, validated, with defaults filled and
//! command-line overrides applied.

use std::fmt;
use std::path::PathBuf;

use obstacle_control::builtins::{builtin, BUILTIN_NAMES};
use obstacle_control::control::{exponent_json, ControlOptions, DEFAULT_SCHEDULE};
use obstacle_control::grid::{BoundaryData, Exponent, Grid, GridFunction, ObstacleInstance};
use obstacle_control::obstacle::SolverOptions;
use serde::{Deserialize, Serialize};
use serde_json::json;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "kebab-case")]
pub enum Command {
    SolveObstacle,
    OptimalControl,
    Converge,
    OracleCheck,
}

impl fmt::Display for Command {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Self::SolveObstacle => "solve-obstacle",
            Self::OptimalControl => "optimal-control",
            Self::Converge => "converge",
            Self::OracleCheck => "oracle-check",
        })
    }
}

/// A validation failure located by a JSON pointer into the config.
#[derive(Debug, Clone, PartialEq)]
pub struct ConfigError {
    pub pointer: String,
    pub message: String,
}

impl ConfigError {
    fn at(pointer: impl Into<String>, message: impl Into<String>) -> Self {
        Self {
            pointer: pointer.into(),
            message: message.into(),
        }
    }
}

impl fmt::Display for ConfigError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let at = if self.pointer.is_empty() {
            "/"
        } else {
            &self.pointer
        };
        write!(f, "config {at}: {}", self.message)
    }
}

impl std::error::Error for ConfigError {}

/// A field given as one number for every node or as explicit values.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum Field {
    Constant(f64),
    Values(Vec<f64>),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GridSpec {
    pub nodes: Vec<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub extent: Option<Vec<f64>>,
}

/// Either a built-in name or inline data. Boundary values are listed in
/// boundary-node order: both ends in 1D, or the ring of a rectangle in
/// increasing node index.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct InstanceSpec {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub id: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub builtin: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub grid: Option<GridSpec>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub obstacle: Option<Field>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub boundary: Option<Field>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub profile: Option<Field>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(untagged)]
enum ExponentValue {
    Number(f64),
    Text(String),
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Tolerances {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub step: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub residual: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub certificate: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub optimality: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub oracle: Option<f64>,
    /// Sweep cap of each obstacle solve.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub max_iterations: Option<usize>,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawConfig {
    command: Option<Command>,
    instance: Option<InstanceSpec>,
    instances: Option<Vec<InstanceSpec>>,
    p: Option<ExponentValue>,
    p_schedule: Option<Vec<f64>>,
    #[serde(default)]
    tolerances: Tolerances,
    seed: Option<u64>,
    output_dir: Option<PathBuf>,
    optimality_samples: Option<usize>,
    oracle_samples: Option<usize>,
}

pub const DEFAULT_OUTPUT_DIR: &str = "obsctl-out";
pub const DEFAULT_ORACLE_TOLERANCE: f64 = 5e-4;
pub const DEFAULT_OPTIMALITY_SAMPLES: usize = 50;
pub const DEFAULT_ORACLE_SAMPLES: usize = 10;

/// A validated configuration with every default filled in.
#[derive(Debug, Clone)]
pub struct RunConfig {
    pub command: Command,
    /// Instances with their ids filled in. Only `converge` accepts more than one.
    pub instances: Vec<InstanceSpec>,
    pub exponent: Exponent,
    pub p_schedule: Vec<f64>,
    pub tolerances: Tolerances,
    pub seed: u64,
    pub output_dir: PathBuf,
    pub optimality_samples: usize,
    pub oracle_samples: usize,
}

fn pointer_of(path: &serde_path_to_error::Path) -> String {
    use serde_path_to_error::Segment;
    let mut out = String::new();
    for seg in path.iter() {
        match seg {
            Segment::Seq { index } => out.push_str(&format!("/{index}")),
            Segment::Map { key } => {
                out.push_str(&format!("/{}", key.replace('~', "~0").replace('/', "~1")))
            }
            Segment::Enum { variant } => out.push_str(&format!("/{variant}")),
            Segment::Unknown => {}
        }
    }
    out
}

fn check_exponent_value(v: &ExponentValue, pointer: &str) -> Result<Exponent, ConfigError> {
    let e = match v {
        ExponentValue::Number(p) => Exponent::finite(*p),
        ExponentValue::Text(s) => s.parse(),
    };
    e.map_err(|e| ConfigError::at(pointer, e.to_string()))
}

/// Parses `text`, checks it against `requested` (the command given on the
/// command line, if any) and fills in defaults.
pub fn parse_config(text: &str, requested: Option<Command>) -> Result<RunConfig, ConfigError> {
    let de = &mut serde_json::Deserializer::from_str(text);
    let raw: RawConfig = serde_path_to_error::deserialize(de).map_err(|e| {
        let pointer = pointer_of(e.path());
        ConfigError::at(pointer, e.into_inner().to_string())
    })?;

    let command = match (raw.command, requested) {
        (Some(a), Some(b)) if a != b => {
            return Err(ConfigError::at(
                "/command",
                format!("config is for {a} but {b} was requested"),
            ))
        }
        (Some(c), _) | (None, Some(c)) => c,
        (None, None) => return Err(ConfigError::at("/command", "no command given")),
    };

    let (mut instances, base) = match (raw.instance, raw.instances) {
        (Some(i), None) => (vec![i], "/instance".to_string()),
        (None, Some(list)) => (list, "/instances".to_string()),
        (Some(_), Some(_)) => {
            return Err(ConfigError::at(
                "/instances",
                "give either instance or instances, not both",
            ))
        }
        (None, None) => return Err(ConfigError::at("/instance", "missing instance")),
    };
    if instances.is_empty() {
        return Err(ConfigError::at("/instances", "empty instance list"));
    }
    if instances.len() > 1 && command != Command::Converge {
        return Err(ConfigError::at(
            "/instances",
            format!("{command} takes a single instance"),
        ));
    }
    let single = base == "/instance";
    for (i, spec) in instances.iter_mut().enumerate() {
        let pointer = if single {
            base.clone()
        } else {
            format!("{base}/{i}")
        };
        validate_instance(spec, &pointer)?;
        if spec.id.is_none() {
            spec.id = Some(
                spec.builtin
                    .clone()
                    .unwrap_or_else(|| format!("instance-{i}")),
            );
        }
    }
    let mut ids: Vec<&str> = instances.iter().filter_map(|s| s.id.as_deref()).collect();
    ids.sort_unstable();
    if ids.windows(2).any(|w| w[0] == w[1]) {
        return Err(ConfigError::at(base, "instance ids must be distinct"));
    }

    let exponent = match &raw.p {
        Some(v) => check_exponent_value(v, "/p")?,
        None => Exponent::Finite(2.0),
    };
    let p_schedule = raw.p_schedule.unwrap_or_else(|| DEFAULT_SCHEDULE.to_vec());
    check_schedule(&p_schedule)?;

    let t = &raw.tolerances;
    if t.max_iterations == Some(0) {
        return Err(ConfigError::at(
            "/tolerances/max_iterations",
            "must be positive",
        ));
    }
    for (name, v) in [
        ("step", t.step),
        ("residual", t.residual),
        ("certificate", t.certificate),
        ("optimality", t.optimality),
        ("oracle", t.oracle),
    ] {
        if let Some(v) = v {
            if !(v.is_finite() && v > 0.0) {
                return Err(ConfigError::at(
                    format!("/tolerances/{name}"),
                    format!("must be positive, got {v}"),
                ));
            }
        }
    }

    Ok(RunConfig {
        command,
        instances,
        exponent,
        p_schedule,
        tolerances: raw.tolerances,
        seed: raw.seed.unwrap_or(0),
        output_dir: raw
            .output_dir
            .unwrap_or_else(|| PathBuf::from(DEFAULT_OUTPUT_DIR)),
        optimality_samples: raw.optimality_samples.unwrap_or(DEFAULT_OPTIMALITY_SAMPLES),
        oracle_samples: raw.oracle_samples.unwrap_or(DEFAULT_ORACLE_SAMPLES),
    })
}

fn check_schedule(s: &[f64]) -> Result<(), ConfigError> {
    if s.is_empty() {
        return Err(ConfigError::at("/p_schedule", "empty schedule"));
    }
    for (i, &p) in s.iter().enumerate() {
        if !(p.is_finite() && p > 1.0) {
            return Err(ConfigError::at(
                format!("/p_schedule/{i}"),
                format!("exponent must satisfy 1 < p < inf, got {p}"),
            ));
        }
        if i > 0 && p <= s[i - 1] {
            return Err(ConfigError::at(
                format!("/p_schedule/{i}"),
                "schedule must be increasing",
            ));
        }
    }
    Ok(())
}

fn validate_instance(spec: &InstanceSpec, pointer: &str) -> Result<(), ConfigError> {
    if let Some(name) = &spec.builtin {
        if !BUILTIN_NAMES.contains(&name.as_str()) {
            return Err(ConfigError::at(
                format!("{pointer}/builtin"),
                format!(
                    "unknown built-in {name:?}; known: {}",
                    BUILTIN_NAMES.join(", ")
                ),
            ));
        }
        for (field, present) in [
            ("grid", spec.grid.is_some()),
            ("obstacle", spec.obstacle.is_some()),
            ("boundary", spec.boundary.is_some()),
            ("profile", spec.profile.is_some()),
        ] {
            if present {
                return Err(ConfigError::at(
                    format!("{pointer}/{field}"),
                    "not allowed together with builtin",
                ));
            }
        }
        return Ok(());
    }
    let grid = inline_grid(spec, pointer)?;
    let n = grid.node_count();
    let nb = grid.boundary_nodes().len();
    for (field, value, expected) in [
        ("obstacle", &spec.obstacle, n),
        ("profile", &spec.profile, n),
        ("boundary", &spec.boundary, nb),
    ] {
        if let Some(v) = value {
            check_field(v, expected, &format!("{pointer}/{field}"))?;
        }
    }
    Ok(())
}

fn inline_grid(spec: &InstanceSpec, pointer: &str) -> Result<Grid, ConfigError> {
    let g = spec.grid.as_ref().ok_or_else(|| {
        ConfigError::at(
            format!("{pointer}/grid"),
            "inline instances need a grid (or use builtin)",
        )
    })?;
    let d = g.nodes.len();
    let extent = g.extent.clone().unwrap_or_else(|| vec![1.0; d]);
    Grid::new(d, &g.nodes, &extent)
        .map_err(|e| ConfigError::at(format!("{pointer}/grid"), e.to_string()))
}

fn check_field(f: &Field, expected: usize, pointer: &str) -> Result<(), ConfigError> {
    let bad = match f {
        Field::Constant(v) => !v.is_finite(),
        Field::Values(vs) => {
            if vs.len() != expected {
                return Err(ConfigError::at(
                    pointer,
                    format!("expected {expected} values, got {}", vs.len()),
                ));
            }
            vs.iter().any(|v| !v.is_finite())
        }
    };
    if bad {
        return Err(ConfigError::at(pointer, "values must be finite"));
    }
    Ok(())
}

fn expand(f: &Field, len: usize) -> Vec<f64> {
    match f {
        Field::Constant(v) => vec![*v; len],
        Field::Values(vs) => vs.clone(),
    }
}

impl InstanceSpec {
    pub fn id(&self) -> &str {
        self.id.as_deref().unwrap_or("instance")
    }

    /// Builds the instance. Feasibility is checked here, not at parse time.
    ///
    /// Inline boundary data defaults to 0 and the obstacle to the smallest
    /// boundary value, which is feasible.
    pub fn build(&self, exponent: Exponent) -> obstacle_control::Result<ObstacleInstance> {
        if let Some(name) = &self.builtin {
            return Ok(builtin(name)?.with_exponent(exponent));
        }
        let grid =
            inline_grid(self, "").map_err(|e| obstacle_control::Error::InvalidValue(e.message))?;
        let nb = grid.boundary_nodes().len();
        let boundary = BoundaryData::new(
            grid,
            expand(self.boundary.as_ref().unwrap_or(&Field::Constant(0.0)), nb),
        )?;
        let floor = boundary
            .values()
            .iter()
            .copied()
            .fold(f64::INFINITY, f64::min);
        let obstacle = match &self.obstacle {
            Some(f) => GridFunction::new(grid, expand(f, grid.node_count()))?,
            None => GridFunction::constant(grid, floor),
        };
        let profile = match &self.profile {
            Some(f) => Some(GridFunction::new(grid, expand(f, grid.node_count()))?),
            None => None,
        };
        ObstacleInstance::new(obstacle, boundary, profile, exponent)
    }
}

impl RunConfig {
    /// Applies the scalar command-line overrides.
    pub fn apply_overrides(
        &mut self,
        p: Option<&str>,
        out: Option<PathBuf>,
        seed: Option<u64>,
    ) -> Result<(), ConfigError> {
        if let Some(p) = p {
            self.exponent = p
                .parse()
                .map_err(|e: obstacle_control::Error| ConfigError::at("--p", e.to_string()))?;
        }
        if let Some(out) = out {
            self.output_dir = out;
        }
        if let Some(seed) = seed {
            self.seed = seed;
        }
        Ok(())
    }

    pub fn solver_options(&self) -> SolverOptions {
        let mut o = SolverOptions::default();
        if let Some(v) = self.tolerances.step {
            o.step_tolerance = v;
        }
        if let Some(v) = self.tolerances.residual {
            o.residual_tolerance = v;
        }
        o.max_iterations = self.tolerances.max_iterations;
        o
    }

    pub fn control_options(&self) -> ControlOptions {
        let mut o = ControlOptions {
            obstacle: self.solver_options(),
            ..ControlOptions::default()
        };
        if let Some(v) = self.tolerances.certificate {
            o.certificate_tolerance = v;
        }
        if let Some(v) = self.tolerances.optimality {
            o.optimality_tolerance = v;
        }
        o
    }

    pub fn oracle_tolerance(&self) -> f64 {
        self.tolerances.oracle.unwrap_or(DEFAULT_ORACLE_TOLERANCE)
    }

    /// The effective configuration, as echoed into the manifest.
    pub fn echo(&self) -> serde_json::Value {
        let solver = self.solver_options();
        let control = self.control_options();
        json!({
            "command": self.command,
            "instances": self.instances,
            "p": exponent_json(self.exponent),
            "p_schedule": self.p_schedule,
            "tolerances": {
                "step": solver.step_tolerance,
                "residual": solver.residual_tolerance,
                "certificate": control.certificate_tolerance,
                "optimality": control.optimality_tolerance,
                "oracle": self.oracle_tolerance(),
                "max_iterations": solver.max_iterations,
            },
            "seed": self.seed,
            "output_dir": self.output_dir,
            "optimality_samples": self.optimality_samples,
            "oracle_samples": self.oracle_samples,
        })
    }
}
