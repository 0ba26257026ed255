//! TOML run configuration.
//!
//! ```toml
//! name = "example1"
//!
//! [geometry]
//! kind = "rectangle"
//! mode = "cartesian"
//! x_min = 0.0
//! x_max = 1.0
//! z_min = 0.0
//! z_max = 1.0
//! nx = 16
//! nz = 16
//! z_lines = [0.25]
//!
//! [soil.0]
//! preset = "example"
//!
//! [boundary]
//! water_table = 0.8
//!
//! [[boundary.segments]]
//! side = "left"
//! to = 0.25
//! condition = { type = "head", head = 0.25 }
//!
//! [goal]
//! kind = "seepage_flux"
//! ```

use std::collections::BTreeMap;
use std::fmt;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::constitutive::{Layer, SoilModel, DEFAULT_THETA_R, DEFAULT_THETA_S};
use crate::driver::AdaptiveConfig;
use crate::fem::{CoordMode, SourceTerm};
use crate::geometry::{BoundarySegment, Geometry, Rectangle, SlopingSlab};
use crate::problem::{GoalSpec, ProblemConfig};
use crate::solver::SolverConfig;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct OutputConfig {
    /// Write a VTK file per cycle.
    pub vtk: bool,
    /// Write the Picard iteration log per cycle.
    pub iteration_log: bool,
}

impl Default for OutputConfig {
    fn default() -> Self {
        OutputConfig { vtk: false, iteration_log: true }
    }
}

/// Everything a run needs.
#[derive(Clone, Debug, PartialEq)]
pub struct RunConfig {
    pub problem: ProblemConfig,
    pub solver: SolverConfig,
    pub adaptivity: AdaptiveConfig,
    pub output: OutputConfig,
}

impl RunConfig {
    pub fn with_defaults(problem: ProblemConfig) -> RunConfig {
        RunConfig {
            problem,
            solver: SolverConfig::default(),
            adaptivity: AdaptiveConfig::default(),
            output: OutputConfig::default(),
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub enum ConfigError {
    /// Malformed TOML or a value of the wrong shape.
    Syntax { line: usize, column: usize, message: String },
    /// Well-formed but invalid; `path` names the offending field.
    Invalid { path: String, message: String },
    Io(String),
}

impl fmt::Display for ConfigError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            ConfigError::Syntax { line, column, message } => {
                write!(f, "line {line}, column {column}: {}", message.trim_end())
            }
            ConfigError::Invalid { path, message } => write!(f, "{path}: {message}"),
            ConfigError::Io(m) => f.write_str(m),
        }
    }
}

impl std::error::Error for ConfigError {}

fn invalid(path: impl Into<String>, message: impl Into<String>) -> ConfigError {
    ConfigError::Invalid { path: path.into(), message: message.into() }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
enum GeometryKind {
    Rectangle,
    SlopingSlab,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct GeometrySection {
    kind: Option<GeometryKind>,
    #[serde(default)]
    mode: CoordMode,
    #[serde(skip_serializing_if = "Option::is_none")]
    x_min: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    x_max: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    z_min: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    z_max: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    nx: Option<usize>,
    #[serde(skip_serializing_if = "Option::is_none")]
    nz: Option<usize>,
    #[serde(skip_serializing_if = "Option::is_none")]
    x_lines: Option<Vec<f64>>,
    #[serde(skip_serializing_if = "Option::is_none")]
    z_lines: Option<Vec<f64>>,
    #[serde(skip_serializing_if = "Option::is_none")]
    length: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    thickness: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    bed_left: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    slope: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    slab_start: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    slab_bottom: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    slab_top: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    nx_upstream: Option<usize>,
    #[serde(skip_serializing_if = "Option::is_none")]
    nx_downstream: Option<usize>,
    #[serde(skip_serializing_if = "Option::is_none")]
    nt_below: Option<usize>,
    #[serde(skip_serializing_if = "Option::is_none")]
    nt_slab: Option<usize>,
    #[serde(skip_serializing_if = "Option::is_none")]
    nt_above: Option<usize>,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct SoilSection {
    #[serde(skip_serializing_if = "Option::is_none")]
    preset: Option<String>,
    #[serde(skip_serializing_if = "Option::is_none")]
    ks: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    alpha: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    n: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    theta_r: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    theta_s: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    porosity: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    z_low: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    z_high: Option<f64>,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct BoundarySection {
    #[serde(skip_serializing_if = "Option::is_none")]
    water_table: Option<f64>,
    #[serde(default)]
    segments: Vec<BoundarySegment>,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct ConfigFile {
    #[serde(skip_serializing_if = "Option::is_none")]
    name: Option<String>,
    geometry: Option<GeometrySection>,
    #[serde(default)]
    soil: BTreeMap<String, SoilSection>,
    boundary: Option<BoundarySection>,
    #[serde(default)]
    source: SourceTerm,
    goal: Option<GoalSpec>,
    #[serde(default)]
    solver: SolverConfig,
    #[serde(default)]
    adaptivity: AdaptiveConfig,
    #[serde(default)]
    output: OutputConfig,
}

fn line_col(text: &str, offset: usize) -> (usize, usize) {
    let offset = offset.min(text.len());
    let before = &text.as_bytes()[..offset];
    let line = before.iter().filter(|&&b| b == b'\n').count() + 1;
    let col = before.iter().rev().take_while(|&&b| b != b'\n').count() + 1;
    (line, col)
}

/// Parse and validate a configuration.
pub fn parse_config(text: &str) -> Result<RunConfig, ConfigError> {
    let file: ConfigFile = toml::from_str(text).map_err(|e| {
        let (line, column) = e.span().map_or((1, 1), |s| line_col(text, s.start));
        ConfigError::Syntax { line, column, message: e.message().to_string() }
    })?;
    convert(file)
}

/// Parse raw bytes (UTF-8 required).
pub fn parse_config_bytes(data: &[u8]) -> Result<RunConfig, ConfigError> {
    let text = std::str::from_utf8(data).map_err(|e| {
        let (line, column) = line_col(&String::from_utf8_lossy(&data[..e.valid_up_to()]), e.valid_up_to());
        ConfigError::Syntax { line, column, message: "invalid UTF-8".into() }
    })?;
    parse_config(text)
}

pub fn load_config(path: &Path) -> Result<RunConfig, ConfigError> {
    let text = std::fs::read_to_string(path)
        .map_err(|e| ConfigError::Io(format!("cannot read {}: {e}", path.display())))?;
    parse_config(&text)
}

fn need<T>(v: Option<T>, path: &str) -> Result<T, ConfigError> {
    v.ok_or_else(|| invalid(path, "missing required field"))
}

fn convert(file: ConfigFile) -> Result<RunConfig, ConfigError> {
    let g = need(file.geometry, "geometry")?;
    let kind = need(g.kind, "geometry.kind")?;
    let rect_fields = [g.x_min.is_some(), g.x_max.is_some(), g.z_min.is_some(), g.z_max.is_some(), g.nx.is_some(), g.nz.is_some(), g.x_lines.is_some(), g.z_lines.is_some()];
    let slab_fields = [g.length.is_some(), g.thickness.is_some(), g.bed_left.is_some(), g.slope.is_some(), g.slab_start.is_some(), g.slab_bottom.is_some(), g.slab_top.is_some(), g.nx_upstream.is_some(), g.nx_downstream.is_some(), g.nt_below.is_some(), g.nt_slab.is_some(), g.nt_above.is_some()];
    let geometry = match kind {
        GeometryKind::Rectangle => {
            if slab_fields.iter().any(|&b| b) {
                return Err(invalid("geometry", "sloping-slab fields given for a rectangle"));
            }
            Geometry::Rectangle(Rectangle {
                x_min: need(g.x_min, "geometry.x_min")?,
                x_max: need(g.x_max, "geometry.x_max")?,
                z_min: need(g.z_min, "geometry.z_min")?,
                z_max: need(g.z_max, "geometry.z_max")?,
                nx: need(g.nx, "geometry.nx")?,
                nz: need(g.nz, "geometry.nz")?,
                x_lines: g.x_lines.unwrap_or_default(),
                z_lines: g.z_lines.unwrap_or_default(),
            })
        }
        GeometryKind::SlopingSlab => {
            if rect_fields.iter().any(|&b| b) {
                return Err(invalid("geometry", "rectangle fields given for a sloping slab"));
            }
            Geometry::SlopingSlab(SlopingSlab {
                length: need(g.length, "geometry.length")?,
                thickness: need(g.thickness, "geometry.thickness")?,
                bed_left: need(g.bed_left, "geometry.bed_left")?,
                slope: need(g.slope, "geometry.slope")?,
                slab_start: need(g.slab_start, "geometry.slab_start")?,
                slab_bottom: need(g.slab_bottom, "geometry.slab_bottom")?,
                slab_top: need(g.slab_top, "geometry.slab_top")?,
                nx_upstream: need(g.nx_upstream, "geometry.nx_upstream")?,
                nx_downstream: need(g.nx_downstream, "geometry.nx_downstream")?,
                nt_below: need(g.nt_below, "geometry.nt_below")?,
                nt_slab: need(g.nt_slab, "geometry.nt_slab")?,
                nt_above: need(g.nt_above, "geometry.nt_above")?,
            })
        }
    };
    geometry.validate().map_err(|e| invalid("geometry", e.to_string()))?;
    if file.soil.is_empty() {
        return Err(invalid("soil", "at least one layer is required"));
    }
    let mut indexed = Vec::new();
    for (key, s) in file.soil {
        let idx: usize = key
            .parse()
            .map_err(|_| invalid(format!("soil.{key}"), "layer keys must be integers"))?;
        indexed.push((idx, key, s));
    }
    indexed.sort_by_key(|e| e.0);
    let (z0, z1) = geometry.z_range();
    let single = indexed.len() == 1;
    let mut layers = Vec::new();
    for (_, key, s) in indexed {
        let path = format!("soil.{key}");
        let base = match &s.preset {
            Some(name) => SoilModel::preset(name)
                .ok_or_else(|| invalid(format!("{path}.preset"), format!("unknown preset `{name}`")))?,
            None => SoilModel {
                ks: need(s.ks, &format!("{path}.ks"))?,
                alpha: need(s.alpha, &format!("{path}.alpha"))?,
                n: need(s.n, &format!("{path}.n"))?,
                theta_r: DEFAULT_THETA_R,
                theta_s: DEFAULT_THETA_S,
                porosity: 1.0,
            },
        };
        let soil = SoilModel {
            ks: s.ks.unwrap_or(base.ks),
            alpha: s.alpha.unwrap_or(base.alpha),
            n: s.n.unwrap_or(base.n),
            theta_r: s.theta_r.unwrap_or(base.theta_r),
            theta_s: s.theta_s.unwrap_or(base.theta_s),
            porosity: s.porosity.unwrap_or(base.porosity),
        };
        if !(soil.n.is_finite() && soil.n > 1.0) {
            return Err(invalid(format!("{path}.n"), format!("van Genuchten n must exceed 1, got {}", soil.n)));
        }
        if !(soil.ks.is_finite() && soil.ks > 0.0) {
            return Err(invalid(format!("{path}.ks"), format!("must be positive, got {}", soil.ks)));
        }
        if !(soil.alpha.is_finite() && soil.alpha > 0.0) {
            return Err(invalid(format!("{path}.alpha"), format!("must be positive, got {}", soil.alpha)));
        }
        soil.validate().map_err(|e| invalid(&path, e.0))?;
        let (z_low, z_high) = match (s.z_low, s.z_high) {
            (Some(a), Some(b)) => (a, b),
            (None, None) if single => (z0, z1),
            _ => return Err(invalid(&path, "z_low and z_high are required when several layers are given")),
        };
        if !(z_low.is_finite() && z_high.is_finite() && z_low < z_high) {
            return Err(invalid(&path, format!("layer [{z_low}, {z_high}] is empty")));
        }
        layers.push(Layer { z_low, z_high, soil });
    }
    let b = need(file.boundary, "boundary")?;
    for (k, s) in b.segments.iter().enumerate() {
        if let (Some(a), Some(bb)) = (s.from, s.to) {
            if !(a < bb) {
                return Err(invalid(format!("boundary.segments[{k}]"), "`from` must be below `to`"));
            }
        }
    }
    let head_default = b.segments.iter().find_map(|s| match s.condition {
        crate::geometry::Condition::Head { head } => Some(head),
        _ => None,
    });
    let water_table = match b.water_table.or(head_default) {
        Some(w) => w,
        None => return Err(invalid("boundary", "at least one head segment is required")),
    };
    let goal = need(file.goal, "goal")?;
    let problem = ProblemConfig {
        name: file.name.unwrap_or_else(|| "custom".into()),
        geometry,
        mode: g.mode,
        layers,
        boundary: b.segments,
        source: file.source,
        goal,
        water_table,
    };
    problem.validate().map_err(|e| invalid("problem", e.to_string()))?;
    file.solver.validate().map_err(|m| invalid("solver", m))?;
    file.adaptivity.validate().map_err(|m| invalid("adaptivity", m))?;
    Ok(RunConfig { problem, solver: file.solver, adaptivity: file.adaptivity, output: file.output })
}

/// Serialise a configuration; parsing the result gives the same value.
pub fn to_toml(cfg: &RunConfig) -> String {
    let p = &cfg.problem;
    let mut g = GeometrySection { kind: None, mode: p.mode, ..Default::default() };
    match &p.geometry {
        Geometry::Rectangle(r) => {
            g.kind = Some(GeometryKind::Rectangle);
            g.x_min = Some(r.x_min);
            g.x_max = Some(r.x_max);
            g.z_min = Some(r.z_min);
            g.z_max = Some(r.z_max);
            g.nx = Some(r.nx);
            g.nz = Some(r.nz);
            g.x_lines = (!r.x_lines.is_empty()).then(|| r.x_lines.clone());
            g.z_lines = (!r.z_lines.is_empty()).then(|| r.z_lines.clone());
        }
        Geometry::SlopingSlab(s) => {
            g.kind = Some(GeometryKind::SlopingSlab);
            g.length = Some(s.length);
            g.thickness = Some(s.thickness);
            g.bed_left = Some(s.bed_left);
            g.slope = Some(s.slope);
            g.slab_start = Some(s.slab_start);
            g.slab_bottom = Some(s.slab_bottom);
            g.slab_top = Some(s.slab_top);
            g.nx_upstream = Some(s.nx_upstream);
            g.nx_downstream = Some(s.nx_downstream);
            g.nt_below = Some(s.nt_below);
            g.nt_slab = Some(s.nt_slab);
            g.nt_above = Some(s.nt_above);
        }
    }
    let soil = p
        .layers
        .iter()
        .enumerate()
        .map(|(i, l)| {
            (
                i.to_string(),
                SoilSection {
                    preset: None,
                    ks: Some(l.soil.ks),
                    alpha: Some(l.soil.alpha),
                    n: Some(l.soil.n),
                    theta_r: Some(l.soil.theta_r),
                    theta_s: Some(l.soil.theta_s),
                    porosity: Some(l.soil.porosity),
                    z_low: Some(l.z_low),
                    z_high: Some(l.z_high),
                },
            )
        })
        .collect();
    let file = ConfigFile {
        name: Some(p.name.clone()),
        geometry: Some(g),
        soil,
        boundary: Some(BoundarySection { water_table: Some(p.water_table), segments: p.boundary.clone() }),
        source: p.source.clone(),
        goal: Some(p.goal.clone()),
        solver: cfg.solver.clone(),
        adaptivity: cfg.adaptivity.clone(),
        output: cfg.output.clone(),
    };
    toml::to_string(&file).expect("configuration serialises")
}
