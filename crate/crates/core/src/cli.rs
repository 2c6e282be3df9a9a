//! Scenario files and the commands behind the `stokesian` binary.
//!
//! A scenario is a TOML document with a `[model]`, a `[gait]`, an optional
//! `[integrator]` block and one block per command. Unknown keys are rejected.
//! Every command writes plain files into an output directory; numbers are
//! printed with 17 significant digits so they parse back to the same `f64`.

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};
use std::str::FromStr;
use std::sync::Arc;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::analysis::{curvature, sample_field, Axis, CurvatureField, FieldGrid, FieldNode, GridSpec};
use crate::connection::{ConnectionMatrix, ConnectionProvider, DEFAULT_JACOBIAN_STEP};
use crate::error::Error;
use crate::integrator::{
    continuity_ratio, integrate_gait, net_displacement, stance_drift, EventRecord, IntegratorSettings, Sample,
};
use crate::liegroup::{Pose, Twist};
use crate::models::{
    ChainModel, ContactSet, DragModel, JacobianTestbed, LeggedModel, ManyLeggedSurrogate, Quadrature, SlipModel,
};
use crate::optimizer::{maximize, optimize, GaitFamily, ObjectiveDirection, OptimizationReport, Parameter};
use crate::shapespace::{Gait, GaitKind, Shape};

pub const SCHEMA_VERSION: u32 = 1;

// ---------------------------------------------------------------------------
// Errors

#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error("{0}")]
    Validation(String),
    #[error("{context}: {source}")]
    Model {
        context: String,
        #[source]
        source: Error,
    },
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

impl CliError {
    fn model(context: &str) -> impl FnOnce(Error) -> CliError + '_ {
        move |source| CliError::Model {
            context: context.to_string(),
            source,
        }
    }

    fn io(path: &Path) -> impl FnOnce(std::io::Error) -> CliError + '_ {
        move |source| CliError::Io {
            path: path.to_path_buf(),
            source,
        }
    }

    /// Process exit code: 2 for bad input, 3 for a numerical abort.
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Model { source, .. } => match source {
                Error::SingularConstraint { .. }
                | Error::DegenerateStance(_)
                | Error::SingularStencil { .. }
                | Error::NonIntegerCycles { .. } => 3,
                _ => 2,
            },
            CliError::Validation(_) | CliError::Io { .. } => 2,
        }
    }
}

pub type CliResult<T> = std::result::Result<T, CliError>;

// ---------------------------------------------------------------------------
// Scenario schema

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Scenario {
    #[serde(default)]
    pub seed: u64,
    pub model: ModelSpec,
    pub gait: GaitSpec,
    #[serde(default)]
    pub integrator: IntegratorSpec,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub sweep: Option<SweepSpec>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub optimize: Option<OptimizeSpec>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub verify: Option<VerifySpec>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub output: Option<OutputSpec>,
}

fn default_fd_step() -> f64 {
    DEFAULT_JACOBIAN_STEP
}
fn default_links() -> Vec<f64> {
    vec![1.0; 3]
}
fn default_c_t() -> f64 {
    1.0
}
fn default_c_n() -> f64 {
    2.0
}
fn default_points() -> usize {
    8
}
fn default_one() -> f64 {
    1.0
}
fn default_true() -> bool {
    true
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum QuadratureKind {
    #[default]
    GaussLegendre,
    Midpoint,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case", deny_unknown_fields)]
pub enum ModelSpec {
    /// Fixed connection; `columns[i]` is the twist per unit rate of `r_i`.
    Constant { columns: Vec<[f64; 3]> },
    Jacobian {
        testbed: JacobianTestbed,
        #[serde(default = "default_fd_step")]
        fd_step: f64,
    },
    Swimmer {
        #[serde(default = "default_links")]
        links: Vec<f64>,
        #[serde(default = "default_c_t")]
        c_t: f64,
        #[serde(default = "default_c_n")]
        c_n: f64,
        #[serde(default)]
        quadrature: QuadratureKind,
        #[serde(default = "default_points")]
        points: usize,
    },
    Crawler {
        #[serde(default = "default_fd_step")]
        fd_step: f64,
    },
    Slip {
        #[serde(default = "default_one")]
        foot_scale: f64,
        #[serde(default = "default_true")]
        body_drag: bool,
    },
    ManyLegged {
        feet_per_link: usize,
        #[serde(default = "default_links")]
        links: Vec<f64>,
        #[serde(default = "default_c_t")]
        c_t: f64,
        #[serde(default = "default_c_n")]
        c_n: f64,
    },
}

impl ModelSpec {
    fn drag(links: &[f64], c_t: f64, c_n: f64, quadrature: Quadrature) -> crate::Result<DragModel> {
        DragModel::new(ChainModel::new(links.to_vec())?, c_t, c_n, quadrature)
    }

    pub fn provider(&self) -> crate::Result<ConnectionProvider> {
        Ok(match self {
            ModelSpec::Constant { columns } => {
                if columns.is_empty() {
                    return Err(Error::InvalidModel("constant model needs at least one column".into()));
                }
                let cols: Vec<Twist> = columns.iter().map(|c| Twist::new(c[0], c[1], c[2])).collect();
                ConnectionProvider::Constant(ConnectionMatrix::from_columns(&cols))
            }
            ModelSpec::Jacobian { testbed, fd_step } => ConnectionProvider::Jacobian {
                map: Arc::new(*testbed),
                step: check_fd_step(*fd_step)?,
            },
            ModelSpec::Swimmer {
                links,
                c_t,
                c_n,
                quadrature,
                points,
            } => {
                let q = match quadrature {
                    QuadratureKind::GaussLegendre => Quadrature::GaussLegendre(*points),
                    QuadratureKind::Midpoint => Quadrature::Midpoint(*points),
                };
                ConnectionProvider::constraint(Self::drag(links, *c_t, *c_n, q)?)
            }
            ModelSpec::Crawler { fd_step } => ConnectionProvider::Piecewise {
                model: LeggedModel::crawler(),
                step: check_fd_step(*fd_step)?,
            },
            ModelSpec::Slip { foot_scale, body_drag } => {
                let base = SlipModel::crawler();
                let body = if *body_drag { base.body_coefficients().copied() } else { None };
                let model = SlipModel::new(base.legged().clone(), base.foot_coefficients().to_vec(), body)?
                    .with_foot_scale(*foot_scale)?;
                ConnectionProvider::constraint(model)
            }
            ModelSpec::ManyLegged {
                feet_per_link,
                links,
                c_t,
                c_n,
            } => {
                let drag = Self::drag(links, *c_t, *c_n, Quadrature::GaussLegendre(default_points()))?;
                ConnectionProvider::constraint(ManyLeggedSurrogate::new(drag, *feet_per_link)?)
            }
        })
    }

    /// Legged geometry whose planted feet should stay fixed, if any.
    pub fn pinned_legs(&self) -> Option<LeggedModel> {
        match self {
            ModelSpec::Crawler { .. } => Some(LeggedModel::crawler()),
            _ => None,
        }
    }
}

fn check_fd_step(h: f64) -> crate::Result<f64> {
    if h > 0.0 && h.is_finite() {
        Ok(h)
    } else {
        Err(Error::InvalidArgument(format!("finite-difference step must be positive, got {h}")))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case", deny_unknown_fields)]
pub enum GaitSpec {
    Fourier {
        #[serde(default = "default_one")]
        period: f64,
        mean: Vec<f64>,
        cos: Vec<Vec<f64>>,
        sin: Vec<Vec<f64>>,
    },
    /// `r_i(t) = mean_i + amplitude_i·sin(ωt + phase_i)`.
    Sinusoid {
        #[serde(default = "default_one")]
        period: f64,
        mean: Vec<f64>,
        amplitude: Vec<f64>,
        phase: Vec<f64>,
    },
    Waypoints {
        #[serde(default = "default_one")]
        period: f64,
        points: Vec<Vec<f64>>,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        times: Option<Vec<f64>>,
    },
}

impl GaitSpec {
    pub fn gait(&self) -> crate::Result<Gait> {
        match self {
            GaitSpec::Fourier { period, mean, cos, sin } => {
                Gait::fourier(*period, mean.clone(), cos.clone(), sin.clone())
            }
            GaitSpec::Sinusoid {
                period,
                mean,
                amplitude,
                phase,
            } => Gait::sinusoid(*period, mean, amplitude, phase),
            GaitSpec::Waypoints { period, points, times } => match times {
                Some(t) => Gait::waypoints_timed(points.clone(), t.clone(), *period),
                None => Gait::waypoints(points.clone(), *period),
            },
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct IntegratorSpec {
    pub step: f64,
    pub event_tol: f64,
    pub cycles: usize,
}

impl Default for IntegratorSpec {
    fn default() -> Self {
        let s = IntegratorSettings::default();
        Self {
            step: s.step,
            event_tol: s.event_tol,
            cycles: s.cycles,
        }
    }
}

impl IntegratorSpec {
    pub fn settings(&self) -> IntegratorSettings {
        IntegratorSettings {
            step: self.step,
            event_tol: self.event_tol,
            cycles: self.cycles,
        }
    }
}

fn default_coords() -> [usize; 2] {
    [1, 2]
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SweepSpec {
    pub r1: Axis,
    pub r2: Axis,
    /// 1-based shape coordinates the grid spans.
    #[serde(default = "default_coords")]
    pub coords: [usize; 2],
    /// Values of the remaining coordinates; zeros when absent.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub base: Option<Vec<f64>>,
    #[serde(default)]
    pub curvature: bool,
}

fn default_budget() -> usize {
    500
}
fn default_seeds() -> usize {
    4
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OptimizeSpec {
    #[serde(default = "default_direction")]
    pub direction: ObjectiveDirection,
    #[serde(default = "default_budget")]
    pub budget: usize,
    #[serde(default = "default_seeds")]
    pub seeds: usize,
    pub parameters: Vec<Parameter>,
    /// Replaces the displacement objective with `−‖p − target‖²`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub quadratic_target: Option<Vec<f64>>,
}

fn default_direction() -> ObjectiveDirection {
    ObjectiveDirection::X
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Suite {
    /// Net displacement vanishes and the error falls at fourth order.
    LoopClosure,
    /// Gait stays on one contact piece and produces no net motion.
    ZeroDisplacement,
    /// Pose increments obey the Lipschitz bound across switches.
    Continuity,
    /// A retraced gait produces no net motion.
    Reversal,
    /// A cubic time warp leaves the net displacement unchanged.
    Pacing,
    /// Planted feet do not move in the world.
    Stance,
    /// `‖M·A + N‖∞` at random shapes.
    ConstraintResidual,
}

impl Suite {
    pub const ALL: [Suite; 7] = [
        Suite::LoopClosure,
        Suite::ZeroDisplacement,
        Suite::Continuity,
        Suite::Reversal,
        Suite::Pacing,
        Suite::Stance,
        Suite::ConstraintResidual,
    ];

    pub fn name(&self) -> &'static str {
        match self {
            Suite::LoopClosure => "loop-closure",
            Suite::ZeroDisplacement => "zero-displacement",
            Suite::Continuity => "continuity",
            Suite::Reversal => "reversal",
            Suite::Pacing => "pacing",
            Suite::Stance => "stance",
            Suite::ConstraintResidual => "constraint-residual",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct VerifySpec {
    pub suites: Vec<Suite>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OutputSpec {
    pub dir: PathBuf,
}

/// Command-line values that take precedence over the scenario.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct Overrides {
    pub out: Option<PathBuf>,
    pub step: Option<f64>,
    pub cycles: Option<usize>,
    pub seed: Option<u64>,
}

impl Scenario {
    /// Parses and validates a scenario document.
    pub fn parse(text: &str) -> CliResult<Scenario> {
        let scenario: Scenario = toml::from_str(text).map_err(|e| CliError::Validation(e.to_string()))?;
        scenario.validate()?;
        Ok(scenario)
    }

    pub fn apply(&mut self, o: &Overrides) -> CliResult<()> {
        if let Some(step) = o.step {
            self.integrator.step = step;
        }
        if let Some(cycles) = o.cycles {
            self.integrator.cycles = cycles;
        }
        if let Some(seed) = o.seed {
            self.seed = seed;
        }
        if let Some(out) = &o.out {
            self.output = Some(OutputSpec { dir: out.clone() });
        }
        self.validate()
    }

    pub fn validate(&self) -> CliResult<()> {
        let provider = self.model.provider().map_err(CliError::model("model"))?;
        let gait = self.gait.gait().map_err(CliError::model("gait"))?;
        if gait.dim() != provider.dim() {
            return Err(CliError::Validation(format!(
                "gait: shape dimension {} does not match model dimension {}",
                gait.dim(),
                provider.dim()
            )));
        }
        self.integrator
            .settings()
            .validate()
            .map_err(CliError::model("integrator"))?;
        if let Some(sweep) = &self.sweep {
            self.grid(sweep, provider.dim())?
                .validate()
                .map_err(CliError::model("sweep"))?;
            if sweep.curvature && provider.dim() != 2 {
                return Err(CliError::Validation("sweep.curvature: needs a 2-dof model".into()));
            }
        }
        if let Some(opt) = &self.optimize {
            let family = self.family(opt)?;
            if let Some(t) = &opt.quadratic_target {
                if t.len() != family.dim() {
                    return Err(CliError::Validation(format!(
                        "optimize.quadratic_target: {} values for {} parameters",
                        t.len(),
                        family.dim()
                    )));
                }
            }
            if opt.seeds == 0 || opt.budget / opt.seeds < family.dim() + 2 {
                return Err(CliError::Validation(format!(
                    "optimize: budget {} over {} seeds is below {} evaluations per seed",
                    opt.budget,
                    opt.seeds,
                    family.dim() + 2
                )));
            }
        }
        if let Some(v) = &self.verify {
            if v.suites.is_empty() {
                return Err(CliError::Validation("verify.suites: list at least one suite".into()));
            }
        }
        Ok(())
    }

    fn grid(&self, sweep: &SweepSpec, dim: usize) -> CliResult<GridSpec> {
        if sweep.coords.iter().any(|&c| c == 0 || c > dim) || sweep.coords[0] == sweep.coords[1] {
            return Err(CliError::Validation(format!(
                "sweep.coords: {:?} must be two distinct values in 1..={dim}",
                sweep.coords
            )));
        }
        let base = sweep.base.clone().unwrap_or_else(|| vec![0.0; dim]);
        if base.len() != dim {
            return Err(CliError::Validation(format!(
                "sweep.base: expected {dim} values, got {}",
                base.len()
            )));
        }
        Ok(GridSpec {
            axes: [sweep.r1, sweep.r2],
            coords: [sweep.coords[0] - 1, sweep.coords[1] - 1],
            base,
        })
    }

    fn family(&self, opt: &OptimizeSpec) -> CliResult<GaitFamily> {
        let gait = self.gait.gait().map_err(CliError::model("gait"))?;
        GaitFamily::new(gait, opt.parameters.clone()).map_err(CliError::model("optimize.parameters"))
    }

    /// Canonical text of the scenario.
    pub fn canonical(&self) -> String {
        toml::to_string(self).expect("scenario serializes")
    }

    /// SHA-256 of the canonical text without the output location, so the
    /// same run written to different folders carries the same hash.
    pub fn hash(&self) -> String {
        let mut s = self.clone();
        s.output = None;
        hex::encode(Sha256::digest(s.canonical().as_bytes()))
    }
}

// ---------------------------------------------------------------------------
// Number formatting

/// Decimal text with 17 significant digits.
pub fn fmt_f64(v: f64) -> String {
    format!("{v:.16e}")
}

fn parse_f64(s: &str) -> CliResult<f64> {
    s.trim()
        .parse()
        .map_err(|_| CliError::Validation(format!("bad number '{s}'")))
}

fn header(kind: &str, hash: &str, extra: &[(&str, String)]) -> String {
    let mut out = format!("# stokesian {kind}\n# schema_version: {SCHEMA_VERSION}\n# scenario_sha256: {hash}\n");
    for (k, v) in extra {
        let _ = writeln!(out, "# {k}: {v}");
    }
    out
}

fn metadata<'a>(text: &'a str, key: &str) -> Option<&'a str> {
    text.lines()
        .take_while(|l| l.starts_with('#'))
        .find_map(|l| l.strip_prefix("# ")?.strip_prefix(key)?.strip_prefix(": "))
}

fn data_lines(text: &str) -> impl Iterator<Item = &str> {
    text.lines().filter(|l| !l.starts_with('#') && !l.is_empty())
}

fn contact_text(c: &Option<ContactSet>) -> String {
    c.map(|c| c.to_string()).unwrap_or_default()
}

fn parse_contacts(s: &str) -> CliResult<Option<ContactSet>> {
    if s.is_empty() {
        Ok(None)
    } else {
        ContactSet::from_str(s).map(Some).map_err(CliError::model("contact_set"))
    }
}

// ---------------------------------------------------------------------------
// Trajectory table

pub fn trajectory_csv(samples: &[Sample], hash: &str) -> String {
    let d = samples.first().map_or(0, |s| s.shape.dim());
    let mut out = header(
        "trajectory",
        hash,
        &[("frame", "g maps body to world; xi = g^-1 dg/dt in body coordinates".into())],
    );
    let mut cols = vec!["t".to_string(), "x".into(), "y".into(), "theta".into()];
    cols.extend((1..=d).map(|i| format!("r{i}")));
    cols.extend(["xi_vx".into(), "xi_vy".into(), "xi_omega".into(), "contact_set".into()]);
    out.push_str(&cols.join(","));
    out.push('\n');
    for s in samples {
        let mut row = vec![fmt_f64(s.t), fmt_f64(s.pose.x), fmt_f64(s.pose.y), fmt_f64(s.pose.theta)];
        row.extend(s.shape.iter().map(|&v| fmt_f64(v)));
        row.extend([s.twist.vx, s.twist.vy, s.twist.omega].map(fmt_f64));
        row.push(contact_text(&s.contacts));
        out.push_str(&row.join(","));
        out.push('\n');
    }
    out
}

pub fn read_trajectory_csv(text: &str) -> CliResult<Vec<Sample>> {
    let mut lines = data_lines(text);
    let head: Vec<&str> = lines
        .next()
        .ok_or_else(|| CliError::Validation("empty trajectory file".into()))?
        .split(',')
        .collect();
    if head.len() < 8 || head[..4] != ["t", "x", "y", "theta"] {
        return Err(CliError::Validation("unexpected trajectory header".into()));
    }
    let d = head.len() - 8;
    lines
        .map(|line| {
            let f: Vec<&str> = line.split(',').collect();
            if f.len() != head.len() {
                return Err(CliError::Validation(format!("bad trajectory row '{line}'")));
            }
            let num = |k: usize| parse_f64(f[k]);
            let shape: Vec<f64> = (0..d).map(|i| num(4 + i)).collect::<CliResult<_>>()?;
            Ok(Sample {
                t: num(0)?,
                pose: Pose {
                    x: num(1)?,
                    y: num(2)?,
                    theta: num(3)?,
                },
                shape: Shape::new(&shape),
                twist: Twist::new(num(4 + d)?, num(5 + d)?, num(6 + d)?),
                contacts: parse_contacts(f[7 + d])?,
            })
        })
        .collect()
}

// ---------------------------------------------------------------------------
// Field table

pub fn field_csv(field: &FieldGrid, curv: Option<&CurvatureField>, hash: &str) -> String {
    let spec = &field.spec;
    let d = spec.dim();
    let grid = serde_json::to_string(spec).expect("grid serializes");
    let mut out = header("field", hash, &[("grid", grid)]);
    let mut cols = vec!["i".to_string(), "j".into(), "r1".into(), "r2".into()];
    for row in ["vx", "vy", "omega"] {
        cols.extend((1..=d).map(|k| format!("A_{row}_{k}")));
    }
    cols.extend(["contact_set".into(), "singular_flag".into()]);
    if curv.is_some() {
        cols.extend(["D_vx".into(), "D_vy".into(), "D_omega".into()]);
    }
    out.push_str(&cols.join(","));
    out.push('\n');
    let n2 = spec.axes[1].count;
    for (k, node) in field.nodes.iter().enumerate() {
        let (i, j) = (k / n2, k % n2);
        let mut row = vec![
            i.to_string(),
            j.to_string(),
            fmt_f64(spec.axes[0].value(i)),
            fmt_f64(spec.axes[1].value(j)),
        ];
        match &node.connection {
            Some(a) => row.extend(a.row_major().into_iter().map(fmt_f64)),
            None => row.extend(std::iter::repeat_n(fmt_f64(f64::NAN), 3 * d)),
        }
        row.push(contact_text(&node.contacts));
        row.push(u8::from(node.singular()).to_string());
        if let Some(c) = curv {
            let v = c.values[k].map_or([f64::NAN; 3], |t| [t.vx, t.vy, t.omega]);
            row.extend(v.map(fmt_f64));
        }
        out.push_str(&row.join(","));
        out.push('\n');
    }
    out
}

/// A field table read back from disk.
#[derive(Debug, Clone, PartialEq)]
pub struct FieldTable {
    pub field: FieldGrid,
    pub curvature: Option<Vec<Option<Twist>>>,
}

pub fn read_field_csv(text: &str) -> CliResult<FieldTable> {
    let grid = metadata(text, "grid").ok_or_else(|| CliError::Validation("field file lacks grid metadata".into()))?;
    let spec: GridSpec = serde_json::from_str(grid).map_err(|e| CliError::Validation(format!("grid metadata: {e}")))?;
    spec.validate().map_err(CliError::model("grid metadata"))?;
    let d = spec.dim();
    let mut lines = data_lines(text);
    let head: Vec<&str> = lines
        .next()
        .ok_or_else(|| CliError::Validation("empty field file".into()))?
        .split(',')
        .collect();
    let base = 4 + 3 * d + 2;
    let with_curvature = match head.len() {
        n if n == base => false,
        n if n == base + 3 => true,
        _ => return Err(CliError::Validation("unexpected field header".into())),
    };
    let mut nodes = Vec::with_capacity(spec.node_count());
    let mut curv = Vec::new();
    for line in lines {
        let f: Vec<&str> = line.split(',').collect();
        if f.len() != head.len() {
            return Err(CliError::Validation(format!("bad field row '{line}'")));
        }
        let idx = |k: usize| -> CliResult<usize> {
            f[k].parse().map_err(|_| CliError::Validation(format!("bad index '{}'", f[k])))
        };
        let (i, j) = (idx(0)?, idx(1)?);
        if spec.index(i, j) != nodes.len() {
            return Err(CliError::Validation(format!("field rows out of order at ({i}, {j})")));
        }
        let singular = match f[base - 1] {
            "0" => false,
            "1" => true,
            other => return Err(CliError::Validation(format!("bad singular flag '{other}'"))),
        };
        let connection = if singular {
            None
        } else {
            let entries: Vec<f64> = (0..3 * d).map(|k| parse_f64(f[4 + k])).collect::<CliResult<_>>()?;
            Some(ConnectionMatrix::from_row_slice(d, &entries).map_err(CliError::model("field row"))?)
        };
        nodes.push(FieldNode {
            shape: spec.shape(i, j),
            connection,
            contacts: parse_contacts(f[base - 2])?,
        });
        if with_curvature {
            let v = [parse_f64(f[base])?, parse_f64(f[base + 1])?, parse_f64(f[base + 2])?];
            curv.push(if v.iter().any(|x| x.is_nan()) {
                None
            } else {
                Some(Twist::new(v[0], v[1], v[2]))
            });
        }
    }
    if nodes.len() != spec.node_count() {
        return Err(CliError::Validation(format!(
            "field has {} rows, grid needs {}",
            nodes.len(),
            spec.node_count()
        )));
    }
    Ok(FieldTable {
        field: FieldGrid { spec, nodes },
        curvature: with_curvature.then_some(curv),
    })
}

// ---------------------------------------------------------------------------
// Records

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimulationSummary {
    pub schema_version: u32,
    pub scenario_sha256: String,
    pub provider: String,
    pub step: f64,
    pub event_tol: f64,
    pub scheme_order: u32,
    pub cycles: usize,
    pub samples: usize,
    /// Largest body-velocity norm seen, the constant of the continuity bound.
    pub max_twist_norm: f64,
    pub net_displacement: Twist,
    pub per_cycle: Vec<Twist>,
    pub events: Vec<EventRecord>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OptimizationRecord {
    pub schema_version: u32,
    pub scenario_sha256: String,
    pub parameter_names: Vec<String>,
    pub objective: String,
    pub report: OptimizationReport,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Status {
    Pass,
    Fail,
    Skip,
}

impl Status {
    fn as_str(&self) -> &'static str {
        match self {
            Status::Pass => "pass",
            Status::Fail => "fail",
            Status::Skip => "skip",
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SuiteResult {
    pub suite: Suite,
    pub status: Status,
    pub value: f64,
    pub tolerance: f64,
    pub detail: String,
}

pub fn verify_csv(results: &[SuiteResult], hash: &str) -> String {
    let mut out = header("verify", hash, &[]);
    out.push_str("suite,status,value,tolerance,detail\n");
    for r in results {
        let _ = writeln!(
            out,
            "{},{},{},{},{}",
            r.suite.name(),
            r.status.as_str(),
            fmt_f64(r.value),
            fmt_f64(r.tolerance),
            r.detail.replace(',', ";")
        );
    }
    out
}

// ---------------------------------------------------------------------------
// Commands

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Command {
    Simulate,
    Sweep,
    Optimize,
    Verify,
}

/// What a command produced.
#[derive(Debug, Clone, PartialEq)]
pub struct Outcome {
    pub files: Vec<PathBuf>,
    /// Human-readable lines for stdout.
    pub report: Vec<String>,
    /// Set when a verify suite failed.
    pub invariant_failure: bool,
}

impl Outcome {
    pub fn exit_code(&self) -> i32 {
        i32::from(self.invariant_failure)
    }
}

/// Loads the scenario at `path`, applies `overrides` and runs `command`.
/// Relative output directories from the scenario resolve against the
/// scenario's folder; `--out` resolves against the working directory.
pub fn run(command: Command, path: &Path, overrides: &Overrides) -> CliResult<Outcome> {
    let text = fs::read_to_string(path).map_err(CliError::io(path))?;
    let mut scenario = Scenario::parse(&text).map_err(|e| match e {
        CliError::Validation(m) => CliError::Validation(format!("{}: {m}", path.display())),
        other => other,
    })?;
    scenario.apply(overrides)?;
    let out = match (&overrides.out, &scenario.output) {
        (Some(dir), _) => dir.clone(),
        (None, Some(o)) if o.dir.is_relative() => path.parent().unwrap_or(Path::new(".")).join(&o.dir),
        (None, Some(o)) => o.dir.clone(),
        (None, None) => PathBuf::from("out"),
    };
    execute(command, &scenario, &out)
}

pub fn execute(command: Command, scenario: &Scenario, out: &Path) -> CliResult<Outcome> {
    fs::create_dir_all(out).map_err(CliError::io(out))?;
    match command {
        Command::Simulate => cmd_simulate(scenario, out),
        Command::Sweep => cmd_sweep(scenario, out),
        Command::Optimize => cmd_optimize(scenario, out),
        Command::Verify => cmd_verify(scenario, out),
    }
}

fn write(path: PathBuf, text: &str) -> CliResult<PathBuf> {
    fs::write(&path, text).map_err(CliError::io(&path))?;
    Ok(path)
}

fn json<T: Serialize>(value: &T) -> String {
    let mut s = serde_json::to_string_pretty(value).expect("record serializes");
    s.push('\n');
    s
}

pub fn cmd_simulate(scenario: &Scenario, out: &Path) -> CliResult<Outcome> {
    let provider = scenario.model.provider().map_err(CliError::model("model"))?;
    let gait = scenario.gait.gait().map_err(CliError::model("gait"))?;
    let settings = scenario.integrator.settings();
    let traj = integrate_gait(&provider, &gait, &settings).map_err(CliError::model("simulate"))?;
    let disp = net_displacement(&traj).map_err(CliError::model("simulate"))?;
    let hash = scenario.hash();
    let summary = SimulationSummary {
        schema_version: SCHEMA_VERSION,
        scenario_sha256: hash.clone(),
        provider: provider.kind_name().into(),
        step: settings.step,
        event_tol: settings.event_tol,
        scheme_order: traj.order,
        cycles: traj.cycles,
        samples: traj.samples.len(),
        max_twist_norm: traj.max_twist_norm,
        net_displacement: disp.total,
        per_cycle: disp.per_cycle,
        events: traj.events.clone(),
    };
    let files = vec![
        write(out.join("trajectory.csv"), &trajectory_csv(&traj.samples, &hash))?,
        write(out.join("summary.json"), &json(&summary))?,
    ];
    let t = summary.net_displacement;
    Ok(Outcome {
        files,
        report: vec![
            format!("net displacement: x = {:e}, y = {:e}, theta = {:e}", t.vx, t.vy, t.omega),
            format!("samples: {}, events: {}", summary.samples, summary.events.len()),
        ],
        invariant_failure: false,
    })
}

pub fn cmd_sweep(scenario: &Scenario, out: &Path) -> CliResult<Outcome> {
    let sweep = scenario
        .sweep
        .as_ref()
        .ok_or_else(|| CliError::Validation("sweep: scenario has no [sweep] block".into()))?;
    let provider = scenario.model.provider().map_err(CliError::model("model"))?;
    let spec = scenario.grid(sweep, provider.dim())?;
    let field = sample_field(&provider, &spec).map_err(CliError::model("sweep"))?;
    let curv = if sweep.curvature {
        Some(curvature(&field).map_err(CliError::model("sweep.curvature"))?)
    } else {
        None
    };
    let singular = field.nodes.iter().filter(|n| n.singular()).count();
    let file = write(out.join("field.csv"), &field_csv(&field, curv.as_ref(), &scenario.hash()))?;
    Ok(Outcome {
        files: vec![file],
        report: vec![format!("nodes: {}, singular: {singular}", field.nodes.len())],
        invariant_failure: false,
    })
}

pub fn cmd_optimize(scenario: &Scenario, out: &Path) -> CliResult<Outcome> {
    let opt = scenario
        .optimize
        .as_ref()
        .ok_or_else(|| CliError::Validation("optimize: scenario has no [optimize] block".into()))?;
    let family = scenario.family(opt)?;
    let (report, objective) = match &opt.quadratic_target {
        Some(target) => {
            let f = |p: &[f64]| -p.iter().zip(target).map(|(a, b)| (a - b).powi(2)).sum::<f64>();
            (maximize(f, &family.bounds(), opt.budget, opt.seeds, scenario.seed), "quadratic".to_string())
        }
        None => {
            let provider = scenario.model.provider().map_err(CliError::model("model"))?;
            let settings = scenario.integrator.settings();
            let r = optimize(&provider, &family, opt.direction, &settings, opt.budget, opt.seeds, scenario.seed);
            (r, format!("displacement-{}", serde_json::to_value(opt.direction).expect("serializes").as_str().unwrap_or("")))
        }
    };
    let report = report.map_err(CliError::model("optimize"))?;
    let record = OptimizationRecord {
        schema_version: SCHEMA_VERSION,
        scenario_sha256: scenario.hash(),
        parameter_names: family.parameters().iter().map(|p| p.name.clone()).collect(),
        objective,
        report,
    };
    let file = write(out.join("report.json"), &json(&record))?;
    Ok(Outcome {
        files: vec![file],
        report: vec![format!(
            "best objective {:e} at {:?} after {} evaluations",
            record.report.best_objective, record.report.best_params, record.report.evaluations
        )],
        invariant_failure: false,
    })
}

pub fn cmd_verify(scenario: &Scenario, out: &Path) -> CliResult<Outcome> {
    let suites = scenario.verify.as_ref().map_or(Suite::ALL.to_vec(), |v| v.suites.clone());
    let results = suites
        .iter()
        .map(|&s| run_suite(s, scenario))
        .collect::<CliResult<Vec<_>>>()?;
    let failed = results.iter().any(|r| r.status == Status::Fail);
    let file = write(out.join("verify.csv"), &verify_csv(&results, &scenario.hash()))?;
    Ok(Outcome {
        files: vec![file],
        report: results
            .iter()
            .map(|r| {
                format!(
                    "{:<20} {:<4} value {:.3e} (tolerance {:.1e}) {}",
                    r.suite.name(),
                    r.status.as_str(),
                    r.value,
                    r.tolerance,
                    r.detail
                )
            })
            .collect(),
        invariant_failure: failed,
    })
}

// ---------------------------------------------------------------------------
// Property suites

/// Tolerance on net displacement for closure, reversal and single-piece checks.
pub const CLOSURE_TOL: f64 = 1e-8;
/// Tolerance on the pacing difference.
pub const PACING_TOL: f64 = 1e-7;
/// Tolerance on planted-foot drift.
pub const STANCE_TOL: f64 = 1e-8;
/// Tolerance on `‖M·A + N‖∞`.
pub const RESIDUAL_TOL: f64 = 1e-10;
/// Knots used when a Fourier gait has to become a waypoint loop.
pub const RESAMPLE_KNOTS: usize = 1000;
/// Steps, as fractions of the period, for the convergence-order fit.
pub const ORDER_STEPS: [f64; 5] = [0.1, 0.03, 0.01, 0.003, 0.001];

/// Monotone cubic warp of `[0, T]` onto itself.
pub fn cubic_warp(period: f64) -> impl Fn(f64) -> f64 {
    move |t| {
        let u = t / period;
        period * (u + 0.3 * u * (1.0 - u) * (1.0 - 2.0 * u))
    }
}

/// Least-squares slope of `log e` against `log h`.
pub fn loglog_slope(points: &[(f64, f64)]) -> f64 {
    let n = points.len() as f64;
    let (xs, ys): (Vec<f64>, Vec<f64>) = points.iter().map(|(h, e)| (h.ln(), e.ln())).unzip();
    let (mx, my) = (xs.iter().sum::<f64>() / n, ys.iter().sum::<f64>() / n);
    let sxy: f64 = xs.iter().zip(&ys).map(|(x, y)| (x - mx) * (y - my)).sum();
    let sxx: f64 = xs.iter().map(|x| (x - mx).powi(2)).sum();
    sxy / sxx
}

fn displacement(provider: &ConnectionProvider, gait: &Gait, settings: &IntegratorSettings) -> crate::Result<Twist> {
    net_displacement(&integrate_gait(provider, gait, settings)?).map(|d| d.total)
}

fn verdict(ok: bool) -> Status {
    if ok {
        Status::Pass
    } else {
        Status::Fail
    }
}

pub fn run_suite(suite: Suite, scenario: &Scenario) -> CliResult<SuiteResult> {
    let ctx = suite.name();
    let provider = scenario.model.provider().map_err(CliError::model("model"))?;
    let gait = scenario.gait.gait().map_err(CliError::model("gait"))?;
    let settings = scenario.integrator.settings();
    let m = CliError::model(ctx);
    let result = |status, value, tolerance, detail: String| SuiteResult {
        suite,
        status,
        value,
        tolerance,
        detail,
    };
    let r = match suite {
        Suite::LoopClosure => {
            let closure = displacement(&provider, &gait, &settings).map_err(m)?.norm();
            let mut points = Vec::new();
            for frac in ORDER_STEPS {
                let s = IntegratorSettings {
                    step: frac * gait.period(),
                    ..settings
                };
                let e = displacement(&provider, &gait, &s).map_err(CliError::model(ctx))?.norm();
                if e > 1e-12 {
                    points.push((s.step, e));
                }
            }
            let (slope_ok, note) = if points.len() >= 2 {
                let slope = loglog_slope(&points);
                ((slope - 4.0).abs() <= 0.3, format!("order slope {slope:.3}"))
            } else {
                (true, "error below resolution at every step".into())
            };
            result(verdict(closure <= CLOSURE_TOL && slope_ok), closure, CLOSURE_TOL, note)
        }
        Suite::ZeroDisplacement => {
            let traj = integrate_gait(&provider, &gait, &settings).map_err(m)?;
            let value = net_displacement(&traj).map_err(CliError::model(ctx))?.total.norm();
            let pieces: std::collections::BTreeSet<String> =
                traj.samples.iter().map(|s| contact_text(&s.contacts)).collect();
            let single = traj.events.is_empty();
            let detail = format!("contact sets used: {}", pieces.into_iter().collect::<Vec<_>>().join(" "));
            result(verdict(single && value <= CLOSURE_TOL), value, CLOSURE_TOL, detail)
        }
        Suite::Continuity => {
            let traj = integrate_gait(&provider, &gait, &settings).map_err(m)?;
            let ratio = continuity_ratio(&traj);
            let increasing = traj.samples.windows(2).all(|w| w[1].t > w[0].t);
            let detail = format!(
                "C = {:.6e}; {} events over {} cycles",
                traj.max_twist_norm,
                traj.events.len(),
                traj.cycles
            );
            result(verdict(increasing && ratio <= 1.0 + 1e-9), ratio, 1.0, detail)
        }
        Suite::Reversal => {
            let back = gait.retraced(RESAMPLE_KNOTS).map_err(m)?;
            let value = displacement(&provider, &back, &settings).map_err(CliError::model(ctx))?.norm();
            result(verdict(value <= CLOSURE_TOL), value, CLOSURE_TOL, "retraced loop".into())
        }
        Suite::Pacing => {
            let base = match gait.kind() {
                GaitKind::Fourier(_) => gait.resample(RESAMPLE_KNOTS).map_err(m)?,
                GaitKind::Waypoints(_) => gait.clone(),
            };
            let warped = base
                .reparameterize(cubic_warp(base.period()), RESAMPLE_KNOTS)
                .map_err(CliError::model(ctx))?;
            let a = displacement(&provider, &base, &settings).map_err(CliError::model(ctx))?;
            let b = displacement(&provider, &warped, &settings).map_err(CliError::model(ctx))?;
            let value = (a - b).norm();
            result(verdict(value <= PACING_TOL), value, PACING_TOL, format!("|g| = {:.6e}", a.norm()))
        }
        Suite::Stance => match scenario.model.pinned_legs() {
            None => result(Status::Skip, 0.0, STANCE_TOL, "model has no pinned feet".into()),
            Some(model) => {
                let traj = integrate_gait(&provider, &gait, &settings).map_err(m)?;
                let drifts = stance_drift(&traj, &model).map_err(CliError::model(ctx))?;
                let value = drifts.iter().map(|d| d.1).fold(0.0, f64::max);
                result(
                    verdict(value <= STANCE_TOL),
                    value,
                    STANCE_TOL,
                    format!("{} stance phases", drifts.len()),
                )
            }
        },
        Suite::ConstraintResidual => {
            if !matches!(provider, ConnectionProvider::Constraint(_)) {
                result(Status::Skip, 0.0, RESIDUAL_TOL, "model is not constraint based".into())
            } else {
                let mut rng = ChaCha8Rng::seed_from_u64(scenario.seed);
                let (mut worst, mut singular) = (0.0_f64, 0);
                for _ in 0..100 {
                    let r: Vec<f64> = (0..provider.dim()).map(|_| rng.gen_range(-1.5..=1.5)).collect();
                    let r = Shape::new(&r);
                    let sys = provider.constraint_system(&r).expect("constraint provider").map_err(CliError::model(ctx))?;
                    match provider.eval(&r) {
                        Ok((_, a)) => worst = worst.max(sys.residual(&a)),
                        Err(Error::SingularConstraint { .. }) => singular += 1,
                        Err(e) => return Err(CliError::model(ctx)(e)),
                    }
                }
                result(
                    verdict(worst <= RESIDUAL_TOL),
                    worst,
                    RESIDUAL_TOL,
                    format!("100 random shapes, {singular} singular"),
                )
            }
        }
    };
    Ok(r)
}

#[cfg(test)]
mod tests {
    use super::*;

    const CRAWLER: &str = r#"
seed = 5

[model]
kind = "crawler"

[gait]
kind = "sinusoid"
mean = [0.0, 0.0]
amplitude = [0.4, 0.4]
phase = [0.0, 1.5707963267948966]

[integrator]
step = 0.002
cycles = 2
"#;

    #[test]
    fn scenario_parses_with_defaults() {
        let s = Scenario::parse(CRAWLER).unwrap();
        assert_eq!(s.seed, 5);
        assert_eq!(s.integrator.event_tol, 1e-10);
        assert_eq!(s.model, ModelSpec::Crawler { fd_step: DEFAULT_JACOBIAN_STEP });
        let again = Scenario::parse(&s.canonical()).unwrap();
        assert_eq!(again, s);
    }

    #[test]
    fn unknown_keys_are_rejected() {
        for (from, to) in [
            ("step = 0.002", "stepp = 0.002"),
            ("kind = \"crawler\"", "kind = \"crawler\"\nlegs = 3"),
            ("seed = 5", "seed = 5\nextra = 1"),
            ("kind = \"sinusoid\"", "kind = \"sinusiod\""),
        ] {
            let text = CRAWLER.replace(from, to);
            let err = Scenario::parse(&text).unwrap_err();
            assert_eq!(err.exit_code(), 2, "{err}");
        }
    }

    #[test]
    fn semantic_errors_name_the_block() {
        let text = CRAWLER.replace("mean = [0.0, 0.0]", "mean = [0.0]");
        let err = Scenario::parse(&text).unwrap_err();
        assert!(err.to_string().starts_with("gait"), "{err}");
        let text = CRAWLER.replace("cycles = 2", "cycles = 0");
        assert!(Scenario::parse(&text).unwrap_err().to_string().starts_with("integrator"));
    }

    #[test]
    fn overrides_take_precedence() {
        let mut s = Scenario::parse(CRAWLER).unwrap();
        let before = s.hash();
        s.apply(&Overrides {
            step: Some(0.01),
            cycles: Some(3),
            seed: Some(9),
            out: None,
        })
        .unwrap();
        assert_eq!((s.integrator.step, s.integrator.cycles, s.seed), (0.01, 3, 9));
        assert_ne!(s.hash(), before);
        let moved = s.hash();
        s.apply(&Overrides {
            out: Some("elsewhere".into()),
            ..Overrides::default()
        })
        .unwrap();
        assert_eq!(s.hash(), moved);
    }

    #[test]
    fn numbers_round_trip() {
        for v in [0.1, 1.0 / 3.0, -2.5e-300, 6.02214076e23, f64::MIN_POSITIVE, 5e-324] {
            assert_eq!(parse_f64(&fmt_f64(v)).unwrap(), v);
        }
    }

    #[test]
    fn trajectory_table_round_trips() {
        let s = Scenario::parse(CRAWLER).unwrap();
        let provider = s.model.provider().unwrap();
        let traj = integrate_gait(&provider, &s.gait.gait().unwrap(), &s.integrator.settings()).unwrap();
        let text = trajectory_csv(&traj.samples, &s.hash());
        assert_eq!(read_trajectory_csv(&text).unwrap(), traj.samples);
        assert_eq!(metadata(&text, "scenario_sha256"), Some(s.hash().as_str()));
    }

    #[test]
    fn field_table_round_trips() {
        let provider = ConnectionProvider::piecewise(LeggedModel::crawler());
        let field = sample_field(&provider, &GridSpec::square(2, -1.0, 1.0, 7)).unwrap();
        let curv = curvature(&field).unwrap();
        for c in [None, Some(&curv)] {
            let table = read_field_csv(&field_csv(&field, c, "x")).unwrap();
            assert_eq!(table.field, field);
            assert_eq!(table.curvature, c.map(|c| c.values.clone()));
        }
    }

    #[test]
    fn every_model_kind_builds() {
        let models = [
            "kind = \"constant\"\ncolumns = [[1.0, 0.0, 0.0], [0.0, 0.0, 1.0]]",
            "kind = \"jacobian\"\ntestbed = \"chain-tip\"",
            "kind = \"swimmer\"\nquadrature = \"midpoint\"\npoints = 16",
            "kind = \"crawler\"",
            "kind = \"slip\"\nfoot_scale = 10.0",
            "kind = \"many-legged\"\nfeet_per_link = 8",
        ];
        for m in models {
            let text = format!(
                "[model]\n{m}\n[gait]\nkind = \"waypoints\"\npoints = [[0.0, 0.0], [0.3, 0.0], [0.3, 0.3]]\n"
            );
            let s = Scenario::parse(&text).unwrap_or_else(|e| panic!("{m}: {e}"));
            assert_eq!(s.model.provider().unwrap().dim(), 2);
            assert_eq!(Scenario::parse(&s.canonical()).unwrap(), s);
        }
    }

    #[test]
    fn singular_model_maps_to_numerical_abort() {
        let err = CliError::model("simulate")(Error::SingularConstraint { condition: 1e20 });
        assert_eq!(err.exit_code(), 3);
    }

    #[test]
    fn warp_is_monotone_and_fixes_ends() {
        let w = cubic_warp(2.0);
        assert_eq!(w(0.0), 0.0);
        assert!((w(2.0) - 2.0).abs() < 1e-15);
        assert!((0..1000).all(|k| w((k + 1) as f64 * 0.002) > w(k as f64 * 0.002)));
        assert!((w(0.5) - 0.5).abs() > 0.01);
    }
}
