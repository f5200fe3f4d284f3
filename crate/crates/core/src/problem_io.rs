//! Instance and solution files, the random corridor generator and the
//! initial time allocation.

use std::fmt::Write as _;
use std::path::Path;

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use serde_json::Value;

use crate::basis::{BasisKind, ControlPointBasis};
use crate::constraints::{check_feasibility, DerivBound, DerivBounds, FeasibilityReport, Polyhedron};
use crate::error::{Error, Result};
use crate::objective::StageWeights;
use crate::polyspline::{PiecewiseTrajectory, SegmentCoeffs, SplineShape};
use crate::problem::Problem;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ShapeSpec {
    pub degree: usize,
    pub dim: usize,
    pub segments: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GoalSpec {
    /// Per-stage phase-state goals `x_{k,g}`.
    pub stage: Vec<Vec<f64>>,
    pub terminal: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct WeightSpec {
    /// Diagonals of `Q_k`.
    pub q: Vec<Vec<f64>>,
    /// Diagonal of `Q_N`.
    pub q_terminal: Vec<f64>,
    pub eta: Vec<f64>,
    pub w: Vec<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub lower_energy: Option<Vec<Vec<f64>>>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PolyhedronSpec {
    /// Outward normals, one row per face.
    pub normals: Vec<Vec<f64>>,
    pub offsets: Vec<f64>,
}

impl From<&Polyhedron> for PolyhedronSpec {
    fn from(p: &Polyhedron) -> Self {
        Self {
            normals: p.normals.row_iter().map(|r| r.iter().copied().collect()).collect(),
            offsets: p.offsets.iter().copied().collect(),
        }
    }
}

/// On-disk problem description.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct InstanceFile {
    pub shape: ShapeSpec,
    pub x0: Vec<f64>,
    pub goals: GoalSpec,
    pub weights: WeightSpec,
    pub corridor: Vec<PolyhedronSpec>,
    pub bounds: Vec<DerivBound>,
    pub t_min: f64,
    pub times: Option<Vec<f64>>,
    pub basis: BasisKind,
}

fn field_err(field: impl Into<String>, message: impl Into<String>) -> Error {
    Error::Instance {
        field: field.into(),
        message: message.into(),
    }
}

fn check_len(field: impl Into<String>, expected: usize, got: usize) -> Result<()> {
    if expected == got {
        Ok(())
    } else {
        Err(field_err(field, format!("expected length {expected}, found {got}")))
    }
}

fn check_finite(field: &str, values: &[f64]) -> Result<()> {
    match values.iter().position(|v| !v.is_finite()) {
        Some(i) => Err(field_err(format!("{field}[{i}]"), "value is not finite")),
        None => Ok(()),
    }
}

fn check_nonneg(field: &str, values: &[f64]) -> Result<()> {
    check_finite(field, values)?;
    match values.iter().position(|&v| v < 0.0) {
        Some(i) => Err(field_err(format!("{field}[{i}]"), "weight must be nonnegative")),
        None => Ok(()),
    }
}

impl InstanceFile {
    /// Checks every structural invariant, reporting the first offending field.
    pub fn validate(&self) -> Result<SplineShape> {
        let shape = SplineShape::new(self.shape.degree, self.shape.dim, self.shape.segments)
            .map_err(|e| field_err("shape", e.to_string()))?;
        let n = shape.segments();
        let md = shape.state_dim();
        let d = shape.dim();
        check_len("x0", md, self.x0.len())?;
        check_finite("x0", &self.x0)?;
        check_len("goals.stage", n, self.goals.stage.len())?;
        for (k, g) in self.goals.stage.iter().enumerate() {
            check_len(format!("goals.stage[{k}]"), md, g.len())?;
            check_finite(&format!("goals.stage[{k}]"), g)?;
        }
        check_len("goals.terminal", md, self.goals.terminal.len())?;
        check_finite("goals.terminal", &self.goals.terminal)?;
        let w = &self.weights;
        check_len("weights.q", n, w.q.len())?;
        for (k, q) in w.q.iter().enumerate() {
            check_len(format!("weights.q[{k}]"), md, q.len())?;
            check_nonneg(&format!("weights.q[{k}]"), q)?;
        }
        check_len("weights.q_terminal", md, w.q_terminal.len())?;
        check_nonneg("weights.q_terminal", &w.q_terminal)?;
        check_len("weights.eta", n, w.eta.len())?;
        check_nonneg("weights.eta", &w.eta)?;
        check_len("weights.w", n, w.w.len())?;
        check_nonneg("weights.w", &w.w)?;
        if let Some(lower) = &w.lower_energy {
            check_len("weights.lower_energy", n, lower.len())?;
            for (k, row) in lower.iter().enumerate() {
                check_len(format!("weights.lower_energy[{k}]"), shape.half_order() - 1, row.len())?;
                check_nonneg(&format!("weights.lower_energy[{k}]"), row)?;
            }
        }
        if !self.corridor.is_empty() {
            check_len("corridor", n, self.corridor.len())?;
        }
        for (k, poly) in self.corridor.iter().enumerate() {
            if poly.normals.is_empty() {
                return Err(field_err(
                    format!("corridor[{k}].normals"),
                    "polyhedron needs at least one face",
                ));
            }
            check_len(format!("corridor[{k}].offsets"), poly.normals.len(), poly.offsets.len())?;
            check_finite(&format!("corridor[{k}].offsets"), &poly.offsets)?;
            for (f, row) in poly.normals.iter().enumerate() {
                let field = format!("corridor[{k}].normals[{f}]");
                check_len(field.clone(), d, row.len())?;
                check_finite(&field, row)?;
                if row.iter().all(|&v| v == 0.0) {
                    return Err(field_err(field, "face normal is zero"));
                }
            }
        }
        let mut seen = Vec::new();
        for (i, b) in self.bounds.iter().enumerate() {
            let field = format!("bounds[{i}]");
            if b.order == 0 || b.order >= shape.half_order() {
                return Err(field_err(
                    field,
                    format!("order must lie in 1..={}", shape.half_order() - 1),
                ));
            }
            if !(b.lower < 0.0 && b.upper > 0.0) || !b.lower.is_finite() || !b.upper.is_finite() {
                return Err(field_err(field, "bounds must satisfy lower < 0 < upper"));
            }
            if seen.contains(&b.order) {
                return Err(field_err(field, format!("duplicate bound for order {}", b.order)));
            }
            seen.push(b.order);
        }
        if !(self.t_min > 0.0) || !self.t_min.is_finite() {
            return Err(field_err("t_min", "must be positive"));
        }
        if let Some(times) = &self.times {
            check_len("times", n, times.len())?;
            if let Some(k) = times.iter().position(|&t| !(t > 0.0) || !t.is_finite()) {
                return Err(field_err(format!("times[{k}]"), "durations must be positive"));
            }
        }
        Ok(shape)
    }

    /// Builds the problem with an explicit basis.
    pub fn to_problem_with_basis(&self, basis: ControlPointBasis) -> Result<Problem> {
        let shape = self.validate()?;
        let vec = |v: &[f64]| DVector::from_column_slice(v);
        let w = &self.weights;
        let weights = StageWeights {
            q: w.q.iter().map(|q| DMatrix::from_diagonal(&vec(q))).collect(),
            x_goal: self.goals.stage.iter().map(|g| vec(g)).collect(),
            eta: w.eta.clone(),
            w: w.w.clone(),
            q_terminal: DMatrix::from_diagonal(&vec(&w.q_terminal)),
            x_goal_terminal: vec(&self.goals.terminal),
            lower_energy: w.lower_energy.clone(),
        };
        let corridor = self
            .corridor
            .iter()
            .enumerate()
            .map(|(k, p)| {
                let s = p.normals.len();
                let flat: Vec<f64> = p.normals.iter().flatten().copied().collect();
                Polyhedron::new(DMatrix::from_row_slice(s, shape.dim(), &flat), vec(&p.offsets))
                    .map_err(|e| field_err(format!("corridor[{k}]"), e.to_string()))
            })
            .collect::<Result<Vec<_>>>()?;
        let mut bounds = DerivBounds::none();
        for (i, b) in self.bounds.iter().enumerate() {
            bounds
                .set(b.order, b.lower, b.upper)
                .map_err(|e| field_err(format!("bounds[{i}]"), e.to_string()))?;
        }
        let problem = Problem {
            shape,
            x0: vec(&self.x0),
            weights,
            corridor,
            bounds,
            t_min: self.t_min,
            basis,
        };
        problem.validate().map_err(|e| field_err("weights", e.to_string()))?;
        Ok(problem)
    }

    /// Builds the problem; table-backed bases must be supplied through
    /// [`InstanceFile::to_problem_with_basis`].
    pub fn to_problem(&self) -> Result<Problem> {
        match self.basis {
            BasisKind::Bernstein => self.to_problem_with_basis(ControlPointBasis::bernstein()),
            BasisKind::Minvo => Err(field_err("basis", "minvo requires a conversion table file")),
        }
    }

    /// Instance describing `problem`.
    pub fn from_problem(problem: &Problem, times: Option<Vec<f64>>) -> Self {
        let diag = |m: &DMatrix<f64>| m.diagonal().iter().copied().collect::<Vec<f64>>();
        let w = &problem.weights;
        Self {
            shape: ShapeSpec {
                degree: problem.shape.degree(),
                dim: problem.shape.dim(),
                segments: problem.shape.segments(),
            },
            x0: problem.x0.iter().copied().collect(),
            goals: GoalSpec {
                stage: w.x_goal.iter().map(|g| g.iter().copied().collect()).collect(),
                terminal: w.x_goal_terminal.iter().copied().collect(),
            },
            weights: WeightSpec {
                q: w.q.iter().map(diag).collect(),
                q_terminal: diag(&w.q_terminal),
                eta: w.eta.clone(),
                w: w.w.clone(),
                lower_energy: w.lower_energy.clone(),
            },
            corridor: problem.corridor.iter().map(PolyhedronSpec::from).collect(),
            bounds: problem.bounds.entries().to_vec(),
            t_min: problem.t_min,
            times,
            basis: problem.basis.kind(),
        }
    }
}

/// Formats `value` as JSON with two-space indentation, numeric arrays on one
/// line and floats in 17-significant-digit exponent form.
pub fn to_canonical_json(value: &Value) -> String {
    let mut out = String::new();
    write_value(value, 0, &mut out);
    out.push('\n');
    out
}

fn write_number(n: &serde_json::Number, out: &mut String) {
    if let Some(i) = n.as_i64() {
        let _ = write!(out, "{i}");
    } else if let Some(u) = n.as_u64() {
        let _ = write!(out, "{u}");
    } else {
        let f = n.as_f64().expect("finite number");
        let _ = write!(out, "{f:.16e}");
    }
}

fn is_scalar(v: &Value) -> bool {
    !matches!(v, Value::Array(_) | Value::Object(_))
}

fn write_value(value: &Value, indent: usize, out: &mut String) {
    let pad = |n: usize| "  ".repeat(n);
    match value {
        Value::Null => out.push_str("null"),
        Value::Bool(b) => out.push_str(if *b { "true" } else { "false" }),
        Value::Number(n) => write_number(n, out),
        Value::String(s) => out.push_str(&serde_json::to_string(s).expect("string serializes")),
        Value::Array(items) if items.is_empty() => out.push_str("[]"),
        Value::Array(items) if items.iter().all(is_scalar) => {
            out.push('[');
            for (i, item) in items.iter().enumerate() {
                if i > 0 {
                    out.push_str(", ");
                }
                write_value(item, indent, out);
            }
            out.push(']');
        }
        Value::Array(items) => {
            out.push_str("[\n");
            for (i, item) in items.iter().enumerate() {
                out.push_str(&pad(indent + 1));
                write_value(item, indent + 1, out);
                out.push_str(if i + 1 < items.len() { ",\n" } else { "\n" });
            }
            out.push_str(&pad(indent));
            out.push(']');
        }
        Value::Object(map) if map.is_empty() => out.push_str("{}"),
        Value::Object(map) => {
            out.push_str("{\n");
            for (i, (key, item)) in map.iter().enumerate() {
                out.push_str(&pad(indent + 1));
                out.push_str(&serde_json::to_string(key).expect("key serializes"));
                out.push_str(": ");
                write_value(item, indent + 1, out);
                out.push_str(if i + 1 < map.len() { ",\n" } else { "\n" });
            }
            out.push_str(&pad(indent));
            out.push('}');
        }
    }
}

/// Serializes any value canonically.
pub fn canonical_string<T: Serialize>(value: &T) -> Result<String> {
    let v = serde_json::to_value(value).map_err(|e| Error::Input(format!("serialization failed: {e}")))?;
    Ok(to_canonical_json(&v))
}

pub fn parse_instance(text: &str) -> Result<InstanceFile> {
    let inst: InstanceFile = serde_json::from_str(text)
        .map_err(|e| field_err(format!("line {} column {}", e.line(), e.column()), e.to_string()))?;
    inst.validate()?;
    Ok(inst)
}

pub fn load_instance(path: &Path) -> Result<InstanceFile> {
    let text =
        std::fs::read_to_string(path).map_err(|e| Error::Input(format!("cannot read {}: {e}", path.display())))?;
    parse_instance(&text)
}

pub fn save_instance(instance: &InstanceFile, path: &Path) -> Result<()> {
    instance.validate()?;
    let text = canonical_string(instance)?;
    std::fs::write(path, text).map_err(|e| Error::Input(format!("cannot write {}: {e}", path.display())))
}

/// Rest-to-rest duration over distance `length` under speed and acceleration
/// limits: trapezoidal profile, triangular when the cruise speed is not
/// reached.
pub fn rest_to_rest_time(length: f64, v_max: f64, a_max: f64) -> f64 {
    if length <= 0.0 {
        0.0
    } else if length < v_max * v_max / a_max {
        2.0 * (length / a_max).sqrt()
    } else {
        length / v_max + v_max / a_max
    }
}

/// Per-segment durations between consecutive waypoints, floored at `t_min`.
pub fn initial_time_allocation(waypoints: &[DVector<f64>], v_max: f64, a_max: f64, t_min: f64) -> Result<Vec<f64>> {
    if !(v_max > 0.0) || !(a_max > 0.0) {
        return Err(Error::Input("speed and acceleration limits must be positive".into()));
    }
    if !(t_min > 0.0) {
        return Err(Error::Input("t_min must be positive".into()));
    }
    if waypoints.len() < 2 {
        return Err(Error::Input("at least two waypoints are required".into()));
    }
    Ok(waypoints
        .windows(2)
        .map(|w| rest_to_rest_time((&w[1] - &w[0]).norm(), v_max, a_max).max(t_min))
        .collect())
}

/// Geometry and weight settings of [`generate_random_corridor`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CorridorParams {
    pub degree: usize,
    pub step_min: f64,
    pub step_max: f64,
    /// In `[0, 1]`; 1 walks strictly along coordinate axes.
    pub axis_bias: f64,
    /// Inflation of each segment's bounding box.
    pub margin: f64,
    /// Radius of the tube around the waypoint path kept inside every polyhedron.
    pub core_radius: f64,
    pub facets_min: usize,
    pub facets_max: usize,
    pub v_max: f64,
    pub a_max: f64,
    pub t_min: f64,
    pub eta: f64,
    pub time_weight: f64,
    pub terminal_weight: f64,
}

impl Default for CorridorParams {
    fn default() -> Self {
        Self {
            degree: 5,
            step_min: 1.5,
            step_max: 3.0,
            axis_bias: 0.7,
            margin: 0.6,
            core_radius: 0.25,
            facets_min: 6,
            facets_max: 117,
            v_max: 2.0,
            a_max: 2.0,
            t_min: 0.1,
            eta: 1.0,
            time_weight: 20.0,
            terminal_weight: 100.0,
        }
    }
}

impl CorridorParams {
    fn validate(&self, dim: usize) -> Result<()> {
        let bad = |m: &str| Err(Error::Input(format!("corridor parameters: {m}")));
        if !(self.core_radius > 0.0) {
            return bad("core_radius must be positive");
        }
        if !(self.margin >= self.core_radius) {
            return bad("margin must be at least core_radius, otherwise the tube leaves the box");
        }
        if !(self.step_min > 0.0 && self.step_max >= self.step_min) {
            return bad("need 0 < step_min <= step_max");
        }
        if !(0.0..=1.0).contains(&self.axis_bias) {
            return bad("axis_bias must lie in [0, 1]");
        }
        if self.facets_min < 2 * dim || self.facets_max < self.facets_min {
            return bad("facet range must satisfy 2 * dim <= facets_min <= facets_max");
        }
        if !(self.v_max > 0.0 && self.a_max > 0.0 && self.t_min > 0.0) {
            return bad("v_max, a_max and t_min must be positive");
        }
        Ok(())
    }
}

fn random_unit(rng: &mut ChaCha8Rng, d: usize) -> DVector<f64> {
    loop {
        let v = DVector::from_fn(d, |_, _| rng.random_range(-1.0..1.0));
        let n = v.norm();
        if n > 0.1 && n <= 1.0 {
            return v / n;
        }
    }
}

/// Random corridor instance: an axis-biased random walk of waypoints, each
/// segment wrapped in its inflated bounding box cut by random halfspaces that
/// keep a tube of radius `core_radius` around the segment. Consecutive
/// polyhedra therefore share a ball around their common waypoint.
pub fn generate_random_corridor(
    seed: u64,
    segments: usize,
    dim: usize,
    params: &CorridorParams,
) -> Result<InstanceFile> {
    if segments == 0 {
        return Err(Error::Input("at least one segment is required".into()));
    }
    params.validate(dim)?;
    let shape = SplineShape::new(params.degree, dim, segments)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);

    let mut waypoints = vec![DVector::zeros(dim)];
    let mut heading: Option<DVector<f64>> = None;
    for _ in 0..segments {
        let axis = rng.random_range(0..dim);
        let mut dir = DVector::zeros(dim);
        dir[axis] = if rng.random::<bool>() { 1.0 } else { -1.0 };
        let dir = dir * params.axis_bias + random_unit(&mut rng, dim) * (1.0 - params.axis_bias);
        let mut dir = if dir.norm() > 1e-9 {
            dir.normalize()
        } else {
            random_unit(&mut rng, dim)
        };
        if let Some(h) = &heading {
            if dir.dot(h) < 0.0 {
                dir = -dir;
            }
        }
        let step = rng.random_range(params.step_min..=params.step_max);
        let next = waypoints.last().expect("nonempty") + &dir * step;
        waypoints.push(next);
        heading = Some(dir);
    }

    let mut corridor = Vec::with_capacity(segments);
    for k in 0..segments {
        let (a, b) = (&waypoints[k], &waypoints[k + 1]);
        let lo: Vec<f64> = (0..dim).map(|i| a[i].min(b[i]) - params.margin).collect();
        let hi: Vec<f64> = (0..dim).map(|i| a[i].max(b[i]) + params.margin).collect();
        let aabb = Polyhedron::from_box(&lo, &hi)?;
        let u: f64 = rng.random();
        let span = (params.facets_max - params.facets_min) as f64;
        let facets = params.facets_min + (span * u * u * u).round() as usize;
        let extra = facets.saturating_sub(2 * dim);
        let mut normals = aabb.normals.clone().resize_vertically(2 * dim + extra, 0.0);
        let mut offsets = aabb.offsets.clone().resize_vertically(2 * dim + extra, 0.0);
        for f in 0..extra {
            let n = random_unit(&mut rng, dim);
            let support = n.dot(a).max(n.dot(b)) + params.core_radius;
            let slack = rng.random::<f64>() * (params.margin - params.core_radius);
            normals.set_row(2 * dim + f, &n.transpose());
            offsets[2 * dim + f] = support + slack;
        }
        corridor.push(Polyhedron::new(normals, offsets)?);
    }

    let md = shape.state_dim();
    let embed = |p: &DVector<f64>| {
        let mut x = vec![0.0; md];
        x[..dim].copy_from_slice(p.as_slice());
        x
    };
    let times = initial_time_allocation(&waypoints, params.v_max, params.a_max, params.t_min)?;
    let mut bounds = Vec::new();
    for (order, limit) in [(1, params.v_max), (2, params.a_max)] {
        if order < shape.half_order() {
            bounds.push(DerivBound {
                order,
                lower: -limit,
                upper: limit,
            });
        }
    }
    let instance = InstanceFile {
        shape: ShapeSpec {
            degree: params.degree,
            dim,
            segments,
        },
        x0: embed(&waypoints[0]),
        goals: GoalSpec {
            stage: waypoints[..segments].iter().map(embed).collect(),
            terminal: embed(&waypoints[segments]),
        },
        weights: WeightSpec {
            q: vec![vec![0.0; md]; segments],
            q_terminal: vec![params.terminal_weight; md],
            eta: vec![params.eta; segments],
            w: vec![params.time_weight; segments],
            lower_energy: None,
        },
        corridor: corridor.iter().map(PolyhedronSpec::from).collect(),
        bounds,
        t_min: params.t_min,
        times: Some(times),
        basis: BasisKind::Bernstein,
    };
    instance.validate()?;
    Ok(instance)
}

/// Waypoints of a generated instance: the stage goals' positions followed by
/// the terminal goal's.
pub fn instance_waypoints(instance: &InstanceFile) -> Vec<DVector<f64>> {
    let d = instance.shape.dim;
    instance
        .goals
        .stage
        .iter()
        .chain(std::iter::once(&instance.goals.terminal))
        .map(|g| DVector::from_column_slice(&g[..d]))
        .collect()
}

/// One solved segment: duration and coefficient rows `t^0..t^n`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SegmentSpec {
    pub duration: f64,
    pub coeffs: Vec<Vec<f64>>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SolutionFile {
    pub status: String,
    pub degree: usize,
    pub dim: usize,
    pub durations: Vec<f64>,
    pub segments: Vec<SegmentSpec>,
    pub cost: crate::objective::CostBreakdown,
}

impl SolutionFile {
    pub fn from_trajectory(traj: &PiecewiseTrajectory, status: &str, cost: crate::objective::CostBreakdown) -> Self {
        Self {
            status: status.to_string(),
            degree: traj.shape.degree(),
            dim: traj.shape.dim(),
            durations: traj.durations(),
            segments: traj
                .segments
                .iter()
                .map(|s| SegmentSpec {
                    duration: s.duration,
                    coeffs: s.coeffs.row_iter().map(|r| r.iter().copied().collect()).collect(),
                })
                .collect(),
            cost,
        }
    }

    pub fn to_trajectory(&self) -> Result<PiecewiseTrajectory> {
        let shape = SplineShape::new(self.degree, self.dim, self.segments.len().max(1))
            .map_err(|e| field_err("degree", e.to_string()))?;
        if self.segments.is_empty() {
            return Err(field_err("segments", "solution has no segments"));
        }
        let segments = self
            .segments
            .iter()
            .enumerate()
            .map(|(k, s)| {
                check_len(format!("segments[{k}].coeffs"), self.degree + 1, s.coeffs.len())?;
                for (r, row) in s.coeffs.iter().enumerate() {
                    check_len(format!("segments[{k}].coeffs[{r}]"), self.dim, row.len())?;
                }
                let flat: Vec<f64> = s.coeffs.iter().flatten().copied().collect();
                SegmentCoeffs::new(DMatrix::from_row_slice(self.degree + 1, self.dim, &flat), s.duration)
                    .map_err(|e| field_err(format!("segments[{k}].duration"), e.to_string()))
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(PiecewiseTrajectory { shape, segments })
    }
}

pub fn load_solution(path: &Path) -> Result<SolutionFile> {
    let text =
        std::fs::read_to_string(path).map_err(|e| Error::Input(format!("cannot read {}: {e}", path.display())))?;
    serde_json::from_str(&text)
        .map_err(|e| field_err(format!("line {} column {}", e.line(), e.column()), e.to_string()))
}

/// Tolerances applied by [`validate_solution`].
pub const CONTINUITY_TOL: f64 = 1e-9;
pub const CONTROL_POINT_TOL: f64 = 1e-9;
pub const SAMPLED_TOL: f64 = 1e-6;

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ValidationReport {
    pub segments: usize,
    pub samples: usize,
    pub junction_residuals: Vec<f64>,
    pub max_junction_residual: f64,
    pub worst_junction: Option<usize>,
    pub min_duration: f64,
    pub feasibility: FeasibilityReport,
    pub continuity_ok: bool,
    pub control_points_ok: bool,
    pub samples_ok: bool,
    pub durations_ok: bool,
    pub clean: bool,
}

/// Continuity, duration floor and constraint margins of a trajectory.
pub fn validate_solution(traj: &PiecewiseTrajectory, problem: &Problem, samples: usize) -> Result<ValidationReport> {
    if traj.shape.degree() != problem.shape.degree()
        || traj.shape.dim() != problem.shape.dim()
        || traj.segments.len() != problem.shape.segments()
    {
        return Err(Error::Input(format!(
            "solution shape (n={}, d={}, N={}) does not match the instance (n={}, d={}, N={})",
            traj.shape.degree(),
            traj.shape.dim(),
            traj.segments.len(),
            problem.shape.degree(),
            problem.shape.dim(),
            problem.shape.segments()
        )));
    }
    let residuals = traj.junction_residuals();
    let (worst_junction, max_junction_residual) = residuals.iter().enumerate().fold(
        (None, 0.0),
        |(wi, wv), (i, &v)| if v > wv { (Some(i), v) } else { (wi, wv) },
    );
    let feasibility = check_feasibility(traj, &problem.corridor, &problem.bounds, &problem.basis, samples)?;
    let min_duration = traj.durations().into_iter().fold(f64::INFINITY, f64::min);
    let continuity_ok = max_junction_residual < CONTINUITY_TOL;
    let control_points_ok = feasibility.control_point_violation <= CONTROL_POINT_TOL;
    let samples_ok = feasibility.sampled_violation <= SAMPLED_TOL;
    let durations_ok = min_duration >= problem.t_min * (1.0 - 1e-9);
    Ok(ValidationReport {
        segments: traj.segments.len(),
        samples,
        junction_residuals: residuals,
        max_junction_residual,
        worst_junction,
        min_duration,
        feasibility,
        continuity_ok,
        control_points_ok,
        samples_ok,
        durations_ok,
        clean: continuity_ok && control_points_ok && samples_ok && durations_ok,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn trapezoid_examples() {
        assert!((rest_to_rest_time(4.0, 2.0, 2.0) - 3.0).abs() < 1e-15);
        assert!((rest_to_rest_time(1.0, 2.0, 2.0) - 2f64.sqrt()).abs() < 1e-15);
        let wp = vec![
            DVector::from_vec(vec![0.0, 0.0]),
            DVector::from_vec(vec![0.0, 0.0]),
            DVector::from_vec(vec![3.0, 4.0]),
        ];
        let t = initial_time_allocation(&wp, 2.0, 2.0, 0.3).unwrap();
        assert_eq!(t[0], 0.3);
        assert!((t[1] - 3.5).abs() < 1e-15);
        // boundary between the two regimes is continuous
        let edge = 2.0;
        assert!((rest_to_rest_time(edge - 1e-12, 2.0, 2.0) - rest_to_rest_time(edge, 2.0, 2.0)).abs() < 1e-9);
    }

    #[test]
    fn generated_instance_round_trips_byte_for_byte() {
        let inst = generate_random_corridor(7, 5, 3, &CorridorParams::default()).unwrap();
        let text = canonical_string(&inst).unwrap();
        let back = parse_instance(&text).unwrap();
        assert_eq!(back, inst);
        assert_eq!(canonical_string(&back).unwrap(), text);
        let again = generate_random_corridor(7, 5, 3, &CorridorParams::default()).unwrap();
        assert_eq!(canonical_string(&again).unwrap(), text);
    }

    #[test]
    fn waypoints_sit_inside_adjacent_polyhedra() {
        for seed in 0..20 {
            let inst = generate_random_corridor(seed, 8, 3, &CorridorParams::default()).unwrap();
            let problem = inst.to_problem().unwrap();
            let wp = instance_waypoints(&inst);
            for (k, poly) in problem.corridor.iter().enumerate() {
                assert!(poly.contains(&wp[k], 1e-6));
                assert!(poly.contains(&wp[k + 1], 1e-6));
                let faces = poly.faces();
                assert!((6..=117).contains(&faces));
            }
        }
    }

    #[test]
    fn corridor_length_mismatch_names_the_field() {
        let mut inst = generate_random_corridor(1, 3, 2, &CorridorParams::default()).unwrap();
        inst.corridor.pop();
        match inst.validate().unwrap_err() {
            Error::Instance { field, .. } => assert_eq!(field, "corridor"),
            e => panic!("unexpected error {e}"),
        }
    }

    #[test]
    fn invalid_geometry_is_rejected() {
        let params = CorridorParams {
            margin: 0.1,
            core_radius: 0.2,
            ..CorridorParams::default()
        };
        assert!(generate_random_corridor(0, 3, 3, &params).is_err());
        assert!(generate_random_corridor(0, 0, 3, &CorridorParams::default()).is_err());
    }

    #[test]
    fn speed_and_acceleration_bounds_are_encoded() {
        let inst = generate_random_corridor(2, 4, 3, &CorridorParams::default()).unwrap();
        assert_eq!(inst.bounds.len(), 2);
        assert_eq!((inst.bounds[0].order, inst.bounds[0].upper), (1, 2.0));
        assert_eq!((inst.bounds[1].order, inst.bounds[1].lower), (2, -2.0));
    }
}
