//! Interior-point differential dynamic programming over the spline
//! state-space model, in joint energy-time and fixed-time modes, with a
//! slack-based variant for infeasible initial guesses.

mod backward;
mod forward;
mod model;
mod pipeline;

use nalgebra::DVector;
use serde::{Deserialize, Serialize};

pub use backward::{kkt_block_gains, BackwardPass, BlockGains, StageGains};
pub use pipeline::{pipeline_fixed_time, pipeline_three_stage, PipelineConfig, PipelineResult, StageReport};

use forward::{trial_step, PrimalDual};
use model::ModelContext;

use crate::error::{check_dim, Error, Result};
use crate::objective::{CostBreakdown, TimeMode};
use crate::polyspline::{rollout, ControlInput, PhaseState, PiecewiseTrajectory, SplineShape};
use crate::problem::Problem;

/// Strict-feasibility margin required of an infeasible-start result.
pub const FEASIBILITY_MARGIN: f64 = 1e-6;
/// Primal residual `Σ‖g + s‖₁` below which slacks are considered consistent.
/// Predicted merit decrease, relative to the merit, below which the primal
/// iterate can no longer move and the barrier subproblem counts as solved.
pub const STALL_RTOL: f64 = 1e-14;

pub const PRIMAL_TOL: f64 = 1e-8;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum StartMode {
    /// The initial guess satisfies `g < 0`.
    Feasible,
    /// Slacks absorb violations until the iterate becomes strictly feasible.
    Infeasible,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SolverConfig {
    /// `None` picks `max(1, J₀ / rows)`.
    pub mu_init: Option<f64>,
    pub mu_shrink: f64,
    pub mu_min: f64,
    pub max_iterations: usize,
    pub opt_tol: f64,
    pub reg_init: f64,
    pub reg_max: f64,
    pub ls_backtrack: f64,
    pub ls_max_steps: usize,
    /// Fraction-to-boundary parameter `τ`.
    pub fraction_to_boundary: f64,
    pub mode: TimeMode,
    pub start: StartMode,
}

impl Default for SolverConfig {
    fn default() -> Self {
        Self {
            mu_init: None,
            mu_shrink: 0.2,
            mu_min: 1e-8,
            max_iterations: 500,
            opt_tol: 1e-6,
            reg_init: 0.0,
            reg_max: 1e6,
            ls_backtrack: 0.5,
            ls_max_steps: 40,
            fraction_to_boundary: 0.995,
            mode: TimeMode::Fixed,
            start: StartMode::Feasible,
        }
    }
}

impl SolverConfig {
    pub fn with_mode(mut self, mode: TimeMode) -> Self {
        self.mode = mode;
        self
    }

    pub fn with_start(mut self, start: StartMode) -> Self {
        self.start = start;
        self
    }

    pub fn validate(&self) -> Result<()> {
        let fail = |msg: String| Err(Error::Input(format!("solver config: {msg}")));
        if !(self.mu_min > 0.0) {
            return fail(format!("mu_min must be positive, got {}", self.mu_min));
        }
        if let Some(mu) = self.mu_init {
            if !(mu >= self.mu_min) {
                return fail(format!("mu_init {mu} is below mu_min {}", self.mu_min));
            }
        }
        if !(self.mu_shrink > 0.0 && self.mu_shrink < 1.0) {
            return fail(format!("mu_shrink must lie in (0, 1), got {}", self.mu_shrink));
        }
        if !(self.ls_backtrack > 0.0 && self.ls_backtrack < 1.0) {
            return fail(format!("ls_backtrack must lie in (0, 1), got {}", self.ls_backtrack));
        }
        if !(self.fraction_to_boundary > 0.0 && self.fraction_to_boundary < 1.0) {
            return fail(format!(
                "fraction_to_boundary must lie in (0, 1), got {}",
                self.fraction_to_boundary
            ));
        }
        if !(self.opt_tol > 0.0) || !(self.reg_init >= 0.0) || !(self.reg_max > self.reg_init) {
            return fail("tolerances and regularization range must be positive".into());
        }
        if self.max_iterations == 0 || self.ls_max_steps == 0 {
            return fail("iteration limits must be positive".into());
        }
        Ok(())
    }

    fn shrink(&self, mu: f64) -> f64 {
        self.mu_min.max((self.mu_shrink * mu).min(mu.powf(1.2)))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum SolveStatus {
    Converged,
    MaxIter,
    LineSearchFail,
    RegularizationFail,
    InfeasibleInput,
}

impl std::fmt::Display for SolveStatus {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        let s = match self {
            SolveStatus::Converged => "converged",
            SolveStatus::MaxIter => "max-iter",
            SolveStatus::LineSearchFail => "line-search-fail",
            SolveStatus::RegularizationFail => "regularization-fail",
            SolveStatus::InfeasibleInput => "infeasible-input",
        };
        f.write_str(s)
    }
}

/// One accepted forward pass.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct IterateRecord {
    pub iteration: usize,
    pub cost: f64,
    pub stationarity: f64,
    pub max_violation: f64,
    pub min_slack: f64,
    pub mu: f64,
    pub step: f64,
    pub regularization: f64,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize)]
pub struct IterateTrace {
    pub records: Vec<IterateRecord>,
}

impl IterateTrace {
    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }
}

#[derive(Debug, Clone)]
pub struct SolveResult {
    pub trajectory: PiecewiseTrajectory,
    pub inputs: Vec<ControlInput>,
    pub states: Vec<PhaseState>,
    pub duals: Vec<DVector<f64>>,
    pub status: SolveStatus,
    pub trace: IterateTrace,
    pub cost: CostBreakdown,
    pub mu_final: f64,
}

impl SolveResult {
    pub fn converged(&self) -> bool {
        self.status == SolveStatus::Converged
    }

    pub fn iterations(&self) -> usize {
        self.trace.len()
    }

    pub fn durations(&self) -> Vec<f64> {
        self.inputs.iter().map(|u| u.duration).collect()
    }

    pub(crate) fn from_point(
        shape: &SplineShape,
        point: &PrimalDual,
        status: SolveStatus,
        trace: IterateTrace,
        mu: f64,
    ) -> Result<Self> {
        let eval = &point.eval;
        let out = rollout(&eval.states[0], &eval.inputs, shape)?;
        Ok(Self {
            trajectory: out.trajectory,
            inputs: eval.inputs.clone(),
            states: eval.states.clone(),
            duals: point.duals.clone(),
            status,
            trace,
            cost: eval.breakdown,
            mu_final: mu,
        })
    }
}

/// Initial inputs and optional warm-start duals.
#[derive(Debug, Clone)]
pub struct InitialGuess {
    pub inputs: Vec<ControlInput>,
    pub duals: Option<Vec<DVector<f64>>>,
}

impl InitialGuess {
    pub fn new(inputs: Vec<ControlInput>) -> Self {
        Self { inputs, duals: None }
    }

    /// Zero high-order blocks with the given durations.
    pub fn zeros(problem: &Problem, durations: &[f64]) -> Self {
        Self::new(
            durations
                .iter()
                .map(|&t| ControlInput::zeros(&problem.shape, t))
                .collect(),
        )
    }
}

/// A primal-dual iterate of the feasible variant, for driving single passes.
#[derive(Debug, Clone)]
pub struct Iterate {
    point: PrimalDual,
}

impl Iterate {
    /// Rolls out `inputs`; duals default to `μ / (-g)`.
    pub fn feasible(
        problem: &Problem,
        mode: TimeMode,
        inputs: Vec<ControlInput>,
        duals: Option<Vec<DVector<f64>>>,
        mu: f64,
    ) -> Result<Self> {
        let ctx = ModelContext::new(problem, mode)?;
        let eval = ctx.evaluate(inputs)?;
        if eval.models.iter().any(|m| m.g().iter().any(|&v| !(v < 0.0))) {
            return Err(Error::Input("iterate is not strictly feasible".into()));
        }
        let duals = initial_duals(&eval, duals, mu)?;
        Ok(Self {
            point: PrimalDual {
                eval,
                duals,
                slacks: None,
            },
        })
    }

    pub fn inputs(&self) -> &[ControlInput] {
        &self.point.eval.inputs
    }

    pub fn states(&self) -> &[PhaseState] {
        &self.point.eval.states
    }

    pub fn duals(&self) -> &[DVector<f64>] {
        &self.point.duals
    }

    pub fn cost(&self) -> f64 {
        self.point.eval.cost()
    }

    pub fn barrier_merit(&self, mu: f64) -> f64 {
        self.point.barrier_merit(mu)
    }

    /// Stage constraint values `g_k`.
    pub fn constraint_values(&self) -> Vec<DVector<f64>> {
        self.point.eval.models.iter().map(|m| m.g().clone()).collect()
    }
}

/// One backward pass of the feasible variant.
pub fn backward_pass(problem: &Problem, mode: TimeMode, iterate: &Iterate, mu: f64, reg: f64) -> Result<BackwardPass> {
    let _ = ModelContext::new(problem, mode)?;
    if iterate.point.duals.iter().any(|l| l.iter().any(|&v| !(v > 0.0))) {
        return Err(Error::Input("duals must be strictly positive".into()));
    }
    backward::backward(&iterate.point.eval, &iterate.point.duals, None, mu, reg)
}

/// Result of [`forward_pass`].
#[derive(Debug, Clone)]
pub struct ForwardOutcome {
    pub iterate: Iterate,
    pub step: f64,
}

/// Backtracking forward pass of the feasible variant; `None` when every
/// trial step is rejected.
pub fn forward_pass(
    problem: &Problem,
    iterate: &Iterate,
    bp: &BackwardPass,
    mu: f64,
    config: &SolverConfig,
) -> Result<Option<ForwardOutcome>> {
    let ctx = ModelContext::new(problem, config.mode)?;
    let found = line_search(&ctx, &iterate.point, bp, mu, config, &mut Vec::new())?;
    Ok(found.map(|(point, step)| ForwardOutcome {
        iterate: Iterate { point },
        step,
    }))
}

fn initial_duals(eval: &model::Evaluated, warm: Option<Vec<DVector<f64>>>, mu: f64) -> Result<Vec<DVector<f64>>> {
    match warm {
        Some(duals) => {
            check_dim("warm-start duals", eval.models.len(), duals.len())?;
            for (m, l) in eval.models.iter().zip(&duals) {
                check_dim("warm-start dual rows", m.rows(), l.len())?;
                if l.iter().any(|&v| !(v > 0.0)) {
                    return Err(Error::Input("warm-start duals must be strictly positive".into()));
                }
            }
            Ok(duals)
        }
        None => Ok(eval.models.iter().map(|m| m.g().map(|v| mu / -v)).collect()),
    }
}

/// Backtracking line search. The feasible variant uses an Armijo test on the
/// barrier merit; the slack variant a (merit, infeasibility) filter.
fn line_search(
    ctx: &ModelContext<'_>,
    current: &PrimalDual,
    bp: &BackwardPass,
    mu: f64,
    config: &SolverConfig,
    filter: &mut Vec<(f64, f64)>,
) -> Result<Option<(PrimalDual, f64)>> {
    let merit0 = current.barrier_merit(mu);
    let d1 = bp.expected_linear;
    let flat = d1.abs() <= 1e-10 * merit0.abs().max(1.0);
    let mut alpha = 1.0;
    for _ in 0..config.ls_max_steps {
        if let Some(trial) = trial_step(ctx, current, bp, alpha, config.fraction_to_boundary)? {
            let merit = trial.barrier_merit(mu);
            if merit.is_finite() {
                let accept = if current.slacks.is_some() {
                    let theta = trial.primal_infeasibility();
                    let ok = filter.iter().all(|&(f, t)| merit < f || theta < t);
                    if ok {
                        filter.push((merit, theta));
                    }
                    ok
                } else if flat {
                    merit <= merit0 + 1e-10 * merit0.abs().max(1.0)
                } else {
                    merit <= merit0 + 1e-4 * alpha * d1
                };
                if accept {
                    return Ok(Some((trial, alpha)));
                }
            }
        }
        alpha *= config.ls_backtrack;
    }
    Ok(None)
}

fn strictly_feasible(point: &PrimalDual, margin: f64) -> bool {
    point
        .eval
        .models
        .iter()
        .all(|m| m.rows() == 0 || m.g().max() <= -margin)
}

/// Runs the solver from `guess`.
///
/// Malformed problems are reported as errors. A feasible-mode guess that is
/// not strictly feasible yields [`SolveStatus::InfeasibleInput`].
pub fn solve(problem: &Problem, config: &SolverConfig, guess: &InitialGuess) -> Result<SolveResult> {
    config.validate()?;
    let ctx = ModelContext::new(problem, config.mode)?;
    check_dim("initial inputs", problem.shape.segments(), guess.inputs.len())?;
    let eval = ctx.evaluate(guess.inputs.clone())?;
    let rows = eval.total_rows();
    let default_mu = if rows == 0 {
        config.mu_min
    } else {
        (eval.cost() / rows as f64).max(1.0)
    };
    let mut mu = config.mu_init.unwrap_or(default_mu);
    if rows == 0 {
        mu = config.mu_min;
    }

    let mut point = match config.start {
        StartMode::Feasible => {
            if eval.models.iter().any(|m| m.g().iter().any(|&v| !(v < 0.0))) {
                let point = PrimalDual {
                    duals: eval.models.iter().map(|m| DVector::zeros(m.rows())).collect(),
                    eval,
                    slacks: None,
                };
                return SolveResult::from_point(
                    &problem.shape,
                    &point,
                    SolveStatus::InfeasibleInput,
                    IterateTrace::default(),
                    mu,
                );
            }
            let duals = initial_duals(&eval, guess.duals.clone(), mu)?;
            PrimalDual {
                eval,
                duals,
                slacks: None,
            }
        }
        StartMode::Infeasible => {
            let slack_floor = 1e-2;
            let slacks: Vec<DVector<f64>> = eval
                .models
                .iter()
                .map(|m| m.g().map(|v| (-v).max(slack_floor)))
                .collect();
            let duals = match guess.duals.clone() {
                Some(d) => initial_duals(&eval, Some(d), mu)?,
                None => eval
                    .models
                    .iter()
                    .map(|m| DVector::from_element(m.rows(), 1.0))
                    .collect(),
            };
            PrimalDual {
                eval,
                duals,
                slacks: Some(slacks),
            }
        }
    };

    let infeasible_start = config.start == StartMode::Infeasible;
    let mut trace = IterateTrace::default();
    if infeasible_start && strictly_feasible(&point, FEASIBILITY_MARGIN) {
        return SolveResult::from_point(&problem.shape, &point, SolveStatus::Converged, trace, mu);
    }

    let mut reg = config.reg_init;
    let mut filter: Vec<(f64, f64)> = Vec::new();
    let mut status = SolveStatus::MaxIter;
    'outer: while trace.len() < config.max_iterations {
        let bp = loop {
            match backward::backward(&point.eval, &point.duals, point.slacks.as_deref(), mu, reg) {
                Ok(bp) => {
                    let tol = config.opt_tol.max(mu);
                    let err = bp.optimality_error().max(bp.primal_residual);
                    let stalled = reg == 0.0
                        && bp.expected_linear.abs() <= STALL_RTOL * point.barrier_merit(mu).abs().max(1.0)
                        && bp.complementarity.max(bp.primal_residual) <= tol;
                    if !infeasible_start && mu <= config.mu_min && (err <= config.opt_tol || stalled) {
                        status = SolveStatus::Converged;
                        break 'outer;
                    }
                    if mu > config.mu_min && (err <= tol || stalled) {
                        mu = config.shrink(mu);
                        filter.clear();
                        continue;
                    }
                    break bp;
                }
                Err(Error::NotPositiveDefinite { .. }) => {
                    reg = (reg * 10.0).max(1e-6);
                    if reg > config.reg_max {
                        status = SolveStatus::RegularizationFail;
                        break 'outer;
                    }
                }
                Err(e) => return Err(e),
            }
        };
        if filter.is_empty() && infeasible_start {
            filter.push((point.barrier_merit(mu), point.primal_infeasibility()));
        }
        match line_search(&ctx, &point, &bp, mu, config, &mut filter)? {
            Some((next, step)) => {
                point = next;
                trace.records.push(IterateRecord {
                    iteration: trace.len(),
                    cost: point.eval.cost(),
                    stationarity: bp.stationarity,
                    max_violation: point.max_violation(),
                    min_slack: point.min_slack(),
                    mu,
                    step,
                    regularization: reg,
                });
                reg *= 0.1;
                if reg < 1e-6 {
                    reg = 0.0;
                }
                if infeasible_start
                    && point.primal_infeasibility() <= PRIMAL_TOL
                    && strictly_feasible(&point, FEASIBILITY_MARGIN)
                {
                    status = SolveStatus::Converged;
                    break;
                }
            }
            None => {
                reg = (reg * 10.0).max(1e-6);
                if reg > config.reg_max {
                    status = SolveStatus::LineSearchFail;
                    break;
                }
            }
        }
    }
    SolveResult::from_point(&problem.shape, &point, status, trace, mu)
}

/// Infeasible-start run; the result is strictly feasible when converged.
pub fn solve_infeasible_start(problem: &Problem, config: &SolverConfig, guess: &InitialGuess) -> Result<SolveResult> {
    let config = config.clone().with_start(StartMode::Infeasible);
    solve(problem, &config, guess)
}
