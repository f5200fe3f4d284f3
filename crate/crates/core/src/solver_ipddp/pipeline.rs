//! Feasibility, joint energy-time and fixed-time stages chained together.

use serde::{Deserialize, Serialize};

use super::{solve, InitialGuess, IterateTrace, SolveResult, SolveStatus, SolverConfig, StartMode};
use crate::error::Result;
use crate::objective::{CostBreakdown, TimeMode};
use crate::problem::Problem;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PipelineConfig {
    /// Base settings; mode, start and `mu_init` are set per stage.
    pub solver: SolverConfig,
    /// Durations stay at the initial allocation by default: from the zero
    /// guess the time/coefficient curvature makes the joint model strongly
    /// indefinite.
    pub feasibility_mode: TimeMode,
    pub feasibility_time_weight: f64,
    pub feasibility_terminal_scale: f64,
    pub joint_time_weight: f64,
    pub joint_terminal_scale: f64,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        Self {
            solver: SolverConfig::default(),
            feasibility_mode: TimeMode::Fixed,
            feasibility_time_weight: 1.0,
            feasibility_terminal_scale: 1.0,
            joint_time_weight: 20.0,
            joint_terminal_scale: 100.0,
        }
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct StageReport {
    pub name: &'static str,
    pub status: SolveStatus,
    pub iterations: usize,
    pub cost: CostBreakdown,
    pub total_time: f64,
    pub mu_final: f64,
    pub trace: IterateTrace,
}

impl StageReport {
    pub fn new(name: &'static str, r: &SolveResult) -> Self {
        Self {
            name,
            status: r.status,
            iterations: r.iterations(),
            cost: r.cost,
            total_time: r.durations().iter().sum(),
            mu_final: r.mu_final,
            trace: r.trace.clone(),
        }
    }
}

#[derive(Debug, Clone)]
pub struct PipelineResult {
    pub stages: Vec<StageReport>,
    /// Output of the last stage that ran.
    pub result: SolveResult,
    /// Index of the stage that failed, if any.
    pub failed_stage: Option<usize>,
}

impl PipelineResult {
    pub fn converged(&self) -> bool {
        self.failed_stage.is_none() && self.result.converged()
    }

    pub fn iterations(&self) -> usize {
        self.stages.iter().map(|s| s.iterations).sum()
    }
}

/// Runs the three stages from zero high-order blocks and `initial_times`.
///
/// 1. slack-based feasibility search with light time and terminal weights;
/// 2. joint energy-time optimization from the feasible point;
/// 3. fixed-time polish, warm-started with the stage-2 duals and barrier weight.
pub fn pipeline_three_stage(
    problem: &Problem,
    initial_times: &[f64],
    config: &PipelineConfig,
) -> Result<PipelineResult> {
    let mut stages = Vec::with_capacity(3);

    let first = problem.with_stage_settings(config.feasibility_time_weight, config.feasibility_terminal_scale);
    let cfg = config
        .solver
        .clone()
        .with_mode(config.feasibility_mode)
        .with_start(StartMode::Infeasible);
    let r1 = solve(&first, &cfg, &InitialGuess::zeros(problem, initial_times))?;
    stages.push(StageReport::new("feasibility", &r1));
    if !r1.converged() {
        return Ok(PipelineResult {
            stages,
            result: r1,
            failed_stage: Some(0),
        });
    }

    let joint = problem.with_stage_settings(config.joint_time_weight, config.joint_terminal_scale);
    let cfg = config
        .solver
        .clone()
        .with_mode(TimeMode::Joint)
        .with_start(StartMode::Feasible);
    let r2 = solve(&joint, &cfg, &InitialGuess::new(r1.inputs))?;
    stages.push(StageReport::new("joint", &r2));
    if !r2.converged() {
        return Ok(PipelineResult {
            stages,
            result: r2,
            failed_stage: Some(1),
        });
    }

    // the time row is the last row of every joint-mode stage
    let duals = r2.duals.iter().map(|l| l.rows(0, l.len() - 1).into_owned()).collect();
    let mut cfg = config
        .solver
        .clone()
        .with_mode(TimeMode::Fixed)
        .with_start(StartMode::Feasible);
    cfg.mu_init = Some(r2.mu_final.max(cfg.mu_min));
    let guess = InitialGuess {
        inputs: r2.inputs.clone(),
        duals: Some(duals),
    };
    let r3 = solve(&joint, &cfg, &guess)?;
    stages.push(StageReport::new("fixed-time", &r3));
    let failed_stage = (!r3.converged()).then_some(2);
    Ok(PipelineResult {
        stages,
        result: r3,
        failed_stage,
    })
}

/// Fixed-duration counterpart of [`pipeline_three_stage`]: a slack-based
/// feasibility search on `problem` followed by the feasible solve, both with
/// durations held at `times` and the problem's own weights.
pub fn pipeline_fixed_time(problem: &Problem, times: &[f64], config: &PipelineConfig) -> Result<PipelineResult> {
    let mut stages = Vec::with_capacity(2);
    let cfg = config
        .solver
        .clone()
        .with_mode(TimeMode::Fixed)
        .with_start(StartMode::Infeasible);
    let r1 = solve(problem, &cfg, &InitialGuess::zeros(problem, times))?;
    stages.push(StageReport::new("feasibility", &r1));
    if !r1.converged() {
        return Ok(PipelineResult {
            stages,
            result: r1,
            failed_stage: Some(0),
        });
    }
    let cfg = config
        .solver
        .clone()
        .with_mode(TimeMode::Fixed)
        .with_start(StartMode::Feasible);
    let r2 = solve(problem, &cfg, &InitialGuess::new(r1.inputs))?;
    stages.push(StageReport::new("fixed-time", &r2));
    let failed_stage = (!r2.converged()).then_some(1);
    Ok(PipelineResult {
        stages,
        result: r2,
        failed_stage,
    })
}
