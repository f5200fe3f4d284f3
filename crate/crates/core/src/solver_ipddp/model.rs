//! Per-stage derivatives of cost, dynamics and constraints along a rollout.

use nalgebra::{DMatrix, DVector};

use crate::constraints::{ConstraintBuilder, ConstraintEval};
use crate::error::{check_dim, Error, Result};
use crate::objective::{stage_cost, terminal_cost, CostBreakdown, StageCostEval, TerminalCostEval, TimeMode};
use crate::polyspline::{state_matrices, state_matrix_time_derivs, ControlInput, PhaseState};
use crate::problem::Problem;

/// Time-derivative data of the dynamics, joint mode only.
#[derive(Debug, Clone)]
pub(crate) struct TimeTerms {
    pub da: DMatrix<f64>,
    pub db: DMatrix<f64>,
    /// `A'' x + B'' v`.
    pub second: DVector<f64>,
}

#[derive(Debug, Clone)]
pub(crate) struct StageModel {
    pub cost: StageCostEval,
    pub cons: ConstraintEval,
    pub a: DMatrix<f64>,
    /// `∂f/∂u`, `md x nu`.
    pub fu: DMatrix<f64>,
    pub time: Option<TimeTerms>,
}

impl StageModel {
    pub fn g(&self) -> &DVector<f64> {
        &self.cons.constraint.g
    }

    pub fn g_x(&self) -> &DMatrix<f64> {
        &self.cons.constraint.jac_x
    }

    pub fn g_u(&self) -> &DMatrix<f64> {
        &self.cons.constraint.jac_u
    }

    pub fn rows(&self) -> usize {
        self.cons.constraint.g.len()
    }
}

/// Everything the solver evaluates once per candidate trajectory.
pub(crate) struct ModelContext<'a> {
    pub problem: &'a Problem,
    pub mode: TimeMode,
    pub builder: ConstraintBuilder,
}

/// A rolled-out trajectory and its stage models.
#[derive(Debug, Clone)]
pub(crate) struct Evaluated {
    pub inputs: Vec<ControlInput>,
    pub states: Vec<PhaseState>,
    pub models: Vec<StageModel>,
    pub terminal: TerminalCostEval,
    pub breakdown: CostBreakdown,
}

impl Evaluated {
    pub fn cost(&self) -> f64 {
        self.breakdown.total()
    }

    pub fn total_rows(&self) -> usize {
        self.models.iter().map(StageModel::rows).sum()
    }
}

impl<'a> ModelContext<'a> {
    pub fn new(problem: &'a Problem, mode: TimeMode) -> Result<Self> {
        problem.validate()?;
        Ok(Self {
            problem,
            mode,
            builder: problem.constraint_builder()?,
        })
    }

    pub fn stage(&self, k: usize, x: &PhaseState, u: &ControlInput) -> Result<StageModel> {
        let shape = &self.problem.shape;
        let md = shape.state_dim();
        let cost = stage_cost(x, u, k, &self.problem.weights, shape, self.mode)?;
        let cons = self.builder.evaluate(x, u, self.problem.polyhedron(k), self.mode)?;
        let (a, b) = state_matrices(u.duration, shape)?;
        let (fu, time) = match self.mode {
            TimeMode::Fixed => (b, None),
            TimeMode::Joint => {
                let (da, db) = state_matrix_time_derivs(u.duration, shape, 1)?;
                let (dda, ddb) = state_matrix_time_derivs(u.duration, shape, 2)?;
                let mut fu = DMatrix::zeros(md, md + 1);
                fu.view_mut((0, 0), (md, md)).copy_from(&b);
                fu.set_column(md, &(&da * x + &db * &u.v));
                let second = dda * x + ddb * &u.v;
                (fu, Some(TimeTerms { da, db, second }))
            }
        };
        Ok(StageModel {
            cost,
            cons,
            a,
            fu,
            time,
        })
    }

    /// Rolls `inputs` forward from `x0` and evaluates every stage.
    pub fn evaluate(&self, inputs: Vec<ControlInput>) -> Result<Evaluated> {
        let shape = &self.problem.shape;
        check_dim("inputs", shape.segments(), inputs.len())?;
        let mut states = Vec::with_capacity(inputs.len() + 1);
        states.push(self.problem.x0.clone());
        let mut models = Vec::with_capacity(inputs.len());
        let mut breakdown = CostBreakdown::default();
        for (k, u) in inputs.iter().enumerate() {
            if !(u.duration > 0.0) || !u.duration.is_finite() {
                return Err(Error::Duration {
                    index: k,
                    duration: u.duration,
                });
            }
            let x = &states[k];
            let model = self.stage(k, x, u)?;
            breakdown.waypoint += model.cost.waypoint;
            breakdown.energy += model.cost.energy;
            breakdown.time += model.cost.time;
            let next = &model.a * x + model.fu.columns(0, shape.state_dim()) * &u.v;
            states.push(next);
            models.push(model);
        }
        let terminal = terminal_cost(states.last().expect("nonempty"), &self.problem.weights)?;
        breakdown.terminal = terminal.value;
        Ok(Evaluated {
            inputs,
            states,
            models,
            terminal,
            breakdown,
        })
    }
}
