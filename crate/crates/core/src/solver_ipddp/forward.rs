//! Forward pass: closed-loop rollout of the gains with backtracking.

use nalgebra::DVector;

use super::backward::BackwardPass;
use super::model::{Evaluated, ModelContext};
use crate::error::Result;
use crate::objective::{terminal_cost, CostBreakdown};
use crate::polyspline::ControlInput;

/// Primal-dual point accepted by the solver.
#[derive(Debug, Clone)]
pub(crate) struct PrimalDual {
    pub eval: Evaluated,
    pub duals: Vec<DVector<f64>>,
    pub slacks: Option<Vec<DVector<f64>>>,
}

impl PrimalDual {
    /// `J - μ Σ log(s)` with `s = -g` when no slacks are carried.
    pub fn barrier_merit(&self, mu: f64) -> f64 {
        let mut log_sum = 0.0;
        match &self.slacks {
            Some(sl) => sl.iter().for_each(|s| log_sum += s.iter().map(|v| v.ln()).sum::<f64>()),
            None => self
                .eval
                .models
                .iter()
                .for_each(|m| log_sum += m.g().iter().map(|v| (-v).ln()).sum::<f64>()),
        }
        self.eval.cost() - mu * log_sum
    }

    /// `Σ ‖g + s‖₁`; zero without slacks.
    pub fn primal_infeasibility(&self) -> f64 {
        match &self.slacks {
            Some(sl) => self
                .eval
                .models
                .iter()
                .zip(sl)
                .map(|(m, s)| (m.g() + s).lp_norm(1))
                .sum(),
            None => 0.0,
        }
    }

    pub fn max_violation(&self) -> f64 {
        self.eval
            .models
            .iter()
            .filter(|m| m.rows() > 0)
            .map(|m| m.g().max())
            .fold(f64::NEG_INFINITY, f64::max)
            .max(0.0)
    }

    pub fn min_slack(&self) -> f64 {
        match &self.slacks {
            Some(sl) => sl
                .iter()
                .filter(|s| !s.is_empty())
                .map(|s| s.min())
                .fold(f64::INFINITY, f64::min),
            None => self
                .eval
                .models
                .iter()
                .filter(|m| m.rows() > 0)
                .map(|m| -m.g().max())
                .fold(f64::INFINITY, f64::min),
        }
    }
}

/// Applies the gains with step `alpha`. Returns `None` when the trial leaves
/// the admissible region (nonpositive duration, fraction-to-boundary
/// violation on slacks or duals).
pub(crate) fn trial_step(
    ctx: &ModelContext<'_>,
    current: &PrimalDual,
    bp: &BackwardPass,
    alpha: f64,
    tau: f64,
) -> Result<Option<PrimalDual>> {
    let shape = &ctx.problem.shape;
    let md = shape.state_dim();
    let n = shape.segments();
    let nominal = &current.eval;
    let mut states = Vec::with_capacity(n + 1);
    states.push(ctx.problem.x0.clone());
    let mut inputs = Vec::with_capacity(n);
    let mut models = Vec::with_capacity(n);
    let mut duals = Vec::with_capacity(n);
    let mut slacks = current.slacks.as_ref().map(|_| Vec::with_capacity(n));
    let mut breakdown = CostBreakdown::default();

    for k in 0..n {
        let gains = &bp.gains[k];
        let x = &states[k];
        let dx = x - &nominal.states[k];
        let du = &gains.k_u * alpha + &gains.gain_u * &dx;
        let u_bar = &nominal.inputs[k];
        let v = &u_bar.v + du.rows(0, md);
        let duration = if du.len() > md {
            u_bar.duration + du[md]
        } else {
            u_bar.duration
        };
        if !(duration > 0.0) || !duration.is_finite() {
            return Ok(None);
        }
        let u = ControlInput::new(v, duration);
        let model = ctx.stage(k, x, &u)?;

        let lam_bar = &current.duals[k];
        let lam = lam_bar + &gains.k_dual * alpha + &gains.gain_dual * &dx;
        if lam.iter().zip(lam_bar.iter()).any(|(&l, &lb)| !(l >= (1.0 - tau) * lb)) {
            return Ok(None);
        }
        match (&mut slacks, &current.slacks) {
            (Some(out), Some(prev)) => {
                let s_bar = &prev[k];
                let ks = gains.k_slack.as_ref().expect("slack gains");
                let gs = gains.gain_slack.as_ref().expect("slack gains");
                let s = s_bar + ks * alpha + gs * &dx;
                if s.iter().zip(s_bar.iter()).any(|(&v, &vb)| !(v >= (1.0 - tau) * vb)) {
                    return Ok(None);
                }
                out.push(s);
            }
            _ => {
                let g_bar = nominal.models[k].g();
                if model
                    .g()
                    .iter()
                    .zip(g_bar.iter())
                    .any(|(&v, &vb)| !(-v >= (1.0 - tau) * -vb))
                {
                    return Ok(None);
                }
            }
        }

        breakdown.waypoint += model.cost.waypoint;
        breakdown.energy += model.cost.energy;
        breakdown.time += model.cost.time;
        let next = &model.a * x + model.fu.columns(0, md) * &u.v;
        if next.iter().any(|v| !v.is_finite()) {
            return Ok(None);
        }
        states.push(next);
        inputs.push(u);
        models.push(model);
        duals.push(lam);
    }
    let terminal = terminal_cost(&states[n], &ctx.problem.weights)?;
    breakdown.terminal = terminal.value;
    Ok(Some(PrimalDual {
        eval: Evaluated {
            inputs,
            states,
            models,
            terminal,
            breakdown,
        },
        duals,
        slacks,
    }))
}
