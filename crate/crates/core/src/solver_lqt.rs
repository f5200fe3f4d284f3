//! Closed-form solution of the unconstrained fixed-time problem by a
//! Riccati-style backward recursion and a forward rollout.
//!
//! The stage cost is `‖x - x_g‖²_Q + vᵀ R v` without a ½ factor. The
//! cost-to-go is kept as `xᵀ P x - 2 qᵀ x + const`, so `P_N = Q_N` and
//! `q_N = Q_N x_{N,g}`.

use nalgebra::{DMatrix, DVector};

use crate::error::{check_dim, Error, Result};
use crate::objective::{input_weight, total_cost, StageWeights, TimeMode};
use crate::polyspline::{rollout, state_matrices, ControlInput, PhaseState, SplineShape};
use crate::problem::Problem;
use crate::solver_ipddp::{IterateRecord, IterateTrace, SolveResult, SolveStatus};

/// Linear dynamics and input weight of one stage.
#[derive(Debug, Clone, PartialEq)]
pub struct LinearStage {
    pub a: DMatrix<f64>,
    pub b: DMatrix<f64>,
    pub r: DMatrix<f64>,
}

/// `(A_k, B_k, R_k)` for fixed durations.
pub fn linear_stages(durations: &[f64], weights: &StageWeights, shape: &SplineShape) -> Result<Vec<LinearStage>> {
    check_dim("durations", weights.eta.len(), durations.len())?;
    if weights.lower_energy.is_some() {
        return Err(Error::Input(
            "lower-order energy terms couple state and input; use the constrained solver".into(),
        ));
    }
    durations
        .iter()
        .enumerate()
        .map(|(k, &t)| {
            if !(t > 0.0) || !t.is_finite() {
                return Err(Error::Duration { index: k, duration: t });
            }
            let (a, b) = state_matrices(t, shape)?;
            let r = input_weight(t, weights.eta[k], 0.0, shape.half_order(), shape.dim(), false)?;
            Ok(LinearStage { a, b, r })
        })
        .collect()
}

/// Gains and cost-to-go of one stage.
#[derive(Debug, Clone, PartialEq)]
pub struct LqtStage {
    /// `K_k` in `v = -K_k x + k_k`.
    pub feedback: DMatrix<f64>,
    pub feedforward: DVector<f64>,
    /// `P_k`.
    pub cost_hessian: DMatrix<f64>,
    /// `q_k`.
    pub cost_linear: DVector<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct LqtBackwardTape {
    pub stages: Vec<LqtStage>,
    pub terminal_hessian: DMatrix<f64>,
    pub terminal_linear: DVector<f64>,
}

pub fn lqt_backward(weights: &StageWeights, stages: &[LinearStage]) -> Result<LqtBackwardTape> {
    check_dim("linear stages", weights.q.len(), stages.len())?;
    let mut p = weights.q_terminal.clone();
    let mut q = &weights.q_terminal * &weights.x_goal_terminal;
    let terminal_hessian = p.clone();
    let terminal_linear = q.clone();
    let mut out = Vec::with_capacity(stages.len());
    for (k, st) in stages.iter().enumerate().rev() {
        let pb = &p * &st.b;
        let gram = st.b.tr_mul(&pb) + &st.r;
        let chol = gram.cholesky().ok_or(Error::NotPositiveDefinite { stage: k })?;
        let feedback = chol.solve(&pb.tr_mul(&st.a));
        let feedforward = chol.solve(&st.b.tr_mul(&q));
        let closed = &st.a - &st.b * &feedback;
        let mut p_next = st.a.tr_mul(&(&p * &closed)) + &weights.q[k];
        p_next = (&p_next + p_next.transpose()) * 0.5;
        q = closed.tr_mul(&q) + &weights.q[k] * &weights.x_goal[k];
        p = p_next;
        out.push(LqtStage {
            feedback,
            feedforward,
            cost_hessian: p.clone(),
            cost_linear: q.clone(),
        });
    }
    out.reverse();
    Ok(LqtBackwardTape {
        stages: out,
        terminal_hessian,
        terminal_linear,
    })
}

/// Rolls `v_k = -K_k x_k + k_k` forward; returns `(inputs, states x_0..x_N)`.
pub fn lqt_forward(
    x0: &PhaseState,
    tape: &LqtBackwardTape,
    stages: &[LinearStage],
) -> Result<(Vec<DVector<f64>>, Vec<PhaseState>)> {
    check_dim("linear stages", tape.stages.len(), stages.len())?;
    let mut states = Vec::with_capacity(stages.len() + 1);
    let mut inputs = Vec::with_capacity(stages.len());
    states.push(x0.clone());
    for (gain, st) in tape.stages.iter().zip(stages) {
        let x = states.last().expect("nonempty");
        let v = &gain.feedforward - &gain.feedback * x;
        let next = &st.a * x + &st.b * &v;
        inputs.push(v);
        states.push(next);
    }
    Ok((inputs, states))
}

/// Optimal unconstrained inputs for fixed durations.
pub fn lqt_inputs(
    x0: &PhaseState,
    durations: &[f64],
    weights: &StageWeights,
    shape: &SplineShape,
) -> Result<Vec<ControlInput>> {
    let stages = linear_stages(durations, weights, shape)?;
    let tape = lqt_backward(weights, &stages)?;
    let (v, _) = lqt_forward(x0, &tape, &stages)?;
    Ok(v.into_iter()
        .zip(durations)
        .map(|(v, &t)| ControlInput::new(v, t))
        .collect())
}

/// First-order optimality residual of a primal-dual triple `(x, v, p)`.
///
/// Every entry is the largest over stages of a per-stage residual divided by
/// the infinity-norm magnitude of the terms it sums, so each equation is
/// judged locally and rounding does not accumulate along the horizon.
#[derive(Debug, Clone, Copy, PartialEq, serde::Serialize)]
pub struct KktResidual {
    /// `2 R_k v_k + B_kᵀ p_{k+1}`.
    pub stationarity: f64,
    /// `p_k - 2 Q_k (x_k - g_k) - A_kᵀ p_{k+1}` and `p_N - 2 Q_N (x_N - g_N)`.
    pub adjoint: f64,
    /// `x_{k+1} - A_k x_k - B_k v_k`.
    pub dynamics: f64,
}

impl KktResidual {
    pub fn relative(&self) -> f64 {
        self.stationarity.max(self.adjoint).max(self.dynamics)
    }
}

fn norm_inf(m: &DMatrix<f64>) -> f64 {
    m.row_iter()
        .map(|r| r.iter().map(|v| v.abs()).sum::<f64>())
        .fold(0.0, f64::max)
}

fn ratio(residual: f64, scale: f64) -> f64 {
    if residual == 0.0 {
        0.0
    } else {
        residual / scale.max(f64::MIN_POSITIVE)
    }
}

/// Costate estimate and the magnitude of the terms it was computed from.
#[derive(Debug, Clone, PartialEq)]
pub struct Costate {
    pub value: DVector<f64>,
    pub magnitude: f64,
}

impl Costate {
    fn scale(&self) -> f64 {
        self.value.amax().max(self.magnitude)
    }
}

/// Costates `p_k = 2 (P_k x_k - q_k)`, the gradient of the cost-to-go, for
/// `k = 0..=N`.
pub fn lqt_costates(tape: &LqtBackwardTape, states: &[PhaseState]) -> Result<Vec<Costate>> {
    check_dim("states", tape.stages.len() + 1, states.len())?;
    let n = tape.stages.len();
    let costate = |p: &DMatrix<f64>, q: &DVector<f64>, x: &DVector<f64>| Costate {
        value: (p * x - q) * 2.0,
        magnitude: 2.0 * (norm_inf(p) * x.amax()).max(q.amax()),
    };
    let mut out: Vec<Costate> = tape
        .stages
        .iter()
        .zip(states)
        .map(|(st, x)| costate(&st.cost_hessian, &st.cost_linear, x))
        .collect();
    out.push(costate(&tape.terminal_hessian, &tape.terminal_linear, &states[n]));
    Ok(out)
}

pub fn kkt_residual(
    weights: &StageWeights,
    stages: &[LinearStage],
    inputs: &[DVector<f64>],
    states: &[PhaseState],
    costates: &[Costate],
) -> Result<KktResidual> {
    let n = stages.len();
    check_dim("inputs", n, inputs.len())?;
    check_dim("states", n + 1, states.len())?;
    check_dim("costates", n + 1, costates.len())?;
    let mut out = KktResidual {
        stationarity: 0.0,
        adjoint: 0.0,
        dynamics: 0.0,
    };
    let tracking = |q: &DMatrix<f64>, x: &DVector<f64>, g: &DVector<f64>| {
        ((q * (x - g)) * 2.0, 2.0 * norm_inf(q) * x.amax().max(g.amax()))
    };
    let (grad, mag) = tracking(&weights.q_terminal, &states[n], &weights.x_goal_terminal);
    out.adjoint = ratio((&costates[n].value - grad).amax(), costates[n].scale().max(mag));
    for (k, st) in stages.iter().enumerate() {
        let (x, v) = (&states[k], &inputs[k]);
        let (p, p_next) = (&costates[k].value, &costates[k + 1].value);
        let bt_mag = norm_inf(&st.b.transpose()) * costates[k + 1].scale();
        let r = &st.r * v * 2.0 + st.b.tr_mul(p_next);
        out.stationarity = out
            .stationarity
            .max(ratio(r.amax(), (2.0 * norm_inf(&st.r) * v.amax()).max(bt_mag)));
        let (grad, mag) = tracking(&weights.q[k], x, &weights.x_goal[k]);
        let r = p - grad - st.a.tr_mul(p_next);
        let scale = costates[k]
            .scale()
            .max(mag)
            .max(norm_inf(&st.a.transpose()) * costates[k + 1].scale());
        out.adjoint = out.adjoint.max(ratio(r.amax(), scale));
        let r = &states[k + 1] - &st.a * x - &st.b * v;
        let scale = states[k + 1]
            .amax()
            .max(norm_inf(&st.a) * x.amax())
            .max(norm_inf(&st.b) * v.amax());
        out.dynamics = out.dynamics.max(ratio(r.amax(), scale));
    }
    Ok(out)
}

/// Solves an unconstrained problem with fixed `durations` in one backward
/// and one forward sweep. Corridor and derivative bounds must be absent.
pub fn lqt_solve(problem: &Problem, durations: &[f64]) -> Result<SolveResult> {
    problem.validate()?;
    if !problem.is_unconstrained(TimeMode::Fixed) {
        return Err(Error::Input(
            "the LQT solver accepts no corridor or derivative bounds".into(),
        ));
    }
    let shape = &problem.shape;
    check_dim("durations", shape.segments(), durations.len())?;
    let stages = linear_stages(durations, &problem.weights, shape)?;
    let tape = lqt_backward(&problem.weights, &stages)?;
    let (v, states) = lqt_forward(&problem.x0, &tape, &stages)?;
    let costates = lqt_costates(&tape, &states)?;
    let kkt = kkt_residual(&problem.weights, &stages, &v, &states, &costates)?;
    let inputs: Vec<ControlInput> = v
        .into_iter()
        .zip(durations)
        .map(|(v, &t)| ControlInput::new(v, t))
        .collect();
    let cost = total_cost(&problem.x0, &inputs, &problem.weights, shape, TimeMode::Fixed)?;
    let trajectory = rollout(&problem.x0, &inputs, shape)?.trajectory;
    let trace = IterateTrace {
        records: vec![IterateRecord {
            iteration: 0,
            cost: cost.total(),
            stationarity: kkt.stationarity,
            max_violation: 0.0,
            min_slack: f64::INFINITY,
            mu: 0.0,
            step: 1.0,
            regularization: 0.0,
        }],
    };
    Ok(SolveResult {
        trajectory,
        inputs,
        states,
        duals: vec![DVector::zeros(0); shape.segments()],
        status: SolveStatus::Converged,
        trace,
        cost,
        mu_final: 0.0,
    })
}
