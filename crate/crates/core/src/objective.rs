//! Smoothing-spline objective: waypoint attraction, derivative energy, time
//! penalty and terminal cost, with exact first and second derivatives.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{check_dim, Error, Result};
use crate::polyspline::{factorial, falling, kron_identity, rollout, ControlInput, PhaseState, SplineShape};

/// Whether segment durations are decision variables.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum TimeMode {
    /// `u = v`, durations held fixed.
    Fixed,
    /// `u = [v; t]`.
    Joint,
}

impl TimeMode {
    pub fn input_dim(&self, shape: &SplineShape) -> usize {
        match self {
            TimeMode::Fixed => shape.state_dim(),
            TimeMode::Joint => shape.state_dim() + 1,
        }
    }
}

/// Closed-form `∫_0^t σ(s) σ(s)^T ds` where `σ` holds the `m` nonzero
/// entries of `b^(m)(s)`.
pub fn rv_integral(t: f64, m: usize) -> Result<DMatrix<f64>> {
    if !(t > 0.0) || !t.is_finite() {
        return Err(Error::Input(format!("integration horizon must be positive, got {t}")));
    }
    if m == 0 {
        return Err(Error::Input("half order must be at least 1".into()));
    }
    let psi = |i: usize| factorial(m + i);
    Ok(DMatrix::from_fn(m, m, |i, j| {
        let p = (i + j + 1) as i32;
        psi(i) * psi(j) * t.powi(p) / (factorial(i) * factorial(j) * p as f64)
    }))
}

/// `order`-th time derivative of `∫_0^t b^(i)(s) b^(i)(s)^T ds`, full
/// `(n+1) x (n+1)` coefficient space.
pub(crate) fn energy_gram(t: f64, n: usize, i: usize, order: usize) -> DMatrix<f64> {
    DMatrix::from_fn(n + 1, n + 1, |r, s| {
        if r < i || s < i {
            return 0.0;
        }
        let p = r + s - 2 * i + 1;
        let scale = falling(r, i) * falling(s, i);
        match order {
            0 => scale * t.powi(p as i32) / p as f64,
            1 => scale * t.powi(p as i32 - 1),
            _ => {
                if p < 2 {
                    0.0
                } else {
                    scale * (p - 1) as f64 * t.powi(p as i32 - 2)
                }
            }
        }
    })
}

/// Input weight of the quadratic form `‖u‖²_R`.
pub fn input_weight(t: f64, eta: f64, w: f64, m: usize, d: usize, joint_time: bool) -> Result<DMatrix<f64>> {
    let block = kron_identity(&rv_integral(t, m)?, d) * eta;
    if !joint_time {
        return Ok(block);
    }
    let size = m * d + 1;
    let mut out = DMatrix::zeros(size, size);
    out.view_mut((0, 0), (m * d, m * d)).copy_from(&block);
    out[(m * d, m * d)] = w;
    Ok(out)
}

/// Per-stage and terminal weights and goals.
#[derive(Debug, Clone, PartialEq)]
pub struct StageWeights {
    pub q: Vec<DMatrix<f64>>,
    pub x_goal: Vec<PhaseState>,
    /// Weight of the order-`m` energy term.
    pub eta: Vec<f64>,
    /// Weight of the `t_k²` penalty.
    pub w: Vec<f64>,
    pub q_terminal: DMatrix<f64>,
    pub x_goal_terminal: PhaseState,
    /// Optional weights `η_{i,k}` for orders `i = 1..m-1`, one row per stage.
    pub lower_energy: Option<Vec<Vec<f64>>>,
}

impl StageWeights {
    /// Diagonal weights shared by every stage.
    pub fn uniform(
        shape: &SplineShape,
        q_diag: &[f64],
        eta: f64,
        w: f64,
        q_terminal_diag: &[f64],
        goals: Vec<PhaseState>,
        terminal_goal: PhaseState,
    ) -> Result<Self> {
        let n = shape.segments();
        let md = shape.state_dim();
        check_dim("stage weight diagonal", md, q_diag.len())?;
        check_dim("terminal weight diagonal", md, q_terminal_diag.len())?;
        let q = DMatrix::from_diagonal(&DVector::from_column_slice(q_diag));
        let weights = Self {
            q: vec![q; n],
            x_goal: goals,
            eta: vec![eta; n],
            w: vec![w; n],
            q_terminal: DMatrix::from_diagonal(&DVector::from_column_slice(q_terminal_diag)),
            x_goal_terminal: terminal_goal,
            lower_energy: None,
        };
        weights.validate(shape)?;
        Ok(weights)
    }

    pub fn validate(&self, shape: &SplineShape) -> Result<()> {
        let n = shape.segments();
        let md = shape.state_dim();
        check_dim("stage weights", n, self.q.len())?;
        check_dim("stage goals", n, self.x_goal.len())?;
        check_dim("energy weights", n, self.eta.len())?;
        check_dim("time weights", n, self.w.len())?;
        for (k, q) in self.q.iter().enumerate() {
            check_psd(q, md, &format!("stage weight {k}"))?;
        }
        check_psd(&self.q_terminal, md, "terminal weight")?;
        for g in &self.x_goal {
            check_dim("stage goal", md, g.len())?;
        }
        check_dim("terminal goal", md, self.x_goal_terminal.len())?;
        for (k, (&eta, &w)) in self.eta.iter().zip(&self.w).enumerate() {
            if !(eta >= 0.0) || !(w >= 0.0) {
                return Err(Error::Input(format!("stage {k}: energy and time weights must be >= 0")));
            }
        }
        if let Some(lower) = &self.lower_energy {
            check_dim("lower-order energy weights", n, lower.len())?;
            for row in lower {
                check_dim("lower-order energy orders", shape.half_order() - 1, row.len())?;
                if row.iter().any(|&e| !(e >= 0.0)) {
                    return Err(Error::Input("lower-order energy weights must be >= 0".into()));
                }
            }
        }
        Ok(())
    }

    /// Same weights with every time weight replaced by `w` and the terminal
    /// weight replaced by `scale * I`.
    pub fn with_stage_settings(&self, w: f64, terminal_scale: f64) -> Self {
        let md = self.q_terminal.nrows();
        let mut out = self.clone();
        out.w.iter_mut().for_each(|x| *x = w);
        out.q_terminal = DMatrix::identity(md, md) * terminal_scale;
        out
    }

    /// Coefficient-space energy matrix of stage `k` mapped onto `[x; v]`
    /// (per axis, size `2m`), and its first two time derivatives.
    pub(crate) fn energy_model(&self, k: usize, t: f64, shape: &SplineShape) -> [DMatrix<f64>; 3] {
        let n = shape.degree();
        let m = shape.half_order();
        let mut grams = [
            DMatrix::zeros(n + 1, n + 1),
            DMatrix::zeros(n + 1, n + 1),
            DMatrix::zeros(n + 1, n + 1),
        ];
        let mut add = |order: usize, eta: f64| {
            if eta != 0.0 {
                for (deriv, gram) in grams.iter_mut().enumerate() {
                    *gram += energy_gram(t, n, order, deriv) * eta;
                }
            }
        };
        add(m, self.eta[k]);
        if let Some(lower) = &self.lower_energy {
            for (i, &eta) in lower[k].iter().enumerate() {
                add(i + 1, eta);
            }
        }
        // rows of the low block scale by 1/r! (F11^-1)
        let scale: Vec<f64> = (0..=n).map(|r| if r < m { 1.0 / factorial(r) } else { 1.0 }).collect();
        grams.map(|g| DMatrix::from_fn(n + 1, n + 1, |r, s| g[(r, s)] * scale[r] * scale[s]))
    }
}

fn check_psd(q: &DMatrix<f64>, md: usize, what: &str) -> Result<()> {
    if q.nrows() != md || q.ncols() != md {
        return Err(Error::Input(format!("{what}: expected {md}x{md} matrix")));
    }
    if (q - q.transpose()).amax() > 1e-10 * q.amax().max(1.0) {
        return Err(Error::Input(format!("{what}: matrix is not symmetric")));
    }
    let min_eig = q.clone().symmetric_eigenvalues().min();
    if min_eig < -1e-10 {
        return Err(Error::Input(format!(
            "{what}: matrix is not positive semidefinite (min eigenvalue {min_eig})"
        )));
    }
    Ok(())
}

/// Value and derivatives of one stage cost.
#[derive(Debug, Clone, PartialEq)]
pub struct StageCostEval {
    pub value: f64,
    pub grad_x: DVector<f64>,
    pub grad_u: DVector<f64>,
    pub hess_xx: DMatrix<f64>,
    pub hess_uu: DMatrix<f64>,
    /// Rows index `u`, columns index `x`.
    pub hess_ux: DMatrix<f64>,
    /// Split of `value` for reporting.
    pub waypoint: f64,
    pub energy: f64,
    pub time: f64,
}

pub fn stage_cost(
    x: &PhaseState,
    u: &ControlInput,
    k: usize,
    weights: &StageWeights,
    shape: &SplineShape,
    mode: TimeMode,
) -> Result<StageCostEval> {
    let md = shape.state_dim();
    let d = shape.dim();
    check_dim("phase state", md, x.len())?;
    check_dim("control input", md, u.v.len())?;
    if k >= weights.q.len() {
        return Err(Error::Input(format!("stage index {k} out of range")));
    }
    let t = u.duration;
    if !(t > 0.0) {
        return Err(Error::Duration { index: k, duration: t });
    }
    let nu = mode.input_dim(shape);

    let err = x - &weights.x_goal[k];
    let q_err = &weights.q[k] * &err;
    let waypoint = err.dot(&q_err);

    let [m0, m1, m2] = weights.energy_model(k, t, shape);
    let big0 = kron_identity(&m0, d);
    let mut w = DVector::zeros(2 * md);
    w.rows_mut(0, md).copy_from(x);
    w.rows_mut(md, md).copy_from(&u.v);
    let big0_w = &big0 * &w;
    let energy = w.dot(&big0_w);

    let grad_x = q_err * 2.0 + big0_w.rows(0, md) * 2.0;
    let mut grad_u = DVector::zeros(nu);
    grad_u.rows_mut(0, md).copy_from(&(big0_w.rows(md, md) * 2.0));
    let hess_xx = &weights.q[k] * 2.0 + big0.view((0, 0), (md, md)) * 2.0;
    let mut hess_uu = DMatrix::zeros(nu, nu);
    hess_uu
        .view_mut((0, 0), (md, md))
        .copy_from(&(big0.view((md, md), (md, md)) * 2.0));
    let mut hess_ux = DMatrix::zeros(nu, md);
    hess_ux
        .view_mut((0, 0), (md, md))
        .copy_from(&(big0.view((md, 0), (md, md)) * 2.0));

    let mut time = 0.0;
    if mode == TimeMode::Joint {
        let wt = weights.w[k];
        time = wt * t * t;
        let big1_w = kron_identity(&m1, d) * &w;
        let big2_w = kron_identity(&m2, d) * &w;
        grad_u[md] = w.dot(&big1_w) + 2.0 * wt * t;
        hess_uu[(md, md)] = w.dot(&big2_w) + 2.0 * wt;
        for j in 0..md {
            hess_uu[(md, j)] = 2.0 * big1_w[md + j];
            hess_uu[(j, md)] = 2.0 * big1_w[md + j];
            hess_ux[(md, j)] = 2.0 * big1_w[j];
        }
    }
    Ok(StageCostEval {
        value: waypoint + energy + time,
        grad_x,
        grad_u,
        hess_xx,
        hess_uu,
        hess_ux,
        waypoint,
        energy,
        time,
    })
}

/// `‖x - x_g‖²_{Q_N}` with gradient and Hessian.
#[derive(Debug, Clone, PartialEq)]
pub struct TerminalCostEval {
    pub value: f64,
    pub grad: DVector<f64>,
    pub hess: DMatrix<f64>,
}

pub fn terminal_cost(x: &PhaseState, weights: &StageWeights) -> Result<TerminalCostEval> {
    check_dim("terminal state", weights.x_goal_terminal.len(), x.len())?;
    let err = x - &weights.x_goal_terminal;
    let q_err = &weights.q_terminal * &err;
    Ok(TerminalCostEval {
        value: err.dot(&q_err),
        grad: q_err * 2.0,
        hess: &weights.q_terminal * 2.0,
    })
}

/// Per-term split of the objective.
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct CostBreakdown {
    pub waypoint: f64,
    pub energy: f64,
    pub time: f64,
    pub terminal: f64,
}

impl CostBreakdown {
    pub fn total(&self) -> f64 {
        self.waypoint + self.energy + self.time + self.terminal
    }
}

/// Objective of the rollout of `(x0, inputs)`. The time term is only counted
/// in [`TimeMode::Joint`].
pub fn total_cost(
    x0: &PhaseState,
    inputs: &[ControlInput],
    weights: &StageWeights,
    shape: &SplineShape,
    mode: TimeMode,
) -> Result<CostBreakdown> {
    check_dim("stage count", weights.q.len(), inputs.len())?;
    let out = rollout(x0, inputs, shape)?;
    let mut breakdown = CostBreakdown::default();
    for (k, u) in inputs.iter().enumerate() {
        let eval = stage_cost(&out.states[k], u, k, weights, shape, mode)?;
        breakdown.waypoint += eval.waypoint;
        breakdown.energy += eval.energy;
        breakdown.time += eval.time;
    }
    breakdown.terminal = terminal_cost(&out.states[inputs.len()], weights)?.value;
    Ok(breakdown)
}
