//! Backward pass: quadratic model of the Lagrangian, elimination of the dual
//! (and slack) directions, and the value-function recursion.

use nalgebra::{DMatrix, DVector};

use super::model::{Evaluated, StageModel};
use crate::error::{Error, Result};

/// Affine update laws of one stage, `δu = k_u + K_u δx`, and likewise for
/// the duals and (infeasible start only) the slacks.
#[derive(Debug, Clone, PartialEq)]
pub struct StageGains {
    pub k_u: DVector<f64>,
    pub gain_u: DMatrix<f64>,
    pub k_dual: DVector<f64>,
    pub gain_dual: DMatrix<f64>,
    pub k_slack: Option<DVector<f64>>,
    pub gain_slack: Option<DMatrix<f64>>,
}

#[derive(Debug, Clone)]
pub struct BackwardPass {
    pub gains: Vec<StageGains>,
    /// `Σ k_uᵀ Q̂_u`; first-order change of the barrier merit along the step.
    pub expected_linear: f64,
    /// `Σ ½ k_uᵀ Q̂_uu k_u`.
    pub expected_quadratic: f64,
    /// `V_x` at stages `0..=N`.
    pub value_grad: Vec<DVector<f64>>,
    /// `V_xx` at stages `0..=N`.
    pub value_hess: Vec<DMatrix<f64>>,
    /// `max_k ‖Q_u‖∞` with `Q_u` including `g_uᵀ λ`.
    pub stationarity: f64,
    /// Largest magnitude among the terms summed into `Q_u`, at least one.
    pub stationarity_scale: f64,
    /// `max |s ∘ λ - μ|`, where `s = -g` without explicit slacks.
    pub complementarity: f64,
    /// `max |g + s|`; zero without explicit slacks.
    pub primal_residual: f64,
}

impl BackwardPass {
    pub fn optimality_error(&self) -> f64 {
        (self.stationarity / self.stationarity_scale).max(self.complementarity)
    }
}

/// Unreduced quadratic model `Q` of one stage.
#[derive(Debug, Clone)]
pub(crate) struct StageQ {
    pub q_x: DVector<f64>,
    pub q_u: DVector<f64>,
    pub q_xx: DMatrix<f64>,
    pub q_uu: DMatrix<f64>,
    pub q_ux: DMatrix<f64>,
}

/// Second-order expansion of `ℓ + λᵀ g + V'(f)` around the nominal point.
pub(crate) fn stage_q(model: &StageModel, lambda: &DVector<f64>, vx: &DVector<f64>, vxx: &DMatrix<f64>) -> StageQ {
    let c = &model.cost;
    let a = &model.a;
    let fu = &model.fu;
    let vxx_a = vxx * a;
    let vxx_fu = vxx * fu;
    let mut q_x = &c.grad_x + a.tr_mul(vx);
    let mut q_u = &c.grad_u + fu.tr_mul(vx);
    if !lambda.is_empty() {
        q_x += model.g_x().tr_mul(lambda);
        q_u += model.g_u().tr_mul(lambda);
    }
    let q_xx = &c.hess_xx + a.tr_mul(&vxx_a);
    let mut q_uu = &c.hess_uu + fu.tr_mul(&vxx_fu);
    let mut q_ux = &c.hess_ux + fu.tr_mul(&vxx_a);
    if let Some(tt) = &model.time {
        let md = a.nrows();
        // f is bilinear in (t, x) and (t, v): only t rows and columns pick up
        // second-derivative terms of the dynamics and the constraints.
        let (cx, cv, ctt) = model.cons.curvature(lambda, md);
        let bt = tt.db.tr_mul(vx) + cv;
        let at = tt.da.tr_mul(vx) + cx;
        for j in 0..md {
            q_uu[(md, j)] += bt[j];
            q_uu[(j, md)] += bt[j];
            q_ux[(md, j)] += at[j];
        }
        q_uu[(md, md)] += vx.dot(&tt.second) + ctt;
    }
    StageQ {
        q_x,
        q_u,
        q_xx,
        q_uu,
        q_ux,
    }
}

/// `g_aᵀ diag(w) g_b`.
fn weighted_gram(ga: &DMatrix<f64>, w: &DVector<f64>, gb: &DMatrix<f64>) -> DMatrix<f64> {
    let mut scaled = gb.clone();
    for (mut row, &wi) in scaled.row_iter_mut().zip(w.iter()) {
        row *= wi;
    }
    ga.tr_mul(&scaled)
}

/// Runs the recursion. `slacks = None` means the feasible variant, where the
/// slack is `-g` and the primal residual vanishes identically.
pub(crate) fn backward(
    eval: &Evaluated,
    duals: &[DVector<f64>],
    slacks: Option<&[DVector<f64>]>,
    mu: f64,
    reg: f64,
) -> Result<BackwardPass> {
    let n = eval.models.len();
    let mut vx = eval.terminal.grad.clone();
    let mut vxx = eval.terminal.hess.clone();
    let mut value_grad = vec![DVector::zeros(0); n + 1];
    let mut value_hess = vec![DMatrix::zeros(0, 0); n + 1];
    value_grad[n] = vx.clone();
    value_hess[n] = vxx.clone();
    let mut gains = Vec::with_capacity(n);
    let mut d1 = 0.0;
    let mut d2 = 0.0;
    let mut stationarity: f64 = 0.0;
    let mut stationarity_scale: f64 = 1.0;
    let mut complementarity: f64 = 0.0;
    let mut primal_residual: f64 = 0.0;

    for k in (0..n).rev() {
        let model = &eval.models[k];
        let lambda = &duals[k];
        let g = model.g();
        let g_x = model.g_x();
        let g_u = model.g_u();
        let q = stage_q(model, lambda, &vx, &vxx);
        stationarity = stationarity.max(q.q_u.amax());
        let term_scale = model.cost.grad_u.amax().max(model.fu.tr_mul(&vx).amax()).max(
            g_u.row_iter()
                .zip(lambda.iter())
                .map(|(row, l)| l.abs() * row.amax())
                .fold(0.0, f64::max),
        );
        stationarity_scale = stationarity_scale.max(term_scale);

        let s = match slacks {
            Some(sl) => sl[k].clone(),
            None => -g,
        };
        let r_p = match slacks {
            Some(_) => g + &s,
            None => DVector::zeros(g.len()),
        };
        let r_d = s.component_mul(lambda).add_scalar(-mu);
        if !r_d.is_empty() {
            complementarity = complementarity.max(r_d.amax());
            primal_residual = primal_residual.max(r_p.amax());
        }
        let sigma = lambda.component_div(&s);
        let rho = (lambda.component_mul(&r_p) - &r_d).component_div(&s);

        let hq_u = &q.q_u + g_u.tr_mul(&rho);
        let hq_x = &q.q_x + g_x.tr_mul(&rho);
        let hq_uu = &q.q_uu + weighted_gram(g_u, &sigma, g_u);
        let hq_ux = &q.q_ux + weighted_gram(g_u, &sigma, g_x);
        let hq_xx = &q.q_xx + weighted_gram(g_x, &sigma, g_x);

        let nu = hq_uu.nrows();
        let mut damped = hq_uu.clone();
        damped += DMatrix::identity(nu, nu) * reg;
        let damped = (&damped + damped.transpose()) * 0.5;
        let chol = damped.cholesky().ok_or(Error::NotPositiveDefinite { stage: k })?;
        let k_u = -chol.solve(&hq_u);
        let gain_u = -chol.solve(&hq_ux);

        let gu_ku = g_u * &k_u;
        let gu_gain = g_u * &gain_u + g_x;
        let k_dual = sigma.component_mul(&gu_ku) + &rho;
        let mut gain_dual = gu_gain.clone();
        for (mut row, &si) in gain_dual.row_iter_mut().zip(sigma.iter()) {
            row *= si;
        }
        let (k_slack, gain_slack) = match slacks {
            Some(_) => (Some(-(&r_p + &gu_ku)), Some(-gu_gain)),
            None => (None, None),
        };

        let uu_k = &hq_uu * &k_u;
        d1 += k_u.dot(&hq_u);
        d2 += 0.5 * k_u.dot(&uu_k);
        vx = &hq_x + gain_u.tr_mul(&uu_k) + gain_u.tr_mul(&hq_u) + hq_ux.tr_mul(&k_u);
        let cross = gain_u.tr_mul(&hq_ux);
        vxx = &hq_xx + gain_u.tr_mul(&(&hq_uu * &gain_u)) + &cross + cross.transpose();
        vxx = (&vxx + vxx.transpose()) * 0.5;
        value_grad[k] = vx.clone();
        value_hess[k] = vxx.clone();
        gains.push(StageGains {
            k_u,
            gain_u,
            k_dual,
            gain_dual,
            k_slack,
            gain_slack,
        });
    }
    gains.reverse();
    Ok(BackwardPass {
        gains,
        expected_linear: d1,
        expected_quadratic: d2,
        value_grad,
        value_hess,
        stationarity,
        stationarity_scale,
        complementarity,
        primal_residual,
    })
}

/// `(k_u, K_u, k_λ, K_λ)` of one stage.
pub type BlockGains = (DVector<f64>, DMatrix<f64>, DVector<f64>, DMatrix<f64>);

/// Solves the unreduced primal-dual Newton system of one stage,
///
/// ```text
/// [ Q_uu   g_uᵀ ] [δu]     [ Q_u ]   [ Q_ux  ]
/// [ Λ g_u  G    ] [δλ] = - [ r   ] - [ Λ g_x ] δx,     r = Λ g + μ,
/// ```
///
/// returning `(k_u, K_u, k_λ, K_λ)`. Used to cross-check the reduced form.
#[allow(clippy::too_many_arguments)]
pub fn kkt_block_gains(
    q_uu: &DMatrix<f64>,
    q_u: &DVector<f64>,
    q_ux: &DMatrix<f64>,
    g: &DVector<f64>,
    g_u: &DMatrix<f64>,
    g_x: &DMatrix<f64>,
    lambda: &DVector<f64>,
    mu: f64,
) -> Option<BlockGains> {
    let nu = q_uu.nrows();
    let nc = g.len();
    let nx = q_ux.ncols();
    let size = nu + nc;
    let mut lhs = DMatrix::zeros(size, size);
    lhs.view_mut((0, 0), (nu, nu)).copy_from(q_uu);
    lhs.view_mut((0, nu), (nu, nc)).copy_from(&g_u.transpose());
    for i in 0..nc {
        for j in 0..nu {
            lhs[(nu + i, j)] = lambda[i] * g_u[(i, j)];
        }
        lhs[(nu + i, nu + i)] = g[i];
    }
    let mut rhs = DMatrix::zeros(size, 1 + nx);
    rhs.view_mut((0, 0), (nu, 1)).copy_from(&(-q_u));
    rhs.view_mut((0, 1), (nu, nx)).copy_from(&(-q_ux));
    for i in 0..nc {
        rhs[(nu + i, 0)] = -(lambda[i] * g[i] + mu);
        for j in 0..nx {
            rhs[(nu + i, 1 + j)] = -lambda[i] * g_x[(i, j)];
        }
    }
    let sol = lhs.lu().solve(&rhs)?;
    Some((
        sol.view((0, 0), (nu, 1)).column(0).into_owned(),
        sol.view((0, 1), (nu, nx)).into_owned(),
        sol.view((nu, 0), (nc, 1)).column(0).into_owned(),
        sol.view((nu, 1), (nc, nx)).into_owned(),
    ))
}
