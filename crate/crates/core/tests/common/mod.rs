//! Independent oracles for the integration tests.
//!
//! The dense programs here work directly on stacked monomial coefficients
//! `c[k][r][a]` (segment, power, axis) and share no code with the library
//! beyond its public data types.

#![allow(dead_code, clippy::needless_range_loop)]

use std::collections::BTreeMap;

use clarabel::algebra::CscMatrix;
use clarabel::solver::{DefaultSettingsBuilder, DefaultSolver, IPSolver, SolverStatus, SupportedConeT};
use nalgebra::{DMatrix, DVector};
use polytraj::constraints::RowLabel;
use polytraj::problem::Problem;

pub fn fact(k: usize) -> f64 {
    (1..=k).map(|v| v as f64).product()
}

/// `r (r-1) ... (r-i+1)`, zero when `i > r`.
pub fn fall(r: usize, i: usize) -> f64 {
    if i > r {
        0.0
    } else {
        ((r - i + 1)..=r).map(|v| v as f64).product()
    }
}

pub fn binom(n: usize, k: usize) -> f64 {
    fact(n) / (fact(k) * fact(n - k))
}

/// Gauss-Legendre nodes and weights on `[0, 1]` by the Golub-Welsch method.
pub fn gauss_legendre(points: usize) -> (Vec<f64>, Vec<f64>) {
    let jacobi = DMatrix::from_fn(points, points, |i, j| {
        if i + 1 == j || j + 1 == i {
            let k = i.max(j) as f64;
            k / (4.0 * k * k - 1.0).sqrt()
        } else {
            0.0
        }
    });
    let eig = jacobi.symmetric_eigen();
    let mut pairs: Vec<(f64, f64)> = (0..points)
        .map(|i| {
            let v0 = eig.eigenvectors[(0, i)];
            (0.5 * (eig.eigenvalues[i] + 1.0), v0 * v0)
        })
        .collect();
    pairs.sort_by(|a, b| a.0.partial_cmp(&b.0).unwrap());
    pairs.into_iter().unzip()
}

/// Column layout of the stacked coefficient vector.
#[derive(Debug, Clone, Copy)]
pub struct Layout {
    pub n: usize,
    pub d: usize,
    pub segments: usize,
}

impl Layout {
    pub fn m(&self) -> usize {
        self.n.div_ceil(2)
    }

    pub fn size(&self) -> usize {
        self.segments * (self.n + 1) * self.d
    }

    pub fn idx(&self, k: usize, r: usize, a: usize) -> usize {
        (k * (self.n + 1) + r) * self.d + a
    }

    /// Row vector giving derivative `i` of axis `a` of segment `k` at local time `t`.
    pub fn deriv_row(&self, k: usize, t: f64, i: usize, a: usize) -> DVector<f64> {
        let mut row = DVector::zeros(self.size());
        for r in i..=self.n {
            row[self.idx(k, r, a)] = fall(r, i) * t.powi((r - i) as i32);
        }
        row
    }

    /// Rows mapping coefficients to the phase state `[p^(i)(t)]_{i<m}` of segment `k`.
    pub fn state_rows(&self, k: usize, t: f64) -> DMatrix<f64> {
        let md = self.m() * self.d;
        let mut out = DMatrix::zeros(md, self.size());
        for i in 0..self.m() {
            for a in 0..self.d {
                out.set_row(i * self.d + a, &self.deriv_row(k, t, i, a).transpose());
            }
        }
        out
    }

    /// Rows mapping coefficients to order-`i` Bernstein control points of
    /// axis `a` on segment `k` of duration `t`.
    pub fn control_point_rows(&self, k: usize, t: f64, i: usize, a: usize) -> Vec<DVector<f64>> {
        let q = self.n - i;
        // power coefficients of p^(i)(t tau) in tau, as rows over c
        let power: Vec<DVector<f64>> = (0..=q)
            .map(|j| {
                let mut row = DVector::zeros(self.size());
                row[self.idx(k, j + i, a)] = fall(j + i, i) * t.powi(j as i32);
                row
            })
            .collect();
        (0..=q)
            .map(|l| {
                let mut row = DVector::zeros(self.size());
                for (j, pj) in power.iter().enumerate().take(l + 1) {
                    row += pj * (binom(l, j) / binom(q, j));
                }
                row
            })
            .collect()
    }

    pub fn split(&self, c: &DVector<f64>) -> Vec<DMatrix<f64>> {
        (0..self.segments)
            .map(|k| DMatrix::from_fn(self.n + 1, self.d, |r, a| c[self.idx(k, r, a)]))
            .collect()
    }

    /// High-order coefficient blocks `v_k`, derivative-major.
    pub fn inputs(&self, c: &DVector<f64>) -> Vec<DVector<f64>> {
        let m = self.m();
        (0..self.segments)
            .map(|k| DVector::from_fn(m * self.d, |idx, _| c[self.idx(k, m + idx / self.d, idx % self.d)]))
            .collect()
    }
}

/// `min cᵀ H c + 2 fᵀ c + c0` subject to `A c = b`.
#[derive(Debug, Clone)]
pub struct DenseQp {
    pub layout: Layout,
    pub h: DMatrix<f64>,
    pub f: DVector<f64>,
    pub c0: f64,
    pub a_eq: DMatrix<f64>,
    pub b_eq: DVector<f64>,
}

impl DenseQp {
    pub fn cost(&self, c: &DVector<f64>) -> f64 {
        c.dot(&(&self.h * c)) + 2.0 * self.f.dot(c) + self.c0
    }
}

fn add_tracking(qp: &mut DenseQp, s: &DMatrix<f64>, q: &DMatrix<f64>, g: &DVector<f64>) {
    // (S c - g)ᵀ Q (S c - g)
    let sq = s.transpose() * q;
    qp.h += &sq * s;
    qp.f -= &sq * g;
    qp.c0 += g.dot(&(q * g));
}

/// Dense program of `problem` with fixed `durations`: waypoint and terminal
/// tracking, order-`m` energy by quadrature, and equality rows for the
/// initial state and junction continuity. The time penalty is constant here
/// and left out.
pub fn dense_qp(problem: &Problem, durations: &[f64]) -> DenseQp {
    let shape = problem.shape;
    let layout = Layout {
        n: shape.degree(),
        d: shape.dim(),
        segments: shape.segments(),
    };
    assert!(
        problem.weights.lower_energy.is_none(),
        "oracle covers the order-m energy only"
    );
    let size = layout.size();
    let m = layout.m();
    let md = m * layout.d;
    let mut qp = DenseQp {
        layout,
        h: DMatrix::zeros(size, size),
        f: DVector::zeros(size),
        c0: 0.0,
        a_eq: DMatrix::zeros(md * layout.segments, size),
        b_eq: DVector::zeros(md * layout.segments),
    };
    let w = &problem.weights;
    let (nodes, weights) = gauss_legendre(layout.n + 2);
    for (k, &t) in durations.iter().enumerate() {
        add_tracking(&mut qp, &layout.state_rows(k, 0.0), &w.q[k], &w.x_goal[k]);
        for (&s, &wq) in nodes.iter().zip(&weights) {
            for a in 0..layout.d {
                let row = layout.deriv_row(k, s * t, m, a);
                qp.h += &row * row.transpose() * (w.eta[k] * wq * t);
            }
        }
    }
    let last = layout.segments - 1;
    add_tracking(
        &mut qp,
        &layout.state_rows(last, durations[last]),
        &w.q_terminal,
        &w.x_goal_terminal,
    );

    qp.a_eq.rows_mut(0, md).copy_from(&layout.state_rows(0, 0.0));
    qp.b_eq.rows_mut(0, md).copy_from(&problem.x0);
    for k in 1..layout.segments {
        let rows = layout.state_rows(k - 1, durations[k - 1]) - layout.state_rows(k, 0.0);
        qp.a_eq.rows_mut(k * md, md).copy_from(&rows);
    }
    qp
}

/// Solves the equality-constrained program through its KKT system.
pub fn solve_equality_qp(qp: &DenseQp) -> (DVector<f64>, f64) {
    let n = qp.h.nrows();
    let p = qp.a_eq.nrows();
    let mut kkt = DMatrix::zeros(n + p, n + p);
    kkt.view_mut((0, 0), (n, n)).copy_from(&(&qp.h * 2.0));
    kkt.view_mut((0, n), (n, p)).copy_from(&qp.a_eq.transpose());
    kkt.view_mut((n, 0), (p, n)).copy_from(&qp.a_eq);
    let mut rhs = DVector::zeros(n + p);
    rhs.rows_mut(0, n).copy_from(&(-&qp.f * 2.0));
    rhs.rows_mut(n, p).copy_from(&qp.b_eq);
    let sol = kkt.full_piv_lu().solve(&rhs).expect("nonsingular KKT matrix");
    let c = sol.rows(0, n).into_owned();
    let cost = qp.cost(&c);
    (c, cost)
}

/// One oracle inequality `rowᵀ c ≤ rhs`, tagged like the solver's rows.
#[derive(Debug, Clone)]
pub struct OracleRow {
    pub stage: usize,
    pub label: RowLabel,
    pub row: DVector<f64>,
    pub rhs: f64,
}

/// Corridor and derivative-bound rows on Bernstein control points.
pub fn inequality_rows(problem: &Problem, durations: &[f64], layout: &Layout) -> Vec<OracleRow> {
    let mut out = Vec::new();
    let m = layout.m();
    for (k, &t) in durations.iter().enumerate() {
        if let Some(poly) = problem.corridor.get(k) {
            let axes: Vec<Vec<DVector<f64>>> = (0..layout.d).map(|a| layout.control_point_rows(k, t, 0, a)).collect();
            for l in 0..=layout.n {
                for f in 0..poly.faces() {
                    let mut row = DVector::zeros(layout.size());
                    for a in 0..layout.d {
                        row += &axes[a][l] * poly.normals[(f, a)];
                    }
                    out.push(OracleRow {
                        stage: k,
                        label: RowLabel::Corridor { point: l, face: f },
                        row,
                        rhs: poly.offsets[f],
                    });
                }
            }
        }
        for b in problem.bounds.active(m) {
            let i = b.order;
            let axes: Vec<Vec<DVector<f64>>> = (0..layout.d).map(|a| layout.control_point_rows(k, t, i, a)).collect();
            for l in 0..=(layout.n - i) {
                for a in 0..layout.d {
                    out.push(OracleRow {
                        stage: k,
                        label: RowLabel::Lower {
                            order: i,
                            point: l,
                            axis: a,
                        },
                        row: -&axes[a][l],
                        rhs: -b.lower,
                    });
                }
            }
            for l in 0..=(layout.n - i) {
                for a in 0..layout.d {
                    out.push(OracleRow {
                        stage: k,
                        label: RowLabel::Upper {
                            order: i,
                            point: l,
                            axis: a,
                        },
                        row: axes[a][l].clone(),
                        rhs: b.upper,
                    });
                }
            }
        }
    }
    out
}

#[derive(Debug, Clone)]
pub struct InequalitySolution {
    pub c: DVector<f64>,
    pub cost: f64,
    /// Multiplier of each row of `rows`, same order.
    pub duals: Vec<f64>,
}

fn csc(m: &DMatrix<f64>, upper_only: bool) -> CscMatrix<f64> {
    let mut colptr = vec![0usize];
    let mut rowval = Vec::new();
    let mut nzval = Vec::new();
    for j in 0..m.ncols() {
        for i in 0..m.nrows() {
            if upper_only && i > j {
                continue;
            }
            let v = m[(i, j)];
            if v != 0.0 {
                rowval.push(i);
                nzval.push(v);
            }
        }
        colptr.push(rowval.len());
    }
    CscMatrix::new(m.nrows(), m.ncols(), colptr, rowval, nzval)
}

/// Interior-point solution of the inequality-constrained program. The cost
/// is passed as `½ cᵀ (2H) c + (2f)ᵀ c`, so the returned multipliers belong
/// to the unscaled objective.
pub fn solve_inequality_qp(qp: &DenseQp, rows: &[OracleRow]) -> Result<InequalitySolution, String> {
    let n = qp.h.nrows();
    let p = qp.a_eq.nrows();
    let r = rows.len();
    let mut a = DMatrix::zeros(p + r, n);
    a.view_mut((0, 0), (p, n)).copy_from(&qp.a_eq);
    let mut b = vec![0.0; p + r];
    b[..p].copy_from_slice(qp.b_eq.as_slice());
    for (i, row) in rows.iter().enumerate() {
        a.set_row(p + i, &row.row.transpose());
        b[p + i] = row.rhs;
    }
    let h2 = &qp.h + qp.h.transpose();
    let q: Vec<f64> = (&qp.f * 2.0).iter().copied().collect();
    let cones = [SupportedConeT::ZeroConeT(p), SupportedConeT::NonnegativeConeT(r)];
    let settings = DefaultSettingsBuilder::default()
        .verbose(false)
        .tol_gap_abs(1e-12)
        .tol_gap_rel(1e-12)
        .tol_feas(1e-12)
        .tol_ktratio(1e-10)
        .max_iter(500)
        .build()
        .unwrap();
    let mut solver =
        DefaultSolver::new(&csc(&h2, true), &q, &csc(&a, false), &b, &cones, settings).expect("valid oracle program");
    solver.solve();
    if solver.solution.status != SolverStatus::Solved {
        return Err(format!("{:?}", solver.solution.status));
    }
    let c = DVector::from_column_slice(&solver.solution.x);
    let cost = qp.cost(&c);
    let duals = solver.solution.z[p..].to_vec();
    Ok(InequalitySolution { c, cost, duals })
}

/// Key identifying rows that express the same inequality at a shared
/// junction point: the last control point of segment `k` and the first of
/// segment `k + 1` coincide for every order below `m`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord)]
pub enum GroupKey {
    Corridor {
        stage: usize,
        point: usize,
        face: usize,
        offset_bits: u64,
    },
    Lower {
        stage: usize,
        point: usize,
        order: usize,
        axis: usize,
    },
    Upper {
        stage: usize,
        point: usize,
        order: usize,
        axis: usize,
    },
}

pub fn group_key(problem: &Problem, stage: usize, label: RowLabel) -> Option<GroupKey> {
    let n = problem.shape.degree();
    let canonical = |order: usize, point: usize| {
        if point == n - order && stage + 1 < problem.shape.segments() {
            (stage + 1, 0)
        } else {
            (stage, point)
        }
    };
    match label {
        RowLabel::Corridor { point, face } => {
            let (s, p) = canonical(0, point);
            let offset = problem.corridor[stage].offsets[face];
            Some(GroupKey::Corridor {
                stage: s,
                point: p,
                face,
                offset_bits: offset.to_bits(),
            })
        }
        RowLabel::Lower { order, point, axis } => {
            let (s, p) = canonical(order, point);
            Some(GroupKey::Lower {
                stage: s,
                point: p,
                order,
                axis,
            })
        }
        RowLabel::Upper { order, point, axis } => {
            let (s, p) = canonical(order, point);
            Some(GroupKey::Upper {
                stage: s,
                point: p,
                order,
                axis,
            })
        }
        RowLabel::Time => None,
    }
}

/// Sums multipliers over rows sharing a [`GroupKey`].
pub fn group_sums(
    problem: &Problem,
    tagged: impl IntoIterator<Item = (usize, RowLabel, f64)>,
) -> BTreeMap<GroupKey, f64> {
    let mut out = BTreeMap::new();
    for (stage, label, value) in tagged {
        if let Some(key) = group_key(problem, stage, label) {
            *out.entry(key).or_insert(0.0) += value;
        }
    }
    out
}

/// Largest sampled violation of corridor and bounds, straight from the
/// coefficients at `samples` evenly spaced points per segment.
pub fn sampled_violation(problem: &Problem, segments: &[(DMatrix<f64>, f64)], samples: usize) -> f64 {
    let n = problem.shape.degree();
    let d = problem.shape.dim();
    let eval = |c: &DMatrix<f64>, t: f64, i: usize| -> DVector<f64> {
        DVector::from_fn(d, |a, _| {
            (i..=n).map(|r| fall(r, i) * t.powi((r - i) as i32) * c[(r, a)]).sum()
        })
    };
    let mut worst = f64::NEG_INFINITY;
    for (k, (c, dur)) in segments.iter().enumerate() {
        for s in 0..samples {
            let t = dur * s as f64 / (samples - 1) as f64;
            if let Some(poly) = problem.corridor.get(k) {
                let p = eval(c, t, 0);
                worst = worst.max((&poly.normals * &p - &poly.offsets).max());
            }
            for b in problem.bounds.active(problem.shape.half_order()) {
                let v = eval(c, t, b.order);
                for a in 0..d {
                    worst = worst.max(b.lower - v[a]).max(v[a] - b.upper);
                }
            }
        }
    }
    worst
}

/// Largest relative difference, with a unit floor on the magnitude.
pub fn rel_diff(a: &DMatrix<f64>, b: &DMatrix<f64>) -> f64 {
    (a - b).amax() / a.amax().max(b.amax()).max(1.0)
}

/// True when the equality rows together with one representative of every
/// active inequality group are linearly independent, so the multipliers of
/// the program are unique.
pub fn active_set_regular(
    problem: &Problem,
    qp: &DenseQp,
    rows: &[OracleRow],
    c: &DVector<f64>,
    active_tol: f64,
) -> bool {
    let mut seen = std::collections::BTreeSet::new();
    let mut stacked: Vec<DVector<f64>> = (0..qp.a_eq.nrows()).map(|i| qp.a_eq.row(i).transpose()).collect();
    for r in rows {
        let slack = r.rhs - r.row.dot(c);
        if slack <= active_tol {
            if let Some(key) = group_key(problem, r.stage, r.label) {
                if seen.insert(key) {
                    stacked.push(r.row.clone());
                }
            }
        }
    }
    if stacked.len() > c.len() {
        return false;
    }
    let scaled: Vec<DVector<f64>> = stacked.iter().map(|r| r / r.norm()).collect();
    let sv = DMatrix::from_columns(&scaled).singular_values();
    sv.min() > 1e-8 * sv.max()
}
