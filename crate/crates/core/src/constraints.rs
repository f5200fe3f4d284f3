//! Corridor, derivative-bound and time-floor inequalities `g(x, u) <= 0`
//! expressed on control points, with exact Jacobians.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::basis::ControlPointBasis;
use crate::error::{check_dim, Error, Result};
use crate::objective::TimeMode;
use crate::polyspline::{
    factorial, falling, ControlInput, PhaseState, PiecewiseTrajectory, SegmentCoeffs, SplineShape,
};

/// Convex polyhedron `{p : W p <= h}`.
#[derive(Debug, Clone, PartialEq)]
pub struct Polyhedron {
    pub normals: DMatrix<f64>,
    pub offsets: DVector<f64>,
}

impl Polyhedron {
    pub fn new(normals: DMatrix<f64>, offsets: DVector<f64>) -> Result<Self> {
        if normals.nrows() == 0 {
            return Err(Error::Input("polyhedron needs at least one face".into()));
        }
        check_dim("polyhedron offsets", normals.nrows(), offsets.len())?;
        for (f, row) in normals.row_iter().enumerate() {
            if row.amax() == 0.0 {
                return Err(Error::Input(format!("polyhedron face {f} has a zero normal")));
            }
        }
        Ok(Self { normals, offsets })
    }

    /// Axis-aligned box `lo <= p <= hi`.
    pub fn from_box(lo: &[f64], hi: &[f64]) -> Result<Self> {
        check_dim("box corner", lo.len(), hi.len())?;
        let d = lo.len();
        let mut normals = DMatrix::zeros(2 * d, d);
        let mut offsets = DVector::zeros(2 * d);
        for a in 0..d {
            normals[(2 * a, a)] = 1.0;
            offsets[2 * a] = hi[a];
            normals[(2 * a + 1, a)] = -1.0;
            offsets[2 * a + 1] = -lo[a];
        }
        Self::new(normals, offsets)
    }

    pub fn faces(&self) -> usize {
        self.normals.nrows()
    }

    pub fn dim(&self) -> usize {
        self.normals.ncols()
    }

    /// `max_f (W_f p - h_f)`; nonpositive iff `p` is inside.
    pub fn violation(&self, p: &DVector<f64>) -> f64 {
        (&self.normals * p - &self.offsets).max()
    }

    pub fn contains(&self, p: &DVector<f64>, margin: f64) -> bool {
        self.violation(p) <= -margin
    }

    /// Detects pairs of antiparallel faces that pinch the set to a slab of
    /// zero (or negative) width. This is a cheap partial emptiness check.
    pub fn is_degenerate(&self) -> bool {
        let s = self.faces();
        for i in 0..s {
            let ni = self.normals.row(i);
            for j in (i + 1)..s {
                let nj = self.normals.row(j);
                let dot = ni.dot(&nj);
                let norms = ni.norm() * nj.norm();
                if dot < 0.0 && (dot.abs() - norms).abs() <= 1e-12 * norms {
                    let c = ni.norm() / nj.norm();
                    if self.offsets[i] + c * self.offsets[j] <= 0.0 {
                        return true;
                    }
                }
            }
        }
        false
    }
}

/// Per-order box bounds on derivative control points, orders `1..m`.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct DerivBounds {
    entries: Vec<DerivBound>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DerivBound {
    pub order: usize,
    pub lower: f64,
    pub upper: f64,
}

impl DerivBounds {
    pub fn none() -> Self {
        Self::default()
    }

    /// `|p^(i)| <= max` per axis for each `(i, max)`.
    pub fn symmetric(limits: &[(usize, f64)]) -> Result<Self> {
        let mut out = Self::none();
        for &(order, max) in limits {
            out.set(order, -max, max)?;
        }
        Ok(out)
    }

    pub fn set(&mut self, order: usize, lower: f64, upper: f64) -> Result<()> {
        if order == 0 {
            return Err(Error::Input("derivative bounds start at order 1".into()));
        }
        if !(lower < 0.0 && upper > 0.0) {
            return Err(Error::Input(format!(
                "order {order} bounds must satisfy lower < 0 < upper, got [{lower}, {upper}]"
            )));
        }
        self.entries.retain(|b| b.order != order);
        self.entries.push(DerivBound { order, lower, upper });
        self.entries.sort_by_key(|b| b.order);
        Ok(())
    }

    pub fn get(&self, order: usize) -> Option<(f64, f64)> {
        self.entries
            .iter()
            .find(|b| b.order == order)
            .map(|b| (b.lower, b.upper))
    }

    pub fn entries(&self) -> &[DerivBound] {
        &self.entries
    }

    /// Bounds restricted to the orders constrained for half order `m`.
    pub fn active(&self, m: usize) -> impl Iterator<Item = &DerivBound> {
        self.entries.iter().filter(move |b| b.order < m)
    }

    pub fn validate(&self, m: usize) -> Result<()> {
        for b in &self.entries {
            if b.order >= m {
                return Err(Error::Input(format!(
                    "derivative bound on order {} exceeds the constrained range 1..{}",
                    b.order,
                    m - 1
                )));
            }
        }
        Ok(())
    }
}

/// What a row of `g` constrains.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub enum RowLabel {
    Corridor { point: usize, face: usize },
    Lower { order: usize, point: usize, axis: usize },
    Upper { order: usize, point: usize, axis: usize },
    Time,
}

/// Stage inequality and its Jacobians.
#[derive(Debug, Clone, PartialEq)]
pub struct StageConstraint {
    pub g: DVector<f64>,
    pub jac_x: DMatrix<f64>,
    pub jac_u: DMatrix<f64>,
    pub labels: Vec<RowLabel>,
}

/// `g = H(t) [x; v] - h` plus, in joint mode, the time row. Holds what is
/// needed for the second-order terms `λ ⊙ g_ut`, `λ ⊙ g_tt`.
#[derive(Debug, Clone)]
pub struct ConstraintEval {
    pub constraint: StageConstraint,
    /// `dH/dt`, rows of `g` by `2md`; only in joint mode.
    pub dh: Option<DMatrix<f64>>,
    /// `d²H/dt² [x; v]`; only in joint mode.
    pub d2h_w: Option<DVector<f64>>,
}

impl ConstraintEval {
    /// `(∂²(λᵀg)/∂t∂x, ∂²(λᵀg)/∂t∂v, ∂²(λᵀg)/∂t²)`; zero in fixed mode.
    pub fn curvature(&self, lambda: &DVector<f64>, md: usize) -> (DVector<f64>, DVector<f64>, f64) {
        match (&self.dh, &self.d2h_w) {
            (Some(dh), Some(d2)) => {
                let cross = dh.tr_mul(lambda);
                (
                    cross.rows(0, md).into_owned(),
                    cross.rows(md, md).into_owned(),
                    lambda.dot(d2),
                )
            }
            _ => (DVector::zeros(md), DVector::zeros(md), 0.0),
        }
    }
}

/// `order`-th time derivative of the map from coefficient rows to the
/// order-`i` control points, `(n+1-i) x (n+1)`:
/// `T_i(t) = M_{n-i} D_i(t)` with `[D_i]_{j, j+i} = (j+i)!/j! t^j`.
pub fn control_point_map(t: f64, i: usize, n: usize, basis: &ControlPointBasis, order: usize) -> Result<DMatrix<f64>> {
    if i > n {
        return Err(Error::Input(format!("derivative order {i} exceeds degree {n}")));
    }
    let q = n - i;
    let conversion = basis.conversion(q)?;
    Ok(control_point_map_with(&conversion, t, i, n, order))
}

fn control_point_map_with(conversion: &DMatrix<f64>, t: f64, i: usize, n: usize, order: usize) -> DMatrix<f64> {
    let q = n - i;
    // D_i(t) is "diagonal" in j; apply column scaling to the conversion.
    let mut out = DMatrix::zeros(q + 1, n + 1);
    for j in 0..=q {
        let time_factor = if j < order {
            0.0
        } else {
            falling(j, order) * t.powi((j - order) as i32)
        };
        let scale = falling(j + i, i) * time_factor;
        if scale == 0.0 {
            continue;
        }
        for l in 0..=q {
            out[(l, j + i)] = conversion[(l, j)] * scale;
        }
    }
    out
}

/// Order-`i` control points of a segment, `(n+1-i) x d`.
pub fn control_points(seg: &SegmentCoeffs, i: usize, basis: &ControlPointBasis) -> Result<DMatrix<f64>> {
    let n = seg.degree();
    let m = n.div_ceil(2);
    if i >= m {
        return Err(Error::Input(format!(
            "control points are defined for orders 0..{}, got {i}",
            m - 1
        )));
    }
    Ok(control_point_map(seg.duration, i, n, basis, 0)? * &seg.coeffs)
}

/// Cached conversion matrices for one problem.
#[derive(Debug, Clone)]
pub struct ConstraintBuilder {
    shape: SplineShape,
    conversions: Vec<DMatrix<f64>>,
    bounds: DerivBounds,
    t_min: f64,
}

impl ConstraintBuilder {
    pub fn new(shape: &SplineShape, bounds: &DerivBounds, t_min: f64, basis: &ControlPointBasis) -> Result<Self> {
        let m = shape.half_order();
        let n = shape.degree();
        bounds.validate(m)?;
        if !(t_min > 0.0) {
            return Err(Error::Input(format!("t_min must be positive, got {t_min}")));
        }
        let conversions = (0..m).map(|i| basis.conversion(n - i)).collect::<Result<Vec<_>>>()?;
        Ok(Self {
            shape: *shape,
            conversions,
            bounds: bounds.clone(),
            t_min,
        })
    }

    pub fn t_min(&self) -> f64 {
        self.t_min
    }

    /// Number of rows for a stage with `faces` corridor faces (0 for none).
    pub fn row_count(&self, faces: usize, mode: TimeMode) -> usize {
        let n = self.shape.degree();
        let d = self.shape.dim();
        let m = self.shape.half_order();
        let bound_rows: usize = self.bounds.active(m).map(|b| 2 * d * (n + 1 - b.order)).sum();
        (n + 1) * faces + bound_rows + usize::from(mode == TimeMode::Joint)
    }

    /// `H(t)` (`order = 0`) or its time derivatives, and the offsets `h`.
    fn linear_map(
        &self,
        poly: Option<&Polyhedron>,
        t: f64,
        order: usize,
    ) -> (DMatrix<f64>, DVector<f64>, Vec<RowLabel>) {
        let n = self.shape.degree();
        let d = self.shape.dim();
        let m = self.shape.half_order();
        let md = m * d;
        let faces = poly.map_or(0, Polyhedron::faces);
        let rows = self.row_count(faces, TimeMode::Fixed);
        let mut h_mat = DMatrix::zeros(rows, 2 * md);
        let mut offsets = DVector::zeros(rows);
        let mut labels = Vec::with_capacity(rows);
        // column of coefficient (r, axis a) in [x; v], with F11^-1 folded in
        let col_scale = |r: usize| if r < m { 1.0 / factorial(r) } else { 1.0 };

        let mut row = 0;
        if let Some(poly) = poly {
            let t0 = control_point_map_with(&self.conversions[0], t, 0, n, order);
            for l in 0..=n {
                for f in 0..faces {
                    for r in 0..=n {
                        let base = t0[(l, r)] * col_scale(r);
                        if base == 0.0 {
                            continue;
                        }
                        for a in 0..d {
                            h_mat[(row, r * d + a)] = base * poly.normals[(f, a)];
                        }
                    }
                    offsets[row] = poly.offsets[f];
                    labels.push(RowLabel::Corridor { point: l, face: f });
                    row += 1;
                }
            }
        }
        for bound in self.bounds.active(m) {
            let i = bound.order;
            let ti = control_point_map_with(&self.conversions[i], t, i, n, order);
            for (sign, rhs) in [(-1.0, -bound.lower), (1.0, bound.upper)] {
                for l in 0..=(n - i) {
                    for a in 0..d {
                        for r in i..=n {
                            h_mat[(row, r * d + a)] = sign * ti[(l, r)] * col_scale(r);
                        }
                        offsets[row] = rhs;
                        labels.push(if sign < 0.0 {
                            RowLabel::Lower {
                                order: i,
                                point: l,
                                axis: a,
                            }
                        } else {
                            RowLabel::Upper {
                                order: i,
                                point: l,
                                axis: a,
                            }
                        });
                        row += 1;
                    }
                }
            }
        }
        debug_assert_eq!(row, rows);
        (h_mat, offsets, labels)
    }

    /// Evaluates the stage inequality at `(x, u)`.
    pub fn evaluate(
        &self,
        x: &PhaseState,
        u: &ControlInput,
        poly: Option<&Polyhedron>,
        mode: TimeMode,
    ) -> Result<ConstraintEval> {
        let md = self.shape.state_dim();
        check_dim("phase state", md, x.len())?;
        check_dim("control input", md, u.v.len())?;
        if let Some(p) = poly {
            check_dim("polyhedron dimension", self.shape.dim(), p.dim())?;
        }
        let t = u.duration;
        let mut w = DVector::zeros(2 * md);
        w.rows_mut(0, md).copy_from(x);
        w.rows_mut(md, md).copy_from(&u.v);

        let (h_mat, offsets, mut labels) = self.linear_map(poly, t, 0);
        let base_rows = h_mat.nrows();
        let joint = mode == TimeMode::Joint;
        let rows = base_rows + usize::from(joint);
        let nu = mode.input_dim(&self.shape);

        let mut g = DVector::zeros(rows);
        g.rows_mut(0, base_rows).copy_from(&(&h_mat * &w - offsets));
        let mut jac_x = DMatrix::zeros(rows, md);
        jac_x.view_mut((0, 0), (base_rows, md)).copy_from(&h_mat.columns(0, md));
        let mut jac_u = DMatrix::zeros(rows, nu);
        jac_u
            .view_mut((0, 0), (base_rows, md))
            .copy_from(&h_mat.columns(md, md));

        let (dh, d2h_w) = if joint {
            let (h1, _, _) = self.linear_map(poly, t, 1);
            let (h2, _, _) = self.linear_map(poly, t, 2);
            let dh_w = &h1 * &w;
            jac_u.view_mut((0, md), (base_rows, 1)).copy_from(&dh_w);
            g[base_rows] = self.t_min - t;
            jac_u[(base_rows, md)] = -1.0;
            labels.push(RowLabel::Time);
            let mut dh = DMatrix::zeros(rows, 2 * md);
            dh.view_mut((0, 0), (base_rows, 2 * md)).copy_from(&h1);
            let mut d2 = DVector::zeros(rows);
            d2.rows_mut(0, base_rows).copy_from(&(h2 * &w));
            (Some(dh), Some(d2))
        } else {
            (None, None)
        };

        Ok(ConstraintEval {
            constraint: StageConstraint {
                g,
                jac_x,
                jac_u,
                labels,
            },
            dh,
            d2h_w,
        })
    }
}

/// One-shot assembly of a stage inequality.
#[allow(clippy::too_many_arguments)]
pub fn assemble_stage_constraint(
    x: &PhaseState,
    u: &ControlInput,
    poly: Option<&Polyhedron>,
    bounds: &DerivBounds,
    t_min: f64,
    basis: &ControlPointBasis,
    shape: &SplineShape,
    mode: TimeMode,
) -> Result<StageConstraint> {
    let builder = ConstraintBuilder::new(shape, bounds, t_min, basis)?;
    Ok(builder.evaluate(x, u, poly, mode)?.constraint)
}

/// Where the worst violation of a feasibility report occurred.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct ViolationSite {
    pub segment: usize,
    /// 0 for the corridor, otherwise the derivative order.
    pub order: usize,
    pub value: f64,
}

/// Control-point and sampled constraint margins of a trajectory. Positive
/// values are violations.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct FeasibilityReport {
    pub control_point_violation: f64,
    pub sampled_violation: f64,
    /// `(order, control-point violation, sampled violation)`; order 0 is the corridor.
    pub by_order: Vec<(usize, f64, f64)>,
    pub worst_control_point: Option<ViolationSite>,
    pub worst_sample: Option<ViolationSite>,
}

impl FeasibilityReport {
    pub fn control_points_clean(&self) -> bool {
        self.control_point_violation <= 0.0
    }
}

fn bump(slot: &mut Option<ViolationSite>, site: ViolationSite) {
    if slot.is_none_or(|s| site.value > s.value) {
        *slot = Some(site);
    }
}

/// Checks the corridor and derivative bounds on control points and on
/// `samples` uniform samples per segment (endpoints included).
pub fn check_feasibility(
    traj: &PiecewiseTrajectory,
    corridor: &[Polyhedron],
    bounds: &DerivBounds,
    basis: &ControlPointBasis,
    samples: usize,
) -> Result<FeasibilityReport> {
    if !corridor.is_empty() {
        check_dim("corridor length", traj.segments.len(), corridor.len())?;
    }
    let m = traj.shape.half_order();
    bounds.validate(m)?;
    let samples = samples.max(2);
    let mut orders: Vec<usize> = Vec::new();
    if !corridor.is_empty() {
        orders.push(0);
    }
    orders.extend(bounds.active(m).map(|b| b.order));
    let mut by_order: Vec<(usize, f64, f64)> = orders
        .iter()
        .map(|&o| (o, f64::NEG_INFINITY, f64::NEG_INFINITY))
        .collect();
    let mut worst_cp = None;
    let mut worst_sample = None;

    for (k, seg) in traj.segments.iter().enumerate() {
        for (slot, &order) in orders.iter().enumerate() {
            let margin = |p: &DVector<f64>| -> f64 {
                if order == 0 {
                    corridor[k].violation(p)
                } else {
                    let (lo, hi) = bounds.get(order).expect("order drawn from bounds");
                    p.iter()
                        .map(|&x| (x - hi).max(lo - x))
                        .fold(f64::NEG_INFINITY, f64::max)
                }
            };
            let points = control_points(seg, order, basis)?;
            let cp = points
                .row_iter()
                .map(|r| margin(&r.transpose()))
                .fold(f64::NEG_INFINITY, f64::max);
            let sampled = (0..samples)
                .map(|j| {
                    let t = seg.duration * j as f64 / (samples - 1) as f64;
                    margin(&seg.eval(t, order))
                })
                .fold(f64::NEG_INFINITY, f64::max);
            by_order[slot].1 = by_order[slot].1.max(cp);
            by_order[slot].2 = by_order[slot].2.max(sampled);
            bump(
                &mut worst_cp,
                ViolationSite {
                    segment: k,
                    order,
                    value: cp,
                },
            );
            bump(
                &mut worst_sample,
                ViolationSite {
                    segment: k,
                    order,
                    value: sampled,
                },
            );
        }
    }
    Ok(FeasibilityReport {
        control_point_violation: worst_cp.map_or(f64::NEG_INFINITY, |s| s.value),
        sampled_violation: worst_sample.map_or(f64::NEG_INFINITY, |s| s.value),
        by_order,
        worst_control_point: worst_cp,
        worst_sample,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::polyspline::{coeffs_from, rollout};

    fn lcg(seed: u64) -> impl FnMut() -> f64 {
        let mut s = seed.wrapping_add(0x9E3779B97F4A7C15);
        move || {
            s = s.wrapping_mul(6364136223846793005).wrapping_add(1442695040888963407);
            ((s >> 11) as f64 / (1u64 << 53) as f64) * 2.0 - 1.0
        }
    }

    fn unit_box(d: usize) -> Polyhedron {
        Polyhedron::from_box(&vec![-1.0; d], &vec![1.0; d]).unwrap()
    }

    #[test]
    fn constant_segment_control_points() {
        let shape = SplineShape::new(5, 2, 1).unwrap();
        let mut x = DVector::zeros(6);
        x[0] = 0.3;
        x[1] = -0.4;
        let seg = coeffs_from(&x, &DVector::zeros(6), 1.7, &shape).unwrap();
        let pts = control_points(&seg, 0, &ControlPointBasis::bernstein()).unwrap();
        assert_eq!(pts.nrows(), 6);
        for r in pts.row_iter() {
            assert!((r[0] - 0.3).abs() < 1e-15 && (r[1] + 0.4).abs() < 1e-15);
        }
        assert!(control_points(&seg, 3, &ControlPointBasis::bernstein()).is_err());
    }

    #[test]
    fn linear_segment_points_interpolate() {
        // p(t) = a + b t on [0, 1], degree 5
        let shape = SplineShape::new(5, 1, 1).unwrap();
        let x = DVector::from_vec(vec![1.0, 2.0, 0.0]);
        let seg = coeffs_from(&x, &DVector::zeros(3), 1.0, &shape).unwrap();
        let pts = control_points(&seg, 0, &ControlPointBasis::bernstein()).unwrap();
        for l in 0..6 {
            assert!((pts[(l, 0)] - (1.0 + 2.0 * l as f64 / 5.0)).abs() < 1e-14);
        }
    }

    #[test]
    fn derivative_hull_contains_samples() {
        let basis = ControlPointBasis::bernstein();
        let mut rnd = lcg(5);
        for _ in 0..50 {
            let coeffs = DMatrix::from_fn(6, 2, |_, _| rnd());
            let seg = SegmentCoeffs::new(coeffs, 0.5 + rnd().abs() * 2.0).unwrap();
            for i in 0..3 {
                let pts = control_points(&seg, i, &basis).unwrap();
                for a in 0..2 {
                    let lo = pts.column(a).min();
                    let hi = pts.column(a).max();
                    for s in 0..1000 {
                        let v = seg.eval(seg.duration * s as f64 / 999.0, i)[a];
                        assert!(v >= lo - 1e-9 && v <= hi + 1e-9);
                    }
                }
            }
        }
    }

    #[test]
    fn interior_point_gives_strictly_negative_rows() {
        let shape = SplineShape::new(5, 3, 1).unwrap();
        let bounds = DerivBounds::symmetric(&[(1, 2.0), (2, 2.0)]).unwrap();
        let mut x = DVector::zeros(9);
        x[0] = 0.2;
        x[1] = -0.1;
        let u = ControlInput::zeros(&shape, 0.2);
        let sc = assemble_stage_constraint(
            &x,
            &u,
            Some(&unit_box(3)),
            &bounds,
            0.1,
            &ControlPointBasis::bernstein(),
            &shape,
            TimeMode::Joint,
        )
        .unwrap();
        assert!(sc.g.max() < 0.0);
        assert_eq!(sc.g.len(), 6 * 6 + 2 * 3 * (5 + 4) + 1);
        assert_eq!(sc.labels.last(), Some(&RowLabel::Time));
        assert_eq!(sc.jac_u.ncols(), 10);
    }

    #[test]
    fn control_point_on_face_is_active() {
        let shape = SplineShape::new(3, 2, 1).unwrap();
        let mut x = DVector::zeros(4);
        x[0] = 1.0;
        let u = ControlInput::zeros(&shape, 1.0);
        let sc = assemble_stage_constraint(
            &x,
            &u,
            Some(&unit_box(2)),
            &DerivBounds::none(),
            0.1,
            &ControlPointBasis::bernstein(),
            &shape,
            TimeMode::Fixed,
        )
        .unwrap();
        // every control point sits on the x = +1 face (face 0)
        for (row, label) in sc.labels.iter().enumerate() {
            if let RowLabel::Corridor { face: 0, .. } = label {
                assert_eq!(sc.g[row], 0.0);
            }
        }
    }

    #[test]
    fn row_count_formula() {
        let basis = ControlPointBasis::bernstein();
        for (n, d, s) in [(3, 1, 4), (5, 3, 17), (7, 2, 6)] {
            let shape = SplineShape::new(n, d, 1).unwrap();
            let m = shape.half_order();
            let limits: Vec<_> = (1..m).map(|i| (i, 3.0)).collect();
            let bounds = DerivBounds::symmetric(&limits).unwrap();
            let b = ConstraintBuilder::new(&shape, &bounds, 0.1, &basis).unwrap();
            let expected = (n + 1) * s + 2 * d * (1..m).map(|i| n + 1 - i).sum::<usize>() + 1;
            assert_eq!(b.row_count(s, TimeMode::Joint), expected);
            let normals = DMatrix::from_fn(s, d, |f, a| ((f * 7 + a * 3) as f64).sin() + 0.01);
            let poly = Polyhedron::new(normals, DVector::from_element(s, 1.0)).unwrap();
            let ev = b
                .evaluate(
                    &DVector::zeros(shape.state_dim()),
                    &ControlInput::zeros(&shape, 1.0),
                    Some(&poly),
                    TimeMode::Joint,
                )
                .unwrap();
            assert_eq!(ev.constraint.g.len(), expected);
        }
    }

    #[test]
    fn missing_orders_are_skipped() {
        let shape = SplineShape::new(7, 1, 1).unwrap();
        let bounds = DerivBounds::symmetric(&[(2, 1.0)]).unwrap();
        let b = ConstraintBuilder::new(&shape, &bounds, 0.1, &ControlPointBasis::bernstein()).unwrap();
        assert_eq!(b.row_count(0, TimeMode::Fixed), 2 * 6);
        let too_high = DerivBounds::symmetric(&[(4, 1.0)]).unwrap();
        assert!(ConstraintBuilder::new(&shape, &too_high, 0.1, &ControlPointBasis::bernstein()).is_err());
    }

    #[test]
    fn jacobians_match_finite_differences() {
        let basis = ControlPointBasis::bernstein();
        for (n, d) in [(3, 2), (5, 3), (7, 1)] {
            let shape = SplineShape::new(n, d, 1).unwrap();
            let m = shape.half_order();
            let md = shape.state_dim();
            let limits: Vec<_> = (1..m).map(|i| (i, 2.0)).collect();
            let bounds = DerivBounds::symmetric(&limits).unwrap();
            let builder = ConstraintBuilder::new(&shape, &bounds, 0.1, &basis).unwrap();
            let mut rnd = lcg(n as u64 * 13 + d as u64);
            let poly = Polyhedron::new(
                DMatrix::from_fn(5, d, |_, _| rnd()),
                DVector::from_fn(5, |_, _| rnd().abs()),
            )
            .unwrap();
            for mode in [TimeMode::Fixed, TimeMode::Joint] {
                for _ in 0..5 {
                    let x = DVector::from_fn(md, |_, _| rnd());
                    let u = ControlInput::new(DVector::from_fn(md, |_, _| rnd()), 1.0 + 0.5 * rnd());
                    let ev = builder.evaluate(&x, &u, Some(&poly), mode).unwrap();
                    let sc = &ev.constraint;
                    let h = 1e-6;
                    let scale = sc.jac_x.amax().max(sc.jac_u.amax()).max(1.0);
                    for i in 0..md {
                        let mut xp = x.clone();
                        xp[i] += h;
                        let mut xm = x.clone();
                        xm[i] -= h;
                        let gp = builder.evaluate(&xp, &u, Some(&poly), mode).unwrap().constraint.g;
                        let gm = builder.evaluate(&xm, &u, Some(&poly), mode).unwrap().constraint.g;
                        let fd = (gp - gm) / (2.0 * h);
                        assert!((fd - sc.jac_x.column(i)).amax() <= 1e-6 * scale);
                    }
                    let nu = mode.input_dim(&shape);
                    for j in 0..nu {
                        let bump_u = |delta: f64| {
                            let mut up = u.clone();
                            if j < md {
                                up.v[j] += delta;
                            } else {
                                up.duration += delta;
                            }
                            builder.evaluate(&x, &up, Some(&poly), mode).unwrap()
                        };
                        let (ep, em) = (bump_u(h), bump_u(-h));
                        let fd = (&ep.constraint.g - &em.constraint.g) / (2.0 * h);
                        assert!((fd - sc.jac_u.column(j)).amax() <= 1e-6 * scale, "column {j}");
                        if mode == TimeMode::Joint && j == md {
                            // second order: d/dt of the Jacobians
                            let lambda = DVector::from_fn(sc.g.len(), |i, _| ((i * 31 % 17) as f64) * 0.1);
                            let (cx, cv, ctt) = ev.curvature(&lambda, md);
                            let fd_x =
                                (ep.constraint.jac_x.tr_mul(&lambda) - em.constraint.jac_x.tr_mul(&lambda)) / (2.0 * h);
                            let fd_u =
                                (ep.constraint.jac_u.tr_mul(&lambda) - em.constraint.jac_u.tr_mul(&lambda)) / (2.0 * h);
                            let s2 = fd_u.amax().max(1.0);
                            assert!((fd_x - cx).amax() <= 1e-6 * s2);
                            assert!((fd_u.rows(0, md) - cv).amax() <= 1e-6 * s2);
                            assert!((fd_u[md] - ctt).abs() <= 1e-6 * s2);
                        }
                    }
                }
            }
        }
    }

    #[test]
    fn feasibility_report_flags_speeding() {
        let shape = SplineShape::new(5, 1, 2).unwrap();
        let corridor = vec![Polyhedron::from_box(&[-10.0], &[10.0]).unwrap(); 2];
        let bounds = DerivBounds::symmetric(&[(1, 2.0), (2, 2.0)]).unwrap();
        let basis = ControlPointBasis::bernstein();

        let still = rollout(&DVector::zeros(3), &vec![ControlInput::zeros(&shape, 1.0); 2], &shape).unwrap();
        let report = check_feasibility(&still.trajectory, &corridor, &bounds, &basis, 100).unwrap();
        assert!(report.control_point_violation <= 0.0);
        assert!(report.sampled_violation <= 0.0);

        // constant velocity 3 > v_max
        let moving = rollout(
            &DVector::from_vec(vec![0.0, 3.0, 0.0]),
            &vec![ControlInput::zeros(&shape, 1.0); 2],
            &shape,
        )
        .unwrap();
        let report = check_feasibility(&moving.trajectory, &corridor, &bounds, &basis, 100).unwrap();
        let order1 = report.by_order.iter().find(|e| e.0 == 1).unwrap();
        assert!(order1.1 > 0.0 && order1.2 > 0.0);
        assert_eq!(report.worst_control_point.unwrap().order, 1);
    }

    #[test]
    fn degenerate_slab_detection() {
        let slab = Polyhedron::new(
            DMatrix::from_row_slice(2, 1, &[1.0, -2.0]),
            DVector::from_vec(vec![1.0, -2.0]),
        )
        .unwrap();
        assert!(slab.is_degenerate());
        assert!(!unit_box(3).is_degenerate());
    }
}
