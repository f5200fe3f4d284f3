//! State-space form of odd-degree piecewise polynomials.
//!
//! A degree `n = 2m - 1` segment `p(t) = C^T b(t)` on `[0, t_k]` is split into a
//! low-order coefficient block (fixed by the proximal phase state
//! `[p(0), p'(0), ..., p^(m-1)(0)]`) and a high-order block `v`. The distal
//! phase state is then `x⁺ = A(t_k) x + B(t_k) v`, so chaining segments through
//! this recursion gives `C^(m-1)` continuity for free.
//!
//! Vector layout: phase states and high-order blocks are derivative-major,
//! axis-minor, i.e. entry `i * d + a` is derivative (or coefficient) `i` of
//! axis `a`.

use nalgebra::{DMatrix, DVector};

use crate::error::{check_dim, Error, Result};

/// Phase state `vec(p^[m](0))`, length `m * d`.
pub type PhaseState = DVector<f64>;

const FACTORIALS: [f64; 21] = {
    let mut table = [1.0; 21];
    let mut i = 1;
    while i < 21 {
        table[i] = table[i - 1] * i as f64;
        i += 1;
    }
    table
};

pub fn factorial(k: usize) -> f64 {
    if k < FACTORIALS.len() {
        FACTORIALS[k]
    } else {
        (FACTORIALS.len()..=k).fold(FACTORIALS[20], |acc, j| acc * j as f64)
    }
}

/// `r! / (r - i)!`, zero when `i > r`.
pub fn falling(r: usize, i: usize) -> f64 {
    if i > r {
        return 0.0;
    }
    ((r - i + 1)..=r).fold(1.0, |acc, j| acc * j as f64)
}

/// `M ⊗ I_d`.
pub fn kron_identity(m: &DMatrix<f64>, d: usize) -> DMatrix<f64> {
    let mut out = DMatrix::zeros(m.nrows() * d, m.ncols() * d);
    for i in 0..m.nrows() {
        for j in 0..m.ncols() {
            let value = m[(i, j)];
            if value != 0.0 {
                for a in 0..d {
                    out[(i * d + a, j * d + a)] = value;
                }
            }
        }
    }
    out
}

/// Degree, dimension and segment count of a piecewise polynomial.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct SplineShape {
    degree: usize,
    dim: usize,
    segments: usize,
}

impl SplineShape {
    pub fn new(degree: usize, dim: usize, segments: usize) -> Result<Self> {
        if degree < 3 || degree.is_multiple_of(2) {
            return Err(Error::Input(format!(
                "polynomial degree must be odd and at least 3, got {degree}"
            )));
        }
        if dim == 0 {
            return Err(Error::Input("spatial dimension must be at least 1".into()));
        }
        if segments == 0 {
            return Err(Error::Input("at least one segment is required".into()));
        }
        Ok(Self { degree, dim, segments })
    }

    /// Polynomial degree `n`.
    pub fn degree(&self) -> usize {
        self.degree
    }

    /// Half order `m = (n + 1) / 2`.
    pub fn half_order(&self) -> usize {
        self.degree.div_ceil(2)
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn segments(&self) -> usize {
        self.segments
    }

    /// Length of a phase state and of a high-order coefficient block, `m * d`.
    pub fn state_dim(&self) -> usize {
        self.half_order() * self.dim
    }

    /// Degrees 3, 5 and 7 are exercised by the test suite; higher odd degrees
    /// are accepted but not covered.
    pub fn is_validated_degree(&self) -> bool {
        matches!(self.degree, 3 | 5 | 7)
    }

    pub fn with_segments(&self, segments: usize) -> Result<Self> {
        Self::new(self.degree, self.dim, segments)
    }
}

/// `i`-th derivative of `b(t) = [1, t, ..., t^n]`.
pub fn monomial_basis(t: f64, n: usize, i: usize) -> Result<DVector<f64>> {
    if !(t >= 0.0) || !t.is_finite() {
        return Err(Error::Input(format!("basis time must be a finite t >= 0, got {t}")));
    }
    Ok(DVector::from_fn(n + 1, |r, _| {
        if r < i {
            0.0
        } else {
            falling(r, i) * t.powi((r - i) as i32)
        }
    }))
}

/// The three nonzero `m x m` blocks of the endpoint map `F`.
#[derive(Debug, Clone, PartialEq)]
pub struct FBlocks {
    pub f11: DMatrix<f64>,
    pub f21: DMatrix<f64>,
    pub f22: DMatrix<f64>,
}

/// Endpoint blocks: `F11 = diag((i-1)!)`, `[F21]_ij = (j-1)!/(j-i)! t^(j-i)`
/// for `i <= j`, `[F22]_ij = (m+j-1)!/(m+j-i)! t^(m+j-i)` (1-based indices).
pub fn f_blocks(t: f64, m: usize) -> Result<FBlocks> {
    if m < 1 {
        return Err(Error::Input("half order must be at least 1".into()));
    }
    check_time(t)?;
    let f11 = DMatrix::from_fn(m, m, |i, j| if i == j { factorial(i) } else { 0.0 });
    let f21 = DMatrix::from_fn(m, m, |i, j| {
        if i <= j {
            factorial(j) / factorial(j - i) * t.powi((j - i) as i32)
        } else {
            0.0
        }
    });
    let f22 = DMatrix::from_fn(m, m, |i, j| {
        let r = m + j;
        falling(r, i) * t.powi((r - i) as i32)
    });
    Ok(FBlocks { f11, f21, f22 })
}

fn check_time(t: f64) -> Result<()> {
    if t >= 0.0 && t.is_finite() {
        Ok(())
    } else {
        Err(Error::Input(format!("segment time must be finite and >= 0, got {t}")))
    }
}

/// `order`-th time derivative of the integrator-chain transition `F21 F11^-1`,
/// entry `(i, j) = t^(j-i) / (j-i)!`.
pub(crate) fn transition_block(t: f64, m: usize, order: usize) -> DMatrix<f64> {
    DMatrix::from_fn(m, m, |i, j| {
        if j < i + order {
            0.0
        } else {
            let p = j - i - order;
            t.powi(p as i32) / factorial(p)
        }
    })
}

/// `order`-th time derivative of `F22`.
pub(crate) fn input_block(t: f64, m: usize, order: usize) -> DMatrix<f64> {
    DMatrix::from_fn(m, m, |i, j| {
        let r = m + j;
        let p = r - i;
        if p < order {
            0.0
        } else {
            falling(r, i) * falling(p, order) * t.powi((p - order) as i32)
        }
    })
}

/// `A(t) = (F21 F11^-1) ⊗ I_d`, `B(t) = F22 ⊗ I_d`.
pub fn state_matrices(t: f64, shape: &SplineShape) -> Result<(DMatrix<f64>, DMatrix<f64>)> {
    check_time(t)?;
    let m = shape.half_order();
    let d = shape.dim();
    Ok((
        kron_identity(&transition_block(t, m, 0), d),
        kron_identity(&input_block(t, m, 0), d),
    ))
}

/// Exact first or second time derivatives of `A(t)` and `B(t)`.
pub fn state_matrix_time_derivs(t: f64, shape: &SplineShape, order: usize) -> Result<(DMatrix<f64>, DMatrix<f64>)> {
    if !(1..=2).contains(&order) {
        return Err(Error::Input(format!("derivative order must be 1 or 2, got {order}")));
    }
    check_time(t)?;
    let m = shape.half_order();
    let d = shape.dim();
    Ok((
        kron_identity(&transition_block(t, m, order), d),
        kron_identity(&input_block(t, m, order), d),
    ))
}

/// High-order coefficients and duration of one segment.
#[derive(Debug, Clone, PartialEq)]
pub struct ControlInput {
    pub v: DVector<f64>,
    pub duration: f64,
}

impl ControlInput {
    pub fn new(v: DVector<f64>, duration: f64) -> Self {
        Self { v, duration }
    }

    pub fn zeros(shape: &SplineShape, duration: f64) -> Self {
        Self::new(DVector::zeros(shape.state_dim()), duration)
    }
}

/// `x⁺ = A(t) x + B(t) v`.
pub fn propagate(x: &PhaseState, u: &ControlInput, shape: &SplineShape) -> Result<PhaseState> {
    check_dim("phase state", shape.state_dim(), x.len())?;
    check_dim("control input", shape.state_dim(), u.v.len())?;
    if !(u.duration > 0.0) || !u.duration.is_finite() {
        return Err(Error::Input(format!("duration must be positive, got {}", u.duration)));
    }
    let (a, b) = state_matrices(u.duration, shape)?;
    Ok(a * x + b * &u.v)
}

/// Coefficient matrix of one segment, row `r` holding the `t^r` coefficients.
#[derive(Debug, Clone, PartialEq)]
pub struct SegmentCoeffs {
    pub coeffs: DMatrix<f64>,
    pub duration: f64,
}

impl SegmentCoeffs {
    pub fn new(coeffs: DMatrix<f64>, duration: f64) -> Result<Self> {
        if !(duration > 0.0) || !duration.is_finite() {
            return Err(Error::Input(format!(
                "segment duration must be positive, got {duration}"
            )));
        }
        Ok(Self { coeffs, duration })
    }

    pub fn degree(&self) -> usize {
        self.coeffs.nrows() - 1
    }

    pub fn dim(&self) -> usize {
        self.coeffs.ncols()
    }

    /// `i`-th derivative at local time `t`.
    pub fn eval(&self, t: f64, i: usize) -> DVector<f64> {
        let n = self.degree();
        let mut out = DVector::zeros(self.dim());
        // Horner on the derivative coefficients
        for r in (i..=n).rev() {
            out *= t;
            let scale = falling(r, i);
            for a in 0..self.dim() {
                out[a] += scale * self.coeffs[(r, a)];
            }
        }
        out
    }
}

/// Builds the segment whose proximal phase state is `x` and whose high-order
/// coefficient block is `v`.
pub fn coeffs_from(x: &PhaseState, v: &DVector<f64>, t: f64, shape: &SplineShape) -> Result<SegmentCoeffs> {
    check_dim("phase state", shape.state_dim(), x.len())?;
    check_dim("high-order block", shape.state_dim(), v.len())?;
    let m = shape.half_order();
    let d = shape.dim();
    let coeffs = DMatrix::from_fn(shape.degree() + 1, d, |r, a| {
        if r < m {
            x[r * d + a] / factorial(r)
        } else {
            v[(r - m) * d + a]
        }
    });
    SegmentCoeffs::new(coeffs, t)
}

/// Inverse of [`coeffs_from`].
pub fn state_control_from(seg: &SegmentCoeffs, shape: &SplineShape) -> Result<(PhaseState, DVector<f64>)> {
    check_dim("coefficient rows", shape.degree() + 1, seg.coeffs.nrows())?;
    check_dim("coefficient columns", shape.dim(), seg.coeffs.ncols())?;
    let m = shape.half_order();
    let d = shape.dim();
    let x = DVector::from_fn(m * d, |idx, _| {
        let (r, a) = (idx / d, idx % d);
        seg.coeffs[(r, a)] * factorial(r)
    });
    let v = DVector::from_fn(m * d, |idx, _| {
        let (j, a) = (idx / d, idx % d);
        seg.coeffs[(m + j, a)]
    });
    Ok((x, v))
}

/// An ordered list of segments sharing one [`SplineShape`].
#[derive(Debug, Clone, PartialEq)]
pub struct PiecewiseTrajectory {
    pub shape: SplineShape,
    pub segments: Vec<SegmentCoeffs>,
}

/// Output of [`rollout`]: the trajectory and the junction states `x_0..x_N`.
#[derive(Debug, Clone)]
pub struct Rollout {
    pub trajectory: PiecewiseTrajectory,
    pub states: Vec<PhaseState>,
}

pub fn rollout(x0: &PhaseState, inputs: &[ControlInput], shape: &SplineShape) -> Result<Rollout> {
    if inputs.is_empty() {
        return Err(Error::Input("rollout needs at least one input".into()));
    }
    check_dim("phase state", shape.state_dim(), x0.len())?;
    let mut states = Vec::with_capacity(inputs.len() + 1);
    let mut segments = Vec::with_capacity(inputs.len());
    states.push(x0.clone());
    for (index, u) in inputs.iter().enumerate() {
        if !(u.duration > 0.0) || !u.duration.is_finite() {
            return Err(Error::Duration {
                index,
                duration: u.duration,
            });
        }
        let x = &states[index];
        segments.push(coeffs_from(x, &u.v, u.duration, shape)?);
        let next = propagate(x, u, shape)?;
        states.push(next);
    }
    let shape = shape.with_segments(inputs.len())?;
    Ok(Rollout {
        trajectory: PiecewiseTrajectory { shape, segments },
        states,
    })
}

impl PiecewiseTrajectory {
    pub fn durations(&self) -> Vec<f64> {
        self.segments.iter().map(|s| s.duration).collect()
    }

    pub fn total_duration(&self) -> f64 {
        self.segments.iter().map(|s| s.duration).sum()
    }

    /// Segment index and local time for a global time. Interior junctions
    /// resolve to the right segment, the final endpoint to the last one.
    pub fn locate(&self, t_global: f64) -> Result<(usize, f64)> {
        let total = self.total_duration();
        let slack = 1e-12 * total.max(1.0);
        if !(t_global >= 0.0) || t_global > total + slack {
            return Err(Error::Input(format!(
                "time {t_global} outside trajectory range [0, {total}]"
            )));
        }
        let mut start = 0.0;
        for (k, seg) in self.segments.iter().enumerate() {
            let end = start + seg.duration;
            if t_global < end || k + 1 == self.segments.len() {
                return Ok((k, (t_global - start).clamp(0.0, seg.duration)));
            }
            start = end;
        }
        unreachable!("trajectory has at least one segment")
    }

    pub fn evaluate(&self, t_global: f64, i: usize) -> Result<DVector<f64>> {
        let (k, local) = self.locate(t_global)?;
        Ok(self.segments[k].eval(local, i))
    }

    /// Largest derivative mismatch over orders `0..m` at each interior junction.
    pub fn junction_residuals(&self) -> Vec<f64> {
        let m = self.shape.half_order();
        self.segments
            .windows(2)
            .map(|pair| {
                (0..m)
                    .map(|i| {
                        let left = pair[0].eval(pair[0].duration, i);
                        let right = pair[1].eval(0.0, i);
                        (left - right).amax()
                    })
                    .fold(0.0, f64::max)
            })
            .collect()
    }

    pub fn max_junction_residual(&self) -> f64 {
        self.junction_residuals().into_iter().fold(0.0, f64::max)
    }
}
