//! A complete trajectory problem: shape, initial state, weights, corridor and
//! derivative bounds.

use crate::basis::ControlPointBasis;
use crate::constraints::{ConstraintBuilder, DerivBounds, Polyhedron};
use crate::error::{check_dim, Error, Result};
use crate::objective::{StageWeights, TimeMode};
use crate::polyspline::{PhaseState, SplineShape};

#[derive(Debug, Clone)]
pub struct Problem {
    pub shape: SplineShape,
    pub x0: PhaseState,
    pub weights: StageWeights,
    /// One polyhedron per segment, or empty for no corridor.
    pub corridor: Vec<Polyhedron>,
    pub bounds: DerivBounds,
    pub t_min: f64,
    pub basis: ControlPointBasis,
}

impl Problem {
    /// Problem without corridor or derivative bounds.
    pub fn unconstrained(shape: SplineShape, x0: PhaseState, weights: StageWeights, t_min: f64) -> Self {
        Self {
            shape,
            x0,
            weights,
            corridor: Vec::new(),
            bounds: DerivBounds::none(),
            t_min,
            basis: ControlPointBasis::bernstein(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        check_dim("initial state", self.shape.state_dim(), self.x0.len())?;
        self.weights.validate(&self.shape)?;
        if !self.corridor.is_empty() {
            check_dim("corridor length", self.shape.segments(), self.corridor.len())?;
            for (k, poly) in self.corridor.iter().enumerate() {
                if poly.dim() != self.shape.dim() {
                    return Err(Error::Input(format!(
                        "corridor polyhedron {k} has dimension {}, expected {}",
                        poly.dim(),
                        self.shape.dim()
                    )));
                }
            }
        }
        self.bounds.validate(self.shape.half_order())?;
        if !(self.t_min > 0.0) || !self.t_min.is_finite() {
            return Err(Error::Input(format!("t_min must be positive, got {}", self.t_min)));
        }
        Ok(())
    }

    pub fn has_corridor(&self) -> bool {
        !self.corridor.is_empty()
    }

    pub fn polyhedron(&self, k: usize) -> Option<&Polyhedron> {
        self.corridor.get(k)
    }

    /// True when no inequality row exists in `mode`.
    pub fn is_unconstrained(&self, mode: TimeMode) -> bool {
        self.corridor.is_empty()
            && self.bounds.active(self.shape.half_order()).next().is_none()
            && mode == TimeMode::Fixed
    }

    pub fn constraint_builder(&self) -> Result<ConstraintBuilder> {
        ConstraintBuilder::new(&self.shape, &self.bounds, self.t_min, &self.basis)
    }

    /// Same problem with every time weight set to `w` and `Q_N = scale * I`.
    pub fn with_stage_settings(&self, w: f64, terminal_scale: f64) -> Self {
        let mut out = self.clone();
        out.weights = self.weights.with_stage_settings(w, terminal_scale);
        out
    }
}
