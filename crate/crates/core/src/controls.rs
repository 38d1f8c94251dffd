//! Boundary controls and their convex constraint sets.

use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::grid::{BoundaryField, BoundaryRegion, ControlPartition};
use crate::{Error, Result};

/// Closed convex set a control is restricted to.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize, Default)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum ConstraintSet {
    #[default]
    Unbounded,
    /// Componentwise bounds.
    Box { lo: f64, hi: f64 },
    /// Boundary-norm ball around a constant field.
    Ball { radius: f64, center: f64 },
    /// Intersection of a box and a ball.
    BoxBall { lo: f64, hi: f64, radius: f64, center: f64 },
}

impl ConstraintSet {
    pub fn validate(&self) -> Result<()> {
        let check_box = |lo: f64, hi: f64| {
            if !(lo.is_finite() || lo == f64::NEG_INFINITY) || !(hi.is_finite() || hi == f64::INFINITY) || lo > hi {
                return Err(Error::InfeasibleSet(format!("box bounds [{lo}, {hi}]")));
            }
            Ok(())
        };
        let check_ball = |r: f64, c: f64| {
            if !(r.is_finite() && r > 0.0 && c.is_finite()) {
                return Err(Error::InfeasibleSet(format!("ball radius {r}, center {c}")));
            }
            Ok(())
        };
        match *self {
            ConstraintSet::Unbounded => Ok(()),
            ConstraintSet::Box { lo, hi } => check_box(lo, hi),
            ConstraintSet::Ball { radius, center } => check_ball(radius, center),
            ConstraintSet::BoxBall { lo, hi, radius, center } => {
                check_box(lo, hi)?;
                check_ball(radius, center)?;
                if center < lo || center > hi {
                    return Err(Error::InfeasibleSet("ball center outside the box".into()));
                }
                Ok(())
            }
        }
    }

    pub fn is_bounded(&self) -> bool {
        match *self {
            ConstraintSet::Unbounded => false,
            ConstraintSet::Box { lo, hi } => lo.is_finite() && hi.is_finite(),
            _ => true,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize, Default)]
pub struct ControlSets {
    pub g: ConstraintSet,
    pub phi1: ConstraintSet,
    pub phi2: ConstraintSet,
}

impl ControlSets {
    pub fn validate(&self) -> Result<()> {
        self.g.validate()?;
        self.phi1.validate()?;
        self.phi2.validate()
    }

    pub fn all_bounded(&self) -> bool {
        self.g.is_bounded() && self.phi1.is_bounded() && self.phi2.is_bounded()
    }
}

/// Velocity control `g` on `Gamma_0^1`, lateral heat flux `phi1`, bottom
/// temperature `phi2`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ControlTriple {
    pub g: BoundaryField,
    pub phi1: BoundaryField,
    pub phi2: BoundaryField,
    pub sets: ControlSets,
}

impl ControlTriple {
    pub fn zeros(partition: &ControlPartition, lateral: Arc<BoundaryRegion>, bottom: Arc<BoundaryRegion>) -> Self {
        Self {
            g: BoundaryField::zeros(partition.gamma01.clone(), 3).constrained(),
            phi1: BoundaryField::zeros(lateral, 1),
            phi2: BoundaryField::zeros(bottom, 1),
            sets: ControlSets::default(),
        }
    }

    /// Data of the conduction state: no wall motion, insulated side
    /// walls, uniform bottom temperature.
    pub fn conduction(
        partition: &ControlPartition,
        lateral: Arc<BoundaryRegion>,
        bottom: Arc<BoundaryRegion>,
        theta_c: f64,
    ) -> Self {
        let mut c = Self::zeros(partition, lateral, bottom);
        c.phi2.values.iter_mut().for_each(|v| *v = theta_c);
        c
    }

    pub fn with_sets(mut self, sets: ControlSets) -> Self {
        self.sets = sets;
        self
    }

    pub fn validate(&self) -> Result<()> {
        if self.g.ncomp != 3 || self.phi1.ncomp != 1 || self.phi2.ncomp != 1 {
            return Err(Error::DimensionMismatch("control components"));
        }
        let all = self.g.values.iter().chain(&self.phi1.values).chain(&self.phi2.values);
        if all.clone().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("controls".into()));
        }
        self.g.check_normal_constraints(1e-10)?;
        self.sets.validate()
    }

    /// Multiplies every control by `s`.
    pub fn scaled(&self, s: f64) -> Self {
        Self { g: self.g.scaled(s), phi1: self.phi1.scaled(s), phi2: self.phi2.scaled(s), sets: self.sets }
    }

    /// Flat coordinates `[g, phi1, phi2]`.
    pub fn to_flat(&self) -> Vec<f64> {
        self.g.values.iter().chain(&self.phi1.values).chain(&self.phi2.values).copied().collect()
    }

    pub fn from_flat_like(&self, v: &[f64]) -> Result<Self> {
        let (ng, n1) = (self.g.values.len(), self.phi1.values.len());
        if v.len() != ng + n1 + self.phi2.values.len() {
            return Err(Error::DimensionMismatch("flat controls"));
        }
        let mut c = self.clone();
        c.g.values.copy_from_slice(&v[..ng]);
        c.phi1.values.copy_from_slice(&v[ng..ng + n1]);
        c.phi2.values.copy_from_slice(&v[ng + n1..]);
        Ok(c)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::grid::{BoxGrid, RegionTag};

    #[test]
    fn set_validation() {
        assert!(ConstraintSet::Box { lo: 1.0, hi: 0.0 }.validate().is_err());
        assert!(ConstraintSet::Ball { radius: 0.0, center: 0.0 }.validate().is_err());
        assert!(ConstraintSet::Box { lo: f64::NEG_INFINITY, hi: 2.0 }.validate().is_ok());
        assert!(!ConstraintSet::Box { lo: f64::NEG_INFINITY, hi: 2.0 }.is_bounded());
        assert!(ConstraintSet::BoxBall { lo: -1.0, hi: 1.0, radius: 1.0, center: 3.0 }.validate().is_err());
    }

    #[test]
    fn flat_roundtrip_and_conduction_data() {
        let grid = BoxGrid::cube(4).unwrap();
        let part = ControlPartition::lateral(&grid);
        let c = ControlTriple::conduction(
            &part,
            Arc::new(grid.region(RegionTag::Lateral)),
            Arc::new(grid.region(RegionTag::Bottom)),
            1.0,
        );
        c.validate().unwrap();
        assert!(c.phi2.values.iter().all(|v| *v == 1.0));
        let back = c.from_flat_like(&c.to_flat()).unwrap();
        assert_eq!(back, c);
        assert!(c.from_flat_like(&[0.0]).is_err());
    }
}
