//! Time evolution of the level populations.
//!
//! Two engines share the same model and protocol: an exact master-equation
//! integrator ([`master`]) and a photon-resolved kinetic Monte Carlo
//! sampler ([`kmc`]). Their agreement on binned populations is the central
//! cross-validation property of the crate.

pub mod kmc;
pub mod master;

use crate::level_model::{LevelGraph, LevelId, ModelError};
use crate::pulse_protocol::ProtocolError;
use thiserror::Error;

/// Entries may dip this far below zero from roundoff and are clamped to
/// zero on output.
pub const CLAMP_TOL: f64 = 1e-12;
/// Sum-to-one tolerance enforced on every stored population vector.
pub const NORM_TOL: f64 = 1e-9;
/// Drift beyond this is an integrator failure rather than roundoff.
pub const DRIFT_ERR: f64 = 1e-6;

#[derive(Debug, Error)]
pub enum EngineError {
    #[error("integration step {dt} ns exceeds the stability bound {max} ns for this model")]
    StepTooLarge { dt: f64, max: f64 },
    #[error("population normalization drifted by {drift:e} at t = {t} ns")]
    NormalizationDrift { t: f64, drift: f64 },
    #[error("initial populations are not a probability distribution: {0}")]
    BadInit(&'static str),
    #[error("level `{0}` is not declared in the graph")]
    UndeclaredLevel(LevelId),
    #[error("invalid engine setting: {0}")]
    BadConfig(&'static str),
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Protocol(#[from] ProtocolError),
}

/// Probability distribution over the levels of one graph, stored in the
/// graph's declaration order.
#[derive(Debug, Clone, PartialEq)]
pub struct PopulationVector {
    levels: Vec<LevelId>,
    p: Vec<f64>,
}

impl PopulationVector {
    /// All population on a single level.
    pub fn pure(graph: &LevelGraph, level: LevelId) -> Result<Self, EngineError> {
        let idx = graph.index_of(level).ok_or(EngineError::UndeclaredLevel(level))?;
        let mut p = vec![0.0; graph.levels().len()];
        p[idx] = 1.0;
        Ok(PopulationVector { levels: graph.levels().to_vec(), p })
    }

    /// Build from explicit (level, probability) pairs; unlisted levels get
    /// zero. The pairs must sum to one.
    pub fn from_pairs(graph: &LevelGraph, pairs: &[(LevelId, f64)]) -> Result<Self, EngineError> {
        let mut p = vec![0.0; graph.levels().len()];
        for &(level, value) in pairs {
            let idx = graph.index_of(level).ok_or(EngineError::UndeclaredLevel(level))?;
            p[idx] += value;
        }
        let pv = PopulationVector { levels: graph.levels().to_vec(), p };
        pv.validate()?;
        Ok(pv)
    }

    pub fn from_raw(levels: Vec<LevelId>, p: Vec<f64>) -> Result<Self, EngineError> {
        if levels.len() != p.len() {
            return Err(EngineError::BadInit("level/probability length mismatch"));
        }
        let pv = PopulationVector { levels, p };
        pv.validate()?;
        Ok(pv)
    }

    pub fn validate(&self) -> Result<(), EngineError> {
        for &v in &self.p {
            if !v.is_finite() || v < -CLAMP_TOL {
                return Err(EngineError::BadInit("entries must be >= 0"));
            }
        }
        if (self.sum() - 1.0).abs() > NORM_TOL {
            return Err(EngineError::BadInit("entries must sum to 1"));
        }
        Ok(())
    }

    pub fn levels(&self) -> &[LevelId] {
        &self.levels
    }

    /// Probability of `level`, clamped to zero from below; 0 for levels
    /// not present.
    pub fn get(&self, level: LevelId) -> f64 {
        self.levels
            .iter()
            .position(|&l| l == level)
            .map_or(0.0, |i| self.p[i].max(0.0))
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.p
    }

    pub fn sum(&self) -> f64 {
        self.p.iter().sum()
    }
}

/// Fixed-step integrator settings.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct IntegratorConfig {
    /// Step size, ns. Must not exceed the model's smallest timescale / 20.
    pub dt: f64,
    /// End of the integration window, ns; at most the protocol period.
    pub t_end: f64,
}

impl IntegratorConfig {
    pub fn validate(&self, graph: &LevelGraph, period: f64) -> Result<(), EngineError> {
        if !(self.dt > 0.0) {
            return Err(EngineError::BadConfig("dt must be > 0"));
        }
        if let Some(min_ts) = graph.min_timescale() {
            let max = min_ts / 20.0;
            if self.dt > max * (1.0 + 1e-12) {
                return Err(EngineError::StepTooLarge { dt: self.dt, max });
            }
        }
        if !(self.t_end > 0.0) || self.t_end > period * (1.0 + 1e-12) {
            return Err(EngineError::BadConfig("t_end must lie in (0, period]"));
        }
        Ok(())
    }
}

/// Instantaneous population transfer: for each (a → b) pair, move
/// `fraction` of a's population to b, reading all sources from the input
/// so simultaneous pairs do not interfere.
pub fn apply_instantaneous_pulse(
    p: &PopulationVector,
    mapping: &[(LevelId, LevelId)],
    fraction: f64,
) -> Result<PopulationVector, EngineError> {
    if !(0.0..=1.0).contains(&fraction) {
        return Err(EngineError::BadConfig("transfer fraction must lie in [0,1]"));
    }
    let mut out = p.clone();
    for &(from, to) in mapping {
        let from_idx = p
            .levels
            .iter()
            .position(|&l| l == from)
            .ok_or(EngineError::UndeclaredLevel(from))?;
        let to_idx = p
            .levels
            .iter()
            .position(|&l| l == to)
            .ok_or(EngineError::UndeclaredLevel(to))?;
        let moved = fraction * p.p[from_idx];
        out.p[from_idx] -= moved;
        out.p[to_idx] += moved;
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::level_model::{build_default_model, ModelParams};

    #[test]
    fn full_transfer_moves_everything() {
        let g = build_default_model(ModelParams::default()).unwrap();
        let p = PopulationVector::pure(&g, LevelId::De).unwrap();
        let out = apply_instantaneous_pulse(&p, &[(LevelId::De, LevelId::XxT3)], 1.0).unwrap();
        assert_eq!(out.get(LevelId::XxT3), 1.0);
        assert_eq!(out.get(LevelId::De), 0.0);
        assert_eq!(out.sum(), 1.0);
    }

    #[test]
    fn empty_source_leaves_vector_unchanged() {
        let g = build_default_model(ModelParams::default()).unwrap();
        let p = PopulationVector::pure(&g, LevelId::Empty).unwrap();
        let out = apply_instantaneous_pulse(&p, &[(LevelId::De, LevelId::XxT3)], 1.0).unwrap();
        assert_eq!(out, p);
    }

    #[test]
    fn partial_transfer_arithmetic() {
        let g = build_default_model(ModelParams::default()).unwrap();
        let p = PopulationVector::from_pairs(&g, &[(LevelId::De, 0.4), (LevelId::Empty, 0.6)]).unwrap();
        let out = apply_instantaneous_pulse(&p, &[(LevelId::De, LevelId::XxT3)], 0.5).unwrap();
        assert!((out.get(LevelId::De) - 0.2).abs() < 1e-15);
        assert!((out.get(LevelId::XxT3) - 0.2).abs() < 1e-15);
        assert!((out.get(LevelId::Empty) - 0.6).abs() < 1e-15);
        assert!((out.sum() - 1.0).abs() < 1e-15);
    }

    #[test]
    fn applying_mapping_then_inverse_restores_populations() {
        let g = build_default_model(ModelParams::default()).unwrap();
        let p = PopulationVector::from_pairs(
            &g,
            &[(LevelId::De, 0.3), (LevelId::Empty, 0.5), (LevelId::Be, 0.2)],
        )
        .unwrap();
        let fwd = apply_instantaneous_pulse(&p, &[(LevelId::De, LevelId::XxT3)], 1.0).unwrap();
        let back = apply_instantaneous_pulse(&fwd, &[(LevelId::XxT3, LevelId::De)], 1.0).unwrap();
        assert_eq!(back, p);
    }

    #[test]
    fn mapping_to_undeclared_level_is_an_error() {
        let g = build_default_model(ModelParams::default()).unwrap();
        let p = PopulationVector::pure(&g, LevelId::De).unwrap();
        let err = apply_instantaneous_pulse(&p, &[(LevelId::De, LevelId::XProbe)], 1.0).unwrap_err();
        assert!(matches!(err, EngineError::UndeclaredLevel(LevelId::XProbe)));
    }

    #[test]
    fn bad_initial_distributions_are_rejected() {
        let g = build_default_model(ModelParams::default()).unwrap();
        assert!(PopulationVector::from_pairs(&g, &[(LevelId::De, 0.4)]).is_err());
        assert!(PopulationVector::from_pairs(&g, &[(LevelId::De, -0.1), (LevelId::Empty, 1.1)]).is_err());
    }
}
