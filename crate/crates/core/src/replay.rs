//! Forward replay of a backward log.
//!
//! Records are processed from the deepest (last recorded) to the shallowest.
//! A neuron is active while its tracked window is open: a certified spike
//! opens it with a known potential of zero, and the presynaptic addition that
//! brought the neuron into the clan closes it.

use std::collections::{BTreeMap, BTreeSet};

use thiserror::Error;

use crate::backward::{EventKind, EventRecord};
use crate::model::{ModelSpec, NeuronId, Potential, Threshold};

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum ReplayError {
    #[error("replay invariant violated at record {index} (neuron {neuron}): {reason}")]
    ReplayInvariantViolation {
        index: usize,
        neuron: NeuronId,
        reason: &'static str,
    },
}

/// Active set and potentials during replay.
#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct ReplayState {
    pub active: BTreeSet<NeuronId>,
    pub p: BTreeMap<NeuronId, Potential>,
}

impl ReplayState {
    fn fire(&mut self, model: &ModelSpec, j: NeuronId, k: Threshold) {
        self.p.insert(j, 0);
        for m in model.post(j, k) {
            if m != j && self.active.contains(&m) {
                *self.p.get_mut(&m).expect("active neurons have a potential") += 1;
            }
        }
    }

    /// Applies one record. `index` only labels errors.
    pub fn apply(&mut self, model: &ModelSpec, index: usize, rec: &EventRecord) -> Result<(), ReplayError> {
        let j = rec.neuron;
        let violation = |reason| ReplayError::ReplayInvariantViolation { index, neuron: j, reason };
        match rec.kind {
            EventKind::CertifiedSpike => {
                self.active.insert(j);
                self.fire(model, j, rec.threshold);
            }
            EventKind::Stimulus => {
                if !self.active.contains(&j) {
                    return Err(violation("stimulus on an inactive neuron"));
                }
                *self.p.get_mut(&j).expect("active") += 1;
            }
            EventKind::FailedCertification | EventKind::PresynAdd => {
                if !self.active.contains(&j) {
                    return Err(violation("spike candidate of an inactive neuron"));
                }
                if rec.threshold >= 1 && self.p[&j] >= rec.threshold as Potential {
                    self.fire(model, j, rec.threshold);
                }
                if rec.kind == EventKind::PresynAdd {
                    self.active.remove(&j);
                }
            }
            EventKind::NullOverlap => return Err(violation("null event in a replayable log")),
        }
        Ok(())
    }
}

fn run(model: &ModelSpec, log: &[EventRecord]) -> Result<ReplayState, ReplayError> {
    let mut state = ReplayState::default();
    for (index, rec) in log.iter().enumerate().rev() {
        state.apply(model, index, rec)?;
    }
    Ok(state)
}

/// Potential of `root` at time zero.
pub fn replay(model: &ModelSpec, log: &[EventRecord], root: NeuronId) -> Result<Potential, ReplayError> {
    let state = run(model, log)?;
    if !state.active.contains(&root) {
        return Err(ReplayError::ReplayInvariantViolation {
            index: 0,
            neuron: root,
            reason: "root inactive at the end of replay",
        });
    }
    Ok(state.p[&root])
}

/// Potentials at time zero of every neuron still active after replay.
pub fn replay_all(model: &ModelSpec, log: &[EventRecord]) -> Result<BTreeMap<NeuronId, Potential>, ReplayError> {
    let state = run(model, log)?;
    Ok(state.active.iter().map(|&j| (j, state.p[&j])).collect())
}
