//! Forward simulation of the process restricted to a finite set `F`.
//!
//! Used as an independent reference for the perfect sampler. Spike attempts
//! with insufficient potential are kept as jumps that leave the
//! configuration unchanged, so the total rate does not depend on the state.

use std::collections::BTreeMap;

use rand::Rng;
use rand_distr::{Distribution, Exp};
use thiserror::Error;

use crate::histogram::{Histogram, HistogramError};
use crate::model::{ModelError, ModelSpec, NeuronId, Potential, Threshold};

pub const DEFAULT_BURN_IN: u64 = 10_000;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum OracleError {
    #[error("neuron {0} is outside the simulated set")]
    NeuronOutOfScope(NeuronId),
    #[error("simulated set has zero total rate")]
    ZeroRate,
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Histogram(#[from] HistogramError),
}

/// Potentials of the neurons of a finite set, in id order.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct FiniteConfiguration {
    ids: Vec<NeuronId>,
    values: Vec<Potential>,
}

impl FiniteConfiguration {
    pub fn zeros(f: impl IntoIterator<Item = NeuronId>) -> Self {
        let mut ids: Vec<_> = f.into_iter().collect();
        ids.sort_unstable();
        ids.dedup();
        let values = vec![0; ids.len()];
        FiniteConfiguration { ids, values }
    }

    pub fn from_map(map: &BTreeMap<NeuronId, Potential>) -> Self {
        FiniteConfiguration {
            ids: map.keys().copied().collect(),
            values: map.values().copied().collect(),
        }
    }

    pub fn to_map(&self) -> BTreeMap<NeuronId, Potential> {
        self.ids.iter().copied().zip(self.values.iter().copied()).collect()
    }

    fn index_of(&self, i: NeuronId) -> Option<usize> {
        self.ids.binary_search(&i).ok()
    }

    pub fn get(&self, i: NeuronId) -> Option<Potential> {
        self.index_of(i).map(|idx| self.values[idx])
    }

    pub fn neurons(&self) -> &[NeuronId] {
        &self.ids
    }
}

/// Applies transformation `(i, k)` restricted to the configuration's set.
pub fn apply_spike(
    model: &ModelSpec,
    config: &FiniteConfiguration,
    i: NeuronId,
    k: Threshold,
) -> Result<FiniteConfiguration, OracleError> {
    let idx = config.index_of(i).ok_or(OracleError::NeuronOutOfScope(i))?;
    let mut next = config.clone();
    if k == 0 {
        next.values[idx] += 1;
    } else if next.values[idx] >= k as Potential {
        next.values[idx] = 0;
        for u in model.post(i, k) {
            if u != i {
                if let Some(v) = next.index_of(u) {
                    next.values[v] += 1;
                }
            }
        }
    }
    Ok(next)
}

struct Event {
    idx: usize,
    k: Threshold,
    // indices of post(i, k) ∩ F \ {i}
    targets: Vec<usize>,
}

/// Precomputed event table for repeated jumps on a fixed set `F`.
pub struct CtmcOracle {
    config: FiniteConfiguration,
    events: Vec<Event>,
    cumulative: Vec<f64>,
    total: f64,
    holding: Exp<f64>,
}

impl CtmcOracle {
    pub fn new(model: &ModelSpec, f: impl IntoIterator<Item = NeuronId>) -> Result<Self, OracleError> {
        let config = FiniteConfiguration::zeros(f);
        let mut events = Vec::new();
        let mut cumulative = Vec::new();
        let mut total = 0.0;
        for (idx, &i) in config.ids.iter().enumerate() {
            for (k, w) in model.rates_checked(i)?.iter() {
                if w <= 0.0 {
                    continue;
                }
                let targets = if k == 0 {
                    Vec::new()
                } else {
                    model.post(i, k).filter(|&u| u != i).filter_map(|u| config.index_of(u)).collect()
                };
                total += w;
                events.push(Event { idx, k, targets });
                cumulative.push(total);
            }
        }
        let holding = Exp::new(total).map_err(|_| OracleError::ZeroRate)?;
        if !(total > 0.0) {
            return Err(OracleError::ZeroRate);
        }
        Ok(CtmcOracle { config, events, cumulative, total, holding })
    }

    pub fn total_rate(&self) -> f64 {
        self.total
    }

    pub fn config(&self) -> &FiniteConfiguration {
        &self.config
    }

    /// One jump: the holding time is drawn first, then the event. Returns the
    /// holding time and the chosen `(neuron, threshold)`.
    pub fn jump<R: Rng + ?Sized>(&mut self, rng: &mut R) -> (f64, NeuronId, Threshold) {
        let dt = self.holding.sample(rng);
        let x = rng.random::<f64>() * self.total;
        let pos = self.cumulative.partition_point(|&c| c <= x).min(self.events.len() - 1);
        let ev = &self.events[pos];
        let values = &mut self.config.values;
        if ev.k == 0 {
            values[ev.idx] += 1;
        } else if values[ev.idx] >= ev.k as Potential {
            values[ev.idx] = 0;
            for &t in &ev.targets {
                values[t] += 1;
            }
        }
        (dt, self.config.ids[ev.idx], ev.k)
    }
}

/// One jump from `config` on the set carried by `config`.
pub fn jump_step<R: Rng + ?Sized>(
    model: &ModelSpec,
    config: &FiniteConfiguration,
    rng: &mut R,
) -> Result<(FiniteConfiguration, f64), OracleError> {
    let mut oracle = CtmcOracle::new(model, config.ids.iter().copied())?;
    oracle.config = config.clone();
    let (dt, _, _) = oracle.jump(rng);
    Ok((oracle.config, dt))
}

/// Time-weighted occupation histogram of neuron `i`'s potential, from the
/// all-zero configuration on `f`, after `burn_in` jumps.
pub fn estimate_marginal<R: Rng + ?Sized>(
    model: &ModelSpec,
    f: impl IntoIterator<Item = NeuronId>,
    i: NeuronId,
    burn_in: u64,
    n_jumps: u64,
    rng: &mut R,
) -> Result<Histogram, OracleError> {
    let mut oracle = CtmcOracle::new(model, f)?;
    let idx = oracle.config.index_of(i).ok_or(OracleError::NeuronOutOfScope(i))?;
    for _ in 0..burn_in {
        oracle.jump(rng);
    }
    let mut weights: BTreeMap<Potential, f64> = BTreeMap::new();
    for _ in 0..n_jumps {
        let before = oracle.config.values[idx];
        let (dt, _, _) = oracle.jump(rng);
        *weights.entry(before).or_default() += dt;
    }
    Ok(Histogram::from_weights(&weights)?)
}
