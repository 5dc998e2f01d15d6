//! Neuron network models: rates, synaptic maps and the derived quantities
//! that govern whether the backward clan exploration terminates.
//!
//! A [`ModelSpec`] is either an explicit finite network or a lazily evaluated
//! countable family. Both expose the same queries: per-neuron rate vectors,
//! postsynaptic sets `post(i, k)` (neurons incremented when `i` fires at
//! threshold `k`) and presynaptic sets `pre(i, k)` (neurons whose threshold-`k`
//! spikes increment `i`).

mod family;
mod network;
mod quantities;

use std::fmt;
use std::ops::Range;

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use family::{build_decaying_feedforward, ClosedFormCheck, DecayingFeedforward};
pub use network::{FiniteNetwork, NeuronEntry};
pub use quantities::{
    alpha, big_lambda, check_conditions, delta_f, growth_constant, neuron_terms, rho, AlphaReport,
    AlphaWarning, ConditionReport, DeltaF, DerivedQuantities, NeuronMargin, NeuronTerms,
};

/// Spike threshold index `k`. Zero denotes the external stimulus.
pub type Threshold = u32;

/// Membrane potential. Potentials are unbounded non-negative integers.
pub type Potential = u64;

/// Default cap on the size of a single pre/post-set enumeration.
pub const DEFAULT_NEIGHBORHOOD_LIMIT: usize = 1 << 20;

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(transparent)]
pub struct NeuronId(pub u64);

impl fmt::Display for NeuronId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.0)
    }
}

impl From<u64> for NeuronId {
    fn from(id: u64) -> Self {
        NeuronId(id)
    }
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum ModelError {
    #[error("duality violated: neuron {post} is in post({pre}, {k}) but {pre} is not in pre({post}, {k}) (or vice versa)")]
    DualityViolation { pre: NeuronId, post: NeuronId, k: Threshold },
    #[error("neuron {0} is inert (all rates are zero)")]
    InertNeuron(NeuronId),
    #[error("neuron {neuron} has a negative or non-finite rate at threshold {k}")]
    NegativeRate { neuron: NeuronId, k: Threshold },
    #[error("neuron {neuron} synapses onto itself at threshold {k}")]
    SelfSynapse { neuron: NeuronId, k: Threshold },
    #[error("neuron {0} is not part of the model")]
    UnknownNeuron(NeuronId),
    #[error("duplicate neuron id {0}")]
    DuplicateNeuron(NeuronId),
    #[error("synapse blocks must use thresholds >= 1 (neuron {0})")]
    ZeroThresholdSynapse(NeuronId),
    #[error("neighborhood of neuron {neuron} at threshold {k} exceeds the enumeration limit {limit}")]
    UnboundedNeighborhood { neuron: NeuronId, k: Threshold, limit: usize },
    #[error("alpha = {alpha} >= 1: the coupling bound is undefined")]
    AlphaNotContracting { alpha: f64 },
    #[error("scope is empty")]
    EmptyScope,
    #[error("invalid family parameter: {0}")]
    InvalidParameter(String),
    #[error("condition violated: {0}")]
    ConditionViolated(String),
}

/// Rate vector `(λ(0), λ(1), …, λ(K_max))`; rates beyond the support are zero.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct RateVector(Vec<f64>);

impl RateVector {
    pub fn new(rates: Vec<f64>) -> Self {
        RateVector(rates)
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }

    pub fn rate(&self, k: Threshold) -> f64 {
        self.0.get(k as usize).copied().unwrap_or(0.0)
    }

    pub fn total(&self) -> f64 {
        self.0.iter().sum()
    }

    pub fn max_threshold(&self) -> Threshold {
        self.0.len().saturating_sub(1) as Threshold
    }
}

impl From<Vec<f64>> for RateVector {
    fn from(v: Vec<f64>) -> Self {
        RateVector(v)
    }
}

/// Borrowed view of a neuron's rates, possibly scaled (countable families
/// share one base profile scaled per neuron).
#[derive(Clone, Copy, Debug)]
pub struct Rates<'a> {
    base: &'a RateVector,
    scale: f64,
}

impl<'a> Rates<'a> {
    pub fn new(base: &'a RateVector, scale: f64) -> Self {
        Rates { base, scale }
    }

    #[inline]
    pub fn rate(&self, k: Threshold) -> f64 {
        self.base.rate(k) * self.scale
    }

    #[inline]
    pub fn stimulus(&self) -> f64 {
        self.rate(0)
    }

    #[inline]
    pub fn total(&self) -> f64 {
        self.base.total() * self.scale
    }

    pub fn max_threshold(&self) -> Threshold {
        self.base.max_threshold()
    }

    /// `(k, λ(k))` for every `k` in the support, including the stimulus.
    pub fn iter(&self) -> impl Iterator<Item = (Threshold, f64)> + 'a {
        let scale = self.scale;
        self.base
            .0
            .iter()
            .enumerate()
            .map(move |(k, r)| (k as Threshold, r * scale))
    }

    /// Probability that an own-clock event is a stimulus.
    pub fn rho(&self) -> f64 {
        self.base.rate(0) / self.base.total()
    }
}

/// Iterator over a pre- or postsynaptic set.
#[derive(Clone, Debug)]
pub enum Neighbors<'a> {
    Slice(std::slice::Iter<'a, NeuronId>),
    Range(Range<u64>),
    Empty,
}

impl Iterator for Neighbors<'_> {
    type Item = NeuronId;

    #[inline]
    fn next(&mut self) -> Option<NeuronId> {
        match self {
            Neighbors::Slice(it) => it.next().copied(),
            Neighbors::Range(r) => r.next().map(NeuronId),
            Neighbors::Empty => None,
        }
    }

    fn size_hint(&self) -> (usize, Option<usize>) {
        match self {
            Neighbors::Slice(it) => it.size_hint(),
            Neighbors::Range(r) => r.size_hint(),
            Neighbors::Empty => (0, Some(0)),
        }
    }
}

impl ExactSizeIterator for Neighbors<'_> {}

#[derive(Clone, Debug, PartialEq)]
pub enum Topology {
    Finite(FiniteNetwork),
    DecayingFeedforward(DecayingFeedforward),
}

/// Immutable neuron model shared by every sampler and checker.
#[derive(Clone, Debug, PartialEq)]
pub struct ModelSpec {
    topology: Topology,
    neighborhood_limit: usize,
}

impl ModelSpec {
    pub fn finite(network: FiniteNetwork) -> Self {
        ModelSpec {
            topology: Topology::Finite(network),
            neighborhood_limit: DEFAULT_NEIGHBORHOOD_LIMIT,
        }
    }

    pub fn decaying_feedforward(family: DecayingFeedforward) -> Self {
        ModelSpec {
            topology: Topology::DecayingFeedforward(family),
            neighborhood_limit: DEFAULT_NEIGHBORHOOD_LIMIT,
        }
    }

    pub fn with_neighborhood_limit(mut self, limit: usize) -> Self {
        self.neighborhood_limit = limit;
        self
    }

    pub fn neighborhood_limit(&self) -> usize {
        self.neighborhood_limit
    }

    pub fn topology(&self) -> &Topology {
        &self.topology
    }

    pub fn is_finite(&self) -> bool {
        matches!(self.topology, Topology::Finite(_))
    }

    /// Every neuron of a finite model; `None` for countable families.
    pub fn finite_scope(&self) -> Option<Vec<NeuronId>> {
        match &self.topology {
            Topology::Finite(net) => Some(net.ids().to_vec()),
            Topology::DecayingFeedforward(_) => None,
        }
    }

    pub fn contains(&self, i: NeuronId) -> bool {
        match &self.topology {
            Topology::Finite(net) => net.index_of(i).is_some(),
            Topology::DecayingFeedforward(_) => true,
        }
    }

    #[inline]
    pub fn rates(&self, i: NeuronId) -> Option<Rates<'_>> {
        match &self.topology {
            Topology::Finite(net) => net.rates(i).map(|r| Rates::new(r, 1.0)),
            Topology::DecayingFeedforward(fam) => Some(Rates::new(fam.profile(), fam.amplitude(i))),
        }
    }

    pub fn rates_checked(&self, i: NeuronId) -> Result<Rates<'_>, ModelError> {
        self.rates(i).ok_or(ModelError::UnknownNeuron(i))
    }

    /// `post(i, k)`: neurons incremented when `i` fires at threshold `k >= 1`.
    #[inline]
    pub fn post(&self, i: NeuronId, k: Threshold) -> Neighbors<'_> {
        if k == 0 {
            return Neighbors::Empty;
        }
        match &self.topology {
            Topology::Finite(net) => net.post(i, k),
            Topology::DecayingFeedforward(fam) => fam.post(i, k),
        }
    }

    /// `pre(i, k)`: neurons whose threshold-`k` spikes increment `i`.
    #[inline]
    pub fn pre(&self, i: NeuronId, k: Threshold) -> Neighbors<'_> {
        if k == 0 {
            return Neighbors::Empty;
        }
        match &self.topology {
            Topology::Finite(net) => net.pre(i, k),
            Topology::DecayingFeedforward(fam) => fam.pre(i, k),
        }
    }

    /// Largest threshold at which `i` has any pre- or postsynaptic entry.
    pub fn max_synapse_threshold(&self, i: NeuronId) -> Threshold {
        match &self.topology {
            Topology::Finite(net) => net.max_synapse_threshold(i),
            Topology::DecayingFeedforward(fam) => fam.max_synapse_threshold(),
        }
    }

    /// `pre(i, k)` with the enumeration limit enforced.
    pub fn pre_bounded(&self, i: NeuronId, k: Threshold) -> Result<Neighbors<'_>, ModelError> {
        let it = self.pre(i, k);
        if it.len() > self.neighborhood_limit {
            return Err(ModelError::UnboundedNeighborhood {
                neuron: i,
                k,
                limit: self.neighborhood_limit,
            });
        }
        Ok(it)
    }

    /// Whether `i` has no presynaptic neuron at any threshold.
    pub fn is_isolated_target(&self, i: NeuronId) -> bool {
        (1..=self.max_synapse_threshold(i)).all(|k| self.pre(i, k).len() == 0)
    }
}

/// Outcome of [`validate`]: every structural problem found on the scope.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct Diagnostics {
    pub issues: Vec<ModelError>,
}

impl Diagnostics {
    pub fn passed(&self) -> bool {
        self.issues.is_empty()
    }

    pub fn into_result(self) -> Result<(), ModelError> {
        match self.issues.into_iter().next() {
            None => Ok(()),
            Some(e) => Err(e),
        }
    }
}

/// Checks rates, self-synapses and pre/post duality on `scope`.
pub fn validate(model: &ModelSpec, scope: &[NeuronId]) -> Result<Diagnostics, ModelError> {
    if scope.is_empty() {
        return Err(ModelError::EmptyScope);
    }
    let mut issues = Vec::new();
    for &i in scope {
        let Some(rates) = model.rates(i) else {
            issues.push(ModelError::UnknownNeuron(i));
            continue;
        };
        let mut negative = false;
        for (k, r) in rates.iter() {
            if !(r >= 0.0) || !r.is_finite() {
                issues.push(ModelError::NegativeRate { neuron: i, k });
                negative = true;
            }
        }
        if !negative && rates.total() <= 0.0 {
            issues.push(ModelError::InertNeuron(i));
        }
        for k in 1..=model.max_synapse_threshold(i) {
            for j in model.post(i, k) {
                if j == i {
                    issues.push(ModelError::SelfSynapse { neuron: i, k });
                    continue;
                }
                if !model.pre(j, k).any(|x| x == i) {
                    issues.push(ModelError::DualityViolation { pre: i, post: j, k });
                }
            }
            for j in model.pre(i, k) {
                if j == i {
                    issues.push(ModelError::SelfSynapse { neuron: i, k });
                    continue;
                }
                if !model.post(j, k).any(|x| x == i) {
                    issues.push(ModelError::DualityViolation { pre: j, post: i, k });
                }
            }
        }
    }
    issues.dedup();
    Ok(Diagnostics { issues })
}

/// Parses `A..B` (inclusive) or `A..=B` into an id range.
pub fn parse_scope(spec: &str) -> Result<Vec<NeuronId>, ModelError> {
    let (a, b) = spec
        .split_once("..=")
        .or_else(|| spec.split_once(".."))
        .ok_or_else(|| ModelError::InvalidParameter(format!("scope `{spec}` is not of the form A..B")))?;
    let parse = |s: &str| {
        s.trim()
            .parse::<u64>()
            .map_err(|_| ModelError::InvalidParameter(format!("bad scope bound `{s}`")))
    };
    let (a, b) = (parse(a)?, parse(b)?);
    if b < a {
        return Err(ModelError::EmptyScope);
    }
    Ok((a..=b).map(NeuronId).collect())
}
