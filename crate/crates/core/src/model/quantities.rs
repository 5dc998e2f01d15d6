//! Derived per-neuron quantities and the sufficient conditions for the
//! backward exploration to terminate.
//!
//! For a neuron `i` with incoming rate `D_i = Σ_{k≥1} Σ_{j∈pre(i,k)} λ_j(k)`:
//!
//! * `Λ_i = Σ_k λ_i(k) + D_i`: total rate of events that can touch `i`;
//! * `ρ_i = λ_i(0) / Σ_k λ_i(k)`: probability an own-clock event is a stimulus;
//! * `m_i = Σ_{k≥1} λ_i(k) ρ_i^k − D_i`: drift margin (must be `>= 0`);
//! * `α_i = (2 D_i + λ_i(0) + Σ_{k≥1} λ_i(k)(1 − ρ_i^k)) / Λ_i = 1 − m_i / Λ_i`;
//! * `c_i = D_i − Σ_{k≥1} λ_i(k) ρ_i^k = −m_i`: clan growth rate.
//!
//! Suprema over a countable set are taken over a caller-supplied scope.

use std::collections::{BTreeMap, BTreeSet};

use serde::Serialize;

use super::{ModelError, ModelSpec, NeuronId};

/// Relative slack used when comparing margins and `α` against their limits.
const REL_TOL: f64 = 1e-12;

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct NeuronTerms {
    pub neuron: NeuronId,
    pub stimulus: f64,
    pub spike_total: f64,
    /// `Σ_{k≥1} λ_i(k) ρ_i^k`
    pub certified: f64,
    /// `D_i`
    pub incoming: f64,
    pub big_lambda: f64,
    pub rho: f64,
}

impl NeuronTerms {
    pub fn margin(&self) -> f64 {
        self.certified - self.incoming
    }

    pub fn growth(&self) -> f64 {
        self.incoming - self.certified
    }

    /// `α_i` from the transformation-weight expression.
    pub fn alpha(&self) -> f64 {
        let stay = self.stimulus + (self.spike_total - self.certified);
        (2.0 * self.incoming + stay) / self.big_lambda
    }

    /// `α_i` through the identity `α_i Λ_i = Λ_i − m_i`.
    pub fn alpha_from_margin(&self) -> f64 {
        (self.big_lambda - self.margin()) / self.big_lambda
    }
}

fn incoming_rate(model: &ModelSpec, i: NeuronId) -> Result<f64, ModelError> {
    let mut d = 0.0;
    for k in 1..=model.max_synapse_threshold(i) {
        for j in model.pre_bounded(i, k)? {
            d += model.rates_checked(j)?.rate(k);
        }
    }
    Ok(d)
}

pub fn neuron_terms(model: &ModelSpec, i: NeuronId) -> Result<NeuronTerms, ModelError> {
    let rates = model.rates_checked(i)?;
    let total = rates.total();
    if !(total > 0.0) {
        return Err(ModelError::InertNeuron(i));
    }
    let rho = rates.rho();
    let mut certified = 0.0;
    let mut spike_total = 0.0;
    for (k, r) in rates.iter().skip(1) {
        spike_total += r;
        certified += r * rho.powi(k as i32);
    }
    let incoming = incoming_rate(model, i)?;
    Ok(NeuronTerms {
        neuron: i,
        stimulus: rates.stimulus(),
        spike_total,
        certified,
        incoming,
        big_lambda: total + incoming,
        rho,
    })
}

/// `Λ_i`.
pub fn big_lambda(model: &ModelSpec, i: NeuronId) -> Result<f64, ModelError> {
    let own = model.rates_checked(i)?.total();
    Ok(own + incoming_rate(model, i)?)
}

/// `ρ_i`.
pub fn rho(model: &ModelSpec, i: NeuronId) -> Result<f64, ModelError> {
    let rates = model.rates_checked(i)?;
    if !(rates.total() > 0.0) {
        return Err(ModelError::InertNeuron(i));
    }
    Ok(rates.rho())
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum AlphaWarning {
    /// `α = 1`: the tail bound is vacuous and the mean bound is infinite.
    Degenerate,
    /// `α > 1`: the drift condition fails somewhere in scope.
    NotContracting,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct AlphaReport {
    pub value: f64,
    pub argmax: NeuronId,
    pub warning: Option<AlphaWarning>,
}

impl AlphaReport {
    pub fn is_contracting(&self) -> bool {
        self.value < 1.0 && self.warning.is_none()
    }
}

fn scope_terms(model: &ModelSpec, scope: &[NeuronId]) -> Result<Vec<NeuronTerms>, ModelError> {
    if scope.is_empty() {
        return Err(ModelError::EmptyScope);
    }
    scope.iter().map(|&i| neuron_terms(model, i)).collect()
}

fn alpha_of(terms: &[NeuronTerms]) -> AlphaReport {
    let (argmax, value) = terms
        .iter()
        .map(|t| (t.neuron, t.alpha()))
        .fold((terms[0].neuron, f64::NEG_INFINITY), |acc, x| if x.1 > acc.1 { x } else { acc });
    let warning = if value > 1.0 + REL_TOL {
        Some(AlphaWarning::NotContracting)
    } else if value >= 1.0 - REL_TOL {
        Some(AlphaWarning::Degenerate)
    } else {
        None
    };
    AlphaReport { value, argmax, warning }
}

/// `α = sup_{i ∈ scope} α_i`. Values `>= 1` are flagged, not rejected.
pub fn alpha(model: &ModelSpec, scope: &[NeuronId]) -> Result<AlphaReport, ModelError> {
    Ok(alpha_of(&scope_terms(model, scope)?))
}

/// `c = sup_{i ∈ scope} c_i`.
pub fn growth_constant(model: &ModelSpec, scope: &[NeuronId]) -> Result<f64, ModelError> {
    Ok(scope_terms(model, scope)?
        .iter()
        .map(NeuronTerms::growth)
        .fold(f64::NEG_INFINITY, f64::max))
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct NeuronMargin {
    pub neuron: NeuronId,
    pub margin: f64,
    pub big_lambda: f64,
    pub rho: f64,
    pub alpha: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct ConditionReport {
    pub beta: f64,
    pub alpha: AlphaReport,
    pub growth: f64,
    pub margins: Vec<NeuronMargin>,
    pub passed: bool,
}

/// Per-neuron quantities over a scope, in scope order.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct DerivedQuantities {
    pub big_lambda: BTreeMap<NeuronId, f64>,
    pub rho: BTreeMap<NeuronId, f64>,
    pub beta: f64,
    pub alpha: f64,
    pub growth_c: f64,
}

impl ConditionReport {
    pub fn derived(&self) -> DerivedQuantities {
        DerivedQuantities {
            big_lambda: self.margins.iter().map(|m| (m.neuron, m.big_lambda)).collect(),
            rho: self.margins.iter().map(|m| (m.neuron, m.rho)).collect(),
            beta: self.beta,
            alpha: self.alpha.value,
            growth_c: self.growth,
        }
    }

    pub fn failing(&self) -> impl Iterator<Item = &NeuronMargin> {
        self.margins
            .iter()
            .filter(|m| m.margin < -REL_TOL * m.big_lambda)
    }
}

/// Checks `sup Λ_i < ∞` and `m_i >= 0` on every neuron of the scope.
pub fn check_conditions(model: &ModelSpec, scope: &[NeuronId]) -> Result<ConditionReport, ModelError> {
    let terms = scope_terms(model, scope)?;
    let beta = terms.iter().map(|t| t.big_lambda).fold(0.0, f64::max);
    let margins: Vec<_> = terms
        .iter()
        .map(|t| NeuronMargin {
            neuron: t.neuron,
            margin: t.margin(),
            big_lambda: t.big_lambda,
            rho: t.rho,
            alpha: t.alpha(),
        })
        .collect();
    let growth = terms.iter().map(NeuronTerms::growth).fold(f64::NEG_INFINITY, f64::max);
    let mut report = ConditionReport {
        beta,
        alpha: alpha_of(&terms),
        growth,
        margins,
        passed: false,
    };
    report.passed = beta.is_finite() && report.failing().next().is_none();
    Ok(report)
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct DeltaF {
    pub delta: f64,
    pub argmax: NeuronId,
    pub alpha: f64,
}

impl DeltaF {
    /// `δ(F) / (1 − α)`, the bound on `P(ξ(i) ≠ ξ^F(i))`.
    pub fn bound(&self) -> Result<f64, ModelError> {
        if self.alpha >= 1.0 {
            return Err(ModelError::AlphaNotContracting { alpha: self.alpha });
        }
        Ok(self.delta / (1.0 - self.alpha))
    }
}

/// Rate of presynaptic events of `i` originating outside `f`.
pub(crate) fn outside_incoming(
    model: &ModelSpec,
    f: &BTreeSet<NeuronId>,
    i: NeuronId,
) -> Result<f64, ModelError> {
    let mut d = 0.0;
    for k in 1..=model.max_synapse_threshold(i) {
        for j in model.pre_bounded(i, k)? {
            if !f.contains(&j) {
                d += model.rates_checked(j)?.rate(k);
            }
        }
    }
    Ok(d)
}

/// `δ(F) = sup_i d_i(F̄) / Λ_i` over the scope.
///
/// The supremum over finite clans `C` of `Σ_C d_u / Σ_C Λ_u` is attained on a
/// singleton (a ratio of sums never exceeds the largest ratio), so scanning
/// single neurons is exact.
pub fn delta_f(
    model: &ModelSpec,
    f: &BTreeSet<NeuronId>,
    scope: &[NeuronId],
) -> Result<DeltaF, ModelError> {
    if f.is_empty() {
        return Err(ModelError::InvalidParameter("F must be nonempty".into()));
    }
    let terms = scope_terms(model, scope)?;
    let mut best = (scope[0], 0.0);
    for t in &terms {
        let ratio = outside_incoming(model, f, t.neuron)? / t.big_lambda;
        if ratio > best.1 {
            best = (t.neuron, ratio);
        }
    }
    Ok(DeltaF {
        delta: best.1,
        argmax: best.0,
        alpha: alpha_of(&terms).value,
    })
}
