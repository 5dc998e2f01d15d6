//! Backward exploration of the clan of ancestors.
//!
//! Starting from `{i}` at time zero, each step looks at the next event in the
//! past that can touch a clan member. Events are drawn with probability
//! `λ_j(k) / Σ_{u∈C} Λ_u` over the distinct pairs `(j, k)` with `j ∈ C` or
//! `j ∈ pre(u, k)` for some `u ∈ C`. When a pair appears in several `Λ_u`
//! decompositions (a presynaptic neuron shared by several clan members, or a
//! clan member that is also presynaptic to another) the surplus mass becomes
//! an explicit [`EventKind::NullOverlap`] outcome that counts as a step but has
//! no effect.
//!
//! A threshold-`k` own event of a clan member is resolved by a geometric test:
//! if the member's `k` previous own-clock events were all stimuli its
//! potential was at least `k`, the spike certainly fired and the member leaves
//! the clan. The exploration stops when the clan is empty.

use std::collections::{BTreeMap, BTreeSet, VecDeque};
use std::fmt;
use std::io::{self, Write};
use std::str::FromStr;

use rand::Rng;
use rand_distr::{Distribution, Exp};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::model::{ModelError, ModelSpec, NeuronId, Rates, Threshold};

pub const DEFAULT_MAX_STEPS: u64 = 1_000_000;

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum EventKind {
    /// `(j, 0)` with `j` in the clan.
    Stimulus,
    /// Own threshold-`k` event of a clan member whose firing was certified;
    /// the member leaves the clan.
    CertifiedSpike,
    /// Own threshold-`k` event whose certification failed; clan unchanged.
    FailedCertification,
    /// Spike candidate of a presynaptic neuron outside the clan, which joins.
    PresynAdd,
    /// Residual mass with no effect; never stored in a replayable log.
    NullOverlap,
}

impl EventKind {
    pub fn as_str(self) -> &'static str {
        match self {
            EventKind::Stimulus => "Stimulus",
            EventKind::CertifiedSpike => "CertifiedSpike",
            EventKind::FailedCertification => "FailedCertification",
            EventKind::PresynAdd => "PresynAdd",
            EventKind::NullOverlap => "NullOverlap",
        }
    }
}

impl fmt::Display for EventKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for EventKind {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Ok(match s {
            "Stimulus" => EventKind::Stimulus,
            "CertifiedSpike" => EventKind::CertifiedSpike,
            "FailedCertification" => EventKind::FailedCertification,
            "PresynAdd" => EventKind::PresynAdd,
            "NullOverlap" => EventKind::NullOverlap,
            other => return Err(format!("unknown event kind `{other}`")),
        })
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EventRecord {
    pub step: u64,
    pub neuron: NeuronId,
    pub threshold: Threshold,
    pub kind: EventKind,
    /// Backward holding time preceding the event, when holding times are on.
    pub dt: Option<f64>,
}

impl EventRecord {
    pub fn new(neuron: NeuronId, threshold: Threshold, kind: EventKind) -> Self {
        EventRecord { step: 0, neuron, threshold, kind, dt: None }
    }

    /// The `(neuron, threshold, kind)` triple, ignoring step numbers and times.
    pub fn key(&self) -> (NeuronId, Threshold, EventKind) {
        (self.neuron, self.threshold, self.kind)
    }
}

/// How a failed certification treats the own-clock marks it inspected.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CertificationMode {
    /// Inspected marks are discarded and deeper events are drawn afresh
    /// (the single-draw jump chain).
    #[default]
    Resample,
    /// Inspected marks are kept as the neuron's actual earlier own-clock
    /// events and consumed by later steps, so the explored history stays
    /// consistent with every certification outcome.
    Retained,
}

impl FromStr for CertificationMode {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "resample" => Ok(CertificationMode::Resample),
            "retained" => Ok(CertificationMode::Retained),
            other => Err(format!("unknown certification mode `{other}` (expected resample|retained)")),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct BackwardOptions {
    pub max_steps: u64,
    pub holding_times: bool,
    pub certification: CertificationMode,
}

impl Default for BackwardOptions {
    fn default() -> Self {
        BackwardOptions {
            max_steps: DEFAULT_MAX_STEPS,
            holding_times: false,
            certification: CertificationMode::Resample,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum BackwardError {
    #[error("backward step called with an empty clan")]
    EmptyClan,
    #[error("clan did not empty within {max_steps} steps")]
    BudgetExceeded { max_steps: u64 },
    #[error("restricted clan escaped the full clan at step {step}")]
    ContainmentViolation { step: u64 },
    #[error("root {0} is not in the finite set F")]
    RootOutsideF(NeuronId),
    #[error("coupled runs support only the resample certification mode")]
    UnsupportedMode,
    #[error("clan has zero total event rate")]
    ZeroRate,
    #[error(transparent)]
    Model(#[from] ModelError),
}

/// Clan state of one backward run.
#[derive(Clone, Debug, Default)]
pub struct ClanState {
    clan: BTreeSet<NeuronId>,
    steps: u64,
    log: Vec<EventRecord>,
    elapsed: f64,
    null_steps: u64,
    max_clan: usize,
    // own-clock marks revealed by certification (retained mode only)
    pending: BTreeMap<NeuronId, VecDeque<Threshold>>,
    scratch: Vec<Outcome>,
}

impl ClanState {
    pub fn new(root: NeuronId) -> Self {
        ClanState {
            clan: BTreeSet::from([root]),
            max_clan: 1,
            ..Default::default()
        }
    }

    pub fn clan(&self) -> &BTreeSet<NeuronId> {
        &self.clan
    }

    pub fn is_empty(&self) -> bool {
        self.clan.is_empty()
    }

    pub fn steps(&self) -> u64 {
        self.steps
    }

    pub fn log(&self) -> &[EventRecord] {
        &self.log
    }

    pub fn elapsed(&self) -> f64 {
        self.elapsed
    }

    pub fn null_steps(&self) -> u64 {
        self.null_steps
    }

    pub fn max_clan(&self) -> usize {
        self.max_clan
    }

    fn record(&mut self, neuron: NeuronId, threshold: Threshold, kind: EventKind, dt: Option<f64>) -> EventRecord {
        self.steps += 1;
        self.elapsed += dt.unwrap_or(0.0);
        self.max_clan = self.max_clan.max(self.clan.len());
        let rec = EventRecord { step: self.steps, neuron, threshold, kind, dt };
        if kind == EventKind::NullOverlap {
            self.null_steps += 1;
        } else {
            self.log.push(rec.clone());
        }
        rec
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Outcome {
    pub neuron: NeuronId,
    pub threshold: Threshold,
    pub weight: f64,
}

/// Distribution of the next backward event for a given clan.
#[derive(Clone, Debug, PartialEq)]
pub struct EventDistribution {
    /// Distinct `(j, k)` outcomes in `(j, k)` order.
    pub outcomes: Vec<Outcome>,
    pub null_weight: f64,
    /// `Σ_{u∈C} Λ_u`.
    pub total: f64,
}

/// Fills `out` with the distinct outcomes for `clan`; returns `Σ_{u∈C} Λ_u`.
fn fill_outcomes(model: &ModelSpec, clan: &BTreeSet<NeuronId>, out: &mut Vec<Outcome>) -> Result<f64, ModelError> {
    out.clear();
    let mut total = 0.0;
    for &u in clan {
        for (k, w) in model.rates_checked(u)?.iter() {
            total += w;
            out.push(Outcome { neuron: u, threshold: k, weight: w });
        }
        for k in 1..=model.max_synapse_threshold(u) {
            for j in model.pre_bounded(u, k)? {
                let w = model.rates_checked(j)?.rate(k);
                total += w;
                out.push(Outcome { neuron: j, threshold: k, weight: w });
            }
        }
    }
    out.sort_by_key(|o| (o.neuron, o.threshold));
    out.dedup_by_key(|o| (o.neuron, o.threshold));
    out.retain(|o| o.weight > 0.0);
    Ok(total)
}

/// Residual mass, with float noise below `1e-12 · total` treated as zero.
fn null_weight(outcomes: &[Outcome], total: f64) -> f64 {
    let distinct: f64 = outcomes.iter().map(|o| o.weight).sum();
    let null = total - distinct;
    if null <= 1e-12 * total {
        0.0
    } else {
        null
    }
}

pub fn event_distribution(model: &ModelSpec, clan: &BTreeSet<NeuronId>) -> Result<EventDistribution, ModelError> {
    let mut outcomes = Vec::new();
    let total = fill_outcomes(model, clan, &mut outcomes)?;
    Ok(EventDistribution {
        null_weight: null_weight(&outcomes, total),
        outcomes,
        total,
    })
}

/// Geometric certification of a threshold-`k` own event of `j`.
///
/// Draws own-clock marks until either `k` consecutive stimuli are seen
/// (`true`, probability `ρ_j^k`) or a spike mark appears (`false`). Uses one
/// uniform per inspected mark.
pub fn certify<R: Rng + ?Sized>(model: &ModelSpec, j: NeuronId, k: Threshold, rng: &mut R) -> Result<bool, ModelError> {
    let rates = model.rates_checked(j)?;
    let total = rates.total();
    if !(total > 0.0) {
        return Err(ModelError::InertNeuron(j));
    }
    let stimulus = rates.stimulus();
    for _ in 0..k {
        if rng.random::<f64>() * total >= stimulus {
            return Ok(false);
        }
    }
    Ok(true)
}

fn draw_mark<R: Rng + ?Sized>(rates: &Rates<'_>, rng: &mut R) -> Threshold {
    let mut x = rng.random::<f64>() * rates.total();
    let mut last = 0;
    for (k, w) in rates.iter() {
        if w <= 0.0 {
            continue;
        }
        if x < w {
            return k;
        }
        x -= w;
        last = k;
    }
    last
}

fn holding_time<R: Rng + ?Sized>(rate: f64, rng: &mut R) -> Result<f64, BackwardError> {
    let exp = Exp::new(rate).map_err(|_| BackwardError::ZeroRate)?;
    Ok(exp.sample(rng))
}

/// One backward step. Random draws happen in a fixed order: outcome
/// selection, then certification, then the optional holding time.
pub fn backward_step<R: Rng + ?Sized>(
    model: &ModelSpec,
    state: &mut ClanState,
    options: &BackwardOptions,
    rng: &mut R,
) -> Result<EventRecord, BackwardError> {
    if state.clan.is_empty() {
        return Err(BackwardError::EmptyClan);
    }
    match options.certification {
        CertificationMode::Resample => step_resample(model, state, options, rng),
        CertificationMode::Retained => step_retained(model, state, options, rng),
    }
}

fn step_resample<R: Rng + ?Sized>(
    model: &ModelSpec,
    state: &mut ClanState,
    options: &BackwardOptions,
    rng: &mut R,
) -> Result<EventRecord, BackwardError> {
    let mut outcomes = std::mem::take(&mut state.scratch);
    let total = fill_outcomes(model, &state.clan, &mut outcomes)?;
    if !(total > 0.0) {
        state.scratch = outcomes;
        return Err(BackwardError::ZeroRate);
    }
    let null = null_weight(&outcomes, total);
    let distinct: f64 = outcomes.iter().map(|o| o.weight).sum();
    let mut x = rng.random::<f64>() * (distinct + null);
    let mut chosen = None;
    for o in &outcomes {
        if x < o.weight {
            chosen = Some((o.neuron, o.threshold));
            break;
        }
        x -= o.weight;
    }
    if chosen.is_none() && null == 0.0 {
        // rounding at the upper edge
        chosen = outcomes.last().map(|o| (o.neuron, o.threshold));
    }
    state.scratch = outcomes;

    let (neuron, threshold, kind) = match chosen {
        None => (*state.clan.first().expect("nonempty"), 0, EventKind::NullOverlap),
        Some((j, 0)) => (j, 0, EventKind::Stimulus),
        Some((j, k)) if state.clan.contains(&j) => {
            if certify(model, j, k, rng)? {
                (j, k, EventKind::CertifiedSpike)
            } else {
                (j, k, EventKind::FailedCertification)
            }
        }
        Some((j, k)) => (j, k, EventKind::PresynAdd),
    };
    let dt = if options.holding_times { Some(holding_time(total, rng)?) } else { None };
    match kind {
        EventKind::CertifiedSpike => {
            state.clan.remove(&neuron);
        }
        EventKind::PresynAdd => {
            state.clan.insert(neuron);
        }
        _ => {}
    }
    Ok(state.record(neuron, threshold, kind, dt))
}

#[derive(Clone, Copy, Debug)]
enum Clock {
    Own(NeuronId),
    Pending(NeuronId),
    Fresh(NeuronId, Threshold),
}

fn step_retained<R: Rng + ?Sized>(
    model: &ModelSpec,
    state: &mut ClanState,
    options: &BackwardOptions,
    rng: &mut R,
) -> Result<EventRecord, BackwardError> {
    let has_pending = |state: &ClanState, j: &NeuronId| state.pending.get(j).is_some_and(|q| !q.is_empty());
    let mut clocks: Vec<(Clock, f64)> = Vec::new();
    for &u in &state.clan {
        clocks.push((Clock::Own(u), model.rates_checked(u)?.total()));
    }
    for (&j, q) in &state.pending {
        if !q.is_empty() && !state.clan.contains(&j) {
            clocks.push((Clock::Pending(j), model.rates_checked(j)?.total()));
        }
    }
    let mut fresh = Vec::new();
    for &u in &state.clan {
        for k in 1..=model.max_synapse_threshold(u) {
            for j in model.pre_bounded(u, k)? {
                if !state.clan.contains(&j) && !has_pending(state, &j) {
                    fresh.push((j, k));
                }
            }
        }
    }
    fresh.sort_unstable();
    fresh.dedup();
    for (j, k) in fresh {
        let w = model.rates_checked(j)?.rate(k);
        if w > 0.0 {
            clocks.push((Clock::Fresh(j, k), w));
        }
    }
    let total: f64 = clocks.iter().map(|c| c.1).sum();
    if !(total > 0.0) {
        return Err(BackwardError::ZeroRate);
    }
    let mut x = rng.random::<f64>() * total;
    let mut chosen = clocks.last().expect("nonempty clan").0;
    for &(c, w) in &clocks {
        if x < w {
            chosen = c;
            break;
        }
        x -= w;
    }

    let (neuron, threshold, kind) = match chosen {
        Clock::Fresh(j, k) => (j, k, EventKind::PresynAdd),
        Clock::Pending(j) => {
            let q = state.pending.get_mut(&j).expect("pending clock");
            let k = q.pop_front().expect("nonempty queue");
            if k >= 1 && model.post(j, k).any(|m| state.clan.contains(&m)) {
                (j, k, EventKind::PresynAdd)
            } else {
                (j, k, EventKind::NullOverlap)
            }
        }
        Clock::Own(u) => {
            let rates = model.rates_checked(u)?;
            let queue = state.pending.entry(u).or_default();
            let k = match queue.pop_front() {
                Some(k) => k,
                None => draw_mark(&rates, rng),
            };
            if k == 0 {
                (u, 0, EventKind::Stimulus)
            } else {
                let mut certified = true;
                for idx in 0..k as usize {
                    if idx == queue.len() {
                        queue.push_back(draw_mark(&rates, rng));
                    }
                    if queue[idx] != 0 {
                        certified = false;
                        break;
                    }
                }
                let kind = if certified { EventKind::CertifiedSpike } else { EventKind::FailedCertification };
                (u, k, kind)
            }
        }
    };
    state.pending.retain(|_, q| !q.is_empty());
    let dt = if options.holding_times { Some(holding_time(total, rng)?) } else { None };
    match kind {
        EventKind::CertifiedSpike => {
            state.clan.remove(&neuron);
        }
        EventKind::PresynAdd => {
            state.clan.insert(neuron);
        }
        _ => {}
    }
    Ok(state.record(neuron, threshold, kind, dt))
}

/// Output of a complete backward run.
#[derive(Clone, Debug, PartialEq)]
pub struct BackwardRun {
    /// Replayable events in recording order (deepest event last).
    pub log: Vec<EventRecord>,
    pub n_stop: u64,
    pub null_steps: u64,
    pub max_clan: usize,
    /// `|C|` after each step; entry 0 is the initial singleton.
    pub clan_sizes: Vec<u32>,
    /// Accumulated backward time after each step, when holding times are on.
    pub times: Option<Vec<f64>>,
}

impl BackwardRun {
    /// `|C_s|` at backward time `s`; `None` without holding times.
    pub fn clan_size_at(&self, s: f64) -> Option<u32> {
        let times = self.times.as_ref()?;
        let idx = times.partition_point(|&t| t <= s);
        Some(self.clan_sizes[idx.saturating_sub(1)])
    }
}

/// Runs the backward exploration from `{root}` until the clan empties.
pub fn run_backward<R: Rng + ?Sized>(
    model: &ModelSpec,
    root: NeuronId,
    options: &BackwardOptions,
    rng: &mut R,
) -> Result<BackwardRun, BackwardError> {
    if !model.contains(root) {
        return Err(ModelError::UnknownNeuron(root).into());
    }
    let mut state = ClanState::new(root);
    let mut clan_sizes = vec![1u32];
    let mut times = options.holding_times.then(|| vec![0.0]);
    while !state.is_empty() {
        if state.steps >= options.max_steps {
            return Err(BackwardError::BudgetExceeded { max_steps: options.max_steps });
        }
        backward_step(model, &mut state, options, rng)?;
        clan_sizes.push(state.clan.len() as u32);
        if let Some(t) = times.as_mut() {
            t.push(state.elapsed);
        }
    }
    Ok(BackwardRun {
        n_stop: state.steps,
        null_steps: state.null_steps,
        max_clan: state.max_clan,
        log: state.log,
        clan_sizes,
        times,
    })
}

/// Full and `F`-restricted clans driven by the same draws.
#[derive(Clone, Debug)]
pub struct CoupledClanState {
    pub full: ClanState,
    pub restricted: ClanState,
    pub f: BTreeSet<NeuronId>,
}

impl CoupledClanState {
    pub fn new(root: NeuronId, f: BTreeSet<NeuronId>) -> Self {
        CoupledClanState {
            full: ClanState::new(root),
            restricted: ClanState::new(root),
            f,
        }
    }

    /// Applies the full-chain event `rec` to the restricted clan when the
    /// underlying transformation belongs to the `F`-process.
    fn mirror(&mut self, model: &ModelSpec, rec: &EventRecord) -> Option<EventKind> {
        let r = &mut self.restricted;
        if r.clan.is_empty() || rec.kind == EventKind::NullOverlap || !self.f.contains(&rec.neuron) {
            return None;
        }
        let (j, k) = (rec.neuron, rec.threshold);
        let kind = if k == 0 {
            r.clan.contains(&j).then_some(EventKind::Stimulus)
        } else if r.clan.contains(&j) {
            // j is also in the full clan, so the full chain ran the
            // certification; reuse its outcome
            debug_assert!(matches!(rec.kind, EventKind::CertifiedSpike | EventKind::FailedCertification));
            Some(rec.kind)
        } else if model.post(j, k).any(|m| r.clan.contains(&m)) {
            // a spike certified on the full chain fired in the F-process too;
            // recording it as certified keeps the restricted clan inside the
            // full one
            Some(if rec.kind == EventKind::CertifiedSpike {
                EventKind::CertifiedSpike
            } else {
                EventKind::PresynAdd
            })
        } else {
            None
        }?;
        match kind {
            EventKind::CertifiedSpike => {
                r.clan.remove(&j);
            }
            EventKind::PresynAdd => {
                r.clan.insert(j);
            }
            _ => {}
        }
        r.record(j, k, kind, None);
        Some(kind)
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct CoupledRun {
    pub full: BackwardRun,
    pub restricted: BackwardRun,
    /// Some applied full-chain event involved a neuron outside `F`.
    pub hit_outside_f: bool,
}

impl CoupledRun {
    pub fn logs_identical(&self) -> bool {
        self.full.log.len() == self.restricted.log.len()
            && self.full.log.iter().zip(&self.restricted.log).all(|(a, b)| a.key() == b.key())
    }
}

/// Runs the full exploration and mirrors every draw onto the restricted
/// clan. Restricted containment in the full clan is checked after each step.
pub fn run_backward_coupled<R: Rng + ?Sized>(
    model: &ModelSpec,
    f: &BTreeSet<NeuronId>,
    root: NeuronId,
    options: &BackwardOptions,
    rng: &mut R,
) -> Result<CoupledRun, BackwardError> {
    if !f.contains(&root) {
        return Err(BackwardError::RootOutsideF(root));
    }
    if !model.contains(root) {
        return Err(ModelError::UnknownNeuron(root).into());
    }
    if options.certification != CertificationMode::Resample {
        return Err(BackwardError::UnsupportedMode);
    }
    let mut state = CoupledClanState::new(root, f.clone());
    let mut sizes = (vec![1u32], vec![1u32]);
    let mut times = options.holding_times.then(|| vec![0.0]);
    let mut hit_outside_f = false;
    while !state.full.is_empty() {
        if state.full.steps >= options.max_steps {
            return Err(BackwardError::BudgetExceeded { max_steps: options.max_steps });
        }
        let rec = backward_step(model, &mut state.full, options, rng)?;
        if rec.kind != EventKind::NullOverlap && !f.contains(&rec.neuron) {
            hit_outside_f = true;
        }
        state.mirror(model, &rec);
        if !state.restricted.clan.is_subset(&state.full.clan) {
            return Err(BackwardError::ContainmentViolation { step: rec.step });
        }
        sizes.0.push(state.full.clan.len() as u32);
        sizes.1.push(state.restricted.clan.len() as u32);
        if let Some(t) = times.as_mut() {
            t.push(state.full.elapsed);
        }
    }
    let full = BackwardRun {
        n_stop: state.full.steps,
        null_steps: state.full.null_steps,
        max_clan: state.full.max_clan,
        log: state.full.log,
        clan_sizes: sizes.0,
        times: times.clone(),
    };
    let restricted = BackwardRun {
        n_stop: state.restricted.steps,
        null_steps: 0,
        max_clan: state.restricted.max_clan,
        log: state.restricted.log,
        clan_sizes: sizes.1,
        times,
    };
    Ok(CoupledRun { full, restricted, hit_outside_f })
}

/// Writes a log as CSV with columns `step,j,k,kind,dt`.
pub fn write_event_log_csv<W: Write>(log: &[EventRecord], mut out: W) -> io::Result<()> {
    writeln!(out, "step,j,k,kind,dt")?;
    for r in log {
        let dt = r.dt.map(|d| format!("{d:.16e}")).unwrap_or_default();
        writeln!(out, "{},{},{},{},{}", r.step, r.neuron, r.threshold, r.kind, dt)?;
    }
    Ok(())
}
