//! Perfect samples and batches.
//!
//! Sample `n` of a batch always uses the stream `(seed, n)`, and per-chunk
//! statistics are integer counts merged in chunk order, so batch results do
//! not depend on the number of workers.

use std::collections::{BTreeMap, BTreeSet};

use rayon::prelude::*;
use serde::Serialize;
use thiserror::Error;

use crate::backward::{run_backward, run_backward_coupled, BackwardError, BackwardOptions, BackwardRun};
use crate::histogram::{Histogram, HistogramError};
use crate::model::{check_conditions, ModelError, ModelSpec, NeuronId, Potential, Topology};
use crate::replay::{replay, ReplayError};
use crate::rng::RngStream;

/// Samples per parallel work unit.
pub const CHUNK_SIZE: u64 = 1024;

#[derive(Debug, Error)]
pub enum SamplerError {
    #[error(transparent)]
    Backward(#[from] BackwardError),
    #[error(transparent)]
    Replay(#[from] ReplayError),
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error("sample {index}: {source}")]
    Sample {
        index: u64,
        #[source]
        source: Box<SamplerError>,
    },
    #[error("sufficient conditions fail: {0}")]
    ConditionsFailed(String),
    #[error("invalid batch parameter: {0}")]
    InvalidParameter(String),
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize)]
pub struct SampleResult {
    pub potential: Potential,
    pub n_stop: u64,
    pub max_clan: usize,
    pub steps_null: u64,
    pub seed_path: (u64, u64),
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize)]
pub struct CoupledSampleResult {
    pub full: SampleResult,
    pub restricted: SampleResult,
    pub agree: bool,
    pub hit_outside_f: bool,
    pub logs_identical: bool,
}

fn result_of(run: &BackwardRun, potential: Potential, stream: &RngStream) -> SampleResult {
    SampleResult {
        potential,
        n_stop: run.n_stop,
        max_clan: run.max_clan,
        steps_null: run.null_steps,
        seed_path: (stream.seed(), stream.sample_index()),
    }
}

fn sample_run(
    model: &ModelSpec,
    i: NeuronId,
    options: &BackwardOptions,
    stream: &mut RngStream,
) -> Result<(SampleResult, BackwardRun), SamplerError> {
    let run = run_backward(model, i, options, stream)?;
    let potential = replay(model, &run.log, i)?;
    Ok((result_of(&run, potential, stream), run))
}

/// Backward exploration from `{i}` followed by forward replay.
pub fn perfect_sample(
    model: &ModelSpec,
    i: NeuronId,
    options: &BackwardOptions,
    stream: &mut RngStream,
) -> Result<SampleResult, SamplerError> {
    sample_run(model, i, options, stream).map(|(r, _)| r)
}

/// Joint sample of `ξ(i)` and `ξ^F(i)` from the same draws.
pub fn coupled_sample(
    model: &ModelSpec,
    f: &BTreeSet<NeuronId>,
    i: NeuronId,
    options: &BackwardOptions,
    stream: &mut RngStream,
) -> Result<CoupledSampleResult, SamplerError> {
    let run = run_backward_coupled(model, f, i, options, stream)?;
    let logs_identical = run.logs_identical();
    let full = replay(model, &run.full.log, i)?;
    let restricted = if logs_identical { full } else { replay(model, &run.restricted.log, i)? };
    Ok(CoupledSampleResult {
        full: result_of(&run.full, full, stream),
        restricted: result_of(&run.restricted, restricted, stream),
        agree: full == restricted,
        hit_outside_f: run.hit_outside_f,
        logs_identical,
    })
}

/// Fails unless the drift condition holds (on every neuron of a finite
/// model, or in closed form for the countable family).
pub fn ensure_conditions(model: &ModelSpec) -> Result<(), SamplerError> {
    match model.topology() {
        Topology::Finite(net) => {
            let report = check_conditions(model, net.ids())?;
            if !report.passed {
                let bad: Vec<String> = report.failing().map(|m| format!("{} (m = {})", m.neuron, m.margin)).collect();
                return Err(SamplerError::ConditionsFailed(format!("negative margin at {}", bad.join(", "))));
            }
        }
        Topology::DecayingFeedforward(f) => {
            let c = f.closed_form_check();
            if !c.passed {
                return Err(SamplerError::ConditionsFailed(format!(
                    "incoming {} exceeds certified {}",
                    c.incoming, c.certified
                )));
            }
        }
    }
    Ok(())
}

#[derive(Clone, Debug, Default)]
pub struct BatchOptions {
    pub backward: BackwardOptions,
    /// Run coupled samples against this finite set.
    pub coupled: Option<BTreeSet<NeuronId>>,
    /// Backward times at which `|C_s|` is recorded; enables holding times.
    pub clan_size_grid: Vec<f64>,
    /// Worker threads; `None` uses the global pool.
    pub workers: Option<usize>,
    /// Skip the condition check.
    pub force: bool,
}

#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize)]
pub struct CoupledCounts {
    pub restricted_potentials: BTreeMap<Potential, u64>,
    pub disagreements: u64,
    pub hits_outside_f: u64,
    /// Disagreements without any event outside `F`.
    pub implication_violations: u64,
    pub identical_logs: u64,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize)]
pub struct BatchStatistics {
    pub n_samples: u64,
    pub potentials: BTreeMap<Potential, u64>,
    pub n_stop: BTreeMap<u64, u64>,
    pub max_clan: BTreeMap<u64, u64>,
    pub null_steps: u64,
    pub clan_size_grid: Vec<f64>,
    pub clan_size_sum: Vec<u64>,
    pub clan_size_sq_sum: Vec<u64>,
    pub coupled: Option<CoupledCounts>,
}

fn add_counts<K: Ord + Copy>(into: &mut BTreeMap<K, u64>, from: &BTreeMap<K, u64>) {
    for (&k, &c) in from {
        *into.entry(k).or_default() += c;
    }
}

impl BatchStatistics {
    fn empty(grid: &[f64], coupled: bool) -> Self {
        BatchStatistics {
            clan_size_grid: grid.to_vec(),
            clan_size_sum: vec![0; grid.len()],
            clan_size_sq_sum: vec![0; grid.len()],
            coupled: coupled.then(CoupledCounts::default),
            ..Default::default()
        }
    }

    fn merge(&mut self, other: &BatchStatistics) {
        self.n_samples += other.n_samples;
        add_counts(&mut self.potentials, &other.potentials);
        add_counts(&mut self.n_stop, &other.n_stop);
        add_counts(&mut self.max_clan, &other.max_clan);
        self.null_steps += other.null_steps;
        for (a, b) in self.clan_size_sum.iter_mut().zip(&other.clan_size_sum) {
            *a += b;
        }
        for (a, b) in self.clan_size_sq_sum.iter_mut().zip(&other.clan_size_sq_sum) {
            *a += b;
        }
        if let (Some(a), Some(b)) = (self.coupled.as_mut(), other.coupled.as_ref()) {
            add_counts(&mut a.restricted_potentials, &b.restricted_potentials);
            a.disagreements += b.disagreements;
            a.hits_outside_f += b.hits_outside_f;
            a.implication_violations += b.implication_violations;
            a.identical_logs += b.identical_logs;
        }
    }

    fn record(&mut self, r: &SampleResult, run: Option<&BackwardRun>) {
        self.n_samples += 1;
        *self.potentials.entry(r.potential).or_default() += 1;
        *self.n_stop.entry(r.n_stop).or_default() += 1;
        *self.max_clan.entry(r.max_clan as u64).or_default() += 1;
        self.null_steps += r.steps_null;
        if let Some(run) = run {
            for (idx, &s) in self.clan_size_grid.iter().enumerate() {
                let size = run.clan_size_at(s).unwrap_or(0) as u64;
                self.clan_size_sum[idx] += size;
                self.clan_size_sq_sum[idx] += size * size;
            }
        }
    }

    pub fn potential_histogram(&self) -> Result<Histogram, HistogramError> {
        Histogram::from_counts(&self.potentials)
    }

    pub fn mean_n_stop(&self) -> f64 {
        self.n_stop.iter().map(|(&n, &c)| n as f64 * c as f64).sum::<f64>() / self.n_samples as f64
    }

    /// Standard error of the sample mean of `N_STOP`.
    pub fn n_stop_stderr(&self) -> f64 {
        let mean = self.mean_n_stop();
        let var = self
            .n_stop
            .iter()
            .map(|(&n, &c)| c as f64 * (n as f64 - mean).powi(2))
            .sum::<f64>()
            / (self.n_samples.max(2) - 1) as f64;
        (var / self.n_samples as f64).sqrt()
    }

    /// Empirical `P(N_STOP > n)` and its binomial standard error.
    pub fn n_stop_tail(&self, n: u64) -> (f64, f64) {
        let above: u64 = self.n_stop.range(n + 1..).map(|(_, &c)| c).sum();
        proportion(above, self.n_samples)
    }

    /// Empirical `E|C_s|` and its standard error at grid point `idx`.
    pub fn clan_size_mean(&self, idx: usize) -> (f64, f64) {
        let n = self.n_samples as f64;
        let mean = self.clan_size_sum[idx] as f64 / n;
        let var = (self.clan_size_sq_sum[idx] as f64 / n - mean * mean).max(0.0) * n / (n - 1.0).max(1.0);
        (mean, (var / n).sqrt())
    }

    /// Empirical `P(ξ(i) ≠ ξ^F(i))` and its standard error.
    pub fn disagreement_rate(&self) -> Option<(f64, f64)> {
        self.coupled.as_ref().map(|c| proportion(c.disagreements, self.n_samples))
    }
}

/// Sample proportion and binomial standard error.
pub fn proportion(hits: u64, n: u64) -> (f64, f64) {
    let p = hits as f64 / n as f64;
    (p, (p * (1.0 - p) / n as f64).sqrt())
}

fn run_chunk(
    model: &ModelSpec,
    i: NeuronId,
    seed: u64,
    range: std::ops::Range<u64>,
    options: &BatchOptions,
    backward: &BackwardOptions,
) -> Result<BatchStatistics, SamplerError> {
    let mut stats = BatchStatistics::empty(&options.clan_size_grid, options.coupled.is_some());
    let tag = |index: u64| move |e: SamplerError| SamplerError::Sample { index, source: Box::new(e) };
    for index in range {
        let mut stream = RngStream::new(seed, index);
        match &options.coupled {
            None => {
                let (r, run) = sample_run(model, i, backward, &mut stream).map_err(tag(index))?;
                stats.record(&r, Some(&run));
            }
            Some(f) => {
                let c = coupled_sample(model, f, i, backward, &mut stream).map_err(tag(index))?;
                stats.record(&c.full, None);
                let counts = stats.coupled.as_mut().expect("coupled batch");
                *counts.restricted_potentials.entry(c.restricted.potential).or_default() += 1;
                counts.disagreements += !c.agree as u64;
                counts.hits_outside_f += c.hit_outside_f as u64;
                counts.implication_violations += (!c.agree && !c.hit_outside_f) as u64;
                counts.identical_logs += c.logs_identical as u64;
            }
        }
    }
    Ok(stats)
}

/// Runs `n_samples` samples on streams `(seed, 0..n_samples)`.
pub fn run_batch(
    model: &ModelSpec,
    i: NeuronId,
    n_samples: u64,
    seed: u64,
    options: &BatchOptions,
) -> Result<BatchStatistics, SamplerError> {
    if n_samples == 0 {
        return Err(SamplerError::InvalidParameter("n_samples must be at least 1".into()));
    }
    if options.coupled.is_some() && !options.clan_size_grid.is_empty() {
        return Err(SamplerError::InvalidParameter("clan sizes are recorded only for plain batches".into()));
    }
    if !options.force {
        ensure_conditions(model)?;
    }
    let mut backward = options.backward;
    backward.holding_times |= !options.clan_size_grid.is_empty();

    let n_chunks = n_samples.div_ceil(CHUNK_SIZE);
    let work = || {
        (0..n_chunks)
            .into_par_iter()
            .map(|c| {
                let range = c * CHUNK_SIZE..((c + 1) * CHUNK_SIZE).min(n_samples);
                run_chunk(model, i, seed, range, options, &backward)
            })
            .collect::<Vec<_>>()
    };
    let chunks = match options.workers {
        Some(w) => rayon::ThreadPoolBuilder::new()
            .num_threads(w.max(1))
            .build()
            .map_err(|e| SamplerError::InvalidParameter(e.to_string()))?
            .install(work),
        None => work(),
    };
    let mut total = BatchStatistics::empty(&options.clan_size_grid, options.coupled.is_some());
    for chunk in chunks {
        total.merge(&chunk?);
    }
    Ok(total)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::histogram::tv_to_geometric;
    use crate::model::fixtures::*;
    use crate::model::FiniteNetwork;

    #[test]
    fn fixed_stream_is_reproducible() {
        let opts = BackwardOptions::default();
        let a = perfect_sample(&m1(), NeuronId(1), &opts, &mut RngStream::new(42, 0)).unwrap();
        let b = perfect_sample(&m1(), NeuronId(1), &opts, &mut RngStream::new(42, 0)).unwrap();
        assert_eq!(a, b);
        assert_eq!(a.seed_path, (42, 0));
        assert!(a.n_stop >= 1 && a.max_clan >= 1);
    }

    #[test]
    fn single_sample_batch() {
        let stats = run_batch(&m2(), NeuronId(2), 1, 5, &BatchOptions::default()).unwrap();
        assert_eq!(stats.n_samples, 1);
        let direct = perfect_sample(&m2(), NeuronId(2), &BackwardOptions::default(), &mut RngStream::new(5, 0)).unwrap();
        assert_eq!(stats.potentials, BTreeMap::from([(direct.potential, 1)]));
        assert_eq!(stats.n_stop, BTreeMap::from([(direct.n_stop, 1)]));
    }

    #[test]
    fn batches_ignore_worker_count() {
        let base = BatchOptions { clan_size_grid: vec![0.5, 1.0], ..Default::default() };
        let one = run_batch(&m3(), NeuronId(3), 5_000, 9, &BatchOptions { workers: Some(1), ..base.clone() }).unwrap();
        let four = run_batch(&m3(), NeuronId(3), 5_000, 9, &BatchOptions { workers: Some(4), ..base.clone() }).unwrap();
        let default = run_batch(&m3(), NeuronId(3), 5_000, 9, &base).unwrap();
        assert_eq!(one, four);
        assert_eq!(one, default);
    }

    #[test]
    fn m1_batch_laws() {
        let stats = run_batch(&m1(), NeuronId(1), 200_000, 11, &BatchOptions::default()).unwrap();
        assert!(tv_to_geometric(&stats.potential_histogram().unwrap(), 0.5) < 0.01);
        assert!((stats.mean_n_stop() - 4.0).abs() <= 3.0 * stats.n_stop_stderr());
        let (p, se) = stats.n_stop_tail(2);
        assert!((p - 0.5625).abs() <= 3.0 * se);
    }

    #[test]
    fn whole_scope_coupling_always_agrees() {
        let f = BTreeSet::from([NeuronId(1), NeuronId(2), NeuronId(3)]);
        let opts = BatchOptions { coupled: Some(f), ..Default::default() };
        let stats = run_batch(&m3(), NeuronId(3), 5_000, 12, &opts).unwrap();
        let c = stats.coupled.unwrap();
        assert_eq!(c.disagreements, 0);
        assert_eq!(c.hits_outside_f, 0);
        assert_eq!(c.identical_logs, 5_000);
        assert_eq!(c.restricted_potentials, stats.potentials);
    }

    #[test]
    fn coupled_disagreement_implies_outside_hit() {
        let f = BTreeSet::from([NeuronId(2), NeuronId(3)]);
        let opts = BatchOptions { coupled: Some(f), ..Default::default() };
        let stats = run_batch(&m3(), NeuronId(3), 20_000, 13, &opts).unwrap();
        let c = stats.coupled.as_ref().unwrap();
        assert_eq!(c.implication_violations, 0);
        assert!(c.disagreements <= c.hits_outside_f);
        let (rate, se) = stats.disagreement_rate().unwrap();
        assert!(rate <= 2.0 / 3.0 + 3.0 * se);
    }

    #[test]
    fn failing_conditions_need_force() {
        let pair = ModelSpec::finite(
            FiniteNetwork::new(vec![entry(1, &[1.0, 1.0], &[(1, &[2])]), entry(2, &[1.0, 1.0], &[(1, &[1])])])
                .unwrap(),
        );
        let err = run_batch(&pair, NeuronId(1), 10, 0, &BatchOptions::default()).unwrap_err();
        assert!(matches!(err, SamplerError::ConditionsFailed(_)));
    }

    #[test]
    fn errors_carry_the_sample_index() {
        let stuck = ModelSpec::finite(FiniteNetwork::new(vec![entry(1, &[1.0, 0.0], &[])]).unwrap());
        let opts = BatchOptions {
            backward: BackwardOptions { max_steps: 10, ..Default::default() },
            force: true,
            ..Default::default()
        };
        let err = run_batch(&stuck, NeuronId(1), 3_000, 0, &opts).unwrap_err();
        assert!(matches!(err, SamplerError::Sample { index: 0, .. }), "{err}");
    }
}
