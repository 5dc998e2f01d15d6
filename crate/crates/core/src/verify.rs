//! End-to-end verification of a model against the analytic bounds.

use std::collections::{BTreeMap, BTreeSet};
use std::time::Instant;

use serde_json::{json, Value};
use thiserror::Error;

use crate::backward::{BackwardOptions, CertificationMode};
use crate::histogram::{tv_distance, tv_to_geometric, HistogramError};
use crate::model::{check_conditions, delta_f, ModelError, ModelSpec, NeuronId, Topology};
use crate::model_file::model_digest;
use crate::oracle::{estimate_marginal, OracleError, DEFAULT_BURN_IN};
use crate::report::{BoundRecord, VerificationReport};
use crate::rng::RngStream;
use crate::sampler::{run_batch, BatchOptions, SamplerError};

pub const DEFAULT_TAIL_MAX: u64 = 50;
pub const CLAN_SIZE_GRID: [f64; 4] = [0.5, 1.0, 2.0, 4.0];
/// Neurons above the root included in the default scope of a countable model.
pub const COUNTABLE_SCOPE_MARGIN: u64 = 64;
pub const ORACLE_TV_TOLERANCE: f64 = 0.02;
pub const GEOMETRIC_TV_TOLERANCE: f64 = 0.01;
// keeps the coupled batch on streams disjoint from the plain batch
const COUPLED_SEED_SALT: u64 = 0x9e37_79b9_7f4a_7c15;

#[derive(Debug, Error)]
pub enum VerifyError {
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Sampler(#[from] SamplerError),
    #[error(transparent)]
    Oracle(#[from] OracleError),
    #[error(transparent)]
    Histogram(#[from] HistogramError),
    #[error("neuron {0} is not in the model")]
    UnknownNeuron(NeuronId),
}

#[derive(Clone, Debug)]
pub struct VerifyOptions {
    pub samples: u64,
    pub seed: u64,
    /// Finite set for the coupling bound; defaults to the root and its
    /// direct presynaptic neighbors.
    pub finite_set: Option<BTreeSet<NeuronId>>,
    /// Scope for derived quantities; defaults to all neurons of a finite
    /// model, or `0..=i+64` for a countable one.
    pub scope: Option<Vec<NeuronId>>,
    pub coupled_samples: Option<u64>,
    pub oracle_jumps: Option<u64>,
    pub burn_in: u64,
    pub tail_max: u64,
    pub workers: Option<usize>,
    pub certification: CertificationMode,
    pub max_steps: u64,
    pub force: bool,
    pub record_wall_clock: bool,
}

impl Default for VerifyOptions {
    fn default() -> Self {
        VerifyOptions {
            samples: 100_000,
            seed: 0,
            finite_set: None,
            scope: None,
            coupled_samples: None,
            oracle_jumps: None,
            burn_in: DEFAULT_BURN_IN,
            tail_max: DEFAULT_TAIL_MAX,
            workers: None,
            certification: CertificationMode::Resample,
            max_steps: BackwardOptions::default().max_steps,
            force: false,
            record_wall_clock: false,
        }
    }
}

pub fn default_scope(model: &ModelSpec, i: NeuronId) -> Vec<NeuronId> {
    match model.finite_scope() {
        Some(ids) => ids,
        None => (0..=i.0.saturating_add(COUNTABLE_SCOPE_MARGIN)).map(NeuronId).collect(),
    }
}

pub fn default_finite_set(model: &ModelSpec, i: NeuronId) -> BTreeSet<NeuronId> {
    let mut f = BTreeSet::from([i]);
    for k in 1..=model.max_synapse_threshold(i) {
        f.extend(model.pre(i, k));
    }
    f
}

fn id_map(values: &BTreeMap<NeuronId, f64>) -> Value {
    Value::Object(values.iter().map(|(k, v)| (k.to_string(), json!(v))).collect())
}

/// Runs the sampler, the coupled sampler and (for finite models) the
/// forward oracle, and compares each statistic with its analytic target.
pub fn run_verification(model: &ModelSpec, i: NeuronId, opts: &VerifyOptions) -> Result<VerificationReport, VerifyError> {
    let started = Instant::now();
    if !model.contains(i) {
        return Err(VerifyError::UnknownNeuron(i));
    }
    let scope = opts.scope.clone().unwrap_or_else(|| default_scope(model, i));
    let conditions = check_conditions(model, &scope)?;
    let alpha = conditions.alpha.value;
    let growth = conditions.growth;
    let f = opts.finite_set.clone().unwrap_or_else(|| default_finite_set(model, i));
    let delta = delta_f(model, &f, &scope)?;
    let isolated = model.is_isolated_target(i);
    let root_rates = model.rates_checked(i)?;

    let mut quantities = BTreeMap::new();
    let derived = conditions.derived();
    quantities.insert("alpha".into(), json!(alpha));
    quantities.insert("beta".into(), json!(conditions.beta));
    quantities.insert("growth_c".into(), json!(growth));
    quantities.insert("rho".into(), id_map(&derived.rho));
    quantities.insert("big_lambda".into(), id_map(&derived.big_lambda));
    quantities.insert("delta_f".into(), json!(delta.delta));
    quantities.insert("finite_set".into(), json!(f.iter().map(|n| n.0).collect::<Vec<_>>()));
    quantities.insert("neuron".into(), json!(i.0));
    quantities.insert("conditions_passed".into(), json!(conditions.passed));
    quantities.insert(
        "certification".into(),
        json!(match opts.certification {
            CertificationMode::Resample => "resample",
            CertificationMode::Retained => "retained",
        }),
    );
    if let Topology::DecayingFeedforward(fam) = model.topology() {
        let c = fam.closed_form_check();
        quantities.insert("closed_form_incoming".into(), json!(c.incoming));
        quantities.insert("closed_form_incoming_upper".into(), json!(c.incoming_upper));
        quantities.insert("closed_form_certified".into(), json!(c.certified));
    }
    if alpha < 1.0 {
        quantities.insert("coupling_bound".into(), json!(delta.delta / (1.0 - alpha)));
        quantities.insert("mean_n_stop_bound".into(), json!(1.0 / (1.0 - alpha)));
    }

    let backward = BackwardOptions {
        max_steps: opts.max_steps,
        holding_times: true,
        certification: opts.certification,
    };
    let batch = BatchOptions {
        backward,
        coupled: None,
        clan_size_grid: CLAN_SIZE_GRID.to_vec(),
        workers: opts.workers,
        force: opts.force,
    };
    let stats = run_batch(model, i, opts.samples, opts.seed, &batch)?;

    let mut bounds = Vec::new();
    // with no presynaptic neuron the clan stays {i} until a certified spike,
    // so the stopping time is geometric with parameter 1 − α exactly
    for n in 1..=opts.tail_max {
        let (p, se) = stats.n_stop_tail(n);
        let target = alpha.powi(n as i32);
        let name = format!("n_stop_tail_{n}");
        bounds.push(if isolated {
            // stderr under the null; the empirical one is 0 when no sample
            // reaches a deep tail
            let se0 = (target * (1.0 - target) / opts.samples as f64).sqrt();
            BoundRecord::exact(name, target, p, se0)
        } else {
            BoundRecord::upper(name, target, p, se)
        });
    }
    let mean_target = 1.0 / (1.0 - alpha);
    bounds.push(if isolated {
        BoundRecord::exact("n_stop_mean", mean_target, stats.mean_n_stop(), stats.n_stop_stderr())
    } else {
        BoundRecord::upper("n_stop_mean", mean_target, stats.mean_n_stop(), stats.n_stop_stderr())
    });
    for (idx, s) in CLAN_SIZE_GRID.iter().enumerate() {
        let (mean, se) = stats.clan_size_mean(idx);
        let target = (growth * s).exp();
        let name = format!("clan_size_s{s}");
        bounds.push(if isolated {
            BoundRecord::exact(name, target, mean, se)
        } else {
            BoundRecord::upper(name, target, mean, se)
        });
    }
    let hist = stats.potential_histogram()?;
    if isolated && root_rates.max_threshold() <= 1 {
        let rho = root_rates.rho();
        bounds.push(BoundRecord::tolerance("potential_geometric_tv", GEOMETRIC_TV_TOLERANCE, tv_to_geometric(&hist, rho)));
    }

    let mut counts = BTreeMap::from([
        ("samples".to_string(), opts.samples),
        ("null_steps".to_string(), stats.null_steps),
    ]);
    let mut seeds = BTreeMap::from([("sampler".to_string(), opts.seed)]);

    if let Some(scope_ids) = model.finite_scope() {
        let jumps = opts.oracle_jumps.unwrap_or(opts.samples);
        // the oracle stream index lies outside any batch's sample range
        let mut stream = RngStream::new(opts.seed, u64::MAX);
        let reference = estimate_marginal(model, scope_ids, i, opts.burn_in, jumps, &mut stream)?;
        bounds.push(BoundRecord::tolerance("oracle_tv", ORACLE_TV_TOLERANCE, tv_distance(&hist, &reference)?));
        counts.insert("oracle_jumps".into(), jumps);
        counts.insert("oracle_burn_in".into(), opts.burn_in);
        seeds.insert("oracle".into(), opts.seed);
    }

    if alpha < 1.0 && opts.certification == CertificationMode::Resample {
        let coupled_n = opts.coupled_samples.unwrap_or(opts.samples);
        let coupled_seed = opts.seed ^ COUPLED_SEED_SALT;
        let batch = BatchOptions {
            backward: BackwardOptions { holding_times: false, ..backward },
            coupled: Some(f.clone()),
            clan_size_grid: Vec::new(),
            workers: opts.workers,
            force: opts.force,
        };
        let cstats = run_batch(model, i, coupled_n, coupled_seed, &batch)?;
        let (rate, se) = cstats.disagreement_rate().expect("coupled batch");
        let c = cstats.coupled.as_ref().expect("coupled batch");
        bounds.push(BoundRecord::upper("coupling_disagreement", delta.delta / (1.0 - alpha), rate, se));
        bounds.push(BoundRecord::exact("coupling_implication_violations", 0.0, c.implication_violations as f64, 0.0));
        counts.insert("coupled_samples".into(), coupled_n);
        counts.insert("disagreements".into(), c.disagreements);
        counts.insert("hits_outside_f".into(), c.hits_outside_f);
        counts.insert("implication_violations".into(), c.implication_violations);
        seeds.insert("coupled".into(), coupled_seed);
    }

    Ok(VerificationReport {
        model_digest: model_digest(model),
        quantities,
        bounds,
        seeds,
        counts,
        wall_clock_s: opts.record_wall_clock.then(|| started.elapsed().as_secs_f64()),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::fixtures::*;
    use crate::report::{render_report, BoundKind};

    fn small(seed: u64) -> VerifyOptions {
        VerifyOptions { samples: 20_000, seed, oracle_jumps: Some(200_000), ..Default::default() }
    }

    #[test]
    fn m1_report_uses_exact_laws() {
        let r = run_verification(&m1(), NeuronId(1), &small(1)).unwrap();
        let tail = r.bounds.iter().find(|b| b.name == "n_stop_tail_3").unwrap();
        assert_eq!(tail.kind, BoundKind::Exact);
        assert_eq!(tail.analytic_value, 0.75f64.powi(3));
        assert!(r.bounds.iter().any(|b| b.name == "potential_geometric_tv"));
        assert!(r.bounds.iter().any(|b| b.name == "oracle_tv"));
        assert_eq!(r.quantities["alpha"], json!(0.75));
        assert!(r.wall_clock_s.is_none());
    }

    #[test]
    fn m3_report_has_coupling_records() {
        let opts = VerifyOptions {
            finite_set: Some(BTreeSet::from([NeuronId(2), NeuronId(3)])),
            ..small(2)
        };
        let r = run_verification(&m3(), NeuronId(3), &opts).unwrap();
        let c = r.bounds.iter().find(|b| b.name == "coupling_disagreement").unwrap();
        assert!((c.analytic_value - 2.0 / 3.0).abs() < 1e-12);
        assert!(r.failed().next().is_none(), "{:?}", r.failed().collect::<Vec<_>>());
    }

    #[test]
    fn reports_are_reproducible() {
        let a = render_report(&run_verification(&m2(), NeuronId(2), &small(3)).unwrap()).unwrap();
        let b = render_report(
            &run_verification(&m2(), NeuronId(2), &VerifyOptions { workers: Some(3), ..small(3) }).unwrap(),
        )
        .unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn countable_models_skip_the_oracle() {
        let m = crate::model::build_decaying_feedforward(1.0, 0.1, vec![1.0, 1.0], vec![1]).unwrap();
        let r = run_verification(&m, NeuronId(3), &VerifyOptions { samples: 20_000, ..Default::default() }).unwrap();
        assert!(r.bounds.iter().all(|b| b.name != "oracle_tv"));
        assert!(r.quantities.contains_key("closed_form_incoming"));
        let find = |name: &str| r.bounds.iter().find(|b| b.name == name).unwrap();
        assert!(find("n_stop_mean").pass);
        assert!(find("coupling_disagreement").pass);
        // the geometric tail is not implied by the drift condition here:
        // slow clan members linger, P(N > 20) is about 0.022 against
        // α^20 ≈ 0.0146 (confirmed by an independent simulation)
        assert!(!find("n_stop_tail_20").pass);
    }
}
