//! Resampled versus retained certification marks, against an exact
//! stationary law.
//!
//! Model: neuron 1 with rates (1, 1) spiking into neuron 2, neuron 2 with
//! rates (1, 0.3). Neuron 2 fails the drift condition, so sampling is
//! forced; the clan still empties quickly.

use std::collections::BTreeMap;

use clan_sim::backward::{BackwardOptions, CertificationMode};
use clan_sim::histogram::{tv_distance, Histogram};
use clan_sim::model::{FiniteNetwork, NeuronEntry, RateVector};
use clan_sim::sampler::{run_batch, BatchOptions};
use clan_sim::{ModelSpec, NeuronId};

fn model() -> ModelSpec {
    ModelSpec::finite(
        FiniteNetwork::new(vec![
            NeuronEntry {
                id: NeuronId(1),
                rates: RateVector::new(vec![1.0, 1.0]),
                post: BTreeMap::from([(1, vec![NeuronId(2)])]),
            },
            NeuronEntry { id: NeuronId(2), rates: RateVector::new(vec![1.0, 0.3]), post: BTreeMap::new() },
        ])
        .unwrap(),
    )
}

/// Stationary marginal of neuron 2 by power iteration of the uniformized
/// chain on truncated potentials.
fn exact_marginal() -> Histogram {
    const CAP1: usize = 60;
    const CAP2: usize = 240;
    let total = 3.3;
    let idx = |a: usize, b: usize| a * CAP2 + b;
    let mut dist = vec![0.0; CAP1 * CAP2];
    dist[0] = 1.0;
    for _ in 0..4_000 {
        let mut next = vec![0.0; dist.len()];
        for a in 0..CAP1 {
            for b in 0..CAP2 {
                let p = dist[idx(a, b)];
                if p == 0.0 {
                    continue;
                }
                // stimulus of 1, spike attempt of 1, stimulus of 2, spike attempt of 2
                next[idx((a + 1).min(CAP1 - 1), b)] += p * 1.0 / total;
                if a >= 1 {
                    next[idx(0, (b + 1).min(CAP2 - 1))] += p * 1.0 / total;
                } else {
                    next[idx(a, b)] += p * 1.0 / total;
                }
                next[idx(a, (b + 1).min(CAP2 - 1))] += p * 1.0 / total;
                next[idx(a, if b >= 1 { 0 } else { b })] += p * 0.3 / total;
            }
        }
        dist = next;
    }
    let mut marginal = BTreeMap::new();
    for a in 0..CAP1 {
        for b in 0..CAP2 {
            *marginal.entry(b as u64).or_insert(0.0) += dist[idx(a, b)];
        }
    }
    Histogram::from_weights(&marginal).unwrap()
}

fn sampled(mode: CertificationMode) -> Histogram {
    let opts = BatchOptions {
        backward: BackwardOptions { certification: mode, ..Default::default() },
        force: true,
        ..Default::default()
    };
    run_batch(&model(), NeuronId(2), 1_000_000, 55, &opts).unwrap().potential_histogram().unwrap()
}

#[test]
fn retained_marks_remove_the_certification_bias() {
    let exact = exact_marginal();
    let retained = tv_distance(&sampled(CertificationMode::Retained), &exact).unwrap();
    let resampled = tv_distance(&sampled(CertificationMode::Resample), &exact).unwrap();
    println!("TV to exact: retained {retained:.4}, resampled {resampled:.4}");
    assert!(retained < 0.01, "retained TV {retained}");
    assert!(resampled > 0.02, "resampled TV {resampled}");
}
