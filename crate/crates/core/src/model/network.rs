use std::collections::BTreeMap;

use super::{ModelError, Neighbors, NeuronId, RateVector, Threshold};

/// One neuron of an explicit finite network, as written in a model file.
#[derive(Clone, Debug, PartialEq)]
pub struct NeuronEntry {
    pub id: NeuronId,
    pub rates: RateVector,
    /// Postsynaptic targets per threshold `k >= 1`.
    pub post: BTreeMap<Threshold, Vec<NeuronId>>,
}

/// Explicit finite network with ids kept sorted; neighbor lists are sorted
/// and deduplicated.
#[derive(Clone, Debug, PartialEq)]
pub struct FiniteNetwork {
    ids: Vec<NeuronId>,
    rates: Vec<RateVector>,
    // indexed by [neuron index][k - 1]
    post: Vec<Vec<Vec<NeuronId>>>,
    pre: Vec<Vec<Vec<NeuronId>>>,
}

impl FiniteNetwork {
    /// Builds a network from postsynaptic lists; presynaptic sets are derived
    /// by inversion, so duality holds by construction.
    pub fn new(entries: Vec<NeuronEntry>) -> Result<Self, ModelError> {
        let rates = entries.iter().map(|e| (e.id, e.rates.clone())).collect();
        let mut post = Vec::new();
        for e in &entries {
            for (&k, targets) in &e.post {
                if k == 0 {
                    return Err(ModelError::ZeroThresholdSynapse(e.id));
                }
                post.extend(targets.iter().map(|&t| (e.id, k, t)));
            }
        }
        let pre = post.iter().map(|&(from, k, to)| (to, k, from)).collect();
        Self::from_parts(rates, post, pre)
    }

    /// Builds a network from explicit post triples `(from, k, to)` and pre
    /// triples `(target, k, source)` without enforcing duality. Used to
    /// represent (and diagnose) inconsistent inputs.
    pub fn from_parts(
        rates: Vec<(NeuronId, RateVector)>,
        post: Vec<(NeuronId, Threshold, NeuronId)>,
        pre: Vec<(NeuronId, Threshold, NeuronId)>,
    ) -> Result<Self, ModelError> {
        let mut rates = rates;
        rates.sort_by_key(|(id, _)| *id);
        for w in rates.windows(2) {
            if w[0].0 == w[1].0 {
                return Err(ModelError::DuplicateNeuron(w[0].0));
            }
        }
        let (ids, rates): (Vec<_>, Vec<_>) = rates.into_iter().unzip();
        let mut net = FiniteNetwork {
            post: vec![Vec::new(); ids.len()],
            pre: vec![Vec::new(); ids.len()],
            ids,
            rates,
        };
        for (owner, k, other, is_post) in post
            .into_iter()
            .map(|(a, k, b)| (a, k, b, true))
            .chain(pre.into_iter().map(|(a, k, b)| (a, k, b, false)))
        {
            if k == 0 {
                return Err(ModelError::ZeroThresholdSynapse(owner));
            }
            let idx = net.index_of(owner).ok_or(ModelError::UnknownNeuron(owner))?;
            net.index_of(other).ok_or(ModelError::UnknownNeuron(other))?;
            let table = if is_post { &mut net.post[idx] } else { &mut net.pre[idx] };
            if table.len() < k as usize {
                table.resize(k as usize, Vec::new());
            }
            table[k as usize - 1].push(other);
        }
        for list in net.post.iter_mut().chain(net.pre.iter_mut()).flatten() {
            list.sort_unstable();
            list.dedup();
        }
        Ok(net)
    }

    pub fn ids(&self) -> &[NeuronId] {
        &self.ids
    }

    pub fn len(&self) -> usize {
        self.ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ids.is_empty()
    }

    #[inline]
    pub fn index_of(&self, i: NeuronId) -> Option<usize> {
        self.ids.binary_search(&i).ok()
    }

    #[inline]
    pub fn rates(&self, i: NeuronId) -> Option<&RateVector> {
        self.index_of(i).map(|idx| &self.rates[idx])
    }

    #[inline]
    pub fn post(&self, i: NeuronId, k: Threshold) -> Neighbors<'_> {
        Self::lookup(&self.post, self.index_of(i), k)
    }

    #[inline]
    pub fn pre(&self, i: NeuronId, k: Threshold) -> Neighbors<'_> {
        Self::lookup(&self.pre, self.index_of(i), k)
    }

    fn lookup(table: &[Vec<Vec<NeuronId>>], idx: Option<usize>, k: Threshold) -> Neighbors<'_> {
        match idx.and_then(|idx| table[idx].get((k as usize).wrapping_sub(1))) {
            Some(list) => Neighbors::Slice(list.iter()),
            None => Neighbors::Empty,
        }
    }

    pub fn max_synapse_threshold(&self, i: NeuronId) -> Threshold {
        self.index_of(i)
            .map(|idx| self.post[idx].len().max(self.pre[idx].len()) as Threshold)
            .unwrap_or(0)
    }

    /// Per-neuron entries in id order (the canonical file representation).
    pub fn entries(&self) -> Vec<NeuronEntry> {
        self.ids
            .iter()
            .enumerate()
            .map(|(idx, &id)| NeuronEntry {
                id,
                rates: self.rates[idx].clone(),
                post: self.post[idx]
                    .iter()
                    .enumerate()
                    .filter(|(_, l)| !l.is_empty())
                    .map(|(k, l)| (k as Threshold + 1, l.clone()))
                    .collect(),
            })
            .collect()
    }
}

#[cfg(test)]
mod tests {
    use super::super::fixtures::*;
    use super::*;

    #[test]
    fn pre_sets_are_inverted_post_sets() {
        let net = FiniteNetwork::new(vec![
            entry(1, &[1.0, 1.0, 1.0], &[(1, &[2, 3]), (2, &[3])]),
            entry(2, &[1.0, 1.0], &[(1, &[3])]),
            entry(3, &[1.0], &[]),
        ])
        .unwrap();
        let pre = |i, k| net.pre(NeuronId(i), k).collect::<Vec<_>>();
        assert_eq!(pre(3, 1), ids(&[1, 2]));
        assert_eq!(pre(3, 2), ids(&[1]));
        assert_eq!(pre(2, 1), ids(&[1]));
        assert!(pre(1, 1).is_empty());
        assert_eq!(net.max_synapse_threshold(NeuronId(3)), 2);
    }

    #[test]
    fn unknown_target_rejected() {
        let err = FiniteNetwork::new(vec![entry(1, &[1.0, 1.0], &[(1, &[7])])]).unwrap_err();
        assert_eq!(err, ModelError::UnknownNeuron(NeuronId(7)));
    }

    #[test]
    fn duplicate_and_zero_threshold_rejected() {
        let dup = FiniteNetwork::new(vec![entry(1, &[1.0], &[]), entry(1, &[2.0], &[])]);
        assert_eq!(dup.unwrap_err(), ModelError::DuplicateNeuron(NeuronId(1)));
        let zero = FiniteNetwork::new(vec![entry(1, &[1.0], &[(0, &[2])]), entry(2, &[1.0], &[])]);
        assert_eq!(zero.unwrap_err(), ModelError::ZeroThresholdSynapse(NeuronId(1)));
    }

    #[test]
    fn entries_round_trip() {
        let net = FiniteNetwork::new(vec![
            entry(5, &[1.0, 0.5], &[(1, &[9])]),
            entry(9, &[2.0, 0.0, 3.0], &[(2, &[5])]),
        ])
        .unwrap();
        assert_eq!(FiniteNetwork::new(net.entries()).unwrap(), net);
    }
}
