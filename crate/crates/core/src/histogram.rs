use std::collections::BTreeMap;
use std::io::{self, Write};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::model::Potential;

/// Accepted deviation of a probability histogram's total from 1.
pub const NORMALIZATION_TOLERANCE: f64 = 1e-9;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum HistogramError {
    #[error("histogram weights sum to {total}, expected 1")]
    NotNormalized { total: f64 },
    #[error("histogram has no mass")]
    Empty,
}

/// Probability histogram over potentials.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct Histogram {
    probabilities: BTreeMap<Potential, f64>,
}

impl Histogram {
    /// Checks that the given probabilities are non-negative and sum to 1.
    pub fn from_probabilities(probabilities: BTreeMap<Potential, f64>) -> Result<Self, HistogramError> {
        let total: f64 = probabilities.values().sum();
        if probabilities.values().any(|p| !(*p >= 0.0)) || (total - 1.0).abs() > NORMALIZATION_TOLERANCE {
            return Err(HistogramError::NotNormalized { total });
        }
        Ok(Histogram { probabilities })
    }

    pub fn from_counts(counts: &BTreeMap<Potential, u64>) -> Result<Self, HistogramError> {
        let n: u64 = counts.values().sum();
        if n == 0 {
            return Err(HistogramError::Empty);
        }
        Ok(Histogram {
            probabilities: counts.iter().map(|(&m, &c)| (m, c as f64 / n as f64)).collect(),
        })
    }

    pub fn from_weights(weights: &BTreeMap<Potential, f64>) -> Result<Self, HistogramError> {
        let total: f64 = weights.values().sum();
        if !(total > 0.0) {
            return Err(HistogramError::Empty);
        }
        Ok(Histogram {
            probabilities: weights.iter().map(|(&m, &w)| (m, w / total)).collect(),
        })
    }

    /// `P(m) = (1 - ρ) ρ^m` for `m < support`.
    pub fn geometric_truncated(rho: f64, support: Potential) -> BTreeMap<Potential, f64> {
        (0..support).map(|m| (m, (1.0 - rho) * rho.powi(m as i32))).collect()
    }

    pub fn probabilities(&self) -> &BTreeMap<Potential, f64> {
        &self.probabilities
    }

    pub fn get(&self, m: Potential) -> f64 {
        self.probabilities.get(&m).copied().unwrap_or(0.0)
    }

    pub fn mean(&self) -> f64 {
        self.probabilities.iter().map(|(&m, &p)| m as f64 * p).sum()
    }

    fn total(&self) -> f64 {
        self.probabilities.values().sum()
    }

    /// Writes `potential,probability` rows.
    pub fn write_csv<W: Write>(&self, mut out: W) -> io::Result<()> {
        writeln!(out, "potential,probability")?;
        for (m, p) in &self.probabilities {
            writeln!(out, "{m},{p:.16e}")?;
        }
        Ok(())
    }
}

/// Writes `potential,count` rows.
pub fn write_counts_csv<W: Write>(counts: &BTreeMap<Potential, u64>, mut out: W) -> io::Result<()> {
    writeln!(out, "potential,count")?;
    for (m, c) in counts {
        writeln!(out, "{m},{c}")?;
    }
    Ok(())
}

/// Total variation distance `½ Σ_m |h1(m) − h2(m)|`.
pub fn tv_distance(h1: &Histogram, h2: &Histogram) -> Result<f64, HistogramError> {
    for h in [h1, h2] {
        let total = h.total();
        if (total - 1.0).abs() > NORMALIZATION_TOLERANCE {
            return Err(HistogramError::NotNormalized { total });
        }
    }
    let mut sum = 0.0;
    for (m, p) in &h1.probabilities {
        sum += (p - h2.get(*m)).abs();
    }
    for (m, q) in &h2.probabilities {
        if !h1.probabilities.contains_key(m) {
            sum += q;
        }
    }
    Ok((0.5 * sum).min(1.0))
}

/// Total variation distance to the untruncated geometric law
/// `(1 − ρ) ρ^m`, counting the reference mass outside `h`'s support.
pub fn tv_to_geometric(h: &Histogram, rho: f64) -> f64 {
    let mut sum = 0.0;
    let mut covered = 0.0;
    for (&m, &p) in &h.probabilities {
        let q = (1.0 - rho) * rho.powi(m as i32);
        covered += q;
        sum += (p - q).abs();
    }
    0.5 * (sum + (1.0 - covered).max(0.0))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn h(pairs: &[(u64, f64)]) -> Histogram {
        Histogram::from_probabilities(pairs.iter().copied().collect()).unwrap()
    }

    #[test]
    fn tv_examples() {
        let a = h(&[(0, 0.25), (3, 0.75)]);
        assert_eq!(tv_distance(&a, &a).unwrap(), 0.0);
        assert_eq!(tv_distance(&h(&[(0, 1.0)]), &h(&[(1, 0.5), (2, 0.5)])).unwrap(), 1.0);
        assert_eq!(tv_distance(&h(&[(0, 1.0)]), &h(&[(0, 0.5), (1, 0.5)])).unwrap(), 0.5);
    }

    #[test]
    fn not_normalized_rejected() {
        let err = Histogram::from_probabilities([(0, 0.5)].into_iter().collect()).unwrap_err();
        assert_eq!(err, HistogramError::NotNormalized { total: 0.5 });
        assert_eq!(Histogram::from_counts(&BTreeMap::new()).unwrap_err(), HistogramError::Empty);
    }

    #[test]
    fn geometric_reference() {
        let exact = h(&[(0, 0.5), (1, 0.25), (2, 0.25)]);
        // reference puts 0.125 at 2 and 0.125 beyond
        assert!((tv_to_geometric(&exact, 0.5) - 0.125).abs() < 1e-15);
        let counts = BTreeMap::from([(0, 2), (1, 1), (2, 1)]);
        assert_eq!(Histogram::from_counts(&counts).unwrap(), exact);
    }

    #[test]
    fn csv_layout() {
        let mut buf = Vec::new();
        h(&[(0, 0.5), (2, 0.5)]).write_csv(&mut buf).unwrap();
        assert_eq!(
            String::from_utf8(buf).unwrap(),
            "potential,probability\n0,5.0000000000000000e-1\n2,5.0000000000000000e-1\n"
        );
    }
}
