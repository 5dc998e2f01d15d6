use super::{ModelError, ModelSpec, Neighbors, NeuronId, RateVector, Threshold};

/// Countable feedforward family on `I = {0, 1, 2, …}`.
///
/// Neuron `i` has rates `λ_i(k) = a0 · r^i · s(k)`. A threshold-`k` spike of
/// `i` increments the `w_k` neurons just below it, `{i-1, …, i-w_k} ∩ I`, so
/// `pre(i, k) = {i+1, …, i+w_k}` carries geometrically smaller rates.
#[derive(Clone, Debug, PartialEq)]
pub struct DecayingFeedforward {
    a0: f64,
    r: f64,
    s: RateVector,
    window: Vec<u64>,
}

/// Result of the closed-form sufficient-condition check for the family.
///
/// Because every margin scales with `a0 · r^i`, the per-neuron condition
/// reduces to one inequality: `incoming <= certified` where
/// `incoming = Σ_k s(k)·(r + r² + … + r^{w_k})` and
/// `certified = Σ_k s(k)·ρ^k`.
#[derive(Clone, Debug, PartialEq)]
pub struct ClosedFormCheck {
    pub rho: f64,
    pub incoming: f64,
    pub certified: f64,
    /// `r · Σ_k w_k s(k)`, an upper bound on `incoming`.
    pub incoming_upper: f64,
    pub passed: bool,
}

impl DecayingFeedforward {
    pub fn new(a0: f64, r: f64, s: Vec<f64>, window: Vec<u64>) -> Result<Self, ModelError> {
        if !(a0 > 0.0) || !a0.is_finite() {
            return Err(ModelError::InvalidParameter(format!("a0 must be positive, got {a0}")));
        }
        if !(r > 0.0 && r < 1.0) {
            return Err(ModelError::InvalidParameter(format!("r must lie in (0, 1), got {r}")));
        }
        if s.iter().any(|x| !(*x >= 0.0) || !x.is_finite()) {
            return Err(ModelError::InvalidParameter("s must be finite and non-negative".into()));
        }
        if s.first().copied().unwrap_or(0.0) <= 0.0 {
            return Err(ModelError::InvalidParameter("s(0) must be positive".into()));
        }
        Ok(DecayingFeedforward { a0, r, s: RateVector::new(s), window })
    }

    pub fn a0(&self) -> f64 {
        self.a0
    }

    pub fn r(&self) -> f64 {
        self.r
    }

    pub fn profile(&self) -> &RateVector {
        &self.s
    }

    pub fn window(&self) -> &[u64] {
        &self.window
    }

    pub fn width(&self, k: Threshold) -> u64 {
        if k == 0 {
            return 0;
        }
        self.window.get(k as usize - 1).copied().unwrap_or(0)
    }

    /// `a0 · r^i`.
    #[inline]
    pub fn amplitude(&self, i: NeuronId) -> f64 {
        self.a0 * self.r.powf(i.0 as f64)
    }

    pub fn post(&self, i: NeuronId, k: Threshold) -> Neighbors<'static> {
        let w = self.width(k);
        Neighbors::Range(i.0.saturating_sub(w)..i.0)
    }

    pub fn pre(&self, i: NeuronId, k: Threshold) -> Neighbors<'static> {
        let w = self.width(k);
        let lo = i.0.saturating_add(1);
        Neighbors::Range(lo..lo.saturating_add(w))
    }

    pub fn max_synapse_threshold(&self) -> Threshold {
        self.window.len() as Threshold
    }

    pub fn closed_form_check(&self) -> ClosedFormCheck {
        let rho = self.s.rate(0) / self.s.total();
        let mut incoming = 0.0;
        let mut incoming_upper = 0.0;
        let mut certified = 0.0;
        for k in 1..=self.s.max_threshold().max(self.max_synapse_threshold()) {
            let sk = self.s.rate(k);
            let w = self.width(k);
            // r + r^2 + ... + r^w
            let geometric = if w == 0 { 0.0 } else { self.r * (1.0 - self.r.powf(w as f64)) / (1.0 - self.r) };
            incoming += sk * geometric;
            incoming_upper += self.r * w as f64 * sk;
            certified += sk * rho.powi(k as i32);
        }
        ClosedFormCheck {
            rho,
            incoming,
            certified,
            incoming_upper,
            passed: incoming <= certified,
        }
    }
}

/// Builds the countable decaying feedforward model, rejecting parameter sets
/// that violate the per-neuron drift condition.
pub fn build_decaying_feedforward(
    a0: f64,
    r: f64,
    s: Vec<f64>,
    window: Vec<u64>,
) -> Result<ModelSpec, ModelError> {
    let family = DecayingFeedforward::new(a0, r, s, window)?;
    let check = family.closed_form_check();
    if !check.passed {
        return Err(ModelError::ConditionViolated(format!(
            "sum_k s(k)(r + ... + r^w_k) = {} exceeds sum_k s(k) rho^k = {} (rho = {})",
            check.incoming, check.certified, check.rho
        )));
    }
    Ok(ModelSpec::decaying_feedforward(family))
}

impl ModelSpec {
    pub fn build_decaying_feedforward(
        a0: f64,
        r: f64,
        s: Vec<f64>,
        window: Vec<u64>,
    ) -> Result<ModelSpec, ModelError> {
        build_decaying_feedforward(a0, r, s, window)
    }
}
