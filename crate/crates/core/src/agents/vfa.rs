use std::hash::{Hash, Hasher};

use super::features::Features;
use super::AgentError;

/// Threshold below which trace entries are dropped.
pub const TRACE_EPSILON: f64 = 1e-8;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TraceKind {
    Accumulating,
    Replacing,
}

/// Linear value function over sparse features, one weight block per action.
/// State-value functions use a single action.
#[derive(Debug, Clone, PartialEq)]
pub struct LinearVfa {
    pub weights: Vec<f64>,
    num_features: usize,
    num_actions: usize,
}

impl LinearVfa {
    pub fn zeros(num_features: usize, num_actions: usize) -> Self {
        LinearVfa { weights: vec![0.0; num_features * num_actions], num_features, num_actions }
    }

    pub fn num_features(&self) -> usize {
        self.num_features
    }

    pub fn num_actions(&self) -> usize {
        self.num_actions
    }

    pub fn index(&self, feature: usize, action: usize) -> usize {
        action * self.num_features + feature
    }

    pub fn value(&self, phi: &Features, action: usize) -> f64 {
        let base = action * self.num_features;
        phi.iter().map(|(i, v)| self.weights[base + i] * v).sum()
    }

    pub fn values(&self, phi: &Features) -> Vec<f64> {
        (0..self.num_actions).map(|a| self.value(phi, a)).collect()
    }

    pub fn max_value(&self, phi: &Features) -> f64 {
        self.values(phi).into_iter().fold(f64::NEG_INFINITY, f64::max)
    }

    /// `theta += scale * e`.
    pub fn add_trace(&mut self, e: &EligibilityTrace, scale: f64) {
        for &i in &e.active {
            self.weights[i] += scale * e.values[i];
        }
    }

    /// `theta[feature, action] += scale * phi`.
    pub fn add_features(&mut self, phi: &Features, action: usize, scale: f64) {
        let base = action * self.num_features;
        for (i, v) in phi.iter() {
            self.weights[base + i] += scale * v;
        }
    }

    /// Fails if any of the given weights is NaN or infinite.
    pub fn check_finite<I: IntoIterator<Item = usize>>(&self, indices: I) -> Result<(), AgentError> {
        for i in indices {
            if !self.weights[i].is_finite() {
                return Err(AgentError::NonFinite(format!("weight {i} = {}", self.weights[i])));
            }
        }
        Ok(())
    }

    pub fn check_all_finite(&self) -> Result<(), AgentError> {
        self.check_finite(0..self.weights.len())
    }

    /// Hash of the exact weight bits.
    pub fn digest(&self) -> u64 {
        digest_bits(&self.weights)
    }
}

pub fn digest_bits(xs: &[f64]) -> u64 {
    let mut h = std::collections::hash_map::DefaultHasher::new();
    for x in xs {
        x.to_bits().hash(&mut h);
    }
    h.finish()
}

/// Sparse eligibility trace aligned with a weight vector.
#[derive(Debug, Clone, PartialEq)]
pub struct EligibilityTrace {
    values: Vec<f64>,
    active: Vec<usize>,
    present: Vec<bool>,
}

impl EligibilityTrace {
    pub fn new(len: usize) -> Self {
        EligibilityTrace { values: vec![0.0; len], active: Vec::new(), present: vec![false; len] }
    }

    pub fn get(&self, i: usize) -> f64 {
        self.values[i]
    }

    pub fn active(&self) -> &[usize] {
        &self.active
    }

    pub fn clear(&mut self) {
        for &i in &self.active {
            self.values[i] = 0.0;
            self.present[i] = false;
        }
        self.active.clear();
    }

    /// `e *= factor`, dropping entries whose magnitude falls below [`TRACE_EPSILON`].
    pub fn decay(&mut self, factor: f64) {
        if factor == 0.0 {
            self.clear();
            return;
        }
        let (values, present) = (&mut self.values, &mut self.present);
        self.active.retain(|&i| {
            values[i] *= factor;
            if values[i].abs() < TRACE_EPSILON {
                values[i] = 0.0;
                present[i] = false;
                false
            } else {
                true
            }
        });
    }

    fn touch(&mut self, i: usize) {
        if !self.present[i] {
            self.present[i] = true;
            self.active.push(i);
        }
    }

    pub fn add(&mut self, i: usize, v: f64, kind: TraceKind) {
        self.touch(i);
        match kind {
            TraceKind::Accumulating => self.values[i] += v,
            TraceKind::Replacing => self.values[i] = v,
        }
    }

    /// `e += scale * phi` on the weight block of `action` of `vfa`.
    pub fn add_features(&mut self, vfa: &LinearVfa, phi: &Features, action: usize, scale: f64, kind: TraceKind) {
        for (i, v) in phi.iter() {
            self.add(vfa.index(i, action), scale * v, kind);
        }
    }

    /// `e . phi` restricted to the weight block of `action`.
    pub fn dot(&self, vfa: &LinearVfa, phi: &Features, action: usize) -> f64 {
        phi.iter().map(|(i, v)| self.values[vfa.index(i, action)] * v).sum()
    }

    pub fn scale(&mut self, factor: f64) {
        for &i in &self.active {
            self.values[i] *= factor;
        }
    }

    /// Dense copy, for tests and diagnostics.
    pub fn to_dense(&self) -> Vec<f64> {
        self.values.clone()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn decay_drops_small_entries() {
        let mut e = EligibilityTrace::new(4);
        e.add(1, 1.0, TraceKind::Accumulating);
        e.add(2, 1.5e-8, TraceKind::Accumulating);
        e.decay(0.5);
        assert_eq!(e.active(), &[1]);
        assert_eq!(e.get(1), 0.5);
        assert_eq!(e.get(2), 0.0);
        e.decay(0.0);
        assert!(e.active().is_empty());
    }

    #[test]
    fn replacing_sets_value() {
        let mut e = EligibilityTrace::new(2);
        e.add(0, 1.0, TraceKind::Replacing);
        e.add(0, 1.0, TraceKind::Replacing);
        assert_eq!(e.get(0), 1.0);
        e.add(0, 1.0, TraceKind::Accumulating);
        assert_eq!(e.get(0), 2.0);
    }

    #[test]
    fn non_finite_detected() {
        let mut v = LinearVfa::zeros(3, 1);
        v.weights[2] = f64::NAN;
        assert!(v.check_finite([0, 1]).is_ok());
        assert!(v.check_all_finite().is_err());
    }
}
