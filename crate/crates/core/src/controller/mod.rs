//! Loss-history memory and adaptive weighting of multiple losses.
//!
//! A [`Controller`] keeps one bounded [`LossHistory`] per base loss. On every
//! [`Controller::step`] it records the new loss values, derives simplex
//! weights from the normalized histories with the configured [`Strategy`],
//! and fuses the losses into a single scalar together with an exponentially
//! decayed auxiliary term.
//!
//! Weights and the decay factor are plain numbers computed from recorded
//! scalars. Callers must treat them as constants when differentiating the
//! fused objective.

mod history;
mod snapshot;
pub mod stats;

use std::fmt;
use std::ops::Index;
use std::str::FromStr;

use thiserror::Error;

pub use history::LossHistory;
pub use snapshot::SnapshotError;
pub use stats::{bayesian_weights, mad_weights, normalize_history, variance_weights};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ControllerError {
    #[error("non-finite loss value {value}")]
    NonFiniteLoss { value: f64 },
    #[error("expected {expected} losses, got {got}")]
    LossCountMismatch { expected: usize, got: usize },
    #[error("history needs at least 2 values, has {len}")]
    HistoryTooShort { len: usize },
    #[error("at least one loss is required")]
    NoLosses,
    #[error("invalid history capacity {0} (must be >= 2)")]
    InvalidCapacity(usize),
    #[error("priors must be non-negative and sum to 1: {0:?}")]
    InvalidPriors(Vec<f64>),
    #[error("epsilon must be positive and finite, got {0}")]
    InvalidEpsilon(f64),
    #[error("decay parameters must be finite and non-negative (gamma0={gamma0}, tau={tau})")]
    InvalidDecay { gamma0: f64, tau: f64 },
    #[error("unknown strategy '{0}' (expected variance, mad or bayesian)")]
    UnknownStrategy(String),
}

/// Non-negative weights summing to one.
#[derive(Debug, Clone, PartialEq)]
pub struct WeightVector(Vec<f64>);

impl WeightVector {
    pub const SUM_TOLERANCE: f64 = 1e-9;

    pub fn new(weights: Vec<f64>) -> Result<Self, ControllerError> {
        stats::validate_simplex(&weights)?;
        Ok(Self(weights))
    }

    pub fn uniform(n: usize) -> Self {
        Self(vec![1.0 / n as f64; n])
    }

    pub(crate) fn from_raw(weights: Vec<f64>) -> Self {
        debug_assert!(stats::validate_simplex(&weights).is_ok(), "{weights:?}");
        Self(weights)
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn iter(&self) -> std::slice::Iter<'_, f64> {
        self.0.iter()
    }

    pub fn into_vec(self) -> Vec<f64> {
        self.0
    }

    /// `sum_i w_i * x_i`.
    pub fn dot(&self, values: &[f64]) -> f64 {
        self.0.iter().zip(values).map(|(w, x)| w * x).sum()
    }
}

impl Index<usize> for WeightVector {
    type Output = f64;

    fn index(&self, i: usize) -> &f64 {
        &self.0[i]
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Strategy {
    /// Weight grows with the variance of the normalized history.
    Variance,
    /// Weight shrinks with the median absolute deviation.
    Mad,
    /// MAD likelihood combined with per-loss priors.
    Bayesian,
}

impl Strategy {
    pub const ALL: [Strategy; 3] = [Strategy::Variance, Strategy::Mad, Strategy::Bayesian];

    pub fn name(self) -> &'static str {
        match self {
            Strategy::Variance => "variance",
            Strategy::Mad => "mad",
            Strategy::Bayesian => "bayesian",
        }
    }
}

impl fmt::Display for Strategy {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Strategy {
    type Err = ControllerError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.trim().to_ascii_lowercase().as_str() {
            "variance" => Ok(Strategy::Variance),
            "mad" => Ok(Strategy::Mad),
            "bayesian" => Ok(Strategy::Bayesian),
            _ => Err(ControllerError::UnknownStrategy(s.to_string())),
        }
    }
}

/// `gamma(t) = gamma0 * exp(-tau * t)` with `t` the global optimizer step.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DecaySchedule {
    pub gamma0: f64,
    pub tau: f64,
}

impl DecaySchedule {
    pub fn new(gamma0: f64, tau: f64) -> Result<Self, ControllerError> {
        let s = Self { gamma0, tau };
        s.validate()?;
        Ok(s)
    }

    pub fn disabled() -> Self {
        Self {
            gamma0: 0.0,
            tau: 0.0,
        }
    }

    /// Rate at which `gamma` reaches `fraction * gamma0` after `steps` steps.
    pub fn tau_for(fraction: f64, steps: u64) -> f64 {
        if steps == 0 {
            0.0
        } else {
            -fraction.ln() / steps as f64
        }
    }

    pub fn gamma(&self, t: u64) -> f64 {
        self.gamma0 * (-self.tau * t as f64).exp()
    }

    fn validate(&self) -> Result<(), ControllerError> {
        let ok = self.gamma0.is_finite()
            && self.tau.is_finite()
            && self.gamma0 >= 0.0
            && self.tau >= 0.0;
        if ok {
            Ok(())
        } else {
            Err(ControllerError::InvalidDecay {
                gamma0: self.gamma0,
                tau: self.tau,
            })
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ControllerConfig {
    pub strategy: Strategy,
    /// Bayesian priors. `None` means uniform.
    pub priors: Option<Vec<f64>>,
    pub history_capacity: usize,
    /// Steps `t < warmup_steps` use uniform weights.
    pub warmup_steps: u64,
    pub epsilon: f64,
    pub decay: DecaySchedule,
}

impl Default for ControllerConfig {
    fn default() -> Self {
        Self {
            strategy: Strategy::Variance,
            priors: None,
            history_capacity: 64,
            warmup_steps: 5,
            epsilon: 1e-12,
            decay: DecaySchedule::disabled(),
        }
    }
}

impl ControllerConfig {
    pub fn with_strategy(strategy: Strategy) -> Self {
        Self {
            strategy,
            ..Self::default()
        }
    }

    fn validate(&self, n_losses: usize) -> Result<(), ControllerError> {
        if n_losses == 0 {
            return Err(ControllerError::NoLosses);
        }
        if self.history_capacity < 2 {
            return Err(ControllerError::InvalidCapacity(self.history_capacity));
        }
        if !(self.epsilon > 0.0 && self.epsilon.is_finite()) {
            return Err(ControllerError::InvalidEpsilon(self.epsilon));
        }
        if let Some(p) = &self.priors {
            if p.len() != n_losses {
                return Err(ControllerError::LossCountMismatch {
                    expected: n_losses,
                    got: p.len(),
                });
            }
            stats::validate_simplex(p)?;
        }
        self.decay.validate()
    }
}

/// Result of one fused step.
#[derive(Debug, Clone, PartialEq)]
pub struct StepOutput {
    pub total: f64,
    pub weights: WeightVector,
    pub gamma: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Controller {
    config: ControllerConfig,
    histories: Vec<LossHistory>,
}

impl Controller {
    pub fn new(config: ControllerConfig, n_losses: usize) -> Result<Self, ControllerError> {
        config.validate(n_losses)?;
        let histories = (0..n_losses)
            .map(|_| LossHistory::new(config.history_capacity))
            .collect::<Result<_, _>>()?;
        Ok(Self { config, histories })
    }

    pub fn config(&self) -> &ControllerConfig {
        &self.config
    }

    pub fn n_losses(&self) -> usize {
        self.histories.len()
    }

    pub fn histories(&self) -> &[LossHistory] {
        &self.histories
    }

    /// Uniform priors when none were configured.
    pub fn priors(&self) -> Vec<f64> {
        self.config
            .priors
            .clone()
            .unwrap_or_else(|| WeightVector::uniform(self.n_losses()).into_vec())
    }

    /// Weights implied by the current histories at step `t`, without
    /// recording anything.
    pub fn weights(&self, t: u64) -> Result<WeightVector, ControllerError> {
        let n = self.n_losses();
        let warming_up = t < self.config.warmup_steps;
        if warming_up || self.histories.iter().any(|h| h.len() < 2) {
            return Ok(WeightVector::uniform(n));
        }
        let normalized: Vec<Vec<f64>> = self
            .histories
            .iter()
            .map(|h| normalize_history(&h.to_vec()))
            .collect::<Result<_, _>>()?;
        let eps = self.config.epsilon;
        match self.config.strategy {
            Strategy::Variance => variance_weights(&normalized, eps),
            Strategy::Mad => mad_weights(&normalized, eps),
            Strategy::Bayesian => bayesian_weights(&normalized, &self.priors(), eps),
        }
    }

    /// Records `base_losses`, recomputes the weights and returns the fused
    /// total `sum_i w_i L_i + gamma(t) L_aux`.
    ///
    /// Nothing is recorded if any input is rejected.
    pub fn step(
        &mut self,
        base_losses: &[f64],
        aux_loss: Option<f64>,
        t: u64,
    ) -> Result<StepOutput, ControllerError> {
        if base_losses.len() != self.n_losses() {
            return Err(ControllerError::LossCountMismatch {
                expected: self.n_losses(),
                got: base_losses.len(),
            });
        }
        if let Some(&value) = base_losses
            .iter()
            .chain(aux_loss.iter())
            .find(|v| !v.is_finite())
        {
            return Err(ControllerError::NonFiniteLoss { value });
        }
        for (h, &l) in self.histories.iter_mut().zip(base_losses) {
            h.push(l)?;
        }
        let weights = self.weights(t)?;
        let gamma = self.config.decay.gamma(t);
        let mut total = weights.dot(base_losses);
        if let Some(aux) = aux_loss {
            total += gamma * aux;
        }
        Ok(StepOutput {
            total,
            weights,
            gamma,
        })
    }

    /// Drops all recorded values (e.g. to restart memory at an epoch
    /// boundary).
    pub fn reset(&mut self) {
        for h in &mut self.histories {
            h.clear();
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn single_loss_passes_through() {
        let mut c = Controller::new(ControllerConfig::default(), 1).unwrap();
        for t in 0..20 {
            let l = 1.0 / (t + 1) as f64;
            let out = c.step(&[l], None, t).unwrap();
            assert_eq!(out.weights.as_slice(), &[1.0]);
            assert_eq!(out.total, l);
        }
    }

    #[test]
    fn warmup_is_uniform() {
        let mut c = Controller::new(ControllerConfig::default(), 2).unwrap();
        let out = c.step(&[0.4, 0.6], None, 0).unwrap();
        assert_eq!(out.weights.as_slice(), &[0.5, 0.5]);
        assert_eq!(out.total, 0.5);
        assert_eq!(out.gamma, 0.0);
    }

    #[test]
    fn fused_total_matches_hand_sum() {
        let cfg = ControllerConfig {
            warmup_steps: 0,
            decay: DecaySchedule::new(1.0, 0.01).unwrap(),
            ..ControllerConfig::default()
        };
        let mut c = Controller::new(cfg, 2).unwrap();
        c.step(&[1.0, 0.5], None, 0).unwrap();
        c.step(&[0.8, 0.45], None, 1).unwrap();
        let (a, b, aux, t) = (0.5, 0.44, 0.3, 2);
        let expected_w = c.clone().step(&[a, b], None, t).unwrap().weights;
        let out = c.step(&[a, b], Some(aux), t).unwrap();
        assert_eq!(out.weights, expected_w);
        let g = (-0.01f64 * 2.0).exp();
        let expected = expected_w[0] * a + expected_w[1] * b + g * aux;
        assert!((out.total - expected).abs() < 1e-15);
        assert!((out.gamma - g).abs() < 1e-15);
    }

    #[test]
    fn rejects_bad_inputs_without_recording() {
        let mut c = Controller::new(ControllerConfig::default(), 2).unwrap();
        assert!(matches!(
            c.step(&[1.0], None, 0),
            Err(ControllerError::LossCountMismatch { .. })
        ));
        assert!(matches!(
            c.step(&[1.0, f64::NAN], None, 0),
            Err(ControllerError::NonFiniteLoss { .. })
        ));
        assert!(c.step(&[1.0, 1.0], Some(f64::INFINITY), 0).is_err());
        assert!(c.histories().iter().all(|h| h.is_empty()));
    }

    #[test]
    fn config_validation() {
        let bad_cap = ControllerConfig {
            history_capacity: 1,
            ..ControllerConfig::default()
        };
        assert!(Controller::new(bad_cap, 2).is_err());
        let bad_priors = ControllerConfig {
            strategy: Strategy::Bayesian,
            priors: Some(vec![0.6, 0.6]),
            ..ControllerConfig::default()
        };
        assert!(Controller::new(bad_priors, 2).is_err());
        let wrong_len = ControllerConfig {
            priors: Some(vec![1.0]),
            ..ControllerConfig::default()
        };
        assert!(Controller::new(wrong_len, 2).is_err());
        assert!(DecaySchedule::new(-1.0, 0.0).is_err());
        assert!(Controller::new(ControllerConfig::default(), 0).is_err());
    }

    #[test]
    fn decay_values() {
        let d = DecaySchedule::new(1.0, 0.01).unwrap();
        assert_eq!(d.gamma(0), 1.0);
        assert!((d.gamma(100) - 0.367_879_441_171_442_3).abs() < 1e-15);
        let off = DecaySchedule::new(0.0, 0.3).unwrap();
        assert_eq!(off.gamma(7), 0.0);
        let tau = DecaySchedule::tau_for(0.05, 1000);
        let d = DecaySchedule::new(2.0, tau).unwrap();
        assert!((d.gamma(1000) - 0.1).abs() < 1e-12);
    }

    #[test]
    fn strategy_parse() {
        assert_eq!("MAD".parse::<Strategy>().unwrap(), Strategy::Mad);
        assert!("softadapt".parse::<Strategy>().is_err());
        for s in Strategy::ALL {
            assert_eq!(s.name().parse::<Strategy>().unwrap(), s);
        }
    }

    #[test]
    fn controller_is_send() {
        fn assert_send<T: Send>() {}
        assert_send::<Controller>();
    }
}
