//! Plain-text `key=value` snapshot of a controller.
//!
//! Floats are written with Rust's shortest round-trip formatting, so a
//! restored controller continues bit-for-bit where the original stopped.
//!
//! ```text
//! strategy=bayesian
//! priors=0.7,0.3
//! history_capacity=64
//! warmup_steps=5
//! epsilon=1e-12
//! gamma0=1.0
//! tau=0.003
//! losses=2
//! history.0=0.9,0.85
//! history.1=0.4,0.41
//! ```

use std::collections::BTreeMap;

use thiserror::Error;

use super::{Controller, ControllerConfig, ControllerError, DecaySchedule, LossHistory};

#[derive(Debug, Error)]
pub enum SnapshotError {
    #[error("line {line}: expected key=value")]
    Syntax { line: usize },
    #[error("missing key '{0}'")]
    Missing(String),
    #[error("key '{key}': cannot parse '{value}'")]
    Value { key: String, value: String },
    #[error("history {index} holds {len} values, capacity is {capacity}")]
    Overfull {
        index: usize,
        len: usize,
        capacity: usize,
    },
    #[error(transparent)]
    Controller(#[from] ControllerError),
}

fn join(values: impl Iterator<Item = f64>) -> String {
    values.map(|v| format!("{v:?}")).collect::<Vec<_>>().join(",")
}

fn parse_list(key: &str, raw: &str) -> Result<Vec<f64>, SnapshotError> {
    if raw.trim().is_empty() {
        return Ok(Vec::new());
    }
    raw.split(',')
        .map(|s| {
            s.trim().parse::<f64>().map_err(|_| SnapshotError::Value {
                key: key.to_string(),
                value: s.to_string(),
            })
        })
        .collect()
}

fn parse_scalar<T: std::str::FromStr>(
    map: &BTreeMap<String, String>,
    key: &str,
) -> Result<T, SnapshotError> {
    let raw = map
        .get(key)
        .ok_or_else(|| SnapshotError::Missing(key.to_string()))?;
    raw.trim().parse().map_err(|_| SnapshotError::Value {
        key: key.to_string(),
        value: raw.clone(),
    })
}

impl Controller {
    pub fn to_snapshot(&self) -> String {
        let c = &self.config;
        let mut out = String::new();
        out.push_str(&format!("strategy={}\n", c.strategy));
        if let Some(p) = &c.priors {
            out.push_str(&format!("priors={}\n", join(p.iter().copied())));
        }
        out.push_str(&format!("history_capacity={}\n", c.history_capacity));
        out.push_str(&format!("warmup_steps={}\n", c.warmup_steps));
        out.push_str(&format!("epsilon={:?}\n", c.epsilon));
        out.push_str(&format!("gamma0={:?}\n", c.decay.gamma0));
        out.push_str(&format!("tau={:?}\n", c.decay.tau));
        out.push_str(&format!("losses={}\n", self.histories.len()));
        for (i, h) in self.histories.iter().enumerate() {
            out.push_str(&format!("history.{i}={}\n", join(h.iter())));
        }
        out
    }

    pub fn from_snapshot(text: &str) -> Result<Self, SnapshotError> {
        let mut map = BTreeMap::new();
        for (i, line) in text.lines().enumerate() {
            let line = line.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let (k, v) = line
                .split_once('=')
                .ok_or(SnapshotError::Syntax { line: i + 1 })?;
            map.insert(k.trim().to_string(), v.to_string());
        }

        let strategy = map
            .get("strategy")
            .ok_or_else(|| SnapshotError::Missing("strategy".into()))?
            .parse()?;
        let priors = match map.get("priors") {
            Some(raw) => Some(parse_list("priors", raw)?),
            None => None,
        };
        let config = ControllerConfig {
            strategy,
            priors,
            history_capacity: parse_scalar(&map, "history_capacity")?,
            warmup_steps: parse_scalar(&map, "warmup_steps")?,
            epsilon: parse_scalar(&map, "epsilon")?,
            decay: DecaySchedule::new(parse_scalar(&map, "gamma0")?, parse_scalar(&map, "tau")?)?,
        };
        let n: usize = parse_scalar(&map, "losses")?;
        let mut controller = Controller::new(config, n)?;
        for index in 0..n {
            let key = format!("history.{index}");
            let raw = map
                .get(&key)
                .ok_or_else(|| SnapshotError::Missing(key.clone()))?;
            let values = parse_list(&key, raw)?;
            let capacity = controller.config.history_capacity;
            if values.len() > capacity {
                return Err(SnapshotError::Overfull {
                    index,
                    len: values.len(),
                    capacity,
                });
            }
            let mut h = LossHistory::new(capacity)?;
            for v in values {
                h.push(v)?;
            }
            controller.histories[index] = h;
        }
        Ok(controller)
    }
}
