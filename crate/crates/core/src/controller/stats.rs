//! Pure statistics behind the weighting strategies.
//!
//! Every function here is side-effect free. Weight functions expect
//! histories that have already been passed through [`normalize_history`].

use super::{ControllerError, WeightVector};

/// Sign-preserving `log(1 + |x|)`.
pub fn symlog(x: f64) -> f64 {
    if x >= 0.0 {
        x.ln_1p()
    } else {
        -(-x).ln_1p()
    }
}

/// Rescales to `[0, 1]`. A constant sequence maps to all zeros.
pub fn min_max_scale(values: &[f64]) -> Vec<f64> {
    let (lo, hi) = values
        .iter()
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), &v| {
            (lo.min(v), hi.max(v))
        });
    let span = hi - lo;
    if span.is_nan() || span <= 0.0 {
        return vec![0.0; values.len()];
    }
    values.iter().map(|&v| (v - lo) / span).collect()
}

/// Symmetric log scaling followed by min-max scaling.
pub fn normalize_history(values: &[f64]) -> Result<Vec<f64>, ControllerError> {
    if values.len() < 2 {
        return Err(ControllerError::HistoryTooShort { len: values.len() });
    }
    let logged: Vec<f64> = values.iter().map(|&v| symlog(v)).collect();
    Ok(min_max_scale(&logged))
}

pub fn mean(values: &[f64]) -> f64 {
    values.iter().sum::<f64>() / values.len() as f64
}

/// Population variance (divides by `n`).
pub fn population_variance(values: &[f64]) -> f64 {
    let m = mean(values);
    values.iter().map(|&v| (v - m) * (v - m)).sum::<f64>() / values.len() as f64
}

/// Median; even lengths average the two central order statistics.
pub fn median(values: &[f64]) -> f64 {
    let mut sorted = values.to_vec();
    sorted.sort_by(f64::total_cmp);
    let n = sorted.len();
    if n % 2 == 1 {
        sorted[n / 2]
    } else {
        0.5 * (sorted[n / 2 - 1] + sorted[n / 2])
    }
}

/// Median absolute deviation from the median.
pub fn mad(values: &[f64]) -> f64 {
    let m = median(values);
    let dev: Vec<f64> = values.iter().map(|&v| (v - m).abs()).collect();
    median(&dev)
}

fn check_lengths<H: AsRef<[f64]>>(histories: &[H]) -> Result<(), ControllerError> {
    if histories.is_empty() {
        return Err(ControllerError::NoLosses);
    }
    for h in histories {
        let len = h.as_ref().len();
        if len < 2 {
            return Err(ControllerError::HistoryTooShort { len });
        }
    }
    Ok(())
}

/// Weights proportional to each history's variance.
///
/// When every variance is below `epsilon` the histories carry no preference
/// and the result is uniform.
pub fn variance_weights<H: AsRef<[f64]>>(
    histories: &[H],
    epsilon: f64,
) -> Result<WeightVector, ControllerError> {
    check_lengths(histories)?;
    let vars: Vec<f64> = histories
        .iter()
        .map(|h| population_variance(h.as_ref()))
        .collect();
    if vars.iter().all(|&v| v < epsilon) {
        return Ok(WeightVector::uniform(vars.len()));
    }
    let total: f64 = vars.iter().sum();
    Ok(WeightVector::from_raw(
        vars.into_iter().map(|v| v / total).collect(),
    ))
}

/// Weights proportional to `1 / (MAD + epsilon)`.
pub fn mad_weights<H: AsRef<[f64]>>(
    histories: &[H],
    epsilon: f64,
) -> Result<WeightVector, ControllerError> {
    check_lengths(histories)?;
    let mads: Vec<f64> = histories.iter().map(|h| mad(h.as_ref())).collect();
    if mads.iter().all(|&m| m < epsilon) {
        return Ok(WeightVector::uniform(mads.len()));
    }
    let inv: Vec<f64> = mads.iter().map(|&m| 1.0 / (m + epsilon)).collect();
    let total: f64 = inv.iter().sum();
    Ok(WeightVector::from_raw(
        inv.into_iter().map(|v| v / total).collect(),
    ))
}

/// Posterior weights `p_i / (MAD_i + epsilon)`, renormalized.
///
/// With no dispersion signal at all (every MAD below `epsilon`) the
/// posterior is the prior.
pub fn bayesian_weights<H: AsRef<[f64]>>(
    histories: &[H],
    priors: &[f64],
    epsilon: f64,
) -> Result<WeightVector, ControllerError> {
    check_lengths(histories)?;
    if priors.len() != histories.len() {
        return Err(ControllerError::LossCountMismatch {
            expected: histories.len(),
            got: priors.len(),
        });
    }
    validate_simplex(priors)?;
    let mads: Vec<f64> = histories.iter().map(|h| mad(h.as_ref())).collect();
    if mads.iter().all(|&m| m < epsilon) {
        return Ok(WeightVector::from_raw(priors.to_vec()));
    }
    let scores: Vec<f64> = mads
        .iter()
        .zip(priors)
        .map(|(&m, &p)| p / (m + epsilon))
        .collect();
    let total: f64 = scores.iter().sum();
    Ok(WeightVector::from_raw(
        scores.into_iter().map(|v| v / total).collect(),
    ))
}

pub(crate) fn validate_simplex(values: &[f64]) -> Result<(), ControllerError> {
    let sum: f64 = values.iter().sum();
    let ok = !values.is_empty()
        && values.iter().all(|&p| p.is_finite() && p >= 0.0)
        && (sum - 1.0).abs() <= WeightVector::SUM_TOLERANCE;
    if ok {
        Ok(())
    } else {
        Err(ControllerError::InvalidPriors(values.to_vec()))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::f64::consts::E;

    fn close(a: f64, b: f64) -> bool {
        (a - b).abs() < 1e-12
    }

    #[test]
    fn normalize_examples() {
        let out = normalize_history(&[0.0, E - 1.0]).unwrap();
        assert!(close(out[0], 0.0) && close(out[1], 1.0));

        assert_eq!(normalize_history(&[5.0, 5.0, 5.0]).unwrap(), vec![0.0; 3]);

        let out = normalize_history(&[-(E - 1.0), 0.0, E - 1.0]).unwrap();
        assert!(close(out[0], 0.0) && close(out[1], 0.5) && close(out[2], 1.0));
    }

    #[test]
    fn normalize_needs_two_values() {
        assert!(matches!(
            normalize_history(&[1.0]),
            Err(ControllerError::HistoryTooShort { len: 1 })
        ));
    }

    #[test]
    fn symlog_values() {
        assert!(close(symlog(E - 1.0), 1.0));
        assert_eq!(symlog(0.0), 0.0);
        assert_eq!(symlog(-3.5), -symlog(3.5));
    }

    #[test]
    fn median_conventions() {
        assert_eq!(median(&[3.0, 1.0, 2.0]), 2.0);
        assert_eq!(median(&[4.0, 1.0, 3.0, 2.0]), 2.5);
        assert_eq!(mad(&[1.0, 2.0, 3.0]), 1.0);
    }

    #[test]
    fn variance_examples() {
        // Population variance 1/6 for [0, 0.5, 1].
        assert!(close(population_variance(&[0.0, 0.5, 1.0]), 1.0 / 6.0));

        let w = variance_weights(&[vec![0.3; 3], vec![0.0, 0.5, 1.0]], 1e-12).unwrap();
        assert_eq!(w.as_slice(), &[0.0, 1.0]);

        let h = vec![0.1, 0.7, 0.2, 0.9];
        let w = variance_weights(&[h.clone(), h], 1e-12).unwrap();
        assert_eq!(w.as_slice(), &[0.5, 0.5]);
    }

    #[test]
    fn variance_proportional_split() {
        // Scaling a two-point history by s scales its variance by s^2, so
        // amplitudes 1, sqrt(2), sqrt(3) give variances in ratio 1:2:3.
        let hs: Vec<Vec<f64>> = [1.0f64, 2.0, 3.0]
            .iter()
            .map(|v| vec![0.0, v.sqrt()])
            .collect();
        let w = variance_weights(&hs, 1e-12).unwrap();
        let expect = [1.0 / 6.0, 1.0 / 3.0, 0.5];
        for (a, b) in w.as_slice().iter().zip(expect) {
            assert!(close(*a, b), "{a} vs {b}");
        }
    }

    #[test]
    fn variance_all_constant_is_uniform() {
        let w = variance_weights(&[vec![0.0; 4], vec![0.0; 4]], 1e-12).unwrap();
        assert_eq!(w.as_slice(), &[0.5, 0.5]);
    }

    #[test]
    fn mad_examples() {
        // MADs 1 and 2.
        let w = mad_weights(&[vec![1.0, 2.0, 3.0], vec![2.0, 4.0, 6.0]], 1e-12).unwrap();
        assert!(close(w[0], 2.0 / 3.0) && close(w[1], 1.0 / 3.0));

        let h = vec![0.2, 0.9, 0.4];
        let w = mad_weights(&[h.clone(), h.clone(), h], 1e-12).unwrap();
        assert!(w.iter().all(|&x| close(x, 1.0 / 3.0)));

        let w = mad_weights(&[vec![0.0; 3], vec![0.0; 3]], 1e-12).unwrap();
        assert_eq!(w.as_slice(), &[0.5, 0.5]);
    }

    #[test]
    fn mad_zero_dominates() {
        let w = mad_weights(&[vec![0.5; 3], vec![0.0, 0.5, 1.0]], 1e-12).unwrap();
        assert!(w[0] > 1.0 - 1e-9);
    }

    #[test]
    fn bayesian_examples() {
        let h = vec![0.0, 0.5, 1.0];
        let w = bayesian_weights(&[h.clone(), h.clone()], &[0.8, 0.2], 1e-12).unwrap();
        assert!(close(w[0], 0.8) && close(w[1], 0.2));

        let w = bayesian_weights(&[h, vec![0.0, 0.1, 1.0]], &[1.0, 0.0], 1e-12).unwrap();
        assert_eq!(w.as_slice(), &[1.0, 0.0]);

        let w = bayesian_weights(&[vec![1.0; 3], vec![1.0; 3]], &[1.0, 0.0], 1e-12).unwrap();
        assert_eq!(w.as_slice(), &[1.0, 0.0]);
    }

    #[test]
    fn bayesian_rejects_bad_priors() {
        let h = vec![0.0, 1.0];
        assert!(bayesian_weights(&[h.clone(), h.clone()], &[0.7, 0.7], 1e-12).is_err());
        assert!(bayesian_weights(&[h.clone(), h.clone()], &[1.2, -0.2], 1e-12).is_err());
        assert!(bayesian_weights(&[h.clone(), h], &[1.0], 1e-12).is_err());
    }
}
