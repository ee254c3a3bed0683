use dmf_core::controller::stats::{mad, min_max_scale, normalize_history, population_variance, symlog};
use dmf_core::controller::{bayesian_weights, mad_weights, variance_weights, LossHistory};
use dmf_core::filter::{bilateral_filter, BilateralConfig, GrayImage};
use dmf_core::losses::{loss_value, soft_counts, FocalConfig, LossConfig};
use dmf_core::metrics::{evaluate, hard_counts};
use dmf_core::{ClassMask, Controller, ControllerConfig, DecaySchedule, LossKind, ProbabilityMap, Strategy as Weighting};
use proptest::prelude::*;

const TOL: f64 = 1e-12;

fn history() -> impl Strategy<Value = Vec<f64>> {
    prop::collection::vec(-50.0f64..50.0, 2..48)
}

fn unit_history(len: usize) -> impl Strategy<Value = Vec<f64>> {
    prop::collection::vec(0.0f64..1.0, len)
}

fn histories() -> impl Strategy<Value = Vec<Vec<f64>>> {
    (1usize..6, 2usize..40).prop_flat_map(|(n, len)| prop::collection::vec(unit_history(len), n))
}

fn assert_simplex(w: &[f64]) {
    assert!(w.iter().all(|&x| x >= 0.0), "{w:?}");
    assert!((w.iter().sum::<f64>() - 1.0).abs() <= 1e-9, "{w:?}");
}

/// Stretches `h` about its mean by `k`.
fn stretch(h: &[f64], k: f64) -> Vec<f64> {
    let m = h.iter().sum::<f64>() / h.len() as f64;
    h.iter().map(|&v| m + k * (v - m)).collect()
}

/// Logits, mask and class count for a small segmentation batch.
fn batch() -> impl Strategy<Value = (Vec<f64>, Vec<usize>, usize)> {
    (2usize..5, 2usize..40).prop_flat_map(|(c, n)| {
        (
            prop::collection::vec(-4.0f64..4.0, n * c),
            prop::collection::vec(0..c, n),
            Just(c),
        )
    })
}

fn all_losses(probs: &ProbabilityMap, mask: &ClassMask, cfg: &LossConfig) -> Vec<f64> {
    LossKind::ALL
        .iter()
        .map(|&k| loss_value(k, probs, mask, cfg).unwrap())
        .collect()
}

fn close(a: &[f64], b: &[f64], tol: f64) -> bool {
    a.len() == b.len() && a.iter().zip(b).all(|(x, y)| (x - y).abs() <= tol)
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(256))]

    #[test]
    fn weights_form_a_simplex(hs in histories(), strategy in 0usize..3) {
        let w = match strategy {
            0 => variance_weights(&hs, 1e-12).unwrap(),
            1 => mad_weights(&hs, 1e-12).unwrap(),
            _ => {
                let p = vec![1.0 / hs.len() as f64; hs.len()];
                bayesian_weights(&hs, &p, 1e-12).unwrap()
            }
        };
        assert_simplex(w.as_slice());
    }

    #[test]
    fn more_variance_never_lowers_weight(hs in histories(), k in 1.0f64..4.0, pick in 0usize..6) {
        let i = pick % hs.len();
        let before = variance_weights(&hs, 1e-12).unwrap();
        let mut wider = hs.clone();
        wider[i] = stretch(&hs[i], k);
        prop_assert!(population_variance(&wider[i]) >= population_variance(&hs[i]));
        let after = variance_weights(&wider, 1e-12).unwrap();
        prop_assert!(after[i] >= before[i] - TOL, "{} < {}", after[i], before[i]);
    }

    #[test]
    fn more_mad_never_raises_weight(hs in histories(), k in 1.0f64..4.0, pick in 0usize..6) {
        let i = pick % hs.len();
        let before = mad_weights(&hs, 1e-12).unwrap();
        let mut wider = hs.clone();
        wider[i] = stretch(&hs[i], k);
        prop_assert!(mad(&wider[i]) >= mad(&hs[i]) - TOL);
        let after = mad_weights(&wider, 1e-12).unwrap();
        prop_assert!(after[i] <= before[i] + TOL, "{} > {}", after[i], before[i]);
    }

    #[test]
    fn uniform_prior_posterior_is_mad(hs in histories()) {
        let p = vec![1.0 / hs.len() as f64; hs.len()];
        let b = bayesian_weights(&hs, &p, 1e-12).unwrap();
        let m = mad_weights(&hs, 1e-12).unwrap();
        prop_assert!(close(b.as_slice(), m.as_slice(), TOL));
    }

    #[test]
    fn min_max_ignores_positive_affine_maps(h in history(), a in 0.01f64..100.0, b in -100.0f64..100.0) {
        let base = min_max_scale(&h);
        let moved: Vec<f64> = h.iter().map(|&v| a * v + b).collect();
        prop_assert!(close(&base, &min_max_scale(&moved), 1e-9));
    }

    #[test]
    fn symlog_is_odd(x in -1e12f64..1e12) {
        prop_assert_eq!(symlog(-x), -symlog(x));
    }

    #[test]
    fn normalization_preserves_order(h in history()) {
        let n = normalize_history(&h).unwrap();
        prop_assert!(n.iter().all(|&v| (0.0..=1.0).contains(&v)));
        for i in 0..h.len() {
            for j in 0..h.len() {
                if h[i] < h[j] {
                    prop_assert!(n[i] <= n[j]);
                }
            }
        }
    }

    #[test]
    fn history_stays_bounded(cap in 2usize..16, values in prop::collection::vec(-5.0f64..5.0, 0..64)) {
        let mut h = LossHistory::new(cap).unwrap();
        for &v in &values {
            h.push(v).unwrap();
            prop_assert!(h.len() <= cap);
        }
        let keep = values.len().min(cap);
        prop_assert_eq!(h.to_vec(), values[values.len() - keep..].to_vec());
    }

    #[test]
    fn controller_is_deterministic(
        rows in prop::collection::vec(prop::collection::vec(0.0f64..3.0, 3), 1..80),
        strategy in 0usize..3,
    ) {
        let cfg = ControllerConfig {
            history_capacity: 16,
            ..ControllerConfig::with_strategy(Weighting::ALL[strategy])
        };
        let mut a = Controller::new(cfg.clone(), 3).unwrap();
        let mut b = Controller::new(cfg, 3).unwrap();
        for (t, row) in rows.iter().enumerate() {
            let x = a.step(row, None, t as u64).unwrap();
            let y = b.step(row, None, t as u64).unwrap();
            assert_simplex(x.weights.as_slice());
            prop_assert_eq!(x, y);
            prop_assert!(a.histories().iter().all(|h| h.len() <= 16));
        }
    }

    #[test]
    fn decay_is_non_increasing(g0 in 0.0f64..10.0, tau in 0.0f64..1.0, t in 0u64..10_000) {
        let d = DecaySchedule::new(g0, tau).unwrap();
        prop_assert_eq!(d.gamma(0), g0);
        prop_assert!(d.gamma(t + 1) <= d.gamma(t));
    }

    #[test]
    fn losses_ignore_pixel_order((logits, labels, c) in batch(), seed in any::<u64>()) {
        let n = labels.len();
        let mut order: Vec<usize> = (0..n).collect();
        // Deterministic shuffle from the seed.
        let mut s = seed;
        for i in (1..n).rev() {
            s = s.wrapping_mul(6364136223846793005).wrapping_add(1442695040888963407);
            order.swap(i, (s >> 33) as usize % (i + 1));
        }
        let cfg = LossConfig::default();
        let probs = ProbabilityMap::from_logits(&logits, c).unwrap();
        let mask = ClassMask::new(labels.clone(), c).unwrap();
        let shuffled_logits: Vec<f64> = order.iter().flat_map(|&i| logits[i * c..(i + 1) * c].to_vec()).collect();
        let shuffled_mask = ClassMask::new(order.iter().map(|&i| labels[i]).collect(), c).unwrap();
        let shuffled_probs = ProbabilityMap::from_logits(&shuffled_logits, c).unwrap();
        prop_assert!(close(&all_losses(&probs, &mask, &cfg), &all_losses(&shuffled_probs, &shuffled_mask, &cfg), TOL));

        let m1 = evaluate(&hard_counts(&probs, &mask).unwrap(), &mask).unwrap();
        let m2 = evaluate(&hard_counts(&shuffled_probs, &shuffled_mask).unwrap(), &shuffled_mask).unwrap();
        prop_assert_eq!(m1, m2);
    }

    #[test]
    fn losses_ignore_class_labels((logits, labels, c) in batch(), shift in 1usize..4, alpha in prop::collection::vec(0.1f64..2.0, 4)) {
        // Relabel class k as (k + shift) mod c everywhere.
        let perm = |k: usize| (k + shift) % c;
        let n = labels.len();
        let mut moved_logits = vec![0.0; logits.len()];
        for i in 0..n {
            for k in 0..c {
                moved_logits[i * c + perm(k)] = logits[i * c + k];
            }
        }
        let mut moved_alpha = vec![0.0; c];
        for k in 0..c {
            moved_alpha[perm(k)] = alpha[k];
        }
        let cfg = |a: Vec<f64>| LossConfig {
            focal: FocalConfig { alpha: Some(a), gamma: 2.0 },
            ..LossConfig::default()
        };
        let mask = ClassMask::new(labels.clone(), c).unwrap();
        let moved_mask = ClassMask::new(labels.iter().map(|&l| perm(l)).collect(), c).unwrap();
        let a = all_losses(&ProbabilityMap::from_logits(&logits, c).unwrap(), &mask, &cfg(alpha[..c].to_vec()));
        let b = all_losses(&ProbabilityMap::from_logits(&moved_logits, c).unwrap(), &moved_mask, &cfg(moved_alpha));
        prop_assert!(close(&a, &b, TOL), "{a:?} vs {b:?}");
    }

    #[test]
    fn losses_are_non_negative((logits, labels, c) in batch()) {
        let probs = ProbabilityMap::from_logits(&logits, c).unwrap();
        let mask = ClassMask::new(labels, c).unwrap();
        for v in all_losses(&probs, &mask, &LossConfig::default()) {
            prop_assert!(v >= 0.0);
        }
        let counts = soft_counts(&probs, &mask).unwrap();
        for (k, &count) in mask.class_counts().iter().enumerate() {
            prop_assert!((counts.tp[k] + counts.fn_[k] - count as f64).abs() < 1e-9);
        }
    }

    #[test]
    fn hard_counts_partition_pixels((logits, labels, c) in batch()) {
        let probs = ProbabilityMap::from_logits(&logits, c).unwrap();
        let mask = ClassMask::new(labels, c).unwrap();
        let hc = hard_counts(&probs, &mask).unwrap();
        let n = mask.n_pixels() as u64;
        for k in &hc.per_class {
            prop_assert_eq!(k.tp + k.fp + k.fn_ + k.tn, n);
        }
        prop_assert_eq!(hc.per_class.iter().map(|k| k.tp + k.fp).sum::<u64>(), n);
        let report = evaluate(&hc, &mask).unwrap();
        for s in &report.per_class {
            prop_assert!((s.dice - s.f1).abs() < TOL);
            prop_assert!(s.dice >= s.iou - TOL);
        }
    }

    #[test]
    fn filter_commutes_with_mirroring(
        (w, h, pixels) in (1usize..12, 1usize..12).prop_flat_map(|(w, h)| (Just(w), Just(h), prop::collection::vec(0.0f64..1.0, w * h))),
        sigma_s in 0.3f64..3.0,
        sigma_r in 0.02f64..2.0,
    ) {
        let img = GrayImage::new(w, h, pixels).unwrap();
        let cfg = BilateralConfig::new(sigma_s, sigma_r).unwrap();
        let a = bilateral_filter(&img.mirrored_horizontally(), &cfg).unwrap();
        let b = bilateral_filter(&img, &cfg).unwrap().mirrored_horizontally();
        prop_assert!(close(a.pixels(), b.pixels(), TOL));
        let (lo, hi) = img.min_max();
        prop_assert!(a.pixels().iter().all(|&p| p >= lo - TOL && p <= hi + TOL));
    }
}
