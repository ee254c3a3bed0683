//! End-to-end demonstration on synthetic speckled segmentation scenes.
//!
//! [`train`] fits a [`model::PixelModel`] by plain gradient descent on the
//! fused objective, logging every step to a [`TraceLog`]. [`replay`]
//! recomputes weight trajectories offline from a trace's loss columns, and
//! [`compare`] runs every weighting strategy and auxiliary loss against the
//! fixed-weight baseline over several seeds.

pub mod config;
pub mod dataset;
pub mod model;
pub mod trace;

use std::fmt::Write as _;
use std::path::Path;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use thiserror::Error;

use crate::controller::{Controller, ControllerConfig, ControllerError, Strategy, WeightVector};
use crate::filter::bilateral_filter;
use crate::losses::{loss_gradient, loss_value, LossConfig, LossError, LossKind};
use crate::maps::{ClassMask, MapError, ProbabilityMap};
use crate::metrics::{evaluate_with, hard_counts, Scores};
use crate::pgm::{self, PgmError};

pub use config::{AuxLoss, ConfigError, RunConfig};
pub use dataset::{generate_dataset, generate_scene, SceneParams, SyntheticScene};
pub use model::PixelModel;
pub use trace::{TraceError, TraceLog, TraceRow};

#[derive(Debug, Error)]
pub enum HarnessError {
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error("training diverged at step {step}: '{quantity}' is not finite")]
    Diverged { step: u64, quantity: String },
    #[error(transparent)]
    Controller(#[from] ControllerError),
    #[error(transparent)]
    Loss(#[from] LossError),
    #[error(transparent)]
    Map(#[from] MapError),
    #[error(transparent)]
    Trace(#[from] TraceError),
    #[error(transparent)]
    Pgm(#[from] PgmError),
    #[error("trace has no rows")]
    EmptyTrace,
}

/// Features and ground truth for one scene, ready for the model.
#[derive(Debug, Clone)]
pub struct Sample {
    pub features: Vec<f64>,
    pub mask: ClassMask,
}

pub fn prepare(scene: &SyntheticScene, cfg: &RunConfig) -> Result<Sample, HarnessError> {
    let image = match &cfg.filter {
        Some(f) => bilateral_filter(&scene.image, f).map_err(|e| ConfigError::Invalid(e.to_string()))?,
        None => scene.image.clone(),
    };
    Ok(Sample {
        features: model::pixel_features(&image),
        mask: scene.mask.clone(),
    })
}

/// `sum_i w_i dL_i/dz + gamma dL_aux/dz` with respect to the logits `z`.
pub fn fused_logit_gradient(
    probs: &ProbabilityMap,
    mask: &ClassMask,
    base: &[LossKind],
    aux: Option<LossKind>,
    weights: &[f64],
    gamma: f64,
    losses: &LossConfig,
) -> Result<Vec<f64>, HarnessError> {
    let mut grad = vec![0.0; probs.as_slice().len()];
    let terms = base.iter().copied().zip(weights.iter().copied()).chain(aux.map(|k| (k, gamma)));
    for (kind, scale) in terms {
        if scale == 0.0 {
            continue;
        }
        for (acc, g) in grad.iter_mut().zip(loss_gradient(kind, probs, mask, losses)?) {
            *acc += scale * g;
        }
    }
    Ok(grad)
}

/// The fused objective at fixed weights, with its parameter gradient.
#[derive(Debug, Clone)]
pub struct FusedEvaluation {
    pub base_losses: Vec<f64>,
    pub aux_loss: Option<f64>,
    pub objective: f64,
    pub param_grad: Vec<f64>,
}

/// Evaluates `sum_i w_i L_i + gamma L_aux` on one batch. `weights` and
/// `gamma` are constants; only the model parameters are differentiated.
#[allow(clippy::too_many_arguments)]
pub fn fused_objective(
    model: &PixelModel,
    features: &[f64],
    mask: &ClassMask,
    base: &[LossKind],
    aux: Option<LossKind>,
    weights: &[f64],
    gamma: f64,
    losses: &LossConfig,
) -> Result<FusedEvaluation, HarnessError> {
    let probs = ProbabilityMap::from_logits(&model.logits(features), model.n_classes())?;
    let base_losses = base
        .iter()
        .map(|&k| loss_value(k, &probs, mask, losses))
        .collect::<Result<Vec<_>, _>>()?;
    let aux_loss = aux.map(|k| loss_value(k, &probs, mask, losses)).transpose()?;
    let objective = weights
        .iter()
        .zip(&base_losses)
        .map(|(w, l)| w * l)
        .sum::<f64>()
        + aux_loss.map_or(0.0, |a| gamma * a);
    let grad_logits = fused_logit_gradient(&probs, mask, base, aux, weights, gamma, losses)?;
    Ok(FusedEvaluation {
        base_losses,
        aux_loss,
        objective,
        param_grad: model.backward(features, &grad_logits),
    })
}

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    pub trace: TraceLog,
    pub model: PixelModel,
    /// Per-image averages over the held-out test split.
    pub test: Scores,
    pub validation: Scores,
}

struct Seeds {
    data: u64,
    init: u64,
    batches: u64,
}

fn derive_seeds(seed: u64) -> Seeds {
    let mut master = ChaCha8Rng::seed_from_u64(seed);
    Seeds {
        data: master.gen(),
        init: master.gen(),
        batches: master.gen(),
    }
}

fn check_finite<'a>(step: u64, values: impl IntoIterator<Item = (f64, &'a str)>) -> Result<(), HarnessError> {
    match values.into_iter().find(|(v, _)| !v.is_finite()) {
        Some((_, name)) => Err(HarnessError::Diverged {
            step,
            quantity: name.to_string(),
        }),
        None => Ok(()),
    }
}

/// Mean of per-image scores.
pub fn evaluate_samples(model: &PixelModel, samples: &[Sample], losses: &LossConfig) -> Result<Scores, HarnessError> {
    let mut scores = Vec::with_capacity(samples.len());
    for s in samples {
        let probs = ProbabilityMap::from_logits(&model.logits(&s.features), model.n_classes())?;
        let counts = hard_counts(&probs, &s.mask)?;
        scores.push(evaluate_with(&counts, &s.mask, losses.class_weight_mode)?.summary);
    }
    Ok(Scores::mean(&scores))
}

fn batch_of(samples: &[Sample], idx: &[usize]) -> Result<(Vec<f64>, ClassMask), HarnessError> {
    let features = idx.iter().flat_map(|&i| samples[i].features.iter().copied()).collect();
    let mask = ClassMask::concat(idx.iter().map(|&i| &samples[i].mask))?;
    Ok((features, mask))
}

pub fn train(cfg: &RunConfig) -> Result<TrainOutcome, HarnessError> {
    cfg.validate()?;
    let seeds = derive_seeds(cfg.seed);
    let scenes = generate_dataset(cfg.scenes, seeds.data, &cfg.scene);
    let samples = scenes
        .iter()
        .map(|s| prepare(s, cfg))
        .collect::<Result<Vec<_>, _>>()?;
    let (n_train, n_val, _) = cfg.split_counts();
    let (train_set, rest) = samples.split_at(n_train);
    let (val_set, test_set) = rest.split_at(n_val);

    let n = cfg.base_losses.len();
    let aux = cfg.aux.kind();
    let decay = cfg.decay();
    let mut controller = Controller::new(cfg.controller_config(), n)?;
    let mut model = PixelModel::new(2, seeds.init);
    let mut rng = ChaCha8Rng::seed_from_u64(seeds.batches);
    let mut order: Vec<usize> = Vec::new();
    let batch = cfg.batch_size.min(train_set.len());

    let names = cfg.base_losses.iter().map(|k| k.name().to_string()).collect();
    let mut trace = TraceLog::new(names);

    for t in 0..cfg.steps {
        if order.len() < batch {
            order = (0..train_set.len()).collect();
            order.shuffle(&mut rng);
        }
        let idx: Vec<usize> = order.drain(..batch).collect();
        let (features, mask) = batch_of(train_set, &idx)?;

        let logits = model.logits(&features);
        check_finite(t, logits.iter().map(|&z| (z, "logits")))?;
        let probs = ProbabilityMap::from_logits(&logits, model.n_classes())?;
        let base_values = cfg
            .base_losses
            .iter()
            .map(|&k| loss_value(k, &probs, &mask, &cfg.losses))
            .collect::<Result<Vec<_>, _>>()?;
        let aux_value = aux.map(|k| loss_value(k, &probs, &mask, &cfg.losses)).transpose()?;
        let named = base_values.iter().zip(&cfg.base_losses).map(|(&v, k)| (v, k.name()));
        let aux_named = aux_value.zip(aux.map(|k| k.name()));
        check_finite(t, named.chain(aux_named))?;
        // The controller sees exactly what the trace records.
        let logged: Vec<f64> = base_values.iter().map(|&v| trace::quantize9(v)).collect();

        let (weights, gamma, total) = if cfg.fixed_weights {
            let w = WeightVector::uniform(n);
            let gamma = decay.gamma(t);
            let total = w.dot(&logged) + aux_value.map_or(0.0, |a| gamma * a);
            (w, gamma, total)
        } else {
            let out = controller.step(&logged, aux_value, t)?;
            (out.weights, out.gamma, out.total)
        };

        let grad_logits = fused_logit_gradient(&probs, &mask, &cfg.base_losses, aux, weights.as_slice(), gamma, &cfg.losses)?;
        model.descend(&model.backward(&features, &grad_logits), cfg.learning_rate);

        trace.push(TraceRow {
            step: t,
            losses: logged,
            weights: weights.into_vec(),
            gamma,
            total,
        });
    }

    Ok(TrainOutcome {
        trace,
        test: evaluate_samples(&model, test_set, &cfg.losses)?,
        validation: evaluate_samples(&model, val_set, &cfg.losses)?,
        model,
    })
}

/// Recomputes weights, decay and base-loss totals from recorded losses.
///
/// The auxiliary term is not part of the trace, so `total` here is the
/// weighted base-loss sum only.
pub fn replay(csv: &str, cfg: &ControllerConfig) -> Result<TraceLog, HarnessError> {
    let table = trace::parse_loss_table(csv)?;
    if table.steps.is_empty() {
        return Err(HarnessError::EmptyTrace);
    }
    let mut controller = Controller::new(cfg.clone(), table.names.len())?;
    let mut out = TraceLog::new(table.names);
    for (&step, losses) in table.steps.iter().zip(table.losses) {
        let s = controller.step(&losses, None, step)?;
        out.push(TraceRow {
            step,
            losses,
            weights: s.weights.into_vec(),
            gamma: s.gamma,
            total: s.total,
        });
    }
    Ok(out)
}

/// Writes `scene_<k>.pgm` / `mask_<k>.pgm` pairs.
pub fn export_dataset(scenes: &[SyntheticScene], dir: &Path) -> Result<(), HarnessError> {
    std::fs::create_dir_all(dir).map_err(PgmError::from)?;
    for (k, s) in scenes.iter().enumerate() {
        pgm::write_image(&s.image, dir.join(format!("scene_{k}.pgm")))?;
        pgm::mask_to_raster(&s.mask, s.image.width(), s.image.height())
            .write(dir.join(format!("mask_{k}.pgm")))?;
    }
    Ok(())
}

/// One configuration's results across seeds.
#[derive(Debug, Clone)]
pub struct ComparisonRow {
    pub aux: AuxLoss,
    /// `None` for the fixed-weight baseline.
    pub strategy: Option<Strategy>,
    pub per_seed: Vec<Scores>,
    pub mean: Scores,
    pub std: Scores,
}

impl ComparisonRow {
    pub fn label(&self) -> String {
        match self.strategy {
            Some(s) => format!("{s}+{}", self.aux),
            None => "fixed".into(),
        }
    }
}

#[derive(Debug, Clone)]
pub struct Comparison {
    pub seeds: Vec<u64>,
    pub rows: Vec<ComparisonRow>,
}

/// Every strategy with every auxiliary choice, then the fixed baseline.
pub fn comparison_configs(base: &RunConfig) -> Vec<RunConfig> {
    let mut out = Vec::new();
    for aux in AuxLoss::ALL {
        for strategy in Strategy::ALL {
            out.push(RunConfig {
                strategy,
                aux,
                fixed_weights: false,
                ..base.clone()
            });
        }
    }
    out.push(RunConfig {
        fixed_weights: true,
        aux: AuxLoss::None,
        ..base.clone()
    });
    out
}

/// Sample standard deviation (n - 1); zero for a single value.
fn sample_std(values: &[f64]) -> f64 {
    let n = values.len();
    if n < 2 {
        return 0.0;
    }
    let m = values.iter().sum::<f64>() / n as f64;
    (values.iter().map(|v| (v - m) * (v - m)).sum::<f64>() / (n - 1) as f64).sqrt()
}

pub fn summarize(cfg: &RunConfig, per_seed: Vec<Scores>) -> ComparisonRow {
    let mean = Scores::mean(&per_seed);
    let mut std = [0.0; 6];
    for (i, s) in std.iter_mut().enumerate() {
        let col: Vec<f64> = per_seed.iter().map(|p| p.as_array()[i]).collect();
        *s = sample_std(&col);
    }
    ComparisonRow {
        aux: cfg.aux,
        strategy: (!cfg.fixed_weights).then_some(cfg.strategy),
        per_seed,
        mean,
        std: Scores::from_array(std),
    }
}

/// Runs `configs` over `seeds`; the result order follows `configs`
/// regardless of scheduling.
pub fn run_grid(configs: &[RunConfig], seeds: &[u64]) -> Result<Comparison, HarnessError> {
    let jobs: Vec<(usize, u64)> = (0..configs.len())
        .flat_map(|c| seeds.iter().map(move |&s| (c, s)))
        .collect();
    let results = jobs
        .par_iter()
        .map(|&(c, seed)| {
            let cfg = RunConfig {
                seed,
                ..configs[c].clone()
            };
            train(&cfg).map(|o| o.test)
        })
        .collect::<Result<Vec<_>, _>>()?;
    let rows = configs
        .iter()
        .zip(results.chunks(seeds.len()))
        .map(|(cfg, chunk)| summarize(cfg, chunk.to_vec()))
        .collect();
    Ok(Comparison {
        seeds: seeds.to_vec(),
        rows,
    })
}

pub fn compare(base: &RunConfig, seeds: &[u64]) -> Result<Comparison, HarnessError> {
    run_grid(&comparison_configs(base), seeds)
}

impl Comparison {
    /// Row with the highest mean test dice (first one on ties).
    pub fn best_by_dice(&self) -> Option<&ComparisonRow> {
        self.rows
            .iter()
            .fold(None, |best: Option<&ComparisonRow>, r| match best {
                Some(b) if b.mean.dice >= r.mean.dice => Some(b),
                _ => Some(r),
            })
    }

    pub fn row(&self, label: &str) -> Option<&ComparisonRow> {
        self.rows.iter().find(|r| r.label() == label)
    }

    /// Percentages with `mean ± std`, one line per configuration.
    pub fn to_table(&self) -> String {
        let mut out = String::new();
        let _ = writeln!(out, "Results over {} seeds (test split, percent, mean ± std)", self.seeds.len());
        let _ = writeln!(
            out,
            "| Auxiliary Loss | Weighting Method | Dice | IoU | F1-score | Precision | Recall | CB-Dice |"
        );
        let _ = writeln!(out, "|---|---|---|---|---|---|---|---|");
        for r in &self.rows {
            let (aux, method) = match r.strategy {
                Some(s) => (aux_title(r.aux).to_string(), strategy_title(s).to_string()),
                None => ("Using Fixed Weights".to_string(), "Not Used".to_string()),
            };
            let cells: Vec<String> = r
                .mean
                .as_array()
                .iter()
                .zip(r.std.as_array())
                .map(|(m, s)| format!("{:.2} ± {:.2}", 100.0 * m, 100.0 * s))
                .collect();
            let _ = writeln!(out, "| {aux} | {method} | {} |", cells.join(" | "));
        }
        out
    }

    pub fn to_csv(&self) -> String {
        let mut out = String::from("config");
        for n in Scores::NAMES {
            let _ = write!(out, ",{n}_mean,{n}_std");
        }
        out.push('\n');
        for r in &self.rows {
            out.push_str(&r.label());
            for (m, s) in r.mean.as_array().iter().zip(r.std.as_array()) {
                let _ = write!(out, ",{},{}", trace::fmt9(*m), trace::fmt9(s));
            }
            out.push('\n');
        }
        out
    }
}

fn aux_title(aux: AuxLoss) -> &'static str {
    match aux {
        AuxLoss::Tversky => "Tversky Loss",
        AuxLoss::Focal => "Focal Loss",
        AuxLoss::CbDice => "CB-Dice Loss",
        AuxLoss::None => "No Auxiliary Loss",
    }
}

fn strategy_title(s: Strategy) -> &'static str {
    match s {
        Strategy::Variance => "Variance",
        Strategy::Mad => "MAD",
        Strategy::Bayesian => "Bayesian",
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn quick() -> RunConfig {
        RunConfig {
            steps: 60,
            scenes: 20,
            ..RunConfig::default()
        }
    }

    #[test]
    fn fixed_weights_stay_uniform() {
        let cfg = RunConfig {
            fixed_weights: true,
            ..quick()
        };
        let out = train(&cfg).unwrap();
        for r in &out.trace.rows {
            assert!(r.weights.iter().all(|&w| w == 1.0 / 3.0));
        }
    }

    #[test]
    fn zero_gamma0_zero_column() {
        let cfg = RunConfig {
            gamma0: 0.0,
            ..quick()
        };
        let out = train(&cfg).unwrap();
        assert!(out.trace.rows.iter().all(|r| r.gamma == 0.0));
    }

    #[test]
    fn steps_strictly_increase_and_weights_are_simplex() {
        let out = train(&quick()).unwrap();
        assert_eq!(out.trace.rows.len(), 60);
        for (i, r) in out.trace.rows.iter().enumerate() {
            assert_eq!(r.step, i as u64);
            let s: f64 = r.weights.iter().sum();
            assert!((s - 1.0).abs() < 1e-9 && r.weights.iter().all(|&w| w >= 0.0));
        }
    }

    #[test]
    fn reproducible() {
        let a = train(&quick()).unwrap();
        let b = train(&quick()).unwrap();
        assert_eq!(a.trace, b.trace);
        assert_eq!(a.test, b.test);
        assert_eq!(a.model, b.model);
    }

    #[test]
    fn divergence_names_first_bad_quantity() {
        assert!(check_finite(3, [(1.0, "ce"), (0.5, "dice")]).is_ok());
        match check_finite(7, [(1.0, "ce"), (f64::NAN, "iou"), (f64::INFINITY, "dice")]) {
            Err(HarnessError::Diverged { step: 7, quantity }) => assert_eq!(quantity, "iou"),
            other => panic!("expected divergence, got {other:?}"),
        }
    }

    #[test]
    fn huge_learning_rate_saturates_without_error() {
        // Clipped losses stay finite once the softmax saturates.
        let cfg = RunConfig {
            learning_rate: 1e300,
            aux: AuxLoss::None,
            ..quick()
        };
        let out = train(&cfg).unwrap();
        assert!(out.trace.rows.iter().all(|r| r.total.is_finite()));
    }

    #[test]
    fn constant_trace_replays_uniform() {
        let mut csv = String::from("step,loss_a,loss_b\n");
        for t in 0..30 {
            csv.push_str(&format!("{t},0.5,0.25\n"));
        }
        for s in Strategy::ALL {
            let out = replay(&csv, &ControllerConfig::with_strategy(s)).unwrap();
            for r in &out.rows {
                assert_eq!(r.weights, vec![0.5, 0.5]);
            }
        }
    }

    #[test]
    fn replay_rejects_empty() {
        assert!(matches!(
            replay("step,loss_a\n", &ControllerConfig::default()),
            Err(HarnessError::EmptyTrace)
        ));
    }

    #[test]
    fn comparison_grid_shape() {
        let configs = comparison_configs(&RunConfig::default());
        assert_eq!(configs.len(), 13);
        assert!(configs.last().unwrap().fixed_weights);
        let cmp = run_grid(&[quick(), RunConfig { fixed_weights: true, ..quick() }], &[1, 2]).unwrap();
        assert_eq!(cmp.rows.len(), 2);
        assert_eq!(cmp.rows[1].label(), "fixed");
        assert_eq!(cmp.rows[0].per_seed.len(), 2);
        let table = cmp.to_table();
        assert!(table.contains("| Dice | IoU | F1-score | Precision | Recall | CB-Dice |"));
        assert!(table.contains("Using Fixed Weights"));
    }
}
