//! Delta-learning training loop: bias initialization, mini-batch Adam with a
//! warm-up/cosine schedule, best-validation selection and evaluation.

pub mod labels;
pub mod optim;

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::time::Instant;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::network::{Head, Model, NetworkInput};
use crate::system::Species;
use crate::units::CHEMICAL_ACCURACY_MEV;

pub use labels::{
    compute_delta_labels, init_charge_shifts, init_element_biases, BiasFit, DeltaLabel,
    LowLevelValues, Mode, Target,
};
pub use optim::{lr_schedule, smooth_l1, Adam};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainConfig {
    pub max_lr: f64,
    pub warmup_epochs: usize,
    pub cosine_epochs: usize,
    /// Total epochs; `None` runs exactly warm-up plus cosine.
    pub epochs: Option<usize>,
    pub batch_size: usize,
    /// Smooth-L1 threshold in eV.
    pub smooth_l1_delta: f64,
    pub seed: u64,
    pub deterministic: bool,
    pub target: Target,
    pub mode: Mode,
    /// Early-stopping patience in epochs, used only past the schedule horizon.
    pub patience: usize,
    /// Fit element biases and charge shifts on the training set before training.
    pub init_biases: bool,
    /// Epochs during which the EvNorm running statistics follow the batches;
    /// `None` means the warm-up. They stay fixed afterwards.
    pub stats_epochs: Option<usize>,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            max_lr: 5e-4,
            warmup_epochs: 100,
            cosine_epochs: 200,
            epochs: None,
            batch_size: 64,
            smooth_l1_delta: 1.0,
            seed: 0,
            deterministic: true,
            target: Target::TotalEnergy,
            mode: Mode::Delta,
            patience: 150,
            init_biases: true,
            stats_epochs: None,
        }
    }
}

impl TrainConfig {
    pub fn horizon(&self) -> usize {
        self.warmup_epochs + self.cosine_epochs
    }

    pub fn lr(&self, epoch: f64) -> f64 {
        lr_schedule(epoch, self.max_lr, self.warmup_epochs, self.cosine_epochs)
    }

    pub fn validate(&self) -> Result<()> {
        if self.batch_size == 0 {
            return Err(Error::Config("batch_size must be positive".into()));
        }
        if !(self.smooth_l1_delta > 0.0) {
            return Err(Error::Config("smooth_l1_delta must be positive".into()));
        }
        if !(self.max_lr >= 0.0) || self.horizon() == 0 {
            return Err(Error::Config(
                "need a non-negative max_lr and a nonempty schedule".into(),
            ));
        }
        Ok(())
    }
}

/// One featurized molecule with its label.
#[derive(Debug, Clone)]
pub struct Sample {
    pub id: String,
    pub input: NetworkInput,
    pub label: DeltaLabel,
}

/// Fits element biases by least squares on the training labels and, for the
/// energy head, the per-charge shifts. Only the charges seen become known.
pub fn init_biases(model: &mut Model, train: &[Sample], target: Target) -> Result<BiasFit> {
    let elements = model.config.elements.clone();
    let fit = if target.is_intensive() || model.config.head == Head::Fmo {
        // attention weights sum to one, so every element starts at the label mean
        let mean = train.iter().map(|s| s.label.delta).sum::<f64>() / train.len().max(1) as f64;
        BiasFit {
            biases: vec![mean; elements.len()],
            singular: false,
        }
    } else {
        let rows: Vec<(&[u32], f64)> = train
            .iter()
            .map(|s| (s.input.atomic_numbers.as_slice(), s.label.delta))
            .collect();
        init_element_biases(&rows, &elements)?
    };
    model.b_z_mut().copy_from_slice(&fit.biases);
    if model.config.head == Head::Energy {
        let rows: Vec<(&[u32], i32, f64)> = train
            .iter()
            .map(|s| {
                (
                    s.input.atomic_numbers.as_slice(),
                    s.input.charge,
                    s.label.delta,
                )
            })
            .collect();
        let shifts = init_charge_shifts(&rows, &elements, &fit.biases);
        let states = model.config.charge_states.clone();
        let b_q = model.b_q_mut().expect("energy head has charge shifts");
        for (i, q) in states.iter().enumerate() {
            b_q[i] = shifts.get(q).copied().unwrap_or(0.0);
        }
        model.known_charges = Some(shifts.keys().copied().collect());
    }
    Ok(fit)
}

struct SampleGrad {
    loss: f64,
    grads: Vec<f64>,
    observations: Vec<Vec<Vec<f64>>>,
}

fn sample_gradient(model: &Model, s: &Sample, delta: f64) -> Result<SampleGrad> {
    let pass = model.forward(&s.input)?;
    let (loss, dl) = smooth_l1(pass.value() - s.label.delta, delta);
    let grads = pass.tape.backward(pass.output, &[dl]).params;
    Ok(SampleGrad {
        loss,
        grads,
        observations: pass.norm_observations(s.input.num_atoms()),
    })
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct EpochMetrics {
    pub epoch: usize,
    pub lr: f64,
    pub train_loss: f64,
    pub val_mae_mev: f64,
    /// Validation MAE per species tag, `None` when the split has no such sample.
    pub val_mae_species: [Option<f64>; 4],
    pub wallclock_s: f64,
}

pub const METRICS_HEADER: &str = "epoch,lr,train_loss,val_mae_meV,val_mae_neutral,val_mae_radical,val_mae_cation,val_mae_anion,wallclock_s";

/// Metrics history as CSV; species columns without samples are left empty.
pub fn metrics_csv(history: &[EpochMetrics]) -> String {
    let mut out = String::from(METRICS_HEADER);
    out.push('\n');
    for m in history {
        let _ = write!(
            out,
            "{},{:e},{:e},{:e}",
            m.epoch, m.lr, m.train_loss, m.val_mae_mev
        );
        for s in &m.val_mae_species {
            match s {
                Some(v) => {
                    let _ = write!(out, ",{v:e}");
                }
                None => out.push(','),
            }
        }
        let _ = writeln!(out, ",{:.3}", m.wallclock_s);
    }
    out
}

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    /// Model at the epoch with the lowest validation MAE (training loss if no validation set).
    pub best: Model,
    pub best_epoch: usize,
    pub last: Model,
    pub history: Vec<EpochMetrics>,
    pub bias_fit: Option<BiasFit>,
    /// Training loss rose by more than 5% over some 20-epoch window after warm-up.
    pub descent_flagged: bool,
    pub steps: u64,
    /// Steps aborted because of a non-finite gradient.
    pub skipped_steps: u64,
}

/// Training gives up after this many aborted steps in a row.
pub const MAX_CONSECUTIVE_SKIPS: usize = 10;

/// Mini-batch training. Per-molecule gradients of one batch are computed in
/// parallel and summed in sample order, so results do not depend on threads.
pub fn train(
    cfg: &TrainConfig,
    mut model: Model,
    train: &[Sample],
    val: &[Sample],
    mut on_epoch: impl FnMut(&EpochMetrics, &Model),
) -> Result<TrainOutcome> {
    cfg.validate()?;
    if train.is_empty() {
        return Err(Error::InsufficientData("empty training set".into()));
    }
    let bias_fit = if cfg.init_biases {
        Some(init_biases(&mut model, train, cfg.target)?)
    } else {
        None
    };
    let epochs = cfg.epochs.unwrap_or(cfg.horizon());
    let stats_epochs = cfg.stats_epochs.unwrap_or(cfg.warmup_epochs);
    let mut adam = Adam::new(model.params.len());
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let start = Instant::now();
    let mut history: Vec<EpochMetrics> = Vec::new();
    let mut best = (f64::INFINITY, 0usize, model.clone());
    let mut order: Vec<usize> = (0..train.len()).collect();
    let batches = train.len().div_ceil(cfg.batch_size);
    let (mut skipped_steps, mut consecutive_skips) = (0u64, 0usize);
    for epoch in 0..epochs {
        order.shuffle(&mut rng);
        let mut loss_sum = 0.0;
        let mut lr = 0.0;
        for (b, chunk) in order.chunks(cfg.batch_size).enumerate() {
            lr = cfg.lr(epoch as f64 + (b + 1) as f64 / batches as f64);
            let results: Vec<Result<SampleGrad>> = chunk
                .par_iter()
                .map(|&i| sample_gradient(&model, &train[i], cfg.smooth_l1_delta))
                .collect();
            let mut grads = vec![0.0; model.params.len()];
            let mut observations = Vec::with_capacity(chunk.len());
            for r in results {
                let r = r?;
                loss_sum += r.loss;
                for (g, x) in grads.iter_mut().zip(&r.grads) {
                    *g += x;
                }
                observations.push(r.observations);
            }
            let scale = 1.0 / chunk.len() as f64;
            grads.iter_mut().for_each(|g| *g *= scale);
            match adam.update(&mut model.params, &grads, lr) {
                Ok(()) => {
                    if epoch < stats_epochs {
                        model.update_stats(&observations);
                    }
                    consecutive_skips = 0;
                }
                Err(Error::NonFiniteGradient(name)) => {
                    log::warn!(
                        "epoch {epoch} batch {b}: non-finite gradient in {name}, step skipped"
                    );
                    skipped_steps += 1;
                    consecutive_skips += 1;
                    if consecutive_skips >= MAX_CONSECUTIVE_SKIPS {
                        return Err(Error::NonFiniteGradient(name));
                    }
                }
                Err(e) => return Err(e),
            }
        }
        let train_loss = loss_sum / train.len() as f64;
        let (val_mae_mev, val_mae_species) = if val.is_empty() {
            (f64::NAN, [None; 4])
        } else {
            let e = evaluate(&model, val)?;
            (e.mae_mev, e.species_array())
        };
        let metrics = EpochMetrics {
            epoch,
            lr,
            train_loss,
            val_mae_mev,
            val_mae_species,
            wallclock_s: if cfg.deterministic {
                0.0
            } else {
                start.elapsed().as_secs_f64()
            },
        };
        log::info!("epoch {epoch} lr {lr:.3e} loss {train_loss:.5e} val {val_mae_mev:.3} meV");
        let score = if val.is_empty() {
            train_loss
        } else {
            val_mae_mev
        };
        if score < best.0 {
            best = (score, epoch, model.clone());
        }
        on_epoch(&metrics, &model);
        history.push(metrics);
        if epochs > cfg.horizon() && epoch >= cfg.horizon() && epoch - best.1 >= cfg.patience {
            log::info!("early stop at epoch {epoch}, best epoch {}", best.1);
            break;
        }
    }
    let descent_flagged = (cfg.warmup_epochs + 20..history.len())
        .any(|e| history[e].train_loss > 1.05 * history[e - 20].train_loss);
    if descent_flagged {
        log::warn!("training loss rose over a 20-epoch window after warm-up");
    }
    Ok(TrainOutcome {
        best: best.2,
        best_epoch: best.1,
        last: model,
        history,
        bias_fit,
        descent_flagged,
        steps: adam.step,
        skipped_steps,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Prediction {
    pub id: String,
    pub species: Species,
    /// Model output (the delta in delta mode).
    pub predicted: f64,
    pub y_low: f64,
    pub y_target: f64,
}

impl Prediction {
    /// Low-level value plus the learned correction.
    pub fn total(&self) -> f64 {
        self.y_low + self.predicted
    }

    pub fn error(&self) -> f64 {
        self.total() - self.y_target
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Evaluation {
    pub mae_mev: f64,
    /// MAE (meV) and count per species tag present.
    pub per_species: BTreeMap<Species, (f64, usize)>,
    /// Fraction of predictions with |error| strictly below chemical accuracy.
    pub within_chemical_accuracy: f64,
    pub predictions: Vec<Prediction>,
}

impl Evaluation {
    pub fn species_array(&self) -> [Option<f64>; 4] {
        Species::ALL.map(|s| self.per_species.get(&s).map(|v| v.0))
    }
}

pub fn predict_samples(model: &Model, samples: &[Sample]) -> Result<Vec<Prediction>> {
    samples
        .par_iter()
        .map(|s| {
            Ok(Prediction {
                id: s.id.clone(),
                species: s.label.species,
                predicted: model.predict(&s.input)?,
                y_low: s.label.y_low,
                y_target: s.label.y_target,
            })
        })
        .collect()
}

/// MAE statistics of finished predictions.
pub fn summarize(predictions: Vec<Prediction>) -> Evaluation {
    let n = predictions.len();
    let abs_mev: Vec<f64> = predictions
        .iter()
        .map(|p| p.error().abs() * 1000.0)
        .collect();
    let mae_mev = if n == 0 {
        f64::NAN
    } else {
        abs_mev.iter().sum::<f64>() / n as f64
    };
    let mut per: BTreeMap<Species, (f64, usize)> = BTreeMap::new();
    for (p, e) in predictions.iter().zip(&abs_mev) {
        let entry = per.entry(p.species).or_default();
        entry.0 += e;
        entry.1 += 1;
    }
    for v in per.values_mut() {
        v.0 /= v.1 as f64;
    }
    let within = abs_mev
        .iter()
        .filter(|&&e| e < CHEMICAL_ACCURACY_MEV)
        .count();
    Evaluation {
        mae_mev,
        per_species: per,
        within_chemical_accuracy: if n == 0 {
            f64::NAN
        } else {
            within as f64 / n as f64
        },
        predictions,
    }
}

pub fn evaluate(model: &Model, samples: &[Sample]) -> Result<Evaluation> {
    Ok(summarize(predict_samples(model, samples)?))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn pred(species: Species, err_ev: f64) -> Prediction {
        Prediction {
            id: String::new(),
            species,
            predicted: 1.0 + err_ev,
            y_low: -5.0,
            y_target: -4.0,
        }
    }

    #[test]
    fn perfect_predictions() {
        let e = summarize(vec![pred(Species::Neutral, 0.0), pred(Species::Anion, 0.0)]);
        assert_eq!(e.mae_mev, 0.0);
        assert_eq!(e.within_chemical_accuracy, 1.0);
    }

    #[test]
    fn chemical_accuracy_boundary_is_strict() {
        // build the error so that it is exactly 43.4 meV after the arithmetic
        let p = Prediction {
            id: String::new(),
            species: Species::Neutral,
            predicted: 0.0434,
            y_low: 0.0,
            y_target: 0.0,
        };
        assert_eq!(p.error() * 1000.0, CHEMICAL_ACCURACY_MEV);
        let e = summarize(vec![p]);
        assert_eq!(e.within_chemical_accuracy, 0.0);
    }

    #[test]
    fn mixed_errors_average_by_hand() {
        let e = summarize(vec![
            pred(Species::Neutral, 0.010),
            pred(Species::Neutral, -0.030),
            pred(Species::Cation, 0.100),
        ]);
        assert!((e.mae_mev - 140.0 / 3.0).abs() < 1e-9);
        assert!((e.per_species[&Species::Neutral].0 - 20.0).abs() < 1e-9);
        assert_eq!(e.per_species[&Species::Cation].1, 1);
        assert!((e.within_chemical_accuracy - 2.0 / 3.0).abs() < 1e-15);
        assert_eq!(e.species_array()[1], None);
    }

    #[test]
    fn default_config_matches_recipe() {
        let c = TrainConfig::default();
        assert_eq!(
            (c.max_lr, c.warmup_epochs, c.cosine_epochs, c.batch_size),
            (5e-4, 100, 200, 64)
        );
        assert_eq!(c.lr(100.0), 5e-4);
        assert_eq!(c.smooth_l1_delta, 1.0);
    }

    #[test]
    fn metrics_csv_layout() {
        let m = EpochMetrics {
            epoch: 3,
            lr: 1e-4,
            train_loss: 0.5,
            val_mae_mev: 12.0,
            val_mae_species: [Some(1.0), None, Some(2.0), None],
            wallclock_s: 0.0,
        };
        let csv = metrics_csv(&[m]);
        let lines: Vec<&str> = csv.lines().collect();
        assert_eq!(lines[0], METRICS_HEADER);
        assert_eq!(lines[1].split(',').count(), 9);
        assert!(lines[1].starts_with("3,1e-4,5e-1,1.2e1,1e0,,2e0,,"));
    }
}
