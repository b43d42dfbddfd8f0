//! Minibatch training with Adam, modality dropout and gaze augmentation.

use std::path::{Path, PathBuf};

use rand::seq::SliceRandom;
use rand::Rng as _;
use serde::{Deserialize, Serialize};

use crate::error::{config_err, Error, Result};
use crate::geometry::{add_gaze_noise, flip_gaze, rotate_gaze, GazeWindow};
use crate::model::{modality_dropout, save_checkpoint, ModalitySet, Model, ModelConfig, ModelInput};
use crate::rng;
use crate::sim::{LabeledClip, Task};
use crate::tensor::{AdamConfig, AdamState};

const SHUFFLE: u64 = 1;
const EXAMPLE: u64 = 2;
const INIT: u64 = 3;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Augment {
    /// Uniform quarter-turn rotation of the gaze window.
    pub rotate: bool,
    /// Horizontal mirror with probability 1/2.
    pub flip: bool,
    /// Gaussian noise added to raw gaze coordinates; 0 disables.
    pub gaze_noise: f64,
}

impl Default for Augment {
    fn default() -> Self {
        Augment {
            rotate: true,
            flip: false,
            gaze_noise: 0.0,
        }
    }
}

impl Augment {
    pub const NONE: Augment = Augment {
        rotate: false,
        flip: false,
        gaze_noise: 0.0,
    };
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub lr: f64,
    pub epochs: usize,
    pub batch_size: usize,
    pub seed: u64,
    pub task: Task,
    pub augment: Augment,
    pub modality_dropout: bool,
}

impl TrainConfig {
    pub fn new(task: Task, seed: u64) -> Self {
        TrainConfig {
            lr: 1e-3,
            epochs: 10,
            batch_size: 32,
            seed,
            task,
            augment: Augment::default(),
            modality_dropout: true,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.lr > 0.0 && self.lr.is_finite()) {
            return config_err(format!("learning rate {} must be positive", self.lr));
        }
        if self.epochs == 0 {
            return config_err("epochs must be at least 1");
        }
        if self.batch_size == 0 {
            return config_err("batch size must be at least 1");
        }
        if !(self.augment.gaze_noise >= 0.0) {
            return config_err("gaze noise must be non-negative");
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpochStats {
    pub epoch: usize,
    pub loss: f64,
    /// Accuracy of the training forward passes, on augmented inputs.
    pub train_acc: f64,
    pub val_loss: Option<f64>,
    pub val_acc: Option<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrainReport {
    pub model: ModelConfig,
    pub train: TrainConfig,
    pub param_count: usize,
    pub train_clips: usize,
    pub val_clips: usize,
    pub epochs: Vec<EpochStats>,
    pub best_epoch: usize,
    pub checkpoint: Option<PathBuf>,
}

pub struct TrainOutcome {
    pub report: TrainReport,
    /// Parameters after the epoch with the best validation accuracy (the
    /// last epoch when there is no validation set).
    pub best: Model<f32>,
    pub last: Model<f32>,
}

/// One training example after dropout and augmentation.
#[derive(Clone, Debug)]
pub struct Example {
    pub clip: usize,
    pub label: usize,
    pub kept: ModalitySet,
    pub input: ModelInput<f32>,
}

/// Applies `aug` to a gaze window with draws from `r`.
pub fn augment_gaze(w: &GazeWindow, aug: &Augment, r: &mut rng::Rng) -> Result<GazeWindow> {
    let mut out = w.clone();
    if aug.rotate {
        out = rotate_gaze(&out, r.random_range(0..4));
    }
    if aug.flip && r.random_bool(0.5) {
        out = flip_gaze(&out);
    }
    if aug.gaze_noise > 0.0 {
        out = add_gaze_noise(&out, aug.gaze_noise, r.random())?;
    }
    Ok(out)
}

/// Clip order of one epoch.
pub fn epoch_order(n: usize, seed: u64, epoch: usize) -> Vec<usize> {
    let mut idx: Vec<usize> = (0..n).collect();
    idx.shuffle(&mut rng::stream(rng::derive(seed, epoch as u64), SHUFFLE));
    idx
}

/// Builds the example for clip `clip` in `epoch`. Draws depend only on
/// (seed, epoch, clip), so the result is independent of batching.
pub fn make_example(
    clips: &[LabeledClip],
    clip: usize,
    epoch: usize,
    model: &ModelConfig,
    cfg: &TrainConfig,
) -> Result<Example> {
    let c = &clips[clip];
    let label = c.label(cfg.task);
    if label >= model.classes {
        return Err(Error::Data(format!(
            "clip {}: label {label} >= {} classes",
            c.id, model.classes
        )));
    }
    let mut r = rng::stream(rng::derive(rng::derive(cfg.seed, epoch as u64), clip as u64), EXAMPLE);
    let present = ModalitySet {
        gaze: c.gaze.is_some(),
        rgb: c.rgb.is_some(),
        imu: c.imu.is_some(),
    }
    .intersect(model.modalities());
    if present.is_empty() {
        return Err(Error::Data(format!("clip {} has no modality the model uses", c.id)));
    }
    let kept = if cfg.modality_dropout {
        modality_dropout(&mut r, present)
    } else {
        present
    };
    let gaze = match (&c.gaze, kept.gaze) {
        (Some(w), true) => Some(augment_gaze(w, &cfg.augment, &mut r)?),
        _ => None,
    };
    let input = ModelInput::build(
        model,
        gaze.as_ref(),
        c.rgb.as_ref().filter(|_| kept.rgb),
        c.imu.as_ref().filter(|_| kept.imu),
    )?;
    Ok(Example {
        clip,
        label,
        kept,
        input,
    })
}

/// The batches of one epoch, each a list of examples.
pub fn make_batches<'a>(
    clips: &'a [LabeledClip],
    epoch: usize,
    model: &ModelConfig,
    cfg: &TrainConfig,
) -> impl Iterator<Item = Result<Vec<Example>>> + 'a {
    let order = epoch_order(clips.len(), cfg.seed, epoch);
    let model = model.clone();
    let cfg = *cfg;
    let batches: Vec<Vec<usize>> = order.chunks(cfg.batch_size).map(<[usize]>::to_vec).collect();
    batches
        .into_iter()
        .map(move |b| b.iter().map(|&i| make_example(clips, i, epoch, &model, &cfg)).collect())
}

/// Mean loss and accuracy over `clips` with every available modality.
pub fn evaluate_loss(model: &Model<f32>, clips: &[LabeledClip], task: Task) -> Result<(f64, f64)> {
    let mut loss = 0.0;
    let mut correct = 0usize;
    for c in clips {
        let input = ModelInput::from_clip(model.config(), c)?;
        let label = c.label(task);
        let p = model.predict(&input)?;
        loss -= p.probs.get(label).copied().unwrap_or(0.0).max(1e-300).ln();
        correct += (p.argmax() == label) as usize;
    }
    let n = clips.len().max(1) as f64;
    Ok((loss / n, correct as f64 / n))
}

/// Trains a fresh model. When `out_dir` is given, `last.ckpt` is written
/// after every epoch and `best.ckpt` whenever validation accuracy improves.
pub fn train(
    train_set: &[LabeledClip],
    val_set: &[LabeledClip],
    model_cfg: &ModelConfig,
    cfg: &TrainConfig,
    out_dir: Option<&Path>,
) -> Result<TrainOutcome> {
    cfg.validate()?;
    model_cfg.validate()?;
    if train_set.is_empty() {
        return Err(Error::Data("training set is empty".into()));
    }
    if model_cfg.classes != cfg.task.num_classes() {
        return config_err(format!(
            "model has {} classes but the task has {}",
            model_cfg.classes,
            cfg.task.num_classes()
        ));
    }
    for c in train_set.iter().chain(val_set) {
        if c.label(cfg.task) >= model_cfg.classes {
            return Err(Error::Data(format!("clip {} label out of range", c.id)));
        }
    }
    let mut model = Model::<f32>::new(model_cfg.clone(), rng::derive(cfg.seed, INIT))?;
    let mut adam = AdamState::new(
        AdamConfig {
            lr: cfg.lr,
            ..AdamConfig::default()
        },
        model.params(),
    )?;
    let best_path = out_dir.map(|d| d.join("best.ckpt"));
    let mut best = (f64::NEG_INFINITY, 0, model.clone());
    let mut epochs = Vec::with_capacity(cfg.epochs);
    for epoch in 0..cfg.epochs {
        let (mut loss_sum, mut correct, mut seen) = (0.0, 0usize, 0usize);
        for (step, batch) in make_batches(train_set, epoch, model_cfg, cfg).enumerate() {
            let batch = batch?;
            let mut acc: Vec<Vec<f32>> = model.params().iter().map(|p| vec![0.0; p.len()]).collect();
            for ex in &batch {
                let (loss, grads, pred) = model.loss_and_grads(&ex.input, ex.label)?;
                if !loss.is_finite() {
                    return Err(Error::NonFiniteLoss {
                        epoch,
                        step,
                        clip: train_set[ex.clip].id.clone(),
                    });
                }
                loss_sum += loss;
                correct += (pred.argmax() == ex.label) as usize;
                seen += 1;
                for (a, g) in acc.iter_mut().zip(&grads) {
                    for (x, &y) in a.iter_mut().zip(g) {
                        *x += y;
                    }
                }
            }
            let scale = 1.0 / batch.len() as f32;
            for a in &mut acc {
                for x in a.iter_mut() {
                    *x *= scale;
                }
            }
            adam.step(model.params_mut(), &acc)?;
        }
        let (val_loss, val_acc) = if val_set.is_empty() {
            (None, None)
        } else {
            let (l, a) = evaluate_loss(&model, val_set, cfg.task)?;
            (Some(l), Some(a))
        };
        let score = val_acc.unwrap_or(epoch as f64);
        if score > best.0 {
            best = (score, epoch, model.clone());
            if let Some(p) = &best_path {
                save_checkpoint(&model, p)?;
            }
        }
        if let Some(d) = out_dir {
            save_checkpoint(&model, &d.join("last.ckpt"))?;
        }
        epochs.push(EpochStats {
            epoch,
            loss: loss_sum / seen as f64,
            train_acc: correct as f64 / seen as f64,
            val_loss,
            val_acc,
        });
    }
    let report = TrainReport {
        model: model_cfg.clone(),
        train: *cfg,
        param_count: model.param_count(),
        train_clips: train_set.len(),
        val_clips: val_set.len(),
        epochs,
        best_epoch: best.1,
        checkpoint: best_path,
    };
    Ok(TrainOutcome {
        report,
        best: best.2,
        last: model,
    })
}
