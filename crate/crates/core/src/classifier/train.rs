//! Mini-batch Adam training with a held-out split and best-checkpoint
//! selection.

use std::time::Instant;

use log::{debug, info};
use serde::{Deserialize, Serialize};

use super::model::{Model, ModelConfig};
use crate::error::{invalid, Error, Result};
use crate::featurize::{Dataset, FrameLabel, NUM_LABELS};
use crate::rng::{stream, Rng};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub batch_size: usize,
    pub learning_rate: f64,
    pub epochs: usize,
    pub validation_fraction: f64,
    /// Drives the train/validation split and the per-epoch shuffles.
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            batch_size: 32,
            learning_rate: 1e-3,
            epochs: 30,
            validation_fraction: 0.1,
            seed: 0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::InvalidConfiguration(m.into()));
        if self.batch_size < 2 {
            return bad("batch_size must be at least 2");
        }
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return bad("learning_rate must be positive");
        }
        if self.epochs == 0 {
            return bad("epochs must be positive");
        }
        if !(self.validation_fraction > 0.0 && self.validation_fraction < 1.0) {
            return bad("validation_fraction must lie in (0, 1)");
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    pub train_loss: f64,
    pub val_accuracy: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrainReport {
    /// Training-mode loss of the untouched model on the first training
    /// batches.
    pub initial_loss: f64,
    pub epochs: Vec<EpochRecord>,
    pub best_epoch: usize,
    pub best_val_accuracy: f64,
    pub train_size: usize,
    pub val_size: usize,
    /// Kept out of the JSON so reports stay byte-identical across reruns.
    #[serde(skip)]
    pub wall_clock_secs: f64,
}

impl TrainReport {
    pub fn final_loss(&self) -> f64 {
        self.epochs.last().map_or(f64::NAN, |e| e.train_loss)
    }
}

pub struct Adam {
    lr: f32,
    beta1: f32,
    beta2: f32,
    eps: f32,
    t: i32,
    m: Vec<f32>,
    v: Vec<f32>,
}

impl Adam {
    pub fn new(n: usize, lr: f64) -> Self {
        Self {
            lr: lr as f32,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            t: 0,
            m: vec![0.0; n],
            v: vec![0.0; n],
        }
    }

    pub fn step(&mut self, params: &mut [f32], grad: &[f32]) {
        self.t += 1;
        let c1 = 1.0 - self.beta1.powi(self.t);
        let c2 = 1.0 - self.beta2.powi(self.t);
        for i in 0..params.len() {
            let g = grad[i];
            self.m[i] = self.beta1 * self.m[i] + (1.0 - self.beta1) * g;
            self.v[i] = self.beta2 * self.v[i] + (1.0 - self.beta2) * g * g;
            let mh = self.m[i] / c1;
            let vh = self.v[i] / c2;
            params[i] -= self.lr * mh / (vh.sqrt() + self.eps);
        }
    }
}

/// Per-label shuffled split; the first `fraction` of every label goes to
/// validation.
pub fn split_indices(labels: &[FrameLabel], fraction: f64, seed: u64) -> (Vec<usize>, Vec<usize>) {
    let mut rng = Rng::new(seed, stream::SPLIT);
    let (mut train, mut val) = (Vec::new(), Vec::new());
    for l in FrameLabel::ALL {
        let mut idx: Vec<usize> = (0..labels.len()).filter(|&i| labels[i] == l).collect();
        rng.shuffle(&mut idx);
        let nv = (idx.len() as f64 * fraction).round() as usize;
        val.extend_from_slice(&idx[..nv]);
        train.extend_from_slice(&idx[nv..]);
    }
    train.sort_unstable();
    val.sort_unstable();
    (train, val)
}

fn gather(data: &Dataset, idx: &[usize]) -> (Vec<f32>, Vec<FrameLabel>) {
    let px = data.resolution * data.resolution;
    let mut x = Vec::with_capacity(idx.len() * px);
    let mut y = Vec::with_capacity(idx.len());
    for &i in idx {
        x.extend_from_slice(&data.images[i].grid);
        y.push(data.images[i].label.expect("labelled dataset"));
    }
    (x, y)
}

pub fn accuracy(model: &Model, data: &Dataset, idx: &[usize]) -> Result<f64> {
    if idx.is_empty() {
        return Ok(f64::NAN);
    }
    let imgs: Vec<_> = idx.iter().map(|&i| &data.images[i]).collect();
    let preds = model.predict_many(&imgs, 64)?;
    let hits = preds
        .iter()
        .zip(&imgs)
        .filter(|((p, _), im)| Some(*p) == im.label)
        .count();
    Ok(hits as f64 / idx.len() as f64)
}

/// Trains `model` on `train_idx`, scoring `val_idx` after every epoch, and
/// returns the parameters from the epoch with the best validation accuracy
/// (earliest on ties). The order of `train_idx` is irrelevant.
pub fn fit(mut model: Model, data: &Dataset, train_idx: &[usize], val_idx: &[usize], cfg: &TrainConfig) -> Result<(Model, TrainReport)> {
    cfg.validate()?;
    if data.resolution != model.config().input_resolution {
        return Err(invalid(format!(
            "dataset resolution {} does not match model input {}",
            data.resolution,
            model.config().input_resolution
        )));
    }
    if train_idx.len() < 2 {
        return Err(Error::InvalidDataset("fewer than two training images".into()));
    }
    let started = Instant::now();
    let bs = cfg.batch_size;
    // the caller's ordering must not matter, only the shuffle seed
    let mut train_idx = train_idx.to_vec();
    train_idx.sort_unstable();

    let probe: Vec<usize> = train_idx.iter().copied().take(8 * bs).collect();
    let mut initial = 0.0;
    let mut probe_batches = 0;
    for chunk in probe.chunks(bs).filter(|c| c.len() > 1) {
        let (x, y) = gather(data, chunk);
        initial += model.loss_and_grad(&x, &y)?.loss as f64;
        probe_batches += 1;
    }
    let initial_loss = initial / probe_batches as f64;
    info!("initial loss {initial_loss:.4} on {} images", probe.len());

    let mut adam = Adam::new(model.params().len(), cfg.learning_rate);
    let shuffles = Rng::new(cfg.seed, stream::SHUFFLE);
    let mut best = (model.clone(), f64::NEG_INFINITY, 0usize);
    let mut epochs = Vec::with_capacity(cfg.epochs);
    for epoch in 1..=cfg.epochs {
        let mut order = train_idx.to_vec();
        shuffles.substream(epoch as u64).shuffle(&mut order);
        let (mut sum, mut seen) = (0.0, 0usize);
        for chunk in order.chunks(bs).filter(|c| c.len() > 1) {
            let (x, y) = gather(data, chunk);
            let lg = model.loss_and_grad(&x, &y)?;
            if !lg.loss.is_finite() {
                return Err(Error::InvalidDataset(format!("non-finite loss in epoch {epoch}")));
            }
            adam.step(model.params_mut(), &lg.grad);
            model.update_running_stats(&lg.stats);
            sum += lg.loss as f64 * chunk.len() as f64;
            seen += chunk.len();
        }
        let train_loss = sum / seen as f64;
        let val_accuracy = accuracy(&model, data, val_idx)?;
        info!(
            "epoch {epoch}/{}: loss {train_loss:.4}, validation accuracy {:.2}% ({:.0}s)",
            cfg.epochs,
            100.0 * val_accuracy,
            started.elapsed().as_secs_f64()
        );
        if val_accuracy > best.1 || val_idx.is_empty() {
            best = (model.clone(), val_accuracy, epoch);
            debug!("new best at epoch {epoch}");
        }
        epochs.push(EpochRecord {
            epoch,
            train_loss,
            val_accuracy,
        });
    }
    let report = TrainReport {
        initial_loss,
        epochs,
        best_epoch: best.2,
        best_val_accuracy: best.1,
        train_size: train_idx.len(),
        val_size: val_idx.len(),
        wall_clock_secs: started.elapsed().as_secs_f64(),
    };
    Ok((best.0, report))
}

/// Builds a fresh model and trains it on a stratified split of `data`.
/// Every one of the eight labels must be present.
pub fn train(data: &Dataset, model_cfg: &ModelConfig, cfg: &TrainConfig) -> Result<(Model, TrainReport)> {
    cfg.validate()?;
    let counts = data.label_counts();
    if let Some(missing) = (0..NUM_LABELS).find(|&l| counts[l] == 0) {
        return Err(Error::InvalidDataset(format!(
            "label {} has no examples",
            FrameLabel::ALL[missing]
        )));
    }
    let (train_idx, val_idx) = split_indices(&data.labels(), cfg.validation_fraction, cfg.seed);
    let model = Model::new(model_cfg.clone())?;
    fit(model, data, &train_idx, &val_idx, cfg)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn adam_first_step_moves_by_lr() {
        let mut p = vec![1.0f32, -2.0];
        let mut a = Adam::new(2, 0.01);
        a.step(&mut p, &[3.0, -0.5]);
        assert!((p[0] - 0.99).abs() < 1e-6);
        assert!((p[1] + 1.99).abs() < 1e-6);
    }

    #[test]
    fn adam_minimizes_quadratic() {
        let mut p = vec![5.0f32];
        let mut a = Adam::new(1, 0.1);
        for _ in 0..500 {
            let g = 2.0 * (p[0] - 1.5);
            a.step(&mut p, &[g]);
        }
        assert!((p[0] - 1.5).abs() < 1e-2);
    }

    #[test]
    fn split_is_stratified_and_disjoint() {
        let labels: Vec<_> = (0..400).map(|i| FrameLabel::ALL[i % 8]).collect();
        let (t, v) = split_indices(&labels, 0.2, 3);
        assert_eq!(v.len(), 80);
        assert_eq!(t.len(), 320);
        for l in FrameLabel::ALL {
            assert_eq!(v.iter().filter(|&&i| labels[i] == l).count(), 10);
        }
        assert!(t.iter().all(|i| !v.contains(i)));
        assert_eq!(split_indices(&labels, 0.2, 3), (t, v));
    }

    #[test]
    fn bad_hyperparameters_rejected() {
        for cfg in [
            TrainConfig { batch_size: 1, ..Default::default() },
            TrainConfig { epochs: 0, ..Default::default() },
            TrainConfig { validation_fraction: 1.0, ..Default::default() },
            TrainConfig { learning_rate: -1.0, ..Default::default() },
        ] {
            assert!(cfg.validate().is_err());
        }
    }
}
