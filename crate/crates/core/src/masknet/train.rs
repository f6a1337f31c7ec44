//! Mini-batch SGD on frame-pooled examples with inverted dropout.

use ndarray::{s, Array2};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::mlp::{Dropout, Gradients};
use super::{IbmPair, MaskNetModel};
use crate::error::{Error, Result};
use crate::stft::MagnitudeSpectrogram;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub batch_size: usize,
    pub lr: f64,
    pub epochs: usize,
    pub dropout_input: f64,
    pub dropout_hidden: f64,
    pub seed: u64,
    /// Heavy-ball momentum; 0 is plain SGD.
    pub momentum: f64,
    /// Learning-rate multiplier applied after every epoch; 1 keeps it fixed.
    pub lr_decay: f64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            batch_size: 128,
            lr: 0.01,
            epochs: 50,
            dropout_input: 0.2,
            dropout_hidden: 0.5,
            seed: 17,
            momentum: 0.0,
            lr_decay: 1.0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let rate_ok = |p: f64| (0.0..1.0).contains(&p);
        if !rate_ok(self.dropout_input) || !rate_ok(self.dropout_hidden) || !rate_ok(self.momentum) {
            return Err(Error::invalid("dropout rates and momentum must lie in [0, 1)"));
        }
        if !(self.lr > 0.0 && self.lr.is_finite()) {
            return Err(Error::invalid(format!("learning rate {} must be positive", self.lr)));
        }
        if !(self.lr_decay > 0.0 && self.lr_decay <= 1.0) {
            return Err(Error::invalid("lr_decay must lie in (0, 1]"));
        }
        if self.batch_size == 0 || self.epochs == 0 {
            return Err(Error::invalid("batch size and epoch count must be positive"));
        }
        Ok(())
    }

    fn dropout(&self) -> Option<Dropout> {
        (self.dropout_input > 0.0 || self.dropout_hidden > 0.0)
            .then_some(Dropout { input: self.dropout_input, hidden: self.dropout_hidden })
    }
}

/// One utterance: mixture magnitudes and the IBM targets for each frame.
#[derive(Debug, Clone)]
pub struct TrainingExample {
    pub magnitude: MagnitudeSpectrogram,
    pub ibm: IbmPair,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct TrainReport {
    /// Mean per-frame cross-entropy of each epoch, as seen during training
    /// (with dropout active).
    pub epoch_losses: Vec<f64>,
}

/// Features and stacked `[keyword ++ non_keyword]` targets for a list of
/// `(utterance, frame)` indices.
pub fn build_batch(
    model: &MaskNetModel,
    data: &[TrainingExample],
    frames: &[(usize, usize)],
) -> (Array2<f64>, Array2<f64>) {
    let base = model.features.base_dim;
    let mut x = Array2::zeros((frames.len(), model.features.spliced_dim()));
    let mut y = Array2::zeros((frames.len(), 2 * base));
    for (r, &(u, t)) in frames.iter().enumerate() {
        let ex = &data[u];
        let row = x.row_mut(r).into_slice().expect("row-major");
        model.features.splice_frame_into(&ex.magnitude, t, row);
        model.norm_stats.normalize_in_place(row);
        y.slice_mut(s![r, ..base]).assign(&ex.ibm.keyword.row(t));
        y.slice_mut(s![r, base..]).assign(&ex.ibm.non_keyword.row(t));
    }
    (x, y)
}

fn check_dataset(model: &MaskNetModel, data: &[TrainingExample]) -> Result<()> {
    if data.is_empty() {
        return Err(Error::invalid("training set is empty"));
    }
    let base = model.features.base_dim;
    for (i, ex) in data.iter().enumerate() {
        let t = ex.magnitude.num_frames();
        if t == 0 {
            return Err(Error::invalid(format!("example {i} has no frames")));
        }
        if ex.magnitude.num_bins() < base {
            return Err(Error::dim(format!(
                "example {i} has {} bins, model needs {base}",
                ex.magnitude.num_bins()
            )));
        }
        for m in [&ex.ibm.keyword, &ex.ibm.non_keyword] {
            if m.dim() != (t, base) {
                return Err(Error::dim(format!(
                    "example {i}: target {:?} does not match {t} frames × {base} bins",
                    m.dim()
                )));
            }
        }
    }
    Ok(())
}

/// Trains `model` in place. Frames of all utterances are pooled and
/// reshuffled every epoch; all randomness comes from `cfg.seed`.
pub fn train(model: &mut MaskNetModel, data: &[TrainingExample], cfg: &TrainConfig) -> Result<TrainReport> {
    cfg.validate()?;
    model.validate()?;
    check_dataset(model, data)?;

    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut frames: Vec<(usize, usize)> = data
        .iter()
        .enumerate()
        .flat_map(|(u, ex)| (0..ex.magnitude.num_frames()).map(move |t| (u, t)))
        .collect();
    let total = frames.len() as f64;
    let dropout = cfg.dropout();
    let mut velocity = (cfg.momentum > 0.0).then(|| Gradients::zeros_like(&model.net));
    let mut lr = cfg.lr;
    let mut epoch_losses = Vec::with_capacity(cfg.epochs);

    for epoch in 0..cfg.epochs {
        frames.shuffle(&mut rng);
        let mut summed = 0.0;
        for (b, chunk) in frames.chunks(cfg.batch_size).enumerate() {
            let (x, y) = build_batch(model, data, chunk);
            let (loss, grads) = model.net.loss_and_gradients(x.view(), y.view(), dropout, &mut rng);
            if !loss.is_finite() || !grads.is_finite() {
                return Err(Error::Numeric(format!(
                    "non-finite loss {loss} at epoch {} batch {b} (frames {:?}..)",
                    epoch + 1,
                    &chunk[..chunk.len().min(4)]
                )));
            }
            summed += loss * chunk.len() as f64;
            match velocity.as_mut() {
                Some(v) => {
                    v.accumulate(cfg.momentum, &grads);
                    model.net.sgd_step(v, lr);
                }
                None => model.net.sgd_step(&grads, lr),
            }
        }
        epoch_losses.push(summed / total);
        lr *= cfg.lr_decay;
    }
    Ok(TrainReport { epoch_losses })
}
