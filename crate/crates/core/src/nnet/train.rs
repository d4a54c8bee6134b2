//! SGD-with-momentum training loop and accuracy evaluation.

use std::time::Instant;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::dataio::LabeledDataset;
use crate::error::{Error, Result};
use crate::nnet::{backward, LayerParams, Network};

/// Optimizer and schedule settings.
#[derive(Debug, Clone)]
pub struct TrainConfig {
    pub lr: f64,
    pub momentum: f64,
    /// Epochs at which the learning rate drops by `decay_factor`.
    pub decay_epochs: Vec<usize>,
    pub decay_factor: f64,
    pub epochs: usize,
    pub batch_size: usize,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            lr: 0.1,
            momentum: 0.9,
            decay_epochs: Vec::new(),
            decay_factor: 10.0,
            epochs: 10,
            batch_size: 32,
            seed: 0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.lr > 0.0 && self.lr.is_finite()) {
            return Err(Error::Parameter(format!(
                "learning rate must be positive, got {}",
                self.lr
            )));
        }
        if !(0.0..1.0).contains(&self.momentum) {
            return Err(Error::Parameter(format!(
                "momentum must lie in [0,1), got {}",
                self.momentum
            )));
        }
        if self.decay_factor <= 1.0 {
            return Err(Error::Parameter(format!(
                "decay factor must exceed 1, got {}",
                self.decay_factor
            )));
        }
        if self.batch_size == 0 {
            return Err(Error::Parameter("batch size must be at least 1".into()));
        }
        Ok(())
    }

    /// Learning rate at a (0-indexed) epoch:
    /// `lr / decay_factor^(count of decay_epochs ≤ epoch)`.
    pub fn lr_at(&self, epoch: usize) -> f64 {
        let drops = self.decay_epochs.iter().filter(|&&d| d <= epoch).count();
        self.lr / self.decay_factor.powi(drops as i32)
    }
}

/// One momentum-SGD update: `v ← momentum·v + g`, `p ← p − lr(epoch)·v`.
pub fn sgd_step(
    net: &mut Network,
    grads: &[LayerParams],
    cfg: &TrainConfig,
    epoch: usize,
) -> Result<()> {
    if grads.len() != net.params().len() {
        return Err(Error::Shape(format!(
            "got {} gradient blocks for {} trainable layers",
            grads.len(),
            net.params().len()
        )));
    }
    let lr = cfg.lr_at(epoch);
    for i in 0..grads.len() {
        let g = &grads[i];
        {
            let buf = &mut net.momentum_mut()[i];
            if buf.weight.rows() != g.weight.rows()
                || buf.weight.cols() != g.weight.cols()
                || buf.bias.len() != g.bias.len()
            {
                return Err(Error::Shape(format!(
                    "gradient block {i} does not match parameter shapes"
                )));
            }
            for (v, gv) in buf.weight.data_mut().iter_mut().zip(g.weight.data()) {
                *v = cfg.momentum * *v + gv;
            }
            for (v, gv) in buf.bias.iter_mut().zip(&g.bias) {
                *v = cfg.momentum * *v + gv;
            }
        }
        let velocity = net.momentum_mut()[i].clone();
        let p = &mut net.params_mut()[i];
        for (pv, v) in p.weight.data_mut().iter_mut().zip(velocity.weight.data()) {
            *pv -= lr * v;
        }
        for (pv, v) in p.bias.iter_mut().zip(&velocity.bias) {
            *pv -= lr * v;
        }
    }
    Ok(())
}

/// Per-epoch training record.
#[derive(Debug, Clone)]
pub struct EpochStat {
    pub epoch: usize,
    /// Seconds since training started, measured at epoch end.
    pub wall_seconds: f64,
    /// Mean batch loss over the epoch.
    pub train_loss: f64,
    /// Test accuracy after the epoch, when a test set was supplied.
    pub test_accuracy: Option<f64>,
}

/// Trains in place: per-epoch seeded shuffle, mean softmax cross-entropy,
/// momentum SGD with the config's decay schedule. The last partial batch
/// is kept.
pub fn train(
    net: &mut Network,
    data: &LabeledDataset,
    test: Option<&LabeledDataset>,
    cfg: &TrainConfig,
) -> Result<Vec<EpochStat>> {
    cfg.validate()?;
    if data.is_empty() {
        return Err(Error::Parameter("training set is empty".into()));
    }
    let start = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut stats = Vec::with_capacity(cfg.epochs);
    let mut indices: Vec<usize> = (0..data.len()).collect();
    for epoch in 0..cfg.epochs {
        indices.shuffle(&mut rng);
        let mut loss_sum = 0.0;
        let mut batches = 0usize;
        for chunk in indices.chunks(cfg.batch_size) {
            let sub = data.select(chunk)?;
            let (loss, grads) = backward(net, &sub.images, &sub.labels)?;
            sgd_step(net, &grads, cfg, epoch)?;
            loss_sum += loss;
            batches += 1;
        }
        let test_accuracy = match test {
            Some(t) => Some(evaluate(net, t)?),
            None => None,
        };
        stats.push(EpochStat {
            epoch,
            wall_seconds: start.elapsed().as_secs_f64(),
            train_loss: loss_sum / batches as f64,
            test_accuracy,
        });
    }
    Ok(stats)
}

/// Fraction of samples whose argmax logit matches the label; ties break
/// toward the lowest class index.
pub fn evaluate(net: &Network, data: &LabeledDataset) -> Result<f64> {
    if data.is_empty() {
        return Err(Error::Parameter("evaluation set is empty".into()));
    }
    let indices: Vec<usize> = (0..data.len()).collect();
    let mut correct = 0usize;
    for chunk in indices.chunks(256) {
        let sub = data.select(chunk)?;
        let pass = net.forward(&sub.images)?;
        for (j, &label) in sub.labels.iter().enumerate() {
            let mut best = 0usize;
            let mut best_v = pass.logits.get(0, j);
            for i in 1..pass.logits.rows() {
                let v = pass.logits.get(i, j);
                if v > best_v {
                    best = i;
                    best_v = v;
                }
            }
            if best == label {
                correct += 1;
            }
        }
    }
    Ok(correct as f64 / data.len() as f64)
}
