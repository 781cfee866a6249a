//! Minibatch training of the network with Adam, a decaying learning rate and
//! early stopping on the validation loss.

use serde::{Deserialize, Serialize};

use crate::dataset::SequenceTensor;
use crate::error::{Error, Result};
use crate::linalg::RandomSource;
use crate::nn::{forward_batch, model_backward, predict, MaskSource, Mode, ModelParams, NetConfig, NormAudit};
use crate::optimize::{adam_step, AdamConfig, AdamState, EarlyStopping, LrSchedule, StopDecision};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub patience: usize,
    pub min_delta: f64,
    pub schedule: LrSchedule,
    pub adam: AdamConfig,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            epochs: 200,
            batch_size: 64,
            patience: 15,
            min_delta: 1e-4,
            schedule: LrSchedule::default(),
            adam: AdamConfig::default(),
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.epochs == 0 {
            return Err(Error::Config("epochs must be >= 1".into()));
        }
        if self.batch_size < 2 {
            return Err(Error::Config("batch_size must be >= 2 (batch norm needs batch statistics)".into()));
        }
        if !(self.min_delta >= 0.0) {
            return Err(Error::Config("min_delta must be >= 0".into()));
        }
        self.schedule.validate()
    }
}

/// Parameters plus the target scaling used during training.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrainedNetwork {
    pub params: ModelParams,
    pub target_mean: f64,
    pub target_sd: f64,
}

impl TrainedNetwork {
    /// Predictions on the original target scale.
    pub fn predict(&self, x: &SequenceTensor) -> Result<Vec<f64>> {
        let seqs: Vec<&[f64]> = (0..x.n).map(|i| x.sample(i)).collect();
        let z = predict(&self.params, &seqs, x.t)?;
        Ok(z.into_iter().map(|v| v * self.target_sd + self.target_mean).collect())
    }

    /// As [`predict`](Self::predict), also returning the normalization audit
    /// of the inference passes.
    pub fn predict_audited(&self, x: &SequenceTensor) -> Result<(Vec<f64>, NormAudit)> {
        let mut audit = NormAudit::default();
        let mut out = Vec::with_capacity(x.n);
        let mut unused = RandomSource::new(0);
        let seqs: Vec<&[f64]> = (0..x.n).map(|i| x.sample(i)).collect();
        for block in seqs.chunks(512) {
            let c = forward_batch(&self.params, block, x.t, Mode::Infer, MaskSource::Sample(&mut unused))?;
            audit.merge(&c.audit);
            out.extend(c.predictions.iter().map(|v| v * self.target_sd + self.target_mean));
        }
        Ok((out, audit))
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    /// Mean minibatch loss (standardized target, penalty included).
    pub train_loss: f64,
    /// Validation MSE on the original target scale.
    pub val_mse: f64,
    pub lr: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrainOutcome {
    pub network: TrainedNetwork,
    pub history: Vec<EpochRecord>,
    pub best_epoch: usize,
    pub stopped_early: bool,
    pub steps: u64,
    pub audit: NormAudit,
}

/// Start offsets of the minibatches over `n` shuffled rows. A trailing batch
/// of one row is merged into the previous one, since training-mode batch
/// norm needs at least two rows.
pub fn batch_bounds(n: usize, batch_size: usize) -> Vec<(usize, usize)> {
    let mut out = Vec::new();
    let mut start = 0;
    while start < n {
        let end = (start + batch_size).min(n);
        out.push((start, end));
        start = end;
    }
    if out.len() > 1 && out.last().map(|(s, e)| e - s) == Some(1) {
        let (_, e) = out.pop().unwrap();
        out.last_mut().unwrap().1 = e;
    }
    out
}

fn check_shapes(x: &SequenceTensor, y: &[f64], net: &NetConfig, what: &str) -> Result<()> {
    if x.n != y.len() {
        return Err(Error::Shape(format!("{what}: {} sequences, {} targets", x.n, y.len())));
    }
    if x.d != net.input_dim {
        return Err(Error::Shape(format!(
            "{what}: sequences carry {} values per step, network expects {}",
            x.d, net.input_dim
        )));
    }
    Ok(())
}

fn mse(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(u, v)| (u - v) * (u - v)).sum::<f64>() / a.len() as f64
}

/// Trains from a fresh initialization. Streams derived from `rng`: 0 for
/// initialization, 1 for shuffling, 2 for dropout.
pub fn train_network(
    x_train: &SequenceTensor,
    y_train: &[f64],
    x_val: &SequenceTensor,
    y_val: &[f64],
    net: &NetConfig,
    cfg: &TrainConfig,
    rng: &RandomSource,
) -> Result<TrainOutcome> {
    cfg.validate()?;
    net.validate()?;
    check_shapes(x_train, y_train, net, "training set")?;
    check_shapes(x_val, y_val, net, "validation set")?;
    if x_train.n < 2 || x_val.n == 0 {
        return Err(Error::EmptyInput("training needs >= 2 rows and a non-empty validation set".into()));
    }
    let n = x_train.n;
    let mean = y_train.iter().sum::<f64>() / n as f64;
    let sd = (y_train.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n as f64).sqrt();
    if !(sd > 0.0) {
        return Err(Error::DegenerateTarget);
    }
    let z: Vec<f64> = y_train.iter().map(|v| (v - mean) / sd).collect();

    let mut init_rng = rng.derive(0);
    let mut shuffle_rng = rng.derive(1);
    let mut dropout_rng = rng.derive(2);
    let mut network = TrainedNetwork {
        params: ModelParams::init(net, &mut init_rng)?,
        target_mean: mean,
        target_sd: sd,
    };
    let mut adam = AdamState::new(&network.params, cfg.adam.clone());
    let mut stopper: EarlyStopping<ModelParams> = EarlyStopping::new(cfg.patience, cfg.min_delta);
    let mut audit = NormAudit::default();
    let mut history = Vec::new();
    let mut steps = 0u64;
    let mut stopped_early = false;
    let bounds = batch_bounds(n, cfg.batch_size);

    for epoch in 1..=cfg.epochs {
        let order = shuffle_rng.permutation(n);
        let mut loss_sum = 0.0;
        let mut lr = cfg.schedule.lr_at_step(steps);
        for &(s, e) in &bounds {
            let idx = &order[s..e];
            let seqs: Vec<&[f64]> = idx.iter().map(|&i| x_train.sample(i)).collect();
            let targets: Vec<f64> = idx.iter().map(|&i| z[i]).collect();
            let p = &mut network.params;
            let cache = forward_batch(p, &seqs, x_train.t, Mode::Train, MaskSource::Sample(&mut dropout_rng))?;
            audit.merge(&cache.audit);
            let (loss, grads) = model_backward(&cache, &targets, p)?;
            if !loss.is_finite() {
                return Err(Error::Numeric(format!("training loss is {loss} at epoch {epoch}, step {steps}")));
            }
            for (norm, (rm, rv)) in p.norm.iter_mut().zip(&cache.running) {
                norm.running_mean.clone_from(rm);
                norm.running_var.clone_from(rv);
            }
            lr = cfg.schedule.lr_at_step(steps);
            adam_step(p, &grads, &mut adam, lr)?;
            steps += 1;
            loss_sum += loss * idx.len() as f64;
        }
        let (val_pred, val_audit) = network.predict_audited(x_val)?;
        audit.merge(&val_audit);
        let val_mse = mse(&val_pred, y_val);
        if !val_mse.is_finite() {
            return Err(Error::Numeric(format!("validation MSE is {val_mse} at epoch {epoch}")));
        }
        log::debug!("epoch {epoch}: train loss {:.5}, val MSE {val_mse:.5}", loss_sum / n as f64);
        history.push(EpochRecord {
            epoch,
            train_loss: loss_sum / n as f64,
            val_mse,
            lr,
        });
        if stopper.update(val_mse, &network.params)? == StopDecision::Stop {
            stopped_early = true;
            break;
        }
    }
    let best_epoch = stopper.best_epoch();
    if let Some(best) = stopper.into_best() {
        network.params = best;
    }
    Ok(TrainOutcome {
        network,
        history,
        best_epoch,
        stopped_early,
        steps,
        audit,
    })
}
