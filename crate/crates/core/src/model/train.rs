use std::collections::BTreeMap;
use std::io::Write;
use std::path::Path;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use crate::corpus::{Post, StanceLabel};
use crate::error::{Error, Result};
use crate::eval::{classification_metrics, MetricReport};

use super::adam::{adam_step, OptimizerState};
use super::network::{Dataset, ModelInputs};
use super::params::{ModelConfig, ModelParams};

/// Optimisation settings plus the architecture they train.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TrainConfig {
    pub model: ModelConfig,
    pub epochs: usize,
    pub learning_rate: f64,
    pub weight_decay: f64,
    pub seed: u64,
    /// Train, validation and test fractions.
    pub fractions: [f64; 3],
    pub batch_size: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            model: ModelConfig::default(),
            epochs: 400,
            learning_rate: 1e-5,
            weight_decay: 5e-4,
            seed: 0,
            fractions: [0.8, 0.1, 0.1],
            batch_size: 32,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        self.model.validate()?;
        if self.epochs == 0 {
            return Err(Error::invalid("epochs must be positive"));
        }
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return Err(Error::invalid("learning rate must be positive"));
        }
        if !(self.weight_decay >= 0.0 && self.weight_decay.is_finite()) {
            return Err(Error::invalid("weight decay must be non-negative"));
        }
        if self.batch_size == 0 {
            return Err(Error::invalid("batch size must be positive"));
        }
        check_fractions(&self.fractions)
    }

    pub fn to_pairs(&self) -> BTreeMap<String, String> {
        let mut pairs = self.model.to_pairs();
        let f = self.fractions;
        for (k, v) in [
            ("train.epochs", self.epochs.to_string()),
            ("train.learning_rate", self.learning_rate.to_string()),
            ("train.weight_decay", self.weight_decay.to_string()),
            ("train.seed", self.seed.to_string()),
            ("train.fractions", format!("{},{},{}", f[0], f[1], f[2])),
            ("train.batch_size", self.batch_size.to_string()),
        ] {
            pairs.insert(k.to_string(), v);
        }
        pairs
    }

    pub fn from_pairs(pairs: &BTreeMap<String, String>) -> Result<Self> {
        fn get<T: std::str::FromStr>(pairs: &BTreeMap<String, String>, key: &str) -> Result<T> {
            pairs
                .get(key)
                .ok_or_else(|| Error::Checkpoint(format!("missing `{key}`")))?
                .parse()
                .map_err(|_| Error::Checkpoint(format!("bad value for `{key}`")))
        }
        let fractions: Vec<f64> = pairs
            .get("train.fractions")
            .ok_or_else(|| Error::Checkpoint("missing `train.fractions`".into()))?
            .split(',')
            .map(|s| s.trim().parse())
            .collect::<std::result::Result<_, _>>()
            .map_err(|_| Error::Checkpoint("bad value for `train.fractions`".into()))?;
        let fractions: [f64; 3] = fractions
            .try_into()
            .map_err(|_| Error::Checkpoint("`train.fractions` needs three values".into()))?;
        let config = TrainConfig {
            model: ModelConfig::from_pairs(pairs)?,
            epochs: get(pairs, "train.epochs")?,
            learning_rate: get(pairs, "train.learning_rate")?,
            weight_decay: get(pairs, "train.weight_decay")?,
            seed: get(pairs, "train.seed")?,
            fractions,
            batch_size: get(pairs, "train.batch_size")?,
        };
        config.validate()?;
        Ok(config)
    }
}

fn check_fractions(f: &[f64; 3]) -> Result<()> {
    if f.iter().any(|x| !(*x >= 0.0 && x.is_finite())) || (f.iter().sum::<f64>() - 1.0).abs() > 1e-9 {
        return Err(Error::invalid("split fractions must be non-negative and sum to 1"));
    }
    Ok(())
}

/// Index sets of a train/validation/test split.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Split {
    pub train: Vec<usize>,
    pub val: Vec<usize>,
    pub test: Vec<usize>,
}

/// Sizes of the three splits of `n` items: validation and test take
/// `round(f·n)` each and the remainder goes to training.
pub fn split_sizes(n: usize, fractions: &[f64; 3]) -> Result<(usize, usize, usize)> {
    check_fractions(fractions)?;
    let val = (fractions[1] * n as f64).round() as usize;
    let test = (fractions[2] * n as f64).round() as usize;
    if val + test >= n {
        return Err(Error::invalid(format!("{n} samples are too few for a non-empty split")));
    }
    let train = n - val - test;
    if (fractions[1] > 0.0 && val == 0) || (fractions[2] > 0.0 && test == 0) {
        return Err(Error::invalid(format!("{n} samples are too few for a non-empty split")));
    }
    Ok((train, val, test))
}

/// Seeded shuffle of `0..n` followed by contiguous train, validation and
/// test slices.
pub fn split_dataset(n: usize, fractions: &[f64; 3], seed: u64) -> Result<Split> {
    let (train, val, _) = split_sizes(n, fractions)?;
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    let test = order.split_off(train + val);
    let val = order.split_off(train);
    Ok(Split {
        train: order,
        val,
        test,
    })
}

/// One row of the metric log.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct EpochRecord {
    pub epoch: usize,
    pub train_loss: f64,
    pub val_accuracy: f64,
}

/// What a training run produces.
#[derive(Debug, Clone)]
pub struct TrainOutcome {
    /// Parameters from the epoch with the best validation accuracy.
    pub params: ModelParams,
    pub log: Vec<EpochRecord>,
    pub best_epoch: usize,
    pub best_val_accuracy: f64,
    /// Metrics of the selected parameters on the test split.
    pub test: MetricReport,
    pub split: Split,
}

// Separate stream from the split shuffle so that changing the epoch count
// never alters the split.
const EPOCH_STREAM: u64 = 1;

/// Mini-batch Adam over the training split of `data`.
///
/// Validation accuracy is measured after every epoch and the earliest epoch
/// with the best value is kept.
pub fn train_dataset(data: &Dataset, config: &TrainConfig) -> Result<TrainOutcome> {
    config.validate()?;
    if data.config != config.model {
        return Err(Error::invalid("dataset was built for a different model configuration"));
    }
    let split = split_dataset(data.len(), &config.fractions, config.seed)?;
    if split.train.is_empty() || split.val.is_empty() || split.test.is_empty() {
        return Err(Error::invalid("every split needs at least one labelled post"));
    }
    let val = data.subset(&split.val);
    let mut params = ModelParams::init(&config.model, config.seed);
    let mut state = OptimizerState::new(&params);
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    rng.set_stream(EPOCH_STREAM);

    let mut order = split.train.clone();
    let mut log = Vec::with_capacity(config.epochs);
    let mut best = (params.clone(), 0, f64::NEG_INFINITY);
    for epoch in 1..=config.epochs {
        order.shuffle(&mut rng);
        let mut loss_sum = 0.0;
        let mut batches = 0;
        for batch in order.chunks(config.batch_size) {
            let (loss, grads) = match data.gradients(&params, batch) {
                Ok(r) => r,
                Err(Error::NonFinite(_)) => return Err(Error::Diverged { epoch }),
                Err(e) => return Err(e),
            };
            if !loss.is_finite() {
                return Err(Error::Diverged { epoch });
            }
            adam_step(
                &mut params,
                &grads,
                &mut state,
                config.learning_rate,
                config.weight_decay,
            )?;
            if params.first_non_finite().is_some() {
                return Err(Error::Diverged { epoch });
            }
            loss_sum += loss;
            batches += 1;
        }
        let val_accuracy = val.accuracy(&params)?;
        log.push(EpochRecord {
            epoch,
            train_loss: loss_sum / batches as f64,
            val_accuracy,
        });
        if val_accuracy > best.2 {
            best = (params.clone(), epoch, val_accuracy);
        }
    }
    let (params, best_epoch, best_val_accuracy) = best;
    let test_set = data.subset(&split.test);
    let predicted: Vec<StanceLabel> = test_set.predict_all(&params)?.iter().map(|p| p.label).collect();
    let test = classification_metrics(&predicted, &test_set.golds()?)?;
    Ok(TrainOutcome {
        params,
        log,
        best_epoch,
        best_val_accuracy,
        test,
        split,
    })
}

/// Trains on every labelled post of the corpus.
pub fn train(inputs: &ModelInputs, config: &TrainConfig) -> Result<TrainOutcome> {
    let posts: Vec<&Post> = inputs.corpus.posts().iter().collect();
    let data = Dataset::labelled(&posts, inputs, &config.model)?;
    if data.is_empty() {
        return Err(Error::invalid("corpus has no labelled posts"));
    }
    train_dataset(&data, config)
}

/// Writes the metric log as `epoch,train_loss,val_accuracy`.
pub fn write_metric_log(path: impl AsRef<Path>, log: &[EpochRecord]) -> Result<()> {
    let path = path.as_ref();
    std::fs::write(path, metric_log_csv(log)).map_err(|e| Error::io(path, e))
}

/// Renders the metric log as CSV text.
pub fn metric_log_csv(log: &[EpochRecord]) -> String {
    let mut out = Vec::new();
    writeln!(out, "epoch,train_loss,val_accuracy").expect("write to memory");
    for r in log {
        writeln!(out, "{},{},{}", r.epoch, r.train_loss, r.val_accuracy).expect("write to memory");
    }
    String::from_utf8(out).expect("ascii")
}

/// Validation accuracy of one grid cell.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct SweepCell {
    pub k: usize,
    pub lambda: usize,
    pub val_accuracy: f64,
    pub best_epoch: usize,
}

/// Trains one model per `(k, λ)` cell, in row-major order.
pub fn sweep(inputs: &ModelInputs, base: &TrainConfig, ks: &[usize], lambdas: &[usize]) -> Result<Vec<SweepCell>> {
    if ks.is_empty() || lambdas.is_empty() {
        return Err(Error::invalid("sweep grid is empty"));
    }
    let mut cells = Vec::with_capacity(ks.len() * lambdas.len());
    for &k in ks {
        for &lambda in lambdas {
            let mut config = *base;
            config.model.k = k;
            config.model.lambda = lambda;
            let outcome = train(inputs, &config)?;
            cells.push(SweepCell {
                k,
                lambda,
                val_accuracy: outcome.best_val_accuracy,
                best_epoch: outcome.best_epoch,
            });
        }
    }
    Ok(cells)
}

/// The cell with the highest validation accuracy; the first one wins ties.
pub fn best_cell(cells: &[SweepCell]) -> Option<&SweepCell> {
    cells.iter().fold(None, |best: Option<&SweepCell>, c| match best {
        Some(b) if b.val_accuracy >= c.val_accuracy => Some(b),
        _ => Some(c),
    })
}
