//! Mini-batch SGD on the mean-KL objective.

use ndarray::{s, Array2, ArrayView2};
use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use super::network::{gather_rows, NetworkParams};
use crate::error::{Error, Result};
use crate::rng::rng_for;
use crate::scalar::Scalar;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub learning_rate: f64,
    pub batch_size: usize,
    pub max_epochs: usize,
    /// Epochs without validation improvement tolerated before stopping.
    pub early_stop_patience: usize,
    pub rng_seed: u64,
    pub l2_penalty: f64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            learning_rate: 0.1,
            batch_size: 64,
            max_epochs: 20,
            early_stop_patience: 3,
            rng_seed: 0,
            l2_penalty: 0.0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.learning_rate >= 0.0 && self.learning_rate.is_finite()) {
            return Err(Error::Config(format!(
                "learning_rate must be a finite non-negative number, got {}",
                self.learning_rate
            )));
        }
        if self.batch_size == 0 {
            return Err(Error::Config("batch_size must be at least 1".into()));
        }
        if !(self.l2_penalty >= 0.0 && self.l2_penalty.is_finite()) {
            return Err(Error::Config(format!(
                "l2_penalty must be non-negative, got {}",
                self.l2_penalty
            )));
        }
        Ok(())
    }
}

/// Training targets: full distributions, or class indices standing for one-hot rows.
#[derive(Debug, Clone, Copy)]
pub enum Targets<'a, T> {
    Dense(ArrayView2<'a, T>),
    Classes { labels: &'a [usize], classes: usize },
}

impl<T: Scalar> Targets<'_, T> {
    pub fn len(&self) -> usize {
        match self {
            Targets::Dense(t) => t.nrows(),
            Targets::Classes { labels, .. } => labels.len(),
        }
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn dim(&self) -> usize {
        match self {
            Targets::Dense(t) => t.ncols(),
            Targets::Classes { classes, .. } => *classes,
        }
    }

    fn fill(&self, indices: &[usize], out: &mut Array2<T>) {
        match self {
            Targets::Dense(t) => gather_rows(*t, indices, out),
            Targets::Classes { labels, .. } => {
                out.fill(T::zero());
                for (r, &i) in indices.iter().enumerate() {
                    out[(r, labels[i])] = T::one();
                }
            }
        }
    }
}

/// Aligned inputs and targets.
#[derive(Debug, Clone, Copy)]
pub struct Samples<'a, T> {
    pub inputs: ArrayView2<'a, T>,
    pub targets: Targets<'a, T>,
}

impl<'a, T: Scalar> Samples<'a, T> {
    pub fn new(inputs: ArrayView2<'a, T>, targets: Targets<'a, T>) -> Result<Self> {
        Error::check_dim("target count", inputs.nrows(), targets.len())?;
        if let Targets::Classes { labels, classes } = targets {
            if let Some(&bad) = labels.iter().find(|&&l| l >= classes) {
                return Err(Error::InvalidArgument(format!(
                    "class label {bad} out of range for {classes} classes"
                )));
            }
        }
        Ok(Self { inputs, targets })
    }

    pub fn len(&self) -> usize {
        self.inputs.nrows()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Mean KL of `net` over all samples.
    pub fn mean_loss(&self, net: &NetworkParams<T>) -> T {
        const CHUNK: usize = 2048;
        let n = self.len();
        if n == 0 {
            return T::zero();
        }
        let mut total = T::zero();
        let mut targets = Array2::zeros((CHUNK.min(n), self.targets.dim()));
        let mut start = 0;
        while start < n {
            let end = (start + CHUNK).min(n);
            let idx: Vec<usize> = (start..end).collect();
            let rows = end - start;
            self.targets.fill(&idx, &mut targets);
            let (loss, _) = net.objective(
                self.inputs.slice(s![start..end, ..]),
                targets.slice(s![..rows, ..]),
                T::zero(),
            );
            total += loss * T::from_usize(rows).unwrap();
            start = end;
        }
        total / T::from_usize(n).unwrap()
    }
}

/// Per-epoch losses of a training run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainHistory {
    /// Mean mini-batch data loss seen during each epoch.
    pub train_loss: Vec<f64>,
    /// Validation mean KL after each epoch (empty when no validation data was given).
    pub val_loss: Vec<f64>,
    /// Epoch (0-based) whose parameters were returned; `None` if no epoch ran.
    pub best_epoch: Option<usize>,
}

#[derive(Debug, Clone)]
pub struct TrainOutcome<T> {
    pub net: NetworkParams<T>,
    pub history: TrainHistory,
}

fn check_shapes<T: Scalar>(net: &NetworkParams<T>, s: &Samples<T>) -> Result<()> {
    if s.is_empty() {
        return Ok(());
    }
    Error::check_dim("training input", net.input_dim(), s.inputs.ncols())?;
    Error::check_dim("training target", net.output_dim(), s.targets.dim())
}

/// Trains a copy of `init` by mini-batch SGD and returns the parameters of the
/// epoch with the lowest validation loss (training loss when `val` is empty).
///
/// Shuffling draws from a stream derived from `cfg.rng_seed`, so identical
/// inputs reproduce the run bit for bit.
pub fn train<T: Scalar>(
    init: &NetworkParams<T>,
    data: Samples<T>,
    val: Samples<T>,
    cfg: &TrainConfig,
) -> Result<TrainOutcome<T>> {
    cfg.validate()?;
    if data.is_empty() {
        return Err(Error::Empty("training set"));
    }
    check_shapes(init, &data)?;
    check_shapes(init, &val)?;

    let lr = T::lit(cfg.learning_rate);
    let l2 = T::lit(cfg.l2_penalty);
    let batch = cfg.batch_size.min(data.len());
    let mut rng = rng_for(cfg.rng_seed, "shuffle");
    let mut order: Vec<usize> = (0..data.len()).collect();
    let mut xb = Array2::zeros((batch, init.input_dim()));
    let mut tb = Array2::zeros((batch, init.output_dim()));

    let mut net = init.clone();
    let mut best = net.clone();
    let mut best_score = f64::INFINITY;
    let mut history = TrainHistory {
        train_loss: Vec::new(),
        val_loss: Vec::new(),
        best_epoch: None,
    };
    let mut since_best = 0;

    for epoch in 0..cfg.max_epochs {
        order.shuffle(&mut rng);
        let mut epoch_loss = 0.0;
        for chunk in order.chunks(batch) {
            let rows = chunk.len();
            gather_rows(data.inputs, chunk, &mut xb);
            data.targets.fill(chunk, &mut tb);
            let (loss, grads) = net.loss_and_gradient(
                xb.slice(s![..rows, ..]),
                tb.slice(s![..rows, ..]),
                l2,
            );
            let loss = loss.as_f64();
            if !loss.is_finite() {
                return Err(Error::Divergence { epoch, loss });
            }
            epoch_loss += loss * rows as f64;
            net.apply_gradient(&grads, lr);
        }
        let train_loss = epoch_loss / data.len() as f64;
        history.train_loss.push(train_loss);

        let score = if val.is_empty() {
            train_loss
        } else {
            let v = val.mean_loss(&net).as_f64();
            if !v.is_finite() {
                return Err(Error::Divergence { epoch, loss: v });
            }
            history.val_loss.push(v);
            v
        };
        log::debug!("epoch {epoch}: train {train_loss:.5} score {score:.5}");

        if score < best_score {
            best_score = score;
            best.clone_from(&net);
            history.best_epoch = Some(epoch);
            since_best = 0;
        } else {
            since_best += 1;
            if since_best > cfg.early_stop_patience {
                break;
            }
        }
    }

    if history.best_epoch.is_none() {
        best = net;
    }
    Ok(TrainOutcome { net: best, history })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::math::network::Activation;
    use ndarray::Array2;

    /// Two well-separated clusters on a line; a linear softmax separates them.
    fn separable(n: usize) -> (Array2<f64>, Vec<usize>) {
        let mut x = Array2::zeros((n, 2));
        let mut y = Vec::with_capacity(n);
        for i in 0..n {
            let class = i % 2;
            let offset = (i / 2) as f64 / n as f64;
            x[(i, 0)] = if class == 0 { -2.0 - offset } else { 2.0 + offset };
            x[(i, 1)] = 1.0;
            y.push(class);
        }
        (x, y)
    }

    fn empty_samples<'a>(dim: usize, classes: usize) -> Samples<'a, f64> {
        Samples {
            inputs: ArrayView2::from_shape((0, dim), &[]).unwrap(),
            targets: Targets::Classes { labels: &[], classes },
        }
    }

    #[test]
    fn separable_toy_converges() {
        let (x, y) = separable(100);
        let data = Samples::new(x.view(), Targets::Classes { labels: &y, classes: 2 }).unwrap();
        let init = NetworkParams::<f64>::zeros(&[2, 2], Activation::Tanh).unwrap();
        let cfg = TrainConfig {
            learning_rate: 0.5,
            batch_size: 10,
            max_epochs: 200,
            early_stop_patience: 200,
            rng_seed: 1,
            l2_penalty: 0.0,
        };
        let out = train(&init, data, empty_samples(2, 2), &cfg).unwrap();
        assert!(data.mean_loss(&out.net) < 0.05);
    }

    #[test]
    fn zero_learning_rate_keeps_parameters() {
        let (x, y) = separable(40);
        let data = Samples::new(x.view(), Targets::Classes { labels: &y, classes: 2 }).unwrap();
        let init = NetworkParams::<f64>::random(&[2, 4, 2], Activation::Relu, 5).unwrap();
        let cfg = TrainConfig {
            learning_rate: 0.0,
            max_epochs: 7,
            ..TrainConfig::default()
        };
        let out = train(&init, data, data, &cfg).unwrap();
        assert_eq!(out.net, init);
    }

    #[test]
    fn reproducible_history() {
        let (x, y) = separable(64);
        let data = Samples::new(x.view(), Targets::Classes { labels: &y, classes: 2 }).unwrap();
        let init = NetworkParams::<f64>::random(&[2, 5, 2], Activation::Tanh, 2).unwrap();
        let cfg = TrainConfig {
            max_epochs: 10,
            batch_size: 8,
            rng_seed: 99,
            ..TrainConfig::default()
        };
        let a = train(&init, data, data, &cfg).unwrap();
        let b = train(&init, data, data, &cfg).unwrap();
        assert_eq!(a.history, b.history);
        assert_eq!(a.net, b.net);
    }

    #[test]
    fn divergence_is_reported() {
        let (mut x, y) = separable(16);
        x.mapv_inplace(|v| v * 1e200);
        let data = Samples::new(x.view(), Targets::Classes { labels: &y, classes: 2 }).unwrap();
        let init = NetworkParams::<f64>::random(&[2, 2], Activation::Tanh, 2).unwrap();
        let cfg = TrainConfig {
            learning_rate: 1e200,
            ..TrainConfig::default()
        };
        let err = train(&init, data, empty_samples(2, 2), &cfg).unwrap_err();
        assert!(matches!(err, Error::Divergence { .. }), "{err}");
    }

    #[test]
    fn empty_training_set_is_an_error() {
        let init = NetworkParams::<f64>::zeros(&[2, 2], Activation::Tanh).unwrap();
        let err = train(&init, empty_samples(2, 2), empty_samples(2, 2), &TrainConfig::default());
        assert!(matches!(err, Err(Error::Empty(_))));
    }

    #[test]
    fn rejects_bad_config() {
        let cfg = TrainConfig {
            batch_size: 0,
            ..TrainConfig::default()
        };
        assert!(cfg.validate().is_err());
        let cfg = TrainConfig {
            learning_rate: -1.0,
            ..TrainConfig::default()
        };
        assert!(cfg.validate().is_err());
    }

    #[test]
    fn out_of_range_label_rejected() {
        let x = Array2::<f64>::zeros((2, 2));
        let labels = [0, 3];
        assert!(Samples::new(x.view(), Targets::Classes { labels: &labels, classes: 2 }).is_err());
    }
}
