use std::borrow::Cow;
use std::fmt::Write as _;

use log::{debug, info};

use crate::error::{Error, Result};
use crate::nn::loss::squared_loss;
use crate::nn::network::NetworkSpec;
use crate::nn::params::Parameters;
use crate::nn::propagate::{backward_from, forward, forward_predictions};
use crate::nn::sgd::{lr_multipliers, LrPolicy, Sgd};
use crate::scalar::Scalar;
use crate::tensor::Tensor4;

/// Training hyperparameters. Defaults are the reference configuration:
/// base rate 1e-12, batch 32, 10,000 iterations, plain SGD.
#[derive(Debug, Clone, PartialEq)]
pub struct TrainConfig {
    pub base_learning_rate: f64,
    pub batch_size: usize,
    pub iterations: usize,
    pub train_log_window: usize,
    pub test_eval_every: usize,
    pub rng_seed: u64,
    /// Invoke the snapshot callback every this many iterations.
    pub snapshot_every: Option<usize>,
    pub momentum: f64,
    pub weight_decay: f64,
    pub lr_policy: LrPolicy,
    /// Abort once the loss exceeds this multiple of the first iteration's.
    pub divergence_factor: f64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            base_learning_rate: 1e-12,
            batch_size: 32,
            iterations: 10_000,
            train_log_window: 200,
            test_eval_every: 500,
            rng_seed: 0,
            snapshot_every: None,
            momentum: 0.0,
            weight_decay: 0.0,
            lr_policy: LrPolicy::Fixed,
            divergence_factor: 1e6,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.batch_size == 0 || self.iterations == 0 {
            return Err(Error::Validation(
                "batch_size and iterations must be >= 1".into(),
            ));
        }
        if !(self.base_learning_rate > 0.0) || !self.base_learning_rate.is_finite() {
            return Err(Error::Validation(format!(
                "base learning rate must be > 0, got {}",
                self.base_learning_rate
            )));
        }
        if self.train_log_window == 0 || self.test_eval_every == 0 {
            return Err(Error::Validation("logging intervals must be >= 1".into()));
        }
        Ok(())
    }

    /// Total training samples pushed through the network.
    pub fn samples_seen(&self) -> usize {
        self.iterations * self.batch_size
    }

    /// Iterations needed to see `n_samples` once.
    pub fn iterations_per_epoch(&self, n_samples: usize) -> usize {
        n_samples.div_ceil(self.batch_size)
    }
}

/// Inputs and regression targets for one mini-batch.
#[derive(Debug, Clone, PartialEq)]
pub struct Batch<T> {
    pub inputs: Tensor4<T>,
    pub targets: Tensor4<T>,
}

impl<T: Scalar> Batch<T> {
    pub fn new(inputs: Tensor4<T>, targets: Tensor4<T>) -> Result<Self> {
        if inputs.shape().n != targets.shape().n {
            return Err(Error::mismatch(
                format!("{} targets", inputs.shape().n),
                targets.shape().n,
            ));
        }
        Ok(Batch { inputs, targets })
    }

    pub fn len(&self) -> usize {
        self.inputs.shape().n
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

/// Cuts a sample set into batches of exactly `batch_size`, wrapping around
/// to the start to fill the final batch.
pub fn make_batches<T: Scalar>(
    inputs: &Tensor4<T>,
    targets: &Tensor4<T>,
    batch_size: usize,
) -> Result<Vec<Batch<T>>> {
    let n = inputs.shape().n;
    if n != targets.shape().n {
        return Err(Error::mismatch(format!("{n} targets"), targets.shape().n));
    }
    if batch_size == 0 {
        return Err(Error::Validation("batch_size must be >= 1".into()));
    }
    let count = n.div_ceil(batch_size);
    (0..count)
        .map(|b| {
            let idx: Vec<usize> = (0..batch_size).map(|k| (b * batch_size + k) % n).collect();
            Batch::new(inputs.gather(&idx)?, targets.gather(&idx)?)
        })
        .collect()
}

/// Squared loss over a sample set, evaluated `chunk` samples at a time.
pub fn dataset_loss<T: Scalar>(
    net: &NetworkSpec,
    params: &Parameters<T>,
    set: &Batch<T>,
    chunk: usize,
) -> Result<f64> {
    let n = set.len();
    if n == 0 {
        return Err(Error::Empty("loss over an empty sample set".into()));
    }
    let chunk = chunk.max(1);
    let mut total = 0.0;
    for start in (0..n).step_by(chunk) {
        let idx: Vec<usize> = (start..(start + chunk).min(n)).collect();
        let pred = forward_predictions(net, params, &set.inputs.gather(&idx)?)?;
        let (loss, _) = squared_loss(&pred, &set.targets.gather(&idx)?)?;
        total += loss.as_f64() * idx.len() as f64;
    }
    Ok(total / n as f64)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LossRecord {
    pub iteration: usize,
    pub train_loss: Option<f64>,
    pub test_loss: Option<f64>,
}

/// Windowed training loss and periodic test loss, keyed by iteration.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct LossHistory {
    pub records: Vec<LossRecord>,
}

impl LossHistory {
    fn record(&mut self, iteration: usize, train: Option<f64>, test: Option<f64>) {
        if train.is_none() && test.is_none() {
            return;
        }
        self.records.push(LossRecord {
            iteration,
            train_loss: train,
            test_loss: test,
        });
    }

    pub const CSV_HEADER: &'static str = "iteration,train_loss,test_loss";

    /// `iteration,train_loss,test_loss` with empty cells for absent values.
    pub fn to_csv(&self) -> String {
        let mut out = String::from(Self::CSV_HEADER);
        out.push('\n');
        let cell = |v: Option<f64>| v.map(|x| x.to_string()).unwrap_or_default();
        for r in &self.records {
            let _ = writeln!(out, "{},{},{}", r.iteration, cell(r.train_loss), cell(r.test_loss));
        }
        out
    }

    pub fn from_csv(text: &str) -> Result<Self> {
        let mut lines = text.lines();
        match lines.next() {
            Some(h) if h.trim() == Self::CSV_HEADER => {}
            other => {
                return Err(Error::Format(format!(
                    "expected header {:?}, got {other:?}",
                    Self::CSV_HEADER
                )))
            }
        }
        let mut records = Vec::new();
        for (i, line) in lines.enumerate().filter(|(_, l)| !l.trim().is_empty()) {
            let cols: Vec<&str> = line.split(',').collect();
            let bad = |m: String| Error::Format(format!("loss history line {}: {m}", i + 2));
            if cols.len() != 3 {
                return Err(bad(format!("expected 3 columns, got {}", cols.len())));
            }
            let opt = |s: &str| -> Result<Option<f64>> {
                if s.is_empty() {
                    Ok(None)
                } else {
                    s.parse().map(Some).map_err(|e| bad(format!("{e}")))
                }
            };
            records.push(LossRecord {
                iteration: cols[0].parse().map_err(|e| bad(format!("{e}")))?,
                train_loss: opt(cols[1])?,
                test_loss: opt(cols[2])?,
            });
        }
        Ok(LossHistory { records })
    }

    pub fn train_losses(&self) -> impl Iterator<Item = (usize, f64)> + '_ {
        self.records
            .iter()
            .filter_map(|r| r.train_loss.map(|l| (r.iteration, l)))
    }

    pub fn test_losses(&self) -> impl Iterator<Item = (usize, f64)> + '_ {
        self.records
            .iter()
            .filter_map(|r| r.test_loss.map(|l| (r.iteration, l)))
    }
}

#[derive(Debug, Clone)]
pub struct TrainOutcome<T> {
    pub params: Parameters<T>,
    pub history: LossHistory,
    /// Mini-batch loss of every iteration, in order.
    pub iteration_losses: Vec<f64>,
}

/// Runs `config.iterations` of forward / loss / backward / SGD, cycling
/// through `batches` in order.
pub fn train<T: Scalar>(
    net: &NetworkSpec,
    params: Parameters<T>,
    batches: &[Batch<T>],
    config: &TrainConfig,
    test_set: Option<&Batch<T>>,
) -> Result<TrainOutcome<T>> {
    train_with_snapshots(net, params, batches, config, test_set, |_, _| Ok(()))
}

/// Like [`train`], calling `on_snapshot(iteration, params)` every
/// `config.snapshot_every` iterations.
pub fn train_with_snapshots<T: Scalar>(
    net: &NetworkSpec,
    params: Parameters<T>,
    batches: &[Batch<T>],
    config: &TrainConfig,
    test_set: Option<&Batch<T>>,
    on_snapshot: impl FnMut(usize, &Parameters<T>) -> Result<()>,
) -> Result<TrainOutcome<T>> {
    let mut source = batches;
    train_from_source(net, params, &mut source, config, test_set, on_snapshot)
}

/// Supplies the mini-batches a training run cycles through.
pub trait BatchSource<T: Clone> {
    /// Distinct mini-batches in one pass.
    fn batch_count(&self) -> usize;
    /// The `index`-th mini-batch, `index < batch_count()`.
    fn batch(&mut self, index: usize) -> Result<Cow<'_, Batch<T>>>;
}

impl<T: Clone> BatchSource<T> for &[Batch<T>] {
    fn batch_count(&self) -> usize {
        self.len()
    }

    fn batch(&mut self, index: usize) -> Result<Cow<'_, Batch<T>>> {
        Ok(Cow::Borrowed(&self[index]))
    }
}

/// Like [`train_with_snapshots`], drawing batches from any [`BatchSource`].
pub fn train_from_source<T: Scalar>(
    net: &NetworkSpec,
    mut params: Parameters<T>,
    batches: &mut impl BatchSource<T>,
    config: &TrainConfig,
    test_set: Option<&Batch<T>>,
    mut on_snapshot: impl FnMut(usize, &Parameters<T>) -> Result<()>,
) -> Result<TrainOutcome<T>> {
    config.validate()?;
    params.check_matches(net)?;
    let count = batches.batch_count();
    if count == 0 {
        return Err(Error::Empty("no training batches".into()));
    }
    let multipliers = lr_multipliers(net);
    // Layers below the first one with a nonzero rate never change, so the
    // backward pass can stop there.
    let first_trainable = multipliers
        .iter()
        .position(|&(w, b)| w != 0.0 || b != 0.0);
    let mut optimizer = Sgd::new(config.momentum, config.weight_decay);
    let mut history = LossHistory::default();
    let mut iteration_losses = Vec::with_capacity(config.iterations);
    let mut window_sum = 0.0;
    let mut window_len = 0usize;
    let mut initial_loss = None;

    for iteration in 1..=config.iterations {
        let batch = batches.batch((iteration - 1) % count)?;
        let acts = forward(net, &params, &batch.inputs)?;
        let (loss, grad) = squared_loss(acts.predictions(), &batch.targets)?;
        drop(batch);
        let loss = loss.as_f64();
        let reference = *initial_loss.get_or_insert(loss);
        if !loss.is_finite() || (reference > 0.0 && loss > config.divergence_factor * reference) {
            return Err(Error::Divergence { iteration, loss });
        }
        iteration_losses.push(loss);
        window_sum += loss;
        window_len += 1;

        if let Some(first) = first_trainable {
            let grads = backward_from(net, &params, &acts, &grad, first)?;
            let rate = config.lr_policy.rate_at(config.base_learning_rate, iteration);
            optimizer
                .step(&mut params, &grads, rate, &multipliers, iteration)
                .map_err(|e| match e {
                    Error::Divergence { iteration, .. } => Error::Divergence { iteration, loss },
                    other => other,
                })?;
        }

        let train_point = (iteration % config.train_log_window == 0).then(|| {
            let mean = window_sum / window_len as f64;
            window_sum = 0.0;
            window_len = 0;
            mean
        });
        let test_point = match test_set {
            Some(set) if iteration % config.test_eval_every == 0 => {
                Some(dataset_loss(net, &params, set, config.batch_size)?)
            }
            _ => None,
        };
        if train_point.is_some() || test_point.is_some() {
            info!(
                "iteration {iteration}: train {:?} test {:?}",
                train_point, test_point
            );
        }
        history.record(iteration, train_point, test_point);
        if let Some(every) = config.snapshot_every {
            if every > 0 && iteration % every == 0 {
                debug!("snapshot at iteration {iteration}");
                on_snapshot(iteration, &params)?;
            }
        }
    }
    Ok(TrainOutcome {
        params,
        history,
        iteration_losses,
    })
}
