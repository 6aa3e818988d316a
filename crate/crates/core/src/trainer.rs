//! ADAM with global-norm clipping over truncated-BPTT windows.

use std::fmt;
use std::time::Instant;

use serde::{Deserialize, Serialize};

use crate::corpus::{batchify, EncodedCorpus};
use crate::error::{Error, Result};
use crate::eval::perplexity;
use crate::models::Model;
use crate::numerics::{Scalar, Tensor};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub learning_rate: f64,
    pub batch_size: usize,
    pub unroll: usize,
    pub clip_norm: f64,
    pub epochs: usize,
    /// Validate every this many batches (and once more at the end).
    pub validate_every: usize,
    /// Parallel lanes used for dev perplexity.
    pub eval_lanes: usize,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            learning_rate: 1e-3,
            batch_size: 64,
            unroll: 20,
            clip_norm: 5.0,
            epochs: 1,
            validate_every: 1000,
            eval_lanes: 64,
            seed: 1,
        }
    }
}

impl TrainConfig {
    pub fn violations(&self) -> Vec<String> {
        let mut v = Vec::new();
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            v.push(format!("learning rate must be positive, got {}", self.learning_rate));
        }
        if !(self.clip_norm > 0.0 && self.clip_norm.is_finite()) {
            v.push(format!("clip norm must be positive, got {}", self.clip_norm));
        }
        for (name, value) in [
            ("batch size", self.batch_size),
            ("unroll", self.unroll),
            ("validation cadence", self.validate_every),
            ("evaluation lanes", self.eval_lanes),
        ] {
            if value == 0 {
                v.push(format!("{name} must be positive"));
            }
        }
        v
    }

    pub fn validate(&self) -> Result<()> {
        let v = self.violations();
        if v.is_empty() {
            Ok(())
        } else {
            Err(Error::Config(v))
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct AdamState<T> {
    m: Vec<Vec<T>>,
    v: Vec<Vec<T>>,
    step: u64,
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
}

impl<T: Scalar> AdamState<T> {
    pub fn new(params: &[Tensor<T>], learning_rate: f64) -> Self {
        AdamState {
            m: params.iter().map(|p| vec![T::zero(); p.len()]).collect(),
            v: params.iter().map(|p| vec![T::zero(); p.len()]).collect(),
            step: 0,
            learning_rate,
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
        }
    }

    pub fn step(&self) -> u64 {
        self.step
    }
}

/// One bias-corrected ADAM update.
pub fn adam_step<T: Scalar>(params: &mut [Tensor<T>], grads: &[Vec<T>], state: &mut AdamState<T>) -> Result<()> {
    if params.len() != grads.len() || params.len() != state.m.len() {
        return Err(Error::shape(
            "adam_step",
            format!(
                "{} parameters, {} gradients, {} moment buffers",
                params.len(),
                grads.len(),
                state.m.len()
            ),
        ));
    }
    for (i, (p, g)) in params.iter().zip(grads).enumerate() {
        if p.len() != g.len() || p.len() != state.m[i].len() {
            return Err(Error::shape(
                "adam_step",
                format!("parameter {i} has {} values, gradient {}", p.len(), g.len()),
            ));
        }
    }
    state.step += 1;
    let t = state.step as i32;
    let b1 = T::of(state.beta1);
    let b2 = T::of(state.beta2);
    let one = T::one();
    let c1 = T::of(1.0 - state.beta1.powi(t));
    let c2 = T::of(1.0 - state.beta2.powi(t));
    let lr = T::of(state.learning_rate);
    let eps = T::of(state.epsilon);
    for ((p, g), (m, v)) in params
        .iter_mut()
        .zip(grads)
        .zip(state.m.iter_mut().zip(state.v.iter_mut()))
    {
        for (((x, &gi), mi), vi) in p.values_mut().iter_mut().zip(g).zip(m.iter_mut()).zip(v.iter_mut()) {
            *mi = b1 * *mi + (one - b1) * gi;
            *vi = b2 * *vi + (one - b2) * gi * gi;
            let m_hat = *mi / c1;
            let v_hat = *vi / c2;
            *x = *x - lr * m_hat / (v_hat.sqrt() + eps);
        }
    }
    Ok(())
}

/// Joint 2-norm over all gradients.
pub fn global_norm<T: Scalar>(grads: &[Vec<T>]) -> f64 {
    grads
        .iter()
        .flat_map(|g| g.iter())
        .map(|x| {
            let x = x.f64();
            x * x
        })
        .sum::<f64>()
        .sqrt()
}

/// Rescales all gradients by `max_norm / norm` when their joint norm exceeds
/// `max_norm`. Returns the norm before clipping.
pub fn clip_global_norm<T: Scalar>(grads: &mut [Vec<T>], names: &[&str], max_norm: f64) -> Result<f64> {
    for (i, g) in grads.iter().enumerate() {
        if g.iter().any(|x| !x.is_finite()) {
            let name = names.get(i).map_or_else(|| format!("parameter {i}"), |n| n.to_string());
            return Err(Error::NonFinite(format!("gradient of {name}")));
        }
    }
    let norm = global_norm(grads);
    if norm > max_norm {
        let scale = T::of(max_norm / norm);
        for g in grads.iter_mut() {
            for x in g.iter_mut() {
                *x = *x * scale;
            }
        }
    }
    Ok(norm)
}

/// Index of the lowest value seen so far.
#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct BestTracker {
    best: Option<(usize, f64)>,
    seen: usize,
}

impl BestTracker {
    /// Records the next value; true when it is a new minimum.
    pub fn observe(&mut self, value: f64) -> bool {
        let index = self.seen;
        self.seen += 1;
        match self.best {
            Some((_, b)) if !(value < b) => false,
            _ => {
                self.best = Some((index, value));
                true
            }
        }
    }

    pub fn best(&self) -> Option<(usize, f64)> {
        self.best
    }
}

/// One validation record.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LogEntry {
    pub step: usize,
    /// Mean training loss since the previous validation; `None` before any
    /// batch has run.
    pub train_loss: Option<f64>,
    pub dev_ppl: f64,
    pub seconds: f64,
}

impl LogEntry {
    pub const HEADER: &'static str = "step\ttrain_loss\tdev_ppl\tseconds";
}

impl fmt::Display for LogEntry {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self.train_loss {
            Some(l) => write!(f, "{}\t{l:.6}\t{:.6}\t{:.3}", self.step, self.dev_ppl, self.seconds),
            None => write!(f, "{}\t-\t{:.6}\t{:.3}", self.step, self.dev_ppl, self.seconds),
        }
    }
}

#[derive(Debug, Clone)]
pub struct TrainOutcome<T> {
    /// Parameters with the lowest dev perplexity.
    pub best: Model<T>,
    pub best_step: usize,
    pub best_dev_ppl: f64,
    pub log: Vec<LogEntry>,
    pub steps: usize,
}

/// Trains `model` in place and returns the best validated snapshot.
/// `on_validation` sees every log entry as it is produced.
pub fn train<T: Scalar>(
    mut model: Model<T>,
    train_corpus: &EncodedCorpus,
    dev_corpus: &EncodedCorpus,
    cfg: &TrainConfig,
    mut on_validation: impl FnMut(&LogEntry),
) -> Result<TrainOutcome<T>> {
    cfg.validate()?;
    let vocab = model.config().vocab_size;
    for (name, c) in [("training", train_corpus), ("dev", dev_corpus)] {
        if let Some(max) = c.max_id() {
            if max as usize >= vocab {
                return Err(Error::InvalidArgument(format!(
                    "{name} corpus id {max} out of range for vocabulary of {vocab}"
                )));
            }
        }
    }
    let batches = batchify(train_corpus, cfg.batch_size, cfg.unroll)?;
    let names: Vec<&'static str> = model.params().specs().iter().map(|s| s.name).collect();
    let mut adam = AdamState::new(model.params().tensors(), cfg.learning_rate);
    let started = Instant::now();
    let mut tracker = BestTracker::default();
    let mut best = model.clone();
    let mut best_step = 0;
    let mut log = Vec::new();
    let mut step = 0usize;
    let mut loss_sum = 0.0f64;
    let mut loss_count = 0usize;

    let mut validate = |model: &Model<T>, step: usize, loss_sum: &mut f64, loss_count: &mut usize| -> Result<bool> {
        let dev = perplexity(model, dev_corpus, cfg.eval_lanes)?;
        let entry = LogEntry {
            step,
            train_loss: (*loss_count > 0).then(|| *loss_sum / *loss_count as f64),
            dev_ppl: dev.perplexity,
            seconds: started.elapsed().as_secs_f64(),
        };
        *loss_sum = 0.0;
        *loss_count = 0;
        on_validation(&entry);
        log.push(entry);
        Ok(tracker.observe(dev.perplexity))
    };

    let mut validated_at = None;
    for _epoch in 0..cfg.epochs {
        let mut state = model.initial_state(cfg.batch_size);
        for window in &batches.windows {
            let (loss, mut grads, next) = model.window_loss(window, &state)?;
            let loss = loss.f64();
            if !loss.is_finite() {
                return Err(Error::NonFinite(format!(
                    "training loss {loss} at step {} (batch offset {})",
                    step + 1,
                    window.offset
                )));
            }
            clip_global_norm(&mut grads, &names, cfg.clip_norm)?;
            adam_step(model.params_mut().tensors_mut(), &grads, &mut adam)?;
            state = next;
            step += 1;
            loss_sum += loss;
            loss_count += 1;
            if step % cfg.validate_every == 0 {
                if validate(&model, step, &mut loss_sum, &mut loss_count)? {
                    best = model.clone();
                    best_step = step;
                }
                validated_at = Some(step);
            }
        }
    }
    if validated_at != Some(step) && validate(&model, step, &mut loss_sum, &mut loss_count)? {
        best = model.clone();
        best_step = step;
    }
    let best_dev_ppl = tracker.best().map(|(_, p)| p).expect("validated at least once");
    Ok(TrainOutcome {
        best,
        best_step,
        best_dev_ppl,
        log,
        steps: step,
    })
}
