//! Mini-batch Adam training with validation-threshold stopping.

use std::time::Instant;

use rand::seq::SliceRandom;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::nn::{accumulate_gradients, forward, init_network, Architecture, GradientSet, ParameterSet};
use crate::rng::{stream, stream_rng};
use crate::traces::{EncodedCorpus, TracePair, TraceSet};

pub const ENGINE_VERSION: &str = concat!("mlds-", env!("CARGO_PKG_VERSION"));

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainingConfig {
    pub learning_rate: f32,
    pub beta1: f32,
    pub beta2: f32,
    pub epsilon: f32,
    pub batch_size: usize,
    pub max_epochs: usize,
    pub val_threshold: f64,
    pub eval_threshold: f64,
    /// Global gradient-norm clip; `None` disables clipping.
    pub clip_norm: Option<f32>,
    pub seed: u64,
}

impl Default for TrainingConfig {
    fn default() -> Self {
        TrainingConfig {
            learning_rate: 1e-3,
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
            batch_size: 16,
            max_epochs: 10_000,
            val_threshold: 1e-5,
            eval_threshold: 1e-5,
            clip_norm: Some(5.0),
            seed: 0,
        }
    }
}

impl TrainingConfig {
    /// Relaxed thresholds and a bounded epoch budget for workstation-scale runs.
    /// Smaller batches and a larger step than the defaults: with only 128
    /// training sequences, batch 16 gives too few updates per epoch.
    pub fn desk(seed: u64) -> Self {
        TrainingConfig {
            learning_rate: 5e-3,
            batch_size: 4,
            max_epochs: 500,
            val_threshold: 1e-3,
            eval_threshold: 1e-3,
            seed,
            ..Default::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        let ok = self.learning_rate > 0.0
            && (0.0..1.0).contains(&self.beta1)
            && (0.0..1.0).contains(&self.beta2)
            && self.epsilon > 0.0
            && self.batch_size >= 1
            && self.val_threshold > 0.0
            && self.eval_threshold > 0.0
            && self.clip_norm.is_none_or(|c| c > 0.0);
        if ok {
            Ok(())
        } else {
            Err(Error::invalid(format!("invalid training config: {self:?}")))
        }
    }
}

/// First and second moment estimates for Adam.
#[derive(Debug, Clone, PartialEq)]
pub struct Moments {
    pub m: Vec<f32>,
    pub v: Vec<f32>,
}

impl Moments {
    pub fn zeros(len: usize) -> Self {
        Moments {
            m: vec![0.0; len],
            v: vec![0.0; len],
        }
    }
}

/// One Adam update at step `t` (1-based), in place.
pub fn adam_step(params: &mut [f32], grads: &[f32], moments: &mut Moments, t: u64, cfg: &TrainingConfig) -> Result<()> {
    let n = params.len();
    if grads.len() != n || moments.m.len() != n || moments.v.len() != n {
        return Err(Error::DimensionMismatch {
            context: "adam step",
            expected: n,
            actual: grads.len(),
        });
    }
    if t == 0 {
        return Err(Error::invalid("adam step count starts at 1"));
    }
    let (b1, b2) = (cfg.beta1, cfg.beta2);
    let bc1 = (1.0 - (b1 as f64).powf(t as f64)) as f32;
    let bc2 = (1.0 - (b2 as f64).powf(t as f64)) as f32;
    for i in 0..n {
        let g = grads[i];
        let m = b1 * moments.m[i] + (1.0 - b1) * g;
        let v = b2 * moments.v[i] + (1.0 - b2) * g * g;
        moments.m[i] = m;
        moments.v[i] = v;
        params[i] -= cfg.learning_rate * (m / bc1) / ((v / bc2).sqrt() + cfg.epsilon);
    }
    Ok(())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum TrainingStatus {
    Converged,
    Timeout,
    Diverged,
}

/// Everything about a training run except the weights.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainingMetadata {
    pub label: String,
    pub status: TrainingStatus,
    pub arch: Architecture,
    pub seed: u64,
    pub epochs_completed: usize,
    pub train_loss_history: Vec<f64>,
    pub val_loss_history: Vec<f64>,
    pub wall_time: f64,
    pub engine_version: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub work_unit_id: Option<String>,
}

impl TrainingMetadata {
    pub fn final_val_loss(&self) -> Option<f64> {
        self.val_loss_history.last().copied()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainedModelRecord {
    pub params: ParameterSet<f32>,
    pub meta: TrainingMetadata,
}

/// Squared error summed over a sequence, and the number of terms.
fn sequence_sse(params: &ParameterSet<f32>, input: &[f32], target: &[f32]) -> Result<(f64, usize)> {
    let cache = forward(params, input)?;
    let out = cache.outputs();
    if out.len() != target.len() {
        return Err(Error::DimensionMismatch {
            context: "corpus targets",
            expected: out.len(),
            actual: target.len(),
        });
    }
    let sse = out
        .iter()
        .zip(target)
        .map(|(&y, &t)| {
            let d = (y - t) as f64;
            d * d
        })
        .sum();
    Ok((sse, out.len()))
}

/// Mean squared error over every step and component of the corpus.
pub fn corpus_loss(params: &ParameterSet<f32>, corpus: &EncodedCorpus) -> Result<f64> {
    if corpus.is_empty() {
        return Err(Error::Empty("evaluation corpus"));
    }
    check_dims(&params.arch, corpus)?;
    let mut sse = 0.0;
    let mut count = 0;
    for (x, t) in corpus.inputs.iter().zip(&corpus.targets) {
        let (s, n) = sequence_sse(params, x, t)?;
        sse += s;
        count += n;
    }
    Ok(if count == 0 { 0.0 } else { sse / count as f64 })
}

/// Loss of `params` on raw trace pairs, encoded the way `set` encodes them.
pub fn evaluate(params: &ParameterSet<f32>, set: &TraceSet, pairs: &[TracePair]) -> Result<f64> {
    let encoding = set.spec.oracle().encoding();
    corpus_loss(params, &EncodedCorpus::new(pairs, encoding))
}

fn check_dims(arch: &Architecture, corpus: &EncodedCorpus) -> Result<()> {
    if corpus.input_dim != arch.input_dim {
        return Err(Error::DimensionMismatch {
            context: "corpus input width",
            expected: arch.input_dim,
            actual: corpus.input_dim,
        });
    }
    if corpus.output_dim != arch.output_dim {
        return Err(Error::DimensionMismatch {
            context: "corpus output width",
            expected: arch.output_dim,
            actual: corpus.output_dim,
        });
    }
    Ok(())
}

pub fn train(arch: Architecture, traces: &TraceSet, cfg: &TrainingConfig) -> Result<TrainedModelRecord> {
    let encoding = traces.spec.oracle().encoding();
    let train_set = EncodedCorpus::new(&traces.train, encoding);
    let val_set = EncodedCorpus::new(&traces.val, encoding);
    train_encoded(arch, &train_set, &val_set, cfg, traces.spec.source.to_string())
}

pub fn train_encoded(
    arch: Architecture,
    train_set: &EncodedCorpus,
    val_set: &EncodedCorpus,
    cfg: &TrainingConfig,
    label: String,
) -> Result<TrainedModelRecord> {
    cfg.validate()?;
    arch.validate()?;
    check_dims(&arch, train_set)?;
    check_dims(&arch, val_set)?;
    if train_set.is_empty() {
        return Err(Error::Empty("training corpus"));
    }
    let started = Instant::now();
    let mut params = init_network(arch, cfg.seed)?;
    let mut moments = Moments::zeros(params.values.len());
    let mut grads = GradientSet::zeros(arch);
    let mut order: Vec<usize> = (0..train_set.len()).collect();
    let mut step = 0u64;
    let mut train_hist = Vec::new();
    let mut val_hist = Vec::new();
    let mut status = TrainingStatus::Timeout;

    for epoch in 0..cfg.max_epochs {
        order.sort_unstable();
        order.shuffle(&mut stream_rng(cfg.seed, stream::SHUFFLE_BASE + epoch as u64));

        for batch in order.chunks(cfg.batch_size) {
            grads.fill_zero();
            let weight = 1.0 / batch.len() as f32;
            for &i in batch {
                let cache = forward(&params, &train_set.inputs[i])?;
                accumulate_gradients(&cache, &train_set.targets[i], weight, &mut grads)?;
            }
            if let Some(max_norm) = cfg.clip_norm {
                let norm = grads.norm();
                if norm > max_norm {
                    let scale = max_norm / norm;
                    grads.values.iter_mut().for_each(|g| *g *= scale);
                }
            }
            step += 1;
            adam_step(&mut params.values, &grads.values, &mut moments, step, cfg)?;
        }

        let train_loss = corpus_loss(&params, train_set)?;
        let val_loss = if val_set.is_empty() { train_loss } else { corpus_loss(&params, val_set)? };
        train_hist.push(train_loss);
        val_hist.push(val_loss);
        if !train_loss.is_finite() || !val_loss.is_finite() {
            status = TrainingStatus::Diverged;
            break;
        }
        if val_loss <= cfg.val_threshold {
            status = TrainingStatus::Converged;
            break;
        }
    }

    Ok(TrainedModelRecord {
        params,
        meta: TrainingMetadata {
            label,
            status,
            arch,
            seed: cfg.seed,
            epochs_completed: train_hist.len(),
            train_loss_history: train_hist,
            val_loss_history: val_hist,
            wall_time: started.elapsed().as_secs_f64(),
            engine_version: ENGINE_VERSION.to_string(),
            work_unit_id: None,
        },
    })
}

/// One independent job for [`train_batch`].
#[derive(Debug, Clone)]
pub struct TrainJob {
    pub arch: Architecture,
    pub traces: std::sync::Arc<TraceSet>,
    pub config: TrainingConfig,
}

/// Runs jobs on up to `parallel` threads. Results keep the job order.
pub fn train_batch(jobs: &[TrainJob], parallel: usize) -> Result<Vec<Result<TrainedModelRecord>>> {
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(parallel.max(1))
        .build()
        .map_err(|e| Error::invalid(e.to_string()))?;
    Ok(pool.install(|| {
        jobs.par_iter()
            .map(|job| train(job.arch, &job.traces, &job.config))
            .collect()
    }))
}
