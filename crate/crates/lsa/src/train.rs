//! Training loop: linear learning-rate decay, adaptive-moment updates,
//! the four batching strategies, per-epoch validation and checkpointing.

use crate::eval::{greedy_decode, EVAL_BATCH};
use crate::model::{gradients, save_checkpoint, ModelConfig, ModelError, Params, TokenBatch};
use crate::taskgen::AnalogyTask;
use crate::tokenizer::letter_token;
use rand::seq::SliceRandom;
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use std::collections::BTreeMap;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::time::Instant;
use thiserror::Error;

fn mix_seed(a: u64, b: u64) -> u64 {
    let mut x = a ^ b.wrapping_mul(0x9E3779B97F4A7C15);
    x = (x ^ (x >> 30)).wrapping_mul(0xBF58476D1CE4E5B9);
    x = (x ^ (x >> 27)).wrapping_mul(0x94D049BB133111EB);
    x ^ (x >> 31)
}

#[derive(Debug, Error)]
pub enum TrainError {
    #[error("training diverged at epoch {epoch}, step {step}: non-finite loss")]
    Diverged { epoch: usize, step: usize },
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),
    #[error("bad configuration: {0}")]
    BadConfig(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "snake_case")]
#[clap(rename_all = "snake_case")]
pub enum BatchingStrategy {
    Random,
    ByTransformation,
    ByAlphabet,
    ByTransformationAndAlphabet,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TrainConfig {
    pub batch_size: usize,
    pub epochs: usize,
    pub base_lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub adam_eps: f64,
    pub clip_norm: f64,
    pub batching: BatchingStrategy,
    pub model: ModelConfig,
    pub model_seed: u64,
    /// Size of the fixed validation subsample decoded each epoch.
    pub val_subsample: usize,
    /// Seed selecting the validation subsample (shared across replications).
    pub val_seed: u64,
}

impl TrainConfig {
    pub fn new(epochs: usize, model_seed: u64) -> Self {
        TrainConfig {
            batch_size: 32,
            epochs,
            base_lr: 0.001,
            beta1: 0.9,
            beta2: 0.999,
            adam_eps: 1e-8,
            clip_norm: 1.0,
            batching: BatchingStrategy::Random,
            model: ModelConfig::base(),
            model_seed,
            val_subsample: 2000,
            val_seed: 1234,
        }
    }

    /// Learning rate for 0-based `epoch`: base · (1 − e/E).
    pub fn lr_at(&self, epoch: usize) -> f64 {
        self.base_lr * (1.0 - epoch as f64 / self.epochs as f64)
    }

    pub fn validate(&self) -> Result<(), TrainError> {
        if self.batch_size == 0 || self.epochs == 0 {
            return Err(TrainError::BadConfig("batch_size and epochs must be positive".into()));
        }
        // schedule sanity: strictly decreasing, non-negative
        for e in 0..self.epochs {
            let lr = self.lr_at(e);
            if lr < 0.0 || (e > 0 && lr >= self.lr_at(e - 1)) {
                return Err(TrainError::BadConfig(format!("learning-rate schedule violated at epoch {e}")));
            }
        }
        Ok(())
    }
}

/// Partitions `0..n` into batches for one epoch. Every index appears
/// exactly once; constrained strategies hold their key constant within
/// each batch, with at most one ragged batch per key group.
pub fn make_batches(
    tasks: &[AnalogyTask],
    strategy: BatchingStrategy,
    batch_size: usize,
    epoch_seed: u64,
) -> Vec<Vec<usize>> {
    let mut rng = ChaCha8Rng::seed_from_u64(epoch_seed);
    let key = |t: &AnalogyTask| -> String {
        match strategy {
            BatchingStrategy::Random => String::new(),
            BatchingStrategy::ByTransformation => t.transformation.name().to_string(),
            BatchingStrategy::ByAlphabet => t.alphabet.order_string(),
            BatchingStrategy::ByTransformationAndAlphabet => {
                format!("{}/{}", t.transformation.name(), t.alphabet.order_string())
            }
        }
    };
    let mut groups: BTreeMap<String, Vec<usize>> = BTreeMap::new();
    for (i, t) in tasks.iter().enumerate() {
        groups.entry(key(t)).or_default().push(i);
    }
    let mut batches = Vec::new();
    for indices in groups.values_mut() {
        indices.shuffle(&mut rng);
        for chunk in indices.chunks(batch_size) {
            batches.push(chunk.to_vec());
        }
    }
    batches.shuffle(&mut rng);
    batches
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct EpochMetrics {
    pub epoch: usize,
    pub lr: f64,
    pub train_loss: f64,
    pub val_accuracy: f64,
    pub wall_time: f64,
}

pub struct TrainOutcome {
    pub params: Params,
    pub metrics: Vec<EpochMetrics>,
    pub final_checkpoint: PathBuf,
}

struct Adam {
    m: Vec<f32>,
    v: Vec<f32>,
    t: u64,
    beta1: f64,
    beta2: f64,
    eps: f64,
}

impl Adam {
    fn new(n: usize, cfg: &TrainConfig) -> Self {
        Adam { m: vec![0.0; n], v: vec![0.0; n], t: 0, beta1: cfg.beta1, beta2: cfg.beta2, eps: cfg.adam_eps }
    }

    fn step(&mut self, params: &mut [f32], grads: &[f32], lr: f64) {
        self.t += 1;
        let b1 = self.beta1 as f32;
        let b2 = self.beta2 as f32;
        let bc1 = 1.0 - (self.beta1).powi(self.t as i32) as f32;
        let bc2 = 1.0 - (self.beta2).powi(self.t as i32) as f32;
        let lr = lr as f32;
        let eps = self.eps as f32;
        for i in 0..params.len() {
            let g = grads[i];
            self.m[i] = b1 * self.m[i] + (1.0 - b1) * g;
            self.v[i] = b2 * self.v[i] + (1.0 - b2) * g * g;
            let mhat = self.m[i] / bc1;
            let vhat = self.v[i] / bc2;
            params[i] -= lr * mhat / (vhat.sqrt() + eps);
        }
    }
}

/// Scales `grads` in place so the global L2 norm is at most `clip`.
fn clip_global_norm(grads: &mut [f32], clip: f64) {
    let norm = grads.iter().map(|&g| (g as f64) * (g as f64)).sum::<f64>().sqrt();
    if norm > clip {
        let scale = (clip / norm) as f32;
        for g in grads.iter_mut() {
            *g *= scale;
        }
    }
}

/// Fixed validation subsample: a seed-determined selection shared by all
/// replication runs.
pub fn val_subsample<'a>(val: &'a [AnalogyTask], n: usize, seed: u64) -> Vec<&'a AnalogyTask> {
    let mut order: Vec<usize> = (0..val.len()).collect();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    order.shuffle(&mut rng);
    order.truncate(n);
    order.iter().map(|&i| &val[i]).collect()
}

fn validation_accuracy(params: &Params, subsample: &[&AnalogyTask]) -> Result<f64, ModelError> {
    if subsample.is_empty() {
        return Ok(0.0);
    }
    let mut correct = 0usize;
    for chunk in subsample.chunks(EVAL_BATCH) {
        let owned: Vec<AnalogyTask> = chunk.iter().map(|&t| t.clone()).collect();
        let decoded = greedy_decode(params, &owned, 0)?;
        for (task, tokens) in owned.iter().zip(&decoded) {
            let target: Vec<usize> = task.target.letters().iter().map(|&l| letter_token(l)).collect();
            if *tokens == target {
                correct += 1;
            }
        }
    }
    Ok(correct as f64 / subsample.len() as f64)
}

/// Runs the full training schedule, writing per-epoch checkpoints to
/// `run_dir/checkpoints` and metrics to `run_dir/metrics.jsonl`.
/// Fully reproducible from (config, dataset).
pub fn train(train_set: &[AnalogyTask], val_set: &[AnalogyTask], config: &TrainConfig, run_dir: &Path) -> Result<TrainOutcome, TrainError> {
    config.validate()?;
    if train_set.is_empty() {
        return Err(TrainError::BadConfig("empty training split".into()));
    }
    let ckpt_dir = run_dir.join("checkpoints");
    std::fs::create_dir_all(&ckpt_dir)?;
    let mut metrics_file = std::io::BufWriter::new(std::fs::File::create(run_dir.join("metrics.jsonl"))?);

    let mut params = Params::init(&config.model, config.model_seed)?;
    let mut flat = params.to_flat();
    let mut adam = Adam::new(flat.len(), config);
    let subsample = val_subsample(val_set, config.val_subsample, config.val_seed);

    let start = Instant::now();
    let mut metrics = Vec::new();
    let mut last_good: Option<PathBuf> = None;
    let mut global_step = 0u64;
    for epoch in 0..config.epochs {
        let lr = config.lr_at(epoch);
        let epoch_seed = mix_seed(config.model_seed, 0xBA7C4 ^ epoch as u64);
        let batches = make_batches(train_set, config.batching, config.batch_size, epoch_seed);
        let mut loss_sum = 0.0f64;
        let mut n_batches = 0usize;
        for batch_indices in &batches {
            let tasks: Vec<AnalogyTask> = batch_indices.iter().map(|&i| train_set[i].clone()).collect();
            let batch = TokenBatch::from_tasks(&tasks);
            let dropout_seed = mix_seed(config.model_seed, 0xD807 ^ global_step);
            let (loss, g) = match gradients(&params, &batch, true, dropout_seed) {
                Ok(ok) => ok,
                Err(ModelError::NonFinite) => {
                    return Err(TrainError::Diverged { epoch, step: n_batches });
                }
                Err(e) => return Err(e.into()),
            };
            loss_sum += loss as f64;
            n_batches += 1;
            global_step += 1;
            let mut gflat = g.to_flat();
            clip_global_norm(&mut gflat, config.clip_norm);
            adam.step(&mut flat, &gflat, lr);
            params.from_flat(&flat)?;
            if n_batches % 250 == 0 {
                eprintln!(
                    "epoch {epoch} step {n_batches}/{} loss {:.4} elapsed {:.0}s",
                    batches.len(),
                    loss_sum / n_batches as f64,
                    start.elapsed().as_secs_f64()
                );
            }
        }
        let train_loss = loss_sum / n_batches as f64;
        let val_accuracy = validation_accuracy(&params, &subsample)?;
        let path = ckpt_dir.join(format!("epoch_{epoch:03}.ckpt"));
        save_checkpoint(&path, &params, config.model_seed, epoch)?;
        last_good = Some(path);
        let m = EpochMetrics { epoch, lr, train_loss, val_accuracy, wall_time: start.elapsed().as_secs_f64() };
        serde_json::to_writer(&mut metrics_file, &m).map_err(|e| TrainError::BadConfig(e.to_string()))?;
        metrics_file.write_all(b"\n")?;
        metrics_file.flush()?;
        eprintln!("epoch {epoch} done: loss {train_loss:.4} val {val_accuracy:.4} lr {lr:.6}");
        metrics.push(m);
    }
    let final_path = ckpt_dir.join("final.ckpt");
    save_checkpoint(&final_path, &params, config.model_seed, config.epochs - 1)?;
    let _ = last_good;
    Ok(TrainOutcome { params, metrics, final_checkpoint: final_path })
}

/// Independent replication runs sharing one dataset: run `i` trains with
/// model seed `base_seed + i` into `out_dir/run_<i>`.
pub fn replicate(
    train_set: &[AnalogyTask],
    val_set: &[AnalogyTask],
    base_config: &TrainConfig,
    n_runs: usize,
    out_dir: &Path,
) -> Result<Vec<TrainOutcome>, TrainError> {
    if n_runs == 0 {
        return Err(TrainError::BadConfig("n_runs must be at least 1".into()));
    }
    let mut outcomes = Vec::new();
    for i in 0..n_runs {
        let mut config = base_config.clone();
        config.model_seed = base_config.model_seed + i as u64;
        let dir = out_dir.join(format!("run_{i}"));
        std::fs::create_dir_all(&dir)?;
        outcomes.push(train(train_set, val_set, &config, &dir)?);
    }
    Ok(outcomes)
}
