//! Frozen-weight behavioral evaluation: greedy decoding, exact-match
//! scoring across generalization cells, run-level bootstrap intervals and
//! error-mode classification.

use crate::alphabet::LetterString;
use crate::model::{decode_logits, encode, ModelError, Params, TokenBatch};
use crate::taskgen::{oracle_answer, AnalogyTask};
use crate::tokenizer::{letter_token, EOS, START};
use crate::transform::{Transformation, TransformClass};
use rand::Rng;
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use std::collections::BTreeMap;
use thiserror::Error;

/// Safety margin added to the target length when decoding a single task
/// outside a batch context.
pub const SINGLE_TASK_DECODE_MARGIN: usize = 4;

/// Default batch width for evaluation suites.
pub const EVAL_BATCH: usize = 64;

pub const BOOTSTRAP_RESAMPLES: usize = 10_000;

#[derive(Debug, Error)]
pub enum EvalError {
    #[error("bootstrap intervals require at least two runs, got {0}")]
    InsufficientRuns(usize),
    #[error(transparent)]
    Model(#[from] ModelError),
}

/// Generalization cell: alphabet novelty × transformation class.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Cell {
    pub new_alphabet: bool,
    pub class: TransformClass,
}

impl Cell {
    pub fn label(&self) -> String {
        let alpha = if self.new_alphabet { "new_alphabet" } else { "seen_alphabet" };
        let class = match self.class {
            TransformClass::Seen => "seen",
            TransformClass::Compositional => "compositional",
            TransformClass::Novel => "novel",
        };
        format!("{alpha}/{class}")
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct EvalResult {
    pub index: usize,
    pub transformation: Transformation,
    pub is_copy: bool,
    pub predicted: String,
    pub target: String,
    pub correct: bool,
    pub cell: Cell,
    /// `applied_<tag>` when the prediction is exactly another
    /// transformation's answer to the query; `other_incorrect` otherwise.
    /// Absent for correct predictions.
    pub error_label: Option<String>,
}

/// Argmax with ties broken by the lowest token id.
pub(crate) fn argmax_lowest<F: PartialOrd + Copy>(row: &[F]) -> usize {
    let mut best = 0;
    for (i, v) in row.iter().enumerate().skip(1) {
        if *v > row[best] {
            best = i;
        }
    }
    best
}

/// Greedy decoding for a batch of tasks. Each response grows by the
/// argmax token per step and stops at EOS or once its length would
/// exceed the longest target in the batch plus `margin`. Returned rows
/// are raw decoder token ids without START or EOS.
pub fn greedy_decode(params: &Params, tasks: &[AnalogyTask], margin: usize) -> Result<Vec<Vec<usize>>, ModelError> {
    if tasks.is_empty() {
        return Ok(Vec::new());
    }
    let batch = TokenBatch::from_tasks(tasks);
    let bound = tasks.iter().map(|t| t.target.len()).max().unwrap() + margin;
    let enc = encode(params, &batch.enc_tokens, &batch.enc_mask)?;
    let mut rows: Vec<Vec<usize>> = vec![vec![START]; tasks.len()];
    let mut finished = vec![false; tasks.len()];
    for _ in 0..bound {
        let logits = decode_logits(params, &enc, &batch.enc_mask, &rows)?;
        let last = rows[0].len() - 1;
        for (b, row) in rows.iter_mut().enumerate() {
            if finished[b] {
                // keep rectangular; the padded PAD token is never read back
                row.push(0);
                continue;
            }
            let scores = logits.slice(ndarray::s![b, last, ..]);
            let tok = argmax_lowest(scores.as_slice().unwrap());
            if tok == EOS {
                finished[b] = true;
                row.push(0);
            } else {
                row.push(tok);
            }
        }
        if finished.iter().all(|&f| f) {
            break;
        }
    }
    Ok(rows
        .into_iter()
        .zip(finished)
        .map(|(row, fin)| {
            let mut out: Vec<usize> = row.into_iter().skip(1).collect();
            if fin {
                while out.last() == Some(&0) {
                    out.pop();
                }
            }
            out
        })
        .collect())
}

/// Renders decoded tokens as a spaced string; non-letter tokens appear
/// as `?` and can never match a target.
pub fn tokens_to_string(tokens: &[usize]) -> String {
    tokens
        .iter()
        .map(|&t| {
            if (1..=26).contains(&t) {
                ((b'a' + (t as u8 - 1)) as char).to_string()
            } else {
                "?".to_string()
            }
        })
        .collect::<Vec<_>>()
        .join(" ")
}

fn tokens_to_letter_string(tokens: &[usize]) -> Option<LetterString> {
    LetterString::parse(&tokens_to_string(tokens)).ok()
}

/// Labels an incorrect prediction by testing it against the oracle
/// answers of every other transformation applicable to the query.
pub fn classify_error(task: &AnalogyTask, prediction: &[usize]) -> String {
    let Some(pred) = tokens_to_letter_string(prediction) else {
        return "other_incorrect".to_string();
    };
    let mut matches = Vec::new();
    for t in Transformation::ALL {
        if t == task.transformation {
            continue;
        }
        if let Ok(ans) = oracle_answer(t, &task.alphabet, &task.query, None) {
            if ans == pred {
                matches.push(t);
            }
        }
    }
    match matches.as_slice() {
        [single] => format!("applied_{}", single.name()),
        _ => "other_incorrect".to_string(),
    }
}

fn score_prediction(index: usize, task: &AnalogyTask, tokens: &[usize], cell: Cell) -> EvalResult {
    let target_tokens: Vec<usize> = task.target.letters().iter().map(|&l| letter_token(l)).collect();
    let correct = tokens == target_tokens;
    EvalResult {
        index,
        transformation: task.transformation,
        is_copy: task.is_copy,
        predicted: tokens_to_string(tokens),
        target: task.target.spaced(),
        correct,
        cell,
        error_label: (!correct).then(|| classify_error(task, tokens)),
    }
}

/// Exact-match evaluation of a suite. Deterministic; batches of
/// `EVAL_BATCH` tasks share a decoding length bound.
pub fn evaluate(params: &Params, tasks: &[AnalogyTask], cell: Cell) -> Result<Vec<EvalResult>, ModelError> {
    let mut out = Vec::with_capacity(tasks.len());
    for (chunk_idx, chunk) in tasks.chunks(EVAL_BATCH).enumerate() {
        let decoded = greedy_decode(params, chunk, 0)?;
        for (i, (task, tokens)) in chunk.iter().zip(&decoded).enumerate() {
            out.push(score_prediction(chunk_idx * EVAL_BATCH + i, task, tokens, cell));
        }
    }
    Ok(out)
}

/// Fraction correct; `None` for an empty suite.
pub fn accuracy(results: &[EvalResult]) -> Option<f64> {
    if results.is_empty() {
        return None;
    }
    Some(results.iter().filter(|r| r.correct).count() as f64 / results.len() as f64)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Grouping {
    Cell,
    Transformation,
}

/// (correct, total) per group label.
pub fn group_counts(results: &[EvalResult], grouping: Grouping) -> BTreeMap<String, (usize, usize)> {
    let mut map: BTreeMap<String, (usize, usize)> = BTreeMap::new();
    for r in results {
        let key = match grouping {
            Grouping::Cell => r.cell.label(),
            Grouping::Transformation => r.transformation.name().to_string(),
        };
        let e = map.entry(key).or_default();
        e.0 += r.correct as usize;
        e.1 += 1;
    }
    map
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct AggregateRow {
    pub group: String,
    /// Mean of per-run accuracies (each run weighted equally).
    pub mean_accuracy: f64,
    /// Accuracy over all tasks pooled across runs.
    pub pooled_accuracy: f64,
    /// 95% percentile bootstrap over runs; equal to the mean when
    /// intervals were not requested.
    pub ci_lo: f64,
    pub ci_hi: f64,
    pub n_runs: usize,
}

/// Percentile bootstrap of the mean (2.5 / 97.5) over run-level values.
pub fn bootstrap_mean(values: &[f64], resamples: usize, seed: u64) -> Result<(f64, f64, f64), EvalError> {
    if values.len() < 2 {
        return Err(EvalError::InsufficientRuns(values.len()));
    }
    let mean = values.iter().sum::<f64>() / values.len() as f64;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut means: Vec<f64> = (0..resamples)
        .map(|_| {
            let s: f64 = (0..values.len()).map(|_| values[rng.random_range(0..values.len())]).sum();
            s / values.len() as f64
        })
        .collect();
    means.sort_by(|a, b| a.partial_cmp(b).unwrap());
    let pick = |q: f64| means[((resamples - 1) as f64 * q).round() as usize];
    Ok((mean, pick(0.025), pick(0.975)))
}

/// Aggregates per-run group counts into an accuracy table. With
/// `with_intervals` the confidence bounds come from a run-level
/// percentile bootstrap and require at least two runs.
pub fn aggregate(
    per_run: &[BTreeMap<String, (usize, usize)>],
    with_intervals: bool,
    seed: u64,
) -> Result<Vec<AggregateRow>, EvalError> {
    let mut groups: Vec<String> = Vec::new();
    for run in per_run {
        for key in run.keys() {
            if !groups.contains(key) {
                groups.push(key.clone());
            }
        }
    }
    groups.sort();
    let mut rows = Vec::new();
    for group in groups {
        let mut per_run_acc = Vec::new();
        let mut correct = 0usize;
        let mut total = 0usize;
        for run in per_run {
            if let Some(&(c, t)) = run.get(&group) {
                if t > 0 {
                    per_run_acc.push(c as f64 / t as f64);
                    correct += c;
                    total += t;
                }
            }
        }
        if per_run_acc.is_empty() {
            continue;
        }
        let pooled = correct as f64 / total as f64;
        let (mean, lo, hi) = if with_intervals {
            bootstrap_mean(&per_run_acc, BOOTSTRAP_RESAMPLES, seed)?
        } else {
            let m = per_run_acc.iter().sum::<f64>() / per_run_acc.len() as f64;
            (m, m, m)
        };
        rows.push(AggregateRow {
            group,
            mean_accuracy: mean,
            pooled_accuracy: pooled,
            ci_lo: lo,
            ci_hi: hi,
            n_runs: per_run_acc.len(),
        });
    }
    Ok(rows)
}

/// Long-format CSV of an aggregate table.
pub fn aggregate_to_csv(rows: &[AggregateRow]) -> String {
    let mut out = String::from("group,mean_accuracy,pooled_accuracy,ci_lo,ci_hi,n_runs\n");
    for r in rows {
        out.push_str(&format!(
            "{},{:.6},{:.6},{:.6},{:.6},{}\n",
            r.group, r.mean_accuracy, r.pooled_accuracy, r.ci_lo, r.ci_hi, r.n_runs
        ));
    }
    out
}
