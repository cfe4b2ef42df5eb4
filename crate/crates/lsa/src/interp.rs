//! Mechanistic interpretability pipeline: attention averaging over
//! geometry-matched probes, attention-pattern patching, residual-stream
//! PCA for role assignment, mapping-invariance cosine probes, and
//! elimination-step analysis.

use crate::alphabet::Alphabet;
use crate::eval::argmax_lowest;
use crate::model::{
    forward, AttnOverride, Component, ForwardOpts, ModelError, Params, TokenBatch,
};
use crate::rasp::compare_selector_to_head;
use crate::taskgen::{realize_output, sample_spec, AnalogyTask, TaskError, TaskShared};
use crate::tokenizer::{role_labels, Role, EOS, START};
use crate::transform::Transformation;
use ndarray::{s, Array2};
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum InterpError {
    #[error("geometry mismatch: encoder lengths {0} vs {1}")]
    GeometryMismatch(usize, usize),
    #[error("covariance collapsed: total variance {0}")]
    DegenerateCovariance(f64),
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Task(#[from] TaskError),
}

// ---------------------------------------------------------------------------
// Geometry-matched probe sets
// ---------------------------------------------------------------------------

/// Samples `n` undecorated tasks of one transformation with a fixed run
/// length, so every encoder stream has identical length and every role
/// occupies the same positions (transformation applied at constant
/// positions across the probe).
pub fn fixed_geometry_tasks(
    t: Transformation,
    alphabet: &Alphabet,
    n: usize,
    length: usize,
    seed: u64,
) -> Result<Vec<AnalogyTask>, InterpError> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let shared = TaskShared::default();
    let mut tasks = Vec::with_capacity(n);
    let mut guard = 0usize;
    while tasks.len() < n {
        guard += 1;
        if guard > 100 * n + 100 {
            return Err(InterpError::Task(TaskError::ExhaustedSampling));
        }
        let ex = sample_spec(t, alphabet, &mut rng, &shared)?;
        let qy = sample_spec(t, alphabet, &mut rng, &shared)?;
        if ex.base_length != length || qy.base_length != length || ex.base_start == qy.base_start {
            continue;
        }
        let ex_in = crate::taskgen::realize_input(&ex, alphabet)?;
        let ex_out = realize_output(&ex, alphabet)?;
        let qy_in = crate::taskgen::realize_input(&qy, alphabet)?;
        let qy_out = realize_output(&qy, alphabet)?;
        tasks.push(AnalogyTask {
            alphabet: alphabet.clone(),
            examples: vec![(ex_in, ex_out)],
            query: qy_in,
            target: qy_out,
            transformation: t,
            is_copy: false,
        });
    }
    Ok(tasks)
}

fn check_geometry(tasks: &[AnalogyTask]) -> Result<usize, InterpError> {
    let batch = TokenBatch::from_tasks(&tasks[..1]);
    let len = batch.enc_tokens[0].len();
    for task in tasks.iter().skip(1) {
        let b = TokenBatch::from_tasks(std::slice::from_ref(task));
        if b.enc_tokens[0].len() != len {
            return Err(InterpError::GeometryMismatch(len, b.enc_tokens[0].len()));
        }
    }
    Ok(len)
}

fn capture(params: &Params, task: &AnalogyTask) -> Result<crate::model::ActivationTrace<f32>, ModelError> {
    let batch = TokenBatch::from_tasks(std::slice::from_ref(task));
    let res = forward(params, &batch, &ForwardOpts { capture: true, ..Default::default() })?;
    Ok(res.trace.unwrap())
}

// ---------------------------------------------------------------------------
// Mean attention
// ---------------------------------------------------------------------------

/// Element-wise mean of post-softmax attention over a geometry-matched
/// task group; one matrix per head.
pub fn mean_attention(
    params: &Params,
    tasks: &[AnalogyTask],
    component: Component,
    layer: usize,
) -> Result<Vec<Array2<f32>>, InterpError> {
    assert!(!tasks.is_empty());
    check_geometry(tasks)?;
    let mut sums: Option<Vec<Array2<f32>>> = None;
    for task in tasks {
        let trace = capture(params, task)?;
        let probs = match component {
            Component::Encoder => &trace.enc_attn[layer],
            Component::DecoderSelf => &trace.dec_self_attn[layer],
            Component::DecoderCross => &trace.dec_cross_attn[layer],
        };
        let heads = probs.dim().1;
        let per_head: Vec<Array2<f32>> = (0..heads).map(|h| probs.slice(s![0, h, .., ..]).to_owned()).collect();
        match &mut sums {
            None => sums = Some(per_head),
            Some(acc) => {
                for (a, p) in acc.iter_mut().zip(per_head) {
                    *a += &p;
                }
            }
        }
    }
    let n = tasks.len() as f32;
    Ok(sums.unwrap().into_iter().map(|m| m / n).collect())
}

// ---------------------------------------------------------------------------
// Attention-pattern patching
// ---------------------------------------------------------------------------

#[derive(Debug, Clone)]
pub struct PatchSpec {
    pub layer: usize,
    pub head: usize,
    pub donor: AnalogyTask,
    pub target: AnalogyTask,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct PatchOutcome {
    pub baseline: String,
    pub patched: String,
    pub flipped: bool,
}

/// Greedy decode of a single task with an optional encoder attention
/// override, re-running the full forward pass each step.
fn decode_with_override(
    params: &Params,
    task: &AnalogyTask,
    override_: Option<AttnOverride<f32>>,
) -> Result<Vec<usize>, ModelError> {
    let mut batch = TokenBatch::from_tasks(std::slice::from_ref(task));
    let bound = task.target.len() + crate::eval::SINGLE_TASK_DECODE_MARGIN;
    let mut prefix = vec![START];
    for _ in 0..bound {
        batch.dec_input = vec![prefix.clone()];
        batch.dec_target = vec![vec![0; prefix.len()]];
        batch.dec_mask = vec![vec![true; prefix.len()]];
        let opts = ForwardOpts { attn_override: override_.clone(), ..Default::default() };
        let logits = forward(params, &batch, &opts)?.logits;
        let last = prefix.len() - 1;
        let tok = argmax_lowest(logits.slice(s![0, last, ..]).as_slice().unwrap());
        if tok == EOS {
            break;
        }
        prefix.push(tok);
    }
    Ok(prefix[1..].to_vec())
}

/// Captures the donor's post-softmax matrix for one encoder head and
/// reruns the target with that head's matrix substituted; values and all
/// other heads untouched. Both predictions decoded greedily.
pub fn patch_attention(params: &Params, spec: &PatchSpec) -> Result<PatchOutcome, InterpError> {
    let donor_batch = TokenBatch::from_tasks(std::slice::from_ref(&spec.donor));
    let target_batch = TokenBatch::from_tasks(std::slice::from_ref(&spec.target));
    let (dl, tl) = (donor_batch.enc_tokens[0].len(), target_batch.enc_tokens[0].len());
    if dl != tl {
        return Err(InterpError::GeometryMismatch(dl, tl));
    }
    let donor_trace = capture(params, &spec.donor)?;
    let donor_probs = donor_trace.enc_attn[spec.layer].slice(s![0, spec.head, .., ..]).to_owned();
    let baseline = decode_with_override(params, &spec.target, None)?;
    let patched = decode_with_override(
        params,
        &spec.target,
        Some(AttnOverride { component: Component::Encoder, layer: spec.layer, head: spec.head, probs: donor_probs }),
    )?;
    Ok(PatchOutcome {
        baseline: crate::eval::tokens_to_string(&baseline),
        patched: crate::eval::tokens_to_string(&patched),
        flipped: baseline != patched,
    })
}

// ---------------------------------------------------------------------------
// PCA over residual roles
// ---------------------------------------------------------------------------

/// Two principal components fit by power iteration with deflation.
/// Component sign convention: the largest-magnitude coordinate is
/// positive, so projections are deterministic.
pub struct Pca {
    pub mean: Vec<f64>,
    pub components: [Vec<f64>; 2],
    pub explained: [f64; 2],
}

fn matvec(cov: &Array2<f64>, v: &[f64]) -> Vec<f64> {
    let d = v.len();
    let mut out = vec![0.0; d];
    for i in 0..d {
        let row = cov.row(i);
        out[i] = row.iter().zip(v).map(|(a, b)| a * b).sum();
    }
    out
}

fn normalize(v: &mut [f64]) -> f64 {
    let n = v.iter().map(|x| x * x).sum::<f64>().sqrt();
    if n > 0.0 {
        for x in v.iter_mut() {
            *x /= n;
        }
    }
    n
}

fn fix_sign(v: &mut [f64]) {
    let lead = v.iter().cloned().max_by(|a, b| a.abs().partial_cmp(&b.abs()).unwrap()).unwrap_or(0.0);
    if lead < 0.0 {
        for x in v.iter_mut() {
            *x = -*x;
        }
    }
}

/// Fits a 2-component PCA on row vectors.
pub fn pca_fit(data: &[Vec<f64>]) -> Result<Pca, InterpError> {
    let n = data.len();
    let d = data[0].len();
    let mut mean = vec![0.0; d];
    for row in data {
        for (m, &x) in mean.iter_mut().zip(row) {
            *m += x;
        }
    }
    for m in mean.iter_mut() {
        *m /= n as f64;
    }
    let mut cov = Array2::<f64>::zeros((d, d));
    for row in data {
        let c: Vec<f64> = row.iter().zip(&mean).map(|(x, m)| x - m).collect();
        for i in 0..d {
            if c[i] == 0.0 {
                continue;
            }
            for j in 0..d {
                cov[[i, j]] += c[i] * c[j];
            }
        }
    }
    cov /= n as f64;
    let total_var: f64 = (0..d).map(|i| cov[[i, i]]).sum();
    if total_var < 1e-12 {
        return Err(InterpError::DegenerateCovariance(total_var));
    }
    let mut components: [Vec<f64>; 2] = [vec![0.0; d], vec![0.0; d]];
    let mut explained = [0.0f64; 2];
    for k in 0..2 {
        let mut v: Vec<f64> = (0..d).map(|i| 1.0 + (i as f64) * 1e-3).collect();
        normalize(&mut v);
        let mut eig = 0.0;
        for _ in 0..300 {
            let mut w = matvec(&cov, &v);
            eig = normalize(&mut w);
            v = w;
        }
        fix_sign(&mut v);
        // deflate
        for i in 0..d {
            for j in 0..d {
                cov[[i, j]] -= eig * v[i] * v[j];
            }
        }
        explained[k] = eig / total_var;
        components[k] = v;
    }
    Ok(Pca { mean, components, explained })
}

impl Pca {
    pub fn project(&self, row: &[f64]) -> [f64; 2] {
        let mut out = [0.0; 2];
        for (k, comp) in self.components.iter().enumerate() {
            out[k] = row.iter().zip(&self.mean).zip(comp).map(|((x, m), c)| (x - m) * c).sum();
        }
        out
    }
}

/// Mean silhouette of labeled 2D points; higher means cleaner clusters.
pub fn silhouette(points: &[[f64; 2]], labels: &[usize]) -> f64 {
    let n = points.len();
    let n_labels = labels.iter().max().map(|&m| m + 1).unwrap_or(0);
    let dist = |a: &[f64; 2], b: &[f64; 2]| ((a[0] - b[0]).powi(2) + (a[1] - b[1]).powi(2)).sqrt();
    let mut total = 0.0;
    let mut counted = 0usize;
    for i in 0..n {
        let mut sums = vec![0.0f64; n_labels];
        let mut counts = vec![0usize; n_labels];
        for j in 0..n {
            if i == j {
                continue;
            }
            sums[labels[j]] += dist(&points[i], &points[j]);
            counts[labels[j]] += 1;
        }
        if counts[labels[i]] == 0 {
            continue;
        }
        let a = sums[labels[i]] / counts[labels[i]] as f64;
        let b = (0..n_labels)
            .filter(|&l| l != labels[i] && counts[l] > 0)
            .map(|l| sums[l] / counts[l] as f64)
            .fold(f64::INFINITY, f64::min);
        if !b.is_finite() {
            continue;
        }
        total += (b - a) / a.max(b);
        counted += 1;
    }
    if counted == 0 {
        0.0
    } else {
        total / counted as f64
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RolePcaOutput {
    /// Per boundary (0 = embeddings, l+1 = after layer l): projected
    /// points with their role labels.
    pub boundaries: Vec<Vec<(Role, [f64; 2])>>,
    /// Silhouette separation score per boundary.
    pub separation: Vec<f64>,
    pub explained: [f64; 2],
}

/// Cap on pooled vectors entering the silhouette computation.
const SILHOUETTE_CAP: usize = 2000;

/// Fits a 2-component PCA on encoder residual activations pooled across
/// all layer boundaries of the probe set, then projects each boundary
/// and scores role separation. Fit and projection use the same probe
/// set.
pub fn role_pca(params: &Params, tasks: &[AnalogyTask]) -> Result<RolePcaOutput, InterpError> {
    let n_boundaries = params.config.n_layers + 1;
    let mut pooled: Vec<Vec<f64>> = Vec::new();
    let mut per_boundary: Vec<Vec<(Role, Vec<f64>)>> = vec![Vec::new(); n_boundaries];
    for task in tasks {
        let trace = capture(params, task)?;
        let roles = role_labels(task);
        for (b, resid) in trace.enc_residuals.iter().enumerate() {
            for (pos, &role) in roles.iter().enumerate() {
                let v: Vec<f64> = resid.slice(s![0, pos, ..]).iter().map(|&x| x as f64).collect();
                pooled.push(v.clone());
                per_boundary[b].push((role, v));
            }
        }
    }
    let pca = pca_fit(&pooled)?;
    let mut boundaries = Vec::with_capacity(n_boundaries);
    let mut separation = Vec::with_capacity(n_boundaries);
    for rows in per_boundary {
        let projected: Vec<(Role, [f64; 2])> = rows.iter().map(|(r, v)| (*r, pca.project(v))).collect();
        let step = (projected.len() / SILHOUETTE_CAP).max(1);
        let sampled: Vec<&(Role, [f64; 2])> = projected.iter().step_by(step).collect();
        let points: Vec<[f64; 2]> = sampled.iter().map(|(_, p)| *p).collect();
        let labels: Vec<usize> = sampled.iter().map(|(r, _)| *r as usize).collect();
        separation.push(silhouette(&points, &labels));
        boundaries.push(projected);
    }
    Ok(RolePcaOutput { boundaries, separation, explained: pca.explained })
}

// ---------------------------------------------------------------------------
// Mapping invariance
// ---------------------------------------------------------------------------

/// Pairwise cosine similarities of the final-boundary encoder
/// representation of each task's first example-output token.
pub fn mapping_invariance(params: &Params, tasks: &[AnalogyTask]) -> Result<Array2<f64>, InterpError> {
    let mut reps: Vec<Vec<f64>> = Vec::with_capacity(tasks.len());
    for task in tasks {
        let trace = capture(params, task)?;
        let roles = role_labels(task);
        let pos = roles.iter().position(|&r| r == Role::ExampleOut).expect("task has an example output");
        let last = trace.enc_residuals.last().unwrap();
        reps.push(last.slice(s![0, pos, ..]).iter().map(|&x| x as f64).collect());
    }
    let n = reps.len();
    let mut out = Array2::zeros((n, n));
    for i in 0..n {
        for j in 0..n {
            let dot: f64 = reps[i].iter().zip(&reps[j]).map(|(a, b)| a * b).sum();
            let na: f64 = reps[i].iter().map(|x| x * x).sum::<f64>().sqrt();
            let nb: f64 = reps[j].iter().map(|x| x * x).sum::<f64>().sqrt();
            out[[i, j]] = dot / (na * nb);
        }
    }
    Ok(out)
}

// ---------------------------------------------------------------------------
// Elimination analysis
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct EliminationScore {
    pub position: usize,
    pub role: Role,
    /// Mean over heads of final-layer attention mass to the terminator.
    pub attn_to_terminator: f64,
    /// Residual norm after the final encoder layer over the norm before.
    pub norm_ratio: f64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct EliminationOutput {
    /// Position of the designated terminator. The encoder stream has no
    /// EOS token; the trailing arrow serves as terminator.
    pub terminator_position: usize,
    pub terminator_role: Role,
    pub scores: Vec<EliminationScore>,
}

/// Per-position terminator attention and norm-reduction at the final
/// encoder layer. The terminator position itself is excluded.
pub fn elimination_scores(params: &Params, task: &AnalogyTask) -> Result<EliminationOutput, InterpError> {
    let trace = capture(params, task)?;
    let roles = role_labels(task);
    let last_layer = params.config.n_layers - 1;
    let probs = &trace.enc_attn[last_layer];
    let heads = probs.dim().1;
    let terminator = roles.len() - 1;
    let before = &trace.enc_residuals[last_layer];
    let after = &trace.enc_residuals[last_layer + 1];
    let mut scores = Vec::new();
    for (pos, &role) in roles.iter().enumerate() {
        if pos == terminator {
            continue;
        }
        let attn = (0..heads).map(|h| probs[[0, h, pos, terminator]] as f64).sum::<f64>() / heads as f64;
        let nb = before.slice(s![0, pos, ..]).iter().map(|&x| (x as f64).powi(2)).sum::<f64>().sqrt();
        let na = after.slice(s![0, pos, ..]).iter().map(|&x| (x as f64).powi(2)).sum::<f64>().sqrt();
        scores.push(EliminationScore { position: pos, role, attn_to_terminator: attn, norm_ratio: na / nb });
    }
    Ok(EliminationOutput { terminator_position: terminator, terminator_role: roles[terminator], scores })
}

// ---------------------------------------------------------------------------
// Matching-head scan
// ---------------------------------------------------------------------------

/// Ranks every encoder (layer, head) by mean similarity between its
/// attention pattern and the same-token selector over the probe set
/// (diagonal excluded, so trivially self-attending heads do not rank).
/// Head identity varies by training seed; this scan locates the
/// matching head per checkpoint.
pub fn matching_head_scores(params: &Params, tasks: &[AnalogyTask]) -> Result<Vec<((usize, usize), f64)>, InterpError> {
    check_geometry(tasks)?;
    let layers = params.config.n_layers;
    let heads = params.config.n_heads;
    let mut sums = vec![vec![0.0f64; heads]; layers];
    for task in tasks {
        let batch = TokenBatch::from_tasks(std::slice::from_ref(task));
        let toks: Vec<f64> = batch.enc_tokens[0].iter().map(|&t| t as f64).collect();
        let mut sel = crate::rasp::select(&toks, &toks, crate::rasp::Predicate::Equals, false)
            .expect("equal lengths");
        for i in 0..toks.len() {
            sel.cells[[i, i]] = false;
        }
        let trace = capture(params, task)?;
        for (l, row) in sums.iter_mut().enumerate() {
            for (h, slot) in row.iter_mut().enumerate() {
                let attn: Array2<f32> = trace.enc_attn[l].slice(s![0, h, .., ..]).to_owned();
                *slot += compare_selector_to_head(&sel, attn.view()).expect("equal shapes");
            }
        }
    }
    let n = tasks.len() as f64;
    let mut out: Vec<((usize, usize), f64)> = Vec::new();
    for (l, row) in sums.iter().enumerate() {
        for (h, &s) in row.iter().enumerate() {
            out.push(((l, h), s / n));
        }
    }
    out.sort_by(|a, b| b.1.partial_cmp(&a.1).unwrap());
    Ok(out)
}

/// Convenience: paired predecessor/successor probe tasks with identical
/// geometry, for the patching experiment. Predecessor targets are
/// restricted to queries that also lie in the successor domain, so the
/// counterfactual successor answer always exists.
pub fn paired_pred_succ_tasks(
    alphabet: &Alphabet,
    n: usize,
    length: usize,
    seed: u64,
) -> Result<Vec<(AnalogyTask, AnalogyTask)>, InterpError> {
    let succ = fixed_geometry_tasks(Transformation::Successor, alphabet, n, length, seed ^ 0x5EED)?;
    let mut pred = Vec::with_capacity(n);
    let mut round = 0u64;
    while pred.len() < n {
        if round > 100 {
            return Err(InterpError::Task(TaskError::ExhaustedSampling));
        }
        let batch = fixed_geometry_tasks(Transformation::Predecessor, alphabet, n, length, seed.wrapping_add(round))?;
        pred.extend(batch.into_iter().filter(|t| {
            crate::taskgen::infer_spec(Transformation::Successor, alphabet, &t.query).is_ok()
        }));
        round += 1;
    }
    pred.truncate(n);
    Ok(pred.into_iter().zip(succ).collect())
}
