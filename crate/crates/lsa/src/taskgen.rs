//! Transformation semantics, instance/task generation and dataset assembly.
//!
//! The same realization code produces targets at generation time and serves
//! as the ground-truth oracle at scoring time, so the two cannot drift.

use crate::alphabet::{Alphabet, AlphabetError, Letter, LetterString, ALPHABET_LEN, PERMUTATION_LEVELS};
use crate::transform::{TransformClass, Transformation};
use rand::seq::SliceRandom;
use rand::Rng;
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use std::collections::HashSet;
use thiserror::Error;

pub const DEFAULT_SHIFT_OFFSET: usize = 3;
const RETRY_BUDGET: usize = 100;

#[derive(Debug, Error)]
pub enum TaskError {
    #[error("transformation {0:?} not applicable to the sampled geometry")]
    Inapplicable(Transformation),
    #[error("query does not match the input schema of {0:?}")]
    MalformedQuery(Transformation),
    #[error("could not sample a query differing from the examples")]
    ExhaustedSampling,
    #[error("invalid dataset config: {0}")]
    BadConfig(String),
    #[error(transparent)]
    Alphabet(#[from] AlphabetError),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error("malformed dataset record: {0}")]
    BadRecord(String),
}

/// Variant-specific decoration of a base run.
#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct Decoration {
    /// Run index whose letter is duplicated adjacently (RmRed variants).
    pub duplicate_pos: Option<usize>,
    /// Run index replaced by the corrupt letter (Fix variants).
    pub corrupt_pos: Option<usize>,
    pub corrupt_letter: Option<Letter>,
    /// Letter inserted between consecutive tokens (interleave variants).
    pub interleave_letter: Option<Letter>,
    /// Permutation applied to the run (or to its pairs) for Sort variants.
    pub shuffle: Option<Vec<usize>>,
    pub shift_offset: Option<usize>,
}

/// Fully determined single input/output instance.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct InstanceSpec {
    pub transformation: Transformation,
    pub base_start: usize,
    pub base_length: usize,
    pub decoration: Decoration,
}

/// Parameters shared between the example(s) and the query of one task.
#[derive(Debug, Clone, Copy, Default)]
pub struct TaskShared {
    pub interleave_letter: Option<Letter>,
    pub shift_offset: Option<usize>,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct AnalogyTask {
    pub alphabet: Alphabet,
    pub examples: Vec<(LetterString, LetterString)>,
    pub query: LetterString,
    pub target: LetterString,
    pub transformation: Transformation,
    pub is_copy: bool,
}

fn uses_interleave(t: Transformation) -> bool {
    matches!(t, Transformation::RmRedInterleave | Transformation::FixInterleave)
}

/// Valid range of `base_start` for a transformation and run length, or
/// `None` when no start is admissible.
fn start_range(t: Transformation, length: usize, shift_offset: usize) -> Option<std::ops::RangeInclusive<usize>> {
    use Transformation::*;
    let n = ALPHABET_LEN;
    let (lo, hi) = match t {
        Extend | Successor | RmRedSucc | FixExt | ExtGroup => (0, n - length - 1),
        Predecessor => (1, n - length),
        RemoveRedundant | Fix | Sort | SortGroup | RmRedInterleave | FixInterleave | RmRedSort
        | Reverse | Replicate => (0, n - length),
        ExtPred | FixPredSucc => (1, n - length - 1),
        ExtExtSucc => (0, n.checked_sub(length + 3)?),
        Shift => (0, n.checked_sub(length + shift_offset)?),
    };
    if lo > hi {
        None
    } else {
        Some(lo..=hi)
    }
}

fn sample_shuffle(len: usize, rng: &mut impl Rng, forbid_identity: bool) -> Vec<usize> {
    let mut perm: Vec<usize> = (0..len).collect();
    loop {
        perm.shuffle(rng);
        if !forbid_identity || perm.iter().enumerate().any(|(i, &p)| i != p) {
            return perm;
        }
    }
}

/// Samples a fully determined instance of `t` under `alphabet`.
pub fn sample_spec(
    t: Transformation,
    alphabet: &Alphabet,
    rng: &mut impl Rng,
    shared: &TaskShared,
) -> Result<InstanceSpec, TaskError> {
    let offset = shared.shift_offset.unwrap_or(DEFAULT_SHIFT_OFFSET);
    for _ in 0..RETRY_BUDGET {
        let length = rng.random_range(2..=6usize);
        let Some(range) = start_range(t, length, offset) else { continue };
        let start = rng.random_range(range);
        let run = alphabet.run(start, length)?;
        if let Some(il) = shared.interleave_letter {
            if run.letters().contains(&il) {
                continue;
            }
        }
        let mut deco = Decoration::default();
        use Transformation::*;
        match t {
            RemoveRedundant | RmRedSucc => {
                deco.duplicate_pos = Some(rng.random_range(0..length));
            }
            RmRedInterleave => {
                deco.duplicate_pos = Some(rng.random_range(0..length));
                deco.interleave_letter = shared.interleave_letter;
            }
            Fix | FixExt | FixPredSucc => {
                deco.corrupt_pos = Some(rng.random_range(0..length));
                deco.corrupt_letter = Some(sample_outside_run(&run, None, rng));
            }
            FixInterleave => {
                deco.corrupt_pos = Some(rng.random_range(0..length));
                deco.interleave_letter = shared.interleave_letter;
                deco.corrupt_letter = Some(sample_outside_run(&run, shared.interleave_letter, rng));
            }
            Sort => deco.shuffle = Some(sample_shuffle(length, rng, true)),
            SortGroup => deco.shuffle = Some(sample_shuffle(length, rng, true)),
            RmRedSort => {
                deco.duplicate_pos = Some(rng.random_range(0..length));
                deco.shuffle = Some(sample_shuffle(length + 1, rng, true));
            }
            Shift => deco.shift_offset = Some(offset),
            _ => {}
        }
        return Ok(InstanceSpec { transformation: t, base_start: start, base_length: length, decoration: deco });
    }
    Err(TaskError::Inapplicable(t))
}

fn sample_outside_run(run: &LetterString, also_exclude: Option<Letter>, rng: &mut impl Rng) -> Letter {
    loop {
        let l = Letter::new(rng.random_range(0..ALPHABET_LEN as u8)).unwrap();
        if !run.letters().contains(&l) && Some(l) != also_exclude {
            return l;
        }
    }
}

fn interleave(tokens: &[Letter], il: Letter) -> LetterString {
    let mut out = Vec::with_capacity(tokens.len() * 2 - 1);
    for (i, &t) in tokens.iter().enumerate() {
        if i > 0 {
            out.push(il);
        }
        out.push(t);
    }
    LetterString::new(out)
}

fn with_duplicate(run: &[Letter], pos: usize) -> Vec<Letter> {
    let mut v = Vec::with_capacity(run.len() + 1);
    v.extend_from_slice(&run[..=pos]);
    v.push(run[pos]);
    v.extend_from_slice(&run[pos + 1..]);
    v
}

fn corrupted(run: &[Letter], pos: usize, letter: Letter) -> Vec<Letter> {
    let mut v = run.to_vec();
    v[pos] = letter;
    v
}

/// Realizes the input string of an instance.
pub fn realize_input(spec: &InstanceSpec, alphabet: &Alphabet) -> Result<LetterString, TaskError> {
    use Transformation::*;
    let run = alphabet.run(spec.base_start, spec.base_length)?;
    let r = run.letters();
    let d = &spec.decoration;
    let input = match spec.transformation {
        Extend | Successor | Predecessor | ExtPred | ExtExtSucc | Shift | Reverse | Replicate => run,
        RemoveRedundant | RmRedSucc => LetterString::new(with_duplicate(r, d.duplicate_pos.unwrap())),
        RmRedInterleave => {
            interleave(&with_duplicate(r, d.duplicate_pos.unwrap()), d.interleave_letter.unwrap())
        }
        Fix | FixExt | FixPredSucc => {
            LetterString::new(corrupted(r, d.corrupt_pos.unwrap(), d.corrupt_letter.unwrap()))
        }
        FixInterleave => interleave(
            &corrupted(r, d.corrupt_pos.unwrap(), d.corrupt_letter.unwrap()),
            d.interleave_letter.unwrap(),
        ),
        Sort => {
            let perm = d.shuffle.as_ref().unwrap();
            perm.iter().map(|&i| r[i]).collect()
        }
        SortGroup => {
            let perm = d.shuffle.as_ref().unwrap();
            perm.iter().flat_map(|&i| [r[i], r[i]]).collect()
        }
        RmRedSort => {
            let dup = with_duplicate(r, d.duplicate_pos.unwrap());
            let perm = d.shuffle.as_ref().unwrap();
            perm.iter().map(|&i| dup[i]).collect()
        }
        ExtGroup => r.iter().flat_map(|&l| [l, l]).collect(),
    };
    Ok(input)
}

/// Realizes the output string of an instance. This is the single oracle
/// used both for generation targets and for scoring.
pub fn realize_output(spec: &InstanceSpec, alphabet: &Alphabet) -> Result<LetterString, TaskError> {
    use Transformation::*;
    let s = spec.base_start;
    let len = spec.base_length;
    let run = alphabet.run(s, len)?;
    let r = run.letters();
    let at = |i: usize| alphabet.letter_at(i);
    let out = match spec.transformation {
        Extend => r.iter().copied().chain([at(s + len)]).collect(),
        Successor => r[..len - 1].iter().copied().chain([at(s + len)]).collect(),
        Predecessor => [at(s - 1)].into_iter().chain(r[1..].iter().copied()).collect(),
        RemoveRedundant | Fix | Sort | RmRedSort => run,
        SortGroup => r.iter().flat_map(|&l| [l, l]).collect(),
        RmRedInterleave | FixInterleave => interleave(r, spec.decoration.interleave_letter.unwrap()),
        RmRedSucc => r[..len - 1].iter().copied().chain([at(s + len)]).collect(),
        FixExt => r.iter().copied().chain([at(s + len)]).collect(),
        ExtPred => [at(s - 1)]
            .into_iter()
            .chain(r[1..].iter().copied())
            .chain([at(s + len)])
            .collect(),
        ExtGroup => r
            .iter()
            .copied()
            .chain([at(s + len)])
            .flat_map(|l| [l, l])
            .collect(),
        ExtExtSucc => r.iter().copied().chain([at(s + len), at(s + len + 2)]).collect(),
        FixPredSucc => [at(s - 1)]
            .into_iter()
            .chain(r[1..len - 1].iter().copied())
            .chain([at(s + len)])
            .collect(),
        Reverse => r.iter().rev().copied().collect(),
        Shift => {
            let off = spec.decoration.shift_offset.unwrap_or(DEFAULT_SHIFT_OFFSET);
            (s + off..s + off + len).map(at).collect()
        }
        Replicate => r.iter().copied().chain(r.iter().copied()).collect(),
    };
    Ok(out)
}

/// Samples one (input, output) instance of `t`.
pub fn make_instance(
    t: Transformation,
    alphabet: &Alphabet,
    rng: &mut impl Rng,
    shared: &TaskShared,
) -> Result<(InstanceSpec, LetterString, LetterString), TaskError> {
    let spec = sample_spec(t, alphabet, rng, shared)?;
    let input = realize_input(&spec, alphabet)?;
    let output = realize_output(&spec, alphabet)?;
    Ok((spec, input, output))
}

/// Ground-truth answer for `query` under transformation `t`.
///
/// With a known `spec` (generation path) the answer is exact. Without one
/// (scoring path, e.g. error classification), the instance structure is
/// inferred from the query; ambiguous queries resolve to the first valid
/// reading in scan order.
pub fn oracle_answer(
    t: Transformation,
    alphabet: &Alphabet,
    query: &LetterString,
    spec: Option<&InstanceSpec>,
) -> Result<LetterString, TaskError> {
    let spec = match spec {
        Some(s) => s.clone(),
        None => infer_spec(t, alphabet, query)?,
    };
    realize_output(&spec, alphabet)
}

/// Interprets `query` as an input of transformation `t`, recovering the
/// base run and decoration.
pub fn infer_spec(
    t: Transformation,
    alphabet: &Alphabet,
    query: &LetterString,
) -> Result<InstanceSpec, TaskError> {
    use Transformation::*;
    let malformed = || TaskError::MalformedQuery(t);
    let mk = |start: usize, length: usize, deco: Decoration| InstanceSpec {
        transformation: t,
        base_start: start,
        base_length: length,
        decoration: deco,
    };
    let check_range = |start: usize, length: usize, off: usize| {
        start_range(t, length, off).is_some_and(|r| r.contains(&start))
    };
    match t {
        Extend | Successor | Predecessor | ExtPred | ExtExtSucc | Reverse | Replicate => {
            let (s, len) = as_run(alphabet, query.letters()).ok_or_else(malformed)?;
            if !check_range(s, len, 0) {
                return Err(malformed());
            }
            Ok(mk(s, len, Decoration::default()))
        }
        Shift => {
            let (s, len) = as_run(alphabet, query.letters()).ok_or_else(malformed)?;
            if !check_range(s, len, DEFAULT_SHIFT_OFFSET) {
                return Err(malformed());
            }
            Ok(mk(s, len, Decoration { shift_offset: Some(DEFAULT_SHIFT_OFFSET), ..Default::default() }))
        }
        RemoveRedundant | RmRedSucc => {
            let (s, len, dup) = as_dup_run(alphabet, query.letters()).ok_or_else(malformed)?;
            if !check_range(s, len, 0) {
                return Err(malformed());
            }
            Ok(mk(s, len, Decoration { duplicate_pos: Some(dup), ..Default::default() }))
        }
        Fix | FixExt | FixPredSucc => {
            let (s, len, p, w) = as_corrupt_run(alphabet, query.letters(), None).ok_or_else(malformed)?;
            if !check_range(s, len, 0) {
                return Err(malformed());
            }
            Ok(mk(s, len, Decoration { corrupt_pos: Some(p), corrupt_letter: Some(w), ..Default::default() }))
        }
        Sort => {
            let (s, len) = as_distinct_set_run(alphabet, query.letters()).ok_or_else(malformed)?;
            Ok(mk(s, len, Decoration { shuffle: Some(argsort_positions(alphabet, query.letters())), ..Default::default() }))
        }
        SortGroup => {
            let pairs = as_pairs(query.letters()).ok_or_else(malformed)?;
            let (s, len) = as_distinct_set_run(alphabet, &pairs).ok_or_else(malformed)?;
            Ok(mk(s, len, Decoration { shuffle: Some(argsort_positions(alphabet, &pairs)), ..Default::default() }))
        }
        ExtGroup => {
            let pairs = as_pairs(query.letters()).ok_or_else(malformed)?;
            let (s, len) = as_run(alphabet, &pairs).ok_or_else(malformed)?;
            if !check_range(s, len, 0) {
                return Err(malformed());
            }
            Ok(mk(s, len, Decoration::default()))
        }
        RmRedSort => {
            let (s, len, dup_letter) = as_dup_multiset_run(alphabet, query.letters()).ok_or_else(malformed)?;
            let dup_pos = alphabet.index_of(dup_letter) - s;
            // Recover the applied permutation of the duplicated run:
            // each query letter consumes its first unclaimed slot.
            let dup_run = with_duplicate(alphabet.run(s, len).unwrap().letters(), dup_pos);
            let mut perm = Vec::with_capacity(len + 1);
            for &q in query.letters() {
                let j = dup_run
                    .iter()
                    .enumerate()
                    .position(|(idx, &x)| x == q && !perm.contains(&idx))
                    .ok_or_else(malformed)?;
                perm.push(j);
            }
            Ok(mk(s, len, Decoration { duplicate_pos: Some(dup_pos), shuffle: Some(perm), ..Default::default() }))
        }
        RmRedInterleave => {
            let (tokens, il) = de_interleave(query.letters()).ok_or_else(malformed)?;
            let (s, len, dup) = as_dup_run(alphabet, &tokens).ok_or_else(malformed)?;
            if alphabet.run(s, len).unwrap().letters().contains(&il) {
                return Err(malformed());
            }
            Ok(mk(s, len, Decoration {
                duplicate_pos: Some(dup),
                interleave_letter: Some(il),
                ..Default::default()
            }))
        }
        FixInterleave => {
            let (tokens, il) = de_interleave(query.letters()).ok_or_else(malformed)?;
            let (s, len, p, w) = as_corrupt_run(alphabet, &tokens, Some(il)).ok_or_else(malformed)?;
            if alphabet.run(s, len).unwrap().letters().contains(&il) {
                return Err(malformed());
            }
            Ok(mk(s, len, Decoration {
                corrupt_pos: Some(p),
                corrupt_letter: Some(w),
                interleave_letter: Some(il),
                ..Default::default()
            }))
        }
    }
}

/// Contiguous ascending run of the alphabet, length 2..=6.
fn as_run(alphabet: &Alphabet, letters: &[Letter]) -> Option<(usize, usize)> {
    let len = letters.len();
    if !(2..=6).contains(&len) {
        return None;
    }
    let s = alphabet.index_of(letters[0]);
    for (i, &l) in letters.iter().enumerate() {
        if s + i >= ALPHABET_LEN || alphabet.index_of(l) != s + i {
            return None;
        }
    }
    Some((s, len))
}

/// Run with exactly one adjacent duplicate.
fn as_dup_run(alphabet: &Alphabet, letters: &[Letter]) -> Option<(usize, usize, usize)> {
    let n = letters.len();
    if n < 3 {
        return None;
    }
    let dup_at = (0..n - 1).find(|&i| letters[i] == letters[i + 1])?;
    let mut dedup: Vec<Letter> = letters[..=dup_at].to_vec();
    dedup.extend_from_slice(&letters[dup_at + 2..]);
    let (s, len) = as_run(alphabet, &dedup)?;
    Some((s, len, dup_at))
}

/// Run with exactly one position replaced by a letter outside the run.
/// Returns the first valid reading in position order.
fn as_corrupt_run(
    alphabet: &Alphabet,
    letters: &[Letter],
    exclude: Option<Letter>,
) -> Option<(usize, usize, usize, Letter)> {
    let len = letters.len();
    if !(2..=6).contains(&len) {
        return None;
    }
    'cand: for p in 0..len {
        // Anchor the run start on a non-corrupt position.
        let anchor = if p == 0 { 1 } else { 0 };
        let anchor_idx = alphabet.index_of(letters[anchor]);
        let s = match anchor_idx.checked_sub(anchor) {
            Some(s) => s,
            None => continue,
        };
        if s + len > ALPHABET_LEN {
            continue;
        }
        let run: Vec<Letter> = (s..s + len).map(|i| alphabet.letter_at(i)).collect();
        for i in 0..len {
            if i != p && letters[i] != run[i] {
                continue 'cand;
            }
        }
        let w = letters[p];
        if run.contains(&w) || Some(w) == exclude {
            continue;
        }
        return Some((s, len, p, w));
    }
    None
}

/// Distinct letters whose sorted positions form a contiguous run.
fn as_distinct_set_run(alphabet: &Alphabet, letters: &[Letter]) -> Option<(usize, usize)> {
    let len = letters.len();
    if !(2..=6).contains(&len) {
        return None;
    }
    let mut idx: Vec<usize> = letters.iter().map(|&l| alphabet.index_of(l)).collect();
    idx.sort_unstable();
    if idx.windows(2).any(|w| w[1] != w[0] + 1) {
        return None;
    }
    Some((idx[0], len))
}

/// Positions such that `perm[i]` is the run index shown at output slot i.
fn argsort_positions(alphabet: &Alphabet, letters: &[Letter]) -> Vec<usize> {
    let mut idx: Vec<usize> = letters.iter().map(|&l| alphabet.index_of(l)).collect();
    let min = *idx.iter().min().unwrap();
    for i in idx.iter_mut() {
        *i -= min;
    }
    idx
}

/// Adjacent equal pairs, e.g. "d d c c" -> [d, c].
fn as_pairs(letters: &[Letter]) -> Option<Vec<Letter>> {
    if letters.len() < 4 || letters.len() % 2 != 0 {
        return None;
    }
    let mut out = Vec::with_capacity(letters.len() / 2);
    for chunk in letters.chunks(2) {
        if chunk[0] != chunk[1] {
            return None;
        }
        out.push(chunk[0]);
    }
    Some(out)
}

/// Splits "t0 x t1 x t2 ..." into the even-position tokens and the
/// interleave letter found at every odd position.
fn de_interleave(letters: &[Letter]) -> Option<(Vec<Letter>, Letter)> {
    if letters.len() < 3 || letters.len() % 2 == 0 {
        return None;
    }
    let il = letters[1];
    if letters.iter().skip(1).step_by(2).any(|&l| l != il) {
        return None;
    }
    Some((letters.iter().step_by(2).copied().collect(), il))
}

/// Multiset where exactly one letter appears twice and the distinct
/// letters form a contiguous run. Returns the duplicated letter.
fn as_dup_multiset_run(alphabet: &Alphabet, letters: &[Letter]) -> Option<(usize, usize, Letter)> {
    let mut counts = [0u8; ALPHABET_LEN];
    for &l in letters {
        counts[l.id() as usize] += 1;
    }
    let mut dup = None;
    let mut distinct = Vec::new();
    for (id, &c) in counts.iter().enumerate() {
        match c {
            0 => {}
            1 => distinct.push(Letter::new(id as u8).unwrap()),
            2 => {
                if dup.is_some() {
                    return None;
                }
                let l = Letter::new(id as u8).unwrap();
                dup = Some(l);
                distinct.push(l);
            }
            _ => return None,
        }
    }
    let dup = dup?;
    let (s, len) = as_distinct_set_run(alphabet, &distinct)?;
    Some((s, len, dup))
}

/// Assembles a full task: example(s) plus a query of the same tag.
pub fn build_task(
    t: Transformation,
    alphabet: &Alphabet,
    rng: &mut impl Rng,
    n_examples: usize,
    is_copy: bool,
) -> Result<AnalogyTask, TaskError> {
    assert!((1..=5).contains(&n_examples));
    let shared = TaskShared {
        interleave_letter: if uses_interleave(t) {
            Some(Letter::new(rng.random_range(0..ALPHABET_LEN as u8)).unwrap())
        } else {
            None
        },
        shift_offset: Some(DEFAULT_SHIFT_OFFSET),
    };
    for _ in 0..RETRY_BUDGET {
        let mut examples = Vec::with_capacity(n_examples);
        for _ in 0..n_examples {
            let (_, input, output) = make_instance(t, alphabet, rng, &shared)?;
            examples.push((input, output));
        }
        // A task is only well-posed if the query alone (plus the tag)
        // determines the answer: the inferred oracle reading must agree
        // with the realized target. Ambiguous decorations (e.g. a
        // corrupted run that also reads as a different corrupted run)
        // are resampled.
        let unambiguous = |query: &LetterString, target: &LetterString| {
            oracle_answer(t, alphabet, query, None).is_ok_and(|ans| ans == *target)
        };
        if is_copy {
            let (query, target) = examples[0].clone();
            if !unambiguous(&query, &target) {
                continue;
            }
            return Ok(AnalogyTask {
                alphabet: alphabet.clone(),
                examples,
                query,
                target,
                transformation: t,
                is_copy: true,
            });
        }
        for _ in 0..RETRY_BUDGET {
            let (_, query, target) = make_instance(t, alphabet, rng, &shared)?;
            if examples.iter().all(|(input, _)| *input != query) && unambiguous(&query, &target) {
                return Ok(AnalogyTask {
                    alphabet: alphabet.clone(),
                    examples,
                    query,
                    target,
                    transformation: t,
                    is_copy: false,
                });
            }
        }
        // No differing query found; resample the examples.
    }
    Err(TaskError::ExhaustedSampling)
}

// ---------------------------------------------------------------------------
// Datasets
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct DatasetConfig {
    pub name: String,
    pub alphabet_pool_size: usize,
    pub include_copy: bool,
    pub n_examples: usize,
    pub train_size: usize,
    pub val_size: usize,
    pub test_id_size: usize,
    /// Tasks per out-of-distribution suite cell.
    pub ood_suite_size: usize,
    pub seed: u64,
}

impl DatasetConfig {
    /// Full-scale profile without copy tasks: 230k tasks, 180k/25k/25k.
    pub fn full_no_copy() -> Self {
        DatasetConfig {
            name: "full-nocopy-20".into(),
            alphabet_pool_size: 20,
            include_copy: false,
            n_examples: 1,
            train_size: 180_000,
            val_size: 25_000,
            test_id_size: 25_000,
            ood_suite_size: 10_000,
            seed: 1,
        }
    }

    /// Full-scale profile with copy tasks: 400k training tasks, half copy.
    pub fn full_copy() -> Self {
        DatasetConfig {
            name: "full-copy-20".into(),
            alphabet_pool_size: 20,
            include_copy: true,
            n_examples: 1,
            train_size: 400_000,
            val_size: 25_000,
            test_id_size: 25_000,
            ood_suite_size: 10_000,
            seed: 1,
        }
    }

    /// Desk-scale profile: 60k training tasks.
    pub fn desk(name: &str, alphabet_pool_size: usize, include_copy: bool, n_examples: usize, seed: u64) -> Self {
        DatasetConfig {
            name: name.into(),
            alphabet_pool_size,
            include_copy,
            n_examples,
            train_size: 60_000,
            val_size: 5_000,
            test_id_size: 5_000,
            ood_suite_size: 2_000,
            seed,
        }
    }

    pub fn validate(&self) -> Result<(), TaskError> {
        if self.alphabet_pool_size < 5 {
            return Err(TaskError::BadConfig("alphabet pool must have at least 5 entries".into()));
        }
        if !(1..=5).contains(&self.n_examples) {
            return Err(TaskError::BadConfig(format!("n_examples {} outside 1..=5", self.n_examples)));
        }
        if self.train_size == 0 {
            return Err(TaskError::BadConfig("empty training split".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Split {
    Train,
    Val,
    TestId,
}

/// One line of a dataset file.
#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct TaskRecord {
    /// 26-character alphabet order string.
    pub alphabet: String,
    pub examples: Vec<[LetterString; 2]>,
    pub query: LetterString,
    pub target: LetterString,
    pub transformation: Transformation,
    pub is_copy: bool,
    pub split: String,
}

impl TaskRecord {
    pub fn from_task(task: &AnalogyTask, split: &str) -> Self {
        TaskRecord {
            alphabet: task.alphabet.order_string(),
            examples: task
                .examples
                .iter()
                .map(|(i, o)| [i.clone(), o.clone()])
                .collect(),
            query: task.query.clone(),
            target: task.target.clone(),
            transformation: task.transformation,
            is_copy: task.is_copy,
            split: split.to_string(),
        }
    }

    pub fn to_task(&self) -> Result<AnalogyTask, TaskError> {
        let alphabet = Alphabet::from_order_str(&self.alphabet, 0, 0)?;
        Ok(AnalogyTask {
            alphabet,
            examples: self.examples.iter().map(|[i, o]| (i.clone(), o.clone())).collect(),
            query: self.query.clone(),
            target: self.target.clone(),
            transformation: self.transformation,
            is_copy: self.is_copy,
        })
    }
}

/// Balanced alphabet pool: size/5 slots per permutation level; the k=0
/// level holds the single standard alphabet, its remaining slots fall to
/// k=2. Orders are pairwise distinct.
pub fn build_alphabet_pool(size: usize, seed: u64) -> Vec<Alphabet> {
    let per_level = size / 5;
    let mut pool = vec![Alphabet::standard()];
    let mut orders: HashSet<String> = pool.iter().map(|a| a.order_string()).collect();
    let mut counter = 0u64;
    let mut push_level = |k: u32, want: usize, pool: &mut Vec<Alphabet>, orders: &mut HashSet<String>| {
        let mut added = 0;
        while added < want {
            let a = Alphabet::permuted(k, seed.wrapping_mul(1_000_003).wrapping_add(counter)).unwrap();
            counter += 1;
            if orders.insert(a.order_string()) {
                pool.push(a);
                added += 1;
            }
        }
    };
    // k=0 slot count minus the standard alphabet falls to k=2.
    let extra_k2 = per_level.saturating_sub(1) + size - per_level * 5;
    push_level(2, per_level + extra_k2, &mut pool, &mut orders);
    for k in [5, 10, 20] {
        push_level(k, per_level, &mut pool, &mut orders);
    }
    pool.truncate(size);
    pool
}

/// Fresh alphabets disjoint from `existing`, for the new-alphabet suites.
pub fn build_ood_alphabets(count: usize, seed: u64, existing: &[Alphabet]) -> Vec<Alphabet> {
    let taken: HashSet<String> = existing.iter().map(|a| a.order_string()).collect();
    let mut out = Vec::new();
    let mut orders = taken.clone();
    let mut counter = 0u64;
    let levels = &PERMUTATION_LEVELS[1..]; // the standard order is always "seen"
    let mut level_idx = 0;
    while out.len() < count {
        let k = levels[level_idx % levels.len()];
        let a = Alphabet::permuted(k, seed.wrapping_mul(7_368_787).wrapping_add(500_000 + counter)).unwrap();
        counter += 1;
        if orders.insert(a.order_string()) {
            out.push(a);
            level_idx += 1;
        }
    }
    out
}

fn splitmix64(mut x: u64) -> u64 {
    x = x.wrapping_add(0x9E3779B97F4A7C15);
    x = (x ^ (x >> 30)).wrapping_mul(0xBF58476D1CE4E5B9);
    x = (x ^ (x >> 27)).wrapping_mul(0x94D049BB133111EB);
    x ^ (x >> 31)
}

/// Per-task generator stream, so parallel and serial generation agree.
pub fn task_rng(dataset_seed: u64, stream: u64, index: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(splitmix64(
        dataset_seed.wrapping_mul(0x51_7C_C1_B7_27_22_0A_95).wrapping_add(stream.wrapping_mul(0x2545F4914F6CDD1D)).wrapping_add(index),
    ))
}

/// The task at `index` of the in-distribution stream. Deterministic in
/// `(config.seed, index)`.
pub fn task_for_index(config: &DatasetConfig, pool: &[Alphabet], index: u64) -> Result<AnalogyTask, TaskError> {
    let mut rng = task_rng(config.seed, 0, index);
    let t = Transformation::SEEN[rng.random_range(0..Transformation::SEEN.len())];
    let alphabet = &pool[rng.random_range(0..pool.len())];
    let is_copy = config.include_copy && index % 2 == 0;
    build_task(t, alphabet, &mut rng, config.n_examples, is_copy)
}

/// A task from an out-of-distribution suite stream.
pub fn ood_task_for_index(
    config: &DatasetConfig,
    alphabets: &[Alphabet],
    tags: &[Transformation],
    stream: u64,
    index: u64,
    is_copy: bool,
) -> Result<AnalogyTask, TaskError> {
    let mut rng = task_rng(config.seed, stream, index);
    let t = tags[rng.random_range(0..tags.len())];
    let alphabet = &alphabets[rng.random_range(0..alphabets.len())];
    build_task(t, alphabet, &mut rng, config.n_examples, is_copy)
}

/// Names and tag/alphabet composition of the OOD suites.
pub fn ood_suites() -> [(&'static str, TransformClass, bool, u64); 6] {
    // (name, transformation class, uses new alphabets, rng stream)
    [
        ("ood_seen_new_alpha", TransformClass::Seen, true, 1),
        ("ood_comp_seen_alpha", TransformClass::Compositional, false, 2),
        ("ood_comp_new_alpha", TransformClass::Compositional, true, 3),
        ("ood_novel_seen_alpha", TransformClass::Novel, false, 4),
        ("ood_novel_new_alpha", TransformClass::Novel, true, 5),
        ("ood_copy_check", TransformClass::Seen, false, 6),
    ]
}

pub fn class_tags(class: TransformClass) -> &'static [Transformation] {
    match class {
        TransformClass::Seen => &Transformation::SEEN,
        TransformClass::Compositional => &Transformation::COMPOSITIONAL,
        TransformClass::Novel => &Transformation::NOVEL,
    }
}
