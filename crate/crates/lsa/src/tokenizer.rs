//! Mapping between tasks and encoder/decoder token streams.
//!
//! Encoder stream: alphabet letters, "|", then per example "in → out |",
//! then the query letters and a trailing "→". Decoder input starts with
//! the start-of-sequence token; the decoder target ends with EOS.

use crate::alphabet::{Alphabet, AlphabetError, Letter, LetterString, ALPHABET_LEN};
use crate::taskgen::AnalogyTask;
use serde::{Deserialize, Serialize};
use thiserror::Error;

pub const VOCAB_SIZE: usize = 29;
pub const PAD: usize = 0;
/// Encoder separator "|".
pub const SEP: usize = 27;
/// Encoder arrow "→".
pub const ARROW: usize = 28;
/// Decoder start-of-sequence token (rendered "→").
pub const START: usize = 27;
pub const EOS: usize = 28;

#[derive(Debug, Error, PartialEq, Eq)]
pub enum TokenError {
    #[error("token id {0} outside vocabulary")]
    VocabViolation(usize),
    #[error("token stream does not parse: {0}")]
    BadStream(String),
    #[error(transparent)]
    Alphabet(#[from] AlphabetError),
}

/// Token id of a letter; letters share ids 1..=26 in both vocabularies.
pub fn letter_token(l: Letter) -> usize {
    l.id() as usize + 1
}

pub fn token_letter(tok: usize) -> Result<Letter, TokenError> {
    if (1..=ALPHABET_LEN).contains(&tok) {
        Ok(Letter::new((tok - 1) as u8).unwrap())
    } else {
        Err(TokenError::VocabViolation(tok))
    }
}

/// Token id table, persisted alongside checkpoints so weights can never
/// be paired with a different id assignment.
#[derive(Debug, Clone, Serialize, Deserialize, PartialEq, Eq)]
pub struct VocabManifest {
    pub version: u32,
    pub vocab_size: usize,
    pub pad: usize,
    pub letters: [usize; 2], // inclusive id range
    pub encoder_sep: usize,
    pub encoder_arrow: usize,
    pub decoder_start: usize,
    pub decoder_eos: usize,
}

impl Default for VocabManifest {
    fn default() -> Self {
        VocabManifest {
            version: 1,
            vocab_size: VOCAB_SIZE,
            pad: PAD,
            letters: [1, 26],
            encoder_sep: SEP,
            encoder_arrow: ARROW,
            decoder_start: START,
            decoder_eos: EOS,
        }
    }
}

/// Role of an encoder position, derivable from the serialization grammar.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Role {
    Alphabet,
    ExampleIn,
    ExampleOut,
    Query,
    Separator,
    Arrow,
}

impl Role {
    pub const ALL: [Role; 6] =
        [Role::Alphabet, Role::ExampleIn, Role::ExampleOut, Role::Query, Role::Separator, Role::Arrow];

    pub fn name(self) -> &'static str {
        match self {
            Role::Alphabet => "alphabet",
            Role::ExampleIn => "example_in",
            Role::ExampleOut => "example_out",
            Role::Query => "query",
            Role::Separator => "separator",
            Role::Arrow => "arrow",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct EncodedTask {
    pub encoder: Vec<usize>,
    /// Start token followed by the target letters (teacher forcing input).
    pub decoder_input: Vec<usize>,
    /// Target letters followed by EOS.
    pub decoder_target: Vec<usize>,
}

pub fn encode_task(task: &AnalogyTask) -> EncodedTask {
    let mut enc = Vec::with_capacity(encoder_len(task));
    for &l in task.alphabet.order() {
        enc.push(letter_token(l));
    }
    enc.push(SEP);
    for (input, output) in &task.examples {
        enc.extend(input.letters().iter().map(|&l| letter_token(l)));
        enc.push(ARROW);
        enc.extend(output.letters().iter().map(|&l| letter_token(l)));
        enc.push(SEP);
    }
    enc.extend(task.query.letters().iter().map(|&l| letter_token(l)));
    enc.push(ARROW);

    let target: Vec<usize> = task.target.letters().iter().map(|&l| letter_token(l)).collect();
    let mut decoder_input = Vec::with_capacity(target.len() + 1);
    decoder_input.push(START);
    decoder_input.extend(&target);
    let mut decoder_target = target;
    decoder_target.push(EOS);

    EncodedTask { encoder: enc, decoder_input, decoder_target }
}

pub fn encoder_len(task: &AnalogyTask) -> usize {
    ALPHABET_LEN
        + 1
        + task.examples.iter().map(|(i, o)| i.len() + o.len() + 2).sum::<usize>()
        + task.query.len()
        + 1
}

/// Task fields recovered from token streams. Transformation tag and
/// alphabet provenance are not part of the streams.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct DecodedTask {
    pub alphabet: Alphabet,
    pub examples: Vec<(LetterString, LetterString)>,
    pub query: LetterString,
    pub target: LetterString,
}

pub fn decode_task(encoder: &[usize], decoder_target: &[usize]) -> Result<DecodedTask, TokenError> {
    if encoder.len() < ALPHABET_LEN + 3 {
        return Err(TokenError::BadStream("encoder stream too short".into()));
    }
    let order: Result<String, TokenError> =
        encoder[..ALPHABET_LEN].iter().map(|&t| token_letter(t).map(|l| l.symbol())).collect();
    let alphabet = Alphabet::from_order_str(&order?, 0, 0)?;
    if encoder[ALPHABET_LEN] != SEP {
        return Err(TokenError::BadStream("expected separator after alphabet".into()));
    }
    // Segments between separators; the last one is the query.
    let rest = &encoder[ALPHABET_LEN + 1..];
    let mut segments: Vec<&[usize]> = Vec::new();
    let mut seg_start = 0;
    for (i, &t) in rest.iter().enumerate() {
        if t == SEP {
            segments.push(&rest[seg_start..i]);
            seg_start = i + 1;
        }
    }
    segments.push(&rest[seg_start..]);
    let (query_seg, example_segs) = segments.split_last().unwrap();
    let mut examples = Vec::with_capacity(example_segs.len());
    for seg in example_segs.iter() {
        let arrow = seg
            .iter()
            .position(|&t| t == ARROW)
            .ok_or_else(|| TokenError::BadStream("example without arrow".into()))?;
        let input: Result<LetterString, _> = seg[..arrow].iter().map(|&t| token_letter(t)).collect();
        let output: Result<LetterString, _> = seg[arrow + 1..].iter().map(|&t| token_letter(t)).collect();
        examples.push((input?, output?));
    }
    if examples.is_empty() {
        return Err(TokenError::BadStream("no examples".into()));
    }
    let (last, query_letters) = query_seg
        .split_last()
        .ok_or_else(|| TokenError::BadStream("empty query segment".into()))?;
    if *last != ARROW {
        return Err(TokenError::BadStream("query not closed by arrow".into()));
    }
    let query: Result<LetterString, _> = query_letters.iter().map(|&t| token_letter(t)).collect();
    let target: Result<LetterString, _> = decoder_target
        .iter()
        .take_while(|&&t| t != EOS)
        .map(|&t| token_letter(t))
        .collect();
    Ok(DecodedTask { alphabet, examples, query: query?, target: target? })
}

/// Role of every encoder position, in stream order.
pub fn role_labels(task: &AnalogyTask) -> Vec<Role> {
    let mut roles = Vec::with_capacity(encoder_len(task));
    roles.extend(std::iter::repeat_n(Role::Alphabet, ALPHABET_LEN));
    roles.push(Role::Separator);
    for (input, output) in &task.examples {
        roles.extend(std::iter::repeat_n(Role::ExampleIn, input.len()));
        roles.push(Role::Arrow);
        roles.extend(std::iter::repeat_n(Role::ExampleOut, output.len()));
        roles.push(Role::Separator);
    }
    roles.extend(std::iter::repeat_n(Role::Query, task.query.len()));
    roles.push(Role::Arrow);
    roles
}

/// Right-pads a batch of sequences with PAD. Mask entries are true at
/// real token positions.
pub fn pad_batch(sequences: &[Vec<usize>]) -> (Vec<Vec<usize>>, Vec<Vec<bool>>) {
    assert!(!sequences.is_empty(), "pad_batch on empty batch");
    let width = sequences.iter().map(Vec::len).max().unwrap();
    let mut tokens = Vec::with_capacity(sequences.len());
    let mut mask = Vec::with_capacity(sequences.len());
    for seq in sequences {
        let mut row = seq.clone();
        row.resize(width, PAD);
        let mut m = vec![true; seq.len()];
        m.resize(width, false);
        tokens.push(row);
        mask.push(m);
    }
    (tokens, mask)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::taskgen::build_task;
    use crate::transform::Transformation;
    use rand_chacha::rand_core::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn sample_task(t: Transformation, n_examples: usize, seed: u64) -> AnalogyTask {
        let a = Alphabet::permuted(5, seed).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        build_task(t, &a, &mut rng, n_examples, false).unwrap()
    }

    #[test]
    fn encoder_stream_shape() {
        let task = sample_task(Transformation::Predecessor, 3, 1);
        let enc = encode_task(&task);
        assert_eq!(enc.encoder.len(), encoder_len(&task));
        let arrows = enc.encoder.iter().filter(|&&t| t == ARROW).count();
        assert_eq!(arrows, task.examples.len() + 1);
        assert_eq!(*enc.encoder.last().unwrap(), ARROW);
        // Alphabet tokens lead the stream.
        for (i, &l) in task.alphabet.order().iter().enumerate() {
            assert_eq!(enc.encoder[i], letter_token(l));
        }
        assert_eq!(enc.encoder[ALPHABET_LEN], SEP);
    }

    #[test]
    fn decoder_streams_align_for_teacher_forcing() {
        let task = sample_task(Transformation::Successor, 1, 2);
        let enc = encode_task(&task);
        assert_eq!(enc.decoder_input[0], START);
        assert_eq!(*enc.decoder_target.last().unwrap(), EOS);
        assert_eq!(enc.decoder_input.len(), enc.decoder_target.len());
        assert_eq!(&enc.decoder_input[1..], &enc.decoder_target[..enc.decoder_target.len() - 1]);
    }

    #[test]
    fn roundtrip_recovers_task_fields() {
        for seed in 0..30 {
            let t = Transformation::ALL[(seed % 19) as usize];
            let n = 1 + (seed % 5) as usize;
            let task = sample_task(t, n, seed);
            let enc = encode_task(&task);
            let dec = decode_task(&enc.encoder, &enc.decoder_target).unwrap();
            assert_eq!(dec.alphabet.order(), task.alphabet.order());
            assert_eq!(dec.examples, task.examples);
            assert_eq!(dec.query, task.query);
            assert_eq!(dec.target, task.target);
        }
    }

    #[test]
    fn roles_cover_every_position() {
        let task = sample_task(Transformation::RmRedInterleave, 2, 4);
        let roles = role_labels(&task);
        let enc = encode_task(&task);
        assert_eq!(roles.len(), enc.encoder.len());
        assert_eq!(roles[0], Role::Alphabet);
        assert_eq!(roles[ALPHABET_LEN], Role::Separator);
        assert_eq!(*roles.last().unwrap(), Role::Arrow);
        let n_query = roles.iter().filter(|&&r| r == Role::Query).count();
        assert_eq!(n_query, task.query.len());
    }

    #[test]
    fn pad_batch_masks_tail() {
        let (tokens, mask) = pad_batch(&[vec![1, 2, 3, 4, 5], vec![1, 2, 3, 4, 5, 6, 7, 8]]);
        assert_eq!(tokens[0].len(), 8);
        assert_eq!(&tokens[0][5..], &[PAD, PAD, PAD]);
        assert_eq!(mask[0], [true, true, true, true, true, false, false, false]);
        assert!(mask[1].iter().all(|&b| b));
    }

    #[test]
    fn pad_batch_equal_lengths_all_true() {
        let (_, mask) = pad_batch(&[vec![1, 2], vec![3, 4]]);
        assert!(mask.iter().flatten().all(|&b| b));
    }

    #[test]
    fn target_tokens_end_with_eos() {
        let a = Alphabet::standard();
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let task = build_task(Transformation::Predecessor, &a, &mut rng, 1, false).unwrap();
        let enc = encode_task(&task);
        let expect: Vec<usize> =
            task.target.letters().iter().map(|&l| letter_token(l)).chain([EOS]).collect();
        assert_eq!(enc.decoder_target, expect);
    }
}
