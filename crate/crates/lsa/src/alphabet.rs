//! Letters, alphabets and the primitive alphabet operations.
//!
//! An [`Alphabet`] is an ordered permutation of the 26 lowercase letters.
//! Successor/predecessor relations are always defined relative to an
//! alphabet's order, not the standard a..z order.

use rand::Rng;
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

pub const ALPHABET_LEN: usize = 26;

/// Transposition counts supported for permuted alphabets.
pub const PERMUTATION_LEVELS: [u32; 5] = [0, 2, 5, 10, 20];

#[derive(Debug, Error, PartialEq, Eq, Clone)]
pub enum AlphabetError {
    #[error("letter id {0} out of range")]
    LetterOutOfRange(u32),
    #[error("symbol {0:?} is not a lowercase letter")]
    BadSymbol(char),
    #[error("letter is the last element of the alphabet")]
    LastLetter,
    #[error("letter is the first element of the alphabet")]
    FirstLetter,
    #[error("run out of range: start {start} length {length}")]
    OutOfRange { start: usize, length: usize },
    #[error("unsupported permutation level {0}")]
    InvalidLevel(u32),
    #[error("alphabet string must contain all 26 letters exactly once")]
    NotAPermutation,
}

/// One of the 26 letter symbols, identified by its position in the
/// standard order (a = 0 .. z = 25).
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Letter(u8);

impl Letter {
    pub fn new(id: u8) -> Result<Self, AlphabetError> {
        if (id as usize) < ALPHABET_LEN {
            Ok(Letter(id))
        } else {
            Err(AlphabetError::LetterOutOfRange(id as u32))
        }
    }

    pub fn from_symbol(c: char) -> Result<Self, AlphabetError> {
        if c.is_ascii_lowercase() {
            Ok(Letter(c as u8 - b'a'))
        } else {
            Err(AlphabetError::BadSymbol(c))
        }
    }

    pub fn id(self) -> u8 {
        self.0
    }

    pub fn symbol(self) -> char {
        (b'a' + self.0) as char
    }
}

impl std::fmt::Display for Letter {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "{}", self.symbol())
    }
}

/// A permutation of the 26 letters together with its provenance, so the
/// same order can be regenerated from `(permutation_count, seed)`.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct Alphabet {
    order: [Letter; ALPHABET_LEN],
    permutation_count: u32,
    seed: u64,
}

impl Alphabet {
    /// The standard a..z order.
    pub fn standard() -> Self {
        let mut order = [Letter(0); ALPHABET_LEN];
        for (i, slot) in order.iter_mut().enumerate() {
            *slot = Letter(i as u8);
        }
        Alphabet { order, permutation_count: 0, seed: 0 }
    }

    /// Applies `k` seeded random transpositions to the standard order.
    /// `k` must be one of [`PERMUTATION_LEVELS`]; `k = 0` yields the
    /// standard order regardless of seed.
    pub fn permuted(k: u32, seed: u64) -> Result<Self, AlphabetError> {
        if !PERMUTATION_LEVELS.contains(&k) {
            return Err(AlphabetError::InvalidLevel(k));
        }
        let mut alphabet = Alphabet::standard();
        alphabet.permutation_count = k;
        alphabet.seed = seed;
        if k == 0 {
            return Ok(alphabet);
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        for _ in 0..k {
            let i = rng.random_range(0..ALPHABET_LEN);
            let mut j = rng.random_range(0..ALPHABET_LEN - 1);
            if j >= i {
                j += 1;
            }
            alphabet.order.swap(i, j);
        }
        Ok(alphabet)
    }

    /// Parses a 26-character order string, e.g. "bacdef...z".
    pub fn from_order_str(s: &str, permutation_count: u32, seed: u64) -> Result<Self, AlphabetError> {
        let mut order = [Letter(0); ALPHABET_LEN];
        let mut seen = [false; ALPHABET_LEN];
        let chars: Vec<char> = s.chars().collect();
        if chars.len() != ALPHABET_LEN {
            return Err(AlphabetError::NotAPermutation);
        }
        for (i, c) in chars.into_iter().enumerate() {
            let l = Letter::from_symbol(c)?;
            if seen[l.id() as usize] {
                return Err(AlphabetError::NotAPermutation);
            }
            seen[l.id() as usize] = true;
            order[i] = l;
        }
        Ok(Alphabet { order, permutation_count, seed })
    }

    pub fn order(&self) -> &[Letter; ALPHABET_LEN] {
        &self.order
    }

    pub fn order_string(&self) -> String {
        self.order.iter().map(|l| l.symbol()).collect()
    }

    pub fn permutation_count(&self) -> u32 {
        self.permutation_count
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    /// Position of `letter` within this alphabet's order.
    pub fn index_of(&self, letter: Letter) -> usize {
        self.order.iter().position(|&l| l == letter).expect("order is a permutation")
    }

    pub fn letter_at(&self, index: usize) -> Letter {
        self.order[index]
    }

    /// The letter immediately after `letter` in this alphabet's order.
    pub fn successor_of(&self, letter: Letter) -> Result<Letter, AlphabetError> {
        let i = self.index_of(letter);
        if i + 1 >= ALPHABET_LEN {
            return Err(AlphabetError::LastLetter);
        }
        Ok(self.order[i + 1])
    }

    /// The letter immediately before `letter` in this alphabet's order.
    pub fn predecessor_of(&self, letter: Letter) -> Result<Letter, AlphabetError> {
        let i = self.index_of(letter);
        if i == 0 {
            return Err(AlphabetError::FirstLetter);
        }
        Ok(self.order[i - 1])
    }

    /// A contiguous slice of the order, `order[start .. start+length)`.
    /// Lengths outside 2..=6 are rejected; runs are always sampled in
    /// that range before decoration.
    pub fn run(&self, start: usize, length: usize) -> Result<LetterString, AlphabetError> {
        if !(2..=6).contains(&length) || start + length > ALPHABET_LEN {
            return Err(AlphabetError::OutOfRange { start, length });
        }
        Ok(LetterString::new(self.order[start..start + length].to_vec()))
    }
}

impl Serialize for Alphabet {
    fn serialize<S: serde::Serializer>(&self, serializer: S) -> Result<S::Ok, S::Error> {
        #[derive(Serialize)]
        struct Repr<'a> {
            order: &'a str,
            permutation_count: u32,
            seed: u64,
        }
        Repr { order: &self.order_string(), permutation_count: self.permutation_count, seed: self.seed }
            .serialize(serializer)
    }
}

impl<'de> Deserialize<'de> for Alphabet {
    fn deserialize<D: serde::Deserializer<'de>>(deserializer: D) -> Result<Self, D::Error> {
        #[derive(Deserialize)]
        struct Repr {
            order: String,
            permutation_count: u32,
            seed: u64,
        }
        let r = Repr::deserialize(deserializer)?;
        Alphabet::from_order_str(&r.order, r.permutation_count, r.seed).map_err(serde::de::Error::custom)
    }
}

/// A non-empty sequence of letters.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Default)]
pub struct LetterString(Vec<Letter>);

impl LetterString {
    pub fn new(letters: Vec<Letter>) -> Self {
        LetterString(letters)
    }

    /// Parses space-separated symbols ("a c d") or a compact form ("acd").
    pub fn parse(s: &str) -> Result<Self, AlphabetError> {
        let letters: Result<Vec<Letter>, _> = if s.contains(' ') {
            s.split_whitespace().flat_map(|w| w.chars()).map(Letter::from_symbol).collect()
        } else {
            s.chars().map(Letter::from_symbol).collect()
        };
        Ok(LetterString(letters?))
    }

    pub fn letters(&self) -> &[Letter] {
        &self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn push(&mut self, l: Letter) {
        self.0.push(l);
    }

    /// Space-separated display form, e.g. "a c d".
    pub fn spaced(&self) -> String {
        self.0.iter().map(|l| l.symbol().to_string()).collect::<Vec<_>>().join(" ")
    }

    /// Compact display form, e.g. "acd".
    pub fn compact(&self) -> String {
        self.0.iter().map(|l| l.symbol()).collect()
    }
}

impl std::fmt::Display for LetterString {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "{}", self.spaced())
    }
}

impl std::ops::Index<usize> for LetterString {
    type Output = Letter;
    fn index(&self, i: usize) -> &Letter {
        &self.0[i]
    }
}

impl FromIterator<Letter> for LetterString {
    fn from_iter<T: IntoIterator<Item = Letter>>(iter: T) -> Self {
        LetterString(iter.into_iter().collect())
    }
}

impl Serialize for LetterString {
    fn serialize<S: serde::Serializer>(&self, serializer: S) -> Result<S::Ok, S::Error> {
        serializer.serialize_str(&self.spaced())
    }
}

impl<'de> Deserialize<'de> for LetterString {
    fn deserialize<D: serde::Deserializer<'de>>(deserializer: D) -> Result<Self, D::Error> {
        let s = String::deserialize(deserializer)?;
        LetterString::parse(&s).map_err(serde::de::Error::custom)
    }
}
