//! Shuffle + Random token corruption with per-token labels.

use std::collections::BTreeSet;
use std::fmt;

use rand::seq::{index, SliceRandom};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::corpus::TokenText;
use crate::error::{Error, Result};

/// Shuffle attempts made before accepting a permutation with fixed points.
pub const DERANGEMENT_RETRIES: usize = 10;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "UPPERCASE")]
pub enum Label {
    Intact = 0,
    Shuffled = 1,
    Random = 2,
}

impl Label {
    pub const ALL: [Label; 3] = [Label::Intact, Label::Shuffled, Label::Random];

    pub fn index(self) -> usize {
        self as usize
    }

    pub fn from_index(i: usize) -> Option<Self> {
        Self::ALL.get(i).copied()
    }

    pub fn name(self) -> &'static str {
        match self {
            Label::Intact => "INTACT",
            Label::Shuffled => "SHUFFLED",
            Label::Random => "RANDOM",
        }
    }
}

impl fmt::Display for Label {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CorruptionConfig {
    #[serde(default = "default_rate")]
    pub p_shuffle: f64,
    #[serde(default = "default_rate")]
    pub p_random: f64,
    #[serde(default)]
    pub seed: u64,
}

fn default_rate() -> f64 {
    0.1
}

impl Default for CorruptionConfig {
    fn default() -> Self {
        Self {
            p_shuffle: default_rate(),
            p_random: default_rate(),
            seed: 0,
        }
    }
}

impl CorruptionConfig {
    pub fn validate(&self) -> Result<()> {
        let unit = |p: f64| (0.0..=1.0).contains(&p);
        if !unit(self.p_shuffle) || !unit(self.p_random) {
            return Err(Error::InvalidArgument(format!(
                "corruption rates must lie in [0, 1], got {} and {}",
                self.p_shuffle, self.p_random
            )));
        }
        if self.p_shuffle + self.p_random > 1.0 + 1e-12 {
            return Err(Error::InvalidArgument(format!(
                "p_shuffle + p_random = {} exceeds 1",
                self.p_shuffle + self.p_random
            )));
        }
        Ok(())
    }

    /// `(floor(p_shuffle * len), floor(p_random * len))`. A small tolerance
    /// keeps products like `0.29 * 100` from rounding down a whole unit.
    pub fn counts(&self, len: usize) -> (usize, usize) {
        let n = |p: f64| ((p * len as f64) + 1e-9).floor() as usize;
        let n_shuffle = n(self.p_shuffle).min(len);
        let n_random = n(self.p_random).min(len - n_shuffle);
        (n_shuffle, n_random)
    }
}

/// Replacement tokens for RANDOM positions, sampled uniformly over distinct
/// token types.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TokenPool {
    types: Vec<TokenText>,
}

impl TokenPool {
    pub fn from_tokens<'a, I>(tokens: I) -> Result<Self>
    where
        I: IntoIterator<Item = &'a TokenText>,
    {
        let types: BTreeSet<&TokenText> = tokens.into_iter().collect();
        if types.is_empty() {
            return Err(Error::EmptyCorpus);
        }
        Ok(Self {
            types: types.into_iter().cloned().collect(),
        })
    }

    pub fn len(&self) -> usize {
        self.types.len()
    }

    pub fn is_empty(&self) -> bool {
        self.types.is_empty()
    }

    pub fn types(&self) -> &[TokenText] {
        &self.types
    }

    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> &TokenText {
        &self.types[rng.random_range(0..self.types.len())]
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct LabeledSequence {
    pub tokens: Vec<TokenText>,
    pub labels: Vec<Label>,
}

impl LabeledSequence {
    pub fn intact(tokens: Vec<TokenText>) -> Self {
        let labels = vec![Label::Intact; tokens.len()];
        Self { tokens, labels }
    }

    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }

    pub fn count(&self, label: Label) -> usize {
        self.labels.iter().filter(|&&l| l == label).count()
    }
}

/// Corrupts `tokens` with a generator seeded from `cfg.seed`.
pub fn corrupt_sequence(
    tokens: &[TokenText],
    cfg: &CorruptionConfig,
    pool: &TokenPool,
) -> Result<LabeledSequence> {
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    corrupt_sequence_with_rng(tokens, cfg, pool, &mut rng)
}

/// Picks `floor(p_shuffle * L)` positions and permutes their tokens among
/// themselves, then `floor(p_random * L)` of the remaining positions and
/// replaces each with a pool sample. `cfg.seed` is ignored; randomness comes
/// from `rng`.
pub fn corrupt_sequence_with_rng<R: Rng + ?Sized>(
    tokens: &[TokenText],
    cfg: &CorruptionConfig,
    pool: &TokenPool,
    rng: &mut R,
) -> Result<LabeledSequence> {
    cfg.validate()?;
    let len = tokens.len();
    let (n_shuffle, n_random) = cfg.counts(len);
    let mut out = LabeledSequence::intact(tokens.to_vec());
    if n_shuffle + n_random == 0 {
        return Ok(out);
    }

    let chosen = index::sample(rng, len, n_shuffle + n_random).into_vec();
    let (shuffle_pos, random_pos) = chosen.split_at(n_shuffle);

    let mut perm: Vec<usize> = (0..n_shuffle).collect();
    for _ in 0..DERANGEMENT_RETRIES {
        perm.shuffle(rng);
        if n_shuffle < 2 || perm.iter().enumerate().all(|(i, &p)| i != p) {
            break;
        }
    }
    for (i, &p) in perm.iter().enumerate() {
        out.tokens[shuffle_pos[i]] = tokens[shuffle_pos[p]].clone();
        out.labels[shuffle_pos[i]] = Label::Shuffled;
    }
    for &pos in random_pos {
        out.tokens[pos] = pool.sample(rng).clone();
        out.labels[pos] = Label::Random;
    }
    Ok(out)
}
