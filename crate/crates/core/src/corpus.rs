//! Whitespace tokenization, character n-gram vocabularies, and per-token
//! morphological feature vectors.

use std::collections::HashMap;
use std::fmt;
use std::io::{BufRead, Write};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::hashing::{md5_digest, Digest128};

/// Character n-gram orders used for featurization.
pub const NGRAM_ORDERS: [usize; 4] = [1, 2, 3, 4];

/// Default number of n-grams kept in a vocabulary.
pub const DEFAULT_VOCAB_CAP: usize = 50_000;

const VOCAB_MAGIC: &str = "#hashemb-vocab v1";

/// A single whitespace-free, non-empty token.
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(try_from = "String", into = "String")]
pub struct TokenText(String);

impl TryFrom<String> for TokenText {
    type Error = Error;

    fn try_from(s: String) -> Result<Self> {
        Self::new(s)
    }
}

impl From<TokenText> for String {
    fn from(t: TokenText) -> String {
        t.0
    }
}

impl TokenText {
    pub fn new(text: impl Into<String>) -> Result<Self> {
        let text = text.into();
        if text.is_empty() {
            return Err(Error::InvalidToken("empty token".into()));
        }
        if text.chars().any(char::is_whitespace) {
            return Err(Error::InvalidToken(format!("{text:?} contains whitespace")));
        }
        Ok(Self(text))
    }

    pub fn as_str(&self) -> &str {
        &self.0
    }

    pub fn into_string(self) -> String {
        self.0
    }
}

impl fmt::Display for TokenText {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

impl AsRef<str> for TokenText {
    fn as_ref(&self) -> &str {
        &self.0
    }
}

/// Splits `text` on maximal runs of Unicode whitespace. No normalization.
pub fn tokenize_whitespace(text: &str) -> Vec<TokenText> {
    text.split_whitespace()
        .map(|t| TokenText(t.to_owned()))
        .collect()
}

/// Calls `f` once per character n-gram occurrence of `token`, for every
/// order in [`NGRAM_ORDERS`]. The n-gram is passed as a borrowed slice of
/// the token.
pub fn for_each_ngram(token: &str, mut f: impl FnMut(&str)) {
    // byte offset of every char boundary, including the end
    let bounds: Vec<usize> = token
        .char_indices()
        .map(|(i, _)| i)
        .chain(std::iter::once(token.len()))
        .collect();
    let n_chars = bounds.len() - 1;
    for n in NGRAM_ORDERS {
        if n > n_chars {
            break;
        }
        for start in 0..=(n_chars - n) {
            f(&token[bounds[start]..bounds[start + n]]);
        }
    }
}

/// Number of n-gram occurrences of a token with `len` characters.
pub fn ngram_occurrences(len: usize) -> usize {
    NGRAM_ORDERS
        .iter()
        .map(|&n| (len + 1).saturating_sub(n))
        .sum()
}

#[derive(Debug, Clone, PartialEq, Eq)]
struct VocabEntry {
    id: u32,
    count: u64,
}

/// The top-`d_x` character n-grams of a corpus.
///
/// Ids are assigned in order of decreasing corpus count; equal counts are
/// ordered lexicographically by the n-gram string.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct NGramVocab {
    entries: HashMap<String, VocabEntry>,
    by_id: Vec<String>,
    cap: usize,
}

impl NGramVocab {
    /// Counts n-grams over `tokens` and keeps the `cap` most frequent.
    pub fn build<'a, I>(tokens: I, cap: usize) -> Result<Self>
    where
        I: IntoIterator<Item = &'a TokenText>,
    {
        let tokens: Vec<&TokenText> = tokens.into_iter().collect();
        if cap == 0 {
            return Err(Error::InvalidArgument("vocabulary cap must be >= 1".into()));
        }
        if tokens.is_empty() {
            return Err(Error::EmptyCorpus);
        }
        // Shard counting; merging by addition is order-independent.
        let counts = tokens
            .par_chunks(4096)
            .map(|chunk| {
                let mut local: HashMap<String, u64> = HashMap::new();
                for tok in chunk {
                    for_each_ngram(tok.as_str(), |g| {
                        *local.entry(g.to_owned()).or_default() += 1;
                    });
                }
                local
            })
            .reduce(HashMap::new, |mut a, b| {
                for (g, c) in b {
                    *a.entry(g).or_default() += c;
                }
                a
            });
        Ok(Self::from_counts(counts, cap))
    }

    fn from_counts(counts: HashMap<String, u64>, cap: usize) -> Self {
        let mut ranked: Vec<(String, u64)> = counts.into_iter().collect();
        ranked.sort_unstable_by(|a, b| b.1.cmp(&a.1).then_with(|| a.0.cmp(&b.0)));
        ranked.truncate(cap);
        let mut entries = HashMap::with_capacity(ranked.len());
        let mut by_id = Vec::with_capacity(ranked.len());
        for (id, (gram, count)) in ranked.into_iter().enumerate() {
            entries.insert(
                gram.clone(),
                VocabEntry {
                    id: id as u32,
                    count,
                },
            );
            by_id.push(gram);
        }
        Self {
            entries,
            by_id,
            cap,
        }
    }

    /// Vocabulary dimension `d_x`.
    pub fn dim(&self) -> usize {
        self.by_id.len()
    }

    pub fn is_empty(&self) -> bool {
        self.by_id.is_empty()
    }

    pub fn cap(&self) -> usize {
        self.cap
    }

    pub fn id(&self, gram: &str) -> Option<u32> {
        self.entries.get(gram).map(|e| e.id)
    }

    pub fn count(&self, gram: &str) -> Option<u64> {
        self.entries.get(gram).map(|e| e.count)
    }

    pub fn gram(&self, id: u32) -> Option<&str> {
        self.by_id.get(id as usize).map(String::as_str)
    }

    /// `(ngram, id, count)` in id order.
    pub fn iter(&self) -> impl Iterator<Item = (&str, u32, u64)> + '_ {
        self.by_id
            .iter()
            .map(move |g| (g.as_str(), self.entries[g].id, self.entries[g].count))
    }

    fn body(&self) -> String {
        let mut out = String::new();
        for (gram, id, count) in self.iter() {
            out.push_str(&format!("{gram}\t{id}\t{count}\n"));
        }
        out
    }

    /// MD5 of the TSV rows; used to detect mismatched vocabularies.
    pub fn content_hash(&self) -> Digest128 {
        md5_digest(self.body().as_bytes(), None)
    }

    /// Writes the vocabulary TSV:
    /// `#hashemb-vocab v1 cap=<int> content_hash=<hex>` then
    /// `<ngram>\t<id>\t<count>` rows in id order.
    pub fn write_tsv<W: Write>(&self, mut out: W) -> Result<()> {
        let body = self.body();
        let hash = md5_digest(body.as_bytes(), None);
        writeln!(out, "{VOCAB_MAGIC} cap={} content_hash={}", self.cap, hash.to_hex())?;
        out.write_all(body.as_bytes())?;
        Ok(())
    }

    pub fn read_tsv<R: BufRead>(input: R) -> Result<Self> {
        let mut lines = input.lines();
        let header = lines
            .next()
            .ok_or_else(|| Error::Format("vocab file is empty".into()))??;
        let rest = header
            .strip_prefix(VOCAB_MAGIC)
            .ok_or_else(|| Error::Format(format!("bad vocab header {header:?}")))?;
        let mut cap = None;
        let mut expected_hash = None;
        for field in rest.split_whitespace() {
            if let Some(v) = field.strip_prefix("cap=") {
                cap = v.parse::<usize>().ok();
            } else if let Some(v) = field.strip_prefix("content_hash=") {
                expected_hash = Some(Digest128::from_hex(v)?);
            }
        }
        let cap = cap.ok_or_else(|| Error::Format("vocab header missing cap".into()))?;
        let expected_hash =
            expected_hash.ok_or_else(|| Error::Format("vocab header missing content_hash".into()))?;

        let mut entries = HashMap::new();
        let mut by_id = Vec::new();
        for (lineno, line) in lines.enumerate() {
            let line = line?;
            if line.is_empty() {
                continue;
            }
            let mut fields = line.split('\t');
            let (Some(gram), Some(id), Some(count), None) =
                (fields.next(), fields.next(), fields.next(), fields.next())
            else {
                return Err(Error::Format(format!("vocab row {}: expected 3 fields", lineno + 2)));
            };
            let id: u32 = id
                .parse()
                .map_err(|_| Error::Format(format!("vocab row {}: bad id", lineno + 2)))?;
            let count: u64 = count
                .parse()
                .map_err(|_| Error::Format(format!("vocab row {}: bad count", lineno + 2)))?;
            if id as usize != by_id.len() {
                return Err(Error::Format(format!(
                    "vocab row {}: ids must be dense and sorted",
                    lineno + 2
                )));
            }
            entries.insert(gram.to_owned(), VocabEntry { id, count });
            by_id.push(gram.to_owned());
        }
        let vocab = Self {
            entries,
            by_id,
            cap,
        };
        if vocab.content_hash() != expected_hash {
            return Err(Error::Format("vocab content hash mismatch".into()));
        }
        Ok(vocab)
    }
}

/// Sparse bag of character n-grams for one token, weighted by within-token
/// occurrence count. Entries are sorted by id.
#[derive(Debug, Clone, PartialEq)]
pub struct MorphVector {
    entries: Vec<(u32, f64)>,
    dim: usize,
}

impl MorphVector {
    /// Builds a vector from `(id, weight)` pairs. Duplicate ids are summed.
    pub fn from_entries(mut entries: Vec<(u32, f64)>, dim: usize) -> Result<Self> {
        entries.sort_by_key(|&(id, _)| id);
        let mut merged: Vec<(u32, f64)> = Vec::with_capacity(entries.len());
        for (id, w) in entries {
            if id as usize >= dim {
                return Err(Error::InvalidArgument(format!("feature id {id} >= dim {dim}")));
            }
            if !(w.is_finite() && w > 0.0) {
                return Err(Error::InvalidArgument(format!("feature weight {w} must be > 0")));
            }
            match merged.last_mut() {
                Some(last) if last.0 == id => last.1 += w,
                _ => merged.push((id, w)),
            }
        }
        Ok(Self {
            entries: merged,
            dim,
        })
    }

    pub fn entries(&self) -> &[(u32, f64)] {
        &self.entries
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    /// Sum of all weights.
    pub fn mass(&self) -> f64 {
        self.entries.iter().map(|&(_, w)| w).sum()
    }

    pub fn get(&self, id: u32) -> f64 {
        self.entries
            .binary_search_by_key(&id, |&(i, _)| i)
            .map(|pos| self.entries[pos].1)
            .unwrap_or(0.0)
    }

    /// Multiplies every weight by `c`; `c` must be positive.
    pub fn scaled(&self, c: f64) -> Result<Self> {
        if !(c.is_finite() && c > 0.0) {
            return Err(Error::InvalidArgument(format!("scale {c} must be > 0")));
        }
        Ok(Self {
            entries: self.entries.iter().map(|&(i, w)| (i, w * c)).collect(),
            dim: self.dim,
        })
    }

    pub fn to_dense(&self) -> Vec<f64> {
        let mut dense = vec![0.0; self.dim];
        for &(i, w) in &self.entries {
            dense[i as usize] = w;
        }
        dense
    }
}

/// Bag-of-n-grams vector for `token` over `vocab`. Out-of-vocabulary n-grams
/// are dropped.
pub fn featurize(token: &str, vocab: &NGramVocab) -> MorphVector {
    let mut counts: HashMap<u32, u32> = HashMap::new();
    for_each_ngram(token, |g| {
        if let Some(id) = vocab.id(g) {
            *counts.entry(id).or_default() += 1;
        }
    });
    let mut entries: Vec<(u32, f64)> = counts.into_iter().map(|(i, c)| (i, c as f64)).collect();
    entries.sort_by_key(|&(id, _)| id);
    MorphVector {
        entries,
        dim: vocab.dim(),
    }
}
