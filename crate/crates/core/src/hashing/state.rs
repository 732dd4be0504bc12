//! Fixed-size binary hasher state.
//!
//! Layout, all integers little-endian:
//!
//! | offset | size | field                                    |
//! |-------:|-----:|------------------------------------------|
//! | 0      | 4    | magic `HEHS`                             |
//! | 4      | 2    | format version (1)                       |
//! | 6      | 1    | scheme: 0 md5, 1 lsh-argmax, 2 lsh-sign  |
//! | 7      | 1    | reserved, 0                              |
//! | 8      | 8    | seed                                     |
//! | 16     | 8    | d_x (0 for md5)                          |
//! | 24     | 8    | bucket count N                           |
//! | 32     | 8    | bit count T                              |
//! | 40     | 16   | vocab content hash, big-endian (0 = none)|
//!
//! `eta` is not stored; it is regenerated from the seed. MD5 keys are never
//! written.

use std::sync::Arc;

use super::{Digest128, HashScheme, TokenHasher};
use crate::corpus::NGramVocab;
use crate::error::{Error, Result};

pub const HASHER_STATE_LEN: usize = 56;
const MAGIC: &[u8; 4] = b"HEHS";
const VERSION: u16 = 1;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct HasherState {
    pub scheme: HashScheme,
    pub seed: u64,
    pub d_x: u64,
    pub n_buckets: u64,
    pub n_bits: u64,
    pub vocab_hash: Option<Digest128>,
}

impl HasherState {
    pub fn to_bytes(&self) -> [u8; HASHER_STATE_LEN] {
        let mut out = [0u8; HASHER_STATE_LEN];
        out[0..4].copy_from_slice(MAGIC);
        out[4..6].copy_from_slice(&VERSION.to_le_bytes());
        out[6] = self.scheme.code();
        out[8..16].copy_from_slice(&self.seed.to_le_bytes());
        out[16..24].copy_from_slice(&self.d_x.to_le_bytes());
        out[24..32].copy_from_slice(&self.n_buckets.to_le_bytes());
        out[32..40].copy_from_slice(&self.n_bits.to_le_bytes());
        out[40..56].copy_from_slice(&self.vocab_hash.unwrap_or_default().to_be_bytes());
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        if bytes.len() != HASHER_STATE_LEN {
            return Err(Error::Format(format!(
                "hasher state must be {HASHER_STATE_LEN} bytes, got {}",
                bytes.len()
            )));
        }
        if &bytes[0..4] != MAGIC {
            return Err(Error::Format("not a hasher state file".into()));
        }
        let version = u16::from_le_bytes([bytes[4], bytes[5]]);
        if version != VERSION {
            return Err(Error::Format(format!("unsupported hasher state version {version}")));
        }
        let u64_at = |off: usize| u64::from_le_bytes(bytes[off..off + 8].try_into().unwrap());
        let hash = Digest128::from_be_bytes(bytes[40..56].try_into().unwrap());
        Ok(Self {
            scheme: HashScheme::from_code(bytes[6])?,
            seed: u64_at(8),
            d_x: u64_at(16),
            n_buckets: u64_at(24),
            n_bits: u64_at(32),
            vocab_hash: (hash != Digest128::default()).then_some(hash),
        })
    }

    /// Rebuilds the hasher. LSH schemes need the vocabulary the state was
    /// created with; a content-hash mismatch is an error.
    pub fn hasher(&self, vocab: Option<Arc<NGramVocab>>, md5_key: Option<Vec<u8>>) -> Result<TokenHasher> {
        if self.scheme == HashScheme::Md5 {
            return Ok(TokenHasher::md5(md5_key));
        }
        let vocab = vocab.ok_or_else(|| {
            Error::InvalidArgument(format!("{} needs an n-gram vocabulary", self.scheme))
        })?;
        if let Some(expected) = self.vocab_hash {
            if vocab.content_hash() != expected {
                return Err(Error::Format("vocabulary does not match hasher state".into()));
            }
        }
        if vocab.dim() as u64 != self.d_x {
            return Err(Error::Format(format!(
                "vocabulary has {} n-grams, hasher state expects {}",
                vocab.dim(),
                self.d_x
            )));
        }
        match self.scheme {
            HashScheme::LshArgmax => TokenHasher::lsh_argmax(vocab, self.n_buckets as usize, self.seed),
            HashScheme::LshSign => TokenHasher::lsh_sign(vocab, self.n_bits as usize, self.seed),
            HashScheme::Md5 => unreachable!(),
        }
    }
}
