use std::fmt;
use std::str::FromStr;
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use super::{
    digest_to_bits, digest_to_index, md5_digest, BitVector, LshArgmaxHasher, LshSignHasher,
    DIGEST_BITS,
};
use crate::corpus::{featurize, NGramVocab};
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum HashScheme {
    Md5,
    LshArgmax,
    LshSign,
}

impl HashScheme {
    pub fn name(self) -> &'static str {
        match self {
            HashScheme::Md5 => "md5",
            HashScheme::LshArgmax => "lsh-argmax",
            HashScheme::LshSign => "lsh-sign",
        }
    }

    pub fn is_lsh(self) -> bool {
        !matches!(self, HashScheme::Md5)
    }

    pub(crate) fn code(self) -> u8 {
        match self {
            HashScheme::Md5 => 0,
            HashScheme::LshArgmax => 1,
            HashScheme::LshSign => 2,
        }
    }

    pub(crate) fn from_code(code: u8) -> Result<Self> {
        match code {
            0 => Ok(HashScheme::Md5),
            1 => Ok(HashScheme::LshArgmax),
            2 => Ok(HashScheme::LshSign),
            _ => Err(Error::Format(format!("unknown hash scheme code {code}"))),
        }
    }
}

impl fmt::Display for HashScheme {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for HashScheme {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "md5" => Ok(HashScheme::Md5),
            "lsh-argmax" => Ok(HashScheme::LshArgmax),
            "lsh-sign" => Ok(HashScheme::LshSign),
            _ => Err(Error::InvalidArgument(format!("unknown hash scheme {s:?}"))),
        }
    }
}

/// Maps raw token strings to bucket indices or bit vectors under one scheme.
///
/// LSH schemes featurize the token against their n-gram vocabulary first.
#[derive(Debug, Clone)]
pub enum TokenHasher {
    Md5 {
        key: Option<Vec<u8>>,
    },
    LshArgmax {
        vocab: Arc<NGramVocab>,
        hasher: LshArgmaxHasher,
    },
    LshSign {
        vocab: Arc<NGramVocab>,
        hasher: LshSignHasher,
    },
}

impl TokenHasher {
    pub fn md5(key: Option<Vec<u8>>) -> Self {
        TokenHasher::Md5 { key }
    }

    pub fn lsh_argmax(vocab: Arc<NGramVocab>, n_planes: usize, seed: u64) -> Result<Self> {
        let hasher = LshArgmaxHasher::new(vocab.dim(), n_planes, seed)?;
        Ok(TokenHasher::LshArgmax { vocab, hasher })
    }

    pub fn lsh_sign(vocab: Arc<NGramVocab>, n_bits: usize, seed: u64) -> Result<Self> {
        let hasher = LshSignHasher::new(vocab.dim(), n_bits, seed)?;
        Ok(TokenHasher::LshSign { vocab, hasher })
    }

    pub fn scheme(&self) -> HashScheme {
        match self {
            TokenHasher::Md5 { .. } => HashScheme::Md5,
            TokenHasher::LshArgmax { .. } => HashScheme::LshArgmax,
            TokenHasher::LshSign { .. } => HashScheme::LshSign,
        }
    }

    pub fn vocab(&self) -> Option<&NGramVocab> {
        match self {
            TokenHasher::Md5 { .. } => None,
            TokenHasher::LshArgmax { vocab, .. } | TokenHasher::LshSign { vocab, .. } => {
                Some(vocab)
            }
        }
    }

    /// Bucket index in `[0, n_buckets)`. For sign-LSH the bit vector is read
    /// as an MSB-first integer before the modulo.
    pub fn index(&self, token: &str, n_buckets: u64) -> Result<u64> {
        match self {
            TokenHasher::Md5 { key } => {
                digest_to_index(md5_digest(token, key.as_deref()), n_buckets)
            }
            TokenHasher::LshArgmax { vocab, hasher } => {
                hasher.index(&featurize(token, vocab), n_buckets)
            }
            TokenHasher::LshSign { vocab, hasher } => {
                if n_buckets == 0 {
                    return Err(Error::ZeroBuckets);
                }
                let bits = hasher.sign_bits(&featurize(token, vocab))?;
                Ok((bits.to_u128()? % n_buckets as u128) as u64)
            }
        }
    }

    /// `n_bits`-bit vector. MD5 keeps the leading `n_bits` of its 128-bit
    /// digest; sign-LSH must have been built with exactly `n_bits` planes.
    pub fn bits(&self, token: &str, n_bits: usize) -> Result<BitVector> {
        match self {
            TokenHasher::Md5 { key } => {
                if n_bits == 0 || n_bits > DIGEST_BITS {
                    return Err(Error::InvalidArgument(format!(
                        "MD5 yields 1..={DIGEST_BITS} bits, requested {n_bits}"
                    )));
                }
                Ok(digest_to_bits(md5_digest(token, key.as_deref())).truncated(n_bits))
            }
            TokenHasher::LshSign { vocab, hasher } => {
                if hasher.n_bits() != n_bits {
                    return Err(Error::ShapeMismatch(format!(
                        "sign hasher has {} planes, requested {n_bits} bits",
                        hasher.n_bits()
                    )));
                }
                hasher.sign_bits(&featurize(token, vocab))
            }
            TokenHasher::LshArgmax { .. } => Err(Error::InvalidArgument(
                "lsh-argmax produces bucket indices, not bit vectors".into(),
            )),
        }
    }
}
