//! Token hashing: MD5 digests, bucket indices, T-bit vectors, and
//! random-hyperplane LSH over morphological vectors.
//!
//! All hashers are immutable after construction; every output is a pure
//! function of the input and the hasher's seed (or key).

mod lsh;
mod state;
mod token;

use std::fmt;

use md5::{Digest, Md5};

use crate::error::{Error, Result};

pub use lsh::{Hyperplanes, LshArgmaxHasher, LshSignHasher};
pub use state::{HasherState, HASHER_STATE_LEN};
pub use token::{HashScheme, TokenHasher};

/// Width of an MD5 digest in bits.
pub const DIGEST_BITS: usize = 128;

/// A 128-bit hash value. Byte order is big-endian: the first digest byte is
/// the most significant.
#[derive(Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Default)]
pub struct Digest128(pub u128);

impl Digest128 {
    pub fn from_be_bytes(bytes: [u8; 16]) -> Self {
        Self(u128::from_be_bytes(bytes))
    }

    pub fn to_be_bytes(self) -> [u8; 16] {
        self.0.to_be_bytes()
    }

    pub fn to_hex(self) -> String {
        format!("{:032x}", self.0)
    }

    pub fn from_hex(hex: &str) -> Result<Self> {
        if hex.len() != 32 {
            return Err(Error::Format(format!("digest hex must be 32 chars, got {}", hex.len())));
        }
        u128::from_str_radix(hex, 16)
            .map(Self)
            .map_err(|_| Error::Format(format!("bad digest hex {hex:?}")))
    }
}

impl fmt::Debug for Digest128 {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "Digest128({})", self.to_hex())
    }
}

impl fmt::Display for Digest128 {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.to_hex())
    }
}

/// MD5 of `data`. A key, when given, is prepended to the message.
pub fn md5_digest(data: impl AsRef<[u8]>, key: Option<&[u8]>) -> Digest128 {
    let mut h = Md5::new();
    if let Some(key) = key {
        h.update(key);
    }
    h.update(data.as_ref());
    Digest128::from_be_bytes(h.finalize().into())
}

/// `digest mod n_buckets` over the full 128-bit value.
pub fn digest_to_index(digest: Digest128, n_buckets: u64) -> Result<u64> {
    if n_buckets == 0 {
        return Err(Error::ZeroBuckets);
    }
    Ok((digest.0 % n_buckets as u128) as u64)
}

/// An ordered sequence of bits; bit 0 is the first (most significant).
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct BitVector(Vec<bool>);

impl BitVector {
    pub fn new(bits: Vec<bool>) -> Self {
        Self(bits)
    }

    /// Parses a string of `0`/`1` characters.
    pub fn parse(s: &str) -> Result<Self> {
        s.chars()
            .map(|c| match c {
                '0' => Ok(false),
                '1' => Ok(true),
                _ => Err(Error::Format(format!("bad bit character {c:?}"))),
            })
            .collect::<Result<Vec<_>>>()
            .map(Self)
    }

    pub fn from_u01(bits: &[u8]) -> Result<Self> {
        bits.iter()
            .map(|&b| match b {
                0 => Ok(false),
                1 => Ok(true),
                _ => Err(Error::InvalidArgument(format!("bit value {b} not in {{0,1}}"))),
            })
            .collect::<Result<Vec<_>>>()
            .map(Self)
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn bits(&self) -> &[bool] {
        &self.0
    }

    pub fn get(&self, i: usize) -> bool {
        self.0[i]
    }

    /// First `len` bits.
    pub fn truncated(&self, len: usize) -> Self {
        Self(self.0[..len.min(self.0.len())].to_vec())
    }

    /// Bits as `0.0`/`1.0`.
    pub fn to_f64(&self) -> Vec<f64> {
        self.0.iter().map(|&b| if b { 1.0 } else { 0.0 }).collect()
    }

    /// Integer value, MSB first. Requires at most 128 bits.
    pub fn to_u128(&self) -> Result<u128> {
        if self.0.len() > DIGEST_BITS {
            return Err(Error::InvalidArgument(format!(
                "{} bits do not fit in 128",
                self.0.len()
            )));
        }
        Ok(self.0.iter().fold(0u128, |acc, &b| (acc << 1) | b as u128))
    }

    /// Fraction of positions where the two vectors agree.
    pub fn hamming_similarity(&self, other: &Self) -> Result<f64> {
        if self.len() != other.len() {
            return Err(Error::ShapeMismatch(format!(
                "bit vectors of length {} and {}",
                self.len(),
                other.len()
            )));
        }
        if self.is_empty() {
            return Ok(1.0);
        }
        let same = self.0.iter().zip(&other.0).filter(|(a, b)| a == b).count();
        Ok(same as f64 / self.len() as f64)
    }
}

impl fmt::Display for BitVector {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for &b in &self.0 {
            f.write_str(if b { "1" } else { "0" })?;
        }
        Ok(())
    }
}

/// The 128 digest bits, most significant first.
pub fn digest_to_bits(digest: Digest128) -> BitVector {
    BitVector(
        (0..DIGEST_BITS)
            .map(|i| (digest.0 >> (DIGEST_BITS - 1 - i)) & 1 == 1)
            .collect(),
    )
}

/// Inverse of [`digest_to_bits`].
pub fn bits_to_digest(bits: &BitVector) -> Result<Digest128> {
    if bits.len() != DIGEST_BITS {
        return Err(Error::ShapeMismatch(format!(
            "expected {DIGEST_BITS} bits, got {}",
            bits.len()
        )));
    }
    bits.to_u128().map(Digest128)
}
