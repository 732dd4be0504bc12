//! Vocabulary-free hash embeddings.
//!
//! Tokens are hashed (MD5 or random-hyperplane LSH over character n-gram
//! features) to a bucket index or a bit vector, and the bits are turned into
//! dense embeddings by one of several compressed transforms. The `pretrain`
//! module trains a small encoder on a token-level corruption-detection task.

pub mod collisions;
pub mod corpus;
pub mod embedkit;
pub mod error;
pub mod hashing;
pub mod metrics;
pub mod pretrain;

pub use corpus::{featurize, tokenize_whitespace, MorphVector, NGramVocab, TokenText};
pub use embedkit::{EmbVariant, EmbeddingParams, HashCode};
pub use error::{Error, Result};
pub use hashing::{md5_digest, BitVector, Digest128, HashScheme, TokenHasher};
