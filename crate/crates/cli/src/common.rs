use std::fmt;
use std::fs;
use std::io::{self, BufReader, BufWriter, Read, Write};
use std::path::{Path, PathBuf};
use std::sync::Arc;

use anyhow::{Context, Result};
use clap::Args;
use hashemb::hashing::HasherState;
use hashemb::{HashScheme, NGramVocab, TokenHasher};

/// Bad flags or flag combinations; exits with status 1.
#[derive(Debug)]
pub struct UsageError(pub String);

impl fmt::Display for UsageError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

impl std::error::Error for UsageError {}

pub fn usage(msg: impl Into<String>) -> anyhow::Error {
    UsageError(msg.into()).into()
}

/// Reads a file, or standard input for `None` / `-`.
pub fn read_text(path: Option<&Path>) -> Result<String> {
    let mut text = String::new();
    match path {
        Some(p) if p != Path::new("-") => {
            return fs::read_to_string(p).with_context(|| format!("reading {}", p.display()));
        }
        _ => io::stdin().read_to_string(&mut text).context("reading standard input")?,
    };
    Ok(text)
}

/// Buffered writer to a file, or standard output for `None` / `-`.
pub fn writer(path: Option<&Path>) -> Result<Box<dyn Write>> {
    Ok(match path {
        Some(p) if p != Path::new("-") => Box::new(BufWriter::new(
            fs::File::create(p).with_context(|| format!("creating {}", p.display()))?,
        )),
        _ => Box::new(BufWriter::new(io::stdout().lock())),
    })
}

pub fn read_vocab(path: &Path) -> Result<Arc<NGramVocab>> {
    let file = fs::File::open(path).with_context(|| format!("opening {}", path.display()))?;
    let vocab = NGramVocab::read_tsv(BufReader::new(file))
        .with_context(|| format!("reading vocabulary {}", path.display()))?;
    Ok(Arc::new(vocab))
}

pub fn print_json<T: serde::Serialize>(value: &T, out: Option<&Path>) -> Result<()> {
    let mut w = writer(out)?;
    serde_json::to_writer_pretty(&mut w, value)?;
    writeln!(w)?;
    w.flush()?;
    Ok(())
}

/// Flags selecting and configuring a token hasher.
#[derive(Debug, Clone, Args)]
pub struct HashArgs {
    /// md5, lsh-argmax, or lsh-sign [default: md5].
    #[arg(long)]
    pub scheme: Option<HashScheme>,
    /// Bucket count N (index output; plane count for lsh-argmax).
    #[arg(long)]
    pub buckets: Option<u64>,
    /// Bit length T (bit output; plane count for lsh-sign).
    #[arg(long)]
    pub bits: Option<usize>,
    /// Hyperplane seed for the LSH schemes [default: 0].
    #[arg(long)]
    pub seed: Option<u64>,
    /// N-gram vocabulary written by `build-vocab` (LSH schemes).
    #[arg(long)]
    pub vocab: Option<PathBuf>,
    /// Byte string prepended to every token before MD5.
    #[arg(long)]
    pub md5_key: Option<String>,
}

pub struct BuiltHasher {
    pub hasher: TokenHasher,
    pub vocab: Option<Arc<NGramVocab>>,
    pub buckets: Option<u64>,
    pub bits: Option<usize>,
}

impl BuiltHasher {
    pub fn state(&self, seed: u64) -> HasherState {
        HasherState {
            scheme: self.hasher.scheme(),
            seed,
            d_x: self.vocab.as_ref().map_or(0, |v| v.dim() as u64),
            n_buckets: self.buckets.unwrap_or(0),
            n_bits: self.bits.unwrap_or(0) as u64,
            vocab_hash: self.vocab.as_ref().map(|v| v.content_hash()),
        }
    }
}

impl HashArgs {
    pub fn scheme(&self) -> HashScheme {
        self.scheme.unwrap_or(HashScheme::Md5)
    }

    pub fn md5_key_bytes(&self) -> Option<Vec<u8>> {
        self.md5_key.as_ref().map(|k| k.as_bytes().to_vec())
    }

    pub fn load_vocab(&self) -> Result<Option<Arc<NGramVocab>>> {
        self.vocab.as_deref().map(read_vocab).transpose()
    }

    pub fn seed(&self) -> u64 {
        self.seed.unwrap_or(0)
    }

    pub fn build(&self) -> Result<BuiltHasher> {
        self.build_with(self.load_vocab()?)
    }

    pub fn build_with(&self, vocab: Option<Arc<NGramVocab>>) -> Result<BuiltHasher> {
        let need_vocab = || {
            vocab
                .clone()
                .ok_or_else(|| usage(format!("--scheme {} needs --vocab", self.scheme())))
        };
        let hasher = match self.scheme() {
            HashScheme::Md5 => TokenHasher::md5(self.md5_key_bytes()),
            HashScheme::LshArgmax => {
                let n = self
                    .buckets
                    .ok_or_else(|| usage("--scheme lsh-argmax needs --buckets"))?;
                TokenHasher::lsh_argmax(need_vocab()?, n as usize, self.seed())?
            }
            HashScheme::LshSign => {
                let t = self.bits.ok_or_else(|| usage("--scheme lsh-sign needs --bits"))?;
                TokenHasher::lsh_sign(need_vocab()?, t, self.seed())?
            }
        };
        Ok(BuiltHasher {
            hasher,
            vocab,
            buckets: self.buckets,
            bits: self.bits,
        })
    }
}
