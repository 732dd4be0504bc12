//! Toy end-to-end training: hashing, embedding, encoder, 3-way token labels.

use std::collections::HashMap;
use std::path::PathBuf;
use std::sync::Arc;
use std::time::Instant;

use ndarray::{Array1, Array2};
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::corrupt::{corrupt_sequence_with_rng, CorruptionConfig, Label, LabeledSequence, TokenPool};
use super::encoder::{argmax_rows, cross_entropy, Encoder, EncoderParams, ToyEncoderConfig, N_CLASSES};
use super::optim::{AdamW, OptimizerConfig};
use crate::corpus::{tokenize_whitespace, NGramVocab, TokenText, DEFAULT_VOCAB_CAP};
use crate::embedkit::{
    normal_init, AddParams, Checkpoint, EmbVariant, EmbeddingMatrix, EmbeddingParams, HashCode,
    PoolParams, ProjParams, INIT_STD,
};
use crate::error::{Error, Result};
use crate::hashing::{HashScheme, TokenHasher};
use crate::metrics::TOOL_VERSION;

/// Which hash family feeds the embedding. LSH uses argmax indices for `emb`
/// and sign bits for the compressed variants.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum HashFamily {
    Md5,
    Lsh,
}

impl HashFamily {
    pub fn scheme_for(self, variant: EmbVariant) -> HashScheme {
        match (self, variant.uses_bits()) {
            (HashFamily::Md5, _) => HashScheme::Md5,
            (HashFamily::Lsh, false) => HashScheme::LshArgmax,
            (HashFamily::Lsh, true) => HashScheme::LshSign,
        }
    }

    pub fn of_scheme(scheme: HashScheme) -> Self {
        match scheme {
            HashScheme::Md5 => HashFamily::Md5,
            _ => HashFamily::Lsh,
        }
    }
}

impl std::str::FromStr for HashFamily {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "md5" => Ok(HashFamily::Md5),
            "lsh" => Ok(HashFamily::Lsh),
            _ => Err(Error::InvalidArgument(format!("unknown hash family {s:?}"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct HashConfig {
    #[serde(default = "defaults::family")]
    pub family: HashFamily,
    /// Bit length `T` for pool/add/proj.
    #[serde(default = "defaults::bits")]
    pub bits: usize,
    /// Row count `N` for emb.
    #[serde(default = "defaults::buckets")]
    pub buckets: u64,
    #[serde(default = "defaults::vocab_cap")]
    pub vocab_cap: usize,
    #[serde(default)]
    pub seed: u64,
    #[serde(default)]
    pub md5_key: Option<String>,
}

impl Default for HashConfig {
    fn default() -> Self {
        Self {
            family: defaults::family(),
            bits: defaults::bits(),
            buckets: defaults::buckets(),
            vocab_cap: defaults::vocab_cap(),
            seed: 0,
            md5_key: None,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EmbeddingConfig {
    #[serde(default = "defaults::variant")]
    pub variant: EmbVariant,
    /// Bits per codeword for pool.
    #[serde(default = "defaults::k")]
    pub k: usize,
}

impl Default for EmbeddingConfig {
    fn default() -> Self {
        Self {
            variant: defaults::variant(),
            k: defaults::k(),
        }
    }
}

/// Everything `train_toy` needs. Loadable from TOML; every field has a
/// default.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainConfig {
    #[serde(default)]
    pub seed: u64,
    #[serde(default = "defaults::steps")]
    pub steps: usize,
    #[serde(default = "defaults::batch_size")]
    pub batch_size: usize,
    /// Lines longer than this are split into chunks of at most this many
    /// tokens.
    #[serde(default = "defaults::seq_len")]
    pub seq_len: usize,
    /// Fraction of corpus lines (taken from the end) held out for evaluation.
    #[serde(default = "defaults::eval_fraction")]
    pub eval_fraction: f64,
    #[serde(default = "defaults::log_every")]
    pub log_every: usize,
    /// Worker threads; 0 uses the global pool, 1 is strictly single-threaded.
    /// Results do not depend on this setting.
    #[serde(default)]
    pub threads: usize,
    /// Corpus path, relative to the config file.
    #[serde(default)]
    pub corpus: Option<PathBuf>,
    #[serde(default)]
    pub hash: HashConfig,
    #[serde(default)]
    pub embedding: EmbeddingConfig,
    /// Rates for training and evaluation. `seed` seeds the held-out
    /// corruption; training corruption derives from the run seed.
    #[serde(default)]
    pub corruption: CorruptionConfig,
    #[serde(default)]
    pub encoder: ToyEncoderConfig,
    #[serde(default)]
    pub optimizer: OptimizerConfig,
}

mod defaults {
    use super::*;

    pub fn family() -> HashFamily {
        HashFamily::Lsh
    }
    pub fn bits() -> usize {
        128
    }
    pub fn buckets() -> u64 {
        1024
    }
    pub fn vocab_cap() -> usize {
        DEFAULT_VOCAB_CAP
    }
    pub fn variant() -> EmbVariant {
        EmbVariant::Proj
    }
    pub fn k() -> usize {
        10
    }
    pub fn steps() -> usize {
        2000
    }
    pub fn batch_size() -> usize {
        8
    }
    pub fn seq_len() -> usize {
        64
    }
    pub fn eval_fraction() -> f64 {
        0.1
    }
    pub fn log_every() -> usize {
        50
    }
}

impl Default for TrainConfig {
    fn default() -> Self {
        toml::from_str("").expect("all fields have defaults")
    }
}

impl TrainConfig {
    pub fn from_toml(text: &str) -> Result<Self> {
        let cfg: Self = toml::from_str(text)?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        self.encoder.validate()?;
        self.optimizer.validate()?;
        self.corruption.validate()?;
        if self.batch_size == 0 || self.seq_len < 2 || self.log_every == 0 {
            return Err(Error::InvalidArgument(
                "batch_size and log_every must be positive and seq_len at least 2".into(),
            ));
        }
        if self.seq_len > self.encoder.max_seq_len {
            return Err(Error::InvalidArgument(format!(
                "seq_len {} exceeds encoder max_seq_len {}",
                self.seq_len, self.encoder.max_seq_len
            )));
        }
        if !(0.0..1.0).contains(&self.eval_fraction) {
            return Err(Error::InvalidArgument("eval_fraction must lie in [0, 1)".into()));
        }
        let v = self.embedding.variant;
        if v.uses_bits() && self.hash.bits == 0 {
            return Err(Error::InvalidArgument("hash.bits must be positive".into()));
        }
        if self.hash.family == HashFamily::Md5 && v.uses_bits() && self.hash.bits > 128 {
            return Err(Error::InvalidArgument("MD5 yields at most 128 bits".into()));
        }
        if v == EmbVariant::Emb && self.hash.buckets == 0 {
            return Err(Error::ZeroBuckets);
        }
        if v == EmbVariant::Pool && (self.embedding.k == 0 || self.embedding.k > self.hash.bits.min(30)) {
            return Err(Error::InvalidArgument(format!(
                "pool k={} must be in 1..={}",
                self.embedding.k,
                self.hash.bits.min(30)
            )));
        }
        Ok(())
    }
}

/// Training and held-out token sequences.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ToyData {
    pub train: Vec<Vec<TokenText>>,
    pub heldout: Vec<Vec<TokenText>>,
}

impl ToyData {
    /// Lines are documents. The last `ceil(eval_fraction * lines)` non-empty
    /// lines are held out; each line is cut into chunks of at most `seq_len`
    /// tokens and chunks shorter than 2 tokens are dropped.
    pub fn split(text: &str, eval_fraction: f64, seq_len: usize) -> Result<Self> {
        let lines: Vec<Vec<TokenText>> = text
            .lines()
            .map(tokenize_whitespace)
            .filter(|l| !l.is_empty())
            .collect();
        if lines.is_empty() {
            return Err(Error::EmptyCorpus);
        }
        let n_eval = ((lines.len() as f64 * eval_fraction).ceil() as usize).min(lines.len() - 1);
        let chunk = |ls: &[Vec<TokenText>]| -> Vec<Vec<TokenText>> {
            ls.iter()
                .flat_map(|l| l.chunks(seq_len).map(<[TokenText]>::to_vec))
                .filter(|c| c.len() >= 2)
                .collect()
        };
        let (train, heldout) = lines.split_at(lines.len() - n_eval);
        let data = Self {
            train: chunk(train),
            heldout: chunk(heldout),
        };
        if data.train.is_empty() {
            return Err(Error::EmptyCorpus);
        }
        Ok(data)
    }

    pub fn train_tokens(&self) -> impl Iterator<Item = &TokenText> {
        self.train.iter().flatten()
    }
}

/// Embedding, hasher, and encoder: everything needed to label tokens.
#[derive(Debug, Clone)]
pub struct ToyModel {
    pub hasher: TokenHasher,
    pub n_buckets: u64,
    pub n_bits: usize,
    pub hash_seed: u64,
    pub embedding: EmbeddingParams,
    /// Padding row, kept as a parameter but never produced by a hash code.
    pub reserved: Array1<f64>,
    pub encoder: Encoder,
}

impl ToyModel {
    /// Fresh model for `cfg`. LSH families need the n-gram `vocab`.
    pub fn init<R: Rng + ?Sized>(cfg: &TrainConfig, vocab: Option<Arc<NGramVocab>>, rng: &mut R) -> Result<Self> {
        cfg.validate()?;
        let variant = cfg.embedding.variant;
        let hasher = build_hasher(cfg.hash.family.scheme_for(variant), &cfg.hash, vocab)?;
        let d = cfg.encoder.d;
        let t = cfg.hash.bits;
        let embedding = match variant {
            EmbVariant::Emb => EmbeddingParams::Emb(EmbeddingMatrix::init(cfg.hash.buckets as usize, d, rng)?),
            EmbVariant::Pool => EmbeddingParams::Pool(PoolParams::init(t, cfg.embedding.k, d, rng)?),
            EmbVariant::Add => EmbeddingParams::Add(AddParams::init(t, d, rng)?),
            EmbVariant::Proj => EmbeddingParams::Proj(ProjParams::init(t, d, rng)?),
        };
        let reserved = normal_init(d, INIT_STD, rng);
        let encoder = Encoder::init(cfg.encoder, rng)?;
        Ok(Self {
            hasher,
            n_buckets: cfg.hash.buckets,
            n_bits: t,
            hash_seed: cfg.hash.seed,
            embedding,
            reserved,
            encoder,
        })
    }

    pub fn variant(&self) -> EmbVariant {
        self.embedding.variant()
    }

    pub fn hash_code(&self, token: &str) -> Result<HashCode> {
        if self.variant().uses_bits() {
            Ok(HashCode::Bits(self.hasher.bits(token, self.n_bits)?))
        } else {
            Ok(HashCode::Index(self.hasher.index(token, self.n_buckets)? as usize))
        }
    }

    pub fn embed(&self, token: &str) -> Result<Array1<f64>> {
        self.embedding.forward(&self.hash_code(token)?)
    }

    fn embed_codes(&self, codes: &[&HashCode]) -> Result<Array2<f64>> {
        let mut out = Array2::zeros((codes.len(), self.embedding.dim()));
        for (mut row, code) in out.rows_mut().into_iter().zip(codes) {
            row.assign(&self.embedding.forward(code)?);
        }
        Ok(out)
    }

    /// Per-token logits `(L, 3)` in label order INTACT, SHUFFLED, RANDOM.
    pub fn logits<S: AsRef<str>>(&self, tokens: &[S]) -> Result<Array2<f64>> {
        let codes = tokens
            .iter()
            .map(|t| self.hash_code(t.as_ref()))
            .collect::<Result<Vec<_>>>()?;
        let emb = self.embed_codes(&codes.iter().collect::<Vec<_>>())?;
        self.encoder.logits(emb.view())
    }

    pub fn predict<S: AsRef<str>>(&self, tokens: &[S]) -> Result<Vec<Label>> {
        let logits = self.logits(tokens)?;
        Ok(argmax_rows(logits.view())
            .into_iter()
            .map(|i| Label::from_index(i).expect("three logits"))
            .collect())
    }

    /// Embedding, reserved row, and encoder tensors, with the encoder
    /// configuration recorded in the header.
    pub fn to_checkpoint(&self, train_config: Option<&TrainConfig>) -> Result<Checkpoint> {
        let mut ck = Checkpoint::from_embedding(
            &self.embedding,
            Some(self.reserved.as_slice().unwrap()),
            self.hasher.scheme(),
            self.hash_seed,
        )?;
        ck.header.n_buckets = Some(self.n_buckets);
        ck.header.n_bits = Some(self.n_bits);
        ck.header.vocab_hash = self.hasher.vocab().map(|v| v.content_hash().to_hex());
        ck.header.model = Some(serde_json::to_value(CheckpointModel {
            encoder: self.encoder.cfg,
            train: train_config.cloned(),
        })?);
        let params = &self.encoder.params;
        for (slot, values) in params.slots().into_iter().zip(params.tensors()) {
            ck.push(slot.name, &slot.shape, values)?;
        }
        Ok(ck)
    }

    /// Rebuilds a model. LSH checkpoints need the vocabulary they were
    /// trained with; its content hash is checked.
    pub fn from_checkpoint(
        ck: &Checkpoint,
        vocab: Option<Arc<NGramVocab>>,
        md5_key: Option<&str>,
    ) -> Result<Self> {
        let h = &ck.header;
        let model: CheckpointModel = serde_json::from_value(
            h.model
                .clone()
                .ok_or_else(|| Error::Format("checkpoint has no encoder description".into()))?,
        )?;
        if let (Some(expected), Some(v)) = (&h.vocab_hash, &vocab) {
            if &v.content_hash().to_hex() != expected {
                return Err(Error::Format("vocabulary does not match checkpoint".into()));
            }
        }
        let embedding = ck.embedding()?;
        let n_buckets = h.n_buckets.ok_or_else(|| Error::Format("missing n_buckets".into()))?;
        let n_bits = h.n_bits.ok_or_else(|| Error::Format("missing n_bits".into()))?;
        let hash_cfg = HashConfig {
            family: HashFamily::of_scheme(h.scheme),
            bits: n_bits,
            buckets: n_buckets,
            seed: h.seed,
            md5_key: md5_key.map(str::to_owned),
            ..HashConfig::default()
        };
        let hasher = build_hasher(h.scheme, &hash_cfg, vocab)?;
        let (_, reserved) = ck
            .tensor("embedding.reserved")
            .ok_or_else(|| Error::Format("missing reserved row".into()))?;
        let mut params = EncoderParams::init(&model.encoder, &mut ChaCha8Rng::seed_from_u64(0))?;
        let slots = params.slots();
        for (slot, dst) in slots.iter().zip(params.tensors_mut()) {
            let (info, data) = ck
                .tensor(&slot.name)
                .ok_or_else(|| Error::Format(format!("missing tensor {}", slot.name)))?;
            if info.shape != slot.shape {
                return Err(Error::Format(format!("tensor {} has wrong shape", slot.name)));
            }
            dst.copy_from_slice(&data);
        }
        Ok(Self {
            hasher,
            n_buckets,
            n_bits,
            hash_seed: h.seed,
            reserved: Array1::from(reserved),
            encoder: Encoder::new(model.encoder, params)?,
            embedding,
        })
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
struct CheckpointModel {
    encoder: ToyEncoderConfig,
    #[serde(default)]
    train: Option<TrainConfig>,
}

fn build_hasher(scheme: HashScheme, cfg: &HashConfig, vocab: Option<Arc<NGramVocab>>) -> Result<TokenHasher> {
    let need_vocab =
        || vocab.clone().ok_or_else(|| Error::InvalidArgument("LSH hashing needs an n-gram vocabulary".into()));
    match scheme {
        HashScheme::Md5 => Ok(TokenHasher::md5(cfg.md5_key.as_ref().map(|k| k.as_bytes().to_vec()))),
        HashScheme::LshArgmax => TokenHasher::lsh_argmax(need_vocab()?, cfg.buckets as usize, cfg.seed),
        HashScheme::LshSign => TokenHasher::lsh_sign(need_vocab()?, cfg.bits, cfg.seed),
    }
}

/// Held-out sequences corrupted once, plus the positions that are scored:
/// an equal number per label, so any constant predictor scores exactly 1/3.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct EvalSet {
    pub sequences: Vec<LabeledSequence>,
    /// `(sequence, position)` pairs.
    pub scored: Vec<(usize, usize)>,
}

impl EvalSet {
    pub fn build(
        heldout: &[Vec<TokenText>],
        corruption: &CorruptionConfig,
        pool: &TokenPool,
    ) -> Result<Self> {
        let mut rng = ChaCha8Rng::seed_from_u64(corruption.seed);
        let sequences = heldout
            .iter()
            .map(|s| corrupt_sequence_with_rng(s, corruption, pool, &mut rng))
            .collect::<Result<Vec<_>>>()?;
        let mut by_label: [Vec<(usize, usize)>; N_CLASSES] = Default::default();
        for (si, seq) in sequences.iter().enumerate() {
            for (pi, l) in seq.labels.iter().enumerate() {
                by_label[l.index()].push((si, pi));
            }
        }
        let n = by_label.iter().map(Vec::len).min().unwrap_or(0);
        let mut scored = Vec::with_capacity(3 * n);
        for mut positions in by_label {
            positions.shuffle(&mut rng);
            positions.truncate(n);
            positions.sort_unstable();
            scored.extend(positions);
        }
        scored.sort_unstable();
        Ok(Self { sequences, scored })
    }

    pub fn is_empty(&self) -> bool {
        self.scored.is_empty()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalResult {
    pub accuracy: f64,
    pub scored_positions: usize,
    /// Recall for INTACT, SHUFFLED, RANDOM.
    pub recall: [f64; N_CLASSES],
}

pub fn evaluate(model: &ToyModel, eval: &EvalSet) -> Result<EvalResult> {
    let predictions = eval
        .sequences
        .par_iter()
        .map(|s| model.predict(&s.tokens))
        .collect::<Result<Vec<_>>>()?;
    let mut hits = [0usize; N_CLASSES];
    let mut totals = [0usize; N_CLASSES];
    for &(si, pi) in &eval.scored {
        let truth = eval.sequences[si].labels[pi];
        totals[truth.index()] += 1;
        hits[truth.index()] += (predictions[si][pi] == truth) as usize;
    }
    let n: usize = totals.iter().sum();
    let ratio = |a: usize, b: usize| if b == 0 { 0.0 } else { a as f64 / b as f64 };
    Ok(EvalResult {
        accuracy: ratio(hits.iter().sum(), n),
        scored_positions: n,
        recall: [0, 1, 2].map(|i| ratio(hits[i], totals[i])),
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LossPoint {
    /// Number of steps completed.
    pub step: usize,
    /// Mean loss over the steps since the previous point.
    pub loss: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ParamCounts {
    pub embedding: usize,
    pub reserved_row: usize,
    pub encoder: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainReport {
    pub tool_version: String,
    pub steps: usize,
    pub loss_curve: Vec<LossPoint>,
    pub step_losses: Vec<f64>,
    pub first_decile_loss: f64,
    pub last_decile_loss: f64,
    pub initial_eval: EvalResult,
    pub eval: EvalResult,
    pub eval_accuracy: f64,
    pub wallclock_ms_per_sample: f64,
    pub train_sequences: usize,
    pub heldout_sequences: usize,
    pub params: ParamCounts,
    pub config: TrainConfig,
}

pub struct TrainOutcome {
    pub report: TrainReport,
    pub model: ToyModel,
    pub vocab: Option<Arc<NGramVocab>>,
}

/// Mean of the first and last `ceil(n / 10)` values.
pub fn decile_means(losses: &[f64]) -> (f64, f64) {
    if losses.is_empty() {
        return (f64::NAN, f64::NAN);
    }
    let n = losses.len().div_ceil(10);
    let mean = |xs: &[f64]| xs.iter().sum::<f64>() / xs.len() as f64;
    (mean(&losses[..n]), mean(&losses[losses.len() - n..]))
}

fn stream_rng(seed: u64, stream: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}

/// Loss and gradients of one sequence; the loss is summed over positions and
/// the gradients are pre-scaled by `1 / normalizer`.
fn sequence_gradients(
    model: &ToyModel,
    codes: &HashMap<&str, HashCode>,
    seq: &LabeledSequence,
    normalizer: f64,
    rng: &mut ChaCha8Rng,
) -> Result<(f64, EncoderParams, EmbeddingParams)> {
    let seq_codes: Vec<&HashCode> = seq.tokens.iter().map(|t| &codes[t.as_str()]).collect();
    let emb = model.embed_codes(&seq_codes)?;
    let (logits, cache) = model.encoder.forward(emb.view(), Some(rng))?;
    let targets: Vec<usize> = seq.labels.iter().map(|l| l.index()).collect();
    let (loss, dlogits) = cross_entropy(logits.view(), &targets, normalizer)?;
    let mut enc_grads = model.encoder.params.zeros_like();
    let demb = model.encoder.backward(&cache, dlogits.view(), &mut enc_grads)?;
    let mut emb_grads = model.embedding.zeros_like();
    for (code, row) in seq_codes.iter().zip(demb.rows()) {
        model.embedding.accumulate_backward(code, row, &mut emb_grads)?;
    }
    Ok((loss, enc_grads, emb_grads))
}

/// Trains on `text` (one document per line) as configured.
pub fn train_toy(text: &str, cfg: &TrainConfig) -> Result<TrainOutcome> {
    cfg.validate()?;
    if cfg.threads > 0 {
        let pool = rayon::ThreadPoolBuilder::new()
            .num_threads(cfg.threads)
            .build()
            .map_err(|e| Error::InvalidArgument(e.to_string()))?;
        pool.install(|| train_inner(text, cfg))
    } else {
        train_inner(text, cfg)
    }
}

fn train_inner(text: &str, cfg: &TrainConfig) -> Result<TrainOutcome> {
    let data = ToyData::split(text, cfg.eval_fraction, cfg.seq_len)?;
    let vocab = match cfg.hash.family {
        HashFamily::Lsh => Some(Arc::new(NGramVocab::build(data.train_tokens(), cfg.hash.vocab_cap)?)),
        HashFamily::Md5 => None,
    };
    let pool = TokenPool::from_tokens(data.train_tokens())?;
    let mut init_rng = stream_rng(cfg.seed, 0);
    let mut model = ToyModel::init(cfg, vocab.clone(), &mut init_rng)?;

    // every token a training sequence can contain is a pool type
    let codes: HashMap<&str, HashCode> = pool
        .types()
        .par_iter()
        .map(|t| Ok((t.as_str(), model.hash_code(t.as_str())?)))
        .collect::<Result<_>>()?;

    let eval_set = EvalSet::build(&data.heldout, &cfg.corruption, &pool)?;
    let initial_eval = evaluate(&model, &eval_set)?;

    let enc_slots = model.encoder.params.slots();
    let mut decay: Vec<bool> = enc_slots.iter().map(|s| s.decay).collect();
    let mut sizes: Vec<usize> = enc_slots.iter().map(|s| s.shape.iter().product()).collect();
    for t in model.embedding.tensors() {
        decay.push(true);
        sizes.push(t.len());
    }
    let mut opt = AdamW::new(cfg.optimizer, &sizes)?;

    let mut batch_rng = stream_rng(cfg.seed, 1);
    let mut step_losses = Vec::with_capacity(cfg.steps);
    let mut loss_curve = Vec::new();
    let started = Instant::now();
    for step in 0..cfg.steps {
        let picks: Vec<usize> = (0..cfg.batch_size)
            .map(|_| batch_rng.random_range(0..data.train.len()))
            .collect();
        let stream_base = 2 + (step * cfg.batch_size) as u64;
        let batch = picks
            .iter()
            .enumerate()
            .map(|(i, &p)| {
                let mut rng = stream_rng(cfg.seed, stream_base + i as u64);
                let seq = corrupt_sequence_with_rng(&data.train[p], &cfg.corruption, &pool, &mut rng)?;
                Ok((seq, rng))
            })
            .collect::<Result<Vec<_>>>()?;
        let positions: usize = batch.iter().map(|(s, _)| s.len()).sum();
        let normalizer = positions as f64;

        let results = batch
            .into_par_iter()
            .map(|(seq, mut rng)| sequence_gradients(&model, &codes, &seq, normalizer, &mut rng))
            .collect::<Result<Vec<_>>>()?;

        // ordered reduction keeps the sum independent of scheduling
        let mut results = results.into_iter();
        let (mut loss, mut enc_grads, mut emb_grads) = results.next().expect("batch_size > 0");
        for (l, eg, mg) in results {
            loss += l;
            enc_grads.add_assign(&eg);
            for (a, b) in emb_grads.tensors_mut().into_iter().zip(mg.tensors()) {
                a.iter_mut().zip(b).for_each(|(x, y)| *x += y);
            }
        }
        let loss = loss / normalizer;
        if !loss.is_finite() {
            return Err(Error::NonFiniteLoss { step, loss });
        }
        step_losses.push(loss);

        let lr = cfg.optimizer.lr_at(step, cfg.steps);
        let mut params = model.encoder.params.tensors_mut();
        params.extend(model.embedding.tensors_mut());
        let mut grads = enc_grads.tensors();
        grads.extend(emb_grads.tensors());
        opt.step(params, grads, &decay, lr)?;

        if (step + 1) % cfg.log_every == 0 || step + 1 == cfg.steps {
            let from = loss_curve.last().map_or(0, |p: &LossPoint| p.step);
            let window = &step_losses[from..];
            loss_curve.push(LossPoint {
                step: step + 1,
                loss: window.iter().sum::<f64>() / window.len() as f64,
            });
        }
    }
    let elapsed = started.elapsed().as_secs_f64() * 1e3;
    let samples = (cfg.steps * cfg.batch_size).max(1) as f64;

    let eval = evaluate(&model, &eval_set)?;
    let (first_decile_loss, last_decile_loss) = decile_means(&step_losses);
    let report = TrainReport {
        tool_version: TOOL_VERSION.into(),
        steps: cfg.steps,
        loss_curve,
        step_losses,
        first_decile_loss,
        last_decile_loss,
        initial_eval,
        eval_accuracy: eval.accuracy,
        eval,
        wallclock_ms_per_sample: elapsed / samples,
        train_sequences: data.train.len(),
        heldout_sequences: data.heldout.len(),
        params: ParamCounts {
            embedding: model.embedding.n_params(),
            reserved_row: model.reserved.len(),
            encoder: model.encoder.params.n_params(),
        },
        config: cfg.clone(),
    };
    Ok(TrainOutcome { report, model, vocab })
}
