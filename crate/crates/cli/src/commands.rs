use std::fs;
use std::io::{BufReader, Write};
use std::path::{Path, PathBuf};
use std::sync::Arc;

use anyhow::{bail, Context, Result};
use clap::{Args, ValueEnum};
use hashemb::collisions::{collision_analyze, parse_families};
use hashemb::corpus::DEFAULT_VOCAB_CAP;
use hashemb::embedkit::{
    count_params, format_count, published_emb_param_rows, AddParams, AuditInputs, Checkpoint,
    EmbeddingMatrix, ParamAudit, PoolParams, ProjParams, Variant,
};
use hashemb::hashing::HasherState;
use hashemb::metrics::{compute_reports, MetricsInput, TOOL_VERSION};
use hashemb::pretrain::{corrupt_sequence_with_rng, train_toy, CorruptionConfig, TokenPool, TrainConfig};
use hashemb::{tokenize_whitespace, EmbVariant, EmbeddingParams, HashCode, HashScheme, NGramVocab};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use crate::common::{print_json, read_text, read_vocab, usage, writer, BuiltHasher, HashArgs};

fn token_lines(text: &str) -> impl Iterator<Item = &str> {
    text.lines().map(str::trim).filter(|l| !l.is_empty())
}

#[derive(Debug, Args)]
pub struct BuildVocabArgs {
    /// Whitespace-tokenized corpus; standard input when omitted.
    #[arg(long)]
    pub corpus: Option<PathBuf>,
    /// Keep the most frequent CAP n-grams.
    #[arg(long, default_value_t = DEFAULT_VOCAB_CAP)]
    pub cap: usize,
    /// Output TSV; standard output when omitted.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

pub fn build_vocab(args: BuildVocabArgs) -> Result<()> {
    let text = read_text(args.corpus.as_deref())?;
    let tokens = tokenize_whitespace(&text);
    let vocab = NGramVocab::build(&tokens, args.cap)?;
    let mut w = writer(args.out.as_deref())?;
    vocab.write_tsv(&mut w)?;
    w.flush()?;
    eprintln!("{} n-grams from {} tokens", vocab.dim(), tokens.len());
    Ok(())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum HashOutput {
    Index,
    Bits,
}

#[derive(Debug, Args)]
pub struct HashCmdArgs {
    #[command(flatten)]
    pub hash: HashArgs,
    /// Emit bucket indices or bit strings. Defaults to bits for lsh-sign
    /// and for md5 given only --bits, otherwise to indices.
    #[arg(long, value_enum)]
    pub output: Option<HashOutput>,
    /// Tokens, one per line; standard input when omitted.
    #[arg(long)]
    pub input: Option<PathBuf>,
    /// Write the hasher configuration to this file.
    #[arg(long)]
    pub save_state: Option<PathBuf>,
    /// Restore scheme, seed, buckets and bits from a saved state.
    #[arg(long, conflicts_with_all = ["scheme", "seed", "buckets", "bits", "save_state"])]
    pub state: Option<PathBuf>,
}

fn hasher_from_state(path: &Path, args: &HashArgs) -> Result<(BuiltHasher, u64)> {
    let bytes = fs::read(path).with_context(|| format!("reading {}", path.display()))?;
    let state = HasherState::from_bytes(&bytes)?;
    let vocab = args.load_vocab()?;
    let hasher = state.hasher(vocab.clone(), args.md5_key_bytes())?;
    let built = BuiltHasher {
        hasher,
        vocab,
        buckets: (state.n_buckets > 0).then_some(state.n_buckets),
        bits: (state.n_bits > 0).then_some(state.n_bits as usize),
    };
    Ok((built, state.seed))
}

pub fn hash(args: HashCmdArgs) -> Result<()> {
    let (built, seed) = match &args.state {
        Some(path) => hasher_from_state(path, &args.hash)?,
        None => (args.hash.build()?, args.hash.seed()),
    };
    let scheme = built.hasher.scheme();
    let output = args.output.unwrap_or(match (scheme, built.buckets) {
        (HashScheme::LshSign, _) => HashOutput::Bits,
        (HashScheme::Md5, None) if built.bits.is_some() => HashOutput::Bits,
        _ => HashOutput::Index,
    });
    match output {
        HashOutput::Index if built.buckets.is_none() => {
            return Err(usage("index output needs --buckets"));
        }
        HashOutput::Bits if scheme == HashScheme::LshArgmax => {
            return Err(usage("lsh-argmax produces indices only"));
        }
        HashOutput::Bits if built.bits.is_none() => return Err(usage("bit output needs --bits")),
        _ => {}
    }
    if let Some(path) = &args.save_state {
        fs::write(path, built.state(seed).to_bytes())
            .with_context(|| format!("writing {}", path.display()))?;
    }

    let text = read_text(args.input.as_deref())?;
    let mut w = writer(None)?;
    for token in token_lines(&text) {
        match output {
            HashOutput::Index => {
                let i = built.hasher.index(token, built.buckets.unwrap())?;
                writeln!(w, "{token}\t{i}")?;
            }
            HashOutput::Bits => {
                let b = built.hasher.bits(token, built.bits.unwrap())?;
                writeln!(w, "{token}\t{b}")?;
            }
        }
    }
    w.flush()?;
    Ok(())
}

#[derive(Debug, Args)]
pub struct EmbedArgs {
    /// emb, pool, add, or proj; read from the checkpoint when omitted.
    #[arg(long)]
    pub variant: Option<EmbVariant>,
    /// Trained parameters (from `train-toy`); otherwise a fresh init.
    #[arg(long)]
    pub checkpoint: Option<PathBuf>,
    #[command(flatten)]
    pub hash: HashArgs,
    /// Embedding width for a fresh init.
    #[arg(long, conflicts_with = "checkpoint")]
    pub dim: Option<usize>,
    /// Codeword width for a fresh pool init.
    #[arg(long, default_value_t = 10, conflicts_with = "checkpoint")]
    pub k: usize,
    #[arg(long, default_value_t = 0, conflicts_with = "checkpoint")]
    pub init_seed: u64,
    /// Tokens, one per line; standard input when omitted.
    #[arg(long)]
    pub input: Option<PathBuf>,
}

fn fresh_embedding(args: &EmbedArgs, variant: EmbVariant) -> Result<EmbeddingParams> {
    let d = args.dim.ok_or_else(|| usage("--dim is required without --checkpoint"))?;
    let rng = &mut ChaCha8Rng::seed_from_u64(args.init_seed);
    let bits = || args.hash.bits.ok_or_else(|| usage(format!("{} needs --bits", variant.name())));
    Ok(match variant {
        EmbVariant::Emb => {
            let n = args.hash.buckets.ok_or_else(|| usage("emb needs --buckets"))?;
            EmbeddingParams::Emb(EmbeddingMatrix::init(n as usize, d, rng)?)
        }
        EmbVariant::Pool => EmbeddingParams::Pool(PoolParams::init(bits()?, args.k, d, rng)?),
        EmbVariant::Add => EmbeddingParams::Add(AddParams::init(bits()?, d, rng)?),
        EmbVariant::Proj => EmbeddingParams::Proj(ProjParams::init(bits()?, d, rng)?),
    })
}

pub fn embed(args: EmbedArgs) -> Result<()> {
    let mut hash = args.hash.clone();
    let params = match &args.checkpoint {
        Some(path) => {
            let file = fs::File::open(path).with_context(|| format!("opening {}", path.display()))?;
            let ck = Checkpoint::read(BufReader::new(file))?;
            let h = &ck.header;
            if args.variant.is_some_and(|v| v != h.variant) {
                return Err(usage(format!("checkpoint holds a {} embedding", h.variant.name())));
            }
            if hash.scheme.is_some_and(|s| s != h.scheme) {
                return Err(usage(format!("checkpoint was trained with {}", h.scheme)));
            }
            hash.scheme = Some(h.scheme);
            hash.seed = Some(hash.seed.unwrap_or(h.seed));
            hash.buckets = hash.buckets.or(h.n_buckets);
            hash.bits = hash.bits.or(h.n_bits);
            if let (Some(expected), Some(vocab)) = (&h.vocab_hash, hash.load_vocab()?) {
                if &vocab.content_hash().to_hex() != expected {
                    bail!("vocabulary does not match checkpoint");
                }
            }
            ck.embedding()?
        }
        None => {
            let variant = args.variant.ok_or_else(|| usage("--variant or --checkpoint is required"))?;
            fresh_embedding(&args, variant)?
        }
    };
    let variant = params.variant();
    match (variant.uses_bits(), hash.scheme()) {
        (true, HashScheme::LshArgmax) => return Err(usage(format!("{} needs a bit scheme", variant.name()))),
        (false, HashScheme::LshSign) => return Err(usage("emb needs an index scheme")),
        _ => {}
    }
    let built = hash.build()?;

    let text = read_text(args.input.as_deref())?;
    let mut w = writer(None)?;
    for token in token_lines(&text) {
        let code = if variant.uses_bits() {
            HashCode::Bits(built.hasher.bits(token, built.bits.unwrap())?)
        } else {
            let n = built.buckets.ok_or_else(|| usage("emb needs --buckets"))?;
            HashCode::Index(built.hasher.index(token, n)? as usize)
        };
        let e = params.forward(&code)?;
        let line: Vec<String> = e.iter().map(|x| x.to_string()).collect();
        writeln!(w, "{}", line.join(","))?;
    }
    w.flush()?;
    Ok(())
}

#[derive(Debug, Args)]
pub struct CorruptArgs {
    #[arg(long, default_value_t = 0.1)]
    pub p_shuffle: f64,
    #[arg(long, default_value_t = 0.1)]
    pub p_random: f64,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// One sequence per line, tokens separated by whitespace; standard
    /// input when omitted.
    #[arg(long)]
    pub input: Option<PathBuf>,
}

/// Writes `token\tLABEL` per position, with a blank line after each
/// sequence. Random replacements are drawn from the input's token types.
pub fn corrupt(args: CorruptArgs) -> Result<()> {
    let cfg = CorruptionConfig {
        p_shuffle: args.p_shuffle,
        p_random: args.p_random,
        seed: args.seed,
    };
    cfg.validate().map_err(|e| usage(e.to_string()))?;
    let text = read_text(args.input.as_deref())?;
    let sequences: Vec<_> = token_lines(&text).map(tokenize_whitespace).collect();
    let pool = TokenPool::from_tokens(sequences.iter().flatten())?;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut w = writer(None)?;
    for seq in &sequences {
        let labeled = corrupt_sequence_with_rng(seq, &cfg, &pool, &mut rng)?;
        for (token, label) in labeled.tokens.iter().zip(&labeled.labels) {
            writeln!(w, "{token}\t{label}")?;
        }
        writeln!(w)?;
    }
    w.flush()?;
    Ok(())
}

#[derive(Debug, Args)]
pub struct TrainToyArgs {
    /// TOML training configuration.
    #[arg(long)]
    pub config: PathBuf,
    /// Corpus file, overriding the configuration's (which is relative to
    /// the configuration file).
    #[arg(long)]
    pub corpus: Option<PathBuf>,
    /// Worker threads; 1 is strictly sequential.
    #[arg(long)]
    pub threads: Option<usize>,
    /// Writes model.ckpt, vocab.tsv (LSH runs) and report.json here.
    #[arg(long)]
    pub out_dir: Option<PathBuf>,
}

pub fn train_toy_cmd(args: TrainToyArgs) -> Result<()> {
    let toml = fs::read_to_string(&args.config)
        .with_context(|| format!("reading {}", args.config.display()))?;
    let mut cfg = TrainConfig::from_toml(&toml)?;
    if let Some(t) = args.threads {
        cfg.threads = t;
    }
    let corpus = match (&args.corpus, &cfg.corpus) {
        (Some(p), _) => p.clone(),
        (None, Some(p)) => args.config.parent().unwrap_or(Path::new(".")).join(p),
        (None, None) => return Err(usage("no corpus in the configuration and no --corpus")),
    };
    let text = fs::read_to_string(&corpus).with_context(|| format!("reading {}", corpus.display()))?;
    let outcome = train_toy(&text, &cfg)?;
    let report = &outcome.report;
    eprintln!(
        "{} steps, loss {:.4} -> {:.4}, held-out accuracy {:.4}",
        report.steps, report.first_decile_loss, report.last_decile_loss, report.eval_accuracy
    );

    if let Some(dir) = &args.out_dir {
        fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))?;
        let ck = outcome.model.to_checkpoint(Some(&cfg))?;
        ck.write(fs::File::create(dir.join("model.ckpt"))?)?;
        if let Some(vocab) = &outcome.vocab {
            vocab.write_tsv(fs::File::create(dir.join("vocab.tsv"))?)?;
        }
        print_json(report, Some(&dir.join("report.json")))?;
    }
    print_json(report, None)
}

#[derive(Debug, Args)]
pub struct AuditArgs {
    /// bert, canine-c, proformer, emb, pool, add, or proj.
    #[arg(long, required_unless_present = "paper_fixtures")]
    pub variant: Option<Variant>,
    /// Check every published embedding-parameter row.
    #[arg(long, conflicts_with = "variant")]
    pub paper_fixtures: bool,
    #[arg(long, default_value_t = 768)]
    pub d: u64,
    #[arg(long)]
    pub vocab_size: Option<u64>,
    #[arg(long)]
    pub hash_buckets: Option<u64>,
    #[arg(long)]
    pub lsh_digest_size: Option<u64>,
    #[arg(long)]
    pub n: Option<u64>,
    #[arg(long)]
    pub t: Option<u64>,
    #[arg(long)]
    pub k: Option<u64>,
}

#[derive(Serialize)]
struct AuditReport {
    tool_version: &'static str,
    #[serde(flatten)]
    audit: ParamAudit,
    has_reserved_row: bool,
    formatted: String,
}

#[derive(Serialize)]
struct FixtureRow {
    label: &'static str,
    #[serde(flatten)]
    audit: ParamAudit,
    compared_count: u64,
    formatted: String,
    printed: &'static str,
    matches: bool,
}

#[derive(Serialize)]
struct FixtureReport {
    tool_version: &'static str,
    rows: Vec<FixtureRow>,
    all_match: bool,
}

pub fn audit_params(args: AuditArgs) -> Result<()> {
    if args.paper_fixtures {
        let mut rows = Vec::new();
        for row in published_emb_param_rows() {
            let audit = count_params(row.variant, &row.inputs)?;
            let compared_count = row.comparable_count(&audit);
            let formatted = format_count(compared_count);
            rows.push(FixtureRow {
                label: row.label,
                matches: formatted == row.printed,
                compared_count,
                formatted,
                printed: row.printed,
                audit,
            });
        }
        let all_match = rows.iter().all(|r| r.matches);
        print_json(&FixtureReport { tool_version: TOOL_VERSION, rows, all_match }, None)?;
        if !all_match {
            bail!("some published rows were not reproduced");
        }
        return Ok(());
    }
    let variant = args.variant.expect("clap requires --variant");
    let inputs = AuditInputs {
        d: args.d,
        vocab_size: args.vocab_size,
        hash_buckets: args.hash_buckets,
        lsh_digest_size: args.lsh_digest_size,
        n: args.n,
        t: args.t,
        k: args.k,
    };
    let audit = count_params(variant, &inputs).map_err(|e| usage(e.to_string()))?;
    let shown = if variant.has_reserved_row() {
        audit.reported_count_with_reserved_row
    } else {
        audit.formula_count
    };
    print_json(
        &AuditReport {
            tool_version: TOOL_VERSION,
            has_reserved_row: variant.has_reserved_row(),
            formatted: format_count(shown),
            audit,
        },
        None,
    )
}

#[derive(Debug, Args)]
pub struct CollisionArgs {
    #[command(flatten)]
    pub hash: HashArgs,
    /// Whitespace-separated tokens; standard input when omitted.
    #[arg(long)]
    pub input: Option<PathBuf>,
    /// One inflection family per line, tokens separated by spaces.
    #[arg(long)]
    pub families: Option<PathBuf>,
}

/// LSH schemes without `--vocab` build one from the input tokens.
pub fn collisions(args: CollisionArgs) -> Result<()> {
    let n_buckets = args.hash.buckets.ok_or_else(|| usage("--buckets is required"))?;
    let text = read_text(args.input.as_deref())?;
    let tokens = tokenize_whitespace(&text);
    let vocab = match (&args.hash.vocab, args.hash.scheme().is_lsh()) {
        (Some(path), _) => Some(read_vocab(path)?),
        (None, true) => Some(Arc::new(NGramVocab::build(&tokens, DEFAULT_VOCAB_CAP)?)),
        (None, false) => None,
    };
    let built = args.hash.build_with(vocab)?;
    let families = match &args.families {
        Some(path) => Some(parse_families(&read_text(Some(path))?)),
        None => None,
    };
    let report = collision_analyze(&tokens, &built.hasher, n_buckets, families.as_deref())?;
    print_json(&report, None)
}

#[derive(Debug, Args)]
pub struct MetricsArgs {
    /// JSON with a `baseline` and a list of `models`, each giving name,
    /// score, total_params, emb_params and optional ms-per-sample timings.
    #[arg(long)]
    pub input: Option<PathBuf>,
}

pub fn metrics(args: MetricsArgs) -> Result<()> {
    let text = read_text(args.input.as_deref())?;
    let input: MetricsInput = serde_json::from_str(&text).context("parsing metrics input")?;
    print_json(&compute_reports(&input)?, None)
}
