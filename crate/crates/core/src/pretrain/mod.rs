//! Shuffle + Random pre-training at toy scale.
//!
//! Tokens are corrupted by shuffling some positions among themselves and
//! replacing others with tokens drawn from the corpus; a small encoder learns
//! to label every position INTACT, SHUFFLED, or RANDOM. No token-to-id table
//! is consulted anywhere, so unseen tokens embed like any other.

mod corrupt;
mod encoder;
mod gradcheck;
mod optim;
mod train;

pub use corrupt::{
    corrupt_sequence, corrupt_sequence_with_rng, CorruptionConfig, Label, LabeledSequence, TokenPool,
    DERANGEMENT_RETRIES,
};
pub use encoder::{
    argmax_rows, cross_entropy, Encoder, EncoderParams, ForwardCache, LayerParams, ParamSlot,
    ToyEncoderConfig, N_CLASSES,
};
pub use gradcheck::{
    check_gradient, embedding_gradient_error, finite_diff_check, finite_diff_check_seeded,
    random_instance, relative_error, ERROR_FLOOR,
};
pub use optim::{AdamW, OptimizerConfig};
pub use train::{
    decile_means, evaluate, train_toy, EmbeddingConfig, EvalResult, EvalSet, HashConfig, HashFamily,
    LossPoint, ParamCounts, ToyData, ToyModel, TrainConfig, TrainOutcome, TrainReport,
};
