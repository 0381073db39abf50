use std::path::PathBuf;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("cannot build a vocabulary from an empty sentence stream")]
    EmptyCorpus,

    #[error("split requests {requested} sentences but the corpus has only {available}")]
    SplitShortfall { requested: usize, available: usize },

    #[error("{path}:{line}: malformed lexicon line: {reason}")]
    LexiconParse {
        path: PathBuf,
        line: usize,
        reason: String,
    },

    #[error("subword vocab target {target} must exceed the character alphabet size {alphabet}")]
    SubwordTargetTooSmall { target: usize, alphabet: usize },

    #[error("malformed subword model file {path}: {reason}")]
    SubwordModelParse { path: PathBuf, reason: String },

    #[error("{kernel}: shape mismatch, lhs {lhs:?} vs rhs {rhs:?}")]
    ShapeMismatch {
        kernel: &'static str,
        lhs: Vec<usize>,
        rhs: Vec<usize>,
    },

    #[error("backward requires a scalar loss, got shape {shape:?}")]
    NonScalarLoss { shape: Vec<usize> },

    #[error("cross_entropy: every position is ignored")]
    AllPositionsIgnored,

    #[error("sequence of length {len} exceeds max_seq_len {max}")]
    SequenceTooLong { len: usize, max: usize },

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("BIO2: {tags} tags do not cover {subwords} subwords")]
    TagSpanMismatch { tags: usize, subwords: usize },

    #[error("checkpoint version mismatch: file has {found}, expected {expected}")]
    CheckpointVersion { found: u32, expected: u32 },

    #[error("checkpoint {kind} hash mismatch: file has {found}, resources have {expected}")]
    CheckpointHash {
        kind: &'static str,
        found: String,
        expected: String,
    },

    #[error("checkpoint file is truncated or not a spellforge checkpoint")]
    CheckpointTruncated,

    #[error("training diverged at step {step}: non-finite loss")]
    Diverged { step: usize },

    #[error("metrics over zero evaluated positions")]
    EmptyEvaluation,

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}
