//! Task generators and evaluation metrics.

pub mod footprint;
pub mod passkey;
pub mod perplexity;
pub mod recall;
pub mod tokenfile;

pub use footprint::{
    compression_ratio, human_count, memory_footprint, Family, Footprint, FootprintDescriptor,
    FootprintParams,
};
pub use passkey::{
    passkey_evaluate, passkey_extract, passkey_generate, passkey_score, passkey_suite,
    ByteTokenizer, KeyPosition, PasskeyInstance,
};
pub use perplexity::{
    eval_perplexity, eval_perplexity_many, ContextRegime, PerplexityReport, CLOSED_GATE,
};
pub use recall::{
    recall_accuracy, recall_dataset, recall_eval_split, recall_instance_with, MixedRecallSource,
    Placement, RecallConfig, RecallInstance, RecallSource,
};
pub use tokenfile::{TokenFile, TokenFileKind, TokenRecord};
