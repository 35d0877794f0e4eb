//! Synthetic corpora, the pretrain/adapt/infer protocol and evaluation.

mod config;
pub mod corpus;
mod data;
mod report;
pub mod run;
mod stages;

pub use config::{
    derive_seed, EnhancerSection, MaskMode, MaskSource, Mode, PathOverrides, PipelineConfig, ProtocolConfig,
};
pub use data::{
    augment_corpus, generate_corpus, read_corpus, write_corpus, Corpus, CorpusEntry, Manifest, Role,
    SpeakerRecord, Split, UtteranceRecord,
};
pub use report::{encode_pgm, format_csv, write_csv, write_pgm, Cell};
pub use stages::{
    adapt_examples, embedder, enhancer_pairs, eval_enhancer, eval_enhancer_model, eval_similarity,
    heldout_before_loss, heldout_oracle_mse, log_grid, new_speaker_embedding, pretrain_examples,
    pretrain_speaker_embeddings, run_adapt, run_infer, run_pretrain, speaker_embedding, train_enhancer_stage,
    training_log_mels, validation_loss, AdaptOutput, Conditioning, EnhancerRow, PretrainOutput, SimilarityRow,
    Synthesis,
};
