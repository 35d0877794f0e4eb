//! Conditioned Tacotron-style synthesizer.

mod attention;
mod layers;
mod model;
mod symbols;
mod train;

pub use attention::{gmm_attention_step, GmmAttentionState, SIGMA_MIN};
pub use model::{
    decoder_output, pad_to_reduction, stop_targets, tts_loss, tts_loss_graph, ActivationLog, DecodeGraph,
    DecodeMode, DecoderOutput, Lineage, LogMelNorm, TtsConfig, TtsModel,
};
pub use symbols::{SymbolSequence, END, N_TEXT_SYMBOLS, START, VOCAB_SIZE};
pub use train::{example_loss, train_tts, TtsExample, TtsTrainConfig};
