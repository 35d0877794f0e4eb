//! The single JSON document that drives every pipeline stage.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::corpus::NoiseKind;
use crate::dsp::DspConfig;
use crate::enhancer::{EnhancerConfig, EnhancerTrainConfig};
use crate::error::{Error, Result};
use crate::ttscore::{TtsConfig, TtsTrainConfig};

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PipelineConfig {
    pub dsp: DspConfig,
    pub enhancer: EnhancerSection,
    pub tts: TtsConfig,
    pub pipeline: ProtocolConfig,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EnhancerSection {
    pub model: EnhancerConfig,
    pub train: EnhancerTrainConfig,
}

/// `proposed` conditions the Post-Net on the noise mask; `baseline` is
/// denoise-then-adapt with an unconditioned Post-Net.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Mode {
    #[default]
    Proposed,
    Baseline,
}

/// Which masks condition the noisy pretraining utterances.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MaskSource {
    #[default]
    Predicted,
    Ideal,
}

/// Conditioning used at synthesis time.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MaskMode {
    #[default]
    Clean,
    /// The enhancer's mask for the noisy recording of the same text.
    Reference,
}

/// Optional locations; relative paths resolve against `--out-dir`.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PathOverrides {
    pub corpus: Option<PathBuf>,
    pub enhancer: Option<PathBuf>,
    pub pretrain_checkpoint: Option<PathBuf>,
    pub adapt_checkpoint: Option<PathBuf>,
    /// Checkpoint read by `synth` and `eval-similarity`.
    pub synth_checkpoint: Option<PathBuf>,
    /// Input directory of `augment`.
    pub augment_input: Option<PathBuf>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ProtocolConfig {
    pub mode: Mode,
    pub pretrain_speakers: usize,
    pub texts_per_speaker: usize,
    pub min_symbols: usize,
    pub max_symbols: usize,
    pub snr_levels: Vec<f64>,
    pub noise_kinds: Vec<NoiseKind>,
    /// Texts per pretraining speaker held out for the enhancer table; each is
    /// mixed at every SNR level.
    pub enhancer_test_texts: usize,
    pub adapt_utterances: usize,
    pub adapt_snr_levels: Vec<f64>,
    pub heldout_texts: usize,
    pub pretrain_masks: MaskSource,
    pub synth_mask: MaskMode,
    pub embedding_seed: u64,
    pub pretrain: TtsTrainConfig,
    pub adapt: TtsTrainConfig,
    pub paths: PathOverrides,
}

impl Default for ProtocolConfig {
    fn default() -> Self {
        ProtocolConfig {
            mode: Mode::Proposed,
            pretrain_speakers: 4,
            texts_per_speaker: 30,
            min_symbols: 3,
            max_symbols: 6,
            snr_levels: vec![-5.0, 0.0, 5.0],
            noise_kinds: NoiseKind::ALL.to_vec(),
            enhancer_test_texts: 8,
            adapt_utterances: 20,
            adapt_snr_levels: vec![-5.0, 0.0],
            heldout_texts: 10,
            pretrain_masks: MaskSource::Predicted,
            synth_mask: MaskMode::Clean,
            embedding_seed: 7,
            pretrain: TtsTrainConfig::default(),
            // The Post-Net keeps the noise model learned in pretraining.
            adapt: TtsTrainConfig {
                steps: 2000,
                lr: 1e-4,
                frozen: vec!["post.".into()],
                ..TtsTrainConfig::default()
            },
            paths: PathOverrides::default(),
        }
    }
}

impl PipelineConfig {
    pub fn from_json(text: &str) -> Result<Self> {
        let cfg: PipelineConfig = serde_json::from_str(text)?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        Self::from_json(&std::fs::read_to_string(path)?)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("config serializes")
    }

    pub fn validate(&self) -> Result<()> {
        let p = &self.pipeline;
        self.enhancer.model.validate()?;
        self.tts_config().validate()?;
        if self.enhancer.model.n_mels != self.dsp.n_mels || self.tts.n_mels != self.dsp.n_mels {
            return Err(Error::Config("enhancer, tts and dsp n_mels must agree".into()));
        }
        if p.pretrain_speakers < 2 {
            return Err(Error::Config("at least 2 pretraining speakers are required".into()));
        }
        if p.texts_per_speaker == 0 || p.adapt_utterances == 0 || p.heldout_texts == 0 {
            return Err(Error::Config("text counts must be positive".into()));
        }
        if p.min_symbols == 0 || p.min_symbols > p.max_symbols {
            return Err(Error::Config("need 1 <= min_symbols <= max_symbols".into()));
        }
        if p.snr_levels.is_empty() || p.adapt_snr_levels.is_empty() || p.noise_kinds.is_empty() {
            return Err(Error::Config("snr levels and noise kinds must be non-empty".into()));
        }
        if p.snr_levels.iter().chain(&p.adapt_snr_levels).any(|s| !s.is_finite()) {
            return Err(Error::Config("snr levels must be finite".into()));
        }
        if self.tts.speaker_dim == 0 {
            return Err(Error::Config("tts.speaker_dim must be positive".into()));
        }
        Ok(())
    }

    /// The synthesizer configuration implied by the mode.
    pub fn tts_config(&self) -> TtsConfig {
        TtsConfig {
            postnet_mask: self.pipeline.mode == Mode::Proposed,
            ..self.tts.clone()
        }
    }
}

/// Independent sub-seeds from one master seed (splitmix64 finalizer).
pub fn derive_seed(master: u64, stream: u64) -> u64 {
    let mut z = master
        .wrapping_add(stream.wrapping_mul(0x9e37_79b9_7f4a_7c15))
        .wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// Sub-seed streams used by the stages.
pub(crate) mod stream {
    pub const SPEAKERS: u64 = 1;
    pub const TEXTS: u64 = 2;
    pub const RENDER: u64 = 3;
    pub const ENHANCER_INIT: u64 = 4;
    pub const ENHANCER_TRAIN: u64 = 5;
    pub const TTS_INIT: u64 = 6;
    pub const PRETRAIN: u64 = 7;
    pub const ADAPT: u64 = 8;
}
