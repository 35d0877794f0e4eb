//! The pretrain, adapt and infer stages and the evaluation harnesses.

use rayon::prelude::*;

use super::config::{derive_seed, stream, MaskMode, MaskSource, Mode, PipelineConfig};
use super::corpus::UtterancePair;
use super::data::{Corpus, Role, Split};
use crate::dsp::{si_sdr_mel, MelSpectrogram};
use crate::enhancer::{train_enhancer, EnhancerModel, LossCurve};
use crate::error::{invalid, Error, Result};
use crate::grid::Grid;
use crate::maskkit::{apply_mask, clean_conditioning, normalize_for_conditioning, DenoiseMask};
use crate::speaker::{centroid, cosine_similarity, is_same_speaker, SpeakerEmbedding, ToyEmbedder};
use crate::ttscore::{
    example_loss, train_tts, DecodeMode, DecoderOutput, Lineage, LogMelNorm, SymbolSequence, TtsExample,
    TtsModel,
};

/// Natural-log mel with the configured floor.
pub fn log_grid(cfg: &PipelineConfig, mel: &MelSpectrogram) -> Grid {
    let floor = cfg.dsp.log_floor;
    mel.bins().map(|x| x.max(floor).ln())
}

fn noisy_of(p: &UtterancePair) -> Result<&super::corpus::NoisyVersion> {
    p.noisy
        .as_ref()
        .ok_or_else(|| invalid(format!("utterance {} has no noisy version", p.id)))
}

/// Enhancer training pairs: every pretraining utterance as (noisy, clean)
/// and as (clean, clean), so clean input learns a mask near one.
pub fn enhancer_pairs(corpus: &Corpus) -> Vec<(MelSpectrogram, MelSpectrogram)> {
    let mut pairs = Vec::new();
    for p in corpus.split(Split::Pretrain) {
        if let Some(n) = &p.noisy {
            pairs.push((n.mel.clone(), p.clean_mel.clone()));
        }
    }
    for p in corpus.split(Split::Pretrain) {
        pairs.push((p.clean_mel.clone(), p.clean_mel.clone()));
    }
    pairs
}

pub fn train_enhancer_stage(cfg: &PipelineConfig, corpus: &Corpus, seed: u64) -> Result<(EnhancerModel, LossCurve)> {
    let mut model = EnhancerModel::new(cfg.enhancer.model.clone(), derive_seed(seed, stream::ENHANCER_INIT))?;
    let curve = train_enhancer(
        &mut model,
        &enhancer_pairs(corpus),
        &cfg.enhancer.train,
        derive_seed(seed, stream::ENHANCER_TRAIN),
    )?;
    Ok((model, curve))
}

/// One row of the enhancement table.
#[derive(Clone, Debug, PartialEq)]
pub struct EnhancerRow {
    pub snr_db: f64,
    pub noisy_si_sdr: f64,
    pub enhanced_si_sdr: f64,
    pub count: usize,
}

/// Mean SI-SDR of the noisy input and of `noisy * mask_fn(utterance)` per SNR
/// level, against the clean mel.
pub fn eval_enhancer<F>(utterances: &[&UtterancePair], snr_levels: &[f64], mask_fn: F) -> Result<Vec<EnhancerRow>>
where
    F: Fn(&UtterancePair) -> Result<DenoiseMask> + Sync,
{
    let scores: Vec<(f64, f64, f64)> = utterances
        .par_iter()
        .map(|p| {
            let n = noisy_of(p)?;
            let mask = mask_fn(p)?;
            let base = si_sdr_mel(&p.clean_mel, &n.mel)?;
            let enh = si_sdr_mel(&p.clean_mel, &apply_mask(&n.mel, &mask)?)?;
            Ok((n.snr_db, base, enh))
        })
        .collect::<Result<_>>()?;
    snr_levels
        .iter()
        .map(|&snr| {
            let group: Vec<_> = scores.iter().filter(|s| s.0 == snr).collect();
            if group.is_empty() {
                return Err(invalid(format!("no test utterances at {snr} dB")));
            }
            let c = group.len() as f64;
            Ok(EnhancerRow {
                snr_db: snr,
                noisy_si_sdr: group.iter().map(|s| s.1).sum::<f64>() / c,
                enhanced_si_sdr: group.iter().map(|s| s.2).sum::<f64>() / c,
                count: group.len(),
            })
        })
        .collect()
}

/// The enhancement table of a trained model on the corpus test split.
pub fn eval_enhancer_model(cfg: &PipelineConfig, corpus: &Corpus, model: &EnhancerModel) -> Result<Vec<EnhancerRow>> {
    let test: Vec<&UtterancePair> = corpus.split(Split::EnhancerTest).collect();
    eval_enhancer(&test, &cfg.pipeline.snr_levels, |p| model.enhance(&noisy_of(p)?.mel))
}

pub fn embedder(cfg: &PipelineConfig) -> ToyEmbedder {
    ToyEmbedder::new(cfg.dsp.n_mels, cfg.tts.speaker_dim, cfg.pipeline.embedding_seed)
}

/// Speaker-level embedding: centroid of the utterance embeddings of log-mel grids.
pub fn speaker_embedding<'a>(embedder: &ToyEmbedder, log_mels: impl IntoIterator<Item = &'a Grid>) -> Result<SpeakerEmbedding> {
    let utts = log_mels
        .into_iter()
        .map(|g| embedder.embed_log_grid(g))
        .collect::<Result<Vec<_>>>()?;
    centroid(&utts)
}

/// Log-mel of `noisy * enhance(noisy)` and the normalized mask.
fn denoise(cfg: &PipelineConfig, enhancer: &EnhancerModel, noisy: &MelSpectrogram) -> Result<(Grid, DenoiseMask)> {
    let mask = enhancer.enhance(noisy)?;
    Ok((log_grid(cfg, &apply_mask(noisy, &mask)?), mask))
}

pub struct PretrainOutput {
    pub model: TtsModel,
    pub speakers: Vec<(String, SpeakerEmbedding)>,
    pub curve: LossCurve,
}

/// Embeddings of the pretraining speakers from their clean utterances.
pub fn pretrain_speaker_embeddings(cfg: &PipelineConfig, corpus: &Corpus) -> Result<Vec<(String, SpeakerEmbedding)>> {
    let emb = embedder(cfg);
    corpus
        .speakers_with(Role::Pretrain)
        .map(|s| {
            let mels: Vec<Grid> = corpus
                .split(Split::Pretrain)
                .filter(|p| p.speaker_id == s.id)
                .map(|p| log_grid(cfg, &p.clean_mel))
                .collect();
            if mels.is_empty() {
                return Err(invalid(format!("speaker {} has no pretraining utterances", s.id)));
            }
            Ok((s.id.clone(), speaker_embedding(&emb, &mels)?))
        })
        .collect()
}

fn lookup<'a>(speakers: &'a [(String, SpeakerEmbedding)], id: &str) -> Result<&'a SpeakerEmbedding> {
    speakers
        .iter()
        .find(|(n, _)| n == id)
        .map(|(_, e)| e)
        .ok_or_else(|| invalid(format!("no embedding for speaker {id}")))
}

/// Pretraining examples.
///
/// Proposed mode: each clean utterance under the clean mask with clean
/// before/after targets, and its noisy copy under its mask with the clean
/// before target and the noisy after target. Baseline mode: clean
/// utterances only, no mask.
pub fn pretrain_examples(
    cfg: &PipelineConfig,
    corpus: &Corpus,
    enhancer: Option<&EnhancerModel>,
    speakers: &[(String, SpeakerEmbedding)],
) -> Result<Vec<TtsExample>> {
    let n_mels = cfg.dsp.n_mels;
    let proposed = cfg.pipeline.mode == Mode::Proposed;
    if proposed && cfg.pipeline.pretrain_masks == MaskSource::Predicted && enhancer.is_none() {
        return Err(Error::Config("predicted-mask pretraining needs a trained enhancer".into()));
    }
    let mut out = Vec::new();
    for p in corpus.split(Split::Pretrain) {
        let spk = lookup(speakers, &p.speaker_id)?.clone();
        let clean = log_grid(cfg, &p.clean_mel);
        let frames = clean.rows();
        out.push(TtsExample {
            symbols: p.symbols.clone(),
            speaker: spk.clone(),
            noise_rep: if proposed {
                Some(clean_conditioning(frames, n_mels)?.values().clone())
            } else {
                None
            },
            before_target: clean.clone(),
            after_target: clean.clone(),
        });
        if !proposed {
            continue;
        }
        if let Some(n) = &p.noisy {
            if n.mel.frames() != frames {
                return Err(invalid(format!("{}: noisy copy is not frame-aligned with its clean reference", p.id)));
            }
            let mask = match (cfg.pipeline.pretrain_masks, enhancer) {
                (MaskSource::Predicted, Some(e)) => e.enhance(&n.mel)?,
                _ => n.ideal_mask.clone(),
            };
            out.push(TtsExample {
                symbols: p.symbols.clone(),
                speaker: spk,
                noise_rep: Some(normalize_for_conditioning(&mask).values().clone()),
                before_target: clean,
                after_target: log_grid(cfg, &n.mel),
            });
        }
    }
    if out.is_empty() {
        return Err(invalid("no pretraining utterances"));
    }
    Ok(out)
}

pub fn run_pretrain(
    cfg: &PipelineConfig,
    corpus: &Corpus,
    enhancer: Option<&EnhancerModel>,
    seed: u64,
) -> Result<PretrainOutput> {
    cfg.validate()?;
    let speakers = pretrain_speaker_embeddings(cfg, corpus)?;
    let examples = pretrain_examples(cfg, corpus, enhancer, &speakers)?;
    let clean: Vec<Grid> = corpus.split(Split::Pretrain).map(|p| log_grid(cfg, &p.clean_mel)).collect();
    let norm = LogMelNorm::fit(&clean)?;
    let mut model = TtsModel::new(cfg.tts_config(), norm, derive_seed(seed, stream::TTS_INIT))?;
    let curve = train_tts(&mut model, &examples, &cfg.pipeline.pretrain, derive_seed(seed, stream::PRETRAIN))?;
    model.set_lineage(Lineage::Pretrained);
    Ok(PretrainOutput { model, speakers, curve })
}

pub struct AdaptOutput {
    pub model: TtsModel,
    pub speaker: (String, SpeakerEmbedding),
    pub curve: LossCurve,
}

/// The new speaker's embedding from its denoised adaptation utterances.
pub fn new_speaker_embedding(cfg: &PipelineConfig, corpus: &Corpus, enhancer: &EnhancerModel) -> Result<(String, SpeakerEmbedding)> {
    let new = corpus.new_speaker()?;
    let mels = corpus
        .split(Split::Adapt)
        .map(|p| Ok(denoise(cfg, enhancer, &noisy_of(p)?.mel)?.0))
        .collect::<Result<Vec<_>>>()?;
    if mels.is_empty() {
        return Err(invalid("no adaptation utterances"));
    }
    Ok((new.id.clone(), speaker_embedding(&embedder(cfg), &mels)?))
}

/// Adaptation examples from noisy recordings only. Before target: the
/// denoised log-mel. After target: the noisy log-mel in proposed mode
/// (conditioned on the predicted mask), the denoised log-mel in baseline mode.
pub fn adapt_examples<'a>(
    cfg: &PipelineConfig,
    utterances: impl IntoIterator<Item = &'a UtterancePair>,
    enhancer: &EnhancerModel,
    speaker: &SpeakerEmbedding,
) -> Result<Vec<TtsExample>> {
    utterances
        .into_iter()
        .map(|p| {
            let n = noisy_of(p)?;
            let (denoised, mask) = denoise(cfg, enhancer, &n.mel)?;
            let (noise_rep, after) = match cfg.pipeline.mode {
                Mode::Proposed => (
                    Some(normalize_for_conditioning(&mask).values().clone()),
                    log_grid(cfg, &n.mel),
                ),
                Mode::Baseline => (None, denoised.clone()),
            };
            Ok(TtsExample {
                symbols: p.symbols.clone(),
                speaker: speaker.clone(),
                noise_rep,
                before_target: denoised,
                after_target: after,
            })
        })
        .collect()
}

pub fn run_adapt(
    cfg: &PipelineConfig,
    pretrained: &TtsModel,
    pretrain_speakers: &[(String, SpeakerEmbedding)],
    corpus: &Corpus,
    enhancer: &EnhancerModel,
    seed: u64,
) -> Result<AdaptOutput> {
    if pretrained.lineage() != Lineage::Pretrained {
        return Err(Error::Config(format!(
            "adaptation needs a pretrained checkpoint, got lineage {:?}",
            pretrained.lineage()
        )));
    }
    let (id, spk) = new_speaker_embedding(cfg, corpus, enhancer)?;
    if pretrain_speakers.iter().any(|(n, _)| *n == id) {
        return Err(invalid(format!("new speaker id {id} collides with a pretraining speaker")));
    }
    let examples = adapt_examples(cfg, corpus.split(Split::Adapt), enhancer, &spk)?;
    if examples.is_empty() {
        return Err(invalid("no adaptation utterances"));
    }
    let mut model = pretrained.clone();
    let curve = train_tts(&mut model, &examples, &cfg.pipeline.adapt, derive_seed(seed, stream::ADAPT))?;
    model.set_lineage(Lineage::Adapted);
    Ok(AdaptOutput {
        model,
        speaker: (id, spk),
        curve,
    })
}

/// Mean teacher-forced before-loss (MSE against the denoised log-mel) on the
/// new speaker's held-out utterances.
pub fn heldout_before_loss(
    cfg: &PipelineConfig,
    model: &TtsModel,
    corpus: &Corpus,
    enhancer: &EnhancerModel,
    speaker: &SpeakerEmbedding,
) -> Result<f64> {
    let examples = adapt_examples(cfg, corpus.split(Split::Heldout), enhancer, speaker)?;
    if examples.is_empty() {
        return Err(invalid("no held-out utterances"));
    }
    let mut total = 0.0;
    for ex in &examples {
        let noise = ex.noise_rep.as_ref();
        let out = model.synthesize(&ex.symbols, speaker, noise, DecodeMode::TeacherForced(&ex.before_target), None)?;
        total += out.before_mel.mse(&ex.before_target)?;
    }
    Ok(total / examples.len() as f64)
}

/// Mean full training loss (before + after + stop) of `examples` without dropout.
pub fn validation_loss(model: &TtsModel, examples: &[TtsExample]) -> Result<f64> {
    let mut total = 0.0;
    for ex in examples {
        let tape = maskvoice_autodiff::Tape::new();
        let p = model.params().bind_frozen(&tape);
        total += example_loss(model, &p, ex, None)?.item();
    }
    Ok(total / examples.len().max(1) as f64)
}

/// Conditioning for synthesis.
#[derive(Clone, Copy, Debug)]
pub enum Conditioning<'a> {
    Clean,
    Reference(&'a DenoiseMask),
}

#[derive(Clone, Debug, PartialEq)]
pub struct Synthesis {
    pub output: DecoderOutput,
    /// The normalized noise representation fed to the Post-Net, if any.
    pub noise_rep: Option<Grid>,
}

/// Synthesizes `symbols` for `speaker`. `frames` fixes the output length;
/// `None` decodes until the stop token or `max_frames`.
pub fn run_infer(
    model: &TtsModel,
    symbols: &SymbolSequence,
    speaker: &SpeakerEmbedding,
    conditioning: Conditioning<'_>,
    frames: Option<usize>,
) -> Result<Synthesis> {
    let n_mels = model.config().n_mels;
    let noise_rep = match (model.config().postnet_mask, conditioning) {
        (false, Conditioning::Clean) => None,
        (false, Conditioning::Reference(_)) => {
            return Err(invalid("the baseline model takes no reference mask"));
        }
        (true, Conditioning::Clean) => Some(clean_conditioning(1, n_mels)?.values().clone()),
        (true, Conditioning::Reference(m)) => Some(normalize_for_conditioning(m).values().clone()),
    };
    let mode = match frames {
        Some(f) => DecodeMode::Fixed(f),
        None => DecodeMode::FreeRunning,
    };
    let mut output = model.synthesize(symbols, speaker, noise_rep.as_ref(), mode, None)?;
    // Report the conditioning at the generated length.
    let noise_rep = noise_rep.map(|n| n.resize_rows(output.after_mel.rows()));
    output.hit_max_frames &= frames.is_none();
    Ok(Synthesis { output, noise_rep })
}

/// Per held-out utterance: log-mel MSE between the synthesized after-mel and
/// the clean oracle. Synthesis length equals the oracle length. Reference
/// mode conditions on the enhancer's mask for the noisy recording of the
/// same text.
pub fn heldout_oracle_mse(
    cfg: &PipelineConfig,
    model: &TtsModel,
    corpus: &Corpus,
    enhancer: &EnhancerModel,
    speaker: &SpeakerEmbedding,
    mode: MaskMode,
) -> Result<Vec<(String, f64)>> {
    let held: Vec<&UtterancePair> = corpus.split(Split::Heldout).collect();
    if held.is_empty() {
        return Err(invalid("no held-out utterances"));
    }
    held.par_iter()
        .map(|p| {
            let oracle = log_grid(cfg, &p.clean_mel);
            let mask;
            let cond = match mode {
                MaskMode::Clean => Conditioning::Clean,
                MaskMode::Reference => {
                    mask = enhancer.enhance(&noisy_of(p)?.mel)?;
                    Conditioning::Reference(&mask)
                }
            };
            let s = run_infer(model, &p.symbols, speaker, cond, Some(oracle.rows()))?;
            Ok((p.id.clone(), s.output.after_mel.mse(&oracle)?))
        })
        .collect()
}

#[derive(Clone, Debug, PartialEq)]
pub struct SimilarityRow {
    pub speaker: String,
    pub cosine: f64,
    pub same_speaker: bool,
    pub synthesized: usize,
    pub training: usize,
}

/// Per speaker: cosine between the centroid of toy embeddings of its
/// synthesized log-mels and the centroid over its training log-mels.
pub fn eval_similarity(
    embedder: &ToyEmbedder,
    synthesized: &[(String, Vec<Grid>)],
    training: &[(String, Vec<Grid>)],
) -> Result<Vec<SimilarityRow>> {
    synthesized
        .iter()
        .map(|(speaker, synth)| {
            let train = training
                .iter()
                .find(|(s, _)| s == speaker)
                .map(|(_, g)| g)
                .filter(|g| !g.is_empty())
                .ok_or_else(|| invalid(format!("no training utterances for speaker {speaker}")))?;
            if synth.is_empty() {
                return Err(invalid(format!("no synthesized utterances for speaker {speaker}")));
            }
            let a = speaker_embedding(embedder, synth)?;
            let b = speaker_embedding(embedder, train)?;
            let cosine = cosine_similarity(&a, &b)?;
            Ok(SimilarityRow {
                speaker: speaker.clone(),
                cosine,
                same_speaker: is_same_speaker(cosine),
                synthesized: synth.len(),
                training: train.len(),
            })
        })
        .collect()
}

/// Training log-mels per speaker: clean pretraining utterances for the
/// pretraining speakers, the denoised adaptation recordings for the new
/// speaker (the data behind its conditioning embedding).
pub fn training_log_mels(cfg: &PipelineConfig, corpus: &Corpus, enhancer: &EnhancerModel) -> Result<Vec<(String, Vec<Grid>)>> {
    corpus
        .speakers
        .iter()
        .map(|s| {
            let grids = match s.role {
                Role::Pretrain => corpus
                    .split(Split::Pretrain)
                    .filter(|p| p.speaker_id == s.id)
                    .map(|p| Ok(log_grid(cfg, &p.clean_mel)))
                    .collect::<Result<Vec<_>>>()?,
                Role::New => corpus
                    .split(Split::Adapt)
                    .map(|p| Ok(denoise(cfg, enhancer, &noisy_of(p)?.mel)?.0))
                    .collect::<Result<Vec<_>>>()?,
            };
            Ok((s.id.clone(), grids))
        })
        .collect()
}
