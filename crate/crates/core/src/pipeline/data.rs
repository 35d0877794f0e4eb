//! Corpus assembly and its on-disk layout.
//!
//! ```text
//! <corpus>/manifest.json
//! <corpus>/wav/<id>_clean.wav, <id>_noisy.wav
//! <corpus>/mel/<id>_clean.mels, <id>_noisy.mels, <id>_noise.mels, <id>_ideal.mask
//! ```
//!
//! `augment` accepts the same layout with only the manifest and the WAV files
//! present; the noisy WAV may be omitted when the manifest names a noise kind
//! and SNR, in which case synthetic noise is mixed in.

use std::path::{Path, PathBuf};

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::config::{derive_seed, stream, PipelineConfig};
use super::corpus::{
    default_speakers, random_texts, render_utterances, synthesize_noise, NoiseKind, NoisyVersion,
    SyntheticSpeakerSpec, UtterancePair, UtteranceRequest,
};
use crate::dsp::{
    mix_at_snr, read_grid_container, read_wav, snr_db, write_grid_container, write_wav, GridContainer,
    MelAnalyzer, MelSpectrogram, Waveform, MELS_MAGIC,
};
use crate::error::{invalid, Error, Result};
use crate::maskkit::{ideal_mask, mask_from_container, MaskKind};
use crate::ttscore::SymbolSequence;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Split {
    /// Multi-speaker pretraining data (clean plus noisy copy).
    Pretrain,
    /// Pretraining speakers, unseen texts, for the enhancer table.
    EnhancerTest,
    /// The new speaker's noisy adaptation data.
    Adapt,
    /// The new speaker's unseen texts: clean oracle plus a noisy reference.
    Heldout,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Role {
    Pretrain,
    New,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SpeakerRecord {
    pub id: String,
    pub role: Role,
    /// Present for synthetic speakers.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub spec: Option<SyntheticSpeakerSpec>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct UtteranceRecord {
    pub id: String,
    pub speaker: String,
    pub split: Split,
    /// Text symbol ids, without start/end markers.
    pub text: Vec<usize>,
    #[serde(default)]
    pub noise_kind: Option<NoiseKind>,
    #[serde(default)]
    pub snr_db: Option<f64>,
    #[serde(default)]
    pub measured_snr_db: Option<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Manifest {
    pub sample_rate: u32,
    pub speakers: Vec<SpeakerRecord>,
    pub utterances: Vec<UtteranceRecord>,
}

/// One utterance with its split.
#[derive(Clone, Debug, PartialEq)]
pub struct CorpusEntry {
    pub split: Split,
    pub pair: UtterancePair,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Corpus {
    pub speakers: Vec<SpeakerRecord>,
    pub entries: Vec<CorpusEntry>,
}

impl Corpus {
    pub fn split(&self, split: Split) -> impl Iterator<Item = &UtterancePair> {
        self.entries.iter().filter(move |e| e.split == split).map(|e| &e.pair)
    }

    pub fn speakers_with(&self, role: Role) -> impl Iterator<Item = &SpeakerRecord> {
        self.speakers.iter().filter(move |s| s.role == role)
    }

    /// The single speaker with role `New`.
    pub fn new_speaker(&self) -> Result<&SpeakerRecord> {
        let mut it = self.speakers_with(Role::New);
        match (it.next(), it.next()) {
            (Some(s), None) => Ok(s),
            _ => Err(invalid("corpus must contain exactly one new speaker")),
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.speakers_with(Role::Pretrain).count() < 2 {
            return Err(invalid("corpus needs at least 2 pretraining speakers"));
        }
        let new = self.new_speaker()?;
        let mut ids = std::collections::BTreeSet::new();
        for s in &self.speakers {
            if !ids.insert(s.id.as_str()) {
                return Err(invalid(format!("duplicate speaker id {}", s.id)));
            }
        }
        for e in &self.entries {
            if !ids.contains(e.pair.speaker_id.as_str()) {
                return Err(invalid(format!("utterance {} names unknown speaker", e.pair.id)));
            }
            let is_new = e.pair.speaker_id == new.id;
            if is_new != matches!(e.split, Split::Adapt | Split::Heldout) {
                return Err(invalid(format!("utterance {} is in the wrong split for its speaker", e.pair.id)));
            }
            if e.split != Split::Pretrain && e.pair.noisy.is_none() {
                return Err(invalid(format!("utterance {} lacks its noisy version", e.pair.id)));
            }
        }
        Ok(())
    }

    pub fn manifest(&self, sample_rate: u32) -> Manifest {
        Manifest {
            sample_rate,
            speakers: self.speakers.clone(),
            utterances: self
                .entries
                .iter()
                .map(|e| {
                    let p = &e.pair;
                    let ids = p.symbols.ids();
                    UtteranceRecord {
                        id: p.id.clone(),
                        speaker: p.speaker_id.clone(),
                        split: e.split,
                        text: ids[1..ids.len() - 1].to_vec(),
                        noise_kind: p.noisy.as_ref().map(|n| n.kind),
                        snr_db: p.noisy.as_ref().map(|n| n.snr_db),
                        measured_snr_db: p.noisy.as_ref().map(|n| n.measured_snr_db),
                    }
                })
                .collect(),
        }
    }
}

/// Renders the synthetic corpus implied by `cfg` and `seed`.
///
/// The last of `pretrain_speakers + 1` seeded voices is the new speaker.
/// Texts are drawn once and partitioned, so held-out texts never occur in
/// training data.
pub fn generate_corpus(cfg: &PipelineConfig, seed: u64) -> Result<Corpus> {
    cfg.validate()?;
    let p = &cfg.pipeline;
    let analyzer = MelAnalyzer::new(cfg.dsp.clone())?;
    let specs = default_speakers(p.pretrain_speakers + 1, derive_seed(seed, stream::SPEAKERS));
    let new_idx = p.pretrain_speakers;
    let total = p.texts_per_speaker + p.enhancer_test_texts + p.adapt_utterances + p.heldout_texts;
    let texts = random_texts(total, p.min_symbols, p.max_symbols, derive_seed(seed, stream::TEXTS));
    let (pre_t, rest) = texts.split_at(p.texts_per_speaker);
    let (enh_t, rest) = rest.split_at(p.enhancer_test_texts);
    let (ad_t, held_t) = rest.split_at(p.adapt_utterances);

    let render_seed = derive_seed(seed, stream::RENDER);
    let kinds = &p.noise_kinds;
    let mut requests = Vec::new();
    let mut splits = Vec::new();
    let mut push = |split: Split, speaker: usize, text: &[usize], kind: NoiseKind, snr: f64| {
        let k = requests.len() as u64;
        requests.push(UtteranceRequest {
            id: format!("{}_{k:04}", specs[speaker].id),
            speaker,
            text: text.to_vec(),
            noise: Some((kind, snr)),
            seed: derive_seed(render_seed, k),
        });
        splits.push(split);
    };
    for s in 0..p.pretrain_speakers {
        for (t, text) in pre_t.iter().enumerate() {
            let snr = p.snr_levels[(t * 7 + s) % p.snr_levels.len()];
            push(Split::Pretrain, s, text, kinds[(t + s) % kinds.len()], snr);
        }
        for (t, text) in enh_t.iter().enumerate() {
            for (l, &snr) in p.snr_levels.iter().enumerate() {
                push(Split::EnhancerTest, s, text, kinds[(t + l + s) % kinds.len()], snr);
            }
        }
    }
    for (t, text) in ad_t.iter().enumerate() {
        let snr = p.adapt_snr_levels[t % p.adapt_snr_levels.len()];
        push(Split::Adapt, new_idx, text, kinds[t % kinds.len()], snr);
    }
    for (t, text) in held_t.iter().enumerate() {
        let snr = p.adapt_snr_levels[t % p.adapt_snr_levels.len()];
        push(Split::Heldout, new_idx, text, kinds[(t + 1) % kinds.len()], snr);
    }
    let pairs = render_utterances(&specs, &requests, &analyzer)?;
    let speakers = specs
        .iter()
        .enumerate()
        .map(|(i, s)| SpeakerRecord {
            id: s.id.clone(),
            role: if i == new_idx { Role::New } else { Role::Pretrain },
            spec: Some(s.clone()),
        })
        .collect();
    let corpus = Corpus {
        speakers,
        entries: splits
            .into_iter()
            .zip(pairs)
            .map(|(split, pair)| CorpusEntry { split, pair })
            .collect(),
    };
    corpus.validate()?;
    Ok(corpus)
}

fn wav_path(dir: &Path, id: &str, kind: &str) -> PathBuf {
    dir.join("wav").join(format!("{id}_{kind}.wav"))
}

fn grid_path(dir: &Path, id: &str, kind: &str, ext: &str) -> PathBuf {
    dir.join("mel").join(format!("{id}_{kind}.{ext}"))
}

fn mels_container(m: &MelSpectrogram) -> GridContainer {
    GridContainer {
        magic: MELS_MAGIC,
        grid: m.bins().clone(),
        sample_rate: m.sample_rate(),
        frame_hop: m.frame_hop(),
    }
}

/// Writes the manifest, WAV files and feature containers.
pub fn write_corpus(dir: impl AsRef<Path>, corpus: &Corpus, sample_rate: u32) -> Result<()> {
    let dir = dir.as_ref();
    std::fs::create_dir_all(dir.join("wav"))?;
    std::fs::create_dir_all(dir.join("mel"))?;
    let manifest = corpus.manifest(sample_rate);
    std::fs::write(dir.join("manifest.json"), serde_json::to_string_pretty(&manifest)?)?;
    for e in &corpus.entries {
        let p = &e.pair;
        write_wav(wav_path(dir, &p.id, "clean"), &p.clean)?;
        write_grid_container(grid_path(dir, &p.id, "clean", "mels"), &mels_container(&p.clean_mel))?;
        if let Some(n) = &p.noisy {
            write_wav(wav_path(dir, &p.id, "noisy"), &n.wave)?;
            write_grid_container(grid_path(dir, &p.id, "noisy", "mels"), &mels_container(&n.mel))?;
            write_grid_container(grid_path(dir, &p.id, "noise", "mels"), &mels_container(&n.noise_mel))?;
            write_grid_container(
                grid_path(dir, &p.id, "ideal", "mask"),
                &n.ideal_mask.to_container(n.mel.sample_rate(), n.mel.frame_hop()),
            )?;
        }
    }
    Ok(())
}

fn read_manifest(dir: &Path) -> Result<Manifest> {
    let text = std::fs::read_to_string(dir.join("manifest.json"))
        .map_err(|e| Error::Format(format!("cannot read {}: {e}", dir.join("manifest.json").display())))?;
    Ok(serde_json::from_str(&text)?)
}

fn read_mel(path: &Path) -> Result<MelSpectrogram> {
    let c = read_grid_container(path)?;
    if c.magic != MELS_MAGIC {
        return Err(Error::Format(format!("{} is not a MELS container", path.display())));
    }
    MelSpectrogram::new(c.grid, c.sample_rate, c.frame_hop)
}

/// Loads a corpus written by [`write_corpus`].
pub fn read_corpus(dir: impl AsRef<Path>) -> Result<Corpus> {
    let dir = dir.as_ref();
    let manifest = read_manifest(dir)?;
    let mut entries = Vec::with_capacity(manifest.utterances.len());
    for u in &manifest.utterances {
        let clean_mel = read_mel(&grid_path(dir, &u.id, "clean", "mels"))?;
        let noisy = match (u.noise_kind, u.snr_db) {
            (Some(kind), Some(snr)) => {
                let mel = read_mel(&grid_path(dir, &u.id, "noisy", "mels"))?;
                let noise_mel = read_mel(&grid_path(dir, &u.id, "noise", "mels"))?;
                let mask = read_grid_container(grid_path(dir, &u.id, "ideal", "mask"))?;
                Some(NoisyVersion {
                    snr_db: snr,
                    kind,
                    wave: read_wav(wav_path(dir, &u.id, "noisy"))?,
                    mel,
                    noise_mel,
                    ideal_mask: mask_from_container(&mask, MaskKind::Ideal)?,
                    measured_snr_db: u.measured_snr_db.unwrap_or(snr),
                })
            }
            _ => None,
        };
        entries.push(CorpusEntry {
            split: u.split,
            pair: UtterancePair {
                id: u.id.clone(),
                speaker_id: u.speaker.clone(),
                symbols: SymbolSequence::from_text(&u.text)?,
                clean: read_wav(wav_path(dir, &u.id, "clean"))?,
                clean_mel,
                noisy,
            },
        });
    }
    let corpus = Corpus {
        speakers: manifest.speakers,
        entries,
    };
    corpus.validate()?;
    Ok(corpus)
}

/// WAV ingestion: builds a corpus from a directory holding `manifest.json`
/// and `wav/<id>_clean.wav` (plus `wav/<id>_noisy.wav` when available).
/// Missing noisy files are synthesized from the manifest's noise kind and SNR;
/// the noise of a supplied pair is taken as `noisy - clean`.
pub fn augment_corpus(input: impl AsRef<Path>, analyzer: &MelAnalyzer, seed: u64) -> Result<Corpus> {
    let dir = input.as_ref();
    let manifest = read_manifest(dir)?;
    if manifest.sample_rate != analyzer.config().sample_rate {
        return Err(invalid(format!(
            "manifest sample rate {} differs from the dsp config",
            manifest.sample_rate
        )));
    }
    let mut entries = Vec::with_capacity(manifest.utterances.len());
    for (k, u) in manifest.utterances.iter().enumerate() {
        let clean = read_wav(wav_path(dir, &u.id, "clean"))?;
        let clean_mel = analyzer.mel(&clean)?;
        let noisy_file = wav_path(dir, &u.id, "noisy");
        let noise_wave = if noisy_file.exists() {
            let noisy = read_wav(&noisy_file)?;
            if noisy.len() != clean.len() || noisy.sample_rate() != clean.sample_rate() {
                return Err(invalid(format!("{}: clean and noisy WAVs are not aligned", u.id)));
            }
            let noise: Vec<f64> = noisy.samples().iter().zip(clean.samples()).map(|(n, c)| n - c).collect();
            let snr = u.snr_db.unwrap_or_else(|| snr_db(clean.samples(), &noise));
            Some((noisy, Waveform::new(noise, clean.sample_rate())?, snr, u.noise_kind))
        } else if let (Some(kind), Some(snr)) = (u.noise_kind, u.snr_db) {
            let s = derive_seed(seed, k as u64);
            let noise = synthesize_noise(kind, clean.len() + 4000, clean.sample_rate(), s)?;
            let mut rng = ChaCha8Rng::seed_from_u64(s ^ 0xabcdef);
            let mix = mix_at_snr(&clean, &noise, snr, &mut rng)?;
            Some((mix.noisy, mix.scaled_noise, snr, Some(kind)))
        } else {
            None
        };
        let noisy = match noise_wave {
            Some((wave, noise, snr, kind)) => {
                let mel = analyzer.mel(&wave)?;
                let noise_mel = analyzer.mel(&noise)?;
                Some(NoisyVersion {
                    snr_db: snr,
                    kind: kind.unwrap_or(NoiseKind::FilteredWhite),
                    measured_snr_db: snr_db(clean.samples(), noise.samples()),
                    ideal_mask: ideal_mask(&clean_mel, &noise_mel)?,
                    wave,
                    mel,
                    noise_mel,
                })
            }
            None => None,
        };
        entries.push(CorpusEntry {
            split: u.split,
            pair: UtterancePair {
                id: u.id.clone(),
                speaker_id: u.speaker.clone(),
                symbols: SymbolSequence::from_text(&u.text)?,
                clean,
                clean_mel,
                noisy,
            },
        });
    }
    let corpus = Corpus {
        speakers: manifest.speakers,
        entries,
    };
    corpus.validate()?;
    Ok(corpus)
}
