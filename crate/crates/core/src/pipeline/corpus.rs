//! Seeded synthetic speech and noise: harmonic "voices" whose pitch and
//! formants follow the symbol sequence, mixed with synthetic interference at
//! controlled SNRs.

use std::collections::BTreeSet;
use std::f64::consts::PI;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::dsp::{mix_at_snr, snr_db, MelAnalyzer, MelSpectrogram, Waveform};
use crate::error::{invalid, Result};
use crate::maskkit::{ideal_mask, DenoiseMask};
use crate::ttscore::{SymbolSequence, END, START};

/// Voice parameters of one synthetic speaker.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SyntheticSpeakerSpec {
    pub id: String,
    pub f0_base: f64,
    /// Spectral slope of the harmonic amplitudes in dB per octave.
    pub spectral_tilt: f64,
    pub vibrato_rate: f64,
    /// Vibrato depth in cents.
    pub vibrato_depth: f64,
    pub seed: u64,
}

impl SyntheticSpeakerSpec {
    pub fn validate(&self) -> Result<()> {
        if !(80.0..=400.0).contains(&self.f0_base) {
            return Err(invalid(format!("speaker {} f0 {} outside [80, 400] Hz", self.id, self.f0_base)));
        }
        if !self.spectral_tilt.is_finite() || !(self.vibrato_rate >= 0.0) || !(self.vibrato_depth >= 0.0) {
            return Err(invalid(format!("speaker {} has invalid timbre parameters", self.id)));
        }
        Ok(())
    }

    /// Vocal-tract scaling of the formant frequencies, fixed by the seed.
    pub fn formant_scale(&self) -> f64 {
        let mut rng = ChaCha8Rng::seed_from_u64(self.seed ^ 0x5eed_f0f0);
        rng.random_range(0.85..1.15)
    }
}

/// A spread of distinct speakers: `count` voices with seeded timbres.
pub fn default_speakers(count: usize, seed: u64) -> Vec<SyntheticSpeakerSpec> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..count)
        .map(|i| {
            let span = if count > 1 { i as f64 / (count - 1) as f64 } else { 0.5 };
            SyntheticSpeakerSpec {
                id: format!("spk{i}"),
                f0_base: 100.0 + 180.0 * span + rng.random_range(-8.0..8.0),
                spectral_tilt: -2.0 - 4.0 * ((i * 7 % count.max(1)) as f64 / count.max(1) as f64),
                vibrato_rate: rng.random_range(4.0..6.5),
                vibrato_depth: rng.random_range(10.0..40.0),
                seed: rng.random(),
            }
        })
        .collect()
}

/// Frames occupied by each symbol: silence markers 2, text symbols 4/6/8.
pub fn symbol_frames(id: usize) -> usize {
    if id == START || id == END {
        2
    } else {
        [4, 6, 8][id % 3]
    }
}

pub fn utterance_frames(symbols: &SymbolSequence) -> usize {
    symbols.ids().iter().map(|&s| symbol_frames(s)).sum()
}

struct SymbolVoice {
    semitones: f64,
    formants: [(f64, f64, f64); 4],
    level: f64,
}

fn symbol_voice(id: usize) -> SymbolVoice {
    SymbolVoice {
        semitones: [0.0, 2.0, 4.0, -2.0, 5.0][id % 5],
        formants: [
            (300.0 + 70.0 * (id % 8) as f64, 90.0, 3.0),
            (900.0 + 160.0 * ((id * 5) % 11) as f64, 150.0, 2.0),
            (2500.0, 300.0, 1.5),
            (3600.0 + 100.0 * (id % 4) as f64, 500.0, 1.5),
        ],
        level: 0.6 + 0.1 * (id % 5) as f64,
    }
}

fn harmonic_gain(f: f64, tilt_db_oct: f64, formant_scale: f64, voice: &SymbolVoice) -> f64 {
    let tilt = 10f64.powf(tilt_db_oct * (f / 100.0).max(1.0).log2() / 20.0);
    let env: f64 = 0.15
        + voice
            .formants
            .iter()
            .map(|&(fc, bw, a)| {
                let d = (f - fc * formant_scale) / bw;
                a / (1.0 + d * d)
            })
            .sum::<f64>();
    tilt * env
}

pub const CLEAN_RMS: f64 = 0.1;
const DITHER: f64 = 1e-4;

/// Renders the clean waveform of `symbols` for `spec`. The sample count
/// yields exactly [`utterance_frames`] STFT frames.
pub fn synthesize_clean(
    spec: &SyntheticSpeakerSpec,
    symbols: &SymbolSequence,
    analyzer: &MelAnalyzer,
    seed: u64,
) -> Result<Waveform> {
    spec.validate()?;
    let cfg = analyzer.config();
    let sr = cfg.sample_rate as f64;
    let hop = cfg.frame_hop;
    let frames = utterance_frames(symbols);
    let total = analyzer.samples_for_frames(frames);
    let lead = cfg.frame_len / 2 - hop / 2;
    let fscale = spec.formant_scale();
    let nyquist_guard = 0.95 * sr / 2.0;

    let mut samples = vec![0.0; total];
    let mut phase = 0.0f64;
    let mut frame_start = 0usize;
    let ids = symbols.ids();
    for (k, &id) in ids.iter().enumerate() {
        let n = symbol_frames(id);
        let begin = if k == 0 { 0 } else { lead + frame_start * hop };
        let end = if k + 1 == ids.len() { total } else { lead + (frame_start + n) * hop };
        frame_start += n;
        if id == START || id == END {
            // Silence, but keep the oscillator phase continuous.
            continue;
        }
        let voice = symbol_voice(id);
        let f0 = spec.f0_base * 2f64.powf(voice.semitones / 12.0);
        let n_harm = (nyquist_guard / f0).floor() as usize;
        let gains: Vec<f64> = (1..=n_harm)
            .map(|h| voice.level * harmonic_gain(h as f64 * f0, spec.spectral_tilt, fscale, &voice))
            .collect();
        for (i, s) in samples[begin..end].iter_mut().enumerate() {
            let t = (begin + i) as f64 / sr;
            let cents = spec.vibrato_depth * (2.0 * PI * spec.vibrato_rate * t).sin();
            let f = f0 * 2f64.powf(cents / 1200.0);
            phase = (phase + 2.0 * PI * f / sr) % (2.0 * PI);
            let fade = ((i.min(end - begin - 1 - i) as f64) / 64.0).min(1.0);
            let mut acc = 0.0;
            for (h, g) in gains.iter().enumerate() {
                acc += g * ((h + 1) as f64 * phase).sin();
            }
            *s = fade * acc;
        }
    }
    let level = crate::dsp::rms(&samples);
    if level == 0.0 {
        return Err(invalid("utterance has no voiced symbols"));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    for s in samples.iter_mut() {
        let z: f64 = StandardNormal.sample(&mut rng);
        *s = *s * CLEAN_RMS / level + DITHER * z;
    }
    Waveform::new(samples, cfg.sample_rate)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum NoiseKind {
    FilteredWhite,
    Tonal,
    Chirp,
}

impl NoiseKind {
    pub const ALL: [NoiseKind; 3] = [NoiseKind::FilteredWhite, NoiseKind::Tonal, NoiseKind::Chirp];
}

/// Seeded interference of `len` samples with unit-order amplitude.
pub fn synthesize_noise(kind: NoiseKind, len: usize, sample_rate: u32, seed: u64) -> Result<Waveform> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let sr = sample_rate as f64;
    let samples: Vec<f64> = match kind {
        NoiseKind::FilteredWhite => {
            // Two-pole resonator over white noise, plus a broadband floor.
            let fc: f64 = rng.random_range(300.0..3000.0);
            let r: f64 = rng.random_range(0.85..0.97);
            let (a1, a2) = (2.0 * r * (2.0 * PI * fc / sr).cos(), -r * r);
            let (mut y1, mut y2) = (0.0, 0.0);
            (0..len)
                .map(|_| {
                    let x: f64 = StandardNormal.sample(&mut rng);
                    let y = (1.0 - r) * x + a1 * y1 + a2 * y2;
                    y2 = y1;
                    y1 = y;
                    let floor: f64 = StandardNormal.sample(&mut rng);
                    y + 0.05 * floor
                })
                .collect()
        }
        NoiseKind::Tonal => {
            let tones: Vec<(f64, f64, f64)> = (0..3)
                .map(|_| {
                    (
                        rng.random_range(250.0..4000.0),
                        rng.random_range(0.3..1.0),
                        rng.random_range(0.0..2.0 * PI),
                    )
                })
                .collect();
            let mut out = Vec::with_capacity(len);
            for i in 0..len {
                let t = i as f64 / sr;
                let floor: f64 = StandardNormal.sample(&mut rng);
                out.push(
                    tones.iter().map(|&(f, a, p)| a * (2.0 * PI * f * t + p).sin()).sum::<f64>()
                        + 0.02 * floor,
                );
            }
            out
        }
        NoiseKind::Chirp => {
            let f_a: f64 = rng.random_range(200.0..1500.0);
            let f_b: f64 = rng.random_range(2000.0..6000.0);
            let dur = len as f64 / sr;
            let mut out = Vec::with_capacity(len);
            for i in 0..len {
                let t = i as f64 / sr;
                let ph = 2.0 * PI * (f_a * t + 0.5 * (f_b - f_a) / dur * t * t);
                let floor: f64 = StandardNormal.sample(&mut rng);
                out.push(ph.sin() + 0.02 * floor);
            }
            out
        }
    };
    Waveform::new(samples, sample_rate)
}

/// The spectral side of one noisy utterance.
#[derive(Clone, Debug, PartialEq)]
pub struct NoisyVersion {
    pub snr_db: f64,
    pub kind: NoiseKind,
    pub wave: Waveform,
    pub mel: MelSpectrogram,
    pub noise_mel: MelSpectrogram,
    pub ideal_mask: DenoiseMask,
    /// SNR re-measured from the mixed waveforms.
    pub measured_snr_db: f64,
}

/// One synthetic training record.
#[derive(Clone, Debug, PartialEq)]
pub struct UtterancePair {
    pub id: String,
    pub speaker_id: String,
    pub symbols: SymbolSequence,
    pub clean: Waveform,
    pub clean_mel: MelSpectrogram,
    pub noisy: Option<NoisyVersion>,
}

/// What to render for one utterance.
#[derive(Clone, Debug, PartialEq)]
pub struct UtteranceRequest {
    pub id: String,
    pub speaker: usize,
    pub text: Vec<usize>,
    /// `None` renders only the clean side.
    pub noise: Option<(NoiseKind, f64)>,
    pub seed: u64,
}

/// Renders every request; output order follows `requests`.
pub fn render_utterances(
    specs: &[SyntheticSpeakerSpec],
    requests: &[UtteranceRequest],
    analyzer: &MelAnalyzer,
) -> Result<Vec<UtterancePair>> {
    let mut ids = BTreeSet::new();
    for s in specs {
        s.validate()?;
        if !ids.insert(&s.id) {
            return Err(invalid(format!("duplicate speaker id {}", s.id)));
        }
    }
    requests
        .par_iter()
        .map(|req| render_one(specs, req, analyzer))
        .collect()
}

fn render_one(specs: &[SyntheticSpeakerSpec], req: &UtteranceRequest, analyzer: &MelAnalyzer) -> Result<UtterancePair> {
    let spec = specs
        .get(req.speaker)
        .ok_or_else(|| invalid(format!("request {} names unknown speaker {}", req.id, req.speaker)))?;
    let symbols = SymbolSequence::from_text(&req.text)?;
    let clean = synthesize_clean(spec, &symbols, analyzer, req.seed)?;
    let clean_mel = analyzer.mel(&clean)?;
    let noisy = match req.noise {
        None => None,
        Some((kind, snr)) => {
            let noise_seed = req.seed.wrapping_mul(0x9e37_79b9_7f4a_7c15).wrapping_add(1);
            let noise = synthesize_noise(kind, clean.len() + 4000, clean.sample_rate(), noise_seed)?;
            let mut rng = ChaCha8Rng::seed_from_u64(noise_seed ^ 0xabcdef);
            let mix = mix_at_snr(&clean, &noise, snr, &mut rng)?;
            let mel = analyzer.mel(&mix.noisy)?;
            let noise_mel = analyzer.mel(&mix.scaled_noise)?;
            let ideal_mask = ideal_mask(&clean_mel, &noise_mel)?;
            Some(NoisyVersion {
                snr_db: snr,
                kind,
                measured_snr_db: snr_db(clean.samples(), mix.scaled_noise.samples()),
                wave: mix.noisy,
                mel,
                noise_mel,
                ideal_mask,
            })
        }
    };
    Ok(UtterancePair {
        id: req.id.clone(),
        speaker_id: spec.id.clone(),
        symbols,
        clean,
        clean_mel,
        noisy,
    })
}

/// Seeded random texts of `min_len..=max_len` text symbols, all distinct.
pub fn random_texts(count: usize, min_len: usize, max_len: usize, seed: u64) -> Vec<Vec<usize>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut seen = BTreeSet::new();
    let mut out = Vec::with_capacity(count);
    while out.len() < count {
        let len = rng.random_range(min_len..=max_len);
        let text: Vec<usize> = (0..len)
            .map(|_| rng.random_range(0..crate::ttscore::N_TEXT_SYMBOLS))
            .collect();
        if seen.insert(text.clone()) {
            out.push(text);
        }
    }
    out
}
