//! Waveform I/O, spectral analysis, mel projection, SNR-controlled mixing and
//! the SI-SDR metric on mel grids.

mod container;
mod metrics;
mod mix;
mod spectral;
mod wav;

use serde::{Deserialize, Serialize};

pub use container::{
    decode_grid_container, encode_grid_container, read_grid_container, write_grid_container,
    GridContainer, MASK_MAGIC, MELS_MAGIC,
};
pub use metrics::{si_sdr, si_sdr_mel, SI_SDR_CLAMP_DB};
pub use mix::{mix_at_snr, mix_at_snr_with_offset, rms, snr_db, Mixture};
pub use spectral::{
    frame_count, hann, hz_to_mel, log_compress, mel_project, mel_to_hz, stft, MelFilterbank,
    LOG_FLOOR,
};
pub use wav::{decode_wav, encode_wav, read_wav, write_wav};

use crate::error::{invalid, Result};
use crate::grid::Grid;

/// Mono audio. Amplitudes are nominally in [-1, 1]; values outside that
/// range are kept and only clamped when written to 16-bit PCM.
#[derive(Clone, Debug, PartialEq)]
pub struct Waveform {
    samples: Vec<f64>,
    sample_rate: u32,
}

impl Waveform {
    pub fn new(samples: Vec<f64>, sample_rate: u32) -> Result<Self> {
        if sample_rate == 0 {
            return Err(invalid("sample rate must be positive"));
        }
        if samples.is_empty() {
            return Err(invalid("waveform must contain at least one sample"));
        }
        if samples.iter().any(|s| !s.is_finite()) {
            return Err(invalid("waveform contains non-finite samples"));
        }
        Ok(Waveform {
            samples,
            sample_rate,
        })
    }

    pub fn samples(&self) -> &[f64] {
        &self.samples
    }

    pub fn sample_rate(&self) -> u32 {
        self.sample_rate
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }
}

/// Magnitude STFT, `frames x (frame_len / 2 + 1)`.
#[derive(Clone, Debug, PartialEq)]
pub struct Spectrogram {
    bins: Grid,
    frame_len: usize,
    frame_hop: usize,
    sample_rate: u32,
}


impl Spectrogram {
    pub fn bins(&self) -> &Grid {
        &self.bins
    }

    pub fn frame_len(&self) -> usize {
        self.frame_len
    }

    pub fn frame_hop(&self) -> usize {
        self.frame_hop
    }

    pub fn sample_rate(&self) -> u32 {
        self.sample_rate
    }

    /// Builds a spectrogram from explicit magnitudes.
    pub fn from_magnitudes(bins: Grid, frame_len: usize, frame_hop: usize, sample_rate: u32) -> Result<Self> {
        if bins.rows() == 0 || bins.data().iter().any(|&b| !(b >= 0.0)) {
            return Err(invalid("spectrogram needs >= 1 frame of non-negative magnitudes"));
        }
        Ok(Spectrogram {
            bins,
            frame_len,
            frame_hop,
            sample_rate,
        })
    }
}

/// Power mel spectrogram, `frames x n_mels`, all bins non-negative.
#[derive(Clone, Debug, PartialEq)]
pub struct MelSpectrogram {
    bins: Grid,
    sample_rate: u32,
    frame_hop: u32,
}

impl MelSpectrogram {
    pub fn new(bins: Grid, sample_rate: u32, frame_hop: u32) -> Result<Self> {
        if bins.rows() == 0 || bins.cols() == 0 {
            return Err(invalid("mel spectrogram needs >= 1 frame and >= 1 channel"));
        }
        if let Some(i) = bins.data().iter().position(|&b| !(b >= 0.0) || !b.is_finite()) {
            return Err(invalid(format!("mel bin {i} is negative or non-finite")));
        }
        Ok(MelSpectrogram {
            bins,
            sample_rate,
            frame_hop,
        })
    }

    pub fn bins(&self) -> &Grid {
        &self.bins
    }

    pub fn frames(&self) -> usize {
        self.bins.rows()
    }

    pub fn n_mels(&self) -> usize {
        self.bins.cols()
    }

    pub fn sample_rate(&self) -> u32 {
        self.sample_rate
    }

    pub fn frame_hop(&self) -> u32 {
        self.frame_hop
    }

    pub fn with_bins(&self, bins: Grid) -> Result<Self> {
        MelSpectrogram::new(bins, self.sample_rate, self.frame_hop)
    }
}

/// Natural-log mel spectrogram.
#[derive(Clone, Debug, PartialEq)]
pub struct LogMelSpectrogram {
    bins: Grid,
    sample_rate: u32,
    frame_hop: u32,
}

impl LogMelSpectrogram {
    pub fn new(bins: Grid, sample_rate: u32, frame_hop: u32) -> Result<Self> {
        if bins.data().iter().any(|b| !b.is_finite()) {
            return Err(invalid("log-mel contains non-finite values"));
        }
        Ok(LogMelSpectrogram {
            bins,
            sample_rate,
            frame_hop,
        })
    }

    pub fn bins(&self) -> &Grid {
        &self.bins
    }

    pub fn frames(&self) -> usize {
        self.bins.rows()
    }

    pub fn n_mels(&self) -> usize {
        self.bins.cols()
    }

    pub fn sample_rate(&self) -> u32 {
        self.sample_rate
    }

    pub fn frame_hop(&self) -> u32 {
        self.frame_hop
    }

    pub fn to_linear(&self) -> MelSpectrogram {
        MelSpectrogram {
            bins: self.bins.map(f64::exp),
            sample_rate: self.sample_rate,
            frame_hop: self.frame_hop,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DspConfig {
    pub sample_rate: u32,
    pub frame_len: usize,
    pub frame_hop: usize,
    pub n_mels: usize,
    pub f_min: f64,
    pub f_max: f64,
    pub log_floor: f64,
}

impl Default for DspConfig {
    fn default() -> Self {
        DspConfig {
            sample_rate: 16000,
            frame_len: 512,
            frame_hop: 128,
            n_mels: 40,
            f_min: 0.0,
            f_max: 8000.0,
            log_floor: LOG_FLOOR,
        }
    }
}

/// STFT + mel projection with a fixed configuration.
#[derive(Clone, Debug)]
pub struct MelAnalyzer {
    config: DspConfig,
    filterbank: MelFilterbank,
}

impl MelAnalyzer {
    pub fn new(config: DspConfig) -> Result<Self> {
        let filterbank = MelFilterbank::htk(
            config.sample_rate,
            config.frame_len,
            config.n_mels,
            config.f_min,
            config.f_max,
        )?;
        Ok(MelAnalyzer { config, filterbank })
    }

    pub fn config(&self) -> &DspConfig {
        &self.config
    }

    pub fn filterbank(&self) -> &MelFilterbank {
        &self.filterbank
    }

    pub fn mel(&self, wave: &Waveform) -> Result<MelSpectrogram> {
        if wave.sample_rate() != self.config.sample_rate {
            return Err(invalid(format!(
                "waveform at {} Hz, analyzer configured for {} Hz (no resampling)",
                wave.sample_rate(),
                self.config.sample_rate
            )));
        }
        let spec = stft(wave, self.config.frame_len, self.config.frame_hop)?;
        mel_project(&spec, &self.filterbank)
    }

    pub fn log_mel(&self, mel: &MelSpectrogram) -> Result<LogMelSpectrogram> {
        log_compress(mel, self.config.log_floor)
    }

    /// Sample count that yields exactly `frames` STFT frames.
    pub fn samples_for_frames(&self, frames: usize) -> usize {
        self.config.frame_len + (frames.max(1) - 1) * self.config.frame_hop
    }
}
