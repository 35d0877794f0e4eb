//! STFT magnitude analysis, HTK mel filterbanks and log compression.

use std::f64::consts::PI;

use rustfft::{num_complex::Complex, FftPlanner};

use crate::dsp::{LogMelSpectrogram, MelSpectrogram, Spectrogram, Waveform};
use crate::error::{invalid, Error, Result};
use crate::grid::Grid;

/// Default floor for [`log_compress`].
pub const LOG_FLOOR: f64 = 1e-5;

/// Periodic Hann window.
pub fn hann(len: usize) -> Vec<f64> {
    (0..len)
        .map(|n| 0.5 - 0.5 * (2.0 * PI * n as f64 / len as f64).cos())
        .collect()
}

/// Number of frames produced for `len` samples without end padding.
pub fn frame_count(len: usize, frame_len: usize, frame_hop: usize) -> usize {
    if len < frame_len {
        0
    } else {
        1 + (len - frame_len) / frame_hop
    }
}

/// Hann-windowed magnitude STFT with `frame_len / 2 + 1` bins per frame.
pub fn stft(wave: &Waveform, frame_len: usize, frame_hop: usize) -> Result<Spectrogram> {
    if frame_hop == 0 || frame_len < frame_hop {
        return Err(invalid(format!(
            "need frame_len >= frame_hop >= 1, got {frame_len}/{frame_hop}"
        )));
    }
    let x = wave.samples();
    if x.len() < frame_len {
        return Err(invalid(format!(
            "waveform of {} samples is shorter than frame_len {frame_len}",
            x.len()
        )));
    }
    let frames = frame_count(x.len(), frame_len, frame_hop);
    let n_freq = frame_len / 2 + 1;
    let window = hann(frame_len);
    let fft = FftPlanner::<f64>::new().plan_fft_forward(frame_len);
    let mut buf = vec![Complex::new(0.0, 0.0); frame_len];
    let mut bins = Vec::with_capacity(frames * n_freq);
    for f in 0..frames {
        let start = f * frame_hop;
        for (i, b) in buf.iter_mut().enumerate() {
            *b = Complex::new(x[start + i] * window[i], 0.0);
        }
        fft.process(&mut buf);
        bins.extend(buf[..n_freq].iter().map(|c| c.norm()));
    }
    Ok(Spectrogram {
        bins: Grid::new(frames, n_freq, bins)?,
        frame_len,
        frame_hop,
        sample_rate: wave.sample_rate(),
    })
}

pub fn hz_to_mel(hz: f64) -> f64 {
    2595.0 * (1.0 + hz / 700.0).log10()
}

pub fn mel_to_hz(mel: f64) -> f64 {
    700.0 * (10f64.powf(mel / 2595.0) - 1.0)
}

/// `n_mels x n_freq` non-negative projection weights.
#[derive(Clone, Debug, PartialEq)]
pub struct MelFilterbank {
    weights: Grid,
    f_min: f64,
    f_max: f64,
}

impl MelFilterbank {
    /// Triangular filters equally spaced on the HTK mel scale, peak weight 1.
    pub fn htk(sample_rate: u32, frame_len: usize, n_mels: usize, f_min: f64, f_max: f64) -> Result<Self> {
        let nyquist = sample_rate as f64 / 2.0;
        if n_mels == 0 || !(0.0..f_max).contains(&f_min) || f_max > nyquist {
            return Err(invalid(format!(
                "bad filterbank request: {n_mels} mels over {f_min}..{f_max} Hz (nyquist {nyquist})"
            )));
        }
        let n_freq = frame_len / 2 + 1;
        let (lo, hi) = (hz_to_mel(f_min), hz_to_mel(f_max));
        let edges: Vec<f64> = (0..n_mels + 2)
            .map(|i| mel_to_hz(lo + (hi - lo) * i as f64 / (n_mels + 1) as f64))
            .collect();
        let bin_hz = sample_rate as f64 / frame_len as f64;
        let weights = Grid::from_fn(n_mels, n_freq, |m, k| {
            let f = k as f64 * bin_hz;
            let (left, center, right) = (edges[m], edges[m + 1], edges[m + 2]);
            let rise = (f - left) / (center - left);
            let fall = (right - f) / (right - center);
            rise.min(fall).max(0.0)
        });
        Self::from_weights(weights, f_min, f_max)
    }

    pub fn from_weights(weights: Grid, f_min: f64, f_max: f64) -> Result<Self> {
        if weights.data().iter().any(|&w| !(w >= 0.0) || !w.is_finite()) {
            return Err(invalid("filterbank weights must be finite and non-negative"));
        }
        if let Some(m) = (0..weights.rows()).find(|&m| weights.row(m).iter().all(|&w| w == 0.0)) {
            return Err(invalid(format!(
                "mel filter {m} has no nonzero weight; use fewer mels or a longer frame"
            )));
        }
        Ok(MelFilterbank {
            weights,
            f_min,
            f_max,
        })
    }

    pub fn weights(&self) -> &Grid {
        &self.weights
    }

    pub fn n_mels(&self) -> usize {
        self.weights.rows()
    }

    pub fn n_freq(&self) -> usize {
        self.weights.cols()
    }

    pub fn f_range(&self) -> (f64, f64) {
        (self.f_min, self.f_max)
    }
}

/// Projects the power spectrogram (squared magnitudes) onto the filterbank.
pub fn mel_project(spec: &Spectrogram, fb: &MelFilterbank) -> Result<MelSpectrogram> {
    let (frames, n_freq) = spec.bins.shape();
    if n_freq != fb.n_freq() {
        return Err(Error::Shape {
            op: "mel_project",
            lhs: spec.bins.shape(),
            rhs: fb.weights.shape(),
        });
    }
    let n_mels = fb.n_mels();
    let mut out = vec![0.0; frames * n_mels];
    for t in 0..frames {
        let power: Vec<f64> = spec.bins.row(t).iter().map(|m| m * m).collect();
        for m in 0..n_mels {
            out[t * n_mels + m] = power
                .iter()
                .zip(fb.weights.row(m))
                .map(|(p, w)| p * w)
                .sum();
        }
    }
    MelSpectrogram::new(Grid::new(frames, n_mels, out)?, spec.sample_rate, spec.frame_hop as u32)
}

/// `ln(max(bin, floor))` per bin.
pub fn log_compress(mel: &MelSpectrogram, floor: f64) -> Result<LogMelSpectrogram> {
    if !(floor > 0.0) {
        return Err(invalid(format!("log floor must be positive, got {floor}")));
    }
    Ok(LogMelSpectrogram {
        bins: mel.bins().map(|x| x.max(floor).ln()),
        sample_rate: mel.sample_rate(),
        frame_hop: mel.frame_hop(),
    })
}
