use rand::Rng;

use crate::dsp::Waveform;
use crate::error::{invalid, Error, Result};

pub fn rms(x: &[f64]) -> f64 {
    (x.iter().map(|v| v * v).sum::<f64>() / x.len().max(1) as f64).sqrt()
}

/// `10 log10(|signal|^2 / |noise|^2)`.
pub fn snr_db(signal: &[f64], noise: &[f64]) -> f64 {
    let s: f64 = signal.iter().map(|v| v * v).sum();
    let n: f64 = noise.iter().map(|v| v * v).sum();
    10.0 * (s / n).log10()
}

/// Result of [`mix_at_snr`].
#[derive(Clone, Debug, PartialEq)]
pub struct Mixture {
    pub noisy: Waveform,
    /// The noise exactly as added: cropped and multiplied by `gain`.
    pub scaled_noise: Waveform,
    pub gain: f64,
    pub offset: usize,
}

/// Mixes `noise`, cropped at a random offset drawn from `rng`, into `clean`
/// at `snr_db`.
pub fn mix_at_snr<R: Rng + ?Sized>(
    clean: &Waveform,
    noise: &Waveform,
    snr_db: f64,
    rng: &mut R,
) -> Result<Mixture> {
    if noise.len() < clean.len() {
        return Err(invalid(format!(
            "noise ({} samples) shorter than clean ({} samples)",
            noise.len(),
            clean.len()
        )));
    }
    let offset = rng.random_range(0..=noise.len() - clean.len());
    mix_at_snr_with_offset(clean, noise, snr_db, offset)
}

/// Deterministic core of [`mix_at_snr`]:
/// `g = rms(clean) / (rms(crop) 10^(snr/20))`, `noisy = clean + g crop`.
pub fn mix_at_snr_with_offset(
    clean: &Waveform,
    noise: &Waveform,
    snr_db: f64,
    offset: usize,
) -> Result<Mixture> {
    if clean.sample_rate() != noise.sample_rate() {
        return Err(invalid("clean and noise sample rates differ"));
    }
    if !snr_db.is_finite() {
        return Err(invalid("snr must be finite"));
    }
    if offset + clean.len() > noise.len() {
        return Err(invalid("noise crop runs past the end of the noise"));
    }
    let crop = &noise.samples()[offset..offset + clean.len()];
    let (rc, rn) = (rms(clean.samples()), rms(crop));
    if rc == 0.0 {
        return Err(Error::Degenerate("clean signal is silent".into()));
    }
    if rn == 0.0 {
        return Err(Error::Degenerate("noise crop is silent".into()));
    }
    let gain = rc / (rn * 10f64.powf(snr_db / 20.0));
    let scaled: Vec<f64> = crop.iter().map(|n| gain * n).collect();
    let noisy: Vec<f64> = clean.samples().iter().zip(&scaled).map(|(c, n)| c + n).collect();
    Ok(Mixture {
        noisy: Waveform::new(noisy, clean.sample_rate())?,
        scaled_noise: Waveform::new(scaled, clean.sample_rate())?,
        gain,
        offset,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn wave(v: Vec<f64>) -> Waveform {
        Waveform::new(v, 16000).unwrap()
    }

    #[test]
    fn unit_gain_at_zero_db() {
        let c = wave(vec![0.5, -0.5, 0.5, -0.5]);
        let n = wave(vec![-0.5, 0.5, 0.5, -0.5]);
        let m = mix_at_snr_with_offset(&c, &n, 0.0, 0).unwrap();
        assert!((m.gain - 1.0).abs() < 1e-15);
        let m = mix_at_snr_with_offset(&c, &n, 20.0, 0).unwrap();
        assert!((m.gain - 0.1).abs() < 1e-15);
    }

    #[test]
    fn silent_inputs_are_rejected() {
        let c = wave(vec![0.0; 4]);
        let n = wave(vec![0.1; 4]);
        assert!(matches!(mix_at_snr_with_offset(&c, &n, 0.0, 0), Err(Error::Degenerate(_))));
        assert!(matches!(mix_at_snr_with_offset(&n, &c, 0.0, 0), Err(Error::Degenerate(_))));
        let short = wave(vec![0.1; 2]);
        assert!(mix_at_snr_with_offset(&n, &short, 0.0, 0).is_err());
    }
}
