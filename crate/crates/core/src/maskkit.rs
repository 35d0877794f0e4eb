//! Denoise-mask algebra: ideal and clean masks, mask application, the mask
//! MSE loss, and the clip/log/affine normalization used for conditioning.

use crate::dsp::{GridContainer, MelSpectrogram, MASK_MAGIC};
use crate::error::{invalid, Error, Result};
use crate::grid::Grid;

/// Lower clip bound applied before the log in [`normalize_for_conditioning`].
pub const MASK_CLIP_MIN: f64 = 0.1;
/// Output range of [`normalize_for_conditioning`] is `[-NORM_BOUND, NORM_BOUND]`.
pub const NORM_BOUND: f64 = 4.0;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum MaskKind {
    /// Computed from separately known clean and noise energies.
    Ideal,
    /// Produced by the enhancement model.
    Predicted,
    /// All ones: the no-noise condition.
    Clean,
}

/// Per-bin ratio of clean energy to total energy, every element in `[0, 1]`.
#[derive(Clone, Debug, PartialEq)]
pub struct DenoiseMask {
    values: Grid,
    kind: MaskKind,
}

impl DenoiseMask {
    pub fn new(values: Grid, kind: MaskKind) -> Result<Self> {
        if values.rows() == 0 || values.cols() == 0 {
            return Err(invalid("mask needs positive dimensions"));
        }
        if let Some(i) = values.data().iter().position(|v| !(0.0..=1.0).contains(v)) {
            return Err(invalid(format!(
                "mask element {i} = {} outside [0, 1]",
                values.data()[i]
            )));
        }
        if kind == MaskKind::Clean && values.data().iter().any(|&v| v != 1.0) {
            return Err(invalid("clean mask must be all ones"));
        }
        Ok(DenoiseMask { values, kind })
    }

    pub fn values(&self) -> &Grid {
        &self.values
    }

    pub fn kind(&self) -> MaskKind {
        self.kind
    }

    pub fn frames(&self) -> usize {
        self.values.rows()
    }

    pub fn n_mels(&self) -> usize {
        self.values.cols()
    }

    pub fn to_container(&self, sample_rate: u32, frame_hop: u32) -> GridContainer {
        GridContainer {
            magic: MASK_MAGIC,
            grid: self.values.clone(),
            sample_rate,
            frame_hop,
        }
    }
}

/// Conditioning signal derived from a mask, every element in `[-4, 4]`.
#[derive(Clone, Debug, PartialEq)]
pub struct NormalizedNoiseRepresentation {
    values: Grid,
}

impl NormalizedNoiseRepresentation {
    pub fn new(values: Grid) -> Result<Self> {
        if values.data().iter().any(|v| !(-NORM_BOUND..=NORM_BOUND).contains(v)) {
            return Err(invalid("normalized noise representation outside [-4, 4]"));
        }
        Ok(NormalizedNoiseRepresentation { values })
    }

    pub fn values(&self) -> &Grid {
        &self.values
    }

    pub fn frames(&self) -> usize {
        self.values.rows()
    }
}

/// `M = E_s / (E_s + E_n)` per bin, with `M = 1` where both energies vanish.
pub fn ideal_mask(clean: &MelSpectrogram, noise: &MelSpectrogram) -> Result<DenoiseMask> {
    ideal_mask_from_grids(clean.bins(), noise.bins())
}

pub fn ideal_mask_from_grids(clean: &Grid, noise: &Grid) -> Result<DenoiseMask> {
    clean.check_same(noise, "ideal_mask")?;
    if clean.data().iter().chain(noise.data()).any(|&v| !(v >= 0.0)) {
        return Err(invalid("ideal_mask inputs must be non-negative"));
    }
    let values = clean.zip_map(noise, "ideal_mask", |s, n| {
        let total = s + n;
        if total == 0.0 {
            1.0
        } else {
            (s / total).clamp(0.0, 1.0)
        }
    })?;
    DenoiseMask::new(values, MaskKind::Ideal)
}

/// Mixture-derived variant: `M = min(E_s / E_mix, 1)` where the total energy
/// comes from the mixture's own spectrogram (cross terms included).
pub fn ideal_mask_from_mixture(clean: &MelSpectrogram, mixture: &MelSpectrogram) -> Result<DenoiseMask> {
    let values = clean.bins().zip_map(mixture.bins(), "ideal_mask_from_mixture", |s, e| {
        if e == 0.0 {
            1.0
        } else {
            (s / e).clamp(0.0, 1.0)
        }
    })?;
    DenoiseMask::new(values, MaskKind::Ideal)
}

pub fn clean_mask(frames: usize, n_mels: usize) -> Result<DenoiseMask> {
    if frames == 0 || n_mels == 0 {
        return Err(invalid(format!("clean mask needs positive dims, got {frames}x{n_mels}")));
    }
    DenoiseMask::new(Grid::filled(frames, n_mels, 1.0), MaskKind::Clean)
}

/// Element-wise `mel * mask`.
pub fn apply_mask(mel: &MelSpectrogram, mask: &DenoiseMask) -> Result<MelSpectrogram> {
    let bins = mel.bins().zip_map(mask.values(), "apply_mask", |a, b| a * b)?;
    mel.with_bins(bins)
}

/// `sum((noisy * M - clean)^2) / n` over all `n = frames * n_mels` bins.
pub fn mask_mse_loss(noisy: &MelSpectrogram, mask: &DenoiseMask, clean: &MelSpectrogram) -> Result<f64> {
    noisy.bins().check_same(mask.values(), "mask_mse_loss")?;
    noisy.bins().check_same(clean.bins(), "mask_mse_loss")?;
    let n = noisy.bins().data().len() as f64;
    let sum: f64 = noisy
        .bins()
        .data()
        .iter()
        .zip(mask.values().data())
        .zip(clean.bins().data())
        .map(|((x, m), s)| (x * m - s) * (x * m - s))
        .sum();
    Ok(sum / n)
}

/// Clip to `[0.1, 1]`, take the natural log, and map `[ln 0.1, 0]` affinely
/// onto `[-4, 4]`.
pub fn normalize_value(m: f64) -> f64 {
    let lo = MASK_CLIP_MIN.ln();
    let x = m.clamp(MASK_CLIP_MIN, 1.0).ln();
    (-NORM_BOUND + 2.0 * NORM_BOUND * (x - lo) / (0.0 - lo)).clamp(-NORM_BOUND, NORM_BOUND)
}

pub fn normalize_for_conditioning(mask: &DenoiseMask) -> NormalizedNoiseRepresentation {
    NormalizedNoiseRepresentation {
        values: mask.values().map(normalize_value),
    }
}

/// The clean-mask conditioning grid (constant `+4`).
pub fn clean_conditioning(frames: usize, n_mels: usize) -> Result<NormalizedNoiseRepresentation> {
    Ok(normalize_for_conditioning(&clean_mask(frames, n_mels)?))
}

pub fn mask_from_container(c: &GridContainer, kind: MaskKind) -> Result<DenoiseMask> {
    if c.magic != MASK_MAGIC {
        return Err(Error::Format("expected a MASK container".into()));
    }
    DenoiseMask::new(c.grid.clone(), kind)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn mel(rows: usize, cols: usize, data: Vec<f64>) -> MelSpectrogram {
        MelSpectrogram::new(Grid::new(rows, cols, data).unwrap(), 16000, 128).unwrap()
    }

    #[test]
    fn ideal_mask_hand_values() {
        let m = ideal_mask(&mel(1, 3, vec![3.0, 0.0, 0.0]), &mel(1, 3, vec![1.0, 0.0, 2.0])).unwrap();
        assert_eq!(m.values().data(), &[0.75, 1.0, 0.0]);
        assert_eq!(m.kind(), MaskKind::Ideal);
    }

    #[test]
    fn ideal_mask_errors() {
        assert!(ideal_mask(&mel(1, 2, vec![1.0, 1.0]), &mel(2, 1, vec![1.0, 1.0])).is_err());
        let neg = Grid::new(1, 1, vec![-1.0]).unwrap();
        assert!(ideal_mask_from_grids(&neg, &Grid::zeros(1, 1)).is_err());
    }

    #[test]
    fn clean_mask_is_all_ones() {
        let m = clean_mask(2, 3).unwrap();
        assert_eq!(m.values(), &Grid::filled(2, 3, 1.0));
        assert_eq!(m.kind(), MaskKind::Clean);
        assert!(clean_mask(0, 3).is_err());
        assert!(DenoiseMask::new(Grid::filled(1, 1, 0.5), MaskKind::Clean).is_err());
        assert!(DenoiseMask::new(Grid::filled(1, 1, 1.5), MaskKind::Predicted).is_err());
    }

    #[test]
    fn apply_mask_identity_and_zero() {
        let s = mel(2, 2, vec![1.0, 2.0, 3.0, 4.0]);
        assert_eq!(apply_mask(&s, &clean_mask(2, 2).unwrap()).unwrap(), s);
        let zero = DenoiseMask::new(Grid::zeros(2, 2), MaskKind::Predicted).unwrap();
        assert_eq!(apply_mask(&s, &zero).unwrap().bins(), &Grid::zeros(2, 2));
    }

    #[test]
    fn mask_mse_hand_value() {
        let noisy = mel(1, 2, vec![2.0, 4.0]);
        let m = DenoiseMask::new(Grid::new(1, 2, vec![0.5, 0.5]).unwrap(), MaskKind::Predicted).unwrap();
        let clean = mel(1, 2, vec![1.0, 1.0]);
        assert_eq!(mask_mse_loss(&noisy, &m, &clean).unwrap(), 0.5);
    }

    #[test]
    fn mask_mse_zero_for_exact_ideal_mask() {
        let s = mel(1, 3, vec![3.0, 0.5, 0.0]);
        let n = mel(1, 3, vec![1.0, 0.0, 2.0]);
        let total = mel(1, 3, vec![4.0, 0.5, 2.0]);
        let m = ideal_mask(&s, &n).unwrap();
        assert_eq!(mask_mse_loss(&total, &m, &s).unwrap(), 0.0);
    }

    #[test]
    fn normalization_endpoints() {
        assert!((normalize_value(1.0) - 4.0).abs() < 1e-12);
        assert!((normalize_value(0.1) + 4.0).abs() < 1e-12);
        assert_eq!(normalize_value(0.0), -4.0);
        assert_eq!(normalize_value(0.05), -4.0);
        assert!(normalize_value(0.1f64.sqrt()).abs() < 1e-12);
        let rep = clean_conditioning(3, 2).unwrap();
        assert!(rep.values().data().iter().all(|&v| v == 4.0));
    }
}
