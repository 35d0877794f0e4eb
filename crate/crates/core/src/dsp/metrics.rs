use crate::dsp::MelSpectrogram;
use crate::error::{invalid, Error, Result};

pub const SI_SDR_CLAMP_DB: f64 = 100.0;

/// Scale-invariant SDR in dB between flattened signals, without mean
/// removal, clamped to `[-100, 100]`.
pub fn si_sdr(reference: &[f64], estimate: &[f64]) -> Result<f64> {
    if reference.len() != estimate.len() {
        return Err(invalid(format!(
            "si_sdr length mismatch: {} vs {}",
            reference.len(),
            estimate.len()
        )));
    }
    let rr: f64 = reference.iter().map(|r| r * r).sum();
    if rr == 0.0 {
        return Err(Error::Degenerate("si_sdr reference is all zeros".into()));
    }
    let alpha = reference.iter().zip(estimate).map(|(r, e)| r * e).sum::<f64>() / rr;
    let target = alpha * alpha * rr;
    let residual: f64 = reference
        .iter()
        .zip(estimate)
        .map(|(r, e)| (alpha * r - e) * (alpha * r - e))
        .sum();
    let db = if target == 0.0 {
        -SI_SDR_CLAMP_DB
    } else if residual == 0.0 {
        SI_SDR_CLAMP_DB
    } else {
        10.0 * (target / residual).log10()
    };
    Ok(db.clamp(-SI_SDR_CLAMP_DB, SI_SDR_CLAMP_DB))
}

pub fn si_sdr_mel(reference: &MelSpectrogram, estimate: &MelSpectrogram) -> Result<f64> {
    reference.bins().check_same(estimate.bins(), "si_sdr_mel")?;
    si_sdr(reference.bins().data(), estimate.bins().data())
}
