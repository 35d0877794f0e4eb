//! Location-based GMM attention with monotone means.
//!
//! A dense head on the attention query yields `(w_hat, delta_hat, sigma_hat)`
//! per mixture. Then `kappa += softplus(delta_hat)`, `sigma =
//! softplus(sigma_hat) + 1e-3`, and position `j` scores
//! `sum_k softmax(w_hat)_k exp(-(j - kappa_k)^2 / (2 sigma_k^2))`, normalized
//! over positions.

use maskvoice_autodiff::{Tape, Tensor, Var};

use crate::error::{invalid, Result};

pub const SIGMA_MIN: f64 = 1e-3;

/// Mixture state after one decoder step.
#[derive(Clone, Debug, PartialEq)]
pub struct GmmAttentionState {
    pub kappa: Vec<f64>,
    pub sigma: Vec<f64>,
    pub mixture_weights: Vec<f64>,
}

impl GmmAttentionState {
    /// All means at position zero before the first step.
    pub fn initial(mixtures: usize) -> Self {
        GmmAttentionState {
            kappa: vec![0.0; mixtures],
            sigma: vec![1.0; mixtures],
            mixture_weights: vec![1.0 / mixtures as f64; mixtures],
        }
    }
}

/// Graph form. `head: [1, 3K]`, `kappa_prev: [K]`; returns
/// `(weights [1, L], kappa [K], sigma [K])`.
pub(crate) fn gmm_step<'t>(
    head: Var<'t>,
    kappa_prev: Var<'t>,
    n_positions: usize,
) -> Result<(Var<'t>, Var<'t>, Var<'t>)> {
    if n_positions == 0 {
        return Err(invalid("attention over an empty encoder sequence"));
    }
    let k = kappa_prev.shape()[0];
    if head.shape() != [1, 3 * k] {
        return Err(invalid(format!("GMM head has shape {:?}, expected [1, {}]", head.shape(), 3 * k)));
    }
    let tape = head.tape();
    let w_hat = head.slice(1, 0, k)?.reshape(&[k])?;
    let delta = head.slice(1, k, k)?.reshape(&[k])?.softplus();
    let sigma = head.slice(1, 2 * k, k)?.reshape(&[k])?.softplus().add_scalar(SIGMA_MIN);
    let kappa = kappa_prev.add(delta)?;

    let positions: Vec<f64> = (0..n_positions)
        .flat_map(|j| std::iter::repeat_n(j as f64, k))
        .collect();
    let pos = tape.constant(Tensor::new(&[n_positions, k], positions)?);
    let diff = pos.sub(kappa)?;
    let two_var = sigma.mul(sigma)?.scale(2.0);
    let sq = diff.mul(diff)?.div(two_var)?;
    // Softmax over all (position, mixture) pairs of log w_k - sq, then summing
    // the mixtures out, equals the normalized mixture density. The log-sum-exp
    // of w_hat cancels, so the raw w_hat can be used directly.
    let logits = sq.scale(-1.0).add(w_hat)?.reshape(&[n_positions * k])?;
    let weights = logits
        .softmax(0)?
        .reshape(&[n_positions, k])?
        .sum(1)?
        .reshape(&[1, n_positions])?;
    Ok((weights, kappa, sigma))
}

/// Value form of one attention step: `head` holds the `3K` raw outputs of the
/// dense head. Returns the weights over `n_positions` and the new state.
pub fn gmm_attention_step(
    state: &GmmAttentionState,
    head: &[f64],
    n_positions: usize,
) -> Result<(Vec<f64>, GmmAttentionState)> {
    let k = state.kappa.len();
    if head.len() != 3 * k {
        return Err(invalid(format!("head has {} values, expected {}", head.len(), 3 * k)));
    }
    let tape = Tape::new();
    let h = tape.constant(Tensor::new(&[1, 3 * k], head.to_vec())?);
    let kp = tape.constant(Tensor::from_vec(state.kappa.clone()));
    let (w, kappa, sigma) = gmm_step(h, kp, n_positions)?;
    let mix = softmax(&head[..k]);
    Ok((
        w.value().data().to_vec(),
        GmmAttentionState {
            kappa: kappa.value().data().to_vec(),
            sigma: sigma.value().data().to_vec(),
            mixture_weights: mix,
        },
    ))
}

pub(crate) fn softmax(x: &[f64]) -> Vec<f64> {
    let m = x.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let e: Vec<f64> = x.iter().map(|v| (v - m).exp()).collect();
    let s: f64 = e.iter().sum();
    e.iter().map(|v| v / s).collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn narrow_single_mixture_is_one_hot() {
        // softplus(delta) = 3 moves kappa from 0 to 3; sigma = softplus(-20) + 1e-3.
        let delta = (3f64.exp() - 1.0).ln();
        let state = GmmAttentionState::initial(1);
        let (w, next) = gmm_attention_step(&state, &[0.0, delta, -20.0], 6).unwrap();
        assert!((next.kappa[0] - 3.0).abs() < 1e-12);
        assert!((w[3] - 1.0).abs() < 1e-12);
        assert!(w.iter().enumerate().all(|(j, &v)| j == 3 || v < 1e-12));
    }

    #[test]
    fn matches_direct_formula() {
        let state = GmmAttentionState {
            kappa: vec![0.5, 2.0],
            sigma: vec![1.0, 1.0],
            mixture_weights: vec![0.5, 0.5],
        };
        let head = [0.3, -0.4, 0.1, -1.0, 0.7, 0.2];
        let (w, next) = gmm_attention_step(&state, &head, 5).unwrap();
        let sp = |x: f64| (1.0 + x.exp()).ln();
        let mix = softmax(&head[..2]);
        let kappa = [0.5 + sp(0.1), 2.0 + sp(-1.0)];
        let sigma = [sp(0.7) + SIGMA_MIN, sp(0.2) + SIGMA_MIN];
        let raw: Vec<f64> = (0..5)
            .map(|j| {
                (0..2)
                    .map(|k| mix[k] * (-(j as f64 - kappa[k]).powi(2) / (2.0 * sigma[k] * sigma[k])).exp())
                    .sum()
            })
            .collect();
        let total: f64 = raw.iter().sum();
        for (a, b) in w.iter().zip(&raw) {
            assert!((a - b / total).abs() < 1e-12);
        }
        assert!((next.kappa[0] - kappa[0]).abs() < 1e-12 && (next.sigma[1] - sigma[1]).abs() < 1e-12);
    }

    #[test]
    fn rejects_empty_sequence_and_bad_head() {
        let s = GmmAttentionState::initial(2);
        assert!(gmm_attention_step(&s, &[0.0; 6], 0).is_err());
        assert!(gmm_attention_step(&s, &[0.0; 5], 3).is_err());
    }
}
