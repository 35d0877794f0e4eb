//! Teacher-forced training of the synthesizer.

use maskvoice_autodiff::{clip_grad_norm, Adam, AdamConfig, Tape, Tensor, Var};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::model::{pad_to_reduction, stop_targets, tts_loss_graph, DecodeMode, TtsModel};
use super::symbols::SymbolSequence;
use crate::error::{invalid, Error, Result};
use crate::grid::Grid;
use crate::speaker::SpeakerEmbedding;
use crate::training::{BucketSampler, LossCurve};

/// One training utterance. Targets are natural-log mel `frames x n_mels`;
/// the decoder is teacher-forced with `before_target`.
#[derive(Clone, Debug, PartialEq)]
pub struct TtsExample {
    pub symbols: SymbolSequence,
    pub speaker: SpeakerEmbedding,
    /// Normalized noise representation, present iff the Post-Net is mask conditioned.
    pub noise_rep: Option<Grid>,
    pub before_target: Grid,
    pub after_target: Grid,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TtsTrainConfig {
    pub steps: usize,
    pub lr: f64,
    pub batch_size: usize,
    /// Global gradient-norm clip; `0` disables clipping.
    pub clip_norm: f64,
    /// Parameter-name prefixes left untouched (e.g. `"post."`, `"enc."`).
    pub frozen: Vec<String>,
}

impl Default for TtsTrainConfig {
    fn default() -> Self {
        TtsTrainConfig {
            steps: 1500,
            lr: 1e-3,
            batch_size: 4,
            clip_norm: 1.0,
            frozen: Vec::new(),
        }
    }
}

/// Loss graph of one example: before, after and stop terms.
pub fn example_loss<'t>(
    model: &TtsModel,
    p: &maskvoice_autodiff::Bound<'t>,
    ex: &TtsExample,
    dropout_rng: Option<&mut ChaCha8Rng>,
) -> Result<Var<'t>> {
    let tape = p.get("enc.embedding")?.tape();
    ex.before_target.check_same(&ex.after_target, "tts example")?;
    let spk = tape.constant(Tensor::new(&[1, ex.speaker.dim()], ex.speaker.vector().to_vec())?);
    let enc = model.encode(p, &ex.symbols, spk)?;
    let r = model.config().reduction;
    let before_t = pad_to_reduction(&ex.before_target, r);
    let after_t = pad_to_reduction(&ex.after_target, r);
    let noise = ex.noise_rep.as_ref().map(|n| pad_to_reduction(n, r));
    let g = model.decode(
        p,
        enc,
        noise.as_ref(),
        DecodeMode::TeacherForced(&before_t),
        dropout_rng,
        None,
    )?;
    let steps = g.stop.shape()[0];
    tts_loss_graph(g.before, g.after, g.stop, &before_t, &after_t, &stop_targets(steps))
}

/// Adam on the mean example loss over length-bucketed batches.
pub fn train_tts(model: &mut TtsModel, examples: &[TtsExample], cfg: &TtsTrainConfig, seed: u64) -> Result<LossCurve> {
    if examples.is_empty() {
        return Err(invalid("tts training set is empty"));
    }
    // Coarse buckets keep similar lengths together without forcing singletons.
    let keys: Vec<usize> = examples.iter().map(|e| e.before_target.rows() / 24).collect();
    let mut sampler = BucketSampler::new(&keys, cfg.batch_size, seed);
    let mut dropout_rng = ChaCha8Rng::seed_from_u64(seed ^ 0x5eed_d70f);
    let mut adam = Adam::new(AdamConfig {
        lr: cfg.lr,
        ..AdamConfig::default()
    });
    let mut curve = LossCurve::default();
    for step in 0..cfg.steps {
        let batch = sampler.next_batch();
        let tape = Tape::new();
        let p = model.params().bind(&tape);
        let mut total: Option<Var> = None;
        for &i in &batch {
            let l = example_loss(model, &p, &examples[i], Some(&mut dropout_rng))?;
            total = Some(match total {
                Some(t) => t.add(l)?,
                None => l,
            });
        }
        let loss = total.expect("non-empty batch").scale(1.0 / batch.len() as f64);
        let value = loss.item();
        if !value.is_finite() {
            return Err(Error::Diverged(format!("tts loss {value} at step {step}")));
        }
        curve.losses.push(value);
        let mut grads = p.gradients(&tape.backward(loss)?);
        grads.retain(|name, _| !cfg.frozen.iter().any(|f| name.starts_with(f.as_str())));
        if cfg.clip_norm > 0.0 {
            clip_grad_norm(&mut grads, cfg.clip_norm);
        }
        adam.step(model.params_mut(), &grads)
            .map_err(|e| Error::Diverged(format!("step {step}: {e}")))?;
    }
    Ok(curve)
}
