//! Mel-domain speech enhancement: a convolutional front-end, a stack of
//! DFSMN layers and a sigmoid dense head that predicts a denoise mask from a
//! noisy mel spectrogram. Trained with the masked-reconstruction MSE on
//! linear mel energies.

mod dfsmn;

use std::path::Path;

use maskvoice_autodiff::{
    clip_grad_norm, load_checkpoint, save_checkpoint, Adam, AdamConfig, Bound, ParamStore, Tape,
    Var,
};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

pub use dfsmn::{memory_block, DfsmnLayer, DfsmnShape};

use crate::dsp::MelSpectrogram;
use crate::error::{invalid, Error, Result};
use crate::grid::Grid;
use crate::init::{insert_full, insert_normal};
use crate::maskkit::{DenoiseMask, MaskKind};
use crate::training::BucketSampler;
pub use crate::training::LossCurve;

/// Masks are kept strictly inside (0, 1) even where the sigmoid saturates.
const MASK_EPS: f64 = 1e-12;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EnhancerConfig {
    pub n_mels: usize,
    pub conv_layers: usize,
    pub conv_kernel: usize,
    pub conv_channels: usize,
    pub dfsmn_layers: usize,
    pub dfsmn_channels: usize,
    pub dfsmn_hidden: usize,
    pub lookback: usize,
    pub lookahead: usize,
    pub stride_back: usize,
    pub stride_ahead: usize,
    /// Input features are `(ln(max(mel, log_floor)) - feature_offset) / feature_scale`.
    pub feature_offset: f64,
    pub feature_scale: f64,
    pub log_floor: f64,
    /// Initial value of the sigmoid head bias.
    pub head_bias_init: f64,
}

impl Default for EnhancerConfig {
    fn default() -> Self {
        EnhancerConfig {
            n_mels: 40,
            conv_layers: 2,
            conv_kernel: 3,
            conv_channels: 32,
            dfsmn_layers: 3,
            dfsmn_channels: 64,
            dfsmn_hidden: 128,
            lookback: 4,
            lookahead: 2,
            stride_back: 1,
            stride_ahead: 1,
            feature_offset: -2.0,
            feature_scale: 5.0,
            log_floor: 1e-5,
            head_bias_init: 0.0,
        }
    }
}

impl EnhancerConfig {
    pub fn validate(&self) -> Result<()> {
        if self.n_mels == 0 || self.conv_channels == 0 || self.dfsmn_channels == 0 {
            return Err(Error::Config("enhancer widths must be positive".into()));
        }
        if self.conv_layers > 0 && self.conv_kernel % 2 == 0 {
            return Err(Error::Config("enhancer conv_kernel must be odd".into()));
        }
        if !(self.feature_scale > 0.0) || !(self.log_floor > 0.0) {
            return Err(Error::Config("feature_scale and log_floor must be positive".into()));
        }
        for shape in self.dfsmn_shapes() {
            shape.validate().map_err(|e| Error::Config(e.to_string()))?;
        }
        Ok(())
    }

    fn conv_dims(&self) -> Vec<(usize, usize)> {
        let mut width = self.n_mels;
        (0..self.conv_layers)
            .map(|_| {
                let d = (width, self.conv_channels);
                width = self.conv_channels;
                d
            })
            .collect()
    }

    fn front_width(&self) -> usize {
        if self.conv_layers == 0 {
            self.n_mels
        } else {
            self.conv_channels
        }
    }

    fn dfsmn_shapes(&self) -> Vec<DfsmnShape> {
        let mut width = self.front_width();
        (0..self.dfsmn_layers)
            .map(|_| {
                let s = DfsmnShape {
                    input: width,
                    hidden: self.dfsmn_hidden,
                    channels: self.dfsmn_channels,
                    lookback: self.lookback,
                    lookahead: self.lookahead,
                    stride_back: self.stride_back,
                    stride_ahead: self.stride_ahead,
                };
                width = self.dfsmn_channels;
                s
            })
            .collect()
    }

    fn head_width(&self) -> usize {
        if self.dfsmn_layers == 0 {
            self.front_width()
        } else {
            self.dfsmn_channels
        }
    }

    /// Trainable parameter count implied by the configuration.
    pub fn parameter_count(&self) -> usize {
        let conv: usize = self
            .conv_dims()
            .iter()
            .map(|&(cin, cout)| self.conv_kernel * cin * cout + cout)
            .sum();
        let dfsmn: usize = self.dfsmn_shapes().iter().map(DfsmnShape::parameter_count).sum();
        conv + dfsmn + self.head_width() * self.n_mels + self.n_mels
    }

    /// Normalized log features of a linear mel grid.
    pub fn features(&self, mel: &Grid) -> Grid {
        mel.map(|x| (x.max(self.log_floor).ln() - self.feature_offset) / self.feature_scale)
    }
}

/// The CNN-DFSMN-FC mask estimator.
#[derive(Clone, Debug, PartialEq)]
pub struct EnhancerModel {
    config: EnhancerConfig,
    params: ParamStore,
}

impl EnhancerModel {
    /// Fresh seeded initialization. The head weights are small, so an
    /// untrained model predicts masks near `sigmoid(head_bias_init)`.
    pub fn new(config: EnhancerConfig, seed: u64) -> Result<Self> {
        config.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut params = ParamStore::new();
        for (i, (cin, cout)) in config.conv_dims().into_iter().enumerate() {
            let k = config.conv_kernel;
            let std = (2.0 / (k * cin) as f64).sqrt();
            insert_normal(&mut params, &mut rng, &format!("conv{i}.w"), &[k, cin, cout], std);
            insert_full(&mut params, &format!("conv{i}.b"), &[cout], 0.0);
        }
        for layer in Self::layers(&config)? {
            layer.init(&mut params, &mut rng);
        }
        let hw = config.head_width();
        insert_normal(&mut params, &mut rng, "head.w", &[hw, config.n_mels], 0.01);
        insert_full(&mut params, "head.b", &[config.n_mels], config.head_bias_init);
        Ok(EnhancerModel { config, params })
    }

    /// Wraps existing parameters after checking names and shapes.
    pub fn from_params(config: EnhancerConfig, params: ParamStore) -> Result<Self> {
        let reference = EnhancerModel::new(config.clone(), 0)?;
        if params.len() != reference.params.len() {
            return Err(Error::Format(format!(
                "enhancer checkpoint has {} tensors, expected {}",
                params.len(),
                reference.params.len()
            )));
        }
        for (name, t) in reference.params.iter() {
            let got = params
                .get(name)
                .ok_or_else(|| Error::Format(format!("enhancer checkpoint lacks `{name}`")))?;
            if got.shape() != t.shape() {
                return Err(Error::Format(format!(
                    "enhancer `{name}` has shape {:?}, expected {:?}",
                    got.shape(),
                    t.shape()
                )));
            }
        }
        Ok(EnhancerModel { config, params })
    }

    fn layers(config: &EnhancerConfig) -> Result<Vec<DfsmnLayer>> {
        config
            .dfsmn_shapes()
            .into_iter()
            .enumerate()
            .map(|(i, s)| DfsmnLayer::new(format!("dfsmn{i}"), s))
            .collect()
    }

    pub fn config(&self) -> &EnhancerConfig {
        &self.config
    }

    pub fn params(&self) -> &ParamStore {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut ParamStore {
        &mut self.params
    }

    pub fn num_parameters(&self) -> usize {
        self.params.num_elements()
    }

    /// Mask graph for already normalized features `[frames, n_mels]`.
    pub fn forward<'t>(&self, p: &Bound<'t>, features: Var<'t>) -> Result<Var<'t>> {
        let shape = features.shape();
        if shape.len() != 2 || shape[1] != self.config.n_mels {
            return Err(invalid(format!(
                "enhancer expects [frames, {}] features, got {shape:?}",
                self.config.n_mels
            )));
        }
        let mut h = features;
        let pad = self.config.conv_kernel / 2;
        for i in 0..self.config.conv_layers {
            let w = p.get(&format!("conv{i}.w"))?;
            let b = p.get(&format!("conv{i}.b"))?;
            h = h.conv1d(w, Some(b), 1, pad)?.relu();
        }
        for layer in Self::layers(&self.config)? {
            h = layer.forward(p, h)?;
        }
        Ok(h.linear(p.get("head.w")?, p.get("head.b")?)?.sigmoid())
    }

    /// Predicts a mask for `noisy`, strictly inside (0, 1).
    pub fn enhance(&self, noisy: &MelSpectrogram) -> Result<DenoiseMask> {
        if noisy.n_mels() != self.config.n_mels {
            return Err(invalid(format!(
                "enhancer expects {} mels, got {}",
                self.config.n_mels,
                noisy.n_mels()
            )));
        }
        let tape = Tape::new();
        let p = self.params.bind_frozen(&tape);
        let x = tape.constant(self.config.features(noisy.bins()).to_tensor());
        let m = self.forward(&p, x)?.value();
        let grid = Grid::from_tensor(&m)?.map(|v| v.clamp(MASK_EPS, 1.0 - MASK_EPS));
        DenoiseMask::new(grid, MaskKind::Predicted)
    }

    /// `mean((noisy * mask - clean)^2)` as a graph node.
    pub fn loss<'t>(&self, p: &Bound<'t>, noisy: &Grid, clean: &Grid) -> Result<Var<'t>> {
        noisy.check_same(clean, "enhancer loss")?;
        let tape = p.get("head.b")?.tape();
        let x = tape.constant(self.config.features(noisy).to_tensor());
        let mask = self.forward(p, x)?;
        let denoised = mask.mul(tape.constant(noisy.to_tensor()))?;
        Ok(denoised.mse(tape.constant(clean.to_tensor()))?)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        save_checkpoint(path, &self.params)?;
        Ok(())
    }

    pub fn load(config: EnhancerConfig, path: impl AsRef<Path>) -> Result<Self> {
        Self::from_params(config, load_checkpoint(path)?)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EnhancerTrainConfig {
    pub steps: usize,
    pub lr: f64,
    /// Utterances per step; each batch is drawn from one frame-count bucket.
    pub batch_size: usize,
    /// Global gradient-norm clip; `0` disables clipping.
    pub clip_norm: f64,
}

impl Default for EnhancerTrainConfig {
    fn default() -> Self {
        EnhancerTrainConfig {
            steps: 6000,
            lr: 2e-3,
            batch_size: 4,
            clip_norm: 0.0,
        }
    }
}

/// Fits `model` to `(noisy, clean)` mel pairs with Adam.
pub fn train_enhancer(
    model: &mut EnhancerModel,
    pairs: &[(MelSpectrogram, MelSpectrogram)],
    cfg: &EnhancerTrainConfig,
    seed: u64,
) -> Result<LossCurve> {
    if pairs.is_empty() {
        return Err(invalid("enhancer training set is empty"));
    }
    for (n, c) in pairs {
        n.bins().check_same(c.bins(), "train_enhancer")?;
    }
    let lengths: Vec<usize> = pairs.iter().map(|(n, _)| n.frames()).collect();
    let mut sampler = BucketSampler::new(&lengths, cfg.batch_size, seed);
    let mut adam = Adam::new(AdamConfig {
        lr: cfg.lr,
        ..AdamConfig::default()
    });
    let mut curve = LossCurve::default();
    for step in 0..cfg.steps {
        let batch = sampler.next_batch();
        let tape = Tape::new();
        let p = model.params.bind(&tape);
        let mut total: Option<Var> = None;
        for &i in &batch {
            let l = model.loss(&p, pairs[i].0.bins(), pairs[i].1.bins())?;
            total = Some(match total {
                Some(t) => t.add(l)?,
                None => l,
            });
        }
        let loss = total.expect("non-empty batch").scale(1.0 / batch.len() as f64);
        let value = loss.item();
        if !value.is_finite() {
            return Err(Error::Diverged(format!("enhancer loss {value} at step {step}")));
        }
        curve.losses.push(value);
        let mut grads = p.gradients(&tape.backward(loss)?);
        if cfg.clip_norm > 0.0 {
            clip_grad_norm(&mut grads, cfg.clip_norm);
        }
        adam.step(&mut model.params, &grads)
            .map_err(|e| Error::Diverged(format!("step {step}: {e}")))?;
    }
    Ok(curve)
}
