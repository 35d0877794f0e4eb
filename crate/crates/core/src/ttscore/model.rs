//! Speaker-conditioned encoder, GMM-attention decoder and noise-conditioned
//! Post-Net.

use std::path::Path;

use maskvoice_autodiff::{load_checkpoint, save_checkpoint, Bound, ParamStore, Tape, Tensor, Var};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::attention::gmm_step;
use super::layers::{dense, gru_step, gru_sequence, highway, init_dense, init_gru, init_highway};
use super::symbols::{SymbolSequence, VOCAB_SIZE};
use crate::error::{invalid, Error, Result};
use crate::grid::Grid;
use crate::init::insert_normal;
use crate::speaker::SpeakerEmbedding;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TtsConfig {
    pub n_mels: usize,
    pub speaker_dim: usize,
    pub symbol_dim: usize,
    pub encoder_prenet: usize,
    /// Width of the speaker projection concatenated to the highway input.
    pub speaker_cond: usize,
    pub encoder_width: usize,
    pub highway_layers: usize,
    /// Hidden size of each direction of the encoder GRU.
    pub encoder_gru: usize,
    pub prenet_hidden: usize,
    pub prenet_out: usize,
    pub prenet_dropout: f64,
    pub attention_width: usize,
    pub decoder_width: usize,
    pub mixtures: usize,
    /// Frames emitted per decoder step.
    pub reduction: usize,
    pub postnet_layers: usize,
    pub postnet_kernel: usize,
    pub postnet_channels: usize,
    /// Concatenate the normalized noise representation to the Post-Net input.
    /// `false` gives the unconditioned baseline. The pipeline sets it from
    /// its mode, so it is not read from config files.
    #[serde(skip)]
    pub postnet_mask: bool,
    pub max_frames: usize,
    pub delta_bias_init: f64,
    pub sigma_bias_init: f64,
}

impl Default for TtsConfig {
    fn default() -> Self {
        TtsConfig {
            n_mels: 40,
            speaker_dim: 32,
            symbol_dim: 32,
            encoder_prenet: 64,
            speaker_cond: 16,
            encoder_width: 64,
            highway_layers: 2,
            encoder_gru: 32,
            prenet_hidden: 64,
            prenet_out: 32,
            prenet_dropout: 0.5,
            attention_width: 128,
            decoder_width: 128,
            mixtures: 3,
            reduction: 2,
            postnet_layers: 2,
            postnet_kernel: 5,
            postnet_channels: 64,
            postnet_mask: true,
            max_frames: 400,
            delta_bias_init: -1.0,
            sigma_bias_init: 0.54,
        }
    }
}

impl TtsConfig {
    pub fn validate(&self) -> Result<()> {
        let widths = [
            self.n_mels,
            self.speaker_dim,
            self.symbol_dim,
            self.encoder_prenet,
            self.speaker_cond,
            self.encoder_width,
            self.encoder_gru,
            self.prenet_hidden,
            self.prenet_out,
            self.attention_width,
            self.decoder_width,
            self.mixtures,
            self.reduction,
            self.postnet_channels,
        ];
        if widths.contains(&0) {
            return Err(Error::Config("tts widths must be positive".into()));
        }
        if self.postnet_layers < 1 || self.postnet_kernel % 2 == 0 {
            return Err(Error::Config("tts Post-Net needs >= 1 layer and an odd kernel".into()));
        }
        if !(0.0..1.0).contains(&self.prenet_dropout) {
            return Err(Error::Config("prenet_dropout must be in [0, 1)".into()));
        }
        if self.max_frames == 0 {
            return Err(Error::Config("max_frames must be positive".into()));
        }
        Ok(())
    }

    /// Width of each encoder output vector.
    pub fn encoder_out(&self) -> usize {
        2 * self.encoder_gru + self.speaker_dim
    }

    fn postnet_dims(&self) -> Vec<(usize, usize)> {
        let first = if self.postnet_mask { 2 * self.n_mels } else { self.n_mels };
        (0..self.postnet_layers)
            .map(|i| {
                let cin = if i == 0 { first } else { self.postnet_channels };
                let cout = if i + 1 == self.postnet_layers { self.n_mels } else { self.postnet_channels };
                (cin, cout)
            })
            .collect()
    }
}

/// Per-channel affine normalization of log-mel frames.
#[derive(Clone, Debug, PartialEq)]
pub struct LogMelNorm {
    pub mean: Vec<f64>,
    pub std: Vec<f64>,
}

impl LogMelNorm {
    pub fn identity(n_mels: usize) -> Self {
        LogMelNorm {
            mean: vec![0.0; n_mels],
            std: vec![1.0; n_mels],
        }
    }

    /// Channel statistics over all frames; deviations are floored at 0.1.
    pub fn fit<'a>(grids: impl IntoIterator<Item = &'a Grid>) -> Result<Self> {
        let mut n = 0usize;
        let mut sum: Vec<f64> = Vec::new();
        let mut sq: Vec<f64> = Vec::new();
        for g in grids {
            if sum.is_empty() {
                sum = vec![0.0; g.cols()];
                sq = vec![0.0; g.cols()];
            }
            if g.cols() != sum.len() {
                return Err(invalid("log-mel grids differ in width"));
            }
            for r in 0..g.rows() {
                for (c, &v) in g.row(r).iter().enumerate() {
                    sum[c] += v;
                    sq[c] += v * v;
                }
            }
            n += g.rows();
        }
        if n == 0 {
            return Err(invalid("no frames to fit normalization"));
        }
        let mean: Vec<f64> = sum.iter().map(|s| s / n as f64).collect();
        let std = sq
            .iter()
            .zip(&mean)
            .map(|(q, m)| (q / n as f64 - m * m).max(0.0).sqrt().max(0.1))
            .collect();
        Ok(LogMelNorm { mean, std })
    }

    pub fn normalize(&self, g: &Grid) -> Grid {
        Grid::from_fn(g.rows(), g.cols(), |r, c| (g.get(r, c) - self.mean[c]) / self.std[c])
    }
}

/// Which stage produced a checkpoint.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Lineage {
    Initialized,
    Pretrained,
    Adapted,
}

impl Lineage {
    fn code(self) -> f64 {
        match self {
            Lineage::Initialized => 0.0,
            Lineage::Pretrained => 1.0,
            Lineage::Adapted => 2.0,
        }
    }

    fn from_code(c: f64) -> Result<Self> {
        match c as i64 {
            0 => Ok(Lineage::Initialized),
            1 => Ok(Lineage::Pretrained),
            2 => Ok(Lineage::Adapted),
            _ => Err(Error::Format(format!("unknown lineage code {c}"))),
        }
    }
}

/// How the decoder obtains its previous-frame input and its length.
#[derive(Clone, Copy, Debug)]
pub enum DecodeMode<'a> {
    /// Feed the ground-truth log-mel (`frames x n_mels`).
    TeacherForced(&'a Grid),
    /// Feed back predictions for exactly this many frames.
    Fixed(usize),
    /// Feed back predictions until the stop token fires or `max_frames`.
    FreeRunning,
}

/// Named tensors recorded during a forward pass.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct ActivationLog {
    pub entries: Vec<(String, Tensor)>,
}

impl ActivationLog {
    fn record(log: &mut Option<&mut ActivationLog>, name: impl Into<String>, v: Var<'_>) {
        if let Some(l) = log.as_deref_mut() {
            l.entries.push((name.into(), (*v.value()).clone()));
        }
    }
}

/// Values of one decoding run. Mel grids are natural-log mel.
#[derive(Clone, Debug, PartialEq)]
pub struct DecoderOutput {
    pub before_mel: Grid,
    pub after_mel: Grid,
    pub stop_logits: Vec<f64>,
    /// `steps x symbols`.
    pub alignments: Grid,
    /// `steps x mixtures`.
    pub kappa: Grid,
    /// Free-running decode hit `max_frames` without a stop decision.
    pub hit_max_frames: bool,
}

/// Graph handles of one decoding run, before trimming padding.
pub struct DecodeGraph<'t> {
    pub before: Var<'t>,
    pub after: Var<'t>,
    pub stop: Var<'t>,
    pub alignments: Vec<Vec<f64>>,
    pub kappa: Vec<Vec<f64>>,
    /// Valid (unpadded) frame count.
    pub frames: usize,
    pub hit_max_frames: bool,
}

/// The full synthesizer: parameters, normalization and lineage.
#[derive(Clone, Debug, PartialEq)]
pub struct TtsModel {
    config: TtsConfig,
    params: ParamStore,
    norm: LogMelNorm,
    lineage: Lineage,
}

impl TtsModel {
    pub fn new(config: TtsConfig, norm: LogMelNorm, seed: u64) -> Result<Self> {
        config.validate()?;
        if norm.mean.len() != config.n_mels || norm.std.len() != config.n_mels {
            return Err(invalid("normalization width differs from n_mels"));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let params = init_params(&config, &mut rng);
        Ok(TtsModel {
            config,
            params,
            norm,
            lineage: Lineage::Initialized,
        })
    }

    pub fn config(&self) -> &TtsConfig {
        &self.config
    }

    pub fn params(&self) -> &ParamStore {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut ParamStore {
        &mut self.params
    }

    pub fn norm(&self) -> &LogMelNorm {
        &self.norm
    }

    pub fn lineage(&self) -> Lineage {
        self.lineage
    }

    pub fn set_lineage(&mut self, lineage: Lineage) {
        self.lineage = lineage;
    }

    /// Encoder outputs `[symbols, encoder_out]` conditioned on `spk: [1, speaker_dim]`.
    pub fn encode<'t>(&self, p: &Bound<'t>, symbols: &SymbolSequence, spk: Var<'t>) -> Result<Var<'t>> {
        if spk.shape() != [1, self.config.speaker_dim] {
            return Err(invalid(format!(
                "speaker input {:?}, expected [1, {}]",
                spk.shape(),
                self.config.speaker_dim
            )));
        }
        let cond = dense(p, "enc.spk_a", spk)?.tanh();
        let h0 = dense(p, "enc.spk_b", spk)?.tanh();
        self.encode_parts(p, symbols, cond, h0, spk)
    }

    /// The encoder with its three conditioning inputs given explicitly:
    /// the highway-input projection `[1, speaker_cond]`, the GRU initial
    /// state `[1, 2 encoder_gru]` and the vector appended to every output.
    pub fn encode_parts<'t>(
        &self,
        p: &Bound<'t>,
        symbols: &SymbolSequence,
        cond: Var<'t>,
        h0: Var<'t>,
        spk: Var<'t>,
    ) -> Result<Var<'t>> {
        let c = &self.config;
        let ids = symbols.ids();
        let rep = vec![0; ids.len()];
        let emb = p.get("enc.embedding")?.gather_rows(ids)?;
        let x = dense(p, "enc.prenet", emb)?.relu();
        let x = Var::concat(&[x, cond.gather_rows(&rep)?], 1)?;
        let mut x = dense(p, "enc.proj", x)?;
        for i in 0..c.highway_layers {
            x = highway(p, &format!("enc.hw{i}"), x)?;
        }
        let g = c.encoder_gru;
        let fwd = gru_sequence(p, "enc.gru_f", x, h0.slice(1, 0, g)?, false)?;
        let bwd = gru_sequence(p, "enc.gru_b", x, h0.slice(1, g, g)?, true)?;
        Ok(Var::concat(&[fwd, bwd, spk.gather_rows(&rep)?], 1)?)
    }

    /// Runs the decoder and Post-Net on the tape.
    ///
    /// `noise_rep` must be present exactly when the Post-Net is mask
    /// conditioned. Under teacher forcing its frame count must match the
    /// target; otherwise it is stretched by repeating its final frame.
    /// `dropout_rng` enables pre-net dropout (training).
    pub fn decode<'t>(
        &self,
        p: &Bound<'t>,
        enc: Var<'t>,
        noise_rep: Option<&Grid>,
        mode: DecodeMode<'_>,
        mut dropout_rng: Option<&mut ChaCha8Rng>,
        mut log: Option<&mut ActivationLog>,
    ) -> Result<DecodeGraph<'t>> {
        let c = &self.config;
        let tape = enc.tape();
        let (m, r, k) = (c.n_mels, c.reduction, c.mixtures);
        let n_sym = enc.shape()[0];
        ActivationLog::record(&mut log, "encoder", enc);

        match (c.postnet_mask, noise_rep) {
            (true, None) => return Err(invalid("mask-conditioned Post-Net needs a noise representation")),
            (false, Some(_)) => return Err(invalid("baseline Post-Net takes no noise representation")),
            _ => {}
        }
        if let Some(nr) = noise_rep {
            if nr.cols() != m || nr.rows() == 0 {
                return Err(invalid(format!("noise representation is {:?}, expected [_, {m}]", nr.shape())));
            }
        }

        let teacher = match mode {
            DecodeMode::TeacherForced(target) => {
                if target.cols() != m || target.rows() == 0 {
                    return Err(invalid("teacher target has the wrong width or no frames"));
                }
                if let Some(nr) = noise_rep {
                    if nr.rows() != target.rows() {
                        return Err(invalid(format!(
                            "noise representation has {} frames, target has {}",
                            nr.rows(),
                            target.rows()
                        )));
                    }
                }
                Some(self.norm.normalize(target))
            }
            _ => None,
        };
        let (valid, max_steps) = match mode {
            DecodeMode::TeacherForced(t) => (t.rows(), t.rows().div_ceil(r)),
            DecodeMode::Fixed(n) => {
                if n == 0 {
                    return Err(invalid("fixed-length decode of zero frames"));
                }
                (n, n.div_ceil(r))
            }
            DecodeMode::FreeRunning => (0, c.max_frames.div_ceil(r)),
        };

        let mut ctx = tape.constant(Tensor::zeros(&[1, c.encoder_out()]));
        let mut h_att = tape.constant(Tensor::zeros(&[1, c.attention_width]));
        let mut h_dec = tape.constant(Tensor::zeros(&[1, c.decoder_width]));
        let mut kappa = tape.constant(Tensor::zeros(&[k]));
        let mut prev = tape.constant(Tensor::zeros(&[1, m]));
        let mut frames = Vec::new();
        let mut stops = Vec::new();
        let mut alignments = Vec::new();
        let mut kappas = Vec::new();
        let mut stopped = false;

        for step in 0..max_steps {
            let mut pre = dense(p, "dec.prenet1", prev)?.relu();
            pre = self.dropout(pre, dropout_rng.as_deref_mut())?;
            pre = dense(p, "dec.prenet2", pre)?.relu();
            pre = self.dropout(pre, dropout_rng.as_deref_mut())?;
            let att_in = Var::concat(&[pre, ctx], 1)?;
            h_att = gru_step(p, "dec.att_rnn", dense(p, "dec.att_rnn.x", att_in)?, h_att)?;
            let head = dense(p, "dec.gmm", h_att)?;
            let (w, kap, _) = gmm_step(head, kappa, n_sym)?;
            kappa = kap;
            ctx = w.matmul(enc)?;
            let dec_in = Var::concat(&[h_att, ctx], 1)?;
            h_dec = gru_step(p, "dec.dec_rnn", dense(p, "dec.dec_rnn.x", dec_in)?, h_dec)?;
            let proj_in = Var::concat(&[h_dec, ctx], 1)?;
            let out = dense(p, "dec.proj", proj_in)?.reshape(&[r, m])?;
            let stop = dense(p, "dec.stop", proj_in)?;

            ActivationLog::record(&mut log, format!("step{step}.prenet"), pre);
            ActivationLog::record(&mut log, format!("step{step}.att_rnn"), h_att);
            ActivationLog::record(&mut log, format!("step{step}.weights"), w);
            ActivationLog::record(&mut log, format!("step{step}.dec_rnn"), h_dec);
            ActivationLog::record(&mut log, format!("step{step}.frames"), out);

            alignments.push(w.value().data().to_vec());
            kappas.push(kappa.value().data().to_vec());
            frames.push(out);
            stops.push(stop);

            prev = match &teacher {
                Some(t) => {
                    let row = ((step + 1) * r - 1).min(t.rows() - 1);
                    tape.constant(Tensor::new(&[1, m], t.row(row).to_vec())?)
                }
                None => out.slice(0, r - 1, 1)?,
            };
            if matches!(mode, DecodeMode::FreeRunning) && step > 0 && stop.item() > 0.0 {
                stopped = true;
                break;
            }
        }

        let before_z = Var::concat(&frames, 0)?;
        let padded = before_z.shape()[0];
        let valid = if matches!(mode, DecodeMode::FreeRunning) { padded } else { valid };
        let stop = Var::concat(&stops, 0)?.reshape(&[stops.len()])?;
        ActivationLog::record(&mut log, "before", before_z);

        let post_in = match noise_rep {
            Some(nr) => {
                let aligned = nr.resize_rows(padded);
                Var::concat(&[before_z, tape.constant(aligned.to_tensor())], 1)?
            }
            None => before_z,
        };
        let mut h = post_in;
        let pad = c.postnet_kernel / 2;
        for i in 0..c.postnet_layers {
            h = h.conv1d(p.get(&format!("post.conv{i}.w"))?, Some(p.get(&format!("post.conv{i}.b"))?), 1, pad)?;
            if i + 1 < c.postnet_layers {
                h = h.tanh();
            }
        }
        let after_z = before_z.add(h)?;
        let mean = tape.constant(Tensor::from_vec(self.norm.mean.clone()));
        let std = tape.constant(Tensor::from_vec(self.norm.std.clone()));
        Ok(DecodeGraph {
            before: before_z.mul(std)?.add(mean)?,
            after: after_z.mul(std)?.add(mean)?,
            stop,
            alignments,
            kappa: kappas,
            frames: valid,
            hit_max_frames: matches!(mode, DecodeMode::FreeRunning) && !stopped,
        })
    }

    fn dropout<'t>(&self, x: Var<'t>, rng: Option<&mut ChaCha8Rng>) -> Result<Var<'t>> {
        let rate = self.config.prenet_dropout;
        match rng {
            Some(rng) if rate > 0.0 => {
                let keep = 1.0 / (1.0 - rate);
                let mask: Vec<f64> = (0..x.value().numel())
                    .map(|_| if rng.random::<f64>() < rate { 0.0 } else { keep })
                    .collect();
                Ok(x.mul(x.tape().constant(Tensor::new(&x.shape(), mask)?))?)
            }
            _ => Ok(x),
        }
    }

    /// Inference: encode, decode and read back values.
    pub fn synthesize(
        &self,
        symbols: &SymbolSequence,
        spk: &SpeakerEmbedding,
        noise_rep: Option<&Grid>,
        mode: DecodeMode<'_>,
        log: Option<&mut ActivationLog>,
    ) -> Result<DecoderOutput> {
        let tape = Tape::new();
        let p = self.params.bind_frozen(&tape);
        let spk = tape.constant(Tensor::new(&[1, spk.dim()], spk.vector().to_vec())?);
        let enc = self.encode(&p, symbols, spk)?;
        let g = self.decode(&p, enc, noise_rep, mode, None, log)?;
        decoder_output(&g)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        save_checkpoint(path, &self.to_store())?;
        Ok(())
    }

    /// Parameters plus `meta.*` entries for normalization and lineage.
    pub fn to_store(&self) -> ParamStore {
        let mut store = self.params.clone();
        store.insert("meta.norm_mean", Tensor::from_vec(self.norm.mean.clone()));
        store.insert("meta.norm_std", Tensor::from_vec(self.norm.std.clone()));
        store.insert("meta.lineage", Tensor::from_vec(vec![self.lineage.code()]));
        store.insert(
            "meta.postnet_mask",
            Tensor::from_vec(vec![if self.config.postnet_mask { 1.0 } else { 0.0 }]),
        );
        store
    }

    pub fn from_store(config: TtsConfig, mut store: ParamStore) -> Result<Self> {
        let mut take = |name: &str| {
            store
                .remove(name)
                .ok_or_else(|| Error::Format(format!("tts checkpoint lacks `{name}`")))
        };
        let mean = take("meta.norm_mean")?.into_data();
        let std = take("meta.norm_std")?.into_data();
        let lineage = Lineage::from_code(take("meta.lineage")?.item())?;
        let mask = take("meta.postnet_mask")?.item() != 0.0;
        if mask != config.postnet_mask {
            return Err(Error::Config(format!(
                "checkpoint postnet_mask = {mask}, config says {}",
                config.postnet_mask
            )));
        }
        let mut model = TtsModel::new(config, LogMelNorm { mean, std }, 0)?;
        if store.len() != model.params.len() {
            return Err(Error::Format(format!(
                "tts checkpoint has {} tensors, expected {}",
                store.len(),
                model.params.len()
            )));
        }
        for (name, t) in model.params.iter() {
            let got = store
                .get(name)
                .ok_or_else(|| Error::Format(format!("tts checkpoint lacks `{name}`")))?;
            if got.shape() != t.shape() {
                return Err(Error::Format(format!("tts `{name}` has shape {:?}", got.shape())));
            }
        }
        model.params = store;
        model.lineage = lineage;
        Ok(model)
    }

    pub fn load(config: TtsConfig, path: impl AsRef<Path>) -> Result<Self> {
        Self::from_store(config, load_checkpoint(path)?)
    }
}

fn init_params(c: &TtsConfig, rng: &mut ChaCha8Rng) -> ParamStore {
    let mut s = ParamStore::new();
    insert_normal(&mut s, rng, "enc.embedding", &[VOCAB_SIZE, c.symbol_dim], 0.3);
    init_dense(&mut s, rng, "enc.prenet", c.symbol_dim, c.encoder_prenet, 0.0);
    init_dense(&mut s, rng, "enc.spk_a", c.speaker_dim, c.speaker_cond, 0.0);
    init_dense(&mut s, rng, "enc.spk_b", c.speaker_dim, 2 * c.encoder_gru, 0.0);
    init_dense(&mut s, rng, "enc.proj", c.encoder_prenet + c.speaker_cond, c.encoder_width, 0.0);
    for i in 0..c.highway_layers {
        init_highway(&mut s, rng, &format!("enc.hw{i}"), c.encoder_width);
    }
    init_gru(&mut s, rng, "enc.gru_f", c.encoder_width, c.encoder_gru);
    init_gru(&mut s, rng, "enc.gru_b", c.encoder_width, c.encoder_gru);

    let e = c.encoder_out();
    init_dense(&mut s, rng, "dec.prenet1", c.n_mels, c.prenet_hidden, 0.0);
    init_dense(&mut s, rng, "dec.prenet2", c.prenet_hidden, c.prenet_out, 0.0);
    init_gru(&mut s, rng, "dec.att_rnn", c.prenet_out + e, c.attention_width);
    init_dense(&mut s, rng, "dec.gmm", c.attention_width, 3 * c.mixtures, 0.0);
    {
        let b = s.get_mut("dec.gmm.b").expect("just inserted");
        let k = c.mixtures;
        b.data_mut()[k..2 * k].fill(c.delta_bias_init);
        b.data_mut()[2 * k..].fill(c.sigma_bias_init);
    }
    init_gru(&mut s, rng, "dec.dec_rnn", c.attention_width + e, c.decoder_width);
    init_dense(&mut s, rng, "dec.proj", c.decoder_width + e, c.reduction * c.n_mels, 0.0);
    init_dense(&mut s, rng, "dec.stop", c.decoder_width + e, 1, -2.0);

    for (i, (cin, cout)) in c.postnet_dims().into_iter().enumerate() {
        let last = i + 1 == c.postnet_layers;
        let std = if last { 0.01 } else { (1.0 / (c.postnet_kernel * cin) as f64).sqrt() };
        insert_normal(&mut s, rng, &format!("post.conv{i}.w"), &[c.postnet_kernel, cin, cout], std);
        crate::init::insert_full(&mut s, &format!("post.conv{i}.b"), &[cout], 0.0);
    }
    s
}

/// Reads values off a decode graph, dropping reduction padding.
pub fn decoder_output(g: &DecodeGraph<'_>) -> Result<DecoderOutput> {
    let trim = |v: Var<'_>| -> Result<Grid> {
        let full = Grid::from_tensor(&v.value())?;
        let cols = full.cols();
        Grid::new(g.frames, cols, full.data()[..g.frames * cols].to_vec())
    };
    let steps = g.alignments.len();
    Ok(DecoderOutput {
        before_mel: trim(g.before)?,
        after_mel: trim(g.after)?,
        stop_logits: g.stop.value().data().to_vec(),
        alignments: Grid::new(steps, g.alignments[0].len(), g.alignments.concat())?,
        kappa: Grid::new(steps, g.kappa[0].len(), g.kappa.concat())?,
        hit_max_frames: g.hit_max_frames,
    })
}

/// Stop targets: 1 on the final decoder step, 0 elsewhere.
pub fn stop_targets(steps: usize) -> Vec<f64> {
    (0..steps).map(|s| if s + 1 == steps { 1.0 } else { 0.0 }).collect()
}

/// Repeats the final row until the frame count is a multiple of `r`.
pub fn pad_to_reduction(g: &Grid, r: usize) -> Grid {
    g.resize_rows(g.rows().div_ceil(r) * r)
}

/// `mse(before, before_target) + mse(after, after_target) + bce(stop, stop_target)`
/// on the tape; targets are padded to the graph's frame count.
pub fn tts_loss_graph<'t>(
    before: Var<'t>,
    after: Var<'t>,
    stop: Var<'t>,
    before_target: &Grid,
    after_target: &Grid,
    stop_target: &[f64],
) -> Result<Var<'t>> {
    let tape = before.tape();
    let frames = before.shape()[0];
    let pad = |g: &Grid| -> Result<Var<'t>> {
        if g.rows() > frames {
            return Err(invalid(format!("target has {} frames, output {frames}", g.rows())));
        }
        Ok(tape.constant(g.resize_rows(frames).to_tensor()))
    };
    if stop_target.len() != stop.shape()[0] {
        return Err(invalid("stop target length differs from decoder steps"));
    }
    let b = before.mse(pad(before_target)?)?;
    let a = after.mse(pad(after_target)?)?;
    let s = stop.bce_with_logits(tape.constant(Tensor::from_vec(stop_target.to_vec())))?;
    Ok(b.add(a)?.add(s)?)
}

/// Value form of [`tts_loss_graph`] on a finished decoder output.
pub fn tts_loss(out: &DecoderOutput, before_target: &Grid, after_target: &Grid, stop_target: &[f64]) -> Result<f64> {
    out.before_mel.check_same(before_target, "tts_loss")?;
    out.after_mel.check_same(after_target, "tts_loss")?;
    let tape = Tape::new();
    let before = tape.constant(out.before_mel.to_tensor());
    let after = tape.constant(out.after_mel.to_tensor());
    let stop = tape.constant(Tensor::from_vec(out.stop_logits.clone()));
    Ok(tts_loss_graph(before, after, stop, before_target, after_target, stop_target)?.item())
}

