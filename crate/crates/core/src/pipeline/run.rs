//! File-level stage drivers behind the CLI subcommands. Every stage reads
//! and writes inside one output directory.

use std::path::{Path, PathBuf};

use super::config::PipelineConfig;
use super::data::{augment_corpus, generate_corpus, read_corpus, write_corpus, Corpus, Split};
use super::report::{write_csv, write_pgm, Cell};
use super::stages::{
    embedder, eval_enhancer_model, eval_similarity, log_grid, run_adapt, run_infer, run_pretrain,
    train_enhancer_stage, training_log_mels, Conditioning,
};
use super::MaskMode;
use crate::dsp::{read_grid_container, write_grid_container, GridContainer, MelAnalyzer, MELS_MAGIC};
use crate::enhancer::{EnhancerModel, LossCurve};
use crate::error::{invalid, Error, Result};
use crate::grid::Grid;
use crate::speaker::{load_embeddings, save_embeddings, EmbeddingLevel, SpeakerEmbedding};
use crate::ttscore::TtsModel;

/// Standard file locations under the output directory.
#[derive(Clone, Debug)]
pub struct Layout {
    out: PathBuf,
    cfg: PipelineConfig,
}

impl Layout {
    pub fn new(out_dir: impl AsRef<Path>, cfg: &PipelineConfig) -> Self {
        Layout {
            out: out_dir.as_ref().to_path_buf(),
            cfg: cfg.clone(),
        }
    }

    fn resolve(&self, over: &Option<PathBuf>, default: &str) -> PathBuf {
        match over {
            Some(p) if p.is_absolute() => p.clone(),
            Some(p) => self.out.join(p),
            None => self.out.join(default),
        }
    }

    pub fn corpus(&self) -> PathBuf {
        self.resolve(&self.cfg.pipeline.paths.corpus, "corpus")
    }

    pub fn enhancer(&self) -> PathBuf {
        self.resolve(&self.cfg.pipeline.paths.enhancer, "enhancer.ckpt")
    }

    pub fn pretrain(&self) -> PathBuf {
        self.resolve(&self.cfg.pipeline.paths.pretrain_checkpoint, "pretrain.ckpt")
    }

    pub fn adapt(&self) -> PathBuf {
        self.resolve(&self.cfg.pipeline.paths.adapt_checkpoint, "adapt.ckpt")
    }

    /// Adapted checkpoint when present, else the pretrained one.
    pub fn synth_checkpoint(&self) -> PathBuf {
        if self.cfg.pipeline.paths.synth_checkpoint.is_some() {
            return self.resolve(&self.cfg.pipeline.paths.synth_checkpoint, "");
        }
        let a = self.adapt();
        if a.exists() {
            a
        } else {
            self.pretrain()
        }
    }

    pub fn speakers(&self) -> PathBuf {
        self.out.join("speakers.ckpt")
    }

    pub fn new_speaker(&self) -> PathBuf {
        self.out.join("new_speaker.ckpt")
    }

    pub fn synth_dir(&self) -> PathBuf {
        self.out.join("synth")
    }

    pub fn file(&self, name: &str) -> PathBuf {
        self.out.join(name)
    }
}

fn write_curve(path: PathBuf, curve: &LossCurve) -> Result<()> {
    let rows: Vec<Vec<Cell>> = curve
        .losses
        .iter()
        .enumerate()
        .map(|(i, &l)| vec![i.into(), l.into()])
        .collect();
    write_csv(path, &["step", "loss"], &rows)
}

fn load_corpus(layout: &Layout) -> Result<Corpus> {
    let dir = layout.corpus();
    if !dir.join("manifest.json").exists() {
        return Err(Error::Config(format!(
            "no corpus at {}; run `datagen` or `augment` first",
            dir.display()
        )));
    }
    read_corpus(dir)
}

/// Loads the enhancer checkpoint, training and saving one when absent.
fn ensure_enhancer(cfg: &PipelineConfig, layout: &Layout, corpus: &Corpus, seed: u64) -> Result<(EnhancerModel, bool)> {
    let path = layout.enhancer();
    if path.exists() {
        return Ok((EnhancerModel::load(cfg.enhancer.model.clone(), &path)?, false));
    }
    let (model, curve) = train_enhancer_stage(cfg, corpus, seed)?;
    model.save(&path)?;
    write_curve(layout.file("enhancer_loss.csv"), &curve)?;
    Ok((model, true))
}

pub fn datagen(cfg: &PipelineConfig, seed: u64, out: &Path) -> Result<String> {
    let layout = Layout::new(out, cfg);
    let corpus = generate_corpus(cfg, seed)?;
    write_corpus(layout.corpus(), &corpus, cfg.dsp.sample_rate)?;
    Ok(format!(
        "wrote {} utterances for {} speakers to {}",
        corpus.entries.len(),
        corpus.speakers.len(),
        layout.corpus().display()
    ))
}

pub fn augment(cfg: &PipelineConfig, seed: u64, out: &Path) -> Result<String> {
    let layout = Layout::new(out, cfg);
    let input = cfg
        .pipeline
        .paths
        .augment_input
        .clone()
        .ok_or_else(|| Error::Config("augment needs pipeline.paths.augment_input".into()))?;
    let analyzer = MelAnalyzer::new(cfg.dsp.clone())?;
    let corpus = augment_corpus(&input, &analyzer, seed)?;
    write_corpus(layout.corpus(), &corpus, cfg.dsp.sample_rate)?;
    Ok(format!(
        "augmented {} utterances from {} into {}",
        corpus.entries.len(),
        input.display(),
        layout.corpus().display()
    ))
}

pub fn train_enhancer(cfg: &PipelineConfig, seed: u64, out: &Path) -> Result<String> {
    let layout = Layout::new(out, cfg);
    let corpus = load_corpus(&layout)?;
    let (model, curve) = train_enhancer_stage(cfg, &corpus, seed)?;
    model.save(layout.enhancer())?;
    write_curve(layout.file("enhancer_loss.csv"), &curve)?;
    Ok(format!(
        "enhancer: {} steps, loss {:.6} -> {:.6}",
        curve.losses.len(),
        curve.first().unwrap_or(f64::NAN),
        curve.last().unwrap_or(f64::NAN)
    ))
}

pub fn eval_enhancer(cfg: &PipelineConfig, seed: u64, out: &Path) -> Result<String> {
    let layout = Layout::new(out, cfg);
    let corpus = load_corpus(&layout)?;
    let (model, _) = ensure_enhancer(cfg, &layout, &corpus, seed)?;
    let table = eval_enhancer_model(cfg, &corpus, &model)?;
    let rows: Vec<Vec<Cell>> = table
        .iter()
        .map(|r| vec![r.snr_db.into(), r.noisy_si_sdr.into(), r.enhanced_si_sdr.into()])
        .collect();
    write_csv(layout.file("enhancer_eval.csv"), &["snr_db", "noisy_si_sdr_db", "enhanced_si_sdr_db"], &rows)?;
    let mut msg = String::from("snr  noisy  enhanced");
    for r in &table {
        msg.push_str(&format!("\n{:+.0}  {:.3}  {:.3}", r.snr_db, r.noisy_si_sdr, r.enhanced_si_sdr));
    }
    Ok(msg)
}

pub fn pretrain(cfg: &PipelineConfig, seed: u64, out: &Path) -> Result<String> {
    let layout = Layout::new(out, cfg);
    let corpus = load_corpus(&layout)?;
    let needs_enhancer = cfg.pipeline.mode == super::Mode::Proposed
        && cfg.pipeline.pretrain_masks == super::MaskSource::Predicted;
    let enhancer = if needs_enhancer {
        Some(ensure_enhancer(cfg, &layout, &corpus, seed)?.0)
    } else {
        None
    };
    let result = run_pretrain(cfg, &corpus, enhancer.as_ref(), seed)?;
    result.model.save(layout.pretrain())?;
    save_embeddings(layout.speakers(), &result.speakers)?;
    write_curve(layout.file("pretrain_loss.csv"), &result.curve)?;
    Ok(format!(
        "pretrain: {} speakers, {} steps, loss {:.6} -> {:.6}",
        result.speakers.len(),
        result.curve.losses.len(),
        result.curve.first().unwrap_or(f64::NAN),
        result.curve.last().unwrap_or(f64::NAN)
    ))
}

fn read_speakers(path: &Path) -> Result<Vec<(String, SpeakerEmbedding)>> {
    if !path.exists() {
        return Err(invalid(format!("speaker embedding file {} not found", path.display())));
    }
    load_embeddings(path, EmbeddingLevel::Speaker)
}

pub fn adapt(cfg: &PipelineConfig, seed: u64, out: &Path) -> Result<String> {
    let layout = Layout::new(out, cfg);
    let corpus = load_corpus(&layout)?;
    let pretrained = TtsModel::load(cfg.tts_config(), layout.pretrain())?;
    let speakers = read_speakers(&layout.speakers())?;
    let (enhancer, _) = ensure_enhancer(cfg, &layout, &corpus, seed)?;
    let result = run_adapt(cfg, &pretrained, &speakers, &corpus, &enhancer, seed)?;
    result.model.save(layout.adapt())?;
    save_embeddings(layout.new_speaker(), std::slice::from_ref(&result.speaker))?;
    write_curve(layout.file("adapt_loss.csv"), &result.curve)?;
    Ok(format!(
        "adapt: speaker {}, {} steps, loss {:.6} -> {:.6}",
        result.speaker.0,
        result.curve.losses.len(),
        result.curve.first().unwrap_or(f64::NAN),
        result.curve.last().unwrap_or(f64::NAN)
    ))
}

fn mels_container(cfg: &PipelineConfig, log_mel: &Grid) -> GridContainer {
    GridContainer {
        magic: MELS_MAGIC,
        grid: log_mel.map(f64::exp),
        sample_rate: cfg.dsp.sample_rate,
        frame_hop: cfg.dsp.frame_hop as u32,
    }
}

fn all_speakers(layout: &Layout) -> Result<Vec<(String, SpeakerEmbedding)>> {
    let mut speakers = read_speakers(&layout.speakers())?;
    if layout.new_speaker().exists() {
        speakers.extend(read_speakers(&layout.new_speaker())?);
    }
    Ok(speakers)
}

/// Synthesizes every held-out text for every known speaker.
pub fn synth(cfg: &PipelineConfig, seed: u64, out: &Path) -> Result<String> {
    let layout = Layout::new(out, cfg);
    let corpus = load_corpus(&layout)?;
    let model = TtsModel::load(cfg.tts_config(), layout.synth_checkpoint())?;
    let speakers = all_speakers(&layout)?;
    let enhancer = match cfg.pipeline.synth_mask {
        MaskMode::Reference => Some(ensure_enhancer(cfg, &layout, &corpus, seed)?.0),
        MaskMode::Clean => None,
    };
    let held: Vec<_> = corpus.split(Split::Heldout).collect();
    let new_id = corpus.new_speaker()?.id.clone();
    let mut rows = Vec::new();
    for (spk_id, spk) in &speakers {
        let dir = layout.synth_dir().join(spk_id);
        std::fs::create_dir_all(&dir)?;
        for p in &held {
            let oracle = log_grid(cfg, &p.clean_mel);
            let mask;
            let cond = match &enhancer {
                Some(e) => {
                    let noisy = p
                        .noisy
                        .as_ref()
                        .ok_or_else(|| invalid(format!("{} has no noisy reference", p.id)))?;
                    mask = e.enhance(&noisy.mel)?;
                    Conditioning::Reference(&mask)
                }
                None => Conditioning::Clean,
            };
            let s = run_infer(&model, &p.symbols, spk, cond, Some(oracle.rows()))?;
            let o = &s.output;
            let stem = dir.join(&p.id);
            let with = |suffix: &str| {
                let mut s = stem.as_os_str().to_owned();
                s.push(suffix);
                PathBuf::from(s)
            };
            write_grid_container(with("_after.mels"), &mels_container(cfg, &o.after_mel))?;
            write_grid_container(with("_before.mels"), &mels_container(cfg, &o.before_mel))?;
            write_pgm(with("_after.pgm"), &o.after_mel)?;
            write_pgm(with("_align.pgm"), &o.alignments)?;
            let mse = if *spk_id == new_id {
                Cell::Num(o.after_mel.mse(&oracle)?)
            } else {
                Cell::Text(String::new())
            };
            rows.push(vec![spk_id.clone().into(), p.id.clone().into(), o.after_mel.rows().into(), mse]);
        }
    }
    write_csv(layout.file("synth.csv"), &["speaker", "utterance", "frames", "oracle_log_mel_mse"], &rows)?;
    Ok(format!("synthesized {} utterances into {}", rows.len(), layout.synth_dir().display()))
}

fn read_synth_log_mels(cfg: &PipelineConfig, dir: &Path) -> Result<Vec<Grid>> {
    if !dir.exists() {
        return Ok(Vec::new());
    }
    let mut files: Vec<PathBuf> = std::fs::read_dir(dir)?
        .map(|e| e.map(|e| e.path()))
        .collect::<std::io::Result<_>>()?;
    files.retain(|f| f.to_string_lossy().ends_with("_after.mels"));
    files.sort();
    files
        .iter()
        .map(|f| {
            let c = read_grid_container(f)?;
            Ok(c.grid.map(|x| x.max(cfg.dsp.log_floor).ln()))
        })
        .collect()
}

pub fn eval_similarity_cmd(cfg: &PipelineConfig, seed: u64, out: &Path) -> Result<String> {
    let layout = Layout::new(out, cfg);
    let corpus = load_corpus(&layout)?;
    let (enhancer, _) = ensure_enhancer(cfg, &layout, &corpus, seed)?;
    let speakers = all_speakers(&layout)?;
    let synthesized = speakers
        .iter()
        .map(|(id, _)| Ok((id.clone(), read_synth_log_mels(cfg, &layout.synth_dir().join(id))?)))
        .collect::<Result<Vec<_>>>()?;
    let training = training_log_mels(cfg, &corpus, &enhancer)?;
    let table = eval_similarity(&embedder(cfg), &synthesized, &training)?;
    let rows: Vec<Vec<Cell>> = table
        .iter()
        .map(|r| {
            vec![
                r.speaker.clone().into(),
                r.cosine.into(),
                (if r.same_speaker { "true" } else { "false" }).into(),
                r.synthesized.into(),
                r.training.into(),
            ]
        })
        .collect();
    write_csv(
        layout.file("similarity.csv"),
        &["speaker", "cosine", "same_speaker", "synthesized", "training"],
        &rows,
    )?;
    let mut msg = String::from("speaker  cosine");
    for r in &table {
        msg.push_str(&format!("\n{}  {:.4}", r.speaker, r.cosine));
    }
    Ok(msg)
}
