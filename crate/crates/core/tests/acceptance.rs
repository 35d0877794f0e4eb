//! End-to-end acceptance criteria. Each prints one PASS/FAIL line.

use std::io::Write;
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::Path;
use std::process::Command;
use std::time::{Duration, Instant};

use maskvoice::enhancer::{EnhancerConfig, EnhancerModel};
use maskvoice::grid::Grid;
use maskvoice::maskkit::{apply_mask, clean_conditioning, ideal_mask_from_grids, normalize_for_conditioning, normalize_value};
use maskvoice::pipeline::*;
use maskvoice::speaker::{EmbeddingLevel, SpeakerEmbedding};
use maskvoice::ttscore::{
    example_loss, ActivationLog, DecodeMode, LogMelNorm, SymbolSequence, TtsConfig, TtsExample, TtsModel,
};
use maskvoice::dsp::MelSpectrogram;
use maskvoice_autodiff::{grad_check, Bound, Result as AdResult, Tape, Tensor, Var};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

const SEED: u64 = 1;

type Verdict = std::result::Result<String, String>;

fn check(ok: bool, detail: String) -> Verdict {
    if ok {
        Ok(detail)
    } else {
        Err(detail)
    }
}

fn say(line: &str) {
    let mut out = std::io::stdout().lock();
    writeln!(out, "{line}").unwrap();
    out.flush().unwrap();
}

fn run_criterion(n: usize, name: &str, budget: Duration, f: impl FnOnce() -> Verdict) -> (usize, bool, String) {
    let t0 = Instant::now();
    let verdict = match catch_unwind(AssertUnwindSafe(f)) {
        Ok(v) => v,
        Err(e) => Err(format!(
            "panicked: {}",
            e.downcast_ref::<String>().cloned().or_else(|| e.downcast_ref::<&str>().map(|s| s.to_string())).unwrap_or_default()
        )),
    };
    let elapsed = t0.elapsed();
    let (pass, detail) = match verdict {
        Ok(d) if elapsed <= budget => (true, d),
        Ok(d) => (false, format!("{d}; over budget {budget:?}")),
        Err(d) => (false, d),
    };
    let line = format!(
        "criterion {n} [{name}]: {} in {:.1}s (budget {}s) {detail}",
        if pass { "PASS" } else { "FAIL" },
        elapsed.as_secs_f64(),
        budget.as_secs()
    );
    say(&line);
    (n, pass, line)
}

// ---------- criterion 1 ----------

fn random(rng: &mut ChaCha8Rng, shape: &[usize]) -> Tensor {
    let n = shape.iter().product();
    Tensor::new(shape, (0..n).map(|_| rng.random_range(-1.0..1.0)).collect()).unwrap()
}

fn weighted_sum<'t>(v: Var<'t>) -> AdResult<Var<'t>> {
    let n = v.value().numel();
    let w = Tensor::new(&v.shape(), (0..n).map(|i| 0.3 + 0.17 * i as f64).collect())?;
    Ok(v.mul(v.tape().constant(w))?.sum_all())
}

fn gradients_are_sound() -> Verdict {
    const H: f64 = 1e-5;
    const TOL: f64 = 1e-4;
    let mut worst: (f64, String) = (0.0, String::new());
    let mut failed = Vec::new();
    let mut graphs = 0;
    let mut run = |name: &str, inputs: &[Tensor], f: &dyn for<'t> Fn(&'t Tape, &[Var<'t>]) -> AdResult<Var<'t>>| {
        let r = grad_check(f, inputs, H, TOL).unwrap();
        graphs += 1;
        if r.max_rel_error > worst.0 {
            worst = (r.max_rel_error, name.to_string());
        }
        if !r.passed {
            failed.push(format!("{name} {:.2e}", r.max_rel_error));
        }
    };

    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let a = random(&mut rng, &[3, 4]);
    let b = random(&mut rng, &[4, 2]);
    let c = random(&mut rng, &[3, 4]);
    let row = random(&mut rng, &[4]);
    let pos = random(&mut rng, &[3, 4]).map(|x| 0.5 + x.abs());
    let narrow = random(&mut rng, &[3, 2]);
    let probs = pos.map(|x| x / 2.0);
    let seq = random(&mut rng, &[6, 3]);
    let w = random(&mut rng, &[3, 3, 2]);
    let bias = random(&mut rng, &[2]);
    let lin_w = random(&mut rng, &[4, 2]);
    let lin_b = random(&mut rng, &[2]);

    run("matmul", &[a.clone(), b.clone()], &|_, x| weighted_sum(x[0].matmul(x[1])?));
    run("linear", &[a.clone(), lin_w, lin_b], &|_, x| weighted_sum(x[0].linear(x[1], x[2])?));
    run("add", &[a.clone(), c.clone()], &|_, x| weighted_sum(x[0].add(x[1])?));
    run("add_broadcast", &[a.clone(), row.clone()], &|_, x| weighted_sum(x[0].add(x[1])?));
    run("sub", &[a.clone(), row.clone()], &|_, x| weighted_sum(x[0].sub(x[1])?));
    run("mul", &[a.clone(), c.clone()], &|_, x| weighted_sum(x[0].mul(x[1])?));
    run("div", &[a.clone(), pos.clone()], &|_, x| weighted_sum(x[0].div(x[1])?));
    run("scale", &[a.clone()], &|_, x| weighted_sum(x[0].scale(-2.5)));
    run("add_scalar", &[a.clone()], &|_, x| weighted_sum(x[0].add_scalar(0.7)));
    run("concat0", &[a.clone(), c.clone()], &|_, x| weighted_sum(Var::concat(&[x[0], x[1]], 0)?));
    run("concat1", &[a.clone(), narrow], &|_, x| weighted_sum(Var::concat(&[x[0], x[1]], 1)?));
    run("slice", &[a.clone()], &|_, x| weighted_sum(x[0].slice(1, 1, 2)?));
    run("reshape", &[a.clone()], &|_, x| weighted_sum(x[0].reshape(&[2, 6])?));
    run("transpose", &[a.clone()], &|_, x| weighted_sum(x[0].transpose()?));
    run("gather_rows", &[a.clone()], &|_, x| weighted_sum(x[0].gather_rows(&[2, 0, 2])?));
    run("sigmoid", &[a.clone()], &|_, x| weighted_sum(x[0].sigmoid()));
    run("tanh", &[a.clone()], &|_, x| weighted_sum(x[0].tanh()));
    run("relu", &[a.clone()], &|_, x| weighted_sum(x[0].relu()));
    run("softplus", &[a.map(|x| 4.0 * x)], &|_, x| weighted_sum(x[0].softplus()));
    run("exp", &[a.clone()], &|_, x| weighted_sum(x[0].exp()));
    run("log", &[pos.clone()], &|_, x| weighted_sum(x[0].log()));
    run("softmax0", &[a.clone()], &|_, x| weighted_sum(x[0].softmax(0)?));
    run("softmax1", &[a.clone()], &|_, x| weighted_sum(x[0].softmax(1)?));
    run("sum0", &[a.clone()], &|_, x| weighted_sum(x[0].sum(0)?));
    run("sum1", &[a.clone()], &|_, x| weighted_sum(x[0].sum(1)?));
    run("mean", &[a.clone()], &|_, x| Ok(x[0].mean()));
    run("mse", &[a.clone(), c.clone()], &|_, x| x[0].mse(x[1]));
    run("bce_with_logits", &[a.map(|x| 3.0 * x), probs], &|_, x| x[0].bce_with_logits(x[1]));
    run("conv1d", &[seq.clone(), w.clone(), bias.clone()], &|_, x| weighted_sum(x[0].conv1d(x[1], Some(x[2]), 1, 1)?));
    run("conv1d_dilated", &[seq, w, bias], &|_, x| weighted_sum(x[0].conv1d(x[1], Some(x[2]), 2, 2)?));

    // Whole enhancer loss graph on 6 frames.
    let ecfg = EnhancerConfig {
        n_mels: 5,
        conv_layers: 1,
        conv_channels: 4,
        dfsmn_layers: 2,
        dfsmn_channels: 3,
        dfsmn_hidden: 6,
        lookback: 2,
        lookahead: 1,
        head_bias_init: 0.3,
        ..EnhancerConfig::default()
    };
    let enh = EnhancerModel::new(ecfg, 4).unwrap();
    let clean = Grid::from_fn(6, 5, |_, _| rng.random_range(0.05..1.0));
    let noisy = clean.zip_map(&Grid::from_fn(6, 5, |_, _| rng.random_range(0.0..0.5)), "add", |a, b| a + b).unwrap();
    let names: Vec<String> = enh.params().iter().map(|(k, _)| k.clone()).collect();
    let inputs: Vec<Tensor> = enh.params().iter().map(|(_, v)| v.clone()).collect();
    run("enhancer loss graph", &inputs, &|_, v| {
        let p = Bound::from_vars(names.iter().cloned().zip(v.iter().copied()));
        Ok(enh.loss(&p, &noisy, &clean).unwrap())
    });

    // Whole TTS loss graph (before + after + stop) with and without the mask input.
    for mask in [true, false] {
        let cfg = TtsConfig {
            n_mels: 3,
            speaker_dim: 4,
            symbol_dim: 3,
            encoder_prenet: 4,
            speaker_cond: 2,
            encoder_width: 4,
            highway_layers: 1,
            encoder_gru: 3,
            prenet_hidden: 4,
            prenet_out: 3,
            attention_width: 5,
            decoder_width: 5,
            mixtures: 2,
            postnet_channels: 4,
            postnet_kernel: 3,
            postnet_mask: mask,
            max_frames: 40,
            ..TtsConfig::default()
        };
        let mut m = TtsModel::new(cfg, LogMelNorm::identity(3), 7).unwrap();
        // Zero biases would sit on a ReLU kink at the zero first decoder input.
        let names: Vec<String> = m.params().iter().map(|(k, _)| k.clone()).collect();
        for n in &names {
            for v in m.params_mut().get_mut(n).unwrap().data_mut() {
                if *v == 0.0 {
                    *v = rng.random_range(-0.2..0.2);
                }
            }
        }
        let grid = |rng: &mut ChaCha8Rng, lo: f64, hi: f64| Grid::from_fn(4, 3, |_, _| rng.random_range(lo..hi));
        let spk: Vec<f64> = (0..4).map(|_| rng.random_range(-1.0..1.0)).collect();
        let ex = TtsExample {
            symbols: SymbolSequence::new(vec![3, 11]).unwrap(),
            speaker: SpeakerEmbedding::normalized(spk, EmbeddingLevel::Speaker).unwrap(),
            noise_rep: mask.then(|| grid(&mut rng, 0.0, 1.0).map(normalize_value)),
            before_target: grid(&mut rng, -6.0, 0.0),
            after_target: grid(&mut rng, -6.0, 0.0),
        };
        let inputs: Vec<Tensor> = m.params().iter().map(|(_, v)| v.clone()).collect();
        run(&format!("tts loss graph (mask {mask})"), &inputs, &|_, v| {
            let p = Bound::from_vars(names.iter().cloned().zip(v.iter().copied()));
            Ok(example_loss(&m, &p, &ex, None).unwrap())
        });
    }
    check(
        failed.is_empty(),
        format!("{graphs} graphs, worst rel err {:.2e} ({}) {}", worst.0, worst.1, failed.join(", ")),
    )
}

// ---------- criterion 2 ----------

fn masks_are_exact() -> Verdict {
    let ends = [(1.0, 4.0), (0.1, -4.0), (0.1f64.sqrt(), 0.0)];
    let end_err = ends.iter().map(|&(m, want)| (normalize_value(m) - want).abs()).fold(0.0, f64::max);
    let mut worst = 0.0f64;
    for seed in 0..1000u64 {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let (rows, cols) = (rng.random_range(1..12), rng.random_range(1..41));
        let mut draw = || Grid::from_fn(rows, cols, |_, _| if rng.random_bool(0.1) { 0.0 } else { rng.random_range(0.0..10.0) });
        let s = draw();
        let n = draw();
        let mask = ideal_mask_from_grids(&s, &n).unwrap();
        let total = s.zip_map(&n, "add", |a, b| a + b).unwrap();
        let rec = apply_mask(&MelSpectrogram::new(total, 16000, 128).unwrap(), &mask).unwrap();
        for (r, sv) in rec.bins().data().iter().zip(s.data()) {
            let rel = if *sv == 0.0 { r.abs() } else { (r - sv).abs() / sv };
            worst = worst.max(rel);
        }
    }
    check(
        end_err <= 1e-9 && worst <= 1e-6,
        format!("normalize endpoint err {end_err:.1e}; reconstruction worst rel err {worst:.1e} over 1000 grids"),
    )
}

// ---------- shared trained fixture ----------

struct World {
    cfg: PipelineConfig,
    bcfg: PipelineConfig,
    corpus: Corpus,
    enhancer: EnhancerModel,
    enhancer_time: Duration,
    proposed: Option<AdaptOutput>,
    pretrained_proposed: Option<TtsModel>,
    baseline: Option<AdaptOutput>,
}

fn build_enhancer(world: &mut Option<World>) -> Verdict {
    let cfg = PipelineConfig::default();
    let mut bcfg = cfg.clone();
    bcfg.pipeline.mode = Mode::Baseline;
    let t0 = Instant::now();
    let corpus = generate_corpus(&cfg, SEED).map_err(|e| e.to_string())?;
    let (enhancer, _) = train_enhancer_stage(&cfg, &corpus, SEED).map_err(|e| e.to_string())?;
    let table = eval_enhancer_model(&cfg, &corpus, &enhancer).map_err(|e| e.to_string())?;
    let enhancer_time = t0.elapsed();
    *world = Some(World { cfg, bcfg, corpus, enhancer, enhancer_time, proposed: None, pretrained_proposed: None, baseline: None });

    let gain = |snr: f64| {
        table.iter().find(|r| r.snr_db == snr).map(|r| r.enhanced_si_sdr - r.noisy_si_sdr).unwrap_or(f64::NAN)
    };
    let outs: Vec<f64> = table.iter().map(|r| r.enhanced_si_sdr).collect();
    let monotone = outs.windows(2).all(|w| w[1] >= w[0]);
    let desc: Vec<String> = table
        .iter()
        .map(|r| format!("{:+}dB {:.2}->{:.2}", r.snr_db, r.noisy_si_sdr, r.enhanced_si_sdr))
        .collect();
    check(
        gain(-5.0) >= 3.0 && gain(5.0) >= 1.0 && monotone && table.len() == 3,
        format!("gain -5dB {:+.2}, +5dB {:+.2}; {}", gain(-5.0), gain(5.0), desc.join(", ")),
    )
}

fn mean_mse(v: &[(String, f64)]) -> f64 {
    v.iter().map(|x| x.1).sum::<f64>() / v.len() as f64
}

fn adaptation_beats_references(world: &mut Option<World>) -> Verdict {
    let w = world.as_mut().ok_or("enhancer fixture unavailable")?;
    let e = |x: maskvoice::Error| x.to_string();
    let t0 = Instant::now();
    let pre = run_pretrain(&w.cfg, &w.corpus, Some(&w.enhancer), SEED).map_err(e)?;
    let bpre = run_pretrain(&w.bcfg, &w.corpus, None, SEED).map_err(e)?;
    let prop = run_adapt(&w.cfg, &pre.model, &pre.speakers, &w.corpus, &w.enhancer, SEED).map_err(e)?;
    let base = run_adapt(&w.bcfg, &bpre.model, &bpre.speakers, &w.corpus, &w.enhancer, SEED).map_err(e)?;
    let spk = &prop.speaker.1;
    let clean = heldout_oracle_mse(&w.cfg, &prop.model, &w.corpus, &w.enhancer, spk, MaskMode::Clean).map_err(e)?;
    let reference = heldout_oracle_mse(&w.cfg, &prop.model, &w.corpus, &w.enhancer, spk, MaskMode::Reference).map_err(e)?;
    let baseline = heldout_oracle_mse(&w.bcfg, &base.model, &w.corpus, &w.enhancer, &base.speaker.1, MaskMode::Clean).map_err(e)?;
    let total = t0.elapsed() + w.enhancer_time;
    w.pretrained_proposed = Some(pre.model);
    w.proposed = Some(prop);
    w.baseline = Some(base);

    let (c, r, b) = (mean_mse(&clean), mean_mse(&reference), mean_mse(&baseline));
    let speakers = pre.speakers.len();
    check(
        speakers >= 4 && clean.len() >= 10 && c <= 0.8 * r && c <= 0.9 * b && total < Duration::from_secs(45 * 60),
        format!(
            "{speakers} pretraining speakers, {} held-out texts; log-mel MSE clean {c:.4}, reference {r:.4} ({:+.1}%), baseline {b:.4} ({:+.1}%); pipeline {:.0}s",
            clean.len(),
            100.0 * (c / r - 1.0),
            100.0 * (c / b - 1.0),
            total.as_secs_f64()
        ),
    )
}

// ---------- criterion 4 ----------

fn postnet_isolation(world: &Option<World>) -> Verdict {
    let mut models = vec![("untrained".to_string(), TtsModel::new(TtsConfig::default(), LogMelNorm::identity(40), SEED).unwrap())];
    let mut held = None;
    if let Some(w) = world {
        if let Some(m) = &w.pretrained_proposed {
            models.push(("pretrained".to_string(), m.clone()));
        }
        held = w.corpus.split(Split::Heldout).next().map(|p| {
            let oracle = log_grid(&w.cfg, &p.clean_mel);
            let mask = w.enhancer.enhance(&p.noisy.as_ref().unwrap().mel).unwrap();
            (p.symbols.clone(), oracle, normalize_for_conditioning(&mask).values().clone())
        });
    }
    let (symbols, target, noisy_rep) = held.unwrap_or_else(|| {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let t = Grid::from_fn(12, 40, |_, _| rng.random_range(-8.0..0.0));
        let n = Grid::from_fn(12, 40, |_, _| normalize_value(rng.random_range(0.0..1.0)));
        (SymbolSequence::from_text(&[4, 9, 2]).unwrap(), t, n)
    });
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let spk = SpeakerEmbedding::normalized((0..32).map(|_| rng.random_range(-1.0..1.0)).collect(), EmbeddingLevel::Speaker).unwrap();
    let clean_rep = clean_conditioning(target.rows(), 40).unwrap().values().clone();
    let mut notes = Vec::new();
    let mut ok = true;
    for (label, m) in &models {
        let run = |rep: &Grid| {
            let mut log = ActivationLog::default();
            let out = m.synthesize(&symbols, &spk, Some(rep), DecodeMode::TeacherForced(&target), Some(&mut log)).unwrap();
            (out, log)
        };
        let (co, cl) = run(&clean_rep);
        let (no, nl) = run(&noisy_rep);
        let same = cl == nl && co.before_mel == no.before_mel && co.stop_logits == no.stop_logits;
        let differs = co.after_mel != no.after_mel;
        ok &= same && differs && !cl.entries.is_empty();
        notes.push(format!("{label}: {} logged activations identical {same}, after differs {differs}", cl.entries.len()));
    }
    check(ok, notes.join("; "))
}

// ---------- criteria 6 and 7 ----------

fn similarity(world: &Option<World>) -> Verdict {
    let w = world.as_ref().ok_or("fixture unavailable")?;
    let adapted = w.proposed.as_ref().ok_or("adapted model unavailable")?;
    let pre = pretrain_speaker_embeddings(&w.cfg, &w.corpus).unwrap();
    let mut speakers = pre.clone();
    speakers.push(adapted.speaker.clone());
    let held: Vec<_> = w.corpus.split(Split::Heldout).collect();
    let synthesized: Vec<(String, Vec<Grid>)> = speakers
        .iter()
        .map(|(id, spk)| {
            let grids = held
                .iter()
                .map(|p| {
                    let frames = p.clean_mel.frames();
                    run_infer(&adapted.model, &p.symbols, spk, Conditioning::Clean, Some(frames)).unwrap().output.after_mel
                })
                .collect();
            (id.clone(), grids)
        })
        .collect();
    let training = training_log_mels(&w.cfg, &w.corpus, &w.enhancer).unwrap();
    let rows = eval_similarity(&embedder(&w.cfg), &synthesized, &training).unwrap();
    let own = eval_similarity(&embedder(&w.cfg), &training, &training).unwrap();
    let self_err = own.iter().map(|r| (r.cosine - 1.0).abs()).fold(0.0, f64::max);
    let all = rows.len() == speakers.len() && rows.iter().all(|r| r.cosine > 0.70);
    let desc: Vec<String> = rows.iter().map(|r| format!("{} {:.4}", r.speaker, r.cosine)).collect();
    check(all && self_err <= 1e-9, format!("{}; self-evaluation err {self_err:.1e}", desc.join(", ")))
}

fn attention_is_well_formed(world: &Option<World>) -> Verdict {
    let mut models = vec![TtsModel::new(TtsConfig::default(), LogMelNorm::identity(40), 11).unwrap()];
    if let Some(m) = world.as_ref().and_then(|w| w.proposed.as_ref()) {
        models.push(m.model.clone());
    }
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    let spk = SpeakerEmbedding::normalized((0..32).map(|_| rng.random_range(-1.0..1.0)).collect(), EmbeddingLevel::Speaker).unwrap();
    let (mut rows, mut worst_sum, mut negative, mut backward) = (0usize, 0.0f64, 0usize, 0usize);
    for m in &models {
        for k in 0..10 {
            let len = rng.random_range(1..7);
            let text: Vec<usize> = (0..len).map(|_| rng.random_range(1..16)).collect();
            let sym = SymbolSequence::from_text(&text).unwrap();
            let mode = if k % 2 == 0 { None } else { Some(30) };
            let out = run_infer(m, &sym, &spk, Conditioning::Clean, mode).unwrap().output;
            for r in 0..out.alignments.rows() {
                let row = out.alignments.row(r);
                negative += row.iter().filter(|&&v| v < 0.0).count();
                worst_sum = worst_sum.max((row.iter().sum::<f64>() - 1.0).abs());
                rows += 1;
            }
            for r in 1..out.kappa.rows() {
                backward += (0..out.kappa.cols()).filter(|&c| out.kappa.get(r, c) < out.kappa.get(r - 1, c)).count();
            }
        }
    }
    check(
        negative == 0 && worst_sum <= 1e-6 && backward == 0 && rows > 0,
        format!("{rows} alignment rows from {} models: negative {negative}, worst |sum-1| {worst_sum:.1e}, kappa decreases {backward}", models.len()),
    )
}

// ---------- criterion 8 ----------

fn small_cli_config() -> PipelineConfig {
    let mut cfg = PipelineConfig::default();
    cfg.enhancer.model = EnhancerConfig { conv_layers: 1, conv_channels: 8, dfsmn_layers: 1, dfsmn_channels: 16, dfsmn_hidden: 32, ..EnhancerConfig::default() };
    cfg.enhancer.train.steps = 100;
    cfg.tts = TtsConfig {
        speaker_dim: 8,
        symbol_dim: 16,
        encoder_prenet: 16,
        speaker_cond: 8,
        encoder_width: 16,
        highway_layers: 1,
        encoder_gru: 8,
        prenet_hidden: 16,
        prenet_out: 8,
        attention_width: 16,
        decoder_width: 32,
        mixtures: 2,
        postnet_layers: 1,
        postnet_channels: 8,
        max_frames: 120,
        ..TtsConfig::default()
    };
    let p = &mut cfg.pipeline;
    p.pretrain_speakers = 2;
    p.texts_per_speaker = 4;
    p.max_symbols = 4;
    p.enhancer_test_texts = 1;
    p.adapt_utterances = 4;
    p.heldout_texts = 2;
    p.pretrain.steps = 60;
    p.adapt.steps = 30;
    cfg
}

fn tree(dir: &Path) -> Vec<(String, Vec<u8>)> {
    let mut out = Vec::new();
    let mut stack = vec![dir.to_path_buf()];
    while let Some(d) = stack.pop() {
        for e in std::fs::read_dir(&d).unwrap() {
            let p = e.unwrap().path();
            if p.is_dir() {
                stack.push(p);
            } else {
                let rel = p.strip_prefix(dir).unwrap().to_string_lossy().into_owned();
                out.push((rel, std::fs::read(&p).unwrap()));
            }
        }
    }
    out.sort();
    out
}

fn cli_is_reproducible() -> Verdict {
    let tmp = tempfile::tempdir().unwrap();
    let cfg_path = tmp.path().join("config.json");
    std::fs::write(&cfg_path, small_cli_config().to_json()).unwrap();
    let stages = ["datagen", "pretrain", "adapt", "synth", "eval-similarity"];
    let mut trees = Vec::new();
    for run in ["a", "b"] {
        let out = tmp.path().join(run);
        for stage in stages {
            let status = Command::new(env!("CARGO_BIN_EXE_maskvoice"))
                .args([stage, "--config", cfg_path.to_str().unwrap(), "--seed", "5", "--out-dir", out.to_str().unwrap()])
                .output()
                .unwrap();
            if !status.status.success() {
                return Err(format!("{stage} failed: {}", String::from_utf8_lossy(&status.stderr)));
            }
        }
        trees.push(tree(&out));
    }
    let (a, b) = (&trees[0], &trees[1]);
    let key = |t: &[(String, Vec<u8>)]| {
        t.iter().filter(|(n, _)| n.ends_with(".csv") || n.ends_with(".ckpt")).count()
    };
    let mismatched: Vec<&str> = a.iter().zip(b).filter(|(x, y)| x != y).map(|(x, _)| x.0.as_str()).collect();
    let needed = ["similarity.csv", "synth.csv", "pretrain.ckpt", "adapt.ckpt", "speakers.ckpt"];
    let present = needed.iter().all(|n| a.iter().any(|(p, _)| p == n));
    check(
        a.len() == b.len() && mismatched.is_empty() && present,
        format!("{} files per run ({} csv/ckpt), byte-identical; mismatches: {:?}", a.len(), key(a), mismatched),
    )
}

#[test]
fn acceptance() {
    let mut results = Vec::new();
    let mut world: Option<World> = None;
    results.push(run_criterion(1, "autodiff gradient checks", Duration::from_secs(60), gradients_are_sound));
    results.push(run_criterion(2, "mask normalization and reconstruction", Duration::from_secs(5), masks_are_exact));
    results.push(run_criterion(3, "enhancer SI-SDR gains", Duration::from_secs(15 * 60), || build_enhancer(&mut world)));
    results.push(run_criterion(5, "noise-robust adaptation", Duration::from_secs(45 * 60), || adaptation_beats_references(&mut world)));
    results.push(run_criterion(4, "Post-Net isolation", Duration::from_secs(60), || postnet_isolation(&world)));
    results.push(run_criterion(6, "speaker similarity", Duration::from_secs(10 * 60), || similarity(&world)));
    results.push(run_criterion(7, "attention well-formed", Duration::from_secs(10 * 60), || attention_is_well_formed(&world)));
    results.push(run_criterion(8, "CLI reproducibility", Duration::from_secs(20 * 60), cli_is_reproducible));

    results.sort_by_key(|r| r.0);
    say("acceptance summary:");
    for (_, _, line) in &results {
        say(&format!("  {line}"));
    }
    let failed: Vec<usize> = results.iter().filter(|r| !r.1).map(|r| r.0).collect();
    assert!(failed.is_empty(), "failed criteria: {failed:?}");
}
