use std::process::{Command, Output};

use maskvoice::pipeline::PipelineConfig;

fn maskvoice(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_maskvoice")).args(args).output().unwrap()
}

fn tiny_config() -> PipelineConfig {
    let mut cfg = PipelineConfig::default();
    let p = &mut cfg.pipeline;
    p.pretrain_speakers = 2;
    p.texts_per_speaker = 2;
    p.max_symbols = 3;
    p.enhancer_test_texts = 1;
    p.adapt_utterances = 2;
    p.heldout_texts = 1;
    cfg
}

#[test]
fn lists_every_subcommand() {
    let out = maskvoice(&["--help"]);
    assert!(out.status.success());
    let help = String::from_utf8_lossy(&out.stdout);
    for cmd in ["datagen", "augment", "train-enhancer", "eval-enhancer", "pretrain", "adapt", "synth", "eval-similarity"] {
        assert!(help.contains(cmd), "missing {cmd}");
    }
}

#[test]
fn datagen_writes_a_corpus_and_later_stages_need_one() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("cfg.json");
    std::fs::write(&cfg, tiny_config().to_json()).unwrap();
    let out_dir = dir.path().join("run");
    let (c, o) = (cfg.to_str().unwrap(), out_dir.to_str().unwrap());

    let missing = maskvoice(&["pretrain", "--config", c, "--out-dir", o]);
    assert!(!missing.status.success());
    assert!(String::from_utf8_lossy(&missing.stderr).contains("datagen"));

    let out = maskvoice(&["datagen", "--config", c, "--seed", "2", "--out-dir", o]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let manifest = std::fs::read_to_string(out_dir.join("corpus/manifest.json")).unwrap();
    assert!(manifest.contains("\"heldout\""));
    assert!(out_dir.join("corpus/wav").read_dir().unwrap().count() > 0);
    assert!(out_dir.join("corpus/mel").read_dir().unwrap().count() > 0);
}

#[test]
fn bad_config_is_reported() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("cfg.json");
    std::fs::write(&cfg, r#"{"pipeline": {"unknown_key": 1}}"#).unwrap();
    let out = maskvoice(&["datagen", "--config", cfg.to_str().unwrap(), "--out-dir", dir.path().to_str().unwrap()]);
    assert!(!out.status.success());
    assert!(String::from_utf8_lossy(&out.stderr).contains("loading config"));
    let augment = maskvoice(&["augment", "--out-dir", dir.path().to_str().unwrap()]);
    assert!(!augment.status.success());
}
