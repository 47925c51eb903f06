use std::path::Path;
use std::process::Command;

use mialab::artifacts::read_rows;
use mialab::pipeline::{run_blackbox, run_sweep, run_whitebox, SweepAxis};
use mialab::ExperimentConfig;

fn tiny(out: &Path) -> ExperimentConfig {
    ExperimentConfig::default()
        .with_overrides(&[
            "corpus.n_train=24",
            "corpus.n_member=8",
            "corpus.n_nonmember=8",
            "corpus.n_pretrain=12",
            "train.epochs=8",
            "attack.hyperparams.max_steps=15",
            "blackbox.proxy.pretrain.epochs=2",
            "blackbox.proxy.distill.epochs=3",
            "baselines.min_k=[0.8]",
        ])
        .map(|c| ExperimentConfig { output_dir: out.to_path_buf(), ..c })
        .unwrap()
}

fn output_hashes(m: &mialab::manifest::Manifest) -> Vec<(String, String)> {
    // config.json records the output directory itself.
    m.outputs.iter().filter(|e| e.path != "config.json").map(|e| (e.path.clone(), e.sha256.clone())).collect()
}

#[test]
fn whitebox_is_reproducible_and_complete() {
    let d = tempfile::tempdir().unwrap();
    let a = run_whitebox(&tiny(&d.path().join("a"))).unwrap();
    let b = run_whitebox(&tiny(&d.path().join("b"))).unwrap();
    assert_eq!(output_hashes(&a.manifest), output_hashes(&b.manifest));
    assert_eq!(a.results, b.results);
    assert!(mialab::manifest::verify(&d.path().join("a")).unwrap().is_empty());
    for f in ["config.json", "corpus.jsonl", "target.ckpt", "report.txt", "reports.csv", "reports.json"] {
        assert!(a.manifest.outputs.iter().any(|e| e.path == f), "{f} missing from manifest");
    }
    let rows = read_rows(&d.path().join("a/reports.csv")).unwrap();
    assert_eq!(rows.len(), a.results.len());
    assert_eq!(rows[0].attack, "fl[final-projection]");
    assert!(a.manifest.epsilon.is_none());
}

#[test]
fn single_feature_descriptor_table() {
    let d = tempfile::tempdir().unwrap();
    let mut cfg = tiny(d.path());
    cfg.attack.features = "avg:delta".into();
    cfg.baselines.enabled = false;
    let out = run_whitebox(&cfg).unwrap();
    assert_eq!(out.results.len(), 1);
    let text = std::fs::read_to_string(d.path().join("descriptors/fl-final-projection.csv")).unwrap();
    assert_eq!(text.lines().next().unwrap(), "doc_id,truth,avg(delta),score,predicted");
    assert_eq!(text.lines().count(), 1 + 16);
}

#[test]
fn cached_target_is_reused() {
    let d = tempfile::tempdir().unwrap();
    let mut cfg = tiny(&d.path().join("a"));
    cfg.cache_dir = Some(d.path().join("cache"));
    cfg.baselines.enabled = false;
    let a = run_whitebox(&cfg).unwrap();
    cfg.output_dir = d.path().join("b");
    let b = run_whitebox(&cfg).unwrap();
    assert_eq!(a.manifest.target_hash, b.manifest.target_hash);
    assert_eq!(a.results, b.results);
    assert_eq!(std::fs::read_dir(d.path().join("cache")).unwrap().count(), 2);
}

#[test]
fn dp_run_reports_epsilon() {
    let d = tempfile::tempdir().unwrap();
    let mut cfg = tiny(d.path()).with_overrides(&["dp.epsilon=8"]).unwrap();
    cfg.baselines.enabled = false;
    let out = run_whitebox(&cfg).unwrap();
    let eps = out.manifest.epsilon.unwrap();
    assert!((eps - 8.0).abs() < 0.05, "{eps}");
    assert!(out.manifest.noise_multiplier.unwrap() > 0.0);
}

#[test]
fn blackbox_counts_queries_and_matches_subprocess_oracle() {
    let d = tempfile::tempdir().unwrap();
    let cfg = tiny(&d.path().join("in"));
    let inproc = run_blackbox(&cfg).unwrap();
    let corpus = mialab::pipeline::prepare_corpus(&cfg).unwrap();
    let expected: usize =
        corpus.attack_set().iter().map(|l| l.record.qas.len().min(cfg.attack.hyperparams.max_questions)).sum();
    assert_eq!(inproc.oracle_queries, Some(expected));
    assert_eq!(inproc.manifest.oracle_queries, Some(expected));

    let ck = d.path().join("in/target.ckpt");
    let target = mialab::pipeline::train_target(&cfg, &corpus, &mialab::pipeline::corpus_hash(&corpus).unwrap()).unwrap();
    std::fs::write(&ck, &target.checkpoint).unwrap();
    let mut ext = tiny(&d.path().join("ext"));
    ext.blackbox.oracle_command = Some(vec![
        env!("CARGO_BIN_EXE_mialab").into(),
        "serve-oracle".into(),
        "--checkpoint".into(),
        ck.display().to_string(),
        "--corpus".into(),
        d.path().join("in/corpus.jsonl").display().to_string(),
    ]);
    let external = run_blackbox(&ext).unwrap();
    assert_eq!(external.oracle_queries, Some(expected));
    let q = |p: &Path| std::fs::read(p.join("queries.jsonl")).unwrap();
    assert_eq!(q(&d.path().join("in")), q(&d.path().join("ext")));
    for (a, b) in inproc.results.iter().zip(&external.results) {
        assert_eq!(a.predicted, b.predicted);
        assert_eq!(a.report.balanced_accuracy, b.report.balanced_accuracy);
    }
}

#[test]
fn blackbox_budget_is_enforced() {
    let d = tempfile::tempdir().unwrap();
    let mut cfg = tiny(d.path());
    cfg.blackbox.budget = Some(3);
    let err = run_blackbox(&cfg).unwrap_err();
    assert_eq!(err.downcast_ref::<mialab::Stage>(), Some(&mialab::Stage("query")));
}

#[test]
fn layer_sweep_emits_one_row_per_layer() {
    let d = tempfile::tempdir().unwrap();
    let mut cfg = tiny(d.path());
    cfg.baselines.enabled = false;
    let axis = SweepAxis::parse("layer=final-projection,dec.0.fc1,dec.0.fc2,enc.0.fc1").unwrap();
    let rows = run_sweep(&cfg, &[axis]).unwrap();
    assert_eq!(rows.len(), 4);
    assert_eq!(rows[2].attack, "fl[dec.0.fc2]");
    assert_eq!(read_rows(&d.path().join("sweep.csv")).unwrap(), rows);
}

#[test]
fn empty_sweep_is_the_default_run() {
    let d = tempfile::tempdir().unwrap();
    let cfg = tiny(&d.path().join("s"));
    let rows = run_sweep(&cfg, &[]).unwrap();
    let wb = run_whitebox(&tiny(&d.path().join("w"))).unwrap();
    assert_eq!(rows.len(), wb.results.len());
    for (r, w) in rows.iter().zip(&wb.results) {
        assert_eq!(r.attack, w.report.attack);
        assert_eq!(r.f1, w.report.f1);
    }
    assert!(SweepAxis::parse("alpha=1").is_err());
    assert!(SweepAxis::parse("lr=").is_err());
}

#[test]
fn cli_failure_is_stage_tagged() {
    let out = Command::new(env!("CARGO_BIN_EXE_mialab"))
        .args(["attack-whitebox", "--set", "corpus.n_member=1000"])
        .output()
        .unwrap();
    assert!(!out.status.success());
    let err = String::from_utf8_lossy(&out.stderr);
    assert!(err.contains("stage `config`"), "{err}");
}

#[test]
fn cli_gen_corpus_writes_a_readable_corpus() {
    let d = tempfile::tempdir().unwrap();
    let out = Command::new(env!("CARGO_BIN_EXE_mialab"))
        .args(["gen-corpus", "--set", "corpus.n_train=10", "--set", "corpus.n_member=4", "--seed", "3", "-o"])
        .arg(d.path())
        .output()
        .unwrap();
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let c = mialab::formats::load_corpus(&d.path().join("corpus.jsonl")).unwrap();
    assert_eq!((c.train.len(), c.members.len(), c.seed.0), (10, 4, 3));
    assert!(mialab::manifest::verify(d.path()).unwrap().is_empty());
}
