//! End-to-end runs: corpus, target, attacks, evaluation and artifacts.

use std::collections::BTreeSet;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context};
use mialab_core::attack::{extract_document_features, AttackVariant, OptimizationTrace};
use mialab_core::baselines::{probe_document, run_baseline, BaselineKind, DocumentProbe};
use mialab_core::blackbox::{build_query_dataset, distill_proxy, pretrain_proxy, BlackBoxHandle, ModelOracle};
use mialab_core::cluster::{build_descriptors, decide_membership, kmeans2, DirectionFeature, FeatureSelection};
use mialab_core::data::{generate_corpus, perturb_questions, Corpus, DocId, DocRecord, QAPair, Vocab};
use mialab_core::eval::{evaluate, permuted_label_control, traintest_gap, AttackOutput, EvalReport, MeanSd};
use mialab_core::model::{train, Example, ModelCheckpoint, Provenance, Seq2Seq, TrainReport};
use mialab_core::rng::{Seed, Stream};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::artifacts::{self, DescriptorRow, ReportRow};
use crate::checkpoint;
use crate::config::{hash_value, ExperimentConfig, ResolvedDp};
use crate::formats;
use crate::manifest::{sha256_hex, Manifest, RunDir};
use crate::oracle::SubprocessOracle;

/// Shuffles of the truth labels behind each permuted-label control.
pub const CONTROL_ROUNDS: usize = 200;

/// Error context naming the pipeline stage that failed.
#[derive(Debug, Clone, Copy, PartialEq, Eq, thiserror::Error)]
#[error("stage `{0}`")]
pub struct Stage(pub &'static str);

trait StageExt<T> {
    fn stage(self, name: &'static str) -> anyhow::Result<T>;
}

impl<T, E: Into<anyhow::Error>> StageExt<T> for Result<T, E> {
    fn stage(self, name: &'static str) -> anyhow::Result<T> {
        self.map_err(Into::into).context(Stage(name))
    }
}

pub fn corpus_hash(corpus: &Corpus) -> anyhow::Result<String> {
    let mut buf = Vec::new();
    formats::write_corpus(&mut buf, corpus)?;
    Ok(sha256_hex(&buf))
}

pub fn prepare_corpus(cfg: &ExperimentConfig) -> anyhow::Result<Corpus> {
    Ok(generate_corpus(&cfg.corpus, Seed(cfg.seed))?)
}

#[derive(Debug, Clone, PartialEq)]
pub struct Target {
    pub model: Seq2Seq,
    pub report: TrainReport,
    pub dp: Option<ResolvedDp>,
    pub checkpoint: Vec<u8>,
    pub cached: bool,
}

impl Target {
    pub fn hash(&self) -> String {
        sha256_hex(&self.checkpoint)
    }
}

#[derive(Serialize, Deserialize)]
struct CacheSidecar {
    report: TrainReport,
    dp: Option<ResolvedDp>,
}

/// Key of a trained target: the corpus plus everything that shapes training.
pub fn target_key(cfg: &ExperimentConfig, corpus_hash: &str) -> String {
    let v = serde_json::json!({
        "corpus": corpus_hash,
        "model": cfg.model,
        "train": cfg.train,
        "dp": cfg.dp,
        "seed": cfg.seed,
    });
    hash_value(&v)
}

/// Trains the target, or loads it from `cfg.cache_dir` when an identical
/// one was trained before.
pub fn train_target(cfg: &ExperimentConfig, corpus: &Corpus, corpus_hash: &str) -> anyhow::Result<Target> {
    let key = target_key(cfg, corpus_hash);
    let cache = cfg.cache_dir.as_ref().map(|d| (d.join(format!("{key}.ckpt")), d.join(format!("{key}.json"))));
    if let Some((ck, side)) = &cache {
        if ck.exists() && side.exists() {
            let bytes = std::fs::read(ck)?;
            let model = checkpoint::decode(&bytes)?.model;
            let sc: CacheSidecar = serde_json::from_str(&std::fs::read_to_string(side)?)?;
            log::info!("target {key} loaded from cache");
            return Ok(Target { model, report: sc.report, dp: sc.dp, checkpoint: bytes, cached: true });
        }
    }
    let examples: Vec<Example> = corpus.train_examples().into_iter().map(|(d, q)| Example::new(d, q)).collect();
    let (tc, dp) = cfg.train_config(examples.len())?;
    if let Some(dp) = &dp {
        log::info!("dp-sgd: sigma {:.4}, q {:.4}, {} steps, epsilon {:.3}", dp.config.noise_multiplier, dp.config.sampling_rate, dp.steps, dp.epsilon);
    }
    let mut model = Seq2Seq::new(cfg.model_config()?, &mut Stream::new(Seed(cfg.seed), "init"))?;
    let report = train(&mut model, &examples, &tc)?;
    let ck = ModelCheckpoint {
        model,
        provenance: Provenance {
            seed: Some(Seed(cfg.seed)),
            steps: report.steps,
            corpus_hash: Some(corpus_hash.into()),
            note: Some(format!("target {key}")),
        },
    };
    let bytes = checkpoint::encode(&ck)?;
    if let Some((ckp, side)) = &cache {
        std::fs::create_dir_all(ckp.parent().expect("cache file has a parent"))?;
        std::fs::write(ckp, &bytes)?;
        std::fs::write(side, serde_json::to_string(&CacheSidecar { report: report.clone(), dp: dp.clone() })?)?;
    }
    Ok(Target { model: ck.model, report, dp, checkpoint: bytes, cached: false })
}

/// Attack-set documents with the questions the attacker will ask.
pub struct AttackSet<'c> {
    pub records: Vec<&'c DocRecord>,
    pub truth: Vec<bool>,
    pub questions: Vec<Vec<QAPair>>,
    pub question_counts: Vec<usize>,
}

impl<'c> AttackSet<'c> {
    pub fn new(cfg: &ExperimentConfig, corpus: &'c Corpus) -> anyhow::Result<Self> {
        let vocab = corpus.vocab();
        let set = corpus.attack_set();
        let questions = set
            .iter()
            .map(|l| perturb_questions(&vocab, l.record, cfg.attack.perturbation))
            .collect::<Result<Vec<_>, _>>()?;
        Ok(AttackSet {
            records: set.iter().map(|l| l.record).collect(),
            truth: set.iter().map(|l| l.is_member).collect(),
            question_counts: set.iter().map(|l| l.record.qas.len()).collect(),
            questions,
        })
    }

    pub fn ids(&self) -> Vec<DocId> {
        self.records.iter().map(|r| r.id()).collect()
    }

    /// Members' and non-members' records as the attacker sees them.
    fn asked(&self) -> Vec<DocRecord> {
        self.records.iter().zip(&self.questions).map(|(r, q)| DocRecord { document: r.document.clone(), qas: q.clone() }).collect()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct AttackResult {
    pub report: EvalReport,
    pub predicted: Vec<bool>,
    pub scores: Vec<f64>,
    /// Balanced accuracy of these predictions against shuffled labels.
    pub control: MeanSd,
    pub traces: Option<Vec<(DocId, Vec<OptimizationTrace>)>>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunOutcome {
    pub results: Vec<AttackResult>,
    pub gap: Option<f64>,
    pub dp: Option<ResolvedDp>,
    pub oracle_queries: Option<usize>,
    pub manifest: Manifest,
    pub root: PathBuf,
}

impl RunOutcome {
    pub fn get(&self, attack: &str) -> Option<&AttackResult> {
        self.results.iter().find(|r| r.report.attack == attack)
    }

    pub fn rows(&self, run: &str) -> Vec<ReportRow> {
        self.results.iter().map(|r| ReportRow::new(run, &r.report)).collect()
    }
}

fn pool(jobs: usize) -> anyhow::Result<rayon::ThreadPool> {
    Ok(rayon::ThreadPoolBuilder::new().num_threads(jobs).build()?)
}

/// Per-question traces for every attack-set document, fanned out over
/// `jobs` workers. Output order follows the attack set.
pub fn extract_traces(
    cfg: &ExperimentConfig,
    model: &Seq2Seq,
    vocab: &Vocab,
    set: &AttackSet<'_>,
    variant: &AttackVariant,
) -> anyhow::Result<Vec<(DocId, Vec<OptimizationTrace>)>> {
    variant.validate(model)?;
    let hp = cfg.hyperparams_for(variant);
    pool(cfg.jobs)?.install(|| {
        set.records
            .par_iter()
            .zip(set.questions.par_iter())
            .map(|(r, q)| Ok((r.id(), extract_document_features(model, vocab, &r.document, q, variant, &hp)?)))
            .collect()
    })
}

fn file_stem(name: &str) -> String {
    let s: String = name.chars().map(|c| if c.is_ascii_alphanumeric() || c == '.' { c } else { '-' }).collect();
    s.trim_matches('-').replace("--", "-")
}

struct Ctx<'a> {
    cfg: &'a ExperimentConfig,
    config_hash: String,
    set: &'a AttackSet<'a>,
    gap: Option<f64>,
}

impl Ctx<'_> {
    fn finish(
        &self,
        name: &str,
        predicted: Vec<bool>,
        scores: Vec<f64>,
        restarts: &[Vec<bool>],
        traces: Option<Vec<(DocId, Vec<OptimizationTrace>)>>,
    ) -> anyhow::Result<AttackResult> {
        let out = AttackOutput {
            name,
            truth: &self.set.truth,
            predicted: &predicted,
            scores: &scores,
            question_counts: &self.set.question_counts,
            restart_predictions: restarts,
        };
        let report = evaluate(&out, self.cfg.seed, &self.config_hash, self.gap)?;
        let control = permuted_label_control(&self.set.truth, &predicted, CONTROL_ROUNDS, Seed(self.cfg.seed))?;
        Ok(AttackResult { report, predicted, scores, control, traces })
    }

    /// Clusters `traces` and writes the descriptor table.
    fn clustered(
        &self,
        name: &str,
        traces: Vec<(DocId, Vec<OptimizationTrace>)>,
        sel: &FeatureSelection,
        dir: Option<&mut RunDir>,
    ) -> anyhow::Result<AttackResult> {
        let ds = build_descriptors(&traces, sel)?;
        let direction = DirectionFeature::for_selection(sel);
        let points: Vec<Vec<f64>> = ds.iter().map(|d| d.vector.clone()).collect();
        let cr = kmeans2(&points, Seed(self.cfg.seed))?;
        let m = decide_membership(&cr.assignments, &cr.centroids, &ds, sel, direction)?;
        let restarts = cr
            .restarts
            .iter()
            .map(|r| decide_membership(&r.assignments, &r.centroids, &ds, sel, direction).map(|m| m.is_member))
            .collect::<Result<Vec<_>, _>>()?;
        if let Some(dir) = dir {
            let stem = file_stem(name);
            dir.write_with(&format!("traces/{stem}.jsonl"), |w| artifacts::write_traces(w, name, &traces))?;
            let rows: Vec<DescriptorRow<'_>> = ds
                .iter()
                .zip(&self.set.truth)
                .zip(m.scores.iter().zip(&m.is_member))
                .map(|((d, &t), (&score, &predicted))| DescriptorRow {
                    doc_id: d.doc_id,
                    truth: Some(t),
                    features: &d.raw,
                    score,
                    predicted,
                })
                .collect();
            dir.write_with(&format!("descriptors/{stem}.csv"), |w| artifacts::write_descriptors(w, &sel.column_names(), &rows))?;
        }
        self.finish(name, m.is_member, m.scores, &restarts, Some(traces))
    }
}

/// Every configured baseline on `target`; the Min-K family once per grid
/// fraction.
pub fn run_baselines(
    cfg: &ExperimentConfig,
    target: &Seq2Seq,
    vocab: &Vocab,
    set: &AttackSet<'_>,
) -> anyhow::Result<Vec<(String, Vec<bool>, Vec<f64>)>> {
    let hp = &cfg.attack.hyperparams;
    let probes: Vec<DocumentProbe> = pool(cfg.jobs)?.install(|| {
        set.records
            .par_iter()
            .zip(set.questions.par_iter())
            .map(|(r, q)| probe_document(target, vocab, &r.document, q, hp.utility, hp.max_questions))
            .collect::<Result<_, _>>()
    })?;
    let mut kinds: Vec<BaselineKind> = BaselineKind::all(1.0).into_iter().filter(|k| !k.is_grey_box()).collect();
    for &k in &cfg.baselines.min_k {
        kinds.push(BaselineKind::MinK { k });
    }
    for &k in &cfg.baselines.min_k {
        kinds.push(BaselineKind::MinKPlusPlus { k });
    }
    let mut out = Vec::new();
    for k in kinds {
        match run_baseline(k, &probes, Seed(cfg.seed)) {
            Ok(o) => out.push((o.name, o.is_member, o.scores)),
            // Clustering a constant statistic has no answer; the row is left out.
            Err(mialab_core::Error::DegenerateInput(why)) => log::warn!("baseline {} skipped: {why}", k.name()),
            Err(e) => return Err(e.into()),
        }
    }
    Ok(out)
}

fn write_reports(dir: &mut RunDir, results: &[AttackResult]) -> anyhow::Result<()> {
    let mut text = String::new();
    for r in results {
        text.push_str(&artifacts::render_report(&r.report));
        text.push_str(&format!("permuted-label control {:.4} ± {:.4}\n\n", r.control.mean, r.control.sd));
        dir.write_with(&format!("roc/{}.csv", file_stem(&r.report.attack)), |w| artifacts::write_roc(w, &r.report))?;
    }
    dir.write_bytes("report.txt", text.as_bytes())?;
    let rows: Vec<ReportRow> = results.iter().map(|r| ReportRow::new("", &r.report)).collect();
    dir.write_with("reports.csv", |w| artifacts::write_rows(w, &rows))?;
    let reports: Vec<&EvalReport> = results.iter().map(|r| &r.report).collect();
    dir.write_with("reports.json", |w| Ok(serde_json::to_writer_pretty(w, &reports)?))?;
    Ok(())
}

fn open_run(cfg: &ExperimentConfig, command: &str, root: &Path) -> anyhow::Result<RunDir> {
    let mut dir = RunDir::create(root, command, &cfg.hash(), cfg.seed)?;
    dir.write_with("config.json", |w| Ok(serde_json::to_writer_pretty(w, cfg)?))?;
    Ok(dir)
}

fn record_target(dir: &mut RunDir, corpus: &Corpus, target: &Target) -> anyhow::Result<()> {
    dir.write_with("corpus.jsonl", |w| formats::write_corpus(w, corpus))?;
    dir.write_bytes("target.ckpt", &target.checkpoint)?;
    dir.manifest.target_hash = Some(target.hash());
    if let Some(dp) = &target.dp {
        dir.manifest.epsilon = Some(dp.epsilon);
        dir.manifest.delta = Some(dp.config.delta);
        dir.manifest.noise_multiplier = Some(dp.config.noise_multiplier);
    }
    Ok(())
}

/// Runs the configured white-box attacks and baselines against a freshly
/// trained (or cached) target and writes every artifact to `output_dir`.
pub fn run_whitebox(cfg: &ExperimentConfig) -> anyhow::Result<RunOutcome> {
    cfg.validate().stage("config")?;
    let mut dir = open_run(cfg, "attack-whitebox", &cfg.output_dir).stage("output")?;
    let corpus = prepare_corpus(cfg).stage("corpus")?;
    let chash = corpus_hash(&corpus).stage("corpus")?;
    dir.manifest.corpus_hash = Some(chash.clone());
    let target = train_target(cfg, &corpus, &chash).stage("train")?;
    record_target(&mut dir, &corpus, &target).stage("output")?;
    let results = attack_target(cfg, &corpus, &target, Some(&mut dir))?;
    write_reports(&mut dir, &results.0).stage("output")?;
    let manifest = dir.finish().stage("output")?;
    Ok(RunOutcome {
        results: results.0,
        gap: Some(results.1),
        dp: target.dp,
        oracle_queries: None,
        manifest,
        root: cfg.output_dir.clone(),
    })
}

/// White-box attacks and baselines on an already trained target.
pub fn attack_target(
    cfg: &ExperimentConfig,
    corpus: &Corpus,
    target: &Target,
    mut dir: Option<&mut RunDir>,
) -> anyhow::Result<(Vec<AttackResult>, f64)> {
    let vocab = corpus.vocab();
    let set = AttackSet::new(cfg, corpus).stage("corpus")?;
    let members: Vec<&DocRecord> = set.records.iter().zip(&set.truth).filter(|(_, &t)| t).map(|(r, _)| *r).collect();
    let nonmembers: Vec<&DocRecord> = set.records.iter().zip(&set.truth).filter(|(_, &t)| !t).map(|(r, _)| *r).collect();
    let gap = traintest_gap(&target.model, &vocab, &members, &nonmembers, cfg.attack.hyperparams.utility).stage("evaluate")?;
    let ctx = Ctx { cfg, config_hash: cfg.hash(), set: &set, gap: Some(gap) };
    let sel = cfg.features().stage("config")?;
    let mut results = Vec::new();
    for variant in &cfg.attack.variants {
        let traces = extract_traces(cfg, &target.model, &vocab, &set, variant).stage("attack")?;
        results.push(ctx.clustered(&variant.label(), traces, &sel, dir.as_deref_mut()).stage("cluster")?);
    }
    if cfg.baselines.enabled {
        for (name, predicted, scores) in run_baselines(cfg, &target.model, &vocab, &set).stage("baselines")? {
            results.push(ctx.finish(&name, predicted, scores, &[], None).stage("evaluate")?);
        }
    }
    Ok((results, gap))
}

/// Label-only attack: queries the target (in process or through
/// `blackbox.oracle_command`), distills a proxy from a pretrained start and
/// runs the configured attacks on the proxy.
pub fn run_blackbox(cfg: &ExperimentConfig) -> anyhow::Result<RunOutcome> {
    cfg.validate().stage("config")?;
    let mut dir = open_run(cfg, "attack-blackbox", &cfg.output_dir).stage("output")?;
    let corpus = prepare_corpus(cfg).stage("corpus")?;
    let chash = corpus_hash(&corpus).stage("corpus")?;
    dir.manifest.corpus_hash = Some(chash.clone());
    dir.write_with("corpus.jsonl", |w| formats::write_corpus(w, &corpus)).stage("output")?;
    let vocab = corpus.vocab();
    let set = AttackSet::new(cfg, &corpus).stage("corpus")?;

    let (oracle, target): (Box<dyn mialab_core::blackbox::AnswerOracle + Send>, Option<Target>) =
        match &cfg.blackbox.oracle_command {
            Some(cmd) => (Box::new(SubprocessOracle::spawn(cmd).stage("oracle")?), None),
            None => {
                let t = train_target(cfg, &corpus, &chash).stage("train")?;
                (Box::new(ModelOracle::new(t.model.clone())), Some(t))
            }
        };
    if let Some(t) = &target {
        dir.manifest.target_hash = Some(t.hash());
        if let Some(dp) = &t.dp {
            dir.manifest.epsilon = Some(dp.epsilon);
        }
    }
    let mut handle = BlackBoxHandle::new(oracle, cfg.blackbox.budget);
    let asked = set.asked();
    let pool_ids: BTreeSet<DocId> = corpus.pretrain.iter().map(DocRecord::id).collect();
    if asked.iter().any(|r| pool_ids.contains(&r.id())) {
        return Err(anyhow::anyhow!("pretrain pool overlaps the attack set")).context(Stage("query"));
    }
    let asked_refs: Vec<&DocRecord> = asked.iter().collect();
    let queries = build_query_dataset(&mut handle, &asked_refs, cfg.attack.hyperparams.max_questions).stage("query")?;
    dir.manifest.oracle_queries = Some(handle.queries());
    dir.write_with("queries.jsonl", |w| formats::write_queries(w, &queries, cfg.seed)).stage("output")?;

    let pc = cfg.proxy_config().stage("config")?;
    let (proxy, _) = pretrain_proxy(&pc, &vocab, &corpus.pretrain).stage("pretrain")?;
    let dcfg = mialab_core::model::TrainConfig { seed: pc.seed, ..pc.distill.clone() };
    let (proxy, distill) = distill_proxy(proxy, &queries, &dcfg, |_, _, _| true).stage("distill")?;
    log::info!("proxy distilled in {} epochs, final loss {:?}", distill.epoch_losses.len(), distill.epoch_losses.last());
    let ck = ModelCheckpoint {
        model: proxy,
        provenance: Provenance { seed: Some(pc.seed), steps: distill.steps, corpus_hash: Some(chash), note: Some("proxy".into()) },
    };
    dir.write_bytes("proxy.ckpt", &checkpoint::encode(&ck).stage("output")?).stage("output")?;

    let gap = match &target {
        Some(t) => {
            let members: Vec<&DocRecord> = set.records.iter().zip(&set.truth).filter(|(_, &t)| t).map(|(r, _)| *r).collect();
            let non: Vec<&DocRecord> = set.records.iter().zip(&set.truth).filter(|(_, &t)| !t).map(|(r, _)| *r).collect();
            Some(traintest_gap(&t.model, &vocab, &members, &non, cfg.attack.hyperparams.utility).stage("evaluate")?)
        }
        None => None,
    };
    let ctx = Ctx { cfg, config_hash: cfg.hash(), set: &set, gap };
    let sel = cfg.features().stage("config")?;
    let mut results = Vec::new();
    for variant in &cfg.attack.variants {
        let traces = extract_traces(cfg, &ck.model, &vocab, &set, variant).stage("attack")?;
        let name = format!("proxy:{}", variant.label());
        results.push(ctx.clustered(&name, traces, &sel, Some(&mut dir)).stage("cluster")?);
    }
    write_reports(&mut dir, &results).stage("output")?;
    let oracle_queries = dir.manifest.oracle_queries;
    let manifest = dir.finish().stage("output")?;
    Ok(RunOutcome { results, gap, dp: target.and_then(|t| t.dp), oracle_queries, manifest, root: cfg.output_dir.clone() })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Axis {
    Lr,
    Tau,
    Layer,
    K,
    Features,
    DpEpsilon,
}

impl Axis {
    pub fn parse(s: &str) -> anyhow::Result<Self> {
        Ok(match s {
            "lr" => Axis::Lr,
            "tau" => Axis::Tau,
            "layer" => Axis::Layer,
            "k" => Axis::K,
            "features" => Axis::Features,
            "dp-epsilon" => Axis::DpEpsilon,
            other => bail!("unknown sweep axis `{other}`; expected lr, tau, layer, k, features or dp-epsilon"),
        })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SweepAxis {
    pub axis: Axis,
    pub name: String,
    pub values: Vec<String>,
}

impl SweepAxis {
    /// `name=v1;v2;..` (values may contain commas, as feature specs do).
    pub fn parse(spec: &str) -> anyhow::Result<Self> {
        let (name, vals) = spec.split_once('=').with_context(|| format!("sweep axis `{spec}` lacks `=`"))?;
        let sep = if vals.contains(';') { ';' } else if name == "features" { ';' } else { ',' };
        let values: Vec<String> = vals.split(sep).map(str::trim).filter(|v| !v.is_empty()).map(String::from).collect();
        if values.is_empty() {
            bail!("sweep axis `{name}` has no values");
        }
        Ok(SweepAxis { axis: Axis::parse(name)?, name: name.into(), values })
    }
}

/// `ig`/`input`, `lora:<layer>[:rank]` or a layer name.
pub fn parse_variant(s: &str) -> anyhow::Result<AttackVariant> {
    Ok(match s {
        "ig" | "input" => AttackVariant::Input,
        _ => match s.strip_prefix("lora:") {
            Some(rest) => {
                let (layer, rank) = match rest.rsplit_once(':') {
                    Some((l, r)) => (l, r.parse().with_context(|| format!("bad LoRA rank in `{s}`"))?),
                    None => (rest, 4),
                };
                AttackVariant::Lora { layer: layer.into(), rank }
            }
            None => AttackVariant::FullLayer { layer: s.into() },
        },
    })
}

fn apply_axis(cfg: &mut ExperimentConfig, axis: Axis, value: &str) -> anyhow::Result<()> {
    let num = || value.parse::<f64>().with_context(|| format!("`{value}` is not a number"));
    match axis {
        Axis::Lr => {
            cfg.attack.hyperparams.lr = num()?;
            cfg.attack.input_lr = num()?;
        }
        Axis::Tau => cfg.attack.hyperparams.tau = num()?,
        Axis::Layer => cfg.attack.variants = vec![parse_variant(value)?],
        Axis::K => cfg.baselines.min_k = vec![num()?],
        Axis::Features => cfg.attack.features = value.into(),
        Axis::DpEpsilon => {
            cfg.dp = if value == "inf" || value == "none" {
                None
            } else {
                Some(crate::config::DpSection { epsilon: Some(num()?), noise_multiplier: None, ..Default::default() })
            }
        }
    }
    Ok(())
}

/// One report row per grid point and attack. Targets are shared across
/// grid points unless the DP axis changes them.
pub fn run_sweep(cfg: &ExperimentConfig, axes: &[SweepAxis]) -> anyhow::Result<Vec<ReportRow>> {
    cfg.validate().stage("config")?;
    let mut dir = open_run(cfg, "sweep", &cfg.output_dir).stage("output")?;
    let corpus = prepare_corpus(cfg).stage("corpus")?;
    let chash = corpus_hash(&corpus).stage("corpus")?;
    dir.manifest.corpus_hash = Some(chash.clone());
    dir.write_with("corpus.jsonl", |w| formats::write_corpus(w, &corpus)).stage("output")?;

    let mut grid: Vec<Vec<(Axis, &str, &str)>> = vec![vec![]];
    for a in axes {
        grid = grid
            .into_iter()
            .flat_map(|point| a.values.iter().map(move |v| {
                let mut p = point.clone();
                p.push((a.axis, a.name.as_str(), v.as_str()));
                p
            }))
            .collect();
    }
    let only_baselines = !axes.is_empty() && axes.iter().all(|a| a.axis == Axis::K);
    let only_attacks = axes.iter().any(|a| matches!(a.axis, Axis::Lr | Axis::Tau | Axis::Layer | Axis::Features));
    let mut targets: Vec<(String, Target)> = Vec::new();
    let mut rows = Vec::new();
    for point in grid {
        let mut pcfg = cfg.clone();
        for &(axis, _, v) in &point {
            apply_axis(&mut pcfg, axis, v).stage("config")?;
        }
        pcfg.validate().stage("config")?;
        if only_baselines {
            pcfg.attack.variants.clear();
        }
        if only_attacks && !point.iter().any(|(a, _, _)| *a == Axis::K) {
            pcfg.baselines.enabled = false;
        }
        let label: String = point.iter().map(|(_, n, v)| format!("{n}={v}")).collect::<Vec<_>>().join(" ");
        let label = if label.is_empty() { "default".to_string() } else { label };
        let key = target_key(&pcfg, &chash);
        if !targets.iter().any(|(k, _)| *k == key) {
            log::info!("sweep point {label}: training target");
            targets.push((key.clone(), train_target(&pcfg, &corpus, &chash).stage("train")?));
        }
        let target = &targets.iter().find(|(k, _)| *k == key).expect("inserted above").1;
        let (results, _) = attack_target(&pcfg, &corpus, target, None)?;
        for r in &results {
            rows.push(ReportRow::new(&label, &r.report));
        }
        log::info!("sweep point {label} done");
    }
    dir.write_with("sweep.csv", |w| artifacts::write_rows(w, &rows)).stage("output")?;
    dir.write_bytes("sweep.txt", artifacts::render_table(&rows).as_bytes()).stage("output")?;
    dir.finish().stage("output")?;
    Ok(rows)
}
