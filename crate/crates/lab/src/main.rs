use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::Context;
use clap::{Args, Parser, Subcommand};
use mialab::artifacts::{read_rows, render_table};
use mialab::config::ExperimentConfig;
use mialab::manifest::RunDir;
use mialab::pipeline::{self, Stage, SweepAxis};
use mialab::{checkpoint, formats, oracle};

/// Document-level membership inference experiments on a toy document
/// question-answering model.
#[derive(Parser)]
#[command(name = "mialab", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Clone)]
struct Common {
    /// Experiment config (JSON); defaults apply to absent keys.
    #[arg(long, short)]
    config: Option<PathBuf>,
    /// Override a config key, e.g. `--set train.epochs=40`. Repeatable.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    overrides: Vec<String>,
    /// Master seed (overrides the config).
    #[arg(long)]
    seed: Option<u64>,
    /// Output directory (overrides the config).
    #[arg(long, short)]
    out: Option<PathBuf>,
    /// Worker threads for per-document extraction; 0 uses every core.
    #[arg(long)]
    jobs: Option<usize>,
    /// Reuse trained targets from this directory.
    #[arg(long)]
    cache_dir: Option<PathBuf>,
}

impl Common {
    fn load(&self) -> anyhow::Result<ExperimentConfig> {
        let base = match &self.config {
            Some(p) => ExperimentConfig::load(p)?,
            None => ExperimentConfig::default(),
        };
        let mut cfg = base.with_overrides(&self.overrides)?;
        if let Some(s) = self.seed {
            cfg.seed = s;
        }
        if let Some(o) = &self.out {
            cfg.output_dir = o.clone();
        }
        if let Some(j) = self.jobs {
            cfg.jobs = j;
        }
        if let Some(c) = &self.cache_dir {
            cfg.cache_dir = Some(c.clone());
        }
        cfg.validate()?;
        Ok(cfg)
    }
}

#[derive(Subcommand)]
enum Command {
    /// Generate the synthetic corpus and write it as JSON lines.
    GenCorpus {
        #[command(flatten)]
        common: Common,
    },
    /// Train the target model and write its checkpoint.
    TrainTarget {
        #[command(flatten)]
        common: Common,
    },
    /// Run the white-box attacks and baselines.
    AttackWhitebox {
        #[command(flatten)]
        common: Common,
        /// Feature spec, e.g. `avg:delta` or `all:delta,all:steps`.
        #[arg(long)]
        features: Option<String>,
        /// Attack variant: a layer name, `lora:<layer>[:rank]` or `ig`. Repeatable.
        #[arg(long = "variant")]
        variants: Vec<String>,
    },
    /// Query the target as a label-only oracle, distill a proxy and attack it.
    AttackBlackbox {
        #[command(flatten)]
        common: Common,
        /// Shape the proxy like the target.
        #[arg(long)]
        matched: bool,
        /// Maximum number of oracle queries.
        #[arg(long)]
        budget: Option<usize>,
        /// External answerer command speaking the line protocol.
        #[arg(long, num_args = 1.., allow_hyphen_values = true)]
        oracle: Option<Vec<String>>,
    },
    /// Grid over attack settings on a shared corpus and target.
    Sweep {
        #[command(flatten)]
        common: Common,
        /// `axis=v1,v2,..` with axis one of lr, tau, layer, k, features
        /// (values separated by `;`) or dp-epsilon (`inf` for none). Repeatable.
        #[arg(long = "axis")]
        axes: Vec<String>,
    },
    /// Print a table of the report rows of one or more runs.
    Report {
        /// Run directories or `reports.csv`/`sweep.csv` files.
        #[arg(required = true)]
        runs: Vec<PathBuf>,
    },
    /// Answer line-protocol requests on stdin with a checkpoint.
    ServeOracle {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        corpus: PathBuf,
    },
}

fn run(cli: Cli) -> anyhow::Result<()> {
    match cli.command {
        Command::GenCorpus { common } => {
            let cfg = common.load().context(Stage("config"))?;
            let corpus = pipeline::prepare_corpus(&cfg).context(Stage("corpus"))?;
            let mut dir = RunDir::create(&cfg.output_dir, "gen-corpus", &cfg.hash(), cfg.seed)?;
            dir.write_with("corpus.jsonl", |w| formats::write_corpus(w, &corpus))?;
            dir.manifest.corpus_hash = Some(pipeline::corpus_hash(&corpus)?);
            dir.finish()?;
            println!("{}", cfg.output_dir.join("corpus.jsonl").display());
        }
        Command::TrainTarget { common } => {
            let cfg = common.load().context(Stage("config"))?;
            let corpus = pipeline::prepare_corpus(&cfg).context(Stage("corpus"))?;
            let chash = pipeline::corpus_hash(&corpus)?;
            let target = pipeline::train_target(&cfg, &corpus, &chash).context(Stage("train"))?;
            let mut dir = RunDir::create(&cfg.output_dir, "train-target", &cfg.hash(), cfg.seed)?;
            dir.manifest.corpus_hash = Some(chash);
            dir.manifest.target_hash = Some(target.hash());
            if let Some(dp) = &target.dp {
                dir.manifest.epsilon = Some(dp.epsilon);
                dir.manifest.delta = Some(dp.config.delta);
                dir.manifest.noise_multiplier = Some(dp.config.noise_multiplier);
            }
            dir.write_with("config.json", |w| Ok(serde_json::to_writer_pretty(w, &cfg)?))?;
            dir.write_with("corpus.jsonl", |w| formats::write_corpus(w, &corpus))?;
            dir.write_bytes("target.ckpt", &target.checkpoint)?;
            dir.write_with("training.json", |w| Ok(serde_json::to_writer_pretty(w, &target.report)?))?;
            dir.finish()?;
            println!(
                "final loss {:.4} after {} steps",
                target.report.epoch_losses.last().copied().unwrap_or(f64::NAN),
                target.report.steps
            );
        }
        Command::AttackWhitebox { common, features, variants } => {
            let mut cfg = common.load().context(Stage("config"))?;
            if let Some(f) = features {
                cfg.attack.features = f;
            }
            if !variants.is_empty() {
                cfg.attack.variants =
                    variants.iter().map(|v| pipeline::parse_variant(v)).collect::<anyhow::Result<_>>()?;
            }
            let out = pipeline::run_whitebox(&cfg)?;
            print!("{}", render_table(&out.rows("whitebox")));
        }
        Command::AttackBlackbox { common, matched, budget, oracle } => {
            let mut cfg = common.load().context(Stage("config"))?;
            cfg.blackbox.matched |= matched;
            if budget.is_some() {
                cfg.blackbox.budget = budget;
            }
            if oracle.is_some() {
                cfg.blackbox.oracle_command = oracle;
            }
            let out = pipeline::run_blackbox(&cfg)?;
            print!("{}", render_table(&out.rows("blackbox")));
            println!("oracle queries: {}", out.oracle_queries.unwrap_or(0));
        }
        Command::Sweep { common, axes } => {
            let cfg = common.load().context(Stage("config"))?;
            let axes = axes.iter().map(|a| SweepAxis::parse(a)).collect::<anyhow::Result<Vec<_>>>().context(Stage("config"))?;
            let rows = pipeline::run_sweep(&cfg, &axes)?;
            print!("{}", render_table(&rows));
        }
        Command::Report { runs } => {
            let mut rows = Vec::new();
            for r in runs {
                let path = if r.is_dir() {
                    let sweep = r.join("sweep.csv");
                    if sweep.exists() { sweep } else { r.join("reports.csv") }
                } else {
                    r.clone()
                };
                let mut rs = read_rows(&path)?;
                for row in &mut rs {
                    if row.run.is_empty() {
                        row.run = r.display().to_string();
                    }
                }
                rows.extend(rs);
            }
            print!("{}", render_table(&rows));
        }
        Command::ServeOracle { checkpoint: ck, corpus } => {
            let model = checkpoint::load(&ck)?.model;
            let corpus = formats::load_corpus(&corpus)?;
            let docs = corpus.train.iter().chain(&corpus.nonmembers).chain(&corpus.pretrain);
            let stdin = std::io::stdin().lock();
            let stdout = std::io::stdout().lock();
            let n = oracle::serve(&model, docs, stdin, stdout)?;
            log::info!("served {n} requests");
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("mialab: {e:#}");
            ExitCode::FAILURE
        }
    }
}
