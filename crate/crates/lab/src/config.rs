//! Experiment configuration: one JSON document, every field defaulted,
//! with dotted-path overrides and a content hash.

use std::path::{Path, PathBuf};

use anyhow::{bail, Context};
use mialab_core::attack::{AttackHyperparams, AttackVariant};
use mialab_core::blackbox::ProxyConfig;
use mialab_core::cluster::FeatureSelection;
use mialab_core::data::{CorpusConfig, PerturbationSpec};
use mialab_core::dp::{account_epsilon, noise_for_epsilon, DpConfig};
use mialab_core::model::{ModelConfig, TrainConfig};
use mialab_core::rng::Seed;
use serde::{Deserialize, Serialize};
use serde_json::Value;
use sha2::{Digest, Sha256};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentConfig {
    /// Master seed; every random stream derives from it.
    pub seed: u64,
    pub corpus: CorpusConfig,
    /// `vocab_size` is taken from the corpus.
    pub model: ModelConfig,
    pub train: TrainSection,
    pub dp: Option<DpSection>,
    pub attack: AttackSection,
    pub baselines: BaselineSection,
    pub blackbox: BlackBoxSection,
    pub output_dir: PathBuf,
    /// Trained targets are cached here when set.
    pub cache_dir: Option<PathBuf>,
    /// Worker threads for per-document extraction; 0 picks the core count.
    pub jobs: usize,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        ExperimentConfig {
            seed: 0,
            corpus: CorpusConfig::default(),
            model: ModelConfig::default(),
            train: TrainSection::default(),
            dp: None,
            attack: AttackSection::default(),
            baselines: BaselineSection::default(),
            blackbox: BlackBoxSection::default(),
            output_dir: PathBuf::from("runs/default"),
            cache_dir: None,
            jobs: 1,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainSection {
    pub epochs: usize,
    pub batch_size: usize,
    pub lr: f64,
    pub loss_floor: Option<f64>,
}

impl Default for TrainSection {
    fn default() -> Self {
        let t = TrainConfig::default();
        TrainSection { epochs: t.epochs, batch_size: t.batch_size, lr: t.lr, loss_floor: t.loss_floor }
    }
}

/// Private training. Give either a target `epsilon` or an explicit
/// `noise_multiplier`; `delta` defaults to one over ten times the number of
/// training examples.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DpSection {
    pub epsilon: Option<f64>,
    pub noise_multiplier: Option<f64>,
    pub clip_norm: f64,
    pub delta: Option<f64>,
}

impl Default for DpSection {
    fn default() -> Self {
        DpSection { epsilon: Some(8.0), noise_multiplier: None, clip_norm: 1.0, delta: None }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AttackSection {
    pub variants: Vec<AttackVariant>,
    pub hyperparams: AttackHyperparams,
    /// Learning rate used instead of `hyperparams.lr` for the input variant.
    pub input_lr: f64,
    /// Feature spec such as `all:delta,all:steps,all:utility`.
    pub features: String,
    pub perturbation: PerturbationSpec,
}

impl Default for AttackSection {
    fn default() -> Self {
        AttackSection {
            variants: vec![AttackVariant::final_projection()],
            hyperparams: AttackHyperparams::default(),
            input_lr: 1e-2,
            features: "all:delta,all:steps,all:utility".into(),
            perturbation: PerturbationSpec::EXACT,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct BaselineSection {
    pub enabled: bool,
    /// Min-K fractions tried; each gets its own report row.
    pub min_k: Vec<f64>,
}

impl Default for BaselineSection {
    fn default() -> Self {
        BaselineSection { enabled: true, min_k: vec![0.6, 0.7, 0.8, 0.9, 1.0] }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct BlackBoxSection {
    pub proxy: ProxyConfig,
    /// Shape the proxy exactly like the target, ignoring `proxy.model`.
    pub matched: bool,
    pub budget: Option<usize>,
    /// External answerer speaking the line protocol; the in-process target
    /// is used when absent.
    pub oracle_command: Option<Vec<String>>,
}

impl Default for BlackBoxSection {
    fn default() -> Self {
        BlackBoxSection { proxy: ProxyConfig::default(), matched: false, budget: None, oracle_command: None }
    }
}

impl ExperimentConfig {
    pub fn load(path: &Path) -> anyhow::Result<Self> {
        let text = std::fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
        serde_json::from_str(&text).with_context(|| format!("parsing {}", path.display()))
    }

    /// Applies `key.path=value` overrides. Values parse as JSON and fall
    /// back to plain strings.
    pub fn with_overrides<S: AsRef<str>>(self, overrides: &[S]) -> anyhow::Result<Self> {
        let mut doc = serde_json::to_value(&self)?;
        for o in overrides {
            let o = o.as_ref();
            let (path, raw) = o.split_once('=').with_context(|| format!("override `{o}` lacks `=`"))?;
            let value = serde_json::from_str(raw).unwrap_or_else(|_| Value::String(raw.to_string()));
            set_path(&mut doc, path, value)?;
        }
        serde_json::from_value(doc).context("applying overrides")
    }

    pub fn validate(&self) -> anyhow::Result<()> {
        self.corpus.validate()?;
        self.model.validate()?;
        self.attack.hyperparams.validate()?;
        FeatureSelection::parse(&self.attack.features)?;
        if self.attack.variants.is_empty() {
            bail!("at least one attack variant is required");
        }
        if !(self.attack.input_lr > 0.0) {
            bail!("attack.input_lr must be > 0");
        }
        if self.train.epochs == 0 || self.train.batch_size == 0 || !(self.train.lr > 0.0) {
            bail!("train.epochs, train.batch_size and train.lr must be positive");
        }
        if let Some(dp) = &self.dp {
            if dp.epsilon.is_some() == dp.noise_multiplier.is_some() {
                bail!("dp needs exactly one of epsilon and noise_multiplier");
            }
        }
        for &k in &self.baselines.min_k {
            if !(k > 0.0 && k <= 1.0) {
                bail!("min_k fraction {k} outside (0, 1]");
            }
        }
        Ok(())
    }

    pub fn features(&self) -> anyhow::Result<FeatureSelection> {
        Ok(FeatureSelection::parse(&self.attack.features)?)
    }

    /// The model config with the corpus vocabulary filled in.
    pub fn model_config(&self) -> anyhow::Result<ModelConfig> {
        Ok(ModelConfig { vocab_size: self.corpus.vocab()?.len(), ..self.model.clone() })
    }

    /// Hyperparameters for one variant, seeded from the master seed.
    pub fn hyperparams_for(&self, variant: &AttackVariant) -> AttackHyperparams {
        let mut hp = AttackHyperparams { seed: Seed(self.seed), ..self.attack.hyperparams.clone() };
        if matches!(variant, AttackVariant::Input) {
            hp.lr = self.attack.input_lr;
        }
        hp
    }

    pub fn proxy_config(&self) -> anyhow::Result<ProxyConfig> {
        let mut p = self.blackbox.proxy.clone();
        if self.blackbox.matched {
            p.model = self.model.clone();
        }
        p.model.vocab_size = self.corpus.vocab()?.len();
        // `blackbox.proxy.seed` offsets the master seed.
        p.seed = Seed(self.seed.wrapping_add(p.seed.0));
        Ok(p)
    }

    /// The full training config for `n_examples` training pairs, with the
    /// DP section resolved to a noise multiplier.
    pub fn train_config(&self, n_examples: usize) -> anyhow::Result<(TrainConfig, Option<ResolvedDp>)> {
        let mut tc = TrainConfig {
            epochs: self.train.epochs,
            batch_size: self.train.batch_size,
            lr: self.train.lr,
            seed: Seed(self.seed),
            loss_floor: self.train.loss_floor,
            dp: None,
        };
        let Some(section) = &self.dp else { return Ok((tc, None)) };
        if n_examples == 0 {
            bail!("no training examples");
        }
        let q = (self.train.batch_size as f64 / n_examples as f64).min(1.0);
        let steps = self.train.epochs * (1.0 / q).round().max(1.0) as usize;
        let delta = section.delta.unwrap_or(1.0 / (10.0 * n_examples as f64));
        let sigma = match (section.epsilon, section.noise_multiplier) {
            (Some(eps), None) => noise_for_epsilon(eps, q, steps, delta)?,
            (None, Some(s)) => s,
            _ => bail!("dp needs exactly one of epsilon and noise_multiplier"),
        };
        let dp = DpConfig { clip_norm: section.clip_norm, noise_multiplier: sigma, sampling_rate: q, delta };
        let epsilon = account_epsilon(&dp, steps)?;
        tc.dp = Some(dp.clone());
        Ok((tc, Some(ResolvedDp { config: dp, steps, epsilon })))
    }

    /// Stable under key order: hashes the canonical serialization, whose
    /// object keys are sorted.
    /// Identifies the experiment. Where outputs go and how many threads
    /// run it do not change results, so those keys are left out.
    pub fn hash(&self) -> String {
        let mut v = serde_json::to_value(self).expect("config serializes");
        if let Value::Object(m) = &mut v {
            for k in ["output_dir", "cache_dir", "jobs"] {
                m.remove(k);
            }
        }
        hash_value(&v)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ResolvedDp {
    pub config: DpConfig,
    pub steps: usize,
    pub epsilon: f64,
}

/// Hex sha256 of a JSON value with sorted keys.
pub fn hash_value(v: &Value) -> String {
    // serde_json's default map is ordered, so to_string is canonical.
    hex::encode(Sha256::digest(serde_json::to_string(v).expect("json value").as_bytes()))
}

fn set_path(doc: &mut Value, path: &str, value: Value) -> anyhow::Result<()> {
    let mut cur = doc;
    let parts: Vec<&str> = path.split('.').collect();
    for (i, part) in parts.iter().enumerate() {
        let obj = match cur {
            Value::Object(m) => m,
            Value::Null => {
                *cur = Value::Object(Default::default());
                cur.as_object_mut().expect("just set")
            }
            _ => bail!("`{}` is not an object in override `{path}`", parts[..i].join(".")),
        };
        if i + 1 == parts.len() {
            obj.insert(part.to_string(), value);
            return Ok(());
        }
        cur = obj.entry(part.to_string()).or_insert(Value::Null);
    }
    unreachable!("split yields at least one part")
}
