//! Experiment orchestration: configuration, per-trial seeding, the worker
//! pool, the result store and offline reports.

mod report;
mod serve;
mod store;

pub use report::{build_report, write_report, Report, ReportError, SummaryRow, TierRow};
pub use serve::{spawn_sessions, ApiError, SessionHandle, SessionManager};
pub use store::{read_store, write_record, DaprTraceRecord, DatasetInfo, ErrorRecord, RunMeta, SessionRecord, StoreError, StoreRecord};

use std::collections::BTreeMap;
use std::fmt;
use std::path::{Path, PathBuf};
use std::str::FromStr;
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::{mpsc, Arc};

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::amp::{run_amp, AmpCondition};
use crate::baselines::{bs_llm_warm_start, gp_ucb_warm_start, random_warm_start, UcbConfig};
use crate::dapr::{run_dapr, DaprConfig};
use crate::data::{load_dataset, load_manifest, Configuration, Dataset};
use crate::hdkp::{run_session, FeedbackKind, FeedbackSource, HdkpConfig, ScriptedSource, Session, SimulatedSource, TAG_FINAL};
use crate::hkma::{build_index, run_hkma, DocIndex, HkmaConfig, HkmaMode};
use crate::llm::{CallScope, ChatProvider, Gateway, LlmError, MockProvider, MockScript, ProviderConfig, ProviderKind, SyntheticModel, TemplateSet};
use crate::metrics::{diversity, score_warm_starts, CostLedger, TrialResult};

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Method {
    Random,
    UcbGpm,
    BsLlm,
    Amp2,
    Amp3,
    Amp4,
    Dapr,
    HkmaScout,
    HkmaRag,
    HkmaBoth,
    Hdkp,
}

impl Method {
    pub const ALL: [Method; 11] = [
        Method::Random,
        Method::UcbGpm,
        Method::BsLlm,
        Method::Amp2,
        Method::Amp3,
        Method::Amp4,
        Method::Dapr,
        Method::HkmaScout,
        Method::HkmaRag,
        Method::HkmaBoth,
        Method::Hdkp,
    ];

    pub fn id(self) -> &'static str {
        match self {
            Method::Random => "random",
            Method::UcbGpm => "ucb_gpm",
            Method::BsLlm => "bs_llm",
            Method::Amp2 => "amp2",
            Method::Amp3 => "amp3",
            Method::Amp4 => "amp4",
            Method::Dapr => "dapr",
            Method::HkmaScout => "hkma_scout",
            Method::HkmaRag => "hkma_rag",
            Method::HkmaBoth => "hkma_both",
            Method::Hdkp => "hdkp",
        }
    }

    pub fn amp_condition(self) -> Option<AmpCondition> {
        match self {
            Method::Amp2 => Some(AmpCondition::Amp2),
            Method::Amp3 => Some(AmpCondition::Amp3),
            Method::Amp4 => Some(AmpCondition::Amp4),
            _ => None,
        }
    }

    pub fn hkma_mode(self) -> Option<HkmaMode> {
        match self {
            Method::HkmaScout => Some(HkmaMode::ScoutOnly),
            Method::HkmaRag => Some(HkmaMode::RagOnly),
            Method::HkmaBoth => Some(HkmaMode::Both),
            _ => None,
        }
    }

    fn from_amp(c: AmpCondition) -> Self {
        match c {
            AmpCondition::Amp2 => Method::Amp2,
            AmpCondition::Amp3 => Method::Amp3,
            AmpCondition::Amp4 => Method::Amp4,
        }
    }

    fn from_hkma(m: HkmaMode) -> Self {
        match m {
            HkmaMode::ScoutOnly => Method::HkmaScout,
            HkmaMode::RagOnly => Method::HkmaRag,
            HkmaMode::Both => Method::HkmaBoth,
        }
    }
}

impl fmt::Display for Method {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.id())
    }
}

impl FromStr for Method {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let norm = s.trim().to_ascii_lowercase().replace('-', "_");
        Method::ALL.into_iter().find(|m| m.id() == norm).ok_or_else(|| format!("unknown method `{s}`"))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default)]
pub struct BsLlmConfig {
    pub examples: usize,
}

impl Default for BsLlmConfig {
    fn default() -> Self {
        Self { examples: 4 }
    }
}

/// H-DKP settings for batch runs: the engine config plus where the
/// expert replies come from.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct HdkpRunConfig {
    #[serde(flatten)]
    pub engine: HdkpConfig,
    /// `simulated` or `scripted`; `serve` always uses interactive sessions.
    pub feedback: FeedbackKind,
    /// Reply script: a file, or a directory holding `<dataset>.txt`.
    pub script: Option<PathBuf>,
    /// How long an interactive session waits for each reply.
    pub reply_timeout_s: u64,
}

impl Default for HdkpRunConfig {
    fn default() -> Self {
        Self { engine: HdkpConfig::default(), feedback: FeedbackKind::Simulated, script: None, reply_timeout_s: 86_400 }
    }
}

fn default_trials() -> usize {
    20
}

fn default_n() -> usize {
    4
}

fn default_output() -> PathBuf {
    PathBuf::from("results")
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    /// Dataset manifest; relative paths resolve against the config file.
    pub manifest: PathBuf,
    pub methods: Vec<Method>,
    #[serde(default = "default_trials")]
    pub trials: usize,
    #[serde(default)]
    pub master_seed: u64,
    /// Warm starts per trial.
    #[serde(default = "default_n")]
    pub n: usize,
    /// Worker threads; defaults to logical cores (at most 4 for HTTP).
    #[serde(default)]
    pub workers: Option<usize>,
    #[serde(default)]
    pub provider: ProviderConfig,
    #[serde(default = "default_output")]
    pub output_dir: PathBuf,
    /// Holds `<dataset>/*.md|*.txt` documentation for retrieval.
    #[serde(default)]
    pub corpus_dir: Option<PathBuf>,
    /// Template overrides (`amp_stage1.txt`, ...).
    #[serde(default)]
    pub prompts_dir: Option<PathBuf>,
    #[serde(default)]
    pub ucb: UcbConfig,
    #[serde(default)]
    pub bs_llm: BsLlmConfig,
    #[serde(default)]
    pub dapr: DaprConfig,
    #[serde(default)]
    pub hkma: HkmaConfig,
    #[serde(default)]
    pub hdkp: HdkpRunConfig,
}

#[derive(Debug, Error)]
pub enum RunError {
    #[error("invalid experiment config: {0}")]
    ConfigInvalid(String),
    #[error("{path}: {source}")]
    Io { path: String, source: std::io::Error },
    #[error(transparent)]
    Llm(#[from] LlmError),
}

/// Command-line overrides layered over a config file.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct Overrides {
    pub trials: Option<usize>,
    pub master_seed: Option<u64>,
    pub workers: Option<usize>,
    pub output_dir: Option<PathBuf>,
    pub ucb_kappa: Option<f64>,
    pub ucb_budget: Option<usize>,
    pub ucb_seed_size: Option<usize>,
    /// Replaces every AMP method in the list (or adds one).
    pub amp_condition: Option<AmpCondition>,
    pub dapr_k: Option<usize>,
    pub dapr_s: Option<usize>,
    pub dapr_n_importance: Option<usize>,
    /// Replaces every HKMA method in the list (or adds one).
    pub hkma_mode: Option<HkmaMode>,
    pub hkma_b_scout: Option<usize>,
    pub hkma_gamma: Option<f64>,
    pub hkma_top_k: Option<usize>,
}

fn replace_family(methods: &mut Vec<Method>, is_member: impl Fn(Method) -> bool, with: Method) {
    match methods.iter().position(|m| is_member(*m)) {
        Some(first) => {
            methods[first] = with;
            let mut i = 0;
            methods.retain(|m| {
                i += 1;
                i - 1 == first || !is_member(*m)
            });
        }
        None => methods.push(with),
    }
}

impl ExperimentConfig {
    /// Reads a JSON config and resolves its relative paths against the
    /// file's directory.
    pub fn load(path: impl AsRef<Path>) -> Result<Self, RunError> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|source| RunError::Io { path: path.display().to_string(), source })?;
        let mut cfg: ExperimentConfig =
            serde_json::from_str(&text).map_err(|e| RunError::ConfigInvalid(format!("{}: {e}", path.display())))?;
        cfg.resolve_paths(path.parent().unwrap_or(Path::new("")));
        Ok(cfg)
    }

    pub fn resolve_paths(&mut self, base: &Path) {
        let fix = |p: &mut PathBuf| {
            if p.is_relative() {
                *p = base.join(&*p);
            }
        };
        fix(&mut self.manifest);
        fix(&mut self.output_dir);
        if let Some(p) = self.corpus_dir.as_mut() {
            fix(p);
        }
        if let Some(p) = self.prompts_dir.as_mut() {
            fix(p);
        }
        if let Some(p) = self.hdkp.script.as_mut() {
            fix(p);
        }
        if let Some(s) = self.provider.script.as_mut() {
            let p = Path::new(s.as_str());
            if p.is_relative() {
                *s = base.join(p).display().to_string();
            }
        }
    }

    pub fn apply(&mut self, o: &Overrides) {
        if let Some(v) = o.trials {
            self.trials = v;
        }
        if let Some(v) = o.master_seed {
            self.master_seed = v;
        }
        if let Some(v) = o.workers {
            self.workers = Some(v);
        }
        if let Some(v) = &o.output_dir {
            self.output_dir = v.clone();
        }
        if let Some(v) = o.ucb_kappa {
            self.ucb.kappa = v;
        }
        if let Some(v) = o.ucb_budget {
            self.ucb.budget = v;
        }
        if let Some(v) = o.ucb_seed_size {
            self.ucb.seed_size = v;
        }
        if let Some(c) = o.amp_condition {
            replace_family(&mut self.methods, |m| m.amp_condition().is_some(), Method::from_amp(c));
        }
        if let Some(v) = o.dapr_k {
            self.dapr.k = v;
        }
        if let Some(v) = o.dapr_s {
            self.dapr.s = v;
        }
        if let Some(v) = o.dapr_n_importance {
            self.dapr.n_importance = v;
        }
        if let Some(m) = o.hkma_mode {
            replace_family(&mut self.methods, |x| x.hkma_mode().is_some(), Method::from_hkma(m));
        }
        if let Some(v) = o.hkma_b_scout {
            self.hkma.b_scout = v;
        }
        if let Some(v) = o.hkma_gamma {
            self.hkma.gamma = v;
        }
        if let Some(v) = o.hkma_top_k {
            self.hkma.top_k = v;
        }
    }

    /// Checks everything that can be checked without running a trial.
    pub fn validate(&self) -> Result<(), RunError> {
        let bad = |m: String| Err(RunError::ConfigInvalid(m));
        if self.trials == 0 {
            return bad("trials must be >= 1".into());
        }
        if self.methods.is_empty() {
            return bad("methods must not be empty".into());
        }
        let mut seen = std::collections::BTreeSet::new();
        for m in &self.methods {
            if !seen.insert(*m) {
                return bad(format!("method `{m}` listed twice"));
            }
        }
        if self.n == 0 {
            return bad("n must be >= 1".into());
        }
        if self.workers == Some(0) {
            return bad("workers must be >= 1".into());
        }
        if self.bs_llm.examples == 0 {
            return bad("bs_llm.examples must be >= 1".into());
        }
        if self.methods.contains(&Method::UcbGpm) {
            self.ucb.validate().map_err(|e| RunError::ConfigInvalid(e.to_string()))?;
        }
        if self.methods.iter().any(|m| m.hkma_mode().is_some()) {
            self.hkma.validate().map_err(|e| RunError::ConfigInvalid(e.to_string()))?;
        }
        if self.methods.contains(&Method::Hdkp) {
            let mut engine = self.hdkp.engine;
            engine.final_generations = self.trials;
            engine.validate().map_err(|e| RunError::ConfigInvalid(e.to_string()))?;
            match self.hdkp.feedback {
                FeedbackKind::Scripted if self.hdkp.script.is_none() => return bad("hdkp.feedback = scripted needs hdkp.script".into()),
                FeedbackKind::Interactive => return bad("interactive feedback is only available through `serve`".into()),
                _ => {}
            }
        }
        Ok(())
    }

    pub fn store_path(&self) -> PathBuf {
        self.output_dir.join("results.jsonl")
    }

    fn worker_count(&self, jobs: usize) -> usize {
        let cores = std::thread::available_parallelism().map_or(1, |n| n.get());
        let cap = match self.provider.provider {
            ProviderKind::Http => cores.min(4),
            ProviderKind::Mock => cores,
        };
        self.workers.unwrap_or(cap).clamp(1, jobs.max(1))
    }
}

/// Per-trial seed: SHA-256 over (master seed, method, dataset, trial).
pub fn trial_seed(master_seed: u64, method: &str, dataset: &str, trial: usize) -> u64 {
    let mut h = Sha256::new();
    h.update(master_seed.to_le_bytes());
    h.update(method.as_bytes());
    h.update([0]);
    h.update(dataset.as_bytes());
    h.update([0]);
    h.update((trial as u64).to_le_bytes());
    let d = h.finalize();
    u64::from_le_bytes(d[..8].try_into().expect("digest has 32 bytes"))
}

/// Builds the provider for one trial from its scope and seed.
pub type ProviderFactory = dyn Fn(&CallScope, u64) -> Result<Arc<dyn ChatProvider>, LlmError> + Send + Sync;

/// Mock: a fresh scripted provider per trial (so script rotation never
/// depends on scheduling), falling back to the synthetic model.
/// HTTP: one shared client.
pub fn provider_factory(cfg: &ProviderConfig) -> Result<Arc<ProviderFactory>, LlmError> {
    match cfg.provider {
        ProviderKind::Mock => {
            let script = match &cfg.script {
                Some(p) => MockScript::load(p)?,
                None => MockScript::default(),
            };
            Ok(Arc::new(move |_: &CallScope, seed: u64| {
                let model = SyntheticModel::new(seed);
                let p = MockProvider::new(script.clone(), seed).with_responder(move |req| model.respond(req));
                Ok(Arc::new(p) as Arc<dyn ChatProvider>)
            }))
        }
        #[cfg(feature = "http")]
        ProviderKind::Http => {
            let shared: Arc<dyn ChatProvider> = Arc::new(crate::llm::http::HttpProvider::new(cfg)?);
            Ok(Arc::new(move |_: &CallScope, _| Ok(shared.clone())))
        }
        #[cfg(not(feature = "http"))]
        ProviderKind::Http => Err(LlmError::Malformed {
            what: "provider config".into(),
            detail: "this build has no HTTP provider (enable the `http` feature)".into(),
        }),
    }
}

/// Everything a trial needs that is shared across the sweep.
pub(crate) struct Context<'a> {
    pub(crate) cfg: &'a ExperimentConfig,
    pub(crate) templates: TemplateSet,
    pub(crate) corpora: BTreeMap<String, DocIndex>,
    pub(crate) factory: &'a ProviderFactory,
}

enum Job<'a> {
    Trial { dataset: &'a Dataset, method: Method, trial: usize },
    Session { dataset: &'a Dataset },
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunSummary {
    pub store: PathBuf,
    pub trials: usize,
    pub errors: usize,
    pub sessions: usize,
}

pub fn load_datasets(manifest: &Path) -> Result<Vec<Dataset>, RunError> {
    let entries = load_manifest(manifest).map_err(|e| RunError::ConfigInvalid(e.to_string()))?;
    if entries.is_empty() {
        return Err(RunError::ConfigInvalid(format!("{}: manifest lists no datasets", manifest.display())));
    }
    let mut out: Vec<Dataset> = Vec::with_capacity(entries.len());
    for e in entries {
        let mut ds = load_dataset(&e.path).map_err(|err| RunError::ConfigInvalid(err.to_string()))?;
        if let Some(name) = e.display_name {
            ds.name = name;
        }
        if out.iter().any(|d| d.name == ds.name) {
            return Err(RunError::ConfigInvalid(format!("dataset name `{}` appears twice", ds.name)));
        }
        for w in &ds.warnings {
            log::warn!("{}: {w}", ds.name);
        }
        out.push(ds);
    }
    Ok(out)
}

pub fn load_templates(cfg: &ExperimentConfig) -> Result<TemplateSet, RunError> {
    Ok(match &cfg.prompts_dir {
        Some(dir) => TemplateSet::with_overrides(dir)?,
        None => TemplateSet::builtin(),
    })
}

/// Per-dataset retrieval indexes, empty when no corpus is configured.
pub fn load_corpora(cfg: &ExperimentConfig, datasets: &[Dataset]) -> Result<BTreeMap<String, DocIndex>, RunError> {
    let mut out = BTreeMap::new();
    if let Some(dir) = &cfg.corpus_dir {
        for ds in datasets {
            let sub = dir.join(&ds.name);
            let idx = build_index(&sub).map_err(|e| RunError::ConfigInvalid(format!("{}: {e}", sub.display())))?;
            out.insert(ds.name.clone(), idx);
        }
    }
    Ok(out)
}

/// Runs the sweep with the configured provider.
pub fn run_experiment(cfg: &ExperimentConfig) -> Result<RunSummary, RunError> {
    cfg.validate()?;
    let factory = provider_factory(&cfg.provider)?;
    run_experiment_with(cfg, &*factory)
}

/// Runs every (dataset, method, trial) cell and writes the store. Trials
/// run on a bounded pool; a single writer emits records in canonical
/// order, so the file does not depend on scheduling.
pub fn run_experiment_with(cfg: &ExperimentConfig, factory: &ProviderFactory) -> Result<RunSummary, RunError> {
    cfg.validate()?;
    let datasets = load_datasets(&cfg.manifest)?;
    let ctx = Context { cfg, templates: load_templates(cfg)?, corpora: load_corpora(cfg, &datasets)?, factory };

    let mut jobs = Vec::new();
    for ds in &datasets {
        for &method in &cfg.methods {
            if method == Method::Hdkp {
                jobs.push(Job::Session { dataset: ds });
            } else {
                jobs.extend((0..cfg.trials).map(|trial| Job::Trial { dataset: ds, method, trial }));
            }
        }
    }

    let store = cfg.store_path();
    let io = |source| RunError::Io { path: store.display().to_string(), source };
    std::fs::create_dir_all(&cfg.output_dir).map_err(|source| RunError::Io { path: cfg.output_dir.display().to_string(), source })?;
    let file = std::fs::File::create(&store).map_err(io)?;
    let mut out = std::io::BufWriter::new(file);
    write_record(&mut out, &StoreRecord::Meta(run_meta(cfg, &datasets))).map_err(io)?;

    let workers = cfg.worker_count(jobs.len());
    let next = AtomicUsize::new(0);
    let (tx, rx) = mpsc::channel::<(usize, Vec<StoreRecord>)>();
    let mut summary = RunSummary { store: store.clone(), trials: 0, errors: 0, sessions: 0 };
    let written: std::io::Result<()> = std::thread::scope(|scope| {
        for _ in 0..workers {
            let tx = tx.clone();
            let (jobs, next, ctx) = (&jobs, &next, &ctx);
            scope.spawn(move || loop {
                let i = next.fetch_add(1, Ordering::Relaxed);
                let Some(job) = jobs.get(i) else { break };
                let records = match job {
                    Job::Trial { dataset, method, trial } => run_trial(ctx, dataset, *method, *trial),
                    Job::Session { dataset } => run_hdkp(ctx, dataset),
                };
                if tx.send((i, records)).is_err() {
                    break;
                }
            });
        }
        drop(tx);

        // single writer; out-of-order completions wait in a reorder buffer
        let mut parked: BTreeMap<usize, Vec<StoreRecord>> = BTreeMap::new();
        let mut expected = 0;
        for (i, records) in rx {
            parked.insert(i, records);
            while let Some(records) = parked.remove(&expected) {
                for r in &records {
                    match r {
                        StoreRecord::Trial(_) => summary.trials += 1,
                        StoreRecord::Error(e) => {
                            summary.errors += 1;
                            log::warn!("{} / {} / trial {}: {}", e.method, e.dataset, e.trial, e.message);
                        }
                        StoreRecord::Session(_) => summary.sessions += 1,
                        _ => {}
                    }
                    write_record(&mut out, r)?;
                }
                expected += 1;
            }
        }
        Ok(())
    });
    written.map_err(io)?;
    std::io::Write::flush(&mut out).map_err(io)?;
    Ok(summary)
}

fn run_meta(cfg: &ExperimentConfig, datasets: &[Dataset]) -> RunMeta {
    RunMeta {
        version: env!("CARGO_PKG_VERSION").to_string(),
        master_seed: cfg.master_seed,
        trials: cfg.trials,
        n: cfg.n,
        methods: cfg.methods.iter().map(|m| m.id().to_string()).collect(),
        datasets: datasets
            .iter()
            .map(|d| DatasetInfo {
                name: d.name.clone(),
                tier: d.tier,
                features: d.features.len(),
                objectives: d.objectives.len(),
                rows: d.rows.len(),
            })
            .collect(),
        provider: format!("{:?}", cfg.provider.provider).to_ascii_lowercase(),
        model: cfg.provider.model.clone(),
        base_url: cfg.provider.base_url.clone(),
        config: provenance_echo(cfg),
    }
}

/// The config as recorded in the store, minus settings that only affect
/// where and how fast the run happens.
fn provenance_echo(cfg: &ExperimentConfig) -> serde_json::Value {
    let mut v = serde_json::to_value(cfg).unwrap_or(serde_json::Value::Null);
    if let Some(o) = v.as_object_mut() {
        for k in ["output_dir", "workers"] {
            o.remove(k);
        }
    }
    v
}

/// Warm starts plus what producing them cost outside the token ledger.
struct Produced {
    configs: Vec<Configuration>,
    label_evaluations: usize,
    dapr_rounds: Vec<crate::dapr::DaprRound>,
}

fn produce(ctx: &Context, ds: &Dataset, method: Method, rng: &mut ChaCha8Rng, gw: &mut Gateway) -> Result<Produced, String> {
    let cfg = ctx.cfg;
    let n = cfg.n;
    let plain = |configs| Produced { configs, label_evaluations: 0, dapr_rounds: Vec::new() };
    let s = |e: &dyn fmt::Display| e.to_string();
    match method {
        Method::Random => random_warm_start(ds, n, rng).map(plain).map_err(|e| s(&e)),
        Method::UcbGpm => {
            // the GP's selections are the warm starts; the budget is spent on labels
            gp_ucb_warm_start(ds, &cfg.ucb, rng)
                .map(|configs| Produced { configs, label_evaluations: cfg.ucb.budget, dapr_rounds: Vec::new() })
                .map_err(|e| s(&e))
        }
        Method::BsLlm => bs_llm_warm_start(ds, cfg.bs_llm.examples, n, rng, gw, &ctx.templates).map(plain).map_err(|e| s(&e)),
        Method::Amp2 | Method::Amp3 | Method::Amp4 => {
            let cond = method.amp_condition().expect("amp method");
            run_amp(ds, cond, rng, gw, &ctx.templates, n).map(|o| plain(o.configs)).map_err(|e| s(&e))
        }
        Method::Dapr => run_dapr(ds, &cfg.dapr, rng, gw, &ctx.templates, n)
            .map(|o| Produced { configs: o.configs, label_evaluations: 0, dapr_rounds: o.trace.rounds })
            .map_err(|e| s(&e)),
        Method::HkmaScout | Method::HkmaRag | Method::HkmaBoth => {
            let hk = HkmaConfig { mode: method.hkma_mode().expect("hkma method"), ..cfg.hkma };
            run_hkma(ds, &hk, ctx.corpora.get(&ds.name), rng, gw, &ctx.templates, n)
                .map(|o| Produced { configs: o.configs, label_evaluations: o.label_evaluations, dapr_rounds: Vec::new() })
                .map_err(|e| s(&e))
        }
        Method::Hdkp => Err("hdkp runs as a session, not as a seeded trial".into()),
    }
}

#[allow(clippy::too_many_arguments)]
fn score_trial(
    method: Method,
    ds: &Dataset,
    trial: usize,
    configs: &[Configuration],
    tokens: (u64, u64),
    wall_ms: u64,
    label_evaluations: usize,
) -> Result<TrialResult, String> {
    let score = score_warm_starts(configs, ds).map_err(|e| e.to_string())?;
    let div = diversity(configs, ds).map_err(|e| e.to_string())?;
    Ok(TrialResult {
        method: method.id().to_string(),
        dataset: ds.name.clone(),
        trial_index: trial,
        warm_starts: score.warm_starts,
        matched_rows: score.matched_rows,
        chebyshev_values: score.chebyshev_values,
        min_chebyshev: score.min_chebyshev,
        diversity: div,
        tokens_in: tokens.0,
        tokens_out: tokens.1,
        wall_ms,
        label_evaluations,
    })
}

fn cost_records(ledger: &CostLedger) -> impl Iterator<Item = StoreRecord> + '_ {
    ledger.entries().iter().cloned().map(StoreRecord::Cost)
}

fn error_record(method: Method, ds: &Dataset, trial: usize, message: String) -> StoreRecord {
    StoreRecord::Error(ErrorRecord { method: method.id().to_string(), dataset: ds.name.clone(), trial, message })
}

fn run_trial(ctx: &Context, ds: &Dataset, method: Method, trial: usize) -> Vec<StoreRecord> {
    let seed = trial_seed(ctx.cfg.master_seed, method.id(), &ds.name, trial);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let scope = CallScope { method: method.id().to_string(), dataset: ds.name.clone(), trial };
    let provider = match (ctx.factory)(&scope, seed) {
        Ok(p) => p,
        Err(e) => return vec![error_record(method, ds, trial, e.to_string())],
    };
    let mut gw = Gateway::new(provider, scope);
    let produced = produce(ctx, ds, method, &mut rng, &mut gw);
    let tokens = gw.ledger().totals();
    let mut out = Vec::new();
    let mut rounds = Vec::new();
    match produced.and_then(|p| {
        rounds = p.dapr_rounds;
        score_trial(method, ds, trial, &p.configs, tokens, gw.latency_ms(), p.label_evaluations)
    }) {
        Ok(t) => out.push(StoreRecord::Trial(t)),
        Err(msg) => out.push(error_record(method, ds, trial, msg)),
    }
    out.extend(rounds.into_iter().map(|round| StoreRecord::DaprTrace(DaprTraceRecord { dataset: ds.name.clone(), trial, round })));
    out.extend(cost_records(gw.ledger()));
    out
}

fn feedback_source(cfg: &HdkpRunConfig, ds: &Dataset) -> Result<Box<dyn FeedbackSource>, String> {
    match cfg.feedback {
        FeedbackKind::Simulated => Ok(Box::new(SimulatedSource::new(ds.clone()))),
        FeedbackKind::Scripted => {
            let path = cfg.script.as_ref().ok_or("no reply script configured")?;
            let path = if path.is_dir() { path.join(format!("{}.txt", ds.name)) } else { path.clone() };
            ScriptedSource::load(&path).map(|s| Box::new(s) as Box<dyn FeedbackSource>).map_err(|e| format!("{}: {e}", path.display()))
        }
        FeedbackKind::Interactive => Err("interactive feedback needs `serve`".into()),
    }
}

pub fn session_id(dataset: &str) -> String {
    format!("hdkp-{dataset}")
}

/// One H-DKP session per dataset; its final generations become the trials.
fn run_hdkp(ctx: &Context, ds: &Dataset) -> Vec<StoreRecord> {
    let method = Method::Hdkp;
    let seed = trial_seed(ctx.cfg.master_seed, method.id(), &ds.name, 0);
    let scope = CallScope { method: method.id().to_string(), dataset: ds.name.clone(), trial: 0 };
    let provider = match (ctx.factory)(&scope, seed) {
        Ok(p) => p,
        Err(e) => return vec![error_record(method, ds, 0, e.to_string())],
    };
    let mut source = match feedback_source(&ctx.cfg.hdkp, ds) {
        Ok(s) => s,
        Err(e) => return vec![error_record(method, ds, 0, e)],
    };
    hdkp_records(ctx, ds, provider, source.as_mut(), &mut |_| {})
}

/// Runs one session to completion and returns its store records: the
/// final trials, the session record, then every billed call.
pub(crate) fn hdkp_records(
    ctx: &Context,
    ds: &Dataset,
    provider: Arc<dyn ChatProvider>,
    source: &mut dyn FeedbackSource,
    observe: &mut dyn FnMut(&Session),
) -> Vec<StoreRecord> {
    let method = Method::Hdkp;
    let seed = trial_seed(ctx.cfg.master_seed, method.id(), &ds.name, 0);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let scope = CallScope { method: method.id().to_string(), dataset: ds.name.clone(), trial: 0 };
    let engine = HdkpConfig { final_generations: ctx.cfg.trials, ..ctx.cfg.hdkp.engine };
    let mut gw = Gateway::new(provider, scope);
    let mut session = Session::new(session_id(&ds.name), ds, &engine);
    let result = run_session(
        &mut session,
        ds,
        ctx.corpora.get(&ds.name),
        &engine,
        &mut gw,
        &ctx.templates,
        &mut rng,
        source,
        ctx.cfg.n,
        observe,
    );

    let mut out = Vec::new();
    let rounds = match result {
        Ok(fin) => {
            for (k, g) in fin.generations.iter().enumerate() {
                match score_trial(method, ds, k, &g.configs, (g.tokens_in, g.tokens_out), 0, 0) {
                    Ok(t) => out.push(StoreRecord::Trial(t)),
                    Err(msg) => out.push(error_record(method, ds, k, msg)),
                }
            }
            fin.rounds
        }
        Err(e) => {
            out.push(error_record(method, ds, 0, e.to_string()));
            session.feedback_rounds()
        }
    };
    out.push(StoreRecord::Session(SessionRecord {
        id: session.id.clone(),
        dataset: ds.name.clone(),
        t: session.t,
        rounds,
        excluded: rounds < session.t_min,
        status: session.status,
        belief: session.belief.clone(),
        history: session.history.clone(),
    }));
    // bill each final generation to its trial; session-phase calls stay on trial 0
    let mut k = 0;
    for mut e in gw.into_ledger().entries().iter().cloned() {
        if e.tag == TAG_FINAL {
            e.trial = k;
            k += 1;
        }
        out.push(StoreRecord::Cost(e));
    }
    out
}
