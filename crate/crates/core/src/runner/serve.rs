//! Live H-DKP sessions behind the HTTP API. Each session runs on its own
//! thread and blocks on a [`Mailbox`]; the API reads snapshots and posts
//! replies. The HTTP layer itself lives in the CLI.

use std::collections::BTreeMap;
use std::path::PathBuf;
use std::sync::{Arc, Mutex, RwLock};
use std::thread::JoinHandle;
use std::time::Duration;

use thiserror::Error;

use super::{hdkp_records, load_corpora, load_datasets, load_templates, session_id, write_record, Context, ExperimentConfig, ProviderFactory, RunError};
use super::{trial_seed, Method};
use crate::hdkp::{HdkpConfig, InteractiveSource, IterationRecord, Mailbox, PendingQuery, PostError, Session, SessionSummary};
use crate::llm::CallScope;

#[derive(Debug, Error, PartialEq, Eq)]
pub enum ApiError {
    #[error("unknown session `{0}`")]
    UnknownSession(String),
    #[error(transparent)]
    Conflict(PostError),
}

/// One live session: the latest published state plus its reply box.
#[derive(Debug)]
pub struct SessionHandle {
    snapshot: Mutex<Session>,
    pub mailbox: Arc<Mailbox>,
}

impl SessionHandle {
    pub fn snapshot(&self) -> Session {
        self.snapshot.lock().expect("session snapshot poisoned").clone()
    }

    pub fn publish(&self, session: &Session) {
        *self.snapshot.lock().expect("session snapshot poisoned") = session.clone();
    }
}

#[derive(Debug, Default)]
pub struct SessionManager {
    sessions: RwLock<BTreeMap<String, Arc<SessionHandle>>>,
}

impl SessionManager {
    pub fn new() -> Self {
        Self::default()
    }

    /// Adds a session (replacing one with the same id) and returns its handle.
    pub fn register(&self, session: Session) -> Arc<SessionHandle> {
        let id = session.id.clone();
        let handle = Arc::new(SessionHandle { snapshot: Mutex::new(session), mailbox: Arc::new(Mailbox::new()) });
        self.sessions.write().expect("session table poisoned").insert(id, handle.clone());
        handle
    }

    pub fn handle(&self, id: &str) -> Result<Arc<SessionHandle>, ApiError> {
        self.sessions
            .read()
            .expect("session table poisoned")
            .get(id)
            .cloned()
            .ok_or_else(|| ApiError::UnknownSession(id.to_string()))
    }

    pub fn list(&self) -> Vec<SessionSummary> {
        self.sessions.read().expect("session table poisoned").values().map(|h| h.snapshot().summary()).collect()
    }

    /// The query awaiting a human reply, if the session is blocked on one.
    pub fn pending(&self, id: &str) -> Result<Option<PendingQuery>, ApiError> {
        Ok(self.handle(id)?.mailbox.pending())
    }

    /// First reply for an iteration wins; later ones conflict.
    pub fn post(&self, id: &str, iteration: usize, text: &str) -> Result<(), ApiError> {
        self.handle(id)?.mailbox.post(iteration, text).map_err(ApiError::Conflict)
    }

    pub fn history(&self, id: &str) -> Result<Vec<IterationRecord>, ApiError> {
        Ok(self.handle(id)?.snapshot().history)
    }
}

/// Starts one interactive session per dataset. Snapshots are persisted to
/// `<output>/sessions/<id>.json` after every transition; when a session
/// finalizes, its records go to `<output>/sessions/<id>.jsonl`.
pub fn spawn_sessions(
    cfg: &ExperimentConfig,
    factory: Arc<ProviderFactory>,
    manager: &Arc<SessionManager>,
) -> Result<Vec<JoinHandle<()>>, RunError> {
    let datasets = load_datasets(&cfg.manifest)?;
    let templates = load_templates(cfg)?;
    let corpora = load_corpora(cfg, &datasets)?;
    let dir = cfg.output_dir.join("sessions");
    std::fs::create_dir_all(&dir).map_err(|source| RunError::Io { path: dir.display().to_string(), source })?;
    let engine = HdkpConfig { final_generations: cfg.trials, ..cfg.hdkp.engine };
    engine.validate().map_err(|e| RunError::ConfigInvalid(e.to_string()))?;

    let mut threads = Vec::new();
    for ds in datasets {
        let id = session_id(&ds.name);
        let handle = manager.register(Session::new(id.clone(), &ds, &engine));
        let (cfg, factory, templates, dir) = (cfg.clone(), factory.clone(), templates.clone(), dir.clone());
        let corpus: BTreeMap<_, _> = corpora.get(&ds.name).map(|c| (ds.name.clone(), c.clone())).into_iter().collect();
        let thread = std::thread::Builder::new()
            .name(id.clone())
            .spawn(move || {
                let ctx = Context { cfg: &cfg, templates, corpora: corpus, factory: &*factory };
                let seed = trial_seed(cfg.master_seed, Method::Hdkp.id(), &ds.name, 0);
                let scope = CallScope { method: Method::Hdkp.id().to_string(), dataset: ds.name.clone(), trial: 0 };
                let provider = match (ctx.factory)(&scope, seed) {
                    Ok(p) => p,
                    Err(e) => {
                        log::error!("{id}: {e}");
                        return;
                    }
                };
                let mut source =
                    InteractiveSource { mailbox: handle.mailbox.clone(), timeout: Duration::from_secs(cfg.hdkp.reply_timeout_s) };
                let snapshot_path: PathBuf = dir.join(format!("{id}.json"));
                let mut observe = |s: &Session| {
                    handle.publish(s);
                    if let Err(e) = s.save(&snapshot_path) {
                        log::warn!("{id}: could not persist session: {e}");
                    }
                };
                let records = hdkp_records(&ctx, &ds, provider, &mut source, &mut observe);
                let path = dir.join(format!("{id}.jsonl"));
                let written = std::fs::File::create(&path).and_then(|f| {
                    let mut out = std::io::BufWriter::new(f);
                    records.iter().try_for_each(|r| write_record(&mut out, r))?;
                    std::io::Write::flush(&mut out)
                });
                match written {
                    Ok(()) => log::info!("{id}: finished, records in {}", path.display()),
                    Err(e) => log::error!("{id}: {}: {e}", path.display()),
                }
            })
            .map_err(|source| RunError::Io { path: "session thread".into(), source })?;
        threads.push(thread);
    }
    Ok(threads)
}
