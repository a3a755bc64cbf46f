use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::sync::{Arc, Mutex};
use std::time::{Duration, Instant};

use warmstart_core::data::Tier;
use warmstart_core::hdkp::{QueryKind, SessionStatus};
use warmstart_core::llm::{CallScope, ChatProvider, MockProvider, MockReply, MockScript, SyntheticModel};
use warmstart_core::metrics::TrialResult;
use warmstart_core::runner::{
    build_report, provider_factory, read_store, run_experiment, run_experiment_with, spawn_sessions, trial_seed, write_report, ApiError,
    DatasetInfo, ExperimentConfig, Method, Overrides, ProviderFactory, ReportError, RunError, RunMeta, SessionManager, StoreRecord,
};
use warmstart_core::amp::AmpCondition;
use warmstart_core::hkma::HkmaMode;

fn data_dir() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("data")
}

fn config(name: &str, out: &Path) -> ExperimentConfig {
    let mut cfg = ExperimentConfig::load(data_dir().join("experiments").join(name)).unwrap();
    cfg.output_dir = out.to_path_buf();
    cfg
}

fn trials(records: &[StoreRecord]) -> Vec<&TrialResult> {
    records
        .iter()
        .filter_map(|r| match r {
            StoreRecord::Trial(t) => Some(t),
            _ => None,
        })
        .collect()
}

#[test]
fn e2e_sweep_is_complete_fast_and_byte_identical() {
    let (a, b) = (tempfile::tempdir().unwrap(), tempfile::tempdir().unwrap());
    let mut cfg = config("e2e.json", a.path());
    let start = Instant::now();
    let s1 = run_experiment(&cfg).unwrap();
    assert!(start.elapsed() < Duration::from_secs(60), "took {:?}", start.elapsed());
    assert_eq!((s1.trials, s1.errors), (200, 0));

    // a different degree of parallelism must not change a byte
    cfg.output_dir = b.path().to_path_buf();
    cfg.workers = Some(1);
    run_experiment(&cfg).unwrap();
    let first = std::fs::read(a.path().join("results.jsonl")).unwrap();
    assert!(first == std::fs::read(b.path().join("results.jsonl")).unwrap(), "stores differ");

    let records = read_store(a.path().join("results.jsonl")).unwrap();
    assert_eq!(trials(&records).len(), 200);
    assert!(records.iter().any(|r| matches!(r, StoreRecord::DaprTrace(_))));
    let report = build_report(&records).unwrap();
    assert_eq!(report.rank_tables.len(), 2);
    for (_, t) in &report.rank_tables {
        assert_eq!(t.entries.len(), 5);
        assert_eq!(t.baseline.as_deref(), Some("bs_llm"));
    }
    for row in &report.tiers {
        assert_eq!(row.counts.iter().sum::<usize>() + row.absent, row.datasets);
    }
    let files = write_report(&report, &a.path().join("report")).unwrap();
    assert!(files.iter().any(|p| p.ends_with("rank_toy_sphere.csv")));
    assert!(std::fs::read_to_string(a.path().join("report/tiers.csv")).unwrap().starts_with("tier,method,datasets,rank_1"));
}

#[test]
fn two_methods_one_dataset_give_forty_lines() {
    let dir = tempfile::tempdir().unwrap();
    let manifest = dir.path().join("one.manifest");
    std::fs::write(&manifest, format!("{}\n", data_dir().join("datasets/toy_sphere.csv").display())).unwrap();
    let mut cfg = config("e2e.json", dir.path());
    cfg.manifest = manifest;
    cfg.methods = vec![Method::Random, Method::UcbGpm];
    run_experiment(&cfg).unwrap();
    let records = read_store(cfg.store_path()).unwrap();
    let t = trials(&records);
    assert_eq!(t.len(), 40);
    assert!(t.iter().filter(|t| t.method == "ucb_gpm").all(|t| t.label_evaluations == 4));
    assert!(t.iter().all(|t| t.tokens_in == 0 && t.warm_starts.len() == 4));
    assert!(!records.iter().any(|r| matches!(r, StoreRecord::Cost(_))));
}

#[test]
fn a_failing_trial_becomes_an_error_record() {
    let dir = tempfile::tempdir().unwrap();
    let mut cfg = config("e2e.json", dir.path());
    cfg.methods = vec![Method::BsLlm];
    let manifest = dir.path().join("one.manifest");
    std::fs::write(&manifest, format!("{}\n", data_dir().join("datasets/toy_sphere.csv").display())).unwrap();
    cfg.manifest = manifest;
    let good = provider_factory(&cfg.provider).unwrap();
    let factory = move |scope: &CallScope, seed: u64| -> Result<Arc<dyn ChatProvider>, _> {
        if scope.trial == 7 {
            Ok(Arc::new(MockProvider::from_fn(|_| Some(MockReply::text("I would rather not answer in JSON.")))) as Arc<dyn ChatProvider>)
        } else {
            good(scope, seed)
        }
    };
    let summary = run_experiment_with(&cfg, &factory).unwrap();
    assert_eq!((summary.trials, summary.errors), (19, 1));
    let records = read_store(cfg.store_path()).unwrap();
    let errors: Vec<_> = records
        .iter()
        .filter_map(|r| match r {
            StoreRecord::Error(e) => Some(e),
            _ => None,
        })
        .collect();
    assert_eq!(errors.len(), 1);
    assert_eq!((errors[0].method.as_str(), errors[0].trial), ("bs_llm", 7));
    // the failed call was still billed
    assert!(records.iter().any(|r| matches!(r, StoreRecord::Cost(c) if c.trial == 7)));
    let report = build_report(&records).unwrap();
    assert_eq!(report.errors, 1);
    assert_eq!(report.summary[0].trials, 19);
}

#[test]
fn ledger_totals_match_the_mock_call_log() {
    let dir = tempfile::tempdir().unwrap();
    let mut cfg = config("e2e.json", dir.path());
    cfg.methods = vec![Method::BsLlm, Method::Amp4, Method::Dapr, Method::HkmaBoth, Method::Hdkp];
    let script = MockScript::load(data_dir().join("mock/e2e.json")).unwrap();
    let mocks: Arc<Mutex<Vec<(CallScope, Arc<MockProvider>)>>> = Arc::default();
    let log = mocks.clone();
    let factory = move |scope: &CallScope, seed: u64| {
        let model = SyntheticModel::new(seed);
        let p = Arc::new(MockProvider::new(script.clone(), seed).with_responder(move |r| model.respond(r)));
        log.lock().unwrap().push((scope.clone(), p.clone()));
        Ok(p as Arc<dyn ChatProvider>)
    };
    run_experiment_with(&cfg, &factory).unwrap();
    let records = read_store(cfg.store_path()).unwrap();

    let mock_total = mocks.lock().unwrap().iter().fold((0, 0), |(i, o), (_, m)| {
        let (a, b) = m.token_totals();
        (i + a, o + b)
    });
    let ledger_total = records.iter().fold((0, 0), |(i, o), r| match r {
        StoreRecord::Cost(c) => (i + c.tokens_in, o + c.tokens_out),
        _ => (i, o),
    });
    assert!(mock_total.0 > 0);
    assert_eq!(ledger_total, mock_total);

    // scripted entries report their pinned counts
    assert!(records.iter().any(|r| matches!(r, StoreRecord::Cost(c) if c.tag == "amp.stage2" && c.tokens_in == 1100 && c.tokens_out == 80)));

    // every seeded trial's tokens equal its calls
    let mut per_trial: BTreeMap<(String, String, usize), (u64, u64)> = BTreeMap::new();
    for r in &records {
        if let StoreRecord::Cost(c) = r {
            let e = per_trial.entry((c.method.clone(), c.dataset.clone(), c.trial)).or_default();
            e.0 += c.tokens_in;
            e.1 += c.tokens_out;
        }
    }
    for t in trials(&records).into_iter().filter(|t| t.method != "hdkp") {
        assert_eq!(per_trial[&(t.method.clone(), t.dataset.clone(), t.trial_index)], (t.tokens_in, t.tokens_out));
    }
}

#[test]
fn hdkp_runs_as_sessions_with_twenty_final_trials() {
    let dir = tempfile::tempdir().unwrap();
    let mut cfg = config("e2e.json", dir.path());
    cfg.methods = vec![Method::Random, Method::Hdkp];
    let summary = run_experiment(&cfg).unwrap();
    assert_eq!(summary.sessions, 2);
    let records = read_store(cfg.store_path()).unwrap();
    for ds in ["toy_sphere", "toy_server"] {
        let idx: Vec<usize> = trials(&records).iter().filter(|t| t.method == "hdkp" && t.dataset == ds).map(|t| t.trial_index).collect();
        assert_eq!(idx, (0..20).collect::<Vec<_>>());
    }
    let sessions: Vec<_> = records
        .iter()
        .filter_map(|r| match r {
            StoreRecord::Session(s) => Some(s),
            _ => None,
        })
        .collect();
    for s in &sessions {
        assert_eq!(s.rounds, 9);
        assert!(!s.excluded);
        assert_eq!(s.status, SessionStatus::Finalized);
        assert_eq!(s.history.len(), s.rounds);
    }
    let report = build_report(&records).unwrap();
    assert_eq!(report.sessions.len(), 2);
    assert!(report.effort.is_some());
    assert!(report.to_markdown().contains("## H-DKP effort"));
}

#[test]
fn seeds_are_pure_and_cell_specific() {
    assert_eq!(trial_seed(1, "dapr", "toy_sphere", 3), trial_seed(1, "dapr", "toy_sphere", 3));
    let cells = [
        trial_seed(1, "dapr", "toy_sphere", 3),
        trial_seed(2, "dapr", "toy_sphere", 3),
        trial_seed(1, "amp4", "toy_sphere", 3),
        trial_seed(1, "dapr", "toy_server", 3),
        trial_seed(1, "dapr", "toy_sphere", 4),
        // the separator keeps ("ab","c") and ("a","bc") apart
        trial_seed(1, "ab", "c", 0),
        trial_seed(1, "a", "bc", 0),
    ];
    let unique: std::collections::BTreeSet<_> = cells.iter().collect();
    assert_eq!(unique.len(), cells.len());
}

#[test]
fn config_validation_fails_fast() {
    let dir = tempfile::tempdir().unwrap();
    let base = config("e2e.json", dir.path());
    let invalid = |f: &dyn Fn(&mut ExperimentConfig)| {
        let mut c = base.clone();
        f(&mut c);
        matches!(run_experiment(&c), Err(RunError::ConfigInvalid(_)))
    };
    assert!(invalid(&|c| c.trials = 0));
    assert!(invalid(&|c| c.methods.clear()));
    assert!(invalid(&|c| c.methods.push(Method::Random)));
    assert!(invalid(&|c| c.n = 0));
    assert!(invalid(&|c| c.hkma.gamma = 1.5));
    assert!(invalid(&|c| c.manifest = dir.path().join("missing.manifest")));
    assert!(invalid(&|c| {
        c.methods.push(Method::Hdkp);
        c.hdkp.feedback = warmstart_core::hdkp::FeedbackKind::Scripted;
    }));
    // nothing was written
    assert!(!base.store_path().exists());

    let p = dir.path().join("typo.json");
    std::fs::write(&p, r#"{"manifest": "m", "methods": ["random"], "trails": 3}"#).unwrap();
    assert!(matches!(ExperimentConfig::load(&p), Err(RunError::ConfigInvalid(_))));
    std::fs::write(&p, r#"{"manifest": "m", "methods": ["simulated_annealing"]}"#).unwrap();
    assert!(matches!(ExperimentConfig::load(&p), Err(RunError::ConfigInvalid(_))));
}

#[test]
fn overrides_swap_method_variants() {
    let dir = tempfile::tempdir().unwrap();
    let mut cfg = config("full.json", dir.path());
    cfg.apply(&Overrides {
        amp_condition: Some(AmpCondition::Amp3),
        hkma_mode: Some(HkmaMode::RagOnly),
        dapr_k: Some(2),
        ucb_kappa: Some(0.5),
        hkma_b_scout: Some(12),
        ..Overrides::default()
    });
    assert_eq!(
        cfg.methods,
        vec![Method::Random, Method::UcbGpm, Method::BsLlm, Method::Amp3, Method::Dapr, Method::HkmaRag, Method::Hdkp]
    );
    assert_eq!((cfg.dapr.k, cfg.ucb.kappa, cfg.hkma.b_scout), (2, 0.5, 12));

    let mut cfg = config("e2e.json", dir.path());
    cfg.methods = vec![Method::Random];
    cfg.apply(&Overrides { amp_condition: Some(AmpCondition::Amp2), ..Overrides::default() });
    assert_eq!(cfg.methods, vec![Method::Random, Method::Amp2]);
    assert_eq!("HKMA-BOTH".parse::<Method>().unwrap(), Method::HkmaBoth);
}

fn meta(datasets: &[(&str, Tier)], methods: &[&str]) -> StoreRecord {
    StoreRecord::Meta(RunMeta {
        version: "test".into(),
        master_seed: 5,
        trials: 20,
        n: 4,
        methods: methods.iter().map(|s| s.to_string()).collect(),
        datasets: datasets
            .iter()
            .map(|(n, t)| DatasetInfo { name: n.to_string(), tier: *t, features: 3, objectives: 2, rows: 50 })
            .collect(),
        provider: "mock".into(),
        model: None,
        base_url: None,
        config: serde_json::Value::Null,
    })
}

fn synthetic_trial(method: &str, dataset: &str, k: usize, d: f64) -> StoreRecord {
    StoreRecord::Trial(TrialResult {
        method: method.into(),
        dataset: dataset.into(),
        trial_index: k,
        warm_starts: vec![],
        matched_rows: vec![],
        chebyshev_values: vec![d],
        min_chebyshev: d,
        diversity: 0.0,
        tokens_in: 0,
        tokens_out: 0,
        wall_ms: 0,
        label_evaluations: 0,
    })
}

#[test]
fn report_on_synthetic_stores() {
    // one method: one rank, no deltas
    let mut recs = vec![meta(&[("a", Tier::Low)], &["random"])];
    recs.extend((0..20).map(|k| synthetic_trial("random", "a", k, 0.3 + 0.01 * k as f64)));
    let r = build_report(&recs).unwrap();
    let (_, t) = &r.rank_tables[0];
    assert_eq!(t.ranks(), vec![vec!["random".to_string()]]);
    assert!(t.entries.iter().all(|e| e.delta.is_none()));

    // separated methods: ranks follow medians; tier rows account for every dataset
    let datasets = [("a", Tier::Low), ("b", Tier::Low), ("c", Tier::High)];
    let mut recs = vec![meta(&datasets, &["bs_llm", "dapr", "random"])];
    for (ds, _) in datasets {
        for (m, centre) in [("random", 0.9), ("bs_llm", 0.5), ("dapr", 0.1)] {
            recs.extend((0..20).map(|k| synthetic_trial(m, ds, k, centre + 0.001 * k as f64)));
        }
    }
    let r = build_report(&recs).unwrap();
    for (_, t) in &r.rank_tables {
        assert_eq!(t.ranks(), vec![vec!["dapr".to_string()], vec!["bs_llm".to_string()], vec!["random".to_string()]]);
        assert!(t.entries.iter().find(|e| e.label == "dapr").unwrap().delta.unwrap() < -0.9);
    }
    let low: Vec<_> = r.tiers.iter().filter(|row| row.tier == Tier::Low).collect();
    assert_eq!(low.len(), 3);
    for row in &r.tiers {
        assert_eq!(row.counts.iter().sum::<usize>() + row.absent, row.datasets);
    }
    let dapr_low = low.iter().find(|row| row.method == "dapr").unwrap();
    assert_eq!((dapr_low.counts[0], dapr_low.rank1_frequency()), (2, 1.0));
    assert!(r.effort.is_none());
    // recomputing from the same records gives the same report
    assert_eq!(build_report(&recs).unwrap(), r);

    assert!(matches!(build_report(&[meta(&datasets, &["random"])]), Err(ReportError::EmptyStore)));
    assert!(matches!(build_report(&recs[1..]), Err(ReportError::MissingMeta)));
}

#[test]
fn interactive_sessions_round_trip_through_the_manager() {
    let dir = tempfile::tempdir().unwrap();
    let mut cfg = config("e2e.json", dir.path());
    let manifest = dir.path().join("one.manifest");
    std::fs::write(&manifest, format!("{}\n", data_dir().join("datasets/toy_sphere.csv").display())).unwrap();
    cfg.manifest = manifest;
    cfg.trials = 2;
    cfg.hdkp.engine.t_max = 3;
    cfg.hdkp.engine.t_min = 1;
    cfg.hdkp.reply_timeout_s = 30;
    let factory: Arc<ProviderFactory> = provider_factory(&cfg.provider).unwrap();
    let manager = Arc::new(SessionManager::new());
    let threads = spawn_sessions(&cfg, factory, &manager).unwrap();
    assert_eq!(manager.list().len(), 1);
    let id = "hdkp-toy_sphere";
    assert_eq!(manager.pending("nope"), Err(ApiError::UnknownSession("nope".into())));

    let wait_for = |iteration: usize| {
        let deadline = Instant::now() + Duration::from_secs(20);
        loop {
            if let Some(q) = manager.pending(id).unwrap().filter(|q| q.iteration == iteration) {
                return q;
            }
            assert!(Instant::now() < deadline, "no query for iteration {iteration}");
            std::thread::sleep(Duration::from_millis(5));
        }
    };
    let review = wait_for(1);
    assert_eq!(review.kind, QueryKind::Review);
    manager.post(id, 1, "all valid").unwrap();
    assert!(matches!(manager.post(id, 1, "again"), Err(ApiError::Conflict(_))));

    let q = wait_for(2);
    assert_eq!(q.kind, QueryKind::Failure);
    assert!(q.failure.is_some());
    assert!(matches!(manager.post(id, 5, "wrong iteration"), Err(ApiError::Conflict(_))));
    manager.post(id, 2, "Rule: x1 should be lower than 6").unwrap();
    wait_for(3);
    manager.post(id, 3, "Rule: x2 should be higher than 1").unwrap();

    for t in threads {
        t.join().unwrap();
    }
    let summary = &manager.list()[0];
    assert_eq!((summary.t, summary.status), (3, SessionStatus::Finalized));
    let history = manager.history(id).unwrap();
    assert_eq!(history.iter().map(|r| r.iteration).collect::<Vec<_>>(), vec![2, 3]);
    assert!(history[0].reply.contains("x1 should be lower than 6"));
    let records = read_store(dir.path().join("sessions").join(format!("{id}.jsonl"))).unwrap();
    assert_eq!(trials(&records).len(), 2);
    assert!(dir.path().join("sessions").join(format!("{id}.json")).exists());
}
