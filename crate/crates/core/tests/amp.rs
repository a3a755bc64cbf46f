mod common;

use std::sync::Arc;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use warmstart_core::amp::{
    draw_scored_examples, generation_prompt, run_amp, stage_analysis, stage_constraints, stage_validate, AmpCondition, AmpError,
    ConstraintSet, Predicate,
};
use warmstart_core::data::{parse_dataset, Configuration, Dataset, Value};
use warmstart_core::llm::{CallScope, Gateway, MockEntry, MockProvider, MockScript, TemplateSet};
use warmstart_core::metrics::score_warm_starts;

use common::{fault_injected_provider, toy};

fn hosts() -> Dataset {
    parse_dataset(
        "hosts",
        "threads,cpu_cores,cache_mb,Latency-,Energy-\n1,2,16,10,5\n2,4,64,6,4\n4,4,128,3,6\n8,8,256,2,9\n8,16,512,5,1\n",
    )
    .unwrap()
}

fn block(json: &str) -> String {
    format!("```json\n{json}\n```")
}

fn gateway(entries: Vec<MockEntry>) -> (Gateway, Arc<MockProvider>) {
    let mock = Arc::new(MockProvider::new(MockScript::from_entries(entries), 0));
    (Gateway::new(mock.clone(), CallScope::default()), mock)
}

fn analysis_entry() -> MockEntry {
    MockEntry::tagged("amp.stage1", block(r#"{"ranked_features": ["threads", "cpu_cores", "cache_mb"], "tradeoffs": []}"#))
}

const TWO_CONFIGS: &str = r#"[{"threads": 8, "cpu_cores": 4, "cache_mb": 500}, {"threads": 1, "cpu_cores": 2, "cache_mb": 16}]"#;

#[test]
fn analysis_keeps_four_valid_names() {
    let ds = toy("toy_server");
    let (mut gw, _) = gateway(vec![MockEntry::tagged(
        "amp.stage1",
        block(r#"{"ranked_features": ["threads", "cache_mb", "workers", "batch"]}"#),
    )]);
    let fs = draw_scored_examples(&ds, 4, &mut ChaCha8Rng::seed_from_u64(1)).unwrap();
    let r = stage_analysis(&ds, &fs, &mut gw, &TemplateSet::builtin()).unwrap();
    assert_eq!(r.ranked_features, vec!["threads", "cache_mb", "workers", "batch"]);
}

#[test]
fn analysis_truncates_seven_to_five() {
    let ds = toy("toy_server");
    let (mut gw, _) = gateway(vec![MockEntry::tagged(
        "amp.stage1",
        block(r#"{"ranked_features": ["threads", "cache_mb", "workers", "batch", "pool_size", "prefetch", "compression"]}"#),
    )]);
    let fs = draw_scored_examples(&ds, 4, &mut ChaCha8Rng::seed_from_u64(1)).unwrap();
    let r = stage_analysis(&ds, &fs, &mut gw, &TemplateSet::builtin()).unwrap();
    assert_eq!(r.ranked_features.len(), 5);
}

#[test]
fn analysis_with_too_few_known_names_fails_after_one_retry() {
    let ds = toy("toy_server");
    let (mut gw, mock) = gateway(vec![MockEntry::tagged(
        "amp.stage1",
        block(r#"{"ranked_features": ["threads", "gpu_count", "disk_iops"]}"#),
    )]);
    let fs = draw_scored_examples(&ds, 4, &mut ChaCha8Rng::seed_from_u64(1)).unwrap();
    assert!(matches!(stage_analysis(&ds, &fs, &mut gw, &TemplateSet::builtin()), Err(AmpError::UnparsableAnalysis)));
    assert_eq!(mock.calls().len(), 2);
}

#[test]
fn constraint_stage_builds_reference_predicate_and_demotes_unknown() {
    let ds = hosts();
    let (mut gw, _) = gateway(vec![MockEntry::tagged(
        "amp.stage2",
        block(r#"{"hard": ["threads ≤ cpu_cores", "gpu_count <= 2", "cache_mb <= 4096"], "soft": ["bigger caches help"]}"#),
    )]);
    let report = warmstart_core::amp::parse_analysis(&analysis_entry().text.unwrap(), &ds).unwrap();
    let set = stage_constraints(&report, &ds, &mut gw, &TemplateSet::builtin()).unwrap();
    assert_eq!(
        set.hard[0],
        Predicate::Relation { feature: "threads".into(), op: warmstart_core::amp::Op::Le, other: "cpu_cores".into() }
    );
    assert_eq!(set.hard[1].to_string(), "cache_mb <= 512");
    assert_eq!(set.demoted, 1);
    assert_eq!(set.soft, vec!["bigger caches help", "gpu_count <= 2"]);
}

#[test]
fn constraint_stage_degrades_to_empty() {
    let ds = hosts();
    let (mut gw, _) = gateway(vec![MockEntry::tagged("amp.stage2", "no idea")]);
    let report = warmstart_core::amp::parse_analysis(&analysis_entry().text.unwrap(), &ds).unwrap();
    assert_eq!(stage_constraints(&report, &ds, &mut gw, &TemplateSet::builtin()).unwrap(), ConstraintSet::default());
}

#[test]
fn generation_prompt_wiring_per_condition() {
    let ds = hosts();
    let set = TemplateSet::builtin();
    let fs = draw_scored_examples(&ds, 4, &mut ChaCha8Rng::seed_from_u64(2)).unwrap();
    let report = warmstart_core::amp::parse_analysis(&analysis_entry().text.unwrap(), &ds).unwrap();
    let amp2 = generation_prompt(&ds, &fs, &report, None, 4, &set).unwrap();
    assert!(!amp2.contains("Hard constraints"));
    assert!(amp2.contains("threads, cpu_cores, cache_mb"));
    let cs = ConstraintSet::build(&ds, &["threads <= cpu_cores".into(), "cache_mb < 300".into(), "cpu_cores in {4, 8}".into()], &[]);
    let amp3 = generation_prompt(&ds, &fs, &report, Some(&cs), 4, &set).unwrap();
    for p in &cs.hard {
        assert!(amp3.contains(&p.to_string()), "{p}");
    }
}

fn config(ds: &Dataset, t: f64, c: f64, m: f64) -> Configuration {
    let mut x = Configuration::new();
    x.assign(ds, "threads", &Value::Num(t)).unwrap();
    x.assign(ds, "cpu_cores", &Value::Num(c)).unwrap();
    x.assign(ds, "cache_mb", &Value::Num(m)).unwrap();
    x
}

#[test]
fn validation_is_a_no_op_when_everything_holds() {
    let ds = hosts();
    let cs = ConstraintSet::build(&ds, &["threads <= 10".into()], &[]);
    let (mut gw, mock) = gateway(vec![MockEntry::tagged("amp.stage4", block(r#"[{"index": 1, "consistent": true}]"#))]);
    let input = vec![config(&ds, 2.0, 4.0, 64.0)];
    let (out, log) = stage_validate(&ds, input.clone(), &cs, &mut gw, &TemplateSet::builtin()).unwrap();
    assert_eq!(out, input);
    assert_eq!((log.violating, log.projected), (0, 0));
    assert_eq!(mock.calls().len(), 1);
}

#[test]
fn validation_accepts_a_good_repair_and_clamps_a_bad_one() {
    let ds = parse_dataset("wide", "x,y,Loss-\n0,0,1\n20,5,0\n").unwrap();
    let cs = ConstraintSet::build(&ds, &["x <= 10".into()], &[]);
    let mut violator = Configuration::new();
    violator.assign(&ds, "x", &Value::Num(15.0)).unwrap();
    violator.assign(&ds, "y", &Value::Num(3.0)).unwrap();

    let critic = MockEntry::tagged("amp.stage4", block("[]"));
    let (mut gw, _) = gateway(vec![critic.clone(), MockEntry::tagged("amp.stage4.repair", block(r#"[{"x": 10, "y": 3}]"#))]);
    let (out, log) = stage_validate(&ds, vec![violator.clone()], &cs, &mut gw, &TemplateSet::builtin()).unwrap();
    assert_eq!(out[0].get("x"), Some(&Value::Num(10.0)));
    assert_eq!((log.repaired, log.projected), (1, 0));

    let (mut gw, _) = gateway(vec![critic, MockEntry::tagged("amp.stage4.repair", block(r#"[{"x": 18, "y": 3}]"#))]);
    let (out, log) = stage_validate(&ds, vec![violator], &cs, &mut gw, &TemplateSet::builtin()).unwrap();
    assert_eq!(out[0].get("x"), Some(&Value::Num(10.0)));
    assert_eq!(out[0].get("y"), Some(&Value::Num(3.0)));
    assert_eq!((log.repaired, log.projected), (0, 1));
}

fn full_script(repair: &str) -> Vec<MockEntry> {
    vec![
        analysis_entry().with_tokens(100, 20),
        MockEntry::tagged("amp.stage2", block(r#"{"hard": ["threads <= cpu_cores", "cache_mb <= 256"], "soft": []}"#)).with_tokens(80, 10),
        MockEntry::tagged("amp.stage3", block(TWO_CONFIGS)).with_tokens(150, 40),
        MockEntry::tagged("amp.stage4", block(r#"[{"index": 1, "consistent": false}]"#)).with_tokens(60, 8),
        MockEntry::tagged("amp.stage4.repair", block(repair)).with_tokens(70, 12),
    ]
}

#[test]
fn stage_counts_per_condition() {
    let ds = hosts();
    let templates = TemplateSet::builtin();
    let count = |cond, script| {
        let (mut gw, mock) = gateway(script);
        run_amp(&ds, cond, &mut ChaCha8Rng::seed_from_u64(5), &mut gw, &templates, 2).unwrap();
        mock.calls().iter().map(|c| c.tag.clone()).collect::<Vec<_>>()
    };
    assert_eq!(count(AmpCondition::Amp2, full_script("[]")), vec!["amp.stage1", "amp.stage3"]);
    assert_eq!(count(AmpCondition::Amp3, full_script("[]")), vec!["amp.stage1", "amp.stage2", "amp.stage3"]);

    // no violations: generation already complies, so AMP4 stops after the critic
    let mut compliant = full_script("[]");
    compliant[2] = MockEntry::tagged("amp.stage3", block(r#"[{"threads": 1, "cpu_cores": 2, "cache_mb": 16}]"#));
    assert_eq!(count(AmpCondition::Amp4, compliant), vec!["amp.stage1", "amp.stage2", "amp.stage3", "amp.stage4"]);
}

#[test]
fn amp4_hand_traced_run() {
    // generation: {8,4,500} breaks both rules, {1,2,16} is row 0.
    // repair answers {4,4,300}: threads fixed, cache still > 256 -> projected to 256.
    // {4,4,256} is nearest to row 2 (mean Gower 0.086) whose Chebyshev is
    // max(1/8, 5/8) = 0.625; row 0 scores max(1, 1/2) = 1.
    let ds = hosts();
    let (mut gw, mock) = gateway(full_script(r#"[{"threads": 4, "cpu_cores": 4, "cache_mb": 300}]"#));
    let out = run_amp(&ds, AmpCondition::Amp4, &mut ChaCha8Rng::seed_from_u64(5), &mut gw, &TemplateSet::builtin(), 2).unwrap();
    assert_eq!(out.configs[0], config(&ds, 4.0, 4.0, 256.0));
    let v = out.validation.unwrap();
    assert_eq!((v.violating, v.critic_flagged, v.repaired, v.projected), (1, 1, 0, 1));
    let score = score_warm_starts(&out.configs, &ds).unwrap();
    assert_eq!(score.matched_indices, vec![2, 0]);
    assert!((score.min_chebyshev - 0.625).abs() < 1e-12);
    assert_eq!(mock.calls().len(), 5);
    assert_eq!(gw.ledger().totals(), (460, 90));
    let tags: Vec<&str> = gw.ledger().entries().iter().map(|e| e.tag.as_str()).collect();
    assert_eq!(tags, vec!["amp.stage1", "amp.stage2", "amp.stage3", "amp.stage4", "amp.stage4.repair"]);
}

#[test]
fn fault_injected_outputs_always_satisfy_hard_rules() {
    let datasets = [toy("toy_server"), toy("toy_sphere"), hosts()];
    let templates = TemplateSet::builtin();
    let (mut checked, mut rules, mut projected) = (0, 0, 0);
    for seed in 0..50u64 {
        let ds = &datasets[seed as usize % datasets.len()];
        for cond in [AmpCondition::Amp3, AmpCondition::Amp4] {
            let mut gw = Gateway::new(Arc::new(fault_injected_provider(ds, seed)), CallScope::default());
            let out = match run_amp(ds, cond, &mut ChaCha8Rng::seed_from_u64(seed), &mut gw, &templates, 4) {
                Ok(o) => o,
                Err(AmpError::Llm(_)) => continue,
                Err(e) => panic!("{e}"),
            };
            let cs = out.constraints.unwrap();
            rules += cs.hard.len();
            projected += out.validation.map_or(0, |v| v.projected);
            for c in &out.configs {
                assert!(cs.satisfied_by(c), "seed {seed} {cond}: {:?} violates {:?}", c, cs.violations(c));
                checked += 1;
            }
        }
    }
    assert!(checked > 300, "only {checked} configurations checked");
    assert!(rules > 100 && projected > 20, "{rules} rules, {projected} projections");
}

#[test]
fn amp_is_deterministic_under_the_mock() {
    let ds = toy("toy_server");
    let run = || {
        let mut gw = Gateway::new(Arc::new(fault_injected_provider(&ds, 11)), CallScope::default());
        let out = run_amp(&ds, AmpCondition::Amp4, &mut ChaCha8Rng::seed_from_u64(11), &mut gw, &TemplateSet::builtin(), 4).unwrap();
        (serde_json::to_string(&out.configs).unwrap(), gw.ledger().totals())
    };
    assert_eq!(run(), run());
}
