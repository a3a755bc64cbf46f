use serde_json::Value;
use warmstart_wasm_demo::{duel, landscape_json, rank_json};

#[test]
fn ranking_separates_clusters() {
    let mk = |c: f64| (0..20).map(|i| c + 0.0005 * i as f64).collect::<Vec<_>>();
    let input = serde_json::json!({
        "treatments": [
            {"label": "slow", "values": mk(0.9)},
            {"label": "fast", "values": mk(0.1)},
            {"label": "mid", "values": mk(0.5)}
        ],
        "baseline": "mid",
        "seed": 3
    });
    let table: Value = serde_json::from_str(&rank_json(&input.to_string()).unwrap()).unwrap();
    let ranks: Vec<(String, u64)> = table["entries"]
        .as_array()
        .unwrap()
        .iter()
        .map(|e| (e["label"].as_str().unwrap().to_string(), e["rank"].as_u64().unwrap()))
        .collect();
    assert_eq!(ranks, vec![("fast".into(), 1), ("mid".into(), 2), ("slow".into(), 3)]);
    assert!(rank_json(r#"{"treatments": []}"#).is_err());
    assert!(rank_json("not json").is_err());
}

#[test]
fn duel_is_paired_and_deterministic() {
    let a = duel(0.7, 0.3, 20, 10).unwrap();
    let b = duel(0.7, 0.3, 20, 10).unwrap();
    assert_eq!(a.tpe, b.tpe);
    assert_eq!(a.tpe.len(), 20);
    assert!(a.tpe_median <= a.random_median);
    assert!(duel(1.5, 0.3, 20, 10).is_err());
    assert!(duel(0.5, 0.5, 0, 10).is_err());
}

#[test]
fn landscape_marks_the_optimum() {
    let out: Value = serde_json::from_str(&landscape_json("a,Cost-,Gain+\n1,10,5\n2,4,9\n3,7,1\n").unwrap()).unwrap();
    assert_eq!(out["optimum"], 1);
    assert_eq!(out["rows"][1], 0.0);
    assert_eq!(out["tier"], "low");
    assert!(landscape_json("only,features\n1,2\n").is_err());
}
