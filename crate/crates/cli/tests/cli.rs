use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use serde_json::Value;
use swarmledger_cli::report::summarize;
use swarmledger_cli::{parse_config, run, RunMetrics};
use swarmledger_core::crypto::Digest256;
use swarmledger_core::ledger::dump::read_dump;

fn bin() -> Command {
    let mut c = Command::new(env!("CARGO_BIN_EXE_swarmledger"));
    c.env_remove("SWARMLEDGER_OUT");
    c
}

fn write_config(dir: &Path, name: &str, text: &str) -> PathBuf {
    let p = dir.join(name);
    std::fs::write(&p, text).unwrap();
    p
}

fn text(o: &Output) -> String {
    format!("{}{}", String::from_utf8_lossy(&o.stdout), String::from_utf8_lossy(&o.stderr))
}

const LOAD: &str = r#"{"seed": 3, "duration": 200, "nodes": 3,
    "load": {"txs_per_period": 1, "period": 5, "start": 1}}"#;

#[test]
fn run_then_validate_chain() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = write_config(tmp.path(), "load.json", LOAD);
    let out = bin().arg("run").arg(&cfg).arg("--out").arg(tmp.path().join("runs")).output().unwrap();
    assert_eq!(out.status.code(), Some(0), "{}", text(&out));

    let dir = tmp.path().join("runs/load-seed3");
    for f in ["config.json", "metrics.json", "events.jsonl", "chain_1.bin", "chain_1.jsonl", "chains/node2/chain_1.bin"] {
        assert!(dir.join(f).exists(), "missing {f}");
    }
    let echoed: Value = serde_json::from_str(&std::fs::read_to_string(dir.join("config.json")).unwrap()).unwrap();
    assert_eq!(echoed["chain"]["block_interval"], 10);

    let dump = dir.join("chain_1.bin");
    let ok = bin().arg("validate-chain").arg(&dump).output().unwrap();
    assert_eq!(ok.status.code(), Some(0), "{}", text(&ok));
    assert!(text(&ok).starts_with("ok"));

    let mut bytes = std::fs::read(&dump).unwrap();
    let mid = bytes.len() / 2;
    bytes[mid] ^= 1;
    let bad = tmp.path().join("bad.bin");
    std::fs::write(&bad, bytes).unwrap();
    let fail = bin().arg("validate-chain").arg(&bad).output().unwrap();
    assert_eq!(fail.status.code(), Some(1));
    assert!(text(&fail).contains("FAIL"));
}

#[test]
fn seed_flag_and_env_root() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = write_config(tmp.path(), "load.json", LOAD);
    let out = bin()
        .arg("run")
        .arg(&cfg)
        .args(["--seed", "9"])
        .env("SWARMLEDGER_OUT", tmp.path().join("env"))
        .output()
        .unwrap();
    assert_eq!(out.status.code(), Some(0), "{}", text(&out));
    let m: RunMetrics =
        serde_json::from_str(&std::fs::read_to_string(tmp.path().join("env/load-seed9/metrics.json")).unwrap()).unwrap();
    assert_eq!(m.seed, 9);
}

#[test]
fn unanswered_assist_exits_two() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = write_config(
        tmp.path(),
        "assist.json",
        r#"{"seed": 1, "duration": 400,
            "robots": [{"role": "utv"}, {"role": "uav", "battery": 0.1}, {"role": "uuv", "battery": 0.1}],
            "scenario": {"name": "assist", "escrow": 5}}"#,
    );
    let out = bin().arg("run").arg(&cfg).arg("--out").arg(tmp.path()).output().unwrap();
    assert_eq!(out.status.code(), Some(2), "{}", text(&out));
    assert!(text(&out).contains("no-responder"));
}

#[test]
fn invalid_config_exits_one_with_every_violation() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = write_config(
        tmp.path(),
        "bad.json",
        r#"{"duration": 5, "scenario": {"name": "voting", "proposer": 40}}"#,
    );
    let out = bin().arg("run").arg(&cfg).arg("--out").arg(tmp.path()).output().unwrap();
    assert_eq!(out.status.code(), Some(1));
    let msg = text(&out);
    assert!(msg.contains("block_interval"), "{msg}");
    assert!(msg.contains("proposer"), "{msg}");
}

#[test]
fn same_seed_gives_identical_metrics_bytes() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = write_config(tmp.path(), "load.json", LOAD);
    for root in ["a", "b"] {
        let out = bin().arg("run").arg(&cfg).arg("--out").arg(tmp.path().join(root)).output().unwrap();
        assert_eq!(out.status.code(), Some(0));
    }
    let read = |r: &str, f: &str| std::fs::read(tmp.path().join(r).join("load-seed3").join(f)).unwrap();
    for f in ["metrics.json", "chain_1.bin", "events.jsonl"] {
        assert_eq!(read("a", f), read("b", f), "{f}");
    }
}

fn voting_metrics(seed: u64, dir: &Path) -> RunMetrics {
    let cfg = parse_config(&format!(
        r#"{{"seed": {seed}, "duration": 200, "nodes": 9, "chain": {{"confirmation_depth": 1}},
            "scenario": {{"name": "voting", "error_rate": 0.35, "window": 5}}}}"#
    ))
    .unwrap();
    run(&cfg, &dir.join(seed.to_string())).unwrap()
}

#[test]
fn single_file_report_is_identity() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = parse_config(LOAD).unwrap();
    let m = run(&cfg, tmp.path()).unwrap();
    let g = summarize(&[("m".into(), m.clone())]).remove(0);
    assert_eq!(g.runs, 1);
    assert_eq!(g.seeds, vec![3]);
    assert_eq!(g.latency_mean, m.latency.mean);
    assert_eq!(g.latency_median, m.latency.median);
    assert_eq!(g.latency_p95, m.latency.p95);
    assert_eq!(g.throughput_mean, m.throughput.overall);
    assert_eq!(g.orphan_rate_mean, m.orphans.rate);
    assert!(g.incompatible.is_empty());
}

#[test]
fn report_accuracy_is_recounted_fraction() {
    let tmp = tempfile::tempdir().unwrap();
    let files: Vec<(String, RunMetrics)> =
        (0..10).map(|s| (format!("{s}/metrics.json"), voting_metrics(s, tmp.path()))).collect();
    // Recount from the raw metrics files rather than the typed structs.
    let mut right = 0;
    for s in 0..10 {
        let v: Value =
            serde_json::from_str(&std::fs::read_to_string(tmp.path().join(format!("{s}/metrics.json"))).unwrap())
                .unwrap();
        let o = &v["outcome"];
        right += (o["winner"] == o["truth"]) as u32;
    }
    let g = summarize(&files).remove(0);
    assert_eq!(g.scenario, "voting");
    assert_eq!(g.vote_accuracy, Some(right as f64 / 10.0));
    assert!(right < 10, "noise this high should flip at least one seed");

    let paths: Vec<PathBuf> = (0..10).map(|s| tmp.path().join(format!("{s}/metrics.json"))).collect();
    let out = bin().arg("report").arg("--json").args(&paths).output().unwrap();
    assert_eq!(out.status.code(), Some(0));
    let cli: Value = serde_json::from_slice(&out.stdout).unwrap();
    assert_eq!(cli[0]["vote_accuracy"], serde_json::json!(right as f64 / 10.0));
}

#[test]
fn mixed_scenarios_are_grouped_and_mismatches_flagged() {
    let tmp = tempfile::tempdir().unwrap();
    let load = run(&parse_config(LOAD).unwrap(), &tmp.path().join("load")).unwrap();
    let other_load = run(
        &parse_config(r#"{"seed": 4, "duration": 200, "nodes": 4, "load": {"txs_per_period": 1, "period": 5}}"#).unwrap(),
        &tmp.path().join("load2"),
    )
    .unwrap();
    let vote = voting_metrics(1, tmp.path());
    let groups = summarize(&[
        ("load".into(), load.clone()),
        ("vote".into(), vote.clone()),
        ("load2".into(), other_load.clone()),
    ]);
    let names: Vec<_> = groups.iter().map(|g| g.scenario.as_str()).collect();
    assert_eq!(names, ["none", "voting"]);
    assert_eq!(groups[0].runs, 2);
    assert_eq!(groups[0].throughput_mean, (load.throughput.overall + other_load.throughput.overall) / 2.0);
    assert_eq!(groups[0].incompatible, ["load2"]);
    assert_eq!(groups[1].throughput_mean, vote.throughput.overall);
    assert!(groups[0].vote_accuracy.is_none());
}

#[test]
fn windows_sum_to_total() {
    let tmp = tempfile::tempdir().unwrap();
    for seed in 0..4 {
        let cfg = parse_config(&format!(
            r#"{{"seed": {seed}, "duration": 337, "nodes": 4,
                "chain": {{"policy": {{"kind": "pow", "zero_bits": 3, "attempts": 2}}}},
                "latency": {{"kind": "uniform", "lo": 1, "hi": 4}},
                "load": {{"txs_per_period": 3, "period": 2}}}}"#
        ))
        .unwrap();
        let m = run(&cfg, &tmp.path().join(seed.to_string())).unwrap();
        let sum: u64 = m.throughput.windows.iter().map(|w| w.txs).sum();
        assert_eq!(sum, m.throughput.total_txs);
        let bin = std::fs::read(tmp.path().join(format!("{seed}/chain_1.bin"))).unwrap();
        let canonical: usize = read_dump(&bin).unwrap().iter().map(|b| b.txs.len()).sum();
        assert_eq!(sum, canonical as u64);
    }
}

fn digest(v: &Value) -> Digest256 {
    let bytes = hex::decode(v.as_str().unwrap()).unwrap();
    Digest256(bytes.try_into().unwrap())
}

#[test]
fn latency_samples_trace_to_events() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = parse_config(
        r#"{"seed": 6, "duration": 300, "nodes": 4, "chain": {"confirmation_depth": 2},
            "load": {"txs_per_period": 1, "period": 3, "start": 1}}"#,
    )
    .unwrap();
    let m = run(&cfg, tmp.path()).unwrap();

    let mut submitted: BTreeMap<Digest256, u64> = BTreeMap::new();
    let mut arrived: BTreeMap<Digest256, u64> = BTreeMap::new();
    for line in std::fs::read_to_string(tmp.path().join("events.jsonl")).unwrap().lines() {
        let e: Value = serde_json::from_str(line).unwrap();
        let tick = e["tick"].as_u64().unwrap();
        match e["event"].as_str().unwrap() {
            "tx_submitted" => {
                submitted.entry(digest(&e["txid"])).or_insert(tick);
            }
            "block_mined" if e["node"] == 0 => {
                arrived.entry(digest(&e["digest"])).or_insert(tick);
            }
            "delivered" if e["to"] == 0 && e["kind"] == "block_gossip" => {
                arrived.entry(digest(&e["item"])).or_insert(tick);
            }
            _ => {}
        }
    }
    let blocks = read_dump(&std::fs::read(tmp.path().join("chain_1.bin")).unwrap()).unwrap();
    let mut expected = Vec::new();
    for (txid, sent) in &submitted {
        let Some(h) = blocks.iter().position(|b| b.txs.iter().any(|t| t.txid() == *txid)) else { continue };
        let Some(confirming) = blocks.get(h + 1) else { continue };
        expected.push(arrived[&confirming.digest()] - sent);
    }
    assert!(expected.len() > 20);
    assert_eq!(m.latency.samples, expected);
}

#[test]
fn shipped_configs_succeed() {
    let tmp = tempfile::tempdir().unwrap();
    let dir = Path::new(env!("CARGO_MANIFEST_DIR")).join("configs");
    let mut seen = 0;
    for e in std::fs::read_dir(dir).unwrap() {
        let p = e.unwrap().path();
        let cfg = swarmledger_cli::load_config(&p).unwrap();
        let m = run(&cfg, &tmp.path().join(p.file_stem().unwrap())).unwrap();
        assert_eq!(m.status, "success", "{}: {:?}", p.display(), m.reason);
        seen += 1;
    }
    assert_eq!(seen, 7);
}
