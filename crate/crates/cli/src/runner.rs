//! Executing a run and writing its artifacts.

use std::fs;
use std::io::{self, Write};
use std::path::{Path, PathBuf};

use swarmledger_core::ledger::dump::write_dump;
use swarmledger_core::swarm::{run_scenario, BlobStore, Outcome, Swarm, SwarmError};
use thiserror::Error;

use crate::config::RunConfig;
use crate::metrics::{self, LatencyStats, RunMetrics};

#[derive(Debug, Error)]
pub enum RunError {
    #[error(transparent)]
    Swarm(#[from] SwarmError),
    #[error("{0}: {1}")]
    Io(PathBuf, io::Error),
}

pub struct Simulation {
    pub swarm: Swarm,
    pub outcome: Option<Outcome>,
    pub converged: bool,
}

/// Runs the scenario (if any), advances to `duration`, then settles.
pub fn simulate(cfg: &RunConfig, blobs: &mut BlobStore) -> Result<Simulation, RunError> {
    let mut swarm = Swarm::new(&cfg.swarm_config())?;
    let outcome = match &cfg.scenario {
        Some(s) => Some(run_scenario(&mut swarm, s, blobs, cfg.duration)?),
        None => None,
    };
    let world = swarm.world_mut();
    if world.tick() < cfg.duration {
        world.step(cfg.duration);
    }
    let converged = world.settle(cfg.settle_budget());
    Ok(Simulation {
        swarm,
        outcome,
        converged,
    })
}

pub fn compute_metrics(cfg: &RunConfig, sim: &Simulation) -> RunMetrics {
    let world = sim.swarm.world();
    let view = sim.swarm.view(0);
    let k = view.params().confirmation_depth;
    let conserved = world.conserved();
    let negative = sim.outcome.as_ref().and_then(|o| o.negative());
    let (status, reason) = if !conserved {
        ("error", Some("conservation-violated".to_string()))
    } else if let Some(r) = negative {
        ("negative", Some(r))
    } else {
        ("success", None)
    };
    RunMetrics {
        scenario: cfg.scenario.as_ref().map(|s| s.name().to_string()),
        seed: cfg.seed,
        experiment: cfg.experiment_digest(),
        final_tick: world.tick(),
        confirmation_depth: k,
        latency: LatencyStats::from_samples(metrics::latency_samples(world, view, k as u64)),
        throughput: metrics::throughput(view),
        orphans: metrics::orphans(view),
        ledger_bytes: metrics::ledger_bytes(world),
        conserved,
        converged: sim.converged,
        replay_ok: world.replay_ok(),
        status: status.to_string(),
        reason,
        outcome: sim
            .outcome
            .as_ref()
            .map(|o| serde_json::to_value(o).expect("outcome serializes")),
    }
}

fn io_err(path: &Path) -> impl FnOnce(io::Error) -> RunError + '_ {
    move |e| RunError::Io(path.to_path_buf(), e)
}

fn write_json(path: &Path, value: &impl serde::Serialize) -> Result<(), RunError> {
    let mut text = serde_json::to_string_pretty(value).expect("serializes");
    text.push('\n');
    fs::write(path, text).map_err(io_err(path))
}

/// Runs `cfg` and writes `config.json`, `metrics.json`, `events.jsonl`,
/// `blobs/`, the observer's `chain_<id>.{bin,jsonl}` and every node's copy
/// under `chains/node<i>/`.
pub fn run(cfg: &RunConfig, dir: &Path) -> Result<RunMetrics, RunError> {
    fs::create_dir_all(dir).map_err(io_err(dir))?;
    write_json(&dir.join("config.json"), cfg)?;
    let mut blobs = BlobStore::on_disk(dir.join("blobs"));
    let sim = simulate(cfg, &mut blobs)?;
    let metrics = compute_metrics(cfg, &sim);
    write_json(&dir.join("metrics.json"), &metrics)?;

    let events = dir.join("events.jsonl");
    let mut out = io::BufWriter::new(fs::File::create(&events).map_err(io_err(&events))?);
    for e in sim.swarm.world().events() {
        serde_json::to_writer(&mut out, e).expect("event serializes");
        out.write_all(b"\n").map_err(io_err(&events))?;
    }
    out.flush().map_err(io_err(&events))?;

    for (_, state) in sim.swarm.world().node(0).chains().iter() {
        write_dump(state, dir).map_err(io_err(dir))?;
    }
    for (i, node) in sim.swarm.world().nodes().iter().enumerate() {
        let nd = dir.join("chains").join(format!("node{i}"));
        fs::create_dir_all(&nd).map_err(io_err(&nd))?;
        for (_, state) in node.chains().iter() {
            write_dump(state, &nd).map_err(io_err(&nd))?;
        }
    }
    Ok(metrics)
}

/// 0 on success, 2 on a scenario-negative outcome, 1 otherwise.
pub fn exit_code(m: &RunMetrics) -> i32 {
    match m.status.as_str() {
        "success" => 0,
        "negative" => 2,
        _ => 1,
    }
}
