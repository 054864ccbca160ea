//! Run configuration: JSON in, validated [`RunConfig`] out.

use std::fmt;
use std::path::Path;

use serde::{Deserialize, Serialize};
use swarmledger_core::crypto::hash;
use swarmledger_core::netsim::{LatencyModel, LoadConfig, Partition};
use swarmledger_core::swarm::{ChainConfig, PolicyConfig, Role, RobotSpec, ScenarioConfig, SwarmConfig, SCENARIO_NAMES};

fn default_duration() -> u64 {
    1_000
}
fn default_role() -> Role {
    Role::Uav
}
fn default_balance() -> u64 {
    1_000
}

/// Defaults: seed 0, 1000 ticks, five UAVs holding 1000 tokens each, root
/// chain 1 with a 10-tick interval, 100 transactions per block, k = 3 and
/// round-robin mining over the whole roster, fixed 2-tick latency, no load,
/// no partitions, no scenario.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    #[serde(default)]
    pub seed: u64,
    /// Simulated ticks before the network is allowed to settle.
    #[serde(default = "default_duration")]
    pub duration: u64,
    /// Size of a uniform roster; ignored when `robots` is given.
    #[serde(default)]
    pub nodes: Option<usize>,
    #[serde(default = "default_role")]
    pub role: Role,
    /// Genesis balance of every robot in a uniform roster.
    #[serde(default = "default_balance")]
    pub balance: u64,
    /// Explicit roster.
    #[serde(default)]
    pub robots: Option<Vec<RobotSpec>>,
    #[serde(default)]
    pub chain: ChainConfig,
    #[serde(default)]
    pub latency: LatencyModel,
    #[serde(default)]
    pub load: Option<LoadConfig>,
    #[serde(default)]
    pub partitions: Vec<Partition>,
    #[serde(default)]
    pub scenario: Option<ScenarioConfig>,
    /// Tick budget for [`settle`](swarmledger_core::netsim::World::settle);
    /// defaults to 100 block intervals.
    #[serde(default)]
    pub settle_limit: Option<u64>,
    /// Replay every chain from genesis after each block (slow).
    #[serde(default)]
    pub check_replay: bool,
}

impl Default for RunConfig {
    fn default() -> Self {
        serde_json::from_str("{}").expect("defaults deserialize")
    }
}

#[derive(Debug)]
pub enum ConfigError {
    Io(String, std::io::Error),
    /// Malformed JSON or a field of the wrong type, with line and column.
    Parse(String),
    /// Every violated rule.
    Invalid(Vec<String>),
}

impl fmt::Display for ConfigError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            ConfigError::Io(path, e) => write!(f, "cannot read {path}: {e}"),
            ConfigError::Parse(m) => write!(f, "parse error: {m}"),
            ConfigError::Invalid(errs) => {
                write!(f, "invalid config:")?;
                for e in errs {
                    write!(f, "\n  - {e}")?;
                }
                Ok(())
            }
        }
    }
}

impl std::error::Error for ConfigError {}

pub fn load_config(path: &Path) -> Result<RunConfig, ConfigError> {
    let text = std::fs::read_to_string(path).map_err(|e| ConfigError::Io(path.display().to_string(), e))?;
    parse_config(&text)
}

pub fn parse_config(text: &str) -> Result<RunConfig, ConfigError> {
    let raw: serde_json::Value = serde_json::from_str(text).map_err(|e| ConfigError::Parse(e.to_string()))?;
    if let Some(name) = raw.get("scenario").and_then(|s| s.get("name")) {
        let known = name.as_str().is_some_and(|n| SCENARIO_NAMES.contains(&n));
        if !known {
            return Err(ConfigError::Invalid(vec![format!(
                "unknown scenario {name}; valid scenarios are {}",
                SCENARIO_NAMES.join(", ")
            )]));
        }
    }
    let cfg: RunConfig = serde_json::from_str(text).map_err(|e| ConfigError::Parse(e.to_string()))?;
    cfg.validate().map_err(ConfigError::Invalid)?;
    Ok(cfg)
}

impl RunConfig {
    pub fn roster(&self) -> Vec<RobotSpec> {
        match &self.robots {
            Some(r) => r.clone(),
            None => (0..self.nodes.unwrap_or(5))
                .map(|_| RobotSpec {
                    balance: self.balance,
                    ..RobotSpec::new(self.role)
                })
                .collect(),
        }
    }

    pub fn settle_budget(&self) -> u64 {
        self.settle_limit.unwrap_or(100 * self.chain.block_interval.max(1))
    }

    /// Every violated rule, not just the first.
    pub fn validate(&self) -> Result<(), Vec<String>> {
        let mut errs = Vec::new();
        let roster = self.roster();
        let n = roster.len();
        let idx = |errs: &mut Vec<String>, what: &str, i: usize| {
            if i >= n {
                errs.push(format!("{what}: robot index {i} is outside the roster of {n}"));
            }
        };

        if n == 0 {
            errs.push("roster must contain at least one robot".into());
        }
        if let (Some(count), Some(r)) = (self.nodes, &self.robots) {
            if count != r.len() {
                errs.push(format!("nodes = {count} disagrees with the {} robots listed", r.len()));
            }
        }
        for (i, r) in roster.iter().enumerate() {
            if !(0.0..=1.0).contains(&r.battery) {
                errs.push(format!("robots[{i}].battery must lie in [0, 1]"));
            }
        }
        if roster.iter().all(|r| r.balance == 0) {
            errs.push("at least one robot needs a genesis balance".into());
        }

        let c = &self.chain;
        if c.block_interval == 0 {
            errs.push("chain.block_interval must be >= 1".into());
        }
        if c.max_tx_per_block == 0 {
            errs.push("chain.max_tx_per_block must be >= 1".into());
        }
        if c.confirmation_depth == 0 {
            errs.push("chain.confirmation_depth must be >= 1".into());
        }
        match &c.policy {
            PolicyConfig::RoundRobin { miners: Some(m) } => {
                if m.is_empty() {
                    errs.push("chain.policy.miners must not be empty".into());
                }
                for &i in m {
                    idx(&mut errs, "chain.policy.miners", i);
                }
            }
            PolicyConfig::RoundRobin { miners: None } => {}
            PolicyConfig::Pow { attempts, .. } => {
                if *attempts == 0 {
                    errs.push("chain.policy.attempts must be >= 1".into());
                }
            }
            PolicyConfig::SingleMiner { miner } => idx(&mut errs, "chain.policy.miner", *miner),
        }
        if self.duration < 2 * c.block_interval {
            errs.push(format!(
                "duration ({}) must be >= 2 x block_interval ({})",
                self.duration,
                2 * c.block_interval
            ));
        }
        if let Err(e) = self.latency.validate(n) {
            errs.push(format!("latency: {e}"));
        }
        if let Some(l) = &self.load {
            if l.period == 0 {
                errs.push("load.period must be >= 1".into());
            }
            if l.amount == 0 {
                errs.push("load.amount must be >= 1".into());
            }
        }
        for (k, p) in self.partitions.iter().enumerate() {
            for &i in p.groups.iter().flatten() {
                idx(&mut errs, &format!("partitions[{k}]"), i);
            }
            if p.from >= p.to {
                errs.push(format!("partitions[{k}]: from must be < to"));
            }
        }
        if let Some(s) = &self.scenario {
            self.validate_scenario(s, &roster, &mut errs);
        }
        if errs.is_empty() {
            Ok(())
        } else {
            Err(errs)
        }
    }

    fn validate_scenario(&self, s: &ScenarioConfig, roster: &[RobotSpec], errs: &mut Vec<String>) {
        let n = roster.len();
        let mut check = |what: &str, i: usize| {
            if i >= n {
                errs.push(format!("scenario.{what}: robot index {i} is outside the roster of {n}"));
            }
        };
        match s {
            ScenarioConfig::Voting(v) => {
                check("proposer", v.proposer);
                v.voters.iter().flatten().for_each(|&i| check("voters", i));
            }
            ScenarioConfig::Assist(a) => {
                a.caller.iter().for_each(|&i| check("caller", i));
                a.candidates.iter().flatten().for_each(|&i| check("candidates", i));
            }
            ScenarioConfig::BehaviorSwitch(b) => {
                check("leader", b.leader);
                b.switch.iter().for_each(|&i| check("switch", i));
            }
            ScenarioConfig::S2aas(x) => x.requester.iter().for_each(|&i| check("requester", i)),
            ScenarioConfig::Attestation(a) => a.robots.iter().for_each(|&i| check("robots", i)),
        }
        match s {
            ScenarioConfig::Voting(v) => {
                if v.options < 2 {
                    errs.push("scenario.options must be >= 2".into());
                }
                if v.truth >= v.options {
                    errs.push("scenario.truth must index an option".into());
                }
                if !(0.0..=1.0).contains(&v.error_rate) {
                    errs.push("scenario.error_rate must lie in [0, 1]".into());
                }
            }
            ScenarioConfig::Assist(a) => {
                if a.escrow == 0 {
                    errs.push("scenario.escrow must be >= 1".into());
                }
                if a.caller.is_none() && !roster.iter().any(|r| r.role == Role::Utv) {
                    errs.push("scenario: assist needs a UTV in the roster or an explicit caller".into());
                }
            }
            ScenarioConfig::BehaviorSwitch(b) => {
                if !b.switch.contains(&b.leader) {
                    errs.push("scenario.leader must be one of scenario.switch".into());
                }
                if b.side_chain_id == self.chain.chain_id {
                    errs.push("scenario.side_chain_id must differ from chain.chain_id".into());
                }
            }
            ScenarioConfig::S2aas(_) => {
                if !roster.iter().any(|r| r.role == Role::Sensor) {
                    errs.push("scenario: s2aas needs at least one sensor robot".into());
                }
            }
            ScenarioConfig::Attestation(a) => {
                if a.document.is_empty() {
                    errs.push("scenario.document must not be empty".into());
                }
            }
        }
    }

    pub fn swarm_config(&self) -> SwarmConfig {
        SwarmConfig {
            seed: self.seed,
            robots: self.roster(),
            chain: self.chain.clone(),
            latency: self.latency.clone(),
            load: self.load.clone(),
            partitions: self.partitions.clone(),
            check_replay: self.check_replay,
        }
    }

    /// Digest of the configuration with the seed cleared, so that runs of
    /// the same experiment under different seeds compare equal.
    pub fn experiment_digest(&self) -> String {
        let mut c = self.clone();
        c.seed = 0;
        hash(serde_json::to_string(&c).expect("config serializes").as_bytes()).to_hex()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn empty_object_gives_documented_defaults() {
        let c = parse_config("{}").unwrap();
        assert_eq!(c.seed, 0);
        assert_eq!(c.duration, 1_000);
        assert_eq!(c.roster().len(), 5);
        assert!(c.roster().iter().all(|r| r.role == Role::Uav && r.balance == 1_000));
        assert_eq!(c.chain.block_interval, 10);
        assert_eq!(c.chain.max_tx_per_block, 100);
        assert_eq!(c.chain.confirmation_depth, 3);
        assert_eq!(c.latency, LatencyModel::Fixed { ticks: 2 });
        assert!(c.scenario.is_none() && c.load.is_none());
        assert_eq!(c, RunConfig::default());
    }

    #[test]
    fn short_duration_names_the_rule() {
        let err = parse_config(r#"{"duration": 15}"#).unwrap_err();
        assert!(err.to_string().contains("duration (15) must be >= 2 x block_interval (20)"), "{err}");
    }

    #[test]
    fn unknown_scenario_lists_all_five() {
        let err = parse_config(r#"{"scenario": {"name": "dance"}}"#).unwrap_err().to_string();
        for name in SCENARIO_NAMES {
            assert!(err.contains(name), "{err}");
        }
    }

    #[test]
    fn every_violation_is_reported() {
        let text = r#"{
            "duration": 5,
            "nodes": 3,
            "chain": {"confirmation_depth": 0, "policy": {"kind": "single_miner", "miner": 7}},
            "scenario": {"name": "behavior_switch", "leader": 1, "switch": [0, 9]}
        }"#;
        let ConfigError::Invalid(errs) = parse_config(text).unwrap_err() else {
            panic!("expected validation errors");
        };
        assert!(errs.len() >= 5, "{errs:#?}");
    }

    #[test]
    fn parse_error_carries_position() {
        let err = parse_config("{\n  \"seed\": \"x\"\n}").unwrap_err().to_string();
        assert!(err.contains("line 2"), "{err}");
        let err = parse_config(r#"{"sede": 1}"#).unwrap_err().to_string();
        assert!(err.contains("sede"), "{err}");
    }

    #[test]
    fn digest_ignores_seed() {
        let a = parse_config(r#"{"seed": 1}"#).unwrap();
        let b = parse_config(r#"{"seed": 2}"#).unwrap();
        let c = parse_config(r#"{"seed": 2, "duration": 500}"#).unwrap();
        assert_eq!(a.experiment_digest(), b.experiment_digest());
        assert_ne!(b.experiment_digest(), c.experiment_digest());
    }
}
