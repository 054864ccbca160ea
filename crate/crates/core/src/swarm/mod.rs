//! Robots and the coordination scenarios they run over the ledger.
//!
//! Public keys are distributed through a trusted genesis registry: every
//! robot's key is known to every other robot from the start of a run.

pub mod assist;
pub mod attestation;
pub mod behavior;
pub mod s2aas;
pub mod voting;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::crypto::{KeyPair, PublicKey};
use crate::ledger::{ChainId, ChainParams, ChainState, MiningPolicy, Output};
use crate::netsim::{node_keys, LatencyModel, LoadConfig, NodeId, Partition, PartitionError, World, WorldConfig, WorldError};

pub use assist::{responder_policy, run_assist, AssistOutcome, AssistScenario, Decision, ResponderPolicy};
pub use attestation::{
    register_discovery, run_attestation, verify_discovery, AttestationOutcome, AttestationScenario, DiscoveryError,
    DiscoveryRecord,
};
pub use behavior::{run_behavior_switch, BehaviorOutcome, BehaviorScenario};
pub use s2aas::{run_s2aas, BlobStore, ExchangeOutcome, S2aaSScenario};
pub use voting::{run_voting, tally_votes, TallyError, VoteOutcome, VotingScenario};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Role {
    Utv,
    Uav,
    Uuv,
    Sensor,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Behavior {
    Decentralized,
    LeaderFollower,
}

#[derive(Debug, Clone)]
pub struct Robot {
    pub node: NodeId,
    pub keys: KeyPair,
    pub role: Role,
    pub position: (i32, i32),
    pub battery: f64,
    pub behavior: Behavior,
    pub data_price: u64,
}

impl Robot {
    pub fn public(&self) -> PublicKey {
        self.keys.public
    }
}

fn default_battery() -> f64 {
    1.0
}

fn default_balance() -> u64 {
    1_000
}

/// One roster entry.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RobotSpec {
    pub role: Role,
    /// Grid cell; defaults to a row-major layout ten cells wide.
    #[serde(default)]
    pub position: Option<(i32, i32)>,
    #[serde(default = "default_battery")]
    pub battery: f64,
    #[serde(default = "default_balance")]
    pub balance: u64,
    #[serde(default)]
    pub data_price: u64,
}

impl RobotSpec {
    pub fn new(role: Role) -> Self {
        Self {
            role,
            position: None,
            battery: default_battery(),
            balance: default_balance(),
            data_price: 0,
        }
    }
}

/// Mining policy by roster index.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum PolicyConfig {
    /// `miners` defaults to the whole roster in index order.
    RoundRobin {
        #[serde(default)]
        miners: Option<Vec<usize>>,
    },
    Pow { zero_bits: u8, attempts: u32 },
    SingleMiner { miner: usize },
}

impl Default for PolicyConfig {
    fn default() -> Self {
        PolicyConfig::RoundRobin { miners: None }
    }
}

fn default_chain_id() -> u32 {
    1
}
fn default_interval() -> u64 {
    10
}
fn default_capacity() -> u32 {
    100
}
fn default_depth() -> u32 {
    3
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ChainConfig {
    #[serde(default = "default_chain_id")]
    pub chain_id: u32,
    #[serde(default = "default_interval")]
    pub block_interval: u64,
    #[serde(default = "default_capacity")]
    pub max_tx_per_block: u32,
    #[serde(default = "default_depth")]
    pub confirmation_depth: u32,
    #[serde(default)]
    pub policy: PolicyConfig,
}

impl Default for ChainConfig {
    fn default() -> Self {
        Self {
            chain_id: default_chain_id(),
            block_interval: default_interval(),
            max_tx_per_block: default_capacity(),
            confirmation_depth: default_depth(),
            policy: PolicyConfig::default(),
        }
    }
}

/// Everything needed to build a [`Swarm`].
#[derive(Debug, Clone, PartialEq)]
pub struct SwarmConfig {
    pub seed: u64,
    pub robots: Vec<RobotSpec>,
    pub chain: ChainConfig,
    pub latency: LatencyModel,
    pub load: Option<LoadConfig>,
    pub partitions: Vec<Partition>,
    pub check_replay: bool,
}

impl SwarmConfig {
    pub fn new(seed: u64, robots: Vec<RobotSpec>) -> Self {
        Self {
            seed,
            robots,
            chain: ChainConfig::default(),
            latency: LatencyModel::default(),
            load: None,
            partitions: Vec::new(),
            check_replay: false,
        }
    }
}

#[derive(Debug, Error)]
pub enum SwarmError {
    #[error("roster index {0} is out of range")]
    UnknownRobot(usize),
    #[error("battery of robot {0} is outside [0, 1]")]
    Battery(usize),
    #[error(transparent)]
    World(#[from] WorldError),
    #[error(transparent)]
    Partition(#[from] PartitionError),
    #[error("scenario: {0}")]
    Scenario(String),
}

pub struct Swarm {
    world: World,
    robots: Vec<Robot>,
}

impl Swarm {
    pub fn new(cfg: &SwarmConfig) -> Result<Self, SwarmError> {
        let n = cfg.robots.len();
        let keys = node_keys(cfg.seed, n);
        for (i, r) in cfg.robots.iter().enumerate() {
            if !(0.0..=1.0).contains(&r.battery) {
                return Err(SwarmError::Battery(i));
            }
        }
        let addr = |i: usize| keys.get(i).map(|k| k.address()).ok_or(SwarmError::UnknownRobot(i));
        let policy = match &cfg.chain.policy {
            PolicyConfig::RoundRobin { miners } => {
                let idx: Vec<usize> = miners.clone().unwrap_or_else(|| (0..n).collect());
                MiningPolicy::RoundRobin {
                    miners: idx.into_iter().map(addr).collect::<Result<_, _>>()?,
                }
            }
            PolicyConfig::Pow { zero_bits, attempts } => MiningPolicy::Pow {
                zero_bits: *zero_bits,
                attempts: *attempts,
            },
            PolicyConfig::SingleMiner { miner } => MiningPolicy::SingleMiner { miner: addr(*miner)? },
        };
        let root = ChainParams {
            chain_id: ChainId(cfg.chain.chain_id),
            block_interval: cfg.chain.block_interval,
            max_tx_per_block: cfg.chain.max_tx_per_block,
            mining_policy: policy,
            confirmation_depth: cfg.chain.confirmation_depth,
            genesis_allocation: cfg
                .robots
                .iter()
                .zip(&keys)
                .filter(|(r, _)| r.balance > 0)
                .map(|(r, k)| Output::new(k.address(), r.balance))
                .collect(),
            parent: None,
        };
        let mut world = World::new(WorldConfig {
            seed: cfg.seed,
            keys: keys.clone(),
            root,
            latency: cfg.latency.clone(),
            load: cfg.load.clone(),
            check_replay: cfg.check_replay,
        })?;
        for p in &cfg.partitions {
            world.add_partition(p.groups.clone(), p.from, p.to)?;
        }
        let robots = cfg
            .robots
            .iter()
            .zip(keys)
            .enumerate()
            .map(|(i, (spec, keys))| Robot {
                node: world.node(i).id(),
                keys,
                role: spec.role,
                position: spec.position.unwrap_or(((i % 10) as i32, (i / 10) as i32)),
                battery: spec.battery,
                behavior: Behavior::Decentralized,
                data_price: spec.data_price,
            })
            .collect();
        Ok(Self { world, robots })
    }

    pub fn world(&self) -> &World {
        &self.world
    }

    pub fn world_mut(&mut self) -> &mut World {
        &mut self.world
    }

    pub fn robots(&self) -> &[Robot] {
        &self.robots
    }

    pub fn robot(&self, i: usize) -> Result<&Robot, SwarmError> {
        self.robots.get(i).ok_or(SwarmError::UnknownRobot(i))
    }

    pub fn root_id(&self) -> ChainId {
        self.world.root_id()
    }

    /// Robot `i`'s view of the root chain.
    pub fn view(&self, i: usize) -> &ChainState {
        self.world.node(i).root()
    }

    pub fn confirmation_depth(&self) -> u64 {
        self.view(0).params().confirmation_depth as u64
    }

    fn check_index(&self, i: usize) -> Result<(), SwarmError> {
        self.robot(i).map(|_| ())
    }
}

/// Scenario selector plus its parameters.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "name", rename_all = "snake_case")]
pub enum ScenarioConfig {
    Voting(VotingScenario),
    Assist(AssistScenario),
    BehaviorSwitch(BehaviorScenario),
    S2aas(S2aaSScenario),
    Attestation(AttestationScenario),
}

pub const SCENARIO_NAMES: [&str; 5] = ["voting", "assist", "behavior_switch", "s2aas", "attestation"];

impl ScenarioConfig {
    pub fn name(&self) -> &'static str {
        match self {
            ScenarioConfig::Voting(_) => SCENARIO_NAMES[0],
            ScenarioConfig::Assist(_) => SCENARIO_NAMES[1],
            ScenarioConfig::BehaviorSwitch(_) => SCENARIO_NAMES[2],
            ScenarioConfig::S2aas(_) => SCENARIO_NAMES[3],
            ScenarioConfig::Attestation(_) => SCENARIO_NAMES[4],
        }
    }
}

#[derive(Debug, Clone, Serialize)]
#[serde(tag = "scenario", rename_all = "snake_case")]
pub enum Outcome {
    Voting(VoteOutcome),
    Assist(AssistOutcome),
    BehaviorSwitch(BehaviorOutcome),
    S2aas(ExchangeOutcome),
    Attestation(AttestationOutcome),
}

impl Outcome {
    /// `None` on success, otherwise the scenario-level reason it did not succeed.
    pub fn negative(&self) -> Option<String> {
        match self {
            Outcome::Voting(o) => o.winner.is_none().then(|| "no-decision".to_string()),
            Outcome::Assist(o) => o.responder.is_none().then(|| "no-responder".to_string()),
            Outcome::BehaviorSwitch(o) => (!o.consistent()).then(|| "behavior-inconsistent".to_string()),
            Outcome::S2aas(o) => (!o.success).then(|| o.failure.clone().unwrap_or_else(|| "exchange-failed".into())),
            Outcome::Attestation(o) => (!o.verified).then(|| "attestation-unverified".to_string()),
        }
    }
}

/// Runs `scenario`, giving it at most `limit` ticks.
pub fn run_scenario(
    swarm: &mut Swarm,
    scenario: &ScenarioConfig,
    blobs: &mut BlobStore,
    limit: u64,
) -> Result<Outcome, SwarmError> {
    Ok(match scenario {
        ScenarioConfig::Voting(c) => Outcome::Voting(run_voting(swarm, c, limit)?),
        ScenarioConfig::Assist(c) => Outcome::Assist(run_assist(swarm, c, limit)?),
        ScenarioConfig::BehaviorSwitch(c) => Outcome::BehaviorSwitch(run_behavior_switch(swarm, c, limit)?),
        ScenarioConfig::S2aas(c) => Outcome::S2aas(run_s2aas(swarm, c, blobs, limit)?),
        ScenarioConfig::Attestation(c) => Outcome::Attestation(run_attestation(swarm, c, limit)?),
    })
}
