//! Switching a subset of robots from decentralized operation to a
//! leader-follower team running its own sidechain.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};
use serde_json::json;

use crate::codec::Encode;
use crate::ledger::{ChainId, ChainParams, MiningPolicy, Output, TxKind};
use crate::netsim::Event;
use crate::swarm::{Behavior, Swarm, SwarmError};

fn default_side_chain() -> u32 {
    2
}
fn default_side_blocks() -> u64 {
    20
}
fn default_peg() -> u64 {
    10
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BehaviorScenario {
    pub leader: usize,
    /// Robots that switch; must include the leader.
    pub switch: Vec<usize>,
    #[serde(default = "default_side_chain")]
    pub side_chain_id: u32,
    /// Run until the sidechain reaches this height.
    #[serde(default = "default_side_blocks")]
    pub side_blocks: u64,
    /// Tokens pegged to each switching robot.
    #[serde(default = "default_peg")]
    pub peg_amount: u64,
    /// Sidechain block interval; defaults to the root chain's.
    #[serde(default)]
    pub side_interval: Option<u64>,
}

#[derive(Debug, Clone, Serialize)]
pub struct BehaviorOutcome {
    pub leader: usize,
    pub switched: Vec<usize>,
    pub side_chain: ChainId,
    pub peg_out: crate::crypto::Digest256,
    pub switch_tick: Option<u64>,
    pub side_height: u64,
    /// Canonical sidechain blocks per miner (roster index).
    pub side_miners: BTreeMap<usize, u64>,
    pub main_height_at_switch: u64,
    pub main_height_final: u64,
    /// Every canonical root block was mined by its scheduled miner.
    pub main_slots_respected: bool,
    /// Root blocks mined by switched robots after the switch.
    pub switched_main_blocks: u64,
    pub target_reached: bool,
    pub conserved: bool,
}

impl BehaviorOutcome {
    pub fn leader_share(&self) -> f64 {
        let total: u64 = self.side_miners.values().sum();
        if total == 0 {
            return 0.0;
        }
        self.side_miners.get(&self.leader).copied().unwrap_or(0) as f64 / total as f64
    }

    pub fn consistent(&self) -> bool {
        self.target_reached
            && self.side_miners.keys().all(|&m| m == self.leader)
            && self.main_slots_respected
            && self.switched_main_blocks == 0
            && self.conserved
    }
}

pub fn run_behavior_switch(
    swarm: &mut Swarm,
    cfg: &BehaviorScenario,
    limit: u64,
) -> Result<BehaviorOutcome, SwarmError> {
    let scenario = |m: &str| SwarmError::Scenario(m.to_string());
    swarm.check_index(cfg.leader)?;
    for &i in &cfg.switch {
        swarm.check_index(i)?;
    }
    if !cfg.switch.contains(&cfg.leader) {
        return Err(scenario("the leader must be one of the switching robots"));
    }
    let root = swarm.root_id();
    let side = ChainId(cfg.side_chain_id);
    if side == root {
        return Err(scenario("side_chain_id must differ from the root chain id"));
    }
    if cfg.peg_amount == 0 {
        return Err(scenario("peg_amount must be >= 1"));
    }

    let deadline = swarm.world().tick() + limit;
    let main = swarm.view(0).params().clone();
    let leader_addr = swarm.robots[cfg.leader].keys.address();
    let outputs: Vec<Output> = cfg
        .switch
        .iter()
        .map(|&i| Output::new(swarm.robots[i].keys.address(), cfg.peg_amount))
        .collect();
    let world = swarm.world_mut();
    let peg_out = world
        .send(cfg.leader, root, TxKind::PegOut, outputs, side.encode())
        .map_err(|r| scenario(&format!("peg-out rejected: {r}")))?;
    world.log_step("peg_out", json!({ "leader": cfg.leader, "txid": peg_out.txid(), "chain": side }));
    let params = ChainParams {
        chain_id: side,
        block_interval: cfg.side_interval.unwrap_or(main.block_interval),
        max_tx_per_block: main.max_tx_per_block,
        mining_policy: MiningPolicy::SingleMiner { miner: leader_addr },
        confirmation_depth: main.confirmation_depth,
        genesis_allocation: Vec::new(),
        parent: None,
    };
    let peg_txid = peg_out.txid();
    world.plan_sidechain(root, params, peg_out);

    let members = cfg.switch.clone();
    let remaining = deadline.saturating_sub(world.tick());
    let opened = world.run_until(remaining, |w| members.iter().all(|&i| w.chain(i, side).is_some()));

    let mut outcome = BehaviorOutcome {
        leader: cfg.leader,
        switched: cfg.switch.clone(),
        side_chain: side,
        peg_out: peg_txid,
        switch_tick: None,
        side_height: 0,
        side_miners: BTreeMap::new(),
        main_height_at_switch: swarm.view(0).head_height(),
        main_height_final: 0,
        main_slots_respected: true,
        switched_main_blocks: 0,
        target_reached: false,
        conserved: true,
    };

    if opened {
        let tick = swarm.world().tick();
        outcome.switch_tick = Some(tick);
        for &i in &cfg.switch {
            swarm.robots[i].behavior = Behavior::LeaderFollower;
            let world = swarm.world_mut();
            world.set_mining(i, root, false);
            world.set_mining(i, side, true);
        }
        let world = swarm.world_mut();
        world.log_step("switch", json!({ "robots": cfg.switch, "leader": cfg.leader, "chain": side }));
        for &i in cfg.switch.iter().filter(|&&i| i != cfg.leader) {
            if let Err(r) = world.send(i, side, TxKind::Transfer, vec![Output::new(leader_addr, 1)], Vec::new()) {
                world.log_step("side_transfer_rejected", json!({ "robot": i, "reason": r }));
            }
        }
        let target = cfg.side_blocks;
        let remaining = deadline.saturating_sub(world.tick());
        outcome.target_reached =
            world.run_until(remaining, |w| w.chain(0, side).is_some_and(|c| c.head_height() >= target));
    }

    let index_of: BTreeMap<_, _> = swarm.robots.iter().enumerate().map(|(i, r)| (r.keys.address(), i)).collect();
    if let Some(chain) = swarm.world().chain(0, side) {
        outcome.side_height = chain.head_height();
        for b in chain.canonical_blocks().skip(1) {
            let miner = index_of.get(&b.header.miner).copied().unwrap_or(usize::MAX);
            *outcome.side_miners.entry(miner).or_insert(0) += 1;
        }
    }
    let view = swarm.view(0);
    outcome.main_height_final = view.head_height();
    outcome.main_slots_respected = view.canonical_blocks().skip(1).all(|b| {
        view.params()
            .mining_policy
            .scheduled_miner(b.height())
            .map_or(true, |m| m == b.header.miner)
    });
    if let Some(t) = outcome.switch_tick {
        outcome.switched_main_blocks = swarm
            .world()
            .events()
            .iter()
            .filter(|e| {
                matches!(e, Event::BlockMined { tick, node, chain, .. }
                    if *tick > t && *chain == root && cfg.switch.contains(node))
            })
            .count() as u64;
    }
    outcome.conserved = swarm.world().conserved();
    Ok(outcome)
}
