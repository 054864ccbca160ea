//! Token-weighted voting: each option is a fresh address and a vote is one
//! token sent to it. The tally is the balance each option address holds once
//! the voting window closes.

use rand::Rng;
use serde::{Deserialize, Serialize};
use serde_json::json;
use thiserror::Error;

use crate::codec::Encode;
use crate::crypto::{hash_parts, Address, Digest256, ADDRESS_LEN};
use crate::ledger::{Accounts, ChainState, Output, ProposalPayload, TxKind};
use crate::swarm::{Swarm, SwarmError};

fn default_options() -> usize {
    2
}
fn default_window() -> u32 {
    5
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct VotingScenario {
    /// Robot that posts the proposal.
    #[serde(default)]
    pub proposer: usize,
    #[serde(default = "default_options")]
    pub options: usize,
    /// Index of the option matching the ground truth.
    #[serde(default)]
    pub truth: usize,
    /// Probability that a robot misreads the truth.
    #[serde(default)]
    pub error_rate: f64,
    /// Voting window in blocks after the proposal's block.
    #[serde(default = "default_window")]
    pub window: u32,
    /// Voting robots; defaults to the whole roster.
    #[serde(default)]
    pub voters: Option<Vec<usize>>,
    /// Scripted observations (option index per voter), bypassing the noise draw.
    #[serde(default)]
    pub observations: Option<Vec<usize>>,
}

impl Default for VotingScenario {
    fn default() -> Self {
        Self {
            proposer: 0,
            options: default_options(),
            truth: 0,
            error_rate: 0.0,
            window: default_window(),
            voters: None,
            observations: None,
        }
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct VoteOutcome {
    pub proposal: Digest256,
    pub inclusion_height: u64,
    pub window: u32,
    pub options: Vec<Address>,
    pub counts: Vec<u64>,
    /// Option index with the most votes; `None` when nobody voted.
    pub winner: Option<usize>,
    pub winner_address: Option<Address>,
    /// Whether the winner was chosen by the address tie-break.
    pub tie: bool,
    pub truth: usize,
    pub correct: bool,
    pub votes_cast: usize,
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum TallyError {
    #[error("proposal {0} is not on the canonical chain")]
    UnknownProposal(Digest256),
}

/// Per-option tally as of `inclusion_height + window` (or the head, if lower).
pub fn tally_votes(state: &ChainState, proposal: &Digest256) -> Result<Vec<u64>, TallyError> {
    let p = state
        .accounts()
        .proposal(proposal)
        .ok_or(TallyError::UnknownProposal(*proposal))?;
    let last = (p.height + p.window as u64).min(state.head_height());
    let params = state.params();
    let imports: Vec<Output> = state.imports().values().flatten().copied().collect();
    let mut acc = Accounts::genesis(params, &imports);
    for block in state.canonical_blocks().skip(1).take(last as usize) {
        for tx in &block.txs {
            acc.apply(params, tx, block.height()).expect("canonical block replays");
        }
    }
    Ok(p.options.iter().map(|o| acc.balance(o)).collect())
}

/// Largest count wins; equal counts go to the lexicographically smallest address.
/// Returns `(index, tie)` or `None` if every count is zero.
pub fn decide(options: &[Address], counts: &[u64]) -> Option<(usize, bool)> {
    let max = *counts.iter().max()?;
    if max == 0 {
        return None;
    }
    let tied: Vec<usize> = (0..counts.len()).filter(|&i| counts[i] == max).collect();
    let best = *tied.iter().min_by_key(|&&i| options[i])?;
    Some((best, tied.len() > 1))
}

fn option_address(proposer: &Address, nonce: u64, i: usize) -> Address {
    let d = hash_parts(&[b"swarmledger/option", &proposer.0, &nonce.to_be_bytes(), &(i as u64).to_be_bytes()]);
    let mut a = [0u8; ADDRESS_LEN];
    a.copy_from_slice(&d.0[..ADDRESS_LEN]);
    Address(a)
}

pub fn run_voting(swarm: &mut Swarm, cfg: &VotingScenario, limit: u64) -> Result<VoteOutcome, SwarmError> {
    let bad = |m: &str| Err(SwarmError::Scenario(m.to_string()));
    swarm.check_index(cfg.proposer)?;
    if cfg.options < 2 {
        return bad("voting needs at least two options");
    }
    if cfg.truth >= cfg.options {
        return bad("truth index out of range");
    }
    if !(0.0..=1.0).contains(&cfg.error_rate) {
        return bad("error_rate must lie in [0, 1]");
    }
    if cfg.window == 0 {
        return bad("window must be >= 1");
    }
    let voters: Vec<usize> = cfg.voters.clone().unwrap_or_else(|| (0..swarm.robots().len()).collect());
    for &v in &voters {
        swarm.check_index(v)?;
    }
    if let Some(obs) = &cfg.observations {
        if obs.len() != voters.len() || obs.iter().any(|&o| o >= cfg.options) {
            return bad("observations must give one valid option per voter");
        }
    }

    let root = swarm.root_id();
    let deadline = swarm.world().tick() + limit;
    let proposer_addr = swarm.robot(cfg.proposer)?.keys.address();
    let nonce = swarm.world().next_nonce(cfg.proposer, root, proposer_addr);
    let options: Vec<Address> = (0..cfg.options).map(|i| option_address(&proposer_addr, nonce, i)).collect();
    let payload = ProposalPayload {
        options: options.clone(),
        window: cfg.window,
    };
    let world = swarm.world_mut();
    let proposal = world
        .send(cfg.proposer, root, TxKind::VoteProposal, Vec::new(), payload.encode())
        .map_err(|r| SwarmError::Scenario(format!("proposal rejected: {r}")))?
        .txid();
    world.log_step("proposal", json!({ "proposer": cfg.proposer, "txid": proposal, "options": options }));

    // Each robot votes as soon as its own view includes the proposal.
    let mut pending: Vec<(usize, usize)> = voters.iter().copied().enumerate().collect();
    let mut votes_cast = 0;
    while !pending.is_empty() && world.tick() < deadline {
        let mut still = Vec::new();
        for (slot, robot) in pending {
            if world.node(robot).root().accounts().proposal(&proposal).is_none() {
                still.push((slot, robot));
                continue;
            }
            let choice = match &cfg.observations {
                Some(obs) => obs[slot],
                None => observe(world.rng(), cfg.truth, cfg.options, cfg.error_rate),
            };
            let out = vec![Output::new(options[choice], 1)];
            match world.send(robot, root, TxKind::Vote, out, proposal.0.to_vec()) {
                Ok(tx) => {
                    votes_cast += 1;
                    world.log_step("vote", json!({ "robot": robot, "option": choice, "txid": tx.txid() }));
                }
                Err(r) => world.log_step("vote_rejected", json!({ "robot": robot, "reason": r })),
            }
        }
        pending = still;
        if !pending.is_empty() {
            world.step(world.tick() + 1);
        }
    }

    // Wait for the window to close on the observer's view.
    let closed = |w: &crate::netsim::World| {
        w.node(0)
            .root()
            .accounts()
            .proposal(&proposal)
            .is_some_and(|p| w.node(0).root().head_height() >= p.height + p.window as u64)
    };
    let remaining = deadline.saturating_sub(world.tick());
    world.run_until(remaining, closed);

    let view = swarm.view(0);
    let inclusion_height = view.accounts().proposal(&proposal).map_or(0, |p| p.height);
    let counts = tally_votes(view, &proposal).unwrap_or_else(|_| vec![0; options.len()]);
    let decided = decide(&options, &counts);
    let outcome = VoteOutcome {
        proposal,
        inclusion_height,
        window: cfg.window,
        options: options.clone(),
        counts: counts.clone(),
        winner: decided.map(|d| d.0),
        winner_address: decided.map(|d| options[d.0]),
        tie: decided.is_some_and(|d| d.1),
        truth: cfg.truth,
        correct: decided.is_some_and(|d| d.0 == cfg.truth),
        votes_cast,
    };
    swarm.world_mut().log_step(
        "tally",
        json!({ "counts": counts, "winner": outcome.winner, "tie": outcome.tie }),
    );
    Ok(outcome)
}

/// The truth with probability `1 - p`, otherwise a uniformly chosen wrong option.
fn observe(rng: &mut impl Rng, truth: usize, options: usize, p: f64) -> usize {
    if rng.gen::<f64>() >= p {
        return truth;
    }
    let other = rng.gen_range(0..options - 1);
    if other >= truth {
        other + 1
    } else {
        other
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn addr(b: u8) -> Address {
        Address([b; ADDRESS_LEN])
    }

    #[test]
    fn decide_majority_and_tie_break() {
        let opts = [addr(9), addr(3), addr(5)];
        assert_eq!(decide(&opts, &[4, 2, 1]), Some((0, false)));
        assert_eq!(decide(&opts, &[2, 2, 2]), Some((1, true)));
        assert_eq!(decide(&opts, &[3, 1, 3]), Some((2, true)));
        assert_eq!(decide(&opts, &[0, 0, 0]), None);
    }

    #[test]
    fn observe_respects_extremes() {
        use rand::SeedableRng;
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(1);
        for _ in 0..100 {
            assert_eq!(observe(&mut rng, 1, 3, 0.0), 1);
            assert_ne!(observe(&mut rng, 1, 3, 1.0), 1);
        }
    }

    #[test]
    fn option_addresses_are_distinct() {
        let p = addr(1);
        assert_ne!(option_address(&p, 1, 0), option_address(&p, 1, 1));
        assert_ne!(option_address(&p, 1, 0), option_address(&p, 2, 0));
    }
}
