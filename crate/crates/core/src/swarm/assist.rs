//! Multisig-escrowed assistance: a robot in need locks tokens under a 2-of-n
//! key set shared with nearby candidates. The first willing candidate
//! co-signs the caller's pre-signed claim and collects the escrow; if nobody
//! helps, the caller reclaims it after the timeout.

use serde::{Deserialize, Serialize};
use serde_json::json;

use crate::codec::{Decode, DecodeError, Decoder, Encode, Encoder};
use crate::crypto::{self, Address, Digest256, MultisigSpec, PublicKey, Signature};
use crate::ledger::tx::escrow_claim;
use crate::ledger::{EscrowPayload, Output, Rejection, TxKind, ESCROW_TIMEOUT_BLOCKS};
use crate::swarm::{Role, Swarm, SwarmError};

/// When a candidate agrees to help.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ResponderPolicy {
    /// Smallest escrow accepted at normal battery.
    pub price_threshold: u64,
    /// Smallest escrow accepted once the battery is low.
    pub low_battery_price: u64,
    /// Battery level below which `low_battery_price` applies.
    pub low_battery_below: f64,
    /// Below this battery the robot cannot move at all.
    pub motion_threshold: f64,
}

impl Default for ResponderPolicy {
    fn default() -> Self {
        Self {
            price_threshold: 3,
            low_battery_price: 1,
            low_battery_below: 0.5,
            motion_threshold: 0.2,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum Decision {
    Accept,
    DeclineBattery,
    DeclinePrice,
}

/// A low battery lowers the price a robot asks, since it would rather earn
/// tokens toward charging than idle.
pub fn responder_policy(policy: &ResponderPolicy, battery: f64, escrow: u64) -> Decision {
    if battery < policy.motion_threshold {
        return Decision::DeclineBattery;
    }
    let price = if battery < policy.low_battery_below {
        policy.low_battery_price
    } else {
        policy.price_threshold
    };
    if escrow >= price {
        Decision::Accept
    } else {
        Decision::DeclinePrice
    }
}

/// Per-candidate part of the escrow memo.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Offer {
    pub responder: PublicKey,
    /// Caller's signature over the claim paying this responder.
    pub caller_sig: Signature,
    /// Caller's position, sealed to the responder.
    pub location: Vec<u8>,
}

impl Encode for Offer {
    fn encode_to(&self, enc: &mut Encoder) {
        enc.put(&self.responder).put(&self.caller_sig).bytes(&self.location);
    }
}

impl Decode for Offer {
    fn decode_from(dec: &mut Decoder<'_>) -> Result<Self, DecodeError> {
        Ok(Self {
            responder: dec.get()?,
            caller_sig: dec.get()?,
            location: dec.bytes("location")?,
        })
    }
}

fn encode_position(p: (i32, i32)) -> Vec<u8> {
    let mut enc = Encoder::default();
    enc.i32(p.0).i32(p.1);
    enc.into_bytes()
}

fn decode_position(bytes: &[u8]) -> Option<(i32, i32)> {
    let mut dec = Decoder::new(bytes);
    let p = (dec.i32("x").ok()?, dec.i32("y").ok()?);
    dec.finish().ok()?;
    Some(p)
}

fn default_escrow() -> u64 {
    5
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AssistScenario {
    /// Robot asking for help; defaults to the first UTV.
    #[serde(default)]
    pub caller: Option<usize>,
    /// Defaults to the first two UAV/UUV robots.
    #[serde(default)]
    pub candidates: Option<Vec<usize>>,
    #[serde(default = "default_escrow")]
    pub escrow: u64,
    #[serde(default)]
    pub policy: ResponderPolicy,
}

impl Default for AssistScenario {
    fn default() -> Self {
        Self {
            caller: None,
            candidates: None,
            escrow: default_escrow(),
            policy: ResponderPolicy::default(),
        }
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct CandidateReport {
    pub robot: usize,
    pub battery: f64,
    pub decision: Decision,
    pub location_ok: bool,
    pub claim: Option<Digest256>,
    /// Why this robot's claim did not land, if it sent one.
    pub rejected: Option<Rejection>,
}

#[derive(Debug, Clone, Serialize)]
pub struct AssistOutcome {
    pub caller: usize,
    pub escrow_address: Address,
    pub amount: u64,
    pub call_txid: Digest256,
    pub locked_height: Option<u64>,
    pub candidates: Vec<CandidateReport>,
    /// Robot whose claim became canonical.
    pub responder: Option<usize>,
    pub claim_txid: Option<Digest256>,
    /// Ticks from the call's submission to the claim's confirmation on the observer.
    pub ticks_to_claim: Option<u64>,
    pub refunded: bool,
    pub refund_txid: Option<Digest256>,
}

pub fn run_assist(swarm: &mut Swarm, cfg: &AssistScenario, limit: u64) -> Result<AssistOutcome, SwarmError> {
    let scenario = |m: &str| SwarmError::Scenario(m.to_string());
    let caller = match cfg.caller {
        Some(c) => c,
        None => swarm
            .robots()
            .iter()
            .position(|r| r.role == Role::Utv)
            .ok_or_else(|| scenario("no UTV in the roster"))?,
    };
    swarm.check_index(caller)?;
    let candidates: Vec<usize> = match &cfg.candidates {
        Some(c) => c.clone(),
        None => swarm
            .robots()
            .iter()
            .enumerate()
            .filter(|(i, r)| *i != caller && matches!(r.role, Role::Uav | Role::Uuv))
            .map(|(i, _)| i)
            .take(2)
            .collect(),
    };
    if candidates.is_empty() || candidates.contains(&caller) {
        return Err(scenario("assist needs at least one candidate other than the caller"));
    }
    for &c in &candidates {
        swarm.check_index(c)?;
    }
    if cfg.escrow == 0 {
        return Err(scenario("escrow must be >= 1"));
    }

    let root = swarm.root_id();
    let depth = swarm.confirmation_depth();
    let start = swarm.world().tick();
    let deadline = start + limit;
    let caller_robot = swarm.robot(caller)?.clone();
    let mut keys = vec![caller_robot.public()];
    keys.extend(candidates.iter().map(|&c| swarm.robots()[c].public()));
    let spec = MultisigSpec::new(2, keys).map_err(|e| scenario(&e.to_string()))?;
    let escrow_addr = spec.address();

    let claim_for = |to: Address| escrow_claim(root, &spec, 1, vec![Output::new(to, cfg.escrow)]);
    let mut offers = Vec::new();
    for &c in &candidates {
        let r = swarm.robots()[c].clone();
        let body = claim_for(r.keys.address());
        let location = crypto::encrypt_for(&r.public(), &encode_position(caller_robot.position), swarm.world_mut().rng())
            .map_err(|e| scenario(&e.to_string()))?;
        offers.push(Offer {
            responder: r.public(),
            caller_sig: caller_robot.keys.sign(&body.txid().0),
            location,
        });
    }
    let mut memo = Encoder::default();
    memo.list(&offers);
    let payload = EscrowPayload {
        spec: spec.clone(),
        memo: memo.into_bytes(),
    };

    let world = swarm.world_mut();
    let call = world
        .send(caller, root, TxKind::MultisigCall, vec![Output::new(escrow_addr, cfg.escrow)], payload.encode())
        .map_err(|r| scenario(&format!("escrow call rejected: {r}")))?;
    let call_txid = call.txid();
    world.log_step("escrow_call", json!({ "caller": caller, "escrow": escrow_addr, "amount": cfg.escrow, "txid": call_txid }));

    let mut reports: Vec<CandidateReport> = candidates
        .iter()
        .map(|&c| CandidateReport {
            robot: c,
            battery: 0.0,
            decision: Decision::DeclinePrice,
            location_ok: false,
            claim: None,
            rejected: None,
        })
        .collect();
    let mut undecided: Vec<usize> = (0..candidates.len()).collect();
    let mut claims = Vec::new();

    // Candidates react once their own view shows the escrow locked.
    while !undecided.is_empty() && swarm.world().tick() < deadline {
        let mut still = Vec::new();
        for slot in undecided {
            let c = candidates[slot];
            let locked = swarm.view(c).accounts().escrow(&escrow_addr).is_some();
            if !locked {
                still.push(slot);
                continue;
            }
            let robot = swarm.robots()[c].clone();
            let decision = responder_policy(&cfg.policy, robot.battery, cfg.escrow);
            let report = &mut reports[slot];
            report.battery = robot.battery;
            report.decision = decision;
            // Responders read the memo from their own copy of the call.
            let (_, on_chain) = swarm.view(c).canonical_tx(&call_txid).expect("escrow is locked");
            let memo = EscrowPayload::decode(on_chain.payload()).expect("validated payload").memo;
            let offer = read_offers(&memo).and_then(|o| o.into_iter().find(|o| o.responder == robot.public()));
            let Some(offer) = offer else {
                still.push(slot);
                continue;
            };
            report.location_ok = crypto::decrypt(&robot.keys.private, &offer.location)
                .ok()
                .and_then(|b| decode_position(&b))
                == Some(caller_robot.position);
            let world = swarm.world_mut();
            world.log_step("responder_decision", json!({ "robot": c, "decision": decision, "battery": robot.battery }));
            if decision != Decision::Accept {
                continue;
            }
            let body = claim_for(robot.keys.address());
            let own = robot.keys.sign(&body.txid().0);
            let tx = body.with_signatures(vec![offer.caller_sig, own]);
            let id = tx.txid();
            match world.submit(c, tx) {
                Ok(_) => {
                    reports[slot].claim = Some(id);
                    claims.push((slot, id));
                    world.log_step("claim", json!({ "robot": c, "txid": id }));
                }
                Err(r) => reports[slot].rejected = Some(r),
            }
        }
        undecided = still;
        if !undecided.is_empty() {
            let next = swarm.world().tick() + 1;
            swarm.world_mut().step(next);
        }
    }

    let locked_height = swarm.view(0).accounts().escrow(&escrow_addr).map(|e| e.locked_height);
    let mut outcome = AssistOutcome {
        caller,
        escrow_address: escrow_addr,
        amount: cfg.escrow,
        call_txid,
        locked_height,
        candidates: reports,
        responder: None,
        claim_txid: None,
        ticks_to_claim: None,
        refunded: false,
        refund_txid: None,
    };

    if !claims.is_empty() {
        let ids: Vec<Digest256> = claims.iter().map(|c| c.1).collect();
        let world = swarm.world_mut();
        let remaining = deadline.saturating_sub(world.tick());
        world.run_until(remaining, |w| ids.iter().any(|id| w.node(0).root().confirmations(id) >= depth));
        let view = swarm.view(0);
        for (slot, id) in claims {
            if view.confirmations(&id) >= depth {
                outcome.responder = Some(candidates[slot]);
                outcome.claim_txid = Some(id);
                outcome.ticks_to_claim = Some(swarm.world().tick() - start);
            } else if let Some(tx) = view.mempool().find(|t| t.txid() == id) {
                outcome.candidates[slot].rejected = view.validate_transaction(tx).err();
            } else {
                // Evicted once the winning claim consumed nonce 1.
                outcome.candidates[slot].rejected = Some(Rejection::BadNonce);
            }
        }
        if let Some(r) = outcome.responder {
            swarm.world_mut().log_step("claimed", json!({ "robot": r, "txid": outcome.claim_txid }));
        }
        return Ok(outcome);
    }

    // Nobody helped: reclaim after the timeout.
    let world = swarm.world_mut();
    let remaining = deadline.saturating_sub(world.tick());
    let matured = world.run_until(remaining, |w| {
        let v = w.node(caller).root();
        v.accounts()
            .escrow(&escrow_addr)
            .is_some_and(|e| v.head_height() + 1 >= e.locked_height + ESCROW_TIMEOUT_BLOCKS)
    });
    if !matured {
        return Ok(outcome);
    }
    let refund = claim_for(caller_robot.keys.address()).sign(&caller_robot.keys);
    let refund_id = refund.txid();
    if world.submit(caller, refund).is_ok() {
        world.log_step("refund", json!({ "caller": caller, "txid": refund_id }));
        let remaining = deadline.saturating_sub(world.tick());
        world.run_until(remaining, |w| w.node(0).root().confirmations(&refund_id) >= depth);
        outcome.refunded = swarm.view(0).confirmations(&refund_id) >= depth;
        outcome.refund_txid = Some(refund_id);
    }
    Ok(outcome)
}

fn read_offers(memo: &[u8]) -> Option<Vec<Offer>> {
    let mut dec = Decoder::new(memo);
    let offers = dec.list("offers").ok()?;
    dec.finish().ok()?;
    Some(offers)
}
