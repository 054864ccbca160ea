//! Timestamped discovery claims: a robot anchors the digest of a document on
//! the ledger and anyone holding the document can later check the claim.

use serde::{Deserialize, Serialize};
use serde_json::json;
use thiserror::Error;

use crate::crypto::{hash, Address, Digest256};
use crate::ledger::{ChainState, TxKind};
use crate::netsim::World;
use crate::swarm::{Swarm, SwarmError};

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct DiscoveryRecord {
    pub robot: usize,
    pub address: Address,
    pub doc_hash: Digest256,
    pub txid: Digest256,
    pub block: Digest256,
    pub height: u64,
    /// Position of the attestation inside its block.
    pub index: usize,
    pub timestamp: u64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Error, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum DiscoveryError {
    #[error("document is empty")]
    EmptyDocument,
    #[error("document digest does not match the record")]
    DigestMismatch,
    #[error("attestation is not on the canonical chain")]
    NotCanonical,
    #[error("attestation moved to another block")]
    BlockMismatch,
    #[error("attestation was sent by another address")]
    WrongSender,
}

fn record_for(view: &ChainState, robot: usize, txid: &Digest256) -> Option<DiscoveryRecord> {
    let (block, tx) = view.canonical_tx(txid)?;
    Some(DiscoveryRecord {
        robot,
        address: tx.sender(),
        doc_hash: Digest256(tx.payload().try_into().ok()?),
        txid: *txid,
        block: block.digest(),
        height: block.height(),
        index: block.txs.iter().position(|t| t.txid() == *txid)?,
        timestamp: block.header.timestamp,
    })
}

fn attest(world: &mut World, robot: usize, document: &[u8]) -> Result<Digest256, SwarmError> {
    if document.is_empty() {
        return Err(SwarmError::Scenario(DiscoveryError::EmptyDocument.to_string()));
    }
    let digest = hash(document);
    let root = world.root_id();
    let tx = world
        .send(robot, root, TxKind::Attestation, Vec::new(), digest.0.to_vec())
        .map_err(|r| SwarmError::Scenario(format!("attestation rejected: {r}")))?;
    world.log_step("attest", json!({ "robot": robot, "doc_hash": digest, "txid": tx.txid() }));
    Ok(tx.txid())
}

/// Anchors `document` for `robot` and waits until the attestation has the
/// root chain's confirmation depth on the robot's own view.
pub fn register_discovery(
    swarm: &mut Swarm,
    robot: usize,
    document: &[u8],
    limit: u64,
) -> Result<DiscoveryRecord, SwarmError> {
    swarm.check_index(robot)?;
    let depth = swarm.confirmation_depth();
    let world = swarm.world_mut();
    let txid = attest(world, robot, document)?;
    if !world.run_until(limit, |w| w.node(robot).root().confirmations(&txid) >= depth) {
        return Err(SwarmError::Scenario("attestation not confirmed in time".into()));
    }
    Ok(record_for(swarm.view(robot), robot, &txid).expect("confirmed"))
}

/// Checks `record` against `document` and the canonical chain of `view`.
pub fn verify_discovery(view: &ChainState, document: &[u8], record: &DiscoveryRecord) -> Result<(), DiscoveryError> {
    if hash(document) != record.doc_hash {
        return Err(DiscoveryError::DigestMismatch);
    }
    let (block, tx) = view.canonical_tx(&record.txid).ok_or(DiscoveryError::NotCanonical)?;
    if tx.kind() != TxKind::Attestation || tx.payload() != record.doc_hash.0 {
        return Err(DiscoveryError::DigestMismatch);
    }
    if block.digest() != record.block || block.height() != record.height {
        return Err(DiscoveryError::BlockMismatch);
    }
    if tx.sender() != record.address {
        return Err(DiscoveryError::WrongSender);
    }
    Ok(())
}

fn default_document() -> String {
    "discovery".into()
}

fn default_claimants() -> Vec<usize> {
    vec![0]
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AttestationScenario {
    /// Robots claiming the same document, in submission order.
    #[serde(default = "default_claimants")]
    pub robots: Vec<usize>,
    #[serde(default = "default_document")]
    pub document: String,
    /// Ticks between successive claims.
    #[serde(default)]
    pub stagger: u64,
}

impl Default for AttestationScenario {
    fn default() -> Self {
        Self {
            robots: default_claimants(),
            document: default_document(),
            stagger: 0,
        }
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct AttestationOutcome {
    pub doc_hash: Digest256,
    pub records: Vec<DiscoveryRecord>,
    /// Claimant with the earliest canonical attestation.
    pub priority: Option<usize>,
    pub verified: bool,
    pub mutated_rejected: bool,
}

pub fn run_attestation(
    swarm: &mut Swarm,
    cfg: &AttestationScenario,
    limit: u64,
) -> Result<AttestationOutcome, SwarmError> {
    if cfg.robots.is_empty() {
        return Err(SwarmError::Scenario("attestation needs at least one robot".into()));
    }
    for &r in &cfg.robots {
        swarm.check_index(r)?;
    }
    let doc = cfg.document.as_bytes();
    let depth = swarm.confirmation_depth();
    let deadline = swarm.world().tick() + limit;
    let world = swarm.world_mut();
    let mut sent = Vec::new();
    for (i, &r) in cfg.robots.iter().enumerate() {
        if i > 0 && cfg.stagger > 0 {
            world.step(world.tick() + cfg.stagger);
        }
        sent.push((r, attest(world, r, doc)?));
    }
    let remaining = deadline.saturating_sub(world.tick());
    world.run_until(remaining, |w| sent.iter().all(|(_, id)| w.node(0).root().confirmations(id) >= depth));

    let view = swarm.view(0);
    let records: Vec<DiscoveryRecord> = sent.iter().filter_map(|(r, id)| record_for(view, *r, id)).collect();
    let priority = records.iter().min_by_key(|r| (r.timestamp, r.height, r.index)).map(|r| r.robot);
    let verified = records.len() == sent.len() && records.iter().all(|r| verify_discovery(view, doc, r).is_ok());
    let mut mutated = doc.to_vec();
    mutated.push(b'!');
    let mutated_rejected = records.iter().all(|r| verify_discovery(view, &mutated, r).is_err());
    let outcome = AttestationOutcome {
        doc_hash: hash(doc),
        records,
        priority,
        verified,
        mutated_rejected,
    };
    swarm.world_mut().log_step("priority", json!({ "robot": outcome.priority }));
    Ok(outcome)
}
