//! Sensing as a service: sensors advertise on the ledger, a requester pays
//! one, and the sensor answers with an encrypted pointer to its data blob.

use std::collections::BTreeMap;
use std::fs;
use std::io;
use std::path::PathBuf;

use rand::RngCore;
use serde::{Deserialize, Serialize};
use serde_json::json;

use crate::codec::{Decoder, Encoder};
use crate::crypto::{self, hash, Address, Digest256};
use crate::ledger::{ChainState, Output, TxKind};
use crate::swarm::{Role, Swarm, SwarmError};

const REGISTRATION: &[u8] = b"s2aas/reg";
const DELIVERY: &[u8] = b"s2aas/dat";

/// Content-addressed blob storage, on disk or in memory.
#[derive(Debug, Default)]
pub struct BlobStore {
    dir: Option<PathBuf>,
    mem: BTreeMap<String, Vec<u8>>,
}

impl BlobStore {
    pub fn in_memory() -> Self {
        Self::default()
    }

    /// Blobs go to `<dir>/<hex digest>`.
    pub fn on_disk(dir: impl Into<PathBuf>) -> Self {
        Self {
            dir: Some(dir.into()),
            mem: BTreeMap::new(),
        }
    }

    /// Stores `data` and returns its link, `blobs/<hex digest>`.
    pub fn put(&mut self, data: &[u8]) -> io::Result<String> {
        let name = hash(data).to_hex();
        match &self.dir {
            Some(dir) => {
                fs::create_dir_all(dir)?;
                fs::write(dir.join(&name), data)?;
            }
            None => {
                self.mem.insert(name.clone(), data.to_vec());
            }
        }
        Ok(format!("blobs/{name}"))
    }

    pub fn get(&self, link: &str) -> io::Result<Vec<u8>> {
        let name = link
            .strip_prefix("blobs/")
            .filter(|n| n.len() == 64 && n.bytes().all(|b| b.is_ascii_hexdigit()))
            .ok_or_else(|| io::Error::new(io::ErrorKind::InvalidInput, format!("bad blob link {link}")))?;
        match &self.dir {
            Some(dir) => fs::read(dir.join(name)),
            None => self
                .mem
                .get(name)
                .cloned()
                .ok_or_else(|| io::Error::new(io::ErrorKind::NotFound, link.to_string())),
        }
    }
}

fn default_blob_size() -> usize {
    256
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct S2aaSScenario {
    /// Defaults to the first non-sensor robot.
    #[serde(default)]
    pub requester: Option<usize>,
    /// Amount paid; defaults to the chosen sensor's advertised price.
    #[serde(default)]
    pub payment: Option<u64>,
    #[serde(default = "default_blob_size")]
    pub blob_size: usize,
}

impl Default for S2aaSScenario {
    fn default() -> Self {
        Self {
            requester: None,
            payment: None,
            blob_size: default_blob_size(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct Listing {
    pub address: Address,
    pub position: (i32, i32),
    pub price: u64,
}

#[derive(Debug, Clone, Serialize)]
pub struct StepRecord {
    pub step: u8,
    pub name: &'static str,
    pub tick: u64,
}

#[derive(Debug, Clone, Serialize)]
pub struct ExchangeOutcome {
    pub requester: usize,
    pub sensor: Option<usize>,
    pub registry: Vec<Listing>,
    pub price: u64,
    pub paid: u64,
    pub payment_txid: Option<Digest256>,
    pub data_txid: Option<Digest256>,
    pub link: Option<String>,
    pub blob_digest: Option<Digest256>,
    pub steps: Vec<StepRecord>,
    pub success: bool,
    pub failure: Option<String>,
    /// No other robot's key opens the delivery.
    pub sealed_to_requester: bool,
}

fn registration(addr: &Address, position: (i32, i32), price: u64) -> Vec<u8> {
    let mut enc = Encoder::default();
    enc.raw(REGISTRATION).put(addr).i32(position.0).i32(position.1).u64(price);
    enc.into_bytes()
}

fn parse_registration(payload: &[u8]) -> Option<Listing> {
    let mut dec = Decoder::new(payload.strip_prefix(REGISTRATION)?);
    let listing = Listing {
        address: dec.get().ok()?,
        position: (dec.i32("x").ok()?, dec.i32("y").ok()?),
        price: dec.u64("price").ok()?,
    };
    dec.finish().ok()?;
    Some(listing)
}

/// Sensor listings on `view`'s canonical chain, latest registration per sender.
pub fn registry(view: &ChainState) -> Vec<Listing> {
    let mut out: BTreeMap<Address, Listing> = BTreeMap::new();
    for block in view.canonical_blocks() {
        for tx in block.txs.iter().filter(|t| t.kind() == TxKind::Data) {
            if let Some(l) = parse_registration(tx.payload()).filter(|l| l.address == tx.sender()) {
                out.insert(l.address, l);
            }
        }
    }
    out.into_values().collect()
}

pub fn run_s2aas(
    swarm: &mut Swarm,
    cfg: &S2aaSScenario,
    blobs: &mut BlobStore,
    limit: u64,
) -> Result<ExchangeOutcome, SwarmError> {
    let scenario = |m: &str| SwarmError::Scenario(m.to_string());
    let sensors: Vec<usize> = (0..swarm.robots().len())
        .filter(|&i| swarm.robots()[i].role == Role::Sensor)
        .collect();
    if sensors.is_empty() {
        return Err(scenario("no sensor robots in the roster"));
    }
    let requester = match cfg.requester {
        Some(r) => r,
        None => (0..swarm.robots().len())
            .find(|i| !sensors.contains(i))
            .ok_or_else(|| scenario("no robot left to act as requester"))?,
    };
    swarm.check_index(requester)?;
    if sensors.contains(&requester) {
        return Err(scenario("the requester must not be a sensor"));
    }

    let root = swarm.root_id();
    let depth = swarm.confirmation_depth();
    let deadline = swarm.world().tick() + limit;
    let robots = swarm.robots().to_vec();
    let index_of: BTreeMap<Address, usize> = robots.iter().enumerate().map(|(i, r)| (r.keys.address(), i)).collect();
    let mut steps = Vec::new();
    let mut outcome = ExchangeOutcome {
        requester,
        sensor: None,
        registry: Vec::new(),
        price: 0,
        paid: 0,
        payment_txid: None,
        data_txid: None,
        link: None,
        blob_digest: None,
        steps: Vec::new(),
        success: false,
        failure: None,
        sealed_to_requester: false,
    };
    let world = swarm.world_mut();
    let mut record = |world: &mut crate::netsim::World, step: u8, name: &'static str, detail: serde_json::Value| {
        steps.push(StepRecord {
            step,
            name,
            tick: world.tick(),
        });
        world.log_step(name, detail);
    };

    // 1. Sensors advertise.
    let mut regs = Vec::new();
    for &s in &sensors {
        let r = &robots[s];
        let payload = registration(&r.keys.address(), r.position, r.data_price);
        match world.send(s, root, TxKind::Data, Vec::new(), payload) {
            Ok(tx) => regs.push(tx.txid()),
            Err(e) => world.log_step("register_rejected", json!({ "robot": s, "reason": e })),
        }
    }
    record(world, 1, "register", json!({ "sensors": sensors }));

    // 2-3. The requester queries its own view once every listing is canonical.
    let remaining = deadline.saturating_sub(world.tick());
    if !world.run_until(remaining, |w| regs.iter().all(|id| w.node(requester).root().tx_height(id).is_some())) {
        outcome.failure = Some("registrations-unconfirmed".into());
        outcome.steps = steps;
        return Ok(outcome);
    }
    record(world, 2, "query", json!({ "requester": requester }));
    let listings = registry(world.node(requester).root());
    record(world, 3, "list", json!({ "listings": listings.len() }));
    outcome.registry = listings.clone();
    let Some(choice) = listings.iter().min_by_key(|l| (l.price, l.address)) else {
        outcome.failure = Some("empty-registry".into());
        outcome.steps = steps;
        return Ok(outcome);
    };
    let sensor = index_of[&choice.address];
    outcome.sensor = Some(sensor);
    outcome.price = choice.price;

    // 4. Pay.
    let amount = cfg.payment.unwrap_or(choice.price).max(1);
    let pay = world
        .send(requester, root, TxKind::Transfer, vec![Output::new(choice.address, amount)], Vec::new())
        .map_err(|r| scenario(&format!("payment rejected: {r}")))?;
    let pay_id = pay.txid();
    outcome.paid = amount;
    outcome.payment_txid = Some(pay_id);
    record(world, 4, "pay", json!({ "sensor": sensor, "amount": amount, "txid": pay_id }));

    // 5. The sensor waits for k confirmations on its own view.
    let remaining = deadline.saturating_sub(world.tick());
    if !world.run_until(remaining, |w| w.node(sensor).root().confirmations(&pay_id) >= depth) {
        outcome.failure = Some("payment-unconfirmed".into());
        outcome.steps = steps;
        return Ok(outcome);
    }
    let received: u64 = world
        .node(sensor)
        .root()
        .canonical_tx(&pay_id)
        .map(|(_, tx)| tx.outputs().iter().filter(|o| o.to == choice.address).map(|o| o.amount).sum())
        .unwrap_or(0);
    record(world, 5, "confirm", json!({ "sensor": sensor, "received": received }));
    if received < choice.price {
        world.log_step("underpayment", json!({ "sensor": sensor, "received": received, "price": choice.price }));
        outcome.failure = Some("underpayment".into());
        outcome.steps = steps;
        return Ok(outcome);
    }

    // 6. Deliver an encrypted pointer to the blob.
    let mut data = vec![0u8; cfg.blob_size];
    world.rng().fill_bytes(&mut data);
    let digest = hash(&data);
    let link = blobs.put(&data).map_err(|e| scenario(&format!("blob store: {e}")))?;
    let mut plain = Encoder::default();
    plain.bytes(link.as_bytes()).put(&digest);
    let requester_key = robots[requester].public();
    let sealed = crypto::encrypt_for(&requester_key, &plain.into_bytes(), world.rng())
        .map_err(|e| scenario(&e.to_string()))?;
    let payload = [DELIVERY, sealed.as_slice()].concat();
    let data_tx = world
        .send(sensor, root, TxKind::Data, Vec::new(), payload)
        .map_err(|r| scenario(&format!("delivery rejected: {r}")))?;
    let data_id = data_tx.txid();
    outcome.data_txid = Some(data_id);
    record(world, 6, "deliver", json!({ "sensor": sensor, "txid": data_id }));

    // 7. Fetch and check.
    let remaining = deadline.saturating_sub(world.tick());
    if !world.run_until(remaining, |w| w.node(requester).root().tx_height(&data_id).is_some()) {
        outcome.failure = Some("delivery-unconfirmed".into());
        outcome.steps = steps;
        return Ok(outcome);
    }
    let view = world.node(requester).root();
    let (_, tx) = view.canonical_tx(&data_id).expect("canonical");
    let sealed = tx.payload().strip_prefix(DELIVERY).unwrap_or_default().to_vec();
    let opened = crypto::decrypt(&robots[requester].keys.private, &sealed).ok().and_then(|p| {
        let mut dec = Decoder::new(&p);
        let link = String::from_utf8(dec.bytes("link").ok()?).ok()?;
        let digest: Digest256 = dec.get().ok()?;
        dec.finish().ok()?;
        Some((link, digest))
    });
    outcome.sealed_to_requester = robots
        .iter()
        .enumerate()
        .filter(|(i, _)| *i != requester)
        .all(|(_, r)| crypto::decrypt(&r.keys.private, &sealed).is_err());
    let fetched = opened
        .as_ref()
        .and_then(|(link, d)| blobs.get(link).ok().map(|b| (hash(&b) == *d, link.clone(), *d)));
    match fetched {
        Some((true, link, d)) => {
            outcome.success = true;
            outcome.link = Some(link);
            outcome.blob_digest = Some(d);
        }
        _ => outcome.failure = Some("blob-mismatch".into()),
    }
    record(world, 7, "fetch", json!({ "requester": requester, "ok": outcome.success }));
    outcome.steps = steps;
    Ok(outcome)
}
