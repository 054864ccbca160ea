use std::fmt;

use serde::{Deserialize, Serialize};

use crate::codec::{Decode, DecodeError, Decoder, Encode, Encoder};
use crate::crypto::{self, Address, Digest256, KeyPair, MultisigSpec, Signature};

/// Largest payload a transaction may carry.
pub const MAX_PAYLOAD: usize = 1024;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(transparent)]
pub struct ChainId(pub u32);

impl fmt::Display for ChainId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.0)
    }
}

impl Encode for ChainId {
    fn encode_to(&self, enc: &mut Encoder) {
        enc.u32(self.0);
    }
}

impl Decode for ChainId {
    fn decode_from(dec: &mut Decoder<'_>) -> Result<Self, DecodeError> {
        dec.u32("chain id").map(ChainId)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TxKind {
    Transfer,
    VoteProposal,
    Vote,
    Data,
    MultisigCall,
    MultisigClaim,
    PegOut,
    PegIn,
    Attestation,
}

impl TxKind {
    const ALL: [TxKind; 9] = [
        TxKind::Transfer,
        TxKind::VoteProposal,
        TxKind::Vote,
        TxKind::Data,
        TxKind::MultisigCall,
        TxKind::MultisigClaim,
        TxKind::PegOut,
        TxKind::PegIn,
        TxKind::Attestation,
    ];

    fn tag(self) -> u8 {
        TxKind::ALL.iter().position(|k| *k == self).expect("listed") as u8
    }

    /// Peg transfers burn on their own chain and are credited on another.
    pub fn is_peg(self) -> bool {
        matches!(self, TxKind::PegOut | TxKind::PegIn)
    }
}

impl Encode for TxKind {
    fn encode_to(&self, enc: &mut Encoder) {
        enc.u8(self.tag());
    }
}

impl Decode for TxKind {
    fn decode_from(dec: &mut Decoder<'_>) -> Result<Self, DecodeError> {
        let tag = dec.u8("tx kind")?;
        TxKind::ALL
            .get(tag as usize)
            .copied()
            .ok_or(DecodeError::InvalidTag { what: "tx kind", tag })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Output {
    pub to: Address,
    pub amount: u64,
}

impl Output {
    pub fn new(to: Address, amount: u64) -> Self {
        Self { to, amount }
    }
}

impl Encode for Output {
    fn encode_to(&self, enc: &mut Encoder) {
        enc.put(&self.to).u64(self.amount);
    }
}

impl Decode for Output {
    fn decode_from(dec: &mut Decoder<'_>) -> Result<Self, DecodeError> {
        Ok(Self {
            to: dec.get()?,
            amount: dec.u64("amount")?,
        })
    }
}

/// Transaction fields prior to signing.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct UnsignedTx {
    pub chain_id: ChainId,
    pub kind: TxKind,
    pub sender: Address,
    pub nonce: u64,
    pub outputs: Vec<Output>,
    pub payload: Vec<u8>,
}

impl Encode for UnsignedTx {
    fn encode_to(&self, enc: &mut Encoder) {
        enc.put(&self.chain_id)
            .put(&self.kind)
            .put(&self.sender)
            .u64(self.nonce)
            .list(&self.outputs)
            .bytes(&self.payload);
    }
}

impl Decode for UnsignedTx {
    fn decode_from(dec: &mut Decoder<'_>) -> Result<Self, DecodeError> {
        Ok(Self {
            chain_id: dec.get()?,
            kind: dec.get()?,
            sender: dec.get()?,
            nonce: dec.u64("nonce")?,
            outputs: dec.list("outputs")?,
            payload: dec.bytes("payload")?,
        })
    }
}

impl UnsignedTx {
    pub fn txid(&self) -> Digest256 {
        crypto::hash(&self.encode())
    }

    pub fn sign(self, key: &KeyPair) -> Transaction {
        let txid = self.txid();
        let sig = key.sign(&txid.0);
        Transaction {
            body: self,
            signatures: vec![sig],
            txid,
        }
    }

    /// Attaches an arbitrary signature set (used for multisig claims).
    pub fn with_signatures(self, signatures: Vec<Signature>) -> Transaction {
        let txid = self.txid();
        Transaction {
            body: self,
            signatures,
            txid,
        }
    }
}

/// A signed ledger entry. The txid commits to every field except the signatures.
#[derive(Clone, PartialEq, Eq)]
pub struct Transaction {
    body: UnsignedTx,
    signatures: Vec<Signature>,
    txid: Digest256,
}

impl fmt::Debug for Transaction {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("Transaction")
            .field("txid", &self.txid)
            .field("kind", &self.body.kind)
            .field("sender", &self.body.sender)
            .field("nonce", &self.body.nonce)
            .field("outputs", &self.body.outputs.len())
            .field("payload", &self.body.payload.len())
            .finish()
    }
}

impl Transaction {
    pub fn txid(&self) -> Digest256 {
        self.txid
    }

    pub fn body(&self) -> &UnsignedTx {
        &self.body
    }

    pub fn chain_id(&self) -> ChainId {
        self.body.chain_id
    }

    pub fn kind(&self) -> TxKind {
        self.body.kind
    }

    pub fn sender(&self) -> Address {
        self.body.sender
    }

    pub fn nonce(&self) -> u64 {
        self.body.nonce
    }

    pub fn outputs(&self) -> &[Output] {
        &self.body.outputs
    }

    pub fn payload(&self) -> &[u8] {
        &self.body.payload
    }

    pub fn signatures(&self) -> &[Signature] {
        &self.signatures
    }

    /// Sum of output amounts, `None` on overflow.
    pub fn total_out(&self) -> Option<u64> {
        self.body
            .outputs
            .iter()
            .try_fold(0u64, |acc, o| acc.checked_add(o.amount))
    }

    /// Adds a signature, keeping the txid.
    pub fn add_signature(&mut self, sig: Signature) {
        self.signatures.push(sig);
    }

    /// Digest over the full encoding including signatures.
    pub fn witness_digest(&self) -> Digest256 {
        crypto::hash(&self.encode())
    }
}

impl Encode for Transaction {
    fn encode_to(&self, enc: &mut Encoder) {
        enc.put(&self.body).list(&self.signatures);
    }
}

impl Decode for Transaction {
    fn decode_from(dec: &mut Decoder<'_>) -> Result<Self, DecodeError> {
        let body: UnsignedTx = dec.get()?;
        let signatures = dec.list("signatures")?;
        Ok(body.with_signatures(signatures))
    }
}

/// Payload of a `vote_proposal`: one fresh address per option plus the window length in blocks.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ProposalPayload {
    pub options: Vec<Address>,
    pub window: u32,
}

impl Encode for ProposalPayload {
    fn encode_to(&self, enc: &mut Encoder) {
        enc.list(&self.options).u32(self.window);
    }
}

impl Decode for ProposalPayload {
    fn decode_from(dec: &mut Decoder<'_>) -> Result<Self, DecodeError> {
        Ok(Self {
            options: dec.list("options")?,
            window: dec.u32("window")?,
        })
    }
}

/// Payload of a `multisig_call`: the key set guarding the escrow and an
/// opaque memo for the participants.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct EscrowPayload {
    pub spec: MultisigSpec,
    pub memo: Vec<u8>,
}

impl Encode for EscrowPayload {
    fn encode_to(&self, enc: &mut Encoder) {
        enc.put(&self.spec).bytes(&self.memo);
    }
}

impl Decode for EscrowPayload {
    fn decode_from(dec: &mut Decoder<'_>) -> Result<Self, DecodeError> {
        Ok(Self {
            spec: dec.get()?,
            memo: dec.bytes("memo")?,
        })
    }
}

/// Builds the claim body spending an escrow. Every co-signer must sign the
/// same body, so it is fully determined by its inputs.
pub fn escrow_claim(chain_id: ChainId, spec: &MultisigSpec, nonce: u64, outputs: Vec<Output>) -> UnsignedTx {
    UnsignedTx {
        chain_id,
        kind: TxKind::MultisigClaim,
        sender: spec.address(),
        nonce,
        outputs,
        payload: spec.encode(),
    }
}
