use serde::{Deserialize, Serialize};

use super::codec::{Decode, DecodeError, Encode, Reader, Writer};
use crate::crypto::{self, Digest, KeyPair, MembershipProof, ProofStep, PublicKey, Side, Signature};
use crate::ledger::{AppendError, DeviceBlock, Geotag, GenesisTransaction, Timestamp, Transaction};

const CREDENTIAL_DOMAIN: &[u8] = b"speedychain/rsi-credential";
const WITNESS_DOMAIN: &[u8] = b"speedychain/witness-report";
const OFFER_DOMAIN: &[u8] = b"speedychain/header-offer";

/// Reason code carried by [`Message::Reject`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
#[repr(u8)]
pub enum RejectReason {
    BadSignature = 1,
    BrokenChainLink = 2,
    BlockExpired = 3,
    DuplicateKey = 4,
    UnknownDevice = 5,
    KeyMismatch = 6,
    Malformed = 7,
}

impl RejectReason {
    pub fn as_str(&self) -> &'static str {
        match self {
            RejectReason::BadSignature => "bad_signature",
            RejectReason::BrokenChainLink => "broken_chain_link",
            RejectReason::BlockExpired => "block_expired",
            RejectReason::DuplicateKey => "duplicate_key",
            RejectReason::UnknownDevice => "unknown_device",
            RejectReason::KeyMismatch => "key_mismatch",
            RejectReason::Malformed => "malformed",
        }
    }
}

impl From<AppendError> for RejectReason {
    fn from(e: AppendError) -> Self {
        match e {
            AppendError::BadSignature => RejectReason::BadSignature,
            AppendError::BrokenChainLink => RejectReason::BrokenChainLink,
            AppendError::BlockExpired => RejectReason::BlockExpired,
            AppendError::KeyMismatch => RejectReason::KeyMismatch,
            AppendError::EmptyWindow => RejectReason::Malformed,
        }
    }
}

impl Encode for RejectReason {
    fn encode_to(&self, w: &mut Writer) {
        w.u8(*self as u8);
    }
}

impl Decode for RejectReason {
    fn decode_from(r: &mut Reader<'_>) -> Result<Self, DecodeError> {
        Ok(match r.u8()? {
            1 => RejectReason::BadSignature,
            2 => RejectReason::BrokenChainLink,
            3 => RejectReason::BlockExpired,
            4 => RejectReason::DuplicateKey,
            5 => RejectReason::UnknownDevice,
            6 => RejectReason::KeyMismatch,
            7 => RejectReason::Malformed,
            _ => return Err(DecodeError::InvalidValue("reject reason")),
        })
    }
}

impl Encode for MembershipProof {
    fn encode_to(&self, w: &mut Writer) {
        w.u32(self.leaf_index).seq(&self.path);
    }
}

impl Decode for MembershipProof {
    fn decode_from(r: &mut Reader<'_>) -> Result<Self, DecodeError> {
        Ok(MembershipProof {
            leaf_index: r.u32()?,
            path: r.seq()?,
        })
    }
}

impl Encode for ProofStep {
    fn encode_to(&self, w: &mut Writer) {
        w.put(&self.sibling).u8(match self.side {
            Side::Left => 0,
            Side::Right => 1,
        });
    }
}

impl Decode for ProofStep {
    fn decode_from(r: &mut Reader<'_>) -> Result<Self, DecodeError> {
        let sibling = r.get()?;
        let side = match r.u8()? {
            0 => Side::Left,
            1 => Side::Right,
            _ => return Err(DecodeError::InvalidValue("proof side")),
        };
        Ok(ProofStep { sibling, side })
    }
}

/// Everything nodes say to each other.
#[derive(Clone, Debug, PartialEq, Eq)]
pub enum Message {
    /// Vehicle asks to join. The genesis is unbound on first contact and
    /// bound (re-signed against the offered header) on the second.
    JoinRequest { genesis: GenesisTransaction },
    /// RSI key endorsed by the city authority.
    RsiCredential {
        rsi_pk: PublicKey,
        authority_signature: Signature,
    },
    /// "Is there a vehicle at this position?"
    WitnessQuery { pk: PublicKey, geotag: Geotag },
    WitnessReport {
        pk: PublicKey,
        witness_pk: PublicKey,
        observed: bool,
        witness_signature: Signature,
    },
    /// Header digest allocated for a joining key, signed by the RSI.
    HeaderOffer {
        device_pk: PublicKey,
        header_hash: Digest,
        expiration: Timestamp,
        rsi_pk: PublicKey,
        rsi_signature: Signature,
    },
    BlockBroadcast { block: DeviceBlock },
    TxSubmit { pk: PublicKey, tx: Transaction },
    TxBroadcast { pk: PublicKey, tx: Transaction },
    /// Vehicle-to-vehicle hand-off toward an RSI.
    TxForward { pk: PublicKey, tx: Transaction },
    /// Merkle root of active keys for a key-update epoch. When addressed to
    /// a vehicle it carries that vehicle's membership proof.
    KuiRoot {
        root: Digest,
        epoch: u64,
        proof: Option<MembershipProof>,
    },
    Ack { subject: Digest },
    Reject { subject: Digest, reason: RejectReason },
}

/// Variant discriminant, used for per-type accounting.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MessageKind {
    JoinRequest,
    RsiCredential,
    WitnessQuery,
    WitnessReport,
    HeaderOffer,
    BlockBroadcast,
    TxSubmit,
    TxBroadcast,
    TxForward,
    KuiRoot,
    Ack,
    Reject,
}

impl MessageKind {
    pub const ALL: [MessageKind; 12] = [
        MessageKind::JoinRequest,
        MessageKind::RsiCredential,
        MessageKind::WitnessQuery,
        MessageKind::WitnessReport,
        MessageKind::HeaderOffer,
        MessageKind::BlockBroadcast,
        MessageKind::TxSubmit,
        MessageKind::TxBroadcast,
        MessageKind::TxForward,
        MessageKind::KuiRoot,
        MessageKind::Ack,
        MessageKind::Reject,
    ];

    pub fn tag(self) -> u8 {
        self as u8 + 1
    }

    pub fn from_tag(tag: u8) -> Option<MessageKind> {
        tag.checked_sub(1).and_then(|i| Self::ALL.get(i as usize).copied())
    }

    pub fn as_str(self) -> &'static str {
        match self {
            MessageKind::JoinRequest => "join_request",
            MessageKind::RsiCredential => "rsi_credential",
            MessageKind::WitnessQuery => "witness_query",
            MessageKind::WitnessReport => "witness_report",
            MessageKind::HeaderOffer => "header_offer",
            MessageKind::BlockBroadcast => "block_broadcast",
            MessageKind::TxSubmit => "tx_submit",
            MessageKind::TxBroadcast => "tx_broadcast",
            MessageKind::TxForward => "tx_forward",
            MessageKind::KuiRoot => "kui_root",
            MessageKind::Ack => "ack",
            MessageKind::Reject => "reject",
        }
    }
}

impl Message {
    pub fn kind(&self) -> MessageKind {
        match self {
            Message::JoinRequest { .. } => MessageKind::JoinRequest,
            Message::RsiCredential { .. } => MessageKind::RsiCredential,
            Message::WitnessQuery { .. } => MessageKind::WitnessQuery,
            Message::WitnessReport { .. } => MessageKind::WitnessReport,
            Message::HeaderOffer { .. } => MessageKind::HeaderOffer,
            Message::BlockBroadcast { .. } => MessageKind::BlockBroadcast,
            Message::TxSubmit { .. } => MessageKind::TxSubmit,
            Message::TxBroadcast { .. } => MessageKind::TxBroadcast,
            Message::TxForward { .. } => MessageKind::TxForward,
            Message::KuiRoot { .. } => MessageKind::KuiRoot,
            Message::Ack { .. } => MessageKind::Ack,
            Message::Reject { .. } => MessageKind::Reject,
        }
    }

    /// Authority endorsement of an RSI key.
    pub fn credential(authority: &KeyPair, rsi_pk: PublicKey) -> Message {
        Message::RsiCredential {
            rsi_pk,
            authority_signature: authority.sign(&credential_signing_bytes(&rsi_pk)),
        }
    }

    pub fn witness_report(witness: &KeyPair, pk: PublicKey, observed: bool) -> Message {
        Message::WitnessReport {
            pk,
            witness_pk: witness.public,
            observed,
            witness_signature: witness.sign(&witness_signing_bytes(&pk, &witness.public, observed)),
        }
    }

    pub fn header_offer(rsi: &KeyPair, device_pk: PublicKey, header_hash: Digest, expiration: Timestamp) -> Message {
        Message::HeaderOffer {
            device_pk,
            header_hash,
            expiration,
            rsi_pk: rsi.public,
            rsi_signature: rsi.sign(&offer_signing_bytes(&device_pk, &header_hash, expiration)),
        }
    }
}

pub fn credential_signing_bytes(rsi_pk: &PublicKey) -> Vec<u8> {
    let mut w = Writer::new();
    w.raw(CREDENTIAL_DOMAIN).put(rsi_pk);
    w.finish()
}

pub fn witness_signing_bytes(pk: &PublicKey, witness_pk: &PublicKey, observed: bool) -> Vec<u8> {
    let mut w = Writer::new();
    w.raw(WITNESS_DOMAIN).put(pk).put(witness_pk).bool(observed);
    w.finish()
}

pub fn offer_signing_bytes(device_pk: &PublicKey, header_hash: &Digest, expiration: Timestamp) -> Vec<u8> {
    let mut w = Writer::new();
    w.raw(OFFER_DOMAIN).put(device_pk).put(header_hash).u64(expiration);
    w.finish()
}

/// Checks an RSI credential against the authority key.
pub fn verify_credential(authority_pk: &PublicKey, rsi_pk: &PublicKey, sig: &Signature) -> bool {
    crypto::verify(authority_pk, &credential_signing_bytes(rsi_pk), sig)
}

impl Encode for Message {
    fn encode_to(&self, w: &mut Writer) {
        w.u8(self.kind().tag());
        match self {
            Message::JoinRequest { genesis } => {
                w.put(genesis);
            }
            Message::RsiCredential {
                rsi_pk,
                authority_signature,
            } => {
                w.put(rsi_pk).put(authority_signature);
            }
            Message::WitnessQuery { pk, geotag } => {
                w.put(pk).put(geotag);
            }
            Message::WitnessReport {
                pk,
                witness_pk,
                observed,
                witness_signature,
            } => {
                w.put(pk).put(witness_pk).bool(*observed).put(witness_signature);
            }
            Message::HeaderOffer {
                device_pk,
                header_hash,
                expiration,
                rsi_pk,
                rsi_signature,
            } => {
                w.put(device_pk)
                    .put(header_hash)
                    .u64(*expiration)
                    .put(rsi_pk)
                    .put(rsi_signature);
            }
            Message::BlockBroadcast { block } => {
                w.put(block);
            }
            Message::TxSubmit { pk, tx } | Message::TxBroadcast { pk, tx } | Message::TxForward { pk, tx } => {
                w.put(pk).put(tx);
            }
            Message::KuiRoot { root, epoch, proof } => {
                w.put(root).u64(*epoch).option(proof.as_ref());
            }
            Message::Ack { subject } => {
                w.put(subject);
            }
            Message::Reject { subject, reason } => {
                w.put(subject).put(reason);
            }
        }
    }
}

impl Decode for Message {
    fn decode_from(r: &mut Reader<'_>) -> Result<Self, DecodeError> {
        let tag = r.u8()?;
        let kind = MessageKind::from_tag(tag).ok_or(DecodeError::UnknownTag(tag))?;
        Ok(match kind {
            MessageKind::JoinRequest => Message::JoinRequest { genesis: r.get()? },
            MessageKind::RsiCredential => Message::RsiCredential {
                rsi_pk: r.get()?,
                authority_signature: r.get()?,
            },
            MessageKind::WitnessQuery => Message::WitnessQuery {
                pk: r.get()?,
                geotag: r.get()?,
            },
            MessageKind::WitnessReport => Message::WitnessReport {
                pk: r.get()?,
                witness_pk: r.get()?,
                observed: r.bool()?,
                witness_signature: r.get()?,
            },
            MessageKind::HeaderOffer => Message::HeaderOffer {
                device_pk: r.get()?,
                header_hash: r.get()?,
                expiration: r.u64()?,
                rsi_pk: r.get()?,
                rsi_signature: r.get()?,
            },
            MessageKind::BlockBroadcast => Message::BlockBroadcast { block: r.get()? },
            MessageKind::TxSubmit => Message::TxSubmit {
                pk: r.get()?,
                tx: r.get()?,
            },
            MessageKind::TxBroadcast => Message::TxBroadcast {
                pk: r.get()?,
                tx: r.get()?,
            },
            MessageKind::TxForward => Message::TxForward {
                pk: r.get()?,
                tx: r.get()?,
            },
            MessageKind::KuiRoot => Message::KuiRoot {
                root: r.get()?,
                epoch: r.u64()?,
                proof: r.option()?,
            },
            MessageKind::Ack => Message::Ack { subject: r.get()? },
            MessageKind::Reject => Message::Reject {
                subject: r.get()?,
                reason: r.get()?,
            },
        })
    }
}
