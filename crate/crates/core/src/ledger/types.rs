use std::fmt;

use serde::{Deserialize, Serialize};

use crate::crypto::{self, Digest, KeyPair, PublicKey, Signature};
use crate::protocol::codec::{Decode, DecodeError, Encode, Reader, Writer};

/// Logical simulation time in milliseconds.
pub type Timestamp = u64;

/// Who may read a record. Carried and validated structurally only.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
#[repr(u8)]
pub enum AccessLevel {
    /// Control data, readable by anyone.
    #[default]
    Public = 0,
    OwnerOnly = 1,
    /// Service data for a named service provider.
    NamedProvider = 2,
}

impl TryFrom<u8> for AccessLevel {
    type Error = DecodeError;

    fn try_from(v: u8) -> Result<Self, DecodeError> {
        match v {
            0 => Ok(AccessLevel::Public),
            1 => Ok(AccessLevel::OwnerOnly),
            2 => Ok(AccessLevel::NamedProvider),
            _ => Err(DecodeError::InvalidValue("access level")),
        }
    }
}

/// GPS position in fixed-point units of 1e-7 degrees.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Hash)]
pub struct Geotag {
    lat_e7: i32,
    lon_e7: i32,
}

const E7: f64 = 1e7;

impl Geotag {
    pub fn from_degrees(lat: f64, lon: f64) -> Option<Geotag> {
        let ok = lat.is_finite() && lon.is_finite() && lat.abs() <= 90.0 && lon.abs() <= 180.0;
        ok.then(|| Geotag {
            lat_e7: (lat * E7).round() as i32,
            lon_e7: (lon * E7).round() as i32,
        })
    }

    pub fn from_e7(lat_e7: i32, lon_e7: i32) -> Option<Geotag> {
        let ok = lat_e7.unsigned_abs() <= 900_000_000 && lon_e7.unsigned_abs() <= 1_800_000_000;
        ok.then_some(Geotag { lat_e7, lon_e7 })
    }

    pub fn latitude(&self) -> f64 {
        self.lat_e7 as f64 / E7
    }

    pub fn longitude(&self) -> f64 {
        self.lon_e7 as f64 / E7
    }

    pub fn e7(&self) -> (i32, i32) {
        (self.lat_e7, self.lon_e7)
    }
}

impl fmt::Display for Geotag {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "({:.7}, {:.7})", self.latitude(), self.longitude())
    }
}

impl Encode for Geotag {
    fn encode_to(&self, w: &mut Writer) {
        w.i32(self.lat_e7).i32(self.lon_e7);
    }
}

impl Decode for Geotag {
    fn decode_from(r: &mut Reader<'_>) -> Result<Self, DecodeError> {
        let (lat, lon) = (r.i32()?, r.i32()?);
        Geotag::from_e7(lat, lon).ok_or(DecodeError::InvalidValue("geotag"))
    }
}

impl Encode for AccessLevel {
    fn encode_to(&self, w: &mut Writer) {
        w.u8(*self as u8);
    }
}

impl Decode for AccessLevel {
    fn decode_from(r: &mut Reader<'_>) -> Result<Self, DecodeError> {
        AccessLevel::try_from(r.u8()?)
    }
}

/// Immutable per-device header. Only the header is hashed into the next
/// block; the ledger hangs off it.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct BlockHeader {
    pub device_pk: PublicKey,
    pub prev_header_hash: Digest,
    /// Last instant at which a transaction may be appended.
    pub expiration: Timestamp,
    pub created_at: Timestamp,
    pub access_level: AccessLevel,
}

impl BlockHeader {
    pub fn hash(&self) -> Digest {
        crypto::hash(&self.to_bytes())
    }

    pub fn is_active_at(&self, now: Timestamp) -> bool {
        self.created_at <= now && now <= self.expiration
    }

    /// Whether the validity windows `[created_at, expiration]` intersect.
    pub fn overlaps(&self, other: &BlockHeader) -> bool {
        self.created_at <= other.expiration && other.created_at <= self.expiration
    }
}

/// Digest of the canonical header encoding.
pub fn header_hash(h: &BlockHeader) -> Digest {
    h.hash()
}

impl Encode for BlockHeader {
    fn encode_to(&self, w: &mut Writer) {
        w.put(&self.device_pk)
            .put(&self.prev_header_hash)
            .u64(self.expiration)
            .u64(self.created_at)
            .put(&self.access_level);
    }
}

impl Decode for BlockHeader {
    fn decode_from(r: &mut Reader<'_>) -> Result<Self, DecodeError> {
        Ok(BlockHeader {
            device_pk: r.get()?,
            prev_header_hash: r.get()?,
            expiration: r.u64()?,
            created_at: r.u64()?,
            access_level: r.get()?,
        })
    }
}

/// A signed sensor record, hash-chained to its predecessor in the ledger.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Transaction {
    pub prev_tx_hash: Digest,
    pub payload: Vec<u8>,
    pub geotag: Geotag,
    pub access_level: AccessLevel,
    pub timestamp: Timestamp,
    pub signature: Signature,
}

impl Transaction {
    pub fn new_signed(
        kp: &KeyPair,
        prev_tx_hash: Digest,
        payload: Vec<u8>,
        geotag: Geotag,
        access_level: AccessLevel,
        timestamp: Timestamp,
    ) -> Transaction {
        let mut tx = Transaction {
            prev_tx_hash,
            payload,
            geotag,
            access_level,
            timestamp,
            signature: Signature([0; 64]),
        };
        tx.signature = kp.sign(&tx.signing_bytes());
        tx
    }

    /// Canonical encoding of every field except the signature.
    pub fn signing_bytes(&self) -> Vec<u8> {
        let mut w = Writer::with_capacity(64 + self.payload.len());
        self.encode_unsigned(&mut w);
        w.finish()
    }

    fn encode_unsigned(&self, w: &mut Writer) {
        w.put(&self.prev_tx_hash)
            .bytes(&self.payload)
            .put(&self.geotag)
            .put(&self.access_level)
            .u64(self.timestamp);
    }

    /// Digest over the full canonical encoding, signature included. The
    /// successor's `prev_tx_hash` points here.
    pub fn digest(&self) -> Digest {
        crypto::hash(&self.to_bytes())
    }

    pub fn verify(&self, pk: &PublicKey) -> bool {
        crypto::verify(pk, &self.signing_bytes(), &self.signature)
    }

    pub fn verify_with(&self, vk: &ed25519_dalek::VerifyingKey) -> bool {
        crypto::verify_with(vk, &self.signing_bytes(), &self.signature)
    }
}

impl Encode for Transaction {
    fn encode_to(&self, w: &mut Writer) {
        self.encode_unsigned(w);
        w.put(&self.signature);
    }
}

impl Decode for Transaction {
    fn decode_from(r: &mut Reader<'_>) -> Result<Self, DecodeError> {
        Ok(Transaction {
            prev_tx_hash: r.get()?,
            payload: r.bytes()?,
            geotag: r.get()?,
            access_level: r.get()?,
            timestamp: r.u64()?,
            signature: r.get()?,
        })
    }
}

/// First ledger entry of a device block. Its payload is the canonical
/// encoding of `(device_pk, geotag)`.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct GenesisTransaction(Transaction);

fn genesis_payload(pk: &PublicKey, geotag: &Geotag) -> Vec<u8> {
    let mut w = Writer::with_capacity(40);
    w.put(pk).put(geotag);
    w.finish()
}

impl GenesisTransaction {
    /// Wraps a transaction, checking that its payload has genesis shape.
    pub fn from_transaction(tx: Transaction) -> Result<Self, DecodeError> {
        let mut r = Reader::new(&tx.payload);
        let _: PublicKey = r.get()?;
        let _: Geotag = r.get()?;
        r.finish()?;
        Ok(GenesisTransaction(tx))
    }

    pub fn transaction(&self) -> &Transaction {
        &self.0
    }

    pub fn into_transaction(self) -> Transaction {
        self.0
    }

    pub fn embedded_pk(&self) -> PublicKey {
        PublicKey(self.0.payload[..32].try_into().expect("checked shape"))
    }

    pub fn embedded_geotag(&self) -> Geotag {
        Geotag::from_bytes(&self.0.payload[32..]).expect("checked shape")
    }

    pub fn is_bound(&self) -> bool {
        self.0.prev_tx_hash != Digest::ZERO
    }

    /// Signature check against the embedded key.
    pub fn verify(&self) -> bool {
        self.0.verify(&self.embedded_pk())
    }

    /// Re-signs with `prev_tx_hash` set to the allocated header's digest.
    pub fn bind(&self, kp: &KeyPair, header_hash: Digest) -> GenesisTransaction {
        let t = &self.0;
        GenesisTransaction(Transaction::new_signed(
            kp,
            header_hash,
            t.payload.clone(),
            t.geotag,
            t.access_level,
            t.timestamp,
        ))
    }
}

/// Signed genesis embedding `kp.public` and `geotag`, not yet bound to a
/// header (zero `prev_tx_hash`).
pub fn make_genesis_tx(kp: &KeyPair, geotag: Geotag, now: Timestamp) -> GenesisTransaction {
    make_genesis_tx_with_access(kp, geotag, now, AccessLevel::Public)
}

pub fn make_genesis_tx_with_access(
    kp: &KeyPair,
    geotag: Geotag,
    now: Timestamp,
    access_level: AccessLevel,
) -> GenesisTransaction {
    GenesisTransaction(Transaction::new_signed(
        kp,
        Digest::ZERO,
        genesis_payload(&kp.public, &geotag),
        geotag,
        access_level,
        now,
    ))
}

impl Encode for GenesisTransaction {
    fn encode_to(&self, w: &mut Writer) {
        self.0.encode_to(w);
    }
}

impl Decode for GenesisTransaction {
    fn decode_from(r: &mut Reader<'_>) -> Result<Self, DecodeError> {
        GenesisTransaction::from_transaction(r.get()?)
    }
}
