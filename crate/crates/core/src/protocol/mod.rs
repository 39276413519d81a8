//! Message vocabulary and the canonical encoding used for hashing, signing,
//! storage and the simulated wire alike. Byte layouts are documented in
//! `docs/PROTOCOL.md`.

pub mod codec;
mod message;

pub use codec::{Decode, DecodeError, Encode, Reader, Writer};
pub use message::{
    credential_signing_bytes, offer_signing_bytes, verify_credential, witness_signing_bytes, Message, MessageKind,
    RejectReason,
};

pub fn encode(m: &Message) -> Vec<u8> {
    m.to_bytes()
}

pub fn decode(bytes: &[u8]) -> Result<Message, DecodeError> {
    Message::from_bytes(bytes)
}

#[cfg(test)]
pub(crate) mod samples {
    use super::*;
    use crate::crypto::{hash, merkle_build, merkle_prove, KeyPair};
    use crate::ledger::{
        create_block, make_genesis_tx, AccessLevel, Blockchain, Geotag, Transaction,
    };
    use rand::Rng;

    pub fn kp(n: u8) -> KeyPair {
        KeyPair::from_seed([n; 32])
    }

    /// One message per variant, built from a random source.
    pub fn random_messages<R: Rng>(rng: &mut R) -> Vec<Message> {
        let a = KeyPair::from_seed(rng.gen());
        let b = KeyPair::from_seed(rng.gen());
        let geo = Geotag::from_e7(rng.gen_range(-900_000_000..=900_000_000), rng.gen_range(-1_800_000_000..=1_800_000_000))
            .unwrap();
        let payload: Vec<u8> = (0..rng.gen_range(0..48)).map(|_| rng.gen()).collect();
        let tx = Transaction::new_signed(
            &a,
            hash(&rng.gen::<[u8; 8]>()),
            payload,
            geo,
            AccessLevel::try_from(rng.gen_range(0u8..3)).unwrap(),
            rng.gen(),
        );
        let now = rng.gen_range(0..1_000_000);
        let genesis = make_genesis_tx(&a, geo, now);
        let chain = Blockchain::new(&b, geo);
        let pending = create_block(chain.tip(), &genesis, rng.gen_range(1..100_000), now).unwrap();
        let h = pending.header_hash();
        let block = pending.bind(genesis.bind(&a, h)).unwrap();
        let n = rng.gen_range(1..9);
        let keys: Vec<_> = (0..n).map(|_| KeyPair::from_seed(rng.gen()).public).collect();
        let tree = merkle_build(&keys).unwrap();
        let proof = merkle_prove(&tree, rng.gen_range(0..n)).unwrap();
        vec![
            Message::JoinRequest { genesis },
            Message::credential(&b, a.public),
            Message::WitnessQuery { pk: a.public, geotag: geo },
            Message::witness_report(&b, a.public, rng.gen()),
            Message::header_offer(&b, a.public, h, rng.gen()),
            Message::BlockBroadcast { block },
            Message::TxSubmit { pk: a.public, tx: tx.clone() },
            Message::TxBroadcast { pk: a.public, tx: tx.clone() },
            Message::TxForward { pk: a.public, tx },
            Message::KuiRoot {
                root: tree.root(),
                epoch: rng.gen(),
                proof: if rng.gen() { Some(proof) } else { None },
            },
            Message::Ack { subject: hash(&rng.gen::<[u8; 4]>()) },
            Message::Reject {
                subject: hash(&rng.gen::<[u8; 4]>()),
                reason: [
                    RejectReason::BadSignature,
                    RejectReason::BrokenChainLink,
                    RejectReason::BlockExpired,
                    RejectReason::DuplicateKey,
                    RejectReason::UnknownDevice,
                ][rng.gen_range(0..5)],
            },
        ]
    }
}
