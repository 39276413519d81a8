"""Builds vectors.json from the byte layout in docs/PROTOCOL.md, using
hashlib and the `cryptography` package as independent implementations."""

import hashlib
import json
import struct
from pathlib import Path

from cryptography.hazmat.primitives.asymmetric.ed25519 import Ed25519PrivateKey
from cryptography.hazmat.primitives.serialization import Encoding, PublicFormat


def key(seed):
    sk = Ed25519PrivateKey.from_private_bytes(seed)
    return sk, sk.public_key().public_bytes(Encoding.Raw, PublicFormat.Raw)


def sha(b):
    return hashlib.sha256(b).digest()


rfc_seed = bytes.fromhex("9d61b19deffd5a60ba844af492ec2cc44449c5697b326919703bac031cae7f60")
rfc_sk, rfc_pk = key(rfc_seed)
assert rfc_pk.hex() == "d75a980182b10ab7d54bfed3c964073a0ee172f3daa62325af021a68f707511a"
rfc_sig = rfc_sk.sign(b"")
assert rfc_sig.hex().startswith("e5564300c360ac72")

prev = bytes(range(32))
header = rfc_pk + prev + struct.pack(">QQB", 60_000, 1_000, 2)

geotag = struct.pack(">ii", 450_701_000, 76_868_000)
payload = b"speed=42"
unsigned = sha(header) + struct.pack(">I", len(payload)) + payload + geotag + bytes([1]) + struct.pack(">Q", 1_234)
tx_sig = rfc_sk.sign(unsigned)
tx = unsigned + tx_sig
submit = bytes([7]) + rfc_pk + tx

leaves = [sha(key(bytes([n]) * 32)[1]) for n in (1, 2, 3)]
l1 = [sha(leaves[0] + leaves[1]), sha(leaves[2] + leaves[2])]
root = sha(l1[0] + l1[1])

offer = b"speedychain/header-offer" + rfc_pk + sha(header) + struct.pack(">Q", 60_000)

vectors = {
    "sha256_abc": sha(b"abc").hex(),
    "rfc8032_seed": rfc_seed.hex(),
    "rfc8032_public": rfc_pk.hex(),
    "rfc8032_empty_signature": rfc_sig.hex(),
    "header_bytes": header.hex(),
    "header_hash": sha(header).hex(),
    "tx_bytes": tx.hex(),
    "tx_digest": sha(tx).hex(),
    "tx_submit_bytes": submit.hex(),
    "merkle_root_seeds_1_2_3": root.hex(),
    "offer_signing_bytes": offer.hex(),
}
Path(__file__).with_name("vectors.json").write_text(json.dumps(vectors, indent=2) + "\n")
