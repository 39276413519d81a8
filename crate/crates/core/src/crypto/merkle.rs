//! Binary Merkle tree over public keys.
//!
//! Leaves are `hash(pk)`. An internal node is `hash(left || right)`. When a
//! level has an odd number of nodes, the last one is paired with itself.

use thiserror::Error;

use super::{hash, hash_pair, Digest, PublicKey};

#[derive(Debug, Error, PartialEq, Eq)]
pub enum MerkleError {
    #[error("cannot build a Merkle tree from an empty key set")]
    Empty,
    #[error("leaf index {index} out of range for {leaves} leaves")]
    IndexOutOfRange { index: usize, leaves: usize },
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Side {
    Left,
    Right,
}

/// One step of a membership proof: the sibling digest and which side of
/// the running hash it sits on.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct ProofStep {
    pub sibling: Digest,
    pub side: Side,
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct MembershipProof {
    pub leaf_index: u32,
    pub path: Vec<ProofStep>,
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct MerkleTree {
    /// `levels[0]` are the leaves; the last level holds only the root.
    levels: Vec<Vec<Digest>>,
}

impl MerkleTree {
    /// Builds from precomputed leaf digests, in the given order.
    pub fn from_leaves(leaves: Vec<Digest>) -> Result<Self, MerkleError> {
        if leaves.is_empty() {
            return Err(MerkleError::Empty);
        }
        let mut levels = vec![leaves];
        while levels.last().map_or(0, Vec::len) > 1 {
            let prev = levels.last().expect("non-empty");
            let next = prev
                .chunks(2)
                .map(|pair| match pair {
                    [l, r] => hash_pair(l, r),
                    [odd] => hash_pair(odd, odd),
                    _ => unreachable!(),
                })
                .collect();
            levels.push(next);
        }
        Ok(MerkleTree { levels })
    }

    pub fn root(&self) -> Digest {
        self.levels.last().expect("non-empty")[0]
    }

    pub fn leaves(&self) -> &[Digest] {
        &self.levels[0]
    }

    pub fn levels(&self) -> &[Vec<Digest>] {
        &self.levels
    }

    pub fn len(&self) -> usize {
        self.levels[0].len()
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    pub fn position(&self, leaf: &Digest) -> Option<usize> {
        self.levels[0].iter().position(|d| d == leaf)
    }
}

/// Tree over `hash(pk)` for each key, in input order.
pub fn merkle_build(public_keys: &[PublicKey]) -> Result<MerkleTree, MerkleError> {
    MerkleTree::from_leaves(public_keys.iter().map(|pk| hash(pk.as_bytes())).collect())
}

/// Tree over the keys sorted lexicographically by their bytes. Roots built
/// this way are comparable across nodes that collected the keys in
/// different orders.
pub fn merkle_build_canonical(public_keys: &[PublicKey]) -> Result<MerkleTree, MerkleError> {
    let mut sorted = public_keys.to_vec();
    sorted.sort_unstable();
    sorted.dedup();
    merkle_build(&sorted)
}

pub fn merkle_prove(tree: &MerkleTree, leaf_index: usize) -> Result<MembershipProof, MerkleError> {
    if leaf_index >= tree.len() {
        return Err(MerkleError::IndexOutOfRange {
            index: leaf_index,
            leaves: tree.len(),
        });
    }
    let mut path = Vec::with_capacity(tree.levels.len().saturating_sub(1));
    let mut idx = leaf_index;
    for level in &tree.levels[..tree.levels.len() - 1] {
        let (sibling_idx, side) = if idx.is_multiple_of(2) {
            // Last node of an odd level pairs with itself.
            ((idx + 1).min(level.len() - 1), Side::Right)
        } else {
            (idx - 1, Side::Left)
        };
        path.push(ProofStep {
            sibling: level[sibling_idx],
            side,
        });
        idx /= 2;
    }
    Ok(MembershipProof {
        leaf_index: leaf_index as u32,
        path,
    })
}

/// Folds `leaf` along the proof path and compares with `root`.
pub fn merkle_verify(root: &Digest, leaf: &Digest, proof: &MembershipProof) -> bool {
    let folded = proof.path.iter().fold(*leaf, |acc, step| match step.side {
        Side::Right => hash_pair(&acc, &step.sibling),
        Side::Left => hash_pair(&step.sibling, &acc),
    });
    folded == *root
}
