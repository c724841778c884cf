//! Ledger extraction.
//!
//! The ledger is the canonical path of one designated color. The extended
//! ledger also orders the other blocks: walking the ledger, each ledger
//! block contributes itself and its acceptable ancestors not yet listed,
//! sorted by dag depth, then color, then id.

use serde::{Deserialize, Serialize};

use crate::dag::{BlockDag, BlockId, Color};
use crate::minor::{build_minor, Minors};
use crate::reward::{canonical_path, RewardBook};

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Ledger {
    pub color: Color,
    pub blocks: Vec<BlockId>,
}

impl Ledger {
    pub fn len(&self) -> usize {
        self.blocks.len()
    }

    pub fn is_empty(&self) -> bool {
        self.blocks.is_empty()
    }

    /// The `k`-th ledger block, 1-based.
    pub fn get(&self, k: usize) -> Option<BlockId> {
        k.checked_sub(1).and_then(|i| self.blocks.get(i).copied())
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ExtendedLedger {
    pub color: Color,
    pub entries: Vec<BlockId>,
}

pub fn ledger(dag: &BlockDag, c_hat: Color) -> Ledger {
    Ledger {
        color: c_hat,
        blocks: canonical_path(&build_minor(dag, c_hat)).real_blocks(),
    }
}

fn color_count(dag: &BlockDag, c_hat: Color) -> u32 {
    dag.blocks()
        .filter_map(|b| b.color())
        .max()
        .map_or(0, |c| c + 1)
        .max(c_hat + 1)
}

/// Acceptability is evaluated in `dag` itself with threshold `n_l`.
pub fn extended_ledger(dag: &BlockDag, c_hat: Color, n_l: u32) -> ExtendedLedger {
    let minors = Minors::build(dag, color_count(dag, c_hat));
    let book = RewardBook::new(dag, &minors, None, n_l);
    let spine = book.canonical_path(c_hat).real_blocks();

    let mut visited = vec![false; dag.len()];
    let mut entries = Vec::new();
    for b in spine {
        let start = dag.idx(b).expect("ledger blocks are in the dag");
        let mut batch = Vec::new();
        let mut stack = vec![start];
        while let Some(x) = stack.pop() {
            if visited[x] {
                continue;
            }
            visited[x] = true;
            if book.acceptable_at(x) {
                batch.push(x);
            }
            stack.extend_from_slice(dag.parents_at(x));
        }
        batch.sort_by_key(|&x| (dag.depth_at(x), dag.color_at(x), dag.id_at(x)));
        entries.extend(batch.into_iter().map(|x| dag.id_at(x)));
    }
    ExtendedLedger { color: c_hat, entries }
}
