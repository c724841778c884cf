//! Append-only blockdag with ancestry and depth queries.
//!
//! Blocks are stored in insertion order, which is always a topological order
//! because a block can only reference parents that already exist. Internal
//! code addresses blocks by their insertion index; the public surface speaks
//! [`BlockId`].

use std::collections::{HashMap, HashSet};
use std::fmt;
use std::io::{BufRead, Write};

use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Color index in `[0, N_C)`.
pub type Color = u32;

/// Miner index into the scheduler's miner list.
pub type MinerIndex = usize;

/// Opaque block identifier. Ordering on ids is the content-hash surrogate
/// used for every tie-break.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(transparent)]
pub struct BlockId(pub u64);

impl fmt::Display for BlockId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "#{}", self.0)
    }
}

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum DagError {
    #[error("parent {ancestor} is an ancestor of parent {descendant}")]
    AncestorViolation { ancestor: BlockId, descendant: BlockId },
    #[error("unknown parent {0}")]
    UnknownParent(BlockId),
    #[error("unknown block {0}")]
    UnknownBlock(BlockId),
    #[error("block id {0} already present")]
    DuplicateId(BlockId),
    #[error("a non-genesis block needs at least one parent")]
    NoParents,
    #[error("malformed dag record on line {line}: {reason}")]
    Parse { line: usize, reason: String },
}

/// Everything about a block except its identity and edges.
#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct BlockMeta {
    pub miner: Option<MinerIndex>,
    pub color: Option<Color>,
    pub round_created: u64,
    pub round_published: Option<u64>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub payload: Vec<u8>,
}

impl BlockMeta {
    pub fn colored(color: Color) -> Self {
        Self {
            color: Some(color),
            ..Self::default()
        }
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Block {
    pub id: BlockId,
    pub parents: Vec<BlockId>,
    pub meta: BlockMeta,
}

impl Block {
    pub fn color(&self) -> Option<Color> {
        self.meta.color
    }
}

/// A blockdag rooted at a single, uncolored genesis block.
#[derive(Clone, Debug)]
pub struct BlockDag {
    blocks: Vec<Block>,
    index: HashMap<BlockId, usize>,
    parents: Vec<Vec<usize>>,
    children: Vec<Vec<usize>>,
    depth: Vec<u32>,
    next_id: u64,
}

impl Default for BlockDag {
    fn default() -> Self {
        Self::new()
    }
}

impl BlockDag {
    /// Creates a dag holding only the genesis block, id `0`.
    pub fn new() -> Self {
        Self::with_genesis(BlockId(0))
    }

    pub fn with_genesis(id: BlockId) -> Self {
        let genesis = Block {
            id,
            parents: Vec::new(),
            meta: BlockMeta {
                round_published: Some(0),
                ..BlockMeta::default()
            },
        };
        let mut index = HashMap::new();
        index.insert(id, 0);
        Self {
            blocks: vec![genesis],
            index,
            parents: vec![Vec::new()],
            children: vec![Vec::new()],
            depth: vec![0],
            next_id: id.0 + 1,
        }
    }

    pub fn genesis(&self) -> BlockId {
        self.blocks[0].id
    }

    pub fn len(&self) -> usize {
        self.blocks.len()
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    /// Appends a block with the next free id.
    pub fn add_block(&mut self, parents: &[BlockId], meta: BlockMeta) -> Result<BlockId, DagError> {
        let id = BlockId(self.next_id);
        self.insert(id, parents, meta)
    }

    /// Appends a block under a caller-chosen id. The dag is unchanged on error.
    pub fn insert(&mut self, id: BlockId, parents: &[BlockId], meta: BlockMeta) -> Result<BlockId, DagError> {
        if self.index.contains_key(&id) {
            return Err(DagError::DuplicateId(id));
        }
        if parents.is_empty() {
            return Err(DagError::NoParents);
        }
        let mut parent_idx = Vec::with_capacity(parents.len());
        for p in parents {
            let i = *self.index.get(p).ok_or(DagError::UnknownParent(*p))?;
            if !parent_idx.contains(&i) {
                parent_idx.push(i);
            }
        }
        self.check_antichain(&parent_idx)?;

        let idx = self.blocks.len();
        let depth = 1 + parent_idx.iter().map(|&p| self.depth[p]).max().unwrap_or(0);
        for &p in &parent_idx {
            self.children[p].push(idx);
        }
        self.blocks.push(Block {
            id,
            parents: parent_idx.iter().map(|&p| self.blocks[p].id).collect(),
            meta,
        });
        self.index.insert(id, idx);
        self.parents.push(parent_idx);
        self.children.push(Vec::new());
        self.depth.push(depth);
        self.next_id = self.next_id.max(id.0 + 1);
        Ok(id)
    }

    fn check_antichain(&self, parents: &[usize]) -> Result<(), DagError> {
        if parents.len() < 2 {
            return Ok(());
        }
        let floor = parents.iter().map(|&p| self.depth[p]).min().unwrap_or(0);
        let first = parents.iter().copied().min().unwrap_or(0);
        for &p in parents {
            // Walk p's strict ancestors down to the shallowest parent depth
            // and the earliest parent insertion.
            let mut seen = HashSet::new();
            let mut stack: Vec<usize> = self.parents[p].clone();
            while let Some(x) = stack.pop() {
                if self.depth[x] < floor || x < first || !seen.insert(x) {
                    continue;
                }
                if parents.contains(&x) {
                    return Err(DagError::AncestorViolation {
                        ancestor: self.blocks[x].id,
                        descendant: self.blocks[p].id,
                    });
                }
                stack.extend_from_slice(&self.parents[x]);
            }
        }
        Ok(())
    }

    pub fn contains(&self, id: BlockId) -> bool {
        self.index.contains_key(&id)
    }

    pub fn get(&self, id: BlockId) -> Option<&Block> {
        self.index.get(&id).map(|&i| &self.blocks[i])
    }

    pub fn block(&self, id: BlockId) -> Result<&Block, DagError> {
        self.get(id).ok_or(DagError::UnknownBlock(id))
    }

    pub fn blocks(&self) -> impl Iterator<Item = &Block> {
        self.blocks.iter()
    }

    /// True iff a directed path `a -> ... -> b` exists. Irreflexive.
    pub fn is_ancestor(&self, a: BlockId, b: BlockId) -> Result<bool, DagError> {
        let ai = self.idx(a)?;
        let bi = self.idx(b)?;
        Ok(self.is_ancestor_idx(ai, bi))
    }

    pub fn depth_of(&self, b: BlockId) -> Result<u32, DagError> {
        Ok(self.depth[self.idx(b)?])
    }

    /// Length of a longest path from genesis.
    pub fn max_depth(&self) -> u32 {
        self.depth.iter().copied().max().unwrap_or(0)
    }

    /// Blocks without children, in insertion order.
    pub fn leaves(&self) -> Vec<BlockId> {
        (0..self.len())
            .filter(|&i| self.children[i].is_empty())
            .map(|i| self.blocks[i].id)
            .collect()
    }

    pub(crate) fn idx(&self, id: BlockId) -> Result<usize, DagError> {
        self.index.get(&id).copied().ok_or(DagError::UnknownBlock(id))
    }

    pub(crate) fn block_at(&self, i: usize) -> &Block {
        &self.blocks[i]
    }

    pub(crate) fn id_at(&self, i: usize) -> BlockId {
        self.blocks[i].id
    }

    pub(crate) fn parents_at(&self, i: usize) -> &[usize] {
        &self.parents[i]
    }

    pub(crate) fn depth_at(&self, i: usize) -> u32 {
        self.depth[i]
    }

    pub(crate) fn color_at(&self, i: usize) -> Option<Color> {
        self.blocks[i].meta.color
    }

    pub(crate) fn is_ancestor_idx(&self, a: usize, b: usize) -> bool {
        if a == b || self.depth[a] >= self.depth[b] {
            return false;
        }
        let target = self.depth[a];
        let mut seen = HashSet::new();
        let mut stack = self.parents[b].clone();
        while let Some(x) = stack.pop() {
            if x == a {
                return true;
            }
            // Ancestors are inserted before their descendants.
            if self.depth[x] <= target || x < a || !seen.insert(x) {
                continue;
            }
            stack.extend_from_slice(&self.parents[x]);
        }
        false
    }

    /// Re-checks every stored invariant by full scan: antichain parents,
    /// cached depth, single root.
    pub fn validate(&self) -> Result<(), DagError> {
        for i in 1..self.len() {
            if self.parents[i].is_empty() {
                return Err(DagError::NoParents);
            }
            self.check_antichain(&self.parents[i])?;
            let expect = 1 + self.parents[i].iter().map(|&p| self.depth[p]).max().unwrap_or(0);
            assert_eq!(self.depth[i], expect, "cached depth drifted");
        }
        Ok(())
    }

    /// One JSON record per line, genesis first.
    pub fn write_jsonl<W: Write>(&self, mut out: W) -> std::io::Result<()> {
        for b in &self.blocks {
            let rec = BlockRecord::from(b);
            serde_json::to_writer(&mut out, &rec)?;
            out.write_all(b"\n")?;
        }
        Ok(())
    }

    pub fn to_jsonl(&self) -> String {
        let mut buf = Vec::new();
        self.write_jsonl(&mut buf).expect("writing to a Vec cannot fail");
        String::from_utf8(buf).expect("serde_json emits utf-8")
    }

    /// Reads the format produced by [`BlockDag::write_jsonl`]. The first
    /// record must be the genesis (no parents); blocks must follow their
    /// parents.
    pub fn read_jsonl<R: BufRead>(input: R) -> Result<Self, DagError> {
        let mut dag: Option<BlockDag> = None;
        for (n, line) in input.lines().enumerate() {
            let line = line.map_err(|e| DagError::Parse {
                line: n + 1,
                reason: e.to_string(),
            })?;
            if line.trim().is_empty() {
                continue;
            }
            let rec: BlockRecord = serde_json::from_str(&line).map_err(|e| DagError::Parse {
                line: n + 1,
                reason: e.to_string(),
            })?;
            match dag.as_mut() {
                None => {
                    if !rec.parents.is_empty() {
                        return Err(DagError::Parse {
                            line: n + 1,
                            reason: "first record must be the genesis".into(),
                        });
                    }
                    dag = Some(BlockDag::with_genesis(rec.id));
                }
                Some(d) => {
                    d.insert(rec.id, &rec.parents, rec.meta())?;
                }
            }
        }
        dag.ok_or(DagError::Parse {
            line: 0,
            reason: "empty input".into(),
        })
    }

    pub fn from_jsonl(text: &str) -> Result<Self, DagError> {
        Self::read_jsonl(text.as_bytes())
    }
}

/// Line format of the dag interchange file.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct BlockRecord {
    pub id: BlockId,
    pub parents: Vec<BlockId>,
    pub miner: Option<MinerIndex>,
    pub color: Option<Color>,
    pub round_created: u64,
    pub round_published: Option<u64>,
}

impl From<&Block> for BlockRecord {
    fn from(b: &Block) -> Self {
        Self {
            id: b.id,
            parents: b.parents.clone(),
            miner: b.meta.miner,
            color: b.meta.color,
            round_created: b.meta.round_created,
            round_published: b.meta.round_published,
        }
    }
}

impl BlockRecord {
    fn meta(&self) -> BlockMeta {
        BlockMeta {
            miner: self.miner,
            color: self.color,
            round_created: self.round_created,
            round_published: self.round_published,
            payload: Vec::new(),
        }
    }
}
