//! Block coloring and per-color graph minors.
//!
//! The minor of color `c` has the color-`c` blocks as nodes and an edge
//! `b -> b'` iff `b'` descends from `b` and no path from `b` to `b'` passes
//! through another color-`c` block. Equivalently the minor is the Hasse
//! diagram of the ancestry order restricted to color `c`.
//!
//! Construction sweeps the dag in topological order and carries, for every
//! block, its *frontier*: the maximal color-`c` ancestors-or-self. A new
//! color-`c` block's minor parents are the maximal elements of the union of
//! its dag parents' frontiers. The sweep is incremental so the simulator can
//! keep minors current as blocks are generated.

use std::collections::HashMap;
use std::fmt;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use smallvec::SmallVec;

use crate::dag::{BlockDag, BlockId, BlockRecord, Color, DagError};

/// Stable digest of a block's content.
pub type Digest = Box<dyn Fn(&[u8]) -> u64 + Send + Sync>;

/// How block colors are chosen.
pub enum ColorAssigner {
    /// Uniform draws from a seeded generator, as a scheduler would make them.
    SchedulerRandom { n_colors: u32, rng: ChaCha8Rng },
    /// `digest(payload) mod N_C`.
    ContentDerived { n_colors: u32, digest: Digest },
}

impl fmt::Debug for ColorAssigner {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Self::SchedulerRandom { n_colors, .. } => {
                write!(f, "SchedulerRandom {{ n_colors: {n_colors} }}")
            }
            Self::ContentDerived { n_colors, .. } => {
                write!(f, "ContentDerived {{ n_colors: {n_colors} }}")
            }
        }
    }
}

impl ColorAssigner {
    pub fn scheduler_random(n_colors: u32, seed: u64) -> Self {
        assert!(n_colors >= 1, "need at least one color");
        Self::SchedulerRandom {
            n_colors,
            rng: ChaCha8Rng::seed_from_u64(seed),
        }
    }

    /// Content-derived coloring with a caller-supplied stable digest.
    pub fn content_derived(n_colors: u32, digest: impl Fn(&[u8]) -> u64 + Send + Sync + 'static) -> Self {
        assert!(n_colors >= 1, "need at least one color");
        Self::ContentDerived {
            n_colors,
            digest: Box::new(digest),
        }
    }

    pub fn n_colors(&self) -> u32 {
        match self {
            Self::SchedulerRandom { n_colors, .. } | Self::ContentDerived { n_colors, .. } => *n_colors,
        }
    }

    /// Next color. `identity` is the block content in content-derived mode
    /// and ignored otherwise.
    pub fn assign_color(&mut self, identity: &[u8]) -> Color {
        match self {
            Self::SchedulerRandom { n_colors, rng } => rng.gen_range(0..*n_colors),
            Self::ContentDerived { n_colors, digest } => (digest(identity) % *n_colors as u64) as Color,
        }
    }
}

/// A vertex of a closed minor: the virtual source, a block, or the virtual sink.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum MinorVertex {
    Source,
    Block(BlockId),
    Sink,
}

impl MinorVertex {
    pub fn block(self) -> Option<BlockId> {
        match self {
            Self::Block(b) => Some(b),
            _ => None,
        }
    }
}

impl fmt::Display for MinorVertex {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Self::Source => f.write_str("b0"),
            Self::Block(b) => write!(f, "{b}"),
            Self::Sink => f.write_str("b*"),
        }
    }
}

#[derive(Clone, Debug)]
pub(crate) struct MinorNode {
    /// Insertion index in the dag the minor was built from.
    pub(crate) block: usize,
    pub(crate) id: BlockId,
    pub(crate) parents: SmallVec<[u32; 2]>,
    pub(crate) children: SmallVec<[u32; 2]>,
    pub(crate) depth: u32,
}

/// The closed minor of one color. The virtual source is the parent of every
/// node without minor parents and the virtual sink the child of every node
/// without minor children; neither is stored.
#[derive(Clone, Debug)]
pub struct MinorDag {
    color: Color,
    pub(crate) nodes: Vec<MinorNode>,
    by_id: HashMap<BlockId, u32>,
}

impl MinorDag {
    fn empty(color: Color) -> Self {
        Self {
            color,
            nodes: Vec::new(),
            by_id: HashMap::new(),
        }
    }

    pub fn color(&self) -> Color {
        self.color
    }

    /// Number of real (non-virtual) nodes.
    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn contains(&self, b: BlockId) -> bool {
        self.by_id.contains_key(&b)
    }

    /// Blocks in topological order.
    pub fn blocks(&self) -> impl Iterator<Item = BlockId> + '_ {
        self.nodes.iter().map(|n| n.id)
    }

    /// Longest-path length from the virtual source; the source itself is 0.
    pub fn minor_depth(&self, v: MinorVertex) -> Result<u32, DagError> {
        match v {
            MinorVertex::Source => Ok(0),
            MinorVertex::Block(b) => Ok(self.nodes[self.local(b)?].depth),
            MinorVertex::Sink => Ok(self.max_depth() + 1),
        }
    }

    pub fn depth_of(&self, b: BlockId) -> Result<u32, DagError> {
        self.minor_depth(MinorVertex::Block(b))
    }

    /// Depth of the deepest real node, 0 for an empty minor.
    pub fn max_depth(&self) -> u32 {
        self.nodes.iter().map(|n| n.depth).max().unwrap_or(0)
    }

    /// Parents in the closed minor.
    pub fn parents(&self, v: MinorVertex) -> Result<Vec<MinorVertex>, DagError> {
        Ok(match v {
            MinorVertex::Source => Vec::new(),
            MinorVertex::Block(b) => {
                let n = &self.nodes[self.local(b)?];
                if n.parents.is_empty() {
                    vec![MinorVertex::Source]
                } else {
                    n.parents.iter().map(|&p| self.vertex(p)).collect()
                }
            }
            MinorVertex::Sink => {
                if self.nodes.is_empty() {
                    vec![MinorVertex::Source]
                } else {
                    self.nodes
                        .iter()
                        .filter(|n| n.children.is_empty())
                        .map(|n| MinorVertex::Block(n.id))
                        .collect()
                }
            }
        })
    }

    /// Children in the closed minor.
    pub fn children(&self, v: MinorVertex) -> Result<Vec<MinorVertex>, DagError> {
        Ok(match v {
            MinorVertex::Source => {
                if self.nodes.is_empty() {
                    vec![MinorVertex::Sink]
                } else {
                    self.nodes
                        .iter()
                        .filter(|n| n.parents.is_empty())
                        .map(|n| MinorVertex::Block(n.id))
                        .collect()
                }
            }
            MinorVertex::Block(b) => {
                let n = &self.nodes[self.local(b)?];
                if n.children.is_empty() {
                    vec![MinorVertex::Sink]
                } else {
                    n.children.iter().map(|&c| self.vertex(c)).collect()
                }
            }
            MinorVertex::Sink => Vec::new(),
        })
    }

    /// Edges between real nodes (virtual edges excluded).
    pub fn edges(&self) -> Vec<(BlockId, BlockId)> {
        let mut out = Vec::new();
        for n in &self.nodes {
            for &c in &n.children {
                out.push((n.id, self.nodes[c as usize].id));
            }
        }
        out
    }

    /// Minor nodes written as dag records whose parents are minor parents;
    /// roots point at `source_id`.
    pub fn to_jsonl(&self, dag: &BlockDag) -> String {
        let mut out = String::new();
        for n in &self.nodes {
            let mut rec = BlockRecord::from(dag.block_at(n.block));
            rec.parents = if n.parents.is_empty() {
                vec![dag.genesis()]
            } else {
                n.parents.iter().map(|&p| self.nodes[p as usize].id).collect()
            };
            out.push_str(&serde_json::to_string(&rec).expect("record serializes"));
            out.push('\n');
        }
        out
    }

    fn vertex(&self, local: u32) -> MinorVertex {
        MinorVertex::Block(self.nodes[local as usize].id)
    }

    pub(crate) fn local(&self, b: BlockId) -> Result<usize, DagError> {
        self.by_id.get(&b).map(|&i| i as usize).ok_or(DagError::UnknownBlock(b))
    }

    /// Strict minor ancestry between two local nodes.
    pub(crate) fn is_ancestor_local(&self, a: u32, b: u32) -> bool {
        let target = self.nodes[a as usize].depth;
        if target >= self.nodes[b as usize].depth {
            return false;
        }
        let mut stack: Vec<u32> = self.nodes[b as usize].parents.to_vec();
        let mut seen: SmallVec<[u32; 16]> = SmallVec::new();
        while let Some(x) = stack.pop() {
            if x == a {
                return true;
            }
            if self.nodes[x as usize].depth <= target || x < a || seen.contains(&x) {
                continue;
            }
            seen.push(x);
            stack.extend(self.nodes[x as usize].parents.iter().copied());
        }
        false
    }

    fn push_node(&mut self, block: usize, id: BlockId, parents: SmallVec<[u32; 2]>) -> u32 {
        let local = self.nodes.len() as u32;
        let depth = 1 + parents.iter().map(|&p| self.nodes[p as usize].depth).max().unwrap_or(0);
        for &p in &parents {
            self.nodes[p as usize].children.push(local);
        }
        self.nodes.push(MinorNode {
            block,
            id,
            parents,
            children: SmallVec::new(),
            depth,
        });
        self.by_id.insert(id, local);
        local
    }
}

type Frontier = SmallVec<[u32; 2]>;

/// Incremental builder for one color's minor.
#[derive(Clone, Debug)]
struct ColorSweep {
    minor: MinorDag,
    frontier: Vec<Frontier>,
}

impl ColorSweep {
    fn new(color: Color) -> Self {
        Self {
            minor: MinorDag::empty(color),
            frontier: Vec::new(),
        }
    }

    fn push(&mut self, dag: &BlockDag, v: usize) {
        debug_assert_eq!(v, self.frontier.len());
        let parents = dag.parents_at(v);
        let merged = match parents {
            [] => Frontier::new(),
            [p] => self.frontier[*p].clone(),
            _ => {
                let mut all = Frontier::new();
                for &p in parents {
                    for &x in &self.frontier[p] {
                        if !all.contains(&x) {
                            all.push(x);
                        }
                    }
                }
                self.maximal(all)
            }
        };
        if dag.color_at(v) == Some(self.minor.color) {
            let local = self.minor.push_node(v, dag.id_at(v), merged);
            self.frontier.push(smallvec::smallvec![local]);
        } else {
            self.frontier.push(merged);
        }
    }

    fn maximal(&self, set: Frontier) -> Frontier {
        if set.len() < 2 {
            return set;
        }
        set.iter()
            .copied()
            .filter(|&x| !set.iter().any(|&y| y != x && self.minor.is_ancestor_local(x, y)))
            .collect()
    }
}

/// Closed minor of color `c`. An absent color yields the bare source-sink graph.
pub fn build_minor(dag: &BlockDag, c: Color) -> MinorDag {
    let mut sweep = ColorSweep::new(c);
    for v in 0..dag.len() {
        sweep.push(dag, v);
    }
    sweep.minor
}

/// Minors for every color, kept current as the dag grows.
#[derive(Clone, Debug)]
pub struct Minors {
    sweeps: Vec<ColorSweep>,
    /// Color and minor-local index per dag insertion index.
    located: Vec<Option<(Color, u32)>>,
    processed: usize,
}

impl Minors {
    pub fn new(n_colors: u32) -> Self {
        Self {
            sweeps: (0..n_colors).map(ColorSweep::new).collect(),
            located: Vec::new(),
            processed: 0,
        }
    }

    pub fn build(dag: &BlockDag, n_colors: u32) -> Self {
        let mut m = Self::new(n_colors);
        m.catch_up(dag);
        m
    }

    /// Absorbs every dag block appended since the last call.
    pub fn catch_up(&mut self, dag: &BlockDag) {
        for v in self.processed..dag.len() {
            for s in &mut self.sweeps {
                s.push(dag, v);
            }
            let at = dag
                .color_at(v)
                .filter(|&c| (c as usize) < self.sweeps.len())
                .map(|c| (c, self.sweeps[c as usize].minor.len() as u32 - 1));
            self.located.push(at);
        }
        self.processed = dag.len();
    }

    pub fn n_colors(&self) -> u32 {
        self.sweeps.len() as u32
    }

    pub fn minor(&self, c: Color) -> &MinorDag {
        &self.sweeps[c as usize].minor
    }

    pub fn iter(&self) -> impl Iterator<Item = &MinorDag> {
        self.sweeps.iter().map(|s| &s.minor)
    }

    /// Color and minor-local index of the block at dag index `v`.
    pub(crate) fn locate(&self, v: usize) -> Option<(Color, u32)> {
        self.located[v]
    }

    /// Minor depth of the block at dag index `v`, if it belongs to a minor.
    pub(crate) fn depth_at(&self, v: usize) -> Option<u32> {
        self.located[v].map(|(c, l)| self.sweeps[c as usize].minor.nodes[l as usize].depth)
    }
}
