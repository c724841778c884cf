//! Canonical paths, acceptability, forks and the 0/1 block reward.
//!
//! All four are evaluated per color minor. Acceptability is decided exactly:
//! with weight `-1` on canonical-path nodes and `+1` elsewhere, the symmetric
//! difference between a source-to-sink path `P` and the canonical path `P*`
//! is `|P*| + w(P)`. A forward and a backward minimum-weight pass therefore
//! give, for every node, the smallest symmetric difference of any path
//! through it, together with a path achieving it.
//!
//! Evaluation can be restricted to a down-closed subset of the dag (a miner's
//! view) with a membership mask over dag insertion indices. Down-closed
//! subsets have the same minor edges and depths as the full dag restricted to
//! their members, so one set of minors serves every view.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::dag::{BlockDag, BlockId, Color, DagError, MinerIndex};
use crate::minor::{build_minor, MinorDag, MinorVertex, Minors};
use crate::sim::History;

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum RewardError {
    #[error("unknown block {0}")]
    UnknownBlock(BlockId),
    #[error("block {0} has no color; virtual and genesis blocks carry no reward")]
    NoColor(BlockId),
    #[error("block {0} is not acceptable")]
    NotAcceptable(BlockId),
    #[error("unknown miner {0}")]
    UnknownMiner(MinerIndex),
    #[error("miner {miner} is not active before round {first_round} (asked for round {round})")]
    InactiveMiner {
        miner: MinerIndex,
        round: u64,
        first_round: u64,
    },
}

impl From<DagError> for RewardError {
    fn from(e: DagError) -> Self {
        match e {
            DagError::UnknownBlock(b) | DagError::UnknownParent(b) => Self::UnknownBlock(b),
            other => unreachable!("lookup returned {other}"),
        }
    }
}

/// Longest source-to-sink path of a closed minor with minimal-id tie-breaks.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct CanonicalPath {
    pub color: Color,
    pub blocks: Vec<MinorVertex>,
    /// Edge count, one less than `blocks.len()`.
    pub length: usize,
}

impl CanonicalPath {
    /// The path without its virtual endpoints.
    pub fn real_blocks(&self) -> Vec<BlockId> {
        self.blocks.iter().filter_map(|v| v.block()).collect()
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Acceptability {
    pub acceptable: bool,
    /// Smallest symmetric difference with the canonical path over all
    /// source-to-sink paths through the block.
    pub min_symmetric_difference: u32,
    /// A path achieving the minimum, virtual endpoints omitted. Present iff
    /// acceptable.
    pub witness: Option<Vec<BlockId>>,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct RewardReport {
    pub block: BlockId,
    pub color: Color,
    pub minor_depth: u32,
    pub acceptable: bool,
    /// Real blocks of a witness path; the virtual endpoints are implied.
    pub witness: Option<Vec<BlockId>>,
    pub forked: bool,
    pub reward: u8,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct UtilityReport {
    pub miner: MinerIndex,
    pub round: u64,
    pub numerator: u64,
    pub denominator: u64,
    /// `None` when nothing was paid out in the window ("no revenue").
    pub utility: Option<f64>,
}

/// Canonical path of the kept part of a minor as local indices, real nodes
/// only: greedy along longest paths, smallest id at every divergence.
pub(crate) fn canonical_nodes(minor: &MinorDag, kept: &[bool]) -> Vec<u32> {
    let nodes = &minor.nodes;
    let n = nodes.len();
    // Number of nodes on a longest path from each node to the sink.
    let mut height = vec![0u32; n];
    for i in (0..n).rev() {
        if !kept[i] {
            continue;
        }
        height[i] = 1 + nodes[i]
            .children
            .iter()
            .filter(|&&c| kept[c as usize])
            .map(|&c| height[c as usize])
            .max()
            .unwrap_or(0);
    }

    let pick = |candidates: &mut dyn Iterator<Item = u32>, want: u32| -> Option<u32> {
        candidates
            .filter(|&c| kept[c as usize] && height[c as usize] == want)
            .min_by_key(|&c| nodes[c as usize].id)
    };
    let mut path = Vec::new();
    let top = (0..n)
        .filter(|&i| kept[i] && nodes[i].parents.is_empty())
        .map(|i| height[i])
        .max();
    if let Some(top) = top {
        let mut cur = pick(
            &mut (0..n as u32).filter(|&i| nodes[i as usize].parents.is_empty()),
            top,
        );
        while let Some(c) = cur {
            path.push(c);
            let h = height[c as usize];
            cur = if h == 1 {
                None
            } else {
                pick(&mut nodes[c as usize].children.iter().copied(), h - 1)
            };
        }
    }
    path
}

/// Evaluation of one color minor, optionally restricted to a down-closed
/// member mask. Vectors are indexed by minor-local node.
#[derive(Clone, Debug)]
pub(crate) struct ColorEvaluation {
    pub(crate) kept: Vec<bool>,
    /// Canonical path, real nodes only, as local indices.
    pub(crate) path: Vec<u32>,
    on_path: Vec<bool>,
    fwd: Vec<i32>,
    bwd: Vec<i32>,
    pub(crate) symdiff: Vec<u32>,
    pub(crate) acceptable: Vec<bool>,
    pub(crate) forked: Vec<bool>,
}

impl ColorEvaluation {
    pub(crate) fn compute(minor: &MinorDag, keep: Option<&[bool]>, n_l: u32) -> Self {
        let nodes = &minor.nodes;
        let n = nodes.len();
        let kept: Vec<bool> = match keep {
            Some(mask) => nodes.iter().map(|x| mask[x.block]).collect(),
            None => vec![true; n],
        };

        let path = canonical_nodes(minor, &kept);
        let mut on_path = vec![false; n];
        for &p in &path {
            on_path[p as usize] = true;
        }
        let w = |i: usize| if on_path[i] { -1 } else { 1 };

        let mut fwd = vec![0i32; n];
        for i in 0..n {
            if !kept[i] {
                continue;
            }
            debug_assert!(
                nodes[i].parents.iter().all(|&p| kept[p as usize]),
                "mask not down-closed"
            );
            fwd[i] = w(i) + nodes[i].parents.iter().map(|&p| fwd[p as usize]).min().unwrap_or(0);
        }
        let mut bwd = vec![0i32; n];
        for i in (0..n).rev() {
            if !kept[i] {
                continue;
            }
            bwd[i] = w(i)
                + nodes[i]
                    .children
                    .iter()
                    .filter(|&&c| kept[c as usize])
                    .map(|&c| bwd[c as usize])
                    .min()
                    .unwrap_or(0);
        }

        let base = path.len() as i32;
        let mut symdiff = vec![u32::MAX; n];
        let mut acceptable = vec![false; n];
        for i in 0..n {
            if kept[i] {
                let s = base + fwd[i] + bwd[i] - w(i);
                debug_assert!(s >= 0);
                symdiff[i] = s as u32;
                acceptable[i] = (s as u32) < n_l;
            }
        }

        let max_depth = nodes.iter().map(|x| x.depth).max().unwrap_or(0) as usize;
        let mut per_depth = vec![0u32; max_depth + 1];
        for i in 0..n {
            if acceptable[i] {
                per_depth[nodes[i].depth as usize] += 1;
            }
        }
        let forked = (0..n)
            .map(|i| acceptable[i] && per_depth[nodes[i].depth as usize] > 1)
            .collect();

        Self {
            kept,
            path,
            on_path,
            fwd,
            bwd,
            symdiff,
            acceptable,
            forked,
        }
    }

    pub(crate) fn reward(&self, local: usize) -> u8 {
        u8::from(self.acceptable[local] && !self.forked[local])
    }

    fn weight(&self, i: usize) -> i32 {
        if self.on_path[i] {
            -1
        } else {
            1
        }
    }

    /// A minimum-symmetric-difference path through `local`, ties to min id.
    pub(crate) fn witness(&self, minor: &MinorDag, local: usize) -> Vec<BlockId> {
        let nodes = &minor.nodes;
        let mut before = Vec::new();
        let mut cur = local;
        while !nodes[cur].parents.is_empty() {
            let want = self.fwd[cur] - self.weight(cur);
            let next = nodes[cur]
                .parents
                .iter()
                .map(|&p| p as usize)
                .filter(|&p| self.fwd[p] == want)
                .min_by_key(|&p| nodes[p].id)
                .expect("forward minimum has an attaining parent");
            before.push(nodes[next].id);
            cur = next;
        }
        before.reverse();
        before.push(nodes[local].id);
        let mut cur = local;
        loop {
            let want = self.bwd[cur] - self.weight(cur);
            let next = nodes[cur]
                .children
                .iter()
                .map(|&c| c as usize)
                .filter(|&c| self.kept[c] && self.bwd[c] == want)
                .min_by_key(|&c| nodes[c].id);
            match next {
                Some(c) => {
                    before.push(nodes[c].id);
                    cur = c;
                }
                None => break,
            }
        }
        before
    }

    pub(crate) fn canonical(&self, minor: &MinorDag) -> CanonicalPath {
        let mut blocks = vec![MinorVertex::Source];
        blocks.extend(
            self.path
                .iter()
                .map(|&p| MinorVertex::Block(minor.nodes[p as usize].id)),
        );
        blocks.push(MinorVertex::Sink);
        CanonicalPath {
            color: minor.color(),
            length: blocks.len() - 1,
            blocks,
        }
    }
}

/// Canonical path of a closed minor.
pub fn canonical_path(minor: &MinorDag) -> CanonicalPath {
    ColorEvaluation::compute(minor, None, 1).canonical(minor)
}

fn colored_minor(dag: &BlockDag, b: BlockId) -> Result<(MinorDag, usize), RewardError> {
    let block = dag.block(b)?;
    let c = block.color().ok_or(RewardError::NoColor(b))?;
    let minor = build_minor(dag, c);
    let local = minor.local(b)?;
    Ok((minor, local))
}

/// Whether `b` lies on a source-to-sink path of its color minor whose
/// symmetric difference with the canonical path has fewer than `n_l` blocks.
pub fn is_acceptable(dag: &BlockDag, b: BlockId, n_l: u32) -> Result<Acceptability, RewardError> {
    let (minor, local) = colored_minor(dag, b)?;
    let ev = ColorEvaluation::compute(&minor, None, n_l);
    let acceptable = ev.acceptable[local];
    Ok(Acceptability {
        acceptable,
        min_symmetric_difference: ev.symdiff[local],
        witness: acceptable.then(|| ev.witness(&minor, local)),
    })
}

/// Whether another acceptable block of `b`'s color has the same minor depth.
pub fn is_forked(dag: &BlockDag, b: BlockId, n_l: u32) -> Result<bool, RewardError> {
    let (minor, local) = colored_minor(dag, b)?;
    let ev = ColorEvaluation::compute(&minor, None, n_l);
    if !ev.acceptable[local] {
        return Err(RewardError::NotAcceptable(b));
    }
    Ok(ev.forked[local])
}

pub fn reward(dag: &BlockDag, b: BlockId, n_l: u32) -> Result<RewardReport, RewardError> {
    let (minor, local) = colored_minor(dag, b)?;
    let ev = ColorEvaluation::compute(&minor, None, n_l);
    Ok(report(&minor, &ev, local))
}

fn report(minor: &MinorDag, ev: &ColorEvaluation, local: usize) -> RewardReport {
    let acceptable = ev.acceptable[local];
    RewardReport {
        block: minor.nodes[local].id,
        color: minor.color(),
        minor_depth: minor.nodes[local].depth,
        acceptable,
        witness: acceptable.then(|| ev.witness(minor, local)),
        forked: ev.forked[local],
        reward: ev.reward(local),
    }
}

/// Rewards of every block of a dag (or of a down-closed part of it), all
/// colors evaluated once.
pub struct RewardBook<'a> {
    dag: &'a BlockDag,
    minors: &'a Minors,
    colors: Vec<ColorEvaluation>,
    keep: Option<&'a [bool]>,
}

impl<'a> RewardBook<'a> {
    /// `keep` must be a down-closed membership mask over dag insertion
    /// indices, or `None` for the whole dag. `minors` must be current.
    pub fn new(dag: &'a BlockDag, minors: &'a Minors, keep: Option<&'a [bool]>, n_l: u32) -> Self {
        let colors = minors.iter().map(|m| ColorEvaluation::compute(m, keep, n_l)).collect();
        Self {
            dag,
            minors,
            colors,
            keep,
        }
    }

    /// Reward of the block at insertion index `v`; `None` for uncolored or
    /// excluded blocks.
    pub(crate) fn reward_at(&self, v: usize) -> Option<u8> {
        let (c, local) = self.minors.locate(v)?;
        let ev = &self.colors[c as usize];
        ev.kept[local as usize].then(|| ev.reward(local as usize))
    }

    /// Whether the block at insertion index `v` is a kept, acceptable block.
    pub(crate) fn acceptable_at(&self, v: usize) -> bool {
        self.minors.locate(v).is_some_and(|(c, local)| {
            let ev = &self.colors[c as usize];
            ev.kept[local as usize] && ev.acceptable[local as usize]
        })
    }

    pub fn report(&self, b: BlockId) -> Result<RewardReport, RewardError> {
        let v = self.dag.idx(b)?;
        if let Some(mask) = self.keep {
            if !mask[v] {
                return Err(RewardError::UnknownBlock(b));
            }
        }
        let (c, local) = self.minors.locate(v).ok_or(RewardError::NoColor(b))?;
        Ok(report(self.minors.minor(c), &self.colors[c as usize], local as usize))
    }

    /// Reports for every colored member in insertion order.
    pub fn reports(&self) -> Vec<RewardReport> {
        (0..self.dag.len())
            .filter(|&v| self.keep.is_none_or(|m| m[v]))
            .filter_map(|v| self.minors.locate(v))
            .map(|(c, local)| report(self.minors.minor(c), &self.colors[c as usize], local as usize))
            .collect()
    }

    pub fn canonical_path(&self, c: Color) -> CanonicalPath {
        self.colors[c as usize].canonical(self.minors.minor(c))
    }
}

/// Miner `miner`'s normalized share of the revenue paid in its active
/// window, as seen in its own view at round `t`.
///
/// Both sums run over blocks published in `[T1, min(t, T2)]`; the numerator
/// keeps only the miner's own blocks.
pub fn utility(history: &History, miner: MinerIndex, t: u64, n_l: u32) -> Result<UtilityReport, RewardError> {
    let cfg = history
        .config()
        .miners
        .get(miner)
        .ok_or(RewardError::UnknownMiner(miner))?;
    let (t1, t2) = cfg.active_window(history.config().t_max);
    if t < t1 {
        return Err(RewardError::InactiveMiner {
            miner,
            round: t,
            first_round: t1,
        });
    }
    let mask = history
        .view_mask(miner, t)
        .map_err(|_| RewardError::UnknownMiner(miner))?;
    let dag = history.dag();
    let book = RewardBook::new(dag, history.minors(), Some(&mask), n_l);
    let end = t.min(t2);
    let (mut numerator, mut denominator) = (0u64, 0u64);
    for v in 0..dag.len() {
        if !mask[v] {
            continue;
        }
        let Some(published) = history.published_at(v) else {
            continue;
        };
        if published < t1 || published > end {
            continue;
        }
        let Some(r) = book.reward_at(v) else { continue };
        denominator += r as u64;
        if dag.block_at(v).meta.miner == Some(miner) {
            numerator += r as u64;
        }
    }
    Ok(UtilityReport {
        miner,
        round: t,
        numerator,
        denominator,
        utility: (denominator > 0).then(|| numerator as f64 / denominator as f64),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::fixtures::{figure_one, NamedDag, BLUE};
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    /// Diamond: two incomparable color-0 blocks x (smaller id) and y.
    fn diamond() -> NamedDag {
        let mut f = NamedDag::new();
        f.add("x", 0, &["genesis"]);
        f.add("y", 0, &["genesis"]);
        f
    }

    #[test]
    fn empty_minor_path() {
        let f = figure_one();
        let p = canonical_path(&build_minor(&f.dag, 9));
        assert_eq!(p.blocks, vec![MinorVertex::Source, MinorVertex::Sink]);
        assert_eq!(p.length, 1);
    }

    #[test]
    fn figure_one_blue_path() {
        let f = figure_one();
        let p = canonical_path(&build_minor(&f.dag, BLUE));
        assert_eq!(f.names(&p.real_blocks()), ["B1", "B2", "B3"]);
        assert_eq!(p.length, 4);
    }

    #[test]
    fn diamond_tie_break_and_acceptability() {
        let f = diamond();
        let p = canonical_path(&build_minor(&f.dag, 0));
        assert_eq!(f.names(&p.real_blocks()), ["x"]);
        let y = f.id("y");
        let a = is_acceptable(&f.dag, y, 3).unwrap();
        assert!(a.acceptable);
        assert_eq!(a.min_symmetric_difference, 2);
        assert_eq!(a.witness, Some(vec![y]));
        assert!(!is_acceptable(&f.dag, y, 2).unwrap().acceptable);
        // On the canonical path: witness is the path itself.
        let a = is_acceptable(&f.dag, f.id("x"), 1).unwrap();
        assert_eq!(a.witness, Some(vec![f.id("x")]));
    }

    #[test]
    fn figure_one_all_rewarded() {
        let f = figure_one();
        for b in f.dag.blocks().skip(1) {
            let r = reward(&f.dag, b.id, 2).unwrap();
            assert_eq!(r.reward, 1, "{}", f.name(b.id));
            assert!(!is_forked(&f.dag, b.id, 2).unwrap());
        }
        assert_eq!(
            reward(&f.dag, f.dag.genesis(), 2).unwrap_err(),
            RewardError::NoColor(f.dag.genesis())
        );
        assert_eq!(
            reward(&f.dag, BlockId(77), 2).unwrap_err(),
            RewardError::UnknownBlock(BlockId(77))
        );
    }

    #[test]
    fn same_depth_rivals_are_forked() {
        let mut f = figure_one();
        f.add("X1", BLUE, &["B3"]);
        f.add("X2", BLUE, &["B3"]);
        for name in ["X1", "X2"] {
            let id = f.id(name);
            assert!(is_acceptable(&f.dag, id, 3).unwrap().acceptable);
            assert!(is_forked(&f.dag, id, 3).unwrap());
            assert_eq!(reward(&f.dag, id, 3).unwrap().reward, 0);
        }
    }

    #[test]
    fn unacceptable_rival_does_not_fork() {
        // Blue chain of depth 5 plus a rival hanging directly off the source.
        let mut f = NamedDag::new();
        let mut prev = "genesis".to_string();
        for k in 1..=5 {
            let name = format!("B{k}");
            f.add(&name, BLUE, &[&prev]);
            prev = name;
        }
        f.add("R", BLUE, &["genesis"]);
        let n_l = 3;
        // Chain depth 5 >= N_l + 2.
        let rival = reward(&f.dag, f.id("R"), n_l).unwrap();
        assert!(!rival.acceptable);
        assert_eq!(rival.reward, 0);
        assert_eq!(
            is_forked(&f.dag, f.id("R"), n_l).unwrap_err(),
            RewardError::NotAcceptable(f.id("R"))
        );
        let b1 = f.id("B1");
        assert!(!is_forked(&f.dag, b1, n_l).unwrap());
        assert_eq!(reward(&f.dag, b1, n_l).unwrap().reward, 1);
    }

    /// Acceptability as the anchored single-segment test: b1 is the deepest
    /// canonical ancestor of b, b2 the shallowest canonical descendant, and
    /// only a shortest b1-b-b2 detour is compared against the canonical
    /// segment between them.
    fn anchored_segment_test(dag: &BlockDag, b: BlockId, n_l: u32) -> bool {
        let minor = build_minor(dag, dag.block(b).unwrap().color().unwrap());
        let ev = ColorEvaluation::compute(&minor, None, n_l);
        let local = minor.local(b).unwrap();
        if ev.on_path[local] {
            return true;
        }
        let nodes = &minor.nodes;
        let path: Vec<usize> = ev.path.iter().map(|&p| p as usize).collect();
        let anc = |a: usize, d: usize| minor.is_ancestor_local(a as u32, d as u32);
        // Positions on the path; -1 is the source and len the sink.
        let p1: isize = path.iter().rposition(|&p| anc(p, local)).map_or(-1, |x| x as isize);
        let p2: isize = path
            .iter()
            .position(|&p| anc(local, p))
            .map_or(path.len() as isize, |x| x as isize);
        // Shortest hop counts through the minor restricted to real nodes.
        let hops_from = |start: Option<usize>| -> Vec<u32> {
            let mut d = vec![u32::MAX; nodes.len()];
            for i in 0..nodes.len() {
                let base = if nodes[i].parents.is_empty() && start.is_none() {
                    Some(1)
                } else {
                    None
                };
                let via = nodes[i].parents.iter().filter_map(|&p| {
                    let dp = if Some(p as usize) == start { 0 } else { d[p as usize] };
                    (dp != u32::MAX).then(|| dp + 1)
                });
                d[i] = base.into_iter().chain(via).min().unwrap_or(u32::MAX);
            }
            d
        };
        let from1 = hops_from(if p1 < 0 { None } else { Some(path[p1 as usize]) });
        let into_b = from1[local];
        let from_b = hops_from(Some(local));
        let out_b = if p2 as usize == path.len() {
            // Hops to the sink: one past any node without children.
            (0..nodes.len())
                .filter(|&i| (i == local || from_b[i] != u32::MAX) && nodes[i].children.is_empty())
                .map(|i| if i == local { 1 } else { from_b[i] + 1 })
                .min()
                .unwrap()
        } else {
            from_b[path[p2 as usize]]
        };
        let detour = (into_b + out_b - 1) as i64;
        let segment = (p2 - p1 - 1) as i64;
        detour + segment < n_l as i64
    }

    #[test]
    fn anchored_segment_test_misses_a_cheaper_detour() {
        // Canonical chain a b1 c1..c6. Block b hangs below b1 through the
        // long side chain x1..x4 and below a through the single block y.
        // b's deepest canonical ancestor is b1, but leaving at a is cheaper.
        let mut f = NamedDag::new();
        f.add("a", 0, &["genesis"]);
        f.add("b1", 0, &["a"]);
        let mut prev = "b1".to_string();
        for k in 1..=6 {
            let name = format!("c{k}");
            f.add(&name, 0, &[&prev]);
            prev = name;
        }
        f.add("x1", 0, &["b1"]);
        f.add("x2", 0, &["x1"]);
        f.add("x3", 0, &["x2"]);
        f.add("x4", 0, &["x3"]);
        f.add("y", 0, &["a"]);
        f.add("b", 0, &["x4", "y"]);
        let b = f.id("b");
        let p = canonical_path(&build_minor(&f.dag, 0));
        assert_eq!(
            f.names(&p.real_blocks()),
            ["a", "b1", "c1", "c2", "c3", "c4", "c5", "c6"]
        );
        // Path a y b: two extra blocks, seven missing.
        let exact = is_acceptable(&f.dag, b, 10).unwrap();
        assert_eq!(exact.min_symmetric_difference, 9);
        assert_eq!(brute_min_symdiff(&f.dag, b), 9);
        assert!(exact.acceptable);
        assert_eq!(f.names(&exact.witness.unwrap()), ["a", "y", "b"]);
        // The anchored detour b1 x1..x4 b costs 5 + 6.
        assert!(!anchored_segment_test(&f.dag, b, 10));
        assert!(anchored_segment_test(&f.dag, b, 12));
    }

    /// All source-to-sink paths of the closed minor, real nodes only.
    fn all_paths(minor: &MinorDag) -> Vec<Vec<usize>> {
        let nodes = &minor.nodes;
        let mut out = Vec::new();
        let mut stack: Vec<Vec<usize>> = (0..nodes.len())
            .filter(|&i| nodes[i].parents.is_empty())
            .map(|i| vec![i])
            .collect();
        if nodes.is_empty() {
            return vec![vec![]];
        }
        while let Some(p) = stack.pop() {
            let last = *p.last().unwrap();
            if nodes[last].children.is_empty() {
                out.push(p);
            } else {
                for &c in &nodes[last].children {
                    let mut q = p.clone();
                    q.push(c as usize);
                    stack.push(q);
                }
            }
        }
        out
    }

    fn brute_min_symdiff(dag: &BlockDag, b: BlockId) -> u32 {
        let minor = build_minor(dag, dag.block(b).unwrap().color().unwrap());
        let paths = all_paths(&minor);
        let longest = paths.iter().map(|p| p.len()).max().unwrap();
        let ids = |p: &Vec<usize>| p.iter().map(|&i| minor.nodes[i].id).collect::<Vec<_>>();
        let canon = paths.iter().filter(|p| p.len() == longest).map(ids).min().unwrap();
        let local = minor.local(b).unwrap();
        paths
            .iter()
            .filter(|p| p.contains(&local))
            .map(|p| {
                let q = ids(p);
                (q.iter().filter(|x| !canon.contains(x)).count() + canon.iter().filter(|x| !q.contains(x)).count())
                    as u32
            })
            .min()
            .unwrap()
    }

    fn random_dag(seed: u64, blocks: usize, colors: u32) -> BlockDag {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut dag = BlockDag::new();
        for _ in 0..blocks {
            let n = dag.len();
            let k = rng.gen_range(1..=3.min(n));
            let mut parents: Vec<BlockId> = Vec::new();
            for _ in 0..k {
                let lo = n.saturating_sub(6);
                let cand = BlockId(rng.gen_range(lo..n) as u64);
                if !parents.contains(&cand) {
                    parents.push(cand);
                }
            }
            // Drop parents that are ancestors of other parents.
            let keep: Vec<BlockId> = parents
                .iter()
                .copied()
                .filter(|&p| !parents.iter().any(|&q| q != p && dag.is_ancestor(p, q).unwrap()))
                .collect();
            dag.add_block(&keep, crate::dag::BlockMeta::colored(rng.gen_range(0..colors)))
                .unwrap();
        }
        dag
    }

    #[test]
    fn canonical_path_is_minimal_longest_sequence() {
        for seed in 0..50 {
            let dag = random_dag(seed, 24, 2);
            for c in 0..2 {
                let minor = build_minor(&dag, c);
                let paths = all_paths(&minor);
                let longest = paths.iter().map(|p| p.len()).max().unwrap();
                let best = paths
                    .iter()
                    .filter(|p| p.len() == longest)
                    .map(|p| p.iter().map(|&i| minor.nodes[i].id).collect::<Vec<_>>())
                    .min()
                    .unwrap();
                assert_eq!(canonical_path(&minor).real_blocks(), best, "seed {seed} color {c}");
            }
        }
    }

    #[test]
    fn exact_matches_enumeration_on_small_dags() {
        for seed in 0..60 {
            let dag = random_dag(1000 + seed, 20, 2);
            for b in dag.blocks().skip(1) {
                let exact = is_acceptable(&dag, b.id, 1).unwrap().min_symmetric_difference;
                assert_eq!(exact, brute_min_symdiff(&dag, b.id), "seed {seed} block {}", b.id);
            }
        }
    }

    #[test]
    fn witness_attains_minimum() {
        for seed in 0..30 {
            let dag = random_dag(5000 + seed, 20, 2);
            for b in dag.blocks().skip(1) {
                let a = is_acceptable(&dag, b.id, 100).unwrap();
                let w = a.witness.unwrap();
                assert!(w.contains(&b.id));
                let minor = build_minor(&dag, b.meta.color.unwrap());
                let canon = canonical_path(&minor).real_blocks();
                let sd =
                    w.iter().filter(|x| !canon.contains(x)).count() + canon.iter().filter(|x| !w.contains(x)).count();
                assert_eq!(sd as u32, a.min_symmetric_difference);
                for pair in w.windows(2) {
                    assert!(minor
                        .parents(MinorVertex::Block(pair[1]))
                        .unwrap()
                        .contains(&MinorVertex::Block(pair[0])));
                }
            }
        }
    }

    #[test]
    fn masked_evaluation_matches_copied_view() {
        let dag = random_dag(77, 60, 3);
        let minors = Minors::build(&dag, 3);
        let cut = 35;
        let mask: Vec<bool> = (0..dag.len()).map(|v| v <= cut).collect();
        let mut copy = BlockDag::new();
        for b in dag.blocks().skip(1).take(cut) {
            copy.insert(b.id, &b.parents, b.meta.clone()).unwrap();
        }
        let copy_minors = Minors::build(&copy, 3);
        let masked = RewardBook::new(&dag, &minors, Some(&mask), 4).reports();
        let direct = RewardBook::new(&copy, &copy_minors, None, 4).reports();
        assert_eq!(masked, direct);
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(64))]

        #[test]
        fn reward_is_acceptable_and_not_forked(seed in any::<u64>(), n_l in 1u32..6) {
            let dag = random_dag(seed, 30, 3);
            let minors = Minors::build(&dag, 3);
            for r in RewardBook::new(&dag, &minors, None, n_l).reports() {
                prop_assert!(r.reward <= 1);
                prop_assert_eq!(r.reward == 1, r.acceptable && !r.forked);
                prop_assert_eq!(r.witness.is_some(), r.acceptable);
            }
        }

        /// When an extension's canonical path uses only old blocks and is
        /// no longer than before, the choice is unchanged.
        #[test]
        fn canonical_choice_is_stable_under_extension(seed in any::<u64>(), cut in 10usize..30) {
            let full = random_dag(seed, 40, 2);
            let mut part = BlockDag::new();
            for b in full.blocks().skip(1).take(cut) {
                part.insert(b.id, &b.parents, b.meta.clone()).unwrap();
            }
            for c in 0..2 {
                let big = canonical_path(&build_minor(&full, c)).real_blocks();
                let small = canonical_path(&build_minor(&part, c)).real_blocks();
                if big.len() == small.len() && big.iter().all(|b| part.contains(*b)) {
                    prop_assert_eq!(big, small);
                }
            }
        }
    }
}
