//! Checkers over finished histories: natural forks, the safe-history
//! conditions, the ledger desiderata, and deviation experiments.
//!
//! Checkers only report. They never abort on a violation, so they work as
//! diagnostics for adversarial runs too.

use std::collections::HashSet;
use std::ops::Range;

use num_rational::Ratio;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::dag::{BlockId, Color, MinerIndex};
use crate::minor::MinorDag;
use crate::params::ParamTuple;
use crate::reward::{canonical_nodes, utility, RewardBook};
use crate::sim::history::NOT_SEEN;
use crate::sim::{generate_schedule, honest, run_with_schedule, History, SchedulerConfig, SimError, StrategyKind};

/// Examples kept per violation kind; the count is always exact.
const EXAMPLE_CAP: usize = 25;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ViolationLog<T> {
    pub count: u64,
    pub examples: Vec<T>,
}

impl<T> Default for ViolationLog<T> {
    fn default() -> Self {
        Self {
            count: 0,
            examples: Vec::new(),
        }
    }
}

impl<T> ViolationLog<T> {
    fn push(&mut self, v: T) {
        self.count += 1;
        if self.examples.len() < EXAMPLE_CAP {
            self.examples.push(v);
        }
    }

    pub fn is_clean(&self) -> bool {
        self.count == 0
    }
}

/// Whether miner `i` ran the honest strategy.
pub fn honest_miners(history: &History) -> Vec<bool> {
    history.strategies().iter().map(|s| s == "honest").collect()
}

/// Published, same-color, ancestry-incomparable pairs generated less than
/// `Delta` rounds apart. Pairs are ordered by id and sorted.
pub fn natural_forks(history: &History, c: Color) -> Vec<(BlockId, BlockId)> {
    if c >= history.minors().n_colors() {
        return Vec::new();
    }
    let minor = history.minors().minor(c);
    let dag = history.dag();
    let window = history.config().delta;
    let nodes: Vec<(u64, u32)> = minor
        .nodes
        .iter()
        .enumerate()
        .filter(|(_, x)| history.published_at(x.block).is_some())
        .map(|(l, x)| (dag.block_at(x.block).meta.round_created, l as u32))
        .collect();
    let mut out = Vec::new();
    for (a, &(ra, la)) in nodes.iter().enumerate() {
        for &(rb, lb) in &nodes[a + 1..] {
            if rb.abs_diff(ra) >= window {
                break;
            }
            if !minor.is_ancestor_local(la, lb) && !minor.is_ancestor_local(lb, la) {
                let (x, y) = (minor.nodes[la as usize].id, minor.nodes[lb as usize].id);
                out.push((x.min(y), x.max(y)));
            }
        }
    }
    out.sort_unstable();
    out
}

/// Blocks in at least one natural fork, any color.
fn forked_blocks(history: &History) -> HashSet<BlockId> {
    (0..history.minors().n_colors())
        .flat_map(|c| natural_forks(history, c))
        .flat_map(|(a, b)| [a, b])
        .collect()
}

/// Share of published color-`c` blocks that belong to a natural fork.
pub fn natural_fork_fraction(history: &History, c: Color) -> Option<f64> {
    if c >= history.minors().n_colors() {
        return None;
    }
    let published = history
        .minors()
        .minor(c)
        .nodes
        .iter()
        .filter(|x| history.published_at(x.block).is_some())
        .count();
    let forked: HashSet<BlockId> = natural_forks(history, c)
        .into_iter()
        .flat_map(|(a, b)| [a, b])
        .collect();
    (published > 0).then(|| forked.len() as f64 / published as f64)
}

/// A violating interval `[t1, t2]` of generation rounds.
///
/// For the minority condition `count` is the miner's blocks and `total` all
/// color blocks; for forking, forked blocks against color blocks; for color
/// supply, color blocks against the interval length `t2 - t1`.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Violation {
    pub t1: u64,
    pub t2: u64,
    pub miner: Option<MinerIndex>,
    pub count: u64,
    pub total: u64,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ConditionVerdict {
    pub pass: bool,
    /// The violation with the smallest right endpoint.
    pub witness: Option<Violation>,
}

impl ConditionVerdict {
    fn from_witness(witness: Option<Violation>) -> Self {
        Self {
            pass: witness.is_none(),
            witness,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ColorSafety {
    pub color: Color,
    /// No miner generates `1/2 - delta` or more of the color blocks of an
    /// interval holding at least `N_l` of them.
    pub minority: ConditionVerdict,
    /// Intervals of length at least `N_l` lose less than `delta` of their
    /// color blocks to natural forks.
    pub forking: ConditionVerdict,
    /// Intervals of length at least `N_l` hold at least `delta_C` color
    /// blocks per round.
    pub color_supply: ConditionVerdict,
}

impl ColorSafety {
    pub fn pass(&self) -> bool {
        self.minority.pass && self.forking.pass && self.color_supply.pass
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct SafetyVerdict {
    pub pass: bool,
    pub colors: Vec<ColorSafety>,
}

/// Absolute slack granted to the color-supply comparison, which is the only
/// one done in floating point.
const SUPPLY_TOLERANCE: f64 = 1e-9;

/// Per-round facts a safety sweep needs.
struct Rounds {
    t_max: u64,
    /// `(miner, color)` of the block generated in round `t`, index `t`.
    slot: Vec<Option<(MinerIndex, Color)>>,
    /// Whether that block belongs to a natural fork of its color.
    forked: Vec<bool>,
}

impl Rounds {
    fn of(history: &History) -> Self {
        let t_max = history.config().t_max;
        let mut slot = vec![None; t_max as usize + 1];
        let mut forked = vec![false; t_max as usize + 1];
        let forked_ids = forked_blocks(history);
        for b in history.dag().blocks().skip(1) {
            let r = b.meta.round_created as usize;
            if let (Some(m), Some(c)) = (b.meta.miner, b.meta.color) {
                if r < slot.len() {
                    slot[r] = Some((m, c));
                    forked[r] = forked_ids.contains(&b.id);
                }
            }
        }
        Self { t_max, slot, forked }
    }
}

/// Checks the three safe-history conditions for every color, exactly, with
/// prefix sums over rounds `0..=t_max`. Only `N_l`, `delta` and `delta_C`
/// are read from `params`.
pub fn check_safe(history: &History, params: &ParamTuple) -> SafetyVerdict {
    let rounds = Rounds::of(history);
    let colors: Vec<ColorSafety> = (0..history.config().n_colors)
        .map(|c| ColorSafety {
            color: c,
            minority: ConditionVerdict::from_witness(minority_witness(&rounds, history.n_miners(), c, params)),
            forking: ConditionVerdict::from_witness(forking_witness(&rounds, c, params)),
            color_supply: ConditionVerdict::from_witness(supply_witness(&rounds, c, params)),
        })
        .collect();
    SafetyVerdict {
        pass: colors.iter().all(ColorSafety::pass),
        colors,
    }
}

fn minority_witness(rounds: &Rounds, n_miners: usize, c: Color, params: &ParamTuple) -> Option<Violation> {
    let seq: Vec<(u64, MinerIndex)> = rounds
        .slot
        .iter()
        .enumerate()
        .filter_map(|(t, s)| s.filter(|&(_, col)| col == c).map(|(m, _)| (t as u64, m)))
        .collect();
    let n_l = params.n_ell as usize;
    if seq.len() < n_l.max(1) {
        return None;
    }
    // m / n >= 1/2 - dn/dd  <=>  2 dd m - (dd - 2 dn) n >= 0.
    let (dn, dd) = (params.delta.numer() as i128, params.delta.denom() as i128);
    let (hit, miss) = (2 * dd - (dd - 2 * dn), -(dd - 2 * dn));
    let mut best: Option<Violation> = None;
    for i in 0..n_miners {
        if !seq.iter().any(|&(_, m)| m == i) {
            continue;
        }
        // prefix[k] = weight of the first k color blocks.
        let mut prefix = Vec::with_capacity(seq.len() + 1);
        prefix.push(0i128);
        for &(_, m) in &seq {
            prefix.push(prefix.last().unwrap() + if m == i { hit } else { miss });
        }
        let (mut min_val, mut min_at) = (i128::MAX, 0usize);
        for b in n_l.max(1)..=seq.len() {
            let j = b - n_l.max(1);
            if prefix[j] < min_val {
                min_val = prefix[j];
                min_at = j;
            }
            if prefix[b] - min_val >= 0 {
                let t2 = seq[b - 1].0;
                if best.as_ref().is_none_or(|w| t2 < w.t2) {
                    let count = seq[min_at..b].iter().filter(|&&(_, m)| m == i).count() as u64;
                    best = Some(Violation {
                        t1: seq[min_at].0,
                        t2,
                        miner: Some(i),
                        count,
                        total: (b - min_at) as u64,
                    });
                }
                break;
            }
        }
    }
    best
}

fn forking_witness(rounds: &Rounds, c: Color, params: &ParamTuple) -> Option<Violation> {
    let (dn, dd) = (params.delta.numer() as i128, params.delta.denom() as i128);
    let n_l = params.n_ell;
    // Sums over rounds < k, so [t1, t2] maps to prefix[t2 + 1] - prefix[t1].
    let len = rounds.t_max as usize + 2;
    let mut score = vec![0i128; len];
    let mut count = vec![0u64; len];
    for t in 0..=rounds.t_max as usize {
        let is_c = rounds.slot[t].is_some_and(|(_, col)| col == c);
        let f = is_c && rounds.forked[t];
        score[t + 1] = score[t] + if f { dd } else { 0 } - if is_c { dn } else { 0 };
        count[t + 1] = count[t] + is_c as u64;
    }
    let (mut min_val, mut min_at) = (i128::MAX, 0usize);
    for t2 in n_l..=rounds.t_max {
        let t1 = (t2 - n_l) as usize;
        if score[t1] < min_val {
            min_val = score[t1];
            min_at = t1;
        }
        let end = t2 as usize + 1;
        let diff = score[end] - min_val;
        let total = count[end] - count[min_at];
        // An interval without color blocks loses nothing.
        if diff > 0 || (diff == 0 && total > 0) {
            let forked = (min_at..end)
                .filter(|&t| rounds.forked[t] && rounds.slot[t].is_some_and(|(_, col)| col == c))
                .count() as u64;
            return Some(Violation {
                t1: min_at as u64,
                t2,
                miner: None,
                count: forked,
                total,
            });
        }
    }
    None
}

fn supply_witness(rounds: &Rounds, c: Color, params: &ParamTuple) -> Option<Violation> {
    let n_l = params.n_ell;
    let dc = params.delta_c;
    let len = rounds.t_max as usize + 2;
    let mut count = vec![0u64; len];
    for t in 0..=rounds.t_max as usize {
        count[t + 1] = count[t] + rounds.slot[t].is_some_and(|(_, col)| col == c) as u64;
    }
    // count[t2 + 1] - dc t2 >= count[t1] - dc t1 for all t1 <= t2 - N_l.
    let (mut max_val, mut max_at) = (f64::NEG_INFINITY, 0usize);
    for t2 in n_l..=rounds.t_max {
        let t1 = (t2 - n_l) as usize;
        let b = count[t1] as f64 - dc * t1 as f64;
        if b > max_val {
            max_val = b;
            max_at = t1;
        }
        let a = count[t2 as usize + 1] as f64 - dc * t2 as f64;
        if a - max_val < -SUPPLY_TOLERANCE {
            return Some(Violation {
                t1: max_at as u64,
                t2,
                miner: None,
                count: count[t2 as usize + 1] - count[max_at],
                total: t2 - max_at as u64,
            });
        }
    }
    None
}

/// Sampling of views for [`check_desiderata_with`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct DesiderataOptions {
    /// Rounds between the views whose ledgers are compared.
    pub ledger_stride: u64,
    /// Rounds between the views whose rewards are compared.
    pub reward_stride: u64,
}

impl Default for DesiderataOptions {
    fn default() -> Self {
        Self {
            ledger_stride: 100,
            reward_stride: 1000,
        }
    }
}

/// `L_k` of miner `i`'s view at `t` differs from `L_k` of `j`'s view at `t'`.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ConsistencyViolation {
    pub i: MinerIndex,
    pub t: u64,
    pub j: MinerIndex,
    pub t_prime: u64,
    /// 1-based ledger index.
    pub k: u64,
    pub expected: BlockId,
    pub found: Option<BlockId>,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct GrowthViolation {
    pub miner: MinerIndex,
    pub t: u64,
    pub t_prime: u64,
    pub len_t: u64,
    pub len_t_prime: u64,
}

/// Fewer than two honest ledger blocks generated in `[t, t_prime]`.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct QualityViolation {
    pub miner: MinerIndex,
    pub t: u64,
    pub t_prime: u64,
    pub honest: u64,
}

/// The reward of `block` differs between two views that should agree.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct RewardViolation {
    pub block: BlockId,
    pub i: MinerIndex,
    pub t: u64,
    pub reward: u8,
    pub j: MinerIndex,
    pub t_prime: u64,
    pub reward_prime: u8,
}

#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Comparisons {
    pub consistency: u64,
    pub revenue: u64,
    pub revenue_set: u64,
    pub honest_blocks: u64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DesiderataReport {
    pub color: Color,
    pub consistency_k: u64,
    pub growth_window: u64,
    pub quality_window: u64,
    pub revenue_k: u64,
    pub consistency: ViolationLog<ConsistencyViolation>,
    pub growth: ViolationLog<GrowthViolation>,
    pub quality: ViolationLog<QualityViolation>,
    /// Rewards that differ between views later than `revenue_k` rounds
    /// after publication.
    pub revenue: ViolationLog<RewardViolation>,
    /// Rewards that change after the block sank `2 N_l` below its minor tip.
    pub revenue_set: ViolationLog<RewardViolation>,
    /// Honest blocks outside natural forks that are unacceptable in the
    /// final published dag.
    pub honest_unacceptable: ViolationLog<BlockId>,
    /// Honest share of the final published ledger.
    pub honest_ledger_fraction: Option<f64>,
    pub comparisons: Comparisons,
}

impl DesiderataReport {
    /// No consistency, growth, quality or revenue violations.
    pub fn desiderata_hold(&self) -> bool {
        self.consistency.is_clean() && self.growth.is_clean() && self.quality.is_clean() && self.revenue.is_clean()
    }
}

pub fn check_desiderata(history: &History, params: &ParamTuple, c_hat: Color) -> DesiderataReport {
    check_desiderata_with(history, params, c_hat, &DesiderataOptions::default())
}

/// Ledger views are sampled every `ledger_stride` rounds and rewards every
/// `reward_stride` rounds, the horizon always included. Growth is checked
/// at every round.
pub fn check_desiderata_with(
    history: &History,
    params: &ParamTuple,
    c_hat: Color,
    opts: &DesiderataOptions,
) -> DesiderataReport {
    let n_l = params.n_ell;
    let dc = params.delta_c;
    let delta = params.delta.to_f64();
    let growth_window = (n_l as f64 / dc).ceil() as u64;
    let quality_window = (2.0 * n_l as f64 / dc).ceil() as u64;
    let revenue_k = (4.0 * n_l as f64 * params.n_colors as f64 / (dc * (1.0 - delta))).ceil() as u64;
    let mut report = DesiderataReport {
        color: c_hat,
        consistency_k: n_l,
        growth_window,
        quality_window,
        revenue_k,
        consistency: ViolationLog::default(),
        growth: ViolationLog::default(),
        quality: ViolationLog::default(),
        revenue: ViolationLog::default(),
        revenue_set: ViolationLog::default(),
        honest_unacceptable: ViolationLog::default(),
        honest_ledger_fraction: None,
        comparisons: Comparisons::default(),
    };
    let honest = honest_miners(history);
    if c_hat < history.minors().n_colors() {
        let minor = history.minors().minor(c_hat);
        check_consistency(history, minor, n_l, opts.ledger_stride, &mut report);
        check_growth(history, minor, growth_window, &mut report);
        check_quality(history, minor, &honest, quality_window, &mut report);
    }
    check_rewards(history, n_l as u32, revenue_k, opts.reward_stride, &mut report);
    check_honest_acceptable(history, n_l as u32, &honest, c_hat, &mut report);
    report
}

fn sample_times(horizon: u64, stride: u64) -> Vec<u64> {
    let mut ts: Vec<u64> = (0..=horizon).step_by(stride.max(1) as usize).collect();
    if ts.last() != Some(&horizon) {
        ts.push(horizon);
    }
    ts
}

/// Canonical path of the part of `minor` seen by a miner at `t`.
fn view_ledger(minor: &MinorDag, entry: &[u64], t: u64) -> Vec<u32> {
    let kept: Vec<bool> = minor.nodes.iter().map(|x| entry[x.block] <= t).collect();
    canonical_nodes(minor, &kept)
}

fn prefix_hashes(path: &[u32]) -> Vec<u64> {
    const MUL: u64 = 0x9E37_79B9_7F4A_7C15;
    let mut h = Vec::with_capacity(path.len() + 1);
    h.push(0u64);
    for &x in path {
        let last = *h.last().unwrap();
        h.push(last.wrapping_mul(MUL).wrapping_add(x as u64 + 1).rotate_left(17));
    }
    h
}

fn check_consistency(history: &History, minor: &MinorDag, k: u64, stride: u64, report: &mut DesiderataReport) {
    struct View {
        i: MinerIndex,
        t: u64,
        path: Vec<u32>,
        hash: Vec<u64>,
    }
    let mut views = Vec::new();
    for t in sample_times(history.horizon(), stride) {
        for i in 0..history.n_miners() {
            let path = view_ledger(minor, history.entry_rounds(i).unwrap(), t);
            let hash = prefix_hashes(&path);
            views.push(View { i, t, path, hash });
        }
    }
    let id = |l: u32| minor.nodes[l as usize].id;
    for a in &views {
        let Some(stable) = a.path.len().checked_sub(k as usize).filter(|&s| s > 0) else {
            continue;
        };
        for b in views.iter().filter(|b| b.t >= a.t) {
            report.comparisons.consistency += 1;
            if b.path.len() >= stable && a.hash[stable] == b.hash[stable] {
                continue;
            }
            let first = (0..stable).find(|&x| b.path.get(x) != Some(&a.path[x]));
            if let Some(x) = first {
                report.consistency.push(ConsistencyViolation {
                    i: a.i,
                    t: a.t,
                    j: b.i,
                    t_prime: b.t,
                    k: x as u64 + 1,
                    expected: id(a.path[x]),
                    found: b.path.get(x).map(|&l| id(l)),
                });
            }
        }
    }
}

/// Ledger length of each miner's view at every round, which is the deepest
/// minor depth it has seen.
fn ledger_lengths(history: &History, minor: &MinorDag, i: MinerIndex) -> Vec<u64> {
    let horizon = history.horizon() as usize;
    let mut len = vec![0u64; horizon + 1];
    let entry = history.entry_rounds(i).unwrap();
    for x in &minor.nodes {
        let r = entry[x.block];
        if r != NOT_SEEN && (r as usize) <= horizon {
            len[r as usize] = len[r as usize].max(x.depth as u64);
        }
    }
    for t in 1..=horizon {
        len[t] = len[t].max(len[t - 1]);
    }
    len
}

fn check_growth(history: &History, minor: &MinorDag, window: u64, report: &mut DesiderataReport) {
    let t_max = history.config().t_max;
    for i in 0..history.n_miners() {
        let len = ledger_lengths(history, minor, i);
        // Lengths never shrink, so the shortest qualifying gap is the
        // strongest test.
        if window > t_max {
            return;
        }
        for t in 0..=t_max - window {
            let tp = t + window;
            if len[tp as usize] < len[t as usize] + 1 {
                report.growth.push(GrowthViolation {
                    miner: i,
                    t,
                    t_prime: tp,
                    len_t: len[t as usize],
                    len_t_prime: len[tp as usize],
                });
            }
        }
    }
}

fn check_quality(history: &History, minor: &MinorDag, honest: &[bool], window: u64, report: &mut DesiderataReport) {
    let dag = history.dag();
    let t_max = history.config().t_max;
    let is_honest = |l: u32| {
        let meta = &dag.block_at(minor.nodes[l as usize].block).meta;
        meta.miner.is_some_and(|m| honest.get(m).copied().unwrap_or(false))
    };
    for i in 0..history.n_miners() {
        let path = view_ledger(minor, history.entry_rounds(i).unwrap(), history.horizon());
        let rounds: Vec<u64> = path
            .iter()
            .filter(|&&l| is_honest(l))
            .map(|&l| dag.block_at(minor.nodes[l as usize].block).meta.round_created)
            .collect();
        if window > t_max {
            continue;
        }
        // Two-pointer count of honest ledger rounds inside [t, t + window].
        let (mut lo, mut hi) = (0usize, 0usize);
        for t in 0..=t_max - window {
            while lo < rounds.len() && rounds[lo] < t {
                lo += 1;
            }
            while hi < rounds.len() && rounds[hi] <= t + window {
                hi += 1;
            }
            let inside = hi.saturating_sub(lo) as u64;
            if inside < 2 {
                report.quality.push(QualityViolation {
                    miner: i,
                    t,
                    t_prime: t + window,
                    honest: inside,
                });
            }
        }
    }
}

/// Compares rewards across sampled views for revenue consistency and for
/// rewards of blocks deep below their minor tip.
fn check_rewards(history: &History, n_l: u32, revenue_k: u64, stride: u64, report: &mut DesiderataReport) {
    let dag = history.dag();
    let minors = history.minors();
    let n = dag.len();
    // First observation that later views must match: (reward, miner, round).
    let mut settled: Vec<Option<(u8, MinerIndex, u64)>> = vec![None; n];
    let mut late: Vec<Option<(u8, MinerIndex, u64)>> = vec![None; n];
    for t in sample_times(history.horizon(), stride) {
        let mut views = Vec::with_capacity(history.n_miners());
        for i in 0..history.n_miners() {
            let mask = history.view_mask(i, t).unwrap();
            let book = RewardBook::new(dag, minors, Some(&mask), n_l);
            let rewards: Vec<Option<u8>> = (0..n).map(|v| book.reward_at(v)).collect();
            let mut tip = vec![0u32; minors.n_colors() as usize];
            for v in 0..n {
                if let (true, Some((c, _)), Some(d)) = (mask[v], minors.locate(v), minors.depth_at(v)) {
                    tip[c as usize] = tip[c as usize].max(d);
                }
            }
            views.push((rewards, tip));
        }
        for (i, (rewards, tip)) in views.iter().enumerate() {
            for v in 0..n {
                let (Some(r), Some((c, _)), Some(d)) = (rewards[v], minors.locate(v), minors.depth_at(v)) else {
                    continue;
                };
                if settled[v].is_none() && d as u64 + 2 * n_l as u64 <= tip[c as usize] as u64 {
                    settled[v] = Some((r, i, t));
                }
                let published = history.published_at(v);
                if late[v].is_none() && published.is_some_and(|p| t > p + revenue_k) {
                    late[v] = Some((r, i, t));
                }
            }
        }
        for (j, (rewards, _)) in views.iter().enumerate() {
            for v in 0..n {
                let Some(r) = rewards[v] else { continue };
                let compare =
                    |first: Option<(u8, MinerIndex, u64)>, log: &mut ViolationLog<RewardViolation>, tally: &mut u64| {
                        if let Some((r0, i0, t0)) = first {
                            *tally += 1;
                            if r0 != r {
                                log.push(RewardViolation {
                                    block: dag.id_at(v),
                                    i: i0,
                                    t: t0,
                                    reward: r0,
                                    j,
                                    t_prime: t,
                                    reward_prime: r,
                                });
                            }
                        }
                    };
                compare(settled[v], &mut report.revenue_set, &mut report.comparisons.revenue_set);
                compare(late[v], &mut report.revenue, &mut report.comparisons.revenue);
            }
        }
    }
}

fn check_honest_acceptable(history: &History, n_l: u32, honest: &[bool], c_hat: Color, report: &mut DesiderataReport) {
    let dag = history.dag();
    let mask = history.published_mask(history.horizon());
    let book = RewardBook::new(dag, history.minors(), Some(&mask), n_l);
    let forked = forked_blocks(history);
    for v in 1..dag.len() {
        let b = dag.block_at(v);
        let is_honest = b.meta.miner.is_some_and(|m| honest.get(m).copied().unwrap_or(false));
        if !mask[v] || !is_honest || forked.contains(&b.id) || history.minors().locate(v).is_none() {
            continue;
        }
        report.comparisons.honest_blocks += 1;
        if !book.acceptable_at(v) {
            report.honest_unacceptable.push(b.id);
        }
    }
    if c_hat < history.minors().n_colors() {
        let minor = history.minors().minor(c_hat);
        let kept: Vec<bool> = minor.nodes.iter().map(|x| mask[x.block]).collect();
        let path = canonical_nodes(minor, &kept);
        let good = path
            .iter()
            .filter(|&&l| {
                let m = dag.block_at(minor.nodes[l as usize].block).meta.miner;
                m.is_some_and(|m| honest.get(m).copied().unwrap_or(false))
            })
            .count();
        report.honest_ledger_fraction = (!path.is_empty()).then(|| good as f64 / path.len() as f64);
    }
}

/// Utilities of miner 0 in one seed: all honest versus deviating, both on
/// the same schedule.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DeviationRow {
    pub seed: u64,
    pub honest_utility: Option<f64>,
    pub deviant_utility: Option<f64>,
    pub delta: Option<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DeviationSummary {
    pub adversary: String,
    pub power: f64,
    pub runs: usize,
    pub mean_honest: f64,
    pub mean_deviant: f64,
    pub mean_delta: f64,
    /// Normal-approximation 95% interval for the mean delta.
    pub ci95: (f64, f64),
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DeviationTable {
    pub rows: Vec<DeviationRow>,
    pub summary: DeviationSummary,
}

/// Runs miner 0 as `adversary` and as an honest miner on the identical
/// schedule for every seed, everyone else honest. Utilities are taken at
/// the horizon in miner 0's own view.
pub fn deviation_experiment(
    config: &SchedulerConfig,
    adversary: &StrategyKind,
    seeds: Range<u64>,
    n_l: u32,
) -> Result<DeviationTable, SimError> {
    config.validate()?;
    let power = config.miners.first().map_or(0.0, |m| m.power.max());
    if power >= 0.5 {
        return Err(SimError::InvalidConfig {
            field: "miners[0].power".into(),
            reason: format!("the deviating miner needs less than half the power, got {power}"),
        });
    }
    let n = config.miners.len();
    let rows: Vec<DeviationRow> = seeds
        .collect::<Vec<_>>()
        .into_par_iter()
        .map(|seed| {
            let cfg = SchedulerConfig { seed, ..config.clone() };
            let schedule = generate_schedule(&cfg)?;
            let baseline = run_with_schedule(&cfg, &schedule, (0..n).map(|_| honest()).collect())?;
            let mut strategies = vec![adversary.build()];
            strategies.extend((1..n).map(|_| honest()));
            let deviant = run_with_schedule(&cfg, &schedule, strategies)?;
            let u = |h: &History| utility(h, 0, h.horizon(), n_l).ok().and_then(|r| r.utility);
            let (hu, du) = (u(&baseline), u(&deviant));
            Ok(DeviationRow {
                seed,
                honest_utility: hu,
                deviant_utility: du,
                delta: hu.zip(du).map(|(h, d)| d - h),
            })
        })
        .collect::<Result<_, SimError>>()?;
    let mean = |xs: &[f64]| {
        if xs.is_empty() {
            0.0
        } else {
            xs.iter().sum::<f64>() / xs.len() as f64
        }
    };
    let honest_u: Vec<f64> = rows.iter().filter_map(|r| r.honest_utility).collect();
    let deviant_u: Vec<f64> = rows.iter().filter_map(|r| r.deviant_utility).collect();
    let deltas: Vec<f64> = rows.iter().filter_map(|r| r.delta).collect();
    let mean_delta = mean(&deltas);
    let half = if deltas.len() > 1 {
        let var = deltas.iter().map(|d| (d - mean_delta).powi(2)).sum::<f64>() / (deltas.len() - 1) as f64;
        1.96 * (var / deltas.len() as f64).sqrt()
    } else {
        f64::INFINITY
    };
    Ok(DeviationTable {
        summary: DeviationSummary {
            adversary: adversary.build().name(),
            power,
            runs: rows.len(),
            mean_honest: mean(&honest_u),
            mean_deviant: mean(&deviant_u),
            mean_delta,
            ci95: (mean_delta - half, mean_delta + half),
        },
        rows,
    })
}

/// Utility without and with forking: `M' / (M + M')` against
/// `(M' - M'') / (M + M' - 2 M'')` for `rival` compensated rival blocks,
/// `own` own blocks and `forked_pairs` self-forked pairs.
pub fn deviation_closed_form(rival: u64, own: u64, forked_pairs: u64) -> (Ratio<u64>, Ratio<u64>) {
    assert!(forked_pairs <= own.min(rival), "cannot fork more pairs than blocks");
    let before = Ratio::new(own, rival + own);
    let after = Ratio::new(own - forked_pairs, rival + own - 2 * forked_pairs);
    (before, after)
}
