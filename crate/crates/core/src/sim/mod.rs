//! Deterministic round-based simulator.
//!
//! All randomness is drawn up front into a [`Schedule`]: which miner
//! generates in each round, the color of that block, and how long each
//! recipient waits for it once it is published. A run then replays the
//! schedule against a set of strategies. Two runs on the same schedule differ
//! only through strategy behavior.
//!
//! Round `t` first delivers messages due at `t`, lets receiving miners react,
//! and then lets the scheduled miner generate. A block published in round `t`
//! reaches recipient `k` in round `t + d` with `d` in `[1, Delta]`; its
//! generator sees it immediately. Generation happens in rounds `1..=t_max`;
//! the run continues to `t_max + Delta` so every block published by `t_max`
//! is delivered everywhere.

pub(crate) mod history;
mod strategy;

use std::collections::BTreeSet;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::dag::{Block, BlockDag, BlockId, Color, MinerIndex};

pub use history::{Event, History, HistoryHeader, StrategyFault};
pub use strategy::{honest, own_fruit_only, private_chain, self_forker, withhold_all, Strategy, StrategyKind};

use history::Recorder;

const POWER_TOLERANCE: f64 = 1e-9;

#[derive(Debug, Error)]
pub enum SimError {
    #[error("invalid config field `{field}`: {reason}")]
    InvalidConfig { field: String, reason: String },
    #[error("expected {expected} strategies, got {got}")]
    StrategyCount { expected: usize, got: usize },
    #[error("unknown miner {0}")]
    UnknownMiner(MinerIndex),
    #[error("malformed history on line {line}: {reason}")]
    Parse { line: usize, reason: String },
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

fn invalid(field: impl Into<String>, reason: impl Into<String>) -> SimError {
    SimError::InvalidConfig {
        field: field.into(),
        reason: reason.into(),
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum DeliveryPolicy {
    /// Every message takes exactly `delay` rounds.
    Fixed { delay: u64 },
    /// Independent uniform delays in `[1, Delta]` per recipient.
    #[default]
    Uniform,
    /// Every message takes the full `Delta` rounds.
    AdversarialMax,
}

/// Mining power as a constant or as a step function of the round.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum PowerSchedule {
    Constant(f64),
    Steps(Vec<PowerStep>),
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PowerStep {
    pub from_round: u64,
    pub power: f64,
}

impl PowerSchedule {
    /// Power in round `t`; zero before the first step.
    pub fn at(&self, t: u64) -> f64 {
        match self {
            Self::Constant(p) => *p,
            Self::Steps(steps) => steps.iter().rev().find(|s| s.from_round <= t).map_or(0.0, |s| s.power),
        }
    }

    /// Largest power the schedule ever assigns.
    pub fn max(&self) -> f64 {
        match self {
            Self::Constant(p) => *p,
            Self::Steps(steps) => steps.iter().map(|s| s.power).fold(0.0, f64::max),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MinerConfig {
    pub power: PowerSchedule,
    /// First active round, `T1`.
    #[serde(default)]
    pub active_from: u64,
    /// Last active round, `T2`; defaults to `t_max`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub active_until: Option<u64>,
}

impl MinerConfig {
    pub fn constant(power: f64) -> Self {
        Self {
            power: PowerSchedule::Constant(power),
            active_from: 0,
            active_until: None,
        }
    }

    /// `(T1, T2)`.
    pub fn active_window(&self, t_max: u64) -> (u64, u64) {
        (self.active_from, self.active_until.unwrap_or(t_max))
    }

    fn active_at(&self, t: u64, t_max: u64) -> bool {
        let (t1, t2) = self.active_window(t_max);
        t1 <= t && t <= t2
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SchedulerConfig {
    pub t_max: u64,
    /// Delivery bound `Delta`.
    pub delta: u64,
    pub n_colors: u32,
    pub miners: Vec<MinerConfig>,
    #[serde(default)]
    pub delivery: DeliveryPolicy,
    #[serde(default)]
    pub seed: u64,
}

impl SchedulerConfig {
    /// `n` miners of equal constant power, uniform delays.
    pub fn equal_miners(n: usize, t_max: u64, delta: u64, n_colors: u32, seed: u64) -> Self {
        Self::with_powers(&vec![1.0 / n as f64; n], t_max, delta, n_colors, seed)
    }

    pub fn with_powers(powers: &[f64], t_max: u64, delta: u64, n_colors: u32, seed: u64) -> Self {
        Self {
            t_max,
            delta,
            n_colors,
            miners: powers.iter().map(|&p| MinerConfig::constant(p)).collect(),
            delivery: DeliveryPolicy::Uniform,
            seed,
        }
    }

    /// Last simulated round.
    pub fn horizon(&self) -> u64 {
        self.t_max + self.delta
    }

    pub fn validate(&self) -> Result<(), SimError> {
        if self.t_max == 0 {
            return Err(invalid("t_max", "must be at least 1"));
        }
        if self.delta == 0 {
            return Err(invalid("delta", "must be at least 1"));
        }
        if self.n_colors == 0 {
            return Err(invalid("n_colors", "must be at least 1"));
        }
        if self.miners.is_empty() {
            return Err(invalid("miners", "at least one miner is required"));
        }
        if let DeliveryPolicy::Fixed { delay } = self.delivery {
            if delay == 0 || delay > self.delta {
                return Err(invalid("delivery.delay", format!("must lie in [1, {}]", self.delta)));
            }
        }
        for (i, m) in self.miners.iter().enumerate() {
            let (t1, t2) = m.active_window(self.t_max);
            if t1 > t2 {
                return Err(invalid(format!("miners[{i}].active_from"), "after active_until"));
            }
            if t2 > self.t_max {
                return Err(invalid(format!("miners[{i}].active_until"), "beyond t_max"));
            }
            if let PowerSchedule::Steps(steps) = &m.power {
                if steps.windows(2).any(|w| w[0].from_round >= w[1].from_round) {
                    return Err(invalid(format!("miners[{i}].power"), "steps must be increasing"));
                }
            }
        }
        // Powers only change at step boundaries and window edges, but the
        // full scan is cheap at the scales simulated here.
        for t in 1..=self.t_max {
            let mut total = 0.0;
            let mut any = false;
            for (i, m) in self.miners.iter().enumerate() {
                if !m.active_at(t, self.t_max) {
                    continue;
                }
                let p = m.power.at(t);
                if !(p > 0.0 && p.is_finite()) {
                    return Err(invalid(
                        format!("miners[{i}].power"),
                        format!("active miner has power {p} in round {t}"),
                    ));
                }
                total += p;
                any = true;
            }
            if any && (total - 1.0).abs() > POWER_TOLERANCE {
                return Err(invalid(
                    "miners.power",
                    format!("active powers sum to {total} in round {t}"),
                ));
            }
        }
        Ok(())
    }
}

/// Pre-drawn randomness of one round.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Slot {
    pub miner: MinerIndex,
    pub color: Color,
    /// Delivery delay per recipient; the generator's own entry is 0.
    pub delays: Vec<u64>,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Schedule {
    pub t_max: u64,
    pub delta: u64,
    /// `slots[t - 1]` belongs to round `t`.
    pub slots: Vec<Option<Slot>>,
}

impl Schedule {
    pub fn slot(&self, t: u64) -> Option<&Slot> {
        if t == 0 || t > self.t_max {
            return None;
        }
        self.slots[(t - 1) as usize].as_ref()
    }

    /// Rounds in which `miner` generates.
    pub fn rounds_of(&self, miner: MinerIndex) -> impl Iterator<Item = u64> + '_ {
        (1..=self.t_max).filter(move |&t| self.slot(t).is_some_and(|s| s.miner == miner))
    }
}

/// Draws the complete schedule. Per round: the miner (by cumulative power
/// over active miners), then the color, then one delay per recipient.
pub fn generate_schedule(config: &SchedulerConfig) -> Result<Schedule, SimError> {
    config.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let n = config.miners.len();
    let mut slots = Vec::with_capacity(config.t_max as usize);
    for t in 1..=config.t_max {
        let active: Vec<(usize, f64)> = config
            .miners
            .iter()
            .enumerate()
            .filter(|(_, m)| m.active_at(t, config.t_max))
            .map(|(i, m)| (i, m.power.at(t)))
            .collect();
        if active.is_empty() {
            slots.push(None);
            continue;
        }
        let u: f64 = rng.gen();
        let mut acc = 0.0;
        let mut miner = active.last().expect("non-empty").0;
        for &(i, p) in &active {
            acc += p;
            if u < acc {
                miner = i;
                break;
            }
        }
        let color = rng.gen_range(0..config.n_colors);
        let delays = (0..n)
            .map(|k| {
                if k == miner {
                    0
                } else {
                    match config.delivery {
                        DeliveryPolicy::Fixed { delay } => delay,
                        DeliveryPolicy::Uniform => rng.gen_range(1..=config.delta),
                        DeliveryPolicy::AdversarialMax => config.delta,
                    }
                }
            })
            .collect();
        slots.push(Some(Slot { miner, color, delays }));
    }
    Ok(Schedule {
        t_max: config.t_max,
        delta: config.delta,
        slots,
    })
}

/// Members of a down-closed block set and its leaves.
#[derive(Clone, Debug, Default)]
struct LeafSet {
    member: Vec<bool>,
    children: Vec<u32>,
    leaves: BTreeSet<usize>,
}

impl LeafSet {
    fn grow(&mut self, len: usize) {
        self.member.resize(len, false);
        self.children.resize(len, 0);
    }

    /// Adds `v`, whose parents must already be members.
    fn add(&mut self, dag: &BlockDag, v: usize) {
        if self.member[v] {
            return;
        }
        for &p in dag.parents_at(v) {
            debug_assert!(self.member[p]);
            if self.children[p] == 0 {
                self.leaves.remove(&p);
            }
            self.children[p] += 1;
        }
        self.member[v] = true;
        self.leaves.insert(v);
    }
}

struct MinerState {
    /// Public view: published blocks the miner has received or sent.
    view: LeafSet,
    /// Own blocks in generation order.
    own: Vec<usize>,
    /// Deepest minor depth per color within the public view.
    view_tip: Vec<u32>,
}

/// Read-only window onto the run for one miner's strategy.
pub struct MinerContext<'a> {
    miner: MinerIndex,
    round: u64,
    color: Option<Color>,
    rec: &'a Recorder,
    state: &'a MinerState,
    schedule: Option<&'a Schedule>,
}

impl<'a> MinerContext<'a> {
    pub fn miner(&self) -> MinerIndex {
        self.miner
    }

    pub fn round(&self) -> u64 {
        self.round
    }

    /// Color of the block about to be generated; omniscient strategies only.
    pub fn scheduled_color(&self) -> Option<Color> {
        self.color
    }

    /// The full schedule, for omniscient strategies only.
    pub fn schedule(&self) -> Option<&'a Schedule> {
        self.schedule
    }

    pub fn genesis(&self) -> BlockId {
        self.rec.dag.genesis()
    }

    /// Leaves of the public view, in generation order.
    pub fn view_leaves(&self) -> Vec<BlockId> {
        self.state.view.leaves.iter().map(|&v| self.rec.dag.id_at(v)).collect()
    }

    pub fn in_view(&self, b: BlockId) -> bool {
        self.rec.dag.idx(b).is_ok_and(|v| self.state.view.member[v])
    }

    /// A block the miner knows: in its view or generated by it.
    pub fn block(&self, b: BlockId) -> Option<&'a Block> {
        let v = self.rec.dag.idx(b).ok()?;
        let known = self.state.view.member[v] || self.rec.dag.block_at(v).meta.miner == Some(self.miner);
        known.then(|| self.rec.dag.block_at(v))
    }

    pub fn is_published(&self, b: BlockId) -> bool {
        self.rec.dag.idx(b).is_ok_and(|v| self.rec.published[v].is_some())
    }

    /// Own blocks not yet published, in generation order.
    pub fn private_blocks(&self) -> Vec<BlockId> {
        self.state
            .own
            .iter()
            .filter(|&&v| self.rec.published[v].is_none())
            .map(|&v| self.rec.dag.id_at(v))
            .collect()
    }

    pub fn latest_own_block(&self) -> Option<BlockId> {
        self.state.own.last().map(|&v| self.rec.dag.id_at(v))
    }

    /// Minor depth of a known block.
    pub fn minor_depth(&self, b: BlockId) -> Option<u32> {
        self.block(b)?;
        self.rec.minors.depth_at(self.rec.dag.idx(b).ok()?)
    }

    /// Deepest color-`c` minor depth in the public view (0 if none).
    pub fn view_tip_depth(&self, c: Color) -> u32 {
        self.state.view_tip.get(c as usize).copied().unwrap_or(0)
    }

    /// True iff `a` is a strict ancestor of `b`; both must be known.
    pub fn is_ancestor(&self, a: BlockId, b: BlockId) -> bool {
        match (self.block(a), self.block(b)) {
            (Some(_), Some(_)) => self.rec.dag.is_ancestor(a, b).unwrap_or(false),
            _ => false,
        }
    }

    /// Deepest color-`c` block in the view generated by another miner,
    /// smallest id among equals.
    pub fn deepest_rival(&self, c: Color) -> Option<BlockId> {
        let minor = self.rec.minors.minor(c);
        let mut best: Option<(u32, BlockId)> = None;
        for node in minor.nodes.iter().rev() {
            if !self.state.view.member[node.block] || self.rec.dag.block_at(node.block).meta.miner == Some(self.miner) {
                continue;
            }
            let better = match best {
                None => true,
                Some((d, id)) => node.depth > d || (node.depth == d && node.id < id),
            };
            if better {
                best = Some((node.depth, node.id));
            }
        }
        best.map(|(_, id)| id)
    }

    /// View leaves that are not ancestors of `tip`, plus `tip` itself.
    pub fn leaves_below(&self, tip: BlockId) -> Vec<BlockId> {
        let mut out: Vec<BlockId> = self
            .view_leaves()
            .into_iter()
            .filter(|&l| l != tip && !self.rec.dag.is_ancestor(l, tip).unwrap_or(false))
            .collect();
        out.push(tip);
        out
    }
}

/// Runs `strategies` (one per miner) on a freshly drawn schedule.
pub fn run(config: &SchedulerConfig, strategies: Vec<Box<dyn Strategy>>) -> Result<History, SimError> {
    let schedule = generate_schedule(config)?;
    run_with_schedule(config, &schedule, strategies)
}

/// Runs `strategies` against a given schedule.
pub fn run_with_schedule(
    config: &SchedulerConfig,
    schedule: &Schedule,
    mut strategies: Vec<Box<dyn Strategy>>,
) -> Result<History, SimError> {
    config.validate()?;
    let n = config.miners.len();
    if strategies.len() != n {
        return Err(SimError::StrategyCount {
            expected: n,
            got: strategies.len(),
        });
    }
    let names = strategies.iter().map(|s| s.name()).collect();
    let mut sim = Simulation::new(config, schedule);
    let horizon = config.horizon();
    for t in 1..=horizon {
        let arrived = sim.deliver(t);
        for (m, blocks) in arrived.into_iter().enumerate() {
            if blocks.is_empty() {
                continue;
            }
            let ctx = sim.context_for(m, t, None, strategies[m].omniscient());
            let publish = strategies[m].on_receive(&ctx, &blocks);
            sim.publish(m, &publish, t);
        }
        let Some(slot) = schedule.slot(t) else { continue };
        let m = slot.miner;
        let ctx = sim.context_for(m, t, Some(slot.color), strategies[m].omniscient());
        let Some(parents) = strategies[m].choose_parents(&ctx) else {
            continue;
        };
        let Some(id) = sim.generate(m, t, slot.color, &parents) else {
            continue;
        };
        let ctx = sim.context_for(m, t, Some(slot.color), strategies[m].omniscient());
        let publish = strategies[m].on_generated(&ctx, id);
        sim.publish(m, &publish, t);
    }
    Ok(sim.rec.finish(config.clone(), names))
}

struct Simulation<'a> {
    schedule: &'a Schedule,
    rec: Recorder,
    miners: Vec<MinerState>,
    /// Pending deliveries by arrival round.
    pending: Vec<Vec<(MinerIndex, usize)>>,
}

impl<'a> Simulation<'a> {
    fn new(config: &'a SchedulerConfig, schedule: &'a Schedule) -> Self {
        let n = config.miners.len();
        let rec = Recorder::new(n, config.n_colors);
        let miners = (0..n)
            .map(|_| {
                let mut view = LeafSet::default();
                view.grow(1);
                view.add(&rec.dag, 0);
                MinerState {
                    view,
                    own: Vec::new(),
                    view_tip: vec![0; config.n_colors as usize],
                }
            })
            .collect();
        Self {
            schedule,
            rec,
            miners,
            pending: vec![Vec::new(); (config.horizon() + config.delta + 2) as usize],
        }
    }

    fn context(&self, m: MinerIndex, t: u64, color: Option<Color>) -> MinerContext<'_> {
        MinerContext {
            miner: m,
            round: t,
            color,
            rec: &self.rec,
            state: &self.miners[m],
            schedule: None,
        }
    }

    fn context_for(&self, m: MinerIndex, t: u64, color: Option<Color>, omniscient: bool) -> MinerContext<'_> {
        // Colors come from the block's hash, so only an omniscient miner
        // knows one before choosing parents.
        let mut ctx = self.context(m, t, None);
        if omniscient {
            ctx.schedule = Some(self.schedule);
            ctx.color = color;
        }
        ctx
    }

    fn admit(&mut self, m: MinerIndex, added: &[usize]) {
        let state = &mut self.miners[m];
        for &v in added {
            state.view.add(&self.rec.dag, v);
            if let (Some((c, _)), Some(d)) = (self.rec.minors.locate(v), self.rec.minors.depth_at(v)) {
                let tip = &mut state.view_tip[c as usize];
                *tip = (*tip).max(d);
            }
        }
    }

    /// Delivers messages due in round `t`; returns newly visible blocks per miner.
    fn deliver(&mut self, t: u64) -> Vec<Vec<BlockId>> {
        let mut arrived = vec![Vec::new(); self.miners.len()];
        let due = std::mem::take(&mut self.pending[t as usize]);
        for (to, v) in due {
            let added = self.rec.deliver(t, v, to);
            self.admit(to, &added);
            arrived[to].extend(added.iter().map(|&a| self.rec.dag.id_at(a)));
        }
        arrived
    }

    fn generate(&mut self, m: MinerIndex, t: u64, color: Color, parents: &[BlockId]) -> Option<BlockId> {
        let state = &self.miners[m];
        for &p in parents {
            let known = self
                .rec
                .dag
                .idx(p)
                .is_ok_and(|v| state.view.member[v] || self.rec.dag.block_at(v).meta.miner == Some(m));
            if !known {
                self.rec.fault(t, m, format!("parent {p} is not known to the miner"));
                return None;
            }
        }
        match self.rec.generate(t, m, color, parents) {
            Ok(v) => {
                let len = self.rec.dag.len();
                for s in &mut self.miners {
                    s.view.grow(len);
                }
                self.miners[m].own.push(v);
                Some(self.rec.dag.id_at(v))
            }
            Err(e) => {
                self.rec.fault(t, m, format!("block ignored: {e}"));
                None
            }
        }
    }

    /// Publishes own blocks together with their unpublished own ancestors.
    fn publish(&mut self, m: MinerIndex, blocks: &[BlockId], t: u64) {
        for &b in blocks {
            let Ok(v) = self.rec.dag.idx(b) else {
                self.rec.fault(t, m, format!("cannot publish unknown block {b}"));
                continue;
            };
            if self.rec.dag.block_at(v).meta.miner != Some(m) {
                self.rec.fault(t, m, format!("cannot publish foreign block {b}"));
                continue;
            }
            if self.rec.published[v].is_some() {
                continue;
            }
            let mut batch = Vec::new();
            let mut stack = vec![v];
            while let Some(x) = stack.pop() {
                if self.rec.published[x].is_some() || batch.contains(&x) {
                    continue;
                }
                batch.push(x);
                stack.extend_from_slice(self.rec.dag.parents_at(x));
            }
            batch.sort_unstable();
            for x in batch {
                let added = self.rec.publish(t, x);
                self.admit(m, &added);
                let created = self.rec.dag.block_at(x).meta.round_created;
                let slot = self.schedule.slot(created).expect("generated blocks have slots");
                for (k, &d) in slot.delays.iter().enumerate() {
                    if k != m {
                        let at = (t + d) as usize;
                        if at < self.pending.len() {
                            self.pending[at].push((k, x));
                        }
                    }
                }
            }
        }
    }
}
