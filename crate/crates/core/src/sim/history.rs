//! Event log of a run and everything derived from it.
//!
//! A history is stored as line-JSON: a header with the config and strategy
//! names, then one event per line. Loading replays the events, so a loaded
//! history is indistinguishable from the one the run produced.

use std::io::{BufRead, Write};

use serde::{Deserialize, Serialize};

use super::{SchedulerConfig, SimError};
use crate::dag::{BlockDag, BlockId, BlockMeta, Color, DagError, MinerIndex};
use crate::minor::Minors;

pub(crate) const NOT_SEEN: u64 = u64::MAX;

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "event", rename_all = "snake_case")]
pub enum Event {
    Generate {
        round: u64,
        block: BlockId,
        miner: MinerIndex,
        color: Color,
        parents: Vec<BlockId>,
    },
    Publish {
        round: u64,
        block: BlockId,
    },
    Deliver {
        round: u64,
        block: BlockId,
        to: MinerIndex,
    },
    Fault {
        round: u64,
        miner: MinerIndex,
        reason: String,
    },
}

/// A strategy misbehaved; the offending action was ignored.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct StrategyFault {
    pub round: u64,
    pub miner: MinerIndex,
    pub reason: String,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct HistoryHeader {
    pub config: SchedulerConfig,
    pub strategies: Vec<String>,
}

/// Mutable state behind a history, shared by the simulator and the loader.
pub(crate) struct Recorder {
    pub(crate) dag: BlockDag,
    pub(crate) minors: Minors,
    pub(crate) published: Vec<Option<u64>>,
    /// Round each block entered each miner's view.
    enter: Vec<Vec<u64>>,
    events: Vec<Event>,
}

impl Recorder {
    pub(crate) fn new(n_miners: usize, n_colors: u32) -> Self {
        let dag = BlockDag::new();
        let minors = Minors::build(&dag, n_colors);
        Self {
            dag,
            minors,
            published: vec![Some(0)],
            enter: vec![vec![0]; n_miners],
            events: Vec::new(),
        }
    }

    pub(crate) fn generate(
        &mut self,
        round: u64,
        miner: MinerIndex,
        color: Color,
        parents: &[BlockId],
    ) -> Result<usize, DagError> {
        let id = BlockId(self.dag.len() as u64);
        self.insert(round, id, miner, color, parents)
    }

    fn insert(
        &mut self,
        round: u64,
        id: BlockId,
        miner: MinerIndex,
        color: Color,
        parents: &[BlockId],
    ) -> Result<usize, DagError> {
        let meta = BlockMeta {
            miner: Some(miner),
            color: Some(color),
            round_created: round,
            round_published: None,
            payload: Vec::new(),
        };
        self.dag.insert(id, parents, meta)?;
        self.minors.catch_up(&self.dag);
        self.published.push(None);
        for e in &mut self.enter {
            e.push(NOT_SEEN);
        }
        self.events.push(Event::Generate {
            round,
            block: id,
            miner,
            color,
            parents: self.dag.block_at(self.dag.len() - 1).parents.clone(),
        });
        Ok(self.dag.len() - 1)
    }

    /// Marks `v` published; returns blocks newly visible to the publisher.
    pub(crate) fn publish(&mut self, round: u64, v: usize) -> Vec<usize> {
        self.published[v] = Some(round);
        self.events.push(Event::Publish {
            round,
            block: self.dag.id_at(v),
        });
        let miner = self.dag.block_at(v).meta.miner.expect("generated blocks have miners");
        self.enter_view(miner, v, round)
    }

    /// Records a delivery; returns blocks newly visible to the recipient, in
    /// insertion order.
    pub(crate) fn deliver(&mut self, round: u64, v: usize, to: MinerIndex) -> Vec<usize> {
        self.events.push(Event::Deliver {
            round,
            block: self.dag.id_at(v),
            to,
        });
        self.enter_view(to, v, round)
    }

    pub(crate) fn fault(&mut self, round: u64, miner: MinerIndex, reason: String) {
        self.events.push(Event::Fault { round, miner, reason });
    }

    /// Adds `v` and any missing ancestors to `miner`'s view.
    fn enter_view(&mut self, miner: MinerIndex, v: usize, round: u64) -> Vec<usize> {
        let enter = &mut self.enter[miner];
        let mut added = Vec::new();
        let mut stack = vec![v];
        while let Some(x) = stack.pop() {
            if enter[x] != NOT_SEEN {
                continue;
            }
            enter[x] = round;
            added.push(x);
            stack.extend_from_slice(self.dag.parents_at(x));
        }
        added.sort_unstable();
        added
    }

    pub(crate) fn finish(self, config: SchedulerConfig, strategies: Vec<String>) -> History {
        History {
            header: HistoryHeader { config, strategies },
            dag: self.dag,
            minors: self.minors,
            published: self.published,
            enter: self.enter,
            events: self.events,
        }
    }

    fn apply(&mut self, line: usize, event: Event) -> Result<(), SimError> {
        let bad = |reason: String| SimError::Parse { line, reason };
        let n_miners = self.enter.len();
        let idx = |dag: &BlockDag, b: BlockId| dag.idx(b).map_err(|e| bad(e.to_string()));
        match event {
            Event::Generate {
                round,
                block,
                miner,
                color,
                parents,
            } => {
                if miner >= n_miners {
                    return Err(bad(format!("unknown miner {miner}")));
                }
                self.insert(round, block, miner, color, &parents)
                    .map_err(|e| bad(e.to_string()))?;
            }
            Event::Publish { round, block } => {
                let v = idx(&self.dag, block)?;
                self.publish(round, v);
            }
            Event::Deliver { round, block, to } => {
                let v = idx(&self.dag, block)?;
                if to >= n_miners {
                    return Err(bad(format!("unknown miner {to}")));
                }
                self.deliver(round, v, to);
            }
            Event::Fault { round, miner, reason } => self.fault(round, miner, reason),
        }
        Ok(())
    }
}

/// Complete record of one run.
#[derive(Clone, Debug)]
pub struct History {
    header: HistoryHeader,
    /// Every generated block, published or not.
    dag: BlockDag,
    minors: Minors,
    published: Vec<Option<u64>>,
    enter: Vec<Vec<u64>>,
    events: Vec<Event>,
}

impl History {
    pub fn config(&self) -> &SchedulerConfig {
        &self.header.config
    }

    pub fn strategies(&self) -> &[String] {
        &self.header.strategies
    }

    pub fn n_miners(&self) -> usize {
        self.enter.len()
    }

    /// Last simulated round.
    pub fn horizon(&self) -> u64 {
        self.header.config.horizon()
    }

    /// All generated blocks, including ones never published.
    pub fn dag(&self) -> &BlockDag {
        &self.dag
    }

    /// Minors of [`History::dag`], one per color.
    pub fn minors(&self) -> &Minors {
        &self.minors
    }

    pub fn events(&self) -> &[Event] {
        &self.events
    }

    pub fn faults(&self) -> Vec<StrategyFault> {
        self.events
            .iter()
            .filter_map(|e| match e {
                Event::Fault { round, miner, reason } => Some(StrategyFault {
                    round: *round,
                    miner: *miner,
                    reason: reason.clone(),
                }),
                _ => None,
            })
            .collect()
    }

    /// Publication round of the block at insertion index `v`.
    pub fn published_at(&self, v: usize) -> Option<u64> {
        self.published[v]
    }

    pub fn publication_round(&self, b: BlockId) -> Result<Option<u64>, DagError> {
        Ok(self.published[self.dag.idx(b)?])
    }

    /// Round in which `b` entered miner `i`'s view, if it ever did.
    pub fn entered_view(&self, i: MinerIndex, b: BlockId) -> Result<Option<u64>, SimError> {
        let e = self.enter.get(i).ok_or(SimError::UnknownMiner(i))?;
        let v = self.dag.idx(b).map_err(|_| SimError::Parse {
            line: 0,
            reason: format!("unknown block {b}"),
        })?;
        Ok((e[v] != NOT_SEEN).then_some(e[v]))
    }

    /// Round each block entered miner `i`'s view, [`NOT_SEEN`] if never.
    pub(crate) fn entry_rounds(&self, i: MinerIndex) -> Option<&[u64]> {
        self.enter.get(i).map(Vec::as_slice)
    }

    /// Membership mask (over [`History::dag`] insertion indices) of miner
    /// `i`'s view at the end of round `t`.
    pub fn view_mask(&self, i: MinerIndex, t: u64) -> Result<Vec<bool>, SimError> {
        let e = self.enter.get(i).ok_or(SimError::UnknownMiner(i))?;
        Ok(e.iter().map(|&r| r <= t).collect())
    }

    /// Mask of blocks published by the end of round `t`.
    pub fn published_mask(&self, t: u64) -> Vec<bool> {
        self.published.iter().map(|p| p.is_some_and(|r| r <= t)).collect()
    }

    /// Miner `i`'s view at the end of round `t` as a standalone dag.
    pub fn local_view(&self, i: MinerIndex, t: u64) -> Result<BlockDag, SimError> {
        Ok(self.subdag(&self.view_mask(i, t)?))
    }

    /// The published blocks, with publication rounds filled in.
    pub fn global_dag(&self) -> BlockDag {
        self.subdag(&self.published_mask(u64::MAX))
    }

    fn subdag(&self, mask: &[bool]) -> BlockDag {
        let mut out = BlockDag::with_genesis(self.dag.genesis());
        for v in 1..self.dag.len() {
            if !mask[v] {
                continue;
            }
            let b = self.dag.block_at(v);
            let mut meta = b.meta.clone();
            meta.round_published = self.published[v];
            out.insert(b.id, &b.parents, meta)
                .expect("masks handed out here are down-closed");
        }
        out
    }

    pub fn write_jsonl<W: Write>(&self, mut out: W) -> std::io::Result<()> {
        serde_json::to_writer(&mut out, &self.header)?;
        out.write_all(b"\n")?;
        for e in &self.events {
            serde_json::to_writer(&mut out, e)?;
            out.write_all(b"\n")?;
        }
        Ok(())
    }

    pub fn to_jsonl(&self) -> String {
        let mut buf = Vec::new();
        self.write_jsonl(&mut buf).expect("writing to a Vec cannot fail");
        String::from_utf8(buf).expect("serde_json emits utf-8")
    }

    pub fn read_jsonl<R: BufRead>(input: R) -> Result<Self, SimError> {
        let mut lines = input.lines().enumerate();
        let header: HistoryHeader = loop {
            let Some((n, line)) = lines.next() else {
                return Err(SimError::Parse {
                    line: 0,
                    reason: "empty history".into(),
                });
            };
            let line = line?;
            if line.trim().is_empty() {
                continue;
            }
            break serde_json::from_str(&line).map_err(|e| SimError::Parse {
                line: n + 1,
                reason: e.to_string(),
            })?;
        };
        header.config.validate()?;
        let mut rec = Recorder::new(header.config.miners.len(), header.config.n_colors);
        for (n, line) in lines {
            let line = line?;
            if line.trim().is_empty() {
                continue;
            }
            let event: Event = serde_json::from_str(&line).map_err(|e| SimError::Parse {
                line: n + 1,
                reason: e.to_string(),
            })?;
            rec.apply(n + 1, event)?;
        }
        Ok(rec.finish(header.config, header.strategies))
    }

    pub fn from_jsonl(text: &str) -> Result<Self, SimError> {
        Self::read_jsonl(text.as_bytes())
    }
}
