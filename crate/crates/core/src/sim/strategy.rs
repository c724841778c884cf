//! Miner behaviors.

use serde::{Deserialize, Serialize};

use super::MinerContext;
use crate::dag::{BlockId, Color};

/// A miner's decision procedure. Colors come from the schedule, so a
/// strategy only chooses parents and what to publish when.
pub trait Strategy: Send {
    fn name(&self) -> String;

    /// Omniscient strategies see the whole pre-drawn schedule.
    fn omniscient(&self) -> bool {
        false
    }

    /// Called when the miner is scheduled to generate. `None` passes.
    fn choose_parents(&mut self, ctx: &MinerContext<'_>) -> Option<Vec<BlockId>>;

    /// Called right after the miner's block was added; returns blocks to
    /// publish now.
    fn on_generated(&mut self, _ctx: &MinerContext<'_>, block: BlockId) -> Vec<BlockId> {
        vec![block]
    }

    /// Called after blocks became visible to the miner; returns blocks to
    /// publish now.
    fn on_receive(&mut self, _ctx: &MinerContext<'_>, _delivered: &[BlockId]) -> Vec<BlockId> {
        Vec::new()
    }
}

/// Serializable strategy selector for configs.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum StrategyKind {
    Honest,
    WithholdAll,
    PrivateChain {
        color: Color,
        #[serde(default = "default_lead")]
        lead: u32,
    },
    SelfForker,
    OwnFruitOnly,
}

fn default_lead() -> u32 {
    2
}

impl StrategyKind {
    pub fn build(&self) -> Box<dyn Strategy> {
        match *self {
            Self::Honest => honest(),
            Self::WithholdAll => withhold_all(),
            Self::PrivateChain { color, lead } => private_chain(color, lead),
            Self::SelfForker => self_forker(),
            Self::OwnFruitOnly => own_fruit_only(),
        }
    }

    pub fn is_honest(&self) -> bool {
        matches!(self, Self::Honest)
    }
}

/// Point at every leaf of the view and publish at once.
pub fn honest() -> Box<dyn Strategy> {
    Box::new(Honest)
}

/// Mine on everything known but never publish.
pub fn withhold_all() -> Box<dyn Strategy> {
    Box::new(WithholdAll)
}

/// Keep own color-`color` blocks, and everything mined on top of them,
/// private until the private chain leads the public one by `lead` minor
/// depths. Give up once the public chain catches up.
pub fn private_chain(color: Color, lead: u32) -> Box<dyn Strategy> {
    Box::new(PrivateChain {
        color,
        lead: lead.max(1),
        chain: Vec::new(),
    })
}

/// Knowing the next block's color, mine it as a sibling of the deepest
/// rival block of that color so both end up forked.
pub fn self_forker() -> Box<dyn Strategy> {
    Box::new(SelfForker)
}

/// Point only at the miner's own previous block (or the genesis).
pub fn own_fruit_only() -> Box<dyn Strategy> {
    Box::new(OwnFruitOnly)
}

struct Honest;

impl Strategy for Honest {
    fn name(&self) -> String {
        "honest".into()
    }

    fn choose_parents(&mut self, ctx: &MinerContext<'_>) -> Option<Vec<BlockId>> {
        Some(ctx.view_leaves())
    }
}

struct WithholdAll;

impl Strategy for WithholdAll {
    fn name(&self) -> String {
        "withhold_all".into()
    }

    fn choose_parents(&mut self, ctx: &MinerContext<'_>) -> Option<Vec<BlockId>> {
        Some(match ctx.latest_own_block() {
            Some(tip) => ctx.leaves_below(tip),
            None => ctx.view_leaves(),
        })
    }

    fn on_generated(&mut self, _ctx: &MinerContext<'_>, _block: BlockId) -> Vec<BlockId> {
        Vec::new()
    }
}

struct PrivateChain {
    color: Color,
    lead: u32,
    /// Withheld blocks of the current attempt, oldest first.
    chain: Vec<BlockId>,
}

impl PrivateChain {
    fn private_depth(&self, ctx: &MinerContext<'_>) -> u32 {
        self.chain
            .iter()
            .filter_map(|&b| {
                let block = ctx.block(b)?;
                (block.color() == Some(self.color))
                    .then(|| ctx.minor_depth(b))
                    .flatten()
            })
            .max()
            .unwrap_or(0)
    }

    fn release(&mut self) -> Vec<BlockId> {
        std::mem::take(&mut self.chain).into_iter().rev().take(1).collect()
    }
}

impl Strategy for PrivateChain {
    fn name(&self) -> String {
        format!("private_chain(color={}, lead={})", self.color, self.lead)
    }

    fn choose_parents(&mut self, ctx: &MinerContext<'_>) -> Option<Vec<BlockId>> {
        Some(match self.chain.last() {
            Some(&tip) => ctx.leaves_below(tip),
            None => ctx.view_leaves(),
        })
    }

    fn on_generated(&mut self, ctx: &MinerContext<'_>, block: BlockId) -> Vec<BlockId> {
        let is_target = ctx.block(block).and_then(|b| b.color()) == Some(self.color);
        if self.chain.is_empty() && !is_target {
            return vec![block];
        }
        self.chain.push(block);
        if self.private_depth(ctx) >= ctx.view_tip_depth(self.color) + self.lead {
            return self.release();
        }
        Vec::new()
    }

    fn on_receive(&mut self, ctx: &MinerContext<'_>, _delivered: &[BlockId]) -> Vec<BlockId> {
        if !self.chain.is_empty() && ctx.view_tip_depth(self.color) >= self.private_depth(ctx) {
            // Overtaken: the withheld blocks are abandoned for good.
            self.chain.clear();
        }
        Vec::new()
    }
}

struct SelfForker;

impl Strategy for SelfForker {
    fn name(&self) -> String {
        "self_forker".into()
    }

    fn omniscient(&self) -> bool {
        true
    }

    fn choose_parents(&mut self, ctx: &MinerContext<'_>) -> Option<Vec<BlockId>> {
        let c = ctx.scheduled_color()?;
        let rival = ctx.deepest_rival(c).and_then(|r| ctx.block(r));
        Some(match rival {
            Some(r) => r.parents.clone(),
            None => ctx.view_leaves(),
        })
    }
}

struct OwnFruitOnly;

impl Strategy for OwnFruitOnly {
    fn name(&self) -> String {
        "own_fruit_only".into()
    }

    fn choose_parents(&mut self, ctx: &MinerContext<'_>) -> Option<Vec<BlockId>> {
        Some(vec![ctx.latest_own_block().unwrap_or_else(|| ctx.genesis())])
    }
}
