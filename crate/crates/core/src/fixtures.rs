//! Small hand-built dags used by tests, examples and the CLI self-check.

use std::collections::BTreeMap;

use crate::dag::{BlockDag, BlockId, BlockMeta, Color};

pub const BLUE: Color = 0;
pub const RED: Color = 1;
pub const YELLOW: Color = 2;

/// A dag plus human-readable block names.
#[derive(Clone, Debug)]
pub struct NamedDag {
    pub dag: BlockDag,
    names: BTreeMap<String, BlockId>,
}

impl NamedDag {
    pub fn new() -> Self {
        Self {
            dag: BlockDag::new(),
            names: BTreeMap::new(),
        }
    }

    pub fn id(&self, name: &str) -> BlockId {
        if name == "genesis" {
            return self.dag.genesis();
        }
        *self
            .names
            .get(name)
            .unwrap_or_else(|| panic!("fixture has no block named {name}"))
    }

    pub fn name(&self, id: BlockId) -> &str {
        if id == self.dag.genesis() {
            return "genesis";
        }
        self.names
            .iter()
            .find(|(_, v)| **v == id)
            .map(|(k, _)| k.as_str())
            .unwrap_or("?")
    }

    pub fn names(&self, ids: &[BlockId]) -> Vec<String> {
        ids.iter().map(|&i| self.name(i).to_string()).collect()
    }

    /// Adds `name` with the given parent names; ids are assigned in call order.
    pub fn add(&mut self, name: &str, color: Color, parents: &[&str]) -> BlockId {
        let parents: Vec<BlockId> = parents.iter().map(|p| self.id(p)).collect();
        let id = self
            .dag
            .add_block(&parents, BlockMeta::colored(color))
            .unwrap_or_else(|e| panic!("fixture block {name}: {e}"));
        self.names.insert(name.to_string(), id);
        id
    }
}

impl Default for NamedDag {
    fn default() -> Self {
        Self::new()
    }
}

/// The three-colored dag with chains B1-B2-B3, R1-R2-R3 and Y1-Y2-Y3.
/// B1 hangs off the genesis; colors are blue 0, red 1, yellow 2.
pub fn figure_one() -> NamedDag {
    let mut f = NamedDag::new();
    f.add("B1", BLUE, &["genesis"]);
    f.add("Y1", YELLOW, &["B1"]);
    f.add("R1", RED, &["B1"]);
    f.add("B2", BLUE, &["Y1"]);
    f.add("R2", RED, &["R1", "Y1"]);
    f.add("B3", BLUE, &["R1", "B2"]);
    f.add("Y2", YELLOW, &["B2"]);
    f.add("Y3", YELLOW, &["B3", "Y2"]);
    f.add("R3", RED, &["R2", "Y2"]);
    f
}
