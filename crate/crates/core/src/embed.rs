//! Full-tree embedding of decomposition trees.
//!
//! Every character tree is placed into a blank full binary tree of depth `D`
//! whose slots are numbered breadth-first (children of slot `i` are `2i+1` and
//! `2i+2`). The first `2^(D-1) - 1` slots carry structure codes; radicals are
//! read off in the same breadth-first order.

use serde::Serialize;
use thiserror::Error;

use crate::ids::{DecompTree, RadicalId, StructureOp};

pub const MIN_DEPTH: usize = 2;
pub const MAX_DEPTH: usize = 8;

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum ParamsError {
    #[error("full-tree depth {0} outside {MIN_DEPTH}..={MAX_DEPTH}")]
    DepthOutOfRange(usize),
    #[error("{field} must be at least 1")]
    ZeroLength { field: &'static str },
    #[error("max radicals {max_radicals} exceeds the {capacity} leaves of a depth-{depth} tree")]
    TooManyRadicals {
        max_radicals: usize,
        capacity: usize,
        depth: usize,
    },
}

/// Code hyper-parameters: full-tree depth `D`, structure code length `L_S`,
/// radical code length `L_R` and maximum radical count `M`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize)]
pub struct CodeParams {
    depth: usize,
    struct_bits: usize,
    radical_bits: usize,
    max_radicals: usize,
}

impl Default for CodeParams {
    /// `D = 5, L_S = 4, L_R = 36, M = 9`, giving `t = 384`.
    fn default() -> Self {
        CodeParams {
            depth: 5,
            struct_bits: 4,
            radical_bits: 36,
            max_radicals: 9,
        }
    }
}

impl CodeParams {
    pub fn new(
        depth: usize,
        struct_bits: usize,
        radical_bits: usize,
        max_radicals: usize,
    ) -> Result<Self, ParamsError> {
        if !(MIN_DEPTH..=MAX_DEPTH).contains(&depth) {
            return Err(ParamsError::DepthOutOfRange(depth));
        }
        if struct_bits == 0 {
            return Err(ParamsError::ZeroLength {
                field: "structure code length",
            });
        }
        if radical_bits == 0 {
            return Err(ParamsError::ZeroLength {
                field: "radical code length",
            });
        }
        if max_radicals == 0 {
            return Err(ParamsError::ZeroLength {
                field: "max radicals",
            });
        }
        let capacity = 1usize << (depth - 1);
        if max_radicals > capacity {
            return Err(ParamsError::TooManyRadicals {
                max_radicals,
                capacity,
                depth,
            });
        }
        Ok(CodeParams {
            depth,
            struct_bits,
            radical_bits,
            max_radicals,
        })
    }

    pub fn depth(&self) -> usize {
        self.depth
    }

    pub fn struct_bits(&self) -> usize {
        self.struct_bits
    }

    pub fn radical_bits(&self) -> usize {
        self.radical_bits
    }

    pub fn max_radicals(&self) -> usize {
        self.max_radicals
    }

    /// Slots in the full tree, `2^D - 1`.
    pub fn full_tree_slots(&self) -> usize {
        (1usize << self.depth) - 1
    }

    /// Internal (structure-bearing) slots, `2^(D-1) - 1`.
    pub fn structure_slot_count(&self) -> usize {
        (1usize << (self.depth - 1)) - 1
    }

    pub fn struct_region_len(&self) -> usize {
        self.structure_slot_count() * self.struct_bits
    }

    pub fn radical_region_len(&self) -> usize {
        self.max_radicals * self.radical_bits
    }

    /// Total code length `t = (2^(D-1) - 1) * L_S + M * L_R`.
    pub fn total_len(&self) -> usize {
        self.struct_region_len() + self.radical_region_len()
    }

    /// `(offset, len)` of every code block: structure slots, then radical slots.
    pub fn blocks(&self) -> Vec<(usize, usize)> {
        let mut out = Vec::with_capacity(self.structure_slot_count() + self.max_radicals);
        for i in 0..self.structure_slot_count() {
            out.push((i * self.struct_bits, self.struct_bits));
        }
        let base = self.struct_region_len();
        for i in 0..self.max_radicals {
            out.push((base + i * self.radical_bits, self.radical_bits));
        }
        out
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub enum Slot {
    Structure(StructureOp),
    Radical(RadicalId),
    Blank,
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum EmbedError {
    #[error("tree depth {depth} exceeds full-tree depth {limit}")]
    TreeTooDeep { depth: usize, limit: usize },
    #[error("{count} radicals exceed the maximum of {limit}")]
    RadicalOverflow { count: usize, limit: usize },
}

/// A character tree placed in the `2^D - 1` breadth-first slots of the full tree.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct FullTreeSlots {
    depth: usize,
    slots: Vec<Slot>,
}

impl FullTreeSlots {
    pub fn depth(&self) -> usize {
        self.depth
    }

    pub fn slots(&self) -> &[Slot] {
        &self.slots
    }

    /// Internal slots projected to their structure; radicals and empty nodes
    /// project to `None`.
    pub fn structure_slots(&self) -> Vec<Option<StructureOp>> {
        let internal = (1usize << (self.depth - 1)) - 1;
        self.slots[..internal]
            .iter()
            .map(|slot| match slot {
                Slot::Structure(op) => Some(*op),
                _ => None,
            })
            .collect()
    }

    /// Radicals in breadth-first slot order.
    pub fn radical_sequence(&self, params: &CodeParams) -> Result<Vec<RadicalId>, EmbedError> {
        let radicals: Vec<RadicalId> = self
            .slots
            .iter()
            .filter_map(|slot| match slot {
                Slot::Radical(id) => Some(id.clone()),
                _ => None,
            })
            .collect();
        if radicals.len() > params.max_radicals() {
            return Err(EmbedError::RadicalOverflow {
                count: radicals.len(),
                limit: params.max_radicals(),
            });
        }
        Ok(radicals)
    }
}

pub fn embed_full_tree(
    tree: &DecompTree,
    params: &CodeParams,
) -> Result<FullTreeSlots, EmbedError> {
    let depth = tree.depth();
    if depth > params.depth() {
        return Err(EmbedError::TreeTooDeep {
            depth,
            limit: params.depth(),
        });
    }
    let mut slots = vec![Slot::Blank; params.full_tree_slots()];
    let mut stack = vec![(tree, 0usize)];
    while let Some((node, index)) = stack.pop() {
        match node {
            DecompTree::Radical(id) => slots[index] = Slot::Radical(id.clone()),
            DecompTree::Structure { op, left, right } => {
                slots[index] = Slot::Structure(*op);
                stack.push((left, 2 * index + 1));
                stack.push((right, 2 * index + 2));
            }
        }
    }
    Ok(FullTreeSlots {
        depth: params.depth(),
        slots,
    })
}
