//! Hierarchical multi-hot codes for CJK characters.
//!
//! Characters are decomposed into binary trees of structures and radicals
//! ([`ids`]), embedded into a fixed-depth full tree ([`embed`]) and encoded as
//! ternary vectors that stack into a codebook ([`codebook`]). Recognition
//! scores frames against the codebook by inner product ([`similarity`]); the
//! [`losses`] module provides the similarity-based CTC and cross-entropy
//! objectives with their frame gradients, and [`synth`] replays zero-shot and
//! ablation protocols on synthetic frames.

pub mod cli;
pub mod codebook;
pub mod embed;
pub mod gradcheck;
pub mod ids;
pub mod losses;
pub mod similarity;
pub mod synth;

pub use codebook::{
    build_codebook, encode_char, CodeTables, CodeVec, Codebook, CodebookBuilder, CodebookError,
    Trit,
};
pub use embed::{embed_full_tree, CodeParams, FullTreeSlots, Slot};
pub use ids::{parse_ids, DecompTree, RadicalId, StructureOp};
pub use similarity::{decode_frame, score, topk, BinarizeMode, Frames};
