//! Per-character codes and the codebook matrix.
//!
//! A character's code is the concatenation of its structure region (one
//! `L_S` block per internal full-tree slot, breadth-first) and its radical
//! region (one `L_R` block per radical, breadth-first, right-padded with
//! zero blocks to `M`). Codes are ternary: blank blocks are all zero while
//! structure and radical codes are ±1.

mod format;
mod stats;
mod tables;

use std::collections::HashMap;
use std::fmt;
use std::path::PathBuf;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::Serialize;
use thiserror::Error;

pub use format::{
    deserialize, read_codebook, serialize, write_codebook, FormatError, FORMAT_VERSION, MAGIC,
};
pub use stats::{classes_for_ratio, CompressionStats};
pub use tables::{CodeSource, RadicalCodeSet, StructCodeTable};

use crate::embed::{embed_full_tree, CodeParams, EmbedError};
use crate::ids::{validate, DecompTree, RadicalId, Violation};

/// A single ternary code position: -1, 0 or +1.
pub type Trit = i8;

/// Flag bit set when radical codes were read from a prototype file.
pub const FLAG_PROTOTYPE_CODES: u32 = 1;

/// Attempts at drawing a blank row distinct from every character row.
const BLANK_ROW_ATTEMPTS: usize = 64;

#[derive(Debug, Error)]
pub enum CodebookError {
    #[error("structure code length {struct_bits} cannot hold 10 distinct non-zero codes (need at least 4 bits)")]
    ParamsTooSmall { struct_bits: usize },
    #[error("cannot draw {radicals} distinct {bits}-bit codes with minimum Hamming distance {min_hamming}")]
    CapacityExceeded {
        radicals: usize,
        bits: usize,
        min_hamming: usize,
    },
    #[error("line {line}: {reason}")]
    BadFormat { line: usize, reason: String },
    #[error("line {line}: radical {radical} defined twice")]
    DuplicateRadical { radical: RadicalId, line: usize },
    #[error("line {line}: radical {second} has the same code as {first} (line {first_line})")]
    DuplicateCode {
        first: RadicalId,
        first_line: usize,
        second: RadicalId,
        line: usize,
    },
    #[error("line {line}: code has {actual} positions, expected {expected}")]
    WrongLength {
        line: usize,
        expected: usize,
        actual: usize,
    },
    #[error("line {line}: all-zero code is reserved for padding")]
    ZeroVector { line: usize },
    #[error("code tables do not match parameters: {0}")]
    TableMismatch(String),
    #[error("no code for radical {0}")]
    UnknownRadical(RadicalId),
    #[error("character {character} cannot be encoded: {}", join_violations(.violations))]
    Unencodable {
        character: String,
        violations: Vec<Violation>,
    },
    #[error(transparent)]
    Embed(#[from] EmbedError),
    #[error("duplicate character {0}")]
    DuplicateCharacter(String),
    #[error("characters {first} and {second} have identical codes")]
    CodeCollision { first: String, second: String },
    #[error("could not draw a blank row distinct from all character rows")]
    BlankRowExhausted,
    #[error("invalid codebook: {0}")]
    Invalid(String),
    #[error("{}: {source}", path.display())]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

fn join_violations(v: &[Violation]) -> String {
    v.iter()
        .map(|x| x.to_string())
        .collect::<Vec<_>>()
        .join("; ")
}

/// A length-`t` ternary code.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct CodeVec(Vec<Trit>);

impl CodeVec {
    pub fn as_slice(&self) -> &[Trit] {
        &self.0
    }

    pub fn into_inner(self) -> Vec<Trit> {
        self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    /// Nonzero positions, which is also the code's self inner product.
    pub fn nnz(&self) -> usize {
        self.0.iter().filter(|&&t| t != 0).count()
    }
}

impl fmt::Display for CodeVec {
    /// `+`, `-` and `0` per position.
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&trits_to_string(&self.0))
    }
}

pub fn trits_to_string(trits: &[Trit]) -> String {
    trits
        .iter()
        .map(|&t| match t {
            1 => '+',
            -1 => '-',
            _ => '0',
        })
        .collect()
}

/// Structure and radical code tables used together to encode characters.
#[derive(Debug, Clone)]
pub struct CodeTables {
    pub structures: StructCodeTable,
    pub radicals: RadicalCodeSet,
}

impl CodeTables {
    /// Canonical structure codes plus seeded random radical codes for every
    /// radical appearing in `trees`.
    pub fn generate<'a>(
        trees: impl IntoIterator<Item = &'a DecompTree>,
        params: &CodeParams,
        seed: u64,
        min_hamming: usize,
    ) -> Result<Self, CodebookError> {
        let radicals: Vec<RadicalId> = trees
            .into_iter()
            .flat_map(|t| t.leaves().into_iter().cloned())
            .collect();
        Ok(CodeTables {
            structures: StructCodeTable::canonical(params.struct_bits())?,
            radicals: RadicalCodeSet::generate(radicals, params.radical_bits(), seed, min_hamming)?,
        })
    }

    fn check(&self, params: &CodeParams) -> Result<(), CodebookError> {
        if self.structures.bits() != params.struct_bits() {
            return Err(CodebookError::TableMismatch(format!(
                "structure codes have {} bits, parameters say {}",
                self.structures.bits(),
                params.struct_bits()
            )));
        }
        if self.radicals.bits() != params.radical_bits() {
            return Err(CodebookError::TableMismatch(format!(
                "radical codes have {} bits, parameters say {}",
                self.radicals.bits(),
                params.radical_bits()
            )));
        }
        Ok(())
    }
}

/// Encode one decomposition tree.
pub fn encode_char(
    tree: &DecompTree,
    tables: &CodeTables,
    params: &CodeParams,
) -> Result<CodeVec, CodebookError> {
    tables.check(params)?;
    let violations = validate(tree, params);
    if !violations.is_empty() {
        return Err(CodebookError::Unencodable {
            character: tree.render(),
            violations,
        });
    }
    let slots = embed_full_tree(tree, params)?;
    let mut code = Vec::with_capacity(params.total_len());
    for slot in slots.structure_slots() {
        match slot {
            Some(op) => code.extend_from_slice(tables.structures.code(op)),
            None => code.extend(std::iter::repeat_n(0, params.struct_bits())),
        }
    }
    let radicals = slots.radical_sequence(params)?;
    for id in &radicals {
        let block = tables
            .radicals
            .code(id)
            .ok_or_else(|| CodebookError::UnknownRadical(id.clone()))?;
        code.extend_from_slice(block);
    }
    let padding = (params.max_radicals() - radicals.len()) * params.radical_bits();
    code.extend(std::iter::repeat_n(0, padding));
    debug_assert_eq!(code.len(), params.total_len());
    Ok(CodeVec(code))
}

/// Nonzero positions of a row split by sign, so inner products touch only
/// the occupied blocks.
#[derive(Debug, Clone, PartialEq, Eq, Default)]
struct SparseRows {
    offsets: Vec<usize>,
    positions: Vec<u32>,
    // Number of leading positive entries in each row's slice of `positions`.
    split: Vec<usize>,
}

impl SparseRows {
    fn build(rows: &[Trit], blank_row: &[Trit], t: usize) -> Self {
        let mut out = SparseRows {
            offsets: vec![0],
            ..Default::default()
        };
        for row in rows.chunks_exact(t).chain(std::iter::once(blank_row)) {
            let start = out.positions.len();
            out.positions.extend(
                row.iter()
                    .enumerate()
                    .filter(|(_, &v)| v > 0)
                    .map(|(i, _)| i as u32),
            );
            out.split.push(out.positions.len() - start);
            out.positions.extend(
                row.iter()
                    .enumerate()
                    .filter(|(_, &v)| v < 0)
                    .map(|(i, _)| i as u32),
            );
            out.offsets.push(out.positions.len());
        }
        out
    }

    fn row(&self, i: usize) -> (&[u32], &[u32]) {
        let all = &self.positions[self.offsets[i]..self.offsets[i + 1]];
        all.split_at(self.split[i])
    }
}

/// The `N x t` code matrix plus a reserved CTC blank row.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Codebook {
    params: CodeParams,
    labels: Vec<String>,
    rows: Vec<Trit>,
    blank_row: Vec<Trit>,
    seed: u64,
    flags: u32,
    sparse: SparseRows,
}

/// Decode margins of a codebook, measured between every ordered pair of rows
/// `(i, j)` as `gap(i, j) = <H_i, H_i> - <H_j, H_i>`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub struct MarginReport {
    /// Smallest strictly positive gap. Flipping fewer than `gap / 4` trits of
    /// a clean code cannot change its decoded label.
    pub min_positive_gap: Option<i64>,
    /// Ordered pairs with gap zero: row `j` agrees with row `i` on all of
    /// `i`'s nonzero positions and has more of its own. These tie on
    /// similarity and are separated by the smaller-norm tie rule.
    pub dominated_pairs: usize,
}

impl Codebook {
    /// Assemble a codebook from already-encoded parts, checking its invariants.
    pub fn from_parts(
        params: CodeParams,
        labels: Vec<String>,
        rows: Vec<Trit>,
        blank_row: Vec<Trit>,
        seed: u64,
        flags: u32,
    ) -> Result<Self, CodebookError> {
        let t = params.total_len();
        if rows.len() != labels.len() * t {
            return Err(CodebookError::Invalid(format!(
                "{} trits for {} rows of length {t}",
                rows.len(),
                labels.len()
            )));
        }
        if blank_row.len() != t || blank_row.iter().any(|&v| v != 1 && v != -1) {
            return Err(CodebookError::Invalid(
                "blank row must be a ±1 vector of length t".into(),
            ));
        }
        if rows.iter().any(|&v| !(-1..=1).contains(&v)) {
            return Err(CodebookError::Invalid("trit outside {-1, 0, +1}".into()));
        }
        let mut seen_labels: HashMap<&str, usize> = HashMap::new();
        for (i, label) in labels.iter().enumerate() {
            if seen_labels.insert(label, i).is_some() {
                return Err(CodebookError::DuplicateCharacter(label.clone()));
            }
        }
        let mut seen_rows: HashMap<&[Trit], usize> = HashMap::new();
        for (i, row) in rows.chunks_exact(t).enumerate() {
            if let Some(&j) = seen_rows.get(row) {
                return Err(CodebookError::CodeCollision {
                    first: labels[j].clone(),
                    second: labels[i].clone(),
                });
            }
            seen_rows.insert(row, i);
        }
        if seen_rows.contains_key(blank_row.as_slice()) {
            return Err(CodebookError::Invalid(
                "blank row equals a character row".into(),
            ));
        }
        drop(seen_rows);
        drop(seen_labels);
        Ok(Self::assemble(params, labels, rows, blank_row, seed, flags))
    }

    /// Skips the invariant checks; for callers that enforced them already.
    fn assemble(
        params: CodeParams,
        labels: Vec<String>,
        rows: Vec<Trit>,
        blank_row: Vec<Trit>,
        seed: u64,
        flags: u32,
    ) -> Self {
        let sparse = SparseRows::build(&rows, &blank_row, params.total_len());
        Codebook {
            params,
            labels,
            rows,
            blank_row,
            seed,
            flags,
            sparse,
        }
    }

    pub fn params(&self) -> &CodeParams {
        &self.params
    }

    /// Code length `t`.
    pub fn dim(&self) -> usize {
        self.params.total_len()
    }

    /// Number of character rows `N` (the blank row is not counted).
    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn labels(&self) -> &[String] {
        &self.labels
    }

    pub fn label(&self, i: usize) -> &str {
        &self.labels[i]
    }

    pub fn index_of(&self, label: &str) -> Option<usize> {
        self.labels.iter().position(|l| l == label)
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn flags(&self) -> u32 {
        self.flags
    }

    /// Row-major `N x t` trit matrix.
    pub fn matrix(&self) -> &[Trit] {
        &self.rows
    }

    pub fn row(&self, i: usize) -> &[Trit] {
        let t = self.dim();
        &self.rows[i * t..(i + 1) * t]
    }

    pub fn blank_row(&self) -> &[Trit] {
        &self.blank_row
    }

    /// Index of the blank row in score matrices, i.e. `N`.
    pub fn blank_index(&self) -> usize {
        self.len()
    }

    /// Row `i` for `i < N`, the blank row for `i == N`.
    pub fn row_or_blank(&self, i: usize) -> &[Trit] {
        if i == self.len() {
            &self.blank_row
        } else {
            self.row(i)
        }
    }

    /// Nonzero count of row `i` (blank row at `i == N`).
    pub fn row_nnz(&self, i: usize) -> usize {
        self.sparse.offsets[i + 1] - self.sparse.offsets[i]
    }

    /// Inner product of row `i` (or the blank row at `N`) with a real vector.
    pub fn dot(&self, i: usize, frame: &[f64]) -> f64 {
        let (plus, minus) = self.sparse.row(i);
        let p: f64 = plus.iter().map(|&k| frame[k as usize]).sum();
        let m: f64 = minus.iter().map(|&k| frame[k as usize]).sum();
        p - m
    }

    /// Exact inner product of row `i` (or the blank row at `N`) with a trit vector.
    pub fn dot_trits(&self, i: usize, frame: &[Trit]) -> i64 {
        let (plus, minus) = self.sparse.row(i);
        let p: i64 = plus.iter().map(|&k| frame[k as usize] as i64).sum();
        let m: i64 = minus.iter().map(|&k| frame[k as usize] as i64).sum();
        p - m
    }

    /// Add `scale * row_i` into `out` (blank row at `i == N`).
    pub fn add_row_scaled(&self, i: usize, scale: f64, out: &mut [f64]) {
        let (plus, minus) = self.sparse.row(i);
        for &k in plus {
            out[k as usize] += scale;
        }
        for &k in minus {
            out[k as usize] -= scale;
        }
    }

    pub fn compression_stats(
        &self,
        feature_dim: usize,
        one_hot_classes: usize,
        bias: bool,
    ) -> CompressionStats {
        CompressionStats::compute(self.dim(), feature_dim, one_hot_classes, bias)
    }

    /// Pairwise decode margins over all character rows. Quadratic in `N`.
    pub fn margins(&self) -> MarginReport {
        let n = self.len();
        let t = self.dim();
        let self_scores: Vec<i64> = (0..n).map(|i| self.row_nnz(i) as i64).collect();
        let (min_gap, dominated) = (0..n)
            .into_par_iter()
            .map(|i| {
                let row_i = self.row(i);
                let mut min_gap: Option<i64> = None;
                let mut dominated = 0usize;
                for j in i + 1..n {
                    let cross = self.dot_trits(j, row_i);
                    for gap in [self_scores[i] - cross, self_scores[j] - cross] {
                        if gap == 0 {
                            dominated += 1;
                        } else {
                            min_gap = Some(min_gap.map_or(gap, |g| g.min(gap)));
                        }
                    }
                }
                debug_assert_eq!(row_i.len(), t);
                (min_gap, dominated)
            })
            .reduce(
                || (None, 0),
                |(a, da), (b, db)| {
                    let m = match (a, b) {
                        (Some(x), Some(y)) => Some(x.min(y)),
                        (x, None) => x,
                        (None, y) => y,
                    };
                    (m, da + db)
                },
            );
        MarginReport {
            min_positive_gap: min_gap,
            dominated_pairs: dominated,
        }
    }
}

/// Incremental codebook construction: characters are encoded as they are
/// pushed, so large enumerations never need their trees in memory at once.
pub struct CodebookBuilder<'a> {
    tables: &'a CodeTables,
    params: CodeParams,
    labels: Vec<String>,
    rows: Vec<Trit>,
    by_label: HashMap<String, usize>,
    by_code: HashMap<Vec<Trit>, usize>,
}

impl<'a> CodebookBuilder<'a> {
    pub fn new(tables: &'a CodeTables, params: &CodeParams) -> Result<Self, CodebookError> {
        tables.check(params)?;
        Ok(CodebookBuilder {
            tables,
            params: *params,
            labels: Vec::new(),
            rows: Vec::new(),
            by_label: HashMap::new(),
            by_code: HashMap::new(),
        })
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn push(&mut self, label: &str, tree: &DecompTree) -> Result<(), CodebookError> {
        if self.by_label.contains_key(label) {
            return Err(CodebookError::DuplicateCharacter(label.to_string()));
        }
        let code = encode_char(tree, self.tables, &self.params)
            .map_err(|e| match e {
                CodebookError::Unencodable { violations, .. } => CodebookError::Unencodable {
                    character: label.to_string(),
                    violations,
                },
                other => other,
            })?
            .into_inner();
        if let Some(&j) = self.by_code.get(&code) {
            return Err(CodebookError::CodeCollision {
                first: self.labels[j].clone(),
                second: label.to_string(),
            });
        }
        let i = self.labels.len();
        self.rows.extend_from_slice(&code);
        self.by_code.insert(code, i);
        self.by_label.insert(label.to_string(), i);
        self.labels.push(label.to_string());
        Ok(())
    }

    /// Draw the blank row and seal the codebook. The blank row comes from the
    /// seed's second ChaCha stream (radical codes use the first).
    pub fn finish(self, seed: u64) -> Result<Codebook, CodebookError> {
        let t = self.params.total_len();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        rng.set_stream(1);
        let mut blank_row = vec![0 as Trit; t];
        let mut found = false;
        for _ in 0..BLANK_ROW_ATTEMPTS {
            for v in blank_row.iter_mut() {
                *v = if rng.random::<bool>() { 1 } else { -1 };
            }
            if !self.by_code.contains_key(&blank_row) {
                found = true;
                break;
            }
        }
        if !found {
            return Err(CodebookError::BlankRowExhausted);
        }
        let flags = match self.tables.radicals.source() {
            CodeSource::PrototypeFile { .. } => FLAG_PROTOTYPE_CODES,
            CodeSource::Generated { .. } => 0,
        };
        // Labels and rows are distinct by construction and the blank row was
        // just checked against every row.
        Ok(Codebook::assemble(
            self.params,
            self.labels,
            self.rows,
            blank_row,
            seed,
            flags,
        ))
    }
}

/// Encode every entry, in order, and stack the codes into a codebook.
pub fn build_codebook(
    entries: &[(String, DecompTree)],
    tables: &CodeTables,
    params: &CodeParams,
    seed: u64,
) -> Result<Codebook, CodebookError> {
    let mut builder = CodebookBuilder::new(tables, params)?;
    for (label, tree) in entries {
        builder.push(label, tree)?;
    }
    builder.finish(seed)
}
