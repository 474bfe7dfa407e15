//! Structure and radical code tables.

use std::collections::{BTreeSet, HashMap};
use std::path::{Path, PathBuf};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use super::{CodebookError, Trit};
use crate::ids::{RadicalId, StructureOp};

/// ±1 codes for the ten structures. The all-zero block is reserved for empty
/// or radical-bearing slots.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct StructCodeTable {
    bits: usize,
    codes: Vec<Trit>,
}

impl StructCodeTable {
    /// Canonical table: the structure with index `k` gets the `L_S`-bit
    /// binary expansion of `k + 1`, most significant bit first, with bit 0
    /// mapped to -1 and bit 1 to +1.
    pub fn canonical(bits: usize) -> Result<Self, CodebookError> {
        if bits < 4 {
            return Err(CodebookError::ParamsTooSmall { struct_bits: bits });
        }
        let mut codes = Vec::with_capacity(StructureOp::COUNT * bits);
        for k in 0..StructureOp::COUNT {
            let value = k as u64 + 1;
            for bit in (0..bits).rev() {
                let set = bit < 64 && (value >> bit) & 1 == 1;
                codes.push(if set { 1 } else { -1 });
            }
        }
        Ok(StructCodeTable { bits, codes })
    }

    pub fn bits(&self) -> usize {
        self.bits
    }

    pub fn code(&self, op: StructureOp) -> &[Trit] {
        let start = op.index() * self.bits;
        &self.codes[start..start + self.bits]
    }
}

/// Where a radical code set came from.
#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum CodeSource {
    Generated { seed: u64, min_hamming: usize },
    PrototypeFile { path: PathBuf },
}

/// ±1 codes of length `L_R` for every radical.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RadicalCodeSet {
    bits: usize,
    order: Vec<RadicalId>,
    index: HashMap<RadicalId, usize>,
    codes: Vec<Trit>,
    source: CodeSource,
}

fn hamming(a: &[Trit], b: &[Trit]) -> usize {
    a.iter().zip(b).filter(|(x, y)| x != y).count()
}

impl RadicalCodeSet {
    fn empty(bits: usize, source: CodeSource) -> Self {
        RadicalCodeSet {
            bits,
            order: Vec::new(),
            index: HashMap::new(),
            codes: Vec::new(),
            source,
        }
    }

    fn push(&mut self, id: RadicalId, code: &[Trit]) {
        self.index.insert(id.clone(), self.order.len());
        self.order.push(id);
        self.codes.extend_from_slice(code);
    }

    /// Seeded uniform ±1 codes, rejected until every pair differs in at least
    /// `max(min_hamming, 1)` positions. Radicals are assigned in sorted order
    /// so the result depends only on the radical set and the seed.
    pub fn generate(
        radicals: impl IntoIterator<Item = RadicalId>,
        bits: usize,
        seed: u64,
        min_hamming: usize,
    ) -> Result<Self, CodebookError> {
        let radicals: BTreeSet<RadicalId> = radicals.into_iter().collect();
        let n = radicals.len();
        let capacity_exceeded = CodebookError::CapacityExceeded {
            radicals: n,
            bits,
            min_hamming,
        };
        if bits == 0 || (bits < 64 && n as u64 > 1u64 << bits) {
            return Err(capacity_exceeded);
        }
        let min_distance = min_hamming.max(1);
        if min_distance > bits && n > 1 {
            return Err(capacity_exceeded);
        }

        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut set = Self::empty(bits, CodeSource::Generated { seed, min_hamming });
        let max_rejections = 10 * n.max(1);
        let mut candidate = vec![0 as Trit; bits];
        for id in radicals {
            let mut rejections = 0;
            loop {
                for c in candidate.iter_mut() {
                    *c = if rng.random::<bool>() { 1 } else { -1 };
                }
                let ok = set
                    .codes
                    .chunks_exact(bits)
                    .all(|existing| hamming(existing, &candidate) >= min_distance);
                if ok {
                    break;
                }
                rejections += 1;
                if rejections >= max_rejections {
                    return Err(capacity_exceeded);
                }
            }
            set.push(id, &candidate);
        }
        Ok(set)
    }

    /// Parse binarized prototype codes: `<radical>\t<code>` per line with the
    /// code written over `{+, -}`. `#` comments and blank lines are skipped.
    pub fn parse_prototypes(text: &str, bits: usize, path: PathBuf) -> Result<Self, CodebookError> {
        let mut set = Self::empty(bits, CodeSource::PrototypeFile { path });
        let mut by_code: HashMap<Vec<Trit>, (RadicalId, usize)> = HashMap::new();
        for (idx, raw) in text.lines().enumerate() {
            let line = idx + 1;
            let content = raw.trim_end_matches('\r');
            if content.trim().is_empty() || content.starts_with('#') {
                continue;
            }
            let (name, code) =
                content
                    .split_once('\t')
                    .ok_or_else(|| CodebookError::BadFormat {
                        line,
                        reason: "expected `<radical>\\t<code>`".into(),
                    })?;
            let name = name.trim();
            let code = code.trim();
            if name.is_empty() {
                return Err(CodebookError::BadFormat {
                    line,
                    reason: "empty radical name".into(),
                });
            }
            let mut trits = Vec::with_capacity(code.len());
            for c in code.chars() {
                trits.push(match c {
                    '+' => 1,
                    '-' => -1,
                    '0' => 0,
                    other => {
                        return Err(CodebookError::BadFormat {
                            line,
                            reason: format!("unexpected code character {other:?}"),
                        })
                    }
                });
            }
            if trits.len() != bits {
                return Err(CodebookError::WrongLength {
                    line,
                    expected: bits,
                    actual: trits.len(),
                });
            }
            if trits.iter().all(|&t| t == 0) {
                return Err(CodebookError::ZeroVector { line });
            }
            if trits.contains(&0) {
                return Err(CodebookError::BadFormat {
                    line,
                    reason: "radical codes may only contain + and -".into(),
                });
            }
            let id = RadicalId::new(name);
            if set.index.contains_key(&id) {
                return Err(CodebookError::DuplicateRadical { radical: id, line });
            }
            if let Some((first, first_line)) = by_code.get(&trits) {
                return Err(CodebookError::DuplicateCode {
                    first: first.clone(),
                    first_line: *first_line,
                    second: id,
                    line,
                });
            }
            by_code.insert(trits.clone(), (id.clone(), line));
            set.push(id, &trits);
        }
        Ok(set)
    }

    pub fn load_prototypes(path: &Path, bits: usize) -> Result<Self, CodebookError> {
        let text = std::fs::read_to_string(path).map_err(|source| CodebookError::Io {
            path: path.to_path_buf(),
            source,
        })?;
        Self::parse_prototypes(&text, bits, path.to_path_buf())
    }

    pub fn bits(&self) -> usize {
        self.bits
    }

    pub fn len(&self) -> usize {
        self.order.len()
    }

    pub fn is_empty(&self) -> bool {
        self.order.is_empty()
    }

    pub fn source(&self) -> &CodeSource {
        &self.source
    }

    pub fn radicals(&self) -> &[RadicalId] {
        &self.order
    }

    pub fn code(&self, id: &RadicalId) -> Option<&[Trit]> {
        self.index
            .get(id)
            .map(|&i| &self.codes[i * self.bits..(i + 1) * self.bits])
    }

    /// Smallest Hamming distance between any two codes, `None` below two codes.
    pub fn min_pairwise_hamming(&self) -> Option<usize> {
        let codes: Vec<&[Trit]> = self.codes.chunks_exact(self.bits).collect();
        let mut best = None;
        for i in 0..codes.len() {
            for j in i + 1..codes.len() {
                let d = hamming(codes[i], codes[j]);
                best = Some(best.map_or(d, |b: usize| b.min(d)));
            }
        }
        best
    }
}
