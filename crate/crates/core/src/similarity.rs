//! Inner-product scoring between codebook rows and frame features, feature
//! binarization, and nearest-code decoding.
//!
//! Decoding picks the label row with the highest inner product. Because codes
//! are ternary, a code can tie with every code that agrees with it on all of
//! its nonzero positions and has more of its own (a single radical `木` and
//! `⿰木木` tie on the frame equal to `木`'s code). Ties are therefore broken
//! by the smaller number of nonzero trits first, which is the Euclidean
//! nearest of the tied codes, and by the lower label index second.

mod index;

use std::cmp::Ordering;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use index::BlockIndex;

use crate::codebook::{Codebook, Trit};

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum SimilarityError {
    #[error("frame length {actual} does not match code length {expected}")]
    DimensionMismatch { expected: usize, actual: usize },
    #[error("non-finite value at position {index}")]
    NonFinite { index: usize },
}

/// How real-valued features are turned into code-space frames.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "lowercase")]
pub enum BinarizeMode {
    /// `sign(x)` with `sign(0) = +1`.
    Hard,
    /// `tanh(x)`.
    Soft,
}

pub fn check_finite(values: &[f64]) -> Result<(), SimilarityError> {
    match values.iter().position(|v| !v.is_finite()) {
        Some(index) => Err(SimilarityError::NonFinite { index }),
        None => Ok(()),
    }
}

pub fn binarize(values: &[f64], mode: BinarizeMode) -> Result<Vec<f64>, SimilarityError> {
    check_finite(values)?;
    Ok(match mode {
        BinarizeMode::Hard => values
            .iter()
            .map(|&v| if v >= 0.0 { 1.0 } else { -1.0 })
            .collect(),
        BinarizeMode::Soft => values.iter().map(|v| v.tanh()).collect(),
    })
}

/// `W` frames of length `t`, stored frame after frame.
#[derive(Debug, Clone, PartialEq)]
pub struct Frames {
    dim: usize,
    data: Vec<f64>,
}

impl Frames {
    pub fn new(dim: usize, data: Vec<f64>) -> Result<Self, SimilarityError> {
        if dim == 0 || !data.len().is_multiple_of(dim) {
            return Err(SimilarityError::DimensionMismatch {
                expected: dim,
                actual: data.len(),
            });
        }
        Ok(Frames { dim, data })
    }

    pub fn zeros(dim: usize, count: usize) -> Self {
        Frames {
            dim,
            data: vec![0.0; dim * count],
        }
    }

    pub fn from_frames(dim: usize, frames: &[Vec<f64>]) -> Result<Self, SimilarityError> {
        let mut data = Vec::with_capacity(dim * frames.len());
        for f in frames {
            if f.len() != dim {
                return Err(SimilarityError::DimensionMismatch {
                    expected: dim,
                    actual: f.len(),
                });
            }
            data.extend_from_slice(f);
        }
        Ok(Frames { dim, data })
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    /// Number of frames `W`.
    pub fn len(&self) -> usize {
        self.data.len() / self.dim
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn frame(&self, j: usize) -> &[f64] {
        &self.data[j * self.dim..(j + 1) * self.dim]
    }

    pub fn frame_mut(&mut self, j: usize) -> &mut [f64] {
        &mut self.data[j * self.dim..(j + 1) * self.dim]
    }

    pub fn iter(&self) -> impl Iterator<Item = &[f64]> {
        self.data.chunks_exact(self.dim)
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn map(&self, mode: BinarizeMode) -> Result<Frames, SimilarityError> {
        Ok(Frames {
            dim: self.dim,
            data: binarize(&self.data, mode)?,
        })
    }
}

/// `(N+1) x W` scores; row `N` is the blank row.
#[derive(Debug, Clone, PartialEq)]
pub struct SimilarityMatrix {
    rows: usize,
    cols: usize,
    data: Vec<f64>,
}

impl SimilarityMatrix {
    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn get(&self, row: usize, col: usize) -> f64 {
        self.data[row * self.cols + col]
    }

    pub fn column(&self, col: usize) -> Vec<f64> {
        (0..self.rows).map(|r| self.get(r, col)).collect()
    }
}

fn check_dim(codebook: &Codebook, len: usize) -> Result<(), SimilarityError> {
    if len != codebook.dim() {
        return Err(SimilarityError::DimensionMismatch {
            expected: codebook.dim(),
            actual: len,
        });
    }
    Ok(())
}

/// Scores of every row, blank row last, against one frame.
pub fn score_frame(codebook: &Codebook, frame: &[f64]) -> Result<Vec<f64>, SimilarityError> {
    check_dim(codebook, frame.len())?;
    Ok((0..=codebook.len())
        .map(|i| codebook.dot(i, frame))
        .collect())
}

/// Exact integer scores against a ternary frame.
pub fn score_trits(codebook: &Codebook, frame: &[Trit]) -> Result<Vec<i64>, SimilarityError> {
    check_dim(codebook, frame.len())?;
    Ok((0..=codebook.len())
        .map(|i| codebook.dot_trits(i, frame))
        .collect())
}

/// `d(H, B)` for every row (blank included) and frame.
pub fn score(codebook: &Codebook, frames: &Frames) -> Result<SimilarityMatrix, SimilarityError> {
    check_dim(codebook, frames.dim())?;
    let rows = codebook.len() + 1;
    let cols = frames.len();
    let columns: Vec<Vec<f64>> = (0..cols)
        .into_par_iter()
        .map(|j| {
            (0..rows)
                .map(|i| codebook.dot(i, frames.frame(j)))
                .collect()
        })
        .collect();
    let mut data = vec![0.0; rows * cols];
    for (j, col) in columns.iter().enumerate() {
        for (i, &v) in col.iter().enumerate() {
            data[i * cols + j] = v;
        }
    }
    Ok(SimilarityMatrix { rows, cols, data })
}

/// Ordering of candidate rows: higher score first, then fewer nonzero trits,
/// then lower index.
pub(crate) fn rank(codebook: &Codebook, a: (usize, f64), b: (usize, f64)) -> Ordering {
    b.1.partial_cmp(&a.1)
        .unwrap_or(Ordering::Equal)
        .then_with(|| codebook.row_nnz(a.0).cmp(&codebook.row_nnz(b.0)))
        .then_with(|| a.0.cmp(&b.0))
}

/// Best row among the first `candidates` rows for precomputed scores.
pub(crate) fn argmax(codebook: &Codebook, scores: &[f64], candidates: usize) -> usize {
    let mut best = 0;
    for i in 1..candidates {
        if rank(codebook, (i, scores[i]), (best, scores[best])) == Ordering::Less {
            best = i;
        }
    }
    best
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Decoded {
    pub index: usize,
    pub label: String,
    pub score: f64,
}

/// Highest-similarity character for one frame. The blank row never wins.
pub fn decode_frame(codebook: &Codebook, frame: &[f64]) -> Result<Decoded, SimilarityError> {
    check_dim(codebook, frame.len())?;
    let scores: Vec<f64> = (0..codebook.len())
        .map(|i| codebook.dot(i, frame))
        .collect();
    let index = argmax(codebook, &scores, codebook.len());
    Ok(Decoded {
        index,
        label: codebook.label(index).to_string(),
        score: scores[index],
    })
}

/// The `k` best characters, best first.
pub fn topk(codebook: &Codebook, frame: &[f64], k: usize) -> Result<Vec<Decoded>, SimilarityError> {
    check_dim(codebook, frame.len())?;
    let mut scored: Vec<(usize, f64)> = (0..codebook.len())
        .map(|i| (i, codebook.dot(i, frame)))
        .collect();
    let k = k.min(scored.len());
    if k == 0 {
        return Ok(Vec::new());
    }
    scored.select_nth_unstable_by(k - 1, |&a, &b| rank(codebook, a, b));
    scored.truncate(k);
    scored.sort_by(|&a, &b| rank(codebook, a, b));
    Ok(scored
        .into_iter()
        .map(|(index, score)| Decoded {
            index,
            label: codebook.label(index).to_string(),
            score,
        })
        .collect())
}
