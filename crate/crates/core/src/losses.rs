//! Similarity-based CTC and cross-entropy losses.
//!
//! Per-frame class probabilities are a temperature softmax over the inner
//! products of the frame with every codebook row; the blank row plays the CTC
//! blank. Gradients are taken with respect to the frames only: the codebook is
//! fixed. Everything here is `f64` and the CTC lattice runs in log space.

use thiserror::Error;

use crate::codebook::Codebook;
use crate::similarity::{argmax, check_finite, Frames, SimilarityError};

#[derive(Debug, Clone, PartialEq, Error)]
pub enum LossError {
    #[error("label of length {label_len} with {repeats} adjacent repeats needs {required} frames, got {frames}")]
    InfeasibleLabel {
        label_len: usize,
        repeats: usize,
        required: usize,
        frames: usize,
    },
    #[error("label index {label} outside 0..{classes}")]
    BadLabel { label: usize, classes: usize },
    #[error("temperature must be positive and finite, got {0}")]
    BadTemperature(f64),
    #[error("non-finite loss or input")]
    NonFinite,
    #[error("brute-force enumeration limited to 8 frames and 6 characters (got {frames} frames, {classes} characters)")]
    TooLarge { frames: usize, classes: usize },
    #[error(transparent)]
    Similarity(#[from] SimilarityError),
}

#[derive(Debug, Clone, PartialEq)]
pub struct CtcResult {
    /// Negative log-likelihood in nats.
    pub loss: f64,
    /// Gradient of `loss` with respect to every frame coordinate.
    pub grad_frames: Frames,
}

pub(crate) fn log_sum_exp(a: f64, b: f64) -> f64 {
    if a == f64::NEG_INFINITY {
        return b;
    }
    if b == f64::NEG_INFINITY {
        return a;
    }
    let m = a.max(b);
    m + ((a - m).exp() + (b - m).exp()).ln()
}

fn log_softmax_in_place(row: &mut [f64]) {
    let m = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let z: f64 = row.iter().map(|v| (v - m).exp()).sum::<f64>().ln() + m;
    for v in row.iter_mut() {
        *v -= z;
    }
}

/// Minimum number of frames for a CTC label: one per symbol plus a blank
/// between each pair of equal neighbours.
pub fn required_frames(label: &[usize]) -> usize {
    label.len() + repeats(label)
}

fn repeats(label: &[usize]) -> usize {
    label.windows(2).filter(|w| w[0] == w[1]).count()
}

fn check_label(label: &[usize], classes: usize, frames: usize) -> Result<(), LossError> {
    if let Some(&bad) = label.iter().find(|&&l| l >= classes) {
        return Err(LossError::BadLabel {
            label: bad,
            classes,
        });
    }
    let required = required_frames(label);
    if required > frames {
        return Err(LossError::InfeasibleLabel {
            label_len: label.len(),
            repeats: repeats(label),
            required,
            frames,
        });
    }
    Ok(())
}

fn check_temperature(temperature: f64) -> Result<(), LossError> {
    if temperature > 0.0 && temperature.is_finite() {
        Ok(())
    } else {
        Err(LossError::BadTemperature(temperature))
    }
}

/// Row-major `W x (N+1)` log-probabilities from similarity logits.
fn frame_log_probs(
    codebook: &Codebook,
    frames: &Frames,
    temperature: f64,
) -> Result<Vec<f64>, LossError> {
    if frames.dim() != codebook.dim() {
        return Err(SimilarityError::DimensionMismatch {
            expected: codebook.dim(),
            actual: frames.dim(),
        }
        .into());
    }
    check_finite(frames.data())?;
    check_temperature(temperature)?;
    let k = codebook.len() + 1;
    let mut out = Vec::with_capacity(frames.len() * k);
    for frame in frames.iter() {
        let start = out.len();
        out.extend((0..k).map(|i| codebook.dot(i, frame) / temperature));
        log_softmax_in_place(&mut out[start..]);
    }
    Ok(out)
}

/// CTC negative log-likelihood and its gradient with respect to the
/// pre-softmax logits, from row-major `W x classes` log-probabilities.
pub fn ctc_lattice(
    log_probs: &[f64],
    classes: usize,
    blank: usize,
    label: &[usize],
) -> Result<(f64, Vec<f64>), LossError> {
    let w = log_probs.len() / classes;
    let required = required_frames(label);
    if required > w {
        return Err(LossError::InfeasibleLabel {
            label_len: label.len(),
            repeats: repeats(label),
            required,
            frames: w,
        });
    }
    let s_len = 2 * label.len() + 1;
    let ext = |s: usize| {
        if s.is_multiple_of(2) {
            blank
        } else {
            label[s / 2]
        }
    };
    let lp = |t: usize, c: usize| log_probs[t * classes + c];
    // The skip transition s-2 -> s is allowed into a non-blank that differs
    // from the previous non-blank.
    let can_skip = |s: usize| s >= 2 && s % 2 == 1 && ext(s) != ext(s - 2);

    let neg = f64::NEG_INFINITY;
    let mut alpha = vec![neg; w * s_len];
    alpha[0] = lp(0, blank);
    if s_len > 1 {
        alpha[1] = lp(0, ext(1));
    }
    for t in 1..w {
        for s in 0..s_len {
            let prev = &alpha[(t - 1) * s_len..t * s_len];
            let mut acc = prev[s];
            if s >= 1 {
                acc = log_sum_exp(acc, prev[s - 1]);
            }
            if can_skip(s) {
                acc = log_sum_exp(acc, prev[s - 2]);
            }
            alpha[t * s_len + s] = if acc == neg { neg } else { acc + lp(t, ext(s)) };
        }
    }
    let last = (w - 1) * s_len;
    let mut log_likelihood = alpha[last + s_len - 1];
    if s_len > 1 {
        log_likelihood = log_sum_exp(log_likelihood, alpha[last + s_len - 2]);
    }
    if !log_likelihood.is_finite() {
        return Err(LossError::NonFinite);
    }

    let mut beta = vec![neg; w * s_len];
    beta[last + s_len - 1] = lp(w - 1, blank);
    if s_len > 1 {
        beta[last + s_len - 2] = lp(w - 1, ext(s_len - 2));
    }
    for t in (0..w - 1).rev() {
        for s in 0..s_len {
            let next = &beta[(t + 1) * s_len..(t + 2) * s_len];
            let mut acc = next[s];
            if s + 1 < s_len {
                acc = log_sum_exp(acc, next[s + 1]);
            }
            if s + 2 < s_len && can_skip(s + 2) {
                acc = log_sum_exp(acc, next[s + 2]);
            }
            beta[t * s_len + s] = if acc == neg { neg } else { acc + lp(t, ext(s)) };
        }
    }

    // d(-log p)/d(logit) = softmax - posterior occupancy of each class.
    let mut grad = vec![0.0; w * classes];
    for t in 0..w {
        let mut occupancy = vec![neg; classes];
        for s in 0..s_len {
            let a = alpha[t * s_len + s];
            let b = beta[t * s_len + s];
            if a == neg || b == neg {
                continue;
            }
            let c = ext(s);
            occupancy[c] = log_sum_exp(occupancy[c], a + b - lp(t, c));
        }
        for c in 0..classes {
            let posterior = if occupancy[c] == neg {
                0.0
            } else {
                (occupancy[c] - log_likelihood).exp()
            };
            grad[t * classes + c] = lp(t, c).exp() - posterior;
        }
    }
    Ok((-log_likelihood, grad))
}

/// Similarity-based CTC loss over `frames` for a label of character indices.
pub fn ctc_sim_loss(
    codebook: &Codebook,
    frames: &Frames,
    label: &[usize],
    temperature: f64,
) -> Result<CtcResult, LossError> {
    check_label(label, codebook.len(), frames.len())?;
    let classes = codebook.len() + 1;
    let log_probs = frame_log_probs(codebook, frames, temperature)?;
    let (loss, grad_logits) = ctc_lattice(&log_probs, classes, codebook.blank_index(), label)?;
    let mut grad_frames = Frames::zeros(codebook.dim(), frames.len());
    for t in 0..frames.len() {
        let out = grad_frames.frame_mut(t);
        for c in 0..classes {
            let g = grad_logits[t * classes + c] / temperature;
            if g != 0.0 {
                codebook.add_row_scaled(c, g, out);
            }
        }
    }
    if !loss.is_finite() || grad_frames.data().iter().any(|v| !v.is_finite()) {
        return Err(LossError::NonFinite);
    }
    Ok(CtcResult { loss, grad_frames })
}

/// Reference CTC loss by enumerating every frame-level path and keeping those
/// that collapse to `label`.
pub fn ctc_brute_force(
    codebook: &Codebook,
    frames: &Frames,
    label: &[usize],
    temperature: f64,
) -> Result<f64, LossError> {
    let w = frames.len();
    let n = codebook.len();
    if w > 8 || n > 6 {
        return Err(LossError::TooLarge {
            frames: w,
            classes: n,
        });
    }
    check_label(label, n, w)?;
    let classes = n + 1;
    let blank = codebook.blank_index();
    let log_probs = frame_log_probs(codebook, frames, temperature)?;

    let mut path = vec![0usize; w];
    let mut total = f64::NEG_INFINITY;
    'paths: loop {
        let mut emitted = 0;
        let mut prev = blank;
        let mut matches = true;
        for &sym in &path {
            if sym != blank && sym != prev {
                if emitted >= label.len() || label[emitted] != sym {
                    matches = false;
                    break;
                }
                emitted += 1;
            }
            prev = sym;
        }
        if matches && emitted == label.len() {
            let lp: f64 = path
                .iter()
                .enumerate()
                .map(|(t, &c)| log_probs[t * classes + c])
                .sum();
            total = log_sum_exp(total, lp);
        }
        for slot in path.iter_mut() {
            *slot += 1;
            if *slot < classes {
                continue 'paths;
            }
            *slot = 0;
        }
        break;
    }
    if total == f64::NEG_INFINITY {
        return Err(LossError::NonFinite);
    }
    Ok(-total)
}

/// Similarity-based cross-entropy for one frame over the character rows
/// (blank excluded). Returns the loss and its gradient with respect to the frame.
pub fn ce_sim_loss(
    codebook: &Codebook,
    frame: &[f64],
    label: usize,
    temperature: f64,
) -> Result<(f64, Vec<f64>), LossError> {
    let n = codebook.len();
    if label >= n {
        return Err(LossError::BadLabel { label, classes: n });
    }
    if frame.len() != codebook.dim() {
        return Err(SimilarityError::DimensionMismatch {
            expected: codebook.dim(),
            actual: frame.len(),
        }
        .into());
    }
    check_finite(frame)?;
    check_temperature(temperature)?;
    let mut log_probs: Vec<f64> = (0..n)
        .map(|i| codebook.dot(i, frame) / temperature)
        .collect();
    log_softmax_in_place(&mut log_probs);
    let loss = -log_probs[label];
    let mut grad = vec![0.0; frame.len()];
    for (i, lp) in log_probs.iter().enumerate() {
        let g = (lp.exp() - if i == label { 1.0 } else { 0.0 }) / temperature;
        if g != 0.0 {
            codebook.add_row_scaled(i, g, &mut grad);
        }
    }
    if !loss.is_finite() {
        return Err(LossError::NonFinite);
    }
    Ok((loss.max(0.0), grad))
}

/// Merge repeated symbols, then drop blanks.
pub fn collapse(path: &[usize], blank: usize) -> Vec<usize> {
    let mut out = Vec::new();
    let mut prev = None;
    for &sym in path {
        if Some(sym) != prev && sym != blank {
            out.push(sym);
        }
        prev = Some(sym);
    }
    out
}

/// Greedy CTC decoding: per-frame best row (blank included), then collapse.
/// The softmax temperature does not change the per-frame argmax.
pub fn best_path_decode(
    codebook: &Codebook,
    frames: &Frames,
    temperature: f64,
) -> Result<Vec<usize>, LossError> {
    if frames.dim() != codebook.dim() {
        return Err(SimilarityError::DimensionMismatch {
            expected: codebook.dim(),
            actual: frames.dim(),
        }
        .into());
    }
    check_finite(frames.data())?;
    check_temperature(temperature)?;
    let rows = codebook.len() + 1;
    let path: Vec<usize> = frames
        .iter()
        .map(|frame| {
            let scores: Vec<f64> = (0..rows).map(|i| codebook.dot(i, frame)).collect();
            argmax(codebook, &scores, rows)
        })
        .collect();
    Ok(collapse(&path, codebook.blank_index()))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::codebook::{build_codebook, CodeTables, Trit};
    use crate::embed::CodeParams;
    use crate::ids::parse_ids;

    fn small_codebook() -> Codebook {
        let p = CodeParams::new(2, 4, 4, 2).unwrap();
        let e: Vec<_> = [("a", "a"), ("b", "⿰ab"), ("c", "⿱bc")]
            .iter()
            .map(|(c, s)| (c.to_string(), parse_ids(s).unwrap()))
            .collect();
        let tables = CodeTables::generate(e.iter().map(|x| &x.1), &p, 17, 1).unwrap();
        build_codebook(&e, &tables, &p, 17).unwrap()
    }

    fn frames(cb: &Codebook, w: usize, salt: u64) -> Frames {
        let data = (0..w * cb.dim())
            .map(|i| {
                let x = ((i as u64 + 1) * 2654435761 + salt * 97) % 1000;
                x as f64 / 500.0 - 1.0
            })
            .collect();
        Frames::new(cb.dim(), data).unwrap()
    }

    fn probs(cb: &Codebook, frame: &[f64], temperature: f64) -> Vec<f64> {
        let s: Vec<f64> = (0..=cb.len())
            .map(|i| cb.dot(i, frame) / temperature)
            .collect();
        let z: f64 = s.iter().map(|v| v.exp()).sum();
        s.iter().map(|v| v.exp() / z).collect()
    }

    #[test]
    fn single_frame_closed_form() {
        let cb = small_codebook();
        let f = frames(&cb, 1, 3);
        let p = probs(&cb, f.frame(0), 1.0);
        let r = ctc_sim_loss(&cb, &f, &[1], 1.0).unwrap();
        assert!((r.loss + p[1].ln()).abs() < 1e-12);
        let brute = ctc_brute_force(&cb, &f, &[1], 1.0).unwrap();
        assert!((brute + p[1].ln()).abs() < 1e-12);
    }

    #[test]
    fn two_frames_three_alignments() {
        let cb = small_codebook();
        let f = frames(&cb, 2, 5);
        let (p1, p2) = (probs(&cb, f.frame(0), 0.7), probs(&cb, f.frame(1), 0.7));
        let blank = cb.blank_index();
        let c = 2;
        let likelihood = p1[c] * p2[c] + p1[blank] * p2[c] + p1[c] * p2[blank];
        let r = ctc_sim_loss(&cb, &f, &[c], 0.7).unwrap();
        assert!((r.loss + likelihood.ln()).abs() < 1e-12);
    }

    #[test]
    fn empty_label_is_all_blank() {
        let cb = small_codebook();
        let f = frames(&cb, 3, 1);
        let expected: f64 = f
            .iter()
            .map(|fr| -probs(&cb, fr, 1.0)[cb.blank_index()].ln())
            .sum();
        let r = ctc_sim_loss(&cb, &f, &[], 1.0).unwrap();
        assert!((r.loss - expected).abs() < 1e-12);
    }

    #[test]
    fn infeasible_labels() {
        let cb = small_codebook();
        let f = frames(&cb, 2, 1);
        assert!(matches!(
            ctc_sim_loss(&cb, &f, &[0, 0], 1.0),
            Err(LossError::InfeasibleLabel {
                required: 3,
                frames: 2,
                ..
            })
        ));
        assert!(matches!(
            ctc_brute_force(&cb, &f, &[0, 1, 2], 1.0),
            Err(LossError::InfeasibleLabel { .. })
        ));
        assert!(matches!(
            ctc_sim_loss(&cb, &f, &[3], 1.0),
            Err(LossError::BadLabel { .. })
        ));
        assert!(matches!(
            ctc_sim_loss(&cb, &f, &[0], 0.0),
            Err(LossError::BadTemperature(_))
        ));
    }

    #[test]
    fn brute_force_bounds() {
        let cb = small_codebook();
        let f = frames(&cb, 9, 1);
        assert!(matches!(
            ctc_brute_force(&cb, &f, &[0], 1.0),
            Err(LossError::TooLarge { .. })
        ));
    }

    #[test]
    fn uniform_limit() {
        // With an enormous temperature every frame is uniform over N+1 classes,
        // and a label with no repeats and W = L has exactly one alignment.
        let cb = small_codebook();
        let f = frames(&cb, 3, 2);
        let r = ctc_sim_loss(&cb, &f, &[0, 1, 2], 1e12).unwrap();
        assert!((r.loss - 3.0 * 4f64.ln()).abs() < 1e-9);
    }

    #[test]
    fn ce_single_row_is_zero() {
        let p = CodeParams::new(2, 4, 4, 2).unwrap();
        let e = vec![("a".to_string(), parse_ids("a").unwrap())];
        let tables = CodeTables::generate(e.iter().map(|x| &x.1), &p, 1, 1).unwrap();
        let cb = build_codebook(&e, &tables, &p, 1).unwrap();
        let (loss, grad) = ce_sim_loss(&cb, &[0.3; 12], 0, 1.0).unwrap();
        assert_eq!(loss, 0.0);
        assert!(grad.iter().all(|g| g.abs() < 1e-15));
    }

    #[test]
    fn ce_saturates_at_low_temperature() {
        let cb = small_codebook();
        let frame: Vec<f64> = cb.row(1).iter().map(|&v: &Trit| v as f64).collect();
        let (loss, _) = ce_sim_loss(&cb, &frame, 1, 1e-3).unwrap();
        assert!(loss < 1e-12);
    }

    #[test]
    fn ce_matches_hand_softmax() {
        let cb = small_codebook();
        let frame = frames(&cb, 1, 8).frame(0).to_vec();
        let s: Vec<f64> = (0..3)
            .map(|i| {
                cb.row(i)
                    .iter()
                    .zip(&frame)
                    .map(|(&a, b)| a as f64 * b)
                    .sum::<f64>()
                    / 2.0
            })
            .collect();
        let z: f64 = s.iter().map(|v| v.exp()).sum();
        let expected = -(s[2].exp() / z).ln();
        let (loss, _) = ce_sim_loss(&cb, &frame, 2, 2.0).unwrap();
        assert!((loss - expected).abs() < 1e-12);
    }

    #[test]
    fn collapse_rules() {
        assert_eq!(collapse(&[0, 0, 9, 0], 9), vec![0, 0]);
        assert_eq!(collapse(&[0, 9, 1], 9), vec![0, 1]);
        assert_eq!(collapse(&[9, 9], 9), Vec::<usize>::new());
        assert_eq!(collapse(&[1, 1, 2, 2, 1], 9), vec![1, 2, 1]);
    }

    #[test]
    fn best_path_on_clean_frames() {
        let cb = small_codebook();
        let real = |row: &[Trit]| row.iter().map(|&v| v as f64).collect::<Vec<f64>>();
        let f = Frames::from_frames(
            cb.dim(),
            &[real(cb.row(0)), real(cb.blank_row()), real(cb.row(2))],
        )
        .unwrap();
        assert_eq!(best_path_decode(&cb, &f, 1.0).unwrap(), vec![0, 2]);
        let f = Frames::from_frames(
            cb.dim(),
            &[
                real(cb.row(0)),
                real(cb.row(0)),
                real(cb.blank_row()),
                real(cb.row(0)),
            ],
        )
        .unwrap();
        assert_eq!(best_path_decode(&cb, &f, 1.0).unwrap(), vec![0, 0]);
    }
}
