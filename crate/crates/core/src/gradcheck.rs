//! Numerical verification of the loss module: brute-force CTC equivalence and
//! central finite-difference gradient checks on seeded random instances.

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use crate::codebook::{build_codebook, CodeTables, Codebook};
use crate::embed::CodeParams;
use crate::ids::{DecompTree, RadicalId, StructureOp};
use crate::losses::{ce_sim_loss, ctc_brute_force, ctc_sim_loss, required_frames, LossError};
use crate::similarity::Frames;

/// Tolerance on |forward - brute force| in nats.
pub const ORACLE_TOLERANCE: f64 = 1e-9;
/// Finite-difference step.
pub const FD_STEP: f64 = 1e-4;
/// Tolerance on the relative gradient error.
pub const GRAD_TOLERANCE: f64 = 1e-5;

/// Central differences `(f(x + h e_i) - f(x - h e_i)) / 2h` for every coordinate.
pub fn central_difference<F>(x: &[f64], h: f64, mut f: F) -> Vec<f64>
where
    F: FnMut(&[f64]) -> f64,
{
    let mut probe = x.to_vec();
    (0..x.len())
        .map(|i| {
            let orig = probe[i];
            probe[i] = orig + h;
            let up = f(&probe);
            probe[i] = orig - h;
            let down = f(&probe);
            probe[i] = orig;
            (up - down) / (2.0 * h)
        })
        .collect()
}

/// `||a - b|| / max(||a||, ||b||)`, zero when both vanish.
pub fn relative_error(a: &[f64], b: &[f64]) -> f64 {
    let norm = |v: &[f64]| v.iter().map(|x| x * x).sum::<f64>().sqrt();
    let diff: f64 = a
        .iter()
        .zip(b)
        .map(|(x, y)| (x - y) * (x - y))
        .sum::<f64>()
        .sqrt();
    let scale = norm(a).max(norm(b));
    if scale == 0.0 {
        0.0
    } else {
        diff / scale
    }
}

/// A random CTC problem small enough for exhaustive enumeration.
#[derive(Debug, Clone)]
pub struct CtcInstance {
    pub codebook: Codebook,
    pub frames: Frames,
    pub label: Vec<usize>,
    pub temperature: f64,
}

/// Parameters with `t = 12`: one 4-bit structure slot and two 4-bit radical slots.
pub fn tiny_params() -> CodeParams {
    CodeParams::new(2, 4, 4, 2).expect("valid parameters")
}

/// Codebook of `n` distinct random characters under [`tiny_params`].
pub fn random_tiny_codebook(rng: &mut impl Rng, n: usize) -> Codebook {
    let radicals: Vec<RadicalId> = ["a", "b", "c", "d", "e", "f"]
        .iter()
        .map(|&s| s.into())
        .collect();
    let mut pool: Vec<DecompTree> = radicals.iter().cloned().map(DecompTree::Radical).collect();
    for op in [
        StructureOp::LeftRight,
        StructureOp::AboveBelow,
        StructureOp::FullSurround,
    ] {
        for l in &radicals {
            for r in &radicals {
                pool.push(DecompTree::node(
                    op,
                    DecompTree::Radical(l.clone()),
                    DecompTree::Radical(r.clone()),
                ));
            }
        }
    }
    pool.shuffle(rng);
    pool.truncate(n);
    let entries: Vec<(String, DecompTree)> = pool.into_iter().map(|t| (t.render(), t)).collect();
    let params = tiny_params();
    let seed = rng.random::<u64>();
    let tables = CodeTables::generate(entries.iter().map(|e| &e.1), &params, seed, 1)
        .expect("16 codes fit 6 radicals");
    build_codebook(&entries, &tables, &params, seed).expect("distinct trees give distinct codes")
}

impl CtcInstance {
    /// `N <= 6` characters, `W <= 8` frames with entries in `[-1, 1]`, a
    /// feasible label and a temperature in `[0.5, 2]`.
    pub fn random(rng: &mut impl Rng) -> Self {
        let n = rng.random_range(1..=6);
        let codebook = random_tiny_codebook(rng, n);
        let w = rng.random_range(1..=8);
        let frames = Frames::new(
            codebook.dim(),
            (0..w * codebook.dim())
                .map(|_| rng.random_range(-1.0..=1.0))
                .collect(),
        )
        .expect("whole frames");
        let mut label: Vec<usize> = (0..rng.random_range(0..=w))
            .map(|_| rng.random_range(0..n))
            .collect();
        while required_frames(&label) > w {
            label.pop();
        }
        let temperature = rng.random_range(0.5..=2.0);
        CtcInstance {
            codebook,
            frames,
            label,
            temperature,
        }
    }

    pub fn loss(&self) -> Result<f64, LossError> {
        ctc_sim_loss(&self.codebook, &self.frames, &self.label, self.temperature).map(|r| r.loss)
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct CheckLine {
    pub name: &'static str,
    pub instances: usize,
    pub max_error: f64,
    pub tolerance: f64,
    pub passed: bool,
}

#[derive(Debug, Clone, Serialize)]
pub struct CtcCheckReport {
    pub seed: u64,
    pub checks: Vec<CheckLine>,
}

impl CtcCheckReport {
    pub fn passed(&self) -> bool {
        self.checks.iter().all(|c| c.passed)
    }
}

/// Largest |forward - brute force| over `instances` random problems.
pub fn oracle_max_error(instances: usize, seed: u64) -> Result<f64, LossError> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut worst: f64 = 0.0;
    for _ in 0..instances {
        let inst = CtcInstance::random(&mut rng);
        let fast = inst.loss()?;
        let brute = ctc_brute_force(&inst.codebook, &inst.frames, &inst.label, inst.temperature)?;
        worst = worst.max((fast - brute).abs());
    }
    Ok(worst)
}

/// Largest relative error between analytic and finite-difference frame
/// gradients of the CTC loss.
pub fn ctc_gradient_max_error(instances: usize, seed: u64) -> Result<f64, LossError> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut worst: f64 = 0.0;
    for _ in 0..instances {
        let inst = CtcInstance::random(&mut rng);
        let analytic =
            ctc_sim_loss(&inst.codebook, &inst.frames, &inst.label, inst.temperature)?.grad_frames;
        let dim = inst.codebook.dim();
        let numeric = central_difference(inst.frames.data(), FD_STEP, |x| {
            let f = Frames::new(dim, x.to_vec()).expect("same shape");
            ctc_sim_loss(&inst.codebook, &f, &inst.label, inst.temperature)
                .map(|r| r.loss)
                .unwrap_or(f64::NAN)
        });
        worst = worst.max(relative_error(analytic.data(), &numeric));
    }
    Ok(worst)
}

/// Same as [`ctc_gradient_max_error`] for the cross-entropy loss on one frame.
pub fn ce_gradient_max_error(instances: usize, seed: u64) -> Result<f64, LossError> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut worst: f64 = 0.0;
    for _ in 0..instances {
        let n = rng.random_range(1..=6);
        let codebook = random_tiny_codebook(&mut rng, n);
        let frame: Vec<f64> = (0..codebook.dim())
            .map(|_| rng.random_range(-1.0..=1.0))
            .collect();
        let label = rng.random_range(0..n);
        let temperature = rng.random_range(0.5..=2.0);
        let (_, analytic) = ce_sim_loss(&codebook, &frame, label, temperature)?;
        let numeric = central_difference(&frame, FD_STEP, |x| {
            ce_sim_loss(&codebook, x, label, temperature)
                .map(|r| r.0)
                .unwrap_or(f64::NAN)
        });
        worst = worst.max(relative_error(&analytic, &numeric));
    }
    Ok(worst)
}

/// Run all three suites.
pub fn run_ctc_check(
    oracle_instances: usize,
    gradient_instances: usize,
    seed: u64,
) -> Result<CtcCheckReport, LossError> {
    let oracle = oracle_max_error(oracle_instances, seed)?;
    let ctc_grad = ctc_gradient_max_error(gradient_instances, seed.wrapping_add(1))?;
    let ce_grad = ce_gradient_max_error(gradient_instances, seed.wrapping_add(2))?;
    let line = |name, instances, max_error: f64, tolerance| CheckLine {
        name,
        instances,
        max_error,
        tolerance,
        passed: max_error <= tolerance,
    };
    Ok(CtcCheckReport {
        seed,
        checks: vec![
            line(
                "ctc_forward_vs_brute_force",
                oracle_instances,
                oracle,
                ORACLE_TOLERANCE,
            ),
            line(
                "ctc_gradient_finite_difference",
                gradient_instances,
                ctc_grad,
                GRAD_TOLERANCE,
            ),
            line(
                "ce_gradient_finite_difference",
                gradient_instances,
                ce_grad,
                GRAD_TOLERANCE,
            ),
        ],
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn central_difference_of_a_cubic() {
        let g = central_difference(&[1.0, -2.0], 1e-4, |x| x[0].powi(3) + 3.0 * x[1]);
        assert!((g[0] - 3.0).abs() < 1e-7);
        assert!((g[1] - 3.0).abs() < 1e-9);
    }

    #[test]
    fn relative_error_basics() {
        assert_eq!(relative_error(&[0.0], &[0.0]), 0.0);
        assert!((relative_error(&[1.0, 0.0], &[1.0, 0.1]) - 0.1 / 1.01f64.sqrt()).abs() < 1e-12);
    }

    #[test]
    fn small_check_passes() {
        let report = run_ctc_check(20, 5, 3).unwrap();
        assert!(report.passed(), "{report:?}");
    }
}
