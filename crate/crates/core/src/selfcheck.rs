//! Built-in verification suites: Viterbi against exhaustive search, and the
//! analytic loss gradients against central finite differences.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::Serialize;

use crate::error::Result;
use crate::gradcheck::{central_difference, relative_error};
use crate::losses::{
    alignment_mask, masked_row_softmax, oas_loss_from_logits, oas_loss_grad_wrt_a,
    oas_loss_grad_wrt_logits, oas_loss_on_path, progress_loss, progress_loss_grad, row_softmax,
};
use crate::matrix::Matrix;
use crate::store::SequenceLayout;
use crate::viterbi::{brute_force_optimal_path, optimal_path, path_score};

pub const MAX_EXHAUSTIVE_ROWS: usize = 6;
pub const MAX_EXHAUSTIVE_COLS: usize = 4;
/// Step for central differences.
pub const FD_STEP: f64 = 1e-6;
/// Accepted relative gradient error.
pub const FD_TOLERANCE: f64 = 1e-5;
/// Accepted gap between DP and exhaustive path scores.
pub const SCORE_TOLERANCE: f64 = 1e-12;

#[derive(Debug, Clone, Serialize)]
pub struct SuiteReport {
    pub name: &'static str,
    pub instances: usize,
    pub failures: usize,
    pub max_error: f64,
    pub tolerance: f64,
}

impl SuiteReport {
    fn new(name: &'static str, tolerance: f64) -> Self {
        Self {
            name,
            instances: 0,
            failures: 0,
            max_error: 0.0,
            tolerance,
        }
    }

    fn record(&mut self, err: f64) {
        self.instances += 1;
        // NaN counts as a failure
        if err.is_nan() || err > self.tolerance {
            self.failures += 1;
        }
        if err.is_nan() || err > self.max_error {
            self.max_error = err;
        }
    }

    pub fn passed(&self) -> bool {
        self.failures == 0 && self.instances > 0
    }
}

fn score_gap(a: &Matrix<f64>) -> Result<f64> {
    let dp = path_score(a, &optimal_path(a)?)?;
    let bf = path_score(a, &brute_force_optimal_path(a)?)?;
    Ok((dp - bf).abs())
}

/// Every one-hot-per-row matrix of the given shape, in lexicographic order of
/// the column choices.
pub fn one_hot_patterns(rows: usize, cols: usize) -> impl Iterator<Item = Matrix<f64>> {
    let total = cols.pow(rows as u32);
    (0..total).map(move |mut code| {
        let mut choice = vec![0usize; rows];
        for c in choice.iter_mut().rev() {
            *c = code % cols;
            code /= cols;
        }
        Matrix::from_fn(rows, cols, |i, j| if choice[i] == j { 1.0 } else { 0.0 })
    })
}

/// DP vs. exhaustive search on every shape up to 6x4: `per_shape` seeded
/// random matrices per shape plus all one-hot-per-row patterns.
pub fn viterbi_suite(per_shape: usize, seed: u64) -> Result<SuiteReport> {
    let mut report = SuiteReport::new("viterbi_vs_exhaustive", SCORE_TOLERANCE);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    for rows in 1..=MAX_EXHAUSTIVE_ROWS {
        for cols in 1..=MAX_EXHAUSTIVE_COLS {
            for _ in 0..per_shape {
                let a = Matrix::from_fn(rows, cols, |_, _| rng.random::<f64>());
                report.record(score_gap(&a)?);
            }
            for a in one_hot_patterns(rows, cols) {
                report.record(score_gap(&a)?);
            }
        }
    }
    Ok(report)
}

fn random_logits(rng: &mut ChaCha8Rng, rows: usize, cols: usize) -> Matrix<f64> {
    Matrix::from_fn(rows, cols, |_, _| rng.sample::<f64, _>(StandardNormal))
}

/// Gradient of the OAS loss with respect to probabilities and to logits, path
/// frozen, against central differences.
pub fn oas_gradient_suites(n: usize, seed: u64) -> Result<(SuiteReport, SuiteReport)> {
    let mut wrt_a = SuiteReport::new("oas_loss_grad_wrt_a", FD_TOLERANCE);
    let mut wrt_z = SuiteReport::new("oas_loss_grad_wrt_logits", FD_TOLERANCE);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    for _ in 0..n {
        let rows = rng.random_range(1..=8);
        let cols = rng.random_range(1..=6);
        let z = random_logits(&mut rng, rows, cols);
        let a = row_softmax(&z)?;
        let path = optimal_path(&a)?;

        let g = oas_loss_grad_wrt_a(&a, &path)?;
        let fd = central_difference(
            |x| {
                let m = Matrix::new(rows, cols, x.to_vec()).expect("shape");
                oas_loss_on_path(&m, &path).expect("positive path entries")
            },
            a.as_slice(),
            FD_STEP,
        );
        wrt_a.record(relative_error(g.as_slice(), &fd));

        let g = oas_loss_grad_wrt_logits(&z, &path)?;
        let fd = central_difference(
            |x| {
                let m = Matrix::new(rows, cols, x.to_vec()).expect("shape");
                oas_loss_from_logits(&m, &path).expect("finite logits")
            },
            z.as_slice(),
            FD_STEP,
        );
        wrt_z.record(relative_error(g.as_slice(), &fd));
    }
    Ok((wrt_a, wrt_z))
}

/// Random predictions/targets/valid mask kept at least `gap` away from every
/// kink of the progress loss.
pub fn progress_instance(rng: &mut ChaCha8Rng, gap: f64) -> (Vec<f64>, Vec<f64>, Vec<bool>) {
    loop {
        let len = rng.random_range(1..=12);
        let p_hat: Vec<f64> = (0..len).map(|_| rng.random::<f64>()).collect();
        let p: Vec<f64> = (0..len).map(|_| rng.random::<f64>()).collect();
        let valid: Vec<bool> = (0..len).map(|_| rng.random_bool(0.7)).collect();
        let idx: Vec<usize> = (0..len).filter(|&k| valid[k]).collect();
        if idx.is_empty() {
            continue;
        }
        let clear_l1 = idx.iter().all(|&k| (p_hat[k] - p[k]).abs() > gap);
        let clear_pairs = idx
            .windows(2)
            .all(|w| (p_hat[w[0]] - p_hat[w[1]]).abs() > gap);
        if clear_l1 && clear_pairs {
            return (p_hat, p, valid);
        }
    }
}

pub fn progress_gradient_suite(n: usize, seed: u64) -> Result<SuiteReport> {
    let mut report = SuiteReport::new("progress_loss_grad", FD_TOLERANCE);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    for _ in 0..n {
        let (p_hat, p, valid) = progress_instance(&mut rng, 1e-3);
        let g = progress_loss_grad(&p_hat, &p, &valid)?;
        let fd = central_difference(
            |x| progress_loss(x, &p, &valid).expect("valid inputs"),
            &p_hat,
            FD_STEP,
        );
        report.record(relative_error(&g, &fd));
    }
    Ok(report)
}

/// Masked softmax over random logits: the alignment block's total mass must
/// equal `L_s`.
pub fn masking_suite(n: usize, seed: u64) -> Result<SuiteReport> {
    let mut report = SuiteReport::new("masked_denominator_equals_ls", 1e-10);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    for _ in 0..n {
        let prompt = rng.random_range(0..4);
        let lt = rng.random_range(1..=10);
        let ls = rng.random_range(1..=20);
        let tail = rng.random_range(0..3);
        let seq = prompt + lt + ls + tail;
        let layout = SequenceLayout::new(seq, prompt..prompt + lt, prompt + lt..prompt + lt + ls)?;
        let z = Matrix::from_fn(seq, seq, |_, _| 3.0 * rng.sample::<f64, _>(StandardNormal));
        let a = masked_row_softmax(&z, &alignment_mask(&layout))?;
        let block = a.block(prompt + lt, prompt + lt + ls, prompt, prompt + lt)?;
        report.record((block.total() - ls as f64).abs());
    }
    Ok(report)
}

/// Everything `selfcheck` runs, with the default sizes.
pub fn run_all(seed: u64) -> Result<Vec<SuiteReport>> {
    let (a, z) = oas_gradient_suites(200, seed ^ 0x0a)?;
    Ok(vec![
        viterbi_suite(25, seed)?,
        a,
        z,
        progress_gradient_suite(200, seed ^ 0x0b)?,
        masking_suite(100, seed ^ 0x0c)?,
    ])
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn one_hot_enumeration_counts() {
        assert_eq!(one_hot_patterns(3, 2).count(), 8);
        let first = one_hot_patterns(2, 3).next().unwrap();
        assert_eq!(first.as_slice(), &[1.0, 0.0, 0.0, 1.0, 0.0, 0.0]);
    }

    #[test]
    fn small_suites_pass() {
        assert!(viterbi_suite(2, 1).unwrap().passed());
        let (a, z) = oas_gradient_suites(10, 2).unwrap();
        assert!(a.passed(), "{a:?}");
        assert!(z.passed(), "{z:?}");
        assert!(progress_gradient_suite(10, 3).unwrap().passed());
        assert!(masking_suite(10, 4).unwrap().passed());
    }

    #[test]
    fn nan_counts_as_failure() {
        let mut r = SuiteReport::new("x", 1.0);
        r.record(f64::NAN);
        assert!(!r.passed());
    }
}
