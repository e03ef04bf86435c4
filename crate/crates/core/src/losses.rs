//! Training-side alignment quantities: the alignment-region attention mask,
//! the OAS loss with its gradients, and the progress-bar loss.
//!
//! With the mask applied, every speech row of the alignment block is a
//! softmax over exactly the `L_t` text columns, so the OAS denominator is the
//! constant `L_s` and the objective reduces to
//!
//! ```text
//! L_oas = -(1 / L_s) * sum_i log A[i, P[i]]
//! ```
//!
//! The Viterbi path is recomputed on every call and held constant for
//! differentiation; gradients only flow through the path cells.

use crate::error::{Error, Result};
use crate::matrix::Matrix;
use crate::scalar::Scalar;
use crate::store::SequenceLayout;
use crate::viterbi::{optimal_path, AlignmentPath};

/// Probability floor used when clamping is switched on for trainer use.
pub const DEFAULT_PROBABILITY_FLOOR: f64 = 1e-8;

/// `seq_len x seq_len` boolean mask, `true` where attention is allowed.
///
/// Speech-query rows may only attend to the text span; every other row keeps
/// the causal pattern `col <= row`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct AlignmentMask {
    seq_len: usize,
    allowed: Vec<bool>,
}

impl AlignmentMask {
    pub fn seq_len(&self) -> usize {
        self.seq_len
    }

    pub fn is_allowed(&self, row: usize, col: usize) -> bool {
        self.allowed[row * self.seq_len + col]
    }

    pub fn row(&self, row: usize) -> &[bool] {
        &self.allowed[row * self.seq_len..(row + 1) * self.seq_len]
    }
}

pub fn alignment_mask(layout: &SequenceLayout) -> AlignmentMask {
    let n = layout.seq_len();
    let speech = layout.speech_span();
    let text = layout.text_span();
    let mut allowed = vec![false; n * n];
    for i in 0..n {
        let row = &mut allowed[i * n..(i + 1) * n];
        if speech.contains(&i) {
            row[text.clone()].iter_mut().for_each(|v| *v = true);
        } else {
            row[..=i].iter_mut().for_each(|v| *v = true);
        }
    }
    AlignmentMask {
        seq_len: n,
        allowed,
    }
}

/// Row softmax restricted to allowed columns; disallowed entries are 0.
pub fn masked_row_softmax<T: Scalar>(
    logits: &Matrix<T>,
    mask: &AlignmentMask,
) -> Result<Matrix<T>> {
    if logits.rows() != mask.seq_len() || logits.cols() != mask.seq_len() {
        return Err(Error::shape(
            "logits vs mask",
            format!("{0}x{0}", mask.seq_len()),
            format!("{}x{}", logits.rows(), logits.cols()),
        ));
    }
    logits.check_finite("logits")?;
    let mut out = Matrix::zeros(logits.rows(), logits.cols());
    for i in 0..logits.rows() {
        let allowed = mask.row(i);
        let z = logits.row(i);
        let max = z
            .iter()
            .zip(allowed)
            .filter(|(_, &ok)| ok)
            .map(|(v, _)| v.widen())
            .fold(f64::NEG_INFINITY, f64::max);
        let exps: Vec<f64> = z
            .iter()
            .zip(allowed)
            .map(|(v, &ok)| if ok { (v.widen() - max).exp() } else { 0.0 })
            .collect();
        let sum: f64 = exps.iter().sum();
        for (o, e) in out.row_mut(i).iter_mut().zip(exps) {
            *o = T::narrow(e / sum);
        }
    }
    Ok(out)
}

/// Plain row softmax over all columns, computed in f64.
pub fn row_softmax<T: Scalar>(logits: &Matrix<T>) -> Result<Matrix<T>> {
    logits.check_finite("logits")?;
    let mut out = Matrix::zeros(logits.rows(), logits.cols());
    for i in 0..logits.rows() {
        let z = logits.row(i);
        let max = z
            .iter()
            .map(|v| v.widen())
            .fold(f64::NEG_INFINITY, f64::max);
        let exps: Vec<f64> = z.iter().map(|v| (v.widen() - max).exp()).collect();
        let sum: f64 = exps.iter().sum();
        for (o, e) in out.row_mut(i).iter_mut().zip(exps) {
            *o = T::narrow(e / sum);
        }
    }
    Ok(out)
}

#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct OasLossOptions {
    /// When set, path probabilities below the floor are clamped to it and
    /// receive zero gradient. Off by default so collapsed heads surface as
    /// errors.
    pub floor: Option<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct OasLoss {
    pub loss: f64,
    pub path: AlignmentPath,
}

/// Loss with a freshly computed optimal path.
pub fn oas_loss<T: Scalar>(a: &Matrix<T>) -> Result<OasLoss> {
    oas_loss_with(a, &OasLossOptions::default())
}

pub fn oas_loss_with<T: Scalar>(a: &Matrix<T>, opts: &OasLossOptions) -> Result<OasLoss> {
    a.check_non_negative("alignment")?;
    let path = optimal_path(a)?;
    let loss = oas_loss_on_path_with(a, &path, opts)?;
    Ok(OasLoss { loss, path })
}

/// Loss along a given (frozen) path.
pub fn oas_loss_on_path<T: Scalar>(a: &Matrix<T>, path: &AlignmentPath) -> Result<f64> {
    oas_loss_on_path_with(a, path, &OasLossOptions::default())
}

pub fn oas_loss_on_path_with<T: Scalar>(
    a: &Matrix<T>,
    path: &AlignmentPath,
    opts: &OasLossOptions,
) -> Result<f64> {
    path.check_shape(a)?;
    let mut sum = 0.0;
    for (i, &j) in path.indices().iter().enumerate() {
        let v = a.get(i, j).widen();
        let v = match opts.floor {
            Some(f) => v.max(f),
            None if v <= 0.0 => return Err(Error::ZeroProbability { row: i, col: j }),
            None => v,
        };
        sum += v.ln();
    }
    Ok(-sum / path.len() as f64)
}

/// `d L / d A`: `-1 / (L_s * A[i, P[i]])` on path cells, 0 elsewhere.
pub fn oas_loss_grad_wrt_a<T: Scalar>(a: &Matrix<T>, path: &AlignmentPath) -> Result<Matrix<T>> {
    oas_loss_grad_wrt_a_with(a, path, &OasLossOptions::default())
}

pub fn oas_loss_grad_wrt_a_with<T: Scalar>(
    a: &Matrix<T>,
    path: &AlignmentPath,
    opts: &OasLossOptions,
) -> Result<Matrix<T>> {
    path.check_shape(a)?;
    let ls = path.len() as f64;
    let mut g = Matrix::zeros(a.rows(), a.cols());
    for (i, &j) in path.indices().iter().enumerate() {
        let v = a.get(i, j).widen();
        let gij = match opts.floor {
            Some(f) if v < f => 0.0,
            None if v <= 0.0 => return Err(Error::ZeroProbability { row: i, col: j }),
            _ => -1.0 / (ls * v),
        };
        g.set(i, j, T::narrow(gij));
    }
    Ok(g)
}

/// Loss as a function of alignment-block logits, `A = row_softmax(Z)`.
pub fn oas_loss_from_logits<T: Scalar>(z: &Matrix<T>, path: &AlignmentPath) -> Result<f64> {
    path.check_shape(z)?;
    z.check_finite("logits")?;
    let mut sum = 0.0;
    for (i, &j) in path.indices().iter().enumerate() {
        let row = z.row(i);
        let max = row
            .iter()
            .map(|v| v.widen())
            .fold(f64::NEG_INFINITY, f64::max);
        let lse = max
            + row
                .iter()
                .map(|v| (v.widen() - max).exp())
                .sum::<f64>()
                .ln();
        sum += row[j].widen() - lse;
    }
    Ok(-sum / path.len() as f64)
}

/// `d L / d Z[i, k] = (A[i, k] - [k == P[i]]) / L_s`; each row sums to 0.
pub fn oas_loss_grad_wrt_logits<T: Scalar>(
    z: &Matrix<T>,
    path: &AlignmentPath,
) -> Result<Matrix<T>> {
    path.check_shape(z)?;
    let a = row_softmax(&z.widen())?;
    let ls = path.len() as f64;
    Ok(Matrix::from_fn(z.rows(), z.cols(), |i, k| {
        let hit = if path.indices()[i] == k { 1.0 } else { 0.0 };
        T::narrow((a.get(i, k) - hit) / ls)
    }))
}

/// Mean of per-utterance losses, each normalized by its own `L_s`.
pub fn batch_oas_loss<T: Scalar>(batch: &[Matrix<T>]) -> Result<f64> {
    if batch.is_empty() {
        return Err(Error::Empty("loss batch"));
    }
    let mut sum = 0.0;
    for a in batch {
        sum += oas_loss(a)?.loss;
    }
    Ok(sum / batch.len() as f64)
}

fn check_progress_inputs<T: Scalar>(p_hat: &[T], p: &[T], valid: &[bool]) -> Result<()> {
    if p.len() != p_hat.len() {
        return Err(Error::LengthMismatch {
            context: "progress targets vs predictions",
            expected: p_hat.len(),
            found: p.len(),
        });
    }
    if valid.len() != p_hat.len() {
        return Err(Error::LengthMismatch {
            context: "progress valid mask vs predictions",
            expected: p_hat.len(),
            found: valid.len(),
        });
    }
    if !valid.iter().any(|&v| v) {
        return Err(Error::Empty("no valid progress positions"));
    }
    for (k, (a, b)) in p_hat.iter().zip(p).enumerate() {
        if valid[k] && !(a.is_finite() && b.is_finite()) {
            return Err(Error::InvalidValue {
                location: format!("progress[{k}]"),
                value: if a.is_finite() { b.widen() } else { a.widen() },
                reason: "non-finite progress value",
            });
        }
    }
    Ok(())
}

fn valid_positions(valid: &[bool]) -> Vec<usize> {
    valid
        .iter()
        .enumerate()
        .filter_map(|(k, &v)| v.then_some(k))
        .collect()
}

/// L1 distance on valid positions plus the penalty `max(p_hat[a] - p_hat[b], 0)`
/// for every pair of consecutive valid positions `a < b`.
pub fn progress_loss<T: Scalar>(p_hat: &[T], p: &[T], valid: &[bool]) -> Result<f64> {
    check_progress_inputs(p_hat, p, valid)?;
    let idx = valid_positions(valid);
    let l1: f64 = idx
        .iter()
        .map(|&k| (p_hat[k].widen() - p[k].widen()).abs())
        .sum();
    let backwards: f64 = idx
        .windows(2)
        .map(|w| (p_hat[w[0]].widen() - p_hat[w[1]].widen()).max(0.0))
        .sum();
    Ok(l1 + backwards)
}

/// Subgradient of [`progress_loss`] with `sign(0) = 0` and no contribution
/// from pairs that are exactly level. Invalid positions get 0.
pub fn progress_loss_grad<T: Scalar>(p_hat: &[T], p: &[T], valid: &[bool]) -> Result<Vec<T>> {
    check_progress_inputs(p_hat, p, valid)?;
    let idx = valid_positions(valid);
    let mut g = vec![0.0f64; p_hat.len()];
    for &k in &idx {
        let d = p_hat[k].widen() - p[k].widen();
        g[k] = if d > 0.0 {
            1.0
        } else if d < 0.0 {
            -1.0
        } else {
            0.0
        };
    }
    for w in idx.windows(2) {
        let (a, b) = (w[0], w[1]);
        if p_hat[a] > p_hat[b] {
            g[a] += 1.0;
            g[b] -= 1.0;
        }
    }
    Ok(g.into_iter().map(T::narrow).collect())
}
