//! Chain-of-thought supervision targets built from teacher alignments.
//!
//! Durations come from the teacher's optimal path. From them we build the
//! fully repeated text target, the sparse target that reveals each text token
//! once per duration block (interior slots preferred) and masks the rest, the
//! cumulative progress values, and the progress targets placed on the
//! revealed slots.

use log::warn;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::matrix::Matrix;
use crate::scalar::Scalar;
use crate::viterbi::{optimal_path, path_to_durations, AlignmentPath, DurationVector};

/// Serialized id of the mask sentinel. Never a vocabulary id.
pub const MASK_ID: i64 = -1;

/// Target text token ids (opaque).
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct TokenSequence(Vec<u64>);

impl TokenSequence {
    pub fn new(tokens: Vec<u64>) -> Result<Self> {
        if tokens.is_empty() {
            return Err(Error::Empty("token sequence"));
        }
        Ok(Self(tokens))
    }

    pub fn as_slice(&self) -> &[u64] {
        &self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }
}

/// A revealed slot of the sparse target.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Mark {
    pub token_index: usize,
    pub token: u64,
}

/// Sparse repeated target: one revealed slot per non-empty duration block.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct SparseTarget {
    slots: Vec<Option<Mark>>,
    n_tokens: usize,
}

impl SparseTarget {
    pub fn slots(&self) -> &[Option<Mark>] {
        &self.slots
    }

    pub fn len(&self) -> usize {
        self.slots.len()
    }

    pub fn is_empty(&self) -> bool {
        self.slots.is_empty()
    }

    /// Number of text tokens (blocks, including empty ones).
    pub fn n_tokens(&self) -> usize {
        self.n_tokens
    }

    pub fn valid_mask(&self) -> Vec<bool> {
        self.slots.iter().map(Option::is_some).collect()
    }

    pub fn marks(&self) -> impl Iterator<Item = (usize, Mark)> + '_ {
        self.slots
            .iter()
            .enumerate()
            .filter_map(|(s, m)| m.map(|m| (s, m)))
    }

    /// Token ids with [`MASK_ID`] for masked slots.
    pub fn to_ids(&self) -> Vec<i64> {
        self.slots
            .iter()
            .map(|m| m.map_or(MASK_ID, |m| m.token as i64))
            .collect()
    }
}

/// Cumulative duration fractions `p_n = sum_{i<=n} d_i / sum_i d_i`.
#[derive(Debug, Clone, PartialEq)]
pub struct ProgressVector(Vec<f64>);

impl ProgressVector {
    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }
}

/// What to do with text tokens that received no speech tokens.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum ZeroDurationPolicy {
    #[default]
    Reject,
    /// Leave them unmarked and report their indices.
    Skip,
}

fn check_lengths(t: &TokenSequence, d: &DurationVector) -> Result<()> {
    if t.len() != d.len() {
        return Err(Error::LengthMismatch {
            context: "tokens vs durations",
            expected: t.len(),
            found: d.len(),
        });
    }
    if d.total() == 0 {
        return Err(Error::Empty("all durations are zero"));
    }
    Ok(())
}

/// Token `j` repeated `d_j` times.
pub fn full_repeat_targets(t: &TokenSequence, d: &DurationVector) -> Result<Vec<u64>> {
    check_lengths(t, d)?;
    Ok(t.as_slice()
        .iter()
        .zip(d.as_slice())
        .flat_map(|(&tok, &n)| std::iter::repeat_n(tok, n))
        .collect())
}

/// Offset of the revealed slot inside a block of `len` slots.
fn draw_offset(rng: &mut ChaCha8Rng, len: usize) -> usize {
    match len {
        1 => 0,
        2 => rng.random_range(0..2),
        _ => rng.random_range(1..len - 1),
    }
}

/// Sparse target; fails on zero-duration tokens.
pub fn sparse_repeat_targets(
    t: &TokenSequence,
    d: &DurationVector,
    seed: u64,
) -> Result<SparseTarget> {
    sparse_repeat_targets_with(t, d, seed, ZeroDurationPolicy::Reject).map(|(s, _)| s)
}

/// Sparse target plus the indices of skipped zero-duration tokens.
///
/// Blocks are visited in token order with one generator seeded from `seed`;
/// a draw is consumed only for blocks with more than one eligible offset.
pub fn sparse_repeat_targets_with(
    t: &TokenSequence,
    d: &DurationVector,
    seed: u64,
    policy: ZeroDurationPolicy,
) -> Result<(SparseTarget, Vec<usize>)> {
    check_lengths(t, d)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut slots = vec![None; d.total()];
    let mut skipped = Vec::new();
    let mut start = 0;
    for (j, (&tok, &n)) in t.as_slice().iter().zip(d.as_slice()).enumerate() {
        if n == 0 {
            match policy {
                ZeroDurationPolicy::Reject => return Err(Error::ZeroDuration { token: j }),
                ZeroDurationPolicy::Skip => {
                    skipped.push(j);
                    continue;
                }
            }
        }
        let off = draw_offset(&mut rng, n);
        slots[start + off] = Some(Mark {
            token_index: j,
            token: tok,
        });
        start += n;
    }
    Ok((
        SparseTarget {
            slots,
            n_tokens: t.len(),
        },
        skipped,
    ))
}

/// Exact cumulative ratios; the last entry is exactly 1.
pub fn progress_values(d: &DurationVector) -> Result<ProgressVector> {
    let total = d.total();
    if total == 0 {
        return Err(Error::Empty("all durations are zero"));
    }
    let mut acc = 0usize;
    Ok(ProgressVector(
        d.as_slice()
            .iter()
            .map(|&n| {
                acc += n;
                acc as f64 / total as f64
            })
            .collect(),
    ))
}

/// `p_j` at the revealed slot of block `j`, absent elsewhere.
pub fn sparse_progress_targets(p: &ProgressVector, o_s: &SparseTarget) -> Result<Vec<Option<f64>>> {
    if p.len() != o_s.n_tokens() {
        return Err(Error::LengthMismatch {
            context: "progress values vs sparse target blocks",
            expected: o_s.n_tokens(),
            found: p.len(),
        });
    }
    Ok(o_s
        .slots()
        .iter()
        .map(|m| m.map(|m| p.as_slice()[m.token_index]))
        .collect())
}

/// Every target derived from one teacher alignment.
#[derive(Debug, Clone, PartialEq)]
pub struct SupervisionBundle {
    pub durations: DurationVector,
    pub o_w: Vec<u64>,
    pub o_s: SparseTarget,
    pub o_p: Vec<Option<f64>>,
    pub p: ProgressVector,
    /// Zero-duration tokens left unmarked.
    pub skipped_tokens: Vec<usize>,
}

/// Builds the bundle from a teacher path. Zero-duration tokens are skipped
/// with a warning and keep their progress value.
pub fn build_supervision_from_path(
    t: &TokenSequence,
    path: &AlignmentPath,
    seed: u64,
) -> Result<SupervisionBundle> {
    let durations = path_to_durations(path);
    let o_w = full_repeat_targets(t, &durations)?;
    let (o_s, skipped_tokens) =
        sparse_repeat_targets_with(t, &durations, seed, ZeroDurationPolicy::Skip)?;
    if !skipped_tokens.is_empty() {
        warn!(
            "{} text token(s) received no speech tokens and are left unmarked: {:?}",
            skipped_tokens.len(),
            skipped_tokens
        );
    }
    let p = progress_values(&durations)?;
    let o_p = sparse_progress_targets(&p, &o_s)?;
    Ok(SupervisionBundle {
        durations,
        o_w,
        o_s,
        o_p,
        p,
        skipped_tokens,
    })
}

/// Runs the optimal path search on the teacher head's alignment block first.
pub fn build_supervision_from_matrix<T: Scalar>(
    t: &TokenSequence,
    a: &Matrix<T>,
    seed: u64,
) -> Result<SupervisionBundle> {
    build_supervision_from_path(t, &optimal_path(a)?, seed)
}

/// One line of `supervision.jsonl`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SupervisionRecord {
    pub utterance_id: String,
    pub teacher_layer: usize,
    pub teacher_head: usize,
    pub teacher_oas: f64,
    pub durations: Vec<usize>,
    pub o_w: Vec<u64>,
    pub o_s: Vec<i64>,
    pub o_p: Vec<Option<f64>>,
    pub seed: u64,
}

impl SupervisionRecord {
    pub fn new(
        utterance_id: impl Into<String>,
        teacher: (usize, usize),
        teacher_oas: f64,
        bundle: &SupervisionBundle,
        seed: u64,
    ) -> Self {
        Self {
            utterance_id: utterance_id.into(),
            teacher_layer: teacher.0,
            teacher_head: teacher.1,
            teacher_oas,
            durations: bundle.durations.as_slice().to_vec(),
            o_w: bundle.o_w.clone(),
            o_s: bundle.o_s.to_ids(),
            o_p: bundle.o_p.clone(),
            seed,
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn toks(v: &[u64]) -> TokenSequence {
        TokenSequence::new(v.to_vec()).unwrap()
    }

    fn durs(v: &[usize]) -> DurationVector {
        DurationVector::new(v.to_vec()).unwrap()
    }

    #[test]
    fn full_repeat_examples() {
        let t = toks(&[11, 22, 33]);
        assert_eq!(
            full_repeat_targets(&t, &durs(&[2, 3, 3])).unwrap(),
            vec![11, 11, 22, 22, 22, 33, 33, 33]
        );
        assert_eq!(
            full_repeat_targets(&toks(&[5]), &durs(&[1])).unwrap(),
            vec![5]
        );
        assert_eq!(
            full_repeat_targets(&t, &durs(&[0, 2, 0])).unwrap(),
            vec![22, 22]
        );
        assert!(full_repeat_targets(&t, &durs(&[1, 1])).is_err());
    }

    #[test]
    fn single_block_of_three_is_interior() {
        for seed in 0..20 {
            let s = sparse_repeat_targets(&toks(&[9]), &durs(&[3]), seed).unwrap();
            assert_eq!(s.to_ids(), vec![MASK_ID, 9, MASK_ID]);
        }
    }

    #[test]
    fn zero_duration_rejected_or_skipped() {
        let t = toks(&[1, 2, 3]);
        let d = durs(&[2, 0, 1]);
        assert!(matches!(
            sparse_repeat_targets(&t, &d, 0),
            Err(Error::ZeroDuration { token: 1 })
        ));
        let (s, skipped) = sparse_repeat_targets_with(&t, &d, 0, ZeroDurationPolicy::Skip).unwrap();
        assert_eq!(skipped, vec![1]);
        assert_eq!(s.marks().count(), 2);
    }

    #[test]
    fn progress_examples() {
        assert_eq!(
            progress_values(&durs(&[2, 3, 3])).unwrap().as_slice(),
            &[0.25, 0.625, 1.0]
        );
        assert_eq!(progress_values(&durs(&[5])).unwrap().as_slice(), &[1.0]);
        assert_eq!(
            progress_values(&durs(&[1, 1])).unwrap().as_slice(),
            &[0.5, 1.0]
        );
        assert!(progress_values(&durs(&[0, 0])).is_err());
    }

    #[test]
    fn sparse_progress_block_mismatch() {
        let s = sparse_repeat_targets(&toks(&[1, 2]), &durs(&[1, 1]), 0).unwrap();
        let p = progress_values(&durs(&[5])).unwrap();
        assert!(sparse_progress_targets(&p, &s).is_err());
    }

    #[test]
    fn single_cell_matrix_bundle() {
        let a = Matrix::from_rows(&[[1.0f64]]).unwrap();
        let b = build_supervision_from_matrix(&toks(&[42]), &a, 3).unwrap();
        assert_eq!(b.durations.as_slice(), &[1]);
        assert_eq!(b.o_s.to_ids(), vec![42]);
        assert_eq!(b.o_p, vec![Some(1.0)]);
    }

    #[test]
    fn zero_duration_keeps_previous_progress() {
        let t = toks(&[1, 2, 3]);
        let path = AlignmentPath::new(vec![1, 1, 2], 3).unwrap();
        let b = build_supervision_from_path(&t, &path, 0).unwrap();
        assert_eq!(b.durations.as_slice(), &[0, 2, 1]);
        assert_eq!(b.skipped_tokens, vec![0]);
        assert_eq!(b.p.as_slice()[0], 0.0);
        let vals: Vec<f64> = b.o_p.iter().flatten().copied().collect();
        assert_eq!(vals.len(), 2);
        assert_eq!(*vals.last().unwrap(), 1.0);
    }
}
