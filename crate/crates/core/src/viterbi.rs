//! Optimal monotone alignment path search.
//!
//! A path assigns every speech row `i` a text column `P[i]`; consecutive
//! entries either stay on the same column or advance by exactly one. Start
//! and end columns are free. The search maximizes `sum_i A[i, P[i]]` with
//!
//! ```text
//! dp[0, j] = A[0, j]
//! dp[i, j] = A[i, j] + max(dp[i-1, j-1], dp[i-1, j])     (dp[i-1, -1] = -inf)
//! ```
//!
//! The last entry is the smallest `j` maximizing `dp[L_s-1, :]`; backtracking
//! takes the diagonal predecessor whenever `dp[i-1, j-1] >= dp[i-1, j]`.
//! Scores accumulate in f64 whatever the storage type.

use crate::error::{Error, Result};
use crate::matrix::Matrix;
use crate::scalar::Scalar;

/// Upper bound on the number of paths the exhaustive oracle will enumerate.
pub const BRUTE_FORCE_LIMIT: u128 = 10_000_000;

/// Text-column index per speech row, steps in `{0, +1}`.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct AlignmentPath {
    indices: Vec<usize>,
    text_len: usize,
}

impl AlignmentPath {
    pub fn new(indices: Vec<usize>, text_len: usize) -> Result<Self> {
        if indices.is_empty() {
            return Err(Error::Empty("alignment path"));
        }
        if let Some(i) = indices.iter().position(|&j| j >= text_len) {
            return Err(Error::InvalidPath(format!(
                "entry {i} = {} is outside {text_len} text columns",
                indices[i]
            )));
        }
        if let Some(i) = indices
            .windows(2)
            .position(|w| w[1] != w[0] && w[1] != w[0] + 1)
        {
            return Err(Error::InvalidPath(format!(
                "step {} -> {} at row {} is neither stay nor +1",
                indices[i],
                indices[i + 1],
                i + 1
            )));
        }
        Ok(Self { indices, text_len })
    }

    pub fn indices(&self) -> &[usize] {
        &self.indices
    }

    /// Number of speech rows.
    pub fn len(&self) -> usize {
        self.indices.len()
    }

    pub fn is_empty(&self) -> bool {
        self.indices.is_empty()
    }

    pub fn text_len(&self) -> usize {
        self.text_len
    }

    pub(crate) fn check_shape<T: Scalar>(&self, a: &Matrix<T>) -> Result<()> {
        if a.rows() != self.len() || a.cols() != self.text_len {
            return Err(Error::shape(
                "path vs matrix",
                format!("{}x{}", self.len(), self.text_len),
                format!("{}x{}", a.rows(), a.cols()),
            ));
        }
        Ok(())
    }
}

/// Speech tokens assigned to each text token; sums to `L_s`.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct DurationVector(Vec<usize>);

impl DurationVector {
    pub fn new(durations: Vec<usize>) -> Result<Self> {
        if durations.is_empty() {
            return Err(Error::Empty("duration vector"));
        }
        Ok(Self(durations))
    }

    pub fn as_slice(&self) -> &[usize] {
        &self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn total(&self) -> usize {
        self.0.iter().sum()
    }

    pub fn into_vec(self) -> Vec<usize> {
        self.0
    }
}

fn check_scores<T: Scalar>(a: &Matrix<T>) -> Result<()> {
    if a.is_empty() {
        return Err(Error::Empty("score matrix"));
    }
    a.check_finite("scores")
}

/// Runs the DP and backtracking described in the module docs.
pub fn optimal_path<T: Scalar>(a: &Matrix<T>) -> Result<AlignmentPath> {
    check_scores(a)?;
    let (rows, cols) = a.shape();

    let mut dp = vec![0.0f64; rows * cols];
    for (j, d) in dp[..cols].iter_mut().enumerate() {
        *d = a.get(0, j).widen();
    }
    for i in 1..rows {
        let (prev, cur) = dp[(i - 1) * cols..(i + 1) * cols].split_at_mut(cols);
        for j in 0..cols {
            let stay = prev[j];
            let best = if j > 0 && prev[j - 1] >= stay {
                prev[j - 1]
            } else {
                stay
            };
            cur[j] = a.get(i, j).widen() + best;
        }
    }

    let last = &dp[(rows - 1) * cols..];
    let mut j = 0;
    for (k, &v) in last.iter().enumerate() {
        if v > last[j] {
            j = k;
        }
    }

    let mut indices = vec![0usize; rows];
    indices[rows - 1] = j;
    for i in (1..rows).rev() {
        let prev = &dp[(i - 1) * cols..i * cols];
        if j > 0 && prev[j - 1] >= prev[j] {
            j -= 1;
        }
        indices[i - 1] = j;
    }
    AlignmentPath::new(indices, cols)
}

/// `sum_i A[i, P[i]]`, accumulated row by row in f64.
pub fn path_score<T: Scalar>(a: &Matrix<T>, path: &AlignmentPath) -> Result<f64> {
    path.check_shape(a)?;
    let mut s = 0.0f64;
    for (i, &j) in path.indices().iter().enumerate() {
        s += a.get(i, j).widen();
    }
    Ok(s)
}

/// `d[j] = |{i : P[i] = j}|`.
pub fn path_to_durations(path: &AlignmentPath) -> DurationVector {
    let mut d = vec![0usize; path.text_len()];
    for &j in path.indices() {
        d[j] += 1;
    }
    DurationVector(d)
}

/// Number of stay/+1 paths with free endpoints through `rows x cols`.
pub fn count_monotone_paths(rows: usize, cols: usize) -> u128 {
    if rows == 0 || cols == 0 {
        return 0;
    }
    // ways[j] = number of partial paths ending in column j
    let mut ways = vec![1u128; cols];
    for _ in 1..rows {
        for j in (1..cols).rev() {
            ways[j] = ways[j].saturating_add(ways[j - 1]);
        }
    }
    ways.iter().fold(0u128, |acc, &w| acc.saturating_add(w))
}

/// Exhaustive search over every stay/+1 path with free endpoints.
///
/// Among maximum-score paths it returns the one whose reversed index
/// sequence is lexicographically smallest, which is the path the DP's tie
/// rules select in exact arithmetic.
pub fn brute_force_optimal_path<T: Scalar>(a: &Matrix<T>) -> Result<AlignmentPath> {
    check_scores(a)?;
    let (rows, cols) = a.shape();
    let n = count_monotone_paths(rows, cols);
    if n > BRUTE_FORCE_LIMIT {
        return Err(Error::TooLarge {
            paths: n,
            limit: BRUTE_FORCE_LIMIT,
        });
    }

    struct Search<'a, T> {
        a: &'a Matrix<T>,
        current: Vec<usize>,
        best: Option<(f64, Vec<usize>)>,
    }

    impl<T: Scalar> Search<'_, T> {
        fn visit(&mut self, row: usize, score: f64) {
            let (rows, cols) = self.a.shape();
            if row == rows {
                let better = match &self.best {
                    None => true,
                    Some((s, p)) => {
                        score > *s || (score == *s && self.current.iter().rev().lt(p.iter().rev()))
                    }
                };
                if better {
                    self.best = Some((score, self.current.clone()));
                }
                return;
            }
            let prev = self.current[row - 1];
            for j in [prev, prev + 1] {
                if j < cols {
                    self.current.push(j);
                    let s = self.a.get(row, j).widen() + score;
                    self.visit(row + 1, s);
                    self.current.pop();
                }
            }
        }
    }

    let mut search = Search {
        a,
        current: Vec::with_capacity(rows),
        best: None,
    };
    for start in 0..cols {
        search.current.push(start);
        search.visit(1, a.get(0, start).widen());
        search.current.pop();
    }
    let (_, indices) = search.best.expect("at least one path exists");
    AlignmentPath::new(indices, cols)
}
