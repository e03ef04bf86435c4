//! Optimal Alignment Score and head-level statistics.
//!
//! OAS is the share of the alignment block's attention mass that lies on the
//! optimal monotone path:
//!
//! ```text
//! OAS(A) = sum_i A[i, P[i]] / sum_ij A[i, j],   P = optimal_path(A)
//! ```

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::matrix::Matrix;
use crate::scalar::Scalar;
use crate::store::AttentionDump;
use crate::viterbi::{optimal_path, path_score};

/// Layer statistic default: mean of the 7 best heads per layer.
pub const DEFAULT_K_LAYER: usize = 7;
/// Final OAS default: mean of the 5 best heads overall.
pub const DEFAULT_K_FINAL: usize = 5;
/// Layers designated as alignment layers by default.
pub const DEFAULT_ALIGNMENT_LAYERS: [usize; 2] = [8, 9];

/// OAS of one non-negative score block.
pub fn oas<T: Scalar>(a: &Matrix<T>) -> Result<f64> {
    if a.is_empty() {
        return Err(Error::Empty("alignment matrix"));
    }
    a.check_non_negative("alignment")?;
    let total = a.total();
    if total <= 0.0 {
        return Err(Error::DegenerateMatrix);
    }
    let path = optimal_path(a)?;
    Ok(path_score(a, &path)? / total)
}

/// `n_layers x n_heads` table of OAS values.
#[derive(Debug, Clone, PartialEq)]
pub struct OasTable {
    values: Matrix<f64>,
}

impl OasTable {
    pub fn new(values: Matrix<f64>) -> Result<Self> {
        if values.is_empty() {
            return Err(Error::Empty("OAS table"));
        }
        values.check_finite("oas table")?;
        Ok(Self { values })
    }

    pub fn from_rows<R: AsRef<[f64]>>(rows: &[R]) -> Result<Self> {
        Self::new(Matrix::from_rows(rows)?)
    }

    pub fn n_layers(&self) -> usize {
        self.values.rows()
    }

    pub fn n_heads(&self) -> usize {
        self.values.cols()
    }

    pub fn get(&self, layer: usize, head: usize) -> f64 {
        self.values.get(layer, head)
    }

    pub fn layer(&self, layer: usize) -> &[f64] {
        self.values.row(layer)
    }

    pub fn as_matrix(&self) -> &Matrix<f64> {
        &self.values
    }

    pub fn to_nested(&self) -> Vec<Vec<f64>> {
        (0..self.n_layers())
            .map(|l| self.layer(l).to_vec())
            .collect()
    }

    /// `(layer, head)` with the highest OAS; ties go to the smallest pair.
    pub fn best_head(&self) -> (usize, usize) {
        ranked_heads(self)[0].0
    }
}

/// OAS of every head of one dump.
pub fn utterance_oas_table<T: Scalar>(dump: &AttentionDump<T>) -> Result<OasTable> {
    let mut values = Matrix::zeros(dump.n_layers(), dump.n_heads());
    for l in 0..dump.n_layers() {
        for h in 0..dump.n_heads() {
            let a = dump.alignment(l, h)?;
            let v = oas(&a).map_err(|e| match e {
                Error::DegenerateMatrix => Error::InvalidArgument(format!(
                    "utterance {:?} layer {l} head {h}: alignment block has zero mass",
                    dump.utterance_id()
                )),
                other => other,
            })?;
            values.set(l, h, v);
        }
    }
    OasTable::new(values)
}

/// Running unweighted mean of per-utterance tables. Tables are summed in the
/// order they are added.
#[derive(Debug, Clone, Default)]
pub struct OasAccumulator {
    sum: Option<Matrix<f64>>,
    count: usize,
}

impl OasAccumulator {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn add(&mut self, table: &OasTable) -> Result<()> {
        match &mut self.sum {
            None => self.sum = Some(table.values.clone()),
            Some(sum) => {
                if sum.shape() != table.values.shape() {
                    return Err(Error::shape(
                        "OAS table across utterances",
                        format!("{}x{}", sum.rows(), sum.cols()),
                        format!("{}x{}", table.n_layers(), table.n_heads()),
                    ));
                }
                for l in 0..sum.rows() {
                    for (s, &v) in sum.row_mut(l).iter_mut().zip(table.layer(l)) {
                        *s += v;
                    }
                }
            }
        }
        self.count += 1;
        Ok(())
    }

    pub fn count(&self) -> usize {
        self.count
    }

    pub fn mean(&self) -> Result<OasTable> {
        let sum = self.sum.as_ref().ok_or(Error::Empty("no utterances"))?;
        let n = self.count as f64;
        OasTable::new(sum.map(|v| v / n))
    }
}

/// Per-head OAS averaged (unweighted) over a list of dumps.
pub fn per_head_oas<T: Scalar>(dumps: &[AttentionDump<T>]) -> Result<OasTable> {
    if dumps.is_empty() {
        return Err(Error::Empty("dump list"));
    }
    let mut acc = OasAccumulator::new();
    for d in dumps {
        acc.add(&utterance_oas_table(d)?)?;
    }
    acc.mean()
}

fn mean_of_top_k(values: &mut [f64], k: usize) -> f64 {
    values.sort_by(|a, b| b.total_cmp(a));
    let k = k.min(values.len());
    values[..k].iter().sum::<f64>() / k as f64
}

/// Mean of the `k` largest heads in every layer (all heads if `k > n_heads`).
pub fn layer_topk_mean(table: &OasTable, k: usize) -> Result<Vec<f64>> {
    if k == 0 {
        return Err(Error::InvalidArgument("k must be at least 1".into()));
    }
    Ok((0..table.n_layers())
        .map(|l| mean_of_top_k(&mut table.layer(l).to_vec(), k))
        .collect())
}

/// Mean of the `k` largest values over the whole table.
pub fn final_oas(table: &OasTable, k: usize) -> Result<f64> {
    if k == 0 {
        return Err(Error::InvalidArgument("k must be at least 1".into()));
    }
    Ok(mean_of_top_k(&mut table.as_matrix().as_slice().to_vec(), k))
}

/// Summary statistics derived from an OAS table.
#[derive(Debug, Clone, PartialEq)]
pub struct OasStats {
    pub table: OasTable,
    pub per_layer_topk_mean: Vec<f64>,
    pub final_oas: f64,
    pub k_layer: usize,
    pub k_final: usize,
}

impl OasStats {
    pub fn from_table(table: OasTable, k_layer: usize, k_final: usize) -> Result<Self> {
        Ok(Self {
            per_layer_topk_mean: layer_topk_mean(&table, k_layer)?,
            final_oas: final_oas(&table, k_final)?,
            table,
            k_layer,
            k_final,
        })
    }
}

/// How alignment heads are chosen.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum HeadPolicy {
    /// The `per_layer` best heads inside each listed layer.
    Fixed {
        layers: Vec<usize>,
        per_layer: usize,
    },
    /// The `count` best heads over the whole model.
    TopOas { count: usize },
}

impl HeadPolicy {
    /// Half of the heads of layers 8 and 9.
    pub fn default_for(n_heads: usize) -> Self {
        HeadPolicy::Fixed {
            layers: DEFAULT_ALIGNMENT_LAYERS.to_vec(),
            per_layer: n_heads / 2,
        }
    }
}

/// Designated alignment heads, sorted by `(layer, head)`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct HeadSet {
    pub policy: HeadPolicy,
    pub heads: Vec<(usize, usize)>,
}

impl HeadSet {
    pub fn contains(&self, layer: usize, head: usize) -> bool {
        self.heads.binary_search(&(layer, head)).is_ok()
    }

    pub fn len(&self) -> usize {
        self.heads.len()
    }

    pub fn is_empty(&self) -> bool {
        self.heads.is_empty()
    }
}

/// All heads ordered by descending OAS, ties by ascending `(layer, head)`.
fn ranked_heads(table: &OasTable) -> Vec<((usize, usize), f64)> {
    let mut all: Vec<_> = (0..table.n_layers())
        .flat_map(|l| (0..table.n_heads()).map(move |h| (l, h)))
        .map(|(l, h)| ((l, h), table.get(l, h)))
        .collect();
    all.sort_by(|a, b| b.1.total_cmp(&a.1).then(a.0.cmp(&b.0)));
    all
}

pub fn select_alignment_heads(table: &OasTable, policy: &HeadPolicy) -> Result<HeadSet> {
    let ranked = ranked_heads(table);
    let mut heads: Vec<(usize, usize)> = match policy {
        HeadPolicy::Fixed { layers, per_layer } => {
            if *per_layer == 0 || *per_layer > table.n_heads() {
                return Err(Error::InvalidArgument(format!(
                    "per-layer count {per_layer} must be in 1..={}",
                    table.n_heads()
                )));
            }
            let mut sorted = layers.clone();
            sorted.sort_unstable();
            if sorted.windows(2).any(|w| w[0] == w[1]) {
                return Err(Error::InvalidArgument("duplicate layer in policy".into()));
            }
            let mut out = Vec::with_capacity(layers.len() * per_layer);
            for &layer in &sorted {
                if layer >= table.n_layers() {
                    return Err(Error::InvalidArgument(format!(
                        "layer {layer} outside 0..{}",
                        table.n_layers()
                    )));
                }
                out.extend(
                    ranked
                        .iter()
                        .filter(|((l, _), _)| *l == layer)
                        .take(*per_layer)
                        .map(|(lh, _)| *lh),
                );
            }
            out
        }
        HeadPolicy::TopOas { count } => {
            if *count == 0 || *count > ranked.len() {
                return Err(Error::InvalidArgument(format!(
                    "head count {count} must be in 1..={}",
                    ranked.len()
                )));
            }
            ranked.iter().take(*count).map(|(lh, _)| *lh).collect()
        }
    };
    heads.sort_unstable();
    Ok(HeadSet {
        policy: policy.clone(),
        heads,
    })
}
