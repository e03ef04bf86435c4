//! Synthetic attention with planted alignment paths.
//!
//! A planted head's block is `(1 - noise) * OneHot(path) + noise * U`, where
//! `U` is row-uniform over the text columns (optionally jittered per cell and
//! renormalized). Every row sums to one. Unplanted heads are pure `U`.

use rand::seq::index::sample;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::analysis::WerEntry;
use crate::error::{Error, Result};
use crate::matrix::{AlignmentMatrix, Matrix};
use crate::scalar::Scalar;
use crate::seed::derive_seed;
use crate::store::{AttentionDump, DumpMeta, SequenceLayout};
use crate::viterbi::AlignmentPath;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum PathStyle {
    /// `P[i] = floor(i * L_t / L_s)`
    Diagonal,
    /// Uniformly chosen positions for the `L_t - 1` advances.
    RandomMonotone,
}

/// Parameters of a single synthetic alignment block.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SynthSpec {
    pub speech_len: usize,
    pub text_len: usize,
    pub path_style: PathStyle,
    pub noise: f64,
    pub seed: u64,
}

impl SynthSpec {
    pub fn validate(&self) -> Result<()> {
        validate_shape(self.speech_len, self.text_len)?;
        validate_noise(self.noise)
    }
}

fn validate_shape(speech_len: usize, text_len: usize) -> Result<()> {
    if text_len == 0 || speech_len < text_len {
        return Err(Error::InvalidArgument(format!(
            "need speech_len >= text_len >= 1, got {speech_len} and {text_len}"
        )));
    }
    Ok(())
}

fn validate_noise(noise: f64) -> Result<()> {
    if !(0.0..=1.0).contains(&noise) {
        return Err(Error::InvalidArgument(format!(
            "noise {noise} outside [0, 1]"
        )));
    }
    Ok(())
}

/// A monotone path covering every text column.
pub fn planted_path(
    speech_len: usize,
    text_len: usize,
    style: PathStyle,
    rng: &mut impl Rng,
) -> Result<AlignmentPath> {
    validate_shape(speech_len, text_len)?;
    let indices = match style {
        PathStyle::Diagonal => (0..speech_len).map(|i| i * text_len / speech_len).collect(),
        PathStyle::RandomMonotone => {
            // advance before row r for each chosen step slot r-1
            let mut advance = vec![false; speech_len];
            for k in sample(rng, speech_len - 1, text_len - 1) {
                advance[k + 1] = true;
            }
            let mut j = 0;
            advance
                .iter()
                .map(|&a| {
                    j += a as usize;
                    j
                })
                .collect()
        }
    };
    AlignmentPath::new(indices, text_len)
}

/// Row distribution matrix: uniform, or jittered with `1 + jitter * u` weights.
fn noise_rows(rows: usize, cols: usize, jitter: f64, rng: &mut impl Rng) -> Matrix<f64> {
    let mut m = Matrix::zeros(rows, cols);
    for i in 0..rows {
        let row = m.row_mut(i);
        if jitter == 0.0 {
            row.fill(1.0 / cols as f64);
            continue;
        }
        for v in row.iter_mut() {
            *v = 1.0 + jitter * rng.random::<f64>();
        }
        let s: f64 = row.iter().sum();
        row.iter_mut().for_each(|v| *v /= s);
    }
    m
}

fn mix(path: &AlignmentPath, noise: f64, base: &Matrix<f64>) -> Matrix<f64> {
    Matrix::from_fn(base.rows(), base.cols(), |i, j| {
        let hit = if path.indices()[i] == j {
            1.0 - noise
        } else {
            0.0
        };
        hit + noise * base.get(i, j)
    })
}

/// Draws a planted path and the noisy block around it.
pub fn synth_alignment_matrix<T: Scalar>(
    spec: &SynthSpec,
) -> Result<(AlignmentMatrix<T>, AlignmentPath)> {
    spec.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let path = planted_path(spec.speech_len, spec.text_len, spec.path_style, &mut rng)?;
    let u = noise_rows(spec.speech_len, spec.text_len, 0.0, &mut rng);
    let a = mix(&path, spec.noise, &u).map(T::narrow);
    Ok((AlignmentMatrix::new(a)?, path))
}

/// Linear pseudo error rate `base + slope * noise + N(0, sigma)`, clamped at 0.
/// A labelled stand-in for recognizer output, not a model of real WER.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct WerModel {
    pub base: f64,
    pub slope: f64,
    pub sigma: f64,
}

impl Default for WerModel {
    fn default() -> Self {
        Self {
            base: 0.02,
            slope: 0.5,
            sigma: 0.02,
        }
    }
}

impl WerModel {
    pub fn sample(&self, noise: f64, rng: &mut impl Rng) -> Result<f64> {
        let jitter = if self.sigma > 0.0 {
            Normal::new(0.0, self.sigma)
                .map_err(|e| Error::InvalidArgument(format!("wer sigma: {e}")))?
                .sample(rng)
        } else {
            0.0
        };
        Ok((self.base + self.slope * noise + jitter).max(0.0))
    }
}

/// Model shape and planting pattern shared by every synthetic utterance.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CorpusTemplate {
    pub speech_len: usize,
    pub text_len: usize,
    pub path_style: PathStyle,
    pub n_layers: usize,
    pub n_heads: usize,
    pub planted_heads: Vec<(usize, usize)>,
    /// Per-cell perturbation of the noise distribution.
    pub jitter: f64,
    /// Fixed noise level; drawn uniformly from `[0, 1)` per utterance when absent.
    pub noise: Option<f64>,
}

impl Default for CorpusTemplate {
    /// 24 layers x 14 heads, paths planted in heads 0..7 of layers 8 and 9.
    fn default() -> Self {
        Self {
            speech_len: 36,
            text_len: 12,
            path_style: PathStyle::RandomMonotone,
            n_layers: 24,
            n_heads: 14,
            planted_heads: [8, 9]
                .into_iter()
                .flat_map(|l| (0..7).map(move |h| (l, h)))
                .collect(),
            jitter: 0.5,
            noise: None,
        }
    }
}

impl CorpusTemplate {
    pub fn validate(&self) -> Result<()> {
        validate_shape(self.speech_len, self.text_len)?;
        if self.n_layers == 0 || self.n_heads == 0 {
            return Err(Error::InvalidArgument(
                "model needs layers and heads".into(),
            ));
        }
        for &(l, h) in &self.planted_heads {
            if l >= self.n_layers || h >= self.n_heads {
                return Err(Error::InvalidArgument(format!(
                    "planted head ({l}, {h}) outside {}x{}",
                    self.n_layers, self.n_heads
                )));
            }
        }
        if !(self.jitter.is_finite() && self.jitter >= 0.0) {
            return Err(Error::InvalidArgument("jitter must be >= 0".into()));
        }
        if let Some(n) = self.noise {
            validate_noise(n)?;
        }
        Ok(())
    }

    pub fn layout(&self) -> SequenceLayout {
        let lt = self.text_len;
        SequenceLayout::new(lt + self.speech_len, 0..lt, lt..lt + self.speech_len)
            .expect("validated template")
    }

    fn is_planted(&self, layer: usize, head: usize) -> bool {
        self.planted_heads.contains(&(layer, head))
    }
}

/// One generated utterance with its ground truth.
#[derive(Debug, Clone)]
pub struct SynthUtterance<T> {
    pub dump: AttentionDump<T>,
    pub path: AlignmentPath,
    pub noise: f64,
    pub wer: f64,
}

impl<T: Scalar> SynthUtterance<T> {
    pub fn id(&self) -> &str {
        self.dump.utterance_id()
    }

    pub fn wer_entry(&self) -> WerEntry {
        WerEntry {
            utterance_id: self.id().to_string(),
            wer: self.wer,
        }
    }
}

pub fn utterance_id(index: usize) -> String {
    format!("utt_{index:05}")
}

/// Generates utterance `index`; the result depends only on
/// `(template, wer_model, global_seed, index)`.
pub fn synth_utterance<T: Scalar>(
    template: &CorpusTemplate,
    wer_model: &WerModel,
    global_seed: u64,
    index: usize,
) -> Result<SynthUtterance<T>> {
    template.validate()?;
    let id = utterance_id(index);
    let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(global_seed, &id));
    let noise = match template.noise {
        Some(n) => n,
        None => rng.random::<f64>(),
    };
    let path = planted_path(
        template.speech_len,
        template.text_len,
        template.path_style,
        &mut rng,
    )?;
    let wer = wer_model.sample(noise, &mut rng)?;

    let meta = DumpMeta {
        utterance_id: id,
        n_layers: template.n_layers,
        n_heads: template.n_heads,
        layout: template.layout(),
        sliced: true,
    };
    let (ls, lt) = (template.speech_len, template.text_len);
    let dump = AttentionDump::from_fn(meta, |l, h| {
        let base = noise_rows(ls, lt, template.jitter, &mut rng);
        let m = if template.is_planted(l, h) {
            mix(&path, noise, &base)
        } else {
            base
        };
        m.map(T::narrow)
    })?;
    Ok(SynthUtterance {
        dump,
        path,
        noise,
        wer,
    })
}

/// Materializes `n_utts` utterances in index order.
pub fn synth_corpus<T: Scalar>(
    template: &CorpusTemplate,
    n_utts: usize,
    wer_model: &WerModel,
    global_seed: u64,
) -> Result<Vec<SynthUtterance<T>>> {
    template.validate()?;
    (0..n_utts)
        .map(|i| synth_utterance(template, wer_model, global_seed, i))
        .collect()
}

/// Contents of `synth_spec.json`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SynthManifest {
    pub template: CorpusTemplate,
    pub wer_model: WerModel,
    pub n_utts: usize,
    pub seed: u64,
    pub wer_is_synthetic: bool,
    pub note: String,
}

impl SynthManifest {
    pub fn new(template: CorpusTemplate, wer_model: WerModel, n_utts: usize, seed: u64) -> Self {
        Self {
            template,
            wer_model,
            n_utts,
            seed,
            wer_is_synthetic: true,
            note: "wer values are a linear pseudo-WER of the injected noise level, not recognizer output"
                .into(),
        }
    }
}
