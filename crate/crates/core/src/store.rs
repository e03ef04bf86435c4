//! Attention dump persistence and alignment-block slicing.
//!
//! A dump directory holds `manifest.json` plus one raw little-endian,
//! row-major payload per `(layer, head)` named `attn_L{layer}_H{head}.bin`.
//! Payloads are either full `seq_len x seq_len` attention matrices or, when
//! the manifest sets `sliced`, only the `L_s x L_t` alignment block.
//!
//! All indices are 0-based. Row `i` of an alignment block is the speech query
//! at `speech_start + i`, column `j` the text key at `text_start + j`.

use std::fs;
use std::ops::Range;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::matrix::{AlignmentMatrix, Matrix};
use crate::scalar::{DType, Scalar};

pub const MANIFEST_FILE: &str = "manifest.json";
pub const FORMAT_VERSION: u32 = 1;

pub fn payload_file_name(layer: usize, head: usize) -> String {
    format!("attn_L{layer}_H{head}.bin")
}

/// Positions of the target text and the generated speech inside the full
/// input sequence. Spans are half-open and text precedes speech.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct SequenceLayout {
    seq_len: usize,
    text: (usize, usize),
    speech: (usize, usize),
}

impl SequenceLayout {
    pub fn new(seq_len: usize, text: Range<usize>, speech: Range<usize>) -> Result<Self> {
        let ok = text.start < text.end
            && text.end <= speech.start
            && speech.start < speech.end
            && speech.end <= seq_len;
        if !ok {
            return Err(Error::InvalidLayout(format!(
                "need text_start < text_end <= speech_start < speech_end <= seq_len, \
                 got text {text:?}, speech {speech:?}, seq_len {seq_len}"
            )));
        }
        Ok(Self {
            seq_len,
            text: (text.start, text.end),
            speech: (speech.start, speech.end),
        })
    }

    pub fn seq_len(&self) -> usize {
        self.seq_len
    }

    pub fn text_span(&self) -> Range<usize> {
        self.text.0..self.text.1
    }

    pub fn speech_span(&self) -> Range<usize> {
        self.speech.0..self.speech.1
    }

    /// `L_t`
    pub fn text_len(&self) -> usize {
        self.text.1 - self.text.0
    }

    /// `L_s`
    pub fn speech_len(&self) -> usize {
        self.speech.1 - self.speech.0
    }
}

/// Slices the speech-to-text block out of a full attention matrix. No
/// renormalization is applied.
pub fn extract_alignment_submatrix<T: Scalar>(
    full: &Matrix<T>,
    layout: &SequenceLayout,
) -> Result<AlignmentMatrix<T>> {
    if full.rows() != layout.seq_len() || full.cols() != layout.seq_len() {
        return Err(Error::shape(
            "full attention matrix",
            format!("{0}x{0}", layout.seq_len()),
            format!("{}x{}", full.rows(), full.cols()),
        ));
    }
    let s = layout.speech_span();
    let t = layout.text_span();
    AlignmentMatrix::new(full.block(s.start, s.end, t.start, t.end)?)
}

/// Everything in the manifest apart from the dtype, which is carried by the
/// scalar type of the dump.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct DumpMeta {
    pub utterance_id: String,
    pub n_layers: usize,
    pub n_heads: usize,
    pub layout: SequenceLayout,
    pub sliced: bool,
}

impl DumpMeta {
    /// Expected `(rows, cols)` of every payload.
    pub fn matrix_shape(&self) -> (usize, usize) {
        if self.sliced {
            (self.layout.speech_len(), self.layout.text_len())
        } else {
            (self.layout.seq_len(), self.layout.seq_len())
        }
    }
}

#[derive(Debug, Serialize, Deserialize)]
struct ManifestFile {
    version: u32,
    utterance_id: String,
    n_layers: usize,
    n_heads: usize,
    seq_len: usize,
    text_span: [usize; 2],
    speech_span: [usize; 2],
    dtype: String,
    sliced: bool,
}

/// Per-(layer, head) attention matrices of one forward pass.
#[derive(Debug, Clone, PartialEq)]
pub struct AttentionDump<T> {
    meta: DumpMeta,
    // indexed by layer * n_heads + head
    matrices: Vec<Matrix<T>>,
}

impl<T: Scalar> AttentionDump<T> {
    /// `matrices` is in layer-major order and must cover every head.
    pub fn new(meta: DumpMeta, matrices: Vec<Matrix<T>>) -> Result<Self> {
        let dump = Self { meta, matrices };
        dump.validate()?;
        Ok(dump)
    }

    /// Builds a dump by calling `f(layer, head)` for every head.
    pub fn from_fn(meta: DumpMeta, mut f: impl FnMut(usize, usize) -> Matrix<T>) -> Result<Self> {
        let mut matrices = Vec::with_capacity(meta.n_layers * meta.n_heads);
        for l in 0..meta.n_layers {
            for h in 0..meta.n_heads {
                matrices.push(f(l, h));
            }
        }
        Self::new(meta, matrices)
    }

    pub fn validate(&self) -> Result<()> {
        let m = &self.meta;
        if m.n_layers == 0 || m.n_heads == 0 {
            return Err(Error::Empty("dump without layers or heads"));
        }
        let n = m.n_layers * m.n_heads;
        if self.matrices.len() != n {
            return Err(Error::LengthMismatch {
                context: "dump matrices",
                expected: n,
                found: self.matrices.len(),
            });
        }
        let shape = m.matrix_shape();
        for (k, mat) in self.matrices.iter().enumerate() {
            let (l, h) = (k / m.n_heads, k % m.n_heads);
            if mat.shape() != shape {
                return Err(Error::shape(
                    format!("layer {l} head {h}"),
                    format!("{}x{}", shape.0, shape.1),
                    format!("{}x{}", mat.rows(), mat.cols()),
                ));
            }
            mat.check_non_negative(&format!("L{l}H{h}"))?;
        }
        Ok(())
    }

    pub fn meta(&self) -> &DumpMeta {
        &self.meta
    }

    pub fn utterance_id(&self) -> &str {
        &self.meta.utterance_id
    }

    pub fn layout(&self) -> &SequenceLayout {
        &self.meta.layout
    }

    pub fn n_layers(&self) -> usize {
        self.meta.n_layers
    }

    pub fn n_heads(&self) -> usize {
        self.meta.n_heads
    }

    pub fn matrix(&self, layer: usize, head: usize) -> Result<&Matrix<T>> {
        if layer >= self.meta.n_layers || head >= self.meta.n_heads {
            return Err(Error::InvalidArgument(format!(
                "head ({layer}, {head}) outside {}x{}",
                self.meta.n_layers, self.meta.n_heads
            )));
        }
        Ok(&self.matrices[layer * self.meta.n_heads + head])
    }

    /// The alignment block of one head, sliced if the dump stores full matrices.
    pub fn alignment(&self, layer: usize, head: usize) -> Result<AlignmentMatrix<T>> {
        let m = self.matrix(layer, head)?;
        if self.meta.sliced {
            AlignmentMatrix::new(m.clone())
        } else {
            extract_alignment_submatrix(m, &self.meta.layout)
        }
    }

    /// `((layer, head), matrix)` in layer-major order.
    pub fn heads(&self) -> impl Iterator<Item = ((usize, usize), &Matrix<T>)> {
        let n_heads = self.meta.n_heads;
        self.matrices
            .iter()
            .enumerate()
            .map(move |(k, m)| ((k / n_heads, k % n_heads), m))
    }

    /// Writes the dump directory. The dump is validated before anything is
    /// written; output bytes depend only on the dump contents.
    pub fn save(&self, dir: impl AsRef<Path>) -> Result<()> {
        self.validate()?;
        let dir = dir.as_ref();
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;

        let m = &self.meta;
        let manifest = ManifestFile {
            version: FORMAT_VERSION,
            utterance_id: m.utterance_id.clone(),
            n_layers: m.n_layers,
            n_heads: m.n_heads,
            seq_len: m.layout.seq_len(),
            text_span: [m.layout.text.0, m.layout.text.1],
            speech_span: [m.layout.speech.0, m.layout.speech.1],
            dtype: T::DTYPE.as_str().to_string(),
            sliced: m.sliced,
        };
        let mut json = serde_json::to_string_pretty(&manifest).map_err(|source| Error::Json {
            context: "manifest".into(),
            source,
        })?;
        json.push('\n');
        let manifest_path = dir.join(MANIFEST_FILE);
        fs::write(&manifest_path, json).map_err(|e| Error::io(&manifest_path, e))?;

        let mut buf = Vec::new();
        for ((l, h), mat) in self.heads() {
            buf.clear();
            buf.reserve(mat.as_slice().len() * T::DTYPE.size_of());
            for &v in mat.as_slice() {
                v.write_le(&mut buf);
            }
            let p = dir.join(payload_file_name(l, h));
            fs::write(&p, &buf).map_err(|e| Error::io(&p, e))?;
        }
        Ok(())
    }

    /// Loads a dump whose stored dtype must equal `T`.
    pub fn load(dir: impl AsRef<Path>) -> Result<Self> {
        let dir = dir.as_ref();
        let (meta, dtype) = read_manifest(dir)?;
        if dtype != T::DTYPE {
            return Err(Error::DtypeMismatch {
                stored: dtype.as_str(),
                requested: T::DTYPE.as_str(),
            });
        }
        read_payloads(dir, meta)
    }
}

/// A dump whose scalar type is only known after reading the manifest.
#[derive(Debug, Clone, PartialEq)]
pub enum AnyDump {
    F32(AttentionDump<f32>),
    F64(AttentionDump<f64>),
}

impl AnyDump {
    pub fn meta(&self) -> &DumpMeta {
        match self {
            AnyDump::F32(d) => d.meta(),
            AnyDump::F64(d) => d.meta(),
        }
    }

    pub fn dtype(&self) -> DType {
        match self {
            AnyDump::F32(_) => DType::F32,
            AnyDump::F64(_) => DType::F64,
        }
    }

    pub fn save(&self, dir: impl AsRef<Path>) -> Result<()> {
        match self {
            AnyDump::F32(d) => d.save(dir),
            AnyDump::F64(d) => d.save(dir),
        }
    }

    /// Widens to f64 (exact for f32 payloads).
    pub fn into_f64(self) -> AttentionDump<f64> {
        match self {
            AnyDump::F64(d) => d,
            AnyDump::F32(d) => AttentionDump {
                matrices: d.matrices.iter().map(Matrix::widen).collect(),
                meta: d.meta,
            },
        }
    }
}

impl From<AttentionDump<f32>> for AnyDump {
    fn from(d: AttentionDump<f32>) -> Self {
        AnyDump::F32(d)
    }
}

impl From<AttentionDump<f64>> for AnyDump {
    fn from(d: AttentionDump<f64>) -> Self {
        AnyDump::F64(d)
    }
}

/// Reads a dump directory of either dtype.
pub fn load_dump(dir: impl AsRef<Path>) -> Result<AnyDump> {
    let dir = dir.as_ref();
    let (meta, dtype) = read_manifest(dir)?;
    Ok(match dtype {
        DType::F32 => AnyDump::F32(read_payloads(dir, meta)?),
        DType::F64 => AnyDump::F64(read_payloads(dir, meta)?),
    })
}

pub fn save_dump<T: Scalar>(dump: &AttentionDump<T>, dir: impl AsRef<Path>) -> Result<()> {
    dump.save(dir)
}

fn read_manifest(dir: &Path) -> Result<(DumpMeta, DType)> {
    let path = dir.join(MANIFEST_FILE);
    let text = fs::read_to_string(&path).map_err(|e| Error::io(&path, e))?;
    let bad = |message: String| Error::Manifest {
        path: path.clone(),
        message,
    };
    let mf: ManifestFile = serde_json::from_str(&text).map_err(|e| bad(e.to_string()))?;
    if mf.version != FORMAT_VERSION {
        return Err(bad(format!("unsupported version {}", mf.version)));
    }
    let dtype = DType::parse(&mf.dtype).ok_or_else(|| Error::UnknownDtype(mf.dtype.clone()))?;
    let layout = SequenceLayout::new(
        mf.seq_len,
        mf.text_span[0]..mf.text_span[1],
        mf.speech_span[0]..mf.speech_span[1],
    )?;
    if mf.n_layers == 0 || mf.n_heads == 0 {
        return Err(bad("n_layers and n_heads must be positive".into()));
    }
    Ok((
        DumpMeta {
            utterance_id: mf.utterance_id,
            n_layers: mf.n_layers,
            n_heads: mf.n_heads,
            layout,
            sliced: mf.sliced,
        },
        dtype,
    ))
}

fn read_payloads<T: Scalar>(dir: &Path, meta: DumpMeta) -> Result<AttentionDump<T>> {
    let (rows, cols) = meta.matrix_shape();
    let width = T::DTYPE.size_of();
    let expected_bytes = rows * cols * width;
    let mut matrices = Vec::with_capacity(meta.n_layers * meta.n_heads);
    for l in 0..meta.n_layers {
        for h in 0..meta.n_heads {
            let p: PathBuf = dir.join(payload_file_name(l, h));
            let bytes = fs::read(&p).map_err(|e| Error::io(&p, e))?;
            if bytes.len() != expected_bytes {
                return Err(Error::shape(
                    p.display().to_string(),
                    format!(
                        "{expected_bytes} bytes ({rows}x{cols} {})",
                        T::DTYPE.as_str()
                    ),
                    format!("{} bytes", bytes.len()),
                ));
            }
            let data = bytes.chunks_exact(width).map(T::read_le).collect();
            matrices.push(Matrix::new(rows, cols, data)?);
        }
    }
    AttentionDump::new(meta, matrices)
}

/// Row-sum range of one head's matrix, used by dump inspection.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct RowSumRange {
    pub layer: usize,
    pub head: usize,
    pub min: f64,
    pub max: f64,
}

/// Per-head min/max row sums over all stored rows.
pub fn row_sum_ranges<T: Scalar>(dump: &AttentionDump<T>) -> Vec<RowSumRange> {
    dump.heads()
        .map(|((layer, head), m)| {
            let (mut min, mut max) = (f64::INFINITY, f64::NEG_INFINITY);
            for i in 0..m.rows() {
                let s = m.row_sum(i);
                min = min.min(s);
                max = max.max(s);
            }
            RowSumRange {
                layer,
                head,
                min,
                max,
            }
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn layout5() -> SequenceLayout {
        SequenceLayout::new(5, 0..2, 2..5).unwrap()
    }

    #[test]
    fn layout_rejects_overlap_and_empty_spans() {
        assert!(SequenceLayout::new(5, 0..3, 2..5).is_err());
        assert!(SequenceLayout::new(5, 1..1, 2..5).is_err());
        assert!(SequenceLayout::new(5, 0..2, 2..6).is_err());
        assert!(SequenceLayout::new(5, 3..4, 0..2).is_err());
        let l = layout5();
        assert_eq!((l.text_len(), l.speech_len()), (2, 3));
    }

    #[test]
    fn extract_block_of_5x5() {
        let full = Matrix::from_fn(5, 5, |i, j| (i * 5 + j) as f64 / 100.0);
        let a = extract_alignment_submatrix(&full, &layout5()).unwrap();
        assert_eq!(a.shape(), (3, 2));
        for i in 0..3 {
            for j in 0..2 {
                assert_eq!(a.get(i, j), full.get(i + 2, j));
            }
        }
    }

    #[test]
    fn identity_has_no_speech_to_text_mass() {
        let a = extract_alignment_submatrix(&Matrix::<f64>::identity(5), &layout5()).unwrap();
        assert_eq!(a.shape(), (3, 2));
        assert!(a.as_slice().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn extract_rejects_wrong_shape() {
        let full = Matrix::<f64>::zeros(4, 4);
        assert!(matches!(
            extract_alignment_submatrix(&full, &layout5()),
            Err(Error::ShapeMismatch { .. })
        ));
    }

    fn meta(sliced: bool) -> DumpMeta {
        DumpMeta {
            utterance_id: "u".into(),
            n_layers: 1,
            n_heads: 2,
            layout: layout5(),
            sliced,
        }
    }

    #[test]
    fn negative_entry_rejected_before_write() {
        let dir = tempfile::tempdir().unwrap();
        let target = dir.path().join("dump");
        let mut bad = Matrix::<f32>::zeros(3, 2);
        bad.set(1, 1, -0.5);
        let dump = AttentionDump {
            meta: meta(true),
            matrices: vec![Matrix::zeros(3, 2), bad],
        };
        assert!(dump.save(&target).is_err());
        assert!(!target.exists());
    }

    #[test]
    fn truncated_payload_is_shape_mismatch() {
        let dir = tempfile::tempdir().unwrap();
        let dump = AttentionDump::from_fn(meta(true), |_, _| Matrix::<f32>::zeros(3, 2)).unwrap();
        dump.save(dir.path()).unwrap();
        let p = dir.path().join(payload_file_name(0, 1));
        let bytes = fs::read(&p).unwrap();
        fs::write(&p, &bytes[..bytes.len() - 1]).unwrap();
        assert!(matches!(
            load_dump(dir.path()),
            Err(Error::ShapeMismatch { .. })
        ));
    }

    #[test]
    fn unknown_dtype_and_version() {
        let dir = tempfile::tempdir().unwrap();
        let dump = AttentionDump::from_fn(meta(true), |_, _| Matrix::<f32>::zeros(3, 2)).unwrap();
        dump.save(dir.path()).unwrap();
        let mp = dir.path().join(MANIFEST_FILE);
        let text = fs::read_to_string(&mp).unwrap();
        fs::write(&mp, text.replace("\"f32\"", "\"bf16\"")).unwrap();
        assert!(matches!(load_dump(dir.path()), Err(Error::UnknownDtype(_))));
        fs::write(&mp, text.replace("\"version\": 1", "\"version\": 2")).unwrap();
        assert!(matches!(load_dump(dir.path()), Err(Error::Manifest { .. })));
        fs::write(&mp, "{not json").unwrap();
        assert!(matches!(load_dump(dir.path()), Err(Error::Manifest { .. })));
    }

    #[test]
    fn unknown_manifest_keys_ignored() {
        let dir = tempfile::tempdir().unwrap();
        let dump = AttentionDump::from_fn(meta(false), |_, _| Matrix::<f64>::identity(5)).unwrap();
        dump.save(dir.path()).unwrap();
        let mp = dir.path().join(MANIFEST_FILE);
        let text = fs::read_to_string(&mp).unwrap();
        fs::write(&mp, text.replacen('{', "{\n  \"model\": \"toy\",", 1)).unwrap();
        assert_eq!(load_dump(dir.path()).unwrap(), AnyDump::F64(dump));
    }

    #[test]
    fn typed_load_checks_dtype() {
        let dir = tempfile::tempdir().unwrap();
        let dump = AttentionDump::from_fn(meta(true), |_, _| Matrix::<f64>::zeros(3, 2)).unwrap();
        dump.save(dir.path()).unwrap();
        assert!(matches!(
            AttentionDump::<f32>::load(dir.path()),
            Err(Error::DtypeMismatch { .. })
        ));
        assert_eq!(AttentionDump::<f64>::load(dir.path()).unwrap(), dump);
    }

    #[test]
    fn twenty_four_by_fourteen_file_count_and_size() {
        let dir = tempfile::tempdir().unwrap();
        let m = DumpMeta {
            utterance_id: "big".into(),
            n_layers: 24,
            n_heads: 14,
            layout: SequenceLayout::new(64, 0..20, 20..64).unwrap(),
            sliced: false,
        };
        let dump = AttentionDump::from_fn(m, |_, _| Matrix::<f32>::identity(64)).unwrap();
        dump.save(dir.path()).unwrap();
        let bins: Vec<_> = fs::read_dir(dir.path())
            .unwrap()
            .map(|e| e.unwrap().path())
            .filter(|p| p.extension().is_some_and(|e| e == "bin"))
            .collect();
        assert_eq!(bins.len(), 24 * 14);
        for p in bins {
            assert_eq!(fs::metadata(p).unwrap().len(), 64 * 64 * 4);
        }
    }
}
