//! Alignment analysis and supervision for decoder-only TTS attention.
//!
//! The crate extracts the speech-to-text block from attention dumps, finds
//! the optimal monotone alignment path through it, scores alignment quality
//! (OAS), designates alignment heads, provides the OAS and progress-bar
//! losses with analytic gradients, and builds sparse chain-of-thought
//! supervision targets from teacher alignments.
//!
//! Numeric code is generic over [`Scalar`] (`f32` or `f64`); the aliases
//! below name the concrete instantiations.

pub mod analysis;
pub mod error;
pub mod gradcheck;
pub mod losses;
pub mod matrix;
pub mod metric;
pub mod pipeline;
pub mod scalar;
pub mod seed;
pub mod selfcheck;
pub mod store;
pub mod supervision;
pub mod synth;
pub mod viterbi;

pub use analysis::{linear_fit, oas_wer_report, pearson, CorrReport, UtteranceRecord, WerEntry};
pub use error::{Error, Result};
pub use losses::{
    alignment_mask, oas_loss, oas_loss_grad_wrt_a, oas_loss_grad_wrt_logits, progress_loss,
    progress_loss_grad, AlignmentMask,
};
pub use matrix::{AlignmentMatrix, Matrix};
pub use metric::{
    final_oas, layer_topk_mean, oas, per_head_oas, select_alignment_heads, HeadPolicy, HeadSet,
    OasStats, OasTable,
};
pub use scalar::{DType, Scalar};
pub use store::{
    extract_alignment_submatrix, load_dump, save_dump, AnyDump, AttentionDump, DumpMeta,
    SequenceLayout,
};
pub use supervision::{
    build_supervision_from_matrix, build_supervision_from_path, full_repeat_targets,
    progress_values, sparse_progress_targets, sparse_repeat_targets, SparseTarget,
    SupervisionBundle, TokenSequence,
};
pub use viterbi::{
    brute_force_optimal_path, optimal_path, path_score, path_to_durations, AlignmentPath,
    DurationVector,
};

pub type MatrixF32 = Matrix<f32>;
pub type MatrixF64 = Matrix<f64>;
pub type AlignmentMatrixF32 = AlignmentMatrix<f32>;
pub type AlignmentMatrixF64 = AlignmentMatrix<f64>;
pub type AttentionDumpF32 = AttentionDump<f32>;
pub type AttentionDumpF64 = AttentionDump<f64>;
