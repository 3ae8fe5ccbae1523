//! Low-rank decomposed scaling for block-wise weight quantization.
//!
//! The crate quantizes weight matrices against small normalized codebooks
//! while representing the per-element scale matrix either as classic
//! per-block columns or as a rank-r product `B * A`. The factored form
//! keeps the memory footprint of coarse blocks but can be refined with a
//! gradient loop, trained through a straight-through estimator, and merged
//! with multiplicative fine-tuning deltas without changing the stored
//! codes.
//!
//! Modules:
//! - [`matrix`]: dense row-major f64 matrices and the few kernels used here.
//! - [`svd`]: one-sided Jacobi singular value decomposition.
//! - [`codebook`]: NF4 / NF2 / symmetric INT4 level tables and bit packing.
//! - [`blockwise`]: absmax block scales, quantize / dequantize, rank rules.
//! - [`engine`]: alternating refinement of codes and scale factors.
//! - [`qat`]: straight-through fake quantization and a toy training loop.
//! - [`peft`]: multiplicative delta extraction, merging, and rank probes.
//! - [`metrics`]: error measures and the method comparison report.
//! - [`io`]: the tensor and packed artifact file formats.

pub mod blockwise;
pub mod codebook;
pub mod engine;
pub mod error;
pub mod io;
pub mod matrix;
pub mod metrics;
pub mod peft;
pub mod qat;
pub mod svd;

pub use blockwise::{
    aligned_rank, blockwise_quantize, compute_block_scales, dequantize, equivalent_rank,
    expand_scales, mixed_precision_plan, BlockScales, MixedBits, QuantizedTensor, ScaleRepr,
};
pub use codebook::{build_codebook, pack_codes, unpack_codes, Codebook, CodebookId};
pub use engine::{refine, AdamWParams, AdamWState, FactorPair, RefineConfig, RefineReport};
pub use error::{Error, Result};
pub use io::{read_packed, read_tensor, write_packed, write_tensor, write_text};
pub use matrix::DenseMatrix;
pub use metrics::{comparison_report, MethodEval, ReportInput, ReportTable, ScaleBudget};
pub use peft::{effective_rank, merged_dequantize, peft_delta};
pub use qat::{
    fake_quant_backward, fake_quant_forward, qat_demo_config, qat_demo_instance, toy_qat_train,
    FakeQuantCache, QatDemo, RegressionSet, TrainConfig, TrainMode,
};
pub use svd::{nuclear_norm, svd, truncated_svd, SvdResult};
