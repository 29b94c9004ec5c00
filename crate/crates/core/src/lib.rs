// SPDX-License-Identifier: Apache-2.0

//! Post-hoc out-of-distribution scoring on exported classifier features.
//!
//! Inputs are penultimate-layer features plus the final linear layer
//! (`W`, `b`) stored as a JSON manifest and little-endian tensor files (see
//! [`interchange`]). Every method scores a sample so that higher means
//! more in-distribution:
//!
//! * logit scores: MSP, MaxLogit, Energy, GEN ([`logit`])
//! * feature shaping: ReAct, ASH-S/P/B, DICE ([`shaping`])
//! * principal-subspace residuals: ViM ([`vim`])
//! * class-aware relative error and its decoupled, scaled form: CARef
//!   ([`caref`]) and CADRef ([`cadref`])
//!
//! [`registry`] binds method names to fit/score pipelines, [`metrics`]
//! turns score vectors into AUROC / FPR95 reports, [`synth`] builds seeded
//! benchmarks and [`cli`] holds the commands behind the `oodscore` binary.
//!
//! Runnable examples live in `examples/`: `logit_scores`, `feature_shaping`,
//! `vim_subspace`, `caref_cadref`, `evaluate_benchmark`, `ablation` and
//! `interchange_roundtrip`.

pub mod cadref;
pub mod caref;
pub mod cli;
pub mod error;
pub mod interchange;
pub mod linalg;
pub mod logit;
pub mod metrics;
pub mod registry;
pub mod shaping;
pub mod synth;
pub mod vim;

pub use error::{OodError, Result};
pub use interchange::{ClassifierHead, Dataset, FeatureMatrix};
pub use metrics::DetectionReport;
pub use registry::{Hyperparams, MethodSpec};
