//! Graph classification with distances to learnable template graphs.
//!
//! Graphs `(C, F, h)` are embedded as the vector of Fused Gromov-Wasserstein
//! distances to `K` templates. The templates, the structure/feature
//! trade-off `α`, an optional GIN feature extractor and an MLP head are
//! trained end to end.

pub mod checkpoint;
pub mod config;
pub mod error;
pub mod fgw;
pub mod generators;
pub mod graph;
pub mod layer;
pub mod nn;
pub mod ot;
pub mod pca;
pub mod trainer;
pub mod tu;

pub use error::{Error, Result};
pub use graph::{Graph, LabeledDataset, StructureKind};
pub use ot::{brute_force_ot, solve_exact_ot, Coupling, OtSolution};
pub use fgw::{solve_fgw, AttributedView, CgOptions, FgwResult, InitialCoupling};
pub use layer::{apply_constraints, simplex_project, tfgw_backward, tfgw_forward, Template, TemplateGrad, TfgwGrads, TfgwRecord};
pub use config::{AlphaMode, TemplateCount, TrainConfig, WeightMode};
pub use checkpoint::{load_checkpoint, save_checkpoint};
pub use pca::{pca_project, Pca};
pub use trainer::{cross_validate, evaluate, init_templates, train, CvReport, FoldReport, HistoryRecord, TfgwModel, TrainOutcome};
pub use tu::{load_tu_dataset, write_tu_dataset, TuOptions};
