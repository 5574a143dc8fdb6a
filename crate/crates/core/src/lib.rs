//! Knowledge-guided dense CRF refinement of segmentation probability maps.
//!
//! The numerical core is generic over [`Scalar`] (`f32` or `f64`); the `*64`
//! and `*32` aliases below name the common instantiations. Configuration and
//! knowledge graphs are always `f64`.

pub mod config;
pub mod crf;
pub mod error;
pub mod fusion;
pub mod graph;
pub mod grid;
pub mod maps;
pub mod matrix;
pub mod npy;
pub mod phantom;
pub mod scalar;
pub mod uncertainty;

pub use config::{load_config, EngineConfig, UpdateSchedule};
pub use crf::{
    anatomical_message, evaluate_energy, exact_marginals, free_energy, mean_field_refine,
    pairwise_kernel, pairwise_message, soft_iou_loss, unary_potential, AnatomicalMessage,
    MeanFieldState, PairwiseKernel, PotentialField, Refinement, SweepEnergy,
};
pub use error::{Error, Result};
pub use graph::{
    estimate_affine, load_graph, match_landmarks, rasterize_expected_region, AffineFit,
    AffineTransform, AnatomyEdge, AnatomyNode, ConstraintMatrix, KnowledgeGraph, Landmark,
    Relation,
};
pub use fusion::{fuse, fuse_probs, fusion_weights, resample_to, Fused, LevelStack};
pub use grid::Grid2D;
pub use maps::{FeatureMap, LabelMap, ProbMap};
pub use matrix::{CompatibilityMatrix, LabelMatrix};
pub use npy::{read_labels, read_tensor, write_labels, write_tensor};
pub use phantom::{
    corrupt, dice, generate_scene, mean_foreground_dice, CorruptionKind, CorruptionSpec,
    PhantomScene, Template,
};
pub use scalar::Scalar;
pub use uncertainty::{
    predictive_entropy, synthesize_ensemble, uncertainty_map, violation_norm, StochasticEnsemble,
    UncertaintyMap, UncertaintySummary,
};

pub type Grid64 = Grid2D<f64>;
pub type ProbMap64 = ProbMap<f64>;
pub type ProbMap32 = ProbMap<f32>;
pub type FeatureMap64 = FeatureMap<f64>;
pub type FeatureMap32 = FeatureMap<f32>;
pub type PotentialField64 = PotentialField<f64>;
pub type AffineTransform64 = AffineTransform<f64>;
pub type LabelMatrix64 = LabelMatrix<f64>;
pub type CompatibilityMatrix64 = CompatibilityMatrix<f64>;
pub type MeanFieldState64 = MeanFieldState<f64>;
pub type Refinement64 = Refinement<f64>;
pub type UncertaintyMap64 = UncertaintyMap<f64>;
pub type StochasticEnsemble64 = StochasticEnsemble<f64>;
pub type LevelStack64 = LevelStack<f64>;
