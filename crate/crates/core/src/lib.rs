//! Scene tokenization into condensed feature grids.
//!
//! Posed RGBD frames with per-frame 2D feature maps are back-projected into a
//! world-frame point cloud ([`geometry`]), voxelized with mean pooling
//! ([`voxel`]), then condensed along the height axis into one token per
//! occupied `(x, y)` column ([`condense`]). Heights are encoded with a rotary
//! embedding before pooling; horizontal positions with Fourier features
//! ([`position`]).
//!
//! Two smaller pieces live alongside: a preference loss over answer and
//! scene contrasts ([`dpo`]) and answer-template coverage statistics
//! ([`templates`]).

pub mod condense;
pub mod dpo;
pub mod error;
pub mod geometry;
pub mod manifest;
pub mod pipeline;
pub mod position;
pub mod synth;
pub mod templates;
pub mod tensor;
pub mod token_file;
pub mod voxel;

pub use condense::{
    apply_horizontal_pe, compute_stats, condense, enforce_budget, CfgStats, CfgToken,
    CondensedFeatureGrid, DEFAULT_MAX_TOKENS,
};
pub use dpo::{
    accuracy_metrics, grad, loss, LogProbRecord, LossReport, RecordGrad, SceneDpoBatch,
    SceneDpoConfig,
};
pub use error::{Error, Result};
pub use geometry::{
    back_project_frame, back_project_pixel, merge_clouds, project_point, CameraIntrinsics,
    CameraPose, DepthMap, FeatureMap, FramedCapture, PointFeatureCloud,
};
pub use manifest::SceneManifest;
pub use pipeline::{tokenize, tokenize_manifest, FourierSource, Scene, TokenizeOutput, TokenizeSettings};
pub use position::{
    fourier_embed, rope_relative_check, rope_rotate, Activation, FourierConfig, Mlp, RopeConfig,
    DEFAULT_ROPE_BASE,
};
pub use templates::{normalize_answer, top_k_coverage, TemplateReport, TemplateRules, DEFAULT_TOP_K};
pub use tensor::{Tensor, TensorArchive};
pub use token_file::TokenFile;
pub use voxel::{
    grid_stats, inject_anchor, voxelize, AnchorRegion, GridStats, OriginMode, VoxelGrid,
    VoxelGridConfig, DEFAULT_VOXEL_SIZE,
};
