//! End-to-end tokenization: frames → point cloud → voxels → condensed tokens.

use std::path::{Path, PathBuf};

use rayon::prelude::*;

use crate::condense::{
    apply_horizontal_pe, condense, enforce_budget, CfgStats, CondensedFeatureGrid,
    DEFAULT_MAX_TOKENS,
};
use crate::error::{Error, Result};
use crate::geometry::{
    back_project_frame, merge_clouds, CameraIntrinsics, CameraPose, DepthMap, FeatureMap,
    FramedCapture,
};
use crate::manifest::SceneManifest;
use crate::position::{Activation, FourierConfig, Mlp, RopeConfig, DEFAULT_ROPE_BASE};
use crate::tensor::{Tensor, TensorArchive};
use crate::token_file::TokenFile;
use crate::voxel::{
    grid_stats, inject_anchor, voxelize, AnchorRegion, GridStats, OriginMode, VoxelGridConfig,
    DEFAULT_VOXEL_SIZE,
};

pub const DEFAULT_FOURIER_SEED: u64 = 0;

#[derive(Debug, Clone, PartialEq)]
pub enum FourierSource {
    Seed(u64),
    Weights(PathBuf),
    Config(FourierConfig),
}

#[derive(Debug, Clone, PartialEq)]
pub struct TokenizeSettings {
    pub voxel_size: f64,
    pub max_tokens: usize,
    pub rope_base: f64,
    pub fourier: FourierSource,
    pub origin: OriginMode,
}

impl Default for TokenizeSettings {
    fn default() -> Self {
        Self {
            voxel_size: DEFAULT_VOXEL_SIZE,
            max_tokens: DEFAULT_MAX_TOKENS,
            rope_base: DEFAULT_ROPE_BASE,
            fourier: FourierSource::Seed(DEFAULT_FOURIER_SEED),
            origin: OriginMode::Auto,
        }
    }
}

impl TokenizeSettings {
    /// Defaults overridden by whatever the manifest sets.
    pub fn from_manifest(manifest: &SceneManifest) -> Self {
        let d = Self::default();
        let fourier = match (&manifest.fourier_weights, manifest.fourier_seed) {
            (Some(path), _) => FourierSource::Weights(manifest.resolve(path)),
            (None, Some(seed)) => FourierSource::Seed(seed),
            (None, None) => d.fourier,
        };
        Self {
            voxel_size: manifest.voxel_size.unwrap_or(d.voxel_size),
            max_tokens: manifest.max_tokens.unwrap_or(d.max_tokens),
            rope_base: manifest.rope_base.unwrap_or(d.rope_base),
            fourier,
            origin: manifest.origin.map_or(OriginMode::Auto, OriginMode::Explicit),
        }
    }

    fn fourier_config(&self, dim: usize) -> Result<FourierConfig> {
        let cfg = match &self.fourier {
            FourierSource::Seed(seed) => FourierConfig::seeded(2, dim, *seed)?,
            FourierSource::Weights(path) => fourier_from_archive(&TensorArchive::read(path)?)
                .map_err(|e| Error::parse(path, e.to_string()))?,
            FourierSource::Config(cfg) => cfg.clone(),
        };
        if cfg.dim() != dim || cfg.input_dim() != 2 {
            return Err(Error::shape(
                "Fourier weights",
                vec![dim, 2],
                vec![cfg.dim(), cfg.input_dim()],
            ));
        }
        Ok(cfg)
    }
}

/// Loads Fourier weights from the entries `W`, `mlp.w1`, `mlp.b1`, `mlp.w2`,
/// `mlp.b2`. The MLP uses GELU.
pub fn fourier_from_archive(archive: &TensorArchive) -> Result<FourierConfig> {
    let w = archive.require("W")?;
    w.expect_rank("W", 2)?;
    let (half, input_dim) = (w.shape()[0], w.shape()[1]);
    let dim = half * 2;
    let expect = |name: &str, shape: &[usize]| -> Result<Vec<f64>> {
        let t = archive.require(name)?;
        if t.shape() != shape {
            return Err(Error::shape(name, shape.to_vec(), t.shape().to_vec()));
        }
        Ok(t.to_f64())
    };
    let mlp = Mlp::new(
        dim,
        expect("mlp.w1", &[dim, dim])?,
        expect("mlp.b1", &[dim])?,
        expect("mlp.w2", &[dim, dim])?,
        expect("mlp.b2", &[dim])?,
        Activation::Gelu,
    )?;
    FourierConfig::new(input_dim, dim, w.to_f64(), mlp)
}

pub fn fourier_to_archive(cfg: &FourierConfig) -> Result<TensorArchive> {
    let d = cfg.dim();
    let mlp = cfg.mlp();
    let mut a = TensorArchive::new();
    a.insert("W", Tensor::from_f64(vec![d / 2, cfg.input_dim()], cfg.projection())?);
    a.insert("mlp.w1", Tensor::from_f64(vec![d, d], mlp.w1())?);
    a.insert("mlp.b1", Tensor::from_f64(vec![d], mlp.b1())?);
    a.insert("mlp.w2", Tensor::from_f64(vec![d, d], mlp.w2())?);
    a.insert("mlp.b2", Tensor::from_f64(vec![d], mlp.b2())?);
    Ok(a)
}

/// Frames plus an optional anchor region, fully in memory.
#[derive(Debug, Clone)]
pub struct Scene {
    pub captures: Vec<FramedCapture>,
    pub anchor: Option<AnchorRegion>,
}

fn read_tensor(path: &Path) -> Result<Tensor> {
    TensorArchive::read(path)?
        .into_single()
        .map_err(|e| Error::parse(path, e.to_string()))
}

impl Scene {
    pub fn load(manifest: &SceneManifest) -> Result<Self> {
        let captures = manifest
            .frames
            .par_iter()
            .map(|frame| {
                let depth_path = manifest.resolve(&frame.depth);
                let feature_path = manifest.resolve(&frame.features);
                let depth = read_tensor(&depth_path)?;
                let features = read_tensor(&feature_path)?;
                let in_file = |path: &Path| {
                    let path = path.to_path_buf();
                    move |e: Error| Error::parse(path, e.to_string())
                };
                let depth = depth_map_from_tensor(&depth).map_err(in_file(&depth_path))?;
                let features = feature_map_from_tensor(&features).map_err(in_file(&feature_path))?;
                let [fx, fy, cx, cy] = frame.intrinsics;
                let context = |e: Error| Error::InvalidConfig(format!("frame `{}`: {e}", frame.frame_id));
                FramedCapture::new(
                    CameraIntrinsics::new(fx, fy, cx, cy).map_err(context)?,
                    CameraPose::from_row_major(&frame.pose).map_err(context)?,
                    depth,
                    features,
                    frame.frame_id.as_str(),
                )
                .map_err(context)
            })
            .collect::<Result<Vec<_>>>()?;

        let anchor = match &manifest.anchor {
            None => None,
            Some(entry) => {
                let path = manifest.resolve(&entry.vector);
                let t = read_tensor(&path)?;
                t.expect_rank("anchor vector", 1)
                    .map_err(|e| Error::parse(&path, e.to_string()))?;
                Some(AnchorRegion::from_box(entry.min, entry.max, t.to_f64())?)
            }
        };
        Ok(Self { captures, anchor })
    }
}

pub fn depth_map_from_tensor(t: &Tensor) -> Result<DepthMap> {
    t.expect_rank("depth map", 2)?;
    DepthMap::new(t.shape()[0], t.shape()[1], t.to_f64())
}

pub fn feature_map_from_tensor(t: &Tensor) -> Result<FeatureMap> {
    t.expect_rank("feature map", 3)?;
    FeatureMap::new(t.shape()[0], t.shape()[1], t.shape()[2], t.to_f64())
}

#[derive(Debug, Clone)]
pub struct TokenizeOutput {
    pub grid: GridStats,
    /// Tokens before the budget was applied.
    pub columns: usize,
    pub tokens: CondensedFeatureGrid,
    pub stats: CfgStats,
}

impl TokenizeOutput {
    pub fn token_file(&self) -> Result<TokenFile> {
        TokenFile::from_grid(&self.tokens)
    }
}

pub fn tokenize(scene: &Scene, settings: &TokenizeSettings) -> Result<TokenizeOutput> {
    let dims: Vec<usize> = scene.captures.iter().map(|c| c.features.dim()).collect();
    let Some(&dim) = dims.first() else {
        return Err(Error::EmptyScene);
    };
    if let Some(&other) = dims.iter().find(|&&d| d != dim) {
        return Err(Error::DimMismatch {
            expected: dim,
            actual: other,
        });
    }
    let rope = RopeConfig::new(dim, settings.rope_base)?;
    let fourier = settings.fourier_config(dim)?;
    let voxel_cfg = VoxelGridConfig::new(settings.voxel_size, settings.origin)?;
    if settings.max_tokens == 0 {
        return Err(Error::InvalidConfig("token budget must be at least 1".into()));
    }

    let clouds: Vec<_> = scene.captures.par_iter().map(back_project_frame).collect();
    let cloud = merge_clouds(&clouds)?;
    let mut grid = voxelize(&cloud, &voxel_cfg);
    if grid.is_empty() {
        return Err(Error::EmptyScene);
    }
    if let Some(region) = &scene.anchor {
        grid = inject_anchor(&grid, region)?;
    }
    let condensed = condense(&grid, &rope)?;
    let columns = condensed.len();
    let embedded = apply_horizontal_pe(&condensed, &fourier)?;
    let tokens = enforce_budget(&embedded, settings.max_tokens)?;
    let stats = crate::condense::compute_stats(&grid, &tokens)?;
    Ok(TokenizeOutput {
        grid: grid_stats(&grid),
        columns,
        tokens,
        stats,
    })
}

/// Loads a manifest and tokenizes it with the manifest's own settings.
pub fn tokenize_manifest(path: &Path) -> Result<TokenizeOutput> {
    let manifest = SceneManifest::load(path)?;
    let scene = Scene::load(&manifest)?;
    tokenize(&scene, &TokenizeSettings::from_manifest(&manifest))
}
