//! Synthetic box-room scenes with known occupancy.
//!
//! A rectangular room (floor, four walls, a few furniture boxes) is imaged
//! by downward-looking pinhole cameras. Depth comes from exact ray casting,
//! and the occupied voxels are derived directly from the ray hits, without
//! going through the tokenizer's back-projection code.

use std::collections::BTreeSet;
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::manifest::{AnchorEntry, FrameEntry, SceneManifest};
use crate::pipeline::{depth_map_from_tensor, feature_map_from_tensor, Scene};
use crate::geometry::{CameraIntrinsics, CameraPose, FramedCapture};
use crate::tensor::{Tensor, TensorArchive};
use crate::voxel::{AnchorRegion, DEFAULT_VOXEL_SIZE};
use crate::condense::DEFAULT_MAX_TOKENS;

const FLOOR_Z: f64 = 0.1;
const WALL_TOP: f64 = 2.4;
const WALL_INSET: f64 = 0.03;
/// Cells whose mean lands this close (in voxel units) to a voxel face are
/// dropped so floating-point rounding cannot move them across it.
const FACE_MARGIN: f64 = 1e-6;

#[derive(Debug, Clone, PartialEq)]
pub struct SynthConfig {
    pub seed: u64,
    pub frames: usize,
    pub feature_size: usize,
    /// Depth pixels per feature cell along each axis.
    pub depth_scale: usize,
    pub dim: usize,
    pub voxel_size: f64,
    pub max_tokens: usize,
    pub anchor: bool,
}

impl Default for SynthConfig {
    fn default() -> Self {
        Self {
            seed: 0,
            frames: 50,
            feature_size: 64,
            depth_scale: 2,
            dim: 64,
            voxel_size: DEFAULT_VOXEL_SIZE,
            max_tokens: DEFAULT_MAX_TOKENS,
            anchor: true,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GroundTruth {
    pub seed: u64,
    pub occupied_voxels: usize,
    pub occupied_columns: usize,
    pub room_size: [f64; 2],
}

#[derive(Debug, Clone, PartialEq)]
pub struct SynthScene {
    pub manifest: SceneManifest,
    pub depths: Vec<Tensor>,
    pub features: Vec<Tensor>,
    pub anchor_vector: Option<Tensor>,
    pub truth: GroundTruth,
}

#[derive(Debug, Clone, Copy)]
struct Aabb {
    min: [f64; 3],
    max: [f64; 3],
}

impl Aabb {
    /// Entry distance of the ray `origin + t·dir`, if it hits with `t > 0`.
    fn hit(&self, origin: [f64; 3], dir: [f64; 3]) -> Option<f64> {
        let mut t_near = f64::NEG_INFINITY;
        let mut t_far = f64::INFINITY;
        for a in 0..3 {
            if dir[a] == 0.0 {
                if origin[a] < self.min[a] || origin[a] > self.max[a] {
                    return None;
                }
                continue;
            }
            let t0 = (self.min[a] - origin[a]) / dir[a];
            let t1 = (self.max[a] - origin[a]) / dir[a];
            t_near = t_near.max(t0.min(t1));
            t_far = t_far.min(t0.max(t1));
        }
        (t_near <= t_far && t_near > 0.0).then_some(t_near)
    }
}

fn room_boxes(size: [f64; 2]) -> Vec<Aabb> {
    let [lx, ly] = size;
    let t = 0.2;
    vec![
        Aabb { min: [-t, -t, FLOOR_Z], max: [WALL_INSET, ly + t, WALL_TOP] },
        Aabb { min: [lx - WALL_INSET, -t, FLOOR_Z], max: [lx + t, ly + t, WALL_TOP] },
        Aabb { min: [-t, -t, FLOOR_Z], max: [lx + t, WALL_INSET, WALL_TOP] },
        Aabb { min: [-t, ly - WALL_INSET, FLOOR_Z], max: [lx + t, ly + t, WALL_TOP] },
    ]
}

struct Camera {
    center: [f64; 3],
    yaw: f64,
}

impl Camera {
    /// Camera-to-world pose looking straight down, image x turned by `yaw`.
    fn pose_rows(&self) -> [f64; 16] {
        let (s, c) = self.yaw.sin_cos();
        [
            c, s, 0.0, self.center[0], //
            s, -c, 0.0, self.center[1], //
            0.0, 0.0, -1.0, self.center[2], //
            0.0, 0.0, 0.0, 1.0,
        ]
    }

    /// World direction of the ray through camera-frame `(a, b, 1)`.
    fn ray(&self, a: f64, b: f64) -> [f64; 3] {
        let (s, c) = self.yaw.sin_cos();
        [c * a + s * b, s * a - c * b, -1.0]
    }
}

fn near_face(value: f64, voxel_size: f64) -> bool {
    let f = value / voxel_size;
    let frac = f - f.floor();
    !(FACE_MARGIN..=1.0 - FACE_MARGIN).contains(&frac)
}

pub fn generate(cfg: &SynthConfig) -> Result<SynthScene> {
    if cfg.frames == 0 || cfg.feature_size == 0 || cfg.depth_scale == 0 {
        return Err(Error::InvalidConfig("synthetic scene needs frames and pixels".into()));
    }
    if cfg.dim == 0 || !cfg.dim.is_multiple_of(2) {
        return Err(Error::InvalidConfig(format!(
            "feature dimension must be positive and even, got {}",
            cfg.dim
        )));
    }
    if !(cfg.voxel_size > 0.0) || cfg.max_tokens == 0 {
        return Err(Error::InvalidConfig("voxel size and token budget must be positive".into()));
    }

    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let room = [
        0.2 * rng.random_range(20..=30) as f64,
        0.2 * rng.random_range(16..=24) as f64,
    ];
    let mut boxes = room_boxes(room);
    let furniture = rng.random_range(3..=6);
    let mut first_furniture = None;
    for n in 0..furniture {
        let sx = rng.random_range(0.4..1.2);
        let sy = rng.random_range(0.4..1.2);
        let h = rng.random_range(0.3..1.2);
        let x0 = rng.random_range(0.3..room[0] - 0.3 - sx);
        let y0 = rng.random_range(0.3..room[1] - 0.3 - sy);
        let b = Aabb {
            min: [x0, y0, FLOOR_Z],
            max: [x0 + sx, y0 + sy, FLOOR_Z + h],
        };
        if n == 0 {
            first_furniture = Some(b);
        }
        boxes.push(b);
    }

    // cameras on a jittered grid over the room
    let cols = ((cfg.frames as f64 * room[0] / room[1]).sqrt().ceil() as usize).max(1);
    let rows = cfg.frames.div_ceil(cols);
    let cameras: Vec<Camera> = (0..cfg.frames)
        .map(|n| {
            let (gx, gy) = (n % cols, n / cols);
            let x = room[0] * (gx as f64 + 0.5) / cols as f64 + rng.random_range(-0.2..0.2);
            let y = room[1] * (gy as f64 + 0.5) / rows as f64 + rng.random_range(-0.2..0.2);
            Camera {
                center: [
                    x.clamp(0.3, room[0] - 0.3),
                    y.clamp(0.3, room[1] - 0.3),
                    rng.random_range(1.7..2.1),
                ],
                yaw: rng.random_range(0.0..std::f64::consts::TAU),
            }
        })
        .collect();

    let h = cfg.feature_size;
    let big = cfg.feature_size * cfg.depth_scale;
    let focal = 0.6 * big as f64;
    let principal = (big as f64 - 1.0) / 2.0;
    let intrinsics = CameraIntrinsics::new(focal, focal, principal, principal)?;

    let mut voxels: BTreeSet<[i64; 3]> = BTreeSet::new();
    let mut depths = Vec::with_capacity(cfg.frames);
    let mut features = Vec::with_capacity(cfg.frames);
    let mut frames = Vec::with_capacity(cfg.frames);

    for (n, cam) in cameras.iter().enumerate() {
        let mut depth = vec![0.0_f32; big * big];
        let mut hits = vec![[0.0_f64; 3]; big * big];
        for v in 0..big {
            for u in 0..big {
                let dir = cam.ray(
                    (u as f64 - principal) / focal,
                    (v as f64 - principal) / focal,
                );
                let mut t = cam.center[2] - FLOOR_Z;
                for b in &boxes {
                    if let Some(tb) = b.hit(cam.center, dir) {
                        t = t.min(tb);
                    }
                }
                // the tokenizer sees f32 depth, so the truth uses it too
                let t32 = t as f32;
                let t = t32 as f64;
                depth[v * big + u] = t32;
                hits[v * big + u] = [
                    cam.center[0] + t * dir[0],
                    cam.center[1] + t * dir[1],
                    cam.center[2] + t * dir[2],
                ];
            }
        }

        for r in 0..h {
            for c in 0..h {
                let mut sum = [0.0; 3];
                for v in r * cfg.depth_scale..(r + 1) * cfg.depth_scale {
                    for u in c * cfg.depth_scale..(c + 1) * cfg.depth_scale {
                        let p = hits[v * big + u];
                        for a in 0..3 {
                            sum[a] += p[a];
                        }
                    }
                }
                let count = (cfg.depth_scale * cfg.depth_scale) as f64;
                let mean = sum.map(|s| s / count);
                if mean.iter().any(|m| near_face(*m, cfg.voxel_size)) {
                    for v in r * cfg.depth_scale..(r + 1) * cfg.depth_scale {
                        for u in c * cfg.depth_scale..(c + 1) * cfg.depth_scale {
                            depth[v * big + u] = 0.0;
                        }
                    }
                    continue;
                }
                voxels.insert(mean.map(|m| (m / cfg.voxel_size).floor() as i64));
            }
        }

        let feature: Vec<f32> = (0..h * h * cfg.dim)
            .map(|_| {
                let z: f64 = StandardNormal.sample(&mut rng);
                z as f32
            })
            .collect();
        depths.push(Tensor::new(vec![big, big], depth)?);
        features.push(Tensor::new(vec![h, h, cfg.dim], feature)?);
        frames.push(FrameEntry {
            frame_id: format!("{n:03}"),
            depth: format!("depth_{n:03}.cfgt").into(),
            features: format!("features_{n:03}.cfgt").into(),
            intrinsics: intrinsics.to_array(),
            pose: cam.pose_rows().to_vec(),
        });
    }

    let (anchor, anchor_vector) = match (cfg.anchor, first_furniture) {
        (true, Some(b)) => {
            let vector: Vec<f32> = (0..cfg.dim)
                .map(|_| {
                    let z: f64 = StandardNormal.sample(&mut rng);
                    z as f32
                })
                .collect();
            (
                Some(AnchorEntry {
                    min: [b.min[0] - 0.05, b.min[1] - 0.05, 0.0],
                    max: [b.max[0] + 0.05, b.max[1] + 0.05, b.max[2] + 0.2],
                    vector: "anchor.cfgt".into(),
                }),
                Some(Tensor::new(vec![cfg.dim], vector)?),
            )
        }
        _ => (None, None),
    };

    let columns: BTreeSet<[i64; 2]> = voxels.iter().map(|v| [v[0], v[1]]).collect();
    let manifest = SceneManifest {
        voxel_size: Some(cfg.voxel_size),
        max_tokens: Some(cfg.max_tokens),
        fourier_seed: Some(cfg.seed),
        origin: Some([0.0; 3]),
        frames,
        anchor,
        ..Default::default()
    };
    Ok(SynthScene {
        manifest,
        depths,
        features,
        anchor_vector,
        truth: GroundTruth {
            seed: cfg.seed,
            occupied_voxels: voxels.len(),
            occupied_columns: columns.len(),
            room_size: room,
        },
    })
}

impl SynthScene {
    /// Writes `manifest.toml`, the tensor files and `ground_truth.toml` into `dir`.
    pub fn write(&self, dir: &Path) -> Result<()> {
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        for ((frame, depth), feature) in self.manifest.frames.iter().zip(&self.depths).zip(&self.features) {
            TensorArchive::single("depth", depth.clone()).write(&dir.join(&frame.depth))?;
            TensorArchive::single("features", feature.clone()).write(&dir.join(&frame.features))?;
        }
        if let (Some(entry), Some(vector)) = (&self.manifest.anchor, &self.anchor_vector) {
            TensorArchive::single("anchor", vector.clone()).write(&dir.join(&entry.vector))?;
        }
        let manifest_path = dir.join("manifest.toml");
        std::fs::write(&manifest_path, self.manifest.to_toml_string())
            .map_err(|e| Error::io(&manifest_path, e))?;
        let truth_path = dir.join("ground_truth.toml");
        let truth = toml::to_string(&self.truth).expect("ground truth serializes");
        std::fs::write(&truth_path, truth).map_err(|e| Error::io(&truth_path, e))?;
        Ok(())
    }

    /// The same scene without touching the filesystem.
    pub fn to_scene(&self) -> Result<Scene> {
        let captures = self
            .manifest
            .frames
            .iter()
            .zip(&self.depths)
            .zip(&self.features)
            .map(|((frame, depth), feature)| {
                let [fx, fy, cx, cy] = frame.intrinsics;
                FramedCapture::new(
                    CameraIntrinsics::new(fx, fy, cx, cy)?,
                    CameraPose::from_row_major(&frame.pose)?,
                    depth_map_from_tensor(depth)?,
                    feature_map_from_tensor(feature)?,
                    frame.frame_id.as_str(),
                )
            })
            .collect::<Result<Vec<_>>>()?;
        let anchor = match (&self.manifest.anchor, &self.anchor_vector) {
            (Some(entry), Some(v)) => Some(AnchorRegion::from_box(entry.min, entry.max, v.to_f64())?),
            _ => None,
        };
        Ok(Scene { captures, anchor })
    }
}
