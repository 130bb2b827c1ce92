//! Pinhole camera models and pixel to world back-projection.
//!
//! A pixel `q = (u, v)` with depth `D(q)` lifts to the world point
//! `T · [D(q) · K⁻¹ · (u, v, 1)ᵀ ; 1]`, where `K` is the intrinsic matrix and
//! `T` the camera-to-world pose. [`back_project_frame`] then averages the
//! lifted pixels over each feature-map cell so that every 3D point lines up
//! with one feature vector.

use std::sync::Arc;

use nalgebra::{Matrix4, Vector4};

use crate::error::{Error, Result};

const POSE_TOLERANCE: f64 = 1e-5;

/// Pinhole intrinsics `K = [[fx, 0, cx], [0, fy, cy], [0, 0, 1]]` in pixels.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CameraIntrinsics {
    fx: f64,
    fy: f64,
    cx: f64,
    cy: f64,
}

impl CameraIntrinsics {
    pub fn new(fx: f64, fy: f64, cx: f64, cy: f64) -> Result<Self> {
        if !(fx.is_finite() && fx > 0.0 && fy.is_finite() && fy > 0.0) {
            return Err(Error::InvalidConfig(format!(
                "focal lengths must be finite and positive (fx={fx}, fy={fy})"
            )));
        }
        if !(cx.is_finite() && cy.is_finite()) {
            return Err(Error::InvalidConfig(format!(
                "principal point must be finite (cx={cx}, cy={cy})"
            )));
        }
        Ok(Self { fx, fy, cx, cy })
    }

    pub fn identity() -> Self {
        Self {
            fx: 1.0,
            fy: 1.0,
            cx: 0.0,
            cy: 0.0,
        }
    }

    pub fn fx(&self) -> f64 {
        self.fx
    }

    pub fn fy(&self) -> f64 {
        self.fy
    }

    pub fn cx(&self) -> f64 {
        self.cx
    }

    pub fn cy(&self) -> f64 {
        self.cy
    }

    /// `[fx, fy, cx, cy]`.
    pub fn to_array(&self) -> [f64; 4] {
        [self.fx, self.fy, self.cx, self.cy]
    }
}

/// Rigid camera-to-world transform stored as a homogeneous 4×4 matrix.
///
/// The inverse is computed once at construction so that projection is the
/// algebraic inverse of back-projection rather than a transpose shortcut.
#[derive(Debug, Clone, PartialEq)]
pub struct CameraPose {
    camera_to_world: Matrix4<f64>,
    world_to_camera: Matrix4<f64>,
}

impl CameraPose {
    pub fn identity() -> Self {
        Self {
            camera_to_world: Matrix4::identity(),
            world_to_camera: Matrix4::identity(),
        }
    }

    /// Builds a pose from 16 numbers in row-major order.
    pub fn from_row_major(values: &[f64]) -> Result<Self> {
        if values.len() != 16 {
            return Err(Error::shape("pose", vec![16], vec![values.len()]));
        }
        Self::from_matrix(Matrix4::from_row_slice(values))
    }

    pub fn from_matrix(m: Matrix4<f64>) -> Result<Self> {
        if m.iter().any(|v| !v.is_finite()) {
            return Err(Error::InvalidConfig("pose contains non-finite values".into()));
        }
        let bottom = [m[(3, 0)], m[(3, 1)], m[(3, 2)], m[(3, 3)]];
        if bottom != [0.0, 0.0, 0.0, 1.0] {
            return Err(Error::InvalidConfig(format!(
                "pose bottom row must be [0, 0, 0, 1], got {bottom:?}"
            )));
        }
        let r = m.fixed_view::<3, 3>(0, 0).into_owned();
        let gram = r.transpose() * r - nalgebra::Matrix3::identity();
        let worst = gram.iter().fold(0.0_f64, |acc, v| acc.max(v.abs()));
        if worst > POSE_TOLERANCE {
            return Err(Error::InvalidConfig(format!(
                "pose rotation is not orthonormal (max |RᵀR - I| = {worst:e})"
            )));
        }
        let det = r.determinant();
        if (det - 1.0).abs() > POSE_TOLERANCE {
            return Err(Error::InvalidConfig(format!(
                "pose rotation determinant must be +1, got {det}"
            )));
        }
        let world_to_camera = m
            .try_inverse()
            .ok_or_else(|| Error::InvalidConfig("pose is not invertible".into()))?;
        Ok(Self {
            camera_to_world: m,
            world_to_camera,
        })
    }

    pub fn matrix(&self) -> &Matrix4<f64> {
        &self.camera_to_world
    }

    pub fn to_row_major(&self) -> [f64; 16] {
        let mut out = [0.0; 16];
        for r in 0..4 {
            for c in 0..4 {
                out[r * 4 + c] = self.camera_to_world[(r, c)];
            }
        }
        out
    }

    /// Left-composes a rigid transform: returns the pose `other · self`.
    pub fn then(&self, other: &CameraPose) -> Result<CameraPose> {
        CameraPose::from_matrix(other.camera_to_world * self.camera_to_world)
    }

    pub fn transform_point(&self, p: [f64; 3]) -> [f64; 3] {
        apply(&self.camera_to_world, p)
    }
}

fn apply(m: &Matrix4<f64>, p: [f64; 3]) -> [f64; 3] {
    let h = m * Vector4::new(p[0], p[1], p[2], 1.0);
    [h[0], h[1], h[2]]
}

#[inline]
fn is_valid_depth(depth: f64) -> bool {
    depth.is_finite() && depth > 0.0
}

/// Per-pixel metric depth, row-major `height × width`.
///
/// Zero and non-finite entries mark holes.
#[derive(Debug, Clone, PartialEq)]
pub struct DepthMap {
    height: usize,
    width: usize,
    values: Vec<f64>,
}

impl DepthMap {
    pub fn new(height: usize, width: usize, values: Vec<f64>) -> Result<Self> {
        if height == 0 || width == 0 {
            return Err(Error::InvalidConfig("depth map must be non-empty".into()));
        }
        if values.len() != height * width {
            return Err(Error::shape(
                "depth map",
                vec![height, width],
                vec![values.len()],
            ));
        }
        if let Some(bad) = values.iter().find(|v| v.is_finite() && **v < 0.0) {
            return Err(Error::InvalidDepth(*bad));
        }
        Ok(Self {
            height,
            width,
            values,
        })
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn get(&self, row: usize, col: usize) -> f64 {
        self.values[row * self.width + col]
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }
}

/// Encoder output for one view, row-major `height × width × dim`.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureMap {
    height: usize,
    width: usize,
    dim: usize,
    values: Vec<f64>,
}

impl FeatureMap {
    pub fn new(height: usize, width: usize, dim: usize, values: Vec<f64>) -> Result<Self> {
        if height == 0 || width == 0 {
            return Err(Error::InvalidConfig("feature map must be non-empty".into()));
        }
        if dim == 0 || !dim.is_multiple_of(2) {
            return Err(Error::InvalidConfig(format!(
                "feature dimension must be positive and even, got {dim}"
            )));
        }
        if values.len() != height * width * dim {
            return Err(Error::shape(
                "feature map",
                vec![height, width, dim],
                vec![values.len()],
            ));
        }
        if values.iter().any(|v| !v.is_finite()) {
            return Err(Error::InvalidConfig("feature map contains non-finite values".into()));
        }
        Ok(Self {
            height,
            width,
            dim,
            values,
        })
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn feature(&self, row: usize, col: usize) -> &[f64] {
        let start = (row * self.width + col) * self.dim;
        &self.values[start..start + self.dim]
    }
}

/// One posed RGBD view with its feature map.
#[derive(Debug, Clone)]
pub struct FramedCapture {
    pub intrinsics: CameraIntrinsics,
    pub pose: CameraPose,
    pub depth: DepthMap,
    pub features: FeatureMap,
    pub frame_id: Arc<str>,
}

impl FramedCapture {
    pub fn new(
        intrinsics: CameraIntrinsics,
        pose: CameraPose,
        depth: DepthMap,
        features: FeatureMap,
        frame_id: impl Into<Arc<str>>,
    ) -> Result<Self> {
        if depth.height() < features.height() || depth.width() < features.width() {
            return Err(Error::InvalidConfig(format!(
                "depth resolution {}x{} is smaller than feature resolution {}x{}",
                depth.height(),
                depth.width(),
                features.height(),
                features.width()
            )));
        }
        Ok(Self {
            intrinsics,
            pose,
            depth,
            features,
            frame_id: frame_id.into(),
        })
    }
}

/// World-frame points with aligned feature vectors and provenance tags.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct PointFeatureCloud {
    dim: usize,
    points: Vec<[f64; 3]>,
    features: Vec<f64>,
    frame_ids: Vec<Arc<str>>,
}

impl PointFeatureCloud {
    pub fn new(dim: usize) -> Self {
        Self {
            dim,
            ..Default::default()
        }
    }

    pub fn with_capacity(dim: usize, capacity: usize) -> Self {
        Self {
            dim,
            points: Vec::with_capacity(capacity),
            features: Vec::with_capacity(capacity * dim),
            frame_ids: Vec::with_capacity(capacity),
        }
    }

    pub fn push(&mut self, point: [f64; 3], feature: &[f64], frame_id: Arc<str>) -> Result<()> {
        if feature.len() != self.dim {
            return Err(Error::DimMismatch {
                expected: self.dim,
                actual: feature.len(),
            });
        }
        if point.iter().any(|c| !c.is_finite()) {
            return Err(Error::InvalidConfig(format!("non-finite point {point:?}")));
        }
        self.points.push(point);
        self.features.extend_from_slice(feature);
        self.frame_ids.push(frame_id);
        Ok(())
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    pub fn points(&self) -> &[[f64; 3]] {
        &self.points
    }

    pub fn feature(&self, index: usize) -> &[f64] {
        &self.features[index * self.dim..(index + 1) * self.dim]
    }

    pub fn frame_ids(&self) -> &[Arc<str>] {
        &self.frame_ids
    }

    pub fn iter(&self) -> impl Iterator<Item = (&[f64; 3], &[f64])> + '_ {
        self.points.iter().zip(self.features.chunks_exact(self.dim.max(1)))
    }
}

/// Lifts pixel `(u, v)` at `depth` meters into world coordinates.
pub fn back_project_pixel(
    pixel: [f64; 2],
    depth: f64,
    intrinsics: &CameraIntrinsics,
    pose: &CameraPose,
) -> Result<[f64; 3]> {
    if !is_valid_depth(depth) {
        return Err(Error::InvalidDepth(depth));
    }
    Ok(lift(pixel, depth, intrinsics, pose))
}

#[inline]
fn lift(pixel: [f64; 2], depth: f64, k: &CameraIntrinsics, pose: &CameraPose) -> [f64; 3] {
    let camera = [
        depth * (pixel[0] - k.cx) / k.fx,
        depth * (pixel[1] - k.cy) / k.fy,
        depth,
    ];
    apply(&pose.camera_to_world, camera)
}

/// Projects a world point to `(pixel, depth)`; the inverse of [`back_project_pixel`].
pub fn project_point(
    point: [f64; 3],
    intrinsics: &CameraIntrinsics,
    pose: &CameraPose,
) -> Result<([f64; 2], f64)> {
    let camera = apply(&pose.world_to_camera, point);
    let z = camera[2];
    if !(z > 0.0) {
        return Err(Error::BehindCamera(z));
    }
    let u = intrinsics.fx * camera[0] / z + intrinsics.cx;
    let v = intrinsics.fy * camera[1] / z + intrinsics.cy;
    Ok(([u, v], z))
}

/// Back-projects a frame at feature-map resolution.
///
/// Feature cell `(r, c)` owns the pixel rectangle
/// `[r·H/h, (r+1)·H/h) × [c·W/w, (c+1)·W/w)`; its point is the mean of the
/// lifted valid pixels in that rectangle, accumulated in row-major pixel
/// order. Cells without a valid pixel are skipped. Output is in row-major
/// cell order.
pub fn back_project_frame(capture: &FramedCapture) -> PointFeatureCloud {
    let depth = &capture.depth;
    let features = &capture.features;
    let (big_h, big_w) = (depth.height(), depth.width());
    let (h, w) = (features.height(), features.width());

    let mut sums = vec![[0.0_f64; 3]; h * w];
    let mut counts = vec![0_usize; h * w];

    for row in 0..big_h {
        // row ∈ [r·H/h, (r+1)·H/h)  ⇔  r = ⌊row·h / H⌋
        let cell_row = row * h / big_h;
        for col in 0..big_w {
            let d = depth.get(row, col);
            if !is_valid_depth(d) {
                continue;
            }
            let cell = cell_row * w + col * w / big_w;
            let p = lift([col as f64, row as f64], d, &capture.intrinsics, &capture.pose);
            let acc = &mut sums[cell];
            acc[0] += p[0];
            acc[1] += p[1];
            acc[2] += p[2];
            counts[cell] += 1;
        }
    }

    let kept = counts.iter().filter(|&&n| n > 0).count();
    let mut cloud = PointFeatureCloud::with_capacity(features.dim(), kept);
    for r in 0..h {
        for c in 0..w {
            let cell = r * w + c;
            let n = counts[cell];
            if n == 0 {
                continue;
            }
            let n = n as f64;
            let s = sums[cell];
            cloud.points.push([s[0] / n, s[1] / n, s[2] / n]);
            cloud.features.extend_from_slice(features.feature(r, c));
            cloud.frame_ids.push(capture.frame_id.clone());
        }
    }
    cloud
}

/// Concatenates clouds in input order.
pub fn merge_clouds(clouds: &[PointFeatureCloud]) -> Result<PointFeatureCloud> {
    let Some(first) = clouds.first() else {
        return Ok(PointFeatureCloud::new(0));
    };
    let dim = first.dim;
    let total = clouds.iter().map(|c| c.len()).sum();
    let mut merged = PointFeatureCloud::with_capacity(dim, total);
    for cloud in clouds {
        if cloud.dim != dim {
            return Err(Error::DimMismatch {
                expected: dim,
                actual: cloud.dim,
            });
        }
        merged.points.extend_from_slice(&cloud.points);
        merged.features.extend_from_slice(&cloud.features);
        merged.frame_ids.extend(cloud.frame_ids.iter().cloned());
    }
    Ok(merged)
}
