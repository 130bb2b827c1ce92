//! Helpers and independent reference implementations shared by the
//! integration tests.

#![allow(dead_code)]

use std::collections::BTreeMap;
use std::sync::Arc;

use cfg_tokenizer::{CameraIntrinsics, CameraPose, PointFeatureCloud};
use nalgebra::{Matrix3, Matrix4, UnitQuaternion, Vector3, Vector4};
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

pub fn normal(rng: &mut ChaCha8Rng) -> f64 {
    StandardNormal.sample(rng)
}

pub fn normal_vec(rng: &mut ChaCha8Rng, n: usize) -> Vec<f64> {
    (0..n).map(|_| normal(rng)).collect()
}

pub fn random_rotation(rng: &mut ChaCha8Rng) -> Matrix3<f64> {
    let q = Vector4::new(normal(rng), normal(rng), normal(rng), normal(rng));
    let q = nalgebra::Quaternion::new(q[0], q[1], q[2], q[3]);
    UnitQuaternion::from_quaternion(q).to_rotation_matrix().into_inner()
}

pub fn random_pose(rng: &mut ChaCha8Rng) -> CameraPose {
    let r = random_rotation(rng);
    let t = Vector3::new(
        rng.random_range(-5.0..5.0),
        rng.random_range(-5.0..5.0),
        rng.random_range(-5.0..5.0),
    );
    let mut m = Matrix4::identity();
    m.fixed_view_mut::<3, 3>(0, 0).copy_from(&r);
    m.fixed_view_mut::<3, 1>(0, 3).copy_from(&t);
    CameraPose::from_matrix(m).expect("rigid pose")
}

pub fn random_intrinsics(rng: &mut ChaCha8Rng) -> CameraIntrinsics {
    CameraIntrinsics::new(
        rng.random_range(100.0..1000.0),
        rng.random_range(100.0..1000.0),
        rng.random_range(0.0..640.0),
        rng.random_range(0.0..480.0),
    )
    .expect("valid intrinsics")
}

/// `T · [d · K⁻¹ [u, v, 1]ᵀ ; 1]` with a general 3×3 inverse.
pub fn back_project_oracle(
    pixel: [f64; 2],
    depth: f64,
    k: &CameraIntrinsics,
    pose: &CameraPose,
) -> [f64; 3] {
    let km = Matrix3::new(k.fx(), 0.0, k.cx(), 0.0, k.fy(), k.cy(), 0.0, 0.0, 1.0);
    let ray = km.try_inverse().unwrap() * Vector3::new(pixel[0], pixel[1], 1.0);
    let cam = ray * depth;
    let w = pose.matrix() * Vector4::new(cam.x, cam.y, cam.z, 1.0);
    [w.x, w.y, w.z]
}

pub fn random_cloud(rng: &mut ChaCha8Rng, points: usize, dim: usize, extent: f64) -> PointFeatureCloud {
    let frame: Arc<str> = Arc::from("f");
    let mut cloud = PointFeatureCloud::with_capacity(dim, points);
    for _ in 0..points {
        let p = [
            rng.random_range(-extent..extent),
            rng.random_range(-extent..extent),
            rng.random_range(0.0..extent),
        ];
        cloud.push(p, &normal_vec(rng, dim), frame.clone()).unwrap();
    }
    cloud
}

/// Brute-force group-by of `floor((p − origin) / size)` with a per-cell mean.
pub fn voxel_oracle(
    cloud: &PointFeatureCloud,
    origin: [f64; 3],
    size: f64,
) -> BTreeMap<[i64; 3], (Vec<f64>, u64)> {
    let mut groups: BTreeMap<[i64; 3], Vec<usize>> = BTreeMap::new();
    for (n, p) in cloud.points().iter().enumerate() {
        let key = [0, 1, 2].map(|a| ((p[a] - origin[a]) / size).floor() as i64);
        groups.entry(key).or_default().push(n);
    }
    groups
        .into_iter()
        .map(|(key, members)| {
            let mut mean = vec![0.0; cloud.dim()];
            for &n in &members {
                for (m, f) in mean.iter_mut().zip(cloud.feature(n)) {
                    *m += f;
                }
            }
            for m in &mut mean {
                *m /= members.len() as f64;
            }
            (key, (mean, members.len() as u64))
        })
        .collect()
}

/// Rotary rotation written out pair by pair, with `θ_i = base^(−2i/d)` for
/// `i = 1..d/2`.
pub fn rope_oracle(x: &[f64], p: f64, base: f64) -> Vec<f64> {
    let d = x.len();
    let mut out = vec![0.0; d];
    for i in 1..=d / 2 {
        let theta = base.powf(-2.0 * i as f64 / d as f64);
        let (a, b) = (x[2 * i - 2], x[2 * i - 1]);
        let angle = p * theta;
        out[2 * i - 2] = a * angle.cos() - b * angle.sin();
        out[2 * i - 1] = a * angle.sin() + b * angle.cos();
    }
    out
}

/// Scalar Fourier embedding: `x + W2 · gelu(W1 · F + b1) + b2` with
/// `F = [cos(2πWp), sin(2πWp)] / √d`. Matrices are nested row vectors.
pub struct FourierOracle {
    pub w: Vec<Vec<f64>>,
    pub w1: Vec<Vec<f64>>,
    pub b1: Vec<f64>,
    pub w2: Vec<Vec<f64>>,
    pub b2: Vec<f64>,
}

impl FourierOracle {
    pub fn embed(&self, x: &[f64], p: &[f64]) -> Vec<f64> {
        let d = x.len();
        let half = d / 2;
        let mut f = vec![0.0; d];
        for r in 0..half {
            let mut proj = 0.0;
            for c in 0..p.len() {
                proj += self.w[r][c] * p[c];
            }
            let angle = 2.0 * std::f64::consts::PI * proj;
            f[r] = angle.cos() / (d as f64).sqrt();
            f[half + r] = angle.sin() / (d as f64).sqrt();
        }
        let mut hidden = vec![0.0; d];
        for r in 0..d {
            let mut z = self.b1[r];
            for c in 0..d {
                z += self.w1[r][c] * f[c];
            }
            hidden[r] = 0.5 * z * (1.0 + libm::erf(z / 2f64.sqrt()));
        }
        let mut out = x.to_vec();
        for r in 0..d {
            let mut z = self.b2[r];
            for c in 0..d {
                z += self.w2[r][c] * hidden[c];
            }
            out[r] += z;
        }
        out
    }

    pub fn flat(m: &[Vec<f64>]) -> Vec<f64> {
        m.iter().flatten().copied().collect()
    }
}

pub fn random_matrix(rng: &mut ChaCha8Rng, rows: usize, cols: usize, std: f64) -> Vec<Vec<f64>> {
    (0..rows).map(|_| normal_vec(rng, cols).into_iter().map(|v| v * std).collect()).collect()
}

pub fn rel_close(a: f64, b: f64, rel: f64) -> bool {
    (a - b).abs() <= rel * a.abs().max(b.abs()).max(1.0)
}

/// `−ln σ(z)` straight from the definition, for moderate `z`.
pub fn neg_log_sigmoid_naive(z: f64) -> f64 {
    -(1.0 / (1.0 + (-z).exp())).ln()
}

/// Twenty answers that normalize to twenty distinct templates.
pub const TWENTY_TEMPLATES: [&str; 20] = [
    "The chair is red.",
    "There are 3 chairs.",
    "It is next to the bed",
    "On the left side of the sofa.",
    "Yes",
    "No.",
    "A wooden table",
    "two pillows on the bed",
    "The lamp is on the desk!",
    "Behind the door",
    "It's a blue trash can",
    "Under the window.",
    "in the corner of the room",
    "A black office chair with wheels",
    "The monitor",
    "Between the two beds",
    "It is 1.5 meters tall",
    "A stack of books",
    "The towel hangs on the rack",
    "Near the kitchen counter",
];
