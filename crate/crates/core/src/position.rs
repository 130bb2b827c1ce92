//! Position encodings: rotary embedding for height, Fourier features with an
//! MLP head for horizontal `(x, y)` positions.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal, StandardNormal};

use crate::error::{Error, Result};

pub const DEFAULT_ROPE_BASE: f64 = 10_000.0;

/// Rotary embedding over `dim / 2` planar channel pairs.
///
/// Pair `i` (1-based) rotates by `p · θ_i` with `θ_i = base^(-2i/dim)`.
#[derive(Debug, Clone, PartialEq)]
pub struct RopeConfig {
    dim: usize,
    base: f64,
    thetas: Vec<f64>,
}

impl RopeConfig {
    pub fn new(dim: usize, base: f64) -> Result<Self> {
        if dim == 0 || !dim.is_multiple_of(2) {
            return Err(Error::InvalidConfig(format!(
                "rotary dimension must be positive and even, got {dim}"
            )));
        }
        if !(base.is_finite() && base > 1.0) {
            return Err(Error::InvalidConfig(format!(
                "rotary base must be finite and > 1, got {base}"
            )));
        }
        let thetas = (1..=dim / 2)
            .map(|i| base.powf(-2.0 * i as f64 / dim as f64))
            .collect();
        Ok(Self { dim, base, thetas })
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn base(&self) -> f64 {
        self.base
    }

    /// Frequencies `θ_1 ..= θ_{dim/2}`.
    pub fn thetas(&self) -> &[f64] {
        &self.thetas
    }

    fn check(&self, x: &[f64]) -> Result<()> {
        if x.len() != self.dim {
            return Err(Error::DimMismatch {
                expected: self.dim,
                actual: x.len(),
            });
        }
        Ok(())
    }
}

/// Applies `R_p` to `x`.
pub fn rope_rotate(x: &[f64], position: f64, cfg: &RopeConfig) -> Result<Vec<f64>> {
    cfg.check(x)?;
    let mut out = vec![0.0; x.len()];
    rotate_into(x, position, cfg, &mut out);
    Ok(out)
}

/// Rotates `x` by `R_p` and adds the result to `acc`.
pub(crate) fn rotate_accumulate(x: &[f64], position: f64, cfg: &RopeConfig, acc: &mut [f64]) {
    for ((pair, out), theta) in x
        .chunks_exact(2)
        .zip(acc.chunks_exact_mut(2))
        .zip(&cfg.thetas)
    {
        let (s, c) = (position * theta).sin_cos();
        out[0] += c * pair[0] - s * pair[1];
        out[1] += s * pair[0] + c * pair[1];
    }
}

fn rotate_into(x: &[f64], position: f64, cfg: &RopeConfig, out: &mut [f64]) {
    for ((pair, o), theta) in x.chunks_exact(2).zip(out.chunks_exact_mut(2)).zip(&cfg.thetas) {
        let (s, c) = (position * theta).sin_cos();
        o[0] = c * pair[0] - s * pair[1];
        o[1] = s * pair[0] + c * pair[1];
    }
}

/// `|⟨R_{p1} x, R_{p2} y⟩ − ⟨x, R_{p2−p1} y⟩|`; zero up to rounding for a
/// correct rotary embedding.
pub fn rope_relative_check(x: &[f64], y: &[f64], p1: f64, p2: f64, cfg: &RopeConfig) -> Result<f64> {
    let rx = rope_rotate(x, p1, cfg)?;
    let ry = rope_rotate(y, p2, cfg)?;
    let rel = rope_rotate(y, p2 - p1, cfg)?;
    Ok((dot(&rx, &ry) - dot(x, &rel)).abs())
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Activation {
    Gelu,
    /// Skips the nonlinearity; only meant for hand-checkable weights.
    Identity,
}

/// Gaussian error linear unit, `x · Φ(x)` with the exact normal CDF.
pub fn gelu(x: f64) -> f64 {
    0.5 * x * (1.0 + libm::erf(x / std::f64::consts::SQRT_2))
}

/// Two affine layers `d → d → d` with an activation in between.
///
/// Weight matrices are row-major `(out, in)`.
#[derive(Debug, Clone, PartialEq)]
pub struct Mlp {
    dim: usize,
    w1: Vec<f64>,
    b1: Vec<f64>,
    w2: Vec<f64>,
    b2: Vec<f64>,
    activation: Activation,
}

impl Mlp {
    pub fn new(
        dim: usize,
        w1: Vec<f64>,
        b1: Vec<f64>,
        w2: Vec<f64>,
        b2: Vec<f64>,
        activation: Activation,
    ) -> Result<Self> {
        for (name, len, want) in [
            ("mlp.w1", w1.len(), dim * dim),
            ("mlp.b1", b1.len(), dim),
            ("mlp.w2", w2.len(), dim * dim),
            ("mlp.b2", b2.len(), dim),
        ] {
            if len != want {
                return Err(Error::shape(name, vec![want], vec![len]));
            }
        }
        if w1.iter().chain(&b1).chain(&w2).chain(&b2).any(|v| !v.is_finite()) {
            return Err(Error::InvalidConfig("MLP weights must be finite".into()));
        }
        Ok(Self {
            dim,
            w1,
            b1,
            w2,
            b2,
            activation,
        })
    }

    /// Identity weights, zero biases, no activation.
    pub fn identity(dim: usize) -> Self {
        let eye: Vec<f64> = (0..dim * dim)
            .map(|i| if i / dim == i % dim { 1.0 } else { 0.0 })
            .collect();
        Self {
            dim,
            w1: eye.clone(),
            b1: vec![0.0; dim],
            w2: eye,
            b2: vec![0.0; dim],
            activation: Activation::Identity,
        }
    }

    /// Any first layer, all-zero second layer: the MLP outputs zero.
    pub fn zero_output(dim: usize) -> Self {
        let mut mlp = Self::identity(dim);
        mlp.w2.iter_mut().for_each(|v| *v = 0.0);
        mlp.activation = Activation::Gelu;
        mlp
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn w1(&self) -> &[f64] {
        &self.w1
    }

    pub fn b1(&self) -> &[f64] {
        &self.b1
    }

    pub fn w2(&self) -> &[f64] {
        &self.w2
    }

    pub fn b2(&self) -> &[f64] {
        &self.b2
    }

    pub fn activation(&self) -> Activation {
        self.activation
    }

    pub fn forward(&self, input: &[f64]) -> Vec<f64> {
        let d = self.dim;
        let hidden: Vec<f64> = self
            .w1
            .chunks_exact(d)
            .zip(&self.b1)
            .map(|(row, b)| {
                let z = dot(row, input) + b;
                match self.activation {
                    Activation::Gelu => gelu(z),
                    Activation::Identity => z,
                }
            })
            .collect();
        self.w2
            .chunks_exact(d)
            .zip(&self.b2)
            .map(|(row, b)| dot(row, &hidden) + b)
            .collect()
    }
}

/// Fourier projection `W` (shape `(dim/2, input_dim)`, row-major) and MLP head.
#[derive(Debug, Clone, PartialEq)]
pub struct FourierConfig {
    input_dim: usize,
    dim: usize,
    projection: Vec<f64>,
    mlp: Mlp,
}

impl FourierConfig {
    pub fn new(input_dim: usize, dim: usize, projection: Vec<f64>, mlp: Mlp) -> Result<Self> {
        if dim == 0 || !dim.is_multiple_of(2) {
            return Err(Error::InvalidConfig(format!(
                "Fourier dimension must be positive and even, got {dim}"
            )));
        }
        if input_dim == 0 {
            return Err(Error::InvalidConfig("Fourier input dimension must be positive".into()));
        }
        if projection.len() != dim / 2 * input_dim {
            return Err(Error::shape(
                "W",
                vec![dim / 2, input_dim],
                vec![projection.len()],
            ));
        }
        if projection.iter().any(|v| !v.is_finite()) {
            return Err(Error::InvalidConfig("W must be finite".into()));
        }
        if mlp.dim() != dim {
            return Err(Error::shape("mlp", vec![dim], vec![mlp.dim()]));
        }
        Ok(Self {
            input_dim,
            dim,
            projection,
            mlp,
        })
    }

    /// Deterministic weights from `seed`: `W ~ N(0, 1)`, MLP weights
    /// `~ N(0, 1/dim)`, zero biases, GELU.
    ///
    /// Values are rounded to `f32` so that an exported weight file
    /// reproduces the same configuration bit for bit.
    pub fn seeded(input_dim: usize, dim: usize, seed: u64) -> Result<Self> {
        if dim == 0 || !dim.is_multiple_of(2) {
            return Err(Error::InvalidConfig(format!(
                "Fourier dimension must be positive and even, got {dim}"
            )));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut sample = |n: usize, std: f64| -> Vec<f64> {
            let normal = Normal::new(0.0, std).expect("positive std");
            (0..n).map(|_| normal.sample(&mut rng) as f32 as f64).collect()
        };
        let projection: Vec<f64> = sample(dim / 2 * input_dim, 1.0);
        let scale = 1.0 / (dim as f64).sqrt();
        let w1 = sample(dim * dim, scale);
        let w2 = sample(dim * dim, scale);
        let mlp = Mlp::new(dim, w1, vec![0.0; dim], w2, vec![0.0; dim], Activation::Gelu)?;
        Self::new(input_dim, dim, projection, mlp)
    }

    pub fn input_dim(&self) -> usize {
        self.input_dim
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn projection(&self) -> &[f64] {
        &self.projection
    }

    pub fn mlp(&self) -> &Mlp {
        &self.mlp
    }

    fn check(&self, x: &[f64], p: &[f64]) -> Result<()> {
        if x.len() != self.dim {
            return Err(Error::shape("feature", vec![self.dim], vec![x.len()]));
        }
        if p.len() != self.input_dim {
            return Err(Error::shape("position", vec![self.input_dim], vec![p.len()]));
        }
        Ok(())
    }
}

/// `[cos(2πWp) ‖ sin(2πWp)] / √dim`.
pub fn fourier_features(p: &[f64], cfg: &FourierConfig) -> Result<Vec<f64>> {
    if p.len() != cfg.input_dim {
        return Err(Error::shape("position", vec![cfg.input_dim], vec![p.len()]));
    }
    let half = cfg.dim / 2;
    let norm = 1.0 / (cfg.dim as f64).sqrt();
    let mut out = vec![0.0; cfg.dim];
    for (i, row) in cfg.projection.chunks_exact(cfg.input_dim).enumerate() {
        let angle = 2.0 * std::f64::consts::PI * dot(row, p);
        let (s, c) = angle.sin_cos();
        out[i] = c * norm;
        out[half + i] = s * norm;
    }
    Ok(out)
}

/// Horizontal position embedding `MLP(F / √dim)`, independent of the feature.
pub fn fourier_position_embedding(p: &[f64], cfg: &FourierConfig) -> Result<Vec<f64>> {
    Ok(cfg.mlp.forward(&fourier_features(p, cfg)?))
}

/// `x + MLP(F(p) / √dim)`.
pub fn fourier_embed(x: &[f64], p: &[f64], cfg: &FourierConfig) -> Result<Vec<f64>> {
    cfg.check(x, p)?;
    let pe = fourier_position_embedding(p, cfg)?;
    Ok(x.iter().zip(&pe).map(|(a, b)| a + b).collect())
}

/// Standard-normal samples, for callers building their own projection.
pub fn gaussian_projection(rows: usize, cols: usize, seed: u64) -> Vec<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..rows * cols)
        .map(|_| StandardNormal.sample(&mut rng))
        .collect()
}
