//! `CFGK` token file: the serialized condensed feature grid.
//!
//! Little-endian layout:
//!
//! ```text
//! magic                 "CFGK"
//! version               u32 = 1
//! dim                   u32
//! token_count           u32
//! voxel_size            f64
//! origin                f64 × 3
//! voxel_total           u64
//! retained_voxel_total  u64
//! compression_rate      f64
//! preservation_rate     f64
//! token*                i i64, j i64, x f64, y f64, anchored u8,
//!                       source_voxel_count u64, feature f32 × dim
//! ```
//!
//! Reading re-derives the header statistics and column centers from the
//! body and rejects any mismatch.

use std::path::Path;

use crate::condense::{CfgStats, CondensedFeatureGrid};
use crate::error::{Error, Result};
use crate::tensor::Reader;

pub const MAGIC: &[u8; 4] = b"CFGK";
pub const VERSION: u32 = 1;

const HEADER_BYTES: usize = 4 + 4 + 4 + 4 + 8 + 24 + 8 + 8 + 8 + 8;

#[derive(Debug, Clone, PartialEq)]
pub struct TokenRecord {
    pub column: [i64; 2],
    pub xy: [f64; 2],
    pub anchored: bool,
    pub source_voxel_count: u64,
    pub feature: Vec<f32>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TokenFile {
    pub dim: usize,
    pub voxel_size: f64,
    pub origin: [f64; 3],
    pub voxel_total: u64,
    pub retained_voxel_total: u64,
    pub compression_rate: f64,
    pub preservation_rate: f64,
    pub tokens: Vec<TokenRecord>,
}

fn column_center(origin: [f64; 3], voxel_size: f64, column: [i64; 2]) -> [f64; 2] {
    [
        origin[0] + (column[0] as f64 + 0.5) * voxel_size,
        origin[1] + (column[1] as f64 + 0.5) * voxel_size,
    ]
}

impl TokenFile {
    /// Token features are stored as `f32`.
    pub fn from_grid(cfg: &CondensedFeatureGrid) -> Result<Self> {
        let stats = cfg.stats()?;
        Ok(Self {
            dim: cfg.dim,
            voxel_size: cfg.voxel_size,
            origin: cfg.origin,
            voxel_total: cfg.voxel_total,
            retained_voxel_total: cfg.retained_voxel_total,
            compression_rate: stats.compression_rate,
            preservation_rate: stats.preservation_rate,
            tokens: cfg
                .tokens
                .iter()
                .map(|t| TokenRecord {
                    column: t.column,
                    xy: t.center,
                    anchored: t.anchored,
                    source_voxel_count: t.source_voxel_count,
                    feature: t.feature.iter().map(|v| *v as f32).collect(),
                })
                .collect(),
        })
    }

    pub fn stats(&self) -> Result<CfgStats> {
        CfgStats::new(self.tokens.len(), self.voxel_total, self.retained_voxel_total)
    }

    /// Row-major `(token_count × dim)` feature payload.
    pub fn feature_matrix(&self) -> Vec<f32> {
        self.tokens.iter().flat_map(|t| t.feature.iter().copied()).collect()
    }

    /// Checks header statistics, counts and centers against the body.
    pub fn validate(&self) -> Result<()> {
        if self.dim == 0 {
            return Err(Error::Validation("token dimension is zero".into()));
        }
        let mut retained = 0u64;
        for (n, t) in self.tokens.iter().enumerate() {
            if t.feature.len() != self.dim {
                return Err(Error::Validation(format!(
                    "token {n} has {} features, header says {}",
                    t.feature.len(),
                    self.dim
                )));
            }
            if t.source_voxel_count == 0 {
                return Err(Error::Validation(format!("token {n} covers zero voxels")));
            }
            if t.xy != column_center(self.origin, self.voxel_size, t.column) {
                return Err(Error::Validation(format!(
                    "token {n} center {:?} does not match column {:?}",
                    t.xy, t.column
                )));
            }
            if t.feature.iter().any(|v| !v.is_finite()) {
                return Err(Error::Validation(format!("token {n} has non-finite features")));
            }
            if n > 0 && self.tokens[n - 1].column >= t.column {
                return Err(Error::Validation(format!(
                    "token {n} breaks row-major column order"
                )));
            }
            retained += t.source_voxel_count;
        }
        if retained != self.retained_voxel_total {
            return Err(Error::Validation(format!(
                "tokens cover {retained} voxels, header says {}",
                self.retained_voxel_total
            )));
        }
        if self.retained_voxel_total > self.voxel_total {
            return Err(Error::Validation(
                "retained voxels exceed the voxel total".into(),
            ));
        }
        let stats = self.stats()?;
        if stats.compression_rate.to_bits() != self.compression_rate.to_bits()
            || stats.preservation_rate.to_bits() != self.preservation_rate.to_bits()
        {
            return Err(Error::Validation(format!(
                "header rates ({}, {}) disagree with body ({}, {})",
                self.compression_rate,
                self.preservation_rate,
                stats.compression_rate,
                stats.preservation_rate
            )));
        }
        Ok(())
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let record = 8 + 8 + 8 + 8 + 1 + 8 + 4 * self.dim;
        let mut out = Vec::with_capacity(HEADER_BYTES + record * self.tokens.len());
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&VERSION.to_le_bytes());
        out.extend_from_slice(&(self.dim as u32).to_le_bytes());
        out.extend_from_slice(&(self.tokens.len() as u32).to_le_bytes());
        out.extend_from_slice(&self.voxel_size.to_le_bytes());
        for v in self.origin {
            out.extend_from_slice(&v.to_le_bytes());
        }
        out.extend_from_slice(&self.voxel_total.to_le_bytes());
        out.extend_from_slice(&self.retained_voxel_total.to_le_bytes());
        out.extend_from_slice(&self.compression_rate.to_le_bytes());
        out.extend_from_slice(&self.preservation_rate.to_le_bytes());
        for t in &self.tokens {
            out.extend_from_slice(&t.column[0].to_le_bytes());
            out.extend_from_slice(&t.column[1].to_le_bytes());
            out.extend_from_slice(&t.xy[0].to_le_bytes());
            out.extend_from_slice(&t.xy[1].to_le_bytes());
            out.push(t.anchored as u8);
            out.extend_from_slice(&t.source_voxel_count.to_le_bytes());
            for v in &t.feature {
                out.extend_from_slice(&v.to_le_bytes());
            }
        }
        out
    }

    /// Parses and validates a token file.
    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let mut r = Reader { bytes, pos: 0 };
        if r.take(4)? != MAGIC {
            return Err(Error::Format("bad magic, expected CFGK".into()));
        }
        let version = r.u32()?;
        if version != VERSION {
            return Err(Error::Format(format!("unsupported token file version {version}")));
        }
        let dim = r.u32()? as usize;
        let count = r.u32()? as usize;
        let voxel_size = r.f64()?;
        let origin = [r.f64()?, r.f64()?, r.f64()?];
        let voxel_total = r.u64()?;
        let retained_voxel_total = r.u64()?;
        let compression_rate = r.f64()?;
        let preservation_rate = r.f64()?;
        let record = 8 + 8 + 8 + 8 + 1 + 8 + 4 * dim;
        if bytes.len() - r.pos != record * count {
            return Err(Error::Format(format!(
                "header announces {count} tokens of dim {dim} ({} bytes) but body has {} bytes",
                record * count,
                bytes.len() - r.pos
            )));
        }
        let mut tokens = Vec::with_capacity(count);
        for n in 0..count {
            let column = [r.i64()?, r.i64()?];
            let xy = [r.f64()?, r.f64()?];
            let anchored = match r.u8()? {
                0 => false,
                1 => true,
                other => {
                    return Err(Error::Format(format!("token {n}: anchored flag {other}")));
                }
            };
            let source_voxel_count = r.u64()?;
            let feature = (0..dim).map(|_| r.f32()).collect::<Result<Vec<_>>>()?;
            tokens.push(TokenRecord {
                column,
                xy,
                anchored,
                source_voxel_count,
                feature,
            });
        }
        let file = Self {
            dim,
            voxel_size,
            origin,
            voxel_total,
            retained_voxel_total,
            compression_rate,
            preservation_rate,
            tokens,
        };
        file.validate()?;
        Ok(file)
    }

    pub fn read(path: &Path) -> Result<Self> {
        let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
        Self::from_bytes(&bytes)
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_bytes()).map_err(|e| Error::io(path, e))
    }
}
