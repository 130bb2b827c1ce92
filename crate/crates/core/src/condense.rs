//! Height condensation of a voxel grid into one token per `(i, j)` column.
//!
//! Each voxel feature is rotated by its absolute height index before the
//! column mean, so voxels at different heights stay distinguishable after
//! pooling. Tokens are then offset by a Fourier embedding of the column
//! center and clipped to a token budget.

use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::position::{fourier_embed, rotate_accumulate, FourierConfig, RopeConfig};
use crate::voxel::{VoxelCell, VoxelGrid};

pub const DEFAULT_MAX_TOKENS: usize = 750;

#[derive(Debug, Clone, PartialEq)]
pub struct CfgToken {
    pub column: [i64; 2],
    /// Column center in world meters.
    pub center: [f64; 2],
    pub feature: Vec<f64>,
    pub source_voxel_count: u64,
    pub anchored: bool,
}

/// The condensed scene: tokens in row-major `(i, j)` order plus the voxel
/// totals needed for compression and preservation rates.
#[derive(Debug, Clone, PartialEq)]
pub struct CondensedFeatureGrid {
    pub dim: usize,
    pub voxel_size: f64,
    pub origin: [f64; 3],
    pub tokens: Vec<CfgToken>,
    pub voxel_total: u64,
    pub retained_voxel_total: u64,
}

impl CondensedFeatureGrid {
    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }

    pub fn stats(&self) -> Result<CfgStats> {
        CfgStats::new(self.tokens.len(), self.voxel_total, self.retained_voxel_total)
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CfgStats {
    pub compression_rate: f64,
    pub preservation_rate: f64,
    pub token_count: usize,
    pub voxel_count: u64,
}

impl CfgStats {
    pub fn new(token_count: usize, voxel_total: u64, retained_voxel_total: u64) -> Result<Self> {
        if voxel_total == 0 {
            return Err(Error::EmptyScene);
        }
        Ok(Self {
            compression_rate: token_count as f64 / voxel_total as f64,
            preservation_rate: retained_voxel_total as f64 / voxel_total as f64,
            token_count,
            voxel_count: voxel_total,
        })
    }
}

/// Pools every column of `grid` into a token.
pub fn condense(grid: &VoxelGrid, rope: &RopeConfig) -> Result<CondensedFeatureGrid> {
    if rope.dim() != grid.dim() && !grid.is_empty() {
        return Err(Error::DimMismatch {
            expected: rope.dim(),
            actual: grid.dim(),
        });
    }

    // BTreeMap order is (i, j, k): columns are contiguous runs with ascending k.
    let mut columns: Vec<([i64; 2], Vec<(i64, &VoxelCell)>)> = Vec::new();
    for (idx, cell) in grid.cells() {
        let col = [idx[0], idx[1]];
        match columns.last_mut() {
            Some((c, members)) if *c == col => members.push((idx[2], cell)),
            _ => columns.push((col, vec![(idx[2], cell)])),
        }
    }

    let size = grid.voxel_size();
    let origin = grid.origin();
    let dim = grid.dim();
    let tokens: Vec<CfgToken> = columns
        .par_iter()
        .map(|(col, members)| {
            let mut acc = vec![0.0; dim];
            for (k, cell) in members {
                rotate_accumulate(&cell.feature, *k as f64, rope, &mut acc);
            }
            let n = members.len() as f64;
            acc.iter_mut().for_each(|v| *v /= n);
            CfgToken {
                column: *col,
                center: [
                    origin[0] + (col[0] as f64 + 0.5) * size,
                    origin[1] + (col[1] as f64 + 0.5) * size,
                ],
                feature: acc,
                source_voxel_count: members.len() as u64,
                anchored: members.iter().any(|(_, c)| c.anchored),
            }
        })
        .collect();

    let voxel_total = grid.len() as u64;
    Ok(CondensedFeatureGrid {
        dim,
        voxel_size: size,
        origin,
        tokens,
        voxel_total,
        retained_voxel_total: voxel_total,
    })
}

/// Adds the Fourier embedding of each token's column center to its feature.
pub fn apply_horizontal_pe(
    cfg: &CondensedFeatureGrid,
    fourier: &FourierConfig,
) -> Result<CondensedFeatureGrid> {
    if fourier.input_dim() != 2 {
        return Err(Error::shape("position", vec![2], vec![fourier.input_dim()]));
    }
    let features = cfg
        .tokens
        .par_iter()
        .map(|t| fourier_embed(&t.feature, &t.center, fourier))
        .collect::<Result<Vec<_>>>()?;
    let mut out = cfg.clone();
    for (token, feature) in out.tokens.iter_mut().zip(features) {
        token.feature = feature;
    }
    Ok(out)
}

/// Keeps at most `max_tokens` tokens: highest voxel count first, ties by
/// ascending `(i, j)`. Survivors stay in row-major order.
pub fn enforce_budget(cfg: &CondensedFeatureGrid, max_tokens: usize) -> Result<CondensedFeatureGrid> {
    if max_tokens == 0 {
        return Err(Error::InvalidConfig("token budget must be at least 1".into()));
    }
    if cfg.tokens.len() <= max_tokens {
        return Ok(cfg.clone());
    }
    let mut order: Vec<usize> = (0..cfg.tokens.len()).collect();
    order.sort_by(|&a, &b| {
        let (ta, tb) = (&cfg.tokens[a], &cfg.tokens[b]);
        tb.source_voxel_count
            .cmp(&ta.source_voxel_count)
            .then(ta.column.cmp(&tb.column))
    });
    order.truncate(max_tokens);
    order.sort_by_key(|&i| cfg.tokens[i].column);

    let tokens: Vec<CfgToken> = order.into_iter().map(|i| cfg.tokens[i].clone()).collect();
    let retained = tokens.iter().map(|t| t.source_voxel_count).sum();
    Ok(CondensedFeatureGrid {
        tokens,
        retained_voxel_total: retained,
        ..cfg.clone()
    })
}

/// Compression and preservation rates of `cfg` relative to its source grid.
pub fn compute_stats(grid: &VoxelGrid, cfg: &CondensedFeatureGrid) -> Result<CfgStats> {
    if grid.is_empty() {
        return Err(Error::EmptyScene);
    }
    if cfg.voxel_total != grid.len() as u64 {
        return Err(Error::Validation(format!(
            "token grid was built from {} voxels but the grid has {}",
            cfg.voxel_total,
            grid.len()
        )));
    }
    cfg.stats()
}
