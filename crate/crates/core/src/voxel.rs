//! Sparse voxelization with per-voxel mean pooling and anchor injection.

use std::collections::{BTreeMap, BTreeSet};

use crate::error::{Error, Result};
use crate::geometry::PointFeatureCloud;

/// Integer voxel coordinate `(i, j, k)`; `k` is the height axis.
pub type VoxelIndex = [i64; 3];

pub const DEFAULT_VOXEL_SIZE: f64 = 0.2;

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum OriginMode {
    /// Componentwise `⌊min / voxel_size⌋ · voxel_size` of the cloud.
    Auto,
    Explicit([f64; 3]),
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct VoxelGridConfig {
    voxel_size: f64,
    origin: OriginMode,
}

impl Default for VoxelGridConfig {
    fn default() -> Self {
        Self {
            voxel_size: DEFAULT_VOXEL_SIZE,
            origin: OriginMode::Auto,
        }
    }
}

impl VoxelGridConfig {
    pub fn new(voxel_size: f64, origin: OriginMode) -> Result<Self> {
        if !(voxel_size.is_finite() && voxel_size > 0.0) {
            return Err(Error::InvalidConfig(format!(
                "voxel size must be finite and positive, got {voxel_size}"
            )));
        }
        if let OriginMode::Explicit(o) = origin {
            if o.iter().any(|v| !v.is_finite()) {
                return Err(Error::InvalidConfig("voxel origin must be finite".into()));
            }
        }
        Ok(Self { voxel_size, origin })
    }

    pub fn voxel_size(&self) -> f64 {
        self.voxel_size
    }

    pub fn origin_mode(&self) -> OriginMode {
        self.origin
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct VoxelCell {
    pub feature: Vec<f64>,
    pub count: u64,
    pub anchored: bool,
}

/// Occupied voxels keyed by index. Iteration order is lexicographic in
/// `(i, j, k)`, so columns come out row-major with ascending height.
#[derive(Debug, Clone, PartialEq)]
pub struct VoxelGrid {
    config: VoxelGridConfig,
    origin: [f64; 3],
    dim: usize,
    cells: BTreeMap<VoxelIndex, VoxelCell>,
}

impl VoxelGrid {
    pub fn config(&self) -> &VoxelGridConfig {
        &self.config
    }

    pub fn voxel_size(&self) -> f64 {
        self.config.voxel_size
    }

    pub fn origin(&self) -> [f64; 3] {
        self.origin
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn len(&self) -> usize {
        self.cells.len()
    }

    pub fn is_empty(&self) -> bool {
        self.cells.is_empty()
    }

    pub fn get(&self, index: &VoxelIndex) -> Option<&VoxelCell> {
        self.cells.get(index)
    }

    pub fn cells(&self) -> impl Iterator<Item = (&VoxelIndex, &VoxelCell)> + '_ {
        self.cells.iter()
    }

    /// Index of the voxel containing `p`.
    pub fn index_of(&self, p: [f64; 3]) -> VoxelIndex {
        index_of(p, self.origin, self.config.voxel_size)
    }

    pub fn center(&self, index: &VoxelIndex) -> [f64; 3] {
        let s = self.config.voxel_size;
        [
            self.origin[0] + (index[0] as f64 + 0.5) * s,
            self.origin[1] + (index[1] as f64 + 0.5) * s,
            self.origin[2] + (index[2] as f64 + 0.5) * s,
        ]
    }

    /// Builds a grid directly from cells; used by tests and the bindings.
    pub fn from_cells(
        config: VoxelGridConfig,
        origin: [f64; 3],
        dim: usize,
        cells: impl IntoIterator<Item = (VoxelIndex, VoxelCell)>,
    ) -> Result<Self> {
        let mut map = BTreeMap::new();
        for (idx, cell) in cells {
            if cell.feature.len() != dim {
                return Err(Error::DimMismatch {
                    expected: dim,
                    actual: cell.feature.len(),
                });
            }
            if cell.count == 0 {
                return Err(Error::InvalidConfig(format!("voxel {idx:?} has zero count")));
            }
            map.insert(idx, cell);
        }
        Ok(Self {
            config,
            origin,
            dim,
            cells: map,
        })
    }
}

#[inline]
fn index_of(p: [f64; 3], origin: [f64; 3], size: f64) -> VoxelIndex {
    [
        ((p[0] - origin[0]) / size).floor() as i64,
        ((p[1] - origin[1]) / size).floor() as i64,
        ((p[2] - origin[2]) / size).floor() as i64,
    ]
}

fn auto_origin(cloud: &PointFeatureCloud, size: f64) -> [f64; 3] {
    let mut min = [f64::INFINITY; 3];
    for p in cloud.points() {
        for a in 0..3 {
            min[a] = min[a].min(p[a]);
        }
    }
    if cloud.is_empty() {
        return [0.0; 3];
    }
    min.map(|m| (m / size).floor() * size)
}

/// Groups points by voxel and mean-pools their features in cloud order.
pub fn voxelize(cloud: &PointFeatureCloud, config: &VoxelGridConfig) -> VoxelGrid {
    let size = config.voxel_size;
    let origin = match config.origin {
        OriginMode::Auto => auto_origin(cloud, size),
        OriginMode::Explicit(o) => o,
    };
    let dim = cloud.dim();
    let mut cells: BTreeMap<VoxelIndex, VoxelCell> = BTreeMap::new();
    for (p, f) in cloud.iter() {
        let cell = cells.entry(index_of(*p, origin, size)).or_insert_with(|| VoxelCell {
            feature: vec![0.0; dim],
            count: 0,
            anchored: false,
        });
        for (acc, v) in cell.feature.iter_mut().zip(f) {
            *acc += v;
        }
        cell.count += 1;
    }
    for cell in cells.values_mut() {
        let n = cell.count as f64;
        cell.feature.iter_mut().for_each(|v| *v /= n);
    }
    VoxelGrid {
        config: *config,
        origin,
        dim,
        cells,
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum RegionShape {
    /// Inclusive axis-aligned box in world meters.
    Box { min: [f64; 3], max: [f64; 3] },
    Indices(BTreeSet<VoxelIndex>),
}

/// Region whose voxels receive the anchor embedding.
#[derive(Debug, Clone, PartialEq)]
pub struct AnchorRegion {
    shape: RegionShape,
    anchor: Vec<f64>,
}

impl AnchorRegion {
    pub fn from_box(min: [f64; 3], max: [f64; 3], anchor: Vec<f64>) -> Result<Self> {
        if min.iter().chain(&max).any(|v| !v.is_finite()) {
            return Err(Error::InvalidConfig("anchor box must be finite".into()));
        }
        if (0..3).any(|a| min[a] > max[a]) {
            return Err(Error::InvalidConfig(format!(
                "anchor box min {min:?} exceeds max {max:?}"
            )));
        }
        Ok(Self {
            shape: RegionShape::Box { min, max },
            anchor,
        })
    }

    pub fn from_indices(indices: impl IntoIterator<Item = VoxelIndex>, anchor: Vec<f64>) -> Self {
        Self {
            shape: RegionShape::Indices(indices.into_iter().collect()),
            anchor,
        }
    }

    pub fn shape(&self) -> &RegionShape {
        &self.shape
    }

    pub fn anchor(&self) -> &[f64] {
        &self.anchor
    }

    fn contains(&self, grid: &VoxelGrid, index: &VoxelIndex) -> bool {
        match &self.shape {
            RegionShape::Box { min, max } => {
                let c = grid.center(index);
                (0..3).all(|a| min[a] <= c[a] && c[a] <= max[a])
            }
            RegionShape::Indices(set) => set.contains(index),
        }
    }
}

/// Adds the anchor vector to every stored voxel whose center lies in the
/// region and flags it. Empty voxels inside the region stay empty.
pub fn inject_anchor(grid: &VoxelGrid, region: &AnchorRegion) -> Result<VoxelGrid> {
    if region.anchor.len() != grid.dim {
        return Err(Error::DimMismatch {
            expected: grid.dim,
            actual: region.anchor.len(),
        });
    }
    let mut out = grid.clone();
    for (idx, cell) in out.cells.iter_mut() {
        if !region.contains(grid, idx) {
            continue;
        }
        for (v, a) in cell.feature.iter_mut().zip(&region.anchor) {
            *v += a;
        }
        cell.anchored = true;
    }
    Ok(out)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct GridStats {
    pub occupied_voxels: usize,
    pub occupied_columns: usize,
}

pub fn grid_stats(grid: &VoxelGrid) -> GridStats {
    let mut columns = 0;
    let mut last: Option<(i64, i64)> = None;
    // keys are sorted by (i, j, k), so equal columns are adjacent
    for idx in grid.cells.keys() {
        let col = (idx[0], idx[1]);
        if last != Some(col) {
            columns += 1;
            last = Some(col);
        }
    }
    GridStats {
        occupied_voxels: grid.cells.len(),
        occupied_columns: columns,
    }
}
