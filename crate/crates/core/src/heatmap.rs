//! Volumetric 2.5D joint heatmaps and relative-depth heatmaps.
//!
//! A [`HeatmapVolume`] is a `J x D x H x W` array laid out joint-major, then
//! depth, row, column. The network-side reshape from a `JD x H x W` feature
//! block is [`HeatmapVolume::from_feature_block`].

use std::io::{self, Read, Write};

use ndarray::{Array3, Array4, ArrayView3, ArrayView4, Axis};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use nalgebra::Vector3;

pub const DEFAULT_SIGMA: f64 = 2.5;
pub const REL_DEPTH_BINS: usize = 64;
/// Root-relative depth range covered by the volume's z axis.
pub const VOLUME_DEPTH_RANGE_MM: (f64, f64) = (-200.0, 200.0);
/// Range of the right-to-left relative root depth heatmap.
pub const REL_DEPTH_RANGE_MM: (f64, f64) = (-400.0, 400.0);
/// Mass below which normalised soft-argmax is undefined.
pub const MIN_MASS: f64 = 1e-12;

#[derive(Debug, Error)]
pub enum HeatmapError {
    #[error("sigma must be positive, got {0}")]
    NonPositiveSigma(f64),
    #[error("joint {joint} has total mass {mass:e}; normalised soft-argmax undefined")]
    DegenerateMass { joint: usize, mass: f64 },
    #[error("dimension mismatch: {0}")]
    DimMismatch(String),
    #[error("invalid heatmap value: {0}")]
    InvalidValue(String),
    #[error(transparent)]
    Io(#[from] io::Error),
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct VolumeDims {
    pub joints: usize,
    pub depth: usize,
    pub height: usize,
    pub width: usize,
}

impl Default for VolumeDims {
    fn default() -> Self {
        Self {
            joints: 21,
            depth: 64,
            height: 64,
            width: 64,
        }
    }
}

impl VolumeDims {
    pub fn new(joints: usize, depth: usize, height: usize, width: usize) -> Self {
        Self {
            joints,
            depth,
            height,
            width,
        }
    }

    fn shape(&self) -> (usize, usize, usize, usize) {
        (self.joints, self.depth, self.height, self.width)
    }

    fn is_positive(&self) -> bool {
        self.joints > 0 && self.depth > 0 && self.height > 0 && self.width > 0
    }
}

/// Continuous voxel-space coordinate: `x` column, `y` row, `z` depth bin.
/// Integer values are voxel centres.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct VoxelCoord {
    pub x: f64,
    pub y: f64,
    pub z: f64,
}

impl VoxelCoord {
    pub fn new(x: f64, y: f64, z: f64) -> Self {
        Self { x, y, z }
    }
}

/// Non-negative `J x D x H x W` likelihood volume.
#[derive(Clone, Debug, PartialEq)]
pub struct HeatmapVolume {
    values: Array4<f64>,
}

impl HeatmapVolume {
    pub fn new(values: Array4<f64>) -> Result<Self, HeatmapError> {
        if values.is_empty() {
            return Err(HeatmapError::DimMismatch("empty volume".into()));
        }
        if let Some(v) = values.iter().find(|v| !(v.is_finite() && **v >= 0.0)) {
            return Err(HeatmapError::InvalidValue(format!(
                "values must be finite and non-negative, found {v}"
            )));
        }
        Ok(Self {
            values: values.as_standard_layout().into_owned(),
        })
    }

    pub fn zeros(dims: VolumeDims) -> Self {
        Self {
            values: Array4::zeros(dims.shape()),
        }
    }

    pub fn dims(&self) -> VolumeDims {
        let s = self.values.shape();
        VolumeDims::new(s[0], s[1], s[2], s[3])
    }

    pub fn values(&self) -> ArrayView4<'_, f64> {
        self.values.view()
    }

    pub fn get(&self, joint: usize, z: usize, y: usize, x: usize) -> f64 {
        self.values[[joint, z, y, x]]
    }

    /// Reshape a `JD x H x W` block into `J x D x H x W`.
    pub fn from_feature_block(block: Array3<f64>, joints: usize) -> Result<Self, HeatmapError> {
        let (jd, h, w) = block.dim();
        if joints == 0 || jd % joints != 0 {
            return Err(HeatmapError::DimMismatch(format!(
                "leading axis {jd} is not a multiple of {joints} joints"
            )));
        }
        let values = block
            .as_standard_layout()
            .into_owned()
            .into_shape_with_order((joints, jd / joints, h, w))
            .map_err(|e| HeatmapError::DimMismatch(e.to_string()))?;
        Self::new(values)
    }

    /// Inverse of [`HeatmapVolume::from_feature_block`].
    pub fn to_feature_block(&self) -> Array3<f64> {
        let d = self.dims();
        self.values
            .clone()
            .into_shape_with_order((d.joints * d.depth, d.height, d.width))
            .expect("standard layout")
    }

    /// Element-wise difference norm `||self - other||_2` over all voxels.
    pub fn l2_distance(&self, other: &HeatmapVolume) -> Result<f64, HeatmapError> {
        if self.dims() != other.dims() {
            return Err(HeatmapError::DimMismatch(format!(
                "{:?} vs {:?}",
                self.dims(),
                other.dims()
            )));
        }
        let sq = self
            .values
            .iter()
            .zip(other.values.iter())
            .map(|(a, b)| (a - b) * (a - b));
        Ok(crate::numeric::sum(sq).sqrt())
    }
}

/// Render `exp(-((x-x_j)^2 + (y-y_j)^2 + (z-z_j)^2) / (2 sigma^2))` for every
/// voxel of every joint. Centres outside the volume are not clamped.
pub fn render_gaussian(
    joints: &[VoxelCoord],
    sigma: f64,
    dims: VolumeDims,
) -> Result<HeatmapVolume, HeatmapError> {
    if !(sigma > 0.0) {
        return Err(HeatmapError::NonPositiveSigma(sigma));
    }
    if !dims.is_positive() {
        return Err(HeatmapError::DimMismatch(format!("{dims:?} has a zero axis")));
    }
    if joints.len() != dims.joints {
        return Err(HeatmapError::DimMismatch(format!(
            "{} joints for a volume of {}",
            joints.len(),
            dims.joints
        )));
    }
    let denom = 2.0 * sigma * sigma;
    // The 3D Gaussian factorises into per-axis terms.
    let axis = |center: f64, n: usize| -> Vec<f64> {
        (0..n)
            .map(|i| (-(i as f64 - center).powi(2) / denom).exp())
            .collect()
    };
    let mut values = Array4::<f64>::zeros(dims.shape());
    for (j, (c, mut vol)) in joints.iter().zip(values.outer_iter_mut()).enumerate() {
        if !(c.x.is_finite() && c.y.is_finite() && c.z.is_finite()) {
            return Err(HeatmapError::InvalidValue(format!("joint {j} centre is not finite")));
        }
        let gx = axis(c.x, dims.width);
        let gy = axis(c.y, dims.height);
        let gz = axis(c.z, dims.depth);
        for ((z, y, x), v) in vol.indexed_iter_mut() {
            *v = gz[z] * gy[y] * gx[x];
        }
    }
    Ok(HeatmapVolume { values })
}

/// Integer coordinates of each joint's maximum voxel. Ties go to the lowest
/// raster index (z, then y, then x).
pub fn decode_hard_argmax(h: &HeatmapVolume) -> Vec<VoxelCoord> {
    h.values
        .outer_iter()
        .map(|vol| {
            let mut best = (f64::NEG_INFINITY, (0, 0, 0));
            for ((z, y, x), &v) in vol.indexed_iter() {
                if v > best.0 {
                    best = (v, (z, y, x));
                }
            }
            let (z, y, x) = best.1;
            VoxelCoord::new(x as f64, y as f64, z as f64)
        })
        .collect()
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SoftArgmaxMode {
    /// Divide the (non-negative) values by their sum.
    Normalized,
    /// Apply a softmax to raw logits first.
    Softmax,
}

fn expectation(vol: ArrayView3<'_, f64>, joint: usize, mode: SoftArgmaxMode) -> Result<VoxelCoord, HeatmapError> {
    let weights: Array3<f64> = match mode {
        SoftArgmaxMode::Normalized => vol.to_owned(),
        SoftArgmaxMode::Softmax => {
            let max = vol.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            vol.mapv(|v| (v - max).exp())
        }
    };
    let mass: f64 = weights.sum();
    if mode == SoftArgmaxMode::Normalized && !(mass > MIN_MASS) {
        return Err(HeatmapError::DegenerateMass { joint, mass });
    }
    let marginal = |keep: usize| -> f64 {
        let mut m = weights.view().into_owned();
        // sum out the other two axes, highest first so indices stay valid
        for ax in (0..3).rev().filter(|a| *a != keep) {
            m = m.sum_axis(Axis(ax)).insert_axis(Axis(ax));
        }
        m.iter()
            .enumerate()
            .map(|(i, w)| i as f64 * w)
            .sum::<f64>()
            / mass
    };
    Ok(VoxelCoord::new(marginal(2), marginal(1), marginal(0)))
}

/// Per-joint expectation of voxel-centre coordinates.
pub fn decode_soft_argmax_3d(
    h: &HeatmapVolume,
    mode: SoftArgmaxMode,
) -> Result<Vec<VoxelCoord>, HeatmapError> {
    soft_argmax_view(h.values(), mode)
}

/// Soft-argmax over an unvalidated array, e.g. raw network logits.
pub fn soft_argmax_view(
    values: ArrayView4<'_, f64>,
    mode: SoftArgmaxMode,
) -> Result<Vec<VoxelCoord>, HeatmapError> {
    if values.iter().any(|v| !v.is_finite()) {
        return Err(HeatmapError::InvalidValue("non-finite value".into()));
    }
    values
        .outer_iter()
        .enumerate()
        .map(|(j, vol)| expectation(vol, j, mode))
        .collect()
}

/// 64-bin heatmap over the right-to-left relative root depth.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RelDepthHeatmap {
    bins: Vec<f64>,
    range_mm: (f64, f64),
}

impl RelDepthHeatmap {
    pub fn new(bins: Vec<f64>, range_mm: (f64, f64)) -> Result<Self, HeatmapError> {
        if bins.len() != REL_DEPTH_BINS {
            return Err(HeatmapError::DimMismatch(format!(
                "expected {REL_DEPTH_BINS} bins, got {}",
                bins.len()
            )));
        }
        if bins.iter().any(|b| !(b.is_finite() && *b >= 0.0)) {
            return Err(HeatmapError::InvalidValue("bins must be finite and non-negative".into()));
        }
        if !(range_mm.0 < range_mm.1) {
            return Err(HeatmapError::InvalidValue(format!("empty range {range_mm:?}")));
        }
        Ok(Self { bins, range_mm })
    }

    pub fn with_default_range(bins: Vec<f64>) -> Result<Self, HeatmapError> {
        Self::new(bins, REL_DEPTH_RANGE_MM)
    }

    pub fn bins(&self) -> &[f64] {
        &self.bins
    }

    pub fn range_mm(&self) -> (f64, f64) {
        self.range_mm
    }

    pub fn bin_center(&self, k: usize) -> f64 {
        let (lo, hi) = self.range_mm;
        lo + (hi - lo) * (k as f64 + 0.5) / self.bins.len() as f64
    }
}

/// Softmax over the bins followed by the expectation of bin-centre depths.
pub fn decode_rel_depth(d: &RelDepthHeatmap) -> f64 {
    let max = d.bins.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let w: Vec<f64> = d.bins.iter().map(|b| (b - max).exp()).collect();
    let mass: f64 = w.iter().sum();
    w.iter()
        .enumerate()
        .map(|(k, wk)| wk * d.bin_center(k))
        .sum::<f64>()
        / mass
}

/// Linear maps between 2.5D crop coordinates and voxel coordinates.
///
/// Every axis uses the same cell convention: the axis extent (crop pixels
/// `[0, W_c]`, or the metric depth range) is split into equal cells and
/// voxel index `k` sits at the centre of cell `k`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct VoxelGrid {
    pub crop_size: [u32; 2],
    pub dims: VolumeDims,
    pub depth_range_mm: (f64, f64),
}

impl Default for VoxelGrid {
    fn default() -> Self {
        Self {
            crop_size: [256, 256],
            dims: VolumeDims::default(),
            depth_range_mm: VOLUME_DEPTH_RANGE_MM,
        }
    }
}

impl VoxelGrid {
    fn cell(&self) -> Vector3<f64> {
        Vector3::new(
            self.crop_size[0] as f64 / self.dims.width as f64,
            self.crop_size[1] as f64 / self.dims.height as f64,
            (self.depth_range_mm.1 - self.depth_range_mm.0) / self.dims.depth as f64,
        )
    }

    /// `(x px, y px, z mm)` → voxel coordinate.
    pub fn to_voxel(&self, p: &Vector3<f64>) -> VoxelCoord {
        let c = self.cell();
        VoxelCoord::new(
            p.x / c.x - 0.5,
            p.y / c.y - 0.5,
            (p.z - self.depth_range_mm.0) / c.z - 0.5,
        )
    }

    pub fn to_pose25d(&self, v: &VoxelCoord) -> Vector3<f64> {
        let c = self.cell();
        Vector3::new(
            (v.x + 0.5) * c.x,
            (v.y + 0.5) * c.y,
            (v.z + 0.5) * c.z + self.depth_range_mm.0,
        )
    }
}

/// Write the binary dump: `J, D, H, W` as little-endian `u32`, then every
/// value as little-endian `f32` in raster order.
pub fn write_volume_dump<W: Write>(h: &HeatmapVolume, mut out: W) -> Result<(), HeatmapError> {
    let d = h.dims();
    for n in [d.joints, d.depth, d.height, d.width] {
        let n = u32::try_from(n).map_err(|_| HeatmapError::DimMismatch(format!("axis {n} too large")))?;
        out.write_all(&n.to_le_bytes())?;
    }
    for v in h.values.iter() {
        out.write_all(&(*v as f32).to_le_bytes())?;
    }
    Ok(())
}

pub fn read_volume_dump<R: Read>(mut input: R) -> Result<HeatmapVolume, HeatmapError> {
    let mut header = [0u8; 16];
    input.read_exact(&mut header)?;
    let dim = |i: usize| u32::from_le_bytes(header[4 * i..4 * i + 4].try_into().unwrap()) as usize;
    let dims = VolumeDims::new(dim(0), dim(1), dim(2), dim(3));
    if !dims.is_positive() {
        return Err(HeatmapError::DimMismatch(format!("{dims:?} has a zero axis")));
    }
    let n = dims.joints * dims.depth * dims.height * dims.width;
    let mut raw = vec![0u8; n * 4];
    input.read_exact(&mut raw)?;
    let values: Vec<f64> = raw
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes(c.try_into().unwrap()) as f64)
        .collect();
    let arr = Array4::from_shape_vec(dims.shape(), values)
        .map_err(|e| HeatmapError::DimMismatch(e.to_string()))?;
    HeatmapVolume::new(arr)
}
