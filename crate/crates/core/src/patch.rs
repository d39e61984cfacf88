//! Frames, dense patch extraction, normalisation and patch metrics.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Magnitudes below this are treated as the zero patch.
pub const DEGENERATE_NORM: f32 = 1e-12;

/// A single-channel raster of intensities in `[0, 1]`, row-major.
#[derive(Clone, Debug, PartialEq)]
pub struct Frame {
    pub width: usize,
    pub height: usize,
    pub data: Vec<f32>,
}

impl Frame {
    pub fn new(width: usize, height: usize, data: Vec<f32>) -> Result<Self> {
        if data.len() != width * height {
            return Err(Error::Dimension(format!(
                "frame {}x{} needs {} samples, got {}",
                width,
                height,
                width * height,
                data.len()
            )));
        }
        Ok(Frame { width, height, data })
    }

    pub fn filled(width: usize, height: usize, value: f32) -> Self {
        Frame { width, height, data: vec![value; width * height] }
    }

    /// 8-bit intensities are mapped to `[0, 1]` by dividing by 255.
    pub fn from_u8(width: usize, height: usize, bytes: &[u8]) -> Result<Self> {
        Frame::new(width, height, bytes.iter().map(|&b| b as f32 / 255.0).collect())
    }

    #[inline]
    pub fn get(&self, x: usize, y: usize) -> f32 {
        self.data[y * self.width + x]
    }

    #[inline]
    pub fn set(&mut self, x: usize, y: usize, v: f32) {
        self.data[y * self.width + x] = v;
    }

    /// Quantise to 8 bits, rounding half away from zero and clamping.
    pub fn to_u8(&self) -> Vec<u8> {
        self.data.iter().map(|&v| quantize_u8(v)).collect()
    }

    pub fn same_geometry(&self, other: &Frame) -> bool {
        self.width == other.width && self.height == other.height
    }

    pub fn scaled(&self, s: f32) -> Frame {
        Frame { width: self.width, height: self.height, data: self.data.iter().map(|v| v * s).collect() }
    }
}

/// Map a `[0, 1]` intensity to a byte. `f32::round` rounds half away from zero.
#[inline]
pub fn quantize_u8(v: f32) -> u8 {
    (v * 255.0).round().clamp(0.0, 255.0) as u8
}

/// Patch geometry. Matching is luminance-only, so `channels` is 1 for every
/// patch produced by this crate; the field exists for the model file header.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct PatchShape {
    pub width: usize,
    pub height: usize,
    pub channels: usize,
}

impl PatchShape {
    pub fn square(side: usize) -> Self {
        PatchShape { width: side, height: side, channels: 1 }
    }

    pub fn new(width: usize, height: usize) -> Self {
        PatchShape { width, height, channels: 1 }
    }

    #[inline]
    pub fn dim(&self) -> usize {
        self.width * self.height * self.channels
    }
}

impl Default for PatchShape {
    fn default() -> Self {
        PatchShape::square(8)
    }
}

/// A patch vector together with the L2 magnitude it had before normalisation.
#[derive(Clone, Debug, PartialEq)]
pub struct Patch {
    pub values: Vec<f32>,
    pub norm: f32,
}

impl Patch {
    /// Wrap raw values; `norm` records their current magnitude.
    pub fn new(values: Vec<f32>) -> Self {
        let norm = l2_norm(&values);
        Patch { values, norm }
    }

    pub fn dim(&self) -> usize {
        self.values.len()
    }

    pub fn is_zero(&self) -> bool {
        self.values.iter().all(|&v| v == 0.0)
    }
}

#[inline]
pub fn l2_norm(values: &[f32]) -> f32 {
    let sq: f64 = values.iter().map(|&v| (v as f64) * (v as f64)).sum();
    sq.sqrt() as f32
}

/// Scale `values` to unit length in place and return the original magnitude.
/// Degenerate vectors become all-zero with magnitude 0.
pub fn normalize_in_place(values: &mut [f32]) -> f32 {
    let norm = l2_norm(values);
    if norm < DEGENERATE_NORM {
        values.iter_mut().for_each(|v| *v = 0.0);
        return 0.0;
    }
    let inv = 1.0 / norm as f64;
    values.iter_mut().for_each(|v| *v = (*v as f64 * inv) as f32);
    norm
}

pub fn normalize_patch(p: &Patch) -> Patch {
    let mut values = p.values.clone();
    let norm = normalize_in_place(&mut values);
    Patch { values, norm }
}

/// A distance function over equal-length sample vectors. Implementations
/// must satisfy the metric axioms; ring pruning relies on the triangle
/// inequality.
pub trait Metric: Sync {
    fn distance(&self, a: &[f32], b: &[f32]) -> f32;
}

/// Built-in metrics. The discriminant is the `metric_id` stored in model files.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[repr(u8)]
pub enum MetricKind {
    #[default]
    Euclidean = 0,
    Manhattan = 1,
}

impl MetricKind {
    pub fn id(self) -> u8 {
        self as u8
    }

    pub fn from_id(id: u8) -> Option<Self> {
        match id {
            0 => Some(MetricKind::Euclidean),
            1 => Some(MetricKind::Manhattan),
            _ => None,
        }
    }
}

impl Metric for MetricKind {
    #[inline]
    fn distance(&self, a: &[f32], b: &[f32]) -> f32 {
        match self {
            MetricKind::Euclidean => euclidean(a, b),
            MetricKind::Manhattan => manhattan(a, b),
        }
    }
}

const LANES: usize = 8;

/// Euclidean distance. Accumulates in eight fixed lanes so the summation
/// order (and therefore the result) is identical on every platform, and is
/// exactly symmetric in its arguments.
#[inline]
pub fn euclidean(a: &[f32], b: &[f32]) -> f32 {
    debug_assert_eq!(a.len(), b.len());
    let mut acc = [0f32; LANES];
    let chunks = a.len() / LANES;
    for c in 0..chunks {
        let (ca, cb) = (&a[c * LANES..c * LANES + LANES], &b[c * LANES..c * LANES + LANES]);
        for l in 0..LANES {
            let d = ca[l] - cb[l];
            acc[l] += d * d;
        }
    }
    let mut tail = 0f32;
    for i in chunks * LANES..a.len() {
        let d = a[i] - b[i];
        tail += d * d;
    }
    let s = ((acc[0] + acc[1]) + (acc[2] + acc[3])) + ((acc[4] + acc[5]) + (acc[6] + acc[7])) + tail;
    s.sqrt()
}

#[inline]
pub fn manhattan(a: &[f32], b: &[f32]) -> f32 {
    debug_assert_eq!(a.len(), b.len());
    a.iter().zip(b).map(|(x, y)| (x - y).abs()).sum()
}

/// Euclidean distance between two patches' current values.
pub fn distance(a: &Patch, b: &Patch) -> Result<f32> {
    distance_with(&MetricKind::Euclidean, a, b)
}

pub fn distance_with<M: Metric + ?Sized>(metric: &M, a: &Patch, b: &Patch) -> Result<f32> {
    if a.dim() != b.dim() {
        return Err(Error::Dimension(format!("patch dimensions differ: {} vs {}", a.dim(), b.dim())));
    }
    Ok(metric.distance(&a.values, &b.values))
}

/// Dense grid of patches, stored flat: patch `k` occupies
/// `values[k * dim..(k + 1) * dim]`.
#[derive(Clone, Debug, PartialEq)]
pub struct PatchGrid {
    pub width: usize,
    pub height: usize,
    pub shape: PatchShape,
    pub stride: usize,
    pub values: Vec<f32>,
    /// Magnitude of each patch before normalisation.
    pub norms: Vec<f32>,
    normalized: bool,
}

impl PatchGrid {
    #[inline]
    pub fn len(&self) -> usize {
        self.width * self.height
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    #[inline]
    pub fn dim(&self) -> usize {
        self.shape.dim()
    }

    #[inline]
    pub fn values_at(&self, k: usize) -> &[f32] {
        let d = self.dim();
        &self.values[k * d..(k + 1) * d]
    }

    pub fn patch(&self, x: usize, y: usize) -> Patch {
        let k = y * self.width + x;
        Patch { values: self.values_at(k).to_vec(), norm: self.norms[k] }
    }

    pub fn is_normalized(&self) -> bool {
        self.normalized
    }

    /// Normalise every patch in place, recording the original magnitudes.
    pub fn normalize(&mut self) {
        if self.normalized {
            return;
        }
        let d = self.dim();
        for (chunk, norm) in self.values.chunks_exact_mut(d).zip(self.norms.iter_mut()) {
            *norm = normalize_in_place(chunk);
        }
        self.normalized = true;
    }

    pub fn normalized(mut self) -> Self {
        self.normalize();
        self
    }

    pub fn patches(&self) -> impl Iterator<Item = &[f32]> {
        self.values.chunks_exact(self.dim())
    }
}

/// Number of window positions along one axis.
pub fn grid_extent(frame_len: usize, patch_len: usize, stride: usize) -> usize {
    (frame_len - patch_len) / stride + 1
}

/// Enumerate every window of `shape` whose top-left corner lies on the
/// `stride` lattice. Patches are returned raw (unnormalised).
pub fn extract_patches(frame: &Frame, shape: PatchShape, stride: usize) -> Result<PatchGrid> {
    if stride == 0 {
        return Err(Error::InvalidParam("stride must be at least 1".into()));
    }
    if shape.width == 0 || shape.height == 0 {
        return Err(Error::InvalidParam("patch size must be positive".into()));
    }
    if shape.channels != 1 {
        return Err(Error::InvalidParam("only single-channel patches are extracted".into()));
    }
    if frame.width < shape.width || frame.height < shape.height {
        return Err(Error::Dimension(format!(
            "frame {}x{} smaller than patch {}x{}",
            frame.width, frame.height, shape.width, shape.height
        )));
    }
    let gw = grid_extent(frame.width, shape.width, stride);
    let gh = grid_extent(frame.height, shape.height, stride);
    let dim = shape.dim();
    let mut values = Vec::with_capacity(gw * gh * dim);
    let mut norms = Vec::with_capacity(gw * gh);
    for gy in 0..gh {
        for gx in 0..gw {
            let start = values.len();
            let (x0, y0) = (gx * stride, gy * stride);
            for py in 0..shape.height {
                let row = (y0 + py) * frame.width + x0;
                values.extend_from_slice(&frame.data[row..row + shape.width]);
            }
            norms.push(l2_norm(&values[start..]));
        }
    }
    Ok(PatchGrid { width: gw, height: gh, shape, stride, values, norms, normalized: false })
}
