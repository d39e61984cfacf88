//! Exact oracle and measurement harness.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::engine::{AnnField, FrameStats};
use crate::error::{Error, Result};
use crate::model::ReferenceModel;
use crate::patch::{extract_patches, Frame};

/// Full linear scan. Ties go to the lowest index.
pub fn exact_nn(query: &[f32], model: &ReferenceModel) -> (u32, f32) {
    let mut best = (0u32, f32::INFINITY);
    for i in 0..model.n() {
        let d = model.distance_to(query, i);
        if d < best.1 {
            best = (i as u32, d);
        }
    }
    best
}

/// Exact nearest neighbour at every position of a frame (frame_t = 0).
pub fn field_exact_oracle(frame: &Frame, model: &ReferenceModel) -> Result<AnnField> {
    let grid = extract_patches(frame, model.shape, 1)?.normalized();
    let hits: Vec<(u32, f32)> = (0..grid.len()).into_par_iter().map(|k| exact_nn(grid.values_at(k), model)).collect();
    Ok(AnnField {
        width: grid.width,
        height: grid.height,
        indices: hits.iter().map(|h| h.0).collect(),
        distances: hits.iter().map(|h| h.1).collect(),
        frame_t: 0,
    })
}

/// Fixed-width histogram starting at zero; grows as needed.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Histogram {
    pub bin_width: f64,
    pub counts: Vec<u64>,
}

impl Histogram {
    pub fn new(bin_width: f64) -> Self {
        Histogram { bin_width, counts: Vec::new() }
    }

    pub fn add(&mut self, v: f64) {
        let bin = (v.max(0.0) / self.bin_width).floor() as usize;
        if bin >= self.counts.len() {
            self.counts.resize(bin + 1, 0);
        }
        self.counts[bin] += 1;
    }

    pub fn total(&self) -> u64 {
        self.counts.iter().sum()
    }

    /// Lower edge of each bin.
    pub fn edges(&self) -> Vec<f64> {
        (0..self.counts.len()).map(|b| b as f64 * self.bin_width).collect()
    }

    /// Fraction of samples in bins whose upper edge is at most `x`.
    pub fn fraction_at_most(&self, x: f64) -> f64 {
        let total = self.total();
        if total == 0 {
            return 0.0;
        }
        let bins = ((x / self.bin_width) + 1e-9).floor() as usize;
        self.counts.iter().take(bins).sum::<u64>() as f64 / total as f64
    }
}

/// Appearance-coherency measurements over consecutive exact matches
/// `r_i` (frame t−1) and `r_j` (frame t) at the same position.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CoherencyStats {
    /// `dist(r_i, r_j)`.
    pub match_distance: Histogram,
    /// `|dist(r_i, r_j) − dist(r_i, q_t)|`.
    pub predictor_residual: Histogram,
    pub samples: u64,
    /// Positions skipped because `r_i = r_j`.
    pub excluded: u64,
    pub median_match_distance: Option<f64>,
    pub median_residual: Option<f64>,
}

pub fn coherency_stats(frames: &[Frame], model: &ReferenceModel, bin_width: f64) -> Result<CoherencyStats> {
    if frames.len() < 2 {
        return Err(Error::InvalidParam(format!("coherency needs at least 2 frames, got {}", frames.len())));
    }
    if bin_width.is_nan() || bin_width <= 0.0 {
        return Err(Error::InvalidParam("bin width must be positive".into()));
    }
    let mut prev = field_exact_oracle(&frames[0], model)?;
    let mut dists = Vec::new();
    let mut residuals = Vec::new();
    let mut excluded = 0u64;
    for frame in &frames[1..] {
        let grid = extract_patches(frame, model.shape, 1)?.normalized();
        if grid.width != prev.width || grid.height != prev.height {
            return Err(Error::Dimension("frames differ in size".into()));
        }
        let hits: Vec<(u32, f32)> =
            (0..grid.len()).into_par_iter().map(|k| exact_nn(grid.values_at(k), model)).collect();
        for (k, &(j, _)) in hits.iter().enumerate() {
            let i = prev.indices[k];
            if i == j {
                excluded += 1;
                continue;
            }
            let d_ij = model.metric_distance(i as usize, j as usize) as f64;
            let d_iq = model.distance_to(grid.values_at(k), i as usize) as f64;
            dists.push(d_ij);
            residuals.push((d_ij - d_iq).abs());
        }
        prev.indices = hits.iter().map(|h| h.0).collect();
        prev.distances = hits.iter().map(|h| h.1).collect();
    }
    let mut match_distance = Histogram::new(bin_width);
    let mut predictor_residual = Histogram::new(bin_width);
    dists.iter().for_each(|&d| match_distance.add(d));
    residuals.iter().for_each(|&r| predictor_residual.add(r));
    Ok(CoherencyStats {
        match_distance,
        predictor_residual,
        samples: dists.len() as u64,
        excluded,
        median_match_distance: median(&mut dists),
        median_residual: median(&mut residuals),
    })
}

/// Lower median (`None` for an empty slice). Reorders the input.
pub fn median(values: &mut [f64]) -> Option<f64> {
    if values.is_empty() {
        return None;
    }
    let k = (values.len() - 1) / 2;
    let (_, v, _) = values.select_nth_unstable_by(k, f64::total_cmp);
    Some(*v)
}

/// Median distance over all unordered pairs of distinct references.
pub fn median_pairwise_distance(model: &ReferenceModel) -> Option<f64> {
    let n = model.n();
    let mut all: Vec<f64> = (0..n)
        .flat_map(|i| {
            let (dist, idx) = model.sorted_row(i);
            dist.iter().zip(idx).filter(move |(_, &j)| (j as usize) > i).map(|(&d, _)| d as f64)
        })
        .collect();
    median(&mut all)
}

/// Spearman rank correlation with average ranks for ties. `None` when either
/// side is constant or the lengths differ.
pub fn spearman(a: &[f64], b: &[f64]) -> Option<f64> {
    if a.len() != b.len() || a.len() < 2 {
        return None;
    }
    let (ra, rb) = (ranks(a), ranks(b));
    pearson(&ra, &rb)
}

fn ranks(v: &[f64]) -> Vec<f64> {
    let mut order: Vec<usize> = (0..v.len()).collect();
    order.sort_by(|&x, &y| v[x].total_cmp(&v[y]));
    let mut out = vec![0.0; v.len()];
    let mut i = 0;
    while i < order.len() {
        let mut j = i;
        while j + 1 < order.len() && v[order[j + 1]] == v[order[i]] {
            j += 1;
        }
        let avg = (i + j) as f64 / 2.0 + 1.0;
        for &o in &order[i..=j] {
            out[o] = avg;
        }
        i = j + 1;
    }
    out
}

fn pearson(a: &[f64], b: &[f64]) -> Option<f64> {
    let n = a.len() as f64;
    let (ma, mb) = (a.iter().sum::<f64>() / n, b.iter().sum::<f64>() / n);
    let (mut sab, mut saa, mut sbb) = (0.0, 0.0, 0.0);
    for (x, y) in a.iter().zip(b) {
        sab += (x - ma) * (y - mb);
        saa += (x - ma) * (x - ma);
        sbb += (y - mb) * (y - mb);
    }
    if saa == 0.0 || sbb == 0.0 {
        return None;
    }
    Some(sab / (saa * sbb).sqrt())
}

/// Distance-evaluation accounting over a run.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EfficiencySummary {
    pub frames: usize,
    pub queries: u64,
    pub model_size: usize,
    pub mean_distance_evals: f64,
    pub mean_rings: f64,
    /// `n / mean_distance_evals`: how many times fewer distances than a linear scan.
    pub brute_force_ratio: f64,
    pub spearman_rings_vs_change: Option<f64>,
    /// Wall-clock throughput, reported only.
    pub fps: Option<f64>,
}

/// Summarise frames after the first `skip` (e.g. the random-init transient).
pub fn efficiency_report(stats: &[FrameStats], n: usize, skip: usize, elapsed_secs: Option<f64>) -> EfficiencySummary {
    let kept = &stats[skip.min(stats.len())..];
    let queries: u64 = kept.iter().map(|s| s.queries).sum();
    let evals: u64 = kept.iter().map(|s| s.total_distance_evals).sum();
    let rings: u64 = kept.iter().map(|s| s.total_rings).sum();
    let mean_distance_evals = if queries == 0 { 0.0 } else { evals as f64 / queries as f64 };
    let rings_series: Vec<f64> = stats.iter().map(|s| s.total_rings as f64).collect();
    let change_series: Vec<f64> = stats.iter().map(|s| s.temporal_change).collect();
    EfficiencySummary {
        frames: kept.len(),
        queries,
        model_size: n,
        mean_distance_evals,
        mean_rings: if queries == 0 { 0.0 } else { rings as f64 / queries as f64 },
        brute_force_ratio: if mean_distance_evals > 0.0 { n as f64 / mean_distance_evals } else { f64::INFINITY },
        spearman_rings_vs_change: spearman(&rings_series, &change_series),
        fps: elapsed_secs.filter(|&s| s > 0.0).map(|s| stats.len() as f64 / s),
    }
}

/// One line of a run report. Serialised as JSON objects tagged by `record`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "record", rename_all = "snake_case")]
pub enum ReportRecord {
    Frame {
        #[serde(flatten)]
        stats: FrameStats,
        mean_distance_evals: f64,
        /// Reconstruction error of the field, when computed.
        #[serde(skip_serializing_if = "Option::is_none", default)]
        error: Option<f64>,
        /// Reconstruction error of the exact-NN field, when computed.
        #[serde(skip_serializing_if = "Option::is_none", default)]
        oracle_error: Option<f64>,
    },
    Summary(EfficiencySummary),
    Coherency(CoherencyStats),
}
