//! Frame-level orchestration: each position's match is propagated through
//! time by seeding its query with the previous frame's match at the same
//! position.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::ReferenceModel;
use crate::patch::{extract_patches, Frame, Metric, MetricKind, PatchGrid};
use crate::search::{query_rng, riann_query_with, QueryResult, QueryScratch, SearchParams};

/// Marks a distance that has not been computed yet.
pub const UNSET_DISTANCE: f32 = f32::INFINITY;

/// Dense per-frame map from patch position to reference index.
#[derive(Clone, Debug, PartialEq)]
pub struct AnnField {
    pub width: usize,
    pub height: usize,
    pub indices: Vec<u32>,
    pub distances: Vec<f32>,
    pub frame_t: u64,
}

impl AnnField {
    pub fn len(&self) -> usize {
        self.width * self.height
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    #[inline]
    pub fn index_at(&self, x: usize, y: usize) -> u32 {
        self.indices[y * self.width + x]
    }

    /// Number of positions whose index differs from `other`.
    pub fn changed_positions(&self, other: &AnnField) -> usize {
        self.indices.iter().zip(&other.indices).filter(|(a, b)| a != b).count()
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct FrameStats {
    pub frame_t: u64,
    pub queries: u64,
    pub total_rings: u64,
    pub total_distance_evals: u64,
    pub mean_candidates: f64,
    /// Sum over positions of the distance between consecutive normalised
    /// query patches; zero when there is no previous frame.
    pub temporal_change: f64,
}

impl FrameStats {
    pub fn mean_distance_evals(&self) -> f64 {
        if self.queries == 0 {
            0.0
        } else {
            self.total_distance_evals as f64 / self.queries as f64
        }
    }
}

/// Random initial field, indices i.i.d. uniform over `[0, n)`.
pub fn init_field(grid_w: usize, grid_h: usize, n: usize, seed: u64) -> Result<AnnField> {
    if n == 0 {
        return Err(Error::InvalidParam("cannot initialise a field over an empty model".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let indices = (0..grid_w * grid_h).map(|_| rng.gen_range(0..n as u32)).collect();
    Ok(AnnField {
        width: grid_w,
        height: grid_h,
        indices,
        distances: vec![UNSET_DISTANCE; grid_w * grid_h],
        frame_t: 0,
    })
}

/// Match every patch of a normalised grid, seeding each query with the
/// previous field's index at the same position. Returns the new field, the
/// frame statistics and the per-position query results.
pub fn process_grid(
    grid: &PatchGrid,
    prev_field: &AnnField,
    prev_grid: Option<&PatchGrid>,
    model: &ReferenceModel,
    params: &SearchParams,
) -> Result<(AnnField, FrameStats, Vec<QueryResult>)> {
    params.validate()?;
    if !grid.is_normalized() {
        return Err(Error::InvalidParam("query grid must be normalised".into()));
    }
    if grid.shape != model.shape {
        return Err(Error::Dimension(format!(
            "grid patch shape {:?} differs from model {:?}",
            grid.shape, model.shape
        )));
    }
    if grid.width != prev_field.width || grid.height != prev_field.height {
        return Err(Error::Dimension(format!(
            "frame yields a {}x{} patch grid but the field is {}x{}",
            grid.width, grid.height, prev_field.width, prev_field.height
        )));
    }
    if let Some(&bad) = prev_field.indices.iter().find(|&&i| i as usize >= model.n()) {
        return Err(Error::IndexOutOfRange { index: bad as usize, n: model.n() });
    }
    let t = prev_field.frame_t + 1;
    let w = grid.width;

    let results: Vec<QueryResult> = (0..grid.height)
        .into_par_iter()
        .map_init(QueryScratch::new, |scratch, y| {
            (0..w)
                .map(|x| {
                    let k = y * w + x;
                    let mut rng = query_rng(params.seed, x, y, t);
                    riann_query_with(
                        model,
                        grid.values_at(k),
                        prev_field.indices[k] as usize,
                        params,
                        &mut rng,
                        scratch,
                    )
                })
                .collect::<Result<Vec<_>>>()
        })
        .collect::<Result<Vec<Vec<_>>>>()?
        .into_iter()
        .flatten()
        .collect();

    let temporal_change = match prev_grid {
        Some(p) if p.width == grid.width && p.height == grid.height && p.shape == grid.shape => (0..grid.len())
            .into_par_iter()
            .map(|k| MetricKind::Euclidean.distance(grid.values_at(k), p.values_at(k)) as f64)
            .collect::<Vec<_>>()
            .iter()
            .sum(),
        _ => 0.0,
    };

    let queries = results.len() as u64;
    let stats = FrameStats {
        frame_t: t,
        queries,
        total_rings: results.iter().map(|r| r.rings_drawn as u64).sum(),
        total_distance_evals: results.iter().map(|r| r.distance_evals as u64).sum(),
        mean_candidates: if queries == 0 {
            0.0
        } else {
            results.iter().map(|r| r.candidates_final as u64).sum::<u64>() as f64 / queries as f64
        },
        temporal_change,
    };
    let field = AnnField {
        width: grid.width,
        height: grid.height,
        indices: results.iter().map(|r| r.match_index).collect(),
        distances: results.iter().map(|r| r.match_distance).collect(),
        frame_t: t,
    };
    Ok((field, stats, results))
}

/// Extract, normalise and match one frame. `prev_frame`, when given, is used
/// only for the temporal-change statistic.
pub fn process_frame(
    frame: &Frame,
    prev_field: &AnnField,
    prev_frame: Option<&Frame>,
    model: &ReferenceModel,
    params: &SearchParams,
) -> Result<(AnnField, FrameStats)> {
    let grid = extract_patches(frame, model.shape, 1)?.normalized();
    let prev_grid = prev_frame.map(|f| extract_patches(f, model.shape, 1).map(PatchGrid::normalized)).transpose()?;
    let (field, stats, _) = process_grid(&grid, prev_field, prev_grid.as_ref(), model, params)?;
    Ok((field, stats))
}

/// Streaming driver that owns the current field and the previous frame's
/// normalised patches.
pub struct FieldStream<'m> {
    model: &'m ReferenceModel,
    params: SearchParams,
    field: AnnField,
    grid: Option<PatchGrid>,
}

impl<'m> FieldStream<'m> {
    /// Start from a random field sized for `frame_w × frame_h` frames.
    pub fn new(model: &'m ReferenceModel, params: SearchParams, frame_w: usize, frame_h: usize) -> Result<Self> {
        params.validate()?;
        let shape = model.shape;
        if frame_w < shape.width || frame_h < shape.height {
            return Err(Error::Dimension(format!(
                "frame {}x{} smaller than patch {}x{}",
                frame_w, frame_h, shape.width, shape.height
            )));
        }
        let field = init_field(frame_w - shape.width + 1, frame_h - shape.height + 1, model.n(), params.seed)?;
        Ok(FieldStream { model, params, field, grid: None })
    }

    /// Continue from an existing field.
    pub fn with_field(model: &'m ReferenceModel, params: SearchParams, field: AnnField) -> Result<Self> {
        params.validate()?;
        Ok(FieldStream { model, params, field, grid: None })
    }

    pub fn push(&mut self, frame: &Frame) -> Result<FrameStats> {
        let grid = extract_patches(frame, self.model.shape, 1)?.normalized();
        let (field, stats, _) = process_grid(&grid, &self.field, self.grid.as_ref(), self.model, &self.params)?;
        self.field = field;
        self.grid = Some(grid);
        Ok(stats)
    }

    pub fn field(&self) -> &AnnField {
        &self.field
    }

    /// Normalised patches of the most recent frame, with their original norms.
    pub fn grid(&self) -> Option<&PatchGrid> {
        self.grid.as_ref()
    }

    pub fn params(&self) -> &SearchParams {
        &self.params
    }

    pub fn model(&self) -> &ReferenceModel {
        self.model
    }
}
