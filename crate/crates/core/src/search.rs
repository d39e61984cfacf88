//! Query-sensitive ring-intersection search.
//!
//! For a query `q` whose predecessor matched reference `r_i`, the first ring
//! holds every reference whose distance to `r_i` lies within
//! `d_i ± alpha * d_i`, with `d_i = dist(q, r_i)`. While the candidate set has
//! at least `L` members, a random unused candidate `r_k` becomes the next
//! anchor and the set is intersected with its ring. The answer is the closest
//! survivor, with the predecessor itself always eligible.

use std::ops::Range;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::ReferenceModel;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct SearchParams {
    /// Ringing stops once fewer than this many candidates remain (`L`).
    pub max_candidates: usize,
    /// Ring half-width as a fraction of the ring radius.
    pub alpha: f32,
    /// Cap on rings per query, counting the first one.
    pub max_rings: usize,
    pub seed: u64,
}

impl Default for SearchParams {
    fn default() -> Self {
        SearchParams { max_candidates: 20, alpha: 0.25, max_rings: 8, seed: 0 }
    }
}

impl SearchParams {
    pub fn validate(&self) -> Result<()> {
        if self.max_candidates < 1 {
            return Err(Error::InvalidParam("L must be at least 1".into()));
        }
        if !(self.alpha > 0.0 && self.alpha < 1.0) {
            return Err(Error::InvalidParam(format!("alpha must lie in (0, 1), got {}", self.alpha)));
        }
        if self.max_rings < 1 {
            return Err(Error::InvalidParam("max_rings must be at least 1".into()));
        }
        Ok(())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct QueryResult {
    pub match_index: u32,
    pub match_distance: f32,
    pub rings_drawn: u32,
    pub distance_evals: u32,
    pub candidates_final: u32,
}

/// Positions `[lo, hi)` of the anchor's sorted row whose distances fall in
/// `[d - eps, d + eps]`.
#[inline]
pub fn ring_window(model: &ReferenceModel, anchor: usize, d: f32, eps: f32) -> Result<Range<usize>> {
    if anchor >= model.n() {
        return Err(Error::IndexOutOfRange { index: anchor, n: model.n() });
    }
    Ok(ring_window_unchecked(model, anchor, d, eps))
}

#[inline]
fn ring_window_unchecked(model: &ReferenceModel, anchor: usize, d: f32, eps: f32) -> Range<usize> {
    let (dist, _) = model.sorted_row(anchor);
    let (lo, hi) = (d - eps, d + eps);
    let start = dist.partition_point(|&x| x < lo);
    let end = start + dist[start..].partition_point(|&x| x <= hi);
    start..end
}

/// References whose distance to `anchor` lies in `[d - eps, d + eps]`, as a
/// contiguous slice of the anchor's sorted index row.
pub fn ring_candidates(model: &ReferenceModel, anchor: usize, d: f32, eps: f32) -> Result<&[u32]> {
    let w = ring_window(model, anchor, d, eps)?;
    Ok(&model.sorted_row(anchor).1[w])
}

/// Reusable per-thread buffers for [`riann_query_with`].
#[derive(Clone, Debug, Default)]
pub struct QueryScratch {
    stamp: Vec<u32>,
    epoch: u32,
    set: Vec<u32>,
    next: Vec<u32>,
    anchors: Vec<(u32, f32)>,
}

impl QueryScratch {
    pub fn new() -> Self {
        Self::default()
    }

    /// The candidate set left by the most recent query.
    pub fn candidates(&self) -> &[u32] {
        &self.set
    }

    fn bump(&mut self, n: usize) -> u32 {
        if self.stamp.len() != n {
            self.stamp.clear();
            self.stamp.resize(n, 0);
            self.epoch = 0;
        }
        self.epoch = self.epoch.wrapping_add(1);
        if self.epoch == 0 {
            self.stamp.iter_mut().for_each(|s| *s = 0);
            self.epoch = 1;
        }
        self.epoch
    }
}

/// Deterministic per-query generator derived from `(seed, x, y, t)`, so that
/// fields do not depend on the order queries are executed in.
pub fn query_rng(seed: u64, x: usize, y: usize, t: u64) -> ChaCha8Rng {
    let mut h = splitmix(seed ^ 0x5249_414e_4e00_0000);
    h = splitmix(h ^ x as u64);
    h = splitmix(h ^ ((y as u64) << 1));
    h = splitmix(h ^ (t << 2));
    ChaCha8Rng::seed_from_u64(h)
}

#[inline]
fn splitmix(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// Single ring-intersection query. Allocates scratch; prefer
/// [`riann_query_with`] in loops.
pub fn riann_query<R: Rng + ?Sized>(
    model: &ReferenceModel,
    query: &[f32],
    prev_index: usize,
    params: &SearchParams,
    rng: &mut R,
) -> Result<QueryResult> {
    riann_query_with(model, query, prev_index, params, rng, &mut QueryScratch::new())
}

pub fn riann_query_with<R: Rng + ?Sized>(
    model: &ReferenceModel,
    query: &[f32],
    prev_index: usize,
    params: &SearchParams,
    rng: &mut R,
    scratch: &mut QueryScratch,
) -> Result<QueryResult> {
    let n = model.n();
    if prev_index >= n {
        return Err(Error::IndexOutOfRange { index: prev_index, n });
    }
    if query.len() != model.dim() {
        return Err(Error::Dimension(format!("query of length {} for model dimension {}", query.len(), model.dim())));
    }
    let alpha = params.alpha;
    let limit = params.max_candidates;

    let d_prev = model.distance_to(query, prev_index);
    let mut evals = 1u32;
    scratch.anchors.clear();
    scratch.anchors.push((prev_index as u32, d_prev));

    let w = ring_window_unchecked(model, prev_index, d_prev, alpha * d_prev);
    scratch.set.clear();
    scratch.set.extend_from_slice(&model.sorted_row(prev_index).1[w]);
    let mut rings = 1u32;

    while scratch.set.len() >= limit && (rings as usize) < params.max_rings {
        let unused = scratch.set.len() - scratch.set.iter().filter(|&&s| is_anchor(&scratch.anchors, s)).count();
        if unused == 0 {
            break;
        }
        let pick = rng.gen_range(0..unused as u32) as usize;
        let anchor =
            scratch.set.iter().copied().filter(|&s| !is_anchor(&scratch.anchors, s)).nth(pick).expect("pick < unused");
        let d_k = model.distance_to(query, anchor as usize);
        evals += 1;
        scratch.anchors.push((anchor, d_k));
        rings += 1;

        let w = ring_window_unchecked(model, anchor as usize, d_k, alpha * d_k);
        let epoch = scratch.bump(n);
        for &j in &model.sorted_row(anchor as usize).1[w] {
            scratch.stamp[j as usize] = epoch;
        }
        scratch.next.clear();
        let stamp = &scratch.stamp;
        scratch.next.extend(scratch.set.iter().copied().filter(|&s| stamp[s as usize] == epoch));
        if scratch.next.is_empty() {
            // keep the last nonempty set and stop ringing
            break;
        }
        std::mem::swap(&mut scratch.set, &mut scratch.next);
    }

    let mut best = (d_prev, prev_index as u32);
    for &s in &scratch.set {
        let d = match scratch.anchors.iter().find(|a| a.0 == s) {
            Some(&(_, d)) => d,
            None => {
                evals += 1;
                model.distance_to(query, s as usize)
            }
        };
        if d < best.0 || (d == best.0 && s < best.1) {
            best = (d, s);
        }
    }
    Ok(QueryResult {
        match_index: best.1,
        match_distance: best.0,
        rings_drawn: rings,
        distance_evals: evals,
        candidates_final: scratch.set.len() as u32,
    })
}

#[inline]
fn is_anchor(anchors: &[(u32, f32)], s: u32) -> bool {
    anchors.iter().any(|a| a.0 == s)
}
