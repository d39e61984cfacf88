//! Reference dictionary construction.
//!
//! A model is built by clustering a large pool of raw patches with a binary
//! median-split tree, taking the element-wise median of each leaf as its
//! representative, normalising, and finally precomputing for every reference
//! its distances to all others in ascending order. The sorted rows are what
//! make a ring query two binary searches.

use std::cmp::Reverse;
use std::collections::BinaryHeap;
use std::time::{Duration, Instant};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::patch::{extract_patches, normalize_in_place, Frame, Metric, MetricKind, Patch, PatchShape};

/// Default upper bound (exclusive) on the number of references a builder accepts.
pub const DEFAULT_MAX_REFS: usize = 20_000;

/// Representatives closer than this are considered duplicates.
pub const DEDUP_DISTANCE: f32 = 1e-9;

#[derive(Clone, Debug, PartialEq)]
enum Node {
    Leaf(Vec<usize>),
    Split { dim: usize, threshold: f32, left: usize, right: usize },
}

/// Binary median-split tree over a point set. Leaves partition the input
/// indices.
#[derive(Clone, Debug, PartialEq)]
pub struct ClusterTree {
    nodes: Vec<Node>,
    len: usize,
}

impl ClusterTree {
    /// Split the currently largest leaf on its maximum-variance dimension at
    /// the lower median until `target_leaves` leaves exist or no leaf can be
    /// split (all members identical). Members `<= threshold` go left.
    ///
    /// `data` holds `data.len() / dim` points, row-major.
    pub fn build(data: &[f32], dim: usize, target_leaves: usize) -> Result<Self> {
        if dim == 0 || data.is_empty() {
            return Err(Error::EmptyInput("cluster tree needs at least one point"));
        }
        if !data.len().is_multiple_of(dim) {
            return Err(Error::Dimension(format!("{} samples is not a multiple of dimension {}", data.len(), dim)));
        }
        if target_leaves == 0 {
            return Err(Error::InvalidParam("target_leaves must be at least 1".into()));
        }
        let len = data.len() / dim;
        let mut nodes = vec![Node::Leaf((0..len).collect())];
        // (size, creation order) so equal-sized leaves split oldest first
        let mut heap = BinaryHeap::new();
        heap.push((len, Reverse(0usize)));
        let mut leaves = 1;

        while leaves < target_leaves {
            let Some((_, Reverse(id))) = heap.pop() else { break };
            let Node::Leaf(members) = &nodes[id] else { unreachable!() };
            if members.len() < 2 {
                continue;
            }
            let Some((split_dim, threshold)) = choose_split(data, dim, members) else {
                continue;
            };
            let (left, right): (Vec<usize>, Vec<usize>) =
                members.iter().partition(|&&m| data[m * dim + split_dim] <= threshold);
            debug_assert!(!left.is_empty() && !right.is_empty());
            let (l, r) = (nodes.len(), nodes.len() + 1);
            heap.push((left.len(), Reverse(l)));
            heap.push((right.len(), Reverse(r)));
            nodes.push(Node::Leaf(left));
            nodes.push(Node::Leaf(right));
            nodes[id] = Node::Split { dim: split_dim, threshold, left: l, right: r };
            leaves += 1;
        }
        Ok(ClusterTree { nodes, len })
    }

    /// Number of points the tree was built over.
    pub fn len(&self) -> usize {
        self.len
    }

    pub fn is_empty(&self) -> bool {
        self.len == 0
    }

    /// Leaf member lists, left to right.
    pub fn leaves(&self) -> Vec<&[usize]> {
        let mut out = Vec::new();
        let mut stack = vec![0usize];
        while let Some(id) = stack.pop() {
            match &self.nodes[id] {
                Node::Leaf(m) => out.push(m.as_slice()),
                Node::Split { left, right, .. } => {
                    stack.push(*right);
                    stack.push(*left);
                }
            }
        }
        out
    }

    pub fn leaf_count(&self) -> usize {
        self.nodes.iter().filter(|n| matches!(n, Node::Leaf(_))).count()
    }

    /// Descend the tree with `point` and return the ordinal of the leaf it lands in.
    pub fn locate(&self, point: &[f32]) -> usize {
        let mut id = 0;
        while let Node::Split { dim, threshold, left, right } = &self.nodes[id] {
            id = if point[*dim] <= *threshold { *left } else { *right };
        }
        // ordinal in left-to-right order
        let mut ordinal = 0;
        let mut stack = vec![0usize];
        while let Some(n) = stack.pop() {
            match &self.nodes[n] {
                Node::Leaf(_) if n == id => return ordinal,
                Node::Leaf(_) => ordinal += 1,
                Node::Split { left, right, .. } => {
                    stack.push(*right);
                    stack.push(*left);
                }
            }
        }
        unreachable!("leaf reachable by descent is reachable by traversal")
    }
}

fn choose_split(data: &[f32], dim: usize, members: &[usize]) -> Option<(usize, f32)> {
    let m = members.len() as f64;
    let mut sum = vec![0f64; dim];
    let mut sum_sq = vec![0f64; dim];
    let mut lo = vec![f32::INFINITY; dim];
    let mut hi = vec![f32::NEG_INFINITY; dim];
    for &i in members {
        let row = &data[i * dim..(i + 1) * dim];
        for (d, &v) in row.iter().enumerate() {
            sum[d] += v as f64;
            sum_sq[d] += (v as f64) * (v as f64);
            lo[d] = lo[d].min(v);
            hi[d] = hi[d].max(v);
        }
    }
    // only axes with an actual spread qualify; variance alone can be a
    // rounding artefact on a constant column
    let mut best: Option<(usize, f64)> = None;
    for d in 0..dim {
        if lo[d] >= hi[d] {
            continue;
        }
        let mean = sum[d] / m;
        let var = (sum_sq[d] / m - mean * mean).max(0.0);
        if best.is_none_or(|(_, v)| var > v) {
            best = Some((d, var));
        }
    }
    let split_dim = best?.0;
    let mut column: Vec<f32> = members.iter().map(|&i| data[i * dim + split_dim]).collect();
    let median = lower_median(&mut column);
    if median < hi[split_dim] {
        return Some((split_dim, median));
    }
    // The lower median is the column maximum: move the split below it.
    let below = column.iter().copied().filter(|&v| v < median).fold(f32::NEG_INFINITY, f32::max);
    Some((split_dim, below))
}

/// Lower median: for even counts the smaller of the two middle values.
/// Reorders `values`.
pub fn lower_median(values: &mut [f32]) -> f32 {
    assert!(!values.is_empty());
    let k = (values.len() - 1) / 2;
    let (_, v, _) = values.select_nth_unstable_by(k, f32::total_cmp);
    *v
}

/// Build a cluster tree over patches (their current values).
pub fn build_cluster_tree(patches: &[Patch], target_leaves: usize) -> Result<ClusterTree> {
    let Some(first) = patches.first() else {
        return Err(Error::EmptyInput("cluster tree needs at least one patch"));
    };
    let dim = first.dim();
    let mut data = Vec::with_capacity(patches.len() * dim);
    for p in patches {
        if p.dim() != dim {
            return Err(Error::Dimension("patches of mixed dimension".into()));
        }
        data.extend_from_slice(&p.values);
    }
    ClusterTree::build(&data, dim, target_leaves)
}

/// Element-wise lower median of the given rows.
pub fn elementwise_median(data: &[f32], dim: usize, members: &[usize]) -> Vec<f32> {
    let mut column = vec![0f32; members.len()];
    (0..dim)
        .map(|d| {
            for (slot, &m) in column.iter_mut().zip(members) {
                *slot = data[m * dim + d];
            }
            lower_median(&mut column)
        })
        .collect()
}

/// One normalised representative per leaf, in leaf order. Degenerate
/// medians come back as zero patches with `norm == 0`.
pub fn cluster_representatives(tree: &ClusterTree, patches: &[Patch]) -> Vec<Patch> {
    let dim = patches.first().map_or(0, Patch::dim);
    let data: Vec<f32> = patches.iter().flat_map(|p| p.values.iter().copied()).collect();
    representatives_flat(tree, &data, dim)
}

fn representatives_flat(tree: &ClusterTree, data: &[f32], dim: usize) -> Vec<Patch> {
    tree.leaves()
        .par_iter()
        .map(|members| {
            let mut values = elementwise_median(data, dim, members);
            let norm = normalize_in_place(&mut values);
            Patch { values, norm }
        })
        .collect()
}

/// For each reference, all distances in ascending order with the matching
/// reference indices. Row `i` always starts with `(0, i)`; the remaining
/// entries are ordered by distance, then by index.
pub fn compute_sorted_lists<M: Metric + ?Sized>(refs: &[f32], dim: usize, metric: &M) -> (Vec<f32>, Vec<u32>) {
    let n = refs.len() / dim;
    let mut sorted_dist = vec![0f32; n * n];
    let mut sorted_idx = vec![0u32; n * n];
    sorted_dist.par_chunks_mut(n.max(1)).zip(sorted_idx.par_chunks_mut(n.max(1))).enumerate().for_each_init(
        || Vec::with_capacity(n),
        |row, (i, (dist_row, idx_row))| {
            let ri = &refs[i * dim..(i + 1) * dim];
            row.clear();
            row.extend((0..n).map(|j| {
                let d = if j == i { 0.0 } else { metric.distance(ri, &refs[j * dim..(j + 1) * dim]) };
                (d, j as u32)
            }));
            row.sort_unstable_by(|a, b| {
                let self_a = a.1 as usize != i;
                let self_b = b.1 as usize != i;
                self_a.cmp(&self_b).then(a.0.total_cmp(&b.0)).then(a.1.cmp(&b.1))
            });
            for (p, &(d, j)) in row.iter().enumerate() {
                dist_row[p] = d;
                idx_row[p] = j;
            }
        },
    );
    (sorted_dist, sorted_idx)
}

/// The fixed reference dictionary: `n` unit-norm patches and, per reference,
/// the ascending list of distances to every reference.
#[derive(Clone, Debug, PartialEq)]
pub struct ReferenceModel {
    pub shape: PatchShape,
    pub metric: MetricKind,
    n: usize,
    refs: Vec<f32>,
    sorted_dist: Vec<f32>,
    sorted_idx: Vec<u32>,
}

impl ReferenceModel {
    /// Build from candidate reference vectors. Each candidate is normalised;
    /// zero candidates are dropped and near-duplicates (distance below
    /// [`DEDUP_DISTANCE`]) collapse onto the lowest-index survivor.
    pub fn from_candidates(shape: PatchShape, metric: MetricKind, candidates: &[Vec<f32>]) -> Result<Self> {
        Ok(assemble(shape, metric, candidates, DEFAULT_MAX_REFS)?.0)
    }

    /// Reassemble from already-validated parts, as read from a model file.
    pub(crate) fn from_parts(
        shape: PatchShape,
        metric: MetricKind,
        n: usize,
        refs: Vec<f32>,
        sorted_dist: Vec<f32>,
        sorted_idx: Vec<u32>,
    ) -> Self {
        ReferenceModel { shape, metric, n, refs, sorted_dist, sorted_idx }
    }

    #[inline]
    pub fn n(&self) -> usize {
        self.n
    }

    #[inline]
    pub fn dim(&self) -> usize {
        self.shape.dim()
    }

    #[inline]
    pub fn reference(&self, i: usize) -> &[f32] {
        let d = self.dim();
        &self.refs[i * d..(i + 1) * d]
    }

    pub fn references(&self) -> &[f32] {
        &self.refs
    }

    #[inline]
    pub fn sorted_row(&self, i: usize) -> (&[f32], &[u32]) {
        let n = self.n;
        (&self.sorted_dist[i * n..(i + 1) * n], &self.sorted_idx[i * n..(i + 1) * n])
    }

    pub fn sorted_dist(&self) -> &[f32] {
        &self.sorted_dist
    }

    pub fn sorted_idx(&self) -> &[u32] {
        &self.sorted_idx
    }

    /// Distance between a query vector and reference `i` under the model metric.
    #[inline]
    pub fn distance_to(&self, query: &[f32], i: usize) -> f32 {
        self.metric.distance(query, self.reference(i))
    }

    /// Distance between references `i` and `j`.
    pub fn metric_distance(&self, i: usize, j: usize) -> f32 {
        self.distance_to(self.reference(i), j)
    }

    /// Bytes used by the sorted distance structure.
    pub fn sorted_bytes(&self) -> u64 {
        sorted_bytes(self.n)
    }
}

pub fn sorted_bytes(n: usize) -> u64 {
    (n as u64) * (n as u64) * 8
}

/// Result of [`assemble`]: the model and, for each reference, the candidate
/// indices it absorbed (itself first).
type Assembled = (ReferenceModel, Vec<Vec<usize>>);

fn assemble(shape: PatchShape, metric: MetricKind, candidates: &[Vec<f32>], cap: usize) -> Result<Assembled> {
    let dim = shape.dim();
    let mut kept: Vec<usize> = Vec::with_capacity(candidates.len());
    let mut refs = Vec::with_capacity(candidates.len() * dim);
    for (c, values) in candidates.iter().enumerate() {
        if values.len() != dim {
            return Err(Error::Dimension(format!("candidate of length {} for patch dimension {}", values.len(), dim)));
        }
        let mut v = values.clone();
        if normalize_in_place(&mut v) == 0.0 {
            continue;
        }
        kept.push(c);
        refs.extend_from_slice(&v);
    }
    if kept.is_empty() {
        return Err(Error::NoUsableReferences);
    }
    check_cap(kept.len(), cap)?;

    let (mut sorted_dist, mut sorted_idx) = compute_sorted_lists(&refs, dim, &metric);
    let mut n = kept.len();

    // Greedy dedup in index order: i is dropped if a surviving j < i is within DEDUP_DISTANCE.
    let mut owner: Vec<usize> = (0..n).collect();
    let mut any_dup = false;
    for i in 0..n {
        let row = i * n;
        for p in 1..n {
            if sorted_dist[row + p] >= DEDUP_DISTANCE {
                break;
            }
            let j = sorted_idx[row + p] as usize;
            if j < i && owner[j] == j {
                owner[i] = j;
                any_dup = true;
                break;
            }
        }
    }
    let mut absorbed: Vec<Vec<usize>> = vec![Vec::new(); n];
    for i in 0..n {
        absorbed[owner[i]].push(kept[i]);
    }
    if any_dup {
        let survivors: Vec<usize> = (0..n).filter(|&i| owner[i] == i).collect();
        let mut remap = vec![u32::MAX; n];
        for (new, &old) in survivors.iter().enumerate() {
            remap[old] = new as u32;
        }
        let m = survivors.len();
        let mut new_refs = Vec::with_capacity(m * dim);
        let mut new_dist = Vec::with_capacity(m * m);
        let mut new_idx = Vec::with_capacity(m * m);
        for &old in &survivors {
            new_refs.extend_from_slice(&refs[old * dim..(old + 1) * dim]);
            for p in 0..n {
                let j = sorted_idx[old * n + p] as usize;
                if remap[j] != u32::MAX {
                    new_dist.push(sorted_dist[old * n + p]);
                    new_idx.push(remap[j]);
                }
            }
        }
        absorbed = survivors.iter().map(|&old| std::mem::take(&mut absorbed[old])).collect();
        refs = new_refs;
        sorted_dist = new_dist;
        sorted_idx = new_idx;
        n = m;
    }
    let model = ReferenceModel { shape, metric, n, refs, sorted_dist, sorted_idx };
    Ok((model, absorbed))
}

fn check_cap(n: usize, cap: usize) -> Result<()> {
    if n >= cap {
        return Err(Error::ModelTooLarge { requested: n, cap, bytes: sorted_bytes(n) });
    }
    Ok(())
}

/// Where the raw patch pool comes from.
#[derive(Clone, Copy, Debug)]
pub enum ModelSource<'a> {
    /// Every patch of one frame of the target video.
    Local(&'a Frame),
    /// Every patch of one frame chosen uniformly at random (by seed) from a clip.
    RandomFrame(&'a [Frame]),
    /// `raw_patches` windows sampled uniformly at random from a set of images.
    Global { images: &'a [Frame], raw_patches: usize },
}

#[derive(Clone, Debug)]
pub struct ModelConfig {
    pub model_size: usize,
    pub shape: PatchShape,
    pub metric: MetricKind,
    pub seed: u64,
    /// Exclusive upper bound on the model size.
    pub max_refs: usize,
}

impl Default for ModelConfig {
    fn default() -> Self {
        ModelConfig {
            model_size: 900,
            shape: PatchShape::default(),
            metric: MetricKind::Euclidean,
            seed: 0,
            max_refs: DEFAULT_MAX_REFS,
        }
    }
}

/// A built model plus provenance needed for effect tables.
#[derive(Clone, Debug)]
pub struct ModelBuild {
    pub model: ReferenceModel,
    /// For locally built models, the source-frame patch positions (row-major
    /// grid indices, stride 1) whose cluster each reference represents.
    pub membership: Option<Vec<Vec<usize>>>,
    /// Index of the source frame within a clip, for [`ModelSource::RandomFrame`].
    pub source_frame: Option<usize>,
    pub build_time: Duration,
}

/// Extract → cluster → representatives → sorted lists.
pub fn build_model(source: ModelSource<'_>, config: &ModelConfig) -> Result<ModelBuild> {
    let started = Instant::now();
    if config.model_size == 0 {
        return Err(Error::InvalidParam("model_size must be at least 1".into()));
    }
    check_cap(config.model_size, config.max_refs)?;
    let dim = config.shape.dim();
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);

    let (pool, local, source_frame) = match source {
        ModelSource::Local(frame) => (extract_patches(frame, config.shape, 1)?.values, true, None),
        ModelSource::RandomFrame(frames) => {
            if frames.is_empty() {
                return Err(Error::EmptyInput("no frames to pick a local source from"));
            }
            let k = rng.gen_range(0..frames.len() as u32) as usize;
            (extract_patches(&frames[k], config.shape, 1)?.values, true, Some(k))
        }
        ModelSource::Global { images, raw_patches } => {
            (sample_patches(images, config.shape, raw_patches, &mut rng)?, false, None)
        }
    };
    if pool.is_empty() {
        return Err(Error::EmptyInput("source yielded no patches"));
    }

    let tree = ClusterTree::build(&pool, dim, config.model_size)?;
    let reps = representatives_flat(&tree, &pool, dim);
    let candidates: Vec<Vec<f32>> = reps.into_iter().map(|p| p.values).collect();
    let (model, absorbed) = assemble(config.shape, config.metric, &candidates, config.max_refs)?;

    let membership = local.then(|| {
        let leaves = tree.leaves();
        absorbed
            .iter()
            .map(|cands| {
                let mut m: Vec<usize> = cands.iter().flat_map(|&c| leaves[c].iter().copied()).collect();
                m.sort_unstable();
                m
            })
            .collect()
    });
    Ok(ModelBuild { model, membership, source_frame, build_time: started.elapsed() })
}

/// Uniformly sample windows: image first, then top-left corner.
fn sample_patches(images: &[Frame], shape: PatchShape, count: usize, rng: &mut ChaCha8Rng) -> Result<Vec<f32>> {
    let usable: Vec<&Frame> = images.iter().filter(|f| f.width >= shape.width && f.height >= shape.height).collect();
    if usable.is_empty() {
        return Err(Error::EmptyInput("no image is large enough for the patch size"));
    }
    let mut out = Vec::with_capacity(count * shape.dim());
    for _ in 0..count {
        let f = usable[rng.gen_range(0..usable.len() as u32) as usize];
        let x0 = rng.gen_range(0..=(f.width - shape.width) as u32) as usize;
        let y0 = rng.gen_range(0..=(f.height - shape.height) as u32) as usize;
        for py in 0..shape.height {
            let row = (y0 + py) * f.width + x0;
            out.extend_from_slice(&f.data[row..row + shape.width]);
        }
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::patch::{euclidean, l2_norm};
    use crate::synth;

    fn pts(v: &[[f32; 2]]) -> Vec<Patch> {
        v.iter().map(|p| Patch::new(p.to_vec())).collect()
    }

    #[test]
    fn tree_splits_on_max_variance_axis() {
        let p = pts(&[[0.0, 0.0], [0.0, 1.0], [10.0, 0.0], [10.0, 1.0]]);
        let tree = build_cluster_tree(&p, 2).unwrap();
        let leaves = tree.leaves();
        assert_eq!(leaves, vec![&[0usize, 1][..], &[2, 3][..]]);
        assert_eq!(tree.locate(&[0.0, 0.5]), 0);
        assert_eq!(tree.locate(&[9.0, 0.5]), 1);
    }

    #[test]
    fn tree_full_and_no_split() {
        let p = pts(&[[0.0, 3.0], [1.0, 2.0], [5.0, 0.0], [2.0, 7.0], [9.0, 9.0]]);
        let full = build_cluster_tree(&p, 5).unwrap();
        assert_eq!(full.leaf_count(), 5);
        assert!(full.leaves().iter().all(|l| l.len() == 1));
        let one = build_cluster_tree(&p, 1).unwrap();
        assert_eq!(one.leaves(), vec![&[0usize, 1, 2, 3, 4][..]]);
        assert!(build_cluster_tree(&[], 1).is_err());
    }

    #[test]
    fn tree_stops_on_identical_points() {
        let p = pts(&[[1.0, 1.0]; 6]);
        let tree = build_cluster_tree(&p, 4).unwrap();
        assert_eq!(tree.leaf_count(), 1);
    }

    #[test]
    fn tree_handles_median_at_maximum() {
        // lower median of [0,1,1,1] is 1 = max; split must still separate
        let p = pts(&[[0.0, 0.0], [1.0, 0.0], [1.0, 0.0], [1.0, 0.0]]);
        let tree = build_cluster_tree(&p, 2).unwrap();
        assert_eq!(tree.leaves(), vec![&[0usize][..], &[1, 2, 3][..]]);
    }

    #[test]
    fn leaves_partition_input() {
        let frame = synth::TexturedScene::new(5).render(40, 40, 0.0, 0.0);
        let grid = extract_patches(&frame, PatchShape::square(8), 1).unwrap();
        for target in [1, 7, 100, 2000] {
            let tree = ClusterTree::build(&grid.values, 64, target).unwrap();
            let mut all: Vec<usize> = tree.leaves().concat();
            all.sort_unstable();
            assert_eq!(all, (0..grid.len()).collect::<Vec<_>>());
            assert_eq!(tree.leaf_count(), target.min(grid.len()));
        }
    }

    #[test]
    fn representative_examples() {
        let p = pts(&[[0.0, 2.0], [0.0, 4.0], [0.0, 6.0]]);
        let tree = build_cluster_tree(&p, 1).unwrap();
        let reps = cluster_representatives(&tree, &p);
        assert_eq!(reps[0].values, vec![0.0, 1.0]);
        assert_eq!(reps[0].norm, 4.0);

        let p = pts(&[[3.0, 4.0]]);
        let tree = build_cluster_tree(&p, 1).unwrap();
        let reps = cluster_representatives(&tree, &p);
        assert!((reps[0].values[0] - 0.6).abs() < 1e-7);

        let p = pts(&[[1.0, 0.0], [0.0, 1.0]]);
        let tree = build_cluster_tree(&p, 1).unwrap();
        let reps = cluster_representatives(&tree, &p);
        assert!(reps[0].is_zero());
        assert_eq!(reps[0].norm, 0.0);
    }

    #[test]
    fn sorted_lists_example() {
        let h = std::f32::consts::FRAC_1_SQRT_2;
        let refs = [1.0, 0.0, 0.0, 1.0, h, h];
        let (d, i) = compute_sorted_lists(&refs, 2, &MetricKind::Euclidean);
        assert_eq!(&i[0..3], &[0, 2, 1]);
        assert_eq!(d[0], 0.0);
        assert!((d[1] - 0.765_367).abs() < 1e-6);
        assert!((d[2] - std::f32::consts::SQRT_2).abs() < 1e-6);
        for r in 0..3 {
            assert_eq!((d[r * 3], i[r * 3]), (0.0, r as u32));
        }

        let (d, i) = compute_sorted_lists(&[0.3, 0.4], 2, &MetricKind::Euclidean);
        assert_eq!((d, i), (vec![0.0], vec![0]));
    }

    #[test]
    fn self_entry_precedes_zero_distance_duplicates() {
        let refs = [1.0, 0.0, 1.0, 0.0, 0.0, 1.0];
        let (d, i) = compute_sorted_lists(&refs, 2, &MetricKind::Euclidean);
        assert_eq!(&i[3..6], &[1, 0, 2]);
        assert_eq!(&d[3..5], &[0.0, 0.0]);
    }

    #[test]
    fn sorted_rows_match_brute_force() {
        let mut rng = ChaCha8Rng::seed_from_u64(17);
        for trial in 0..20 {
            let n = rng.gen_range(1..=120);
            let dim = rng.gen_range(1..=32);
            let refs: Vec<f32> = (0..n * dim).map(|_| rng.gen_range(0.0..1.0)).collect();
            let (d, idx) = compute_sorted_lists(&refs, dim, &MetricKind::Euclidean);
            for i in 0..n {
                let mut brute: Vec<f32> =
                    (0..n).map(|j| euclidean(&refs[i * dim..(i + 1) * dim], &refs[j * dim..(j + 1) * dim])).collect();
                for p in 0..n {
                    let j = idx[i * n + p] as usize;
                    assert_eq!(d[i * n + p], brute[j], "trial {trial} row {i}");
                }
                assert!(d[i * n..(i + 1) * n].windows(2).all(|w| w[0] <= w[1]));
                let mut row = d[i * n..(i + 1) * n].to_vec();
                brute.sort_by(f32::total_cmp);
                row.sort_by(f32::total_cmp);
                assert_eq!(row, brute);
            }
        }
    }

    #[test]
    fn constant_frame_gives_single_reference() {
        let f = Frame::filled(16, 16, 0.4);
        for size in [1, 10, 81] {
            let cfg = ModelConfig { model_size: size, ..Default::default() };
            let b = build_model(ModelSource::Local(&f), &cfg).unwrap();
            assert_eq!(b.model.n(), 1);
            assert_eq!(b.membership.unwrap()[0].len(), 81);
        }
        let black = Frame::filled(16, 16, 0.0);
        let r = build_model(ModelSource::Local(&black), &ModelConfig::default());
        assert!(matches!(r, Err(Error::NoUsableReferences)));
    }

    #[test]
    fn model_is_deterministic_and_unit_norm() {
        let f = synth::TexturedScene::new(2).render(48, 48, 0.0, 0.0);
        let cfg = ModelConfig { model_size: 300, seed: 7, ..Default::default() };
        let a = build_model(ModelSource::Local(&f), &cfg).unwrap();
        let b = build_model(ModelSource::Local(&f), &cfg).unwrap();
        assert_eq!(a.model, b.model);
        assert!(a.model.n() <= 300 && a.model.n() > 250);
        for i in 0..a.model.n() {
            assert!((l2_norm(a.model.reference(i)) - 1.0).abs() < 1e-6);
        }
        let members: usize = a.membership.as_ref().unwrap().iter().map(Vec::len).sum();
        assert_eq!(members, 41 * 41);
    }

    #[test]
    fn global_model_is_seeded() {
        let imgs: Vec<Frame> = (0..3).map(|s| synth::TexturedScene::new(s).render(40, 30, 0.0, 0.0)).collect();
        let cfg = ModelConfig { model_size: 100, seed: 1, ..Default::default() };
        let src = ModelSource::Global { images: &imgs, raw_patches: 1500 };
        let a = build_model(src, &cfg).unwrap();
        let b = build_model(src, &cfg).unwrap();
        assert_eq!(a.model, b.model);
        assert!(a.membership.is_none());
        let c = build_model(src, &ModelConfig { seed: 2, ..cfg }).unwrap();
        assert_ne!(a.model, c.model);
    }

    #[test]
    fn random_frame_source_records_choice() {
        let frames: Vec<Frame> = (0..4).map(|s| synth::TexturedScene::new(s).render(24, 24, 0.0, 0.0)).collect();
        let cfg = ModelConfig { model_size: 50, seed: 3, ..Default::default() };
        let b = build_model(ModelSource::RandomFrame(&frames), &cfg).unwrap();
        let k = b.source_frame.unwrap();
        let direct = build_model(ModelSource::Local(&frames[k]), &cfg).unwrap();
        assert_eq!(b.model, direct.model);
    }

    #[test]
    fn duplicates_collapse_to_lowest_index() {
        let shape = PatchShape::new(2, 1);
        let cands = vec![vec![0.0, 2.0], vec![1.0, 0.0], vec![0.0, 5.0], vec![0.0, 0.0], vec![3.0, 0.0]];
        let (m, absorbed) = assemble(shape, MetricKind::Euclidean, &cands, DEFAULT_MAX_REFS).unwrap();
        assert_eq!(m.n(), 2);
        assert_eq!(m.reference(0), &[0.0, 1.0]);
        assert_eq!(m.reference(1), &[1.0, 0.0]);
        assert_eq!(absorbed, vec![vec![0, 2], vec![1, 4]]);
        assert_eq!(m.sorted_row(1).1, &[1, 0]);
    }

    #[test]
    fn cap_refuses_large_models() {
        let f = Frame::filled(16, 16, 0.4);
        let cfg = ModelConfig { model_size: 20_000, ..Default::default() };
        match build_model(ModelSource::Local(&f), &cfg) {
            Err(Error::ModelTooLarge { requested, cap, .. }) => assert_eq!((requested, cap), (20_000, 20_000)),
            other => panic!("expected refusal, got {other:?}"),
        }
        let cfg = ModelConfig { model_size: 50, max_refs: 10, ..Default::default() };
        assert!(matches!(build_model(ModelSource::Local(&f), &cfg), Err(Error::ModelTooLarge { .. })));
    }
}
