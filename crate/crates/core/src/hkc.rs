//! Hierarchical k-means codes over entity embeddings.
//!
//! Embeddings are L2-normalized, then clustered recursively. A node with at
//! most `k` members, or one at `max_depth`, is a leaf. An entity's code is its
//! path of 1-based child indices followed by its rank inside the leaf
//! (ascending entity id), written in base `k` when the leaf is over-full.
//! Codes are right-padded with `k + 1` to a common length.

use rand::Rng as _;
use rayon::prelude::*;

use crate::codebook::{Code, CodeBook, CodeEntry, CodeParams, Scheme};
use crate::embedding::{l2_normalized, EmbeddingMatrix};
use crate::error::{Error, Result};
use crate::seed;
use crate::tokenizer::TokenValue;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct KMeansParams {
    pub k: usize,
    pub max_iters: usize,
    /// Stop once no centroid moves by more than this (L2).
    pub tol: f64,
    pub seed: u64,
}

impl KMeansParams {
    pub fn new(k: usize, seed: u64) -> Self {
        Self {
            k,
            max_iters: 100,
            tol: 1e-4,
            seed,
        }
    }
}

#[derive(Debug, Clone)]
pub struct KMeans {
    pub k: usize,
    pub dim: usize,
    /// `k * dim`, row-major.
    pub centroids: Vec<f64>,
    pub assignments: Vec<usize>,
    /// Inertia after every assignment step, final one last.
    pub inertia_history: Vec<f64>,
    pub iterations: usize,
}

impl KMeans {
    pub fn centroid(&self, c: usize) -> &[f64] {
        &self.centroids[c * self.dim..(c + 1) * self.dim]
    }

    pub fn inertia(&self) -> f64 {
        self.inertia_history.last().copied().unwrap_or(0.0)
    }
}

fn sq_dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

fn nearest(point: &[f64], centroids: &[f64], dim: usize) -> (usize, f64) {
    let mut best = (0, f64::INFINITY);
    for (c, centroid) in centroids.chunks_exact(dim).enumerate() {
        let d = sq_dist(point, centroid);
        if d < best.1 {
            best = (c, d);
        }
    }
    best
}

fn kmeans_plus_plus(points: &[f64], dim: usize, k: usize, rng: &mut seed::Rng) -> Vec<f64> {
    let n = points.len() / dim;
    let row = |i: usize| &points[i * dim..(i + 1) * dim];
    let mut centroids = Vec::with_capacity(k * dim);
    centroids.extend_from_slice(row(rng.random_range(0..n)));
    let mut d2: Vec<f64> = (0..n).map(|i| sq_dist(row(i), &centroids[..dim])).collect();
    while centroids.len() < k * dim {
        let total: f64 = d2.iter().sum();
        let pick = if total > 0.0 {
            let mut target = rng.random::<f64>() * total;
            let mut chosen = n - 1;
            for (i, &w) in d2.iter().enumerate() {
                if target < w {
                    chosen = i;
                    break;
                }
                target -= w;
            }
            chosen
        } else {
            rng.random_range(0..n)
        };
        let start = centroids.len();
        centroids.extend_from_slice(row(pick));
        for (i, d) in d2.iter_mut().enumerate() {
            *d = d.min(sq_dist(row(i), &centroids[start..]));
        }
    }
    centroids
}

/// Lloyd's algorithm with k-means++ seeding on `n * dim` row-major points.
///
/// `k` is reduced to the row count when there are fewer points. Empty
/// clusters are re-seeded at the point farthest from its centroid.
pub fn kmeans(points: &[f64], dim: usize, params: KMeansParams) -> Result<KMeans> {
    if params.k == 0 || dim == 0 {
        return Err(Error::InvalidParameter("k-means needs k >= 1 and dim >= 1".into()));
    }
    if !points.len().is_multiple_of(dim) || points.is_empty() {
        return Err(Error::DimensionMismatch {
            expected: dim,
            found: points.len() % dim,
        });
    }
    if let Some(pos) = points.iter().position(|x| !x.is_finite()) {
        return Err(Error::NonFinite(format!("k-means input row {}", pos / dim)));
    }
    let n = points.len() / dim;
    let k = params.k.min(n);
    let mut rng = seed::rng(params.seed, "kmeans");
    let mut centroids = kmeans_plus_plus(points, dim, k, &mut rng);
    let mut history = Vec::new();
    let mut iterations = 0;

    let assign = |centroids: &[f64]| -> Vec<(usize, f64)> {
        points
            .par_chunks_exact(dim)
            .map(|p| nearest(p, centroids, dim))
            .collect()
    };

    let mut assigned = assign(&centroids);
    loop {
        let inertia: f64 = assigned.iter().map(|&(_, d)| d).sum();
        debug_assert!(
            history.last().is_none_or(|&prev: &f64| inertia <= prev + 1e-9 * prev.abs().max(1.0)),
            "k-means inertia increased"
        );
        history.push(inertia);
        if iterations == params.max_iters {
            break;
        }
        iterations += 1;

        let mut sums = vec![0.0; k * dim];
        let mut counts = vec![0usize; k];
        for (p, &(c, _)) in points.chunks_exact(dim).zip(&assigned) {
            counts[c] += 1;
            for (s, x) in sums[c * dim..(c + 1) * dim].iter_mut().zip(p) {
                *s += x;
            }
        }
        let mut distances: Vec<f64> = assigned.iter().map(|&(_, d)| d).collect();
        let mut shift: f64 = 0.0;
        for c in 0..k {
            let new: Vec<f64> = if counts[c] > 0 {
                sums[c * dim..(c + 1) * dim]
                    .iter()
                    .map(|s| s / counts[c] as f64)
                    .collect()
            } else {
                let far = distances
                    .iter()
                    .enumerate()
                    .fold((0, f64::NEG_INFINITY), |best, (i, &d)| if d > best.1 { (i, d) } else { best })
                    .0;
                distances[far] = 0.0;
                points[far * dim..(far + 1) * dim].to_vec()
            };
            shift = shift.max(sq_dist(&new, &centroids[c * dim..(c + 1) * dim]).sqrt());
            centroids[c * dim..(c + 1) * dim].copy_from_slice(&new);
        }
        assigned = assign(&centroids);
        if shift < params.tol {
            let inertia: f64 = assigned.iter().map(|&(_, d)| d).sum();
            history.push(inertia);
            break;
        }
    }

    Ok(KMeans {
        k,
        dim,
        centroids,
        assignments: assigned.into_iter().map(|(c, _)| c).collect(),
        inertia_history: history,
        iterations,
    })
}

#[derive(Debug, Clone)]
pub struct HkcNode {
    /// 1-based child indices from the root.
    pub path: Vec<TokenValue>,
    pub centroid: Vec<f64>,
    pub children: Vec<usize>,
    /// Row indices, sorted by entity id. Empty for internal nodes.
    pub members: Vec<usize>,
}

impl HkcNode {
    pub fn is_leaf(&self) -> bool {
        self.children.is_empty()
    }
}

#[derive(Debug, Clone)]
pub struct HkcTree {
    pub branching: usize,
    pub max_depth: usize,
    /// Node 0 is the root.
    pub nodes: Vec<HkcNode>,
}

impl HkcTree {
    pub fn leaves(&self) -> impl Iterator<Item = &HkcNode> {
        self.nodes.iter().filter(|n| n.is_leaf())
    }

    pub fn depth(&self) -> usize {
        self.leaves().map(|n| n.path.len()).max().unwrap_or(0)
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct HkcParams {
    pub k: usize,
    pub max_depth: usize,
    pub seed: u64,
    pub max_iters: usize,
    pub tol: f64,
}

impl HkcParams {
    pub fn new(k: usize, max_depth: usize, seed: u64) -> Self {
        Self {
            k,
            max_depth,
            seed,
            max_iters: 100,
            tol: 1e-4,
        }
    }
}

pub fn build_hkc_tree(emb: &EmbeddingMatrix, params: HkcParams) -> Result<HkcTree> {
    if emb.is_empty() {
        return Err(Error::EmptyCorpus);
    }
    if params.k < 2 {
        return Err(Error::InvalidParameter(format!("hkc needs k >= 2, got {}", params.k)));
    }
    let dim = emb.dim();
    let unit: Vec<f64> = emb.rows().flat_map(l2_normalized).collect();
    let mut tree = HkcTree {
        branching: params.k,
        max_depth: params.max_depth,
        nodes: Vec::new(),
    };
    let all: Vec<usize> = (0..emb.len()).collect();
    grow(&mut tree, &unit, dim, emb.ids(), all, Vec::new(), params)?;
    Ok(tree)
}

fn mean_of(unit: &[f64], dim: usize, members: &[usize]) -> Vec<f64> {
    let mut c = vec![0.0; dim];
    for &m in members {
        for (s, x) in c.iter_mut().zip(&unit[m * dim..(m + 1) * dim]) {
            *s += x;
        }
    }
    c.iter_mut().for_each(|s| *s /= members.len() as f64);
    c
}

fn grow(
    tree: &mut HkcTree,
    unit: &[f64],
    dim: usize,
    ids: &[String],
    mut members: Vec<usize>,
    path: Vec<TokenValue>,
    params: HkcParams,
) -> Result<usize> {
    let index = tree.nodes.len();
    tree.nodes.push(HkcNode {
        centroid: mean_of(unit, dim, &members),
        path: path.clone(),
        children: Vec::new(),
        members: Vec::new(),
    });
    let mut groups: Vec<Vec<usize>> = Vec::new();
    if members.len() > params.k && path.len() < params.max_depth {
        let points: Vec<f64> = members
            .iter()
            .flat_map(|&m| unit[m * dim..(m + 1) * dim].iter().copied())
            .collect();
        let label = format!("hkc/{path:?}");
        let km = kmeans(
            &points,
            dim,
            KMeansParams {
                k: params.k,
                max_iters: params.max_iters,
                tol: params.tol,
                seed: seed::derive_seed(params.seed, &label),
            },
        )?;
        groups = vec![Vec::new(); km.k];
        for (&m, &c) in members.iter().zip(&km.assignments) {
            groups[c].push(m);
        }
    }
    if groups.iter().filter(|g| !g.is_empty()).count() < 2 {
        members.sort_by(|&a, &b| ids[a].cmp(&ids[b]));
        tree.nodes[index].members = members;
        return Ok(index);
    }
    for (c, group) in groups.into_iter().enumerate() {
        if group.is_empty() {
            continue;
        }
        let mut child_path = path.clone();
        child_path.push(c as TokenValue + 1);
        let child = grow(tree, unit, dim, ids, group, child_path, params)?;
        tree.nodes[index].children.push(child);
    }
    Ok(index)
}

/// Base-`k` digits (1-based) of `rank`, using `width` positions.
fn leaf_digits(rank: usize, width: usize, k: usize) -> Vec<TokenValue> {
    let mut out = vec![0; width];
    let mut r = rank;
    for slot in out.iter_mut().rev() {
        *slot = (r % k) as TokenValue + 1;
        r /= k;
    }
    out
}

fn digits_needed(size: usize, k: usize) -> usize {
    let mut width = 1;
    let mut capacity = k;
    while capacity < size {
        width += 1;
        capacity = capacity.saturating_mul(k);
    }
    width
}

/// Codes from an existing tree; code alphabet is `[1, k + 1]` with `k + 1` as padding.
pub fn codes_from_tree(tree: &HkcTree, ids: &[String], seed: u64) -> Result<CodeBook> {
    let k = tree.branching;
    let pad = k as TokenValue + 1;
    let mut codes: Vec<Option<Vec<TokenValue>>> = vec![None; ids.len()];
    for leaf in tree.leaves() {
        let width = digits_needed(leaf.members.len(), k);
        for (rank, &m) in leaf.members.iter().enumerate() {
            let mut code = leaf.path.clone();
            code.extend(leaf_digits(rank, width, k));
            codes[m] = Some(code);
        }
    }
    let length = codes.iter().flatten().map(Vec::len).max().unwrap_or(0);
    let entries = ids
        .iter()
        .zip(codes)
        .map(|(id, code)| {
            let mut values = code.expect("every entity sits in exactly one leaf");
            values.resize(length, pad);
            CodeEntry {
                entity_id: id.clone(),
                code: Code::new(values),
            }
        })
        .collect();
    CodeBook::from_entries(
        Scheme::Hkc,
        CodeParams {
            length,
            vocab_size: pad,
            seed,
        },
        entries,
    )
}

pub fn build_hkc_codes(emb: &EmbeddingMatrix, k: usize, max_depth: usize, seed: u64) -> Result<CodeBook> {
    let tree = build_hkc_tree(emb, HkcParams::new(k, max_depth, seed))?;
    codes_from_tree(&tree, emb.ids(), seed)
}
