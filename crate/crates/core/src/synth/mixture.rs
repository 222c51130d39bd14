use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::render::PoseSample;
use crate::error::{Error, Result};
use crate::structured::JointTree;

/// Iteration cap for Lloyd's algorithm.
pub const KMEANS_MAX_ITERS: usize = 100;

/// Per-joint k-means centroids over normalized parent-relative offsets.
#[derive(Clone, Debug, PartialEq)]
pub struct MixtureModel {
    pub k: usize,
    /// `centroids[joint]` holds `k` points.
    pub centroids: Vec<Vec<[f64; 2]>>,
}

/// The reference joint of `j`: its parent, or for the root its first child.
fn reference(tree: &JointTree, j: usize) -> Option<usize> {
    tree.parent(j).or_else(|| tree.children(j).first().copied())
}

/// Head scale of a pose: the head-neck distance when the tree names both,
/// otherwise the length of the root's first edge.
pub fn head_scale(tree: &JointTree, joints: &[[f64; 2]]) -> f64 {
    let pair = match (tree.index_of("head"), tree.index_of("neck")) {
        (Some(h), Some(n)) => Some((h, n)),
        _ => reference(tree, tree.root()).map(|c| (c, tree.root())),
    };
    match pair {
        Some((a, b)) => (joints[a][0] - joints[b][0]).hypot(joints[a][1] - joints[b][1]),
        None => 1.0,
    }
}

/// Offset of joint `j` from its reference joint, divided by the head scale.
pub fn relative_position(tree: &JointTree, joints: &[[f64; 2]], j: usize) -> [f64; 2] {
    let Some(r) = reference(tree, j) else { return [0.0; 2] };
    let s = head_scale(tree, joints);
    let s = if s > 0.0 { s } else { 1.0 };
    [(joints[j][0] - joints[r][0]) / s, (joints[j][1] - joints[r][1]) / s]
}

fn dist2(a: [f64; 2], b: [f64; 2]) -> f64 {
    (a[0] - b[0]).powi(2) + (a[1] - b[1]).powi(2)
}

/// Index of the nearest centroid; ties go to the lowest index.
pub fn nearest(centroids: &[[f64; 2]], p: [f64; 2]) -> usize {
    let mut best = (0, f64::INFINITY);
    for (i, c) in centroids.iter().enumerate() {
        let d = dist2(*c, p);
        if d < best.1 {
            best = (i, d);
        }
    }
    best.0
}

/// Lloyd's algorithm with k-means++ seeding. Fails if there are fewer
/// distinct points than clusters.
pub fn kmeans(points: &[[f64; 2]], k: usize, rng: &mut impl Rng) -> Result<Vec<[f64; 2]>> {
    if k == 0 {
        return Err(Error::InvalidArgument("k must be at least 1".into()));
    }
    let mut distinct: Vec<[u64; 2]> = points.iter().map(|p| [p[0].to_bits(), p[1].to_bits()]).collect();
    distinct.sort_unstable();
    distinct.dedup();
    if distinct.len() < k {
        return Err(Error::InvalidArgument(format!(
            "k = {k} exceeds the {} distinct points",
            distinct.len()
        )));
    }
    let mut centroids = vec![points[rng.random_range(0..points.len())]];
    while centroids.len() < k {
        let d: Vec<f64> = points.iter().map(|&p| dist2(centroids[nearest(&centroids, p)], p)).collect();
        let total: f64 = d.iter().sum();
        let mut t = rng.random::<f64>() * total;
        let mut pick = d.iter().rposition(|&v| v > 0.0).unwrap_or(0);
        for (i, &v) in d.iter().enumerate() {
            if v > 0.0 && t < v {
                pick = i;
                break;
            }
            t -= v;
        }
        centroids.push(points[pick]);
    }
    let mut assign = vec![usize::MAX; points.len()];
    for _ in 0..KMEANS_MAX_ITERS {
        let next: Vec<usize> = points.iter().map(|&p| nearest(&centroids, p)).collect();
        if next == assign {
            break;
        }
        assign = next;
        let mut sums = vec![[0.0; 3]; k];
        for (p, &a) in points.iter().zip(&assign) {
            sums[a][0] += p[0];
            sums[a][1] += p[1];
            sums[a][2] += 1.0;
        }
        for (c, s) in centroids.iter_mut().zip(&sums) {
            if s[2] > 0.0 {
                *c = [s[0] / s[2], s[1] / s[2]];
            }
        }
    }
    Ok(centroids)
}

impl MixtureModel {
    /// Mixture label of every joint of one pose.
    pub fn assign(&self, tree: &JointTree, joints: &[[f64; 2]]) -> Vec<u16> {
        (0..tree.len())
            .map(|j| nearest(&self.centroids[j], relative_position(tree, joints, j)) as u16)
            .collect()
    }
}

/// Clusters each joint's normalized relative position into `k` types and
/// writes the resulting labels into `samples`.
pub fn cluster_mixtures(samples: &mut [PoseSample], tree: &JointTree, k: usize, seed: u64) -> Result<MixtureModel> {
    if samples.is_empty() {
        return Err(Error::Data("cannot cluster an empty dataset".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut centroids = Vec::with_capacity(tree.len());
    for j in 0..tree.len() {
        let points: Vec<[f64; 2]> = samples.iter().map(|s| relative_position(tree, &s.joints, j)).collect();
        centroids.push(kmeans(&points, k, &mut rng).map_err(|e| match e {
            Error::InvalidArgument(m) => Error::InvalidArgument(format!("joint {}: {m}", tree.name(j))),
            other => other,
        })?);
    }
    let model = MixtureModel { k, centroids };
    for s in samples.iter_mut() {
        s.mixture = model.assign(tree, &s.joints);
    }
    Ok(model)
}
