use std::fmt;
use std::str::FromStr;

use super::scores::{PairwiseParams, ScoreMapSet};
use crate::error::{Error, Result};
use crate::structured::{Direction, JointTree};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum DecodeMode {
    /// Independent per-joint maxima; pairwise terms ignored.
    Argmax,
    /// Exact max-sum on the tree with explicit minimization per edge.
    TreeDp,
    /// Same optimum as `TreeDp`, with edge messages from a generalized
    /// distance transform.
    Gdt,
}

impl DecodeMode {
    pub const ALL: [DecodeMode; 3] = [DecodeMode::Argmax, DecodeMode::TreeDp, DecodeMode::Gdt];

    pub fn as_str(self) -> &'static str {
        match self {
            DecodeMode::Argmax => "argmax",
            DecodeMode::TreeDp => "tree_dp",
            DecodeMode::Gdt => "gdt",
        }
    }
}

impl fmt::Display for DecodeMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for DecodeMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        DecodeMode::ALL
            .into_iter()
            .find(|m| m.as_str() == s)
            .ok_or_else(|| Error::Config(format!("unknown decode mode {s:?}")))
    }
}

/// Decoded joint locations of one image.
#[derive(Clone, Debug, PartialEq)]
pub struct PoseEstimate {
    /// Row-major cell index per joint.
    pub cells: Vec<usize>,
    /// Cell centers in map units, `(x, y)`.
    pub map: Vec<[f64; 2]>,
    /// Cell centers in input pixels.
    pub pixels: Vec<[f64; 2]>,
    /// Unary score at each chosen cell.
    pub peaks: Vec<f64>,
    /// Sum of unaries minus sum of pairwise costs.
    pub objective: f64,
}

/// `sum_k u_k(l_k) - sum_edges cost(l_child, l_parent)` for a placement.
pub fn objective(unary: &[Vec<f64>], width: usize, tree: &JointTree, params: &PairwiseParams, cells: &[usize]) -> f64 {
    let xy = |l: usize| [l % width, l / width];
    let mut total: f64 = (0..tree.len()).map(|j| unary[j][cells[j]]).sum();
    for (c, p) in tree.edges() {
        total -= params.cost(c, xy(cells[c]), xy(cells[p]));
    }
    total
}

/// First index of the maximum.
fn argmax(v: &[f64]) -> usize {
    let mut best = 0;
    for (i, &x) in v.iter().enumerate() {
        if x > v[best] {
            best = i;
        }
    }
    best
}

pub fn decode(scores: &ScoreMapSet, params: &PairwiseParams, tree: &JointTree, mode: DecodeMode) -> Result<PoseEstimate> {
    if scores.joints != tree.len() {
        return Err(Error::Shape(format!(
            "{} joints in scores, {} in tree",
            scores.joints,
            tree.len()
        )));
    }
    params.validate(tree)?;
    let unary: Vec<Vec<f64>> = (0..tree.len()).map(|j| scores.unary(j)).collect();
    let cells = match mode {
        DecodeMode::Argmax => unary.iter().map(|u| argmax(u)).collect(),
        DecodeMode::TreeDp => tree_dp(&unary, scores.width, scores.height, tree, params),
        DecodeMode::Gdt => gdt_decode(&unary, scores.width, scores.height, tree, params),
    };
    let w = scores.width;
    let map: Vec<[f64; 2]> = cells.iter().map(|&l| [(l % w) as f64 + 0.5, (l / w) as f64 + 0.5]).collect();
    let ds = scores.downsample as f64;
    Ok(PoseEstimate {
        pixels: map.iter().map(|p| [p[0] * ds, p[1] * ds]).collect(),
        peaks: (0..tree.len()).map(|j| unary[j][cells[j]]).collect(),
        objective: objective(&unary, w, tree, params, &cells),
        map,
        cells,
    })
}

/// Leaf-to-root max-sum with an explicit maximization over child cells for
/// every parent cell, then root-to-leaf backtracking.
fn tree_dp(unary: &[Vec<f64>], width: usize, height: usize, tree: &JointTree, params: &PairwiseParams) -> Vec<usize> {
    let n = width * height;
    let k = tree.len();
    let mut belief = unary.to_vec();
    let mut best_child: Vec<Vec<usize>> = vec![Vec::new(); k];
    for &c in &tree.order(Direction::Upward) {
        let Some(p) = tree.parent(c) else { continue };
        let mut msg = vec![f64::NEG_INFINITY; n];
        let mut arg = vec![0; n];
        for lp in 0..n {
            let pxy = [lp % width, lp / width];
            for lc in 0..n {
                let v = belief[c][lc] - params.cost(c, [lc % width, lc / width], pxy);
                if v > msg[lp] {
                    msg[lp] = v;
                    arg[lp] = lc;
                }
            }
        }
        for (b, m) in belief[p].iter_mut().zip(&msg) {
            *b += m;
        }
        best_child[c] = arg;
    }
    let mut cells = vec![0; k];
    let root = tree.root();
    cells[root] = argmax(&belief[root]);
    for &j in tree.order(Direction::Downward).iter().skip(1) {
        let p = tree.parent(j).expect("non-root");
        cells[j] = best_child[j][cells[p]];
    }
    cells
}

/// `D(q) = min_p f(p) + w (q - p)^2` for sorted real queries `q`, using the
/// lower envelope of parabolas rooted at the integer points `p`.
pub fn distance_transform_1d(f: &[f64], w: f64, queries: &[f64]) -> Vec<f64> {
    let n = f.len();
    if w == 0.0 {
        let m = f.iter().copied().fold(f64::INFINITY, f64::min);
        return vec![m; queries.len()];
    }
    // v: parabola roots on the envelope; z: boundaries between them.
    let mut v = vec![0usize; n];
    let mut z = vec![0.0f64; n + 1];
    let mut top = 0;
    z[0] = f64::NEG_INFINITY;
    z[1] = f64::INFINITY;
    let inter = |a: usize, b: usize| {
        let (a_f, b_f) = (a as f64, b as f64);
        ((f[b] + w * b_f * b_f) - (f[a] + w * a_f * a_f)) / (2.0 * w * (b_f - a_f))
    };
    for q in 1..n {
        let mut s = inter(v[top], q);
        while s <= z[top] {
            top -= 1;
            s = inter(v[top], q);
        }
        top += 1;
        v[top] = q;
        z[top] = s;
        z[top + 1] = f64::INFINITY;
    }
    let mut j = 0;
    queries
        .iter()
        .map(|&q| {
            while z[j + 1] < q {
                j += 1;
            }
            let d = q - v[j] as f64;
            f[v[j]] + w * d * d
        })
        .collect()
}

/// Message from child `c` to its parent: for every parent cell, the best
/// child belief minus deformation cost, via two separable 1-D transforms on
/// negated beliefs.
fn gdt_message(belief: &[f64], width: usize, height: usize, offset: [f64; 2], weights: [f64; 2]) -> Vec<f64> {
    let qx: Vec<f64> = (0..width).map(|x| x as f64 + offset[0]).collect();
    let qy: Vec<f64> = (0..height).map(|y| y as f64 + offset[1]).collect();
    // Rows: over child x for every child y and parent x.
    let mut rows = vec![0.0; width * height];
    let mut line = vec![0.0; width];
    for y in 0..height {
        for x in 0..width {
            line[x] = -belief[y * width + x];
        }
        let d = distance_transform_1d(&line, weights[0], &qx);
        rows[y * width..(y + 1) * width].copy_from_slice(&d);
    }
    // Columns: over child y for every parent cell.
    let mut out = vec![0.0; width * height];
    let mut col = vec![0.0; height];
    for x in 0..width {
        for y in 0..height {
            col[y] = rows[y * width + x];
        }
        let d = distance_transform_1d(&col, weights[1], &qy);
        for y in 0..height {
            out[y * width + x] = -d[y];
        }
    }
    out
}

fn gdt_decode(unary: &[Vec<f64>], width: usize, height: usize, tree: &JointTree, params: &PairwiseParams) -> Vec<usize> {
    let mut belief = unary.to_vec();
    for &c in &tree.order(Direction::Upward) {
        let Some(p) = tree.parent(c) else { continue };
        let msg = gdt_message(&belief[c], width, height, params.offsets[c], params.weights);
        for (b, m) in belief[p].iter_mut().zip(&msg) {
            *b += m;
        }
    }
    let mut cells = vec![0; tree.len()];
    let root = tree.root();
    cells[root] = argmax(&belief[root]);
    // The transform yields values only; recover each child's best cell for
    // its parent's chosen cell with one linear scan, ties to the lowest index.
    for &j in tree.order(Direction::Downward).iter().skip(1) {
        let p = tree.parent(j).expect("non-root");
        let pxy = [cells[p] % width, cells[p] / width];
        let scored: Vec<f64> = (0..width * height)
            .map(|l| belief[j][l] - params.cost(j, [l % width, l / width], pxy))
            .collect();
        cells[j] = argmax(&scored);
    }
    cells
}
