use std::fmt::Write as _;

use crate::error::{Error, Result};
use crate::structured::JointTree;

/// A limb between two joints, reported under a group name.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Limb {
    pub a: usize,
    pub b: usize,
    pub group: String,
}

/// Limbs to score: every tree edge, grouped as head, shoulders, torso,
/// upper/lower arms and upper/lower legs when the joint names allow it, and
/// one group per edge otherwise.
pub fn limbs_for_tree(tree: &JointTree) -> Vec<Limb> {
    tree.edges()
        .map(|(c, p)| {
            let side = |n: &str| n.trim_start_matches("l_").trim_start_matches("r_").to_string();
            let (pn, cn) = (side(tree.name(p)), side(tree.name(c)));
            let group = match (pn.as_str(), cn.as_str()) {
                ("neck", "head") => "head".to_string(),
                ("neck", "shoulder") => "shoulders".to_string(),
                ("neck", "hip") => "torso".to_string(),
                ("shoulder", "elbow") => "upper_arms".to_string(),
                ("elbow", "wrist") => "lower_arms".to_string(),
                ("hip", "knee") => "upper_legs".to_string(),
                ("knee", "ankle") => "lower_legs".to_string(),
                _ => format!("{}-{}", tree.name(p), tree.name(c)),
            };
            Limb { a: p, b: c, group }
        })
        .collect()
}

fn dist(a: [f64; 2], b: [f64; 2]) -> f64 {
    (a[0] - b[0]).hypot(a[1] - b[1])
}

/// Strict PCP per limb group, in percent.
#[derive(Clone, Debug, PartialEq)]
pub struct PcpReport {
    /// `(group, correct, total)` in first-appearance order.
    pub groups: Vec<(String, usize, usize)>,
    /// Limbs skipped because their ground-truth length is zero.
    pub skipped: usize,
}

impl PcpReport {
    pub fn group_pcp(&self) -> Vec<(String, f64)> {
        self.groups
            .iter()
            .map(|(g, c, t)| (g.clone(), if *t == 0 { 0.0 } else { 100.0 * *c as f64 / *t as f64 }))
            .collect()
    }

    /// Unweighted mean over groups that had at least one limb.
    pub fn mean(&self) -> f64 {
        let scored: Vec<f64> = self
            .groups
            .iter()
            .filter(|(_, _, t)| *t > 0)
            .map(|(_, c, t)| 100.0 * *c as f64 / *t as f64)
            .collect();
        if scored.is_empty() {
            0.0
        } else {
            scored.iter().sum::<f64>() / scored.len() as f64
        }
    }

    /// `group,pcp` rows followed by `mean`.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("group,pcp\n");
        for (g, p) in self.group_pcp() {
            let _ = writeln!(out, "{g},{p}");
        }
        let _ = writeln!(out, "mean,{}", self.mean());
        out
    }
}

/// Whether a limb is correct under strict PCP: both endpoint errors at most
/// half the ground-truth limb length.
pub fn limb_correct(est: [[f64; 2]; 2], gt: [[f64; 2]; 2]) -> bool {
    let half = 0.5 * dist(gt[0], gt[1]);
    dist(est[0], gt[0]) <= half && dist(est[1], gt[1]) <= half
}

pub fn pcp_strict(estimates: &[Vec<[f64; 2]>], truth: &[Vec<[f64; 2]>], limbs: &[Limb]) -> Result<PcpReport> {
    if estimates.len() != truth.len() {
        return Err(Error::Shape(format!(
            "{} estimates for {} ground-truth poses",
            estimates.len(),
            truth.len()
        )));
    }
    let mut groups: Vec<(String, usize, usize)> = Vec::new();
    for l in limbs {
        if !groups.iter().any(|(g, _, _)| *g == l.group) {
            groups.push((l.group.clone(), 0, 0));
        }
    }
    let mut skipped = 0;
    for (e, t) in estimates.iter().zip(truth) {
        if e.len() != t.len() {
            return Err(Error::Shape(format!("{} estimated joints, {} true", e.len(), t.len())));
        }
        for l in limbs {
            if dist(t[l.a], t[l.b]) == 0.0 {
                skipped += 1;
                continue;
            }
            let slot = groups.iter_mut().find(|(g, _, _)| *g == l.group).expect("registered above");
            slot.2 += 1;
            if limb_correct([e[l.a], e[l.b]], [t[l.a], t[l.b]]) {
                slot.1 += 1;
            }
        }
    }
    Ok(PcpReport { groups, skipped })
}

/// How the PDJ error threshold is normalized.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum PoseScale {
    /// Diagonal of the ground-truth joints' bounding box.
    BoxDiagonal,
    /// Distance between two ground-truth joints.
    Joints(usize, usize),
}

impl PoseScale {
    pub fn of(self, truth: &[[f64; 2]]) -> f64 {
        match self {
            PoseScale::BoxDiagonal => {
                let (mut lo, mut hi) = ([f64::INFINITY; 2], [f64::NEG_INFINITY; 2]);
                for p in truth {
                    for d in 0..2 {
                        lo[d] = lo[d].min(p[d]);
                        hi[d] = hi[d].max(p[d]);
                    }
                }
                (hi[0] - lo[0]).hypot(hi[1] - lo[1])
            }
            PoseScale::Joints(a, b) => dist(truth[a], truth[b]),
        }
    }
}

/// Fraction of joints detected within `t * scale` for each threshold `t`.
#[derive(Clone, Debug, PartialEq)]
pub struct PdjCurve {
    pub thresholds: Vec<f64>,
    /// `fractions[joint][threshold]`.
    pub fractions: Vec<Vec<f64>>,
}

impl PdjCurve {
    /// Mean over joints at each threshold.
    pub fn mean(&self) -> Vec<f64> {
        let k = self.fractions.len().max(1) as f64;
        (0..self.thresholds.len())
            .map(|t| self.fractions.iter().map(|f| f[t]).sum::<f64>() / k)
            .collect()
    }

    /// `threshold,joint,fraction` rows, with `mean` as a pseudo-joint.
    pub fn to_csv(&self, tree: &JointTree) -> String {
        let mut out = String::from("threshold,joint,fraction\n");
        let mean = self.mean();
        for (ti, t) in self.thresholds.iter().enumerate() {
            for (j, f) in self.fractions.iter().enumerate() {
                let _ = writeln!(out, "{t},{},{}", tree.name(j), f[ti]);
            }
            let _ = writeln!(out, "{t},mean,{}", mean[ti]);
        }
        out
    }
}

pub fn pdj_curve(estimates: &[Vec<[f64; 2]>], truth: &[Vec<[f64; 2]>], thresholds: &[f64], scale: PoseScale) -> Result<PdjCurve> {
    if thresholds.windows(2).any(|w| !(w[0] <= w[1])) || thresholds.iter().any(|t| !(*t >= 0.0)) {
        return Err(Error::InvalidArgument("PDJ thresholds must be non-negative and ascending".into()));
    }
    if estimates.len() != truth.len() || estimates.is_empty() {
        return Err(Error::Shape(format!(
            "{} estimates for {} ground-truth poses",
            estimates.len(),
            truth.len()
        )));
    }
    let k = truth[0].len();
    let mut hits = vec![vec![0usize; thresholds.len()]; k];
    for (e, t) in estimates.iter().zip(truth) {
        if e.len() != k || t.len() != k {
            return Err(Error::Shape("pose sizes differ".into()));
        }
        let s = scale.of(t);
        for j in 0..k {
            let err = dist(e[j], t[j]);
            for (ti, th) in thresholds.iter().enumerate() {
                if err <= th * s {
                    hits[j][ti] += 1;
                }
            }
        }
    }
    let n = estimates.len() as f64;
    Ok(PdjCurve {
        thresholds: thresholds.to_vec(),
        fractions: hits.iter().map(|h| h.iter().map(|&c| c as f64 / n).collect()).collect(),
    })
}
