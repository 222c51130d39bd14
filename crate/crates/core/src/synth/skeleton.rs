use std::f64::consts::{FRAC_PI_2, PI};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::structured::JointTree;

/// Joint coordinates are snapped to multiples of this many pixels, so that
/// mirroring (`x -> size - x`) and CSV round trips are exact.
pub const COORD_QUANTUM: f64 = 1.0 / 256.0;

pub fn quantize(v: f64) -> f64 {
    (v / COORD_QUANTUM).round() * COORD_QUANTUM
}

/// Length and relative angle distribution of the edge ending at one joint.
///
/// The edge direction is the parent edge's direction (the root direction for
/// edges leaving the root) plus `angle + U(-spread, spread)`, in radians, with
/// image axes (x right, y down).
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct EdgeSpec {
    pub length: (f64, f64),
    pub angle: f64,
    pub spread: f64,
}

impl EdgeSpec {
    const fn new(min: f64, max: f64, angle: f64, spread: f64) -> Self {
        EdgeSpec { length: (min, max), angle, spread }
    }
}

/// Everything that controls synthetic figure generation.
#[derive(Clone, Debug, PartialEq)]
pub struct SkeletonSpec {
    pub tree: String,
    /// Side of the square canvas in pixels.
    pub canvas: usize,
    /// Per-joint edge distributions over the base tree (`desk14` for
    /// `desk26`); the root's entry is unused.
    pub edges: Vec<EdgeSpec>,
    /// Multiplies every edge length.
    pub length_scale: f64,
    /// Multiplies every angle spread, the root's included.
    pub spread_scale: f64,
    /// Direction of the root's reference axis and its spread.
    pub root_angle: f64,
    pub root_spread: f64,
    /// Minimum distance between any primary joint and the canvas border.
    pub margin: f64,
    pub thickness: (f64, f64),
    /// Radius of the disk drawn at the `head` joint, if the tree has one.
    pub head_radius: (f64, f64),
    pub figure_intensity: (f64, f64),
    pub background_intensity: (f64, f64),
    /// Standard deviation of additive Gaussian pixel noise.
    pub noise_std: f64,
    /// Inclusive range of random distractor segments per image.
    pub distractors: (usize, usize),
    /// Probability of drawing a second, unlabeled figure.
    pub multi_figure_prob: f64,
    pub max_attempts: usize,
}

fn desk14_edges() -> Vec<EdgeSpec> {
    // Root axis points from neck to pelvis (down). Right-side joints appear on
    // the image left since the figure faces the viewer.
    let hip = 0.35;
    vec![
        EdgeSpec::new(6.0, 8.0, PI, 0.3),                  // head
        EdgeSpec::new(0.0, 0.0, 0.0, 0.0),                 // neck (root)
        EdgeSpec::new(5.0, 7.0, FRAC_PI_2, 0.2),           // r_shoulder
        EdgeSpec::new(8.0, 11.0, -FRAC_PI_2, 1.2),         // r_elbow
        EdgeSpec::new(7.0, 10.0, 0.0, 1.2),                // r_wrist
        EdgeSpec::new(5.0, 7.0, -FRAC_PI_2, 0.2),          // l_shoulder
        EdgeSpec::new(8.0, 11.0, FRAC_PI_2, 1.2),          // l_elbow
        EdgeSpec::new(7.0, 10.0, 0.0, 1.2),                // l_wrist
        EdgeSpec::new(15.0, 18.0, hip, 0.1),               // r_hip
        EdgeSpec::new(9.0, 12.0, -hip, 0.5),               // r_knee
        EdgeSpec::new(8.0, 11.0, 0.0, 0.6),                // r_ankle
        EdgeSpec::new(15.0, 18.0, -hip, 0.1),              // l_hip
        EdgeSpec::new(9.0, 12.0, hip, 0.5),                // l_knee
        EdgeSpec::new(8.0, 11.0, 0.0, 0.6),                // l_ankle
    ]
}

impl SkeletonSpec {
    /// Default generator for a named tree on a `canvas`-pixel square. Edge
    /// lengths are tuned for 64 pixels and scale with the canvas.
    pub fn preset(tree: &str, canvas: usize) -> Result<Self> {
        let base = Self::base_tree(tree)?;
        let edges = match base.as_str() {
            "desk14" => desk14_edges(),
            _ => {
                let k = JointTree::by_name(&base)?.len();
                (0..k).map(|_| EdgeSpec::new(9.0, 13.0, 0.0, 0.8)).collect()
            }
        };
        let (root_angle, root_spread) = if base == "desk14" { (FRAC_PI_2, 0.4) } else { (0.0, PI - 1e-9) };
        Ok(SkeletonSpec {
            tree: tree.to_string(),
            canvas,
            edges,
            length_scale: canvas as f64 / 64.0,
            spread_scale: 1.0,
            root_angle,
            root_spread,
            margin: 2.0,
            thickness: (1.5, 2.5),
            head_radius: (2.5, 3.5),
            figure_intensity: (160.0, 240.0),
            background_intensity: (20.0, 80.0),
            noise_std: 8.0,
            distractors: (1, 3),
            multi_figure_prob: 0.0,
            max_attempts: 1000,
        })
    }

    /// Tree whose edges are sampled; `desk26` poses are `desk14` poses with
    /// limb midpoints inserted.
    fn base_tree(tree: &str) -> Result<String> {
        JointTree::by_name(tree)?;
        Ok(if tree == "desk26" { "desk14".into() } else { tree.into() })
    }

    pub fn joint_tree(&self) -> Result<JointTree> {
        JointTree::by_name(&self.tree)
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Config(m));
        let base = JointTree::by_name(&Self::base_tree(&self.tree)?)?;
        if self.edges.len() != base.len() {
            return bad(format!(
                "skeleton has {} edge entries for {} joints",
                self.edges.len(),
                base.len()
            ));
        }
        if self.canvas == 0 {
            return bad("canvas must be positive".into());
        }
        if !(self.length_scale > 0.0) || !(self.spread_scale >= 0.0) {
            return bad("length_scale must be positive and spread_scale non-negative".into());
        }
        for (c, _) in base.edges() {
            let e = self.edges[c];
            if !(e.length.0 > 0.0 && e.length.0 <= e.length.1) {
                return bad(format!("edge to {} has invalid length range {:?}", base.name(c), e.length));
            }
            if !(e.spread * self.spread_scale < PI) {
                return bad(format!("edge to {} has angle spread >= pi", base.name(c)));
            }
        }
        if !(self.root_spread * self.spread_scale <= PI) {
            return bad("root angle spread exceeds pi".into());
        }
        let ordered = |(a, b): (f64, f64)| a <= b && a >= 0.0;
        if !ordered(self.thickness) || !ordered(self.head_radius) {
            return bad("thickness and head_radius ranges must be ordered and non-negative".into());
        }
        for (name, r) in [("figure", self.figure_intensity), ("background", self.background_intensity)] {
            if !ordered(r) || r.1 > 255.0 {
                return bad(format!("{name} intensity range {r:?} must be ordered within [0, 255]"));
            }
        }
        if self.distractors.0 > self.distractors.1 {
            return bad("distractor range must be ordered".into());
        }
        if !(0.0..=1.0).contains(&self.multi_figure_prob) {
            return bad("multi_figure_prob must be in [0, 1]".into());
        }
        if !(self.noise_std >= 0.0) || !(self.margin >= 0.0) || self.max_attempts == 0 {
            return bad("noise_std and margin must be non-negative, max_attempts positive".into());
        }
        Ok(())
    }

    /// Joint offsets from the root for one random pose of the base tree.
    fn sample_shape(&self, base: &JointTree, rng: &mut impl Rng) -> Vec<[f64; 2]> {
        let uniform = |rng: &mut dyn rand::RngCore, (lo, hi): (f64, f64)| {
            if hi > lo {
                rng.random_range(lo..hi)
            } else {
                lo
            }
        };
        let k = base.len();
        let mut pos = vec![[0.0; 2]; k];
        let mut dir = vec![0.0; k];
        let root = base.root();
        let s = self.root_spread * self.spread_scale;
        dir[root] = self.root_angle + uniform(rng, (-s, s));
        for &j in base.order(crate::structured::Direction::Downward).iter().skip(1) {
            let p = base.parent(j).expect("non-root");
            let e = self.edges[j];
            let s = e.spread * self.spread_scale;
            let a = dir[p] + e.angle + uniform(rng, (-s, s));
            let len = uniform(rng, e.length) * self.length_scale;
            dir[j] = a;
            pos[j] = [pos[p][0] + len * a.cos(), pos[p][1] + len * a.sin()];
        }
        pos
    }

    /// Expands base-tree joints to the configured tree.
    fn expand(&self, base_joints: Vec<[f64; 2]>) -> Vec<[f64; 2]> {
        if self.tree != "desk26" {
            return base_joints;
        }
        let (_, inserted) = JointTree::desk14().interpolate_limbs();
        let mut joints = base_joints;
        for (_, p, c) in inserted {
            let (a, b) = (joints[p], joints[c]);
            joints.push([(a[0] + b[0]) / 2.0, (a[1] + b[1]) / 2.0]);
        }
        joints
    }

    /// Samples a pose whose joints all lie at least `margin` inside the
    /// canvas: the shape is drawn first, then the root is placed uniformly
    /// among the positions where the whole shape fits. Shapes too large for
    /// the canvas are redrawn.
    pub fn sample_joints(&self, rng: &mut impl Rng) -> Result<Vec<[f64; 2]>> {
        let base = JointTree::by_name(&Self::base_tree(&self.tree)?)?;
        let size = self.canvas as f64;
        for _ in 0..self.max_attempts {
            let shape = self.expand(self.sample_shape(&base, rng));
            let (mut lo, mut hi) = ([f64::INFINITY; 2], [f64::NEG_INFINITY; 2]);
            for p in &shape {
                for d in 0..2 {
                    lo[d] = lo[d].min(p[d]);
                    hi[d] = hi[d].max(p[d]);
                }
            }
            // Keep a quantum of slack so rounding cannot push a joint out.
            let room = |d: usize| {
                let min = self.margin - lo[d] + COORD_QUANTUM;
                let max = size - self.margin - hi[d] - COORD_QUANTUM;
                (min <= max).then_some((min, max))
            };
            let (Some(rx), Some(ry)) = (room(0), room(1)) else { continue };
            let pick = |rng: &mut dyn rand::RngCore, (a, b): (f64, f64)| if b > a { rng.random_range(a..b) } else { a };
            let origin = [pick(rng, rx), pick(rng, ry)];
            return Ok(shape.iter().map(|p| [quantize(origin[0] + p[0]), quantize(origin[1] + p[1])]).collect());
        }
        Err(Error::Config(format!(
            "no pose fits a {}px canvas with margin {} after {} attempts",
            self.canvas, self.margin, self.max_attempts
        )))
    }

    /// A pose placed anywhere with its root inside the canvas; joints may
    /// fall outside. Used for unlabeled extra figures.
    pub(crate) fn sample_loose_joints(&self, rng: &mut impl Rng) -> Result<Vec<[f64; 2]>> {
        let base = JointTree::by_name(&Self::base_tree(&self.tree)?)?;
        let shape = self.expand(self.sample_shape(&base, rng));
        let size = self.canvas as f64;
        let origin = [rng.random_range(0.0..size), rng.random_range(0.0..size)];
        let root = shape[base.root()];
        Ok(shape.iter().map(|p| [origin[0] + p[0] - root[0], origin[1] + p[1] - root[1]]).collect())
    }
}

/// Seed of sample `index` in a dataset drawn with `seed`: a splitmix64
/// scramble of the seed, xor the index.
pub fn sample_seed(seed: u64, index: u64) -> u64 {
    let mut z = seed.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    (z ^ (z >> 31)) ^ index
}

pub(crate) fn sample_rng(seed: u64, index: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(sample_seed(seed, index))
}
