use rand::Rng;
use rand_distr::{Distribution, Normal};

use super::skeleton::{sample_rng, SkeletonSpec};
use crate::error::{Error, Result};
use crate::structured::JointTree;

/// One labeled synthetic image.
#[derive(Clone, Debug, PartialEq)]
pub struct PoseSample {
    /// Side of the square image in pixels.
    pub size: usize,
    /// Row-major 8-bit intensities.
    pub image: Vec<u8>,
    /// Joint positions in continuous pixel coordinates: pixel `(r, c)` spans
    /// `[c, c+1) x [r, r+1)`.
    pub joints: Vec<[f64; 2]>,
    pub visible: Vec<bool>,
    /// Appearance mixture per joint; all zero until clustered.
    pub mixture: Vec<u16>,
}

impl PoseSample {
    pub fn validate(&self, joints: usize) -> Result<()> {
        if self.image.len() != self.size * self.size {
            return Err(Error::Data(format!(
                "image has {} pixels, expected {}x{}",
                self.image.len(),
                self.size,
                self.size
            )));
        }
        if self.joints.len() != joints || self.visible.len() != joints || self.mixture.len() != joints {
            return Err(Error::Data(format!(
                "sample has {} joints, tree has {joints}",
                self.joints.len()
            )));
        }
        if self.joints.iter().flatten().any(|v| !v.is_finite()) {
            return Err(Error::Data("non-finite joint coordinate".into()));
        }
        Ok(())
    }
}

/// Grayscale canvas with anti-aliased primitives.
pub(crate) struct Canvas {
    pub size: usize,
    pub px: Vec<f64>,
}

impl Canvas {
    pub fn new(size: usize, value: f64) -> Self {
        Canvas { size, px: vec![value; size * size] }
    }

    fn blend(&mut self, bounds: [f64; 4], value: f64, coverage: impl Fn(f64, f64) -> f64) {
        let s = self.size as isize;
        let clamp = |v: f64| (v.floor() as isize).clamp(0, s) as usize;
        let (x0, x1) = (clamp(bounds[0]), clamp(bounds[2] + 1.0));
        let (y0, y1) = (clamp(bounds[1]), clamp(bounds[3] + 1.0));
        for y in y0..y1 {
            for x in x0..x1 {
                let c = coverage(x as f64 + 0.5, y as f64 + 0.5);
                if c > 0.0 {
                    let p = &mut self.px[y * self.size + x];
                    *p += (value - *p) * c.min(1.0);
                }
            }
        }
    }

    /// Segment of the given thickness with round caps; coverage falls off
    /// linearly over one pixel at the edge.
    pub fn segment(&mut self, a: [f64; 2], b: [f64; 2], thickness: f64, value: f64) {
        let r = thickness / 2.0;
        let pad = r + 1.0;
        let bounds = [a[0].min(b[0]) - pad, a[1].min(b[1]) - pad, a[0].max(b[0]) + pad, a[1].max(b[1]) + pad];
        let (dx, dy) = (b[0] - a[0], b[1] - a[1]);
        let len2 = dx * dx + dy * dy;
        self.blend(bounds, value, |x, y| {
            let t = if len2 > 0.0 { (((x - a[0]) * dx + (y - a[1]) * dy) / len2).clamp(0.0, 1.0) } else { 0.0 };
            let d = (x - a[0] - t * dx).hypot(y - a[1] - t * dy);
            r + 0.5 - d
        });
    }

    pub fn disk(&mut self, c: [f64; 2], radius: f64, value: f64) {
        let pad = radius + 1.0;
        let bounds = [c[0] - pad, c[1] - pad, c[0] + pad, c[1] + pad];
        self.blend(bounds, value, |x, y| radius + 0.5 - (x - c[0]).hypot(y - c[1]));
    }

    pub fn to_u8(&self) -> Vec<u8> {
        self.px.iter().map(|v| v.round().clamp(0.0, 255.0) as u8).collect()
    }
}

fn range(rng: &mut impl Rng, (lo, hi): (f64, f64)) -> f64 {
    if hi > lo {
        rng.random_range(lo..hi)
    } else {
        lo
    }
}

fn draw_figure(canvas: &mut Canvas, tree: &JointTree, joints: &[[f64; 2]], spec: &SkeletonSpec, rng: &mut impl Rng) {
    let value = range(rng, spec.figure_intensity);
    let thickness = range(rng, spec.thickness);
    for (c, p) in tree.edges() {
        canvas.segment(joints[p], joints[c], thickness, value);
    }
    if let Some(head) = tree.index_of("head") {
        canvas.disk(joints[head], range(rng, spec.head_radius), value);
    }
}

/// Draws the sample with index `index` of a dataset seeded by `seed`: pose,
/// optional second figure, distractor strokes, then the primary figure on
/// top, plus Gaussian noise. A pure function of its arguments.
pub fn render_sample(spec: &SkeletonSpec, seed: u64, index: u64) -> Result<PoseSample> {
    spec.validate()?;
    let tree = spec.joint_tree()?;
    let mut rng = sample_rng(seed, index);
    let joints = spec.sample_joints(&mut rng)?;
    let size = spec.canvas;
    let mut canvas = Canvas::new(size, range(&mut rng, spec.background_intensity));
    if rng.random::<f64>() < spec.multi_figure_prob {
        let other = spec.sample_loose_joints(&mut rng)?;
        draw_figure(&mut canvas, &tree, &other, spec, &mut rng);
    }
    let distractors = rng.random_range(spec.distractors.0..=spec.distractors.1);
    for _ in 0..distractors {
        let c = [rng.random_range(0.0..size as f64), rng.random_range(0.0..size as f64)];
        let len = rng.random_range(6.0..14.0) * spec.length_scale;
        let a = rng.random_range(0.0..std::f64::consts::TAU);
        let (dx, dy) = (len / 2.0 * a.cos(), len / 2.0 * a.sin());
        let thickness = range(&mut rng, spec.thickness);
        let value = range(&mut rng, spec.figure_intensity);
        canvas.segment([c[0] - dx, c[1] - dy], [c[0] + dx, c[1] + dy], thickness, value);
    }
    draw_figure(&mut canvas, &tree, &joints, spec, &mut rng);
    if spec.noise_std > 0.0 {
        let normal = Normal::new(0.0, spec.noise_std).map_err(|e| Error::Config(e.to_string()))?;
        for p in &mut canvas.px {
            *p += normal.sample(&mut rng);
        }
    }
    let k = joints.len();
    Ok(PoseSample {
        size,
        image: canvas.to_u8(),
        joints,
        visible: vec![true; k],
        mixture: vec![0; k],
    })
}

/// `count` samples with per-sample seeds derived from `seed`.
pub fn generate(spec: &SkeletonSpec, count: usize, seed: u64) -> Result<Vec<PoseSample>> {
    (0..count as u64).map(|i| render_sample(spec, seed, i)).collect()
}
