use crate::error::{Error, Result};
use crate::structured::JointTree;
use crate::synth::PoseSample;
use crate::tensor::{Real, Tensor};

/// Score maps of one image: `K * M` joint channels then background.
#[derive(Clone, Debug, PartialEq)]
pub struct ScoreMapSet {
    pub height: usize,
    pub width: usize,
    pub joints: usize,
    pub mixtures: usize,
    /// Input pixels per map cell.
    pub downsample: usize,
    /// Channel-major values, `(K*M + 1) * height * width`.
    pub data: Vec<f64>,
}

impl ScoreMapSet {
    pub fn new(height: usize, width: usize, joints: usize, mixtures: usize, downsample: usize, data: Vec<f64>) -> Result<Self> {
        if data.len() != (joints * mixtures + 1) * height * width || height == 0 || width == 0 {
            return Err(Error::Shape(format!(
                "{} values for {joints}x{mixtures}+1 channels of {height}x{width}",
                data.len()
            )));
        }
        if data.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("score maps".into()));
        }
        Ok(ScoreMapSet { height, width, joints, mixtures, downsample, data })
    }

    /// Batch item `n` of network output.
    pub fn from_tensor<T: Real>(scores: &Tensor<T>, n: usize, joints: usize, mixtures: usize, downsample: usize) -> Result<Self> {
        let [nb, c, h, w] = scores.dims4()?;
        if n >= nb || c != joints * mixtures + 1 {
            return Err(Error::Shape(format!(
                "cannot take item {n} with {joints}x{mixtures}+1 channels from {:?}",
                scores.shape()
            )));
        }
        let plane = c * h * w;
        let data = scores.data()[n * plane..(n + 1) * plane].iter().map(|v| v.as_f64()).collect();
        Self::new(h, w, joints, mixtures, downsample, data)
    }

    pub fn cells(&self) -> usize {
        self.height * self.width
    }

    pub fn channel(&self, c: usize) -> &[f64] {
        &self.data[c * self.cells()..(c + 1) * self.cells()]
    }

    pub fn background(&self) -> &[f64] {
        self.channel(self.joints * self.mixtures)
    }

    /// Per-cell unary of joint `j`: the max over its mixture channels.
    pub fn unary(&self, j: usize) -> Vec<f64> {
        let mut u = self.channel(j * self.mixtures).to_vec();
        for m in 1..self.mixtures {
            for (a, b) in u.iter_mut().zip(self.channel(j * self.mixtures + m)) {
                *a = a.max(*b);
            }
        }
        u
    }
}

/// Per-edge quadratic deformation cost around a mean offset.
#[derive(Clone, Debug, PartialEq)]
pub struct PairwiseParams {
    /// Mean child-minus-parent offset in map cells, indexed by child joint;
    /// the root's entry is unused.
    pub offsets: Vec<[f64; 2]>,
    /// Weights of `dx^2` and `dy^2`.
    pub weights: [f64; 2],
}

pub const DEFAULT_PAIRWISE_WEIGHTS: [f64; 2] = [0.01, 0.01];

impl PairwiseParams {
    pub fn validate(&self, tree: &JointTree) -> Result<()> {
        if self.offsets.len() != tree.len() {
            return Err(Error::Shape(format!(
                "{} pairwise offsets for {} joints",
                self.offsets.len(),
                tree.len()
            )));
        }
        if !(self.weights[0] >= 0.0 && self.weights[1] >= 0.0) {
            return Err(Error::InvalidArgument("pairwise weights must be non-negative".into()));
        }
        if self.offsets.iter().flatten().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("pairwise offsets".into()));
        }
        Ok(())
    }

    /// `joint,dx,dy` rows of mean offsets in map cells.
    pub fn offsets_csv(&self, tree: &JointTree) -> String {
        let mut out = String::from("joint,dx,dy\n");
        for (j, [dx, dy]) in self.offsets.iter().enumerate() {
            out.push_str(&format!("{},{dx:?},{dy:?}\n", tree.name(j)));
        }
        out
    }

    /// Reads [`offsets_csv`](Self::offsets_csv) output; every joint must
    /// appear exactly once.
    pub fn from_offsets_csv(text: &str, tree: &JointTree, weights: [f64; 2]) -> Result<Self> {
        let mut lines = text.lines();
        if lines.next() != Some("joint,dx,dy") {
            return Err(Error::Data("pairwise offsets: expected header `joint,dx,dy`".into()));
        }
        let mut offsets = vec![None; tree.len()];
        for line in lines.filter(|l| !l.trim().is_empty()) {
            let bad = || Error::Data(format!("pairwise offsets: bad row {line:?}"));
            let mut parts = line.split(',');
            let (Some(name), Some(dx), Some(dy), None) = (parts.next(), parts.next(), parts.next(), parts.next()) else {
                return Err(bad());
            };
            let j = tree.index_of(name).ok_or_else(bad)?;
            if offsets[j].is_some() {
                return Err(Error::Data(format!("pairwise offsets: joint {name} appears twice")));
            }
            offsets[j] = Some([dx.parse().map_err(|_| bad())?, dy.parse().map_err(|_| bad())?]);
        }
        let offsets = offsets
            .into_iter()
            .enumerate()
            .map(|(j, o)| o.ok_or_else(|| Error::Data(format!("pairwise offsets: joint {} missing", tree.name(j)))))
            .collect::<Result<Vec<_>>>()?;
        let p = PairwiseParams { offsets, weights };
        p.validate(tree)?;
        Ok(p)
    }

    /// Cost of placing `child` at cell `(cx, cy)` given its parent at
    /// `(px, py)` (column, row).
    pub fn cost(&self, child: usize, c: [usize; 2], p: [usize; 2]) -> f64 {
        let [xr, yr] = self.offsets[child];
        let dx = c[0] as f64 - p[0] as f64 - xr;
        let dy = c[1] as f64 - p[1] as f64 - yr;
        self.weights[0] * dx * dx + self.weights[1] * dy * dy
    }
}

/// Mean child-minus-parent offsets over a training set, in map cells, with
/// the default weights.
pub fn estimate_pairwise_params(samples: &[PoseSample], tree: &JointTree, downsample: usize) -> Result<PairwiseParams> {
    if samples.is_empty() {
        return Err(Error::Data("cannot estimate pairwise terms from an empty dataset".into()));
    }
    let mut offsets = vec![[0.0; 2]; tree.len()];
    for (c, p) in tree.edges() {
        let mut sum = [0.0; 2];
        for s in samples {
            sum[0] += s.joints[c][0] - s.joints[p][0];
            sum[1] += s.joints[c][1] - s.joints[p][1];
        }
        let n = samples.len() as f64 * downsample as f64;
        offsets[c] = [sum[0] / n, sum[1] / n];
    }
    Ok(PairwiseParams { offsets, weights: DEFAULT_PAIRWISE_WEIGHTS })
}
