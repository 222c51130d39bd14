//! Decoding joint locations from score maps, and pose metrics.

mod decode;
mod metrics;
mod scores;

use std::fmt::Write as _;

use rayon::prelude::*;

pub use decode::{decode, distance_transform_1d, objective, DecodeMode, PoseEstimate};
pub use metrics::{limb_correct, limbs_for_tree, pcp_strict, pdj_curve, Limb, PcpReport, PdjCurve, PoseScale};
pub use scores::{estimate_pairwise_params, PairwiseParams, ScoreMapSet, DEFAULT_PAIRWISE_WEIGHTS};

use crate::error::Result;
use crate::model::PoseNet;
use crate::structured::JointTree;
use crate::synth::{image_tensor, PoseSample};
use crate::tensor::Tensor;

/// `sample_id,joint,x,y,score` rows in input pixels.
pub fn estimates_csv(estimates: &[PoseEstimate], tree: &JointTree) -> String {
    let mut out = String::from("sample_id,joint,x,y,score\n");
    for (i, e) in estimates.iter().enumerate() {
        for j in 0..tree.len() {
            let [x, y] = e.pixels[j];
            let _ = writeln!(out, "{i},{},{x},{y},{}", tree.name(j), e.peaks[j]);
        }
    }
    out
}

/// Runs the model over `samples` in batches and returns one score set each.
pub fn score_samples(model: &PoseNet<f32>, samples: &[PoseSample], batch_size: usize) -> Result<Vec<ScoreMapSet>> {
    let cfg = model.config();
    let k = model.tree().len();
    let mut out = Vec::with_capacity(samples.len());
    for chunk in samples.chunks(batch_size.max(1)) {
        let images: Vec<Tensor<f32>> = chunk.iter().map(image_tensor).collect();
        let scores = model.predict(&Tensor::stack(&images)?)?;
        for n in 0..chunk.len() {
            out.push(ScoreMapSet::from_tensor(&scores, n, k, cfg.mixtures, cfg.downsample)?);
        }
    }
    Ok(out)
}

/// Decodes every score set, in parallel across samples.
pub fn decode_all(scores: &[ScoreMapSet], params: &PairwiseParams, tree: &JointTree, mode: DecodeMode) -> Result<Vec<PoseEstimate>> {
    scores.par_iter().map(|s| decode(s, params, tree, mode)).collect()
}

/// Mean strict PCP of `model` on `samples` under a decoding mode.
pub fn evaluate_pcp(
    model: &PoseNet<f32>,
    samples: &[PoseSample],
    params: &PairwiseParams,
    mode: DecodeMode,
) -> Result<PcpReport> {
    let tree = model.tree();
    let scores = score_samples(model, samples, 16)?;
    let est: Vec<Vec<[f64; 2]>> = decode_all(&scores, params, tree, mode)?.into_iter().map(|e| e.pixels).collect();
    let truth: Vec<Vec<[f64; 2]>> = samples.iter().map(|s| s.joints.clone()).collect();
    pcp_strict(&est, &truth, &limbs_for_tree(tree))
}
