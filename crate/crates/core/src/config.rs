//! `key = value` run configuration with `[model]`, `[train]`, `[data]` and
//! `[infer]` sections.
//!
//! ```
//! use structpose::config::RunConfig;
//!
//! let cfg = RunConfig::parse("[model]\nvariant = baseline\n[train]\nepochs = 3\n").unwrap();
//! assert_eq!(cfg.train.epochs, 3);
//! assert!(RunConfig::parse("[model]\nwidth = 3\n").is_err());
//! ```

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::str::FromStr;

use crate::error::{Error, Result};
use crate::infer::{DecodeMode, PoseScale, DEFAULT_PAIRWISE_WEIGHTS};
use crate::model::{format_backbone, parse_backbone, ModelConfig, TrainConfig};
use crate::synth::{EdgeSpec, SkeletonSpec};

/// Dataset generation settings. The skeleton's tree and canvas always follow
/// `[model] tree` and `[model] input_size`.
#[derive(Clone, Debug, PartialEq)]
pub struct DataConfig {
    pub skeleton: SkeletonSpec,
    pub train_count: usize,
    pub test_count: usize,
    pub seed: u64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct InferConfig {
    pub decode: DecodeMode,
    pub pairwise_weights: [f64; 2],
    pub pdj_thresholds: Vec<f64>,
    pub pose_scale: PoseScale,
    pub batch_size: usize,
}

impl Default for InferConfig {
    fn default() -> Self {
        InferConfig {
            decode: DecodeMode::TreeDp,
            pairwise_weights: DEFAULT_PAIRWISE_WEIGHTS,
            pdj_thresholds: (0..=10).map(|i| i as f64 * 0.05).collect(),
            pose_scale: PoseScale::BoxDiagonal,
            batch_size: 16,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct RunConfig {
    pub model: ModelConfig,
    pub train: TrainConfig,
    pub data: DataConfig,
    pub infer: InferConfig,
}

const SMALL: &str = include_str!("../../../configs/small.ini");
const TINY: &str = include_str!("../../../configs/tiny.ini");

/// Names accepted by [`RunConfig::preset`].
pub const PRESETS: [&str; 3] = ["default", "small", "tiny"];

impl Default for RunConfig {
    fn default() -> Self {
        let model = ModelConfig::default();
        let skeleton = SkeletonSpec::preset(&model.tree, model.input_size).expect("default tree exists");
        RunConfig {
            model,
            train: TrainConfig::default(),
            data: DataConfig { skeleton, train_count: 2000, test_count: 500, seed: 0 },
            infer: InferConfig::default(),
        }
    }
}

type Section = BTreeMap<String, (usize, String)>;

fn split_sections(text: &str) -> Result<BTreeMap<String, Section>> {
    let mut sections: BTreeMap<String, Section> = BTreeMap::new();
    let mut current: Option<String> = None;
    for (i, raw) in text.lines().enumerate() {
        let line_no = i + 1;
        let line = raw.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        if let Some(name) = line.strip_prefix('[').and_then(|l| l.strip_suffix(']')) {
            let name = name.trim();
            if !["model", "train", "data", "infer"].contains(&name) {
                return Err(Error::Config(format!("line {line_no}: unknown section [{name}]")));
            }
            sections.entry(name.to_string()).or_default();
            current = Some(name.to_string());
            continue;
        }
        let (key, value) = line
            .split_once('=')
            .ok_or_else(|| Error::Config(format!("line {line_no}: expected `key = value`, got {line:?}")))?;
        let section = current
            .as_ref()
            .ok_or_else(|| Error::Config(format!("line {line_no}: key outside of any section")))?;
        let entry = sections.get_mut(section).expect("created with the header");
        let key = key.trim().to_string();
        if let Some((prev, _)) = entry.insert(key.clone(), (line_no, value.trim().to_string())) {
            return Err(Error::Config(format!("line {line_no}: [{section}] {key} already set on line {prev}")));
        }
    }
    Ok(sections)
}

fn parse_value<T: FromStr>(section: &str, key: &str, (line, v): &(usize, String)) -> Result<T> {
    v.parse()
        .map_err(|_| Error::Config(format!("line {line}: bad value {v:?} for [{section}] {key}")))
}

fn parse_list(section: &str, key: &str, (line, v): &(usize, String)) -> Result<Vec<f64>> {
    v.split(',')
        .map(|s| {
            s.trim()
                .parse()
                .map_err(|_| Error::Config(format!("line {line}: bad number {s:?} in [{section}] {key}")))
        })
        .collect()
}

fn parse_pair(section: &str, key: &str, entry: &(usize, String)) -> Result<(f64, f64)> {
    match parse_list(section, key, entry)?[..] {
        [a, b] => Ok((a, b)),
        _ => Err(Error::Config(format!("line {}: [{section}] {key} wants two numbers `a, b`", entry.0))),
    }
}

/// Consumes the keys of one section; whatever is left over is unknown.
struct Reader {
    name: &'static str,
    keys: Section,
}

impl Reader {
    fn take(&mut self, key: &str) -> Option<(usize, String)> {
        self.keys.remove(key)
    }

    fn set<T: FromStr>(&mut self, key: &str, slot: &mut T) -> Result<()> {
        if let Some(e) = self.take(key) {
            *slot = parse_value(self.name, key, &e)?;
        }
        Ok(())
    }

    fn set_pair(&mut self, key: &str, slot: &mut (f64, f64)) -> Result<()> {
        if let Some(e) = self.take(key) {
            *slot = parse_pair(self.name, key, &e)?;
        }
        Ok(())
    }

    fn finish(self) -> Result<()> {
        match self.keys.into_iter().next() {
            Some((key, (line, _))) => Err(Error::Config(format!("line {line}: unknown key [{}] {key}", self.name))),
            None => Ok(()),
        }
    }
}

impl RunConfig {
    /// Parses and validates a configuration; omitted keys keep their
    /// defaults.
    pub fn parse(text: &str) -> Result<Self> {
        let mut sections = split_sections(text)?;
        let mut reader = |name: &'static str| Reader {
            name,
            keys: sections.remove(name).unwrap_or_default(),
        };
        let mut cfg = RunConfig::default();

        let mut r = reader("model");
        let m = &mut cfg.model;
        r.set("input_size", &mut m.input_size)?;
        r.set("in_channels", &mut m.in_channels)?;
        if let Some(e) = r.take("backbone") {
            m.backbone = parse_backbone(&e.1).map_err(|err| Error::Config(format!("line {}: {err}", e.0)))?;
        }
        r.set("downsample", &mut m.downsample)?;
        r.set("joint_channels", &mut m.joint_channels)?;
        r.set("tree", &mut m.tree)?;
        r.set("stack_depth", &mut m.stack_depth)?;
        r.set("kernel_size", &mut m.kernel_size)?;
        r.set("final_relu", &mut m.final_relu)?;
        r.set("mixtures", &mut m.mixtures)?;
        r.set("dropout", &mut m.dropout)?;
        r.set("negative_keep", &mut m.negative_keep)?;
        r.set("label_radius", &mut m.label_radius)?;
        if let Some(e) = r.take("variant") {
            m.variant = e.1.parse().map_err(|err| Error::Config(format!("line {}: {err}", e.0)))?;
        }
        r.finish()?;

        let mut r = reader("train");
        let t = &mut cfg.train;
        r.set("epochs", &mut t.epochs)?;
        r.set("batch_size", &mut t.batch_size)?;
        r.set("lr_backbone", &mut t.lr_backbone)?;
        r.set("lr_new", &mut t.lr_new)?;
        r.set("momentum", &mut t.momentum)?;
        r.set("seed", &mut t.seed)?;
        r.finish()?;

        cfg.model.validate()?;
        let tree = cfg.model.joint_tree()?;
        let mut r = reader("data");
        let d = &mut cfg.data;
        d.skeleton = SkeletonSpec::preset(&cfg.model.tree, cfg.model.input_size)?;
        let s = &mut d.skeleton;
        r.set("train_count", &mut d.train_count)?;
        r.set("test_count", &mut d.test_count)?;
        r.set("seed", &mut d.seed)?;
        r.set("length_scale", &mut s.length_scale)?;
        r.set("spread_scale", &mut s.spread_scale)?;
        r.set("root_angle", &mut s.root_angle)?;
        r.set("root_spread", &mut s.root_spread)?;
        r.set("margin", &mut s.margin)?;
        r.set_pair("thickness", &mut s.thickness)?;
        r.set_pair("head_radius", &mut s.head_radius)?;
        r.set_pair("figure_intensity", &mut s.figure_intensity)?;
        r.set_pair("background_intensity", &mut s.background_intensity)?;
        r.set("noise_std", &mut s.noise_std)?;
        if let Some(e) = r.take("distractors") {
            let (lo, hi) = parse_pair("data", "distractors", &e)?;
            if lo < 0.0 || hi < 0.0 || lo.fract() != 0.0 || hi.fract() != 0.0 {
                return Err(Error::Config(format!("line {}: [data] distractors wants two counts", e.0)));
            }
            s.distractors = (lo as usize, hi as usize);
        }
        r.set("multi_figure_prob", &mut s.multi_figure_prob)?;
        r.set("max_attempts", &mut s.max_attempts)?;
        let base = if cfg.model.tree == "desk26" { crate::structured::JointTree::desk14() } else { tree.clone() };
        for j in 0..base.len() {
            let key = format!("edge.{}", base.name(j));
            if let Some(e) = r.take(&key) {
                match parse_list("data", &key, &e)?[..] {
                    [lo, hi, angle, spread] => s.edges[j] = EdgeSpec { length: (lo, hi), angle, spread },
                    _ => {
                        return Err(Error::Config(format!(
                            "line {}: [data] {key} wants `min_length, max_length, angle, spread`",
                            e.0
                        )))
                    }
                }
            }
        }
        r.finish()?;

        let mut r = reader("infer");
        let inf = &mut cfg.infer;
        if let Some(e) = r.take("decode") {
            inf.decode = e.1.parse().map_err(|err| Error::Config(format!("line {}: {err}", e.0)))?;
        }
        if let Some(e) = r.take("pairwise_weights") {
            let (a, b) = parse_pair("infer", "pairwise_weights", &e)?;
            inf.pairwise_weights = [a, b];
        }
        if let Some(e) = r.take("pdj_thresholds") {
            inf.pdj_thresholds = parse_list("infer", "pdj_thresholds", &e)?;
        }
        if let Some(e) = r.take("pose_scale") {
            inf.pose_scale = parse_pose_scale(&e.1, &tree)
                .map_err(|err| Error::Config(format!("line {}: {err}", e.0)))?;
        }
        r.set("batch_size", &mut inf.batch_size)?;
        r.finish()?;

        cfg.validate()?;
        Ok(cfg)
    }

    /// A bundled configuration by name.
    pub fn preset(name: &str) -> Result<Self> {
        match name {
            "default" => Ok(RunConfig::default()),
            "small" => RunConfig::parse(SMALL),
            "tiny" => RunConfig::parse(TINY),
            _ => Err(Error::Config(format!(
                "unknown preset {name:?} (expected one of {})",
                PRESETS.join(", ")
            ))),
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.model.validate()?;
        self.train.validate()?;
        self.data.skeleton.validate()?;
        if self.data.skeleton.tree != self.model.tree || self.data.skeleton.canvas != self.model.input_size {
            return Err(Error::Config("skeleton tree and canvas must follow the model".into()));
        }
        if self.data.train_count == 0 || self.data.test_count == 0 {
            return Err(Error::Config("train_count and test_count must be positive".into()));
        }
        let i = &self.infer;
        if !(i.pairwise_weights.iter().all(|w| *w >= 0.0 && w.is_finite())) {
            return Err(Error::Config("pairwise_weights must be non-negative".into()));
        }
        if i.pdj_thresholds.is_empty()
            || i.pdj_thresholds.iter().any(|t| !(*t >= 0.0))
            || i.pdj_thresholds.windows(2).any(|w| !(w[0] <= w[1]))
        {
            return Err(Error::Config("pdj_thresholds must be non-empty, non-negative and ascending".into()));
        }
        if i.batch_size == 0 {
            return Err(Error::Config("[infer] batch_size must be positive".into()));
        }
        if let PoseScale::Joints(a, b) = i.pose_scale {
            let k = self.model.joint_tree()?.len();
            if a >= k || b >= k || a == b {
                return Err(Error::Config("pose_scale joints must be two distinct joints".into()));
            }
        }
        Ok(())
    }

    /// Every key with its current value, in a form [`RunConfig::parse`]
    /// reads back to an equal configuration.
    pub fn to_ini(&self) -> String {
        let mut o = String::new();
        let m = &self.model;
        let _ = writeln!(o, "[model]");
        let _ = writeln!(o, "input_size = {}", m.input_size);
        let _ = writeln!(o, "in_channels = {}", m.in_channels);
        let _ = writeln!(o, "# `c<kernel>:<channels>` convs and `p` 2x2 max pools; the last conv is fcn6");
        let _ = writeln!(o, "backbone = {}", format_backbone(&m.backbone));
        let _ = writeln!(o, "downsample = {}", m.downsample);
        let _ = writeln!(o, "joint_channels = {}", m.joint_channels);
        let _ = writeln!(o, "# desk14, desk26, chain2, chain3");
        let _ = writeln!(o, "tree = {}", m.tree);
        let _ = writeln!(o, "stack_depth = {}", m.stack_depth);
        let _ = writeln!(o, "kernel_size = {}", m.kernel_size);
        let _ = writeln!(o, "final_relu = {}", m.final_relu);
        let _ = writeln!(o, "mixtures = {}", m.mixtures);
        let _ = writeln!(o, "dropout = {}", m.dropout);
        let _ = writeln!(o, "negative_keep = {}", m.negative_keep);
        let _ = writeln!(o, "label_radius = {}", m.label_radius);
        let _ = writeln!(o, "# baseline, single-direction, bi-direction");
        let _ = writeln!(o, "variant = {}", m.variant);

        let t = &self.train;
        let _ = writeln!(o, "\n[train]");
        let _ = writeln!(o, "epochs = {}", t.epochs);
        let _ = writeln!(o, "batch_size = {}", t.batch_size);
        let _ = writeln!(o, "lr_backbone = {}", t.lr_backbone);
        let _ = writeln!(o, "lr_new = {}", t.lr_new);
        let _ = writeln!(o, "momentum = {}", t.momentum);
        let _ = writeln!(o, "seed = {}", t.seed);

        let d = &self.data;
        let s = &d.skeleton;
        let _ = writeln!(o, "\n[data]");
        let _ = writeln!(o, "train_count = {}", d.train_count);
        let _ = writeln!(o, "test_count = {}", d.test_count);
        let _ = writeln!(o, "seed = {}", d.seed);
        let _ = writeln!(o, "length_scale = {}", s.length_scale);
        let _ = writeln!(o, "spread_scale = {}", s.spread_scale);
        let _ = writeln!(o, "root_angle = {}", s.root_angle);
        let _ = writeln!(o, "root_spread = {}", s.root_spread);
        let _ = writeln!(o, "margin = {}", s.margin);
        let _ = writeln!(o, "thickness = {}, {}", s.thickness.0, s.thickness.1);
        let _ = writeln!(o, "head_radius = {}, {}", s.head_radius.0, s.head_radius.1);
        let _ = writeln!(o, "figure_intensity = {}, {}", s.figure_intensity.0, s.figure_intensity.1);
        let _ = writeln!(o, "background_intensity = {}, {}", s.background_intensity.0, s.background_intensity.1);
        let _ = writeln!(o, "noise_std = {}", s.noise_std);
        let _ = writeln!(o, "distractors = {}, {}", s.distractors.0, s.distractors.1);
        let _ = writeln!(o, "multi_figure_prob = {}", s.multi_figure_prob);
        let _ = writeln!(o, "max_attempts = {}", s.max_attempts);
        let _ = writeln!(o, "# edge.<joint> = min_length, max_length, angle, spread (pixels at 64, radians)");
        let base = if m.tree == "desk26" {
            crate::structured::JointTree::desk14()
        } else {
            m.joint_tree().expect("validated")
        };
        for (j, e) in s.edges.iter().enumerate() {
            if base.parent(j).is_some() {
                let _ = writeln!(
                    o,
                    "edge.{} = {}, {}, {}, {}",
                    base.name(j),
                    e.length.0,
                    e.length.1,
                    e.angle,
                    e.spread
                );
            }
        }

        let i = &self.infer;
        let _ = writeln!(o, "\n[infer]");
        let _ = writeln!(o, "# argmax, tree_dp, gdt");
        let _ = writeln!(o, "decode = {}", i.decode);
        let _ = writeln!(o, "pairwise_weights = {}, {}", i.pairwise_weights[0], i.pairwise_weights[1]);
        let thresholds: Vec<String> = i.pdj_thresholds.iter().map(|t| t.to_string()).collect();
        let _ = writeln!(o, "pdj_thresholds = {}", thresholds.join(", "));
        let scale = match i.pose_scale {
            PoseScale::BoxDiagonal => "box_diagonal".to_string(),
            PoseScale::Joints(a, b) => {
                let tree = m.joint_tree().expect("validated");
                format!("{}:{}", tree.name(a), tree.name(b))
            }
        };
        let _ = writeln!(o, "# box_diagonal or <joint>:<joint>");
        let _ = writeln!(o, "pose_scale = {scale}");
        let _ = writeln!(o, "batch_size = {}", i.batch_size);
        o
    }
}

fn parse_pose_scale(s: &str, tree: &crate::structured::JointTree) -> Result<PoseScale> {
    if s == "box_diagonal" {
        return Ok(PoseScale::BoxDiagonal);
    }
    let (a, b) = s
        .split_once(':')
        .ok_or_else(|| Error::Config(format!("bad pose_scale {s:?} (want box_diagonal or <joint>:<joint>)")))?;
    let idx = |n: &str| tree.index_of(n.trim()).ok_or_else(|| Error::Config(format!("unknown joint {n:?}")));
    Ok(PoseScale::Joints(idx(a)?, idx(b)?))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::Variant;

    #[test]
    fn dump_round_trips() {
        for name in PRESETS {
            let cfg = RunConfig::preset(name).unwrap();
            assert_eq!(RunConfig::parse(&cfg.to_ini()).unwrap(), cfg, "{name}");
        }
        let mut cfg = RunConfig::parse("[model]\ntree = chain3\nmixtures = 2\n[infer]\npose_scale = j0:j2\n").unwrap();
        assert_eq!(cfg.infer.pose_scale, PoseScale::Joints(0, 2));
        cfg.data.skeleton.edges[1].spread = 0.125;
        assert_eq!(RunConfig::parse(&cfg.to_ini()).unwrap(), cfg);
    }

    #[test]
    fn skeleton_follows_model() {
        let cfg = RunConfig::parse("[model]\ninput_size = 32\nbackbone = c3:4 p c3:4\ndownsample = 2\n").unwrap();
        assert_eq!(cfg.data.skeleton.canvas, 32);
        assert_eq!(cfg.data.skeleton.length_scale, 0.5);
    }

    #[test]
    fn overrides_apply() {
        let cfg = RunConfig::parse(
            "# comment\n[model]\nvariant = single-direction # trailing\n[data]\nthickness = 1, 2\nedge.head = 1, 2, 3, 0.5\ndistractors = 0, 0\n[infer]\ndecode = gdt\n",
        )
        .unwrap();
        assert_eq!(cfg.model.variant, Variant::SingleDirection);
        assert_eq!(cfg.data.skeleton.thickness, (1.0, 2.0));
        assert_eq!(cfg.data.skeleton.edges[0], EdgeSpec { length: (1.0, 2.0), angle: 3.0, spread: 0.5 });
        assert_eq!(cfg.data.skeleton.distractors, (0, 0));
        assert_eq!(cfg.infer.decode, DecodeMode::Gdt);
    }

    #[test]
    fn rejects_bad_input() {
        for text in [
            "[model]\nbogus = 1\n",
            "[nope]\n",
            "epochs = 3\n",
            "[train]\nepochs = three\n",
            "[train]\nepochs = 3\nepochs = 4\n",
            "[model]\nkernel_size = 4\n",
            "[model]\nvariant = sideways\n",
            "[data]\nthickness = 1\n",
            "[data]\nedge.nose = 1, 2, 3, 4\n",
            "[data]\ndistractors = 1.5, 2\n",
            "[infer]\npdj_thresholds = 0.2, 0.1\n",
            "[infer]\npose_scale = head:toe\n",
            "[model]\nnoequals\n",
        ] {
            let err = RunConfig::parse(text).unwrap_err();
            assert!(matches!(err, Error::Config(_)), "{text:?} gave {err}");
        }
        assert!(RunConfig::preset("huge").is_err());
    }

    #[test]
    fn error_names_the_line() {
        let err = RunConfig::parse("[model]\n\ntree = desk14\nwidth = 3\n").unwrap_err();
        assert!(err.to_string().contains("line 4"), "{err}");
        assert!(err.to_string().contains("width"), "{err}");
    }
}
