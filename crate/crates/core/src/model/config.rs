use std::fmt;
use std::str::FromStr;

use crate::error::{Error, Result};
use crate::structured::{JointTree, LayerDesc};

/// Which parts of the structured layer are active.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum Variant {
    /// Per-joint features go straight to prediction; no transform kernels.
    Baseline,
    /// Messages flow leaves-to-root in the first branch only.
    SingleDirection,
    /// Both branches pass messages, in opposite directions.
    BiDirection,
}

impl Variant {
    pub const ALL: [Variant; 3] = [Variant::Baseline, Variant::SingleDirection, Variant::BiDirection];

    pub fn as_str(self) -> &'static str {
        match self {
            Variant::Baseline => "baseline",
            Variant::SingleDirection => "single-direction",
            Variant::BiDirection => "bi-direction",
        }
    }
}

impl fmt::Display for Variant {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Variant {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Variant::ALL
            .into_iter()
            .find(|v| v.as_str() == s)
            .ok_or_else(|| Error::Config(format!("unknown variant {s:?}")))
    }
}

/// One element of the shared trunk. Every conv is followed by a relu.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum BackboneLayer {
    /// Stride-1, same-padded `kernel x kernel` convolution.
    Conv { kernel: usize, out: usize },
    /// 2x2, stride-2 max pooling.
    Pool,
}

/// Parses a trunk description such as `"c3:16 p c3:32 p c3:64 c3:64"`.
pub fn parse_backbone(s: &str) -> Result<Vec<BackboneLayer>> {
    s.split_whitespace()
        .map(|tok| {
            if tok == "p" {
                return Ok(BackboneLayer::Pool);
            }
            let bad = || Error::Config(format!("bad backbone layer {tok:?} (want `p` or `c<k>:<out>`)"));
            let (k, out) = tok.strip_prefix('c').and_then(|r| r.split_once(':')).ok_or_else(bad)?;
            let kernel: usize = k.parse().map_err(|_| bad())?;
            let out: usize = out.parse().map_err(|_| bad())?;
            if kernel % 2 == 0 || out == 0 {
                return Err(bad());
            }
            Ok(BackboneLayer::Conv { kernel, out })
        })
        .collect()
}

pub fn format_backbone(layers: &[BackboneLayer]) -> String {
    layers
        .iter()
        .map(|l| match l {
            BackboneLayer::Conv { kernel, out } => format!("c{kernel}:{out}"),
            BackboneLayer::Pool => "p".to_string(),
        })
        .collect::<Vec<_>>()
        .join(" ")
}

/// Architecture and objective settings of a [`PoseNet`](super::PoseNet).
#[derive(Clone, Debug, PartialEq)]
pub struct ModelConfig {
    /// Side of the square input image in pixels.
    pub input_size: usize,
    pub in_channels: usize,
    /// Shared trunk; the last conv plays the role of fcn6.
    pub backbone: Vec<BackboneLayer>,
    /// Input pixels per score-map cell; must equal `2^pools`.
    pub downsample: usize,
    /// Feature channels per joint per branch.
    pub joint_channels: usize,
    pub tree: String,
    /// Transform kernels per message hop.
    pub stack_depth: usize,
    pub kernel_size: usize,
    /// Relu after the last kernel of every stack as well.
    pub final_relu: bool,
    /// Score channels per joint.
    pub mixtures: usize,
    pub dropout: f64,
    /// Fraction of background pixels supervised per epoch.
    pub negative_keep: f64,
    /// Positive label disk radius, in score-map cells.
    pub label_radius: f64,
    pub variant: Variant,
}

impl Default for ModelConfig {
    fn default() -> Self {
        ModelConfig {
            input_size: 64,
            in_channels: 1,
            backbone: parse_backbone("c3:16 p c3:32 p c3:64 c3:64").expect("valid"),
            downsample: 4,
            joint_channels: 16,
            tree: "desk14".into(),
            stack_depth: 2,
            kernel_size: 7,
            final_relu: false,
            mixtures: 1,
            dropout: 0.1,
            negative_keep: 0.0005,
            label_radius: 1.0,
            variant: Variant::BiDirection,
        }
    }
}

impl ModelConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Config(m));
        if self.input_size == 0 || self.in_channels == 0 {
            return bad("input_size and in_channels must be positive".into());
        }
        if !self.backbone.iter().any(|l| matches!(l, BackboneLayer::Conv { .. })) {
            return bad("backbone needs at least one conv layer".into());
        }
        if !matches!(self.backbone.last(), Some(BackboneLayer::Conv { .. })) {
            return bad("backbone must end with a conv layer".into());
        }
        let pools = self.backbone.iter().filter(|l| **l == BackboneLayer::Pool).count();
        if self.downsample != 1 << pools {
            return bad(format!(
                "downsample {} does not match {pools} pooling layers",
                self.downsample
            ));
        }
        if self.input_size % self.downsample != 0 {
            return bad(format!(
                "input_size {} is not divisible by downsample {}",
                self.input_size, self.downsample
            ));
        }
        if self.joint_channels == 0 || self.mixtures == 0 {
            return bad("joint_channels and mixtures must be positive".into());
        }
        if self.stack_depth == 0 {
            return bad("stack_depth must be at least 1".into());
        }
        if self.kernel_size % 2 == 0 {
            return bad(format!("kernel_size must be odd, got {}", self.kernel_size));
        }
        if !(0.0..1.0).contains(&self.dropout) {
            return bad(format!("dropout must be in [0, 1), got {}", self.dropout));
        }
        if !(self.negative_keep > 0.0 && self.negative_keep <= 1.0) {
            return bad(format!("negative_keep must be in (0, 1], got {}", self.negative_keep));
        }
        if !(self.label_radius >= 0.0) {
            return bad("label_radius must be non-negative".into());
        }
        self.joint_tree()?;
        Ok(())
    }

    pub fn joint_tree(&self) -> Result<JointTree> {
        JointTree::by_name(&self.tree)
    }

    pub fn map_size(&self) -> usize {
        self.input_size / self.downsample
    }

    /// Score channels: `K * M` joint channels plus background.
    pub fn num_classes(&self) -> Result<usize> {
        Ok(self.joint_tree()?.len() * self.mixtures + 1)
    }

    /// Output channels of the last trunk conv.
    pub fn shared_channels(&self) -> usize {
        self.backbone
            .iter()
            .rev()
            .find_map(|l| match l {
                BackboneLayer::Conv { out, .. } => Some(*out),
                BackboneLayer::Pool => None,
            })
            .unwrap_or(0)
    }

    /// The network as kernel/stride descriptors, for receptive-field reports:
    /// trunk, the 1x1 per-joint bank, then one transform stack.
    pub fn layer_descriptors(&self) -> Vec<LayerDesc> {
        let mut out = Vec::new();
        let (mut conv, mut pool) = (0, 0);
        let convs = self.backbone.iter().filter(|l| matches!(l, BackboneLayer::Conv { .. })).count();
        for l in &self.backbone {
            match l {
                BackboneLayer::Conv { kernel, .. } => {
                    conv += 1;
                    let name = if conv == convs { "fcn6".to_string() } else { format!("conv{conv}") };
                    out.push(LayerDesc::new(name, *kernel, 1));
                }
                BackboneLayer::Pool => {
                    pool += 1;
                    out.push(LayerDesc::new(format!("pool{pool}"), 2, 2));
                }
            }
        }
        out.push(LayerDesc::new("fcn7", 1, 1));
        if self.variant != Variant::Baseline {
            for t in 1..=self.stack_depth {
                out.push(LayerDesc::new(format!("msp{t}"), self.kernel_size, 1));
            }
        }
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn default_is_valid() {
        let c = ModelConfig::default();
        c.validate().unwrap();
        assert_eq!(c.map_size(), 16);
        assert_eq!(c.num_classes().unwrap(), 15);
        assert_eq!(c.shared_channels(), 64);
    }

    #[test]
    fn backbone_round_trip() {
        let s = "c3:16 p c3:32 p c3:64 c3:64";
        assert_eq!(format_backbone(&parse_backbone(s).unwrap()), s);
        assert!(parse_backbone("c4:16").is_err());
        assert!(parse_backbone("x").is_err());
    }

    #[test]
    fn rejects_inconsistent_downsample() {
        let c = ModelConfig { downsample: 8, ..ModelConfig::default() };
        assert!(c.validate().is_err());
        let c = ModelConfig { input_size: 66, ..ModelConfig::default() };
        assert!(c.validate().is_err());
    }

    #[test]
    fn variant_names() {
        for v in Variant::ALL {
            assert_eq!(v.as_str().parse::<Variant>().unwrap(), v);
        }
    }
}
