//! Receptive-field bookkeeping for a sequence of conv/pool layers.

use std::fmt::Write as _;

/// One layer as seen by the receptive-field recurrence.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct LayerDesc {
    pub name: String,
    pub kernel: usize,
    pub stride: usize,
}

impl LayerDesc {
    pub fn new(name: impl Into<String>, kernel: usize, stride: usize) -> Self {
        LayerDesc {
            name: name.into(),
            kernel,
            stride,
        }
    }
}

/// Receptive field after a layer.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct RfRow {
    pub name: String,
    pub kernel: usize,
    pub stride: usize,
    /// Effective stride of the layer's output, in input pixels.
    pub jump: usize,
    pub rf: usize,
}

/// Applies `rf += (k - 1) * jump; jump *= stride` layer by layer.
pub fn receptive_field_of(layers: &[LayerDesc]) -> Vec<RfRow> {
    let (mut rf, mut jump) = (1usize, 1usize);
    layers
        .iter()
        .map(|l| {
            rf += (l.kernel - 1) * jump;
            jump *= l.stride;
            RfRow {
                name: l.name.clone(),
                kernel: l.kernel,
                stride: l.stride,
                jump,
                rf,
            }
        })
        .collect()
}

/// The VGG-16 trunk with pool4/pool5 removed, a 7x7 fcn6 and 1x1 fcn7,
/// followed by `transforms` stacked 7x7 transform kernels.
pub fn paper_table1(transforms: usize) -> Vec<LayerDesc> {
    let mut layers = Vec::new();
    let conv = |layers: &mut Vec<LayerDesc>, block: usize, count: usize| {
        for i in 1..=count {
            layers.push(LayerDesc::new(format!("conv{block}_{i}"), 3, 1));
        }
    };
    conv(&mut layers, 1, 2);
    layers.push(LayerDesc::new("pool1", 2, 2));
    conv(&mut layers, 2, 2);
    layers.push(LayerDesc::new("pool2", 2, 2));
    conv(&mut layers, 3, 3);
    layers.push(LayerDesc::new("pool3", 2, 2));
    conv(&mut layers, 4, 3);
    conv(&mut layers, 5, 3);
    layers.push(LayerDesc::new("fcn6", 7, 1));
    layers.push(LayerDesc::new("fcn7", 1, 1));
    for t in 1..=transforms {
        layers.push(LayerDesc::new(format!("msp{t}"), 7, 1));
    }
    layers
}

/// Aligned plain-text table: layer, kernel, stride, jump, rf.
pub fn format_rf_table(rows: &[RfRow]) -> String {
    let width = rows.iter().map(|r| r.name.len()).max().unwrap_or(0).max(5);
    let mut out = String::new();
    let _ = writeln!(
        out,
        "{:<width$}  {:>6}  {:>6}  {:>6}  {:>6}",
        "layer", "kernel", "stride", "jump", "rf"
    );
    for r in rows {
        let _ = writeln!(
            out,
            "{:<width$}  {:>6}  {:>6}  {:>6}  {:>6}",
            r.name, r.kernel, r.stride, r.jump, r.rf
        );
    }
    out
}
