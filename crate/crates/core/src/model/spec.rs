use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::param::ParamSet;
use crate::tensor::Real;

/// One backbone stage: `convs` 3x3 same-padded convolutions with ReLU, all
/// `width` channels wide, followed by a 2x2 max pool.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Block {
    pub convs: usize,
    pub width: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum HeadKind {
    /// Channel + spatial attention feeding bilinear pooling.
    Csab,
    /// Global average pooling, dropout, dense.
    Plain,
}

impl HeadKind {
    pub fn as_str(self) -> &'static str {
        match self {
            HeadKind::Csab => "csab",
            HeadKind::Plain => "plain",
        }
    }

    pub fn parse(s: &str) -> Result<Self> {
        match s {
            "csab" => Ok(HeadKind::Csab),
            "plain" => Ok(HeadKind::Plain),
            other => Err(Error::InvalidArgument(format!(
                "unknown head `{other}` (expected csab or plain)"
            ))),
        }
    }
}

pub const INPUT_CHANNELS: usize = 3;
pub const SPATIAL_KERNEL: usize = 7;

/// Declarative architecture description.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelSpec {
    /// Short identifier of the backbone preset (`tiny`, `vgg16`, or `custom`).
    pub backbone_name: String,
    /// `(height, width)` of the RGB input.
    pub input_size: (usize, usize),
    pub backbone: Vec<Block>,
    pub head: HeadKind,
    pub num_classes: usize,
    /// Divide the global max pool by `H * W` inside channel attention.
    pub gmp_literal_scale: bool,
    /// Dropout rate of the plain head at train time.
    pub dropout: f64,
}

impl ModelSpec {
    /// Desk-scale default: 32x32 input, two blocks of 8 and 16 channels.
    pub fn tiny(head: HeadKind) -> Self {
        Self {
            backbone_name: "tiny".into(),
            input_size: (32, 32),
            backbone: vec![Block { convs: 2, width: 8 }, Block { convs: 2, width: 16 }],
            head,
            num_classes: 6,
            gmp_literal_scale: true,
            dropout: 0.5,
        }
    }

    /// The 13-convolution VGG-16 feature extractor at 224x224.
    pub fn vgg16(head: HeadKind) -> Self {
        let b = |convs, width| Block { convs, width };
        Self {
            backbone_name: "vgg16".into(),
            input_size: (224, 224),
            backbone: vec![b(2, 64), b(2, 128), b(3, 256), b(3, 512), b(3, 512)],
            head,
            num_classes: 6,
            gmp_literal_scale: true,
            dropout: 0.5,
        }
    }

    pub fn preset(name: &str, head: HeadKind) -> Result<Self> {
        match name {
            "tiny" => Ok(Self::tiny(head)),
            "vgg16" => Ok(Self::vgg16(head)),
            other => Err(Error::InvalidArgument(format!(
                "unknown spec `{other}` (expected tiny or vgg16)"
            ))),
        }
    }

    pub fn with_head(&self, head: HeadKind) -> Self {
        Self {
            head,
            ..self.clone()
        }
    }

    pub fn validate(&self) -> Result<()> {
        let (h, w) = self.input_size;
        let div = 1usize << self.backbone.len();
        if h == 0 || w == 0 || h % div != 0 || w % div != 0 {
            return Err(Error::InvalidArgument(format!(
                "input size {h}x{w} not divisible by 2^{} = {div}",
                self.backbone.len()
            )));
        }
        if self.num_classes < 2 {
            return Err(Error::InvalidArgument(format!(
                "num_classes must be at least 2, got {}",
                self.num_classes
            )));
        }
        if let Some(b) = self.backbone.iter().find(|b| b.convs == 0 || b.width == 0) {
            return Err(Error::InvalidArgument(format!("degenerate backbone block {b:?}")));
        }
        if !(0.0..1.0).contains(&self.dropout) {
            return Err(Error::InvalidArgument(format!("dropout {} not in [0, 1)", self.dropout)));
        }
        Ok(())
    }

    /// Channel count `C` of the backbone output.
    pub fn feature_channels(&self) -> usize {
        self.backbone.last().map_or(INPUT_CHANNELS, |b| b.width)
    }

    /// Spatial size `(H, W)` of the backbone output.
    pub fn feature_size(&self) -> (usize, usize) {
        let div = 1 << self.backbone.len();
        (self.input_size.0 / div, self.input_size.1 / div)
    }

    /// Every parameter slot in canonical order.
    /// Backbone names do not depend on the head.
    pub fn param_layout(&self) -> Vec<ParamSlot> {
        let mut out = Vec::new();
        let mut cin = INPUT_CHANNELS;
        for (bi, block) in self.backbone.iter().enumerate() {
            for ci in 0..block.convs {
                let prefix = format!("backbone.block{bi}.conv{ci}");
                out.push(ParamSlot::weight(format!("{prefix}.kernel"), vec![3, 3, cin, block.width], 9 * cin));
                out.push(ParamSlot::bias(format!("{prefix}.bias"), block.width));
                cin = block.width;
            }
        }
        let c = self.feature_channels();
        let k = self.num_classes;
        match self.head {
            HeadKind::Csab => {
                out.push(ParamSlot::weight("head.channel.w1".into(), vec![c, c], c));
                out.push(ParamSlot::bias("head.channel.bias".into(), c));
                let s = SPATIAL_KERNEL;
                out.push(ParamSlot::weight("head.spatial.kernel".into(), vec![s, s, 2, 1], s * s * 2));
                out.push(ParamSlot::bias("head.spatial.bias".into(), 1));
                out.push(ParamSlot::weight("head.bilinear.weights".into(), vec![c * c, k], c * c));
                out.push(ParamSlot::bias("head.bilinear.bias".into(), k));
            }
            HeadKind::Plain => {
                out.push(ParamSlot::weight("head.fc.weights".into(), vec![c, k], c));
                out.push(ParamSlot::bias("head.fc.bias".into(), k));
            }
        }
        out
    }

    /// Verifies that `params` holds exactly the tensors this spec needs.
    pub fn check_params<T: Real>(&self, params: &ParamSet<T>) -> Result<()> {
        let layout = self.param_layout();
        for slot in &layout {
            let p = params.by_name(&slot.name).ok_or_else(|| Error::ParamMismatch {
                name: slot.name.clone(),
                reason: "missing from parameter set".into(),
            })?;
            if p.value.shape() != slot.shape.as_slice() {
                return Err(Error::ParamMismatch {
                    name: slot.name.clone(),
                    reason: format!("shape {:?}, spec expects {:?}", p.value.shape(), slot.shape),
                });
            }
        }
        if let Some(extra) = params.iter().find(|p| !layout.iter().any(|s| s.name == p.name)) {
            return Err(Error::ParamMismatch {
                name: extra.name.clone(),
                reason: "not part of the spec".into(),
            });
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ParamSlot {
    pub name: String,
    pub shape: Vec<usize>,
    pub fan_in: usize,
    pub is_bias: bool,
}

impl ParamSlot {
    fn weight(name: String, shape: Vec<usize>, fan_in: usize) -> Self {
        Self {
            name,
            shape,
            fan_in,
            is_bias: false,
        }
    }

    fn bias(name: String, len: usize) -> Self {
        Self {
            name,
            shape: vec![len],
            fan_in: 0,
            is_bias: true,
        }
    }
}
