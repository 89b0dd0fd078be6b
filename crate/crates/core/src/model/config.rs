//! Model configuration: layer sizes, block count, fusion/refinement variants,
//! and the closed-form parameter count.

use thiserror::Error;

/// How PAN detail is injected into the feature stream.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum FusionKind {
    /// 3x3 PAN projection, concatenation, then two 3x3 convs with GELU
    /// between (the default "enhanced conv" block).
    EnhancedConv,
    /// 1x1 PAN projection, concatenation, single 1x1 conv.
    Conv1x1,
    /// 3x3 PAN projection, 1x1 merge, then a residual channel-attention block.
    ChannelAttn,
    /// 3x3 PAN projection, concatenation, then value and sigmoid-gate 3x3
    /// convs multiplied together.
    GatedConv,
}

impl FusionKind {
    pub fn as_str(&self) -> &'static str {
        match self {
            FusionKind::EnhancedConv => "enhanced_conv",
            FusionKind::Conv1x1 => "conv1x1",
            FusionKind::ChannelAttn => "channel_attn",
            FusionKind::GatedConv => "gated_conv",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        match s {
            "enhanced_conv" => Some(FusionKind::EnhancedConv),
            "conv1x1" => Some(FusionKind::Conv1x1),
            "channel_attn" => Some(FusionKind::ChannelAttn),
            "gated_conv" => Some(FusionKind::GatedConv),
            _ => None,
        }
    }
}

/// How fused features are mapped back to the MS bands.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum RefineKind {
    /// Single 3x3 conv to the output bands (default).
    Conv,
    /// Residual channel-attention block, then the 3x3 conv.
    ChannelAttn,
    /// Single 5x5 conv to the output bands.
    LargeConv,
}

impl RefineKind {
    pub fn as_str(&self) -> &'static str {
        match self {
            RefineKind::Conv => "conv",
            RefineKind::ChannelAttn => "channel_attn",
            RefineKind::LargeConv => "large_conv",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        match s {
            "conv" => Some(RefineKind::Conv),
            "channel_attn" => Some(RefineKind::ChannelAttn),
            "large_conv" => Some(RefineKind::LargeConv),
            _ => None,
        }
    }
}

#[derive(Debug, Error)]
pub enum ModelError {
    #[error("invalid model configuration: {}", .0.join("; "))]
    InvalidConfig(Vec<String>),
    #[error("unknown parameter: {0}")]
    UnknownParameter(String),
    #[error("{op}: expected {want}, got {got}")]
    BadInput { op: &'static str, want: String, got: String },
    #[error(transparent)]
    Tensor(#[from] crate::tensor::TensorError),
}

/// Hyper-parameters of the network.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ModelConfig {
    /// Feature channels C.
    pub channels: usize,
    /// Number of transformer blocks N.
    pub num_blocks: usize,
    /// GDFN expansion factor; the hidden width is `round(C * ffn_expansion)`,
    /// which must come out even (the gate splits it in half).
    pub ffn_expansion: f32,
    /// Attention heads; must divide `channels`.
    pub attn_heads: usize,
    pub fusion_kind: FusionKind,
    pub refine_kind: RefineKind,
    /// Input/output multispectral bands.
    pub ms_bands: usize,
    /// Resolution ratio between PAN and LRMS.
    pub upsample_scale: usize,
    /// Predict a residual over the bicubic-upsampled LRMS.
    pub global_residual: bool,
    /// Apply the fusion block before the transformer body instead of after.
    pub fuse_before_body: bool,
}

impl Default for ModelConfig {
    fn default() -> Self {
        ModelConfig::small()
    }
}

impl ModelConfig {
    /// Small preset: 45,081 parameters.
    pub fn small() -> Self {
        ModelConfig {
            channels: 24,
            num_blocks: 5,
            ffn_expansion: 2.0,
            attn_heads: 1,
            fusion_kind: FusionKind::EnhancedConv,
            refine_kind: RefineKind::Conv,
            ms_bands: 4,
            upsample_scale: 4,
            global_residual: true,
            fuse_before_body: false,
        }
    }

    /// Big preset: 85,098 parameters.
    pub fn big() -> Self {
        ModelConfig { channels: 32, num_blocks: 6, ..ModelConfig::small() }
    }

    pub fn preset(name: &str) -> Option<Self> {
        match name {
            "small" => Some(ModelConfig::small()),
            "big" => Some(ModelConfig::big()),
            _ => None,
        }
    }

    /// GDFN hidden width: `round(C * ffn_expansion)`.
    pub fn expansion_channels(&self) -> usize {
        (self.channels as f64 * f64::from(self.ffn_expansion)).round() as usize
    }

    /// Validate every field, collecting all violations.
    pub fn validate(&self) -> Result<(), ModelError> {
        let mut problems = Vec::new();
        if self.channels == 0 {
            problems.push("channels must be > 0".to_string());
        }
        if self.num_blocks == 0 {
            problems.push("num_blocks must be > 0".to_string());
        }
        if !(self.ffn_expansion > 0.0) || !self.ffn_expansion.is_finite() {
            problems.push(format!(
                "ffn_expansion must be finite and > 0, got {}",
                self.ffn_expansion
            ));
        } else {
            let e = self.expansion_channels();
            if e == 0 || e % 2 != 0 {
                problems.push(format!(
                    "channels * ffn_expansion must round to a positive even integer, got {e}"
                ));
            }
        }
        if self.attn_heads == 0 {
            problems.push("attn_heads must be > 0".to_string());
        } else if self.channels > 0 && self.channels % self.attn_heads != 0 {
            problems.push(format!(
                "attn_heads {} must divide channels {}",
                self.attn_heads, self.channels
            ));
        }
        if self.ms_bands == 0 {
            problems.push("ms_bands must be > 0".to_string());
        }
        if self.upsample_scale == 0 {
            problems.push("upsample_scale must be >= 1".to_string());
        }
        if problems.is_empty() {
            Ok(())
        } else {
            Err(ModelError::InvalidConfig(problems))
        }
    }

    /// Exact number of scalar parameters the built model will have.
    pub fn param_count(&self) -> usize {
        let c = self.channels;
        let e = self.expansion_channels();
        let heads = self.attn_heads;
        let bands = self.ms_bands;

        let conv = |cin: usize, cout: usize, k: usize| cin * cout * k * k + cout;
        let dwconv = |ch: usize, k: usize| ch * k * k + ch;
        // 1x1 + depthwise 3x3 for each of Q/K/V, per-head tau, 1x1 out.
        let attn = 3 * (conv(c, c, 1) + dwconv(c, 3)) + heads + conv(c, c, 1);
        let layer_norm = 2 * c;
        let gdfn = conv(c, e, 1) + 2 * dwconv(e / 2, 3) + conv(e / 2, c, 1);
        let block = 2 * layer_norm + attn + gdfn;

        let encoder = conv(bands, c, 3);
        let fusion = match self.fusion_kind {
            FusionKind::EnhancedConv => conv(1, c, 3) + conv(2 * c, c, 3) + conv(c, c, 3),
            FusionKind::Conv1x1 => conv(1, c, 1) + conv(2 * c, c, 1),
            FusionKind::ChannelAttn => conv(1, c, 3) + conv(2 * c, c, 1) + attn,
            FusionKind::GatedConv => conv(1, c, 3) + 2 * conv(2 * c, c, 3),
        };
        let refine = match self.refine_kind {
            RefineKind::Conv => conv(c, bands, 3),
            RefineKind::ChannelAttn => attn + conv(c, bands, 3),
            RefineKind::LargeConv => conv(c, bands, 5),
        };
        encoder + self.num_blocks * block + fusion + refine
    }
}
