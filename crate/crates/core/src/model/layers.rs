//! Network building blocks: conv wrapper, layer norm, channel attention,
//! gated feed-forward, transformer block, fusion and refinement heads.
//!
//! Every block owns its parameters as gradient-requiring leaf tensors and
//! exposes them through [`VisitParams`], which walks them in construction
//! order under stable dotted names (`body.0.attn.q.weight`, ...). That order
//! drives initialization draws, optimizer state, and checkpoint layout.

use rand::Rng;
use rand_chacha::ChaCha8Rng;

use super::config::FusionKind;
use crate::tensor::{Shape, Tensor, TensorError};

/// Epsilon inside the layer-norm variance square root.
pub const LN_EPS: f32 = 1e-5;

/// Walk every parameter tensor in construction order.
pub trait VisitParams {
    fn visit(&mut self, prefix: &str, f: &mut dyn FnMut(String, &mut Tensor));
}

fn join(prefix: &str, leaf: &str) -> String {
    if prefix.is_empty() {
        leaf.to_string()
    } else {
        format!("{prefix}.{leaf}")
    }
}

// ---------------------------------------------------------------------------
// Conv
// ---------------------------------------------------------------------------

/// A 2D convolution with bias. Weight `(Cout, Cin/groups, k, k)`,
/// Kaiming-uniform fan-in init; bias `(1, Cout, 1, 1)`, zero init.
#[derive(Debug, Clone)]
pub struct Conv {
    pub weight: Tensor,
    pub bias: Tensor,
    stride: usize,
    padding: usize,
    groups: usize,
}

impl Conv {
    pub fn new(
        rng: &mut ChaCha8Rng,
        cin: usize,
        cout: usize,
        k: usize,
        padding: usize,
        groups: usize,
    ) -> Self {
        let fan_in = (cin / groups) * k * k;
        let bound = (6.0 / fan_in as f64).sqrt() as f32;
        let wshape = Shape::new(cout, cin / groups, k, k);
        let wdata: Vec<f32> = (0..wshape.numel()).map(|_| rng.gen_range(-bound..bound)).collect();
        Conv {
            weight: Tensor::from_vec(wshape, wdata, true).expect("conv weight shape"),
            bias: Tensor::from_vec(Shape::per_channel(cout), vec![0.0; cout], true)
                .expect("conv bias shape"),
            stride: 1,
            padding,
            groups,
        }
    }

    /// All-zero weight and bias. Used for the network's final projection so
    /// a freshly built model with the global residual is exactly the bicubic
    /// upsample; training only has to add detail on top of that floor.
    pub fn zeroed(cin: usize, cout: usize, k: usize, padding: usize, groups: usize) -> Self {
        let wshape = Shape::new(cout, cin / groups, k, k);
        Conv {
            weight: Tensor::from_vec(wshape, vec![0.0; wshape.numel()], true)
                .expect("conv weight shape"),
            bias: Tensor::from_vec(Shape::per_channel(cout), vec![0.0; cout], true)
                .expect("conv bias shape"),
            stride: 1,
            padding,
            groups,
        }
    }

    /// Depthwise 3x3, padding 1.
    pub fn depthwise(rng: &mut ChaCha8Rng, channels: usize) -> Self {
        Conv::new(rng, channels, channels, 3, 1, channels)
    }

    /// Pointwise 1x1.
    pub fn pointwise(rng: &mut ChaCha8Rng, cin: usize, cout: usize) -> Self {
        Conv::new(rng, cin, cout, 1, 0, 1)
    }

    pub fn forward(&self, x: &Tensor) -> Result<Tensor, TensorError> {
        x.conv2d(&self.weight, Some(&self.bias), self.stride, self.padding, self.groups)
    }
}

impl VisitParams for Conv {
    fn visit(&mut self, prefix: &str, f: &mut dyn FnMut(String, &mut Tensor)) {
        f(join(prefix, "weight"), &mut self.weight);
        f(join(prefix, "bias"), &mut self.bias);
    }
}

// ---------------------------------------------------------------------------
// LayerNorm
// ---------------------------------------------------------------------------

/// Channel-axis layer norm with per-channel affine (gamma ones, beta zeros).
#[derive(Debug, Clone)]
pub struct LayerNorm {
    pub gamma: Tensor,
    pub beta: Tensor,
}

impl LayerNorm {
    pub fn new(channels: usize) -> Self {
        LayerNorm {
            gamma: Tensor::from_vec(Shape::per_channel(channels), vec![1.0; channels], true)
                .expect("ln gamma shape"),
            beta: Tensor::from_vec(Shape::per_channel(channels), vec![0.0; channels], true)
                .expect("ln beta shape"),
        }
    }

    pub fn forward(&self, x: &Tensor) -> Result<Tensor, TensorError> {
        x.layer_norm(&self.gamma, &self.beta, LN_EPS)
    }
}

impl VisitParams for LayerNorm {
    fn visit(&mut self, prefix: &str, f: &mut dyn FnMut(String, &mut Tensor)) {
        f(join(prefix, "gamma"), &mut self.gamma);
        f(join(prefix, "beta"), &mut self.beta);
    }
}

// ---------------------------------------------------------------------------
// Channel attention
// ---------------------------------------------------------------------------

/// Transposed self-attention over channels. Q/K/V come from a 1x1 conv
/// followed by a depthwise 3x3; per head the `(C/h) x (H*W)` rows of Q and K
/// are L2-normalized, the similarity matrix is scaled by a learnable
/// per-head temperature and softmaxed, applied to V, and projected by a
/// final 1x1 conv. Temperature zero gives uniform attention weights.
#[derive(Debug, Clone)]
pub struct ChannelAttention {
    pub q: Conv,
    pub q_dw: Conv,
    pub k: Conv,
    pub k_dw: Conv,
    pub v: Conv,
    pub v_dw: Conv,
    pub tau: Tensor,
    pub out: Conv,
    heads: usize,
}

impl ChannelAttention {
    pub fn new(rng: &mut ChaCha8Rng, channels: usize, heads: usize) -> Self {
        ChannelAttention {
            q: Conv::pointwise(rng, channels, channels),
            q_dw: Conv::depthwise(rng, channels),
            k: Conv::pointwise(rng, channels, channels),
            k_dw: Conv::depthwise(rng, channels),
            v: Conv::pointwise(rng, channels, channels),
            v_dw: Conv::depthwise(rng, channels),
            tau: Tensor::from_vec(Shape::per_channel(heads), vec![1.0; heads], true)
                .expect("tau shape"),
            out: Conv::pointwise(rng, channels, channels),
            heads,
        }
    }

    pub fn forward(&self, x: &Tensor) -> Result<Tensor, TensorError> {
        let q = self.q_dw.forward(&self.q.forward(x)?)?;
        let k = self.k_dw.forward(&self.k.forward(x)?)?;
        let v = self.v_dw.forward(&self.v.forward(x)?)?;
        let logits = q
            .l2_normalize_rows()
            .channel_gram(&k.l2_normalize_rows(), self.heads)?
            .bmul(&self.tau)?;
        let attn = logits.softmax_lastdim();
        self.out.forward(&attn.attn_apply(&v, self.heads)?)
    }
}

impl VisitParams for ChannelAttention {
    fn visit(&mut self, prefix: &str, f: &mut dyn FnMut(String, &mut Tensor)) {
        self.q.visit(&join(prefix, "q"), f);
        self.q_dw.visit(&join(prefix, "q_dw"), f);
        self.k.visit(&join(prefix, "k"), f);
        self.k_dw.visit(&join(prefix, "k_dw"), f);
        self.v.visit(&join(prefix, "v"), f);
        self.v_dw.visit(&join(prefix, "v_dw"), f);
        f(join(prefix, "tau"), &mut self.tau);
        self.out.visit(&join(prefix, "out"), f);
    }
}

// ---------------------------------------------------------------------------
// Gated feed-forward (GDFN)
// ---------------------------------------------------------------------------

/// Gated-Dconv feed-forward: expand to `hidden` channels with a 1x1 conv,
/// split in half, gate `GELU(DW(X1)) * DW(X2)`, project back with a 1x1 conv.
#[derive(Debug, Clone)]
pub struct Gdfn {
    pub inp: Conv,
    pub dw1: Conv,
    pub dw2: Conv,
    pub out: Conv,
    half: usize,
}

impl Gdfn {
    pub fn new(rng: &mut ChaCha8Rng, channels: usize, hidden: usize) -> Self {
        debug_assert!(hidden % 2 == 0 && hidden > 0);
        let half = hidden / 2;
        Gdfn {
            inp: Conv::pointwise(rng, channels, hidden),
            dw1: Conv::depthwise(rng, half),
            dw2: Conv::depthwise(rng, half),
            out: Conv::pointwise(rng, half, channels),
            half,
        }
    }

    pub fn forward(&self, x: &Tensor) -> Result<Tensor, TensorError> {
        let e = self.inp.forward(x)?;
        let x1 = e.slice_channels(0, self.half)?;
        let x2 = e.slice_channels(self.half, self.half)?;
        let gated = self.dw1.forward(&x1)?.gelu().mul(&self.dw2.forward(&x2)?)?;
        self.out.forward(&gated)
    }
}

impl VisitParams for Gdfn {
    fn visit(&mut self, prefix: &str, f: &mut dyn FnMut(String, &mut Tensor)) {
        self.inp.visit(&join(prefix, "inp"), f);
        self.dw1.visit(&join(prefix, "dw1"), f);
        self.dw2.visit(&join(prefix, "dw2"), f);
        self.out.visit(&join(prefix, "out"), f);
    }
}

// ---------------------------------------------------------------------------
// Transformer block
// ---------------------------------------------------------------------------

/// Pre-norm residual block: `x + CA(LN(x))`, then `y + GDFN(LN(y))`.
#[derive(Debug, Clone)]
pub struct TransformerBlock {
    pub ln1: LayerNorm,
    pub attn: ChannelAttention,
    pub ln2: LayerNorm,
    pub gdfn: Gdfn,
}

impl TransformerBlock {
    pub fn new(rng: &mut ChaCha8Rng, channels: usize, heads: usize, hidden: usize) -> Self {
        TransformerBlock {
            ln1: LayerNorm::new(channels),
            attn: ChannelAttention::new(rng, channels, heads),
            ln2: LayerNorm::new(channels),
            gdfn: Gdfn::new(rng, channels, hidden),
        }
    }

    pub fn forward(&self, x: &Tensor) -> Result<Tensor, TensorError> {
        let y = x.add(&self.attn.forward(&self.ln1.forward(x)?)?)?;
        y.add(&self.gdfn.forward(&self.ln2.forward(&y)?)?)
    }
}

impl VisitParams for TransformerBlock {
    fn visit(&mut self, prefix: &str, f: &mut dyn FnMut(String, &mut Tensor)) {
        self.ln1.visit(&join(prefix, "ln1"), f);
        self.attn.visit(&join(prefix, "attn"), f);
        self.ln2.visit(&join(prefix, "ln2"), f);
        self.gdfn.visit(&join(prefix, "gdfn"), f);
    }
}

// ---------------------------------------------------------------------------
// Fusion heads
// ---------------------------------------------------------------------------

/// Injects PAN detail into the feature stream. All variants first lift the
/// single-band PAN into feature space and concatenate it with the incoming
/// features; they differ in how the 2C-channel stack is merged back to C.
#[derive(Debug, Clone)]
pub enum Fusion {
    /// conv3x3(2C->C), GELU, conv3x3(C->C).
    EnhancedConv { pan: Conv, conv1: Conv, conv2: Conv },
    /// Single conv1x1(2C->C).
    Conv1x1 { pan: Conv, merge: Conv },
    /// conv1x1(2C->C), then a residual channel-attention block.
    ChannelAttn { pan: Conv, merge: Conv, attn: ChannelAttention },
    /// `conv3x3(2C->C) * sigmoid(conv3x3(2C->C))`.
    GatedConv { pan: Conv, value: Conv, gate: Conv },
}

impl Fusion {
    pub fn new(rng: &mut ChaCha8Rng, kind: FusionKind, channels: usize, heads: usize) -> Self {
        let c = channels;
        match kind {
            FusionKind::EnhancedConv => Fusion::EnhancedConv {
                pan: Conv::new(rng, 1, c, 3, 1, 1),
                conv1: Conv::new(rng, 2 * c, c, 3, 1, 1),
                conv2: Conv::new(rng, c, c, 3, 1, 1),
            },
            FusionKind::Conv1x1 => Fusion::Conv1x1 {
                pan: Conv::pointwise(rng, 1, c),
                merge: Conv::pointwise(rng, 2 * c, c),
            },
            FusionKind::ChannelAttn => Fusion::ChannelAttn {
                pan: Conv::new(rng, 1, c, 3, 1, 1),
                merge: Conv::pointwise(rng, 2 * c, c),
                attn: ChannelAttention::new(rng, c, heads),
            },
            FusionKind::GatedConv => Fusion::GatedConv {
                pan: Conv::new(rng, 1, c, 3, 1, 1),
                value: Conv::new(rng, 2 * c, c, 3, 1, 1),
                gate: Conv::new(rng, 2 * c, c, 3, 1, 1),
            },
        }
    }

    pub fn forward(&self, features: &Tensor, pan: &Tensor) -> Result<Tensor, TensorError> {
        match self {
            Fusion::EnhancedConv { pan: p, conv1, conv2 } => {
                let stack = features.concat_channels(&p.forward(pan)?)?;
                conv2.forward(&conv1.forward(&stack)?.gelu())
            }
            Fusion::Conv1x1 { pan: p, merge } => {
                merge.forward(&features.concat_channels(&p.forward(pan)?)?)
            }
            Fusion::ChannelAttn { pan: p, merge, attn } => {
                let merged = merge.forward(&features.concat_channels(&p.forward(pan)?)?)?;
                merged.add(&attn.forward(&merged)?)
            }
            Fusion::GatedConv { pan: p, value, gate } => {
                let stack = features.concat_channels(&p.forward(pan)?)?;
                value.forward(&stack)?.mul(&gate.forward(&stack)?.sigmoid())
            }
        }
    }
}

impl VisitParams for Fusion {
    fn visit(&mut self, prefix: &str, f: &mut dyn FnMut(String, &mut Tensor)) {
        match self {
            Fusion::EnhancedConv { pan, conv1, conv2 } => {
                pan.visit(&join(prefix, "pan"), f);
                conv1.visit(&join(prefix, "conv1"), f);
                conv2.visit(&join(prefix, "conv2"), f);
            }
            Fusion::Conv1x1 { pan, merge } => {
                pan.visit(&join(prefix, "pan"), f);
                merge.visit(&join(prefix, "merge"), f);
            }
            Fusion::ChannelAttn { pan, merge, attn } => {
                pan.visit(&join(prefix, "pan"), f);
                merge.visit(&join(prefix, "merge"), f);
                attn.visit(&join(prefix, "attn"), f);
            }
            Fusion::GatedConv { pan, value, gate } => {
                pan.visit(&join(prefix, "pan"), f);
                value.visit(&join(prefix, "value"), f);
                gate.visit(&join(prefix, "gate"), f);
            }
        }
    }
}

// ---------------------------------------------------------------------------
// Refinement heads
// ---------------------------------------------------------------------------

/// Maps fused features back to the output bands. The final conv starts at
/// zero in every variant, so a freshly built model with the global residual
/// enabled reproduces the bicubic upsample bit-exactly.
#[derive(Debug, Clone)]
pub enum Refine {
    /// Single 3x3 conv.
    Conv { conv: Conv },
    /// Residual channel attention, then the 3x3 conv.
    ChannelAttn { attn: ChannelAttention, conv: Conv },
    /// Single 5x5 conv.
    LargeConv { conv: Conv },
}

impl Refine {
    pub fn new(
        rng: &mut ChaCha8Rng,
        kind: super::config::RefineKind,
        channels: usize,
        heads: usize,
        bands: usize,
    ) -> Self {
        use super::config::RefineKind as K;
        match kind {
            K::Conv => Refine::Conv { conv: Conv::zeroed(channels, bands, 3, 1, 1) },
            K::ChannelAttn => Refine::ChannelAttn {
                attn: ChannelAttention::new(rng, channels, heads),
                conv: Conv::zeroed(channels, bands, 3, 1, 1),
            },
            K::LargeConv => Refine::LargeConv { conv: Conv::zeroed(channels, bands, 5, 2, 1) },
        }
    }

    pub fn forward(&self, x: &Tensor) -> Result<Tensor, TensorError> {
        match self {
            Refine::Conv { conv } | Refine::LargeConv { conv } => conv.forward(x),
            Refine::ChannelAttn { attn, conv } => conv.forward(&x.add(&attn.forward(x)?)?),
        }
    }
}

impl VisitParams for Refine {
    fn visit(&mut self, prefix: &str, f: &mut dyn FnMut(String, &mut Tensor)) {
        match self {
            Refine::Conv { conv } | Refine::LargeConv { conv } => {
                conv.visit(&join(prefix, "conv"), f)
            }
            Refine::ChannelAttn { attn, conv } => {
                attn.visit(&join(prefix, "attn"), f);
                conv.visit(&join(prefix, "conv"), f);
            }
        }
    }
}
