//! Rank-4 f32 tensor engine with reverse-mode automatic differentiation.
//!
//! Tensors are immutable `(B, C, H, W)` buffers behind an `Arc`. Every
//! operation records its inputs when gradients are required, forming an
//! implicit tape; [`Tensor::backward`] replays it in reverse creation order
//! and accumulates gradients per input node. Scalar reductions additionally
//! carry an f64 copy of their value so that finite-difference checks against
//! the f32 graph are not drowned by summation noise.

mod autograd;
mod gradcheck;
mod kernels;

pub use autograd::Gradients;
pub use gradcheck::{grad_check, grad_check_floored, random_tensor, GradCheckReport};

use autograd::Op;
use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::Arc;
use thiserror::Error;

/// Put the calling thread's FPU into flush-to-zero / denormals-are-zero mode.
///
/// As training converges, backward-pass products underflow into the subnormal
/// range, and subnormal arithmetic takes a microcode assist of roughly a
/// hundred cycles per operation on common x86 cores — measured here as a
/// steadily worsening ~3x slowdown of whole training steps. Flushing treats
/// values below ~1.2e-38 as zero, which is far beneath every tolerance used
/// by this crate's losses, metrics, and gradient checks.
///
/// The mode is per-thread and sticky. Training and evaluation entry points
/// call this themselves, so results are consistent within a process: on the
/// same platform, reruns of the same seeded computation stay bit-identical.
/// On architectures other than x86_64 this is a no-op and runs may take the
/// subnormal slow path instead.
pub fn flush_denormals() {
    #[cfg(target_arch = "x86_64")]
    unsafe {
        let mut csr: u32 = 0;
        // MXCSR bit 15 = flush-to-zero, bit 6 = denormals-are-zero.
        core::arch::asm!("stmxcsr [{0}]", in(reg) &mut csr, options(nostack, preserves_flags));
        csr |= (1 << 15) | (1 << 6);
        core::arch::asm!("ldmxcsr [{0}]", in(reg) &csr, options(nostack, preserves_flags));
    }
}

/// Rank-4 shape `(batch, channels, height, width)`.
#[derive(Clone, Copy, PartialEq, Eq, Debug)]
pub struct Shape {
    pub b: usize,
    pub c: usize,
    pub h: usize,
    pub w: usize,
}

impl Shape {
    pub const fn new(b: usize, c: usize, h: usize, w: usize) -> Self {
        Shape { b, c, h, w }
    }

    pub const fn numel(&self) -> usize {
        self.b * self.c * self.h * self.w
    }

    pub const fn plane(&self) -> usize {
        self.h * self.w
    }

    /// The scalar shape produced by full reductions.
    pub const fn scalar() -> Self {
        Shape::new(1, 1, 1, 1)
    }

    pub const fn is_scalar(&self) -> bool {
        self.b == 1 && self.c == 1 && self.h == 1 && self.w == 1
    }

    /// A per-channel parameter shape `(1, C, 1, 1)`.
    pub const fn per_channel(c: usize) -> Self {
        Shape::new(1, c, 1, 1)
    }
}

impl std::fmt::Display for Shape {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "({},{},{},{})", self.b, self.c, self.h, self.w)
    }
}

#[derive(Debug, Error)]
pub enum TensorError {
    #[error("{op}: shape mismatch {a} vs {b}")]
    ShapeMismatch { op: &'static str, a: Shape, b: Shape },
    #[error("{op}: {msg}")]
    Invalid { op: &'static str, msg: String },
    #[error("backward requires a scalar (1,1,1,1) tensor, got {0}")]
    NonScalarBackward(Shape),
    #[error("data length {got} does not match shape {shape} (expected {want})")]
    DataLength { shape: Shape, want: usize, got: usize },
    #[error("item() requires a scalar tensor, got {0}")]
    NonScalarItem(Shape),
    #[error("cannot mutate tensor data: node is shared (id {0})")]
    SharedMutation(u64),
}

/// Interpolation kernel for [`Tensor::upsample`].
#[derive(Clone, Copy, PartialEq, Eq, Debug)]
pub enum UpsampleMode {
    Bilinear,
    Bicubic,
}

static NEXT_ID: AtomicU64 = AtomicU64::new(1);

fn fresh_id() -> u64 {
    NEXT_ID.fetch_add(1, Ordering::Relaxed)
}

pub(crate) struct Node {
    pub(crate) id: u64,
    pub(crate) shape: Shape,
    pub(crate) data: Vec<f32>,
    /// High-precision value kept alongside scalar results of reductions so
    /// that downstream scalar arithmetic and finite-difference probes can use
    /// the f64 path.
    pub(crate) hp: Option<f64>,
    /// True when this node's value depends on some gradient-requiring leaf.
    pub(crate) grad: bool,
    pub(crate) op: Op,
}

/// Immutable rank-4 tensor handle. Cloning is cheap (shared buffer).
#[derive(Clone)]
pub struct Tensor(pub(crate) Arc<Node>);

impl std::fmt::Debug for Tensor {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("Tensor")
            .field("id", &self.0.id)
            .field("shape", &self.0.shape)
            .field("grad", &self.0.grad)
            .finish()
    }
}

impl Tensor {
    // ----- constructors ---------------------------------------------------

    /// Leaf tensor from raw data. `requires_grad` marks it as a trainable
    /// parameter for [`Tensor::backward`].
    pub fn from_vec(shape: Shape, data: Vec<f32>, requires_grad: bool) -> Result<Self, TensorError> {
        if data.len() != shape.numel() {
            return Err(TensorError::DataLength {
                shape,
                want: shape.numel(),
                got: data.len(),
            });
        }
        Ok(Self::leaf(shape, data, requires_grad))
    }

    pub fn zeros(shape: Shape) -> Self {
        Self::leaf(shape, vec![0.0; shape.numel()], false)
    }

    pub fn full(shape: Shape, value: f32) -> Self {
        Self::leaf(shape, vec![value; shape.numel()], false)
    }

    /// Scalar constant.
    pub fn scalar(value: f32) -> Self {
        let mut t = Self::leaf(Shape::scalar(), vec![value], false);
        Arc::get_mut(&mut t.0).expect("fresh node").hp = Some(value as f64);
        t
    }

    pub(crate) fn leaf(shape: Shape, data: Vec<f32>, requires_grad: bool) -> Self {
        Tensor(Arc::new(Node {
            id: fresh_id(),
            shape,
            data,
            hp: None,
            grad: requires_grad,
            op: Op::Leaf,
        }))
    }

    pub(crate) fn from_op(shape: Shape, data: Vec<f32>, hp: Option<f64>, op: Op, track: bool) -> Self {
        Tensor(Arc::new(Node {
            id: fresh_id(),
            shape,
            data,
            hp,
            grad: track,
            op: if track { op } else { Op::Leaf },
        }))
    }

    // ----- accessors ------------------------------------------------------

    pub fn shape(&self) -> Shape {
        self.0.shape
    }

    pub fn data(&self) -> &[f32] {
        &self.0.data
    }

    pub fn requires_grad(&self) -> bool {
        self.0.grad && matches!(self.0.op, Op::Leaf)
    }

    /// True when the tensor participates in the gradient graph (leaf or
    /// derived from a gradient-requiring leaf).
    pub fn on_grad_path(&self) -> bool {
        self.0.grad
    }

    pub fn id(&self) -> u64 {
        self.0.id
    }

    /// Scalar value of a `(1,1,1,1)` tensor.
    pub fn item(&self) -> Result<f32, TensorError> {
        if !self.0.shape.is_scalar() {
            return Err(TensorError::NonScalarItem(self.0.shape));
        }
        Ok(self.0.data[0])
    }

    /// Scalar value using the high-precision stash when present.
    pub fn item_f64(&self) -> Result<f64, TensorError> {
        if !self.0.shape.is_scalar() {
            return Err(TensorError::NonScalarItem(self.0.shape));
        }
        Ok(self.0.hp.unwrap_or(self.0.data[0] as f64))
    }

    /// High-precision view of a scalar: the stash when present, otherwise the
    /// exact f32 value. Only meaningful for scalar-shaped tensors.
    fn hp_of(&self) -> f64 {
        self.0.hp.unwrap_or(self.0.data[0] as f64)
    }

    /// Mutable access to a leaf's data. Fails if the node is shared (a live
    /// graph still references it) — callers must drop graphs first.
    pub fn data_mut(&mut self) -> Result<&mut [f32], TensorError> {
        let id = self.0.id;
        match Arc::get_mut(&mut self.0) {
            Some(node) => Ok(&mut node.data),
            None => Err(TensorError::SharedMutation(id)),
        }
    }

    /// Detached copy of this tensor's values as a fresh leaf.
    pub fn detach(&self, requires_grad: bool) -> Tensor {
        Self::leaf(self.0.shape, self.0.data.clone(), requires_grad)
    }

    // ----- elementwise binary ops ----------------------------------------

    fn bin_shape(&self, rhs: &Tensor, op: &'static str) -> Result<Shape, TensorError> {
        if self.0.shape != rhs.0.shape {
            return Err(TensorError::ShapeMismatch {
                op,
                a: self.0.shape,
                b: rhs.0.shape,
            });
        }
        Ok(self.0.shape)
    }

    pub fn add(&self, rhs: &Tensor) -> Result<Tensor, TensorError> {
        let shape = self.bin_shape(rhs, "add")?;
        let data: Vec<f32> = self
            .0
            .data
            .iter()
            .zip(rhs.0.data.iter())
            .map(|(a, b)| a + b)
            .collect();
        let hp = if shape.is_scalar() {
            Some(self.hp_of() + rhs.hp_of())
        } else {
            None
        };
        let track = self.0.grad || rhs.0.grad;
        Ok(Tensor::from_op(shape, data, hp, Op::Add(self.clone(), rhs.clone()), track))
    }

    pub fn sub(&self, rhs: &Tensor) -> Result<Tensor, TensorError> {
        let shape = self.bin_shape(rhs, "sub")?;
        let data: Vec<f32> = self
            .0
            .data
            .iter()
            .zip(rhs.0.data.iter())
            .map(|(a, b)| a - b)
            .collect();
        let hp = if shape.is_scalar() {
            Some(self.hp_of() - rhs.hp_of())
        } else {
            None
        };
        let track = self.0.grad || rhs.0.grad;
        Ok(Tensor::from_op(shape, data, hp, Op::Sub(self.clone(), rhs.clone()), track))
    }

    pub fn mul(&self, rhs: &Tensor) -> Result<Tensor, TensorError> {
        let shape = self.bin_shape(rhs, "mul")?;
        let data: Vec<f32> = self
            .0
            .data
            .iter()
            .zip(rhs.0.data.iter())
            .map(|(a, b)| a * b)
            .collect();
        let hp = if shape.is_scalar() {
            Some(self.hp_of() * rhs.hp_of())
        } else {
            None
        };
        let track = self.0.grad || rhs.0.grad;
        Ok(Tensor::from_op(shape, data, hp, Op::Mul(self.clone(), rhs.clone()), track))
    }

    pub fn div(&self, rhs: &Tensor) -> Result<Tensor, TensorError> {
        let shape = self.bin_shape(rhs, "div")?;
        let data: Vec<f32> = self
            .0
            .data
            .iter()
            .zip(rhs.0.data.iter())
            .map(|(a, b)| a / b)
            .collect();
        let hp = if shape.is_scalar() {
            Some(self.hp_of() / rhs.hp_of())
        } else {
            None
        };
        let track = self.0.grad || rhs.0.grad;
        Ok(Tensor::from_op(shape, data, hp, Op::Div(self.clone(), rhs.clone()), track))
    }

    // ----- scalar ops -----------------------------------------------------

    pub fn add_scalar(&self, k: f32) -> Tensor {
        let data: Vec<f32> = self.0.data.iter().map(|a| a + k).collect();
        let hp = self.0.shape.is_scalar().then(|| self.hp_of() + k as f64);
        Tensor::from_op(self.0.shape, data, hp, Op::AddScalar(self.clone()), self.0.grad)
    }

    pub fn mul_scalar(&self, k: f32) -> Tensor {
        let data: Vec<f32> = self.0.data.iter().map(|a| a * k).collect();
        let hp = self.0.shape.is_scalar().then(|| self.hp_of() * k as f64);
        Tensor::from_op(self.0.shape, data, hp, Op::MulScalar(self.clone(), k), self.0.grad)
    }

    // ----- elementwise unary ops -------------------------------------------

    pub fn sqrt(&self) -> Tensor {
        let data: Vec<f32> = self.0.data.iter().map(|a| a.sqrt()).collect();
        let hp = self.0.shape.is_scalar().then(|| self.hp_of().sqrt());
        Tensor::from_op(self.0.shape, data, hp, Op::Sqrt(self.clone()), self.0.grad)
    }

    pub fn abs(&self) -> Tensor {
        let data: Vec<f32> = self.0.data.iter().map(|a| a.abs()).collect();
        let hp = self.0.shape.is_scalar().then(|| self.hp_of().abs());
        Tensor::from_op(self.0.shape, data, hp, Op::Abs(self.clone()), self.0.grad)
    }

    /// Elementwise power for non-negative bases (used on |x|). `p = 1` and
    /// `p = 2` take exact fast paths.
    pub fn powf(&self, p: f32) -> Tensor {
        let data: Vec<f32> = if p == 2.0 {
            self.0.data.iter().map(|a| a * a).collect()
        } else if p == 1.0 {
            self.0.data.clone()
        } else {
            self.0.data.iter().map(|a| a.powf(p)).collect()
        };
        let hp = self.0.shape.is_scalar().then(|| self.hp_of().powf(p as f64));
        Tensor::from_op(self.0.shape, data, hp, Op::Powf(self.clone(), p), self.0.grad)
    }

    pub fn gelu(&self) -> Tensor {
        let data: Vec<f32> = self.0.data.iter().map(|&a| crate::fastmath::gelu_f32(a)).collect();
        Tensor::from_op(self.0.shape, data, None, Op::Gelu(self.clone()), self.0.grad)
    }

    pub fn sigmoid(&self) -> Tensor {
        let data: Vec<f32> = self.0.data.iter().map(|&a| crate::fastmath::sigmoid_f32(a)).collect();
        Tensor::from_op(self.0.shape, data, None, Op::Sigmoid(self.clone()), self.0.grad)
    }

    // ----- broadcast ops (per-channel scale/shift) -------------------------

    fn check_per_channel(&self, s: &Tensor, op: &'static str) -> Result<(), TensorError> {
        let want = Shape::per_channel(self.0.shape.c);
        if s.0.shape != want {
            return Err(TensorError::ShapeMismatch {
                op,
                a: self.0.shape,
                b: s.0.shape,
            });
        }
        Ok(())
    }

    /// Multiply each channel plane by a `(1,C,1,1)` scale.
    pub fn bmul(&self, scale: &Tensor) -> Result<Tensor, TensorError> {
        self.check_per_channel(scale, "bmul")?;
        let sh = self.0.shape;
        let plane = sh.plane();
        let mut data = vec![0.0f32; sh.numel()];
        for b in 0..sh.b {
            for c in 0..sh.c {
                let base = (b * sh.c + c) * plane;
                let k = scale.0.data[c];
                for (dst, src) in data[base..base + plane].iter_mut().zip(&self.0.data[base..base + plane]) {
                    *dst = src * k;
                }
            }
        }
        let track = self.0.grad || scale.0.grad;
        Ok(Tensor::from_op(sh, data, None, Op::BroadcastMul(self.clone(), scale.clone()), track))
    }

    /// Add a `(1,C,1,1)` shift to each channel plane.
    pub fn badd(&self, shift: &Tensor) -> Result<Tensor, TensorError> {
        self.check_per_channel(shift, "badd")?;
        let sh = self.0.shape;
        let plane = sh.plane();
        let mut data = vec![0.0f32; sh.numel()];
        for b in 0..sh.b {
            for c in 0..sh.c {
                let base = (b * sh.c + c) * plane;
                let k = shift.0.data[c];
                for (dst, src) in data[base..base + plane].iter_mut().zip(&self.0.data[base..base + plane]) {
                    *dst = src + k;
                }
            }
        }
        let track = self.0.grad || shift.0.grad;
        Ok(Tensor::from_op(sh, data, None, Op::BroadcastAdd(self.clone(), shift.clone()), track))
    }

    // ----- structural ops ---------------------------------------------------

    pub fn concat_channels(&self, rhs: &Tensor) -> Result<Tensor, TensorError> {
        let a = self.0.shape;
        let b = rhs.0.shape;
        if a.b != b.b || a.h != b.h || a.w != b.w {
            return Err(TensorError::ShapeMismatch { op: "concat_channels", a, b });
        }
        let out_shape = Shape::new(a.b, a.c + b.c, a.h, a.w);
        let plane = a.plane();
        let mut data = vec![0.0f32; out_shape.numel()];
        for bi in 0..a.b {
            let dst_base = bi * out_shape.c * plane;
            let a_base = bi * a.c * plane;
            let b_base = bi * b.c * plane;
            data[dst_base..dst_base + a.c * plane]
                .copy_from_slice(&self.0.data[a_base..a_base + a.c * plane]);
            data[dst_base + a.c * plane..dst_base + out_shape.c * plane]
                .copy_from_slice(&rhs.0.data[b_base..b_base + b.c * plane]);
        }
        let track = self.0.grad || rhs.0.grad;
        Ok(Tensor::from_op(out_shape, data, None, Op::ConcatC(self.clone(), rhs.clone()), track))
    }

    pub fn slice_channels(&self, start: usize, len: usize) -> Result<Tensor, TensorError> {
        let sh = self.0.shape;
        if start + len > sh.c || len == 0 {
            return Err(TensorError::Invalid {
                op: "slice_channels",
                msg: format!("range {start}..{} out of {} channels", start + len, sh.c),
            });
        }
        let out_shape = Shape::new(sh.b, len, sh.h, sh.w);
        let plane = sh.plane();
        let mut data = vec![0.0f32; out_shape.numel()];
        for b in 0..sh.b {
            let src = (b * sh.c + start) * plane;
            let dst = b * len * plane;
            data[dst..dst + len * plane].copy_from_slice(&self.0.data[src..src + len * plane]);
        }
        Ok(Tensor::from_op(
            out_shape,
            data,
            None,
            Op::SliceC { input: self.clone(), start, len },
            self.0.grad,
        ))
    }

    // ----- reductions -------------------------------------------------------

    /// Mean over all elements, computed with an f64 accumulator. The result
    /// carries the f64 value alongside the rounded f32.
    pub fn mean_all(&self) -> Tensor {
        let mean = if self.0.shape.is_scalar() {
            self.hp_of()
        } else {
            let mut acc = 0.0f64;
            for &v in &self.0.data {
                acc += v as f64;
            }
            acc / self.0.data.len() as f64
        };
        Tensor::from_op(
            Shape::scalar(),
            vec![mean as f32],
            Some(mean),
            Op::MeanAll(self.clone()),
            self.0.grad,
        )
    }

    /// Sum over all elements (f64 accumulator).
    pub fn sum_all(&self) -> Tensor {
        let acc = if self.0.shape.is_scalar() {
            self.hp_of()
        } else {
            let mut acc = 0.0f64;
            for &v in &self.0.data {
                acc += v as f64;
            }
            acc
        };
        Tensor::from_op(
            Shape::scalar(),
            vec![acc as f32],
            Some(acc),
            Op::SumAll(self.clone()),
            self.0.grad,
        )
    }

    // ----- heavy ops (kernels live in kernels.rs, graph in autograd.rs) ------

    /// 2D convolution over `(B, Cin, H, W)` with weight `(Cout, Cin/groups,
    /// kh, kw)` and optional bias `(1, Cout, 1, 1)`. Symmetric zero padding.
    pub fn conv2d(
        &self,
        weight: &Tensor,
        bias: Option<&Tensor>,
        stride: usize,
        padding: usize,
        groups: usize,
    ) -> Result<Tensor, TensorError> {
        autograd::conv2d(self, weight, bias, stride, padding, groups)
    }

    /// Layer normalization across the channel axis at every spatial position,
    /// with per-channel affine parameters `gamma`/`beta` of shape `(1,C,1,1)`.
    pub fn layer_norm(&self, gamma: &Tensor, beta: &Tensor, eps: f32) -> Result<Tensor, TensorError> {
        autograd::layer_norm(self, gamma, beta, eps)
    }

    /// Softmax along the last (width) axis.
    pub fn softmax_lastdim(&self) -> Tensor {
        autograd::softmax_lastdim(self)
    }

    /// L2-normalize each channel's spatial vector: for every `(b, c)` row of
    /// length `H*W`, divide by `max(norm, 1e-12)`.
    pub fn l2_normalize_rows(&self) -> Tensor {
        autograd::l2_normalize_rows(self)
    }

    /// Channel-attention similarity matrix. Treating each of the `heads`
    /// groups of channels as rows of a `(C/heads) x (H*W)` matrix, computes
    /// `Q K^T` per head: output `(B, heads, C/heads, C/heads)`.
    pub fn channel_gram(&self, key: &Tensor, heads: usize) -> Result<Tensor, TensorError> {
        autograd::channel_gram(self, key, heads)
    }

    /// Apply a channel-attention matrix `(B, heads, C/heads, C/heads)` to a
    /// value tensor `(B, C, H, W)`: per head, `out = A @ V`.
    pub fn attn_apply(&self, value: &Tensor, heads: usize) -> Result<Tensor, TensorError> {
        autograd::attn_apply(self, value, heads)
    }

    /// Integer-factor upsampling with half-pixel-center sampling.
    pub fn upsample(&self, scale: usize, mode: UpsampleMode) -> Result<Tensor, TensorError> {
        autograd::upsample(self, scale, mode)
    }

    /// Reverse-mode gradient of a scalar with respect to every
    /// gradient-requiring leaf it depends on.
    pub fn backward(&self) -> Result<Gradients, TensorError> {
        autograd::backward(self)
    }
}
