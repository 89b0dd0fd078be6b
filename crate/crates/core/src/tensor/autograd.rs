//! Operation graph and reverse-mode differentiation.
//!
//! Every tensor produced by an op holds clones of its input tensors, forming
//! an implicit DAG. Node ids increase monotonically with creation, so walking
//! nodes in descending id order is a valid reverse topological order; gradient
//! accumulation per node is additive and runs in that fixed order, which makes
//! backward bit-deterministic.

use super::kernels;
use super::{Shape, Tensor, TensorError, UpsampleMode};
use crate::fastmath;
use std::collections::{HashMap, HashSet};

pub(crate) enum Op {
    Leaf,
    Add(Tensor, Tensor),
    Sub(Tensor, Tensor),
    Mul(Tensor, Tensor),
    Div(Tensor, Tensor),
    AddScalar(Tensor),
    MulScalar(Tensor, f32),
    Sqrt(Tensor),
    Abs(Tensor),
    Powf(Tensor, f32),
    Gelu(Tensor),
    Sigmoid(Tensor),
    BroadcastMul(Tensor, Tensor),
    BroadcastAdd(Tensor, Tensor),
    ConcatC(Tensor, Tensor),
    SliceC {
        input: Tensor,
        start: usize,
        len: usize,
    },
    MeanAll(Tensor),
    SumAll(Tensor),
    Conv2d {
        input: Tensor,
        weight: Tensor,
        bias: Option<Tensor>,
        dims: kernels::ConvDims,
    },
    LayerNorm {
        input: Tensor,
        gamma: Tensor,
        beta: Tensor,
        mean: Vec<f32>,
        rstd: Vec<f32>,
    },
    SoftmaxLastDim(Tensor),
    L2NormRows {
        input: Tensor,
        norms: Vec<f32>,
    },
    Gram {
        q: Tensor,
        k: Tensor,
        heads: usize,
    },
    AttnApply {
        attn: Tensor,
        v: Tensor,
        heads: usize,
    },
    Upsample {
        input: Tensor,
        scale: usize,
        mode: UpsampleMode,
    },
}

impl Op {
    fn inputs(&self) -> Vec<&Tensor> {
        match self {
            Op::Leaf => vec![],
            Op::Add(a, b) | Op::Sub(a, b) | Op::Mul(a, b) | Op::Div(a, b) => vec![a, b],
            Op::AddScalar(a) | Op::MulScalar(a, _) => vec![a],
            Op::Sqrt(a) | Op::Abs(a) | Op::Powf(a, _) | Op::Gelu(a) | Op::Sigmoid(a) => vec![a],
            Op::BroadcastMul(a, s) | Op::BroadcastAdd(a, s) => vec![a, s],
            Op::ConcatC(a, b) => vec![a, b],
            Op::SliceC { input, .. } => vec![input],
            Op::MeanAll(a) | Op::SumAll(a) => vec![a],
            Op::Conv2d { input, weight, bias, .. } => {
                let mut v = vec![input, weight];
                if let Some(b) = bias {
                    v.push(b);
                }
                v
            }
            Op::LayerNorm { input, gamma, beta, .. } => vec![input, gamma, beta],
            Op::SoftmaxLastDim(a) => vec![a],
            Op::L2NormRows { input, .. } => vec![input],
            Op::Gram { q, k, .. } => vec![q, k],
            Op::AttnApply { attn, v, .. } => vec![attn, v],
            Op::Upsample { input, .. } => vec![input],
        }
    }
}

// ---------------------------------------------------------------------------
// Heavy-op constructors
// ---------------------------------------------------------------------------

pub(crate) fn conv2d(
    input: &Tensor,
    weight: &Tensor,
    bias: Option<&Tensor>,
    stride: usize,
    padding: usize,
    groups: usize,
) -> Result<Tensor, TensorError> {
    let xs = input.shape();
    let ws = weight.shape();
    let invalid = |msg: String| TensorError::Invalid { op: "conv2d", msg };
    if stride == 0 {
        return Err(invalid("stride must be >= 1".into()));
    }
    if groups == 0 || xs.c % groups != 0 || ws.b % groups != 0 {
        return Err(invalid(format!(
            "groups {groups} must divide input channels {} and output channels {}",
            xs.c, ws.b
        )));
    }
    if ws.c != xs.c / groups {
        return Err(invalid(format!(
            "weight expects {} input channels per group, input has {} ({} groups)",
            ws.c,
            xs.c / groups,
            groups
        )));
    }
    let (kh, kw) = (ws.h, ws.w);
    if xs.h + 2 * padding < kh || xs.w + 2 * padding < kw {
        return Err(invalid(format!(
            "kernel {kh}x{kw} larger than padded input {}x{}",
            xs.h + 2 * padding,
            xs.w + 2 * padding
        )));
    }
    let ho = (xs.h + 2 * padding - kh) / stride + 1;
    let wo = (xs.w + 2 * padding - kw) / stride + 1;
    if let Some(b) = bias {
        let want = Shape::per_channel(ws.b);
        if b.shape() != want {
            return Err(TensorError::ShapeMismatch { op: "conv2d bias", a: b.shape(), b: want });
        }
    }
    let dims = kernels::ConvDims {
        b: xs.b,
        cin: xs.c,
        h: xs.h,
        w: xs.w,
        cout: ws.b,
        kh,
        kw,
        stride,
        pad: padding,
        groups,
        ho,
        wo,
    };
    let out_shape = Shape::new(xs.b, ws.b, ho, wo);
    let mut data = vec![0.0f32; out_shape.numel()];
    kernels::conv2d_fwd(input.data(), weight.data(), bias.map(|b| b.data()), &dims, &mut data);
    let track = input.0.grad || weight.0.grad || bias.map_or(false, |b| b.0.grad);
    Ok(Tensor::from_op(
        out_shape,
        data,
        None,
        Op::Conv2d {
            input: input.clone(),
            weight: weight.clone(),
            bias: bias.cloned(),
            dims,
        },
        track,
    ))
}

pub(crate) fn layer_norm(
    input: &Tensor,
    gamma: &Tensor,
    beta: &Tensor,
    eps: f32,
) -> Result<Tensor, TensorError> {
    let sh = input.shape();
    let want = Shape::per_channel(sh.c);
    if gamma.shape() != want {
        return Err(TensorError::ShapeMismatch { op: "layer_norm gamma", a: gamma.shape(), b: want });
    }
    if beta.shape() != want {
        return Err(TensorError::ShapeMismatch { op: "layer_norm beta", a: beta.shape(), b: want });
    }
    if eps <= 0.0 {
        return Err(TensorError::Invalid { op: "layer_norm", msg: "eps must be positive".into() });
    }
    let plane = sh.plane();
    let mut data = vec![0.0f32; sh.numel()];
    let mut mean = vec![0.0f32; sh.b * plane];
    let mut rstd = vec![0.0f32; sh.b * plane];
    kernels::layer_norm_fwd(
        input.data(),
        sh.b,
        sh.c,
        plane,
        gamma.data(),
        beta.data(),
        eps,
        &mut data,
        &mut mean,
        &mut rstd,
    );
    let track = input.0.grad || gamma.0.grad || beta.0.grad;
    Ok(Tensor::from_op(
        sh,
        data,
        None,
        Op::LayerNorm {
            input: input.clone(),
            gamma: gamma.clone(),
            beta: beta.clone(),
            mean,
            rstd,
        },
        track,
    ))
}

pub(crate) fn softmax_lastdim(input: &Tensor) -> Tensor {
    let sh = input.shape();
    let rows = sh.b * sh.c * sh.h;
    let mut data = vec![0.0f32; sh.numel()];
    kernels::softmax_rows_fwd(input.data(), rows, sh.w, &mut data);
    Tensor::from_op(sh, data, None, Op::SoftmaxLastDim(input.clone()), input.0.grad)
}

pub(crate) fn l2_normalize_rows(input: &Tensor) -> Tensor {
    let sh = input.shape();
    let rows = sh.b * sh.c;
    let width = sh.plane();
    let mut data = vec![0.0f32; sh.numel()];
    let mut norms = Vec::with_capacity(rows);
    kernels::l2_normalize_rows_fwd(input.data(), rows, width, &mut data, &mut norms);
    Tensor::from_op(
        sh,
        data,
        None,
        Op::L2NormRows { input: input.clone(), norms },
        input.0.grad,
    )
}

pub(crate) fn channel_gram(q: &Tensor, k: &Tensor, heads: usize) -> Result<Tensor, TensorError> {
    let qs = q.shape();
    if qs != k.shape() {
        return Err(TensorError::ShapeMismatch { op: "channel_gram", a: qs, b: k.shape() });
    }
    if heads == 0 || qs.c % heads != 0 {
        return Err(TensorError::Invalid {
            op: "channel_gram",
            msg: format!("heads {heads} must divide channels {}", qs.c),
        });
    }
    let ch = qs.c / heads;
    let out_shape = Shape::new(qs.b, heads, ch, ch);
    let mut data = vec![0.0f32; out_shape.numel()];
    kernels::gram_fwd(q.data(), k.data(), qs.b, heads, ch, qs.plane(), &mut data);
    let track = q.0.grad || k.0.grad;
    Ok(Tensor::from_op(
        out_shape,
        data,
        None,
        Op::Gram { q: q.clone(), k: k.clone(), heads },
        track,
    ))
}

pub(crate) fn attn_apply(attn: &Tensor, v: &Tensor, heads: usize) -> Result<Tensor, TensorError> {
    let ash = attn.shape();
    let vs = v.shape();
    if heads == 0 || vs.c % heads != 0 {
        return Err(TensorError::Invalid {
            op: "attn_apply",
            msg: format!("heads {heads} must divide channels {}", vs.c),
        });
    }
    let ch = vs.c / heads;
    let want = Shape::new(vs.b, heads, ch, ch);
    if ash != want {
        return Err(TensorError::ShapeMismatch { op: "attn_apply", a: ash, b: want });
    }
    let mut data = vec![0.0f32; vs.numel()];
    kernels::attn_apply_fwd(attn.data(), v.data(), vs.b, heads, ch, vs.plane(), &mut data);
    let track = attn.0.grad || v.0.grad;
    Ok(Tensor::from_op(
        vs,
        data,
        None,
        Op::AttnApply { attn: attn.clone(), v: v.clone(), heads },
        track,
    ))
}

pub(crate) fn upsample(input: &Tensor, scale: usize, mode: UpsampleMode) -> Result<Tensor, TensorError> {
    if scale == 0 {
        return Err(TensorError::Invalid { op: "upsample", msg: "scale must be >= 1".into() });
    }
    let sh = input.shape();
    let out_shape = Shape::new(sh.b, sh.c, sh.h * scale, sh.w * scale);
    let taps_y = crate::resample::axis_taps(sh.h, scale, mode);
    let taps_x = crate::resample::axis_taps(sh.w, scale, mode);
    let mut data = vec![0.0f32; out_shape.numel()];
    let plane_in = sh.plane();
    let plane_out = out_shape.plane();
    for bc in 0..sh.b * sh.c {
        let src = &input.data()[bc * plane_in..(bc + 1) * plane_in];
        let dst = &mut data[bc * plane_out..(bc + 1) * plane_out];
        for (oy, ty) in taps_y.iter().enumerate() {
            for (ox, tx) in taps_x.iter().enumerate() {
                let mut acc = 0.0f64;
                for (iy, wy) in ty.idx.iter().zip(ty.w.iter()) {
                    for (ix, wx) in tx.idx.iter().zip(tx.w.iter()) {
                        acc += (src[iy * sh.w + ix] as f64) * wy * wx;
                    }
                }
                dst[oy * out_shape.w + ox] = acc as f32;
            }
        }
    }
    Ok(Tensor::from_op(
        out_shape,
        data,
        None,
        Op::Upsample { input: input.clone(), scale, mode },
        input.0.grad,
    ))
}

// ---------------------------------------------------------------------------
// Backward
// ---------------------------------------------------------------------------

/// Gradients of a scalar with respect to the leaves it depends on, keyed by
/// tensor id.
pub struct Gradients {
    map: HashMap<u64, Vec<f32>>,
}

impl Gradients {
    pub fn get(&self, t: &Tensor) -> Option<&[f32]> {
        self.map.get(&t.id()).map(|v| v.as_slice())
    }

    pub fn contains(&self, t: &Tensor) -> bool {
        self.map.contains_key(&t.id())
    }

    pub fn is_empty(&self) -> bool {
        self.map.is_empty()
    }

    pub fn len(&self) -> usize {
        self.map.len()
    }
}

pub(crate) fn backward(root: &Tensor) -> Result<Gradients, TensorError> {
    if !root.shape().is_scalar() {
        return Err(TensorError::NonScalarBackward(root.shape()));
    }
    if !root.0.grad {
        return Ok(Gradients { map: HashMap::new() });
    }

    // Collect all gradient-path nodes reachable from the root.
    let mut nodes: Vec<Tensor> = Vec::new();
    let mut seen: HashSet<u64> = HashSet::new();
    let mut stack: Vec<Tensor> = vec![root.clone()];
    seen.insert(root.id());
    while let Some(t) = stack.pop() {
        for input in t.0.op.inputs() {
            if input.0.grad && seen.insert(input.id()) {
                stack.push(input.clone());
            }
        }
        nodes.push(t);
    }
    // Descending creation id = reverse topological order.
    nodes.sort_unstable_by(|a, b| b.id().cmp(&a.id()));

    let mut grads: HashMap<u64, Vec<f32>> = HashMap::new();
    grads.insert(root.id(), vec![1.0]);

    for node in &nodes {
        if matches!(node.0.op, Op::Leaf) {
            continue; // keep the accumulated gradient for the caller
        }
        let g = match grads.remove(&node.id()) {
            Some(g) => g,
            None => continue, // unreachable in practice: every interior node feeds the root
        };
        apply_backward(node, &g, &mut grads);
    }

    // Only leaves remain.
    Ok(Gradients { map: grads })
}

fn acc_buf<'m>(grads: &'m mut HashMap<u64, Vec<f32>>, t: &Tensor) -> &'m mut [f32] {
    grads
        .entry(t.id())
        .or_insert_with(|| vec![0.0f32; t.shape().numel()])
        .as_mut_slice()
}

fn apply_backward(node: &Tensor, g: &[f32], grads: &mut HashMap<u64, Vec<f32>>) {
    let y = node.data();
    match &node.0.op {
        Op::Leaf => {}
        Op::Add(a, b) => {
            if a.0.grad {
                let buf = acc_buf(grads, a);
                for (d, gv) in buf.iter_mut().zip(g) {
                    *d += gv;
                }
            }
            if b.0.grad {
                let buf = acc_buf(grads, b);
                for (d, gv) in buf.iter_mut().zip(g) {
                    *d += gv;
                }
            }
        }
        Op::Sub(a, b) => {
            if a.0.grad {
                let buf = acc_buf(grads, a);
                for (d, gv) in buf.iter_mut().zip(g) {
                    *d += gv;
                }
            }
            if b.0.grad {
                let buf = acc_buf(grads, b);
                for (d, gv) in buf.iter_mut().zip(g) {
                    *d -= gv;
                }
            }
        }
        Op::Mul(a, b) => {
            if a.0.grad {
                let bd = b.data();
                let buf = acc_buf(grads, a);
                for i in 0..buf.len() {
                    buf[i] = fastmath::fmadd(g[i], bd[i], buf[i]);
                }
            }
            if b.0.grad {
                let ad = a.data();
                let buf = acc_buf(grads, b);
                for i in 0..buf.len() {
                    buf[i] = fastmath::fmadd(g[i], ad[i], buf[i]);
                }
            }
        }
        Op::Div(a, b) => {
            // y = a / b; da = g / b; db = -g * y / b
            if a.0.grad {
                let bd = b.data();
                let buf = acc_buf(grads, a);
                for i in 0..buf.len() {
                    buf[i] += g[i] / bd[i];
                }
            }
            if b.0.grad {
                let bd = b.data();
                let buf = acc_buf(grads, b);
                for i in 0..buf.len() {
                    buf[i] -= g[i] * y[i] / bd[i];
                }
            }
        }
        Op::AddScalar(a) => {
            if a.0.grad {
                let buf = acc_buf(grads, a);
                for (d, gv) in buf.iter_mut().zip(g) {
                    *d += gv;
                }
            }
        }
        Op::MulScalar(a, k) => {
            if a.0.grad {
                let buf = acc_buf(grads, a);
                kernels::axpy(buf, g, *k);
            }
        }
        Op::Sqrt(a) => {
            if a.0.grad {
                let buf = acc_buf(grads, a);
                for i in 0..buf.len() {
                    buf[i] += g[i] * 0.5 / y[i];
                }
            }
        }
        Op::Abs(a) => {
            if a.0.grad {
                let ad = a.data();
                let buf = acc_buf(grads, a);
                for i in 0..buf.len() {
                    let s = if ad[i] > 0.0 {
                        1.0
                    } else if ad[i] < 0.0 {
                        -1.0
                    } else {
                        0.0
                    };
                    buf[i] = fastmath::fmadd(g[i], s, buf[i]);
                }
            }
        }
        Op::Powf(a, p) => {
            if a.0.grad {
                let ad = a.data();
                let buf = acc_buf(grads, a);
                if *p == 2.0 {
                    for i in 0..buf.len() {
                        buf[i] = fastmath::fmadd(g[i], 2.0 * ad[i], buf[i]);
                    }
                } else if *p == 1.0 {
                    for i in 0..buf.len() {
                        buf[i] += g[i];
                    }
                } else {
                    for i in 0..buf.len() {
                        buf[i] = fastmath::fmadd(g[i], p * ad[i].powf(p - 1.0), buf[i]);
                    }
                }
            }
        }
        Op::Gelu(a) => {
            if a.0.grad {
                let ad = a.data();
                let buf = acc_buf(grads, a);
                for i in 0..buf.len() {
                    buf[i] = fastmath::fmadd(g[i], fastmath::gelu_grad_f32(ad[i]), buf[i]);
                }
            }
        }
        Op::Sigmoid(a) => {
            if a.0.grad {
                let buf = acc_buf(grads, a);
                for i in 0..buf.len() {
                    buf[i] = fastmath::fmadd(g[i], y[i] * (1.0 - y[i]), buf[i]);
                }
            }
        }
        Op::BroadcastMul(a, s) => {
            let sh = a.shape();
            let plane = sh.plane();
            if a.0.grad {
                let sd = s.data();
                let buf = acc_buf(grads, a);
                for b in 0..sh.b {
                    for c in 0..sh.c {
                        let base = (b * sh.c + c) * plane;
                        kernels::axpy(&mut buf[base..base + plane], &g[base..base + plane], sd[c]);
                    }
                }
            }
            if s.0.grad {
                let ad = a.data();
                let buf = acc_buf(grads, s);
                for b in 0..sh.b {
                    for c in 0..sh.c {
                        let base = (b * sh.c + c) * plane;
                        buf[c] += kernels::dot(&g[base..base + plane], &ad[base..base + plane]);
                    }
                }
            }
        }
        Op::BroadcastAdd(a, s) => {
            let sh = a.shape();
            let plane = sh.plane();
            if a.0.grad {
                let buf = acc_buf(grads, a);
                for (d, gv) in buf.iter_mut().zip(g) {
                    *d += gv;
                }
            }
            if s.0.grad {
                let buf = acc_buf(grads, s);
                for b in 0..sh.b {
                    for c in 0..sh.c {
                        let base = (b * sh.c + c) * plane;
                        buf[c] += kernels::slice_sum(&g[base..base + plane]);
                    }
                }
            }
        }
        Op::ConcatC(a, b) => {
            let (sa, sb) = (a.shape(), b.shape());
            let plane = sa.plane();
            let out_c = sa.c + sb.c;
            if a.0.grad {
                let buf = acc_buf(grads, a);
                for bi in 0..sa.b {
                    let src = bi * out_c * plane;
                    let dst = bi * sa.c * plane;
                    for i in 0..sa.c * plane {
                        buf[dst + i] += g[src + i];
                    }
                }
            }
            if b.0.grad {
                let buf = acc_buf(grads, b);
                for bi in 0..sa.b {
                    let src = bi * out_c * plane + sa.c * plane;
                    let dst = bi * sb.c * plane;
                    for i in 0..sb.c * plane {
                        buf[dst + i] += g[src + i];
                    }
                }
            }
        }
        Op::SliceC { input, start, len } => {
            if input.0.grad {
                let sh = input.shape();
                let plane = sh.plane();
                let buf = acc_buf(grads, input);
                for bi in 0..sh.b {
                    let dst = (bi * sh.c + start) * plane;
                    let src = bi * len * plane;
                    for i in 0..len * plane {
                        buf[dst + i] += g[src + i];
                    }
                }
            }
        }
        Op::MeanAll(a) => {
            if a.0.grad {
                let n = a.shape().numel();
                let gv = g[0] / n as f32;
                let buf = acc_buf(grads, a);
                for d in buf.iter_mut() {
                    *d += gv;
                }
            }
        }
        Op::SumAll(a) => {
            if a.0.grad {
                let gv = g[0];
                let buf = acc_buf(grads, a);
                for d in buf.iter_mut() {
                    *d += gv;
                }
            }
        }
        Op::Conv2d { input, weight, bias, dims } => {
            let need_din = input.0.grad;
            let need_dw = weight.0.grad;
            let need_db = bias.as_ref().map_or(false, |b| b.0.grad);
            // Compute into temporaries only when two consumers might share a
            // buffer; accumulation is additive so direct writes are safe.
            if need_din {
                acc_buf(grads, input);
            }
            if need_dw {
                acc_buf(grads, weight);
            }
            if need_db {
                acc_buf(grads, bias.as_ref().unwrap());
            }
            // Split borrows: take buffers out, run kernel, put back.
            let mut din = if need_din { grads.remove(&input.id()) } else { None };
            let mut dw = if need_dw { grads.remove(&weight.id()) } else { None };
            let mut db = if need_db { grads.remove(&bias.as_ref().unwrap().id()) } else { None };
            kernels::conv2d_bwd(
                input.data(),
                weight.data(),
                g,
                dims,
                din.as_deref_mut(),
                dw.as_deref_mut(),
                db.as_deref_mut(),
            );
            if let Some(v) = din {
                grads.insert(input.id(), v);
            }
            if let Some(v) = dw {
                grads.insert(weight.id(), v);
            }
            if let Some(v) = db {
                grads.insert(bias.as_ref().unwrap().id(), v);
            }
        }
        Op::LayerNorm { input, gamma, beta, mean, rstd } => {
            let sh = input.shape();
            let need_dx = input.0.grad;
            let need_dg = gamma.0.grad;
            let need_db = beta.0.grad;
            if need_dx {
                acc_buf(grads, input);
            }
            if need_dg {
                acc_buf(grads, gamma);
            }
            if need_db {
                acc_buf(grads, beta);
            }
            let mut dx = if need_dx { grads.remove(&input.id()) } else { None };
            let mut dg = if need_dg { grads.remove(&gamma.id()) } else { None };
            let mut db = if need_db { grads.remove(&beta.id()) } else { None };
            kernels::layer_norm_bwd(
                input.data(),
                sh.b,
                sh.c,
                sh.plane(),
                gamma.data(),
                mean,
                rstd,
                g,
                dx.as_deref_mut(),
                dg.as_deref_mut(),
                db.as_deref_mut(),
            );
            if let Some(v) = dx {
                grads.insert(input.id(), v);
            }
            if let Some(v) = dg {
                grads.insert(gamma.id(), v);
            }
            if let Some(v) = db {
                grads.insert(beta.id(), v);
            }
        }
        Op::SoftmaxLastDim(a) => {
            if a.0.grad {
                let sh = a.shape();
                let rows = sh.b * sh.c * sh.h;
                let buf = acc_buf(grads, a);
                kernels::softmax_rows_bwd(y, g, rows, sh.w, buf);
            }
        }
        Op::L2NormRows { input, norms } => {
            if input.0.grad {
                let sh = input.shape();
                let rows = sh.b * sh.c;
                let buf = acc_buf(grads, input);
                kernels::l2_normalize_rows_bwd(y, norms, g, rows, sh.plane(), buf);
            }
        }
        Op::Gram { q, k, heads } => {
            let qs = q.shape();
            let ch = qs.c / heads;
            let need_dq = q.0.grad;
            let need_dk = k.0.grad;
            if need_dq {
                acc_buf(grads, q);
            }
            if need_dk {
                acc_buf(grads, k);
            }
            let mut dq = if need_dq { grads.remove(&q.id()) } else { None };
            let mut dk = if need_dk { grads.remove(&k.id()) } else { None };
            kernels::gram_bwd(
                q.data(),
                k.data(),
                g,
                qs.b,
                *heads,
                ch,
                qs.plane(),
                dq.as_deref_mut(),
                dk.as_deref_mut(),
            );
            if let Some(v) = dq {
                grads.insert(q.id(), v);
            }
            if let Some(v) = dk {
                grads.insert(k.id(), v);
            }
        }
        Op::AttnApply { attn, v, heads } => {
            let vs = v.shape();
            let ch = vs.c / heads;
            let need_da = attn.0.grad;
            let need_dv = v.0.grad;
            if need_da {
                acc_buf(grads, attn);
            }
            if need_dv {
                acc_buf(grads, v);
            }
            let mut da = if need_da { grads.remove(&attn.id()) } else { None };
            let mut dv = if need_dv { grads.remove(&v.id()) } else { None };
            kernels::attn_apply_bwd(
                attn.data(),
                v.data(),
                g,
                vs.b,
                *heads,
                ch,
                vs.plane(),
                da.as_deref_mut(),
                dv.as_deref_mut(),
            );
            if let Some(buf) = da {
                grads.insert(attn.id(), buf);
            }
            if let Some(buf) = dv {
                grads.insert(v.id(), buf);
            }
        }
        Op::Upsample { input, scale, mode } => {
            if input.0.grad {
                let sh = input.shape();
                let out_sh = node.shape();
                let taps_y = crate::resample::axis_taps(sh.h, *scale, *mode);
                let taps_x = crate::resample::axis_taps(sh.w, *scale, *mode);
                let plane_in = sh.plane();
                let plane_out = out_sh.plane();
                let buf = acc_buf(grads, input);
                for bc in 0..sh.b * sh.c {
                    let dst = &mut buf[bc * plane_in..(bc + 1) * plane_in];
                    let gp = &g[bc * plane_out..(bc + 1) * plane_out];
                    for (oy, ty) in taps_y.iter().enumerate() {
                        for (ox, tx) in taps_x.iter().enumerate() {
                            let gv = gp[oy * out_sh.w + ox];
                            for (iy, wy) in ty.idx.iter().zip(ty.w.iter()) {
                                for (ix, wx) in tx.idx.iter().zip(tx.w.iter()) {
                                    dst[iy * sh.w + ix] =
                                        fastmath::fmadd(gv, (*wy * *wx) as f32, dst[iy * sh.w + ix]);
                                }
                            }
                        }
                    }
                }
            }
        }
    }
}
