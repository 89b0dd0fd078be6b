//! Raw f32 compute kernels behind the tensor ops.
//!
//! Hot loops are written as full-width row operations over zero-padded planes
//! so the autovectorizer sees branch-free, contiguous slices. Dot-product
//! reductions accumulate into a 16-lane array that is reduced once per kernel
//! tap, keeping the reduction off the critical path. All loops are serial and
//! run in a fixed order, so results are bit-reproducible on a given platform.

use crate::fastmath::{exp_f32, fmadd};

const LANES: usize = 16;

/// dst += k * src, elementwise over equal-length slices.
#[inline(always)]
pub fn axpy(dst: &mut [f32], src: &[f32], k: f32) {
    for (d, s) in dst.iter_mut().zip(src.iter()) {
        *d = fmadd(*s, k, *d);
    }
}

/// Accumulate the elementwise product of `a` and `b` into lane accumulators
/// without reducing; callers reduce once at the end via [`lanes_sum`].
#[inline(always)]
fn dot_accum(a: &[f32], b: &[f32], lanes: &mut [f32; LANES], tail: &mut f32) {
    let chunks = a.len() / LANES;
    for c in 0..chunks {
        let ax = &a[c * LANES..(c + 1) * LANES];
        let bx = &b[c * LANES..(c + 1) * LANES];
        for i in 0..LANES {
            lanes[i] = fmadd(ax[i], bx[i], lanes[i]);
        }
    }
    for i in chunks * LANES..a.len() {
        *tail = fmadd(a[i], b[i], *tail);
    }
}

#[inline(always)]
fn lanes_sum(lanes: &[f32; LANES], tail: f32) -> f32 {
    let mut s = tail;
    for &v in lanes {
        s += v;
    }
    s
}

/// Single-shot dot product of two equal-length slices.
#[inline(always)]
pub fn dot(a: &[f32], b: &[f32]) -> f32 {
    let mut lanes = [0.0f32; LANES];
    let mut tail = 0.0f32;
    dot_accum(a, b, &mut lanes, &mut tail);
    lanes_sum(&lanes, tail)
}

#[inline(always)]
pub fn slice_sum(a: &[f32]) -> f32 {
    let mut lanes = [0.0f32; LANES];
    let chunks = a.len() / LANES;
    for c in 0..chunks {
        let ax = &a[c * LANES..(c + 1) * LANES];
        for i in 0..LANES {
            lanes[i] += ax[i];
        }
    }
    let mut tail = 0.0f32;
    for &v in &a[chunks * LANES..] {
        tail += v;
    }
    lanes_sum(&lanes, tail)
}

// ---------------------------------------------------------------------------
// Convolution
// ---------------------------------------------------------------------------

/// Validated convolution geometry.
#[derive(Clone, Copy, Debug)]
pub struct ConvDims {
    pub b: usize,
    pub cin: usize,
    pub h: usize,
    pub w: usize,
    pub cout: usize,
    pub kh: usize,
    pub kw: usize,
    pub stride: usize,
    pub pad: usize,
    pub groups: usize,
    pub ho: usize,
    pub wo: usize,
}

impl ConvDims {
    pub fn cin_g(&self) -> usize {
        self.cin / self.groups
    }
    pub fn cout_g(&self) -> usize {
        self.cout / self.groups
    }
}

/// Copy a `h x w` plane into the centre of a zeroed `(h+2p) x (w+2p)` buffer.
#[inline]
fn pad_plane(src: &[f32], h: usize, w: usize, p: usize, dst: &mut [f32]) {
    let pw = w + 2 * p;
    for v in dst.iter_mut() {
        *v = 0.0;
    }
    for y in 0..h {
        let d = (y + p) * pw + p;
        dst[d..d + w].copy_from_slice(&src[y * w..y * w + w]);
    }
}

/// Forward convolution. `out` is fully overwritten.
pub fn conv2d_fwd(x: &[f32], wgt: &[f32], bias: Option<&[f32]>, d: &ConvDims, out: &mut [f32]) {
    if d.stride == 1 {
        conv2d_fwd_s1(x, wgt, bias, d, out);
    } else {
        conv2d_fwd_generic(x, wgt, bias, d, out);
    }
}

fn conv2d_fwd_s1(x: &[f32], wgt: &[f32], bias: Option<&[f32]>, d: &ConvDims, out: &mut [f32]) {
    let (ph, pw) = (d.h + 2 * d.pad, d.w + 2 * d.pad);
    let pplane = ph * pw;
    let in_plane = d.h * d.w;
    let out_plane = d.ho * d.wo;
    let cin_g = d.cin_g();
    let cout_g = d.cout_g();
    let ksz = d.kh * d.kw;
    let mut padded = vec![0.0f32; d.cin * pplane];
    for b in 0..d.b {
        for ci in 0..d.cin {
            pad_plane(
                &x[(b * d.cin + ci) * in_plane..][..in_plane],
                d.h,
                d.w,
                d.pad,
                &mut padded[ci * pplane..(ci + 1) * pplane],
            );
        }
        for g in 0..d.groups {
            for cog in 0..cout_g {
                let co = g * cout_g + cog;
                let o = &mut out[(b * d.cout + co) * out_plane..][..out_plane];
                let b0 = bias.map_or(0.0, |bv| bv[co]);
                for v in o.iter_mut() {
                    *v = b0;
                }
                for cig in 0..cin_g {
                    let ci = g * cin_g + cig;
                    let pp = &padded[ci * pplane..(ci + 1) * pplane];
                    let wbase = (co * cin_g + cig) * ksz;
                    for ky in 0..d.kh {
                        for kx in 0..d.kw {
                            let wv = wgt[wbase + ky * d.kw + kx];
                            for oy in 0..d.ho {
                                let orow = &mut o[oy * d.wo..oy * d.wo + d.wo];
                                let irow = &pp[(oy + ky) * pw + kx..(oy + ky) * pw + kx + d.wo];
                                axpy(orow, irow, wv);
                            }
                        }
                    }
                }
            }
        }
    }
}

fn conv2d_fwd_generic(x: &[f32], wgt: &[f32], bias: Option<&[f32]>, d: &ConvDims, out: &mut [f32]) {
    let in_plane = d.h * d.w;
    let out_plane = d.ho * d.wo;
    let cin_g = d.cin_g();
    let cout_g = d.cout_g();
    let ksz = d.kh * d.kw;
    for b in 0..d.b {
        for g in 0..d.groups {
            for cog in 0..cout_g {
                let co = g * cout_g + cog;
                let o = &mut out[(b * d.cout + co) * out_plane..][..out_plane];
                let b0 = bias.map_or(0.0, |bv| bv[co]);
                for oy in 0..d.ho {
                    for ox in 0..d.wo {
                        let mut acc = b0;
                        for cig in 0..cin_g {
                            let ci = g * cin_g + cig;
                            let xp = &x[(b * d.cin + ci) * in_plane..][..in_plane];
                            let wbase = (co * cin_g + cig) * ksz;
                            for ky in 0..d.kh {
                                let iy = (oy * d.stride + ky) as isize - d.pad as isize;
                                if iy < 0 || iy >= d.h as isize {
                                    continue;
                                }
                                for kx in 0..d.kw {
                                    let ix = (ox * d.stride + kx) as isize - d.pad as isize;
                                    if ix < 0 || ix >= d.w as isize {
                                        continue;
                                    }
                                    acc = fmadd(
                                        xp[iy as usize * d.w + ix as usize],
                                        wgt[wbase + ky * d.kw + kx],
                                        acc,
                                    );
                                }
                            }
                        }
                        o[oy * d.wo + ox] = acc;
                    }
                }
            }
        }
    }
}

/// Backward convolution. Each requested gradient buffer is accumulated into
/// (`+=`), so callers pass zeroed or partially accumulated buffers.
pub fn conv2d_bwd(
    x: &[f32],
    wgt: &[f32],
    gout: &[f32],
    d: &ConvDims,
    mut din: Option<&mut [f32]>,
    mut dw: Option<&mut [f32]>,
    mut db: Option<&mut [f32]>,
) {
    if d.stride == 1 {
        conv2d_bwd_s1(x, wgt, gout, d, din, dw, db);
        return;
    }
    // Generic fallback mirrors the forward loop structure.
    let in_plane = d.h * d.w;
    let out_plane = d.ho * d.wo;
    let cin_g = d.cin_g();
    let cout_g = d.cout_g();
    let ksz = d.kh * d.kw;
    for b in 0..d.b {
        for g in 0..d.groups {
            for cog in 0..cout_g {
                let co = g * cout_g + cog;
                let gp = &gout[(b * d.cout + co) * out_plane..][..out_plane];
                if let Some(db) = db.as_deref_mut() {
                    db[co] += slice_sum(gp);
                }
                for oy in 0..d.ho {
                    for ox in 0..d.wo {
                        let gv = gp[oy * d.wo + ox];
                        for cig in 0..cin_g {
                            let ci = g * cin_g + cig;
                            let wbase = (co * cin_g + cig) * ksz;
                            for ky in 0..d.kh {
                                let iy = (oy * d.stride + ky) as isize - d.pad as isize;
                                if iy < 0 || iy >= d.h as isize {
                                    continue;
                                }
                                for kx in 0..d.kw {
                                    let ix = (ox * d.stride + kx) as isize - d.pad as isize;
                                    if ix < 0 || ix >= d.w as isize {
                                        continue;
                                    }
                                    let xi = (b * d.cin + ci) * in_plane + iy as usize * d.w + ix as usize;
                                    if let Some(din) = din.as_deref_mut() {
                                        din[xi] = fmadd(gv, wgt[wbase + ky * d.kw + kx], din[xi]);
                                    }
                                    if let Some(dw) = dw.as_deref_mut() {
                                        dw[wbase + ky * d.kw + kx] = fmadd(gv, x[xi], dw[wbase + ky * d.kw + kx]);
                                    }
                                }
                            }
                        }
                    }
                }
            }
        }
    }
}

fn conv2d_bwd_s1(
    x: &[f32],
    wgt: &[f32],
    gout: &[f32],
    d: &ConvDims,
    mut din: Option<&mut [f32]>,
    mut dw: Option<&mut [f32]>,
    mut db: Option<&mut [f32]>,
) {
    let (ph, pw) = (d.h + 2 * d.pad, d.w + 2 * d.pad);
    let pplane = ph * pw;
    let in_plane = d.h * d.w;
    let out_plane = d.ho * d.wo;
    let cin_g = d.cin_g();
    let cout_g = d.cout_g();
    let ksz = d.kh * d.kw;
    let need_din = din.is_some();
    let need_dw = dw.is_some();
    let mut padded = if need_dw {
        vec![0.0f32; d.cin * pplane]
    } else {
        Vec::new()
    };
    let mut dpad = if need_din {
        vec![0.0f32; d.cin * pplane]
    } else {
        Vec::new()
    };
    for b in 0..d.b {
        if need_dw {
            for ci in 0..d.cin {
                pad_plane(
                    &x[(b * d.cin + ci) * in_plane..][..in_plane],
                    d.h,
                    d.w,
                    d.pad,
                    &mut padded[ci * pplane..(ci + 1) * pplane],
                );
            }
        }
        if need_din {
            for v in dpad.iter_mut() {
                *v = 0.0;
            }
        }
        for g in 0..d.groups {
            for cog in 0..cout_g {
                let co = g * cout_g + cog;
                let gp = &gout[(b * d.cout + co) * out_plane..][..out_plane];
                if let Some(db) = db.as_deref_mut() {
                    db[co] += slice_sum(gp);
                }
                for cig in 0..cin_g {
                    let ci = g * cin_g + cig;
                    let wbase = (co * cin_g + cig) * ksz;
                    for ky in 0..d.kh {
                        for kx in 0..d.kw {
                            let wv = wgt[wbase + ky * d.kw + kx];
                            let mut lanes = [0.0f32; LANES];
                            let mut tail = 0.0f32;
                            for oy in 0..d.ho {
                                let grow = &gp[oy * d.wo..oy * d.wo + d.wo];
                                let off = (oy + ky) * pw + kx;
                                if need_din {
                                    let drow = &mut dpad[ci * pplane + off..ci * pplane + off + d.wo];
                                    axpy(drow, grow, wv);
                                }
                                if need_dw {
                                    let xrow = &padded[ci * pplane + off..ci * pplane + off + d.wo];
                                    dot_accum(grow, xrow, &mut lanes, &mut tail);
                                }
                            }
                            if let Some(dw) = dw.as_deref_mut() {
                                dw[wbase + ky * d.kw + kx] += lanes_sum(&lanes, tail);
                            }
                        }
                    }
                }
            }
        }
        if let Some(din) = din.as_deref_mut() {
            for ci in 0..d.cin {
                let dp = &dpad[ci * pplane..(ci + 1) * pplane];
                let dst = &mut din[(b * d.cin + ci) * in_plane..][..in_plane];
                for y in 0..d.h {
                    let s = (y + d.pad) * pw + d.pad;
                    let drow = &mut dst[y * d.w..y * d.w + d.w];
                    let srow = &dp[s..s + d.w];
                    for (dv, sv) in drow.iter_mut().zip(srow.iter()) {
                        *dv += sv;
                    }
                }
            }
        }
    }
}

// ---------------------------------------------------------------------------
// Layer norm over the channel axis
// ---------------------------------------------------------------------------

/// Forward layer norm across channels at each spatial position.
/// `mean` and `rstd` are per-(batch, pixel) buffers of length `b * plane`.
#[allow(clippy::too_many_arguments)]
pub fn layer_norm_fwd(
    x: &[f32],
    b: usize,
    c: usize,
    plane: usize,
    gamma: &[f32],
    beta: &[f32],
    eps: f32,
    out: &mut [f32],
    mean: &mut [f32],
    rstd: &mut [f32],
) {
    let inv_c = 1.0f32 / c as f32;
    for bi in 0..b {
        let m = &mut mean[bi * plane..(bi + 1) * plane];
        for v in m.iter_mut() {
            *v = 0.0;
        }
        for ci in 0..c {
            let xp = &x[(bi * c + ci) * plane..][..plane];
            for (mv, xv) in m.iter_mut().zip(xp.iter()) {
                *mv += *xv;
            }
        }
        for v in m.iter_mut() {
            *v *= inv_c;
        }
        let r = &mut rstd[bi * plane..(bi + 1) * plane];
        for v in r.iter_mut() {
            *v = 0.0;
        }
        for ci in 0..c {
            let xp = &x[(bi * c + ci) * plane..][..plane];
            for ((rv, xv), mv) in r.iter_mut().zip(xp.iter()).zip(m.iter()) {
                let dv = xv - mv;
                *rv = fmadd(dv, dv, *rv);
            }
        }
        for v in r.iter_mut() {
            *v = 1.0 / (*v * inv_c + eps).sqrt();
        }
        for ci in 0..c {
            let xp = &x[(bi * c + ci) * plane..][..plane];
            let op = &mut out[(bi * c + ci) * plane..][..plane];
            let (gc, bc) = (gamma[ci], beta[ci]);
            for ((ov, xv), (mv, rv)) in op.iter_mut().zip(xp.iter()).zip(m.iter().zip(r.iter())) {
                *ov = fmadd((xv - mv) * rv, gc, bc);
            }
        }
    }
}

/// Backward layer norm. `dx`, `dgamma`, `dbeta` are accumulated into when
/// present.
#[allow(clippy::too_many_arguments)]
pub fn layer_norm_bwd(
    x: &[f32],
    b: usize,
    c: usize,
    plane: usize,
    gamma: &[f32],
    mean: &[f32],
    rstd: &[f32],
    gout: &[f32],
    mut dx: Option<&mut [f32]>,
    mut dgamma: Option<&mut [f32]>,
    mut dbeta: Option<&mut [f32]>,
) {
    let inv_c = 1.0f32 / c as f32;
    let mut s1 = vec![0.0f32; plane];
    let mut s2 = vec![0.0f32; plane];
    for bi in 0..b {
        let m = &mean[bi * plane..(bi + 1) * plane];
        let r = &rstd[bi * plane..(bi + 1) * plane];
        if dx.is_some() {
            for v in s1.iter_mut() {
                *v = 0.0;
            }
            for v in s2.iter_mut() {
                *v = 0.0;
            }
            for ci in 0..c {
                let g = &gout[(bi * c + ci) * plane..][..plane];
                let xp = &x[(bi * c + ci) * plane..][..plane];
                let gc = gamma[ci];
                for i in 0..plane {
                    let gg = gc * g[i];
                    s1[i] += gg;
                    let xhat = (xp[i] - m[i]) * r[i];
                    s2[i] = fmadd(gg, xhat, s2[i]);
                }
            }
        }
        for ci in 0..c {
            let g = &gout[(bi * c + ci) * plane..][..plane];
            let xp = &x[(bi * c + ci) * plane..][..plane];
            let gc = gamma[ci];
            if let Some(dx) = dx.as_deref_mut() {
                let dp = &mut dx[(bi * c + ci) * plane..][..plane];
                for i in 0..plane {
                    let xhat = (xp[i] - m[i]) * r[i];
                    dp[i] += r[i] * (gc * g[i] - s1[i] * inv_c - xhat * s2[i] * inv_c);
                }
            }
            if let Some(dgamma) = dgamma.as_deref_mut() {
                let mut acc = 0.0f32;
                for i in 0..plane {
                    acc = fmadd(g[i], (xp[i] - m[i]) * r[i], acc);
                }
                dgamma[ci] += acc;
            }
            if let Some(dbeta) = dbeta.as_deref_mut() {
                dbeta[ci] += slice_sum(g);
            }
        }
    }
}

// ---------------------------------------------------------------------------
// Softmax over the last axis
// ---------------------------------------------------------------------------

pub fn softmax_rows_fwd(x: &[f32], rows: usize, width: usize, out: &mut [f32]) {
    for rr in 0..rows {
        let xr = &x[rr * width..(rr + 1) * width];
        let or = &mut out[rr * width..(rr + 1) * width];
        let mut m = f32::NEG_INFINITY;
        for &v in xr {
            if v > m {
                m = v;
            }
        }
        let mut s = 0.0f32;
        for (o, &v) in or.iter_mut().zip(xr.iter()) {
            let e = exp_f32(v - m);
            *o = e;
            s += e;
        }
        let inv = 1.0 / s;
        for o in or.iter_mut() {
            *o *= inv;
        }
    }
}

/// dx += y * (g - sum(g * y)) per row.
pub fn softmax_rows_bwd(y: &[f32], gout: &[f32], rows: usize, width: usize, dx: &mut [f32]) {
    for rr in 0..rows {
        let yr = &y[rr * width..(rr + 1) * width];
        let gr = &gout[rr * width..(rr + 1) * width];
        let dr = &mut dx[rr * width..(rr + 1) * width];
        let d = dot(gr, yr);
        for i in 0..width {
            dr[i] = fmadd(yr[i], gr[i] - d, dr[i]);
        }
    }
}

// ---------------------------------------------------------------------------
// L2 row normalization (rows = per-channel spatial vectors)
// ---------------------------------------------------------------------------

pub const L2_NORM_FLOOR: f32 = 1e-12;

/// Normalizes each `width`-long row by `max(||row||, 1e-12)`. Returns the raw
/// norms (pre-clamp) for the backward pass.
pub fn l2_normalize_rows_fwd(x: &[f32], rows: usize, width: usize, out: &mut [f32], norms: &mut Vec<f32>) {
    norms.clear();
    for rr in 0..rows {
        let xr = &x[rr * width..(rr + 1) * width];
        let n = dot(xr, xr).sqrt();
        norms.push(n);
        let inv = 1.0 / n.max(L2_NORM_FLOOR);
        let or = &mut out[rr * width..(rr + 1) * width];
        for (o, &v) in or.iter_mut().zip(xr.iter()) {
            *o = v * inv;
        }
    }
}

pub fn l2_normalize_rows_bwd(
    y: &[f32],
    norms: &[f32],
    gout: &[f32],
    rows: usize,
    width: usize,
    dx: &mut [f32],
) {
    for rr in 0..rows {
        let yr = &y[rr * width..(rr + 1) * width];
        let gr = &gout[rr * width..(rr + 1) * width];
        let dr = &mut dx[rr * width..(rr + 1) * width];
        let n = norms[rr];
        if n < L2_NORM_FLOOR {
            // Clamped denominator acts as a constant.
            let inv = 1.0 / L2_NORM_FLOOR;
            for i in 0..width {
                dr[i] = fmadd(gr[i], inv, dr[i]);
            }
        } else {
            let inv = 1.0 / n;
            let d = dot(gr, yr);
            for i in 0..width {
                dr[i] = fmadd(inv, gr[i] - yr[i] * d, dr[i]);
            }
        }
    }
}

// ---------------------------------------------------------------------------
// Channel attention: gram matrix and application
// ---------------------------------------------------------------------------

/// A[b, hd, i, j] = dot(q[b, hd*ch+i, :], k[b, hd*ch+j, :]) over the spatial
/// plane.
pub fn gram_fwd(q: &[f32], k: &[f32], b: usize, heads: usize, ch: usize, plane: usize, out: &mut [f32]) {
    for bi in 0..b {
        for hd in 0..heads {
            for i in 0..ch {
                let qr = &q[(bi * heads * ch + hd * ch + i) * plane..][..plane];
                for j in 0..ch {
                    let kr = &k[(bi * heads * ch + hd * ch + j) * plane..][..plane];
                    out[((bi * heads + hd) * ch + i) * ch + j] = dot(qr, kr);
                }
            }
        }
    }
}

#[allow(clippy::too_many_arguments)]
pub fn gram_bwd(
    q: &[f32],
    k: &[f32],
    gout: &[f32],
    b: usize,
    heads: usize,
    ch: usize,
    plane: usize,
    mut dq: Option<&mut [f32]>,
    mut dk: Option<&mut [f32]>,
) {
    for bi in 0..b {
        for hd in 0..heads {
            let gbase = (bi * heads + hd) * ch * ch;
            if let Some(dq) = dq.as_deref_mut() {
                for i in 0..ch {
                    let dr = &mut dq[(bi * heads * ch + hd * ch + i) * plane..][..plane];
                    for j in 0..ch {
                        let kr = &k[(bi * heads * ch + hd * ch + j) * plane..][..plane];
                        axpy(dr, kr, gout[gbase + i * ch + j]);
                    }
                }
            }
            if let Some(dk) = dk.as_deref_mut() {
                for j in 0..ch {
                    let dr = &mut dk[(bi * heads * ch + hd * ch + j) * plane..][..plane];
                    for i in 0..ch {
                        let qr = &q[(bi * heads * ch + hd * ch + i) * plane..][..plane];
                        axpy(dr, qr, gout[gbase + i * ch + j]);
                    }
                }
            }
        }
    }
}

/// out[b, hd*ch+i, :] = sum_j A[b, hd, i, j] * v[b, hd*ch+j, :]
pub fn attn_apply_fwd(a: &[f32], v: &[f32], b: usize, heads: usize, ch: usize, plane: usize, out: &mut [f32]) {
    for x in out.iter_mut() {
        *x = 0.0;
    }
    for bi in 0..b {
        for hd in 0..heads {
            let abase = (bi * heads + hd) * ch * ch;
            for i in 0..ch {
                let or = &mut out[(bi * heads * ch + hd * ch + i) * plane..][..plane];
                for j in 0..ch {
                    let vr = &v[(bi * heads * ch + hd * ch + j) * plane..][..plane];
                    axpy(or, vr, a[abase + i * ch + j]);
                }
            }
        }
    }
}

#[allow(clippy::too_many_arguments)]
pub fn attn_apply_bwd(
    a: &[f32],
    v: &[f32],
    gout: &[f32],
    b: usize,
    heads: usize,
    ch: usize,
    plane: usize,
    mut da: Option<&mut [f32]>,
    mut dv: Option<&mut [f32]>,
) {
    for bi in 0..b {
        for hd in 0..heads {
            let abase = (bi * heads + hd) * ch * ch;
            if let Some(da) = da.as_deref_mut() {
                for i in 0..ch {
                    let gr = &gout[(bi * heads * ch + hd * ch + i) * plane..][..plane];
                    for j in 0..ch {
                        let vr = &v[(bi * heads * ch + hd * ch + j) * plane..][..plane];
                        da[abase + i * ch + j] += dot(gr, vr);
                    }
                }
            }
            if let Some(dv) = dv.as_deref_mut() {
                for j in 0..ch {
                    let dr = &mut dv[(bi * heads * ch + hd * ch + j) * plane..][..plane];
                    for i in 0..ch {
                        let gr = &gout[(bi * heads * ch + hd * ch + i) * plane..][..plane];
                        axpy(dr, gr, a[abase + i * ch + j]);
                    }
                }
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn dot_handles_tails() {
        let a: Vec<f32> = (0..37).map(|i| i as f32).collect();
        let b = vec![2.0f32; 37];
        let want: f32 = (0..37).map(|i| 2.0 * i as f32).sum();
        assert_eq!(dot(&a, &b), want);
    }

    #[test]
    fn conv_identity_kernel_is_bit_exact() {
        // 1x1 kernel with weight 1.0 must reproduce the input bit-for-bit.
        let d = ConvDims {
            b: 1,
            cin: 1,
            h: 4,
            w: 5,
            cout: 1,
            kh: 1,
            kw: 1,
            stride: 1,
            pad: 0,
            groups: 1,
            ho: 4,
            wo: 5,
        };
        let x: Vec<f32> = (0..20).map(|i| (i as f32 * 0.37).sin()).collect();
        let mut out = vec![0.0f32; 20];
        conv2d_fwd(&x, &[1.0], None, &d, &mut out);
        assert_eq!(out, x);
    }

    #[test]
    fn conv_all_ones_centre() {
        // 3x3 all-ones kernel over an all-ones 5x5 image: centre output 9.
        let d = ConvDims {
            b: 1,
            cin: 1,
            h: 5,
            w: 5,
            cout: 1,
            kh: 3,
            kw: 3,
            stride: 1,
            pad: 1,
            groups: 1,
            ho: 5,
            wo: 5,
        };
        let x = vec![1.0f32; 25];
        let w = vec![1.0f32; 9];
        let mut out = vec![0.0f32; 25];
        conv2d_fwd(&x, &w, None, &d, &mut out);
        assert_eq!(out[12], 9.0);
        assert_eq!(out[0], 4.0); // corner sees a 2x2 window
        assert_eq!(out[2], 6.0); // edge sees a 2x3 window
    }

    #[test]
    fn strided_conv_matches_manual() {
        let d = ConvDims {
            b: 1,
            cin: 1,
            h: 4,
            w: 4,
            cout: 1,
            kh: 2,
            kw: 2,
            stride: 2,
            pad: 0,
            groups: 1,
            ho: 2,
            wo: 2,
        };
        let x: Vec<f32> = (1..=16).map(|i| i as f32).collect();
        let w = vec![1.0f32; 4];
        let mut out = vec![0.0f32; 4];
        conv2d_fwd(&x, &w, None, &d, &mut out);
        // 2x2 sums of disjoint quadrant-aligned windows.
        assert_eq!(out, vec![1. + 2. + 5. + 6., 3. + 4. + 7. + 8., 9. + 10. + 13. + 14., 11. + 12. + 15. + 16.]);
    }

    #[test]
    fn grouped_conv_keeps_channels_separate() {
        // Depthwise: 2 channels, each with its own 1x1 weight.
        let d = ConvDims {
            b: 1,
            cin: 2,
            h: 1,
            w: 2,
            cout: 2,
            kh: 1,
            kw: 1,
            stride: 1,
            pad: 0,
            groups: 2,
            ho: 1,
            wo: 2,
        };
        let x = vec![1.0f32, 2.0, 3.0, 4.0];
        let w = vec![10.0f32, 100.0];
        let mut out = vec![0.0f32; 4];
        conv2d_fwd(&x, &w, None, &d, &mut out);
        assert_eq!(out, vec![10.0, 20.0, 300.0, 400.0]);
    }

    #[test]
    fn softmax_anchor() {
        // softmax(ln 2, 0) = (2/3, 1/3)
        let x = vec![std::f32::consts::LN_2, 0.0];
        let mut out = vec![0.0f32; 2];
        softmax_rows_fwd(&x, 1, 2, &mut out);
        assert!((out[0] - 2.0 / 3.0).abs() < 1e-6);
        assert!((out[1] - 1.0 / 3.0).abs() < 1e-6);
    }

    #[test]
    fn l2_normalize_anchor() {
        // (3,4) -> (0.6, 0.8)
        let x = vec![3.0f32, 4.0];
        let mut out = vec![0.0f32; 2];
        let mut norms = Vec::new();
        l2_normalize_rows_fwd(&x, 1, 2, &mut out, &mut norms);
        assert_eq!(out, vec![0.6, 0.8]);
        assert_eq!(norms, vec![5.0]);
    }

    #[test]
    fn layer_norm_constant_input_is_zero() {
        let b = 1;
        let c = 4;
        let plane = 6;
        let x = vec![3.25f32; c * plane];
        let gamma = vec![1.0f32; c];
        let beta = vec![0.0f32; c];
        let mut out = vec![9.0f32; c * plane];
        let mut mean = vec![0.0f32; plane];
        let mut rstd = vec![0.0f32; plane];
        layer_norm_fwd(&x, b, c, plane, &gamma, &beta, 1e-5, &mut out, &mut mean, &mut rstd);
        for &v in &out {
            assert_eq!(v, 0.0);
        }
    }

    #[test]
    fn gram_matches_manual_dot() {
        // 2 channels, plane 3, 1 head
        let q = vec![1.0f32, 0.0, 2.0, /* ch1 */ 0.0, 1.0, 1.0];
        let k = vec![1.0f32, 1.0, 1.0, /* ch1 */ 2.0, 0.0, 0.0];
        let mut out = vec![0.0f32; 4];
        gram_fwd(&q, &k, 1, 1, 2, 3, &mut out);
        assert_eq!(out, vec![3.0, 2.0, 2.0, 0.0]);
    }
}
