//! Raw forward/backward compute kernels on flat row-major buffers.
//!
//! The graph layer owns shape bookkeeping; these functions assume shapes
//! were already validated. Loops are written so the innermost dimension is
//! the contiguous `x` axis with independent output lanes, which LLVM
//! vectorizes without any float reassociation (results stay deterministic).

use crate::Elem;

/// Deterministic 4-lane dot product; the fixed lane order makes the
/// summation order part of the function's contract.
#[inline]
pub fn dot(a: &[Elem], b: &[Elem]) -> Elem {
    debug_assert_eq!(a.len(), b.len());
    let mut acc = [0.0 as Elem; 4];
    let chunks = a.len() / 4;
    for i in 0..chunks {
        let j = i * 4;
        acc[0] += a[j] * b[j];
        acc[1] += a[j + 1] * b[j + 1];
        acc[2] += a[j + 2] * b[j + 2];
        acc[3] += a[j + 3] * b[j + 3];
    }
    let mut s = (acc[0] + acc[1]) + (acc[2] + acc[3]);
    for j in chunks * 4..a.len() {
        s += a[j] * b[j];
    }
    s
}

// ---------------------------------------------------------------------------
// Blocked matrix multiply
// ---------------------------------------------------------------------------

const MR: usize = 8;
const NR: usize = 16;

/// `C[m,n] += A[m,k] * B[k,n]`, register-blocked in MRxNR tiles with the B
/// panel packed contiguously per column block. The fixed tile order makes
/// results bit-reproducible.
pub fn matmul_acc(a: &[Elem], bmat: &[Elem], m: usize, kdim: usize, n: usize, c: &mut [Elem]) {
    debug_assert_eq!(a.len(), m * kdim);
    debug_assert_eq!(bmat.len(), kdim * n);
    debug_assert_eq!(c.len(), m * n);
    let n_main = n - n % NR;
    let m_main = m - m % MR;
    let mut panel = vec![0.0 as Elem; kdim * NR];
    for jj in (0..n_main).step_by(NR) {
        for p in 0..kdim {
            panel[p * NR..][..NR].copy_from_slice(&bmat[p * n + jj..][..NR]);
        }
        for ii in (0..m_main).step_by(MR) {
            let mut acc = [[0.0 as Elem; NR]; MR];
            for p in 0..kdim {
                let brow = &panel[p * NR..][..NR];
                for r in 0..MR {
                    let av = a[(ii + r) * kdim + p];
                    for q in 0..NR {
                        acc[r][q] += av * brow[q];
                    }
                }
            }
            for r in 0..MR {
                let crow = &mut c[(ii + r) * n + jj..][..NR];
                for q in 0..NR {
                    crow[q] += acc[r][q];
                }
            }
        }
        for i in m_main..m {
            let mut acc = [0.0 as Elem; NR];
            for p in 0..kdim {
                let av = a[i * kdim + p];
                let brow = &panel[p * NR..][..NR];
                for q in 0..NR {
                    acc[q] += av * brow[q];
                }
            }
            let crow = &mut c[i * n + jj..][..NR];
            for q in 0..NR {
                crow[q] += acc[q];
            }
        }
    }
    if n_main < n {
        let tail = n - n_main;
        for i in 0..m {
            for p in 0..kdim {
                let av = a[i * kdim + p];
                let brow = &bmat[p * n + n_main..][..tail];
                let crow = &mut c[i * n + n_main..][..tail];
                for q in 0..tail {
                    crow[q] += av * brow[q];
                }
            }
        }
    }
}

/// Blocked out-of-place transpose: `dst[n,m] = src[m,n]`.
pub fn transpose(src: &[Elem], m: usize, n: usize, dst: &mut [Elem]) {
    debug_assert_eq!(src.len(), m * n);
    debug_assert_eq!(dst.len(), m * n);
    const B: usize = 32;
    for i0 in (0..m).step_by(B) {
        for j0 in (0..n).step_by(B) {
            for i in i0..(i0 + B).min(m) {
                for j in j0..(j0 + B).min(n) {
                    dst[j * m + i] = src[i * n + j];
                }
            }
        }
    }
}

// ---------------------------------------------------------------------------
// Convolution (stride 1, square kernel, cross-correlation)
// ---------------------------------------------------------------------------
//
// Convolutions run as im2col + blocked GEMM per batch sample. Scratch
// buffers are reused through a thread-local arena (one model instance per
// thread; the graph layer is single-threaded per instance anyway).

use std::cell::RefCell;

#[derive(Default)]
struct ConvScratch {
    col: Vec<Elem>,
    aux: Vec<Elem>,
}

thread_local! {
    static SCRATCH: RefCell<ConvScratch> = RefCell::new(ConvScratch::default());
}

fn with_scratch<R>(f: impl FnOnce(&mut ConvScratch) -> R) -> R {
    SCRATCH.with(|s| f(&mut s.borrow_mut()))
}

fn ensure_len(v: &mut Vec<Elem>, len: usize) {
    if v.len() < len {
        v.resize(len, 0.0);
    }
}

/// Output spatial size for stride-1 convolution.
#[inline]
pub fn conv_out_size(input: usize, kernel: usize, pad: usize) -> usize {
    input + 2 * pad + 1 - kernel
}

/// Expands one sample into column form: `col[(ci*k+ky)*k+kx][y*wo+x]`.
fn im2col(
    x_b: &[Elem],
    (cin, h, w): (usize, usize, usize),
    k: usize,
    pad: usize,
    col: &mut [Elem],
) {
    let ho = conv_out_size(h, k, pad);
    let wo = conv_out_size(w, k, pad);
    let n = ho * wo;
    for ci in 0..cin {
        let plane = &x_b[ci * h * w..][..h * w];
        for ky in 0..k {
            for kx in 0..k {
                let row = &mut col[((ci * k + ky) * k + kx) * n..][..n];
                let y_lo = pad.saturating_sub(ky);
                let y_hi = (h + pad - ky).min(ho);
                let x_lo = pad.saturating_sub(kx);
                let x_hi = (w + pad - kx).min(wo);
                if y_lo > 0 {
                    row[..y_lo * wo].fill(0.0);
                }
                if y_hi < ho {
                    row[y_hi * wo..].fill(0.0);
                }
                for y in y_lo..y_hi {
                    let iy = y + ky - pad;
                    let dst = &mut row[y * wo..][..wo];
                    dst[..x_lo].fill(0.0);
                    dst[x_hi..].fill(0.0);
                    dst[x_lo..x_hi]
                        .copy_from_slice(&plane[iy * w + (x_lo + kx - pad)..][..x_hi - x_lo]);
                }
            }
        }
    }
}

/// Scatter-add of column-form gradients back into the input layout.
fn col2im_add(
    col: &[Elem],
    (cin, h, w): (usize, usize, usize),
    k: usize,
    pad: usize,
    dx_b: &mut [Elem],
) {
    let ho = conv_out_size(h, k, pad);
    let wo = conv_out_size(w, k, pad);
    let n = ho * wo;
    for ci in 0..cin {
        let plane = &mut dx_b[ci * h * w..][..h * w];
        for ky in 0..k {
            for kx in 0..k {
                let row = &col[((ci * k + ky) * k + kx) * n..][..n];
                let y_lo = pad.saturating_sub(ky);
                let y_hi = (h + pad - ky).min(ho);
                let x_lo = pad.saturating_sub(kx);
                let x_hi = (w + pad - kx).min(wo);
                for y in y_lo..y_hi {
                    let iy = y + ky - pad;
                    let src = &row[y * wo + x_lo..][..x_hi - x_lo];
                    let dst = &mut plane[iy * w + (x_lo + kx - pad)..][..x_hi - x_lo];
                    for i in 0..src.len() {
                        dst[i] += src[i];
                    }
                }
            }
        }
    }
}

/// `x: [B,Cin,H,W]`, `w: [Cout,Cin,k,k]`, `bias: [Cout]` → `[B,Cout,H',W']`.
pub fn conv2d_forward(
    x: &[Elem],
    (b, cin, h, w): (usize, usize, usize, usize),
    wgt: &[Elem],
    bias: &[Elem],
    (cout, k): (usize, usize),
    pad: usize,
) -> Vec<Elem> {
    let ho = conv_out_size(h, k, pad);
    let wo = conv_out_size(w, k, pad);
    let n = ho * wo;
    let kk = cin * k * k;
    let mut out = vec![0.0 as Elem; b * cout * n];
    with_scratch(|s| {
        if k > 1 {
            ensure_len(&mut s.col, kk * n);
        }
        for bi in 0..b {
            let x_b = &x[bi * cin * h * w..][..cin * h * w];
            let out_b = &mut out[bi * cout * n..][..cout * n];
            for co in 0..cout {
                out_b[co * n..][..n].fill(bias[co]);
            }
            if k == 1 {
                // Column form of a 1x1 convolution is the input itself.
                matmul_acc(wgt, x_b, cout, kk, n, out_b);
            } else {
                im2col(x_b, (cin, h, w), k, pad, &mut s.col[..kk * n]);
                matmul_acc(wgt, &s.col[..kk * n], cout, kk, n, out_b);
            }
        }
    });
    out
}

/// Gradient w.r.t. the convolution input.
pub fn conv2d_backward_input(
    dout: &[Elem],
    (b, cin, h, w): (usize, usize, usize, usize),
    wgt: &[Elem],
    (cout, k): (usize, usize),
    pad: usize,
    dx: &mut [Elem],
) {
    let ho = conv_out_size(h, k, pad);
    let wo = conv_out_size(w, k, pad);
    let n = ho * wo;
    let kk = cin * k * k;
    with_scratch(|s| {
        ensure_len(&mut s.aux, kk * cout);
        transpose(wgt, cout, kk, &mut s.aux[..kk * cout]);
        ensure_len(&mut s.col, kk * n);
        for bi in 0..b {
            let dout_b = &dout[bi * cout * n..][..cout * n];
            let dcol = &mut s.col[..kk * n];
            dcol.fill(0.0);
            matmul_acc(&s.aux[..kk * cout], dout_b, kk, cout, n, dcol);
            let dx_b = &mut dx[bi * cin * h * w..][..cin * h * w];
            if k == 1 {
                for i in 0..kk * n {
                    dx_b[i] += dcol[i];
                }
            } else {
                col2im_add(dcol, (cin, h, w), k, pad, dx_b);
            }
        }
    });
}

/// Gradients w.r.t. weight and bias.
pub fn conv2d_backward_params(
    dout: &[Elem],
    x: &[Elem],
    (b, cin, h, w): (usize, usize, usize, usize),
    (cout, k): (usize, usize),
    pad: usize,
    dw: &mut [Elem],
    db: &mut [Elem],
) {
    let ho = conv_out_size(h, k, pad);
    let wo = conv_out_size(w, k, pad);
    let n = ho * wo;
    let kk = cin * k * k;
    with_scratch(|s| {
        ensure_len(&mut s.col, kk * n);
        ensure_len(&mut s.aux, n * kk);
        for bi in 0..b {
            let x_b = &x[bi * cin * h * w..][..cin * h * w];
            let dout_b = &dout[bi * cout * n..][..cout * n];
            for co in 0..cout {
                let mut bsum = 0.0;
                for &v in &dout_b[co * n..][..n] {
                    bsum += v;
                }
                db[co] += bsum;
            }
            // dW += dOut_b [cout,n] * col_b^T [n,kk]
            let colt = if k == 1 {
                transpose(x_b, kk, n, &mut s.aux[..n * kk]);
                &s.aux[..n * kk]
            } else {
                im2col(x_b, (cin, h, w), k, pad, &mut s.col[..kk * n]);
                transpose(&s.col[..kk * n], kk, n, &mut s.aux[..n * kk]);
                &s.aux[..n * kk]
            };
            matmul_acc(dout_b, colt, cout, n, kk, dw);
        }
    });
}

// ---------------------------------------------------------------------------
// Pooling (2x2, stride 2)
// ---------------------------------------------------------------------------

/// Max pooling; ties go to the first element in row-major window order.
/// Returns (output, argmax) where argmax holds flat input indices.
pub fn max_pool2_forward(
    x: &[Elem],
    (b, c, h, w): (usize, usize, usize, usize),
) -> (Vec<Elem>, Vec<u32>) {
    assert!(h % 2 == 0 && w % 2 == 0, "max_pool2: odd spatial dims {h}x{w}");
    let (ho, wo) = (h / 2, w / 2);
    let mut out = vec![0.0 as Elem; b * c * ho * wo];
    let mut arg = vec![0u32; b * c * ho * wo];
    for p in 0..b * c {
        let plane = &x[p * h * w..][..h * w];
        for oy in 0..ho {
            for ox in 0..wo {
                let i00 = (2 * oy) * w + 2 * ox;
                let idx = [i00, i00 + 1, i00 + w, i00 + w + 1];
                let mut best = idx[0];
                let mut bv = plane[idx[0]];
                for &i in &idx[1..] {
                    if plane[i] > bv {
                        bv = plane[i];
                        best = i;
                    }
                }
                let o = p * ho * wo + oy * wo + ox;
                out[o] = bv;
                arg[o] = (p * h * w + best) as u32;
            }
        }
    }
    (out, arg)
}

pub fn max_pool2_backward(dout: &[Elem], argmax: &[u32], dx: &mut [Elem]) {
    for (o, &i) in argmax.iter().enumerate() {
        dx[i as usize] += dout[o];
    }
}

pub fn avg_pool2_forward(x: &[Elem], (b, c, h, w): (usize, usize, usize, usize)) -> Vec<Elem> {
    assert!(h % 2 == 0 && w % 2 == 0, "avg_pool2: odd spatial dims {h}x{w}");
    let (ho, wo) = (h / 2, w / 2);
    let mut out = vec![0.0 as Elem; b * c * ho * wo];
    for p in 0..b * c {
        let plane = &x[p * h * w..][..h * w];
        let oplane = &mut out[p * ho * wo..][..ho * wo];
        for oy in 0..ho {
            for ox in 0..wo {
                let i00 = (2 * oy) * w + 2 * ox;
                oplane[oy * wo + ox] =
                    0.25 * (plane[i00] + plane[i00 + 1] + plane[i00 + w] + plane[i00 + w + 1]);
            }
        }
    }
    out
}

pub fn avg_pool2_backward(
    dout: &[Elem],
    (b, c, h, w): (usize, usize, usize, usize),
    dx: &mut [Elem],
) {
    let (ho, wo) = (h / 2, w / 2);
    for p in 0..b * c {
        let dplane = &dout[p * ho * wo..][..ho * wo];
        let xplane = &mut dx[p * h * w..][..h * w];
        for oy in 0..ho {
            for ox in 0..wo {
                let g = 0.25 * dplane[oy * wo + ox];
                let i00 = (2 * oy) * w + 2 * ox;
                xplane[i00] += g;
                xplane[i00 + 1] += g;
                xplane[i00 + w] += g;
                xplane[i00 + w + 1] += g;
            }
        }
    }
}

// ---------------------------------------------------------------------------
// Bilinear 2x upsampling (align_corners = false)
// ---------------------------------------------------------------------------

/// Per-axis source taps for 2x upsampling: output index -> (i0, i1, frac).
fn bilinear_taps(n: usize) -> Vec<(usize, usize, Elem)> {
    (0..2 * n)
        .map(|o| {
            let src = ((o as Elem + 0.5) * 0.5 - 0.5).max(0.0);
            let i0 = src.floor() as usize;
            let i0 = i0.min(n - 1);
            let f = src - i0 as Elem;
            (i0, (i0 + 1).min(n - 1), f)
        })
        .collect()
}

pub fn upsample2_forward(x: &[Elem], (b, c, h, w): (usize, usize, usize, usize)) -> Vec<Elem> {
    let ty = bilinear_taps(h);
    let tx = bilinear_taps(w);
    let (ho, wo) = (2 * h, 2 * w);
    let mut out = vec![0.0 as Elem; b * c * ho * wo];
    for p in 0..b * c {
        let plane = &x[p * h * w..][..h * w];
        let oplane = &mut out[p * ho * wo..][..ho * wo];
        for (oy, &(y0, y1, fy)) in ty.iter().enumerate() {
            for (ox, &(x0, x1, fx)) in tx.iter().enumerate() {
                let top = plane[y0 * w + x0] * (1.0 - fx) + plane[y0 * w + x1] * fx;
                let bot = plane[y1 * w + x0] * (1.0 - fx) + plane[y1 * w + x1] * fx;
                oplane[oy * wo + ox] = top * (1.0 - fy) + bot * fy;
            }
        }
    }
    out
}

pub fn upsample2_backward(
    dout: &[Elem],
    (b, c, h, w): (usize, usize, usize, usize),
    dx: &mut [Elem],
) {
    let ty = bilinear_taps(h);
    let tx = bilinear_taps(w);
    let (ho, wo) = (2 * h, 2 * w);
    for p in 0..b * c {
        let dplane = &dout[p * ho * wo..][..ho * wo];
        let xplane = &mut dx[p * h * w..][..h * w];
        for (oy, &(y0, y1, fy)) in ty.iter().enumerate() {
            for (ox, &(x0, x1, fx)) in tx.iter().enumerate() {
                let g = dplane[oy * wo + ox];
                xplane[y0 * w + x0] += g * (1.0 - fy) * (1.0 - fx);
                xplane[y0 * w + x1] += g * (1.0 - fy) * fx;
                xplane[y1 * w + x0] += g * fy * (1.0 - fx);
                xplane[y1 * w + x1] += g * fy * fx;
            }
        }
    }
}

// ---------------------------------------------------------------------------
// Batch normalization
// ---------------------------------------------------------------------------

pub const BN_EPS: Elem = 1e-5;

pub struct BnForward {
    pub out: Vec<Elem>,
    /// Mean used for normalization (batch mean in train, running in eval).
    pub mean: Vec<Elem>,
    /// 1 / sqrt(var + eps) used for normalization.
    pub inv_std: Vec<Elem>,
    /// Biased batch variance (train mode only; drives the running update).
    pub batch_var: Option<Vec<Elem>>,
}

/// Train-mode batch norm: normalizes with batch statistics.
pub fn batch_norm_train(
    x: &[Elem],
    (b, c, h, w): (usize, usize, usize, usize),
    gamma: &[Elem],
    beta: &[Elem],
) -> BnForward {
    let n = b * h * w;
    assert!(
        n >= 2,
        "batch norm in train mode needs at least 2 elements per channel, got {n}; use a larger batch"
    );
    let plane = h * w;
    let mut mean = vec![0.0 as Elem; c];
    let mut var = vec![0.0 as Elem; c];
    for ci in 0..c {
        let mut s = 0.0;
        for bi in 0..b {
            let row = &x[(bi * c + ci) * plane..][..plane];
            for &v in row {
                s += v;
            }
        }
        let m = s / n as Elem;
        let mut sq = 0.0;
        for bi in 0..b {
            let row = &x[(bi * c + ci) * plane..][..plane];
            for &v in row {
                let d = v - m;
                sq += d * d;
            }
        }
        mean[ci] = m;
        var[ci] = sq / n as Elem;
    }
    let inv_std: Vec<Elem> = var.iter().map(|&v| 1.0 / (v + BN_EPS).sqrt()).collect();
    let out = bn_apply(x, (b, c, h, w), &mean, &inv_std, gamma, beta);
    BnForward {
        out,
        mean,
        inv_std,
        batch_var: Some(var),
    }
}

/// Eval-mode batch norm: normalizes with running statistics.
pub fn batch_norm_eval(
    x: &[Elem],
    dims: (usize, usize, usize, usize),
    gamma: &[Elem],
    beta: &[Elem],
    running_mean: &[Elem],
    running_var: &[Elem],
) -> BnForward {
    let inv_std: Vec<Elem> = running_var
        .iter()
        .map(|&v| 1.0 / (v + BN_EPS).sqrt())
        .collect();
    let out = bn_apply(x, dims, running_mean, &inv_std, gamma, beta);
    BnForward {
        out,
        mean: running_mean.to_vec(),
        inv_std,
        batch_var: None,
    }
}

fn bn_apply(
    x: &[Elem],
    (b, c, h, w): (usize, usize, usize, usize),
    mean: &[Elem],
    inv_std: &[Elem],
    gamma: &[Elem],
    beta: &[Elem],
) -> Vec<Elem> {
    let plane = h * w;
    let mut out = vec![0.0 as Elem; x.len()];
    for bi in 0..b {
        for ci in 0..c {
            let scale = gamma[ci] * inv_std[ci];
            let shift = beta[ci] - mean[ci] * scale;
            let xi = &x[(bi * c + ci) * plane..][..plane];
            let oi = &mut out[(bi * c + ci) * plane..][..plane];
            for i in 0..plane {
                oi[i] = xi[i] * scale + shift;
            }
        }
    }
    out
}

#[allow(clippy::too_many_arguments)]
pub fn batch_norm_backward(
    dout: &[Elem],
    x: &[Elem],
    (b, c, h, w): (usize, usize, usize, usize),
    gamma: &[Elem],
    mean: &[Elem],
    inv_std: &[Elem],
    train: bool,
    dx: &mut [Elem],
    dgamma: &mut [Elem],
    dbeta: &mut [Elem],
) {
    let plane = h * w;
    let n = (b * plane) as Elem;
    for ci in 0..c {
        let (m, inv) = (mean[ci], inv_std[ci]);
        let mut sum_dy = 0.0;
        let mut sum_dy_xhat = 0.0;
        for bi in 0..b {
            let base = (bi * c + ci) * plane;
            let dyr = &dout[base..][..plane];
            let xr = &x[base..][..plane];
            for i in 0..plane {
                let xhat = (xr[i] - m) * inv;
                sum_dy += dyr[i];
                sum_dy_xhat += dyr[i] * xhat;
            }
        }
        dbeta[ci] += sum_dy;
        dgamma[ci] += sum_dy_xhat;
        let g_inv = gamma[ci] * inv;
        for bi in 0..b {
            let base = (bi * c + ci) * plane;
            let dyr = &dout[base..][..plane];
            let xr = &x[base..][..plane];
            let dxr = &mut dx[base..][..plane];
            if train {
                for i in 0..plane {
                    let xhat = (xr[i] - m) * inv;
                    dxr[i] += g_inv * (dyr[i] - sum_dy / n - xhat * sum_dy_xhat / n);
                }
            } else {
                for i in 0..plane {
                    dxr[i] += g_inv * dyr[i];
                }
            }
        }
    }
}

// ---------------------------------------------------------------------------
// Softmax over spatial positions, channel reductions
// ---------------------------------------------------------------------------

/// Softmax over the H*W positions of a single-channel map, max-subtracted.
pub fn spatial_softmax_forward(x: &[Elem], (b, h, w): (usize, usize, usize)) -> Vec<Elem> {
    let plane = h * w;
    let mut out = vec![0.0 as Elem; x.len()];
    for bi in 0..b {
        let xi = &x[bi * plane..][..plane];
        let oi = &mut out[bi * plane..][..plane];
        let mut mx = Elem::NEG_INFINITY;
        for &v in xi {
            mx = mx.max(v);
        }
        let mut sum = 0.0;
        for i in 0..plane {
            let e = (xi[i] - mx).exp();
            oi[i] = e;
            sum += e;
        }
        let inv = 1.0 / sum;
        for v in oi.iter_mut() {
            *v *= inv;
        }
    }
    out
}

pub fn spatial_softmax_backward(
    dout: &[Elem],
    y: &[Elem],
    (b, h, w): (usize, usize, usize),
    dx: &mut [Elem],
) {
    let plane = h * w;
    for bi in 0..b {
        let dyi = &dout[bi * plane..][..plane];
        let yi = &y[bi * plane..][..plane];
        let dxi = &mut dx[bi * plane..][..plane];
        let s = dot(dyi, yi);
        for i in 0..plane {
            dxi[i] += yi[i] * (dyi[i] - s);
        }
    }
}

/// Per-position max across channels; ties go to the first channel.
pub fn channel_max_forward(
    x: &[Elem],
    (b, c, h, w): (usize, usize, usize, usize),
) -> (Vec<Elem>, Vec<u32>) {
    let plane = h * w;
    let mut out = vec![0.0 as Elem; b * plane];
    let mut arg = vec![0u32; b * plane];
    for bi in 0..b {
        for i in 0..plane {
            let mut bv = x[(bi * c) * plane + i];
            let mut bc = 0u32;
            for ci in 1..c {
                let v = x[(bi * c + ci) * plane + i];
                if v > bv {
                    bv = v;
                    bc = ci as u32;
                }
            }
            out[bi * plane + i] = bv;
            arg[bi * plane + i] = bc;
        }
    }
    (out, arg)
}

pub fn channel_max_backward(
    dout: &[Elem],
    argmax: &[u32],
    (b, c, h, w): (usize, usize, usize, usize),
    dx: &mut [Elem],
) {
    let plane = h * w;
    for bi in 0..b {
        for i in 0..plane {
            let ci = argmax[bi * plane + i] as usize;
            dx[(bi * c + ci) * plane + i] += dout[bi * plane + i];
        }
    }
}

pub fn channel_avg_forward(x: &[Elem], (b, c, h, w): (usize, usize, usize, usize)) -> Vec<Elem> {
    let plane = h * w;
    let mut out = vec![0.0 as Elem; b * plane];
    let inv = 1.0 / c as Elem;
    for bi in 0..b {
        for ci in 0..c {
            let xi = &x[(bi * c + ci) * plane..][..plane];
            let oi = &mut out[bi * plane..][..plane];
            for i in 0..plane {
                oi[i] += xi[i];
            }
        }
        for v in out[bi * plane..][..plane].iter_mut() {
            *v *= inv;
        }
    }
    out
}

pub fn channel_avg_backward(
    dout: &[Elem],
    (b, c, h, w): (usize, usize, usize, usize),
    dx: &mut [Elem],
) {
    let plane = h * w;
    let inv = 1.0 / c as Elem;
    for bi in 0..b {
        for ci in 0..c {
            let di = &dout[bi * plane..][..plane];
            let xi = &mut dx[(bi * c + ci) * plane..][..plane];
            for i in 0..plane {
                xi[i] += di[i] * inv;
            }
        }
    }
}

// ---------------------------------------------------------------------------
// Activations and elementwise helpers
// ---------------------------------------------------------------------------

#[inline]
pub fn sigmoid(x: Elem) -> Elem {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// Stable elementwise binary cross-entropy on a logit:
/// `max(z,0) - z*y + ln(1 + exp(-|z|))`.
#[inline]
pub fn bce_logit(z: Elem, y: Elem) -> Elem {
    z.max(0.0) - z * y + (-z.abs()).exp().ln_1p()
}
