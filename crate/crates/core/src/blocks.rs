//! Reusable layers: the CBR unit (conv3x3 → batch norm → ReLU), double-conv
//! encoder/decoder levels, the location guidance block and the siamese
//! adjustment block.
//!
//! Blocks are graph-building functions over a [`Forward`] pass; parameter
//! names follow the `stage.level.block.part` scheme (e.g.
//! `coarse.enc.3.cbr1.conv.weight`, `sa.fine.1.edge.bn.gamma`).

use crate::graph::Var;
use crate::params::{init, Forward, ParamStore};
use crate::rng::SplitMix64;
use crate::Elem;

/// How the siamese adjustment block treats the three slices.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum HeadMode {
    /// Only the center slice is adjusted; slices 1 and 3 pass through.
    Central,
    /// Every slice is adjusted from its own adjacent pair pattern.
    Multi,
}

/// Gate applied to the spatial attention map inside the LG block.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum LgGate {
    Softmax,
    Sigmoid,
}

// -- CBR ----------------------------------------------------------------------

/// Registers parameters for one CBR unit mapping `cin` → `cout` channels.
pub fn init_cbr(
    store: &mut ParamStore,
    rng: &mut SplitMix64,
    prefix: &str,
    cin: usize,
    cout: usize,
) {
    init::conv_weight(store, rng, &format!("{prefix}.conv.weight"), cout, cin, 3);
    init::conv_bias(store, &format!("{prefix}.conv.bias"), cout);
    init::batch_norm(store, &format!("{prefix}.bn"), cout);
}

/// conv3x3 (pad 1) → batch norm → ReLU; spatially shape-preserving.
pub fn cbr(fw: &mut Forward, x: Var, prefix: &str) -> Var {
    let w = fw.bind(&format!("{prefix}.conv.weight"));
    let b = fw.bind(&format!("{prefix}.conv.bias"));
    let conv = fw.graph.conv2d(x, w, b, 1);
    let bn = fw.batch_norm(conv, &format!("{prefix}.bn"));
    fw.graph.relu(bn)
}

pub fn init_double_cbr(
    store: &mut ParamStore,
    rng: &mut SplitMix64,
    prefix: &str,
    cin: usize,
    cout: usize,
) {
    init_cbr(store, rng, &format!("{prefix}.cbr1"), cin, cout);
    init_cbr(store, rng, &format!("{prefix}.cbr2"), cout, cout);
}

pub fn double_cbr(fw: &mut Forward, x: Var, prefix: &str) -> Var {
    let a = cbr(fw, x, &format!("{prefix}.cbr1"));
    cbr(fw, a, &format!("{prefix}.cbr2"))
}

// -- encoder / decoder levels ---------------------------------------------------

/// Double CBR then 2x max-pool. Returns (skip, downsampled).
pub fn encoder_level(fw: &mut Forward, x: Var, prefix: &str) -> (Var, Var) {
    let skip = double_cbr(fw, x, prefix);
    let down = fw.graph.max_pool2(skip);
    (skip, down)
}

/// Bilinear 2x upsample, concat the skip, double CBR.
pub fn decoder_level(fw: &mut Forward, x: Var, skip: Var, prefix: &str) -> Var {
    let up = fw.graph.upsample_bilinear2(x);
    let (_, _, uh, uw) = fw.graph.value(up).dims4();
    let (_, _, sh, sw) = fw.graph.value(skip).dims4();
    assert!(
        uh == sh && uw == sw,
        "decoder_level: upsampled {uh}x{uw} does not match skip {sh}x{sw}"
    );
    let cat = fw.graph.concat_channels(&[up, skip]);
    double_cbr(fw, cat, prefix)
}

// -- location guidance ------------------------------------------------------------

/// Registers parameters for one LG block: `reduce_loc` (1x1, loc_channels→1)
/// and `fuse` (1x1, 3→1).
pub fn init_lg(store: &mut ParamStore, rng: &mut SplitMix64, prefix: &str, loc_channels: usize) {
    init::conv_weight(
        store,
        rng,
        &format!("{prefix}.reduce_loc.weight"),
        1,
        loc_channels,
        1,
    );
    init::conv_bias(store, &format!("{prefix}.reduce_loc.bias"), 1);
    init::conv_weight(store, rng, &format!("{prefix}.fuse.weight"), 1, 3, 1);
    init::conv_bias(store, &format!("{prefix}.fuse.bias"), 1);
}

pub struct LgOut {
    pub out: Var,
    /// Pre-gate spatial attention map (single channel).
    pub sa_map: Var,
}

/// Location guidance: fuses channel-pooled descriptors of the encoder
/// feature with the reduced localization map into a spatial attention map,
/// gates the feature with it, and adds the residual:
/// `out = s_e ⊙ gate(sa_map) + s_e`.
pub fn lg_block(fw: &mut Forward, s_e: Var, loc: Var, prefix: &str, gate: LgGate) -> LgOut {
    let (_, _, h, w) = fw.graph.value(s_e).dims4();
    let (_, _, lh, lw) = fw.graph.value(loc).dims4();
    assert!(
        h == lh && w == lw,
        "lg_block: encoder feature {h}x{w} vs localization map {lh}x{lw}"
    );
    let mp = fw.graph.channel_max(s_e);
    let ap = fw.graph.channel_avg(s_e);
    let rw = fw.bind(&format!("{prefix}.reduce_loc.weight"));
    let rb = fw.bind(&format!("{prefix}.reduce_loc.bias"));
    let reduced = fw.graph.conv2d(loc, rw, rb, 0);
    let cat = fw.graph.concat_channels(&[mp, ap, reduced]);
    let fwt = fw.bind(&format!("{prefix}.fuse.weight"));
    let fbt = fw.bind(&format!("{prefix}.fuse.bias"));
    let sa_map = fw.graph.conv2d(cat, fwt, fbt, 0);
    let gated = match gate {
        LgGate::Softmax => fw.graph.spatial_softmax(sa_map),
        LgGate::Sigmoid => fw.graph.sigmoid(sa_map),
    };
    let scaled = fw.graph.gate_mul(s_e, gated);
    let out = fw.graph.add(scaled, s_e);
    LgOut { out, sa_map }
}

// -- siamese adjustment -------------------------------------------------------------

/// Registers parameters for one SA block at decoder width `c`: three CBR
/// units (edge, central, fuse), each mapping 2c → c channels.
pub fn init_sa(store: &mut ParamStore, rng: &mut SplitMix64, prefix: &str, c: usize) {
    init_cbr(store, rng, &format!("{prefix}.edge"), 2 * c, c);
    init_cbr(store, rng, &format!("{prefix}.central"), 2 * c, c);
    init_cbr(store, rng, &format!("{prefix}.fuse"), 2 * c, c);
}

pub struct SaOut {
    pub out: [Var; 3],
    /// Concatenated adjacent differences feeding the edge CBR (center head).
    pub edge_pre: Var,
    /// Concatenated adjacent products feeding the central CBR (center head).
    pub central_pre: Var,
}

/// Computes the SA adjustment for one slice given its (prev, this, next)
/// features; border slices pass themselves as the missing neighbor.
fn sa_head(fw: &mut Forward, prev: Var, this: Var, next: Var, prefix: &str) -> (Var, Var, Var) {
    let d1 = fw.graph.sub(prev, this);
    let d2 = fw.graph.sub(this, next);
    let edge_pre = fw.graph.concat_channels(&[d1, d2]);
    let edge = cbr(fw, edge_pre, &format!("{prefix}.edge"));
    let m1 = fw.graph.mul(prev, this);
    let m2 = fw.graph.mul(this, next);
    let central_pre = fw.graph.concat_channels(&[m1, m2]);
    let central = cbr(fw, central_pre, &format!("{prefix}.central"));
    let cat = fw.graph.concat_channels(&[central, edge]);
    let fused = cbr(fw, cat, &format!("{prefix}.fuse"));
    (fused, edge_pre, central_pre)
}

/// Siamese adjustment across the three slice features. Edge differences and
/// central overlaps of adjacent slices are fused; in central-head mode only
/// the middle slice is replaced while slices 1 and 3 pass through bitwise.
pub fn sa_block(fw: &mut Forward, f: [Var; 3], prefix: &str, head: HeadMode) -> SaOut {
    let s0 = fw.graph.value(f[0]).shape().to_vec();
    for &v in &f[1..] {
        assert_eq!(
            fw.graph.value(v).shape(),
            &s0[..],
            "sa_block: slice features disagree in shape"
        );
    }
    match head {
        HeadMode::Central => {
            let (fused, edge_pre, central_pre) = sa_head(fw, f[0], f[1], f[2], prefix);
            SaOut {
                out: [f[0], fused, f[2]],
                edge_pre,
                central_pre,
            }
        }
        HeadMode::Multi => {
            // Same three CBRs applied per slice; the missing neighbor of a
            // border slice is the slice itself, zeroing one difference.
            let (a1, _, _) = sa_head(fw, f[0], f[0], f[1], prefix);
            let (a2, edge_pre, central_pre) = sa_head(fw, f[0], f[1], f[2], prefix);
            let (a3, _, _) = sa_head(fw, f[1], f[2], f[2], prefix);
            SaOut {
                out: [a1, a2, a3],
                edge_pre,
                central_pre,
            }
        }
    }
}

// -- misc ----------------------------------------------------------------------------

/// 1x1 prediction head.
pub fn init_head(
    store: &mut ParamStore,
    rng: &mut SplitMix64,
    prefix: &str,
    cin: usize,
    classes: usize,
) {
    init::conv_weight(store, rng, &format!("{prefix}.weight"), classes, cin, 1);
    init::conv_bias(store, &format!("{prefix}.bias"), classes);
}

pub fn head(fw: &mut Forward, x: Var, prefix: &str) -> Var {
    let w = fw.bind(&format!("{prefix}.weight"));
    let b = fw.bind(&format!("{prefix}.bias"));
    fw.graph.conv2d(x, w, b, 0)
}

/// Uniform-gate residual factor of the LG block: with a constant attention
/// map the softmax gate is 1/(H*W) everywhere, so `out = s_e * (1 + 1/(H*W))`.
pub fn lg_uniform_gate_factor(h: usize, w: usize) -> Elem {
    1.0 + 1.0 / (h * w) as Elem
}
