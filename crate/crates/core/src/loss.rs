//! Compound supervision: per-slice Dice + BCE, slice weighting across the
//! triplet, and the coarse/fine stage combination.

use crate::graph::{Graph, Var};
use crate::tensor::Tensor;
use crate::Elem;

#[derive(Clone, Copy, Debug)]
pub struct LossWeights {
    /// Adjacent-slice weight; the center slice gets `1 - 2*alpha`.
    pub alpha: Elem,
    /// Coarse-stage weight; the fine stage gets `1 - beta`.
    pub beta: Elem,
    /// Weight of the BCE term inside a slice loss (Dice weight is 1).
    pub bce_weight: Elem,
    /// Smoothing epsilon of the soft Dice ratio.
    pub dice_smooth: Elem,
}

impl Default for LossWeights {
    fn default() -> Self {
        LossWeights {
            alpha: 0.33,
            beta: 0.5,
            bce_weight: 0.5,
            dice_smooth: 1.0,
        }
    }
}

impl LossWeights {
    pub fn validate(&self) -> Result<(), String> {
        if !(0.0..=0.5).contains(&self.alpha) {
            return Err(format!("alpha must be in [0, 0.5], got {}", self.alpha));
        }
        if !(0.0..=1.0).contains(&self.beta) {
            return Err(format!("beta must be in [0, 1], got {}", self.beta));
        }
        if self.bce_weight < 0.0 || self.dice_smooth < 0.0 {
            return Err("bce_weight and dice_smooth must be non-negative".into());
        }
        Ok(())
    }

    /// `(alpha, 1-2*alpha, alpha)`; sums to 1 for any alpha.
    pub fn slice_weights(&self) -> [Elem; 3] {
        [self.alpha, 1.0 - 2.0 * self.alpha, self.alpha]
    }
}

/// Soft Dice loss `1 - (2*Σ(y·ŷ)+ε) / (Σy+Σŷ+ε)`, evaluated per sample and
/// class, then averaged. `pred_prob` must already be in [0, 1].
pub fn dice_loss(g: &mut Graph, pred_prob: Var, gt: Var, smooth: Elem) -> Var {
    let prod = g.mul(pred_prob, gt);
    let inter = g.sum_spatial(prod);
    let psum = g.sum_spatial(pred_prob);
    let gsum = g.sum_spatial(gt);
    let num = g.affine(inter, 2.0, smooth);
    let sums = g.add(psum, gsum);
    let den = g.affine(sums, 1.0, smooth);
    let ratio = g.div(num, den);
    let mean = g.mean_all(ratio);
    g.affine(mean, -1.0, 1.0)
}

/// Numerically stable binary cross-entropy on logits, mean over all pixels.
/// Includes the `(1-y)·log(1-ŷ)` complement so background pixels carry loss.
pub fn bce_loss(g: &mut Graph, pred_logit: Var, gt: &Tensor) -> Var {
    g.bce_with_logits_mean(pred_logit, gt.clone())
}

/// One output's supervision: `bce_weight * bce + dice`.
pub fn slice_loss(g: &mut Graph, pred_logit: Var, gt: &Tensor, w: &LossWeights) -> Var {
    let bce = bce_loss(g, pred_logit, gt);
    let prob = g.sigmoid(pred_logit);
    let gt_node = g.constant(gt.clone());
    let dice = dice_loss(g, prob, gt_node, w.dice_smooth);
    let weighted_bce = g.affine(bce, w.bce_weight, 0.0);
    g.add(weighted_bce, dice)
}

/// Weighted sum of three slice losses with arbitrary weights. The public
/// [`total_loss`] uses the `(alpha, 1-2*alpha, alpha)` pattern; tests use
/// this directly to isolate single branches.
pub fn stage_loss_weighted(
    g: &mut Graph,
    logits: &[Var; 3],
    gts: &[Tensor; 3],
    weights: [Elem; 3],
    w: &LossWeights,
) -> (Var, [Var; 3]) {
    let losses = [
        slice_loss(g, logits[0], &gts[0], w),
        slice_loss(g, logits[1], &gts[1], w),
        slice_loss(g, logits[2], &gts[2], w),
    ];
    let total = weighted_sum(g, &losses, &weights);
    (total, losses)
}

/// `Σ w_i * x_i` over scalar nodes.
pub fn weighted_sum(g: &mut Graph, terms: &[Var], weights: &[Elem]) -> Var {
    assert_eq!(terms.len(), weights.len());
    let mut acc: Option<Var> = None;
    for (&t, &w) in terms.iter().zip(weights) {
        let scaled = g.affine(t, w, 0.0);
        acc = Some(match acc {
            None => scaled,
            Some(a) => g.add(a, scaled),
        });
    }
    acc.expect("weighted_sum: no terms")
}

/// All six slice terms plus the stage aggregates of one total-loss evaluation.
pub struct LossBreakdown {
    pub coarse_slice: [Var; 3],
    pub fine_slice: [Var; 3],
    pub coarse_total: Var,
    pub fine_total: Var,
    pub total: Var,
}

/// Full two-stage supervision:
/// `total = beta * L_coarse + (1-beta) * L_fine`, each stage being the
/// `(alpha, 1-2*alpha, alpha)`-weighted sum of its three slice losses.
pub fn total_loss(
    g: &mut Graph,
    coarse_logits: &[Var; 3],
    fine_logits: &[Var; 3],
    gts: &[Tensor; 3],
    w: &LossWeights,
) -> LossBreakdown {
    let sw = w.slice_weights();
    let (coarse_total, coarse_slice) = stage_loss_weighted(g, coarse_logits, gts, sw, w);
    let (fine_total, fine_slice) = stage_loss_weighted(g, fine_logits, gts, sw, w);
    let total = weighted_sum(g, &[coarse_total, fine_total], &[w.beta, 1.0 - w.beta]);
    LossBreakdown {
        coarse_slice,
        fine_slice,
        coarse_total,
        fine_total,
        total,
    }
}
