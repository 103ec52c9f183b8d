//! Segmentation evaluation: Dice similarity, precision/recall/F1, and the
//! 95th-percentile symmetric Hausdorff distance between mask boundaries.
//!
//! All metric functions are pure and operate on binary masks in f64,
//! independent of the training dtype.

use std::io::Write;
use std::path::Path;

use crate::error::LgsaError;

/// Binary 2D mask.
#[derive(Clone, Debug, PartialEq)]
pub struct Mask {
    pub h: usize,
    pub w: usize,
    pub data: Vec<bool>,
}

impl Mask {
    pub fn new(h: usize, w: usize, data: Vec<bool>) -> Self {
        assert_eq!(data.len(), h * w, "mask data length mismatch");
        Mask { h, w, data }
    }

    pub fn empty(h: usize, w: usize) -> Self {
        Mask {
            h,
            w,
            data: vec![false; h * w],
        }
    }

    /// Thresholds probabilities at 0.5.
    pub fn from_probs(h: usize, w: usize, probs: &[f64]) -> Self {
        assert_eq!(probs.len(), h * w);
        Mask {
            h,
            w,
            data: probs.iter().map(|&p| p > 0.5).collect(),
        }
    }

    pub fn count(&self) -> usize {
        self.data.iter().filter(|&&b| b).count()
    }

    pub fn at(&self, y: usize, x: usize) -> bool {
        self.data[y * self.w + x]
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub struct Counts {
    pub tp: u64,
    pub fp: u64,
    pub fn_: u64,
}

pub fn confusion(pred: &Mask, gt: &Mask) -> Counts {
    assert!(
        pred.h == gt.h && pred.w == gt.w,
        "confusion: mask shapes differ ({}x{} vs {}x{})",
        pred.h,
        pred.w,
        gt.h,
        gt.w
    );
    let mut c = Counts::default();
    for (&p, &g) in pred.data.iter().zip(&gt.data) {
        match (p, g) {
            (true, true) => c.tp += 1,
            (true, false) => c.fp += 1,
            (false, true) => c.fn_ += 1,
            (false, false) => {}
        }
    }
    c
}

/// Dice similarity coefficient `2|X∩Y| / (|X|+|Y|)` from set cardinalities.
/// Both masks empty scores 1 (a trivially correct empty prediction).
pub fn dsc(pred: &Mask, gt: &Mask) -> f64 {
    assert!(
        pred.h == gt.h && pred.w == gt.w,
        "dsc: mask shapes differ ({}x{} vs {}x{})",
        pred.h,
        pred.w,
        gt.h,
        gt.w
    );
    let inter = pred
        .data
        .iter()
        .zip(&gt.data)
        .filter(|(&p, &g)| p && g)
        .count() as f64;
    let total = (pred.count() + gt.count()) as f64;
    if total == 0.0 {
        1.0
    } else {
        2.0 * inter / total
    }
}

/// Precision, recall, F1 from the confusion counts. F1 is computed in its
/// cancelled rational form `2·TP / (2·TP + FP + FN)`, which is algebraically
/// `2PR/(P+R)` and agrees with [`dsc`] bit-for-bit on the same masks.
/// The both-empty convention scores 1; a one-sided empty scores 0.
pub fn prf1(pred: &Mask, gt: &Mask) -> (f64, f64, f64) {
    let c = confusion(pred, gt);
    let empty = c.tp + c.fp + c.fn_ == 0;
    let precision = if c.tp + c.fp == 0 {
        if empty {
            1.0
        } else {
            0.0
        }
    } else {
        c.tp as f64 / (c.tp + c.fp) as f64
    };
    let recall = if c.tp + c.fn_ == 0 {
        if empty {
            1.0
        } else {
            0.0
        }
    } else {
        c.tp as f64 / (c.tp + c.fn_) as f64
    };
    let f1 = if empty {
        1.0
    } else {
        2.0 * c.tp as f64 / (2 * c.tp + c.fp + c.fn_) as f64
    };
    (precision, recall, f1)
}

/// Result of [`hd95`]: the distance plus a flag marking the one-sided-empty
/// sentinel (image diagonal).
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Hd95 {
    pub value: f64,
    pub sentinel: bool,
}

/// Boundary pixels: foreground pixels with at least one background
/// 4-neighbor; the image border counts as background.
pub fn boundary_pixels(mask: &Mask) -> Vec<(usize, usize)> {
    let mut out = Vec::new();
    for y in 0..mask.h {
        for x in 0..mask.w {
            if !mask.at(y, x) {
                continue;
            }
            let edge = y == 0
                || x == 0
                || y == mask.h - 1
                || x == mask.w - 1
                || !mask.at(y - 1, x)
                || !mask.at(y + 1, x)
                || !mask.at(y, x - 1)
                || !mask.at(y, x + 1);
            if edge {
                out.push((y, x));
            }
        }
    }
    out
}

/// Linear-interpolation percentile of an unsorted distance list.
fn percentile(mut values: Vec<f64>, q: f64) -> f64 {
    assert!(!values.is_empty());
    values.sort_by(|a, b| a.partial_cmp(b).unwrap());
    let rank = q * (values.len() - 1) as f64;
    let lo = rank.floor() as usize;
    let frac = rank - lo as f64;
    if lo + 1 < values.len() {
        values[lo] + frac * (values[lo + 1] - values[lo])
    } else {
        values[lo]
    }
}

/// Directed nearest-boundary distances from every point of `a` to `b`.
fn directed_distances(a: &[(usize, usize)], b: &[(usize, usize)], spacing: (f64, f64)) -> Vec<f64> {
    a.iter()
        .map(|&(ay, ax)| {
            let mut best = f64::INFINITY;
            for &(by, bx) in b {
                let dy = (ay as f64 - by as f64) * spacing.0;
                let dx = (ax as f64 - bx as f64) * spacing.1;
                let d2 = dy * dy + dx * dx;
                if d2 < best {
                    best = d2;
                }
            }
            best.sqrt()
        })
        .collect()
}

/// 95% Hausdorff distance between mask boundaries: the maximum of the two
/// directed 95th percentiles over all pairwise Euclidean boundary distances,
/// scaled by the per-axis spacing. Both masks empty gives 0; exactly one
/// empty gives the image diagonal as a flagged sentinel.
pub fn hd95(pred: &Mask, gt: &Mask, spacing: (f64, f64)) -> Hd95 {
    assert!(
        pred.h == gt.h && pred.w == gt.w,
        "hd95: mask shapes differ ({}x{} vs {}x{})",
        pred.h,
        pred.w,
        gt.h,
        gt.w
    );
    let pb = boundary_pixels(pred);
    let gb = boundary_pixels(gt);
    match (pb.is_empty(), gb.is_empty()) {
        (true, true) => Hd95 {
            value: 0.0,
            sentinel: false,
        },
        (true, false) | (false, true) => {
            let dy = pred.h as f64 * spacing.0;
            let dx = pred.w as f64 * spacing.1;
            Hd95 {
                value: (dy * dy + dx * dx).sqrt(),
                sentinel: true,
            }
        }
        (false, false) => {
            let fwd = percentile(directed_distances(&pb, &gb, spacing), 0.95);
            let bwd = percentile(directed_distances(&gb, &pb, spacing), 0.95);
            Hd95 {
                value: fwd.max(bwd),
                sentinel: false,
            }
        }
    }
}

/// Per-slice, per-class metric record.
#[derive(Clone, Debug)]
pub struct MetricsRecord {
    pub volume: u32,
    pub slice: usize,
    pub class: usize,
    pub seed: u64,
    pub dsc: f64,
    pub hd95: f64,
    pub f1: f64,
    pub precision: f64,
    pub recall: f64,
    pub counts: Counts,
    pub empty_flag: bool,
}

impl MetricsRecord {
    pub fn compute(
        volume: u32,
        slice: usize,
        class: usize,
        seed: u64,
        pred: &Mask,
        gt: &Mask,
        spacing: (f64, f64),
    ) -> Self {
        let d = dsc(pred, gt);
        let (precision, recall, f1) = prf1(pred, gt);
        let h = hd95(pred, gt, spacing);
        MetricsRecord {
            volume,
            slice,
            class,
            seed,
            dsc: d,
            hd95: h.value,
            f1,
            precision,
            recall,
            counts: confusion(pred, gt),
            empty_flag: h.sentinel,
        }
    }
}

pub const METRICS_CSV_HEADER: &str = "volume,slice,class,seed,dsc,hd95,f1,precision,recall,empty_flag";

/// Writes records in the `volume,slice,class,seed,dsc,hd95,f1,precision,recall,empty_flag` schema.
pub fn write_metrics_csv(path: &Path, records: &[MetricsRecord]) -> Result<(), LgsaError> {
    let mut f = std::fs::File::create(path)
        .map_err(|e| LgsaError::io(path.display().to_string(), e))?;
    let io = |e| LgsaError::io(path.display().to_string(), e);
    writeln!(f, "{METRICS_CSV_HEADER}").map_err(io)?;
    for r in records {
        writeln!(
            f,
            "{},{},{},{},{},{},{},{},{},{}",
            r.volume,
            r.slice,
            r.class,
            r.seed,
            r.dsc,
            r.hd95,
            r.f1,
            r.precision,
            r.recall,
            if r.empty_flag { 1 } else { 0 }
        )
        .map_err(io)?;
    }
    Ok(())
}

pub fn mean(values: &[f64]) -> f64 {
    if values.is_empty() {
        return f64::NAN;
    }
    values.iter().sum::<f64>() / values.len() as f64
}

/// Sample standard deviation (n-1); NaN below two samples.
pub fn std_dev(values: &[f64]) -> f64 {
    if values.len() < 2 {
        return f64::NAN;
    }
    let m = mean(values);
    (values.iter().map(|v| (v - m) * (v - m)).sum::<f64>() / (values.len() - 1) as f64).sqrt()
}
