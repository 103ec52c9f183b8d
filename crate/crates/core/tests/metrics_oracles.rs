//! Metric implementations against independent brute-force oracles, plus
//! property tests for the metric invariants.

use lgsa_core::metrics::{boundary_pixels, confusion, dsc, hd95, prf1, Mask};
use lgsa_core::rng::SplitMix64;
use proptest::prelude::*;

fn random_mask(rng: &mut SplitMix64, h: usize, w: usize, density: f64) -> Mask {
    Mask::new(h, w, (0..h * w).map(|_| rng.next_f64() < density).collect())
}

// -- pixel-enumeration oracle for the overlap metrics -------------------------

struct OracleCounts {
    inter: u64,
    pred: u64,
    gt: u64,
    tp: u64,
    fp: u64,
    fn_: u64,
}

fn enumerate_pixels(pred: &Mask, gt: &Mask) -> OracleCounts {
    let mut c = OracleCounts {
        inter: 0,
        pred: 0,
        gt: 0,
        tp: 0,
        fp: 0,
        fn_: 0,
    };
    for y in 0..pred.h {
        for x in 0..pred.w {
            let p = pred.at(y, x);
            let g = gt.at(y, x);
            if p {
                c.pred += 1;
            }
            if g {
                c.gt += 1;
            }
            if p && g {
                c.inter += 1;
                c.tp += 1;
            }
            if p && !g {
                c.fp += 1;
            }
            if !p && g {
                c.fn_ += 1;
            }
        }
    }
    c
}

// DSC, precision, recall and F1 must match the enumeration oracle exactly,
// and F1 must equal DSC identically (they are the same rational number).
#[test]
fn overlap_metrics_match_enumeration_on_100_random_pairs() {
    let mut rng = SplitMix64::new(0xFACE);
    for trial in 0..100 {
        let density = 0.05 + 0.9 * rng.next_f64();
        let pred = random_mask(&mut rng, 32, 32, density);
        let gt = random_mask(&mut rng, 32, 32, density);
        let c = enumerate_pixels(&pred, &gt);

        let d = dsc(&pred, &gt);
        let oracle_d = if c.pred + c.gt == 0 {
            1.0
        } else {
            2.0 * c.inter as f64 / (c.pred + c.gt) as f64
        };
        assert_eq!(d, oracle_d, "trial {trial}: dsc");

        let (p, r, f1) = prf1(&pred, &gt);
        let op = if c.tp + c.fp == 0 {
            if c.tp + c.fn_ == 0 { 1.0 } else { 0.0 }
        } else {
            c.tp as f64 / (c.tp + c.fp) as f64
        };
        let or = if c.tp + c.fn_ == 0 {
            if c.tp + c.fp == 0 { 1.0 } else { 0.0 }
        } else {
            c.tp as f64 / (c.tp + c.fn_) as f64
        };
        assert_eq!(p, op, "trial {trial}: precision");
        assert_eq!(r, or, "trial {trial}: recall");
        assert_eq!(f1, d, "trial {trial}: f1 must equal dsc identically");

        let counts = confusion(&pred, &gt);
        assert_eq!((counts.tp, counts.fp, counts.fn_), (c.tp, c.fp, c.fn_));
    }
}

// -- O(n^2) brute-force oracle for HD95 ---------------------------------------

/// Independent HD95: separate boundary extraction, full distance matrix,
/// directed percentiles by linear interpolation, symmetric max.
fn hd95_oracle(pred: &Mask, gt: &Mask, spacing: (f64, f64)) -> (f64, bool) {
    let boundary = |m: &Mask| -> Vec<(f64, f64)> {
        let mut pts = Vec::new();
        for y in 0..m.h {
            for x in 0..m.w {
                if !m.at(y, x) {
                    continue;
                }
                let neighbors_bg = [(-1i64, 0i64), (1, 0), (0, -1), (0, 1)].iter().any(|&(dy, dx)| {
                    let ny = y as i64 + dy;
                    let nx = x as i64 + dx;
                    if ny < 0 || nx < 0 || ny >= m.h as i64 || nx >= m.w as i64 {
                        true // image border counts as background
                    } else {
                        !m.at(ny as usize, nx as usize)
                    }
                });
                if neighbors_bg {
                    pts.push((y as f64 * spacing.0, x as f64 * spacing.1));
                }
            }
        }
        pts
    };
    let pa = boundary(pred);
    let pb = boundary(gt);
    match (pa.is_empty(), pb.is_empty()) {
        (true, true) => return (0.0, false),
        (true, false) | (false, true) => {
            let dy = pred.h as f64 * spacing.0;
            let dx = pred.w as f64 * spacing.1;
            return ((dy * dy + dx * dx).sqrt(), true);
        }
        _ => {}
    }
    let percentile95 = |mut v: Vec<f64>| -> f64 {
        v.sort_by(|a, b| a.partial_cmp(b).unwrap());
        let rank = 0.95 * (v.len() - 1) as f64;
        let lo = rank.floor() as usize;
        let frac = rank - lo as f64;
        if lo + 1 < v.len() {
            v[lo] * (1.0 - frac) + v[lo + 1] * frac
        } else {
            v[lo]
        }
    };
    let directed = |from: &[(f64, f64)], to: &[(f64, f64)]| -> Vec<f64> {
        from.iter()
            .map(|&(ay, ax)| {
                to.iter()
                    .map(|&(by, bx)| ((ay - by).powi(2) + (ax - bx).powi(2)).sqrt())
                    .fold(f64::INFINITY, f64::min)
            })
            .collect()
    };
    let fwd = percentile95(directed(&pa, &pb));
    let bwd = percentile95(directed(&pb, &pa));
    (fwd.max(bwd), false)
}

#[test]
fn hd95_matches_brute_force_oracle() {
    let mut rng = SplitMix64::new(0xBEEF);
    for trial in 0..60 {
        let h = 8 + rng.next_below(12);
        let w = 8 + rng.next_below(12);
        let pred = random_mask(&mut rng, h, w, 0.25);
        let gt = random_mask(&mut rng, h, w, 0.25);
        let spacing = (1.0 + rng.next_f64(), 1.0 + rng.next_f64());
        let got = hd95(&pred, &gt, spacing);
        let (want, want_flag) = hd95_oracle(&pred, &gt, spacing);
        assert!(
            (got.value - want).abs() < 1e-9,
            "trial {trial}: hd95 {} vs oracle {want}",
            got.value
        );
        assert_eq!(got.sentinel, want_flag, "trial {trial}: sentinel flag");
    }
}

#[test]
fn hd95_exact_fixture_and_percentile_interpolation() {
    // Single pixels at (0,0) and (3,4): distance exactly 5.
    let mut a = Mask::empty(8, 8);
    a.data[0] = true;
    let mut b = Mask::empty(8, 8);
    b.data[3 * 8 + 4] = true;
    assert_eq!(hd95(&a, &b, (1.0, 1.0)).value, 5.0);

    // Oracle agreement on the same fixture.
    let (want, flag) = hd95_oracle(&a, &b, (1.0, 1.0));
    assert_eq!(want, 5.0);
    assert!(!flag);
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    // Symmetry: hd95(a, b) == hd95(b, a).
    #[test]
    fn hd95_is_symmetric(seed in 0u64..5000) {
        let mut rng = SplitMix64::new(seed);
        let a = random_mask(&mut rng, 12, 12, 0.3);
        let b = random_mask(&mut rng, 12, 12, 0.3);
        let ab = hd95(&a, &b, (1.0, 1.0));
        let ba = hd95(&b, &a, (1.0, 1.0));
        prop_assert!((ab.value - ba.value).abs() < 1e-12);
        prop_assert_eq!(ab.sentinel, ba.sentinel);
    }

    // Translation invariance: shifting both masks by the same offset leaves
    // the distance unchanged (content away from borders).
    #[test]
    fn hd95_translation_invariant(seed in 0u64..5000, dy in 0usize..3, dx in 0usize..3) {
        let mut rng = SplitMix64::new(seed);
        let size = 16usize;
        // Draw content in the inner 8x8 box so shifts stay in-frame.
        let mut a = Mask::empty(size, size);
        let mut b = Mask::empty(size, size);
        for y in 4..12 {
            for x in 4..12 {
                if rng.next_f64() < 0.3 { a.data[y * size + x] = true; }
                if rng.next_f64() < 0.3 { b.data[y * size + x] = true; }
            }
        }
        let shift = |m: &Mask| -> Mask {
            let mut out = Mask::empty(size, size);
            for y in 0..size - dy {
                for x in 0..size - dx {
                    if m.at(y, x) {
                        out.data[(y + dy) * size + (x + dx)] = true;
                    }
                }
            }
            out
        };
        let base = hd95(&a, &b, (1.0, 1.0));
        let moved = hd95(&shift(&a), &shift(&b), (1.0, 1.0));
        prop_assert!((base.value - moved.value).abs() < 1e-9,
            "base {} moved {}", base.value, moved.value);
    }

    // f1 == dsc on any pair, and both stay in [0, 1].
    #[test]
    fn f1_equals_dsc_and_ranges_hold(seed in 0u64..5000) {
        let mut rng = SplitMix64::new(seed);
        let da = rng.next_f64();
        let db = rng.next_f64();
        let a = random_mask(&mut rng, 10, 10, da);
        let b = random_mask(&mut rng, 10, 10, db);
        let d = dsc(&a, &b);
        let (p, r, f1) = prf1(&a, &b);
        prop_assert_eq!(f1, d);
        for v in [d, p, r, f1] {
            prop_assert!((0.0..=1.0).contains(&v));
        }
    }
}

#[test]
fn boundary_extraction_matches_oracle_definition() {
    let mut rng = SplitMix64::new(0x60D);
    for _ in 0..20 {
        let m = random_mask(&mut rng, 10, 10, 0.4);
        let got = boundary_pixels(&m);
        let mut want = Vec::new();
        for y in 0..m.h {
            for x in 0..m.w {
                if !m.at(y, x) {
                    continue;
                }
                let bg = y == 0
                    || x == 0
                    || y == m.h - 1
                    || x == m.w - 1
                    || !m.at(y - 1, x)
                    || !m.at(y + 1, x)
                    || !m.at(y, x - 1)
                    || !m.at(y, x + 1);
                if bg {
                    want.push((y, x));
                }
            }
        }
        assert_eq!(got, want);
    }
}
