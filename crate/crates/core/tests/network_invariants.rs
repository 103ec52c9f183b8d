//! Structural properties of the two-stage siamese network: parameter
//! sharing, SA pass-through, LG gate algebra, and stage decoupling.

use lgsa_core::baselines::plain_unet;
use lgsa_core::blocks::{self, HeadMode, LgGate};
use lgsa_core::loss::{stage_loss_weighted, total_loss, LossWeights};
use lgsa_core::net::{self, NetConfig};
use lgsa_core::params::{Forward, Mode, ParamStore};
use lgsa_core::rng::SplitMix64;
use lgsa_core::tensor::Tensor;
use lgsa_core::Elem;

fn tiny_cfg() -> NetConfig {
    NetConfig {
        depth: 3,
        base_channels: 4,
        num_classes: 1,
        input_size: 16,
        sa_count: 4,
        lg_enabled: vec![true; 3],
        ..NetConfig::default()
    }
}

fn rand_tensor(rng: &mut SplitMix64, shape: Vec<usize>, lo: f64, hi: f64) -> Tensor {
    let n: usize = shape.iter().product();
    let data = (0..n).map(|_| rng.uniform(lo, hi) as Elem).collect();
    Tensor::new(shape, data)
}

fn rand_slices(rng: &mut SplitMix64, b: usize, s: usize) -> [Tensor; 3] {
    std::array::from_fn(|_| rand_tensor(rng, vec![b, 1, s, s], 0.0, 1.0))
}

fn rand_gts(rng: &mut SplitMix64, b: usize, c: usize, s: usize) -> [Tensor; 3] {
    std::array::from_fn(|_| {
        rand_tensor(rng, vec![b, c, s, s], 0.0, 1.0).map(|v| if v > 0.6 { 1.0 } else { 0.0 })
    })
}

fn grads_by_name(store: &ParamStore) -> Vec<(String, Tensor)> {
    store
        .iter()
        .filter(|(_, p)| p.trainable)
        .map(|(n, p)| {
            (
                n.clone(),
                p.grad
                    .clone()
                    .unwrap_or_else(|| Tensor::zeros(p.value.shape().to_vec())),
            )
        })
        .collect()
}

// Shared-parameter gradient equals the sum of the three single-branch
// gradients obtained by zeroing the other branches' loss weights.
#[test]
fn siamese_gradient_is_sum_of_branch_gradients() {
    let cfg = tiny_cfg();
    let mut rng = SplitMix64::new(11);
    let xs = rand_slices(&mut rng, 2, 16);
    let gts = rand_gts(&mut rng, 2, 1, 16);
    let w = LossWeights::default();

    let branch_weights = [
        [1.0 as Elem, 0.0, 0.0],
        [0.0, 1.0, 0.0],
        [0.0, 0.0, 1.0],
        [1.0, 1.0, 1.0],
    ];
    let mut all_grads: Vec<Vec<(String, Tensor)>> = Vec::new();
    for bw in branch_weights {
        let (mut store, _) = net::build(&cfg, 42).unwrap();
        let mut fw = Forward::new(&mut store, Mode::Train);
        let outs = net::forward(&mut fw, &cfg, xs.clone(), true).unwrap();
        let (loss, _) = stage_loss_weighted(&mut fw.graph, &outs.fine_logits, &gts, bw, &w);
        fw.backward(loss);
        drop(fw);
        all_grads.push(grads_by_name(&store));
    }
    let (g1, g2, g3, gsum) = (&all_grads[0], &all_grads[1], &all_grads[2], &all_grads[3]);
    for i in 0..gsum.len() {
        assert_eq!(gsum[i].0, g1[i].0);
        for j in 0..gsum[i].1.numel() {
            let summed = g1[i].1.data()[j] + g2[i].1.data()[j] + g3[i].1.data()[j];
            let direct = gsum[i].1.data()[j];
            assert!(
                (summed - direct).abs() < 1e-10,
                "param {} element {j}: sum {summed} vs direct {direct}",
                gsum[i].0
            );
        }
    }
}

// Central-head SA: slices 1 and 3 pass through bitwise, and with equal
// inputs the edge branch receives the exact zero tensor.
#[test]
fn central_head_passthrough_and_zero_edge_branch() {
    let mut store = ParamStore::new();
    let mut init_rng = SplitMix64::new(3);
    blocks::init_sa(&mut store, &mut init_rng, "sa", 3);
    let mut rng = SplitMix64::new(7);
    let f1t = rand_tensor(&mut rng, vec![1, 3, 4, 4], -1.0, 1.0);
    let f2t = rand_tensor(&mut rng, vec![1, 3, 4, 4], -1.0, 1.0);
    let f3t = rand_tensor(&mut rng, vec![1, 3, 4, 4], -1.0, 1.0);

    let mut fw = Forward::new(&mut store, Mode::Eval);
    let f = [
        fw.input(f1t.clone()),
        fw.input(f2t.clone()),
        fw.input(f3t.clone()),
    ];
    let sa = blocks::sa_block(&mut fw, f, "sa", HeadMode::Central);
    assert_eq!(sa.out[0], f[0], "slice 1 must be the same node");
    assert_eq!(sa.out[2], f[2], "slice 3 must be the same node");
    assert_eq!(fw.graph.value(sa.out[0]), &f1t);
    assert_eq!(fw.graph.value(sa.out[2]), &f3t);
    assert_ne!(fw.graph.value(sa.out[1]), &f2t);
    drop(fw);

    // F1 = F2 = F3 drives both adjacent differences to exactly zero.
    let mut fw = Forward::new(&mut store, Mode::Eval);
    let same = fw.input(f1t.clone());
    let sa = blocks::sa_block(&mut fw, [same, same, same], "sa", HeadMode::Central);
    assert!(
        fw.graph.value(sa.edge_pre).data().iter().all(|&v| v == 0.0),
        "edge branch input must be the exact zero tensor"
    );
    // Central branch then receives the squared feature in both halves.
    let sq: Vec<Elem> = f1t.data().iter().map(|&v| v * v).collect();
    let central = fw.graph.value(sa.central_pre);
    assert_eq!(&central.data()[..sq.len()], &sq[..]);
    assert_eq!(&central.data()[sq.len()..], &sq[..]);
}

// LG with a constant attention map reduces to the uniform-gate residual:
// out = s_e * (1 + 1/(H*W)).
#[test]
fn lg_uniform_gate_factor_is_exact() {
    let mut store = ParamStore::new();
    let mut init_rng = SplitMix64::new(5);
    blocks::init_lg(&mut store, &mut init_rng, "lg", 2);
    // Zero the fuse conv so SA_map is the constant bias.
    for v in store.get_mut("lg.fuse.weight").value.data_mut() {
        *v = 0.0;
    }
    store.get_mut("lg.fuse.bias").value.data_mut()[0] = 0.37;

    let mut rng = SplitMix64::new(9);
    let s_e = rand_tensor(&mut rng, vec![2, 3, 4, 4], -1.0, 1.0);
    let loc = rand_tensor(&mut rng, vec![2, 2, 4, 4], -1.0, 1.0);
    let mut fw = Forward::new(&mut store, Mode::Eval);
    let se = fw.input(s_e.clone());
    let lv = fw.input(loc);
    let out = blocks::lg_block(&mut fw, se, lv, "lg", LgGate::Softmax).out;
    let factor = blocks::lg_uniform_gate_factor(4, 4);
    for (o, x) in fw.graph.value(out).data().iter().zip(s_e.data()) {
        assert!(
            (o - x * factor).abs() < 1e-9,
            "expected {x} * {factor}, got {o}"
        );
    }
}

// Softmax shift invariance: adding a constant to the fuse bias leaves the
// LG output unchanged.
#[test]
fn lg_output_invariant_to_fuse_bias_shift() {
    let mut store = ParamStore::new();
    let mut init_rng = SplitMix64::new(15);
    blocks::init_lg(&mut store, &mut init_rng, "lg", 3);
    let mut rng = SplitMix64::new(16);
    let s_e = rand_tensor(&mut rng, vec![1, 2, 4, 4], -1.0, 1.0);
    let loc = rand_tensor(&mut rng, vec![1, 3, 4, 4], -1.0, 1.0);

    let run = |store: &mut ParamStore| -> Tensor {
        let mut fw = Forward::new(store, Mode::Eval);
        let se = fw.input(s_e.clone());
        let lv = fw.input(loc.clone());
        let out = blocks::lg_block(&mut fw, se, lv, "lg", LgGate::Softmax).out;
        fw.graph.value(out).clone()
    };
    let base = run(&mut store);
    store.get_mut("lg.fuse.bias").value.data_mut()[0] += 25.0;
    let shifted = run(&mut store);
    for (a, b) in base.data().iter().zip(shifted.data()) {
        assert!((a - b).abs() < 1e-9);
    }
}

// With LG disabled and SA off, the fine stage is exactly an independent
// plain UNet: compare against a separately constructed plain-UNet forward
// on the same weights.
#[test]
fn disabled_lg_and_sa_reduce_to_plain_unets() {
    let cfg = NetConfig {
        sa_count: 0,
        lg_enabled: vec![false; 3],
        ..tiny_cfg()
    };
    let (mut store, _) = net::build(&cfg, 77).unwrap();
    let mut rng = SplitMix64::new(21);
    let xs = rand_slices(&mut rng, 1, 16);

    let mut fw = Forward::new(&mut store, Mode::Eval);
    let outs = net::forward(&mut fw, &cfg, xs.clone(), true).unwrap();
    let fine_center = fw.graph.value(outs.fine_logits[1]).clone();
    let coarse_center = fw.graph.value(outs.coarse_logits[1]).clone();
    drop(fw);

    // Plain UNet on the same parameter prefixes.
    let mut fw = Forward::new(&mut store, Mode::Eval);
    let x = fw.input(xs[1].clone());
    let fine_alone = plain_unet(&mut fw, &cfg, "fine", x);
    assert_eq!(fw.graph.value(fine_alone), &fine_center);
    drop(fw);

    let mut fw = Forward::new(&mut store, Mode::Eval);
    let x = fw.input(xs[1].clone());
    let coarse_alone = plain_unet(&mut fw, &cfg, "coarse", x);
    assert_eq!(fw.graph.value(coarse_alone), &coarse_center);
}

// In central-head mode the slice-1 fine output is bitwise identical with
// and without SA blocks (the pass-through path).
#[test]
fn central_head_slice1_equals_no_sa_forward() {
    let with_sa = tiny_cfg();
    let without_sa = NetConfig {
        sa_count: 0,
        ..tiny_cfg()
    };
    // Same seed: SA parameters are initialized after the shared trunk, so
    // the trunk weights agree between the two builds.
    let (mut store_a, _) = net::build(&with_sa, 5).unwrap();
    let (mut store_b, _) = net::build(&without_sa, 5).unwrap();
    let mut rng = SplitMix64::new(31);
    let xs = rand_slices(&mut rng, 1, 16);

    let mut fw = Forward::new(&mut store_a, Mode::Eval);
    let outs_a = net::forward(&mut fw, &with_sa, xs.clone(), true).unwrap();
    let a0 = fw.graph.value(outs_a.fine_logits[0]).clone();
    let a2 = fw.graph.value(outs_a.fine_logits[2]).clone();
    drop(fw);

    let mut fw = Forward::new(&mut store_b, Mode::Eval);
    let outs_b = net::forward(&mut fw, &without_sa, xs, true).unwrap();
    assert_eq!(fw.graph.value(outs_b.fine_logits[0]), &a0);
    assert_eq!(fw.graph.value(outs_b.fine_logits[2]), &a2);
}

// Fine-only loss still reaches coarse parameters through the LG path.
#[test]
fn lg_path_carries_gradient_into_coarse_stage() {
    let cfg = tiny_cfg();
    let (mut store, _) = net::build(&cfg, 13).unwrap();
    let mut rng = SplitMix64::new(41);
    let xs = rand_slices(&mut rng, 1, 16);
    let gts = rand_gts(&mut rng, 1, 1, 16);
    let w = LossWeights {
        beta: 0.0, // fine stage only
        ..LossWeights::default()
    };
    let mut fw = Forward::new(&mut store, Mode::Train);
    let outs = net::forward(&mut fw, &cfg, xs, true).unwrap();
    let bd = total_loss(
        &mut fw.graph,
        &outs.coarse_logits,
        &outs.fine_logits,
        &gts,
        &w,
    );
    fw.backward(bd.total);
    drop(fw);
    let coarse_grad_norm: f64 = store
        .iter()
        .filter(|(n, p)| n.starts_with("coarse.") && p.trainable)
        .flat_map(|(_, p)| p.grad.as_ref().unwrap().data().iter())
        .map(|&g| (g as f64).abs())
        .sum();
    assert!(
        coarse_grad_norm > 1e-8,
        "no gradient reached the coarse stage through LG (norm {coarse_grad_norm})"
    );
}

// With beta = 1 the fine stage receives exactly zero gradient.
#[test]
fn beta_one_zeroes_fine_stage_gradients() {
    let cfg = tiny_cfg();
    let (mut store, _) = net::build(&cfg, 13).unwrap();
    let mut rng = SplitMix64::new(43);
    let xs = rand_slices(&mut rng, 1, 16);
    let gts = rand_gts(&mut rng, 1, 1, 16);
    let w = LossWeights {
        beta: 1.0,
        ..LossWeights::default()
    };
    let mut fw = Forward::new(&mut store, Mode::Train);
    let outs = net::forward(&mut fw, &cfg, xs, true).unwrap();
    let bd = total_loss(
        &mut fw.graph,
        &outs.coarse_logits,
        &outs.fine_logits,
        &gts,
        &w,
    );
    fw.backward(bd.total);
    drop(fw);
    for (name, p) in store.iter() {
        if !p.trainable {
            continue;
        }
        let g = p.grad.as_ref().unwrap();
        let zero = g.data().iter().all(|&v| v == 0.0);
        if name.starts_with("fine.") || name.starts_with("lg.") || name.starts_with("sa.fine.") {
            assert!(zero, "fine-stage parameter {name} received gradient");
        }
        if name.starts_with("coarse.head") {
            assert!(!zero, "coarse head should train under beta=1");
        }
    }
}

// With alpha = 0.5 the center slice has zero direct supervision. Under the
// multi-head SA its input still receives gradient through the neighbors'
// losses; under the central head it does not.
#[test]
fn alpha_half_center_trains_only_via_sa_coupling() {
    let mut rng = SplitMix64::new(53);
    let xs = rand_slices(&mut rng, 1, 16);
    let gts = rand_gts(&mut rng, 1, 1, 16);
    let w = LossWeights {
        alpha: 0.5,
        ..LossWeights::default()
    };
    let grad_of_center_input = |head: HeadMode| -> f64 {
        let cfg = NetConfig {
            head_mode: head,
            ..tiny_cfg()
        };
        let (mut store, _) = net::build(&cfg, 19).unwrap();
        let mut fw = Forward::new(&mut store, Mode::Train);
        let x_vars = [
            fw.graph.leaf(xs[0].clone(), true),
            fw.graph.leaf(xs[1].clone(), true),
            fw.graph.leaf(xs[2].clone(), true),
        ];
        let outs = net::forward_from_vars(&mut fw, &cfg, x_vars);
        let bd = total_loss(
            &mut fw.graph,
            &outs.coarse_logits,
            &outs.fine_logits,
            &gts,
            &w,
        );
        fw.backward(bd.total);
        fw.graph
            .grad(x_vars[1])
            .map(|g| g.data().iter().map(|&v| (v as f64).abs()).sum())
            .unwrap_or(0.0)
    };
    let multi = grad_of_center_input(HeadMode::Multi);
    let central = grad_of_center_input(HeadMode::Central);
    assert!(
        multi > 1e-10,
        "multi-head: center slice should receive gradient via SA ({multi})"
    );
    assert!(
        central < 1e-15,
        "central-head: center slice has no path into the weighted loss ({central})"
    );
}

// Reversing the triplet: the SA center head sees negated-and-swapped edge
// differences and swapped central products. Recorded as a regression
// fixture of the block wiring (the block is not symmetric overall).
#[test]
fn triplet_permutation_fixture() {
    let mut store = ParamStore::new();
    let mut init_rng = SplitMix64::new(61);
    blocks::init_sa(&mut store, &mut init_rng, "sa", 2);
    let mut rng = SplitMix64::new(62);
    let f1 = rand_tensor(&mut rng, vec![1, 2, 4, 4], -1.0, 1.0);
    let f2 = rand_tensor(&mut rng, vec![1, 2, 4, 4], -1.0, 1.0);
    let f3 = rand_tensor(&mut rng, vec![1, 2, 4, 4], -1.0, 1.0);

    let run = |store: &mut ParamStore, a: &Tensor, b: &Tensor, c: &Tensor| {
        let mut fw = Forward::new(store, Mode::Eval);
        let f = [fw.input(a.clone()), fw.input(b.clone()), fw.input(c.clone())];
        let sa = blocks::sa_block(&mut fw, f, "sa", HeadMode::Central);
        (
            fw.graph.value(sa.edge_pre).clone(),
            fw.graph.value(sa.central_pre).clone(),
            fw.graph.value(sa.out[1]).clone(),
        )
    };
    let (edge, central, fused) = run(&mut store, &f1, &f2, &f3);
    let (edge_r, central_r, fused_r) = run(&mut store, &f3, &f2, &f1);

    let half = edge.numel() / 2;
    // edge(rev) = concat(-(F2-F3), -(F1-F2)): negated and half-swapped.
    for j in 0..half {
        assert_eq!(edge_r.data()[j], -edge.data()[half + j]);
        assert_eq!(edge_r.data()[half + j], -edge.data()[j]);
    }
    // central(rev) = concat(F3*F2, F2*F1): half-swapped (products commute).
    for j in 0..half {
        assert_eq!(central_r.data()[j], central.data()[half + j]);
        assert_eq!(central_r.data()[half + j], central.data()[j]);
    }
    // The fused center output is not symmetric in general.
    assert_ne!(fused.data(), fused_r.data());
}
