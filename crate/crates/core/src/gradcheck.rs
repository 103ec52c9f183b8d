//! Central finite-difference gradient checking.
//!
//! Every differentiable op gets a check against `(f(x+h) - f(x-h)) / 2h`;
//! composite blocks and the end-to-end network are checked per parameter
//! group. Relative error uses `|a-n| / max(|a|, |n|, 1e-3)`, so tiny
//! gradients are compared absolutely and everything else relatively.

use crate::baselines::{plain_unet, Model, ModelKind};
use crate::blocks::{self, HeadMode, LgGate};
use crate::graph::{Graph, Var};
use crate::loss::{slice_loss, total_loss, LossWeights};
use crate::net::{self, NetConfig};
use crate::params::{Forward, Mode, ParamStore};
use crate::rng::SplitMix64;
use crate::tensor::Tensor;
use crate::Elem;

#[derive(Clone, Debug)]
pub struct OpCheck {
    pub name: String,
    pub max_rel_err: f64,
    pub tolerance: f64,
}

impl OpCheck {
    pub fn pass(&self) -> bool {
        self.max_rel_err < self.tolerance
    }
}

#[derive(Clone, Debug, Default)]
pub struct GradcheckReport {
    pub checks: Vec<OpCheck>,
}

impl GradcheckReport {
    pub fn all_pass(&self) -> bool {
        self.checks.iter().all(|c| c.pass())
    }

    pub fn render(&self) -> String {
        let mut s = String::new();
        for c in &self.checks {
            s.push_str(&format!(
                "{} {:<46} max_rel_err {:.3e}  (tol {:.1e})\n",
                if c.pass() { "PASS" } else { "FAIL" },
                c.name,
                c.max_rel_err,
                c.tolerance
            ));
        }
        let failed = self.checks.iter().filter(|c| !c.pass()).count();
        s.push_str(&format!(
            "{} checks, {} failed\n",
            self.checks.len(),
            failed
        ));
        s
    }
}

/// `|a-n| / max(|a|, |n|, 1e-3)`.
pub fn rel_err(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(1e-3)
}

fn probe_indices(numel: usize, probes: Option<usize>) -> Vec<usize> {
    match probes {
        Some(k) if k < numel => {
            if k == 1 {
                vec![numel / 2]
            } else {
                (0..k).map(|j| j * (numel - 1) / (k - 1)).collect()
            }
        }
        _ => (0..numel).collect(),
    }
}

/// Central difference with step refinement: if the estimate at `h` does not
/// match the analytic value, retry with smaller steps. Near a ReLU/max-pool
/// derivative switch the h-window can straddle the kink and average the two
/// slopes; shrinking h moves the window off the kink, and the estimate
/// converges to the true local slope. A wrong analytic gradient disagrees
/// with the converged estimate at every step size and still fails.
fn refined_fd_err(analytic: f64, tolerance: f64, h: f64, mut eval: impl FnMut(f64) -> f64) -> f64 {
    let mut best = f64::MAX;
    let mut hh = h;
    for _ in 0..3 {
        let numeric = (eval(hh) - eval(-hh)) / (2.0 * hh);
        best = best.min(rel_err(analytic, numeric));
        if best < 0.5 * tolerance {
            break;
        }
        hh /= 10.0;
    }
    best
}

/// Compares analytic gradients against central differences of `loss_fn`.
/// Exposed separately so a deliberately corrupted gradient can be fed in as
/// a negative control of the checker itself.
pub fn compare_fd(
    name: &str,
    inputs: &[Tensor],
    loss_fn: impl Fn(&[Tensor]) -> Elem,
    analytic: &[Tensor],
    h: f64,
    tolerance: f64,
    probes: Option<usize>,
) -> OpCheck {
    let mut max_err = 0.0f64;
    for (i, t) in inputs.iter().enumerate() {
        for j in probe_indices(t.numel(), probes) {
            let a = analytic[i].data()[j] as f64;
            let err = refined_fd_err(a, tolerance, h, |delta| {
                let mut probe = inputs.to_vec();
                probe[i].data_mut()[j] += delta as Elem;
                loss_fn(&probe) as f64
            });
            max_err = max_err.max(err);
        }
    }
    OpCheck {
        name: name.to_string(),
        max_rel_err: max_err,
        tolerance,
    }
}

/// Checks one graph-building function: leaves are created from `inputs`
/// (all requiring grad), `build` returns the scalar loss node.
pub fn check_graph_fn(
    name: &str,
    inputs: &[Tensor],
    build: impl Fn(&mut Graph, &[Var]) -> Var,
    h: f64,
    tolerance: f64,
) -> OpCheck {
    let mut g = Graph::new();
    let vars: Vec<Var> = inputs.iter().map(|t| g.leaf(t.clone(), true)).collect();
    let loss = build(&mut g, &vars);
    g.backward(loss);
    let analytic: Vec<Tensor> = vars
        .iter()
        .zip(inputs)
        .map(|(&v, t)| {
            g.grad(v)
                .cloned()
                .unwrap_or_else(|| Tensor::zeros(t.shape().to_vec()))
        })
        .collect();
    let loss_fn = |xs: &[Tensor]| {
        let mut g = Graph::new();
        let vars: Vec<Var> = xs.iter().map(|t| g.constant(t.clone())).collect();
        let loss = build(&mut g, &vars);
        g.value(loss).item()
    };
    compare_fd(name, inputs, loss_fn, &analytic, h, tolerance, None)
}

/// Checks gradients w.r.t. every trainable entry of a parameter store.
/// `run` builds the loss from the store (and populates gradients when asked).
/// Returns one entry per parameter group.
pub fn check_params(
    name_prefix: &str,
    store: &ParamStore,
    run: impl Fn(&mut ParamStore, bool) -> Elem,
    h: f64,
    tolerance: f64,
    probes: Option<usize>,
) -> Vec<OpCheck> {
    let mut with_grads = store.clone();
    run(&mut with_grads, true);
    let mut out = Vec::new();
    for (name, p) in with_grads.iter() {
        if !p.trainable {
            continue;
        }
        let analytic = p
            .grad
            .clone()
            .unwrap_or_else(|| Tensor::zeros(p.value.shape().to_vec()));
        let mut max_err = 0.0f64;
        for j in probe_indices(p.value.numel(), probes) {
            let a = analytic.data()[j] as f64;
            let err = refined_fd_err(a, tolerance, h, |delta| {
                let mut probe = store.clone();
                probe.get_mut(name).value.data_mut()[j] += delta as Elem;
                run(&mut probe, false) as f64
            });
            max_err = max_err.max(err);
        }
        out.push(OpCheck {
            name: format!("{name_prefix}/{name}"),
            max_rel_err: max_err,
            tolerance,
        });
    }
    out
}

// ---------------------------------------------------------------------------
// The suite
// ---------------------------------------------------------------------------

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum CheckScale {
    /// Every op, full element sweeps, N=3/base-4/16x16 end-to-end.
    Tiny,
    /// Larger net (N=4, base 8, 32x32), sampled probes per parameter.
    Small,
}

impl CheckScale {
    pub fn parse(s: &str) -> Option<Self> {
        match s {
            "tiny" => Some(CheckScale::Tiny),
            "small" => Some(CheckScale::Small),
            _ => None,
        }
    }
}

// FD step and tolerances are quoted for the f64 build; the f32 feature
// loosens both (single precision cannot support 1e-5 checks).
#[cfg(not(feature = "f32"))]
const H_OP: f64 = 1e-5;
#[cfg(feature = "f32")]
const H_OP: f64 = 1e-2;

fn tol(t64: f64) -> f64 {
    if cfg!(feature = "f32") {
        (t64 * 1e4).max(0.05)
    } else {
        t64
    }
}

fn rand_tensor(rng: &mut SplitMix64, shape: Vec<usize>, lo: f64, hi: f64) -> Tensor {
    let n: usize = shape.iter().product();
    let data = (0..n).map(|_| rng.uniform(lo, hi) as Elem).collect();
    Tensor::new(shape, data)
}

/// Random values bounded away from zero (kink-free for relu / max FD).
fn rand_tensor_nonzero(rng: &mut SplitMix64, shape: Vec<usize>) -> Tensor {
    let n: usize = shape.iter().product();
    let data = (0..n)
        .map(|_| {
            let sign = if rng.next_f64() < 0.5 { -1.0 } else { 1.0 };
            (sign * (0.1 + 0.9 * rng.next_f64())) as Elem
        })
        .collect();
    Tensor::new(shape, data)
}

pub fn gradcheck_suite(scale: CheckScale) -> GradcheckReport {
    let mut report = GradcheckReport::default();
    let mut rng = SplitMix64::new(0xC11EC);

    // conv2d, 3x3 pad 1
    {
        let x = rand_tensor(&mut rng, vec![2, 3, 8, 8], -1.0, 1.0);
        let w = rand_tensor(&mut rng, vec![4, 3, 3, 3], -0.5, 0.5);
        let b = rand_tensor(&mut rng, vec![4], -0.2, 0.2);
        let mut probe = SplitMix64::new(1);
        let fixed = rand_tensor(&mut probe, vec![2, 4, 8, 8], -1.0, 1.0);
        report.checks.push(check_graph_fn(
            "conv2d_k3",
            &[x, w, b],
            |g, vs| {
                let out = g.conv2d(vs[0], vs[1], vs[2], 1);
                let r = g.constant(fixed.clone());
                let p = g.mul(out, r);
                g.mean_all(p)
            },
            H_OP,
            tol(1e-6),
        ));
    }
    // conv2d, 1x1 pad 0
    {
        let x = rand_tensor(&mut rng, vec![2, 3, 6, 6], -1.0, 1.0);
        let w = rand_tensor(&mut rng, vec![2, 3, 1, 1], -0.7, 0.7);
        let b = rand_tensor(&mut rng, vec![2], -0.2, 0.2);
        let mut probe = SplitMix64::new(2);
        let fixed = rand_tensor(&mut probe, vec![2, 2, 6, 6], -1.0, 1.0);
        report.checks.push(check_graph_fn(
            "conv2d_k1",
            &[x, w, b],
            |g, vs| {
                let out = g.conv2d(vs[0], vs[1], vs[2], 0);
                let r = g.constant(fixed.clone());
                let p = g.mul(out, r);
                g.mean_all(p)
            },
            H_OP,
            tol(1e-6),
        ));
    }
    // pooling
    for (name, kind_max) in [("max_pool2", true), ("avg_pool2", false)] {
        let x = rand_tensor_nonzero(&mut rng, vec![1, 2, 4, 4]);
        let mut probe = SplitMix64::new(3);
        let fixed = rand_tensor(&mut probe, vec![1, 2, 2, 2], -1.0, 1.0);
        report.checks.push(check_graph_fn(
            name,
            &[x],
            move |g, vs| {
                let out = if kind_max {
                    g.max_pool2(vs[0])
                } else {
                    g.avg_pool2(vs[0])
                };
                let r = g.constant(fixed.clone());
                let p = g.mul(out, r);
                g.mean_all(p)
            },
            H_OP,
            tol(1e-6),
        ));
    }
    // bilinear upsample
    {
        let x = rand_tensor(&mut rng, vec![1, 1, 3, 3], -1.0, 1.0);
        let mut probe = SplitMix64::new(4);
        let fixed = rand_tensor(&mut probe, vec![1, 1, 6, 6], -1.0, 1.0);
        report.checks.push(check_graph_fn(
            "upsample_bilinear2",
            &[x],
            |g, vs| {
                let out = g.upsample_bilinear2(vs[0]);
                let r = g.constant(fixed.clone());
                let p = g.mul(out, r);
                g.mean_all(p)
            },
            H_OP,
            tol(1e-6),
        ));
    }
    // batch norm (train mode)
    {
        let x = rand_tensor(&mut rng, vec![4, 3, 4, 4], -2.0, 2.0);
        let gamma = rand_tensor(&mut rng, vec![3], 0.5, 1.5);
        let beta = rand_tensor(&mut rng, vec![3], -0.5, 0.5);
        let mut probe = SplitMix64::new(5);
        let fixed = rand_tensor(&mut probe, vec![4, 3, 4, 4], -1.0, 1.0);
        report.checks.push(check_graph_fn(
            "batchnorm2d",
            &[x, gamma, beta],
            |g, vs| {
                let (out, _) = g.batch_norm(vs[0], vs[1], vs[2], &[0.0; 3], &[1.0; 3], true);
                let r = g.constant(fixed.clone());
                let p = g.mul(out, r);
                g.mean_all(p)
            },
            H_OP,
            tol(1e-5),
        ));
    }
    // activations
    {
        let x = rand_tensor_nonzero(&mut rng, vec![2, 2, 4, 4]);
        report.checks.push(check_graph_fn(
            "relu",
            &[x],
            |g, vs| {
                let out = g.relu(vs[0]);
                g.mean_all(out)
            },
            H_OP,
            tol(1e-6),
        ));
        let x = rand_tensor(&mut rng, vec![2, 2, 4, 4], -3.0, 3.0);
        report.checks.push(check_graph_fn(
            "sigmoid",
            &[x],
            |g, vs| {
                let out = g.sigmoid(vs[0]);
                g.mean_all(out)
            },
            H_OP,
            tol(1e-6),
        ));
    }
    // spatial softmax
    {
        let x = rand_tensor(&mut rng, vec![1, 1, 4, 4], -1.5, 1.5);
        let mut probe = SplitMix64::new(6);
        let fixed = rand_tensor(&mut probe, vec![1, 1, 4, 4], -1.0, 1.0);
        report.checks.push(check_graph_fn(
            "spatial_softmax",
            &[x],
            |g, vs| {
                let out = g.spatial_softmax(vs[0]);
                let r = g.constant(fixed.clone());
                let p = g.mul(out, r);
                g.sum_all(p)
            },
            H_OP,
            tol(1e-6),
        ));
    }
    // channel reductions
    for (name, is_max) in [("channel_max", true), ("channel_avg", false)] {
        let x = rand_tensor_nonzero(&mut rng, vec![2, 3, 3, 3]);
        let mut probe = SplitMix64::new(7);
        let fixed = rand_tensor(&mut probe, vec![2, 1, 3, 3], -1.0, 1.0);
        report.checks.push(check_graph_fn(
            name,
            &[x],
            move |g, vs| {
                let out = if is_max {
                    g.channel_max(vs[0])
                } else {
                    g.channel_avg(vs[0])
                };
                let r = g.constant(fixed.clone());
                let p = g.mul(out, r);
                g.mean_all(p)
            },
            H_OP,
            tol(1e-6),
        ));
    }
    // elementwise and concat
    {
        let a = rand_tensor(&mut rng, vec![2, 2, 3, 3], -1.0, 1.0);
        let b = rand_tensor(&mut rng, vec![2, 2, 3, 3], -1.0, 1.0);
        for (name, which) in [("add", 0), ("sub", 1), ("mul", 2)] {
            report.checks.push(check_graph_fn(
                name,
                &[a.clone(), b.clone()],
                move |g, vs| {
                    let out = match which {
                        0 => g.add(vs[0], vs[1]),
                        1 => g.sub(vs[0], vs[1]),
                        _ => g.mul(vs[0], vs[1]),
                    };
                    let sq = g.mul(out, out);
                    g.mean_all(sq)
                },
                H_OP,
                tol(1e-6),
            ));
        }
        let bpos = rand_tensor_nonzero(&mut rng, vec![2, 2, 3, 3]);
        report.checks.push(check_graph_fn(
            "div",
            &[a.clone(), bpos],
            |g, vs| {
                let out = g.div(vs[0], vs[1]);
                g.mean_all(out)
            },
            H_OP,
            tol(1e-6),
        ));
        let c2 = rand_tensor(&mut rng, vec![1, 2, 3, 3], -1.0, 1.0);
        let c3 = rand_tensor(&mut rng, vec![1, 3, 3, 3], -1.0, 1.0);
        let mut probe = SplitMix64::new(8);
        let fixed = rand_tensor(&mut probe, vec![1, 5, 3, 3], -1.0, 1.0);
        report.checks.push(check_graph_fn(
            "concat_channels",
            &[c2, c3],
            |g, vs| {
                let out = g.concat_channels(&[vs[0], vs[1]]);
                let r = g.constant(fixed.clone());
                let p = g.mul(out, r);
                g.mean_all(p)
            },
            H_OP,
            tol(1e-6),
        ));
        let x = rand_tensor(&mut rng, vec![2, 3, 3, 3], -1.0, 1.0);
        let gate = rand_tensor(&mut rng, vec![2, 1, 3, 3], -1.0, 1.0);
        report.checks.push(check_graph_fn(
            "gate_mul",
            &[x, gate],
            |g, vs| {
                let out = g.gate_mul(vs[0], vs[1]);
                g.mean_all(out)
            },
            H_OP,
            tol(1e-6),
        ));
    }
    // reductions and scalar ops
    {
        let x = rand_tensor(&mut rng, vec![2, 2, 3, 3], -1.0, 1.0);
        report.checks.push(check_graph_fn(
            "sum_spatial",
            &[x.clone()],
            |g, vs| {
                let s = g.sum_spatial(vs[0]);
                let sq = g.mul(s, s);
                g.mean_all(sq)
            },
            H_OP,
            tol(1e-6),
        ));
        report.checks.push(check_graph_fn(
            "mean_all",
            &[x.clone()],
            |g, vs| g.mean_all(vs[0]),
            H_OP,
            tol(1e-6),
        ));
        report.checks.push(check_graph_fn(
            "sum_all_affine",
            &[x.clone()],
            |g, vs| {
                let a = g.affine(vs[0], 1.7, -0.3);
                let s = g.sum_all(a);
                g.affine(s, 0.01, 0.0)
            },
            H_OP,
            tol(1e-6),
        ));
        let logits = rand_tensor(&mut rng, vec![2, 1, 4, 4], -3.0, 3.0);
        let target = rand_tensor(&mut rng, vec![2, 1, 4, 4], 0.0, 1.0)
            .map(|v| if v > 0.5 { 1.0 } else { 0.0 });
        report.checks.push(check_graph_fn(
            "bce_with_logits",
            &[logits],
            move |g, vs| g.bce_with_logits_mean(vs[0], target.clone()),
            H_OP,
            tol(1e-6),
        ));
    }

    // Composite blocks, checked per parameter group via a pseudo-parameter
    // for each block input.
    report.checks.extend(check_cbr(&mut rng));
    report.checks.extend(check_lg_block(&mut rng));
    report.checks.extend(check_sa_block(&mut rng));
    report.checks.extend(check_slice_loss(&mut rng));
    report.checks.extend(check_plain_unet(&mut rng));
    report.checks.extend(check_lgsa_e2e(scale, &mut rng));

    report
}

fn pseudo_input(store: &mut ParamStore, rng: &mut SplitMix64, name: &str, shape: Vec<usize>) {
    let t = rand_tensor(rng, shape, -1.0, 1.0);
    store.insert(name, t, true);
}

fn check_cbr(rng: &mut SplitMix64) -> Vec<OpCheck> {
    let mut store = ParamStore::new();
    let mut init_rng = SplitMix64::new(21);
    blocks::init_cbr(&mut store, &mut init_rng, "cbr", 3, 4);
    pseudo_input(&mut store, rng, "__x__", vec![2, 3, 4, 4]);
    let mut probe = SplitMix64::new(22);
    let fixed = rand_tensor(&mut probe, vec![2, 4, 4, 4], -1.0, 1.0);
    check_params(
        "cbr",
        &store,
        |ps, bwd| {
            let mut fw = Forward::new(ps, Mode::Train);
            let x = fw.bind("__x__");
            let out = blocks::cbr(&mut fw, x, "cbr");
            let r = fw.graph.constant(fixed.clone());
            let p = fw.graph.mul(out, r);
            let loss = fw.graph.mean_all(p);
            let v = fw.graph.value(loss).item();
            if bwd {
                fw.backward(loss);
            }
            v
        },
        H_OP,
        tol(1e-5),
        None,
    )
}

fn check_lg_block(rng: &mut SplitMix64) -> Vec<OpCheck> {
    let mut store = ParamStore::new();
    let mut init_rng = SplitMix64::new(31);
    blocks::init_lg(&mut store, &mut init_rng, "lg", 5);
    pseudo_input(&mut store, rng, "__se__", vec![1, 3, 4, 4]);
    pseudo_input(&mut store, rng, "__loc__", vec![1, 5, 4, 4]);
    let mut probe = SplitMix64::new(32);
    let fixed = rand_tensor(&mut probe, vec![1, 3, 4, 4], -1.0, 1.0);
    check_params(
        "lg_block",
        &store,
        |ps, bwd| {
            let mut fw = Forward::new(ps, Mode::Train);
            let se = fw.bind("__se__");
            let loc = fw.bind("__loc__");
            let out = blocks::lg_block(&mut fw, se, loc, "lg", LgGate::Softmax).out;
            let r = fw.graph.constant(fixed.clone());
            let p = fw.graph.mul(out, r);
            let loss = fw.graph.mean_all(p);
            let v = fw.graph.value(loss).item();
            if bwd {
                fw.backward(loss);
            }
            v
        },
        H_OP,
        tol(1e-5),
        None,
    )
}

fn check_sa_block(rng: &mut SplitMix64) -> Vec<OpCheck> {
    let mut out = Vec::new();
    for head in [HeadMode::Central, HeadMode::Multi] {
        let mut store = ParamStore::new();
        let mut init_rng = SplitMix64::new(41);
        blocks::init_sa(&mut store, &mut init_rng, "sa", 3);
        pseudo_input(&mut store, rng, "__f1__", vec![1, 3, 4, 4]);
        pseudo_input(&mut store, rng, "__f2__", vec![1, 3, 4, 4]);
        pseudo_input(&mut store, rng, "__f3__", vec![1, 3, 4, 4]);
        let mut probe = SplitMix64::new(42);
        let fixed = rand_tensor(&mut probe, vec![1, 9, 4, 4], -1.0, 1.0);
        let name = match head {
            HeadMode::Central => "sa_block_central",
            HeadMode::Multi => "sa_block_multi",
        };
        out.extend(check_params(
            name,
            &store,
            |ps, bwd| {
                let mut fw = Forward::new(ps, Mode::Train);
                let f = [fw.bind("__f1__"), fw.bind("__f2__"), fw.bind("__f3__")];
                let sa = blocks::sa_block(&mut fw, f, "sa", head);
                let cat = fw.graph.concat_channels(&sa.out);
                let r = fw.graph.constant(fixed.clone());
                let p = fw.graph.mul(cat, r);
                let loss = fw.graph.mean_all(p);
                let v = fw.graph.value(loss).item();
                if bwd {
                    fw.backward(loss);
                }
                v
            },
            H_OP,
            tol(1e-5),
            None,
        ));
    }
    out
}

fn check_slice_loss(rng: &mut SplitMix64) -> Vec<OpCheck> {
    let mut store = ParamStore::new();
    pseudo_input(&mut store, rng, "__logits__", vec![1, 2, 4, 4]);
    let gt = rand_tensor(rng, vec![1, 2, 4, 4], 0.0, 1.0).map(|v| if v > 0.5 { 1.0 } else { 0.0 });
    check_params(
        "slice_loss",
        &store,
        move |ps, bwd| {
            let mut fw = Forward::new(ps, Mode::Train);
            let logits = fw.bind("__logits__");
            let loss = slice_loss(&mut fw.graph, logits, &gt, &LossWeights::default());
            let v = fw.graph.value(loss).item();
            if bwd {
                fw.backward(loss);
            }
            v
        },
        H_OP,
        tol(1e-5),
        None,
    )
}

fn check_plain_unet(rng: &mut SplitMix64) -> Vec<OpCheck> {
    let cfg = NetConfig {
        depth: 3,
        base_channels: 2,
        num_classes: 1,
        input_size: 16,
        sa_count: 0,
        lg_enabled: vec![false; 3],
        ..NetConfig::default()
    };
    let model = Model::new(ModelKind::UnetSingle, cfg.clone());
    let (mut store, _) = model.build(51).unwrap();
    pseudo_input(&mut store, rng, "__x__", vec![1, 1, 16, 16]);
    // Keep inputs in a sane range.
    for v in store.get_mut("__x__").value.data_mut() {
        *v = (*v + 1.0) * 0.5;
    }
    let gt = rand_tensor(rng, vec![1, 1, 16, 16], 0.0, 1.0).map(|v| if v > 0.5 { 1.0 } else { 0.0 });
    check_params(
        "unet_e2e",
        &store,
        move |ps, bwd| {
            let mut fw = Forward::new(ps, Mode::Train);
            let x = fw.bind("__x__");
            let logit = plain_unet(&mut fw, &cfg, "net", x);
            let loss = slice_loss(&mut fw.graph, logit, &gt, &LossWeights::default());
            let v = fw.graph.value(loss).item();
            if bwd {
                fw.backward(loss);
            }
            v
        },
        if cfg!(feature = "f32") { H_OP } else { 1e-4 },
        tol(1e-3),
        Some(6),
    )
}

fn check_lgsa_e2e(scale: CheckScale, rng: &mut SplitMix64) -> Vec<OpCheck> {
    let (cfg, probes) = match scale {
        CheckScale::Tiny => (
            NetConfig {
                depth: 3,
                base_channels: 4,
                num_classes: 1,
                input_size: 16,
                sa_count: 4,
                lg_enabled: vec![true; 3],
                ..NetConfig::default()
            },
            // Full sweep over every parameter element.
            None,
        ),
        CheckScale::Small => (
            NetConfig {
                depth: 4,
                base_channels: 8,
                num_classes: 1,
                input_size: 32,
                sa_count: 6,
                lg_enabled: vec![true; 4],
                ..NetConfig::default()
            },
            Some(4),
        ),
    };
    let (store, _) = net::build(&cfg, 61).unwrap();
    let sz = cfg.input_size;
    let xs: [Tensor; 3] = std::array::from_fn(|_| rand_tensor(rng, vec![1, 1, sz, sz], 0.0, 1.0));
    let gts: [Tensor; 3] = std::array::from_fn(|_| {
        rand_tensor(rng, vec![1, cfg.num_classes, sz, sz], 0.0, 1.0)
            .map(|v| if v > 0.6 { 1.0 } else { 0.0 })
    });
    let w = LossWeights::default();
    check_params(
        "lgsa_e2e",
        &store,
        move |ps, bwd| {
            let mut fw = Forward::new(ps, Mode::Train);
            let outs = net::forward(&mut fw, &cfg, xs.clone(), false).unwrap();
            let bd = total_loss(
                &mut fw.graph,
                &outs.coarse_logits,
                &outs.fine_logits,
                &gts,
                &w,
            );
            let v = fw.graph.value(bd.total).item();
            if bwd {
                fw.backward(bd.total);
            }
            v
        },
        if cfg!(feature = "f32") { H_OP } else { 1e-4 },
        tol(1e-3),
        probes,
    )
}
