// Dev probe: single-volume overfit speed of the tiny network.
use lgsa_core::baselines::{Model, ModelKind};
use lgsa_core::data::{generate_volume, make_triplets, SynthSpec};
use lgsa_core::net::NetConfig;
use lgsa_core::optim::AdamState;
use lgsa_core::params::{Forward, Mode};
use lgsa_core::train::{batch_tensors, eval_center_dsc, model_loss, TrainConfig};
use lgsa_core::rng::SplitMix64;

fn main() {
    let spec = SynthSpec {
        volumes: 1,
        depth: 12,
        height: 32,
        width: 32,
        ..SynthSpec::default()
    };
    let v = generate_volume(&spec, 0).unwrap();
    let triplets = make_triplets(&v);
    println!("{} triplets", triplets.len());

    let cfg = NetConfig {
        depth: 3,
        base_channels: 8,
        num_classes: 1,
        input_size: 32,
        sa_count: 4,
        lg_enabled: vec![true; 3],
        ..NetConfig::default()
    };
    let model = Model::new(ModelKind::Lgsa, cfg);
    let tc = TrainConfig::default();
    let (mut params, _) = model.build(0).unwrap();
    let mut adam = AdamState::new(tc.adam);
    let start = std::time::Instant::now();
    let mut step = 0;
    'outer: for epoch in 0..200 {
        let mut order: Vec<usize> = (0..triplets.len()).collect();
        SplitMix64::derive(0, epoch as u64).shuffle(&mut order);
        for chunk in order.chunks(tc.batch_size) {
            let batch: Vec<_> = chunk.iter().map(|&i| &triplets[i]).collect();
            let (xs, gts) = batch_tensors(&batch);
            let mut fw = Forward::new(&mut params, Mode::Train);
            let outs = model.forward(&mut fw, xs, false).unwrap();
            let loss = model_loss(&mut fw.graph, &outs, &gts, &tc.loss);
            let lv = fw.graph.value(loss).item();
            fw.backward(loss);
            drop(fw);
            adam.step(&mut params);
            step += 1;
            if step % 20 == 0 || step <= 5 {
                let dsc = eval_center_dsc(&model, &mut params, &triplets, 8).unwrap();
                println!(
                    "step {step:4}  loss {lv:.4}  train-dsc {dsc:.4}  ({:.1}s)",
                    start.elapsed().as_secs_f64()
                );
                if dsc >= 0.95 {
                    println!("reached 0.95 at step {step}");
                    break 'outer;
                }
            }
            if step >= 200 {
                break 'outer;
            }
        }
    }
    let dsc = eval_center_dsc(&model, &mut params, &triplets, 8).unwrap();
    println!(
        "final: step {step} dsc {dsc:.4} elapsed {:.1}s",
        start.elapsed().as_secs_f64()
    );
}
