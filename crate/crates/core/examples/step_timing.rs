// Dev probe: per-step cost of each table4 config at benchmark scale.
use lgsa_core::baselines::{Model, ModelKind};
use lgsa_core::data::{generate_volume, make_triplets, SynthSpec};
use lgsa_core::net::NetConfig;
use lgsa_core::optim::AdamState;
use lgsa_core::params::{Forward, Mode};
use lgsa_core::train::{batch_tensors, model_loss, TrainConfig};

fn main() {
    let spec = SynthSpec::default();
    let v = generate_volume(&spec, 0).unwrap();
    let triplets = make_triplets(&v);
    let tc = TrainConfig::default();
    for kind in [
        ModelKind::UnetSingle,
        ModelKind::LgUnet,
        ModelKind::SaUnet,
        ModelKind::Lgsa,
    ] {
        let model = Model::new(kind, NetConfig::default());
        let (mut params, _) = model.build(0).unwrap();
        println!(
            "{}: {} trainable scalars",
            kind.name(),
            params.num_trainable_scalars()
        );
        let mut adam = AdamState::new(tc.adam);
        let batch: Vec<_> = triplets.iter().take(8).collect();
        let (xs, gts) = batch_tensors(&batch);
        // warmup + 3 timed steps
        let mut times = Vec::new();
        for i in 0..4 {
            let t0 = std::time::Instant::now();
            let mut fw = Forward::new(&mut params, Mode::Train);
            let outs = model.forward(&mut fw, xs.clone(), false).unwrap();
            let loss = model_loss(&mut fw.graph, &outs, &gts, &tc.loss);
            fw.backward(loss);
            drop(fw);
            adam.step(&mut params);
            if i > 0 {
                times.push(t0.elapsed().as_secs_f64());
            }
        }
        let avg = times.iter().sum::<f64>() / times.len() as f64;
        println!("  step time {avg:.2}s -> 35 steps/epoch = {:.0}s/epoch", avg * 35.0);
    }
}
