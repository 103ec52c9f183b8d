// Dev probe: difficulty calibration for the synthetic benchmark.
// Trains short schedules and reports test DSC per config.
use lgsa_core::ablation::{build_datasets, HarnessConfig};
use lgsa_core::baselines::{Model, ModelKind};
use lgsa_core::data::SynthSpec;
use lgsa_core::train::{evaluate, train, TrainConfig};

fn main() {
    let args: Vec<String> = std::env::args().collect();
    let noise: f64 = args.get(1).map(|s| s.parse().unwrap()).unwrap_or(0.35);
    let contrast: f64 = args.get(2).map(|s| s.parse().unwrap()).unwrap_or(0.55);
    let epochs: usize = args.get(3).map(|s| s.parse().unwrap()).unwrap_or(8);
    let kinds: Vec<ModelKind> = args
        .get(4)
        .map(|s| {
            s.split(',')
                .map(|k| ModelKind::parse(k).expect("bad kind"))
                .collect()
        })
        .unwrap_or_else(|| vec![ModelKind::UnetSingle]);

    let base = HarnessConfig {
        data: SynthSpec {
            noise_std: noise,
            contrast,
            ..SynthSpec::default()
        },
        train: TrainConfig {
            epochs,
            patience: epochs.saturating_sub(1).max(1),
            ..TrainConfig::default()
        },
        ..HarnessConfig::default()
    };
    let data = build_datasets(&base).unwrap();
    eprintln!(
        "noise {noise} contrast {contrast} epochs {epochs}: {} train / {} val / {} test triplets",
        data.train.len(),
        data.val.len(),
        data.test.len()
    );
    for kind in kinds {
        let model = Model::new(kind, base.net.clone());
        let t0 = std::time::Instant::now();
        let (mut best, rec) = train(&model, &data, &base.train, 0, "pilot").unwrap();
        let report = evaluate(&model, &mut best, &data.test, 8, 0).unwrap();
        let (dsc, hd, f1) = report.summary();
        println!(
            "{:<16} noise {noise} contrast {contrast}: test dsc {dsc:.4} hd95 {hd:.3} f1 {f1:.4} (best epoch {} of {}, {:.0}s)",
            kind.name(),
            rec.best_epoch,
            rec.epochs.len(),
            t0.elapsed().as_secs_f64()
        );
        for (k, v) in report.output_means() {
            eprintln!("    {k}: {v:.4}");
        }
    }
}
