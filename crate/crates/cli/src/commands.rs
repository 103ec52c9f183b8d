//! Subcommand implementations.

use std::path::{Path, PathBuf};

use lgsa_core::ablation::{self, CellSpec, GridKind};
use lgsa_core::baselines::Model;
use lgsa_core::checkpoint;
use lgsa_core::data::{
    self, export_intensity, export_mask, generate_volume, make_triplets, read_volume,
    split_dataset, write_volume, Volume,
};
use lgsa_core::gradcheck::{gradcheck_suite, CheckScale};
use lgsa_core::metrics::{self, Mask, MetricsRecord};
use lgsa_core::params::{Forward, Mode};
use lgsa_core::train::{batch_tensors, Datasets};
use lgsa_core::LgsaError;

use crate::settings::Settings;

pub enum CmdError {
    /// Bad arguments or configuration (exit 1).
    Validation(String),
    /// Failure while executing (exit 2).
    Runtime(String),
}

impl From<LgsaError> for CmdError {
    fn from(e: LgsaError) -> Self {
        match e {
            LgsaError::InvalidConfig(_) | LgsaError::InvalidInput(_) => {
                CmdError::Validation(e.to_string())
            }
            other => CmdError::Runtime(other.to_string()),
        }
    }
}

fn val(msg: impl Into<String>) -> CmdError {
    CmdError::Validation(msg.into())
}

fn runtime(msg: impl Into<String>) -> CmdError {
    CmdError::Runtime(msg.into())
}

fn ensure_out(s: &Settings) -> Result<PathBuf, CmdError> {
    let out = PathBuf::from(&s.out);
    std::fs::create_dir_all(&out).map_err(|e| runtime(format!("cannot create {}: {e}", s.out)))?;
    Ok(out)
}

/// Echo the resolved configuration next to the artifacts.
fn write_config_echo(s: &Settings, dir: &Path) -> Result<(), CmdError> {
    std::fs::write(dir.join("config.txt"), s.resolved_text())
        .map_err(|e| runtime(format!("cannot write config echo: {e}")))
}

/// Volumes either read from `data_dir` (sorted *.lgsv) or generated.
fn load_or_generate_volumes(s: &Settings) -> Result<Vec<Volume>, CmdError> {
    if s.data_dir.is_empty() {
        let spec = s.synth_spec();
        spec.validate()?;
        return Ok(data::generate_corpus(&spec)?);
    }
    let dir = Path::new(&s.data_dir);
    let mut paths: Vec<PathBuf> = std::fs::read_dir(dir)
        .map_err(|e| val(format!("cannot read data_dir {}: {e}", s.data_dir)))?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.extension().is_some_and(|x| x == "lgsv"))
        .collect();
    paths.sort();
    if paths.is_empty() {
        return Err(val(format!("no .lgsv volumes in {}", s.data_dir)));
    }
    paths
        .iter()
        .enumerate()
        .map(|(i, p)| read_volume(p, i as u32).map_err(CmdError::from))
        .collect()
}

fn build_datasets(s: &Settings) -> Result<Datasets, CmdError> {
    let volumes = load_or_generate_volumes(s)?;
    let (train, valset, test) = split_dataset(
        volumes,
        (s.split_train, s.split_val, s.split_test),
        s.split_seed,
    );
    let flat = |vs: Vec<Volume>| vs.iter().flat_map(make_triplets).collect::<Vec<_>>();
    Ok(Datasets {
        train: flat(train),
        val: flat(valset),
        test: flat(test),
    })
}

fn data_descriptor(s: &Settings) -> String {
    format!(
        "{}split={}:{}:{}\nsplit_seed={}\n",
        s.synth_spec().descriptor(),
        s.split_train,
        s.split_val,
        s.split_test,
        s.split_seed
    )
}

// ---------------------------------------------------------------------------

pub fn gen_data(s: &Settings) -> Result<(), CmdError> {
    let spec = s.synth_spec();
    spec.validate()?;
    let out = ensure_out(s)?;
    write_config_echo(s, &out)?;
    for i in 0..spec.volumes as u64 {
        let v = generate_volume(&spec, i)?;
        let path = out.join(format!("volume_{i:04}.lgsv"));
        write_volume(&v, &path)?;
    }
    println!(
        "wrote {} volumes ({}x{}x{}, {} classes) to {}",
        spec.volumes, spec.depth, spec.height, spec.width, spec.classes, s.out
    );
    Ok(())
}

pub fn train(s: &Settings) -> Result<(), CmdError> {
    let model = s.model().map_err(val)?;
    let train_cfg = s.train_config();
    train_cfg.validate()?;
    let datasets = build_datasets(s)?;
    let out = ensure_out(s)?;
    write_config_echo(s, &out)?;
    let runs_dir = out.join("runs");
    std::fs::create_dir_all(&runs_dir).map_err(|e| runtime(e.to_string()))?;
    let cell = CellSpec {
        grid: "single",
        name: model.kind.name().to_string(),
        model: model.clone(),
        train: train_cfg,
        paper_ref_dsc: None,
    };
    let outcome = ablation::execute_run(&cell, s.seed, &datasets, &data_descriptor(s), &runs_dir)?;
    println!(
        "{}: seed {} -> test dsc {:.4} hd95 {:.3} f1 {:.4} (best epoch {}, {:.0}s){}",
        model.kind.name(),
        s.seed,
        outcome.dsc,
        outcome.hd95,
        outcome.f1,
        outcome.best_epoch,
        outcome.wall_time_s,
        if outcome.cached { " [cached]" } else { "" }
    );
    for (k, v) in &outcome.output_means {
        println!("  {k}: {v:.4}");
    }
    Ok(())
}

pub fn eval(s: &Settings) -> Result<(), CmdError> {
    if s.checkpoint.is_empty() {
        return Err(val("eval requires --checkpoint <path>"));
    }
    let (mut params, desc) = checkpoint::load(Path::new(&s.checkpoint))?;
    let model = Model::from_descriptor(&desc)?;
    let datasets = build_datasets(s)?;
    let out = ensure_out(s)?;
    write_config_echo(s, &out)?;
    let report = lgsa_core::train::evaluate(
        &model,
        &mut params,
        &datasets.test,
        s.batch_size,
        s.seed,
    )?;
    metrics::write_metrics_csv(&out.join("metrics.csv"), &report.headline)?;
    let means = report.output_means();
    {
        use std::io::Write;
        let p = out.join("table3.csv");
        let mut f = std::fs::File::create(&p).map_err(|e| runtime(e.to_string()))?;
        writeln!(f, "output,mean_dsc").map_err(|e| runtime(e.to_string()))?;
        for (k, v) in &means {
            writeln!(f, "{k},{v}").map_err(|e| runtime(e.to_string()))?;
        }
    }
    let (dsc, hd, f1) = report.summary();
    println!(
        "{} on {} test triplets: dsc {dsc:.4} hd95 {hd:.3} f1 {f1:.4}",
        model.kind.name(),
        datasets.test.len()
    );
    for (k, v) in means {
        println!("  {k}: {v:.4}");
    }
    Ok(())
}

pub fn ablate(s: &Settings) -> Result<(), CmdError> {
    let grid = GridKind::parse(&s.grid)
        .ok_or_else(|| val(format!("unknown grid `{}`", s.grid)))?;
    let base = s.harness_config().map_err(val)?;
    base.train.validate()?;
    base.net.validate()?;
    base.data.validate()?;
    let seeds = s.seed_list().map_err(val)?;
    if seeds.is_empty() {
        return Err(val("empty seed list"));
    }
    let out = ensure_out(s)?;
    write_config_echo(s, &out)?;
    let report = ablation::run_ablation(grid, &base, &seeds, &out)?;
    println!(
        "{:<10} {:<18} {:>9} {:>16} {:>16} {:>9}",
        "grid", "config", "paper_dsc", "dsc mean±std", "hd95 mean±std", "failures"
    );
    for c in &report.cells {
        println!(
            "{:<10} {:<18} {:>9} {:>8.4}±{:<7.4} {:>8.3}±{:<7.3} {:>9}",
            c.spec.grid,
            c.spec.name,
            c.spec
                .paper_ref_dsc
                .map(|v| format!("{v:.2}"))
                .unwrap_or_else(|| "-".into()),
            c.mean_dsc(),
            c.std_dsc(),
            c.mean_hd95(),
            c.std_hd95(),
            c.failures()
        );
    }
    println!("report: {}", out.join("ablation.csv").display());
    Ok(())
}

pub fn gradcheck(s: &Settings) -> Result<(), CmdError> {
    let scale = CheckScale::parse(&s.scale)
        .ok_or_else(|| val(format!("unknown scale `{}` (tiny|small)", s.scale)))?;
    let report = gradcheck_suite(scale);
    print!("{}", report.render());
    if report.all_pass() {
        Ok(())
    } else {
        Err(runtime("gradient checks failed"))
    }
}

pub fn export_masks(s: &Settings) -> Result<(), CmdError> {
    if s.checkpoint.is_empty() || s.volume.is_empty() {
        return Err(val("export-masks requires --checkpoint <path> and --volume <file.lgsv>"));
    }
    let (mut params, desc) = checkpoint::load(Path::new(&s.checkpoint))?;
    let model = Model::from_descriptor(&desc)?;
    let volume = read_volume(Path::new(&s.volume), 0)?;
    let triplets = make_triplets(&volume);
    if triplets.is_empty() {
        return Err(val(format!(
            "volume {} has no interior slices (depth {})",
            s.volume, volume.depth
        )));
    }
    let out = ensure_out(s)?;
    write_config_echo(s, &out)?;

    let mut records: Vec<MetricsRecord> = Vec::new();
    for t in &triplets {
        let batch = [t];
        let (xs, _) = batch_tensors(&batch);
        let input_plane: Vec<lgsa_core::Elem> = t.x[1].clone();
        let mut fw = Forward::new(&mut params, Mode::Eval);
        let outs = model
            .forward(&mut fw, xs, false)
            .map_err(CmdError::from)?;
        let probs = fw.graph.sigmoid(outs.fine_logits[outs.center]);
        let pt = fw.graph.value(probs).clone();
        drop(fw);
        let (h, w) = (t.height, t.width);
        let plane = h * w;
        let z = t.center_z;
        export_intensity(&input_plane, w, h, &out.join(format!("slice_{z:03}_input.pgm")))?;
        let gt_onehot = t.one_hot(1);
        for c in 0..t.num_classes {
            let gm = Mask::new(
                h,
                w,
                gt_onehot.data()[c * plane..][..plane]
                    .iter()
                    .map(|&v| v > 0.5)
                    .collect(),
            );
            let pm = Mask::from_probs(
                h,
                w,
                &pt.data()[c * plane..][..plane]
                    .iter()
                    .map(|&v| v as f64)
                    .collect::<Vec<_>>(),
            );
            export_mask(&gm, &out.join(format!("slice_{z:03}_class{}_gt.pgm", c + 1)))?;
            export_mask(&pm, &out.join(format!("slice_{z:03}_class{}_pred.pgm", c + 1)))?;
            records.push(MetricsRecord::compute(
                volume.id,
                z,
                c + 1,
                s.seed,
                &pm,
                &gm,
                t.spacing,
            ));
        }
    }
    metrics::write_metrics_csv(&out.join("dsc.csv"), &records)?;
    let mean_dsc = metrics::mean(&records.iter().map(|r| r.dsc).collect::<Vec<_>>());
    println!(
        "exported {} interior slices ({} prediction masks) to {}; mean dsc {mean_dsc:.4}",
        triplets.len(),
        records.len(),
        s.out
    );
    Ok(())
}
