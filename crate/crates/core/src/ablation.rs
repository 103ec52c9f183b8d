//! Ablation harness: trains grids of structural variants over a seed list
//! and reports mean±std test metrics per configuration.
//!
//! Each (configuration, seed) run is identified by the FNV hash of its
//! canonical config text and cached under `runs/<hash>/`; the harness reuses
//! a completed run directory whose stored config matches, so interrupted
//! grids resume at run granularity. Runs are deterministic, so a cache hit
//! reproduces exactly what a fresh run would compute.

use std::path::Path;
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Mutex;

use crate::baselines::{Model, ModelKind};
use crate::blocks::HeadMode;
use crate::checkpoint;
use crate::data::{generate_corpus, make_triplets, split_dataset, SynthSpec};
use crate::error::LgsaError;
use crate::metrics::{self, write_metrics_csv};
use crate::net::NetConfig;
use crate::train::{
    self, config_hash, evaluate, run_config_text, Datasets, TrainConfig,
};

#[derive(Clone, Debug)]
pub struct HarnessConfig {
    pub data: SynthSpec,
    pub net: NetConfig,
    pub train: TrainConfig,
    pub split_ratios: (usize, usize, usize),
    pub split_seed: u64,
}

impl Default for HarnessConfig {
    fn default() -> Self {
        HarnessConfig {
            data: SynthSpec::default(),
            net: NetConfig::default(),
            train: TrainConfig::default(),
            split_ratios: (7, 1, 2),
            split_seed: 0,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum GridKind {
    Table4,
    Table5,
    Table6,
    Table7,
    Baselines,
    All,
}

impl GridKind {
    pub fn parse(s: &str) -> Option<Self> {
        Some(match s {
            "table4" => GridKind::Table4,
            "table5" => GridKind::Table5,
            "table6" => GridKind::Table6,
            "table7" => GridKind::Table7,
            "baselines" => GridKind::Baselines,
            "all" => GridKind::All,
            _ => return None,
        })
    }

    pub fn name(&self) -> &'static str {
        match self {
            GridKind::Table4 => "table4",
            GridKind::Table5 => "table5",
            GridKind::Table6 => "table6",
            GridKind::Table7 => "table7",
            GridKind::Baselines => "baselines",
            GridKind::All => "all",
        }
    }
}

/// One grid cell: a model variant plus its supervision, with the published
/// reference DSC carried along for context (reported, never asserted).
#[derive(Clone, Debug)]
pub struct CellSpec {
    pub grid: &'static str,
    pub name: String,
    pub model: Model,
    pub train: TrainConfig,
    pub paper_ref_dsc: Option<f64>,
}

/// Builds the cells of a grid from the harness base configuration.
pub fn grid_cells(kind: GridKind, base: &HarnessConfig) -> Vec<CellSpec> {
    let mut cells = Vec::new();
    let cfg = &base.net;
    let tc = &base.train;
    match kind {
        GridKind::Table4 => {
            // plain UNet → +LG → +SA → +LG+SA, mirroring the published grid.
            cells.push(CellSpec {
                grid: "table4",
                name: "unet".into(),
                model: Model::new(ModelKind::UnetSingle, cfg.clone()),
                train: tc.clone(),
                paper_ref_dsc: Some(90.00),
            });
            cells.push(CellSpec {
                grid: "table4",
                name: "unet+lg".into(),
                model: Model::new(ModelKind::LgUnet, cfg.clone()),
                train: tc.clone(),
                paper_ref_dsc: Some(91.16),
            });
            cells.push(CellSpec {
                grid: "table4",
                name: "unet+sa".into(),
                model: Model::new(ModelKind::SaUnet, cfg.clone()),
                train: tc.clone(),
                paper_ref_dsc: Some(91.70),
            });
            cells.push(CellSpec {
                grid: "table4",
                name: "unet+lg+sa".into(),
                model: Model::new(ModelKind::Lgsa, cfg.clone()),
                train: tc.clone(),
                paper_ref_dsc: Some(92.22),
            });
        }
        GridKind::Table5 => {
            for (mode, name, ref_dsc) in [
                (HeadMode::Multi, "multi-head", 91.90),
                (HeadMode::Central, "central-head", 92.22),
            ] {
                let mut c = cfg.clone();
                c.head_mode = mode;
                cells.push(CellSpec {
                    grid: "table5",
                    name: name.into(),
                    model: Model::new(ModelKind::Lgsa, c),
                    train: tc.clone(),
                    paper_ref_dsc: Some(ref_dsc),
                });
            }
        }
        GridKind::Table6 => {
            for (count, ref_dsc) in [(1usize, 91.27), (3, 91.92), (5, 92.22)] {
                let mut c = cfg.clone();
                c.sa_count = count.min(2 * (c.depth - 1));
                cells.push(CellSpec {
                    grid: "table6",
                    name: format!("sa-count-{count}"),
                    model: Model::new(ModelKind::Lgsa, c),
                    train: tc.clone(),
                    paper_ref_dsc: Some(ref_dsc),
                });
            }
        }
        GridKind::Table7 => {
            // OS: only the fine center output; SeS: both stages' centers;
            // SiS: all three fine outputs; SeS+SiS: the full supervision.
            let variants: [(& str, f64, f64, f64); 4] = [
                // (name, alpha, beta, ref)
                ("os", 0.0, 0.0, 90.57),
                ("ses", 0.0, 0.5, 90.89),
                ("sis", 0.33, 0.0, 91.84),
                ("ses+sis", 0.33, 0.5, 92.22),
            ];
            for (name, alpha, beta, ref_dsc) in variants {
                let mut t = tc.clone();
                t.loss.alpha = alpha as crate::Elem;
                t.loss.beta = beta as crate::Elem;
                cells.push(CellSpec {
                    grid: "table7",
                    name: name.into(),
                    model: Model::new(ModelKind::Lgsa, cfg.clone()),
                    train: t,
                    paper_ref_dsc: Some(ref_dsc),
                });
            }
        }
        GridKind::Baselines => {
            for (kind, name, ref_dsc) in [
                (ModelKind::StackedUnet, "stacked3-unet", 90.35),
                (ModelKind::MultiEncoder, "multi-encoder", 91.53),
                (ModelKind::ConcatTwoStage, "concat-two-stage", 91.99),
            ] {
                cells.push(CellSpec {
                    grid: "baselines",
                    name: name.into(),
                    model: Model::new(kind, cfg.clone()),
                    train: tc.clone(),
                    paper_ref_dsc: Some(ref_dsc),
                });
            }
        }
        GridKind::All => {
            for k in [
                GridKind::Table4,
                GridKind::Table5,
                GridKind::Table6,
                GridKind::Table7,
                GridKind::Baselines,
            ] {
                cells.extend(grid_cells(k, base));
            }
        }
    }
    cells
}

#[derive(Clone, Debug)]
pub struct SeedOutcome {
    pub seed: u64,
    pub dsc: f64,
    pub hd95: f64,
    pub f1: f64,
    pub best_epoch: usize,
    pub wall_time_s: f64,
    /// Mean DSC per output key (lgsa: six entries).
    pub output_means: Vec<(String, f64)>,
    pub error: Option<String>,
    pub cached: bool,
}

#[derive(Clone, Debug)]
pub struct CellResult {
    pub spec: CellSpec,
    pub per_seed: Vec<SeedOutcome>,
}

impl CellResult {
    fn ok_values(&self, f: impl Fn(&SeedOutcome) -> f64) -> Vec<f64> {
        self.per_seed
            .iter()
            .filter(|s| s.error.is_none())
            .map(f)
            .collect()
    }

    pub fn mean_dsc(&self) -> f64 {
        metrics::mean(&self.ok_values(|s| s.dsc))
    }

    pub fn std_dsc(&self) -> f64 {
        metrics::std_dev(&self.ok_values(|s| s.dsc))
    }

    pub fn mean_hd95(&self) -> f64 {
        metrics::mean(&self.ok_values(|s| s.hd95))
    }

    pub fn std_hd95(&self) -> f64 {
        metrics::std_dev(&self.ok_values(|s| s.hd95))
    }

    pub fn mean_f1(&self) -> f64 {
        metrics::mean(&self.ok_values(|s| s.f1))
    }

    pub fn std_f1(&self) -> f64 {
        metrics::std_dev(&self.ok_values(|s| s.f1))
    }

    pub fn failures(&self) -> usize {
        self.per_seed.iter().filter(|s| s.error.is_some()).count()
    }
}

/// Prepares the shared datasets for the harness.
pub fn build_datasets(base: &HarnessConfig) -> Result<Datasets, LgsaError> {
    let volumes = generate_corpus(&base.data)?;
    let (train_v, val_v, test_v) = split_dataset(volumes, base.split_ratios, base.split_seed);
    let flat = |vs: Vec<crate::data::Volume>| {
        vs.iter().flat_map(make_triplets).collect::<Vec<_>>()
    };
    Ok(Datasets {
        train: flat(train_v),
        val: flat(val_v),
        test: flat(test_v),
    })
}

fn data_descriptor(base: &HarnessConfig) -> String {
    format!(
        "{}split={}:{}:{}\nsplit_seed={}\n",
        base.data.descriptor(),
        base.split_ratios.0,
        base.split_ratios.1,
        base.split_ratios.2,
        base.split_seed
    )
}

/// Executes one (cell, seed) run, writing the run directory; returns its
/// outcome. Reuses a cached run directory when its config text matches.
pub fn execute_run(
    cell: &CellSpec,
    seed: u64,
    data: &Datasets,
    data_desc: &str,
    runs_dir: &Path,
) -> Result<SeedOutcome, LgsaError> {
    let text = run_config_text(&cell.model, &cell.train, data_desc, seed);
    let hash = config_hash(&text);
    let dir = runs_dir.join(format!("{hash:016x}"));
    let record_path = dir.join("record.txt");
    let config_path = dir.join("config.txt");

    if record_path.exists() {
        if let Ok(stored) = std::fs::read_to_string(&config_path) {
            if stored == text {
                if let Some(outcome) = parse_record(&std::fs::read_to_string(&record_path)
                    .map_err(|e| LgsaError::io(record_path.display().to_string(), e))?, seed)
                {
                    return Ok(outcome);
                }
            }
        }
    }

    std::fs::create_dir_all(&dir).map_err(|e| LgsaError::io(dir.display().to_string(), e))?;
    std::fs::write(&config_path, &text)
        .map_err(|e| LgsaError::io(config_path.display().to_string(), e))?;

    let (mut best, record) = train::train(&cell.model, data, &cell.train, seed, data_desc)?;

    // Training curve.
    let curve_path = dir.join("curve.csv");
    {
        use std::io::Write;
        let mut f = std::fs::File::create(&curve_path)
            .map_err(|e| LgsaError::io(curve_path.display().to_string(), e))?;
        writeln!(f, "epoch,train_loss,val_dsc")
            .and_then(|_| {
                for s in &record.epochs {
                    writeln!(f, "{},{},{}", s.epoch, s.train_loss, s.val_dsc)?;
                }
                Ok(())
            })
            .map_err(|e| LgsaError::io(curve_path.display().to_string(), e))?;
    }

    checkpoint::save(&best, &cell.model.descriptor(), &dir.join("best.ckpt"))?;

    let eval = evaluate(
        &cell.model,
        &mut best,
        &data.test,
        cell.train.batch_size,
        seed,
    )?;
    write_metrics_csv(&dir.join("metrics.csv"), &eval.headline)?;
    let (dsc, hd95, f1) = eval.summary();
    let output_means = eval.output_means();

    // Per-output comparison table for this run.
    {
        use std::io::Write;
        let p = dir.join("table3.csv");
        let mut f =
            std::fs::File::create(&p).map_err(|e| LgsaError::io(p.display().to_string(), e))?;
        writeln!(f, "output,mean_dsc")
            .and_then(|_| {
                for (k, v) in &output_means {
                    writeln!(f, "{k},{v}")?;
                }
                Ok(())
            })
            .map_err(|e| LgsaError::io(p.display().to_string(), e))?;
    }

    let outcome = SeedOutcome {
        seed,
        dsc,
        hd95,
        f1,
        best_epoch: record.best_epoch,
        wall_time_s: record.wall_time_s,
        output_means,
        error: None,
        cached: false,
    };
    std::fs::write(&record_path, render_record(&outcome))
        .map_err(|e| LgsaError::io(record_path.display().to_string(), e))?;
    Ok(outcome)
}

fn render_record(o: &SeedOutcome) -> String {
    let mut s = format!(
        "seed={}\ndsc={}\nhd95={}\nf1={}\nbest_epoch={}\nwall_time_s={}\n",
        o.seed, o.dsc, o.hd95, o.f1, o.best_epoch, o.wall_time_s
    );
    for (k, v) in &o.output_means {
        s.push_str(&format!("out.{k}={v}\n"));
    }
    s
}

fn parse_record(text: &str, seed: u64) -> Option<SeedOutcome> {
    let mut dsc = None;
    let mut hd95 = None;
    let mut f1 = None;
    let mut best_epoch = None;
    let mut wall = None;
    let mut outs = Vec::new();
    for line in text.lines() {
        let (k, v) = line.split_once('=')?;
        match k {
            "seed" => {
                if v.parse::<u64>().ok()? != seed {
                    return None;
                }
            }
            "dsc" => dsc = v.parse().ok(),
            "hd95" => hd95 = v.parse().ok(),
            "f1" => f1 = v.parse().ok(),
            "best_epoch" => best_epoch = v.parse().ok(),
            "wall_time_s" => wall = v.parse().ok(),
            _ => {
                if let Some(key) = k.strip_prefix("out.") {
                    outs.push((key.to_string(), v.parse().ok()?));
                }
            }
        }
    }
    Some(SeedOutcome {
        seed,
        dsc: dsc?,
        hd95: hd95?,
        f1: f1?,
        best_epoch: best_epoch?,
        wall_time_s: wall?,
        output_means: outs,
        error: None,
        cached: true,
    })
}

/// Worker-thread cap: `LGSA_THREADS` if set, else available parallelism.
pub fn thread_cap(jobs: usize) -> usize {
    let env_cap = std::env::var("LGSA_THREADS")
        .ok()
        .and_then(|v| v.parse::<usize>().ok())
        .filter(|&n| n > 0);
    let hw = std::thread::available_parallelism()
        .map(|n| n.get())
        .unwrap_or(1);
    env_cap.unwrap_or(hw).min(jobs.max(1))
}

pub struct AblationReport {
    pub cells: Vec<CellResult>,
    pub seeds: Vec<u64>,
}

/// Runs a grid over the seed list, fanning out (cell, seed) runs across
/// worker threads (one run per worker, strictly sequential inside a run).
/// Individual run failures are recorded and the rest of the grid continues.
pub fn run_ablation(
    kind: GridKind,
    base: &HarnessConfig,
    seeds: &[u64],
    out_dir: &Path,
) -> Result<AblationReport, LgsaError> {
    let cells = grid_cells(kind, base);
    let data = build_datasets(base)?;
    let data_desc = data_descriptor(base);
    let runs_dir = out_dir.join("runs");
    std::fs::create_dir_all(&runs_dir)
        .map_err(|e| LgsaError::io(runs_dir.display().to_string(), e))?;

    // Flat job list over (cell, seed).
    let jobs: Vec<(usize, u64)> = cells
        .iter()
        .enumerate()
        .flat_map(|(ci, _)| seeds.iter().map(move |&s| (ci, s)))
        .collect();
    let results: Mutex<Vec<Option<SeedOutcome>>> = Mutex::new(vec![None; jobs.len()]);
    let next = AtomicUsize::new(0);
    let workers = thread_cap(jobs.len());

    std::thread::scope(|scope| {
        for _ in 0..workers {
            scope.spawn(|| loop {
                let j = next.fetch_add(1, Ordering::Relaxed);
                if j >= jobs.len() {
                    break;
                }
                let (ci, seed) = jobs[j];
                let outcome = std::panic::catch_unwind(std::panic::AssertUnwindSafe(|| {
                    execute_run(&cells[ci], seed, &data, &data_desc, &runs_dir)
                }));
                let outcome = match outcome {
                    Ok(Ok(o)) => o,
                    Ok(Err(e)) => SeedOutcome {
                        seed,
                        dsc: f64::NAN,
                        hd95: f64::NAN,
                        f1: f64::NAN,
                        best_epoch: 0,
                        wall_time_s: 0.0,
                        output_means: vec![],
                        error: Some(e.to_string()),
                        cached: false,
                    },
                    Err(p) => SeedOutcome {
                        seed,
                        dsc: f64::NAN,
                        hd95: f64::NAN,
                        f1: f64::NAN,
                        best_epoch: 0,
                        wall_time_s: 0.0,
                        output_means: vec![],
                        error: Some(format!("panic: {}", panic_message(&p))),
                        cached: false,
                    },
                };
                results.lock().unwrap()[j] = Some(outcome);
            });
        }
    });

    let results = results.into_inner().unwrap();
    let mut cell_results: Vec<CellResult> = cells
        .iter()
        .map(|c| CellResult {
            spec: c.clone(),
            per_seed: Vec::new(),
        })
        .collect();
    for (j, outcome) in results.into_iter().enumerate() {
        let (ci, _) = jobs[j];
        cell_results[ci].per_seed.push(outcome.expect("job not run"));
    }

    let report = AblationReport {
        cells: cell_results,
        seeds: seeds.to_vec(),
    };
    write_ablation_csv(&report, &out_dir.join("ablation.csv"))?;
    write_boxdata_csv(&report, &out_dir.join("boxdata.csv"))?;
    Ok(report)
}

fn panic_message(p: &(dyn std::any::Any + Send)) -> String {
    if let Some(s) = p.downcast_ref::<&str>() {
        (*s).to_string()
    } else if let Some(s) = p.downcast_ref::<String>() {
        s.clone()
    } else {
        "unknown panic".into()
    }
}

pub fn write_ablation_csv(report: &AblationReport, path: &Path) -> Result<(), LgsaError> {
    use std::io::Write;
    let mut f =
        std::fs::File::create(path).map_err(|e| LgsaError::io(path.display().to_string(), e))?;
    let io = |e| LgsaError::io(path.display().to_string(), e);
    writeln!(
        f,
        "grid,config,paper_ref_dsc,mean_dsc,std_dsc,mean_hd95,std_hd95,mean_f1,std_f1,seeds,failures"
    )
    .map_err(io)?;
    for c in &report.cells {
        writeln!(
            f,
            "{},{},{},{},{},{},{},{},{},{},{}",
            c.spec.grid,
            c.spec.name,
            c.spec
                .paper_ref_dsc
                .map(|v| v.to_string())
                .unwrap_or_default(),
            c.mean_dsc(),
            c.std_dsc(),
            c.mean_hd95(),
            c.std_hd95(),
            c.mean_f1(),
            c.std_f1(),
            report.seeds.len(),
            c.failures()
        )
        .map_err(io)?;
    }
    Ok(())
}

/// Per-seed DSC lists (box-plot source data).
pub fn write_boxdata_csv(report: &AblationReport, path: &Path) -> Result<(), LgsaError> {
    use std::io::Write;
    let mut f =
        std::fs::File::create(path).map_err(|e| LgsaError::io(path.display().to_string(), e))?;
    let io = |e| LgsaError::io(path.display().to_string(), e);
    writeln!(f, "grid,config,seed,dsc").map_err(io)?;
    for c in &report.cells {
        for s in &c.per_seed {
            writeln!(f, "{},{},{},{}", c.spec.grid, c.spec.name, s.seed, s.dsc).map_err(io)?;
        }
    }
    Ok(())
}
