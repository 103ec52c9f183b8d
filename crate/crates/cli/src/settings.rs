//! Flat key=value configuration: defaults, config-file parsing, and flag
//! overrides. Every key has a documented default; unknown keys are rejected
//! by name.
//!
//! Config file grammar: one `key = value` per line, `#` starts a comment,
//! blank lines allowed. Flags are `--key value` or `--key=value`; boolean
//! keys may be passed bare (`--dry-run`).

use lgsa_core::ablation::HarnessConfig;
use lgsa_core::baselines::{Model, ModelKind};
use lgsa_core::blocks::{HeadMode, LgGate};
use lgsa_core::data::SynthSpec;
use lgsa_core::loss::LossWeights;
use lgsa_core::net::{LocSource, NetConfig};
use lgsa_core::optim::AdamConfig;
use lgsa_core::train::TrainConfig;
use lgsa_core::Elem;

#[derive(Clone, Debug)]
pub struct Settings {
    pub seed: u64,
    pub out: String,
    pub dry_run: bool,

    // data
    pub volumes: usize,
    pub depth: usize,
    pub size: usize,
    pub classes: usize,
    pub ellipses_min: usize,
    pub ellipses_max: usize,
    pub drift: f64,
    pub contrast: f64,
    pub noise_std: f64,
    pub blur_radius: usize,
    pub spacing_z: f32,
    pub spacing_y: f32,
    pub spacing_x: f32,
    pub data_seed: u64,
    pub data_dir: String,

    // split
    pub split_train: usize,
    pub split_val: usize,
    pub split_test: usize,
    pub split_seed: u64,

    // network
    pub model: String,
    pub net_depth: usize,
    pub base_channels: usize,
    pub head_mode: String,
    pub sa_count: usize,
    pub lg_enabled: String,
    pub lg_gate: String,
    pub loc_source: String,

    // training
    pub epochs: usize,
    pub batch_size: usize,
    pub patience: usize,
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub adam_eps: f64,
    pub weight_decay: f64,
    pub alpha: f64,
    pub beta: f64,
    pub bce_weight: f64,
    pub dice_smooth: f64,
    pub eval_every: usize,
    pub checked_input: bool,

    // command arguments
    pub grid: String,
    pub seeds: String,
    pub scale: String,
    pub checkpoint: String,
    pub volume: String,
}

impl Default for Settings {
    fn default() -> Self {
        Settings {
            seed: 0,
            out: "out".into(),
            dry_run: false,
            volumes: 40,
            depth: 12,
            size: 64,
            classes: 1,
            ellipses_min: 1,
            ellipses_max: 1,
            drift: 0.01,
            contrast: 0.55,
            noise_std: 0.35,
            blur_radius: 1,
            spacing_z: 1.0,
            spacing_y: 1.0,
            spacing_x: 1.0,
            data_seed: 0,
            data_dir: String::new(),
            split_train: 7,
            split_val: 1,
            split_test: 2,
            split_seed: 0,
            model: "lgsa".into(),
            net_depth: 5,
            base_channels: 16,
            head_mode: "central".into(),
            sa_count: 8,
            lg_enabled: "on".into(),
            lg_gate: "softmax".into(),
            loc_source: "features".into(),
            epochs: 30,
            batch_size: 8,
            patience: 5,
            lr: 5e-4,
            beta1: 0.9,
            beta2: 0.999,
            adam_eps: 1e-8,
            weight_decay: 1e-4,
            alpha: 0.33,
            beta: 0.5,
            bce_weight: 0.5,
            dice_smooth: 1.0,
            eval_every: 1,
            checked_input: false,
            grid: "table4".into(),
            seeds: "0,1,2,3,4".into(),
            scale: "tiny".into(),
            checkpoint: String::new(),
            volume: String::new(),
        }
    }
}

fn parse_bool(v: &str) -> Result<bool, String> {
    match v {
        "true" | "1" | "on" | "yes" => Ok(true),
        "false" | "0" | "off" | "no" => Ok(false),
        _ => Err(format!("expected a boolean, got `{v}`")),
    }
}

/// (key, doc) table used for `--help` and resolved-config echoes.
pub const KEY_DOCS: &[(&str, &str)] = &[
    ("seed", "master seed for model init and shuffling"),
    ("out", "output directory"),
    ("dry-run", "print the resolved configuration and exit"),
    ("volumes", "synthetic volume count"),
    ("depth", "slices per volume (>= 3)"),
    ("size", "square slice size; power of two"),
    ("classes", "foreground class count"),
    ("ellipses_min", "minimum ellipses per class"),
    ("ellipses_max", "maximum ellipses per class"),
    ("drift", "per-slice random-walk step as a fraction of size"),
    ("contrast", "foreground intensity offset"),
    ("noise_std", "Gaussian noise level"),
    ("blur_radius", "box-blur radius in pixels"),
    ("spacing_z", "physical spacing along z"),
    ("spacing_y", "physical spacing along y"),
    ("spacing_x", "physical spacing along x"),
    ("data_seed", "corpus seed (volumes are keyed by it)"),
    ("data_dir", "read .lgsv volumes from this directory instead of generating"),
    ("split_train", "train ratio numerator"),
    ("split_val", "validation ratio numerator"),
    ("split_test", "test ratio numerator"),
    ("split_seed", "volume-split shuffle seed"),
    ("model", "lgsa | unet | lg-unet | sa-unet | stacked3-unet | multi-encoder | concat-two-stage"),
    ("net_depth", "UNet levels N (N-1 downsamplings)"),
    ("base_channels", "channels at the first level; doubles per level"),
    ("head_mode", "central | multi (SA adjustment target)"),
    ("sa_count", "SA decoder positions, deepest first (0..=2*(N-1))"),
    ("lg_enabled", "on | off | comma mask per level, e.g. 1,1,0,0,1"),
    ("lg_gate", "softmax | sigmoid"),
    ("loc_source", "features | probmap"),
    ("epochs", "training epoch cap"),
    ("batch_size", "triplets per step (>= 2)"),
    ("patience", "early-stop patience in epochs"),
    ("lr", "Adam learning rate"),
    ("beta1", "Adam first-moment decay"),
    ("beta2", "Adam second-moment decay"),
    ("adam_eps", "Adam denominator epsilon"),
    ("weight_decay", "coupled L2 weight decay"),
    ("alpha", "adjacent-slice loss weight (center gets 1-2*alpha)"),
    ("beta", "coarse-stage loss weight"),
    ("bce_weight", "BCE term weight inside a slice loss"),
    ("dice_smooth", "soft-Dice smoothing epsilon"),
    ("eval_every", "validate every n epochs"),
    ("checked_input", "reject unnormalized inputs inside forward"),
    ("grid", "ablation grid: table4 | table5 | table6 | table7 | baselines | all"),
    ("seeds", "comma-separated seed list for ablate"),
    ("scale", "gradcheck scale: tiny | small"),
    ("checkpoint", "checkpoint path for eval / export-masks"),
    ("volume", "volume file for export-masks"),
];

impl Settings {
    /// Applies one key=value pair; rejects unknown keys by name.
    pub fn apply(&mut self, key: &str, value: &str) -> Result<(), String> {
        let num = |v: &str| -> Result<usize, String> {
            v.parse().map_err(|_| format!("expected an integer, got `{v}`"))
        };
        let float = |v: &str| -> Result<f64, String> {
            v.parse().map_err(|_| format!("expected a number, got `{v}`"))
        };
        let f32v = |v: &str| -> Result<f32, String> {
            v.parse().map_err(|_| format!("expected a number, got `{v}`"))
        };
        let u64v = |v: &str| -> Result<u64, String> {
            v.parse().map_err(|_| format!("expected an integer, got `{v}`"))
        };
        match key {
            "seed" => self.seed = u64v(value)?,
            "out" => self.out = value.into(),
            "dry-run" | "dry_run" => self.dry_run = parse_bool(value)?,
            "volumes" => self.volumes = num(value)?,
            "depth" => self.depth = num(value)?,
            "size" => self.size = num(value)?,
            "classes" => self.classes = num(value)?,
            "ellipses_min" => self.ellipses_min = num(value)?,
            "ellipses_max" => self.ellipses_max = num(value)?,
            "drift" => self.drift = float(value)?,
            "contrast" => self.contrast = float(value)?,
            "noise_std" => self.noise_std = float(value)?,
            "blur_radius" => self.blur_radius = num(value)?,
            "spacing_z" => self.spacing_z = f32v(value)?,
            "spacing_y" => self.spacing_y = f32v(value)?,
            "spacing_x" => self.spacing_x = f32v(value)?,
            "data_seed" => self.data_seed = u64v(value)?,
            "data_dir" => self.data_dir = value.into(),
            "split_train" => self.split_train = num(value)?,
            "split_val" => self.split_val = num(value)?,
            "split_test" => self.split_test = num(value)?,
            "split_seed" => self.split_seed = u64v(value)?,
            "model" => self.model = value.into(),
            "net_depth" => self.net_depth = num(value)?,
            "base_channels" => self.base_channels = num(value)?,
            "head_mode" => self.head_mode = value.into(),
            "sa_count" => self.sa_count = num(value)?,
            "lg_enabled" => self.lg_enabled = value.into(),
            "lg_gate" => self.lg_gate = value.into(),
            "loc_source" => self.loc_source = value.into(),
            "epochs" => self.epochs = num(value)?,
            "batch_size" => self.batch_size = num(value)?,
            "patience" => self.patience = num(value)?,
            "lr" => self.lr = float(value)?,
            "beta1" => self.beta1 = float(value)?,
            "beta2" => self.beta2 = float(value)?,
            "adam_eps" => self.adam_eps = float(value)?,
            "weight_decay" => self.weight_decay = float(value)?,
            "alpha" => self.alpha = float(value)?,
            "beta" => self.beta = float(value)?,
            "bce_weight" => self.bce_weight = float(value)?,
            "dice_smooth" => self.dice_smooth = float(value)?,
            "eval_every" => self.eval_every = num(value)?,
            "checked_input" => self.checked_input = parse_bool(value)?,
            "grid" => self.grid = value.into(),
            "seeds" => self.seeds = value.into(),
            "scale" => self.scale = value.into(),
            "checkpoint" => self.checkpoint = value.into(),
            "volume" => self.volume = value.into(),
            _ => return Err(format!("unknown key `{key}`")),
        }
        Ok(())
    }

    /// Loads `key = value` lines; `#` comments and blank lines are skipped.
    pub fn load_file(&mut self, path: &str) -> Result<(), String> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| format!("cannot read config file {path}: {e}"))?;
        for (lineno, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let Some((k, v)) = line.split_once('=') else {
                return Err(format!("{path}:{}: expected `key = value`", lineno + 1));
            };
            self.apply(k.trim(), v.trim())
                .map_err(|e| format!("{path}:{}: {e}", lineno + 1))?;
        }
        Ok(())
    }

    /// Canonical echo of every setting, stable order.
    pub fn resolved_text(&self) -> String {
        let s = self;
        format!(
            "seed = {}\nout = {}\nvolumes = {}\ndepth = {}\nsize = {}\nclasses = {}\n\
             ellipses_min = {}\nellipses_max = {}\ndrift = {}\ncontrast = {}\nnoise_std = {}\n\
             blur_radius = {}\nspacing_z = {}\nspacing_y = {}\nspacing_x = {}\ndata_seed = {}\n\
             data_dir = {}\nsplit_train = {}\nsplit_val = {}\nsplit_test = {}\nsplit_seed = {}\n\
             model = {}\nnet_depth = {}\nbase_channels = {}\nhead_mode = {}\nsa_count = {}\n\
             lg_enabled = {}\nlg_gate = {}\nloc_source = {}\nepochs = {}\nbatch_size = {}\n\
             patience = {}\nlr = {}\nbeta1 = {}\nbeta2 = {}\nadam_eps = {}\nweight_decay = {}\n\
             alpha = {}\nbeta = {}\nbce_weight = {}\ndice_smooth = {}\neval_every = {}\n\
             checked_input = {}\ngrid = {}\nseeds = {}\nscale = {}\ncheckpoint = {}\nvolume = {}\n",
            s.seed, s.out, s.volumes, s.depth, s.size, s.classes,
            s.ellipses_min, s.ellipses_max, s.drift, s.contrast, s.noise_std,
            s.blur_radius, s.spacing_z, s.spacing_y, s.spacing_x, s.data_seed,
            s.data_dir, s.split_train, s.split_val, s.split_test, s.split_seed,
            s.model, s.net_depth, s.base_channels, s.head_mode, s.sa_count,
            s.lg_enabled, s.lg_gate, s.loc_source, s.epochs, s.batch_size,
            s.patience, s.lr, s.beta1, s.beta2, s.adam_eps, s.weight_decay,
            s.alpha, s.beta, s.bce_weight, s.dice_smooth, s.eval_every,
            s.checked_input, s.grid, s.seeds, s.scale, s.checkpoint, s.volume,
        )
    }

    pub fn synth_spec(&self) -> SynthSpec {
        SynthSpec {
            volumes: self.volumes,
            depth: self.depth,
            height: self.size,
            width: self.size,
            classes: self.classes,
            ellipses: (self.ellipses_min, self.ellipses_max),
            drift: self.drift,
            contrast: self.contrast,
            noise_std: self.noise_std,
            blur_radius: self.blur_radius,
            spacing: [self.spacing_z, self.spacing_y, self.spacing_x],
            seed: self.data_seed,
        }
    }

    pub fn net_config(&self) -> Result<NetConfig, String> {
        let head_mode = match self.head_mode.as_str() {
            "central" => HeadMode::Central,
            "multi" => HeadMode::Multi,
            v => return Err(format!("head_mode must be central|multi, got `{v}`")),
        };
        let lg_gate = match self.lg_gate.as_str() {
            "softmax" => LgGate::Softmax,
            "sigmoid" => LgGate::Sigmoid,
            v => return Err(format!("lg_gate must be softmax|sigmoid, got `{v}`")),
        };
        let loc_source = match self.loc_source.as_str() {
            "features" => LocSource::Features,
            "probmap" => LocSource::ProbMap,
            v => return Err(format!("loc_source must be features|probmap, got `{v}`")),
        };
        let lg_enabled = match self.lg_enabled.as_str() {
            "on" => vec![true; self.net_depth],
            "off" => vec![false; self.net_depth],
            mask => mask
                .split(',')
                .map(|s| match s.trim() {
                    "1" => Ok(true),
                    "0" => Ok(false),
                    v => Err(format!("lg_enabled mask entries must be 0|1, got `{v}`")),
                })
                .collect::<Result<_, _>>()?,
        };
        Ok(NetConfig {
            depth: self.net_depth,
            base_channels: self.base_channels,
            num_classes: self.classes,
            input_size: self.size,
            head_mode,
            sa_count: self.sa_count,
            lg_enabled,
            lg_gate,
            loc_source,
        })
    }

    pub fn model(&self) -> Result<Model, String> {
        let kind = ModelKind::parse(&self.model)
            .ok_or_else(|| format!("unknown model `{}`", self.model))?;
        Ok(Model::new(kind, self.net_config()?))
    }

    pub fn train_config(&self) -> TrainConfig {
        TrainConfig {
            epochs: self.epochs,
            batch_size: self.batch_size,
            patience: self.patience,
            adam: AdamConfig {
                lr: self.lr as Elem,
                beta1: self.beta1 as Elem,
                beta2: self.beta2 as Elem,
                eps: self.adam_eps as Elem,
                weight_decay: self.weight_decay as Elem,
            },
            loss: LossWeights {
                alpha: self.alpha as Elem,
                beta: self.beta as Elem,
                bce_weight: self.bce_weight as Elem,
                dice_smooth: self.dice_smooth as Elem,
            },
            eval_every: self.eval_every,
            checked_input: self.checked_input,
        }
    }

    pub fn harness_config(&self) -> Result<HarnessConfig, String> {
        Ok(HarnessConfig {
            data: self.synth_spec(),
            net: self.net_config()?,
            train: self.train_config(),
            split_ratios: (self.split_train, self.split_val, self.split_test),
            split_seed: self.split_seed,
        })
    }

    pub fn seed_list(&self) -> Result<Vec<u64>, String> {
        self.seeds
            .split(',')
            .map(|s| {
                s.trim()
                    .parse::<u64>()
                    .map_err(|_| format!("bad seed `{s}` in seed list"))
            })
            .collect()
    }
}
