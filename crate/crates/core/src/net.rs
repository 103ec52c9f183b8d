//! The full two-stage siamese network.
//!
//! Each of the three slices runs a shared coarse UNet whose decoder levels
//! can carry siamese adjustment (SA) blocks. Multi-scale localization maps
//! are extracted from the coarse decoder and guide the shared fine UNet's
//! encoder through location guidance (LG) blocks; the fine decoder again
//! carries SA blocks. Slices share one parameter set per stage; the two
//! stages have separate parameters and interact only through the LG path.

use crate::blocks::{self, HeadMode, LgGate};
use crate::error::LgsaError;
use crate::graph::Var;
use crate::params::{Forward, ParamStore};
use crate::rng::SplitMix64;
use crate::tensor::Tensor;

/// Where the localization maps come from: coarse decoder features at the
/// matching scale, or the downsampled coarse probability map.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum LocSource {
    Features,
    ProbMap,
}

#[derive(Clone, Debug)]
pub struct NetConfig {
    /// Number of levels N; N-1 downsamplings per stage.
    pub depth: usize,
    pub base_channels: usize,
    pub num_classes: usize,
    /// Square input size; must be divisible by 2^(N-1).
    pub input_size: usize,
    pub head_mode: HeadMode,
    /// How many decoder positions carry SA blocks (0..=2*(N-1)), enabled
    /// deepest-first, alternating fine stage first.
    pub sa_count: usize,
    /// Per-level LG mask, length N (level 1 = full resolution).
    pub lg_enabled: Vec<bool>,
    pub lg_gate: LgGate,
    pub loc_source: LocSource,
}

impl Default for NetConfig {
    fn default() -> Self {
        NetConfig {
            depth: 5,
            base_channels: 16,
            num_classes: 1,
            input_size: 64,
            head_mode: HeadMode::Central,
            sa_count: 8,
            lg_enabled: vec![true; 5],
            lg_gate: LgGate::Softmax,
            loc_source: LocSource::Features,
        }
    }
}

impl NetConfig {
    pub fn validate(&self) -> Result<(), LgsaError> {
        let err = |m: String| Err(LgsaError::InvalidConfig(m));
        if self.depth < 2 {
            return err(format!("depth must be >= 2, got {}", self.depth));
        }
        let down = 1usize << (self.depth - 1);
        if self.input_size < down || self.input_size % down != 0 {
            return err(format!(
                "input size {} is not divisible by 2^(N-1) = {down}",
                self.input_size
            ));
        }
        if !self.input_size.is_power_of_two() {
            return err(format!("input size {} must be a power of two", self.input_size));
        }
        if self.base_channels == 0 || self.num_classes == 0 {
            return err("base_channels and num_classes must be positive".into());
        }
        if self.sa_count > 2 * (self.depth - 1) {
            return err(format!(
                "sa_count {} exceeds the {} decoder positions",
                self.sa_count,
                2 * (self.depth - 1)
            ));
        }
        if self.lg_enabled.len() != self.depth {
            return err(format!(
                "lg_enabled mask has {} entries for depth {}",
                self.lg_enabled.len(),
                self.depth
            ));
        }
        Ok(())
    }

    /// Channel width at level `h` (1-based): base * 2^(h-1).
    pub fn width(&self, level: usize) -> usize {
        self.base_channels << (level - 1)
    }

    /// Spatial size at level `h` (1-based).
    pub fn size_at(&self, level: usize) -> usize {
        self.input_size >> (level - 1)
    }

    /// SA enablement per stage, `[level 1..=N-1]` each. Positions are turned
    /// on deepest-first, fine stage before coarse at equal depth.
    pub fn sa_masks(&self) -> (Vec<bool>, Vec<bool>) {
        let n_dec = self.depth - 1;
        let mut coarse = vec![false; n_dec];
        let mut fine = vec![false; n_dec];
        let mut remaining = self.sa_count;
        for level in (1..=n_dec).rev() {
            for stage_fine in [true, false] {
                if remaining == 0 {
                    break;
                }
                if stage_fine {
                    fine[level - 1] = true;
                } else {
                    coarse[level - 1] = true;
                }
                remaining -= 1;
            }
        }
        (coarse, fine)
    }

    /// Channel count of the localization map at fine-encoder level `h`.
    pub fn loc_channels(&self, level: usize) -> usize {
        match self.loc_source {
            LocSource::Features => self.width(level),
            LocSource::ProbMap => self.num_classes,
        }
    }

    /// Human-readable key=value block stored in checkpoint headers.
    pub fn descriptor(&self) -> String {
        self.descriptor_with_arch("lgsa")
    }

    pub fn descriptor_with_arch(&self, arch: &str) -> String {
        let (sa_coarse, sa_fine) = self.sa_masks();
        let fmt_mask = |m: &[bool]| {
            m.iter()
                .map(|&b| if b { "1" } else { "0" })
                .collect::<Vec<_>>()
                .join(",")
        };
        format!(
            "arch={arch}\ndepth={}\nbase_channels={}\nnum_classes={}\ninput_size={}\ndownsamplings_per_stage={}\nhead_mode={}\nsa_count={}\nsa_coarse={}\nsa_fine={}\nlg_enabled={}\nlg_gate={}\nloc_source={}\n",
            self.depth,
            self.base_channels,
            self.num_classes,
            self.input_size,
            self.depth - 1,
            match self.head_mode {
                HeadMode::Central => "central",
                HeadMode::Multi => "multi",
            },
            self.sa_count,
            fmt_mask(&sa_coarse),
            fmt_mask(&sa_fine),
            fmt_mask(&self.lg_enabled),
            match self.lg_gate {
                LgGate::Softmax => "softmax",
                LgGate::Sigmoid => "sigmoid",
            },
            match self.loc_source {
                LocSource::Features => "features",
                LocSource::ProbMap => "probmap",
            },
        )
    }
}

impl NetConfig {
    /// Parses the key=value descriptor block written by
    /// [`NetConfig::descriptor_with_arch`]; returns (arch name, config).
    pub fn parse_descriptor(text: &str) -> Result<(String, NetConfig), LgsaError> {
        let mut arch = None;
        let mut cfg = NetConfig::default();
        let mut lg_mask: Option<Vec<bool>> = None;
        let bad = |k: &str, v: &str| {
            LgsaError::Format {
                what: "architecture descriptor".into(),
                detail: format!("bad value `{v}` for key `{k}`"),
            }
        };
        for line in text.lines() {
            let line = line.trim();
            if line.is_empty() {
                continue;
            }
            let Some((k, v)) = line.split_once('=') else {
                return Err(LgsaError::Format {
                    what: "architecture descriptor".into(),
                    detail: format!("expected key=value, got `{line}`"),
                });
            };
            match k {
                "arch" => arch = Some(v.to_string()),
                "depth" => cfg.depth = v.parse().map_err(|_| bad(k, v))?,
                "base_channels" => cfg.base_channels = v.parse().map_err(|_| bad(k, v))?,
                "num_classes" => cfg.num_classes = v.parse().map_err(|_| bad(k, v))?,
                "input_size" => cfg.input_size = v.parse().map_err(|_| bad(k, v))?,
                "sa_count" => cfg.sa_count = v.parse().map_err(|_| bad(k, v))?,
                "head_mode" => {
                    cfg.head_mode = match v {
                        "central" => HeadMode::Central,
                        "multi" => HeadMode::Multi,
                        _ => return Err(bad(k, v)),
                    }
                }
                "lg_gate" => {
                    cfg.lg_gate = match v {
                        "softmax" => LgGate::Softmax,
                        "sigmoid" => LgGate::Sigmoid,
                        _ => return Err(bad(k, v)),
                    }
                }
                "loc_source" => {
                    cfg.loc_source = match v {
                        "features" => LocSource::Features,
                        "probmap" => LocSource::ProbMap,
                        _ => return Err(bad(k, v)),
                    }
                }
                "lg_enabled" => {
                    lg_mask = Some(
                        v.split(',')
                            .map(|s| match s {
                                "1" => Ok(true),
                                "0" => Ok(false),
                                _ => Err(bad(k, v)),
                            })
                            .collect::<Result<_, _>>()?,
                    )
                }
                // Derived fields; ignored on parse.
                "downsamplings_per_stage" | "sa_coarse" | "sa_fine" => {}
                _ => {
                    return Err(LgsaError::Format {
                        what: "architecture descriptor".into(),
                        detail: format!("unknown key `{k}`"),
                    })
                }
            }
        }
        cfg.lg_enabled = lg_mask.unwrap_or_else(|| vec![true; cfg.depth]);
        let arch = arch.ok_or_else(|| LgsaError::Format {
            what: "architecture descriptor".into(),
            detail: "missing arch key".into(),
        })?;
        cfg.validate()?;
        Ok((arch, cfg))
    }
}

/// The six prediction maps plus per-slice multi-scale localization maps.
#[derive(Debug)]
pub struct StageOutputs {
    pub coarse_logits: [Var; 3],
    pub fine_logits: [Var; 3],
    /// `loc_maps[slice][level-1]`, spatial size input/2^(level-1).
    pub loc_maps: [Vec<Var>; 3],
}

// ---------------------------------------------------------------------------
// Parameter construction
// ---------------------------------------------------------------------------

/// Registers one UNet stage under `prefix` with input channel count `cin`.
pub(crate) fn init_unet_stage(
    store: &mut ParamStore,
    rng: &mut SplitMix64,
    cfg: &NetConfig,
    prefix: &str,
    cin: usize,
) {
    let n = cfg.depth;
    for h in 1..=n - 1 {
        let in_c = if h == 1 { cin } else { cfg.width(h - 1) };
        blocks::init_double_cbr(store, rng, &format!("{prefix}.enc.{h}"), in_c, cfg.width(h));
    }
    blocks::init_double_cbr(
        store,
        rng,
        &format!("{prefix}.enc.{n}"),
        cfg.width(n - 1),
        cfg.width(n),
    );
    for h in (1..=n - 1).rev() {
        // Upsampled deeper feature concatenated with the skip.
        let in_c = cfg.width(h + 1) + cfg.width(h);
        blocks::init_double_cbr(store, rng, &format!("{prefix}.dec.{h}"), in_c, cfg.width(h));
    }
    blocks::init_head(
        store,
        rng,
        &format!("{prefix}.head"),
        cfg.width(1),
        cfg.num_classes,
    );
}

fn init_sa_positions(
    store: &mut ParamStore,
    rng: &mut SplitMix64,
    cfg: &NetConfig,
    stage: &str,
    mask: &[bool],
) {
    for (i, &on) in mask.iter().enumerate() {
        let level = i + 1;
        if on {
            blocks::init_sa(store, rng, &format!("sa.{stage}.{level}"), cfg.width(level));
        }
    }
}

/// Builds the full parameter set: one shared set per stage for all three
/// slice branches, He-normal conv weights, zero biases, unit batch-norm.
/// Deterministic in `seed`.
pub fn build(cfg: &NetConfig, seed: u64) -> Result<(ParamStore, String), LgsaError> {
    cfg.validate()?;
    let mut rng = SplitMix64::derive(seed, 0x1057);
    let mut store = ParamStore::new();
    init_unet_stage(&mut store, &mut rng, cfg, "coarse", 1);
    init_unet_stage(&mut store, &mut rng, cfg, "fine", 1);
    for h in 1..=cfg.depth {
        if cfg.lg_enabled[h - 1] {
            blocks::init_lg(&mut store, &mut rng, &format!("lg.{h}"), cfg.loc_channels(h));
        }
    }
    let (sa_coarse, sa_fine) = cfg.sa_masks();
    init_sa_positions(&mut store, &mut rng, cfg, "coarse", &sa_coarse);
    init_sa_positions(&mut store, &mut rng, cfg, "fine", &sa_fine);
    Ok((store, cfg.descriptor()))
}

// ---------------------------------------------------------------------------
// Forward pass
// ---------------------------------------------------------------------------

/// Encoder sweep of one UNet stage for one slice. Returns per-level features:
/// `skips[h-1]` for h in 1..=N-1 plus the bottleneck output.
pub(crate) fn unet_encoder(
    fw: &mut Forward,
    cfg: &NetConfig,
    prefix: &str,
    x: Var,
    mut tap: impl FnMut(&mut Forward, usize, Var) -> Var,
) -> (Vec<Var>, Var) {
    let n = cfg.depth;
    let mut skips = Vec::with_capacity(n - 1);
    let mut cur = x;
    for h in 1..=n - 1 {
        let feat = blocks::double_cbr(fw, cur, &format!("{prefix}.enc.{h}"));
        let feat = tap(fw, h, feat);
        skips.push(feat);
        cur = fw.graph.max_pool2(feat);
    }
    let bottleneck = blocks::double_cbr(fw, cur, &format!("{prefix}.enc.{n}"));
    let bottleneck = tap(fw, n, bottleneck);
    (skips, bottleneck)
}

/// Synchronous decoder sweep across slice branches with optional SA blocks
/// after each decoder level. Returns per-level decoder features (post-SA)
/// and the final full-resolution features.
pub(crate) fn unet_decoder_multi(
    fw: &mut Forward,
    cfg: &NetConfig,
    prefix: &str,
    sa_stage: &str,
    sa_mask: &[bool],
    skips: &[Vec<Var>],
    bottlenecks: &[Var],
) -> (Vec<Vec<Var>>, Vec<Var>) {
    let n = cfg.depth;
    let slices = bottlenecks.len();
    let mut current: Vec<Var> = bottlenecks.to_vec();
    // dec_feats[slice][level-1]
    let mut dec_feats: Vec<Vec<Var>> = vec![vec![bottlenecks[0]; n - 1]; slices];
    for h in (1..=n - 1).rev() {
        for (s, cur) in current.iter_mut().enumerate() {
            *cur = blocks::decoder_level(fw, *cur, skips[s][h - 1], &format!("{prefix}.dec.{h}"));
        }
        if sa_mask[h - 1] && slices == 3 {
            let sa = blocks::sa_block(
                fw,
                [current[0], current[1], current[2]],
                &format!("sa.{sa_stage}.{h}"),
                cfg.head_mode,
            );
            current = sa.out.to_vec();
        }
        for (s, &cur) in current.iter().enumerate() {
            dec_feats[s][h - 1] = cur;
        }
    }
    (dec_feats, current)
}

/// Validates that inputs are normalized to [0, 1].
pub fn check_normalized(slices: &[&Tensor]) -> Result<(), LgsaError> {
    for (i, t) in slices.iter().enumerate() {
        for &v in t.data() {
            if !(-1e-6..=1.0 + 1e-6).contains(&(v as f64)) {
                return Err(LgsaError::InvalidInput(format!(
                    "slice {i} contains value {v} outside [0, 1]; normalize inputs first"
                )));
            }
        }
    }
    Ok(())
}

/// Full two-stage forward for a batch of slice triplets.
///
/// `xs[i]` is slice i of the batch, `[B, 1, H, W]`, already normalized.
/// With `checked`, values outside [0, 1] (beyond 1e-6) are rejected.
pub fn forward(
    fw: &mut Forward,
    cfg: &NetConfig,
    xs: [Tensor; 3],
    checked: bool,
) -> Result<StageOutputs, LgsaError> {
    if checked {
        check_normalized(&[&xs[0], &xs[1], &xs[2]])?;
    }
    for t in &xs {
        let (_, c, h, w) = t.dims4();
        if c != 1 || h != cfg.input_size || w != cfg.input_size {
            return Err(LgsaError::InvalidInput(format!(
                "expected [B,1,{0},{0}] slices, got {1:?}",
                cfg.input_size,
                t.shape()
            )));
        }
    }
    let x_vars: [Var; 3] = xs.map(|t| fw.input(t));
    Ok(forward_from_vars(fw, cfg, x_vars))
}

/// Two-stage forward over already-registered input nodes; lets callers make
/// the inputs gradient-tracked leaves.
pub fn forward_from_vars(fw: &mut Forward, cfg: &NetConfig, x_vars: [Var; 3]) -> StageOutputs {
    let (sa_coarse, sa_fine) = cfg.sa_masks();

    // Coarse stage: shared encoder/decoder over all three slices.
    let mut coarse_skips = Vec::with_capacity(3);
    let mut coarse_bottlenecks = Vec::with_capacity(3);
    for &x in &x_vars {
        let (skips, bott) = unet_encoder(fw, cfg, "coarse", x, |_, _, v| v);
        coarse_skips.push(skips);
        coarse_bottlenecks.push(bott);
    }
    let (coarse_dec, coarse_final) = unet_decoder_multi(
        fw,
        cfg,
        "coarse",
        "coarse",
        &sa_coarse,
        &coarse_skips,
        &coarse_bottlenecks,
    );
    let coarse_logits: Vec<Var> = coarse_final
        .iter()
        .map(|&f| blocks::head(fw, f, "coarse.head"))
        .collect();

    // Localization maps per slice and fine-encoder level.
    let loc_maps: Vec<Vec<Var>> = (0..3)
        .map(|s| {
            localization_maps(
                fw,
                cfg,
                &coarse_dec[s],
                coarse_bottlenecks[s],
                coarse_logits[s],
            )
        })
        .collect();

    // Fine stage: encoder with LG at each level, then decoder with SA.
    let mut fine_skips = Vec::with_capacity(3);
    let mut fine_bottlenecks = Vec::with_capacity(3);
    for (s, &x) in x_vars.iter().enumerate() {
        let loc = &loc_maps[s];
        let (skips, bott) = unet_encoder(fw, cfg, "fine", x, |fw, level, feat| {
            if cfg.lg_enabled[level - 1] {
                blocks::lg_block(fw, feat, loc[level - 1], &format!("lg.{level}"), cfg.lg_gate).out
            } else {
                feat
            }
        });
        fine_skips.push(skips);
        fine_bottlenecks.push(bott);
    }
    let (_, fine_final) = unet_decoder_multi(
        fw,
        cfg,
        "fine",
        "fine",
        &sa_fine,
        &fine_skips,
        &fine_bottlenecks,
    );
    let fine_logits: Vec<Var> = fine_final
        .iter()
        .map(|&f| blocks::head(fw, f, "fine.head"))
        .collect();

    StageOutputs {
        coarse_logits: [coarse_logits[0], coarse_logits[1], coarse_logits[2]],
        fine_logits: [fine_logits[0], fine_logits[1], fine_logits[2]],
        loc_maps: [
            loc_maps[0].clone(),
            loc_maps[1].clone(),
            loc_maps[2].clone(),
        ],
    }
}

/// Localization maps for one slice: the coarse decoder feature at the scale
/// matching each fine-encoder level; the coarse bottleneck serves the
/// deepest level. With `LocSource::ProbMap`, the coarse probability map is
/// average-pooled down the scale ladder instead. Gradients flow into the
/// coarse stage either way.
pub fn localization_maps(
    fw: &mut Forward,
    cfg: &NetConfig,
    coarse_dec: &[Var],
    coarse_bottleneck: Var,
    coarse_logit: Var,
) -> Vec<Var> {
    let n = cfg.depth;
    match cfg.loc_source {
        LocSource::Features => {
            let mut maps: Vec<Var> = coarse_dec.to_vec();
            maps.push(coarse_bottleneck);
            debug_assert_eq!(maps.len(), n);
            maps
        }
        LocSource::ProbMap => {
            let prob = fw.graph.sigmoid(coarse_logit);
            let mut maps = Vec::with_capacity(n);
            let mut cur = prob;
            maps.push(cur);
            for _ in 2..=n {
                cur = fw.graph.avg_pool2(cur);
                maps.push(cur);
            }
            maps
        }
    }
}

/// The network's final prediction: the fine-stage center-slice output after
/// the sigmoid. Adjacent fine outputs remain available in [`StageOutputs`]
/// for head/tail-slice prediction.
pub fn select_output(fw: &mut Forward, out: &StageOutputs) -> Var {
    fw.graph.sigmoid(out.fine_logits[1])
}
