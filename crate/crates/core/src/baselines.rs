//! Structural model variants for the ablation harness.
//!
//! Besides the full two-stage siamese network, the harness trains:
//!
//! - `UnetSingle`   – plain one-slice, one-stage UNet (the baseline row);
//! - `LgUnet`       – one slice, two stages linked by location guidance;
//! - `SaUnet`       – three siamese slices, one stage with SA blocks;
//! - `StackedUnet`  – the three slices stacked as input channels of one UNet;
//! - `MultiEncoder` – three independent encoders with one fusion decoder;
//! - `ConcatTwoStage` – two stages where the fine stage consumes the slice
//!   concatenated with the coarse probability map (plain cascade).
//!
//! All variants reuse the same blocks; single-stage variants use the `net.`
//! parameter prefix.

use crate::blocks;
use crate::error::LgsaError;
use crate::graph::Var;
use crate::net::{self, NetConfig};
use crate::params::{Forward, ParamStore};
use crate::rng::SplitMix64;
use crate::tensor::Tensor;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ModelKind {
    Lgsa,
    UnetSingle,
    LgUnet,
    SaUnet,
    StackedUnet,
    MultiEncoder,
    ConcatTwoStage,
}

impl ModelKind {
    pub fn name(&self) -> &'static str {
        match self {
            ModelKind::Lgsa => "lgsa",
            ModelKind::UnetSingle => "unet",
            ModelKind::LgUnet => "lg-unet",
            ModelKind::SaUnet => "sa-unet",
            ModelKind::StackedUnet => "stacked3-unet",
            ModelKind::MultiEncoder => "multi-encoder",
            ModelKind::ConcatTwoStage => "concat-two-stage",
        }
    }

    pub fn parse(s: &str) -> Option<ModelKind> {
        Some(match s {
            "lgsa" => ModelKind::Lgsa,
            "unet" => ModelKind::UnetSingle,
            "lg-unet" => ModelKind::LgUnet,
            "sa-unet" => ModelKind::SaUnet,
            "stacked3-unet" => ModelKind::StackedUnet,
            "multi-encoder" => ModelKind::MultiEncoder,
            "concat-two-stage" => ModelKind::ConcatTwoStage,
            _ => return None,
        })
    }
}

/// A model architecture: a structural kind plus its configuration.
#[derive(Clone, Debug)]
pub struct Model {
    pub kind: ModelKind,
    pub cfg: NetConfig,
}

/// Logits produced by one forward pass; single-stage variants leave
/// `coarse_logits` empty and single-slice variants have one fine output.
pub struct ModelOutputs {
    pub coarse_logits: Vec<Var>,
    pub fine_logits: Vec<Var>,
    /// Index of the center-slice output within `fine_logits`.
    pub center: usize,
}

impl Model {
    pub fn new(kind: ModelKind, cfg: NetConfig) -> Self {
        Model { kind, cfg }
    }

    pub fn descriptor(&self) -> String {
        self.cfg.descriptor_with_arch(self.kind.name())
    }

    /// Reconstructs the model from a checkpoint's architecture descriptor.
    pub fn from_descriptor(text: &str) -> Result<Model, LgsaError> {
        let (arch, cfg) = NetConfig::parse_descriptor(text)?;
        let kind = ModelKind::parse(&arch).ok_or_else(|| LgsaError::Format {
            what: "architecture descriptor".into(),
            detail: format!("unknown arch `{arch}`"),
        })?;
        Ok(Model::new(kind, cfg))
    }

    /// SA mask for single-stage variants: `sa_count` deepest decoder levels.
    fn single_stage_sa_mask(&self) -> Vec<bool> {
        let n_dec = self.cfg.depth - 1;
        let k = self.cfg.sa_count.min(n_dec);
        (1..=n_dec).map(|level| level > n_dec - k).collect()
    }

    pub fn build(&self, seed: u64) -> Result<(ParamStore, String), LgsaError> {
        self.cfg.validate()?;
        let cfg = &self.cfg;
        if self.kind == ModelKind::Lgsa {
            return net::build(cfg, seed);
        }
        let mut rng = SplitMix64::derive(seed, 0x1057);
        let mut store = ParamStore::new();
        match self.kind {
            ModelKind::Lgsa => unreachable!(),
            ModelKind::UnetSingle => {
                net::init_unet_stage(&mut store, &mut rng, cfg, "net", 1);
            }
            ModelKind::LgUnet => {
                net::init_unet_stage(&mut store, &mut rng, cfg, "coarse", 1);
                net::init_unet_stage(&mut store, &mut rng, cfg, "fine", 1);
                for h in 1..=cfg.depth {
                    if cfg.lg_enabled[h - 1] {
                        blocks::init_lg(&mut store, &mut rng, &format!("lg.{h}"), cfg.loc_channels(h));
                    }
                }
            }
            ModelKind::SaUnet => {
                net::init_unet_stage(&mut store, &mut rng, cfg, "net", 1);
                for (i, &on) in self.single_stage_sa_mask().iter().enumerate() {
                    if on {
                        let level = i + 1;
                        blocks::init_sa(&mut store, &mut rng, &format!("sa.net.{level}"), cfg.width(level));
                    }
                }
            }
            ModelKind::StackedUnet => {
                net::init_unet_stage(&mut store, &mut rng, cfg, "net", 3);
            }
            ModelKind::MultiEncoder => {
                let n = cfg.depth;
                for s in 1..=3 {
                    for h in 1..=n - 1 {
                        let in_c = if h == 1 { 1 } else { cfg.width(h - 1) };
                        blocks::init_double_cbr(
                            &mut store,
                            &mut rng,
                            &format!("menc{s}.enc.{h}"),
                            in_c,
                            cfg.width(h),
                        );
                    }
                    blocks::init_double_cbr(
                        &mut store,
                        &mut rng,
                        &format!("menc{s}.enc.{n}"),
                        cfg.width(n - 1),
                        cfg.width(n),
                    );
                }
                // Fuse the three bottlenecks, then decode over concatenated skips.
                blocks::init_double_cbr(
                    &mut store,
                    &mut rng,
                    "fusion.bottleneck",
                    3 * cfg.width(n),
                    cfg.width(n),
                );
                for h in (1..=n - 1).rev() {
                    let in_c = cfg.width(h + 1) + 3 * cfg.width(h);
                    blocks::init_double_cbr(&mut store, &mut rng, &format!("dec.{h}"), in_c, cfg.width(h));
                }
                blocks::init_head(&mut store, &mut rng, "head", cfg.width(1), cfg.num_classes);
            }
            ModelKind::ConcatTwoStage => {
                net::init_unet_stage(&mut store, &mut rng, cfg, "coarse", 1);
                net::init_unet_stage(&mut store, &mut rng, cfg, "fine", 1 + cfg.num_classes);
            }
        }
        Ok((store, self.descriptor()))
    }

    /// Forward over a batch of slice triplets (`xs[i]` is `[B,1,H,W]`).
    pub fn forward(
        &self,
        fw: &mut Forward,
        xs: [Tensor; 3],
        checked: bool,
    ) -> Result<ModelOutputs, LgsaError> {
        let cfg = &self.cfg;
        if checked {
            net::check_normalized(&[&xs[0], &xs[1], &xs[2]])?;
        }
        match self.kind {
            ModelKind::Lgsa => {
                let outs = net::forward(fw, cfg, xs, false)?;
                Ok(ModelOutputs {
                    coarse_logits: outs.coarse_logits.to_vec(),
                    fine_logits: outs.fine_logits.to_vec(),
                    center: 1,
                })
            }
            ModelKind::UnetSingle => {
                let [_, center, _] = xs;
                let x = fw.input(center);
                let logit = plain_unet(fw, cfg, "net", x);
                Ok(ModelOutputs {
                    coarse_logits: vec![],
                    fine_logits: vec![logit],
                    center: 0,
                })
            }
            ModelKind::LgUnet => {
                let [_, center, _] = xs;
                let x = fw.input(center);
                let no_sa = vec![false; cfg.depth - 1];
                let (skips, bott) = net::unet_encoder(fw, cfg, "coarse", x, |_, _, v| v);
                let (dec_feats, finals) =
                    net::unet_decoder_multi(fw, cfg, "coarse", "coarse", &no_sa, &[skips], &[bott]);
                let coarse_logit = blocks::head(fw, finals[0], "coarse.head");
                let loc = net::localization_maps(fw, cfg, &dec_feats[0], bott, coarse_logit);
                let (fskips, fbott) = net::unet_encoder(fw, cfg, "fine", x, |fw, level, feat| {
                    if cfg.lg_enabled[level - 1] {
                        blocks::lg_block(fw, feat, loc[level - 1], &format!("lg.{level}"), cfg.lg_gate)
                            .out
                    } else {
                        feat
                    }
                });
                let (_, ffinals) =
                    net::unet_decoder_multi(fw, cfg, "fine", "fine", &no_sa, &[fskips], &[fbott]);
                let fine_logit = blocks::head(fw, ffinals[0], "fine.head");
                Ok(ModelOutputs {
                    coarse_logits: vec![coarse_logit],
                    fine_logits: vec![fine_logit],
                    center: 0,
                })
            }
            ModelKind::SaUnet => {
                let sa_mask = self.single_stage_sa_mask();
                let x_vars: Vec<Var> = xs.into_iter().map(|t| fw.input(t)).collect();
                let mut skips = Vec::new();
                let mut botts = Vec::new();
                for &x in &x_vars {
                    let (s, b) = net::unet_encoder(fw, cfg, "net", x, |_, _, v| v);
                    skips.push(s);
                    botts.push(b);
                }
                let (_, finals) =
                    net::unet_decoder_multi(fw, cfg, "net", "net", &sa_mask, &skips, &botts);
                let logits: Vec<Var> = finals
                    .iter()
                    .map(|&f| blocks::head(fw, f, "net.head"))
                    .collect();
                Ok(ModelOutputs {
                    coarse_logits: vec![],
                    fine_logits: logits,
                    center: 1,
                })
            }
            ModelKind::StackedUnet => {
                let vars: Vec<Var> = xs.into_iter().map(|t| fw.input(t)).collect();
                let stacked = fw.graph.concat_channels(&vars);
                let logit = plain_unet(fw, cfg, "net", stacked);
                Ok(ModelOutputs {
                    coarse_logits: vec![],
                    fine_logits: vec![logit],
                    center: 0,
                })
            }
            ModelKind::MultiEncoder => {
                let n = cfg.depth;
                let x_vars: Vec<Var> = xs.into_iter().map(|t| fw.input(t)).collect();
                let mut skips = Vec::new();
                let mut botts = Vec::new();
                for (s, &x) in x_vars.iter().enumerate() {
                    let (sk, b) = net::unet_encoder(fw, cfg, &format!("menc{}", s + 1), x, |_, _, v| v);
                    skips.push(sk);
                    botts.push(b);
                }
                let cat_bott = fw.graph.concat_channels(&botts);
                let mut cur = blocks::double_cbr(fw, cat_bott, "fusion.bottleneck");
                for h in (1..=n - 1).rev() {
                    let up = fw.graph.upsample_bilinear2(cur);
                    let skip_cat = fw.graph.concat_channels(&[
                        skips[0][h - 1],
                        skips[1][h - 1],
                        skips[2][h - 1],
                    ]);
                    let cat = fw.graph.concat_channels(&[up, skip_cat]);
                    cur = blocks::double_cbr(fw, cat, &format!("dec.{h}"));
                }
                let logit = blocks::head(fw, cur, "head");
                Ok(ModelOutputs {
                    coarse_logits: vec![],
                    fine_logits: vec![logit],
                    center: 0,
                })
            }
            ModelKind::ConcatTwoStage => {
                let [_, center, _] = xs;
                let x = fw.input(center);
                let coarse_logit = plain_unet(fw, cfg, "coarse", x);
                let prob = fw.graph.sigmoid(coarse_logit);
                let cat = fw.graph.concat_channels(&[x, prob]);
                let fine_logit = plain_unet(fw, cfg, "fine", cat);
                Ok(ModelOutputs {
                    coarse_logits: vec![coarse_logit],
                    fine_logits: vec![fine_logit],
                    center: 0,
                })
            }
        }
    }
}

/// One plain UNet sweep (no SA, no LG) under `prefix`.
pub fn plain_unet(fw: &mut Forward, cfg: &NetConfig, prefix: &str, x: Var) -> Var {
    let no_sa = vec![false; cfg.depth - 1];
    let (skips, bott) = net::unet_encoder(fw, cfg, prefix, x, |_, _, v| v);
    let (_, finals) = net::unet_decoder_multi(fw, cfg, prefix, prefix, &no_sa, &[skips], &[bott]);
    blocks::head(fw, finals[0], &format!("{prefix}.head"))
}
