//! Deterministic training loop with early stopping, plus the evaluation
//! protocol (headline metric: fine-stage center-slice DSC; head/tail slices
//! never enter aggregation because triplet centers are interior by
//! construction).

use std::time::Instant;

use crate::baselines::{Model, ModelOutputs};
use crate::data::SliceTriplet;
use crate::error::LgsaError;
use crate::graph::Var;
use crate::loss::{slice_loss, stage_loss_weighted, weighted_sum, LossWeights};
use crate::metrics::{self, Mask, MetricsRecord};
use crate::optim::{AdamConfig, AdamState};
use crate::params::{Forward, Mode, ParamStore};
use crate::rng::{fnv1a64, SplitMix64};
use crate::tensor::Tensor;
use crate::Elem;

#[derive(Clone, Debug)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    /// Early stop after this many epochs without val-DSC improvement.
    pub patience: usize,
    pub adam: AdamConfig,
    pub loss: LossWeights,
    /// Validate every n epochs.
    pub eval_every: usize,
    /// Reject unnormalized inputs inside the forward pass.
    pub checked_input: bool,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            epochs: 30,
            batch_size: 8,
            patience: 5,
            adam: AdamConfig::default(),
            loss: LossWeights::default(),
            eval_every: 1,
            checked_input: false,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<(), LgsaError> {
        if self.patience >= self.epochs {
            return Err(LgsaError::InvalidConfig(format!(
                "patience {} must be < epochs {}",
                self.patience, self.epochs
            )));
        }
        if self.batch_size < 2 {
            return Err(LgsaError::InvalidConfig(format!(
                "batch size must be >= 2 (batch norm), got {}",
                self.batch_size
            )));
        }
        if self.eval_every == 0 {
            return Err(LgsaError::InvalidConfig("eval_every must be >= 1".into()));
        }
        self.loss
            .validate()
            .map_err(LgsaError::InvalidConfig)
    }

    pub fn descriptor(&self) -> String {
        format!(
            "epochs={}\nbatch_size={}\npatience={}\nlr={}\nbeta1={}\nbeta2={}\neps={}\nweight_decay={}\nalpha={}\nbeta={}\nbce_weight={}\ndice_smooth={}\neval_every={}\n",
            self.epochs,
            self.batch_size,
            self.patience,
            self.adam.lr,
            self.adam.beta1,
            self.adam.beta2,
            self.adam.eps,
            self.adam.weight_decay,
            self.loss.alpha,
            self.loss.beta,
            self.loss.bce_weight,
            self.loss.dice_smooth,
            self.eval_every,
        )
    }
}

#[derive(Clone, Debug)]
pub struct Datasets {
    pub train: Vec<SliceTriplet>,
    pub val: Vec<SliceTriplet>,
    pub test: Vec<SliceTriplet>,
}

#[derive(Clone, Copy, Debug)]
pub struct EpochStats {
    pub epoch: usize,
    pub train_loss: f64,
    pub val_dsc: f64,
}

#[derive(Clone, Debug)]
pub struct RunRecord {
    pub config_hash: u64,
    pub model_name: String,
    pub seed: u64,
    pub epochs: Vec<EpochStats>,
    pub best_epoch: usize,
    pub best_val_dsc: f64,
    pub wall_time_s: f64,
}

/// Strict-improvement early stopping.
pub struct EarlyStopper {
    patience: usize,
    pub best: f64,
    pub best_epoch: usize,
    bad_epochs: usize,
}

impl EarlyStopper {
    pub fn new(patience: usize) -> Self {
        EarlyStopper {
            patience,
            best: f64::NEG_INFINITY,
            best_epoch: 0,
            bad_epochs: 0,
        }
    }

    /// Feeds one validation score; returns true when training should stop
    /// (exactly `patience` consecutive non-improving epochs).
    pub fn observe(&mut self, epoch: usize, score: f64) -> bool {
        if score > self.best {
            self.best = score;
            self.best_epoch = epoch;
            self.bad_epochs = 0;
            false
        } else {
            self.bad_epochs += 1;
            self.bad_epochs >= self.patience
        }
    }

    pub fn improved(&self, epoch: usize) -> bool {
        self.best_epoch == epoch
    }
}

/// Stacks triplets into per-slice batch tensors:
/// `xs[i]: [B,1,H,W]`, `gts[i]: [B,C,H,W]` one-hot.
pub fn batch_tensors(batch: &[&SliceTriplet]) -> ([Tensor; 3], [Tensor; 3]) {
    assert!(!batch.is_empty());
    let b = batch.len();
    let (h, w, c) = (batch[0].height, batch[0].width, batch[0].num_classes);
    let plane = h * w;
    let xs = std::array::from_fn(|i| {
        let mut data = vec![0.0 as Elem; b * plane];
        for (bi, t) in batch.iter().enumerate() {
            data[bi * plane..][..plane].copy_from_slice(&t.x[i]);
        }
        Tensor::new(vec![b, 1, h, w], data)
    });
    let gts = std::array::from_fn(|i| {
        let mut data = vec![0.0 as Elem; b * c * plane];
        for (bi, t) in batch.iter().enumerate() {
            let oh = t.one_hot(i);
            data[bi * c * plane..][..c * plane].copy_from_slice(oh.data());
        }
        Tensor::new(vec![b, c, h, w], data)
    });
    (xs, gts)
}

/// Builds the supervision for whatever outputs the model produced:
/// triple outputs get the `(alpha, 1-2*alpha, alpha)` siamese weighting,
/// single outputs get a plain slice loss on the center ground truth; a
/// coarse stage joins via `beta`.
pub fn model_loss(
    g: &mut crate::graph::Graph,
    outs: &ModelOutputs,
    gts: &[Tensor; 3],
    w: &LossWeights,
) -> Var {
    let fine = match outs.fine_logits.len() {
        3 => {
            let logits = [outs.fine_logits[0], outs.fine_logits[1], outs.fine_logits[2]];
            stage_loss_weighted(g, &logits, gts, w.slice_weights(), w).0
        }
        1 => slice_loss(g, outs.fine_logits[0], &gts[1], w),
        n => panic!("model produced {n} fine outputs"),
    };
    match outs.coarse_logits.len() {
        0 => fine,
        3 => {
            let logits = [
                outs.coarse_logits[0],
                outs.coarse_logits[1],
                outs.coarse_logits[2],
            ];
            let coarse = stage_loss_weighted(g, &logits, gts, w.slice_weights(), w).0;
            weighted_sum(g, &[coarse, fine], &[w.beta, 1.0 - w.beta])
        }
        1 => {
            let coarse = slice_loss(g, outs.coarse_logits[0], &gts[1], w);
            weighted_sum(g, &[coarse, fine], &[w.beta, 1.0 - w.beta])
        }
        n => panic!("model produced {n} coarse outputs"),
    }
}

/// Canonical text identifying a run; its FNV hash is the run id.
pub fn run_config_text(model: &Model, cfg: &TrainConfig, data_desc: &str, seed: u64) -> String {
    format!(
        "{}{}data:\n{}seed={seed}\n",
        model.descriptor(),
        cfg.descriptor(),
        data_desc
    )
}

pub fn config_hash(text: &str) -> u64 {
    fnv1a64(text.as_bytes())
}

/// Trains a model; returns the best-validation parameter snapshot and the
/// run record. Fully deterministic given the seed.
pub fn train(
    model: &Model,
    data: &Datasets,
    cfg: &TrainConfig,
    seed: u64,
    data_desc: &str,
) -> Result<(ParamStore, RunRecord), LgsaError> {
    cfg.validate()?;
    if data.train.is_empty() {
        return Err(LgsaError::InvalidConfig("empty training set".into()));
    }
    let start = Instant::now();
    let (mut params, _desc) = model.build(seed)?;
    let mut adam = AdamState::new(cfg.adam);
    let mut stopper = EarlyStopper::new(cfg.patience);
    let mut best_params = params.clone();
    let mut stats = Vec::new();
    let mut step = 0usize;

    for epoch in 0..cfg.epochs {
        let mut order: Vec<usize> = (0..data.train.len()).collect();
        SplitMix64::derive(seed, 0xE90C + epoch as u64).shuffle(&mut order);
        let mut loss_sum = 0.0;
        let mut batches = 0usize;
        for chunk in order.chunks(cfg.batch_size) {
            let batch: Vec<&SliceTriplet> = chunk.iter().map(|&i| &data.train[i]).collect();
            let (xs, gts) = batch_tensors(&batch);
            let mut fw = Forward::new(&mut params, Mode::Train);
            let outs = model.forward(&mut fw, xs, cfg.checked_input)?;
            let loss = model_loss(&mut fw.graph, &outs, &gts, &cfg.loss);
            let loss_val = fw.graph.value(loss).item() as f64;
            if !loss_val.is_finite() {
                return Err(LgsaError::NonFiniteLoss { step, epoch });
            }
            fw.backward(loss);
            drop(fw);
            adam.step(&mut params);
            loss_sum += loss_val;
            batches += 1;
            step += 1;
        }
        let train_loss = loss_sum / batches as f64;

        if (epoch + 1) % cfg.eval_every == 0 {
            let val_dsc = eval_center_dsc(model, &mut params, &data.val, cfg.batch_size)?;
            stats.push(EpochStats {
                epoch,
                train_loss,
                val_dsc,
            });
            let stop = stopper.observe(epoch, val_dsc);
            if stopper.improved(epoch) {
                best_params = params.clone();
            }
            if stop {
                break;
            }
        } else {
            stats.push(EpochStats {
                epoch,
                train_loss,
                val_dsc: f64::NAN,
            });
        }
    }

    let record = RunRecord {
        config_hash: config_hash(&run_config_text(model, cfg, data_desc, seed)),
        model_name: model.kind.name().to_string(),
        seed,
        epochs: stats,
        best_epoch: stopper.best_epoch,
        best_val_dsc: stopper.best,
        wall_time_s: start.elapsed().as_secs_f64(),
    };
    Ok((best_params, record))
}

/// Mean center-slice DSC of the model's final stage over a triplet set.
pub fn eval_center_dsc(
    model: &Model,
    params: &mut ParamStore,
    triplets: &[SliceTriplet],
    batch_size: usize,
) -> Result<f64, LgsaError> {
    if triplets.is_empty() {
        return Ok(f64::NAN);
    }
    let mut scores = Vec::new();
    let idx: Vec<usize> = (0..triplets.len()).collect();
    for chunk in idx.chunks(batch_size) {
        let batch: Vec<&SliceTriplet> = chunk.iter().map(|&i| &triplets[i]).collect();
        let (xs, gts) = batch_tensors(&batch);
        let mut fw = Forward::new(params, Mode::Eval);
        let outs = model.forward(&mut fw, xs, false)?;
        let probs = fw.graph.sigmoid(outs.fine_logits[outs.center]);
        let pt = fw.graph.value(probs);
        let (b, c, h, w) = pt.dims4();
        let plane = h * w;
        for bi in 0..b {
            for ci in 0..c {
                let start = (bi * c + ci) * plane;
                let pm = Mask::from_probs(
                    h,
                    w,
                    &pt.data()[start..][..plane]
                        .iter()
                        .map(|&v| v as f64)
                        .collect::<Vec<_>>(),
                );
                let gm = Mask::new(
                    h,
                    w,
                    gts[1].data()[start..][..plane].iter().map(|&v| v > 0.5).collect(),
                );
                scores.push(metrics::dsc(&pm, &gm));
            }
        }
    }
    Ok(metrics::mean(&scores))
}

/// Per-output evaluation table: metric records for every output the model
/// produces (coarse/fine x slice), keyed like `fine.2` (1-based slice).
pub struct EvalReport {
    /// Headline records: final-stage center slice, one per (triplet, class).
    pub headline: Vec<MetricsRecord>,
    /// All records keyed by output name.
    pub by_output: Vec<(String, MetricsRecord)>,
}

impl EvalReport {
    /// Mean headline DSC / HD95 / F1.
    pub fn summary(&self) -> (f64, f64, f64) {
        let d: Vec<f64> = self.headline.iter().map(|r| r.dsc).collect();
        let h: Vec<f64> = self.headline.iter().map(|r| r.hd95).collect();
        let f: Vec<f64> = self.headline.iter().map(|r| r.f1).collect();
        (metrics::mean(&d), metrics::mean(&h), metrics::mean(&f))
    }

    /// Mean DSC per output key, e.g. ("fine.2", 0.93).
    pub fn output_means(&self) -> Vec<(String, f64)> {
        let mut keys: Vec<String> = self
            .by_output
            .iter()
            .map(|(k, _)| k.clone())
            .collect::<std::collections::BTreeSet<_>>()
            .into_iter()
            .collect();
        keys.sort();
        keys.into_iter()
            .map(|k| {
                let vals: Vec<f64> = self
                    .by_output
                    .iter()
                    .filter(|(key, _)| *key == k)
                    .map(|(_, r)| r.dsc)
                    .collect();
                (k, metrics::mean(&vals))
            })
            .collect()
    }
}

/// Evaluates every model output on a test set. The headline is the final
/// stage's center-slice output; adjacent-slice and coarse-stage outputs are
/// reported alongside for the output-comparison table.
pub fn evaluate(
    model: &Model,
    params: &mut ParamStore,
    triplets: &[SliceTriplet],
    batch_size: usize,
    seed: u64,
) -> Result<EvalReport, LgsaError> {
    let mut headline = Vec::new();
    let mut by_output = Vec::new();
    let idx: Vec<usize> = (0..triplets.len()).collect();
    for chunk in idx.chunks(batch_size.max(1)) {
        let batch: Vec<&SliceTriplet> = chunk.iter().map(|&i| &triplets[i]).collect();
        let (xs, _) = batch_tensors(&batch);
        let mut fw = Forward::new(params, Mode::Eval);
        let outs = model.forward(&mut fw, xs, false)?;
        let mut stages: Vec<(&str, &Vec<Var>, usize)> = Vec::new();
        if !outs.coarse_logits.is_empty() {
            stages.push(("coarse", &outs.coarse_logits, outs.center));
        }
        stages.push(("fine", &outs.fine_logits, outs.center));
        for (stage, logits, center) in stages {
            for (oi, &logit) in logits.iter().enumerate() {
                let probs = fw.graph.sigmoid(logit);
                let pt = fw.graph.value(probs);
                let (_, c, h, w) = pt.dims4();
                let plane = h * w;
                // slice position within the triplet this output predicts
                let slice_of_triplet = if logits.len() == 3 { oi } else { 1 };
                let key = format!("{stage}.{}", slice_of_triplet + 1);
                for (bi, t) in batch.iter().enumerate() {
                    let gt_onehot = t.one_hot(slice_of_triplet);
                    let z = t.center_z + slice_of_triplet - 1;
                    for ci in 0..c {
                        let start = (bi * c + ci) * plane;
                        let pm = Mask::from_probs(
                            h,
                            w,
                            &pt.data()[start..][..plane]
                                .iter()
                                .map(|&v| v as f64)
                                .collect::<Vec<_>>(),
                        );
                        let gm = Mask::new(
                            h,
                            w,
                            gt_onehot.data()[ci * plane..][..plane]
                                .iter()
                                .map(|&v| v > 0.5)
                                .collect(),
                        );
                        let rec = MetricsRecord::compute(
                            t.volume_id,
                            z,
                            ci + 1,
                            seed,
                            &pm,
                            &gm,
                            t.spacing,
                        );
                        if stage == "fine" && oi == center {
                            headline.push(rec.clone());
                        }
                        by_output.push((key.clone(), rec));
                    }
                }
            }
        }
    }
    Ok(EvalReport {
        headline,
        by_output,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn early_stopper_counts_exactly_patience_bad_epochs() {
        let mut s = EarlyStopper::new(3);
        assert!(!s.observe(0, 0.9)); // improvement
        assert!(!s.observe(1, 0.8));
        assert!(!s.observe(2, 0.7));
        assert!(s.observe(3, 0.6)); // third consecutive non-improvement
        assert_eq!(s.best_epoch, 0);
        assert_eq!(s.best, 0.9);
    }

    #[test]
    fn early_stopper_resets_on_improvement() {
        let mut s = EarlyStopper::new(2);
        assert!(!s.observe(0, 0.5));
        assert!(!s.observe(1, 0.4));
        assert!(!s.observe(2, 0.6)); // new best resets the counter
        assert!(!s.observe(3, 0.55));
        assert!(s.observe(4, 0.55)); // equal is not an improvement
        assert_eq!(s.best_epoch, 2);
    }

    #[test]
    fn config_hash_distinguishes_seeds() {
        use crate::baselines::ModelKind;
        use crate::net::NetConfig;
        let model = Model::new(ModelKind::UnetSingle, NetConfig::default());
        let cfg = TrainConfig::default();
        let a = run_config_text(&model, &cfg, "d", 0);
        let b = run_config_text(&model, &cfg, "d", 1);
        assert_ne!(config_hash(&a), config_hash(&b));
        assert_eq!(config_hash(&a), config_hash(&a.clone()));
    }

    #[test]
    fn batch_tensors_shapes() {
        use crate::data::{generate_volume, make_triplets, SynthSpec};
        let spec = SynthSpec {
            volumes: 1,
            depth: 4,
            height: 16,
            width: 16,
            ..SynthSpec::default()
        };
        let v = generate_volume(&spec, 0).unwrap();
        let triplets = make_triplets(&v);
        let batch: Vec<&SliceTriplet> = triplets.iter().collect();
        let (xs, gts) = batch_tensors(&batch);
        assert_eq!(xs[0].shape(), &[2, 1, 16, 16]);
        assert_eq!(gts[2].shape(), &[2, 1, 16, 16]);
    }
}
