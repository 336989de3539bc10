//! Multi-objective joint training of the full network, batch pairing of
//! source/target trials, the discriminative-only ablation mode, and
//! checkpointing.

pub mod adam;
pub mod checkpoint;


use crate::array::ParamStore;
use crate::classifier::{
    cross_entropy, init_classifier_params, one_hot, predict, ClassifierHandles,
};
use crate::config::{LrSchedule, TrainConfig};
use crate::data::{FeatureMatrix, LabeledTrial, TargetPool};
use crate::error::{Error, Result};
use crate::params::Bindings;
use crate::rng::Rng;
use crate::tensor::{Graph, Tensor};
use crate::transfer::{init_transfer_params, stylize, TransferHandles};
use crate::transfer_eval::{content_loss, init_eval_params, style_loss, EvalConvHandles};

pub use adam::{clip_global_norm, AdamHyper, AdamState};
pub use checkpoint::Checkpoint;

/// Data dimensions the parameter shapes depend on.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct DataDims {
    pub channels: usize,
    pub bands: usize,
    pub classes: usize,
}

/// The model at rest: configuration plus every named parameter array.
#[derive(Clone, Debug)]
pub struct Model {
    pub cfg: TrainConfig,
    pub dims: DataDims,
    pub store: ParamStore,
}

impl Model {
    /// Initialize all parameters from the config seed. In ablation mode the
    /// transfer and evaluation modules are never constructed.
    pub fn init(cfg: &TrainConfig, dims: DataDims) -> Result<Model> {
        cfg.validate()?;
        let mut store = ParamStore::new();
        let mut master = Rng::new(cfg.seed);
        let mut transfer_rng = master.split();
        let mut eval_rng = master.split();
        let mut clf_rng = master.split();
        if !cfg.ablation {
            init_transfer_params(&mut store, &cfg.model, dims.bands, &mut transfer_rng);
            init_eval_params(
                &mut store,
                &cfg.model,
                dims.channels,
                &mut eval_rng,
                cfg.freeze_eval_conv,
            );
        }
        init_classifier_params(
            &mut store,
            &cfg.model,
            dims.channels,
            dims.bands,
            dims.classes,
            &mut clf_rng,
        );
        Ok(Model {
            cfg: cfg.clone(),
            dims,
            store,
        })
    }

    /// Rebuild a model from a checkpoint.
    pub fn from_checkpoint(ckpt: &Checkpoint, dims: DataDims) -> Result<Model> {
        let cfg = TrainConfig::from_json(&ckpt.config_json)?;
        Ok(Model {
            cfg,
            dims,
            store: ckpt.params.clone(),
        })
    }

    pub fn to_checkpoint(&self, adam: &AdamState, epoch: u64, rng_state: u64) -> Result<Checkpoint> {
        Ok(Checkpoint {
            config_json: self.cfg.to_json()?,
            epoch,
            rng_state,
            params: self.store.clone(),
            adam: adam.clone(),
        })
    }
}

/// All modules bound into one graph; transfer/eval are absent in ablation.
pub struct ModelHandles {
    pub transfer: Option<TransferHandles>,
    pub eval: Option<EvalConvHandles>,
    pub classifier: ClassifierHandles,
}

pub fn bind_model(
    g: &mut Graph,
    b: &mut Bindings,
    model: &Model,
) -> Result<ModelHandles> {
    let (transfer, eval) = if model.cfg.ablation {
        (None, None)
    } else {
        (
            Some(TransferHandles::bind(g, b, &model.store, &model.cfg.model)?),
            Some(EvalConvHandles::bind(g, b, &model.store)?),
        )
    };
    let classifier = ClassifierHandles::bind(g, b, &model.store, &model.cfg.model)?;
    Ok(ModelHandles {
        transfer,
        eval,
        classifier,
    })
}

/// Loss mixing weights.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct LossWeights {
    pub lambda: f64,
    pub nu: f64,
    pub xi: f64,
}

impl From<&TrainConfig> for LossWeights {
    fn from(cfg: &TrainConfig) -> Self {
        LossWeights {
            lambda: cfg.lambda,
            nu: cfg.nu,
            xi: cfg.xi,
        }
    }
}

/// The four components of the joint objective.
#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct LossComponents {
    pub content: f64,
    pub style: f64,
    pub identity: f64,
    pub cross_entropy: f64,
}

impl LossComponents {
    pub fn total(&self, w: &LossWeights) -> f64 {
        self.content + w.lambda * self.style + w.nu * self.identity + w.xi * self.cross_entropy
    }

    pub fn is_finite(&self) -> bool {
        self.content.is_finite()
            && self.style.is_finite()
            && self.identity.is_finite()
            && self.cross_entropy.is_finite()
    }
}

/// Joint loss over a paired batch. Source trials carry labels; the target
/// batch is bare feature matrices, so target labels cannot be read here.
/// Returns the weighted total (as a graph scalar) and the component values.
pub fn joint_loss(
    g: &mut Graph,
    handles: &ModelHandles,
    model: &Model,
    batch_src: &[&LabeledTrial],
    batch_tgt: &[&FeatureMatrix],
) -> Result<(Tensor, LossComponents)> {
    if batch_src.is_empty() {
        return Err(Error::Training("empty source batch".into()));
    }
    let cfg = &model.cfg;
    let mcfg = &cfg.model;
    let weights = LossWeights::from(cfg);
    let inv_n = 1.0 / batch_src.len() as f64;

    if cfg.ablation {
        let mut ce_sum = g.scalar(0.0)?;
        for trial in batch_src {
            let x = trial.features.to_tensor(g)?;
            let probs = predict(g, x, &handles.classifier, mcfg)?;
            let y = one_hot(trial.label, model.dims.classes)?;
            let ce = cross_entropy(g, probs, &y)?;
            ce_sum = g.add(ce_sum, ce)?;
        }
        let ce_mean = g.scalar_mul(ce_sum, inv_n)?;
        let components = LossComponents {
            cross_entropy: g.scalar_value(ce_mean),
            ..Default::default()
        };
        let total = g.scalar_mul(ce_mean, weights.xi)?;
        return Ok((total, components));
    }

    if batch_tgt.len() != batch_src.len() {
        return Err(Error::Training(format!(
            "batch pairing mismatch: {} source vs {} target",
            batch_src.len(),
            batch_tgt.len()
        )));
    }
    let transfer = handles.transfer.as_ref().expect("transfer bound");
    let eval = handles.eval.as_ref().expect("eval bound");

    let mut c_sum = g.scalar(0.0)?;
    let mut s_sum = g.scalar(0.0)?;
    let mut id_sum = g.scalar(0.0)?;
    let mut ce_sum = g.scalar(0.0)?;
    for (trial, tgt) in batch_src.iter().zip(batch_tgt) {
        let x_s = trial.features.to_tensor(g)?;
        let x_t = tgt.to_tensor(g)?;
        let x_hat = stylize(g, x_s, x_t, transfer, mcfg)?;

        let l_c = content_loss(g, x_hat, x_s, eval, mcfg)?;
        let l_s = style_loss(g, x_hat, x_t, eval, mcfg)?;
        let l_id = crate::transfer_eval::identity_loss(g, x_s, x_t, transfer, eval, mcfg)?;

        // the stylized representation keeps the source label; both inputs are
        // scored and averaged
        let y = one_hot(trial.label, model.dims.classes)?;
        let p_src = predict(g, x_s, &handles.classifier, mcfg)?;
        let p_sty = predict(g, x_hat, &handles.classifier, mcfg)?;
        let ce_src = cross_entropy(g, p_src, &y)?;
        let ce_sty = cross_entropy(g, p_sty, &y)?;
        let ce_pair = g.add(ce_src, ce_sty)?;
        let ce = g.scalar_mul(ce_pair, 0.5)?;

        c_sum = g.add(c_sum, l_c)?;
        s_sum = g.add(s_sum, l_s)?;
        id_sum = g.add(id_sum, l_id)?;
        ce_sum = g.add(ce_sum, ce)?;
    }
    let c_mean = g.scalar_mul(c_sum, inv_n)?;
    let s_mean = g.scalar_mul(s_sum, inv_n)?;
    let id_mean = g.scalar_mul(id_sum, inv_n)?;
    let ce_mean = g.scalar_mul(ce_sum, inv_n)?;

    let components = LossComponents {
        content: g.scalar_value(c_mean),
        style: g.scalar_value(s_mean),
        identity: g.scalar_value(id_mean),
        cross_entropy: g.scalar_value(ce_mean),
    };

    let s_w = g.scalar_mul(s_mean, weights.lambda)?;
    let id_w = g.scalar_mul(id_mean, weights.nu)?;
    let ce_w = g.scalar_mul(ce_mean, weights.xi)?;
    let t1 = g.add(c_mean, s_w)?;
    let t2 = g.add(t1, id_w)?;
    let total = g.add(t2, ce_w)?;
    Ok((total, components))
}

/// Metrics of one optimization step.
#[derive(Clone, Copy, Debug)]
pub struct StepMetrics {
    pub total: f64,
    pub components: LossComponents,
    pub grad_norm: f64,
}

/// One optimization step: forward, backward, clip, Adam update.
pub fn train_step(
    model: &mut Model,
    adam: &mut AdamState,
    batch_src: &[&LabeledTrial],
    batch_tgt: &[&FeatureMatrix],
    learning_rate: f64,
) -> Result<StepMetrics> {
    let mut g = Graph::new();
    let mut bindings = Bindings::new();
    let handles = bind_model(&mut g, &mut bindings, model)?;
    let (total, components) = joint_loss(&mut g, &handles, model, batch_src, batch_tgt)?;
    let total_value = g.scalar_value(total);
    if !total_value.is_finite() || !components.is_finite() {
        return Err(Error::Training(format!(
            "non-finite loss: total {total_value}, components {components:?}"
        )));
    }
    g.backward(total)?;
    let mut grads = bindings.collect_grads(&g);
    if grads.values().flatten().any(|v| !v.is_finite()) {
        return Err(Error::Training(format!(
            "non-finite gradient; components {components:?}"
        )));
    }
    let grad_norm = clip_global_norm(&mut grads, model.cfg.grad_clip);
    let hp = AdamHyper {
        learning_rate,
        beta1: model.cfg.beta1,
        beta2: model.cfg.beta2,
        eps: model.cfg.adam_eps,
    };
    adam.apply(&mut model.store, &grads, &hp)?;
    Ok(StepMetrics {
        total: total_value,
        components,
        grad_norm,
    })
}

/// Pair source and target pools into per-step index batches: sources are a
/// seeded permutation chunked without replacement (each trial appears exactly
/// once per epoch); targets are drawn uniformly with replacement.
pub fn pair_batches(
    n_source: usize,
    n_target: usize,
    batch_size: usize,
    rng: &mut Rng,
) -> Result<Vec<(Vec<usize>, Vec<usize>)>> {
    if n_source == 0 || n_target == 0 {
        return Err(Error::Training("cannot pair batches from an empty pool".into()));
    }
    if batch_size == 0 {
        return Err(Error::Config("batch_size must be >= 1".into()));
    }
    let mut order: Vec<usize> = (0..n_source).collect();
    rng.shuffle(&mut order);
    let mut out = Vec::new();
    for chunk in order.chunks(batch_size) {
        let targets = (0..chunk.len()).map(|_| rng.below(n_target)).collect();
        out.push((chunk.to_vec(), targets));
    }
    Ok(out)
}

/// One row of the metric trace, serialized as
/// `epoch,L,L_c,L_s,L_id,L_ce,val_acc`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct EpochTrace {
    pub epoch: usize,
    pub total: f64,
    pub content: f64,
    pub style: f64,
    pub identity: f64,
    pub cross_entropy: f64,
    pub val_acc: f64,
}

pub fn write_trace_csv(path: &std::path::Path, trace: &[EpochTrace]) -> Result<()> {
    use std::io::Write;
    let mut out = std::io::BufWriter::new(std::fs::File::create(path)?);
    writeln!(out, "epoch,L,L_c,L_s,L_id,L_ce,val_acc")?;
    for row in trace {
        writeln!(
            out,
            "{},{},{},{},{},{},{}",
            row.epoch, row.total, row.content, row.style, row.identity, row.cross_entropy, row.val_acc
        )?;
    }
    out.flush()?;
    Ok(())
}

pub fn read_trace_csv(path: &std::path::Path) -> Result<Vec<EpochTrace>> {
    let ferr = |msg: String| Error::Format {
        path: path.display().to_string(),
        msg,
    };
    let text = std::fs::read_to_string(path)?;
    let mut lines = text.lines();
    match lines.next() {
        Some("epoch,L,L_c,L_s,L_id,L_ce,val_acc") => {}
        other => return Err(ferr(format!("bad metrics header {other:?}"))),
    }
    let mut trace = Vec::new();
    for (i, line) in lines.enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let fields: Vec<&str> = line.split(',').collect();
        if fields.len() != 7 {
            return Err(ferr(format!("line {}: expected 7 fields", i + 2)));
        }
        let num = |s: &str| -> Result<f64> {
            s.parse::<f64>()
                .map_err(|_| ferr(format!("line {}: bad number `{s}`", i + 2)))
        };
        trace.push(EpochTrace {
            epoch: num(fields[0])? as usize,
            total: num(fields[1])?,
            content: num(fields[2])?,
            style: num(fields[3])?,
            identity: num(fields[4])?,
            cross_entropy: num(fields[5])?,
            val_acc: num(fields[6])?,
        });
    }
    Ok(trace)
}

/// Classifier accuracy on labeled trials (used for the source validation
/// split; target labels are never visible to this path during training).
pub fn classifier_accuracy(model: &Model, trials: &[&LabeledTrial]) -> Result<f64> {
    if trials.is_empty() {
        return Ok(f64::NAN);
    }
    let mut correct = 0usize;
    for trial in trials {
        let mut g = Graph::new();
        let mut b = Bindings::new();
        let h = ClassifierHandles::bind(&mut g, &mut b, &model.store, &model.cfg.model)?;
        let x = trial.features.to_tensor(&mut g)?;
        let probs = predict(&mut g, x, &h, &model.cfg.model)?;
        let argmax = g
            .data(probs)
            .iter()
            .enumerate()
            .max_by(|a, b| a.1.partial_cmp(b.1).unwrap())
            .unwrap()
            .0;
        if argmax == trial.label as usize {
            correct += 1;
        }
    }
    Ok(correct as f64 / trials.len() as f64)
}

/// Result of a full training run.
pub struct TrainOutcome {
    pub model: Model,
    pub adam: AdamState,
    pub trace: Vec<EpochTrace>,
    pub rng_state: u64,
}

impl TrainOutcome {
    pub fn checkpoint(&self) -> Result<Checkpoint> {
        self.model
            .to_checkpoint(&self.adam, self.trace.len() as u64, self.rng_state)
    }
}

fn lr_at(cfg: &TrainConfig, epoch: usize) -> f64 {
    match cfg.lr_schedule {
        LrSchedule::Constant => cfg.learning_rate,
        LrSchedule::Cosine => {
            let t = epoch as f64 / cfg.epochs.max(1) as f64;
            cfg.learning_rate * 0.5 * (1.0 + (std::f64::consts::PI * t).cos())
        }
    }
}

/// Train on the class-filtered source set with the unlabeled target pool as
/// the style source. In ablation mode the target pool is ignored and only
/// the discriminative module exists or trains.
pub fn train(cfg: &TrainConfig, source: &[LabeledTrial], target: &TargetPool) -> Result<TrainOutcome> {
    cfg.validate()?;
    let first = source
        .first()
        .ok_or_else(|| Error::Training("empty source set".into()))?;
    if !cfg.ablation && target.is_empty() {
        return Err(Error::Training("empty target pool".into()));
    }
    let classes = source.iter().map(|t| t.label as usize).max().unwrap() + 1;
    let dims = DataDims {
        channels: first.features.channels(),
        bands: first.features.bands(),
        classes,
    };
    for t in source {
        if t.features.channels() != dims.channels || t.features.bands() != dims.bands {
            return Err(Error::Dimension {
                op: "train",
                shape: vec![t.features.channels(), t.features.bands()],
                msg: "inconsistent trial shape in source set".into(),
            });
        }
    }

    let mut model = Model::init(cfg, dims)?;
    let mut adam = AdamState::new();
    let mut rng = Rng::new(cfg.seed ^ 0x7261_696e); // training stream, distinct from init

    // held-out source validation split
    let mut indices: Vec<usize> = (0..source.len()).collect();
    rng.shuffle(&mut indices);
    let val_len = ((source.len() as f64) * cfg.val_fraction).floor() as usize;
    let (val_idx, train_idx) = indices.split_at(val_len);
    let train_set: Vec<&LabeledTrial> = train_idx.iter().map(|&i| &source[i]).collect();
    let val_set: Vec<&LabeledTrial> = val_idx.iter().map(|&i| &source[i]).collect();
    if train_set.is_empty() {
        return Err(Error::Training("validation split consumed every trial".into()));
    }

    let mut trace = Vec::with_capacity(cfg.epochs);
    let mut best_val = f64::NEG_INFINITY;
    let mut since_best = 0usize;
    for epoch in 0..cfg.epochs {
        let lr = lr_at(cfg, epoch);
        let batches = pair_batches(
            train_set.len(),
            target.len().max(1),
            cfg.batch_size,
            &mut rng,
        )?;
        let mut sums = LossComponents::default();
        let mut total_sum = 0.0;
        for (src_idx, tgt_idx) in &batches {
            let batch_src: Vec<&LabeledTrial> = src_idx.iter().map(|&i| train_set[i]).collect();
            let batch_tgt: Vec<&FeatureMatrix> = if cfg.ablation {
                Vec::new()
            } else {
                tgt_idx.iter().map(|&i| &target.features()[i]).collect()
            };
            let metrics = train_step(&mut model, &mut adam, &batch_src, &batch_tgt, lr)?;
            total_sum += metrics.total;
            sums.content += metrics.components.content;
            sums.style += metrics.components.style;
            sums.identity += metrics.components.identity;
            sums.cross_entropy += metrics.components.cross_entropy;
        }
        let n = batches.len() as f64;
        let val_acc = classifier_accuracy(&model, &val_set)?;
        trace.push(EpochTrace {
            epoch,
            total: total_sum / n,
            content: sums.content / n,
            style: sums.style / n,
            identity: sums.identity / n,
            cross_entropy: sums.cross_entropy / n,
            val_acc,
        });

        if cfg.early_stop_patience > 0 && !val_set.is_empty() {
            if val_acc > best_val {
                best_val = val_acc;
                since_best = 0;
            } else {
                since_best += 1;
                if since_best >= cfg.early_stop_patience {
                    break;
                }
            }
        }
    }

    Ok(TrainOutcome {
        model,
        adam,
        trace,
        rng_state: rng.state(),
    })
}
