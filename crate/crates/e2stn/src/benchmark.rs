//! Ablation benchmark: full network versus the discriminative-only variant
//! on the synthetic cross-domain task, paired over seeds.

use serde::{Deserialize, Serialize};

use crate::config::TrainConfig;
use crate::data::protocol::{build_protocol, ProtocolSpec};
use crate::data::synthetic::{generate_synthetic, SyntheticSpec};
use crate::error::{Error, Result};
use crate::metrics::evaluate_fold;
use crate::stats::paired_t_test;
use crate::training::train;

#[derive(Clone, Copy, Debug, Serialize, Deserialize)]
pub struct SeedOutcome {
    pub seed: u64,
    pub full_acc: f64,
    pub ablation_acc: f64,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct AblationOutcome {
    pub per_seed: Vec<SeedOutcome>,
    pub mean_full: f64,
    pub mean_ablation: f64,
    /// accuracy-point improvement of the full network
    pub delta_points: f64,
    pub t: f64,
    pub p_one_sided: f64,
}

/// Training dimensions sized for the synthetic benchmark: small enough for
/// minutes-scale runs, large enough to close the style gap.
pub fn benchmark_train_config() -> TrainConfig {
    let mut cfg = TrainConfig::default();
    cfg.model.model_dim = 16;
    cfg.model.heads = 4;
    cfg.model.ffn_dim = 32;
    cfg.model.eval_f1 = 8;
    cfg.model.eval_depth = 2;
    cfg.model.eval_f2 = 16;
    cfg.model.graph_out = 8;
    cfg.model.fc_hidden = 32;
    // the style objective must outweigh the content/identity pull for the
    // transfer to actually move samples into the target's statistics
    cfg.lambda = 15.0;
    cfg.learning_rate = 2e-3;
    cfg.batch_size = 16;
    cfg.epochs = 12;
    cfg
}

/// Run both arms on one seed: the data, parameter initialization and batch
/// order all derive from it. Evaluation uses the first target-subject fold.
pub fn run_seed(spec: &SyntheticSpec, base_cfg: &TrainConfig, seed: u64) -> Result<SeedOutcome> {
    let (source, target) = generate_synthetic(spec, seed)?;
    let protocol = if spec.classes == 4 {
        ProtocolSpec::four_class()
    } else if spec.classes == 3 {
        ProtocolSpec::three_class()
    } else {
        return Err(Error::Config(format!(
            "benchmark expects 3 or 4 classes, got {}",
            spec.classes
        )));
    };
    let folds = build_protocol(&protocol, &source, &target)?;
    let fold = &folds[0];

    let mut full_cfg = base_cfg.clone();
    full_cfg.seed = seed;
    full_cfg.ablation = false;
    let full = train(&full_cfg, &fold.train_source, &fold.unlabeled_target)?;
    let full_acc = evaluate_fold(&full.model, fold)?.accuracy;

    let mut abl_cfg = base_cfg.clone();
    abl_cfg.seed = seed;
    abl_cfg.ablation = true;
    let ablation = train(&abl_cfg, &fold.train_source, &fold.unlabeled_target)?;
    let ablation_acc = evaluate_fold(&ablation.model, fold)?.accuracy;

    Ok(SeedOutcome {
        seed,
        full_acc,
        ablation_acc,
    })
}

/// Full-vs-ablation comparison across seeds with a one-sided paired t-test.
pub fn ablation_benchmark(
    spec: &SyntheticSpec,
    base_cfg: &TrainConfig,
    seeds: &[u64],
    mut on_progress: impl FnMut(&SeedOutcome),
) -> Result<AblationOutcome> {
    if seeds.len() < 2 {
        return Err(Error::Config("ablation benchmark needs at least 2 seeds".into()));
    }
    let mut per_seed = Vec::with_capacity(seeds.len());
    for &seed in seeds {
        let outcome = run_seed(spec, base_cfg, seed)?;
        on_progress(&outcome);
        per_seed.push(outcome);
    }
    let full: Vec<f64> = per_seed.iter().map(|s| s.full_acc).collect();
    let abl: Vec<f64> = per_seed.iter().map(|s| s.ablation_acc).collect();
    let mean_full = full.iter().sum::<f64>() / full.len() as f64;
    let mean_ablation = abl.iter().sum::<f64>() / abl.len() as f64;
    let test = paired_t_test(&full, &abl)?;
    Ok(AblationOutcome {
        per_seed,
        mean_full,
        mean_ablation,
        delta_points: (mean_full - mean_ablation) * 100.0,
        t: test.t,
        p_one_sided: test.p_one_sided_greater(),
    })
}
