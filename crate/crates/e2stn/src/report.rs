//! Machine-readable evaluation report.

use serde::{Deserialize, Serialize};

use crate::error::Result;
use crate::metrics::{aggregate, ConfusionMatrix, FoldResult};
use crate::training::EpochTrace;

pub const TTEST_CAVEAT: &str =
    "t-test run unconditionally; normality pre-test (Shapiro-Wilk) is out of scope";

/// Column-oriented loss trace. The transfer-loss columns are omitted when
/// the run never produced them (ablation mode).
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TraceColumns {
    pub epoch: Vec<usize>,
    pub total: Vec<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub content: Option<Vec<f64>>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub style: Option<Vec<f64>>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub identity: Option<Vec<f64>>,
    pub cross_entropy: Vec<f64>,
    pub val_acc: Vec<f64>,
}

impl TraceColumns {
    pub fn from_trace(trace: &[EpochTrace]) -> Self {
        let keep = |get: fn(&EpochTrace) -> f64| -> Option<Vec<f64>> {
            let col: Vec<f64> = trace.iter().map(get).collect();
            if col.iter().all(|&v| v == 0.0) {
                None
            } else {
                Some(col)
            }
        };
        TraceColumns {
            epoch: trace.iter().map(|t| t.epoch).collect(),
            total: trace.iter().map(|t| t.total).collect(),
            content: keep(|t| t.content),
            style: keep(|t| t.style),
            identity: keep(|t| t.identity),
            cross_entropy: trace.iter().map(|t| t.cross_entropy).collect(),
            val_acc: trace.iter().map(|t| t.val_acc).collect(),
        }
    }
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct FoldReport {
    pub target_subject: u32,
    pub accuracy: f64,
    pub confusion_counts: Vec<Vec<u64>>,
    pub confusion_row_pct: Vec<Vec<f64>>,
}

/// Top-level report JSON. Deliberately timestamp-free so identical runs
/// serialize to identical bytes.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct EvalReport {
    pub fingerprint: String,
    pub config: serde_json::Value,
    pub class_names: Vec<String>,
    pub mean_acc: f64,
    pub std_acc: f64,
    pub folds: Vec<FoldReport>,
    pub pooled_confusion_counts: Vec<Vec<u64>>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub loss_trace: Option<TraceColumns>,
    pub caveats: Vec<String>,
}

pub fn crate_fingerprint() -> String {
    format!("e2stn {}", env!("CARGO_PKG_VERSION"))
}

pub fn build_report(
    config_json: &str,
    class_names: &[String],
    folds: &[FoldResult],
    trace: Option<&[EpochTrace]>,
) -> Result<EvalReport> {
    let accs: Vec<f64> = folds.iter().map(|f| f.accuracy).collect();
    let (mean_acc, std_acc) = aggregate(&accs)?;
    let matrices: Vec<&ConfusionMatrix> = folds.iter().map(|f| &f.confusion).collect();
    let pooled = ConfusionMatrix::merged(&matrices)?;
    Ok(EvalReport {
        fingerprint: crate_fingerprint(),
        config: serde_json::from_str(config_json)?,
        class_names: class_names.to_vec(),
        mean_acc,
        std_acc,
        folds: folds
            .iter()
            .map(|f| FoldReport {
                target_subject: f.target_subject,
                accuracy: f.accuracy,
                confusion_counts: f.confusion.rows(),
                confusion_row_pct: f.confusion.row_normalized(),
            })
            .collect(),
        pooled_confusion_counts: pooled.rows(),
        loss_trace: trace.map(TraceColumns::from_trace),
        caveats: vec![TTEST_CAVEAT.to_string()],
    })
}

impl EvalReport {
    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    pub fn from_json(s: &str) -> Result<EvalReport> {
        Ok(serde_json::from_str(s)?)
    }
}
