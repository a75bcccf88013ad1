use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use super::report::{evaluate, BinaryMetrics, MetricsReport, MulticlassMetrics, Provenance};
use super::train::{train, TrainConfig, TrainOutcome};
use super::PipelineError;
use crate::data::DatasetBundle;
use crate::model::{ModelConfig, ParamCount, Variant};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AblationRow {
    pub variant: Variant,
    pub params: ParamCount,
    pub binary: BinaryMetrics,
    pub multiclass: Option<MulticlassMetrics>,
    pub final_binary_loss: f64,
    pub final_multiclass_loss: f64,
}

/// `to − from` for each metric.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AblationDelta {
    pub from: Variant,
    pub to: Variant,
    pub params: i64,
    pub auc: Option<f64>,
    pub binary_accuracy: f64,
    pub multiclass_accuracy: Option<f64>,
    pub f1_macro: Option<f64>,
    pub f1_weighted: Option<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AblationReport {
    pub rows: Vec<AblationRow>,
    pub deltas: Vec<AblationDelta>,
    pub provenance: Provenance,
}

pub struct AblationRun {
    pub report: AblationReport,
    pub outcomes: Vec<(TrainOutcome, MetricsReport)>,
}

fn sub(a: Option<f64>, b: Option<f64>) -> Option<f64> {
    Some(a? - b?)
}

fn delta(from: &AblationRow, to: &AblationRow) -> AblationDelta {
    let mc = |r: &AblationRow, f: fn(&MulticlassMetrics) -> f64| r.multiclass.as_ref().map(f);
    AblationDelta {
        from: from.variant,
        to: to.variant,
        params: to.params.total as i64 - from.params.total as i64,
        auc: sub(to.binary.auc, from.binary.auc),
        binary_accuracy: to.binary.accuracy - from.binary.accuracy,
        multiclass_accuracy: sub(mc(to, |m| m.accuracy), mc(from, |m| m.accuracy)),
        f1_macro: sub(mc(to, |m| m.f1_macro), mc(from, |m| m.f1_macro)),
        f1_weighted: sub(mc(to, |m| m.f1_weighted), mc(from, |m| m.f1_weighted)),
    }
}

fn final_loss(outcome: &TrainOutcome, phase: super::Phase) -> f64 {
    outcome
        .log
        .iter()
        .rev()
        .find(|e| e.phase == phase)
        .map_or(f64::NAN, |e| e.loss)
}

fn run_one(
    bundle: &DatasetBundle,
    base: &ModelConfig,
    tc: &TrainConfig,
    variant: Variant,
    provenance: &Provenance,
) -> Result<(TrainOutcome, MetricsReport), PipelineError> {
    let cfg = ModelConfig {
        variant,
        ..base.clone()
    };
    let outcome = train(&cfg, &bundle.train, &bundle.cache, tc, |_| {})?;
    let report = evaluate(&outcome.model, &bundle.test, &bundle.cache, provenance)?;
    Ok((outcome, report))
}

/// Trains and evaluates each variant on the same split and seed, optionally
/// one thread per variant. Deltas compare consecutive variants and the last
/// against the first.
pub fn ablate(
    bundle: &DatasetBundle,
    base: &ModelConfig,
    tc: &TrainConfig,
    variants: &[Variant],
    parallel: bool,
    provenance: &Provenance,
) -> Result<AblationRun, PipelineError> {
    if variants.is_empty() {
        return Err(PipelineError::InvalidConfig("no variants to ablate".into()));
    }
    let results: Vec<Result<(TrainOutcome, MetricsReport), PipelineError>> = if parallel {
        std::thread::scope(|s| {
            let handles: Vec<_> = variants
                .iter()
                .map(|&v| s.spawn(move || run_one(bundle, base, tc, v, provenance)))
                .collect();
            handles
                .into_iter()
                .map(|h| h.join().expect("ablation worker panicked"))
                .collect()
        })
    } else {
        variants
            .iter()
            .map(|&v| run_one(bundle, base, tc, v, provenance))
            .collect()
    };
    let outcomes = results.into_iter().collect::<Result<Vec<_>, _>>()?;
    let rows: Vec<AblationRow> = outcomes
        .iter()
        .map(|(o, r)| AblationRow {
            variant: r.variant,
            params: r.params.clone(),
            binary: r.binary.clone(),
            multiclass: r.multiclass.clone(),
            final_binary_loss: final_loss(o, super::Phase::Binary),
            final_multiclass_loss: final_loss(o, super::Phase::Multiclass),
        })
        .collect();
    let mut deltas: Vec<AblationDelta> = rows.windows(2).map(|w| delta(&w[0], &w[1])).collect();
    if rows.len() > 2 {
        deltas.push(delta(&rows[0], &rows[rows.len() - 1]));
    }
    Ok(AblationRun {
        report: AblationReport {
            rows,
            deltas,
            provenance: provenance.clone(),
        },
        outcomes,
    })
}

fn fmt_opt(v: Option<f64>, signed: bool) -> String {
    match (v, signed) {
        (None, _) => "n/a".into(),
        (Some(x), true) => format!("{x:+.4}"),
        (Some(x), false) => format!("{x:.4}"),
    }
}

impl AblationReport {
    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("report serializes")
    }

    pub fn to_table(&self) -> String {
        let mut s = String::new();
        let _ = writeln!(
            s,
            "{:<9} {:>8} {:>7} {:>7} {:>7} {:>9} {:>9}",
            "variant", "params", "AUC", "acc", "mc-acc", "F1-macro", "F1-wtd"
        );
        for r in &self.rows {
            let m = r.multiclass.as_ref();
            let _ = writeln!(
                s,
                "{:<9} {:>8} {:>7} {:>7.4} {:>7} {:>9} {:>9}",
                r.variant.name(),
                r.params.total,
                fmt_opt(r.binary.auc, false),
                r.binary.accuracy,
                fmt_opt(m.map(|m| m.accuracy), false),
                fmt_opt(m.map(|m| m.f1_macro), false),
                fmt_opt(m.map(|m| m.f1_weighted), false),
            );
        }
        for d in &self.deltas {
            let _ = writeln!(
                s,
                "{:<9} {:>+8} {:>7} {:>+7.4} {:>7} {:>9} {:>9}",
                format!("{}-{}", d.to.name(), d.from.name()),
                d.params,
                fmt_opt(d.auc, true),
                d.binary_accuracy,
                fmt_opt(d.multiclass_accuracy, true),
                fmt_opt(d.f1_macro, true),
                fmt_opt(d.f1_weighted, true),
            );
        }
        s
    }
}
