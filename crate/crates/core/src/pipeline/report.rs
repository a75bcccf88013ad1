use std::collections::BTreeMap;
use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use super::metrics::{
    accuracy, class_universe, f1_binary, f1_macro, f1_weighted, roc_auc, MetricError,
};
use super::train::{graphs_of, lookup};
use super::PipelineError;
use crate::chemgraph::{CachedGraph, FeatureSchema, GraphCache};
use crate::data::{DatasetBundle, PairRecord, ASA_SMILES};
use crate::model::{attention_summary, Model, PairPrediction, ParamCount, Variant};

pub const THRESHOLD: f64 = 0.5;
const EVAL_BATCH: usize = 256;
/// Test pairs that receive an attention summary in a metrics report.
const ATTENTION_ROWS: usize = 10;
/// Leading ASA holdout pairs singled out in the ASA report.
pub const HIGHLIGHTED_HOLDOUT: usize = 10;

/// Effective configuration and input checksums echoed into every output.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct Provenance {
    pub config: serde_json::Value,
    pub inputs: BTreeMap<String, String>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BinaryMetrics {
    /// Absent when the evaluated pairs hold a single class.
    pub auc: Option<f64>,
    pub accuracy: f64,
    pub f1: f64,
    pub n_pairs: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MulticlassMetrics {
    pub accuracy: f64,
    pub f1_macro: f64,
    pub f1_weighted: f64,
    pub n_pairs: usize,
    /// Classes present in truth or predictions; the F1-macro denominator.
    pub class_universe: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PredictionRow {
    pub drug1_id: String,
    pub drug2_id: String,
    pub probability: f64,
    pub binary_label: u8,
    pub predicted_type: usize,
    pub confidence: f64,
    pub true_type: i64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AttentionRecord {
    pub drug1_id: String,
    pub drug2_id: String,
    /// `"A"` when drug 1's atoms are the queries.
    pub query_side: String,
    pub most_attended: usize,
    pub element: String,
    pub weight: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub variant: Variant,
    pub binary: BinaryMetrics,
    /// Over positive pairs only; absent when there are none.
    pub multiclass: Option<MulticlassMetrics>,
    pub params: ParamCount,
    pub predictions: Vec<PredictionRow>,
    pub attention: Vec<AttentionRecord>,
    pub provenance: Provenance,
}

/// Eval-mode predictions in fixed-size batches.
pub fn predict_records(
    model: &Model<f32>,
    cache: &GraphCache,
    records: &[PairRecord],
) -> Result<Vec<PairPrediction>, PipelineError> {
    let mut out = Vec::with_capacity(records.len());
    for chunk in records.chunks(EVAL_BATCH) {
        let refs: Vec<&PairRecord> = chunk.iter().collect();
        let pairs = graphs_of(cache, &refs)?;
        out.extend(model.predict(&pairs)?);
    }
    Ok(out)
}

fn attention_record(
    pred: &PairPrediction,
    rec_ids: (&str, &str),
    partner: &CachedGraph,
    query_is_a: bool,
) -> Option<AttentionRecord> {
    let maps = pred.attention.as_ref()?;
    let per_head = if query_is_a {
        &maps.a_to_b
    } else {
        &maps.b_to_a
    };
    let s = attention_summary(per_head)?;
    Some(AttentionRecord {
        drug1_id: rec_ids.0.to_string(),
        drug2_id: rec_ids.1.to_string(),
        query_side: if query_is_a { "A" } else { "B" }.to_string(),
        most_attended: s.most_attended,
        element: partner.graph.atoms[s.most_attended].element.clone(),
        weight: s.weights[s.most_attended],
    })
}

fn binary_metrics(
    preds: &[PairPrediction],
    records: &[PairRecord],
) -> Result<BinaryMetrics, PipelineError> {
    let scores: Vec<f64> = preds.iter().map(|p| p.probability).collect();
    let truth: Vec<u8> = records.iter().map(PairRecord::binary_label).collect();
    let hard: Vec<u8> = scores.iter().map(|&s| u8::from(s >= THRESHOLD)).collect();
    let auc = match roc_auc(&scores, &truth) {
        Ok(v) => Some(v),
        Err(MetricError::SingleClassInput) => None,
        Err(e) => return Err(e.into()),
    };
    Ok(BinaryMetrics {
        auc,
        accuracy: accuracy(&hard, &truth)?,
        f1: f1_binary(&hard, &truth)?,
        n_pairs: records.len(),
    })
}

fn multiclass_metrics(
    preds: &[PairPrediction],
    records: &[PairRecord],
    n_classes: usize,
) -> Result<Option<MulticlassMetrics>, PipelineError> {
    let (mut pred, mut truth) = (Vec::new(), Vec::new());
    for (p, r) in preds.iter().zip(records) {
        if r.type_code >= 0 {
            pred.push(p.predicted_type().0 as i64);
            truth.push(r.type_code);
        }
    }
    if truth.is_empty() {
        return Ok(None);
    }
    Ok(Some(MulticlassMetrics {
        accuracy: accuracy(&pred, &truth)?,
        f1_macro: f1_macro(&pred, &truth, n_classes)?,
        f1_weighted: f1_weighted(&pred, &truth, n_classes)?,
        n_pairs: truth.len(),
        class_universe: class_universe(&pred, &truth),
    }))
}

/// Eval-mode metrics over `records`: binary metrics on every pair,
/// multi-class metrics on the positive pairs.
pub fn evaluate(
    model: &Model<f32>,
    records: &[PairRecord],
    cache: &GraphCache,
    provenance: &Provenance,
) -> Result<MetricsReport, PipelineError> {
    let preds = predict_records(model, cache, records)?;
    let binary = binary_metrics(&preds, records)?;
    let multiclass = multiclass_metrics(&preds, records, model.config.n_classes)?;
    let predictions = preds
        .iter()
        .zip(records)
        .map(|(p, r)| {
            let (t, c) = p.predicted_type();
            PredictionRow {
                drug1_id: r.drug1_id.clone(),
                drug2_id: r.drug2_id.clone(),
                probability: p.probability,
                binary_label: u8::from(p.probability >= THRESHOLD),
                predicted_type: t,
                confidence: c,
                true_type: r.type_code,
            }
        })
        .collect();
    let mut attention = Vec::new();
    for (p, r) in preds.iter().zip(records).take(ATTENTION_ROWS) {
        let partner = lookup(cache, &r.smiles2)?;
        attention.extend(attention_record(
            p,
            (&r.drug1_id, &r.drug2_id),
            partner,
            true,
        ));
    }
    Ok(MetricsReport {
        variant: model.variant(),
        binary,
        multiclass,
        params: model.count_params(),
        predictions,
        attention,
        provenance: provenance.clone(),
    })
}

fn fmt_opt(v: Option<f64>) -> String {
    v.map_or_else(|| "n/a".to_string(), |x| format!("{x:.4}"))
}

impl MetricsReport {
    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("report serializes")
    }

    pub fn to_table(&self) -> String {
        let mut s = String::new();
        let m = self.multiclass.as_ref();
        let _ = writeln!(s, "variant            {}", self.variant);
        let _ = writeln!(s, "parameters         {}", self.params.total);
        let _ = writeln!(s, "binary pairs       {}", self.binary.n_pairs);
        let _ = writeln!(s, "AUC                {}", fmt_opt(self.binary.auc));
        let _ = writeln!(s, "accuracy           {:.4}", self.binary.accuracy);
        let _ = writeln!(s, "F1                 {:.4}", self.binary.f1);
        let _ = writeln!(s, "multiclass pairs   {}", m.map_or(0, |m| m.n_pairs));
        let _ = writeln!(s, "accuracy           {}", fmt_opt(m.map(|m| m.accuracy)));
        let _ = writeln!(s, "F1-macro           {}", fmt_opt(m.map(|m| m.f1_macro)));
        let _ = writeln!(
            s,
            "F1-weighted        {}",
            fmt_opt(m.map(|m| m.f1_weighted))
        );
        s
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ReferenceRow {
    pub partner_name: String,
    pub drugbank_id: String,
    pub probability: f64,
    pub predicted_label: u8,
    pub expected_label: u8,
    pub correct: bool,
    pub mechanism: String,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct HoldoutRow {
    pub partner_id: String,
    pub true_type: i64,
    pub predicted_type: usize,
    pub confidence: f64,
    pub correct: bool,
    pub highlighted: bool,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AsaReport {
    pub variant: Variant,
    pub reference: Vec<ReferenceRow>,
    pub reference_correct: usize,
    pub holdout: Vec<HoldoutRow>,
    pub highlighted_correct: usize,
    pub holdout_correct: usize,
    /// Most-attended co-medication atom, ASA atoms querying.
    pub attention: Vec<AttentionRecord>,
    pub provenance: Provenance,
}

/// Reference-pair binary predictions plus multi-class predictions for every
/// ASA holdout pair (the first ten highlighted), with attention summaries for
/// attention-bearing variants.
pub fn asa_report(
    model: &Model<f32>,
    bundle: &DatasetBundle,
    provenance: &Provenance,
) -> Result<AsaReport, PipelineError> {
    let reference = bundle.require_reference()?;
    let asa_id = &bundle.manifest.asa_id;
    let owned;
    let asa = match bundle.cache.get(ASA_SMILES) {
        Some(g) => g,
        None => {
            owned = CachedGraph::from_smiles(ASA_SMILES, &FeatureSchema::default())?;
            &owned
        }
    };
    let mut attention = Vec::new();
    let mut ref_rows = Vec::new();
    for r in reference {
        let partner = lookup(&bundle.cache, &r.smiles)?;
        let pred = model.predict(&[(asa, partner)])?.remove(0);
        let predicted = u8::from(pred.probability >= THRESHOLD);
        attention.extend(attention_record(
            &pred,
            (asa_id, &r.drugbank_id),
            partner,
            true,
        ));
        ref_rows.push(ReferenceRow {
            partner_name: r.partner_name.clone(),
            drugbank_id: r.drugbank_id.clone(),
            probability: pred.probability,
            predicted_label: predicted,
            expected_label: r.label,
            correct: predicted == r.label,
            mechanism: r.mechanism.clone(),
        });
    }
    let preds = predict_records(model, &bundle.cache, &bundle.asa_holdout)?;
    let mut holdout = Vec::new();
    for (i, (p, r)) in preds.iter().zip(&bundle.asa_holdout).enumerate() {
        let asa_first = r.drug1_id == *asa_id;
        let (partner_id, partner_smiles) = if asa_first {
            (&r.drug2_id, &r.smiles2)
        } else {
            (&r.drug1_id, &r.smiles1)
        };
        let (t, c) = p.predicted_type();
        let highlighted = i < HIGHLIGHTED_HOLDOUT;
        if highlighted {
            let partner = lookup(&bundle.cache, partner_smiles)?;
            attention.extend(attention_record(
                p,
                (&r.drug1_id, &r.drug2_id),
                partner,
                asa_first,
            ));
        }
        holdout.push(HoldoutRow {
            partner_id: partner_id.clone(),
            true_type: r.type_code,
            predicted_type: t,
            confidence: c,
            correct: t as i64 == r.type_code,
            highlighted,
        });
    }
    Ok(AsaReport {
        variant: model.variant(),
        reference_correct: ref_rows.iter().filter(|r| r.correct).count(),
        reference: ref_rows,
        highlighted_correct: holdout
            .iter()
            .filter(|h| h.highlighted && h.correct)
            .count(),
        holdout_correct: holdout.iter().filter(|h| h.correct).count(),
        holdout,
        attention,
        provenance: provenance.clone(),
    })
}

impl AsaReport {
    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("report serializes")
    }

    pub fn to_table(&self) -> String {
        let mut s = String::new();
        let _ = writeln!(s, "reference pairs ({} variant)", self.variant);
        let _ = writeln!(
            s,
            "{:<14} {:<9} {:>6} {:>5} {:>8} {:>7}",
            "partner", "id", "prob", "pred", "expected", "correct"
        );
        for r in &self.reference {
            let _ = writeln!(
                s,
                "{:<14} {:<9} {:>6.3} {:>5} {:>8} {:>7}",
                r.partner_name,
                r.drugbank_id,
                r.probability,
                r.predicted_label,
                r.expected_label,
                r.correct
            );
        }
        let _ = writeln!(
            s,
            "correct {}/{}",
            self.reference_correct,
            self.reference.len()
        );
        let _ = writeln!(s);
        let _ = writeln!(
            s,
            "ASA holdout ({} pairs, first {} highlighted)",
            self.holdout.len(),
            HIGHLIGHTED_HOLDOUT
        );
        let _ = writeln!(
            s,
            "{:<9} {:>4} {:>4} {:>6} {:>7}",
            "partner", "true", "pred", "conf", "correct"
        );
        for h in self.holdout.iter().filter(|h| h.highlighted) {
            let _ = writeln!(
                s,
                "{:<9} {:>4} {:>4} {:>6.3} {:>7}",
                h.partner_id, h.true_type, h.predicted_type, h.confidence, h.correct
            );
        }
        let n_high = self.holdout.iter().filter(|h| h.highlighted).count();
        let _ = writeln!(
            s,
            "highlighted correct {}/{}",
            self.highlighted_correct, n_high
        );
        let _ = writeln!(
            s,
            "all holdout correct {}/{}",
            self.holdout_correct,
            self.holdout.len()
        );
        if !self.attention.is_empty() {
            let _ = writeln!(s);
            let _ = writeln!(s, "most-attended co-medication atoms");
            for a in &self.attention {
                let _ = writeln!(
                    s,
                    "{} / {}: atom {} ({}) weight {:.3}",
                    a.drug1_id, a.drug2_id, a.most_attended, a.element, a.weight
                );
            }
        }
        s
    }
}
