mod common;

use common::oracles::{accuracy_count, auc_pairs, f1_binary_count, f1_confusion};
use common::{random_matrix, rng};
use ddi_core::chemgraph::{FeatureSchema, GraphCache};
use ddi_core::data::{DatasetBundle, PairRecord, SplitSpec, SyntheticSpec};
use ddi_core::model::{ModelConfig, Variant};
use ddi_core::numerics::Tape;
use ddi_core::pipeline::metrics::{
    accuracy, class_universe, f1_binary, f1_macro, f1_weighted, roc_auc,
};
use ddi_core::pipeline::{evaluate, train, EpochLog, Phase, Provenance, TrainConfig};
use ndarray::Array2;
use proptest::prelude::*;
use rand::Rng;

fn scores_and_labels() -> impl Strategy<Value = (Vec<f64>, Vec<u8>)> {
    (2usize..=50).prop_flat_map(|n| {
        (
            prop::collection::vec((0u8..8).prop_map(|s| f64::from(s) / 8.0), n),
            prop::collection::vec(0u8..=1, n),
        )
    })
}

fn class_labels() -> impl Strategy<Value = (Vec<i64>, Vec<i64>)> {
    (1usize..=50).prop_flat_map(|n| {
        (
            prop::collection::vec(0i64..6, n),
            prop::collection::vec(0i64..6, n),
        )
    })
}

proptest! {
    #[test]
    fn auc_matches_pair_counting((scores, labels) in scores_and_labels()) {
        let both = labels.contains(&0) && labels.contains(&1);
        prop_assume!(both);
        let got = roc_auc(&scores, &labels).unwrap();
        prop_assert!((got - auc_pairs(&scores, &labels)).abs() <= 1e-12);
    }

    #[test]
    fn binary_counts_match((scores, labels) in scores_and_labels()) {
        let pred: Vec<u8> = scores.iter().map(|&s| u8::from(s >= 0.5)).collect();
        prop_assert_eq!(accuracy(&pred, &labels).unwrap(), accuracy_count(&pred, &labels));
        prop_assert!((f1_binary(&pred, &labels).unwrap() - f1_binary_count(&pred, &labels)).abs() <= 1e-12);
    }

    #[test]
    fn multiclass_f1_matches_confusion((pred, truth) in class_labels()) {
        let (m, w) = f1_confusion(&pred, &truth, 6);
        prop_assert!((f1_macro(&pred, &truth, 6).unwrap() - m).abs() <= 1e-12);
        prop_assert!((f1_weighted(&pred, &truth, 6).unwrap() - w).abs() <= 1e-12);
        prop_assert_eq!(accuracy(&pred, &truth).unwrap(), accuracy_count(&pred, &truth));
    }
}

#[test]
fn class_universe_counts_truth_and_predictions() {
    assert_eq!(class_universe(&[0, 3, 3], &[0, 1, 3]), 3);
    assert_eq!(class_universe(&[5], &[5]), 1);
}

fn masked_loss(logits: &Array2<f64>, labels: &[i64]) -> (f64, Array2<f64>) {
    let mut t = Tape::new();
    let z = t.param(logits.clone());
    let (l, _) = t.masked_cross_entropy(z, labels).unwrap();
    let g = t.backward(l).unwrap();
    (t.scalar(l), g.get(z).clone())
}

#[test]
fn masked_rows_drop_out_exactly() {
    let mut r = rng(3);
    for _ in 0..50 {
        let n = r.random_range(2..12);
        let logits = random_matrix(&mut r, n, 7);
        let mut labels: Vec<i64> = (0..n).map(|_| r.random_range(-1..7)).collect();
        labels[0] = 2;
        let keep: Vec<usize> = (0..n).filter(|&i| labels[i] >= 0).collect();
        let sub = logits.select(ndarray::Axis(0), &keep);
        let sub_labels: Vec<i64> = keep.iter().map(|&i| labels[i]).collect();
        let (mixed, g_mixed) = masked_loss(&logits, &labels);
        let (subset, g_subset) = masked_loss(&sub, &sub_labels);
        assert_eq!(mixed, subset);
        for (k, &i) in keep.iter().enumerate() {
            assert_eq!(g_mixed.row(i), g_subset.row(k));
        }
        for i in (0..n).filter(|&i| labels[i] < 0) {
            assert!(g_mixed.row(i).iter().all(|&v| v == 0.0));
        }
    }
    let (loss, g) = masked_loss(&random_matrix(&mut r, 5, 7), &[-1; 5]);
    assert_eq!(loss, 0.0);
    assert!(g.iter().all(|&v| v == 0.0));
}

fn small_bundle(n_pairs: usize) -> DatasetBundle {
    let spec = SyntheticSpec {
        n_pairs,
        ..SyntheticSpec::default()
    };
    DatasetBundle::synthetic(&spec, &SplitSpec::default()).unwrap()
}

fn quick(epochs: u32) -> TrainConfig {
    TrainConfig {
        epochs,
        batch_size: 16,
        ..TrainConfig::default()
    }
}

fn run(bundle: &DatasetBundle, variant: Variant, tc: &TrainConfig) -> Vec<EpochLog> {
    let mut seen = Vec::new();
    let out = train(
        &ModelConfig::with_variant(variant),
        &bundle.train,
        &bundle.cache,
        tc,
        |e| seen.push(e.clone()),
    )
    .unwrap();
    assert_eq!(seen, out.log);
    out.log
}

#[test]
fn learning_rate_halves_every_twenty_epochs_and_restarts() {
    let records: Vec<PairRecord> = [("CCO", "c1ccncc1", 3), ("CC(=O)O", "C1CC1N", -1)]
        .iter()
        .map(|&(a, b, t)| PairRecord {
            drug1_id: a.into(),
            drug2_id: b.into(),
            smiles1: a.into(),
            smiles2: b.into(),
            type_code: t,
        })
        .collect();
    let cache = GraphCache::build(
        records
            .iter()
            .flat_map(|r| [r.smiles1.clone(), r.smiles2.clone()]),
        &FeatureSchema::default(),
    )
    .unwrap();
    let out = train(
        &ModelConfig::with_variant(Variant::Concat),
        &records,
        &cache,
        &quick(45),
        |_| {},
    )
    .unwrap();
    assert_eq!(out.log.len(), 90);
    for (i, e) in out.log.iter().enumerate() {
        let phase = if i < 45 {
            Phase::Binary
        } else {
            Phase::Multiclass
        };
        assert_eq!(e.phase, phase);
        assert_eq!(e.epoch as usize, i % 45);
        assert_eq!(e.lr, 1e-3 * 0.5f64.powi((e.epoch / 20) as i32));
        assert!(e.loss.is_finite());
    }
}

#[test]
fn training_is_deterministic_and_seed_sensitive() {
    let bundle = small_bundle(60);
    for variant in Variant::ALL {
        let tc = quick(2);
        assert_eq!(run(&bundle, variant, &tc), run(&bundle, variant, &tc));
        let other = TrainConfig { seed: 9, ..tc };
        assert_ne!(run(&bundle, variant, &tc), run(&bundle, variant, &other));
    }
}

#[test]
fn frozen_trunk_keeps_encoder_and_binary_head() {
    let bundle = small_bundle(40);
    let tc = TrainConfig {
        freeze_trunk: true,
        ..quick(2)
    };
    let out = train(
        &ModelConfig::with_variant(Variant::CrossAtt),
        &bundle.train,
        &bundle.cache,
        &tc,
        |_| {},
    )
    .unwrap();
    for (name, value) in &out.binary_phase.params {
        let now = &out.model.params.params[name];
        if name.starts_with("head.multiclass.") {
            assert_ne!(value, now, "{name}");
        } else {
            assert_eq!(value, now, "{name}");
        }
    }
}

#[test]
fn fine_tuned_trunk_still_keeps_binary_head() {
    let bundle = small_bundle(40);
    let out = train(
        &ModelConfig::with_variant(Variant::Concat),
        &bundle.train,
        &bundle.cache,
        &quick(2),
        |_| {},
    )
    .unwrap();
    let before = &out.binary_phase.params;
    let after = &out.model.params.params;
    assert!(before
        .iter()
        .filter(|(n, _)| n.starts_with("head.binary."))
        .all(|(n, v)| after[n] == v));
    assert!(before
        .iter()
        .filter(|(n, _)| n.starts_with("encoder."))
        .any(|(n, v)| after[n] != v));
}

#[test]
fn evaluation_is_pure_and_multiclass_uses_positives_only() {
    let bundle = small_bundle(80);
    let out = train(
        &ModelConfig::with_variant(Variant::CrossAtt),
        &bundle.train,
        &bundle.cache,
        &quick(1),
        |_| {},
    )
    .unwrap();
    let records = bundle.test.clone();
    let params = out.model.params.clone();
    let prov = Provenance::default();
    let first = evaluate(&out.model, &records, &bundle.cache, &prov).unwrap();
    let second = evaluate(&out.model, &records, &bundle.cache, &prov).unwrap();
    assert_eq!(first.to_json(), second.to_json());
    assert_eq!(records, bundle.test);
    assert_eq!(params, out.model.params);

    let positives: Vec<usize> = (0..records.len())
        .filter(|&i| records[i].type_code >= 0)
        .collect();
    let mc = first.multiclass.as_ref().unwrap();
    assert_eq!(mc.n_pairs, positives.len());
    let pred: Vec<i64> = positives
        .iter()
        .map(|&i| first.predictions[i].predicted_type as i64)
        .collect();
    let truth: Vec<i64> = positives.iter().map(|&i| records[i].type_code).collect();
    let (m, w) = f1_confusion(&pred, &truth, 86);
    assert!((mc.f1_macro - m).abs() <= 1e-12);
    assert!((mc.f1_weighted - w).abs() <= 1e-12);
    assert_eq!(mc.accuracy, accuracy_count(&pred, &truth));

    let scores: Vec<f64> = first.predictions.iter().map(|p| p.probability).collect();
    let labels: Vec<u8> = records.iter().map(PairRecord::binary_label).collect();
    assert!((first.binary.auc.unwrap() - auc_pairs(&scores, &labels)).abs() <= 1e-12);
    assert_eq!(first.binary.n_pairs, records.len());
    assert_eq!(first.attention.len(), 10);
}
