use std::hint::black_box;

use criterion::{criterion_group, criterion_main, BatchSize, Criterion};
use ddi_core::chemgraph::{parse_smiles, CachedGraph, FeatureSchema};
use ddi_core::model::{Mode, Model, ModelConfig, PairBatch, Variant};
use ddi_core::numerics::{Adam, AdamConfig, StepSchedule, Tape};
use ddi_core::rng::DropoutKey;
use indexmap::IndexMap;
use ndarray::Array2;

const MOLECULES: [&str; 8] = [
    "CC(=O)Oc1ccccc1C(=O)O",
    "CN1C=NC2=C1C(=O)N(C(=O)N2C)C",
    "CC(C)Cc1ccc(cc1)C(C)C(=O)O",
    "OC(=O)CCc1ccc(Cl)cc1",
    "C1CCC(CC1)NC(=O)N",
    "c1ccc2ccccc2c1",
    "CC[N+](C)(C)CCO",
    "O=S(=O)(N)c1ccc(F)cc1",
];

fn graphs() -> Vec<CachedGraph> {
    let schema = FeatureSchema::default();
    MOLECULES
        .iter()
        .map(|s| CachedGraph::from_smiles(s, &schema).unwrap())
        .collect()
}

/// 32 pairs cycling through the molecule list.
fn pairs(g: &[CachedGraph]) -> Vec<(&CachedGraph, &CachedGraph)> {
    (0..32)
        .map(|i| (&g[i % g.len()], &g[(i * 3 + 1) % g.len()]))
        .collect()
}

fn smiles(c: &mut Criterion) {
    c.bench_function("parse_smiles/8 drugs", |b| {
        b.iter(|| {
            for s in MOLECULES {
                black_box(parse_smiles(black_box(s)).unwrap());
            }
        })
    });
}

fn forward(c: &mut Criterion) {
    let g = graphs();
    let p = pairs(&g);
    let batch = PairBatch::<f32>::new(&p);
    for v in Variant::ALL {
        let model = Model::<f32>::new(ModelConfig::with_variant(v), 1).unwrap();
        c.bench_function(&format!("forward/{}/32 pairs", v.name()), |b| {
            b.iter(|| {
                let mut t = Tape::new();
                let bound = model.params.bind(&mut t, |_| false);
                black_box(model.forward(&mut t, &bound, &batch, Mode::Eval).unwrap());
            })
        });
    }
}

fn train_step(c: &mut Criterion) {
    let g = graphs();
    let p = pairs(&g);
    let batch = PairBatch::<f32>::new(&p);
    let labels: Vec<f32> = (0..p.len()).map(|i| (i % 2) as f32).collect();
    let schedule = StepSchedule::default();
    for v in Variant::ALL {
        let model = Model::<f32>::new(ModelConfig::with_variant(v), 1).unwrap();
        c.bench_function(&format!("train_step/{}/32 pairs", v.name()), |b| {
            b.iter_batched(
                || (model.clone(), Adam::<f32>::new(AdamConfig::default())),
                |(mut m, mut adam)| {
                    let mut t = Tape::new();
                    let bound = m.params.bind(&mut t, |_| true);
                    let key = DropoutKey {
                        seed: 1,
                        phase: 1,
                        epoch: 0,
                        batch: 0,
                    };
                    let out = m.forward(&mut t, &bound, &batch, Mode::Train(key)).unwrap();
                    let loss = t.bce_with_logits(out.binary_logits, &labels).unwrap();
                    let mut grads = t.backward(loss).unwrap();
                    let named: IndexMap<String, Array2<f32>> = bound
                        .iter()
                        .map(|(n, &v)| (n.clone(), grads.take(v)))
                        .collect();
                    adam.step(&mut m.params, &named, &schedule, 0).unwrap();
                    m.apply_bn_updates(&out.bn_updates).unwrap();
                    black_box(m)
                },
                BatchSize::LargeInput,
            )
        });
    }
}

criterion_group! {
    name = benches;
    config = Criterion::default().sample_size(20);
    targets = smiles, forward, train_step
}
criterion_main!(benches);
