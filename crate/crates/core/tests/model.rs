mod common;

use common::oracles::interaction_edges;
use common::{graph, random_matrix, random_small, rng};
use ddi_core::chemgraph::{CachedGraph, FeatureSchema};
use ddi_core::model::{
    attention_summary, build_interaction_graph, mean_pool, ForwardOptions, GraphBatch,
    InteractionEdge, Mode, Model, ModelConfig, ModelError, PairBatch, Variant,
};
use ddi_core::numerics::Tape;
use ddi_core::rng::{shuffle, stream, Purpose};
use ndarray::{array, Array2};
use proptest::prelude::*;

fn model(variant: Variant, seed: u64) -> Model<f32> {
    Model::new(ModelConfig::with_variant(variant), seed).unwrap()
}

fn eval_outputs(
    m: &Model<f32>,
    pairs: &[(&CachedGraph, &CachedGraph)],
) -> (Array2<f32>, Array2<f32>) {
    let batch = PairBatch::<f32>::new(pairs);
    let mut t = Tape::new();
    let bound = m.params.bind(&mut t, |_| false);
    let out = m.forward(&mut t, &bound, &batch, Mode::Eval).unwrap();
    (
        t.value(out.binary_logits).clone(),
        t.value(out.class_logits).clone(),
    )
}

fn permuted(g: &CachedGraph, seed: u64) -> (CachedGraph, Vec<usize>) {
    let mut perm: Vec<usize> = (0..g.graph.n_atoms()).collect();
    shuffle(&mut perm, &mut stream(seed, Purpose::Shuffle));
    (
        CachedGraph::from_graph(g.graph.permuted(&perm), &FeatureSchema::default()),
        perm,
    )
}

#[test]
fn parameter_accounting() {
    let counts: Vec<_> = Variant::ALL
        .iter()
        .map(|&v| model(v, 1).count_params())
        .collect();
    let layer1 = 12 * (31 * 64) + 31 * 64 + (31 * 64 + 64) + 128;
    let deeper = 12 * (64 * 64) + 64 * 64 + (64 * 64 + 64) + 128;
    assert_eq!(12 * (31 * 64) + 31 * 64, 25_792);
    assert_eq!(counts[0].encoder, layer1 + 2 * deeper);
    assert_eq!(counts[0].encoder, 143_040);
    assert_eq!(counts[0].binary_head, 128 * 256 + 256 + 256 + 1);
    assert_eq!(counts[0].multiclass_head, 128 * 256 + 256 + 256 * 86 + 86);
    assert_eq!(counts[0].total, 231_447);
    assert_eq!(counts[1].cross_attention, 2 * (4 * (64 * 64 + 64) + 128));
    assert_eq!(counts[1].total - counts[0].total, 33_536);
    assert_eq!(counts[2].interaction, 2 * (64 * 64 + 64) + 128);
    assert_eq!(counts[2].total - counts[1].total, 8_448);
    for c in &counts {
        assert_eq!(
            c.total,
            c.encoder + c.cross_attention + c.interaction + c.binary_head + c.multiclass_head
        );
    }
}

#[test]
fn output_shapes_and_single_atoms() {
    let a = graph("C");
    let b = graph("[NH4+]");
    for v in Variant::ALL {
        let m = model(v, 2);
        let (bin, cls) = eval_outputs(&m, &[(&a, &b), (&b, &a)]);
        assert_eq!(bin.dim(), (2, 1));
        assert_eq!(cls.dim(), (2, 86));
        assert!(bin.iter().chain(cls.iter()).all(|x| x.is_finite()));
    }
    let m = model(Variant::Concat, 2);
    let mut t = Tape::new();
    let bound = m.params.bind(&mut t, |_| false);
    let (h, _) = m
        .encode(&mut t, &bound, &GraphBatch::new(&[&a]), Mode::Eval)
        .unwrap();
    assert_eq!(t.shape(h), (1, 64));
}

#[test]
fn pooling() {
    let one = array![[1.0, -2.0, 3.0]];
    assert_eq!(mean_pool(&one).unwrap().to_vec(), vec![1.0, -2.0, 3.0]);
    let twice = array![[0.5, 4.0], [0.5, 4.0]];
    assert_eq!(mean_pool(&twice).unwrap().to_vec(), vec![0.5, 4.0]);
    let empty = Array2::<f64>::zeros((0, 3));
    assert!(matches!(mean_pool(&empty), Err(ModelError::EmptyGraph)));
}

#[test]
fn siamese_encoding_is_slot_independent() {
    let mut r = rng(3);
    for v in Variant::ALL {
        let m = model(v, 3);
        for _ in 0..5 {
            let x = random_small(&mut r);
            let y = random_small(&mut r);
            let mut t = Tape::new();
            let bound = m.params.bind(&mut t, |_| false);
            let ab = PairBatch::<f32>::new(&[(&x, &y)]);
            let ba = PairBatch::<f32>::new(&[(&y, &x)]);
            let (h1, _) = m.encode(&mut t, &bound, &ab.graphs, Mode::Eval).unwrap();
            let (h2, _) = m.encode(&mut t, &bound, &ba.graphs, Mode::Eval).unwrap();
            let (nx, ny) = (x.graph.n_atoms(), y.graph.n_atoms());
            let (h1, h2) = (t.value(h1), t.value(h2));
            assert_eq!(
                h1.slice(ndarray::s![0..nx, ..]),
                h2.slice(ndarray::s![ny.., ..])
            );
            assert_eq!(
                h1.slice(ndarray::s![nx.., ..]),
                h2.slice(ndarray::s![0..ny, ..])
            );
        }
    }
}

#[test]
fn encoder_is_permutation_equivariant() {
    let m = model(Variant::Concat, 4);
    for (k, s) in ["CC(=O)Oc1ccccc1", "OCC[N+](C)C", "c1ccsc1", "CC(C)(C)Br"]
        .iter()
        .enumerate()
    {
        let g = graph(s);
        let (p, perm) = permuted(&g, k as u64);
        let mut t = Tape::new();
        let bound = m.params.bind(&mut t, |_| false);
        let (h, _) = m
            .encode(&mut t, &bound, &GraphBatch::new(&[&g]), Mode::Eval)
            .unwrap();
        let (hp, _) = m
            .encode(&mut t, &bound, &GraphBatch::new(&[&p]), Mode::Eval)
            .unwrap();
        let (h, hp) = (t.value(h), t.value(hp));
        for (old, &new) in perm.iter().enumerate() {
            for c in 0..64 {
                assert!((h[[old, c]] - hp[[new, c]]).abs() <= 1e-5);
            }
        }
    }
}

#[test]
fn concat_ignores_atom_order_but_attention_variants_see_slot_order() {
    let a = graph("CC(=O)Oc1ccccc1C(=O)O");
    let b = graph("OCC[N+](C)C");
    let (pb, _) = permuted(&b, 9);
    let m = model(Variant::Concat, 5);
    let (x, _) = eval_outputs(&m, &[(&a, &b)]);
    let (y, _) = eval_outputs(&m, &[(&a, &pb)]);
    assert!((x[[0, 0]] - y[[0, 0]]).abs() <= 1e-5);
    let m = model(Variant::CrossAtt, 5);
    let (ab, _) = eval_outputs(&m, &[(&a, &b)]);
    let (ba, _) = eval_outputs(&m, &[(&b, &a)]);
    assert_ne!(ab[[0, 0]], ba[[0, 0]]);
}

#[test]
fn attention_rows_are_distributions() {
    let mut r = rng(6);
    let m = model(Variant::CrossAtt, 6);
    let graphs: Vec<_> = (0..6).map(|_| random_small(&mut r)).collect();
    let pairs: Vec<_> = graphs.chunks(2).map(|c| (&c[0], &c[1])).collect();
    for pred in m.predict(&pairs).unwrap() {
        let maps = pred.attention.unwrap();
        assert_eq!(maps.a_to_b.len(), 4);
        for mat in maps.a_to_b.iter().chain(maps.b_to_a.iter()) {
            for row in mat.rows() {
                assert!((row.sum() - 1.0).abs() <= 1e-6);
                assert!(row.iter().all(|&p| p > 0.0));
            }
        }
    }
}

#[test]
fn attention_summary_cases() {
    let a = graph("CC(=O)Oc1ccccc1C(=O)O");
    let single = graph("[NH4+]");
    let m = model(Variant::CrossAtt, 7);
    let s = m.attention_summary(&a, &single, true).unwrap();
    assert_eq!(s.most_attended, 0);
    assert!((s.weights[0] - 1.0).abs() < 1e-9);
    let uniform = vec![Array2::from_elem((3, 4), 0.25f64); 4];
    let s = attention_summary(&uniform).unwrap();
    assert_eq!(s.most_attended, 0);
    assert!(s.weights.iter().all(|&w| (w - 0.25).abs() < 1e-15));
    assert!(matches!(
        model(Variant::Concat, 7).attention_summary(&a, &single, true),
        Err(ModelError::VariantHasNoAttention(Variant::Concat))
    ));
    // Brute force over the retained matrices.
    let b = graph("c1ccncc1");
    let pred = m.predict(&[(&a, &b)]).unwrap().pop().unwrap();
    let maps = pred.attention.unwrap();
    let s = m.attention_summary(&a, &b, true).unwrap();
    for j in 0..b.graph.n_atoms() {
        let mut total = 0.0;
        for h in &maps.a_to_b {
            for i in 0..a.graph.n_atoms() {
                total += h[[i, j]];
            }
        }
        let expect = total / (4 * a.graph.n_atoms()) as f64;
        assert!((s.weights[j] - expect).abs() < 1e-12);
    }
    let s_rev = m.attention_summary(&b, &a, false).unwrap();
    assert_eq!(s_rev.weights.len(), b.graph.n_atoms());
}

#[test]
fn removing_interaction_edges_changes_ternary_output() {
    let mut r = rng(8);
    let m = model(Variant::Ternary, 8);
    for _ in 0..5 {
        let a = random_small(&mut r);
        let b = random_small(&mut r);
        let batch = PairBatch::<f32>::new(&[(&a, &b)]);
        let run = |edges: bool| {
            let mut t = Tape::new();
            let bound = m.params.bind(&mut t, |_| false);
            let out = m
                .forward_with(
                    &mut t,
                    &bound,
                    &batch,
                    Mode::Eval,
                    ForwardOptions {
                        interaction_edges: edges,
                    },
                )
                .unwrap();
            assert_eq!(out.interaction.as_ref().unwrap().len(), 1);
            t.value(out.class_logits).clone()
        };
        let diff = (&run(true) - &run(false)).mapv(f32::abs).sum();
        assert!(diff > 0.0);
    }
}

#[test]
fn checkpoint_shapes_are_validated() {
    let m = model(Variant::CrossAtt, 9);
    assert!(Model::from_params(m.config.clone(), m.params.clone()).is_ok());
    assert!(matches!(
        Model::from_params(ModelConfig::with_variant(Variant::Concat), m.params.clone()),
        Err(ModelError::ConfigMismatch(_))
    ));
    let wide = ModelConfig {
        n_classes: 10,
        ..m.config.clone()
    };
    assert!(matches!(
        Model::from_params(wide, m.params),
        Err(ModelError::ConfigMismatch(_))
    ));
}

#[test]
fn bn_running_statistics_follow_momentum() {
    let mut m = model(Variant::Concat, 10);
    let a = graph("CCO");
    let batch = PairBatch::<f32>::new(&[(&a, &a)]);
    let mut t = Tape::new();
    let bound = m.params.bind(&mut t, |_| true);
    let key = ddi_core::rng::DropoutKey {
        seed: 1,
        phase: 1,
        epoch: 0,
        batch: 0,
    };
    let out = m.forward(&mut t, &bound, &batch, Mode::Train(key)).unwrap();
    assert_eq!(out.bn_updates.len(), 3);
    let u = out.bn_updates[0].clone();
    m.apply_bn_updates(&out.bn_updates).unwrap();
    let rm = m.params.buffer("encoder.layer0.bn.running_mean").unwrap();
    let rv = m.params.buffer("encoder.layer0.bn.running_var").unwrap();
    for c in 0..64 {
        assert!((rm[[0, c]] - 0.1 * u.mean[c]).abs() < 1e-7);
        assert!((rv[[0, c]] - (0.9 + 0.1 * u.var[c])).abs() < 1e-6);
    }
}

#[test]
fn interaction_graph_on_random_6x64_vs_5x64() {
    let mut r = rng(11);
    let ha = random_matrix(&mut r, 6, 64);
    let hb = random_matrix(&mut r, 5, 64);
    let got: Vec<_> = build_interaction_graph(ha.view(), hb.view(), 3)
        .iter()
        .map(|e| (e.a, e.b))
        .collect();
    assert_eq!(got, interaction_edges(&ha, &hb, 3));
}

proptest! {
    #[test]
    fn interaction_graph_matches_oracle(
        na in 1usize..=12,
        nb in 1usize..=12,
        k in 1usize..=4,
        seed in any::<u64>(),
        zero_rows in any::<bool>(),
    ) {
        let mut r = rng(seed);
        // Coarse values make exact cosine ties common.
        let mut ha = random_matrix(&mut r, na, 4).mapv(|v| (v * 2.0).round());
        let hb = random_matrix(&mut r, nb, 4).mapv(|v| (v * 2.0).round());
        if zero_rows {
            ha.row_mut(0).fill(0.0);
        }
        let edges: Vec<InteractionEdge> = build_interaction_graph(ha.view(), hb.view(), k);
        let got: Vec<_> = edges.iter().map(|e| (e.a, e.b)).collect();
        prop_assert_eq!(got, interaction_edges(&ha, &hb, k));
    }
}
