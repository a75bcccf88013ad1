//! Finite-difference suites shared by the gradient tests and the acceptance
//! run.

use super::{grad_check, grad_check_sampled, random_matrix, random_small, rng, weighted_sum};
use ddi_core::model::{Mode, Model, ModelConfig, PairBatch, Variant};
use ddi_core::numerics::{Tape, Var};
use ddi_core::rng::DropoutKey;
use indexmap::IndexMap;
use ndarray::{array, Array2};

pub type Report = Vec<(&'static str, f64)>;

fn check(
    out: &mut Report,
    name: &'static str,
    inputs: &[Array2<f64>],
    build: impl Fn(&mut Tape<f64>, &[Var]) -> Var,
) {
    out.push((name, grad_check(inputs, build)));
}

pub fn elementwise_and_linear() -> Report {
    let mut out = Vec::new();
    let mut r = rng(1);
    let a = random_matrix(&mut r, 3, 4);
    let b = random_matrix(&mut r, 3, 4);
    let w = random_matrix(&mut r, 4, 2);
    let row = random_matrix(&mut r, 1, 4);
    check(&mut out, "matmul", &[a.clone(), w.clone()], |t, v| {
        let y = t.matmul(v[0], v[1]).unwrap();
        weighted_sum(t, y, 10)
    });
    check(&mut out, "add", &[a.clone(), b.clone()], |t, v| {
        let y = t.add(v[0], v[1]).unwrap();
        weighted_sum(t, y, 11)
    });
    check(&mut out, "sub", &[a.clone(), b.clone()], |t, v| {
        let y = t.sub(v[0], v[1]).unwrap();
        weighted_sum(t, y, 12)
    });
    check(&mut out, "mul", &[a.clone(), b.clone()], |t, v| {
        let y = t.mul(v[0], v[1]).unwrap();
        weighted_sum(t, y, 13)
    });
    check(&mut out, "add_row", &[a.clone(), row.clone()], |t, v| {
        let y = t.add_row(v[0], v[1]).unwrap();
        weighted_sum(t, y, 14)
    });
    let bias = random_matrix(&mut r, 1, 2);
    check(&mut out, "linear", &[a.clone(), w, bias], |t, v| {
        let y = t.linear(v[0], v[1], v[2]).unwrap();
        weighted_sum(t, y, 15)
    });
    let c = random_matrix(&mut r, 3, 4);
    check(&mut out, "mul_const", std::slice::from_ref(&a), |t, v| {
        let y = t.mul_const(v[0], c.clone()).unwrap();
        weighted_sum(t, y, 16)
    });
    check(&mut out, "scale", std::slice::from_ref(&a), |t, v| {
        let y = t.scale(v[0], -1.7);
        weighted_sum(t, y, 17)
    });
    // Entries kept away from the kink.
    let away = a.mapv(|x| if x.abs() < 0.05 { x + 0.1 } else { x });
    check(&mut out, "relu", &[away], |t, v| {
        let y = t.relu(v[0]);
        weighted_sum(t, y, 18)
    });
    check(
        &mut out,
        "softmax_rows",
        std::slice::from_ref(&a),
        |t, v| {
            let y = t.softmax_rows(v[0]);
            weighted_sum(t, y, 19)
        },
    );
    check(&mut out, "sum", std::slice::from_ref(&a), |t, v| {
        let y = t.scale(v[0], 0.5);
        let y = t.mul(y, v[0]).unwrap();
        t.sum(y)
    });
    check(&mut out, "mean", &[a], |t, v| {
        let y = t.mul(v[0], v[0]).unwrap();
        t.mean(y)
    });
    out
}

pub fn indexing() -> Report {
    let mut out = Vec::new();
    let mut r = rng(2);
    let x = random_matrix(&mut r, 5, 3);
    let y = random_matrix(&mut r, 2, 3);
    let s = random_matrix(&mut r, 4, 1);
    check(&mut out, "gather_rows", std::slice::from_ref(&x), |t, v| {
        let g = t.gather_rows(v[0], &[4, 0, 0, 2]).unwrap();
        weighted_sum(t, g, 20)
    });
    check(&mut out, "slice_rows", std::slice::from_ref(&x), |t, v| {
        let g = t.slice_rows(v[0], 1..4).unwrap();
        weighted_sum(t, g, 21)
    });
    check(
        &mut out,
        "segment_mean",
        std::slice::from_ref(&x),
        |t, v| {
            let g = t.segment_mean(v[0], &[2, 0, 2, 2, 0], 4).unwrap();
            weighted_sum(t, g, 22)
        },
    );
    check(&mut out, "concat_cols", &[x.clone(), x.clone()], |t, v| {
        let g = t.concat_cols(&[v[0], v[1]]).unwrap();
        weighted_sum(t, g, 23)
    });
    check(&mut out, "concat_rows", &[x.clone(), y], |t, v| {
        let g = t.concat_rows(&[v[0], v[1]]).unwrap();
        weighted_sum(t, g, 24)
    });
    check(
        &mut out,
        "scale_rows",
        &[x.slice(ndarray::s![0..4, ..]).to_owned(), s],
        |t, v| {
            let g = t.scale_rows(v[0], v[1]).unwrap();
            weighted_sum(t, g, 25)
        },
    );
    check(&mut out, "row_cosine", &[x.clone(), x], |t, v| {
        let g = t
            .row_cosine(v[0], v[1], &[(0, 1), (2, 2), (4, 0), (3, 1)])
            .unwrap();
        weighted_sum(t, g, 26)
    });
    out
}

pub fn normalization() -> Report {
    let mut out = Vec::new();
    let mut r = rng(3);
    let x = random_matrix(&mut r, 6, 4);
    let gamma = random_matrix(&mut r, 1, 4);
    let beta = random_matrix(&mut r, 1, 4);
    check(
        &mut out,
        "batch_norm_train",
        &[x.clone(), gamma.clone(), beta.clone()],
        |t, v| {
            let (y, _, _) = t.batch_norm_train(v[0], v[1], v[2], 1e-5).unwrap();
            weighted_sum(t, y, 30)
        },
    );
    let rm = [0.1, -0.2, 0.3, 0.0];
    let rv = [1.5, 0.5, 2.0, 1.0];
    check(
        &mut out,
        "batch_norm_eval",
        &[x.clone(), gamma.clone(), beta.clone()],
        |t, v| {
            let y = t.batch_norm_eval(v[0], v[1], v[2], &rm, &rv, 1e-5).unwrap();
            weighted_sum(t, y, 31)
        },
    );
    check(&mut out, "layer_norm", &[x.clone(), gamma, beta], |t, v| {
        let y = t.layer_norm(v[0], v[1], v[2], 1e-5).unwrap();
        weighted_sum(t, y, 32)
    });
    check(&mut out, "dropout", &[x], |t, v| {
        let y = t.dropout(v[0], 0.3, &mut rng(33)).unwrap();
        weighted_sum(t, y, 34)
    });
    out
}

pub fn message_and_attention() -> Report {
    let mut out = Vec::new();
    let mut r = rng(4);
    let h = random_matrix(&mut r, 5, 3);
    let theta = random_matrix(&mut r, 2, 3 * 4);
    check(&mut out, "edge_message", &[h.clone(), theta], |t, v| {
        let m = t
            .edge_message(v[0], v[1], &[0, 1, 1, 4, 3], &[0, 1, 0, 1, 1], 4)
            .unwrap();
        weighted_sum(t, m, 40)
    });
    let q = random_matrix(&mut r, 5, 4);
    let k = random_matrix(&mut r, 6, 4);
    let vv = random_matrix(&mut r, 6, 4);
    check(&mut out, "pair_attention", &[q, k, vv], |t, v| {
        let (o, _) = t
            .pair_attention(v[0], v[1], v[2], &[0..2, 2..5], &[0..4, 4..6], 2)
            .unwrap();
        weighted_sum(t, o, 41)
    });
    out
}

pub fn losses() -> Report {
    let mut out = Vec::new();
    let logits = array![[0.3], [-1.2], [2.0], [0.0]];
    check(&mut out, "bce_with_logits", &[logits], |t, v| {
        t.bce_with_logits(v[0], &[1.0, 0.0, 0.0, 1.0]).unwrap()
    });
    let mut r = rng(5);
    let z = random_matrix(&mut r, 4, 5);
    check(&mut out, "masked_cross_entropy", &[z], |t, v| {
        t.masked_cross_entropy(v[0], &[2, -1, 4, 0]).unwrap().0
    });
    out
}

/// Gradient of the summed binary and multi-class losses of a two-pair batch
/// with respect to every parameter tensor of a full model.
pub fn full_model_error(variant: Variant, seed: u64) -> f64 {
    let mut r = rng(seed);
    let graphs: Vec<_> = (0..4).map(|_| random_small(&mut r)).collect();
    let pairs = [(&graphs[0], &graphs[1]), (&graphs[2], &graphs[3])];
    let batch = PairBatch::<f64>::new(&pairs);
    let model = Model::<f64>::new(ModelConfig::with_variant(variant), seed).unwrap();
    let names: Vec<String> = model.params.params.keys().cloned().collect();
    let values: Vec<Array2<f64>> = model.params.params.values().cloned().collect();
    let key = DropoutKey {
        seed,
        phase: 1,
        epoch: 0,
        batch: 0,
    };
    grad_check_sampled(&values, 6, seed, |t, vars| {
        let bound: IndexMap<String, Var> =
            names.iter().cloned().zip(vars.iter().copied()).collect();
        let out = model.forward(t, &bound, &batch, Mode::Train(key)).unwrap();
        let bce = t.bce_with_logits(out.binary_logits, &[1.0, 0.0]).unwrap();
        let (ce, _) = t.masked_cross_entropy(out.class_logits, &[7, 40]).unwrap();
        t.add(bce, ce).unwrap()
    })
}

/// Every primitive with its worst relative error.
pub fn primitives() -> Report {
    let mut all = elementwise_and_linear();
    all.extend(indexing());
    all.extend(normalization());
    all.extend(message_and_attention());
    all.extend(losses());
    all
}
