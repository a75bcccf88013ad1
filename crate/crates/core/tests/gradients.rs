mod common;

use common::suites::{self, Report};
use ddi_core::model::Variant;

const TOL: f64 = 1e-4;

fn assert_within(report: Report) {
    for (name, err) in report {
        assert!(err <= TOL, "{name}: max relative error {err:e}");
    }
}

#[test]
fn elementwise_and_linear_primitives() {
    assert_within(suites::elementwise_and_linear());
}

#[test]
fn indexing_primitives() {
    assert_within(suites::indexing());
}

#[test]
fn normalization_primitives() {
    assert_within(suites::normalization());
}

#[test]
fn message_and_attention_primitives() {
    assert_within(suites::message_and_attention());
}

#[test]
fn loss_primitives() {
    assert_within(suites::losses());
}

#[test]
fn full_variants_match_finite_differences() {
    for variant in Variant::ALL {
        for seed in [11, 12] {
            let err = suites::full_model_error(variant, seed);
            assert!(
                err <= TOL,
                "{variant} seed {seed}: max relative error {err:e}"
            );
        }
    }
}
