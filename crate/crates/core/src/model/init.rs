use ndarray::Array2;

use super::{ModelConfig, Variant};
use crate::numerics::{ParamStore, Real};
use crate::rng::{self, Purpose, StreamRng};

pub(crate) const DIRECTIONS: [&str; 2] = ["a_to_b", "b_to_a"];
pub(crate) const PROJECTIONS: [&str; 4] = ["query", "key", "value", "output"];

struct Init {
    rng: StreamRng,
}

impl Init {
    /// Uniform in `±1/√fan_in`.
    fn uniform<T: Real>(&mut self, rows: usize, cols: usize, fan_in: usize) -> Array2<T> {
        let bound = 1.0 / (fan_in as f64).sqrt();
        Array2::from_shape_simple_fn((rows, cols), || {
            T::of((2.0 * rng::unit_f64(&mut self.rng) - 1.0) * bound)
        })
    }

    fn linear<T: Real>(
        &mut self,
        store: &mut ParamStore<T>,
        name: &str,
        fan_in: usize,
        fan_out: usize,
    ) {
        store.insert(
            format!("{name}.weight"),
            self.uniform(fan_in, fan_out, fan_in),
        );
        store.insert(format!("{name}.bias"), self.uniform(1, fan_out, fan_in));
    }
}

fn affine<T: Real>(store: &mut ParamStore<T>, name: &str, d: usize) {
    store.insert(format!("{name}.gamma"), Array2::ones((1, d)));
    store.insert(format!("{name}.beta"), Array2::zeros((1, d)));
}

fn batch_norm<T: Real>(store: &mut ParamStore<T>, name: &str, d: usize) {
    affine(store, name, d);
    store.insert_buffer(format!("{name}.running_mean"), Array2::zeros((1, d)));
    store.insert_buffer(format!("{name}.running_var"), Array2::ones((1, d)));
}

/// Fresh parameters in a fixed insertion order, drawn from the `Init` stream
/// of `seed`.
pub(crate) fn init_params<T: Real>(cfg: &ModelConfig, seed: u64) -> ParamStore<T> {
    let mut init = Init {
        rng: rng::stream(seed, Purpose::Init),
    };
    let mut store = ParamStore::default();
    let h = cfg.hidden_dim;
    for l in 0..cfg.n_mp_layers {
        let in_dim = if l == 0 { cfg.atom_dim } else { h };
        let name = format!("encoder.layer{l}");
        init.linear(
            &mut store,
            &format!("{name}.edge_net"),
            cfg.bond_dim,
            in_dim * h,
        );
        init.linear(&mut store, &format!("{name}.root"), in_dim, h);
        batch_norm(&mut store, &format!("{name}.bn"), h);
    }
    if matches!(cfg.variant, Variant::CrossAtt | Variant::Ternary) {
        for dir in DIRECTIONS {
            for proj in PROJECTIONS {
                init.linear(&mut store, &format!("cross_attention.{dir}.{proj}"), h, h);
            }
            affine(&mut store, &format!("cross_attention.{dir}.norm"), h);
        }
    }
    if cfg.variant == Variant::Ternary {
        init.linear(&mut store, "interaction.self", h, h);
        init.linear(&mut store, "interaction.neighbor", h, h);
        batch_norm(&mut store, "interaction.bn", h);
    }
    for (head, out) in [("binary", 1), ("multiclass", cfg.n_classes)] {
        init.linear(
            &mut store,
            &format!("head.{head}.hidden"),
            2 * h,
            cfg.head_hidden,
        );
        init.linear(
            &mut store,
            &format!("head.{head}.out"),
            cfg.head_hidden,
            out,
        );
    }
    store
}
