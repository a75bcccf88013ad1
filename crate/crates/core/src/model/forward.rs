use indexmap::IndexMap;
use ndarray::{s, Array1, Array2, Axis};
use serde::{Deserialize, Serialize};

use super::init::{init_params, DIRECTIONS, PROJECTIONS};
use super::interaction::{build_interaction_graph, InteractionEdge};
use super::{GraphBatch, Mode, ModelConfig, ModelError, PairBatch, Variant};
use crate::chemgraph::CachedGraph;
use crate::numerics::{sigmoid, softmax_rows, ParamStore, Real, Tape, Var};

pub const BN_EPS: f64 = 1e-5;
pub const BN_MOMENTUM: f64 = 0.1;
pub const LN_EPS: f64 = 1e-5;

/// Dropout stream ids for the two heads; encoder layer `l` uses id `l`.
const BINARY_HEAD_LAYER: u8 = 10;
const MULTICLASS_HEAD_LAYER: u8 = 11;

/// Batch statistics produced by one train-mode batch-norm call.
#[derive(Clone, Debug, PartialEq)]
pub struct BnUpdate<T> {
    pub prefix: String,
    pub mean: Vec<T>,
    pub var: Vec<T>,
}

/// Attention probabilities of one pair, one matrix per head.
/// `a_to_b[h]` is `n_A × n_B` (A atoms querying B), `b_to_a[h]` is `n_B × n_A`.
#[derive(Clone, Debug, PartialEq)]
pub struct AttentionMaps<T> {
    pub a_to_b: Vec<Array2<T>>,
    pub b_to_a: Vec<Array2<T>>,
}

pub struct Outputs<T> {
    /// `P × 1`.
    pub binary_logits: Var,
    /// `P × n_classes`.
    pub class_logits: Var,
    /// `P × 2·hidden`.
    pub pair_embeddings: Var,
    /// Per pair, for the attention variants.
    pub attention: Option<Vec<AttentionMaps<T>>>,
    /// Per pair, for Ternary.
    pub interaction: Option<Vec<Vec<InteractionEdge>>>,
    pub bn_updates: Vec<BnUpdate<T>>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ParamCount {
    pub encoder: usize,
    pub cross_attention: usize,
    pub interaction: usize,
    pub binary_head: usize,
    pub multiclass_head: usize,
    pub total: usize,
}

#[derive(Clone, Debug, PartialEq)]
pub struct PairPrediction {
    pub probability: f64,
    pub class_probs: Vec<f64>,
    pub attention: Option<AttentionMaps<f64>>,
}

impl PairPrediction {
    /// Most probable interaction type and its probability.
    pub fn predicted_type(&self) -> (usize, f64) {
        let mut best = 0;
        for (k, &p) in self.class_probs.iter().enumerate() {
            if p > self.class_probs[best] {
                best = k;
            }
        }
        (best, self.class_probs.get(best).copied().unwrap_or(0.0))
    }
}

/// Head- and query-averaged attention over key atoms.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct AttentionSummary {
    pub weights: Vec<f64>,
    /// Argmax of `weights`; the lowest index wins ties.
    pub most_attended: usize,
}

/// Averages per-head `queries × keys` attention matrices over heads and
/// query rows. `None` when there is nothing to average.
pub fn attention_summary<T: Real>(per_head: &[Array2<T>]) -> Option<AttentionSummary> {
    let first = per_head.first()?;
    let (nq, nk) = first.dim();
    if nq == 0 || nk == 0 {
        return None;
    }
    let mut weights = vec![0.0; nk];
    for m in per_head {
        for row in m.rows() {
            for (w, &v) in weights.iter_mut().zip(row.iter()) {
                *w += v.to_f64();
            }
        }
    }
    let denom = (per_head.len() * nq) as f64;
    weights.iter_mut().for_each(|w| *w /= denom);
    let mut most_attended = 0;
    for (j, &w) in weights.iter().enumerate() {
        if w > weights[most_attended] {
            most_attended = j;
        }
    }
    Some(AttentionSummary {
        weights,
        most_attended,
    })
}

/// Mean over the atom rows of one molecule.
pub fn mean_pool<T: Real>(atoms: &Array2<T>) -> Result<Array1<T>, ModelError> {
    if atoms.nrows() == 0 {
        return Err(ModelError::EmptyGraph);
    }
    let n = T::of(atoms.nrows() as f64);
    Ok(atoms.sum_axis(Axis(0)).mapv(|v| v / n))
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct ForwardOptions {
    /// Ternary only: when false, the combined-graph convolution sees the
    /// intra-molecular bonds alone.
    pub interaction_edges: bool,
}

impl Default for ForwardOptions {
    fn default() -> Self {
        Self {
            interaction_edges: true,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Model<T> {
    pub config: ModelConfig,
    pub params: ParamStore<T>,
}

struct Ctx<'a, T: Real> {
    tape: &'a mut Tape<T>,
    bound: &'a IndexMap<String, Var>,
    params: &'a ParamStore<T>,
    mode: Mode,
    updates: Vec<BnUpdate<T>>,
}

impl<T: Real> Ctx<'_, T> {
    fn p(&self, name: &str) -> Result<Var, ModelError> {
        self.bound
            .get(name)
            .copied()
            .ok_or_else(|| ModelError::MissingParam(name.to_string()))
    }

    fn linear(&mut self, x: Var, name: &str) -> Result<Var, ModelError> {
        let w = self.p(&format!("{name}.weight"))?;
        let b = self.p(&format!("{name}.bias"))?;
        Ok(self.tape.linear(x, w, b)?)
    }

    fn batch_norm(&mut self, x: Var, prefix: &str) -> Result<Var, ModelError> {
        let gamma = self.p(&format!("{prefix}.gamma"))?;
        let beta = self.p(&format!("{prefix}.beta"))?;
        match self.mode {
            Mode::Train(_) => {
                let (y, mean, var) = self.tape.batch_norm_train(x, gamma, beta, BN_EPS)?;
                self.updates.push(BnUpdate {
                    prefix: prefix.to_string(),
                    mean,
                    var,
                });
                Ok(y)
            }
            Mode::Eval => {
                let buffer = |suffix: &str| {
                    let name = format!("{prefix}.{suffix}");
                    self.params
                        .buffer(&name)
                        .map(|b| b.iter().copied().collect::<Vec<T>>())
                        .ok_or(ModelError::MissingParam(name))
                };
                let (rm, rv) = (buffer("running_mean")?, buffer("running_var")?);
                Ok(self
                    .tape
                    .batch_norm_eval(x, gamma, beta, &rm, &rv, BN_EPS)?)
            }
        }
    }

    fn dropout(&mut self, x: Var, p: f64, layer: u8) -> Result<Var, ModelError> {
        match self.mode {
            Mode::Train(key) if p > 0.0 => {
                let mut rng = key.rng(layer);
                Ok(self.tape.dropout(x, p, &mut rng)?)
            }
            _ => Ok(x),
        }
    }
}

impl<T: Real> Model<T> {
    pub fn new(config: ModelConfig, seed: u64) -> Result<Self, ModelError> {
        config.validate()?;
        let params = init_params(&config, seed);
        Ok(Self { config, params })
    }

    /// Wraps existing parameters after checking that every expected tensor is
    /// present with the expected shape and nothing else is.
    pub fn from_params(config: ModelConfig, params: ParamStore<T>) -> Result<Self, ModelError> {
        config.validate()?;
        let reference: ParamStore<T> = init_params(&config, 0);
        let check = |kind: &str,
                     want: &IndexMap<String, Array2<T>>,
                     got: &IndexMap<String, Array2<T>>|
         -> Result<(), ModelError> {
            for (k, v) in want {
                match got.get(k) {
                    Some(g) if g.dim() == v.dim() => {}
                    Some(g) => {
                        return Err(ModelError::ConfigMismatch(format!(
                            "{kind} {k} has shape {:?}, expected {:?}",
                            g.dim(),
                            v.dim()
                        )))
                    }
                    None => return Err(ModelError::ConfigMismatch(format!("{kind} {k} missing"))),
                }
            }
            if let Some(extra) = got.keys().find(|k| !want.contains_key(*k)) {
                return Err(ModelError::ConfigMismatch(format!(
                    "unexpected {kind} {extra}"
                )));
            }
            Ok(())
        };
        check("parameter", &reference.params, &params.params)?;
        check("buffer", &reference.buffers, &params.buffers)?;
        Ok(Self { config, params })
    }

    pub fn variant(&self) -> Variant {
        self.config.variant
    }

    pub fn count_params(&self) -> ParamCount {
        let c = |p: &str| self.params.count_prefix(p);
        ParamCount {
            encoder: c("encoder."),
            cross_attention: c("cross_attention."),
            interaction: c("interaction."),
            binary_head: c("head.binary."),
            multiclass_head: c("head.multiclass."),
            total: self.params.count(),
        }
    }

    /// Folds train-mode batch statistics into the running estimates:
    /// `running ← (1 − momentum)·running + momentum·batch`.
    pub fn apply_bn_updates(&mut self, updates: &[BnUpdate<T>]) -> Result<(), ModelError> {
        let m = T::of(BN_MOMENTUM);
        for u in updates {
            for (suffix, stat) in [("running_mean", &u.mean), ("running_var", &u.var)] {
                let name = format!("{}.{suffix}", u.prefix);
                let buf = self
                    .params
                    .buffers
                    .get_mut(&name)
                    .ok_or_else(|| ModelError::MissingParam(name.clone()))?;
                for (r, &b) in buf.iter_mut().zip(stat.iter()) {
                    *r = (T::one() - m) * *r + m * b;
                }
            }
        }
        Ok(())
    }

    /// Shared encoder over a disjoint union of molecules; returns per-atom
    /// embeddings (`n_atoms × hidden`) and the batch-norm statistics.
    pub fn encode(
        &self,
        tape: &mut Tape<T>,
        bound: &IndexMap<String, Var>,
        graphs: &GraphBatch<T>,
        mode: Mode,
    ) -> Result<(Var, Vec<BnUpdate<T>>), ModelError> {
        let mut ctx = Ctx {
            tape,
            bound,
            params: &self.params,
            mode,
            updates: Vec::new(),
        };
        let h = self.encode_in(&mut ctx, graphs)?;
        Ok((h, ctx.updates))
    }

    fn encode_in(&self, ctx: &mut Ctx<'_, T>, g: &GraphBatch<T>) -> Result<Var, ModelError> {
        let hidden = self.config.hidden_dim;
        let mut h = ctx.tape.constant(g.atom_features.clone());
        let edge_types = ctx.tape.constant(g.edge_types.clone());
        for l in 0..self.config.n_mp_layers {
            let name = format!("encoder.layer{l}");
            let mut z = ctx.linear(h, &format!("{name}.root"))?;
            if !g.arc_src.is_empty() {
                let theta = ctx.linear(edge_types, &format!("{name}.edge_net"))?;
                let msgs = ctx
                    .tape
                    .edge_message(h, theta, &g.arc_src, &g.arc_type, hidden)?;
                let agg = ctx.tape.segment_mean(msgs, &g.arc_dst, g.n_atoms())?;
                z = ctx.tape.add(z, agg)?;
            }
            let z = ctx.batch_norm(z, &format!("{name}.bn"))?;
            let z = ctx.tape.relu(z);
            h = ctx.dropout(z, self.config.dropout_p, l as u8)?;
        }
        Ok(h)
    }

    /// One direction of cross-attention:
    /// `LayerNorm(Hq + MHA(Hq Wq, Hkv Wk, Hkv Wv) Wo)`.
    fn attend(
        &self,
        ctx: &mut Ctx<'_, T>,
        dir: &str,
        hq: Var,
        hkv: Var,
        q_ranges: &[std::ops::Range<usize>],
        kv_ranges: &[std::ops::Range<usize>],
    ) -> Result<(Var, Vec<Array2<T>>), ModelError> {
        let name = format!("cross_attention.{dir}");
        let q = ctx.linear(hq, &format!("{name}.{}", PROJECTIONS[0]))?;
        let k = ctx.linear(hkv, &format!("{name}.{}", PROJECTIONS[1]))?;
        let v = ctx.linear(hkv, &format!("{name}.{}", PROJECTIONS[2]))?;
        let (o, probs) =
            ctx.tape
                .pair_attention(q, k, v, q_ranges, kv_ranges, self.config.n_heads)?;
        let o = ctx.linear(o, &format!("{name}.{}", PROJECTIONS[3]))?;
        let r = ctx.tape.add(hq, o)?;
        let gamma = ctx.p(&format!("{name}.norm.gamma"))?;
        let beta = ctx.p(&format!("{name}.norm.beta"))?;
        Ok((ctx.tape.layer_norm(r, gamma, beta, LN_EPS)?, probs))
    }

    fn cross_attention(
        &self,
        ctx: &mut Ctx<'_, T>,
        batch: &PairBatch<T>,
        h: Var,
    ) -> Result<(Var, Vec<AttentionMaps<T>>), ModelError> {
        let n_a = batch.n_a_atoms();
        let n = batch.graphs.n_atoms();
        let ha = ctx.tape.slice_rows(h, 0..n_a)?;
        let hb = ctx.tape.slice_rows(h, n_a..n)?;
        let a_ranges: Vec<_> = (0..batch.n_pairs).map(|p| batch.a_range(p)).collect();
        let b_ranges: Vec<_> = (0..batch.n_pairs)
            .map(|p| {
                let r = batch.b_range(p);
                r.start - n_a..r.end - n_a
            })
            .collect();
        let (ha2, ab) = self.attend(ctx, DIRECTIONS[0], ha, hb, &a_ranges, &b_ranges)?;
        let (hb2, ba) = self.attend(ctx, DIRECTIONS[1], hb, ha, &b_ranges, &a_ranges)?;
        let heads = self.config.n_heads;
        let maps = (0..batch.n_pairs)
            .map(|p| AttentionMaps {
                a_to_b: ab[p * heads..(p + 1) * heads].to_vec(),
                b_to_a: ba[p * heads..(p + 1) * heads].to_vec(),
            })
            .collect();
        Ok((ctx.tape.concat_rows(&[ha2, hb2])?, maps))
    }

    /// Convolution over the combined graph: intra-molecular bonds with gate
    /// 1 plus top-k inter-molecular edges gated by cosine similarity.
    fn ternary(
        &self,
        ctx: &mut Ctx<'_, T>,
        batch: &PairBatch<T>,
        h: Var,
        inter_edges: bool,
    ) -> Result<(Var, Vec<Vec<InteractionEdge>>), ModelError> {
        let g = &batch.graphs;
        let mut edges = Vec::with_capacity(batch.n_pairs);
        let mut pairs = Vec::new();
        {
            let hv = ctx.tape.value(h);
            for p in 0..batch.n_pairs {
                let (ra, rb) = (batch.a_range(p), batch.b_range(p));
                let e = build_interaction_graph(
                    hv.slice(s![ra.clone(), ..]),
                    hv.slice(s![rb.clone(), ..]),
                    self.config.topk,
                );
                pairs.extend(e.iter().map(|x| (ra.start + x.a, rb.start + x.b)));
                edges.push(e);
            }
        }
        let nbr = ctx.linear(h, "interaction.neighbor")?;
        let mut parts = Vec::new();
        let mut dst = Vec::new();
        if !g.arc_src.is_empty() {
            parts.push(ctx.tape.gather_rows(nbr, &g.arc_src)?);
            dst.extend_from_slice(&g.arc_dst);
        }
        if inter_edges && !pairs.is_empty() {
            let gates = ctx.tape.row_cosine(h, h, &pairs)?;
            let arc_gate: Vec<usize> = (0..pairs.len()).flat_map(|e| [e, e]).collect();
            let src: Vec<usize> = pairs.iter().flat_map(|&(a, b)| [a, b]).collect();
            dst.extend(pairs.iter().flat_map(|&(a, b)| [b, a]));
            let gates = ctx.tape.gather_rows(gates, &arc_gate)?;
            let msgs = ctx.tape.gather_rows(nbr, &src)?;
            parts.push(ctx.tape.scale_rows(msgs, gates)?);
        }
        let mut z = ctx.linear(h, "interaction.self")?;
        if !parts.is_empty() {
            let msgs = ctx.tape.concat_rows(&parts)?;
            let agg = ctx.tape.segment_mean(msgs, &dst, g.n_atoms())?;
            z = ctx.tape.add(z, agg)?;
        }
        let z = ctx.batch_norm(z, "interaction.bn")?;
        Ok((ctx.tape.relu(z), edges))
    }

    fn head(&self, ctx: &mut Ctx<'_, T>, x: Var, name: &str, layer: u8) -> Result<Var, ModelError> {
        let z = ctx.linear(x, &format!("head.{name}.hidden"))?;
        let z = ctx.tape.relu(z);
        let z = ctx.dropout(z, self.config.dropout_p, layer)?;
        ctx.linear(z, &format!("head.{name}.out"))
    }

    /// Full forward pass. The model itself is not modified; train-mode
    /// batch-norm statistics come back in [`Outputs::bn_updates`].
    pub fn forward(
        &self,
        tape: &mut Tape<T>,
        bound: &IndexMap<String, Var>,
        batch: &PairBatch<T>,
        mode: Mode,
    ) -> Result<Outputs<T>, ModelError> {
        self.forward_with(tape, bound, batch, mode, ForwardOptions::default())
    }

    pub fn forward_with(
        &self,
        tape: &mut Tape<T>,
        bound: &IndexMap<String, Var>,
        batch: &PairBatch<T>,
        mode: Mode,
        options: ForwardOptions,
    ) -> Result<Outputs<T>, ModelError> {
        if batch.n_pairs == 0 {
            return Err(ModelError::EmptyGraph);
        }
        let mut ctx = Ctx {
            tape,
            bound,
            params: &self.params,
            mode,
            updates: Vec::new(),
        };
        let mut h = self.encode_in(&mut ctx, &batch.graphs)?;
        let mut attention = None;
        let mut interaction = None;
        if self.config.variant.has_attention() {
            let (h2, maps) = self.cross_attention(&mut ctx, batch, h)?;
            h = h2;
            attention = Some(maps);
        }
        if self.config.variant == Variant::Ternary {
            let (h3, edges) = self.ternary(&mut ctx, batch, h, options.interaction_edges)?;
            h = h3;
            interaction = Some(edges);
        }
        let pooled =
            ctx.tape
                .segment_mean(h, &batch.graphs.atom_mol, batch.graphs.n_molecules())?;
        let p = batch.n_pairs;
        let za = ctx.tape.slice_rows(pooled, 0..p)?;
        let zb = ctx.tape.slice_rows(pooled, p..2 * p)?;
        let pair_embeddings = ctx.tape.concat_cols(&[za, zb])?;
        let binary_logits = self.head(&mut ctx, pair_embeddings, "binary", BINARY_HEAD_LAYER)?;
        let class_logits = self.head(
            &mut ctx,
            pair_embeddings,
            "multiclass",
            MULTICLASS_HEAD_LAYER,
        )?;
        Ok(Outputs {
            binary_logits,
            class_logits,
            pair_embeddings,
            attention,
            interaction,
            bn_updates: ctx.updates,
        })
    }

    /// Eval-mode attention summary for one pair. With `query_is_a` the A
    /// atoms are the queries and the weights range over B atoms; otherwise
    /// the reverse direction is summarized.
    pub fn attention_summary(
        &self,
        a: &CachedGraph,
        b: &CachedGraph,
        query_is_a: bool,
    ) -> Result<AttentionSummary, ModelError> {
        if !self.config.variant.has_attention() {
            return Err(ModelError::VariantHasNoAttention(self.config.variant));
        }
        let pred = self
            .predict(&[(a, b)])?
            .pop()
            .ok_or(ModelError::EmptyGraph)?;
        let maps = pred
            .attention
            .ok_or(ModelError::VariantHasNoAttention(self.config.variant))?;
        let per_head = if query_is_a {
            &maps.a_to_b
        } else {
            &maps.b_to_a
        };
        attention_summary(per_head).ok_or(ModelError::EmptyGraph)
    }

    /// Eval-mode predictions for a list of `(A, B)` pairs.
    pub fn predict(
        &self,
        pairs: &[(&CachedGraph, &CachedGraph)],
    ) -> Result<Vec<PairPrediction>, ModelError> {
        if pairs.is_empty() {
            return Ok(Vec::new());
        }
        let batch = PairBatch::<T>::new(pairs);
        let mut tape = Tape::new();
        let bound = self.params.bind(&mut tape, |_| false);
        let out = self.forward(&mut tape, &bound, &batch, Mode::Eval)?;
        let logits = tape.value(out.binary_logits);
        let class = softmax_rows(tape.value(out.class_logits));
        let mut attention = out.attention.map(|v| v.into_iter());
        Ok((0..pairs.len())
            .map(|p| PairPrediction {
                probability: sigmoid(logits[[p, 0]]).to_f64(),
                class_probs: class.row(p).iter().map(|&v| v.to_f64()).collect(),
                attention: attention
                    .as_mut()
                    .and_then(|it| it.next())
                    .map(|m| AttentionMaps {
                        a_to_b: m.a_to_b.iter().map(|a| a.mapv(Real::to_f64)).collect(),
                        b_to_a: m.b_to_a.iter().map(|a| a.mapv(Real::to_f64)).collect(),
                    }),
            })
            .collect())
    }
}
