use indexmap::IndexMap;
use ndarray::Array2;
use serde::{Deserialize, Serialize};

use super::PipelineError;
use crate::chemgraph::{CachedGraph, GraphCache};
use crate::data::PairRecord;
use crate::model::{Mode, Model, ModelConfig, PairBatch};
use crate::numerics::{Adam, AdamConfig, ParamStore, StepSchedule, Tape};
use crate::rng::{self, DropoutKey, Purpose};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainConfig {
    /// Epochs per phase.
    pub epochs: u32,
    pub batch_size: usize,
    pub seed: u64,
    pub schedule: StepSchedule,
    pub adam: AdamConfig,
    /// Phase 2 trains only the multi-class head when set.
    pub freeze_trunk: bool,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            epochs: 60,
            batch_size: 64,
            seed: 42,
            schedule: StepSchedule::default(),
            adam: AdamConfig::default(),
            freeze_trunk: false,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<(), PipelineError> {
        if self.epochs == 0 || self.batch_size == 0 || self.schedule.period == 0 {
            return Err(PipelineError::InvalidConfig(
                "epochs, batch_size and schedule.period must be positive".into(),
            ));
        }
        if !(self.schedule.base_lr > 0.0 && self.schedule.gamma > 0.0) {
            return Err(PipelineError::InvalidConfig(
                "learning rate and gamma must be positive".into(),
            ));
        }
        Ok(())
    }
}

/// Binary phase, then multi-class phase.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Phase {
    Binary,
    Multiclass,
}

impl Phase {
    fn id(self) -> u8 {
        match self {
            Phase::Binary => 1,
            Phase::Multiclass => 2,
        }
    }
}

/// One training-log line.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpochLog {
    pub phase: Phase,
    pub epoch: u32,
    pub lr: f64,
    /// Mean over the batches that took an optimizer step.
    pub loss: f64,
    pub steps: usize,
    /// Multi-class batches with every row masked.
    pub skipped_batches: usize,
}

pub struct TrainOutcome {
    pub model: Model<f32>,
    /// Parameters at the end of the binary phase.
    pub binary_phase: ParamStore<f32>,
    pub log: Vec<EpochLog>,
}

pub(crate) fn lookup<'a>(
    cache: &'a GraphCache,
    smiles: &str,
) -> Result<&'a CachedGraph, PipelineError> {
    cache
        .get(smiles)
        .ok_or_else(|| PipelineError::MissingGraph(smiles.to_string()))
}

pub(crate) fn graphs_of<'a>(
    cache: &'a GraphCache,
    records: &[&PairRecord],
) -> Result<Vec<(&'a CachedGraph, &'a CachedGraph)>, PipelineError> {
    records
        .iter()
        .map(|r| Ok((lookup(cache, &r.smiles1)?, lookup(cache, &r.smiles2)?)))
        .collect()
}

fn is_trainable(name: &str, phase: Phase, freeze_trunk: bool) -> bool {
    match phase {
        Phase::Binary => !name.starts_with("head.multiclass."),
        Phase::Multiclass => {
            name.starts_with("head.multiclass.") || (!freeze_trunk && !name.starts_with("head."))
        }
    }
}

/// Trains a fresh model: phase 1 minimizes BCE over all pairs for the trunk
/// and the binary head; phase 2 minimizes masked cross-entropy for the
/// multi-class head (and the trunk unless frozen) with a fresh Adam state,
/// keeping the binary head fixed. Batches are reshuffled every epoch.
pub fn train(
    config: &ModelConfig,
    records: &[PairRecord],
    cache: &GraphCache,
    tc: &TrainConfig,
    mut on_epoch: impl FnMut(&EpochLog),
) -> Result<TrainOutcome, PipelineError> {
    tc.validate()?;
    if records.is_empty() {
        return Err(PipelineError::InvalidConfig("training set is empty".into()));
    }
    let mut model = Model::<f32>::new(config.clone(), tc.seed)?;
    let mut shuffle_rng = rng::stream(tc.seed, Purpose::Shuffle);
    let mut log = Vec::new();
    let mut binary_phase = ParamStore::default();
    for phase in [Phase::Binary, Phase::Multiclass] {
        let mut adam = Adam::<f32>::new(tc.adam);
        let update_bn = phase == Phase::Binary || !tc.freeze_trunk;
        for epoch in 0..tc.epochs {
            let mut order: Vec<usize> = (0..records.len()).collect();
            rng::shuffle(&mut order, &mut shuffle_rng);
            let mut total = 0.0;
            let mut steps = 0;
            let mut skipped = 0;
            for (b, chunk) in order.chunks(tc.batch_size).enumerate() {
                let recs: Vec<&PairRecord> = chunk.iter().map(|&i| &records[i]).collect();
                let types: Vec<i64> = recs.iter().map(|r| r.type_code).collect();
                if phase == Phase::Multiclass && types.iter().all(|&t| t < 0) {
                    skipped += 1;
                    continue;
                }
                let pairs = graphs_of(cache, &recs)?;
                let batch = PairBatch::<f32>::new(&pairs);
                let mut tape = Tape::new();
                let bound = model
                    .params
                    .bind(&mut tape, |n| is_trainable(n, phase, tc.freeze_trunk));
                let key = DropoutKey {
                    seed: tc.seed,
                    phase: phase.id(),
                    epoch,
                    batch: b as u32,
                };
                let out = model.forward(&mut tape, &bound, &batch, Mode::Train(key))?;
                let loss = match phase {
                    Phase::Binary => {
                        let labels: Vec<f32> =
                            recs.iter().map(|r| f32::from(r.binary_label())).collect();
                        tape.bce_with_logits(out.binary_logits, &labels)?
                    }
                    Phase::Multiclass => tape.masked_cross_entropy(out.class_logits, &types)?.0,
                };
                let value = f64::from(tape.scalar(loss));
                if !value.is_finite() {
                    return Err(PipelineError::NonFiniteLoss {
                        phase,
                        epoch,
                        batch: b,
                        loss: value,
                    });
                }
                let mut grads = tape.backward(loss)?;
                let named: IndexMap<String, Array2<f32>> = bound
                    .iter()
                    .filter(|(n, _)| is_trainable(n, phase, tc.freeze_trunk))
                    .map(|(n, &v)| (n.clone(), grads.take(v)))
                    .collect();
                adam.step(&mut model.params, &named, &tc.schedule, epoch)?;
                if update_bn {
                    model.apply_bn_updates(&out.bn_updates)?;
                }
                total += value;
                steps += 1;
            }
            let entry = EpochLog {
                phase,
                epoch,
                lr: tc.schedule.lr(epoch),
                loss: if steps > 0 { total / steps as f64 } else { 0.0 },
                steps,
                skipped_batches: skipped,
            };
            on_epoch(&entry);
            log.push(entry);
        }
        if phase == Phase::Binary {
            binary_phase = model.params.clone();
        }
    }
    Ok(TrainOutcome {
        model,
        binary_phase,
        log,
    })
}
