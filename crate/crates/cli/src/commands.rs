use std::collections::BTreeMap;
use std::fs::{self, File};
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use ddi_core::chemgraph::{CachedGraph, FeatureSchema};
use ddi_core::config::RunConfig;
use ddi_core::container::sha256_hex;
use ddi_core::data::{prepare as prepare_bundle, DatasetBundle, PrepareOptions};
use ddi_core::model::{attention_summary, Model, Variant};
use ddi_core::numerics::Checkpoint;
use ddi_core::pipeline::{self, Phase, Provenance, TrainConfig};
use serde_json::json;

use crate::failure::Failure;
use crate::Overrides;

const TOP_TYPES: usize = 5;

fn effective_config(o: &Overrides) -> Result<RunConfig, Failure> {
    let mut cfg = match &o.config {
        Some(p) => RunConfig::load(p)?,
        None => RunConfig::default(),
    };
    if let Some(s) = o.seed {
        cfg.train.seed = s;
        cfg.split.seed = s;
    }
    if let Some(e) = o.epochs {
        cfg.train.epochs = e;
    }
    if let Some(b) = o.batch_size {
        cfg.train.batch_size = b;
    }
    if o.freeze_trunk {
        cfg.train.freeze_trunk = true;
    }
    Ok(cfg)
}

fn write(path: &Path, contents: &str) -> Result<(), Failure> {
    fs::write(path, contents).map_err(|e| Failure::io(path, e))
}

fn create_dir(path: &Path) -> Result<(), Failure> {
    fs::create_dir_all(path).map_err(|e| Failure::io(path, e))
}

fn file_sha(path: &Path) -> Result<String, Failure> {
    Ok(sha256_hex(
        &fs::read(path).map_err(|e| Failure::io(path, e))?,
    ))
}

fn bundle_inputs(bundle: &DatasetBundle) -> BTreeMap<String, String> {
    let mut m: BTreeMap<String, String> = bundle
        .manifest
        .files
        .iter()
        .map(|(k, v)| (format!("bundle/{k}"), v.clone()))
        .collect();
    for (k, d) in &bundle.manifest.inputs {
        m.insert(format!("source/{k}"), d.sha256.clone());
    }
    m
}

fn load_model(path: &Path) -> Result<(Model<f32>, Checkpoint, String), Failure> {
    let ck = Checkpoint::load(path)?;
    let model = pipeline::model_from_checkpoint(&ck)?;
    Ok((model, ck, file_sha(path)?))
}

fn checkpoint_provenance(
    ck: &Checkpoint,
    sha: String,
    bundle: Option<&DatasetBundle>,
) -> Provenance {
    let mut inputs = bundle.map(bundle_inputs).unwrap_or_default();
    inputs.insert("checkpoint".into(), sha);
    let config = json!({
        "model": ck.meta.get("model"),
        "train": ck.meta.get("train"),
        "split": ck.meta.get("split"),
    });
    Provenance { config, inputs }
}

pub fn prepare(
    pairs: PathBuf,
    reference: Option<PathBuf>,
    out: PathBuf,
    strip_stereo: bool,
    o: &Overrides,
) -> Result<(), Failure> {
    let mut cfg = effective_config(o)?;
    cfg.paths.pairs = Some(pairs.clone());
    cfg.paths.reference = reference.clone();
    cfg.paths.out = Some(out.clone());
    let opts = PrepareOptions {
        reference,
        split: cfg.split.clone(),
        strip_stereo,
        ..PrepareOptions::new(pairs, out)
    };
    let bundle = prepare_bundle(&opts)?;
    let summary = json!({
        "counts": bundle.manifest.counts,
        "negative_sampling": bundle.manifest.negative_sampling,
        "provenance": Provenance { config: cfg.to_json(), inputs: bundle_inputs(&bundle) },
    });
    println!(
        "{}",
        serde_json::to_string_pretty(&summary).expect("summary serializes")
    );
    Ok(())
}

fn train_meta(
    tc: &TrainConfig,
    phase: Phase,
    cfg: &RunConfig,
    prov: &Provenance,
) -> serde_json::Value {
    json!({ "train": tc, "phase": phase, "split": cfg.split, "provenance": prov })
}

pub fn train(
    variant: Variant,
    bundle_dir: PathBuf,
    out: PathBuf,
    o: &Overrides,
) -> Result<(), Failure> {
    let mut cfg = effective_config(o)?;
    cfg.model.variant = variant;
    cfg.paths.bundle = Some(bundle_dir.clone());
    cfg.paths.out = Some(out.clone());
    let bundle = DatasetBundle::load(&bundle_dir)?;
    let prov = Provenance {
        config: cfg.to_json(),
        inputs: bundle_inputs(&bundle),
    };
    create_dir(&out)?;
    let log_path = out.join("train_log.jsonl");
    let mut log = BufWriter::new(File::create(&log_path).map_err(|e| Failure::io(&log_path, e))?);
    let mut log_err = None;
    let outcome = pipeline::train(&cfg.model, &bundle.train, &bundle.cache, &cfg.train, |e| {
        let line = serde_json::to_string(e).expect("log entry serializes");
        if let Err(err) = writeln!(log, "{line}").and_then(|_| log.flush()) {
            log_err.get_or_insert(err);
        }
        eprintln!("{line}");
    });
    if let Some(err) = log_err {
        return Err(Failure::io(&log_path, err));
    }
    let outcome = outcome?;
    let mut binary = outcome.model.clone();
    binary.params = outcome.binary_phase.clone();
    for (model, phase, name) in [
        (&binary, Phase::Binary, "checkpoint_binary.ckpt"),
        (&outcome.model, Phase::Multiclass, "checkpoint.ckpt"),
    ] {
        let path = out.join(name);
        pipeline::to_checkpoint(model, train_meta(&cfg.train, phase, &cfg, &prov)).save(&path)?;
    }
    write(
        &out.join("provenance.json"),
        &serde_json::to_string_pretty(&prov).expect("serializes"),
    )?;
    let p = outcome.model.count_params();
    println!(
        "variant {variant}: {} parameters; checkpoints in {}",
        p.total,
        out.display()
    );
    Ok(())
}

pub fn evaluate(checkpoint: PathBuf, bundle_dir: PathBuf, out: PathBuf) -> Result<(), Failure> {
    let bundle = DatasetBundle::load(&bundle_dir)?;
    let (model, ck, sha) = load_model(&checkpoint)?;
    let prov = checkpoint_provenance(&ck, sha, Some(&bundle));
    let report = pipeline::evaluate(&model, &bundle.test, &bundle.cache, &prov)?;
    create_dir(&out)?;
    write(&out.join("metrics.json"), &report.to_json())?;
    write(&out.join("metrics.txt"), &report.to_table())?;
    print!("{}", report.to_table());
    Ok(())
}

pub fn asa_report(checkpoint: PathBuf, bundle_dir: PathBuf, out: PathBuf) -> Result<(), Failure> {
    let bundle = DatasetBundle::load(&bundle_dir)?;
    let (model, ck, sha) = load_model(&checkpoint)?;
    let prov = checkpoint_provenance(&ck, sha, Some(&bundle));
    let report = pipeline::asa_report(&model, &bundle, &prov)?;
    create_dir(&out)?;
    write(&out.join("asa_report.json"), &report.to_json())?;
    write(&out.join("asa_report.txt"), &report.to_table())?;
    print!("{}", report.to_table());
    Ok(())
}

pub fn ablate(
    bundle_dir: Option<PathBuf>,
    out: PathBuf,
    parallel: bool,
    o: &Overrides,
) -> Result<(), Failure> {
    let mut cfg = effective_config(o)?;
    cfg.paths.bundle = bundle_dir.clone();
    cfg.paths.out = Some(out.clone());
    let bundle = match &bundle_dir {
        Some(dir) => DatasetBundle::load(dir)?,
        None => DatasetBundle::synthetic(&cfg.synthetic, &cfg.split)?,
    };
    let prov = Provenance {
        config: cfg.to_json(),
        inputs: bundle_inputs(&bundle),
    };
    let run = pipeline::ablate(
        &bundle,
        &cfg.model,
        &cfg.train,
        &Variant::ALL,
        parallel,
        &prov,
    )?;
    create_dir(&out)?;
    for (outcome, report) in &run.outcomes {
        let dir = out.join(report.variant.name());
        create_dir(&dir)?;
        let meta = train_meta(&cfg.train, Phase::Multiclass, &cfg, &prov);
        pipeline::to_checkpoint(&outcome.model, meta).save(&dir.join("checkpoint.ckpt"))?;
        write(&dir.join("metrics.json"), &report.to_json())?;
    }
    write(&out.join("ablation.json"), &run.report.to_json())?;
    write(&out.join("ablation.txt"), &run.report.to_table())?;
    print!("{}", run.report.to_table());
    Ok(())
}

pub fn predict(
    smiles_a: &str,
    smiles_b: &str,
    checkpoint: PathBuf,
    as_json: bool,
) -> Result<(), Failure> {
    let (model, ck, sha) = load_model(&checkpoint)?;
    let schema = FeatureSchema::default();
    let a = CachedGraph::from_smiles(smiles_a, &schema)
        .map_err(|e| Failure::Input(format!("--smiles-a: {e}")))?;
    let b = CachedGraph::from_smiles(smiles_b, &schema)
        .map_err(|e| Failure::Input(format!("--smiles-b: {e}")))?;
    let pred = model
        .predict(&[(&a, &b)])
        .map_err(Failure::from)?
        .pop()
        .expect("one prediction per pair");
    let mut order: Vec<usize> = (0..pred.class_probs.len()).collect();
    order.sort_by(|&i, &j| {
        pred.class_probs[j]
            .total_cmp(&pred.class_probs[i])
            .then(i.cmp(&j))
    });
    let top: Vec<_> = order
        .iter()
        .take(TOP_TYPES)
        .map(|&k| json!({ "type_code": k, "confidence": pred.class_probs[k] }))
        .collect();
    let attention = pred.attention.as_ref().map(|maps| {
        let side = |per_head: &[_], partner: &CachedGraph| {
            attention_summary(per_head).map(|s| {
                json!({
                    "most_attended": s.most_attended,
                    "element": partner.graph.atoms[s.most_attended].element,
                    "weights": s.weights,
                })
            })
        };
        json!({ "a_queries_b": side(&maps.a_to_b, &b), "b_queries_a": side(&maps.b_to_a, &a) })
    });
    let mut doc = json!({
        "variant": model.variant(),
        "smiles_a": smiles_a,
        "smiles_b": smiles_b,
        "probability": pred.probability,
        "top_types": top,
        "provenance": checkpoint_provenance(&ck, sha, None),
    });
    if let Some(att) = attention {
        doc["attention"] = att;
    }
    if as_json {
        println!(
            "{}",
            serde_json::to_string_pretty(&doc).expect("serializes")
        );
        return Ok(());
    }
    println!("variant      {}", model.variant());
    println!("probability  {:.6}", pred.probability);
    println!("top types");
    for &k in order.iter().take(TOP_TYPES) {
        println!("  {k:>3}  {:.6}", pred.class_probs[k]);
    }
    if let Some(maps) = &pred.attention {
        for (label, per_head, partner) in [("A->B", &maps.a_to_b, &b), ("B->A", &maps.b_to_a, &a)] {
            if let Some(s) = attention_summary(per_head) {
                println!(
                    "attention {label}: atom {} ({}) weight {:.4}",
                    s.most_attended,
                    partner.graph.atoms[s.most_attended].element,
                    s.weights[s.most_attended]
                );
            }
        }
    }
    println!(
        "checkpoint sha256 {}",
        doc["provenance"]["inputs"]["checkpoint"]
            .as_str()
            .unwrap_or("")
    );
    Ok(())
}
