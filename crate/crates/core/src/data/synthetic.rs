use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use super::{
    split, BundleCounts, DataError, DatasetBundle, Manifest, NegativeStats, PairRecord, SplitSpec,
};
use crate::chemgraph::{FeatureSchema, GraphCache};
use crate::rng::{self, Purpose, StreamRng};

/// Flag elements; type `k` means both molecules carry `SYNTHETIC_ELEMENTS[k]`
/// with the same formal charge.
pub const SYNTHETIC_ELEMENTS: [&str; 8] = ["N", "O", "S", "F", "Cl", "Br", "I", "P"];
const CHARGES: [i32; 3] = [-1, 0, 1];

/// Planted-mechanism benchmark.
///
/// Every molecule is a short carbon chain carrying bracketed flag-atom
/// substituents, each keyed by (element, formal charge). A positive pair of
/// type `k` shares exactly one key, whose element is `E_k`. Each side also
/// carries `distractors` decoy atoms whose elements appear on both sides with
/// different charges, so both sides have the same element set and only the
/// joint (element, charge) match identifies the type. A negative pair
/// carries `1 + distractors` flag atoms per side over disjoint element sets.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SyntheticSpec {
    pub n_pairs: usize,
    pub n_types: usize,
    pub seed: u64,
    pub distractors: usize,
    pub min_chain: usize,
    pub max_chain: usize,
}

impl Default for SyntheticSpec {
    fn default() -> Self {
        Self {
            n_pairs: 2000,
            n_types: 8,
            seed: 7,
            distractors: 2,
            min_chain: 2,
            max_chain: 4,
        }
    }
}

impl SyntheticSpec {
    pub fn validate(&self) -> Result<(), String> {
        if self.n_types == 0 || self.n_types > SYNTHETIC_ELEMENTS.len() {
            return Err(format!(
                "n_types must be in 1..={}",
                SYNTHETIC_ELEMENTS.len()
            ));
        }
        if 2 * (1 + self.distractors) > SYNTHETIC_ELEMENTS.len() {
            return Err("too many distractors for the element set".into());
        }
        if self.min_chain == 0 || self.min_chain > self.max_chain {
            return Err("chain bounds must satisfy 1 <= min_chain <= max_chain".into());
        }
        Ok(())
    }
}

type Key = (usize, i32);

fn pick_distinct(r: &mut StreamRng, pool: &mut Vec<usize>, n: usize) -> Vec<usize> {
    rng::shuffle(pool, r);
    pool.drain(..n).collect()
}

fn charge(r: &mut StreamRng) -> i32 {
    CHARGES[rng::below(r, CHARGES.len() as u64) as usize]
}

fn atom(key: Key) -> String {
    let sign = match key.1 {
        -1 => "-",
        1 => "+",
        _ => "",
    };
    format!("[{}{}]", SYNTHETIC_ELEMENTS[key.0], sign)
}

/// Chain of carbons with the given substituents attached at random
/// positions, each carbon taking at most two substituents.
fn molecule(r: &mut StreamRng, spec: &SyntheticSpec, keys: &[Key]) -> String {
    let span = (spec.max_chain - spec.min_chain + 1) as u64;
    let min_len = keys.len().div_ceil(2).max(spec.min_chain);
    let len = (spec.min_chain + rng::below(r, span) as usize).max(min_len);
    let mut slots: Vec<Vec<String>> = vec![Vec::new(); len];
    let mut order = keys.to_vec();
    rng::shuffle(&mut order, r);
    for k in order {
        loop {
            let c = rng::below(r, len as u64) as usize;
            if slots[c].len() < 2 {
                slots[c].push(atom(k));
                break;
            }
        }
    }
    let mut s = String::new();
    for subs in &slots {
        s.push('C');
        for a in subs {
            s.push('(');
            s.push_str(a);
            s.push(')');
        }
    }
    s
}

/// Generates the pair list: exactly half positives with types cycling over
/// `0..n_types`, shuffled into a seeded order.
pub fn generate_synthetic(spec: &SyntheticSpec) -> Result<Vec<PairRecord>, DataError> {
    spec.validate().map_err(DataError::Manifest)?;
    let mut r = rng::stream(spec.seed, Purpose::Synthetic);
    let n_pos = spec.n_pairs / 2;
    let d = spec.distractors;
    let mut raw = Vec::with_capacity(spec.n_pairs);
    for i in 0..spec.n_pairs {
        let mut pool: Vec<usize> = (0..SYNTHETIC_ELEMENTS.len()).collect();
        let (a, b, code): (Vec<Key>, Vec<Key>, i64) = if i < n_pos {
            let k = i % spec.n_types;
            pool.retain(|&e| e != k);
            let shared = (k, charge(&mut r));
            let (mut a, mut b) = (vec![shared], vec![shared]);
            for e in pick_distinct(&mut r, &mut pool, d) {
                let ca = charge(&mut r);
                let cb = CHARGES[(CHARGES.iter().position(|&c| c == ca).unwrap()
                    + 1
                    + rng::below(&mut r, CHARGES.len() as u64 - 1) as usize)
                    % CHARGES.len()];
                a.push((e, ca));
                b.push((e, cb));
            }
            (a, b, k as i64)
        } else {
            let elems = pick_distinct(&mut r, &mut pool, 2 * (d + 1));
            let mut keyed = elems.into_iter().map(|e| (e, charge(&mut r)));
            let a: Vec<Key> = keyed.by_ref().take(d + 1).collect();
            (a, keyed.collect(), -1)
        };
        let sa = molecule(&mut r, spec, &a);
        let sb = molecule(&mut r, spec, &b);
        raw.push((sa, sb, code));
    }
    rng::shuffle(&mut raw, &mut r);
    let mut ids: BTreeMap<String, String> = BTreeMap::new();
    let mut id_of = |s: &str| -> String {
        let next = ids.len();
        ids.entry(s.to_string())
            .or_insert_with(|| format!("SYN{next:05}"))
            .clone()
    };
    Ok(raw
        .into_iter()
        .map(|(sa, sb, code)| PairRecord {
            drug1_id: id_of(&sa),
            drug2_id: id_of(&sb),
            smiles1: sa,
            smiles2: sb,
            type_code: code,
        })
        .collect())
}

impl DatasetBundle {
    /// In-memory bundle over the synthetic benchmark; there is no ASA
    /// holdout and no reference set.
    pub fn synthetic(spec: &SyntheticSpec, split_spec: &SplitSpec) -> Result<Self, DataError> {
        split_spec.validate().map_err(DataError::Manifest)?;
        let pairs = generate_synthetic(spec)?;
        let positives = pairs.iter().filter(|p| p.type_code >= 0).count();
        let combined = pairs.len();
        let (train, test) = split(pairs, split_spec);
        let smiles = train
            .iter()
            .chain(test.iter())
            .flat_map(|p| [p.smiles1.as_str(), p.smiles2.as_str()]);
        let cache = GraphCache::build(smiles, &FeatureSchema::default())?;
        let counts = BundleCounts {
            positives,
            negatives: combined - positives,
            combined,
            unique_drugs: cache.len(),
            train: train.len(),
            test: test.len(),
            cached_graphs: cache.len(),
            other_element_atoms: cache.other_element_atoms(),
            ..BundleCounts::default()
        };
        let mut bundle = Self {
            train,
            test,
            asa_holdout: Vec::new(),
            reference: Vec::new(),
            cache,
            manifest: Manifest {
                format_version: 1,
                split: split_spec.clone(),
                asa_id: String::new(),
                strip_stereo: false,
                counts,
                negative_sampling: NegativeStats::default(),
                inputs: BTreeMap::new(),
                files: BTreeMap::new(),
            },
        };
        let spec_json =
            serde_json::to_string(spec).map_err(|e| DataError::Manifest(e.to_string()))?;
        bundle.manifest.inputs.insert(
            "synthetic".into(),
            super::FileDigest {
                path: spec_json.clone(),
                sha256: crate::container::sha256_hex(spec_json.as_bytes()),
            },
        );
        Ok(bundle)
    }
}
