use std::collections::{BTreeMap, BTreeSet, HashSet};
use std::io::{Read, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{io_error, DataError, N_TYPES};
use crate::rng::{self, Purpose};

pub const PAIR_HEADER: [&str; 5] = ["drug1_id", "drug2_id", "smiles1", "smiles2", "type_code"];

#[derive(Clone, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct PairRecord {
    pub drug1_id: String,
    pub drug2_id: String,
    pub smiles1: String,
    pub smiles2: String,
    pub type_code: i64,
}

impl PairRecord {
    pub fn binary_label(&self) -> u8 {
        u8::from(self.type_code >= 0)
    }

    pub fn involves(&self, drug_id: &str) -> bool {
        self.drug1_id == drug_id || self.drug2_id == drug_id
    }

    /// Order-free identity of the drug pair.
    pub fn key(&self) -> (String, String) {
        unordered(&self.drug1_id, &self.drug2_id)
    }
}

fn unordered(a: &str, b: &str) -> (String, String) {
    if a <= b {
        (a.to_string(), b.to_string())
    } else {
        (b.to_string(), a.to_string())
    }
}

/// Reads a pair table. `source` names the input in error messages.
pub fn read_pairs<R: Read>(reader: R, source: &str) -> Result<Vec<PairRecord>, DataError> {
    let mut rdr = csv::ReaderBuilder::new()
        .has_headers(true)
        .from_reader(reader);
    let parse = |line: u64, message: String| DataError::Parse {
        path: source.to_string(),
        line,
        message,
    };
    let headers = rdr.headers().map_err(|e| parse(1, e.to_string()))?.clone();
    if headers.is_empty() {
        return Ok(Vec::new());
    }
    let names: Vec<&str> = headers.iter().map(str::trim).collect();
    if names != PAIR_HEADER {
        return Err(parse(
            1,
            format!(
                "header must be {}, found {}",
                PAIR_HEADER.join(","),
                names.join(",")
            ),
        ));
    }
    let mut out = Vec::new();
    for row in rdr.records() {
        let row = row.map_err(|e| {
            let line = e.position().map_or(0, |p| p.line());
            parse(line, e.to_string())
        })?;
        let line = row.position().map_or(0, |p| p.line());
        let field = |i: usize| row.get(i).unwrap_or("").trim().to_string();
        let raw = field(4);
        let code: i64 = raw
            .parse()
            .map_err(|_| parse(line, format!("type_code {raw:?} is not an integer")))?;
        if !(-1..N_TYPES as i64).contains(&code) {
            return Err(DataError::InvalidTypeCode {
                path: source.to_string(),
                line,
                code,
            });
        }
        let rec = PairRecord {
            drug1_id: field(0),
            drug2_id: field(1),
            smiles1: field(2),
            smiles2: field(3),
            type_code: code,
        };
        if rec.smiles1.is_empty() || rec.smiles2.is_empty() {
            return Err(DataError::MissingSmiles {
                path: source.to_string(),
                line,
            });
        }
        if rec.drug1_id.is_empty() || rec.drug2_id.is_empty() {
            return Err(parse(line, "empty drug identifier".into()));
        }
        out.push(rec);
    }
    Ok(out)
}

pub fn load_pairs(path: &Path) -> Result<Vec<PairRecord>, DataError> {
    let f = std::fs::File::open(path).map_err(io_error(path))?;
    read_pairs(std::io::BufReader::new(f), &path.display().to_string())
}

pub fn write_pairs<W: Write>(writer: W, records: &[PairRecord]) -> Result<(), DataError> {
    let mut w = csv::Writer::from_writer(writer);
    let err = |e: csv::Error| DataError::Io {
        path: "<pairs>".into(),
        source: std::io::Error::other(e),
    };
    w.write_record(PAIR_HEADER).map_err(err)?;
    for r in records {
        w.write_record([
            r.drug1_id.as_str(),
            r.drug2_id.as_str(),
            r.smiles1.as_str(),
            r.smiles2.as_str(),
            &r.type_code.to_string(),
        ])
        .map_err(err)?;
    }
    w.flush().map_err(|e| DataError::Io {
        path: "<pairs>".into(),
        source: e,
    })
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Drug {
    pub id: String,
    pub smiles: String,
}

#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct NegativeStats {
    pub drawn: usize,
    pub self_pair_rejections: usize,
    pub positive_collisions: usize,
}

/// Draws `count` ordered pairs `(universe[i], universe[j])` with `i`, `j`
/// uniform and independent. Self-pairs and pairs in `forbidden` (unordered
/// keys) are rejected and redrawn; both rejection counts are returned.
pub fn sample_negatives_from(
    universe: &[Drug],
    forbidden: &HashSet<(String, String)>,
    count: usize,
    seed: u64,
) -> Result<(Vec<PairRecord>, NegativeStats), DataError> {
    let mut stats = NegativeStats::default();
    if count == 0 {
        return Ok((Vec::new(), stats));
    }
    let n = universe.len();
    let ids: BTreeSet<&str> = universe.iter().map(|d| d.id.as_str()).collect();
    let candidates = n * n.saturating_sub(1) / 2;
    let blocked = forbidden
        .iter()
        .filter(|(a, b)| a != b && ids.contains(a.as_str()) && ids.contains(b.as_str()))
        .count();
    if candidates <= blocked {
        return Err(DataError::NoNegativeCandidates);
    }
    let mut r = rng::stream(seed, Purpose::Negatives);
    let mut out = Vec::with_capacity(count);
    while out.len() < count {
        let i = rng::below(&mut r, n as u64) as usize;
        let j = rng::below(&mut r, n as u64) as usize;
        stats.drawn += 1;
        if i == j {
            stats.self_pair_rejections += 1;
            continue;
        }
        let (a, b) = (&universe[i], &universe[j]);
        if forbidden.contains(&unordered(&a.id, &b.id)) {
            stats.positive_collisions += 1;
            continue;
        }
        out.push(PairRecord {
            drug1_id: a.id.clone(),
            drug2_id: b.id.clone(),
            smiles1: a.smiles.clone(),
            smiles2: b.smiles.clone(),
            type_code: -1,
        });
    }
    Ok((out, stats))
}

/// Distinct drugs of a pair list, sorted by identifier; the first SMILES seen
/// for an identifier wins.
pub fn drug_universe(pairs: &[PairRecord]) -> Vec<Drug> {
    let mut map: BTreeMap<&str, &str> = BTreeMap::new();
    for p in pairs {
        map.entry(&p.drug1_id).or_insert(&p.smiles1);
        map.entry(&p.drug2_id).or_insert(&p.smiles2);
    }
    map.into_iter()
        .map(|(id, smiles)| Drug {
            id: id.to_string(),
            smiles: smiles.to_string(),
        })
        .collect()
}

/// One negative per positive, drawn from the drugs of `positives` excluding
/// `exclude_drug` (when given), with positives rejected as collisions.
pub fn sample_negatives(
    positives: &[PairRecord],
    exclude_drug: Option<&str>,
    seed: u64,
) -> Result<(Vec<PairRecord>, NegativeStats), DataError> {
    let universe: Vec<Drug> = drug_universe(positives)
        .into_iter()
        .filter(|d| Some(d.id.as_str()) != exclude_drug)
        .collect();
    let forbidden: HashSet<_> = positives.iter().map(PairRecord::key).collect();
    sample_negatives_from(&universe, &forbidden, positives.len(), seed)
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct AsaHoldout {
    pub pairs: Vec<PairRecord>,
    pub remainder: Vec<PairRecord>,
    pub distinct_types: usize,
}

/// Moves every pair touching `drug_id` into the holdout.
pub fn extract_asa_holdout(pairs: Vec<PairRecord>, drug_id: &str) -> AsaHoldout {
    let (held, remainder): (Vec<_>, Vec<_>) = pairs.into_iter().partition(|p| p.involves(drug_id));
    let distinct_types = held
        .iter()
        .filter(|p| p.type_code >= 0)
        .map(|p| p.type_code)
        .collect::<BTreeSet<_>>()
        .len();
    AsaHoldout {
        pairs: held,
        remainder,
        distinct_types,
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SplitSpec {
    pub seed: u64,
    pub train_fraction: f64,
    pub negative_ratio: f64,
}

impl Default for SplitSpec {
    fn default() -> Self {
        Self {
            seed: 42,
            train_fraction: 0.8,
            negative_ratio: 1.0,
        }
    }
}

impl SplitSpec {
    pub fn validate(&self) -> Result<(), String> {
        if !(self.train_fraction > 0.0 && self.train_fraction < 1.0) {
            return Err(format!(
                "train_fraction {} outside (0, 1)",
                self.train_fraction
            ));
        }
        if self.negative_ratio != 1.0 {
            return Err(format!(
                "negative_ratio {} unsupported (only 1.0)",
                self.negative_ratio
            ));
        }
        Ok(())
    }
}

/// Fisher–Yates shuffle of the records under the `Split` stream of
/// `spec.seed`, then the first `floor(n · train_fraction)` go to train.
pub fn split(mut pairs: Vec<PairRecord>, spec: &SplitSpec) -> (Vec<PairRecord>, Vec<PairRecord>) {
    rng::shuffle(&mut pairs, &mut rng::stream(spec.seed, Purpose::Split));
    let n_train = (pairs.len() as f64 * spec.train_fraction).floor() as usize;
    let test = pairs.split_off(n_train);
    (pairs, test)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn rec(a: &str, b: &str, t: i64) -> PairRecord {
        PairRecord {
            drug1_id: a.into(),
            drug2_id: b.into(),
            smiles1: "C".into(),
            smiles2: "CC".into(),
            type_code: t,
        }
    }

    #[test]
    fn reads_and_validates() {
        let ok = "drug1_id,drug2_id,smiles1,smiles2,type_code\nA,B,C,CC,3\nA,C,C,N,-1\n";
        let v = read_pairs(ok.as_bytes(), "t").unwrap();
        assert_eq!(v.len(), 2);
        assert_eq!(v[0].binary_label(), 1);
        assert_eq!(v[1].binary_label(), 0);
        assert!(read_pairs("".as_bytes(), "t").unwrap().is_empty());
        assert!(read_pairs(
            "drug1_id,drug2_id,smiles1,smiles2,type_code\n".as_bytes(),
            "t"
        )
        .unwrap()
        .is_empty());
        let bad = "drug1_id,drug2_id,smiles1,smiles2,type_code\nA,B,C,CC,1\nA,B,C,CC,86\n";
        match read_pairs(bad.as_bytes(), "t") {
            Err(DataError::InvalidTypeCode { line, code, .. }) => assert_eq!((line, code), (3, 86)),
            other => panic!("{other:?}"),
        }
        let missing = "drug1_id,drug2_id,smiles1,smiles2,type_code\nA,B,,CC,1\n";
        assert!(matches!(
            read_pairs(missing.as_bytes(), "t"),
            Err(DataError::MissingSmiles { line: 2, .. })
        ));
        let header = "a,b,c,d,e\n";
        assert!(matches!(
            read_pairs(header.as_bytes(), "t"),
            Err(DataError::Parse { line: 1, .. })
        ));
    }

    #[test]
    fn write_then_read() {
        let v = vec![rec("A", "B", 0), rec("B", "C", -1)];
        let mut buf = Vec::new();
        write_pairs(&mut buf, &v).unwrap();
        assert_eq!(read_pairs(&buf[..], "t").unwrap(), v);
    }

    #[test]
    fn two_drug_universe_yields_the_cross_pair() {
        let u = vec![
            Drug {
                id: "A".into(),
                smiles: "C".into(),
            },
            Drug {
                id: "B".into(),
                smiles: "N".into(),
            },
        ];
        let (neg, stats) = sample_negatives_from(&u, &HashSet::new(), 50, 1).unwrap();
        assert_eq!(neg.len(), 50);
        assert!(neg
            .iter()
            .all(|p| p.key() == ("A".to_string(), "B".to_string())));
        assert!(stats.self_pair_rejections > 0);
        let forbidden: HashSet<_> = [("A".to_string(), "B".to_string())].into();
        assert!(matches!(
            sample_negatives_from(&u, &forbidden, 1, 1),
            Err(DataError::NoNegativeCandidates)
        ));
    }

    #[test]
    fn negatives_avoid_positives_and_self_pairs() {
        let pos: Vec<_> = (0..30)
            .map(|i| rec(&format!("D{i}"), &format!("D{}", (i + 1) % 30), i % 5))
            .collect();
        let (neg, stats) = sample_negatives(&pos, Some("D0"), 7).unwrap();
        assert_eq!(neg.len(), pos.len());
        let known: HashSet<_> = pos.iter().map(PairRecord::key).collect();
        for n in &neg {
            assert_ne!(n.drug1_id, n.drug2_id);
            assert!(!known.contains(&n.key()));
            assert!(!n.involves("D0"));
            assert_eq!(n.type_code, -1);
        }
        assert_eq!(
            stats.drawn,
            neg.len() + stats.self_pair_rejections + stats.positive_collisions
        );
        assert_eq!(sample_negatives(&pos, Some("D0"), 7).unwrap().0, neg);
    }

    #[test]
    fn holdout_and_split() {
        let pairs = vec![
            rec("X", "A", 1),
            rec("A", "B", 2),
            rec("C", "X", 3),
            rec("B", "C", 2),
        ];
        let h = extract_asa_holdout(pairs.clone(), "X");
        assert_eq!(h.pairs.len(), 2);
        assert_eq!(h.remainder.len(), 2);
        assert_eq!(h.distinct_types, 2);
        let none = extract_asa_holdout(pairs.clone(), "Q");
        assert_eq!(none.remainder, pairs);
        let ten: Vec<_> = (0..10).map(|i| rec("A", &format!("B{i}"), 0)).collect();
        let (tr, te) = split(ten.clone(), &SplitSpec::default());
        assert_eq!((tr.len(), te.len()), (8, 2));
        assert_eq!(split(ten, &SplitSpec::default()), (tr, te));
    }
}
