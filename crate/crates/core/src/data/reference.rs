use std::io::Read;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{io_error, DataError};

pub const REFERENCE_HEADER: [&str; 5] = [
    "partner_name",
    "drugbank_id",
    "smiles",
    "label",
    "mechanism",
];

/// The seven curated co-medications of ASA: `(name, DrugBank ID, label)`.
pub const REFERENCE_DRUGS: [(&str, &str, u8); 7] = [
    ("warfarin", "DB00682", 1),
    ("ibuprofen", "DB01050", 1),
    ("methotrexate", "DB00563", 1),
    ("sertraline", "DB01104", 1),
    ("probenecid", "DB01032", 1),
    ("paracetamol", "DB00316", 0),
    ("vitamin C", "DB00126", 0),
];

/// A co-medication of ASA with its expected binary interaction label.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ReferencePair {
    pub partner_name: String,
    pub drugbank_id: String,
    pub smiles: String,
    pub label: u8,
    pub mechanism: String,
}

pub fn read_reference_pairs<R: Read>(
    reader: R,
    source: &str,
) -> Result<Vec<ReferencePair>, DataError> {
    let mut rdr = csv::ReaderBuilder::new()
        .has_headers(true)
        .from_reader(reader);
    let parse = |line: u64, message: String| DataError::Parse {
        path: source.to_string(),
        line,
        message,
    };
    let headers: Vec<String> = rdr
        .headers()
        .map_err(|e| parse(1, e.to_string()))?
        .iter()
        .map(|h| h.trim().to_string())
        .collect();
    let col = |name: &str| headers.iter().position(|h| h == name);
    let smiles_col = col("smiles").ok_or_else(|| DataError::MissingSmiles {
        path: source.to_string(),
        line: 1,
    })?;
    let mut idx = [0usize; 5];
    for (slot, name) in REFERENCE_HEADER.iter().enumerate() {
        idx[slot] = col(name).ok_or_else(|| parse(1, format!("missing column {name}")))?;
    }
    let mut out = Vec::new();
    for row in rdr.records() {
        let row = row.map_err(|e| parse(e.position().map_or(0, |p| p.line()), e.to_string()))?;
        let line = row.position().map_or(0, |p| p.line());
        let field = |i: usize| row.get(i).unwrap_or("").trim().to_string();
        let smiles = field(smiles_col);
        if smiles.is_empty() {
            return Err(DataError::MissingSmiles {
                path: source.to_string(),
                line,
            });
        }
        let label = match field(idx[3]).as_str() {
            "0" => 0,
            "1" => 1,
            other => return Err(parse(line, format!("label {other:?} is not 0 or 1"))),
        };
        out.push(ReferencePair {
            partner_name: field(idx[0]),
            drugbank_id: field(idx[1]),
            smiles,
            label,
            mechanism: field(idx[4]),
        });
    }
    Ok(out)
}

pub fn load_reference_pairs(path: &Path) -> Result<Vec<ReferencePair>, DataError> {
    let f = std::fs::File::open(path).map_err(io_error(path))?;
    read_reference_pairs(std::io::BufReader::new(f), &path.display().to_string())
}

/// Message listing the identifiers a reference file must supply.
pub(crate) fn missing_reference_message() -> String {
    let ids: Vec<String> = REFERENCE_DRUGS
        .iter()
        .map(|(name, id, _)| format!("{id} ({name})"))
        .collect();
    format!(
        "reference SMILES file required with columns {}; it must cover {}",
        REFERENCE_HEADER.join(","),
        ids.join(", ")
    )
}
