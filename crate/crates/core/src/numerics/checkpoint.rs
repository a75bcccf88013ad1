use std::fs::File;
use std::io::{BufWriter, Read, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use super::ParamStore;
use crate::container::{self, ArrayRef, BlobWriter, ContainerError};

pub const CHECKPOINT_KIND: &str = "checkpoint";
pub const CHECKPOINT_SCHEMA_VERSION: u32 = 1;

#[derive(Debug, Error)]
pub enum CheckpointError {
    #[error(transparent)]
    Container(#[from] ContainerError),
    #[error("i/o error on {path}: {source}")]
    Io {
        path: String,
        source: std::io::Error,
    },
}

/// Parameter checkpoint: `path → shape + raw f32 values`, plus free-form
/// JSON metadata (model config, training phase, provenance).
#[derive(Clone, Debug, PartialEq)]
pub struct Checkpoint {
    pub meta: serde_json::Value,
    pub params: ParamStore<f32>,
}

#[derive(Serialize, Deserialize)]
struct Entry {
    path: String,
    #[serde(flatten)]
    data: ArrayRef,
}

#[derive(Serialize, Deserialize)]
struct Header {
    meta: serde_json::Value,
    params: Vec<Entry>,
    buffers: Vec<Entry>,
}

impl Checkpoint {
    pub fn write_to<W: Write>(&self, w: W) -> Result<(), CheckpointError> {
        let mut blob = BlobWriter::default();
        let params = self
            .params
            .params
            .iter()
            .map(|(k, v)| Entry {
                path: k.clone(),
                data: blob.push(v),
            })
            .collect();
        let buffers = self
            .params
            .buffers
            .iter()
            .map(|(k, v)| Entry {
                path: k.clone(),
                data: blob.push(v),
            })
            .collect();
        let header = Header {
            meta: self.meta.clone(),
            params,
            buffers,
        };
        container::write(
            w,
            CHECKPOINT_KIND,
            CHECKPOINT_SCHEMA_VERSION,
            &header,
            &blob.into_bytes(),
        )?;
        Ok(())
    }

    pub fn read_from<R: Read>(r: R) -> Result<Self, CheckpointError> {
        let (header, blob): (Header, Vec<u8>) =
            container::read(r, CHECKPOINT_KIND, CHECKPOINT_SCHEMA_VERSION)?;
        let mut params = ParamStore::default();
        for e in header.params {
            params.insert(e.path, container::read_array(&blob, &e.data)?);
        }
        for e in header.buffers {
            params.insert_buffer(e.path, container::read_array(&blob, &e.data)?);
        }
        Ok(Self {
            meta: header.meta,
            params,
        })
    }

    pub fn save(&self, path: &Path) -> Result<(), CheckpointError> {
        let io = |source| CheckpointError::Io {
            path: path.display().to_string(),
            source,
        };
        let f = File::create(path).map_err(io)?;
        let mut w = BufWriter::new(f);
        self.write_to(&mut w)?;
        w.flush().map_err(io)?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self, CheckpointError> {
        let f = File::open(path).map_err(|source| CheckpointError::Io {
            path: path.display().to_string(),
            source,
        })?;
        Self::read_from(std::io::BufReader::new(f))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::Array2;
    use proptest::prelude::*;

    proptest! {
        #[test]
        fn round_trips_bit_exactly(bits in proptest::collection::vec(any::<u32>(), 1..40), rows in 1usize..4) {
            let cols = bits.len();
            let mut store = ParamStore::<f32>::default();
            let vals: Vec<f32> = bits.iter().cycle().take(rows * cols).map(|&b| f32::from_bits(b)).collect();
            store.insert("a.weight", Array2::from_shape_vec((rows, cols), vals).unwrap());
            store.insert_buffer("a.running_mean", Array2::from_elem((1, 3), -0.0f32));
            let ck = Checkpoint { meta: serde_json::json!({"variant": "concat"}), params: store };
            let mut bytes = Vec::new();
            ck.write_to(&mut bytes).unwrap();
            let back = Checkpoint::read_from(&bytes[..]).unwrap();
            for (k, v) in &ck.params.params {
                let w = &back.params.params[k];
                prop_assert_eq!(v.shape(), w.shape());
                for (a, b) in v.iter().zip(w.iter()) {
                    prop_assert_eq!(a.to_bits(), b.to_bits());
                }
            }
            let mut again = Vec::new();
            back.write_to(&mut again).unwrap();
            prop_assert_eq!(bytes, again);
        }
    }
}
