use std::io::{Read, Write};

use serde::{Deserialize, Serialize};

use crate::container::{self, OffsetReader};
use crate::error::{Error, Result};
use crate::numkit::NumArray;

use super::{Network, ParamSet};

pub const CHECKPOINT_VERSION: u16 = 1;

#[derive(Debug, Serialize, Deserialize)]
struct TensorEntry {
    name: String,
    shape: Vec<usize>,
}

#[derive(Debug, Serialize, Deserialize)]
struct Manifest {
    networks: Vec<Network>,
    tensors: Vec<TensorEntry>,
    #[serde(default)]
    extra: serde_json::Value,
}

/// Writes networks, parameters, and caller metadata as one checkpoint.
pub fn write_checkpoint<W: Write>(
    mut w: W,
    networks: &[Network],
    params: &ParamSet<f32>,
    extra: serde_json::Value,
) -> Result<()> {
    let manifest = Manifest {
        networks: networks.to_vec(),
        tensors: params
            .iter()
            .map(|(name, t)| TensorEntry {
                name: name.clone(),
                shape: t.shape().to_vec(),
            })
            .collect(),
        extra,
    };
    container::write_header(&mut w, CHECKPOINT_VERSION, &serde_json::to_vec(&manifest)?)?;
    for (_, t) in params.iter() {
        container::write_f32s(&mut w, t.data())?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_checkpoint<R: Read>(r: R) -> Result<(Vec<Network>, ParamSet<f32>, serde_json::Value)> {
    let mut r = OffsetReader::new(r);
    let manifest: Manifest = container::parse_manifest(&container::read_header(&mut r, CHECKPOINT_VERSION)?)?;
    let mut params = ParamSet::new();
    for entry in &manifest.tensors {
        let count = entry.shape.iter().product();
        let data = r.read_f32s(count, &entry.name)?;
        params.insert(entry.name.clone(), NumArray::new(entry.shape.clone(), data)?);
    }
    r.expect_end()?;
    for net in &manifest.networks {
        params.check_against(net).map_err(|e| Error::format(r.offset(), e.to_string()))?;
    }
    Ok((manifest.networks, params, manifest.extra))
}
