use std::fs::File;
use std::io::{BufReader, BufWriter};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

use super::params::{Dims, ModelParams};
use super::train::TrainConfig;

pub const CHECKPOINT_FORMAT: &str = "sessrec-checkpoint";
pub const CHECKPOINT_VERSION: u32 = 1;

/// Serialized model: dimensions, every parameter array (row-major), the id-map
/// it was trained against and the training configuration.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Checkpoint {
    pub format: String,
    pub version: u32,
    pub dims: Dims,
    /// Path of the `external_id,index` CSV the item indices refer to.
    pub id_map: Option<String>,
    pub train_config: TrainConfig,
    pub params: ModelParams,
}

impl Checkpoint {
    pub fn new(params: ModelParams, train_config: TrainConfig, id_map: Option<String>) -> Self {
        Checkpoint {
            format: CHECKPOINT_FORMAT.to_owned(),
            version: CHECKPOINT_VERSION,
            dims: params.dims(),
            id_map,
            train_config,
            params,
        }
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let f =
            File::create(path).map_err(|e| Error::io(format!("creating {}", path.display()), e))?;
        serde_json::to_writer(BufWriter::new(f), self)?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        let f =
            File::open(path).map_err(|e| Error::io(format!("opening {}", path.display()), e))?;
        let ck: Checkpoint = serde_json::from_reader(BufReader::new(f))?;
        if ck.format != CHECKPOINT_FORMAT || ck.version != CHECKPOINT_VERSION {
            return Err(Error::Config(format!(
                "unsupported checkpoint {} v{}",
                ck.format, ck.version
            )));
        }
        if ck.params.dims() != ck.dims {
            return Err(Error::Config(
                "checkpoint dims do not match its arrays".into(),
            ));
        }
        Ok(ck)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::params::init_params;

    #[test]
    fn save_load_round_trip() {
        let p = init_params(9, 3, 4, 2).unwrap();
        let ck = Checkpoint::new(p, TrainConfig::default(), Some("ids.csv".into()));
        let f = tempfile::NamedTempFile::new().unwrap();
        ck.save(f.path()).unwrap();
        assert_eq!(Checkpoint::load(f.path()).unwrap(), ck);
    }
}
