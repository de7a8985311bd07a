//! On-disk layout of a training run.
//!
//! ```text
//! out/
//!   config.json          resolved configuration
//!   report.json          ExperimentReport
//!   report.txt
//!   run.json             fold membership and checkpoint paths
//!   checkpoints/fold{o}/member{m}.json
//! ```

use std::fs;
use std::path::{Path, PathBuf};

use carmil::model::{CarmilModel, Checkpoint};
use carmil::train::Ensemble;
use serde::{Deserialize, Serialize};

use crate::error::CliError;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunFold {
    pub fold: usize,
    /// Slide ids of the outer test fold.
    pub test: Vec<String>,
    /// Checkpoint paths relative to the run directory.
    pub members: Vec<PathBuf>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunIndex {
    /// Neighbors per tile used to build the training graphs.
    pub k: usize,
    pub folds: Vec<RunFold>,
}

pub fn io_err(path: &Path, source: std::io::Error) -> CliError {
    CliError::Lib(carmil::Error::Io {
        path: path.to_path_buf(),
        source,
    })
}

pub fn write(path: &Path, text: &str) -> Result<(), CliError> {
    if let Some(parent) = path.parent() {
        fs::create_dir_all(parent).map_err(|e| io_err(parent, e))?;
    }
    fs::write(path, text).map_err(|e| io_err(path, e))
}

pub fn to_json<T: Serialize>(value: &T) -> Result<String, CliError> {
    let mut text = serde_json::to_string_pretty(value).map_err(|e| CliError::Other(e.to_string()))?;
    text.push('\n');
    Ok(text)
}

pub fn read_json<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<T, CliError> {
    let text = fs::read_to_string(path).map_err(|e| io_err(path, e))?;
    serde_json::from_str(&text).map_err(|e| {
        CliError::Lib(carmil::Error::Malformed {
            path: path.to_path_buf(),
            detail: e.to_string(),
        })
    })
}

pub fn load_checkpoint(path: &Path) -> Result<CarmilModel, CliError> {
    let ckpt: Checkpoint = read_json(path)?;
    Ok(CarmilModel::from_checkpoint(&ckpt)?)
}

impl RunIndex {
    pub fn load(dir: &Path) -> Result<Self, CliError> {
        read_json(&dir.join("run.json"))
    }

    pub fn fold_ensemble(&self, dir: &Path, fold: &RunFold) -> Result<Ensemble, CliError> {
        let members = fold
            .members
            .iter()
            .map(|p| load_checkpoint(&dir.join(p)))
            .collect::<Result<Vec<_>, _>>()?;
        Ok(Ensemble::new(members)?)
    }

    /// Every member of every fold, in fold order.
    pub fn all_members(&self, dir: &Path) -> Result<Vec<CarmilModel>, CliError> {
        self.folds
            .iter()
            .flat_map(|f| f.members.iter())
            .map(|p| load_checkpoint(&dir.join(p)))
            .collect()
    }
}
