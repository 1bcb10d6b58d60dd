use std::fs;
use std::path::{Path, PathBuf};

use dgd::data::{
    load_dense_csv, load_mtx, read_lines, Dataset, DenseCsvOptions, Labels, Orientation, SplitSpec,
    Splits,
};
use dgd::likelihood::RmseSpace;
use dgd::model::Profile;
use dgd::training::TrainConfig;
use dgd::{Error, Result};
use serde::{Deserialize, Serialize};

use crate::args::InputArgs;

pub const CONFIG_FILE: &str = "config.json";
pub const HISTORY_FILE: &str = "history.csv";
pub const REPORT_FILE: &str = "report.csv";
pub const SPLITS_FILE: &str = "splits.json";
pub const CHECKPOINT_DIR: &str = "checkpoint";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InputSpec {
    pub profile: Profile,
    pub mtx: Option<PathBuf>,
    pub genes: Option<PathBuf>,
    pub labels: Option<PathBuf>,
    pub orientation: String,
    pub csv: Option<PathBuf>,
    pub rescale_255: bool,
    pub header: bool,
}

/// Everything a `train` invocation used; written before the first step.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunConfig {
    pub input: InputSpec,
    pub train: TrainConfig,
    pub split: SplitSpec,
    pub rmse_space: RmseSpace,
    pub k_auto: bool,
}

impl InputSpec {
    pub fn from_args(a: &InputArgs) -> Result<Self> {
        let source = match (&a.mtx, &a.csv) {
            (Some(_), None) => Profile::Counts,
            (None, Some(_)) => Profile::Binary,
            _ => {
                return Err(Error::Contract(
                    "exactly one of --mtx or --csv is required".into(),
                ))
            }
        };
        let profile = match &a.profile {
            Some(p) => p.parse()?,
            None => source,
        };
        if profile != source {
            return Err(Error::Contract(format!(
                "{profile} profile does not match the input file type"
            )));
        }
        a.orientation.parse::<Orientation>()?;
        Ok(Self {
            profile,
            mtx: a.mtx.clone(),
            genes: a.genes.clone(),
            labels: a.labels.clone(),
            orientation: a.orientation.clone(),
            csv: a.csv.clone(),
            rescale_255: a.rescale_255,
            header: a.header,
        })
    }

    pub fn load(&self) -> Result<Dataset> {
        match self.profile {
            Profile::Counts => {
                let mtx = self
                    .mtx
                    .as_deref()
                    .ok_or_else(|| Error::Contract("--mtx missing".into()))?;
                let m = load_mtx(
                    mtx,
                    self.genes.as_deref(),
                    self.labels.as_deref(),
                    self.orientation.parse()?,
                )?;
                Ok(Dataset::Counts(m))
            }
            Profile::Binary => {
                let csv = self
                    .csv
                    .as_deref()
                    .ok_or_else(|| Error::Contract("--csv missing".into()))?;
                let opts = DenseCsvOptions {
                    rescale_255: self.rescale_255,
                    has_header: self.header,
                };
                let mut d = load_dense_csv(csv, opts)?;
                if let Some(p) = &self.labels {
                    d = d.with_labels(Labels::from_strings(&read_lines(p)?))?;
                }
                Ok(Dataset::Binary(d))
            }
        }
    }
}

pub fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let text = serde_json::to_string_pretty(value)?;
    fs::write(path, text + "\n").map_err(|e| io_err(path, e))
}

pub fn read_json<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<T> {
    let text = fs::read_to_string(path).map_err(|e| io_err(path, e))?;
    Ok(serde_json::from_str(&text)?)
}

pub fn io_err(path: &Path, source: std::io::Error) -> Error {
    Error::Io {
        path: path.to_owned(),
        source,
    }
}

/// A finished training run on disk.
pub struct RunDir {
    pub dir: PathBuf,
    pub config: RunConfig,
    pub splits: Splits,
}

impl RunDir {
    pub fn open(dir: &Path) -> Result<Self> {
        Ok(Self {
            dir: dir.to_owned(),
            config: read_json(&dir.join(CONFIG_FILE))?,
            splits: read_json(&dir.join(SPLITS_FILE))?,
        })
    }

    pub fn checkpoint(&self) -> PathBuf {
        self.dir.join(CHECKPOINT_DIR)
    }
}
