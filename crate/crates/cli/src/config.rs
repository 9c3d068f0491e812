//! Run configuration (one TOML file plus flag overrides) and dataset
//! loading by format.

use std::fmt;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use qdgcn_core::graph::{load_citation_dataset, load_ego_dir, read_canonical, LoadReport};
use qdgcn_core::{AttributedGraph, Error, GenConfig, ModelConfig, Result, TrainConfig};
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum DataFormat {
    Citation,
    Ego,
    #[default]
    Canonical,
}

impl FromStr for DataFormat {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "citation" => Ok(DataFormat::Citation),
            "ego" => Ok(DataFormat::Ego),
            "canonical" => Ok(DataFormat::Canonical),
            _ => Err(Error::Config(format!("unknown format `{s}`"))),
        }
    }
}

impl fmt::Display for DataFormat {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            DataFormat::Citation => "citation",
            DataFormat::Ego => "ego",
            DataFormat::Canonical => "canonical",
        })
    }
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(default)]
pub struct RunConfig {
    pub dataset: Option<PathBuf>,
    pub format: DataFormat,
    pub out: Option<PathBuf>,
    pub queries: GenConfig,
    pub model: ModelConfig,
    pub train: TrainConfig,
}

impl RunConfig {
    pub fn from_file(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::Io {
            path: path.to_path_buf(),
            source: e,
        })?;
        toml::from_str(&text).map_err(|e| Error::Format(format!("{}: {e}", path.display())))
    }

    pub fn dataset(&self) -> Result<&Path> {
        self.dataset.as_deref().ok_or_else(|| {
            Error::Config("no dataset given (use --dataset or the config file)".into())
        })
    }

    pub fn out(&self) -> Result<&Path> {
        self.out.as_deref().ok_or_else(|| {
            Error::Config("no output path given (use --out or the config file)".into())
        })
    }
}

/// `a:b:c` into three counts.
pub fn parse_split(s: &str) -> Result<[usize; 3]> {
    let parts: Vec<&str> = s.split(':').collect();
    let bad = || Error::Config(format!("split `{s}` is not of the form train:val:test"));
    if parts.len() != 3 {
        return Err(bad());
    }
    let mut out = [0; 3];
    for (o, p) in out.iter_mut().zip(parts) {
        *o = p.trim().parse().map_err(|_| bad())?;
    }
    Ok(out)
}

/// Citation sources are a prefix `dir/name` of `name.content` and
/// `name.cites`, or a directory holding them under its own name. Ego
/// sources are the prefix `dir/ego` of the `ego.*` files.
pub fn load_dataset(path: &Path, format: DataFormat) -> Result<(AttributedGraph, LoadReport)> {
    match format {
        DataFormat::Canonical => Ok((read_canonical(path)?, LoadReport::default())),
        DataFormat::Citation => {
            let prefix = if path.is_dir() {
                let name = path.file_name().unwrap_or_default();
                path.join(name)
            } else {
                path.to_path_buf()
            };
            load_citation_dataset(
                with_suffix(&prefix, "content"),
                with_suffix(&prefix, "cites"),
            )
        }
        DataFormat::Ego => {
            let dir = path
                .parent()
                .filter(|p| !p.as_os_str().is_empty())
                .unwrap_or(Path::new("."));
            let ego = path.file_name().and_then(|s| s.to_str()).ok_or_else(|| {
                Error::Config(format!("{} does not name an ego network", path.display()))
            })?;
            load_ego_dir(dir, ego)
        }
    }
}

/// `prefix.ext`, keeping any dots already in the prefix.
fn with_suffix(prefix: &Path, ext: &str) -> PathBuf {
    let mut s = prefix.as_os_str().to_owned();
    s.push(".");
    s.push(ext);
    PathBuf::from(s)
}
