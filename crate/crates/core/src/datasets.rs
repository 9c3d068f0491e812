//! Locating the benchmark datasets on disk.
//!
//! The root is `$QDCS_DATA_DIR`, else `./data`. A dataset `name` is found
//! as, in order: a canonical directory `<root>/<name>/meta.json`, citation
//! files `<name>.{content,cites}` in the root or one directory below it, or
//! an ego network `<root>/facebook/<ego>.*` for names `fb-<ego>`.

use std::path::{Path, PathBuf};

use crate::error::{Error, Result};
use crate::graph::{load_citation_dataset, load_ego_dir, read_canonical, AttributedGraph};

pub const DATA_DIR_VAR: &str = "QDCS_DATA_DIR";

pub fn data_root() -> PathBuf {
    std::env::var_os(DATA_DIR_VAR)
        .map(PathBuf::from)
        .unwrap_or_else(|| PathBuf::from("data"))
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Source {
    Canonical(PathBuf),
    Citation { content: PathBuf, cites: PathBuf },
    Ego { dir: PathBuf, ego: String },
}

pub fn locate(root: &Path, name: &str) -> Option<Source> {
    let dir = root.join(name);
    if dir.join("meta.json").is_file() {
        return Some(Source::Canonical(dir));
    }
    let mut subdirs: Vec<PathBuf> = std::fs::read_dir(root)
        .into_iter()
        .flatten()
        .flatten()
        .map(|e| e.path())
        .filter(|p| p.is_dir())
        .collect();
    subdirs.sort();
    let below = subdirs.into_iter().map(|d| d.join(name));
    for base in std::iter::once(root.join(name)).chain(below) {
        let content = base.with_extension("content");
        let cites = base.with_extension("cites");
        if content.is_file() && cites.is_file() {
            return Some(Source::Citation { content, cites });
        }
    }
    let ego = name
        .strip_prefix("fb-")
        .or_else(|| name.strip_prefix("FB-"))?;
    let fb = root.join("facebook");
    fb.join(format!("{ego}.edges"))
        .is_file()
        .then(|| Source::Ego {
            dir: fb,
            ego: ego.to_string(),
        })
}

pub fn load(source: &Source) -> Result<AttributedGraph> {
    match source {
        Source::Canonical(dir) => read_canonical(dir),
        Source::Citation { content, cites } => Ok(load_citation_dataset(content, cites)?.0),
        Source::Ego { dir, ego } => Ok(load_ego_dir(dir, ego)?.0),
    }
}

/// Loads `name` from the data root.
pub fn load_named(name: &str) -> Result<AttributedGraph> {
    let root = data_root();
    let source = locate(&root, name).ok_or_else(|| {
        Error::Precondition(format!("dataset {name} not found under {}", root.display()))
    })?;
    load(&source)
}
