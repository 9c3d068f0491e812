//! Directory format written by `ingest` and read by every later stage.
//!
//! ```text
//! meta.json        name, n, m, d, k, format_version
//! edges.txt        "u v" with u < v, sorted
//! features.txt     "i j value", sorted by (i, j)
//! communities.txt  one line of node ids per community
//! node_labels.txt  optional, one label per node
//! attr_labels.txt  optional, one label per attribute
//! ```

use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::AttributedGraph;
use crate::error::{Error, Result};

pub const CANONICAL_FORMAT_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CanonicalMeta {
    pub format_version: u32,
    pub name: String,
    pub n: usize,
    pub m: usize,
    pub d: usize,
    pub k: usize,
}

pub(super) struct Rendered {
    pub edges: String,
    pub features: String,
    pub communities: String,
}

pub(super) fn render(graph: &AttributedGraph) -> Rendered {
    let mut edges = String::new();
    for (u, v) in graph.edges() {
        writeln!(edges, "{u} {v}").unwrap();
    }
    let mut features = String::new();
    for i in 0..graph.n() {
        for (j, v) in graph.features().row(i) {
            writeln!(features, "{i} {j} {v}").unwrap();
        }
    }
    let mut communities = String::new();
    for c in graph.communities() {
        let line: Vec<String> = c.iter().map(|v| v.to_string()).collect();
        writeln!(communities, "{}", line.join(" ")).unwrap();
    }
    Rendered {
        edges,
        features,
        communities,
    }
}

fn put(path: &Path, body: &str) -> Result<()> {
    fs::write(path, body).map_err(|e| Error::io(path, e))
}

pub fn write_canonical(graph: &AttributedGraph, dir: impl AsRef<Path>) -> Result<CanonicalMeta> {
    let dir = dir.as_ref();
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let meta = CanonicalMeta {
        format_version: CANONICAL_FORMAT_VERSION,
        name: graph.name.clone(),
        n: graph.n(),
        m: graph.m(),
        d: graph.d(),
        k: graph.k(),
    };
    let files = render(graph);
    put(
        &dir.join("meta.json"),
        &(serde_json::to_string_pretty(&meta)? + "\n"),
    )?;
    put(&dir.join("edges.txt"), &files.edges)?;
    put(&dir.join("features.txt"), &files.features)?;
    put(&dir.join("communities.txt"), &files.communities)?;
    for (file, labels) in [
        ("node_labels.txt", &graph.node_labels),
        ("attr_labels.txt", &graph.attr_labels),
    ] {
        let path = dir.join(file);
        match labels {
            Some(l) => put(
                &path,
                &l.iter().map(|s| format!("{s}\n")).collect::<String>(),
            )?,
            None if path.exists() => fs::remove_file(&path).map_err(|e| Error::io(&path, e))?,
            None => {}
        }
    }
    Ok(meta)
}

fn ints<const N: usize>(path: &Path, line: usize, text: &str) -> Result<[usize; N]> {
    let mut out = [0; N];
    let mut tokens = text.split_whitespace();
    for slot in out.iter_mut() {
        let tok = tokens
            .next()
            .ok_or_else(|| Error::parse(path, line, format!("expected {N} fields")))?;
        *slot = tok
            .parse()
            .map_err(|_| Error::parse(path, line, format!("bad integer `{tok}`")))?;
    }
    Ok(out)
}

fn read(path: &Path) -> Result<String> {
    fs::read_to_string(path).map_err(|e| Error::io(path, e))
}

fn read_labels(path: &Path, expected: usize) -> Result<Option<Vec<String>>> {
    if !path.exists() {
        return Ok(None);
    }
    let labels: Vec<String> = read(path)?.lines().map(str::to_string).collect();
    if labels.len() != expected {
        return Err(Error::Format(format!(
            "{}: {} labels for {expected} entries",
            path.display(),
            labels.len()
        )));
    }
    Ok(Some(labels))
}

pub fn read_canonical(dir: impl AsRef<Path>) -> Result<AttributedGraph> {
    let dir = dir.as_ref();
    let meta_path = dir.join("meta.json");
    let meta: CanonicalMeta = serde_json::from_str(&read(&meta_path)?)
        .map_err(|e| Error::Format(format!("{}: {e}", meta_path.display())))?;
    if meta.format_version != CANONICAL_FORMAT_VERSION {
        return Err(Error::Format(format!(
            "{}: format version {} is not supported",
            meta_path.display(),
            meta.format_version
        )));
    }

    let path = dir.join("edges.txt");
    let mut edges = Vec::with_capacity(meta.m);
    for (i, line) in read(&path)?.lines().enumerate() {
        let [u, v] = ints::<2>(&path, i + 1, line)?;
        edges.push((u, v));
    }

    let path = dir.join("features.txt");
    let mut features = Vec::new();
    for (i, line) in read(&path)?.lines().enumerate() {
        let [r, c] = ints::<2>(&path, i + 1, line)?;
        let value = line
            .split_whitespace()
            .nth(2)
            .and_then(|t| t.parse::<f64>().ok())
            .ok_or_else(|| Error::parse(&path, i + 1, "expected `i j value`"))?;
        features.push((r, c, value));
    }

    let path = dir.join("communities.txt");
    let mut communities = Vec::with_capacity(meta.k);
    for (i, line) in read(&path)?.lines().enumerate() {
        let members = line
            .split_whitespace()
            .map(|t| {
                t.parse::<usize>()
                    .map_err(|_| Error::parse(&path, i + 1, format!("bad node id `{t}`")))
            })
            .collect::<Result<Vec<_>>>()?;
        communities.push(members);
    }

    let (mut graph, _) = AttributedGraph::new(
        meta.name.clone(),
        meta.n,
        meta.d,
        &edges,
        &features,
        communities,
    )?;
    if (graph.m(), graph.k()) != (meta.m, meta.k) {
        return Err(Error::Format(format!(
            "{}: header says m={} k={}, files give m={} k={}",
            meta_path.display(),
            meta.m,
            meta.k,
            graph.m(),
            graph.k()
        )));
    }
    graph.node_labels = read_labels(&dir.join("node_labels.txt"), meta.n)?;
    graph.attr_labels = read_labels(&dir.join("attr_labels.txt"), meta.d)?;
    Ok(graph)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sample() -> AttributedGraph {
        let feats = [(0, 1, 1.0), (2, 0, 0.1 + 0.2), (3, 2, 1e-300)];
        let (mut g, _) = AttributedGraph::new(
            "s",
            4,
            3,
            &[(1, 0), (2, 3), (0, 3)],
            &feats,
            vec![vec![0, 1], vec![3]],
        )
        .unwrap();
        g.node_labels = Some(vec!["a".into(), "b".into(), "c".into(), "d".into()]);
        g
    }

    #[test]
    fn round_trip_is_byte_identical() {
        let g = sample();
        let a = tempfile::tempdir().unwrap();
        let b = tempfile::tempdir().unwrap();
        write_canonical(&g, a.path()).unwrap();
        let back = read_canonical(a.path()).unwrap();
        assert_eq!(back, g);
        write_canonical(&back, b.path()).unwrap();
        for f in [
            "meta.json",
            "edges.txt",
            "features.txt",
            "communities.txt",
            "node_labels.txt",
        ] {
            assert_eq!(
                fs::read(a.path().join(f)).unwrap(),
                fs::read(b.path().join(f)).unwrap(),
                "{f}"
            );
        }
        assert_eq!(back.fingerprint(), g.fingerprint());
    }

    #[test]
    fn rejects_unknown_version_and_mismatched_header() {
        let g = sample();
        let dir = tempfile::tempdir().unwrap();
        write_canonical(&g, dir.path()).unwrap();
        let meta = dir.path().join("meta.json");
        let text = fs::read_to_string(&meta).unwrap();
        fs::write(&meta, text.replace("\"m\": 3", "\"m\": 4")).unwrap();
        assert!(matches!(read_canonical(dir.path()), Err(Error::Format(_))));
        fs::write(
            &meta,
            text.replace("\"format_version\": 1", "\"format_version\": 9"),
        )
        .unwrap();
        assert!(matches!(read_canonical(dir.path()), Err(Error::Format(_))));
    }
}
