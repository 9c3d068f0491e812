//! Readers for the citation (`.content` / `.cites`) and ego-network
//! (`.edges` / `.feat` / `.egofeat` / `.circles`) layouts.

use std::collections::{BTreeMap, HashMap};
use std::fs;
use std::path::Path;

use log::warn;

use super::{AttributedGraph, LoadReport};
use crate::error::{Error, Result};

fn read(path: &Path) -> Result<String> {
    fs::read_to_string(path).map_err(|e| Error::io(path, e))
}

/// Non-blank lines with 1-based line numbers.
fn records(text: &str) -> impl Iterator<Item = (usize, Vec<&str>)> {
    text.lines()
        .enumerate()
        .map(|(i, l)| (i + 1, l.split_whitespace().collect::<Vec<_>>()))
        .filter(|(_, t)| !t.is_empty())
}

fn parse_value(path: &Path, line: usize, token: &str) -> Result<f64> {
    match token.parse::<f64>() {
        Ok(v) if v.is_finite() => Ok(v),
        Ok(_) => Err(Error::parse(
            path,
            line,
            format!("non-finite attribute value `{token}`"),
        )),
        Err(_) => Err(Error::parse(
            path,
            line,
            format!("bad attribute value `{token}`"),
        )),
    }
}

/// Loads a citation network. Class labels become communities in sorted
/// label order; edges naming unknown papers are dropped and counted.
pub fn load_citation_dataset(
    content_path: impl AsRef<Path>,
    cites_path: impl AsRef<Path>,
) -> Result<(AttributedGraph, LoadReport)> {
    let content_path = content_path.as_ref();
    let cites_path = cites_path.as_ref();
    let content = read(content_path)?;

    let mut ids: Vec<String> = Vec::new();
    let mut index: HashMap<String, usize> = HashMap::new();
    let mut labels: Vec<String> = Vec::new();
    let mut features = Vec::new();
    let mut d: Option<usize> = None;
    for (line, tokens) in records(&content) {
        if tokens.len() < 2 {
            return Err(Error::parse(
                content_path,
                line,
                "expected `<id> <f_1> ... <f_d> <label>`",
            ));
        }
        let width = tokens.len() - 2;
        match d {
            None => d = Some(width),
            Some(w) if w != width => {
                return Err(Error::parse(
                    content_path,
                    line,
                    format!("expected {w} attribute values, found {width}"),
                ))
            }
            _ => {}
        }
        let id = tokens[0].to_string();
        if index.contains_key(&id) {
            return Err(Error::parse(
                content_path,
                line,
                format!("duplicate node id `{id}`"),
            ));
        }
        let node = ids.len();
        for (j, tok) in tokens[1..=width].iter().enumerate() {
            let v = parse_value(content_path, line, tok)?;
            if v != 0.0 {
                features.push((node, j, v));
            }
        }
        index.insert(id.clone(), node);
        ids.push(id);
        labels.push(tokens[width + 1].to_string());
    }
    let n = ids.len();
    if n == 0 {
        return Err(Error::EmptyDataset);
    }

    let cites = read(cites_path)?;
    let mut edges = Vec::new();
    let mut unknown = 0;
    for (line, tokens) in records(&cites) {
        if tokens.len() != 2 {
            return Err(Error::parse(cites_path, line, "expected `<src> <dst>`"));
        }
        match (index.get(tokens[0]), index.get(tokens[1])) {
            (Some(&u), Some(&v)) => edges.push((u, v)),
            _ => unknown += 1,
        }
    }
    if unknown > 0 {
        warn!(
            "{}: dropped {unknown} edges with unknown endpoints",
            cites_path.display()
        );
    }

    let mut by_label: BTreeMap<&str, Vec<usize>> = BTreeMap::new();
    for (node, label) in labels.iter().enumerate() {
        by_label.entry(label).or_default().push(node);
    }
    let class_names: Vec<String> = by_label.keys().map(|s| s.to_string()).collect();
    let communities = by_label.into_values().collect();

    let name = content_path
        .file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_default();
    let (mut graph, mut report) =
        AttributedGraph::new(name, n, d.unwrap_or(0), &edges, &features, communities)?;
    report.unknown_endpoints = unknown;
    graph.node_labels = Some(ids);
    log::debug!("classes: {class_names:?}");
    Ok((graph, report))
}

fn id_key(id: &str) -> (u8, u64, String) {
    match id.parse::<u64>() {
        Ok(v) => (0, v, String::new()),
        Err(_) => (1, 0, id.to_string()),
    }
}

/// Loads one ego network. The ego gets node 0 and is linked to every
/// alter; alters follow in ascending id order. `node_labels` keeps the
/// original ids.
pub fn load_ego_dataset(
    edges_path: impl AsRef<Path>,
    feat_path: impl AsRef<Path>,
    egofeat_path: impl AsRef<Path>,
    circles_path: impl AsRef<Path>,
) -> Result<(AttributedGraph, LoadReport)> {
    let (edges_path, feat_path) = (edges_path.as_ref(), feat_path.as_ref());
    let (egofeat_path, circles_path) = (egofeat_path.as_ref(), circles_path.as_ref());
    let ego_name = feat_path
        .file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_else(|| "ego".into());

    let egofeat = read(egofeat_path)?;
    let mut ego_row = None;
    for (line, tokens) in records(&egofeat) {
        if ego_row.is_some() {
            return Err(Error::parse(
                egofeat_path,
                line,
                "expected a single feature row",
            ));
        }
        let row = tokens
            .iter()
            .map(|t| parse_value(egofeat_path, line, t))
            .collect::<Result<Vec<_>>>()?;
        ego_row = Some(row);
    }
    let ego_row = ego_row
        .ok_or_else(|| Error::Format(format!("{}: no ego feature row", egofeat_path.display())))?;
    let d = ego_row.len();

    let feat = read(feat_path)?;
    let mut alter_rows: Vec<(String, Vec<f64>)> = Vec::new();
    for (line, tokens) in records(&feat) {
        let width = tokens.len() - 1;
        if width != d {
            return Err(Error::Format(format!(
                "{}:{line}: {width} feature columns but the ego row has {d}",
                feat_path.display()
            )));
        }
        let row = tokens[1..]
            .iter()
            .map(|t| parse_value(feat_path, line, t))
            .collect::<Result<Vec<_>>>()?;
        alter_rows.push((tokens[0].to_string(), row));
    }

    let edges_text = read(edges_path)?;
    let mut raw_edges = Vec::new();
    for (line, tokens) in records(&edges_text) {
        if tokens.len() != 2 {
            return Err(Error::parse(edges_path, line, "expected `<u> <v>`"));
        }
        raw_edges.push((tokens[0].to_string(), tokens[1].to_string()));
    }

    let mut alter_ids: Vec<String> = alter_rows.iter().map(|(id, _)| id.clone()).collect();
    alter_ids.extend(raw_edges.iter().flat_map(|(u, v)| [u.clone(), v.clone()]));
    alter_ids.retain(|id| id != &ego_name);
    alter_ids.sort_by_key(|id| id_key(id));
    alter_ids.dedup();

    let mut labels = Vec::with_capacity(alter_ids.len() + 1);
    labels.push(ego_name.clone());
    labels.extend(alter_ids);
    let index: HashMap<&str, usize> = labels
        .iter()
        .enumerate()
        .map(|(i, s)| (s.as_str(), i))
        .collect();
    let n = labels.len();

    let mut features = Vec::new();
    for (j, &v) in ego_row.iter().enumerate() {
        if v != 0.0 {
            features.push((0, j, v));
        }
    }
    for (id, row) in &alter_rows {
        let node = index[id.as_str()];
        for (j, &v) in row.iter().enumerate() {
            if v != 0.0 {
                features.push((node, j, v));
            }
        }
    }

    let mut edges: Vec<(usize, usize)> = raw_edges
        .iter()
        .map(|(u, v)| (index[u.as_str()], index[v.as_str()]))
        .collect();
    edges.extend((1..n).map(|alter| (0, alter)));

    let circles = read(circles_path)?;
    let mut communities = Vec::new();
    let mut circle_names = Vec::new();
    let mut unknown_members = 0;
    for (_, tokens) in records(&circles) {
        let mut members = Vec::new();
        for tok in &tokens[1..] {
            match index.get(tok) {
                Some(&v) => members.push(v),
                None => unknown_members += 1,
            }
        }
        circle_names.push(tokens[0].to_string());
        communities.push(members);
    }
    if unknown_members > 0 {
        warn!(
            "{}: ignored {unknown_members} unknown circle members",
            circles_path.display()
        );
    }

    let (mut graph, mut report) = AttributedGraph::new(
        format!("ego-{ego_name}"),
        n,
        d,
        &edges,
        &features,
        communities,
    )?;
    report.unknown_members = unknown_members;
    if !report.small_communities.is_empty() {
        warn!(
            "{}: {} circles have fewer than two members",
            circles_path.display(),
            report.small_communities.len()
        );
    }
    graph.node_labels = Some(labels);
    Ok((graph, report))
}

/// Loads `<dir>/<ego>.{edges,feat,egofeat,circles}`.
pub fn load_ego_dir(dir: impl AsRef<Path>, ego: &str) -> Result<(AttributedGraph, LoadReport)> {
    let dir = dir.as_ref();
    let file = |ext: &str| dir.join(format!("{ego}.{ext}"));
    load_ego_dataset(
        file("edges"),
        file("feat"),
        file("egofeat"),
        file("circles"),
    )
}
