//! Reader and writer for the TU benchmark text format.
//!
//! A dataset `NAME` in directory `DIR` consists of
//!
//! * `NAME_A.txt`: one edge `i, j` per line, 1-based global node ids;
//! * `NAME_graph_indicator.txt`: graph id (1-based) of every node;
//! * `NAME_graph_labels.txt`: one label per graph;
//! * optionally `NAME_node_labels.txt` (one integer per node) and
//!   `NAME_node_attributes.txt` (comma-separated reals per node).

use std::collections::BTreeMap;
use std::fs;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use ndarray::Array2;

use crate::error::{validation, Error, Result};
use crate::graph::{degree_features, Graph, LabeledDataset, StructureKind};

fn file_path(dir: &Path, name: &str, suffix: &str) -> PathBuf {
    dir.join(format!("{name}_{suffix}.txt"))
}

/// Non-empty lines with their 1-based line numbers.
fn read_lines(path: &Path) -> Result<Vec<(usize, String)>> {
    if !path.exists() {
        return Err(Error::MissingFile(path.to_path_buf()));
    }
    let text = fs::read_to_string(path)?;
    Ok(text
        .lines()
        .enumerate()
        .map(|(i, l)| (i + 1, l.trim().to_string()))
        .filter(|(_, l)| !l.is_empty())
        .collect())
}

fn parse_err(path: &Path, line: usize, msg: impl Into<String>) -> Error {
    Error::Parse {
        file: path.to_path_buf(),
        line,
        msg: msg.into(),
    }
}

fn parse_value<T: std::str::FromStr>(path: &Path, line: usize, tok: &str) -> Result<T> {
    tok.trim()
        .parse()
        .map_err(|_| parse_err(path, line, format!("cannot parse {:?}", tok.trim())))
}

/// Options for [`load_tu_dataset`].
#[derive(Clone, Debug, PartialEq)]
pub struct TuOptions {
    pub structure_kind: StructureKind,
    /// Cap for degree features when the data has no node labels or
    /// attributes. `None` uses the largest degree in the dataset.
    pub max_degree: Option<usize>,
}

impl Default for TuOptions {
    fn default() -> Self {
        TuOptions {
            structure_kind: StructureKind::Adjacency,
            max_degree: None,
        }
    }
}

/// Loads `dir/NAME_*.txt`.
///
/// Discrete node labels are one-hot encoded over their sorted distinct
/// values; continuous attributes follow the one-hot block. Graph labels are
/// mapped to `0..classes` in sorted order. Without node labels or
/// attributes, nodes get one-hot degree features.
pub fn load_tu_dataset(dir: &Path, name: &str, options: &TuOptions) -> Result<LabeledDataset> {
    let ind_path = file_path(dir, name, "graph_indicator");
    let indicator: Vec<(usize, usize)> = read_lines(&ind_path)?
        .into_iter()
        .map(|(ln, l)| parse_value::<usize>(&ind_path, ln, &l).map(|g| (ln, g)))
        .collect::<Result<_>>()?;
    let node_count = indicator.len();
    if node_count == 0 {
        return Err(parse_err(&ind_path, 1, "no nodes"));
    }
    let graph_count = indicator.iter().map(|&(_, g)| g).max().unwrap_or(0);
    let mut members: Vec<Vec<usize>> = vec![Vec::new(); graph_count];
    let mut local = vec![0usize; node_count];
    for (node, &(ln, g)) in indicator.iter().enumerate() {
        if g == 0 {
            return Err(parse_err(&ind_path, ln, "graph ids start at 1"));
        }
        local[node] = members[g - 1].len();
        members[g - 1].push(node);
    }
    if let Some(g) = members.iter().position(Vec::is_empty) {
        return Err(validation(format!("{}: graph {} has no nodes", ind_path.display(), g + 1)));
    }
    let graph_of: Vec<usize> = indicator.iter().map(|&(_, g)| g - 1).collect();

    let label_path = file_path(dir, name, "graph_labels");
    let raw_labels: Vec<(usize, i64)> = read_lines(&label_path)?
        .into_iter()
        .map(|(ln, l)| parse_value::<i64>(&label_path, ln, &l).map(|v| (ln, v)))
        .collect::<Result<_>>()?;
    if raw_labels.len() != graph_count {
        let ln = raw_labels.get(graph_count).map(|&(ln, _)| ln).unwrap_or(raw_labels.len() + 1);
        return Err(parse_err(
            &label_path,
            ln,
            format!("expected {graph_count} graph labels, found {}", raw_labels.len()),
        ));
    }
    let label_values: BTreeMap<i64, usize> = raw_labels
        .iter()
        .map(|&(_, v)| (v, 0))
        .collect::<BTreeMap<_, _>>()
        .into_keys()
        .enumerate()
        .map(|(i, v)| (v, i))
        .collect();
    let labels: Vec<usize> = raw_labels.iter().map(|(_, v)| label_values[v]).collect();

    let a_path = file_path(dir, name, "A");
    let mut edges: Vec<Vec<(usize, usize)>> = vec![Vec::new(); graph_count];
    for (ln, l) in read_lines(&a_path)? {
        let mut parts = l.split(',');
        let (Some(a), Some(b), None) = (parts.next(), parts.next(), parts.next()) else {
            return Err(parse_err(&a_path, ln, "expected `i, j`"));
        };
        let i: usize = parse_value(&a_path, ln, a)?;
        let j: usize = parse_value(&a_path, ln, b)?;
        for v in [i, j] {
            if v == 0 || v > node_count {
                return Err(parse_err(
                    &a_path,
                    ln,
                    format!("node index {v} out of range 1..={node_count}"),
                ));
            }
        }
        let (gi, gj) = (graph_of[i - 1], graph_of[j - 1]);
        if gi != gj {
            return Err(parse_err(
                &a_path,
                ln,
                format!("edge ({i}, {j}) joins graph {} and graph {}", gi + 1, gj + 1),
            ));
        }
        edges[gi].push((local[i - 1], local[j - 1]));
    }

    let mut blocks: Vec<Array2<f64>> = Vec::new();
    let nl_path = file_path(dir, name, "node_labels");
    if nl_path.exists() {
        let values: Vec<i64> = per_node(&nl_path, node_count, |p, ln, l| parse_value(p, ln, l))?;
        let index: BTreeMap<i64, usize> = values
            .iter()
            .copied()
            .collect::<std::collections::BTreeSet<_>>()
            .into_iter()
            .enumerate()
            .map(|(i, v)| (v, i))
            .collect();
        let mut onehot = Array2::zeros((node_count, index.len()));
        for (node, v) in values.iter().enumerate() {
            onehot[[node, index[v]]] = 1.0;
        }
        blocks.push(onehot);
    }
    let at_path = file_path(dir, name, "node_attributes");
    if at_path.exists() {
        let rows: Vec<Vec<f64>> = per_node(&at_path, node_count, |p, ln, l| {
            l.split(',').map(|t| parse_value::<f64>(p, ln, t)).collect()
        })?;
        let d = rows[0].len();
        let mut attrs = Array2::zeros((node_count, d));
        for (node, r) in rows.iter().enumerate() {
            if r.len() != d {
                let ln = line_of(&at_path, node)?;
                return Err(parse_err(&at_path, ln, format!("expected {d} attributes, found {}", r.len())));
            }
            if r.iter().any(|x| !x.is_finite()) {
                let ln = line_of(&at_path, node)?;
                return Err(parse_err(&at_path, ln, "non-finite attribute"));
            }
            attrs.row_mut(node).assign(&ndarray::ArrayView1::from(r.as_slice()));
        }
        blocks.push(attrs);
    }
    let features = if blocks.is_empty() {
        None
    } else {
        let views: Vec<_> = blocks.iter().map(|b| b.view()).collect();
        Some(ndarray::concatenate(ndarray::Axis(1), &views).expect("row counts agree"))
    };

    let adjacencies: Vec<Array2<f64>> = members
        .iter()
        .zip(&edges)
        .map(|(nodes, es)| {
            let n = nodes.len();
            let mut adj = Array2::zeros((n, n));
            for &(i, j) in es {
                if i != j {
                    adj[[i, j]] = 1.0;
                    adj[[j, i]] = 1.0;
                }
            }
            adj
        })
        .collect();
    let cap = options.max_degree.unwrap_or_else(|| {
        adjacencies
            .iter()
            .flat_map(|a| a.rows().into_iter().map(|r| r.sum() as usize).collect::<Vec<_>>())
            .max()
            .unwrap_or(0)
    });
    let graphs = adjacencies
        .into_iter()
        .zip(&members)
        .map(|(adj, nodes)| {
            let f = match &features {
                Some(f) => f.select(ndarray::Axis(0), nodes),
                None => degree_features(adj.view(), cap),
            };
            Graph::from_adjacency(adj, f, options.structure_kind)
        })
        .collect::<Result<Vec<_>>>()?;
    LabeledDataset::new(name, graphs, labels, label_values.len(), options.structure_kind)
}

fn per_node<T>(path: &Path, node_count: usize, parse: impl Fn(&Path, usize, &str) -> Result<T>) -> Result<Vec<T>> {
    let lines = read_lines(path)?;
    if lines.len() != node_count {
        let ln = lines.get(node_count).map(|&(ln, _)| ln).unwrap_or(lines.len() + 1);
        return Err(parse_err(path, ln, format!("expected {node_count} rows, found {}", lines.len())));
    }
    lines.iter().map(|(ln, l)| parse(path, *ln, l)).collect()
}

fn line_of(path: &Path, node: usize) -> Result<usize> {
    Ok(read_lines(path)?.get(node).map(|&(ln, _)| ln).unwrap_or(0))
}

/// Writes `ds` in TU format. Node features go to `NAME_node_attributes.txt`
/// and graph labels are the class indices. `metadata` pairs are written to
/// `NAME_meta.txt` as `key=value` lines.
pub fn write_tu_dataset(ds: &LabeledDataset, dir: &Path, metadata: &[(&str, String)]) -> Result<()> {
    fs::create_dir_all(dir)?;
    let name = &ds.name;
    let mut a = BufWriter::new(fs::File::create(file_path(dir, name, "A"))?);
    let mut ind = BufWriter::new(fs::File::create(file_path(dir, name, "graph_indicator"))?);
    let mut attrs = BufWriter::new(fs::File::create(file_path(dir, name, "node_attributes"))?);
    let mut offset = 0;
    for (g, graph) in ds.graphs.iter().enumerate() {
        for (i, nb) in graph.neighbors().iter().enumerate() {
            for &j in nb {
                writeln!(a, "{}, {}", offset + i + 1, offset + j + 1)?;
            }
            writeln!(ind, "{}", g + 1)?;
            let row: Vec<String> = graph.features().row(i).iter().map(|x| format!("{x:?}")).collect();
            writeln!(attrs, "{}", row.join(", "))?;
        }
        offset += graph.node_count();
    }
    a.flush()?;
    ind.flush()?;
    attrs.flush()?;
    let mut labels = BufWriter::new(fs::File::create(file_path(dir, name, "graph_labels"))?);
    for y in &ds.labels {
        writeln!(labels, "{y}")?;
    }
    labels.flush()?;
    if !metadata.is_empty() {
        let mut meta = BufWriter::new(fs::File::create(file_path(dir, name, "meta"))?);
        for (k, v) in metadata {
            writeln!(meta, "{k}={v}")?;
        }
        meta.flush()?;
    }
    Ok(())
}

/// Finds the dataset name in `dir` from its `*_graph_indicator.txt` file.
pub fn detect_dataset_name(dir: &Path) -> Result<String> {
    let mut names: Vec<String> = fs::read_dir(dir)?
        .filter_map(|e| e.ok())
        .filter_map(|e| {
            e.file_name()
                .to_str()
                .and_then(|f| f.strip_suffix("_graph_indicator.txt"))
                .map(str::to_string)
        })
        .collect();
    names.sort();
    match names.len() {
        1 => Ok(names.remove(0)),
        0 => Err(Error::MissingFile(dir.join("*_graph_indicator.txt"))),
        _ => Err(validation(format!(
            "{} holds several datasets: {}",
            dir.display(),
            names.join(", ")
        ))),
    }
}
