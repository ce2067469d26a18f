//! Reading and writing the TU benchmark text format.
//!
//! A dataset `NAME` is a directory holding `NAME_A.txt` (one `i, j` edge
//! per line, 1-based global node ids), `NAME_graph_indicator.txt` (the
//! 1-based graph id of each node) and `NAME_graph_labels.txt` (one integer
//! label per graph). `NAME_node_labels.txt` is read only on request.

use std::collections::BTreeSet;
use std::fs;
use std::io::Write as _;
use std::path::{Path, PathBuf};

use graphhist_core::dataset::GraphDataset;
use graphhist_core::{Graph, Tensor};

#[derive(Debug, thiserror::Error)]
pub enum TuError {
    #[error("missing file {}", .0.display())]
    Missing(PathBuf),
    #[error("no *_A.txt file in {}", .0.display())]
    NoEdgeFile(PathBuf),
    #[error("{}:{line}: expected an integer, found {token:?}", path.display())]
    Parse {
        path: PathBuf,
        line: usize,
        token: String,
    },
    #[error("{}:{line}: expected {expected} values, found {found}", path.display())]
    Arity {
        path: PathBuf,
        line: usize,
        expected: usize,
        found: usize,
    },
    #[error("{}:{line}: node {node} is not in any graph ({nodes} nodes listed)", path.display())]
    NodeOutsideGraph {
        path: PathBuf,
        line: usize,
        node: i64,
        nodes: usize,
    },
    #[error("{}:{line}: edge {a}-{b} joins graphs {ga} and {gb}", path.display())]
    CrossGraph {
        path: PathBuf,
        line: usize,
        a: i64,
        b: i64,
        ga: usize,
        gb: usize,
    },
    #[error("{}:{line}: graph id {id} outside 1..={graphs}", path.display())]
    GraphId {
        path: PathBuf,
        line: usize,
        id: i64,
        graphs: usize,
    },
    #[error("{}: {detail}", path.display())]
    Inconsistent { path: PathBuf, detail: String },
    #[error("{}: {source}", path.display())]
    Io {
        path: PathBuf,
        source: std::io::Error,
    },
    #[error(transparent)]
    Core(#[from] graphhist_core::Error),
}

type Result<T> = std::result::Result<T, TuError>;

/// One parsed line: its 1-based number and integer fields.
struct Row {
    line: usize,
    values: Vec<i64>,
}

fn read_rows(path: &Path, arity: usize) -> Result<Vec<Row>> {
    if !path.is_file() {
        return Err(TuError::Missing(path.to_path_buf()));
    }
    let text = fs::read_to_string(path).map_err(|source| TuError::Io {
        path: path.to_path_buf(),
        source,
    })?;
    let mut rows = Vec::new();
    for (i, raw) in text.lines().enumerate() {
        let line = i + 1;
        if raw.trim().is_empty() {
            continue;
        }
        let values = raw
            .split(',')
            .map(|tok| {
                let tok = tok.trim();
                tok.parse::<i64>().map_err(|_| TuError::Parse {
                    path: path.to_path_buf(),
                    line,
                    token: tok.to_string(),
                })
            })
            .collect::<Result<Vec<_>>>()?;
        if values.len() != arity {
            return Err(TuError::Arity {
                path: path.to_path_buf(),
                line,
                expected: arity,
                found: values.len(),
            });
        }
        rows.push(Row { line, values });
    }
    Ok(rows)
}

/// Finds `NAME` from the single `NAME_A.txt` in `dir`.
pub fn infer_name(dir: &Path) -> Result<String> {
    let entries = fs::read_dir(dir).map_err(|source| {
        if source.kind() == std::io::ErrorKind::NotFound {
            return TuError::Missing(dir.to_path_buf());
        }
        TuError::Io {
            path: dir.to_path_buf(),
            source,
        }
    })?;
    let mut names: Vec<String> = entries
        .filter_map(|e| e.ok())
        .filter_map(|e| {
            e.file_name()
                .to_str()
                .and_then(|f| f.strip_suffix("_A.txt"))
                .map(str::to_string)
        })
        .collect();
    names.sort();
    names
        .into_iter()
        .next()
        .ok_or_else(|| TuError::NoEdgeFile(dir.to_path_buf()))
}

/// Dense remap of raw labels, ascending by raw value.
fn dense_labels(raw: &[i64]) -> (Vec<usize>, Vec<i64>) {
    let distinct: Vec<i64> = raw
        .iter()
        .copied()
        .collect::<BTreeSet<_>>()
        .into_iter()
        .collect();
    let mapped = raw
        .iter()
        .map(|v| distinct.binary_search(v).expect("present"))
        .collect();
    (mapped, distinct)
}

/// Loads `dir/NAME_*.txt`; `name` defaults to the one inferred from the
/// edge file.
///
/// Self-loops are added to every graph. Features are the degree and a
/// constant column; with `use_node_labels`, a one-hot encoding of the node
/// labels is appended.
pub fn load_tu_dataset(
    dir: &Path,
    name: Option<&str>,
    use_node_labels: bool,
) -> Result<GraphDataset> {
    let name = match name {
        Some(n) => n.to_string(),
        None => infer_name(dir)?,
    };
    let file = |suffix: &str| dir.join(format!("{name}_{suffix}.txt"));
    let (a_path, ind_path, lab_path) = (file("A"), file("graph_indicator"), file("graph_labels"));
    for p in [&a_path, &ind_path, &lab_path] {
        if !p.is_file() {
            return Err(TuError::Missing(p.clone()));
        }
    }

    let raw_labels: Vec<i64> = read_rows(&lab_path, 1)?
        .into_iter()
        .map(|r| r.values[0])
        .collect();
    let graph_count = raw_labels.len();
    if graph_count == 0 {
        return Err(TuError::Inconsistent {
            path: lab_path,
            detail: "no graph labels".into(),
        });
    }

    // node -> (graph, local index)
    let mut owner = Vec::new();
    let mut sizes = vec![0usize; graph_count];
    for row in read_rows(&ind_path, 1)? {
        let id = row.values[0];
        if id < 1 || id as usize > graph_count {
            return Err(TuError::GraphId {
                path: ind_path,
                line: row.line,
                id,
                graphs: graph_count,
            });
        }
        let g = id as usize - 1;
        owner.push((g, sizes[g]));
        sizes[g] += 1;
    }
    if let Some(empty) = sizes.iter().position(|&s| s == 0) {
        return Err(TuError::Inconsistent {
            path: ind_path,
            detail: format!("graph {} has no nodes", empty + 1),
        });
    }

    let mut edges: Vec<Vec<(usize, usize)>> = vec![Vec::new(); graph_count];
    let lookup = |node: i64, line: usize| -> Result<(usize, usize)> {
        if node < 1 || node as usize > owner.len() {
            return Err(TuError::NodeOutsideGraph {
                path: a_path.clone(),
                line,
                node,
                nodes: owner.len(),
            });
        }
        Ok(owner[node as usize - 1])
    };
    for row in read_rows(&a_path, 2)? {
        let (a, b) = (row.values[0], row.values[1]);
        let (ga, ia) = lookup(a, row.line)?;
        let (gb, ib) = lookup(b, row.line)?;
        if ga != gb {
            return Err(TuError::CrossGraph {
                path: a_path.clone(),
                line: row.line,
                a,
                b,
                ga: ga + 1,
                gb: gb + 1,
            });
        }
        edges[ga].push((ia, ib));
    }

    let node_labels = if use_node_labels {
        let path = file("node_labels");
        let rows = read_rows(&path, 1)?;
        if rows.len() != owner.len() {
            return Err(TuError::Inconsistent {
                path,
                detail: format!("{} node labels for {} nodes", rows.len(), owner.len()),
            });
        }
        let raw: Vec<i64> = rows.into_iter().map(|r| r.values[0]).collect();
        Some(dense_labels(&raw))
    } else {
        None
    };

    let mut members: Vec<Vec<usize>> = sizes.iter().map(|&s| Vec::with_capacity(s)).collect();
    for (node, &(g, _)) in owner.iter().enumerate() {
        members[g].push(node);
    }
    let mut graphs = Vec::with_capacity(graph_count);
    for (g, pairs) in edges.into_iter().enumerate() {
        let graph = Graph::unweighted(sizes[g], pairs)?.add_self_loops();
        let mut f = graph.default_features();
        if let Some((mapped, distinct)) = &node_labels {
            let base = f;
            f = Tensor::zeros(&[sizes[g], 2 + distinct.len()]);
            for (local, &node) in members[g].iter().enumerate() {
                f.set(local, 0, base.at(local, 0));
                f.set(local, 1, base.at(local, 1));
                f.set(local, 2 + mapped[node], 1.0);
            }
        }
        graphs.push(graph.with_features(f)?);
    }

    let (labels, _) = dense_labels(&raw_labels);
    Ok(GraphDataset::new(name, graphs, labels)?)
}

fn create(path: &Path) -> Result<std::io::BufWriter<fs::File>> {
    fs::File::create(path)
        .map(std::io::BufWriter::new)
        .map_err(|source| TuError::Io {
            path: path.to_path_buf(),
            source,
        })
}

/// Writes `ds` as `dir/NAME_*.txt` (creating `dir`). Every stored edge is
/// written in both directions; self-loops once. Labels are written as
/// their dense indices.
pub fn write_tu_dataset(ds: &GraphDataset, dir: &Path, name: &str) -> Result<()> {
    let io = |path: &Path| {
        let path = path.to_path_buf();
        move |source| TuError::Io { path, source }
    };
    fs::create_dir_all(dir).map_err(io(dir))?;
    let a_path = dir.join(format!("{name}_A.txt"));
    let ind_path = dir.join(format!("{name}_graph_indicator.txt"));
    let lab_path = dir.join(format!("{name}_graph_labels.txt"));
    let (mut a, mut ind, mut lab) = (create(&a_path)?, create(&ind_path)?, create(&lab_path)?);
    let mut offset = 0;
    for (g, (graph, label)) in ds.graphs().iter().zip(ds.labels()).enumerate() {
        for &(i, j, _) in graph.edges() {
            writeln!(a, "{}, {}", offset + i + 1, offset + j + 1).map_err(io(&a_path))?;
        }
        for _ in 0..graph.n() {
            writeln!(ind, "{}", g + 1).map_err(io(&ind_path))?;
        }
        writeln!(lab, "{label}").map_err(io(&lab_path))?;
        offset += graph.n();
    }
    a.flush().map_err(io(&a_path))?;
    ind.flush().map_err(io(&ind_path))?;
    lab.flush().map_err(io(&lab_path))?;
    Ok(())
}
