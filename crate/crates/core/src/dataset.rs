//! Dataset splitting and on-disk formats.
//!
//! Edge-list files hold one `u v` pair per line; `#` starts a comment and an
//! optional `n=<k>` line fixes the node count (otherwise `max id + 1`).
//! A dataset directory holds one edge-list file per graph and a
//! `manifest.txt` naming them, one per line. A manifest line may name a
//! second file with a whitespace-separated node-feature matrix.

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use autodiff::Tensor;
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::graph::Graph;

pub const MANIFEST: &str = "manifest.txt";

#[derive(Debug, Clone)]
pub struct DatasetSplit {
    pub train: Vec<Graph>,
    pub validation: Vec<Graph>,
    pub test: Vec<Graph>,
    pub seed: u64,
}

/// Part sizes: floor of each share, then the remainder one at a time to the
/// parts with the largest fractional share (earlier parts win ties).
pub fn split_sizes(total: usize, ratios: [f64; 3]) -> [usize; 3] {
    let exact = ratios.map(|r| r * total as f64);
    let mut sizes = exact.map(|x| (x + 1e-9).floor() as usize);
    let mut rest = total.saturating_sub(sizes.iter().sum());
    let mut order = [0usize, 1, 2];
    order.sort_by(|&a, &b| {
        let fa = exact[a] - sizes[a] as f64;
        let fb = exact[b] - sizes[b] as f64;
        fb.partial_cmp(&fa)
            .unwrap_or(std::cmp::Ordering::Equal)
            .then(a.cmp(&b))
    });
    for &i in order.iter().cycle() {
        if rest == 0 {
            break;
        }
        sizes[i] += 1;
        rest -= 1;
    }
    sizes
}

pub fn split_dataset(graphs: Vec<Graph>, ratios: [f64; 3], seed: u64) -> Result<DatasetSplit> {
    if graphs.is_empty() {
        return Err(Error::InvalidArgument(
            "cannot split an empty dataset".into(),
        ));
    }
    if ratios.iter().any(|&r| r < 0.0) || (ratios.iter().sum::<f64>() - 1.0).abs() > 1e-9 {
        return Err(Error::InvalidArgument(format!(
            "split ratios {ratios:?} must sum to 1"
        )));
    }
    let [n_train, n_val, _] = split_sizes(graphs.len(), ratios);
    let mut graphs = graphs;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    graphs.shuffle(&mut rng);
    let test = graphs.split_off(n_train + n_val);
    let validation = graphs.split_off(n_train);
    Ok(DatasetSplit {
        train: graphs,
        validation,
        test,
        seed,
    })
}

fn parse_err(path: &Path, line: usize, msg: impl Into<String>) -> Error {
    Error::Parse {
        path: path.to_path_buf(),
        line,
        msg: msg.into(),
    }
}

pub fn parse_edge_list(text: &str, path: &Path) -> Result<Graph> {
    let mut n_header = None;
    let mut edges = Vec::new();
    for (idx, raw) in text.lines().enumerate() {
        let lineno = idx + 1;
        let line = raw.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        if let Some(k) = line.strip_prefix("n=") {
            let k = k
                .trim()
                .parse::<usize>()
                .map_err(|_| parse_err(path, lineno, format!("bad node count {k:?}")))?;
            n_header = Some(k);
            continue;
        }
        let mut it = line.split_whitespace();
        let (Some(a), Some(b), None) = (it.next(), it.next(), it.next()) else {
            return Err(parse_err(
                path,
                lineno,
                format!("expected \"u v\", found {line:?}"),
            ));
        };
        let parse = |s: &str| {
            s.parse::<usize>()
                .map_err(|_| parse_err(path, lineno, format!("bad node id {s:?}")))
        };
        let (u, v) = (parse(a)?, parse(b)?);
        if u == v {
            return Err(parse_err(path, lineno, format!("self-loop on node {u}")));
        }
        edges.push((u, v));
    }
    let max_id = edges.iter().map(|&(u, v)| u.max(v) + 1).max().unwrap_or(0);
    let n = match n_header {
        Some(k) if k < max_id => {
            return Err(parse_err(
                path,
                0,
                format!("n={k} but node id {} appears", max_id - 1),
            ))
        }
        Some(k) => k,
        None => max_id,
    };
    if n == 0 {
        return Err(parse_err(path, 0, "no nodes"));
    }
    Graph::from_edges(n, &edges)
}

pub fn load_edge_list(path: &Path) -> Result<Graph> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    parse_edge_list(&text, path)
}

pub fn edge_list_string(g: &Graph) -> String {
    let mut s = format!("n={}\n", g.n());
    for (u, v) in g.edges() {
        let _ = writeln!(s, "{u} {v}");
    }
    s
}

pub fn save_edge_list(g: &Graph, path: &Path) -> Result<()> {
    fs::write(path, edge_list_string(g)).map_err(|e| Error::io(path, e))
}

pub fn dot_string(g: &Graph) -> String {
    let mut s = String::from("graph G {\n");
    for u in 0..g.n() {
        let _ = writeln!(s, "  {u};");
    }
    for (u, v) in g.edges() {
        let _ = writeln!(s, "  {u} -- {v};");
    }
    s.push_str("}\n");
    s
}

pub fn save_dot(g: &Graph, path: &Path) -> Result<()> {
    fs::write(path, dot_string(g)).map_err(|e| Error::io(path, e))
}

/// Reads the DOT subset written by [`save_dot`]: node statements `k;` and
/// edge statements `u -- v;` inside one `graph { ... }` block.
pub fn parse_dot(text: &str, path: &Path) -> Result<Graph> {
    let open = text
        .find('{')
        .ok_or_else(|| parse_err(path, 1, "missing '{'"))?;
    let close = text
        .rfind('}')
        .ok_or_else(|| parse_err(path, 1, "missing '}'"))?;
    let header = text[..open].trim();
    if !header.starts_with("graph") && !header.starts_with("strict graph") {
        return Err(parse_err(path, 1, "expected an undirected 'graph'"));
    }
    let mut nodes = 0usize;
    let mut edges = Vec::new();
    for stmt in text[open + 1..close].split([';', '\n']) {
        let stmt = stmt.trim();
        if stmt.is_empty() {
            continue;
        }
        let line = text[..open].lines().count() + 1;
        let id = |s: &str| {
            s.trim()
                .trim_matches('"')
                .parse::<usize>()
                .map_err(|_| parse_err(path, line, format!("bad node id in {stmt:?}")))
        };
        if let Some((a, b)) = stmt.split_once("--") {
            let (u, v) = (id(a)?, id(b)?);
            nodes = nodes.max(u + 1).max(v + 1);
            edges.push((u, v));
        } else {
            nodes = nodes.max(id(stmt)? + 1);
        }
    }
    Graph::from_edges(nodes, &edges)
}

pub fn load_dot(path: &Path) -> Result<Graph> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    parse_dot(&text, path)
}

/// Whitespace-separated rows, one per node.
pub fn load_features(path: &Path) -> Result<Tensor> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let mut rows = Vec::new();
    for (idx, line) in text.lines().enumerate() {
        let line = line.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        let row = line
            .split_whitespace()
            .map(|s| s.parse::<f64>())
            .collect::<std::result::Result<Vec<_>, _>>()
            .map_err(|_| parse_err(path, idx + 1, "bad feature value"))?;
        rows.push(row);
    }
    Tensor::from_rows(&rows).map_err(|e| parse_err(path, 0, e.to_string()))
}

pub fn load_dataset(dir: &Path) -> Result<Vec<Graph>> {
    let manifest = dir.join(MANIFEST);
    let text = fs::read_to_string(&manifest).map_err(|e| Error::io(&manifest, e))?;
    let mut graphs = Vec::new();
    for (idx, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let mut parts = line.split_whitespace();
        let file = parts.next().expect("non-empty line");
        let mut g = load_edge_list(&dir.join(file))?;
        if let Some(feat) = parts.next() {
            g = g.with_features(load_features(&dir.join(feat))?)?;
        }
        if parts.next().is_some() {
            return Err(parse_err(
                &manifest,
                idx + 1,
                "expected at most two file names",
            ));
        }
        graphs.push(g);
    }
    if graphs.is_empty() {
        return Err(Error::InvalidArgument(format!(
            "{} lists no graphs",
            manifest.display()
        )));
    }
    Ok(graphs)
}

fn features_string(f: &Tensor) -> String {
    let cols = f.cols();
    f.data()
        .chunks(cols)
        .map(|row| {
            let cells: Vec<String> = row.iter().map(|v| format!("{v:?}")).collect();
            cells.join(" ") + "\n"
        })
        .collect()
}

/// Write `graphs` as `graph_0000.txt`, ... plus the manifest. Graphs with
/// non-default features also get a `graph_0000.feat` file. Returns the
/// written edge-list paths.
pub fn save_dataset(dir: &Path, graphs: &[Graph]) -> Result<Vec<PathBuf>> {
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let mut manifest = String::new();
    let mut paths = Vec::with_capacity(graphs.len());
    for (i, g) in graphs.iter().enumerate() {
        let name = format!("graph_{i:04}.txt");
        let path = dir.join(&name);
        save_edge_list(g, &path)?;
        manifest.push_str(&name);
        if *g.features() != Tensor::ones(&[g.n(), 1]) {
            let fname = format!("graph_{i:04}.feat");
            let fpath = dir.join(&fname);
            fs::write(&fpath, features_string(g.features())).map_err(|e| Error::io(&fpath, e))?;
            manifest.push(' ');
            manifest.push_str(&fname);
        }
        manifest.push('\n');
        paths.push(path);
    }
    let mpath = dir.join(MANIFEST);
    fs::write(&mpath, manifest).map_err(|e| Error::io(&mpath, e))?;
    Ok(paths)
}
