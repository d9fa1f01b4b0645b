//! Weighted graphs built from pair matrices: global efficiency, modularity
//! and top-fraction thresholding for display.

use std::cmp::{Ordering, Reverse};
use std::collections::BinaryHeap;
use std::fmt::Write as _;
use std::path::Path;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng::SeededRng;

pub const SYMMETRY_TOLERANCE: f64 = 1e-9;
pub const LOUVAIN_RESTARTS: u64 = 10;

/// Undirected graph with a dense symmetric non-negative weight matrix.
#[derive(Clone, Debug, PartialEq)]
pub struct WeightedGraph {
    n: usize,
    weights: Vec<f64>,
    layers: Option<Vec<usize>>,
}

impl WeightedGraph {
    /// Edgeless graph on `n` nodes.
    pub fn empty(n: usize) -> Self {
        WeightedGraph {
            n,
            weights: vec![0.0; n * n],
            layers: None,
        }
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn weight(&self, i: usize, j: usize) -> f64 {
        self.weights[i * self.n + j]
    }

    /// Sets both `(i, j)` and `(j, i)`.
    pub fn set_weight(&mut self, i: usize, j: usize, w: f64) -> Result<()> {
        if i == j || i >= self.n || j >= self.n {
            return Err(Error::validation(format!("invalid edge ({i}, {j})")));
        }
        if !(w >= 0.0 && w.is_finite()) {
            return Err(Error::validation(format!("invalid weight {w}")));
        }
        self.weights[i * self.n + j] = w;
        self.weights[j * self.n + i] = w;
        Ok(())
    }

    pub fn layers(&self) -> Option<&[usize]> {
        self.layers.as_deref()
    }

    pub fn with_layers(mut self, layers: Vec<usize>) -> Result<Self> {
        if layers.len() != self.n {
            return Err(Error::validation("one layer label per node required"));
        }
        self.layers = Some(layers);
        Ok(self)
    }

    /// Positive-weight edges `(i, j, w)` with `i < j`, sorted by `(i, j)`.
    pub fn edges(&self) -> Vec<(usize, usize, f64)> {
        let mut out = Vec::new();
        for i in 0..self.n {
            for j in i + 1..self.n {
                let w = self.weight(i, j);
                if w > 0.0 {
                    out.push((i, j, w));
                }
            }
        }
        out
    }

    /// Sum of weights over unordered pairs.
    pub fn total_weight(&self) -> f64 {
        self.edges().iter().map(|e| e.2).sum()
    }

    pub fn strengths(&self) -> Vec<f64> {
        (0..self.n)
            .map(|i| self.weights[i * self.n..(i + 1) * self.n].iter().sum())
            .collect()
    }

    fn neighbours(&self) -> Vec<Vec<(usize, f64)>> {
        (0..self.n)
            .map(|i| {
                (0..self.n)
                    .filter_map(|j| {
                        let w = self.weight(i, j);
                        (w > 0.0).then_some((j, w))
                    })
                    .collect()
            })
            .collect()
    }

    /// Edge-list text: a `# n N` header then `i j weight` lines. Later lines
    /// starting with `#` are comments.
    pub fn to_edge_list(&self) -> String {
        let mut out = format!("# n {}\n", self.n);
        for (i, j, w) in self.edges() {
            writeln!(out, "{i} {j} {w:.16e}").unwrap();
        }
        out
    }

    pub fn from_edge_list(text: &str) -> Result<Self> {
        let mut lines = text.lines();
        let n = lines
            .next()
            .and_then(|h| h.strip_prefix("# n "))
            .and_then(|n| n.trim().parse::<usize>().ok())
            .ok_or_else(|| Error::Format("edge list missing '# n N' header".into()))?;
        let mut g = WeightedGraph::empty(n);
        for (k, line) in lines.enumerate() {
            if line.trim().is_empty() || line.starts_with('#') {
                continue;
            }
            let bad = || Error::Format(format!("edge list line {}: {line:?}", k + 2));
            let mut parts = line.split_whitespace();
            let i: usize = parts.next().and_then(|s| s.parse().ok()).ok_or_else(bad)?;
            let j: usize = parts.next().and_then(|s| s.parse().ok()).ok_or_else(bad)?;
            let w: f64 = parts.next().and_then(|s| s.parse().ok()).ok_or_else(bad)?;
            if parts.next().is_some() {
                return Err(bad());
            }
            g.set_weight(i, j, w).map_err(|_| bad())?;
        }
        Ok(g)
    }
}

/// Builds a graph from a row-major `n × n` matrix.
pub fn build_graph(matrix: &[f64], n: usize, clip_negative: bool) -> Result<WeightedGraph> {
    if matrix.len() != n * n {
        return Err(Error::validation(format!(
            "matrix has {} entries, expected {n}x{n}",
            matrix.len()
        )));
    }
    let mut g = WeightedGraph::empty(n);
    for i in 0..n {
        for j in i + 1..n {
            let (a, b) = (matrix[i * n + j], matrix[j * n + i]);
            if !a.is_finite() || !b.is_finite() {
                return Err(Error::validation(format!("non-finite entry at ({i}, {j})")));
            }
            if (a - b).abs() > SYMMETRY_TOLERANCE {
                return Err(Error::validation(format!(
                    "asymmetric matrix at ({i}, {j}): {a} vs {b}"
                )));
            }
            let mut w = 0.5 * (a + b);
            if w < 0.0 {
                if !clip_negative {
                    return Err(Error::validation(format!(
                        "negative weight {w} at ({i}, {j})"
                    )));
                }
                w = 0.0;
            }
            g.weights[i * n + j] = w;
            g.weights[j * n + i] = w;
        }
    }
    Ok(g)
}

#[derive(Clone, Copy, PartialEq)]
struct Dist(f64);

impl Eq for Dist {}

impl PartialOrd for Dist {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

impl Ord for Dist {
    fn cmp(&self, other: &Self) -> Ordering {
        self.0.total_cmp(&other.0)
    }
}

fn dijkstra(adj: &[Vec<(usize, f64)>], source: usize) -> Vec<f64> {
    let mut dist = vec![f64::INFINITY; adj.len()];
    let mut heap = BinaryHeap::new();
    dist[source] = 0.0;
    heap.push(Reverse((Dist(0.0), source)));
    while let Some(Reverse((Dist(d), u))) = heap.pop() {
        if d > dist[u] {
            continue;
        }
        for &(v, w) in &adj[u] {
            let nd = d + 1.0 / w;
            if nd < dist[v] {
                dist[v] = nd;
                heap.push(Reverse((Dist(nd), v)));
            }
        }
    }
    dist
}

/// Mean inverse shortest-path distance over ordered pairs, edge length `1/w`.
pub fn global_efficiency(g: &WeightedGraph) -> f64 {
    let n = g.n;
    if n < 2 {
        return 0.0;
    }
    let adj = g.neighbours();
    let per_source: Vec<f64> = (0..n)
        .into_par_iter()
        .map(|s| {
            dijkstra(&adj, s)
                .iter()
                .enumerate()
                .filter(|&(t, d)| t != s && d.is_finite())
                .map(|(_, d)| 1.0 / d)
                .sum()
        })
        .collect();
    per_source.iter().sum::<f64>() / (n * (n - 1)) as f64
}

/// Newman weighted modularity of `partition` (community label per node).
pub fn modularity_of(g: &WeightedGraph, partition: &[usize]) -> Result<f64> {
    if partition.len() != g.n {
        return Err(Error::validation(
            "partition length differs from node count",
        ));
    }
    let total = g.total_weight();
    if total <= 0.0 {
        return Err(Error::validation("modularity needs positive total weight"));
    }
    let n_comm = partition.iter().max().map_or(0, |m| m + 1);
    let mut internal = vec![0.0; n_comm];
    let mut strength = vec![0.0; n_comm];
    for (i, s) in g.strengths().into_iter().enumerate() {
        strength[partition[i]] += s;
    }
    for (i, j, w) in g.edges() {
        if partition[i] == partition[j] {
            internal[partition[i]] += w;
        }
    }
    Ok(internal
        .iter()
        .zip(&strength)
        .map(|(wc, sc)| wc / total - (sc / (2.0 * total)).powi(2))
        .sum())
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Communities {
    pub q: f64,
    /// Community label per node, numbered by first appearance.
    pub partition: Vec<usize>,
}

impl Communities {
    pub fn n_communities(&self) -> usize {
        self.partition.iter().max().map_or(0, |m| m + 1)
    }
}

fn relabel(labels: &mut [usize]) -> usize {
    let mut map = vec![usize::MAX; labels.len()];
    let mut next = 0;
    for l in labels.iter_mut() {
        if map[*l] == usize::MAX {
            map[*l] = next;
            next += 1;
        }
        *l = map[*l];
    }
    next
}

/// One local-moving phase; returns community labels and whether any node moved.
fn local_moving(
    adj: &[Vec<(usize, f64)>],
    k: &[f64],
    m2: f64,
    rng: &mut SeededRng,
) -> (Vec<usize>, bool) {
    let n = adj.len();
    let mut comm: Vec<usize> = (0..n).collect();
    let mut tot = k.to_vec();
    let mut order: Vec<usize> = (0..n).collect();
    rng.shuffle(&mut order);

    let mut link = vec![0.0; n];
    let mut touched: Vec<usize> = Vec::new();
    let mut moved_any = false;
    loop {
        let mut moved = false;
        for &i in &order {
            let own = comm[i];
            for &(j, w) in &adj[i] {
                if j == i {
                    continue;
                }
                let c = comm[j];
                if link[c] == 0.0 {
                    touched.push(c);
                }
                link[c] += w;
            }
            tot[own] -= k[i];
            let gain = |c: usize, link: &[f64]| link[c] - tot[c] * k[i] / m2;
            let mut best = own;
            let mut best_gain = gain(own, &link);
            for &c in &touched {
                let g = gain(c, &link);
                if g > best_gain + 1e-12 {
                    best = c;
                    best_gain = g;
                }
            }
            tot[best] += k[i];
            if best != own {
                comm[i] = best;
                moved = true;
                moved_any = true;
            }
            for &c in &touched {
                link[c] = 0.0;
            }
            touched.clear();
        }
        if !moved {
            break;
        }
    }
    (comm, moved_any)
}

fn louvain_once(g: &WeightedGraph, seed: u64) -> Vec<usize> {
    let m2 = 2.0 * g.total_weight();
    let mut adj = g.neighbours();
    let mut k = g.strengths();
    let mut membership: Vec<usize> = (0..g.n).collect();
    let mut rng = SeededRng::new(seed);
    loop {
        let (mut comm, moved) = local_moving(&adj, &k, m2, &mut rng);
        if !moved {
            break;
        }
        let n_comm = relabel(&mut comm);
        for m in membership.iter_mut() {
            *m = comm[*m];
        }
        let mut dense = vec![0.0; n_comm * n_comm];
        let mut new_k = vec![0.0; n_comm];
        for (i, nbrs) in adj.iter().enumerate() {
            new_k[comm[i]] += k[i];
            for &(j, w) in nbrs {
                if comm[i] != comm[j] {
                    dense[comm[i] * n_comm + comm[j]] += w;
                }
            }
        }
        adj = (0..n_comm)
            .map(|a| {
                (0..n_comm)
                    .filter_map(|b| {
                        let w = dense[a * n_comm + b];
                        (w > 0.0).then_some((b, w))
                    })
                    .collect()
            })
            .collect();
        k = new_k;
    }
    relabel(&mut membership);
    membership
}

/// Greedy multilevel (Louvain) community detection, best of
/// [`LOUVAIN_RESTARTS`] seeded restarts. `q` is recomputed on the returned
/// partition.
pub fn modularity(g: &WeightedGraph, seed: u64) -> Result<Communities> {
    if g.total_weight() <= 0.0 {
        return Err(Error::validation("modularity needs positive total weight"));
    }
    let mut best: Option<Communities> = None;
    for r in 0..LOUVAIN_RESTARTS {
        let partition = louvain_once(g, SeededRng::derive(seed, r).next_u64());
        let q = modularity_of(g, &partition)?;
        if best.as_ref().is_none_or(|b| q > b.q) {
            best = Some(Communities { q, partition });
        }
    }
    Ok(best.expect("at least one restart"))
}

/// Keeps the `⌈q·M⌉` heaviest of the `M` positive edges; ties go to the
/// lexicographically smaller `(i, j)`.
pub fn threshold_top_fraction(g: &WeightedGraph, q: f64) -> Result<WeightedGraph> {
    if !(q > 0.0 && q <= 1.0) {
        return Err(Error::validation(format!(
            "threshold fraction must be in (0, 1], got {q}"
        )));
    }
    let mut edges = g.edges();
    let keep = ((q * edges.len() as f64) - 1e-9).ceil().max(0.0) as usize;
    edges.sort_by(|a, b| b.2.total_cmp(&a.2).then((a.0, a.1).cmp(&(b.0, b.1))));
    let mut out = WeightedGraph {
        n: g.n,
        weights: vec![0.0; g.n * g.n],
        layers: g.layers.clone(),
    };
    for &(i, j, w) in &edges[..keep.min(edges.len())] {
        out.weights[i * g.n + j] = w;
        out.weights[j * g.n + i] = w;
    }
    Ok(out)
}

pub fn export_graph(g: &WeightedGraph, path: impl AsRef<Path>) -> Result<()> {
    std::fs::write(path, g.to_edge_list())?;
    Ok(())
}

pub fn import_graph(path: impl AsRef<Path>) -> Result<WeightedGraph> {
    WeightedGraph::from_edge_list(&std::fs::read_to_string(path)?)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GraphMetrics {
    pub global_efficiency: f64,
    pub modularity_q: f64,
    pub n: usize,
    pub total_weight: f64,
}

pub fn graph_metrics(g: &WeightedGraph, seed: u64) -> Result<GraphMetrics> {
    Ok(GraphMetrics {
        global_efficiency: global_efficiency(g),
        modularity_q: modularity(g, seed)?.q,
        n: g.n,
        total_weight: g.total_weight(),
    })
}
