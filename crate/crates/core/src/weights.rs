//! Location adjacency and multi-level neighborhood weights.
//!
//! Level `l` neighbors of a location are the locations at shortest-path hop
//! distance exactly `l` in the adjacency graph. `W^(0)` is the identity and
//! each `W^(l)` for `l >= 1` is the row-normalized indicator of the level-`l`
//! relation; rows without any level-`l` neighbor are left at zero.

use std::collections::{BTreeSet, HashMap, VecDeque};
use std::fs;
use std::path::Path;

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct AdjacencyGraph {
    locations: Vec<String>,
    /// Unordered pairs stored as (smaller index, larger index).
    edges: BTreeSet<(usize, usize)>,
}

impl AdjacencyGraph {
    /// Builds a graph from location ids and id pairs. Duplicate edges collapse;
    /// self-loops, duplicate ids and undeclared endpoints are rejected.
    pub fn new<S, E>(locations: Vec<S>, edges: E) -> Result<Self>
    where
        S: Into<String>,
        E: IntoIterator<Item = (String, String)>,
    {
        let locations: Vec<String> = locations.into_iter().map(Into::into).collect();
        let mut index = HashMap::with_capacity(locations.len());
        for (i, id) in locations.iter().enumerate() {
            if id.is_empty() {
                return Err(Error::InvalidGraph("empty location id".into()));
            }
            if index.insert(id.clone(), i).is_some() {
                return Err(Error::InvalidGraph(format!("duplicate location `{id}`")));
            }
        }
        let mut set = BTreeSet::new();
        for (a, b) in edges {
            let ia = *index
                .get(&a)
                .ok_or_else(|| Error::InvalidGraph(format!("undeclared location `{a}`")))?;
            let ib = *index
                .get(&b)
                .ok_or_else(|| Error::InvalidGraph(format!("undeclared location `{b}`")))?;
            if ia == ib {
                return Err(Error::InvalidGraph(format!("self-loop on `{a}`")));
            }
            set.insert((ia.min(ib), ia.max(ib)));
        }
        Ok(Self {
            locations,
            edges: set,
        })
    }

    /// Parses the adjacency text format: one `locA,locB` edge per line,
    /// `#` comments, and an optional `locations:` line listing ids (which
    /// also fixes their order; remaining endpoints follow in order of first
    /// appearance).
    pub fn parse(text: &str) -> Result<Self> {
        let mut locations: Vec<String> = Vec::new();
        let mut seen = std::collections::HashSet::new();
        let mut pairs = Vec::new();
        let mut declare = |id: &str, locations: &mut Vec<String>| {
            if seen.insert(id.to_string()) {
                locations.push(id.to_string());
            }
        };
        for (lineno, raw) in text.lines().enumerate() {
            let line = raw.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            if let Some(rest) = line.strip_prefix("locations:") {
                for id in rest.split([',', ' ', '\t']).map(str::trim) {
                    if !id.is_empty() {
                        declare(id, &mut locations);
                    }
                }
                continue;
            }
            let mut parts = line.split(',').map(str::trim);
            match (parts.next(), parts.next(), parts.next()) {
                (Some(a), Some(b), None) if !a.is_empty() && !b.is_empty() => {
                    declare(a, &mut locations);
                    declare(b, &mut locations);
                    pairs.push((a.to_string(), b.to_string()));
                }
                _ => {
                    return Err(Error::InvalidGraph(format!(
                        "line {}: expected `locA,locB`, got `{line}`",
                        lineno + 1
                    )))
                }
            }
        }
        Self::new(locations, pairs)
    }

    pub fn read(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::parse(&text)
    }

    /// Serializes back to the text format accepted by [`AdjacencyGraph::parse`].
    pub fn to_text(&self) -> String {
        let mut out = format!("locations: {}\n", self.locations.join(","));
        for &(a, b) in &self.edges {
            out.push_str(&self.locations[a]);
            out.push(',');
            out.push_str(&self.locations[b]);
            out.push('\n');
        }
        out
    }

    pub fn locations(&self) -> &[String] {
        &self.locations
    }

    pub fn len(&self) -> usize {
        self.locations.len()
    }

    pub fn is_empty(&self) -> bool {
        self.locations.is_empty()
    }

    pub fn index_of(&self, id: &str) -> Option<usize> {
        self.locations.iter().position(|l| l == id)
    }

    pub fn edges(&self) -> impl Iterator<Item = (&str, &str)> + '_ {
        self.edges
            .iter()
            .map(|&(a, b)| (self.locations[a].as_str(), self.locations[b].as_str()))
    }

    pub fn edge_count(&self) -> usize {
        self.edges.len()
    }

    fn neighbors(&self) -> Vec<Vec<usize>> {
        let mut adj = vec![Vec::new(); self.len()];
        for &(a, b) in &self.edges {
            adj[a].push(b);
            adj[b].push(a);
        }
        adj
    }

    /// SHA-256 over the sorted location ids and sorted id-pair edges. Does not
    /// depend on declaration order.
    pub fn fingerprint(&self) -> String {
        let mut ids: Vec<&str> = self.locations.iter().map(String::as_str).collect();
        ids.sort_unstable();
        let mut edges: Vec<(&str, &str)> = self
            .edges()
            .map(|(a, b)| if a <= b { (a, b) } else { (b, a) })
            .collect();
        edges.sort_unstable();
        let mut hasher = Sha256::new();
        for id in ids {
            hasher.update(id.as_bytes());
            hasher.update([0u8]);
        }
        hasher.update([1u8]);
        for (a, b) in edges {
            hasher.update(a.as_bytes());
            hasher.update([0u8]);
            hasher.update(b.as_bytes());
            hasher.update([0u8]);
        }
        hex::encode(hasher.finalize())
    }

    /// A `rows x cols` 4-neighbor lattice with ids `r{row}c{col}`, truncated
    /// to the first `k` cells in row-major order.
    pub fn lattice(rows: usize, cols: usize, k: usize) -> Self {
        let k = k.min(rows * cols);
        let id = |r: usize, c: usize| format!("r{r}c{c}");
        let mut locations = Vec::with_capacity(k);
        let mut edges = Vec::new();
        for cell in 0..k {
            let (r, c) = (cell / cols, cell % cols);
            locations.push(id(r, c));
            if c > 0 {
                edges.push((id(r, c - 1), id(r, c)));
            }
            if r > 0 {
                edges.push((id(r - 1, c), id(r, c)));
            }
        }
        Self::new(locations, edges).expect("lattice is a valid graph")
    }
}

/// All-pairs hop distances by breadth-first search. Entries farther than
/// `max_level` (including disconnected pairs) hold `max_level + 1`.
pub fn graph_distances(graph: &AdjacencyGraph, max_level: usize) -> DMatrix<usize> {
    let k = graph.len();
    let far = max_level + 1;
    let adj = graph.neighbors();
    let mut dist = DMatrix::from_element(k, k, far);
    let mut queue = VecDeque::new();
    for src in 0..k {
        dist[(src, src)] = 0;
        queue.clear();
        queue.push_back(src);
        while let Some(u) = queue.pop_front() {
            let du = dist[(src, u)];
            if du >= max_level {
                continue;
            }
            for &v in &adj[u] {
                if dist[(src, v)] == far {
                    dist[(src, v)] = du + 1;
                    queue.push_back(v);
                }
            }
        }
    }
    dist
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NeighborhoodWeights {
    location_ids: Vec<String>,
    mats: Vec<DMatrix<f64>>,
}

impl NeighborhoodWeights {
    pub fn eta(&self) -> usize {
        self.mats.len()
    }

    pub fn k(&self) -> usize {
        self.location_ids.len()
    }

    pub fn location_ids(&self) -> &[String] {
        &self.location_ids
    }

    pub fn level(&self, l: usize) -> &DMatrix<f64> {
        &self.mats[l]
    }

    pub fn levels(&self) -> &[DMatrix<f64>] {
        &self.mats
    }

    /// Keeps only the first `eta` levels.
    pub fn truncated(&self, eta: usize) -> Self {
        Self {
            location_ids: self.location_ids.clone(),
            mats: self.mats[..eta.min(self.mats.len())].to_vec(),
        }
    }

    /// `W_i^(l) · y`: the level-`l` weighted average seen from location `i`.
    pub fn apply_row(&self, l: usize, i: usize, y: impl Iterator<Item = f64>) -> f64 {
        self.mats[l].row(i).iter().zip(y).map(|(w, v)| w * v).sum()
    }
}

/// Builds `W^(0)..W^(eta-1)` over all graph locations in declaration order.
pub fn build_weights(graph: &AdjacencyGraph, eta: usize) -> Result<NeighborhoodWeights> {
    build_weights_over(graph, graph.locations(), eta)
}

/// Builds weights over an ordered subset of the graph's locations. Hop
/// distances come from the full graph; only the rows and columns of the
/// subset are kept before normalization.
pub fn build_weights_over<S: AsRef<str>>(
    graph: &AdjacencyGraph,
    subset: &[S],
    eta: usize,
) -> Result<NeighborhoodWeights> {
    if eta == 0 {
        return Err(Error::InvalidOrder("eta must be at least 1".into()));
    }
    let idx: Vec<usize> = subset
        .iter()
        .map(|id| {
            graph.index_of(id.as_ref()).ok_or_else(|| {
                Error::InvalidGraph(format!("location `{}` not in graph", id.as_ref()))
            })
        })
        .collect::<Result<_>>()?;
    let mut uniq = idx.clone();
    uniq.sort_unstable();
    uniq.dedup();
    if uniq.len() != idx.len() {
        return Err(Error::InvalidGraph("duplicate location in subset".into()));
    }

    let k = idx.len();
    let dist = graph_distances(graph, eta.saturating_sub(1));
    let mut mats = Vec::with_capacity(eta);
    mats.push(DMatrix::identity(k, k));
    for level in 1..eta {
        let mut w = DMatrix::zeros(k, k);
        for r in 0..k {
            let count = (0..k).filter(|&c| dist[(idx[r], idx[c])] == level).count();
            if count == 0 {
                continue;
            }
            let share = 1.0 / count as f64;
            for c in 0..k {
                if dist[(idx[r], idx[c])] == level {
                    w[(r, c)] = share;
                }
            }
        }
        mats.push(w);
    }
    Ok(NeighborhoodWeights {
        location_ids: subset.iter().map(|s| s.as_ref().to_string()).collect(),
        mats,
    })
}
