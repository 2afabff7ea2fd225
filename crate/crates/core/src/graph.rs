//! Undirected, unweighted communication graphs and their Laplacians.

use std::collections::{BTreeSet, VecDeque};
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::linalg::Matrix;

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum GraphError {
    #[error("graph needs at least one vertex")]
    Empty,
    #[error("self-loop at vertex {0}")]
    SelfLoop(usize),
    #[error("edge ({i}, {j}) references a vertex outside 0..{p}")]
    OutOfRange { i: usize, j: usize, p: usize },
    #[error("graph is not connected")]
    Disconnected,
    #[error("graph text: {0}")]
    Parse(String),
    #[error("unknown graph preset `{0}` (expected ring, path, complete or star)")]
    UnknownPreset(String),
}

/// Undirected graph on vertices `0..p`. Each edge is stored once as `(i, j)`
/// with `i < j`, sorted.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(try_from = "RawGraph", into = "RawGraph")]
pub struct Graph {
    p: usize,
    edges: Vec<(usize, usize)>,
}

#[derive(Serialize, Deserialize)]
struct RawGraph {
    p: usize,
    edges: Vec<(usize, usize)>,
}

impl TryFrom<RawGraph> for Graph {
    type Error = GraphError;
    fn try_from(raw: RawGraph) -> Result<Self, GraphError> {
        build_graph(raw.p, &raw.edges)
    }
}

impl From<Graph> for RawGraph {
    fn from(g: Graph) -> Self {
        RawGraph {
            p: g.p,
            edges: g.edges,
        }
    }
}

pub fn build_graph(p: usize, edges: &[(usize, usize)]) -> Result<Graph, GraphError> {
    if p == 0 {
        return Err(GraphError::Empty);
    }
    let mut set = BTreeSet::new();
    for &(i, j) in edges {
        if i >= p || j >= p {
            return Err(GraphError::OutOfRange { i, j, p });
        }
        if i == j {
            return Err(GraphError::SelfLoop(i));
        }
        set.insert((i.min(j), i.max(j)));
    }
    Ok(Graph {
        p,
        edges: set.into_iter().collect(),
    })
}

impl Graph {
    pub fn p(&self) -> usize {
        self.p
    }

    pub fn edges(&self) -> &[(usize, usize)] {
        &self.edges
    }

    /// Neighbors of `i`, ascending.
    pub fn neighbors(&self, i: usize) -> Vec<usize> {
        let mut out: Vec<usize> = self
            .edges
            .iter()
            .filter_map(|&(a, b)| {
                if a == i {
                    Some(b)
                } else if b == i {
                    Some(a)
                } else {
                    None
                }
            })
            .collect();
        out.sort_unstable();
        out
    }

    /// Neighbor lists for every vertex.
    pub fn adjacency(&self) -> Vec<Vec<usize>> {
        let mut adj = vec![Vec::new(); self.p];
        for &(a, b) in &self.edges {
            adj[a].push(b);
            adj[b].push(a);
        }
        for list in &mut adj {
            list.sort_unstable();
        }
        adj
    }

    pub fn degree(&self, i: usize) -> usize {
        self.edges
            .iter()
            .filter(|&&(a, b)| a == i || b == i)
            .count()
    }

    pub fn ring(p: usize) -> Result<Graph, GraphError> {
        let edges: Vec<_> = if p < 2 {
            Vec::new()
        } else {
            (0..p).map(|i| (i, (i + 1) % p)).collect()
        };
        build_graph(p, &edges)
    }

    pub fn path(p: usize) -> Result<Graph, GraphError> {
        let edges: Vec<_> = (1..p).map(|i| (i - 1, i)).collect();
        build_graph(p, &edges)
    }

    pub fn complete(p: usize) -> Result<Graph, GraphError> {
        let edges: Vec<_> = (0..p)
            .flat_map(|i| (i + 1..p).map(move |j| (i, j)))
            .collect();
        build_graph(p, &edges)
    }

    /// Vertex 0 is the hub.
    pub fn star(p: usize) -> Result<Graph, GraphError> {
        let edges: Vec<_> = (1..p).map(|i| (0, i)).collect();
        build_graph(p, &edges)
    }

    pub fn preset(name: &str, p: usize) -> Result<Graph, GraphError> {
        match name {
            "ring" => Self::ring(p),
            "path" => Self::path(p),
            "complete" => Self::complete(p),
            "star" => Self::star(p),
            other => Err(GraphError::UnknownPreset(other.to_string())),
        }
    }

    /// Text form: first line `p`, then one `i j` line per edge.
    pub fn to_text(&self) -> String {
        self.to_string()
    }
}

impl fmt::Display for Graph {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(f, "{}", self.p)?;
        for (i, j) in &self.edges {
            writeln!(f, "{i} {j}")?;
        }
        Ok(())
    }
}

impl FromStr for Graph {
    type Err = GraphError;

    /// Blank lines and `#` comments are ignored.
    fn from_str(text: &str) -> Result<Self, GraphError> {
        let mut lines = text
            .lines()
            .map(|l| l.split('#').next().unwrap_or("").trim())
            .enumerate()
            .filter(|(_, l)| !l.is_empty());
        let (_, first) = lines
            .next()
            .ok_or_else(|| GraphError::Parse("missing vertex count".into()))?;
        let p: usize = first
            .parse()
            .map_err(|_| GraphError::Parse(format!("bad vertex count `{first}`")))?;
        let mut edges = Vec::new();
        for (lineno, line) in lines {
            let parts: Vec<&str> = line.split_whitespace().collect();
            let parse = |s: &str| {
                s.parse::<usize>()
                    .map_err(|_| GraphError::Parse(format!("line {}: bad index `{s}`", lineno + 1)))
            };
            match parts.as_slice() {
                [a, b] => edges.push((parse(a)?, parse(b)?)),
                _ => {
                    return Err(GraphError::Parse(format!(
                        "line {}: expected `i j`",
                        lineno + 1
                    )))
                }
            }
        }
        build_graph(p, &edges)
    }
}

/// Breadth-first reachability from vertex 0.
pub fn is_connected(g: &Graph) -> bool {
    let adj = g.adjacency();
    let mut seen = vec![false; g.p];
    let mut queue = VecDeque::from([0]);
    seen[0] = true;
    let mut count = 1;
    while let Some(v) = queue.pop_front() {
        for &w in &adj[v] {
            if !seen[w] {
                seen[w] = true;
                count += 1;
                queue.push_back(w);
            }
        }
    }
    count == g.p
}

/// Graph Laplacian `D - A` with unit edge weights.
#[derive(Debug, Clone, PartialEq)]
pub struct Laplacian(pub Matrix);

impl Laplacian {
    pub fn matrix(&self) -> &Matrix {
        &self.0
    }
}

pub fn laplacian(g: &Graph) -> Laplacian {
    let mut l = Matrix::zeros(g.p, g.p);
    for &(i, j) in &g.edges {
        l[(i, j)] = -1.0;
        l[(j, i)] = -1.0;
        l[(i, i)] += 1.0;
        l[(j, j)] += 1.0;
    }
    Laplacian(l)
}
