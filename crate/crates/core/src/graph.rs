//! Immutable CSR adjacency plus the per-arc arrays used by message passing.
//!
//! Arcs are stored by source row: row `u` lists every `v` with an arc
//! `u → v`. Messages travel along arcs, so in [`EdgeArrays`] the receiving
//! node of arc `u → v` is `dst = v`. An undirected edge is two arcs.

use std::sync::Arc;

use crate::error::{Error, Result};
use crate::rng::Rng;

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Graph {
    num_nodes: usize,
    row_ptr: Vec<usize>,
    col_idx: Vec<usize>,
    degrees: Vec<usize>,
    directed: bool,
}

/// Builds a simple graph: self-loops are dropped, parallel arcs collapse,
/// and undirected input is symmetrized.
pub fn build_graph(n: usize, edges: &[(usize, usize)], directed: bool) -> Result<Graph> {
    let mut arcs: Vec<(usize, usize)> = Vec::with_capacity(edges.len() * 2);
    for &(u, v) in edges {
        for x in [u, v] {
            if x >= n {
                return Err(Error::Index {
                    op: "build_graph",
                    index: x,
                    bound: n,
                });
            }
        }
        if u == v {
            continue;
        }
        arcs.push((u, v));
        if !directed {
            arcs.push((v, u));
        }
    }
    arcs.sort_unstable();
    arcs.dedup();
    Ok(Graph::from_sorted_arcs(n, &arcs, directed))
}

/// `rows × cols` 4-neighbour lattice; node id is `r * cols + c`.
pub fn grid_graph(rows: usize, cols: usize) -> Graph {
    let mut edges = Vec::with_capacity(2 * rows * cols);
    for r in 0..rows {
        for c in 0..cols {
            let v = r * cols + c;
            if c + 1 < cols {
                edges.push((v, v + 1));
            }
            if r + 1 < rows {
                edges.push((v, v + cols));
            }
        }
    }
    build_graph(rows * cols, &edges, false).expect("grid endpoints are in range")
}

/// G(n, p) random graph, used by tests and synthetic data.
pub fn random_graph(n: usize, p: f64, directed: bool, rng: &mut Rng) -> Graph {
    let mut edges = Vec::new();
    for u in 0..n {
        let start = if directed { 0 } else { u + 1 };
        for v in start..n {
            if u != v && rng.bernoulli(p) {
                edges.push((u, v));
            }
        }
    }
    build_graph(n, &edges, directed).expect("endpoints are in range")
}

impl Graph {
    fn from_sorted_arcs(n: usize, arcs: &[(usize, usize)], directed: bool) -> Graph {
        let mut row_ptr = vec![0; n + 1];
        for &(u, _) in arcs {
            row_ptr[u + 1] += 1;
        }
        for i in 0..n {
            row_ptr[i + 1] += row_ptr[i];
        }
        let col_idx = arcs.iter().map(|&(_, v)| v).collect();
        let degrees = (0..n).map(|v| row_ptr[v + 1] - row_ptr[v]).collect();
        Graph {
            num_nodes: n,
            row_ptr,
            col_idx,
            degrees,
            directed,
        }
    }

    pub fn num_nodes(&self) -> usize {
        self.num_nodes
    }

    pub fn num_arcs(&self) -> usize {
        self.col_idx.len()
    }

    /// Undirected edge count, or the arc count for a directed graph.
    pub fn num_edges(&self) -> usize {
        if self.directed {
            self.num_arcs()
        } else {
            self.num_arcs() / 2
        }
    }

    pub fn is_directed(&self) -> bool {
        self.directed
    }

    pub fn row_ptr(&self) -> &[usize] {
        &self.row_ptr
    }

    pub fn col_idx(&self) -> &[usize] {
        &self.col_idx
    }

    /// Out-degrees (row lengths); equal to the degree for undirected graphs.
    pub fn degrees(&self) -> &[usize] {
        &self.degrees
    }

    pub fn in_degrees(&self) -> Vec<usize> {
        let mut deg = vec![0; self.num_nodes];
        for &v in &self.col_idx {
            deg[v] += 1;
        }
        deg
    }

    /// Out-neighbours of `v`, ascending.
    pub fn neighbors(&self, v: usize) -> &[usize] {
        &self.col_idx[self.row_ptr[v]..self.row_ptr[v + 1]]
    }

    pub fn arcs(&self) -> impl Iterator<Item = (usize, usize)> + '_ {
        (0..self.num_nodes).flat_map(move |u| self.neighbors(u).iter().map(move |&v| (u, v)))
    }

    /// Every arc flipped. Only meaningful for directed graphs.
    pub fn reverse(&self) -> Result<Graph> {
        if !self.directed {
            return Err(Error::invalid("reverse() called on an undirected graph"));
        }
        let mut arcs: Vec<(usize, usize)> = self.arcs().map(|(u, v)| (v, u)).collect();
        arcs.sort_unstable();
        Ok(Graph::from_sorted_arcs(self.num_nodes, &arcs, true))
    }

    /// Renames node `v` to `perm[v]`.
    pub fn relabel(&self, perm: &[usize]) -> Result<Graph> {
        if perm.len() != self.num_nodes {
            return Err(Error::invalid("relabel: permutation length differs from N"));
        }
        let mut seen = vec![false; perm.len()];
        for &p in perm {
            if p >= perm.len() || std::mem::replace(&mut seen[p], true) {
                return Err(Error::invalid("relabel: not a permutation"));
            }
        }
        let mut arcs: Vec<(usize, usize)> = self.arcs().map(|(u, v)| (perm[u], perm[v])).collect();
        arcs.sort_unstable();
        Ok(Graph::from_sorted_arcs(
            self.num_nodes,
            &arcs,
            self.directed,
        ))
    }
}

/// Per-arc endpoint indices and symmetric normalization coefficients, in
/// CSR arc order.
#[derive(Debug, Clone, PartialEq)]
pub struct EdgeArrays {
    pub num_nodes: usize,
    /// Sending node of each arc.
    pub src: Arc<[usize]>,
    /// Receiving node of each arc.
    pub dst: Arc<[usize]>,
    /// `1 / sqrt(d_out(src) · d_in(dst))`; for undirected graphs this is
    /// `1 / sqrt(d_src · d_dst)`.
    pub norm: Arc<[f64]>,
}

impl EdgeArrays {
    pub fn len(&self) -> usize {
        self.src.len()
    }

    pub fn is_empty(&self) -> bool {
        self.src.is_empty()
    }
}

pub fn edge_arrays(g: &Graph) -> EdgeArrays {
    let out_deg = g.degrees();
    let in_deg = g.in_degrees();
    let (mut src, mut dst, mut norm) = (
        Vec::with_capacity(g.num_arcs()),
        Vec::with_capacity(g.num_arcs()),
        Vec::with_capacity(g.num_arcs()),
    );
    for (u, v) in g.arcs() {
        src.push(u);
        dst.push(v);
        norm.push(1.0 / ((out_deg[u] * in_deg[v]) as f64).sqrt());
    }
    EdgeArrays {
        num_nodes: g.num_nodes(),
        src: src.into(),
        dst: dst.into(),
        norm: norm.into(),
    }
}
