//! Physical and communication graph construction.
//!
//! The physical graph is directed: edge `k = (tail, head)` carries flow
//! `(u_e)_k ≥ 0` from tail to head, and the incidence matrix `B` has `−1` at
//! the tail and `+1` at the head of each column. The communication graph is
//! undirected; its Laplacian `L_c` couples the node controller states. When
//! no communication topology is given, the undirected physical topology is
//! used.

use crate::error::Error;
use crate::Result;
use nalgebra::DMatrix;

/// Node/edge topology of the network.
#[derive(Debug, Clone, PartialEq)]
pub struct NetworkSpec {
    /// Number of nodes.
    pub n: usize,
    /// Directed physical edges as `(tail, head)` pairs; positive flow moves
    /// stored quantity from tail to head.
    pub edges: Vec<(usize, usize)>,
    /// Undirected communication pairs. `None` means "same as the physical
    /// topology".
    pub comm_edges: Option<Vec<(usize, usize)>>,
}

impl NetworkSpec {
    /// Build a spec with the communication graph defaulted to the physical one.
    pub fn new(n: usize, edges: Vec<(usize, usize)>) -> Self {
        Self {
            n,
            edges,
            comm_edges: None,
        }
    }

    /// Validate node count and edge endpoints.
    pub fn validate(&self) -> Result<()> {
        if self.n < 2 {
            return Err(Error::Validation(format!(
                "need at least 2 nodes, got {}",
                self.n
            )));
        }
        for (k, &(a, b)) in self.edges.iter().enumerate() {
            if a >= self.n || b >= self.n {
                return Err(Error::Validation(format!(
                    "edge {k} endpoint out of range: ({a}, {b}) with n = {}",
                    self.n
                )));
            }
            if a == b {
                return Err(Error::Validation(format!(
                    "edge {k} is a self-loop at node {a}"
                )));
            }
        }
        if let Some(ce) = &self.comm_edges {
            for (k, &(a, b)) in ce.iter().enumerate() {
                if a >= self.n || b >= self.n {
                    return Err(Error::Validation(format!(
                        "communication edge {k} endpoint out of range: ({a}, {b})"
                    )));
                }
                if a == b {
                    return Err(Error::Validation(format!(
                        "communication edge {k} is a self-loop at node {a}"
                    )));
                }
            }
        }
        Ok(())
    }

    /// Number of physical edges.
    pub fn m(&self) -> usize {
        self.edges.len()
    }

    /// Incidence matrix `B ∈ ℝ^{n×m}`: column `k` has `−1` at the tail and
    /// `+1` at the head of edge `k`.
    pub fn incidence(&self) -> DMatrix<f64> {
        let mut b = DMatrix::zeros(self.n, self.edges.len());
        for (k, &(tail, head)) in self.edges.iter().enumerate() {
            b[(tail, k)] = -1.0;
            b[(head, k)] = 1.0;
        }
        b
    }

    /// Pairs used for the communication graph (falls back to the physical
    /// edge list when none are declared).
    fn comm_pairs(&self) -> &[(usize, usize)] {
        self.comm_edges.as_deref().unwrap_or(&self.edges)
    }

    /// Laplacian of the (undirected) communication graph.
    pub fn comm_laplacian(&self) -> DMatrix<f64> {
        let mut l = DMatrix::zeros(self.n, self.n);
        for &(a, b) in self.comm_pairs() {
            l[(a, a)] += 1.0;
            l[(b, b)] += 1.0;
            l[(a, b)] -= 1.0;
            l[(b, a)] -= 1.0;
        }
        l
    }

    /// Connectivity of the undirected physical graph.
    pub fn is_connected(&self) -> bool {
        undirected_connected(self.n, &self.edges)
    }

    /// Connectivity of the communication graph.
    pub fn comm_connected(&self) -> bool {
        undirected_connected(self.n, self.comm_pairs())
    }

    /// Strong connectivity of the directed physical graph (forward and
    /// backward reachability from node 0).
    pub fn is_strongly_connected(&self) -> bool {
        if self.n == 0 {
            return false;
        }
        let mut fwd = vec![Vec::new(); self.n];
        let mut bwd = vec![Vec::new(); self.n];
        for &(a, b) in &self.edges {
            fwd[a].push(b);
            bwd[b].push(a);
        }
        reachable_count(&fwd, 0) == self.n && reachable_count(&bwd, 0) == self.n
    }
}

fn undirected_connected(n: usize, pairs: &[(usize, usize)]) -> bool {
    if n == 0 {
        return false;
    }
    let mut adj = vec![Vec::new(); n];
    for &(a, b) in pairs {
        adj[a].push(b);
        adj[b].push(a);
    }
    reachable_count(&adj, 0) == n
}

fn reachable_count(adj: &[Vec<usize>], start: usize) -> usize {
    let mut seen = vec![false; adj.len()];
    let mut stack = vec![start];
    seen[start] = true;
    let mut count = 0;
    while let Some(v) = stack.pop() {
        count += 1;
        for &w in &adj[v] {
            if !seen[w] {
                seen[w] = true;
                stack.push(w);
            }
        }
    }
    count
}

/// Graph Laplacian `L = B·Bᵀ` of an incidence matrix.
pub fn laplacian(b: &DMatrix<f64>) -> DMatrix<f64> {
    b * b.transpose()
}
