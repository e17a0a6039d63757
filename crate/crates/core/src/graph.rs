//! Undirected proximity graphs over agent positions.

use nalgebra::DVector;

use crate::scalar::Scalar;

/// Symmetric neighbour structure. `edges` holds each pair once as `(i, j)`
/// with `i < j`, in lexicographic order.
#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct Graph {
    edges: Vec<(usize, usize)>,
    neighbors: Vec<Vec<usize>>,
}

impl Graph {
    /// Edge `(i, j)` present iff `‖p_i − p_j‖ ≤ range`, `i ≠ j`.
    pub fn proximity<T: Scalar>(positions: &[DVector<T>], range: T) -> Self {
        let n = positions.len();
        let range2 = range * range;
        let mut edges = Vec::new();
        let mut neighbors = vec![Vec::new(); n];
        for i in 0..n {
            for j in (i + 1)..n {
                if (&positions[i] - &positions[j]).norm_squared() <= range2 {
                    edges.push((i, j));
                    neighbors[i].push(j);
                    neighbors[j].push(i);
                }
            }
        }
        Self { edges, neighbors }
    }

    pub fn from_edges(n: usize, pairs: impl IntoIterator<Item = (usize, usize)>) -> Self {
        let mut edges: Vec<(usize, usize)> = pairs
            .into_iter()
            .filter(|(i, j)| i != j)
            .map(|(i, j)| (i.min(j), i.max(j)))
            .collect();
        edges.sort_unstable();
        edges.dedup();
        let mut neighbors = vec![Vec::new(); n];
        for &(i, j) in &edges {
            neighbors[i].push(j);
            neighbors[j].push(i);
        }
        for list in &mut neighbors {
            list.sort_unstable();
        }
        Self { edges, neighbors }
    }

    pub fn edges(&self) -> &[(usize, usize)] {
        &self.edges
    }

    pub fn neighbors(&self, i: usize) -> &[usize] {
        &self.neighbors[i]
    }

    pub fn has_edge(&self, i: usize, j: usize) -> bool {
        self.neighbors.get(i).is_some_and(|n| n.contains(&j))
    }

    pub fn degree(&self, i: usize) -> usize {
        self.neighbors[i].len()
    }

    pub fn node_count(&self) -> usize {
        self.neighbors.len()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn from_edges_normalizes() {
        let g = Graph::from_edges(3, [(2, 0), (0, 2), (1, 1), (1, 2)]);
        assert_eq!(g.edges(), &[(0, 2), (1, 2)]);
        assert_eq!(g.neighbors(2), &[0, 1]);
        assert!(g.has_edge(2, 0) && !g.has_edge(0, 1));
    }
}
