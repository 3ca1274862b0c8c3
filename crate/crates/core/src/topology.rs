//! Leader–follower communication graph.
//!
//! Followers are indexed `0..N` internally. An edge `j → i` with weight `a_ij`
//! means follower `i` reads the estimate of follower `j`. The leader is not a
//! node of the follower graph; its links are the target set.

use std::collections::{BTreeSet, VecDeque};

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Edge {
    pub from: usize,
    pub to: usize,
    pub weight: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CommGraph {
    num_followers: usize,
    edges: Vec<Edge>,
    targets: BTreeSet<usize>,
}

impl CommGraph {
    /// Builds a graph from directed edges `(from, to, weight)`.
    ///
    /// Structural checks only (indices, self-loops, weights, duplicates);
    /// [`CommGraph::validate`] checks the leader-reachability assumptions.
    pub fn new(
        num_followers: usize,
        edges: impl IntoIterator<Item = (usize, usize, f64)>,
        targets: impl IntoIterator<Item = usize>,
    ) -> Result<Self> {
        if num_followers == 0 {
            return Err(Error::InvalidGraph("at least one follower required".into()));
        }
        let mut seen = BTreeSet::new();
        let mut out = Vec::new();
        for (from, to, weight) in edges {
            if from >= num_followers || to >= num_followers {
                return Err(Error::InvalidGraph(format!(
                    "edge {} -> {} out of range for {num_followers} followers",
                    from + 1,
                    to + 1
                )));
            }
            if from == to {
                return Err(Error::InvalidGraph(format!(
                    "self-loop at follower {}",
                    from + 1
                )));
            }
            if !(weight > 0.0 && weight.is_finite()) {
                return Err(Error::InvalidGraph(format!(
                    "edge {} -> {} has nonpositive weight {weight}",
                    from + 1,
                    to + 1
                )));
            }
            if !seen.insert((from, to)) {
                return Err(Error::InvalidGraph(format!(
                    "duplicate edge {} -> {}",
                    from + 1,
                    to + 1
                )));
            }
            out.push(Edge { from, to, weight });
        }
        let targets: BTreeSet<usize> = targets.into_iter().collect();
        if let Some(&t) = targets.iter().find(|&&t| t >= num_followers) {
            return Err(Error::InvalidGraph(format!(
                "target follower {} out of range",
                t + 1
            )));
        }
        Ok(Self {
            num_followers,
            edges: out,
            targets,
        })
    }

    /// Builds a graph where every pair `(i, j, w)` is a bidirectional link.
    pub fn undirected(
        num_followers: usize,
        links: impl IntoIterator<Item = (usize, usize, f64)>,
        targets: impl IntoIterator<Item = usize>,
    ) -> Result<Self> {
        let edges: Vec<_> = links
            .into_iter()
            .flat_map(|(i, j, w)| [(i, j, w), (j, i, w)])
            .collect();
        Self::new(num_followers, edges, targets)
    }

    /// Undirected unit-weight chain `0 – 1 – … – N−1`.
    pub fn chain(num_followers: usize, targets: impl IntoIterator<Item = usize>) -> Result<Self> {
        Self::undirected(
            num_followers,
            (1..num_followers).map(|i| (i - 1, i, 1.0)),
            targets,
        )
    }

    pub fn num_followers(&self) -> usize {
        self.num_followers
    }

    pub fn edges(&self) -> &[Edge] {
        &self.edges
    }

    pub fn targets(&self) -> &BTreeSet<usize> {
        &self.targets
    }

    pub fn is_target(&self, i: usize) -> bool {
        self.targets.contains(&i)
    }

    /// In-neighbours of follower `i` with their weights `a_ij`.
    pub fn neighbors(&self, i: usize) -> impl Iterator<Item = (usize, f64)> + '_ {
        self.edges
            .iter()
            .filter(move |e| e.to == i)
            .map(|e| (e.from, e.weight))
    }

    /// Checks that the leader reaches at least one follower and the follower
    /// graph is undirected (symmetric weights) and connected.
    pub fn validate(&self) -> Result<()> {
        if self.targets.is_empty() {
            return Err(Error::InvalidGraph(
                "no follower is linked to the leader".into(),
            ));
        }
        let adj = self.adjacency();
        for i in 0..self.num_followers {
            for j in 0..i {
                if adj[(i, j)] != adj[(j, i)] {
                    return Err(Error::InvalidGraph(format!(
                        "follower graph is not undirected: a[{},{}] = {} but a[{},{}] = {}",
                        i + 1,
                        j + 1,
                        adj[(i, j)],
                        j + 1,
                        i + 1,
                        adj[(j, i)]
                    )));
                }
            }
        }
        let mut visited = vec![false; self.num_followers];
        let mut queue = VecDeque::from([0usize]);
        visited[0] = true;
        while let Some(i) = queue.pop_front() {
            for j in 0..self.num_followers {
                if !visited[j] && adj[(i, j)] > 0.0 {
                    visited[j] = true;
                    queue.push_back(j);
                }
            }
        }
        if let Some(lost) = visited.iter().position(|&v| !v) {
            return Err(Error::InvalidGraph(format!(
                "follower graph is disconnected (follower {} unreachable from follower 1)",
                lost + 1
            )));
        }
        Ok(())
    }

    /// `A = [a_ij]`, zero diagonal.
    pub fn adjacency(&self) -> DMatrix<f64> {
        let mut a = DMatrix::zeros(self.num_followers, self.num_followers);
        for e in &self.edges {
            a[(e.to, e.from)] = e.weight;
        }
        a
    }

    /// `L = diag(row sums of A) − A`.
    pub fn laplacian(&self) -> DMatrix<f64> {
        let a = self.adjacency();
        let mut l = -&a;
        for i in 0..self.num_followers {
            l[(i, i)] = a.row(i).sum();
        }
        l
    }

    /// Diagonal 0/1 matrix marking followers with a direct leader link.
    pub fn target_matrix(&self) -> DMatrix<f64> {
        DMatrix::from_fn(self.num_followers, self.num_followers, |i, j| {
            if i == j && self.is_target(i) {
                1.0
            } else {
                0.0
            }
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use nalgebra::DVector;
    use proptest::prelude::*;

    #[test]
    fn two_followers_single_edge() {
        let g = CommGraph::undirected(2, [(0, 1, 1.0)], [0]).unwrap();
        assert_eq!(
            g.adjacency(),
            DMatrix::from_row_slice(2, 2, &[0.0, 1.0, 1.0, 0.0])
        );
        assert_eq!(
            g.laplacian(),
            DMatrix::from_row_slice(2, 2, &[1.0, -1.0, -1.0, 1.0])
        );
        g.validate().unwrap();
    }

    #[test]
    fn empty_edge_set_gives_zero_adjacency() {
        let g = CommGraph::new(3, [], [0]).unwrap();
        assert_eq!(g.adjacency(), DMatrix::zeros(3, 3));
        assert!(
            g.validate().is_err(),
            "three isolated followers are disconnected"
        );
        let single = CommGraph::new(1, [], [0]).unwrap();
        assert_eq!(single.adjacency(), DMatrix::zeros(1, 1));
        single.validate().unwrap();
    }

    #[test]
    fn chain_of_four() {
        let g = CommGraph::chain(4, [0]).unwrap();
        let expected_adj = DMatrix::from_row_slice(
            4,
            4,
            &[
                0.0, 1.0, 0.0, 0.0, //
                1.0, 0.0, 1.0, 0.0, //
                0.0, 1.0, 0.0, 1.0, //
                0.0, 0.0, 1.0, 0.0,
            ],
        );
        assert_eq!(g.adjacency(), expected_adj);
        let degree = DMatrix::from_diagonal(&DVector::from_vec(vec![1.0, 2.0, 2.0, 1.0]));
        assert_eq!(g.laplacian(), degree - expected_adj);
    }

    #[test]
    fn target_matrices() {
        let g = CommGraph::chain(4, [0]).unwrap();
        assert_eq!(
            g.target_matrix(),
            DMatrix::from_diagonal(&DVector::from_vec(vec![1.0, 0.0, 0.0, 0.0]))
        );
        let all = CommGraph::chain(4, 0..4).unwrap();
        assert_eq!(all.target_matrix(), DMatrix::identity(4, 4));
        let g3 = CommGraph::chain(3, [1]).unwrap();
        assert_eq!(
            g3.target_matrix(),
            DMatrix::from_diagonal(&DVector::from_vec(vec![0.0, 1.0, 0.0]))
        );
    }

    #[test]
    fn rejects_bad_edges() {
        assert!(matches!(
            CommGraph::new(2, [(0, 0, 1.0)], [0]),
            Err(Error::InvalidGraph(_))
        ));
        assert!(CommGraph::new(2, [(0, 1, 0.0)], [0]).is_err());
        assert!(CommGraph::new(2, [(0, 1, -1.0)], [0]).is_err());
        assert!(CommGraph::new(2, [(0, 2, 1.0)], [0]).is_err());
        assert!(CommGraph::new(2, [(0, 1, 1.0)], [5]).is_err());
    }

    #[test]
    fn validate_rejects_assumption_violations() {
        let no_target = CommGraph::chain(3, []).unwrap();
        assert!(no_target.validate().is_err());
        let disconnected = CommGraph::undirected(4, [(0, 1, 1.0), (2, 3, 1.0)], [0]).unwrap();
        assert!(disconnected.validate().is_err());
        let directed = CommGraph::new(2, [(0, 1, 1.0)], [0]).unwrap();
        assert!(directed.validate().is_err());
        let asym = CommGraph::new(2, [(0, 1, 1.0), (1, 0, 2.0)], [0]).unwrap();
        assert!(asym.validate().is_err());
    }

    fn connected_graph() -> impl Strategy<Value = CommGraph> {
        (2usize..8).prop_flat_map(|n| {
            // random spanning tree plus extra links
            let parents = proptest::collection::vec(any::<prop::sample::Index>(), n - 1);
            let extra = proptest::collection::vec((0..n, 0..n, 0.1f64..5.0), 0..6);
            let weights = proptest::collection::vec(0.1f64..5.0, n - 1);
            let target = 0..n;
            (Just(n), parents, weights, extra, target).prop_map(
                |(n, parents, weights, extra, target)| {
                    let mut links: Vec<(usize, usize, f64)> = parents
                        .iter()
                        .zip(&weights)
                        .enumerate()
                        .map(|(k, (p, &w))| (k + 1, p.index(k + 1), w))
                        .collect();
                    for (i, j, w) in extra {
                        let dup = links
                            .iter()
                            .any(|&(a, b, _)| (a, b) == (i, j) || (a, b) == (j, i));
                        if i != j && !dup {
                            links.push((i, j, w));
                        }
                    }
                    CommGraph::undirected(n, links, [target]).unwrap()
                },
            )
        })
    }

    proptest! {
        #[test]
        fn laplacian_annihilates_ones_and_is_psd(g in connected_graph()) {
            prop_assert!(g.validate().is_ok());
            let l = g.laplacian();
            let ones = DVector::from_element(g.num_followers(), 1.0);
            prop_assert!((&l * &ones).norm() < 1e-12);
            prop_assert!((&l - l.transpose()).norm() == 0.0);
            let eig = crate::linalg::symmetric_eigenvalues(&l);
            prop_assert!(eig[0].abs() < 1e-9);
            // connected ⇒ zero is a simple eigenvalue
            prop_assert!(eig[1] > 1e-9);
        }
    }
}
