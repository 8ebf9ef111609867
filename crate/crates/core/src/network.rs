//! Directed networks, node-arc incidence, OD pairs and demand vectors.
//!
//! Nodes are 0-based internally. File formats and the CLI speak 1-based node
//! numbers; [`OdPair::from_one_based`] and [`Network::from_one_based_arcs`]
//! do the translation at the boundary.

use alloc::collections::VecDeque;
use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;
use core::fmt;

use thiserror::Error;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum NetworkError {
    #[error("grid side must be at least 2, got {0}")]
    GridTooSmall(usize),
    #[error("network needs at least 2 nodes, got {0}")]
    TooFewNodes(usize),
    #[error("arc {arc}: node {node} is outside 1..={nodes}")]
    NodeOutOfRange { arc: usize, node: usize, nodes: usize },
    #[error("arc {arc} is a self-loop at node {node}")]
    SelfLoop { arc: usize, node: usize },
    #[error("network is not weakly connected ({components} components)")]
    Disconnected { components: usize },
    #[error("OD pair has origin equal to destination ({0})")]
    DegenerateOd(usize),
    #[error("OD node {node} is outside 1..={nodes}")]
    OdOutOfRange { node: usize, nodes: usize },
}

/// A directed arc between two 0-based nodes.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Arc {
    pub tail: usize,
    pub head: usize,
}

/// A weakly connected directed graph without self-loops.
///
/// Arc ids are positions in [`Network::arcs`]. Immutable after construction.
#[derive(Debug, Clone, PartialEq)]
pub struct Network {
    name: String,
    node_count: usize,
    arcs: Vec<Arc>,
    grid_side: Option<usize>,
}

impl Network {
    /// Builds a network from 0-based arcs and validates every invariant.
    pub fn new(
        name: impl Into<String>,
        node_count: usize,
        arcs: Vec<Arc>,
    ) -> Result<Self, NetworkError> {
        if node_count < 2 {
            return Err(NetworkError::TooFewNodes(node_count));
        }
        for (id, arc) in arcs.iter().enumerate() {
            for node in [arc.tail, arc.head] {
                if node >= node_count {
                    return Err(NetworkError::NodeOutOfRange {
                        arc: id,
                        node: node + 1,
                        nodes: node_count,
                    });
                }
            }
            if arc.tail == arc.head {
                return Err(NetworkError::SelfLoop {
                    arc: id,
                    node: arc.tail + 1,
                });
            }
        }
        let net = Network {
            name: name.into(),
            node_count,
            arcs,
            grid_side: None,
        };
        let components = net.weak_components();
        if components != 1 {
            return Err(NetworkError::Disconnected { components });
        }
        Ok(net)
    }

    /// Builds a network from `(tail, head)` pairs numbered from 1.
    pub fn from_one_based_arcs(
        name: impl Into<String>,
        node_count: usize,
        arcs: &[(usize, usize)],
    ) -> Result<Self, NetworkError> {
        let mut converted = Vec::with_capacity(arcs.len());
        for (id, &(tail, head)) in arcs.iter().enumerate() {
            for node in [tail, head] {
                if node == 0 || node > node_count {
                    return Err(NetworkError::NodeOutOfRange {
                        arc: id,
                        node,
                        nodes: node_count,
                    });
                }
            }
            converted.push(Arc {
                tail: tail - 1,
                head: head - 1,
            });
        }
        Network::new(name, node_count, converted)
    }

    /// Square lattice with `side × side` nodes numbered row-major.
    ///
    /// Every lattice edge becomes two opposite arcs. Horizontal edges are
    /// emitted first (row by row, west to east), then vertical edges (north
    /// to south); each edge contributes its forward arc followed by the
    /// backward arc.
    pub fn grid(side: usize) -> Result<Self, NetworkError> {
        if side < 2 {
            return Err(NetworkError::GridTooSmall(side));
        }
        let id = |r: usize, c: usize| r * side + c;
        let mut arcs = Vec::with_capacity(4 * side * (side - 1));
        for r in 0..side {
            for c in 0..side - 1 {
                let (a, b) = (id(r, c), id(r, c + 1));
                arcs.push(Arc { tail: a, head: b });
                arcs.push(Arc { tail: b, head: a });
            }
        }
        for r in 0..side - 1 {
            for c in 0..side {
                let (a, b) = (id(r, c), id(r + 1, c));
                arcs.push(Arc { tail: a, head: b });
                arcs.push(Arc { tail: b, head: a });
            }
        }
        let mut net = Network::new(alloc::format!("grid-{side}x{side}"), side * side, arcs)?;
        net.grid_side = Some(side);
        Ok(net)
    }

    pub fn name(&self) -> &str {
        &self.name
    }

    pub fn node_count(&self) -> usize {
        self.node_count
    }

    pub fn arc_count(&self) -> usize {
        self.arcs.len()
    }

    pub fn arcs(&self) -> &[Arc] {
        &self.arcs
    }

    pub fn arc(&self, id: usize) -> Arc {
        self.arcs[id]
    }

    /// Side length when the network was produced by [`Network::grid`].
    pub fn grid_side(&self) -> Option<usize> {
        self.grid_side
    }

    /// Dense node-arc incidence matrix: `-1` at the tail, `+1` at the head.
    pub fn incidence_matrix(&self) -> IncidenceMatrix {
        let (m, n) = (self.node_count, self.arcs.len());
        let mut entries = vec![0i8; m * n];
        for (a, arc) in self.arcs.iter().enumerate() {
            entries[arc.tail * n + a] = -1;
            entries[arc.head * n + a] = 1;
        }
        IncidenceMatrix {
            rows: m,
            cols: n,
            entries,
        }
    }

    /// `D x`: net inflow at every node.
    pub fn apply_incidence(&self, x: &[f64], out: &mut [f64]) {
        debug_assert_eq!(x.len(), self.arcs.len());
        out.iter_mut().for_each(|o| *o = 0.0);
        for (arc, &flow) in self.arcs.iter().zip(x) {
            out[arc.tail] -= flow;
            out[arc.head] += flow;
        }
    }

    /// `Dᵀ v`: for each arc, potential at the head minus potential at the tail.
    pub fn apply_incidence_transpose(&self, v: &[f64], out: &mut [f64]) {
        debug_assert_eq!(v.len(), self.node_count);
        for (o, arc) in out.iter_mut().zip(&self.arcs) {
            *o = v[arc.head] - v[arc.tail];
        }
    }

    /// All ordered pairs of distinct nodes, origin-major.
    pub fn od_pairs(&self) -> Vec<OdPair> {
        let m = self.node_count;
        let mut pairs = Vec::with_capacity(m * (m - 1));
        for origin in 0..m {
            for destination in 0..m {
                if origin != destination {
                    pairs.push(OdPair {
                        origin,
                        destination,
                    });
                }
            }
        }
        pairs
    }

    /// Demand vector `f`: `-1` at the origin, `+1` at the destination.
    pub fn demand_vector(&self, od: OdPair) -> Vec<f64> {
        let mut f = vec![0.0; self.node_count];
        f[od.origin] = -1.0;
        f[od.destination] = 1.0;
        f
    }

    /// Hop distances from `source` following arc directions.
    pub fn hop_distances_from(&self, source: usize) -> Vec<Option<usize>> {
        self.bfs(source, false)
    }

    /// Hop distances to `target` following arc directions.
    pub fn hop_distances_to(&self, target: usize) -> Vec<Option<usize>> {
        self.bfs(target, true)
    }

    fn bfs(&self, start: usize, reverse: bool) -> Vec<Option<usize>> {
        let adjacency = self.adjacency(reverse);
        let mut dist = vec![None; self.node_count];
        dist[start] = Some(0);
        let mut queue = VecDeque::from([start]);
        while let Some(node) = queue.pop_front() {
            let d = dist[node].unwrap_or(0);
            for &(next, _) in &adjacency[node] {
                if dist[next].is_none() {
                    dist[next] = Some(d + 1);
                    queue.push_back(next);
                }
            }
        }
        dist
    }

    /// Per-node list of `(neighbour, arc_id)`; `reverse` walks arcs backwards.
    pub(crate) fn adjacency(&self, reverse: bool) -> Vec<Vec<(usize, usize)>> {
        let mut adjacency = vec![Vec::new(); self.node_count];
        for (id, arc) in self.arcs.iter().enumerate() {
            if reverse {
                adjacency[arc.head].push((arc.tail, id));
            } else {
                adjacency[arc.tail].push((arc.head, id));
            }
        }
        adjacency
    }

    fn weak_components(&self) -> usize {
        let mut parent: Vec<usize> = (0..self.node_count).collect();
        fn find(parent: &mut [usize], mut x: usize) -> usize {
            while parent[x] != x {
                parent[x] = parent[parent[x]];
                x = parent[x];
            }
            x
        }
        let mut components = self.node_count;
        for arc in &self.arcs {
            let (a, b) = (find(&mut parent, arc.tail), find(&mut parent, arc.head));
            if a != b {
                parent[a] = b;
                components -= 1;
            }
        }
        components
    }
}

/// Dense `m × n` incidence matrix with entries in `{-1, 0, 1}`, row-major.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct IncidenceMatrix {
    rows: usize,
    cols: usize,
    entries: Vec<i8>,
}

impl IncidenceMatrix {
    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn get(&self, node: usize, arc: usize) -> i8 {
        self.entries[node * self.cols + arc]
    }

    pub fn column(&self, arc: usize) -> Vec<i8> {
        (0..self.rows).map(|r| self.get(r, arc)).collect()
    }

    pub fn row(&self, node: usize) -> &[i8] {
        &self.entries[node * self.cols..(node + 1) * self.cols]
    }
}

/// Ordered origin-destination pair of distinct 0-based nodes.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct OdPair {
    pub origin: usize,
    pub destination: usize,
}

impl OdPair {
    pub fn new(origin: usize, destination: usize) -> Result<Self, NetworkError> {
        if origin == destination {
            return Err(NetworkError::DegenerateOd(origin + 1));
        }
        Ok(OdPair {
            origin,
            destination,
        })
    }

    pub fn from_one_based(
        origin: usize,
        destination: usize,
        node_count: usize,
    ) -> Result<Self, NetworkError> {
        for node in [origin, destination] {
            if node == 0 || node > node_count {
                return Err(NetworkError::OdOutOfRange {
                    node,
                    nodes: node_count,
                });
            }
        }
        OdPair::new(origin - 1, destination - 1)
    }
}

impl fmt::Display for OdPair {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}->{}", self.origin + 1, self.destination + 1)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn grid_counts() {
        for (side, arcs) in [(2, 8), (4, 48), (5, 80)] {
            let g = Network::grid(side).unwrap();
            assert_eq!(g.node_count(), side * side);
            assert_eq!(g.arc_count(), arcs);
        }
        for side in 2..=10 {
            assert_eq!(Network::grid(side).unwrap().arc_count(), (side - 1) * side * 4);
        }
    }

    #[test]
    fn grid_rejects_small_side() {
        assert_eq!(Network::grid(1), Err(NetworkError::GridTooSmall(1)));
        assert_eq!(Network::grid(0), Err(NetworkError::GridTooSmall(0)));
    }

    #[test]
    fn grid_arcs_come_in_opposite_pairs() {
        let g = Network::grid(3).unwrap();
        for pair in g.arcs().chunks(2) {
            assert_eq!(pair[0].tail, pair[1].head);
            assert_eq!(pair[0].head, pair[1].tail);
        }
        // first arc is the east edge out of node 1
        assert_eq!(g.arc(0), Arc { tail: 0, head: 1 });
        assert_eq!(g.grid_side(), Some(3));
    }

    #[test]
    fn single_arc_incidence_column() {
        let net = Network::from_one_based_arcs("one", 2, &[(1, 2)]).unwrap();
        assert_eq!(net.incidence_matrix().column(0), vec![-1, 1]);
    }

    #[test]
    fn incidence_columns_sum_to_zero() {
        let g = Network::grid(2).unwrap();
        let d = g.incidence_matrix();
        assert_eq!((d.rows(), d.cols()), (4, 8));
        for a in 0..d.cols() {
            let col = d.column(a);
            assert_eq!(col.iter().map(|&e| e as i32).sum::<i32>(), 0);
            assert_eq!(col.iter().filter(|&&e| e == -1).count(), 1);
            assert_eq!(col.iter().filter(|&&e| e == 1).count(), 1);
        }
        // every 2x2 node touches two out-arcs and two in-arcs
        for r in 0..4 {
            assert_eq!(d.row(r).iter().filter(|&&e| e != 0).count(), 4);
        }
    }

    #[test]
    fn incidence_products_match_dense_matrix() {
        let g = Network::grid(3).unwrap();
        let d = g.incidence_matrix();
        let x: Vec<f64> = (0..g.arc_count()).map(|a| (a as f64) * 0.37 - 2.0).collect();
        let v: Vec<f64> = (0..g.node_count()).map(|i| (i as f64).sin()).collect();
        let mut dx = vec![0.0; g.node_count()];
        g.apply_incidence(&x, &mut dx);
        for r in 0..g.node_count() {
            let dense: f64 = (0..g.arc_count()).map(|a| d.get(r, a) as f64 * x[a]).sum();
            assert!((dense - dx[r]).abs() < 1e-12);
        }
        let mut dtv = vec![0.0; g.arc_count()];
        g.apply_incidence_transpose(&v, &mut dtv);
        for a in 0..g.arc_count() {
            let dense: f64 = (0..g.node_count()).map(|r| d.get(r, a) as f64 * v[r]).sum();
            assert!((dense - dtv[a]).abs() < 1e-12);
        }
    }

    #[test]
    fn od_pair_counts_and_order() {
        for (side, count) in [(4, 240), (2, 12)] {
            let g = Network::grid(side).unwrap();
            let pairs = g.od_pairs();
            assert_eq!(pairs.len(), count);
            assert_eq!(pairs, g.od_pairs());
            let mut sorted = pairs.clone();
            sorted.sort();
            sorted.dedup();
            assert_eq!(sorted, pairs, "origin-major order without duplicates");
        }
        let two = Network::from_one_based_arcs("two", 2, &[(1, 2), (2, 1)]).unwrap();
        assert_eq!(
            two.od_pairs(),
            vec![OdPair::new(0, 1).unwrap(), OdPair::new(1, 0).unwrap()]
        );
    }

    #[test]
    fn demand_vector_places_unit_source_and_sink() {
        let g = Network::grid(4).unwrap();
        let od = OdPair::from_one_based(2, 12, 16).unwrap();
        let f = g.demand_vector(od);
        assert_eq!(f[1], -1.0);
        assert_eq!(f[11], 1.0);
        assert_eq!(f.iter().filter(|&&v| v != 0.0).count(), 2);
        assert_eq!(f.iter().sum::<f64>(), 0.0);

        let two = Network::from_one_based_arcs("two", 2, &[(1, 2), (1, 2)]).unwrap();
        assert_eq!(
            two.demand_vector(OdPair::from_one_based(1, 2, 2).unwrap()),
            vec![-1.0, 1.0]
        );
    }

    #[test]
    fn validation_errors() {
        assert!(matches!(
            Network::from_one_based_arcs("bad", 3, &[(1, 4)]),
            Err(NetworkError::NodeOutOfRange { node: 4, .. })
        ));
        assert!(matches!(
            Network::from_one_based_arcs("loop", 2, &[(1, 1), (1, 2)]),
            Err(NetworkError::SelfLoop { arc: 0, node: 1 })
        ));
        assert!(matches!(
            Network::from_one_based_arcs("split", 4, &[(1, 2), (3, 4)]),
            Err(NetworkError::Disconnected { components: 2 })
        ));
        assert!(OdPair::from_one_based(3, 3, 4).is_err());
        assert!(OdPair::from_one_based(0, 3, 4).is_err());
    }

    #[test]
    fn hop_distances() {
        let g = Network::grid(3).unwrap();
        let from = g.hop_distances_from(0);
        assert_eq!(from[8], Some(4));
        let to = g.hop_distances_to(8);
        assert_eq!(to[0], Some(4));
    }
}
