//! Communication graphs: the CFL star and the DFL random geometric graph.
//!
//! Edge constraint matrices are never built. Every constraint has the form
//! `B_{i|j} = -B_{j|i} = ±I`, so an [`EdgeDirection`] only carries the sign.

use std::collections::{BTreeSet, VecDeque};
use std::fmt;
use std::str::FromStr;

use rand::Rng;
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha20Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct NodeId(pub usize);

impl NodeId {
    pub fn index(self) -> usize {
        self.0
    }
}

impl fmt::Display for NodeId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.0)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum TopologyKind {
    Star { server: NodeId },
    Peer,
}

/// Ordered pair of endpoints with the constraint sign `+1` when `from < to`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct EdgeDirection {
    pub from: NodeId,
    pub to: NodeId,
}

impl EdgeDirection {
    pub fn sign(&self) -> i8 {
        if self.from < self.to {
            1
        } else {
            -1
        }
    }

    pub fn reversed(&self) -> EdgeDirection {
        EdgeDirection {
            from: self.to,
            to: self.from,
        }
    }
}

/// Connected undirected simple graph over nodes `0..n`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Topology {
    n: usize,
    kind: TopologyKind,
    edges: Vec<(usize, usize)>,
    neighbors: Vec<Vec<NodeId>>,
}

/// Default connection radius for `n` points in the unit square.
pub fn default_radius(n: usize) -> f64 {
    (2.0 * (n as f64).ln() / n as f64).sqrt()
}

/// Draws attempted by [`make_random_geometric`] before giving up.
pub const RGG_MAX_ATTEMPTS: u64 = 64;

impl Topology {
    /// Builds and validates a graph. Edges are normalized to `(min, max)`
    /// and sorted.
    pub fn from_edges(n: usize, kind: TopologyKind, edges: &[(usize, usize)]) -> Result<Self> {
        if n == 0 {
            return Err(Error::InvalidArgument("topology needs at least one node".into()));
        }
        let mut set = BTreeSet::new();
        for &(a, b) in edges {
            if a >= n || b >= n {
                return Err(Error::InvalidArgument(format!(
                    "edge ({a}, {b}) references a node outside 0..{n}"
                )));
            }
            if a == b {
                return Err(Error::InvalidArgument(format!("self-loop at node {a}")));
            }
            if !set.insert((a.min(b), a.max(b))) {
                return Err(Error::InvalidArgument(format!("duplicate edge ({a}, {b})")));
            }
        }
        let edges: Vec<(usize, usize)> = set.into_iter().collect();
        let mut neighbors = vec![Vec::new(); n];
        for &(a, b) in &edges {
            neighbors[a].push(NodeId(b));
            neighbors[b].push(NodeId(a));
        }
        for list in &mut neighbors {
            list.sort_unstable();
        }
        let t = Topology {
            n,
            kind,
            edges,
            neighbors,
        };
        if let TopologyKind::Star { server } = kind {
            let expected: Vec<(usize, usize)> = (0..n)
                .filter(|&i| i != server.0)
                .map(|i| (i.min(server.0), i.max(server.0)))
                .collect();
            if server.0 >= n || t.edges != expected {
                return Err(Error::InvalidArgument(
                    "star edge set must connect the server to every client".into(),
                ));
            }
        }
        if !t.is_connected() {
            return Err(Error::InvalidArgument("topology is not connected".into()));
        }
        Ok(t)
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn kind(&self) -> TopologyKind {
        self.kind
    }

    pub fn server(&self) -> Option<NodeId> {
        match self.kind {
            TopologyKind::Star { server } => Some(server),
            TopologyKind::Peer => None,
        }
    }

    pub fn edges(&self) -> &[(usize, usize)] {
        &self.edges
    }

    pub fn degree(&self, i: NodeId) -> usize {
        self.neighbors[i.0].len()
    }

    /// Neighbors of `i` in ascending id order.
    pub fn neighbors(&self, i: NodeId) -> Result<&[NodeId]> {
        self.neighbors
            .get(i.0)
            .map(Vec::as_slice)
            .ok_or_else(|| Error::InvalidArgument(format!("node {i} outside 0..{}", self.n)))
    }

    pub(crate) fn neighbors_of(&self, i: usize) -> &[NodeId] {
        &self.neighbors[i]
    }

    pub fn directed_edges(&self) -> impl Iterator<Item = EdgeDirection> + '_ {
        self.edges.iter().flat_map(|&(a, b)| {
            [
                EdgeDirection {
                    from: NodeId(a),
                    to: NodeId(b),
                },
                EdgeDirection {
                    from: NodeId(b),
                    to: NodeId(a),
                },
            ]
        })
    }

    /// Nodes reached by breadth-first search from node 0.
    pub fn reachable_from_zero(&self) -> usize {
        let mut seen = vec![false; self.n];
        let mut queue = VecDeque::from([0usize]);
        seen[0] = true;
        let mut count = 1;
        while let Some(u) = queue.pop_front() {
            for v in &self.neighbors[u] {
                if !seen[v.0] {
                    seen[v.0] = true;
                    count += 1;
                    queue.push_back(v.0);
                }
            }
        }
        count
    }

    pub fn is_connected(&self) -> bool {
        self.reachable_from_zero() == self.n
    }

    /// Greedy colouring in ascending id order: each node takes the smallest
    /// colour unused by its lower-numbered neighbours. Nodes of equal colour
    /// are never adjacent.
    pub fn greedy_coloring(&self) -> Vec<usize> {
        let mut color = vec![usize::MAX; self.n];
        for i in 0..self.n {
            let used: BTreeSet<usize> = self.neighbors[i]
                .iter()
                .filter(|j| j.0 < i)
                .map(|j| color[j.0])
                .collect();
            color[i] = (0..).find(|c| !used.contains(c)).expect("unbounded range");
        }
        color
    }

    /// Colour classes of [`Topology::greedy_coloring`], each in ascending order.
    pub fn color_classes(&self) -> Vec<Vec<usize>> {
        let colors = self.greedy_coloring();
        let k = colors.iter().max().map_or(0, |m| m + 1);
        let mut classes = vec![Vec::new(); k];
        for (i, c) in colors.into_iter().enumerate() {
            classes[c].push(i);
        }
        classes
    }

    /// Plain-text edge list: a line with `n`, then one `i j` line per edge.
    pub fn to_edge_list(&self) -> String {
        let mut s = format!("{}\n", self.n);
        for (a, b) in &self.edges {
            s.push_str(&format!("{a} {b}\n"));
        }
        s
    }

    /// Parses [`Topology::to_edge_list`] output as a peer graph.
    pub fn from_edge_list(text: &str) -> Result<Self> {
        let ctx = "edge list";
        let mut lines = text.lines().map(str::trim).filter(|l| !l.is_empty());
        let n: usize = lines
            .next()
            .ok_or_else(|| Error::format(ctx, "missing node-count header"))?
            .parse()
            .map_err(|_| Error::format(ctx, "node-count header is not an integer"))?;
        let mut edges = Vec::new();
        for (k, line) in lines.enumerate() {
            let mut parts = line.split_whitespace().map(usize::from_str);
            match (parts.next(), parts.next(), parts.next()) {
                (Some(Ok(a)), Some(Ok(b)), None) => edges.push((a, b)),
                _ => return Err(Error::format(ctx, format!("bad edge line {}: {line:?}", k + 2))),
            }
        }
        Topology::from_edges(n, TopologyKind::Peer, &edges)
    }
}

/// Star with clients `0..n_clients` and the server at id `n_clients`.
pub fn make_star(n_clients: usize) -> Result<Topology> {
    if n_clients == 0 {
        return Err(Error::InvalidArgument("star needs at least one client".into()));
    }
    let server = n_clients;
    let edges: Vec<(usize, usize)> = (0..n_clients).map(|i| (i, server)).collect();
    Topology::from_edges(
        n_clients + 1,
        TopologyKind::Star {
            server: NodeId(server),
        },
        &edges,
    )
}

fn geometric_draw(n: usize, radius: f64, seed: u64) -> Result<Topology> {
    let mut rng = ChaCha20Rng::seed_from_u64(seed);
    let points: Vec<(f64, f64)> = (0..n)
        .map(|_| (rng.random::<f64>(), rng.random::<f64>()))
        .collect();
    let mut edges = Vec::new();
    for i in 0..n {
        for j in i + 1..n {
            let (dx, dy) = (points[i].0 - points[j].0, points[i].1 - points[j].1);
            if (dx * dx + dy * dy).sqrt() <= radius {
                edges.push((i, j));
            }
        }
    }
    Topology::from_edges(n, TopologyKind::Peer, &edges)
}

/// Random geometric graph on `n` uniform points in the unit square.
/// Any radius of at least `sqrt(2)` gives the complete graph.
///
/// Disconnected draws are discarded; attempt `k` uses seed
/// `seed.wrapping_add(k)`, for at most [`RGG_MAX_ATTEMPTS`] attempts.
pub fn make_random_geometric(n: usize, radius: f64, seed: u64) -> Result<Topology> {
    if n < 2 {
        return Err(Error::InvalidArgument("random geometric graph needs n >= 2".into()));
    }
    if !(radius > 0.0 && radius.is_finite()) {
        return Err(Error::InvalidArgument(format!(
            "radius must be positive and finite, got {radius}"
        )));
    }
    let mut tried = Vec::new();
    for k in 0..RGG_MAX_ATTEMPTS {
        let s = seed.wrapping_add(k);
        tried.push(s);
        if let Ok(t) = geometric_draw(n, radius, s) {
            return Ok(t);
        }
    }
    Err(Error::ConstructionFailed { seeds: tried })
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn star_of_three() {
        let t = make_star(3).unwrap();
        assert_eq!(t.n(), 4);
        assert_eq!(t.edges(), &[(0, 3), (1, 3), (2, 3)]);
        assert_eq!(t.neighbors(NodeId(3)).unwrap(), &[NodeId(0), NodeId(1), NodeId(2)]);
        assert_eq!(t.neighbors(NodeId(0)).unwrap(), &[NodeId(3)]);
    }

    #[test]
    fn minimal_and_ten_client_stars() {
        let t = make_star(1).unwrap();
        assert_eq!((t.n(), t.edges().len()), (2, 1));
        let t = make_star(10).unwrap();
        assert_eq!((t.n(), t.edges().len()), (11, 10));
        assert!((0..10).all(|i| t.degree(NodeId(i)) == 1));
        assert!(make_star(0).is_err());
    }

    #[test]
    fn path_neighbors_sorted() {
        let t = Topology::from_edges(3, TopologyKind::Peer, &[(1, 2), (0, 1)]).unwrap();
        assert_eq!(t.neighbors(NodeId(1)).unwrap(), &[NodeId(0), NodeId(2)]);
        assert!(t.neighbors(NodeId(3)).is_err());
    }

    #[test]
    fn rejects_bad_graphs() {
        assert!(Topology::from_edges(2, TopologyKind::Peer, &[(0, 0)]).is_err());
        assert!(Topology::from_edges(2, TopologyKind::Peer, &[(0, 1), (1, 0)]).is_err());
        assert!(Topology::from_edges(3, TopologyKind::Peer, &[(0, 1)]).is_err());
    }

    #[test]
    fn two_points_always_connect_at_full_radius() {
        for s in 0..20 {
            let t = make_random_geometric(2, 1.415, s).unwrap();
            assert_eq!(t.edges(), &[(0, 1)]);
        }
    }

    #[test]
    fn ten_node_graph_is_deterministic() {
        let r = default_radius(10);
        let a = make_random_geometric(10, r, 42).unwrap();
        let b = make_random_geometric(10, r, 42).unwrap();
        assert!(a.is_connected());
        assert_eq!(a, b);
    }

    #[test]
    fn tiny_radius_exhausts_retries() {
        match make_random_geometric(5, 0.0001, 9) {
            Err(Error::ConstructionFailed { seeds }) => {
                assert_eq!(seeds.len() as u64, RGG_MAX_ATTEMPTS);
                assert_eq!(seeds[0], 9);
            }
            other => panic!("expected construction failure, got {other:?}"),
        }
    }

    #[test]
    fn edge_list_round_trip() {
        let t = make_random_geometric(10, default_radius(10), 1).unwrap();
        let back = Topology::from_edge_list(&t.to_edge_list()).unwrap();
        assert_eq!(back.edges(), t.edges());
        assert!(Topology::from_edge_list("3\n0 1 2\n").is_err());
        assert!(Topology::from_edge_list("").is_err());
    }

    #[test]
    fn star_coloring_puts_server_last() {
        let t = make_star(4).unwrap();
        assert_eq!(t.color_classes(), vec![vec![0, 1, 2, 3], vec![4]]);
    }

    proptest! {
        #[test]
        fn rgg_invariants(n in 2usize..16, seed in any::<u64>()) {
            let t = make_random_geometric(n, default_radius(n).min(1.4), seed);
            prop_assume!(t.is_ok());
            let t = t.unwrap();
            prop_assert_eq!(t.reachable_from_zero(), n);
            for e in t.directed_edges() {
                prop_assert_eq!(e.sign() + e.reversed().sign(), 0);
            }
            let colors = t.greedy_coloring();
            for &(a, b) in t.edges() {
                prop_assert_ne!(colors[a], colors[b]);
            }
        }
    }
}
