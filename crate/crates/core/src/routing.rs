//! Shortest paths and per-node port routing tables.
//!
//! Paths are found with Dijkstra run backwards from the destination. A node's
//! next hop toward `dst` is the neighbour `v` minimising `w(u, v) + dist(v)`,
//! with ties going to the smallest node id, so a walk over the tables and a
//! direct path query always agree.

use std::cmp::{Ordering, Reverse};
use std::collections::{BTreeMap, BinaryHeap};
use std::fmt::Write as _;

use crate::channel::TopologySnapshot;
use crate::config::WeightMode;
use crate::ids::{NodeId, PortId};

const MIN_WEIGHT: f64 = 1e-6;

#[derive(Clone, Debug, PartialEq)]
pub struct Route {
    pub nodes: Vec<NodeId>,
    /// `ports[k]` is the egress port used by `nodes[k]`.
    pub ports: Vec<PortId>,
    pub weight: f64,
}

impl Route {
    pub fn source(&self) -> NodeId {
        self.nodes[0]
    }

    pub fn destination(&self) -> NodeId {
        *self.nodes.last().unwrap()
    }

    pub fn hops(&self) -> usize {
        self.nodes.len() - 1
    }

    /// Next node after `node` on this route.
    pub fn next_after(&self, node: NodeId) -> Option<(usize, NodeId)> {
        let k = self.nodes.iter().position(|&n| n == node)?;
        self.nodes.get(k + 1).map(|&next| (k, next))
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct RouteEntry {
    pub next_hop: NodeId,
    pub port: PortId,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum NextHop {
    /// The packet is already at its destination.
    Deliver,
    Forward(RouteEntry),
    NoRoute,
}

#[derive(Clone, Debug, PartialEq)]
pub struct PortRoutingTable {
    pub owner: NodeId,
    pub entries: BTreeMap<NodeId, RouteEntry>,
    pub built_at_slot: usize,
}

impl PortRoutingTable {
    pub fn next_hop(&self, destination: NodeId) -> NextHop {
        if destination == self.owner {
            return NextHop::Deliver;
        }
        self.entries
            .get(&destination)
            .map_or(NextHop::NoRoute, |&e| NextHop::Forward(e))
    }
}

pub fn next_hop(table: &PortRoutingTable, destination: NodeId) -> NextHop {
    table.next_hop(destination)
}

/// `owner destination next_hop port` per line.
pub fn dump_tables(tables: &[PortRoutingTable]) -> String {
    let mut out = String::new();
    for t in tables {
        for (dst, e) in &t.entries {
            let _ = writeln!(out, "{} {} {} {}", t.owner, dst, e.next_hop, e.port);
        }
    }
    out
}

#[derive(Clone, Copy, PartialEq)]
struct Cost(f64);

impl Eq for Cost {}

impl PartialOrd for Cost {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

impl Ord for Cost {
    fn cmp(&self, other: &Self) -> Ordering {
        self.0.total_cmp(&other.0)
    }
}

/// Directed weighted graph with per-owner port assignment.
#[derive(Clone, Debug)]
pub struct RoutingGraph {
    out: Vec<Vec<(NodeId, f64)>>,
    inc: Vec<Vec<(NodeId, f64)>>,
}

impl RoutingGraph {
    /// Edges as `(from, to, weight)`; weights must be positive.
    pub fn from_edges(n: usize, edges: &[(usize, usize, f64)]) -> Self {
        let mut out = vec![Vec::new(); n];
        let mut inc = vec![Vec::new(); n];
        for &(u, v, w) in edges {
            assert!(u != v && w > 0.0 && w.is_finite(), "bad edge {u}->{v} ({w})");
            out[u].push((NodeId(v), w));
            inc[v].push((NodeId(u), w));
        }
        for list in out.iter_mut().chain(inc.iter_mut()) {
            list.sort_by_key(|e| e.0);
            list.dedup_by_key(|e| e.0);
        }
        RoutingGraph { out, inc }
    }

    /// Graph over the links of `snapshot`. With a port cap, only the first
    /// `cap` neighbours of each node (ascending id) get a port; the rest are
    /// unusable as next hops.
    pub fn from_snapshot(snapshot: &TopologySnapshot, mode: WeightMode, port_cap: Option<usize>) -> Self {
        let n = snapshot.node_count();
        let mut edges = Vec::new();
        for u in 0..n {
            let neigh = snapshot.neighbors(NodeId(u));
            let allowed: Box<dyn Iterator<Item = NodeId>> = match port_cap {
                Some(cap) => Box::new(neigh.take(cap)),
                None => Box::new(neigh),
            };
            for v in allowed {
                let w = match mode {
                    WeightMode::EuclideanDistance => snapshot.distance(NodeId(u), v),
                    WeightMode::HopCount => 1.0,
                    WeightMode::InverseRate => 1.0 / snapshot.rate(NodeId(u), v) as f64,
                };
                edges.push((u, v.0, w.max(MIN_WEIGHT)));
            }
        }
        Self::from_edges(n, &edges)
    }

    pub fn node_count(&self) -> usize {
        self.out.len()
    }

    pub fn weight(&self, u: NodeId, v: NodeId) -> Option<f64> {
        self.out[u.0]
            .binary_search_by_key(&v, |e| e.0)
            .ok()
            .map(|k| self.out[u.0][k].1)
    }

    /// Port of `owner` facing `neighbor`, if the link has one.
    pub fn port(&self, owner: NodeId, neighbor: NodeId) -> Option<PortId> {
        self.out[owner.0]
            .binary_search_by_key(&neighbor, |e| e.0)
            .ok()
            .map(|k| PortId(k as u32))
    }

    /// Shortest distance from every node to `destination` (infinite if none).
    pub fn distances_to(&self, destination: NodeId) -> Vec<f64> {
        let mut dist = vec![f64::INFINITY; self.node_count()];
        let mut heap = BinaryHeap::new();
        dist[destination.0] = 0.0;
        heap.push(Reverse((Cost(0.0), destination)));
        while let Some(Reverse((Cost(d), v))) = heap.pop() {
            if d > dist[v.0] {
                continue;
            }
            for &(u, w) in &self.inc[v.0] {
                let nd = d + w;
                if nd < dist[u.0] {
                    dist[u.0] = nd;
                    heap.push(Reverse((Cost(nd), u)));
                }
            }
        }
        dist
    }

    fn step(&self, u: NodeId, dist_to: &[f64]) -> Option<NodeId> {
        let mut best: Option<(f64, NodeId)> = None;
        for &(v, w) in &self.out[u.0] {
            let c = w + dist_to[v.0];
            if c.is_finite() && best.is_none_or(|(b, _)| c < b) {
                best = Some((c, v));
            }
        }
        best.map(|(_, v)| v)
    }

    fn walk(&self, source: NodeId, destination: NodeId, dist_to: &[f64]) -> Option<Route> {
        if !dist_to[source.0].is_finite() || source == destination {
            return None;
        }
        let mut nodes = vec![source];
        let mut ports = Vec::new();
        let mut weight = 0.0;
        let mut seen = vec![false; self.node_count()];
        seen[source.0] = true;
        let mut u = source;
        while u != destination {
            let v = self.step(u, dist_to)?;
            if seen[v.0] {
                return None;
            }
            seen[v.0] = true;
            ports.push(self.port(u, v).unwrap());
            weight += self.weight(u, v).unwrap();
            nodes.push(v);
            u = v;
        }
        Some(Route {
            nodes,
            ports,
            weight,
        })
    }

    pub fn shortest_path(&self, source: NodeId, destination: NodeId) -> Option<Route> {
        let dist = self.distances_to(destination);
        self.walk(source, destination, &dist)
    }

    pub fn build_tables(&self, slot: usize) -> Vec<PortRoutingTable> {
        let n = self.node_count();
        let mut tables: Vec<_> = (0..n)
            .map(|u| PortRoutingTable {
                owner: NodeId(u),
                entries: BTreeMap::new(),
                built_at_slot: slot,
            })
            .collect();
        for dst in (0..n).map(NodeId) {
            let dist = self.distances_to(dst);
            for u in (0..n).map(NodeId) {
                if u == dst || !dist[u.0].is_finite() {
                    continue;
                }
                if let Some(v) = self.step(u, &dist) {
                    tables[u.0].entries.insert(
                        dst,
                        RouteEntry {
                            next_hop: v,
                            port: self.port(u, v).unwrap(),
                        },
                    );
                }
            }
        }
        tables
    }
}

/// Minimum-weight route on `snapshot`, or `None` when unreachable.
pub fn shortest_path(
    snapshot: &TopologySnapshot,
    source: NodeId,
    destination: NodeId,
    mode: WeightMode,
) -> Option<Route> {
    RoutingGraph::from_snapshot(snapshot, mode, None).shortest_path(source, destination)
}

pub fn build_tables(snapshot: &TopologySnapshot, mode: WeightMode) -> Vec<PortRoutingTable> {
    RoutingGraph::from_snapshot(snapshot, mode, None).build_tables(snapshot.slot)
}
