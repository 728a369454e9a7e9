//! Link existence and Shannon capacity for V2V and V2I pairs, assembled into
//! one weighted adjacency snapshot per slot.
//!
//! V2V capacity is `B log2(1 + P h / (sigma^2 + A0 d^-2))`. Note that the
//! `A0 d^-2` term sits in the denominator, so capacity grows with distance
//! inside the communication range. V2I capacity is `B log2(1 + P h / sigma^2)`
//! on pre-allocated orthogonal spectrum. RSU to RSU pairs are never linked.

use std::fmt::Write as _;

use crate::config::{packets_per_slot, GainModel, SimConfig};
use crate::ids::NodeId;
use crate::scenario::{NodeKind, NodeState, Position};

/// Physical-layer parameters in SI units.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ChannelParams {
    pub bandwidth_v2v: f64,
    pub bandwidth_v2i: f64,
    pub vehicle_tx_power: f64,
    pub rsu_tx_power: f64,
    pub noise_power: f64,
    /// Linear value of the `A0` constant.
    pub a0: f64,
    pub gain_model: GainModel,
    pub h_v2v: f64,
    pub h_v2i: f64,
    pub max_range_vehicle: f64,
    pub rsu_coverage: f64,
    pub min_distance: f64,
}

impl ChannelParams {
    pub fn from_config(config: &SimConfig) -> Self {
        let c = &config.channel;
        ChannelParams {
            bandwidth_v2v: c.bandwidth_v2v_mhz * 1e6,
            bandwidth_v2i: c.bandwidth_v2i_mhz * 1e6,
            vehicle_tx_power: c.vehicle_tx_power.watts(),
            rsu_tx_power: c.rsu_tx_power.watts(),
            noise_power: c.noise_power.watts(),
            a0: db_to_linear(c.a0_db),
            gain_model: c.gain_model,
            h_v2v: c.h_v2v,
            h_v2i: c.h_v2i,
            max_range_vehicle: c.vehicle_range_m,
            rsu_coverage: c.rsu_coverage_m,
            min_distance: c.min_distance_m,
        }
    }

    fn gain(&self, base: f64, d: f64) -> f64 {
        match self.gain_model {
            GainModel::Constant => base,
            GainModel::LogDistance {
                exponent,
                reference_m,
            } => {
                if d <= reference_m {
                    base
                } else {
                    base * (d / reference_m).powf(-exponent)
                }
            }
        }
    }
}

impl Default for ChannelParams {
    fn default() -> Self {
        Self::from_config(&SimConfig::default())
    }
}

pub fn db_to_linear(db: f64) -> f64 {
    10f64.powf(db / 10.0)
}

pub fn distance(a: Position, b: Position) -> f64 {
    let (dx, dy, dz) = (a.x - b.x, a.y - b.y, a.z - b.z);
    (dx * dx + dy * dy + dz * dz).sqrt()
}

/// Range test with an inclusive boundary.
pub fn link_exists_v2v(d: f64, max_range: f64) -> bool {
    d <= max_range
}

/// V2V capacity in bit/s. Coincident nodes are evaluated at
/// `params.min_distance` to keep `A0 d^-2` finite.
pub fn capacity_v2v(linked: bool, d: f64, params: &ChannelParams) -> f64 {
    if !linked {
        return 0.0;
    }
    let d = d.max(params.min_distance);
    let h = params.gain(params.h_v2v, d);
    let sinr = params.vehicle_tx_power * h / (params.noise_power + params.a0 * d.powi(-2));
    params.bandwidth_v2v * (1.0 + sinr).log2()
}

/// V2I capacity in bit/s for a transmitter of `tx_power` watts. Distance only
/// matters through a non-constant gain model.
pub fn capacity_v2i(linked: bool, d: f64, tx_power: f64, params: &ChannelParams) -> f64 {
    if !linked {
        return 0.0;
    }
    let h = params.gain(params.h_v2i, d.max(params.min_distance));
    params.bandwidth_v2i * (1.0 + tx_power * h / params.noise_power).log2()
}

/// Weighted adjacency for one slot. Rates are whole packets per slot.
#[derive(Clone, Debug, PartialEq)]
pub struct TopologySnapshot {
    pub slot: usize,
    n: usize,
    rate: Vec<u64>,
    exists: Vec<bool>,
    positions: Vec<Position>,
}

impl TopologySnapshot {
    /// Snapshot from an explicit rate matrix (row-major, `n * n`). A pair is
    /// linked iff its rate is positive.
    pub fn from_rates(slot: usize, n: usize, rate: Vec<u64>, positions: Vec<Position>) -> Self {
        assert_eq!(rate.len(), n * n);
        assert_eq!(positions.len(), n);
        let mut rate = rate;
        for i in 0..n {
            rate[i * n + i] = 0;
        }
        let exists = rate.iter().map(|&r| r > 0).collect();
        TopologySnapshot {
            slot,
            n,
            rate,
            exists,
            positions,
        }
    }

    pub fn node_count(&self) -> usize {
        self.n
    }

    #[inline]
    pub fn rate(&self, from: NodeId, to: NodeId) -> u64 {
        self.rate[from.0 * self.n + to.0]
    }

    #[inline]
    pub fn exists(&self, from: NodeId, to: NodeId) -> bool {
        self.exists[from.0 * self.n + to.0]
    }

    pub fn position(&self, node: NodeId) -> Position {
        self.positions[node.0]
    }

    pub fn distance(&self, a: NodeId, b: NodeId) -> f64 {
        distance(self.positions[a.0], self.positions[b.0])
    }

    /// Out-neighbours of `node` in ascending id order.
    pub fn neighbors(&self, node: NodeId) -> impl Iterator<Item = NodeId> + '_ {
        let row = node.0 * self.n;
        (0..self.n)
            .filter(move |&j| self.exists[row + j])
            .map(NodeId)
    }

    /// Directed links with a positive rate.
    pub fn links(&self) -> impl Iterator<Item = (NodeId, NodeId, u64)> + '_ {
        (0..self.n).flat_map(move |i| {
            (0..self.n).filter_map(move |j| {
                let r = self.rate[i * self.n + j];
                (r > 0).then_some((NodeId(i), NodeId(j), r))
            })
        })
    }

    pub fn link_count(&self) -> usize {
        self.exists.iter().filter(|&&e| e).count()
    }

    /// `node_i node_j rate_pkts` per line.
    pub fn edge_list(&self) -> String {
        let mut out = String::new();
        for (i, j, r) in self.links() {
            let _ = writeln!(out, "{i} {j} {r}");
        }
        out
    }
}

/// Builds the snapshot for one slot. A pair whose capacity floors to zero
/// packets per slot is treated as unlinked.
pub fn build_topology(
    slot: usize,
    nodes: &[NodeState],
    positions: &[Position],
    params: &ChannelParams,
    slot_length_s: f64,
    packet_size_bits: f64,
) -> TopologySnapshot {
    let n = nodes.len();
    let mut rate = vec![0u64; n * n];
    for i in 0..n {
        for j in 0..n {
            if i == j {
                continue;
            }
            let d = distance(positions[i], positions[j]);
            let bps = match (nodes[i].kind, nodes[j].kind) {
                (NodeKind::Vehicle, NodeKind::Vehicle) => {
                    capacity_v2v(link_exists_v2v(d, params.max_range_vehicle), d, params)
                }
                (NodeKind::Rsu, NodeKind::Rsu) => 0.0,
                (from, _) => {
                    let power = if from == NodeKind::Rsu {
                        params.rsu_tx_power
                    } else {
                        params.vehicle_tx_power
                    };
                    capacity_v2i(d <= params.rsu_coverage, d, power, params)
                }
            };
            rate[i * n + j] = packets_per_slot(bps, slot_length_s, packet_size_bits);
        }
    }
    TopologySnapshot::from_rates(slot, n, rate, positions.to_vec())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::scenario::Axis;
    use proptest::prelude::*;

    fn reference_params() -> ChannelParams {
        ChannelParams {
            a0: 0.0166,
            ..ChannelParams::default()
        }
    }

    /// Direct evaluation of the capacity expressions, written independently of
    /// the implementation.
    fn oracle_v2v(b: f64, p: f64, h: f64, s2: f64, a0: f64, d: f64) -> f64 {
        b * (1.0 + p * h / (s2 + a0 / (d * d))).ln() / std::f64::consts::LN_2
    }

    #[test]
    fn euclidean_distance() {
        let o = Position::default();
        assert_eq!(distance(o, o), 0.0);
        assert_eq!(distance(Position::new(3.0, 4.0, 0.0), o), 5.0);
        assert_eq!(
            distance(Position::new(1.0, 2.0, 3.0), Position::new(4.0, 6.0, 3.0)),
            5.0
        );
    }

    #[test]
    fn v2v_range_is_inclusive() {
        assert!(link_exists_v2v(200.0, 200.0));
        assert!(!link_exists_v2v(200.01, 200.0));
        assert!(link_exists_v2v(0.0, 200.0));
    }

    #[test]
    fn a0_default_is_minus_17_8_db() {
        let p = ChannelParams::default();
        assert!((p.a0 - 0.0166).abs() < 5e-5, "{}", p.a0);
        assert!((p.noise_power - 1e-13).abs() < 1e-25);
    }

    #[test]
    fn v2v_capacity_matches_hand_evaluation() {
        let p = reference_params();
        assert_eq!(capacity_v2v(false, 100.0, &p), 0.0);
        let c100 = capacity_v2v(true, 100.0, &p);
        let oracle = oracle_v2v(20e6, 0.1, 1.0, 1e-13, 0.0166, 100.0);
        assert!((c100 - oracle).abs() < 1e-3);
        assert!((c100 / 1e6 - 317.6).abs() < 0.1, "{c100}");
        assert!(capacity_v2v(true, 10.0, &p) < c100);
    }

    #[test]
    fn v2i_capacity_matches_hand_evaluation() {
        let p = reference_params();
        assert_eq!(capacity_v2i(false, 50.0, 0.1, &p), 0.0);
        let c = capacity_v2i(true, 50.0, 0.1, &p);
        let oracle = 40e6 * (1.0f64 + 0.1 / 1e-13).log2();
        assert!((c - oracle).abs() < 1e-3);
        assert!((c / 1e9 - 1.594).abs() < 0.001, "{c}");
        assert_eq!(capacity_v2i(true, 400.0, 0.1, &p), c);
        let wide = ChannelParams {
            bandwidth_v2i: 80e6,
            ..p
        };
        assert!((capacity_v2i(true, 50.0, 0.1, &wide) - 2.0 * c).abs() < 1e-3);
    }

    #[test]
    fn coincident_vehicles_are_clamped_not_singular() {
        let p = reference_params();
        let c0 = capacity_v2v(true, 0.0, &p);
        assert!(c0.is_finite() && c0 > 0.0);
        assert_eq!(c0, capacity_v2v(true, 1.0, &p));
    }

    #[test]
    fn log_distance_gain_attenuates() {
        let p = ChannelParams {
            gain_model: GainModel::LogDistance {
                exponent: 2.0,
                reference_m: 10.0,
            },
            ..reference_params()
        };
        assert!(capacity_v2i(true, 400.0, 0.1, &p) < capacity_v2i(true, 20.0, 0.1, &p));
        assert_eq!(capacity_v2i(true, 5.0, 0.1, &p), capacity_v2i(true, 10.0, 0.1, &p));
    }

    fn node(id: usize, kind: NodeKind) -> NodeState {
        NodeState {
            id: NodeId(id),
            kind,
            position: Position::default(),
            velocity: (0.0, 0.0),
            axis: Axis::None,
            max_range: 200.0,
            tx_power: 0.1,
            cache_capacity: 100,
            forward_capacity: 1000,
        }
    }

    fn snapshot(kinds: &[NodeKind], pos: &[Position]) -> TopologySnapshot {
        let nodes: Vec<_> = kinds.iter().enumerate().map(|(i, &k)| node(i, k)).collect();
        build_topology(0, &nodes, pos, &ChannelParams::default(), 0.1, 1e6)
    }

    #[test]
    fn distant_vehicles_are_unlinked() {
        let s = snapshot(
            &[NodeKind::Vehicle, NodeKind::Vehicle],
            &[Position::default(), Position::new(300.0, 0.0, 0.0)],
        );
        assert!(!s.exists(NodeId(0), NodeId(1)));
        assert_eq!(s.rate(NodeId(0), NodeId(1)), 0);
        assert_eq!(s.link_count(), 0);
    }

    #[test]
    fn rsu_covers_400_metres() {
        let s = snapshot(
            &[NodeKind::Vehicle, NodeKind::Rsu],
            &[Position::default(), Position::new(400.0, 0.0, 5.0)],
        );
        assert!(s.exists(NodeId(0), NodeId(1)));
        assert!(s.exists(NodeId(1), NodeId(0)));
        assert_eq!(s.rate(NodeId(0), NodeId(1)), 159);
    }

    #[test]
    fn rsus_never_link_to_each_other() {
        let s = snapshot(
            &[NodeKind::Rsu, NodeKind::Rsu],
            &[Position::default(), Position::new(10.0, 0.0, 0.0)],
        );
        assert_eq!(s.link_count(), 0);
    }

    #[test]
    fn line_of_three_links_only_neighbours() {
        let pos = [
            Position::default(),
            Position::new(150.0, 0.0, 0.0),
            Position::new(300.0, 0.0, 0.0),
        ];
        let s = snapshot(&[NodeKind::Vehicle; 3], &pos);
        assert!(!s.exists(NodeId(0), NodeId(2)));
        assert!(s.exists(NodeId(0), NodeId(1)) && s.exists(NodeId(1), NodeId(2)));
        assert_eq!(s.neighbors(NodeId(1)).collect::<Vec<_>>(), vec![NodeId(0), NodeId(2)]);
        assert_eq!(s.edge_list().lines().count(), 4);
    }

    proptest! {
        #[test]
        fn snapshot_invariants(
            pts in prop::collection::vec((0.0f64..866.0, 0.0f64..500.0, prop::bool::ANY), 1..12)
        ) {
            let kinds: Vec<_> = pts.iter().map(|p| if p.2 { NodeKind::Rsu } else { NodeKind::Vehicle }).collect();
            let pos: Vec<_> = pts.iter().map(|p| Position::new(p.0, p.1, 1.5)).collect();
            let s = snapshot(&kinds, &pos);
            let p = ChannelParams::default();
            let n = kinds.len();
            for i in 0..n {
                prop_assert_eq!(s.rate(NodeId(i), NodeId(i)), 0);
                for j in 0..n {
                    let (a, b) = (NodeId(i), NodeId(j));
                    prop_assert_eq!(s.rate(a, b) == 0, !s.exists(a, b));
                    if kinds[i] == NodeKind::Vehicle && kinds[j] == NodeKind::Vehicle {
                        prop_assert_eq!(s.exists(a, b), s.exists(b, a));
                    }
                    if i != j && s.exists(a, b) {
                        let d = distance(pos[i], pos[j]);
                        let bps = if kinds[i] == NodeKind::Vehicle && kinds[j] == NodeKind::Vehicle {
                            capacity_v2v(true, d, &p)
                        } else {
                            capacity_v2i(true, d, 0.1, &p)
                        };
                        prop_assert!(bps > 0.0);
                        let exact = bps * 0.1 / 1e6;
                        let r = s.rate(a, b) as f64;
                        prop_assert!(r <= exact + 1e-9 && exact < r + 1.0);
                    }
                }
            }
        }
    }
}
