//! Task generation.
//!
//! Every initiation slot a fixed number of nodes start a task. Initiators are
//! drawn per grid cell in proportion to how many eligible nodes each cell
//! holds, destinations uniformly from all other nodes, and priorities from
//! the configured mix. Each task's route is frozen on the topology of its
//! first slot.

use rand::distributions::{Distribution, WeightedIndex};
use rand::Rng;
use serde::Serialize;

use crate::channel::TopologySnapshot;
use crate::config::SimConfig;
use crate::engine;
use crate::error::{Result, SimError};
use crate::ids::{NodeId, TaskId};
use crate::routing::{Route, RoutingGraph};
use crate::scenario::{NodeKind, NodeState, Position};
use crate::switch::Priority;

#[derive(Clone, Debug, PartialEq)]
pub struct Task {
    pub id: TaskId,
    pub source: NodeId,
    pub destination: NodeId,
    pub priority: Priority,
    /// Packets offered per slot at the source.
    pub qos_rate: u64,
    /// `rho`: packets the task sends in total.
    pub total_packets: u64,
    pub start_slot: usize,
    pub route: Route,
    /// Link rate of every hop when the route was planned.
    pub hop_rates: Vec<u64>,
    pub sent: u64,
    /// `gamma`: packets that reached the destination.
    pub delivered: u64,
    pub node_lost: u64,
    pub link_lost: u64,
    /// Slot in which the last packet was delivered or lost.
    pub finished_slot: Option<usize>,
}

impl Task {
    pub fn lost(&self) -> u64 {
        self.node_lost + self.link_lost
    }

    pub fn in_network(&self) -> u64 {
        self.sent - self.delivered - self.lost()
    }

    pub fn is_finished(&self) -> bool {
        self.delivered + self.lost() == self.total_packets
    }
}

/// A task whose destination was unreachable when it was created. It never
/// sends anything.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct UnroutableTask {
    pub id: TaskId,
    pub source: NodeId,
    pub destination: NodeId,
    pub priority: Priority,
    pub start_slot: usize,
    pub total_packets: u64,
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct GeneratedTasks {
    pub routed: Vec<Task>,
    pub unroutable: Vec<UnroutableTask>,
}

pub fn is_initiation_slot(config: &SimConfig, slot: usize) -> bool {
    let t = &config.traffic;
    slot >= t.first_initiation_slot && t.last_initiation_slot.is_none_or(|last| slot <= last)
}

fn grid_cell(config: &SimConfig, p: Position) -> usize {
    let (rows, cols) = (config.traffic.grid_rows, config.traffic.grid_cols);
    let col = ((p.x / config.scenario.area_width_m) * cols as f64).floor() as usize;
    let row = ((p.y / config.scenario.area_height_m) * rows as f64).floor() as usize;
    row.min(rows - 1) * cols + col.min(cols - 1)
}

/// Largest-remainder split of `k` picks across cells holding `counts` nodes.
fn proportional_quotas(counts: &[usize], k: usize) -> Vec<usize> {
    let total: usize = counts.iter().sum();
    let k = k.min(total);
    if total == 0 {
        return vec![0; counts.len()];
    }
    let mut quotas: Vec<usize> = counts.iter().map(|&c| c * k / total).collect();
    let mut rest: Vec<(usize, usize)> = counts
        .iter()
        .enumerate()
        .map(|(i, &c)| (c * k % total, i))
        .collect();
    rest.sort_by(|a, b| b.0.cmp(&a.0).then(a.1.cmp(&b.1)));
    let mut left = k - quotas.iter().sum::<usize>();
    for (_, i) in rest {
        if left == 0 {
            break;
        }
        if quotas[i] < counts[i] {
            quotas[i] += 1;
            left -= 1;
        }
    }
    quotas
}

/// Picks this slot's initiators, ascending by id.
pub fn select_initiators<R: Rng + ?Sized>(
    config: &SimConfig,
    nodes: &[NodeState],
    positions: &[Position],
    rng: &mut R,
) -> Vec<NodeId> {
    let cells = config.traffic.grid_rows * config.traffic.grid_cols;
    let mut members: Vec<Vec<NodeId>> = vec![Vec::new(); cells];
    for n in nodes {
        if n.kind == NodeKind::Rsu && !config.traffic.rsus_initiate {
            continue;
        }
        members[grid_cell(config, positions[n.id.0])].push(n.id);
    }
    let counts: Vec<usize> = members.iter().map(Vec::len).collect();
    let eligible: usize = counts.iter().sum();
    let k = match config.traffic.initiators_per_node {
        None => config.traffic.initiators_per_slot,
        Some(share) => {
            let expected = share * eligible as f64;
            let whole = expected.floor();
            whole as usize + usize::from(rng.gen_bool((expected - whole).clamp(0.0, 1.0)))
        }
    }
    .min(eligible);
    let quotas = proportional_quotas(&counts, k);
    let mut chosen: Vec<NodeId> = members
        .iter()
        .zip(&quotas)
        .flat_map(|(m, &q)| {
            rand::seq::index::sample(rng, m.len(), q)
                .into_iter()
                .map(|i| m[i])
                .collect::<Vec<_>>()
        })
        .collect();
    chosen.sort();
    chosen
}

/// Uniform over every node except `source`.
pub fn pick_destination<R: Rng + ?Sized>(source: NodeId, n_nodes: usize, rng: &mut R) -> NodeId {
    let j = rng.gen_range(0..n_nodes - 1);
    NodeId(if j >= source.0 { j + 1 } else { j })
}

pub fn pick_priority<R: Rng + ?Sized>(mix: &[f64; 3], rng: &mut R) -> Priority {
    let dist = WeightedIndex::new(mix).expect("validated priority mix");
    Priority::ALL[dist.sample(rng)]
}

/// Tasks starting in `slot`. `next_id` is advanced for every task, routed or not.
#[allow(clippy::too_many_arguments)]
pub fn generate_tasks<R: Rng + ?Sized>(
    slot: usize,
    config: &SimConfig,
    nodes: &[NodeState],
    positions: &[Position],
    snapshot: &TopologySnapshot,
    graph: &RoutingGraph,
    next_id: &mut u64,
    rng: &mut R,
) -> GeneratedTasks {
    let mut out = GeneratedTasks::default();
    if !is_initiation_slot(config, slot) || nodes.len() < 2 {
        return out;
    }
    let qos_rate = config.qos_packets_per_slot();
    let total_packets = config.task_packets();
    for source in select_initiators(config, nodes, positions, rng) {
        let destination = pick_destination(source, nodes.len(), rng);
        let priority = pick_priority(&config.traffic.priority_mix, rng);
        let id = TaskId(*next_id);
        *next_id += 1;
        match graph.shortest_path(source, destination) {
            Some(route) => {
                let hop_rates = route
                    .nodes
                    .windows(2)
                    .map(|w| snapshot.rate(w[0], w[1]))
                    .collect();
                out.routed.push(Task {
                    id,
                    source,
                    destination,
                    priority,
                    qos_rate,
                    total_packets,
                    start_slot: slot,
                    route,
                    hop_rates,
                    sent: 0,
                    delivered: 0,
                    node_lost: 0,
                    link_lost: 0,
                    finished_slot: None,
                });
            }
            None => out.unroutable.push(UnroutableTask {
                id,
                source,
                destination,
                priority,
                start_slot: slot,
                total_packets,
            }),
        }
    }
    out
}

/// Packets the source injects in `slot`.
pub fn offered_load(task: &Task, slot: usize) -> u64 {
    if slot < task.start_slot {
        return 0;
    }
    task.qos_rate.min(task.total_packets - task.sent)
}

/// Largest whole-Mbps offered rate in `[lo, hi]` whose seed-averaged end-of-run
/// loss rate stays below `target_loss`. Runs without any sending task count
/// as loss-free.
pub fn calibrate_qos(
    template: &SimConfig,
    target_loss: f64,
    seeds: &[u64],
    lo: u32,
    hi: u32,
) -> Result<u32> {
    let loss_at = |qos: u32| -> Result<f64> {
        let mut cfg = template.clone();
        cfg.traffic.qos_mbps = qos as f64;
        let runs = engine::run_seeds(&cfg, seeds)?;
        let total: f64 = runs
            .iter()
            .map(|r| r.metrics.rows.last().and_then(|m| m.loss_rate).unwrap_or(0.0))
            .sum();
        Ok(total / runs.len().max(1) as f64)
    };
    if loss_at(lo)? >= target_loss {
        return Err(SimError::CalibrationInfeasible {
            lo,
            hi,
            target: target_loss,
        });
    }
    let (mut ok, mut bad) = (lo, hi + 1);
    if loss_at(hi)? < target_loss {
        return Ok(hi);
    }
    bad = bad.min(hi);
    while bad - ok > 1 {
        let mid = ok + (bad - ok) / 2;
        if loss_at(mid)? < target_loss {
            ok = mid;
        } else {
            bad = mid;
        }
    }
    Ok(ok)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::channel::{build_topology, ChannelParams};
    use crate::config::WeightMode;
    use crate::rng;
    use crate::scenario::initial_placement;

    fn setup(config: &SimConfig) -> (Vec<NodeState>, Vec<Position>, TopologySnapshot, RoutingGraph) {
        let nodes = initial_placement(config, &mut rng::stream(5, rng::PLACEMENT, 0, 0));
        let pos: Vec<_> = nodes.iter().map(|n| n.position).collect();
        let snap = build_topology(0, &nodes, &pos, &ChannelParams::from_config(config), 0.1, 1e6);
        let graph = RoutingGraph::from_snapshot(&snap, WeightMode::EuclideanDistance, None);
        (nodes, pos, snap, graph)
    }

    #[test]
    fn zero_initiators_generate_nothing() {
        let mut c = SimConfig::default();
        c.traffic.initiators_per_slot = 0;
        c.traffic.initiators_per_node = None;
        let (nodes, pos, snap, graph) = setup(&c);
        let mut id = 0;
        let got = generate_tasks(0, &c, &nodes, &pos, &snap, &graph, &mut id, &mut rng::stream(1, 2, 3, 4));
        assert_eq!(got, GeneratedTasks::default());
        assert_eq!(id, 0);
    }

    #[test]
    fn tasks_carry_valid_frozen_routes() {
        let mut c = SimConfig::default();
        c.traffic.initiators_per_slot = 6;
        c.traffic.initiators_per_node = None;
        let (nodes, pos, snap, graph) = setup(&c);
        let mut id = 0;
        let mut r = rng::stream(9, 2, 3, 4);
        let got = generate_tasks(0, &c, &nodes, &pos, &snap, &graph, &mut id, &mut r);
        assert_eq!(got.routed.len() + got.unroutable.len(), 6);
        assert_eq!(id, 6);
        for t in &got.routed {
            assert_ne!(t.source, t.destination);
            assert_eq!(t.route.source(), t.source);
            assert_eq!(t.route.destination(), t.destination);
            assert_eq!(t.qos_rate, 2);
            assert_eq!(t.total_packets, 200);
            for (w, &r) in t.route.nodes.windows(2).zip(&t.hop_rates) {
                assert!(snap.exists(w[0], w[1]));
                assert_eq!(snap.rate(w[0], w[1]), r);
            }
        }
    }

    #[test]
    fn qos_converts_to_packets() {
        let c = SimConfig::default();
        assert_eq!(c.qos_packets_per_slot(), 2);
        let mut c = c;
        c.traffic.qos_mbps = 180.0;
        assert_eq!(c.qos_packets_per_slot(), 18);
        assert_eq!(c.task_packets(), 1800);
    }

    #[test]
    fn destinations_are_uniform_and_never_the_source() {
        let mut r = rng::stream(3, 3, 3, 3);
        let n = 24;
        let src = NodeId(7);
        let draws = 10_000;
        let mut counts = vec![0u32; n];
        for _ in 0..draws {
            let d = pick_destination(src, n, &mut r);
            assert_ne!(d, src);
            counts[d.0] += 1;
        }
        let expected = draws as f64 / 23.0;
        let chi2: f64 = counts
            .iter()
            .enumerate()
            .filter(|(i, _)| *i != 7)
            .map(|(_, &c)| (c as f64 - expected).powi(2) / expected)
            .sum();
        // 22 degrees of freedom, 0.999 quantile
        assert!(chi2 < 48.27, "chi2 = {chi2}");
    }

    #[test]
    fn quotas_follow_cell_populations() {
        assert_eq!(proportional_quotas(&[10, 10, 0, 4], 2), vec![1, 1, 0, 0]);
        assert_eq!(proportional_quotas(&[1, 0, 0, 0], 3), vec![1, 0, 0, 0]);
        assert_eq!(proportional_quotas(&[0, 0], 2), vec![0, 0]);
        assert_eq!(proportional_quotas(&[3, 3, 3, 3], 12), vec![3, 3, 3, 3]);
        let q = proportional_quotas(&[7, 2, 9, 6], 5);
        assert_eq!(q.iter().sum::<usize>(), 5);
    }

    #[test]
    fn initiators_can_exclude_rsus() {
        let mut c = SimConfig::default();
        c.traffic.rsus_initiate = false;
        c.traffic.initiators_per_slot = 24;
        c.traffic.initiators_per_node = None;
        let (nodes, pos, _, _) = setup(&c);
        let got = select_initiators(&c, &nodes, &pos, &mut rng::stream(1, 1, 1, 1));
        assert_eq!(got.len(), 20);
        assert!(got.iter().all(|id| id.0 < 20));
    }

    #[test]
    fn per_node_share_sets_the_mean_initiator_count() {
        let mut c = SimConfig::default();
        c.traffic.initiators_per_node = Some(0.1);
        let (nodes, pos, _, _) = setup(&c);
        let mut r = rng::stream(2, 2, 2, 2);
        let draws = 4000;
        let total: usize = (0..draws).map(|_| select_initiators(&c, &nodes, &pos, &mut r).len()).sum();
        // 24 nodes * 0.1 = 2.4 per slot, each draw either 2 or 3
        let mean = total as f64 / draws as f64;
        assert!((mean - 2.4).abs() < 0.05, "mean {mean}");
    }

    fn sample_task(qos_rate: u64, total: u64, sent: u64) -> Task {
        Task {
            id: TaskId(0),
            source: NodeId(0),
            destination: NodeId(1),
            priority: Priority::High,
            qos_rate,
            total_packets: total,
            start_slot: 3,
            route: Route {
                nodes: vec![NodeId(0), NodeId(1)],
                ports: vec![crate::ids::PortId(0)],
                weight: 1.0,
            },
            hop_rates: vec![10],
            sent,
            delivered: 0,
            node_lost: 0,
            link_lost: 0,
            finished_slot: None,
        }
    }

    #[test]
    fn offered_load_tails_off() {
        assert_eq!(offered_load(&sample_task(2, 10, 0), 3), 2);
        assert_eq!(offered_load(&sample_task(2, 10, 9), 5), 1);
        assert_eq!(offered_load(&sample_task(2, 10, 10), 5), 0);
        assert_eq!(offered_load(&sample_task(2, 10, 0), 2), 0);
    }

    #[test]
    fn offered_load_sums_to_task_size() {
        let mut t = sample_task(3, 10, 0);
        let mut total = 0;
        for slot in 3..20 {
            let o = offered_load(&t, slot);
            t.sent += o;
            total += o;
        }
        assert_eq!(total, 10);
    }
}
