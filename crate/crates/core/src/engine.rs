//! The slot loop.
//!
//! Each slot: move the vehicles, rebuild the topology, start new tasks, feed
//! last slot's link deliveries and this slot's source traffic into the nodes,
//! run every node's switch, and hand what crossed a link to the next hop for
//! the following slot. Packets reaching their destination count at once.

use std::collections::BTreeMap;

use rayon::prelude::*;
use serde::Serialize;

use crate::channel::{build_topology, ChannelParams, TopologySnapshot};
use crate::config::{BrokenLinkPolicy, SimConfig};
use crate::error::{Result, SimError};
use crate::ids::{NodeId, TaskId};
use crate::metrics::{self, LinkFlow, MetricsSeries, NodeFlow, SlotMetrics, TaskTally};
use crate::rng;
use crate::routing::{NextHop, PortRoutingTable, RoutingGraph};
use crate::scenario::{initial_placement, positions_with_plan, LightPlan, NodeState};
use crate::switch::{step_node, Egress, Priority, TaskQueueEntry};
use crate::traffic::{generate_tasks, offered_load, Task, UnroutableTask};

#[derive(Clone, Debug, Default)]
pub struct RunOptions {
    /// Keep a per-task, per-node record of every forwarding step.
    pub flow_log: bool,
    /// Order in which nodes are stepped within a slot. Must be a permutation
    /// of all node ids. Ascending when `None`.
    pub node_order: Option<Vec<NodeId>>,
}

/// One task at one node in one slot.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct FlowLogRecord {
    pub slot: usize,
    pub node: NodeId,
    pub task: TaskId,
    /// λ.
    pub incoming: u64,
    pub cached_before: u64,
    /// μ.
    pub forwarded: u64,
    pub node_loss: u64,
    /// L′.
    pub cached_after: u64,
    pub next_hop: Option<NodeId>,
    pub delivered: u64,
    pub link_loss: u64,
}

/// Final state of one task.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct TaskRecord {
    pub id: TaskId,
    pub source: NodeId,
    pub destination: NodeId,
    pub priority: Priority,
    pub start_slot: usize,
    pub routed: bool,
    pub hops: usize,
    pub qos_rate: u64,
    pub total_packets: u64,
    pub sent: u64,
    pub delivered: u64,
    pub node_lost: u64,
    pub link_lost: u64,
    pub in_network: u64,
    /// Slots from the first slot to the one in which the last packet was
    /// delivered or lost.
    pub slots_to_completion: Option<usize>,
}

impl TaskRecord {
    fn routed(t: &Task) -> Self {
        TaskRecord {
            id: t.id,
            source: t.source,
            destination: t.destination,
            priority: t.priority,
            start_slot: t.start_slot,
            routed: true,
            hops: t.route.hops(),
            qos_rate: t.qos_rate,
            total_packets: t.total_packets,
            sent: t.sent,
            delivered: t.delivered,
            node_lost: t.node_lost,
            link_lost: t.link_lost,
            in_network: t.in_network(),
            slots_to_completion: t.finished_slot.map(|s| s - t.start_slot + 1),
        }
    }

    fn unroutable(t: &UnroutableTask) -> Self {
        TaskRecord {
            id: t.id,
            source: t.source,
            destination: t.destination,
            priority: t.priority,
            start_slot: t.start_slot,
            routed: false,
            hops: 0,
            qos_rate: 0,
            total_packets: t.total_packets,
            sent: 0,
            delivered: 0,
            node_lost: 0,
            link_lost: 0,
            in_network: 0,
            slots_to_completion: None,
        }
    }
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct RunOutput {
    pub metrics: MetricsSeries,
    /// Every generated task, by id.
    pub tasks: Vec<TaskRecord>,
    pub flow_log: Vec<FlowLogRecord>,
}

#[derive(Clone, Copy, Debug, Default)]
struct Totals {
    offered: u64,
    delivered: u64,
    node_loss: u64,
    link_loss: u64,
}

/// Simulation state between slots.
pub struct Simulation {
    config: SimConfig,
    seed: u64,
    plan: LightPlan,
    params: ChannelParams,
    nodes: Vec<NodeState>,
    order: Vec<NodeId>,
    tasks: Vec<Task>,
    unroutable: Vec<UnroutableTask>,
    next_task_id: u64,
    /// Per node: task index → packets cached.
    caches: Vec<BTreeMap<usize, u64>>,
    /// Per node: task index → packets arriving next slot.
    pending: Vec<BTreeMap<usize, u64>>,
    tables: Option<(Vec<PortRoutingTable>, TopologySnapshot)>,
    totals: Totals,
    next_slot: usize,
    flow_log: Option<Vec<FlowLogRecord>>,
}

impl Simulation {
    pub fn new(config: &SimConfig, seed: u64, options: &RunOptions) -> Result<Self> {
        config.validate()?;
        let nodes = initial_placement(config, &mut rng::stream(seed, rng::PLACEMENT, 0, 0));
        let n = nodes.len();
        let order = match &options.node_order {
            None => (0..n).map(NodeId).collect(),
            Some(order) => {
                let mut sorted = order.clone();
                sorted.sort();
                if sorted != (0..n).map(NodeId).collect::<Vec<_>>() {
                    return Err(SimError::Invariant {
                        slot: 0,
                        node: NodeId(0),
                        detail: format!("node order is not a permutation of 0..{n}"),
                    });
                }
                order.clone()
            }
        };
        Ok(Simulation {
            plan: LightPlan::from_config(config),
            params: ChannelParams::from_config(config),
            config: config.clone(),
            seed,
            nodes,
            order,
            tasks: Vec::new(),
            unroutable: Vec::new(),
            next_task_id: 0,
            caches: vec![BTreeMap::new(); n],
            pending: vec![BTreeMap::new(); n],
            tables: None,
            totals: Totals::default(),
            next_slot: 0,
            flow_log: options.flow_log.then(Vec::new),
        })
    }

    pub fn nodes(&self) -> &[NodeState] {
        &self.nodes
    }

    pub fn tasks(&self) -> &[Task] {
        &self.tasks
    }

    /// Packets cached at `node`.
    pub fn cached_at(&self, node: NodeId) -> u64 {
        self.caches[node.0].values().sum()
    }

    fn egress_for(&self, node: NodeId, task: &Task, snapshot: &TopologySnapshot) -> Option<Egress> {
        let planned = match &self.tables {
            None => {
                let (k, next) = task.route.next_after(node)?;
                Egress {
                    next_hop: next,
                    port: task.route.ports[k],
                    planned_rate: task.hop_rates[k],
                }
            }
            Some((tables, built_on)) => match tables[node.0].next_hop(task.destination) {
                NextHop::Forward(e) => Egress {
                    next_hop: e.next_hop,
                    port: e.port,
                    planned_rate: built_on.rate(node, e.next_hop),
                },
                NextHop::Deliver | NextHop::NoRoute => return None,
            },
        };
        let broken = !snapshot.exists(node, planned.next_hop);
        if broken && self.config.switch.broken_link == BrokenLinkPolicy::Hold {
            return None;
        }
        Some(planned)
    }

    /// Runs one slot and returns its metrics row.
    pub fn step(&mut self) -> Result<SlotMetrics> {
        let slot = self.next_slot;
        let n_slots = self.config.scenario.n_slots;
        if slot >= n_slots {
            return Err(SimError::SlotOutOfRange { slot, n_slots });
        }
        let sc = &self.config.scenario;
        let positions = positions_with_plan(&self.config, &self.plan, &self.nodes, slot);
        let snapshot = build_topology(slot, &self.nodes, &positions, &self.params, sc.slot_length_s, sc.packet_size_bits);
        let routing = &self.config.routing;
        let graph = RoutingGraph::from_snapshot(&snapshot, routing.weight, routing.port_cap);
        if let Some(every) = routing.refresh_every_slots {
            if slot.is_multiple_of(every) {
                self.tables = Some((graph.build_tables(slot), snapshot.clone()));
            }
        }

        let mut traffic_rng = rng::stream(self.seed, rng::TRAFFIC, slot as u64, 0);
        let generated = generate_tasks(
            slot,
            &self.config,
            &self.nodes,
            &positions,
            &snapshot,
            &graph,
            &mut self.next_task_id,
            &mut traffic_rng,
        );
        self.tasks.extend(generated.routed);
        self.unroutable.extend(generated.unroutable);

        let n = self.nodes.len();
        let mut incoming = std::mem::replace(&mut self.pending, vec![BTreeMap::new(); n]);
        for (idx, task) in self.tasks.iter_mut().enumerate() {
            let offer = offered_load(task, slot);
            if offer > 0 {
                task.sent += offer;
                self.totals.offered += offer;
                *incoming[task.source.0].entry(idx).or_default() += offer;
            }
        }

        let mut node_flows = vec![NodeFlow::default(); n];
        let mut psi: BTreeMap<(NodeId, NodeId), u64> = BTreeMap::new();
        let (mut slot_lost, mut slot_delivered) = (0u64, 0u64);
        let order = self.order.clone();
        for &node in &order {
            let state = &self.nodes[node.0];
            let mut keys: Vec<usize> = self.caches[node.0].keys().copied().collect();
            keys.extend(incoming[node.0].keys().copied());
            keys.sort_unstable();
            keys.dedup();
            let entries: Vec<TaskQueueEntry> = keys
                .iter()
                .map(|&idx| {
                    let task = &self.tasks[idx];
                    TaskQueueEntry {
                        task: TaskId(idx as u64),
                        priority: task.priority,
                        cached: self.caches[node.0].get(&idx).copied().unwrap_or(0),
                        incoming: incoming[node.0].get(&idx).copied().unwrap_or(0),
                        egress: self.egress_for(node, task, &snapshot),
                    }
                })
                .collect();
            let mut order_rng = rng::stream(self.seed, rng::ORDERING, node.0 as u64, slot as u64);
            let result = step_node(
                state.cache_capacity,
                state.forward_capacity,
                &entries,
                |next| snapshot.rate(node, next),
                &mut order_rng,
            )
            .map_err(|e| SimError::Invariant { slot, node, detail: e.to_string() })?;

            let flow = &mut node_flows[node.0];
            flow.cache_capacity = state.cache_capacity;
            flow.forwarded = result.forwarded();
            flow.cached = result.cached();
            if flow.cached > flow.cache_capacity {
                return Err(SimError::Invariant {
                    slot,
                    node,
                    detail: format!("cache holds {} of {}", flow.cached, flow.cache_capacity),
                });
            }

            for tf in &result.tasks {
                let idx = tf.task.0 as usize;
                let task = &mut self.tasks[idx];
                if tf.cached_after > 0 {
                    self.caches[node.0].insert(idx, tf.cached_after);
                } else {
                    self.caches[node.0].remove(&idx);
                }
                task.node_lost += tf.node_loss;
                task.link_lost += tf.link_loss;
                slot_lost += tf.node_loss + tf.link_loss;
                slot_delivered += tf.delivered;
                self.totals.node_loss += tf.node_loss;
                self.totals.link_loss += tf.link_loss;
                if let Some(next) = tf.next_hop {
                    if tf.forwarded > 0 {
                        *psi.entry((node, next)).or_default() += tf.delivered;
                    }
                    if tf.delivered > 0 {
                        if next == task.destination {
                            task.delivered += tf.delivered;
                            self.totals.delivered += tf.delivered;
                        } else {
                            *self.pending[next.0].entry(idx).or_default() += tf.delivered;
                        }
                    }
                }
                if let Some(log) = self.flow_log.as_mut() {
                    log.push(FlowLogRecord {
                        slot,
                        node,
                        task: task.id,
                        incoming: tf.incoming,
                        cached_before: tf.cached_before,
                        forwarded: tf.forwarded,
                        node_loss: tf.node_loss,
                        cached_after: tf.cached_after,
                        next_hop: tf.next_hop,
                        delivered: tf.delivered,
                        link_loss: tf.link_loss,
                    });
                }
            }
        }

        for task in &mut self.tasks {
            if task.finished_slot.is_none() && task.is_finished() {
                task.finished_slot = Some(slot);
            }
        }

        let cached: u64 = self.caches.iter().flat_map(|c| c.values()).sum();
        let in_flight: u64 = self.pending.iter().flat_map(|c| c.values()).sum();
        let t = self.totals;
        if t.offered != t.delivered + t.node_loss + t.link_loss + cached + in_flight {
            return Err(SimError::Invariant {
                slot,
                node: NodeId(0),
                detail: format!(
                    "conservation: offered {} != delivered {} + node loss {} + link loss {} + cached {} + in flight {}",
                    t.offered, t.delivered, t.node_loss, t.link_loss, cached, in_flight
                ),
            });
        }

        let tallies: Vec<TaskTally> = self
            .tasks
            .iter()
            .map(|t| TaskTally {
                lost: t.lost(),
                sent: t.sent,
                delivered: t.delivered,
                total: t.total_packets,
            })
            .chain(self.unroutable.iter().map(|u| TaskTally {
                total: u.total_packets,
                ..TaskTally::default()
            }))
            .collect();
        let links: Vec<LinkFlow> = snapshot
            .links()
            .map(|(from, to, planned)| LinkFlow {
                from,
                to,
                delivered: psi.get(&(from, to)).copied().unwrap_or(0),
                planned,
            })
            .collect();

        self.next_slot += 1;
        Ok(SlotMetrics {
            slot,
            loss_rate: metrics::packet_loss_rate(&tallies),
            arrive_rate: metrics::task_arrival_rate(&tallies),
            node_load: metrics::node_load_rate(&node_flows),
            link_load: metrics::link_load_rate(&links),
            sumflow: metrics::total_network_traffic(&node_flows) as f64,
            loss_rate_slot: (slot_lost + slot_delivered > 0)
                .then(|| slot_lost as f64 / (slot_lost + slot_delivered) as f64),
            offered: t.offered as f64,
            delivered: t.delivered as f64,
            node_loss: t.node_loss as f64,
            link_loss: t.link_loss as f64,
            in_network: (cached + in_flight) as f64,
            tasks_generated: tallies.len() as f64,
            tasks_unroutable: self.unroutable.len() as f64,
            links: links.len() as f64,
        })
    }

    pub fn finish(self, metrics: MetricsSeries) -> RunOutput {
        let mut tasks: Vec<TaskRecord> = self
            .tasks
            .iter()
            .map(TaskRecord::routed)
            .chain(self.unroutable.iter().map(TaskRecord::unroutable))
            .collect();
        tasks.sort_by_key(|t| t.id);
        RunOutput {
            metrics,
            tasks,
            flow_log: self.flow_log.unwrap_or_default(),
        }
    }
}

pub fn run(config: &SimConfig, seed: u64) -> Result<RunOutput> {
    run_with(config, seed, &RunOptions::default())
}

pub fn run_with(config: &SimConfig, seed: u64, options: &RunOptions) -> Result<RunOutput> {
    if config.scenario.n_slots == 0 {
        return Ok(RunOutput::default());
    }
    let mut sim = Simulation::new(config, seed, options)?;
    let mut rows = Vec::with_capacity(config.scenario.n_slots);
    for _ in 0..config.scenario.n_slots {
        rows.push(sim.step()?);
    }
    Ok(sim.finish(MetricsSeries { rows }))
}

/// Independent runs of one config, in parallel, returned in seed order.
pub fn run_seeds(config: &SimConfig, seeds: &[u64]) -> Result<Vec<RunOutput>> {
    seeds.par_iter().map(|&s| run(config, s)).collect()
}

/// One point of a parameter sweep.
#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct GridPoint {
    pub qos_mbps: f64,
    pub cache_scale: f64,
    pub n_vehicles: usize,
}

impl GridPoint {
    pub fn of(config: &SimConfig) -> Self {
        GridPoint {
            qos_mbps: config.traffic.qos_mbps,
            cache_scale: config.nodes.cache_scale,
            n_vehicles: config.scenario.n_vehicles,
        }
    }

    pub fn apply(&self, base: &SimConfig) -> SimConfig {
        let mut c = base.clone();
        c.traffic.qos_mbps = self.qos_mbps;
        c.nodes.cache_scale = self.cache_scale;
        c.scenario.n_vehicles = self.n_vehicles;
        c
    }

    /// File-name friendly label, e.g. `qos20_cache1_veh20`.
    pub fn label(&self) -> String {
        format!("qos{}_cache{}_veh{}", self.qos_mbps, self.cache_scale, self.n_vehicles)
    }
}

impl std::fmt::Display for GridPoint {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(
            f,
            "qos={} Mbps, cache scale={}, vehicles={}",
            self.qos_mbps, self.cache_scale, self.n_vehicles
        )
    }
}

/// Values to vary. An empty axis keeps the base config's value.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct ParamGrid {
    pub qos_mbps: Vec<f64>,
    pub cache_scale: Vec<f64>,
    pub n_vehicles: Vec<usize>,
}

impl ParamGrid {
    /// Cartesian product, QoS varying slowest.
    pub fn points(&self, base: &SimConfig) -> Vec<GridPoint> {
        let or = |v: &Vec<f64>, d: f64| if v.is_empty() { vec![d] } else { v.clone() };
        let vehicles = if self.n_vehicles.is_empty() {
            vec![base.scenario.n_vehicles]
        } else {
            self.n_vehicles.clone()
        };
        let mut out = Vec::new();
        for &q in &or(&self.qos_mbps, base.traffic.qos_mbps) {
            for &c in &or(&self.cache_scale, base.nodes.cache_scale) {
                for &v in &vehicles {
                    out.push(GridPoint { qos_mbps: q, cache_scale: c, n_vehicles: v });
                }
            }
        }
        out
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct SweepPoint {
    pub point: GridPoint,
    pub seeds: Vec<u64>,
    pub mean: MetricsSeries,
    pub per_seed: Vec<MetricsSeries>,
}

/// Runs every (point, seed) pair in parallel and averages each point over its
/// seeds.
pub fn sweep(base: &SimConfig, points: &[GridPoint], seeds: &[u64]) -> Result<Vec<SweepPoint>> {
    if points.is_empty() || seeds.is_empty() {
        return Err(SimError::EmptyGrid);
    }
    let configs: Vec<SimConfig> = points.iter().map(|p| p.apply(base)).collect();
    for (p, c) in points.iter().zip(&configs) {
        c.validate().map_err(|e| SimError::GridPoint {
            point: p.to_string(),
            source: Box::new(e.into()),
        })?;
    }
    let jobs: Vec<(usize, u64)> = (0..points.len())
        .flat_map(|i| seeds.iter().map(move |&s| (i, s)))
        .collect();
    let results: Vec<MetricsSeries> = jobs
        .par_iter()
        .map(|&(i, s)| {
            run(&configs[i], s).map(|o| o.metrics).map_err(|e| SimError::GridPoint {
                point: points[i].to_string(),
                source: Box::new(e),
            })
        })
        .collect::<Result<_>>()?;
    Ok(points
        .iter()
        .zip(results.chunks(seeds.len()))
        .map(|(&point, per_seed)| SweepPoint {
            point,
            seeds: seeds.to_vec(),
            mean: MetricsSeries::mean(per_seed),
            per_seed: per_seed.to_vec(),
        })
        .collect())
}
