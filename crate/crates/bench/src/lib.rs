//! Fixtures shared by the benchmarks.

use rand::Rng;

use iovmesh::rng::{stream, ORDERING, PLACEMENT};
use iovmesh::scenario::{initial_placement, positions_at};
use iovmesh::switch::Egress;
use iovmesh::{NodeId, NodeState, PortId, Position, Priority, SimConfig, TaskId, TaskQueueEntry};

/// A node queue with `n_tasks` tasks spread over `n_ports` egress ports.
/// Backlogs sum to at most `cache`.
pub fn node_queue(n_tasks: usize, n_ports: u32, cache: u64, seed: u64) -> Vec<TaskQueueEntry> {
    let mut rng = stream(seed, ORDERING, n_tasks as u64, 0);
    let mut room = cache;
    (0..n_tasks)
        .map(|i| {
            let cached = rng.gen_range(0..=room.min(cache / n_tasks as u64 + 1));
            room -= cached;
            let port = rng.gen_range(0..n_ports);
            TaskQueueEntry {
                task: TaskId(i as u64),
                priority: Priority::ALL[rng.gen_range(0..3)],
                cached,
                incoming: rng.gen_range(0..40),
                egress: Some(Egress {
                    next_hop: NodeId(port as usize + 1),
                    port: PortId(port),
                    planned_rate: rng.gen_range(10..200),
                }),
            }
        })
        .collect()
}

/// Placed nodes and their positions at `slot` for the given config.
pub fn placement(config: &SimConfig, seed: u64, slot: usize) -> (Vec<NodeState>, Vec<Position>) {
    let nodes = initial_placement(config, &mut stream(seed, PLACEMENT, 0, 0));
    let positions = positions_at(config, &nodes, slot).expect("slot inside horizon");
    (nodes, positions)
}
