//! Independent reference implementations used by the integration tests.

#![allow(dead_code)]

use std::collections::BTreeMap;

use iovmesh::ids::NodeId;
use iovmesh::switch::TaskQueueEntry;

/// Per-task outcome from the packet-level oracle.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub struct OracleTask {
    pub allocated_c: u64,
    pub allocated_f: u64,
    pub forwarded: u64,
    pub node_loss: u64,
    pub cached_after: u64,
    pub delivered: u64,
    pub link_loss: u64,
}

/// Moves packets one at a time through a node whose service order is
/// already fixed. Cache and forwarding tokens are claimed by every packet a
/// task holds; link tokens are claimed by each packet actually sent.
pub fn packet_oracle(
    cache: u64,
    forward: u64,
    ordered: &[TaskQueueEntry],
    actual: &BTreeMap<NodeId, u64>,
) -> Vec<OracleTask> {
    let mut c_tokens = cache;
    let mut f_tokens = forward;
    let mut planned_used: BTreeMap<NodeId, u64> = BTreeMap::new();
    let mut actual_left = actual.clone();
    let mut out = Vec::new();
    for e in ordered {
        let mut t = OracleTask::default();
        let held = e.incoming + e.cached;
        for _ in 0..held {
            if c_tokens > 0 {
                c_tokens -= 1;
                t.allocated_c += 1;
            }
            if f_tokens > 0 {
                f_tokens -= 1;
                t.allocated_f += 1;
            }
        }
        let mut kept = held;
        while kept > t.allocated_c {
            kept -= 1;
            t.node_loss += 1;
        }
        if let Some(eg) = e.egress {
            loop {
                let used = planned_used.entry(eg.next_hop).or_insert(0);
                if kept == 0 || t.forwarded == t.allocated_f || *used >= eg.planned_rate {
                    break;
                }
                *used += 1;
                kept -= 1;
                t.forwarded += 1;
                let left = actual_left.entry(eg.next_hop).or_insert(0);
                if *left > 0 {
                    *left -= 1;
                    t.delivered += 1;
                } else {
                    t.link_loss += 1;
                }
            }
        }
        t.cached_after = kept;
        out.push(t);
    }
    out
}

/// All-pairs shortest path weights; `None` where unreachable.
pub fn floyd_warshall(n: usize, edges: &[(usize, usize, f64)]) -> Vec<Vec<Option<f64>>> {
    let mut d = vec![vec![None; n]; n];
    for (i, row) in d.iter_mut().enumerate() {
        row[i] = Some(0.0);
    }
    for &(u, v, w) in edges {
        if d[u][v].is_none_or(|x| w < x) {
            d[u][v] = Some(w);
        }
    }
    for k in 0..n {
        for i in 0..n {
            for j in 0..n {
                if let (Some(a), Some(b)) = (d[i][k], d[k][j]) {
                    if d[i][j].is_none_or(|x| a + b < x) {
                        d[i][j] = Some(a + b);
                    }
                }
            }
        }
    }
    d
}
