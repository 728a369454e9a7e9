//! Store-and-forward switch model for one node and one slot.
//!
//! Each task at a node has new input `lambda` and cached backlog `L`. Tasks
//! are served in priority order (random within a priority class). The cache
//! `C`, the forwarding capacity `F` and, per egress port, the planned link
//! rate `R` are handed out greedily in that order. Each task then follows the
//! node rule:
//!
//! * `lambda + L <= C`: nothing is lost, `mu = min(lambda + L, F, R)` and
//!   `L' = lambda + L - mu`.
//! * otherwise `lambda + L - C` packets are dropped first, `mu = min(C, F, R)`
//!   and `L' = C - mu`.
//!
//! Forwarded packets then meet the link as it actually is this slot. If `mu`
//! exceeds the task's share `R'` of the real rate, `mu - R'` packets are lost
//! on the link.

use rand::seq::SliceRandom;
use rand::Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::ids::{NodeId, PortId, TaskId};

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Priority {
    High,
    Medium,
    Low,
}

impl Priority {
    pub const ALL: [Priority; 3] = [Priority::High, Priority::Medium, Priority::Low];

    pub fn as_str(self) -> &'static str {
        match self {
            Priority::High => "high",
            Priority::Medium => "medium",
            Priority::Low => "low",
        }
    }
}

/// Where a task leaves the node, and the rate the switch believes the port has.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Egress {
    pub next_hop: NodeId,
    pub port: PortId,
    pub planned_rate: u64,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct TaskQueueEntry {
    pub task: TaskId,
    pub priority: Priority,
    /// `L`: packets of this task already in the node cache.
    pub cached: u64,
    /// `lambda`: packets of this task arriving this slot.
    pub incoming: u64,
    /// `None` when the task has no usable egress this slot; its packets wait.
    pub egress: Option<Egress>,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Default)]
pub struct SingleForward {
    pub forwarded: u64,
    pub node_loss: u64,
    pub cached_after: u64,
}

/// Full accounting for one task at one node.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct TaskForward {
    pub task: TaskId,
    pub next_hop: Option<NodeId>,
    pub incoming: u64,
    pub cached_before: u64,
    pub allocated_c: u64,
    pub allocated_f: u64,
    pub allocated_r: u64,
    /// `mu`.
    pub forwarded: u64,
    pub node_loss: u64,
    pub cached_after: u64,
    pub delivered: u64,
    pub link_loss: u64,
}

#[derive(Clone, Debug, PartialEq, Eq, Default)]
pub struct NodeForwardResult {
    /// Tasks in service order.
    pub tasks: Vec<TaskForward>,
}

impl NodeForwardResult {
    pub fn forwarded(&self) -> u64 {
        self.tasks.iter().map(|t| t.forwarded).sum()
    }

    pub fn cached(&self) -> u64 {
        self.tasks.iter().map(|t| t.cached_after).sum()
    }

    pub fn node_loss(&self) -> u64 {
        self.tasks.iter().map(|t| t.node_loss).sum()
    }

    pub fn link_loss(&self) -> u64 {
        self.tasks.iter().map(|t| t.link_loss).sum()
    }

    pub fn delivered(&self) -> u64 {
        self.tasks.iter().map(|t| t.delivered).sum()
    }

    /// Per-egress aggregation, ascending by next hop.
    pub fn links(&self) -> Vec<LinkTransmitResult> {
        let mut out: Vec<LinkTransmitResult> = Vec::new();
        for t in &self.tasks {
            let Some(next_hop) = t.next_hop else { continue };
            match out.iter_mut().find(|l| l.next_hop == next_hop) {
                Some(l) => {
                    l.delivered += t.delivered;
                    l.link_loss += t.link_loss;
                }
                None => out.push(LinkTransmitResult {
                    next_hop,
                    delivered: t.delivered,
                    link_loss: t.link_loss,
                }),
            }
        }
        out.sort_by_key(|l| l.next_hop);
        out
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct LinkTransmitResult {
    pub next_hop: NodeId,
    pub delivered: u64,
    pub link_loss: u64,
}

#[derive(Debug, Error, PartialEq, Eq)]
pub enum SwitchError {
    #[error("cached packets {cached} exceed cache capacity {capacity}")]
    InconsistentState { cached: u64, capacity: u64 },
}

/// High before medium before low; a uniformly random order within each class.
pub fn order_tasks<R: Rng + ?Sized>(entries: &[TaskQueueEntry], rng: &mut R) -> Vec<TaskQueueEntry> {
    let mut ordered = Vec::with_capacity(entries.len());
    for p in Priority::ALL {
        let start = ordered.len();
        ordered.extend(entries.iter().filter(|e| e.priority == p).copied());
        ordered[start..].shuffle(rng);
    }
    ordered
}

/// Greedy front-to-back split of `total` among `demands`.
pub fn allocate(demands: &[u64], total: u64) -> Vec<u64> {
    let mut remaining = total;
    demands
        .iter()
        .map(|&d| {
            let a = d.min(remaining);
            remaining -= a;
            a
        })
        .collect()
}

/// The node rule for one task given its allocations.
pub fn forward_single(incoming: u64, cached: u64, c_alloc: u64, f_alloc: u64, r_alloc: u64) -> SingleForward {
    let held = incoming + cached;
    if held <= c_alloc {
        let forwarded = held.min(f_alloc).min(r_alloc);
        SingleForward {
            forwarded,
            node_loss: 0,
            cached_after: held - forwarded,
        }
    } else {
        let node_loss = held - c_alloc;
        let forwarded = c_alloc.min(f_alloc).min(r_alloc);
        SingleForward {
            forwarded,
            node_loss,
            cached_after: held - node_loss - forwarded,
        }
    }
}

/// The link rule: `(delivered, link_loss)` for `forwarded` packets meeting an
/// actual rate share of `actual`.
pub fn transmit_link(forwarded: u64, actual: u64) -> (u64, u64) {
    if forwarded <= actual {
        (forwarded, 0)
    } else {
        (actual, forwarded - actual)
    }
}

/// Orders the tasks with `rng` and runs [`step_node_ordered`].
pub fn step_node<R, A>(
    cache_capacity: u64,
    forward_capacity: u64,
    entries: &[TaskQueueEntry],
    actual_rate: A,
    rng: &mut R,
) -> Result<NodeForwardResult, SwitchError>
where
    R: Rng + ?Sized,
    A: Fn(NodeId) -> u64,
{
    let ordered = order_tasks(entries, rng);
    step_node_ordered(cache_capacity, forward_capacity, &ordered, actual_rate)
}

/// One slot of the multi-task switch with the service order already fixed.
/// `actual_rate(next_hop)` is the real link rate this slot.
pub fn step_node_ordered<A>(
    cache_capacity: u64,
    forward_capacity: u64,
    ordered: &[TaskQueueEntry],
    actual_rate: A,
) -> Result<NodeForwardResult, SwitchError>
where
    A: Fn(NodeId) -> u64,
{
    let cached: u64 = ordered.iter().map(|e| e.cached).sum();
    if cached > cache_capacity {
        return Err(SwitchError::InconsistentState {
            cached,
            capacity: cache_capacity,
        });
    }

    let demands: Vec<u64> = ordered.iter().map(|e| e.incoming + e.cached).collect();
    let c_alloc = allocate(&demands, cache_capacity);
    let f_alloc = allocate(&demands, forward_capacity);

    // per egress: planned rate already promised, actual rate still free
    let mut ports: Vec<(NodeId, u64, u64)> = Vec::new();
    let mut tasks = Vec::with_capacity(ordered.len());
    for (k, e) in ordered.iter().enumerate() {
        let (r_alloc, port) = match e.egress {
            None => (0, None),
            Some(eg) => {
                let idx = match ports.iter().position(|p| p.0 == eg.next_hop) {
                    Some(i) => i,
                    None => {
                        ports.push((eg.next_hop, 0, actual_rate(eg.next_hop)));
                        ports.len() - 1
                    }
                };
                let want = demands[k].min(c_alloc[k]).min(f_alloc[k]);
                let r = want.min(eg.planned_rate.saturating_sub(ports[idx].1));
                ports[idx].1 += r;
                (r, Some(idx))
            }
        };
        let single = forward_single(e.incoming, e.cached, c_alloc[k], f_alloc[k], r_alloc);
        let (delivered, link_loss) = match port {
            Some(idx) => {
                let share = single.forwarded.min(ports[idx].2);
                ports[idx].2 -= share;
                transmit_link(single.forwarded, share)
            }
            None => (0, 0),
        };
        tasks.push(TaskForward {
            task: e.task,
            next_hop: e.egress.map(|eg| eg.next_hop),
            incoming: e.incoming,
            cached_before: e.cached,
            allocated_c: c_alloc[k],
            allocated_f: f_alloc[k],
            allocated_r: r_alloc,
            forwarded: single.forwarded,
            node_loss: single.node_loss,
            cached_after: single.cached_after,
            delivered,
            link_loss,
        });
    }
    Ok(NodeForwardResult { tasks })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng;
    use proptest::prelude::*;

    fn entry(id: u64, p: Priority, cached: u64, incoming: u64, hop: Option<(usize, u64)>) -> TaskQueueEntry {
        TaskQueueEntry {
            task: TaskId(id),
            priority: p,
            cached,
            incoming,
            egress: hop.map(|(n, r)| Egress {
                next_hop: NodeId(n),
                port: PortId(n as u32),
                planned_rate: r,
            }),
        }
    }

    #[test]
    fn priority_classes_come_first() {
        let es = [
            entry(0, Priority::Low, 0, 1, None),
            entry(1, Priority::High, 0, 1, None),
            entry(2, Priority::Medium, 0, 1, None),
        ];
        let got = order_tasks(&es, &mut rng::stream(0, 0, 0, 0));
        let ps: Vec<_> = got.iter().map(|e| e.priority).collect();
        assert_eq!(ps, vec![Priority::High, Priority::Medium, Priority::Low]);
        assert!(order_tasks(&[], &mut rng::stream(0, 0, 0, 0)).is_empty());
    }

    #[test]
    fn same_priority_order_is_uniform() {
        // chi-square over the 6 permutations of 3 tasks, 10 000 draws
        let es: Vec<_> = (0..3).map(|i| entry(i, Priority::Medium, 0, 0, None)).collect();
        let mut counts = std::collections::HashMap::new();
        let mut r = rng::stream(42, 1, 2, 3);
        let draws = 10_000;
        for _ in 0..draws {
            let key: Vec<u64> = order_tasks(&es, &mut r).iter().map(|e| e.task.0).collect();
            *counts.entry(key).or_insert(0u32) += 1;
        }
        assert_eq!(counts.len(), 6);
        let expected = draws as f64 / 6.0;
        let chi2: f64 = counts
            .values()
            .map(|&c| (c as f64 - expected).powi(2) / expected)
            .sum();
        // 5 degrees of freedom, 0.999 quantile
        assert!(chi2 < 20.52, "chi2 = {chi2}");
    }

    #[test]
    fn greedy_allocation() {
        assert_eq!(allocate(&[100, 200], 300), vec![100, 200]);
        assert_eq!(allocate(&[100, 200], 200), vec![100, 100]);
        assert_eq!(allocate(&[5, 7], 0), vec![0, 0]);
        assert_eq!(allocate(&[50], 300), vec![50]);
    }

    #[test]
    fn node_rule_cases() {
        assert_eq!(
            forward_single(5, 3, 10, 6, 4),
            SingleForward { forwarded: 4, node_loss: 0, cached_after: 4 }
        );
        assert_eq!(
            forward_single(200, 100, 200, 300, 300),
            SingleForward { forwarded: 200, node_loss: 100, cached_after: 0 }
        );
        assert_eq!(forward_single(0, 0, 10, 10, 10), SingleForward::default());
        // no cache at all: every arriving packet is dropped
        assert_eq!(
            forward_single(7, 0, 0, 10, 10),
            SingleForward { forwarded: 0, node_loss: 7, cached_after: 0 }
        );
    }

    #[test]
    fn link_rule_cases() {
        assert_eq!(transmit_link(10, 10), (10, 0));
        assert_eq!(transmit_link(10, 0), (0, 10));
        assert_eq!(transmit_link(7, 4), (4, 3));
    }

    #[test]
    fn two_task_worked_example() {
        // F = 300, C = 200; task 1 has 100 cached for node 2, task 2 brings 200 new for node 3
        let ordered = [
            entry(1, Priority::High, 100, 0, Some((2, 1000))),
            entry(2, Priority::High, 0, 200, Some((3, 1000))),
        ];
        let res = step_node_ordered(200, 300, &ordered, |_| 1000).unwrap();
        let (t1, t2) = (res.tasks[0], res.tasks[1]);
        assert_eq!((t1.allocated_f, t2.allocated_f), (100, 200));
        assert_eq!((t1.allocated_c, t2.allocated_c), (100, 100));
        assert_eq!((t1.forwarded, t1.node_loss, t1.cached_after), (100, 0, 0));
        assert_eq!((t2.forwarded, t2.node_loss, t2.cached_after), (100, 100, 0));
    }

    #[test]
    fn single_task_matches_single_rule() {
        let e = entry(0, Priority::Low, 3, 5, Some((1, 4)));
        let res = step_node(10, 6, &[e], |_| 4, &mut rng::stream(0, 0, 0, 0)).unwrap();
        let t = res.tasks[0];
        assert_eq!((t.forwarded, t.node_loss, t.cached_after), (4, 0, 4));
        assert_eq!((t.delivered, t.link_loss), (4, 0));
    }

    #[test]
    fn tasks_share_a_port_in_order() {
        let ordered = [
            entry(0, Priority::High, 0, 6, Some((1, 8))),
            entry(1, Priority::Low, 0, 6, Some((1, 8))),
        ];
        // planned 8 split 6 + 2, actual 5 split 5 + 0
        let res = step_node_ordered(100, 100, &ordered, |_| 5).unwrap();
        assert_eq!(res.tasks[0].allocated_r, 6);
        assert_eq!(res.tasks[1].allocated_r, 2);
        assert_eq!((res.tasks[0].delivered, res.tasks[0].link_loss), (5, 1));
        assert_eq!((res.tasks[1].delivered, res.tasks[1].link_loss), (0, 2));
        assert_eq!(res.tasks[1].cached_after, 4);
        let links = res.links();
        assert_eq!(links.len(), 1);
        assert_eq!((links[0].delivered, links[0].link_loss), (5, 3));
    }

    #[test]
    fn held_task_keeps_its_packets() {
        let e = entry(0, Priority::High, 2, 3, None);
        let res = step_node_ordered(10, 10, &[e], |_| 99).unwrap();
        let t = res.tasks[0];
        assert_eq!((t.forwarded, t.node_loss, t.cached_after), (0, 0, 5));
        assert!(res.links().is_empty());
    }

    #[test]
    fn overfull_cache_is_an_error() {
        let e = entry(0, Priority::High, 11, 0, None);
        assert_eq!(
            step_node_ordered(10, 10, &[e], |_| 0),
            Err(SwitchError::InconsistentState { cached: 11, capacity: 10 })
        );
    }

    fn arb_entries() -> impl Strategy<Value = Vec<TaskQueueEntry>> {
        prop::collection::vec(
            (0usize..3, 0u64..30, 0u64..30, prop::option::of((0usize..3, 0u64..40))),
            0..6,
        )
        .prop_map(|v| {
            v.into_iter()
                .enumerate()
                .map(|(i, (p, l, lam, hop))| entry(i as u64, Priority::ALL[p], l, lam, hop))
                .collect()
        })
    }

    fn fit_cache(mut es: Vec<TaskQueueEntry>, c: u64) -> Vec<TaskQueueEntry> {
        let mut room = c;
        for e in &mut es {
            e.cached = e.cached.min(room);
            room -= e.cached;
        }
        es
    }

    proptest! {
        #[test]
        fn node_invariants(es in arb_entries(), c in 0u64..80, f in 0u64..80, rates in prop::array::uniform3(0u64..40), seed in any::<u64>()) {
            let es = fit_cache(es, c);
            let res = step_node(c, f, &es, |n| rates[n.0], &mut rng::stream(seed, 0, 0, 0)).unwrap();
            let mut sum_c = 0;
            let mut sum_f = 0;
            for t in &res.tasks {
                prop_assert_eq!(t.incoming + t.cached_before, t.forwarded + t.node_loss + t.cached_after);
                prop_assert!(t.forwarded <= t.allocated_f && t.forwarded <= t.allocated_r);
                prop_assert_eq!(t.delivered + t.link_loss, t.forwarded);
                if t.node_loss > 0 {
                    prop_assert!(t.incoming + t.cached_before > t.allocated_c);
                }
                sum_c += t.allocated_c;
                sum_f += t.allocated_f;
            }
            prop_assert!(sum_c <= c && sum_f <= f);
            prop_assert!(res.forwarded() + res.cached() <= c);
            for l in res.links() {
                prop_assert!(l.delivered <= rates[l.next_hop.0]);
            }
        }

        #[test]
        fn more_cache_never_more_loss(es in arb_entries(), c in 0u64..60, extra in 0u64..30, f in 0u64..80, seed in any::<u64>()) {
            let es = fit_cache(es, c);
            let ordered = order_tasks(&es, &mut rng::stream(seed, 0, 0, 0));
            let small = step_node_ordered(c, f, &ordered, |_| 20).unwrap();
            let big = step_node_ordered(c + extra, f, &ordered, |_| 20).unwrap();
            prop_assert!(big.node_loss() <= small.node_loss());
        }

        #[test]
        fn more_forwarding_never_less_output(es in arb_entries(), c in 0u64..60, f in 0u64..60, extra in 0u64..30, seed in any::<u64>()) {
            let es = fit_cache(es, c);
            let ordered = order_tasks(&es, &mut rng::stream(seed, 0, 0, 0));
            let slow = step_node_ordered(c, f, &ordered, |_| 20).unwrap();
            let fast = step_node_ordered(c, f + extra, &ordered, |_| 20).unwrap();
            prop_assert!(fast.forwarded() >= slow.forwarded());
        }
    }
}
