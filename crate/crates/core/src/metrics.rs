//! The five network indicators and their per-slot time series.

use serde::Serialize;

use crate::ids::NodeId;

/// One node's state after the forwarding step.
#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize)]
pub struct NodeFlow {
    /// Σμ: packets forwarded this slot.
    pub forwarded: u64,
    /// ΣL′: packets cached after the update.
    pub cached: u64,
    /// C.
    pub cache_capacity: u64,
}

/// One existing directed link.
#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct LinkFlow {
    pub from: NodeId,
    pub to: NodeId,
    /// Ψ: packets that crossed the link this slot.
    pub delivered: u64,
    /// R: snapshot rate of the link.
    pub planned: u64,
}

/// Cumulative per-task counters.
#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize)]
pub struct TaskTally {
    pub lost: u64,
    /// φ.
    pub sent: u64,
    /// γ.
    pub delivered: u64,
    /// ρ.
    pub total: u64,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize)]
pub struct SlotFlowRecord {
    pub slot: usize,
    pub nodes: Vec<NodeFlow>,
    pub links: Vec<LinkFlow>,
    pub tasks: Vec<TaskTally>,
}

impl SlotFlowRecord {
    pub fn metrics(&self) -> (Option<f64>, Option<f64>, f64, Option<f64>, u64) {
        (
            packet_loss_rate(&self.tasks),
            task_arrival_rate(&self.tasks),
            node_load_rate(&self.nodes),
            link_load_rate(&self.links),
            total_network_traffic(&self.nodes),
        )
    }
}

/// Mean of loss/φ over tasks that have sent something.
pub fn packet_loss_rate(tasks: &[TaskTally]) -> Option<f64> {
    let active: Vec<_> = tasks.iter().filter(|t| t.sent > 0).collect();
    if active.is_empty() {
        return None;
    }
    let sum: f64 = active.iter().map(|t| t.lost as f64 / t.sent as f64).sum();
    Some(sum / active.len() as f64)
}

/// Mean of γ/ρ over all generated tasks.
pub fn task_arrival_rate(tasks: &[TaskTally]) -> Option<f64> {
    if tasks.is_empty() {
        return None;
    }
    let sum: f64 = tasks
        .iter()
        .map(|t| if t.total == 0 { 0.0 } else { t.delivered as f64 / t.total as f64 })
        .sum();
    Some(sum / tasks.len() as f64)
}

/// Mean of (μ + L′)/C over all nodes. Zero for an empty network.
pub fn node_load_rate(nodes: &[NodeFlow]) -> f64 {
    if nodes.is_empty() {
        return 0.0;
    }
    let sum: f64 = nodes
        .iter()
        .map(|n| {
            if n.cache_capacity == 0 {
                0.0
            } else {
                (n.forwarded + n.cached) as f64 / n.cache_capacity as f64
            }
        })
        .sum();
    sum / nodes.len() as f64
}

/// Mean of Ψ/R over links with R > 0.
pub fn link_load_rate(links: &[LinkFlow]) -> Option<f64> {
    let live: Vec<_> = links.iter().filter(|l| l.planned > 0).collect();
    if live.is_empty() {
        return None;
    }
    let sum: f64 = live.iter().map(|l| l.delivered as f64 / l.planned as f64).sum();
    Some(sum / live.len() as f64)
}

/// Σ(μ + L′) over all nodes.
pub fn total_network_traffic(nodes: &[NodeFlow]) -> u64 {
    nodes.iter().map(|n| n.forwarded + n.cached).sum()
}

/// One row of the output series. Counters are cumulative unless noted, and
/// become fractional once several seeds are averaged.
#[derive(Clone, Debug, Default, PartialEq, Serialize)]
pub struct SlotMetrics {
    pub slot: usize,
    pub loss_rate: Option<f64>,
    pub arrive_rate: Option<f64>,
    pub node_load: f64,
    pub link_load: Option<f64>,
    pub sumflow: f64,
    /// Lost over lost plus delivered, counting only this slot's events.
    pub loss_rate_slot: Option<f64>,
    pub offered: f64,
    pub delivered: f64,
    pub node_loss: f64,
    pub link_loss: f64,
    /// Packets cached or in flight at the end of the slot.
    pub in_network: f64,
    pub tasks_generated: f64,
    pub tasks_unroutable: f64,
    /// Existing directed links this slot.
    pub links: f64,
}

pub const CSV_HEADER: &str = "slot,loss_rate,arrive_rate,node_load,link_load,sumflow,loss_rate_slot,\
offered,delivered,node_loss,link_loss,in_network,tasks_generated,tasks_unroutable,links";

fn opt(v: Option<f64>) -> String {
    v.map(|x| x.to_string()).unwrap_or_default()
}

impl SlotMetrics {
    pub fn csv_row(&self) -> String {
        format!(
            "{},{},{},{},{},{},{},{},{},{},{},{},{},{},{}",
            self.slot,
            opt(self.loss_rate),
            opt(self.arrive_rate),
            self.node_load,
            opt(self.link_load),
            self.sumflow,
            opt(self.loss_rate_slot),
            self.offered,
            self.delivered,
            self.node_loss,
            self.link_loss,
            self.in_network,
            self.tasks_generated,
            self.tasks_unroutable,
            self.links,
        )
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize)]
pub struct MetricsSeries {
    pub rows: Vec<SlotMetrics>,
}

fn mean_opt(values: impl Iterator<Item = Option<f64>>) -> Option<f64> {
    let present: Vec<f64> = values.flatten().collect();
    if present.is_empty() {
        None
    } else {
        Some(present.iter().sum::<f64>() / present.len() as f64)
    }
}

impl MetricsSeries {
    pub fn len(&self) -> usize {
        self.rows.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rows.is_empty()
    }

    pub fn last(&self) -> Option<&SlotMetrics> {
        self.rows.last()
    }

    pub fn to_csv(&self) -> String {
        let mut out = String::with_capacity(64 * (self.rows.len() + 1));
        out.push_str(CSV_HEADER);
        out.push('\n');
        for r in &self.rows {
            out.push_str(&r.csv_row());
            out.push('\n');
        }
        out
    }

    /// Mean of `field` over the last `k` slots, skipping absent values.
    pub fn tail_mean(&self, k: usize, field: impl Fn(&SlotMetrics) -> Option<f64>) -> Option<f64> {
        let start = self.rows.len().saturating_sub(k);
        mean_opt(self.rows[start..].iter().map(field))
    }

    /// Pointwise mean of equally long series. Absent values are averaged over
    /// the seeds that have them.
    pub fn mean(series: &[MetricsSeries]) -> MetricsSeries {
        let Some(first) = series.first() else {
            return MetricsSeries::default();
        };
        let n = series.len() as f64;
        let rows = (0..first.rows.len())
            .map(|i| {
                let col = |f: fn(&SlotMetrics) -> f64| series.iter().map(|s| f(&s.rows[i])).sum::<f64>() / n;
                let col_opt = |f: fn(&SlotMetrics) -> Option<f64>| mean_opt(series.iter().map(|s| f(&s.rows[i])));
                SlotMetrics {
                    slot: first.rows[i].slot,
                    loss_rate: col_opt(|r| r.loss_rate),
                    arrive_rate: col_opt(|r| r.arrive_rate),
                    node_load: col(|r| r.node_load),
                    link_load: col_opt(|r| r.link_load),
                    sumflow: col(|r| r.sumflow),
                    loss_rate_slot: col_opt(|r| r.loss_rate_slot),
                    offered: col(|r| r.offered),
                    delivered: col(|r| r.delivered),
                    node_loss: col(|r| r.node_loss),
                    link_loss: col(|r| r.link_loss),
                    in_network: col(|r| r.in_network),
                    tasks_generated: col(|r| r.tasks_generated),
                    tasks_unroutable: col(|r| r.tasks_unroutable),
                    links: col(|r| r.links),
                }
            })
            .collect();
        MetricsSeries { rows }
    }
}
