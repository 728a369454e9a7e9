//! Road geometry, traffic lights and vehicle kinematics.
//!
//! The area is a 2x2 block grid crossed by one horizontal and one vertical
//! road that meet at the centre. Coordinates run from `(0, 0)` in the lower
//! left corner to `(area_width_m, area_height_m)`. Vehicles move in straight
//! lines at constant speed while their road has a green light and stand still
//! otherwise.

use std::ops::Range;

use rand::Rng;

use crate::config::{LightEntry, Phase, SimConfig};
use crate::error::{Result, SimError};
use crate::ids::NodeId;

pub use crate::config::load_scenario;

#[derive(Clone, Copy, Debug, PartialEq, Default)]
pub struct Position {
    pub x: f64,
    pub y: f64,
    pub z: f64,
}

impl Position {
    pub const fn new(x: f64, y: f64, z: f64) -> Self {
        Position { x, y, z }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum NodeKind {
    Vehicle,
    Rsu,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum Axis {
    Horizontal,
    Vertical,
    None,
}

#[derive(Clone, Debug, PartialEq)]
pub struct NodeState {
    pub id: NodeId,
    pub kind: NodeKind,
    /// Position at slot 0.
    pub position: Position,
    /// Metres per second while moving.
    pub velocity: (f64, f64),
    pub axis: Axis,
    pub max_range: f64,
    /// Watts.
    pub tx_power: f64,
    /// Packets.
    pub cache_capacity: u64,
    /// Packets per slot.
    pub forward_capacity: u64,
}

impl NodeState {
    pub fn is_vehicle(&self) -> bool {
        self.kind == NodeKind::Vehicle
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct LightPhase {
    pub phase: Phase,
    pub slots: Range<usize>,
}

impl LightPhase {
    pub fn is_green(&self, axis: Axis) -> bool {
        matches!(
            (self.phase, axis),
            (Phase::HorizontalGreen, Axis::Horizontal) | (Phase::VerticalGreen, Axis::Vertical)
        )
    }
}

/// The resolved light plan as contiguous phases covering `[0, n_slots)`.
#[derive(Clone, Debug)]
pub struct LightPlan {
    phases: Vec<LightPhase>,
    n_slots: usize,
}

impl LightPlan {
    pub fn new(entries: &[LightEntry], n_slots: usize) -> Self {
        let phases = entries
            .iter()
            .enumerate()
            .map(|(i, e)| {
                let end = entries.get(i + 1).map_or(n_slots, |next| next.start_slot);
                LightPhase {
                    phase: e.phase,
                    slots: e.start_slot..end.min(n_slots),
                }
            })
            .collect();
        LightPlan { phases, n_slots }
    }

    pub fn from_config(config: &SimConfig) -> Self {
        Self::new(&config.scenario.light_schedule(), config.scenario.n_slots)
    }

    pub fn phases(&self) -> &[LightPhase] {
        &self.phases
    }

    pub fn phase_at(&self, slot: usize) -> Result<&LightPhase> {
        if slot >= self.n_slots {
            return Err(SimError::SlotOutOfRange {
                slot,
                n_slots: self.n_slots,
            });
        }
        Ok(self
            .phases
            .iter()
            .find(|p| p.slots.contains(&slot))
            .expect("validated plan covers every slot"))
    }

    /// Number of slots in `[0, slot)` during which `axis` had a green light.
    pub fn green_slots_before(&self, axis: Axis, slot: usize) -> usize {
        self.phases
            .iter()
            .filter(|p| p.is_green(axis))
            .map(|p| p.slots.end.min(slot).saturating_sub(p.slots.start))
            .sum()
    }
}

pub fn light_phase_at(config: &SimConfig, slot: usize) -> Result<LightPhase> {
    LightPlan::from_config(config).phase_at(slot).cloned()
}

/// Places vehicles on the lanes of their travel direction and RSUs at their
/// configured sites. Vehicles get ids `0..n_vehicles`, RSUs follow.
pub fn initial_placement<R: Rng + ?Sized>(config: &SimConfig, rng: &mut R) -> Vec<NodeState> {
    let s = &config.scenario;
    let ch = &config.channel;
    let (v_lo, v_hi) = s.speed_range_mps();
    let horizon = s.duration_s();
    let mut nodes = Vec::with_capacity(s.n_vehicles + s.n_rsus);

    for i in 0..s.n_vehicles {
        let axis = if rng.gen_bool(0.5) {
            Axis::Horizontal
        } else {
            Axis::Vertical
        };
        let forward = rng.gen_bool(0.5);
        let lane = rng.gen_range(0..s.lanes_per_direction) as f64;
        let speed = if v_lo < v_hi {
            rng.gen_range(v_lo..=v_hi)
        } else {
            v_lo
        };
        let offset = (lane + 0.5) * s.lane_width_m;
        let span = match axis {
            Axis::Horizontal => s.area_width_m,
            _ => s.area_height_m,
        };
        // keep the whole trajectory inside the area even if the light never turns red
        let travel = speed * horizon;
        let along = if travel >= span {
            if forward {
                0.0
            } else {
                span
            }
        } else if forward {
            rng.gen_range(0.0..=span - travel)
        } else {
            rng.gen_range(travel..=span)
        };
        let sign = if forward { 1.0 } else { -1.0 };
        let (x, y, velocity) = match axis {
            Axis::Horizontal => (along, s.area_height_m / 2.0 - sign * offset, (sign * speed, 0.0)),
            _ => (s.area_width_m / 2.0 + sign * offset, along, (0.0, sign * speed)),
        };
        nodes.push(NodeState {
            id: NodeId(i),
            kind: NodeKind::Vehicle,
            position: Position::new(x, y, s.vehicle_height_m),
            velocity,
            axis,
            max_range: ch.vehicle_range_m,
            tx_power: ch.vehicle_tx_power.watts(),
            cache_capacity: config.vehicle_cache_packets(),
            forward_capacity: config.vehicle_forward_packets(),
        });
    }

    for [x, y] in s.rsu_positions() {
        nodes.push(NodeState {
            id: NodeId(nodes.len()),
            kind: NodeKind::Rsu,
            position: Position::new(x, y, s.rsu_height_m),
            velocity: (0.0, 0.0),
            axis: Axis::None,
            max_range: ch.rsu_coverage_m,
            tx_power: ch.rsu_tx_power.watts(),
            cache_capacity: config.rsu_cache_packets(),
            forward_capacity: config.rsu_forward_packets(),
        });
    }
    nodes
}

/// Positions at the start of `slot`, indexed by node id.
pub fn positions_at(config: &SimConfig, nodes: &[NodeState], slot: usize) -> Result<Vec<Position>> {
    let plan = LightPlan::from_config(config);
    plan.phase_at(slot)?;
    Ok(positions_with_plan(config, &plan, nodes, slot))
}

pub(crate) fn positions_with_plan(
    config: &SimConfig,
    plan: &LightPlan,
    nodes: &[NodeState],
    slot: usize,
) -> Vec<Position> {
    let s = &config.scenario;
    nodes
        .iter()
        .map(|n| {
            if n.kind == NodeKind::Rsu {
                return n.position;
            }
            let moving = plan.green_slots_before(n.axis, slot) as f64 * s.slot_length_s;
            Position {
                x: (n.position.x + n.velocity.0 * moving).clamp(0.0, s.area_width_m),
                y: (n.position.y + n.velocity.1 * moving).clamp(0.0, s.area_height_m),
                z: n.position.z,
            }
        })
        .collect()
}
