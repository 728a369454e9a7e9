//! Scenario file schema.
//!
//! Scenario files are TOML. Every table and key is optional; anything left
//! out takes the urban-intersection defaults (866 m x 500 m area, 20
//! vehicles, 4 RSUs, 300 slots of 100 ms). Powers carry an explicit unit
//! suffix (`"100 mW"`, `"20 dBm"`, `"0.1 W"`), bandwidths are in MHz, cache
//! sizes in Mb and distances in metres.

use std::fmt;
use std::path::Path;
use std::str::FromStr;

use serde::{Deserialize, Deserializer, Serialize, Serializer};

use crate::error::ConfigError;

const RATE_EPS: f64 = 1e-9;

/// Whole packets carried by `bits_per_second` during one slot. Fractions are
/// floored and never carried into the next slot.
pub fn packets_per_slot(bits_per_second: f64, slot_length_s: f64, packet_size_bits: f64) -> u64 {
    let exact = bits_per_second * slot_length_s / packet_size_bits;
    if !exact.is_finite() || exact <= 0.0 {
        return 0;
    }
    // absorbs representation error such as 20e6 * 0.1 landing a hair below 2e6
    (exact + RATE_EPS).floor() as u64
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum PowerUnit {
    Watt,
    MilliWatt,
    DBm,
}

/// A power level remembered in the unit it was written in, so that a resolved
/// config serialises back to exactly the same value.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Power {
    pub value: f64,
    pub unit: PowerUnit,
}

impl Power {
    pub const fn dbm(value: f64) -> Self {
        Power {
            value,
            unit: PowerUnit::DBm,
        }
    }

    pub const fn milliwatts(value: f64) -> Self {
        Power {
            value,
            unit: PowerUnit::MilliWatt,
        }
    }

    pub fn watts(&self) -> f64 {
        match self.unit {
            PowerUnit::Watt => self.value,
            PowerUnit::MilliWatt => self.value * 1e-3,
            PowerUnit::DBm => 10f64.powf(self.value / 10.0) * 1e-3,
        }
    }
}

impl fmt::Display for Power {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let unit = match self.unit {
            PowerUnit::Watt => "W",
            PowerUnit::MilliWatt => "mW",
            PowerUnit::DBm => "dBm",
        };
        write!(f, "{} {}", self.value, unit)
    }
}

impl FromStr for Power {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let s = s.trim();
        let (number, unit) = if let Some(n) = s.strip_suffix("dBm") {
            (n, PowerUnit::DBm)
        } else if let Some(n) = s.strip_suffix("mW") {
            (n, PowerUnit::MilliWatt)
        } else if let Some(n) = s.strip_suffix('W') {
            (n, PowerUnit::Watt)
        } else {
            return Err(format!(
                "power `{s}` needs a unit suffix (W, mW or dBm)"
            ));
        };
        let value: f64 = number
            .trim()
            .parse()
            .map_err(|_| format!("power `{s}` has a malformed number"))?;
        if !value.is_finite() {
            return Err(format!("power `{s}` is not finite"));
        }
        Ok(Power { value, unit })
    }
}

impl Serialize for Power {
    fn serialize<S: Serializer>(&self, serializer: S) -> Result<S::Ok, S::Error> {
        serializer.collect_str(self)
    }
}

impl<'de> Deserialize<'de> for Power {
    fn deserialize<D: Deserializer<'de>>(deserializer: D) -> Result<Self, D::Error> {
        let raw = String::deserialize(deserializer)?;
        raw.parse().map_err(serde::de::Error::custom)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Phase {
    HorizontalGreen,
    VerticalGreen,
    AllYellow,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LightEntry {
    pub start_slot: usize,
    pub phase: Phase,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ScenarioConfig {
    pub area_width_m: f64,
    pub area_height_m: f64,
    pub lane_width_m: f64,
    pub lanes_per_direction: u32,
    pub n_vehicles: usize,
    pub n_rsus: usize,
    pub slot_length_s: f64,
    pub n_slots: usize,
    pub speed_range_kmh: [f64; 2],
    /// Explicit traffic-light plan. When absent the plan is one third
    /// horizontal green, one sixth all-yellow, the rest vertical green.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub light_schedule: Option<Vec<LightEntry>>,
    pub packet_size_bits: f64,
    pub seed: u64,
    pub vehicle_height_m: f64,
    pub rsu_height_m: f64,
    /// `[x, y]` per RSU. Defaults to the centres of the 2x2 city blocks.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub rsu_positions: Option<Vec<[f64; 2]>>,
}

impl Default for ScenarioConfig {
    fn default() -> Self {
        ScenarioConfig {
            area_width_m: 866.0,
            area_height_m: 500.0,
            lane_width_m: 3.5,
            lanes_per_direction: 2,
            n_vehicles: 20,
            n_rsus: 4,
            slot_length_s: 0.1,
            n_slots: 300,
            speed_range_kmh: [20.0, 40.0],
            light_schedule: None,
            packet_size_bits: 1e6,
            seed: 1,
            vehicle_height_m: 1.5,
            rsu_height_m: 5.0,
            rsu_positions: None,
        }
    }
}

impl ScenarioConfig {
    pub fn duration_s(&self) -> f64 {
        self.n_slots as f64 * self.slot_length_s
    }

    pub fn speed_range_mps(&self) -> (f64, f64) {
        (
            self.speed_range_kmh[0] / 3.6,
            self.speed_range_kmh[1] / 3.6,
        )
    }

    /// The light plan in effect, explicit or derived from `n_slots`.
    pub fn light_schedule(&self) -> Vec<LightEntry> {
        if let Some(plan) = &self.light_schedule {
            return plan.clone();
        }
        let n = self.n_slots;
        let mut plan = vec![LightEntry {
            start_slot: 0,
            phase: Phase::HorizontalGreen,
        }];
        for (start, phase) in [(n / 3, Phase::AllYellow), (n / 2, Phase::VerticalGreen)] {
            if start > plan.last().unwrap().start_slot && start < n {
                plan.push(LightEntry {
                    start_slot: start,
                    phase,
                });
            }
        }
        plan
    }

    pub fn rsu_positions(&self) -> Vec<[f64; 2]> {
        if let Some(p) = &self.rsu_positions {
            return p.clone();
        }
        let (w, h) = (self.area_width_m, self.area_height_m);
        [
            [w / 4.0, h / 4.0],
            [3.0 * w / 4.0, h / 4.0],
            [w / 4.0, 3.0 * h / 4.0],
            [3.0 * w / 4.0, 3.0 * h / 4.0],
        ]
        .into_iter()
        .take(self.n_rsus)
        .collect()
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum GainModel {
    /// `h` is the configured constant.
    Constant,
    /// `h = h0 * (d / reference_m)^-exponent` beyond the reference distance.
    LogDistance { exponent: f64, reference_m: f64 },
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ChannelConfig {
    pub bandwidth_v2v_mhz: f64,
    pub bandwidth_v2i_mhz: f64,
    pub vehicle_tx_power: Power,
    pub rsu_tx_power: Power,
    pub noise_power: Power,
    pub a0_db: f64,
    pub gain_model: GainModel,
    pub h_v2v: f64,
    pub h_v2i: f64,
    pub vehicle_range_m: f64,
    pub rsu_coverage_m: f64,
    /// Distances below this are clamped before evaluating the `A0 / d^2` term.
    pub min_distance_m: f64,
}

impl Default for ChannelConfig {
    fn default() -> Self {
        ChannelConfig {
            bandwidth_v2v_mhz: 20.0,
            bandwidth_v2i_mhz: 40.0,
            vehicle_tx_power: Power::milliwatts(100.0),
            rsu_tx_power: Power::dbm(20.0),
            noise_power: Power::dbm(-100.0),
            a0_db: -17.8,
            gain_model: GainModel::Constant,
            h_v2v: 1.0,
            h_v2i: 1.0,
            vehicle_range_m: 200.0,
            rsu_coverage_m: 500.0,
            min_distance_m: 1.0,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct NodeConfig {
    pub vehicle_cache_mb: f64,
    pub rsu_cache_mb: f64,
    pub vehicle_forward_gbps: f64,
    pub rsu_forward_gbps: f64,
    /// Multiplies both cache sizes; used by cache-capacity sweeps.
    pub cache_scale: f64,
}

impl Default for NodeConfig {
    fn default() -> Self {
        NodeConfig {
            vehicle_cache_mb: 100.0,
            rsu_cache_mb: 500.0,
            vehicle_forward_gbps: 10.0,
            rsu_forward_gbps: 10.0,
            cache_scale: 1.0,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum WeightMode {
    #[default]
    EuclideanDistance,
    HopCount,
    InverseRate,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize, Default)]
#[serde(deny_unknown_fields, default)]
pub struct RoutingConfig {
    pub weight: WeightMode,
    /// Rebuild every node's port table this often and let in-flight tasks
    /// follow the fresh tables. Absent means routes stay frozen at initiation.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub refresh_every_slots: Option<usize>,
    /// Maximum number of ports per node; absent means one per neighbour.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub port_cap: Option<usize>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrafficConfig {
    pub grid_rows: usize,
    pub grid_cols: usize,
    /// New task initiators per slot (across the whole network), used when
    /// `initiators_per_node` is absent.
    pub initiators_per_slot: usize,
    /// When set, each slot this share of the eligible nodes starts a task
    /// instead of a fixed count. A fractional expected count is rounded up or
    /// down at random so the mean is exact.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub initiators_per_node: Option<f64>,
    /// Offered rate of each initiator in Mbit/s.
    pub qos_mbps: f64,
    /// Task size in slots of nominal sending: rho = qos_rate * task_slots.
    pub task_slots: u64,
    /// Overrides the task size in packets.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub task_packets: Option<u64>,
    /// Probabilities of high, medium and low priority.
    pub priority_mix: [f64; 3],
    pub first_initiation_slot: usize,
    /// Last slot (inclusive) in which tasks start; absent means every slot.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub last_initiation_slot: Option<usize>,
    pub rsus_initiate: bool,
}

impl Default for TrafficConfig {
    fn default() -> Self {
        TrafficConfig {
            grid_rows: 2,
            grid_cols: 2,
            initiators_per_slot: 2,
            initiators_per_node: Some(0.008),
            qos_mbps: 20.0,
            task_slots: 100,
            task_packets: None,
            priority_mix: [1.0 / 3.0, 1.0 / 3.0, 1.0 / 3.0],
            first_initiation_slot: 0,
            last_initiation_slot: None,
            rsus_initiate: true,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum BrokenLinkPolicy {
    /// The next hop is gone from the topology: keep the packets cached.
    #[default]
    Hold,
    /// Forward at the planned rate anyway and lose everything on the link.
    Drop,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize, Default)]
#[serde(deny_unknown_fields, default)]
pub struct SwitchConfig {
    pub broken_link: BrokenLinkPolicy,
}

/// Everything a run depends on besides the seed.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize, Default)]
#[serde(deny_unknown_fields, default)]
pub struct SimConfig {
    pub scenario: ScenarioConfig,
    pub channel: ChannelConfig,
    pub nodes: NodeConfig,
    pub routing: RoutingConfig,
    pub traffic: TrafficConfig,
    pub switch: SwitchConfig,
    /// Provenance block written into manifests; ignored when loading.
    #[serde(skip_serializing)]
    pub run: Option<toml::Table>,
}

impl SimConfig {
    pub fn from_toml_str(text: &str, origin: &str) -> Result<Self, ConfigError> {
        let config: SimConfig = toml::from_str(text).map_err(|e| ConfigError::Parse {
            origin: origin.to_string(),
            message: e.to_string(),
        })?;
        config.validate()?;
        Ok(config)
    }

    pub fn to_toml_string(&self) -> String {
        toml::to_string(self).expect("config serialises")
    }

    pub fn vehicle_cache_packets(&self) -> u64 {
        self.cache_packets(self.nodes.vehicle_cache_mb)
    }

    pub fn rsu_cache_packets(&self) -> u64 {
        self.cache_packets(self.nodes.rsu_cache_mb)
    }

    fn cache_packets(&self, mb: f64) -> u64 {
        let bits = mb * 1e6 * self.nodes.cache_scale;
        ((bits / self.scenario.packet_size_bits) + RATE_EPS).floor() as u64
    }

    pub fn vehicle_forward_packets(&self) -> u64 {
        self.forward_packets(self.nodes.vehicle_forward_gbps)
    }

    pub fn rsu_forward_packets(&self) -> u64 {
        self.forward_packets(self.nodes.rsu_forward_gbps)
    }

    fn forward_packets(&self, gbps: f64) -> u64 {
        packets_per_slot(
            gbps * 1e9,
            self.scenario.slot_length_s,
            self.scenario.packet_size_bits,
        )
    }

    /// Per-initiator offered rate in packets per slot.
    pub fn qos_packets_per_slot(&self) -> u64 {
        packets_per_slot(
            self.traffic.qos_mbps * 1e6,
            self.scenario.slot_length_s,
            self.scenario.packet_size_bits,
        )
    }

    pub fn task_packets(&self) -> u64 {
        self.traffic
            .task_packets
            .unwrap_or(self.qos_packets_per_slot() * self.traffic.task_slots)
    }

    /// Checks every invariant; the error names the offending key.
    pub fn validate(&self) -> Result<(), ConfigError> {
        use ConfigError as E;
        let s = &self.scenario;
        let positive = |field: &'static str, v: f64| {
            if v.is_finite() && v > 0.0 {
                Ok(())
            } else {
                Err(E::invalid(field, format!("must be > 0, got {v}")))
            }
        };
        positive("scenario.area_width_m", s.area_width_m)?;
        positive("scenario.area_height_m", s.area_height_m)?;
        positive("scenario.lane_width_m", s.lane_width_m)?;
        positive("scenario.slot_length_s", s.slot_length_s)?;
        positive("scenario.packet_size_bits", s.packet_size_bits)?;
        if s.n_slots == 0 {
            return Err(E::invalid("scenario.n_slots", "must be > 0"));
        }
        if s.lanes_per_direction == 0 {
            return Err(E::invalid("scenario.lanes_per_direction", "must be > 0"));
        }
        let [lo, hi] = s.speed_range_kmh;
        positive("scenario.speed_range_kmh", lo)?;
        positive("scenario.speed_range_kmh", hi)?;
        if lo > hi {
            return Err(E::invalid(
                "scenario.speed_range_kmh",
                format!("min {lo} exceeds max {hi}"),
            ));
        }
        if !(s.vehicle_height_m >= 0.0 && s.rsu_height_m >= 0.0) {
            return Err(E::invalid("scenario.*_height_m", "antenna heights must be >= 0"));
        }
        let road_half = s.lanes_per_direction as f64 * s.lane_width_m;
        if 2.0 * road_half > s.area_width_m.min(s.area_height_m) {
            return Err(E::invalid(
                "scenario.lanes_per_direction",
                "roads are wider than the area",
            ));
        }

        let plan = s.light_schedule();
        match plan.first() {
            Some(first) if first.start_slot == 0 => {}
            _ => {
                return Err(E::invalid(
                    "scenario.light_schedule",
                    "phases must partition [0, n_slots): the first phase must start at slot 0",
                ))
            }
        }
        for pair in plan.windows(2) {
            if pair[1].start_slot <= pair[0].start_slot {
                return Err(E::invalid(
                    "scenario.light_schedule",
                    "phases must partition [0, n_slots): start slots must strictly increase",
                ));
            }
        }
        if plan.last().unwrap().start_slot >= s.n_slots {
            return Err(E::invalid(
                "scenario.light_schedule",
                "phases must partition [0, n_slots): a phase starts at or after n_slots",
            ));
        }

        match &s.rsu_positions {
            Some(p) if p.len() != s.n_rsus => {
                return Err(E::invalid(
                    "scenario.rsu_positions",
                    format!("{} positions given for {} RSUs", p.len(), s.n_rsus),
                ))
            }
            Some(p) => {
                for [x, y] in p {
                    if !(x.is_finite() && y.is_finite()) {
                        return Err(E::invalid("scenario.rsu_positions", "non-finite coordinate"));
                    }
                }
            }
            None if s.n_rsus > 4 => {
                return Err(E::invalid(
                    "scenario.rsu_positions",
                    "more than 4 RSUs need explicit positions",
                ))
            }
            None => {}
        }

        let c = &self.channel;
        positive("channel.bandwidth_v2v_mhz", c.bandwidth_v2v_mhz)?;
        positive("channel.bandwidth_v2i_mhz", c.bandwidth_v2i_mhz)?;
        positive("channel.vehicle_tx_power", c.vehicle_tx_power.watts())?;
        positive("channel.rsu_tx_power", c.rsu_tx_power.watts())?;
        positive("channel.noise_power", c.noise_power.watts())?;
        positive("channel.h_v2v", c.h_v2v)?;
        positive("channel.h_v2i", c.h_v2i)?;
        positive("channel.vehicle_range_m", c.vehicle_range_m)?;
        positive("channel.rsu_coverage_m", c.rsu_coverage_m)?;
        positive("channel.min_distance_m", c.min_distance_m)?;
        if !c.a0_db.is_finite() {
            return Err(E::invalid("channel.a0_db", "must be finite"));
        }
        if let GainModel::LogDistance {
            exponent,
            reference_m,
        } = c.gain_model
        {
            if !(exponent.is_finite() && exponent >= 0.0) {
                return Err(E::invalid("channel.gain_model.exponent", "must be >= 0"));
            }
            positive("channel.gain_model.reference_m", reference_m)?;
        }

        let n = &self.nodes;
        positive("nodes.vehicle_cache_mb", n.vehicle_cache_mb)?;
        positive("nodes.rsu_cache_mb", n.rsu_cache_mb)?;
        positive("nodes.vehicle_forward_gbps", n.vehicle_forward_gbps)?;
        positive("nodes.rsu_forward_gbps", n.rsu_forward_gbps)?;
        positive("nodes.cache_scale", n.cache_scale)?;
        if self.vehicle_cache_packets() == 0 || self.rsu_cache_packets() == 0 {
            return Err(E::invalid(
                "nodes.*_cache_mb",
                "cache capacity must hold at least one packet",
            ));
        }
        if self.vehicle_forward_packets() == 0 || self.rsu_forward_packets() == 0 {
            return Err(E::invalid(
                "nodes.*_forward_gbps",
                "forwarding capacity must move at least one packet per slot",
            ));
        }

        if self.routing.refresh_every_slots == Some(0) {
            return Err(E::invalid("routing.refresh_every_slots", "must be > 0"));
        }
        if self.routing.port_cap == Some(0) {
            return Err(E::invalid("routing.port_cap", "must be > 0"));
        }

        let t = &self.traffic;
        if t.grid_rows == 0 || t.grid_cols == 0 {
            return Err(E::invalid("traffic.grid_rows/grid_cols", "must be > 0"));
        }
        positive("traffic.qos_mbps", t.qos_mbps)?;
        if let Some(share) = t.initiators_per_node {
            if !(0.0..=1.0).contains(&share) {
                return Err(E::invalid(
                    "traffic.initiators_per_node",
                    format!("must be within [0, 1], got {share}"),
                ));
            }
        }
        if t.priority_mix.iter().any(|p| !(p.is_finite() && *p >= 0.0))
            || (t.priority_mix.iter().sum::<f64>() - 1.0).abs() > 1e-9
        {
            return Err(E::invalid(
                "traffic.priority_mix",
                "probabilities must be >= 0 and sum to 1",
            ));
        }
        if let Some(last) = t.last_initiation_slot {
            if last < t.first_initiation_slot {
                return Err(E::invalid(
                    "traffic.last_initiation_slot",
                    "precedes first_initiation_slot",
                ));
            }
        }
        Ok(())
    }
}

/// Reads and validates a scenario file. `"default"` yields the built-in
/// scenario without touching the filesystem.
pub fn load_scenario(path: impl AsRef<Path>) -> Result<SimConfig, ConfigError> {
    let path = path.as_ref();
    if path.as_os_str() == "default" {
        let config = SimConfig::default();
        config.validate()?;
        return Ok(config);
    }
    let text = std::fs::read_to_string(path).map_err(|source| ConfigError::Io {
        path: path.to_path_buf(),
        source,
    })?;
    SimConfig::from_toml_str(&text, &path.display().to_string())
}
