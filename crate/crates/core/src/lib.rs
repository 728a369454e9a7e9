//! Flow-level, slot-based simulation of a vehicular mesh network.
//!
//! Vehicles drive on a crossroads under a traffic light plan, RSUs sit still,
//! and every node is a store-and-forward switch with a cache and a forwarding
//! budget. Links follow a Shannon capacity model, tasks follow frozen shortest
//! paths, and each slot yields five network indicators.

pub mod channel;
pub mod config;
pub mod engine;
pub mod error;
pub mod ids;
pub mod metrics;
pub mod report;
pub mod rng;
pub mod routing;
pub mod scenario;
pub mod switch;
pub mod traffic;

pub use channel::{build_topology, ChannelParams, TopologySnapshot};
pub use config::{load_scenario, SimConfig};
pub use engine::{run, run_seeds, run_with, sweep, GridPoint, ParamGrid, RunOptions, RunOutput, SweepPoint};
pub use error::{ConfigError, Result, SimError};
pub use ids::{NodeId, PortId, TaskId};
pub use metrics::{MetricsSeries, SlotFlowRecord, SlotMetrics};
pub use routing::{PortRoutingTable, Route, RoutingGraph};
pub use scenario::{NodeState, Position};
pub use switch::{step_node, NodeForwardResult, Priority, TaskQueueEntry};
pub use traffic::{calibrate_qos, Task};
