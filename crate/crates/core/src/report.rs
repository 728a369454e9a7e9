//! Output files: metrics CSV, task ledger CSV, run manifest and flow log.

use std::fs;
use std::io::Write;
use std::path::Path;

use crate::config::SimConfig;
use crate::engine::{FlowLogRecord, GridPoint, TaskRecord};

pub use crate::metrics::CSV_HEADER as METRICS_CSV_HEADER;

/// Bumped when a column or manifest key changes meaning.
pub const SCHEMA_VERSION: u32 = 1;

pub const TASKS_CSV_HEADER: &str = "id,source,destination,priority,start_slot,routed,hops,qos_rate,\
total_packets,sent,delivered,node_lost,link_lost,in_network,slots_to_completion";

pub fn tasks_csv(tasks: &[TaskRecord]) -> String {
    let mut out = String::from(TASKS_CSV_HEADER);
    out.push('\n');
    for t in tasks {
        out.push_str(&format!(
            "{},{},{},{},{},{},{},{},{},{},{},{},{},{},{}\n",
            t.id,
            t.source,
            t.destination,
            t.priority.as_str(),
            t.start_slot,
            t.routed,
            t.hops,
            t.qos_rate,
            t.total_packets,
            t.sent,
            t.delivered,
            t.node_lost,
            t.link_lost,
            t.in_network,
            t.slots_to_completion.map(|s| s.to_string()).unwrap_or_default(),
        ));
    }
    out
}

/// One JSON object per line.
pub fn flow_log_ndjson(records: &[FlowLogRecord]) -> String {
    let mut out = String::new();
    for r in records {
        out.push_str(&serde_json::to_string(r).expect("flow records serialize"));
        out.push('\n');
    }
    out
}

/// The resolved config followed by a `[run]` table describing the run. The
/// `[run]` table is ignored when the file is loaded as a scenario.
pub fn manifest(config: &SimConfig, seeds: &[u64], point: Option<&GridPoint>) -> String {
    let mut run = toml::Table::new();
    run.insert("tool".into(), env!("CARGO_PKG_NAME").into());
    run.insert("version".into(), env!("CARGO_PKG_VERSION").into());
    run.insert("schema_version".into(), i64::from(SCHEMA_VERSION).into());
    run.insert(
        "seeds".into(),
        toml::Value::Array(seeds.iter().map(|&s| toml::Value::Integer(s as i64)).collect()),
    );
    if let Some(p) = point {
        run.insert("grid_point".into(), p.label().into());
    }
    run.insert(
        "loss_rate".into(),
        "cumulative mean of lost/sent over tasks that have sent packets; unroutable tasks excluded".into(),
    );
    run.insert(
        "arrive_rate".into(),
        "cumulative mean of delivered/total over all generated tasks; unroutable tasks count as 0".into(),
    );
    let mut wrapper = toml::Table::new();
    wrapper.insert("run".into(), toml::Value::Table(run));
    format!(
        "{}\n{}",
        config.to_toml_string(),
        toml::to_string(&wrapper).expect("manifest serializes")
    )
}

/// Writes through a temporary sibling file so readers never see a partial file.
pub fn write_atomic(path: &Path, contents: &str) -> std::io::Result<()> {
    let dir = path.parent().filter(|p| !p.as_os_str().is_empty()).unwrap_or(Path::new("."));
    fs::create_dir_all(dir)?;
    let name = path.file_name().map(|n| n.to_string_lossy().into_owned()).unwrap_or_default();
    let tmp = dir.join(format!(".{name}.tmp{}", std::process::id()));
    {
        let mut f = fs::File::create(&tmp)?;
        f.write_all(contents.as_bytes())?;
        f.sync_all()?;
    }
    fs::rename(&tmp, path)
}
