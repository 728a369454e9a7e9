//! SVG line charts, one file per metric, one polyline per series.

use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use plotters::prelude::*;

use iovmesh::metrics::{MetricsSeries, SlotMetrics};

pub struct Metric {
    pub file: &'static str,
    pub title: &'static str,
    pub y_label: &'static str,
    pub value: fn(&SlotMetrics) -> Option<f64>,
}

pub const METRICS: [Metric; 5] = [
    Metric {
        file: "loss_rate.svg",
        title: "Packet loss rate",
        y_label: "loss rate (fraction)",
        value: |r| r.loss_rate,
    },
    Metric {
        file: "arrive_rate.svg",
        title: "Task arrival rate",
        y_label: "arrival rate (fraction)",
        value: |r| r.arrive_rate,
    },
    Metric {
        file: "node_load.svg",
        title: "Node load rate",
        y_label: "node load (fraction)",
        value: |r| Some(r.node_load),
    },
    Metric {
        file: "link_load.svg",
        title: "Link load rate",
        y_label: "link load (fraction)",
        value: |r| r.link_load,
    },
    Metric {
        file: "sumflow.svg",
        title: "Total network traffic",
        y_label: "forwarded + cached (packets)",
        value: |r| Some(r.sumflow),
    },
];

const PALETTE: [RGBColor; 8] = [
    RGBColor(31, 119, 180),
    RGBColor(255, 127, 14),
    RGBColor(44, 160, 44),
    RGBColor(214, 39, 40),
    RGBColor(148, 103, 189),
    RGBColor(140, 86, 75),
    RGBColor(227, 119, 194),
    RGBColor(127, 127, 127),
];

/// Writes the five metric charts into `dir` and returns their paths.
pub fn write_charts(dir: &Path, series: &[(String, &MetricsSeries)]) -> Result<Vec<PathBuf>> {
    if series.is_empty() {
        bail!("no series to chart");
    }
    std::fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))?;
    METRICS
        .iter()
        .map(|m| {
            let path = dir.join(m.file);
            draw(&path, m, series).with_context(|| format!("drawing {}", path.display()))?;
            Ok(path)
        })
        .collect()
}

fn draw(path: &Path, metric: &Metric, series: &[(String, &MetricsSeries)]) -> Result<()> {
    let slots = series.iter().map(|(_, s)| s.len()).max().unwrap_or(0).max(1);
    let y_max = series
        .iter()
        .flat_map(|(_, s)| s.rows.iter().filter_map(metric.value))
        .fold(0.0f64, f64::max);
    let y_top = if metric.file == "sumflow.svg" {
        (y_max * 1.05).max(1.0)
    } else {
        1.0
    };

    let root = SVGBackend::new(path, (900, 540)).into_drawing_area();
    root.fill(&WHITE)?;
    let mut chart = ChartBuilder::on(&root)
        .caption(metric.title, ("sans-serif", 22))
        .margin(12)
        .x_label_area_size(40)
        .y_label_area_size(64)
        .build_cartesian_2d(0f64..slots as f64, 0f64..y_top)?;
    chart
        .configure_mesh()
        .x_desc("slot index")
        .y_desc(metric.y_label)
        .draw()?;

    for (i, (label, s)) in series.iter().enumerate() {
        let color = PALETTE[i % PALETTE.len()];
        let points: Vec<(f64, f64)> = s
            .rows
            .iter()
            .filter_map(|r| (metric.value)(r).map(|v| (r.slot as f64, v)))
            .collect();
        chart
            .draw_series(LineSeries::new(points, color.stroke_width(2)))?
            .label(label.as_str())
            .legend(move |(x, y)| PathElement::new(vec![(x, y), (x + 18, y)], color.stroke_width(2)));
    }
    chart
        .configure_series_labels()
        .background_style(WHITE.mix(0.85))
        .border_style(BLACK)
        .position(SeriesLabelPosition::UpperRight)
        .draw()?;
    root.present()?;
    Ok(())
}
