//! CSV and text output.

use std::io::Write;
use std::path::Path;

use thiserror::Error;

use super::campaign::FamilySummary;
use super::metrics::RunMetrics;
use super::sim::TraceRow;

#[derive(Debug, Error)]
pub enum ExportError {
    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),
    #[error("csv error: {0}")]
    Csv(#[from] csv::Error),
}

pub const TRACE_HEADER: [&str; 17] = [
    "t",
    "vehicle_id",
    "p",
    "v",
    "u_lin",
    "u_ff_raw",
    "u_ff",
    "u_total",
    "filter_branch",
    "gap",
    "p_tilde",
    "v_tilde",
    "sigma",
    "r",
    "lane",
    "v_level",
    "vtf",
];

fn num(x: f64) -> String {
    x.to_string()
}

fn opt(x: Option<f64>) -> String {
    x.map(num).unwrap_or_default()
}

fn trace_record(row: &TraceRow) -> [String; 17] {
    [
        num(row.t),
        row.vehicle_id.to_string(),
        num(row.p),
        num(row.v),
        num(row.u_lin),
        opt(row.u_ff_raw),
        num(row.u_ff),
        num(row.u_total),
        row.filter_branch.map(|b| b.as_str().to_string()).unwrap_or_default(),
        opt(row.gap),
        opt(row.p_tilde),
        opt(row.v_tilde),
        u8::from(row.sigma).to_string(),
        num(row.r),
        row.lane.as_str().to_string(),
        row.v_level.as_str().to_string(),
        row.vtf.map(|v| v.to_string()).unwrap_or_default(),
    ]
}

pub fn write_trace<W: Write>(out: W, trace: &[TraceRow]) -> Result<(), ExportError> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(TRACE_HEADER)?;
    for row in trace {
        w.write_record(trace_record(row))?;
    }
    w.flush()?;
    Ok(())
}

pub fn write_trace_file(path: &Path, trace: &[TraceRow]) -> Result<(), ExportError> {
    write_trace(std::fs::File::create(path)?, trace)
}

/// Per-vehicle metrics as CSV.
pub fn write_metrics<W: Write>(out: W, m: &RunMetrics) -> Result<(), ExportError> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(["vehicle_id", "min_gap", "gap_mean", "gap_std", "gap_min", "gap_max", "detection_latency"])?;
    let ids: std::collections::BTreeSet<_> = m
        .min_gap
        .keys()
        .chain(m.gap_stats.keys())
        .chain(m.detection_latency.keys())
        .copied()
        .collect();
    for id in ids {
        let s = m.gap_stats.get(&id);
        w.write_record([
            id.to_string(),
            opt(m.min_gap.get(&id).copied()),
            opt(s.map(|s| s.mean)),
            opt(s.map(|s| s.std)),
            opt(s.map(|s| s.min)),
            opt(s.map(|s| s.max)),
            opt(m.detection_latency.get(&id).copied().flatten()),
        ])?;
    }
    w.flush()?;
    Ok(())
}

/// Human-readable run summary.
pub fn metrics_text(m: &RunMetrics) -> String {
    let mut s = String::new();
    let line = |s: &mut String, k: &str, v: String| s.push_str(&format!("{k:<28}{v}\n"));
    line(&mut s, "end time (s)", format!("{:.2}", m.end_time));
    line(&mut s, "steps", m.steps.to_string());
    line(
        &mut s,
        "collision",
        match m.collision {
            Some(c) => format!("t={:.2} vehicle {} into {}", c.time, c.behind, c.ahead),
            None => "none".into(),
        },
    );
    line(&mut s, "min gap (m)", format!("{:.4}", m.overall_min_gap()));
    line(&mut s, "min gap before brake (m)", format!("{:.4}", m.min_gap_attack_phase));
    if m.min_gap_brake_phase.is_finite() {
        line(&mut s, "min gap while braking (m)", format!("{:.4}", m.min_gap_brake_phase));
    }
    for (id, lat) in &m.detection_latency {
        let v = lat.map_or("not detected".to_string(), |l| format!("{l:.2} s"));
        line(&mut s, &format!("detection latency, link {id}"), v);
    }
    line(&mut s, "false alarms", m.false_alarms.to_string());
    if let Some(t0) = m.reconfiguration_started {
        let end = m
            .reconfiguration_completed
            .map_or("unfinished".to_string(), |t1| format!("{:.2} s", t1 - t0));
        line(&mut s, "reconfiguration", format!("from t={t0:.2}, {end}"));
    }
    let order: Vec<String> = m.final_order.iter().map(|v| v.to_string()).collect();
    line(&mut s, "final order", order.join(" "));
    if !m.gap_stats.is_empty() {
        s.push_str(&format!(
            "\n{:>8} {:>10} {:>10} {:>10} {:>10}\n",
            "vehicle", "mean", "std", "min", "max"
        ));
        for (id, g) in &m.gap_stats {
            s.push_str(&format!(
                "{:>8} {:>10.4} {:>10.4} {:>10.4} {:>10.4}\n",
                id.to_string(),
                g.mean,
                g.std,
                g.min,
                g.max
            ));
        }
    }
    s
}

/// Campaign aggregates as CSV.
pub fn write_aggregate<W: Write>(out: W, rows: &[FamilySummary]) -> Result<(), ExportError> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record([
        "family",
        "phase",
        "runs",
        "collisions",
        "collision_rate",
        "min",
        "mean",
        "p05",
        "p50",
        "p95",
    ])?;
    for f in rows {
        for (phase, q) in [("attack", &f.attack_phase), ("brake", &f.brake_phase)] {
            w.write_record([
                f.family.as_str().to_string(),
                phase.to_string(),
                f.runs.to_string(),
                f.collisions.to_string(),
                num(f.collision_rate()),
                num(q.min),
                num(q.mean),
                num(q.p05),
                num(q.p50),
                num(q.p95),
            ])?;
        }
    }
    w.flush()?;
    Ok(())
}

/// Campaign aggregates as an aligned table.
pub fn aggregate_text(rows: &[FamilySummary]) -> String {
    let mut s = format!(
        "{:<15} {:<7} {:>5} {:>6} {:>9} {:>9} {:>9} {:>9} {:>9}\n",
        "family", "phase", "runs", "coll", "min", "mean", "p05", "p50", "p95"
    );
    for f in rows {
        for (phase, q) in [("attack", &f.attack_phase), ("brake", &f.brake_phase)] {
            s.push_str(&format!(
                "{:<15} {:<7} {:>5} {:>6} {:>9.3} {:>9.3} {:>9.3} {:>9.3} {:>9.3}\n",
                f.family.as_str(),
                phase,
                f.runs,
                f.collisions,
                q.min,
                q.mean,
                q.p05,
                q.p50,
                q.p95
            ));
        }
    }
    s
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::coordinator::VehicleId;
    use crate::rearrange::{Lane, SpeedLevel};

    #[test]
    fn leader_row_leaves_follower_columns_empty() {
        let row = TraceRow {
            t: 0.05,
            vehicle_id: VehicleId(1),
            p: 1.25,
            v: 25.0,
            u_lin: 0.0,
            u_ff_raw: None,
            u_ff: 0.0,
            u_total: 0.0,
            filter_branch: None,
            gap: None,
            p_tilde: None,
            v_tilde: None,
            sigma: false,
            r: 0.0,
            lane: Lane::Slow,
            v_level: SpeedLevel::Default,
            vtf: None,
        };
        let mut buf = Vec::new();
        write_trace(&mut buf, &[row]).unwrap();
        let text = String::from_utf8(buf).unwrap();
        let mut lines = text.lines();
        assert_eq!(lines.next().unwrap(), TRACE_HEADER.join(","));
        assert_eq!(lines.next().unwrap(), "0.05,1,1.25,25,0,,0,0,,,,,0,0,SL,default,");
    }
}
