//! Run report (`key = value` lines) and per-frame timing CSV.

use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use crate::error::{Error, Result};
use crate::inference::FrameStats;
use crate::io::eval::EvalReport;

/// Keys whose values depend on wall-clock time.
pub const TIMING_KEYS: [&str; 5] = [
    "frame_ms_p50",
    "frame_ms_p90",
    "frame_ms_max",
    "frames_per_second",
    "points_per_second",
];

pub fn render_report(r: &EvalReport) -> String {
    let mut s = String::new();
    let mut kv = |k: &str, v: String| {
        let _ = writeln!(s, "{k} = {v}");
    };
    kv("frames", r.frames.to_string());
    kv("points_in", r.points_in.to_string());
    kv("invalid_points", r.invalid_points.to_string());
    kv("dataset_warnings", r.dataset_warnings.to_string());
    kv("workers", r.workers.to_string());
    kv("block_count", r.block_count.to_string());
    kv("component_count", r.component_count.to_string());
    kv("components_pruned", r.components_pruned.to_string());
    kv("parameter_bytes", r.parameter_bytes.to_string());
    kv("table_overhead_bytes", r.table_overhead_bytes.to_string());
    kv("sample_count", r.sample_count.to_string());
    match &r.distance {
        Some(d) => {
            kv("mean_distance_cm", format!("{:.6}", d.mean_cm));
            kv("std_distance_cm", format!("{:.6}", d.std_cm));
        }
        None => {
            kv("mean_distance_cm", "none".into());
            kv("std_distance_cm", "none".into());
        }
    }
    kv("frame_ms_p50", format!("{:.3}", r.frame_ms_p50));
    kv("frame_ms_p90", format!("{:.3}", r.frame_ms_p90));
    kv("frame_ms_max", format!("{:.3}", r.frame_ms_max));
    kv("frames_per_second", format!("{:.3}", r.frames_per_second));
    kv("points_per_second", format!("{:.0}", r.points_per_second));
    s
}

/// Parses `key = value` lines, skipping blanks and `#` comments.
pub fn parse_report(text: &str) -> Vec<(String, String)> {
    text.lines()
        .map(str::trim)
        .filter(|l| !l.is_empty() && !l.starts_with('#'))
        .filter_map(|l| {
            l.split_once('=')
                .map(|(k, v)| (k.trim().to_string(), v.trim().to_string()))
        })
        .collect()
}

pub fn render_frames_csv(stats: &[(FrameStats, usize)]) -> String {
    let mut s = String::from(
        "frame,points_in,points_routed,invalid_points,blocks_touched,blocks_allocated,components_created,components_pruned,component_count,ms\n",
    );
    for (i, (f, comps)) in stats.iter().enumerate() {
        let _ = writeln!(
            s,
            "{i},{},{},{},{},{},{},{},{comps},{:.3}",
            f.points_in,
            f.points_routed,
            f.invalid_points,
            f.blocks_touched,
            f.blocks_allocated,
            f.components_created,
            f.components_pruned,
            f.wall_time.as_secs_f64() * 1e3
        );
    }
    s
}

pub fn write_text(path: &Path, text: &str) -> Result<()> {
    fs::write(path, text).map_err(|e| Error::Export(format!("{}: {e}", path.display())))
}
