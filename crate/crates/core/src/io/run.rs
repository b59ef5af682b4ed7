//! End-to-end run: stream frames into a map, export, evaluate, report.

use std::path::{Path, PathBuf};
use std::sync::mpsc;
use std::thread;
use std::time::Instant;

use crate::error::{Error, Result};
use crate::field::Mixture;
use crate::inference::{process_frame, FrameStats};
use crate::io::config::{DatasetFormat, RunConfig};
use crate::io::dataset::Frame;
use crate::io::eval::{cloud_distance, percentile, EvalReport, Reference};
use crate::io::export::export_points;
use crate::io::mapfile;
use crate::io::mesh::TriangleMesh;
use crate::io::ply::{confidence_colors, write_points, PlyFile};
use crate::io::report::{render_frames_csv, render_report, write_text};
use crate::linalg::Vec3;
use crate::map::GlobalMap;
use crate::sensor::backproject;

pub const MAP_FILE: &str = "map.pfmap";
pub const CLOUD_FILE: &str = "cloud.ply";
pub const REPORT_FILE: &str = "report.txt";
pub const FRAMES_FILE: &str = "frames.csv";

pub struct RunOutcome {
    pub report: EvalReport,
    pub map: GlobalMap,
    pub frames: Vec<FrameStats>,
    pub output: PathBuf,
}

/// Loads a reference: `.obj`, `.ply` with faces (mesh) or `.ply` without (cloud).
pub fn load_reference(path: &Path) -> Result<Reference> {
    let is_ply = path.extension().is_some_and(|e| e.eq_ignore_ascii_case("ply"));
    if is_ply {
        let ply = PlyFile::read(path)?;
        if ply.element("face").is_none_or(|f| f.count == 0) {
            let pts = ply.vertices().map_err(|e| Error::Format {
                path: path.to_path_buf(),
                msg: e.to_string(),
            })?;
            return Ok(Reference::Cloud(pts));
        }
    }
    TriangleMesh::load(path).map(Reference::Mesh)
}

fn build_pool(workers: usize) -> Result<rayon::ThreadPool> {
    rayon::ThreadPoolBuilder::new()
        .num_threads(workers)
        .build()
        .map_err(|e| Error::Config(format!("cannot start {workers} workers: {e}")))
}

/// Executes a configured run and writes its artifacts to `cfg.output`.
///
/// The loader runs one frame ahead of inference on its own thread. The report
/// and timing CSV are written even when the run fails after integration.
pub fn run(cfg: &RunConfig) -> Result<RunOutcome> {
    cfg.validate()?;
    let dataset = cfg.open_dataset()?;
    std::fs::create_dir_all(&cfg.output).map_err(|e| Error::Export(format!("{}: {e}", cfg.output.display())))?;
    let pool = build_pool(cfg.workers)?;
    let mut map = GlobalMap::new(cfg.hyperparameters())?;
    let noise = cfg.noise();
    let mut frames: Vec<(FrameStats, usize)> = Vec::new();

    let warnings = thread::scope(|scope| {
        let (tx, rx) = mpsc::sync_channel::<Frame>(1);
        let loader = scope.spawn(move || {
            let mut ds = dataset;
            for f in ds.by_ref() {
                if tx.send(f).is_err() {
                    break;
                }
            }
            ds.warnings()
        });
        for frame in rx {
            let start = Instant::now();
            let mut stats = pool.install(|| {
                let batch = match &frame {
                    Frame::Depth(sf) => backproject(sf, &noise, cfg.stride),
                    Frame::Points(b) => b.clone(),
                };
                process_frame(&batch, &mut map)
            });
            stats.wall_time = start.elapsed();
            let comps = map.component_count();
            log::info!(
                "frame {}: {} points, {} blocks, +{} / -{} components, {} total, {:.1} ms",
                frames.len(),
                stats.points_in,
                stats.blocks_touched,
                stats.components_created,
                stats.components_pruned,
                comps,
                stats.wall_time.as_secs_f64() * 1e3
            );
            frames.push((stats, comps));
        }
        loader.join().expect("dataset loader panicked")
    });

    let mut report = summarize(&map, &frames, cfg.workers, warnings);
    let flush = |report: &EvalReport| -> Result<()> {
        write_text(&cfg.output.join(FRAMES_FILE), &render_frames_csv(&frames))?;
        write_text(&cfg.output.join(REPORT_FILE), &render_report(report))
    };
    flush(&report)?;
    if frames.is_empty() {
        return Err(Error::Dataset("no frame could be read".into()));
    }

    mapfile::save(&map, &cfg.output.join(MAP_FILE))?;
    let mixture = Mixture::from_map(&map)?;
    let (points, conf) = pool.install(|| export_points(&mixture, cfg.samples, cfg.export_mode, cfg.seed));
    write_points(&cfg.output.join(CLOUD_FILE), &points, &confidence_colors(&conf))?;
    report.sample_count = points.len();

    let reference = match (&cfg.reference, cfg.format) {
        (Some(p), _) => Some(load_reference(p)?),
        (None, DatasetFormat::SyntheticPlane) => Some(Reference::Mesh(cfg.plane_scan().mesh())),
        (None, _) => None,
    };
    if let Some(r) = reference {
        report.distance = Some(pool.install(|| cloud_distance(&points, &r))?);
    }
    flush(&report)?;

    Ok(RunOutcome {
        report,
        map,
        frames: frames.into_iter().map(|(f, _)| f).collect(),
        output: cfg.output.clone(),
    })
}

fn summarize(map: &GlobalMap, frames: &[(FrameStats, usize)], workers: usize, warnings: usize) -> EvalReport {
    let ms: Vec<f64> = frames.iter().map(|(f, _)| f.wall_time.as_secs_f64() * 1e3).collect();
    let total_s: f64 = ms.iter().sum::<f64>() / 1e3;
    let points: u64 = frames.iter().map(|(f, _)| f.points_in as u64).sum();
    EvalReport {
        frames: frames.len(),
        points_in: points,
        invalid_points: frames.iter().map(|(f, _)| f.invalid_points as u64).sum(),
        distance: None,
        sample_count: 0,
        frame_ms_p50: percentile(&ms, 0.5),
        frame_ms_p90: percentile(&ms, 0.9),
        frame_ms_max: ms.iter().copied().fold(0.0, f64::max),
        frames_per_second: if total_s > 0.0 {
            frames.len() as f64 / total_s
        } else {
            0.0
        },
        points_per_second: if total_s > 0.0 { points as f64 / total_s } else { 0.0 },
        block_count: map.block_count(),
        component_count: map.component_count(),
        components_pruned: frames.iter().map(|(f, _)| f.components_pruned as u64).sum(),
        parameter_bytes: map.parameter_bytes(),
        table_overhead_bytes: map.table().overhead_bytes(),
        workers,
        dataset_warnings: warnings,
    }
}

/// Distances from a saved cloud to a reference.
pub fn evaluate_cloud(cloud: &Path, reference: &Path) -> Result<crate::io::eval::DistanceStats> {
    let pts: Vec<Vec3> = PlyFile::read(cloud)?.vertices().map_err(|e| Error::Format {
        path: cloud.to_path_buf(),
        msg: e.to_string(),
    })?;
    cloud_distance(&pts, &load_reference(reference)?)
}
