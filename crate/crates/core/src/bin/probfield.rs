use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};

use probfield::io::config::{DatasetFormat, RunConfig};
use probfield::io::dataset::{write_gmm_sequence, write_plane_sequence, DEFAULT_DEPTH_SCALE};
use probfield::io::eval::{cloud_distance, EvalReport};
use probfield::io::export::{export_ply, ExportMode};
use probfield::io::report::render_report;
use probfield::io::run::{evaluate_cloud, load_reference, run};
use probfield::io::mapfile;
use probfield::{Mixture, Result};

#[derive(Parser)]
#[command(name = "probfield", version, about = "Streaming Gaussian-mixture scene mapping")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Integrate a dataset into a map, export it and write a report.
    Build(BuildArgs),
    /// Export a point cloud from a saved map.
    Sample {
        /// Saved map (`map.pfmap`).
        map: PathBuf,
        #[arg(long, default_value_t = 150_000)]
        count: usize,
        #[arg(long, value_enum, default_value_t = ModeArg::Samples)]
        mode: ModeArg,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long, default_value = "cloud.ply")]
        output: PathBuf,
    },
    /// Distance statistics from a cloud or a saved map to a reference.
    Eval {
        /// A `.ply` point cloud or a saved map.
        input: PathBuf,
        /// Reference mesh (`.obj`/`.ply`) or point cloud (`.ply`).
        #[arg(long)]
        reference: PathBuf,
        /// Points drawn when `input` is a map.
        #[arg(long, default_value_t = 150_000)]
        count: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
    /// Generate a synthetic dataset on disk.
    Synth {
        #[arg(value_enum)]
        scene: Scene,
        #[arg(long)]
        output: PathBuf,
        #[arg(long)]
        frames: Option<usize>,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Plane scenes: fraction of pixels replaced by clutter.
        #[arg(long, default_value_t = 0.0)]
        outlier_fraction: f64,
    },
}

#[derive(Clone, Copy, ValueEnum)]
enum ModeArg {
    Samples,
    Means,
}

impl From<ModeArg> for ExportMode {
    fn from(m: ModeArg) -> Self {
        match m {
            ModeArg::Samples => ExportMode::Samples,
            ModeArg::Means => ExportMode::Means,
        }
    }
}

#[derive(Clone, Copy, ValueEnum)]
enum Scene {
    Plane,
    Gmm,
}

#[derive(Clone, Copy, ValueEnum)]
enum FormatArg {
    DepthSequence,
    PlySequence,
    SyntheticPlane,
    SyntheticGmm,
}

#[derive(Args)]
struct BuildArgs {
    /// Flat TOML run configuration; flags override its values.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long, value_enum)]
    format: Option<FormatArg>,
    #[arg(long)]
    dataset: Option<PathBuf>,
    #[arg(long)]
    reference: Option<PathBuf>,
    #[arg(long)]
    voxel_size: Option<f64>,
    #[arg(long)]
    alpha: Option<f64>,
    #[arg(long)]
    truncation: Option<usize>,
    #[arg(long)]
    prune_threshold: Option<f64>,
    #[arg(long)]
    workers: Option<usize>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    frames: Option<usize>,
    #[arg(long)]
    stride: Option<u32>,
    #[arg(long)]
    output: Option<PathBuf>,
    #[arg(long)]
    samples: Option<usize>,
    #[arg(long, value_enum)]
    export_mode: Option<ModeArg>,
    #[arg(long)]
    outlier_fraction: Option<f64>,
}

impl BuildArgs {
    fn into_config(self) -> Result<RunConfig> {
        let mut cfg = match &self.config {
            Some(p) => RunConfig::load(p)?,
            None => RunConfig::default(),
        };
        if let Some(f) = self.format {
            cfg.format = match f {
                FormatArg::DepthSequence => DatasetFormat::DepthSequence,
                FormatArg::PlySequence => DatasetFormat::PlySequence,
                FormatArg::SyntheticPlane => DatasetFormat::SyntheticPlane,
                FormatArg::SyntheticGmm => DatasetFormat::SyntheticGmm,
            };
        }
        macro_rules! set {
            ($($field:ident),*) => {$(
                if let Some(v) = self.$field { cfg.$field = v.into(); }
            )*};
        }
        set!(
            voxel_size,
            alpha,
            truncation,
            workers,
            seed,
            stride,
            output,
            samples,
            outlier_fraction
        );
        if let Some(m) = self.export_mode {
            cfg.export_mode = m.into();
        }
        if self.dataset.is_some() {
            cfg.dataset = self.dataset;
        }
        if self.reference.is_some() {
            cfg.reference = self.reference;
        }
        if self.prune_threshold.is_some() {
            cfg.prune_threshold = self.prune_threshold;
        }
        if self.frames.is_some() {
            cfg.frames = self.frames;
        }
        cfg.validate()?;
        Ok(cfg)
    }
}

fn execute(cmd: Command) -> Result<()> {
    match cmd {
        Command::Build(args) => {
            let cfg = args.into_config()?;
            let out = run(&cfg)?;
            print!("{}", render_report(&out.report));
            eprintln!("artifacts in {}", out.output.display());
        }
        Command::Sample {
            map,
            count,
            mode,
            seed,
            output,
        } => {
            let map = mapfile::load(&map)?;
            let n = export_ply(&map, count, &output, mode.into(), seed)?;
            println!("wrote {n} points to {}", output.display());
        }
        Command::Eval {
            input,
            reference,
            count,
            seed,
        } => {
            let stats = if input.extension().is_some_and(|e| e == "ply") {
                evaluate_cloud(&input, &reference)?
            } else {
                let mixture = Mixture::from_map(&mapfile::load(&input)?)?;
                let pts: Vec<_> = mixture.sample(count, seed).into_iter().map(|(p, _)| p).collect();
                cloud_distance(&pts, &load_reference(&reference)?)?
            };
            let report = EvalReport {
                sample_count: stats.count,
                distance: Some(stats),
                ..EvalReport::default()
            };
            for line in render_report(&report).lines() {
                if line.starts_with("sample_count") || line.contains("distance_cm") {
                    println!("{line}");
                }
            }
        }
        Command::Synth {
            scene,
            output,
            frames,
            seed,
            outlier_fraction,
        } => {
            let cfg = RunConfig {
                frames,
                seed,
                outlier_fraction,
                ..RunConfig::default()
            };
            match scene {
                Scene::Plane => {
                    let scan = cfg.plane_scan();
                    write_plane_sequence(&scan, &output, DEFAULT_DEPTH_SCALE)?;
                    scan.mesh().write_obj(&output.join("reference.obj"))?;
                    println!(
                        "wrote {} depth frames, trajectory.txt and reference.obj to {}",
                        scan.frames,
                        output.display()
                    );
                }
                Scene::Gmm => {
                    let stream = cfg.gmm_stream();
                    write_gmm_sequence(&stream, &output)?;
                    println!("wrote {} point batches to {}", stream.frames, output.display());
                }
            }
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    match execute(Cli::parse().command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::FAILURE
        }
    }
}
