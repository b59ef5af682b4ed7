//! Run configuration: a flat TOML table of scalar keys.
//!
//! Relative paths are resolved against the configuration file's directory.
//! Unset model keys fall back to the defaults for the configured voxel size.

use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::io::dataset::{Dataset, DEFAULT_DEPTH_SCALE};
use crate::io::export::ExportMode;
use crate::io::synthetic::{GmmStream, PlaneScan};
use crate::model::{default_prune_threshold, AssignmentRule, Hyperparameters, DEFAULT_HASH_PRIMES};
use crate::sensor::{DepthNoise, Intrinsics, NoiseModel};

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum DatasetFormat {
    DepthSequence,
    PlySequence,
    #[default]
    SyntheticPlane,
    SyntheticGmm,
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum AssignmentName {
    #[default]
    MaxPosterior,
    Sample,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub format: DatasetFormat,
    /// Directory of frames (depth or PLY sequences).
    pub dataset: Option<PathBuf>,
    /// Trajectory file; defaults to `<dataset>/trajectory.txt`.
    pub trajectory: Option<PathBuf>,
    /// Meters per depth count.
    pub depth_scale: f64,
    /// Reference mesh (`.obj`, `.ply` with faces) or cloud (`.ply` without faces).
    pub reference: Option<PathBuf>,

    pub fx: f64,
    pub fy: f64,
    pub cx: f64,
    pub cy: f64,
    pub width: u32,
    pub height: u32,

    pub sigma_uv: f64,
    pub depth_noise_offset: f64,
    pub depth_noise_quadratic: f64,
    pub depth_noise_vertex: f64,

    pub voxel_size: f64,
    pub alpha: f64,
    pub base_sigma: Option<f64>,
    pub truncation: usize,
    pub prune_threshold: Option<f64>,
    pub grace_frames: u64,
    pub block_side: u32,
    pub table_size: usize,
    pub assignment: AssignmentName,

    pub workers: usize,
    pub stride: u32,
    /// Cap on frames integrated; synthetic scenes also use it as their length.
    pub frames: Option<usize>,
    pub output: PathBuf,
    pub seed: u64,
    /// Points drawn for export and evaluation.
    pub samples: usize,
    pub export_mode: ExportMode,

    /// Synthetic plane: fraction of valid pixels replaced by clutter.
    pub outlier_fraction: f64,
    /// Synthetic plane: half the side length, meters.
    pub plane_half_size: f64,
    /// Synthetic GMM: points per frame.
    pub points_per_frame: usize,
}

impl Default for RunConfig {
    fn default() -> Self {
        let intr = Intrinsics::default();
        let noise = NoiseModel::default();
        let h = Hyperparameters::default();
        Self {
            format: DatasetFormat::default(),
            dataset: None,
            trajectory: None,
            depth_scale: DEFAULT_DEPTH_SCALE,
            reference: None,
            fx: intr.fx,
            fy: intr.fy,
            cx: intr.cx,
            cy: intr.cy,
            width: intr.width,
            height: intr.height,
            sigma_uv: noise.sigma_uv,
            depth_noise_offset: noise.depth.offset,
            depth_noise_quadratic: noise.depth.quadratic,
            depth_noise_vertex: noise.depth.vertex,
            voxel_size: h.voxel_size,
            alpha: h.alpha,
            base_sigma: None,
            truncation: h.truncation,
            prune_threshold: None,
            grace_frames: h.grace_frames,
            block_side: h.block_side,
            table_size: h.table_size,
            assignment: AssignmentName::default(),
            workers: std::thread::available_parallelism().map_or(1, |n| n.get()),
            stride: 1,
            frames: None,
            output: PathBuf::from("out"),
            seed: 0,
            samples: 150_000,
            export_mode: ExportMode::Samples,
            outlier_fraction: 0.0,
            plane_half_size: PlaneScan::default().half_size,
            points_per_frame: 10_000,
        }
    }
}

impl RunConfig {
    /// Parses and validates a configuration file.
    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::Config(format!("{}: {e}", path.display())))?;
        let mut cfg = Self::parse(&text)?;
        cfg.resolve_paths(path.parent().unwrap_or(Path::new(".")));
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn parse(text: &str) -> Result<Self> {
        toml::from_str(text).map_err(|e| Error::Config(e.to_string()))
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("flat config always serializes")
    }

    fn resolve_paths(&mut self, base: &Path) {
        for p in [&mut self.dataset, &mut self.trajectory, &mut self.reference]
            .into_iter()
            .flatten()
        {
            if p.is_relative() {
                *p = base.join(&*p);
            }
        }
        if self.output.is_relative() {
            self.output = base.join(&self.output);
        }
    }

    pub fn intrinsics(&self) -> Intrinsics {
        Intrinsics {
            fx: self.fx,
            fy: self.fy,
            cx: self.cx,
            cy: self.cy,
            width: self.width,
            height: self.height,
        }
    }

    pub fn noise(&self) -> NoiseModel {
        NoiseModel {
            sigma_uv: self.sigma_uv,
            depth: DepthNoise {
                offset: self.depth_noise_offset,
                quadratic: self.depth_noise_quadratic,
                vertex: self.depth_noise_vertex,
            },
        }
    }

    pub fn hyperparameters(&self) -> Hyperparameters {
        let base_sigma = self.base_sigma.unwrap_or(self.voxel_size / 2.0);
        Hyperparameters {
            alpha: self.alpha,
            base_sigma,
            truncation: self.truncation,
            prune_threshold: self
                .prune_threshold
                .unwrap_or_else(|| default_prune_threshold(base_sigma)),
            grace_frames: self.grace_frames,
            voxel_size: self.voxel_size,
            block_side: self.block_side,
            hash_primes: DEFAULT_HASH_PRIMES,
            table_size: self.table_size,
            assignment: match self.assignment {
                AssignmentName::MaxPosterior => AssignmentRule::MaxPosterior,
                AssignmentName::Sample => AssignmentRule::Sample { seed: self.seed },
            },
        }
    }

    pub fn plane_scan(&self) -> PlaneScan {
        let d = PlaneScan::default();
        PlaneScan {
            frames: self.frames.unwrap_or(d.frames),
            outlier_fraction: self.outlier_fraction,
            half_size: self.plane_half_size,
            intrinsics: self.intrinsics(),
            noise: self.noise(),
            seed: self.seed,
            ..d
        }
    }

    pub fn gmm_stream(&self) -> GmmStream {
        let d = GmmStream::default();
        GmmStream {
            frames: self.frames.unwrap_or(d.frames),
            points_per_frame: self.points_per_frame,
            seed: self.seed,
            ..d
        }
    }

    fn dataset_dir(&self) -> Result<&Path> {
        self.dataset
            .as_deref()
            .ok_or_else(|| Error::Config(format!("format {:?} needs a 'dataset' directory", self.format)))
    }

    pub fn trajectory_path(&self) -> Result<PathBuf> {
        match &self.trajectory {
            Some(t) => Ok(t.clone()),
            None => Ok(self.dataset_dir()?.join("trajectory.txt")),
        }
    }

    pub fn validate(&self) -> Result<()> {
        let fail = |m: String| Err(Error::Config(m));
        if self.workers < 1 {
            return fail("workers must be at least 1".into());
        }
        if self.stride < 1 {
            return fail("stride must be at least 1".into());
        }
        if !(self.depth_scale > 0.0) {
            return fail("depth_scale must be positive".into());
        }
        if !(self.plane_half_size > 0.0) {
            return fail("plane_half_size must be positive".into());
        }
        if !(0.0..1.0).contains(&self.outlier_fraction) {
            return fail("outlier_fraction must be in [0, 1)".into());
        }
        self.hyperparameters().validate()?;
        self.intrinsics().validate()?;
        self.noise().validate()?;
        match self.format {
            DatasetFormat::DepthSequence => {
                require_dir(self.dataset_dir()?)?;
                require_file(&self.trajectory_path()?)?;
            }
            DatasetFormat::PlySequence => require_dir(self.dataset_dir()?)?,
            DatasetFormat::SyntheticPlane | DatasetFormat::SyntheticGmm => {}
        }
        if let Some(r) = &self.reference {
            require_file(r)?;
        }
        Ok(())
    }

    /// Opens the configured frame source, capped at `frames` if set.
    pub fn open_dataset(&self) -> Result<Dataset> {
        let ds = match self.format {
            DatasetFormat::DepthSequence => Dataset::depth_sequence(
                self.dataset_dir()?,
                &self.trajectory_path()?,
                self.depth_scale,
                self.intrinsics(),
            )?,
            DatasetFormat::PlySequence => Dataset::ply_sequence(self.dataset_dir()?)?,
            DatasetFormat::SyntheticPlane => Dataset::synthetic_plane(self.plane_scan())?,
            DatasetFormat::SyntheticGmm => Dataset::synthetic_gmm(self.gmm_stream())?,
        };
        Ok(match self.frames {
            Some(n) => ds.take_frames(n),
            None => ds,
        })
    }
}

fn require_dir(p: &Path) -> Result<()> {
    if p.is_dir() {
        Ok(())
    } else {
        Err(Error::Config(format!("{} is not a directory", p.display())))
    }
}

fn require_file(p: &Path) -> Result<()> {
    if p.is_file() {
        Ok(())
    } else {
        Err(Error::Config(format!("{} does not exist", p.display())))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn flat_file_with_comments() {
        let text = r#"
# synthetic run
format = "synthetic-gmm"
voxel_size = 0.1   # meters
workers = 2
frames = 3
assignment = "sample"
seed = 4
"#;
        let cfg = RunConfig::parse(text).unwrap();
        assert_eq!(cfg.format, DatasetFormat::SyntheticGmm);
        assert_eq!(cfg.workers, 2);
        let h = cfg.hyperparameters();
        assert_eq!(h.base_sigma, 0.05);
        assert_eq!(h.prune_threshold, default_prune_threshold(0.05));
        assert_eq!(h.assignment, AssignmentRule::Sample { seed: 4 });
        cfg.validate().unwrap();
        assert_eq!(cfg.open_dataset().unwrap().len(), 3);
    }

    #[test]
    fn rejects_unknown_keys_and_bad_values() {
        assert!(RunConfig::parse("voxel = 0.1").is_err());
        let cfg = RunConfig::parse("workers = 0").unwrap();
        assert!(matches!(cfg.validate(), Err(Error::Config(_))));
        let cfg = RunConfig::parse("format = \"ply-sequence\"\ndataset = \"/nonexistent/dir\"").unwrap();
        assert!(cfg.validate().is_err());
    }

    #[test]
    fn toml_round_trip() {
        let cfg = RunConfig {
            reference: Some(PathBuf::from("mesh.obj")),
            frames: Some(7),
            ..RunConfig::default()
        };
        assert_eq!(RunConfig::parse(&cfg.to_toml()).unwrap(), cfg);
    }

    #[test]
    fn relative_paths_follow_the_config_file() {
        let dir = tempfile::tempdir().unwrap();
        fs::create_dir(dir.path().join("frames")).unwrap();
        let path = dir.path().join("run.toml");
        fs::write(
            &path,
            "format = \"ply-sequence\"\ndataset = \"frames\"\noutput = \"o\"\n",
        )
        .unwrap();
        let cfg = RunConfig::load(&path).unwrap();
        assert_eq!(cfg.dataset.unwrap(), dir.path().join("frames"));
        assert_eq!(cfg.output, dir.path().join("o"));
    }
}
