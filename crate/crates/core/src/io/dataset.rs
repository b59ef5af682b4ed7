//! Frame sources: depth-image sequences, PLY sequences, synthetic scenes.
//!
//! A depth sequence is a directory of 16-bit grayscale PNGs plus a
//! trajectory file with one `timestamp tx ty tz qx qy qz qw` line per
//! frame (camera-to-world). Images sorted by file name pair with trajectory
//! lines in order; `#` starts a comment. A PLY sequence is a directory of
//! `.ply` point clouds, optionally carrying per-vertex covariances.

use std::fs::{self, File};
use std::io::{BufReader, BufWriter};
use std::path::{Path, PathBuf};

use nalgebra::{Isometry3, Quaternion, Translation3, UnitQuaternion};

use crate::error::{Error, Result};
use crate::inference::PointBatch;
use crate::io::ply::{write_points, PlyFile};
use crate::io::synthetic::{GmmStream, PlaneScan};
use crate::sensor::{DepthImage, Intrinsics, SensorFrame};

/// Default depth unit: 1/5000 m per count.
pub const DEFAULT_DEPTH_SCALE: f64 = 1.0 / 5000.0;

pub enum Frame {
    Depth(SensorFrame),
    Points(PointBatch),
}

enum Source {
    Depth {
        items: Vec<(PathBuf, Isometry3<f64>)>,
        scale: f64,
        intrinsics: Intrinsics,
    },
    Ply {
        files: Vec<PathBuf>,
    },
    Plane(PlaneScan),
    Gmm(GmmStream),
}

/// An ordered, finite stream of frames. Unreadable frames are skipped with
/// a logged warning and counted.
pub struct Dataset {
    source: Source,
    next: usize,
    limit: usize,
    warnings: usize,
}

impl Dataset {
    pub fn depth_sequence(dir: &Path, trajectory: &Path, scale: f64, intrinsics: Intrinsics) -> Result<Self> {
        let files = list_files(dir, "png")?;
        let text =
            fs::read_to_string(trajectory).map_err(|e| Error::Dataset(format!("{}: {e}", trajectory.display())))?;
        let mut warnings = 0;
        let poses = parse_trajectory(&text, &mut warnings);
        if poses.len() != files.len() {
            log::warn!(
                "{} depth images but {} trajectory poses; using the first {}",
                files.len(),
                poses.len(),
                files.len().min(poses.len())
            );
            warnings += 1;
        }
        let mut items: Vec<(f64, PathBuf, Isometry3<f64>)> = files
            .into_iter()
            .zip(poses)
            .map(|(f, (t, pose))| (t, f, pose))
            .collect();
        items.sort_by(|a, b| a.0.total_cmp(&b.0));
        let items: Vec<_> = items.into_iter().map(|(_, f, p)| (f, p)).collect();
        let mut ds = Self::new(Source::Depth {
            items,
            scale,
            intrinsics,
        })?;
        ds.warnings = warnings;
        Ok(ds)
    }

    pub fn ply_sequence(dir: &Path) -> Result<Self> {
        Self::new(Source::Ply {
            files: list_files(dir, "ply")?,
        })
    }

    pub fn synthetic_plane(scan: PlaneScan) -> Result<Self> {
        Self::new(Source::Plane(scan))
    }

    pub fn synthetic_gmm(stream: GmmStream) -> Result<Self> {
        Self::new(Source::Gmm(stream))
    }

    fn new(source: Source) -> Result<Self> {
        let len = match &source {
            Source::Depth { items, .. } => items.len(),
            Source::Ply { files } => files.len(),
            Source::Plane(s) => s.frames,
            Source::Gmm(g) => g.frames,
        };
        if len == 0 {
            return Err(Error::Dataset("dataset contains no frames".into()));
        }
        Ok(Self {
            source,
            next: 0,
            limit: len,
            warnings: 0,
        })
    }

    /// Caps the number of frames yielded.
    pub fn take_frames(mut self, n: usize) -> Self {
        self.limit = self.limit.min(n);
        self
    }

    /// Frames this dataset will attempt to yield.
    pub fn len(&self) -> usize {
        self.limit
    }

    pub fn is_empty(&self) -> bool {
        self.limit == 0
    }

    pub fn warnings(&self) -> usize {
        self.warnings
    }

    fn load(&self, i: usize) -> Result<Frame> {
        match &self.source {
            Source::Depth {
                items,
                scale,
                intrinsics,
            } => {
                let (path, pose) = &items[i];
                let depth = read_depth_png(path, *scale)?;
                if depth.width != intrinsics.width || depth.height != intrinsics.height {
                    return Err(Error::Format {
                        path: path.clone(),
                        msg: format!(
                            "image is {}x{} but intrinsics expect {}x{}",
                            depth.width, depth.height, intrinsics.width, intrinsics.height
                        ),
                    });
                }
                Ok(Frame::Depth(SensorFrame {
                    depth,
                    intrinsics: *intrinsics,
                    pose: *pose,
                }))
            }
            Source::Ply { files } => read_point_batch(&files[i]).map(Frame::Points),
            Source::Plane(scan) => Ok(Frame::Depth(scan.render(i))),
            Source::Gmm(g) => Ok(Frame::Points(g.batch(i))),
        }
    }
}

impl Iterator for Dataset {
    type Item = Frame;

    fn next(&mut self) -> Option<Frame> {
        while self.next < self.limit {
            let i = self.next;
            self.next += 1;
            match self.load(i) {
                Ok(f) => return Some(f),
                Err(e) => {
                    log::warn!("skipping frame {i}: {e}");
                    self.warnings += 1;
                }
            }
        }
        None
    }
}

fn list_files(dir: &Path, ext: &str) -> Result<Vec<PathBuf>> {
    let rd = fs::read_dir(dir).map_err(|e| Error::Dataset(format!("{}: {e}", dir.display())))?;
    let mut files: Vec<PathBuf> = rd
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.is_file() && p.extension().is_some_and(|x| x.eq_ignore_ascii_case(ext)))
        .collect();
    files.sort();
    Ok(files)
}

/// Parses trajectory lines into `(timestamp, pose)`; malformed lines are
/// skipped and counted.
pub fn parse_trajectory(text: &str, warnings: &mut usize) -> Vec<(f64, Isometry3<f64>)> {
    let mut out = Vec::new();
    for (n, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let v: Vec<f64> = line.split_whitespace().filter_map(|t| t.parse().ok()).collect();
        let q = Quaternion::new(
            v.get(7).copied().unwrap_or(0.0),
            v.get(4).copied().unwrap_or(0.0),
            v.get(5).copied().unwrap_or(0.0),
            v.get(6).copied().unwrap_or(0.0),
        );
        if v.len() != 8 || !v.iter().all(|x| x.is_finite()) || q.norm() < 1e-9 {
            log::warn!("trajectory line {}: expected 'timestamp tx ty tz qx qy qz qw'", n + 1);
            *warnings += 1;
            continue;
        }
        let pose = Isometry3::from_parts(Translation3::new(v[1], v[2], v[3]), UnitQuaternion::from_quaternion(q));
        out.push((v[0], pose));
    }
    out
}

/// Formats a pose as a trajectory line.
pub fn format_trajectory_line(timestamp: f64, pose: &Isometry3<f64>) -> String {
    let t = pose.translation.vector;
    let q = pose.rotation.coords; // (i, j, k, w)
    format!(
        "{timestamp:.6} {:.9} {:.9} {:.9} {:.9} {:.9} {:.9} {:.9}",
        t.x, t.y, t.z, q.x, q.y, q.z, q.w
    )
}

/// Reads a 16-bit grayscale PNG; each count is `scale` meters, 0 is invalid.
pub fn read_depth_png(path: &Path, scale: f64) -> Result<DepthImage> {
    let fmt = |msg: String| Error::Format {
        path: path.to_path_buf(),
        msg,
    };
    let decoder = png::Decoder::new(BufReader::new(File::open(path)?));
    let mut reader = decoder.read_info().map_err(|e| fmt(e.to_string()))?;
    let size = reader
        .output_buffer_size()
        .ok_or_else(|| fmt("image too large".into()))?;
    let mut buf = vec![0u8; size];
    let info = reader.next_frame(&mut buf).map_err(|e| fmt(e.to_string()))?;
    if info.color_type != png::ColorType::Grayscale || info.bit_depth != png::BitDepth::Sixteen {
        return Err(fmt(format!(
            "expected 16-bit grayscale, found {:?} {:?}",
            info.color_type, info.bit_depth
        )));
    }
    let (w, h) = (info.width, info.height);
    let mut data = Vec::with_capacity(w as usize * h as usize);
    for row in buf.chunks_exact(info.line_size).take(h as usize) {
        data.extend(
            row.chunks_exact(2)
                .take(w as usize)
                .map(|b| f64::from(u16::from_be_bytes([b[0], b[1]])) * scale),
        );
    }
    DepthImage::new(w, h, data)
}

/// Writes depth (meters) as 16-bit grayscale; values are rounded to counts of
/// `scale` and clamped to the u16 range, invalid pixels become 0.
pub fn write_depth_png(path: &Path, depth: &DepthImage, scale: f64) -> Result<()> {
    let export = |e: String| Error::Export(format!("{}: {e}", path.display()));
    let file = File::create(path).map_err(|e| export(e.to_string()))?;
    let mut enc = png::Encoder::new(BufWriter::new(file), depth.width, depth.height);
    enc.set_color(png::ColorType::Grayscale);
    enc.set_depth(png::BitDepth::Sixteen);
    let mut writer = enc.write_header().map_err(|e| export(e.to_string()))?;
    let mut bytes = Vec::with_capacity(depth.data.len() * 2);
    for &z in &depth.data {
        let counts = if z.is_finite() && z > 0.0 {
            (z / scale).round().clamp(0.0, f64::from(u16::MAX)) as u16
        } else {
            0
        };
        bytes.extend_from_slice(&counts.to_be_bytes());
    }
    writer.write_image_data(&bytes).map_err(|e| export(e.to_string()))?;
    writer.finish().map_err(|e| export(e.to_string()))
}

/// Writes a plane scan as a depth sequence: `NNNNNN.png` frames plus
/// `trajectory.txt`, both readable by [`Dataset::depth_sequence`].
pub fn write_plane_sequence(scan: &PlaneScan, dir: &Path, scale: f64) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| Error::Export(format!("{}: {e}", dir.display())))?;
    let mut traj = String::from("# timestamp tx ty tz qx qy qz qw\n");
    for k in 0..scan.frames {
        let frame = scan.render(k);
        write_depth_png(&dir.join(format!("{k:06}.png")), &frame.depth, scale)?;
        traj.push_str(&format_trajectory_line(k as f64 / 30.0, &frame.pose));
        traj.push('\n');
    }
    let path = dir.join("trajectory.txt");
    fs::write(&path, traj).map_err(|e| Error::Export(format!("{}: {e}", path.display())))
}

/// Writes a GMM stream as a PLY sequence, one `NNNNNN.ply` per batch.
pub fn write_gmm_sequence(stream: &GmmStream, dir: &Path) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| Error::Export(format!("{}: {e}", dir.display())))?;
    for k in 0..stream.frames {
        let batch = stream.batch(k);
        write_points(
            &dir.join(format!("{k:06}.ply")),
            &batch.points,
            &vec![[255; 3]; batch.len()],
        )?;
    }
    Ok(())
}

/// Reads one PLY point cloud, with covariances when present.
pub fn read_point_batch(path: &Path) -> Result<PointBatch> {
    let ply = PlyFile::read(path)?;
    let points = ply.vertices().map_err(|e| Error::Format {
        path: path.to_path_buf(),
        msg: e.to_string(),
    })?;
    match ply.vertex_covariances() {
        Some(covs) => PointBatch::with_covariances(points, covs),
        None => Ok(PointBatch::new(points)),
    }
}
