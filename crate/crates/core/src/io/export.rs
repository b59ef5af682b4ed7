//! Point-cloud export of a map: weighted samples or component means.

use std::path::Path;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::field::Mixture;
use crate::io::ply::{confidence_colors, write_points};
use crate::linalg::Vec3;
use crate::map::GlobalMap;

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ExportMode {
    /// `count` points drawn from the mixture.
    #[default]
    Samples,
    /// One point per component, at its mean.
    Means,
}

impl FromStr for ExportMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "samples" => Ok(Self::Samples),
            "means" => Ok(Self::Means),
            other => Err(Error::Config(format!(
                "export mode must be 'samples' or 'means', got '{other}'"
            ))),
        }
    }
}

/// Points with the confidence of the component each came from.
pub fn export_points(mixture: &Mixture, count: usize, mode: ExportMode, seed: u64) -> (Vec<Vec3>, Vec<f64>) {
    let comps = mixture.components();
    match mode {
        ExportMode::Means => comps.iter().map(|c| (c.mean, c.confidence)).unzip(),
        ExportMode::Samples => {
            let index: std::collections::HashMap<_, _> = comps.iter().enumerate().map(|(i, c)| (c.id, i)).collect();
            mixture
                .sample(count, seed)
                .into_iter()
                .map(|(p, id)| (p, comps[index[&id]].confidence))
                .unzip()
        }
    }
}

/// Writes a colored binary PLY; returns the vertex count.
pub fn export_ply(map: &GlobalMap, count: usize, path: &Path, mode: ExportMode, seed: u64) -> Result<usize> {
    let mixture = Mixture::from_map(map)?;
    let (points, conf) = export_points(&mixture, count, mode, seed);
    write_points(path, &points, &confidence_colors(&conf))?;
    Ok(points.len())
}
