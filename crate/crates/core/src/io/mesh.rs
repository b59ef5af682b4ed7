//! Triangle meshes for reference geometry, read from PLY or OBJ.

use std::fs;
use std::path::Path;

use crate::error::{Error, Result};
use crate::io::bvh::{Aabb, Primitive};
use crate::io::ply::{PlyFile, PlyReadError};
use crate::linalg::Vec3;

#[derive(Clone, Debug, Default, PartialEq)]
pub struct TriangleMesh {
    pub vertices: Vec<Vec3>,
    pub triangles: Vec<[usize; 3]>,
}

/// A triangle by value, for distance queries.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Triangle(pub [Vec3; 3]);

impl Triangle {
    pub fn is_degenerate(&self) -> bool {
        let [a, b, c] = self.0;
        let n = (b - a).cross(&(c - a));
        !(n.norm_squared() > 1e-24) || !n.iter().all(|v| v.is_finite())
    }

    /// Closest point on the triangle to `p` (Voronoi-region walk).
    pub fn closest_point(&self, p: &Vec3) -> Vec3 {
        let [a, b, c] = self.0;
        let ab = b - a;
        let ac = c - a;
        let ap = p - a;
        let d1 = ab.dot(&ap);
        let d2 = ac.dot(&ap);
        if d1 <= 0.0 && d2 <= 0.0 {
            return a;
        }
        let bp = p - b;
        let d3 = ab.dot(&bp);
        let d4 = ac.dot(&bp);
        if d3 >= 0.0 && d4 <= d3 {
            return b;
        }
        let vc = d1 * d4 - d3 * d2;
        if vc <= 0.0 && d1 >= 0.0 && d3 <= 0.0 {
            return a + ab * (d1 / (d1 - d3));
        }
        let cp = p - c;
        let d5 = ab.dot(&cp);
        let d6 = ac.dot(&cp);
        if d6 >= 0.0 && d5 <= d6 {
            return c;
        }
        let vb = d5 * d2 - d1 * d6;
        if vb <= 0.0 && d2 >= 0.0 && d6 <= 0.0 {
            return a + ac * (d2 / (d2 - d6));
        }
        let va = d3 * d6 - d5 * d4;
        if va <= 0.0 && (d4 - d3) >= 0.0 && (d5 - d6) >= 0.0 {
            return b + (c - b) * ((d4 - d3) / ((d4 - d3) + (d5 - d6)));
        }
        let denom = 1.0 / (va + vb + vc);
        a + ab * (vb * denom) + ac * (vc * denom)
    }
}

impl Primitive for Triangle {
    fn bounds(&self) -> Aabb {
        let mut b = Aabb::from_point(&self.0[0]);
        b.grow(&self.0[1]);
        b.grow(&self.0[2]);
        b
    }

    fn centroid(&self) -> Vec3 {
        (self.0[0] + self.0[1] + self.0[2]) / 3.0
    }

    fn distance_sq(&self, p: &Vec3) -> f64 {
        (self.closest_point(p) - p).norm_squared()
    }
}

impl TriangleMesh {
    /// Non-degenerate triangles, plus the number skipped.
    pub fn triangle_list(&self) -> (Vec<Triangle>, usize) {
        let mut skipped = 0;
        let mut out = Vec::with_capacity(self.triangles.len());
        for t in &self.triangles {
            let tri = Triangle([self.vertices[t[0]], self.vertices[t[1]], self.vertices[t[2]]]);
            if tri.is_degenerate() {
                skipped += 1;
            } else {
                out.push(tri);
            }
        }
        (out, skipped)
    }

    /// Writes a Wavefront OBJ with 1-based face indices.
    pub fn write_obj(&self, path: &Path) -> Result<()> {
        use std::fmt::Write as _;
        let mut text = String::new();
        for v in &self.vertices {
            let _ = writeln!(text, "v {:.9} {:.9} {:.9}", v.x, v.y, v.z);
        }
        for t in &self.triangles {
            let _ = writeln!(text, "f {} {} {}", t[0] + 1, t[1] + 1, t[2] + 1);
        }
        fs::write(path, text).map_err(|e| Error::Export(format!("{}: {e}", path.display())))
    }

    /// Loads `.ply` or `.obj` by extension.
    pub fn load(path: &Path) -> Result<Self> {
        match path
            .extension()
            .and_then(|e| e.to_str())
            .map(str::to_ascii_lowercase)
            .as_deref()
        {
            Some("ply") => Self::from_ply(path),
            Some("obj") => Self::from_obj(path, &fs::read_to_string(path)?),
            _ => Err(Error::Format {
                path: path.to_path_buf(),
                msg: "reference mesh must be .ply or .obj".into(),
            }),
        }
    }

    fn from_ply(path: &Path) -> Result<Self> {
        let ply = PlyFile::read(path)?;
        let vertices = ply.vertices().map_err(|e| ply_err(path, e))?;
        let faces = ply.faces().map_err(|e| ply_err(path, e))?;
        let mut mesh = TriangleMesh {
            vertices,
            triangles: Vec::new(),
        };
        for f in faces {
            mesh.push_face(&f, path)?;
        }
        Ok(mesh)
    }

    fn from_obj(path: &Path, text: &str) -> Result<Self> {
        let mut mesh = TriangleMesh::default();
        let mut faces = Vec::new();
        for (lineno, line) in text.lines().enumerate() {
            let mut tok = line.split_whitespace();
            match tok.next() {
                Some("v") => {
                    let xyz: Vec<f64> =
                        tok.take(3)
                            .map(str::parse)
                            .collect::<Result<_, _>>()
                            .map_err(|_| Error::Format {
                                path: path.to_path_buf(),
                                msg: format!("bad vertex on line {}", lineno + 1),
                            })?;
                    if xyz.len() != 3 {
                        return Err(Error::Format {
                            path: path.to_path_buf(),
                            msg: format!("vertex with {} coordinates on line {}", xyz.len(), lineno + 1),
                        });
                    }
                    mesh.vertices.push(Vec3::new(xyz[0], xyz[1], xyz[2]));
                }
                Some("f") => {
                    let mut idx = Vec::new();
                    for t in tok {
                        // "v", "v/vt", "v/vt/vn" or "v//vn"; negative indices are relative
                        let raw: i64 = t.split('/').next().unwrap_or("").parse().map_err(|_| Error::Format {
                            path: path.to_path_buf(),
                            msg: format!("bad face index on line {}", lineno + 1),
                        })?;
                        let resolved = if raw < 0 {
                            mesh.vertices.len() as i64 + raw
                        } else {
                            raw - 1
                        };
                        idx.push(resolved);
                    }
                    faces.push(idx);
                }
                _ => {}
            }
        }
        for f in faces {
            let idx: Vec<usize> = f
                .into_iter()
                .map(|i| if i < 0 { usize::MAX } else { i as usize })
                .collect();
            mesh.push_face(&idx, path)?;
        }
        Ok(mesh)
    }

    fn push_face(&mut self, f: &[usize], path: &Path) -> Result<()> {
        if f.len() != 3 {
            log::warn!(
                "{}: skipping face with {} vertices (triangles only)",
                path.display(),
                f.len()
            );
            return Ok(());
        }
        if f.iter().any(|&i| i >= self.vertices.len()) {
            return Err(Error::Format {
                path: path.to_path_buf(),
                msg: format!("face {f:?} references a missing vertex"),
            });
        }
        self.triangles.push([f[0], f[1], f[2]]);
        Ok(())
    }
}

fn ply_err(path: &Path, e: PlyReadError) -> Error {
    Error::Format {
        path: path.to_path_buf(),
        msg: e.to_string(),
    }
}
