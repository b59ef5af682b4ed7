//! Minimal PLY reader (ascii, binary little/big endian) and binary point writer.

use std::fs;
use std::io::{BufWriter, Write};
use std::path::Path;

use thiserror::Error;

use crate::error::{Error, Result};
use crate::linalg::{sym_from_array, Mat3, Vec3};

#[derive(Debug, Error)]
pub enum PlyReadError {
    #[error("missing 'ply' magic line")]
    Magic,
    #[error("header: {0}")]
    Header(String),
    #[error("unknown scalar type '{0}'")]
    ScalarType(String),
    #[error("unexpected end of data in element '{0}'")]
    Truncated(String),
    #[error("bad ascii value '{0}'")]
    Ascii(String),
    #[error("element '{0}' lacks property '{1}'")]
    Missing(String, String),
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Encoding {
    Ascii,
    BinaryLittleEndian,
    BinaryBigEndian,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ScalarType {
    I8,
    U8,
    I16,
    U16,
    I32,
    U32,
    F32,
    F64,
}

impl ScalarType {
    fn parse(s: &str) -> std::result::Result<Self, PlyReadError> {
        Ok(match s {
            "char" | "int8" => Self::I8,
            "uchar" | "uint8" => Self::U8,
            "short" | "int16" => Self::I16,
            "ushort" | "uint16" => Self::U16,
            "int" | "int32" => Self::I32,
            "uint" | "uint32" => Self::U32,
            "float" | "float32" => Self::F32,
            "double" | "float64" => Self::F64,
            other => return Err(PlyReadError::ScalarType(other.into())),
        })
    }

    fn size(self) -> usize {
        match self {
            Self::I8 | Self::U8 => 1,
            Self::I16 | Self::U16 => 2,
            Self::I32 | Self::U32 | Self::F32 => 4,
            Self::F64 => 8,
        }
    }

    fn decode(self, b: &[u8], big: bool) -> f64 {
        macro_rules! num {
            ($t:ty, $n:expr) => {{
                let arr: [u8; $n] = b[..$n].try_into().unwrap();
                (if big {
                    <$t>::from_be_bytes(arr)
                } else {
                    <$t>::from_le_bytes(arr)
                }) as f64
            }};
        }
        match self {
            Self::I8 => b[0] as i8 as f64,
            Self::U8 => b[0] as f64,
            Self::I16 => num!(i16, 2),
            Self::U16 => num!(u16, 2),
            Self::I32 => num!(i32, 4),
            Self::U32 => num!(u32, 4),
            Self::F32 => num!(f32, 4),
            Self::F64 => num!(f64, 8),
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub enum Property {
    Scalar {
        name: String,
        ty: ScalarType,
    },
    List {
        name: String,
        count: ScalarType,
        item: ScalarType,
    },
}

impl Property {
    pub fn name(&self) -> &str {
        match self {
            Property::Scalar { name, .. } | Property::List { name, .. } => name,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub enum Column {
    Scalar(Vec<f64>),
    List(Vec<Vec<f64>>),
}

#[derive(Clone, Debug, PartialEq)]
pub struct Element {
    pub name: String,
    pub count: usize,
    pub properties: Vec<Property>,
    pub columns: Vec<Column>,
}

impl Element {
    pub fn scalar(&self, prop: &str) -> Option<&[f64]> {
        let i = self.properties.iter().position(|p| p.name() == prop)?;
        match &self.columns[i] {
            Column::Scalar(v) => Some(v),
            Column::List(_) => None,
        }
    }

    pub fn list(&self, prop: &str) -> Option<&[Vec<f64>]> {
        let i = self.properties.iter().position(|p| p.name() == prop)?;
        match &self.columns[i] {
            Column::List(v) => Some(v),
            Column::Scalar(_) => None,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct PlyFile {
    pub encoding: Encoding,
    pub elements: Vec<Element>,
}

/// Per-vertex covariance properties, packed upper triangle.
pub const COVARIANCE_PROPERTIES: [&str; 6] = ["cov_xx", "cov_xy", "cov_xz", "cov_yy", "cov_yz", "cov_zz"];

impl PlyFile {
    pub fn read(path: &Path) -> Result<Self> {
        let bytes = fs::read(path)?;
        Self::parse(&bytes).map_err(|e| Error::Format {
            path: path.to_path_buf(),
            msg: e.to_string(),
        })
    }

    pub fn parse(bytes: &[u8]) -> std::result::Result<Self, PlyReadError> {
        let mut pos = 0usize;
        let mut next_line = || -> Option<String> {
            if pos >= bytes.len() {
                return None;
            }
            let end = bytes[pos..]
                .iter()
                .position(|&b| b == b'\n')
                .map_or(bytes.len(), |i| pos + i);
            let line = String::from_utf8_lossy(&bytes[pos..end])
                .trim_end_matches('\r')
                .to_string();
            pos = (end + 1).min(bytes.len());
            Some(line)
        };
        if next_line().as_deref().map(str::trim) != Some("ply") {
            return Err(PlyReadError::Magic);
        }
        let mut encoding = None;
        let mut elements: Vec<Element> = Vec::new();
        loop {
            let line = next_line().ok_or_else(|| PlyReadError::Header("no end_header".into()))?;
            let tok: Vec<&str> = line.split_whitespace().collect();
            match tok.as_slice() {
                [] | ["comment", ..] | ["obj_info", ..] => {}
                ["format", fmt, _version] => {
                    encoding = Some(match *fmt {
                        "ascii" => Encoding::Ascii,
                        "binary_little_endian" => Encoding::BinaryLittleEndian,
                        "binary_big_endian" => Encoding::BinaryBigEndian,
                        other => return Err(PlyReadError::Header(format!("format '{other}'"))),
                    })
                }
                ["element", name, count] => elements.push(Element {
                    name: name.to_string(),
                    count: count.parse().map_err(|_| PlyReadError::Header(line.clone()))?,
                    properties: Vec::new(),
                    columns: Vec::new(),
                }),
                ["property", "list", count, item, name] => elements
                    .last_mut()
                    .ok_or_else(|| PlyReadError::Header("property before element".into()))?
                    .properties
                    .push(Property::List {
                        name: name.to_string(),
                        count: ScalarType::parse(count)?,
                        item: ScalarType::parse(item)?,
                    }),
                ["property", ty, name] => elements
                    .last_mut()
                    .ok_or_else(|| PlyReadError::Header("property before element".into()))?
                    .properties
                    .push(Property::Scalar {
                        name: name.to_string(),
                        ty: ScalarType::parse(ty)?,
                    }),
                ["end_header"] => break,
                _ => return Err(PlyReadError::Header(line.clone())),
            }
        }
        let encoding = encoding.ok_or_else(|| PlyReadError::Header("missing format line".into()))?;
        let body = &bytes[pos..];
        match encoding {
            Encoding::Ascii => read_ascii(body, &mut elements)?,
            Encoding::BinaryLittleEndian => read_binary(body, &mut elements, false)?,
            Encoding::BinaryBigEndian => read_binary(body, &mut elements, true)?,
        }
        Ok(Self { encoding, elements })
    }

    pub fn element(&self, name: &str) -> Option<&Element> {
        self.elements.iter().find(|e| e.name == name)
    }

    /// Vertex positions; a file without a vertex element yields none.
    pub fn vertices(&self) -> std::result::Result<Vec<Vec3>, PlyReadError> {
        let Some(v) = self.element("vertex") else {
            return Ok(Vec::new());
        };
        let col = |n: &str| {
            v.scalar(n)
                .ok_or_else(|| PlyReadError::Missing("vertex".into(), n.into()))
        };
        let (x, y, z) = (col("x")?, col("y")?, col("z")?);
        Ok((0..v.count).map(|i| Vec3::new(x[i], y[i], z[i])).collect())
    }

    /// Per-vertex covariances if all six packed properties are present.
    pub fn vertex_covariances(&self) -> Option<Vec<Mat3>> {
        let v = self.element("vertex")?;
        let cols: Vec<&[f64]> = COVARIANCE_PROPERTIES
            .iter()
            .map(|n| v.scalar(n))
            .collect::<Option<_>>()?;
        Some(
            (0..v.count)
                .map(|i| sym_from_array(std::array::from_fn(|k| cols[k][i])))
                .collect(),
        )
    }

    /// Face index lists from `vertex_indices` (or `vertex_index`).
    pub fn faces(&self) -> std::result::Result<Vec<Vec<usize>>, PlyReadError> {
        let Some(f) = self.element("face") else {
            return Ok(Vec::new());
        };
        let lists = f
            .list("vertex_indices")
            .or_else(|| f.list("vertex_index"))
            .ok_or_else(|| PlyReadError::Missing("face".into(), "vertex_indices".into()))?;
        Ok(lists
            .iter()
            .map(|l| {
                l.iter()
                    .map(|&i| if i < 0.0 { usize::MAX } else { i as usize })
                    .collect()
            })
            .collect())
    }
}

fn empty_columns(e: &Element) -> Vec<Column> {
    e.properties
        .iter()
        .map(|p| match p {
            Property::Scalar { .. } => Column::Scalar(Vec::with_capacity(e.count)),
            Property::List { .. } => Column::List(Vec::with_capacity(e.count)),
        })
        .collect()
}

fn read_ascii(body: &[u8], elements: &mut [Element]) -> std::result::Result<(), PlyReadError> {
    let text = String::from_utf8_lossy(body);
    let mut tokens = text.split_ascii_whitespace();
    for e in elements.iter_mut() {
        let mut cols = empty_columns(e);
        for _ in 0..e.count {
            let mut next = || -> std::result::Result<f64, PlyReadError> {
                let t = tokens.next().ok_or_else(|| PlyReadError::Truncated(e.name.clone()))?;
                t.parse().map_err(|_| PlyReadError::Ascii(t.into()))
            };
            for (p, c) in e.properties.iter().zip(cols.iter_mut()) {
                match (p, c) {
                    (Property::Scalar { .. }, Column::Scalar(v)) => v.push(next()?),
                    (Property::List { .. }, Column::List(v)) => {
                        let n = next()? as usize;
                        v.push((0..n).map(|_| next()).collect::<std::result::Result<_, _>>()?);
                    }
                    _ => unreachable!(),
                }
            }
        }
        e.columns = cols;
    }
    Ok(())
}

fn read_binary(body: &[u8], elements: &mut [Element], big: bool) -> std::result::Result<(), PlyReadError> {
    let mut pos = 0usize;
    for e in elements.iter_mut() {
        let mut cols = empty_columns(e);
        let mut take = |ty: ScalarType| -> std::result::Result<f64, PlyReadError> {
            let n = ty.size();
            let b = body
                .get(pos..pos + n)
                .ok_or_else(|| PlyReadError::Truncated(e.name.clone()))?;
            pos += n;
            Ok(ty.decode(b, big))
        };
        for _ in 0..e.count {
            for (p, c) in e.properties.iter().zip(cols.iter_mut()) {
                match (p, c) {
                    (Property::Scalar { ty, .. }, Column::Scalar(v)) => v.push(take(*ty)?),
                    (Property::List { count, item, .. }, Column::List(v)) => {
                        let n = take(*count)? as usize;
                        v.push((0..n).map(|_| take(*item)).collect::<std::result::Result<_, _>>()?);
                    }
                    _ => unreachable!(),
                }
            }
        }
        e.columns = cols;
    }
    Ok(())
}

/// Colors confidences on a log scale: highest red, lowest blue.
pub fn confidence_colors(confidence: &[f64]) -> Vec<[u8; 3]> {
    let logs: Vec<f64> = confidence.iter().map(|c| c.max(f64::MIN_POSITIVE).ln()).collect();
    let lo = logs.iter().copied().fold(f64::INFINITY, f64::min);
    let hi = logs.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    logs.iter()
        .map(|&l| {
            let t = if hi > lo { (l - lo) / (hi - lo) } else { 1.0 };
            let r = (255.0 * t).round() as u8;
            let g = (255.0 * (1.0 - (2.0 * t - 1.0).abs())).round() as u8;
            [r, g, 255 - r]
        })
        .collect()
}

/// Writes binary little-endian x,y,z float32 + red,green,blue uint8.
pub fn write_points(path: &Path, points: &[Vec3], colors: &[[u8; 3]]) -> Result<()> {
    assert_eq!(points.len(), colors.len());
    let export = |e: std::io::Error| Error::Export(format!("{}: {e}", path.display()));
    let file = fs::File::create(path).map_err(export)?;
    let mut w = BufWriter::new(file);
    write!(
        w,
        "ply\nformat binary_little_endian 1.0\nelement vertex {}\nproperty float x\nproperty float y\nproperty float z\nproperty uchar red\nproperty uchar green\nproperty uchar blue\nend_header\n",
        points.len()
    )
    .map_err(export)?;
    let mut buf = Vec::with_capacity(points.len() * 15);
    for (p, c) in points.iter().zip(colors) {
        for k in 0..3 {
            buf.extend_from_slice(&(p[k] as f32).to_le_bytes());
        }
        buf.extend_from_slice(c);
    }
    w.write_all(&buf).map_err(export)?;
    w.flush().map_err(export)
}

/// Writes binary little-endian float64 points with packed covariance properties.
pub fn write_points_with_covariance(path: &Path, points: &[Vec3], covs: &[Mat3]) -> Result<()> {
    assert_eq!(points.len(), covs.len());
    let export = |e: std::io::Error| Error::Export(format!("{}: {e}", path.display()));
    let mut w = BufWriter::new(fs::File::create(path).map_err(export)?);
    let mut header = format!(
        "ply\nformat binary_little_endian 1.0\nelement vertex {}\nproperty double x\nproperty double y\nproperty double z\n",
        points.len()
    );
    for n in COVARIANCE_PROPERTIES {
        header.push_str(&format!("property double {n}\n"));
    }
    header.push_str("end_header\n");
    w.write_all(header.as_bytes()).map_err(export)?;
    for (p, c) in points.iter().zip(covs) {
        for v in p.iter().chain(crate::linalg::sym_to_array(c).iter()) {
            w.write_all(&v.to_le_bytes()).map_err(export)?;
        }
    }
    w.flush().map_err(export)
}
