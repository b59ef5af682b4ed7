//! Versioned binary map format.
//!
//! All values little-endian. Layout, in order:
//!
//! ```text
//! magic        8 bytes   "PFMAP\0\0\0"
//! version      u32       currently 1
//! alpha        f64
//! base_sigma   f64
//! truncation   u64
//! prune_thr    f64
//! grace        u64
//! voxel_size   f64
//! block_side   u32
//! primes       3 x i64
//! table_size   u64
//! rule         u8        0 = max-posterior, 1 = sample
//! rule_seed    u64       0 unless rule = 1
//! frame        u64       frames integrated so far
//! blocks       u64       block count, blocks follow sorted by (x, y, z)
//!   x, y, z    3 x i32
//!   points     u64       points ever routed to the block
//!   count      u32       components in the block
//!     weight       f64
//!     mean         3 x f64
//!     scatter      6 x f64   xx xy xz yy yz zz
//!     confidence   f64
//!     base_cov     6 x f64   xx xy xz yy yz zz
//!     birth_frame  u64
//! ```

use std::fs;
use std::path::Path;

use crate::error::{Error, Result};
use crate::linalg::{sym_from_array, sym_to_array, Vec3};
use crate::map::GlobalMap;
use crate::model::{AssignmentRule, GaussianComponent, Hyperparameters};
use crate::spatial::{BlockCoord, BlockProcessor};

pub const MAGIC: [u8; 8] = *b"PFMAP\0\0\0";
pub const VERSION: u32 = 1;

struct Writer(Vec<u8>);

impl Writer {
    fn f64(&mut self, v: f64) {
        self.0.extend_from_slice(&v.to_le_bytes());
    }
    fn u64(&mut self, v: u64) {
        self.0.extend_from_slice(&v.to_le_bytes());
    }
    fn u32(&mut self, v: u32) {
        self.0.extend_from_slice(&v.to_le_bytes());
    }
    fn i32(&mut self, v: i32) {
        self.0.extend_from_slice(&v.to_le_bytes());
    }
    fn i64(&mut self, v: i64) {
        self.0.extend_from_slice(&v.to_le_bytes());
    }
}

struct Reader<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take<const N: usize>(&mut self) -> std::result::Result<[u8; N], String> {
        let s = self
            .buf
            .get(self.pos..self.pos + N)
            .ok_or_else(|| format!("truncated at byte {}", self.pos))?;
        self.pos += N;
        Ok(s.try_into().expect("slice length checked"))
    }
    fn f64(&mut self) -> std::result::Result<f64, String> {
        self.take().map(f64::from_le_bytes)
    }
    fn u64(&mut self) -> std::result::Result<u64, String> {
        self.take().map(u64::from_le_bytes)
    }
    fn u32(&mut self) -> std::result::Result<u32, String> {
        self.take().map(u32::from_le_bytes)
    }
    fn i32(&mut self) -> std::result::Result<i32, String> {
        self.take().map(i32::from_le_bytes)
    }
    fn i64(&mut self) -> std::result::Result<i64, String> {
        self.take().map(i64::from_le_bytes)
    }
    fn u8(&mut self) -> std::result::Result<u8, String> {
        self.take::<1>().map(|b| b[0])
    }
    fn sym(&mut self) -> std::result::Result<crate::linalg::Mat3, String> {
        let mut a = [0.0; 6];
        for v in &mut a {
            *v = self.f64()?;
        }
        Ok(sym_from_array(a))
    }
}

/// Serializes the map. Output depends only on map contents.
pub fn encode(map: &GlobalMap) -> Vec<u8> {
    let h = map.hyper();
    let mut w = Writer(Vec::new());
    w.0.extend_from_slice(&MAGIC);
    w.u32(VERSION);
    w.f64(h.alpha);
    w.f64(h.base_sigma);
    w.u64(h.truncation as u64);
    w.f64(h.prune_threshold);
    w.u64(h.grace_frames);
    w.f64(h.voxel_size);
    w.u32(h.block_side);
    for p in h.hash_primes {
        w.i64(p);
    }
    w.u64(h.table_size as u64);
    match h.assignment {
        AssignmentRule::MaxPosterior => {
            w.0.push(0);
            w.u64(0);
        }
        AssignmentRule::Sample { seed } => {
            w.0.push(1);
            w.u64(seed);
        }
    }
    w.u64(map.frame_counter());
    let blocks = map.sorted_blocks();
    w.u64(blocks.len() as u64);
    for b in &blocks {
        w.i32(b.coord.x);
        w.i32(b.coord.y);
        w.i32(b.coord.z);
        w.u64(b.point_count);
        w.u32(b.components.len() as u32);
        for c in &b.components {
            w.f64(c.weight);
            for k in 0..3 {
                w.f64(c.mean[k]);
            }
            for v in sym_to_array(&c.scatter) {
                w.f64(v);
            }
            w.f64(c.confidence);
            for v in sym_to_array(&c.base_cov) {
                w.f64(v);
            }
            w.u64(c.birth_frame);
        }
    }
    w.0
}

pub fn decode(bytes: &[u8]) -> std::result::Result<GlobalMap, String> {
    let mut r = Reader { buf: bytes, pos: 0 };
    if r.take::<8>()? != MAGIC {
        return Err("not a map file (bad magic)".into());
    }
    let version = r.u32()?;
    if version != VERSION {
        return Err(format!("unsupported map version {version}"));
    }
    let alpha = r.f64()?;
    let base_sigma = r.f64()?;
    let truncation = r.u64()? as usize;
    let prune_threshold = r.f64()?;
    let grace_frames = r.u64()?;
    let voxel_size = r.f64()?;
    let block_side = r.u32()?;
    let hash_primes = [r.i64()?, r.i64()?, r.i64()?];
    let table_size = r.u64()? as usize;
    let tag = r.u8()?;
    let seed = r.u64()?;
    let assignment = match tag {
        0 => AssignmentRule::MaxPosterior,
        1 => AssignmentRule::Sample { seed },
        t => return Err(format!("unknown assignment rule tag {t}")),
    };
    let hyper = Hyperparameters {
        alpha,
        base_sigma,
        truncation,
        prune_threshold,
        grace_frames,
        voxel_size,
        block_side,
        hash_primes,
        table_size,
        assignment,
    };
    let frame = r.u64()?;
    let mut map = GlobalMap::new(hyper).map_err(|e| e.to_string())?;
    map.set_frame_counter(frame);
    let n_blocks = r.u64()?;
    for _ in 0..n_blocks {
        let coord = BlockCoord::new(r.i32()?, r.i32()?, r.i32()?);
        let mut block = BlockProcessor::new(coord);
        block.point_count = r.u64()?;
        let n = r.u32()?;
        for _ in 0..n {
            let weight = r.f64()?;
            let mean = Vec3::new(r.f64()?, r.f64()?, r.f64()?);
            let scatter = r.sym()?;
            let confidence = r.f64()?;
            let base_cov = r.sym()?;
            let birth_frame = r.u64()?;
            block.components.push(GaussianComponent {
                weight,
                mean,
                scatter,
                confidence,
                base_cov,
                birth_frame,
            });
        }
        if map.block(&coord).is_some() {
            return Err(format!("duplicate block {coord:?}"));
        }
        map.insert_block(block);
    }
    if r.pos != bytes.len() {
        return Err(format!("{} trailing bytes", bytes.len() - r.pos));
    }
    Ok(map)
}

pub fn save(map: &GlobalMap, path: &Path) -> Result<()> {
    fs::write(path, encode(map)).map_err(|e| Error::Export(format!("{}: {e}", path.display())))
}

pub fn load(path: &Path) -> Result<GlobalMap> {
    let bytes = fs::read(path)?;
    decode(&bytes).map_err(|msg| Error::Format {
        path: path.to_path_buf(),
        msg,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::inference::{process_frame, PointBatch};

    fn small_map() -> GlobalMap {
        let mut h = Hyperparameters::for_voxel_size(0.05);
        h.table_size = 1 << 10;
        h.assignment = AssignmentRule::Sample { seed: 9 };
        let mut map = GlobalMap::new(h).unwrap();
        let pts: Vec<Vec3> = (0..500)
            .map(|i| {
                let t = i as f64 * 0.013;
                Vec3::new(t.sin() * 0.7, (1.3 * t).cos() * 0.5, -0.2 + 0.01 * (7.0 * t).sin())
            })
            .collect();
        process_frame(&PointBatch::new(pts), &mut map);
        map
    }

    #[test]
    fn round_trip_is_exact() {
        let map = small_map();
        let bytes = encode(&map);
        let back = decode(&bytes).unwrap();
        assert_eq!(back.hyper(), map.hyper());
        assert_eq!(back.frame_counter(), map.frame_counter());
        assert_eq!(back.sorted_blocks(), map.sorted_blocks());
        assert_eq!(encode(&back), bytes);
    }

    #[test]
    fn rejects_damage() {
        let bytes = encode(&small_map());
        assert!(decode(&bytes[..bytes.len() - 1]).is_err());
        let mut bad = bytes.clone();
        bad[0] = b'X';
        assert!(decode(&bad).unwrap_err().contains("magic"));
        let mut extra = bytes;
        extra.push(0);
        assert!(decode(&extra).unwrap_err().contains("trailing"));
    }

    #[test]
    fn file_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("m.pfmap");
        let map = small_map();
        save(&map, &path).unwrap();
        assert_eq!(encode(&load(&path).unwrap()), encode(&map));
    }
}
