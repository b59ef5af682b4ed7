//! Spatial partition: points to voxel blocks, blocks to processors.
//!
//! Blocks are indexed by the prime-multiplied XOR hash. The hash only picks a
//! bucket; each bucket chains full block coordinates, so colliding blocks still
//! resolve to distinct processors. Allocation takes the bucket lock, which
//! makes it exactly-once under concurrent routing.

use std::collections::HashMap;
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Arc;

use parking_lot::Mutex;
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::linalg::Vec3;
use crate::map::GlobalMap;
use crate::model::{GaussianComponent, Hyperparameters};

/// Integer block index: `floor(p / (voxel_size * block_side))` per axis.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Default)]
pub struct BlockCoord {
    pub x: i32,
    pub y: i32,
    pub z: i32,
}

impl BlockCoord {
    pub const fn new(x: i32, y: i32, z: i32) -> Self {
        Self { x, y, z }
    }

    /// Chebyshev distance in blocks.
    pub fn chebyshev(&self, other: &BlockCoord) -> i64 {
        let dx = (i64::from(self.x) - i64::from(other.x)).abs();
        let dy = (i64::from(self.y) - i64::from(other.y)).abs();
        let dz = (i64::from(self.z) - i64::from(other.z)).abs();
        dx.max(dy).max(dz)
    }
}

/// One local mixture: the components of a block plus its CRP point count.
#[derive(Clone, Debug, PartialEq)]
pub struct BlockProcessor {
    pub coord: BlockCoord,
    pub components: Vec<GaussianComponent>,
    /// Points ever routed here; never decreases.
    pub point_count: u64,
}

impl BlockProcessor {
    pub fn new(coord: BlockCoord) -> Self {
        Self {
            coord,
            components: Vec::new(),
            point_count: 0,
        }
    }
}

pub type BlockHandle = Arc<Mutex<BlockProcessor>>;

pub fn point_to_block(p: &Vec3, hyper: &Hyperparameters) -> Result<BlockCoord> {
    if !(p.x.is_finite() && p.y.is_finite() && p.z.is_finite()) {
        return Err(Error::InvalidPoint(format!("non-finite coordinate {p:?}")));
    }
    let extent = hyper.block_extent();
    let index = |v: f64| -> Result<i32> {
        let f = (v / extent).floor();
        if f < f64::from(i32::MIN) || f > f64::from(i32::MAX) {
            return Err(Error::InvalidPoint(format!("coordinate {v} out of range")));
        }
        Ok(f as i32)
    };
    Ok(BlockCoord::new(index(p.x)?, index(p.y)?, index(p.z)?))
}

/// `((x·p₁) xor (y·p₂) xor (z·p₃)) mod n` in wrapping 64-bit arithmetic.
pub fn hash_key(b: &BlockCoord, hyper: &Hyperparameters) -> usize {
    hash_with(b, &hyper.hash_primes, hyper.table_size)
}

#[inline]
fn hash_with(b: &BlockCoord, primes: &[i64; 3], n: usize) -> usize {
    let h = i64::from(b.x).wrapping_mul(primes[0])
        ^ i64::from(b.y).wrapping_mul(primes[1])
        ^ i64::from(b.z).wrapping_mul(primes[2]);
    (h as i128).rem_euclid(n as i128) as usize
}

type Bucket = Mutex<Vec<(BlockCoord, BlockHandle)>>;

/// Hash table of block processors with per-bucket locking.
pub struct BlockTable {
    primes: [i64; 3],
    buckets: Box<[Bucket]>,
    len: AtomicUsize,
}

impl BlockTable {
    pub fn new(hyper: &Hyperparameters) -> Self {
        let buckets = (0..hyper.table_size).map(|_| Mutex::new(Vec::new())).collect();
        Self {
            primes: hyper.hash_primes,
            buckets,
            len: AtomicUsize::new(0),
        }
    }

    #[inline]
    fn bucket(&self, coord: &BlockCoord) -> &Bucket {
        &self.buckets[hash_with(coord, &self.primes, self.buckets.len())]
    }

    pub fn get(&self, coord: &BlockCoord) -> Option<BlockHandle> {
        self.bucket(coord)
            .lock()
            .iter()
            .find(|(c, _)| c == coord)
            .map(|(_, h)| Arc::clone(h))
    }

    /// Returns the processor for `coord`, creating it if absent. The flag is
    /// true for the single caller that performed the allocation.
    pub fn get_or_allocate(&self, coord: BlockCoord) -> (BlockHandle, bool) {
        let mut chain = self.bucket(&coord).lock();
        if let Some((_, h)) = chain.iter().find(|(c, _)| *c == coord) {
            return (Arc::clone(h), false);
        }
        let handle = Arc::new(Mutex::new(BlockProcessor::new(coord)));
        chain.push((coord, Arc::clone(&handle)));
        self.len.fetch_add(1, Ordering::Relaxed);
        (handle, true)
    }

    /// Inserts a fully built processor, replacing any existing one at its coordinate.
    pub fn insert(&self, block: BlockProcessor) {
        let coord = block.coord;
        let mut chain = self.bucket(&coord).lock();
        let handle = Arc::new(Mutex::new(block));
        match chain.iter_mut().find(|(c, _)| *c == coord) {
            Some(slot) => slot.1 = handle,
            None => {
                chain.push((coord, handle));
                self.len.fetch_add(1, Ordering::Relaxed);
            }
        }
    }

    pub fn len(&self) -> usize {
        self.len.load(Ordering::Relaxed)
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn bucket_count(&self) -> usize {
        self.buckets.len()
    }

    /// Every handle, sorted by block coordinate.
    pub fn handles(&self) -> Vec<(BlockCoord, BlockHandle)> {
        let mut out = Vec::with_capacity(self.len());
        for bucket in self.buckets.iter() {
            let chain = bucket.lock();
            out.extend(chain.iter().map(|(c, h)| (*c, Arc::clone(h))));
        }
        out.sort_unstable_by_key(|(c, _)| *c);
        out
    }

    /// Bytes held by the table itself, excluding component payloads.
    pub fn overhead_bytes(&self) -> usize {
        let per_entry = std::mem::size_of::<(BlockCoord, BlockHandle)>() + std::mem::size_of::<Mutex<BlockProcessor>>();
        self.buckets.len() * std::mem::size_of::<Bucket>() + self.len() * per_entry
    }
}

/// Points of one frame that fall into one block, in input order.
pub struct RoutedBlock {
    pub coord: BlockCoord,
    pub indices: Vec<usize>,
    pub handle: BlockHandle,
    pub allocated: bool,
}

/// Result of routing a frame.
pub struct RoutedFrame {
    /// Sorted by block coordinate.
    pub blocks: Vec<RoutedBlock>,
    pub invalid_points: usize,
    pub blocks_allocated: usize,
}

impl RoutedFrame {
    pub fn partition(&self) -> Vec<(BlockCoord, &[usize])> {
        self.blocks.iter().map(|b| (b.coord, b.indices.as_slice())).collect()
    }
}

/// Buckets point indices by block and allocates any block not seen before.
pub fn route_frame(points: &[Vec3], map: &GlobalMap) -> RoutedFrame {
    let hyper = map.hyper();
    let coords: Vec<Option<BlockCoord>> = points.par_iter().map(|p| point_to_block(p, hyper).ok()).collect();

    let mut slot_of: HashMap<BlockCoord, usize> = HashMap::new();
    let mut groups: Vec<(BlockCoord, Vec<usize>)> = Vec::new();
    let mut invalid_points = 0;
    let mut last: Option<(BlockCoord, usize)> = None;
    for (i, coord) in coords.into_iter().enumerate() {
        let Some(coord) = coord else {
            invalid_points += 1;
            continue;
        };
        let slot = match last {
            Some((c, s)) if c == coord => s,
            _ => *slot_of.entry(coord).or_insert_with(|| {
                groups.push((coord, Vec::new()));
                groups.len() - 1
            }),
        };
        groups[slot].1.push(i);
        last = Some((coord, slot));
    }
    if invalid_points > 0 {
        log::debug!("skipped {invalid_points} invalid points while routing");
    }
    groups.sort_unstable_by_key(|(c, _)| *c);

    let table = map.table();
    let blocks: Vec<RoutedBlock> = groups
        .into_par_iter()
        .map(|(coord, indices)| {
            let (handle, allocated) = table.get_or_allocate(coord);
            RoutedBlock {
                coord,
                indices,
                handle,
                allocated,
            }
        })
        .collect();
    let blocks_allocated = blocks.iter().filter(|b| b.allocated).count();
    RoutedFrame {
        blocks,
        invalid_points,
        blocks_allocated,
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn unit_extent() -> Hyperparameters {
        let mut h = Hyperparameters::for_voxel_size(0.125);
        h.table_size = 1 << 10;
        h
    }

    #[test]
    fn block_of_origin() {
        let b = point_to_block(&Vec3::zeros(), &unit_extent()).unwrap();
        assert_eq!(b, BlockCoord::new(0, 0, 0));
    }

    #[test]
    fn block_floor_semantics() {
        let h = unit_extent();
        assert_eq!(
            point_to_block(&Vec3::new(1.5, -0.2, 0.9), &h).unwrap(),
            BlockCoord::new(1, -1, 0)
        );
        assert_eq!(
            point_to_block(&Vec3::new(0.999_999_999, 0.0, 0.0), &h).unwrap(),
            BlockCoord::new(0, 0, 0)
        );
        assert_eq!(
            point_to_block(&Vec3::new(-0.1, 0.0, 0.0), &h).unwrap(),
            BlockCoord::new(-1, 0, 0)
        );
    }

    #[test]
    fn non_finite_point_is_invalid() {
        let h = unit_extent();
        assert!(matches!(
            point_to_block(&Vec3::new(f64::NAN, 0.0, 0.0), &h),
            Err(Error::InvalidPoint(_))
        ));
        assert!(point_to_block(&Vec3::new(0.0, f64::INFINITY, 0.0), &h).is_err());
        assert!(point_to_block(&Vec3::new(0.0, 0.0, 1e300), &h).is_err());
    }

    #[test]
    fn hash_examples() {
        let mut h = Hyperparameters::default();
        h.table_size = 1 << 18;
        assert_eq!(hash_key(&BlockCoord::new(0, 0, 0), &h), 0);
        let [p1, p2, p3] = h.hash_primes;
        let n = h.table_size as i64;
        assert_eq!(hash_key(&BlockCoord::new(1, 0, 0), &h) as i64, p1 % n);
        assert_eq!(hash_key(&BlockCoord::new(1, 1, 1), &h) as i64, (p1 ^ p2 ^ p3) % n);
    }

    #[test]
    fn hash_is_in_range_for_negative_coords() {
        let mut h = Hyperparameters::default();
        h.table_size = 1000;
        for x in -50..50 {
            let k = hash_key(&BlockCoord::new(x, -3 * x, x - 7), &h);
            assert!(k < 1000);
        }
        h.table_size = 1;
        assert_eq!(hash_key(&BlockCoord::new(-5, 9, 2), &h), 0);
    }

    #[test]
    fn collisions_resolve_to_distinct_processors() {
        let mut h = Hyperparameters::default();
        h.table_size = 1;
        let map = GlobalMap::new(h).unwrap();
        let a = BlockCoord::new(1, 2, 3);
        let b = BlockCoord::new(-4, 0, 9);
        let (ha, fa) = map.table().get_or_allocate(a);
        let (hb, fb) = map.table().get_or_allocate(b);
        assert!(fa && fb);
        assert!(!Arc::ptr_eq(&ha, &hb));
        assert_eq!(map.table().get(&a).unwrap().lock().coord, a);
        assert_eq!(map.table().get(&b).unwrap().lock().coord, b);
        assert_eq!(map.table().len(), 2);
    }

    #[test]
    fn concurrent_allocation_is_exactly_once() {
        let mut h = Hyperparameters::default();
        h.table_size = 64;
        let map = GlobalMap::new(h).unwrap();
        let coords: Vec<BlockCoord> = (0..200).map(|i| BlockCoord::new(i % 13, i / 13, -i)).collect();
        let created = AtomicUsize::new(0);
        std::thread::scope(|s| {
            for _ in 0..8 {
                s.spawn(|| {
                    for c in &coords {
                        if map.table().get_or_allocate(*c).1 {
                            created.fetch_add(1, Ordering::Relaxed);
                        }
                    }
                });
            }
        });
        assert_eq!(created.load(Ordering::Relaxed), coords.len());
        assert_eq!(map.table().len(), coords.len());
        let handles = map.table().handles();
        assert_eq!(handles.len(), coords.len());
        for (c, h) in handles {
            assert_eq!(h.lock().coord, c);
        }
    }

    #[test]
    fn routes_single_block() {
        let map = GlobalMap::new(unit_extent()).unwrap();
        let pts = vec![
            Vec3::new(0.1, 0.1, 0.1),
            Vec3::new(0.5, 0.2, 0.3),
            Vec3::new(0.9, 0.9, 0.9),
        ];
        let r = route_frame(&pts, &map);
        assert_eq!(r.blocks.len(), 1);
        assert_eq!(r.blocks[0].indices, vec![0, 1, 2]);
        assert_eq!(r.blocks_allocated, 1);
    }

    #[test]
    fn routes_two_blocks() {
        let map = GlobalMap::new(unit_extent()).unwrap();
        let pts = vec![Vec3::new(0.1, 0.1, 0.1), Vec3::new(1.1, 0.1, 0.1)];
        let r = route_frame(&pts, &map);
        let part = r.partition();
        assert_eq!(part.len(), 2);
        assert_eq!(part[0], (BlockCoord::new(0, 0, 0), &[0usize][..]));
        assert_eq!(part[1], (BlockCoord::new(1, 0, 0), &[1usize][..]));
    }

    #[test]
    fn routes_empty_frame() {
        let map = GlobalMap::new(unit_extent()).unwrap();
        let r = route_frame(&[], &map);
        assert!(r.blocks.is_empty());
        assert_eq!(r.blocks_allocated, 0);
        assert!(map.table().is_empty());
    }

    #[test]
    fn routing_skips_invalid_points_and_reuses_blocks() {
        let map = GlobalMap::new(unit_extent()).unwrap();
        let pts = vec![
            Vec3::new(0.1, 0.1, 0.1),
            Vec3::new(f64::NAN, 0.0, 0.0),
            Vec3::new(2.5, 0.1, 0.1),
            Vec3::new(0.2, 0.1, 0.1),
        ];
        let r = route_frame(&pts, &map);
        assert_eq!(r.invalid_points, 1);
        assert_eq!(r.blocks[0].indices, vec![0, 3]);
        assert_eq!(r.blocks[1].indices, vec![2]);
        let again = route_frame(&pts, &map);
        assert_eq!(again.blocks_allocated, 0);
    }

    proptest::proptest! {
        #[test]
        fn every_point_lands_in_exactly_one_bucket(
            pts in proptest::collection::vec((-5.0f64..5.0, -5.0f64..5.0, -5.0f64..5.0), 0..300)
        ) {
            let map = GlobalMap::new(unit_extent()).unwrap();
            let pts: Vec<Vec3> = pts.into_iter().map(|(x, y, z)| Vec3::new(x, y, z)).collect();
            let r = route_frame(&pts, &map);
            let mut seen = vec![0u32; pts.len()];
            for b in &r.blocks {
                proptest::prop_assert!(b.indices.windows(2).all(|w| w[0] < w[1]));
                for &i in &b.indices {
                    seen[i] += 1;
                    proptest::prop_assert_eq!(point_to_block(&pts[i], map.hyper()).unwrap(), b.coord);
                }
            }
            proptest::prop_assert!(seen.iter().all(|&s| s == 1));
        }
    }
}
