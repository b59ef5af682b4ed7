//! Bounding-volume hierarchy for nearest-primitive queries.

use crate::linalg::Vec3;

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Aabb {
    pub min: Vec3,
    pub max: Vec3,
}

impl Aabb {
    pub fn empty() -> Self {
        Self {
            min: Vec3::repeat(f64::INFINITY),
            max: Vec3::repeat(f64::NEG_INFINITY),
        }
    }

    pub fn from_point(p: &Vec3) -> Self {
        Self { min: *p, max: *p }
    }

    pub fn grow(&mut self, p: &Vec3) {
        self.min = self.min.inf(p);
        self.max = self.max.sup(p);
    }

    pub fn merge(&self, other: &Aabb) -> Aabb {
        Aabb {
            min: self.min.inf(&other.min),
            max: self.max.sup(&other.max),
        }
    }

    /// Squared distance from `p` to the box (0 inside).
    #[inline]
    pub fn distance_sq(&self, p: &Vec3) -> f64 {
        let d = (self.min - p).sup(&Vec3::zeros()).sup(&(p - self.max));
        d.norm_squared()
    }
}

pub trait Primitive {
    fn bounds(&self) -> Aabb;
    fn centroid(&self) -> Vec3;
    fn distance_sq(&self, p: &Vec3) -> f64;
}

impl Primitive for Vec3 {
    fn bounds(&self) -> Aabb {
        Aabb::from_point(self)
    }

    fn centroid(&self) -> Vec3 {
        *self
    }

    fn distance_sq(&self, p: &Vec3) -> f64 {
        (self - p).norm_squared()
    }
}

#[derive(Clone, Debug)]
enum Node {
    Leaf { bounds: Aabb, start: usize, end: usize },
    Inner { bounds: Aabb, left: usize, right: usize },
}

impl Node {
    fn bounds(&self) -> &Aabb {
        match self {
            Node::Leaf { bounds, .. } | Node::Inner { bounds, .. } => bounds,
        }
    }
}

const LEAF_SIZE: usize = 4;

/// Median-split BVH. Primitives are reordered on construction; `nearest`
/// reports indices into the original input order.
pub struct Bvh<P> {
    nodes: Vec<Node>,
    prims: Vec<P>,
    order: Vec<usize>,
}

impl<P: Primitive> Bvh<P> {
    pub fn build(prims: Vec<P>) -> Self {
        let mut items: Vec<(usize, P)> = prims.into_iter().enumerate().collect();
        let mut nodes = Vec::new();
        if !items.is_empty() {
            let n = items.len();
            build_node(&mut items, 0, n, &mut nodes);
        }
        let (order, prims) = items.into_iter().unzip();
        Self { nodes, prims, order }
    }

    pub fn len(&self) -> usize {
        self.prims.len()
    }

    pub fn is_empty(&self) -> bool {
        self.prims.is_empty()
    }

    /// Closest primitive to `p`: original index and squared distance.
    pub fn nearest(&self, p: &Vec3) -> Option<(usize, f64)> {
        if self.nodes.is_empty() {
            return None;
        }
        let mut best = (usize::MAX, f64::INFINITY);
        let mut stack = vec![(0usize, self.nodes[0].bounds().distance_sq(p))];
        while let Some((idx, d_box)) = stack.pop() {
            if d_box > best.1 {
                continue;
            }
            match &self.nodes[idx] {
                Node::Leaf { start, end, .. } => {
                    for i in *start..*end {
                        let d = self.prims[i].distance_sq(p);
                        if d < best.1 || (d == best.1 && self.order[i] < best.0) {
                            best = (self.order[i], d);
                        }
                    }
                }
                Node::Inner { left, right, .. } => {
                    let dl = self.nodes[*left].bounds().distance_sq(p);
                    let dr = self.nodes[*right].bounds().distance_sq(p);
                    // push the farther child first so the closer one is popped next
                    if dl <= dr {
                        stack.push((*right, dr));
                        stack.push((*left, dl));
                    } else {
                        stack.push((*left, dl));
                        stack.push((*right, dr));
                    }
                }
            }
        }
        Some(best)
    }
}

fn build_node<P: Primitive>(items: &mut [(usize, P)], start: usize, end: usize, nodes: &mut Vec<Node>) -> usize {
    let slice = &mut items[start..end];
    let bounds = slice.iter().fold(Aabb::empty(), |acc, (_, p)| acc.merge(&p.bounds()));
    let idx = nodes.len();
    if slice.len() <= LEAF_SIZE {
        nodes.push(Node::Leaf { bounds, start, end });
        return idx;
    }
    let mut centroids = Aabb::empty();
    for (_, p) in slice.iter() {
        centroids.grow(&p.centroid());
    }
    let extent = centroids.max - centroids.min;
    let axis = extent.imax();
    let mid = slice.len() / 2;
    slice.select_nth_unstable_by(mid, |a, b| a.1.centroid()[axis].total_cmp(&b.1.centroid()[axis]));
    nodes.push(Node::Leaf { bounds, start, end });
    let left = build_node(items, start, start + mid, nodes);
    let right = build_node(items, start + mid, end, nodes);
    nodes[idx] = Node::Inner { bounds, left, right };
    idx
}
