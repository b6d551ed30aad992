//! Uniform-grid spatial index over a fixed point set.
//!
//! Points are bucketed by integer cell coordinates and kept in one array
//! sorted by cell key, so a cell lookup is a binary search. Distances are
//! always computed as `dx*dx + dy*dy + dz*dz` in that order so results are
//! bit-identical to an exhaustive scan using the same expression.

#[allow(unused_imports)]
use num_traits::Float;
use alloc::vec::Vec;
use nalgebra::Vector3;

type Key = (i64, i64, i64);

#[inline]
pub fn dist2(a: &Vector3<f64>, b: &Vector3<f64>) -> f64 {
    let dx = a.x - b.x;
    let dy = a.y - b.y;
    let dz = a.z - b.z;
    dx * dx + dy * dy + dz * dz
}

#[derive(Debug, Clone)]
pub struct PointGrid {
    cell: f64,
    inv_cell: f64,
    entries: Vec<(Key, u32)>,
    points: Vec<Vector3<f64>>,
    lo: Key,
    hi: Key,
}

impl PointGrid {
    /// Builds the index. `cell` must be positive and finite.
    pub fn new(points: &[Vector3<f64>], cell: f64) -> Self {
        assert!(cell > 0.0 && cell.is_finite(), "cell size must be positive");
        let inv_cell = 1.0 / cell;
        let mut entries: Vec<(Key, u32)> = points
            .iter()
            .enumerate()
            .map(|(i, p)| (key_of(p, inv_cell), i as u32))
            .collect();
        entries.sort_unstable();
        let mut lo = (i64::MAX, i64::MAX, i64::MAX);
        let mut hi = (i64::MIN, i64::MIN, i64::MIN);
        for (k, _) in &entries {
            lo = (lo.0.min(k.0), lo.1.min(k.1), lo.2.min(k.2));
            hi = (hi.0.max(k.0), hi.1.max(k.1), hi.2.max(k.2));
        }
        Self { cell, inv_cell, entries, points: points.to_vec(), lo, hi }
    }

    /// Cell size giving roughly `per_cell` points per occupied cell for
    /// points spread through their bounding box.
    pub fn auto_cell(points: &[Vector3<f64>], per_cell: f64) -> f64 {
        let Some(first) = points.first() else { return 1.0 };
        let (mut min, mut max) = (*first, *first);
        for p in points {
            min = min.inf(p);
            max = max.sup(p);
        }
        let ext = max - min;
        let biggest = ext.max().max(1e-9);
        let vol = ext.iter().map(|e| e.max(biggest * 1e-3)).product::<f64>();
        let cell = (vol * per_cell / points.len() as f64).cbrt();
        if cell.is_finite() && cell > 0.0 {
            cell
        } else {
            1.0
        }
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    pub fn cell_size(&self) -> f64 {
        self.cell
    }

    fn cell_range(&self, k: Key) -> &[(Key, u32)] {
        let start = self.entries.partition_point(|e| e.0 < k);
        let end = start + self.entries[start..].partition_point(|e| e.0 == k);
        &self.entries[start..end]
    }

    /// Calls `f(index, dist2)` for every point in the 27 cells around `q`.
    /// Every point closer than one cell size to `q` is visited.
    pub fn for_each_neighbor(&self, q: &Vector3<f64>, mut f: impl FnMut(usize, f64)) {
        let c = key_of(q, self.inv_cell);
        for dx in -1..=1 {
            for dy in -1..=1 {
                for dz in -1..=1 {
                    for &(_, i) in self.cell_range((c.0 + dx, c.1 + dy, c.2 + dz)) {
                        let i = i as usize;
                        f(i, dist2(q, &self.points[i]));
                    }
                }
            }
        }
    }

    /// Nearest point to `q` (squared distance), ties broken by lowest index.
    /// `skip` excludes one index, for nearest-other-point queries.
    pub fn nearest(&self, q: &Vector3<f64>, skip: Option<usize>) -> Option<(usize, f64)> {
        if self.points.is_empty() {
            return None;
        }
        let c = key_of(q, self.inv_cell);
        let max_ring = [
            (c.0 - self.lo.0).abs(),
            (c.0 - self.hi.0).abs(),
            (c.1 - self.lo.1).abs(),
            (c.1 - self.hi.1).abs(),
            (c.2 - self.lo.2).abs(),
            (c.2 - self.hi.2).abs(),
        ]
        .into_iter()
        .max()
        .unwrap_or(0);
        let mut best: Option<(usize, f64)> = None;
        let visit = |k: Key, best: &mut Option<(usize, f64)>| {
            for &(_, i) in self.cell_range(k) {
                let i = i as usize;
                if Some(i) == skip {
                    continue;
                }
                let d = dist2(q, &self.points[i]);
                match *best {
                    Some((bi, bd)) if d > bd || (d == bd && i > bi) => {}
                    _ => *best = Some((i, d)),
                }
            }
        };
        for r in 0..=max_ring {
            // Shell of cells at Chebyshev distance r.
            for dx in -r..=r {
                for dy in -r..=r {
                    if dx.abs() == r || dy.abs() == r {
                        for dz in -r..=r {
                            visit((c.0 + dx, c.1 + dy, c.2 + dz), &mut best);
                        }
                    } else {
                        visit((c.0 + dx, c.1 + dy, c.2 - r), &mut best);
                        if r > 0 {
                            visit((c.0 + dx, c.1 + dy, c.2 + r), &mut best);
                        }
                    }
                }
            }
            if let Some((_, bd)) = best {
                // Cells in ring r + 1 are at least r cells away from q.
                let bound = r as f64 * self.cell;
                if bd < bound * bound {
                    break;
                }
            }
        }
        best
    }
}


/// Static k-d tree for exact nearest-neighbor queries; ties resolve to the
/// lowest point index.
#[derive(Debug, Clone)]
pub struct KdTree {
    points: Vec<Vector3<f64>>,
    order: Vec<u32>,
    nodes: Vec<KdNode>,
}

#[derive(Debug, Clone, Copy)]
enum KdNode {
    Leaf { start: u32, end: u32 },
    Split { axis: u8, value: f64, left: u32, right: u32 },
}

const LEAF_SIZE: usize = 8;

impl KdTree {
    pub fn new(points: &[Vector3<f64>]) -> Self {
        let mut tree = Self {
            points: points.to_vec(),
            order: (0..points.len() as u32).collect(),
            nodes: Vec::new(),
        };
        if !points.is_empty() {
            tree.build(0, points.len());
        }
        tree
    }

    fn build(&mut self, start: usize, end: usize) -> u32 {
        let id = self.nodes.len() as u32;
        if end - start <= LEAF_SIZE {
            self.nodes.push(KdNode::Leaf { start: start as u32, end: end as u32 });
            return id;
        }
        let (mut lo, mut hi) = (Vector3::repeat(f64::INFINITY), Vector3::repeat(f64::NEG_INFINITY));
        for &i in &self.order[start..end] {
            lo = lo.inf(&self.points[i as usize]);
            hi = hi.sup(&self.points[i as usize]);
        }
        let axis = (hi - lo).imax();
        let mid = (start + end) / 2;
        let pts = &self.points;
        self.order[start..end].select_nth_unstable_by(mid - start, |a, b| {
            pts[*a as usize][axis].total_cmp(&pts[*b as usize][axis])
        });
        let value = self.points[self.order[mid] as usize][axis];
        self.nodes.push(KdNode::Leaf { start: 0, end: 0 });
        let left = self.build(start, mid);
        let right = self.build(mid, end);
        self.nodes[id as usize] = KdNode::Split { axis: axis as u8, value, left, right };
        id
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    /// Nearest point (index, squared distance); `skip` excludes one index.
    pub fn nearest(&self, q: &Vector3<f64>, skip: Option<usize>) -> Option<(usize, f64)> {
        if self.nodes.is_empty() {
            return None;
        }
        let mut best: Option<(usize, f64)> = None;
        let mut stack: Vec<(u32, f64)> = Vec::with_capacity(64);
        stack.push((0, 0.0));
        while let Some((node, bound)) = stack.pop() {
            if let Some((_, bd)) = best {
                if bound > bd {
                    continue;
                }
            }
            match self.nodes[node as usize] {
                KdNode::Leaf { start, end } => {
                    for &i in &self.order[start as usize..end as usize] {
                        let i = i as usize;
                        if Some(i) == skip {
                            continue;
                        }
                        let d = dist2(q, &self.points[i]);
                        match best {
                            Some((bi, bd)) if d > bd || (d == bd && i > bi) => {}
                            _ => best = Some((i, d)),
                        }
                    }
                }
                KdNode::Split { axis, value, left, right } => {
                    let diff = q[axis as usize] - value;
                    let (near, far) = if diff < 0.0 { (left, right) } else { (right, left) };
                    stack.push((far, diff * diff));
                    stack.push((near, bound));
                }
            }
        }
        best
    }
}

#[inline]
fn key_of(p: &Vector3<f64>, inv_cell: f64) -> Key {
    (
        (p.x * inv_cell).floor() as i64,
        (p.y * inv_cell).floor() as i64,
        (p.z * inv_cell).floor() as i64,
    )
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random_points(rng: &mut ChaCha8Rng, n: usize, scale: f64) -> Vec<Vector3<f64>> {
        (0..n)
            .map(|_| {
                Vector3::new(
                    rng.random_range(-scale..scale),
                    rng.random_range(-scale..scale),
                    rng.random_range(-scale..scale),
                )
            })
            .collect()
    }

    #[test]
    fn nearest_matches_exhaustive_scan() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        for trial in 0..20 {
            let pts = random_points(&mut rng, 50 + trial * 10, 1.0);
            let grid = PointGrid::new(&pts, PointGrid::auto_cell(&pts, 2.0));
            for _ in 0..50 {
                let q = random_points(&mut rng, 1, 3.0)[0];
                let mut best = (usize::MAX, f64::INFINITY);
                for (i, p) in pts.iter().enumerate() {
                    let d = dist2(&q, p);
                    if d < best.1 {
                        best = (i, d);
                    }
                }
                assert_eq!(grid.nearest(&q, None), Some(best));
            }
        }
    }

    #[test]
    fn kdtree_matches_exhaustive_scan() {
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        for trial in 0..20 {
            let mut pts = random_points(&mut rng, 30 + trial * 40, 1.0);
            // Flat and duplicated points exercise ties.
            for p in pts.iter_mut().take(10) {
                p.z = 0.0;
            }
            let dup = pts[3];
            pts.push(dup);
            let tree = KdTree::new(&pts);
            for _ in 0..100 {
                let q = random_points(&mut rng, 1, 3.0)[0];
                let mut best = (usize::MAX, f64::INFINITY);
                for (i, p) in pts.iter().enumerate() {
                    let d = dist2(&q, p);
                    if d < best.1 {
                        best = (i, d);
                    }
                }
                assert_eq!(tree.nearest(&q, None), Some(best));
            }
            let last = pts.len() - 1;
            assert_eq!(tree.nearest(&pts[last], None), Some((3, 0.0)));
            assert_eq!(tree.nearest(&pts[3], Some(3)), Some((last, 0.0)));
        }
    }

    #[test]
    fn nearest_ties_pick_lowest_index() {
        let pts = [Vector3::new(1.0, 0.0, 0.0), Vector3::new(-1.0, 0.0, 0.0)];
        let grid = PointGrid::new(&pts, 0.3);
        assert_eq!(grid.nearest(&Vector3::zeros(), None), Some((0, 1.0)));
        assert_eq!(grid.nearest(&Vector3::zeros(), Some(0)), Some((1, 1.0)));
    }
}
