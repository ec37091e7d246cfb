//! Uniform bucket grids for fixed-radius and nearest-point queries.

use crate::geometry::Point;

/// Points bucketed by a square grid of side `bucket` over `[0, extent]^2`,
/// stored contiguously per bucket (counting sort).
#[derive(Debug, Clone)]
pub struct SpatialHash {
    bucket: f64,
    dim: usize,
    starts: Vec<u32>,
    items: Vec<u32>,
}

/// Buckets per axis never exceed this; smaller requested buckets are widened.
const MAX_DIM: f64 = 2048.0;

impl SpatialHash {
    pub fn new(extent: f64, bucket: f64) -> Self {
        let bucket = bucket.max(extent / MAX_DIM);
        let dim = ((extent / bucket).floor() as usize + 1).max(1);
        Self {
            bucket,
            dim,
            starts: vec![0; dim * dim + 1],
            items: Vec::new(),
        }
    }

    fn key_coords(&self, p: Point) -> (usize, usize) {
        let f = |v: f64| ((v / self.bucket).floor().max(0.0) as usize).min(self.dim - 1);
        (f(p.x), f(p.y))
    }

    /// Rebuilds the table with the points selected by `keep`, preserving
    /// ascending index order inside every bucket.
    pub fn rebuild<F>(&mut self, points: &[Point], keep: F)
    where
        F: Fn(usize) -> bool,
    {
        self.starts.iter_mut().for_each(|s| *s = 0);
        let mut keys = Vec::with_capacity(points.len());
        for (i, &p) in points.iter().enumerate() {
            if keep(i) {
                let (bx, by) = self.key_coords(p);
                let k = by * self.dim + bx;
                self.starts[k + 1] += 1;
                keys.push((i as u32, k));
            }
        }
        for k in 0..self.dim * self.dim {
            self.starts[k + 1] += self.starts[k];
        }
        self.items.clear();
        self.items.resize(keys.len(), 0);
        let mut fill = self.starts.clone();
        for (i, k) in keys {
            self.items[fill[k] as usize] = i;
            fill[k] += 1;
        }
    }

    /// Calls `f` with every stored index whose point lies within closed
    /// distance `radius` of `center`. Requires `radius <= bucket`.
    pub fn for_each_within<F>(&self, points: &[Point], center: Point, radius: f64, mut f: F)
    where
        F: FnMut(usize),
    {
        debug_assert!(radius <= self.bucket);
        let (bx, by) = self.key_coords(center);
        let r2 = radius * radius;
        for y in by.saturating_sub(1)..=(by + 1).min(self.dim - 1) {
            for x in bx.saturating_sub(1)..=(bx + 1).min(self.dim - 1) {
                let k = y * self.dim + x;
                for &i in &self.items[self.starts[k] as usize..self.starts[k + 1] as usize] {
                    if points[i as usize].dist2(center) <= r2 {
                        f(i as usize);
                    }
                }
            }
        }
    }
}

/// Nearest-point lookup over a fixed point set by expanding rings of buckets.
#[derive(Debug, Clone)]
pub struct NearestIndex {
    points: Vec<Point>,
    hash: SpatialHash,
}

impl NearestIndex {
    pub fn new(points: &[Point], extent: f64) -> Self {
        let per_bucket = 4.0;
        let buckets = (points.len() as f64 / per_bucket).sqrt().ceil().max(1.0);
        let mut hash = SpatialHash::new(extent, (extent / buckets).max(f64::MIN_POSITIVE));
        hash.rebuild(points, |_| true);
        Self {
            points: points.to_vec(),
            hash,
        }
    }

    /// Squared distance to the closest stored point (`inf` if empty).
    pub fn nearest_dist2(&self, q: Point) -> f64 {
        self.nearest(q).map_or(f64::INFINITY, |(_, d2)| d2)
    }

    /// Index and squared distance of the closest stored point; ties go to the
    /// lowest index.
    pub fn nearest(&self, q: Point) -> Option<(usize, f64)> {
        if self.points.is_empty() {
            return None;
        }
        let h = &self.hash;
        let (bx, by) = h.key_coords(q);
        let mut best: Option<(usize, f64)> = None;
        for ring in 0..=h.dim {
            let lo_x = bx.saturating_sub(ring);
            let hi_x = (bx + ring).min(h.dim - 1);
            let lo_y = by.saturating_sub(ring);
            let hi_y = (by + ring).min(h.dim - 1);
            for y in lo_y..=hi_y {
                for x in lo_x..=hi_x {
                    let on_ring = x + ring == bx || x == bx + ring || y + ring == by || y == by + ring;
                    if !on_ring {
                        continue;
                    }
                    let k = y * h.dim + x;
                    for &i in &h.items[h.starts[k] as usize..h.starts[k + 1] as usize] {
                        let d2 = self.points[i as usize].dist2(q);
                        let better = match best {
                            None => true,
                            Some((bi, bd)) => d2 < bd || (d2 == bd && (i as usize) < bi),
                        };
                        if better {
                            best = Some((i as usize, d2));
                        }
                    }
                }
            }
            // every unvisited bucket is at least `ring * bucket` away
            if let Some((_, d2)) = best {
                let reach = ring as f64 * h.bucket;
                if reach * reach > d2 {
                    break;
                }
            }
        }
        best
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn pts() -> impl Strategy<Value = Vec<Point>> {
        prop::collection::vec((0.0..20.0f64, 0.0..20.0f64), 1..120)
            .prop_map(|v| v.into_iter().map(|(x, y)| Point::new(x, y)).collect())
    }

    #[test]
    fn tiny_buckets_are_widened() {
        let points = [Point::new(1.0, 1.0), Point::new(1.0, 1.0 + 1e-12), Point::new(5.0, 5.0)];
        let mut h = SpatialHash::new(20.0, 1e-12);
        assert!(h.dim <= MAX_DIM as usize + 1);
        h.rebuild(&points, |_| true);
        let mut got = Vec::new();
        h.for_each_within(&points, points[0], 2e-12, |i| got.push(i));
        assert_eq!(got, vec![0, 1]);
    }

    proptest! {
        #[test]
        fn radius_query_matches_brute_force(points in pts(), cx in 0.0..20.0f64, cy in 0.0..20.0f64, r in 0.0..3.0f64) {
            let mut h = SpatialHash::new(20.0, 3.0);
            h.rebuild(&points, |_| true);
            let c = Point::new(cx, cy);
            let mut got = Vec::new();
            h.for_each_within(&points, c, r, |i| got.push(i));
            got.sort_unstable();
            let want: Vec<usize> = (0..points.len()).filter(|&i| points[i].dist2(c) <= r * r).collect();
            prop_assert_eq!(got, want);
        }

        #[test]
        fn nearest_matches_brute_force(points in pts(), qx in 0.0..20.0f64, qy in 0.0..20.0f64) {
            let idx = NearestIndex::new(&points, 20.0);
            let q = Point::new(qx, qy);
            let want = points.iter().map(|p| p.dist2(q)).fold(f64::INFINITY, f64::min);
            prop_assert_eq!(idx.nearest_dist2(q), want);
        }
    }
}
