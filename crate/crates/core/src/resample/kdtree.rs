//! Static 3-d tree with exact k-nearest and radius queries.
//! Equal distances are ordered by ascending point id.

use std::cmp::Ordering;
use std::collections::BinaryHeap;

use crate::geometry::V3;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Neighbor {
    pub dist2: f64,
    pub id: usize,
}

impl Eq for Neighbor {}

impl Ord for Neighbor {
    fn cmp(&self, o: &Self) -> Ordering {
        self.dist2.total_cmp(&o.dist2).then(self.id.cmp(&o.id))
    }
}

impl PartialOrd for Neighbor {
    fn partial_cmp(&self, o: &Self) -> Option<Ordering> {
        Some(self.cmp(o))
    }
}

#[derive(Debug, Clone)]
pub struct KdTree {
    points: Vec<V3>,
    /// Point ids in tree order; node i splits on axis[i].
    order: Vec<usize>,
    axis: Vec<u8>,
}

impl KdTree {
    pub fn build(points: &[V3]) -> Result<Self, String> {
        if points.is_empty() {
            return Err("cannot index an empty point set".into());
        }
        if points.iter().any(|p| !p.iter().all(|c| c.is_finite())) {
            return Err("point positions must be finite".into());
        }
        let mut t = KdTree { points: points.to_vec(), order: (0..points.len()).collect(), axis: vec![0; points.len()] };
        t.split(0, points.len());
        Ok(t)
    }

    fn split(&mut self, lo: usize, hi: usize) {
        if hi - lo <= 1 {
            return;
        }
        let mut min = V3::repeat(f64::INFINITY);
        let mut max = V3::repeat(f64::NEG_INFINITY);
        for &i in &self.order[lo..hi] {
            min = min.inf(&self.points[i]);
            max = max.sup(&self.points[i]);
        }
        let ext = max - min;
        let ax = if ext.x >= ext.y && ext.x >= ext.z { 0 } else if ext.y >= ext.z { 1 } else { 2 };
        let mid = (lo + hi) / 2;
        let pts = &self.points;
        self.order[lo..hi].select_nth_unstable_by(mid - lo, |&a, &b| pts[a][ax].total_cmp(&pts[b][ax]).then(a.cmp(&b)));
        self.axis[mid] = ax as u8;
        self.split(lo, mid);
        self.split(mid + 1, hi);
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    pub fn point(&self, id: usize) -> V3 {
        self.points[id]
    }

    /// The `k` nearest points, nearest first.
    pub fn knn(&self, q: &V3, k: usize) -> Vec<Neighbor> {
        let k = k.min(self.len());
        let mut heap = BinaryHeap::with_capacity(k + 1);
        if k > 0 {
            self.knn_rec(q, k, 0, self.len(), &mut heap);
        }
        heap.into_sorted_vec()
    }

    fn knn_rec(&self, q: &V3, k: usize, lo: usize, hi: usize, heap: &mut BinaryHeap<Neighbor>) {
        if lo >= hi {
            return;
        }
        let mid = (lo + hi) / 2;
        let id = self.order[mid];
        let p = self.points[id];
        let cand = Neighbor { dist2: (p - q).norm_squared(), id };
        if heap.len() < k {
            heap.push(cand);
        } else if cand < *heap.peek().unwrap() {
            heap.pop();
            heap.push(cand);
        }
        if hi - lo == 1 {
            return;
        }
        let ax = self.axis[mid] as usize;
        let diff = q[ax] - p[ax];
        let (near, far) = if diff < 0.0 { ((lo, mid), (mid + 1, hi)) } else { ((mid + 1, hi), (lo, mid)) };
        self.knn_rec(q, k, near.0, near.1, heap);
        if heap.len() < k || diff * diff <= heap.peek().unwrap().dist2 {
            self.knn_rec(q, k, far.0, far.1, heap);
        }
    }

    /// Every point with distance <= r, nearest first.
    pub fn within(&self, q: &V3, r: f64) -> Vec<Neighbor> {
        let mut out = Vec::new();
        if r >= 0.0 {
            self.within_rec(q, r * r, 0, self.len(), &mut out);
        }
        out.sort();
        out
    }

    fn within_rec(&self, q: &V3, r2: f64, lo: usize, hi: usize, out: &mut Vec<Neighbor>) {
        if lo >= hi {
            return;
        }
        let mid = (lo + hi) / 2;
        let id = self.order[mid];
        let p = self.points[id];
        let d2 = (p - q).norm_squared();
        if d2 <= r2 {
            out.push(Neighbor { dist2: d2, id });
        }
        if hi - lo == 1 {
            return;
        }
        let ax = self.axis[mid] as usize;
        let diff = q[ax] - p[ax];
        if diff <= 0.0 || diff * diff <= r2 {
            self.within_rec(q, r2, lo, mid, out);
        }
        if diff >= 0.0 || diff * diff <= r2 {
            self.within_rec(q, r2, mid + 1, hi, out);
        }
    }
}

/// Linear-scan reference for the tree queries.
pub fn knn_brute(points: &[V3], q: &V3, k: usize) -> Vec<Neighbor> {
    let mut all: Vec<Neighbor> = points.iter().enumerate().map(|(id, p)| Neighbor { dist2: (p - q).norm_squared(), id }).collect();
    all.sort();
    all.truncate(k);
    all
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};

    fn cloud(n: usize, seed: u64) -> Vec<V3> {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
        (0..n).map(|_| V3::new(rng.gen_range(0.0..10.0), rng.gen_range(0.0..10.0), rng.gen_range(0.0..10.0))).collect()
    }

    #[test]
    fn matches_linear_scan() {
        let pts = cloud(500, 1);
        let t = KdTree::build(&pts).unwrap();
        let qs = cloud(100, 2);
        for q in &qs {
            for k in [1, 4, 6, 17] {
                assert_eq!(t.knn(q, k), knn_brute(&pts, q, k));
            }
            let r = 1.5;
            let brute: Vec<Neighbor> = knn_brute(&pts, q, pts.len()).into_iter().filter(|n| n.dist2 <= r * r).collect();
            assert_eq!(t.within(q, r), brute);
        }
    }

    #[test]
    fn ties_use_smallest_id() {
        // grid points give many equidistant neighbours
        let mut pts = Vec::new();
        for i in 0..6 {
            for j in 0..6 {
                for k in 0..6 {
                    pts.push(V3::new(i as f64, j as f64, k as f64));
                }
            }
        }
        let t = KdTree::build(&pts).unwrap();
        let q = V3::new(2.5, 2.5, 2.5);
        assert_eq!(t.knn(&q, 5), knn_brute(&pts, &q, 5));
    }

    #[test]
    fn basics() {
        let pts = cloud(50, 3);
        let t = KdTree::build(&pts).unwrap();
        let n = t.knn(&pts[17], 1);
        assert_eq!((n[0].id, n[0].dist2), (17, 0.0));
        let r0 = t.within(&pts[17], 0.0);
        assert_eq!(r0.len(), 1);
        assert!(KdTree::build(&[]).is_err());
    }
}
