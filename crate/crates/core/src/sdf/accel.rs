//! Bounding-volume hierarchy over a triangle mesh with exact closest-point
//! queries, pseudonormal signs and mesh-to-mesh proximity tests.

use std::collections::HashMap;

use crate::geometry::{TriMesh, V3};
use crate::{Error, Result};

const LEAF_SIZE: usize = 4;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Feature {
    Face,
    /// Local corner indices of the edge.
    Edge(u8, u8),
    Vertex(u8),
}

#[derive(Debug, Clone, Copy)]
pub struct Closest {
    pub dist2: f64,
    pub triangle: usize,
    pub point: V3,
    pub feature: Feature,
}

#[derive(Debug, Clone)]
struct Node {
    lo: V3,
    hi: V3,
    /// Leaf: first index into `order`; inner: left child (right = left + 1 is not assumed).
    a: u32,
    /// Leaf: count | LEAF_BIT; inner: right child.
    b: u32,
}

const LEAF_BIT: u32 = 1 << 31;

impl Node {
    fn leaf(&self) -> Option<(usize, usize)> {
        (self.b & LEAF_BIT != 0).then(|| (self.a as usize, (self.b & !LEAF_BIT) as usize))
    }
}

#[derive(Debug, Clone)]
pub struct MeshAccel {
    mesh: TriMesh,
    nodes: Vec<Node>,
    order: Vec<u32>,
    tri_lo: Vec<V3>,
    tri_hi: Vec<V3>,
    face_normal: Vec<V3>,
    vertex_normal: Vec<V3>,
    edge_normal: HashMap<(u32, u32), V3>,
}

/// Squared distance from `p` to the box [lo, hi].
pub fn box_dist2(p: &V3, lo: &V3, hi: &V3) -> f64 {
    (0..3)
        .map(|k| {
            let d = (lo[k] - p[k]).max(0.0).max(p[k] - hi[k]);
            d * d
        })
        .sum()
}

fn box_box_dist2(alo: &V3, ahi: &V3, blo: &V3, bhi: &V3) -> f64 {
    (0..3)
        .map(|k| {
            let d = (blo[k] - ahi[k]).max(0.0).max(alo[k] - bhi[k]);
            d * d
        })
        .sum()
}

/// Closest point on triangle abc to p with the feature it lies on.
pub fn closest_on_triangle(p: &V3, a: &V3, b: &V3, c: &V3) -> (V3, Feature) {
    let ab = b - a;
    let ac = c - a;
    let ap = p - a;
    let d1 = ab.dot(&ap);
    let d2 = ac.dot(&ap);
    if d1 <= 0.0 && d2 <= 0.0 {
        return (*a, Feature::Vertex(0));
    }
    let bp = p - b;
    let d3 = ab.dot(&bp);
    let d4 = ac.dot(&bp);
    if d3 >= 0.0 && d4 <= d3 {
        return (*b, Feature::Vertex(1));
    }
    let vc = d1 * d4 - d3 * d2;
    if vc <= 0.0 && d1 >= 0.0 && d3 <= 0.0 {
        let v = d1 / (d1 - d3);
        return (a + ab * v, Feature::Edge(0, 1));
    }
    let cp = p - c;
    let d5 = ab.dot(&cp);
    let d6 = ac.dot(&cp);
    if d6 >= 0.0 && d5 <= d6 {
        return (*c, Feature::Vertex(2));
    }
    let vb = d5 * d2 - d1 * d6;
    if vb <= 0.0 && d2 >= 0.0 && d6 <= 0.0 {
        let w = d2 / (d2 - d6);
        return (a + ac * w, Feature::Edge(0, 2));
    }
    let va = d3 * d6 - d5 * d4;
    if va <= 0.0 && (d4 - d3) >= 0.0 && (d5 - d6) >= 0.0 {
        let w = (d4 - d3) / ((d4 - d3) + (d5 - d6));
        return (b + (c - b) * w, Feature::Edge(1, 2));
    }
    let denom = 1.0 / (va + vb + vc);
    let v = vb * denom;
    let w = vc * denom;
    (a + ab * v + ac * w, Feature::Face)
}

/// Squared distance between segments p1q1 and p2q2.
pub fn segment_dist2(p1: &V3, q1: &V3, p2: &V3, q2: &V3) -> f64 {
    let d1 = q1 - p1;
    let d2 = q2 - p2;
    let r = p1 - p2;
    let a = d1.dot(&d1);
    let e = d2.dot(&d2);
    let f = d2.dot(&r);
    let eps = 1e-30;
    let (s, t);
    if a <= eps && e <= eps {
        return r.norm_squared();
    }
    if a <= eps {
        s = 0.0;
        t = (f / e).clamp(0.0, 1.0);
    } else {
        let c = d1.dot(&r);
        if e <= eps {
            t = 0.0;
            s = (-c / a).clamp(0.0, 1.0);
        } else {
            let b = d1.dot(&d2);
            let denom = a * e - b * b;
            let mut s0 = if denom > eps * a * e { ((b * f - c * e) / denom).clamp(0.0, 1.0) } else { 0.0 };
            let mut t0 = (b * s0 + f) / e;
            if t0 < 0.0 {
                t0 = 0.0;
                s0 = (-c / a).clamp(0.0, 1.0);
            } else if t0 > 1.0 {
                t0 = 1.0;
                s0 = ((b - c) / a).clamp(0.0, 1.0);
            }
            s = s0;
            t = t0;
        }
    }
    let c1 = p1 + d1 * s;
    let c2 = p2 + d2 * t;
    (c1 - c2).norm_squared()
}

/// Does the closed segment pq touch the closed triangle abc?
pub fn segment_hits_triangle(p: &V3, q: &V3, a: &V3, b: &V3, c: &V3) -> bool {
    let n = (b - a).cross(&(c - a));
    let dp = n.dot(&(p - a));
    let dq = n.dot(&(q - a));
    if dp * dq > 0.0 {
        return false;
    }
    if dp == 0.0 && dq == 0.0 {
        // coplanar: covered by edge-edge and vertex-face distances
        return false;
    }
    let t = dp / (dp - dq);
    let x = p + (q - p) * t;
    let inside = |u: &V3, v: &V3| n.dot(&(v - u).cross(&(x - u))) >= 0.0;
    inside(a, b) && inside(b, c) && inside(c, a)
}

/// Squared distance between two triangles (0 when they intersect).
pub fn triangle_dist2(t: &[V3; 3], u: &[V3; 3]) -> f64 {
    for i in 0..3 {
        let (p, q) = (&t[i], &t[(i + 1) % 3]);
        if segment_hits_triangle(p, q, &u[0], &u[1], &u[2]) {
            return 0.0;
        }
        let (p, q) = (&u[i], &u[(i + 1) % 3]);
        if segment_hits_triangle(p, q, &t[0], &t[1], &t[2]) {
            return 0.0;
        }
    }
    let mut best = f64::INFINITY;
    for i in 0..3 {
        let (c, _) = closest_on_triangle(&t[i], &u[0], &u[1], &u[2]);
        best = best.min((c - t[i]).norm_squared());
        let (c, _) = closest_on_triangle(&u[i], &t[0], &t[1], &t[2]);
        best = best.min((c - u[i]).norm_squared());
        for j in 0..3 {
            best = best.min(segment_dist2(&t[i], &t[(i + 1) % 3], &u[j], &u[(j + 1) % 3]));
        }
    }
    best
}

fn corner_angle(a: &V3, b: &V3, c: &V3) -> f64 {
    let u = b - a;
    let v = c - a;
    u.cross(&v).norm().atan2(u.dot(&v))
}

impl MeshAccel {
    /// Build after checking the mesh is closed and outward-oriented.
    pub fn new(mesh: &TriMesh) -> Result<Self> {
        mesh.check_watertight().map_err(|m| Error::Invalid(format!("mesh rejected: {m}")))?;
        Ok(Self::build_unchecked(mesh))
    }

    pub fn build_unchecked(mesh: &TriMesh) -> Self {
        let n = mesh.triangles.len();
        let mut tri_lo = Vec::with_capacity(n);
        let mut tri_hi = Vec::with_capacity(n);
        let mut face_normal = Vec::with_capacity(n);
        let mut vertex_normal = vec![V3::zeros(); mesh.vertices.len()];
        let mut edge_normal: HashMap<(u32, u32), V3> = HashMap::new();
        for (t, tri) in mesh.triangles.iter().enumerate() {
            let c = mesh.corners(t);
            tri_lo.push(c[0].inf(&c[1]).inf(&c[2]));
            tri_hi.push(c[0].sup(&c[1]).sup(&c[2]));
            let nrm = (c[1] - c[0]).cross(&(c[2] - c[0]));
            let nrm = if nrm.norm() > 0.0 { nrm.normalize() } else { nrm };
            face_normal.push(nrm);
            for k in 0..3 {
                let angle = corner_angle(&c[k], &c[(k + 1) % 3], &c[(k + 2) % 3]);
                vertex_normal[tri[k] as usize] += nrm * angle;
                let (a, b) = (tri[k], tri[(k + 1) % 3]);
                *edge_normal.entry((a.min(b), a.max(b))).or_insert_with(V3::zeros) += nrm;
            }
        }
        for v in vertex_normal.iter_mut().chain(edge_normal.values_mut()) {
            if v.norm() > 0.0 {
                *v = v.normalize();
            }
        }
        let mut accel = MeshAccel {
            mesh: mesh.clone(),
            nodes: Vec::new(),
            order: (0..n as u32).collect(),
            tri_lo,
            tri_hi,
            face_normal,
            vertex_normal,
            edge_normal,
        };
        if n > 0 {
            let centroids: Vec<V3> = (0..n).map(|t| (accel.tri_lo[t] + accel.tri_hi[t]) * 0.5).collect();
            accel.build_node(0, n, &centroids);
        }
        accel
    }

    fn build_node(&mut self, start: usize, end: usize, centroids: &[V3]) -> u32 {
        let mut lo = V3::repeat(f64::INFINITY);
        let mut hi = V3::repeat(f64::NEG_INFINITY);
        let mut clo = lo;
        let mut chi = hi;
        for &t in &self.order[start..end] {
            lo = lo.inf(&self.tri_lo[t as usize]);
            hi = hi.sup(&self.tri_hi[t as usize]);
            clo = clo.inf(&centroids[t as usize]);
            chi = chi.sup(&centroids[t as usize]);
        }
        let id = self.nodes.len() as u32;
        self.nodes.push(Node { lo, hi, a: start as u32, b: (end - start) as u32 | LEAF_BIT });
        if end - start <= LEAF_SIZE {
            return id;
        }
        let ext = chi - clo;
        let axis = if ext.x >= ext.y && ext.x >= ext.z { 0 } else if ext.y >= ext.z { 1 } else { 2 };
        let mid = (start + end) / 2;
        self.order[start..end].select_nth_unstable_by(mid - start, |&p, &q| {
            centroids[p as usize][axis].total_cmp(&centroids[q as usize][axis]).then(p.cmp(&q))
        });
        let left = self.build_node(start, mid, centroids);
        let right = self.build_node(mid, end, centroids);
        self.nodes[id as usize].a = left;
        self.nodes[id as usize].b = right;
        id
    }

    pub fn mesh(&self) -> &TriMesh {
        &self.mesh
    }

    pub fn aabb(&self) -> (V3, V3) {
        self.nodes.first().map(|n| (n.lo, n.hi)).unwrap_or((V3::zeros(), V3::zeros()))
    }

    fn corners(&self, t: usize) -> [V3; 3] {
        self.mesh.corners(t)
    }

    /// Nearest surface point strictly closer than `max_dist` (None if nothing is).
    pub fn closest_within(&self, p: &V3, max_dist: f64) -> Option<Closest> {
        if self.nodes.is_empty() {
            return None;
        }
        let mut best: Option<Closest> = None;
        let mut bound = max_dist * max_dist;
        let mut stack: Vec<(u32, f64)> = vec![(0, box_dist2(p, &self.nodes[0].lo, &self.nodes[0].hi))];
        while let Some((id, d)) = stack.pop() {
            if d > bound {
                continue;
            }
            let node = &self.nodes[id as usize];
            match node.leaf() {
                Some((start, count)) => {
                    for &t in &self.order[start..start + count] {
                        let t = t as usize;
                        let [a, b, c] = self.corners(t);
                        let (q, feature) = closest_on_triangle(p, &a, &b, &c);
                        let d2 = (p - q).norm_squared();
                        let better = match &best {
                            None => d2 < bound,
                            Some(bc) => d2 < bc.dist2 || (d2 == bc.dist2 && t < bc.triangle),
                        };
                        if better {
                            best = Some(Closest { dist2: d2, triangle: t, point: q, feature });
                            bound = d2;
                        }
                    }
                }
                None => {
                    let (l, r) = (node.a, node.b);
                    let dl = box_dist2(p, &self.nodes[l as usize].lo, &self.nodes[l as usize].hi);
                    let dr = box_dist2(p, &self.nodes[r as usize].lo, &self.nodes[r as usize].hi);
                    // push the far child first so the near one is popped next
                    if dl <= dr {
                        stack.push((r, dr));
                        stack.push((l, dl));
                    } else {
                        stack.push((l, dl));
                        stack.push((r, dr));
                    }
                }
            }
        }
        best
    }

    pub fn closest(&self, p: &V3) -> Closest {
        self.closest_within(p, f64::INFINITY).expect("mesh has triangles")
    }

    pub fn pseudonormal(&self, c: &Closest) -> V3 {
        let tri = self.mesh.triangles[c.triangle];
        match c.feature {
            Feature::Face => self.face_normal[c.triangle],
            Feature::Vertex(k) => self.vertex_normal[tri[k as usize] as usize],
            Feature::Edge(i, j) => {
                let (a, b) = (tri[i as usize], tri[j as usize]);
                self.edge_normal[&(a.min(b), a.max(b))]
            }
        }
    }

    fn sign_of(&self, p: &V3, c: &Closest) -> f64 {
        if self.pseudonormal(c).dot(&(p - c.point)) < 0.0 {
            -1.0
        } else {
            1.0
        }
    }

    /// Signed distance, negative inside.
    pub fn signed_distance(&self, p: &V3) -> f64 {
        let c = self.closest(p);
        self.sign_of(p, &c) * c.dist2.sqrt()
    }

    /// Signed distance if the surface is closer than `band`, else None.
    pub fn signed_distance_within(&self, p: &V3, band: f64) -> Option<f64> {
        self.closest_within(p, band).map(|c| self.sign_of(p, &c) * c.dist2.sqrt())
    }

    /// Same answer as `signed_distance` by scanning every triangle.
    pub fn signed_distance_brute(&self, p: &V3) -> f64 {
        let mut best: Option<Closest> = None;
        for t in 0..self.mesh.triangles.len() {
            let [a, b, c] = self.corners(t);
            let (q, feature) = closest_on_triangle(p, &a, &b, &c);
            let d2 = (p - q).norm_squared();
            if best.as_ref().map_or(true, |bc| d2 < bc.dist2) {
                best = Some(Closest { dist2: d2, triangle: t, point: q, feature });
            }
        }
        let c = best.expect("mesh has triangles");
        self.sign_of(p, &c) * c.dist2.sqrt()
    }

    pub fn contains(&self, p: &V3) -> bool {
        let (lo, hi) = self.aabb();
        box_dist2(p, &lo, &hi) == 0.0 && self.signed_distance(p) < 0.0
    }

    /// True if some pair of triangles lies closer than `dist` (or touches when `dist` is 0).
    pub fn surfaces_within(&self, other: &MeshAccel, dist: f64) -> bool {
        if self.nodes.is_empty() || other.nodes.is_empty() {
            return false;
        }
        let limit = dist * dist;
        let hit = |d2: f64| if dist > 0.0 { d2 < limit } else { d2 == 0.0 };
        let mut stack = vec![(0u32, 0u32)];
        while let Some((i, j)) = stack.pop() {
            let (a, b) = (&self.nodes[i as usize], &other.nodes[j as usize]);
            let gap = box_box_dist2(&a.lo, &a.hi, &b.lo, &b.hi);
            if dist > 0.0 && gap >= limit || dist == 0.0 && gap > 0.0 {
                continue;
            }
            match (a.leaf(), b.leaf()) {
                (Some((sa, ca)), Some((sb, cb))) => {
                    for &t in &self.order[sa..sa + ca] {
                        let tc = self.corners(t as usize);
                        for &u in &other.order[sb..sb + cb] {
                            let gap = box_box_dist2(
                                &self.tri_lo[t as usize],
                                &self.tri_hi[t as usize],
                                &other.tri_lo[u as usize],
                                &other.tri_hi[u as usize],
                            );
                            if dist > 0.0 && gap >= limit || dist == 0.0 && gap > 0.0 {
                                continue;
                            }
                            if hit(triangle_dist2(&tc, &other.corners(u as usize))) {
                                return true;
                            }
                        }
                    }
                }
                (None, Some(_)) => {
                    stack.push((a.a, j));
                    stack.push((a.b, j));
                }
                (Some(_), None) => {
                    stack.push((i, b.a));
                    stack.push((i, b.b));
                }
                (None, None) => {
                    let va = (a.hi - a.lo).norm_squared();
                    let vb = (b.hi - b.lo).norm_squared();
                    if va >= vb {
                        stack.push((a.a, j));
                        stack.push((a.b, j));
                    } else {
                        stack.push((i, b.a));
                        stack.push((i, b.b));
                    }
                }
            }
        }
        false
    }

    /// Exact minimum surface-to-surface distance (0 when they cross).
    pub fn surface_distance(&self, other: &MeshAccel) -> f64 {
        let mut best = f64::INFINITY;
        for t in 0..self.mesh.triangles.len() {
            let tc = self.corners(t);
            for u in 0..other.mesh.triangles.len() {
                best = best.min(triangle_dist2(&tc, &other.corners(u)));
            }
        }
        best.sqrt()
    }
}
