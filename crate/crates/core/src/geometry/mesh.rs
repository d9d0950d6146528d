use std::collections::HashMap;

use super::V3;

/// Indexed triangle mesh, counter-clockwise winding seen from outside.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct TriMesh {
    pub vertices: Vec<V3>,
    pub triangles: Vec<[u32; 3]>,
}

pub const DEGENERATE_AREA: f64 = 1e-9;
const STL_HEADER: &[u8] = b"flowforge binary STL";

#[derive(Debug, Clone, PartialEq)]
pub struct Topology {
    pub components: usize,
    /// Per component: closed, consistently wound, positive volume.
    pub manifold: Vec<bool>,
}

impl TriMesh {
    pub fn corners(&self, t: usize) -> [V3; 3] {
        let [a, b, c] = self.triangles[t];
        [self.vertices[a as usize], self.vertices[b as usize], self.vertices[c as usize]]
    }

    pub fn triangle_area(&self, t: usize) -> f64 {
        let [a, b, c] = self.corners(t);
        0.5 * (b - a).cross(&(c - a)).norm()
    }

    pub fn signed_volume(&self) -> f64 {
        self.volume_of(0..self.triangles.len())
    }

    fn volume_of(&self, tris: impl Iterator<Item = usize>) -> f64 {
        tris.map(|t| {
            let [a, b, c] = self.corners(t);
            a.dot(&b.cross(&c))
        })
        .sum::<f64>()
            / 6.0
    }

    pub fn aabb(&self) -> (V3, V3) {
        let mut lo = V3::repeat(f64::INFINITY);
        let mut hi = V3::repeat(f64::NEG_INFINITY);
        for v in &self.vertices {
            lo = lo.inf(v);
            hi = hi.sup(v);
        }
        (lo, hi)
    }

    pub fn max_edge_length(&self) -> f64 {
        (0..self.triangles.len())
            .flat_map(|t| {
                let [a, b, c] = self.corners(t);
                [(b - a).norm(), (c - b).norm(), (a - c).norm()]
            })
            .fold(0.0, f64::max)
    }

    pub fn append(&mut self, other: &TriMesh) {
        let base = self.vertices.len() as u32;
        self.vertices.extend_from_slice(&other.vertices);
        self.triangles.extend(other.triangles.iter().map(|t| t.map(|i| i + base)));
    }

    /// Triangle ids grouped by vertex connectivity, in order of first triangle.
    pub fn component_triangles(&self) -> Vec<Vec<usize>> {
        let n = self.vertices.len();
        let mut parent: Vec<usize> = (0..n).collect();
        fn find(p: &mut [usize], mut x: usize) -> usize {
            while p[x] != x {
                p[x] = p[p[x]];
                x = p[x];
            }
            x
        }
        for t in &self.triangles {
            let a = find(&mut parent, t[0] as usize);
            for &v in &t[1..] {
                let b = find(&mut parent, v as usize);
                if a != b {
                    parent[b] = a;
                }
            }
        }
        let mut index: HashMap<usize, usize> = HashMap::new();
        let mut groups: Vec<Vec<usize>> = Vec::new();
        for (i, t) in self.triangles.iter().enumerate() {
            let root = find(&mut parent, t[0] as usize);
            let g = *index.entry(root).or_insert_with(|| {
                groups.push(Vec::new());
                groups.len() - 1
            });
            groups[g].push(i);
        }
        groups
    }

    pub fn topology(&self) -> Topology {
        let mut directed: HashMap<(u32, u32), u32> = HashMap::new();
        for t in &self.triangles {
            for k in 0..3 {
                *directed.entry((t[k], t[(k + 1) % 3])).or_insert(0) += 1;
            }
        }
        let comps = self.component_triangles();
        let manifold = comps
            .iter()
            .map(|tris| {
                let edges_ok = tris.iter().all(|&i| {
                    let t = self.triangles[i];
                    (0..3).all(|k| {
                        let (a, b) = (t[k], t[(k + 1) % 3]);
                        directed.get(&(a, b)) == Some(&1) && directed.get(&(b, a)) == Some(&1)
                    })
                });
                edges_ok && self.volume_of(tris.iter().copied()) > 0.0
            })
            .collect();
        Topology { components: comps.len(), manifold }
    }

    /// Watertight, outward-oriented, in-range indices and no degenerate faces.
    pub fn check_watertight(&self) -> Result<(), String> {
        let n = self.vertices.len() as u32;
        if self.triangles.is_empty() {
            return Err("mesh has no triangles".into());
        }
        for (i, t) in self.triangles.iter().enumerate() {
            if t.iter().any(|&v| v >= n) {
                return Err(format!("triangle {i} has an out-of-range vertex index"));
            }
            if self.triangle_area(i) < DEGENERATE_AREA {
                return Err(format!("triangle {i} is degenerate"));
            }
        }
        let topo = self.topology();
        if let Some(c) = topo.manifold.iter().position(|ok| !ok) {
            return Err(format!("component {c} of {} is not closed and outward-oriented", topo.components));
        }
        Ok(())
    }

    pub fn to_stl_bytes(&self) -> Vec<u8> {
        let mut out = Vec::with_capacity(84 + 50 * self.triangles.len());
        let mut header = [0u8; 80];
        header[..STL_HEADER.len()].copy_from_slice(STL_HEADER);
        out.extend_from_slice(&header);
        out.extend_from_slice(&(self.triangles.len() as u32).to_le_bytes());
        for t in 0..self.triangles.len() {
            let [a, b, c] = self.corners(t);
            let n = (b - a).cross(&(c - a));
            let n = if n.norm() > 0.0 { n.normalize() } else { n };
            for v in [n, a, b, c] {
                for k in 0..3 {
                    out.extend_from_slice(&(v[k] as f32).to_le_bytes());
                }
            }
            out.extend_from_slice(&0u16.to_le_bytes());
        }
        out
    }

    /// Parse binary STL and weld vertices with identical coordinates.
    pub fn from_stl_bytes(bytes: &[u8]) -> Result<TriMesh, String> {
        if bytes.len() < 84 {
            return Err(format!("binary STL too short ({} bytes)", bytes.len()));
        }
        let count = u32::from_le_bytes(bytes[80..84].try_into().unwrap()) as usize;
        if bytes.len() != 84 + 50 * count {
            return Err(format!("binary STL size {} does not match {count} triangles", bytes.len()));
        }
        let mut index: HashMap<[u32; 3], u32> = HashMap::new();
        let mut mesh = TriMesh::default();
        for t in 0..count {
            let rec = &bytes[84 + 50 * t..84 + 50 * (t + 1)];
            let mut tri = [0u32; 3];
            for (c, slot) in tri.iter_mut().enumerate() {
                let mut p = [0f32; 3];
                for (k, x) in p.iter_mut().enumerate() {
                    let o = 12 + 12 * c + 4 * k;
                    let v = f32::from_le_bytes(rec[o..o + 4].try_into().unwrap());
                    *x = if v == 0.0 { 0.0 } else { v };
                }
                let key = p.map(f32::to_bits);
                *slot = *index.entry(key).or_insert_with(|| {
                    mesh.vertices.push(V3::new(p[0] as f64, p[1] as f64, p[2] as f64));
                    mesh.vertices.len() as u32 - 1
                });
            }
            mesh.triangles.push(tri);
        }
        Ok(mesh)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    pub fn unit_cube() -> TriMesh {
        crate::geometry::tessellate(
            &crate::geometry::ShapeParams::Cuboid { height: 1.0, width: 1.0, thickness: 1.0 },
            &crate::geometry::Pose::at(V3::new(0.5, 0.5, 0.5)),
            crate::geometry::Resolution::Fixed(16),
        )
        .unwrap()
    }

    #[test]
    fn cube_stl_size_and_round_trip() {
        let cube = unit_cube();
        let bytes = cube.to_stl_bytes();
        assert_eq!(bytes.len(), 684);
        let back = TriMesh::from_stl_bytes(&bytes).unwrap();
        assert_eq!(back.vertices.len(), 8);
        assert_eq!(back.triangles.len(), 12);
        back.check_watertight().unwrap();
        assert!((back.signed_volume() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn detects_open_and_flipped() {
        let mut open = unit_cube();
        open.triangles.pop();
        assert!(open.check_watertight().is_err());
        let mut flipped = unit_cube();
        for t in &mut flipped.triangles {
            t.swap(1, 2);
        }
        assert!(flipped.check_watertight().is_err());
        let mut two = unit_cube();
        let mut other = unit_cube();
        for v in &mut other.vertices {
            v.x += 3.0;
        }
        two.append(&other);
        let topo = two.topology();
        assert_eq!(topo.components, 2);
        assert!(topo.manifold.iter().all(|m| *m));
    }

    #[test]
    fn rejects_truncated_stl() {
        let bytes = unit_cube().to_stl_bytes();
        assert!(TriMesh::from_stl_bytes(&bytes[..600]).is_err());
    }
}
