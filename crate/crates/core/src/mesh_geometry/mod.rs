//! Closest-point projection onto a triangle mesh, the `(u, v, signed
//! distance)` surface coordinate, and KNN inverse-distance weights.

mod bvh;
mod kdtree;

use std::collections::HashMap;

use serde::{Deserialize, Serialize};

use crate::body_model::AnchorMesh;
use crate::math::{Mat3, Vec3};
use bvh::Bvh;
pub use kdtree::VertexIndex;

/// Distances below this are clamped before inversion in the KNN weights.
pub const KNN_EPSILON: f64 = 1e-8;

/// Where on a triangle a closest point landed. Indices are local slots 0..3.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Feature {
    Face,
    Edge(u8, u8),
    Vertex(u8),
}

#[derive(Clone, Debug, PartialEq)]
pub struct SurfacePoint {
    pub face: usize,
    pub barycentric: [f64; 3],
    pub position: Vec3,
    /// Unit, barycentric interpolation of the area-weighted vertex normals.
    pub normal: Vec3,
    pub uv: [f64; 2],
    pub feature: Feature,
    /// Normal used for the inside/outside decision: the interpolated normal
    /// inside a face, the angle-weighted pseudo-normal on edges and vertices.
    pub sign_normal: Vec3,
}

/// Surface-relative coordinate of a point: UV of its projection and the
/// signed distance to it.
#[derive(Clone, Copy, Debug, PartialEq, Default, Serialize, Deserialize)]
pub struct SignedHeight {
    pub u: f64,
    pub v: f64,
    pub d: f64,
}

impl SignedHeight {
    pub const ZERO: SignedHeight = SignedHeight { u: 0.0, v: 0.0, d: 0.0 };

    pub fn to_array(self) -> [f64; 3] {
        [self.u, self.v, self.d]
    }
}

/// Normalised inverse-distance weights over the `K` nearest vertices.
#[derive(Clone, Debug, PartialEq)]
pub struct KnnWeights {
    pub indices: Vec<usize>,
    pub weights: Vec<f64>,
    pub distances: Vec<f64>,
}

impl KnnWeights {
    pub fn from_neighbors(neighbors: &[(usize, f64)]) -> Self {
        let distances: Vec<f64> = neighbors.iter().map(|(_, d2)| d2.sqrt()).collect();
        let raw: Vec<f64> = distances.iter().map(|d| 1.0 / d.max(KNN_EPSILON)).collect();
        let total: f64 = raw.iter().sum();
        Self {
            indices: neighbors.iter().map(|(i, _)| *i).collect(),
            weights: raw.iter().map(|w| w / total).collect(),
            distances,
        }
    }

    /// `∂w_j/∂x` for each normalised weight, holding the neighbour set fixed.
    pub fn gradients(&self, query: &Vec3, points: &[Vec3]) -> Vec<Vec3> {
        let raw: Vec<f64> = self.distances.iter().map(|d| 1.0 / d.max(KNN_EPSILON)).collect();
        let total: f64 = raw.iter().sum();
        let raw_grad: Vec<Vec3> = self
            .indices
            .iter()
            .zip(&self.distances)
            .map(|(&i, &d)| {
                if d <= KNN_EPSILON {
                    Vec3::zeros()
                } else {
                    -(query - points[i]) / (d * d * d)
                }
            })
            .collect();
        let sum_grad: Vec3 = raw_grad.iter().sum();
        raw_grad
            .iter()
            .zip(&self.weights)
            .map(|(g, w)| (g - sum_grad * *w) / total)
            .collect()
    }
}

/// Closest point on triangle `abc` to `p` with barycentrics and the feature
/// that contains it (Voronoi-region walk).
pub fn closest_point_on_triangle(p: &Vec3, a: &Vec3, b: &Vec3, c: &Vec3) -> (Vec3, [f64; 3], Feature) {
    let ab = b - a;
    let ac = c - a;
    let ap = p - a;
    let d1 = ab.dot(&ap);
    let d2 = ac.dot(&ap);
    if d1 <= 0.0 && d2 <= 0.0 {
        return (*a, [1.0, 0.0, 0.0], Feature::Vertex(0));
    }
    let bp = p - b;
    let d3 = ab.dot(&bp);
    let d4 = ac.dot(&bp);
    if d3 >= 0.0 && d4 <= d3 {
        return (*b, [0.0, 1.0, 0.0], Feature::Vertex(1));
    }
    let vc = d1 * d4 - d3 * d2;
    if vc <= 0.0 && d1 >= 0.0 && d3 <= 0.0 {
        let v = d1 / (d1 - d3);
        return (a + ab * v, [1.0 - v, v, 0.0], Feature::Edge(0, 1));
    }
    let cp = p - c;
    let d5 = ab.dot(&cp);
    let d6 = ac.dot(&cp);
    if d6 >= 0.0 && d5 <= d6 {
        return (*c, [0.0, 0.0, 1.0], Feature::Vertex(2));
    }
    let vb = d5 * d2 - d1 * d6;
    if vb <= 0.0 && d2 >= 0.0 && d6 <= 0.0 {
        let w = d2 / (d2 - d6);
        return (a + ac * w, [1.0 - w, 0.0, w], Feature::Edge(0, 2));
    }
    let va = d3 * d6 - d5 * d4;
    if va <= 0.0 && (d4 - d3) >= 0.0 && (d5 - d6) >= 0.0 {
        let w = (d4 - d3) / ((d4 - d3) + (d5 - d6));
        return (b + (c - b) * w, [0.0, 1.0 - w, w], Feature::Edge(1, 2));
    }
    let denom = 1.0 / (va + vb + vc);
    let v = vb * denom;
    let w = vc * denom;
    (a + ab * v + ac * w, [1.0 - v - w, v, w], Feature::Face)
}

/// Read-only acceleration structure and normals for one triangle mesh.
#[derive(Clone, Debug)]
pub struct SurfaceIndex {
    vertices: Vec<Vec3>,
    faces: Vec<[u32; 3]>,
    uvs: Vec<[f64; 2]>,
    face_normals: Vec<Vec3>,
    vertex_normals: Vec<Vec3>,
    vertex_pseudo_normals: Vec<Vec3>,
    edge_pseudo_normals: HashMap<(u32, u32), Vec3>,
    bvh: Bvh,
}

impl SurfaceIndex {
    pub fn new(vertices: &[Vec3], faces: &[[u32; 3]], uvs: &[[f64; 2]]) -> Self {
        let nv = vertices.len();
        let mut face_normals = Vec::with_capacity(faces.len());
        let mut vertex_normals = vec![Vec3::zeros(); nv];
        let mut vertex_pseudo_normals = vec![Vec3::zeros(); nv];
        let mut edge_pseudo_normals: HashMap<(u32, u32), Vec3> = HashMap::new();
        for f in faces {
            let p = f.map(|i| vertices[i as usize]);
            let scaled = (p[1] - p[0]).cross(&(p[2] - p[0]));
            let n = scaled.try_normalize(0.0).unwrap_or_else(Vec3::zeros);
            face_normals.push(n);
            for k in 0..3 {
                let i = f[k] as usize;
                // |scaled| = 2 * area, so this is area weighting
                vertex_normals[i] += scaled;
                let e1 = p[(k + 1) % 3] - p[k];
                let e2 = p[(k + 2) % 3] - p[k];
                vertex_pseudo_normals[i] += n * e1.angle(&e2);
                let (a, b) = (f[k], f[(k + 1) % 3]);
                *edge_pseudo_normals.entry((a.min(b), a.max(b))).or_insert_with(Vec3::zeros) += n;
            }
        }
        let unit = |v: &mut Vec3| *v = v.try_normalize(0.0).unwrap_or_else(Vec3::zeros);
        vertex_normals.iter_mut().for_each(unit);
        vertex_pseudo_normals.iter_mut().for_each(unit);
        edge_pseudo_normals.values_mut().for_each(unit);
        Self {
            bvh: Bvh::new(vertices, faces),
            vertices: vertices.to_vec(),
            faces: faces.to_vec(),
            uvs: uvs.to_vec(),
            face_normals,
            vertex_normals,
            vertex_pseudo_normals,
            edge_pseudo_normals,
        }
    }

    pub fn from_mesh(mesh: &AnchorMesh) -> Self {
        Self::new(&mesh.vertices, &mesh.faces, &mesh.uvs)
    }

    pub fn vertices(&self) -> &[Vec3] {
        &self.vertices
    }

    pub fn faces(&self) -> &[[u32; 3]] {
        &self.faces
    }

    pub fn vertex_normals(&self) -> &[Vec3] {
        &self.vertex_normals
    }

    pub fn face_normal(&self, f: usize) -> Vec3 {
        self.face_normals[f]
    }

    /// Globally closest surface point. Faces whose distances tie within a
    /// relative 1e-12 resolve to the lowest face index.
    pub fn closest_point(&self, q: &Vec3) -> SurfacePoint {
        assert!(!self.faces.is_empty(), "closest point on an empty mesh");
        let mut best: Option<(f64, usize, Vec3, [f64; 3], Feature)> = None;
        self.bvh.visit_nearest(q, |f| {
            let [a, b, c] = self.faces[f].map(|i| self.vertices[i as usize]);
            let (x0, bary, feat) = closest_point_on_triangle(q, &a, &b, &c);
            let d2 = (q - x0).norm_squared();
            match &best {
                Some((bd, bf, ..)) => {
                    let tol = 1e-12 * bd.max(1e-30);
                    if d2 < bd - tol || ((d2 - bd).abs() <= tol && f < *bf) {
                        best = Some((d2, f, x0, bary, feat));
                    }
                }
                None => best = Some((d2, f, x0, bary, feat)),
            }
            let bd = best.as_ref().map_or(f64::INFINITY, |b| b.0);
            bd + 1e-12 * bd
        });
        let (_, face, position, barycentric, feature) = best.expect("non-empty mesh");
        self.surface_point(face, position, barycentric, feature)
    }

    fn surface_point(&self, face: usize, position: Vec3, bary: [f64; 3], feature: Feature) -> SurfacePoint {
        let f = self.faces[face];
        let mut interp = Vec3::zeros();
        let mut uv = [0.0; 2];
        for k in 0..3 {
            interp += self.vertex_normals[f[k] as usize] * bary[k];
            uv[0] += self.uvs[f[k] as usize][0] * bary[k];
            uv[1] += self.uvs[f[k] as usize][1] * bary[k];
        }
        let normal = if interp.norm() < 1e-6 {
            self.face_normals[face]
        } else {
            interp.normalize()
        };
        let sign_normal = match feature {
            Feature::Face => normal,
            Feature::Edge(i, j) => {
                let (a, b) = (f[i as usize], f[j as usize]);
                self.edge_pseudo_normals[&(a.min(b), a.max(b))]
            }
            Feature::Vertex(i) => self.vertex_pseudo_normals[f[i as usize] as usize],
        };
        SurfacePoint {
            face,
            barycentric: bary,
            position,
            normal,
            uv: uv.map(|c| c.clamp(0.0, 1.0)),
            feature,
            sign_normal,
        }
    }

    pub fn signed_height(&self, q: &Vec3) -> SignedHeight {
        let sp = self.closest_point(q);
        height_from(q, &sp)
    }

    /// Signed height together with its Jacobian `∂(u, v, d)/∂x` (rows), valid
    /// almost everywhere (away from Voronoi-region boundaries).
    pub fn signed_height_with_jacobian(&self, q: &Vec3) -> (SignedHeight, Mat3) {
        let sp = self.closest_point(q);
        let h = height_from(q, &sp);
        let f = self.faces[sp.face];
        let [a, b, c] = f.map(|i| self.vertices[i as usize]);
        let n = self.face_normals[sp.face];
        let twice_area = (b - a).cross(&(c - a)).norm();
        // in-plane gradients of the barycentric coordinates
        let grad_bary = [
            n.cross(&(c - b)) / twice_area,
            n.cross(&(a - c)) / twice_area,
            n.cross(&(b - a)) / twice_area,
        ];
        let mut duv_dx0 = nalgebra::Matrix2x3::<f64>::zeros();
        for k in 0..3 {
            let uv = self.uvs[f[k] as usize];
            for r in 0..2 {
                for col in 0..3 {
                    duv_dx0[(r, col)] += uv[r] * grad_bary[k][col];
                }
            }
        }
        let dx0_dx = match sp.feature {
            Feature::Face => Mat3::identity() - n * n.transpose(),
            Feature::Edge(i, j) => {
                let e = [a, b, c][j as usize] - [a, b, c][i as usize];
                e * e.transpose() / e.norm_squared()
            }
            Feature::Vertex(_) => Mat3::zeros(),
        };
        let duv = duv_dx0 * dx0_dx;
        let r = q - sp.position;
        let rn = r.norm();
        let dd = if rn > 1e-12 {
            r / rn * h.d.signum()
        } else {
            sp.sign_normal
        };
        let mut jac = Mat3::zeros();
        for col in 0..3 {
            jac[(0, col)] = duv[(0, col)];
            jac[(1, col)] = duv[(1, col)];
            jac[(2, col)] = dd[col];
        }
        (h, jac)
    }
}

fn height_from(q: &Vec3, sp: &SurfacePoint) -> SignedHeight {
    let r = q - sp.position;
    let dist = r.norm();
    // projection round-off on the surface itself reads as +0
    let d = if dist <= 1e-14 * (1.0 + q.norm()) {
        0.0
    } else if r.dot(&sp.sign_normal) >= 0.0 {
        dist
    } else {
        -dist
    };
    SignedHeight {
        u: sp.uv[0],
        v: sp.uv[1],
        d,
    }
}

pub fn closest_surface_point(query: &Vec3, mesh: &SurfaceIndex) -> SurfacePoint {
    mesh.closest_point(query)
}

pub fn signed_height(query: &Vec3, mesh: &SurfaceIndex) -> SignedHeight {
    mesh.signed_height(query)
}

pub fn knn_inverse_distance(query: &Vec3, vertices: &VertexIndex, k: usize) -> KnnWeights {
    KnnWeights::from_neighbors(&vertices.knn(query, k))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::body_model::{build_default_body, BodySpec};
    use approx::assert_abs_diff_eq;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn unit_cube() -> SurfaceIndex {
        let v: Vec<Vec3> = (0..8)
            .map(|i| Vec3::new((i & 1) as f64, ((i >> 1) & 1) as f64, ((i >> 2) & 1) as f64))
            .collect();
        let quads = [
            [0, 2, 3, 1],
            [4, 5, 7, 6],
            [0, 1, 5, 4],
            [2, 6, 7, 3],
            [0, 4, 6, 2],
            [1, 3, 7, 5],
        ];
        let faces: Vec<[u32; 3]> = quads
            .iter()
            .flat_map(|q| [[q[0], q[1], q[2]], [q[0], q[2], q[3]]])
            .collect();
        let uvs = v.iter().map(|p| [p.x * 0.5 + p.z * 0.25, p.y * 0.5 + p.z * 0.25]).collect::<Vec<_>>();
        SurfaceIndex::new(&v, &faces, &uvs)
    }

    /// Independent projection: plane projection if inside, else the best of
    /// the three clamped edge projections.
    fn brute_force_closest(q: &Vec3, idx: &SurfaceIndex) -> Vec3 {
        let mut best = (f64::INFINITY, Vec3::zeros());
        for f in idx.faces() {
            let [a, b, c] = f.map(|i| idx.vertices()[i as usize]);
            let n = (b - a).cross(&(c - a)).normalize();
            let p = q - n * n.dot(&(q - a));
            let inside = [(a, b), (b, c), (c, a)]
                .iter()
                .all(|(s, e)| (e - s).cross(&(p - s)).dot(&n) >= 0.0);
            let mut cands = vec![];
            if inside {
                cands.push(p);
            }
            for (s, e) in [(a, b), (b, c), (c, a)] {
                let t = ((q - s).dot(&(e - s)) / (e - s).norm_squared()).clamp(0.0, 1.0);
                cands.push(s + (e - s) * t);
            }
            for c in cands {
                let d = (q - c).norm_squared();
                if d < best.0 {
                    best = (d, c);
                }
            }
        }
        best.1
    }

    #[test]
    fn query_on_vertex_returns_vertex() {
        let idx = unit_cube();
        let sp = idx.closest_point(&Vec3::new(1.0, 1.0, 0.0));
        assert_abs_diff_eq!(sp.position, Vec3::new(1.0, 1.0, 0.0), epsilon = 1e-15);
        assert!(sp.barycentric.iter().filter(|b| **b == 1.0).count() == 1);
        let vid = idx.faces()[sp.face][sp.barycentric.iter().position(|b| *b == 1.0).unwrap()];
        assert_eq!(vid, 3);
        assert_eq!(sp.uv, [0.5, 0.5]);
    }

    #[test]
    fn query_above_centroid_projects_to_centroid() {
        let v = [Vec3::zeros(), Vec3::new(1.0, 0.0, 0.0), Vec3::new(0.0, 1.0, 0.0)];
        let idx = SurfaceIndex::new(&v, &[[0, 1, 2]], &[[0.0, 0.0], [1.0, 0.0], [0.0, 1.0]]);
        let centroid = Vec3::new(1.0 / 3.0, 1.0 / 3.0, 0.0);
        let sp = idx.closest_point(&(centroid + Vec3::new(0.0, 0.0, 0.7)));
        assert_abs_diff_eq!(sp.position, centroid, epsilon = 1e-12);
        for b in sp.barycentric {
            assert_abs_diff_eq!(b, 1.0 / 3.0, epsilon = 1e-12);
        }
        assert_abs_diff_eq!(sp.normal, Vec3::z(), epsilon = 1e-12);
    }

    #[test]
    fn bvh_matches_brute_force_on_cube() {
        let idx = unit_cube();
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        for _ in 0..1000 {
            let q = Vec3::new(rng.gen_range(-1.0..2.0), rng.gen_range(-1.0..2.0), rng.gen_range(-1.0..2.0));
            let sp = idx.closest_point(&q);
            assert_abs_diff_eq!(sp.position, brute_force_closest(&q, &idx), epsilon = 1e-9);
            let s: f64 = sp.barycentric.iter().sum();
            assert!((s - 1.0).abs() < 1e-9 && sp.barycentric.iter().all(|b| *b >= -1e-9));
            assert!((sp.normal.norm() - 1.0).abs() < 1e-9);
        }
    }

    #[test]
    fn cube_sign_is_inside_negative() {
        let idx = unit_cube();
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for _ in 0..500 {
            let q = Vec3::new(rng.gen_range(-0.5..1.5), rng.gen_range(-0.5..1.5), rng.gen_range(-0.5..1.5));
            let inside = q.iter().all(|c| (0.0..=1.0).contains(c));
            let h = idx.signed_height(&q);
            if h.d.abs() > 1e-9 {
                assert_eq!(h.d < 0.0, inside, "query {q:?} d {}", h.d);
            }
        }
    }

    #[test]
    fn flat_patch_signed_height() {
        let v = [Vec3::zeros(), Vec3::new(2.0, 0.0, 0.0), Vec3::new(2.0, 2.0, 0.0), Vec3::new(0.0, 2.0, 0.0)];
        let uvs = [[0.0, 0.0], [1.0, 0.0], [1.0, 1.0], [0.0, 1.0]];
        let idx = SurfaceIndex::new(&v, &[[0, 1, 2], [0, 2, 3]], &uvs);
        let x0 = Vec3::new(0.6, 1.3, 0.0);
        for d in [0.25, 1e-3, 0.9] {
            let up = idx.signed_height(&(x0 + Vec3::z() * d));
            let down = idx.signed_height(&(x0 - Vec3::z() * d));
            assert_abs_diff_eq!(up.u, 0.3, epsilon = 1e-12);
            assert_abs_diff_eq!(up.v, 0.65, epsilon = 1e-12);
            assert_abs_diff_eq!(up.d, d, epsilon = 1e-12);
            assert_abs_diff_eq!(down.d, -d, epsilon = 1e-12);
            assert_eq!((up.u, up.v), (down.u, down.v));
        }
        // on the surface the tie resolves to +0
        let on = idx.signed_height(&x0);
        assert!(on.d == 0.0 && on.d.is_sign_positive());
    }

    #[test]
    fn jacobian_matches_finite_differences() {
        let (_, mesh) = build_default_body(&BodySpec::default()).unwrap();
        let idx = SurfaceIndex::from_mesh(&mesh);
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let mut checked = 0;
        while checked < 200 {
            let v = mesh.vertices[rng.gen_range(0..mesh.vertex_count())];
            let q = v + Vec3::new(rng.gen_range(-0.05..0.05), rng.gen_range(-0.05..0.05), rng.gen_range(-0.05..0.05));
            let (_, jac) = idx.signed_height_with_jacobian(&q);
            let e = 1e-7;
            let mut fd = Mat3::zeros();
            let mut same_face = true;
            let f0 = idx.closest_point(&q).face;
            for c in 0..3 {
                let mut qp = q;
                qp[c] += e;
                let mut qm = q;
                qm[c] -= e;
                same_face &= idx.closest_point(&qp).face == f0 && idx.closest_point(&qm).face == f0;
                let hp = idx.signed_height(&qp).to_array();
                let hm = idx.signed_height(&qm).to_array();
                for r in 0..3 {
                    fd[(r, c)] = (hp[r] - hm[r]) / (2.0 * e);
                }
            }
            // finite differences are meaningless across a region switch
            if !same_face || fd.abs().max() > 1e3 {
                continue;
            }
            assert_abs_diff_eq!(jac, fd, epsilon = 1e-5);
            checked += 1;
        }
    }

    #[test]
    fn knn_weights_for_coincident_and_symmetric_queries() {
        let pts: Vec<Vec3> = vec![Vec3::x(), -Vec3::x(), Vec3::y(), -Vec3::y(), Vec3::new(5.0, 5.0, 5.0)];
        let idx = VertexIndex::new(&pts);
        let w = knn_inverse_distance(&Vec3::zeros(), &idx, 4);
        assert_eq!(w.indices, vec![0, 1, 2, 3]);
        for x in &w.weights {
            assert_abs_diff_eq!(*x, 0.25, epsilon = 1e-12);
        }
        let w = knn_inverse_distance(&pts[2], &idx, 4);
        assert_eq!(w.indices[0], 2);
        assert!(w.weights[0] >= 1.0 - 1e-4);
        assert_abs_diff_eq!(w.weights.iter().sum::<f64>(), 1.0, epsilon = 1e-12);
    }

    #[test]
    fn knn_matches_exhaustive_sort() {
        let (_, mesh) = build_default_body(&BodySpec::default()).unwrap();
        let idx = VertexIndex::new(&mesh.vertices);
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        for _ in 0..1000 {
            let q = Vec3::new(rng.gen_range(-0.9..0.9), rng.gen_range(-0.1..1.8), rng.gen_range(-0.3..0.3));
            let got = idx.knn(&q, 4);
            let mut all: Vec<(f64, usize)> =
                mesh.vertices.iter().enumerate().map(|(i, v)| ((v - q).norm_squared(), i)).collect();
            all.sort_by(|a, b| a.partial_cmp(b).unwrap());
            let want: Vec<usize> = all[..4].iter().map(|x| x.1).collect();
            assert_eq!(got.iter().map(|x| x.0).collect::<Vec<_>>(), want);
        }
    }

    #[test]
    fn knn_weight_gradients_match_finite_differences() {
        let pts: Vec<Vec3> = (0..20).map(|i| Vec3::new((i as f64).sin(), (i as f64 * 0.7).cos(), i as f64 * 0.05)).collect();
        let idx = VertexIndex::new(&pts);
        let q = Vec3::new(0.1, 0.2, 0.3);
        let w = knn_inverse_distance(&q, &idx, 4);
        let g = w.gradients(&q, &pts);
        let e = 1e-6;
        for c in 0..3 {
            let mut qp = q;
            qp[c] += e;
            let mut qm = q;
            qm[c] -= e;
            let wp = KnnWeights::from_neighbors(
                &w.indices.iter().map(|&i| (i, (pts[i] - qp).norm_squared())).collect::<Vec<_>>(),
            );
            let wm = KnnWeights::from_neighbors(
                &w.indices.iter().map(|&i| (i, (pts[i] - qm).norm_squared())).collect::<Vec<_>>(),
            );
            for j in 0..4 {
                assert_abs_diff_eq!(g[j][c], (wp.weights[j] - wm.weights[j]) / (2.0 * e), epsilon = 1e-7);
            }
        }
    }
}
