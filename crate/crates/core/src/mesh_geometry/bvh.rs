use crate::math::Vec3;

const LEAF_SIZE: usize = 4;

#[derive(Clone, Debug)]
struct Node {
    lo: Vec3,
    hi: Vec3,
    /// Leaf when `count > 0`: `faces[start..start + count]`; otherwise an
    /// inner node with children `left` and `right`.
    start: usize,
    count: usize,
    left: usize,
    right: usize,
}

/// Axis-aligned bounding-volume hierarchy over triangles.
#[derive(Clone, Debug)]
pub(crate) struct Bvh {
    nodes: Vec<Node>,
    faces: Vec<u32>,
}

impl Bvh {
    pub fn new(vertices: &[Vec3], faces: &[[u32; 3]]) -> Self {
        let centroids: Vec<Vec3> = faces
            .iter()
            .map(|f| f.iter().map(|&i| vertices[i as usize]).sum::<Vec3>() / 3.0)
            .collect();
        let mut bvh = Self {
            nodes: Vec::new(),
            faces: (0..faces.len() as u32).collect(),
        };
        if !faces.is_empty() {
            bvh.build(vertices, faces, &centroids, 0, faces.len());
        }
        bvh
    }

    fn build(
        &mut self,
        vertices: &[Vec3],
        faces: &[[u32; 3]],
        centroids: &[Vec3],
        start: usize,
        end: usize,
    ) -> usize {
        let (mut lo, mut hi) = (Vec3::repeat(f64::INFINITY), Vec3::repeat(f64::NEG_INFINITY));
        let (mut clo, mut chi) = (lo, hi);
        for &f in &self.faces[start..end] {
            for &v in &faces[f as usize] {
                lo = lo.inf(&vertices[v as usize]);
                hi = hi.sup(&vertices[v as usize]);
            }
            clo = clo.inf(&centroids[f as usize]);
            chi = chi.sup(&centroids[f as usize]);
        }
        let id = self.nodes.len();
        self.nodes.push(Node {
            lo,
            hi,
            start,
            count: end - start,
            left: 0,
            right: 0,
        });
        if end - start <= LEAF_SIZE {
            return id;
        }
        let axis = (chi - clo).imax();
        let mid = (start + end) / 2;
        self.faces[start..end].select_nth_unstable_by(mid - start, |&a, &b| {
            centroids[a as usize][axis].total_cmp(&centroids[b as usize][axis])
        });
        let left = self.build(vertices, faces, centroids, start, mid);
        let right = self.build(vertices, faces, centroids, mid, end);
        let node = &mut self.nodes[id];
        node.count = 0;
        node.left = left;
        node.right = right;
        id
    }

    fn box_dist2(&self, node: usize, q: &Vec3) -> f64 {
        let n = &self.nodes[node];
        let d = (n.lo - q).sup(&(q - n.hi)).sup(&Vec3::zeros());
        d.norm_squared()
    }

    /// Visits candidate faces nearest-box-first. `visit` receives a face
    /// index and returns the current best squared distance (plus tolerance)
    /// used for pruning.
    pub fn visit_nearest(&self, q: &Vec3, mut visit: impl FnMut(usize) -> f64) {
        if self.nodes.is_empty() {
            return;
        }
        let mut bound = f64::INFINITY;
        let mut stack: Vec<(f64, usize)> = vec![(self.box_dist2(0, q), 0)];
        while let Some((d, node)) = stack.pop() {
            if d > bound {
                continue;
            }
            let n = &self.nodes[node];
            if n.count > 0 {
                for &f in &self.faces[n.start..n.start + n.count] {
                    bound = visit(f as usize);
                }
            } else {
                let dl = self.box_dist2(n.left, q);
                let dr = self.box_dist2(n.right, q);
                // push the farther child first so the nearer one pops next
                if dl <= dr {
                    stack.push((dr, n.right));
                    stack.push((dl, n.left));
                } else {
                    stack.push((dl, n.left));
                    stack.push((dr, n.right));
                }
            }
        }
    }
}
