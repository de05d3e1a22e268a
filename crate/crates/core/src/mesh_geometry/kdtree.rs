use crate::math::Vec3;

const LEAF_SIZE: usize = 8;

#[derive(Clone, Debug)]
enum Node {
    Leaf { start: usize, end: usize },
    Split { axis: usize, value: f64, left: usize, right: usize },
}

/// Static k-d tree over a vertex array. Neighbours come back ordered by
/// `(squared distance, vertex index)`, so exact distance ties resolve to the
/// lower index.
#[derive(Clone, Debug)]
pub struct VertexIndex {
    points: Vec<Vec3>,
    order: Vec<u32>,
    nodes: Vec<Node>,
}

impl VertexIndex {
    pub fn new(points: &[Vec3]) -> Self {
        let mut idx = Self {
            points: points.to_vec(),
            order: (0..points.len() as u32).collect(),
            nodes: Vec::new(),
        };
        if !points.is_empty() {
            idx.build(0, points.len());
        }
        idx
    }

    pub fn points(&self) -> &[Vec3] {
        &self.points
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    fn build(&mut self, start: usize, end: usize) -> usize {
        let id = self.nodes.len();
        if end - start <= LEAF_SIZE {
            self.nodes.push(Node::Leaf { start, end });
            return id;
        }
        let (mut lo, mut hi) = (Vec3::repeat(f64::INFINITY), Vec3::repeat(f64::NEG_INFINITY));
        for &i in &self.order[start..end] {
            let p = self.points[i as usize];
            lo = lo.inf(&p);
            hi = hi.sup(&p);
        }
        let axis = (hi - lo).imax();
        let mid = (start + end) / 2;
        let pts = &self.points;
        self.order[start..end].select_nth_unstable_by(mid - start, |&a, &b| {
            pts[a as usize][axis].total_cmp(&pts[b as usize][axis])
        });
        let value = self.points[self.order[mid] as usize][axis];
        self.nodes.push(Node::Leaf { start, end });
        let left = self.build(start, mid);
        let right = self.build(mid, end);
        self.nodes[id] = Node::Split {
            axis,
            value,
            left,
            right,
        };
        id
    }

    /// The `k` nearest vertices as `(index, squared distance)`.
    pub fn knn(&self, q: &Vec3, k: usize) -> Vec<(usize, f64)> {
        let k = k.min(self.points.len());
        let mut best: Vec<(f64, u32)> = Vec::with_capacity(k + 1);
        if k > 0 {
            self.search(0, q, k, &mut best);
        }
        best.into_iter().map(|(d, i)| (i as usize, d)).collect()
    }

    pub fn nearest(&self, q: &Vec3) -> Option<(usize, f64)> {
        self.knn(q, 1).into_iter().next()
    }

    fn search(&self, node: usize, q: &Vec3, k: usize, best: &mut Vec<(f64, u32)>) {
        match self.nodes[node] {
            Node::Leaf { start, end } => {
                for &i in &self.order[start..end] {
                    let d = (self.points[i as usize] - q).norm_squared();
                    let key = (d, i);
                    if best.len() < k || less(key, best[best.len() - 1]) {
                        let pos = best.partition_point(|b| less(*b, key));
                        best.insert(pos, key);
                        best.truncate(k);
                    }
                }
            }
            Node::Split {
                axis,
                value,
                left,
                right,
            } => {
                let diff = q[axis] - value;
                let (near, far) = if diff < 0.0 { (left, right) } else { (right, left) };
                self.search(near, q, k, best);
                if best.len() < k || diff * diff <= best[best.len() - 1].0 {
                    self.search(far, q, k, best);
                }
            }
        }
    }
}

#[inline]
fn less(a: (f64, u32), b: (f64, u32)) -> bool {
    a.0 < b.0 || (a.0 == b.0 && a.1 < b.1)
}
