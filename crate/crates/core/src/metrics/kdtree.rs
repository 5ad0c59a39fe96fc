//! Static 2-d kd-tree for nearest-neighbour queries.

use crate::scalar::Scalar;

pub const LEAF_SIZE: usize = 16;

#[derive(Debug, Clone)]
enum Node<T> {
    Leaf {
        start: usize,
        end: usize,
    },
    Split {
        axis: usize,
        value: T,
        left: usize,
        right: usize,
    },
}

/// Median-split kd-tree over planar points. Immutable once built, so it can
/// be queried from many threads at once.
#[derive(Debug, Clone)]
pub struct KdTree<T> {
    points: Vec<[T; 2]>,
    order: Vec<usize>,
    nodes: Vec<Node<T>>,
}

#[inline]
pub(crate) fn dist2<T: Scalar>(a: &[T; 2], b: &[T; 2]) -> T {
    let dx = a[0] - b[0];
    let dy = a[1] - b[1];
    dx * dx + dy * dy
}

impl<T: Scalar> KdTree<T> {
    pub fn build(points: &[[T; 2]]) -> Self {
        let mut tree = KdTree {
            points: points.to_vec(),
            order: (0..points.len()).collect(),
            nodes: Vec::new(),
        };
        if !points.is_empty() {
            tree.build_node(0, points.len());
        }
        tree
    }

    fn build_node(&mut self, start: usize, end: usize) -> usize {
        let id = self.nodes.len();
        if end - start <= LEAF_SIZE {
            self.nodes.push(Node::Leaf { start, end });
            return id;
        }
        let axis = self.widest_axis(start, end);
        let mid = start + (end - start) / 2;
        let points = &self.points;
        self.order[start..end].select_nth_unstable_by(mid - start, |&a, &b| {
            points[a][axis]
                .partial_cmp(&points[b][axis])
                .unwrap_or(std::cmp::Ordering::Equal)
        });
        let value = self.points[self.order[mid]][axis];
        self.nodes.push(Node::Leaf { start, end });
        let left = self.build_node(start, mid);
        let right = self.build_node(mid, end);
        self.nodes[id] = Node::Split {
            axis,
            value,
            left,
            right,
        };
        id
    }

    fn widest_axis(&self, start: usize, end: usize) -> usize {
        let mut lo = [T::infinity(); 2];
        let mut hi = [T::neg_infinity(); 2];
        for &i in &self.order[start..end] {
            for d in 0..2 {
                lo[d] = lo[d].min(self.points[i][d]);
                hi[d] = hi[d].max(self.points[i][d]);
            }
        }
        if hi[1] - lo[1] > hi[0] - lo[0] {
            1
        } else {
            0
        }
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    pub fn points(&self) -> &[[T; 2]] {
        &self.points
    }

    /// Closest point to `query` as `(squared distance, index)`; `None` when
    /// the tree is empty.
    pub fn nearest2(&self, query: &[T; 2]) -> Option<(T, usize)> {
        if self.points.is_empty() {
            return None;
        }
        let mut best = (T::infinity(), usize::MAX);
        self.search(0, query, &mut best);
        Some(best)
    }

    /// Euclidean distance and index of the closest point.
    pub fn nearest(&self, query: &[T; 2]) -> Option<(T, usize)> {
        self.nearest2(query).map(|(d2, i)| (d2.sqrt(), i))
    }

    fn search(&self, node: usize, query: &[T; 2], best: &mut (T, usize)) {
        match self.nodes[node] {
            Node::Leaf { start, end } => {
                for &i in &self.order[start..end] {
                    let d = dist2(query, &self.points[i]);
                    if d < best.0 || (d == best.0 && i < best.1) {
                        *best = (d, i);
                    }
                }
            }
            Node::Split {
                axis,
                value,
                left,
                right,
            } => {
                let gap = query[axis] - value;
                let (near, far) = if gap < T::zero() {
                    (left, right)
                } else {
                    (right, left)
                };
                self.search(near, query, best);
                if gap * gap <= best.0 {
                    self.search(far, query, best);
                }
            }
        }
    }
}
