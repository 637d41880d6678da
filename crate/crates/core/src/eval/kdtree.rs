use nalgebra::Vector3;

use crate::Real;

#[derive(Debug, Clone, Copy)]
struct Node {
    point: usize,
    axis: u8,
    left: Option<u32>,
    right: Option<u32>,
}

/// Static 3-d tree answering exact nearest-neighbour queries.
#[derive(Debug, Clone)]
pub struct KdTree<T: Real> {
    points: Vec<Vector3<T>>,
    nodes: Vec<Node>,
    root: Option<u32>,
}

impl<T: Real> KdTree<T> {
    pub fn new(points: Vec<Vector3<T>>) -> Self {
        let mut idx: Vec<usize> = (0..points.len()).collect();
        let mut nodes = Vec::with_capacity(points.len());
        let root = build(&points, &mut idx, 0, &mut nodes);
        Self { points, nodes, root }
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    /// Index and squared distance of the point nearest to `q`. Among equally
    /// near points the one with the smallest index wins.
    pub fn nearest(&self, q: &Vector3<T>) -> Option<(usize, T)> {
        let mut best: Option<(usize, T)> = None;
        let mut stack: Vec<u32> = Vec::with_capacity(64);
        if let Some(r) = self.root {
            stack.push(r);
        }
        // Each stack entry is visited only if its splitting plane could
        // still hide a closer point; that check happens before pushing.
        while let Some(n) = stack.pop() {
            let node = self.nodes[n as usize];
            let p = &self.points[node.point];
            let d2 = (p - q).norm_squared();
            match best {
                Some((bi, bd)) if d2 > bd || (d2 == bd && node.point > bi) => {}
                _ => best = Some((node.point, d2)),
            }
            let a = node.axis as usize;
            let diff = q[a] - p[a];
            let (near, far) = if diff < T::zero() { (node.left, node.right) } else { (node.right, node.left) };
            if let Some(f) = far {
                if diff * diff <= best.map_or(T::infinity(), |b| b.1) {
                    stack.push(f);
                }
            }
            if let Some(nn) = near {
                stack.push(nn);
            }
        }
        best
    }
}

fn build<T: Real>(points: &[Vector3<T>], idx: &mut [usize], depth: usize, nodes: &mut Vec<Node>) -> Option<u32> {
    if idx.is_empty() {
        return None;
    }
    let axis = depth % 3;
    let mid = idx.len() / 2;
    idx.select_nth_unstable_by(mid, |&a, &b| {
        points[a][axis].partial_cmp(&points[b][axis]).unwrap_or(std::cmp::Ordering::Equal).then(a.cmp(&b))
    });
    let slot = nodes.len();
    nodes.push(Node { point: idx[mid], axis: axis as u8, left: None, right: None });
    let (lo, rest) = idx.split_at_mut(mid);
    let left = build(points, lo, depth + 1, nodes);
    let right = build(points, &mut rest[1..], depth + 1, nodes);
    nodes[slot].left = left;
    nodes[slot].right = right;
    Some(slot as u32)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn brute(points: &[Vector3<f64>], q: &Vector3<f64>) -> (usize, f64) {
        points
            .iter()
            .enumerate()
            .map(|(i, p)| (i, (p - q).norm_squared()))
            .fold((usize::MAX, f64::INFINITY), |b, c| if c.1 < b.1 { c } else { b })
    }

    #[test]
    fn empty_tree() {
        assert!(KdTree::<f64>::new(vec![]).nearest(&Vector3::zeros()).is_none());
    }

    #[test]
    fn duplicate_points_pick_lowest_index() {
        let p = Vector3::new(1.0, 2.0, 3.0);
        let t = KdTree::new(vec![Vector3::zeros(), p, p, p]);
        assert_eq!(t.nearest(&Vector3::new(1.0, 2.0, 3.1)).unwrap().0, 1);
    }

    proptest! {
        #[test]
        fn matches_brute_force(
            pts in prop::collection::vec((-5.0f64..5.0, -5.0f64..5.0, -5.0f64..5.0), 1..200),
            qs in prop::collection::vec((-6.0f64..6.0, -6.0f64..6.0, -6.0f64..6.0), 1..20),
        ) {
            let points: Vec<Vector3<f64>> = pts.into_iter().map(|(x, y, z)| Vector3::new(x, y, z)).collect();
            let tree = KdTree::new(points.clone());
            for (x, y, z) in qs {
                let q = Vector3::new(x, y, z);
                prop_assert_eq!(tree.nearest(&q).unwrap(), brute(&points, &q));
            }
        }

        #[test]
        fn grid_points_with_ties(n in 2usize..6, q in (-1.0f64..6.0, -1.0f64..6.0, -1.0f64..6.0)) {
            let mut points = Vec::new();
            for i in 0..n { for j in 0..n { for k in 0..n {
                points.push(Vector3::new(i as f64, j as f64, k as f64));
            }}}
            let tree = KdTree::new(points.clone());
            let q = Vector3::new(q.0.round() + 0.5, q.1, q.2);
            prop_assert_eq!(tree.nearest(&q).unwrap(), brute(&points, &q));
        }
    }
}
