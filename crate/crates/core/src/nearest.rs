//! Exact nearest-neighbor queries under the L1 metric.
//!
//! A small k-d tree over a fixed point set. Ties in distance resolve to the
//! lowest item id, which matches an exhaustive scan in index order.

const LEAF_SIZE: usize = 8;

pub fn l1(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y).abs()).sum()
}

#[derive(Debug, Clone)]
enum Node {
    Leaf(Vec<usize>),
    Split {
        dim: usize,
        value: f64,
        left: Box<Node>,
        right: Box<Node>,
    },
}

/// Static L1 k-d tree. Items are addressed by caller-supplied ids.
#[derive(Debug, Clone)]
pub struct L1Tree {
    points: Vec<Vec<f64>>,
    ids: Vec<usize>,
    root: Option<Node>,
}

impl L1Tree {
    pub fn new(points: Vec<Vec<f64>>, ids: Vec<usize>) -> Self {
        assert_eq!(points.len(), ids.len());
        let slots: Vec<usize> = (0..points.len()).collect();
        let root = (!slots.is_empty()).then(|| build(&points, slots));
        Self { points, ids, root }
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    pub fn point(&self, slot: usize) -> &[f64] {
        &self.points[slot]
    }

    pub fn id(&self, slot: usize) -> usize {
        self.ids[slot]
    }

    /// Slot of the nearest point and its L1 distance.
    pub fn nearest(&self, x: &[f64]) -> Option<(usize, f64)> {
        let root = self.root.as_ref()?;
        let mut best = (usize::MAX, f64::INFINITY);
        self.search(root, x, &mut best);
        Some(best)
    }

    fn better(&self, cand: (usize, f64), best: (usize, f64)) -> bool {
        cand.1 < best.1 || (cand.1 == best.1 && (best.0 == usize::MAX || self.ids[cand.0] < self.ids[best.0]))
    }

    fn search(&self, node: &Node, x: &[f64], best: &mut (usize, f64)) {
        match node {
            Node::Leaf(slots) => {
                for &s in slots {
                    let cand = (s, l1(x, &self.points[s]));
                    if self.better(cand, *best) {
                        *best = cand;
                    }
                }
            }
            Node::Split {
                dim,
                value,
                left,
                right,
            } => {
                let diff = x[*dim] - value;
                let (near, far) = if diff <= 0.0 { (left, right) } else { (right, left) };
                self.search(near, x, best);
                if diff.abs() <= best.1 {
                    self.search(far, x, best);
                }
            }
        }
    }
}

fn build(points: &[Vec<f64>], mut slots: Vec<usize>) -> Node {
    if slots.len() <= LEAF_SIZE {
        return Node::Leaf(slots);
    }
    let d = points[slots[0]].len();
    let spread = |k: usize| {
        let (lo, hi) = slots.iter().fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), &s| {
            (lo.min(points[s][k]), hi.max(points[s][k]))
        });
        hi - lo
    };
    let dim = (0..d)
        .max_by(|&a, &b| spread(a).total_cmp(&spread(b)))
        .unwrap_or(0);
    if spread(dim) == 0.0 {
        return Node::Leaf(slots);
    }
    slots.sort_by(|&a, &b| points[a][dim].total_cmp(&points[b][dim]));
    let mid = slots.len() / 2;
    let value = points[slots[mid - 1]][dim];
    // points equal to the split value go left so both sides are non-empty
    let split_at = slots.partition_point(|&s| points[s][dim] <= value);
    if split_at == slots.len() {
        return Node::Leaf(slots);
    }
    let right = slots.split_off(split_at);
    Node::Split {
        dim,
        value,
        left: Box::new(build(points, slots)),
        right: Box::new(build(points, right)),
    }
}
