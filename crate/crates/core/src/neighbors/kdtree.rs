//! Exact k-d tree with a best-first nearest-neighbour iterator.

use std::cmp::Ordering;
use std::collections::BinaryHeap;

use serde::{Deserialize, Serialize};

use crate::error::{check_dim, Error, Result};

const LEAF_SIZE: usize = 8;

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub enum Metric {
    /// Sum of absolute differences divided by the dimension.
    #[default]
    NormalisedL1,
    Euclidean,
}

impl Metric {
    pub fn distance(&self, a: &[f64], b: &[f64]) -> f64 {
        match self {
            Metric::NormalisedL1 => {
                a.iter().zip(b).map(|(p, q)| (p - q).abs()).sum::<f64>() / a.len().max(1) as f64
            }
            Metric::Euclidean => a.iter().zip(b).map(|(p, q)| (p - q) * (p - q)).sum::<f64>().sqrt(),
        }
    }

    /// Distance from `q` to the nearest point of the box `[lo, hi]`.
    fn box_distance(&self, q: &[f64], lo: &[f64], hi: &[f64]) -> f64 {
        let gaps = q.iter().zip(lo.iter().zip(hi)).map(|(v, (l, h))| (l - v).max(v - h).max(0.0));
        match self {
            Metric::NormalisedL1 => gaps.sum::<f64>() / q.len().max(1) as f64,
            Metric::Euclidean => gaps.map(|g| g * g).sum::<f64>().sqrt(),
        }
    }
}

#[derive(Clone, Debug)]
struct Node {
    lo: Vec<f64>,
    hi: Vec<f64>,
    kind: NodeKind,
}

#[derive(Clone, Debug)]
enum NodeKind {
    Leaf { start: usize, end: usize },
    Split { left: usize, right: usize },
}

/// Points with caller-supplied ids, e.g. dataset row indices.
#[derive(Clone, Debug)]
pub struct KdTree {
    dim: usize,
    metric: Metric,
    points: Vec<Vec<f64>>,
    ids: Vec<usize>,
    nodes: Vec<Node>,
}

impl KdTree {
    pub fn build(entries: Vec<(usize, Vec<f64>)>, metric: Metric) -> Result<Self> {
        let Some(first) = entries.first() else {
            return Err(Error::NoCandidates);
        };
        let dim = first.1.len();
        for (_, p) in &entries {
            check_dim(dim, p.len())?;
        }
        let mut order: Vec<usize> = (0..entries.len()).collect();
        let mut tree = KdTree { dim, metric, points: Vec::new(), ids: Vec::new(), nodes: Vec::new() };
        tree.split(&entries, &mut order, 0, entries.len());
        tree.points = order.iter().map(|&i| entries[i].1.clone()).collect();
        tree.ids = order.iter().map(|&i| entries[i].0).collect();
        Ok(tree)
    }

    fn split(&mut self, entries: &[(usize, Vec<f64>)], order: &mut [usize], start: usize, end: usize) -> usize {
        let mut lo = vec![f64::INFINITY; self.dim];
        let mut hi = vec![f64::NEG_INFINITY; self.dim];
        for &i in &order[start..end] {
            for (d, v) in entries[i].1.iter().enumerate() {
                lo[d] = lo[d].min(*v);
                hi[d] = hi[d].max(*v);
            }
        }
        let id = self.nodes.len();
        let (axis, spread) = (0..self.dim)
            .map(|d| (d, hi[d] - lo[d]))
            .fold((0, -1.0), |best, cur| if cur.1 > best.1 { cur } else { best });
        if end - start <= LEAF_SIZE || spread <= 0.0 {
            self.nodes.push(Node { lo, hi, kind: NodeKind::Leaf { start, end } });
            return id;
        }
        self.nodes.push(Node { lo, hi, kind: NodeKind::Leaf { start, end } });
        let slice = &mut order[start..end];
        slice.sort_by(|&a, &b| entries[a].1[axis].total_cmp(&entries[b].1[axis]).then(a.cmp(&b)));
        let mid = start + (end - start) / 2;
        let left = self.split(entries, order, start, mid);
        let right = self.split(entries, order, mid, end);
        self.nodes[id].kind = NodeKind::Split { left, right };
        id
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn metric(&self) -> Metric {
        self.metric
    }

    /// Stored `(id, point)` pairs in tree order.
    pub fn entries(&self) -> impl Iterator<Item = (usize, &[f64])> {
        self.ids.iter().copied().zip(self.points.iter().map(Vec::as_slice))
    }

    /// Iterates over stored points by increasing distance from `query`,
    /// ties broken by smaller id.
    pub fn nearest_iter<'a>(&'a self, query: &'a [f64]) -> Result<NearestIter<'a>> {
        check_dim(self.dim, query.len())?;
        let mut heap = BinaryHeap::new();
        let root = &self.nodes[0];
        heap.push(Entry { dist: self.metric.box_distance(query, &root.lo, &root.hi), item: Item::Node(0) });
        Ok(NearestIter { tree: self, query, heap })
    }

    /// The `k` nearest `(id, distance)` pairs.
    pub fn nearest(&self, query: &[f64], k: usize) -> Result<Vec<Neighbour>> {
        Ok(self.nearest_iter(query)?.take(k).collect())
    }
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct Neighbour {
    pub id: usize,
    pub distance: f64,
    pub point: Vec<f64>,
}

#[derive(Debug, PartialEq)]
enum Item {
    Node(usize),
    /// Position in tree order plus the caller id.
    Point(usize, usize),
}

#[derive(Debug)]
struct Entry {
    dist: f64,
    item: Item,
}

impl Entry {
    fn key(&self) -> (u8, usize) {
        match self.item {
            Item::Node(n) => (0, n),
            Item::Point(_, id) => (1, id),
        }
    }
}

impl PartialEq for Entry {
    fn eq(&self, other: &Self) -> bool {
        self.cmp(other) == Ordering::Equal
    }
}

impl Eq for Entry {}

impl PartialOrd for Entry {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

impl Ord for Entry {
    // Reversed for a min-heap; nodes expand before points at equal distance.
    fn cmp(&self, other: &Self) -> Ordering {
        other.dist.total_cmp(&self.dist).then_with(|| other.key().cmp(&self.key()))
    }
}

pub struct NearestIter<'a> {
    tree: &'a KdTree,
    query: &'a [f64],
    heap: BinaryHeap<Entry>,
}

impl Iterator for NearestIter<'_> {
    type Item = Neighbour;

    fn next(&mut self) -> Option<Neighbour> {
        let tree = self.tree;
        while let Some(entry) = self.heap.pop() {
            match entry.item {
                Item::Point(pos, id) => {
                    return Some(Neighbour { id, distance: entry.dist, point: tree.points[pos].clone() });
                }
                Item::Node(n) => match tree.nodes[n].kind {
                    NodeKind::Leaf { start, end } => {
                        for pos in start..end {
                            let dist = tree.metric.distance(self.query, &tree.points[pos]);
                            self.heap.push(Entry { dist, item: Item::Point(pos, tree.ids[pos]) });
                        }
                    }
                    NodeKind::Split { left, right } => {
                        for child in [left, right] {
                            let c = &tree.nodes[child];
                            let dist = tree.metric.box_distance(self.query, &c.lo, &c.hi);
                            self.heap.push(Entry { dist, item: Item::Node(child) });
                        }
                    }
                },
            }
        }
        None
    }
}
