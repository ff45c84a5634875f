//! Voxel-hashed neighbour search and a small disjoint-set forest.
//!
//! Both are shared by node extraction, node merging and edge building, which
//! all reduce to "which pairs of points lie closer than some radius".

use std::collections::HashMap;

use nalgebra::Vector3;

type CellKey = (i64, i64, i64);

/// Beyond this many cells per axis the grid would overflow or degenerate, so
/// callers fall back to the quadratic scan.
const MAX_CELL_INDEX: f64 = 1.0e15;

/// Uniform hash grid over a fixed point set. Cell edge equals the query
/// radius, so every pair within the radius sits in adjacent cells.
pub struct VoxelGrid<'a> {
    points: &'a [Vector3<f64>],
    cell: f64,
    cells: HashMap<CellKey, Vec<usize>>,
}

impl<'a> VoxelGrid<'a> {
    /// Returns `None` if the radius makes hashing meaningless (zero, infinite,
    /// or tiny relative to the coordinates).
    pub fn new(points: &'a [Vector3<f64>], cell: f64) -> Option<Self> {
        if !(cell > 0.0) || !cell.is_finite() {
            return None;
        }
        let mut cells: HashMap<CellKey, Vec<usize>> = HashMap::new();
        for (i, p) in points.iter().enumerate() {
            let key = cell_key(p, cell)?;
            cells.entry(key).or_default().push(i);
        }
        Some(Self { points, cell, cells })
    }

    /// Calls `visit(i, j)` once for every unordered pair `i < j` passing
    /// `within(distance²)`. Pairs are only drawn from adjacent cells.
    pub fn for_each_close_pair(&self, mut within: impl FnMut(f64) -> bool, mut visit: impl FnMut(usize, usize)) {
        for (i, p) in self.points.iter().enumerate() {
            // cell_key succeeded for every point in new()
            let (cx, cy, cz) = cell_key(p, self.cell).expect("point hashed at construction");
            for dx in -1..=1 {
                for dy in -1..=1 {
                    for dz in -1..=1 {
                        let Some(bucket) = self.cells.get(&(cx + dx, cy + dy, cz + dz)) else {
                            continue;
                        };
                        for &j in bucket {
                            if j > i && within((self.points[j] - p).norm_squared()) {
                                visit(i, j);
                            }
                        }
                    }
                }
            }
        }
    }
}

fn cell_key(p: &Vector3<f64>, cell: f64) -> Option<CellKey> {
    let f = |v: f64| {
        let c = (v / cell).floor();
        (c.abs() < MAX_CELL_INDEX).then_some(c as i64)
    };
    Some((f(p.x)?, f(p.y)?, f(p.z)?))
}

/// All unordered index pairs `(i, j)`, `i < j`, whose squared distance passes
/// `within`. `radius` bounds the predicate and sizes the grid; the quadratic
/// scan is used when the grid cannot be built.
pub fn close_pairs(points: &[Vector3<f64>], radius: f64, within: impl Fn(f64) -> bool) -> Vec<(usize, usize)> {
    let mut out = Vec::new();
    match VoxelGrid::new(points, radius) {
        Some(grid) => grid.for_each_close_pair(&within, |i, j| out.push((i, j))),
        None => {
            for i in 0..points.len() {
                for j in i + 1..points.len() {
                    if within((points[j] - points[i]).norm_squared()) {
                        out.push((i, j));
                    }
                }
            }
        }
    }
    out.sort_unstable();
    out
}

/// Disjoint-set forest with path halving and union by size.
pub struct UnionFind {
    parent: Vec<usize>,
    size: Vec<usize>,
}

impl UnionFind {
    pub fn new(n: usize) -> Self {
        Self {
            parent: (0..n).collect(),
            size: vec![1; n],
        }
    }

    pub fn find(&mut self, mut x: usize) -> usize {
        while self.parent[x] != x {
            self.parent[x] = self.parent[self.parent[x]];
            x = self.parent[x];
        }
        x
    }

    pub fn union(&mut self, a: usize, b: usize) {
        let (mut ra, mut rb) = (self.find(a), self.find(b));
        if ra == rb {
            return;
        }
        if self.size[ra] < self.size[rb] {
            std::mem::swap(&mut ra, &mut rb);
        }
        self.parent[rb] = ra;
        self.size[ra] += self.size[rb];
    }

    /// Groups element indices by component. Components are ordered by their
    /// smallest member and members are ascending.
    pub fn components(&mut self) -> Vec<Vec<usize>> {
        let n = self.parent.len();
        let mut slot: HashMap<usize, usize> = HashMap::new();
        let mut groups: Vec<Vec<usize>> = Vec::new();
        for i in 0..n {
            let root = self.find(i);
            let idx = *slot.entry(root).or_insert_with(|| {
                groups.push(Vec::new());
                groups.len() - 1
            });
            groups[idx].push(i);
        }
        groups
    }
}
