//! Node lattices over intervals, rectangles and disks, with per-node
//! quadrature weights, boundary classification and outward normals.

mod field;
pub mod io;
mod ops;
pub mod operators;

use std::f64::consts::PI;
use std::sync::Arc;

pub use field::{MatrixField, ScalarField, VectorField};
pub use ops::{boundary_flux, curl2d, divergence, gradient, inner_product, integrate, norm_f};

use crate::error::{Error, Result};

/// Subsamples per axis when measuring the part of a boundary cell inside a disk.
const CUT_CELL_SAMPLES: usize = 16;

/// Domain shape of a grid.
#[derive(Debug, Clone, PartialEq)]
pub enum Shape {
    Interval { lo: f64, hi: f64 },
    Rect { lo: [f64; 2], hi: [f64; 2] },
    Disk { center: [f64; 2], radius: f64 },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum NodeKind {
    Interior,
    Boundary,
}

/// A regular lattice restricted to a domain.
///
/// Active nodes are numbered in lexicographic order of their coordinates
/// (axis 2 varies fastest). Each active node carries the area of its cell
/// that lies inside the domain, which is the weight used by [`integrate`].
#[derive(Debug, Clone, PartialEq)]
pub struct Grid {
    shape: Shape,
    dim: usize,
    counts: [usize; 2],
    spacing: [f64; 2],
    origin: [f64; 2],
    lattice: Vec<Option<usize>>,
    active: Vec<usize>,
    kinds: Vec<NodeKind>,
    normals: Vec<[f64; 2]>,
    weights: Vec<f64>,
    boundary: Vec<usize>,
    boundary_share: f64,
}

impl Grid {
    /// Uniform nodes on `[lo, hi]`.
    pub fn interval(lo: f64, hi: f64, n: usize) -> Result<Arc<Grid>> {
        if !(lo.is_finite() && hi.is_finite() && hi > lo) {
            return Err(Error::InvalidGrid(format!("bad interval [{lo}, {hi}]")));
        }
        if n < 2 {
            return Err(Error::InvalidGrid("need at least 2 nodes".into()));
        }
        let h = (hi - lo) / (n - 1) as f64;
        let shape = Shape::Interval { lo, hi };
        Ok(Arc::new(Self::build(shape, 1, [n, 1], [h, 1.0], [lo, 0.0], |_| true)))
    }

    /// Tensor lattice on the rectangle `[lo, hi]` with `counts` nodes per axis.
    pub fn rect(lo: [f64; 2], hi: [f64; 2], counts: [usize; 2]) -> Result<Arc<Grid>> {
        for k in 0..2 {
            if !(lo[k].is_finite() && hi[k].is_finite() && hi[k] > lo[k]) {
                return Err(Error::InvalidGrid(format!("bad bounds on axis {}", k + 1)));
            }
            if counts[k] < 2 {
                return Err(Error::InvalidGrid("need at least 2 nodes per axis".into()));
            }
        }
        let spacing = [
            (hi[0] - lo[0]) / (counts[0] - 1) as f64,
            (hi[1] - lo[1]) / (counts[1] - 1) as f64,
        ];
        let shape = Shape::Rect { lo, hi };
        Ok(Arc::new(Self::build(shape, 2, counts, spacing, lo, |_| true)))
    }

    /// `n × n` lattice on the unit square.
    pub fn unit_square(n: usize) -> Result<Arc<Grid>> {
        Self::rect([0.0, 0.0], [1.0, 1.0], [n, n])
    }

    /// Lattice of `n × n` nodes on the bounding box of the disk, masked to the disk.
    pub fn disk(center: [f64; 2], radius: f64, n: usize) -> Result<Arc<Grid>> {
        if !(radius.is_finite() && radius > 0.0) || !center.iter().all(|c| c.is_finite()) {
            return Err(Error::InvalidGrid(format!("bad disk radius {radius}")));
        }
        if n < 3 {
            return Err(Error::InvalidGrid("need at least 3 nodes per axis".into()));
        }
        let h = 2.0 * radius / (n - 1) as f64;
        let origin = [center[0] - radius, center[1] - radius];
        let r2 = radius * radius * (1.0 + 1e-12);
        let shape = Shape::Disk { center, radius };
        let grid = Self::build(shape, 2, [n, n], [h, h], origin, |x| {
            let dx = x[0] - center[0];
            let dy = x[1] - center[1];
            dx * dx + dy * dy <= r2
        });
        if grid.active.is_empty() {
            return Err(Error::InvalidGrid("disk contains no nodes".into()));
        }
        Ok(Arc::new(grid))
    }

    fn build(
        shape: Shape,
        dim: usize,
        counts: [usize; 2],
        spacing: [f64; 2],
        origin: [f64; 2],
        inside: impl Fn([f64; 2]) -> bool,
    ) -> Grid {
        let total = counts[0] * counts[1];
        let mut lattice = vec![None; total];
        let mut active = Vec::new();
        for i in 0..counts[0] {
            for j in 0..counts[1] {
                let x = [
                    origin[0] + i as f64 * spacing[0],
                    origin[1] + j as f64 * spacing[1],
                ];
                if inside(x) {
                    lattice[i * counts[1] + j] = Some(active.len());
                    active.push(i * counts[1] + j);
                }
            }
        }
        let mut grid = Grid {
            shape,
            dim,
            counts,
            spacing,
            origin,
            lattice,
            active,
            kinds: Vec::new(),
            normals: Vec::new(),
            weights: Vec::new(),
            boundary: Vec::new(),
            boundary_share: 0.0,
        };
        grid.classify();
        grid
    }

    fn classify(&mut self) {
        let n = self.active.len();
        self.kinds = vec![NodeKind::Interior; n];
        self.normals = vec![[0.0; 2]; n];
        self.weights = vec![0.0; n];
        for a in 0..n {
            let open = (0..self.dim).any(|k| {
                self.neighbor(a, k, 1).is_none() || self.neighbor(a, k, -1).is_none()
            });
            if open {
                self.kinds[a] = NodeKind::Boundary;
                self.normals[a] = self.outward_normal(a);
                self.boundary.push(a);
            }
            self.weights[a] = self.cell_measure(a);
        }
        let perimeter = match self.shape {
            Shape::Interval { .. } => self.boundary.len() as f64,
            Shape::Rect { lo, hi } => 2.0 * ((hi[0] - lo[0]) + (hi[1] - lo[1])),
            Shape::Disk { radius, .. } => 2.0 * PI * radius,
        };
        if !self.boundary.is_empty() {
            self.boundary_share = perimeter / self.boundary.len() as f64;
        }
    }

    fn outward_normal(&self, a: usize) -> [f64; 2] {
        match self.shape {
            Shape::Disk { center, .. } => {
                let x = self.point(a);
                let d = [x[0] - center[0], x[1] - center[1]];
                let r = d[0].hypot(d[1]);
                if r > 0.0 {
                    [d[0] / r, d[1] / r]
                } else {
                    [1.0, 0.0]
                }
            }
            _ => {
                let ij = self.lattice_coords(a);
                let mut nrm = [0.0f64; 2];
                for k in 0..self.dim {
                    if ij[k] == 0 {
                        nrm[k] -= 1.0;
                    }
                    if ij[k] + 1 == self.counts[k] {
                        nrm[k] += 1.0;
                    }
                }
                let len = nrm[0].hypot(nrm[1]);
                [nrm[0] / len, nrm[1] / len]
            }
        }
    }

    /// Measure of the node's cell `x ± Δ/2` intersected with the domain.
    fn cell_measure(&self, a: usize) -> f64 {
        match self.shape {
            Shape::Interval { .. } | Shape::Rect { .. } => {
                let ij = self.lattice_coords(a);
                (0..self.dim)
                    .map(|k| {
                        let edge = ij[k] == 0 || ij[k] + 1 == self.counts[k];
                        if edge {
                            0.5 * self.spacing[k]
                        } else {
                            self.spacing[k]
                        }
                    })
                    .product()
            }
            Shape::Disk { center, radius } => {
                let h = self.spacing[0];
                if self.kinds[a] == NodeKind::Interior {
                    // The cell lies inside the diamond spanned by the four
                    // in-disk neighbours, hence inside the disk.
                    return h * h;
                }
                let x = self.point(a);
                let k = CUT_CELL_SAMPLES;
                let sub = h / k as f64;
                let mut hits = 0usize;
                for p in 0..k {
                    for q in 0..k {
                        let dx = x[0] - 0.5 * h + (p as f64 + 0.5) * sub - center[0];
                        let dy = x[1] - 0.5 * h + (q as f64 + 0.5) * sub - center[1];
                        if dx * dx + dy * dy <= radius * radius {
                            hits += 1;
                        }
                    }
                }
                h * h * hits as f64 / (k * k) as f64
            }
        }
    }

    pub fn shape(&self) -> &Shape {
        &self.shape
    }

    /// Spatial dimension (1 or 2).
    pub fn dim(&self) -> usize {
        self.dim
    }

    /// Number of active nodes.
    pub fn len(&self) -> usize {
        self.active.len()
    }

    pub fn is_empty(&self) -> bool {
        self.active.is_empty()
    }

    /// Lattice node counts per axis.
    pub fn counts(&self) -> [usize; 2] {
        self.counts
    }

    pub fn spacing(&self) -> [f64; 2] {
        self.spacing
    }

    /// Volume of a full lattice cell.
    pub fn cell_volume(&self) -> f64 {
        self.spacing[..self.dim].iter().product()
    }

    pub fn lattice_coords(&self, a: usize) -> [usize; 2] {
        let l = self.active[a];
        [l / self.counts[1], l % self.counts[1]]
    }

    /// Active index of the lattice node `(i, j)`, if it is in the domain.
    pub fn node_at(&self, i: usize, j: usize) -> Option<usize> {
        if i < self.counts[0] && j < self.counts[1] {
            self.lattice[i * self.counts[1] + j]
        } else {
            None
        }
    }

    /// Coordinates of an active node. The second coordinate is 0 for intervals.
    pub fn point(&self, a: usize) -> [f64; 2] {
        let ij = self.lattice_coords(a);
        let mut x = [
            self.origin[0] + ij[0] as f64 * self.spacing[0],
            self.origin[1] + ij[1] as f64 * self.spacing[1],
        ];
        if self.dim == 1 {
            x[1] = 0.0;
        }
        x
    }

    pub fn points(&self) -> impl Iterator<Item = [f64; 2]> + '_ {
        (0..self.len()).map(|a| self.point(a))
    }

    /// Neighbour of node `a` displaced by `step` lattice units along `axis`.
    pub fn neighbor(&self, a: usize, axis: usize, step: isize) -> Option<usize> {
        let mut ij = self.lattice_coords(a);
        let moved = ij[axis] as isize + step;
        if moved < 0 || moved as usize >= self.counts[axis] {
            return None;
        }
        ij[axis] = moved as usize;
        self.lattice[ij[0] * self.counts[1] + ij[1]]
    }

    pub fn kind(&self, a: usize) -> NodeKind {
        self.kinds[a]
    }

    /// Outward unit normal at a boundary node.
    pub fn normal(&self, a: usize) -> Option<[f64; 2]> {
        match self.kinds[a] {
            NodeKind::Boundary => Some(self.normals[a]),
            NodeKind::Interior => None,
        }
    }

    /// Active indices of boundary nodes, in node order.
    pub fn boundary_nodes(&self) -> &[usize] {
        &self.boundary
    }

    /// Boundary length (or point count in 1-D) attributed to each boundary node.
    pub fn boundary_share(&self) -> f64 {
        self.boundary_share
    }

    /// Quadrature weight of each active node.
    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    /// Total measure of the domain as seen by the quadrature.
    pub fn measure(&self) -> f64 {
        self.weights.iter().sum()
    }

    /// Whether the node has both neighbours along every axis.
    pub fn is_interior(&self, a: usize) -> bool {
        self.kinds[a] == NodeKind::Interior
    }

    /// Largest number of interior nodes found on any lattice line along `axis`.
    pub fn interior_run(&self, axis: usize) -> usize {
        if axis >= self.dim {
            return 0;
        }
        let lines = self.counts[1 - axis];
        let mut best = 0;
        for line in 0..lines {
            let count = (0..self.counts[axis])
                .filter(|&s| {
                    let (i, j) = if axis == 0 { (s, line) } else { (line, s) };
                    self.node_at(i, j).is_some_and(|a| self.is_interior(a))
                })
                .count();
            best = best.max(count);
        }
        best
    }

    /// Rejects grids too coarse for the decomposition solvers.
    pub fn check_resolution(&self) -> Result<()> {
        for k in 0..self.dim {
            if self.interior_run(k) < 3 {
                return Err(Error::InvalidGrid(format!(
                    "fewer than 3 interior nodes along axis {}",
                    k + 1
                )));
            }
        }
        Ok(())
    }

    /// Largest distance between two domain points, used to make residuals scale free.
    pub fn diameter(&self) -> f64 {
        match self.shape {
            Shape::Interval { lo, hi } => hi - lo,
            Shape::Rect { lo, hi } => (hi[0] - lo[0]).hypot(hi[1] - lo[1]),
            Shape::Disk { radius, .. } => 2.0 * radius,
        }
    }
}

pub(crate) fn same_grid(a: &Arc<Grid>, b: &Arc<Grid>) -> bool {
    Arc::ptr_eq(a, b) || **a == **b
}

pub(crate) fn ensure_same(a: &Arc<Grid>, b: &Arc<Grid>) -> Result<()> {
    if same_grid(a, b) {
        Ok(())
    } else {
        Err(Error::GridMismatch)
    }
}
