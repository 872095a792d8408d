//! Uniform tensor grids on intervals and rectangles, nodal functions on them,
//! and boundary data.
//!
//! Nodes are numbered row-major with axis 0 fastest: node `(i, j)` has index
//! `i + nx * j`. A 1D grid is stored as an `n x 1` lattice.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// A uniform lattice on `[0, lx]` or `[0, lx] x [0, ly]`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Grid {
    dimension: usize,
    nodes: [usize; 2],
    extent: [f64; 2],
    spacing: [f64; 2],
}

/// One lattice cell with its forward-difference stencil.
///
/// The cell gradient is `((u[right] - u[base]) / hx, (u[up] - u[base]) / hy)`;
/// in 1D only the first component exists.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Cell {
    pub base: usize,
    pub right: usize,
    pub up: Option<usize>,
}

impl Grid {
    /// Builds a grid from per-axis node counts and physical lengths.
    pub fn new(dimension: usize, nodes_per_axis: &[usize], extent: &[f64]) -> Result<Self> {
        if dimension != 1 && dimension != 2 {
            return Err(Error::InvalidGrid(format!(
                "dimension must be 1 or 2, got {dimension}"
            )));
        }
        if nodes_per_axis.len() != dimension || extent.len() != dimension {
            return Err(Error::InvalidGrid(format!(
                "expected {dimension} node counts and extents, got {} and {}",
                nodes_per_axis.len(),
                extent.len()
            )));
        }
        let mut nodes = [1usize; 2];
        let mut ext = [0.0; 2];
        let mut spacing = [0.0; 2];
        for axis in 0..dimension {
            let n = nodes_per_axis[axis];
            let l = extent[axis];
            if n < 3 {
                return Err(Error::InvalidGrid(format!(
                    "axis {axis} has {n} nodes; at least 3 are needed for an interior node"
                )));
            }
            if !(l.is_finite() && l > 0.0) {
                return Err(Error::InvalidGrid(format!(
                    "axis {axis} extent must be positive and finite, got {l}"
                )));
            }
            nodes[axis] = n;
            ext[axis] = l;
            spacing[axis] = l / (n - 1) as f64;
        }
        Ok(Self {
            dimension,
            nodes,
            extent: ext,
            spacing,
        })
    }

    pub fn line(nodes: usize, length: f64) -> Result<Self> {
        Self::new(1, &[nodes], &[length])
    }

    pub fn rectangle(nx: usize, ny: usize, lx: f64, ly: f64) -> Result<Self> {
        Self::new(2, &[nx, ny], &[lx, ly])
    }

    pub fn dimension(&self) -> usize {
        self.dimension
    }

    pub fn nodes_per_axis(&self) -> &[usize] {
        &self.nodes[..self.dimension]
    }

    pub fn extent(&self) -> &[f64] {
        &self.extent[..self.dimension]
    }

    pub fn spacing(&self) -> &[f64] {
        &self.spacing[..self.dimension]
    }

    pub fn nx(&self) -> usize {
        self.nodes[0]
    }

    /// Number of nodes along axis 1 (1 for a 1D grid).
    pub fn ny(&self) -> usize {
        self.nodes[1]
    }

    pub fn node_count(&self) -> usize {
        self.nodes[0] * self.nodes[1]
    }

    pub fn index(&self, i: usize, j: usize) -> usize {
        i + self.nodes[0] * j
    }

    pub fn coords(&self, k: usize) -> (usize, usize) {
        (k % self.nodes[0], k / self.nodes[0])
    }

    /// Physical position of node `k`; the second coordinate is 0 in 1D.
    pub fn position(&self, k: usize) -> [f64; 2] {
        let (i, j) = self.coords(k);
        [i as f64 * self.spacing[0], j as f64 * self.spacing[1]]
    }

    pub fn is_boundary(&self, k: usize) -> bool {
        let (i, j) = self.coords(k);
        let on_x = i == 0 || i + 1 == self.nodes[0];
        match self.dimension {
            1 => on_x,
            _ => on_x || j == 0 || j + 1 == self.nodes[1],
        }
    }

    pub fn boundary_nodes(&self) -> Vec<usize> {
        (0..self.node_count())
            .filter(|&k| self.is_boundary(k))
            .collect()
    }

    pub fn interior_nodes(&self) -> Vec<usize> {
        (0..self.node_count())
            .filter(|&k| !self.is_boundary(k))
            .collect()
    }

    /// Domain length (1D) or area (2D).
    pub fn volume(&self) -> f64 {
        self.extent[..self.dimension].iter().product()
    }

    /// Volume of one lattice cell.
    pub fn cell_volume(&self) -> f64 {
        self.spacing[..self.dimension].iter().product()
    }

    /// Trapezoidal quadrature weight of node `k`. Constants integrate exactly
    /// to the domain volume.
    pub fn nodal_volume(&self, k: usize) -> f64 {
        let (i, j) = self.coords(k);
        let w = |idx: usize, n: usize, h: f64| {
            if idx == 0 || idx + 1 == n {
                0.5 * h
            } else {
                h
            }
        };
        let mut v = w(i, self.nodes[0], self.spacing[0]);
        if self.dimension == 2 {
            v *= w(j, self.nodes[1], self.spacing[1]);
        }
        v
    }

    pub fn cell_count(&self) -> usize {
        match self.dimension {
            1 => self.nodes[0] - 1,
            _ => (self.nodes[0] - 1) * (self.nodes[1] - 1),
        }
    }

    pub fn cell(&self, c: usize) -> Cell {
        match self.dimension {
            1 => Cell {
                base: c,
                right: c + 1,
                up: None,
            },
            _ => {
                let cx = self.nodes[0] - 1;
                let (i, j) = (c % cx, c / cx);
                let base = self.index(i, j);
                Cell {
                    base,
                    right: base + 1,
                    up: Some(base + self.nodes[0]),
                }
            }
        }
    }

    /// Forward-difference gradient of `u` on cell `c`.
    pub fn cell_gradient(&self, u: &[f64], c: usize) -> [f64; 2] {
        let cell = self.cell(c);
        let gx = (u[cell.right] - u[cell.base]) / self.spacing[0];
        let gy = match cell.up {
            Some(up) => (u[up] - u[cell.base]) / self.spacing[1],
            None => 0.0,
        };
        [gx, gy]
    }

    /// Cells whose stencil contains node `k`, with `d(gradient)/d(u[k])` for each.
    pub fn incident_cells(&self, k: usize) -> Vec<(usize, [f64; 2])> {
        let (i, j) = self.coords(k);
        let (hx, hy) = (self.spacing[0], self.spacing[1]);
        let nx = self.nodes[0];
        let mut out = Vec::with_capacity(3);
        match self.dimension {
            1 => {
                if i > 0 {
                    out.push((i - 1, [1.0 / hx, 0.0]));
                }
                if i + 1 < nx {
                    out.push((i, [-1.0 / hx, 0.0]));
                }
            }
            _ => {
                let cx = nx - 1;
                let ny = self.nodes[1];
                if i + 1 < nx && j + 1 < ny {
                    out.push((i + cx * j, [-1.0 / hx, -1.0 / hy]));
                }
                if i > 0 && j + 1 < ny {
                    out.push((i - 1 + cx * j, [1.0 / hx, 0.0]));
                }
                if i + 1 < nx && j > 0 {
                    out.push((i + cx * (j - 1), [0.0, 1.0 / hy]));
                }
            }
        }
        out
    }

    /// Nearest neighbours along the coordinate axes.
    pub fn axis_neighbors(&self, k: usize) -> impl Iterator<Item = usize> {
        let (i, j) = self.coords(k);
        let nx = self.nodes[0];
        let ny = self.nodes[1];
        let two_d = self.dimension == 2;
        let candidates = [
            (i > 0).then(|| k - 1),
            (i + 1 < nx).then(|| k + 1),
            (two_d && j > 0).then(|| k - nx),
            (two_d && j + 1 < ny).then(|| k + nx),
        ];
        candidates.into_iter().flatten()
    }

    fn check_same(&self, other: &Grid) -> Result<()> {
        if self == other {
            Ok(())
        } else {
            Err(Error::GridMismatch("operands live on different grids"))
        }
    }
}

/// Real values at every node of a grid. All values are finite.
#[derive(Debug, Clone, PartialEq)]
pub struct GridFunction {
    grid: Grid,
    values: Vec<f64>,
}

impl GridFunction {
    pub fn new(grid: Grid, values: Vec<f64>) -> Result<Self> {
        if values.len() != grid.node_count() {
            return Err(Error::InvalidValue(format!(
                "expected {} nodal values, got {}",
                grid.node_count(),
                values.len()
            )));
        }
        if let Some(k) = values.iter().position(|v| !v.is_finite()) {
            return Err(Error::InvalidValue(format!(
                "non-finite value {} at node {k}",
                values[k]
            )));
        }
        Ok(Self { grid, values })
    }

    pub fn constant(grid: Grid, c: f64) -> Self {
        assert!(c.is_finite(), "constant must be finite");
        Self {
            grid,
            values: vec![c; grid.node_count()],
        }
    }

    pub fn zeros(grid: Grid) -> Self {
        Self::constant(grid, 0.0)
    }

    /// Samples `f(x, y)` at every node (`y = 0` in 1D).
    pub fn from_fn(grid: Grid, f: impl Fn(f64, f64) -> f64) -> Result<Self> {
        let values = (0..grid.node_count())
            .map(|k| {
                let [x, y] = grid.position(k);
                f(x, y)
            })
            .collect();
        Self::new(grid, values)
    }

    pub fn grid(&self) -> &Grid {
        &self.grid
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn into_values(self) -> Vec<f64> {
        self.values
    }

    pub(crate) fn from_parts_unchecked(grid: Grid, values: Vec<f64>) -> Self {
        debug_assert_eq!(values.len(), grid.node_count());
        Self { grid, values }
    }

    pub fn map(&self, f: impl Fn(f64) -> f64) -> Result<Self> {
        Self::new(self.grid, self.values.iter().map(|&v| f(v)).collect())
    }

    pub fn zip_with(&self, other: &Self, f: impl Fn(f64, f64) -> f64) -> Result<Self> {
        self.grid.check_same(&other.grid)?;
        let values = self
            .values
            .iter()
            .zip(&other.values)
            .map(|(&a, &b)| f(a, b))
            .collect();
        Self::new(self.grid, values)
    }

    pub fn restrict_to_boundary(&self) -> BoundaryData {
        let values = self
            .grid
            .boundary_nodes()
            .into_iter()
            .map(|k| self.values[k])
            .collect();
        BoundaryData {
            grid: self.grid,
            values,
        }
    }

    /// `max_k |self[k] - other[k]|`.
    pub fn sup_distance(&self, other: &Self) -> Result<f64> {
        self.grid.check_same(&other.grid)?;
        Ok(self
            .values
            .iter()
            .zip(&other.values)
            .fold(0.0, |m, (a, b)| f64::max(m, (a - b).abs())))
    }

    /// Serializes as `# dim,nx[,ny],hx[,hy]` followed by one value per line.
    pub fn to_csv(&self) -> String {
        let g = &self.grid;
        let mut out = String::with_capacity(26 * (g.node_count() + 1));
        out.push_str(&format!("# {}", g.dimension()));
        for n in g.nodes_per_axis() {
            out.push_str(&format!(",{n}"));
        }
        for h in g.spacing() {
            out.push_str(&format!(",{}", fmt_real(*h)));
        }
        out.push('\n');
        for v in &self.values {
            out.push_str(&fmt_real(*v));
            out.push('\n');
        }
        out
    }

    pub fn from_csv(text: &str) -> Result<Self> {
        let mut lines = text.lines().filter(|l| !l.trim().is_empty());
        let header = lines
            .next()
            .ok_or_else(|| Error::Csv("empty input".into()))?;
        let header = header
            .strip_prefix('#')
            .ok_or_else(|| Error::Csv("header must start with '#'".into()))?;
        let fields: Vec<&str> = header.split(',').map(str::trim).collect();
        let dim: usize = fields[0]
            .parse()
            .map_err(|_| Error::Csv(format!("bad dimension {:?}", fields[0])))?;
        if fields.len() != 1 + 2 * dim {
            return Err(Error::Csv(format!(
                "header has {} fields, expected {}",
                fields.len(),
                1 + 2 * dim
            )));
        }
        let mut nodes = Vec::with_capacity(dim);
        let mut extent = Vec::with_capacity(dim);
        for axis in 0..dim {
            let n: usize = fields[1 + axis]
                .parse()
                .map_err(|_| Error::Csv(format!("bad node count {:?}", fields[1 + axis])))?;
            let h: f64 = fields[1 + dim + axis]
                .parse()
                .map_err(|_| Error::Csv(format!("bad spacing {:?}", fields[1 + dim + axis])))?;
            nodes.push(n);
            extent.push(h * (n.saturating_sub(1)) as f64);
        }
        let grid = Grid::new(dim, &nodes, &extent)?;
        let values = lines
            .map(|l| {
                l.trim()
                    .parse::<f64>()
                    .map_err(|_| Error::Csv(format!("bad value {l:?}")))
            })
            .collect::<Result<Vec<_>>>()?;
        Self::new(grid, values)
    }
}

/// 17 significant digits, enough to round-trip any `f64`.
pub fn fmt_real(v: f64) -> String {
    format!("{v:.16e}")
}

/// Values on the boundary nodes of a grid, in ascending node order.
#[derive(Debug, Clone, PartialEq)]
pub struct BoundaryData {
    grid: Grid,
    values: Vec<f64>,
}

impl BoundaryData {
    pub fn new(grid: Grid, values: Vec<f64>) -> Result<Self> {
        let n = grid.boundary_nodes().len();
        if values.len() != n {
            return Err(Error::InvalidValue(format!(
                "expected {n} boundary values, got {}",
                values.len()
            )));
        }
        if let Some(v) = values.iter().find(|v| !v.is_finite()) {
            return Err(Error::InvalidValue(format!(
                "non-finite boundary value {v}"
            )));
        }
        Ok(Self { grid, values })
    }

    pub fn constant(grid: Grid, c: f64) -> Self {
        Self {
            grid,
            values: vec![c; grid.boundary_nodes().len()],
        }
    }

    pub fn from_fn(grid: Grid, f: impl Fn(f64, f64) -> f64) -> Result<Self> {
        let values = grid
            .boundary_nodes()
            .into_iter()
            .map(|k| {
                let [x, y] = grid.position(k);
                f(x, y)
            })
            .collect();
        Self::new(grid, values)
    }

    pub fn grid(&self) -> &Grid {
        &self.grid
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    /// Boundary values scattered into a full-length nodal vector; interior entries are `fill`.
    fn scatter(&self, fill: f64) -> Vec<f64> {
        let mut out = vec![fill; self.grid.node_count()];
        for (k, v) in self.grid.boundary_nodes().into_iter().zip(&self.values) {
            out[k] = *v;
        }
        out
    }

    /// Largest slope between neighbouring boundary nodes. In 1D the two
    /// endpoints are adjacent along the whole interval.
    pub fn lipschitz_estimate(&self) -> f64 {
        let g = &self.grid;
        let full = self.scatter(0.0);
        match g.dimension() {
            1 => (full[g.nx() - 1] - full[0]).abs() / g.extent()[0],
            _ => {
                let (nx, ny) = (g.nx(), g.ny());
                let (hx, hy) = (g.spacing()[0], g.spacing()[1]);
                let mut m: f64 = 0.0;
                for i in 0..nx - 1 {
                    for j in [0, ny - 1] {
                        let d = full[g.index(i + 1, j)] - full[g.index(i, j)];
                        m = m.max(d.abs() / hx);
                    }
                }
                for j in 0..ny - 1 {
                    for i in [0, nx - 1] {
                        let d = full[g.index(i, j + 1)] - full[g.index(i, j)];
                        m = m.max(d.abs() / hy);
                    }
                }
                m
            }
        }
    }

    /// Extension of the boundary data into the interior: affine in 1D,
    /// transfinite bilinear (Coons) in 2D. Reproduces affine and bilinear data exactly.
    pub fn interpolate(&self) -> GridFunction {
        let g = self.grid;
        let mut u = self.scatter(0.0);
        match g.dimension() {
            1 => {
                let n = g.nx();
                let (a, b) = (u[0], u[n - 1]);
                for (i, v) in u.iter_mut().enumerate().take(n - 1).skip(1) {
                    let s = i as f64 / (n - 1) as f64;
                    *v = (1.0 - s) * a + s * b;
                }
            }
            _ => {
                let (nx, ny) = (g.nx(), g.ny());
                let b = u.clone();
                let at = |i: usize, j: usize| b[g.index(i, j)];
                for j in 1..ny - 1 {
                    let t = j as f64 / (ny - 1) as f64;
                    for i in 1..nx - 1 {
                        let s = i as f64 / (nx - 1) as f64;
                        let edges = (1.0 - s) * at(0, j)
                            + s * at(nx - 1, j)
                            + (1.0 - t) * at(i, 0)
                            + t * at(i, ny - 1);
                        let corners = (1.0 - s) * (1.0 - t) * at(0, 0)
                            + s * (1.0 - t) * at(nx - 1, 0)
                            + (1.0 - s) * t * at(0, ny - 1)
                            + s * t * at(nx - 1, ny - 1);
                        u[g.index(i, j)] = edges - corners;
                    }
                }
            }
        }
        GridFunction::from_parts_unchecked(g, u)
    }
}

/// Function equal to `g` on the boundary and to `fill` in the interior.
pub fn embed_boundary(g: &BoundaryData, fill: f64) -> Result<GridFunction> {
    GridFunction::new(g.grid, g.scatter(fill))
}

/// Nodewise maximum of two functions on the same grid.
pub fn pointwise_max(a: &GridFunction, b: &GridFunction) -> Result<GridFunction> {
    a.zip_with(b, f64::max)
}

/// Exponent of an obstacle or control problem: a real `p > 1` or infinity.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Exponent {
    Finite(f64),
    Infinity,
}

impl Exponent {
    pub fn finite(p: f64) -> Result<Self> {
        if p.is_finite() && p > 1.0 {
            Ok(Self::Finite(p))
        } else if p == f64::INFINITY {
            Ok(Self::Infinity)
        } else {
            Err(Error::InvalidExponent(p))
        }
    }

    pub fn is_infinite(&self) -> bool {
        matches!(self, Self::Infinity)
    }

    /// Value as an `f64`, with `f64::INFINITY` for the limit exponent.
    pub fn as_f64(&self) -> f64 {
        match self {
            Self::Finite(p) => *p,
            Self::Infinity => f64::INFINITY,
        }
    }
}

impl fmt::Display for Exponent {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Self::Finite(p) => write!(f, "{p}"),
            Self::Infinity => f.write_str("inf"),
        }
    }
}

impl FromStr for Exponent {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_ascii_lowercase().as_str() {
            "inf" | "infinity" | "∞" => Ok(Self::Infinity),
            other => {
                let p: f64 = other
                    .parse()
                    .map_err(|_| Error::InvalidValue(format!("cannot parse exponent {s:?}")))?;
                Self::finite(p)
            }
        }
    }
}

/// Data of one obstacle or control problem.
#[derive(Debug, Clone)]
pub struct ObstacleInstance {
    pub grid: Grid,
    pub obstacle: GridFunction,
    pub boundary: BoundaryData,
    pub profile: Option<GridFunction>,
    pub exponent: Exponent,
}

impl ObstacleInstance {
    /// Validates grid agreement and feasibility (`obstacle <= boundary` on the boundary).
    pub fn new(
        obstacle: GridFunction,
        boundary: BoundaryData,
        profile: Option<GridFunction>,
        exponent: Exponent,
    ) -> Result<Self> {
        let grid = *obstacle.grid();
        grid.check_same(boundary.grid())?;
        if let Some(z) = &profile {
            grid.check_same(z.grid())?;
        }
        check_feasible(&obstacle, &boundary)?;
        Ok(Self {
            grid,
            obstacle,
            boundary,
            profile,
            exponent,
        })
    }

    pub fn with_exponent(&self, exponent: Exponent) -> Self {
        Self {
            exponent,
            ..self.clone()
        }
    }

    pub fn with_obstacle(&self, obstacle: GridFunction) -> Result<Self> {
        Self::new(
            obstacle,
            self.boundary.clone(),
            self.profile.clone(),
            self.exponent,
        )
    }

    pub fn profile(&self) -> Result<&GridFunction> {
        self.profile.as_ref().ok_or(Error::MissingProfile)
    }
}

pub(crate) fn check_feasible(obstacle: &GridFunction, boundary: &BoundaryData) -> Result<()> {
    obstacle.grid().check_same(boundary.grid())?;
    let nodes = obstacle.grid().boundary_nodes();
    for (k, g) in nodes.into_iter().zip(boundary.values()) {
        let psi = obstacle.values()[k];
        if psi > *g {
            return Err(Error::InfeasibleObstacle {
                node: k,
                obstacle: psi,
                boundary: *g,
            });
        }
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn line_grid_nodes_and_boundary() {
        let g = Grid::line(5, 1.0).unwrap();
        let xs: Vec<f64> = (0..g.node_count()).map(|k| g.position(k)[0]).collect();
        assert_eq!(xs, vec![0.0, 0.25, 0.5, 0.75, 1.0]);
        assert_eq!(g.boundary_nodes(), vec![0, 4]);
        assert_eq!(g.spacing(), &[0.25]);
    }

    #[test]
    fn three_by_three_has_one_interior_node() {
        let g = Grid::rectangle(3, 3, 1.0, 1.0).unwrap();
        assert_eq!(g.node_count(), 9);
        assert_eq!(g.interior_nodes(), vec![4]);
    }

    #[test]
    fn rejects_degenerate_grids() {
        assert!(matches!(Grid::line(2, 1.0), Err(Error::InvalidGrid(_))));
        assert!(Grid::line(5, 0.0).is_err());
        assert!(Grid::line(5, -1.0).is_err());
        assert!(Grid::new(3, &[3, 3, 3], &[1.0; 3]).is_err());
        assert!(Grid::new(2, &[3], &[1.0]).is_err());
    }

    #[test]
    fn boundary_counts() {
        for n in 3..8 {
            assert_eq!(Grid::line(n, 2.0).unwrap().boundary_nodes().len(), 2);
        }
        for (nx, ny) in [(3, 3), (4, 7), (17, 17), (5, 3)] {
            let g = Grid::rectangle(nx, ny, 1.0, 2.0).unwrap();
            assert_eq!(g.boundary_nodes().len(), 2 * (nx + ny) - 4);
            assert_eq!(
                g.boundary_nodes().len() + g.interior_nodes().len(),
                g.node_count()
            );
        }
    }

    #[test]
    fn nodal_volumes_sum_to_domain_volume() {
        let g = Grid::rectangle(5, 9, 2.0, 3.0).unwrap();
        let total: f64 = (0..g.node_count()).map(|k| g.nodal_volume(k)).sum();
        assert!((total - 6.0).abs() < 1e-12);
        let g = Grid::line(7, 1.5).unwrap();
        let total: f64 = (0..g.node_count()).map(|k| g.nodal_volume(k)).sum();
        assert!((total - 1.5).abs() < 1e-12);
    }

    #[test]
    fn embed_boundary_examples() {
        let g = Grid::line(5, 1.0).unwrap();
        let u = embed_boundary(&BoundaryData::constant(g, 0.0), -1.0).unwrap();
        assert_eq!(u.values(), &[0.0, -1.0, -1.0, -1.0, 0.0]);

        let u = embed_boundary(&BoundaryData::constant(g, 2.0), 2.0).unwrap();
        assert!(u.values().iter().all(|&v| v == 2.0));

        let g3 = Grid::line(3, 1.0).unwrap();
        let b = BoundaryData::new(g3, vec![0.0, 1.0]).unwrap();
        assert_eq!(embed_boundary(&b, 0.0).unwrap().values(), &[0.0, 0.0, 1.0]);
    }

    #[test]
    fn pointwise_max_examples() {
        let g = Grid::line(9, 1.0).unwrap();
        let zero = GridFunction::zeros(g);
        let minus = GridFunction::constant(g, -1.0);
        assert_eq!(pointwise_max(&zero, &minus).unwrap(), zero);
        let tent = GridFunction::from_fn(g, |x, _| 0.25 - (x - 0.5).abs()).unwrap();
        let m = pointwise_max(&tent, &zero).unwrap();
        for (a, b) in m.values().iter().zip(tent.values()) {
            assert_eq!(*a, b.max(0.0));
        }
        let other = GridFunction::zeros(Grid::line(5, 1.0).unwrap());
        assert!(matches!(
            pointwise_max(&zero, &other),
            Err(Error::GridMismatch(_))
        ));
    }

    #[test]
    fn interpolation_reproduces_bilinear_data() {
        let g = Grid::rectangle(6, 5, 1.0, 2.0).unwrap();
        let f = |x: f64, y: f64| 1.0 + 2.0 * x - y + 0.5 * x * y;
        let b = BoundaryData::from_fn(g, f).unwrap();
        let u = b.interpolate();
        let exact = GridFunction::from_fn(g, f).unwrap();
        assert!(u.sup_distance(&exact).unwrap() < 1e-12);
    }

    #[test]
    fn lipschitz_estimate_of_affine_boundary() {
        let g = Grid::rectangle(5, 5, 1.0, 1.0).unwrap();
        let b = BoundaryData::from_fn(g, |x, y| 3.0 * x - y).unwrap();
        assert!((b.lipschitz_estimate() - 3.0).abs() < 1e-12);
        let g1 = Grid::line(5, 2.0).unwrap();
        let b1 = BoundaryData::new(g1, vec![0.0, 1.0]).unwrap();
        assert!((b1.lipschitz_estimate() - 0.5).abs() < 1e-15);
    }

    #[test]
    fn rejects_non_finite_values() {
        let g = Grid::line(3, 1.0).unwrap();
        assert!(GridFunction::new(g, vec![0.0, f64::NAN, 0.0]).is_err());
        assert!(GridFunction::new(g, vec![0.0, 1.0]).is_err());
        assert!(BoundaryData::new(g, vec![f64::INFINITY, 0.0]).is_err());
    }

    #[test]
    fn infeasible_instance_is_rejected() {
        let g = Grid::line(5, 1.0).unwrap();
        let psi = GridFunction::constant(g, 1.0);
        let err = ObstacleInstance::new(
            psi,
            BoundaryData::constant(g, 0.0),
            None,
            Exponent::Finite(2.0),
        )
        .unwrap_err();
        assert!(matches!(err, Error::InfeasibleObstacle { node: 0, .. }));
    }

    #[test]
    fn exponent_parsing() {
        assert_eq!("inf".parse::<Exponent>().unwrap(), Exponent::Infinity);
        assert_eq!("4".parse::<Exponent>().unwrap(), Exponent::Finite(4.0));
        assert!("0.5".parse::<Exponent>().is_err());
        assert!("1".parse::<Exponent>().is_err());
        assert!(Exponent::finite(f64::NAN).is_err());
    }

    #[test]
    fn csv_header_layout() {
        let g = Grid::rectangle(3, 4, 1.0, 1.5).unwrap();
        let u = GridFunction::zeros(g);
        let csv = u.to_csv();
        let header = csv.lines().next().unwrap();
        assert_eq!(
            header,
            "# 2,3,4,5.0000000000000000e-1,5.0000000000000000e-1"
        );
        assert_eq!(csv.lines().count(), 13);
    }

    proptest! {
        #[test]
        fn pointwise_max_is_a_semilattice(
            a in prop::collection::vec(-10.0f64..10.0, 7),
            b in prop::collection::vec(-10.0f64..10.0, 7),
            c in prop::collection::vec(-10.0f64..10.0, 7),
        ) {
            let g = Grid::line(7, 1.0).unwrap();
            let (a, b, c) = (
                GridFunction::new(g, a).unwrap(),
                GridFunction::new(g, b).unwrap(),
                GridFunction::new(g, c).unwrap(),
            );
            prop_assert_eq!(pointwise_max(&a, &b).unwrap(), pointwise_max(&b, &a).unwrap());
            prop_assert_eq!(
                pointwise_max(&pointwise_max(&a, &b).unwrap(), &c).unwrap(),
                pointwise_max(&a, &pointwise_max(&b, &c).unwrap()).unwrap()
            );
            prop_assert_eq!(pointwise_max(&a, &a).unwrap(), a);
        }

        #[test]
        fn embed_then_restrict_is_identity_on_boundary(
            vals in prop::collection::vec(-5.0f64..5.0, 12),
            fill in -3.0f64..3.0,
        ) {
            let g = Grid::rectangle(4, 4, 1.0, 1.0).unwrap();
            let b = BoundaryData::new(g, vals).unwrap();
            let u = embed_boundary(&b, fill).unwrap();
            prop_assert_eq!(u.restrict_to_boundary(), b);
        }

        #[test]
        fn csv_round_trip_is_exact(vals in prop::collection::vec(-1e6f64..1e6, 15)) {
            let g = Grid::rectangle(5, 3, 0.7, 1.3).unwrap();
            let u = GridFunction::new(g, vals).unwrap();
            let back = GridFunction::from_csv(&u.to_csv()).unwrap();
            prop_assert_eq!(back.values(), u.values());
            prop_assert_eq!(back.grid().nodes_per_axis(), g.nodes_per_axis());
        }
    }
}
