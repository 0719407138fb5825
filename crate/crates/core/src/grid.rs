//! Rectangular grids over factor space and multilinear interpolation on them.

use serde::{Deserialize, Serialize};

use crate::error::{invalid, Result};
use crate::linalg::Matrix;

pub const MAX_DIMS: usize = 3;
const SNAP: f64 = 1e-12;
const EDGE_TOL: f64 = 1e-9;

/// Uniform symmetric axis `[-half_width, half_width]` with an odd node count.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Axis {
    pub half_width: f64,
    pub nodes: usize,
}

impl Axis {
    #[inline]
    pub fn step(&self) -> f64 {
        2.0 * self.half_width / (self.nodes - 1) as f64
    }

    #[inline]
    fn center(&self) -> f64 {
        ((self.nodes - 1) / 2) as f64
    }

    /// Coordinate of node `i`; the middle node is exactly zero.
    #[inline]
    pub fn coord(&self, i: usize) -> f64 {
        (i as f64 - self.center()) * self.step()
    }

    /// Continuous node position of `x`.
    #[inline]
    pub fn position(&self, x: f64) -> f64 {
        x / self.step() + self.center()
    }
}

/// Grid over the bounding box of `{f : f' M f <= B}`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FactorGrid {
    axes: Vec<Axis>,
    strides: Vec<usize>,
    /// Node admissibility `f' M f <= B`.
    mask: Vec<bool>,
    risk_limit: f64,
}

impl FactorGrid {
    /// `metric` is the factor covariance `V` (or `Σ` in inventory coordinates);
    /// half widths are `sqrt(B (M^{-1})_jj)`, i.e. `sqrt(B / V_jj)` for diagonal `V`.
    pub fn new(metric: &Matrix, risk_limit: f64, nodes: &[usize]) -> Result<Self> {
        let k = metric.rows();
        if k == 0 || k > MAX_DIMS {
            return Err(invalid("factors", format!("grid supports 1..={MAX_DIMS} dimensions, got {k}")));
        }
        if nodes.len() != k {
            return Err(invalid("grid", format!("expected {k} node counts, got {}", nodes.len())));
        }
        if let Some(n) = nodes.iter().find(|&&n| n < 3 || n % 2 == 0) {
            return Err(invalid("grid", format!("node counts must be odd and >= 3, got {n}")));
        }
        if !(risk_limit > 0.0) {
            return Err(invalid("risk_limit", "must be > 0"));
        }
        let inverse = metric.spd_inverse()?;
        let axes: Vec<Axis> = (0..k)
            .map(|j| Axis {
                half_width: (risk_limit * inverse[(j, j)]).sqrt(),
                nodes: nodes[j],
            })
            .collect();
        Ok(Self::from_axes(axes, metric, risk_limit))
    }

    pub fn from_axes(axes: Vec<Axis>, metric: &Matrix, risk_limit: f64) -> Self {
        let k = axes.len();
        let mut strides = vec![1; k];
        for j in (0..k.saturating_sub(1)).rev() {
            strides[j] = strides[j + 1] * axes[j + 1].nodes;
        }
        let mut grid = Self {
            axes,
            strides,
            mask: Vec::new(),
            risk_limit,
        };
        grid.mask = (0..grid.len())
            .map(|n| metric.quad_form(&grid.node_point(n)) <= risk_limit)
            .collect();
        grid
    }

    pub fn dims(&self) -> usize {
        self.axes.len()
    }

    pub fn axes(&self) -> &[Axis] {
        &self.axes
    }

    pub fn len(&self) -> usize {
        self.axes.iter().map(|a| a.nodes).product()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn risk_limit(&self) -> f64 {
        self.risk_limit
    }

    pub fn is_admissible(&self, node: usize) -> bool {
        self.mask[node]
    }

    pub fn mask(&self) -> &[bool] {
        &self.mask
    }

    pub fn node_index(&self, multi: &[usize]) -> usize {
        multi.iter().zip(&self.strides).map(|(i, s)| i * s).sum()
    }

    pub fn node_multi(&self, node: usize) -> [usize; MAX_DIMS] {
        let mut out = [0; MAX_DIMS];
        let mut rest = node;
        for (j, s) in self.strides.iter().enumerate() {
            out[j] = rest / s;
            rest %= s;
        }
        out
    }

    pub fn node_point(&self, node: usize) -> Vec<f64> {
        let multi = self.node_multi(node);
        self.axes
            .iter()
            .enumerate()
            .map(|(j, a)| a.coord(multi[j]))
            .collect()
    }

    /// Index of the node at the origin.
    pub fn origin(&self) -> usize {
        let multi: Vec<usize> = self.axes.iter().map(|a| (a.nodes - 1) / 2).collect();
        self.node_index(&multi)
    }

    pub fn contains(&self, f: &[f64]) -> bool {
        f.iter().zip(&self.axes).all(|(x, a)| {
            let pos = a.position(*x);
            pos >= -EDGE_TOL && pos <= (a.nodes - 1) as f64 + EDGE_TOL
        })
    }

    /// Multilinear interpolation of nodal `values` at `f`; `None` outside the box.
    pub fn interpolate(&self, values: &[f64], f: &[f64]) -> Option<f64> {
        debug_assert_eq!(values.len(), self.len());
        let k = self.dims();
        let mut base = [0usize; MAX_DIMS];
        let mut frac = [0.0f64; MAX_DIMS];
        for j in 0..k {
            let a = &self.axes[j];
            let last = (a.nodes - 1) as f64;
            let pos = a.position(f[j]);
            if !(pos >= -EDGE_TOL && pos <= last + EDGE_TOL) {
                return None;
            }
            let pos = pos.clamp(0.0, last);
            let i = (pos.floor() as usize).min(a.nodes - 2);
            base[j] = i;
            frac[j] = pos - i as f64;
        }
        let mut acc = 0.0;
        for corner in 0..(1usize << k) {
            let mut w = 1.0;
            let mut idx = 0;
            for j in 0..k {
                let up = (corner >> j) & 1 == 1;
                w *= if up { frac[j] } else { 1.0 - frac[j] };
                idx += (base[j] + up as usize) * self.strides[j];
            }
            if w != 0.0 {
                acc += w * values[idx];
            }
        }
        Some(acc)
    }

    /// Precomputed interpolation of `values` at `node + shift` for every node.
    pub fn shift_stencil(&self, shift: &[f64]) -> ShiftStencil {
        let k = self.dims();
        let mut stencil = ShiftStencil {
            dims: k,
            n_corners: 0,
            offsets: [0; 1 << MAX_DIMS],
            weights: [0.0; 1 << MAX_DIMS],
            lo: [0; MAX_DIMS],
            hi: [0; MAX_DIMS],
            cells: [0.0; MAX_DIMS],
        };
        let mut base = [0isize; MAX_DIMS];
        let mut frac = [0.0f64; MAX_DIMS];
        for j in 0..k {
            let a = &self.axes[j];
            let cells = shift[j] / a.step();
            stencil.cells[j] = cells;
            let mut o = cells.floor();
            let mut w = cells - o;
            if w < SNAP {
                w = 0.0;
            } else if w > 1.0 - SNAP {
                o += 1.0;
                w = 0.0;
            }
            base[j] = o as isize;
            frac[j] = w;
            let last = a.nodes as isize - 1;
            let reach = base[j] + (w > 0.0) as isize;
            stencil.lo[j] = (-base[j]).max(0);
            stencil.hi[j] = (last - reach).min(last);
        }
        for corner in 0..(1usize << k) {
            let mut w = 1.0;
            let mut off = 0isize;
            for j in 0..k {
                let up = (corner >> j) & 1 == 1;
                w *= if up { frac[j] } else { 1.0 - frac[j] };
                off += (base[j] + up as isize) * self.strides[j] as isize;
            }
            if w != 0.0 {
                stencil.offsets[stencil.n_corners] = off;
                stencil.weights[stencil.n_corners] = w;
                stencil.n_corners += 1;
            }
        }
        stencil
    }
}

/// Fixed interpolation pattern for a constant shift on a uniform grid.
#[derive(Debug, Clone, Copy)]
pub struct ShiftStencil {
    dims: usize,
    n_corners: usize,
    offsets: [isize; 1 << MAX_DIMS],
    weights: [f64; 1 << MAX_DIMS],
    lo: [isize; MAX_DIMS],
    hi: [isize; MAX_DIMS],
    /// Shift measured in cells along each axis.
    cells: [f64; MAX_DIMS],
}

impl ShiftStencil {
    /// Whether the shifted point from `multi` stays inside the grid.
    #[inline]
    pub fn in_bounds(&self, multi: &[usize; MAX_DIMS]) -> bool {
        (0..self.dims).all(|j| {
            let i = multi[j] as isize;
            i >= self.lo[j] && i <= self.hi[j]
        })
    }

    #[inline]
    pub fn apply(&self, values: &[f64], node: usize) -> f64 {
        let mut acc = 0.0;
        for c in 0..self.n_corners {
            acc += self.weights[c] * values[(node as isize + self.offsets[c]) as usize];
        }
        acc
    }

    pub fn cells(&self) -> &[f64] {
        &self.cells[..self.dims]
    }
}
