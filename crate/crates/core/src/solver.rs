//! Backward monotone explicit Euler for the factor-space HJ equation.
//!
//! Each step maps the previous slice node by node:
//!
//! ```text
//! θ(t-Δt, f) = θ(t, f) + Δt [ -ψ̄(f'Vf)
//!     + Σ_i Σ_k p_k z_k H^{i,b}((θ(t,f) - θ(t, f + z_k ẽ^i)) / z_k)
//!     + Σ_i Σ_k p_k z_k H^{i,a}((θ(t,f) - θ(t, f - z_k ẽ^i)) / z_k) ]
//! ```
//!
//! Off-node neighbours come from multilinear interpolation. A term whose
//! shifted point leaves the grid is dropped: that trade is not allowed.
//! With `Δt K <= 1`, `K` the summed intensity bounds, the update is
//! nondecreasing in every value it reads.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};
use crate::factor::FactorModel;
use crate::grid::{FactorGrid, ShiftStencil};
use crate::hamiltonian::HamiltonianOps;
use crate::model::{MarketSpec, Side};

/// Stability budget: `dt * K` must not exceed this.
pub const STABILITY_BUDGET: f64 = 0.9;
/// Shifts closer than this (in cells) share one stencil.
const MERGE_TOL: f64 = 1e-9;

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StorePolicy {
    /// Keep `t = 0` and the terminal slice.
    #[default]
    FinalSliceOnly,
    AllSlices,
    /// Keep every `n`-th step (plus both ends).
    Stride(usize),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum OutOfGridRule {
    #[default]
    DropTerm,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SolverConfig {
    /// Days; `None` picks `0.9 / K`.
    pub dt: Option<f64>,
    pub store: StorePolicy,
    pub out_of_grid: OutOfGridRule,
}

impl Default for SolverConfig {
    fn default() -> Self {
        Self {
            dt: None,
            store: StorePolicy::FinalSliceOnly,
            out_of_grid: OutOfGridRule::DropTerm,
        }
    }
}

impl SolverConfig {
    /// Requested step checked against the stability budget.
    pub fn checked_dt(&self, market: &MarketSpec) -> Result<f64> {
        let budget = market.intensity_budget();
        let required = if budget > 0.0 {
            STABILITY_BUDGET / budget
        } else {
            market.horizon
        };
        match self.dt {
            None => Ok(required.min(market.horizon)),
            Some(dt) if !(dt > 0.0 && dt.is_finite()) => Err(invalid("dt", "must be > 0")),
            Some(dt) if dt * budget > STABILITY_BUDGET => Err(Error::Unstable { dt, required, budget }),
            Some(dt) => Ok(dt.min(market.horizon)),
        }
    }
}

/// Time-indexed value function on a factor grid.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ValueSurface {
    pub grid: FactorGrid,
    /// Ascending stored times.
    pub times: Vec<f64>,
    /// `slices[m][node]` is the value at `times[m]`.
    pub slices: Vec<Vec<f64>>,
    pub factor_model: FactorModel,
    pub market: MarketSpec,
    pub config: SolverConfig,
    /// Time step actually used.
    pub dt: f64,
    pub steps: usize,
}

impl ValueSurface {
    /// Index of the stored slice nearest to `t`.
    pub fn slice_index(&self, t: f64) -> usize {
        let mut best = 0;
        for (m, &tm) in self.times.iter().enumerate() {
            if (tm - t).abs() < (self.times[best] - t).abs() {
                best = m;
            }
        }
        best
    }

    pub fn slice(&self, t: f64) -> &[f64] {
        &self.slices[self.slice_index(t)]
    }

    /// Stored slice used for quoting at `t`; the `t = 0` slice unless all slices are kept.
    pub fn quoting_slice(&self, t: f64) -> &[f64] {
        match self.config.store {
            StorePolicy::FinalSliceOnly => &self.slices[0],
            _ => self.slice(t),
        }
    }

    pub fn is_time_dependent(&self) -> bool {
        !matches!(self.config.store, StorePolicy::FinalSliceOnly)
    }

    pub fn initial(&self) -> &[f64] {
        &self.slices[0]
    }

    pub fn terminal(&self) -> &[f64] {
        self.slices.last().expect("surface has slices")
    }

    pub fn value_at_origin(&self) -> f64 {
        self.slices[0][self.grid.origin()]
    }

    /// Multilinear interpolation on the quoting slice for `t`.
    pub fn evaluate(&self, t: f64, f: &[f64]) -> Result<f64> {
        if f.len() != self.grid.dims() {
            return Err(Error::Dimension(format!(
                "factor point has {} coordinates, grid has {}",
                f.len(),
                self.grid.dims()
            )));
        }
        self.grid
            .interpolate(self.quoting_slice(t), f)
            .ok_or_else(|| Error::OutOfDomain { point: f.to_vec() })
    }
}

/// One (intensity, size, direction) term of the update, possibly merged
/// across assets sharing all three.
#[derive(Debug, Clone)]
pub(crate) struct Term {
    pub ops: HamiltonianOps,
    pub size: f64,
    /// Sum of size probabilities of the merged buckets.
    pub weight: f64,
    pub stencil: ShiftStencil,
}

pub(crate) fn build_terms(market: &MarketSpec, fm: &FactorModel, grid: &FactorGrid) -> Vec<Term> {
    let mut terms: Vec<Term> = Vec::new();
    for (i, asset) in market.assets.iter().enumerate() {
        let dir = fm.projected_direction(i);
        for side in Side::BOTH {
            let ops = HamiltonianOps::new(*asset.intensity(side), market.quote_floor);
            for atom in asset.sizes(side).atoms() {
                if atom.prob == 0.0 {
                    continue;
                }
                let shift: Vec<f64> = dir.iter().map(|e| side.sign() * atom.size * e).collect();
                let stencil = grid.shift_stencil(&shift);
                let existing = terms.iter_mut().find(|t| {
                    t.ops == ops
                        && t.size == atom.size
                        && t
                            .stencil
                            .cells()
                            .iter()
                            .zip(stencil.cells())
                            .all(|(a, b)| (a - b).abs() <= MERGE_TOL)
                });
                match existing {
                    Some(t) => t.weight += atom.prob,
                    None => terms.push(Term {
                        ops,
                        size: atom.size,
                        weight: atom.prob,
                        stencil,
                    }),
                }
            }
        }
    }
    terms
}

/// Rectangular grid with `nodes` per axis over the model's factor space.
pub fn grid_for(market: &MarketSpec, fm: &FactorModel, nodes: &[usize]) -> Result<FactorGrid> {
    FactorGrid::new(&fm.factor_cov, market.risk_limit, nodes)
}

pub fn solve(market: &MarketSpec, fm: &FactorModel, grid: &FactorGrid, cfg: &SolverConfig) -> Result<ValueSurface> {
    if fm.n_assets() != market.dim() {
        return Err(Error::Dimension(format!(
            "factor model covers {} assets, market has {}",
            fm.n_assets(),
            market.dim()
        )));
    }
    if fm.n_factors() != grid.dims() {
        return Err(Error::Dimension(format!(
            "grid has {} dimensions, factor model {}",
            grid.dims(),
            fm.n_factors()
        )));
    }
    let dt_max = cfg.checked_dt(market)?;
    let steps = (market.horizon / dt_max).ceil().max(1.0) as usize;
    let dt = market.horizon / steps as f64;

    let terms = build_terms(market, fm, grid);
    let n = grid.len();
    let multis: Vec<_> = (0..n).map(|node| grid.node_multi(node)).collect();
    let risk: Vec<f64> = (0..n).map(|node| fm.factor_risk(&grid.node_point(node))).collect();
    let running: Vec<f64> = risk.iter().map(|&y| market.penalty.running(y)).collect();
    let terminal: Vec<f64> = risk.iter().map(|&y| -market.penalty.terminal(y)).collect();

    let keep = |step_from_end: usize| match cfg.store {
        StorePolicy::FinalSliceOnly => false,
        StorePolicy::AllSlices => true,
        StorePolicy::Stride(s) => s > 0 && step_from_end.is_multiple_of(s),
    };

    // backward in time: stored newest-first, reversed at the end
    let mut times_rev = vec![market.horizon];
    let mut slices_rev = vec![terminal.clone()];
    let mut current = terminal;
    let mut next = vec![0.0; n];
    for m in 1..=steps {
        next.par_iter_mut().enumerate().for_each(|(node, out)| {
            let here = current[node];
            let multi = &multis[node];
            let mut rate = -running[node];
            for term in &terms {
                if !term.stencil.in_bounds(multi) {
                    continue;
                }
                let neighbour = term.stencil.apply(&current, node);
                let p = (here - neighbour) / term.size;
                rate += term.weight * term.size * term.ops.hamiltonian(p);
            }
            *out = here + dt * rate;
        });
        if next.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite { slice: steps - m });
        }
        std::mem::swap(&mut current, &mut next);
        if m == steps || keep(m) {
            times_rev.push(dt * (steps - m) as f64);
            slices_rev.push(current.clone());
        }
    }
    times_rev.reverse();
    slices_rev.reverse();
    Ok(ValueSurface {
        grid: grid.clone(),
        times: times_rev,
        slices: slices_rev,
        factor_model: fm.clone(),
        market: market.clone(),
        config: cfg.clone(),
        dt,
        steps,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::factor::{build_factor_model, eigendecompose};
    use crate::linalg::Matrix;
    use crate::model::{AssetSpec, LogisticIntensity, RiskPenalty, SizeDistribution};

    fn market(horizon: f64, penalty: RiskPenalty) -> MarketSpec {
        let it = LogisticIntensity::new(30.0, 0.7, 30.0).unwrap();
        let sizes = SizeDistribution::from_pairs(&[(6250.0, 0.53), (12500.0, 0.35), (18750.0, 0.10), (25000.0, 0.02)]).unwrap();
        let assets = vec![
            AssetSpec::symmetric(100.0, 1.2, it, sizes.clone()),
            AssetSpec::symmetric(100.0, 0.6, it, sizes),
        ];
        let rho = Matrix::from_rows(&[vec![1.0, 0.9], vec![0.9, 1.0]]).unwrap();
        MarketSpec::new(assets, rho, horizon, 1.0, 2.4e10, penalty).unwrap()
    }

    #[test]
    fn unstable_step_is_refused() {
        let m = market(1.0, RiskPenalty::quadratic(8e-7));
        let cfg = SolverConfig {
            dt: Some(0.01),
            ..SolverConfig::default()
        };
        match cfg.checked_dt(&m) {
            Err(Error::Unstable { required, .. }) => assert!((required - 0.9 / m.intensity_budget()).abs() < 1e-15),
            other => panic!("expected instability error, got {other:?}"),
        }
    }

    #[test]
    fn zero_penalty_gives_affine_in_time_solution_away_from_edges() {
        let m = market(0.015, RiskPenalty::none());
        let fm = build_factor_model(&eigendecompose(m.covariance()).unwrap(), 2).unwrap();
        let grid = grid_for(&m, &fm, &[61, 61]).unwrap();
        let s = solve(&m, &fm, &grid, &SolverConfig::default()).unwrap();
        let mut rate = 0.0;
        for a in &m.assets {
            for side in Side::BOTH {
                let h = HamiltonianOps::new(*a.intensity(side), m.quote_floor).hamiltonian(0.0);
                rate += a.sizes(side).mean() * h;
            }
        }
        let expected = m.horizon * rate;
        let v0 = s.value_at_origin();
        assert!((v0 - expected).abs() <= 1e-9 * expected, "{v0} vs {expected}");
        assert!(s.terminal().iter().all(|v| *v == 0.0));
        // far-from-edge nodes never see a dropped term within the few steps taken
        // (interpolation pulls in one extra cell per step)
        let mut checked = 0;
        for node in 0..grid.len() {
            let p = grid.node_point(node);
            let inside = p
                .iter()
                .zip(grid.axes())
                .all(|(x, a)| x.abs() + (25000.0 + a.step()) * (s.steps as f64) < a.half_width);
            if inside {
                checked += 1;
                assert!((s.initial()[node] - expected).abs() <= 1e-9 * expected, "node {node}: {} vs {expected}", s.initial()[node]);
            }
        }
        assert!(checked > 0);
    }

    #[test]
    fn nearest_slice_lookup() {
        let m = market(0.1, RiskPenalty::quadratic(8e-7));
        let fm = build_factor_model(&eigendecompose(m.covariance()).unwrap(), 1).unwrap();
        let grid = grid_for(&m, &fm, &[21]).unwrap();
        let cfg = SolverConfig {
            store: StorePolicy::AllSlices,
            ..SolverConfig::default()
        };
        let s = solve(&m, &fm, &grid, &cfg).unwrap();
        assert_eq!(s.times.len(), s.steps + 1);
        assert_eq!(s.times[0], 0.0);
        assert_eq!(*s.times.last().unwrap(), m.horizon);
        assert_eq!(s.slice_index(0.0), 0);
        assert_eq!(s.slice_index(m.horizon), s.steps);
        let node = grid.origin();
        assert_eq!(s.evaluate(0.0, &grid.node_point(node)).unwrap(), s.initial()[node]);
        assert!(matches!(s.evaluate(0.0, &[1e12]), Err(Error::OutOfDomain { .. })));
    }
}
