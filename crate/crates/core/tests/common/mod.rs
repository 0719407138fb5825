#![allow(dead_code)]

pub mod oracles;
pub mod random;

use std::sync::Arc;

use otc_mm::factor::{build_factor_model, eigendecompose, FactorModel};
use otc_mm::linalg::Matrix;
use otc_mm::model::{AssetSpec, LogisticIntensity, MarketSpec, RiskPenalty, SizeDistribution};
use otc_mm::solver::{grid_for, solve, SolverConfig, ValueSurface};

pub const GAMMA: f64 = 8e-7;

pub fn four_atoms() -> SizeDistribution {
    SizeDistribution::from_pairs(&[(6250.0, 0.53), (12500.0, 0.35), (18750.0, 0.10), (25000.0, 0.02)]).unwrap()
}

/// The two-asset market with a custom horizon and intensity scale.
pub fn two_asset(horizon: f64, lambda: f64) -> MarketSpec {
    let it = LogisticIntensity::new(lambda, 0.7, 30.0).unwrap();
    let assets = vec![
        AssetSpec::symmetric(100.0, 1.2, it, four_atoms()),
        AssetSpec::symmetric(100.0, 0.6, it, four_atoms()),
    ];
    let rho = Matrix::from_rows(&[vec![1.0, 0.9], vec![0.9, 1.0]]).unwrap();
    MarketSpec::new(assets, rho, horizon, 1.0, 2.4e10, RiskPenalty::quadratic(GAMMA)).unwrap()
}

pub fn factor_model(m: &MarketSpec, k: Option<usize>) -> FactorModel {
    match k {
        None => FactorModel::identity(m.covariance()),
        Some(k) => build_factor_model(&eigendecompose(m.covariance()).unwrap(), k).unwrap(),
    }
}

pub fn surface(m: &MarketSpec, k: Option<usize>, nodes: usize) -> Arc<ValueSurface> {
    let fm = factor_model(m, k);
    let grid = grid_for(m, &fm, &vec![nodes; fm.n_factors()]).unwrap();
    Arc::new(solve(m, &fm, &grid, &SolverConfig::default()).unwrap())
}
