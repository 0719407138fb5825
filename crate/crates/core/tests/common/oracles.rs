//! Dense method-of-lines reference for one-asset markets.

use otc_mm::hamiltonian::HamiltonianOps;
use otc_mm::linalg::Matrix;
use otc_mm::model::{AssetSpec, LogisticIntensity, MarketSpec, RiskPenalty, Side, SizeDistribution};

use super::GAMMA;

/// One asset with two request sizes and `B = σ² q_max²`.
pub fn one_asset(horizon: f64, q_max: f64) -> MarketSpec {
    let it = LogisticIntensity::new(30.0, 0.7, 30.0).unwrap();
    let sizes = SizeDistribution::from_pairs(&[(6250.0, 0.6), (12500.0, 0.4)]).unwrap();
    let sigma = 1.2;
    MarketSpec::new(
        vec![AssetSpec::symmetric(100.0, sigma, it, sizes)],
        Matrix::identity(1),
        horizon,
        1.0,
        sigma * sigma * q_max * q_max,
        RiskPenalty::quadratic(GAMMA),
    )
    .unwrap()
}

/// Method-of-lines ODE on a dense inventory lattice whose spacing divides
/// every request size (no interpolation), integrated backward with RK4.
pub fn dense_rk4(m: &MarketSpec, q_max: f64, h: f64, steps: usize) -> (Vec<f64>, Vec<f64>) {
    let n = (2.0 * q_max / h).round() as usize + 1;
    let q: Vec<f64> = (0..n).map(|j| -q_max + h * j as f64).collect();
    let sigma2 = m.covariance()[(0, 0)];
    let asset = &m.assets[0];
    // (ops, size, prob, lattice shift)
    let mut terms = Vec::new();
    for side in Side::BOTH {
        let ops = HamiltonianOps::new(*asset.intensity(side), m.quote_floor);
        for a in asset.sizes(side).atoms() {
            let shift = (side.sign() * a.size / h).round() as i64;
            assert!((shift as f64 * h - side.sign() * a.size).abs() < 1e-9);
            terms.push((ops, a.size, a.prob, shift));
        }
    }
    let rhs = |v: &[f64]| -> Vec<f64> {
        (0..n)
            .map(|j| {
                let mut rate = -0.5 * GAMMA * sigma2 * q[j] * q[j];
                for (ops, z, p, s) in &terms {
                    let k = j as i64 + s;
                    if k < 0 || k >= n as i64 {
                        continue;
                    }
                    let p_arg = (v[j] - v[k as usize]) / z;
                    rate += p * z * ops.hamiltonian(p_arg);
                }
                rate
            })
            .collect()
    };
    let dt = m.horizon / steps as f64;
    let mut v = vec![0.0; n];
    // backward in time: dθ/d(T - t) = rate
    for _ in 0..steps {
        let k1 = rhs(&v);
        let y: Vec<f64> = v.iter().zip(&k1).map(|(a, b)| a + 0.5 * dt * b).collect();
        let k2 = rhs(&y);
        let y: Vec<f64> = v.iter().zip(&k2).map(|(a, b)| a + 0.5 * dt * b).collect();
        let k3 = rhs(&y);
        let y: Vec<f64> = v.iter().zip(&k3).map(|(a, b)| a + dt * b).collect();
        let k4 = rhs(&y);
        for j in 0..n {
            v[j] += dt / 6.0 * (k1[j] + 2.0 * k2[j] + 2.0 * k3[j] + k4[j]);
        }
    }
    (q, v)
}
