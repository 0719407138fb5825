mod common;

use otc_mm::linalg::Matrix;
use otc_mm::model::{AssetSpec, LogisticIntensity, MarketSpec, RiskPenalty, Side};
use otc_mm::quotes::{myopic_quote, optimal_quote, SurfacePolicy};
use otc_mm::residual::{adjusted_quote, eta_estimate, eta_estimate_with_logs};
use otc_mm::simulator::{simulate, SimulationConfig};
use otc_mm::stats;

use common::{four_atoms, surface, two_asset, GAMMA};

#[test]
fn residual_engine_replays_the_simulator_paths() {
    let m = two_asset(2.0, 30.0);
    let s = surface(&m, None, 41);
    assert!(!s.factor_model.has_residual());
    let (eta, logs) = eta_estimate_with_logs(&s, &m, 0.0, &[0.0, 0.0], 10, 17).unwrap();
    assert_eq!(eta.value, 0.0);
    let cfg = SimulationConfig {
        n_paths: 10,
        seed: 17,
        keep_events: true,
        ..SimulationConfig::default()
    };
    let out = simulate(&m, &SurfacePolicy::new(s), &cfg).unwrap();
    for (path, log) in out.paths.iter().zip(&logs) {
        assert!(!log.is_empty());
        assert_eq!(path.events.as_ref().unwrap(), log, "path {}", path.path);
    }
}

#[test]
fn eta_is_non_positive_at_flat_inventory() {
    let m = two_asset(2.0, 30.0);
    let s = surface(&m, Some(1), 41);
    let e = eta_estimate(&s, &m, 0.0, &[0.0, 0.0], 300, 2).unwrap();
    assert!(e.value < 0.0 && e.stderr > 0.0, "{e:?}");
    assert!(e.value + 3.0 * e.stderr < 0.0);
}

#[test]
fn standard_error_shrinks_like_one_over_root_n() {
    let m = two_asset(2.0, 30.0);
    let s = surface(&m, Some(1), 41);
    let se: Vec<f64> = [100, 400, 1600]
        .iter()
        .map(|&n| eta_estimate(&s, &m, 0.0, &[0.0, 0.0], n, 9).unwrap().stderr)
        .collect();
    for w in se.windows(2) {
        let ratio = w[0] / w[1];
        assert!((ratio / 2.0 - 1.0).abs() < 0.2, "stderr ratio {ratio} ({se:?})");
    }
}

#[test]
fn flat_surface_matches_the_closed_form() {
    // With no penalty in the solve the surface is flat, quotes are the
    // constant myopic ones and each inventory is a zero-mean compound
    // Poisson process: E[q_i²(s)] = Λ_i E[z²] s.
    let horizon = 0.5;
    let it = LogisticIntensity::new(30.0, 0.7, 30.0).unwrap();
    let assets = vec![
        AssetSpec::symmetric(100.0, 1.2, it, four_atoms()),
        AssetSpec::symmetric(100.0, 0.6, it, four_atoms()),
    ];
    let rho = Matrix::from_rows(&[vec![1.0, 0.9], vec![0.9, 1.0]]).unwrap();
    let flat = MarketSpec::new(assets, rho, horizon, 1.0, 1e20, RiskPenalty::none()).unwrap();
    let s = surface(&flat, Some(1), 21);
    let priced = flat.with_penalty(RiskPenalty::quadratic(GAMMA));

    let q0 = [0.0, 0.0];
    for asset in 0..2 {
        for side in Side::BOTH {
            let got = optimal_quote(&s, 0.0, &q0, asset, side, 6250.0).unwrap().price().unwrap();
            assert!((got - myopic_quote(&flat, asset, side)).abs() < 1e-9);
        }
    }

    let r = &s.factor_model.residual;
    let z2 = four_atoms().second_moment();
    let expected: f64 = (0..2)
        .map(|i| {
            let a = &flat.assets[i];
            let rate: f64 = Side::BOTH
                .iter()
                .map(|&side| a.intensity(side).intensity(myopic_quote(&flat, i, side)))
                .sum();
            r[(i, i)] * rate * z2
        })
        .sum::<f64>()
        * -(GAMMA / 2.0)
        * horizon
        * horizon
        / 2.0;
    let e = eta_estimate(&s, &priced, 0.0, &q0, 4000, 3).unwrap();
    eprintln!("closed form {expected:.4}, estimate {:.4} ± {:.4}", e.value, e.stderr);
    assert!((e.value - expected).abs() <= 3.0 * e.stderr, "{e:?} vs {expected}");
}

#[test]
fn common_random_numbers_reduce_correction_variance() {
    let m = two_asset(2.0, 30.0);
    let s = surface(&m, Some(1), 31);
    let correction = |seed: u64, crn: bool| {
        let a = adjusted_quote(&s, &m, 0.0, &[0.0, 0.0], 1, Side::Ask, 6250.0, 30, seed, crn).unwrap();
        a.adjusted.price().unwrap() - a.unadjusted.price().unwrap()
    };
    let with: Vec<f64> = (0..100).map(|r| correction(1000 + r, true)).collect();
    let without: Vec<f64> = (0..100).map(|r| correction(1000 + r, false)).collect();
    let (v_with, v_without) = (stats::variance(&with), stats::variance(&without));
    eprintln!("correction variance: crn {v_with:.3e}, independent {v_without:.3e}");
    assert!(v_with < v_without);
}

#[test]
fn adjustment_moves_the_one_factor_quote_towards_the_full_one() {
    let m = two_asset(2.0, 30.0);
    let one = surface(&m, Some(1), 61);
    let full = surface(&m, None, 61);
    // a point on the ellipse's long axis, where the one-factor model sees
    // almost no risk but the residual does
    let e = otc_mm::factor::eigendecompose(m.covariance()).unwrap();
    let v = e.eigenvector(1);
    let c = 0.3 * (m.risk_limit / e.eigenvalues[1]).sqrt();
    let q = [c * v[0], c * v[1]];
    let mut checked = 0;
    for (asset, &along) in v.iter().enumerate() {
        for side in Side::BOTH {
            // trades that lengthen the position along the axis
            let dir = side.sign() * along * c;
            if dir <= 0.0 {
                continue;
            }
            let a = adjusted_quote(&one, &m, 0.0, &q, asset, side, 6250.0, 400, 5, true).unwrap();
            let (unadj, adj) = (a.unadjusted.price().unwrap(), a.adjusted.price().unwrap());
            let target = optimal_quote(&full, 0.0, &q, asset, side, 6250.0).unwrap().price().unwrap();
            eprintln!("asset {asset} {side:?}: 1f {unadj:.5} -> {adj:.5}, full {target:.5}");
            assert!((target - unadj) * (adj - unadj) > 0.0, "wrong direction");
            assert!((adj - target).abs() < (unadj - target).abs());
            checked += 1;
        }
    }
    assert_eq!(checked, 2);
}
