//! Optimal skew and Hamiltonian of one (asset, side) intensity.
//!
//! For a marginal inventory cost `p`, the desk answers the quote maximising
//! `Λ(δ)(δ - p)` over `δ >= -δ∞`. Off the floor the maximiser solves the
//! first-order condition `p = δ + Λ(δ)/Λ'(δ)`, which for the logistic family
//! reads `p = δ - (1 + exp(-(α + βδ)))/β`. With `u = α + βδ` and
//! `c = βp + α + 1` this is `u - e^{-u} = c`, so `e^{-u} = ω(-c)` with `ω`
//! the Wright omega function (`ω + ln ω = x`). Then
//! `H(p) = (λ/β) ω(-c)` and `Λ(δ*) = λ ω/(1 + ω)` without any further
//! exponential.

use serde::{Deserialize, Serialize};

use crate::model::LogisticIntensity;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct HamiltonianOps {
    intensity: LogisticIntensity,
    quote_floor: f64,
    lipschitz_bound: f64,
    /// Largest `p` at which the floor binds.
    clamp_below: f64,
}

impl HamiltonianOps {
    pub fn new(intensity: LogisticIntensity, quote_floor: f64) -> Self {
        let LogisticIntensity { alpha, beta, .. } = intensity;
        let floor = -quote_floor;
        Self {
            intensity,
            quote_floor,
            lipschitz_bound: intensity.intensity(floor),
            clamp_below: floor - (1.0 + (-(alpha + beta * floor)).exp()) / beta,
        }
    }

    pub fn intensity(&self) -> &LogisticIntensity {
        &self.intensity
    }

    pub fn quote_floor(&self) -> f64 {
        self.quote_floor
    }

    /// `Λ(-δ∞)`, a global bound on `|H'|`.
    pub fn lipschitz_bound(&self) -> f64 {
        self.lipschitz_bound
    }

    /// `c` and `ω(-c)`, or `None` when the floor binds.
    #[inline]
    fn interior(&self, p: f64) -> Option<(f64, f64)> {
        if p <= self.clamp_below {
            return None;
        }
        let c = self.intensity.beta * p + self.intensity.alpha + 1.0;
        Some((c, wright_omega(-c)))
    }

    /// Maximiser of `Λ(δ)(δ - p)` on `[-δ∞, ∞)`.
    pub fn delta_star(&self, p: f64) -> f64 {
        match self.interior(p) {
            None => -self.quote_floor,
            Some((c, w)) => ((c + w - self.intensity.alpha) / self.intensity.beta).max(-self.quote_floor),
        }
    }

    /// `H(p) = sup_{δ >= -δ∞} Λ(δ)(δ - p)`.
    #[inline]
    pub fn hamiltonian(&self, p: f64) -> f64 {
        match self.interior(p) {
            None => self.lipschitz_bound * (-self.quote_floor - p),
            Some((_, w)) => self.intensity.lambda_rfq / self.intensity.beta * w,
        }
    }

    /// `H'(p) = -Λ(δ*(p))`.
    pub fn hamiltonian_derivative(&self, p: f64) -> f64 {
        match self.interior(p) {
            None => -self.lipschitz_bound,
            Some((_, w)) => -self.intensity.lambda_rfq * w / (1.0 + w),
        }
    }

    /// `(δ*(p), H(p), H'(p))` from a single root solve.
    pub fn evaluate(&self, p: f64) -> (f64, f64, f64) {
        match self.interior(p) {
            None => (
                -self.quote_floor,
                self.lipschitz_bound * (-self.quote_floor - p),
                -self.lipschitz_bound,
            ),
            Some((c, w)) => {
                let LogisticIntensity { lambda_rfq, alpha, beta } = self.intensity;
                (
                    ((c + w - alpha) / beta).max(-self.quote_floor),
                    lambda_rfq / beta * w,
                    -lambda_rfq * w / (1.0 + w),
                )
            }
        }
    }
}

/// Wright omega `ω(x)`, the root of `ω + ln ω = x`, for real `x`.
///
/// Winitzki-style start `W(e^x) ≈ L(1 - ln(1+L)/(2+L))`, `L = ln(1+e^x)`,
/// good to about 2%, then two fourth-order Fritsch steps.
pub fn wright_omega(x: f64) -> f64 {
    if x < -700.0 {
        return x.exp();
    }
    if x == f64::INFINITY {
        return x;
    }
    let l = x.max(0.0) + (-x.abs()).exp().ln_1p();
    let mut w = l * (1.0 - l.ln_1p() / (2.0 + l));
    for _ in 0..2 {
        let r = x - w - w.ln();
        let a = (1.0 + w) * (1.0 + w + 2.0 / 3.0 * r);
        w *= 1.0 + r / (1.0 + w) * (a - 0.5 * r) / (a - r);
    }
    w
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn ops(lambda: f64, floor: f64) -> HamiltonianOps {
        HamiltonianOps::new(LogisticIntensity::new(lambda, 0.7, 30.0).unwrap(), floor)
    }

    fn grid_argmax(h: &HamiltonianOps, p: f64, lo: f64, hi: f64, step: f64) -> (f64, f64) {
        let n = ((hi - lo) / step).round() as usize;
        let mut best = (lo, f64::NEG_INFINITY);
        for j in 0..=n {
            let d = lo + step * j as f64;
            let v = h.intensity().intensity(d) * (d - p);
            if v > best.1 {
                best = (d, v);
            }
        }
        best
    }

    #[test]
    fn myopic_quote_value() {
        let h = ops(30.0, 1.0);
        assert!((h.delta_star(0.0) - 0.03854).abs() < 1e-5);
        assert!((h.hamiltonian(0.0) - 0.1563).abs() < 1e-4);
        assert!((h.hamiltonian_derivative(0.0) + 4.054).abs() < 1e-3);
    }

    #[test]
    fn clamps_at_floor() {
        let h = ops(30.0, 0.0);
        assert_eq!(h.delta_star(-1e6), 0.0);
        let h1 = ops(30.0, 1.0);
        let far = -1e13;
        assert_eq!(h1.delta_star(far), -1.0);
        assert_eq!(h1.hamiltonian_derivative(far), -h1.lipschitz_bound());
        assert_eq!(h1.hamiltonian_derivative(far * 2.0), -h1.lipschitz_bound());
    }

    #[test]
    fn argmax_matches_grid_search() {
        let h = ops(30.0, 1.0);
        let (d, _) = grid_argmax(&h, 0.05, -1.0, 1.0, 1e-6);
        assert!((h.delta_star(0.05) - d).abs() < 1e-5);
    }

    #[test]
    fn envelope_dominates_random_quotes() {
        let h = ops(30.0, 1.0);
        let mut x = 0.123_f64;
        for _ in 0..1000 {
            x = (x * 9301.0 + 49297.0) % 233280.0;
            let delta = -1.0 + 6.0 * x / 233280.0;
            for p in [-1.0, -0.1, 0.0, 0.07, 0.5] {
                let v = h.intensity().intensity(delta) * (delta - p);
                assert!(h.hamiltonian(p) >= v - 1e-15);
            }
        }
    }

    #[test]
    fn derivative_matches_finite_difference() {
        let h = ops(30.0, 1.0);
        for j in 0..41 {
            let p = -2.0 + 0.1 * j as f64;
            let eps = 1e-6;
            let fd = (h.hamiltonian(p + eps) - h.hamiltonian(p - eps)) / (2.0 * eps);
            let exact = h.hamiltonian_derivative(p);
            assert!(exact < 0.0);
            assert!((fd - exact).abs() <= 1e-6 * exact.abs(), "p = {p}: fd {fd} vs {exact}");
        }
    }

    #[test]
    fn extreme_inputs_stay_finite() {
        let h = ops(30.0, 1.0);
        for p in [-1e12, -1e3, -50.0, 50.0, 1e3, 1e9] {
            let (d, v, dv) = h.evaluate(p);
            assert!(d.is_finite() && v.is_finite() && dv.is_finite(), "p = {p}");
            assert!(d >= -1.0);
        }
    }

    #[test]
    fn wright_omega_solves_its_equation() {
        for j in 0..=400 {
            let x = -650.0 + 3.4 * j as f64;
            let w = wright_omega(x);
            assert!(w > 0.0);
            let r = w + w.ln() - x;
            assert!(r.abs() <= 4.0 * f64::EPSILON * x.abs().max(1.0), "x = {x}: residual {r}");
        }
        assert!((wright_omega(1.0) - 1.0).abs() < 1e-15);
        // ω(0) = W(1), the omega constant
        assert!((wright_omega(0.0) - 0.567_143_290_409_783_8).abs() < 1e-15);
    }

    #[test]
    fn matches_direct_first_order_solve() {
        // bisection on the first-order condition as an independent oracle
        let h = ops(30.0, 1.0);
        let it = *h.intensity();
        for j in 0..60 {
            let p = -0.5 + 0.05 * j as f64;
            let g = |d: f64| d - (1.0 + (-(it.alpha + it.beta * d)).exp()) / it.beta - p;
            let (mut lo, mut hi) = (-1.0f64, 10.0f64);
            if g(lo) >= 0.0 {
                assert_eq!(h.delta_star(p), -1.0);
                continue;
            }
            for _ in 0..200 {
                let mid = 0.5 * (lo + hi);
                if g(mid) < 0.0 { lo = mid } else { hi = mid }
            }
            let d = 0.5 * (lo + hi);
            assert!((h.delta_star(p) - d).abs() < 1e-12, "p = {p}");
            let hval = it.intensity(d) * (d - p);
            assert!((h.hamiltonian(p) - hval).abs() <= 1e-12 * hval.abs().max(1e-300), "p = {p}");
            assert!((h.hamiltonian_derivative(p) + it.intensity(d)).abs() <= 1e-12 * it.lambda_rfq);
        }
    }

    proptest! {
        #[test]
        fn delta_star_nondecreasing(a in -3.0f64..3.0, b in -3.0f64..3.0) {
            let h = ops(30.0, 1.0);
            let (p1, p2) = if a < b { (a, b) } else { (b, a) };
            prop_assert!(h.delta_star(p1) <= h.delta_star(p2) + 1e-12);
        }

        #[test]
        fn hamiltonian_decreasing_and_lipschitz(a in -3.0f64..3.0, gap in 1e-4f64..2.0, floor in 0.0f64..1.0) {
            let h = ops(30.0, floor);
            let (p1, p2) = (a, a + gap);
            let (h1, h2) = (h.hamiltonian(p1), h.hamiltonian(p2));
            prop_assert!(h2 < h1);
            prop_assert!(h1 - h2 <= h.lipschitz_bound() * (p2 - p1) * (1.0 + 1e-12));
            prop_assert!(h.hamiltonian_derivative(p1) <= h.hamiltonian_derivative(p2));
            prop_assert!(h1 > 0.0);
        }

        #[test]
        fn first_order_condition_off_clamp(p in -2.0f64..2.0, alpha in -2.0f64..2.0, beta in 1.0f64..100.0) {
            let it = LogisticIntensity::new(10.0, alpha, beta).unwrap();
            let h = HamiltonianOps::new(it, 1.0);
            let d = h.delta_star(p);
            if d > -1.0 + 1e-9 {
                let residual = p - d - it.intensity(d) / it.derivative(d);
                prop_assert!(residual.abs() <= 1e-9, "residual {residual}");
            }
        }
    }
}
