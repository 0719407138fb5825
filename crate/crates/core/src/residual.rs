//! First-order correction for the risk the factor model leaves out.
//!
//! Writing `Σ = βVβ' + R`, the correction `η` to the reduced value function
//! solves a linear equation whose Feynman–Kac representation is
//!
//! ```text
//! η(t, q) = E~[ -∫_t^T ψ̄'(f_s'Vf_s) q_s'Rq_s ds - ℓ̄'(f_T'Vf_T) q_T'Rq_T ],   f = β'q,
//! ```
//!
//! under the measure where bucket `(i, side, k)` fires at `-H'(p) p_k`, i.e.
//! exactly the fill intensity of the surface policy. So the estimator reuses
//! the simulator's event engine with the surface quotes; with the same seed
//! both produce the same inventory paths.

use std::sync::Arc;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::factor::FactorModel;
use crate::hamiltonian::HamiltonianOps;
use crate::model::{Bucket, MarketSpec, PenaltyForm, Side};
use crate::quotes::{marginal_cost, PolicyKind, Quote, QuotePolicy, Refusal, SurfacePolicy};
use crate::rng;
use crate::simulator::{Engine, Event, PathObserver};
use crate::solver::ValueSurface;
use crate::stats;

/// Seed offset giving an independent stream when common random numbers are off.
const INDEPENDENT_STREAM: u64 = 0x9e37_79b9_7f4a_7c15;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EtaEstimate {
    pub value: f64,
    pub stderr: f64,
    pub n_paths: usize,
    pub seed: u64,
}

struct ResidualIntegrand<'a> {
    fm: &'a FactorModel,
    running: PenaltyForm,
    terminal: PenaltyForm,
    acc: f64,
}

impl ResidualIntegrand<'_> {
    fn weight(&self, form: &PenaltyForm, q: &[f64]) -> f64 {
        let f = self.fm.project(q);
        let slope = form.derivative(self.fm.factor_risk(&f)).unwrap_or(0.0);
        if slope == 0.0 {
            return 0.0;
        }
        slope * self.fm.residual.quad_form(q)
    }
}

impl PathObserver for ResidualIntegrand<'_> {
    fn interval(&mut self, dt: f64, q: &[f64], _risk: f64) {
        if dt > 0.0 {
            self.acc -= self.weight(&self.running, q) * dt;
        }
    }

    fn finish(&mut self, q: &[f64], _risk: f64) {
        self.acc -= self.weight(&self.terminal, q);
    }
}

fn check_smooth(market: &MarketSpec) -> Result<()> {
    if !market.penalty.running.is_smooth() {
        return Err(Error::NonDifferentiablePenalty("running"));
    }
    if !market.penalty.terminal.is_smooth() {
        return Err(Error::NonDifferentiablePenalty("terminal"));
    }
    Ok(())
}

/// Per-path residual integrals from `(t, q)`, plus the event logs if asked.
fn residual_paths(
    policy: &SurfacePolicy,
    market: &MarketSpec,
    t: f64,
    q: &[f64],
    n_paths: usize,
    seed: u64,
    keep_logs: bool,
) -> Result<(Vec<f64>, Vec<Vec<Event>>)> {
    check_smooth(market)?;
    let surface = policy.surface();
    if n_paths == 0 {
        return Err(crate::error::invalid("paths", "need at least one path"));
    }
    if q.len() != market.dim() || surface.market.dim() != market.dim() {
        return Err(Error::Dimension("inventory, surface and market disagree on the number of assets".into()));
    }
    if !(0.0..=surface.market.horizon).contains(&t) {
        return Err(crate::error::invalid("t", "must lie in [0, T]"));
    }
    let fm = &surface.factor_model;
    if !fm.has_residual() && !keep_logs {
        return Ok((vec![0.0; n_paths], Vec::new()));
    }
    let engine = Engine::new(&surface.market, policy, None)?;
    let out: Vec<(f64, Vec<Event>)> = (0..n_paths)
        .into_par_iter()
        .map(|path| {
            let mut rng = rng::stream(seed, rng::EVENTS, path as u64);
            let mut integrand = ResidualIntegrand {
                fm,
                running: market.penalty.running,
                terminal: market.penalty.terminal,
                acc: 0.0,
            };
            let mut log = keep_logs.then(Vec::new);
            engine.run(t, q, &mut rng, &mut integrand, log.as_mut());
            (integrand.acc, log.unwrap_or_default())
        })
        .collect();
    Ok(out.into_iter().unzip())
}

fn summarise(values: &[f64], seed: u64) -> EtaEstimate {
    EtaEstimate {
        value: stats::mean(values),
        stderr: stats::stderr_mean(values),
        n_paths: values.len(),
        seed,
    }
}

/// Monte Carlo estimate of `η(t, q)`.
///
/// The dynamics come from the surface; `market` supplies the penalty whose
/// slope enters the integrand (normally the surface's own market).
pub fn eta_estimate(
    surface: &Arc<ValueSurface>,
    market: &MarketSpec,
    t: f64,
    q: &[f64],
    n_paths: usize,
    seed: u64,
) -> Result<EtaEstimate> {
    let policy = SurfacePolicy::new(surface.clone());
    let (values, _) = residual_paths(&policy, market, t, q, n_paths, seed, false)?;
    Ok(summarise(&values, seed))
}

/// As [`eta_estimate`], also returning each path's event log.
pub fn eta_estimate_with_logs(
    surface: &Arc<ValueSurface>,
    market: &MarketSpec,
    t: f64,
    q: &[f64],
    n_paths: usize,
    seed: u64,
) -> Result<(EtaEstimate, Vec<Vec<Event>>)> {
    let policy = SurfacePolicy::new(surface.clone());
    let (values, logs) = residual_paths(&policy, market, t, q, n_paths, seed, true)?;
    Ok((summarise(&values, seed), logs))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AdjustedQuote {
    pub unadjusted: Quote,
    pub adjusted: Quote,
    /// `η̂` at the current inventory (absent when no quote is given).
    pub eta: Option<EtaEstimate>,
    /// `η̂` at the post-trade inventory.
    pub eta_shifted: Option<EtaEstimate>,
    /// Standard error of `η̂(q) - η̂(q ± z e^i)`.
    pub eta_diff_stderr: f64,
}

/// Surface quote corrected by `(η̂(t, q) - η̂(t, q ± z e^i)) / z`.
///
/// With `common_random_numbers` both estimates replay the same per-path
/// streams, which is what keeps the difference usable.
#[allow(clippy::too_many_arguments)]
pub fn adjusted_quote(
    surface: &Arc<ValueSurface>,
    market: &MarketSpec,
    t: f64,
    q: &[f64],
    asset: usize,
    side: Side,
    size: f64,
    n_paths: usize,
    seed: u64,
    common_random_numbers: bool,
) -> Result<AdjustedQuote> {
    let (_, mut out) = adjusted_quotes(
        surface,
        market,
        t,
        q,
        &[(asset, side, size)],
        n_paths,
        seed,
        common_random_numbers,
    )?;
    Ok(out.remove(0))
}

/// Several requests at one `(t, q)`, sharing the estimate of `η̂(t, q)`.
#[allow(clippy::too_many_arguments)]
pub fn adjusted_quotes(
    surface: &Arc<ValueSurface>,
    market: &MarketSpec,
    t: f64,
    q: &[f64],
    requests: &[(usize, Side, f64)],
    n_paths: usize,
    seed: u64,
    common_random_numbers: bool,
) -> Result<(EtaEstimate, Vec<AdjustedQuote>)> {
    check_smooth(market)?;
    let policy = SurfacePolicy::new(surface.clone());
    let (here, _) = residual_paths(&policy, market, t, q, n_paths, seed, false)?;
    let eta = summarise(&here, seed);
    let other_seed = if common_random_numbers {
        seed
    } else {
        seed.wrapping_add(INDEPENDENT_STREAM)
    };
    let mut out = Vec::with_capacity(requests.len());
    for &(asset, side, size) in requests {
        let p = match marginal_cost(surface, t, q, asset, side, size)? {
            Ok(p) => p,
            Err(r) => {
                out.push(AdjustedQuote {
                    unadjusted: Quote::Refused(r),
                    adjusted: Quote::Refused(r),
                    eta: None,
                    eta_shifted: None,
                    eta_diff_stderr: f64::NAN,
                });
                continue;
            }
        };
        let ops = HamiltonianOps::new(*surface.market.assets[asset].intensity(side), surface.market.quote_floor);
        let mut shifted = q.to_vec();
        shifted[asset] += side.sign() * size;
        let (there, _) = residual_paths(&policy, market, t, &shifted, n_paths, other_seed, false)?;
        let diff: Vec<f64> = here.iter().zip(&there).map(|(a, b)| a - b).collect();
        let eta_shifted = summarise(&there, other_seed);
        let correction = (eta.value - eta_shifted.value) / size;
        out.push(AdjustedQuote {
            unadjusted: Quote::Price(ops.delta_star(p)),
            adjusted: Quote::Price(ops.delta_star(p + correction)),
            eta: Some(eta),
            eta_shifted: Some(eta_shifted),
            eta_diff_stderr: stats::stderr_mean(&diff),
        });
    }
    Ok((eta, out))
}

/// Surface quotes with the Monte Carlo residual correction on every request.
/// Each quote costs two `η̂` estimates, so this is for spot checks only.
#[derive(Debug, Clone)]
pub struct AdjustedPolicy {
    surface: Arc<ValueSurface>,
    market: MarketSpec,
    buckets: Vec<Bucket>,
    pub n_paths: usize,
    pub seed: u64,
}

impl AdjustedPolicy {
    pub fn new(surface: Arc<ValueSurface>, n_paths: usize, seed: u64) -> Result<Self> {
        check_smooth(&surface.market)?;
        let market = surface.market.clone();
        Ok(Self {
            buckets: market.buckets(),
            surface,
            market,
            n_paths,
            seed,
        })
    }
}

impl QuotePolicy for AdjustedPolicy {
    fn kind(&self) -> PolicyKind {
        PolicyKind::SurfaceMcAdjusted
    }

    fn buckets(&self) -> &[Bucket] {
        &self.buckets
    }

    fn is_time_dependent(&self) -> bool {
        true
    }

    fn quote_bucket(&self, t: f64, q: &[f64], bucket: usize) -> Quote {
        let b = &self.buckets[bucket];
        adjusted_quote(&self.surface, &self.market, t, q, b.asset, b.side, b.size, self.n_paths, self.seed, true)
            .map(|a| a.adjusted)
            .unwrap_or(Quote::Refused(Refusal::OutsideGrid))
    }
}
