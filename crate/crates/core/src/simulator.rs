//! Event-driven simulation of the desk under a quoting policy.
//!
//! Each (asset, side, size-atom) bucket is a point process with intensity
//! `λ_RFQ p_k f(δ)`, constant between events when quotes depend only on the
//! inventory. The next event comes from competing exponential clocks, one
//! uniform per bucket in bucket order, so different policies consume the
//! event stream in the same layout. Time-dependent policies (and the audit
//! mode) thin candidate arrivals from a constant bound instead.
//!
//! Market PnL between events is `q'ΔS ~ N(0, q'Σq Δt)`, drawn from a stream
//! separate from the events; optionally full price paths are simulated and
//! cash is booked explicitly.

use rand::Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};
use crate::factor::eigendecompose;
use crate::linalg::{dot, Matrix};
use crate::model::{Bucket, LogisticIntensity, MarketSpec, Side};
use crate::quotes::{post_trade_risk, within_limit, Quote, QuotePolicy};
use crate::rng::{self, StreamRng};
use crate::stats;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ClockMode {
    /// Competing exponential clocks on the current intensities.
    Exact,
    /// Candidate arrivals at `Λ(-δ∞) p_k`, kept with probability `Λ(δ)/Λ(-δ∞)`.
    Thinning,
    /// RFQs arrive at `λ_RFQ p_k` and are filled with probability `f(δ)`.
    Audit,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PriceMode {
    /// Gaussian increments of the portfolio value only.
    #[default]
    PortfolioIncrement,
    /// Simulate every mid price and book cash trade by trade.
    FullPaths,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimulationConfig {
    pub n_paths: usize,
    pub seed: u64,
    /// `None`: exact clocks, or thinning if the policy depends on time.
    pub clock: Option<ClockMode>,
    pub prices: PriceMode,
    pub keep_events: bool,
}

impl Default for SimulationConfig {
    fn default() -> Self {
        Self {
            n_paths: 2000,
            seed: 0,
            clock: None,
            prices: PriceMode::PortfolioIncrement,
            keep_events: false,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EventKind {
    Fill,
    /// The trade would have breached the risk limit and was skipped.
    RiskRejected,
    /// Thinning only: the client turned the quote down.
    Declined,
    /// Thinning only: the policy answered without a price.
    NoQuote,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Event {
    pub t: f64,
    pub bucket: u32,
    pub kind: EventKind,
    /// Quoted distance; `NaN` when there was no quote.
    pub delta: f64,
}

/// What happened on one path.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrajectoryStats {
    pub path: usize,
    pub pnl: f64,
    pub spread_pnl: f64,
    pub market_pnl: f64,
    /// `∫ q'Σq dt`.
    pub risk_integral: f64,
    /// `∫ ψ(q_t) dt`.
    pub running_penalty: f64,
    pub terminal_penalty: f64,
    /// Per bucket, in [`MarketSpec::buckets`] order.
    pub n_fills: Vec<u32>,
    pub rejected_fills: u32,
    pub declined: u32,
    pub final_inventory: Vec<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub events: Option<Vec<Event>>,
}

impl TrajectoryStats {
    pub fn objective(&self) -> f64 {
        self.pnl - self.running_penalty - self.terminal_penalty
    }

    pub fn total_fills(&self) -> u64 {
        self.n_fills.iter().map(|&n| n as u64).sum()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimulationSummary {
    pub n_paths: usize,
    pub seed: u64,
    pub mean_pnl: f64,
    pub mean_pnl_se: f64,
    pub stdev_pnl: f64,
    pub stdev_pnl_se: f64,
    /// Standard deviation of the spread PnL.
    pub stdev_from_rfq: f64,
    pub stdev_from_rfq_se: f64,
    /// Mean of `pnl - ∫ψ(q)dt - ℓ(q_T)`.
    pub objective: f64,
    pub objective_se: f64,
    /// Mean PnL given the RFQ path, i.e. mean spread PnL: the market part is
    /// centred conditionally on the inventory path, so this estimates the same
    /// expectation as `mean_pnl` without the market noise.
    pub mean_pnl_conditional: f64,
    pub mean_pnl_conditional_se: f64,
    /// Objective with the market PnL replaced by its conditional mean (zero).
    pub objective_conditional: f64,
    pub objective_conditional_se: f64,
    pub mean_risk_integral: f64,
    pub mean_fills: f64,
    pub rejected_fills: u64,
}

impl SimulationSummary {
    pub fn from_paths(paths: &[TrajectoryStats], seed: u64) -> Self {
        let col = |f: &dyn Fn(&TrajectoryStats) -> f64| paths.iter().map(f).collect::<Vec<f64>>();
        let pnl = col(&|p| p.pnl);
        let spread = col(&|p| p.spread_pnl);
        let objective = col(&|p| p.objective());
        let conditional = col(&|p| p.spread_pnl - p.running_penalty - p.terminal_penalty);
        let risk = col(&|p| p.risk_integral);
        let fills = col(&|p| p.total_fills() as f64);
        Self {
            n_paths: paths.len(),
            seed,
            mean_pnl: stats::mean(&pnl),
            mean_pnl_se: stats::stderr_mean(&pnl),
            stdev_pnl: stats::stdev(&pnl),
            stdev_pnl_se: stats::stderr_stdev(&pnl),
            stdev_from_rfq: stats::stdev(&spread),
            stdev_from_rfq_se: stats::stderr_stdev(&spread),
            objective: stats::mean(&objective),
            objective_se: stats::stderr_mean(&objective),
            mean_pnl_conditional: stats::mean(&spread),
            mean_pnl_conditional_se: stats::stderr_mean(&spread),
            objective_conditional: stats::mean(&conditional),
            objective_conditional_se: stats::stderr_mean(&conditional),
            mean_risk_integral: stats::mean(&risk),
            mean_fills: stats::mean(&fills),
            rejected_fills: paths.iter().map(|p| p.rejected_fills as u64).sum(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimulationOutput {
    pub summary: SimulationSummary,
    pub paths: Vec<TrajectoryStats>,
    pub warnings: Vec<String>,
}

/// Gap `Var(pnl) - E[∫q'Σq] - Var(spread)` and its standard error.
///
/// Conditionally on the RFQ path the market PnL `M` is centred with variance
/// `∫q'Σq`, so per path `M² + 2(S - S̄)M - ∫q'Σq` has mean (about) zero.
pub fn total_variance_gap(paths: &[TrajectoryStats]) -> (f64, f64) {
    let pnl: Vec<f64> = paths.iter().map(|p| p.pnl).collect();
    let spread: Vec<f64> = paths.iter().map(|p| p.spread_pnl).collect();
    let risk: Vec<f64> = paths.iter().map(|p| p.risk_integral).collect();
    let gap = stats::variance(&pnl) - stats::mean(&risk) - stats::variance(&spread);
    let s_bar = stats::mean(&spread);
    let g: Vec<f64> = paths
        .iter()
        .map(|p| p.market_pnl * p.market_pnl + 2.0 * (p.spread_pnl - s_bar) * p.market_pnl - p.risk_integral)
        .collect();
    (gap, stats::stderr_mean(&g))
}

/// Per-bucket data the engine needs.
#[derive(Debug, Clone, Copy)]
pub(crate) struct BucketInfo {
    pub asset: usize,
    pub side: Side,
    pub size: f64,
    pub prob: f64,
    pub intensity: LogisticIntensity,
}

/// Callbacks along one path. Intervals are reported before the event that ends them.
pub(crate) trait PathObserver {
    fn interval(&mut self, _dt: f64, _q: &[f64], _risk: f64) {}
    fn fill(&mut self, _bucket: &BucketInfo, _delta: f64) {}
    fn finish(&mut self, _q: &[f64], _risk: f64) {}
}

pub(crate) struct PathCounts {
    pub n_fills: Vec<u32>,
    pub rejected: u32,
    pub declined: u32,
    pub final_q: Vec<f64>,
}

/// The inventory/event process shared by the simulator and the residual estimator.
pub(crate) struct Engine<'a> {
    market: &'a MarketSpec,
    policy: &'a dyn QuotePolicy,
    info: Vec<BucketInfo>,
    clock: ClockMode,
    /// Thinning bound per bucket (rate of candidate arrivals).
    bounds: Vec<f64>,
}

impl<'a> Engine<'a> {
    pub fn new(market: &'a MarketSpec, policy: &'a dyn QuotePolicy, clock: Option<ClockMode>) -> Result<Self> {
        let buckets = policy.buckets();
        if buckets != market.buckets().as_slice() {
            return Err(invalid("policy", "policy buckets do not match the market"));
        }
        let clock = match clock {
            None if policy.is_time_dependent() => ClockMode::Thinning,
            None => ClockMode::Exact,
            Some(ClockMode::Exact) if policy.is_time_dependent() => {
                return Err(invalid("clock", "exact clocks need quotes that are constant between events"));
            }
            Some(c) => c,
        };
        let info: Vec<BucketInfo> = buckets
            .iter()
            .map(|b: &Bucket| BucketInfo {
                asset: b.asset,
                side: b.side,
                size: b.size,
                prob: b.prob,
                intensity: *market.assets[b.asset].intensity(b.side),
            })
            .collect();
        let bounds = info
            .iter()
            .map(|b| match clock {
                ClockMode::Exact | ClockMode::Thinning => b.intensity.intensity(-market.quote_floor) * b.prob,
                ClockMode::Audit => b.intensity.lambda_rfq * b.prob,
            })
            .collect();
        Ok(Self {
            market,
            policy,
            info,
            clock,
            bounds,
        })
    }

    pub fn n_buckets(&self) -> usize {
        self.info.len()
    }

    /// Run from `(t0, q0)` to the horizon.
    pub fn run(
        &self,
        t0: f64,
        q0: &[f64],
        rng: &mut StreamRng,
        obs: &mut impl PathObserver,
        mut log: Option<&mut Vec<Event>>,
    ) -> PathCounts {
        let market = self.market;
        let horizon = market.horizon;
        let nb = self.info.len();
        let mut q = q0.to_vec();
        let mut sigma_q = market.covariance().mul_vec(&q);
        let mut risk = dot(&q, &sigma_q);
        let mut counts = PathCounts {
            n_fills: vec![0; nb],
            rejected: 0,
            declined: 0,
            final_q: Vec::new(),
        };
        let mut quotes = vec![Quote::Price(0.0); nb];
        let mut rates = vec![0.0; nb];
        let mut t = t0;
        loop {
            if self.clock == ClockMode::Exact {
                self.policy.quote_all(t, &q, &mut quotes);
                for (j, b) in self.info.iter().enumerate() {
                    rates[j] = match quotes[j] {
                        Quote::Price(d) => b.intensity.intensity(d) * b.prob,
                        Quote::Refused(_) => 0.0,
                    };
                }
            } else {
                rates.copy_from_slice(&self.bounds);
            }
            let mut first = (f64::INFINITY, usize::MAX);
            for (j, &rate) in rates.iter().enumerate() {
                let u: f64 = rng.random();
                if rate > 0.0 {
                    let tau = -(-u).ln_1p() / rate;
                    if tau < first.0 {
                        first = (tau, j);
                    }
                }
            }
            let remaining = horizon - t;
            if !(first.0 < remaining) {
                obs.interval(remaining.max(0.0), &q, risk);
                break;
            }
            obs.interval(first.0, &q, risk);
            t += first.0;
            let j = first.1;
            let b = self.info[j];

            let (delta, accepted) = if self.clock == ClockMode::Exact {
                (quotes[j].price().expect("only quoted buckets have a clock"), true)
            } else {
                let quote = self.policy.quote_bucket(t, &q, j);
                let u: f64 = rng.random();
                match quote {
                    Quote::Refused(_) => {
                        counts.declined += 1;
                        push(&mut log, t, j, EventKind::NoQuote, f64::NAN);
                        continue;
                    }
                    Quote::Price(d) => (d, u * self.bounds[j] < b.intensity.intensity(d) * b.prob),
                }
            };
            if !accepted {
                counts.declined += 1;
                push(&mut log, t, j, EventKind::Declined, delta);
                continue;
            }
            let after = post_trade_risk(market, &sigma_q, risk, b.asset, b.side, b.size);
            if !within_limit(market, after) {
                counts.rejected += 1;
                push(&mut log, t, j, EventKind::RiskRejected, delta);
                continue;
            }
            let s = b.side.sign() * b.size;
            q[b.asset] += s;
            let column = market.covariance().row(b.asset);
            for (x, c) in sigma_q.iter_mut().zip(column) {
                *x += s * c;
            }
            risk = dot(&q, &sigma_q).max(0.0);
            counts.n_fills[j] += 1;
            obs.fill(&b, delta);
            push(&mut log, t, j, EventKind::Fill, delta);
        }
        obs.finish(&q, risk);
        counts.final_q = q;
        counts
    }
}

fn push(log: &mut Option<&mut Vec<Event>>, t: f64, bucket: usize, kind: EventKind, delta: f64) {
    if let Some(log) = log {
        log.push(Event {
            t,
            bucket: bucket as u32,
            kind,
            delta,
        });
    }
}

/// Accumulates PnL and penalties along a path.
struct Ledger<'a> {
    market: &'a MarketSpec,
    rng: StreamRng,
    /// Square-root factor of `Σ` (full price paths only).
    root: Option<&'a Matrix>,
    prices: Vec<f64>,
    cash: f64,
    normals: Vec<f64>,
    spread_pnl: f64,
    market_pnl: f64,
    risk_integral: f64,
    running_penalty: f64,
    terminal_penalty: f64,
}

impl PathObserver for Ledger<'_> {
    fn interval(&mut self, dt: f64, q: &[f64], risk: f64) {
        self.risk_integral += risk * dt;
        self.running_penalty += self.market.penalty.running(risk) * dt;
        match self.root {
            None => {
                let z: f64 = self.rng.sample(StandardNormal);
                self.market_pnl += (risk * dt).sqrt() * z;
            }
            Some(root) => {
                for x in self.normals.iter_mut() {
                    *x = self.rng.sample(StandardNormal);
                }
                let scale = dt.sqrt();
                let mut change = 0.0;
                for (i, s) in self.prices.iter_mut().enumerate() {
                    let ds = scale * dot(root.row(i), &self.normals);
                    *s += ds;
                    change += q[i] * ds;
                }
                self.market_pnl += change;
            }
        }
    }

    fn fill(&mut self, b: &BucketInfo, delta: f64) {
        self.spread_pnl += delta * b.size;
        if self.root.is_some() {
            // bid: buy z at S - δ; ask: sell z at S + δ
            let s = b.side.sign();
            self.cash -= s * b.size * (self.prices[b.asset] - s * delta);
        }
    }

    fn finish(&mut self, _q: &[f64], risk: f64) {
        self.terminal_penalty = self.market.penalty.terminal(risk);
    }
}

/// Square root of a PSD matrix via its eigenbasis, `ΩΛ^{1/2}`.
fn psd_root(sigma: &Matrix) -> Result<Matrix> {
    let e = eigendecompose(sigma)?;
    let d = sigma.rows();
    Ok(Matrix::from_fn(d, d, |i, j| e.eigenvectors[(i, j)] * e.eigenvalues[j].max(0.0).sqrt()))
}

/// Simulate `cfg.n_paths` paths from zero inventory at `t = 0`.
pub fn simulate(market: &MarketSpec, policy: &dyn QuotePolicy, cfg: &SimulationConfig) -> Result<SimulationOutput> {
    if cfg.n_paths == 0 {
        return Err(invalid("paths", "need at least one path"));
    }
    let engine = Engine::new(market, policy, cfg.clock)?;
    let d = market.dim();
    let zero = vec![0.0; d];

    let mut warnings = Vec::new();
    let mut first = vec![Quote::Price(0.0); engine.n_buckets()];
    policy.quote_all(0.0, &zero, &mut first);
    if first.iter().all(|q| q.is_refused()) {
        warnings.push(format!(
            "policy '{}' refuses every request at zero inventory; the run is degenerate",
            policy.kind().as_str()
        ));
    }

    let root = match cfg.prices {
        PriceMode::PortfolioIncrement => None,
        PriceMode::FullPaths => Some(psd_root(market.covariance())?),
    };
    let s0: Vec<f64> = market.assets.iter().map(|a| a.s0).collect();

    let paths: Vec<TrajectoryStats> = (0..cfg.n_paths)
        .into_par_iter()
        .map(|path| {
            let mut events_rng = rng::stream(cfg.seed, rng::EVENTS, path as u64);
            let mut ledger = Ledger {
                market,
                rng: rng::stream(cfg.seed, rng::MARKET, path as u64),
                root: root.as_ref(),
                prices: s0.clone(),
                cash: 0.0,
                normals: vec![0.0; d],
                spread_pnl: 0.0,
                market_pnl: 0.0,
                risk_integral: 0.0,
                running_penalty: 0.0,
                terminal_penalty: 0.0,
            };
            let mut log = cfg.keep_events.then(Vec::new);
            let counts = engine.run(0.0, &zero, &mut events_rng, &mut ledger, log.as_mut());
            let pnl = match ledger.root {
                None => ledger.spread_pnl + ledger.market_pnl,
                Some(_) => ledger.cash + dot(&counts.final_q, &ledger.prices),
            };
            TrajectoryStats {
                path,
                pnl,
                spread_pnl: ledger.spread_pnl,
                market_pnl: ledger.market_pnl,
                risk_integral: ledger.risk_integral,
                running_penalty: ledger.running_penalty,
                terminal_penalty: ledger.terminal_penalty,
                n_fills: counts.n_fills,
                rejected_fills: counts.rejected,
                declined: counts.declined,
                final_inventory: counts.final_q,
                events: log,
            }
        })
        .collect();
    if paths.iter().any(|p| !p.pnl.is_finite()) {
        return Err(Error::NonFinite { slice: 0 });
    }
    Ok(SimulationOutput {
        summary: SimulationSummary::from_paths(&paths, cfg.seed),
        paths,
        warnings,
    })
}

/// Piecewise-constant inventory path rebuilt from an event log:
/// `(start time, inventory)` pieces, the last one running to the horizon.
pub fn inventory_path(market: &MarketSpec, events: &[Event]) -> Vec<(f64, Vec<f64>)> {
    let buckets = market.buckets();
    let mut q = vec![0.0; market.dim()];
    let mut pieces = vec![(0.0, q.clone())];
    for e in events.iter().filter(|e| e.kind == EventKind::Fill) {
        let b = &buckets[e.bucket as usize];
        q[b.asset] += b.side.sign() * b.size;
        pieces.push((e.t, q.clone()));
    }
    pieces
}

/// Time-weighted mean over paths and time of `g(q_t)`.
pub fn time_weighted_mean(market: &MarketSpec, logs: &[&[Event]], g: impl Fn(&[f64]) -> f64) -> f64 {
    let horizon = market.horizon;
    let per_path: Vec<f64> = logs
        .iter()
        .map(|events| {
            let pieces = inventory_path(market, events);
            let mut acc = 0.0;
            for (k, (start, q)) in pieces.iter().enumerate() {
                let end = pieces.get(k + 1).map_or(horizon, |p| p.0);
                acc += g(q) * (end - start);
            }
            acc / horizon
        })
        .collect();
    stats::mean(&per_path)
}

/// Rectangular binning for [`inventory_histogram`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HistogramSpec {
    /// `(low, high, bins)` per axis.
    pub axes: Vec<(f64, f64, usize)>,
    /// Optional `d × m` matrix; the binned coordinates are `P'q`.
    pub projection: Option<Matrix>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InventoryHistogram {
    pub spec: HistogramSpec,
    /// Row-major over the axes, last axis fastest; time in days summed over paths.
    pub occupancy: Vec<f64>,
    /// Time spent outside the binned box.
    pub outside: f64,
}

impl InventoryHistogram {
    pub fn total(&self) -> f64 {
        stats::pairwise_sum(&self.occupancy) + self.outside
    }
}

/// Time-weighted inventory occupancy of the logged paths.
pub fn inventory_histogram(market: &MarketSpec, logs: &[&[Event]], spec: &HistogramSpec) -> Result<InventoryHistogram> {
    let m = spec.axes.len();
    let expected = spec.projection.as_ref().map_or(market.dim(), |p| p.cols());
    if m == 0 || m != expected {
        return Err(Error::Dimension(format!("histogram has {m} axes for {expected} coordinates")));
    }
    if let Some(p) = &spec.projection {
        if p.rows() != market.dim() {
            return Err(Error::Dimension("projection rows must match the number of assets".into()));
        }
    }
    if spec.axes.iter().any(|&(lo, hi, n)| !(hi > lo) || n == 0) {
        return Err(invalid("histogram", "each axis needs low < high and at least one bin"));
    }
    let len: usize = spec.axes.iter().map(|a| a.2).product();
    let mut occupancy = vec![0.0; len];
    let mut outside = 0.0;
    for events in logs {
        let pieces = inventory_path(market, events);
        for (k, (start, q)) in pieces.iter().enumerate() {
            let end = pieces.get(k + 1).map_or(market.horizon, |p| p.0);
            let x = match &spec.projection {
                None => q.clone(),
                Some(p) => p.transpose().mul_vec(q),
            };
            let mut idx = 0;
            let mut inside = true;
            for (xj, &(lo, hi, n)) in x.iter().zip(&spec.axes) {
                let pos = (xj - lo) / (hi - lo) * n as f64;
                if !(pos >= 0.0 && pos < n as f64) {
                    inside = false;
                    break;
                }
                idx = idx * n + pos as usize;
            }
            if inside {
                occupancy[idx] += end - start;
            } else {
                outside += end - start;
            }
        }
    }
    Ok(InventoryHistogram {
        spec: spec.clone(),
        occupancy,
        outside,
    })
}
