//! Quotes from a value surface, plus the policy interface the simulator drives.
//!
//! A request for `z` units of asset `i` on the bid at inventory `q` is priced
//! off the value lost by moving to `q + z e^i`:
//! `p = (θ̃(t, β'q) - θ̃(t, β'q + z β'e^i)) / z`, `δ = δ*(p)`. When the
//! post-trade inventory leaves the domain the request gets no quote.

use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::hamiltonian::HamiltonianOps;
use crate::linalg::dot;
use crate::model::{Bucket, MarketSpec, Side};
use crate::solver::ValueSurface;

/// Relative slack on the risk limit check, for inventories on the boundary.
pub const RISK_LIMIT_SLACK: f64 = 1e-12;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Refusal {
    /// Post-trade factor exposure falls outside the solved grid.
    OutsideGrid,
    /// Post-trade `q'Σq` would exceed the risk limit.
    RiskLimit,
}

impl Refusal {
    pub fn as_str(self) -> &'static str {
        match self {
            Refusal::OutsideGrid => "outside_grid",
            Refusal::RiskLimit => "risk_limit",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Quote {
    /// Distance to the reference price, in price units.
    Price(f64),
    Refused(Refusal),
}

impl Quote {
    pub fn price(self) -> Option<f64> {
        match self {
            Quote::Price(d) => Some(d),
            Quote::Refused(_) => None,
        }
    }

    pub fn is_refused(self) -> bool {
        matches!(self, Quote::Refused(_))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PolicyKind {
    Surface,
    Myopic,
    SurfaceMcAdjusted,
}

impl PolicyKind {
    pub fn as_str(self) -> &'static str {
        match self {
            PolicyKind::Surface => "surface",
            PolicyKind::Myopic => "myopic",
            PolicyKind::SurfaceMcAdjusted => "surface_mc_adjusted",
        }
    }
}

/// Quoting rule: answer for every bucket of the market at `(t, q)`.
pub trait QuotePolicy: Send + Sync {
    fn kind(&self) -> PolicyKind;

    /// Buckets in the order the simulator enumerates them.
    fn buckets(&self) -> &[Bucket];

    /// Whether quotes depend on `t` at fixed `q`.
    fn is_time_dependent(&self) -> bool {
        false
    }

    fn quote_bucket(&self, t: f64, q: &[f64], bucket: usize) -> Quote;

    fn quote_all(&self, t: f64, q: &[f64], out: &mut [Quote]) {
        for (j, slot) in out.iter_mut().enumerate() {
            *slot = self.quote_bucket(t, q, j);
        }
    }
}

/// `q'Σq` after trading `size` on `side` of `asset`, from `Σq` and `q'Σq`.
#[inline]
pub(crate) fn post_trade_risk(market: &MarketSpec, sigma_q: &[f64], risk: f64, asset: usize, side: Side, size: f64) -> f64 {
    let s = side.sign() * size;
    risk + 2.0 * s * sigma_q[asset] + s * s * market.covariance()[(asset, asset)]
}

#[inline]
pub(crate) fn within_limit(market: &MarketSpec, risk: f64) -> bool {
    risk <= market.risk_limit * (1.0 + RISK_LIMIT_SLACK)
}

/// Marginal cost `p = (θ̃(t, f) - θ̃(t, f ± z ẽ^i)) / z` of one request, or
/// the reason no quote is given.
///
/// Errors if `q` itself lies outside the solved domain.
pub fn marginal_cost(
    surface: &ValueSurface,
    t: f64,
    q: &[f64],
    asset: usize,
    side: Side,
    size: f64,
) -> Result<std::result::Result<f64, Refusal>> {
    let market = &surface.market;
    if q.len() != market.dim() {
        return Err(Error::Dimension(format!("inventory has {} entries, market has {} assets", q.len(), market.dim())));
    }
    if asset >= market.dim() {
        return Err(Error::Dimension(format!("asset {asset} out of range")));
    }
    if !(size > 0.0 && size.is_finite()) {
        return Err(crate::error::invalid("size", "must be > 0"));
    }
    let fm = &surface.factor_model;
    let f = fm.project(q);
    let here = surface.evaluate(t, &f)?;

    let sigma_q = market.covariance().mul_vec(q);
    let risk = dot(q, &sigma_q);
    if !within_limit(market, post_trade_risk(market, &sigma_q, risk, asset, side, size)) {
        return Ok(Err(Refusal::RiskLimit));
    }
    let shifted: Vec<f64> = f
        .iter()
        .zip(fm.projected_direction(asset))
        .map(|(x, e)| x + side.sign() * size * e)
        .collect();
    Ok(match surface.grid.interpolate(surface.quoting_slice(t), &shifted) {
        Some(there) => Ok((here - there) / size),
        None => Err(Refusal::OutsideGrid),
    })
}

/// Quote for one request of `size` units on `side` of `asset` at `(t, q)`.
///
/// Errors if `q` itself lies outside the solved domain.
pub fn optimal_quote(surface: &ValueSurface, t: f64, q: &[f64], asset: usize, side: Side, size: f64) -> Result<Quote> {
    let market = &surface.market;
    Ok(match marginal_cost(surface, t, q, asset, side, size)? {
        Ok(p) => Quote::Price(HamiltonianOps::new(*market.assets[asset].intensity(side), market.quote_floor).delta_star(p)),
        Err(r) => Quote::Refused(r),
    })
}

/// Constant quote `δ*(0)` of every bucket: the value of inventory is ignored.
#[derive(Debug, Clone)]
pub struct MyopicPolicy {
    buckets: Vec<Bucket>,
    quotes: Vec<f64>,
}

impl MyopicPolicy {
    pub fn new(market: &MarketSpec) -> Self {
        let buckets = market.buckets();
        let quotes = buckets
            .iter()
            .map(|b| myopic_quote(market, b.asset, b.side))
            .collect();
        Self { buckets, quotes }
    }
}

pub fn myopic_quote(market: &MarketSpec, asset: usize, side: Side) -> f64 {
    HamiltonianOps::new(*market.assets[asset].intensity(side), market.quote_floor).delta_star(0.0)
}

impl QuotePolicy for MyopicPolicy {
    fn kind(&self) -> PolicyKind {
        PolicyKind::Myopic
    }

    fn buckets(&self) -> &[Bucket] {
        &self.buckets
    }

    fn quote_bucket(&self, _t: f64, _q: &[f64], bucket: usize) -> Quote {
        Quote::Price(self.quotes[bucket])
    }

    fn quote_all(&self, _t: f64, _q: &[f64], out: &mut [Quote]) {
        for (slot, d) in out.iter_mut().zip(&self.quotes) {
            *slot = Quote::Price(*d);
        }
    }
}

#[derive(Debug, Clone)]
struct QuoteGroup {
    ops: HamiltonianOps,
    size: f64,
    shift: Vec<f64>,
}

/// Quotes read off a solved surface. Buckets that share intensity, size and
/// factor shift (e.g. identical assets in the same factor) share one solve.
#[derive(Debug, Clone)]
pub struct SurfacePolicy {
    surface: Arc<ValueSurface>,
    buckets: Vec<Bucket>,
    groups: Vec<QuoteGroup>,
    group_of: Vec<usize>,
}

impl SurfacePolicy {
    pub fn new(surface: Arc<ValueSurface>) -> Self {
        let market = &surface.market;
        let fm = &surface.factor_model;
        let buckets = market.buckets();
        let mut groups: Vec<QuoteGroup> = Vec::new();
        let mut group_of = Vec::with_capacity(buckets.len());
        for b in &buckets {
            let ops = HamiltonianOps::new(*market.assets[b.asset].intensity(b.side), market.quote_floor);
            let shift: Vec<f64> = fm
                .projected_direction(b.asset)
                .iter()
                .map(|e| b.side.sign() * b.size * e)
                .collect();
            let g = match groups.iter().position(|g| g.ops == ops && g.size == b.size && g.shift == shift) {
                Some(g) => g,
                None => {
                    groups.push(QuoteGroup { ops, size: b.size, shift });
                    groups.len() - 1
                }
            };
            group_of.push(g);
        }
        Self {
            surface,
            buckets,
            groups,
            group_of,
        }
    }

    pub fn surface(&self) -> &ValueSurface {
        &self.surface
    }

    fn group_quote(&self, slice: &[f64], f: &[f64], here: f64, g: &QuoteGroup) -> Quote {
        let shifted: Vec<f64> = f.iter().zip(&g.shift).map(|(x, s)| x + s).collect();
        match self.surface.grid.interpolate(slice, &shifted) {
            Some(there) => Quote::Price(g.ops.delta_star((here - there) / g.size)),
            None => Quote::Refused(Refusal::OutsideGrid),
        }
    }
}

impl QuotePolicy for SurfacePolicy {
    fn kind(&self) -> PolicyKind {
        PolicyKind::Surface
    }

    fn buckets(&self) -> &[Bucket] {
        &self.buckets
    }

    fn is_time_dependent(&self) -> bool {
        self.surface.is_time_dependent()
    }

    fn quote_bucket(&self, t: f64, q: &[f64], bucket: usize) -> Quote {
        let b = &self.buckets[bucket];
        optimal_quote(&self.surface, t, q, b.asset, b.side, b.size).unwrap_or(Quote::Refused(Refusal::OutsideGrid))
    }

    fn quote_all(&self, t: f64, q: &[f64], out: &mut [Quote]) {
        let market = &self.surface.market;
        let slice = self.surface.quoting_slice(t);
        let f = self.surface.factor_model.project(q);
        let Some(here) = self.surface.grid.interpolate(slice, &f) else {
            out.fill(Quote::Refused(Refusal::OutsideGrid));
            return;
        };
        let sigma_q = market.covariance().mul_vec(q);
        let risk = dot(q, &sigma_q);
        let mut cache: Vec<Option<Quote>> = vec![None; self.groups.len()];
        for (j, b) in self.buckets.iter().enumerate() {
            if !within_limit(market, post_trade_risk(market, &sigma_q, risk, b.asset, b.side, b.size)) {
                out[j] = Quote::Refused(Refusal::RiskLimit);
                continue;
            }
            let g = self.group_of[j];
            out[j] = *cache[g].get_or_insert_with(|| self.group_quote(slice, &f, here, &self.groups[g]));
        }
    }
}

/// One line of a quote table.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QuoteRow {
    pub inventory: Vec<f64>,
    pub asset: usize,
    pub side: Side,
    pub size: f64,
    pub quote: Quote,
}

/// Quotes for every inventory × asset × side × size, in that nesting order.
pub fn quote_table(surface: &ValueSurface, t: f64, inventories: &[Vec<f64>], sizes: &[f64]) -> Result<Vec<QuoteRow>> {
    let d = surface.market.dim();
    let mut rows = Vec::with_capacity(inventories.len() * d * 2 * sizes.len());
    for q in inventories {
        for asset in 0..d {
            for side in Side::BOTH {
                for &size in sizes {
                    rows.push(QuoteRow {
                        inventory: q.clone(),
                        asset,
                        side,
                        size,
                        quote: optimal_quote(surface, t, q, asset, side, size)?,
                    });
                }
            }
        }
    }
    Ok(rows)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::factor::FactorModel;
    use crate::linalg::Matrix;
    use crate::model::{AssetSpec, LogisticIntensity, RiskPenalty, SizeDistribution};
    use crate::solver::{grid_for, solve, SolverConfig};

    fn small_surface() -> ValueSurface {
        let it = LogisticIntensity::new(30.0, 0.7, 30.0).unwrap();
        let sizes = SizeDistribution::from_pairs(&[(6250.0, 0.6), (12500.0, 0.4)]).unwrap();
        let assets = vec![
            AssetSpec::symmetric(100.0, 1.2, it, sizes.clone()),
            AssetSpec::symmetric(100.0, 0.6, it, sizes),
        ];
        let rho = Matrix::from_rows(&[vec![1.0, 0.9], vec![0.9, 1.0]]).unwrap();
        let m = MarketSpec::new(assets, rho, 0.5, 1.0, 2.4e10, RiskPenalty::quadratic(8e-7)).unwrap();
        let fm = FactorModel::identity(m.covariance());
        let grid = grid_for(&m, &fm, &[31, 31]).unwrap();
        solve(&m, &fm, &grid, &SolverConfig::default()).unwrap()
    }

    #[test]
    fn myopic_policy_is_constant() {
        let s = small_surface();
        let p = MyopicPolicy::new(&s.market);
        let mut out = vec![Quote::Price(0.0); p.buckets().len()];
        p.quote_all(0.0, &[1e5, -3e4], &mut out);
        for q in out {
            assert!((q.price().unwrap() - 0.03854).abs() < 1e-5);
        }
    }

    #[test]
    fn long_inventory_skews_bid_up_and_ask_down() {
        let s = small_surface();
        let flat = optimal_quote(&s, 0.0, &[0.0, 0.0], 0, Side::Bid, 6250.0).unwrap().price().unwrap();
        let bid = optimal_quote(&s, 0.0, &[50000.0, 0.0], 0, Side::Bid, 6250.0).unwrap().price().unwrap();
        let ask = optimal_quote(&s, 0.0, &[50000.0, 0.0], 0, Side::Ask, 6250.0).unwrap().price().unwrap();
        assert!(bid > flat && ask < flat, "{bid} {flat} {ask}");
    }

    #[test]
    fn surface_policy_matches_pointwise_quotes() {
        let s = Arc::new(small_surface());
        let p = SurfacePolicy::new(s.clone());
        let q = [37000.0, -12000.0];
        let mut out = vec![Quote::Price(0.0); p.buckets().len()];
        p.quote_all(0.0, &q, &mut out);
        for (j, b) in p.buckets().iter().enumerate() {
            let direct = optimal_quote(&s, 0.0, &q, b.asset, b.side, b.size).unwrap();
            assert_eq!(out[j], direct);
            assert_eq!(p.quote_bucket(0.0, &q, j), direct);
        }
    }

    #[test]
    fn refuses_trades_past_the_risk_limit() {
        let s = small_surface();
        // on the boundary along asset 1: one more unit long is refused, selling is fine
        let q1 = (s.market.risk_limit / s.market.covariance()[(0, 0)]).sqrt();
        let q = [q1 - 1.0, 0.0];
        assert_eq!(
            optimal_quote(&s, 0.0, &q, 0, Side::Bid, 6250.0).unwrap(),
            Quote::Refused(Refusal::RiskLimit)
        );
        assert!(optimal_quote(&s, 0.0, &q, 0, Side::Ask, 6250.0).unwrap().price().is_some());
    }

    #[test]
    fn out_of_domain_inventory_is_an_error() {
        let s = small_surface();
        assert!(matches!(
            optimal_quote(&s, 0.0, &[1e9, 0.0], 0, Side::Bid, 6250.0),
            Err(Error::OutOfDomain { .. })
        ));
    }

    #[test]
    fn table_order_is_inventory_asset_side_size() {
        let s = small_surface();
        let rows = quote_table(&s, 0.0, &[vec![0.0, 0.0], vec![1e4, 0.0]], &[6250.0, 12500.0]).unwrap();
        assert_eq!(rows.len(), 2 * 2 * 2 * 2);
        assert_eq!((rows[0].asset, rows[0].side, rows[0].size), (0, Side::Bid, 6250.0));
        assert_eq!((rows[1].asset, rows[1].side, rows[1].size), (0, Side::Bid, 12500.0));
        assert_eq!(rows[2].side, Side::Ask);
        assert_eq!(rows[4].asset, 1);
        assert_eq!(rows[8].inventory, vec![1e4, 0.0]);
    }
}
