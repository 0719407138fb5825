//! TOML run configuration.
//!
//! Time is in days and money in currency units throughout; keys that carry a
//! time dimension say so in their name. Unknown keys are rejected so a typo
//! cannot silently fall back to a default.
//!
//! ```toml
//! seed = 1
//!
//! [market]
//! horizon_days = 12.0
//! quote_floor = 1.0        # δ∞, currency per unit
//! risk_limit = 2.4e10      # B on q'Σq, currency² per day
//!
//! [penalty]
//! running = { form = "quadratic", coef = 8e-7 }   # ψ = coef/2 · q'Σq, coef in 1/currency
//!
//! [correlation]
//! matrix = [[1.0, 0.9], [0.9, 1.0]]
//!
//! [[assets]]
//! s0 = 100.0               # currency
//! sigma = 1.2              # currency per sqrt(day)
//! intensity = { lambda_per_day = 30.0, alpha = 0.7, beta = 30.0 }   # beta in 1/currency
//! sizes = { atoms = [[6250.0, 0.53], [12500.0, 0.35], [18750.0, 0.10], [25000.0, 0.02]] }
//! ```

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::factor::{build_factor_model, eigendecompose, FactorModel};
use crate::linalg::Matrix;
use crate::model::{
    discretize_gamma, AssetSpec, DiscretizationRule, GammaSpec, LogisticIntensity, MarketSpec, PenaltyForm,
    RiskPenalty, Side, SizeAtom, SizeDistribution,
};
use crate::simulator::{ClockMode, PriceMode, SimulationConfig};
use crate::solver::{SolverConfig, StorePolicy};

fn default_seed() -> u64 {
    1
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    #[serde(default = "default_seed")]
    pub seed: u64,
    pub market: MarketSection,
    #[serde(default)]
    pub penalty: PenaltySection,
    pub correlation: CorrelationSection,
    pub assets: Vec<AssetSection>,
    #[serde(default)]
    pub solver: SolverSection,
    #[serde(default)]
    pub simulation: SimulationSection,
    #[serde(default)]
    pub quotes: QuotesSection,
    #[serde(default)]
    pub adjust: AdjustSection,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MarketSection {
    pub horizon_days: f64,
    /// δ∞, currency per unit.
    pub quote_floor: f64,
    /// Bound on `q'Σq`.
    pub risk_limit: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PenaltySection {
    pub running: PenaltyForm,
    #[serde(default = "zero_penalty")]
    pub terminal: PenaltyForm,
}

fn zero_penalty() -> PenaltyForm {
    PenaltyForm::Zero
}

impl Default for PenaltySection {
    fn default() -> Self {
        Self {
            running: PenaltyForm::Zero,
            terminal: PenaltyForm::Zero,
        }
    }
}

/// Either a full matrix, or equicorrelated blocks of consecutive assets.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CorrelationSection {
    pub matrix: Option<Vec<Vec<f64>>>,
    /// Sizes of consecutive blocks.
    pub blocks: Option<Vec<usize>>,
    /// Correlation inside each block.
    pub within: Option<Vec<f64>>,
    /// Correlation between blocks.
    pub across: Option<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct IntensitySection {
    pub lambda_per_day: f64,
    pub alpha: f64,
    /// 1/currency.
    pub beta: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GammaSection {
    pub shape: f64,
    /// 1/units.
    pub rate: f64,
    pub n_atoms: usize,
    /// Largest atom at `mean + z_max_sigmas · stdev`.
    pub z_max_sigmas: f64,
    #[serde(default)]
    pub rule: DiscretizationRule,
    pub round_to: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SizesSection {
    /// `[size in units, probability]` pairs.
    pub atoms: Option<Vec<[f64; 2]>>,
    pub gamma: Option<GammaSection>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AssetSection {
    pub name: Option<String>,
    /// Replicate this entry `count` times (consecutive assets).
    #[serde(default = "one")]
    pub count: usize,
    /// Currency.
    pub s0: f64,
    /// Currency per sqrt(day).
    pub sigma: f64,
    /// Both sides, unless overridden below.
    pub intensity: Option<IntensitySection>,
    pub bid_intensity: Option<IntensitySection>,
    pub ask_intensity: Option<IntensitySection>,
    pub sizes: Option<SizesSection>,
    pub bid_sizes: Option<SizesSection>,
    pub ask_sizes: Option<SizesSection>,
}

fn one() -> usize {
    1
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SolverSection {
    /// Number of factors; absent means inventory coordinates (`β = I`).
    pub factors: Option<usize>,
    /// Nodes per axis (odd). Default 71.
    pub grid: Option<Vec<usize>>,
    pub dt_days: Option<f64>,
    #[serde(default)]
    pub store: StorePolicy,
}

/// Which quotes the `simulate` subcommand evaluates.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PolicyChoice {
    /// Quotes from the cached value surface.
    #[default]
    Surface,
    Myopic,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SimulationSection {
    #[serde(default = "default_paths")]
    pub paths: usize,
    #[serde(default)]
    pub policy: PolicyChoice,
    pub clock: Option<ClockMode>,
    #[serde(default)]
    pub prices: PriceMode,
    /// Write per-path event logs (at most this many paths).
    #[serde(default)]
    pub event_log_paths: usize,
    /// Bins per axis of the inventory occupancy histogram over the first
    /// (up to two) assets; 0 disables it.
    #[serde(default)]
    pub histogram_bins: usize,
}

fn default_paths() -> usize {
    2000
}

impl Default for SimulationSection {
    fn default() -> Self {
        Self {
            paths: default_paths(),
            policy: PolicyChoice::default(),
            clock: None,
            prices: PriceMode::default(),
            event_log_paths: 0,
            histogram_bins: 0,
        }
    }
}

/// Quote curves: each asset's inventory swept across its admissible range,
/// every other inventory at zero.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct QuotesSection {
    #[serde(default)]
    pub t_days: f64,
    /// Inventory points per sweep (odd keeps zero on the sweep).
    #[serde(default = "default_points")]
    pub points: usize,
    /// Request sizes in units; defaults to each side's size atoms.
    pub sizes: Option<Vec<f64>>,
}

fn default_points() -> usize {
    21
}

impl Default for QuotesSection {
    fn default() -> Self {
        Self {
            t_days: 0.0,
            points: default_points(),
            sizes: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RequestSection {
    /// Zero-based asset index.
    pub asset: usize,
    pub side: Side,
    /// Units.
    pub size: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AdjustSection {
    #[serde(default = "default_adjust_paths")]
    pub paths: usize,
    #[serde(default)]
    pub t_days: f64,
    /// Defaults to zero inventory.
    pub inventory: Option<Vec<f64>>,
    #[serde(default)]
    pub requests: Vec<RequestSection>,
    #[serde(default = "yes")]
    pub common_random_numbers: bool,
}

fn default_adjust_paths() -> usize {
    500
}

fn yes() -> bool {
    true
}

impl Default for AdjustSection {
    fn default() -> Self {
        Self {
            paths: default_adjust_paths(),
            t_days: 0.0,
            inventory: None,
            requests: Vec::new(),
            common_random_numbers: true,
        }
    }
}

fn config_err(msg: impl Into<String>) -> Error {
    Error::Config(msg.into())
}

impl RunConfig {
    pub fn from_toml_str(text: &str) -> Result<Self> {
        toml::from_str(text).map_err(|e| config_err(e.to_string()))
    }

    pub fn from_path(path: &std::path::Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| config_err(format!("cannot read {}: {e}", path.display())))?;
        Self::from_toml_str(&text)
    }

    /// SHA-256 of the canonical JSON form, lowercase hex.
    pub fn hash(&self) -> String {
        let canonical = serde_json::to_vec(self).expect("config serialises");
        hex(&Sha256::digest(&canonical))
    }

    /// Hash of the sections a value surface depends on; a cached surface is
    /// reused only when this matches.
    pub fn surface_key(&self) -> String {
        #[derive(Serialize)]
        struct Key<'a> {
            market: &'a MarketSection,
            penalty: &'a PenaltySection,
            correlation: &'a CorrelationSection,
            assets: &'a [AssetSection],
            solver: &'a SolverSection,
        }
        let key = Key {
            market: &self.market,
            penalty: &self.penalty,
            correlation: &self.correlation,
            assets: &self.assets,
            solver: &self.solver,
        };
        hex(&Sha256::digest(serde_json::to_vec(&key).expect("config serialises")))
    }

    /// Range checks on quantities whose unit is fixed by the schema.
    pub fn check_units(&self) -> Result<()> {
        let horizon = self.market.horizon_days;
        let positive = |v: f64, what: &str| -> Result<()> {
            if v > 0.0 && v.is_finite() {
                Ok(())
            } else {
                Err(config_err(format!("{what} = {v} must be a positive, finite number")))
            }
        };
        positive(horizon, "market.horizon_days (days)")?;
        positive(self.market.risk_limit, "market.risk_limit (currency² per day)")?;
        if !(self.market.quote_floor >= 0.0 && self.market.quote_floor.is_finite()) {
            return Err(config_err(format!(
                "market.quote_floor = {} must be >= 0 (currency per unit)",
                self.market.quote_floor
            )));
        }
        if let Some(dt) = self.solver.dt_days {
            positive(dt, "solver.dt_days (days)")?;
            if dt > horizon {
                return Err(config_err(format!(
                    "solver.dt_days = {dt} exceeds market.horizon_days = {horizon}; both are in days"
                )));
            }
        }
        for (name, t) in [("quotes.t_days", self.quotes.t_days), ("adjust.t_days", self.adjust.t_days)] {
            if !(t >= 0.0 && t < horizon) {
                return Err(config_err(format!("{name} = {t} must lie in [0, horizon_days = {horizon}) days")));
            }
        }
        for (k, a) in self.assets.iter().enumerate() {
            positive(a.s0, &format!("assets[{k}].s0 (currency)"))?;
            positive(a.sigma, &format!("assets[{k}].sigma (currency per sqrt(day))"))?;
            for it in [a.intensity, a.bid_intensity, a.ask_intensity].into_iter().flatten() {
                if !(it.lambda_per_day >= 0.0 && it.lambda_per_day.is_finite()) {
                    return Err(config_err(format!(
                        "assets[{k}] lambda_per_day = {} must be >= 0 (requests per day)",
                        it.lambda_per_day
                    )));
                }
                positive(it.beta, &format!("assets[{k}] intensity beta (1/currency)"))?;
            }
        }
        if let Some(sizes) = &self.quotes.sizes {
            for &z in sizes {
                positive(z, "quotes.sizes (units)")?;
            }
        }
        for (j, r) in self.adjust.requests.iter().enumerate() {
            positive(r.size, &format!("adjust.requests[{j}].size (units)"))?;
            if r.asset >= self.n_assets() {
                return Err(config_err(format!(
                    "adjust.requests[{j}].asset = {} but there are {} assets (indices start at 0)",
                    r.asset,
                    self.n_assets()
                )));
            }
        }
        if let Some(q) = &self.adjust.inventory {
            if q.len() != self.n_assets() {
                return Err(config_err(format!(
                    "adjust.inventory has {} entries for {} assets",
                    q.len(),
                    self.n_assets()
                )));
            }
        }
        Ok(())
    }

    pub fn n_assets(&self) -> usize {
        self.assets.iter().map(|a| a.count).sum()
    }

    pub fn market(&self) -> Result<MarketSpec> {
        self.check_units()?;
        let mut assets = Vec::new();
        for (k, a) in self.assets.iter().enumerate() {
            if a.count == 0 {
                return Err(config_err(format!("assets[{k}].count must be >= 1")));
            }
            let spec = asset_spec(k, a)?;
            assets.extend(std::iter::repeat_n(spec, a.count));
        }
        let correlation = self.correlation_matrix(assets.len())?;
        let penalty = RiskPenalty::new(self.penalty.running, self.penalty.terminal)?;
        MarketSpec::new(
            assets,
            correlation,
            self.market.horizon_days,
            self.market.quote_floor,
            self.market.risk_limit,
            penalty,
        )
    }

    fn correlation_matrix(&self, d: usize) -> Result<Matrix> {
        let c = &self.correlation;
        match (&c.matrix, &c.blocks) {
            (Some(rows), None) => {
                if c.within.is_some() || c.across.is_some() {
                    return Err(config_err("correlation: `matrix` excludes `within`/`across`"));
                }
                let m = Matrix::from_rows(rows)?;
                if m.rows() != d || m.cols() != d {
                    return Err(config_err(format!(
                        "correlation matrix is {}x{} but there are {d} assets",
                        m.rows(),
                        m.cols()
                    )));
                }
                Ok(m)
            }
            (None, Some(blocks)) => {
                let within = c
                    .within
                    .as_ref()
                    .ok_or_else(|| config_err("correlation: block form needs `within`"))?;
                if within.len() != blocks.len() {
                    return Err(config_err("correlation: `within` needs one value per block"));
                }
                if blocks.iter().sum::<usize>() != d {
                    return Err(config_err(format!("correlation blocks cover {} assets, expected {d}", blocks.iter().sum::<usize>())));
                }
                let across = c.across.unwrap_or(0.0);
                let block_of: Vec<usize> = blocks
                    .iter()
                    .enumerate()
                    .flat_map(|(b, &n)| std::iter::repeat_n(b, n))
                    .collect();
                Ok(Matrix::from_fn(d, d, |i, j| {
                    if i == j {
                        1.0
                    } else if block_of[i] == block_of[j] {
                        within[block_of[i]]
                    } else {
                        across
                    }
                }))
            }
            _ => Err(config_err("correlation: give exactly one of `matrix` or `blocks`")),
        }
    }

    /// Factor model for `factors` (`None`: inventory coordinates).
    pub fn factor_model(market: &MarketSpec, factors: Option<usize>) -> Result<FactorModel> {
        match factors {
            None => Ok(FactorModel::identity(market.covariance())),
            Some(k) => build_factor_model(&eigendecompose(market.covariance())?, k),
        }
    }

    /// Grid nodes per axis for `dims` dimensions.
    pub fn grid_nodes(&self, dims: usize) -> Result<Vec<usize>> {
        match &self.solver.grid {
            None => Ok(vec![71; dims]),
            Some(g) if g.len() == 1 => Ok(vec![g[0]; dims]),
            Some(g) if g.len() == dims => Ok(g.clone()),
            Some(g) => Err(config_err(format!("solver.grid has {} entries for {dims} dimensions", g.len()))),
        }
    }

    pub fn solver_config(&self) -> SolverConfig {
        SolverConfig {
            dt: self.solver.dt_days,
            store: self.solver.store.clone(),
            ..SolverConfig::default()
        }
    }

    pub fn simulation_config(&self) -> SimulationConfig {
        SimulationConfig {
            n_paths: self.simulation.paths,
            seed: self.seed,
            clock: self.simulation.clock,
            prices: self.simulation.prices,
            keep_events: self.simulation.event_log_paths > 0,
        }
    }
}

fn asset_spec(k: usize, a: &AssetSection) -> Result<AssetSpec> {
    let side_intensity = |own: &Option<IntensitySection>, side: &str| -> Result<LogisticIntensity> {
        let s = own
            .or(a.intensity)
            .ok_or_else(|| config_err(format!("assets[{k}]: no {side} intensity (set `intensity` or `{side}_intensity`)")))?;
        LogisticIntensity::new(s.lambda_per_day, s.alpha, s.beta)
    };
    let side_sizes = |own: &Option<SizesSection>, side: &str| -> Result<SizeDistribution> {
        let s = own
            .as_ref()
            .or(a.sizes.as_ref())
            .ok_or_else(|| config_err(format!("assets[{k}]: no {side} sizes (set `sizes` or `{side}_sizes`)")))?;
        sizes(k, s)
    };
    Ok(AssetSpec {
        s0: a.s0,
        sigma: a.sigma,
        bid_intensity: side_intensity(&a.bid_intensity, "bid")?,
        ask_intensity: side_intensity(&a.ask_intensity, "ask")?,
        bid_sizes: side_sizes(&a.bid_sizes, "bid")?,
        ask_sizes: side_sizes(&a.ask_sizes, "ask")?,
    })
}

fn sizes(k: usize, s: &SizesSection) -> Result<SizeDistribution> {
    match (&s.atoms, &s.gamma) {
        (Some(atoms), None) => SizeDistribution::new(atoms.iter().map(|&[size, prob]| SizeAtom { size, prob }).collect()),
        (None, Some(g)) => discretize_gamma(&GammaSpec::new(g.shape, g.rate)?, g.n_atoms, g.z_max_sigmas, g.rule, g.round_to),
        _ => Err(config_err(format!("assets[{k}].sizes: give exactly one of `atoms` or `gamma`"))),
    }
}

pub fn hex(bytes: &[u8]) -> String {
    bytes.iter().map(|b| format!("{b:02x}")).collect()
}
