//! Problem primitives: intensities, size laws, penalties and the market.

use serde::{Deserialize, Serialize};
use statrs::distribution::{Continuous, ContinuousCDF, Gamma};

use crate::error::{invalid, Error, Result};
use crate::factor::eigendecompose;
use crate::linalg::Matrix;

/// Relative PSD tolerance: eigenvalues above `-PSD_TOL * trace` are noise.
pub const PSD_TOL: f64 = 1e-10;

/// Logistic execution intensity `lambda_rfq / (1 + exp(alpha + beta * delta))`.
///
/// `lambda_rfq` is the RFQ arrival rate (per day), `beta` the price
/// sensitivity (per currency unit). The fraction is the probability that a
/// request quoted at `delta` trades.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LogisticIntensity {
    pub lambda_rfq: f64,
    pub alpha: f64,
    pub beta: f64,
}

impl LogisticIntensity {
    /// A zero arrival rate is accepted (a silent market), negative is not.
    pub fn new(lambda_rfq: f64, alpha: f64, beta: f64) -> Result<Self> {
        if !(lambda_rfq >= 0.0 && lambda_rfq.is_finite()) {
            return Err(invalid("lambda_rfq", format!("must be finite and >= 0, got {lambda_rfq}")));
        }
        if !(beta > 0.0 && beta.is_finite()) {
            return Err(invalid("beta", format!("must be finite and > 0, got {beta}")));
        }
        if !alpha.is_finite() {
            return Err(invalid("alpha", "must be finite"));
        }
        Ok(Self {
            lambda_rfq,
            alpha,
            beta,
        })
    }

    #[inline]
    fn exponent(&self, delta: f64) -> f64 {
        self.alpha + self.beta * delta
    }

    /// Probability that an RFQ answered at `delta` results in a trade.
    #[inline]
    pub fn fill_probability(&self, delta: f64) -> f64 {
        let x = self.exponent(delta);
        if x > 0.0 {
            let e = (-x).exp();
            e / (1.0 + e)
        } else {
            1.0 / (1.0 + x.exp())
        }
    }

    #[inline]
    pub fn intensity(&self, delta: f64) -> f64 {
        self.lambda_rfq * self.fill_probability(delta)
    }

    pub fn derivative(&self, delta: f64) -> f64 {
        let f = self.fill_probability(delta);
        -self.beta * self.lambda_rfq * f * (1.0 - f)
    }

    pub fn second_derivative(&self, delta: f64) -> f64 {
        let f = self.fill_probability(delta);
        // d/dδ [-β λ f (1 - f)] with f' = -β f (1 - f)
        self.beta * self.beta * self.lambda_rfq * f * (1.0 - f) * (1.0 - 2.0 * f)
    }

    /// `Λ Λ'' / Λ'^2`, which for the logistic family is `1 - exp(-(alpha + beta delta))`.
    pub fn curvature_ratio(&self, delta: f64) -> f64 {
        1.0 - (-self.exponent(delta)).exp()
    }
}

/// Outcome of probing an intensity against the regularity hypotheses.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ValidationReport {
    pub n_probes: usize,
    pub derivative_negative: bool,
    /// `Λ(upper) / lambda_rfq`.
    pub tail_fraction: f64,
    pub vanishes_at_upper: bool,
    pub max_curvature_ratio: f64,
    pub passed: bool,
}

/// Fill fraction below which the intensity counts as vanished at the upper probe.
pub const TAIL_FRACTION: f64 = 1e-6;

pub fn validate_hypotheses(
    intensity: &LogisticIntensity,
    probe_range: (f64, f64),
    n_probes: usize,
) -> Result<ValidationReport> {
    if !(intensity.lambda_rfq > 0.0) {
        return Err(invalid("lambda_rfq", "must be > 0 for the hypotheses to hold"));
    }
    if !(intensity.beta > 0.0) {
        return Err(invalid("beta", "must be > 0"));
    }
    let (lo, hi) = probe_range;
    if !(lo.is_finite() && hi.is_finite() && lo < hi) {
        return Err(invalid("probe_range", format!("need finite lo < hi, got [{lo}, {hi}]")));
    }
    if n_probes < 3 {
        return Err(invalid("n_probes", "need at least 3 probes"));
    }
    let mut derivative_negative = true;
    let mut max_ratio = f64::NEG_INFINITY;
    for j in 0..n_probes {
        let delta = lo + (hi - lo) * j as f64 / (n_probes - 1) as f64;
        derivative_negative &= intensity.derivative(delta) < 0.0;
        max_ratio = max_ratio.max(intensity.curvature_ratio(delta));
    }
    let tail_fraction = intensity.fill_probability(hi);
    let vanishes_at_upper = tail_fraction < TAIL_FRACTION;
    Ok(ValidationReport {
        n_probes,
        derivative_negative,
        tail_fraction,
        vanishes_at_upper,
        max_curvature_ratio: max_ratio,
        passed: derivative_negative && vanishes_at_upper && max_ratio < 2.0,
    })
}

/// Gamma law of request sizes, parameterised by shape and rate.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GammaSpec {
    pub shape: f64,
    pub rate: f64,
}

impl GammaSpec {
    pub fn new(shape: f64, rate: f64) -> Result<Self> {
        if !(shape > 0.0 && shape.is_finite()) {
            return Err(invalid("shape", format!("must be > 0, got {shape}")));
        }
        if !(rate > 0.0 && rate.is_finite()) {
            return Err(invalid("rate", format!("must be > 0, got {rate}")));
        }
        Ok(Self { shape, rate })
    }

    pub fn mean(&self) -> f64 {
        self.shape / self.rate
    }

    pub fn stdev(&self) -> f64 {
        self.shape.sqrt() / self.rate
    }

    fn distribution(&self) -> Result<Gamma> {
        Gamma::new(self.shape, self.rate).map_err(|e| invalid("gamma", e.to_string()))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SizeAtom {
    pub size: f64,
    pub prob: f64,
}

/// Discrete request-size law.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SizeDistribution {
    atoms: Vec<SizeAtom>,
    source: Option<GammaSpec>,
}

impl SizeDistribution {
    pub fn new(atoms: Vec<SizeAtom>) -> Result<Self> {
        if atoms.is_empty() {
            return Err(invalid("atoms", "size distribution needs at least one atom"));
        }
        for w in atoms.windows(2) {
            if !(w[1].size > w[0].size) {
                return Err(invalid("atoms", "sizes must be strictly increasing"));
            }
        }
        if atoms.iter().any(|a| !(a.size > 0.0 && a.size.is_finite())) {
            return Err(invalid("atoms", "sizes must be positive and finite"));
        }
        if atoms.iter().any(|a| !(a.prob >= 0.0)) {
            return Err(invalid("atoms", "probabilities must be >= 0"));
        }
        let total: f64 = atoms.iter().map(|a| a.prob).sum();
        if (total - 1.0).abs() > 1e-12 {
            return Err(invalid("atoms", format!("probabilities sum to {total}, expected 1")));
        }
        Ok(Self {
            atoms,
            source: None,
        })
    }

    pub fn from_pairs(pairs: &[(f64, f64)]) -> Result<Self> {
        Self::new(
            pairs
                .iter()
                .map(|&(size, prob)| SizeAtom { size, prob })
                .collect(),
        )
    }

    pub fn single(size: f64) -> Result<Self> {
        Self::from_pairs(&[(size, 1.0)])
    }

    pub fn atoms(&self) -> &[SizeAtom] {
        &self.atoms
    }

    pub fn source(&self) -> Option<&GammaSpec> {
        self.source.as_ref()
    }

    pub fn mean(&self) -> f64 {
        self.atoms.iter().map(|a| a.size * a.prob).sum()
    }

    pub fn second_moment(&self) -> f64 {
        self.atoms.iter().map(|a| a.size * a.size * a.prob).sum()
    }
}

/// How Gamma mass is assigned to the equally spaced representative sizes.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DiscretizationRule {
    /// Weights proportional to the Gamma density at each atom.
    #[default]
    DensityWeights,
    /// Gamma CDF mass of buckets with midpoint edges, first from 0, last to infinity.
    CdfBuckets,
}

/// Discretise a Gamma size law on `z_k = k * z_max / n_atoms`, with
/// `z_max = mean + z_max_sigmas * stdev`, optionally rounded to a multiple of `round_to`.
pub fn discretize_gamma(
    spec: &GammaSpec,
    n_atoms: usize,
    z_max_sigmas: f64,
    rule: DiscretizationRule,
    round_to: Option<f64>,
) -> Result<SizeDistribution> {
    if n_atoms == 0 {
        return Err(invalid("n_atoms", "need at least one atom"));
    }
    if !(z_max_sigmas > 0.0 && z_max_sigmas.is_finite()) {
        return Err(invalid("z_max_sigmas", "must be > 0"));
    }
    let raw = spec.mean() + z_max_sigmas * spec.stdev();
    if !raw.is_finite() || raw <= 0.0 {
        return Err(invalid("gamma", "degenerate spec: size scale overflows"));
    }
    let z_max = match round_to {
        Some(step) if step > 0.0 => ((raw / step).round() * step).max(step),
        _ => raw,
    };
    let step = z_max / n_atoms as f64;
    let sizes: Vec<f64> = (1..=n_atoms).map(|k| k as f64 * step).collect();
    let gamma = spec.distribution()?;
    let raw_probs = match rule {
        DiscretizationRule::DensityWeights => sizes.iter().map(|&z| gamma.pdf(z)).collect(),
        DiscretizationRule::CdfBuckets => cdf_bucket_masses(&gamma, &sizes),
    };
    let total: f64 = raw_probs.iter().sum();
    if !(total > 0.0 && total.is_finite()) {
        return Err(invalid("gamma", "discretisation produced no probability mass"));
    }
    let atoms = sizes
        .iter()
        .zip(&raw_probs)
        .map(|(&size, &p)| SizeAtom {
            size,
            prob: p / total,
        })
        .collect();
    let mut dist = SizeDistribution::new(atoms)?;
    dist.source = Some(*spec);
    Ok(dist)
}

/// Unnormalised CDF masses for midpoint-edged buckets around `sizes`.
pub fn cdf_bucket_masses(gamma: &Gamma, sizes: &[f64]) -> Vec<f64> {
    let n = sizes.len();
    (0..n)
        .map(|k| {
            let lo = if k == 0 { 0.0 } else { 0.5 * (sizes[k - 1] + sizes[k]) };
            let hi_cdf = if k + 1 == n {
                1.0
            } else {
                gamma.cdf(0.5 * (sizes[k] + sizes[k + 1]))
            };
            hi_cdf - gamma.cdf(lo)
        })
        .collect()
}

/// Scalar profile of a penalty as a function of `y = q' Σ q`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "form", rename_all = "snake_case")]
pub enum PenaltyForm {
    Zero,
    /// `coef / 2 * y`
    Quadratic { coef: f64 },
    /// `coef * sqrt(y)`
    Sqrt { coef: f64 },
}

impl PenaltyForm {
    pub fn value(&self, y: f64) -> f64 {
        match *self {
            PenaltyForm::Zero => 0.0,
            PenaltyForm::Quadratic { coef } => 0.5 * coef * y,
            PenaltyForm::Sqrt { coef } => coef * y.max(0.0).sqrt(),
        }
    }

    /// Derivative in `y`; `None` where it does not exist (sqrt at 0).
    pub fn derivative(&self, y: f64) -> Option<f64> {
        match *self {
            PenaltyForm::Zero => Some(0.0),
            PenaltyForm::Quadratic { coef } => Some(0.5 * coef),
            PenaltyForm::Sqrt { coef } => {
                if coef == 0.0 {
                    Some(0.0)
                } else if y > 0.0 {
                    Some(0.5 * coef / y.sqrt())
                } else {
                    None
                }
            }
        }
    }

    pub fn is_smooth(&self) -> bool {
        !matches!(self, PenaltyForm::Sqrt { coef } if *coef != 0.0)
    }

    fn coef(&self) -> f64 {
        match *self {
            PenaltyForm::Zero => 0.0,
            PenaltyForm::Quadratic { coef } | PenaltyForm::Sqrt { coef } => coef,
        }
    }
}

/// Running and terminal inventory penalties.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RiskPenalty {
    pub running: PenaltyForm,
    pub terminal: PenaltyForm,
}

impl RiskPenalty {
    pub fn new(running: PenaltyForm, terminal: PenaltyForm) -> Result<Self> {
        if !(running.coef() >= 0.0 && running.coef().is_finite()) {
            return Err(invalid("running penalty", "coefficient must be >= 0"));
        }
        if !(terminal.coef() >= 0.0 && terminal.coef().is_finite()) {
            return Err(invalid("terminal penalty", "coefficient must be >= 0"));
        }
        Ok(Self { running, terminal })
    }

    pub fn quadratic(gamma: f64) -> Self {
        Self {
            running: PenaltyForm::Quadratic { coef: gamma },
            terminal: PenaltyForm::Zero,
        }
    }

    pub fn none() -> Self {
        Self {
            running: PenaltyForm::Zero,
            terminal: PenaltyForm::Zero,
        }
    }

    /// Running penalty `ψ̄(y)`.
    pub fn running(&self, y: f64) -> f64 {
        self.running.value(y)
    }

    /// Terminal penalty `ℓ̄(y)`.
    pub fn terminal(&self, y: f64) -> f64 {
        self.terminal.value(y)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Side {
    Bid,
    Ask,
}

impl Side {
    pub const BOTH: [Side; 2] = [Side::Bid, Side::Ask];

    /// Inventory change per unit size when a request on this side trades.
    #[inline]
    pub fn sign(self) -> f64 {
        match self {
            Side::Bid => 1.0,
            Side::Ask => -1.0,
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            Side::Bid => "bid",
            Side::Ask => "ask",
        }
    }
}

impl std::fmt::Display for Side {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AssetSpec {
    pub s0: f64,
    pub sigma: f64,
    pub bid_intensity: LogisticIntensity,
    pub ask_intensity: LogisticIntensity,
    pub bid_sizes: SizeDistribution,
    pub ask_sizes: SizeDistribution,
}

impl AssetSpec {
    /// Same intensity and size law on both sides.
    pub fn symmetric(s0: f64, sigma: f64, intensity: LogisticIntensity, sizes: SizeDistribution) -> Self {
        Self {
            s0,
            sigma,
            bid_intensity: intensity,
            ask_intensity: intensity,
            bid_sizes: sizes.clone(),
            ask_sizes: sizes,
        }
    }

    pub fn intensity(&self, side: Side) -> &LogisticIntensity {
        match side {
            Side::Bid => &self.bid_intensity,
            Side::Ask => &self.ask_intensity,
        }
    }

    pub fn sizes(&self, side: Side) -> &SizeDistribution {
        match side {
            Side::Bid => &self.bid_sizes,
            Side::Ask => &self.ask_sizes,
        }
    }

    fn validate(&self, index: usize) -> Result<()> {
        if !(self.sigma > 0.0 && self.sigma.is_finite()) {
            return Err(invalid("sigma", format!("asset {index}: must be > 0, got {}", self.sigma)));
        }
        if !self.s0.is_finite() {
            return Err(invalid("s0", format!("asset {index}: must be finite")));
        }
        Ok(())
    }
}

/// One (asset, side, size atom) stream of requests.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Bucket {
    pub asset: usize,
    pub side: Side,
    pub size_index: usize,
    pub size: f64,
    pub prob: f64,
}

/// Full problem description.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MarketSpec {
    pub assets: Vec<AssetSpec>,
    pub correlation: Matrix,
    covariance: Matrix,
    /// Days.
    pub horizon: f64,
    /// Lower bound `-quote_floor` on every quote (currency).
    pub quote_floor: f64,
    /// Admissible inventories satisfy `q' Σ q <= risk_limit`.
    pub risk_limit: f64,
    pub penalty: RiskPenalty,
}

impl MarketSpec {
    pub fn new(
        assets: Vec<AssetSpec>,
        correlation: Matrix,
        horizon: f64,
        quote_floor: f64,
        risk_limit: f64,
        penalty: RiskPenalty,
    ) -> Result<Self> {
        if assets.is_empty() {
            return Err(invalid("assets", "need at least one asset"));
        }
        for (i, a) in assets.iter().enumerate() {
            a.validate(i)?;
        }
        if !(horizon > 0.0 && horizon.is_finite()) {
            return Err(invalid("horizon", "must be > 0"));
        }
        if !(quote_floor >= 0.0 && quote_floor.is_finite()) {
            return Err(invalid("quote_floor", "must be >= 0"));
        }
        if !(risk_limit > 0.0) {
            return Err(invalid("risk_limit", "must be > 0"));
        }
        let sigmas: Vec<f64> = assets.iter().map(|a| a.sigma).collect();
        let covariance = build_covariance(&sigmas, &correlation)?;
        Ok(Self {
            assets,
            correlation,
            covariance,
            horizon,
            quote_floor,
            risk_limit,
            penalty,
        })
    }

    pub fn covariance(&self) -> &Matrix {
        &self.covariance
    }

    pub fn dim(&self) -> usize {
        self.assets.len()
    }

    /// Same market with another penalty (e.g. to solve without risk aversion).
    pub fn with_penalty(&self, penalty: RiskPenalty) -> Self {
        Self {
            penalty,
            ..self.clone()
        }
    }

    /// Requests streams in canonical order: asset, then bid/ask, then size atom.
    pub fn buckets(&self) -> Vec<Bucket> {
        let mut out = Vec::new();
        for (asset, spec) in self.assets.iter().enumerate() {
            for side in Side::BOTH {
                for (size_index, atom) in spec.sizes(side).atoms().iter().enumerate() {
                    out.push(Bucket {
                        asset,
                        side,
                        size_index,
                        size: atom.size,
                        prob: atom.prob,
                    });
                }
            }
        }
        out
    }

    /// `Σ_i (Λ^{i,b}(-δ∞) + Λ^{i,a}(-δ∞))`, the explicit scheme's rate budget.
    pub fn intensity_budget(&self) -> f64 {
        self.assets
            .iter()
            .map(|a| a.bid_intensity.intensity(-self.quote_floor) + a.ask_intensity.intensity(-self.quote_floor))
            .sum()
    }

    pub fn risk(&self, q: &[f64]) -> f64 {
        self.covariance.quad_form(q)
    }
}

/// `Σ_ij = ρ_ij σ_i σ_j`, rejecting invalid correlations and non-PSD results.
pub fn build_covariance(sigmas: &[f64], correlation: &Matrix) -> Result<Matrix> {
    let d = sigmas.len();
    if correlation.rows() != d || correlation.cols() != d {
        return Err(Error::Dimension(format!(
            "correlation is {}x{}, expected {d}x{d}",
            correlation.rows(),
            correlation.cols()
        )));
    }
    for i in 0..d {
        if correlation[(i, i)] != 1.0 {
            return Err(Error::InvalidCorrelation(format!(
                "diagonal entry {i} is {}, expected 1",
                correlation[(i, i)]
            )));
        }
        for j in 0..d {
            let r = correlation[(i, j)];
            if !(-1.0..=1.0).contains(&r) {
                return Err(Error::InvalidCorrelation(format!(
                    "entry ({i}, {j}) = {r} outside [-1, 1]"
                )));
            }
            if r != correlation[(j, i)] {
                return Err(Error::InvalidCorrelation(format!("entry ({i}, {j}) is not symmetric")));
            }
        }
    }
    let sigma = Matrix::from_fn(d, d, |i, j| correlation[(i, j)] * sigmas[i] * sigmas[j]);
    let decomp = eigendecompose(&sigma)?;
    let tolerance = PSD_TOL * sigma.trace();
    let min = decomp.eigenvalues.last().copied().unwrap_or(0.0);
    if min < -tolerance {
        return Err(Error::NotPositiveSemidefinite {
            eigenvalue: min,
            tolerance,
        });
    }
    Ok(sigma)
}
