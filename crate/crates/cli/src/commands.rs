use std::path::{Path, PathBuf};
use std::sync::Arc;

use anyhow::{bail, Context, Result};
use serde::Serialize;

use otc_mm::config::{PolicyChoice, RunConfig};
use otc_mm::factor::{build_factor_model, eigendecompose};
use otc_mm::linalg::Matrix;
use otc_mm::model::{validate_hypotheses, MarketSpec, Side};
use otc_mm::quotes::{optimal_quote, MyopicPolicy, Quote, QuotePolicy, SurfacePolicy};
use otc_mm::residual::{adjusted_quotes, AdjustedQuote, EtaEstimate};
use otc_mm::simulator::{
    inventory_histogram, simulate, total_variance_gap, HistogramSpec, SimulationConfig, SimulationOutput,
};
use otc_mm::solver::{grid_for, solve, ValueSurface};
use otc_mm::surface_io::{load_surface, save_surface};

use crate::output::{num, Run};

pub const SURFACE_CACHE: &str = "surface.bin";

/// Flags shared by every subcommand, already folded into the config.
#[derive(Debug, Clone, Default)]
pub struct Overrides {
    pub seed: Option<u64>,
    pub paths: Option<usize>,
    pub grid: Option<Vec<usize>>,
    pub dt: Option<f64>,
    /// `Some(0)` selects inventory coordinates.
    pub factors: Option<usize>,
}

impl Overrides {
    pub fn apply(&self, cfg: &mut RunConfig) {
        if let Some(s) = self.seed {
            cfg.seed = s;
        }
        if let Some(n) = self.paths {
            cfg.simulation.paths = n;
            cfg.adjust.paths = n;
        }
        if let Some(g) = &self.grid {
            cfg.solver.grid = Some(g.clone());
        }
        if let Some(dt) = self.dt {
            cfg.solver.dt_days = Some(dt);
        }
        if let Some(k) = self.factors {
            cfg.solver.factors = (k > 0).then_some(k);
        }
    }
}

/// `--grid 141` or `--grid 141,71`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct GridArg(pub Vec<usize>);

pub fn parse_grid(s: &str) -> Result<GridArg, String> {
    s.split(',')
        .map(|p| p.trim().parse::<usize>().map_err(|e| format!("bad grid size `{p}`: {e}")))
        .collect::<Result<_, _>>()
        .map(GridArg)
}

pub fn side_str(s: Side) -> &'static str {
    s.as_str()
}

pub fn quote_cells(q: Quote) -> [String; 2] {
    match q {
        Quote::Price(p) => [num(p), String::new()],
        Quote::Refused(r) => [String::new(), r.as_str().to_string()],
    }
}

// ---------------------------------------------------------------- validate

pub fn validate(cfg: &RunConfig, run: &mut Run) -> Result<bool> {
    let market = cfg.market().context("config failed validation")?;
    let decomp = eigendecompose(market.covariance())?;
    let min_eig = decomp.eigenvalues.last().copied().unwrap_or(0.0);
    println!(
        "covariance: {} assets, PSD (smallest eigenvalue {})",
        market.dim(),
        num(min_eig)
    );
    let mut ok = true;
    let mut rows = Vec::new();
    for (i, a) in market.assets.iter().enumerate() {
        for side in Side::BOTH {
            let it = a.intensity(side);
            let lo = -market.quote_floor;
            // fill probability ~2e-9 at the upper probe
            let hi = (20.0 - it.alpha) / it.beta;
            let (lo, hi) = if hi > lo { (lo, hi) } else { (lo, lo + 20.0 / it.beta) };
            let r = validate_hypotheses(it, (lo, hi), 201)
                .with_context(|| format!("asset {i} {side}: intensity parameters rejected"))?;
            if !r.passed {
                eprintln!(
                    "asset {i} {side}: intensity hypotheses fail (Λ' < 0: {}, vanishes: {}, max ratio {})",
                    r.derivative_negative,
                    r.vanishes_at_upper,
                    num(r.max_curvature_ratio)
                );
            }
            ok &= r.passed;
            rows.push(vec![
                i.to_string(),
                side_str(side).to_string(),
                num(it.lambda_rfq),
                num(it.alpha),
                num(it.beta),
                num(lo),
                num(hi),
                r.n_probes.to_string(),
                r.derivative_negative.to_string(),
                num(r.tail_fraction),
                num(r.max_curvature_ratio),
                r.passed.to_string(),
            ]);
        }
    }
    run.csv(
        "validate.csv",
        &[
            "asset",
            "side",
            "lambda_per_day",
            "alpha",
            "beta",
            "probe_low",
            "probe_high",
            "n_probes",
            "derivative_negative",
            "tail_fraction",
            "max_curvature_ratio",
            "passed",
        ],
        rows,
    )?;
    println!("intensity hypotheses: {}", if ok { "pass" } else { "FAIL" });
    Ok(ok)
}

// ---------------------------------------------------------------- factors

pub fn factors(cfg: &RunConfig, run: &mut Run) -> Result<()> {
    let market = cfg.market()?;
    let decomp = eigendecompose(market.covariance())?;
    let trace: f64 = decomp.eigenvalues.iter().sum();
    let mut cum = 0.0;
    let mut rows = Vec::new();
    for (j, &l) in decomp.eigenvalues.iter().enumerate() {
        cum += l;
        rows.push(vec![(j + 1).to_string(), num(l), num(l / trace), num(cum / trace)]);
    }
    run.csv("eigenvalues.csv", &["index", "eigenvalue", "explained", "cumulative_explained"], rows)?;
    let d = decomp.dim();
    let rows = (0..d).flat_map(|j| (0..d).map(move |i| (j, i))).map(|(j, i)| {
        vec![(j + 1).to_string(), i.to_string(), num(decomp.eigenvectors[(i, j)])]
    });
    run.csv("eigenvectors.csv", &["index", "asset", "component"], rows.collect::<Vec<_>>())?;
    let shown = decomp.eigenvalues.iter().take(4).map(|&l| num(l)).collect::<Vec<_>>().join(", ");
    println!("eigenvalues (largest first): {shown}{}", if d > 4 { ", ..." } else { "" });
    if let Some(k) = cfg.solver.factors {
        let fm = build_factor_model(&decomp, k)?;
        println!("k = {k}: explained variance {}", num(fm.explained_variance));
    }
    Ok(())
}

// ---------------------------------------------------------------- solve

pub fn solve_surface(cfg: &RunConfig, market: &MarketSpec) -> Result<ValueSurface> {
    let fm = RunConfig::factor_model(market, cfg.solver.factors)?;
    let nodes = cfg.grid_nodes(fm.n_factors())?;
    let grid = grid_for(market, &fm, &nodes)?;
    Ok(solve(market, &fm, &grid, &cfg.solver_config())?)
}

/// Maximum of θ̃ over admissible nodes at t = 0.
pub fn surface_max(s: &ValueSurface) -> f64 {
    s.initial()
        .iter()
        .zip(s.grid.mask())
        .filter(|(_, &m)| m)
        .map(|(v, _)| *v)
        .fold(f64::NEG_INFINITY, f64::max)
}

pub fn write_surface_csv(run: &mut Run, name: &str, s: &ValueSurface) -> Result<()> {
    let k = s.grid.dims();
    let mut header = vec!["time_days".to_string(), "node".to_string()];
    header.extend((1..=k).map(|j| format!("f{j}")));
    header.push("admissible".into());
    header.push("value".into());
    let header: Vec<&str> = header.iter().map(String::as_str).collect();
    let mut rows = Vec::with_capacity(s.grid.len() * s.slices.len());
    for (t, slice) in s.times.iter().zip(&s.slices) {
        for (node, v) in slice.iter().enumerate() {
            let mut row = vec![num(*t), node.to_string()];
            row.extend(s.grid.node_point(node).into_iter().map(num));
            row.push(s.grid.is_admissible(node).to_string());
            row.push(num(*v));
            rows.push(row);
        }
    }
    run.csv(name, &header, rows)
}

/// Solve, cache and export one surface under `stem` (`surface` →
/// `surface.bin`, `surface.csv`).
pub fn solve_and_store(cfg: &RunConfig, run: &mut Run, stem: &str) -> Result<Arc<ValueSurface>> {
    let market = cfg.market()?;
    let t = std::time::Instant::now();
    let s = solve_surface(cfg, &market)?;
    let key = cfg.surface_key();
    let bin = format!("{stem}.bin");
    save_surface(&run.path(&bin), &s, &key)?;
    run.note_surface(&bin, &key, false);
    write_surface_csv(run, &format!("{stem}.csv"), &s)?;
    println!(
        "{stem}: {} factor(s), {} nodes, {} steps of {} days, θ̃(0,0) = {}, max θ̃ = {} ({:.1} s)",
        s.grid.dims(),
        s.grid.len(),
        s.steps,
        num(s.dt),
        num(s.value_at_origin()),
        num(surface_max(&s)),
        t.elapsed().as_secs_f64()
    );
    Ok(Arc::new(s))
}

/// Load a cached surface and check it was solved for this configuration.
pub fn load_cached(cfg: &RunConfig, run: &mut Run, name: &str, hint: &str) -> Result<Arc<ValueSurface>> {
    let path = run.path(name);
    if !path.exists() {
        bail!(
            "no cached surface at {}; run `{hint}` first (same config and --grid/--dt/--factors flags, same --out-dir)",
            path.display()
        );
    }
    let (surface, key) = load_surface(&path)?;
    let want = cfg.surface_key();
    if key != want {
        bail!(
            "cached surface at {} was solved for a different market/solver configuration \
             (cache key {}…, this config needs {}…); rerun `{hint}`",
            path.display(),
            &key[..12.min(key.len())],
            &want[..12]
        );
    }
    if surface.market != cfg.market()? {
        bail!("cached surface at {} does not match the configured market; rerun `{hint}`", path.display());
    }
    run.note_surface(name, &key, true);
    println!("cache hit: {} (key {}…)", path.display(), &key[..12]);
    Ok(Arc::new(surface))
}

pub fn solve_hint(config: Option<&Path>, out_dir: &Path) -> String {
    match config {
        Some(c) => format!("otcmm solve --config {} --out-dir {}", c.display(), out_dir.display()),
        None => format!("otcmm solve --config <file> --out-dir {}", out_dir.display()),
    }
}

// ---------------------------------------------------------------- quotes

pub fn quotes(cfg: &RunConfig, run: &mut Run, surface: &ValueSurface) -> Result<()> {
    let market = &surface.market;
    let d = market.dim();
    let t = cfg.quotes.t_days;
    let points = cfg.quotes.points.max(2);
    let mut rows = Vec::new();
    for asset in 0..d {
        let qmax = (market.risk_limit / market.covariance()[(asset, asset)]).sqrt();
        for j in 0..points {
            let x = -qmax + 2.0 * qmax * j as f64 / (points - 1) as f64;
            let mut q = vec![0.0; d];
            q[asset] = x;
            for side in Side::BOTH {
                let sizes: Vec<f64> = match &cfg.quotes.sizes {
                    Some(s) => s.clone(),
                    None => market.assets[asset].sizes(side).atoms().iter().map(|a| a.size).collect(),
                };
                for size in sizes {
                    let quote = optimal_quote(surface, t, &q, asset, side, size)?;
                    let [price, refusal] = quote_cells(quote);
                    rows.push(vec![
                        asset.to_string(),
                        num(x),
                        side_str(side).to_string(),
                        num(size),
                        price,
                        refusal,
                    ]);
                }
            }
        }
    }
    let n = rows.len();
    run.csv("quotes.csv", &["asset", "inventory", "side", "size", "quote", "refusal"], rows)?;
    println!("wrote {n} quotes at t = {} days", num(t));
    Ok(())
}

// ---------------------------------------------------------------- simulate

pub const SUMMARY_COLUMNS: &[&str] = &[
    "policy",
    "n_paths",
    "seed",
    "mean_pnl",
    "mean_pnl_se",
    "stdev_pnl",
    "stdev_pnl_se",
    "stdev_from_rfq",
    "stdev_from_rfq_se",
    "objective",
    "objective_se",
    "mean_pnl_conditional",
    "mean_pnl_conditional_se",
    "objective_conditional",
    "objective_conditional_se",
    "mean_risk_integral",
    "mean_fills",
    "rejected_fills",
    "total_variance_gap",
    "total_variance_gap_se",
];

pub fn summary_row(policy: &str, out: &SimulationOutput) -> Vec<String> {
    let s = &out.summary;
    let (gap, gap_se) = total_variance_gap(&out.paths);
    vec![
        policy.to_string(),
        s.n_paths.to_string(),
        s.seed.to_string(),
        num(s.mean_pnl),
        num(s.mean_pnl_se),
        num(s.stdev_pnl),
        num(s.stdev_pnl_se),
        num(s.stdev_from_rfq),
        num(s.stdev_from_rfq_se),
        num(s.objective),
        num(s.objective_se),
        num(s.mean_pnl_conditional),
        num(s.mean_pnl_conditional_se),
        num(s.objective_conditional),
        num(s.objective_conditional_se),
        num(s.mean_risk_integral),
        num(s.mean_fills),
        s.rejected_fills.to_string(),
        num(gap),
        num(gap_se),
    ]
}

#[derive(Serialize)]
struct PathRecord<'a> {
    path: usize,
    pnl: f64,
    spread_pnl: f64,
    market_pnl: f64,
    risk_integral: f64,
    running_penalty: f64,
    terminal_penalty: f64,
    objective: f64,
    fills: u64,
    rejected_fills: u32,
    declined: u32,
    final_inventory: &'a [f64],
}

#[derive(Serialize)]
struct EventRecord {
    path: usize,
    t: f64,
    asset: usize,
    side: Side,
    size: f64,
    kind: otc_mm::simulator::EventKind,
    delta: f64,
}

pub fn write_paths(run: &mut Run, name: &str, out: &SimulationOutput) -> Result<()> {
    run.ndjson(
        name,
        out.paths.iter().map(|p| PathRecord {
            path: p.path,
            pnl: p.pnl,
            spread_pnl: p.spread_pnl,
            market_pnl: p.market_pnl,
            risk_integral: p.risk_integral,
            running_penalty: p.running_penalty,
            terminal_penalty: p.terminal_penalty,
            objective: p.objective(),
            fills: p.total_fills(),
            rejected_fills: p.rejected_fills,
            declined: p.declined,
            final_inventory: &p.final_inventory,
        }),
    )
}

pub fn print_summary(label: &str, out: &SimulationOutput) {
    let s = &out.summary;
    println!(
        "{label}: mean {} (conditional {} ± {}), stdev {}, rfq-stdev {}, objective {} (conditional {} ± {})",
        num(s.mean_pnl.round()),
        num(s.mean_pnl_conditional.round()),
        num(s.mean_pnl_conditional_se.round()),
        num(s.stdev_pnl.round()),
        num(s.stdev_from_rfq.round()),
        num(s.objective.round()),
        num(s.objective_conditional.round()),
        num(s.objective_conditional_se.round()),
    );
    for w in &out.warnings {
        eprintln!("warning: {w}");
    }
}

pub fn simulate_cmd(cfg: &RunConfig, run: &mut Run, surface: Option<Arc<ValueSurface>>) -> Result<()> {
    let market = cfg.market()?;
    let policy: Box<dyn QuotePolicy> = match (cfg.simulation.policy, surface) {
        (PolicyChoice::Myopic, _) => Box::new(MyopicPolicy::new(&market)),
        (PolicyChoice::Surface, Some(s)) => Box::new(SurfacePolicy::new(s)),
        (PolicyChoice::Surface, None) => unreachable!("surface policy without a surface"),
    };
    let label = match cfg.simulation.policy {
        PolicyChoice::Surface => "surface",
        PolicyChoice::Myopic => "myopic",
    };
    let bins = cfg.simulation.histogram_bins;
    let mut sim_cfg: SimulationConfig = cfg.simulation_config();
    sim_cfg.keep_events |= bins > 0;
    let out = simulate(&market, policy.as_ref(), &sim_cfg)?;
    print_summary(label, &out);
    run.csv("summary.csv", SUMMARY_COLUMNS, vec![summary_row(label, &out)])?;
    write_paths(run, "paths.ndjson", &out)?;

    if cfg.simulation.event_log_paths > 0 {
        let buckets = market.buckets();
        let records = out
            .paths
            .iter()
            .take(cfg.simulation.event_log_paths)
            .flat_map(|p| {
                let buckets = &buckets;
                p.events.iter().flatten().map(move |e| {
                    let b = &buckets[e.bucket as usize];
                    EventRecord {
                        path: p.path,
                        t: e.t,
                        asset: b.asset,
                        side: b.side,
                        size: b.size,
                        kind: e.kind,
                        delta: e.delta,
                    }
                })
            });
        run.ndjson("events.ndjson", records)?;
    }
    if bins > 0 {
        write_histogram(run, &market, &out, bins)?;
    }
    Ok(())
}

fn write_histogram(run: &mut Run, market: &MarketSpec, out: &SimulationOutput, bins: usize) -> Result<()> {
    let d = market.dim();
    let m = d.min(2);
    let axes: Vec<(f64, f64, usize)> = (0..m)
        .map(|i| {
            let qmax = (market.risk_limit / market.covariance()[(i, i)]).sqrt();
            (-qmax, qmax, bins)
        })
        .collect();
    let spec = HistogramSpec {
        axes: axes.clone(),
        projection: (m < d).then(|| Matrix::from_fn(d, m, |i, j| if i == j { 1.0 } else { 0.0 })),
    };
    let logs: Vec<&[otc_mm::simulator::Event]> = out.paths.iter().filter_map(|p| p.events.as_deref()).collect();
    let h = inventory_histogram(market, &logs, &spec)?;
    let total = out.paths.len() as f64 * market.horizon;
    let centre = |axis: usize, b: usize| {
        let (lo, hi, n) = axes[axis];
        lo + (hi - lo) * (b as f64 + 0.5) / n as f64
    };
    let mut rows = Vec::with_capacity(h.occupancy.len());
    for (idx, &days) in h.occupancy.iter().enumerate() {
        let (b1, b2) = if m == 2 { (idx / bins, Some(idx % bins)) } else { (idx, None) };
        let mut row = vec![b1.to_string(), num(centre(0, b1))];
        if let Some(b2) = b2 {
            row.push(b2.to_string());
            row.push(num(centre(1, b2)));
        }
        row.push(num(days));
        row.push(num(days / total));
        rows.push(row);
    }
    let header: &[&str] = if m == 2 {
        &["bin_1", "q_1", "bin_2", "q_2", "days", "fraction"]
    } else {
        &["bin_1", "q_1", "days", "fraction"]
    };
    run.csv("occupancy.csv", header, rows)
}

// ---------------------------------------------------------------- adjust

pub const ETA_COLUMNS: &[&str] = &[
    "surface",
    "t_days",
    "theta",
    "eta",
    "eta_se",
    "corrected",
    "n_paths",
    "seed",
];

pub const ADJUST_COLUMNS: &[&str] = &[
    "surface",
    "asset",
    "side",
    "size",
    "unadjusted",
    "adjusted",
    "refusal",
    "eta_shifted",
    "eta_shifted_se",
    "eta_diff_se",
];

pub struct AdjustResult {
    pub theta: f64,
    pub eta: EtaEstimate,
    pub quotes: Vec<((usize, Side, f64), AdjustedQuote)>,
}

pub fn run_adjust(cfg: &RunConfig, surface: &Arc<ValueSurface>) -> Result<AdjustResult> {
    let market = &surface.market;
    let d = market.dim();
    let t = cfg.adjust.t_days;
    let q = cfg.adjust.inventory.clone().unwrap_or_else(|| vec![0.0; d]);
    let requests: Vec<(usize, Side, f64)> = if cfg.adjust.requests.is_empty() {
        let size = market.assets[0].bid_sizes.atoms()[0].size;
        vec![(0, Side::Bid, size), (0, Side::Ask, size)]
    } else {
        cfg.adjust.requests.iter().map(|r| (r.asset, r.side, r.size)).collect()
    };
    let theta = surface.evaluate(t, &surface.factor_model.project(&q))?;
    let (eta, quotes) = adjusted_quotes(
        surface,
        market,
        t,
        &q,
        &requests,
        cfg.adjust.paths,
        cfg.seed,
        cfg.adjust.common_random_numbers,
    )?;
    Ok(AdjustResult {
        theta,
        eta,
        quotes: requests.into_iter().zip(quotes).collect(),
    })
}

pub fn adjust_rows(label: &str, cfg: &RunConfig, r: &AdjustResult) -> (Vec<String>, Vec<Vec<String>>) {
    let eta_row = vec![
        label.to_string(),
        num(cfg.adjust.t_days),
        num(r.theta),
        num(r.eta.value),
        num(r.eta.stderr),
        num(r.theta + r.eta.value),
        r.eta.n_paths.to_string(),
        r.eta.seed.to_string(),
    ];
    let rows = r
        .quotes
        .iter()
        .map(|((asset, side, size), aq)| {
            let [unadj, refusal] = quote_cells(aq.unadjusted);
            let [adj, _] = quote_cells(aq.adjusted);
            let (es, ese) = aq.eta_shifted.map_or((f64::NAN, f64::NAN), |e| (e.value, e.stderr));
            vec![
                label.to_string(),
                asset.to_string(),
                side_str(*side).to_string(),
                num(*size),
                unadj,
                adj,
                refusal,
                num(es),
                num(ese),
                num(aq.eta_diff_stderr),
            ]
        })
        .collect();
    (eta_row, rows)
}

pub fn print_adjust(label: &str, r: &AdjustResult) {
    println!(
        "{label}: θ̃ = {}, η̂ = {} ± {} ({} paths), θ̃ + η̂ = {}",
        num(r.theta),
        num(r.eta.value),
        num(r.eta.stderr),
        r.eta.n_paths,
        num(r.theta + r.eta.value)
    );
    for ((asset, side, size), aq) in &r.quotes {
        let show = |q: Quote| match q {
            Quote::Price(p) => num(p),
            Quote::Refused(r) => format!("refused ({})", r.as_str()),
        };
        println!(
            "  asset {asset} {side} {}: {} -> {}",
            num(*size),
            show(aq.unadjusted),
            show(aq.adjusted)
        );
    }
}

pub fn adjust_cmd(cfg: &RunConfig, run: &mut Run, surface: &Arc<ValueSurface>) -> Result<()> {
    let r = run_adjust(cfg, surface)?;
    print_adjust("surface", &r);
    let (eta_row, rows) = adjust_rows("surface", cfg, &r);
    run.csv("eta.csv", ETA_COLUMNS, vec![eta_row])?;
    run.csv("adjust.csv", ADJUST_COLUMNS, rows)?;
    Ok(())
}

pub fn default_out_dir(sub: Option<&str>) -> PathBuf {
    match sub {
        Some(s) => PathBuf::from("out").join(s),
        None => PathBuf::from("out"),
    }
}
