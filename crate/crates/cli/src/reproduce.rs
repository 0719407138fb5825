//! Bundled two-asset and thirty-asset experiments.

use std::sync::Arc;

use anyhow::Result;
use clap::ValueEnum;

use otc_mm::config::RunConfig;
use otc_mm::quotes::{MyopicPolicy, QuotePolicy, SurfacePolicy};
use otc_mm::simulator::{simulate, SimulationOutput};
use otc_mm::solver::ValueSurface;

use crate::commands::{
    adjust_rows, load_cached, print_adjust, print_summary, run_adjust, solve_and_store, summary_row, write_paths,
    ADJUST_COLUMNS, ETA_COLUMNS, SUMMARY_COLUMNS,
};
use crate::output::{num, Run};

pub const TWO_ASSET: &str = include_str!("../../../configs/paper-2asset.toml");
pub const THIRTY_ASSET: &str = include_str!("../../../configs/paper-30asset.toml");

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum Experiment {
    #[value(name = "paper-2asset")]
    TwoAsset,
    #[value(name = "paper-30asset")]
    ThirtyAsset,
}

impl Experiment {
    pub fn name(self) -> &'static str {
        match self {
            Experiment::TwoAsset => "paper-2asset",
            Experiment::ThirtyAsset => "paper-30asset",
        }
    }

    pub fn bundled_config(self) -> &'static str {
        match self {
            Experiment::TwoAsset => TWO_ASSET,
            Experiment::ThirtyAsset => THIRTY_ASSET,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, ValueEnum)]
pub enum Stage {
    Solve,
    Simulate,
    Adjust,
    #[default]
    All,
}

impl Stage {
    pub fn name(self) -> &'static str {
        match self {
            Stage::Solve => "solve",
            Stage::Simulate => "simulate",
            Stage::Adjust => "adjust",
            Stage::All => "all",
        }
    }
}

/// Published (mean, stdev, rfq-stdev, objective) for each table.
pub const REFERENCE_TABLES: [(&str, [f64; 4]); 4] = [
    ("T1", [72081.0, 80432.0, 5959.0, 69293.0]),
    ("T2", [73410.0, 265906.0, 6211.0, 43953.0]),
    ("T3", [72523.0, 96746.0, 6033.0, 68567.0]),
    ("T4", [61471.0, 64911.0, 5338.0, 59765.0]),
];

pub const REFERENCE_THETA_2ASSET: f64 = 69174.0;
pub const REFERENCE_THETA_30ASSET: f64 = 60156.0;
pub const REFERENCE_CORRECTED_30ASSET: f64 = 59513.0;

fn reference(table: &str) -> [f64; 4] {
    REFERENCE_TABLES.iter().find(|(t, _)| *t == table).map(|(_, v)| *v).expect("known table")
}

/// One entry of a table run: `(table, policy label, surface stem or None for myopic)`.
type Entry = (&'static str, &'static str, Option<&'static str>);

fn one_factor(cfg: &RunConfig) -> RunConfig {
    let mut c = cfg.clone();
    c.solver.factors = Some(1);
    c
}

pub fn reproduce(exp: Experiment, stage: Stage, cfg: &RunConfig, run: &mut Run) -> Result<()> {
    let hint = format!(
        "otcmm reproduce {} --stage solve --out-dir {}",
        exp.name(),
        run.dir.display()
    );
    // stem -> config that produced it
    let surfaces: Vec<(&str, RunConfig)> = match exp {
        Experiment::TwoAsset => vec![("surface", cfg.clone()), ("surface_1f", one_factor(cfg))],
        Experiment::ThirtyAsset => vec![("surface", cfg.clone())],
    };
    let mut solved: Vec<(&str, Arc<ValueSurface>)> = Vec::new();
    if matches!(stage, Stage::Solve | Stage::All) {
        for (stem, c) in &surfaces {
            solved.push((stem, solve_and_store(c, run, stem)?));
        }
        let reference = match exp {
            Experiment::TwoAsset => REFERENCE_THETA_2ASSET,
            Experiment::ThirtyAsset => REFERENCE_THETA_30ASSET,
        };
        let s = &solved[0].1;
        println!(
            "θ̃(0,0) = {} (reference {}, {:+.2}%)",
            num(s.value_at_origin().round()),
            num(reference),
            100.0 * (s.value_at_origin() / reference - 1.0)
        );
    } else {
        for (stem, c) in &surfaces {
            solved.push((stem, load_cached(c, run, &format!("{stem}.bin"), &hint)?));
        }
    }
    let surface = |stem: &str| solved.iter().find(|(s, _)| *s == stem).map(|(_, s)| s.clone()).expect("solved");

    if matches!(stage, Stage::Simulate | Stage::All) {
        let entries: Vec<Entry> = match exp {
            Experiment::TwoAsset => vec![
                ("T1", "optimal", Some("surface")),
                ("T2", "myopic", None),
                ("T3", "one_factor", Some("surface_1f")),
            ],
            Experiment::ThirtyAsset => vec![("T4", "optimal", Some("surface"))],
        };
        let market = cfg.market()?;
        let sim_cfg = cfg.simulation_config();
        let mut rows = Vec::new();
        let mut outputs: Vec<(&str, SimulationOutput)> = Vec::new();
        for (table, label, stem) in entries {
            let policy: Box<dyn QuotePolicy> = match stem {
                Some(stem) => Box::new(SurfacePolicy::new(surface(stem))),
                None => Box::new(MyopicPolicy::new(&market)),
            };
            let out = simulate(&market, policy.as_ref(), &sim_cfg)?;
            print_summary(&format!("{table} {label}"), &out);
            let r = reference(table);
            println!(
                "    reference: mean {}, stdev {}, rfq-stdev {}, objective {}",
                num(r[0]),
                num(r[1]),
                num(r[2]),
                num(r[3])
            );
            let mut row = vec![table.to_string()];
            row.extend(summary_row(label, &out));
            row.extend(r.iter().map(|&v| num(v)));
            rows.push(row);
            write_paths(run, &format!("paths_{label}.ndjson"), &out)?;
            outputs.push((label, out));
        }
        let mut header = vec!["table"];
        header.extend_from_slice(SUMMARY_COLUMNS);
        header.extend_from_slice(&["reference_mean", "reference_stdev", "reference_rfq_stdev", "reference_objective"]);
        run.csv("tables.csv", &header, rows)?;

        if exp == Experiment::TwoAsset {
            let get = |l: &str| &outputs.iter().find(|(x, _)| *x == l).expect("ran").1.summary;
            let (opt, myo, one) = (get("optimal"), get("myopic"), get("one_factor"));
            println!(
                "orderings: objective optimal > one-factor > myopic: {}; stdev myopic / optimal = {:.2}",
                opt.objective_conditional > one.objective_conditional
                    && one.objective_conditional > myo.objective_conditional,
                myo.stdev_pnl / opt.stdev_pnl
            );
        }
    }

    if matches!(stage, Stage::Adjust | Stage::All) {
        let stems: &[&str] = match exp {
            // the full-rank surface has no residual; the one-factor one does
            Experiment::TwoAsset => &["surface", "surface_1f"],
            Experiment::ThirtyAsset => &["surface"],
        };
        let mut eta_rows = Vec::new();
        let mut quote_rows = Vec::new();
        for stem in stems {
            let r = run_adjust(cfg, &surface(stem))?;
            print_adjust(stem, &r);
            let (e, q) = adjust_rows(stem, cfg, &r);
            eta_rows.push(e);
            quote_rows.extend(q);
            if exp == Experiment::ThirtyAsset {
                println!(
                    "θ̃ + η̂ = {} (reference {})",
                    num((r.theta + r.eta.value).round()),
                    num(REFERENCE_CORRECTED_30ASSET)
                );
            }
        }
        run.csv("eta.csv", ETA_COLUMNS, eta_rows)?;
        run.csv("adjust.csv", ADJUST_COLUMNS, quote_rows)?;
    }
    Ok(())
}
