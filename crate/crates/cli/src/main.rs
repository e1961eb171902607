use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use clap::{Parser, Subcommand};
use serde_json::{json, Value};

use ctxpriv::climetrics::{
    bench_aggregation, bench_sppda_pairs, disclosure_csv, disclosure_curve, hunt_cells_csv, hunt_csv,
    montecarlo_hunt, pairs_csv, parse_b_grid, parse_grid, parse_strategy, run_scenarios, sha256_hex, strategy_label,
    timing_csv, write_output, ClusterSizeDist, DisclosureModel, HuntCampaign, Scheme, DEFAULT_OUT_DIR, OUT_DIR_ENV,
};
use ctxpriv::keymgmt::Wire;
use ctxpriv::netsim::SimRng;
use ctxpriv::phantom::min_zone_nodes;
use ctxpriv::pipeline::{run_pipeline, PipelineConfig};
use ctxpriv::ppda::{run_sppda_traced, Field, DEFAULT_MODULUS};

/// Context-privacy experiments for simulated sensor networks.
///
/// Outputs go to the directory named by CTXPRIV_OUT (default `out`).
#[derive(Parser)]
#[command(name = "ctxpriv", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Smallest flooding zone meeting a trace-back probability.
    PlanZone {
        #[arg(long = "pr")]
        p_r: f64,
        #[arg(long)]
        hops: u64,
    },
    /// Monte Carlo back-tracing campaign on a grid.
    SimulateHunt {
        /// Grid size as WxH.
        #[arg(long)]
        grid: String,
        /// flood, phantom:H, directed:H or twoway:L; repeatable.
        #[arg(long, required = true)]
        strategy: Vec<String>,
        #[arg(long, default_value_t = 100)]
        trials: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long, default_value_t = 2000)]
        budget: u32,
    },
    /// One private aggregation round between two sources and an aggregator.
    Aggregate {
        #[arg(long)]
        x: u64,
        #[arg(long)]
        y: u64,
        #[arg(long)]
        z: u64,
        #[arg(long, default_value_t = DEFAULT_MODULUS)]
        modulus: u64,
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
    /// Aggregation timing medians. Wall-clock output, not seeded.
    Bench {
        /// Cluster sizes as A..B (inclusive) or a comma list.
        #[arg(long, default_value = "3..12")]
        sizes: String,
        #[arg(long, default_value_t = 30)]
        reps: usize,
        /// Source-pair counts for the layer-2 scaling table.
        #[arg(long, value_delimiter = ',', default_value = "1,2,4,8")]
        pairs: Vec<usize>,
    },
    /// Disclosure probability against link-break probability.
    DisclosureCurve {
        /// start:end:step
        #[arg(long = "b-grid", default_value = "0:1:0.05")]
        b_grid: String,
        /// fixed:M, uniform:A-B or weights:A:p1,p2,...; repeatable.
        #[arg(long)]
        dist: Vec<String>,
        /// all_links or any_link; repeatable, defaults to both.
        #[arg(long)]
        model: Vec<String>,
    },
    /// Runs one pipeline configuration file.
    RunPipeline { config: PathBuf },
    /// Runs every scenario in a scenario file.
    RunScenarios { file: PathBuf },
}

fn out_dir() -> PathBuf {
    std::env::var_os(OUT_DIR_ENV).map_or_else(|| PathBuf::from(DEFAULT_OUT_DIR), PathBuf::from)
}

/// Writes CSV/JSON outputs plus a `<command>.json` summary holding the
/// config echo, the result and a digest of every output.
fn emit(dir: &Path, command: &str, config: Value, result: Value, files: Vec<(String, String)>) -> Result<()> {
    let mut digests = BTreeMap::new();
    for (name, contents) in &files {
        let path = write_output(dir, name, contents)?;
        digests.insert(name.clone(), sha256_hex(contents.as_bytes()));
        println!("wrote {}", path.display());
    }
    let summary = json!({ "command": command, "config": config, "result": result, "outputs": digests });
    let path = write_output(dir, &format!("{command}.json"), &(serde_json::to_string_pretty(&summary)? + "\n"))?;
    println!("wrote {}", path.display());
    Ok(())
}

fn parse_sizes(s: &str) -> Result<Vec<usize>> {
    if let Some((a, b)) = s.split_once("..") {
        let (a, b): (usize, usize) = (a.trim().parse()?, b.trim_start_matches('=').trim().parse()?);
        if a > b {
            bail!("empty size range `{s}`");
        }
        return Ok((a..=b).collect());
    }
    s.split(',').map(|x| Ok(x.trim().parse()?)).collect()
}

fn run(cli: Cli) -> Result<ExitCode> {
    let dir = out_dir();
    match cli.command {
        Command::PlanZone { p_r, hops } => {
            let plan = min_zone_nodes(p_r, hops)?;
            println!("N_min = {} (K = C({}, {}) = {})", plan.n_min, plan.n_min, hops, plan.k);
            emit(&dir, "plan_zone", json!({ "p_r": p_r, "hops": hops }), json!(plan), vec![])?;
        }
        Command::SimulateHunt {
            grid,
            strategy,
            trials,
            seed,
            budget,
        } => {
            let strategies = strategy.iter().map(|s| parse_strategy(s)).collect::<Result<Vec<_>, _>>()?;
            let campaign = HuntCampaign {
                grids: vec![parse_grid(&grid)?],
                strategies,
                trials,
                message_budget: budget,
                master_seed: seed,
            };
            let r = montecarlo_hunt(&campaign)?;
            for c in &r.cells {
                println!(
                    "{} {}x{}: median safety period {} (p25 {}, p75 {}), captured {}/{}",
                    c.strategy, c.grid_w, c.grid_h, c.safety_median, c.safety_p25, c.safety_p75, c.captured, c.trials
                );
            }
            let config = json!({
                "grid": grid,
                "strategies": campaign.strategies.iter().map(strategy_label).collect::<Vec<_>>(),
                "trials": trials, "seed": seed, "budget": budget,
            });
            let files = vec![("hunt.csv".into(), hunt_csv(&r.rows)?), ("hunt_cells.csv".into(), hunt_cells_csv(&r.cells)?)];
            emit(&dir, "simulate_hunt", config, json!(r.cells), files)?;
        }
        Command::Aggregate {
            x,
            y,
            z,
            modulus,
            seed,
        } => {
            let field = Field::new(modulus)?;
            let round = run_sppda_traced(
                field.elem(x),
                field.elem(y),
                field.elem(z),
                &mut SimRng::new(seed, "aggregate"),
                &mut Wire::new(),
            )?;
            println!("D = {}, pair_sum = {}", round.result.d, round.result.pair_sum);
            let config = json!({ "x": x, "y": y, "z": z, "modulus": modulus, "seed": seed });
            let transcript = round.transcript.to_json() + "\n";
            emit(&dir, "aggregate", config, json!(round.result), vec![("aggregate_transcript.json".into(), transcript)])?;
        }
        Command::Bench { sizes, reps, pairs } => {
            let sizes = parse_sizes(&sizes)?;
            let rows = bench_aggregation(&sizes, reps)?;
            let prow = bench_sppda_pairs(&pairs, reps)?;
            for r in &rows {
                println!("{} n={}: median {} ns", r.scheme, r.n, r.median_ns);
            }
            for r in &prow {
                println!("sppda pairs={}: median {} ns", r.pairs, r.median_ns);
            }
            let config = json!({ "sizes": sizes, "reps": reps, "pairs": pairs });
            let files = vec![("bench.csv".into(), timing_csv(&rows)?), ("bench_pairs.csv".into(), pairs_csv(&prow)?)];
            emit(&dir, "bench", config, json!({ "aggregation": rows, "pairs": prow }), files)?;
        }
        Command::DisclosureCurve { b_grid, dist, model } => {
            let grid = parse_b_grid(&b_grid)?;
            let models = if model.is_empty() {
                vec![DisclosureModel::AllLinks, DisclosureModel::AnyLink]
            } else {
                model.iter().map(|m| m.parse()).collect::<Result<Vec<DisclosureModel>, _>>()?
            };
            let mut schemes = vec![Scheme::Sppda];
            for d in &dist {
                let d: ClusterSizeDist = d.parse()?;
                schemes.extend(models.iter().map(|m| Scheme::Cpda {
                    dist: d.clone(),
                    model: *m,
                }));
            }
            let rows = disclosure_curve(&grid, &schemes)?;
            let csv = disclosure_csv(&rows)?;
            println!("{} rows over {} schemes", rows.len(), schemes.len());
            let config = json!({
                "b_grid": b_grid, "dists": dist,
                "models": models.iter().map(|m| m.name()).collect::<Vec<_>>(),
                "schemes": schemes.iter().map(|s| s.label()).collect::<Vec<_>>(),
            });
            emit(&dir, "disclosure_curve", config, json!({ "rows": rows.len() }), vec![("disclosure.csv".into(), csv)])?;
        }
        Command::RunPipeline { config } => {
            let text = std::fs::read_to_string(&config).with_context(|| format!("reading {}", config.display()))?;
            let cfg = PipelineConfig::from_toml(&text).with_context(|| format!("parsing {}", config.display()))?;
            let report = run_pipeline(&cfg)?;
            for r in &report.hg_records {
                println!("message {} from {}: {:?} {}", r.message, r.origin, r.kind, r.value);
            }
            let csv = report.messages_csv()?;
            let files = vec![("pipeline_report.json".into(), report.to_json() + "\n"), ("pipeline_messages.csv".into(), csv)];
            emit(&dir, "run_pipeline", json!(cfg), json!(report.hg_records), files)?;
        }
        Command::RunScenarios { file } => {
            let summary = run_scenarios(&file, &dir)?;
            for o in &summary.outcomes {
                println!("{} {} ({}): {}", if o.passed { "PASS" } else { "FAIL" }, o.name, o.kind, o.detail);
            }
            if !summary.outcomes.is_empty() {
                emit(&dir, "run_scenarios", json!({ "file": file }), json!(summary), vec![])?;
            }
            if !summary.all_passed() {
                return Ok(ExitCode::FAILURE);
            }
        }
    }
    Ok(ExitCode::SUCCESS)
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(2)
        }
    }
}
