//! Command-line front end: scenario ingestion, run orchestration and
//! artifact export.

use std::fs;
use std::path::{Path, PathBuf};

use clap::{Parser, ValueEnum};
use rayon::prelude::*;
use serde_json::{json, Value};

use crate::control::{optimality_probe, ControlPolicy};
use crate::dynamics::{run_with, RunOptions};
use crate::error::{Error, Result};
use crate::metrics::RunRecord;
use crate::output::{self, fmt_num, num, pretty};
use crate::pooling::{dp_optimize, DpResult, PoolingPolicy};
use crate::scenario::{PoolingMode, ResolvedConfig, Scenario};

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
pub enum Command {
    /// Run the scenario and export series, snapshots and summary.
    Simulate,
    /// Optimize the pooling size and export the chosen sizes.
    Pool,
    /// Compare density-based control with random admissible controls.
    Probe,
    /// Run every combination of `--set key=v1|v2|...` values.
    Sweep,
    /// Re-run with half the distance step and compare deliveries.
    Convergence,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
pub enum Format {
    Csv,
    Json,
}

#[derive(Clone, Debug, Parser)]
#[command(
    name = "bathtub",
    version,
    about = "Bathtub model of ride-sourcing traffic"
)]
pub struct RunRequest {
    #[arg(value_enum)]
    pub command: Command,
    pub scenario: PathBuf,
    /// Override a scenario key, `key=value`.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    pub overrides: Vec<String>,
    #[arg(long = "out", default_value = "out")]
    pub out: PathBuf,
    #[arg(long, value_enum, default_value = "csv")]
    pub format: Format,
    /// Snapshot every N base steps; 0 disables snapshots.
    #[arg(long, default_value_t = 10)]
    pub stride: usize,
    /// Use the literal pseudocode idle-fleet update.
    #[arg(long)]
    pub paper_fdm: bool,
    /// Re-evaluate the metering cap at every saturated step.
    #[arg(long)]
    pub recompute_cap: bool,
    /// Random alternatives for `probe`.
    #[arg(long, default_value_t = 200)]
    pub alternatives: usize,
    /// Seed for `probe`.
    #[arg(long, default_value_t = 7)]
    pub seed: u64,
}

fn resolve(req: &RunRequest, overrides: &[(String, String)]) -> Result<ResolvedConfig> {
    let text = fs::read_to_string(&req.scenario)
        .map_err(|e| Error::Config(format!("{}: {e}", req.scenario.display())))?;
    let mut cfg = ResolvedConfig::parse(&text, &req.scenario.display().to_string())?;
    for (k, v) in overrides {
        cfg.set(k, v)?;
    }
    if req.paper_fdm {
        cfg.set("paper_fdm", "true")?;
    }
    if req.recompute_cap {
        cfg.set("control.recompute_cap", "true")?;
    }
    Ok(cfg)
}

fn split_overrides(req: &RunRequest) -> Result<Vec<(String, String)>> {
    req.overrides
        .iter()
        .map(|o| {
            o.split_once('=')
                .map(|(k, v)| (k.trim().to_string(), v.trim().to_string()))
                .ok_or_else(|| Error::Config(format!("override `{o}` is not key=value")))
        })
        .collect()
}

fn write(dir: &Path, name: &str, body: &str) -> Result<PathBuf> {
    let p = dir.join(name);
    fs::write(&p, body).map_err(|e| Error::Io(format!("{}: {e}", p.display())))?;
    Ok(p)
}

/// Pooling policy for a scenario, optimizing first when it asks for DP.
fn pooling_for(sc: &Scenario<f64>) -> Result<(PoolingPolicy<f64>, Option<DpResult<f64>>)> {
    if sc.pooling == PoolingMode::Dp {
        let dp = dp_optimize(sc, sc.dp.bins, sc.dp.rollouts, sc.dp.seed)?;
        let p = PoolingPolicy::Schedule {
            stage_h: dp.stage_h,
            sizes: dp.sizes.clone(),
        };
        Ok((p, Some(dp)))
    } else {
        Ok((PoolingPolicy::from_scenario(sc)?, None))
    }
}

fn simulate_into(
    req: &RunRequest,
    cfg: &ResolvedConfig,
    dir: &Path,
) -> Result<(Vec<PathBuf>, RunRecord<f64>, Option<DpResult<f64>>)> {
    let sc: Scenario<f64> = cfg.build()?;
    let hash = cfg.hash();
    let (pool, dp) = pooling_for(&sc)?;
    let opts = RunOptions::default().snapshots(req.stride);
    let rec = run_with(&sc, ControlPolicy::from_scenario(&sc)?, pool, &opts)?;
    fs::create_dir_all(dir)?;
    let series = rec.base_series();
    let mut files = Vec::new();
    match req.format {
        Format::Csv => {
            files.push(write(dir, "series.csv", &output::series_csv(&series))?);
            files.push(write(
                dir,
                "snapshots.csv",
                &output::snapshots_csv(&rec.snapshots, rec.dx, rec.pooled),
            )?);
        }
        Format::Json => {
            files.push(write(
                dir,
                "series.json",
                &output::series_json(&series, &hash),
            )?);
            files.push(write(
                dir,
                "snapshots.json",
                &output::snapshots_json(&rec.snapshots, rec.dx, rec.pooled, &hash),
            )?);
        }
    }
    files.push(write(
        dir,
        "summary.json",
        &output::summary_json(&rec.summary(), &hash),
    )?);
    Ok((files, rec, dp))
}

fn pool(req: &RunRequest, cfg: &mut ResolvedConfig) -> Result<Vec<PathBuf>> {
    if cfg.get("pooling.mode").as_deref() == Some("none") {
        cfg.set("pooling.mode", "dp")?;
    }
    let hash = cfg.hash();
    let (mut files, rec, dp) = simulate_into(req, cfg, &req.out)?;
    let series = rec.base_series();
    let mut c_csv = String::from("t_min,c\n");
    for r in &series {
        c_csv.push_str(&format!("{},{}\n", fmt_num(r.t * 60.0), r.c));
    }
    files.push(write(&req.out, "c_series.csv", &c_csv)?);
    let mut report = json!({
        "Z_pax_h": num(rec.cost),
        "zbar_min_per_trip": rec.zbar().map(|z| num(z * 60.0)),
        "config_hash": hash,
    });
    if let Some(dp) = dp {
        report["stage_min"] = num(dp.stage_h * 60.0);
        report["sizes"] = json!(dp.sizes);
        report["recovered_sizes"] = json!(dp.recovered_sizes);
        report["recovered_Z_pax_h"] = num(dp.recovered_cost);
        report["table_Z_pax_h"] = dp.table_value.map(num).unwrap_or(Value::Null);
        report["constant_Z_pax_h"] = Value::Object(
            dp.constant_costs
                .iter()
                .map(|(c, z)| (c.to_string(), num(*z)))
                .collect(),
        );
        report["rollouts"] = json!(dp.rollouts);
        report["exhaustive"] = json!(dp.exhaustive);
        report["fallbacks"] = json!(dp.fallbacks);
    }
    files.push(write(&req.out, "pool_report.json", &pretty(&report))?);
    Ok(files)
}

fn probe(req: &RunRequest, cfg: &ResolvedConfig) -> Result<Vec<PathBuf>> {
    let sc: Scenario<f64> = cfg.build()?;
    let rep = optimality_probe(&sc, req.alternatives, req.seed)?;
    fs::create_dir_all(&req.out)?;
    let mut csv = String::from("index,Z_pax_h,note\n");
    for a in &rep.alternatives {
        csv.push_str(&format!(
            "{},{},{}\n",
            a.index,
            a.cost.map(fmt_num).unwrap_or_default(),
            a.note.clone().unwrap_or_default().replace([',', '\n'], ";")
        ));
    }
    let best = rep.best_alternative();
    let report = json!({
        "pass": rep.pass(),
        "seed": rep.seed,
        "alternatives": rep.alternatives.len(),
        "excluded": rep.excluded(),
        "horizon_min": num(rep.horizon_h * 60.0),
        "db_Z_pax_h": num(rep.db_cost),
        "best_alternative": best.map(|b| b.0),
        "best_alternative_Z_pax_h": best.map(|b| num(b.1)),
        "tolerance": rep.tolerance,
        "config_hash": cfg.hash(),
    });
    Ok(vec![
        write(&req.out, "probe_alternatives.csv", &csv)?,
        write(&req.out, "probe_report.json", &pretty(&report))?,
    ])
}

fn convergence(req: &RunRequest, cfg: &ResolvedConfig) -> Result<Vec<PathBuf>> {
    let coarse: Scenario<f64> = cfg.build()?;
    let mut fine_cfg = cfg.clone();
    fine_cfg.set("dx_km", &format!("{:?}", coarse.dx_km / 2.0))?;
    let fine: Scenario<f64> = fine_cfg.build()?;
    let run = |sc: &Scenario<f64>| -> Result<RunRecord<f64>> {
        let (pool, _) = pooling_for(sc)?;
        run_with(
            sc,
            ControlPolicy::from_scenario(sc)?,
            pool,
            &RunOptions::default(),
        )
    };
    let (a, b) = rayon::join(|| run(&coarse), || run(&fine));
    let (a, b) = (a?, b?);
    let (da, db) = (a.last().cum_d, b.last().cum_d);
    let rel = if da.abs().max(db.abs()) > 0.0 {
        (db - da).abs() / da.abs().max(db.abs())
    } else {
        0.0
    };
    fs::create_dir_all(&req.out)?;
    let report = json!({
        "dx_km": [num(coarse.dx_km), num(fine.dx_km)],
        "cumD": [num(da), num(db)],
        "relative_change": num(rel),
        "pass": rel < 0.02,
        "config_hash": cfg.hash(),
    });
    Ok(vec![write(&req.out, "convergence.json", &pretty(&report))?])
}

fn sweep(req: &RunRequest) -> Result<Vec<PathBuf>> {
    let axes = split_overrides(req)?;
    let mut points: Vec<Vec<(String, String)>> = vec![vec![]];
    for (k, vals) in &axes {
        let mut next = Vec::new();
        for p in &points {
            for v in vals.split('|').map(str::trim) {
                let mut q = p.clone();
                q.push((k.clone(), v.to_string()));
                next.push(q);
            }
        }
        points = next;
    }
    fs::create_dir_all(&req.out)?;
    let results: Vec<Result<(Vec<PathBuf>, RunRecord<f64>, String)>> = points
        .par_iter()
        .enumerate()
        .map(|(i, ov)| {
            let cfg = resolve(req, ov)?;
            let dir = req.out.join(format!("point_{i:03}"));
            let (files, rec, _) = simulate_into(req, &cfg, &dir)?;
            Ok((files, rec, cfg.hash()))
        })
        .collect();
    let mut files = Vec::new();
    let mut index =
        String::from("point,overrides,gridlock_time_min,zbar_min_per_trip,max_rho,config_hash\n");
    for (i, (ov, res)) in points.iter().zip(results).enumerate() {
        let (f, rec, hash) = res?;
        files.extend(f);
        let s = rec.summary();
        let ov_text = ov
            .iter()
            .map(|(k, v)| format!("{k}={v}"))
            .collect::<Vec<_>>()
            .join(";");
        index.push_str(&format!(
            "{i},{ov_text},{},{},{},{hash}\n",
            s.gridlock_time_min.map(fmt_num).unwrap_or_default(),
            s.zbar_min_per_trip.map(fmt_num).unwrap_or_default(),
            fmt_num(s.max_rho)
        ));
    }
    files.push(write(&req.out, "index.csv", &index)?);
    Ok(files)
}

/// Runs a request and returns the files written.
pub fn execute(req: &RunRequest) -> Result<Vec<PathBuf>> {
    if req.command == Command::Sweep {
        return sweep(req);
    }
    let ov = split_overrides(req)?;
    if let Some((k, _)) = ov.iter().find(|(_, v)| v.contains('|')) {
        return Err(Error::Config(format!(
            "`{k}` lists several values; use the sweep command"
        )));
    }
    let mut cfg = resolve(req, &ov)?;
    match req.command {
        Command::Simulate => Ok(simulate_into(req, &cfg, &req.out)?.0),
        Command::Pool => pool(req, &mut cfg),
        Command::Probe => probe(req, &cfg),
        Command::Convergence => convergence(req, &cfg),
        Command::Sweep => unreachable!(),
    }
}

/// Parses arguments, runs, reports errors on stderr and returns the exit code.
pub fn main_with_args<I, S>(args: I) -> i32
where
    I: IntoIterator<Item = S>,
    S: Into<std::ffi::OsString> + Clone,
{
    let req = match RunRequest::try_parse_from(args) {
        Ok(r) => r,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { 2 } else { 0 };
        }
    };
    match execute(&req) {
        Ok(files) => {
            for f in files {
                log::info!("wrote {}", f.display());
            }
            0
        }
        Err(e) => {
            eprintln!("bathtub: {e}");
            e.exit_code()
        }
    }
}
