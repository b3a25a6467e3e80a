//! Scenario files, sweep grids and CSV output for the `nads` binary.

pub mod grid;
pub mod scenario;

use nads::montecarlo::{run, SimPlan, SimResult};
use nads::system_perf::{optimize_concentration, DesignResult, PerformanceReport};
use nads::Hypothesis;
use rayon::prelude::*;
use scenario::Scenario;
use serde::Serialize;
use std::io::Write;
use std::path::Path;

#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error("{0}")]
    Config(String),
    #[error("{0}")]
    Cap(String),
    #[error("{0}")]
    Runtime(String),
    #[error("i/o: {0}")]
    Io(#[from] std::io::Error),
    #[error("csv: {0}")]
    Csv(#[from] csv::Error),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Config(_) => 2,
            CliError::Cap(_) => 3,
            _ => 1,
        }
    }
}

/// One analytic result row.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ReportRow {
    pub config_hash: String,
    pub method: &'static str,
    #[serde(rename = "M")]
    pub m: usize,
    pub n: usize,
    pub rho: f64,
    pub sigma_mcc: f64,
    pub eta1: f64,
    pub k: f64,
    pub alpha: f64,
    #[serde(rename = "Q_D")]
    pub q_d: f64,
    #[serde(rename = "Q_F")]
    pub q_f: f64,
    #[serde(rename = "V_THR")]
    pub v_thr: f64,
    #[serde(rename = "P_D")]
    pub p_d: f64,
    #[serde(rename = "P_F")]
    pub p_f: f64,
    #[serde(rename = "P_M")]
    pub p_m: f64,
}

/// One simulated proportion.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SimRow {
    pub config_hash: String,
    pub truth: Hypothesis,
    pub trials: u64,
    pub successes: u64,
    pub rate: f64,
    pub std_error: f64,
    pub ci_low: f64,
    pub ci_high: f64,
}

fn report_row(s: &Scenario, r: &PerformanceReport) -> Result<ReportRow, CliError> {
    let model = s.model()?;
    Ok(ReportRow {
        config_hash: s.hash(),
        method: r.method.label(),
        m: r.m,
        n: model.n,
        rho: model.rho.first().copied().unwrap_or(0.0),
        sigma_mcc: model.sigma_mcc,
        eta1: model.eta1,
        k: model.k,
        alpha: model.alpha,
        q_d: r.q_d,
        q_f: r.q_f,
        v_thr: r.v_thr,
        p_d: r.p_d,
        p_f: r.p_f,
        p_m: r.p_m,
    })
}

/// Grid points of a loaded scenario plus extra command-line axes.
pub fn points(s: &Scenario, extra: Vec<grid::Axis>) -> Result<Vec<Scenario>, CliError> {
    let file_axes = match &s.grid {
        Some(t) => grid::from_table(t)?,
        None => Vec::new(),
    };
    let pts = grid::expand(s, &grid::merge(file_axes, extra))?;
    for p in &pts {
        p.validate().map_err(|e| match e {
            CliError::Config(msg) => CliError::Config(format!("grid point {}: {msg}", p.hash())),
            other => other,
        })?;
    }
    Ok(pts)
}

/// Evaluates every point in parallel; rows come back in grid order.
pub fn analyze(points: &[Scenario]) -> Result<Vec<ReportRow>, CliError> {
    points
        .par_iter()
        .map(|p| report_row(p, &p.model()?.evaluate()?))
        .collect()
}

pub fn simulate(points: &[Scenario], truths: &[Hypothesis], trials: u64, seed: u64) -> Result<Vec<(SimRow, SimResult)>, CliError> {
    let mut out = Vec::new();
    for p in points {
        let model = p.model()?;
        for &truth in truths {
            let res = run(&SimPlan::new(model.clone(), truth, trials, seed))?;
            let n = &res.network;
            let row = SimRow {
                config_hash: p.hash(),
                truth,
                trials: n.trials,
                successes: n.successes,
                rate: n.rate,
                std_error: n.std_error,
                ci_low: n.ci_low,
                ci_high: n.ci_high,
            };
            out.push((row, res));
        }
    }
    Ok(out)
}

pub fn optimize(s: &Scenario, xi: Option<f64>, gamma: Option<f64>) -> Result<(DesignResult, Vec<ReportRow>), CliError> {
    let spec = s.design(xi, gamma)?;
    let res = optimize_concentration(&spec)?;
    let rows = res
        .rows
        .iter()
        .map(|r| {
            let mut p = s.clone();
            p.fusion.m = r.m;
            report_row(&p, r)
        })
        .collect::<Result<_, _>>()?;
    Ok((res, rows))
}

/// "M*=7, 0.007 SNM/nm³" or the infeasibility notice.
pub fn design_summary(res: &DesignResult, m_max: usize) -> String {
    match (res.m_star, res.concentration) {
        (Some(m), Some(c)) => format!("M*={m}, {c} SNM/nm³"),
        _ => format!("INFEASIBLE within m_max = {m_max}"),
    }
}

pub fn write_csv<T: Serialize>(rows: &[T], out: impl Write) -> Result<(), CliError> {
    let mut w = csv::Writer::from_writer(out);
    for r in rows {
        w.serialize(r)?;
    }
    w.flush()?;
    Ok(())
}

/// Writes each point as `<hash>.toml` under `dir`.
pub fn dump_configs(points: &[Scenario], dir: &Path) -> Result<(), CliError> {
    std::fs::create_dir_all(dir)?;
    for p in points {
        std::fs::write(dir.join(format!("{}.toml", p.hash())), p.to_toml())?;
    }
    Ok(())
}
