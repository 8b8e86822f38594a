//! CSV outputs and the portable parameter file.

use std::io::{BufRead, Write};
use std::path::Path;

use super::run::{mean_std, ExperimentResult};
use crate::error::{Error, Result};
use crate::metrics;
use crate::qpn::{QpnParams, LAYER_DIMS, PARAM_COUNT};

/// Column order of the per-session CSV.
pub const SESSION_COLUMNS: [&str; 12] = [
    "session",
    "policy",
    "seed",
    "user",
    "chosen_arm",
    "oracle_arm",
    "reward",
    "expected_reward",
    "oracle_expected_reward",
    "solicited",
    "cum_regret",
    "cum_m_regret",
];

pub const SUMMARY_COLUMNS: [&str; 13] = [
    "policy",
    "schedule",
    "aggregation",
    "runs",
    "sessions",
    "average_qoe_mean",
    "average_qoe_std",
    "regret_mean",
    "regret_std",
    "m_regret_mean",
    "m_regret_std",
    "solicitations_mean",
    "refine_converged_fraction",
];

pub const CURVE_COLUMNS: [&str; 8] = [
    "session",
    "policy",
    "regret_mean",
    "regret_std",
    "m_regret_mean",
    "m_regret_std",
    "cost_mean",
    "reward_mean",
];

/// One row per (run, session).
pub fn write_sessions_csv<W: Write>(result: &ExperimentResult, out: W) -> Result<()> {
    let policy = result.config.policy.to_string();
    let lambda = result.config.lambda;
    let mut w = csv::Writer::from_writer(out);
    w.write_record(SESSION_COLUMNS)?;
    for run in &result.runs {
        let regret = metrics::cumulative_regret(&run.logs);
        let m_regret = metrics::m_regret(&run.logs, lambda);
        for ((log, r), m) in run.logs.iter().zip(&regret).zip(&m_regret) {
            w.write_record([
                log.session.to_string(),
                policy.clone(),
                run.seed.to_string(),
                run.user.to_string(),
                log.chosen_arm.to_string(),
                log.oracle_arm.to_string(),
                log.reward.to_string(),
                log.expected_reward.to_string(),
                log.oracle_expected_reward.to_string(),
                (log.solicited as u8).to_string(),
                r.to_string(),
                m.to_string(),
            ])?;
        }
    }
    w.flush()?;
    Ok(())
}

/// Mean ± std curves across all runs.
pub fn write_curves_csv<W: Write>(result: &ExperimentResult, out: W) -> Result<()> {
    let policy = result.config.policy.to_string();
    let lambda = result.config.lambda;
    let (regret, regret_sd) = result.series_stats(metrics::cumulative_regret);
    let (m_regret, m_regret_sd) = result.series_stats(|l| metrics::m_regret(l, lambda));
    let cost = result.mean_cost();
    let (reward, _) = result.series_stats(|l| l.iter().map(|s| s.reward).collect());
    let mut w = csv::Writer::from_writer(out);
    w.write_record(CURVE_COLUMNS)?;
    for t in 0..regret.len() {
        w.write_record([
            (t + 1).to_string(),
            policy.clone(),
            regret[t].to_string(),
            regret_sd[t].to_string(),
            m_regret[t].to_string(),
            m_regret_sd[t].to_string(),
            cost[t].to_string(),
            reward[t].to_string(),
        ])?;
    }
    w.flush()?;
    Ok(())
}

pub fn summary_row(result: &ExperimentResult) -> Vec<String> {
    let cfg = &result.config;
    let finals = |series: Vec<Vec<f64>>| mean_std(&series.iter().filter_map(|s| s.last().copied()).collect::<Vec<_>>());
    let regret = finals(result.runs.iter().map(|r| metrics::cumulative_regret(&r.logs)).collect());
    let m_regret = finals(result.runs.iter().map(|r| metrics::m_regret(&r.logs, cfg.lambda)).collect());
    let asked: Vec<f64> = result
        .runs
        .iter()
        .map(|r| r.logs.iter().filter(|l| l.solicited).count() as f64)
        .collect();
    let (qoe, qoe_sd) = result.average_qoe();
    let stats = result.refine_stats();
    let converged = if stats.calls == 0 {
        String::new()
    } else {
        (stats.converged as f64 / stats.calls as f64).to_string()
    };
    vec![
        cfg.policy.to_string(),
        cfg.schedule.to_string(),
        format!("{:?}", cfg.aggregation).to_lowercase(),
        result.runs.len().to_string(),
        cfg.sessions.to_string(),
        qoe.to_string(),
        qoe_sd.to_string(),
        regret.0.to_string(),
        regret.1.to_string(),
        m_regret.0.to_string(),
        m_regret.1.to_string(),
        mean_std(&asked).0.to_string(),
        converged,
    ]
}

/// Summary table keyed by policy, one row per experiment.
pub fn write_summary_csv<W: Write>(results: &[&ExperimentResult], out: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(SUMMARY_COLUMNS)?;
    for r in results {
        w.write_record(summary_row(r))?;
    }
    w.flush()?;
    Ok(())
}

/// Writes `sessions.csv`, `curves.csv` and `summary.csv` into `dir`.
pub fn write_outputs(result: &ExperimentResult, dir: &Path) -> Result<()> {
    std::fs::create_dir_all(dir)?;
    let open = |name: &str| std::fs::File::create(dir.join(name)).map(std::io::BufWriter::new);
    write_sessions_csv(result, open("sessions.csv")?)?;
    write_curves_csv(result, open("curves.csv")?)?;
    write_summary_csv(&[result], open("summary.csv")?)?;
    Ok(())
}

const PARAMS_MAGIC: &str = "qpn-params v1";

/// Text parameter dump:
///
/// ```text
/// qpn-params v1
/// dims 7 8 16 8 1
/// <353 lines, one value each>
/// ```
///
/// Values follow layer order; within a layer the `(out, in)` weight matrix
/// comes first in row-major order, then the biases. Each value is written in
/// Rust's shortest round-trip decimal form.
pub fn write_params<W: Write>(params: &QpnParams, mut out: W) -> Result<()> {
    writeln!(out, "{PARAMS_MAGIC}")?;
    let dims: Vec<String> = LAYER_DIMS.iter().map(|d| d.to_string()).collect();
    writeln!(out, "dims {}", dims.join(" "))?;
    for v in params.flatten() {
        writeln!(out, "{v:?}")?;
    }
    out.flush()?;
    Ok(())
}

pub fn read_params<R: BufRead>(input: R) -> Result<QpnParams> {
    let mut lines = input.lines();
    let mut next = || -> Result<String> {
        lines
            .next()
            .transpose()?
            .ok_or_else(|| Error::ParamFormat("unexpected end of file".into()))
    };
    if next()?.trim() != PARAMS_MAGIC {
        return Err(Error::ParamFormat("missing header".into()));
    }
    let dims_line = next()?;
    let dims: Vec<usize> = dims_line
        .trim()
        .strip_prefix("dims")
        .ok_or_else(|| Error::ParamFormat("missing dims line".into()))?
        .split_whitespace()
        .map(|d| d.parse().map_err(|_| Error::ParamFormat(format!("bad dimension `{d}`"))))
        .collect::<Result<_>>()?;
    if dims != LAYER_DIMS {
        return Err(Error::ParamFormat(format!("unsupported layer dims {dims:?}")));
    }
    let mut values = Vec::with_capacity(PARAM_COUNT);
    for _ in 0..PARAM_COUNT {
        let line = next()?;
        values.push(
            line.trim()
                .parse::<f64>()
                .map_err(|_| Error::ParamFormat(format!("bad value `{line}`")))?,
        );
    }
    QpnParams::unflatten(&values)
}

pub fn save_params(params: &QpnParams, path: &Path) -> Result<()> {
    write_params(params, std::io::BufWriter::new(std::fs::File::create(path)?))
}

pub fn load_params(path: &Path) -> Result<QpnParams> {
    read_params(std::io::BufReader::new(std::fs::File::open(path)?))
}
