use std::fs::{self, File};
use std::io::{BufWriter, Write};
use std::path::Path;

use serde::Deserialize;

use super::{Experiment, RegretSeries};
use crate::error::{Error, Result};
use crate::policy::write_checkpoint;

pub const RUNS_HEADER: &[&str] = &["run", "t", "arm", "reward", "regret", "cum_regret"];
pub const RUNS_HEADER_AUDIT: &[&str] = &[
    "run",
    "t",
    "arm",
    "reward",
    "regret",
    "cum_regret",
    "mean_energy",
    "z_max",
    "ratio",
    "bound",
];
pub const AGGREGATE_HEADER: &[&str] = &["t", "mean_cum_regret", "stderr_cum_regret"];

/// One row of the per-step CSV. `t` is 1-based. Audit columns are filled
/// only on sampled steps.
#[derive(Debug, Clone, PartialEq, Deserialize)]
pub struct StepRow {
    pub run: usize,
    pub t: usize,
    pub arm: usize,
    pub reward: f64,
    pub regret: f64,
    pub cum_regret: f64,
    #[serde(default)]
    pub mean_energy: Option<f64>,
    #[serde(default)]
    pub z_max: Option<f64>,
    #[serde(default)]
    pub ratio: Option<f64>,
    #[serde(default)]
    pub bound: Option<f64>,
}

fn csv_err(path: &Path, e: csv::Error) -> Error {
    match e.into_kind() {
        csv::ErrorKind::Io(io) => Error::io(path, io),
        other => Error::parse(path.display().to_string(), format!("{other:?}")),
    }
}

fn create(path: &Path) -> Result<csv::Writer<BufWriter<File>>> {
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    Ok(csv::Writer::from_writer(BufWriter::new(file)))
}

// `{}` on f64 prints the shortest string that parses back to the same value.
fn num(v: f64) -> String {
    format!("{v}")
}

/// Writes every step of every completed run.
pub fn write_runs_csv(path: &Path, exp: &Experiment) -> Result<()> {
    let audit = exp.config.audit_bound;
    let mut w = create(path)?;
    let header = if audit { RUNS_HEADER_AUDIT } else { RUNS_HEADER };
    w.write_record(header).map_err(|e| csv_err(path, e))?;
    for trace in &exp.runs {
        let mut audits = trace.audits.iter().peekable();
        let mut cum = 0.0;
        for i in 0..trace.len() {
            let t = i + 1;
            cum += trace.regrets[i];
            let mut row = vec![
                trace.run.to_string(),
                t.to_string(),
                trace.arms[i].to_string(),
                num(trace.rewards[i]),
                num(trace.regrets[i]),
                num(cum),
            ];
            if audit {
                match audits.next_if(|a| a.0 == t) {
                    Some((_, r)) => row.extend([num(r.mean_energy), num(r.z_max), num(r.ratio), num(r.bound)]),
                    None => row.extend(std::iter::repeat_n(String::new(), 4)),
                }
            }
            w.write_record(&row).map_err(|e| csv_err(path, e))?;
        }
    }
    w.flush().map_err(|e| Error::io(path, e))
}

pub fn read_runs_csv(path: &Path) -> Result<Vec<StepRow>> {
    let mut r = csv::Reader::from_path(path).map_err(|e| csv_err(path, e))?;
    r.deserialize().map(|row| row.map_err(|e| csv_err(path, e))).collect()
}

pub fn write_aggregate_csv(path: &Path, series: &RegretSeries) -> Result<()> {
    let mut w = create(path)?;
    w.write_record(AGGREGATE_HEADER).map_err(|e| csv_err(path, e))?;
    for (i, (m, s)) in series.mean.iter().zip(&series.stderr).enumerate() {
        w.write_record([(i + 1).to_string(), num(*m), num(*s)])
            .map_err(|e| csv_err(path, e))?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

#[derive(Deserialize)]
struct AggregateRow {
    t: usize,
    mean_cum_regret: f64,
    stderr_cum_regret: f64,
}

/// Reads an aggregate CSV; `runs` is unknown from the file and set to 0.
pub fn read_aggregate_csv(path: &Path) -> Result<RegretSeries> {
    let mut r = csv::Reader::from_path(path).map_err(|e| csv_err(path, e))?;
    let mut mean = Vec::new();
    let mut stderr = Vec::new();
    for row in r.deserialize::<AggregateRow>() {
        let row = row.map_err(|e| csv_err(path, e))?;
        if row.t != mean.len() + 1 {
            return Err(Error::parse(path.display().to_string(), format!("expected t={}, found {}", mean.len() + 1, row.t)));
        }
        mean.push(row.mean_cum_regret);
        stderr.push(row.stderr_cum_regret);
    }
    Ok(RegretSeries { mean, stderr, runs: 0 })
}

/// Combined sweep CSV: `alpha,t,mean_cum_regret,stderr_cum_regret`.
pub fn write_sweep_csv(path: &Path, sweep: &[(f64, RegretSeries)]) -> Result<()> {
    let mut w = create(path)?;
    w.write_record(["alpha", "t", "mean_cum_regret", "stderr_cum_regret"])
        .map_err(|e| csv_err(path, e))?;
    for (alpha, series) in sweep {
        for (i, (m, s)) in series.mean.iter().zip(&series.stderr).enumerate() {
            w.write_record([num(*alpha), (i + 1).to_string(), num(*m), num(*s)])
                .map_err(|e| csv_err(path, e))?;
        }
    }
    w.flush().map_err(|e| Error::io(path, e))
}

/// Writes `runs.csv`, `aggregate.csv`, the resolved `config.toml` and, when
/// kept, one parameter checkpoint per run into `dir`.
pub fn write_experiment(dir: &Path, exp: &Experiment) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    write_runs_csv(&dir.join("runs.csv"), exp)?;
    if !exp.runs.is_empty() {
        write_aggregate_csv(&dir.join("aggregate.csv"), &exp.series()?)?;
    }
    let config = toml::to_string(&exp.config).map_err(|e| Error::parse("config", e))?;
    let path = dir.join("config.toml");
    fs::write(&path, config).map_err(|e| Error::io(&path, e))?;
    for trace in &exp.runs {
        if let Some(params) = &trace.params {
            let path = dir.join(format!("params_run{}.txt", trace.run));
            let file = File::create(&path).map_err(|e| Error::io(&path, e))?;
            let mut out = BufWriter::new(file);
            write_checkpoint(params, &mut out)
                .and_then(|_| out.flush())
                .map_err(|e| Error::io(&path, e))?;
        }
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::harness::{run_experiment, AgentKind, EnvKind, RunConfig};

    fn small(agent: AgentKind, audit: bool) -> RunConfig {
        let mut cfg = RunConfig::new(EnvKind::Bernoulli, agent).with_horizon(220).with_runs(2).with_seed(9);
        cfg.agent_config.hidden = 6;
        cfg.audit_bound = audit;
        cfg
    }

    #[test]
    fn runs_csv_round_trips() {
        let dir = tempfile::tempdir().unwrap();
        let exp = run_experiment(&small(AgentKind::EnergyRnn, true)).unwrap();
        let path = dir.path().join("runs.csv");
        write_runs_csv(&path, &exp).unwrap();
        let rows = read_runs_csv(&path).unwrap();
        assert_eq!(rows.len(), 440);
        let first = std::fs::read_to_string(&path).unwrap();
        assert_eq!(first.lines().next().unwrap(), RUNS_HEADER_AUDIT.join(","));
        for row in &rows {
            let trace = &exp.runs[row.run];
            let i = row.t - 1;
            assert_eq!(row.arm, trace.arms[i]);
            assert_eq!(row.reward, trace.rewards[i]);
            assert_eq!(row.regret, trace.regrets[i]);
            assert_eq!(row.cum_regret, trace.cumulative_regret()[i]);
            assert_eq!(row.z_max.is_some(), row.t % 100 == 0);
        }
        let audited = rows.iter().find(|r| r.t == 200 && r.run == 1).unwrap();
        assert_eq!(audited.z_max, Some(exp.runs[1].audits[1].1.z_max));
    }

    #[test]
    fn aggregate_matches_recomputation() {
        let dir = tempfile::tempdir().unwrap();
        let exp = run_experiment(&small(AgentKind::Thompson, false)).unwrap();
        write_experiment(dir.path(), &exp).unwrap();
        let rows = read_runs_csv(&dir.path().join("runs.csv")).unwrap();
        let agg = read_aggregate_csv(&dir.path().join("aggregate.csv")).unwrap();
        assert_eq!(agg.horizon(), 220);
        for t in 1..=220 {
            let at: Vec<f64> = rows.iter().filter(|r| r.t == t).map(|r| r.cum_regret).collect();
            let mean = at.iter().sum::<f64>() / at.len() as f64;
            assert!((agg.mean[t - 1] - mean).abs() < 1e-12);
        }
        let header = std::fs::read_to_string(dir.path().join("runs.csv")).unwrap();
        assert!(header.starts_with("run,t,arm,reward,regret,cum_regret\n"));
        let cfg: RunConfig = toml::from_str(&std::fs::read_to_string(dir.path().join("config.toml")).unwrap()).unwrap();
        assert_eq!(cfg, exp.config);
    }

    #[test]
    fn same_seed_same_bytes() {
        let dir = tempfile::tempdir().unwrap();
        let cfg = small(AgentKind::EnergyRnn, true);
        let a = dir.path().join("a");
        let b = dir.path().join("b");
        write_experiment(&a, &run_experiment(&cfg).unwrap()).unwrap();
        write_experiment(&b, &run_experiment(&cfg).unwrap()).unwrap();
        for f in ["runs.csv", "aggregate.csv", "config.toml"] {
            assert_eq!(std::fs::read(a.join(f)).unwrap(), std::fs::read(b.join(f)).unwrap(), "{f}");
        }
    }

    #[test]
    fn checkpoints_are_written_and_readable() {
        let dir = tempfile::tempdir().unwrap();
        let mut cfg = small(AgentKind::EnergyRnn, false);
        cfg.keep_params = true;
        let exp = run_experiment(&cfg).unwrap();
        write_experiment(dir.path(), &exp).unwrap();
        let file = std::fs::File::open(dir.path().join("params_run1.txt")).unwrap();
        let params = crate::policy::read_checkpoint(std::io::BufReader::new(file)).unwrap();
        assert_eq!(Some(params), exp.runs[1].params);
    }

    #[test]
    fn unwritable_path_is_an_io_error() {
        let exp = run_experiment(&small(AgentKind::Swa, false)).unwrap();
        let err = write_runs_csv(Path::new("/nonexistent-dir/x/runs.csv"), &exp).unwrap_err();
        assert!(matches!(err, Error::Io { .. }), "{err}");
    }
}
