//! Replication sweeps over system sizes, result files and the limit-law
//! validation suite.

use std::collections::BTreeMap;
use std::io::{Read, Write};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::analysis::{
    balance_decay, cv, ks_exponential, lag_scaling_report, poisson_stream_test, AnalysisError, ReplicationSummary,
};
use crate::model::ModelParams;
use crate::seeds::replication_seed;
use crate::simulator::{
    delta_k, run, InitialCondition, MassAudit, ObserverSet, RunConfig, SimulationError, SimulationMode, StopRule,
    TrajectoryRecord, DEFAULT_EVENT_BUDGET,
};

pub const SUMMARY_HEADER: [&str; 11] = [
    "replication_id",
    "seed",
    "N",
    "T_N",
    "T_scaled",
    "L_delta",
    "L_scaled",
    "half_time",
    "explosion_span",
    "event_count",
    "truncated",
];

/// Seed groups of the inline validation runs, disjoint from sweep indices.
const STREAM_GROUP: u64 = u64::MAX - 1;
const BALANCE_GROUP: u64 = u64::MAX - 2;

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("config parse error: {0}")]
    Parse(#[from] serde_json::Error),
    #[error("invalid field `{field}`: {message}")]
    Invalid { field: &'static str, message: String },
}

fn invalid(field: &'static str, message: impl Into<String>) -> ConfigError {
    ConfigError::Invalid { field, message: message.into() }
}

#[derive(Debug, Error)]
pub enum ExperimentError {
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error(transparent)]
    Simulation(#[from] SimulationError),
    #[error("worker pool: {0}")]
    Pool(String),
    #[error("csv: {0}")]
    Csv(#[from] csv::Error),
    #[error("summary file: {0}")]
    Summary(String),
    #[error(transparent)]
    Analysis(#[from] AnalysisError),
    #[error("io: {0}")]
    Io(#[from] std::io::Error),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OutputPaths {
    #[serde(default = "default_summary")]
    pub summary: String,
    /// Directory for per-trajectory mass curves; none when absent.
    #[serde(default)]
    pub mass_curves: Option<String>,
    #[serde(default = "default_report")]
    pub report: String,
}

fn default_summary() -> String {
    "summary.csv".into()
}

fn default_report() -> String {
    "report.jsonl".into()
}

impl Default for OutputPaths {
    fn default() -> Self {
        OutputPaths { summary: default_summary(), mass_curves: None, report: default_report() }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ValidationTest {
    NucleationKs,
    NucleationMean,
    NucleationCv,
    PoissonDispersion,
    PoissonInterarrival,
    LagScaling,
    ExplosionSpan,
    BalanceDecay,
}

impl ValidationTest {
    pub const ALL: [ValidationTest; 8] = [
        ValidationTest::NucleationKs,
        ValidationTest::NucleationMean,
        ValidationTest::NucleationCv,
        ValidationTest::PoissonDispersion,
        ValidationTest::PoissonInterarrival,
        ValidationTest::LagScaling,
        ValidationTest::ExplosionSpan,
        ValidationTest::BalanceDecay,
    ];

    pub fn name(self) -> &'static str {
        match self {
            ValidationTest::NucleationKs => "nucleation_ks",
            ValidationTest::NucleationMean => "nucleation_mean",
            ValidationTest::NucleationCv => "nucleation_cv",
            ValidationTest::PoissonDispersion => "poisson_dispersion",
            ValidationTest::PoissonInterarrival => "poisson_interarrival",
            ValidationTest::LagScaling => "lag_scaling",
            ValidationTest::ExplosionSpan => "explosion_span",
            ValidationTest::BalanceDecay => "balance_decay",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ValidateSettings {
    /// Family-wise level, split evenly over the enabled tests.
    #[serde(default = "default_significance")]
    pub significance: f64,
    #[serde(default = "default_tests")]
    pub tests: Vec<ValidationTest>,
    /// Rescaled horizon of the inline truncated runs for the stream tests.
    #[serde(default = "default_stream_horizon")]
    pub stream_horizon: f64,
    /// Rescaled horizon of the inline balance runs.
    #[serde(default = "default_balance_horizon")]
    pub balance_horizon: f64,
    /// Replications of the inline runs; the sweep count when absent.
    #[serde(default)]
    pub inline_replications: Option<usize>,
}

fn default_significance() -> f64 {
    0.05
}
fn default_tests() -> Vec<ValidationTest> {
    ValidationTest::ALL.to_vec()
}
fn default_stream_horizon() -> f64 {
    3.0
}
fn default_balance_horizon() -> f64 {
    1.0
}

impl Default for ValidateSettings {
    fn default() -> Self {
        ValidateSettings {
            significance: default_significance(),
            tests: default_tests(),
            stream_horizon: default_stream_horizon(),
            balance_horizon: default_balance_horizon(),
            inline_replications: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub model: ModelParams,
    pub n_list: Vec<u64>,
    pub replications: usize,
    pub mode: SimulationMode,
    pub stop: StopRule,
    /// Lag-time threshold as a fraction of the total mass.
    pub delta: f64,
    #[serde(default = "pure_monomers")]
    pub init: InitialCondition,
    #[serde(default)]
    pub observers: ObserverSet,
    pub master_seed: u64,
    /// Parallel workers; the machine's parallelism when absent.
    #[serde(default)]
    pub worker_count: Option<usize>,
    #[serde(default = "default_budget")]
    pub event_budget: u64,
    #[serde(default)]
    pub output: OutputPaths,
    #[serde(default)]
    pub validate: ValidateSettings,
}

fn pure_monomers() -> InitialCondition {
    InitialCondition::PureMonomers
}

fn default_budget() -> u64 {
    DEFAULT_EVENT_BUDGET
}

impl ExperimentConfig {
    pub fn from_json(text: &str) -> Result<Self, ConfigError> {
        let config: ExperimentConfig = serde_json::from_str(text)?;
        config.validate()?;
        Ok(config)
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        self.model.validate().map_err(|e| invalid("model", e.to_string()))?;
        if self.n_list.is_empty() {
            return Err(invalid("n_list", "must not be empty"));
        }
        if self.n_list.windows(2).any(|w| w[1] <= w[0]) {
            return Err(invalid("n_list", "must be strictly increasing"));
        }
        if let Some(&n) = self.n_list.iter().find(|&&n| n < self.model.n_c as u64) {
            return Err(invalid("n_list", format!("N = {n} is below the nucleus size {}", self.model.n_c)));
        }
        if self.replications == 0 {
            return Err(invalid("replications", "must be at least 1"));
        }
        if !(self.delta > 0.0 && self.delta < 1.0) {
            return Err(invalid("delta", format!("{} is not in (0, 1)", self.delta)));
        }
        if self.worker_count == Some(0) {
            return Err(invalid("worker_count", "must be at least 1"));
        }
        let v = &self.validate;
        if !(v.significance > 0.0 && v.significance < 1.0) {
            return Err(invalid("validate.significance", format!("{} is not in (0, 1)", v.significance)));
        }
        if !(v.stream_horizon > 0.0 && v.balance_horizon > 0.0) {
            return Err(invalid("validate", "horizons must be positive"));
        }
        if v.inline_replications == Some(0) {
            return Err(invalid("validate.inline_replications", "must be at least 1"));
        }
        self.run_config().validate().map_err(|e| invalid("stop", e.to_string()))
    }

    pub fn run_config(&self) -> RunConfig {
        let mut observers = self.observers.clone();
        observers.lag_delta = Some(self.delta);
        RunConfig {
            mode: self.mode,
            init: self.init.clone(),
            stop: self.stop,
            observers,
            event_budget: self.event_budget,
        }
    }

    pub fn sweep(&self) -> Sweep {
        Sweep {
            params: self.model.clone(),
            n_list: self.n_list.clone(),
            replications: self.replications,
            run: self.run_config(),
            master_seed: self.master_seed,
            workers: self.worker_count,
        }
    }
}

/// Independent replications of one run configuration over several `N`.
#[derive(Debug, Clone, PartialEq)]
pub struct Sweep {
    pub params: ModelParams,
    pub n_list: Vec<u64>,
    pub replications: usize,
    pub run: RunConfig,
    pub master_seed: u64,
    pub workers: Option<usize>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ReplicationResult {
    pub n_index: usize,
    pub replication_id: u64,
    pub record: TrajectoryRecord,
}

impl ReplicationResult {
    pub fn summary(&self) -> ReplicationSummary {
        ReplicationSummary::from_record(&self.record, self.replication_id)
    }
}

/// Runs every `(N, replication)` pair; results are ordered by `(N, id)` and
/// do not depend on the number of workers.
pub fn run_sweep(sweep: &Sweep) -> Result<Vec<ReplicationResult>, ExperimentError> {
    let jobs: Vec<(usize, u64)> = (0..sweep.n_list.len())
        .flat_map(|i| (0..sweep.replications as u64).map(move |r| (i, r)))
        .collect();
    let work = || -> Result<Vec<ReplicationResult>, SimulationError> {
        jobs.par_iter()
            .map(|&(i, r)| {
                let seed = replication_seed(sweep.master_seed, i as u64, r);
                let record = run(&sweep.params, sweep.n_list[i], &sweep.run, seed)?;
                Ok(ReplicationResult { n_index: i, replication_id: r, record })
            })
            .collect()
    };
    let results = match sweep.workers {
        Some(w) => rayon::ThreadPoolBuilder::new()
            .num_threads(w)
            .build()
            .map_err(|e| ExperimentError::Pool(e.to_string()))?
            .install(work),
        None => work(),
    };
    Ok(results?)
}

fn fmt_float(x: f64) -> String {
    format!("{x:.16e}")
}

fn fmt_opt(x: Option<f64>) -> String {
    x.map(fmt_float).unwrap_or_default()
}

/// Writes summaries with a header row; floats carry 17 significant digits
/// and absent values are empty fields.
pub fn write_summary_csv<W: Write>(out: W, summaries: &[ReplicationSummary]) -> Result<(), ExperimentError> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(SUMMARY_HEADER)?;
    for s in summaries {
        w.write_record([
            s.replication_id.to_string(),
            s.seed.to_string(),
            s.n.to_string(),
            fmt_opt(s.t_n),
            fmt_opt(s.t_scaled),
            fmt_opt(s.l_delta),
            fmt_opt(s.l_scaled),
            fmt_opt(s.half_time),
            fmt_opt(s.explosion_span),
            s.event_count.to_string(),
            s.truncated.to_string(),
        ])?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_summary_csv<R: Read>(input: R) -> Result<Vec<ReplicationSummary>, ExperimentError> {
    let mut r = csv::Reader::from_reader(input);
    let headers = r.headers()?.clone();
    if headers.iter().ne(SUMMARY_HEADER.iter().copied()) {
        return Err(ExperimentError::Summary(format!("unexpected header {:?}", headers.iter().collect::<Vec<_>>())));
    }
    let mut out = Vec::new();
    for (line, row) in r.records().enumerate() {
        let row = row?;
        let bad = |col: &str| ExperimentError::Summary(format!("row {}: bad `{col}` value", line + 2));
        let int = |i: usize| row[i].parse::<u64>().map_err(|_| bad(SUMMARY_HEADER[i]));
        let opt = |i: usize| -> Result<Option<f64>, ExperimentError> {
            if row[i].is_empty() {
                Ok(None)
            } else {
                row[i].parse::<f64>().map(Some).map_err(|_| bad(SUMMARY_HEADER[i]))
            }
        };
        out.push(ReplicationSummary {
            replication_id: int(0)?,
            seed: int(1)?,
            n: int(2)?,
            t_n: opt(3)?,
            t_scaled: opt(4)?,
            l_delta: opt(5)?,
            l_scaled: opt(6)?,
            half_time: opt(7)?,
            explosion_span: opt(8)?,
            event_count: int(9)?,
            truncated: row[10].parse::<bool>().map_err(|_| bad("truncated"))?,
        });
    }
    Ok(out)
}

/// Mass curve of one trajectory: `t, t_scaled, stable_mass, polymerized_mass`.
pub fn write_mass_curve_csv<W: Write>(out: W, record: &TrajectoryRecord) -> Result<(), ExperimentError> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(["t", "t_scaled", "stable_mass", "polymerized_mass"])?;
    for p in &record.mass_curve {
        w.write_record([
            fmt_float(p.t),
            fmt_float(p.t / record.psi),
            p.stable_mass.to_string(),
            p.polymerized_mass.to_string(),
        ])?;
    }
    w.flush()?;
    Ok(())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ValidationRecord {
    pub name: String,
    /// Absent when the statistic could not be computed.
    pub statistic: Option<f64>,
    pub threshold: f64,
    pub pass: bool,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub detail: Option<String>,
}

impl ValidationRecord {
    fn failed(test: ValidationTest, threshold: f64, err: impl std::fmt::Display) -> Self {
        ValidationRecord { name: test.name().into(), statistic: None, threshold, pass: false, detail: Some(err.to_string()) }
    }

    fn upper(test: ValidationTest, statistic: f64, threshold: f64) -> Self {
        ValidationRecord { name: test.name().into(), statistic: Some(statistic), threshold, pass: statistic < threshold, detail: None }
    }
}

/// Tolerance on the relative deviation of the mean and CV of `T / Psi`.
pub const NUCLEATION_TOLERANCE: f64 = 0.15;
pub const DISPERSION_TOLERANCE: f64 = 0.2;
pub const LAG_RETENTION: f64 = 0.9;
pub const SPAN_GROWTH_LIMIT: f64 = 1.5;

/// Runs the enabled tests; one record per test, in configuration order.
///
/// Nucleation tests read `T / Psi` at the largest `N` of the summaries and
/// lag tests read every `N`. Stream and balance tests simulate inline
/// truncated runs from the configuration.
pub fn run_validation(
    config: &ExperimentConfig,
    summaries: &[ReplicationSummary],
) -> Result<Vec<ValidationRecord>, ExperimentError> {
    let settings = &config.validate;
    let level = settings.significance / settings.tests.len().max(1) as f64;
    let rho = config.model.rho_bar();
    let largest = summaries.iter().map(|s| s.n).max();
    let t_scaled: Vec<f64> =
        summaries.iter().filter(|s| Some(s.n) == largest).filter_map(|s| s.t_scaled).collect();
    let inline_reps = settings.inline_replications.unwrap_or(config.replications);

    let mut stream: Option<Result<crate::analysis::PoissonStreamReport, ExperimentError>> = None;
    let mut stream_report = |config: &ExperimentConfig| {
        stream
            .get_or_insert_with(|| {
                let n = *config.n_list.last().expect("validated");
                let sweep = Sweep {
                    params: config.model.clone(),
                    n_list: vec![n],
                    replications: inline_reps,
                    run: RunConfig::new(SimulationMode::Truncated, StopRule::StreamWindow { t: settings.stream_horizon })
                        .with_budget(config.event_budget),
                    master_seed: replication_seed(config.master_seed, STREAM_GROUP, 0),
                    workers: config.worker_count,
                };
                let results = run_sweep(&sweep)?;
                let times: Vec<Vec<f64>> = results
                    .iter()
                    .map(|r| r.record.nucleation_event_times.iter().map(|t| t / r.record.psi).collect())
                    .collect();
                Ok(poisson_stream_test(&times, rho, settings.stream_horizon, level)?)
            })
            .as_ref()
            .map_err(|e| e.to_string())
            .cloned()
    };

    let mut records = Vec::with_capacity(settings.tests.len());
    for &test in &settings.tests {
        let record = match test {
            ValidationTest::NucleationKs => match ks_exponential(&t_scaled, rho, level) {
                Ok(ks) => ValidationRecord::upper(test, ks.statistic, ks.critical),
                Err(e) => ValidationRecord::failed(test, f64::NAN, e),
            },
            ValidationTest::NucleationMean => {
                if t_scaled.is_empty() {
                    ValidationRecord::failed(test, NUCLEATION_TOLERANCE, "no nucleation times")
                } else {
                    let mean = t_scaled.iter().sum::<f64>() / t_scaled.len() as f64;
                    let dev = (mean * rho - 1.0).abs();
                    ValidationRecord { pass: dev <= NUCLEATION_TOLERANCE, ..ValidationRecord::upper(test, dev, NUCLEATION_TOLERANCE) }
                }
            }
            ValidationTest::NucleationCv => match cv(&t_scaled) {
                Ok(c) => {
                    let dev = (c - 1.0).abs();
                    ValidationRecord { pass: dev <= NUCLEATION_TOLERANCE, ..ValidationRecord::upper(test, dev, NUCLEATION_TOLERANCE) }
                }
                Err(e) => ValidationRecord::failed(test, NUCLEATION_TOLERANCE, e),
            },
            ValidationTest::PoissonDispersion => match stream_report(config) {
                Ok(r) => {
                    let dev = (r.dispersion - 1.0).abs();
                    ValidationRecord { pass: dev <= DISPERSION_TOLERANCE, ..ValidationRecord::upper(test, dev, DISPERSION_TOLERANCE) }
                }
                Err(e) => ValidationRecord::failed(test, DISPERSION_TOLERANCE, e),
            },
            ValidationTest::PoissonInterarrival => match stream_report(config) {
                Ok(r) => ValidationRecord::upper(test, r.interarrival.statistic, r.interarrival.critical),
                Err(e) => ValidationRecord::failed(test, f64::NAN, e),
            },
            ValidationTest::LagScaling => match lag_scaling_report(summaries) {
                Ok(r) => ValidationRecord {
                    name: test.name().into(),
                    statistic: Some(r.min_retained_larger),
                    threshold: LAG_RETENTION,
                    pass: r.min_retained_larger >= LAG_RETENTION,
                    detail: Some(format!("K1 = {:.4}, K2 = {:.4}", r.k1, r.k2)),
                },
                Err(e) => ValidationRecord::failed(test, LAG_RETENTION, e),
            },
            ValidationTest::ExplosionSpan => match lag_scaling_report(summaries).map(|r| r.span_ratio) {
                Ok(Some(ratio)) => ValidationRecord { pass: ratio <= SPAN_GROWTH_LIMIT, ..ValidationRecord::upper(test, ratio, SPAN_GROWTH_LIMIT) },
                Ok(None) => ValidationRecord::failed(test, SPAN_GROWTH_LIMIT, "no explosion spans"),
                Err(e) => ValidationRecord::failed(test, SPAN_GROWTH_LIMIT, e),
            },
            ValidationTest::BalanceDecay => match balance_groups(config, inline_reps, settings.balance_horizon, 1) {
                Ok(groups) => match balance_decay(&groups) {
                    Ok(r) => ValidationRecord {
                        detail: Some(format!("medians {:?}", r.rows)),
                        pass: r.strictly_decreasing,
                        ..ValidationRecord::upper(test, r.worst_ratio, 1.0)
                    },
                    Err(e) => ValidationRecord::failed(test, 1.0, e),
                },
                Err(e) => ValidationRecord::failed(test, 1.0, e),
            },
        };
        records.push(record);
    }
    Ok(records)
}

/// `Delta_k` of inline truncated runs over `horizon` (rescaled), per `N`.
pub fn balance_groups(
    config: &ExperimentConfig,
    replications: usize,
    horizon: f64,
    k: usize,
) -> Result<Vec<(u64, Vec<f64>)>, ExperimentError> {
    let run = RunConfig::new(SimulationMode::Truncated, StopRule::FixedRescaledHorizon { t: horizon })
        .with_observers(ObserverSet { balance: true, mass_audit: MassAudit::Sampled { every: 4096 }, ..Default::default() })
        .with_budget(config.event_budget);
    let sweep = Sweep {
        params: config.model.clone(),
        n_list: config.n_list.clone(),
        replications,
        run,
        master_seed: replication_seed(config.master_seed, BALANCE_GROUP, 0),
        workers: config.worker_count,
    };
    let mut groups: BTreeMap<u64, Vec<f64>> = BTreeMap::new();
    for r in run_sweep(&sweep)? {
        groups.entry(r.record.n).or_default().push(delta_k(&r.record, &config.model, r.record.n, k));
    }
    Ok(groups.into_iter().collect())
}

#[cfg(test)]
mod tests {
    use super::*;

    const MINIMAL: &str = r#"{
        "model": {"n_c": 4, "lambda": [1.0, 1.0, 1.0], "mu": [1.0, 1.0, 1.0],
                  "phi": {"kind": "power", "gamma": 1.0}, "fragmentation": {"kind": "uniform"}},
        "n_list": [30],
        "replications": 1,
        "mode": "full",
        "stop": {"rule": "first_nucleation"},
        "delta": 0.1,
        "master_seed": 7
    }"#;

    #[test]
    fn minimal_config_parses_with_defaults() {
        let c = ExperimentConfig::from_json(MINIMAL).unwrap();
        assert_eq!(c.output, OutputPaths::default());
        assert_eq!(c.validate.tests.len(), ValidationTest::ALL.len());
        assert_eq!(c.run_config().observers.lag_delta, Some(0.1));
    }

    #[test]
    fn bad_delta_names_the_field() {
        let text = MINIMAL.replace("\"delta\": 0.1", "\"delta\": 1.5");
        let err = ExperimentConfig::from_json(&text).unwrap_err();
        assert!(err.to_string().contains("`delta`"), "{err}");
    }

    #[test]
    fn structural_errors_carry_positions() {
        let err = ExperimentConfig::from_json("{\n \"n_list\": [1,\n}").unwrap_err();
        assert!(err.to_string().contains("line"), "{err}");
        let unknown = MINIMAL.replace("\"master_seed\"", "\"masterseed\"");
        assert!(ExperimentConfig::from_json(&unknown).is_err());
        let decreasing = MINIMAL.replace("[30]", "[40, 30]");
        assert!(ExperimentConfig::from_json(&decreasing).unwrap_err().to_string().contains("n_list"));
    }

    #[test]
    fn summary_csv_round_trips_exactly() {
        let c = ExperimentConfig::from_json(&MINIMAL.replace("\"replications\": 1", "\"replications\": 5")).unwrap();
        let summaries: Vec<_> = run_sweep(&c.sweep()).unwrap().iter().map(ReplicationResult::summary).collect();
        let mut buf = Vec::new();
        write_summary_csv(&mut buf, &summaries).unwrap();
        let text = String::from_utf8(buf.clone()).unwrap();
        assert!(text.starts_with("replication_id,seed,N,T_N,T_scaled,L_delta,L_scaled"));
        assert_eq!(read_summary_csv(&buf[..]).unwrap(), summaries);
    }

    #[test]
    fn sweep_is_independent_of_workers() {
        let c = ExperimentConfig::from_json(&MINIMAL.replace("\"replications\": 1", "\"replications\": 6")).unwrap();
        let mut one = c.sweep();
        one.workers = Some(1);
        let mut four = c.sweep();
        four.workers = Some(4);
        assert_eq!(run_sweep(&one).unwrap(), run_sweep(&four).unwrap());
    }

    #[test]
    fn rejects_foreign_summary_header() {
        assert!(read_summary_csv("a,b\n1,2\n".as_bytes()).is_err());
    }
}
