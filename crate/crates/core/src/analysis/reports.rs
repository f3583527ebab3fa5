use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use super::stats::{median, quantile};
use super::AnalysisError;
use crate::simulator::{MassPoint, TrajectoryRecord};

/// Minimum replications per `N` (and calibration values) of the lag report.
pub const LAG_MIN_REPLICATIONS: usize = 50;

/// Per-replication observables; times are also given in units of `Psi(N)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReplicationSummary {
    pub replication_id: u64,
    pub seed: u64,
    pub n: u64,
    pub t_n: Option<f64>,
    pub t_scaled: Option<f64>,
    pub l_delta: Option<f64>,
    pub l_scaled: Option<f64>,
    pub half_time: Option<f64>,
    /// `(L - T) / ln N`.
    pub explosion_span: Option<f64>,
    pub event_count: u64,
    pub truncated: bool,
}

impl ReplicationSummary {
    pub fn from_record(record: &TrajectoryRecord, replication_id: u64) -> Self {
        let scale = |t: Option<f64>| t.map(|t| t / record.psi);
        let explosion_span = match (record.first_nucleation_time, record.lag_time) {
            (Some(t), Some(l)) => Some((l - t) / (record.n as f64).ln()),
            _ => None,
        };
        ReplicationSummary {
            replication_id,
            seed: record.seed,
            n: record.n,
            t_n: record.first_nucleation_time,
            t_scaled: scale(record.first_nucleation_time),
            l_delta: record.lag_time,
            l_scaled: scale(record.lag_time),
            half_time: record.half_time,
            explosion_span,
            event_count: record.event_count,
            truncated: record.truncated,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct LagRow {
    pub n: u64,
    pub replications: usize,
    /// Replications in which the lag time was reached.
    pub lag_present: usize,
    pub median_l_scaled: Option<f64>,
    /// Fraction of all replications with `K1 <= L_scaled <= K2`; runs without
    /// a lag time count as outside.
    pub retained_fraction: f64,
    pub median_explosion_span: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct LagScalingReport {
    pub k1: f64,
    pub k2: f64,
    pub rows: Vec<LagRow>,
    /// Smallest retained fraction over the `N` values above the calibration one.
    pub min_retained_larger: f64,
    /// Median explosion span at the largest `N` over the one at the smallest.
    pub span_ratio: Option<f64>,
}

/// Calibrates `[K1, K2]` as the 2.5% and 97.5% quantiles of `L / Psi` at the
/// smallest `N` and reports how much of every `N` falls inside it.
pub fn lag_scaling_report(summaries: &[ReplicationSummary]) -> Result<LagScalingReport, AnalysisError> {
    let mut groups: BTreeMap<u64, Vec<&ReplicationSummary>> = BTreeMap::new();
    for s in summaries {
        groups.entry(s.n).or_default().push(s);
    }
    if groups.len() < 2 {
        return Err(AnalysisError::InsufficientData { what: "lag scaling: distinct N values", needed: 2, got: groups.len() });
    }
    if let Some(small) = groups.values().map(Vec::len).min().filter(|&m| m < LAG_MIN_REPLICATIONS) {
        return Err(AnalysisError::InsufficientData {
            what: "lag scaling: replications per N",
            needed: LAG_MIN_REPLICATIONS,
            got: small,
        });
    }
    let lags = |g: &[&ReplicationSummary]| -> Vec<f64> { g.iter().filter_map(|s| s.l_scaled).collect() };
    let calibration = lags(groups.values().next().expect("two groups"));
    if calibration.len() < LAG_MIN_REPLICATIONS {
        return Err(AnalysisError::InsufficientData {
            what: "lag scaling: lag times at the smallest N",
            needed: LAG_MIN_REPLICATIONS,
            got: calibration.len(),
        });
    }
    let k1 = quantile(&calibration, 0.025).expect("non-empty");
    let k2 = quantile(&calibration, 0.975).expect("non-empty");
    let rows: Vec<LagRow> = groups
        .iter()
        .map(|(&n, g)| {
            let l = lags(g);
            let spans: Vec<f64> = g.iter().filter_map(|s| s.explosion_span).collect();
            LagRow {
                n,
                replications: g.len(),
                lag_present: l.len(),
                median_l_scaled: median(&l),
                retained_fraction: l.iter().filter(|&&x| (k1..=k2).contains(&x)).count() as f64 / g.len() as f64,
                median_explosion_span: median(&spans),
            }
        })
        .collect();
    let min_retained_larger = rows[1..].iter().map(|r| r.retained_fraction).fold(f64::INFINITY, f64::min);
    let span_ratio = match (rows[0].median_explosion_span, rows[rows.len() - 1].median_explosion_span) {
        (Some(a), Some(b)) if a > 0.0 => Some(b / a),
        _ => None,
    };
    Ok(LagScalingReport { k1, k2, rows, min_retained_larger, span_ratio })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Sharpness {
    pub t10: f64,
    pub t50: f64,
    pub t90: f64,
    /// `(t90 - t10) / t50`.
    pub sharpness: f64,
}

/// Crossing times of 10%, 50% and 90% polymerized mass on a sampled curve:
/// the first sample whose fraction is at or above the level.
pub fn sigmoid_sharpness(curve: &[MassPoint], n: u64) -> Result<Sharpness, AnalysisError> {
    let crossing = |tenths: u64| {
        curve
            .iter()
            .find(|p| 10 * p.polymerized_mass >= tenths * n)
            .map(|p| p.t)
            .ok_or(AnalysisError::IncompleteCurve(tenths as f64 / 10.0))
    };
    let (t10, t50, t90) = (crossing(1)?, crossing(5)?, crossing(9)?);
    if !(t50 > 0.0) {
        return Err(AnalysisError::UndefinedStatistic("half-polymerization at time 0".into()));
    }
    Ok(Sharpness { t10, t50, t90, sharpness: (t90 - t10) / t50 })
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct BalanceDecayReport {
    /// `(N, median |Delta_k|)` by increasing `N`.
    pub rows: Vec<(u64, f64)>,
    pub strictly_decreasing: bool,
    /// Largest ratio of consecutive medians.
    pub worst_ratio: f64,
}

/// Median absolute balance functional per `N`.
pub fn balance_decay(groups: &[(u64, Vec<f64>)]) -> Result<BalanceDecayReport, AnalysisError> {
    if groups.len() < 2 {
        return Err(AnalysisError::InsufficientData { what: "balance decay: distinct N values", needed: 2, got: groups.len() });
    }
    let mut rows = Vec::with_capacity(groups.len());
    for (n, deltas) in groups {
        let abs: Vec<f64> = deltas.iter().map(|d| d.abs()).collect();
        let m = median(&abs).ok_or(AnalysisError::InsufficientData { what: "balance decay: replications", needed: 1, got: 0 })?;
        rows.push((*n, m));
    }
    rows.sort_by_key(|r| r.0);
    let strictly_decreasing = rows.windows(2).all(|w| w[1].1 < w[0].1);
    let worst_ratio = rows.windows(2).map(|w| w[1].1 / w[0].1).fold(f64::NEG_INFINITY, f64::max);
    Ok(BalanceDecayReport { rows, strictly_decreasing, worst_ratio })
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;
    use rand_distr::{Distribution, Gamma};

    fn summary(n: u64, id: u64, l: Option<f64>) -> ReplicationSummary {
        ReplicationSummary {
            replication_id: id,
            seed: id,
            n,
            t_n: None,
            t_scaled: l.map(|x| x / 2.0),
            l_delta: l,
            l_scaled: l,
            half_time: None,
            explosion_span: l.map(|x| x / 2.0),
            event_count: 0,
            truncated: false,
        }
    }

    #[test]
    fn identical_laws_retain_about_95_percent() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let g = Gamma::new(3.0, 1.0).unwrap();
        let mut all = Vec::new();
        for &n in &[200, 400, 800] {
            for id in 0..2000 {
                all.push(summary(n, id, Some(g.sample(&mut rng))));
            }
        }
        let r = lag_scaling_report(&all).unwrap();
        for row in &r.rows[1..] {
            assert!((row.retained_fraction - 0.95).abs() < 0.02, "{row:?}");
        }
        assert!((r.span_ratio.unwrap() - 1.0).abs() < 0.1);
    }

    #[test]
    fn drifting_laws_collapse_retention() {
        let mut all = Vec::new();
        for (i, &n) in [200u64, 400, 800].iter().enumerate() {
            for id in 0..100 {
                all.push(summary(n, id, Some(1.0 + id as f64 / 100.0 + 10.0 * i as f64)));
            }
        }
        let r = lag_scaling_report(&all).unwrap();
        assert_eq!(r.min_retained_larger, 0.0);
    }

    #[test]
    fn lag_report_requires_data() {
        let few: Vec<_> = (0..10).map(|id| summary(200, id, Some(1.0))).chain((0..10).map(|id| summary(400, id, Some(1.0)))).collect();
        assert!(matches!(lag_scaling_report(&few), Err(AnalysisError::InsufficientData { .. })));
        let missing: Vec<_> = (0..60).map(|id| summary(200, id, None)).chain((0..60).map(|id| summary(400, id, None))).collect();
        assert!(matches!(lag_scaling_report(&missing), Err(AnalysisError::InsufficientData { .. })));
    }

    #[test]
    fn lag_report_ignores_replication_order() {
        let mut all: Vec<_> = (0..60).flat_map(|id| [summary(200, id, Some(id as f64)), summary(400, id, Some(2.0 * id as f64))]).collect();
        let a = lag_scaling_report(&all).unwrap();
        all.reverse();
        assert_eq!(a, lag_scaling_report(&all).unwrap());
    }

    fn curve(points: &[(f64, u64)]) -> Vec<MassPoint> {
        points.iter().map(|&(t, m)| MassPoint { t, stable_mass: m, polymerized_mass: m }).collect()
    }

    #[test]
    fn sharpness_examples() {
        let step = curve(&[(0.0, 0), (1.0, 0), (2.0, 100), (3.0, 100)]);
        assert_eq!(sigmoid_sharpness(&step, 100).unwrap().sharpness, 0.0);
        let ramp: Vec<(f64, u64)> = (0..=10).map(|i| (i as f64 / 10.0, i)).collect();
        let s = sigmoid_sharpness(&curve(&ramp), 10).unwrap();
        assert_eq!((s.t10, s.t50, s.t90), (0.1, 0.5, 0.9));
        assert!((s.sharpness - 1.6).abs() < 1e-12);
        let flat = curve(&[(0.0, 0), (1.0, 50)]);
        assert!(matches!(sigmoid_sharpness(&flat, 100), Err(AnalysisError::IncompleteCurve(_))));
    }

    #[test]
    fn balance_decay_ordering() {
        let r = balance_decay(&[(400, vec![-0.5, 0.5, 0.4]), (200, vec![1.0, -2.0, 1.5]), (800, vec![0.1, 0.2, -0.3])]).unwrap();
        assert_eq!(r.rows, vec![(200, 1.5), (400, 0.5), (800, 0.2)]);
        assert!(r.strictly_decreasing);
        let r = balance_decay(&[(200, vec![1.0]), (400, vec![1.0])]).unwrap();
        assert!(!r.strictly_decreasing);
    }
}
