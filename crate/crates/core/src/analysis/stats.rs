use serde::Serialize;

use super::AnalysisError;

/// Minimum sample size of the one-sample exponential test.
pub const KS_MIN_SAMPLES: usize = 20;

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct KsResult {
    pub n: usize,
    pub statistic: f64,
    /// Asymptotic critical value at `level`.
    pub critical: f64,
    pub level: f64,
    pub pass: bool,
}

/// `c(level)` of the Kolmogorov limit law, `sqrt(-ln(level / 2) / 2)`.
fn kolmogorov_c(level: f64) -> f64 {
    assert!(level > 0.0 && level < 1.0, "significance level must lie in (0, 1)");
    (-(level / 2.0).ln() / 2.0).sqrt()
}

pub fn ks_critical_one_sample(n: usize, level: f64) -> f64 {
    kolmogorov_c(level) / (n as f64).sqrt()
}

pub fn ks_critical_two_sample(n: usize, m: usize, level: f64) -> f64 {
    kolmogorov_c(level) * ((n + m) as f64 / (n as f64 * m as f64)).sqrt()
}

fn sorted(samples: &[f64]) -> Result<Vec<f64>, AnalysisError> {
    if samples.iter().any(|x| x.is_nan()) {
        return Err(AnalysisError::InvalidInput("NaN sample".into()));
    }
    let mut v = samples.to_vec();
    v.sort_by(f64::total_cmp);
    Ok(v)
}

/// One-sample Kolmogorov-Smirnov distance to `Exp(rate)`.
pub fn ks_exponential(samples: &[f64], rate: f64, level: f64) -> Result<KsResult, AnalysisError> {
    if samples.len() < KS_MIN_SAMPLES {
        return Err(AnalysisError::InsufficientData { what: "exponential KS test", needed: KS_MIN_SAMPLES, got: samples.len() });
    }
    if !(rate.is_finite() && rate > 0.0) {
        return Err(AnalysisError::InvalidInput(format!("rate {rate} must be positive")));
    }
    let xs = sorted(samples)?;
    let n = xs.len() as f64;
    let mut d: f64 = 0.0;
    for (i, &x) in xs.iter().enumerate() {
        let f = if x > 0.0 { -(-rate * x).exp_m1() } else { 0.0 };
        d = d.max((i + 1) as f64 / n - f).max(f - i as f64 / n);
    }
    let critical = ks_critical_one_sample(xs.len(), level);
    Ok(KsResult { n: xs.len(), statistic: d, critical, level, pass: d < critical })
}

/// Two-sample Kolmogorov-Smirnov distance; ties are stepped together.
pub fn ks_two_sample(a: &[f64], b: &[f64], level: f64) -> Result<KsResult, AnalysisError> {
    if a.is_empty() || b.is_empty() {
        return Err(AnalysisError::InsufficientData { what: "two-sample KS test", needed: 1, got: a.len().min(b.len()) });
    }
    let (xa, xb) = (sorted(a)?, sorted(b)?);
    let (na, nb) = (xa.len() as f64, xb.len() as f64);
    let (mut i, mut j) = (0, 0);
    let mut d: f64 = 0.0;
    while i < xa.len() && j < xb.len() {
        let x = xa[i].min(xb[j]);
        while i < xa.len() && xa[i] <= x {
            i += 1;
        }
        while j < xb.len() && xb[j] <= x {
            j += 1;
        }
        d = d.max((i as f64 / na - j as f64 / nb).abs());
    }
    let critical = ks_critical_two_sample(xa.len(), xb.len(), level);
    Ok(KsResult { n: xa.len() + xb.len(), statistic: d, critical, level, pass: d < critical })
}

/// Sample coefficient of variation (standard deviation with `n - 1`).
pub fn cv(samples: &[f64]) -> Result<f64, AnalysisError> {
    if samples.len() < 2 {
        return Err(AnalysisError::InsufficientData { what: "coefficient of variation", needed: 2, got: samples.len() });
    }
    let n = samples.len() as f64;
    let mean = samples.iter().sum::<f64>() / n;
    if !(mean > 0.0) {
        return Err(AnalysisError::UndefinedStatistic(format!("sample mean {mean} is not positive")));
    }
    let var = samples.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0);
    Ok(var.sqrt() / mean)
}

/// Linearly interpolated quantile (`(n - 1) q` positioning).
pub fn quantile(samples: &[f64], q: f64) -> Option<f64> {
    if samples.is_empty() || !(0.0..=1.0).contains(&q) {
        return None;
    }
    let xs = sorted(samples).ok()?;
    let h = (xs.len() - 1) as f64 * q;
    let lo = h.floor() as usize;
    let hi = h.ceil() as usize;
    Some(xs[lo] + (h - lo as f64) * (xs[hi] - xs[lo]))
}

pub fn median(samples: &[f64]) -> Option<f64> {
    quantile(samples, 0.5)
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct PoissonStreamReport {
    pub replications: usize,
    pub total_events: usize,
    pub mean_count: f64,
    pub count_variance: f64,
    /// Variance-to-mean ratio of the per-replication counts on `[0, horizon]`.
    pub dispersion: f64,
    pub interarrival: KsResult,
}

/// Compares replicated event streams with a Poisson process of rate `rate`.
///
/// Times are rescaled. Counts use the events in `[0, horizon]`. Inter-arrival
/// gaps are pooled from every gap that opens before `horizon` and whose
/// closing event is present, starting with the gap from time 0; a stream
/// observed until its first event past `horizon` contributes every such gap,
/// which keeps the pooled sample free of length bias.
pub fn poisson_stream_test(
    event_times: &[Vec<f64>],
    rate: f64,
    horizon: f64,
    level: f64,
) -> Result<PoissonStreamReport, AnalysisError> {
    if event_times.len() < 2 {
        return Err(AnalysisError::InsufficientData { what: "Poisson stream test replications", needed: 2, got: event_times.len() });
    }
    let counts: Vec<f64> = event_times.iter().map(|ev| ev.iter().filter(|&&t| t <= horizon).count() as f64).collect();
    let total_events: usize = counts.iter().sum::<f64>() as usize;
    if total_events == 0 {
        return Err(AnalysisError::InsufficientData { what: "Poisson stream events", needed: 1, got: 0 });
    }
    let mut gaps = Vec::new();
    for ev in event_times {
        let mut prev = 0.0;
        for &t in ev {
            if prev >= horizon {
                break;
            }
            gaps.push(t - prev);
            prev = t;
        }
    }
    let n = counts.len() as f64;
    let mean = counts.iter().sum::<f64>() / n;
    let var = counts.iter().map(|c| (c - mean).powi(2)).sum::<f64>() / (n - 1.0);
    let interarrival = ks_exponential(&gaps, rate, level)?;
    Ok(PoissonStreamReport {
        replications: event_times.len(),
        total_events,
        mean_count: mean,
        count_variance: var,
        dispersion: var / mean,
        interarrival,
    })
}
