//! Fragmentation measures `nu_k`: how a polymer of size `k` breaks apart.
//!
//! Three families are provided:
//!
//! * uniform binary splitting (`Uniform`): `k -> {l, k - l}` with `l` uniform
//!   on `1..k`;
//! * binomial binary splitting (`Binomial { p }`): `l ~ Bin(k, p)` conditioned
//!   on `0 < l < k`;
//! * multinomial splitting into `m` pieces (`Multinomial { weights }`): the
//!   `k - m` surplus units are thrown into `m` urns with the given weights and
//!   the fragments have sizes `n_i + 1`. A polymer smaller than `m` dissolves
//!   into monomers.
//!
//! Exact laws are available by enumeration up to [`ENUMERATION_CAP`]; past
//! that only sampling is offered.

use std::collections::BTreeMap;
use std::fmt;
use std::str::FromStr;

use rand::Rng;
use rand_distr::{Binomial, Distribution};
use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Largest polymer size for which exact laws are enumerated.
pub const ENUMERATION_CAP: usize = 64;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum FragmentationError {
    #[error("fragmentation is defined for sizes k >= 2, got {0}")]
    InvalidSize(usize),
    #[error("exact enumeration is limited to k <= {cap}, got {k}")]
    Unsupported { k: usize, cap: usize },
    #[error("composition has mass {got}, expected {expected}")]
    InvalidComposition { expected: usize, got: usize },
    #[error("moment index p = {p} must satisfy 1 <= p < k = {k}")]
    InvalidMomentIndex { p: usize, k: usize },
    #[error("{0}")]
    InvalidSpec(String),
}

/// A fragmentation outcome: a multiset of fragment sizes, i.e. an element of
/// `S_k` for `k` its mass. Stored as fragment sizes in non-increasing order.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct Composition {
    sizes: Vec<usize>,
}

impl Composition {
    /// Builds a composition from a list of fragment sizes in any order.
    ///
    /// Panics on a zero-sized fragment.
    pub fn from_sizes(mut sizes: Vec<usize>) -> Self {
        assert!(sizes.iter().all(|&s| s >= 1), "fragment sizes must be positive");
        sizes.sort_unstable_by(|a, b| b.cmp(a));
        Composition { sizes }
    }

    /// Builds a composition from `(size, count)` pairs.
    pub fn from_parts(parts: &[(usize, u64)]) -> Self {
        let sizes = parts
            .iter()
            .flat_map(|&(size, count)| std::iter::repeat_n(size, count as usize))
            .collect();
        Self::from_sizes(sizes)
    }

    pub fn mass(&self) -> usize {
        self.sizes.iter().sum()
    }

    /// Number of fragments of size `i` (the coordinate `y_i`).
    pub fn count(&self, i: usize) -> u64 {
        self.sizes.iter().filter(|&&s| s == i).count() as u64
    }

    pub fn fragment_count(&self) -> usize {
        self.sizes.len()
    }

    /// Fragment sizes, largest first.
    pub fn sizes(&self) -> &[usize] {
        &self.sizes
    }

    /// `(size, count)` pairs in increasing size order.
    pub fn parts(&self) -> Vec<(usize, u64)> {
        let mut out: Vec<(usize, u64)> = Vec::new();
        for &s in self.sizes.iter().rev() {
            match out.last_mut() {
                Some((size, count)) if *size == s => *count += 1,
                _ => out.push((s, 1)),
            }
        }
        out
    }

    /// Number of fragments with size at least `threshold`.
    pub fn fragments_at_least(&self, threshold: usize) -> usize {
        self.sizes.iter().take_while(|&&s| s >= threshold).count()
    }
}

impl fmt::Display for Composition {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let parts: Vec<String> = self
            .parts()
            .into_iter()
            .map(|(s, c)| if c == 1 { format!("e{s}") } else { format!("{c}e{s}") })
            .collect();
        write!(f, "{}", parts.join("+"))
    }
}

/// Choice of fragmentation family.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum FragmentationSpec {
    #[serde(alias = "uf")]
    Uniform,
    #[serde(alias = "bf")]
    Binomial { p: f64 },
    #[serde(alias = "mf")]
    Multinomial { weights: Vec<f64> },
}

impl FragmentationSpec {
    pub fn validate(&self) -> Result<(), FragmentationError> {
        match self {
            FragmentationSpec::Uniform => Ok(()),
            FragmentationSpec::Binomial { p } => {
                if p.is_finite() && *p > 0.0 && *p < 1.0 {
                    Ok(())
                } else {
                    Err(FragmentationError::InvalidSpec(format!("binomial p = {p} not in (0, 1)")))
                }
            }
            FragmentationSpec::Multinomial { weights } => {
                if weights.len() < 2 {
                    return Err(FragmentationError::InvalidSpec(
                        "multinomial fragmentation needs m >= 2 weights".into(),
                    ));
                }
                if weights.iter().any(|w| !(w.is_finite() && *w > 0.0)) {
                    return Err(FragmentationError::InvalidSpec(
                        "multinomial weights must be strictly positive".into(),
                    ));
                }
                let total: f64 = weights.iter().sum();
                if (total - 1.0).abs() > 1e-9 {
                    return Err(FragmentationError::InvalidSpec(format!(
                        "multinomial weights sum to {total}, expected 1"
                    )));
                }
                Ok(())
            }
        }
    }

    /// Draws the fragment sizes of a size-`k` polymer into `out` (cleared
    /// first). Order is unspecified.
    pub fn sample_into<R: Rng + ?Sized>(&self, k: usize, rng: &mut R, out: &mut Vec<usize>) {
        debug_assert!(k >= 2);
        out.clear();
        match self {
            FragmentationSpec::Uniform => {
                let l = rng.random_range(1..k);
                out.push(l);
                out.push(k - l);
            }
            FragmentationSpec::Binomial { p } => {
                let binom = Binomial::new(k as u64, *p).expect("validated p");
                let l = loop {
                    let l = binom.sample(rng) as usize;
                    if l > 0 && l < k {
                        break l;
                    }
                };
                out.push(l);
                out.push(k - l);
            }
            FragmentationSpec::Multinomial { weights } => {
                let m = weights.len();
                if k < m {
                    out.extend(std::iter::repeat_n(1, k));
                } else {
                    let mut balls = (k - m) as u64;
                    let mut rest = 1.0;
                    for &w in &weights[..m - 1] {
                        let n_i = if balls == 0 {
                            0
                        } else {
                            let q = (w / rest).clamp(0.0, 1.0);
                            Binomial::new(balls, q).expect("probability in [0, 1]").sample(rng)
                        };
                        out.push(n_i as usize + 1);
                        balls -= n_i;
                        rest -= w;
                    }
                    out.push(balls as usize + 1);
                }
            }
        }
        debug_assert_eq!(out.iter().sum::<usize>(), k, "fragment masses must add up to k");
    }

    pub fn sample<R: Rng + ?Sized>(&self, k: usize, rng: &mut R) -> Composition {
        let mut buf = Vec::new();
        self.sample_into(k, rng, &mut buf);
        Composition::from_sizes(buf)
    }

    /// Exact law of the outcome of breaking a size-`k` polymer, as
    /// `(composition, probability)` pairs ordered by composition.
    pub fn support(&self, k: usize) -> Result<Vec<(Composition, f64)>, FragmentationError> {
        if k < 2 {
            return Err(FragmentationError::InvalidSize(k));
        }
        if k > ENUMERATION_CAP {
            return Err(FragmentationError::Unsupported { k, cap: ENUMERATION_CAP });
        }
        let pair = |l: usize| Composition::from_sizes(vec![l, k - l]);
        let out = match self {
            FragmentationSpec::Uniform => (1..=k / 2)
                .map(|l| {
                    let weight = if 2 * l == k { 1.0 } else { 2.0 };
                    (pair(l), weight / (k - 1) as f64)
                })
                .collect(),
            FragmentationSpec::Binomial { p } => {
                let b = |l: usize| binomial_coefficient(k, l) * p.powi(l as i32) * (1.0 - p).powi((k - l) as i32);
                let z = 1.0 - p.powi(k as i32) - (1.0 - p).powi(k as i32);
                (1..=k / 2)
                    .map(|l| {
                        let w = if 2 * l == k { b(l) } else { b(l) + b(k - l) };
                        (pair(l), w / z)
                    })
                    .collect()
            }
            FragmentationSpec::Multinomial { weights } => {
                let m = weights.len();
                if k < m {
                    vec![(Composition::from_sizes(vec![1; k]), 1.0)]
                } else {
                    let mut acc: BTreeMap<Composition, f64> = BTreeMap::new();
                    let ln_fact = ln_factorials(k);
                    let ln_w: Vec<f64> = weights.iter().map(|w| w.ln()).collect();
                    let mut counts = vec![0usize; m];
                    enumerate_urns(k - m, 0, &mut counts, &mut |counts| {
                        let mut ln_p = ln_fact[k - m];
                        for (i, &n) in counts.iter().enumerate() {
                            ln_p += n as f64 * ln_w[i] - ln_fact[n];
                        }
                        let comp = Composition::from_sizes(counts.iter().map(|n| n + 1).collect());
                        *acc.entry(comp).or_insert(0.0) += ln_p.exp();
                    });
                    acc.into_iter().collect()
                }
            }
        };
        Ok(out)
    }

    /// Exact probability of `outcome` when breaking a size-`k` polymer.
    pub fn pmf(&self, k: usize, outcome: &Composition) -> Result<f64, FragmentationError> {
        if outcome.mass() != k {
            return Err(FragmentationError::InvalidComposition { expected: k, got: outcome.mass() });
        }
        Ok(self
            .support(k)?
            .into_iter()
            .find(|(c, _)| c == outcome)
            .map_or(0.0, |(_, prob)| prob))
    }

    /// Mean number of size-`p` fragments, `<nu_k, I_p>`.
    pub fn moment(&self, k: usize, p: usize) -> Result<f64, FragmentationError> {
        if p < 1 || p >= k {
            return Err(FragmentationError::InvalidMomentIndex { p, k });
        }
        Ok(self.support(k)?.iter().map(|(c, prob)| prob * c.count(p) as f64).sum())
    }
}

impl fmt::Display for FragmentationSpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            FragmentationSpec::Uniform => write!(f, "uf"),
            FragmentationSpec::Binomial { p } => write!(f, "bf:{p}"),
            FragmentationSpec::Multinomial { weights } => {
                let w: Vec<String> = weights.iter().map(|w| w.to_string()).collect();
                write!(f, "mf:{}", w.join(","))
            }
        }
    }
}

/// Parses `uf`, `bf:<p>` or `mf:<w1>,<w2>,...`.
impl FromStr for FragmentationSpec {
    type Err = FragmentationError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let bad = || FragmentationError::InvalidSpec(format!("cannot parse fragmentation spec `{s}`"));
        let lower = s.trim().to_ascii_lowercase();
        let (kind, arg) = match lower.split_once(':') {
            Some((kind, arg)) => (kind.to_string(), Some(arg.to_string())),
            None => (lower.clone(), None),
        };
        let spec = match (kind.as_str(), arg) {
            ("uf", None) => FragmentationSpec::Uniform,
            ("bf", Some(p)) => FragmentationSpec::Binomial { p: p.parse().map_err(|_| bad())? },
            ("mf", Some(w)) => FragmentationSpec::Multinomial {
                weights: w
                    .split(',')
                    .map(|x| x.trim().parse::<f64>())
                    .collect::<Result<_, _>>()
                    .map_err(|_| bad())?,
            },
            _ => return Err(bad()),
        };
        spec.validate()?;
        Ok(spec)
    }
}

fn binomial_coefficient(n: usize, k: usize) -> f64 {
    let k = k.min(n - k);
    (0..k).fold(1.0, |acc, i| acc * (n - i) as f64 / (i + 1) as f64)
}

fn ln_factorials(n: usize) -> Vec<f64> {
    let mut out = Vec::with_capacity(n + 1);
    out.push(0.0);
    for i in 1..=n {
        out.push(out[i - 1] + (i as f64).ln());
    }
    out
}

fn enumerate_urns(balls: usize, urn: usize, counts: &mut [usize], visit: &mut impl FnMut(&[usize])) {
    if urn == counts.len() - 1 {
        counts[urn] = balls;
        visit(counts);
        return;
    }
    for n in 0..=balls {
        counts[urn] = n;
        enumerate_urns(balls - n, urn + 1, counts, visit);
    }
}

/// Empirical summary of the large-polymer fragmentation assumption at one size.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct A3Row {
    pub k: usize,
    /// Largest number of sub-nucleus fragments seen.
    pub max_small_fragments: usize,
    /// Fraction of samples with at least two fragments of size `>= n_c`.
    pub two_stable_fraction: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct A3Report {
    pub n_c: usize,
    pub rows: Vec<A3Row>,
    /// Estimate of the bound `C_0` on sub-nucleus fragments.
    pub c0_hat: usize,
    /// Set when the upper half of the size range produced more sub-nucleus
    /// fragments than the lower half.
    pub small_count_grows: bool,
}

/// Samples `nu_k` for every `k` in `k_range` and reports the number of
/// sub-nucleus fragments and the probability of two stable fragments.
pub fn check_a3<R: Rng + ?Sized>(
    spec: &FragmentationSpec,
    n_c: usize,
    k_range: std::ops::RangeInclusive<usize>,
    samples: usize,
    rng: &mut R,
) -> A3Report {
    let mut buf = Vec::new();
    let rows: Vec<A3Row> = k_range
        .filter(|&k| k >= 2)
        .map(|k| {
            let mut max_small = 0;
            let mut two_stable = 0usize;
            for _ in 0..samples {
                spec.sample_into(k, rng, &mut buf);
                let small = buf.iter().filter(|&&s| s < n_c).count();
                max_small = max_small.max(small);
                if buf.len() - small >= 2 {
                    two_stable += 1;
                }
            }
            A3Row {
                k,
                max_small_fragments: max_small,
                two_stable_fraction: if samples == 0 { 0.0 } else { two_stable as f64 / samples as f64 },
            }
        })
        .collect();
    let c0_hat = rows.iter().map(|r| r.max_small_fragments).max().unwrap_or(0);
    let half = rows.len() / 2;
    let lower = rows[..half].iter().map(|r| r.max_small_fragments).max().unwrap_or(0);
    let upper = rows[half..].iter().map(|r| r.max_small_fragments).max().unwrap_or(0);
    A3Report { n_c, rows, c0_hat, small_count_grows: half > 0 && upper > lower }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct A4Row {
    /// Size threshold `l`.
    pub threshold: usize,
    /// Required number of fragments `a`.
    pub at_least: usize,
    pub p_k: f64,
    pub p_k_prime: f64,
    pub violated: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct A4Report {
    pub k: usize,
    pub k_prime: usize,
    pub rows: Vec<A4Row>,
    pub violations: usize,
}

/// Compares `nu_k(#{fragments >= l} >= a)` with the same quantity under
/// `nu_{k'}` for all thresholds `l in 1..=k'` and counts `a` up to the largest
/// fragment count of either law, by exact enumeration.
pub fn check_a4(spec: &FragmentationSpec, k: usize, k_prime: usize) -> Result<A4Report, FragmentationError> {
    assert!(k <= k_prime, "check_a4 needs k <= k'");
    let small = spec.support(k)?;
    let large = spec.support(k_prime)?;
    let max_fragments = small
        .iter()
        .chain(large.iter())
        .map(|(c, _)| c.fragment_count())
        .max()
        .unwrap_or(0);
    let tail = |law: &[(Composition, f64)], l: usize, a: usize| -> f64 {
        law.iter().filter(|(c, _)| c.fragments_at_least(l) >= a).map(|(_, p)| p).sum()
    };
    let mut rows = Vec::new();
    for l in 1..=k_prime {
        for a in 1..=max_fragments {
            let p_k = tail(&small, l, a);
            let p_k_prime = tail(&large, l, a);
            rows.push(A4Row { threshold: l, at_least: a, p_k, p_k_prime, violated: p_k > p_k_prime + 1e-12 });
        }
    }
    let violations = rows.iter().filter(|r| r.violated).count();
    Ok(A4Report { k, k_prime, rows, violations })
}
