//! Polymer counts and the elementary transitions of the jump process.

use thiserror::Error;

use crate::fragmentation::Composition;
use crate::model::ModelParams;

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum TransitionError {
    #[error("cannot grow a size-{size} polymer: u_{size} = {count}, u_1 = {monomers}")]
    InvalidGrowth { size: usize, count: u64, monomers: u64 },
    #[error("no size-{0} polymer to fragment")]
    NothingToFragment(usize),
    #[error("fragmentation outcome has mass {got}, expected {expected}")]
    InvalidComposition { expected: usize, got: usize },
    #[error("counts carry mass {counted}, expected {expected}")]
    MassMismatch { expected: u64, counted: u64 },
}

/// Numbers of polymers per size, `counts[k] = u_k` (`counts[0]` is unused),
/// together with the conserved total mass.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SystemState {
    counts: Vec<u64>,
    total_mass: u64,
}

/// One elementary move of the process.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Transition {
    /// A monomer attaches to a polymer of the given size.
    Growth(usize),
    /// A polymer of the given size breaks apart.
    Fragmentation(usize),
}

impl SystemState {
    /// `N` monomers and nothing else.
    pub fn pure_monomers(n: u64) -> Self {
        SystemState { counts: vec![0, n], total_mass: n }
    }

    /// Builds a state from `u_1, u_2, ...`; the total mass is computed.
    pub fn from_counts(counts: &[u64]) -> Self {
        let mut c = Vec::with_capacity(counts.len() + 1);
        c.push(0);
        c.extend_from_slice(counts);
        let total_mass = mass_of(&c);
        SystemState { counts: c, total_mass }
    }

    pub fn count(&self, k: usize) -> u64 {
        self.counts.get(k).copied().unwrap_or(0)
    }

    pub fn monomers(&self) -> u64 {
        self.count(1)
    }

    pub fn total_mass(&self) -> u64 {
        self.total_mass
    }

    /// Largest size slot in use.
    pub fn max_size(&self) -> usize {
        self.counts.iter().rposition(|&c| c > 0).unwrap_or(0)
    }

    /// `u_1, u_2, ..., u_max`.
    pub fn counts(&self) -> &[u64] {
        let end = self.max_size().max(1);
        &self.counts[1..=end]
    }

    /// `sum_k k u_k` recomputed from the counts.
    pub fn counted_mass(&self) -> u64 {
        mass_of(&self.counts)
    }

    /// Raw count slots indexed by size; index 0 is unused.
    pub(crate) fn raw(&self) -> &[u64] {
        &self.counts
    }

    pub fn check_mass(&self) -> Result<(), TransitionError> {
        let counted = self.counted_mass();
        if counted == self.total_mass {
            Ok(())
        } else {
            Err(TransitionError::MassMismatch { expected: self.total_mass, counted })
        }
    }

    pub(crate) fn slot(&mut self, k: usize) -> &mut u64 {
        if k >= self.counts.len() {
            self.counts.resize(k + 1, 0);
        }
        &mut self.counts[k]
    }

    /// A monomer joins a size-`k` polymer: `u_1 -= 1, u_k -= 1, u_{k+1} += 1`.
    pub fn apply_growth(&mut self, k: usize) -> Result<(), TransitionError> {
        let (u1, uk) = (self.count(1), self.count(k));
        let enabled = k >= 1 && uk >= 1 && u1 >= 1 && (k != 1 || u1 >= 2);
        if !enabled {
            return Err(TransitionError::InvalidGrowth { size: k, count: uk, monomers: u1 });
        }
        self.counts[1] -= 1;
        self.counts[k] -= 1;
        *self.slot(k + 1) += 1;
        Ok(())
    }

    /// A size-`k` polymer is replaced by the fragments of `outcome`.
    pub fn apply_fragmentation(&mut self, k: usize, outcome: &Composition) -> Result<(), TransitionError> {
        if outcome.mass() != k {
            return Err(TransitionError::InvalidComposition { expected: k, got: outcome.mass() });
        }
        if k < 2 || self.count(k) == 0 {
            return Err(TransitionError::NothingToFragment(k));
        }
        self.counts[k] -= 1;
        for &s in outcome.sizes() {
            *self.slot(s) += 1;
        }
        Ok(())
    }
}

fn mass_of(counts: &[u64]) -> u64 {
    counts.iter().enumerate().map(|(k, &c)| k as u64 * c).sum()
}

/// Every enabled transition out of `state` with its rate.
///
/// Growth of size `k` has rate `lambda_k u_k u_1 / N`; dimerization uses
/// `lambda_1 u_1^2 / N` and needs two monomers. Fragmentation of size `k >= 2`
/// has rate `mu_k^N u_k`.
pub fn enumerate_transitions(state: &SystemState, params: &ModelParams) -> Vec<(Transition, f64)> {
    let n = state.total_mass();
    let u1 = state.monomers();
    let mut out = Vec::new();
    for k in 1..=state.max_size() {
        let uk = state.count(k);
        if uk == 0 {
            continue;
        }
        let growth_enabled = if k == 1 { u1 >= 2 } else { u1 >= 1 };
        if growth_enabled {
            let rate = params.lambda(k) * uk as f64 * u1 as f64 / n as f64;
            out.push((Transition::Growth(k), rate));
        }
        if k >= 2 {
            out.push((Transition::Fragmentation(k), params.mu_k_n(k, n) * uk as f64));
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::fragmentation::FragmentationSpec;
    use crate::model::ScalingFunction;

    fn table_params(phi_value: f64) -> ModelParams {
        let mut p = ModelParams::uniform(4, 1.0, 1.0, ScalingFunction::power(1.0), FragmentationSpec::Uniform).unwrap();
        p.phi = ScalingFunction::Table { values: vec![phi_value], k_c: Some(1) };
        p
    }

    #[test]
    fn pure_monomer_state_only_dimerizes() {
        let s = SystemState::from_counts(&[10, 0, 0, 0]);
        let p = table_params(10.0);
        assert_eq!(enumerate_transitions(&s, &p), vec![(Transition::Growth(1), 10.0)]);
    }

    #[test]
    fn hand_enumerated_rate_table() {
        // u = (8, 1), N = 10, Phi = 10: grow1 = 8*8/10, grow2 = 1*8/10, frag2 = 10*1.
        let s = SystemState::from_counts(&[8, 1, 0, 0]);
        let p = table_params(10.0);
        let rates = enumerate_transitions(&s, &p);
        let expect = [(Transition::Growth(1), 6.4), (Transition::Growth(2), 0.8), (Transition::Fragmentation(2), 10.0)];
        assert_eq!(rates.len(), 3);
        for ((t, r), (te, re)) in rates.iter().zip(expect.iter()) {
            assert_eq!(t, te);
            assert!((r - re).abs() < 1e-12);
        }
        let total: f64 = rates.iter().map(|(_, r)| r).sum();
        assert!((total - 17.2).abs() < 1e-12);
    }

    #[test]
    fn single_monomer_is_absorbing() {
        let s = SystemState::from_counts(&[1]);
        assert!(enumerate_transitions(&s, &table_params(3.0)).is_empty());
    }

    #[test]
    fn growth_examples() {
        let mut s = SystemState::from_counts(&[10, 0, 0, 0]);
        s.apply_growth(1).unwrap();
        assert_eq!(s.counts(), &[8, 1]);
        let mut s = SystemState::from_counts(&[3, 1, 0, 0]);
        s.apply_growth(2).unwrap();
        assert_eq!(s.counts(), &[2, 0, 1]);
        let mut s = SystemState::from_counts(&[1, 1, 0, 0]);
        assert!(matches!(s.apply_growth(1), Err(TransitionError::InvalidGrowth { .. })));
        assert_eq!(s.counts(), &[1, 1]);
    }

    #[test]
    fn fragmentation_examples() {
        let mut s = SystemState::from_counts(&[0, 0, 0, 1]);
        s.apply_fragmentation(4, &Composition::from_parts(&[(1, 1), (3, 1)])).unwrap();
        assert_eq!(s.counts(), &[1, 0, 1]);
        let mut s = SystemState::from_counts(&[5, 0, 1]);
        s.apply_fragmentation(3, &Composition::from_parts(&[(1, 1), (2, 1)])).unwrap();
        assert_eq!(s.counts(), &[6, 1]);
        let mut s = SystemState::from_counts(&[5, 0, 1]);
        assert_eq!(
            s.apply_fragmentation(3, &Composition::from_parts(&[(2, 1)])),
            Err(TransitionError::InvalidComposition { expected: 3, got: 2 })
        );
        assert_eq!(
            s.apply_fragmentation(2, &Composition::from_parts(&[(1, 2)])),
            Err(TransitionError::NothingToFragment(2))
        );
    }

    #[test]
    fn growth_past_tracked_sizes_extends_storage() {
        let mut s = SystemState::from_counts(&[2, 0, 0, 0, 0, 0, 0, 1]);
        s.apply_growth(8).unwrap();
        assert_eq!(s.count(9), 1);
        assert_eq!(s.max_size(), 9);
        s.check_mass().unwrap();
    }
}
