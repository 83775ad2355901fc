//! Finite synchronous multi-rate sampling schemes: construction with exact
//! instant deduplication, solvability and sensitivity checks, greedy moduli
//! augmentation and the prime-period universality adjustment.

use std::collections::HashMap;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::band_model::IndexSets;
use crate::error::{Error, Result};
use crate::primes::{gcd, lcm, next_prime};
use crate::solver::FoldedSystem;

pub const DEFAULT_GRID_DENSITY: usize = 8192;

/// A sample instant t0 + T·num/den with num/den reduced and in [0, 1).
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct Fraction {
    pub num: u64,
    pub den: u64,
}

impl Fraction {
    pub fn value(&self) -> f64 {
        self.num as f64 / self.den as f64
    }
}

/// Grids t0 + T·q/Q_k, q = 0..Q_k−1, merged into distinct physical instants.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SmrsScheme {
    moduli: Vec<u32>,
    t0: f64,
    #[serde(rename = "T")]
    period: f64,
    lcm: u64,
    instants: Vec<Fraction>,
    grid_map: Vec<Vec<usize>>,
    /// First (k, q) in flat order that lands on each instant.
    #[serde(skip)]
    canonical: Vec<(usize, u32)>,
}

/// Serialized form used by configuration files.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SchemeConfig {
    pub moduli: Vec<u32>,
    #[serde(default)]
    pub t0: f64,
    #[serde(rename = "T")]
    pub period: f64,
}

impl SchemeConfig {
    pub fn build(&self) -> Result<SmrsScheme> {
        build_scheme(&self.moduli, self.t0, self.period)
    }
}

/// Builds the scheme, deduplicating coincident instants by exact integer
/// comparison of q·(L/Q_k) with L the lcm of the moduli.
pub fn build_scheme(moduli: &[u32], t0: f64, period: f64) -> Result<SmrsScheme> {
    if moduli.is_empty() {
        return Err(Error::invalid("scheme needs at least one modulus"));
    }
    if moduli.contains(&0) {
        return Err(Error::invalid("moduli must be positive"));
    }
    if !(period > 0.0 && period.is_finite()) || !t0.is_finite() {
        return Err(Error::invalid(format!("invalid period {period} or base instant {t0}")));
    }
    let mut seen = moduli.to_vec();
    seen.sort_unstable();
    if seen.windows(2).any(|w| w[0] == w[1]) {
        return Err(Error::invalid("moduli must be distinct"));
    }
    let l = moduli
        .iter()
        .try_fold(1u64, |acc, &q| lcm(acc, q as u64))
        .ok_or_else(|| Error::Overflow("lcm of the moduli exceeds 64 bits".into()))?;

    let mut positions: Vec<u64> = moduli
        .iter()
        .flat_map(|&q| {
            let step = l / q as u64;
            (0..q as u64).map(move |m| m * step)
        })
        .collect();
    positions.sort_unstable();
    positions.dedup();
    let index: HashMap<u64, usize> = positions.iter().enumerate().map(|(i, &s)| (s, i)).collect();
    let instants = positions
        .iter()
        .map(|&s| {
            let g = gcd(s, l);
            Fraction { num: s / g, den: l / g }
        })
        .collect();
    let grid_map = moduli
        .iter()
        .map(|&q| {
            let step = l / q as u64;
            (0..q as u64).map(|m| index[&(m * step)]).collect()
        })
        .collect::<Vec<Vec<usize>>>();
    let mut canonical = vec![None; positions.len()];
    for (k, row) in grid_map.iter().enumerate() {
        for (q, &i) in row.iter().enumerate() {
            canonical[i].get_or_insert((k, q as u32));
        }
    }
    let canonical = canonical.into_iter().map(|c| c.expect("every instant comes from a grid point")).collect();
    Ok(SmrsScheme { moduli: moduli.to_vec(), t0, period, lcm: l, instants, grid_map, canonical })
}

impl SmrsScheme {
    pub fn moduli(&self) -> &[u32] {
        &self.moduli
    }

    pub fn t0(&self) -> f64 {
        self.t0
    }

    pub fn period(&self) -> f64 {
        self.period
    }

    pub fn lcm(&self) -> u64 {
        self.lcm
    }

    /// Distinct instants as fractions of T after t0, in increasing order.
    pub fn instants(&self) -> &[Fraction] {
        &self.instants
    }

    /// For each grid k and q, the index of its physical instant.
    pub fn grid_map(&self) -> &[Vec<usize>] {
        &self.grid_map
    }

    pub fn canonical(&self, i: usize) -> (usize, u32) {
        self.canonical[i]
    }

    pub fn instant_time(&self, i: usize) -> f64 {
        self.t0 + self.period * self.instants[i].value()
    }

    /// Σ Q_k, the number of (k, q) grid points.
    pub fn grid_len(&self) -> usize {
        self.moduli.iter().map(|&q| q as usize).sum()
    }

    /// All (k, q) pairs in flat order.
    pub fn grid_points(&self) -> impl Iterator<Item = (usize, u32)> + '_ {
        self.moduli.iter().enumerate().flat_map(|(k, &q)| (0..q).map(move |qq| (k, qq)))
    }

    /// Average sampling rate in samples per second.
    pub fn average_rate(&self) -> f64 {
        self.instants.len() as f64 / self.period
    }

    pub fn with_t0(&self, t0: f64) -> SmrsScheme {
        SmrsScheme { t0, ..self.clone() }
    }

    pub fn config(&self) -> SchemeConfig {
        SchemeConfig { moduli: self.moduli.clone(), t0: self.t0, period: self.period }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RankReport {
    pub rows: usize,
    pub cols: usize,
    pub rank: usize,
    pub full_rank: bool,
    pub density: f64,
}

pub fn check_rank(scheme: &SmrsScheme, sets: &IndexSets) -> Result<RankReport> {
    let system = FoldedSystem::build(scheme, &sets.union)?;
    Ok(rank_report(&system))
}

pub(crate) fn rank_report(system: &FoldedSystem) -> RankReport {
    RankReport {
        rows: system.rows(),
        cols: system.cols().len(),
        rank: system.rank(),
        full_rank: system.is_full_rank(),
        density: system.density(),
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SensitivityReport {
    pub grid_density: usize,
    /// Γ(t) at t − t0 = −T/2 + iT/n.
    pub gamma: Vec<f64>,
    pub gamma_max: f64,
    pub gamma_max_db: f64,
}

impl SensitivityReport {
    pub fn offsets(&self, period: f64) -> impl Iterator<Item = f64> + '_ {
        let n = self.grid_density;
        (0..n).map(move |i| -period / 2.0 + period * i as f64 / n as f64)
    }
}

/// Γ(t; J_sub, t0) over one period, using the system built on the full
/// union of `sets`.
pub fn sensitivity(scheme: &SmrsScheme, sets: &IndexSets, subset: &[i64], grid_density: usize) -> Result<SensitivityReport> {
    let system = FoldedSystem::build(scheme, &sets.union)?;
    sensitivity_of(&system, subset, grid_density)
}

pub fn sensitivity_of(system: &FoldedSystem, subset: &[i64], grid_density: usize) -> Result<SensitivityReport> {
    if grid_density == 0 {
        return Err(Error::invalid("grid density must be positive"));
    }
    let gamma = system.gamma_profile(subset)?.curve(grid_density);
    let gamma_max = gamma.iter().copied().fold(0.0, f64::max);
    Ok(SensitivityReport { grid_density, gamma, gamma_max, gamma_max_db: 20.0 * gamma_max.log10() })
}

/// Γ(I_zw) maximum for a moduli set, or `None` when rank deficient.
fn gamma_for(moduli: &[u32], t0: f64, period: f64, cols: &[i64], grid_density: usize) -> Option<f64> {
    let scheme = build_scheme(moduli, t0, period).ok()?;
    let system = FoldedSystem::build(&scheme, cols).ok()?;
    sensitivity_of(&system, cols, grid_density).ok().map(|r| r.gamma_max)
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct AugmentStep {
    pub added: u32,
    pub gamma_db: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct AugmentResult {
    #[serde(skip)]
    pub scheme: SmrsScheme,
    pub base_gamma_db: f64,
    pub steps: Vec<AugmentStep>,
    pub gamma_db: f64,
    pub target_met: bool,
}

/// Repeatedly adds the candidate modulus that lowers Γ(I_zw) the most until
/// the target is met, candidates run out or `max_added` moduli were added.
/// Ties go to the smallest modulus. Candidates that do not lower Γ stop the
/// search.
pub fn greedy_augment(
    scheme: &SmrsScheme,
    sets: &IndexSets,
    candidates: &[u32],
    target_db: f64,
    max_added: usize,
    grid_density: usize,
) -> Result<AugmentResult> {
    let cols = &sets.union;
    let base = FoldedSystem::build(scheme, cols)?;
    if !base.is_full_rank() {
        return Err(Error::RankDeficient { rank: base.rank(), cols: cols.len() });
    }
    let base_gamma_db = sensitivity_of(&base, cols, grid_density)?.gamma_max_db;
    let mut moduli = scheme.moduli().to_vec();
    let mut pool: Vec<u32> = candidates.iter().copied().filter(|c| *c > 0 && !moduli.contains(c)).collect();
    pool.sort_unstable();
    pool.dedup();
    let mut current = base_gamma_db;
    let mut steps = Vec::new();
    while current > target_db && steps.len() < max_added && !pool.is_empty() {
        let scored: Vec<(u32, f64)> = pool
            .par_iter()
            .filter_map(|&c| {
                let mut trial = moduli.clone();
                trial.push(c);
                gamma_for(&trial, scheme.t0(), scheme.period(), cols, grid_density).map(|g| (c, 20.0 * g.log10()))
            })
            .collect();
        let best = scored
            .iter()
            .copied()
            .min_by(|a, b| a.1.total_cmp(&b.1).then(a.0.cmp(&b.0)));
        let Some((c, g)) = best else { break };
        if g >= current {
            break;
        }
        moduli.push(c);
        pool.retain(|&x| x != c);
        current = g;
        steps.push(AugmentStep { added: c, gamma_db: g });
    }
    Ok(AugmentResult {
        scheme: build_scheme(&moduli, scheme.t0(), scheme.period())?,
        base_gamma_db,
        steps,
        gamma_db: current,
        target_met: current <= target_db,
    })
}

/// Consecutive moduli Q_1, …, Q_1+K−1 with Q_1 ≈ |J|/K, raised one step at
/// a time until the folded system for J has full column rank.
pub fn select_base_moduli(sets: &IndexSets, k: usize, period: f64, max_tries: usize) -> Result<Vec<u32>> {
    if k == 0 {
        return Err(Error::invalid("number of base moduli must be positive"));
    }
    let n = sets.union.len();
    let mut q1 = ((n as f64 / k as f64).round() as u32).max(1);
    for _ in 0..max_tries.max(1) {
        let moduli: Vec<u32> = (0..k as u32).map(|i| q1 + i).collect();
        let scheme = build_scheme(&moduli, 0.0, period)?;
        if FoldedSystem::build(&scheme, &sets.union)?.is_full_rank() {
            return Ok(moduli);
        }
        q1 += 1;
    }
    Err(Error::RankDeficient { rank: 0, cols: n })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PeriodAdjustment {
    #[serde(rename = "R")]
    pub r: u64,
    #[serde(rename = "P")]
    pub p: u64,
    pub period: f64,
    pub adjusted_period: f64,
    pub relative_change: f64,
}

/// R = ν·lcm(Q_k), P the smallest prime ≥ R and T′ = T·P/R.
pub fn universalize_period(moduli: &[u32], nu: u64, period: f64) -> Result<PeriodAdjustment> {
    if nu == 0 {
        return Err(Error::invalid("ν must be at least 1"));
    }
    if moduli.is_empty() || moduli.contains(&0) {
        return Err(Error::invalid("moduli must be positive"));
    }
    let overflow = || Error::Overflow("ν·lcm of the moduli exceeds 2^63".into());
    let l = moduli.iter().try_fold(1u64, |acc, &q| lcm(acc, q as u64)).ok_or_else(overflow)?;
    let r = l.checked_mul(nu).filter(|&r| r <= 1 << 63).ok_or_else(overflow)?;
    let p = next_prime(r).ok_or_else(overflow)?;
    let relative_change = (p - r) as f64 / r as f64;
    Ok(PeriodAdjustment { r, p, period, adjusted_period: period * p as f64 / r as f64, relative_change })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::band_model::{BandPlan, BandSpec};
    use crate::primes::is_prime;

    pub(crate) fn table_sets() -> IndexSets {
        let bands = [
            (308.892, 60.4428),
            (596.276, 41.7585),
            (920.824, 39.9765),
            (1169.11, 66.6665),
            (1381.22, 19.1557),
        ];
        BandPlan {
            period: 1.0,
            window_bw: 9.12,
            bands: bands.iter().map(|&(fc, width)| BandSpec { fc, width }).collect(),
        }
        .to_support()
        .unwrap()
        .expanded_index_sets()
    }

    fn brute_collisions(moduli: &[u32]) -> usize {
        let mut pairs: Vec<(u32, u32)> = Vec::new();
        let mut distinct = 0;
        for &q in moduli {
            for m in 0..q {
                if !pairs.iter().any(|&(a, b)| a as u64 * q as u64 == m as u64 * b as u64) {
                    distinct += 1;
                }
                pairs.push((m, q));
            }
        }
        pairs.len() - distinct
    }

    #[test]
    fn scheme_counts() {
        let s = build_scheme(&[68, 69, 70, 71], 0.0, 1.0).unwrap();
        assert_eq!(s.grid_len(), 278);
        assert_eq!(s.instants().len(), 274);
        let half = s.instants().iter().position(|f| *f == Fraction { num: 1, den: 2 }).unwrap();
        assert_eq!(s.grid_map()[0][34], half);
        assert_eq!(s.grid_map()[2][35], half);
        assert!(s.grid_map().iter().all(|row| row[0] == 0));
        assert_eq!(s.canonical(half), (0, 34));
        assert_eq!(s.canonical(0), (0, 0));

        let two = build_scheme(&[2], 0.25, 1.0).unwrap();
        assert_eq!(two.instants(), &[Fraction { num: 0, den: 1 }, Fraction { num: 1, den: 2 }]);
        assert_eq!(two.instant_time(1), 0.75);

        let full = build_scheme(&[11, 18, 19, 37, 49, 68, 69, 70, 71], 0.0, 1.0).unwrap();
        assert_eq!(full.instants().len(), 394);
        assert!((full.average_rate() - 394.0).abs() < 1e-12);
    }

    #[test]
    fn rejects_bad_moduli() {
        assert!(build_scheme(&[3, 3], 0.0, 1.0).is_err());
        assert!(build_scheme(&[0, 3], 0.0, 1.0).is_err());
        assert!(build_scheme(&[], 0.0, 1.0).is_err());
        assert!(build_scheme(&[3], 0.0, 0.0).is_err());
    }

    #[test]
    fn rank_examples() {
        let sets = table_sets();
        let base = build_scheme(&[68, 69, 70, 71], 0.0, 1.0).unwrap();
        let report = check_rank(&base, &sets).unwrap();
        assert_eq!((report.rows, report.cols, report.full_rank), (278, 273, true));

        let one = IndexSets::from_components(vec![vec![0]]).unwrap();
        assert!(check_rank(&build_scheme(&[1], 0.0, 1.0).unwrap(), &one).unwrap().full_rank);

        let aliased = IndexSets::from_components(vec![vec![0], vec![7]]).unwrap();
        let r = check_rank(&build_scheme(&[7], 0.0, 1.0).unwrap(), &aliased).unwrap();
        assert_eq!((r.rank, r.full_rank), (1, false));
    }

    #[test]
    fn rank_is_invariant_to_t0() {
        let sets = table_sets();
        let a = check_rank(&build_scheme(&[68, 69, 70, 71], 0.0, 1.0).unwrap(), &sets).unwrap();
        let b = check_rank(&build_scheme(&[68, 69, 70, 71], 0.377, 1.0).unwrap(), &sets).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn table_sensitivity() {
        let sets = table_sets();
        let base = build_scheme(&[68, 69, 70, 71], 0.0, 1.0).unwrap();
        let g = sensitivity(&base, &sets, &sets.union, DEFAULT_GRID_DENSITY).unwrap();
        assert!((g.gamma_max_db - 48.75).abs() < 0.1, "{}", g.gamma_max_db);
        let full = build_scheme(&[11, 18, 19, 37, 49, 68, 69, 70, 71], 0.0, 1.0).unwrap();
        let g = sensitivity(&full, &sets, &sets.union, DEFAULT_GRID_DENSITY).unwrap();
        assert!((g.gamma_max_db - 18.77).abs() < 0.1, "{}", g.gamma_max_db);
        let density = check_rank(&full, &sets).unwrap().density;
        assert!((density * 100.0 - 2.18).abs() < 0.02, "{density}");
    }

    #[test]
    fn complete_system_has_unit_sensitivity() {
        for q in 1..12u32 {
            let sets = IndexSets::from_components(vec![(0..q as i64).collect()]).unwrap();
            let s = build_scheme(&[q], 0.0, 1.0).unwrap();
            let g = sensitivity(&s, &sets, &sets.union, 128).unwrap();
            assert!((g.gamma_max - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn base_moduli_selection() {
        assert_eq!(select_base_moduli(&table_sets(), 4, 1.0, 20).unwrap(), vec![68, 69, 70, 71]);
    }

    #[test]
    fn greedy_reaches_target() {
        let sets = table_sets();
        let base = build_scheme(&[68, 69, 70, 71], 0.0, 1.0).unwrap();
        let candidates: Vec<u32> = (2..68).collect();
        let result = greedy_augment(&base, &sets, &candidates, 19.0, 6, 2048).unwrap();
        assert!(result.steps.len() <= 6);
        assert!(result.gamma_db <= 20.0, "{:?}", result.steps);
        let mut last = result.base_gamma_db;
        for step in &result.steps {
            assert!(step.gamma_db <= last * (1.0 + 1e-9));
            last = step.gamma_db;
        }
    }

    #[test]
    fn greedy_trivial_cases() {
        let sets = table_sets();
        let base = build_scheme(&[68, 69, 70, 71], 0.0, 1.0).unwrap();
        let met = greedy_augment(&base, &sets, &[11], 60.0, 3, 1024).unwrap();
        assert!(met.target_met && met.steps.is_empty());
        assert_eq!(met.scheme.moduli(), base.moduli());
        let empty = greedy_augment(&base, &sets, &[], 19.0, 3, 1024).unwrap();
        assert!(!empty.target_met && empty.steps.is_empty());
        assert_eq!(empty.scheme.moduli(), base.moduli());
    }

    #[test]
    fn universality_numbers() {
        let moduli = [11, 18, 19, 37, 49, 68, 69, 70, 71];
        let product: u64 = moduli.iter().map(|&q| q as u64).product();
        let l = moduli.iter().fold(1u64, |acc, &q| lcm(acc, q as u64).unwrap());
        let adj = universalize_period(&moduli, product / l, 1.0).unwrap();
        assert_eq!(adj.r, 159_049_016_335_440);
        assert_eq!(adj.p, 159_049_016_335_453);
        assert!((adj.relative_change / 8.17e-14 - 1.0).abs() < 5e-3);

        let small = universalize_period(&[2, 3], 1, 1.0).unwrap();
        assert_eq!((small.r, small.p), (6, 7));
        assert!((small.relative_change - 1.0 / 6.0).abs() < 1e-15);
        assert!((small.adjusted_period - 7.0 / 6.0).abs() < 1e-15);
        assert!(universalize_period(&[2, 3], 0, 1.0).is_err());
        assert!(matches!(universalize_period(&[2, 3], u64::MAX / 2, 1.0), Err(Error::Overflow(_))));
    }

    mod props {
        use super::*;
        use proptest::prelude::*;

        proptest! {
            #[test]
            fn dedup_matches_brute_force(set in proptest::collection::btree_set(1u32..40, 1..5)) {
                let moduli: Vec<u32> = set.into_iter().collect();
                let s = build_scheme(&moduli, 0.0, 1.0).unwrap();
                prop_assert_eq!(s.grid_len() - s.instants().len(), brute_collisions(&moduli));
                for w in s.instants().windows(2) {
                    prop_assert!(w[0].value() < w[1].value());
                }
                for (k, row) in s.grid_map().iter().enumerate() {
                    for (q, &i) in row.iter().enumerate() {
                        let f = s.instants()[i];
                        prop_assert_eq!(f.num * moduli[k] as u64, q as u64 * f.den);
                    }
                }
            }

            #[test]
            fn next_prime_is_next(r in 2u64..5000) {
                let adj = universalize_period(&[r as u32], 1, 1.0).unwrap();
                prop_assert!(is_prime(adj.p));
                prop_assert!((adj.r..adj.p).all(|x| !is_prime(x)));
            }
        }
    }
}
