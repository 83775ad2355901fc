//! Block reconstruction on the infinite multi-rate grid {nT + T·q/Q_k}.
//!
//! A block centered at τ uses, for every grid point (k, q), the one sample
//! whose offset t′ = nT + T·q/Q_k − τ lies in [−T/2, T/2). The windowed
//! samples are folded and solved with base instant −τ, which yields the
//! Fourier coefficients c_p of the windowed signal around τ directly.

use num_complex::Complex64;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::band_model::IndexSets;
use crate::error::{Error, Result};
use crate::smrs_design::SmrsScheme;
use crate::solver::{fold_samples, phase, FoldedSystem, GammaProfile, SolveMethod};
use crate::window::WindowSpec;

/// Grid points used when certifying ε over one period.
const CERTIFY_POINTS: usize = 2049;

/// Relative tolerance for deciding which block edge an instant falls on.
const EDGE_TOL: f64 = 1e-12;

/// Exact coordinates of an absolute sample instant T·(n + q/Q_k).
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct GridKey {
    pub n: i64,
    pub k: usize,
    pub q: u32,
}

impl GridKey {
    pub fn time(&self, moduli: &[u32], period: f64) -> f64 {
        period * (self.n as f64 + self.q as f64 / moduli[self.k] as f64)
    }
}

/// Anything that can deliver the signal value at a grid instant.
pub trait SampleSource: Sync {
    fn sample(&self, key: GridKey) -> Result<Complex64>;
}

/// Source backed by a closure of absolute time.
pub struct FnSource<F> {
    moduli: Vec<u32>,
    period: f64,
    f: F,
}

impl<F: Fn(f64) -> Complex64 + Sync> FnSource<F> {
    pub fn new(scheme: &SmrsScheme, f: F) -> Self {
        FnSource { moduli: scheme.moduli().to_vec(), period: scheme.period(), f }
    }
}

impl<F: Fn(f64) -> Complex64 + Sync> SampleSource for FnSource<F> {
    fn sample(&self, key: GridKey) -> Result<Complex64> {
        if key.k >= self.moduli.len() || key.q >= self.moduli[key.k] {
            return Err(Error::MissingSample { n: key.n, k: key.k, q: key.q });
        }
        Ok((self.f)(key.time(&self.moduli, self.period)))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PlanPoint {
    pub key: GridKey,
    /// t′ ∈ [−T/2, T/2), the instant relative to the block center.
    pub offset: f64,
}

/// One sample per physical instant of the scheme, keyed by the instant's
/// canonical grid point.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BlockPlan {
    pub tau: f64,
    pub points: Vec<PlanPoint>,
}

/// Places every instant of the scheme in [τ − T/2, τ + T/2), up to a
/// rounding tolerance at the edges. The infinite
/// grid is anchored at absolute time 0; the scheme's own t0 is not used.
pub fn plan_block(scheme: &SmrsScheme, tau: f64) -> BlockPlan {
    let period = scheme.period();
    let tol = EDGE_TOL * (period + tau.abs());
    let points = scheme
        .instants()
        .iter()
        .enumerate()
        .map(|(i, frac)| {
            let f = frac.value();
            let mut n = (tau / period - 0.5 - f).ceil() as i64;
            let offset = |n: i64| period * (f + n as f64) - tau;
            // Instants within rounding of +T/2 belong to the lower edge, so
            // blocks whose centers carry rounding error still agree on them.
            if offset(n) < -period / 2.0 - tol {
                n += 1;
            } else if offset(n) >= period / 2.0 - tol {
                n -= 1;
            }
            let (k, q) = scheme.canonical(i);
            PlanPoint { key: GridKey { n, k, q }, offset: offset(n) }
        })
        .collect();
    BlockPlan { tau, points }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BlockResult {
    pub tau: f64,
    /// Output instants relative to τ.
    pub offsets: Vec<f64>,
    /// c_p for p in the union index set.
    pub coefficients: Vec<Complex64>,
    pub z: Vec<Complex64>,
    /// (component index, samples) for each requested component.
    pub components: Vec<(usize, Vec<Complex64>)>,
}

/// Known noise level and amplitude bounds used by the pointwise error bound.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ErrorBudget {
    /// ℓ2 norm of the perturbation over all (k, q) grid samples.
    pub a_eta: f64,
    /// Amplitude bound per component.
    pub a_s: Vec<f64>,
    pub epsilon: f64,
}

impl ErrorBudget {
    /// Budget with A_η estimated as √N·σ̂ for N grid samples.
    pub fn from_sigma(sigma: f64, grid_len: usize, a_s: Vec<f64>, epsilon: f64) -> Self {
        ErrorBudget { a_eta: sigma * (grid_len as f64).sqrt(), a_s, epsilon }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum BoundTarget {
    Total,
    Component(usize),
}

/// Output schedule of a block stream.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StreamConfig {
    pub tau0: f64,
    pub tau_step: f64,
    pub n_blocks: usize,
    pub out_rate: f64,
    pub components: Vec<usize>,
}

impl StreamConfig {
    /// Index of the first output sample owned by block b.
    fn boundary(&self, b: usize) -> i64 {
        ((self.tau0 + (b as f64 - 0.5) * self.tau_step) * self.out_rate).ceil() as i64
    }

    /// Center of block b and its owned output instants relative to it.
    pub fn block(&self, b: usize) -> (f64, Vec<f64>) {
        let tau = self.tau0 + b as f64 * self.tau_step;
        let offsets = (self.boundary(b)..self.boundary(b + 1)).map(|j| j as f64 / self.out_rate - tau).collect();
        (tau, offsets)
    }
}

/// Scheme, index sets, folded system and window bundled for repeated use.
#[derive(Debug)]
pub struct Reconstructor {
    scheme: SmrsScheme,
    sets: IndexSets,
    system: FoldedSystem,
    window: WindowSpec,
    method: SolveMethod,
    /// Ranges of each component inside the union.
    ranges: Vec<std::ops::Range<usize>>,
    profiles: Vec<GammaProfile>,
    total_profile: GammaProfile,
}

impl Reconstructor {
    pub fn new(scheme: SmrsScheme, sets: IndexSets, window: WindowSpec) -> Result<Self> {
        if (scheme.period() - window.period).abs() > 1e-12 * window.period {
            return Err(Error::invalid("scheme and window use different periods"));
        }
        if sets.is_empty() {
            return Err(Error::EmptySupport);
        }
        let system = FoldedSystem::build(&scheme, &sets.union)?;
        if !system.is_full_rank() {
            return Err(Error::RankDeficient { rank: system.rank(), cols: sets.union.len() });
        }
        let mut ranges = Vec::with_capacity(sets.per_component.len());
        for set in &sets.per_component {
            let start = set.first().map_or(0, |p| sets.union.binary_search(p).expect("component inside union"));
            ranges.push(start..start + set.len());
        }
        let profiles = sets
            .per_component
            .iter()
            .map(|set| system.gamma_profile(set))
            .collect::<Result<Vec<_>>>()?;
        let total_profile = system.gamma_profile(&sets.union)?;
        Ok(Reconstructor { scheme, sets, system, window, method: SolveMethod::Dense, ranges, profiles, total_profile })
    }

    pub fn with_method(mut self, method: SolveMethod) -> Self {
        self.method = method;
        self
    }

    pub fn scheme(&self) -> &SmrsScheme {
        &self.scheme
    }

    pub fn sets(&self) -> &IndexSets {
        &self.sets
    }

    pub fn system(&self) -> &FoldedSystem {
        &self.system
    }

    pub fn window(&self) -> &WindowSpec {
        &self.window
    }

    pub fn plan(&self, tau: f64) -> BlockPlan {
        plan_block(&self.scheme, tau)
    }

    /// Requests every planned sample from the source.
    pub fn fetch(&self, plan: &BlockPlan, source: &dyn SampleSource) -> Result<Vec<Complex64>> {
        plan.points.iter().map(|pt| source.sample(pt.key)).collect()
    }

    /// Fourier coefficients c_p(τ) of the windowed signal from raw samples
    /// given in plan order.
    pub fn coefficients(&self, plan: &BlockPlan, samples: &[Complex64]) -> Result<Vec<Complex64>> {
        if samples.len() != plan.points.len() {
            return Err(Error::SampleCount { expected: plan.points.len(), got: samples.len() });
        }
        let windowed: Vec<Complex64> = plan
            .points
            .iter()
            .zip(samples)
            .map(|(pt, s)| s * self.window.eval(pt.offset))
            .collect();
        let data = fold_samples(&self.scheme, &windowed)?;
        let coef = self.system.solve(&data, -plan.tau, self.scheme.period(), self.method)?;
        Ok(coef.beta)
    }

    fn check_offset(&self, t: f64, tau: f64) -> Result<()> {
        let half = self.window.t1 / 2.0;
        if t.abs() > half * (1.0 + 1e-12) {
            return Err(Error::OutsideInterval { t: tau + t, tau });
        }
        Ok(())
    }

    /// Σ_{p in range} c_p e^{j2πpt/T}, with the phase advanced by
    /// recurrence across the contiguous range.
    fn partial_sum(&self, coefficients: &[Complex64], range: std::ops::Range<usize>, t: f64) -> Complex64 {
        if range.is_empty() {
            return Complex64::new(0.0, 0.0);
        }
        let x = t / self.scheme.period();
        let step = phase(1, x);
        let mut e = phase(self.sets.union[range.start], x);
        let mut acc = Complex64::new(0.0, 0.0);
        for c in &coefficients[range] {
            acc += c * e;
            e *= step;
        }
        acc
    }

    /// Reconstructs z and the requested components at `offsets` relative to
    /// τ, each inside the accurate interval |t| ≤ T1/2.
    pub fn reconstruct_block(
        &self,
        plan: &BlockPlan,
        samples: &[Complex64],
        offsets: &[f64],
        components: &[usize],
    ) -> Result<BlockResult> {
        for &m in components {
            if m >= self.ranges.len() {
                return Err(Error::invalid(format!("component {m} does not exist")));
            }
        }
        for &t in offsets {
            self.check_offset(t, plan.tau)?;
        }
        let coefficients = self.coefficients(plan, samples)?;
        let mut z = Vec::with_capacity(offsets.len());
        let mut comps: Vec<(usize, Vec<Complex64>)> =
            components.iter().map(|&m| (m, Vec::with_capacity(offsets.len()))).collect();
        for &t in offsets {
            let inv_w = 1.0 / self.window.eval(t);
            let parts: Vec<Complex64> =
                self.ranges.iter().map(|r| self.partial_sum(&coefficients, r.clone(), t)).collect();
            z.push(parts.iter().sum::<Complex64>() * inv_w);
            for (m, out) in comps.iter_mut() {
                out.push(parts[*m] * inv_w);
            }
        }
        Ok(BlockResult { tau: plan.tau, offsets: offsets.to_vec(), coefficients, z, components: comps })
    }

    /// Reconstructs consecutive blocks τ_b = τ0 + b·step. Block b owns the
    /// output instants j/out_rate in [τ_b − step/2, τ_b + step/2), so the
    /// outputs of successive blocks abut without overlap. Blocks are
    /// computed in parallel batches and handed to `sink` in order.
    pub fn stream_reconstruct(
        &self,
        source: &dyn SampleSource,
        cfg: &StreamConfig,
        mut sink: impl FnMut(BlockResult) -> Result<()>,
    ) -> Result<()> {
        if !(cfg.tau_step > 0.0 && cfg.tau_step <= self.window.t1 * (1.0 + 1e-12)) {
            return Err(Error::invalid(format!(
                "block step {} must lie in (0, T1] with T1 = {}",
                cfg.tau_step, self.window.t1
            )));
        }
        if !(cfg.out_rate > 0.0 && cfg.out_rate.is_finite()) {
            return Err(Error::invalid("output rate must be positive"));
        }
        let batch = (rayon::current_num_threads() * 2).max(1);
        let mut b0 = 0;
        while b0 < cfg.n_blocks {
            let b1 = (b0 + batch).min(cfg.n_blocks);
            let results: Vec<Result<BlockResult>> = (b0..b1)
                .into_par_iter()
                .map(|b| {
                    let (tau, offsets) = cfg.block(b);
                    let plan = self.plan(tau);
                    let samples = self.fetch(&plan, source)?;
                    self.reconstruct_block(&plan, &samples, &offsets, &cfg.components)
                })
                .collect();
            for r in results {
                sink(r?)?;
            }
            b0 = b1;
        }
        Ok(())
    }

    /// ε certified by the analytic tail bound over one period.
    pub fn certified_epsilon(&self) -> f64 {
        self.window.certified_epsilon(CERTIFY_POINTS)
    }

    /// Γ(t; J_sub, −τ) at block offset t for the whole union or one component.
    pub fn gamma(&self, target: BoundTarget, tau: f64, t: f64) -> Result<f64> {
        let profile = match target {
            BoundTarget::Total => &self.total_profile,
            BoundTarget::Component(m) => self
                .profiles
                .get(m)
                .ok_or_else(|| Error::invalid(format!("component {m} does not exist")))?,
        };
        Ok(profile.eval(t + tau, self.scheme.period()))
    }

    /// Pointwise bound A_η·Γ/w + (ε/w)·[(ΣA_s)·√N·Γ + A_term] at offset t.
    pub fn error_bound(&self, budget: &ErrorBudget, target: BoundTarget, tau: f64, t: f64) -> Result<f64> {
        self.check_offset(t, tau)?;
        if budget.a_s.len() != self.ranges.len() {
            return Err(Error::invalid(format!(
                "budget lists {} amplitude bounds for {} components",
                budget.a_s.len(),
                self.ranges.len()
            )));
        }
        let gamma = self.gamma(target, tau, t)?;
        let w = self.window.eval(t);
        let sum_a: f64 = budget.a_s.iter().sum();
        let a_term = match target {
            BoundTarget::Total => sum_a,
            BoundTarget::Component(m) => budget.a_s[m],
        };
        let n = self.scheme.grid_len() as f64;
        Ok(budget.a_eta * gamma / w + budget.epsilon / w * (sum_a * n.sqrt() * gamma + a_term))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::smrs_design::build_scheme;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn setup() -> Reconstructor {
        let sets = IndexSets::from_components(vec![(-20..=-8).collect(), (10..=25).collect()]).unwrap();
        let scheme = build_scheme(&[11, 12, 13], 0.0, 1.0).unwrap();
        let window = WindowSpec::design(6.0, 1.0, 0.5).unwrap();
        Reconstructor::new(scheme, sets, window).unwrap()
    }

    #[test]
    fn plan_at_zero() {
        let scheme = build_scheme(&[4, 5], 0.0, 1.0).unwrap();
        let plan = plan_block(&scheme, 0.0);
        for pt in &plan.points {
            let f = pt.key.q as f64 / scheme.moduli()[pt.key.k] as f64;
            let expected = if f < 0.5 { 0 } else { -1 };
            assert_eq!(pt.key.n, expected, "f={f}");
            assert!((-0.5..0.5).contains(&pt.offset));
        }
    }

    #[test]
    fn plan_is_periodic() {
        let scheme = build_scheme(&[7, 9], 0.0, 2.0).unwrap();
        let a = plan_block(&scheme, 0.3);
        let b = plan_block(&scheme, 2.3);
        for (x, y) in a.points.iter().zip(&b.points) {
            assert_eq!(y.key.n, x.key.n + 1);
            assert!((x.offset - y.offset).abs() < 1e-12);
        }
    }

    #[test]
    fn plan_points_lie_on_the_grid() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let scheme = build_scheme(&[6, 10, 15], 0.0, 1.5).unwrap();
        for _ in 0..200 {
            let tau = rng.random_range(-50.0..50.0);
            let plan = plan_block(&scheme, tau);
            assert_eq!(plan.points.len(), scheme.instants().len());
            for (i, pt) in plan.points.iter().enumerate() {
                assert!(pt.offset >= -0.75 && pt.offset < 0.75);
                let frac = scheme.instants()[i];
                let q = scheme.moduli()[pt.key.k] as u64;
                assert_eq!(frac.num * q, pt.key.q as u64 * frac.den);
                let abs = pt.key.time(scheme.moduli(), 1.5);
                assert!((abs - tau - pt.offset).abs() < 1e-9);
            }
        }
    }

    /// Signal whose windowed version around τ is exactly a trigonometric
    /// polynomial on the union.
    fn poly_source<'a>(rec: &'a Reconstructor, tau: f64, beta: &[Complex64]) -> impl Fn(f64) -> Complex64 + Sync + 'a {
        let cols = rec.sets().union.clone();
        let beta = beta.to_vec();
        move |t: f64| {
            let u = t - tau;
            let p: Complex64 = cols.iter().zip(&beta).map(|(&p, b)| b * phase(p, u)).sum();
            p / rec.window().eval(u)
        }
    }

    #[test]
    fn exact_round_trip() {
        let rec = setup();
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let beta: Vec<Complex64> = (0..rec.sets().union.len())
            .map(|_| Complex64::new(rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0)))
            .collect();
        let tau = 3.37;
        let f = poly_source(&rec, tau, &beta);
        let source = FnSource::new(rec.scheme(), &f);
        let plan = rec.plan(tau);
        let samples = rec.fetch(&plan, &source).unwrap();
        let offsets: Vec<f64> = (0..41).map(|i| -0.25 + i as f64 / 80.0).collect();
        let out = rec.reconstruct_block(&plan, &samples, &offsets, &[0, 1]).unwrap();
        for (c, b) in out.coefficients.iter().zip(&beta) {
            assert!((c - b).norm() < 1e-9);
        }
        for (i, &t) in offsets.iter().enumerate() {
            assert!((out.z[i] - f(tau + t)).norm() < 1e-9 * f(tau + t).norm().max(1.0));
            let sum = out.components[0].1[i] + out.components[1].1[i];
            assert!((sum - out.z[i]).norm() <= 1e-12 * out.z[i].norm().max(1.0));
        }
    }

    #[test]
    fn zero_input_and_bad_offsets() {
        let rec = setup();
        let plan = rec.plan(0.0);
        let zeros = vec![Complex64::new(0.0, 0.0); plan.points.len()];
        let out = rec.reconstruct_block(&plan, &zeros, &[0.0, 0.1], &[1]).unwrap();
        assert!(out.z.iter().chain(&out.components[0].1).all(|z| z.norm() == 0.0));
        assert!(matches!(rec.reconstruct_block(&plan, &zeros, &[0.3], &[]), Err(Error::OutsideInterval { .. })));
        assert!(rec.reconstruct_block(&plan, &zeros[1..], &[0.0], &[]).is_err());
        assert!(rec.reconstruct_block(&plan, &zeros, &[0.0], &[2]).is_err());
    }

    #[test]
    fn translation_covariance() {
        let rec = setup();
        let f = |t: f64| Complex64::from_polar(1.0, 2.0 * std::f64::consts::PI * 14.3 * t) + Complex64::new((0.7 * t).sin(), 0.0);
        let g = |t: f64| f(t - 1.0);
        let a = rec.coefficients(&rec.plan(0.4), &rec.fetch(&rec.plan(0.4), &FnSource::new(rec.scheme(), f)).unwrap()).unwrap();
        let b = rec.coefficients(&rec.plan(1.4), &rec.fetch(&rec.plan(1.4), &FnSource::new(rec.scheme(), g)).unwrap()).unwrap();
        for (x, y) in a.iter().zip(&b) {
            assert!((x - y).norm() < 1e-12);
        }
    }

    #[test]
    fn stream_tiles_output_and_matches_single_block() {
        let rec = setup();
        let f = |t: f64| Complex64::from_polar(1.0, 2.0 * std::f64::consts::PI * 15.2 * t);
        let source = FnSource::new(rec.scheme(), f);
        let cfg = StreamConfig { tau0: 0.0, tau_step: 0.5, n_blocks: 9, out_rate: 37.0, components: vec![1] };
        let mut instants = Vec::new();
        let mut first = None;
        rec.stream_reconstruct(&source, &cfg, |r| {
            instants.extend(r.offsets.iter().map(|t| ((t + r.tau) * 37.0).round() as i64));
            first.get_or_insert(r);
            Ok(())
        })
        .unwrap();
        let expected: Vec<i64> = (cfg.boundary(0)..cfg.boundary(9)).collect();
        assert_eq!(instants, expected);

        let first = first.unwrap();
        let plan = rec.plan(0.0);
        let single = rec
            .reconstruct_block(&plan, &rec.fetch(&plan, &source).unwrap(), &first.offsets, &[1])
            .unwrap();
        assert_eq!(single, first);

        let bad = StreamConfig { tau_step: 0.6, ..cfg.clone() };
        assert!(rec.stream_reconstruct(&source, &bad, |_| Ok(())).is_err());
    }

    #[test]
    fn bound_vanishes_without_noise_or_tails() {
        let rec = setup();
        let budget = ErrorBudget { a_eta: 0.0, a_s: vec![1.0, 1.0], epsilon: 0.0 };
        for i in 0..11 {
            let t = -0.25 + 0.05 * i as f64;
            assert_eq!(rec.error_bound(&budget, BoundTarget::Total, 0.2, t).unwrap(), 0.0);
        }
        assert!(rec.error_bound(&budget, BoundTarget::Total, 0.2, 0.4).is_err());
    }

    #[test]
    fn gamma_matches_kernels() {
        let rec = setup();
        let tau = 0.71;
        for i in 0..9 {
            let t = -0.2 + 0.05 * i as f64;
            let th = rec.system().kernel_eval(&rec.sets().per_component[1], t, -tau, 1.0).unwrap();
            let direct = th.iter().map(|z| z.norm_sqr()).sum::<f64>().sqrt();
            let g = rec.gamma(BoundTarget::Component(1), tau, t).unwrap();
            assert!((g - direct).abs() < 1e-12 * direct);
        }
    }

    #[test]
    fn rejects_rank_deficient_and_mismatched() {
        let sets = IndexSets::from_components(vec![(0..30).collect()]).unwrap();
        let scheme = build_scheme(&[7, 8], 0.0, 1.0).unwrap();
        let window = WindowSpec::design(6.0, 1.0, 0.5).unwrap();
        assert!(matches!(Reconstructor::new(scheme, sets.clone(), window), Err(Error::RankDeficient { .. })));
        let scheme = build_scheme(&[31], 0.0, 2.0).unwrap();
        assert!(Reconstructor::new(scheme, sets, window).is_err());
    }
}
