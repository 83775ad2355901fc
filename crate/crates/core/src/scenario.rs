//! Scenario files and the end-to-end pipelines behind the command-line tool.
//!
//! Every pipeline writes its artifacts atomically into an output directory
//! together with `manifest.json`, which records the config hash, the seed,
//! the crate version and a SHA-256 of every file written.

use std::collections::BTreeSet;
use std::path::{Path, PathBuf};

use nalgebra::DMatrix;
use num_complex::Complex64;
use rand::seq::index::sample as sample_indices;
use rand::SeedableRng;
use rand_chacha::ChaCha20Rng;
use rand_distr::{Distribution, StandardNormal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::band_model::{BandPlan, IndexSets, MultibandSupport, OccupancyReport};
use crate::blind_music::{assemble_data, estimate_support, music_spectrum, SupportRule};
use crate::error::{Error, Result};
use crate::io::{csv_table, write_atomic, SampleSet};
use crate::reconstructor::{BlockPlan, BoundTarget, ErrorBudget, GridKey, Reconstructor, StreamConfig};
use crate::siggen::{add_noise, add_noise_sigma, Signal, SignalSpec};
use crate::smrs_design::{
    build_scheme, greedy_augment, rank_report, select_base_moduli, sensitivity_of, AugmentResult, RankReport, SmrsScheme,
    DEFAULT_GRID_DENSITY,
};
use crate::solver::phase;
use crate::window::WindowSpec;

const PROBE_STREAM: u64 = 2 << 40;
const BASE_MODULI_TRIES: usize = 256;

fn default_t1() -> f64 {
    0.5
}
fn default_count() -> usize {
    1
}
fn default_rate() -> f64 {
    1000.0
}
fn default_min_run() -> usize {
    3
}
fn default_base_count() -> usize {
    4
}
fn default_density() -> usize {
    DEFAULT_GRID_DENSITY
}
fn default_trials() -> usize {
    1
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WindowConfig {
    /// T1 as a fraction of T.
    #[serde(default = "default_t1")]
    pub t1_over_t: f64,
    /// Shape parameter; the fitted optimum when absent.
    #[serde(default)]
    pub delta: Option<f64>,
}

impl Default for WindowConfig {
    fn default() -> Self {
        WindowConfig { t1_over_t: default_t1(), delta: None }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AugmentConfig {
    /// Inclusive range of candidate moduli.
    pub candidates: [u32; 2],
    pub target_db: f64,
    pub max_added: usize,
}

/// Either explicit moduli, or a base set of consecutive moduli chosen for
/// full rank, optionally augmented greedily.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SchemeSection {
    #[serde(default)]
    pub moduli: Option<Vec<u32>>,
    #[serde(default)]
    pub t0: f64,
    #[serde(default = "default_base_count")]
    pub base_count: usize,
    #[serde(default)]
    pub augment: Option<AugmentConfig>,
    #[serde(default = "default_density")]
    pub grid_density: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BlockSchedule {
    #[serde(default)]
    pub tau0: f64,
    /// Defaults to T1.
    #[serde(default)]
    pub tau_step: Option<f64>,
    #[serde(default = "default_count")]
    pub count: usize,
    #[serde(default = "default_rate")]
    pub out_rate: f64,
    /// Components to output; all when absent.
    #[serde(default)]
    pub components: Option<Vec<usize>>,
}

impl Default for BlockSchedule {
    fn default() -> Self {
        BlockSchedule { tau0: 0.0, tau_step: None, count: 1, out_rate: default_rate(), components: None }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SubspaceDim {
    /// Position of the largest ratio between consecutive singular values.
    Auto,
    Fixed(usize),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BlindConfig {
    pub blocks: usize,
    /// Defaults to T divided by the gcd of the moduli.
    #[serde(default)]
    pub tau_step: Option<f64>,
    #[serde(default)]
    pub tau0: f64,
    pub subspace_dim: SubspaceDim,
    /// Inclusive candidate index range; derived from the band plan when absent.
    #[serde(default)]
    pub candidates: Option<[i64; 2]>,
    #[serde(default)]
    pub threshold_db: Option<f64>,
    #[serde(default = "default_min_run")]
    pub min_run: usize,
    /// Merge runs that fall in the same band of the plan.
    #[serde(default)]
    pub use_model: bool,
}

/// Random sparse trigonometric polynomial on the expanded index set, used
/// as the windowed signal of every block. Reconstruction must return it
/// exactly.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProbeConfig {
    pub terms: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Scenario {
    pub name: String,
    #[serde(default)]
    pub seed: u64,
    pub band_plan: BandPlan,
    #[serde(default)]
    pub window: WindowConfig,
    pub scheme: SchemeSection,
    /// One signal per band of the plan, or none.
    #[serde(default)]
    pub signals: Vec<SignalSpec>,
    #[serde(default)]
    pub probe: Option<ProbeConfig>,
    /// Noise level relative to the mean sample power.
    #[serde(default)]
    pub snr_db: Option<f64>,
    /// Absolute noise σ; takes precedence over `snr_db`.
    #[serde(default)]
    pub noise_sigma: Option<f64>,
    #[serde(default)]
    pub blocks: BlockSchedule,
    #[serde(default)]
    pub blind: Option<BlindConfig>,
    /// Independent noise realizations averaged for the coefficient SNR.
    #[serde(default = "default_trials")]
    pub trials: usize,
}

/// Everything derived from a scenario before any samples exist.
#[derive(Debug)]
pub struct Context {
    pub support: MultibandSupport,
    pub sets: IndexSets,
    pub window: WindowSpec,
    pub scheme: SmrsScheme,
    pub augment: Option<AugmentResult>,
}

impl Scenario {
    pub fn from_json(text: &str) -> Result<Self> {
        let sc: Scenario = serde_json::from_str(text)?;
        sc.validate()?;
        Ok(sc)
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_json(&std::fs::read_to_string(path)?)
    }

    pub fn period(&self) -> f64 {
        self.band_plan.period
    }

    pub fn validate(&self) -> Result<()> {
        let support = self.band_plan.to_support()?;
        if support.is_empty() {
            return Err(Error::invalid("band plan lists no bands"));
        }
        if !self.signals.is_empty() && self.probe.is_some() {
            return Err(Error::invalid("a scenario holds either signals or a probe polynomial, not both"));
        }
        if !self.signals.is_empty() {
            if self.signals.len() != support.len() {
                return Err(Error::invalid(format!(
                    "{} signals for {} bands; every band needs exactly one signal",
                    self.signals.len(),
                    support.len()
                )));
            }
            for (m, (s, band)) in self.signals.iter().zip(support.bands()).enumerate() {
                let tol = 1e-9 * band.b.abs().max(band.a.abs()).max(1.0);
                let (lo, hi) = (s.fc - s.bandwidth / 2.0, s.fc + s.bandwidth / 2.0);
                if lo < band.a - tol || hi > band.b + tol {
                    return Err(Error::invalid(format!(
                        "signal {m} occupies [{lo}, {hi}] outside band [{}, {}]",
                        band.a, band.b
                    )));
                }
            }
        }
        if let Some(p) = &self.probe {
            if p.terms == 0 {
                return Err(Error::invalid("probe needs at least one term"));
            }
        }
        if self.snr_db.is_some_and(f64::is_nan) || self.noise_sigma.is_some_and(|s| !(s >= 0.0 && s.is_finite())) {
            return Err(Error::invalid("noise level must be a finite non-negative number"));
        }
        if !(self.window.t1_over_t > 0.0 && self.window.t1_over_t < 1.0) {
            return Err(Error::invalid("t1_over_t must lie in (0, 1)"));
        }
        if self.blocks.count == 0 {
            return Err(Error::invalid("block count must be positive"));
        }
        if self.trials == 0 {
            return Err(Error::invalid("trials must be positive"));
        }
        if let Some(b) = &self.blind {
            if b.blocks == 0 {
                return Err(Error::invalid("blind scan needs at least one block"));
            }
            if let Some([p1, p2]) = b.candidates {
                if p2 < p1 {
                    return Err(Error::invalid("candidate range is empty"));
                }
            }
        }
        Ok(())
    }

    /// Hex SHA-256 of the canonical JSON form.
    pub fn config_hash(&self) -> String {
        hex(&Sha256::digest(serde_json::to_vec(self).expect("scenario serializes")))
    }

    pub fn window_spec(&self) -> Result<WindowSpec> {
        let t = self.period();
        let t1 = self.window.t1_over_t * t;
        match self.window.delta {
            Some(d) => WindowSpec::with_delta(self.band_plan.window_bw, t, t1, d),
            None => WindowSpec::design(self.band_plan.window_bw, t, t1),
        }
    }

    pub fn context(&self) -> Result<Context> {
        self.validate()?;
        let support = self.band_plan.to_support()?;
        let sets = support.expanded_index_sets();
        let window = self.window_spec()?;
        let s = &self.scheme;
        let t = self.period();
        let (scheme, augment) = match &s.moduli {
            Some(m) => (build_scheme(m, s.t0, t)?, None),
            None => {
                let base = build_scheme(&select_base_moduli(&sets, s.base_count, t, BASE_MODULI_TRIES)?, s.t0, t)?;
                match &s.augment {
                    Some(a) => {
                        let pool: Vec<u32> = (a.candidates[0]..=a.candidates[1]).collect();
                        let res = greedy_augment(&base, &sets, &pool, a.target_db, a.max_added, s.grid_density)?;
                        (res.scheme.clone(), Some(res))
                    }
                    None => (base, None),
                }
            }
        };
        Ok(Context { support, sets, window, scheme, augment })
    }

    pub fn block_config(&self, window: &WindowSpec, components: usize) -> StreamConfig {
        let b = &self.blocks;
        StreamConfig {
            tau0: b.tau0,
            tau_step: b.tau_step.unwrap_or(window.t1),
            n_blocks: b.count,
            out_rate: b.out_rate,
            components: b.components.clone().unwrap_or_else(|| (0..components).collect()),
        }
    }

    pub fn blind_taus(&self, scheme: &SmrsScheme) -> Result<Vec<f64>> {
        let b = self.blind.as_ref().ok_or_else(|| Error::invalid("scenario has no blind section"))?;
        let g = scheme.moduli().iter().fold(0u64, |acc, &q| crate::primes::gcd(acc, q as u64));
        Ok((0..b.blocks)
            .map(|h| match b.tau_step {
                Some(step) => b.tau0 + h as f64 * step,
                None => b.tau0 + h as f64 * self.period() / g as f64,
            })
            .collect())
    }

    /// Signal specs for one run, with every seed offset by `run_seed`, one
    /// RNG stream per component and the normalization horizon set to cover
    /// `span`.
    pub fn signal_specs(&self, run_seed: u64, span: [f64; 2]) -> Vec<SignalSpec> {
        self.signals
            .iter()
            .enumerate()
            .map(|(m, s)| {
                let mut s = s.clone();
                s.seed = s.seed.wrapping_add(run_seed);
                s.stream = s.stream.wrapping_add(m as u64);
                s.horizon = span;
                s
            })
            .collect()
    }
}

fn hex(bytes: &[u8]) -> String {
    bytes.iter().map(|b| format!("{b:02x}")).collect()
}

fn noise_seed(run_seed: u64) -> u64 {
    run_seed ^ 0x6e6f_6973_6500_0000
}

/// Generated samples for a set of blocks, with and without noise.
#[derive(Debug, Clone)]
pub struct Generated {
    pub clean: SampleSet,
    pub noisy: SampleSet,
    pub sigma: f64,
    pub signals: Vec<Signal>,
}

fn block_keys(scheme: &SmrsScheme, taus: &[f64]) -> BTreeSet<GridKey> {
    taus.iter()
        .flat_map(|&tau| crate::reconstructor::plan_block(scheme, tau).points.into_iter().map(|p| p.key))
        .collect()
}

fn span_of(taus: &[f64], period: f64) -> [f64; 2] {
    let lo = taus.iter().copied().fold(f64::INFINITY, f64::min);
    let hi = taus.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    [lo - period, hi + period]
}

/// Evaluates the scenario signals at every grid point used by the blocks
/// centered at `taus` and adds noise.
pub fn generate_samples(sc: &Scenario, scheme: &SmrsScheme, taus: &[f64], run_seed: u64) -> Result<Generated> {
    if sc.probe.is_some() {
        return Err(Error::invalid("probe scenarios have block-dependent samples and cannot be written to a sample file"));
    }
    let t = sc.period();
    let specs = sc.signal_specs(run_seed, span_of(taus, t));
    let signals = specs.iter().map(|s| Signal::new(s, t)).collect::<Result<Vec<_>>>()?;
    let keys: Vec<GridKey> = block_keys(scheme, taus).into_iter().collect();
    let values: Vec<Complex64> = keys
        .par_iter()
        .map(|k| {
            let time = k.time(scheme.moduli(), t);
            signals.iter().map(|s| s.eval(time)).sum()
        })
        .collect();
    let clean: SampleSet = keys.iter().copied().zip(values.iter().copied()).collect();
    let mut noisy_values = values;
    let sigma = match (sc.noise_sigma, sc.snr_db) {
        (Some(sigma), _) => {
            add_noise_sigma(&mut noisy_values, sigma, noise_seed(run_seed));
            sigma
        }
        (None, Some(snr)) => add_noise(&mut noisy_values, snr, noise_seed(run_seed)),
        (None, None) => 0.0,
    };
    let noisy = keys.into_iter().zip(noisy_values).collect();
    Ok(Generated { clean, noisy, sigma, signals })
}

/// Sparse polynomial Σ a_p e^{j2πpt/T} with Σ|a_p| = 1.
#[derive(Debug, Clone)]
pub struct Probe {
    terms: Vec<(i64, Complex64)>,
    period: f64,
}

impl Probe {
    pub fn new(sets: &IndexSets, terms: usize, period: f64, seed: u64) -> Self {
        let mut rng = ChaCha20Rng::seed_from_u64(seed);
        rng.set_stream(PROBE_STREAM);
        let picks = sample_indices(&mut rng, sets.union.len(), terms.min(sets.union.len()));
        let mut terms: Vec<(i64, Complex64)> = picks
            .into_iter()
            .map(|i| {
                let re: f64 = StandardNormal.sample(&mut rng);
                let im: f64 = StandardNormal.sample(&mut rng);
                (sets.union[i], Complex64::new(re, im))
            })
            .collect();
        terms.sort_by_key(|t| t.0);
        let norm: f64 = terms.iter().map(|t| t.1.norm()).sum();
        for t in &mut terms {
            t.1 /= norm;
        }
        Probe { terms, period }
    }

    /// Value restricted to indices in `subset` (all when `None`).
    pub fn eval(&self, t: f64, subset: Option<&[i64]>) -> Complex64 {
        let x = t / self.period;
        self.terms
            .iter()
            .filter(|(p, _)| subset.is_none_or(|s| s.binary_search(p).is_ok()))
            .map(|(p, a)| a * phase(*p, x))
            .sum()
    }

    pub fn coefficient(&self, p: i64) -> Complex64 {
        self.terms.iter().find(|t| t.0 == p).map_or(Complex64::new(0.0, 0.0), |t| t.1)
    }
}

/// Collects written files and their hashes, then writes the manifest.
struct Outputs {
    dir: PathBuf,
    files: Vec<(String, String)>,
}

impl Outputs {
    fn new(dir: &Path) -> Result<Self> {
        std::fs::create_dir_all(dir)?;
        Ok(Outputs { dir: dir.to_path_buf(), files: Vec::new() })
    }

    fn put(&mut self, name: &str, bytes: &[u8]) -> Result<()> {
        write_atomic(&self.dir.join(name), bytes)?;
        self.files.push((name.to_string(), hex(&Sha256::digest(bytes))));
        Ok(())
    }

    fn json<T: Serialize>(&mut self, name: &str, value: &T) -> Result<()> {
        let mut bytes = serde_json::to_vec_pretty(value)?;
        bytes.push(b'\n');
        self.put(name, &bytes)
    }

    fn finish(self, command: &str, sc: &Scenario) -> Result<Vec<PathBuf>> {
        self.finish_with(command, &sc.name, sc.config_hash(), sc.seed)
    }

    fn finish_with(self, command: &str, name: &str, config_sha256: String, seed: u64) -> Result<Vec<PathBuf>> {
        let manifest = Manifest {
            command: command.to_string(),
            scenario: name.to_string(),
            config_sha256,
            seed,
            version: env!("CARGO_PKG_VERSION").to_string(),
            outputs: self.files.iter().map(|(n, h)| FileDigest { name: n.clone(), sha256: h.clone() }).collect(),
        };
        let mut bytes = serde_json::to_vec_pretty(&manifest)?;
        bytes.push(b'\n');
        write_atomic(&self.dir.join("manifest.json"), &bytes)?;
        let mut paths: Vec<PathBuf> = self.files.iter().map(|(n, _)| self.dir.join(n)).collect();
        paths.push(self.dir.join("manifest.json"));
        Ok(paths)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FileDigest {
    pub name: String,
    pub sha256: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub command: String,
    pub scenario: String,
    pub config_sha256: String,
    pub seed: u64,
    pub version: String,
    pub outputs: Vec<FileDigest>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WindowReport {
    pub bwt: f64,
    pub period: f64,
    pub t1: f64,
    pub delta: f64,
    pub rho: f64,
    pub epsilon: f64,
    pub certified_epsilon: f64,
    pub delta_w: f64,
    pub c: f64,
}

impl WindowReport {
    pub fn of(w: &WindowSpec) -> Self {
        WindowReport {
            bwt: w.bwt(),
            period: w.period,
            t1: w.t1,
            delta: w.delta,
            rho: w.rho,
            epsilon: w.epsilon,
            certified_epsilon: w.certified_epsilon(2049),
            delta_w: w.delta_w,
            c: w.c,
        }
    }
}

/// Window constants as JSON and, when `points` > 1, a CSV of
/// (t, w(t), tail_bound(t)) over [−T/2, T/2].
pub fn window_info(window: &WindowSpec, points: usize, out_dir: &Path) -> Result<(WindowReport, Vec<PathBuf>)> {
    let mut out = Outputs::new(out_dir)?;
    let report = WindowReport::of(window);
    out.json("window.json", &report)?;
    if points > 1 {
        let t = window.period;
        let rows = (0..points)
            .map(|i| {
                let x = -t / 2.0 + t * i as f64 / (points - 1) as f64;
                Ok(vec![x, window.eval(x), window.tail_bound(x)?])
            })
            .collect::<Result<Vec<_>>>()?;
        out.put("window.csv", csv_table(&["t", "w", "tail_bound"], rows).as_bytes())?;
    }
    let params = serde_json::to_vec(&(window.bw, window.period, window.t1, window.delta, points))?;
    Ok((report, out.finish_with("window-info", "window", hex(&Sha256::digest(params)), 0)?))
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct OccupancySummary {
    #[serde(flatten)]
    pub report: OccupancyReport,
    pub sampling_rate: f64,
    pub nyquist_over_rate: f64,
    pub rate_over_landau: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct DesignReport {
    pub moduli: Vec<u32>,
    pub instants: usize,
    pub index_ranges: Vec<[i64; 2]>,
    pub union_len: usize,
    pub rank: RankReport,
    pub gamma_max_db: f64,
    pub occupancy: OccupancySummary,
    pub augment: Option<AugmentResult>,
}

fn ranges(sets: &IndexSets) -> Vec<[i64; 2]> {
    sets.per_component.iter().filter(|s| !s.is_empty()).map(|s| [s[0], s[s.len() - 1]]).collect()
}

/// Index sets, scheme, rank, Γ curve and occupancy for the scenario.
pub fn run_design(sc: &Scenario, out_dir: &Path) -> Result<(DesignReport, Vec<PathBuf>)> {
    let ctx = sc.context()?;
    let system = crate::solver::FoldedSystem::build(&ctx.scheme, &ctx.sets.union)?;
    let rank = rank_report(&system);
    if !rank.full_rank {
        return Err(Error::RankDeficient { rank: rank.rank, cols: rank.cols });
    }
    let sens = sensitivity_of(&system, &ctx.sets.union, sc.scheme.grid_density)?;
    let occ = ctx.support.support_metrics();
    let rate = ctx.scheme.average_rate();
    let report = DesignReport {
        moduli: ctx.scheme.moduli().to_vec(),
        instants: ctx.scheme.instants().len(),
        index_ranges: ranges(&ctx.sets),
        union_len: ctx.sets.union.len(),
        rank,
        gamma_max_db: sens.gamma_max_db,
        occupancy: OccupancySummary {
            report: occ,
            sampling_rate: rate,
            nyquist_over_rate: occ.nyquist_ratio(rate),
            rate_over_landau: occ.landau_ratio(rate),
        },
        augment: ctx.augment.clone(),
    };
    let mut out = Outputs::new(out_dir)?;
    out.json("scheme.json", &ctx.scheme)?;
    out.json("index_sets.json", &ctx.sets)?;
    out.json("design.json", &report)?;
    let rows = sens
        .offsets(sc.period())
        .zip(&sens.gamma)
        .map(|(t, &g)| vec![t + ctx.scheme.t0(), g, 20.0 * g.log10()]);
    out.put("gamma.csv", csv_table(&["t", "gamma", "gamma_db"], rows).as_bytes())?;
    Ok((report, out.finish("design", sc)?))
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct GenerateReport {
    pub samples: usize,
    pub noise_sigma: f64,
    pub signal_scales: Vec<f64>,
}

/// Writes the noisy samples needed by the reconstruction blocks and, if
/// present, the blind-scan blocks.
pub fn run_generate(sc: &Scenario, out_dir: &Path, csv: bool) -> Result<(GenerateReport, Vec<PathBuf>)> {
    let ctx = sc.context()?;
    let cfg = sc.block_config(&ctx.window, ctx.sets.per_component.len());
    let mut taus: Vec<f64> = (0..cfg.n_blocks).map(|b| cfg.tau0 + b as f64 * cfg.tau_step).collect();
    if sc.blind.is_some() {
        taus.extend(sc.blind_taus(&ctx.scheme)?);
    }
    let g = generate_samples(sc, &ctx.scheme, &taus, sc.seed)?;
    let report = GenerateReport {
        samples: g.noisy.len(),
        noise_sigma: g.sigma,
        signal_scales: g.signals.iter().map(Signal::scale).collect(),
    };
    let mut out = Outputs::new(out_dir)?;
    if csv {
        out.put("samples.csv", g.noisy.to_csv().as_bytes())?;
    } else {
        out.put("samples.mbsp", &g.noisy.to_bytes()?)?;
    }
    out.json("generate.json", &report)?;
    Ok((report, out.finish("generate", sc)?))
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ReconstructReport {
    pub blocks: usize,
    pub outputs: usize,
    pub noise_sigma: f64,
    pub certified_epsilon: f64,
    /// Recovered-coefficient SNR per trial, and its mean in dB.
    pub coefficient_snr_db: Option<Vec<f64>>,
    pub mean_coefficient_snr_db: Option<f64>,
    pub max_error: Option<f64>,
    pub max_error_db: Option<f64>,
    pub min_error_db: Option<f64>,
    pub component_max_error: Option<Vec<f64>>,
    /// Output instants where the measured error exceeded the bound.
    pub bound_violations: Option<usize>,
}

struct BlockOutcome {
    tau: f64,
    offsets: Vec<f64>,
    z: Vec<Complex64>,
    components: Vec<(usize, Vec<Complex64>)>,
    truth: Option<(Vec<Complex64>, Vec<Vec<Complex64>>)>,
    bounds: Option<(Vec<f64>, Vec<Vec<f64>>)>,
}

fn probe_samples(probe: &Probe, window: &WindowSpec, plan: &BlockPlan) -> Vec<Complex64> {
    plan.points.iter().map(|pt| probe.eval(pt.offset, None) / window.eval(pt.offset)).collect()
}

/// Σ|c_clean|² / Σ|c_noisy − c_clean|² over all blocks, in dB.
pub fn coefficient_snr_db(rec: &Reconstructor, clean: &SampleSet, noisy: &SampleSet, taus: &[f64]) -> Result<f64> {
    let parts = taus
        .par_iter()
        .map(|&tau| {
            let plan = rec.plan(tau);
            let c0 = rec.coefficients(&plan, &rec.fetch(&plan, clean)?)?;
            let c1 = rec.coefficients(&plan, &rec.fetch(&plan, noisy)?)?;
            let s: f64 = c0.iter().map(|c| c.norm_sqr()).sum();
            let e: f64 = c0.iter().zip(&c1).map(|(a, b)| (a - b).norm_sqr()).sum();
            Ok((s, e))
        })
        .collect::<Result<Vec<_>>>()?;
    let (s, e) = parts.iter().fold((0.0, 0.0), |acc, p| (acc.0 + p.0, acc.1 + p.1));
    Ok(10.0 * (s / e).log10())
}

fn db(x: f64) -> f64 {
    20.0 * x.log10()
}

/// Reconstructs the scheduled blocks from generated samples, or from a
/// sample file when `samples` is given. With generated samples the error
/// against the true signal and the pointwise bound are written as well.
pub fn run_reconstruct(sc: &Scenario, out_dir: &Path, samples: Option<&Path>) -> Result<(ReconstructReport, Vec<PathBuf>)> {
    let ctx = sc.context()?;
    let n_comp = ctx.sets.per_component.len();
    let rec = Reconstructor::new(ctx.scheme.clone(), ctx.sets.clone(), ctx.window)?;
    let cfg = sc.block_config(&ctx.window, n_comp);
    if let Some(&m) = cfg.components.iter().find(|&&m| m >= n_comp) {
        return Err(Error::invalid(format!("component {m} does not exist")));
    }
    let taus: Vec<f64> = (0..cfg.n_blocks).map(|b| cfg.block(b).0).collect();
    let epsilon = rec.certified_epsilon();
    let probe = sc.probe.as_ref().map(|p| Probe::new(&ctx.sets, p.terms, sc.period(), sc.seed));

    let file = samples.map(SampleSet::load).transpose()?;
    let generated = match (&file, &probe) {
        (None, None) => Some(generate_samples(sc, &ctx.scheme, &taus, sc.seed)?),
        _ => None,
    };
    let sigma = generated.as_ref().map_or(0.0, |g| g.sigma);
    let budget = ErrorBudget::from_sigma(sigma, ctx.scheme.grid_len(), vec![1.0; n_comp], epsilon);

    let outcomes = (0..cfg.n_blocks)
        .into_par_iter()
        .map(|b| {
            let (tau, offsets) = cfg.block(b);
            let plan = rec.plan(tau);
            let data = match (&file, &probe, &generated) {
                (Some(f), _, _) => rec.fetch(&plan, f)?,
                (None, Some(p), _) => probe_samples(p, &ctx.window, &plan),
                (None, None, Some(g)) => rec.fetch(&plan, &g.noisy)?,
                _ => unreachable!("one sample origin is always present"),
            };
            let r = rec.reconstruct_block(&plan, &data, &offsets, &cfg.components)?;
            let truth = match (&probe, &generated) {
                (Some(p), _) => Some((
                    offsets.iter().map(|&t| p.eval(t, None) / ctx.window.eval(t)).collect(),
                    cfg.components
                        .iter()
                        .map(|&m| {
                            let set = &ctx.sets.per_component[m];
                            offsets.iter().map(|&t| p.eval(t, Some(set)) / ctx.window.eval(t)).collect()
                        })
                        .collect(),
                )),
                (None, Some(g)) if file.is_none() => Some((
                    offsets.iter().map(|&t| g.signals.iter().map(|s| s.eval(tau + t)).sum()).collect(),
                    cfg.components
                        .iter()
                        .map(|&m| offsets.iter().map(|&t| g.signals[m].eval(tau + t)).collect())
                        .collect(),
                )),
                _ => None,
            };
            let bounds = if generated.is_some() && file.is_none() {
                let total = offsets
                    .iter()
                    .map(|&t| rec.error_bound(&budget, BoundTarget::Total, tau, t))
                    .collect::<Result<Vec<_>>>()?;
                let comps = cfg
                    .components
                    .iter()
                    .map(|&m| {
                        offsets
                            .iter()
                            .map(|&t| rec.error_bound(&budget, BoundTarget::Component(m), tau, t))
                            .collect::<Result<Vec<_>>>()
                    })
                    .collect::<Result<Vec<_>>>()?;
                Some((total, comps))
            } else {
                None
            };
            Ok(BlockOutcome { tau, offsets, z: r.z, components: r.components, truth, bounds })
        })
        .collect::<Result<Vec<_>>>()?;

    let mut out = Outputs::new(out_dir)?;
    let rows = outcomes.iter().flat_map(|o| {
        o.offsets.iter().zip(&o.z).map(move |(t, z)| vec![o.tau + t, z.re, z.im])
    });
    out.put("z.csv", csv_table(&["t", "re", "im"], rows).as_bytes())?;
    for (i, &m) in cfg.components.iter().enumerate() {
        let rows = outcomes.iter().flat_map(|o| {
            o.offsets.iter().zip(&o.components[i].1).map(move |(t, z)| vec![o.tau + t, z.re, z.im])
        });
        out.put(&format!("component_{m}.csv"), csv_table(&["t", "re", "im"], rows).as_bytes())?;
    }

    let mut report = ReconstructReport {
        blocks: cfg.n_blocks,
        outputs: outcomes.iter().map(|o| o.offsets.len()).sum(),
        noise_sigma: sigma,
        certified_epsilon: epsilon,
        coefficient_snr_db: None,
        mean_coefficient_snr_db: None,
        max_error: None,
        max_error_db: None,
        min_error_db: None,
        component_max_error: None,
        bound_violations: None,
    };

    if outcomes.iter().all(|o| o.truth.is_some()) {
        let mut header = vec!["t".to_string(), "error_db".into()];
        let with_bound = outcomes.iter().all(|o| o.bounds.is_some());
        if with_bound {
            header.push("bound_db".into());
        }
        for &m in &cfg.components {
            header.push(format!("error_{m}_db"));
            if with_bound {
                header.push(format!("bound_{m}_db"));
            }
        }
        let mut rows = Vec::new();
        let (mut max_e, mut min_e) = (0.0f64, f64::INFINITY);
        let mut comp_max = vec![0.0f64; cfg.components.len()];
        let mut violations = 0;
        for o in &outcomes {
            let (tz, tc) = o.truth.as_ref().expect("checked");
            for j in 0..o.offsets.len() {
                let e = (o.z[j] - tz[j]).norm();
                max_e = max_e.max(e);
                min_e = min_e.min(e);
                let mut row = vec![o.tau + o.offsets[j], db(e)];
                if let Some((bz, _)) = &o.bounds {
                    row.push(db(bz[j]));
                    violations += usize::from(e > bz[j]);
                }
                for i in 0..cfg.components.len() {
                    let ec = (o.components[i].1[j] - tc[i][j]).norm();
                    comp_max[i] = comp_max[i].max(ec);
                    row.push(db(ec));
                    if let Some((_, bc)) = &o.bounds {
                        row.push(db(bc[i][j]));
                        violations += usize::from(ec > bc[i][j]);
                    }
                }
                rows.push(row);
            }
        }
        let header: Vec<&str> = header.iter().map(String::as_str).collect();
        out.put("error.csv", csv_table(&header, rows).as_bytes())?;
        report.max_error = Some(max_e);
        report.max_error_db = Some(db(max_e));
        report.min_error_db = Some(db(min_e));
        report.component_max_error = Some(comp_max);
        report.bound_violations = with_bound.then_some(violations);
    }

    if let Some(g) = &generated {
        if g.sigma > 0.0 {
            let mut snrs = vec![coefficient_snr_db(&rec, &g.clean, &g.noisy, &taus)?];
            for trial in 1..sc.trials as u64 {
                let gt = generate_samples(sc, &ctx.scheme, &taus, sc.seed.wrapping_add(trial))?;
                snrs.push(coefficient_snr_db(&rec, &gt.clean, &gt.noisy, &taus)?);
            }
            report.mean_coefficient_snr_db = Some(snrs.iter().sum::<f64>() / snrs.len() as f64);
            report.coefficient_snr_db = Some(snrs);
        }
    }
    out.json("summary.json", &report)?;
    Ok((report, out.finish("reconstruct", sc)?))
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct BlindReport {
    pub blocks: usize,
    pub instants: usize,
    pub subspace_dim: usize,
    pub threshold_db: f64,
    pub runs: Vec<[i64; 2]>,
    /// Expanded index ranges of the band plan, for comparison.
    pub truth: Vec<[i64; 2]>,
    pub singular_values: Vec<f64>,
}

/// P at the largest ratio between consecutive singular values.
pub fn auto_subspace_dim(singular_values: &[f64]) -> usize {
    let floor = f64::MIN_POSITIVE;
    (0..singular_values.len().saturating_sub(1))
        .max_by(|&i, &j| {
            let r = |i: usize| singular_values[i].max(floor).ln() - singular_values[i + 1].max(floor).ln();
            r(i).total_cmp(&r(j)).then(j.cmp(&i))
        })
        .map_or(1, |i| i + 1)
}

/// Blind support scan over the blind block schedule.
pub fn run_blind(sc: &Scenario, out_dir: &Path, samples: Option<&Path>) -> Result<(BlindReport, Vec<PathBuf>)> {
    let ctx = sc.context()?;
    let cfg = sc.blind.as_ref().ok_or_else(|| Error::invalid("scenario has no blind section"))?;
    let taus = sc.blind_taus(&ctx.scheme)?;
    let source = match samples {
        Some(p) => SampleSet::load(p)?,
        None => generate_samples(sc, &ctx.scheme, &taus, sc.seed)?.noisy,
    };
    let data = assemble_data(&ctx.scheme, &ctx.window, &source, &taus)?;
    let p = match cfg.subspace_dim {
        SubspaceDim::Fixed(p) => p,
        SubspaceDim::Auto => auto_subspace_dim(&singular_values(&data.a)),
    };
    let [p1, p2] = cfg.candidates.unwrap_or_else(|| {
        let u = &ctx.sets.union;
        let margin = (u[u.len() - 1] - u[0]) / 10 + 1;
        [u[0] - margin, u[u.len() - 1] + margin]
    });
    let music = music_spectrum(&data, p, p1, p2)?;
    let rule = SupportRule { threshold_db: cfg.threshold_db, min_run: cfg.min_run };
    let spectrum_db = music.spectrum_db();
    let detected = match estimate_support(&music, cfg.use_model.then_some(&ctx.support), &rule) {
        Ok(s) => s,
        Err(Error::EmptySupport) => IndexSets { per_component: Vec::new(), union: Vec::new() },
        Err(e) => return Err(e),
    };
    let report = BlindReport {
        blocks: taus.len(),
        instants: data.instants(),
        subspace_dim: p,
        threshold_db: rule.threshold(&spectrum_db),
        runs: ranges(&detected),
        truth: ranges(&ctx.sets),
        singular_values: music.singular_values.clone(),
    };
    let mut out = Outputs::new(out_dir)?;
    let rows = music.candidates().zip(music.spectrum.iter().zip(&spectrum_db)).map(|(p, (c, d))| vec![p as f64, *c, *d]);
    out.put("chi.csv", csv_table(&["p", "chi", "chi_db"], rows).as_bytes())?;
    out.json("support.json", &detected)?;
    out.json("blind.json", &report)?;
    Ok((report, out.finish("blind-scan", sc)?))
}

fn singular_values(a: &DMatrix<Complex64>) -> Vec<f64> {
    let mut s: Vec<f64> = a.clone().svd(false, false).singular_values.iter().copied().collect();
    s.sort_by(|x, y| y.total_cmp(x));
    s
}
