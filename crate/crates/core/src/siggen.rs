//! Test signals: raised-cosine PSK, sums of exponentials and sinc trains,
//! modulated to a center frequency and normalized to unit peak, plus
//! calibrated complex white noise.
//!
//! Random draws come from ChaCha20 seeded with the spec's `seed`; the
//! `stream` field selects an independent ChaCha stream so mixture components
//! sharing a seed stay uncorrelated. Noise uses its own stream.

use std::f64::consts::PI;

use num_complex::Complex64;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha20Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Normalization grid density, in points per 1/B.
pub const PEAK_GRID_PER_INV_B: f64 = 64.0;
/// Symbols beyond each horizon end included in PSK sums, in chip periods.
pub const PSK_PAD_CHIPS: f64 = 20.0;
/// ChaCha stream used for additive noise.
pub const NOISE_STREAM: u64 = 1 << 40;

const PEAK_CANDIDATES: usize = 24;
const SINGULAR_DEN: f64 = 1e-8;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SignalKind {
    Bpsk,
    Qpsk,
    ExpSum,
    SincTrain,
}

fn default_rolloff() -> f64 {
    0.8
}
fn default_tones() -> usize {
    150
}
fn default_pulses() -> usize {
    200
}
fn default_horizon() -> [f64; 2] {
    [-1.0, 1.0]
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SignalSpec {
    pub kind: SignalKind,
    #[serde(rename = "B")]
    pub bandwidth: f64,
    #[serde(default)]
    pub fc: f64,
    #[serde(default)]
    pub seed: u64,
    #[serde(default)]
    pub stream: u64,
    #[serde(default = "default_rolloff")]
    pub rolloff: f64,
    /// Defaults to (1 + β)/B.
    #[serde(default)]
    pub chip_period: Option<f64>,
    #[serde(default = "default_tones")]
    pub tones: usize,
    #[serde(default = "default_pulses")]
    pub pulses: usize,
    /// Time span over which the peak is normalized and PSK symbols exist.
    #[serde(default = "default_horizon")]
    pub horizon: [f64; 2],
}

impl SignalSpec {
    pub fn new(kind: SignalKind, bandwidth: f64, fc: f64, seed: u64) -> Self {
        SignalSpec {
            kind,
            bandwidth,
            fc,
            seed,
            stream: 0,
            rolloff: default_rolloff(),
            chip_period: None,
            tones: default_tones(),
            pulses: default_pulses(),
            horizon: default_horizon(),
        }
    }
}

/// Raised-cosine pulse π·sinc(x)·cos(πβx)/(1 − (2βx)²) at x = t/T_c.
pub fn raised_cosine(x: f64, beta: f64) -> f64 {
    let sinc = if x == 0.0 { 1.0 } else { (PI * x).sin() / (PI * x) };
    let den = 1.0 - (2.0 * beta * x).powi(2);
    if den.abs() < SINGULAR_DEN {
        // Expansion around |x| = 1/(2β) with h = |x| − 1/(2β).
        let h = x.abs() - 1.0 / (2.0 * beta);
        let pbh = PI * beta * h;
        PI * sinc * (PI / 4.0) * (1.0 - pbh * pbh / 6.0) / (1.0 + beta * h)
    } else {
        PI * sinc * (PI * beta * x).cos() / den
    }
}

#[derive(Debug, Clone)]
enum Body {
    Psk {
        beta: f64,
        chip: f64,
        first: i64,
        symbols: Vec<Complex64>,
        /// (cos πβp, sin πβp, (−1)^p) per symbol.
        trig: Vec<(f64, f64, f64)>,
    },
    Tones {
        /// (amplitude·e^{jφ}, frequency)
        terms: Vec<(Complex64, f64)>,
    },
    Sincs {
        bandwidth: f64,
        /// (amplitude, delay)
        terms: Vec<(Complex64, f64)>,
    },
}

/// A generated signal, already normalized to unit peak.
#[derive(Debug, Clone)]
pub struct Signal {
    spec: SignalSpec,
    body: Body,
    scale: f64,
}

fn rng_for(seed: u64, stream: u64) -> ChaCha20Rng {
    let mut rng = ChaCha20Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}

impl Signal {
    pub fn new(spec: &SignalSpec, period: f64) -> Result<Self> {
        if !(spec.bandwidth > 0.0 && spec.bandwidth.is_finite()) {
            return Err(Error::invalid(format!("signal bandwidth must be positive (got {})", spec.bandwidth)));
        }
        let [h0, h1] = spec.horizon;
        if !(h0 < h1 && h0.is_finite() && h1.is_finite()) {
            return Err(Error::invalid("signal horizon must be an increasing finite pair"));
        }
        let mut rng = rng_for(spec.seed, spec.stream);
        let body = match spec.kind {
            SignalKind::Bpsk | SignalKind::Qpsk => {
                let beta = spec.rolloff;
                if !(beta > 0.0 && beta <= 1.0) {
                    return Err(Error::invalid(format!("roll-off must lie in (0, 1] (got {beta})")));
                }
                let chip = spec.chip_period.unwrap_or((1.0 + beta) / spec.bandwidth);
                if !(chip > 0.0) {
                    return Err(Error::invalid("chip period must be positive"));
                }
                let first = (h0 / chip - PSK_PAD_CHIPS).floor() as i64;
                let last = (h1 / chip + PSK_PAD_CHIPS).ceil() as i64;
                let mut sign = || if rng.random::<bool>() { 1.0 } else { -1.0 };
                let symbols = (first..=last)
                    .map(|_| match spec.kind {
                        SignalKind::Bpsk => Complex64::new(sign(), 0.0),
                        _ => Complex64::new(sign(), sign()),
                    })
                    .collect();
                let trig = (first..=last)
                    .map(|p| {
                        let (s, c) = (PI * beta * p as f64).sin_cos();
                        (c, s, if p.rem_euclid(2) == 0 { 1.0 } else { -1.0 })
                    })
                    .collect();
                Body::Psk { beta, chip, first, symbols, trig }
            }
            SignalKind::ExpSum => {
                let half = spec.bandwidth / 2.0;
                let terms = (0..spec.tones)
                    .map(|_| {
                        let f = rng.random_range(-half..=half);
                        let phi = rng.random_range(0.0..2.0 * PI);
                        let a = rng.random_range(0.0..=1.0);
                        (Complex64::from_polar(a, phi), f)
                    })
                    .collect();
                Body::Tones { terms }
            }
            SignalKind::SincTrain => {
                let center = 0.5 * (h0 + h1);
                let terms = (0..spec.pulses)
                    .map(|_| {
                        let delay = rng.random_range(center - period..center + period);
                        let a = rng.random_range(0.0..=1.0);
                        let phi = rng.random_range(0.0..2.0 * PI);
                        (Complex64::from_polar(a, phi), delay)
                    })
                    .collect();
                Body::Sincs { bandwidth: spec.bandwidth, terms }
            }
        };
        let mut signal = Signal { spec: spec.clone(), body, scale: 1.0 };
        let peak = signal.peak();
        if !(peak > 0.0) {
            return Err(Error::invalid("generated signal is identically zero on its horizon"));
        }
        signal.scale = 1.0 / peak;
        Ok(signal)
    }

    pub fn spec(&self) -> &SignalSpec {
        &self.spec
    }

    /// Normalization factor applied to the raw sum.
    pub fn scale(&self) -> f64 {
        self.scale
    }

    /// Baseband value before modulation and scaling.
    fn baseband(&self, t: f64) -> Complex64 {
        match &self.body {
            Body::Psk { beta, chip, first, symbols, trig } => {
                let u = t / chip;
                let (sin_pu, _) = (PI * u).sin_cos();
                let (sin_a, cos_a) = (PI * beta * u).sin_cos();
                let mut acc = Complex64::new(0.0, 0.0);
                for (i, (a, &(cp, sp, sign))) in symbols.iter().zip(trig).enumerate() {
                    let x = u - (*first + i as i64) as f64;
                    let den = 1.0 - (2.0 * beta * x).powi(2);
                    let g = if x.abs() < 1e-6 || den.abs() < 1e-6 {
                        raised_cosine(x, *beta)
                    } else {
                        let sinc = sign * sin_pu / (PI * x);
                        PI * sinc * (cos_a * cp + sin_a * sp) / den
                    };
                    acc += a * g;
                }
                acc
            }
            Body::Tones { terms } => terms
                .iter()
                .map(|(a, f)| a * Complex64::from_polar(1.0, 2.0 * PI * (f * t).rem_euclid(1.0)))
                .sum(),
            Body::Sincs { bandwidth, terms } => terms
                .iter()
                .map(|(a, d)| {
                    let x = bandwidth * (t - d);
                    let s = if x == 0.0 { 1.0 } else { (PI * x).sin() / (PI * x) };
                    a * s
                })
                .sum(),
        }
    }

    fn raw(&self, t: f64) -> Complex64 {
        let carrier = Complex64::from_polar(1.0, 2.0 * PI * (self.spec.fc * t).rem_euclid(1.0));
        self.baseband(t) * carrier
    }

    pub fn eval(&self, t: f64) -> Complex64 {
        self.raw(t) * self.scale
    }

    /// Peak of |raw| over the horizon: dense grid search followed by a
    /// golden-section refinement of the largest local maxima.
    fn peak(&self) -> f64 {
        let [h0, h1] = self.spec.horizon;
        let n = ((h1 - h0) * self.spec.bandwidth * PEAK_GRID_PER_INV_B).ceil().max(2.0) as usize;
        let step = (h1 - h0) / n as f64;
        let mags: Vec<f64> = (0..=n).map(|i| self.raw(h0 + step * i as f64).norm()).collect();
        let mut maxima: Vec<usize> = (0..=n)
            .filter(|&i| (i == 0 || mags[i] >= mags[i - 1]) && (i == n || mags[i] >= mags[i + 1]))
            .collect();
        maxima.sort_by(|&a, &b| mags[b].total_cmp(&mags[a]));
        let mut best = mags.iter().copied().fold(0.0, f64::max);
        for &i in maxima.iter().take(PEAK_CANDIDATES) {
            let lo = (h0 + step * (i as f64 - 1.0)).max(h0);
            let hi = (h0 + step * (i as f64 + 1.0)).min(h1);
            best = best.max(golden_max(|t| self.raw(t).norm(), lo, hi));
        }
        best
    }
}

fn golden_max(f: impl Fn(f64) -> f64, mut lo: f64, mut hi: f64) -> f64 {
    let inv_phi = (5f64.sqrt() - 1.0) / 2.0;
    let mut x1 = hi - inv_phi * (hi - lo);
    let mut x2 = lo + inv_phi * (hi - lo);
    let (mut f1, mut f2) = (f(x1), f(x2));
    for _ in 0..80 {
        if f1 > f2 {
            hi = x2;
            x2 = x1;
            f2 = f1;
            x1 = hi - inv_phi * (hi - lo);
            f1 = f(x1);
        } else {
            lo = x1;
            x1 = x2;
            f1 = f2;
            x2 = lo + inv_phi * (hi - lo);
            f2 = f(x2);
        }
    }
    f1.max(f2)
}

/// Sum of independently generated signals.
#[derive(Debug, Clone)]
pub struct Mixture {
    pub components: Vec<Signal>,
}

impl Mixture {
    pub fn new(specs: &[SignalSpec], period: f64) -> Result<Self> {
        let components = specs.iter().map(|s| Signal::new(s, period)).collect::<Result<_>>()?;
        Ok(Mixture { components })
    }

    pub fn eval(&self, t: f64) -> Complex64 {
        self.components.iter().map(|s| s.eval(t)).sum()
    }
}

/// Noise standard deviation giving `snr_db` against the mean power of
/// `samples`.
pub fn noise_sigma(samples: &[Complex64], snr_db: f64) -> f64 {
    if samples.is_empty() || snr_db.is_infinite() && snr_db > 0.0 {
        return 0.0;
    }
    let power = samples.iter().map(|z| z.norm_sqr()).sum::<f64>() / samples.len() as f64;
    (power / 10f64.powf(snr_db / 10.0)).sqrt()
}

/// Adds circular complex white Gaussian noise at the given SNR, measured
/// against the mean power of the samples. Returns the noise σ used.
pub fn add_noise(samples: &mut [Complex64], snr_db: f64, seed: u64) -> f64 {
    let sigma = noise_sigma(samples, snr_db);
    add_noise_sigma(samples, sigma, seed);
    sigma
}

/// Adds circular complex white Gaussian noise with E|n|² = σ².
pub fn add_noise_sigma(samples: &mut [Complex64], sigma: f64, seed: u64) {
    if sigma == 0.0 {
        return;
    }
    let normal = Normal::new(0.0, sigma / 2f64.sqrt()).expect("finite σ");
    let mut rng = rng_for(seed, NOISE_STREAM);
    for z in samples.iter_mut() {
        *z += Complex64::new(normal.sample(&mut rng), normal.sample(&mut rng));
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rustfft::FftPlanner;

    #[test]
    fn raised_cosine_values() {
        assert_eq!(raised_cosine(0.0, 0.8), PI);
        for &beta in &[0.25, 0.5, 0.8, 1.0] {
            let x0 = 1.0 / (2.0 * beta);
            let limit = PI * PI / 4.0 * (PI * x0).sin() / (PI * x0);
            assert!((raised_cosine(x0, beta) - limit).abs() < 1e-12);
            assert!((raised_cosine(-x0, beta) - limit).abs() < 1e-12);
            let left = raised_cosine(x0 - 1e-6, beta);
            let right = raised_cosine(x0 + 1e-6, beta);
            assert!((left - limit).abs() < 1e-5 && (right - limit).abs() < 1e-5);
            assert!((raised_cosine(x0 + 5e-9, beta) - limit).abs() < 1e-7);
        }
        assert!(raised_cosine(1.0, 0.8).abs() < 1e-15);
    }

    #[test]
    fn fast_psk_matches_direct_sum() {
        let mut spec = SignalSpec::new(SignalKind::Qpsk, 60.0, 0.0, 7);
        spec.horizon = [-0.5, 0.5];
        let sig = Signal::new(&spec, 1.0).unwrap();
        let Body::Psk { beta, chip, first, symbols, .. } = &sig.body else { panic!() };
        for i in 0..300 {
            let t = -0.6 + 1.2 * i as f64 / 300.0;
            let direct: Complex64 = symbols
                .iter()
                .enumerate()
                .map(|(j, a)| a * raised_cosine(t / chip - (*first + j as i64) as f64, *beta))
                .sum();
            assert!((sig.baseband(t) - direct).norm() < 1e-11);
        }
    }

    #[test]
    fn chip_period_default() {
        let spec = SignalSpec::new(SignalKind::Bpsk, 136.0, 0.0, 1);
        let sig = Signal::new(&spec, 1.0).unwrap();
        let Body::Psk { chip, .. } = sig.body else { panic!() };
        assert!((chip - 0.01324).abs() < 1e-5);
    }

    #[test]
    fn single_tone_and_single_pulse() {
        let mut spec = SignalSpec::new(SignalKind::ExpSum, 10.0, 3.0, 2);
        spec.tones = 1;
        let sig = Signal::new(&spec, 1.0).unwrap();
        for i in 0..50 {
            assert!((sig.eval(-3.0 + 0.13 * i as f64).norm() - 1.0).abs() < 1e-12);
        }
        let one = Signal {
            spec: SignalSpec::new(SignalKind::SincTrain, 4.0, 0.0, 0),
            body: Body::Sincs { bandwidth: 4.0, terms: vec![(Complex64::new(1.0, 0.0), 0.0)] },
            scale: 1.0,
        };
        assert_eq!(one.eval(0.0), Complex64::new(1.0, 0.0));
        for k in 1..20 {
            assert!(one.eval(k as f64 / 4.0).norm() < 1e-15);
        }
    }

    #[test]
    fn counts_follow_spec() {
        let s = Signal::new(&SignalSpec::new(SignalKind::ExpSum, 40.0, 0.0, 1), 1.0).unwrap();
        assert!(matches!(&s.body, Body::Tones { terms } if terms.len() == 150));
        let s = Signal::new(&SignalSpec::new(SignalKind::SincTrain, 40.0, 0.0, 1), 1.0).unwrap();
        let Body::Sincs { terms, .. } = &s.body else { panic!() };
        assert_eq!(terms.len(), 200);
        assert!(terms.iter().all(|(_, d)| (-1.0..1.0).contains(d)));
    }

    #[test]
    fn deterministic_and_streams_differ() {
        let spec = SignalSpec::new(SignalKind::Qpsk, 30.0, 5.0, 11);
        let a = Signal::new(&spec, 1.0).unwrap();
        let b = Signal::new(&spec, 1.0).unwrap();
        let c = Signal::new(&SignalSpec { stream: 1, ..spec.clone() }, 1.0).unwrap();
        let mut differs = false;
        for i in 0..40 {
            let t = -0.9 + 0.045 * i as f64;
            assert_eq!(a.eval(t), b.eval(t));
            differs |= a.eval(t) != c.eval(t);
        }
        assert!(differs);
    }

    #[test]
    fn peak_is_one() {
        for kind in [SignalKind::Bpsk, SignalKind::Qpsk, SignalKind::ExpSum, SignalKind::SincTrain] {
            let sig = Signal::new(&SignalSpec::new(kind, 25.0, 40.0, 3), 1.0).unwrap();
            let n = 200_000;
            let peak = (0..=n).map(|i| sig.eval(-1.0 + 2.0 * i as f64 / n as f64).norm()).fold(0.0, f64::max);
            assert!(peak <= 1.0 + 1e-9, "{kind:?} {peak}");
            assert!(peak > 0.999, "{kind:?} {peak}");
        }
    }

    /// Out-of-band energy of a Blackman-Harris-windowed periodogram, in dB
    /// relative to the total.
    fn leakage_db(sig: &Signal, lo: f64, hi: f64) -> f64 {
        let n = 1 << 14;
        let fs = 400.0;
        let t0 = -(n as f64) / (2.0 * fs);
        let mut buf: Vec<Complex64> = (0..n)
            .map(|i| {
                let x = i as f64 / (n - 1) as f64;
                let w = 0.35875 - 0.48829 * (2.0 * PI * x).cos() + 0.14128 * (4.0 * PI * x).cos()
                    - 0.01168 * (6.0 * PI * x).cos();
                sig.eval(t0 + i as f64 / fs) * w
            })
            .collect();
        FftPlanner::new().plan_fft_forward(n).process(&mut buf);
        let (mut inside, mut outside) = (0.0, 0.0);
        for (i, z) in buf.iter().enumerate() {
            let k = if i < n / 2 { i as f64 } else { i as f64 - n as f64 };
            let f = k * fs / n as f64;
            if f >= lo && f <= hi {
                inside += z.norm_sqr();
            } else {
                outside += z.norm_sqr();
            }
        }
        10.0 * (outside / (inside + outside)).log10()
    }

    #[test]
    fn spectra_stay_in_band() {
        let guard = 4.0 * 400.0 / (1 << 14) as f64;
        for kind in [SignalKind::ExpSum, SignalKind::SincTrain, SignalKind::Qpsk] {
            let mut spec = SignalSpec::new(kind, 30.0, 50.0, 9);
            spec.horizon = [-20.0, 20.0];
            let sig = Signal::new(&spec, 20.0).unwrap();
            let db = leakage_db(&sig, 35.0 - guard, 65.0 + guard);
            assert!(db < -40.0, "{kind:?} {db}");
        }
    }

    #[test]
    fn noise_calibration() {
        let mut x: Vec<Complex64> = (0..100_000).map(|i| Complex64::from_polar(1.0, 0.01 * i as f64)).collect();
        let clean = x.clone();
        let sigma = add_noise(&mut x, 20.0, 5);
        assert!((sigma - 0.1).abs() < 1e-12);
        let noise: f64 = x.iter().zip(&clean).map(|(a, b)| (a - b).norm_sqr()).sum::<f64>() / x.len() as f64;
        let snr = 10.0 * (1.0 / noise).log10();
        assert!((snr - 20.0).abs() < 0.1, "{snr}");

        let mut y = clean.clone();
        assert_eq!(add_noise(&mut y, f64::INFINITY, 5), 0.0);
        assert_eq!(y, clean);
    }

    #[test]
    fn rejects_bad_specs() {
        let mut s = SignalSpec::new(SignalKind::Bpsk, 10.0, 0.0, 0);
        s.rolloff = 0.0;
        assert!(Signal::new(&s, 1.0).is_err());
        assert!(Signal::new(&SignalSpec::new(SignalKind::Bpsk, -1.0, 0.0, 0), 1.0).is_err());
        let mut s = SignalSpec::new(SignalKind::ExpSum, 10.0, 0.0, 0);
        s.horizon = [1.0, 0.0];
        assert!(Signal::new(&s, 1.0).is_err());
    }
}
