//! Blind support estimation with the MUSIC pseudo-spectrum over many
//! windowed blocks that share their relative sampling instants.

use std::f64::consts::PI;

use nalgebra::DMatrix;
use num_complex::Complex64;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::band_model::{IndexSets, MultibandSupport};
use crate::error::{Error, Result};
use crate::primes::gcd;
use crate::reconstructor::{plan_block, SampleSource};
use crate::smrs_design::SmrsScheme;
use crate::solver::phase;
use crate::window::WindowSpec;

const CHUNK: usize = 64;

/// Block samples arranged as N instants × H blocks.
#[derive(Debug, Clone, PartialEq)]
pub struct DataMatrix {
    pub a: DMatrix<Complex64>,
    /// Relative instants t_n shared by all blocks.
    pub offsets: Vec<f64>,
    pub period: f64,
}

impl DataMatrix {
    pub fn new(a: DMatrix<Complex64>, offsets: Vec<f64>, period: f64) -> Result<Self> {
        if a.nrows() != offsets.len() || a.ncols() == 0 {
            return Err(Error::invalid("data matrix needs one row per instant and at least one block"));
        }
        Ok(DataMatrix { a, offsets, period })
    }

    pub fn instants(&self) -> usize {
        self.a.nrows()
    }

    pub fn blocks(&self) -> usize {
        self.a.ncols()
    }
}

/// Collects windowed samples of every block. The centers must differ by
/// multiples of T/g with g the gcd of the moduli, so every block sees the
/// same set of relative instants; rows are ordered by relative instant.
pub fn assemble_data(
    scheme: &SmrsScheme,
    window: &WindowSpec,
    source: &dyn SampleSource,
    taus: &[f64],
) -> Result<DataMatrix> {
    let Some(&tau0) = taus.first() else {
        return Err(Error::invalid("at least one block center is required"));
    };
    let period = scheme.period();
    let g = scheme.moduli().iter().fold(0u64, |acc, &q| gcd(acc, q as u64)) as f64;
    for &tau in taus {
        let steps = (tau - tau0) * g / period;
        if (steps - steps.round()).abs() > 1e-9 * steps.abs().max(1.0) {
            return Err(Error::invalid(format!(
                "block center {tau} is not a multiple of T/{g} away from {tau0}; relative instants would differ"
            )));
        }
    }
    let columns: Vec<(Vec<f64>, Vec<Complex64>)> = taus
        .par_iter()
        .map(|&tau| {
            let plan = plan_block(scheme, tau);
            let mut pts: Vec<_> = plan.points.iter().collect();
            pts.sort_by(|a, b| a.offset.total_cmp(&b.offset));
            let values = pts
                .iter()
                .map(|pt| source.sample(pt.key).map(|s| s * window.eval(pt.offset)))
                .collect::<Result<Vec<_>>>()?;
            Ok((pts.iter().map(|pt| pt.offset).collect(), values))
        })
        .collect::<Result<_>>()?;
    let offsets = columns[0].0.clone();
    for (tau, (o, _)) in taus.iter().zip(&columns) {
        if o.iter().zip(&offsets).any(|(x, y)| (x - y).abs() > 1e-9 * period) {
            return Err(Error::invalid(format!("block at {tau} does not share the relative instants")));
        }
    }
    let a = DMatrix::from_fn(offsets.len(), taus.len(), |n, h| columns[h].1[n]);
    DataMatrix::new(a, offsets, period)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MusicResult {
    /// First candidate index; spectrum[i] belongs to p = p1 + i.
    pub p1: i64,
    /// χ(p), linear.
    pub spectrum: Vec<f64>,
    pub subspace_dim: usize,
    pub singular_values: Vec<f64>,
}

impl MusicResult {
    pub fn candidates(&self) -> impl Iterator<Item = i64> + '_ {
        (0..self.spectrum.len()).map(|i| self.p1 + i as i64)
    }

    pub fn spectrum_db(&self) -> Vec<f64> {
        self.spectrum.iter().map(|c| 10.0 * c.log10()).collect()
    }
}

/// χ(p) = N / ‖U_rᴴ φ(p)‖² for p in [p1, p2], with U_r the N − P left
/// singular vectors of A belonging to the smallest singular values.
pub fn music_spectrum(data: &DataMatrix, subspace_dim: usize, p1: i64, p2: i64) -> Result<MusicResult> {
    let n = data.instants();
    if subspace_dim >= n {
        return Err(Error::invalid(format!("subspace dimension {subspace_dim} must be below N = {n}")));
    }
    if p2 < p1 {
        return Err(Error::invalid("candidate range is empty"));
    }
    // Square up so the SVD delivers a complete left basis.
    let a = if data.blocks() < n {
        let mut padded = DMatrix::<Complex64>::zeros(n, n);
        padded.columns_mut(0, data.blocks()).copy_from(&data.a);
        padded
    } else {
        data.a.clone()
    };
    let svd = a.svd(true, false);
    let u = svd.u.expect("left vectors requested");
    let mut order: Vec<usize> = (0..svd.singular_values.len()).collect();
    order.sort_by(|&i, &j| svd.singular_values[j].total_cmp(&svd.singular_values[i]));
    let singular_values: Vec<f64> = order.iter().map(|&i| svd.singular_values[i]).collect();
    // Rows of U_rᴴ.
    let noise: Vec<Vec<Complex64>> = order[subspace_dim..]
        .iter()
        .map(|&i| u.column(i).iter().map(|z| z.conj()).collect())
        .collect();

    let x: Vec<f64> = data.offsets.iter().map(|t| t / data.period).collect();
    let steps: Vec<Complex64> = x.iter().map(|&xn| phase(1, xn)).collect();
    let count = (p2 - p1 + 1) as usize;
    let spectrum: Vec<f64> = (0..count.div_ceil(CHUNK))
        .into_par_iter()
        .flat_map_iter(|c| {
            let start = p1 + (c * CHUNK) as i64;
            let len = CHUNK.min(count - c * CHUNK);
            let mut phi: Vec<Complex64> = x.iter().map(|&xn| phase(start, xn)).collect();
            let mut out = Vec::with_capacity(len);
            for _ in 0..len {
                let den: f64 = noise
                    .iter()
                    .map(|row| row.iter().zip(&phi).map(|(r, f)| r * f).sum::<Complex64>().norm_sqr())
                    .sum();
                out.push(n as f64 / den);
                phi.iter_mut().zip(&steps).for_each(|(f, s)| *f *= s);
            }
            out
        })
        .collect();
    Ok(MusicResult { p1, spectrum, subspace_dim, singular_values })
}

/// Threshold rule for turning a pseudo-spectrum into support runs.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SupportRule {
    /// Fixed threshold in dB; when absent it is
    /// median + max(10 dB, (max − median)/4).
    pub threshold_db: Option<f64>,
    pub min_run: usize,
}

impl Default for SupportRule {
    fn default() -> Self {
        SupportRule { threshold_db: None, min_run: 3 }
    }
}

impl SupportRule {
    pub fn threshold(&self, spectrum_db: &[f64]) -> f64 {
        if let Some(t) = self.threshold_db {
            return t;
        }
        let mut sorted = spectrum_db.to_vec();
        sorted.sort_by(f64::total_cmp);
        let mid = sorted.len() / 2;
        let median = if sorted.len().is_multiple_of(2) { 0.5 * (sorted[mid - 1] + sorted[mid]) } else { sorted[mid] };
        let max = *sorted.last().expect("non-empty spectrum");
        median + (10f64).max(0.25 * (max - median))
    }
}

/// Contiguous runs of candidates above the threshold. Short runs are
/// dropped; with a band model, runs inside the same expanded band are
/// merged into one.
pub fn estimate_support(result: &MusicResult, model: Option<&MultibandSupport>, rule: &SupportRule) -> Result<IndexSets> {
    if result.spectrum.is_empty() {
        return Err(Error::EmptySupport);
    }
    let db = result.spectrum_db();
    let threshold = rule.threshold(&db);
    let mut runs: Vec<(i64, i64)> = Vec::new();
    let mut open: Option<i64> = None;
    for (i, &v) in db.iter().enumerate() {
        let p = result.p1 + i as i64;
        match (v > threshold, open) {
            (true, None) => open = Some(p),
            (false, Some(s)) => {
                runs.push((s, p - 1));
                open = None;
            }
            _ => {}
        }
    }
    if let Some(s) = open {
        runs.push((s, result.p1 + db.len() as i64 - 1));
    }
    runs.retain(|(a, b)| (b - a + 1) as usize >= rule.min_run.max(1));
    if let Some(model) = model {
        let bands: Vec<(i64, i64)> = model
            .expanded_index_sets()
            .per_component
            .iter()
            .map(|s| (s[0], *s.last().expect("non-empty")))
            .collect();
        let band_of = |(a, b): (i64, i64)| bands.iter().position(|&(lo, hi)| a <= hi && b >= lo);
        let mut merged: Vec<(i64, i64)> = Vec::new();
        for run in runs {
            match merged.last_mut() {
                Some(last) if band_of(*last).is_some() && band_of(*last) == band_of(run) => last.1 = run.1,
                _ => merged.push(run),
            }
        }
        runs = merged;
    }
    if runs.is_empty() {
        return Err(Error::EmptySupport);
    }
    IndexSets::from_components(runs.into_iter().map(|(a, b)| (a..=b).collect()).collect())
}

/// Steering vector φ(p) at the given relative instants.
pub fn steering(offsets: &[f64], period: f64, p: i64) -> Vec<Complex64> {
    offsets.iter().map(|t| Complex64::from_polar(1.0, 2.0 * PI * (p as f64 * t / period).rem_euclid(1.0))).collect()
}
