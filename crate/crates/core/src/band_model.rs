//! Multiband spectral support and the windowed frequency index sets.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Closed frequency interval [a, b] in Hz.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Band {
    pub a: f64,
    pub b: f64,
}

impl Band {
    pub fn new(a: f64, b: f64) -> Result<Self> {
        if !(a.is_finite() && b.is_finite()) || a >= b {
            return Err(Error::invalid(format!("band edges must satisfy a < b (got [{a}, {b}])")));
        }
        Ok(Band { a, b })
    }

    /// Band from its center frequency and two-sided width.
    pub fn centered(fc: f64, width: f64) -> Result<Self> {
        Band::new(fc - width / 2.0, fc + width / 2.0)
    }

    pub fn width(&self) -> f64 {
        self.b - self.a
    }

    pub fn center(&self) -> f64 {
        0.5 * (self.a + self.b)
    }
}

/// Ordered, disjoint bands together with the block period `T` and the window
/// bandwidth `B_w` used to expand them.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MultibandSupport {
    bands: Vec<Band>,
    period: f64,
    window_bw: f64,
}

impl MultibandSupport {
    pub fn new(bands: Vec<Band>, period: f64, window_bw: f64) -> Result<Self> {
        if bands.is_empty() {
            return Err(Error::invalid("band plan contains no bands"));
        }
        if !(period > 0.0 && period.is_finite()) {
            return Err(Error::invalid(format!("period must be positive (got {period})")));
        }
        if !(window_bw > 0.0 && window_bw.is_finite()) {
            return Err(Error::invalid(format!("window bandwidth must be positive (got {window_bw})")));
        }
        for band in &bands {
            Band::new(band.a, band.b)?;
        }
        for (m, pair) in bands.windows(2).enumerate() {
            let gap = pair[1].a - pair[0].b;
            if gap <= 0.0 {
                return Err(Error::invalid(format!(
                    "bands {m} and {} overlap or are out of order",
                    m + 1
                )));
            }
            if window_bw >= gap {
                return Err(Error::invalid(format!(
                    "window bandwidth {window_bw} is not below the separation {gap} between bands {m} and {}",
                    m + 1
                )));
            }
        }
        Ok(MultibandSupport { bands, period, window_bw })
    }

    pub fn bands(&self) -> &[Band] {
        &self.bands
    }

    pub fn period(&self) -> f64 {
        self.period
    }

    pub fn window_bw(&self) -> f64 {
        self.window_bw
    }

    pub fn len(&self) -> usize {
        self.bands.len()
    }

    pub fn is_empty(&self) -> bool {
        self.bands.is_empty()
    }

    /// Integer frequency indices p with a_m − B_w/2 ≤ p/T ≤ b_m + B_w/2 for
    /// every band, plus their union.
    pub fn expanded_index_sets(&self) -> IndexSets {
        let half = self.window_bw / 2.0;
        let per_component: Vec<Vec<i64>> = self
            .bands
            .iter()
            .map(|band| {
                let lo = ((band.a - half) * self.period).ceil() as i64;
                let hi = ((band.b + half) * self.period).floor() as i64;
                (lo..=hi).collect()
            })
            .collect();
        IndexSets::from_components(per_component)
            .expect("disjoint windowed bands always give disjoint index ranges")
    }

    pub fn support_metrics(&self) -> OccupancyReport {
        let landau: f64 = self.bands.iter().map(Band::width).sum();
        let windowed_landau = landau + self.window_bw * self.bands.len() as f64;
        let first = self.bands.first().expect("non-empty");
        let last = self.bands.last().expect("non-empty");
        OccupancyReport {
            landau,
            windowed_landau,
            nyquist_span: last.b - first.a,
        }
    }
}

/// Per-component index sets and their sorted union.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct IndexSets {
    pub per_component: Vec<Vec<i64>>,
    pub union: Vec<i64>,
}

impl IndexSets {
    /// Builds the union from per-component contiguous ranges. Fails if any
    /// component is not contiguous or two components share an index.
    pub fn from_components(per_component: Vec<Vec<i64>>) -> Result<Self> {
        for (m, set) in per_component.iter().enumerate() {
            if set.windows(2).any(|w| w[1] != w[0] + 1) {
                return Err(Error::invalid(format!("index set {m} is not a contiguous increasing range")));
            }
        }
        let mut union: Vec<i64> = per_component.iter().flatten().copied().collect();
        union.sort_unstable();
        let before = union.len();
        union.dedup();
        if union.len() != before {
            return Err(Error::invalid("component index sets overlap"));
        }
        Ok(IndexSets { per_component, union })
    }

    pub fn component_of(&self, p: i64) -> Option<usize> {
        self.per_component.iter().position(|set| set.first().is_some_and(|&lo| lo <= p) && set.last().is_some_and(|&hi| p <= hi))
    }

    pub fn is_empty(&self) -> bool {
        self.union.is_empty()
    }
}

/// Occupancy figures of a band plan, in Hz.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct OccupancyReport {
    pub landau: f64,
    pub windowed_landau: f64,
    /// Distance from the lowest band edge to the highest one.
    pub nyquist_span: f64,
}

impl OccupancyReport {
    /// Nyquist span over the given average sampling rate.
    pub fn nyquist_ratio(&self, rate: f64) -> f64 {
        self.nyquist_span / rate
    }

    /// Average sampling rate over the Landau limit.
    pub fn landau_ratio(&self, rate: f64) -> f64 {
        rate / self.landau
    }
}

/// Band plan as stored on disk: bands given by center and width.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BandPlan {
    #[serde(rename = "T")]
    pub period: f64,
    #[serde(rename = "Bw")]
    pub window_bw: f64,
    pub bands: Vec<BandSpec>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BandSpec {
    pub fc: f64,
    #[serde(rename = "B")]
    pub width: f64,
}

impl BandPlan {
    pub fn to_support(&self) -> Result<MultibandSupport> {
        let bands = self
            .bands
            .iter()
            .map(|b| Band::centered(b.fc, b.width))
            .collect::<Result<Vec<_>>>()?;
        MultibandSupport::new(bands, self.period, self.window_bw)
    }
}
