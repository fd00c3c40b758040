//! Spike-time accuracy, smoothed cross-correlation and rate images.

use ndarray::Array2;

use crate::error::{Error, Result};
use crate::spike::{SpikeRaster, TimeGrid};
use crate::task::Image;

/// Tolerance bands reported for every run, in ms.
pub const TOLERANCES_MS: [f64; 3] = [5.0, 10.0, 25.0];

/// How desired spikes are paired with observed ones.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum MatchMode {
    /// A desired spike counts if any observed spike on its channel lies
    /// within the tolerance; one observed spike may serve several desired.
    #[default]
    AnyWithin,
    /// Each observed spike can be consumed by at most one desired spike.
    OneToOne,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AccuracyReport {
    pub tolerance_ms: f64,
    pub matched: usize,
    pub total_desired: usize,
    /// Observed spikes with no desired spike within the tolerance. They do not
    /// lower the accuracy.
    pub spurious: usize,
    /// `None` when there are no desired spikes.
    pub accuracy_pct: Option<f64>,
}

impl AccuracyReport {
    /// Accuracy with an empty desired set read as zero.
    pub fn pct_or_zero(&self) -> f64 {
        self.accuracy_pct.unwrap_or(0.0)
    }
}

pub fn spike_accuracy(
    desired: &SpikeRaster,
    observed: &SpikeRaster,
    tol_ms: f64,
) -> Result<AccuracyReport> {
    spike_accuracy_with(desired, observed, tol_ms, MatchMode::AnyWithin)
}

pub fn spike_accuracy_with(
    desired: &SpikeRaster,
    observed: &SpikeRaster,
    tol_ms: f64,
    mode: MatchMode,
) -> Result<AccuracyReport> {
    if desired.channel_count() != observed.channel_count() {
        return Err(Error::Shape(format!(
            "desired has {} channels, observed {}",
            desired.channel_count(),
            observed.channel_count()
        )));
    }
    if !(tol_ms >= 0.0) {
        return Err(Error::InvalidParam(format!(
            "tolerance must be >= 0, got {tol_ms}"
        )));
    }
    let tol = (tol_ms / desired.grid().dt_ms() + 1e-9).floor() as usize;
    let mut matched = 0;
    let mut spurious = 0;
    for (d, o) in desired.trains().iter().zip(observed.trains()) {
        matched += match mode {
            MatchMode::AnyWithin => d
                .steps()
                .iter()
                .filter(|&&t| o.any_in(t.saturating_sub(tol), t + tol))
                .count(),
            MatchMode::OneToOne => greedy_matches(d.steps(), o.steps(), tol),
        };
        spurious += o
            .steps()
            .iter()
            .filter(|&&t| !d.any_in(t.saturating_sub(tol), t + tol))
            .count();
    }
    let total = desired.total_spikes();
    Ok(AccuracyReport {
        tolerance_ms: tol_ms,
        matched,
        total_desired: total,
        spurious,
        accuracy_pct: (total > 0).then(|| 100.0 * matched as f64 / total as f64),
    })
}

/// Maximum one-to-one matching of two sorted event lists where a pair is
/// admissible if the events are at most `tol` apart. Taking the earliest
/// admissible observed event for each desired event in time order is optimal
/// for interval constraints on a line.
fn greedy_matches(desired: &[usize], observed: &[usize], tol: usize) -> usize {
    let mut j = 0;
    let mut count = 0;
    for &t in desired {
        while j < observed.len() && observed[j] + tol < t {
            j += 1;
        }
        if j < observed.len() && observed[j] <= t + tol {
            count += 1;
            j += 1;
        }
    }
    count
}

/// Accuracy in each of the standard tolerance bands.
pub fn accuracy_bands(
    desired: &SpikeRaster,
    observed: &SpikeRaster,
) -> Result<[AccuracyReport; 3]> {
    let mut out = [None; 3];
    for (slot, &tol) in out.iter_mut().zip(&TOLERANCES_MS) {
        *slot = Some(spike_accuracy(desired, observed, tol)?);
    }
    Ok(out.map(|r| r.expect("filled above")))
}

#[derive(Debug, Clone)]
pub struct CorrelationStats {
    pub sigma_ms: f64,
    /// Pearson coefficients; rows and columns of silent channels are zero.
    pub matrix: Array2<f64>,
    pub active: Vec<bool>,
    /// Mean over distinct pairs of active channels.
    pub mean: f64,
    /// Counts over `[-1, 1]` in `HISTOGRAM_BINS` equal bins, distinct active pairs.
    pub histogram: Vec<usize>,
}

pub const HISTOGRAM_BINS: usize = 20;

/// Pairwise Pearson coefficients of spike trains smoothed with
/// `exp(-t^2 / 2 sigma^2)`.
pub fn smoothed_correlation(
    r: &SpikeRaster,
    sigma_ms: f64,
    grid: &TimeGrid,
) -> Result<CorrelationStats> {
    if !(sigma_ms > 0.0) {
        return Err(Error::InvalidParam(format!(
            "sigma must be > 0, got {sigma_ms}"
        )));
    }
    let steps = grid.steps();
    let half = (5.0 * sigma_ms / grid.dt_ms()).ceil() as usize;
    let stamp: Vec<f64> = (0..=2 * half)
        .map(|k| {
            let t = (k as f64 - half as f64) * grid.dt_ms();
            (-t * t / (2.0 * sigma_ms * sigma_ms)).exp()
        })
        .collect();

    let n = r.channel_count();
    let mut x = Array2::<f64>::zeros((n, steps));
    let mut active = vec![false; n];
    for (ch, train) in r.trains().iter().enumerate() {
        let mut row = x.row_mut(ch);
        let row = row.as_slice_mut().expect("contiguous row");
        for &s in train.steps() {
            let lo = s.saturating_sub(half);
            let hi = (s + half + 1).min(steps);
            let offset = lo + half - s;
            for (v, k) in row[lo..hi].iter_mut().zip(&stamp[offset..]) {
                *v += k;
            }
        }
        let mean = row.iter().sum::<f64>() / steps as f64;
        row.iter_mut().for_each(|v| *v -= mean);
        let norm = row.iter().map(|v| v * v).sum::<f64>().sqrt();
        if norm > 0.0 {
            row.iter_mut().for_each(|v| *v /= norm);
            active[ch] = true;
        }
    }
    let mut matrix = x.dot(&x.t());
    for i in 0..n {
        for j in 0..n {
            if !(active[i] && active[j]) {
                matrix[[i, j]] = 0.0;
            } else if i == j {
                matrix[[i, j]] = 1.0;
            } else {
                // symmetrize and guard the [-1, 1] range against rounding
                let v = 0.5 * (matrix[[i, j]] + matrix[[j, i]]);
                matrix[[i, j]] = v.clamp(-1.0, 1.0);
            }
        }
    }
    let mut histogram = vec![0; HISTOGRAM_BINS];
    let mut sum = 0.0;
    let mut pairs = 0usize;
    for i in 0..n {
        for j in (i + 1)..n {
            if active[i] && active[j] {
                let v = matrix[[i, j]];
                sum += v;
                pairs += 1;
                let bin = (((v + 1.0) / 2.0) * HISTOGRAM_BINS as f64) as usize;
                histogram[bin.min(HISTOGRAM_BINS - 1)] += 1;
            }
        }
    }
    Ok(CorrelationStats {
        sigma_ms,
        matrix,
        active,
        mean: if pairs > 0 { sum / pairs as f64 } else { 0.0 },
        histogram,
    })
}

/// Per-channel spike rate inside `[lo_ms, hi_ms)` laid out as a
/// `rows x cols` image and normalized by its maximum.
pub fn rate_image(
    observed: &SpikeRaster,
    window_ms: (f64, f64),
    rows: usize,
    cols: usize,
) -> Result<Image> {
    let (lo_ms, hi_ms) = window_ms;
    let grid = observed.grid();
    if !(hi_ms > lo_ms) || lo_ms < 0.0 || hi_ms > grid.horizon_ms() + 1e-9 {
        return Err(Error::InvalidParam(format!(
            "window [{lo_ms}, {hi_ms}) is empty or outside the horizon"
        )));
    }
    if rows * cols != observed.channel_count() {
        return Err(Error::Shape(format!(
            "{rows}x{cols} image needs {} channels, raster has {}",
            rows * cols,
            observed.channel_count()
        )));
    }
    let lo = grid.snap(lo_ms).max(0) as usize;
    let hi = (grid.snap(hi_ms).max(0) as usize).min(grid.steps());
    let secs = (hi_ms - lo_ms) / 1000.0;
    let rates: Vec<f64> = observed
        .trains()
        .iter()
        .map(|t| t.count_in(lo, hi) as f64 / secs)
        .collect();
    let max = rates.iter().cloned().fold(0.0, f64::max);
    let pixels = if max > 0.0 {
        rates.iter().map(|r| r / max).collect()
    } else {
        vec![0.0; rates.len()]
    };
    Image::new(rows, cols, pixels)
}

/// Pearson correlation of two equal-length samples; 0 if either is constant.
pub fn pearson(a: &[f64], b: &[f64]) -> f64 {
    let n = a.len().min(b.len()) as f64;
    let ma = a.iter().sum::<f64>() / n;
    let mb = b.iter().sum::<f64>() / n;
    let (mut sab, mut saa, mut sbb) = (0.0, 0.0, 0.0);
    for (x, y) in a.iter().zip(b) {
        sab += (x - ma) * (y - mb);
        saa += (x - ma) * (x - ma);
        sbb += (y - mb) * (y - mb);
    }
    if saa == 0.0 || sbb == 0.0 {
        return 0.0;
    }
    sab / (saa * sbb).sqrt()
}
