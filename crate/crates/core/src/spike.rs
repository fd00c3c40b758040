//! Time grid, sparse spike trains and the double-exponential synaptic kernel.
//!
//! All times inside the crate are carried as grid step indices; milliseconds
//! only appear at the boundaries (kernel evaluation, file formats).

use std::fmt::Write as _;
use std::path::Path;

use ndarray::Array2;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Kernel values below this fraction of the peak are dropped from the
/// sampled support.
pub const KERNEL_TRUNCATION: f64 = 1e-6;

/// Uniform simulation grid covering `[0, horizon)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TimeGrid {
    dt_ms: f64,
    steps: usize,
}

impl TimeGrid {
    pub fn new(dt_ms: f64, horizon_ms: f64) -> Result<Self> {
        if !(dt_ms > 0.0) || !dt_ms.is_finite() {
            return Err(Error::InvalidParam(format!("dt must be > 0, got {dt_ms}")));
        }
        if !(horizon_ms > 0.0) || !horizon_ms.is_finite() {
            return Err(Error::InvalidParam(format!(
                "horizon must be > 0, got {horizon_ms}"
            )));
        }
        let ratio = horizon_ms / dt_ms;
        let steps = ratio.round();
        if (ratio - steps).abs() > 1e-9 * ratio.max(1.0) {
            return Err(Error::InvalidParam(format!(
                "horizon {horizon_ms} ms is not a multiple of dt {dt_ms} ms"
            )));
        }
        Ok(Self {
            dt_ms,
            steps: steps as usize,
        })
    }

    pub fn dt_ms(&self) -> f64 {
        self.dt_ms
    }

    pub fn steps(&self) -> usize {
        self.steps
    }

    pub fn horizon_ms(&self) -> f64 {
        self.steps as f64 * self.dt_ms
    }

    pub fn time_ms(&self, step: usize) -> f64 {
        step as f64 * self.dt_ms
    }

    /// Nearest grid index, ties rounding up. May lie outside the horizon.
    pub fn snap(&self, t_ms: f64) -> i64 {
        // the epsilon keeps decimal inputs like 0.35 from landing just below a half step
        (t_ms / self.dt_ms + 0.5 + 1e-9).floor() as i64
    }

    /// Grid index for `t_ms` if it falls inside `[0, horizon)`.
    pub fn index_of(&self, t_ms: f64) -> Option<usize> {
        let n = self.snap(t_ms);
        (n >= 0 && (n as usize) < self.steps).then_some(n as usize)
    }

    /// Number of steps needed to cover `duration_ms`, rounded to the grid.
    pub fn steps_for(&self, duration_ms: f64) -> usize {
        self.snap(duration_ms).max(0) as usize
    }
}

impl Default for TimeGrid {
    fn default() -> Self {
        Self {
            dt_ms: 0.1,
            steps: 12_500,
        }
    }
}

/// Events of one channel as sorted, unique grid indices.
#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct SpikeTrain {
    pub channel: usize,
    steps: Vec<usize>,
}

impl SpikeTrain {
    pub fn empty(channel: usize) -> Self {
        Self {
            channel,
            steps: Vec::new(),
        }
    }

    /// Builds a train from arbitrary indices; sorts and merges duplicates.
    pub fn from_steps(channel: usize, mut steps: Vec<usize>) -> Self {
        steps.sort_unstable();
        steps.dedup();
        Self { channel, steps }
    }

    /// Snaps millisecond times onto `grid`, dropping anything outside the horizon.
    pub fn from_times_ms(channel: usize, times: &[f64], grid: &TimeGrid) -> Self {
        let steps = times.iter().filter_map(|&t| grid.index_of(t)).collect();
        Self::from_steps(channel, steps)
    }

    pub fn steps(&self) -> &[usize] {
        &self.steps
    }

    pub fn times_ms(&self, grid: &TimeGrid) -> Vec<f64> {
        self.steps.iter().map(|&n| grid.time_ms(n)).collect()
    }

    pub fn len(&self) -> usize {
        self.steps.len()
    }

    pub fn is_empty(&self) -> bool {
        self.steps.is_empty()
    }

    /// Number of events with index in `[lo, hi)`.
    pub fn count_in(&self, lo: usize, hi: usize) -> usize {
        let a = self.steps.partition_point(|&n| n < lo);
        let b = self.steps.partition_point(|&n| n < hi);
        b - a
    }

    /// True if any event lies in the closed index range `[lo, hi]`.
    pub fn any_in(&self, lo: usize, hi: usize) -> bool {
        let a = self.steps.partition_point(|&n| n < lo);
        self.steps.get(a).is_some_and(|&n| n <= hi)
    }
}

/// A population of spike trains sharing one grid; channel ids are dense.
#[derive(Debug, Clone, PartialEq)]
pub struct SpikeRaster {
    grid: TimeGrid,
    trains: Vec<SpikeTrain>,
}

impl SpikeRaster {
    pub fn empty(channels: usize, grid: TimeGrid) -> Self {
        Self {
            grid,
            trains: (0..channels).map(SpikeTrain::empty).collect(),
        }
    }

    /// Wraps per-channel trains; train `k` is relabelled to channel `k`.
    pub fn from_trains(grid: TimeGrid, mut trains: Vec<SpikeTrain>) -> Result<Self> {
        for (k, t) in trains.iter_mut().enumerate() {
            if let Some(&last) = t.steps.last() {
                if last >= grid.steps() {
                    return Err(Error::InvalidParam(format!(
                        "channel {k} has an event at step {last} beyond the horizon"
                    )));
                }
            }
            t.channel = k;
        }
        Ok(Self { grid, trains })
    }

    pub fn grid(&self) -> &TimeGrid {
        &self.grid
    }

    pub fn channel_count(&self) -> usize {
        self.trains.len()
    }

    pub fn trains(&self) -> &[SpikeTrain] {
        &self.trains
    }

    pub fn train(&self, channel: usize) -> &SpikeTrain {
        &self.trains[channel]
    }

    pub fn total_spikes(&self) -> usize {
        self.trains.iter().map(SpikeTrain::len).sum()
    }

    /// Channel-wise union of two rasters on the same grid.
    pub fn merge(&self, other: &SpikeRaster) -> Result<SpikeRaster> {
        if self.grid != other.grid || self.channel_count() != other.channel_count() {
            return Err(Error::Shape(
                "merge needs identical grids and channel counts".into(),
            ));
        }
        let trains = self
            .trains
            .iter()
            .zip(&other.trains)
            .map(|(a, b)| {
                let mut s = a.steps.clone();
                s.extend_from_slice(&b.steps);
                SpikeTrain::from_steps(a.channel, s)
            })
            .collect();
        Ok(SpikeRaster {
            grid: self.grid,
            trains,
        })
    }

    /// Serializes to the line-oriented raster text format, events ordered by
    /// time then channel.
    pub fn to_text(&self) -> String {
        let mut out = format!(
            "channels={} horizon_ms={}",
            self.channel_count(),
            self.grid.horizon_ms()
        );
        if (self.grid.dt_ms() - 0.1).abs() > 1e-12 {
            let _ = write!(out, " dt_ms={}", self.grid.dt_ms());
        }
        out.push('\n');
        let decimals = time_decimals(self.grid.dt_ms());
        let mut events: Vec<(usize, usize)> = self
            .trains
            .iter()
            .flat_map(|t| t.steps.iter().map(move |&n| (n, t.channel)))
            .collect();
        events.sort_unstable();
        for (n, ch) in events {
            let _ = writeln!(out, "{ch},{:.*}", decimals, self.grid.time_ms(n));
        }
        out
    }

    /// Parses the raster text format. `origin` names the source in errors.
    pub fn from_text(text: &str, origin: &str) -> Result<Self> {
        let mut lines = text.lines().enumerate();
        let (_, header) = lines
            .next()
            .ok_or_else(|| Error::parse(origin, 1, "missing header line"))?;
        let mut channels = None;
        let mut horizon = None;
        let mut dt = 0.1;
        for tok in header.split_whitespace() {
            let (key, val) = tok
                .split_once('=')
                .ok_or_else(|| Error::parse(origin, 1, format!("bad header token '{tok}'")))?;
            let bad = |_| Error::parse(origin, 1, format!("bad value in '{tok}'"));
            match key {
                "channels" => {
                    channels = Some(val.parse::<usize>().map_err(|e| bad(e.to_string()))?)
                }
                "horizon_ms" => horizon = Some(val.parse::<f64>().map_err(|e| bad(e.to_string()))?),
                "dt_ms" => dt = val.parse::<f64>().map_err(|e| bad(e.to_string()))?,
                _ => {
                    return Err(Error::parse(
                        origin,
                        1,
                        format!("unknown header key '{key}'"),
                    ))
                }
            }
        }
        let channels = channels.ok_or_else(|| Error::parse(origin, 1, "header lacks channels="))?;
        let horizon = horizon.ok_or_else(|| Error::parse(origin, 1, "header lacks horizon_ms="))?;
        let grid =
            TimeGrid::new(dt, horizon).map_err(|e| Error::parse(origin, 1, e.to_string()))?;

        let mut steps: Vec<Vec<usize>> = vec![Vec::new(); channels];
        for (i, line) in lines {
            let lineno = i + 1;
            let line = line.trim();
            if line.is_empty() {
                continue;
            }
            let (ch, t) = line
                .split_once(',')
                .ok_or_else(|| Error::parse(origin, lineno, "expected 'channel,time_ms'"))?;
            let ch: usize = ch
                .trim()
                .parse()
                .map_err(|_| Error::parse(origin, lineno, format!("bad channel '{ch}'")))?;
            let t: f64 = t
                .trim()
                .parse()
                .map_err(|_| Error::parse(origin, lineno, format!("bad time '{t}'")))?;
            if ch >= channels {
                return Err(Error::parse(
                    origin,
                    lineno,
                    format!("channel {ch} out of range 0..{channels}"),
                ));
            }
            let n = grid.index_of(t).ok_or_else(|| {
                Error::parse(
                    origin,
                    lineno,
                    format!("time {t} ms outside [0, {horizon})"),
                )
            })?;
            steps[ch].push(n);
        }
        let trains = steps
            .into_iter()
            .enumerate()
            .map(|(ch, s)| SpikeTrain::from_steps(ch, s))
            .collect();
        Ok(Self { grid, trains })
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_text()).map_err(|e| Error::io(path, e))
    }

    pub fn read(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_text(&text, &path.display().to_string())
    }
}

fn time_decimals(dt_ms: f64) -> usize {
    let mut d = 0;
    while d < 6
        && ((dt_ms * 10f64.powi(d as i32)).round() - dt_ms * 10f64.powi(d as i32)).abs() > 1e-9
    {
        d += 1;
    }
    d
}

/// Time constants of the double-exponential synaptic current.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct KernelParams {
    pub tau1_ms: f64,
    pub tau2_ms: f64,
}

impl Default for KernelParams {
    fn default() -> Self {
        Self {
            tau1_ms: 5.0,
            tau2_ms: 1.25,
        }
    }
}

impl KernelParams {
    pub fn validate(&self) -> Result<()> {
        if !(self.tau2_ms > 0.0 && self.tau1_ms > self.tau2_ms) {
            return Err(Error::InvalidParam(format!(
                "kernel needs tau1 > tau2 > 0, got tau1={} tau2={}",
                self.tau1_ms, self.tau2_ms
            )));
        }
        Ok(())
    }

    /// Location of the kernel maximum.
    pub fn peak_time_ms(&self) -> f64 {
        let (a, b) = (self.tau1_ms, self.tau2_ms);
        (a / b).ln() * a * b / (a - b)
    }

    pub fn peak_value(&self) -> f64 {
        kernel_eval(self.peak_time_ms(), self)
    }

    /// Length of the support kept after truncation at `KERNEL_TRUNCATION` of
    /// the peak (the slow exponential dominates the tail).
    pub fn support_ms(&self) -> f64 {
        self.tau1_ms * (1.0 / (KERNEL_TRUNCATION * self.peak_value())).ln()
    }

    /// Kernel sampled on the grid from lag 0 up to the truncated support.
    pub fn sampled(&self, grid: &TimeGrid) -> Vec<f64> {
        let len = (self.support_ms() / grid.dt_ms()).ceil() as usize + 1;
        (0..len)
            .map(|n| kernel_eval(grid.time_ms(n), self))
            .collect()
    }
}

/// `(exp(-t/tau1) - exp(-t/tau2)) * u(t)`, unnormalized.
pub fn kernel_eval(t_ms: f64, k: &KernelParams) -> f64 {
    if t_ms < 0.0 {
        return 0.0;
    }
    (-t_ms / k.tau1_ms).exp() - (-t_ms / k.tau2_ms).exp()
}

/// Superposition of kernels launched at every spike of `train`, sampled on
/// the grid.
pub fn convolve_spikes(train: &SpikeTrain, k: &KernelParams, grid: &TimeGrid) -> Vec<f64> {
    let kernel = k.sampled(grid);
    let mut out = vec![0.0; grid.steps()];
    accumulate(&mut out, train.steps(), &kernel);
    out
}

fn accumulate(out: &mut [f64], steps: &[usize], kernel: &[f64]) {
    let len = out.len();
    for &s in steps {
        let end = (s + kernel.len()).min(len);
        for (o, kv) in out[s..end].iter_mut().zip(kernel) {
            *o += kv;
        }
    }
}

/// Kernel waveforms for every channel as a `channels x steps` matrix.
pub fn convolve_raster(raster: &SpikeRaster, k: &KernelParams) -> Array2<f64> {
    let grid = raster.grid();
    let kernel = k.sampled(grid);
    let mut out = Array2::zeros((raster.channel_count(), grid.steps()));
    for (train, mut row) in raster.trains().iter().zip(out.rows_mut()) {
        let row = row.as_slice_mut().expect("row-major rows are contiguous");
        accumulate(row, train.steps(), &kernel);
    }
    out
}
