//! Spike-domain task: cochlea-like input streams, Poisson pixel targets and
//! the temporal jitter transform.
//!
//! The input generator groups channels into frequency bands. Each character
//! activates its own subset of bands, all channels share a slow amplitude
//! envelope, and channels of one band share a common "mother" spike process
//! (copied with small fixed latencies) on top of private spikes. The mother
//! process is what makes neighbouring streams strongly correlated on the
//! millisecond scale.

use std::f64::consts::TAU;
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Exp, Uniform};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::spike::{SpikeRaster, SpikeTrain, TimeGrid};

pub const IMAGE_ROWS: usize = 14;
pub const IMAGE_COLS: usize = 12;

/// Expected number of desired spikes in the bundled task.
pub const TARGET_SPIKE_BUDGET: f64 = 987.0;

const GLYPH_I: &str = include_str!("../assets/glyph_i.txt");
const GLYPH_B: &str = include_str!("../assets/glyph_b.txt");
const GLYPH_M: &str = include_str!("../assets/glyph_m.txt");

/// Row-major intensity grid with values in `[0, 1]`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Image {
    rows: usize,
    cols: usize,
    pixels: Vec<f64>,
}

impl Image {
    pub fn new(rows: usize, cols: usize, pixels: Vec<f64>) -> Result<Self> {
        if pixels.len() != rows * cols {
            return Err(Error::Shape(format!(
                "{rows}x{cols} image with {} pixels",
                pixels.len()
            )));
        }
        if pixels.iter().any(|p| !(0.0..=1.0).contains(p)) {
            return Err(Error::InvalidParam(
                "pixel intensities must lie in [0, 1]".into(),
            ));
        }
        Ok(Self { rows, cols, pixels })
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn pixels(&self) -> &[f64] {
        &self.pixels
    }

    pub fn get(&self, row: usize, col: usize) -> f64 {
        self.pixels[row * self.cols + col]
    }

    pub fn total_intensity(&self) -> f64 {
        self.pixels.iter().sum()
    }

    /// Parses the asset format: one text line per row, one character per
    /// pixel. Files containing only `0`/`1` are binary; otherwise digits
    /// `0..=9` map linearly onto `[0, 1]`.
    pub fn parse(text: &str, origin: &str) -> Result<Self> {
        let lines: Vec<(usize, &str)> = text
            .lines()
            .enumerate()
            .map(|(i, l)| (i + 1, l.trim()))
            .filter(|(_, l)| !l.is_empty())
            .collect();
        let Some(&(_, first)) = lines.first() else {
            return Err(Error::parse(origin, 1, "empty image"));
        };
        let cols = first.len();
        let binary = lines
            .iter()
            .all(|(_, l)| l.chars().all(|c| c == '0' || c == '1'));
        let mut pixels = Vec::with_capacity(lines.len() * cols);
        for &(no, line) in &lines {
            if line.len() != cols {
                return Err(Error::parse(
                    origin,
                    no,
                    format!("expected {cols} pixels, found {}", line.len()),
                ));
            }
            for c in line.chars() {
                let d = c
                    .to_digit(10)
                    .ok_or_else(|| Error::parse(origin, no, format!("bad pixel '{c}'")))?;
                pixels.push(if binary { d as f64 } else { d as f64 / 9.0 });
            }
        }
        Self::new(lines.len(), cols, pixels)
    }

    /// Decimal asset format (`0..=9`).
    pub fn to_text(&self) -> String {
        let mut out = String::with_capacity(self.rows * (self.cols + 1));
        for r in 0..self.rows {
            for c in 0..self.cols {
                let d = (self.get(r, c) * 9.0).round() as u32;
                out.push(char::from_digit(d.min(9), 10).expect("digit"));
            }
            out.push('\n');
        }
        out
    }

    pub fn read(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::parse(&text, &path.display().to_string())
    }
}

/// The bundled `I`, `B`, `M` glyphs.
pub fn bundled_glyphs() -> Vec<Image> {
    [
        (GLYPH_I, "glyph_i"),
        (GLYPH_B, "glyph_b"),
        (GLYPH_M, "glyph_m"),
    ]
    .iter()
    .map(|(t, name)| Image::parse(t, name).expect("bundled glyph is well formed"))
    .collect()
}

/// Character windows in ms: three disjoint 230 ms windows.
pub fn default_windows() -> Vec<(f64, f64)> {
    vec![(100.0, 330.0), (520.0, 750.0), (940.0, 1170.0)]
}

fn validate_windows(windows: &[(f64, f64)], grid: &TimeGrid) -> Result<()> {
    let mut sorted = windows.to_vec();
    sorted.sort_by(|a, b| a.0.total_cmp(&b.0));
    for (i, &(lo, hi)) in sorted.iter().enumerate() {
        if !(lo >= 0.0 && hi > lo && hi <= grid.horizon_ms()) {
            return Err(Error::InvalidParam(format!(
                "window [{lo}, {hi}] outside the horizon"
            )));
        }
        if i > 0 && lo < sorted[i - 1].1 {
            return Err(Error::InvalidParam("character windows overlap".into()));
        }
    }
    Ok(())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct InputGenConfig {
    pub channels: usize,
    pub mean_rate_hz: f64,
    pub char_windows: Vec<(f64, f64)>,
    /// Channels per frequency band; the last band may be short.
    pub band_size: usize,
    /// Fraction of bands a character drives strongly.
    pub active_band_fraction: f64,
    /// Rate multiplier range for driven bands.
    pub active_gain: (f64, f64),
    /// Rate multiplier for undriven bands inside a character window.
    pub inactive_gain: f64,
    /// Rate multiplier between character windows.
    pub gap_gain: f64,
    /// Depth of the shared slow envelope (0 disables it).
    pub envelope_depth: f64,
    /// Frequency range of the envelope components in Hz.
    pub envelope_freq_hz: (f64, f64),
    /// Share of every channel's rate carried by its band's common process.
    pub sync_fraction: f64,
    /// Largest per-channel latency applied to copies of the common process.
    pub sync_latency_ms: f64,
    pub seed: u64,
}

impl Default for InputGenConfig {
    fn default() -> Self {
        Self {
            channels: 132,
            mean_rate_hz: 10.0,
            char_windows: default_windows(),
            band_size: 4,
            active_band_fraction: 0.4,
            active_gain: (1.0, 3.0),
            inactive_gain: 0.15,
            gap_gain: 0.05,
            envelope_depth: 0.8,
            envelope_freq_hz: (2.0, 8.0),
            sync_fraction: 0.6,
            sync_latency_ms: 1.0,
            seed: 11,
        }
    }
}

impl InputGenConfig {
    pub fn validate(&self, grid: &TimeGrid) -> Result<()> {
        validate_windows(&self.char_windows, grid)?;
        let ok = self.channels > 0
            && self.band_size > 0
            && self.mean_rate_hz >= 0.0
            && (0.0..=1.0).contains(&self.active_band_fraction)
            && self.active_gain.0 >= 0.0
            && self.active_gain.1 >= self.active_gain.0
            && self.inactive_gain >= 0.0
            && self.gap_gain >= 0.0
            && (0.0..=1.0).contains(&self.envelope_depth)
            && self.envelope_freq_hz.0 > 0.0
            && self.envelope_freq_hz.1 >= self.envelope_freq_hz.0
            && (0.0..=1.0).contains(&self.sync_fraction)
            && self.sync_latency_ms >= 0.0;
        if !ok {
            return Err(Error::InvalidParam(format!(
                "invalid input generator config {self:?}"
            )));
        }
        Ok(())
    }
}

/// Deterministic rate model behind [`gen_inputs`].
struct InputRateModel<'a> {
    cfg: &'a InputGenConfig,
    bands: usize,
    /// `gains[window][band]`
    gains: Vec<Vec<f64>>,
    envelope: Vec<(f64, f64)>,
    scale: f64,
}

impl<'a> InputRateModel<'a> {
    fn new(cfg: &'a InputGenConfig, grid: &TimeGrid, rng: &mut ChaCha8Rng) -> Self {
        let bands = cfg.channels.div_ceil(cfg.band_size);
        let gain =
            Uniform::new_inclusive(cfg.active_gain.0, cfg.active_gain.1).expect("validated range");
        let gains = cfg
            .char_windows
            .iter()
            .map(|_| {
                (0..bands)
                    .map(|_| {
                        if rng.random::<f64>() < cfg.active_band_fraction {
                            gain.sample(rng)
                        } else {
                            cfg.inactive_gain
                        }
                    })
                    .collect()
            })
            .collect();
        let freq = Uniform::new_inclusive(cfg.envelope_freq_hz.0, cfg.envelope_freq_hz.1)
            .expect("validated range");
        let envelope = (0..3)
            .map(|_| (freq.sample(rng), rng.random::<f64>() * TAU))
            .collect();
        let mut model = Self {
            cfg,
            bands,
            gains,
            envelope,
            scale: 1.0,
        };
        let mut integral = 0.0;
        for n in 0..grid.steps() {
            let t = grid.time_ms(n);
            integral += (0..bands)
                .map(|b| model.band_rate(b, t) * model.band_width(b) as f64)
                .sum::<f64>();
        }
        integral *= grid.dt_ms() / 1000.0;
        let wanted = cfg.mean_rate_hz * cfg.channels as f64 * grid.horizon_ms() / 1000.0;
        model.scale = if integral > 0.0 {
            wanted / integral
        } else {
            0.0
        };
        model
    }

    fn band_width(&self, band: usize) -> usize {
        let lo = band * self.cfg.band_size;
        (lo + self.cfg.band_size).min(self.cfg.channels) - lo
    }

    fn envelope_at(&self, t_ms: f64) -> f64 {
        let s: f64 = self
            .envelope
            .iter()
            .map(|&(f, phase)| (TAU * f * t_ms / 1000.0 + phase).sin())
            .sum::<f64>()
            / self.envelope.len() as f64;
        (1.0 + self.cfg.envelope_depth * s).max(0.0)
    }

    /// Per-channel rate of `band` at `t`, in Hz.
    fn band_rate(&self, band: usize, t_ms: f64) -> f64 {
        let gain = self
            .cfg
            .char_windows
            .iter()
            .position(|&(lo, hi)| t_ms >= lo && t_ms < hi)
            .map_or(self.cfg.gap_gain, |w| self.gains[w][band]);
        self.scale * gain * self.envelope_at(t_ms)
    }

    fn band_rate_bound(&self, band: usize) -> f64 {
        let top = self
            .gains
            .iter()
            .map(|g| g[band])
            .fold(self.cfg.gap_gain, f64::max);
        self.scale * top * (1.0 + self.cfg.envelope_depth)
    }
}

/// Event times in ms of an inhomogeneous Poisson process on `[0, horizon)`,
/// drawn by thinning a homogeneous process at `bound_hz`.
fn thinned_poisson<R: Rng + ?Sized>(
    rate_hz: impl Fn(f64) -> f64,
    bound_hz: f64,
    horizon_ms: f64,
    rng: &mut R,
) -> Vec<f64> {
    let mut out = Vec::new();
    if !(bound_hz > 0.0) {
        return out;
    }
    let gap = Exp::new(bound_hz / 1000.0).expect("positive rate");
    let mut t = gap.sample(rng);
    while t < horizon_ms {
        if rng.random::<f64>() * bound_hz < rate_hz(t) {
            out.push(t);
        }
        t += gap.sample(rng);
    }
    out
}

/// Synthetic cochlea-like input raster; deterministic per seed.
pub fn gen_inputs(cfg: &InputGenConfig, grid: &TimeGrid) -> Result<SpikeRaster> {
    cfg.validate(grid)?;
    if cfg.mean_rate_hz == 0.0 {
        return Ok(SpikeRaster::empty(cfg.channels, *grid));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let model = InputRateModel::new(cfg, grid, &mut rng);
    let latency = Uniform::new_inclusive(0.0, cfg.sync_latency_ms).expect("validated latency");
    let horizon = grid.horizon_ms();
    let mut trains = Vec::with_capacity(cfg.channels);
    for band in 0..model.bands {
        let bound = model.band_rate_bound(band);
        let rate = |t: f64| model.band_rate(band, t);
        let common = thinned_poisson(
            |t| cfg.sync_fraction * rate(t),
            cfg.sync_fraction * bound,
            horizon,
            &mut rng,
        );
        for k in 0..model.band_width(band) {
            let ch = band * cfg.band_size + k;
            let lag = latency.sample(&mut rng);
            let mut times: Vec<f64> = common.iter().map(|t| t + lag).collect();
            times.extend(thinned_poisson(
                |t| (1.0 - cfg.sync_fraction) * rate(t),
                (1.0 - cfg.sync_fraction) * bound,
                horizon,
                &mut rng,
            ));
            trains.push(SpikeTrain::from_times_ms(ch, &times, grid));
        }
    }
    SpikeRaster::from_trains(*grid, trains)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TargetGenConfig {
    pub images: Vec<Image>,
    /// Poisson rate in Hz for a pixel of intensity 1.
    pub on_rate_hz: f64,
    pub char_windows: Vec<(f64, f64)>,
    pub seed: u64,
}

impl Default for TargetGenConfig {
    fn default() -> Self {
        let images = bundled_glyphs();
        let windows = default_windows();
        let exposure: f64 = images
            .iter()
            .zip(&windows)
            .map(|(img, (lo, hi))| img.total_intensity() * (hi - lo) / 1000.0)
            .sum();
        Self {
            images,
            on_rate_hz: TARGET_SPIKE_BUDGET / exposure,
            char_windows: windows,
            seed: 3,
        }
    }
}

impl TargetGenConfig {
    pub fn validate(&self, grid: &TimeGrid) -> Result<()> {
        validate_windows(&self.char_windows, grid)?;
        if self.images.len() != self.char_windows.len() {
            return Err(Error::InvalidParam(format!(
                "{} images for {} windows",
                self.images.len(),
                self.char_windows.len()
            )));
        }
        let pixels = self.images.first().map_or(0, |i| i.pixels().len());
        if self.images.iter().any(|i| i.pixels().len() != pixels) {
            return Err(Error::InvalidParam("images differ in size".into()));
        }
        if !(self.on_rate_hz >= 0.0) {
            return Err(Error::InvalidParam("on_rate must be >= 0".into()));
        }
        Ok(())
    }

    pub fn channels(&self) -> usize {
        self.images.first().map_or(0, |i| i.pixels().len())
    }

    /// Analytic Poisson mean of the total desired spike count.
    pub fn expected_spikes(&self) -> f64 {
        self.images
            .iter()
            .zip(&self.char_windows)
            .map(|(img, (lo, hi))| img.total_intensity() * self.on_rate_hz * (hi - lo) / 1000.0)
            .sum()
    }
}

/// Poisson pixel targets: channel `row * cols + col` fires at
/// `intensity * on_rate` inside its character's window and is silent
/// elsewhere.
pub fn gen_targets(cfg: &TargetGenConfig, grid: &TimeGrid) -> Result<SpikeRaster> {
    cfg.validate(grid)?;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let channels = cfg.channels();
    let mut times: Vec<Vec<f64>> = vec![Vec::new(); channels];
    for (img, &(lo, hi)) in cfg.images.iter().zip(&cfg.char_windows) {
        for (ch, &intensity) in img.pixels().iter().enumerate() {
            let rate = intensity * cfg.on_rate_hz;
            let events = thinned_poisson(|_| rate, rate, hi - lo, &mut rng);
            times[ch].extend(events.into_iter().map(|t| lo + t));
        }
    }
    let trains = times
        .iter()
        .enumerate()
        .map(|(ch, t)| {
            // keep events strictly inside their window after snapping
            let mut train = SpikeTrain::from_times_ms(ch, t, grid);
            let steps: Vec<usize> = train
                .steps()
                .iter()
                .copied()
                .filter(|&n| {
                    let tm = grid.time_ms(n);
                    cfg.char_windows.iter().any(|&(lo, hi)| tm >= lo && tm < hi)
                })
                .collect();
            train = SpikeTrain::from_steps(ch, steps);
            train
        })
        .collect();
    SpikeRaster::from_trains(*grid, trains)
}

/// Shifts every spike by an independent `U[-half_width, half_width]` offset,
/// re-snaps to the grid, clamps into `[0, T)` and merges collisions.
pub fn jitter_raster(r: &SpikeRaster, half_width_ms: f64, seed: u64) -> Result<SpikeRaster> {
    if !(half_width_ms >= 0.0) {
        return Err(Error::InvalidParam(format!(
            "jitter half-width must be >= 0, got {half_width_ms}"
        )));
    }
    if half_width_ms == 0.0 {
        return Ok(r.clone());
    }
    let grid = *r.grid();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let shift = Uniform::new_inclusive(-half_width_ms, half_width_ms).expect("valid range");
    let last = grid.steps() as i64 - 1;
    let trains = r
        .trains()
        .iter()
        .map(|t| {
            let steps = t
                .steps()
                .iter()
                .map(|&n| {
                    grid.snap(grid.time_ms(n) + shift.sample(&mut rng))
                        .clamp(0, last) as usize
                })
                .collect();
            SpikeTrain::from_steps(t.channel, steps)
        })
        .collect();
    SpikeRaster::from_trains(grid, trains)
}
