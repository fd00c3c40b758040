//! Reproducible experiment runner: a TOML config, a checksummed dataset and
//! the training, device-count, drift and jitter studies.
//!
//! Every command is a pure function of the config (all seeds live in it), so
//! rerunning a command reproduces its output files byte for byte. Tables are
//! comma-separated and start with a `# config_sha256=<hex>` line.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use rand::{RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::array::{compensate_drift, init_array, SynapseArray};
use crate::error::{Error, Result};
use crate::lif::LifParams;
use crate::metrics::{accuracy_bands, rate_image, smoothed_correlation, HISTOGRAM_BINS};
use crate::normad::{train, FpBackend, PcmBackend, PreparedInputs, TrainerConfig, TrainingLog};
use crate::pcm::PcmModelParams;
use crate::plot::{heatmaps, line_chart, raster_plot, Axis, Series};
use crate::spike::{KernelParams, SpikeRaster, TimeGrid};
use crate::task::{
    bundled_glyphs, gen_inputs, gen_targets, jitter_raster, Image, InputGenConfig, TargetGenConfig,
};

pub const INPUTS_FILE: &str = "inputs.raster";
pub const TARGETS_FILE: &str = "targets.raster";
pub const MANIFEST_FILE: &str = "manifest.toml";
pub const SNAPSHOT_FILE: &str = "snapshot.txt";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Backend {
    #[default]
    Pcm,
    Fp64,
}

impl Backend {
    pub fn name(self) -> &'static str {
        match self {
            Backend::Pcm => "pcm",
            Backend::Fp64 => "fp64",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GridConfig {
    pub dt_ms: f64,
    pub horizon_ms: f64,
}

impl Default for GridConfig {
    fn default() -> Self {
        let g = TimeGrid::default();
        Self {
            dt_ms: g.dt_ms(),
            horizon_ms: g.horizon_ms(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TargetSection {
    /// Hz per unit pixel intensity; derived from the spike budget when unset.
    pub on_rate_hz: Option<f64>,
    /// Glyph files, relative to the config file; the bundled I, B, M when empty.
    pub glyph_files: Vec<PathBuf>,
    pub seed: u64,
}

impl Default for TargetSection {
    fn default() -> Self {
        Self {
            on_rate_hz: None,
            glyph_files: Vec::new(),
            seed: TargetGenConfig::default().seed,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TaskSection {
    pub inputs: InputGenConfig,
    pub targets: TargetSection,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DeviceSection {
    pub devices_per_side: usize,
    /// Weight per µS; defaults to the full weight range over `N` device swings.
    pub beta: Option<f64>,
    pub init_seed: u64,
    pub program_seed: u64,
    pub model: PcmModelParams,
}

impl Default for DeviceSection {
    fn default() -> Self {
        Self {
            devices_per_side: 4,
            beta: None,
            init_seed: 5,
            program_seed: 17,
            model: PcmModelParams::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct StudySection {
    pub device_counts: Vec<usize>,
    pub jitter_half_widths_ms: Vec<f64>,
    pub jitter_seed: u64,
    pub correlation_sigma_ms: f64,
    /// Seconds after the end of training.
    pub drift_read_times_s: Vec<f64>,
    /// Read times (a subset of the above is typical) at which rate images are saved.
    pub rate_image_times_s: Vec<f64>,
}

impl Default for StudySection {
    fn default() -> Self {
        Self {
            device_counts: vec![1, 2, 4, 8],
            jitter_half_widths_ms: vec![0.0, 25.0],
            jitter_seed: 99,
            correlation_sigma_ms: 5.0,
            drift_read_times_s: vec![1.0, 10.0, 100.0, 1e3, 1e4, 1e5, 4e5],
            rate_image_times_s: vec![1.0, 4e5],
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct OutputSection {
    pub dir: PathBuf,
    /// Also write SVG figures next to the tables.
    pub plots: bool,
}

impl Default for OutputSection {
    fn default() -> Self {
        Self {
            dir: PathBuf::from("results"),
            plots: true,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentConfig {
    pub backend: Backend,
    pub grid: GridConfig,
    pub kernel: KernelParams,
    pub neuron: LifParams,
    pub task: TaskSection,
    pub device: DeviceSection,
    pub trainer: TrainerConfig,
    pub study: StudySection,
    pub output: OutputSection,
    /// Directory that relative glyph paths resolve against.
    #[serde(skip)]
    pub base_dir: PathBuf,
}

fn sha256_hex(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

impl ExperimentConfig {
    pub fn from_toml_str(text: &str, base_dir: &Path) -> Result<Self> {
        let mut cfg: Self = toml::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        cfg.base_dir = base_dir.to_path_buf();
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let base = path.parent().unwrap_or(Path::new("."));
        Self::from_toml_str(&text, base).map_err(|e| match e {
            Error::Config(msg) => Error::Config(format!("{}: {msg}", path.display())),
            other => other,
        })
    }

    pub fn to_toml(&self) -> Result<String> {
        toml::to_string(self).map_err(|e| Error::Config(e.to_string()))
    }

    /// SHA-256 of the canonical serialization, ignoring the output section.
    pub fn checksum(&self) -> Result<String> {
        let mut canon = self.clone();
        canon.output = OutputSection::default();
        Ok(sha256_hex(canon.to_toml()?.as_bytes()))
    }

    pub fn validate(&self) -> Result<()> {
        let grid = self.time_grid()?;
        self.kernel.validate()?;
        self.neuron.validate()?;
        self.task.inputs.validate(&grid)?;
        self.target_config()?.validate(&grid)?;
        self.device.model.validate()?;
        if self.device.devices_per_side == 0 {
            return Err(Error::Config("device.devices_per_side must be >= 1".into()));
        }
        if let Some(b) = self.device.beta {
            if !(b > 0.0 && b.is_finite()) {
                return Err(Error::Config(format!(
                    "device.beta must be positive, got {b}"
                )));
            }
        }
        self.trainer.validate()?;
        let s = &self.study;
        if s.device_counts.is_empty() || s.device_counts.contains(&0) {
            return Err(Error::Config(
                "study.device_counts must be non-empty and >= 1".into(),
            ));
        }
        if s.jitter_half_widths_ms.iter().any(|h| !(*h >= 0.0)) {
            return Err(Error::Config(
                "study.jitter_half_widths_ms must be >= 0".into(),
            ));
        }
        if !(s.correlation_sigma_ms > 0.0) {
            return Err(Error::Config(
                "study.correlation_sigma_ms must be > 0".into(),
            ));
        }
        if s.drift_read_times_s
            .iter()
            .chain(&s.rate_image_times_s)
            .any(|t| !(*t >= 1.0))
        {
            return Err(Error::Config(
                "drift read times must be >= 1 s after training".into(),
            ));
        }
        Ok(())
    }

    pub fn time_grid(&self) -> Result<TimeGrid> {
        TimeGrid::new(self.grid.dt_ms, self.grid.horizon_ms)
    }

    pub fn target_config(&self) -> Result<TargetGenConfig> {
        let images = if self.task.targets.glyph_files.is_empty() {
            bundled_glyphs()
        } else {
            self.task
                .targets
                .glyph_files
                .iter()
                .map(|p| Image::read(&self.base_dir.join(p)))
                .collect::<Result<Vec<_>>>()?
        };
        let windows = self.task.inputs.char_windows.clone();
        let mut cfg = TargetGenConfig {
            images,
            on_rate_hz: 1.0,
            char_windows: windows,
            seed: self.task.targets.seed,
        };
        cfg.on_rate_hz = match self.task.targets.on_rate_hz {
            Some(r) => r,
            None => {
                let exposure = cfg.expected_spikes();
                if exposure > 0.0 {
                    crate::task::TARGET_SPIKE_BUDGET / exposure
                } else {
                    0.0
                }
            }
        };
        Ok(cfg)
    }

    /// Replaces every seed by one drawn from a stream seeded with `seed`.
    pub fn apply_seed_override(&mut self, seed: u64) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        // keep seeds representable as TOML integers
        let mut next = || rng.next_u64() >> 1;
        self.task.inputs.seed = next();
        self.task.targets.seed = next();
        self.device.init_seed = next();
        self.device.program_seed = next();
        self.study.jitter_seed = next();
    }

    /// Hash of everything the dataset depends on.
    pub fn dataset_key(&self) -> Result<String> {
        #[derive(Serialize)]
        struct Key<'a> {
            grid: &'a GridConfig,
            task: &'a TaskSection,
            glyphs: Vec<String>,
        }
        let glyphs = self
            .target_config()?
            .images
            .iter()
            .map(Image::to_text)
            .collect();
        let key = Key {
            grid: &self.grid,
            task: &self.task,
            glyphs,
        };
        let text = toml::to_string(&key).map_err(|e| Error::Config(e.to_string()))?;
        Ok(sha256_hex(text.as_bytes()))
    }

    fn preamble(&self) -> Result<Vec<String>> {
        Ok(vec![format!("config_sha256={}", self.checksum()?)])
    }
}

fn write_file(path: &Path, contents: &str) -> Result<()> {
    if let Some(dir) = path.parent() {
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    }
    std::fs::write(path, contents).map_err(|e| Error::io(path, e))
}

fn table(cfg: &ExperimentConfig, header: &str, rows: &[String]) -> Result<String> {
    let mut out = String::new();
    for p in cfg.preamble()? {
        let _ = writeln!(out, "# {p}");
    }
    let _ = writeln!(out, "{header}");
    for r in rows {
        let _ = writeln!(out, "{r}");
    }
    Ok(out)
}

#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub inputs: SpikeRaster,
    pub targets: SpikeRaster,
}

pub fn generate_dataset(cfg: &ExperimentConfig) -> Result<Dataset> {
    let grid = cfg.time_grid()?;
    Ok(Dataset {
        inputs: gen_inputs(&cfg.task.inputs, &grid)?,
        targets: gen_targets(&cfg.target_config()?, &grid)?,
    })
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ManifestEntry {
    pub name: String,
    pub channels: usize,
    pub spikes: usize,
    pub sha256: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Manifest {
    pub dataset_key: String,
    pub input_seed: u64,
    pub target_seed: u64,
    pub files: Vec<ManifestEntry>,
}

impl Manifest {
    pub fn read(dir: &Path) -> Result<Self> {
        let path = dir.join(MANIFEST_FILE);
        let text = std::fs::read_to_string(&path).map_err(|e| Error::io(&path, e))?;
        toml::from_str(&text).map_err(|e| Error::Config(format!("{}: {e}", path.display())))
    }
}

/// Writes the input and target rasters and a manifest of their checksums.
pub fn cmd_gen_data(cfg: &ExperimentConfig, out: &Path) -> Result<Manifest> {
    let data = generate_dataset(cfg)?;
    write_dataset(cfg, &data, out)
}

fn write_dataset(cfg: &ExperimentConfig, data: &Dataset, out: &Path) -> Result<Manifest> {
    let mut files = Vec::new();
    for (name, raster) in [(INPUTS_FILE, &data.inputs), (TARGETS_FILE, &data.targets)] {
        let text = raster.to_text();
        write_file(&out.join(name), &text)?;
        files.push(ManifestEntry {
            name: name.to_string(),
            channels: raster.channel_count(),
            spikes: raster.total_spikes(),
            sha256: sha256_hex(text.as_bytes()),
        });
    }
    let manifest = Manifest {
        dataset_key: cfg.dataset_key()?,
        input_seed: cfg.task.inputs.seed,
        target_seed: cfg.task.targets.seed,
        files,
    };
    let text = toml::to_string(&manifest).map_err(|e| Error::Config(e.to_string()))?;
    write_file(&out.join(MANIFEST_FILE), &text)?;
    Ok(manifest)
}

/// Reads a dataset from `dir`, verifying every checksum in its manifest.
pub fn load_dataset(dir: &Path) -> Result<(Manifest, Dataset)> {
    let manifest = Manifest::read(dir)?;
    let mut rasters = Vec::new();
    for name in [INPUTS_FILE, TARGETS_FILE] {
        let entry = manifest
            .files
            .iter()
            .find(|f| f.name == name)
            .ok_or_else(|| {
                Error::Config(format!("manifest in {} lists no {name}", dir.display()))
            })?;
        let path = dir.join(name);
        let text = std::fs::read_to_string(&path).map_err(|e| Error::io(&path, e))?;
        let found = sha256_hex(text.as_bytes());
        if found != entry.sha256 {
            return Err(Error::Checksum {
                path,
                expected: entry.sha256.clone(),
                found,
            });
        }
        rasters.push(SpikeRaster::from_text(&text, &path.display().to_string())?);
    }
    let targets = rasters.pop().expect("two rasters");
    let inputs = rasters.pop().expect("two rasters");
    Ok((manifest, Dataset { inputs, targets }))
}

/// Loads the dataset in `out` if one exists, otherwise generates and writes it.
pub fn dataset_for(cfg: &ExperimentConfig, out: &Path) -> Result<Dataset> {
    if !out.join(MANIFEST_FILE).exists() {
        let data = generate_dataset(cfg)?;
        write_dataset(cfg, &data, out)?;
        return Ok(data);
    }
    let (manifest, data) = load_dataset(out)?;
    if manifest.dataset_key != cfg.dataset_key()? {
        return Err(Error::Config(format!(
            "dataset in {} was generated from a different task config; rerun gen-data",
            out.display()
        )));
    }
    Ok(data)
}

pub struct TrialOutcome {
    pub log: TrainingLog,
    /// The trained array, for the PCM backend.
    pub array: Option<SynapseArray>,
}

/// One training run. Both backends start from the same freshly initialized
/// array; the FP64 backend copies its weights read at `t = 0`.
pub fn run_trial(
    cfg: &ExperimentConfig,
    data: &Dataset,
    prepared: &PreparedInputs,
    backend: Backend,
    devices_per_side: usize,
) -> Result<TrialOutcome> {
    let p = cfg.device.model;
    let mut array = init_array(
        data.inputs.channel_count(),
        data.targets.channel_count(),
        devices_per_side,
        &p,
        cfg.device.init_seed,
    )?;
    if let Some(b) = cfg.device.beta {
        array.set_beta(b)?;
    }
    match backend {
        Backend::Fp64 => {
            let mut rng = ChaCha8Rng::seed_from_u64(cfg.device.program_seed);
            let mut b = FpBackend {
                weights: array.read_weights(0.0, &p, &mut rng)?,
            };
            let log = train(prepared, &data.targets, &mut b, &cfg.trainer, &cfg.neuron)?;
            Ok(TrialOutcome { log, array: None })
        }
        Backend::Pcm => {
            let mut b = PcmBackend::new(array, p, cfg.device.program_seed);
            let log = train(prepared, &data.targets, &mut b, &cfg.trainer, &cfg.neuron)?;
            Ok(TrialOutcome {
                log,
                array: Some(b.array),
            })
        }
    }
}

fn prepare(cfg: &ExperimentConfig, inputs: &SpikeRaster) -> Result<PreparedInputs> {
    PreparedInputs::new(inputs, &cfg.kernel, &cfg.neuron)
}

fn image_shape(cfg: &ExperimentConfig) -> Result<(usize, usize)> {
    let t = cfg.target_config()?;
    let img = t
        .images
        .first()
        .ok_or_else(|| Error::Config("task has no target images".into()))?;
    Ok((img.rows(), img.cols()))
}

/// Rate images of `observed`, one per character window.
pub fn rate_images(cfg: &ExperimentConfig, observed: &SpikeRaster) -> Result<Vec<Image>> {
    let (rows, cols) = image_shape(cfg)?;
    cfg.task
        .inputs
        .char_windows
        .iter()
        .map(|&w| rate_image(observed, w, rows, cols))
        .collect()
}

fn accuracy_series(log: &TrainingLog, label: &str) -> Vec<Series> {
    ["5 ms", "10 ms", "25 ms"]
        .iter()
        .enumerate()
        .map(|(band, tol)| Series {
            label: format!("{label}{tol}"),
            points: log
                .records
                .iter()
                .map(|r| (r.epoch as f64, r.acc_pct(band)))
                .collect(),
        })
        .collect()
}

fn write_images(dir: &Path, stem: &str, images: &[Image]) -> Result<()> {
    for (k, img) in images.iter().enumerate() {
        write_file(&dir.join(format!("{stem}_{k}.txt")), &img.to_text())?;
    }
    Ok(())
}

pub struct TrainReport {
    pub backend: Backend,
    pub log: TrainingLog,
    pub log_table: String,
    pub snapshot: Option<PathBuf>,
}

/// Trains on the configured backend and writes the log table, the final
/// weights, the final output raster, rate images and, for the PCM backend,
/// the array snapshot at the final evaluation time.
pub fn cmd_train(cfg: &ExperimentConfig, out: &Path) -> Result<TrainReport> {
    let data = dataset_for(cfg, out)?;
    let prepared = prepare(cfg, &data.inputs)?;
    let backend = cfg.backend;
    let n = cfg.device.devices_per_side;
    let trial = run_trial(cfg, &data, &prepared, backend, n)?;
    let name = backend.name();

    let mut preamble = cfg.preamble()?;
    preamble.push(format!("backend={name} devices_per_side={n}"));
    let log_table = trial.log.to_csv(&preamble);
    write_file(&out.join(format!("train_{name}_log.csv")), &log_table)?;
    let beta = trial.array.as_ref().map_or(0.0, |a| a.beta());
    write_file(
        &out.join(format!("train_{name}_weights.csv")),
        &trial.log.final_weights.to_csv(beta),
    )?;
    write_file(
        &out.join(format!("train_{name}_observed.raster")),
        &trial.log.final_observed.to_text(),
    )?;
    let images = rate_images(cfg, &trial.log.final_observed)?;
    write_images(out, &format!("train_{name}_rate"), &images)?;

    let snapshot = match &trial.array {
        Some(array) => {
            let path = out.join(SNAPSHOT_FILE);
            write_file(&path, &array.snapshot_text(trial.log.end_time_s))?;
            Some(path)
        }
        None => None,
    };
    if cfg.output.plots {
        let svg = line_chart(
            &format!("Training accuracy ({name}, N={n})"),
            "epoch",
            "accuracy (%)",
            &accuracy_series(&trial.log, ""),
            Axis::Linear,
            Some((0.0, 100.0)),
        );
        write_file(&out.join(format!("train_{name}_accuracy.svg")), &svg)?;
        let svg = raster_plot(
            "Desired (circles) and observed (ticks)",
            &data.targets,
            &trial.log.final_observed,
        );
        write_file(&out.join(format!("train_{name}_raster.svg")), &svg)?;
        let labelled: Vec<(String, Image)> = images
            .into_iter()
            .enumerate()
            .map(|(k, i)| (format!("window {k}"), i))
            .collect();
        write_file(
            &out.join(format!("train_{name}_rate.svg")),
            &heatmaps("Output rate images", &labelled),
        )?;
    }
    Ok(TrainReport {
        backend,
        log: trial.log,
        log_table,
        snapshot,
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct SweepRow {
    pub devices_per_side: usize,
    pub device_count: usize,
    /// Final accuracy at 5, 10 and 25 ms.
    pub final_acc: [f64; 3],
    pub total_pulses: usize,
}

pub struct SweepReport {
    pub rows: Vec<SweepRow>,
    pub table: String,
}

pub const SWEEP_HEADER: &str =
    "devices_per_side,device_count,acc_5ms,acc_10ms,acc_25ms,total_pulses";

/// Independent PCM training runs, one per device count, with shared seeds.
pub fn cmd_sweep_devices(cfg: &ExperimentConfig, out: &Path) -> Result<SweepReport> {
    let data = dataset_for(cfg, out)?;
    let prepared = prepare(cfg, &data.inputs)?;
    let trials: Vec<(usize, TrialOutcome)> = cfg
        .study
        .device_counts
        .par_iter()
        .map(|&n| run_trial(cfg, &data, &prepared, Backend::Pcm, n).map(|t| (n, t)))
        .collect::<Result<_>>()?;
    let rows: Vec<SweepRow> = trials
        .iter()
        .map(|(n, t)| {
            let last = t.log.last();
            SweepRow {
                devices_per_side: *n,
                device_count: t.array.as_ref().map_or(0, SynapseArray::device_count),
                final_acc: [last.acc_pct(0), last.acc_pct(1), last.acc_pct(2)],
                total_pulses: t.log.records.iter().map(|r| r.stats.pulses).sum(),
            }
        })
        .collect();
    let lines: Vec<String> = rows
        .iter()
        .map(|r| {
            format!(
                "{},{},{:.4},{:.4},{:.4},{}",
                r.devices_per_side,
                r.device_count,
                r.final_acc[0],
                r.final_acc[1],
                r.final_acc[2],
                r.total_pulses
            )
        })
        .collect();
    let table = table(cfg, SWEEP_HEADER, &lines)?;
    write_file(&out.join("sweep_devices.csv"), &table)?;
    if cfg.output.plots {
        let series: Vec<Series> = trials
            .iter()
            .map(|(n, t)| Series {
                label: format!("N={n}"),
                points: t
                    .log
                    .records
                    .iter()
                    .map(|r| (r.epoch as f64, r.acc_pct(2)))
                    .collect(),
            })
            .collect();
        let svg = line_chart(
            "Accuracy at 25 ms by devices per side",
            "epoch",
            "accuracy (%)",
            &series,
            Axis::Linear,
            Some((0.0, 100.0)),
        );
        write_file(&out.join("sweep_devices.svg"), &svg)?;
    }
    Ok(SweepReport { rows, table })
}

#[derive(Debug, Clone, PartialEq)]
pub struct DriftRow {
    /// Seconds since the end of training.
    pub t_e_s: f64,
    pub raw: [f64; 3],
    pub compensated: [f64; 3],
}

pub struct DriftReport {
    pub rows: Vec<DriftRow>,
    pub table: String,
}

pub const DRIFT_HEADER: &str =
    "t_e_s,raw_acc_5ms,raw_acc_10ms,raw_acc_25ms,comp_acc_5ms,comp_acc_10ms,comp_acc_25ms";

/// Evaluates a trained array at the configured read times after the snapshot,
/// with and without the global `t_e^nu` compensation.
pub fn cmd_drift_eval(cfg: &ExperimentConfig, out: &Path, snapshot: &Path) -> Result<DriftReport> {
    let (array, end_s) = SynapseArray::read_snapshot(snapshot)?;
    let data = dataset_for(cfg, out)?;
    drift_eval_array(cfg, out, &data, &array, end_s)
}

/// Drift study on an in-memory array whose training ended at `end_s`.
pub fn drift_eval_array(
    cfg: &ExperimentConfig,
    out: &Path,
    data: &Dataset,
    array: &SynapseArray,
    end_s: f64,
) -> Result<DriftReport> {
    if array.inputs() != data.inputs.channel_count()
        || array.outputs() != data.targets.channel_count()
    {
        return Err(Error::Shape(format!(
            "snapshot is {}x{}, dataset {}x{}",
            array.inputs(),
            array.outputs(),
            data.inputs.channel_count(),
            data.targets.channel_count()
        )));
    }
    let prepared = prepare(cfg, &data.inputs)?;
    let p = cfg.device.model;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.device.program_seed ^ 0x5eed);
    let mut times = cfg.study.drift_read_times_s.clone();
    for t in &cfg.study.rate_image_times_s {
        if !times.contains(t) {
            times.push(*t);
        }
    }
    times.sort_by(f64::total_cmp);

    let mut rows = Vec::new();
    let mut panels = Vec::new();
    for &te in &times {
        let w = array.read_weights(end_s + te, &p, &mut rng)?;
        let comp = compensate_drift(&w, te)?;
        let raw_obs = prepared.forward(&w, &cfg.neuron)?;
        let comp_obs = prepared.forward(&comp, &cfg.neuron)?;
        let raw = accuracy_bands(&data.targets, &raw_obs)?.map(|r| r.pct_or_zero());
        let compensated = accuracy_bands(&data.targets, &comp_obs)?.map(|r| r.pct_or_zero());
        if cfg.study.rate_image_times_s.contains(&te) {
            for (kind, obs) in [("raw", &raw_obs), ("comp", &comp_obs)] {
                let images = rate_images(cfg, obs)?;
                write_images(out, &format!("drift_te{te}_{kind}"), &images)?;
                panels.extend(
                    images
                        .into_iter()
                        .enumerate()
                        .map(|(k, i)| (format!("{kind} {te:e}s #{k}"), i)),
                );
            }
        }
        if cfg.study.drift_read_times_s.contains(&te) {
            rows.push(DriftRow {
                t_e_s: te,
                raw,
                compensated,
            });
        }
    }
    let lines: Vec<String> = rows
        .iter()
        .map(|r| {
            format!(
                "{},{:.4},{:.4},{:.4},{:.4},{:.4},{:.4}",
                r.t_e_s,
                r.raw[0],
                r.raw[1],
                r.raw[2],
                r.compensated[0],
                r.compensated[1],
                r.compensated[2]
            )
        })
        .collect();
    let table = table(cfg, DRIFT_HEADER, &lines)?;
    write_file(&out.join("drift_eval.csv"), &table)?;
    if cfg.output.plots {
        let series = vec![
            Series {
                label: "raw".into(),
                points: rows.iter().map(|r| (r.t_e_s, r.raw[2])).collect(),
            },
            Series {
                label: "compensated".into(),
                points: rows.iter().map(|r| (r.t_e_s, r.compensated[2])).collect(),
            },
        ];
        let svg = line_chart(
            "Accuracy at 25 ms after training",
            "time since training (s)",
            "accuracy (%)",
            &series,
            Axis::Log10,
            Some((0.0, 100.0)),
        );
        write_file(&out.join("drift_eval.svg"), &svg)?;
        write_file(
            &out.join("drift_rate.svg"),
            &heatmaps("Output rate images over time", &panels),
        )?;
    }
    Ok(DriftReport { rows, table })
}

#[derive(Debug, Clone, PartialEq)]
pub struct JitterRow {
    pub half_width_ms: f64,
    pub input_spikes: usize,
    pub correlation_mean: f64,
    pub correlation_histogram: Vec<usize>,
    pub final_acc: [f64; 3],
    /// Accuracy at 25 ms after every epoch.
    pub curve: Vec<f64>,
}

pub struct JitterReport {
    pub rows: Vec<JitterRow>,
    pub table: String,
}

pub const JITTER_HEADER: &str =
    "half_width_ms,input_spikes,correlation_mean,acc_5ms,acc_10ms,acc_25ms";

/// Trains on the original and jittered inputs and compares input correlation
/// with final accuracy.
pub fn cmd_jitter_eval(cfg: &ExperimentConfig, out: &Path) -> Result<JitterReport> {
    let data = dataset_for(cfg, out)?;
    let grid = cfg.time_grid()?;
    let rows: Vec<JitterRow> = cfg
        .study
        .jitter_half_widths_ms
        .par_iter()
        .map(|&h| -> Result<JitterRow> {
            let inputs = jitter_raster(&data.inputs, h, cfg.study.jitter_seed)?;
            let corr = smoothed_correlation(&inputs, cfg.study.correlation_sigma_ms, &grid)?;
            let prepared = prepare(cfg, &inputs)?;
            let jittered = Dataset {
                inputs,
                targets: data.targets.clone(),
            };
            let trial = run_trial(
                cfg,
                &jittered,
                &prepared,
                cfg.backend,
                cfg.device.devices_per_side,
            )?;
            let last = trial.log.last();
            Ok(JitterRow {
                half_width_ms: h,
                input_spikes: jittered.inputs.total_spikes(),
                correlation_mean: corr.mean,
                correlation_histogram: corr.histogram,
                final_acc: [last.acc_pct(0), last.acc_pct(1), last.acc_pct(2)],
                curve: trial.log.records.iter().map(|r| r.acc_pct(2)).collect(),
            })
        })
        .collect::<Result<_>>()?;

    let lines: Vec<String> = rows
        .iter()
        .map(|r| {
            format!(
                "{},{},{:.6},{:.4},{:.4},{:.4}",
                r.half_width_ms,
                r.input_spikes,
                r.correlation_mean,
                r.final_acc[0],
                r.final_acc[1],
                r.final_acc[2]
            )
        })
        .collect();
    let summary = table(cfg, JITTER_HEADER, &lines)?;
    write_file(&out.join("jitter_eval.csv"), &summary)?;

    let header = std::iter::once("epoch".to_string())
        .chain(
            rows.iter()
                .map(|r| format!("acc_25ms_hw{}", r.half_width_ms)),
        )
        .collect::<Vec<_>>()
        .join(",");
    let epochs = rows.first().map_or(0, |r| r.curve.len());
    let curve_lines: Vec<String> = (0..epochs)
        .map(|e| {
            std::iter::once(e.to_string())
                .chain(rows.iter().map(|r| format!("{:.4}", r.curve[e])))
                .collect::<Vec<_>>()
                .join(",")
        })
        .collect();
    write_file(
        &out.join("jitter_curves.csv"),
        &table(cfg, &header, &curve_lines)?,
    )?;

    let hist_header = std::iter::once("bin_lo,bin_hi".to_string())
        .chain(rows.iter().map(|r| format!("pairs_hw{}", r.half_width_ms)))
        .collect::<Vec<_>>()
        .join(",");
    let width = 2.0 / HISTOGRAM_BINS as f64;
    let hist_lines: Vec<String> = (0..HISTOGRAM_BINS)
        .map(|b| {
            let lo = -1.0 + b as f64 * width;
            std::iter::once(format!("{lo:.2},{:.2}", lo + width))
                .chain(rows.iter().map(|r| r.correlation_histogram[b].to_string()))
                .collect::<Vec<_>>()
                .join(",")
        })
        .collect();
    write_file(
        &out.join("jitter_correlation_histogram.csv"),
        &table(cfg, &hist_header, &hist_lines)?,
    )?;

    if cfg.output.plots {
        let series: Vec<Series> = rows
            .iter()
            .map(|r| Series {
                label: format!("jitter ±{} ms", r.half_width_ms),
                points: r
                    .curve
                    .iter()
                    .enumerate()
                    .map(|(e, &a)| (e as f64, a))
                    .collect(),
            })
            .collect();
        let svg = line_chart(
            "Accuracy at 25 ms with jittered inputs",
            "epoch",
            "accuracy (%)",
            &series,
            Axis::Linear,
            Some((0.0, 100.0)),
        );
        write_file(&out.join("jitter_eval.svg"), &svg)?;
    }
    Ok(JitterReport {
        rows,
        table: summary,
    })
}
