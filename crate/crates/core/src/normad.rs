//! NormAD supervised training of a single layer of LIF neurons.
//!
//! Per epoch the network is presented the whole input pattern once. Weight
//! changes are accumulated only at steps where desired and observed spikes
//! disagree,
//!
//! ```text
//! dW_ij = eta * sum_{t : e_j(t) != 0} e_j(t) * dhat_i(t) / |dhat(t)|_2 * dt
//! ```
//!
//! where `dhat_i = S_i * I_ker * h_LIF` is the input trace filtered through the
//! synaptic kernel and the approximate LIF impulse response, and programmed
//! once at the end of the epoch.

use ndarray::{Array2, ArrayView2};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::array::{fp_apply_updates, FpWeightMatrix, SynapseArray, UpdateStats, WEIGHT_RANGE};
use crate::error::{Error, Result};
use crate::lif::{lif_spike_steps, LifParams};
use crate::metrics::{accuracy_bands, AccuracyReport};
use crate::pcm::PcmModelParams;
use crate::spike::{convolve_raster, KernelParams, SpikeRaster, SpikeTrain, TimeGrid};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainerConfig {
    /// Learning rate in weight units per normalized error unit per ms.
    pub eta: f64,
    pub epochs: usize,
    /// Simulated wall-clock duration of one epoch, in seconds.
    pub epoch_wall_time_s: f64,
}

impl Default for TrainerConfig {
    fn default() -> Self {
        Self {
            eta: 5000.0,
            epochs: 100,
            epoch_wall_time_s: 6.3,
        }
    }
}

impl TrainerConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.eta >= 0.0 && self.eta.is_finite())
            || self.epochs == 0
            || !(self.epoch_wall_time_s > 0.0)
        {
            return Err(Error::InvalidParam(format!(
                "invalid trainer config {self:?}"
            )));
        }
        Ok(())
    }
}

/// Signed spike-error events per output neuron: `+1` where a spike was
/// desired but not produced, `-1` where one was produced but not desired.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ErrorSignal {
    pub events: Vec<Vec<(usize, i8)>>,
}

impl ErrorSignal {
    pub fn event_count(&self) -> usize {
        self.events.iter().map(Vec::len).sum()
    }

    pub fn is_empty(&self) -> bool {
        self.event_count() == 0
    }

    /// Dense `outputs x steps` version, zero where there is no event.
    pub fn to_dense(&self, steps: usize) -> Array2<f64> {
        let mut out = Array2::zeros((self.events.len(), steps));
        for (j, ev) in self.events.iter().enumerate() {
            for &(n, s) in ev {
                out[[j, n]] = s as f64;
            }
        }
        out
    }
}

pub fn compute_error(desired: &SpikeRaster, observed: &SpikeRaster) -> Result<ErrorSignal> {
    if desired.channel_count() != observed.channel_count() || desired.grid() != observed.grid() {
        return Err(Error::Shape(
            "desired and observed rasters differ in shape".into(),
        ));
    }
    let events = desired
        .trains()
        .iter()
        .zip(observed.trains())
        .map(|(d, o)| symmetric_difference(d.steps(), o.steps()))
        .collect();
    Ok(ErrorSignal { events })
}

fn symmetric_difference(desired: &[usize], observed: &[usize]) -> Vec<(usize, i8)> {
    let (mut i, mut j) = (0, 0);
    let mut out = Vec::new();
    while i < desired.len() || j < observed.len() {
        match (desired.get(i), observed.get(j)) {
            (Some(&a), Some(&b)) if a == b => {
                i += 1;
                j += 1;
            }
            (Some(&a), Some(&b)) if a < b => {
                out.push((a, 1));
                i += 1;
            }
            (Some(_), Some(&b)) => {
                out.push((b, -1));
                j += 1;
            }
            (Some(&a), None) => {
                out.push((a, 1));
                i += 1;
            }
            (None, Some(&b)) => {
                out.push((b, -1));
                j += 1;
            }
            (None, None) => unreachable!(),
        }
    }
    out
}

/// Filtered input traces, `inputs x steps`, plus the per-step Euclidean norm
/// across inputs.
#[derive(Debug, Clone)]
pub struct DHat {
    pub traces: Array2<f64>,
    pub norms: Vec<f64>,
}

/// `S * I_ker * h_LIF`. The first stage is the kernel superposition used by
/// the forward pass; the second is the exponential impulse response applied
/// as a discrete convolution scaled by `dt`, evaluated recursively.
pub fn compute_dhat(inputs: &SpikeRaster, k: &KernelParams, lif: &LifParams) -> DHat {
    let conv = convolve_raster(inputs, k);
    dhat_from_conv(conv.view(), lif, inputs.grid())
}

fn dhat_from_conv(conv: ArrayView2<f64>, lif: &LifParams, grid: &TimeGrid) -> DHat {
    let dt = grid.dt_ms();
    let decay = (-dt / lif.tau_l_ms()).exp();
    let gain = dt / lif.cm_pf;
    let mut traces = Array2::zeros(conv.dim());
    for (src, mut dst) in conv.rows().into_iter().zip(traces.rows_mut()) {
        let mut acc = 0.0;
        for (x, y) in src.iter().zip(dst.iter_mut()) {
            acc = acc * decay + gain * x;
            *y = acc;
        }
    }
    let norms = traces
        .columns()
        .into_iter()
        .map(|c| c.iter().map(|v| v * v).sum::<f64>().sqrt())
        .collect();
    DHat { traces, norms }
}

/// NormAD weight change for one epoch.
pub fn normad_delta_w(
    e: &ErrorSignal,
    dhat: &DHat,
    eta: f64,
    grid: &TimeGrid,
) -> Result<FpWeightMatrix> {
    let (inputs, steps) = dhat.traces.dim();
    if steps != grid.steps() || dhat.norms.len() != steps {
        return Err(Error::Shape("dhat does not match the grid".into()));
    }
    let outputs = e.events.len();
    let mut dw = Array2::zeros((inputs, outputs));
    let scale = eta * grid.dt_ms();
    for (j, events) in e.events.iter().enumerate() {
        for &(n, sign) in events {
            if n >= steps {
                return Err(Error::Shape(format!(
                    "error event at step {n} beyond the grid"
                )));
            }
            let norm = dhat.norms[n];
            if norm == 0.0 {
                continue;
            }
            let f = scale * sign as f64 / norm;
            for i in 0..inputs {
                dw[[i, j]] += f * dhat.traces[[i, n]];
            }
        }
    }
    Ok(FpWeightMatrix(dw))
}

/// Input-side quantities that stay fixed across epochs.
#[derive(Debug, Clone)]
pub struct PreparedInputs {
    grid: TimeGrid,
    /// Kernel waveforms, `inputs x steps`.
    conv: Array2<f64>,
    dhat: DHat,
}

impl PreparedInputs {
    pub fn new(inputs: &SpikeRaster, k: &KernelParams, lif: &LifParams) -> Result<Self> {
        k.validate()?;
        lif.validate()?;
        let conv = convolve_raster(inputs, k);
        let dhat = dhat_from_conv(conv.view(), lif, inputs.grid());
        Ok(Self {
            grid: *inputs.grid(),
            conv,
            dhat,
        })
    }

    pub fn inputs(&self) -> usize {
        self.conv.nrows()
    }

    pub fn grid(&self) -> &TimeGrid {
        &self.grid
    }

    pub fn dhat(&self) -> &DHat {
        &self.dhat
    }

    /// Synaptic currents, `outputs x steps`.
    pub fn currents(&self, w: &FpWeightMatrix) -> Result<Array2<f64>> {
        if w.inputs() != self.inputs() {
            return Err(Error::Shape(format!(
                "weights have {} inputs, raster has {} channels",
                w.inputs(),
                self.inputs()
            )));
        }
        Ok(w.0.t().dot(&self.conv))
    }

    pub fn forward(&self, w: &FpWeightMatrix, lif: &LifParams) -> Result<SpikeRaster> {
        let currents = self.currents(w)?;
        let grid = self.grid;
        let trains = (0..currents.nrows())
            .into_par_iter()
            .map(|j| {
                let row = currents.row(j);
                let row = row.as_slice().expect("row-major product");
                lif_spike_steps(row, lif, &grid).map(|s| SpikeTrain::from_steps(j, s))
            })
            .collect::<Result<Vec<_>>>()?;
        SpikeRaster::from_trains(grid, trains)
    }
}

/// Output spikes for `inputs` driven through weights `w`.
pub fn forward_pass(
    inputs: &SpikeRaster,
    w: &FpWeightMatrix,
    lif: &LifParams,
    k: &KernelParams,
) -> Result<SpikeRaster> {
    PreparedInputs::new(inputs, k, lif)?.forward(w, lif)
}

/// Where the synaptic weights live during training.
pub trait WeightBackend {
    fn read(&mut self, now_s: f64) -> Result<FpWeightMatrix>;
    fn apply(&mut self, dw: &FpWeightMatrix, now_s: f64) -> Result<UpdateStats>;
}

/// Full-precision reference weights.
#[derive(Debug, Clone)]
pub struct FpBackend {
    pub weights: FpWeightMatrix,
}

impl WeightBackend for FpBackend {
    fn read(&mut self, _now_s: f64) -> Result<FpWeightMatrix> {
        Ok(self.weights.clone())
    }

    fn apply(&mut self, dw: &FpWeightMatrix, _now_s: f64) -> Result<UpdateStats> {
        let next = fp_apply_updates(&self.weights, dw)?;
        let mut stats = UpdateStats::default();
        for (&d, &w) in dw.0.iter().zip(self.weights.0.iter()) {
            if d != 0.0 {
                stats.pulses += 1;
                if (w + d).abs() > WEIGHT_RANGE {
                    stats.clips += 1;
                }
            }
        }
        self.weights = next;
        Ok(stats)
    }
}

/// Differential multi-PCM array with its own programming rng.
#[derive(Debug, Clone)]
pub struct PcmBackend {
    pub array: SynapseArray,
    pub params: PcmModelParams,
    rng: ChaCha8Rng,
}

impl PcmBackend {
    pub fn new(array: SynapseArray, params: PcmModelParams, seed: u64) -> Self {
        Self {
            array,
            params,
            rng: ChaCha8Rng::seed_from_u64(seed),
        }
    }
}

impl WeightBackend for PcmBackend {
    fn read(&mut self, now_s: f64) -> Result<FpWeightMatrix> {
        self.array.read_weights(now_s, &self.params, &mut self.rng)
    }

    fn apply(&mut self, dw: &FpWeightMatrix, now_s: f64) -> Result<UpdateStats> {
        self.array
            .apply_updates(dw, now_s, &self.params, &mut self.rng)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct EpochRecord {
    /// Number of completed weight updates before this evaluation.
    pub epoch: usize,
    pub accuracy: [AccuracyReport; 3],
    /// Statistics of the update that produced these weights.
    pub stats: UpdateStats,
    pub wall_time_s: f64,
}

impl EpochRecord {
    pub fn acc_pct(&self, band: usize) -> f64 {
        self.accuracy[band].pct_or_zero()
    }
}

#[derive(Debug, Clone)]
pub struct TrainingLog {
    pub records: Vec<EpochRecord>,
    pub final_observed: SpikeRaster,
    pub final_weights: FpWeightMatrix,
    /// Wall-clock time of the final evaluation.
    pub end_time_s: f64,
}

impl TrainingLog {
    pub fn last(&self) -> &EpochRecord {
        self.records
            .last()
            .expect("training logs at least one record")
    }

    pub fn final_acc_25(&self) -> f64 {
        self.last().acc_pct(2)
    }

    pub const HEADER: &'static str =
        "epoch,acc_5ms,acc_10ms,acc_25ms,pulses,skips,clips,wall_time_s";

    /// Comma-separated table; `preamble` lines are emitted first as `# ...`.
    pub fn to_csv(&self, preamble: &[String]) -> String {
        let mut out = String::new();
        for p in preamble {
            out.push_str("# ");
            out.push_str(p);
            out.push('\n');
        }
        out.push_str(Self::HEADER);
        out.push('\n');
        for r in &self.records {
            out.push_str(&format!(
                "{},{:.4},{:.4},{:.4},{},{},{},{}\n",
                r.epoch,
                r.acc_pct(0),
                r.acc_pct(1),
                r.acc_pct(2),
                r.stats.pulses,
                r.stats.skips,
                r.stats.clips,
                r.wall_time_s
            ));
        }
        out
    }
}

/// Runs `cfg.epochs` NormAD epochs. Record `k` evaluates the weights after
/// `k` updates, read at wall-clock `k * epoch_wall_time`; the update of epoch
/// `k` is programmed at that same time.
pub fn train(
    prepared: &PreparedInputs,
    targets: &SpikeRaster,
    backend: &mut dyn WeightBackend,
    cfg: &TrainerConfig,
    lif: &LifParams,
) -> Result<TrainingLog> {
    cfg.validate()?;
    if targets.grid() != prepared.grid() {
        return Err(Error::Shape(
            "targets and inputs use different grids".into(),
        ));
    }
    let mut records = Vec::with_capacity(cfg.epochs + 1);
    let mut stats = UpdateStats::default();
    for epoch in 0..=cfg.epochs {
        let now = epoch as f64 * cfg.epoch_wall_time_s;
        let w = backend.read(now)?;
        if w.outputs() != targets.channel_count() {
            return Err(Error::Shape(format!(
                "weights have {} outputs, targets {} channels",
                w.outputs(),
                targets.channel_count()
            )));
        }
        let observed = prepared.forward(&w, lif)?;
        records.push(EpochRecord {
            epoch,
            accuracy: accuracy_bands(targets, &observed)?,
            stats,
            wall_time_s: now,
        });
        if epoch == cfg.epochs {
            return Ok(TrainingLog {
                records,
                final_observed: observed,
                final_weights: w,
                end_time_s: now,
            });
        }
        let err = compute_error(targets, &observed)?;
        let dw = normad_delta_w(&err, prepared.dhat(), cfg.eta, prepared.grid())?;
        stats = backend.apply(&dw, now)?;
    }
    unreachable!("loop returns on the last epoch")
}
