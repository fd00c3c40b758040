//! Differential multi-PCM crossbar and the full-precision reference weights.
//!
//! Each synapse holds `N` devices on the positive side and `N` on the negative
//! side; its weight is `beta * (sum Gp - sum Gn)`. Updates always potentiate:
//! a positive change programs one `Gp` device, a negative change one `Gn`
//! device, chosen by a per-side cyclic cursor.

use std::fmt::Write as _;
use std::path::Path;

use ndarray::Array2;
use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Uniform};

use crate::error::{Error, Result};
use crate::pcm::{map_dg_to_amplitude, program_pulse, read_conductance, PcmDevice, PcmModelParams};

/// Half-width of the reference weight range.
pub const WEIGHT_RANGE: f64 = 6000.0;

/// Effective drift exponent used for array-level compensation.
pub const COMPENSATION_NU: f64 = 0.035;

/// Bounds of the initial conductance distribution.
pub const INIT_G_RANGE_US: (f64, f64) = (0.1, 1.0);

/// Dense weight matrix indexed `[input, output]`.
#[derive(Debug, Clone, PartialEq)]
pub struct FpWeightMatrix(pub Array2<f64>);

impl FpWeightMatrix {
    pub fn zeros(inputs: usize, outputs: usize) -> Self {
        Self(Array2::zeros((inputs, outputs)))
    }

    pub fn inputs(&self) -> usize {
        self.0.nrows()
    }

    pub fn outputs(&self) -> usize {
        self.0.ncols()
    }

    pub fn is_finite(&self) -> bool {
        self.0.iter().all(|x| x.is_finite())
    }

    pub fn scaled(&self, factor: f64) -> Self {
        Self(&self.0 * factor)
    }

    /// Comma-separated grid preceded by a `rows,cols,beta` line. Use `beta = 0`
    /// for weights without a conductance mapping.
    pub fn to_csv(&self, beta: f64) -> String {
        let mut out = format!("{},{},{}\n", self.inputs(), self.outputs(), beta);
        for row in self.0.rows() {
            let line: Vec<String> = row.iter().map(|x| x.to_string()).collect();
            out.push_str(&line.join(","));
            out.push('\n');
        }
        out
    }
}

/// Reference backend update: add and clip to the weight range.
pub fn fp_apply_updates(w: &FpWeightMatrix, dw: &FpWeightMatrix) -> Result<FpWeightMatrix> {
    if w.0.dim() != dw.0.dim() {
        return Err(Error::Shape(format!(
            "weights {:?} vs update {:?}",
            w.0.dim(),
            dw.0.dim()
        )));
    }
    let mut out = &w.0 + &dw.0;
    out.mapv_inplace(|x| x.clamp(-WEIGHT_RANGE, WEIGHT_RANGE));
    Ok(FpWeightMatrix(out))
}

/// Post-training drift compensation: scale every weight by `t_e^0.035`.
pub fn compensate_drift(w: &FpWeightMatrix, t_e_s: f64) -> Result<FpWeightMatrix> {
    compensate_drift_with(w, t_e_s, COMPENSATION_NU)
}

pub fn compensate_drift_with(w: &FpWeightMatrix, t_e_s: f64, nu: f64) -> Result<FpWeightMatrix> {
    if !(t_e_s >= 1.0) {
        return Err(Error::InvalidParam(format!(
            "compensation needs elapsed time >= 1 s, got {t_e_s}"
        )));
    }
    Ok(w.scaled(t_e_s.powf(nu)))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Side {
    Plus,
    Minus,
}

impl Side {
    fn tag(self) -> char {
        match self {
            Side::Plus => 'p',
            Side::Minus => 'n',
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct DifferentialSynapse {
    pub gp: Vec<PcmDevice>,
    pub gn: Vec<PcmDevice>,
    pub gp_cursor: usize,
    pub gn_cursor: usize,
}

impl DifferentialSynapse {
    pub fn side(&self, side: Side) -> &[PcmDevice] {
        match side {
            Side::Plus => &self.gp,
            Side::Minus => &self.gn,
        }
    }

    /// Programs the device under the side's cursor and advances the cursor.
    fn pulse<R: Rng + ?Sized>(
        &mut self,
        side: Side,
        amp_ua: f64,
        now_s: f64,
        p: &PcmModelParams,
        rng: &mut R,
    ) -> Result<()> {
        let (devs, cursor) = match side {
            Side::Plus => (&mut self.gp, &mut self.gp_cursor),
            Side::Minus => (&mut self.gn, &mut self.gn_cursor),
        };
        devs[*cursor] = program_pulse(&devs[*cursor], amp_ua, now_s, p, rng)?;
        *cursor = (*cursor + 1) % devs.len();
        Ok(())
    }

    fn side_sum<R: Rng + ?Sized>(
        devs: &[PcmDevice],
        now_s: f64,
        p: &PcmModelParams,
        rng: &mut R,
    ) -> Result<f64> {
        devs.iter()
            .map(|d| read_conductance(d, now_s, p, rng))
            .sum()
    }
}

/// Per-call programming statistics.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct UpdateStats {
    pub pulses: usize,
    /// Nonzero updates dropped because they fall below the smallest pulse.
    pub skips: usize,
    /// Updates larger than the largest pulse, applied as one max pulse.
    pub clips: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SynapseArray {
    inputs: usize,
    outputs: usize,
    devices_per_side: usize,
    beta: f64,
    synapses: Vec<DifferentialSynapse>,
}

/// Weight per µS that maps `N` devices' full differential swing onto the
/// reference weight range.
pub fn default_beta(devices_per_side: usize, p: &PcmModelParams) -> f64 {
    WEIGHT_RANGE / (devices_per_side as f64 * p.g_range_us())
}

/// Builds an array with every device at `G0 ~ U[0.1, 1.0]` µS, `tp = -1 s`
/// and `t0 = 0 s`.
pub fn init_array(
    inputs: usize,
    outputs: usize,
    devices_per_side: usize,
    p: &PcmModelParams,
    seed: u64,
) -> Result<SynapseArray> {
    if devices_per_side == 0 {
        return Err(Error::InvalidParam(
            "need at least one device per side".into(),
        ));
    }
    p.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let g = Uniform::new_inclusive(INIT_G_RANGE_US.0, INIT_G_RANGE_US.1).expect("static bounds");
    let device = |rng: &mut ChaCha8Rng| PcmDevice {
        g0_us: g.sample(rng),
        t0_s: 0.0,
        tp_s: -1.0,
        nu: p.sample_nu(rng),
    };
    let synapses = (0..inputs * outputs)
        .map(|_| DifferentialSynapse {
            gp: (0..devices_per_side).map(|_| device(&mut rng)).collect(),
            gn: (0..devices_per_side).map(|_| device(&mut rng)).collect(),
            gp_cursor: 0,
            gn_cursor: 0,
        })
        .collect();
    Ok(SynapseArray {
        inputs,
        outputs,
        devices_per_side,
        beta: default_beta(devices_per_side, p),
        synapses,
    })
}

impl SynapseArray {
    pub fn inputs(&self) -> usize {
        self.inputs
    }

    pub fn outputs(&self) -> usize {
        self.outputs
    }

    pub fn devices_per_side(&self) -> usize {
        self.devices_per_side
    }

    pub fn device_count(&self) -> usize {
        self.synapses.len() * 2 * self.devices_per_side
    }

    pub fn beta(&self) -> f64 {
        self.beta
    }

    pub fn set_beta(&mut self, beta: f64) -> Result<()> {
        if !(beta > 0.0 && beta.is_finite()) {
            return Err(Error::InvalidParam(format!("beta must be > 0, got {beta}")));
        }
        self.beta = beta;
        Ok(())
    }

    pub fn synapse(&self, input: usize, output: usize) -> &DifferentialSynapse {
        &self.synapses[input * self.outputs + output]
    }

    pub fn synapse_mut(&mut self, input: usize, output: usize) -> &mut DifferentialSynapse {
        &mut self.synapses[input * self.outputs + output]
    }

    pub fn devices(&self) -> impl Iterator<Item = &PcmDevice> {
        self.synapses.iter().flat_map(|s| s.gp.iter().chain(&s.gn))
    }

    pub fn devices_mut(&mut self) -> impl Iterator<Item = &mut PcmDevice> {
        self.synapses
            .iter_mut()
            .flat_map(|s| s.gp.iter_mut().chain(s.gn.iter_mut()))
    }

    /// `W = beta * (sum Gp - sum Gn)` for every synapse, read at `now`.
    pub fn read_weights<R: Rng + ?Sized>(
        &self,
        now_s: f64,
        p: &PcmModelParams,
        rng: &mut R,
    ) -> Result<FpWeightMatrix> {
        let mut w = Array2::zeros((self.inputs, self.outputs));
        for (syn, wv) in self.synapses.iter().zip(w.iter_mut()) {
            let gp = DifferentialSynapse::side_sum(&syn.gp, now_s, p, rng)?;
            let gn = DifferentialSynapse::side_sum(&syn.gn, now_s, p, rng)?;
            *wv = self.beta * (gp - gn);
        }
        Ok(FpWeightMatrix(w))
    }

    /// Blind single-pulse programming of a desired weight change.
    pub fn apply_updates<R: Rng + ?Sized>(
        &mut self,
        dw: &FpWeightMatrix,
        now_s: f64,
        p: &PcmModelParams,
        rng: &mut R,
    ) -> Result<UpdateStats> {
        if dw.0.dim() != (self.inputs, self.outputs) {
            return Err(Error::Shape(format!(
                "update {:?} vs array ({}, {})",
                dw.0.dim(),
                self.inputs,
                self.outputs
            )));
        }
        if !dw.is_finite() {
            return Err(Error::NonFinite("weight update"));
        }
        let mut stats = UpdateStats::default();
        for (syn, &d) in self.synapses.iter_mut().zip(dw.0.iter()) {
            if d == 0.0 {
                continue;
            }
            let dg = d.abs() / self.beta;
            let Some(amp) = map_dg_to_amplitude(dg, p)? else {
                stats.skips += 1;
                continue;
            };
            if dg > p.dg_max_us {
                stats.clips += 1;
            }
            let side = if d > 0.0 { Side::Plus } else { Side::Minus };
            syn.pulse(side, amp, now_s, p, rng)?;
            stats.pulses += 1;
        }
        Ok(stats)
    }

    /// Serializes every device and cursor. `time_s` records the wall-clock
    /// time the snapshot was taken at.
    pub fn snapshot_text(&self, time_s: f64) -> String {
        let mut out = String::with_capacity(self.device_count() * 48);
        let _ = writeln!(
            out,
            "pcm-snapshot rows={} cols={} devices_per_side={} beta={} time_s={}",
            self.inputs, self.outputs, self.devices_per_side, self.beta, time_s
        );
        for r in 0..self.inputs {
            for c in 0..self.outputs {
                let syn = self.synapse(r, c);
                for side in [Side::Plus, Side::Minus] {
                    for (slot, d) in syn.side(side).iter().enumerate() {
                        let _ = writeln!(
                            out,
                            "{r},{c},{},{slot},{},{},{},{}",
                            side.tag(),
                            d.g0_us,
                            d.t0_s,
                            d.tp_s,
                            d.nu
                        );
                    }
                }
            }
        }
        out.push_str("cursors\n");
        for r in 0..self.inputs {
            for c in 0..self.outputs {
                let syn = self.synapse(r, c);
                let _ = writeln!(out, "{r},{c},{},{}", syn.gp_cursor, syn.gn_cursor);
            }
        }
        out
    }

    /// Inverse of [`SynapseArray::snapshot_text`]; returns the array and the
    /// recorded time.
    pub fn from_snapshot_text(text: &str, origin: &str) -> Result<(SynapseArray, f64)> {
        let mut lines = text.lines().enumerate().map(|(i, l)| (i + 1, l));
        let (_, header) = lines
            .next()
            .ok_or_else(|| Error::parse(origin, 1, "empty snapshot"))?;
        let mut fields = header.split_whitespace();
        if fields.next() != Some("pcm-snapshot") {
            return Err(Error::parse(origin, 1, "missing 'pcm-snapshot' header"));
        }
        let (mut rows, mut cols, mut n, mut beta, mut time) = (None, None, None, None, None);
        for tok in fields {
            let (k, v) = tok
                .split_once('=')
                .ok_or_else(|| Error::parse(origin, 1, format!("bad header token '{tok}'")))?;
            let bad = || Error::parse(origin, 1, format!("bad value in '{tok}'"));
            match k {
                "rows" => rows = Some(v.parse::<usize>().map_err(|_| bad())?),
                "cols" => cols = Some(v.parse::<usize>().map_err(|_| bad())?),
                "devices_per_side" => n = Some(v.parse::<usize>().map_err(|_| bad())?),
                "beta" => beta = Some(v.parse::<f64>().map_err(|_| bad())?),
                "time_s" => time = Some(v.parse::<f64>().map_err(|_| bad())?),
                _ => return Err(Error::parse(origin, 1, format!("unknown header key '{k}'"))),
            }
        }
        let missing = |what: &str| Error::parse(origin, 1, format!("header lacks {what}"));
        let rows = rows.ok_or_else(|| missing("rows"))?;
        let cols = cols.ok_or_else(|| missing("cols"))?;
        let n = n.ok_or_else(|| missing("devices_per_side"))?;
        let beta = beta.ok_or_else(|| missing("beta"))?;
        let time = time.ok_or_else(|| missing("time_s"))?;
        if n == 0 || !(beta > 0.0) {
            return Err(Error::parse(
                origin,
                1,
                "devices_per_side and beta must be positive",
            ));
        }

        let mut last_line = 1;
        let mut next = |expect: &str| -> Result<(usize, &str)> {
            match lines.next() {
                Some((no, l)) => {
                    last_line = no;
                    Ok((no, l))
                }
                None => Err(Error::parse(
                    origin,
                    last_line + 1,
                    format!("unexpected end of file, expected {expect}"),
                )),
            }
        };

        let mut synapses = Vec::with_capacity(rows * cols);
        for r in 0..rows {
            for c in 0..cols {
                let mut syn = DifferentialSynapse {
                    gp: Vec::with_capacity(n),
                    gn: Vec::with_capacity(n),
                    gp_cursor: 0,
                    gn_cursor: 0,
                };
                for side in [Side::Plus, Side::Minus] {
                    for slot in 0..n {
                        let (no, line) = next("a device line")?;
                        let f: Vec<&str> = line.split(',').collect();
                        if f.len() != 8 {
                            return Err(Error::parse(
                                origin,
                                no,
                                "expected 8 comma-separated fields",
                            ));
                        }
                        let key_ok = f[0].parse() == Ok(r)
                            && f[1].parse() == Ok(c)
                            && f[2] == side.tag().to_string()
                            && f[3].parse() == Ok(slot);
                        if !key_ok {
                            return Err(Error::parse(
                                origin,
                                no,
                                format!("expected device {r},{c},{},{slot}", side.tag()),
                            ));
                        }
                        let num = |s: &str| {
                            s.parse::<f64>()
                                .map_err(|_| Error::parse(origin, no, format!("bad number '{s}'")))
                        };
                        let d = PcmDevice {
                            g0_us: num(f[4])?,
                            t0_s: num(f[5])?,
                            tp_s: num(f[6])?,
                            nu: num(f[7])?,
                        };
                        match side {
                            Side::Plus => syn.gp.push(d),
                            Side::Minus => syn.gn.push(d),
                        }
                    }
                }
                synapses.push(syn);
            }
        }
        let (no, marker) = next("the 'cursors' section")?;
        if marker.trim() != "cursors" {
            return Err(Error::parse(origin, no, "expected 'cursors'"));
        }
        for syn in synapses.iter_mut() {
            let (no, line) = next("a cursor line")?;
            let f: Vec<usize> = line
                .split(',')
                .map(|s| s.parse::<usize>())
                .collect::<std::result::Result<_, _>>()
                .map_err(|_| Error::parse(origin, no, "bad cursor line"))?;
            if f.len() != 4 || f[2] >= n || f[3] >= n {
                return Err(Error::parse(origin, no, "bad cursor line"));
            }
            syn.gp_cursor = f[2];
            syn.gn_cursor = f[3];
        }
        Ok((
            SynapseArray {
                inputs: rows,
                outputs: cols,
                devices_per_side: n,
                beta,
                synapses,
            },
            time,
        ))
    }

    pub fn write_snapshot(&self, time_s: f64, path: &Path) -> Result<()> {
        std::fs::write(path, self.snapshot_text(time_s)).map_err(|e| Error::io(path, e))
    }

    pub fn read_snapshot(path: &Path) -> Result<(SynapseArray, f64)> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_snapshot_text(&text, &path.display().to_string())
    }
}
