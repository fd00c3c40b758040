//! Leaky integrate-and-fire dynamics on the simulation grid.
//!
//! Units: capacitance pF, conductance nS, potential mV, current pA, time ms.
//! With these, `pA / pF = mV / ms` and `nS * mV = pA`, so no conversion
//! factors appear in the update.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::spike::{SpikeTrain, TimeGrid};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct LifParams {
    pub cm_pf: f64,
    pub gl_ns: f64,
    pub el_mv: f64,
    /// Absolute threshold potential.
    pub vt_mv: f64,
    pub t_ref_ms: f64,
}

impl Default for LifParams {
    fn default() -> Self {
        Self {
            cm_pf: 300.0,
            gl_ns: 30.0,
            el_mv: -70.0,
            vt_mv: 20.0,
            t_ref_ms: 2.0,
        }
    }
}

impl LifParams {
    pub fn validate(&self) -> Result<()> {
        if !(self.cm_pf > 0.0 && self.gl_ns > 0.0 && self.t_ref_ms > 0.0) {
            return Err(Error::InvalidParam("LIF needs Cm, gL, t_ref > 0".into()));
        }
        if !(self.vt_mv > self.el_mv) {
            return Err(Error::InvalidParam("LIF needs VT > EL".into()));
        }
        Ok(())
    }

    /// Membrane time constant `Cm / gL` in ms.
    pub fn tau_m_ms(&self) -> f64 {
        self.cm_pf / self.gl_ns
    }

    /// Time constant of the approximate impulse response used by the
    /// learning rule, one tenth of the membrane time constant.
    pub fn tau_l_ms(&self) -> f64 {
        0.1 * self.tau_m_ms()
    }
}

/// Mutable per-neuron state carried across grid steps.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LifState {
    pub v_mv: f64,
    pub refractory_steps: usize,
}

impl LifState {
    pub fn rest(p: &LifParams) -> Self {
        Self {
            v_mv: p.el_mv,
            refractory_steps: 0,
        }
    }
}

#[derive(Debug, Clone)]
pub struct LifOutput {
    pub spikes: SpikeTrain,
    pub v_trace: Vec<f64>,
}

/// Forward-Euler integration of `Cm dV/dt = -gL (V - EL) + I(t)` from rest.
///
/// `V[n]` is advanced from `V[n-1]` using `I[n-1]`. A spike is recorded at
/// step `n` when `V[n] >= VT`; the potential is then reset to `EL` and held
/// there, ignoring input, for `t_ref`.
pub fn simulate_lif(current: &[f64], p: &LifParams, grid: &TimeGrid) -> Result<LifOutput> {
    let (spikes, v_trace) = run(current, p, grid, true)?;
    Ok(LifOutput {
        spikes: SpikeTrain::from_steps(0, spikes),
        v_trace,
    })
}

/// Same dynamics as [`simulate_lif`] without keeping the voltage trace.
pub fn lif_spike_steps(current: &[f64], p: &LifParams, grid: &TimeGrid) -> Result<Vec<usize>> {
    run(current, p, grid, false).map(|(s, _)| s)
}

fn run(
    current: &[f64],
    p: &LifParams,
    grid: &TimeGrid,
    trace: bool,
) -> Result<(Vec<usize>, Vec<f64>)> {
    if current.len() != grid.steps() {
        return Err(Error::Shape(format!(
            "current has {} samples, grid has {} steps",
            current.len(),
            grid.steps()
        )));
    }
    if current.iter().any(|x| !x.is_finite()) {
        return Err(Error::NonFinite("LIF input current"));
    }
    let dt = grid.dt_ms();
    let gain = dt / p.cm_pf;
    let ref_steps = grid.steps_for(p.t_ref_ms);
    let mut state = LifState::rest(p);
    let mut spikes = Vec::new();
    let mut v_trace = if trace {
        Vec::with_capacity(current.len())
    } else {
        Vec::new()
    };
    if trace && !current.is_empty() {
        v_trace.push(state.v_mv);
    }
    for n in 1..current.len() {
        if state.refractory_steps > 0 {
            state.refractory_steps -= 1;
            state.v_mv = p.el_mv;
        } else {
            let v = state.v_mv;
            state.v_mv = v + gain * (current[n - 1] - p.gl_ns * (v - p.el_mv));
            if state.v_mv >= p.vt_mv {
                spikes.push(n);
                state.v_mv = p.el_mv;
                state.refractory_steps = ref_steps;
            }
        }
        if trace {
            v_trace.push(state.v_mv);
        }
    }
    Ok((spikes, v_trace))
}

/// Approximate LIF impulse response `(1/Cm) exp(-t/tau_L) u(t)`.
pub fn lif_impulse_response(t_ms: f64, p: &LifParams) -> f64 {
    if t_ms < 0.0 {
        return 0.0;
    }
    (-t_ms / p.tau_l_ms()).exp() / p.cm_pf
}

#[cfg(test)]
mod tests {
    use super::*;

    fn grid() -> TimeGrid {
        TimeGrid::new(0.1, 200.0).unwrap()
    }

    #[test]
    fn zero_input_stays_at_rest() {
        let p = LifParams::default();
        let out = simulate_lif(&vec![0.0; 2000], &p, &grid()).unwrap();
        assert!(out.spikes.is_empty());
        assert!(out.v_trace.iter().all(|&v| v == p.el_mv));
    }

    #[test]
    fn first_spike_under_constant_drive() {
        let p = LifParams::default();
        let i = 3000.0;
        // closed form: t = -(Cm/gL) ln(1 - (VT-EL) gL / I)
        let t = -p.tau_m_ms() * (1.0 - (p.vt_mv - p.el_mv) * p.gl_ns / i).ln();
        assert!((t - 23.03).abs() < 0.01);
        let out = simulate_lif(&vec![i; 2000], &p, &grid()).unwrap();
        let first = out.spikes.times_ms(&grid())[0];
        assert!(
            (first - t).abs() <= 0.1 + 1e-9,
            "first spike {first} vs {t}"
        );
    }

    #[test]
    fn subthreshold_drive_never_fires() {
        let p = LifParams::default();
        // asymptote I/gL = 66.7 mV above rest, threshold gap is 90 mV
        assert!(2000.0 / p.gl_ns < p.vt_mv - p.el_mv);
        let g = TimeGrid::new(0.1, 1000.0).unwrap();
        let out = simulate_lif(&vec![2000.0; g.steps()], &p, &g).unwrap();
        assert!(out.spikes.is_empty());
    }

    #[test]
    fn subthreshold_matches_closed_form() {
        let p = LifParams::default();
        let g = TimeGrid::new(0.1, 100.0).unwrap();
        let i = 2000.0;
        let out = simulate_lif(&vec![i; g.steps()], &p, &g).unwrap();
        let n = g.steps_for(5.0 * p.tau_m_ms());
        let exact = p.el_mv + i / p.gl_ns * (1.0 - (-g.time_ms(n) / p.tau_m_ms()).exp());
        let rel = ((out.v_trace[n] - p.el_mv) - (exact - p.el_mv)).abs() / (exact - p.el_mv);
        assert!(rel < 5e-3);
    }

    #[test]
    fn refractory_spacing() {
        let p = LifParams::default();
        let out = simulate_lif(&vec![1e6; 2000], &p, &grid()).unwrap();
        let s = out.spikes.steps();
        assert!(s.len() > 10);
        for w in s.windows(2) {
            assert!(grid().time_ms(w[1] - w[0]) >= p.t_ref_ms);
        }
    }

    #[test]
    fn rejects_bad_input() {
        let p = LifParams::default();
        assert!(matches!(
            simulate_lif(&[0.0, f64::NAN], &p, &TimeGrid::new(0.1, 0.2).unwrap()),
            Err(Error::NonFinite(_))
        ));
        assert!(matches!(
            simulate_lif(&[0.0; 3], &p, &grid()),
            Err(Error::Shape(_))
        ));
    }

    #[test]
    fn impulse_response_values() {
        let p = LifParams::default();
        assert_eq!(p.tau_l_ms(), 1.0);
        assert_eq!(lif_impulse_response(-0.1, &p), 0.0);
        assert_eq!(lif_impulse_response(0.0, &p), 1.0 / 300.0);
        assert!((lif_impulse_response(1.0, &p) - (-1f64).exp() / 300.0).abs() < 1e-15);
    }
}
