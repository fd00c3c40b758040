//! Statistical model of a single phase-change memory cell.
//!
//! A device carries the conductance measured at its anchor time `t0`, the time
//! of its last programming pulse `tp` and a drift exponent `nu`. Reads follow
//! the power-law drift `G(t) = G0 * ((t - tp) / (t0 - tp))^-nu`; every
//! programming pulse re-anchors the drift and resamples `nu`.
//!
//! Partial-SET pulses increment the conductance by an amount that shrinks
//! linearly with the normalized state, plus additive Gaussian noise.
//! Conductances are in µS, currents in µA and times in seconds.

use rand::Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Bounds on a resampled drift exponent.
pub const NU_CLIP: (f64, f64) = (0.01, 0.06);

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PcmModelParams {
    pub g_min_us: f64,
    pub g_max_us: f64,
    pub amp_min_ua: f64,
    pub amp_max_ua: f64,
    pub dg_min_us: f64,
    pub dg_max_us: f64,
    pub sigma_pgm_us: f64,
    pub nu_mean: f64,
    pub nu_std: f64,
    pub read_noise_std_us: f64,
    /// Delay between a programming pulse and the read that anchors drift.
    pub read_gap_s: f64,
    /// Strength of the state dependence of the mean increment; 1 gives the
    /// full `1 - normalized state` factor, 0 a state-independent update.
    pub nonlinearity: f64,
}

impl Default for PcmModelParams {
    fn default() -> Self {
        Self {
            g_min_us: 0.1,
            g_max_us: 8.0,
            amp_min_ua: 40.0,
            amp_max_ua: 130.0,
            dg_min_us: 0.1,
            dg_max_us: 1.5,
            sigma_pgm_us: 0.3,
            nu_mean: 0.035,
            nu_std: 0.005,
            read_noise_std_us: 0.0,
            read_gap_s: 1.0,
            nonlinearity: 1.0,
        }
    }
}

impl PcmModelParams {
    pub fn validate(&self) -> Result<()> {
        let ok = self.g_min_us < self.g_max_us
            && self.dg_min_us < self.dg_max_us
            && self.amp_min_ua < self.amp_max_ua
            && self.sigma_pgm_us >= 0.0
            && self.nu_std >= 0.0
            && self.read_noise_std_us >= 0.0
            && self.read_gap_s > 0.0
            && (0.0..=1.0).contains(&self.nonlinearity);
        if !ok {
            return Err(Error::InvalidParam(format!(
                "inconsistent PCM parameters {self:?}"
            )));
        }
        Ok(())
    }

    pub fn g_range_us(&self) -> f64 {
        self.g_max_us - self.g_min_us
    }

    /// Noise-free drift-free parameter set, handy for algebraic checks.
    pub fn ideal() -> Self {
        Self {
            sigma_pgm_us: 0.0,
            nu_mean: 0.0,
            nu_std: 0.0,
            ..Self::default()
        }
    }

    /// Inverse of [`map_dg_to_amplitude`] on the amplitude window.
    pub fn amplitude_to_dg(&self, amp_ua: f64) -> f64 {
        let frac = (amp_ua - self.amp_min_ua) / (self.amp_max_ua - self.amp_min_ua);
        self.dg_min_us + frac * (self.dg_max_us - self.dg_min_us)
    }

    pub fn sample_nu<R: Rng + ?Sized>(&self, rng: &mut R) -> f64 {
        if self.nu_std == 0.0 {
            return self.nu_mean;
        }
        let nu = Normal::new(self.nu_mean, self.nu_std)
            .expect("validated std")
            .sample(rng);
        nu.clamp(NU_CLIP.0, NU_CLIP.1)
    }
}

/// Maps a desired positive conductance change onto a pulse amplitude.
///
/// Changes below `dg_min` are dropped (`Ok(None)`), changes above `dg_max`
/// saturate at the maximum amplitude.
pub fn map_dg_to_amplitude(dg_us: f64, p: &PcmModelParams) -> Result<Option<f64>> {
    if !(dg_us >= 0.0) {
        return Err(Error::InvalidParam(format!(
            "conductance change must be non-negative, got {dg_us}"
        )));
    }
    if dg_us < p.dg_min_us {
        return Ok(None);
    }
    let dg = dg_us.min(p.dg_max_us);
    let frac = (dg - p.dg_min_us) / (p.dg_max_us - p.dg_min_us);
    Ok(Some(p.amp_min_ua + frac * (p.amp_max_ua - p.amp_min_ua)))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PcmDevice {
    pub g0_us: f64,
    pub t0_s: f64,
    pub tp_s: f64,
    pub nu: f64,
}

impl PcmDevice {
    /// Drifted conductance at `now`, without read noise.
    pub fn conductance_at(&self, now_s: f64) -> Result<f64> {
        if now_s < self.t0_s {
            return Err(Error::ReadBeforeAnchor {
                now: now_s,
                t0: self.t0_s,
            });
        }
        if self.nu == 0.0 || now_s == self.t0_s {
            return Ok(self.g0_us);
        }
        let ratio = (now_s - self.tp_s) / (self.t0_s - self.tp_s);
        Ok(self.g0_us * ratio.powf(-self.nu))
    }
}

/// Reads a device at `now`, adding Gaussian read noise when configured.
pub fn read_conductance<R: Rng + ?Sized>(
    dev: &PcmDevice,
    now_s: f64,
    p: &PcmModelParams,
    rng: &mut R,
) -> Result<f64> {
    let g = dev.conductance_at(now_s)?;
    if p.read_noise_std_us > 0.0 {
        let noise = Normal::new(0.0, p.read_noise_std_us)
            .expect("validated std")
            .sample(rng);
        return Ok((g + noise).max(0.0));
    }
    Ok(g.max(0.0))
}

/// Applies one partial-SET pulse of `amp_ua` at time `now`.
pub fn program_pulse<R: Rng + ?Sized>(
    dev: &PcmDevice,
    amp_ua: f64,
    now_s: f64,
    p: &PcmModelParams,
    rng: &mut R,
) -> Result<PcmDevice> {
    if !(p.amp_min_ua..=p.amp_max_ua).contains(&amp_ua) {
        return Err(Error::InvalidParam(format!(
            "pulse amplitude {amp_ua} µA outside [{}, {}]",
            p.amp_min_ua, p.amp_max_ua
        )));
    }
    let g_cur = dev.conductance_at(now_s)?;
    let state = ((g_cur - p.g_min_us) / p.g_range_us()).clamp(0.0, 1.0);
    let mean = p.amplitude_to_dg(amp_ua) * (1.0 - p.nonlinearity * state);
    let dg = if p.sigma_pgm_us > 0.0 {
        mean + Normal::new(0.0, p.sigma_pgm_us)
            .expect("validated std")
            .sample(rng)
    } else {
        mean
    };
    Ok(PcmDevice {
        g0_us: (g_cur + dg).clamp(p.g_min_us, p.g_max_us),
        t0_s: now_s + p.read_gap_s,
        tp_s: now_s,
        nu: p.sample_nu(rng),
    })
}
