//! Per-link radio quality: WINNER+ B1 Manhattan-grid pathloss, Rayleigh
//! fading, a noise-limited SINR, a logistic BLER curve and a truncated
//! Shannon rate abstraction.

use rand::Rng;
use rand_distr::{Distribution, Exp1};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Length of one TTI in seconds.
pub const TTI_SECONDS: f64 = 0.001;

/// SINR values are never reported below this, so a zero channel stays finite.
pub const SINR_FLOOR_DB: f64 = -40.0;

const MIN_DISTANCE_M: f64 = 3.0;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ChannelParams {
    pub carrier_ghz: f64,
    pub rb_bandwidth_hz: f64,
    pub noise_psd_dbm_hz: f64,
    pub noise_figure_db: f64,
    pub tx_power_dbm: f64,
    pub bler_midpoint_db: f64,
    pub bler_slope_per_db: f64,
    pub spectral_eff_factor: f64,
    pub max_spectral_eff: f64,
}

impl Default for ChannelParams {
    fn default() -> Self {
        ChannelParams {
            carrier_ghz: 2.0,
            rb_bandwidth_hz: 180e3,
            noise_psd_dbm_hz: -174.0,
            noise_figure_db: 9.0,
            tx_power_dbm: 6.0,
            bler_midpoint_db: 5.0,
            bler_slope_per_db: 1.0,
            spectral_eff_factor: 0.75,
            max_spectral_eff: 4.8,
        }
    }
}

impl ChannelParams {
    pub fn validate(&self) -> Result<()> {
        let fields = [
            ("carrier_ghz", self.carrier_ghz),
            ("rb_bandwidth_hz", self.rb_bandwidth_hz),
            ("noise_psd_dbm_hz", self.noise_psd_dbm_hz),
            ("noise_figure_db", self.noise_figure_db),
            ("tx_power_dbm", self.tx_power_dbm),
            ("bler_midpoint_db", self.bler_midpoint_db),
            ("bler_slope_per_db", self.bler_slope_per_db),
            ("spectral_eff_factor", self.spectral_eff_factor),
            ("max_spectral_eff", self.max_spectral_eff),
        ];
        for (name, v) in fields {
            if !v.is_finite() {
                return Err(Error::Config(format!("channel.{name} must be finite")));
            }
        }
        if self.carrier_ghz <= 0.0 {
            return Err(Error::Config("channel.carrier_ghz must be > 0".into()));
        }
        if self.rb_bandwidth_hz <= 0.0 {
            return Err(Error::Config("channel.rb_bandwidth_hz must be > 0".into()));
        }
        if !(self.spectral_eff_factor > 0.0 && self.spectral_eff_factor <= 1.0) {
            return Err(Error::Config(
                "channel.spectral_eff_factor must be in (0, 1]".into(),
            ));
        }
        if self.max_spectral_eff <= 0.0 {
            return Err(Error::Config("channel.max_spectral_eff must be > 0".into()));
        }
        if self.bler_slope_per_db <= 0.0 {
            return Err(Error::Config("channel.bler_slope_per_db must be > 0".into()));
        }
        Ok(())
    }

    /// Thermal noise plus receiver noise figure over `n_rbs` resource blocks.
    pub fn noise_dbm(&self, n_rbs: u32) -> f64 {
        self.noise_psd_dbm_hz
            + 10.0 * (n_rbs as f64 * self.rb_bandwidth_hz).log10()
            + self.noise_figure_db
    }
}

/// WINNER+ B1 (urban micro, Manhattan grid) pathloss below the breakpoint.
///
/// Distances below 3 m are clamped to 3 m. The breakpoint regime (beyond
/// roughly 320 m at 2 GHz) is not modelled; V2V pairs stay well inside it.
pub fn pathloss_db(is_los: bool, d1: f64, d2: f64, carrier_ghz: f64) -> f64 {
    let d1 = d1.max(MIN_DISTANCE_M);
    let los = 22.7 * d1.log10() + 41.0 + 20.0 * (carrier_ghz / 5.0).log10();
    if is_los {
        return los;
    }
    let d2 = d2.max(MIN_DISTANCE_M);
    let nj = (2.8 - 0.0024 * d1).max(1.84);
    los + 17.3 - 12.5 * nj + 10.0 * nj * d2.log10() + 3.0 * (carrier_ghz / 5.0).log10()
}

/// Rayleigh fading power gain `|h|^2`, exponentially distributed with mean 1.
pub fn fading_sample<R: Rng + ?Sized>(rng: &mut R) -> f64 {
    Exp1.sample(rng)
}

/// Noise-limited SINR with the transmit power spread over `n_rbs` blocks.
pub fn sinr_db(params: &ChannelParams, pathloss_db: f64, fading_gain: f64, n_rbs: u32) -> f64 {
    debug_assert!(n_rbs >= 1);
    let rx = params.tx_power_dbm - pathloss_db + 10.0 * fading_gain.log10();
    let s = rx - params.noise_dbm(n_rbs.max(1));
    if s.is_nan() {
        SINR_FLOOR_DB
    } else {
        s.max(SINR_FLOOR_DB)
    }
}

/// Block error probability of one transmission attempt.
pub fn bler_prob(sinr_db: f64, params: &ChannelParams) -> f64 {
    let z = params.bler_slope_per_db * (sinr_db - params.bler_midpoint_db);
    // 1 / (1 + e^z), arranged to avoid overflow for either sign of z.
    if z >= 0.0 {
        let e = (-z).exp();
        e / (1.0 + e)
    } else {
        1.0 / (1.0 + z.exp())
    }
}

/// Truncated-Shannon spectral efficiency in bit/s/Hz.
pub fn spectral_efficiency(sinr_db: f64, params: &ChannelParams) -> f64 {
    let lin = 10f64.powf(sinr_db / 10.0);
    (params.spectral_eff_factor * (1.0 + lin).log2()).min(params.max_spectral_eff)
}

/// Bits one link can carry in one TTI over `n_rbs` blocks at `sinr_db`.
pub fn bits_per_tti(sinr_db: f64, n_rbs: u32, params: &ChannelParams) -> u64 {
    if n_rbs == 0 {
        return 0;
    }
    let r = spectral_efficiency(sinr_db, params);
    (r * n_rbs as f64 * params.rb_bandwidth_hz * TTI_SECONDS).floor() as u64
}

/// Link state derived for one TTI.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LinkQuality {
    pub pathloss_db: f64,
    pub fading_gain: f64,
    pub sinr_db: f64,
}
