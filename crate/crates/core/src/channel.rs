//! Received-signal model: tapped-delay-line multipath, integer timing
//! offset, carrier frequency and phase offset, then AWGN at a target SNR.

use std::f64::consts::PI;

use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};
use crate::numerics::{gaussian_noise, mean_power, ComplexVec};
use crate::rng::{stream, Rng};
use crate::waveform::{ModScheme, OfdmConfig, TxStream};

/// Power-delay profile. Tap `i` sits at `delays_us[i]` with mean power
/// `powers_db[i]`; with `fading` each tap is complex Gaussian, otherwise it
/// is the real amplitude of its mean power.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ChannelProfile {
    pub delays_us: Vec<f64>,
    pub powers_db: Vec<f64>,
    pub fading: bool,
}

impl ChannelProfile {
    /// SUI-1 delays and powers, every tap Rayleigh.
    pub fn sui1() -> Self {
        Self {
            delays_us: vec![0.0, 0.4, 0.9],
            powers_db: vec![0.0, -15.0, -20.0],
            fading: true,
        }
    }

    /// Single unit tap: the AWGN-only channel.
    pub fn flat() -> Self {
        Self {
            delays_us: vec![0.0],
            powers_db: vec![0.0],
            fading: false,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.delays_us.is_empty() || self.delays_us.len() != self.powers_db.len() {
            return Err(Error::InvalidConfiguration(
                "channel profile needs matching, non-empty delay and power lists".into(),
            ));
        }
        if self.delays_us.iter().any(|d| !(d.is_finite() && *d >= 0.0)) {
            return Err(Error::InvalidConfiguration("tap delays must be finite and non-negative".into()));
        }
        if self.powers_db.iter().any(|p| !p.is_finite()) {
            return Err(Error::InvalidConfiguration("tap powers must be finite".into()));
        }
        Ok(())
    }
}

impl Default for ChannelProfile {
    fn default() -> Self {
        Self::sui1()
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub enum TimingOffset {
    /// Uniform over one symbol period.
    Random,
    Fixed(usize),
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ChannelRealization {
    pub taps: Vec<Complex64>,
    pub tap_delays: Vec<usize>,
    /// Leading zero samples before the first CP.
    pub tau: usize,
}

impl ChannelRealization {
    pub fn identity() -> Self {
        Self {
            taps: vec![Complex64::new(1.0, 0.0)],
            tap_delays: vec![0],
            tau: 0,
        }
    }

    pub fn max_delay(&self) -> usize {
        self.tap_delays.iter().copied().max().unwrap_or(0)
    }
}

/// SUI-1 draw with a random timing offset.
pub fn draw_channel(cfg: &OfdmConfig, rng: &mut Rng) -> Result<ChannelRealization> {
    draw_channel_with(cfg, &ChannelProfile::sui1(), TimingOffset::Random, rng)
}

pub fn draw_channel_with(
    cfg: &OfdmConfig,
    profile: &ChannelProfile,
    timing: TimingOffset,
    rng: &mut Rng,
) -> Result<ChannelRealization> {
    profile.validate()?;
    let fs = cfg.sample_rate();
    let tap_delays: Vec<usize> = profile
        .delays_us
        .iter()
        .map(|d| (d * 1e-6 * fs).round() as usize)
        .collect();
    let max_delay = tap_delays.iter().copied().max().unwrap_or(0);
    // the channel spans max_delay + 1 samples and must fit inside the CP
    if max_delay + 1 > cfg.n_cp.max(1) {
        return Err(Error::InvalidConfiguration(format!(
            "channel length {} samples exceeds CP length {} at {:.3} MHz",
            max_delay + 1,
            cfg.n_cp,
            fs / 1e6
        )));
    }
    let mut taps = draw_tap_gains(profile, rng);
    let energy: f64 = taps.iter().map(|h| h.norm_sqr()).sum();
    if energy > 0.0 {
        let g = 1.0 / energy.sqrt();
        for h in taps.iter_mut() {
            *h *= g;
        }
    }
    let tau = match timing {
        TimingOffset::Random => rng.below(cfg.symbol_len()),
        TimingOffset::Fixed(t) => t,
    };
    Ok(ChannelRealization {
        taps,
        tap_delays,
        tau,
    })
}

/// Tap gains at the profile's mean powers, before per-realization
/// power normalization.
pub fn draw_tap_gains(profile: &ChannelProfile, rng: &mut Rng) -> Vec<Complex64> {
    profile
        .powers_db
        .iter()
        .map(|p| {
            let power = 10f64.powf(p / 10.0);
            if profile.fading {
                rng.complex_normal(power)
            } else {
                Complex64::new(power.sqrt(), 0.0)
            }
        })
        .collect()
}

/// Linear convolution with the tapped delay line, preceded by `tau` zeros.
/// Output length is `x.len() + tau + max_delay`.
pub fn apply_channel(x: &[Complex64], ch: &ChannelRealization) -> ComplexVec {
    let mut out = vec![Complex64::new(0.0, 0.0); x.len() + ch.tau + ch.max_delay()];
    for (&h, &d) in ch.taps.iter().zip(&ch.tap_delays) {
        let dst = &mut out[ch.tau + d..ch.tau + d + x.len()];
        for (o, &v) in dst.iter_mut().zip(x) {
            *o += h * v;
        }
    }
    out
}

/// Multiplies sample `k` by `exp(j(2π·cfo·k/f_s + φ))`.
pub fn apply_cfo(x: &[Complex64], cfo_hz: f64, phi: f64, f_s: f64) -> ComplexVec {
    rotate(x, cfo_hz / f_s, phi)
}

/// Per-sample rotation by `2π·cycles_per_sample·k + phase`.
pub(crate) fn rotate(x: &[Complex64], cycles_per_sample: f64, phase: f64) -> ComplexVec {
    x.iter()
        .enumerate()
        .map(|(k, &v)| {
            let turns = (cycles_per_sample * k as f64).fract();
            v * Complex64::from_polar(1.0, 2.0 * PI * turns + phase)
        })
        .collect()
}

/// Adds noise with variance `mean_power(x) / 10^(snr_db/10)`.
/// `snr_db = +inf` returns `x` unchanged.
pub fn add_awgn(x: &[Complex64], snr_db: f64, rng: &mut Rng) -> Result<ComplexVec> {
    if x.is_empty() {
        return Err(invalid("cannot add noise to an empty signal"));
    }
    if snr_db == f64::INFINITY {
        return Ok(x.to_vec());
    }
    if snr_db.is_nan() {
        return Err(invalid("SNR is NaN"));
    }
    let p = mean_power(x);
    if p == 0.0 {
        return Err(invalid("SNR is undefined for an all-zero signal"));
    }
    let variance = p / 10f64.powf(snr_db / 10.0);
    let noise = gaussian_noise(x.len(), variance, rng);
    Ok(x.iter().zip(&noise).map(|(a, b)| a + b).collect())
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ImpairmentConfig {
    /// Frequency offset in parts per million of the carrier.
    pub cfo_ppm: f64,
    /// Phase offset in radians.
    pub phi: f64,
    /// Target SNR in dB; `f64::INFINITY` disables noise.
    pub snr_db: f64,
    pub channel: ChannelProfile,
    pub timing: TimingOffset,
}

impl ImpairmentConfig {
    /// Dataset-generation ranges: CFO 100..500 ppm, φ in [0, 2π), SNR 10..25 dB.
    pub fn validate_dataset_ranges(&self) -> Result<()> {
        if !(100.0..=500.0).contains(&self.cfo_ppm) {
            return Err(Error::InvalidConfiguration(format!("cfo_ppm {} outside [100, 500]", self.cfo_ppm)));
        }
        if !(0.0..2.0 * PI).contains(&self.phi) {
            return Err(Error::InvalidConfiguration(format!("phi {} outside [0, 2π)", self.phi)));
        }
        if !(10.0..=25.0).contains(&self.snr_db) {
            return Err(Error::InvalidConfiguration(format!("snr_db {} outside [10, 25]", self.snr_db)));
        }
        Ok(())
    }
}

/// Integer/fractional split of a frequency offset.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct CfoSplit {
    pub cfo_hz: f64,
    /// Whole multiples of the subcarrier spacing.
    pub f_int: f64,
    /// Remainder in [-f_ss/2, f_ss/2).
    pub f_frac: f64,
}

impl CfoSplit {
    pub fn new(cfo_hz: f64, f_ss: f64) -> Self {
        let bins = (cfo_hz / f_ss + 0.5).floor();
        let f_int = bins * f_ss;
        let f_frac = cfo_hz - f_int;
        Self { cfo_hz, f_int, f_frac }
    }

    pub fn integer_bins(&self, f_ss: f64) -> i64 {
        (self.f_int / f_ss).round() as i64
    }
}

/// Ground truth of an impaired stream. Only scoring code reads this.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct StreamTruth {
    pub config: OfdmConfig,
    pub per_symbol_mod: Vec<ModScheme>,
    pub channel: ChannelRealization,
    pub cfo: CfoSplit,
    pub phi: f64,
    /// `None` for a noiseless stream.
    pub snr_db: Option<f64>,
}

impl StreamTruth {
    /// Sample index where symbol `m`'s cyclic prefix begins.
    pub fn cp_start(&self, m: usize) -> usize {
        self.channel.tau + m * self.config.symbol_len()
    }

    /// Sample index where symbol `m`'s IDFT body begins.
    pub fn body_start(&self, m: usize) -> usize {
        self.cp_start(m) + self.config.n_cp
    }
}

#[derive(Clone, Debug)]
pub struct ImpairedStream {
    pub samples: ComplexVec,
    pub truth: StreamTruth,
}

/// Full received-signal composition: channel, CFO and phase, then noise.
pub fn impair(tx: &TxStream, imp: &ImpairmentConfig, rng: &Rng) -> Result<ImpairedStream> {
    let cfg = &tx.config;
    cfg.validate()?;
    if tx.samples.len() != cfg.num_symbols * cfg.symbol_len() {
        return Err(invalid("stream length does not match its configuration"));
    }
    let ch = draw_channel_with(cfg, &imp.channel, imp.timing, &mut rng.substream(stream::CHANNEL))?;
    let cfo_hz = imp.cfo_ppm * cfg.f_c / 1e6;
    let faded = apply_channel(&tx.samples, &ch);
    let rotated = apply_cfo(&faded, cfo_hz, imp.phi, cfg.sample_rate());
    let samples = add_awgn(&rotated, imp.snr_db, &mut rng.substream(stream::NOISE))?;
    Ok(ImpairedStream {
        samples,
        truth: StreamTruth {
            config: cfg.clone(),
            per_symbol_mod: tx.per_symbol_mod.clone(),
            channel: ch,
            cfo: CfoSplit::new(cfo_hz, cfg.f_ss),
            phi: imp.phi,
            snr_db: if imp.snr_db.is_finite() { Some(imp.snr_db) } else { None },
        },
    })
}
