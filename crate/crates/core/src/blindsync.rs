//! Blind recovery of the OFDM grid from raw samples: subcarrier count,
//! CP length and coarse timing, then the fractional frequency offset.
//!
//! Every estimator here works on the sample vector and public receiver
//! settings only (monitored bandwidth, candidate set). None of them sees
//! the stream's ground truth.

use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::channel::rotate;
use crate::error::{invalid, Error, Result};
use crate::numerics::delayed_autocorrelation;
use crate::waveform::{cp_bounds, SUBCARRIER_COUNTS};

/// Largest subcarrier count (and correlation lag) considered.
pub const MAX_SUBCARRIERS: usize = 2048;
/// Symbols accumulated by the CP/timing and CFO estimators.
pub const SYMBOLS_ACCUMULATED: usize = 5;
/// Below this peak score the capture is treated as containing no OFDM.
pub const DETECTION_FLOOR: f64 = 0.5;

pub fn default_candidates() -> Vec<usize> {
    SUBCARRIER_COUNTS.to_vec()
}

/// Samples needed before a subcarrier hypothesis can be tested:
/// six symbols at the longest allowed prefix.
pub fn min_samples_for(n: usize) -> usize {
    (6.0 * 1.15 * n as f64).ceil() as usize
}

/// Samples needed by the CP/timing search for `n` subcarriers.
pub fn min_samples_for_cp_search(n: usize) -> usize {
    min_samples_for(n) + n / 2
}

/// CP lengths searched for `n` subcarriers: every integer in the allowed
/// range up to N = 512, every other one above.
pub fn cp_grid(n: usize) -> Vec<usize> {
    let (lo, hi) = cp_bounds(n);
    let step = if n <= 512 { 1 } else { 2 };
    let mut grid: Vec<usize> = (lo..=hi).step_by(step).collect();
    if *grid.last().unwrap() != hi {
        grid.push(hi);
    }
    grid
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CandidateScore {
    pub n: usize,
    /// Best period-folded normalized lag-N correlation.
    pub folded: f64,
    /// Normalized lag-N correlation over the whole capture.
    pub full_stream: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SubcarrierEstimate {
    pub n_hat: usize,
    pub f_ss_hat: f64,
    pub peak_score: f64,
    pub candidates: Vec<CandidateScore>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CpTiming {
    pub n_cp_hat: usize,
    /// Samples from the capture start to the first detected CP.
    pub shift_hat: usize,
    /// Normalized CP-to-replica correlation of the winning hypothesis.
    pub score: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SyncEstimate {
    pub n_hat: usize,
    pub f_ss_hat: f64,
    pub n_cp_hat: usize,
    pub shift_hat: usize,
    pub f_frac_hat: f64,
    pub peak_score: f64,
}

/// Lag-`n` products `r[k]·conj(r[k+n])` and half energies, as prefix sums.
struct LagProducts {
    corr: Vec<Complex64>,
    energy: Vec<f64>,
}

impl LagProducts {
    fn new(r: &[Complex64], n: usize) -> Self {
        let len = r.len().saturating_sub(n);
        let mut corr = Vec::with_capacity(len + 1);
        let mut energy = Vec::with_capacity(len + 1);
        corr.push(Complex64::new(0.0, 0.0));
        energy.push(0.0);
        let (mut c, mut e) = (Complex64::new(0.0, 0.0), 0.0);
        for k in 0..len {
            c += r[k] * r[k + n].conj();
            e += 0.5 * (r[k].norm_sqr() + r[k + n].norm_sqr());
            corr.push(c);
            energy.push(e);
        }
        Self { corr, energy }
    }

    fn len(&self) -> usize {
        self.corr.len() - 1
    }

    fn window(&self, start: usize, len: usize) -> (Complex64, f64) {
        (
            self.corr[start + len] - self.corr[start],
            self.energy[start + len] - self.energy[start],
        )
    }
}

/// Best normalized lag-`n` correlation after folding the product sequence
/// at every candidate symbol period `n + c` and sliding a `c`-sample window.
fn folded_score(r: &[Complex64], n: usize) -> f64 {
    let z = r.len() - n;
    let mut best = 0.0f64;
    let mut prod = Vec::with_capacity(z);
    let mut pow = Vec::with_capacity(z);
    for k in 0..z {
        prod.push(r[k] * r[k + n].conj());
        pow.push(0.5 * (r[k].norm_sqr() + r[k + n].norm_sqr()));
    }
    for c in cp_grid(n) {
        let period = n + c;
        let mut fold_c = vec![Complex64::new(0.0, 0.0); period];
        let mut fold_e = vec![0.0; period];
        for k in 0..z {
            fold_c[k % period] += prod[k];
            fold_e[k % period] += pow[k];
        }
        let mut acc_c: Complex64 = fold_c[..c].iter().sum();
        let mut acc_e: f64 = fold_e[..c].iter().sum();
        for o in 0..period {
            if acc_e > 0.0 {
                best = best.max(acc_c.norm() / acc_e);
            }
            let out = o;
            let inn = (o + c) % period;
            acc_c += fold_c[inn] - fold_c[out];
            acc_e += fold_e[inn] - fold_e[out];
        }
    }
    best.min(1.0)
}

/// Picks the subcarrier count whose lag-N self-correlation peaks highest.
///
/// Candidates the capture is too short to test (fewer than
/// [`min_samples_for`] samples) are skipped; if none remain the call fails
/// with insufficient data. `f_ss_hat` is the monitored bandwidth divided by
/// the winning count.
pub fn estimate_num_subcarriers(
    r: &[Complex64],
    candidates: &[usize],
    monitored_bandwidth: f64,
) -> Result<SubcarrierEstimate> {
    if candidates.is_empty() {
        return Err(invalid("empty subcarrier candidate set"));
    }
    if !(monitored_bandwidth > 0.0 && monitored_bandwidth.is_finite()) {
        return Err(invalid("monitored bandwidth must be positive"));
    }
    let mut sorted = candidates.to_vec();
    sorted.sort_unstable();
    sorted.dedup();
    if let Some(&bad) = sorted.iter().find(|&&n| n < 16 || n > MAX_SUBCARRIERS) {
        return Err(invalid(format!("candidate {bad} outside [16, {MAX_SUBCARRIERS}]")));
    }
    let mut scores = Vec::new();
    for &n in &sorted {
        if r.len() < min_samples_for(n) {
            continue;
        }
        let full = delayed_autocorrelation(r, n, 0)?.normalized[0].norm();
        scores.push(CandidateScore {
            n,
            folded: folded_score(r, n),
            full_stream: full,
        });
    }
    let best = scores
        .iter()
        .fold(None::<&CandidateScore>, |b, s| match b {
            Some(b) if b.folded >= s.folded => Some(b),
            _ => Some(s),
        })
        .ok_or(Error::InsufficientData {
            needed: min_samples_for(sorted[0]),
            available: r.len(),
        })?;
    Ok(SubcarrierEstimate {
        n_hat: best.n,
        f_ss_hat: monitored_bandwidth / best.n as f64,
        peak_score: best.folded,
        candidates: scores.clone(),
    })
}

/// Joint search over CP length and timing shift.
///
/// For every CP length `c` on [`cp_grid`] and every shift within one symbol
/// period, the CP windows of five consecutive symbols are correlated with
/// the samples `n` later. The score is the coherent correlation magnitude
/// minus half the window energy: samples inside a true prefix add to it,
/// samples past the prefix subtract, so the maximum sits on the prefix
/// boundaries. Ties go to the smaller CP, then the smaller shift.
pub fn estimate_cp_and_timing(r: &[Complex64], n: usize) -> Result<CpTiming> {
    if n == 0 {
        return Err(invalid("subcarrier count must be positive"));
    }
    let needed = min_samples_for_cp_search(n);
    if r.len() < needed {
        return Err(Error::InsufficientData {
            needed,
            available: r.len(),
        });
    }
    let lag = LagProducts::new(r, n);
    let mut best: Option<(f64, CpTiming)> = None;
    for c in cp_grid(n) {
        let period = n + c;
        for s in 0..period {
            let mut acc_c = Complex64::new(0.0, 0.0);
            let mut acc_e = 0.0;
            for m in 0..SYMBOLS_ACCUMULATED {
                let start = s + m * period;
                if start + c > lag.len() {
                    break;
                }
                let (wc, we) = lag.window(start, c);
                acc_c += wc;
                acc_e += we;
            }
            let metric = acc_c.norm() - 0.5 * acc_e;
            if best.as_ref().map_or(true, |(b, _)| metric > *b) {
                let score = if acc_e > 0.0 { (acc_c.norm() / acc_e).min(1.0) } else { 0.0 };
                best = Some((
                    metric,
                    CpTiming {
                        n_cp_hat: c,
                        shift_hat: s,
                        score,
                    },
                ));
            }
        }
    }
    Ok(best.expect("non-empty CP grid").1)
}

/// Fractional CFO from the phase between CP windows and their replicas `n`
/// samples later: θ = 2π·f/f_ss, so f = θ·f_ss/(2π), in [-f_ss/2, f_ss/2).
pub fn estimate_frac_cfo(
    r: &[Complex64],
    n: usize,
    n_cp: usize,
    shift: usize,
    f_ss_hat: f64,
) -> Result<f64> {
    if n_cp == 0 {
        return Err(invalid("CP length must be positive"));
    }
    let period = n + n_cp;
    let needed = shift + n_cp + n;
    if r.len() < needed {
        return Err(Error::InsufficientData {
            needed,
            available: r.len(),
        });
    }
    let mut acc = Complex64::new(0.0, 0.0);
    for m in 0..SYMBOLS_ACCUMULATED {
        let start = shift + m * period;
        if start + n_cp + n > r.len() {
            break;
        }
        for k in start..start + n_cp {
            acc += r[k].conj() * r[k + n];
        }
    }
    let mut theta = acc.arg();
    if theta >= std::f64::consts::PI {
        theta -= 2.0 * std::f64::consts::PI;
    }
    Ok(theta * f_ss_hat / (2.0 * std::f64::consts::PI))
}

/// Rotates sample `k` by `exp(-j2π·f_hat·k/f_s)`.
pub fn remove_cfo(r: &[Complex64], f_hat: f64, f_s: f64) -> Vec<Complex64> {
    rotate(r, -f_hat / f_s, 0.0)
}

/// Runs the three estimators in order.
pub fn synchronize(r: &[Complex64], candidates: &[usize], monitored_bandwidth: f64) -> Result<SyncEstimate> {
    let sub = estimate_num_subcarriers(r, candidates, monitored_bandwidth)?;
    let cp = estimate_cp_and_timing(r, sub.n_hat)?;
    let f_frac_hat = estimate_frac_cfo(r, sub.n_hat, cp.n_cp_hat, cp.shift_hat, sub.f_ss_hat)?;
    Ok(SyncEstimate {
        n_hat: sub.n_hat,
        f_ss_hat: sub.f_ss_hat,
        n_cp_hat: cp.n_cp_hat,
        shift_hat: cp.shift_hat,
        f_frac_hat,
        peak_score: sub.peak_score,
    })
}
