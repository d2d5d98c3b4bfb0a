//! Complex-signal primitives: DFT, delayed autocorrelation, Gaussian noise.

use std::f64::consts::PI;

use num_complex::Complex64;

use crate::error::{invalid, Result};
use crate::rng::Rng;

pub type ComplexVec = Vec<Complex64>;

pub fn is_power_of_two(n: usize) -> bool {
    n != 0 && n & (n - 1) == 0
}

/// Forward (unscaled) or inverse (1/N scaled) DFT.
///
/// Power-of-two lengths go through an iterative radix-2 decimation-in-time
/// transform; anything else is evaluated directly.
pub fn dft(x: &[Complex64], inverse: bool) -> Result<ComplexVec> {
    if x.is_empty() {
        return Err(invalid("dft of an empty sequence"));
    }
    let mut out = x.to_vec();
    if is_power_of_two(x.len()) {
        fft_in_place(&mut out, inverse);
    } else {
        out = direct_dft(x, inverse);
    }
    Ok(out)
}

fn direct_dft(x: &[Complex64], inverse: bool) -> ComplexVec {
    let n = x.len();
    let sign = if inverse { 1.0 } else { -1.0 };
    let scale = if inverse { 1.0 / n as f64 } else { 1.0 };
    (0..n)
        .map(|k| {
            let mut acc = Complex64::new(0.0, 0.0);
            for (i, &v) in x.iter().enumerate() {
                // reduce the index product mod n to keep the angle small
                let idx = (i * k) % n;
                let ang = sign * 2.0 * PI * idx as f64 / n as f64;
                acc += v * Complex64::from_polar(1.0, ang);
            }
            acc * scale
        })
        .collect()
}

/// In-place radix-2 FFT. `buf.len()` must be a power of two.
pub fn fft_in_place(buf: &mut [Complex64], inverse: bool) {
    let n = buf.len();
    assert!(is_power_of_two(n), "fft length {n} is not a power of two");
    if n == 1 {
        return;
    }
    let bits = n.trailing_zeros();
    for i in 0..n {
        let j = i.reverse_bits() >> (usize::BITS - bits);
        if j > i {
            buf.swap(i, j);
        }
    }
    let sign = if inverse { 1.0 } else { -1.0 };
    // twiddles for the largest stage; smaller stages stride through them
    let twiddles: Vec<Complex64> = (0..n / 2)
        .map(|k| Complex64::from_polar(1.0, sign * 2.0 * PI * k as f64 / n as f64))
        .collect();
    let mut len = 2;
    while len <= n {
        let half = len / 2;
        let stride = n / len;
        for start in (0..n).step_by(len) {
            for k in 0..half {
                let w = twiddles[k * stride];
                let a = buf[start + k];
                let b = buf[start + k + half] * w;
                buf[start + k] = a + b;
                buf[start + k + half] = a - b;
            }
        }
        len <<= 1;
    }
    if inverse {
        let scale = 1.0 / n as f64;
        for v in buf.iter_mut() {
            *v *= scale;
        }
    }
}

/// Output of [`delayed_autocorrelation`], indexed by extra lag `p` in `0..=P`.
#[derive(Clone, Debug)]
pub struct Autocorrelation {
    pub delay: usize,
    /// `Σ_n r[n] · conj(r[n - d - p])` over the overlapping samples.
    pub raw: ComplexVec,
    /// `raw[p]` divided by the geometric mean of the two window energies.
    pub normalized: ComplexVec,
}

impl Autocorrelation {
    /// Index and magnitude of the largest normalized value.
    pub fn peak(&self) -> (usize, f64) {
        self.normalized
            .iter()
            .enumerate()
            .map(|(p, v)| (p, v.norm()))
            .fold((0, f64::NEG_INFINITY), |best, cur| if cur.1 > best.1 { cur } else { best })
    }
}

/// Correlation of `r` against a copy of itself delayed by `delay + p`
/// samples, for every `p` in `0..=max_lag`.
///
/// The delayed copy is conjugated so that a repeated segment produces a
/// real, positive peak regardless of its phase. Computed through a
/// zero-padded FFT; window energies come from prefix sums.
pub fn delayed_autocorrelation(
    r: &[Complex64],
    delay: usize,
    max_lag: usize,
) -> Result<Autocorrelation> {
    let z = r.len();
    if delay == 0 {
        return Err(invalid("delay must be at least one sample"));
    }
    if delay > z || max_lag > z - delay {
        return Err(invalid(format!(
            "lag range {delay}..={} exceeds signal length {z}",
            delay.saturating_add(max_lag)
        )));
    }
    let len = (2 * z).next_power_of_two();
    let mut spec = vec![Complex64::new(0.0, 0.0); len];
    spec[..z].copy_from_slice(r);
    fft_in_place(&mut spec, false);
    for v in spec.iter_mut() {
        *v = Complex64::new(v.norm_sqr(), 0.0);
    }
    fft_in_place(&mut spec, true);

    let mut prefix = Vec::with_capacity(z + 1);
    prefix.push(0.0);
    let mut acc = 0.0;
    for v in r {
        acc += v.norm_sqr();
        prefix.push(acc);
    }

    let mut raw = Vec::with_capacity(max_lag + 1);
    let mut normalized = Vec::with_capacity(max_lag + 1);
    for p in 0..=max_lag {
        let lag = delay + p;
        let value = if lag < z { spec[lag] } else { Complex64::new(0.0, 0.0) };
        let e_late = prefix[z] - prefix[lag];
        let e_early = prefix[z - lag];
        let denom = (e_late * e_early).sqrt();
        raw.push(value);
        normalized.push(if denom > 0.0 {
            clamp_unit(value / denom)
        } else {
            Complex64::new(0.0, 0.0)
        });
    }
    Ok(Autocorrelation {
        delay,
        raw,
        normalized,
    })
}

// Cauchy-Schwarz bounds the magnitude by one; FFT round-off can nudge it over.
fn clamp_unit(v: Complex64) -> Complex64 {
    let m = v.norm();
    if m > 1.0 {
        v / m
    } else {
        v
    }
}

/// `n` i.i.d. circularly-symmetric complex Gaussian samples with total
/// variance `variance` (each of I and Q gets half).
pub fn gaussian_noise(n: usize, variance: f64, rng: &mut Rng) -> ComplexVec {
    if variance <= 0.0 {
        return vec![Complex64::new(0.0, 0.0); n];
    }
    (0..n).map(|_| rng.complex_normal(variance)).collect()
}

pub fn mean_power(x: &[Complex64]) -> f64 {
    if x.is_empty() {
        return 0.0;
    }
    x.iter().map(|v| v.norm_sqr()).sum::<f64>() / x.len() as f64
}
