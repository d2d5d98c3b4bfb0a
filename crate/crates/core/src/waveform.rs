//! Transmit side: Gray-coded constellations, IDFT symbol assembly with a
//! cyclic prefix, and multi-symbol streams whose modulation changes from
//! one symbol to the next.

use std::fmt;

use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};
use crate::numerics::{fft_in_place, ComplexVec};
use crate::rng::Rng;

/// Subcarrier counts the toolkit generates and searches for.
pub const SUBCARRIER_COUNTS: [usize; 5] = [128, 256, 512, 1024, 2048];
/// CP length bounds as a fraction of the subcarrier count.
pub const CP_FRACTION_MIN: f64 = 0.06;
pub const CP_FRACTION_MAX: f64 = 0.15;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum ModScheme {
    Bpsk,
    Qpsk,
    Qam16,
    Qam64,
    Qam256,
    Qam1024,
}

impl ModScheme {
    pub const ALL: [ModScheme; 6] = [
        ModScheme::Bpsk,
        ModScheme::Qpsk,
        ModScheme::Qam16,
        ModScheme::Qam64,
        ModScheme::Qam256,
        ModScheme::Qam1024,
    ];

    pub fn bits_per_symbol(self) -> usize {
        match self {
            ModScheme::Bpsk => 1,
            ModScheme::Qpsk => 2,
            ModScheme::Qam16 => 4,
            ModScheme::Qam64 => 6,
            ModScheme::Qam256 => 8,
            ModScheme::Qam1024 => 10,
        }
    }

    pub fn order(self) -> usize {
        1 << self.bits_per_symbol()
    }

    /// Number of PAM levels on the in-phase and quadrature axes.
    fn axis_levels(self) -> (usize, usize) {
        match self {
            ModScheme::Bpsk => (2, 1),
            _ => {
                let side = 1 << (self.bits_per_symbol() / 2);
                (side, side)
            }
        }
    }

    /// Scale that brings the integer grid {±1, ±3, ...} to unit average energy.
    fn scale(self) -> f64 {
        let (li, lq) = self.axis_levels();
        let pam_energy = |l: usize| if l == 1 { 0.0 } else { ((l * l) as f64 - 1.0) / 3.0 };
        1.0 / (pam_energy(li) + pam_energy(lq)).sqrt()
    }
}

impl fmt::Display for ModScheme {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let s = match self {
            ModScheme::Bpsk => "BPSK",
            ModScheme::Qpsk => "QPSK",
            ModScheme::Qam16 => "16QAM",
            ModScheme::Qam64 => "64QAM",
            ModScheme::Qam256 => "256QAM",
            ModScheme::Qam1024 => "1024QAM",
        };
        f.write_str(s)
    }
}

fn gray_encode(i: usize) -> usize {
    i ^ (i >> 1)
}

fn gray_decode(mut g: usize) -> usize {
    let mut i = g;
    while g > 1 {
        g >>= 1;
        i ^= g;
    }
    i
}

/// PAM level for a Gray-coded label: label -> index -> 2*index - (L-1).
fn pam_level(label: usize, levels: usize) -> f64 {
    (2 * gray_decode(label)) as f64 - (levels as f64 - 1.0)
}

fn pam_slice(value: f64, levels: usize) -> usize {
    let idx = ((value + (levels as f64 - 1.0)) / 2.0).round();
    let idx = idx.clamp(0.0, levels as f64 - 1.0) as usize;
    gray_encode(idx)
}

fn point_for_symbol(scheme: ModScheme, sym: usize) -> Complex64 {
    let (li, lq) = scheme.axis_levels();
    let scale = scheme.scale();
    if lq == 1 {
        return Complex64::new(pam_level(sym, li) * scale, 0.0);
    }
    let qbits = lq.trailing_zeros();
    let i_label = sym >> qbits;
    let q_label = sym & (lq - 1);
    Complex64::new(pam_level(i_label, li) * scale, pam_level(q_label, lq) * scale)
}

/// Unit-average-energy alphabet; entry `s` is the point for the symbol whose
/// bits (MSB first, in-phase half then quadrature half) read as `s`.
pub fn constellation(scheme: ModScheme) -> Vec<Complex64> {
    (0..scheme.order()).map(|s| point_for_symbol(scheme, s)).collect()
}

/// Maps a bit sequence (values 0/1) onto constellation points.
pub fn map_bits(bits: &[u8], scheme: ModScheme) -> Result<ComplexVec> {
    let k = scheme.bits_per_symbol();
    if bits.len() % k != 0 {
        return Err(invalid(format!(
            "{} bits is not a multiple of {k} bits per {scheme} symbol",
            bits.len()
        )));
    }
    Ok(bits
        .chunks(k)
        .map(|chunk| {
            let sym = chunk.iter().fold(0usize, |acc, &b| (acc << 1) | (b & 1) as usize);
            point_for_symbol(scheme, sym)
        })
        .collect())
}

/// Hard-decision demapper: nearest level per axis, then Gray labels back to bits.
pub fn demap(points: &[Complex64], scheme: ModScheme) -> Vec<u8> {
    let (li, lq) = scheme.axis_levels();
    let scale = scheme.scale();
    let k = scheme.bits_per_symbol();
    let mut bits = Vec::with_capacity(points.len() * k);
    for p in points {
        let sym = if lq == 1 {
            pam_slice(p.re / scale, li)
        } else {
            let qbits = lq.trailing_zeros();
            (pam_slice(p.re / scale, li) << qbits) | pam_slice(p.im / scale, lq)
        };
        for b in (0..k).rev() {
            bits.push(((sym >> b) & 1) as u8);
        }
    }
    bits
}

/// Waveform grid of one OFDM stream.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct OfdmConfig {
    /// Subcarrier count N.
    pub n: usize,
    /// Cyclic-prefix length in samples.
    pub n_cp: usize,
    /// Subcarrier spacing in Hz.
    pub f_ss: f64,
    /// Carrier frequency in Hz.
    pub f_c: f64,
    pub num_symbols: usize,
}

/// Inclusive CP length range allowed for `n` subcarriers.
pub fn cp_bounds(n: usize) -> (usize, usize) {
    (
        (CP_FRACTION_MIN * n as f64).round() as usize,
        (CP_FRACTION_MAX * n as f64).round() as usize,
    )
}

impl OfdmConfig {
    pub fn new(n: usize, n_cp: usize, f_ss: f64, f_c: f64, num_symbols: usize) -> Result<Self> {
        let cfg = Self {
            n,
            n_cp,
            f_ss,
            f_c,
            num_symbols,
        };
        cfg.validate()?;
        Ok(cfg)
    }

    /// LTE numerology: 15 kHz spacing on a 2 GHz carrier.
    pub fn lte(n: usize, n_cp: usize, num_symbols: usize) -> Result<Self> {
        Self::new(n, n_cp, 15e3, 2e9, num_symbols)
    }

    pub fn validate(&self) -> Result<()> {
        if !SUBCARRIER_COUNTS.contains(&self.n) {
            return Err(Error::InvalidConfiguration(format!(
                "subcarrier count {} not in {:?}",
                self.n, SUBCARRIER_COUNTS
            )));
        }
        let (lo, hi) = cp_bounds(self.n);
        if self.n_cp < lo || self.n_cp > hi {
            return Err(Error::InvalidConfiguration(format!(
                "CP length {} outside [{lo}, {hi}] for N = {}",
                self.n_cp, self.n
            )));
        }
        if !(self.f_ss > 0.0 && self.f_ss.is_finite()) {
            return Err(Error::InvalidConfiguration("subcarrier spacing must be positive".into()));
        }
        if !(self.f_c > 0.0 && self.f_c.is_finite()) {
            return Err(Error::InvalidConfiguration("carrier frequency must be positive".into()));
        }
        Ok(())
    }

    /// Samples per symbol including the prefix.
    pub fn symbol_len(&self) -> usize {
        self.n + self.n_cp
    }

    pub fn sample_rate(&self) -> f64 {
        self.n as f64 * self.f_ss
    }
}

/// Time-domain OFDM symbol: `[last n_cp samples] ++ body`, where the body is
/// the IDFT of `freq_data` scaled by sqrt(N) so unit-energy constellations
/// give unit-power samples.
pub fn build_ofdm_symbol(freq_data: &[Complex64], cfg: &OfdmConfig) -> Result<ComplexVec> {
    if freq_data.len() != cfg.n {
        return Err(invalid(format!(
            "frequency grid has {} entries, expected {}",
            freq_data.len(),
            cfg.n
        )));
    }
    let mut body = freq_data.to_vec();
    fft_in_place(&mut body, true);
    let gain = (cfg.n as f64).sqrt();
    for v in body.iter_mut() {
        *v *= gain;
    }
    let mut out = Vec::with_capacity(cfg.symbol_len());
    out.extend_from_slice(&body[cfg.n - cfg.n_cp..]);
    out.extend_from_slice(&body);
    Ok(out)
}

#[derive(Clone, Debug)]
pub struct TxStream {
    pub config: OfdmConfig,
    pub samples: ComplexVec,
    pub per_symbol_mod: Vec<ModScheme>,
    /// Subcarrier values S_m[n] of each symbol, kept as ground truth.
    pub per_symbol_freq_data: Vec<ComplexVec>,
}

/// Stream with each symbol's modulation drawn uniformly from all six schemes.
pub fn generate_stream(cfg: &OfdmConfig, rng: &mut Rng) -> Result<TxStream> {
    if cfg.num_symbols == 0 {
        return Err(invalid("stream needs at least one symbol"));
    }
    let schemes: Vec<ModScheme> = (0..cfg.num_symbols)
        .map(|_| ModScheme::ALL[rng.below(ModScheme::ALL.len())])
        .collect();
    generate_stream_with(cfg, &schemes, rng)
}

/// Stream with a caller-chosen modulation per symbol and random payload bits.
pub fn generate_stream_with(cfg: &OfdmConfig, schemes: &[ModScheme], rng: &mut Rng) -> Result<TxStream> {
    cfg.validate()?;
    if schemes.len() != cfg.num_symbols || schemes.is_empty() {
        return Err(invalid(format!(
            "{} schemes given for {} symbols",
            schemes.len(),
            cfg.num_symbols
        )));
    }
    let mut samples = Vec::with_capacity(cfg.num_symbols * cfg.symbol_len());
    let mut grids = Vec::with_capacity(cfg.num_symbols);
    for &scheme in schemes {
        let bits: Vec<u8> = (0..cfg.n * scheme.bits_per_symbol()).map(|_| rng.bit()).collect();
        let grid = map_bits(&bits, scheme)?;
        samples.extend(build_ofdm_symbol(&grid, cfg)?);
        grids.push(grid);
    }
    Ok(TxStream {
        config: cfg.clone(),
        samples,
        per_symbol_mod: schemes.to_vec(),
        per_symbol_freq_data: grids,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numerics::{dft, mean_power};
    use crate::rng::Rng;
    use proptest::prelude::*;

    fn avg_energy(points: &[Complex64]) -> f64 {
        points.iter().map(|p| p.norm_sqr()).sum::<f64>() / points.len() as f64
    }

    #[test]
    fn bits_per_symbol_match_kind() {
        let bps: Vec<_> = ModScheme::ALL.iter().map(|s| s.bits_per_symbol()).collect();
        assert_eq!(bps, vec![1, 2, 4, 6, 8, 10]);
    }

    #[test]
    fn bpsk_is_antipodal() {
        let c = constellation(ModScheme::Bpsk);
        assert_eq!(c.len(), 2);
        assert!(c.contains(&Complex64::new(1.0, 0.0)));
        assert!(c.contains(&Complex64::new(-1.0, 0.0)));
    }

    #[test]
    fn qpsk_points() {
        let s = std::f64::consts::FRAC_1_SQRT_2;
        for p in constellation(ModScheme::Qpsk) {
            assert!((p.re.abs() - s).abs() < 1e-15 && (p.im.abs() - s).abs() < 1e-15);
        }
    }

    #[test]
    fn qam16_grid() {
        let pts = constellation(ModScheme::Qam16);
        // oracle: the raw {±1, ±3}^2 grid has mean energy 10
        let raw: Vec<Complex64> = [-3.0, -1.0, 1.0, 3.0]
            .iter()
            .flat_map(|&a| [-3.0, -1.0, 1.0, 3.0].map(|b| Complex64::new(a, b)))
            .collect();
        assert!((avg_energy(&raw) - 10.0).abs() < 1e-12);
        for p in &pts {
            let scaled = p * 10f64.sqrt();
            assert!(raw.iter().any(|r| (r - scaled).norm() < 1e-12));
        }
    }

    #[test]
    fn every_alphabet_has_unit_energy_and_distinct_points() {
        for s in ModScheme::ALL {
            let pts = constellation(s);
            assert!((avg_energy(&pts) - 1.0).abs() < 1e-12, "{s}");
            for i in 0..pts.len() {
                for j in i + 1..pts.len() {
                    assert!((pts[i] - pts[j]).norm() > 1e-6);
                }
            }
        }
    }

    #[test]
    fn gray_neighbours_differ_in_one_bit() {
        for s in ModScheme::ALL {
            let pts = constellation(s);
            let d_min = (0..pts.len())
                .flat_map(|i| (0..pts.len()).filter(move |&j| j != i).map(move |j| (i, j)))
                .map(|(i, j)| (pts[i] - pts[j]).norm())
                .fold(f64::INFINITY, f64::min);
            for i in 0..pts.len() {
                for j in 0..pts.len() {
                    if i != j && (pts[i] - pts[j]).norm() < d_min * 1.0001 {
                        assert_eq!((i ^ j).count_ones(), 1, "{s}: {i} vs {j}");
                    }
                }
            }
        }
    }

    #[test]
    fn map_bits_rejects_ragged_input() {
        assert!(map_bits(&[1, 0, 1], ModScheme::Qpsk).is_err());
        assert!(map_bits(&[], ModScheme::Qam64).unwrap().is_empty());
    }

    #[test]
    fn qpsk_gray_sequence() {
        let pts = map_bits(&[0, 0, 0, 1, 1, 1, 1, 0], ModScheme::Qpsk).unwrap();
        for i in 0..4 {
            for j in i + 1..4 {
                assert!(pts[i] != pts[j]);
            }
        }
    }

    #[test]
    fn qam64_payload_roundtrip() {
        let mut rng = Rng::new(11, 0);
        let bits: Vec<u8> = (0..996).map(|_| rng.bit()).collect();
        let pts = map_bits(&bits, ModScheme::Qam64).unwrap();
        // nearest-point oracle, independent of the per-axis slicer
        let alphabet = constellation(ModScheme::Qam64);
        let mut oracle_bits = Vec::new();
        for p in &pts {
            let sym = (0..alphabet.len())
                .min_by(|&a, &b| (alphabet[a] - p).norm().total_cmp(&(alphabet[b] - p).norm()))
                .unwrap();
            for b in (0..6).rev() {
                oracle_bits.push(((sym >> b) & 1) as u8);
            }
        }
        assert_eq!(oracle_bits, bits);
        assert_eq!(demap(&pts, ModScheme::Qam64), bits);
    }

    #[test]
    fn symbol_rejects_wrong_grid_length() {
        let cfg = OfdmConfig::lte(128, 16, 1).unwrap();
        assert!(build_ofdm_symbol(&vec![Complex64::new(0.0, 0.0); 127], &cfg).is_err());
    }

    #[test]
    fn zero_grid_gives_zero_symbol() {
        let cfg = OfdmConfig::lte(128, 16, 1).unwrap();
        let sym = build_ofdm_symbol(&vec![Complex64::new(0.0, 0.0); 128], &cfg).unwrap();
        assert_eq!(sym.len(), 144);
        assert!(sym.iter().all(|v| v.norm() == 0.0));
    }

    #[test]
    fn dc_impulse_gives_constant_symbol() {
        let cfg = OfdmConfig::lte(128, 16, 1).unwrap();
        let mut grid = vec![Complex64::new(0.0, 0.0); 128];
        grid[0] = Complex64::new(1.0, 0.0);
        let sym = build_ofdm_symbol(&grid, &cfg).unwrap();
        let expect = 1.0 / (128f64).sqrt();
        for v in &sym {
            assert!((v - Complex64::new(expect, 0.0)).norm() < 1e-15);
        }
    }

    #[test]
    fn forward_transform_recovers_grid() {
        let cfg = OfdmConfig::lte(128, 16, 1).unwrap();
        let mut rng = Rng::new(3, 0);
        let bits: Vec<u8> = (0..256).map(|_| rng.bit()).collect();
        let grid = map_bits(&bits, ModScheme::Qpsk).unwrap();
        let sym = build_ofdm_symbol(&grid, &cfg).unwrap();
        let back = dft(&sym[16..], false).unwrap();
        let s = (128f64).sqrt();
        for (a, b) in back.iter().zip(&grid) {
            assert!((a / s - b).norm() < 1e-9);
        }
    }

    #[test]
    fn cp_bounds_match_fractions() {
        assert_eq!(cp_bounds(128), (8, 19));
        assert_eq!(cp_bounds(2048), (123, 307));
        assert!(OfdmConfig::lte(128, 7, 1).is_err());
        assert!(OfdmConfig::lte(100, 10, 1).is_err());
        assert!(OfdmConfig::lte(4096, 400, 1).is_err());
    }

    #[test]
    fn single_symbol_stream() {
        let cfg = OfdmConfig::lte(256, 20, 1).unwrap();
        let tx = generate_stream(&cfg, &mut Rng::new(1, 1)).unwrap();
        assert_eq!(tx.samples.len(), 276);
        assert_eq!(tx.per_symbol_mod.len(), 1);
    }

    #[test]
    fn zero_symbols_rejected() {
        let cfg = OfdmConfig {
            n: 128,
            n_cp: 16,
            f_ss: 15e3,
            f_c: 2e9,
            num_symbols: 0,
        };
        assert!(generate_stream(&cfg, &mut Rng::new(1, 1)).is_err());
    }

    #[test]
    fn scheme_frequencies_are_uniform() {
        let cfg = OfdmConfig::lte(128, 10, 1000).unwrap();
        let tx = generate_stream(&cfg, &mut Rng::new(77, 1)).unwrap();
        for s in ModScheme::ALL {
            let f = tx.per_symbol_mod.iter().filter(|&&m| m == s).count() as f64 / 1000.0;
            assert!((f - 1.0 / 6.0).abs() < 0.04, "{s}: {f}");
        }
    }

    #[test]
    fn stream_has_unit_power_and_exact_prefixes() {
        let cfg = OfdmConfig::lte(128, 12, 400).unwrap();
        let tx = generate_stream(&cfg, &mut Rng::new(8, 1)).unwrap();
        let p = mean_power(&tx.samples);
        assert!((0.95..=1.05).contains(&p), "{p}");
        let r = cfg.symbol_len();
        for m in 0..cfg.num_symbols {
            let base = m * r;
            assert_eq!(
                tx.samples[base..base + cfg.n_cp],
                tx.samples[base + cfg.n..base + r]
            );
        }
    }

    #[test]
    fn clean_symbols_demap_without_errors() {
        let cfg = OfdmConfig::lte(256, 20, 12).unwrap();
        let tx = generate_stream(&cfg, &mut Rng::new(21, 1)).unwrap();
        let r = cfg.symbol_len();
        let s = (cfg.n as f64).sqrt();
        for m in 0..cfg.num_symbols {
            let body = &tx.samples[m * r + cfg.n_cp..(m + 1) * r];
            let pts: Vec<_> = dft(body, false).unwrap().iter().map(|v| v / s).collect();
            let scheme = tx.per_symbol_mod[m];
            assert_eq!(demap(&pts, scheme), demap(&tx.per_symbol_freq_data[m], scheme));
        }
    }

    proptest! {
        #[test]
        fn map_demap_roundtrip(idx in 0usize..6, seed in any::<u64>()) {
            let scheme = ModScheme::ALL[idx];
            let mut rng = Rng::new(seed, 0);
            let bits: Vec<u8> = (0..scheme.bits_per_symbol() * 40).map(|_| rng.bit()).collect();
            let pts = map_bits(&bits, scheme).unwrap();
            prop_assert_eq!(demap(&pts, scheme), bits);
        }
    }
}
