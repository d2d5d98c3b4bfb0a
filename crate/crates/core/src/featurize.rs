//! Frame extraction under the three CP scenarios, FFT to subcarrier
//! points, and rasterization into constellation hit-count images.

use std::f64::consts::PI;
use std::fmt;

use num_complex::Complex64;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::blindsync::{estimate_frac_cfo, remove_cfo};
use crate::channel::{impair, ChannelProfile, ImpairmentConfig, TimingOffset};
use crate::error::{invalid, Error, Result};
use crate::numerics::{fft_in_place, is_power_of_two, ComplexVec};
use crate::rng::{stream, Rng};
use crate::waveform::{cp_bounds, generate_stream_with, ModScheme, OfdmConfig, SUBCARRIER_COUNTS};

pub const NUM_LABELS: usize = 8;
pub const DEFAULT_RESOLUTION: usize = 128;
pub const PAPER_RESOLUTION: usize = 400;
pub const DEFAULT_AXIS_RANGE: f64 = 2.0;

/// Classifier target: 0 = CP_in, 1 = CP_included, 2..=7 = modulation.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(try_from = "u8", into = "u8")]
pub struct FrameLabel(u8);

impl FrameLabel {
    pub const CP_IN: FrameLabel = FrameLabel(0);
    pub const CP_INCLUDED: FrameLabel = FrameLabel(1);

    pub const ALL: [FrameLabel; NUM_LABELS] = [
        FrameLabel(0),
        FrameLabel(1),
        FrameLabel(2),
        FrameLabel(3),
        FrameLabel(4),
        FrameLabel(5),
        FrameLabel(6),
        FrameLabel(7),
    ];

    pub fn new(code: u8) -> Result<Self> {
        if (code as usize) < NUM_LABELS {
            Ok(FrameLabel(code))
        } else {
            Err(invalid(format!("label {code} outside 0..8")))
        }
    }

    pub fn code(self) -> u8 {
        self.0
    }

    pub fn index(self) -> usize {
        self.0 as usize
    }

    pub fn from_scheme(scheme: ModScheme) -> Self {
        FrameLabel(match scheme {
            ModScheme::Qpsk => 2,
            ModScheme::Bpsk => 3,
            ModScheme::Qam16 => 4,
            ModScheme::Qam64 => 5,
            ModScheme::Qam256 => 6,
            ModScheme::Qam1024 => 7,
        })
    }

    /// Modulation carried by labels 2..=7.
    pub fn scheme(self) -> Option<ModScheme> {
        match self.0 {
            2 => Some(ModScheme::Qpsk),
            3 => Some(ModScheme::Bpsk),
            4 => Some(ModScheme::Qam16),
            5 => Some(ModScheme::Qam64),
            6 => Some(ModScheme::Qam256),
            7 => Some(ModScheme::Qam1024),
            _ => None,
        }
    }

    pub fn is_modulation(self) -> bool {
        self.0 >= 2
    }

    pub fn name(self) -> &'static str {
        ["CP_in", "CP_included", "QPSK", "BPSK", "16QAM", "64QAM", "256QAM", "1024QAM"][self.index()]
    }
}

impl TryFrom<u8> for FrameLabel {
    type Error = Error;
    fn try_from(v: u8) -> Result<Self> {
        FrameLabel::new(v)
    }
}

impl From<FrameLabel> for u8 {
    fn from(l: FrameLabel) -> u8 {
        l.0
    }
}

impl fmt::Display for FrameLabel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

/// How a training frame is cut relative to its symbol.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum Scenario {
    /// Starts exactly on the IDFT body.
    CpPerfect,
    /// Starts on the first CP sample.
    CpIn,
    /// Starts strictly inside the CP.
    CpIncluded,
}

impl Scenario {
    pub fn for_label(label: FrameLabel) -> Scenario {
        match label.code() {
            0 => Scenario::CpIn,
            1 => Scenario::CpIncluded,
            _ => Scenario::CpPerfect,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct ConstellationImage {
    pub resolution: usize,
    pub axis_range: f64,
    /// Row-major, `grid[iy * resolution + ix]`; `ix` follows the real part
    /// and `iy` the imaginary part, both increasing from `-axis_range`.
    pub grid: Vec<f32>,
    pub label: Option<FrameLabel>,
}

impl ConstellationImage {
    pub fn zeros(resolution: usize, axis_range: f64) -> Self {
        Self {
            resolution,
            axis_range,
            grid: vec![0.0; resolution * resolution],
            label: None,
        }
    }

    pub fn at(&self, ix: usize, iy: usize) -> f32 {
        self.grid[iy * self.resolution + ix]
    }

    pub fn nonzero_pixels(&self) -> usize {
        self.grid.iter().filter(|&&v| v != 0.0).count()
    }
}

/// `r[start .. start + n]`.
pub fn extract_frame(r: &[Complex64], start: usize, n: usize) -> Result<ComplexVec> {
    match start.checked_add(n) {
        Some(end) if end <= r.len() => Ok(r[start..end].to_vec()),
        _ => Err(invalid(format!(
            "frame {start}..{} outside signal of {} samples",
            start.saturating_add(n),
            r.len()
        ))),
    }
}

/// Forward FFT scaled by 1/sqrt(N), so a clean body maps back onto its
/// unit-energy constellation.
pub fn frame_to_points(frame: &[Complex64], n: usize) -> Result<ComplexVec> {
    if frame.len() != n {
        return Err(invalid(format!("frame has {} samples, expected {n}", frame.len())));
    }
    if !is_power_of_two(n) {
        return Err(invalid(format!("FFT size {n} is not a power of two")));
    }
    let mut out = frame.to_vec();
    fft_in_place(&mut out, false);
    let g = 1.0 / (n as f64).sqrt();
    for v in out.iter_mut() {
        *v *= g;
    }
    Ok(out)
}

fn pixel(v: f64, axis_range: f64, resolution: usize) -> Option<usize> {
    let u = (v + axis_range) / (2.0 * axis_range) * resolution as f64;
    if u >= 0.0 && u < resolution as f64 {
        Some(u as usize)
    } else {
        None
    }
}

/// Hit-count histogram of the points over `[-c, c]²`, divided by its peak.
/// Points outside the square are dropped.
pub fn rasterize(points: &[Complex64], resolution: usize, axis_range: f64) -> Result<ConstellationImage> {
    if resolution < 16 {
        return Err(invalid(format!("resolution {resolution} below 16")));
    }
    if !(axis_range > 0.0 && axis_range.is_finite()) {
        return Err(invalid("axis range must be positive"));
    }
    let mut counts = vec![0u32; resolution * resolution];
    for p in points {
        if let (Some(ix), Some(iy)) = (pixel(p.re, axis_range, resolution), pixel(p.im, axis_range, resolution)) {
            counts[iy * resolution + ix] += 1;
        }
    }
    let peak = counts.iter().copied().max().unwrap_or(0);
    let grid = if peak == 0 {
        vec![0.0; counts.len()]
    } else {
        counts.iter().map(|&c| c as f32 / peak as f32).collect()
    };
    Ok(ConstellationImage {
        resolution,
        axis_range,
        grid,
        label: None,
    })
}

/// Parameter ranges for synthetic training/evaluation images. Ranges are
/// `[lo, hi]`; equal bounds fix the value.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DatasetSpec {
    pub n_values: Vec<usize>,
    pub cp_fraction: [f64; 2],
    pub f_ss: f64,
    pub f_c: f64,
    /// `"inf"` stands for a noiseless bound.
    #[serde(with = "db_range")]
    pub snr_db: [f64; 2],
    pub cfo_ppm: [f64; 2],
    pub phi: [f64; 2],
    pub channel: ChannelProfile,
    pub resolution: usize,
    pub axis_range: f64,
    pub records: usize,
    /// Labels to generate, cycled through so each gets an equal share.
    pub labels: Vec<FrameLabel>,
    /// Symbols per synthetic stream; the labelled frame is cut from one of
    /// the interior symbols.
    pub stream_symbols: usize,
}

impl Default for DatasetSpec {
    fn default() -> Self {
        Self {
            n_values: vec![128, 256],
            cp_fraction: [0.06, 0.15],
            f_ss: 15e3,
            f_c: 2e9,
            snr_db: [10.0, 25.0],
            cfo_ppm: [100.0, 500.0],
            phi: [0.0, 2.0 * PI],
            channel: ChannelProfile::sui1(),
            resolution: DEFAULT_RESOLUTION,
            axis_range: DEFAULT_AXIS_RANGE,
            records: 8000,
            labels: FrameLabel::ALL.to_vec(),
            stream_symbols: 8,
        }
    }
}

impl DatasetSpec {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::InvalidConfiguration(m));
        if self.n_values.is_empty() {
            return bad("n_values is empty".into());
        }
        if let Some(n) = self.n_values.iter().find(|n| !SUBCARRIER_COUNTS.contains(n)) {
            return bad(format!("n_values: {n} not in {SUBCARRIER_COUNTS:?}"));
        }
        let [lo, hi] = self.cp_fraction;
        if !(0.06..=0.15).contains(&lo) || !(0.06..=0.15).contains(&hi) || lo > hi {
            return bad(format!("cp_fraction [{lo}, {hi}] outside [0.06, 0.15]"));
        }
        for (name, [a, b]) in [("snr_db", self.snr_db), ("cfo_ppm", self.cfo_ppm), ("phi", self.phi)] {
            if a.is_nan() || b.is_nan() || a > b {
                return bad(format!("{name}: invalid range [{a}, {b}]"));
            }
        }
        if self.resolution < 16 {
            return bad(format!("resolution {} below 16", self.resolution));
        }
        if !(self.axis_range > 0.0) {
            return bad("axis_range must be positive".into());
        }
        if self.labels.is_empty() {
            return bad("labels is empty".into());
        }
        if self.stream_symbols < 7 {
            return bad("stream_symbols must be at least 7".into());
        }
        self.channel.validate()
    }
}

/// JSON has no infinity, so infinite bounds travel as `"inf"`/`"-inf"`.
mod db_range {
    use serde::{de::Error as _, Deserialize, Deserializer, Serialize, Serializer};

    #[derive(Serialize, Deserialize)]
    #[serde(untagged)]
    enum Bound {
        Num(f64),
        Text(String),
    }

    pub fn serialize<S: Serializer>(v: &[f64; 2], s: S) -> Result<S::Ok, S::Error> {
        let enc = |x: f64| {
            if x.is_infinite() {
                Bound::Text(if x > 0.0 { "inf" } else { "-inf" }.into())
            } else {
                Bound::Num(x)
            }
        };
        [enc(v[0]), enc(v[1])].serialize(s)
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<[f64; 2], D::Error> {
        let raw = <[Bound; 2]>::deserialize(d)?;
        let mut out = [0.0; 2];
        for (o, b) in out.iter_mut().zip(raw) {
            *o = match b {
                Bound::Num(x) => x,
                Bound::Text(t) if t == "inf" => f64::INFINITY,
                Bound::Text(t) if t == "-inf" => f64::NEG_INFINITY,
                Bound::Text(t) => return Err(D::Error::custom(format!("expected a number or \"inf\", got {t:?}"))),
            };
        }
        Ok(out)
    }
}

#[derive(Clone, Debug)]
pub struct Dataset {
    pub resolution: usize,
    pub axis_range: f64,
    pub images: Vec<ConstellationImage>,
}

impl Dataset {
    pub fn len(&self) -> usize {
        self.images.len()
    }

    pub fn is_empty(&self) -> bool {
        self.images.is_empty()
    }

    pub fn labels(&self) -> Vec<FrameLabel> {
        self.images.iter().map(|im| im.label.expect("labelled dataset")).collect()
    }

    pub fn label_counts(&self) -> [usize; NUM_LABELS] {
        let mut counts = [0; NUM_LABELS];
        for l in self.labels() {
            counts[l.index()] += 1;
        }
        counts
    }
}

fn draw(range: [f64; 2], rng: &mut Rng) -> f64 {
    if range[0] == range[1] {
        range[0]
    } else {
        rng.uniform_in(range[0], range[1])
    }
}

/// One labelled image. The frame is cut after running the blind CFO
/// estimator over the stream (with the true grid) and removing the
/// fractional offset it finds.
pub fn make_record(spec: &DatasetSpec, label: FrameLabel, rng: &Rng) -> Result<ConstellationImage> {
    let mut r = rng.substream(stream::SCENARIO);
    let n = spec.n_values[r.below(spec.n_values.len())];
    let (cp_lo, cp_hi) = cp_bounds(n);
    let frac = draw(spec.cp_fraction, &mut r);
    let n_cp = ((frac * n as f64).round() as usize).clamp(cp_lo, cp_hi);
    let cfg = OfdmConfig::new(n, n_cp, spec.f_ss, spec.f_c, spec.stream_symbols)?;

    let mut wave_rng = rng.substream(stream::WAVEFORM);
    let mut schemes: Vec<ModScheme> = (0..cfg.num_symbols)
        .map(|_| ModScheme::ALL[wave_rng.below(ModScheme::ALL.len())])
        .collect();
    let target = 1 + r.below(cfg.num_symbols - 2);
    if let Some(s) = label.scheme() {
        schemes[target] = s;
    }
    let tx = generate_stream_with(&cfg, &schemes, &mut wave_rng)?;

    let imp = ImpairmentConfig {
        cfo_ppm: draw(spec.cfo_ppm, &mut r),
        phi: draw(spec.phi, &mut r),
        snr_db: draw(spec.snr_db, &mut r),
        channel: spec.channel.clone(),
        timing: TimingOffset::Random,
    };
    let rx = impair(&tx, &imp, &rng.substream(stream::IMPAIRMENT))?;
    let truth = &rx.truth;
    let f_s = cfg.sample_rate();
    let f_hat = estimate_frac_cfo(&rx.samples, n, n_cp, truth.cp_start(0), f_s / n as f64)?;
    let corrected = remove_cfo(&rx.samples, f_hat, f_s);

    let body = truth.body_start(target);
    let start = match Scenario::for_label(label) {
        Scenario::CpPerfect => body,
        Scenario::CpIn => body - n_cp,
        Scenario::CpIncluded => body - n_cp + 1 + r.below(n_cp - 1),
    };
    let points = frame_to_points(&extract_frame(&corrected, start, n)?, n)?;
    let mut image = rasterize(&points, spec.resolution, spec.axis_range)?;
    image.label = Some(label);
    Ok(image)
}

/// `spec.records` images; record `i` carries `spec.labels[i % len]` and is
/// drawn from its own substream, so the result does not depend on how the
/// work is scheduled.
pub fn make_dataset(spec: &DatasetSpec, rng: &Rng) -> Result<Dataset> {
    spec.validate()?;
    let records = rng.substream(stream::RECORDS);
    let images = (0..spec.records)
        .into_par_iter()
        .map(|i| {
            let label = spec.labels[i % spec.labels.len()];
            make_record(spec, label, &records.substream(i as u64))
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(Dataset {
        resolution: spec.resolution,
        axis_range: spec.axis_range,
        images,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::Rng;
    use crate::waveform::{constellation, generate_stream};
    use proptest::prelude::*;

    fn c(re: f64, im: f64) -> Complex64 {
        Complex64::new(re, im)
    }

    #[test]
    fn label_codes() {
        assert_eq!(FrameLabel::from_scheme(ModScheme::Qpsk).code(), 2);
        assert_eq!(FrameLabel::from_scheme(ModScheme::Bpsk).code(), 3);
        assert_eq!(FrameLabel::from_scheme(ModScheme::Qam1024).code(), 7);
        for s in ModScheme::ALL {
            assert_eq!(FrameLabel::from_scheme(s).scheme(), Some(s));
        }
        assert!(FrameLabel::new(8).is_err());
        assert_eq!(FrameLabel::CP_IN.scheme(), None);
    }

    #[test]
    fn extract_bounds() {
        let r: Vec<_> = (0..128).map(|i| c(i as f64, 0.0)).collect();
        assert_eq!(extract_frame(&r, 0, 128).unwrap(), r);
        assert!(extract_frame(&r, 1, 128).is_err());
        assert!(extract_frame(&r, usize::MAX, 2).is_err());
    }

    #[test]
    fn clean_body_lands_on_qpsk_points() {
        let cfg = OfdmConfig::lte(128, 16, 3).unwrap();
        let tx = crate::waveform::generate_stream_with(
            &cfg,
            &[ModScheme::Qpsk; 3],
            &mut Rng::new(3, 1),
        )
        .unwrap();
        let frame = extract_frame(&tx.samples, cfg.symbol_len() + cfg.n_cp, 128).unwrap();
        let pts = frame_to_points(&frame, 128).unwrap();
        let alphabet = constellation(ModScheme::Qpsk);
        for p in &pts {
            let d = alphabet.iter().map(|a| (a - p).norm()).fold(f64::INFINITY, f64::min);
            assert!(d < 1e-9);
        }
        assert!(frame_to_points(&frame[1..], 128).is_err());
        assert!(frame_to_points(&vec![c(0.0, 0.0); 128], 128).unwrap().iter().all(|v| v.norm() == 0.0));
    }

    #[test]
    fn residual_offset_smears_points() {
        let cfg = OfdmConfig::lte(128, 16, 1).unwrap();
        let tx = crate::waveform::generate_stream_with(&cfg, &[ModScheme::Qpsk], &mut Rng::new(4, 1)).unwrap();
        let body = &tx.samples[cfg.n_cp..];
        let off = crate::channel::apply_cfo(body, 0.3 * cfg.f_ss, 0.0, cfg.sample_rate());
        let pts = frame_to_points(&off, 128).unwrap();
        let alphabet = constellation(ModScheme::Qpsk);
        // ICI oracle: the direct DFT of the rotated body, evaluated bin by bin
        let s = (128f64).sqrt();
        for (k, p) in pts.iter().enumerate() {
            let direct: Complex64 = off
                .iter()
                .enumerate()
                .map(|(i, v)| v * Complex64::from_polar(1.0, -2.0 * PI * (i * k % 128) as f64 / 128.0))
                .sum::<Complex64>()
                / s;
            assert!((direct - p).norm() < 1e-9);
        }
        let min_dist = pts
            .iter()
            .map(|p| alphabet.iter().map(|a| (a - p).norm()).fold(f64::INFINITY, f64::min))
            .fold(f64::INFINITY, f64::min);
        assert!(min_dist > 0.05, "{min_dist}");
    }

    #[test]
    fn rasterize_edge_cases() {
        let img = rasterize(&[], 128, 2.0).unwrap();
        assert_eq!(img.nonzero_pixels(), 0);
        let img = rasterize(&[c(0.0, 0.0)], 128, 2.0).unwrap();
        assert_eq!(img.nonzero_pixels(), 1);
        assert_eq!(img.at(64, 64), 1.0);
        let img = rasterize(&[c(2.5, 0.0), c(0.0, -2.0001), c(2.0, 0.0)], 64, 2.0).unwrap();
        assert_eq!(img.nonzero_pixels(), 0);
        assert!(rasterize(&[], 8, 2.0).is_err());
        assert!(rasterize(&[], 32, 0.0).is_err());
    }

    #[test]
    fn clean_frames_collapse_to_alphabet() {
        let cfg = OfdmConfig::lte(256, 20, 6).unwrap();
        let tx = generate_stream(&cfg, &mut Rng::new(6, 1)).unwrap();
        for m in 0..cfg.num_symbols {
            let start = m * cfg.symbol_len() + cfg.n_cp;
            let pts = frame_to_points(&tx.samples[start..start + 256], 256).unwrap();
            let img = rasterize(&pts, 128, 2.0).unwrap();
            assert!(img.nonzero_pixels() <= tx.per_symbol_mod[m].order());
        }
    }

    fn toy_spec(records: usize) -> DatasetSpec {
        DatasetSpec {
            records,
            resolution: 32,
            ..DatasetSpec::default()
        }
    }

    #[test]
    fn dataset_is_stratified() {
        let ds = make_dataset(&toy_spec(80), &Rng::new(1, 0)).unwrap();
        assert_eq!(ds.label_counts(), [10; 8]);
    }

    #[test]
    fn dataset_is_deterministic() {
        let a = make_dataset(&toy_spec(16), &Rng::new(2, 0)).unwrap();
        let b = make_dataset(&toy_spec(16), &Rng::new(2, 0)).unwrap();
        assert_eq!(a.images, b.images);
    }

    #[test]
    fn noiseless_perfect_frames_sit_on_the_reference_grid() {
        let spec = DatasetSpec {
            records: 24,
            snr_db: [f64::INFINITY; 2],
            cfo_ppm: [0.0; 2],
            phi: [0.0; 2],
            channel: ChannelProfile::flat(),
            labels: (2..8).map(|c| FrameLabel::new(c).unwrap()).collect(),
            ..DatasetSpec::default()
        };
        let ds = make_dataset(&spec, &Rng::new(3, 0)).unwrap();
        for img in &ds.images {
            let scheme = img.label.unwrap().scheme().unwrap();
            let reference = rasterize(&constellation(scheme), spec.resolution, spec.axis_range).unwrap();
            // alphabet points can sit exactly on a pixel edge, where FFT
            // round-off picks either neighbour
            let res = spec.resolution as isize;
            for (i, &v) in img.grid.iter().enumerate() {
                if v > 0.0 {
                    let (iy, ix) = (i as isize / res, i as isize % res);
                    let near = (-1..=1).any(|dy| {
                        (-1..=1).any(|dx| {
                            let (x, y) = (ix + dx, iy + dy);
                            (0..res).contains(&x) && (0..res).contains(&y) && reference.at(x as usize, y as usize) > 0.0
                        })
                    });
                    assert!(near, "{scheme}: pixel {i} off grid");
                }
            }
        }
    }

    #[test]
    fn cp_scenarios_never_carry_modulation_labels() {
        for l in FrameLabel::ALL {
            let sc = Scenario::for_label(l);
            assert_eq!(sc == Scenario::CpPerfect, l.is_modulation());
        }
    }

    fn pts_strategy() -> impl Strategy<Value = Vec<Complex64>> {
        proptest::collection::vec((-2.2f64..2.2, -2.2f64..2.2), 0..200)
            .prop_map(|v| v.into_iter().map(|(a, b)| c(a, b)).collect())
    }

    proptest! {
        #[test]
        fn rasterize_ignores_point_order(mut pts in pts_strategy(), seed in any::<u64>()) {
            let a = rasterize(&pts, 64, 2.0).unwrap();
            Rng::new(seed, 0).shuffle(&mut pts);
            let b = rasterize(&pts, 64, 2.0).unwrap();
            prop_assert_eq!(a.grid, b.grid);
        }

        #[test]
        fn conjugation_flips_rows(pts in pts_strategy()) {
            let res = 64;
            let a = rasterize(&pts, res, 2.0).unwrap();
            let conj: Vec<_> = pts.iter().map(|p| p.conj()).collect();
            let b = rasterize(&conj, res, 2.0).unwrap();
            for iy in 0..res {
                for ix in 0..res {
                    prop_assert_eq!(a.at(ix, iy), b.at(ix, res - 1 - iy));
                }
            }
        }

        #[test]
        fn quarter_turn_rotates_image(pts in pts_strategy()) {
            let res = 64;
            let a = rasterize(&pts, res, 2.0).unwrap();
            let rot: Vec<_> = pts.iter().map(|p| p * c(0.0, 1.0)).collect();
            let b = rasterize(&rot, res, 2.0).unwrap();
            // (x, y) -> (-y, x): column res-1-iy, row ix
            for iy in 0..res {
                for ix in 0..res {
                    prop_assert_eq!(a.at(ix, iy) > 0.0, b.at(res - 1 - iy, ix) > 0.0);
                }
            }
        }

        #[test]
        fn image_mass_bounded(pts in pts_strategy()) {
            let img = rasterize(&pts, 32, 2.0).unwrap();
            let peak = img.grid.iter().cloned().fold(0.0f32, f32::max);
            prop_assert!(img.grid.iter().all(|&v| (0.0..=1.0).contains(&v)));
            // un-normalized mass equals the in-range point count
            if peak > 0.0 {
                let mass: f32 = img.grid.iter().sum();
                prop_assert!(mass <= pts.len() as f32 + 1e-3);
            }
        }
    }
}
