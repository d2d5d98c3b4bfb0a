//! Run configuration: one JSON file, every field optional.

use std::path::{Path, PathBuf};

use blindscope_core::classifier::{ModelConfig, TrainConfig};
use blindscope_core::featurize::DatasetSpec;
use blindscope_core::waveform::SUBCARRIER_COUNTS;
use blindscope_core::Error;
use serde::{Deserialize, Serialize};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CaptureConfig {
    /// Demo captures written by `generate`.
    pub count: usize,
    pub num_symbols: usize,
    pub subcarriers: usize,
    pub snr_db: f64,
}

impl Default for CaptureConfig {
    fn default() -> Self {
        Self {
            count: 2,
            num_symbols: 20,
            subcarriers: 128,
            snr_db: 25.0,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EvalConfig {
    pub snr_axis: Vec<f64>,
    pub subcarrier_axis: Vec<usize>,
    /// SNR held fixed during the subcarrier sweep.
    pub fixed_snr_db: f64,
    /// Test images per axis value.
    pub records: usize,
}

impl Default for EvalConfig {
    fn default() -> Self {
        Self {
            snr_axis: vec![10.0, 15.0, 20.0, 25.0],
            subcarrier_axis: vec![128, 256, 512],
            fixed_snr_db: 20.0,
            records: 1600,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub seed: u64,
    pub dataset: DatasetSpec,
    pub model: ModelConfig,
    pub train: TrainConfig,
    pub eval: EvalConfig,
    pub capture: CaptureConfig,
    pub out_dir: PathBuf,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            seed: 1,
            dataset: DatasetSpec::default(),
            model: ModelConfig::default(),
            train: TrainConfig::default(),
            eval: EvalConfig::default(),
            capture: CaptureConfig::default(),
            out_dir: PathBuf::from("out"),
        }
    }
}

fn line_of(text: &str, field: &str) -> Option<usize> {
    let key = field.rsplit('.').next()?;
    let key = key.split('[').next()?;
    let needle = format!("\"{key}\"");
    text.lines().position(|l| l.contains(&needle)).map(|i| i + 1)
}

fn field_error(text: &str, origin: &str, field: &str, msg: String) -> Error {
    let at = match line_of(text, field) {
        Some(line) => format!("{origin}:{line}"),
        None => origin.to_string(),
    };
    Error::InvalidConfiguration(format!("{at}: field `{field}`: {msg}"))
}

fn range_ok(r: [f64; 2]) -> bool {
    !r[0].is_nan() && !r[1].is_nan() && r[0] <= r[1]
}

impl RunConfig {
    pub fn parse(text: &str, origin: &str) -> Result<Self, Error> {
        let de = &mut serde_json::Deserializer::from_str(text);
        let cfg: RunConfig = serde_path_to_error::deserialize(de).map_err(|e| {
            let path = e.path().to_string();
            let inner = e.into_inner();
            Error::InvalidConfiguration(format!(
                "{origin}:{}:{}: field `{path}`: {inner}",
                inner.line(),
                inner.column()
            ))
        })?;
        cfg.check(text, origin)?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self, Error> {
        let text = std::fs::read_to_string(path)?;
        Self::parse(&text, &path.display().to_string())
    }

    /// Range checks; the first failure names its field and, when the field
    /// appears in the source text, its line.
    pub fn check(&self, text: &str, origin: &str) -> Result<(), Error> {
        let fail = |field: &str, msg: String| Err(field_error(text, origin, field, msg));
        let d = &self.dataset;
        if d.n_values.is_empty() {
            return fail("dataset.n_values", "must not be empty".into());
        }
        for (i, n) in d.n_values.iter().enumerate() {
            if !SUBCARRIER_COUNTS.contains(n) {
                return fail(
                    &format!("dataset.n_values[{i}]"),
                    format!("{n} is not one of {SUBCARRIER_COUNTS:?}"),
                );
            }
        }
        let [lo, hi] = d.cp_fraction;
        if !(range_ok(d.cp_fraction) && lo >= 0.06 && hi <= 0.15) {
            return fail("dataset.cp_fraction", format!("[{lo}, {hi}] must be an ordered range inside [0.06, 0.15]"));
        }
        if !range_ok(d.snr_db) {
            return fail("dataset.snr_db", format!("{:?} is not an ordered range", d.snr_db));
        }
        if !(range_ok(d.cfo_ppm) && d.cfo_ppm[0] >= 0.0) {
            return fail("dataset.cfo_ppm", format!("{:?} must be an ordered non-negative range", d.cfo_ppm));
        }
        if !range_ok(d.phi) {
            return fail("dataset.phi", format!("{:?} is not an ordered range", d.phi));
        }
        for (name, v) in [("dataset.f_ss", d.f_ss), ("dataset.f_c", d.f_c), ("dataset.axis_range", d.axis_range)] {
            if !(v > 0.0 && v.is_finite()) {
                return fail(name, format!("{v} must be positive"));
            }
        }
        if d.records == 0 {
            return fail("dataset.records", "must be positive".into());
        }
        if d.stream_symbols < 7 {
            return fail("dataset.stream_symbols", format!("{} is below 7", d.stream_symbols));
        }
        if d.resolution != self.model.input_resolution {
            return fail(
                "dataset.resolution",
                format!("{} differs from model.input_resolution {}", d.resolution, self.model.input_resolution),
            );
        }
        if let Err(e) = d.channel.validate() {
            return fail("dataset.channel", e.to_string());
        }
        if let Err(e) = self.model.validate() {
            return fail("model", e.to_string());
        }
        if let Err(e) = self.train.validate() {
            return fail("train", e.to_string());
        }
        for (i, n) in self.eval.subcarrier_axis.iter().enumerate() {
            if !SUBCARRIER_COUNTS.contains(n) {
                return fail(&format!("eval.subcarrier_axis[{i}]"), format!("{n} is not one of {SUBCARRIER_COUNTS:?}"));
            }
        }
        if self.eval.snr_axis.iter().any(|v| v.is_nan()) {
            return fail("eval.snr_axis", "contains NaN".into());
        }
        if self.eval.records == 0 {
            return fail("eval.records", "must be positive".into());
        }
        if !SUBCARRIER_COUNTS.contains(&self.capture.subcarriers) {
            return fail("capture.subcarriers", format!("{} is not one of {SUBCARRIER_COUNTS:?}", self.capture.subcarriers));
        }
        if self.capture.num_symbols < 7 {
            return fail("capture.num_symbols", format!("{} is below 7", self.capture.num_symbols));
        }
        d.validate().map_err(|e| field_error(text, origin, "dataset", e.to_string()))
    }
}
