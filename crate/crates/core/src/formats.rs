//! On-disk formats: I/Q captures with their truth sidecar, and datasets.
//!
//! Capture (`.bsiq`, integers little-endian):
//!
//! | offset | size | field                                        |
//! |--------|------|----------------------------------------------|
//! | 0      | 4    | magic `BSIQ`                                 |
//! | 4      | 4    | header length `H` (u32)                      |
//! | 8      | H    | UTF-8 JSON [`CaptureHeader`]                 |
//! | 8+H    | 8n   | `n` samples as (f32 I, f32 Q) pairs          |
//!
//! The header holds only what a receiver would know (sample rate and sample
//! count). Transmitter parameters live in a separate JSON sidecar.
//!
//! Dataset directory:
//!
//! - `manifest.json`: [`DatasetManifest`]
//! - `images.f32`: `records × resolution²` f32 values, image after image,
//!   each row-major with rows indexed by the imaginary axis
//! - `labels.u8`: one label code per record

use std::fs;
use std::path::Path;

use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::channel::StreamTruth;
use crate::error::{format_err, Error, Result};
use crate::featurize::{ConstellationImage, Dataset, DatasetSpec, FrameLabel, NUM_LABELS};

pub const CAPTURE_MAGIC: &[u8; 4] = b"BSIQ";
pub const CAPTURE_VERSION: u32 = 1;
pub const DATASET_FORMAT: &str = "blindscope-dataset";
pub const DATASET_VERSION: u32 = 1;
pub const IMAGES_FILE: &str = "images.f32";
pub const LABELS_FILE: &str = "labels.u8";
pub const MANIFEST_FILE: &str = "manifest.json";

pub fn generator_version() -> String {
    format!("blindscope {}", env!("CARGO_PKG_VERSION"))
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CaptureHeader {
    pub version: u32,
    pub sample_rate: f64,
    pub num_samples: usize,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Capture {
    pub sample_rate: f64,
    pub samples: Vec<Complex64>,
}

pub fn capture_to_bytes(cap: &Capture) -> Result<Vec<u8>> {
    let header = serde_json::to_vec(&CaptureHeader {
        version: CAPTURE_VERSION,
        sample_rate: cap.sample_rate,
        num_samples: cap.samples.len(),
    })?;
    let mut out = Vec::with_capacity(8 + header.len() + 8 * cap.samples.len());
    out.extend_from_slice(CAPTURE_MAGIC);
    out.extend_from_slice(&(header.len() as u32).to_le_bytes());
    out.extend_from_slice(&header);
    for s in &cap.samples {
        out.extend_from_slice(&(s.re as f32).to_le_bytes());
        out.extend_from_slice(&(s.im as f32).to_le_bytes());
    }
    Ok(out)
}

pub fn capture_from_bytes(buf: &[u8]) -> Result<Capture> {
    if buf.len() < 8 {
        return Err(format_err(buf.len() as u64, "capture ends inside the 8-byte preamble"));
    }
    if &buf[..4] != CAPTURE_MAGIC {
        return Err(format_err(0, "not a capture file (bad magic)"));
    }
    let hlen = u32::from_le_bytes(buf[4..8].try_into().unwrap()) as usize;
    if buf.len() - 8 < hlen {
        return Err(format_err(
            buf.len() as u64,
            format!("capture ends inside the {hlen}-byte header"),
        ));
    }
    let header: CaptureHeader = serde_json::from_slice(&buf[8..8 + hlen])
        .map_err(|e| format_err(8, format!("bad capture header: {e}")))?;
    if header.version != CAPTURE_VERSION {
        return Err(format_err(8, format!("unsupported capture version {}", header.version)));
    }
    if !(header.sample_rate > 0.0 && header.sample_rate.is_finite()) {
        return Err(format_err(8, "sample_rate must be positive"));
    }
    let data = &buf[8 + hlen..];
    let want = header.num_samples.checked_mul(8).unwrap_or(usize::MAX);
    if data.len() < want {
        return Err(format_err(
            buf.len() as u64,
            format!("capture truncated: header declares {} samples, file holds {}", header.num_samples, data.len() / 8),
        ));
    }
    if data.len() > want {
        return Err(format_err((8 + hlen + want) as u64, "trailing bytes after the last sample"));
    }
    let samples = data
        .chunks_exact(8)
        .map(|c| {
            Complex64::new(
                f32::from_le_bytes(c[..4].try_into().unwrap()) as f64,
                f32::from_le_bytes(c[4..].try_into().unwrap()) as f64,
            )
        })
        .collect();
    Ok(Capture {
        sample_rate: header.sample_rate,
        samples,
    })
}

pub fn write_capture(path: &Path, cap: &Capture) -> Result<()> {
    fs::write(path, capture_to_bytes(cap)?)?;
    Ok(())
}

pub fn read_capture(path: &Path) -> Result<Capture> {
    capture_from_bytes(&fs::read(path)?)
}

pub fn write_truth(path: &Path, truth: &StreamTruth) -> Result<()> {
    fs::write(path, serde_json::to_vec_pretty(truth)?)?;
    Ok(())
}

pub fn read_truth(path: &Path) -> Result<StreamTruth> {
    Ok(serde_json::from_slice(&fs::read(path)?)?)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DatasetManifest {
    pub format: String,
    pub version: u32,
    pub generator: String,
    pub seed: u64,
    pub spec: DatasetSpec,
    pub records: usize,
    pub resolution: usize,
    pub axis_range: f64,
    pub label_counts: [usize; NUM_LABELS],
    pub images_file: String,
    pub labels_file: String,
}

pub fn write_dataset(dir: &Path, data: &Dataset, spec: &DatasetSpec, seed: u64) -> Result<DatasetManifest> {
    fs::create_dir_all(dir)?;
    let manifest = DatasetManifest {
        format: DATASET_FORMAT.into(),
        version: DATASET_VERSION,
        generator: generator_version(),
        seed,
        spec: spec.clone(),
        records: data.len(),
        resolution: data.resolution,
        axis_range: data.axis_range,
        label_counts: data.label_counts(),
        images_file: IMAGES_FILE.into(),
        labels_file: LABELS_FILE.into(),
    };
    let mut blob = Vec::with_capacity(data.len() * data.resolution * data.resolution * 4);
    for im in &data.images {
        for v in &im.grid {
            blob.extend_from_slice(&v.to_le_bytes());
        }
    }
    let labels: Vec<u8> = data.labels().iter().map(|l| l.code()).collect();
    fs::write(dir.join(IMAGES_FILE), blob)?;
    fs::write(dir.join(LABELS_FILE), labels)?;
    let mut json = serde_json::to_string_pretty(&manifest)?;
    json.push('\n');
    fs::write(dir.join(MANIFEST_FILE), json)?;
    Ok(manifest)
}

pub fn read_manifest(dir: &Path) -> Result<DatasetManifest> {
    let text = fs::read_to_string(dir.join(MANIFEST_FILE))?;
    let m: DatasetManifest = serde_json::from_str(&text)?;
    if m.format != DATASET_FORMAT || m.version != DATASET_VERSION {
        return Err(Error::InvalidDataset(format!(
            "unsupported dataset format {} v{}",
            m.format, m.version
        )));
    }
    Ok(m)
}

/// Reads a dataset written by [`write_dataset`], checking every file
/// against the manifest.
pub fn read_dataset(dir: &Path) -> Result<(Dataset, DatasetManifest)> {
    let m = read_manifest(dir)?;
    let px = m.resolution * m.resolution;
    let blob = fs::read(dir.join(&m.images_file))?;
    let want = m.records * px * 4;
    if blob.len() != want {
        return Err(format_err(
            blob.len().min(want) as u64,
            format!("{} holds {} bytes, manifest implies {want}", m.images_file, blob.len()),
        ));
    }
    let labels = fs::read(dir.join(&m.labels_file))?;
    if labels.len() != m.records {
        return Err(format_err(
            labels.len().min(m.records) as u64,
            format!("{} holds {} labels, manifest declares {}", m.labels_file, labels.len(), m.records),
        ));
    }
    let mut images = Vec::with_capacity(m.records);
    let mut counts = [0usize; NUM_LABELS];
    for (i, (chunk, &code)) in blob.chunks_exact(px * 4).zip(&labels).enumerate() {
        let label = FrameLabel::new(code).map_err(|_| format_err(i as u64, format!("label code {code} out of range")))?;
        counts[label.index()] += 1;
        images.push(ConstellationImage {
            resolution: m.resolution,
            axis_range: m.axis_range,
            grid: chunk.chunks_exact(4).map(|c| f32::from_le_bytes(c.try_into().unwrap())).collect(),
            label: Some(label),
        });
    }
    if counts != m.label_counts {
        return Err(Error::InvalidDataset(format!(
            "label counts {counts:?} disagree with manifest {:?}",
            m.label_counts
        )));
    }
    Ok((
        Dataset {
            resolution: m.resolution,
            axis_range: m.axis_range,
            images,
        },
        m,
    ))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::featurize::make_dataset;
    use crate::rng::Rng;

    fn cap() -> Capture {
        Capture {
            sample_rate: 1.92e6,
            samples: (0..50).map(|i| Complex64::new(i as f64 * 0.5, -(i as f64) * 0.25)).collect(),
        }
    }

    fn offset(e: Error) -> u64 {
        match e {
            Error::Format { offset, .. } => offset,
            other => panic!("expected format error, got {other}"),
        }
    }

    #[test]
    fn capture_roundtrip() {
        let c = cap();
        assert_eq!(capture_from_bytes(&capture_to_bytes(&c).unwrap()).unwrap(), c);
    }

    #[test]
    fn capture_errors_name_offsets() {
        let bytes = capture_to_bytes(&cap()).unwrap();
        assert_eq!(offset(capture_from_bytes(&bytes[..5]).unwrap_err()), 5);
        assert_eq!(offset(capture_from_bytes(&bytes[..20]).unwrap_err()), 20);
        let cut = bytes.len() - 3;
        let e = capture_from_bytes(&bytes[..cut]).unwrap_err();
        assert!(e.to_string().contains("truncated"));
        assert_eq!(offset(e), cut as u64);
        let mut bad = bytes.clone();
        bad[0] = b'X';
        assert_eq!(offset(capture_from_bytes(&bad).unwrap_err()), 0);
        let mut bad = bytes.clone();
        bad[9] = b'#';
        assert_eq!(offset(capture_from_bytes(&bad).unwrap_err()), 8);
    }

    #[test]
    fn dataset_roundtrip_is_bit_identical() {
        let spec = DatasetSpec {
            records: 16,
            resolution: 32,
            snr_db: [f64::INFINITY, f64::INFINITY],
            ..DatasetSpec::default()
        };
        let ds = make_dataset(&spec, &Rng::new(5, 0)).unwrap();
        let dir = tempfile::tempdir().unwrap();
        write_dataset(dir.path(), &ds, &spec, 5).unwrap();
        let (back, m) = read_dataset(dir.path()).unwrap();
        assert_eq!(back.images, ds.images);
        assert_eq!(m.spec, spec);
        assert_eq!(m.seed, 5);

        let first = fs::read(dir.path().join(MANIFEST_FILE)).unwrap();
        write_dataset(dir.path(), &ds, &spec, 5).unwrap();
        assert_eq!(fs::read(dir.path().join(MANIFEST_FILE)).unwrap(), first);

        let labels = dir.path().join(LABELS_FILE);
        fs::write(&labels, vec![0u8; 15]).unwrap();
        assert_eq!(offset(read_dataset(dir.path()).unwrap_err()), 15);
    }
}
