//! Blind receiver chain (sync, CFO removal, per-symbol frame sweep and
//! classification) plus confusion matrices and accuracy sweeps.

use std::fmt::Write as _;

use log::debug;
use serde::{Deserialize, Serialize};

use crate::blindsync::{default_candidates, remove_cfo, synchronize, SyncEstimate, DETECTION_FLOOR};
use crate::channel::StreamTruth;
use crate::classifier::Model;
use crate::error::{invalid, Error, Result};
use crate::featurize::{extract_frame, frame_to_points, make_dataset, rasterize, DatasetSpec, FrameLabel, NUM_LABELS};
use crate::rng::Rng;
use crate::numerics::ComplexVec;
use num_complex::Complex64;

pub const CANDIDATES_PER_SYMBOL: usize = 9;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PipelineConfig {
    /// Sample rate of the capture, which is also the monitored bandwidth.
    pub monitored_bandwidth: f64,
    pub subcarrier_candidates: Vec<usize>,
    pub axis_range: f64,
    /// Stop after this many symbols.
    pub max_symbols: Option<usize>,
}

impl PipelineConfig {
    pub fn new(monitored_bandwidth: f64) -> Self {
        Self {
            monitored_bandwidth,
            subcarrier_candidates: default_candidates(),
            axis_range: crate::featurize::DEFAULT_AXIS_RANGE,
            max_symbols: None,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SymbolDecision {
    pub symbol_index: usize,
    pub frame_start: usize,
    pub label: FrameLabel,
    pub confidence: f64,
    /// False when every candidate frame was classified as a CP error.
    pub resolved: bool,
    /// Filled in from the truth sidecar for scoring only.
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub truth: Option<FrameLabel>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PipelineOutput {
    pub sync: SyncEstimate,
    pub decisions: Vec<SymbolDecision>,
}

/// Candidate starts for the symbol whose CP begins at `base`: nine frames
/// from `base + ncp/2` to `base + 3 ncp/2`, the middle one on the body.
pub fn candidate_starts(base: usize, n_cp: usize) -> Vec<usize> {
    let stride = (n_cp / 8).max(1);
    let body = base + n_cp;
    let half = (CANDIDATES_PER_SYMBOL / 2) as isize;
    (0..CANDIDATES_PER_SYMBOL as isize)
        .filter_map(|i| {
            let s = body as isize + (i - half) * stride as isize;
            (s >= 0).then_some(s as usize)
        })
        .collect()
}

fn classify_frames(
    r: &[Complex64],
    starts: &[usize],
    n: usize,
    model: &Model,
    axis_range: f64,
) -> Result<Vec<(FrameLabel, f64)>> {
    let res = model.config().input_resolution;
    let images = starts
        .iter()
        .map(|&s| rasterize(&frame_to_points(&extract_frame(r, s, n)?, n)?, res, axis_range))
        .collect::<Result<Vec<_>>>()?;
    model.predict_many(&images.iter().collect::<Vec<_>>(), CANDIDATES_PER_SYMBOL)
}

/// Runs the blind receiver on raw samples. Nothing about the transmitter
/// is consulted; the stream must be long enough for synchronization.
pub fn run_blind_pipeline(r: &[Complex64], model: &Model, cfg: &PipelineConfig) -> Result<PipelineOutput> {
    let sync = synchronize(r, &cfg.subcarrier_candidates, cfg.monitored_bandwidth)?;
    if sync.peak_score < DETECTION_FLOOR {
        return Err(Error::NoOfdmDetected {
            score: sync.peak_score,
            floor: DETECTION_FLOOR,
        });
    }
    debug!("sync: {sync:?}");
    let corrected: ComplexVec = remove_cfo(r, sync.f_frac_hat, cfg.monitored_bandwidth);
    let (n, ncp) = (sync.n_hat, sync.n_cp_hat);
    let mut base = sync.shift_hat;
    let mut decisions = Vec::new();
    while cfg.max_symbols.is_none_or(|m| decisions.len() < m) {
        let starts: Vec<usize> = candidate_starts(base, ncp)
            .into_iter()
            .filter(|s| s + n <= corrected.len())
            .collect();
        if starts.is_empty() || base + ncp + n > corrected.len() {
            break;
        }
        let preds = classify_frames(&corrected, &starts, n, model, cfg.axis_range)?;
        let pick = |modulation: bool| {
            let mut best: Option<usize> = None;
            for (i, (l, c)) in preds.iter().enumerate() {
                if l.is_modulation() == modulation && best.is_none_or(|b| *c > preds[b].1) {
                    best = Some(i);
                }
            }
            best
        };
        let (idx, resolved) = match pick(true) {
            Some(i) => (i, true),
            None => (pick(false).expect("non-empty candidates"), false),
        };
        let start = starts[idx];
        decisions.push(SymbolDecision {
            symbol_index: decisions.len(),
            frame_start: start,
            label: preds[idx].0,
            confidence: preds[idx].1,
            resolved,
            truth: None,
        });
        // the winning offset corrects the symbol grid
        let body = if resolved { start } else { base + ncp };
        base = body + n;
    }
    Ok(PipelineOutput { sync, decisions })
}

/// Fills `truth` from the sidecar: each decision maps to the symbol whose
/// body start is nearest its frame start.
pub fn attach_truth(decisions: &mut [SymbolDecision], truth: &StreamTruth) {
    let r = truth.config.symbol_len() as f64;
    let first = truth.body_start(0) as f64;
    for d in decisions {
        let m = ((d.frame_start as f64 - first) / r).round();
        d.truth = (m >= 0.0 && (m as usize) < truth.per_symbol_mod.len())
            .then(|| FrameLabel::from_scheme(truth.per_symbol_mod[m as usize]));
    }
}

#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct ConfusionMatrix {
    /// `counts[truth][predicted]`.
    pub counts: [[u64; NUM_LABELS]; NUM_LABELS],
}

impl ConfusionMatrix {
    pub fn add(&mut self, truth: FrameLabel, predicted: FrameLabel) {
        self.counts[truth.index()][predicted.index()] += 1;
    }

    pub fn row_total(&self, truth: FrameLabel) -> u64 {
        self.counts[truth.index()].iter().sum()
    }

    /// Row-normalized percentages; empty rows stay zero.
    pub fn percentages(&self) -> [[f64; NUM_LABELS]; NUM_LABELS] {
        let mut p = [[0.0; NUM_LABELS]; NUM_LABELS];
        for (t, row) in self.counts.iter().enumerate() {
            let total: u64 = row.iter().sum();
            if total > 0 {
                for (j, &c) in row.iter().enumerate() {
                    p[t][j] = 100.0 * c as f64 / total as f64;
                }
            }
        }
        p
    }

    /// Fraction of `truth` rows predicted correctly, NaN for an empty row.
    pub fn accuracy(&self, truth: FrameLabel) -> f64 {
        let total = self.row_total(truth);
        if total == 0 {
            f64::NAN
        } else {
            self.counts[truth.index()][truth.index()] as f64 / total as f64
        }
    }

    /// Mean per-class accuracy over the given labels, skipping empty rows.
    pub fn mean_accuracy(&self, labels: &[FrameLabel]) -> f64 {
        let v: Vec<f64> = labels.iter().map(|&l| self.accuracy(l)).filter(|a| !a.is_nan()).collect();
        if v.is_empty() {
            f64::NAN
        } else {
            v.iter().sum::<f64>() / v.len() as f64
        }
    }

    /// Mean accuracy over the six modulation classes.
    pub fn modulation_accuracy(&self) -> f64 {
        self.mean_accuracy(&MODULATION_LABELS)
    }

    /// Share of 256-QAM and 1024-QAM rows predicted as the other one.
    pub fn high_order_confusion(&self) -> f64 {
        let (a, b) = (6, 7);
        let total = self.counts[a].iter().sum::<u64>() + self.counts[b].iter().sum::<u64>();
        if total == 0 {
            return f64::NAN;
        }
        (self.counts[a][b] + self.counts[b][a]) as f64 / total as f64
    }

    pub fn to_report(&self) -> ConfusionReport {
        ConfusionReport {
            labels: FrameLabel::ALL.iter().map(|l| l.name().to_string()).collect(),
            counts: self.counts,
            percentages: self.percentages(),
        }
    }
}

pub const MODULATION_LABELS: [FrameLabel; 6] = [
    FrameLabel::ALL[2],
    FrameLabel::ALL[3],
    FrameLabel::ALL[4],
    FrameLabel::ALL[5],
    FrameLabel::ALL[6],
    FrameLabel::ALL[7],
];

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ConfusionReport {
    pub labels: Vec<String>,
    pub counts: [[u64; NUM_LABELS]; NUM_LABELS],
    pub percentages: [[f64; NUM_LABELS]; NUM_LABELS],
}

/// Tallies predictions against aligned truth labels.
pub fn score(predicted: &[FrameLabel], truth: &[FrameLabel]) -> Result<ConfusionMatrix> {
    if predicted.len() != truth.len() {
        return Err(invalid(format!(
            "{} predictions but {} truth labels",
            predicted.len(),
            truth.len()
        )));
    }
    let mut m = ConfusionMatrix::default();
    for (&p, &t) in predicted.iter().zip(truth) {
        m.add(t, p);
    }
    Ok(m)
}

/// Scores pipeline decisions that carry a truth label; unresolved symbols
/// count with their CP-error label.
pub fn score_decisions(decisions: &[SymbolDecision]) -> Result<ConfusionMatrix> {
    let (p, t): (Vec<_>, Vec<_>) = decisions.iter().filter_map(|d| d.truth.map(|t| (d.label, t))).unzip();
    score(&p, &t)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "axis", content = "values")]
pub enum SweepAxis {
    SnrDb(Vec<f64>),
    Subcarriers(Vec<usize>),
}

impl SweepAxis {
    pub fn name(&self) -> &'static str {
        match self {
            SweepAxis::SnrDb(_) => "snr_db",
            SweepAxis::Subcarriers(_) => "subcarriers",
        }
    }

    fn points(&self) -> Vec<f64> {
        match self {
            SweepAxis::SnrDb(v) => v.clone(),
            SweepAxis::Subcarriers(v) => v.iter().map(|&n| n as f64).collect(),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SweepRow {
    pub value: f64,
    /// Per-label accuracy in [0, 1], indexed by label code.
    pub accuracy: [f64; NUM_LABELS],
    /// Mean over the six modulation classes.
    pub modulation_mean: f64,
    /// Mean over all eight labels.
    pub overall_mean: f64,
    pub confusion: ConfusionMatrix,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SweepTable {
    pub axis: String,
    pub rows: Vec<SweepRow>,
}

impl SweepTable {
    /// Long format: `axis,class,accuracy`.
    pub fn to_csv(&self) -> String {
        let mut s = format!("{},class,accuracy\n", self.axis);
        for row in &self.rows {
            for l in FrameLabel::ALL {
                let _ = writeln!(s, "{},{},{:.6}", row.value, l.name(), row.accuracy[l.index()]);
            }
        }
        s
    }

    /// Whitespace-separated columns in percent, one row per axis value,
    /// ready for gnuplot's `using 1:N`.
    pub fn to_gnuplot(&self) -> String {
        let mut s = format!("# {}", self.axis);
        for l in FrameLabel::ALL {
            let _ = write!(s, " {}", l.name());
        }
        s.push_str(" modulation_mean overall_mean\n");
        for row in &self.rows {
            let _ = write!(s, "{}", row.value);
            for a in row.accuracy {
                let _ = write!(s, " {:.4}", 100.0 * a);
            }
            let _ = writeln!(s, " {:.4} {:.4}", 100.0 * row.modulation_mean, 100.0 * row.overall_mean);
        }
        s
    }
}

/// Image-level accuracy at every axis value: a fresh test set is drawn from
/// `fixed` with the swept parameter pinned, then classified.
pub fn sweep(axis: &SweepAxis, fixed: &DatasetSpec, model: &Model, rng: &Rng) -> Result<SweepTable> {
    let mut rows = Vec::new();
    for (i, value) in axis.points().into_iter().enumerate() {
        let mut spec = fixed.clone();
        match axis {
            SweepAxis::SnrDb(_) => spec.snr_db = [value, value],
            SweepAxis::Subcarriers(_) => spec.n_values = vec![value as usize],
        }
        spec.resolution = model.config().input_resolution;
        let data = make_dataset(&spec, &rng.substream(i as u64))?;
        let images: Vec<_> = data.images.iter().collect();
        let preds: Vec<FrameLabel> = model.predict_many(&images, 64)?.into_iter().map(|p| p.0).collect();
        let confusion = score(&preds, &data.labels())?;
        let mut accuracy = [f64::NAN; NUM_LABELS];
        for l in FrameLabel::ALL {
            accuracy[l.index()] = confusion.accuracy(l);
        }
        rows.push(SweepRow {
            value,
            accuracy,
            modulation_mean: confusion.modulation_accuracy(),
            overall_mean: confusion.mean_accuracy(&FrameLabel::ALL),
            confusion,
        });
    }
    Ok(SweepTable {
        axis: axis.name().to_string(),
        rows,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn l(c: u8) -> FrameLabel {
        FrameLabel::new(c).unwrap()
    }

    #[test]
    fn perfect_predictions_give_identity() {
        let labels: Vec<_> = (0..8).flat_map(|c| vec![l(c); 3]).collect();
        let m = score(&labels, &labels).unwrap();
        let p = m.percentages();
        for i in 0..8 {
            assert_eq!(p[i][i], 100.0);
            assert_eq!(m.row_total(l(i as u8)), 3);
        }
        assert_eq!(m.modulation_accuracy(), 1.0);
    }

    #[test]
    fn single_confusion_lands_in_its_cell() {
        let m = score(&[l(4)], &[l(2)]).unwrap();
        assert_eq!(m.percentages()[2][4], 100.0);
        assert_eq!(m.accuracy(l(2)), 0.0);
        assert!(m.accuracy(l(3)).is_nan());
        assert!(score(&[l(1)], &[]).is_err());
    }

    #[test]
    fn rows_sum_to_hundred() {
        let mut rng = Rng::new(1, 0);
        let p: Vec<_> = (0..500).map(|_| l(rng.below(8) as u8)).collect();
        let t: Vec<_> = (0..500).map(|_| l(rng.below(8) as u8)).collect();
        let m = score(&p, &t).unwrap();
        let total: u64 = m.counts.iter().flatten().sum();
        assert_eq!(total, 500);
        for row in m.percentages() {
            assert!((row.iter().sum::<f64>() - 100.0).abs() < 0.01);
        }
    }

    #[test]
    fn high_order_confusion_counts_both_directions() {
        let m = score(&[l(7), l(6), l(6), l(7)], &[l(6), l(6), l(7), l(7)]).unwrap();
        assert_eq!(m.high_order_confusion(), 0.5);
    }

    #[test]
    fn candidates_span_half_prefix_either_side() {
        let s = candidate_starts(100, 16);
        assert_eq!(s.len(), 9);
        assert_eq!(s[0], 108);
        assert_eq!(s[4], 116);
        assert_eq!(s[8], 124);
        let s = candidate_starts(0, 7);
        assert_eq!(s, (3..=11).collect::<Vec<_>>());
    }

    #[test]
    fn empty_axis_gives_empty_table() {
        let model = Model::new(crate::classifier::ModelConfig::tiny()).unwrap();
        let t = sweep(&SweepAxis::SnrDb(vec![]), &DatasetSpec::default(), &model, &Rng::new(0, 0)).unwrap();
        assert!(t.rows.is_empty());
        assert_eq!(t.to_csv(), "snr_db,class,accuracy\n");
    }
}
