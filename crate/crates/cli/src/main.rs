//! `blindscope`: dataset generation, training, evaluation and blind
//! classification of OFDM captures.

mod config;

use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use blindscope_core::channel::{impair, ImpairmentConfig, TimingOffset};
use blindscope_core::classifier::{load_model, save_model, train, Model};
use blindscope_core::evalpipe::{attach_truth, run_blind_pipeline, score_decisions, sweep, PipelineConfig, SweepAxis};
use blindscope_core::featurize::make_dataset;
use blindscope_core::formats::{read_capture, read_dataset, read_truth, write_capture, write_dataset, write_truth, Capture};
use blindscope_core::numerics::gaussian_noise;
use blindscope_core::rng::{stream, Rng};
use blindscope_core::waveform::{cp_bounds, generate_stream, OfdmConfig};
use blindscope_core::Error;
use clap::{Parser, Subcommand, ValueEnum};
use log::info;
use serde::Serialize;

use config::RunConfig;

#[derive(Parser, Debug)]
#[command(name = "blindscope", version, about = "Blind OFDM modulation detection")]
struct Cli {
    #[command(subcommand)]
    command: Command,
    /// JSON run configuration; built-in desk defaults when omitted.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Master seed (overrides the config).
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Worker threads for dataset generation and evaluation.
    #[arg(long, global = true)]
    jobs: Option<usize>,
    /// Output directory (overrides the config).
    #[arg(long, global = true)]
    out: Option<PathBuf>,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Write the training dataset and demo captures.
    Generate,
    /// Train a model on a generated dataset.
    Train {
        /// Dataset directory [default: <out>/dataset].
        #[arg(long)]
        dataset: Option<PathBuf>,
    },
    /// Accuracy sweeps over SNR and/or subcarrier count.
    Eval {
        /// Checkpoint [default: <out>/model.bsm].
        #[arg(long)]
        model: Option<PathBuf>,
        #[arg(long, value_enum, default_value_t = Axis::Both)]
        axis: Axis,
    },
    /// Blind per-symbol classification of one capture.
    Classify {
        /// Checkpoint [default: <out>/model.bsm].
        #[arg(long)]
        model: Option<PathBuf>,
        /// Truth sidecar; read only after all decisions are made, to score them.
        #[arg(long)]
        truth: Option<PathBuf>,
        capture: PathBuf,
    },
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
enum Axis {
    Snr,
    Subcarriers,
    Both,
}

fn exit_code(e: &Error) -> u8 {
    match e {
        Error::InvalidArgument(_) | Error::InvalidConfiguration(_) => 2,
        Error::Format { .. } | Error::InvalidDataset(_) => 3,
        Error::NoOfdmDetected { .. } => 4,
        _ => 1,
    }
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<(), Error> {
    let mut s = serde_json::to_string_pretty(value)?;
    s.push('\n');
    fs::write(path, s)?;
    Ok(())
}

fn generate(cfg: &RunConfig) -> Result<(), Error> {
    let out = &cfg.out_dir;
    let root = Rng::new(cfg.seed, 0);
    let data = make_dataset(&cfg.dataset, &root)?;
    let dir = out.join("dataset");
    let manifest = write_dataset(&dir, &data, &cfg.dataset, cfg.seed)?;
    println!("dataset: {} records in {} (label counts {:?})", manifest.records, dir.display(), manifest.label_counts);

    let caps = out.join("captures");
    fs::create_dir_all(&caps)?;
    let cap_rng = Rng::new(cfg.seed, stream::CAPTURE);
    let c = &cfg.capture;
    let n = c.subcarriers;
    for k in 0..c.count {
        let r = cap_rng.substream(k as u64);
        let mut draw = r.substream(stream::SCENARIO);
        let (lo, hi) = cp_bounds(n);
        let n_cp = lo + draw.below(hi - lo + 1);
        let ofdm = OfdmConfig::new(n, n_cp, cfg.dataset.f_ss, cfg.dataset.f_c, c.num_symbols)?;
        let tx = generate_stream(&ofdm, &mut r.substream(stream::WAVEFORM))?;
        let imp = ImpairmentConfig {
            cfo_ppm: draw.uniform_in(cfg.dataset.cfo_ppm[0], cfg.dataset.cfo_ppm[1]),
            phi: draw.uniform_in(0.0, std::f64::consts::TAU),
            snr_db: c.snr_db,
            channel: cfg.dataset.channel.clone(),
            timing: TimingOffset::Random,
        };
        let rx = impair(&tx, &imp, &r.substream(stream::IMPAIRMENT))?;
        let path = caps.join(format!("capture_{k}.bsiq"));
        write_capture(&path, &Capture { sample_rate: ofdm.sample_rate(), samples: rx.samples })?;
        write_truth(&caps.join(format!("capture_{k}.truth.json")), &rx.truth)?;
        println!("capture: {} (N={n}, Ncp={n_cp}, {} symbols)", path.display(), c.num_symbols);
    }
    let noise_len = c.num_symbols * (n + cp_bounds(n).1);
    let noise = gaussian_noise(noise_len, 1.0, &mut cap_rng.substream(u64::MAX));
    let path = caps.join("noise.bsiq");
    write_capture(&path, &Capture { sample_rate: n as f64 * cfg.dataset.f_ss, samples: noise })?;
    println!("capture: {} (noise only)", path.display());
    Ok(())
}

fn train_cmd(cfg: &RunConfig, dataset: &Path) -> Result<(), Error> {
    let (data, manifest) = read_dataset(dataset)?;
    if manifest.resolution != cfg.model.input_resolution {
        return Err(Error::InvalidDataset(format!(
            "dataset resolution {} does not match model.input_resolution {}",
            manifest.resolution, cfg.model.input_resolution
        )));
    }
    info!("training on {} images from {}", data.len(), dataset.display());
    let (model, report) = train(&data, &cfg.model, &cfg.train)?;
    fs::create_dir_all(&cfg.out_dir)?;
    let ckpt = cfg.out_dir.join("model.bsm");
    save_model(&model, &ckpt)?;
    write_json(&cfg.out_dir.join("train_report.json"), &report)?;
    write_json(
        &cfg.out_dir.join("timing.json"),
        &serde_json::json!({ "train_wall_clock_secs": report.wall_clock_secs }),
    )?;
    println!(
        "model: {} (best epoch {}, validation accuracy {:.2}%)",
        ckpt.display(),
        report.best_epoch,
        100.0 * report.best_val_accuracy
    );
    Ok(())
}

fn eval_cmd(cfg: &RunConfig, model_path: &Path, axis: Axis) -> Result<(), Error> {
    let model = load_model(model_path)?;
    let mut spec = cfg.dataset.clone();
    spec.records = cfg.eval.records;
    let root = Rng::new(cfg.seed, stream::EVAL);
    let mut axes = Vec::new();
    if axis != Axis::Subcarriers {
        axes.push((SweepAxis::SnrDb(cfg.eval.snr_axis.clone()), spec.clone(), 0));
    }
    if axis != Axis::Snr {
        let fixed = blindscope_core::featurize::DatasetSpec {
            snr_db: [cfg.eval.fixed_snr_db; 2],
            ..spec.clone()
        };
        axes.push((SweepAxis::Subcarriers(cfg.eval.subcarrier_axis.clone()), fixed, 1));
    }
    fs::create_dir_all(&cfg.out_dir)?;
    for (ax, fixed, id) in axes {
        let table = sweep(&ax, &fixed, &model, &root.substream(id))?;
        let name = ax.name();
        fs::write(cfg.out_dir.join(format!("eval_{name}.csv")), table.to_csv())?;
        fs::write(cfg.out_dir.join(format!("eval_{name}.dat")), table.to_gnuplot())?;
        let confusion: Vec<_> = table
            .rows
            .iter()
            .map(|r| serde_json::json!({ name: r.value, "confusion": r.confusion.to_report() }))
            .collect();
        write_json(&cfg.out_dir.join(format!("confusion_{name}.json")), &confusion)?;
        println!("{name:>12}  modulation mean  all-label mean");
        for r in &table.rows {
            println!("{:>12}  {:>14.2}%  {:>13.2}%", r.value, 100.0 * r.modulation_mean, 100.0 * r.overall_mean);
        }
    }
    Ok(())
}

fn classify_cmd(cfg: &RunConfig, model_path: &Path, capture: &Path, truth: Option<&Path>) -> Result<(), Error> {
    let model: Model = load_model(model_path)?;
    let cap = read_capture(capture)?;
    let mut pcfg = PipelineConfig::new(cap.sample_rate);
    pcfg.axis_range = cfg.dataset.axis_range;
    let mut out = run_blind_pipeline(&cap.samples, &model, &pcfg)?;
    let s = &out.sync;
    println!(
        "sync: N={} Ncp={} shift={} f_frac={:.1} Hz (score {:.3})",
        s.n_hat, s.n_cp_hat, s.shift_hat, s.f_frac_hat, s.peak_score
    );
    if let Some(t) = truth {
        attach_truth(&mut out.decisions, &read_truth(t)?);
    }
    println!("{:>6} {:>8} {:>12} {:>10} {:>9}{}", "symbol", "start", "label", "confidence", "resolved", if truth.is_some() { "        truth" } else { "" });
    for d in &out.decisions {
        let t = d.truth.map(|t| format!(" {:>12}", t.name())).unwrap_or_default();
        println!("{:>6} {:>8} {:>12} {:>10.4} {:>9}{t}", d.symbol_index, d.frame_start, d.label.name(), d.confidence, d.resolved);
    }
    if truth.is_some() {
        let m = score_decisions(&out.decisions)?;
        let correct: u64 = (0..8).map(|i| m.counts[i][i]).sum();
        let total: u64 = m.counts.iter().flatten().sum();
        println!("correct: {correct}/{total}");
    }
    fs::create_dir_all(&cfg.out_dir)?;
    let stem = capture.file_stem().and_then(|s| s.to_str()).unwrap_or("capture");
    let path = cfg.out_dir.join(format!("{stem}.decisions.json"));
    write_json(&path, &out)?;
    println!("decisions: {}", path.display());
    Ok(())
}

fn run(cli: Cli) -> Result<(), Error> {
    let mut cfg = match &cli.config {
        Some(p) => RunConfig::load(p)?,
        None => RunConfig::default(),
    };
    if let Some(s) = cli.seed {
        cfg.seed = s;
    }
    if let Some(o) = cli.out {
        cfg.out_dir = o;
    }
    cfg.model.seed = cfg.seed;
    cfg.train.seed = cfg.seed;
    if let Some(j) = cli.jobs {
        if j == 0 {
            return Err(Error::InvalidConfiguration("--jobs must be positive".into()));
        }
        // only fails if a pool already exists, which cannot happen here
        let _ = rayon::ThreadPoolBuilder::new().num_threads(j).build_global();
    }
    let default_model = cfg.out_dir.join("model.bsm");
    match cli.command {
        Command::Generate => generate(&cfg),
        Command::Train { dataset } => {
            let d = dataset.unwrap_or_else(|| cfg.out_dir.join("dataset"));
            train_cmd(&cfg, &d)
        }
        Command::Eval { model, axis } => eval_cmd(&cfg, &model.unwrap_or(default_model), axis),
        Command::Classify { model, truth, capture } => {
            classify_cmd(&cfg, &model.unwrap_or(default_model), &capture, truth.as_deref())
        }
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::new().filter_or("BLINDSCOPE_LOG", "info")).init();
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e @ Error::NoOfdmDetected { .. }) => {
            eprintln!("no OFDM detected: {e}");
            ExitCode::from(exit_code(&e))
        }
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(exit_code(&e))
        }
    }
}
