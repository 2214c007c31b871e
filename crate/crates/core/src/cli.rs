//! Command-line interface.

use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::{Deserialize, Serialize};

use crate::checkpoint::{dataset_fingerprint, load_checkpoint, save_checkpoint, CheckpointMeta};
use crate::dataio::{
    load_csv, read_spikes, synth_dataset, window, write_atomic, write_spikes, CsvSchema, NormStats, SpikeMeta, SynthSpec,
    WindowedDataset,
};
use crate::error::{Error, Result};
use crate::evaluation::{encode_windows, evaluate_scheme, fold_split, EvalOptions, EvalRow};
use crate::metrics::{inject_noise, NoiseMode, NoiseSpec};
use crate::snn::{classify, train, CubaNetwork, NetworkConfig, Sample, TrainConfig};
use crate::types::{EncodingConfig, Scheme, ThresholdBanks};

/// `git describe` of the build, or the crate version outside a checkout.
pub const TOOL_VERSION: &str = env!("SPIKENC_VERSION");

#[derive(Debug, Parser)]
#[command(name = "spikenc", version = TOOL_VERSION, about = "Spike encoding experiments for 1-D sensor signals")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Encode every window of a dataset into SPK1 files.
    Encode(EncodeArgs),
    /// Compare schemes and write a CSV or JSON report.
    Evaluate(EvaluateArgs),
    /// Train a classifier and write a checkpoint.
    Train(TrainArgs),
    /// Classify one spike file with a checkpoint.
    Infer(InferArgs),
    /// Inject spike errors into a spike file.
    Perturb(PerturbArgs),
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
pub enum SchemeArg {
    RateUniform,
    RateNormal,
    RateBeta,
    TtfsLinear,
    TtfsLog,
    /// Binary with `--bits` bits.
    Binary,
    Binary6,
    Binary10,
    Delta,
}

impl SchemeArg {
    fn scheme(self) -> (Scheme, Option<usize>) {
        match self {
            SchemeArg::RateUniform => (Scheme::RateUniform, None),
            SchemeArg::RateNormal => (Scheme::RateNormal, None),
            SchemeArg::RateBeta => (Scheme::RateBeta, None),
            SchemeArg::TtfsLinear => (Scheme::TtfsLinear, None),
            SchemeArg::TtfsLog => (Scheme::TtfsLog, None),
            SchemeArg::Binary => (Scheme::Binary, None),
            SchemeArg::Binary6 => (Scheme::Binary, Some(6)),
            SchemeArg::Binary10 => (Scheme::Binary, Some(10)),
            SchemeArg::Delta => (Scheme::DeltaMod, None),
        }
    }

    fn all() -> Vec<SchemeArg> {
        vec![
            SchemeArg::RateUniform,
            SchemeArg::RateNormal,
            SchemeArg::RateBeta,
            SchemeArg::TtfsLinear,
            SchemeArg::TtfsLog,
            SchemeArg::Binary6,
            SchemeArg::Binary10,
            SchemeArg::Delta,
        ]
    }
}

#[derive(Clone, Debug, Args)]
pub struct DataArgs {
    /// Window length in seconds for CSV input.
    #[arg(long, default_value_t = 2.0)]
    pub window: f64,
    /// Window stride in seconds (defaults to the window length).
    #[arg(long)]
    pub stride: Option<f64>,
}

#[derive(Clone, Debug, Args)]
pub struct EncodingArgs {
    #[arg(long, value_enum, default_value = "rate-uniform")]
    pub scheme: SchemeArg,
    /// Time steps per input sample for rate and TTFS encodings.
    #[arg(long, default_value_t = 50)]
    pub steps: usize,
    /// Bits per value for `--scheme binary`.
    #[arg(long, default_value_t = 6)]
    pub bits: usize,
    /// Delta thresholds applied to every channel, e.g. `0.001,0.002,0.004`.
    #[arg(long, value_delimiter = ',')]
    pub thresholds: Option<Vec<f64>>,
    /// Linear up-sampling factor before delta modulation.
    #[arg(long, default_value_t = 5)]
    pub interp: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
}

impl EncodingArgs {
    fn config(&self) -> Result<EncodingConfig> {
        let (scheme, bits) = self.scheme.scheme();
        let cfg = EncodingConfig {
            steps_per_sample: self.steps,
            n_bits: bits.unwrap_or(self.bits),
            thresholds: match &self.thresholds {
                Some(t) => ThresholdBanks::uniform(t.clone()),
                None => ThresholdBanks::default(),
            },
            interp_factor: self.interp,
            seed: self.seed,
            ..EncodingConfig::new(scheme)
        };
        cfg.validate()?;
        Ok(cfg)
    }
}

#[derive(Debug, Args)]
pub struct EncodeArgs {
    /// Sensor CSV, or `synth[:CLASSESxPER_CLASS]` for the synthetic dataset.
    pub input: String,
    pub out_dir: PathBuf,
    #[command(flatten)]
    pub encoding: EncodingArgs,
    #[command(flatten)]
    pub data: DataArgs,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
pub enum ReportFormat {
    Csv,
    Json,
}

#[derive(Clone, Debug, Args)]
pub struct TrainingArgs {
    #[arg(long, default_value_t = 100)]
    pub epochs: usize,
    #[arg(long, default_value_t = 1e-3)]
    pub lr: f64,
    #[arg(long, default_value_t = 32)]
    pub batch: usize,
    /// Hidden layer sizes.
    #[arg(long, value_delimiter = ',', default_value = "256,64")]
    pub hidden: Vec<usize>,
    #[arg(long, default_value_t = 0.1)]
    pub dropout: f64,
    /// Train with sigmoid spikes instead of hard thresholds.
    #[arg(long)]
    pub soft: bool,
}

impl TrainingArgs {
    fn network(&self, seed: u64) -> NetworkConfig {
        NetworkConfig {
            hidden: self.hidden.clone(),
            dropout_p: self.dropout,
            seed,
            ..NetworkConfig::default()
        }
    }

    fn train(&self, seed: u64) -> TrainConfig {
        TrainConfig {
            epochs: self.epochs,
            learning_rate: self.lr,
            batch_size: self.batch,
            soft_mode: self.soft,
            seed,
            ..TrainConfig::default()
        }
    }
}

#[derive(Debug, Args)]
pub struct EvaluateArgs {
    /// Sensor CSV, or `synth[:CLASSESxPER_CLASS]`.
    #[arg(default_value = "synth")]
    pub input: String,
    /// Schemes to compare (all eight variants by default).
    #[arg(long, value_enum, value_delimiter = ',')]
    pub schemes: Option<Vec<SchemeArg>>,
    #[arg(long, value_enum, default_value = "json")]
    pub report: ReportFormat,
    /// Report path; stdout when omitted.
    #[arg(long)]
    pub out: Option<PathBuf>,
    #[arg(long, default_value_t = 50)]
    pub steps: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Spike error probabilities of the robustness columns.
    #[arg(long, value_delimiter = ',', default_value = "0.001,0.01,0.1")]
    pub noise_p: Vec<f64>,
    /// Held-out fold (the last one by default).
    #[arg(long)]
    pub test_fold: Option<usize>,
    #[command(flatten)]
    pub training: TrainingArgs,
    #[command(flatten)]
    pub data: DataArgs,
}

#[derive(Debug, Args)]
pub struct TrainArgs {
    /// Directory of labelled spike files, a sensor CSV, or `synth[:CxN]`.
    pub data: String,
    /// Checkpoint path.
    #[arg(long)]
    pub out: PathBuf,
    /// Held-out fold used to pick the best epoch; training accuracy otherwise.
    #[arg(long)]
    pub test_fold: Option<usize>,
    #[command(flatten)]
    pub encoding: EncodingArgs,
    #[command(flatten)]
    pub training: TrainingArgs,
    #[command(flatten)]
    pub data_args: DataArgs,
}

#[derive(Debug, Args)]
pub struct InferArgs {
    #[arg(long)]
    pub model: PathBuf,
    pub input: PathBuf,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
pub enum NoiseModeArg {
    Flip,
    Signed,
}

#[derive(Debug, Args)]
pub struct PerturbArgs {
    pub input: PathBuf,
    #[arg(long)]
    pub noise_p: f64,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long)]
    pub out: PathBuf,
    /// Error model; follows the encoding scheme by default.
    #[arg(long, value_enum)]
    pub mode: Option<NoiseModeArg>,
}

/// Resolved provenance written with every report.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ReportConfig {
    pub dataset: String,
    pub window_seconds: f64,
    pub stride_seconds: f64,
    pub variants: Vec<EncodingConfig>,
    pub options: EvalOptions,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Report {
    pub tool_version: String,
    pub config: ReportConfig,
    pub rows: Vec<EvalRow>,
}

impl Report {
    pub fn to_csv(&self) -> Result<String> {
        let mut out = format!(
            "# tool_version={}\n# config={}\n",
            self.tool_version,
            serde_json::to_string(&self.config)?
        );
        let mut w = csv::Writer::from_writer(Vec::new());
        let mut header = vec![
            "scheme".to_string(),
            "tensor_shape".into(),
            "time_step_ms".into(),
            "afr_percent".into(),
            "snr_db".into(),
            "accuracy".into(),
        ];
        header.extend(self.config.options.p_list.iter().map(|p| format!("accuracy_drop_p{p}")));
        header.extend(["dynamic_energy_mj".into(), "execution_time_ms".into()]);
        w.write_record(&header)?;
        for row in &self.rows {
            let [a, b, c] = row.tensor_shape;
            let mut rec = vec![
                row.scheme.clone(),
                format!("{a}x{b}x{c}"),
                format!("{}", row.time_step_ms),
                format!("{:.4}", row.afr_percent),
                row.snr_db.map_or("inf".into(), |s| format!("{s:.4}")),
                format!("{:.4}", row.accuracy),
            ];
            rec.extend(row.robustness.iter().map(|r| format!("{:.4}", r.accuracy_drop)));
            rec.extend([row.dynamic_energy_mj.clone(), row.execution_time_ms.clone()]);
            w.write_record(&rec)?;
        }
        let body = w.into_inner().map_err(|e| Error::Io(e.into_error()))?;
        out.push_str(&String::from_utf8(body).expect("csv output is utf-8"));
        Ok(out)
    }
}

fn parse_synth(spec: &str) -> Result<Option<SynthSpec>> {
    let Some(rest) = spec.strip_prefix("synth") else {
        return Ok(None);
    };
    let mut out = SynthSpec::default();
    if rest.is_empty() {
        return Ok(Some(out));
    }
    let bad = || Error::Config(format!("synthetic dataset must look like synth:3x100, got `{spec}`"));
    let dims = rest.strip_prefix(':').ok_or_else(bad)?;
    let (c, n) = dims.split_once('x').ok_or_else(bad)?;
    out.classes = c.parse().map_err(|_| bad())?;
    out.per_class = n.parse().map_err(|_| bad())?;
    Ok(Some(out))
}

/// Loads a dataset spec. CSV data is min-max normalized with statistics of
/// every user except the held-out one.
fn load_dataset(spec: &str, data: &DataArgs, test_fold: Option<usize>) -> Result<WindowedDataset> {
    if let Some(synth) = parse_synth(spec)? {
        return Ok(synth_dataset(&synth));
    }
    let schema = CsvSchema::default();
    let records = load_csv(Path::new(spec), &schema)?;
    if records.is_empty() {
        return Err(Error::EmptyDataset);
    }
    let held_out = test_fold.unwrap_or(records.len() - 1);
    let fit_on: Vec<_> = records
        .iter()
        .enumerate()
        .filter(|(i, _)| records.len() == 1 || *i != held_out)
        .map(|(_, r)| &r.signal)
        .collect();
    let (stats, _) = NormStats::fit_signals(&fit_on)?;
    let normalized = records
        .into_iter()
        .map(|r| {
            Ok(crate::dataio::SessionRecord {
                signal: stats.apply(&r.signal)?,
                ..r
            })
        })
        .collect::<Result<Vec<_>>>()?;
    let ds = window(&normalized, data.window, data.stride.unwrap_or(data.window), &schema.vocabulary);
    if ds.is_empty() {
        return Err(Error::EmptyDataset);
    }
    Ok(ds)
}

fn pooled_afr(samples: &[Sample]) -> f64 {
    let positions: usize = samples.iter().map(|s| s.tensor.len()).sum();
    if positions == 0 {
        return 0.0;
    }
    let spikes: u64 = samples
        .iter()
        .flat_map(|s| s.tensor.as_slice())
        .map(|s| u64::from(s.unsigned_abs()))
        .sum();
    spikes as f64 / positions as f64
}

fn cmd_encode(args: &EncodeArgs, out: &mut dyn Write) -> Result<()> {
    let cfg = args.encoding.config()?;
    let ds = load_dataset(&args.input, &args.data, None)?;
    if ds.is_empty() {
        return Err(Error::EmptyDataset);
    }
    fs::create_dir_all(&args.out_dir)?;
    let samples = encode_windows(&ds.windows, &cfg)?;
    for (i, (sample, w)) in samples.iter().zip(&ds.windows).enumerate() {
        let meta = SpikeMeta {
            config: cfg.clone(),
            window_steps: sample.tensor.window_steps(),
            label: Some(w.label),
            label_name: ds.class_names.get(w.label).cloned(),
            fold: Some(w.fold),
        };
        let path = args.out_dir.join(format!("window_{i:05}.spk"));
        write_spikes(&path, &sample.tensor, Some(&meta))?;
    }
    let [t, c, n] = samples[0].tensor.dims();
    writeln!(
        out,
        "scheme={} windows={} shape={t}x{c}x{n} AFR={:.3}%",
        cfg.label(),
        samples.len(),
        100.0 * pooled_afr(&samples)
    )?;
    Ok(())
}

fn cmd_evaluate(args: &EvaluateArgs, out: &mut dyn Write) -> Result<()> {
    let ds = load_dataset(&args.input, &args.data, args.test_fold)?;
    if ds.is_empty() {
        return Err(Error::EmptyDataset);
    }
    let variants = args
        .schemes
        .clone()
        .unwrap_or_else(SchemeArg::all)
        .into_iter()
        .map(|s| {
            EncodingArgs {
                scheme: s,
                steps: args.steps,
                bits: 6,
                thresholds: None,
                interp: 5,
                seed: args.seed,
            }
            .config()
        })
        .collect::<Result<Vec<_>>>()?;
    let options = EvalOptions {
        network: args.training.network(args.seed),
        train: args.training.train(args.seed),
        p_list: args.noise_p.clone(),
        test_fold: args.test_fold,
        noise_seed: args.seed,
    };
    let mut rows = Vec::with_capacity(variants.len());
    for cfg in &variants {
        log::info!("evaluating {}", cfg.label());
        rows.push(evaluate_scheme(&ds, cfg, &options)?);
    }
    let report = Report {
        tool_version: TOOL_VERSION.into(),
        config: ReportConfig {
            dataset: args.input.clone(),
            window_seconds: args.data.window,
            stride_seconds: args.data.stride.unwrap_or(args.data.window),
            variants,
            options,
        },
        rows,
    };
    let text = match args.report {
        ReportFormat::Json => serde_json::to_string_pretty(&report)? + "\n",
        ReportFormat::Csv => report.to_csv()?,
    };
    match &args.out {
        Some(path) => write_atomic(path, text.as_bytes())?,
        None => out.write_all(text.as_bytes())?,
    }
    Ok(())
}

struct LabelledSpikes {
    samples: Vec<Sample>,
    folds: Vec<Option<usize>>,
    class_names: Vec<String>,
    config: EncodingConfig,
}

fn read_spike_dir(dir: &Path) -> Result<LabelledSpikes> {
    let mut paths: Vec<PathBuf> = fs::read_dir(dir)?
        .map(|e| e.map(|e| e.path()))
        .collect::<std::io::Result<_>>()?;
    paths.retain(|p| p.extension().is_some_and(|e| e == "spk"));
    paths.sort();
    let mut out = LabelledSpikes {
        samples: Vec::new(),
        folds: Vec::new(),
        class_names: Vec::new(),
        config: EncodingConfig::default(),
    };
    for path in &paths {
        let (tensor, meta) = read_spikes(path)?;
        let meta = meta.ok_or_else(|| Error::Config(format!("{} has no sidecar", path.display())))?;
        let label = meta
            .label
            .ok_or_else(|| Error::Config(format!("{} has no label", path.display())))?;
        if out.class_names.len() <= label {
            out.class_names.resize(label + 1, String::new());
        }
        if let Some(name) = meta.label_name {
            out.class_names[label] = name;
        }
        out.config = meta.config;
        out.folds.push(meta.fold);
        out.samples.push(Sample { tensor, label });
    }
    if out.samples.is_empty() {
        return Err(Error::EmptyDataset);
    }
    for (i, name) in out.class_names.iter_mut().enumerate() {
        if name.is_empty() {
            *name = format!("class{i}");
        }
    }
    Ok(out)
}

fn cmd_train(args: &TrainArgs, out: &mut dyn Write) -> Result<()> {
    let seed = args.encoding.seed;
    let (train_set, test_set, class_names, encoding) = if Path::new(&args.data).is_dir() {
        let data = read_spike_dir(Path::new(&args.data))?;
        let (train_set, test_set) = match args.test_fold {
            Some(fold) => {
                let (test, train): (Vec<_>, Vec<_>) = data
                    .samples
                    .into_iter()
                    .zip(&data.folds)
                    .partition(|(_, f)| **f == Some(fold));
                (
                    train.into_iter().map(|(s, _)| s).collect::<Vec<_>>(),
                    test.into_iter().map(|(s, _)| s).collect(),
                )
            }
            None => (data.samples, Vec::new()),
        };
        (train_set, test_set, data.class_names, data.config)
    } else {
        let cfg = args.encoding.config()?;
        let ds = load_dataset(&args.data, &args.data_args, args.test_fold)?;
        let (train_set, test_set) = match args.test_fold {
            Some(fold) => {
                let (train_w, test_w) = fold_split(&ds, Some(fold))?;
                (encode_windows(train_w, &cfg)?, encode_windows(test_w, &cfg)?)
            }
            None => (encode_windows(&ds.windows, &cfg)?, Vec::new()),
        };
        (train_set, test_set, ds.class_names, cfg)
    };
    if train_set.is_empty() {
        return Err(Error::EmptyDataset);
    }
    let classes = class_names
        .len()
        .max(train_set.iter().map(|s| s.label + 1).max().unwrap_or(0));
    let mut net = CubaNetwork::new(train_set[0].tensor.features(), classes, &args.training.network(seed))?;
    let train_cfg = args.training.train(seed);
    let report = train(&mut net, &train_set, &test_set, &train_cfg)?;
    let meta = CheckpointMeta {
        train_config: train_cfg,
        encoding,
        class_names,
        dataset_fingerprint: dataset_fingerprint(&train_set),
        tool_version: TOOL_VERSION.into(),
    };
    save_checkpoint(&args.out, &net, &meta)?;

    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(["epoch", "loss", "train_accuracy", "test_accuracy"])?;
    for e in &report.epochs {
        w.write_record([
            e.epoch.to_string(),
            format!("{:.6}", e.loss),
            format!("{:.4}", e.train_accuracy),
            format!("{:.4}", e.test_accuracy),
        ])?;
    }
    let body = w.into_inner().map_err(|e| Error::Io(e.into_error()))?;
    write_atomic(&epochs_csv_path(&args.out), &body)?;
    let best = &report.epochs[report.best_epoch];
    writeln!(
        out,
        "best epoch {} of {}: train {:.3} test {:.3}",
        report.best_epoch + 1,
        report.epochs.len(),
        best.train_accuracy,
        best.test_accuracy
    )?;
    Ok(())
}

/// Per-epoch accuracy log written next to a checkpoint.
pub fn epochs_csv_path(checkpoint: &Path) -> PathBuf {
    let mut name = checkpoint.file_name().unwrap_or_default().to_os_string();
    name.push(".epochs.csv");
    checkpoint.with_file_name(name)
}

#[derive(Serialize)]
struct InferOutput<'a> {
    class: usize,
    class_name: Option<&'a str>,
    rates: &'a [f64],
    no_spike: bool,
}

fn cmd_infer(args: &InferArgs, out: &mut dyn Write) -> Result<()> {
    let (net, meta) = load_checkpoint(&args.model)?;
    let (tensor, _) = read_spikes(&args.input)?;
    let p = classify(&net, &tensor)?;
    let body = InferOutput {
        class: p.class,
        class_name: meta.as_ref().and_then(|m| m.class_names.get(p.class)).map(String::as_str),
        rates: &p.rates,
        no_spike: p.no_spike,
    };
    writeln!(out, "{}", serde_json::to_string(&body)?)?;
    Ok(())
}

fn cmd_perturb(args: &PerturbArgs, out: &mut dyn Write) -> Result<()> {
    let (tensor, meta) = read_spikes(&args.input)?;
    let mode = match args.mode {
        Some(NoiseModeArg::Flip) => NoiseMode::FlipBinary,
        Some(NoiseModeArg::Signed) => NoiseMode::SignedPerturb,
        None => match &meta {
            Some(m) => NoiseMode::for_scheme(m.config.scheme),
            None if tensor.as_slice().iter().any(|&s| s < 0) => NoiseMode::SignedPerturb,
            None => NoiseMode::FlipBinary,
        },
    };
    let spec = NoiseSpec {
        error_probability: args.noise_p,
        seed: args.seed,
        mode,
    };
    let noisy = inject_noise(&tensor, &spec)?;
    write_spikes(&args.out, &noisy, meta.as_ref())?;
    let changed = tensor
        .as_slice()
        .iter()
        .zip(noisy.as_slice())
        .filter(|(a, b)| a != b)
        .count();
    writeln!(out, "changed {changed} of {} positions", tensor.len())?;
    Ok(())
}

/// Runs a parsed command, writing its normal output to `out`.
pub fn run(cli: &Cli, out: &mut dyn Write) -> Result<()> {
    match &cli.command {
        Command::Encode(a) => cmd_encode(a, out),
        Command::Evaluate(a) => cmd_evaluate(a, out),
        Command::Train(a) => cmd_train(a, out),
        Command::Infer(a) => cmd_infer(a, out),
        Command::Perturb(a) => cmd_perturb(a, out),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn parse(args: &[&str]) -> std::result::Result<Cli, clap::Error> {
        Cli::try_parse_from(std::iter::once("spikenc").chain(args.iter().copied()))
    }

    #[test]
    fn unknown_scheme_is_usage_error() {
        let err = parse(&["encode", "synth", "out", "--scheme", "morse"]).unwrap_err();
        assert_eq!(err.exit_code(), 2);
    }

    #[test]
    fn binary_aliases_set_bits() {
        let cli = parse(&["encode", "synth", "out", "--scheme", "binary10"]).unwrap();
        let Command::Encode(a) = cli.command else { panic!() };
        assert_eq!(a.encoding.config().unwrap().label(), "binary10");
    }

    #[test]
    fn synth_spec_parsing() {
        assert_eq!(parse_synth("data.csv").unwrap(), None);
        let s = parse_synth("synth:4x12").unwrap().unwrap();
        assert_eq!((s.classes, s.per_class), (4, 12));
        assert!(matches!(parse_synth("synth:4"), Err(Error::Config(_))));
    }

    #[test]
    fn epochs_csv_sits_next_to_checkpoint() {
        assert_eq!(epochs_csv_path(Path::new("a/model.ckpt")), Path::new("a/model.ckpt.epochs.csv"));
    }

    #[test]
    fn bad_thresholds_are_config_errors() {
        let cli = parse(&["encode", "synth", "out", "--scheme", "delta", "--thresholds", "0.002,0.001"]).unwrap();
        let Command::Encode(a) = cli.command else { panic!() };
        assert!(a.encoding.config().is_err());
    }
}
