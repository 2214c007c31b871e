//! Scheme comparison: encodes a windowed dataset under each configuration
//! and measures AFR, reconstruction SNR, accuracy and robustness.

use serde::{Deserialize, Serialize};

use crate::dataio::{Window, WindowedDataset};
use crate::decoders::decode;
use crate::encoders::encode;
use crate::error::{Error, Result};
use crate::metrics::{afr, robustness_sweep, snr_db_values, NoiseMode, RobustnessRow};
use crate::snn::{accuracy, train, CubaNetwork, NetworkConfig, Sample, TrainConfig, TrainReport};
use crate::types::{EncodingConfig, Rng, Scheme};

/// Error probabilities of the robustness columns.
pub const ROBUSTNESS_P: [f64; 3] = [0.001, 0.01, 0.1];

pub const NOT_MEASURED: &str = "not measured";

/// The eight compared variants: three rate mappings, two TTFS curves,
/// 6- and 10-bit binary, and 5-threshold delta modulation.
pub fn standard_variants() -> Vec<EncodingConfig> {
    let mut out: Vec<EncodingConfig> = [
        Scheme::RateUniform,
        Scheme::RateNormal,
        Scheme::RateBeta,
        Scheme::TtfsLinear,
        Scheme::TtfsLog,
    ]
    .into_iter()
    .map(EncodingConfig::new)
    .collect();
    for bits in [6, 10] {
        out.push(EncodingConfig {
            n_bits: bits,
            ..EncodingConfig::new(Scheme::Binary)
        });
    }
    out.push(EncodingConfig::new(Scheme::DeltaMod));
    out
}

/// Encodes every window. Window `i` uses `Rng::new(cfg.seed).child(i)`.
pub fn encode_windows<'a, I>(windows: I, cfg: &EncodingConfig) -> Result<Vec<Sample>>
where
    I: IntoIterator<Item = &'a Window>,
{
    let root = Rng::new(cfg.seed);
    windows
        .into_iter()
        .enumerate()
        .map(|(i, w)| {
            let mut rng = root.child(i as u64);
            Ok(Sample {
                tensor: encode(&w.signal, cfg, &mut rng)?,
                label: w.label,
            })
        })
        .collect()
}

/// Mean AFR over encoded samples (all share a shape, so this equals the
/// pooled AFR).
pub fn mean_afr(samples: &[Sample]) -> f64 {
    if samples.is_empty() {
        return 0.0;
    }
    samples.iter().map(|s| afr(&s.tensor)).sum::<f64>() / samples.len() as f64
}

/// SNR pooled over all windows: every window is decoded at its original
/// sample rate and all values enter one power ratio.
pub fn pooled_snr_db(windows: &[&Window], samples: &[Sample], cfg: &EncodingConfig) -> Result<f64> {
    let mut original = Vec::new();
    let mut rebuilt = Vec::new();
    for (w, s) in windows.iter().zip(samples) {
        let initial: Vec<f64> = (0..w.signal.channels()).map(|c| w.signal.get(c, 0)).collect();
        let r = decode(&s.tensor, cfg, &initial)?;
        if r.samples() != w.signal.samples() {
            return Err(Error::Shape(format!(
                "reconstruction has {} samples, original {}",
                r.samples(),
                w.signal.samples()
            )));
        }
        original.extend_from_slice(w.signal.values());
        rebuilt.extend_from_slice(r.values());
    }
    snr_db_values(&original, &rebuilt)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EvalOptions {
    pub network: NetworkConfig,
    pub train: TrainConfig,
    pub p_list: Vec<f64>,
    /// Held-out fold; `None` uses the last fold.
    pub test_fold: Option<usize>,
    pub noise_seed: u64,
}

impl Default for EvalOptions {
    fn default() -> Self {
        Self {
            network: NetworkConfig::default(),
            train: TrainConfig::default(),
            p_list: ROBUSTNESS_P.to_vec(),
            test_fold: None,
            noise_seed: 0,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EvalRow {
    pub scheme: String,
    pub tensor_shape: [usize; 3],
    pub time_step_ms: f64,
    pub afr_percent: f64,
    /// `None` when the reconstruction is exact (infinite SNR).
    pub snr_db: Option<f64>,
    pub accuracy: f64,
    pub robustness: Vec<RobustnessRow>,
    pub dynamic_energy_mj: String,
    pub execution_time_ms: String,
}

/// Train/test windows for the chosen held-out fold. With a single fold the
/// test split equals the training split.
pub fn fold_split(ds: &WindowedDataset, test_fold: Option<usize>) -> Result<(Vec<&Window>, Vec<&Window>)> {
    if ds.is_empty() {
        return Err(Error::EmptyDataset);
    }
    let folds = ds.windows.iter().map(|w| w.fold).max().unwrap_or(0) + 1;
    if folds < 2 {
        let all: Vec<&Window> = ds.windows.iter().collect();
        return Ok((all.clone(), all));
    }
    let fold = test_fold.unwrap_or(folds - 1);
    if fold >= folds {
        return Err(Error::Config(format!("test fold {fold} but only {folds} folds")));
    }
    let (train, test) = ds.split_fold(fold);
    if train.is_empty() || test.is_empty() {
        return Err(Error::EmptyDataset);
    }
    Ok((train, test))
}

/// Trains a fresh network on encoded samples and returns it with its report.
pub fn train_network(
    train_set: &[Sample],
    test_set: &[Sample],
    classes: usize,
    opts: &EvalOptions,
) -> Result<(CubaNetwork, TrainReport)> {
    let first = train_set.first().ok_or(Error::EmptyDataset)?;
    let mut net = CubaNetwork::new(first.tensor.features(), classes, &opts.network)?;
    let report = train(&mut net, train_set, test_set, &opts.train)?;
    Ok((net, report))
}

/// One report row for `cfg`.
pub fn evaluate_scheme(ds: &WindowedDataset, cfg: &EncodingConfig, opts: &EvalOptions) -> Result<EvalRow> {
    let (train_w, test_w) = fold_split(ds, opts.test_fold)?;
    let all: Vec<&Window> = ds.windows.iter().collect();
    let encoded = encode_windows(all.iter().copied(), cfg)?;
    let snr = pooled_snr_db(&all, &encoded, cfg)?;
    let train_set = encode_windows(train_w.iter().copied(), cfg)?;
    let test_set = encode_windows(test_w.iter().copied(), &EncodingConfig { seed: cfg.seed ^ 0x7465_7374, ..cfg.clone() })?;
    let classes = ds.class_names.len().max(ds.windows.iter().map(|w| w.label + 1).max().unwrap_or(0));
    let (net, _) = train_network(&train_set, &test_set, classes, opts)?;
    let acc = accuracy(&net, &test_set)?;
    let robustness = robustness_sweep(&net, &test_set, &opts.p_list, NoiseMode::for_scheme(cfg.scheme), opts.noise_seed)?;
    let first = &encoded[0].tensor;
    Ok(EvalRow {
        scheme: cfg.label(),
        tensor_shape: first.dims(),
        time_step_ms: first.time_step_ms(),
        afr_percent: 100.0 * mean_afr(&encoded),
        snr_db: snr.is_finite().then_some(snr),
        accuracy: acc,
        robustness,
        dynamic_energy_mj: NOT_MEASURED.into(),
        execution_time_ms: NOT_MEASURED.into(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dataio::{synth_dataset, SynthSpec};

    #[test]
    fn eight_variants() {
        let labels: Vec<String> = standard_variants().iter().map(|c| c.label()).collect();
        assert_eq!(
            labels,
            ["rate-uniform", "rate-normal", "rate-beta", "ttfs-linear", "ttfs-log", "binary6", "binary10", "delta"]
        );
    }

    #[test]
    fn pooled_snr_for_binary_is_high() {
        let ds = synth_dataset(&SynthSpec { per_class: 5, ..Default::default() });
        let windows: Vec<&Window> = ds.windows.iter().collect();
        let cfg = EncodingConfig { n_bits: 10, ..EncodingConfig::new(Scheme::Binary) };
        let samples = encode_windows(windows.iter().copied(), &cfg).unwrap();
        let snr = pooled_snr_db(&windows, &samples, &cfg).unwrap();
        assert!(snr > 50.0, "{snr}");
    }

    #[test]
    fn empty_dataset_rejected() {
        let ds = WindowedDataset::default();
        let cfg = EncodingConfig::new(Scheme::TtfsLinear);
        assert!(matches!(evaluate_scheme(&ds, &cfg, &EvalOptions::default()), Err(Error::EmptyDataset)));
    }
}
