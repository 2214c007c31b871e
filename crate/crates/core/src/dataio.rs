//! Sensor CSV ingestion, normalization, windowing, interpolation, synthetic
//! data and the SPK1 spike-file format.

use std::collections::HashMap;
use std::f64::consts::TAU;
use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::types::{EncodingConfig, Rng, Signal, SpikeTensor};

pub const DEFAULT_SAMPLE_RATE_HZ: f64 = 20.0;

/// Workout classes of the gym activity dataset.
pub const DEFAULT_VOCABULARY: [&str; 12] = [
    "Adductor",
    "ArmCurl",
    "BenchPress",
    "LegCurl",
    "LegPress",
    "Null",
    "Riding",
    "RopeSkipping",
    "Running",
    "Squat",
    "StairClimber",
    "Walking",
];

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CsvSchema {
    pub channel_columns: Vec<String>,
    pub label_column: String,
    pub user_column: String,
    pub vocabulary: Vec<String>,
    pub sample_rate_hz: f64,
}

impl Default for CsvSchema {
    fn default() -> Self {
        Self {
            channel_columns: ["acc_x", "acc_y", "acc_z", "gyro_x", "gyro_y", "gyro_z", "hbc"]
                .map(String::from)
                .to_vec(),
            label_column: "label".into(),
            user_column: "user".into(),
            vocabulary: DEFAULT_VOCABULARY.map(String::from).to_vec(),
            sample_rate_hz: DEFAULT_SAMPLE_RATE_HZ,
        }
    }
}

/// All rows of one user in time order, with a label per row.
#[derive(Clone, Debug, PartialEq)]
pub struct SessionRecord {
    pub user: String,
    pub signal: Signal,
    pub labels: Vec<usize>,
}

/// Reads a sensor CSV. Rows are grouped per user (first-appearance order)
/// and kept in file order within a user.
pub fn load_csv(path: &Path, schema: &CsvSchema) -> Result<Vec<SessionRecord>> {
    let mut reader = csv::ReaderBuilder::new().trim(csv::Trim::All).from_path(path)?;
    let headers = reader.headers()?.clone();
    let column = |name: &str| {
        headers
            .iter()
            .position(|h| h == name)
            .ok_or_else(|| Error::MissingColumn(name.to_string()))
    };
    let channel_idx = schema
        .channel_columns
        .iter()
        .map(|c| column(c))
        .collect::<Result<Vec<_>>>()?;
    let label_idx = column(&schema.label_column)?;
    let user_idx = column(&schema.user_column)?;
    let vocab: HashMap<&str, usize> = schema
        .vocabulary
        .iter()
        .enumerate()
        .map(|(i, v)| (v.as_str(), i))
        .collect();

    struct Pending {
        user: String,
        channels: Vec<Vec<f64>>,
        labels: Vec<usize>,
    }
    let mut users: Vec<Pending> = Vec::new();
    let mut by_user: HashMap<String, usize> = HashMap::new();

    for row in reader.records() {
        let row = row?;
        let line = row.position().map_or(0, |p| p.line());
        let parse_err = |message: String| Error::Parse {
            path: path.to_path_buf(),
            line,
            message,
        };
        let field = |i: usize| row.get(i).ok_or_else(|| parse_err(format!("missing field {i}")));
        let label_text = field(label_idx)?;
        let label = *vocab.get(label_text).ok_or_else(|| Error::Label {
            label: label_text.to_string(),
            vocabulary: schema.vocabulary.clone(),
        })?;
        let user = field(user_idx)?.to_string();
        let slot = *by_user.entry(user.clone()).or_insert_with(|| {
            users.push(Pending {
                user,
                channels: vec![Vec::new(); channel_idx.len()],
                labels: Vec::new(),
            });
            users.len() - 1
        });
        for (c, &i) in channel_idx.iter().enumerate() {
            let text = field(i)?;
            let v: f64 = text.parse().map_err(|_| {
                parse_err(format!("column `{}`: `{text}` is not a number", schema.channel_columns[c]))
            })?;
            if !v.is_finite() {
                return Err(parse_err(format!("column `{}`: non-finite value", schema.channel_columns[c])));
            }
            users[slot].channels[c].push(v);
        }
        users[slot].labels.push(label);
    }

    users
        .into_iter()
        .map(|p| {
            Ok(SessionRecord {
                user: p.user,
                signal: Signal::with_names(p.channels, schema.sample_rate_hz, schema.channel_columns.clone())?,
                labels: p.labels,
            })
        })
        .collect()
}

/// Per-channel min/max fitted on a training split.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct NormStats {
    pub min: Vec<f64>,
    pub max: Vec<f64>,
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub enum NormWarning {
    /// Channel is constant on the training split and maps to 0.5.
    DegenerateChannel(usize),
}

impl NormStats {
    pub fn fit(records: &[SessionRecord]) -> Result<(Self, Vec<NormWarning>)> {
        let signals: Vec<&Signal> = records.iter().map(|r| &r.signal).collect();
        Self::fit_signals(&signals)
    }

    pub fn fit_signals(signals: &[&Signal]) -> Result<(Self, Vec<NormWarning>)> {
        let channels = signals.first().ok_or(Error::EmptyDataset)?.channels();
        let mut min = vec![f64::INFINITY; channels];
        let mut max = vec![f64::NEG_INFINITY; channels];
        for s in signals {
            if s.channels() != channels {
                return Err(Error::Shape("records disagree on channel count".into()));
            }
            for c in 0..channels {
                for &v in s.channel(c) {
                    min[c] = min[c].min(v);
                    max[c] = max[c].max(v);
                }
            }
        }
        let warnings = (0..channels)
            .filter(|&c| !(max[c] > min[c]))
            .map(|c| {
                log::warn!("channel {c} is constant on the training split; mapping to 0.5");
                NormWarning::DegenerateChannel(c)
            })
            .collect();
        Ok((Self { min, max }, warnings))
    }

    pub fn apply(&self, signal: &Signal) -> Result<Signal> {
        if signal.channels() != self.min.len() {
            return Err(Error::Shape(format!(
                "{} channels, statistics for {}",
                signal.channels(),
                self.min.len()
            )));
        }
        let mut out = signal.clone();
        for c in 0..signal.channels() {
            let (lo, hi) = (self.min[c], self.max[c]);
            for v in out.channel_mut(c) {
                *v = if hi > lo { ((*v - lo) / (hi - lo)).clamp(0.0, 1.0) } else { 0.5 };
            }
        }
        Ok(out)
    }
}

/// Min-max normalization fitted on `train` only; `test` is transformed with
/// the training statistics and clamped.
pub fn normalize(
    train: &[SessionRecord],
    test: &[SessionRecord],
) -> Result<(Vec<SessionRecord>, Vec<SessionRecord>, NormStats, Vec<NormWarning>)> {
    let (stats, warnings) = NormStats::fit(train)?;
    let apply = |records: &[SessionRecord]| {
        records
            .iter()
            .map(|r| {
                Ok(SessionRecord {
                    signal: stats.apply(&r.signal)?,
                    ..r.clone()
                })
            })
            .collect::<Result<Vec<_>>>()
    };
    Ok((apply(train)?, apply(test)?, stats, warnings))
}

#[derive(Clone, Debug, PartialEq)]
pub struct Window {
    pub signal: Signal,
    pub label: usize,
    /// Leave-one-user-out fold (the user index).
    pub fold: usize,
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct WindowedDataset {
    pub windows: Vec<Window>,
    pub class_names: Vec<String>,
    pub fold_names: Vec<String>,
}

impl WindowedDataset {
    pub fn len(&self) -> usize {
        self.windows.len()
    }

    pub fn is_empty(&self) -> bool {
        self.windows.is_empty()
    }

    pub fn folds(&self) -> usize {
        self.fold_names.len()
    }

    /// Windows of every other fold, then windows of `fold`.
    pub fn split_fold(&self, fold: usize) -> (Vec<&Window>, Vec<&Window>) {
        self.windows.iter().partition(|w| w.fold != fold)
    }
}

/// Cuts fixed-length windows; windows spanning a label change are dropped.
pub fn window(records: &[SessionRecord], seconds: f64, stride_seconds: f64, class_names: &[String]) -> WindowedDataset {
    let mut out = WindowedDataset {
        windows: Vec::new(),
        class_names: class_names.to_vec(),
        fold_names: records.iter().map(|r| r.user.clone()).collect(),
    };
    for (fold, rec) in records.iter().enumerate() {
        let rate = rec.signal.sample_rate_hz();
        let len = (seconds * rate).round() as usize;
        let stride = ((stride_seconds * rate).round() as usize).max(1);
        if len == 0 {
            continue;
        }
        let mut start = 0;
        while start + len <= rec.signal.samples() {
            let labels = &rec.labels[start..start + len];
            if labels.iter().all(|&l| l == labels[0]) {
                let channels = (0..rec.signal.channels())
                    .map(|c| rec.signal.channel(c)[start..start + len].to_vec())
                    .collect();
                let signal = Signal::with_names(channels, rate, rec.signal.channel_names().to_vec())
                    .expect("slices share a length");
                out.windows.push(Window {
                    signal,
                    label: labels[0],
                    fold,
                });
            }
            start += stride;
        }
    }
    out
}

/// Piecewise-linear up-sampling by an integer factor: `factor - 1` points
/// are inserted between neighbours, so `n` samples become `(n-1)·factor + 1`.
pub fn interpolate_linear(signal: &Signal, factor: usize) -> Signal {
    let factor = factor.max(1);
    if factor == 1 || signal.samples() < 2 {
        let mut s = signal.clone();
        if factor > 1 {
            s = Signal::from_flat(
                s.values().to_vec(),
                s.channels(),
                s.sample_rate_hz() * factor as f64,
                s.channel_names().to_vec(),
            );
        }
        return s;
    }
    let n = signal.samples();
    let mut data = Vec::with_capacity(signal.channels() * ((n - 1) * factor + 1));
    for c in 0..signal.channels() {
        let ch = signal.channel(c);
        for pair in ch.windows(2) {
            for k in 0..factor {
                let frac = k as f64 / factor as f64;
                data.push(pair[0] + (pair[1] - pair[0]) * frac);
            }
        }
        data.push(ch[n - 1]);
    }
    Signal::from_flat(
        data,
        signal.channels(),
        signal.sample_rate_hz() * factor as f64,
        signal.channel_names().to_vec(),
    )
}

/// Keeps every `factor`-th sample, starting with the first.
pub fn decimate(signal: &Signal, factor: usize) -> Signal {
    let factor = factor.max(1);
    let mut data = Vec::new();
    for c in 0..signal.channels() {
        data.extend(signal.channel(c).iter().step_by(factor));
    }
    Signal::from_flat(
        data,
        signal.channels(),
        signal.sample_rate_hz() / factor as f64,
        signal.channel_names().to_vec(),
    )
}

/// Parameters of the synthetic stand-in dataset.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SynthSpec {
    pub classes: usize,
    pub per_class: usize,
    pub channels: usize,
    pub samples: usize,
    pub sample_rate_hz: f64,
    /// Number of pseudo-users; window `i` of a class belongs to cohort `i % cohorts`.
    pub cohorts: usize,
    /// Peak deviation of the per-class channel offsets from 0.5.
    pub offset_spread: f64,
    pub amplitude: f64,
    pub noise_std: f64,
    pub seed: u64,
}

impl Default for SynthSpec {
    fn default() -> Self {
        Self {
            classes: 3,
            per_class: 100,
            channels: 7,
            samples: 40,
            sample_rate_hz: DEFAULT_SAMPLE_RATE_HZ,
            cohorts: 5,
            offset_spread: 0.07,
            amplitude: 0.08,
            noise_std: 0.01,
            seed: 0,
        }
    }
}

impl SynthSpec {
    /// Offset of `channel` for `class`: a cosine pattern across channels
    /// whose phase rotates with the class index.
    pub fn class_offset(&self, class: usize, channel: usize) -> f64 {
        let phase = TAU * class as f64 / self.classes as f64;
        0.5 + self.offset_spread * (phase + channel as f64 * std::f64::consts::PI / 3.5).cos()
    }

    /// Oscillation frequency of `class`, spread over 0.5..3 Hz.
    pub fn class_frequency(&self, class: usize) -> f64 {
        let span = (self.classes.max(2) - 1) as f64;
        0.5 + 2.5 * class as f64 / span
    }
}

/// Class-separable sinusoid windows concentrated around 0.5.
///
/// Each class has its own channel offset pattern and oscillation frequency;
/// every window draws a random phase, an amplitude jitter and white noise,
/// and each cohort adds a small per-channel bias.
pub fn synth_dataset(spec: &SynthSpec) -> WindowedDataset {
    let root = Rng::new(spec.seed);
    let cohorts = spec.cohorts.max(1);
    let mut bias_rng = root.child(u64::MAX);
    let bias: Vec<Vec<f64>> = (0..cohorts)
        .map(|_| (0..spec.channels).map(|_| 0.01 * bias_rng.normal()).collect())
        .collect();
    let mut windows = Vec::with_capacity(spec.classes * spec.per_class);
    for class in 0..spec.classes {
        let freq = spec.class_frequency(class);
        for i in 0..spec.per_class {
            let mut rng = root.child((class * spec.per_class + i) as u64);
            let fold = i % cohorts;
            let phase = rng.uniform() * TAU;
            let amp = spec.amplitude * (0.8 + 0.4 * rng.uniform());
            let channels = (0..spec.channels)
                .map(|c| {
                    let offset = spec.class_offset(class, c) + bias[fold][c];
                    let ch_phase = phase + 0.6 * c as f64;
                    (0..spec.samples)
                        .map(|m| {
                            let t = m as f64 / spec.sample_rate_hz;
                            let v = offset + amp * (TAU * freq * t + ch_phase).sin() + spec.noise_std * rng.normal();
                            v.clamp(0.0, 1.0)
                        })
                        .collect()
                })
                .collect();
            windows.push(Window {
                signal: Signal::from_channels(channels, spec.sample_rate_hz).expect("rectangular"),
                label: class,
                fold,
            });
        }
    }
    WindowedDataset {
        windows,
        class_names: (0..spec.classes).map(|c| format!("class{c}")).collect(),
        fold_names: (0..cohorts).map(|u| format!("cohort{u}")).collect(),
    }
}

pub const SPIKE_MAGIC: [u8; 4] = *b"SPK1";
pub const SPIKE_VERSION: u16 = 1;
const SPIKE_HEADER_LEN: usize = 4 + 2 + 1 + 3 * 4 + 8;

/// Sidecar stored next to a spike file as `<basename>.json`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SpikeMeta {
    pub config: EncodingConfig,
    pub window_steps: usize,
    pub label: Option<usize>,
    pub label_name: Option<String>,
    pub fold: Option<usize>,
}

pub fn sidecar_path(path: &Path) -> PathBuf {
    path.with_extension("json")
}

/// Writes `bytes` to a temporary file in the target directory and renames
/// it into place.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    let dir = match path.parent() {
        Some(p) if !p.as_os_str().is_empty() => p,
        _ => Path::new("."),
    };
    let mut tmp = tempfile::NamedTempFile::new_in(dir)?;
    tmp.write_all(bytes)?;
    tmp.flush()?;
    tmp.persist(path).map_err(|e| Error::Io(e.error))?;
    Ok(())
}

pub fn encode_spike_file(tensor: &SpikeTensor) -> Vec<u8> {
    let mut bytes = Vec::with_capacity(SPIKE_HEADER_LEN + tensor.len());
    bytes.extend_from_slice(&SPIKE_MAGIC);
    bytes.extend_from_slice(&SPIKE_VERSION.to_le_bytes());
    bytes.push(3);
    for d in tensor.dims() {
        bytes.extend_from_slice(&(d as u32).to_le_bytes());
    }
    bytes.extend_from_slice(&tensor.time_step_ms().to_le_bytes());
    bytes.extend(tensor.as_slice().iter().map(|&s| s as u8));
    bytes
}

pub fn decode_spike_file(bytes: &[u8], window_steps: usize) -> Result<SpikeTensor> {
    if bytes.len() < 4 {
        return Err(Error::TruncatedPayload {
            expected: SPIKE_HEADER_LEN,
            found: bytes.len(),
        });
    }
    let magic: [u8; 4] = bytes[..4].try_into().expect("4 bytes");
    if magic != SPIKE_MAGIC {
        return Err(Error::BadMagic {
            found: magic,
            expected: SPIKE_MAGIC,
        });
    }
    if bytes.len() < 7 {
        return Err(Error::TruncatedPayload {
            expected: SPIKE_HEADER_LEN,
            found: bytes.len(),
        });
    }
    let version = u16::from_le_bytes([bytes[4], bytes[5]]);
    if version != SPIKE_VERSION {
        return Err(Error::VersionMismatch {
            found: version,
            expected: SPIKE_VERSION,
        });
    }
    let ndims = bytes[6] as usize;
    if ndims != 3 {
        return Err(Error::Shape(format!("expected 3 dimensions, found {ndims}")));
    }
    if bytes.len() < SPIKE_HEADER_LEN {
        return Err(Error::TruncatedPayload {
            expected: SPIKE_HEADER_LEN,
            found: bytes.len(),
        });
    }
    let dim = |k: usize| u32::from_le_bytes(bytes[7 + 4 * k..11 + 4 * k].try_into().expect("4 bytes")) as usize;
    let dims = [dim(0), dim(1), dim(2)];
    let time_step = f64::from_le_bytes(bytes[19..27].try_into().expect("8 bytes"));
    let expected = dims.iter().product::<usize>();
    let payload = &bytes[SPIKE_HEADER_LEN..];
    if payload.len() < expected {
        return Err(Error::TruncatedPayload {
            expected,
            found: payload.len(),
        });
    }
    let data = payload[..expected].iter().map(|&b| b as i8).collect();
    SpikeTensor::from_vec(data, dims, time_step, window_steps.max(1))
}

/// Writes the SPK1 file and, when `meta` is given, its JSON sidecar.
pub fn write_spikes(path: &Path, tensor: &SpikeTensor, meta: Option<&SpikeMeta>) -> Result<()> {
    write_atomic(path, &encode_spike_file(tensor))?;
    if let Some(meta) = meta {
        write_atomic(&sidecar_path(path), &serde_json::to_vec_pretty(meta)?)?;
    }
    Ok(())
}

/// Reads an SPK1 file and its sidecar when present. Without a sidecar the
/// tensor's window length defaults to 1.
pub fn read_spikes(path: &Path) -> Result<(SpikeTensor, Option<SpikeMeta>)> {
    let bytes = fs::read(path)?;
    let side = sidecar_path(path);
    let meta: Option<SpikeMeta> = if side.exists() {
        Some(serde_json::from_slice(&fs::read(side)?)?)
    } else {
        None
    };
    let window_steps = meta.as_ref().map_or(1, |m| m.window_steps);
    Ok((decode_spike_file(&bytes, window_steps)?, meta))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::types::Rng;
    use crate::types::Scheme;
    use proptest::prelude::*;

    fn write_tmp(dir: &Path, name: &str, text: &str) -> PathBuf {
        let p = dir.join(name);
        fs::write(&p, text).unwrap();
        p
    }

    const HEADER: &str = "acc_x,acc_y,acc_z,gyro_x,gyro_y,gyro_z,hbc,label,user\n";

    #[test]
    fn loads_well_formed_csv() {
        let dir = tempfile::tempdir().unwrap();
        let text = format!(
            "{HEADER}0.1,0.2,0.3,0.4,0.5,0.6,0.7,Squat,u1\n1,2,3,4,5,6,7,Squat,u1\n-1,0,1,0,1,0,1,Running,u2\n"
        );
        let recs = load_csv(&write_tmp(dir.path(), "a.csv", &text), &CsvSchema::default()).unwrap();
        assert_eq!(recs.len(), 2);
        let rows: usize = recs.iter().map(|r| r.labels.len()).sum();
        assert_eq!(rows, 3);
        assert_eq!(recs[0].user, "u1");
        assert_eq!(recs[0].signal.channel(6), &[0.7, 7.0]);
        assert_eq!(recs[1].labels, vec![8]);
    }

    #[test]
    fn csv_parse_error_has_line() {
        let dir = tempfile::tempdir().unwrap();
        let text = format!("{HEADER}0.1,0.2,0.3,0.4,0.5,0.6,0.7,Squat,u1\n0.1,abc,0.3,0.4,0.5,0.6,0.7,Squat,u1\n");
        let err = load_csv(&write_tmp(dir.path(), "b.csv", &text), &CsvSchema::default()).unwrap_err();
        match err {
            Error::Parse { line, message, .. } => {
                assert_eq!(line, 3);
                assert!(message.contains("acc_y"));
            }
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn csv_unknown_label_and_missing_column() {
        let dir = tempfile::tempdir().unwrap();
        let text = format!("{HEADER}0.1,0.2,0.3,0.4,0.5,0.6,0.7,Yoga,u1\n");
        let err = load_csv(&write_tmp(dir.path(), "c.csv", &text), &CsvSchema::default()).unwrap_err();
        assert!(matches!(err, Error::Label { ref vocabulary, .. } if vocabulary.len() == 12));

        let text = "acc_x,label,user\n0.1,Squat,u1\n";
        let err = load_csv(&write_tmp(dir.path(), "d.csv", text), &CsvSchema::default()).unwrap_err();
        assert!(matches!(err, Error::MissingColumn(ref c) if c == "acc_y"));
    }

    fn record(user: &str, channels: Vec<Vec<f64>>, labels: Vec<usize>) -> SessionRecord {
        SessionRecord {
            user: user.into(),
            signal: Signal::from_channels(channels, 20.0).unwrap(),
            labels,
        }
    }

    #[test]
    fn normalize_examples() {
        let train = vec![record("a", vec![vec![-2.0, 0.0, 2.0], vec![3.0, 3.0, 3.0]], vec![0; 3])];
        let test = vec![record("b", vec![vec![5.0, -9.0, 1.0], vec![1.0, 3.0, 8.0]], vec![0; 3])];
        let (tr, te, _, warnings) = normalize(&train, &test).unwrap();
        assert_eq!(tr[0].signal.channel(0), &[0.0, 0.5, 1.0]);
        assert_eq!(tr[0].signal.channel(1), &[0.5, 0.5, 0.5]);
        assert_eq!(warnings, vec![NormWarning::DegenerateChannel(1)]);
        assert_eq!(te[0].signal.channel(0), &[1.0, 0.0, 0.75]);
    }

    #[test]
    fn normalize_is_idempotent_on_train() {
        let mut rng = Rng::new(5);
        let chans: Vec<Vec<f64>> = (0..3).map(|_| (0..50).map(|_| rng.normal() * 3.0).collect()).collect();
        let train = vec![record("a", chans, vec![0; 50])];
        let (once, _, _, _) = normalize(&train, &[]).unwrap();
        let (twice, _, _, _) = normalize(&once, &[]).unwrap();
        assert_eq!(once, twice);
    }

    #[test]
    fn window_examples() {
        let names: Vec<String> = vec!["a".into(), "b".into()];
        let rec = record("u", vec![vec![0.5; 200]], vec![0; 200]);
        let ds = window(&[rec], 2.0, 2.0, &names);
        assert_eq!(ds.len(), 5);
        assert!(ds.windows.iter().all(|w| w.signal.samples() == 40));

        let short = record("u", vec![vec![0.5; 39]], vec![0; 39]);
        assert!(window(&[short], 2.0, 2.0, &names).is_empty());

        let mut labels = vec![0; 80];
        labels[50..].fill(1);
        let mixed = record("u", vec![vec![0.5; 80]], labels);
        let ds = window(&[mixed], 2.0, 2.0, &names);
        assert_eq!(ds.len(), 1);
        assert_eq!(ds.windows[0].label, 0);
    }

    #[test]
    fn interpolation_examples() {
        let s = Signal::from_channels(vec![vec![0.0, 1.0]], 20.0).unwrap();
        let up = interpolate_linear(&s, 5);
        let expected = [0.0, 0.2, 0.4, 0.6, 0.8, 1.0];
        for (a, b) in up.values().iter().zip(expected) {
            assert!((a - b).abs() < 1e-15);
        }
        assert_eq!(up.sample_rate_hz(), 100.0);
        assert_eq!(interpolate_linear(&s, 1), s);
        let flat = Signal::from_channels(vec![vec![0.3; 4]], 20.0).unwrap();
        assert!(interpolate_linear(&flat, 5).values().iter().all(|&v| v == 0.3));
    }

    #[test]
    fn synth_counts_and_determinism() {
        let spec = SynthSpec::default();
        let a = synth_dataset(&spec);
        assert_eq!(a.len(), 300);
        assert_eq!(a, synth_dataset(&spec));
        assert!(a.windows.iter().all(|w| w.signal.validate().is_ok()));
        assert_eq!(a.folds(), 5);
    }

    #[test]
    fn synth_class_means_separated() {
        let spec = SynthSpec::default();
        let ds = synth_dataset(&spec);
        let len = spec.channels * spec.samples;
        let means: Vec<Vec<f64>> = (0..spec.classes)
            .map(|c| {
                let ws: Vec<&Window> = ds.windows.iter().filter(|w| w.label == c).collect();
                (0..len)
                    .map(|k| ws.iter().map(|w| w.signal.values()[k]).sum::<f64>() / ws.len() as f64)
                    .collect()
            })
            .collect();
        for a in 0..spec.classes {
            for b in a + 1..spec.classes {
                let d: f64 = means[a].iter().zip(&means[b]).map(|(x, y)| (x - y).powi(2)).sum::<f64>().sqrt();
                assert!(d >= 0.5, "classes {a},{b} too close: {d}");
            }
        }
    }

    #[test]
    fn spike_file_errors() {
        let t = SpikeTensor::from_vec(vec![1, 0, -1, 0, 1, 1], [1, 2, 3], 1.0, 3).unwrap();
        let mut bytes = encode_spike_file(&t);
        assert_eq!(decode_spike_file(&bytes, 3).unwrap(), t);

        let mut bad = bytes.clone();
        bad[0] = b'X';
        assert!(matches!(decode_spike_file(&bad, 3), Err(Error::BadMagic { .. })));

        let mut wrong_version = bytes.clone();
        wrong_version[4] = 9;
        assert!(matches!(decode_spike_file(&wrong_version, 3), Err(Error::VersionMismatch { found: 9, .. })));

        bytes.truncate(bytes.len() - 2);
        assert!(matches!(
            decode_spike_file(&bytes, 3),
            Err(Error::TruncatedPayload { expected: 6, found: 4 })
        ));
    }

    #[test]
    fn spike_file_layout() {
        let t = SpikeTensor::from_vec(vec![-1, 1], [1, 1, 2], 0.5, 2).unwrap();
        let bytes = encode_spike_file(&t);
        assert_eq!(&bytes[..4], b"SPK1");
        assert_eq!(&bytes[4..7], &[1, 0, 3]);
        assert_eq!(&bytes[7..19], &[1, 0, 0, 0, 1, 0, 0, 0, 2, 0, 0, 0]);
        assert_eq!(&bytes[19..27], &0.5f64.to_le_bytes());
        assert_eq!(&bytes[27..], &[0xFF, 0x01]);
    }

    #[test]
    fn spike_file_round_trip_with_sidecar() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("w.spk");
        let t = SpikeTensor::from_vec(vec![0, 1, 0, 1, 1, 0], [1, 1, 6], 1.0, 3).unwrap();
        let meta = SpikeMeta {
            config: EncodingConfig::new(Scheme::TtfsLinear),
            window_steps: 3,
            label: Some(2),
            label_name: Some("class2".into()),
            fold: Some(1),
        };
        write_spikes(&path, &t, Some(&meta)).unwrap();
        let (t2, m2) = read_spikes(&path).unwrap();
        assert_eq!(t2, t);
        assert_eq!(m2, Some(meta));
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(1000))]

        #[test]
        fn spike_bytes_round_trip(
            dims in (1usize..4, 1usize..8, 0usize..40),
            seed in any::<u64>(),
            step in 0.001f64..100.0,
        ) {
            let (a, b, c) = dims;
            let mut rng = Rng::new(seed);
            let data = (0..a * b * c).map(|_| rng.below(3) as i8 - 1).collect();
            let t = SpikeTensor::from_vec(data, [a, b, c], step, 1).unwrap();
            prop_assert_eq!(decode_spike_file(&encode_spike_file(&t), 1).unwrap(), t);
        }

        #[test]
        fn interpolation_keeps_originals(values in proptest::collection::vec(0.0f64..=1.0, 2..30), factor in 1usize..8) {
            let s = Signal::from_channels(vec![values.clone()], 20.0).unwrap();
            let up = interpolate_linear(&s, factor);
            prop_assert_eq!(up.samples(), (values.len() - 1) * factor + 1);
            let back = decimate(&up, factor);
            prop_assert_eq!(back.values(), &values[..]);
            for (m, pair) in values.windows(2).enumerate() {
                let seg = &up.values()[m * factor..=(m + 1) * factor];
                if pair[1] >= pair[0] {
                    prop_assert!(seg.windows(2).all(|w| w[1] >= w[0]));
                } else {
                    prop_assert!(seg.windows(2).all(|w| w[1] <= w[0]));
                }
            }
        }
    }
}
