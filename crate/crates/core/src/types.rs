//! Shared domain types: signals, spike tensors, encoding configuration and
//! the seeded random stream.

use rand::{RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Multi-channel time series stored channel-major.
#[derive(Clone, Debug, PartialEq)]
pub struct Signal {
    data: Vec<f64>,
    channels: usize,
    samples: usize,
    sample_rate_hz: f64,
    channel_names: Vec<String>,
}

impl Signal {
    /// Builds a signal from one vector per channel. Channel names default to
    /// `ch0..chN`.
    pub fn from_channels(channels: Vec<Vec<f64>>, sample_rate_hz: f64) -> Result<Self> {
        let names = (0..channels.len()).map(|c| format!("ch{c}")).collect();
        Self::with_names(channels, sample_rate_hz, names)
    }

    pub fn with_names(
        channels: Vec<Vec<f64>>,
        sample_rate_hz: f64,
        channel_names: Vec<String>,
    ) -> Result<Self> {
        if !(sample_rate_hz.is_finite() && sample_rate_hz > 0.0) {
            return Err(Error::Config(format!(
                "sample rate must be positive, got {sample_rate_hz}"
            )));
        }
        if channel_names.len() != channels.len() {
            return Err(Error::Shape(format!(
                "{} channel names for {} channels",
                channel_names.len(),
                channels.len()
            )));
        }
        let samples = channels.first().map_or(0, Vec::len);
        for (c, ch) in channels.iter().enumerate() {
            if ch.len() != samples {
                return Err(Error::RaggedChannels {
                    channel: c,
                    len: ch.len(),
                    expected: samples,
                });
            }
        }
        Ok(Self {
            channels: channels.len(),
            samples,
            data: channels.into_iter().flatten().collect(),
            sample_rate_hz,
            channel_names,
        })
    }

    pub(crate) fn from_flat(
        data: Vec<f64>,
        channels: usize,
        sample_rate_hz: f64,
        channel_names: Vec<String>,
    ) -> Self {
        debug_assert!(channels == 0 || data.len() % channels == 0);
        let samples = if channels == 0 { 0 } else { data.len() / channels };
        Self {
            data,
            channels,
            samples,
            sample_rate_hz,
            channel_names,
        }
    }

    /// Checks that every value is finite and inside `[0, 1]`, reporting the
    /// first offending coordinate.
    pub fn validate(&self) -> Result<()> {
        for c in 0..self.channels {
            for (i, &v) in self.channel(c).iter().enumerate() {
                if !v.is_finite() {
                    return Err(Error::NonFiniteValue {
                        channel: c,
                        index: i,
                    });
                }
                if !(0.0..=1.0).contains(&v) {
                    return Err(Error::OutOfRange {
                        channel: c,
                        index: i,
                        value: v,
                    });
                }
            }
        }
        Ok(())
    }

    pub fn channels(&self) -> usize {
        self.channels
    }

    pub fn samples(&self) -> usize {
        self.samples
    }

    pub fn sample_rate_hz(&self) -> f64 {
        self.sample_rate_hz
    }

    pub fn channel_names(&self) -> &[String] {
        &self.channel_names
    }

    pub fn channel(&self, c: usize) -> &[f64] {
        &self.data[c * self.samples..(c + 1) * self.samples]
    }

    pub fn channel_mut(&mut self, c: usize) -> &mut [f64] {
        &mut self.data[c * self.samples..(c + 1) * self.samples]
    }

    pub fn get(&self, c: usize, i: usize) -> f64 {
        self.data[c * self.samples + i]
    }

    /// All values, channel-major.
    pub fn values(&self) -> &[f64] {
        &self.data
    }
}

/// Ternary spike tensor laid out as (trains, channels, timesteps).
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct SpikeTensor {
    data: Vec<i8>,
    trains: usize,
    channels: usize,
    timesteps: usize,
    /// Time between possible spikes, stored as raw bits so the tensor stays `Eq`.
    time_step_bits: u64,
    window_steps: usize,
}

impl SpikeTensor {
    pub fn zeros(
        trains: usize,
        channels: usize,
        timesteps: usize,
        time_step_ms: f64,
        window_steps: usize,
    ) -> Self {
        Self {
            data: vec![0; trains * channels * timesteps],
            trains,
            channels,
            timesteps,
            time_step_bits: time_step_ms.to_bits(),
            window_steps,
        }
    }

    /// Wraps raw row-major data, rejecting values outside {-1, 0, +1}.
    pub fn from_vec(
        data: Vec<i8>,
        dims: [usize; 3],
        time_step_ms: f64,
        window_steps: usize,
    ) -> Result<Self> {
        let [trains, channels, timesteps] = dims;
        if data.len() != trains * channels * timesteps {
            return Err(Error::Shape(format!(
                "{} values for dims {dims:?}",
                data.len()
            )));
        }
        if let Some(bad) = data.iter().find(|v| !(-1..=1).contains(*v)) {
            return Err(Error::Domain(format!("spike value {bad} is not ternary")));
        }
        if !(time_step_ms.is_finite() && time_step_ms > 0.0) || window_steps == 0 {
            return Err(Error::Config(format!(
                "invalid time step {time_step_ms} ms / window {window_steps}"
            )));
        }
        Ok(Self {
            data,
            trains,
            channels,
            timesteps,
            time_step_bits: time_step_ms.to_bits(),
            window_steps,
        })
    }

    pub fn dims(&self) -> [usize; 3] {
        [self.trains, self.channels, self.timesteps]
    }

    pub fn trains(&self) -> usize {
        self.trains
    }

    pub fn channels(&self) -> usize {
        self.channels
    }

    pub fn timesteps(&self) -> usize {
        self.timesteps
    }

    pub fn time_step_ms(&self) -> f64 {
        f64::from_bits(self.time_step_bits)
    }

    pub fn window_steps(&self) -> usize {
        self.window_steps
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    #[inline]
    pub fn index(&self, train: usize, channel: usize, t: usize) -> usize {
        (train * self.channels + channel) * self.timesteps + t
    }

    #[inline]
    pub fn get(&self, train: usize, channel: usize, t: usize) -> i8 {
        self.data[self.index(train, channel, t)]
    }

    #[inline]
    pub fn set(&mut self, train: usize, channel: usize, t: usize, value: i8) {
        debug_assert!((-1..=1).contains(&value));
        let i = self.index(train, channel, t);
        self.data[i] = value;
    }

    /// Spike train of one (train, channel) pair over time.
    pub fn row(&self, train: usize, channel: usize) -> &[i8] {
        let start = self.index(train, channel, 0);
        &self.data[start..start + self.timesteps]
    }

    pub fn as_slice(&self) -> &[i8] {
        &self.data
    }

    pub(crate) fn as_mut_slice(&mut self) -> &mut [i8] {
        &mut self.data
    }

    /// Input features per time step, ordered `train * channels + channel`.
    pub fn features(&self) -> usize {
        self.trains * self.channels
    }
}

/// Encoding scheme selector.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Scheme {
    RateUniform,
    RateNormal,
    RateBeta,
    TtfsLinear,
    TtfsLog,
    Binary,
    #[serde(rename = "delta")]
    DeltaMod,
}

impl Scheme {
    pub const ALL: [Scheme; 7] = [
        Scheme::RateUniform,
        Scheme::RateNormal,
        Scheme::RateBeta,
        Scheme::TtfsLinear,
        Scheme::TtfsLog,
        Scheme::Binary,
        Scheme::DeltaMod,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Scheme::RateUniform => "rate-uniform",
            Scheme::RateNormal => "rate-normal",
            Scheme::RateBeta => "rate-beta",
            Scheme::TtfsLinear => "ttfs-linear",
            Scheme::TtfsLog => "ttfs-log",
            Scheme::Binary => "binary",
            Scheme::DeltaMod => "delta",
        }
    }

    /// True for schemes that can emit negative spikes.
    pub fn is_signed(self) -> bool {
        matches!(self, Scheme::TtfsLog | Scheme::DeltaMod)
    }
}

impl std::fmt::Display for Scheme {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.name())
    }
}

/// IMU threshold bank for the multi-threshold delta encoder.
pub const IMU_THRESHOLDS: [f64; 5] = [0.0004, 0.0008, 0.0016, 0.0032, 0.0064];
/// Capacitance (HBC) threshold bank.
pub const HBC_THRESHOLDS: [f64; 5] = [0.0001, 0.0002, 0.0004, 0.0008, 0.0016];

/// Threshold banks for delta modulation and the channel → bank wiring.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ThresholdBanks {
    pub banks: Vec<Vec<f64>>,
    /// Bank index per channel; channels beyond the list use bank 0.
    pub channel_bank: Vec<usize>,
}

impl Default for ThresholdBanks {
    fn default() -> Self {
        Self {
            banks: vec![IMU_THRESHOLDS.to_vec(), HBC_THRESHOLDS.to_vec()],
            channel_bank: vec![0, 0, 0, 0, 0, 0, 1],
        }
    }
}

impl ThresholdBanks {
    /// A single bank shared by every channel.
    pub fn uniform(bank: Vec<f64>) -> Self {
        Self {
            banks: vec![bank],
            channel_bank: Vec::new(),
        }
    }

    pub fn bank_for(&self, channel: usize) -> &[f64] {
        let b = self.channel_bank.get(channel).copied().unwrap_or(0);
        &self.banks[b]
    }

    /// Number of parallel trains (thresholds per bank).
    pub fn trains(&self) -> usize {
        self.banks.first().map_or(0, Vec::len)
    }

    pub fn validate(&self) -> Result<()> {
        let n = self.trains();
        if n == 0 {
            return Err(Error::Config("at least one threshold is required".into()));
        }
        for bank in &self.banks {
            if bank.len() != n {
                return Err(Error::Config(format!(
                    "threshold banks differ in length ({} vs {n})",
                    bank.len()
                )));
            }
            let positive = bank.iter().all(|t| t.is_finite() && *t > 0.0);
            let increasing = bank.windows(2).all(|w| w[0] < w[1]);
            if !(positive && increasing) {
                return Err(Error::ThresholdOrder(bank.clone()));
            }
        }
        if let Some(&b) = self.channel_bank.iter().find(|&&b| b >= self.banks.len()) {
            return Err(Error::Config(format!("channel mapped to missing bank {b}")));
        }
        Ok(())
    }
}

/// How delta-modulated channels are combined into one change estimate.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum DeltaRule {
    /// Change = largest fired threshold.
    #[default]
    Largest,
    /// Change = midpoint between the largest fired threshold and the next.
    Midpoint,
}

/// Scheme selector plus every scheme parameter.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EncodingConfig {
    pub scheme: Scheme,
    pub steps_per_sample: usize,
    pub n_bits: usize,
    pub thresholds: ThresholdBanks,
    pub interp_factor: usize,
    pub normal_mu: f64,
    pub normal_var: f64,
    pub beta_shape: f64,
    #[serde(default)]
    pub delta_rule: DeltaRule,
    pub seed: u64,
}

impl Default for EncodingConfig {
    fn default() -> Self {
        Self {
            scheme: Scheme::RateUniform,
            steps_per_sample: 50,
            n_bits: 6,
            thresholds: ThresholdBanks::default(),
            interp_factor: 5,
            normal_mu: 0.5,
            normal_var: 0.2,
            beta_shape: 0.75,
            delta_rule: DeltaRule::Largest,
            seed: 0,
        }
    }
}

impl EncodingConfig {
    pub fn new(scheme: Scheme) -> Self {
        Self {
            scheme,
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.steps_per_sample == 0 || self.interp_factor == 0 {
            return Err(Error::Config(
                "steps_per_sample and interp_factor must be positive".into(),
            ));
        }
        if !(1..=16).contains(&self.n_bits) {
            return Err(Error::Config(format!(
                "n_bits must be in 1..=16, got {}",
                self.n_bits
            )));
        }
        if !(self.beta_shape > 0.0 && self.beta_shape <= 1.0) {
            return Err(Error::Config(format!(
                "beta_shape must be in (0, 1], got {}",
                self.beta_shape
            )));
        }
        if !(self.normal_var > 0.0 && self.normal_var.is_finite()) {
            return Err(Error::Config("normal_var must be positive".into()));
        }
        self.thresholds.validate()
    }

    /// Short label used in reports (`binary6`, `binary10`, ...).
    pub fn label(&self) -> String {
        match self.scheme {
            Scheme::Binary => format!("binary{}", self.n_bits),
            s => s.name().to_string(),
        }
    }
}

/// Seeded, reproducible stream of uniform variates.
#[derive(Clone, Debug)]
pub struct Rng {
    seed: u64,
    inner: ChaCha8Rng,
}

impl Rng {
    pub fn new(seed: u64) -> Self {
        Self {
            seed,
            inner: ChaCha8Rng::seed_from_u64(seed),
        }
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    /// Independent stream for worker `index`, derived only from the parent
    /// seed so it does not depend on how much of the parent was consumed.
    pub fn child(&self, index: u64) -> Rng {
        Rng::new(mix_seed(self.seed, index))
    }

    /// Uniform variate in `[0, 1)` with 53 bits of precision.
    #[inline]
    pub fn uniform(&mut self) -> f64 {
        (self.inner.next_u64() >> 11) as f64 * (1.0 / (1u64 << 53) as f64)
    }

    #[inline]
    pub fn next_u64(&mut self) -> u64 {
        self.inner.next_u64()
    }

    /// Uniform integer in `0..n`.
    pub fn below(&mut self, n: usize) -> usize {
        assert!(n > 0);
        (self.uniform() * n as f64) as usize % n
    }

    /// Standard normal variate (Box-Muller).
    pub fn normal(&mut self) -> f64 {
        let u1 = 1.0 - self.uniform();
        let u2 = self.uniform();
        (-2.0 * u1.ln()).sqrt() * (std::f64::consts::TAU * u2).cos()
    }

    pub fn shuffle<T>(&mut self, items: &mut [T]) {
        for i in (1..items.len()).rev() {
            let j = self.below(i + 1);
            items.swap(i, j);
        }
    }
}

/// SplitMix64 finalizer over (seed, index).
pub fn mix_seed(seed: u64, index: u64) -> u64 {
    let mut z = seed ^ index.wrapping_add(1).wrapping_mul(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}
