//! Signal → spike tensor conversion for every supported scheme.

use serde::{Deserialize, Serialize};

use crate::dataio::interpolate_linear;
use crate::error::{Error, Result};
use crate::special::normal_cdf;
use crate::types::{EncodingConfig, Rng, Scheme, Signal, SpikeTensor, ThresholdBanks};

/// Value → firing-probability mapping used by rate encoding.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub enum RateMapping {
    Uniform,
    /// Normal CDF with mean `mu` and variance `var`.
    Normal { mu: f64, var: f64 },
    /// Two half-range beta CDFs (shape `(1, b)` below 0.5, `(b, 1)` above),
    /// each rescaled to half of the output range so the whole map is monotone.
    CombinedBeta { shape: f64 },
}

impl RateMapping {
    pub fn normal() -> Self {
        RateMapping::Normal { mu: 0.5, var: 0.2 }
    }

    pub fn combined_beta() -> Self {
        RateMapping::CombinedBeta { shape: 0.75 }
    }

    /// Mapping selected by a rate scheme; `None` for non-rate schemes.
    pub fn from_config(cfg: &EncodingConfig) -> Option<Self> {
        match cfg.scheme {
            Scheme::RateUniform => Some(RateMapping::Uniform),
            Scheme::RateNormal => Some(RateMapping::Normal {
                mu: cfg.normal_mu,
                var: cfg.normal_var,
            }),
            Scheme::RateBeta => Some(RateMapping::CombinedBeta {
                shape: cfg.beta_shape,
            }),
            _ => None,
        }
    }
}

/// Latency curve for time-to-first-spike encoding.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum TtfsCurve {
    Linear,
    /// Signed logarithmic latency of the distance from 0.5.
    Log,
}

pub(crate) fn check_unit(v: f64) -> Result<()> {
    if (0.0..=1.0).contains(&v) {
        Ok(())
    } else {
        Err(Error::Domain(format!("value {v} outside [0, 1]")))
    }
}

pub fn map_value_to_rate(v: f64, mapping: RateMapping) -> Result<f64> {
    check_unit(v)?;
    Ok(match mapping {
        RateMapping::Uniform => v,
        RateMapping::Normal { mu, var } => normal_cdf((v - mu) / var.sqrt()),
        RateMapping::CombinedBeta { shape } => {
            if v < 0.5 {
                0.5 * (1.0 - (1.0 - 2.0 * v).powf(shape))
            } else {
                0.5 + 0.5 * (2.0 * v - 1.0).powf(shape)
            }
        }
    })
}

fn window_time_step_ms(signal: &Signal, steps: usize) -> f64 {
    1000.0 / (signal.sample_rate_hz() * steps as f64)
}

/// Bernoulli rate encoding: every time step of a sample's window fires with
/// the mapped probability. Variates are drawn channel-major, then in time
/// order, one per (channel, step).
pub fn encode_rate(
    signal: &Signal,
    mapping: RateMapping,
    steps_per_sample: usize,
    rng: &mut Rng,
) -> Result<SpikeTensor> {
    signal.validate()?;
    if steps_per_sample == 0 {
        return Err(Error::Config("steps_per_sample must be at least 1".into()));
    }
    let n = steps_per_sample;
    let mut out = SpikeTensor::zeros(
        1,
        signal.channels(),
        signal.samples() * n,
        window_time_step_ms(signal, n),
        n,
    );
    for c in 0..signal.channels() {
        for (m, &v) in signal.channel(c).iter().enumerate() {
            let p = map_value_to_rate(v, mapping)?;
            for k in 0..n {
                if rng.uniform() < p {
                    out.set(0, c, m * n + k, 1);
                }
            }
        }
    }
    Ok(out)
}

/// Window index and sign of the TTFS spike for one value, or `None` when no
/// spike is emitted.
pub fn ttfs_spike(v: f64, curve: TtfsCurve, n: usize) -> Option<(usize, i8)> {
    let last = n - 1;
    match curve {
        TtfsCurve::Linear => {
            let x = (1.0 - v) * n as f64;
            let snapped = if (x - x.round()).abs() < 1e-9 { x.round() } else { x.floor() };
            Some(((snapped as usize).min(last), 1))
        }
        TtfsCurve::Log => {
            let diff = 2.0 * (v - 0.5);
            if diff == 0.0 {
                return None;
            }
            let latency = (-20.0 * diff.abs().log10()).floor().max(0.0);
            let idx = if latency >= last as f64 { last } else { latency as usize };
            Some((idx, if diff > 0.0 { 1 } else { -1 }))
        }
    }
}

/// Time-to-first-spike encoding: at most one spike per sample window.
pub fn encode_ttfs(signal: &Signal, curve: TtfsCurve, steps_per_sample: usize) -> Result<SpikeTensor> {
    signal.validate()?;
    if steps_per_sample < 2 {
        return Err(Error::Config("TTFS needs at least 2 steps per sample".into()));
    }
    let n = steps_per_sample;
    let mut out = SpikeTensor::zeros(
        1,
        signal.channels(),
        signal.samples() * n,
        window_time_step_ms(signal, n),
        n,
    );
    for c in 0..signal.channels() {
        for (m, &v) in signal.channel(c).iter().enumerate() {
            if let Some((idx, sign)) = ttfs_spike(v, curve, n) {
                out.set(0, c, m * n + idx, sign);
            }
        }
    }
    Ok(out)
}

/// Greedy binary-fraction bits of `v`, most significant first. A bit fires
/// only when the residual strictly exceeds its weight.
pub fn binary_bits(v: f64, n_bits: usize) -> Vec<i8> {
    let mut residual = v;
    let mut weight = 0.5;
    (0..n_bits)
        .map(|_| {
            let bit = if residual - weight > 0.0 {
                residual -= weight;
                1
            } else {
                0
            };
            weight *= 0.5;
            bit
        })
        .collect()
}

/// Parallel binary encoding: one train per bit, one time step per sample.
pub fn encode_binary(signal: &Signal, n_bits: usize) -> Result<SpikeTensor> {
    signal.validate()?;
    if !(1..=16).contains(&n_bits) {
        return Err(Error::Config(format!("n_bits must be in 1..=16, got {n_bits}")));
    }
    let mut out = SpikeTensor::zeros(
        n_bits,
        signal.channels(),
        signal.samples(),
        1000.0 / signal.sample_rate_hz(),
        1,
    );
    for c in 0..signal.channels() {
        for (m, &v) in signal.channel(c).iter().enumerate() {
            for (bit, s) in binary_bits(v, n_bits).into_iter().enumerate() {
                out.set(bit, c, m, s);
            }
        }
    }
    Ok(out)
}

/// Multi-threshold delta modulation on the linearly up-sampled signal.
/// Train `i` carries +1 where the step exceeds `T_i` and −1 where it falls
/// below `−T_i`.
pub fn encode_delta(
    signal: &Signal,
    thresholds: &ThresholdBanks,
    interp_factor: usize,
) -> Result<SpikeTensor> {
    signal.validate()?;
    thresholds.validate()?;
    if interp_factor == 0 {
        return Err(Error::Config("interp_factor must be at least 1".into()));
    }
    let up = interpolate_linear(signal, interp_factor);
    let steps = up.samples().saturating_sub(1);
    let trains = thresholds.trains();
    let mut out = SpikeTensor::zeros(
        trains,
        up.channels(),
        steps,
        1000.0 / up.sample_rate_hz(),
        interp_factor,
    );
    for c in 0..up.channels() {
        let bank = thresholds.bank_for(c);
        for (m, pair) in up.channel(c).windows(2).enumerate() {
            let diff = pair[1] - pair[0];
            for (i, &t) in bank.iter().enumerate() {
                if diff > t {
                    out.set(i, c, m, 1);
                } else if diff < -t {
                    out.set(i, c, m, -1);
                }
            }
        }
    }
    Ok(out)
}

/// Encodes with whichever scheme `cfg` selects. `rng` is only consumed by
/// rate schemes.
pub fn encode(signal: &Signal, cfg: &EncodingConfig, rng: &mut Rng) -> Result<SpikeTensor> {
    cfg.validate()?;
    match cfg.scheme {
        Scheme::RateUniform | Scheme::RateNormal | Scheme::RateBeta => {
            let mapping = RateMapping::from_config(cfg).expect("rate scheme");
            encode_rate(signal, mapping, cfg.steps_per_sample, rng)
        }
        Scheme::TtfsLinear => encode_ttfs(signal, TtfsCurve::Linear, cfg.steps_per_sample),
        Scheme::TtfsLog => encode_ttfs(signal, TtfsCurve::Log, cfg.steps_per_sample),
        Scheme::Binary => encode_binary(signal, cfg.n_bits),
        Scheme::DeltaMod => encode_delta(signal, &cfg.thresholds, cfg.interp_factor),
    }
}
