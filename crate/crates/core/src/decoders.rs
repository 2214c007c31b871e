//! Spike tensor → signal reconstruction, one inverse per encoder.

use crate::encoders::{check_unit, RateMapping, TtfsCurve};
use crate::error::{Error, Result};
use crate::special::normal_ppf;
use crate::types::{DeltaRule, EncodingConfig, Scheme, Signal, SpikeTensor, ThresholdBanks};

/// Probabilities passed to the normal PPF are clamped to this margin so that
/// empty or saturated windows reconstruct to finite values.
pub const PPF_CLAMP: f64 = 1e-6;

/// Inverse of [`crate::encoders::map_value_to_rate`].
pub fn rate_ppf(p: f64, mapping: RateMapping) -> Result<f64> {
    check_unit(p)?;
    Ok(match mapping {
        RateMapping::Uniform => p,
        RateMapping::Normal { mu, var } => {
            let q = p.clamp(PPF_CLAMP, 1.0 - PPF_CLAMP);
            (mu + var.sqrt() * normal_ppf(q)).clamp(0.0, 1.0)
        }
        RateMapping::CombinedBeta { shape } => {
            let inv = 1.0 / shape;
            if p < 0.5 {
                0.5 * (1.0 - (1.0 - 2.0 * p).powf(inv))
            } else {
                0.5 * (1.0 + (2.0 * p - 1.0).powf(inv))
            }
        }
    })
}

fn windowed_shape(tensor: &SpikeTensor, steps_per_sample: usize) -> Result<usize> {
    if tensor.trains() != 1 {
        return Err(Error::Shape(format!(
            "expected a single spike train, found {}",
            tensor.trains()
        )));
    }
    if steps_per_sample == 0 || tensor.timesteps() % steps_per_sample != 0 {
        return Err(Error::Shape(format!(
            "{} timesteps are not a multiple of {steps_per_sample} steps per sample",
            tensor.timesteps()
        )));
    }
    Ok(tensor.timesteps() / steps_per_sample)
}

fn sample_rate(tensor: &SpikeTensor, steps_per_window: usize) -> f64 {
    1000.0 / (tensor.time_step_ms() * steps_per_window as f64)
}

/// Per-window spike count / N, mapped back through the PPF.
pub fn decode_rate(
    tensor: &SpikeTensor,
    mapping: RateMapping,
    steps_per_sample: usize,
) -> Result<Signal> {
    let samples = windowed_shape(tensor, steps_per_sample)?;
    let mut data = Vec::with_capacity(tensor.channels() * samples);
    for c in 0..tensor.channels() {
        for window in tensor.row(0, c).chunks(steps_per_sample) {
            let count = window.iter().filter(|&&s| s != 0).count();
            data.push(rate_ppf(count as f64 / steps_per_sample as f64, mapping)?);
        }
    }
    Ok(Signal::from_flat(
        data,
        tensor.channels(),
        sample_rate(tensor, steps_per_sample),
        default_names(tensor.channels()),
    ))
}

/// Reads the spike latency of each window. Empty windows decode to 0
/// (linear) or 0.5 (log).
pub fn decode_ttfs(tensor: &SpikeTensor, curve: TtfsCurve, steps_per_sample: usize) -> Result<Signal> {
    let samples = windowed_shape(tensor, steps_per_sample)?;
    let n = steps_per_sample as f64;
    let mut data = Vec::with_capacity(tensor.channels() * samples);
    for c in 0..tensor.channels() {
        for (w, window) in tensor.row(0, c).chunks(steps_per_sample).enumerate() {
            let mut spikes = window.iter().enumerate().filter(|(_, &s)| s != 0);
            let first = spikes.next();
            let extra = spikes.count();
            if extra > 0 {
                return Err(Error::MultipleSpikesInWindow {
                    channel: c,
                    window: w,
                    count: extra + 1,
                });
            }
            let v = match (curve, first) {
                (TtfsCurve::Linear, None) => 0.0,
                (TtfsCurve::Linear, Some((idx, _))) => 1.0 - idx as f64 / n,
                (TtfsCurve::Log, None) => 0.5,
                (TtfsCurve::Log, Some((idx, &sign))) => {
                    0.5 + f64::from(sign) * 0.5 * 10f64.powf(-(idx as f64) / 20.0)
                }
            };
            data.push(v);
        }
    }
    Ok(Signal::from_flat(
        data,
        tensor.channels(),
        sample_rate(tensor, steps_per_sample),
        default_names(tensor.channels()),
    ))
}

/// Sum of fired bits weighted by their binary fraction 2^-(bit+1).
pub fn decode_binary(tensor: &SpikeTensor) -> Signal {
    let [bits, channels, steps] = tensor.dims();
    let mut data = vec![0.0; channels * steps];
    for bit in 0..bits {
        let weight = 0.5f64.powi(bit as i32 + 1);
        for c in 0..channels {
            for (t, &s) in tensor.row(bit, c).iter().enumerate() {
                data[c * steps + t] += f64::from(s) * weight;
            }
        }
    }
    Signal::from_flat(data, channels, 1000.0 / tensor.time_step_ms(), default_names(channels))
}

/// Integrates delta-modulated steps from per-channel initial values.
///
/// The step estimate at each time is `sign * T_k` for the highest fired
/// threshold `k` (or the midpoint rule), and the running value is clamped
/// to `[0, 1]`. Output has `timesteps + 1` samples at the up-sampled rate.
pub fn decode_delta(
    tensor: &SpikeTensor,
    thresholds: &ThresholdBanks,
    initial: &[f64],
    rule: DeltaRule,
) -> Result<Signal> {
    thresholds.validate()?;
    let [trains, channels, steps] = tensor.dims();
    if trains != thresholds.trains() {
        return Err(Error::Shape(format!(
            "{trains} trains for {} thresholds",
            thresholds.trains()
        )));
    }
    if initial.len() != channels {
        return Err(Error::Shape(format!(
            "{} initial values for {channels} channels",
            initial.len()
        )));
    }
    let mut data = Vec::with_capacity(channels * (steps + 1));
    for (c, &init) in initial.iter().enumerate() {
        let bank = thresholds.bank_for(c);
        let mut value = init;
        data.push(value);
        for t in 0..steps {
            let mut sign = 0i8;
            let mut top = None;
            for k in 0..trains {
                let s = tensor.get(k, c, t);
                if s == 0 {
                    continue;
                }
                if sign != 0 && s != sign {
                    return Err(Error::InconsistentSpikes { channel: c, step: t });
                }
                sign = s;
                top = Some(k);
            }
            if let Some(k) = top {
                let magnitude = match rule {
                    DeltaRule::Largest => bank[k],
                    // above the last threshold the bank is assumed to keep doubling
                    DeltaRule::Midpoint => 0.5 * (bank[k] + bank.get(k + 1).copied().unwrap_or(2.0 * bank[k])),
                };
                value = (value + f64::from(sign) * magnitude).clamp(0.0, 1.0);
            }
            data.push(value);
        }
    }
    Ok(Signal::from_flat(
        data,
        channels,
        1000.0 / tensor.time_step_ms(),
        default_names(channels),
    ))
}

/// Reconstructs at the original sample rate for any scheme. Delta
/// reconstructions are decimated back by `interp_factor`; `initial` supplies
/// the first original sample of each channel.
pub fn decode(tensor: &SpikeTensor, cfg: &EncodingConfig, initial: &[f64]) -> Result<Signal> {
    match cfg.scheme {
        Scheme::RateUniform | Scheme::RateNormal | Scheme::RateBeta => {
            let mapping = RateMapping::from_config(cfg).expect("rate scheme");
            decode_rate(tensor, mapping, cfg.steps_per_sample)
        }
        Scheme::TtfsLinear => decode_ttfs(tensor, TtfsCurve::Linear, cfg.steps_per_sample),
        Scheme::TtfsLog => decode_ttfs(tensor, TtfsCurve::Log, cfg.steps_per_sample),
        Scheme::Binary => {
            if tensor.trains() != cfg.n_bits {
                return Err(Error::Shape(format!(
                    "{} trains for {} bits",
                    tensor.trains(),
                    cfg.n_bits
                )));
            }
            Ok(decode_binary(tensor))
        }
        Scheme::DeltaMod => {
            let up = decode_delta(tensor, &cfg.thresholds, initial, cfg.delta_rule)?;
            Ok(crate::dataio::decimate(&up, cfg.interp_factor))
        }
    }
}

fn default_names(channels: usize) -> Vec<String> {
    (0..channels).map(|c| format!("ch{c}")).collect()
}
