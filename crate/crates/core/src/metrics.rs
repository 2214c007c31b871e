//! Firing-rate, reconstruction-SNR and spike-error robustness metrics.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::snn::{classify, CubaNetwork, Sample};
use crate::types::{Rng, Scheme, Signal, SpikeTensor};

/// Fraction of nonzero spike positions, counted by absolute value.
pub fn afr(tensor: &SpikeTensor) -> f64 {
    if tensor.is_empty() {
        return 0.0;
    }
    let spikes: u64 = tensor.as_slice().iter().map(|s| u64::from(s.unsigned_abs())).sum();
    spikes as f64 / tensor.len() as f64
}

/// `10 log10(P_signal / P_err)` in dB over every channel and sample, with
/// powers taken on the raw (not mean-removed) values. Returns +∞ for a
/// perfect reconstruction.
pub fn snr_db(original: &Signal, reconstructed: &Signal) -> Result<f64> {
    if original.channels() != reconstructed.channels() || original.samples() != reconstructed.samples() {
        return Err(Error::Shape(format!(
            "original {}x{} vs reconstruction {}x{}",
            original.channels(),
            original.samples(),
            reconstructed.channels(),
            reconstructed.samples()
        )));
    }
    snr_db_values(original.values(), reconstructed.values())
}

/// SNR over flat value slices; used to pool several windows into one figure.
pub fn snr_db_values(original: &[f64], reconstructed: &[f64]) -> Result<f64> {
    if original.len() != reconstructed.len() {
        return Err(Error::Shape(format!(
            "{} original values vs {} reconstructed",
            original.len(),
            reconstructed.len()
        )));
    }
    if original.is_empty() {
        return Err(Error::EmptyDataset);
    }
    let n = original.len() as f64;
    let p_signal = original.iter().map(|x| x * x).sum::<f64>() / n;
    let p_err = original
        .iter()
        .zip(reconstructed)
        .map(|(a, b)| (a - b) * (a - b))
        .sum::<f64>()
        / n;
    if p_err == 0.0 {
        return Ok(f64::INFINITY);
    }
    Ok(10.0 * (p_signal / p_err).log10())
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum NoiseMode {
    /// 0 → 1 and nonzero → 0.
    FlipBinary,
    /// 0 → ±1 (equal odds) and nonzero → 0.
    SignedPerturb,
}

impl NoiseMode {
    pub fn for_scheme(scheme: Scheme) -> Self {
        if scheme.is_signed() {
            NoiseMode::SignedPerturb
        } else {
            NoiseMode::FlipBinary
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct NoiseSpec {
    pub error_probability: f64,
    pub seed: u64,
    pub mode: NoiseMode,
}

impl NoiseSpec {
    pub fn validate(&self) -> Result<()> {
        if (0.0..=1.0).contains(&self.error_probability) {
            Ok(())
        } else {
            Err(Error::Config(format!(
                "error probability {} outside [0, 1]",
                self.error_probability
            )))
        }
    }
}

/// Alters every position independently with probability `error_probability`.
///
/// Two variates are drawn per position regardless of the outcome, so the
/// set of changed positions for a given seed grows monotonically with the
/// error probability.
pub fn inject_noise(tensor: &SpikeTensor, spec: &NoiseSpec) -> Result<SpikeTensor> {
    spec.validate()?;
    let mut out = tensor.clone();
    if spec.error_probability == 0.0 {
        return Ok(out);
    }
    let mut rng = Rng::new(spec.seed);
    for s in out.as_mut_slice() {
        let change = rng.uniform() < spec.error_probability;
        let positive = rng.uniform() < 0.5;
        if !change {
            continue;
        }
        *s = match (spec.mode, *s) {
            (_, x) if x != 0 => 0,
            (NoiseMode::FlipBinary, _) => 1,
            (NoiseMode::SignedPerturb, _) => {
                if positive {
                    1
                } else {
                    -1
                }
            }
        };
    }
    Ok(out)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RobustnessRow {
    pub error_probability: f64,
    pub accuracy: f64,
    /// Clean accuracy minus accuracy at this error probability.
    pub accuracy_drop: f64,
}

/// Accuracy under spike errors for each probability in `p_list`. Sample `i`
/// is perturbed with seed `Rng::new(seed).child(i)` at every probability.
pub fn robustness_sweep(
    model: &CubaNetwork,
    dataset: &[Sample],
    p_list: &[f64],
    mode: NoiseMode,
    seed: u64,
) -> Result<Vec<RobustnessRow>> {
    if dataset.is_empty() {
        return Err(Error::EmptyDataset);
    }
    let root = Rng::new(seed);
    let accuracy_at = |p: f64| -> Result<f64> {
        let mut correct = 0usize;
        for (i, sample) in dataset.iter().enumerate() {
            let spec = NoiseSpec {
                error_probability: p,
                seed: root.child(i as u64).seed(),
                mode,
            };
            let noisy = inject_noise(&sample.tensor, &spec)?;
            if classify(model, &noisy)?.class == sample.label {
                correct += 1;
            }
        }
        Ok(correct as f64 / dataset.len() as f64)
    };
    let baseline = accuracy_at(0.0)?;
    p_list
        .iter()
        .map(|&p| {
            let accuracy = if p == 0.0 { baseline } else { accuracy_at(p)? };
            Ok(RobustnessRow {
                error_probability: p,
                accuracy,
                accuracy_drop: baseline - accuracy,
            })
        })
        .collect()
}
