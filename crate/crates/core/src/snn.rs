//! Discrete-time current-based LIF (CUBA) feed-forward classifier.
//!
//! Each layer keeps a synaptic current `u` and a membrane voltage `v`:
//!
//! ```text
//! u[t] = (1 - current_decay) * u[t-1] + W s_in[t]
//! v[t] = (1 - voltage_decay) * v[t-1] + u[t]
//! s[t] = v[t] >= threshold,   v[t] <- 0 where s[t] = 1
//! ```
//!
//! Training runs backpropagation through time with a fast-sigmoid surrogate
//! for the spike derivative and minimizes the mean squared error between
//! output firing rates and per-class target rates.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::types::{Rng, SpikeTensor};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct CubaParams {
    pub threshold: f64,
    /// Fraction of synaptic current lost per step.
    pub current_decay: f64,
    /// Fraction of membrane voltage lost per step.
    pub voltage_decay: f64,
}

impl Default for CubaParams {
    fn default() -> Self {
        Self {
            threshold: 1.0,
            current_decay: 0.25,
            voltage_decay: 0.25,
        }
    }
}

impl CubaParams {
    pub fn validate(&self) -> Result<()> {
        let unit = |x: f64| x > 0.0 && x <= 1.0;
        if self.threshold > 0.0 && unit(self.current_decay) && unit(self.voltage_decay) {
            Ok(())
        } else {
            Err(Error::Config(format!("invalid neuron parameters {self:?}")))
        }
    }
}

/// Dense layer of CUBA neurons. Weights are stored input-major:
/// `weights[i * n_out + o]` connects input `i` to neuron `o`.
#[derive(Clone, Debug, PartialEq)]
pub struct Layer {
    pub n_in: usize,
    pub n_out: usize,
    pub weights: Vec<f64>,
    pub params: CubaParams,
}

impl Layer {
    pub fn zeros(n_in: usize, n_out: usize, params: CubaParams) -> Self {
        Self {
            n_in,
            n_out,
            weights: vec![0.0; n_in * n_out],
            params,
        }
    }

    #[inline]
    pub fn weight(&self, input: usize, neuron: usize) -> f64 {
        self.weights[input * self.n_out + neuron]
    }

    #[inline]
    pub fn set_weight(&mut self, input: usize, neuron: usize, w: f64) {
        self.weights[input * self.n_out + neuron] = w;
    }
}

/// Network construction options.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct NetworkConfig {
    pub hidden: Vec<usize>,
    pub params: CubaParams,
    pub dropout_p: f64,
    /// Uniform init bound is `weight_scale * sqrt(3 / n_in)`.
    pub weight_scale: f64,
    pub seed: u64,
}

impl Default for NetworkConfig {
    fn default() -> Self {
        Self {
            hidden: vec![256, 64],
            params: CubaParams::default(),
            dropout_p: 0.1,
            weight_scale: 1.0,
            seed: 0,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct CubaNetwork {
    pub layers: Vec<Layer>,
    pub dropout_p: f64,
}

impl CubaNetwork {
    /// Randomly initialized network `inputs → hidden... → classes`.
    pub fn new(inputs: usize, classes: usize, cfg: &NetworkConfig) -> Result<Self> {
        cfg.params.validate()?;
        if !(0.0..1.0).contains(&cfg.dropout_p) {
            return Err(Error::Config(format!("dropout {} outside [0, 1)", cfg.dropout_p)));
        }
        let mut sizes = vec![inputs];
        sizes.extend(&cfg.hidden);
        sizes.push(classes);
        if sizes.iter().any(|&n| n == 0) {
            return Err(Error::Config(format!("layer sizes must be positive: {sizes:?}")));
        }
        let mut rng = Rng::new(cfg.seed);
        let layers = sizes
            .windows(2)
            .map(|w| {
                let bound = cfg.weight_scale * (3.0 / w[0] as f64).sqrt();
                let weights = (0..w[0] * w[1])
                    .map(|_| (2.0 * rng.uniform() - 1.0) * bound)
                    .collect();
                Layer {
                    n_in: w[0],
                    n_out: w[1],
                    weights,
                    params: cfg.params,
                }
            })
            .collect();
        Ok(Self {
            layers,
            dropout_p: cfg.dropout_p,
        })
    }

    pub fn from_layers(layers: Vec<Layer>, dropout_p: f64) -> Result<Self> {
        if layers.is_empty() {
            return Err(Error::Config("network needs at least one layer".into()));
        }
        for pair in layers.windows(2) {
            if pair[0].n_out != pair[1].n_in {
                return Err(Error::Shape(format!(
                    "layer widths do not chain: {} -> {}",
                    pair[0].n_out, pair[1].n_in
                )));
            }
        }
        for layer in &layers {
            layer.params.validate()?;
            if layer.weights.len() != layer.n_in * layer.n_out {
                return Err(Error::Shape("weight matrix size mismatch".into()));
            }
        }
        Ok(Self { layers, dropout_p })
    }

    pub fn layer_sizes(&self) -> Vec<usize> {
        let mut sizes = vec![self.layers[0].n_in];
        sizes.extend(self.layers.iter().map(|l| l.n_out));
        sizes
    }

    pub fn inputs(&self) -> usize {
        self.layers[0].n_in
    }

    pub fn classes(&self) -> usize {
        self.layers.last().map_or(0, |l| l.n_out)
    }

    fn check_input(&self, tensor: &SpikeTensor) -> Result<()> {
        if tensor.features() != self.inputs() {
            return Err(Error::Shape(format!(
                "input has {} features per step ({:?}), network expects {}",
                tensor.features(),
                tensor.dims(),
                self.inputs()
            )));
        }
        Ok(())
    }
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct LayerState {
    pub current: Vec<f64>,
    pub voltage: Vec<f64>,
}

impl LayerState {
    pub fn new(n: usize) -> Self {
        Self {
            current: vec![0.0; n],
            voltage: vec![0.0; n],
        }
    }
}

/// Advances one layer by one time step with a dense input vector and
/// returns the output spikes (0/1).
pub fn cuba_step(layer: &Layer, state: &mut LayerState, input: &[f64]) -> Result<Vec<f64>> {
    if input.len() != layer.n_in || state.current.len() != layer.n_out || state.voltage.len() != layer.n_out {
        return Err(Error::Shape(format!(
            "layer {}x{} got input {} and state {}",
            layer.n_in,
            layer.n_out,
            input.len(),
            state.current.len()
        )));
    }
    let events: Vec<(usize, f64)> = input
        .iter()
        .enumerate()
        .filter(|(_, &x)| x != 0.0)
        .map(|(i, &x)| (i, x))
        .collect();
    let mut spikes = vec![0.0; layer.n_out];
    let mut v_pre = vec![0.0; layer.n_out];
    integrate(layer, state, &events, &mut v_pre);
    for o in 0..layer.n_out {
        if v_pre[o] >= layer.params.threshold {
            spikes[o] = 1.0;
            state.voltage[o] = 0.0;
        }
    }
    Ok(spikes)
}

/// Current and voltage update without the spike/reset; leaves the pre-reset
/// voltage in both `state.voltage` and `v_pre`.
#[inline]
fn integrate(layer: &Layer, state: &mut LayerState, events: &[(usize, f64)], v_pre: &mut [f64]) {
    let n = layer.n_out;
    let keep_u = 1.0 - layer.params.current_decay;
    let keep_v = 1.0 - layer.params.voltage_decay;
    for u in state.current.iter_mut() {
        *u *= keep_u;
    }
    for &(i, x) in events {
        let row = &layer.weights[i * n..(i + 1) * n];
        for (u, w) in state.current.iter_mut().zip(row) {
            *u += w * x;
        }
    }
    for ((v, u), pre) in state.voltage.iter_mut().zip(&state.current).zip(v_pre.iter_mut()) {
        *v = keep_v * *v + u;
        *pre = *v;
    }
}

/// Spike nonlinearity used during simulation.
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum SpikeFn {
    /// Heaviside spikes with hard reset; the backward pass uses the
    /// fast-sigmoid surrogate `1 / (1 + k|v - θ|)^2` and detaches the reset.
    Hard { slope: f64 },
    /// Sigmoid `σ(k (v - θ))` spikes with a proportional reset
    /// `v ← v (1 - s)`; fully differentiable.
    Soft { slope: f64 },
}

impl SpikeFn {
    #[inline]
    fn spike(self, v: f64, theta: f64) -> f64 {
        match self {
            SpikeFn::Hard { .. } => f64::from(u8::from(v >= theta)),
            SpikeFn::Soft { slope } => 1.0 / (1.0 + (-slope * (v - theta)).exp()),
        }
    }

    #[inline]
    fn derivative(self, v: f64, theta: f64, s: f64) -> f64 {
        match self {
            SpikeFn::Hard { slope } => {
                let d = 1.0 + slope * (v - theta).abs();
                1.0 / (d * d)
            }
            SpikeFn::Soft { slope } => slope * s * (1.0 - s),
        }
    }
}

/// Recorded simulation of one sample, kept for the backward pass.
struct Trace {
    /// Per layer, time-major `[t * n_out + o]`.
    v_pre: Vec<Vec<f64>>,
    spikes: Vec<Vec<f64>>,
    /// Sparse inputs per layer and time step, after dropout scaling.
    inputs: Vec<Vec<Vec<(usize, f64)>>>,
    /// Dropout multipliers applied to each hidden layer's spikes (empty when
    /// dropout is off), time-major.
    masks: Vec<Vec<f64>>,
    rates: Vec<f64>,
}

fn input_events(tensor: &SpikeTensor) -> Vec<Vec<(usize, f64)>> {
    let mut events = vec![Vec::new(); tensor.timesteps()];
    for train in 0..tensor.trains() {
        for c in 0..tensor.channels() {
            let f = train * tensor.channels() + c;
            for (t, &s) in tensor.row(train, c).iter().enumerate() {
                if s != 0 {
                    events[t].push((f, f64::from(s)));
                }
            }
        }
    }
    for step in &mut events {
        step.sort_unstable_by_key(|e| e.0);
    }
    events
}

fn simulate(
    net: &CubaNetwork,
    tensor: &SpikeTensor,
    spike_fn: SpikeFn,
    dropout: Option<&mut Rng>,
) -> Trace {
    let steps = tensor.timesteps();
    let mut layer_inputs = input_events(tensor);
    let mut trace = Trace {
        v_pre: Vec::with_capacity(net.layers.len()),
        spikes: Vec::with_capacity(net.layers.len()),
        inputs: Vec::with_capacity(net.layers.len()),
        masks: Vec::new(),
        rates: Vec::new(),
    };
    let mut dropout = dropout.filter(|_| net.dropout_p > 0.0);
    let keep_scale = 1.0 / (1.0 - net.dropout_p);

    for (l, layer) in net.layers.iter().enumerate() {
        let n = layer.n_out;
        let theta = layer.params.threshold;
        let mut state = LayerState::new(n);
        let mut v_pre = vec![0.0; steps * n];
        let mut spikes = vec![0.0; steps * n];
        for t in 0..steps {
            let pre = &mut v_pre[t * n..(t + 1) * n];
            integrate(layer, &mut state, &layer_inputs[t], pre);
            let out = &mut spikes[t * n..(t + 1) * n];
            for o in 0..n {
                let s = spike_fn.spike(pre[o], theta);
                out[o] = s;
                state.voltage[o] = pre[o] * (1.0 - s);
            }
        }
        let is_last = l + 1 == net.layers.len();
        let next_inputs = if is_last {
            Vec::new()
        } else {
            let mut mask = Vec::new();
            if let Some(rng) = dropout.as_deref_mut() {
                mask = (0..steps * n)
                    .map(|_| if rng.uniform() < net.dropout_p { 0.0 } else { keep_scale })
                    .collect();
            }
            let events = (0..steps)
                .map(|t| {
                    (0..n)
                        .filter_map(|o| {
                            let m = if mask.is_empty() { 1.0 } else { mask[t * n + o] };
                            let x = spikes[t * n + o] * m;
                            (x != 0.0).then_some((o, x))
                        })
                        .collect()
                })
                .collect();
            trace.masks.push(mask);
            events
        };
        trace.inputs.push(std::mem::replace(&mut layer_inputs, next_inputs));
        trace.v_pre.push(v_pre);
        trace.spikes.push(spikes);
    }
    let n = net.classes();
    let out = trace.spikes.last().expect("at least one layer");
    trace.rates = (0..n)
        .map(|o| {
            if steps == 0 {
                0.0
            } else {
                (0..steps).map(|t| out[t * n + o]).sum::<f64>() / steps as f64
            }
        })
        .collect();
    trace
}

/// Output of an inference pass.
#[derive(Clone, Debug, PartialEq)]
pub struct ForwardOutput {
    /// Output-layer raster, time-major `[t * classes + class]`, values 0/1.
    pub raster: Vec<u8>,
    pub rates: Vec<f64>,
}

/// Runs the network over every time step of `input` (no dropout).
pub fn forward(net: &CubaNetwork, input: &SpikeTensor) -> Result<ForwardOutput> {
    net.check_input(input)?;
    let trace = simulate(net, input, SpikeFn::Hard { slope: 1.0 }, None);
    let raster = trace
        .spikes
        .last()
        .expect("at least one layer")
        .iter()
        .map(|&s| s as u8)
        .collect();
    Ok(ForwardOutput {
        raster,
        rates: trace.rates,
    })
}

/// Target firing rates for the spike-rate loss.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct LossSpec {
    pub true_rate: f64,
    pub false_rate: f64,
}

impl Default for LossSpec {
    fn default() -> Self {
        Self {
            true_rate: 0.9,
            false_rate: 0.1,
        }
    }
}

impl LossSpec {
    pub fn validate(&self) -> Result<()> {
        let ok = self.true_rate > 0.0
            && self.true_rate <= 1.0
            && (0.0..1.0).contains(&self.false_rate)
            && self.false_rate < self.true_rate;
        if ok {
            Ok(())
        } else {
            Err(Error::Config(format!("invalid loss targets {self:?}")))
        }
    }

    fn target(&self, class: usize, label: usize) -> f64 {
        if class == label {
            self.true_rate
        } else {
            self.false_rate
        }
    }
}

/// Mean squared error between output rates and the one-hot target rates.
pub fn spike_rate_loss(rates: &[f64], label: usize, spec: &LossSpec) -> Result<f64> {
    if label >= rates.len() {
        return Err(Error::Index {
            label,
            classes: rates.len(),
        });
    }
    let sum: f64 = rates
        .iter()
        .enumerate()
        .map(|(c, r)| (r - spec.target(c, label)).powi(2))
        .sum();
    Ok(sum / rates.len() as f64)
}

#[derive(Clone, Debug, PartialEq)]
pub struct Prediction {
    pub class: usize,
    pub rates: Vec<f64>,
    /// True when no output neuron fired at all.
    pub no_spike: bool,
}

/// Argmax over rates, ties resolved toward the lowest index.
pub fn argmax_rates(rates: &[f64]) -> Prediction {
    let mut best = 0;
    for (c, &r) in rates.iter().enumerate() {
        if r > rates[best] {
            best = c;
        }
    }
    Prediction {
        class: best,
        rates: rates.to_vec(),
        no_spike: rates.iter().all(|&r| r == 0.0),
    }
}

pub fn classify(net: &CubaNetwork, input: &SpikeTensor) -> Result<Prediction> {
    Ok(argmax_rates(&forward(net, input)?.rates))
}

/// Encoded example with its class label.
#[derive(Clone, Debug, PartialEq)]
pub struct Sample {
    pub tensor: SpikeTensor,
    pub label: usize,
}

pub fn accuracy(net: &CubaNetwork, samples: &[Sample]) -> Result<f64> {
    if samples.is_empty() {
        return Err(Error::EmptyDataset);
    }
    let mut correct = 0usize;
    for s in samples {
        if classify(net, &s.tensor)?.class == s.label {
            correct += 1;
        }
    }
    Ok(correct as f64 / samples.len() as f64)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub epochs: usize,
    pub learning_rate: f64,
    pub batch_size: usize,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
    pub surrogate_slope: f64,
    pub soft_mode: bool,
    pub loss: LossSpec,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            epochs: 100,
            learning_rate: 1e-3,
            batch_size: 32,
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
            surrogate_slope: 10.0,
            soft_mode: false,
            loss: LossSpec::default(),
            seed: 0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.epochs == 0 || self.batch_size == 0 {
            return Err(Error::Config("epochs and batch size must be positive".into()));
        }
        if !(self.learning_rate > 0.0 && self.surrogate_slope > 0.0) {
            return Err(Error::Config("learning rate and surrogate slope must be positive".into()));
        }
        self.loss.validate()
    }

    fn spike_fn(&self) -> SpikeFn {
        if self.soft_mode {
            SpikeFn::Soft {
                slope: self.surrogate_slope,
            }
        } else {
            SpikeFn::Hard {
                slope: self.surrogate_slope,
            }
        }
    }
}

/// Loss and weight gradients (same layout as `Layer::weights`) for one sample.
fn sample_gradients(
    net: &CubaNetwork,
    sample: &Sample,
    spike_fn: SpikeFn,
    loss: &LossSpec,
    dropout: Option<&mut Rng>,
    grads: &mut [Vec<f64>],
) -> Result<(f64, Vec<f64>)> {
    let trace = simulate(net, &sample.tensor, spike_fn, dropout);
    let value = spike_rate_loss(&trace.rates, sample.label, loss)?;
    let steps = sample.tensor.timesteps();
    if steps == 0 {
        return Ok((value, trace.rates));
    }
    let classes = net.classes();
    let soft = matches!(spike_fn, SpikeFn::Soft { .. });

    // dL/ds for the current layer, time-major.
    let mut grad_s: Vec<f64> = {
        let per_step: Vec<f64> = (0..classes)
            .map(|c| 2.0 * (trace.rates[c] - loss.target(c, sample.label)) / (classes as f64 * steps as f64))
            .collect();
        (0..steps).flat_map(|_| per_step.iter().copied()).collect()
    };

    for l in (0..net.layers.len()).rev() {
        let layer = &net.layers[l];
        let n = layer.n_out;
        let keep_u = 1.0 - layer.params.current_decay;
        let keep_v = 1.0 - layer.params.voltage_decay;
        let theta = layer.params.threshold;
        let v_pre = &trace.v_pre[l];
        let spikes = &trace.spikes[l];
        let inputs = &trace.inputs[l];
        let need_below = l > 0;
        let mut grad_below = if need_below { vec![0.0; steps * layer.n_in] } else { Vec::new() };
        let mut adj_v = vec![0.0; n];
        let mut adj_u = vec![0.0; n];
        let mut du = vec![0.0; n];
        let g = &mut grads[l];
        for t in (0..steps).rev() {
            let mut any = false;
            for o in 0..n {
                let k = t * n + o;
                let s = spikes[k];
                let sp = spike_fn.derivative(v_pre[k], theta, s);
                let mut reset = 1.0 - s;
                if soft {
                    reset -= v_pre[k] * sp;
                }
                let dv = grad_s[k] * sp + adj_v[o] * reset;
                let d = dv + adj_u[o] * keep_u;
                adj_v[o] = dv * keep_v;
                adj_u[o] = d;
                du[o] = d;
                any |= d != 0.0;
            }
            if !any {
                continue;
            }
            for &(i, x) in &inputs[t] {
                let row = &mut g[i * n..(i + 1) * n];
                for (gw, d) in row.iter_mut().zip(&du) {
                    *gw += d * x;
                }
            }
            if need_below {
                let below = &mut grad_below[t * layer.n_in..(t + 1) * layer.n_in];
                for (i, gb) in below.iter_mut().enumerate() {
                    let row = &layer.weights[i * n..(i + 1) * n];
                    *gb = row.iter().zip(&du).map(|(w, d)| w * d).sum();
                }
            }
        }
        if need_below {
            let mask = &trace.masks[l - 1];
            if !mask.is_empty() {
                for (gb, m) in grad_below.iter_mut().zip(mask) {
                    *gb *= m;
                }
            }
            grad_s = grad_below;
        }
    }
    Ok((value, trace.rates))
}

fn zero_grads(net: &CubaNetwork) -> Vec<Vec<f64>> {
    net.layers.iter().map(|l| vec![0.0; l.weights.len()]).collect()
}

/// Adam optimizer state.
struct Adam {
    m: Vec<Vec<f64>>,
    v: Vec<Vec<f64>>,
    step: i32,
}

impl Adam {
    fn new(net: &CubaNetwork) -> Self {
        Self {
            m: zero_grads(net),
            v: zero_grads(net),
            step: 0,
        }
    }

    fn update(&mut self, net: &mut CubaNetwork, grads: &[Vec<f64>], cfg: &TrainConfig) {
        self.step += 1;
        let bc1 = 1.0 - cfg.beta1.powi(self.step);
        let bc2 = 1.0 - cfg.beta2.powi(self.step);
        for (l, layer) in net.layers.iter_mut().enumerate() {
            for (((w, g), m), v) in layer
                .weights
                .iter_mut()
                .zip(&grads[l])
                .zip(&mut self.m[l])
                .zip(&mut self.v[l])
            {
                *m = cfg.beta1 * *m + (1.0 - cfg.beta1) * g;
                *v = cfg.beta2 * *v + (1.0 - cfg.beta2) * g * g;
                *w -= cfg.learning_rate * (*m / bc1) / ((*v / bc2).sqrt() + cfg.epsilon);
            }
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpochStats {
    pub epoch: usize,
    pub loss: f64,
    /// Accuracy of the predictions made during the training pass.
    pub train_accuracy: f64,
    pub test_accuracy: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrainReport {
    pub epochs: Vec<EpochStats>,
    /// Epoch whose weights were kept (highest held-out accuracy, first wins).
    pub best_epoch: usize,
}

/// Trains `net` in place and leaves it holding the weights of the epoch with
/// the best held-out accuracy. When `test` is empty, training accuracy is
/// used for the selection.
pub fn train(net: &mut CubaNetwork, train_set: &[Sample], test_set: &[Sample], cfg: &TrainConfig) -> Result<TrainReport> {
    cfg.validate()?;
    if train_set.is_empty() {
        return Err(Error::EmptyDataset);
    }
    let dims = train_set[0].tensor.dims();
    for s in train_set.iter().chain(test_set) {
        if s.tensor.dims() != dims {
            return Err(Error::Shape(format!(
                "sample shape {:?} differs from {dims:?}",
                s.tensor.dims()
            )));
        }
        if s.label >= net.classes() {
            return Err(Error::Index {
                label: s.label,
                classes: net.classes(),
            });
        }
    }
    net.check_input(&train_set[0].tensor)?;

    let spike_fn = cfg.spike_fn();
    let mut rng = Rng::new(cfg.seed);
    let mut adam = Adam::new(net);
    let mut order: Vec<usize> = (0..train_set.len()).collect();
    let mut epochs = Vec::with_capacity(cfg.epochs);
    let mut best: Option<(f64, usize, CubaNetwork)> = None;

    for epoch in 0..cfg.epochs {
        rng.shuffle(&mut order);
        let mut total_loss = 0.0;
        let mut correct = 0usize;
        for batch in order.chunks(cfg.batch_size) {
            let mut grads = zero_grads(net);
            for &idx in batch {
                let sample = &train_set[idx];
                let (loss, rates) = sample_gradients(net, sample, spike_fn, &cfg.loss, Some(&mut rng), &mut grads)?;
                total_loss += loss;
                if argmax_rates(&rates).class == sample.label {
                    correct += 1;
                }
            }
            let scale = 1.0 / batch.len() as f64;
            for g in grads.iter_mut().flatten() {
                *g *= scale;
            }
            adam.update(net, &grads, cfg);
        }
        let loss = total_loss / train_set.len() as f64;
        if !loss.is_finite() || net.layers.iter().flat_map(|l| &l.weights).any(|w| !w.is_finite()) {
            return Err(Error::Divergence { epoch, loss });
        }
        let train_accuracy = correct as f64 / train_set.len() as f64;
        let test_accuracy = if test_set.is_empty() {
            train_accuracy
        } else {
            accuracy(net, test_set)?
        };
        log::debug!("epoch {epoch}: loss {loss:.5} train {train_accuracy:.3} test {test_accuracy:.3}");
        if best.as_ref().map_or(true, |(acc, _, _)| test_accuracy > *acc) {
            best = Some((test_accuracy, epoch, net.clone()));
        }
        epochs.push(EpochStats {
            epoch,
            loss,
            train_accuracy,
            test_accuracy,
        });
    }
    let (_, best_epoch, best_net) = best.expect("at least one epoch");
    *net = best_net;
    Ok(TrainReport { epochs, best_epoch })
}

/// Loss of a single sample without dropout.
pub fn sample_loss(net: &CubaNetwork, sample: &Sample, cfg: &TrainConfig) -> Result<f64> {
    let trace = simulate(net, &sample.tensor, cfg.spike_fn(), None);
    spike_rate_loss(&trace.rates, sample.label, &cfg.loss)
}

/// Analytic weight gradients of one sample's loss, without dropout.
pub fn weight_gradients(net: &CubaNetwork, sample: &Sample, cfg: &TrainConfig) -> Result<Vec<Vec<f64>>> {
    net.check_input(&sample.tensor)?;
    let mut grads = zero_grads(net);
    sample_gradients(net, sample, cfg.spike_fn(), &cfg.loss, None, &mut grads)?;
    Ok(grads)
}

#[derive(Clone, Debug, PartialEq)]
pub enum GradCheck {
    /// Hard spikes have no derivative to compare against.
    NonDifferentiable,
    Checked {
        max_relative_error: f64,
        weights_checked: usize,
    },
}

/// Smallest denominator of the relative error, so near-zero gradients are
/// compared on an absolute scale.
pub const GRAD_CHECK_FLOOR: f64 = 1e-6;

/// Compares analytic gradients against central finite differences (step
/// 1e-5) on `samples` randomly chosen weights. Only meaningful in soft mode.
pub fn gradient_check(net: &CubaNetwork, sample: &Sample, cfg: &TrainConfig, samples: usize) -> Result<GradCheck> {
    if !cfg.soft_mode {
        return Ok(GradCheck::NonDifferentiable);
    }
    const STEP: f64 = 1e-5;
    let analytic = weight_gradients(net, sample, cfg)?;
    let total: usize = net.layers.iter().map(|l| l.weights.len()).sum();
    let mut rng = Rng::new(cfg.seed ^ 0x6772_6164);
    let mut probe = net.clone();
    let mut max_err = 0.0f64;
    let count = samples.min(total);
    let mut picks: Vec<usize> = (0..total).collect();
    rng.shuffle(&mut picks);
    for &flat in picks.iter().take(count) {
        let (l, i) = locate(net, flat);
        let w0 = probe.layers[l].weights[i];
        probe.layers[l].weights[i] = w0 + STEP;
        let plus = sample_loss(&probe, sample, cfg)?;
        probe.layers[l].weights[i] = w0 - STEP;
        let minus = sample_loss(&probe, sample, cfg)?;
        probe.layers[l].weights[i] = w0;
        let numeric = (plus - minus) / (2.0 * STEP);
        let a = analytic[l][i];
        let diff = (a - numeric).abs();
        let rel = diff / a.abs().max(numeric.abs()).max(GRAD_CHECK_FLOOR);
        max_err = max_err.max(rel);
    }
    Ok(GradCheck::Checked {
        max_relative_error: max_err,
        weights_checked: count,
    })
}

fn locate(net: &CubaNetwork, mut flat: usize) -> (usize, usize) {
    for (l, layer) in net.layers.iter().enumerate() {
        if flat < layer.weights.len() {
            return (l, flat);
        }
        flat -= layer.weights.len();
    }
    unreachable!("weight index out of range")
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::types::Rng;
    use proptest::prelude::*;

    fn params(threshold: f64, cd: f64, vd: f64) -> CubaParams {
        CubaParams {
            threshold,
            current_decay: cd,
            voltage_decay: vd,
        }
    }

    fn random_tensor(rng: &mut Rng, dims: [usize; 3], density: f64) -> SpikeTensor {
        let data = (0..dims.iter().product())
            .map(|_| i8::from(rng.uniform() < density))
            .collect();
        SpikeTensor::from_vec(data, dims, 1.0, 1).unwrap()
    }

    #[test]
    fn zero_weights_never_spike() {
        let layer = Layer::zeros(3, 2, CubaParams::default());
        let mut state = LayerState::new(2);
        for _ in 0..20 {
            let s = cuba_step(&layer, &mut state, &[1.0, 1.0, -1.0]).unwrap();
            assert_eq!(s, vec![0.0, 0.0]);
        }
        assert_eq!(state, LayerState::new(2));
    }

    #[test]
    fn single_suprathreshold_input_spikes_and_resets() {
        let theta = 0.8;
        let mut layer = Layer::zeros(1, 1, params(theta, 0.3, 0.2));
        layer.set_weight(0, 0, 1.5 * theta);
        let mut state = LayerState::new(1);
        let s = cuba_step(&layer, &mut state, &[1.0]).unwrap();
        assert_eq!(s, vec![1.0]);
        assert!((state.current[0] - 1.5 * theta).abs() < 1e-15);
        assert_eq!(state.voltage[0], 0.0);
    }

    #[test]
    fn subthreshold_drive_converges_to_geometric_limit() {
        // Constant drive c per step: u* = c / a_u, v* = u* / a_v.
        let (a_u, a_v, c) = (0.5, 0.25, 0.1);
        let limit = c / a_u / a_v;
        assert!(limit < 1.0);
        let mut layer = Layer::zeros(1, 1, params(1.0, a_u, a_v));
        layer.set_weight(0, 0, c);
        let mut state = LayerState::new(1);
        for _ in 0..1000 {
            assert_eq!(cuba_step(&layer, &mut state, &[1.0]).unwrap(), vec![0.0]);
        }
        assert!((state.voltage[0] - limit).abs() < 1e-12);
        assert!((state.current[0] - c / a_u).abs() < 1e-12);
    }

    #[test]
    fn cuba_step_shape_error() {
        let layer = Layer::zeros(3, 2, CubaParams::default());
        let mut state = LayerState::new(2);
        assert!(matches!(cuba_step(&layer, &mut state, &[1.0]), Err(Error::Shape(_))));
    }

    #[test]
    fn identity_relay() {
        let mut layer = Layer::zeros(1, 1, params(0.5, 1.0, 1.0));
        layer.set_weight(0, 0, 1.0);
        let net = CubaNetwork::from_layers(vec![layer], 0.0).unwrap();
        let mut rng = Rng::new(3);
        let input = random_tensor(&mut rng, [1, 1, 200], 0.4);
        let out = forward(&net, &input).unwrap();
        let expected: Vec<u8> = input.as_slice().iter().map(|&s| s as u8).collect();
        assert_eq!(out.raster, expected);
    }

    #[test]
    fn forward_zero_input_gives_zero_rates() {
        let net = CubaNetwork::new(14, 3, &NetworkConfig { hidden: vec![16], ..Default::default() }).unwrap();
        let out = forward(&net, &SpikeTensor::zeros(2, 7, 50, 1.0, 1)).unwrap();
        assert!(out.rates.iter().all(|&r| r == 0.0));
    }

    #[test]
    fn forward_saturates_with_strong_weights() {
        let mut l0 = Layer::zeros(2, 2, params(1.0, 1.0, 1.0));
        l0.set_weight(0, 0, 5.0);
        l0.set_weight(1, 1, 5.0);
        let net = CubaNetwork::from_layers(vec![l0], 0.0).unwrap();
        let input = SpikeTensor::from_vec(vec![1; 2 * 100], [1, 2, 100], 1.0, 1).unwrap();
        let out = forward(&net, &input).unwrap();
        assert_eq!(out.rates, vec![1.0, 1.0]);
    }

    #[test]
    fn forward_is_deterministic() {
        let net = CubaNetwork::new(7, 3, &NetworkConfig { hidden: vec![32, 8], seed: 5, ..Default::default() }).unwrap();
        let mut rng = Rng::new(9);
        let input = random_tensor(&mut rng, [1, 7, 300], 0.3);
        assert_eq!(forward(&net, &input).unwrap(), forward(&net, &input).unwrap());
        let wrong = SpikeTensor::zeros(2, 7, 10, 1.0, 1);
        assert!(matches!(forward(&net, &wrong), Err(Error::Shape(_))));
    }

    #[test]
    fn loss_examples() {
        let spec = LossSpec::default();
        assert_eq!(spike_rate_loss(&[0.9, 0.1, 0.1], 0, &spec).unwrap(), 0.0);
        let l = spike_rate_loss(&[0.9, 0.3, 0.1], 0, &spec).unwrap();
        assert!((l - 0.04 / 3.0).abs() < 1e-15);
        assert!(matches!(spike_rate_loss(&[0.5; 3], 3, &spec), Err(Error::Index { .. })));
    }

    #[test]
    fn classify_ties_and_silence() {
        assert_eq!(argmax_rates(&[0.8, 0.1, 0.1]).class, 0);
        assert_eq!(argmax_rates(&[0.5, 0.5, 0.1]).class, 0);
        assert_eq!(argmax_rates(&[0.1, 0.5, 0.5]).class, 1);
        let p = argmax_rates(&[0.0, 0.0, 0.0]);
        assert_eq!(p.class, 0);
        assert!(p.no_spike);
        assert!(!argmax_rates(&[0.0, 0.1]).no_spike);
    }

    #[test]
    fn memorizes_single_sample() {
        let mut rng = Rng::new(11);
        let sample = Sample {
            tensor: random_tensor(&mut rng, [1, 4, 60], 0.5),
            label: 2,
        };
        let mut net = CubaNetwork::new(4, 3, &NetworkConfig { hidden: vec![16], dropout_p: 0.0, seed: 1, ..Default::default() }).unwrap();
        let cfg = TrainConfig {
            epochs: 60,
            learning_rate: 0.01,
            batch_size: 1,
            ..Default::default()
        };
        let report = train(&mut net, std::slice::from_ref(&sample), &[], &cfg).unwrap();
        assert_eq!(report.epochs.last().unwrap().train_accuracy, 1.0);
        assert_eq!(classify(&net, &sample.tensor).unwrap().class, 2);
    }

    #[test]
    fn training_is_deterministic() {
        let mut rng = Rng::new(12);
        let data: Vec<Sample> = (0..6)
            .map(|i| Sample {
                tensor: random_tensor(&mut rng, [1, 3, 40], 0.2 + 0.1 * (i % 3) as f64),
                label: i % 3,
            })
            .collect();
        let cfg = TrainConfig {
            epochs: 4,
            batch_size: 2,
            learning_rate: 0.01,
            seed: 3,
            ..Default::default()
        };
        let run = || {
            let mut net = CubaNetwork::new(3, 3, &NetworkConfig { hidden: vec![8], seed: 2, ..Default::default() }).unwrap();
            let r = train(&mut net, &data, &data, &cfg).unwrap();
            (r.epochs.iter().map(|e| e.loss.to_bits()).collect::<Vec<_>>(), net)
        };
        let (a, na) = run();
        let (b, nb) = run();
        assert_eq!(a, b);
        assert_eq!(na, nb);
    }

    #[test]
    fn divergence_is_reported() {
        let sample = Sample {
            tensor: SpikeTensor::from_vec(vec![1; 20], [1, 2, 10], 1.0, 1).unwrap(),
            label: 0,
        };
        let mut net = CubaNetwork::new(2, 2, &NetworkConfig { hidden: vec![4], ..Default::default() }).unwrap();
        net.layers[0].weights[0] = f64::NAN;
        let err = train(&mut net, &[sample], &[], &TrainConfig { epochs: 1, ..Default::default() }).unwrap_err();
        assert!(matches!(err, Error::Divergence { .. }));
        assert_eq!(err.exit_code(), 4);
    }

    #[test]
    fn gradient_check_skips_hard_mode() {
        let net = CubaNetwork::new(2, 2, &NetworkConfig { hidden: vec![4], ..Default::default() }).unwrap();
        let sample = Sample {
            tensor: SpikeTensor::zeros(1, 2, 5, 1.0, 1),
            label: 0,
        };
        let r = gradient_check(&net, &sample, &TrainConfig::default(), 10).unwrap();
        assert_eq!(r, GradCheck::NonDifferentiable);
    }

    #[test]
    fn zero_input_zero_gradient() {
        let net = CubaNetwork::new(6, 3, &NetworkConfig { hidden: vec![8, 4], seed: 4, ..Default::default() }).unwrap();
        let sample = Sample {
            tensor: SpikeTensor::zeros(1, 6, 30, 1.0, 1),
            label: 1,
        };
        let grads = weight_gradients(&net, &sample, &TrainConfig::default()).unwrap();
        assert!(grads.iter().flatten().all(|&g| g == 0.0));
        // Soft spikes leak a little activity, but nothing reaches the input weights.
        let soft = TrainConfig { soft_mode: true, ..Default::default() };
        let grads = weight_gradients(&net, &sample, &soft).unwrap();
        assert!(grads[0].iter().all(|&g| g == 0.0));
    }

    #[test]
    fn soft_gradients_match_finite_differences() {
        let mut rng = Rng::new(21);
        let sample = Sample {
            tensor: random_tensor(&mut rng, [1, 5, 25], 0.4),
            label: 1,
        };
        let net = CubaNetwork::new(5, 3, &NetworkConfig { hidden: vec![12, 8], seed: 8, weight_scale: 2.0, ..Default::default() }).unwrap();
        let cfg = TrainConfig { soft_mode: true, surrogate_slope: 4.0, ..Default::default() };
        match gradient_check(&net, &sample, &cfg, 150).unwrap() {
            GradCheck::Checked { max_relative_error, weights_checked } => {
                assert_eq!(weights_checked, 150);
                assert!(max_relative_error <= 1e-4, "max rel err {max_relative_error}");
            }
            other => panic!("{other:?}"),
        }
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(24))]

        #[test]
        fn reset_keeps_voltage_below_threshold(seed in 0u64..1000, theta in 0.2f64..2.0) {
            let mut rng = Rng::new(seed);
            let cfg = NetworkConfig { hidden: vec![10], params: params(theta, 0.3, 0.1), weight_scale: 3.0, seed, ..Default::default() };
            let net = CubaNetwork::new(4, 3, &cfg).unwrap();
            let input = random_tensor(&mut rng, [1, 4, 80], 0.5);
            let mut states: Vec<LayerState> = net.layers.iter().map(|l| LayerState::new(l.n_out)).collect();
            for t in 0..80 {
                let mut x: Vec<f64> = (0..4).map(|c| f64::from(input.get(0, c, t))).collect();
                for (layer, state) in net.layers.iter().zip(&mut states) {
                    x = cuba_step(layer, state, &x).unwrap();
                    prop_assert!(state.voltage.iter().all(|&v| v < theta));
                }
            }
        }

        #[test]
        fn scaling_weights_and_threshold_preserves_raster(seed in 0u64..1000) {
            let mut rng = Rng::new(seed);
            let net = CubaNetwork::new(6, 3, &NetworkConfig { hidden: vec![12], weight_scale: 2.0, seed, ..Default::default() }).unwrap();
            let mut doubled = net.clone();
            for layer in &mut doubled.layers {
                layer.params.threshold *= 2.0;
                for w in &mut layer.weights {
                    *w *= 2.0;
                }
            }
            let input = random_tensor(&mut rng, [1, 6, 100], 0.3);
            prop_assert_eq!(forward(&net, &input).unwrap(), forward(&doubled, &input).unwrap());
        }

        #[test]
        fn loss_nonnegative_zero_iff_target(r in proptest::collection::vec(0.0f64..=1.0, 3), label in 0usize..3) {
            let spec = LossSpec::default();
            let l = spike_rate_loss(&r, label, &spec).unwrap();
            prop_assert!(l >= 0.0);
            let hit = r.iter().enumerate().all(|(c, &x)| x == if c == label { 0.9 } else { 0.1 });
            prop_assert_eq!(l == 0.0, hit);
        }
    }
}
