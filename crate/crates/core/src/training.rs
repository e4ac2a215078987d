//! Ex-situ training under the circuit constraints.
//!
//! Trainable parameters are unconstrained reals θ per present connection and
//! polarity (bias column included). Two mappings stand between θ and the
//! network the circuit sees: the device curve σ = g1(θ) keeps conductances in
//! range, and the row normalization w = σ / Σ(σ_p + σ_n) makes every
//! succeeding neuron's weights positive with row sum exactly 1, which is what
//! lets the abstract weighted sum reproduce the crossbar divider voltage.
//! Backpropagation differentiates through both mappings; the normalizer
//! couples all weights of a row, so its full Jacobian contributes cross-terms
//! (a cheaper diagonal approximation is available as a config switch).
//!
//! Masked-out positions hold exactly zero before and after every update and
//! receive exactly zero gradient.

use ndarray::{Array1, Array2};
use rand::seq::SliceRandom;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::circuit::{
    self, classify, ConductanceNetwork, JunctionConductances, LayerSignals, Trace,
};
use crate::datasets::Dataset;
use crate::device::{self, DeviceParams};
use crate::error::{Error, Result};
use crate::rng;
use crate::topology::{MaskMatrix, NetworkTopology};

/// Unconstrained trainable parameters, one matrix pair per junction, shape
/// `n_next x (n_prev + 1)` with the bias column last.
#[derive(Debug, Clone, PartialEq)]
pub struct ThetaParams {
    pub p: Vec<Array2<f64>>,
    pub n: Vec<Array2<f64>>,
}

/// Gradient of the loss with respect to [`ThetaParams`], same shapes.
#[derive(Debug, Clone, PartialEq)]
pub struct ThetaGradient {
    pub p: Vec<Array2<f64>>,
    pub n: Vec<Array2<f64>>,
}

/// Normalized effective weights after both mappings; masked positions are 0,
/// present positions are positive, and each row sums to 1 across both
/// polarities including the bias pair.
#[derive(Debug, Clone, PartialEq)]
pub struct MappedWeights {
    pub p: Vec<Array2<f64>>,
    pub n: Vec<Array2<f64>>,
}

/// How to differentiate through the row normalizer.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum G2Gradient {
    /// Exact Jacobian including the cross-terms from the shared row sum.
    Full,
    /// Per-entry diagonal of the Jacobian only; hardware-friendly ablation.
    Diagonal,
}

impl std::fmt::Display for G2Gradient {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            G2Gradient::Full => write!(f, "full"),
            G2Gradient::Diagonal => write!(f, "diagonal"),
        }
    }
}

impl std::str::FromStr for G2Gradient {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "full" => Ok(G2Gradient::Full),
            "diagonal" => Ok(G2Gradient::Diagonal),
            other => Err(Error::InvalidParameter(format!(
                "unknown g2 gradient mode {other:?}"
            ))),
        }
    }
}

fn default_learning_rate() -> f64 {
    0.1
}
fn default_max_epochs() -> usize {
    10_000
}
fn default_target_accuracy() -> f64 {
    0.98
}
fn default_batch_size() -> usize {
    1
}
fn default_seed() -> u64 {
    1
}
fn default_init_scale() -> f64 {
    0.1
}
fn default_g2_gradient() -> G2Gradient {
    G2Gradient::Full
}

/// Epoch ceiling regardless of configuration.
pub const MAX_EPOCH_LIMIT: usize = 100_000;

const SHUFFLE_STREAM: u64 = 1;

/// SGD hyperparameters. Batch size is fixed at 1: updates are per-sample.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub learning_rate: f64,
    pub max_epochs: usize,
    pub target_accuracy: f64,
    pub batch_size: usize,
    pub seed: u64,
    pub init_scale: f64,
    pub g2_gradient: G2Gradient,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            learning_rate: default_learning_rate(),
            max_epochs: default_max_epochs(),
            target_accuracy: default_target_accuracy(),
            batch_size: default_batch_size(),
            seed: default_seed(),
            init_scale: default_init_scale(),
            g2_gradient: default_g2_gradient(),
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return Err(Error::Config(format!(
                "learning_rate must be positive, got {}",
                self.learning_rate
            )));
        }
        if self.max_epochs == 0 || self.max_epochs > MAX_EPOCH_LIMIT {
            return Err(Error::Config(format!(
                "max_epochs must be in 1..={MAX_EPOCH_LIMIT}, got {}",
                self.max_epochs
            )));
        }
        if !(self.target_accuracy > 0.0 && self.target_accuracy <= 1.0) {
            return Err(Error::Config(format!(
                "target_accuracy must be in (0, 1], got {}",
                self.target_accuracy
            )));
        }
        if self.batch_size != 1 {
            return Err(Error::Config(format!(
                "batch_size is fixed at 1, got {}",
                self.batch_size
            )));
        }
        if !(self.init_scale >= 0.0 && self.init_scale.is_finite()) {
            return Err(Error::Config(format!(
                "init_scale must be >= 0, got {}",
                self.init_scale
            )));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum StopReason {
    TargetReached,
    EpochLimit,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    /// Mean per-sample squared-error loss over the epoch's updates.
    pub loss: f64,
    /// Training-set accuracy with the parameters as of the epoch's end.
    pub train_accuracy: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainReport {
    pub epochs: Vec<EpochRecord>,
    pub epochs_run: usize,
    pub stop: StopReason,
    /// Filled in by the caller once the test split is evaluated.
    pub final_test_accuracy: Option<f64>,
    pub wall_time_s: f64,
}

/// Present column indices per row and junction, bias column included.
/// Built once per training run and shared by the hot loops.
pub(crate) struct SparseLayout {
    rows: Vec<Vec<Vec<usize>>>,
    shapes: Vec<(usize, usize)>, // (n_next, n_prev + 1)
}

impl SparseLayout {
    pub(crate) fn new(topology: &NetworkTopology, masks: &[MaskMatrix]) -> Result<Self> {
        topology.validate_masks(masks)?;
        Ok(Self {
            rows: masks.iter().map(circuit::extended_rows).collect(),
            shapes: masks
                .iter()
                .map(|m| (m.n_next(), m.n_prev() + 1))
                .collect(),
        })
    }

    fn junctions(&self) -> usize {
        self.rows.len()
    }

    fn zeros_like(&self) -> Vec<Array2<f64>> {
        self.shapes.iter().map(|&s| Array2::zeros(s)).collect()
    }
}

/// Seeded uniform initialization in [-init_scale, +init_scale] at present
/// positions; masked positions are exactly zero.
pub fn init_theta(
    topology: &NetworkTopology,
    masks: &[MaskMatrix],
    config: &TrainConfig,
) -> Result<ThetaParams> {
    config.validate()?;
    let layout = SparseLayout::new(topology, masks)?;
    let mut r = rng::stream(config.seed);
    let mut p = layout.zeros_like();
    let mut n = layout.zeros_like();
    let s = config.init_scale;
    for j in 0..layout.junctions() {
        for (row, cols) in layout.rows[j].iter().enumerate() {
            for &c in cols {
                p[j][[row, c]] = if s > 0.0 { r.random_range(-s..s) } else { 0.0 };
                n[j][[row, c]] = if s > 0.0 { r.random_range(-s..s) } else { 0.0 };
            }
        }
    }
    Ok(ThetaParams { p, n })
}

/// Per-sample mapping products kept for the backward pass.
struct MapCache {
    sigma_p: Vec<Array2<f64>>,
    sigma_n: Vec<Array2<f64>>,
    /// Row normalizers S = Σ present (σ_p + σ_n), bias included.
    s: Vec<Array1<f64>>,
    w_p: Vec<Array2<f64>>,
    w_n: Vec<Array2<f64>>,
}

fn map_cache(theta: &ThetaParams, layout: &SparseLayout, device: &DeviceParams) -> MapCache {
    let j_count = layout.junctions();
    let mut cache = MapCache {
        sigma_p: layout.zeros_like(),
        sigma_n: layout.zeros_like(),
        s: layout
            .shapes
            .iter()
            .map(|&(rows, _)| Array1::zeros(rows))
            .collect(),
        w_p: layout.zeros_like(),
        w_n: layout.zeros_like(),
    };
    for j in 0..j_count {
        for (row, cols) in layout.rows[j].iter().enumerate() {
            let mut sum = 0.0;
            for &c in cols {
                let sp = device::g1(theta.p[j][[row, c]], device);
                let sn = device::g1(theta.n[j][[row, c]], device);
                cache.sigma_p[j][[row, c]] = sp;
                cache.sigma_n[j][[row, c]] = sn;
                sum += sp + sn;
            }
            cache.s[j][row] = sum;
            for &c in cols {
                cache.w_p[j][[row, c]] = cache.sigma_p[j][[row, c]] / sum;
                cache.w_n[j][[row, c]] = cache.sigma_n[j][[row, c]] / sum;
            }
        }
    }
    cache
}

/// Map parameters to normalized weights through both constraint mappings.
pub fn map_weights(
    theta: &ThetaParams,
    topology: &NetworkTopology,
    masks: &[MaskMatrix],
    device: &DeviceParams,
) -> Result<MappedWeights> {
    device.validate()?;
    check_theta(theta, topology, masks)?;
    let layout = SparseLayout::new(topology, masks)?;
    let cache = map_cache(theta, &layout, device);
    Ok(MappedWeights {
        p: cache.w_p,
        n: cache.w_n,
    })
}

fn check_theta(
    theta: &ThetaParams,
    topology: &NetworkTopology,
    masks: &[MaskMatrix],
) -> Result<()> {
    let j_count = topology.junction_count();
    if theta.p.len() != j_count || theta.n.len() != j_count {
        return Err(Error::DimensionMismatch {
            context: "theta junction count".into(),
            expected: j_count,
            got: theta.p.len(),
        });
    }
    for j in 0..j_count {
        let shape = (masks[j].n_next(), masks[j].n_prev() + 1);
        for (name, m) in [("theta_p", &theta.p[j]), ("theta_n", &theta.n[j])] {
            if m.dim() != shape {
                return Err(Error::DimensionMismatch {
                    context: format!("{name} at junction {}", j + 1),
                    expected: shape.0 * shape.1,
                    got: m.len(),
                });
            }
            if let Some(v) = m.iter().find(|v| !v.is_finite()) {
                return Err(Error::NonFinite(format!("{name} at junction {}: {v}", j + 1)));
            }
        }
    }
    Ok(())
}

/// Map parameters to a circuit-space network (conductances in µS).
pub fn theta_to_network(
    theta: &ThetaParams,
    topology: &NetworkTopology,
    masks: &[MaskMatrix],
    device: &DeviceParams,
) -> Result<ConductanceNetwork> {
    device.validate()?;
    check_theta(theta, topology, masks)?;
    let layout = SparseLayout::new(topology, masks)?;
    let mut junctions = Vec::with_capacity(masks.len());
    for (j, mask) in masks.iter().enumerate() {
        let shape = layout.shapes[j];
        let mut g_p = Array2::zeros(shape);
        let mut g_n = Array2::zeros(shape);
        for (row, cols) in layout.rows[j].iter().enumerate() {
            for &c in cols {
                g_p[[row, c]] = device::g1(theta.p[j][[row, c]], device);
                g_n[[row, c]] = device::g1(theta.n[j][[row, c]], device);
            }
        }
        junctions.push(JunctionConductances::new(mask, g_p, g_n)?);
    }
    ConductanceNetwork::new(topology.clone(), masks.to_vec(), junctions, device.clone())
}

fn forward_from_cache(
    cache: &MapCache,
    layout: &SparseLayout,
    input: &[f64],
    device: &DeviceParams,
) -> Trace {
    let rail = device.rail();
    let x = Array1::from(input.to_vec());
    let mut signals = vec![LayerSignals { v_n: -&x, v_p: x }];
    let mut nets = Vec::with_capacity(layout.junctions());
    let last = layout.junctions() - 1;
    for j in 0..layout.junctions() {
        let sig = &signals[j];
        let bias_col = layout.shapes[j].1 - 1;
        let mut v_net = Array1::zeros(layout.shapes[j].0);
        for (row, cols) in layout.rows[j].iter().enumerate() {
            let mut acc = 0.0;
            for &c in cols {
                let (sp, sn) = if c == bias_col {
                    (rail, -rail)
                } else {
                    (sig.v_p[c], sig.v_n[c])
                };
                acc += sp * cache.w_p[j][[row, c]] + sn * cache.w_n[j][[row, c]];
            }
            v_net[row] = acc;
        }
        if j < last {
            let (v_p, v_n) = circuit::regenerate(&v_net, device);
            signals.push(LayerSignals { v_p, v_n });
        }
        nets.push(v_net);
    }
    let outputs = nets[last].mapv(|v| circuit::inverter_vtc(v, device));
    Trace {
        signals,
        nets,
        outputs,
    }
}

/// Weighted-sum forward pass through the mapped weights; matches
/// [`circuit::forward_circuit`] on the network built from the same theta.
pub fn forward_abstract(
    weights: &MappedWeights,
    topology: &NetworkTopology,
    masks: &[MaskMatrix],
    input: &[f64],
    device: &DeviceParams,
) -> Result<Trace> {
    circuit::check_input(input, topology.input_size(), device.rail())?;
    let layout = SparseLayout::new(topology, masks)?;
    let cache = MapCache {
        sigma_p: Vec::new(),
        sigma_n: Vec::new(),
        s: Vec::new(),
        w_p: weights.p.clone(),
        w_n: weights.n.clone(),
    };
    Ok(forward_from_cache(&cache, &layout, input, device))
}

/// Loss and its output-layer delta: squared error against target voltages.
fn output_delta(trace: &Trace, target: &[f64], device: &DeviceParams) -> (f64, Array1<f64>) {
    let nets = trace.nets.last().unwrap();
    let mut loss = 0.0;
    let mut delta = Array1::zeros(nets.len());
    for k in 0..nets.len() {
        let err = trace.outputs[k] - target[k];
        loss += 0.5 * err * err;
        delta[k] = err * circuit::vtc_derivative(nets[k], device);
    }
    (loss, delta)
}

/// Shared backward sweep. When `grad` is Some, gradients are written there;
/// when `step` is Some(η), theta is updated in place (the gradient it uses is
/// still the one at the pre-update parameters, because every read goes
/// through `cache` and `trace`).
fn backward_sweep(
    theta: &mut ThetaParams,
    layout: &SparseLayout,
    cache: &MapCache,
    trace: &Trace,
    target: &[f64],
    device: &DeviceParams,
    g2: G2Gradient,
    mut grad: Option<&mut ThetaGradient>,
    step: Option<f64>,
) -> Result<f64> {
    let rail = device.rail();
    let (loss, mut delta) = output_delta(trace, target, device);
    if !loss.is_finite() {
        return Err(Error::NonFinite("output loss".into()));
    }
    for j in (0..layout.junctions()).rev() {
        let bias_col = layout.shapes[j].1 - 1;
        let sig = &trace.signals[j];
        // gradient w.r.t. conductances, then parameters
        for (row, cols) in layout.rows[j].iter().enumerate() {
            let d = delta[row];
            let s_row = cache.s[j][row];
            let net = trace.nets[j][row];
            for &c in cols {
                let (sp, sn) = if c == bias_col {
                    (rail, -rail)
                } else {
                    (sig.v_p[c], sig.v_n[c])
                };
                let (g_sigma_p, g_sigma_n) = match g2 {
                    // d net / d σ with the shared normalizer's cross-terms:
                    // (V_source - net) / S
                    G2Gradient::Full => (d * (sp - net) / s_row, d * (sn - net) / s_row),
                    G2Gradient::Diagonal => {
                        let wp = cache.w_p[j][[row, c]];
                        let wn = cache.w_n[j][[row, c]];
                        (d * sp * (1.0 - wp) / s_row, d * sn * (1.0 - wn) / s_row)
                    }
                };
                let gp = g_sigma_p * device::g1_prime(theta.p[j][[row, c]], device);
                let gn = g_sigma_n * device::g1_prime(theta.n[j][[row, c]], device);
                if !(gp.is_finite() && gn.is_finite()) {
                    return Err(Error::NonFinite(format!(
                        "gradient at junction {}, neuron {row}, input {c}",
                        j + 1
                    )));
                }
                if let Some(g) = grad.as_deref_mut() {
                    g.p[j][[row, c]] = gp;
                    g.n[j][[row, c]] = gn;
                }
                if let Some(eta) = step {
                    theta.p[j][[row, c]] -= eta * gp;
                    theta.n[j][[row, c]] -= eta * gn;
                }
            }
        }
        if j == 0 {
            break;
        }
        // propagate delta through the weights and the inverter pair
        let n_prev = layout.shapes[j].1 - 1;
        let mut via_p = Array1::<f64>::zeros(n_prev);
        let mut via_n = Array1::<f64>::zeros(n_prev);
        for (row, cols) in layout.rows[j].iter().enumerate() {
            let d = delta[row];
            for &c in cols {
                if c == bias_col {
                    continue;
                }
                via_p[c] += d * cache.w_p[j][[row, c]];
                via_n[c] += d * cache.w_n[j][[row, c]];
            }
        }
        let prev_nets = &trace.nets[j - 1];
        let mut prev_delta = Array1::zeros(n_prev);
        for i in 0..n_prev {
            let d_v_n = match device.regeneration {
                // v_p = f(v_n): chain the second inverter into the v_n path
                crate::device::Regeneration::TwoInverter => {
                    via_n[i] + via_p[i] * circuit::vtc_derivative(sig.v_n[i], device)
                }
                crate::device::Regeneration::Idealized => via_n[i] - via_p[i],
            };
            prev_delta[i] = d_v_n * circuit::vtc_derivative(prev_nets[i], device);
        }
        delta = prev_delta;
    }
    Ok(loss)
}

/// Exact gradient of the per-sample squared-error loss with respect to theta.
/// Masked positions receive exactly zero gradient.
pub fn backward(
    theta: &ThetaParams,
    topology: &NetworkTopology,
    masks: &[MaskMatrix],
    input: &[f64],
    target: &[f64],
    device: &DeviceParams,
    g2: G2Gradient,
) -> Result<ThetaGradient> {
    device.validate()?;
    check_theta(theta, topology, masks)?;
    circuit::check_input(input, topology.input_size(), device.rail())?;
    if target.len() != topology.output_size() {
        return Err(Error::DimensionMismatch {
            context: "target".into(),
            expected: topology.output_size(),
            got: target.len(),
        });
    }
    let layout = SparseLayout::new(topology, masks)?;
    let cache = map_cache(theta, &layout, device);
    let trace = forward_from_cache(&cache, &layout, input, device);
    let mut grad = ThetaGradient {
        p: layout.zeros_like(),
        n: layout.zeros_like(),
    };
    let mut theta_scratch = theta.clone();
    backward_sweep(
        &mut theta_scratch,
        &layout,
        &cache,
        &trace,
        target,
        device,
        g2,
        Some(&mut grad),
        None,
    )?;
    Ok(grad)
}

/// Target output voltages: one-hot at ±0.9 of the half-rail (positive for the
/// sample's class). Single-output networks encode class 1 as positive.
pub fn encode_targets(
    labels: &[usize],
    class_count: usize,
    n_outputs: usize,
    device: &DeviceParams,
) -> Result<Array2<f64>> {
    let amp = 0.9 * device.rail();
    if n_outputs == 1 {
        if class_count > 2 {
            return Err(Error::Config(format!(
                "single-output network cannot encode {class_count} classes"
            )));
        }
        let mut t = Array2::zeros((labels.len(), 1));
        for (s, &l) in labels.iter().enumerate() {
            t[[s, 0]] = if l == 1 { amp } else { -amp };
        }
        return Ok(t);
    }
    if class_count > n_outputs {
        return Err(Error::Config(format!(
            "{class_count} classes do not fit {n_outputs} outputs"
        )));
    }
    let mut t = Array2::from_elem((labels.len(), n_outputs), -amp);
    for (s, &l) in labels.iter().enumerate() {
        t[[s, l]] = amp;
    }
    Ok(t)
}

/// Decode an output vector to a class index: argmax for multi-output
/// networks, sign for single-output ones.
pub fn predict_class(outputs: &Array1<f64>) -> usize {
    if outputs.len() == 1 {
        (outputs[0] > 0.0) as usize
    } else {
        classify(outputs)
    }
}

/// Accuracy plus confusion counts (rows: true class, columns: predicted).
#[derive(Debug, Clone, PartialEq)]
pub struct EvalReport {
    pub accuracy: f64,
    pub confusion: Array2<usize>,
    pub correct: usize,
    pub total: usize,
}

fn eval_with<F: FnMut(&[f64]) -> Result<Array1<f64>>>(
    ds: &Dataset,
    mut forward: F,
) -> Result<EvalReport> {
    if ds.is_empty() {
        return Err(Error::Data("cannot evaluate an empty dataset".into()));
    }
    let classes = ds.class_count.max(2);
    let mut confusion = Array2::zeros((classes, classes));
    let mut correct = 0;
    for (s, row) in ds.features.rows().into_iter().enumerate() {
        let outputs = forward(row.as_slice().unwrap())?;
        let pred = predict_class(&outputs);
        if pred == ds.labels[s] {
            correct += 1;
        }
        confusion[[ds.labels[s], pred.min(classes - 1)]] += 1;
    }
    Ok(EvalReport {
        accuracy: correct as f64 / ds.len() as f64,
        confusion,
        correct,
        total: ds.len(),
    })
}

/// Evaluate through the abstract weighted-sum path.
pub fn evaluate_abstract(
    weights: &MappedWeights,
    topology: &NetworkTopology,
    masks: &[MaskMatrix],
    ds: &Dataset,
    device: &DeviceParams,
) -> Result<EvalReport> {
    let layout = SparseLayout::new(topology, masks)?;
    let cache = MapCache {
        sigma_p: Vec::new(),
        sigma_n: Vec::new(),
        s: Vec::new(),
        w_p: weights.p.clone(),
        w_n: weights.n.clone(),
    };
    let rail = device.rail();
    eval_with(ds, |input| {
        circuit::check_input(input, topology.input_size(), rail)?;
        Ok(forward_from_cache(&cache, &layout, input, device).outputs)
    })
}

/// Evaluate through the circuit divider path.
pub fn evaluate_circuit(net: &ConductanceNetwork, ds: &Dataset) -> Result<EvalReport> {
    eval_with(ds, |input| Ok(circuit::forward_circuit(net, input)?.outputs))
}

/// Train with per-sample SGD: seeded shuffle each epoch, one update per
/// presented pattern, stop at the training-accuracy target or the epoch
/// limit. The dataset must already be voltage-normalized.
pub fn train(
    train_set: &Dataset,
    topology: &NetworkTopology,
    masks: &[MaskMatrix],
    config: &TrainConfig,
    device: &DeviceParams,
) -> Result<(ThetaParams, TrainReport)> {
    let start = std::time::Instant::now();
    config.validate()?;
    device.validate()?;
    if train_set.is_empty() {
        return Err(Error::Data("cannot train on an empty dataset".into()));
    }
    if train_set.dims() != topology.input_size() {
        return Err(Error::DimensionMismatch {
            context: "training features".into(),
            expected: topology.input_size(),
            got: train_set.dims(),
        });
    }
    let targets = encode_targets(
        &train_set.labels,
        train_set.class_count,
        topology.output_size(),
        device,
    )?;
    let layout = SparseLayout::new(topology, masks)?;
    let mut theta = init_theta(topology, masks, config)?;
    let mut order: Vec<usize> = (0..train_set.len()).collect();
    // epoch shuffler gets its own stream so it cannot collide with init_theta
    let mut shuffler = rng::stream(rng::derive(config.seed, SHUFFLE_STREAM));

    let mut report = TrainReport {
        epochs: Vec::new(),
        epochs_run: 0,
        stop: StopReason::EpochLimit,
        final_test_accuracy: None,
        wall_time_s: 0.0,
    };

    for epoch in 1..=config.max_epochs {
        order.shuffle(&mut shuffler);
        let mut loss_sum = 0.0;
        for &idx in &order {
            let input = train_set.features.row(idx);
            let input = input.as_slice().unwrap();
            let cache = map_cache(&theta, &layout, device);
            let trace = forward_from_cache(&cache, &layout, input, device);
            let target = targets.row(idx);
            let loss = backward_sweep(
                &mut theta,
                &layout,
                &cache,
                &trace,
                target.as_slice().unwrap(),
                device,
                config.g2_gradient,
                None,
                Some(config.learning_rate),
            )
            .map_err(|e| match e {
                Error::NonFinite(_) => Error::Diverged {
                    epoch,
                    report: Box::new(report_snapshot(&report, epoch, start)),
                },
                other => other,
            })?;
            if !loss.is_finite() {
                return Err(Error::Diverged {
                    epoch,
                    report: Box::new(report_snapshot(&report, epoch, start)),
                });
            }
            loss_sum += loss;
        }
        let cache = map_cache(&theta, &layout, device);
        let eval = eval_with(train_set, |input| {
            Ok(forward_from_cache(&cache, &layout, input, device).outputs)
        })?;
        report.epochs.push(EpochRecord {
            epoch,
            loss: loss_sum / train_set.len() as f64,
            train_accuracy: eval.accuracy,
        });
        report.epochs_run = epoch;
        if eval.accuracy >= config.target_accuracy {
            report.stop = StopReason::TargetReached;
            break;
        }
    }
    report.wall_time_s = start.elapsed().as_secs_f64();
    Ok((theta, report))
}

fn report_snapshot(report: &TrainReport, epoch: usize, start: std::time::Instant) -> TrainReport {
    let mut snap = report.clone();
    snap.epochs_run = epoch;
    snap.wall_time_s = start.elapsed().as_secs_f64();
    snap
}
