//! Circuit-level evaluation of a crossbar network: node voltages from the
//! conductance divider, inverter activations, differential regeneration,
//! static power, and memristor-count accounting.
//!
//! Every weight is a pair of memristors (positive and negative polarity) on
//! the differential input pair. Each succeeding neuron's crossbar column is a
//! one-node divider: with all branch currents summing to zero, the node
//! voltage is the conductance-weighted average of the source voltages. The
//! always-present bias pair drives +vdd/2 / -vdd/2 into every column.

use ndarray::{Array1, Array2};

use crate::device::{DeviceParams, Regeneration};
use crate::error::{Error, Result};
use crate::topology::{MaskMatrix, NetworkTopology};

/// Present column indices (bias column included) per succeeding neuron.
pub(crate) fn extended_rows(mask: &MaskMatrix) -> Vec<Vec<usize>> {
    let bias_col = mask.n_prev();
    mask.row_present()
        .into_iter()
        .map(|mut cols| {
            cols.push(bias_col);
            cols
        })
        .collect()
}

/// Conductance tables of one junction, shape `n_next x (n_prev + 1)`;
/// the last column is the bias pair. Entries outside the extended mask are
/// structural zeros and never read as conductances.
#[derive(Debug, Clone, PartialEq)]
pub struct JunctionConductances {
    pub g_p: Array2<f64>,
    pub g_n: Array2<f64>,
    present: Vec<Vec<usize>>,
}

impl JunctionConductances {
    pub fn new(mask: &MaskMatrix, g_p: Array2<f64>, g_n: Array2<f64>) -> Result<Self> {
        let shape = (mask.n_next(), mask.n_prev() + 1);
        for (name, g) in [("g_p", &g_p), ("g_n", &g_n)] {
            if g.dim() != shape {
                return Err(Error::DimensionMismatch {
                    context: format!("{name} table of junction {}", mask.junction()),
                    expected: shape.0 * shape.1,
                    got: g.len(),
                });
            }
        }
        Ok(Self {
            g_p,
            g_n,
            present: extended_rows(mask),
        })
    }

    pub fn rows(&self) -> usize {
        self.g_p.nrows()
    }

    /// Present column indices per row, bias column last.
    pub fn present(&self) -> &[Vec<usize>] {
        &self.present
    }

    fn check_ranges(&self, device: &DeviceParams, junction: usize) -> Result<()> {
        for (r, cols) in self.present.iter().enumerate() {
            for &c in cols {
                for (name, g) in [("g_p", &self.g_p), ("g_n", &self.g_n)] {
                    let v = g[[r, c]];
                    if !(v >= device.sigma_min && v <= device.sigma_max) {
                        return Err(Error::InvalidParameter(format!(
                            "junction {junction} {name}[{r},{c}] = {v} µS outside \
                             [{}, {}]",
                            device.sigma_min, device.sigma_max
                        )));
                    }
                }
            }
        }
        Ok(())
    }
}

/// A complete network in conductance space, immutable once built.
#[derive(Debug, Clone)]
pub struct ConductanceNetwork {
    pub topology: NetworkTopology,
    pub masks: Vec<MaskMatrix>,
    pub junctions: Vec<JunctionConductances>,
    pub device: DeviceParams,
}

impl ConductanceNetwork {
    pub fn new(
        topology: NetworkTopology,
        masks: Vec<MaskMatrix>,
        junctions: Vec<JunctionConductances>,
        device: DeviceParams,
    ) -> Result<Self> {
        device.validate()?;
        topology.validate_masks(&masks)?;
        if junctions.len() != masks.len() {
            return Err(Error::DimensionMismatch {
                context: "junction table count".into(),
                expected: masks.len(),
                got: junctions.len(),
            });
        }
        for (j, jc) in junctions.iter().enumerate() {
            jc.check_ranges(&device, j + 1)?;
        }
        Ok(Self {
            topology,
            masks,
            junctions,
            device,
        })
    }

    /// Apply `f` to every present conductance, in a fixed order: junctions
    /// ascending, rows ascending, present columns ascending, positive
    /// polarity before negative. The order is part of the reproducibility
    /// contract for seeded perturbation streams.
    pub fn map_present<F: FnMut(f64) -> f64>(&self, mut f: F) -> Self {
        let mut out = self.clone();
        for jc in &mut out.junctions {
            for (r, cols) in jc.present.clone().iter().enumerate() {
                for &c in cols {
                    jc.g_p[[r, c]] = f(jc.g_p[[r, c]]);
                    jc.g_n[[r, c]] = f(jc.g_n[[r, c]]);
                }
            }
        }
        out
    }
}

/// Inverter voltage transfer curve: odd-symmetric scaled sigmoid saturating
/// at the half-rails.
pub fn inverter_vtc(v: f64, params: &DeviceParams) -> f64 {
    -params.rail() * (params.vtc_gain * v).tanh()
}

/// Analytic derivative of [`inverter_vtc`]; always negative.
pub fn vtc_derivative(v: f64, params: &DeviceParams) -> f64 {
    let t = (params.vtc_gain * v).tanh();
    -params.rail() * params.vtc_gain * (1.0 - t * t)
}

/// Node voltage of every column of one junction: the conductance-weighted
/// average of the differential source voltages, bias pair included.
pub fn crossbar_node_voltages(
    junction: &JunctionConductances,
    v_p: &Array1<f64>,
    v_n: &Array1<f64>,
    rail: f64,
) -> Result<Array1<f64>> {
    let n_prev = junction.g_p.ncols() - 1;
    for (name, v) in [("v_p", v_p), ("v_n", v_n)] {
        if v.len() != n_prev {
            return Err(Error::DimensionMismatch {
                context: format!("{name} input"),
                expected: n_prev,
                got: v.len(),
            });
        }
    }
    let mut nets = Array1::zeros(junction.rows());
    for (r, cols) in junction.present.iter().enumerate() {
        let mut num = 0.0;
        let mut den = 0.0;
        for &c in cols {
            let gp = junction.g_p[[r, c]];
            let gn = junction.g_n[[r, c]];
            let (sp, sn) = if c == n_prev {
                (rail, -rail)
            } else {
                (v_p[c], v_n[c])
            };
            num += sp * gp + sn * gn;
            den += gp + gn;
        }
        // bias pair is always present, so den >= 2 * sigma_min > 0
        debug_assert!(den > 0.0);
        nets[r] = num / den;
    }
    Ok(nets)
}

/// Differential signals leaving a layer.
#[derive(Debug, Clone, PartialEq)]
pub struct LayerSignals {
    pub v_p: Array1<f64>,
    pub v_n: Array1<f64>,
}

/// Every voltage produced during one forward evaluation.
#[derive(Debug, Clone, PartialEq)]
pub struct Trace {
    /// Signals feeding each junction; `signals[0]` is the input pair.
    pub signals: Vec<LayerSignals>,
    /// Column node voltages per junction.
    pub nets: Vec<Array1<f64>>,
    /// Output-layer inverter outputs.
    pub outputs: Array1<f64>,
}

pub(crate) fn regenerate(
    net: &Array1<f64>,
    params: &DeviceParams,
) -> (Array1<f64>, Array1<f64>) {
    let v_n = net.mapv(|v| inverter_vtc(v, params));
    let v_p = match params.regeneration {
        Regeneration::TwoInverter => v_n.mapv(|v| inverter_vtc(v, params)),
        Regeneration::Idealized => -&v_n,
    };
    (v_p, v_n)
}

pub(crate) fn check_input(input: &[f64], expected: usize, rail: f64) -> Result<()> {
    if input.len() != expected {
        return Err(Error::DimensionMismatch {
            context: "network input".into(),
            expected,
            got: input.len(),
        });
    }
    if let Some(v) = input
        .iter()
        .find(|v| !v.is_finite() || v.abs() > rail + 1e-9)
    {
        return Err(Error::InvalidParameter(format!(
            "input voltage {v} outside [-{rail}, {rail}]"
        )));
    }
    Ok(())
}

/// Evaluate the full circuit: divider node voltages per junction, inverter
/// pair per hidden layer, single inverter at the output layer.
pub fn forward_circuit(net: &ConductanceNetwork, input: &[f64]) -> Result<Trace> {
    let rail = net.device.rail();
    check_input(input, net.topology.input_size(), rail)?;
    let x = Array1::from(input.to_vec());
    let mut signals = vec![LayerSignals { v_n: -&x, v_p: x }];
    let mut nets = Vec::with_capacity(net.junctions.len());
    let last = net.junctions.len() - 1;
    for (j, jc) in net.junctions.iter().enumerate() {
        let sig = &signals[j];
        let v_net = crossbar_node_voltages(jc, &sig.v_p, &sig.v_n, rail)?;
        if j < last {
            let (v_p, v_n) = regenerate(&v_net, &net.device);
            signals.push(LayerSignals { v_p, v_n });
        }
        nets.push(v_net);
    }
    let outputs = nets[last].mapv(|v| inverter_vtc(v, &net.device));
    Ok(Trace {
        signals,
        nets,
        outputs,
    })
}

/// Index of the maximum output voltage; ties break to the lowest index.
pub fn classify(outputs: &Array1<f64>) -> usize {
    let mut best = 0;
    for (i, &v) in outputs.iter().enumerate() {
        if v > outputs[best] {
            best = i;
        }
    }
    best
}

/// Memristor totals: two devices per present connection plus a bias pair per
/// succeeding neuron.
#[derive(Debug, Clone, PartialEq, Eq, serde::Serialize)]
pub struct MemristorCount {
    pub per_junction: Vec<usize>,
    pub total: usize,
}

pub fn memristor_count(topology: &NetworkTopology, masks: &[MaskMatrix]) -> Result<MemristorCount> {
    topology.validate_masks(masks)?;
    let per_junction: Vec<usize> = masks
        .iter()
        .map(|m| 2 * m.ones() + 2 * m.n_next())
        .collect();
    let total = per_junction.iter().sum();
    Ok(MemristorCount {
        per_junction,
        total,
    })
}

/// Inverters in the circuit: two per hidden neuron, one per output neuron.
pub fn inverter_count(topology: &NetworkTopology) -> usize {
    let sizes = topology.layer_sizes();
    let hidden: usize = sizes[1..sizes.len() - 1].iter().sum();
    2 * hidden + sizes[sizes.len() - 1]
}

/// Static power split for one evaluated input.
#[derive(Debug, Clone, Copy, PartialEq, serde::Serialize)]
pub struct PowerBreakdown {
    pub crossbar_w: f64,
    pub inverter_w: f64,
    pub total_w: f64,
}

/// Static power for the operating point captured in `trace`: per-branch
/// dissipation (V_source - V_net)^2 * σ summed over all present memristors,
/// plus a constant per inverter.
pub fn static_power(
    net: &ConductanceNetwork,
    trace: &Trace,
    inverter_power_w: f64,
) -> PowerBreakdown {
    let rail = net.device.rail();
    let mut crossbar = 0.0;
    for (j, jc) in net.junctions.iter().enumerate() {
        let sig = &trace.signals[j];
        let n_prev = jc.g_p.ncols() - 1;
        for (r, cols) in jc.present.iter().enumerate() {
            let v_net = trace.nets[j][r];
            for &c in cols {
                let (sp, sn) = if c == n_prev {
                    (rail, -rail)
                } else {
                    (sig.v_p[c], sig.v_n[c])
                };
                let dp = sp - v_net;
                let dn = sn - v_net;
                crossbar += dp * dp * jc.g_p[[r, c]] + dn * dn * jc.g_n[[r, c]];
            }
        }
    }
    let crossbar_w = crossbar * 1e-6; // conductances are in µS
    let inverter_w = inverter_count(&net.topology) as f64 * inverter_power_w;
    PowerBreakdown {
        crossbar_w,
        inverter_w,
        total_w: crossbar_w + inverter_w,
    }
}
