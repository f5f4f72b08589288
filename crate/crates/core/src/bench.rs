//! Operation counting, host latency profiling and a linear energy proxy.
//!
//! A synaptic operation is one weight accumulate triggered by a spike: every
//! input or hidden spike costs its full postsynaptic fan-out. Input neurons
//! fan out densely to all hidden neurons; a hidden neuron fans out to every
//! other hidden neuron (itself too when self-recurrence is allowed) and to
//! every readout unit.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::time::Instant;

use serde::{Deserialize, Serialize};

use crate::encoder::{comparisons_per_channel, encode_multichannel, EncoderConfig, SpikeRaster};
use crate::error::{Error, Result};
use crate::hw::{HwConfig, HwNetwork};
use crate::rsnn::{classify, ClassifyRule, ForwardTrace, Network, Topology};
use crate::signal::EmgWindow;
use crate::trainer::QuantizedNetwork;

/// Energy per inference quoted for the neuromorphic deployment; a reference
/// constant only.
pub const REPORTED_ENERGY_MJ: f64 = 0.37;

pub const ENERGY_CATEGORIES: [&str; 3] = ["encoder", "neuron", "synaptic"];

#[derive(Debug, Clone, PartialEq)]
pub enum Backend {
    Float,
    Hw(HwConfig),
}

impl Backend {
    pub fn name(&self) -> &'static str {
        match self {
            Backend::Float => "float",
            Backend::Hw(_) => "hw",
        }
    }
}

/// A network ready to run on one backend.
#[derive(Debug, Clone)]
pub enum Runner {
    Float(Network),
    Hw(Box<HwNetwork>),
}

impl Runner {
    pub fn new(net: &Network, backend: &Backend) -> Result<Self> {
        Ok(match backend {
            Backend::Float => Runner::Float(net.clone()),
            Backend::Hw(cfg) => {
                let q = QuantizedNetwork::from_network(net, 8);
                Runner::Hw(Box::new(HwNetwork::new(&q, cfg)?))
            }
        })
    }

    pub fn forward(&self, input: &SpikeRaster, record_hidden: bool) -> Result<ForwardTrace> {
        match self {
            Runner::Float(net) => net.forward(input, record_hidden),
            Runner::Hw(net) => Ok(net.run(input, record_hidden)?.0),
        }
    }
}

pub fn input_fanout(topo: &Topology) -> u64 {
    topo.hidden() as u64
}

pub fn hidden_fanout(topo: &Topology) -> u64 {
    let h = topo.hidden() as u64;
    let recurrent = if topo.self_recurrence_allowed { h } else { h - 1 };
    recurrent + topo.n_out as u64
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct OpCountReport {
    pub timesteps: u64,
    /// Threshold comparisons performed by the spike encoder.
    pub encoder_ops: u64,
    pub lif_steps: u64,
    pub dexat_steps: u64,
    /// Compartment updates of the three-compartment realization (one per
    /// LIF neuron, three per DEXAT neuron); not part of `neuron_updates`.
    pub compartment_steps: u64,
    pub readout_steps: u64,
    pub input_spikes: u64,
    pub hidden_spikes: u64,
    pub synaptic_input_ops: u64,
    pub synaptic_recurrent_ops: u64,
    pub synaptic_readout_ops: u64,
    pub max_fanout: u64,
}

impl OpCountReport {
    pub fn neuron_updates(&self) -> u64 {
        self.lif_steps + self.dexat_steps + self.readout_steps
    }

    pub fn synaptic_ops(&self) -> u64 {
        self.synaptic_input_ops + self.synaptic_recurrent_ops + self.synaptic_readout_ops
    }

    pub fn total_ops(&self) -> u64 {
        self.encoder_ops + self.neuron_updates() + self.synaptic_ops()
    }

    pub fn category(&self, name: &str) -> Option<u64> {
        match name {
            "encoder" => Some(self.encoder_ops),
            "neuron" => Some(self.neuron_updates()),
            "synaptic" => Some(self.synaptic_ops()),
            _ => None,
        }
    }

    pub const CSV_HEADER: &'static str = "timesteps,encoder_ops,lif_steps,dexat_steps,\
compartment_steps,readout_steps,neuron_updates,input_spikes,hidden_spikes,synaptic_input_ops,\
synaptic_recurrent_ops,synaptic_readout_ops,synaptic_ops,total_ops";

    pub fn csv_row(&self) -> String {
        format!(
            "{},{},{},{},{},{},{},{},{},{},{},{},{},{}",
            self.timesteps,
            self.encoder_ops,
            self.lif_steps,
            self.dexat_steps,
            self.compartment_steps,
            self.readout_steps,
            self.neuron_updates(),
            self.input_spikes,
            self.hidden_spikes,
            self.synaptic_input_ops,
            self.synaptic_recurrent_ops,
            self.synaptic_readout_ops,
            self.synaptic_ops(),
            self.total_ops()
        )
    }

    pub fn render(&self) -> String {
        let rows = [
            ("encoder comparisons", self.encoder_ops),
            ("LIF steps", self.lif_steps),
            ("DEXAT steps", self.dexat_steps),
            ("readout steps", self.readout_steps),
            ("neuron updates", self.neuron_updates()),
            ("compartment steps", self.compartment_steps),
            ("input spikes", self.input_spikes),
            ("hidden spikes", self.hidden_spikes),
            ("synaptic ops (input)", self.synaptic_input_ops),
            ("synaptic ops (recurrent)", self.synaptic_recurrent_ops),
            ("synaptic ops (readout)", self.synaptic_readout_ops),
            ("synaptic ops", self.synaptic_ops()),
            ("total ops", self.total_ops()),
        ];
        let mut s = format!("{:<26}{:>14}\n", "operation", "count");
        for (name, v) in rows {
            let _ = writeln!(s, "{name:<26}{v:>14}");
        }
        s
    }

    /// Adds the counts of another inference.
    pub fn accumulate(&mut self, other: &OpCountReport) {
        self.timesteps += other.timesteps;
        self.encoder_ops += other.encoder_ops;
        self.lif_steps += other.lif_steps;
        self.dexat_steps += other.dexat_steps;
        self.compartment_steps += other.compartment_steps;
        self.readout_steps += other.readout_steps;
        self.input_spikes += other.input_spikes;
        self.hidden_spikes += other.hidden_spikes;
        self.synaptic_input_ops += other.synaptic_input_ops;
        self.synaptic_recurrent_ops += other.synaptic_recurrent_ops;
        self.synaptic_readout_ops += other.synaptic_readout_ops;
        self.max_fanout = self.max_fanout.max(other.max_fanout);
    }
}

fn report_from_trace(topo: &Topology, input: &SpikeRaster, trace: &ForwardTrace) -> OpCountReport {
    let t = input.timesteps() as u64;
    let input_spikes = input.count() as u64;
    let hidden_spikes: u64 = trace.spike_counts.iter().map(|&c| u64::from(c)).sum();
    let hf = hidden_fanout(topo);
    let out = topo.n_out as u64;
    OpCountReport {
        timesteps: t,
        encoder_ops: 0,
        lif_steps: topo.m_lif as u64 * t,
        dexat_steps: topo.n_dexat as u64 * t,
        compartment_steps: (topo.m_lif as u64 + 3 * topo.n_dexat as u64) * t,
        readout_steps: out * t,
        input_spikes,
        hidden_spikes,
        synaptic_input_ops: input_spikes * input_fanout(topo),
        synaptic_recurrent_ops: hidden_spikes * (hf - out),
        synaptic_readout_ops: hidden_spikes * out,
        max_fanout: input_fanout(topo).max(hf),
    }
}

/// Event-driven operation counts of one inference on an encoded input.
pub fn count_ops(net: &Network, input: &SpikeRaster, backend: &Backend) -> Result<OpCountReport> {
    let runner = Runner::new(net, backend)?;
    let trace = runner.forward(input, false)?;
    Ok(report_from_trace(&net.topology, input, &trace))
}

/// [`count_ops`] for a raw window, including the encoder's comparisons.
pub fn count_pipeline_ops(
    net: &Network,
    win: &EmgWindow,
    enc: &EncoderConfig,
    backend: &Backend,
) -> Result<OpCountReport> {
    let input = encode_multichannel(win, enc)?;
    let mut report = count_ops(net, &input, backend)?;
    report.encoder_ops = win.channels() as u64 * comparisons_per_channel(enc, win.len());
    Ok(report)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Runnable {
    Encode,
    Forward,
    Full,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct PhaseStats {
    pub mean_s: f64,
    /// Sample standard deviation; zero for a single repeat.
    pub std_s: f64,
    pub samples_s: Vec<f64>,
}

impl PhaseStats {
    pub fn from_samples(samples_s: Vec<f64>) -> Self {
        let n = samples_s.len() as f64;
        let mean_s = samples_s.iter().sum::<f64>() / n;
        let std_s = if samples_s.len() > 1 {
            (samples_s.iter().map(|x| (x - mean_s).powi(2)).sum::<f64>() / (n - 1.0)).sqrt()
        } else {
            0.0
        };
        Self {
            mean_s,
            std_s,
            samples_s,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct LatencyStats {
    pub runnable: Runnable,
    pub backend: String,
    pub batch: usize,
    pub repeats: usize,
    pub encode: Option<PhaseStats>,
    pub forward: Option<PhaseStats>,
    pub classify: Option<PhaseStats>,
    /// Wall time of the whole batch per repeat.
    pub total: PhaseStats,
}

impl LatencyStats {
    pub const CSV_HEADER: &'static str =
        "runnable,backend,batch,repeats,phase,mean_s,std_s";

    pub fn csv_rows(&self) -> String {
        let name = match self.runnable {
            Runnable::Encode => "encode",
            Runnable::Forward => "forward",
            Runnable::Full => "full",
        };
        let phases = [
            ("encode", self.encode.as_ref()),
            ("forward", self.forward.as_ref()),
            ("classify", self.classify.as_ref()),
            ("total", Some(&self.total)),
        ];
        let mut s = String::new();
        for (phase, stats) in phases {
            if let Some(p) = stats {
                let _ = writeln!(
                    s,
                    "{name},{},{},{},{phase},{:.9},{:.9}",
                    self.backend, self.batch, self.repeats, p.mean_s, p.std_s
                );
            }
        }
        s
    }
}

/// Times `repeats` runs of a batch of independent inferences on one thread,
/// after one untimed warm-up run.
///
/// Window `i` of a batch is `windows[i % windows.len()]`. For
/// [`Runnable::Forward`] the windows are encoded once up front.
pub fn profile_latency(
    runner: &Runner,
    windows: &[EmgWindow],
    enc: &EncoderConfig,
    runnable: Runnable,
    batch: usize,
    repeats: usize,
) -> Result<LatencyStats> {
    if repeats == 0 || batch == 0 {
        return Err(Error::InvalidArgument("batch and repeats must be at least 1".into()));
    }
    if windows.is_empty() {
        return Err(Error::EmptyDataset);
    }
    let pick = |i: usize| &windows[i % windows.len()];
    let pre_encoded: Vec<SpikeRaster> = if runnable == Runnable::Forward {
        (0..windows.len().min(batch))
            .map(|i| encode_multichannel(pick(i), enc))
            .collect::<Result<_>>()?
    } else {
        Vec::new()
    };

    let mut enc_s = Vec::with_capacity(repeats);
    let mut fwd_s = Vec::with_capacity(repeats);
    let mut cls_s = Vec::with_capacity(repeats);
    let mut tot_s = Vec::with_capacity(repeats);
    for rep in 0..=repeats {
        let (mut e, mut f, mut c) = (0.0, 0.0, 0.0);
        let start = Instant::now();
        for i in 0..batch {
            match runnable {
                Runnable::Encode => {
                    let t0 = Instant::now();
                    std::hint::black_box(encode_multichannel(pick(i), enc)?);
                    e += t0.elapsed().as_secs_f64();
                }
                Runnable::Forward => {
                    let t0 = Instant::now();
                    let input = &pre_encoded[i % pre_encoded.len()];
                    std::hint::black_box(runner.forward(input, false)?);
                    f += t0.elapsed().as_secs_f64();
                }
                Runnable::Full => {
                    let t0 = Instant::now();
                    let input = encode_multichannel(pick(i), enc)?;
                    let t1 = Instant::now();
                    let trace = runner.forward(&input, false)?;
                    let t2 = Instant::now();
                    std::hint::black_box(classify(&trace, ClassifyRule::MeanReadout));
                    let t3 = Instant::now();
                    e += (t1 - t0).as_secs_f64();
                    f += (t2 - t1).as_secs_f64();
                    c += (t3 - t2).as_secs_f64();
                }
            }
        }
        let total = start.elapsed().as_secs_f64();
        if rep == 0 {
            continue;
        }
        enc_s.push(e);
        fwd_s.push(f);
        cls_s.push(c);
        tot_s.push(total);
    }
    let some = |on: bool, v: Vec<f64>| on.then(|| PhaseStats::from_samples(v));
    Ok(LatencyStats {
        runnable,
        backend: match runner {
            Runner::Float(_) => "float".into(),
            Runner::Hw(_) => "hw".into(),
        },
        batch,
        repeats,
        encode: some(runnable != Runnable::Forward, enc_s),
        forward: some(runnable != Runnable::Encode, fwd_s),
        classify: some(runnable == Runnable::Full, cls_s),
        total: PhaseStats::from_samples(tot_s),
    })
}

/// Placeholder per-operation energies in joules; not measured values.
pub fn default_coefficients() -> BTreeMap<String, f64> {
    BTreeMap::from([
        ("encoder".to_string(), 1.0e-12),
        ("neuron".to_string(), 50.0e-12),
        ("synaptic".to_string(), 25.0e-12),
    ])
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct EnergyProxy {
    pub coefficients: BTreeMap<String, f64>,
    /// (category, op count, joules)
    pub per_category: Vec<(String, u64, f64)>,
    pub joules: f64,
}

pub fn energy_proxy(report: &OpCountReport, costs: &BTreeMap<String, f64>) -> Result<EnergyProxy> {
    let mut per_category = Vec::with_capacity(ENERGY_CATEGORIES.len());
    for cat in ENERGY_CATEGORIES {
        let coeff = *costs
            .get(cat)
            .ok_or_else(|| Error::MissingCoefficient(cat.to_string()))?;
        if !(coeff.is_finite() && coeff >= 0.0) {
            return Err(Error::InvalidArgument(format!(
                "energy coefficient `{cat}` must be finite and non-negative"
            )));
        }
        let count = report.category(cat).unwrap_or(0);
        per_category.push((cat.to_string(), count, count as f64 * coeff));
    }
    let joules = per_category.iter().map(|c| c.2).sum();
    Ok(EnergyProxy {
        coefficients: costs.clone(),
        per_category,
        joules,
    })
}

impl EnergyProxy {
    pub fn render(&self) -> String {
        let mut s = format!("{:<12}{:>14}{:>16}{:>16}\n", "category", "ops", "J/op", "joules");
        for (cat, count, j) in &self.per_category {
            let _ = writeln!(s, "{cat:<12}{count:>14}{:>16.3e}{j:>16.3e}", self.coefficients[cat]);
        }
        let _ = writeln!(s, "{:<12}{:>14}{:>16}{:>16.3e}", "total", "", "", self.joules);
        let _ = writeln!(
            s,
            "reference: {REPORTED_ENERGY_MJ} mJ per inference (reported, not measured)"
        );
        s
    }
}
