//! Fixed-point emulation of the network on a three-compartment neuron model.
//!
//! Each DEXAT neuron becomes a primary compartment `N1` holding the membrane
//! and two inhibitory accumulators `N2`, `N3` that are driven by the neuron's
//! own spikes through weights `-γ1` and `-γ2`. The neuron fires when
//! `u1 + u2 + u3 > vth_fixed`, so the accumulators raise the effective
//! threshold exactly as the adaptation variables of the float model do.
//!
//! Arithmetic is integer: decay multiplies by `(4096 - code) / 4096` and
//! truncates toward zero, every register saturates at `±(2^(bits-1) - 1)`.
//! The membrane carries `weight_exp` bits below one threshold unit: spikes
//! kick the accumulators by `γ · 2^weight_exp` and the neuron compares
//! against `vth_fixed · 2^weight_exp`. Float values map onto membrane units
//! through `S = vth_fixed · 2^weight_exp / b0`.

use std::fmt::Write as _;

use ndarray::Array2;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::encoder::SpikeRaster;
use crate::error::{Error, GammaSlot, Result};
use crate::neuron::{leak_factor, readout_step_with, DexatParams};
use crate::rsnn::ForwardTrace;
use crate::trainer::QuantizedNetwork;

/// Denominator of the 12-bit decay multiplier.
pub const DECAY_ONE: i64 = 4096;
/// Largest admissible inhibitory weight magnitude.
pub const GAMMA_MAX: i64 = 255;
/// Fractional bits of the synaptic current multipliers.
pub const SYNAPSE_FRAC_BITS: u32 = 16;
/// Membrane fraction bits below one threshold unit.
pub const DEFAULT_WEIGHT_EXP: u32 = 6;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct HwConfig {
    pub vth_fixed: i64,
    pub membrane_bits: u32,
    pub weight_exp: u32,
}

impl Default for HwConfig {
    fn default() -> Self {
        Self {
            vth_fixed: 5120,
            membrane_bits: 24,
            weight_exp: DEFAULT_WEIGHT_EXP,
        }
    }
}

impl HwConfig {
    pub fn validate(&self) -> Result<()> {
        if self.vth_fixed <= 0 {
            return Err(Error::InvalidArgument("vth_fixed must be positive".into()));
        }
        if !(2..=48).contains(&self.membrane_bits) {
            return Err(Error::InvalidArgument("membrane_bits must be in 2..=48".into()));
        }
        if self.weight_exp > 16 {
            return Err(Error::InvalidArgument("weight_exp must be at most 16".into()));
        }
        Ok(())
    }
}

/// `round(4096 · (1 - exp(-1/τ)))`.
pub fn decay_code(tau: f64) -> i64 {
    (DECAY_ONE as f64 * (1.0 - leak_factor(tau))).round() as i64
}

/// Time constant realized by a decay code; infinite for code 0.
pub fn decay_to_tau(code: i64) -> f64 {
    -1.0 / (1.0 - code as f64 / DECAY_ONE as f64).ln()
}

fn checked_decay(tau: f64, which: &'static str) -> Result<i64> {
    let code = if tau.is_finite() && tau > 0.0 {
        decay_code(tau)
    } else {
        -1
    };
    if !(0..=DECAY_ONE).contains(&code) {
        return Err(Error::InvalidDecay { which, code });
    }
    Ok(code)
}

/// Unrounded inhibitory weight `vth · β · (1 - exp(-1/τa)) / b0`.
pub fn gamma_target(vth_fixed: i64, beta: f64, tau_a: f64, b0: f64) -> f64 {
    vth_fixed as f64 * beta * (1.0 - leak_factor(tau_a)) / b0
}

/// Rounds [`gamma_target`] and checks it against `[1, 255]`.
pub fn map_adaptation(
    which: GammaSlot,
    vth_fixed: i64,
    beta: f64,
    tau_a: f64,
    b0: f64,
) -> Result<i64> {
    let target = gamma_target(vth_fixed, beta, tau_a, b0);
    // Saturating float-to-int cast keeps huge targets out of range.
    let gamma = target.round() as i64;
    if !(1..=GAMMA_MAX).contains(&gamma) {
        return Err(Error::OutOfHardwareRange { which, value: gamma });
    }
    Ok(gamma)
}

/// Integer three-compartment realization of one DEXAT neuron.
///
/// `gamma1`, `gamma2` and `vth_fixed` are in threshold units; the membrane
/// registers are finer by `2^weight_exp`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CompartmentConfig {
    pub vth_fixed: i64,
    pub gamma1: i64,
    pub gamma2: i64,
    pub decay1: i64,
    pub decay2: i64,
    pub decay_m: i64,
    pub weight_exp: u32,
    pub refractory_steps: u32,
    pub membrane_bits: u32,
}

impl CompartmentConfig {
    pub fn with_membrane_bits(mut self, bits: u32) -> Self {
        self.membrane_bits = bits;
        self
    }

    pub fn with_weight_exp(mut self, weight_exp: u32) -> Self {
        self.weight_exp = weight_exp;
        self
    }

    /// Firing threshold in membrane units, `vth_fixed · 2^weight_exp`.
    pub fn threshold(&self) -> i64 {
        self.vth_fixed << self.weight_exp
    }
}

pub fn map_params(p: &DexatParams, vth_fixed: i64) -> Result<CompartmentConfig> {
    p.validate()?;
    if vth_fixed <= 0 {
        return Err(Error::InvalidArgument("vth_fixed must be positive".into()));
    }
    Ok(CompartmentConfig {
        vth_fixed,
        gamma1: map_adaptation(GammaSlot::Gamma1, vth_fixed, p.beta1, p.tau_a1, p.b0)?,
        gamma2: map_adaptation(GammaSlot::Gamma2, vth_fixed, p.beta2, p.tau_a2, p.b0)?,
        decay1: checked_decay(p.tau_a1, "tau_a1")?,
        decay2: checked_decay(p.tau_a2, "tau_a2")?,
        decay_m: checked_decay(p.tau_m, "tau_m")?,
        weight_exp: DEFAULT_WEIGHT_EXP,
        refractory_steps: p.refractory_steps,
        membrane_bits: 24,
    })
}

/// Runtime state of one integer three-compartment neuron.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct HwState {
    pub u1: i64,
    pub u2: i64,
    pub u3: i64,
    pub z_prev: bool,
    pub refrac_left: u32,
    pub saturations: u64,
}

impl HwState {
    pub fn u_eff(&self) -> i64 {
        self.u1 + self.u2 + self.u3
    }
}

#[inline]
pub fn decay(u: i64, code: i64) -> i64 {
    u * (DECAY_ONE - code) / DECAY_ONE
}

#[inline]
fn saturate(x: i64, bits: u32, count: &mut u64) -> i64 {
    let lim = (1i64 << (bits - 1)) - 1;
    if x > lim {
        *count += 1;
        lim
    } else if x < -lim {
        *count += 1;
        -lim
    } else {
        x
    }
}

/// In-place step; returns the spike.
#[inline]
pub fn compartment_step_mut(s: &mut HwState, input: i64, cfg: &CompartmentConfig) -> bool {
    let bits = cfg.membrane_bits;
    let mut sat = s.saturations;
    let kick = if s.z_prev { 1i64 << cfg.weight_exp } else { 0 };
    s.u1 = saturate(decay(s.u1, cfg.decay_m) + input, bits, &mut sat);
    s.u2 = saturate(decay(s.u2, cfg.decay1) - cfg.gamma1 * kick, bits, &mut sat);
    s.u3 = saturate(decay(s.u3, cfg.decay2) - cfg.gamma2 * kick, bits, &mut sat);
    s.saturations = sat;
    let spike = if s.refrac_left > 0 {
        s.refrac_left -= 1;
        false
    } else {
        s.u_eff() > cfg.threshold()
    };
    if spike {
        s.u1 = 0;
        s.refrac_left = cfg.refractory_steps;
    }
    s.z_prev = spike;
    spike
}

pub fn compartment_step(s: &HwState, input: i64, cfg: &CompartmentConfig) -> (HwState, bool) {
    let mut next = *s;
    let spike = compartment_step_mut(&mut next, input, cfg);
    (next, spike)
}

/// Real-valued three-compartment neuron in the units of the float model.
///
/// `u2` and `u3` hold `-b1` and `-b2`; the β factors are applied at the
/// comparison.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FloatCompartmentConfig {
    pub vth: f64,
    pub alpha: f64,
    pub rho1: f64,
    pub rho2: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub refractory_steps: u32,
}

#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct FloatHwState {
    pub u1: f64,
    pub u2: f64,
    pub u3: f64,
    pub z_prev: bool,
    pub refrac_left: u32,
}

pub fn map_params_float(p: &DexatParams) -> Result<FloatCompartmentConfig> {
    p.validate()?;
    Ok(FloatCompartmentConfig {
        vth: p.b0,
        alpha: leak_factor(p.tau_m),
        rho1: leak_factor(p.tau_a1),
        rho2: leak_factor(p.tau_a2),
        beta1: p.beta1,
        beta2: p.beta2,
        refractory_steps: p.refractory_steps,
    })
}

pub fn float_compartment_step(s: &mut FloatHwState, input: f64, cfg: &FloatCompartmentConfig) -> bool {
    let kick = if s.z_prev { 1.0 } else { 0.0 };
    s.u1 = cfg.alpha * s.u1 + input;
    s.u2 = cfg.rho1 * s.u2 - (1.0 - cfg.rho1) * kick;
    s.u3 = cfg.rho2 * s.u3 - (1.0 - cfg.rho2) * kick;
    // u1 + β1·u2 + β2·u3 > vth, evaluated in the same association order as
    // the native threshold so both agree to the last bit.
    let threshold = cfg.vth + cfg.beta1 * -s.u2 + cfg.beta2 * -s.u3;
    let spike = if s.refrac_left > 0 {
        s.refrac_left -= 1;
        false
    } else {
        s.u1 > threshold
    };
    if spike {
        s.u1 = 0.0;
        s.refrac_left = cfg.refractory_steps;
    }
    s.z_prev = spike;
    spike
}

/// Single-compartment fixed-point LIF neuron.
#[derive(Debug, Clone, PartialEq)]
pub struct LifCompartmentConfig {
    pub vth: i64,
    pub decay_m: i64,
    pub refractory_steps: u32,
    pub membrane_bits: u32,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct LifHwState {
    pub u: i64,
    pub refrac_left: u32,
    pub saturations: u64,
}

#[inline]
pub fn lif_compartment_step(s: &mut LifHwState, input: i64, cfg: &LifCompartmentConfig) -> bool {
    s.u = saturate(decay(s.u, cfg.decay_m) + input, cfg.membrane_bits, &mut s.saturations);
    let spike = if s.refrac_left > 0 {
        s.refrac_left -= 1;
        false
    } else {
        s.u > cfg.vth
    };
    if spike {
        s.u = 0;
        s.refrac_left = cfg.refractory_steps;
    }
    spike
}

/// Diagnostics of an emulated run.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct HwStats {
    pub saturations: u64,
}

/// A quantized network prepared for fixed-point emulation.
///
/// Synaptic currents are `round(M · Σq / 2^16)` where `M = round(s · S · 2^16)`
/// folds each matrix's quantization scale into the membrane units.
#[derive(Debug, Clone)]
pub struct HwNetwork {
    qnet: QuantizedNetwork,
    pub dexat: CompartmentConfig,
    pub lif: LifCompartmentConfig,
    pub m_in: i64,
    pub m_rec: i64,
    kappa: f64,
}

fn multiplier(scale: f64, units: f64) -> i64 {
    (scale * units * (1u64 << SYNAPSE_FRAC_BITS) as f64).round() as i64
}

#[inline]
fn shift_round(x: i64) -> i64 {
    (x + (1i64 << (SYNAPSE_FRAC_BITS - 1))) >> SYNAPSE_FRAC_BITS
}

impl HwNetwork {
    pub fn new(qnet: &QuantizedNetwork, hw: &HwConfig) -> Result<Self> {
        hw.validate()?;
        qnet.topology.validate()?;
        qnet.params.validate()?;
        qnet.weights.dequantize().check_shape(&qnet.topology)?;
        let dexat = map_params(&qnet.params.dexat, hw.vth_fixed)?
            .with_membrane_bits(hw.membrane_bits)
            .with_weight_exp(hw.weight_exp);
        let units = (hw.vth_fixed << hw.weight_exp) as f64 / qnet.params.dexat.b0;
        let lif_p = &qnet.params.lif;
        let lif = LifCompartmentConfig {
            vth: (lif_p.v_th * units).round() as i64,
            decay_m: checked_decay(lif_p.tau_m, "lif tau_m")?,
            refractory_steps: lif_p.refractory_steps,
            membrane_bits: hw.membrane_bits,
        };
        Ok(Self {
            m_in: multiplier(qnet.weights.w_in.scale, units),
            m_rec: multiplier(qnet.weights.w_rec.scale, units),
            kappa: leak_factor(qnet.params.readout.tau_out),
            qnet: qnet.clone(),
            dexat,
            lif,
        })
    }

    pub fn run(&self, input: &SpikeRaster, record_hidden: bool) -> Result<(ForwardTrace, HwStats)> {
        let topo = &self.qnet.topology;
        if input.neurons() != topo.n_in {
            return Err(Error::ShapeMismatch {
                what: "input raster rows",
                expected: topo.n_in,
                found: input.neurons(),
            });
        }
        let w = &self.qnet.weights;
        let h = topo.hidden();
        let steps = input.timesteps();
        let mut lif = vec![LifHwState::default(); topo.m_lif];
        let mut dexat = vec![HwState::default(); topo.n_dexat];
        let mut y = vec![0.0; topo.n_out];
        let mut out_current = vec![0.0; topo.n_out];
        let mut readout = Array2::zeros((topo.n_out, steps));
        let mut hidden = record_hidden.then(|| SpikeRaster::zeros(h, steps));
        let mut spike_counts = vec![0u32; h];
        let mut current = vec![0i64; h];
        let mut z_prev: Vec<u32> = Vec::with_capacity(h);
        let mut z_now: Vec<u32> = Vec::with_capacity(h);

        for (t, x_active) in input.active_by_timestep().iter().enumerate() {
            for (j, c) in current.iter_mut().enumerate() {
                let row_in = w.w_in.values.row(j);
                let row_rec = w.w_rec.values.row(j);
                let acc_in: i64 = x_active.iter().map(|&i| i64::from(row_in[i as usize])).sum();
                let acc_rec: i64 = z_prev.iter().map(|&k| i64::from(row_rec[k as usize])).sum();
                *c = shift_round(self.m_in * acc_in + self.m_rec * acc_rec);
            }
            z_now.clear();
            for (j, s) in lif.iter_mut().enumerate() {
                if lif_compartment_step(s, current[j], &self.lif) {
                    z_now.push(j as u32);
                }
            }
            for (k, s) in dexat.iter_mut().enumerate() {
                let j = topo.m_lif + k;
                if compartment_step_mut(s, current[j], &self.dexat) {
                    z_now.push(j as u32);
                }
            }
            for (c, o) in out_current.iter_mut().enumerate() {
                let row = w.w_out.values.row(c);
                let acc: i64 = z_now.iter().map(|&j| i64::from(row[j as usize])).sum();
                *o = acc as f64 * w.w_out.scale;
            }
            readout_step_with(&mut y, &out_current, &w.b_out, self.kappa);
            for (c, &v) in y.iter().enumerate() {
                readout[[c, t]] = v;
            }
            for &j in &z_now {
                spike_counts[j as usize] += 1;
                if let Some(r) = hidden.as_mut() {
                    r.set(j as usize, t, true);
                }
            }
            std::mem::swap(&mut z_prev, &mut z_now);
        }
        let saturations = lif.iter().map(|s| s.saturations).sum::<u64>()
            + dexat.iter().map(|s| s.saturations).sum::<u64>();
        Ok((
            ForwardTrace {
                readout,
                hidden,
                spike_counts,
            },
            HwStats { saturations },
        ))
    }
}

/// Forward pass of a quantized network on the fixed-point neuron model.
pub fn emulate_network(
    qnet: &QuantizedNetwork,
    input: &SpikeRaster,
    hw: &HwConfig,
    record_hidden: bool,
) -> Result<ForwardTrace> {
    Ok(HwNetwork::new(qnet, hw)?.run(input, record_hidden)?.0)
}

/// Independent network copies, one per input, emulated in parallel.
pub fn emulate_batch(
    qnet: &QuantizedNetwork,
    inputs: &[&SpikeRaster],
    hw: &HwConfig,
) -> Result<Vec<ForwardTrace>> {
    let net = HwNetwork::new(qnet, hw)?;
    inputs
        .par_iter()
        .map(|x| net.run(x, false).map(|(t, _)| t))
        .collect()
}

/// Axes of a mappability sweep for one adaptation compartment.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct MappingGrid {
    pub tau_a: Vec<f64>,
    pub beta: Vec<f64>,
    pub b0: f64,
}

impl Default for MappingGrid {
    fn default() -> Self {
        Self {
            tau_a: vec![5.0, 10.0, 21.0, 50.0, 100.0, 200.0, 400.0, 1000.0],
            beta: vec![0.0, 0.25, 0.5, 1.0, 1.5, 2.0, 4.0, 8.0],
            b0: 1.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct MappingCell {
    pub tau_a: f64,
    pub beta: f64,
    pub gamma_target: f64,
    pub valid: bool,
    pub achieved_gamma: Option<i64>,
    pub achieved_tau: Option<f64>,
}

impl MappingCell {
    /// Relative error of the realized γ; `None` for out-of-range cells.
    pub fn gamma_error(&self) -> Option<f64> {
        self.achieved_gamma
            .map(|g| (g as f64 - self.gamma_target).abs() / self.gamma_target)
    }

    pub fn tau_error(&self) -> Option<f64> {
        self.achieved_tau.map(|t| (t - self.tau_a).abs() / self.tau_a)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct MappingReport {
    pub vth_fixed: i64,
    /// Row-major over `beta` then `tau_a`.
    pub cells: Vec<MappingCell>,
    pub tau_axis: Vec<f64>,
    pub beta_axis: Vec<f64>,
}

pub fn validity_region(grid: &MappingGrid, vth_fixed: i64) -> MappingReport {
    let mut cells = Vec::with_capacity(grid.tau_a.len() * grid.beta.len());
    for &beta in &grid.beta {
        for &tau_a in &grid.tau_a {
            let gamma = map_adaptation(GammaSlot::Gamma1, vth_fixed, beta, tau_a, grid.b0);
            let decay = checked_decay(tau_a, "tau_a");
            let valid = gamma.is_ok() && decay.is_ok();
            cells.push(MappingCell {
                tau_a,
                beta,
                gamma_target: gamma_target(vth_fixed, beta, tau_a, grid.b0),
                valid,
                achieved_gamma: gamma.ok().filter(|_| valid),
                achieved_tau: decay.ok().filter(|_| valid).map(decay_to_tau),
            });
        }
    }
    MappingReport {
        vth_fixed,
        cells,
        tau_axis: grid.tau_a.clone(),
        beta_axis: grid.beta.clone(),
    }
}

impl MappingReport {
    pub fn valid_count(&self) -> usize {
        self.cells.iter().filter(|c| c.valid).count()
    }

    /// `gamma_target,tau_a,beta,valid,achieved_gamma,achieved_tau`; the last
    /// two columns are empty for out-of-range cells.
    pub fn to_csv(&self) -> String {
        let mut s = String::from("gamma_target,tau_a,beta,valid,achieved_gamma,achieved_tau\n");
        for c in &self.cells {
            let g = c.achieved_gamma.map(|g| g.to_string()).unwrap_or_default();
            let t = c.achieved_tau.map(|t| t.to_string()).unwrap_or_default();
            let _ = writeln!(
                s,
                "{},{},{},{},{},{}",
                c.gamma_target, c.tau_a, c.beta, c.valid as u8, g, t
            );
        }
        s
    }

    /// Text grid with one row per β and one column per τa; `#` marks cells
    /// out of hardware range.
    pub fn render(&self) -> String {
        let mut s = format!("vth_fixed = {}   (# = out of hardware range)\n", self.vth_fixed);
        let _ = write!(s, "{:>8} |", "beta\\tau");
        for t in &self.tau_axis {
            let _ = write!(s, "{t:>7}");
        }
        s.push('\n');
        for (r, beta) in self.beta_axis.iter().enumerate() {
            let _ = write!(s, "{beta:>8} |");
            for c in 0..self.tau_axis.len() {
                let cell = &self.cells[r * self.tau_axis.len() + c];
                match cell.achieved_gamma {
                    Some(g) => {
                        let _ = write!(s, "{g:>7}");
                    }
                    None => {
                        let _ = write!(s, "{:>7}", "#");
                    }
                }
            }
            s.push('\n');
        }
        s
    }
}
