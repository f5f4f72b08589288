//! Hybrid recurrent spiking network: spike input → recurrent hidden layer of
//! `m` LIF neurons followed by `n` DEXAT neurons → leaky linear readout.
//!
//! Hidden input current at step `t` is `W_in·x[t] + W_rec·z[t-1]`, with
//! `z[-1] = 0`. The readout integrates `W_out·z[t]` and classification uses
//! the time-mean of the readout trajectory.

use std::collections::hash_map::DefaultHasher;
use std::hash::{Hash, Hasher};

use ndarray::Array2;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::encoder::SpikeRaster;
use crate::error::{Error, Result};
use crate::neuron::{
    leak_factor, readout_step_with, DexatCoeffs, DexatParams, DexatState, LifCoeffs, LifParams,
    LifState, ReadoutParams,
};
use crate::signal::NUM_CLASSES;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Topology {
    pub n_in: usize,
    pub m_lif: usize,
    pub n_dexat: usize,
    pub n_out: usize,
    pub self_recurrence_allowed: bool,
}

impl Default for Topology {
    fn default() -> Self {
        Self {
            n_in: 72,
            m_lif: 50,
            n_dexat: 100,
            n_out: NUM_CLASSES,
            self_recurrence_allowed: false,
        }
    }
}

impl Topology {
    pub fn hidden(&self) -> usize {
        self.m_lif + self.n_dexat
    }

    pub fn validate(&self) -> Result<()> {
        if self.n_in == 0 || self.m_lif == 0 || self.n_dexat == 0 {
            return Err(Error::InvalidArgument("topology counts must be positive".into()));
        }
        if self.n_out != NUM_CLASSES {
            return Err(Error::InvalidArgument(format!(
                "readout must have {NUM_CLASSES} classes, got {}",
                self.n_out
            )));
        }
        Ok(())
    }
}

/// Neuron parameters shared by every unit of a population.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct NeuronParams {
    pub lif: LifParams,
    pub dexat: DexatParams,
    pub readout: ReadoutParams,
}

impl NeuronParams {
    pub fn validate(&self) -> Result<()> {
        self.lif.validate()?;
        self.dexat.validate()?;
        if !(self.readout.tau_out > 0.0) {
            return Err(Error::InvalidArgument("readout tau_out must be positive".into()));
        }
        Ok(())
    }
}

/// Float synaptic weights. Hidden indices are LIF first, then DEXAT.
#[derive(Debug, Clone, PartialEq)]
pub struct Weights {
    /// hidden × n_in
    pub w_in: Array2<f64>,
    /// hidden × hidden, `w_rec[[post, pre]]`
    pub w_rec: Array2<f64>,
    /// n_out × hidden
    pub w_out: Array2<f64>,
    pub b_out: Vec<f64>,
}

impl Weights {
    pub fn zeros(topo: &Topology) -> Self {
        let h = topo.hidden();
        Self {
            w_in: Array2::zeros((h, topo.n_in)),
            w_rec: Array2::zeros((h, h)),
            w_out: Array2::zeros((topo.n_out, h)),
            b_out: vec![0.0; topo.n_out],
        }
    }

    pub fn check_shape(&self, topo: &Topology) -> Result<()> {
        let h = topo.hidden();
        let checks = [
            ("w_in rows", h, self.w_in.nrows()),
            ("w_in cols", topo.n_in, self.w_in.ncols()),
            ("w_rec rows", h, self.w_rec.nrows()),
            ("w_rec cols", h, self.w_rec.ncols()),
            ("w_out rows", topo.n_out, self.w_out.nrows()),
            ("w_out cols", h, self.w_out.ncols()),
            ("b_out", topo.n_out, self.b_out.len()),
        ];
        for (what, expected, found) in checks {
            if expected != found {
                return Err(Error::ShapeMismatch {
                    what,
                    expected,
                    found,
                });
            }
        }
        Ok(())
    }

    pub fn all_finite(&self) -> bool {
        self.w_in.iter().all(|v| v.is_finite())
            && self.w_rec.iter().all(|v| v.is_finite())
            && self.w_out.iter().all(|v| v.is_finite())
            && self.b_out.iter().all(|v| v.is_finite())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Network {
    pub topology: Topology,
    pub params: NeuronParams,
    pub weights: Weights,
}

/// Draws every weight from `Normal(0, gain/sqrt(fan_in))`, zeroes the
/// recurrent diagonal unless self-recurrence is allowed, and zeroes biases.
pub fn init_network(topo: &Topology, params: NeuronParams, seed: u64) -> Result<Network> {
    init_network_scaled(topo, params, seed, 1.0)
}

pub fn init_network_scaled(
    topo: &Topology,
    params: NeuronParams,
    seed: u64,
    gain: f64,
) -> Result<Network> {
    topo.validate()?;
    params.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let h = topo.hidden();
    let mut draw = |rows: usize, cols: usize| -> Array2<f64> {
        let normal = Normal::new(0.0, gain / (cols as f64).sqrt()).expect("finite std");
        Array2::from_shape_fn((rows, cols), |_| normal.sample(&mut rng))
    };
    let w_in = draw(h, topo.n_in);
    let mut w_rec = draw(h, h);
    let w_out = draw(topo.n_out, h);
    if !topo.self_recurrence_allowed {
        w_rec.diag_mut().fill(0.0);
    }
    Ok(Network {
        topology: topo.clone(),
        params,
        weights: Weights {
            w_in,
            w_rec,
            w_out,
            b_out: vec![0.0; topo.n_out],
        },
    })
}

/// Runtime state of one simulation.
#[derive(Debug, Clone, PartialEq)]
pub struct NetworkState {
    pub lif: Vec<LifState>,
    pub dexat: Vec<DexatState>,
    pub readout: Vec<f64>,
    pub timestep: usize,
    /// Hidden neurons that spiked on the previous step.
    pub last_spikes: Vec<u32>,
}

impl NetworkState {
    pub fn new(topo: &Topology) -> Self {
        Self {
            lif: vec![LifState::default(); topo.m_lif],
            dexat: vec![DexatState::default(); topo.n_dexat],
            readout: vec![0.0; topo.n_out],
            timestep: 0,
            last_spikes: Vec::new(),
        }
    }

    /// Zeroes membranes, adaptation and readout; weights live elsewhere.
    pub fn reset(&mut self) {
        self.lif.fill(LifState::default());
        self.dexat.fill(DexatState::default());
        self.readout.fill(0.0);
        self.timestep = 0;
        self.last_spikes.clear();
    }

    /// Hash over the exact bit patterns of every state variable.
    pub fn fingerprint(&self) -> u64 {
        let mut h = DefaultHasher::new();
        for s in &self.lif {
            s.v.to_bits().hash(&mut h);
            s.refrac_left.hash(&mut h);
        }
        for s in &self.dexat {
            [s.v, s.b1, s.b2].map(f64::to_bits).hash(&mut h);
            s.refrac_left.hash(&mut h);
        }
        for y in &self.readout {
            y.to_bits().hash(&mut h);
        }
        self.timestep.hash(&mut h);
        self.last_spikes.hash(&mut h);
        h.finish()
    }
}

pub fn reset_state(state: &mut NetworkState) {
    state.reset();
}

#[derive(Debug, Clone, PartialEq)]
pub struct ForwardTrace {
    /// n_out × T readout trajectory.
    pub readout: Array2<f64>,
    /// hidden × T spikes, when requested.
    pub hidden: Option<SpikeRaster>,
    pub spike_counts: Vec<u32>,
}

impl ForwardTrace {
    pub fn timesteps(&self) -> usize {
        self.readout.ncols()
    }
}

/// Sums the synaptic current into every hidden neuron from the active input
/// and previous-step hidden spikes. Each neuron accumulates input terms then
/// recurrent terms, both in ascending presynaptic order.
#[inline]
pub(crate) fn hidden_current(
    w: &Weights,
    x_active: &[u32],
    z_prev_active: &[u32],
    out: &mut [f64],
) {
    for (j, o) in out.iter_mut().enumerate() {
        let w_in = w.w_in.row(j);
        let w_rec = w.w_rec.row(j);
        let mut acc = 0.0;
        for &i in x_active {
            acc += w_in[i as usize];
        }
        for &k in z_prev_active {
            acc += w_rec[k as usize];
        }
        *o = acc;
    }
}

#[inline]
pub(crate) fn readout_current(w: &Weights, z_active: &[u32], out: &mut [f64]) {
    for (c, o) in out.iter_mut().enumerate() {
        let row = w.w_out.row(c);
        let mut acc = 0.0;
        for &j in z_active {
            acc += row[j as usize];
        }
        *o = acc;
    }
}

impl Network {
    pub fn validate(&self) -> Result<()> {
        self.topology.validate()?;
        self.params.validate()?;
        self.weights.check_shape(&self.topology)?;
        if !self.weights.all_finite() {
            return Err(Error::NonFiniteValue("network weights".into()));
        }
        Ok(())
    }

    pub fn new_state(&self) -> NetworkState {
        NetworkState::new(&self.topology)
    }

    /// Runs from a fresh state.
    pub fn forward(&self, input: &SpikeRaster, record_hidden: bool) -> Result<ForwardTrace> {
        let mut state = self.new_state();
        self.run(&mut state, input, record_hidden)
    }

    /// Continues the simulation from `state`.
    pub fn run(
        &self,
        state: &mut NetworkState,
        input: &SpikeRaster,
        record_hidden: bool,
    ) -> Result<ForwardTrace> {
        let topo = &self.topology;
        if input.neurons() != topo.n_in {
            return Err(Error::ShapeMismatch {
                what: "input raster rows",
                expected: topo.n_in,
                found: input.neurons(),
            });
        }
        let h = topo.hidden();
        let steps = input.timesteps();
        let lif = LifCoeffs::from(&self.params.lif);
        let dexat = DexatCoeffs::from(&self.params.dexat);
        let kappa = leak_factor(self.params.readout.tau_out);

        let mut readout = Array2::zeros((topo.n_out, steps));
        let mut hidden = record_hidden.then(|| SpikeRaster::zeros(h, steps));
        let mut spike_counts = vec![0u32; h];
        let mut current = vec![0.0; h];
        let mut out_current = vec![0.0; topo.n_out];
        let mut z_active: Vec<u32> = Vec::with_capacity(h);

        for (t, x_active) in input.active_by_timestep().iter().enumerate() {
            hidden_current(&self.weights, x_active, &state.last_spikes, &mut current);
            z_active.clear();
            for (j, s) in state.lif.iter_mut().enumerate() {
                if lif.step(s, current[j]) {
                    z_active.push(j as u32);
                }
            }
            for (k, s) in state.dexat.iter_mut().enumerate() {
                let j = topo.m_lif + k;
                if dexat.step(s, current[j]) {
                    z_active.push(j as u32);
                }
            }
            readout_current(&self.weights, &z_active, &mut out_current);
            readout_step_with(&mut state.readout, &out_current, &self.weights.b_out, kappa);
            for (c, &y) in state.readout.iter().enumerate() {
                readout[[c, t]] = y;
            }
            for &j in &z_active {
                spike_counts[j as usize] += 1;
                if let Some(r) = hidden.as_mut() {
                    r.set(j as usize, t, true);
                }
            }
            std::mem::swap(&mut state.last_spikes, &mut z_active);
            state.timestep += 1;
        }
        Ok(ForwardTrace {
            readout,
            hidden,
            spike_counts,
        })
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ClassifyRule {
    #[default]
    MeanReadout,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Prediction {
    pub class: usize,
    pub scores: Vec<f64>,
}

/// Time-mean readout scores; the lowest class index wins ties.
pub fn classify(trace: &ForwardTrace, rule: ClassifyRule) -> Prediction {
    match rule {
        ClassifyRule::MeanReadout => {
            let steps = trace.timesteps().max(1) as f64;
            let scores: Vec<f64> = trace
                .readout
                .rows()
                .into_iter()
                .map(|row| row.sum() / steps)
                .collect();
            Prediction {
                class: argmax(&scores),
                scores,
            }
        }
    }
}

pub fn argmax(scores: &[f64]) -> usize {
    let mut best = 0;
    for (i, &s) in scores.iter().enumerate().skip(1) {
        if s > scores[best] {
            best = i;
        }
    }
    best
}

#[cfg(test)]
mod tests {
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};

    use super::*;

    fn small_topo() -> Topology {
        Topology {
            n_in: 12,
            m_lif: 4,
            n_dexat: 6,
            ..Topology::default()
        }
    }

    fn random_raster(neurons: usize, steps: usize, p: f64, seed: u64) -> SpikeRaster {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut r = SpikeRaster::zeros(neurons, steps);
        for n in 0..neurons {
            for t in 0..steps {
                r.set(n, t, rng.random_bool(p));
            }
        }
        r
    }

    #[test]
    fn init_is_deterministic_with_zero_diagonal() {
        let topo = Topology::default();
        let a = init_network(&topo, NeuronParams::default(), 9).unwrap();
        let b = init_network(&topo, NeuronParams::default(), 9).unwrap();
        assert_eq!(a, b);
        assert_eq!(a.weights.w_rec.dim(), (150, 150));
        assert!(a.weights.w_rec.diag().iter().all(|&d| d == 0.0));
        assert!(a.weights.b_out.iter().all(|&b| b == 0.0));
        let c = init_network(&topo, NeuronParams::default(), 10).unwrap();
        assert_ne!(a.weights.w_in, c.weights.w_in);
    }

    #[test]
    fn init_variance_follows_fan_in() {
        let topo = Topology {
            m_lif: 2,
            n_dexat: 3,
            ..Topology::default()
        };
        let mut sum_sq = 0.0;
        let mut count = 0usize;
        for seed in 0..1000 {
            let net = init_network(&topo, NeuronParams::default(), seed).unwrap();
            sum_sq += net.weights.w_in.iter().map(|w| w * w).sum::<f64>();
            count += net.weights.w_in.len();
        }
        let var = sum_sq / count as f64;
        assert!((var * 72.0 - 1.0).abs() < 0.2, "variance {var}");
    }

    #[test]
    fn rejects_bad_topology_and_shapes() {
        let bad = Topology {
            n_out: 4,
            ..Topology::default()
        };
        assert!(init_network(&bad, NeuronParams::default(), 0).is_err());
        let net = init_network(&small_topo(), NeuronParams::default(), 0).unwrap();
        assert!(matches!(
            net.forward(&SpikeRaster::zeros(11, 5), false),
            Err(Error::ShapeMismatch { .. })
        ));
    }

    #[test]
    fn zero_input_gives_zero_readout() {
        let net = init_network(&small_topo(), NeuronParams::default(), 1).unwrap();
        let trace = net.forward(&SpikeRaster::zeros(12, 30), true).unwrap();
        assert!(trace.readout.iter().all(|&y| y == 0.0));
        assert_eq!(trace.hidden.unwrap().count(), 0);
    }

    #[test]
    fn decoupled_network_matches_per_neuron_simulation() {
        let mut net = init_network_scaled(&small_topo(), NeuronParams::default(), 2, 3.0).unwrap();
        net.weights.w_rec.fill(0.0);
        let input = random_raster(12, 80, 0.3, 4);
        let trace = net.forward(&input, true).unwrap();
        let hidden = trace.hidden.unwrap();
        assert!(hidden.count() > 0);
        for j in 0..net.topology.hidden() {
            // Independent single-neuron loop over the dense input column.
            let mut lif = LifState::default();
            let mut dex = DexatState::default();
            for t in 0..80 {
                let mut current = 0.0;
                for i in 0..12 {
                    if input.get(i, t) {
                        current += net.weights.w_in[[j, i]];
                    }
                }
                let z = if j < net.topology.m_lif {
                    let (s, z) = crate::neuron::lif_step(&lif, current, &net.params.lif);
                    lif = s;
                    z
                } else {
                    let (s, z) = crate::neuron::dexat_step(&dex, current, &net.params.dexat);
                    dex = s;
                    z
                };
                assert_eq!(z, hidden.get(j, t), "neuron {j} step {t}");
            }
        }
    }

    #[test]
    fn reset_restores_canonical_state() {
        let net = init_network_scaled(&small_topo(), NeuronParams::default(), 3, 3.0).unwrap();
        let input = random_raster(12, 50, 0.3, 1);
        let canonical = net.new_state().fingerprint();
        let mut fresh = net.new_state();
        reset_state(&mut fresh);
        assert_eq!(fresh.fingerprint(), canonical);

        let mut state = net.new_state();
        let a = net.run(&mut state, &input, true).unwrap();
        assert_ne!(state.fingerprint(), canonical);
        reset_state(&mut state);
        assert_eq!(state.fingerprint(), canonical);
        let b = net.run(&mut state, &input, true).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn duplicated_input_with_reset_gives_identical_halves() {
        let net = init_network_scaled(&small_topo(), NeuronParams::default(), 5, 3.0).unwrap();
        let half = random_raster(12, 40, 0.25, 2);
        let mut state = net.new_state();
        let first = net.run(&mut state, &half, false).unwrap();
        state.reset();
        let second = net.run(&mut state, &half, false).unwrap();
        assert_eq!(first.readout, second.readout);
    }

    #[test]
    fn causality_under_truncation() {
        let net = init_network_scaled(&small_topo(), NeuronParams::default(), 6, 3.0).unwrap();
        let input = random_raster(12, 60, 0.3, 3);
        let full = net.forward(&input, false).unwrap();
        let cut = net.forward(&input.slice_time(0, 25), false).unwrap();
        for c in 0..3 {
            for t in 0..25 {
                assert_eq!(full.readout[[c, t]].to_bits(), cut.readout[[c, t]].to_bits());
            }
        }
    }

    #[test]
    fn hidden_permutation_leaves_readout_unchanged() {
        let net = init_network_scaled(&small_topo(), NeuronParams::default(), 7, 3.0).unwrap();
        let h = net.topology.hidden();
        let m = net.topology.m_lif;
        // Reverse within each population so the LIF-first partition holds.
        let perm: Vec<usize> = (0..m).rev().chain((m..h).rev()).collect();
        let mut permuted = net.clone();
        for (new, &old) in perm.iter().enumerate() {
            permuted.weights.w_in.row_mut(new).assign(&net.weights.w_in.row(old));
            for (new_k, &old_k) in perm.iter().enumerate() {
                permuted.weights.w_rec[[new, new_k]] = net.weights.w_rec[[old, old_k]];
            }
            for c in 0..3 {
                permuted.weights.w_out[[c, new]] = net.weights.w_out[[c, old]];
            }
        }
        let input = random_raster(12, 60, 0.3, 8);
        let a = net.forward(&input, true).unwrap();
        let b = permuted.forward(&input, true).unwrap();
        let (ha, hb) = (a.hidden.unwrap(), b.hidden.unwrap());
        assert!(ha.count() > 0);
        for (new, &old) in perm.iter().enumerate() {
            assert_eq!(ha.row(old), hb.row(new));
        }
        for (x, y) in a.readout.iter().zip(b.readout.iter()) {
            assert!((x - y).abs() < 1e-9);
        }
    }

    #[test]
    fn at_most_one_spike_per_step() {
        let net = init_network_scaled(&small_topo(), NeuronParams::default(), 8, 5.0).unwrap();
        let input = random_raster(12, 100, 0.5, 9);
        let trace = net.forward(&input, true).unwrap();
        let hidden = trace.hidden.unwrap();
        for j in 0..net.topology.hidden() {
            assert_eq!(trace.spike_counts[j] as usize, hidden.row_count(j));
            assert!(trace.spike_counts[j] as usize <= 100);
        }
    }

    #[test]
    fn classify_rules() {
        let trace = |rows: [[f64; 4]; 3]| ForwardTrace {
            readout: Array2::from_shape_fn((3, 4), |(c, t)| rows[c][t]),
            hidden: None,
            spike_counts: vec![],
        };
        let p = classify(&trace([[1.0; 4], [0.0; 4], [0.0; 4]]), ClassifyRule::MeanReadout);
        assert_eq!(p.class, 0);
        assert_eq!(p.scores, vec![1.0, 0.0, 0.0]);
        let tie = classify(&trace([[0.5; 4]; 3]), ClassifyRule::MeanReadout);
        assert_eq!(tie.class, 0);
        let p = classify(&trace([[0.0; 4], [0.0, 0.0, 0.0, 1.0], [0.1; 4]]), ClassifyRule::MeanReadout);
        assert_eq!(p.class, 1);
    }

    proptest! {
        #[test]
        fn argmax_is_scale_invariant(
            values in prop::collection::vec(-10.0f64..10.0, 3 * 8),
            lambda in 1e-3f64..1e3,
        ) {
            let trace = ForwardTrace {
                readout: Array2::from_shape_vec((3, 8), values).unwrap(),
                hidden: None,
                spike_counts: vec![],
            };
            let mut scaled = trace.clone();
            scaled.readout.mapv_inplace(|y| y * lambda);
            let a = classify(&trace, ClassifyRule::MeanReadout);
            let b = classify(&scaled, ClassifyRule::MeanReadout);
            // Guard against exact ties that rounding could split.
            let mut sorted = a.scores.clone();
            sorted.sort_by(|x, y| y.total_cmp(x));
            prop_assume!(sorted[0] - sorted[1] > 1e-9 * sorted[0].abs().max(1.0));
            prop_assert_eq!(a.class, b.class);
        }
    }
}
