//! Reverse-mode gradients through the unrolled network.
//!
//! The forward pass records, per timestep and hidden neuron, the pre-reset
//! membrane `ṽ`, the threshold `A` used for the spike test and the emitted
//! spike `z`. The backward pass walks time in reverse, carrying adjoints of
//! the membrane, both adaptation variables and the recurrent spike input,
//! and substitutes a triangular pseudo-derivative for the spike function.
//!
//! [`Gate::Relaxed`] swaps the Heaviside spike for the integral of that
//! triangle. The relaxed model is differentiable everywhere and its exact
//! gradient is what the same backward pass computes, which makes the whole
//! recursion checkable by finite differences.

use ndarray::Array2;
use rayon::prelude::*;

use crate::encoder::SpikeRaster;
use crate::error::{Error, Result};
use crate::neuron::{leak_factor, DexatCoeffs, LifCoeffs};
use crate::rsnn::{argmax, Network, Weights};

/// `γ · max(0, 1 - |x| / width)`, where `x` is the distance of the membrane
/// from threshold and `width` is the resting threshold.
#[inline]
pub fn surrogate_grad(x: f64, gamma: f64, width: f64) -> f64 {
    gamma * (1.0 - x.abs() / width).max(0.0)
}

/// Antiderivative of [`surrogate_grad`], rising from 0 to `γ·width`.
#[inline]
pub fn surrogate_gate(x: f64, gamma: f64, width: f64) -> f64 {
    if x <= -width {
        0.0
    } else if x <= 0.0 {
        gamma * (x + width) * (x + width) / (2.0 * width)
    } else if x < width {
        gamma * (0.5 * width + x - x * x / (2.0 * width))
    } else {
        gamma * width
    }
}

/// Spike nonlinearity used on the forward pass.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Gate {
    Heaviside,
    /// Soft gate [`surrogate_gate`]; refractoriness is ignored.
    Relaxed,
}

/// Gradient buffers shaped like [`Weights`].
#[derive(Debug, Clone, PartialEq)]
pub struct Gradients(pub Weights);

impl Gradients {
    pub fn zeros_like(w: &Weights) -> Self {
        Gradients(Weights {
            w_in: Array2::zeros(w.w_in.raw_dim()),
            w_rec: Array2::zeros(w.w_rec.raw_dim()),
            w_out: Array2::zeros(w.w_out.raw_dim()),
            b_out: vec![0.0; w.b_out.len()],
        })
    }

    pub fn add_assign(&mut self, other: &Gradients) {
        self.0.w_in += &other.0.w_in;
        self.0.w_rec += &other.0.w_rec;
        self.0.w_out += &other.0.w_out;
        for (a, b) in self.0.b_out.iter_mut().zip(&other.0.b_out) {
            *a += b;
        }
    }

    pub fn scale(&mut self, k: f64) {
        self.0.w_in *= k;
        self.0.w_rec *= k;
        self.0.w_out *= k;
        self.0.b_out.iter_mut().for_each(|b| *b *= k);
    }

    pub fn norm(&self) -> f64 {
        let w = &self.0;
        let sq = w.w_in.iter().map(|g| g * g).sum::<f64>()
            + w.w_rec.iter().map(|g| g * g).sum::<f64>()
            + w.w_out.iter().map(|g| g * g).sum::<f64>()
            + w.b_out.iter().map(|g| g * g).sum::<f64>();
        sq.sqrt()
    }

    /// Rescales to `max_norm` when the global L2 norm exceeds it.
    pub fn clip_norm(&mut self, max_norm: f64) {
        let norm = self.norm();
        if norm > max_norm {
            self.scale(max_norm / norm);
        }
    }

    pub fn all_finite(&self) -> bool {
        self.0.all_finite()
    }
}

#[derive(Debug, Clone, Copy)]
pub struct BpttConfig {
    pub surrogate_dampening: f64,
    pub grad_clip_norm: f64,
    pub gate: Gate,
}

impl Default for BpttConfig {
    fn default() -> Self {
        Self {
            surrogate_dampening: 0.3,
            grad_clip_norm: 10.0,
            gate: Gate::Heaviside,
        }
    }
}

#[derive(Debug, Clone, Copy)]
struct Coeffs {
    lif: LifCoeffs,
    dexat: DexatCoeffs,
    kappa: f64,
    m: usize,
    hidden: usize,
    n_out: usize,
}

impl Coeffs {
    fn new(net: &Network) -> Self {
        Self {
            lif: LifCoeffs::from(&net.params.lif),
            dexat: DexatCoeffs::from(&net.params.dexat),
            kappa: leak_factor(net.params.readout.tau_out),
            m: net.topology.m_lif,
            hidden: net.topology.hidden(),
            n_out: net.topology.n_out,
        }
    }

    #[inline]
    fn width(&self, j: usize) -> f64 {
        if j < self.m {
            self.lif.v_th
        } else {
            self.dexat.b0
        }
    }
}

/// Recorded forward pass of one sample. Per-neuron arrays are time-major.
struct Tape {
    steps: usize,
    v_pre: Vec<f64>,
    threshold: Vec<f64>,
    blocked: Vec<bool>,
    z: Vec<f64>,
    /// Nonzero hidden outputs per step, ascending neuron index.
    active: Vec<Vec<(u32, f64)>>,
    x_active: Vec<Vec<u32>>,
    scores: Vec<f64>,
}

fn forward_tape(w: &Weights, k: &Coeffs, input: &SpikeRaster, gate: Gate, gamma: f64) -> Tape {
    let h = k.hidden;
    let steps = input.timesteps();
    let x_active = input.active_by_timestep();
    let mut tape = Tape {
        steps,
        v_pre: vec![0.0; steps * h],
        threshold: vec![0.0; steps * h],
        blocked: vec![false; steps * h],
        z: vec![0.0; steps * h],
        active: Vec::with_capacity(steps),
        x_active: Vec::new(),
        scores: vec![0.0; k.n_out],
    };
    let mut v = vec![0.0; h];
    let mut b1 = vec![0.0; h];
    let mut b2 = vec![0.0; h];
    let mut refrac = vec![0u32; h];
    let mut y = vec![0.0; k.n_out];
    let mut sums = vec![0.0; k.n_out];
    let empty = Vec::new();

    for t in 0..steps {
        let prev = if t > 0 { &tape.active[t - 1] } else { &empty };
        let mut active = Vec::new();
        for j in 0..h {
            let w_in = w.w_in.row(j);
            let w_rec = w.w_rec.row(j);
            let mut current = 0.0;
            for &i in &x_active[t] {
                current += w_in[i as usize];
            }
            for &(kk, zk) in prev {
                current += w_rec[kk as usize] * zk;
            }

            let idx = t * h + j;
            let (alpha, thr, refractory_steps) = if j < k.m {
                (k.lif.alpha, k.lif.v_th, k.lif.refractory_steps)
            } else {
                let d = &k.dexat;
                (d.alpha, d.b0 + d.beta1 * b1[j] + d.beta2 * b2[j], d.refractory_steps)
            };
            let v_pre = alpha * v[j] + current;
            let z = match gate {
                Gate::Heaviside => {
                    let spike = if refrac[j] > 0 {
                        refrac[j] -= 1;
                        tape.blocked[idx] = true;
                        false
                    } else {
                        v_pre > thr
                    };
                    if spike {
                        refrac[j] = refractory_steps;
                        1.0
                    } else {
                        0.0
                    }
                }
                Gate::Relaxed => surrogate_gate(v_pre - thr, gamma, k.width(j)),
            };
            v[j] = match gate {
                Gate::Heaviside if z != 0.0 => 0.0,
                Gate::Heaviside => v_pre,
                Gate::Relaxed => v_pre * (1.0 - z),
            };
            if j >= k.m {
                let d = &k.dexat;
                b1[j] = d.rho1 * b1[j] + (1.0 - d.rho1) * z;
                b2[j] = d.rho2 * b2[j] + (1.0 - d.rho2) * z;
            }
            tape.v_pre[idx] = v_pre;
            tape.threshold[idx] = thr;
            tape.z[idx] = z;
            if z != 0.0 {
                active.push((j as u32, z));
            }
        }
        for c in 0..k.n_out {
            let row = w.w_out.row(c);
            let mut current = 0.0;
            for &(j, zj) in &active {
                current += row[j as usize] * zj;
            }
            y[c] = k.kappa * y[c] + current + w.b_out[c] * (1.0 - k.kappa);
            sums[c] += y[c];
        }
        tape.active.push(active);
    }
    let denom = steps.max(1) as f64;
    for c in 0..k.n_out {
        tape.scores[c] = sums[c] / denom;
    }
    tape.x_active = x_active;
    tape
}

/// Softmax cross-entropy and its gradient with respect to the scores.
pub fn cross_entropy(scores: &[f64], label: usize) -> (f64, Vec<f64>) {
    let max = scores.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = scores.iter().map(|s| (s - max).exp()).collect();
    let total: f64 = exps.iter().sum();
    let loss = max + total.ln() - scores[label];
    let grad = exps
        .iter()
        .enumerate()
        .map(|(c, e)| e / total - if c == label { 1.0 } else { 0.0 })
        .collect();
    (loss, grad)
}

fn backward(w: &Weights, k: &Coeffs, tape: &Tape, label: usize, gamma: f64, self_rec: bool) -> (Gradients, f64) {
    let h = k.hidden;
    let steps = tape.steps;
    let (loss, d_scores) = cross_entropy(&tape.scores, label);
    let mut g = Gradients::zeros_like(w);
    let denom = steps.max(1) as f64;

    let mut g_y = vec![0.0; k.n_out];
    let mut g_v = vec![0.0; h];
    let mut g_b1 = vec![0.0; h];
    let mut g_b2 = vec![0.0; h];
    let mut g_rec = vec![0.0; h];
    let mut g_z = vec![0.0; h];
    let mut delta = vec![0.0; h];
    let d = &k.dexat;

    for t in (0..steps).rev() {
        for c in 0..k.n_out {
            g_y[c] = d_scores[c] / denom + k.kappa * g_y[c];
            g.0.b_out[c] += g_y[c] * (1.0 - k.kappa);
            for &(j, zj) in &tape.active[t] {
                g.0.w_out[[c, j as usize]] += g_y[c] * zj;
            }
        }
        for j in 0..h {
            let mut gz = g_rec[j];
            for c in 0..k.n_out {
                gz += g_y[c] * w.w_out[[c, j]];
            }
            if j >= k.m {
                gz += g_b1[j] * (1.0 - d.rho1) + g_b2[j] * (1.0 - d.rho2);
            }
            g_z[j] = gz;
        }
        for j in 0..h {
            let idx = t * h + j;
            let v_pre = tape.v_pre[idx];
            let z = tape.z[idx];
            let psi = if tape.blocked[idx] {
                0.0
            } else {
                surrogate_grad(v_pre - tape.threshold[idx], gamma, k.width(j))
            };
            // v = ṽ·(1 - z), so z also reaches the membrane through the reset.
            let gz = g_z[j] - g_v[j] * v_pre;
            let g_vpre = g_v[j] * (1.0 - z) + gz * psi;
            delta[j] = g_vpre;
            if j < k.m {
                g_v[j] = k.lif.alpha * g_vpre;
            } else {
                let g_thr = -gz * psi;
                g_v[j] = d.alpha * g_vpre;
                g_b1[j] = d.rho1 * g_b1[j] + d.beta1 * g_thr;
                g_b2[j] = d.rho2 * g_b2[j] + d.beta2 * g_thr;
            }
        }
        g_rec.fill(0.0);
        for j in 0..h {
            let dj = delta[j];
            if dj == 0.0 {
                continue;
            }
            let mut g_in = g.0.w_in.row_mut(j);
            for &i in &tape.x_active[t] {
                g_in[i as usize] += dj;
            }
            if t > 0 {
                let mut g_wrec = g.0.w_rec.row_mut(j);
                for &(kk, zk) in &tape.active[t - 1] {
                    g_wrec[kk as usize] += dj * zk;
                }
            }
            let w_rec = w.w_rec.row(j);
            for (gr, &wr) in g_rec.iter_mut().zip(w_rec.iter()) {
                *gr += wr * dj;
            }
        }
    }
    if !self_rec {
        g.0.w_rec.diag_mut().fill(0.0);
    }
    (g, loss)
}

/// Batch gradient, mean loss and number of correct predictions, before
/// clipping. Per-sample work runs in parallel and is summed in batch order.
pub(crate) fn batch_gradients(
    net: &Network,
    batch: &[(&SpikeRaster, usize)],
    gamma: f64,
    gate: Gate,
) -> Result<(Gradients, f64, usize)> {
    if batch.is_empty() {
        return Err(Error::EmptyDataset);
    }
    let k = Coeffs::new(net);
    for (raster, label) in batch {
        if raster.neurons() != net.topology.n_in {
            return Err(Error::ShapeMismatch {
                what: "input raster rows",
                expected: net.topology.n_in,
                found: raster.neurons(),
            });
        }
        if *label >= k.n_out {
            return Err(Error::InvalidArgument(format!("label {label} out of range")));
        }
    }
    let self_rec = net.topology.self_recurrence_allowed;
    let per_sample: Vec<(Gradients, f64, bool)> = batch
        .par_iter()
        .map(|&(raster, label)| {
            let tape = forward_tape(&net.weights, &k, raster, gate, gamma);
            let correct = argmax(&tape.scores) == label;
            let (g, loss) = backward(&net.weights, &k, &tape, label, gamma, self_rec);
            (g, loss, correct)
        })
        .collect();

    let mut total = Gradients::zeros_like(&net.weights);
    let mut loss = 0.0;
    let mut correct = 0;
    for (g, l, ok) in &per_sample {
        total.add_assign(g);
        loss += l;
        correct += usize::from(*ok);
    }
    let n = batch.len() as f64;
    total.scale(1.0 / n);
    loss /= n;
    if !loss.is_finite() {
        return Err(Error::NonFiniteLoss(format!(
            "batch of {} samples, gradient norm {:.3e}",
            batch.len(),
            total.norm()
        )));
    }
    Ok((total, loss, correct))
}

/// Unclipped batch-mean gradients and mean loss.
pub fn bptt_grads_raw(
    net: &Network,
    batch: &[(&SpikeRaster, usize)],
    cfg: &BpttConfig,
) -> Result<(Gradients, f64)> {
    let (g, loss, _) = batch_gradients(net, batch, cfg.surrogate_dampening, cfg.gate)?;
    Ok((g, loss))
}

/// Batch-mean gradients, clipped to `cfg.grad_clip_norm`, and mean loss.
pub fn bptt_grads(
    net: &Network,
    batch: &[(&SpikeRaster, usize)],
    cfg: &BpttConfig,
) -> Result<(Gradients, f64)> {
    let (mut g, loss) = bptt_grads_raw(net, batch, cfg)?;
    g.clip_norm(cfg.grad_clip_norm);
    Ok((g, loss))
}

/// Loss of one sample under the given gate, without gradients.
pub fn sample_loss(net: &Network, input: &SpikeRaster, label: usize, gamma: f64, gate: Gate) -> f64 {
    let k = Coeffs::new(net);
    let tape = forward_tape(&net.weights, &k, input, gate, gamma);
    cross_entropy(&tape.scores, label).0
}
