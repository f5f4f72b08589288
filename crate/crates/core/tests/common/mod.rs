//! Test-only oracles kept independent of the library's simulation code.
#![allow(dead_code)]

use emg_snn::encoder::SpikeRaster;
use emg_snn::rsnn::{Network, Weights};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// Straightforward scalar re-implementation of the network forward pass and
/// loss. `relaxed` swaps the spike step for the integral of the triangular
/// pseudo-derivative of height `gamma` and half-width equal to the neuron's
/// resting threshold.
pub fn oracle_loss(net: &Network, w: &Weights, input: &SpikeRaster, label: usize, gamma: f64, relaxed: bool) -> f64 {
    let m = net.topology.m_lif;
    let h = net.topology.hidden();
    let n_out = net.topology.n_out;
    let lif = &net.params.lif;
    let dx = &net.params.dexat;
    let a_lif = (-1.0 / lif.tau_m).exp();
    let a_dx = (-1.0 / dx.tau_m).exp();
    let r1 = (-1.0 / dx.tau_a1).exp();
    let r2 = (-1.0 / dx.tau_a2).exp();
    let kappa = (-1.0 / net.params.readout.tau_out).exp();

    let soft = |x: f64, width: f64| -> f64 {
        // ∫ γ·max(0, 1 - |u|/width) du from -∞ to x
        let u = x.clamp(-width, width);
        let tri = if u <= 0.0 {
            0.5 * (u + width) * (1.0 + u / width)
        } else {
            0.5 * width + u - 0.5 * u * u / width
        };
        gamma * tri
    };

    let mut v = vec![0.0; h];
    let mut b1 = vec![0.0; h];
    let mut b2 = vec![0.0; h];
    let mut z_prev = vec![0.0; h];
    let mut y = vec![0.0; n_out];
    let mut sums = vec![0.0; n_out];
    let steps = input.timesteps();
    for t in 0..steps {
        let mut z = vec![0.0; h];
        for j in 0..h {
            let mut i_syn = 0.0;
            for i in 0..input.neurons() {
                if input.get(i, t) {
                    i_syn += w.w_in[[j, i]];
                }
            }
            for k in 0..h {
                i_syn += w.w_rec[[j, k]] * z_prev[k];
            }
            let (alpha, thr) = if j < m {
                (a_lif, lif.v_th)
            } else {
                (a_dx, dx.b0 + dx.beta1 * b1[j] + dx.beta2 * b2[j])
            };
            let v_pre = alpha * v[j] + i_syn;
            let width = if j < m { lif.v_th } else { dx.b0 };
            z[j] = if relaxed {
                soft(v_pre - thr, width)
            } else if v_pre > thr {
                1.0
            } else {
                0.0
            };
            v[j] = v_pre * (1.0 - z[j]);
            if j >= m {
                b1[j] = r1 * b1[j] + (1.0 - r1) * z[j];
                b2[j] = r2 * b2[j] + (1.0 - r2) * z[j];
            }
        }
        for c in 0..n_out {
            let mut acc = 0.0;
            for j in 0..h {
                acc += w.w_out[[c, j]] * z[j];
            }
            y[c] = kappa * y[c] + acc + w.b_out[c] * (1.0 - kappa);
            sums[c] += y[c];
        }
        z_prev = z;
    }
    let scores: Vec<f64> = sums.iter().map(|s| s / steps as f64).collect();
    let max = scores.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let lse = max + scores.iter().map(|s| (s - max).exp()).sum::<f64>().ln();
    lse - scores[label]
}

pub fn random_raster(neurons: usize, steps: usize, p: f64, seed: u64) -> SpikeRaster {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut r = SpikeRaster::zeros(neurons, steps);
    for n in 0..neurons {
        for t in 0..steps {
            r.set(n, t, rng.random_bool(p));
        }
    }
    r
}

/// Relative error; magnitudes below `1e-4` are compared against that floor
/// so round-off on vanishing entries is not amplified.
pub fn rel_err(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(1e-4)
}
