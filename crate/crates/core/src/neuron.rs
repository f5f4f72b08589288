//! Discrete-time LIF, DEXAT and leaky readout dynamics.
//!
//! All time constants are in units of the simulation step, so a leak factor
//! is `exp(-1/τ)`. Within a step the membrane decays, the input current is
//! added, the threshold test runs against the pre-update threshold, and a
//! spike resets the membrane to zero.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[inline]
pub fn leak_factor(tau: f64) -> f64 {
    (-1.0 / tau).exp()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct LifParams {
    pub tau_m: f64,
    pub v_th: f64,
    pub refractory_steps: u32,
}

impl Default for LifParams {
    fn default() -> Self {
        Self {
            tau_m: 20.0,
            v_th: 1.0,
            refractory_steps: 0,
        }
    }
}

impl LifParams {
    pub fn validate(&self) -> Result<()> {
        if !(self.tau_m > 0.0 && self.v_th > 0.0) {
            return Err(Error::InvalidArgument("LIF needs tau_m > 0 and v_th > 0".into()));
        }
        Ok(())
    }
}

/// Double-exponential adaptive threshold parameters.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DexatParams {
    pub tau_m: f64,
    /// Fast adaptation time constant.
    pub tau_a1: f64,
    /// Slow adaptation time constant.
    pub tau_a2: f64,
    pub beta1: f64,
    pub beta2: f64,
    /// Resting threshold.
    pub b0: f64,
    pub refractory_steps: u32,
}

impl Default for DexatParams {
    fn default() -> Self {
        Self {
            tau_m: 20.0,
            tau_a1: 21.0,
            tau_a2: 400.0,
            beta1: 1.0,
            beta2: 1.0,
            b0: 1.0,
            refractory_steps: 0,
        }
    }
}

impl DexatParams {
    pub fn validate(&self) -> Result<()> {
        let taus = [self.tau_m, self.tau_a1, self.tau_a2];
        if taus.iter().any(|t| !(*t > 0.0)) || !(self.tau_a1 < self.tau_a2) {
            return Err(Error::InvalidArgument(
                "DEXAT needs positive time constants with tau_a1 < tau_a2".into(),
            ));
        }
        if !(self.beta1 >= 0.0 && self.beta2 >= 0.0 && self.b0 > 0.0) {
            return Err(Error::InvalidArgument("DEXAT needs beta >= 0 and b0 > 0".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ReadoutParams {
    pub tau_out: f64,
}

impl Default for ReadoutParams {
    fn default() -> Self {
        Self { tau_out: 20.0 }
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct LifState {
    pub v: f64,
    pub refrac_left: u32,
}

#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct DexatState {
    pub v: f64,
    pub b1: f64,
    pub b2: f64,
    pub refrac_left: u32,
}

/// Precomputed LIF step coefficients.
#[derive(Debug, Clone, Copy)]
pub struct LifCoeffs {
    pub alpha: f64,
    pub v_th: f64,
    pub refractory_steps: u32,
}

impl From<&LifParams> for LifCoeffs {
    fn from(p: &LifParams) -> Self {
        Self {
            alpha: leak_factor(p.tau_m),
            v_th: p.v_th,
            refractory_steps: p.refractory_steps,
        }
    }
}

impl LifCoeffs {
    #[inline]
    pub fn step(&self, s: &mut LifState, input: f64) -> bool {
        s.v = self.alpha * s.v + input;
        let spike = if s.refrac_left > 0 {
            s.refrac_left -= 1;
            false
        } else {
            s.v > self.v_th
        };
        if spike {
            s.v = 0.0;
            s.refrac_left = self.refractory_steps;
        }
        spike
    }
}

/// Precomputed DEXAT step coefficients.
#[derive(Debug, Clone, Copy)]
pub struct DexatCoeffs {
    pub alpha: f64,
    pub rho1: f64,
    pub rho2: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub b0: f64,
    pub refractory_steps: u32,
}

impl From<&DexatParams> for DexatCoeffs {
    fn from(p: &DexatParams) -> Self {
        Self {
            alpha: leak_factor(p.tau_m),
            rho1: leak_factor(p.tau_a1),
            rho2: leak_factor(p.tau_a2),
            beta1: p.beta1,
            beta2: p.beta2,
            b0: p.b0,
            refractory_steps: p.refractory_steps,
        }
    }
}

impl DexatCoeffs {
    #[inline]
    pub fn threshold(&self, s: &DexatState) -> f64 {
        self.b0 + self.beta1 * s.b1 + self.beta2 * s.b2
    }

    #[inline]
    pub fn step(&self, s: &mut DexatState, input: f64) -> bool {
        let threshold = self.threshold(s);
        s.v = self.alpha * s.v + input;
        let spike = if s.refrac_left > 0 {
            s.refrac_left -= 1;
            false
        } else {
            s.v > threshold
        };
        let z = if spike { 1.0 } else { 0.0 };
        if spike {
            s.v = 0.0;
            s.refrac_left = self.refractory_steps;
        }
        s.b1 = self.rho1 * s.b1 + (1.0 - self.rho1) * z;
        s.b2 = self.rho2 * s.b2 + (1.0 - self.rho2) * z;
        spike
    }
}

pub fn lif_step(state: &LifState, input: f64, p: &LifParams) -> (LifState, bool) {
    let mut next = *state;
    let spike = LifCoeffs::from(p).step(&mut next, input);
    (next, spike)
}

/// Effective firing threshold `b0 + β1·b1 + β2·b2`.
pub fn dexat_threshold(state: &DexatState, p: &DexatParams) -> f64 {
    DexatCoeffs::from(p).threshold(state)
}

pub fn dexat_step(state: &DexatState, input: f64, p: &DexatParams) -> (DexatState, bool) {
    let mut next = *state;
    let spike = DexatCoeffs::from(p).step(&mut next, input);
    (next, spike)
}

/// Non-spiking leaky integrator: `y' = κ·y + input + bias·(1-κ)`.
#[inline]
pub fn readout_step(y: &mut [f64], input: &[f64], bias: &[f64], p: &ReadoutParams) {
    let kappa = leak_factor(p.tau_out);
    readout_step_with(y, input, bias, kappa);
}

#[inline]
pub(crate) fn readout_step_with(y: &mut [f64], input: &[f64], bias: &[f64], kappa: f64) {
    for ((y, &i), &b) in y.iter_mut().zip(input).zip(bias) {
        *y = kappa * *y + i + b * (1.0 - kappa);
    }
}

#[cfg(test)]
mod tests {
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    use super::*;

    #[test]
    fn lif_quiescent_and_single_step() {
        let p = LifParams::default();
        assert_eq!(lif_step(&LifState::default(), 0.0, &p), (LifState::default(), false));
        let (s, spike) = lif_step(&LifState::default(), 1.5, &p);
        assert!(spike);
        assert_eq!(s.v, 0.0);
    }

    #[test]
    fn lif_first_spike_matches_geometric_series() {
        let p = LifParams::default();
        let alpha = (-1.0f64 / 20.0).exp();
        let input = 0.1;
        // v[t] = I (1 - α^t) / (1 - α); first t with v[t] > v_th.
        let analytic = (1..)
            .find(|&t| input * (1.0 - alpha.powi(t)) / (1.0 - alpha) > p.v_th)
            .unwrap();
        let mut s = LifState::default();
        let mut t = 0;
        let simulated = loop {
            t += 1;
            let (next, spike) = lif_step(&s, input, &p);
            s = next;
            if spike {
                break t;
            }
        };
        assert_eq!(simulated, analytic);
    }

    #[test]
    fn lif_refractory_blocks_spikes() {
        let p = LifParams {
            refractory_steps: 3,
            ..LifParams::default()
        };
        let mut s = LifState::default();
        let spikes: Vec<bool> = (0..8)
            .map(|_| {
                let (next, z) = lif_step(&s, 5.0, &p);
                s = next;
                z
            })
            .collect();
        assert_eq!(spikes, [true, false, false, false, true, false, false, false]);
    }

    #[test]
    fn dexat_threshold_cases() {
        let p = DexatParams::default();
        assert_eq!(dexat_threshold(&DexatState::default(), &p), 1.0);
        let s = DexatState {
            b1: 0.3,
            b2: 0.1,
            ..DexatState::default()
        };
        assert!((dexat_threshold(&s, &p) - 1.4).abs() < 1e-15);
        let single = DexatParams { beta2: 0.0, ..p };
        assert!((dexat_threshold(&s, &single) - 1.3).abs() < 1e-15);
    }

    #[test]
    fn dexat_quiescent() {
        let p = DexatParams::default();
        let (s, z) = dexat_step(&DexatState::default(), 0.0, &p);
        assert_eq!(s, DexatState::default());
        assert!(!z);
    }

    #[test]
    fn dexat_relaxation_is_double_exponential() {
        let p = DexatParams::default();
        let (rho1, rho2) = ((-1.0f64 / 21.0).exp(), (-1.0f64 / 400.0).exp());
        let (mut s, z) = dexat_step(&DexatState::default(), 10.0, &p);
        assert!(z);
        for t in 1..=1000 {
            let expected = 1.0
                + (1.0 - rho1) * rho1.powi(t - 1)
                + (1.0 - rho2) * rho2.powi(t - 1);
            assert!((dexat_threshold(&s, &p) - expected).abs() < 1e-12, "t = {t}");
            s = dexat_step(&s, 0.0, &p).0;
        }
    }

    #[test]
    fn slow_term_dominates_after_400_steps() {
        let (rho1, rho2) = ((-1.0f64 / 21.0).exp(), (-1.0f64 / 400.0).exp());
        let fast = (1.0 - rho1) * rho1.powi(400);
        let slow = (1.0 - rho2) * rho2.powi(400);
        assert!(slow / fast > 1e6);
    }

    #[test]
    fn threshold_relaxes_monotonically_toward_b0() {
        let p = DexatParams::default();
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        for _ in 0..10_000 {
            let s = DexatState {
                v: 0.0,
                b1: rng.random_range(0.0..1.0),
                b2: rng.random_range(0.0..1.0),
                refrac_left: 0,
            };
            let before = dexat_threshold(&s, &p);
            let (next, z) = dexat_step(&s, 0.0, &p);
            assert!(!z);
            let after = dexat_threshold(&next, &p);
            assert!(after >= p.b0);
            if s.b1 > 0.0 || s.b2 > 0.0 {
                assert!(after < before);
            }
        }
    }

    #[test]
    fn readout_dynamics() {
        let p = ReadoutParams::default();
        let mut y = [0.0];
        readout_step(&mut y, &[0.0], &[0.0], &p);
        assert_eq!(y, [0.0]);

        let kappa = (-1.0f64 / 20.0).exp();
        let (c, bias) = (0.3, 0.5);
        let fixed_point = c / (1.0 - kappa) + bias;
        let mut y = [0.0];
        let mut prev_gap = f64::INFINITY;
        for _ in 0..2000 {
            readout_step(&mut y, &[c], &[bias], &p);
            let gap = (y[0] - fixed_point).abs();
            assert!(gap <= prev_gap);
            prev_gap = gap;
        }
        assert!(prev_gap < 1e-12);

        let instant = ReadoutParams { tau_out: 1e-9 };
        let mut y = [5.0];
        readout_step(&mut y, &[0.7], &[0.2], &instant);
        assert_eq!(y, [0.7 + 0.2]);
    }

    proptest! {
        #[test]
        fn adaptation_stays_nonnegative_and_bounded(inputs in prop::collection::vec(-1.0f64..3.0, 1..300)) {
            let p = DexatParams::default();
            let mut s = DexatState::default();
            for i in inputs {
                s = dexat_step(&s, i, &p).0;
                prop_assert!(s.b1 >= 0.0 && s.b1 < 1.0);
                prop_assert!(s.b2 >= 0.0 && s.b2 < 1.0);
                let a = dexat_threshold(&s, &p);
                prop_assert!(a >= p.b0 && a < p.b0 + p.beta1 + p.beta2);
            }
        }

        #[test]
        fn dexat_without_adaptation_is_lif(
            inputs in prop::collection::vec(-0.5f64..1.5, 1..300),
            refractory in 0u32..4,
        ) {
            let d = DexatParams { beta1: 0.0, beta2: 0.0, refractory_steps: refractory, ..DexatParams::default() };
            let l = LifParams { tau_m: d.tau_m, v_th: d.b0, refractory_steps: refractory };
            let (mut ds, mut ls) = (DexatState::default(), LifState::default());
            for i in inputs {
                let (dn, dz) = dexat_step(&ds, i, &d);
                let (ln, lz) = lif_step(&ls, i, &l);
                prop_assert_eq!(dz, lz);
                prop_assert_eq!(dn.v.to_bits(), ln.v.to_bits());
                ds = dn;
                ls = ln;
            }
        }
    }
}
