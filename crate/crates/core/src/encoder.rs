//! Threshold-crossing spike encoder.
//!
//! Every channel gets `K` linearly spaced voltage levels. Each level drives an
//! ONSET neuron (upward crossing) and an OFFSET neuron (downward crossing),
//! and an optional Touch neuron fires while the signal stays at or above the
//! top level. Rows of one channel are laid out as `ONSET_0..K`, `OFFSET_0..K`,
//! then Touch; channels are stacked channel-major.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::signal::EmgWindow;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EncoderConfig {
    pub v_min: f64,
    pub v_max: f64,
    pub levels: usize,
    pub touch_enabled: bool,
}

impl Default for EncoderConfig {
    fn default() -> Self {
        Self {
            v_min: -2.0,
            v_max: 2.0,
            levels: 4,
            touch_enabled: true,
        }
    }
}

impl EncoderConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.v_min.is_finite() && self.v_max.is_finite() && self.v_min < self.v_max) {
            return Err(Error::InvalidArgument("encoder needs finite v_min < v_max".into()));
        }
        if self.levels == 0 {
            return Err(Error::InvalidArgument("encoder needs at least one level".into()));
        }
        Ok(())
    }

    pub fn neurons_per_channel(&self) -> usize {
        2 * self.levels + usize::from(self.touch_enabled)
    }
}

/// Binary neuron x timestep matrix, stored neuron-major.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct SpikeRaster {
    neurons: usize,
    timesteps: usize,
    bits: Vec<u8>,
}

impl SpikeRaster {
    pub fn zeros(neurons: usize, timesteps: usize) -> Self {
        Self {
            neurons,
            timesteps,
            bits: vec![0; neurons * timesteps],
        }
    }

    pub fn neurons(&self) -> usize {
        self.neurons
    }

    pub fn timesteps(&self) -> usize {
        self.timesteps
    }

    #[inline]
    pub fn get(&self, neuron: usize, t: usize) -> bool {
        self.bits[neuron * self.timesteps + t] != 0
    }

    #[inline]
    pub fn set(&mut self, neuron: usize, t: usize, spike: bool) {
        self.bits[neuron * self.timesteps + t] = u8::from(spike);
    }

    pub fn row(&self, neuron: usize) -> &[u8] {
        &self.bits[neuron * self.timesteps..(neuron + 1) * self.timesteps]
    }

    pub fn count(&self) -> usize {
        self.bits.iter().map(|&b| b as usize).sum()
    }

    pub fn row_count(&self, neuron: usize) -> usize {
        self.row(neuron).iter().map(|&b| b as usize).sum()
    }

    /// Indices of the neurons spiking at each timestep, in ascending order.
    pub fn active_by_timestep(&self) -> Vec<Vec<u32>> {
        let mut active = vec![Vec::new(); self.timesteps];
        for n in 0..self.neurons {
            for (t, &b) in self.row(n).iter().enumerate() {
                if b != 0 {
                    active[t].push(n as u32);
                }
            }
        }
        active
    }

    /// Stacks rasters with equal timestep counts on top of each other.
    pub fn stack(parts: &[SpikeRaster]) -> Result<SpikeRaster> {
        let timesteps = parts.first().map(|p| p.timesteps).unwrap_or(0);
        if let Some(p) = parts.iter().find(|p| p.timesteps != timesteps) {
            return Err(Error::ShapeMismatch {
                what: "raster timesteps",
                expected: timesteps,
                found: p.timesteps,
            });
        }
        let neurons = parts.iter().map(|p| p.neurons).sum();
        let mut bits = Vec::with_capacity(neurons * timesteps);
        for p in parts {
            bits.extend_from_slice(&p.bits);
        }
        Ok(SpikeRaster {
            neurons,
            timesteps,
            bits,
        })
    }

    /// Keeps timesteps `start..start + len`.
    pub fn slice_time(&self, start: usize, len: usize) -> SpikeRaster {
        let mut out = SpikeRaster::zeros(self.neurons, len);
        for n in 0..self.neurons {
            out.bits[n * len..(n + 1) * len]
                .copy_from_slice(&self.row(n)[start..start + len]);
        }
        out
    }

    /// Text form: one line per neuron of `0`/`1` characters.
    pub fn to_text(&self) -> String {
        let mut s = String::with_capacity(self.neurons * (self.timesteps + 1));
        for n in 0..self.neurons {
            s.extend(self.row(n).iter().map(|&b| if b != 0 { '1' } else { '0' }));
            s.push('\n');
        }
        s
    }

    pub fn from_text(text: &str) -> Result<SpikeRaster> {
        let rows: Vec<&str> = text.lines().filter(|l| !l.is_empty()).collect();
        let timesteps = rows.first().map(|r| r.len()).unwrap_or(0);
        if rows.is_empty() || timesteps == 0 {
            return Err(Error::MalformedFile("empty raster".into()));
        }
        let mut bits = Vec::with_capacity(rows.len() * timesteps);
        for (n, row) in rows.iter().enumerate() {
            if row.len() != timesteps {
                return Err(Error::MalformedFile(format!("raster row {n} has a different length")));
            }
            for ch in row.bytes() {
                match ch {
                    b'0' => bits.push(0),
                    b'1' => bits.push(1),
                    _ => return Err(Error::MalformedFile(format!("raster row {n}: bad character"))),
                }
            }
        }
        Ok(SpikeRaster {
            neurons: rows.len(),
            timesteps,
            bits,
        })
    }
}

/// `K` evenly spaced levels over `[v_min, v_max]`, endpoints included; a
/// single level sits at the midpoint.
pub fn build_thresholds(cfg: &EncoderConfig) -> Vec<f64> {
    let k = cfg.levels;
    if k == 1 {
        return vec![0.5 * (cfg.v_min + cfg.v_max)];
    }
    let step = (cfg.v_max - cfg.v_min) / (k - 1) as f64;
    (0..k)
        .map(|i| {
            if i == k - 1 {
                cfg.v_max
            } else {
                cfg.v_min + step * i as f64
            }
        })
        .collect()
}

/// Encodes one channel into `2K (+1)` rows by `signal.len()` columns.
///
/// At `t >= 1`, `ONSET_i` fires iff `s[t-1] < θ_i <= s[t]`, `OFFSET_i` iff
/// `s[t-1] >= θ_i > s[t]`, and Touch iff both samples are at or above the top
/// level. Column 0 has no predecessor and stays silent.
pub fn encode_channel(signal: &[f32], thresholds: &[f64], touch_enabled: bool) -> Result<SpikeRaster> {
    if signal.len() < 2 {
        return Err(Error::InvalidArgument("encoding needs at least two samples".into()));
    }
    if thresholds.is_empty() || thresholds.windows(2).any(|w| !(w[0] < w[1])) {
        return Err(Error::InvalidArgument("thresholds must be strictly increasing".into()));
    }
    if let Some(t) = signal.iter().position(|v| !v.is_finite()) {
        return Err(Error::NonFiniteValue(format!("signal sample {t}")));
    }
    let k = thresholds.len();
    let mut raster = SpikeRaster::zeros(2 * k + usize::from(touch_enabled), signal.len());
    let top = thresholds[k - 1];
    for t in 1..signal.len() {
        let prev = f64::from(signal[t - 1]);
        let cur = f64::from(signal[t]);
        for (i, &theta) in thresholds.iter().enumerate() {
            if prev < theta && theta <= cur {
                raster.set(i, t, true);
            } else if prev >= theta && theta > cur {
                raster.set(k + i, t, true);
            }
        }
        if touch_enabled && prev >= top && cur >= top {
            raster.set(2 * k, t, true);
        }
    }
    Ok(raster)
}

/// Number of threshold comparisons `encode_channel` performs on a signal of
/// `timesteps` samples.
pub fn comparisons_per_channel(cfg: &EncoderConfig, timesteps: usize) -> u64 {
    (timesteps.saturating_sub(1) * 2 * cfg.levels) as u64
}

pub fn encode_multichannel(win: &EmgWindow, cfg: &EncoderConfig) -> Result<SpikeRaster> {
    cfg.validate()?;
    let thresholds = build_thresholds(cfg);
    let parts = (0..win.channels())
        .into_par_iter()
        .map(|c| encode_channel(win.channel(c), &thresholds, cfg.touch_enabled))
        .collect::<Result<Vec<_>>>()?;
    SpikeRaster::stack(&parts)
}
