//! Symmetric per-matrix weight quantization.

use ndarray::Array2;

use crate::rsnn::{Network, NeuronParams, Topology, Weights};

/// Signed integer matrix with one positive scale: `value ≈ q · scale`.
#[derive(Debug, Clone, PartialEq)]
pub struct QuantizedMatrix {
    pub values: Array2<i8>,
    pub scale: f64,
}

impl QuantizedMatrix {
    pub fn dequantize(&self) -> Array2<f64> {
        self.values.mapv(|q| f64::from(q) * self.scale)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct QuantizedWeights {
    pub w_in: QuantizedMatrix,
    pub w_rec: QuantizedMatrix,
    pub w_out: QuantizedMatrix,
    /// Readout biases stay in floating point.
    pub b_out: Vec<f64>,
    pub bits: u32,
}

impl QuantizedWeights {
    pub fn dequantize(&self) -> Weights {
        Weights {
            w_in: self.w_in.dequantize(),
            w_rec: self.w_rec.dequantize(),
            w_out: self.w_out.dequantize(),
            b_out: self.b_out.clone(),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct QuantizedNetwork {
    pub topology: Topology,
    pub params: NeuronParams,
    pub weights: QuantizedWeights,
}

impl QuantizedNetwork {
    pub fn from_network(net: &Network, bits: u32) -> Self {
        Self {
            topology: net.topology.clone(),
            params: net.params.clone(),
            weights: quantize_weights(&net.weights, bits),
        }
    }

    /// Float network carrying the dequantized weights.
    pub fn dequantize(&self) -> Network {
        Network {
            topology: self.topology.clone(),
            params: self.params.clone(),
            weights: self.weights.dequantize(),
        }
    }
}

fn q_max(bits: u32) -> f64 {
    assert!((2..=8).contains(&bits), "quantization supports 2..=8 bits");
    f64::from((1i32 << (bits - 1)) - 1)
}

/// `scale = max|w| / q_max` (1 for an all-zero matrix) and
/// `q = round_half_away_from_zero(w · q_max / max|w|)` clamped to
/// `[-q_max, q_max]`; with 8 bits that range is `[-127, 127]`.
pub fn quantize_matrix(w: &Array2<f64>, bits: u32) -> QuantizedMatrix {
    let q_max = q_max(bits);
    let max_abs = w.iter().fold(0.0f64, |m, v| m.max(v.abs()));
    if max_abs == 0.0 {
        return QuantizedMatrix {
            values: Array2::zeros(w.raw_dim()),
            scale: 1.0,
        };
    }
    let values = w.mapv(|v| (v * q_max / max_abs).round().clamp(-q_max, q_max) as i8);
    QuantizedMatrix {
        values,
        scale: max_abs / q_max,
    }
}

pub fn quantize_weights(w: &Weights, bits: u32) -> QuantizedWeights {
    QuantizedWeights {
        w_in: quantize_matrix(&w.w_in, bits),
        w_rec: quantize_matrix(&w.w_rec, bits),
        w_out: quantize_matrix(&w.w_out, bits),
        b_out: w.b_out.clone(),
        bits,
    }
}

/// Quantize then dequantize every synaptic matrix.
pub fn fake_quantize(w: &Weights, bits: u32) -> Weights {
    quantize_weights(w, bits).dequantize()
}
