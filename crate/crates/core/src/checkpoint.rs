//! Binary network files.
//!
//! Layout, all little-endian: magic `RSNN`, `u32` version, `u8` precision
//! tag (0 = float, 1 = quant8), topology (`u32` n_in, m_lif, n_dexat, n_out,
//! `u8` self-recurrence flag), neuron parameters as `f64` with `u32`
//! refractory counts, then the weights. Float files store `w_in`, `w_rec`,
//! `w_out` row-major as `f64` followed by `b_out`. Quant8 files store, per
//! matrix, an `f64` scale and row-major `i8` values, then `u32` bits and the
//! `f64` biases.

use std::fs;
use std::path::Path;

use ndarray::Array2;

use crate::error::{Error, Result};
use crate::neuron::{DexatParams, LifParams, ReadoutParams};
use crate::rsnn::{Network, NeuronParams, Topology, Weights};
use crate::trainer::{QuantizedMatrix, QuantizedNetwork, QuantizedWeights};

const MAGIC: &[u8; 4] = b"RSNN";
pub const CHECKPOINT_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq)]
pub enum Checkpoint {
    Float(Network),
    Quant8(QuantizedNetwork),
}

impl Checkpoint {
    pub fn precision(&self) -> &'static str {
        match self {
            Checkpoint::Float(_) => "float",
            Checkpoint::Quant8(_) => "quant8",
        }
    }

    /// Float view; quantized weights are dequantized.
    pub fn network(&self) -> Network {
        match self {
            Checkpoint::Float(n) => n.clone(),
            Checkpoint::Quant8(q) => q.dequantize(),
        }
    }

    pub fn quantized(&self) -> QuantizedNetwork {
        match self {
            Checkpoint::Float(n) => QuantizedNetwork::from_network(n, 8),
            Checkpoint::Quant8(q) => q.clone(),
        }
    }
}

struct Writer(Vec<u8>);

impl Writer {
    fn u8(&mut self, v: u8) {
        self.0.push(v);
    }
    fn u32(&mut self, v: u32) {
        self.0.extend_from_slice(&v.to_le_bytes());
    }
    fn f64(&mut self, v: f64) {
        self.0.extend_from_slice(&v.to_le_bytes());
    }
    fn count(&mut self, v: usize) {
        self.u32(u32::try_from(v).expect("dimension exceeds u32"));
    }
    fn matrix(&mut self, m: &Array2<f64>) {
        for &v in m.iter() {
            self.f64(v);
        }
    }
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        let end = self
            .pos
            .checked_add(n)
            .filter(|&e| e <= self.bytes.len())
            .ok_or_else(|| Error::MalformedFile("checkpoint truncated".into()))?;
        let s = &self.bytes[self.pos..end];
        self.pos = end;
        Ok(s)
    }
    fn u8(&mut self) -> Result<u8> {
        Ok(self.take(1)?[0])
    }
    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }
    fn f64(&mut self) -> Result<f64> {
        Ok(f64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }
    fn count(&mut self) -> Result<usize> {
        Ok(self.u32()? as usize)
    }
    fn matrix(&mut self, rows: usize, cols: usize) -> Result<Array2<f64>> {
        let raw = self.take(rows * cols * 8)?;
        let v = raw
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
            .collect();
        Ok(Array2::from_shape_vec((rows, cols), v).expect("shape matches length"))
    }
    fn qmatrix(&mut self, rows: usize, cols: usize) -> Result<QuantizedMatrix> {
        let scale = self.f64()?;
        let raw = self.take(rows * cols)?;
        let v = raw.iter().map(|&b| b as i8).collect();
        Ok(QuantizedMatrix {
            values: Array2::from_shape_vec((rows, cols), v).expect("shape matches length"),
            scale,
        })
    }
}

fn write_header(w: &mut Writer, tag: u8, topo: &Topology, p: &NeuronParams) {
    w.0.extend_from_slice(MAGIC);
    w.u32(CHECKPOINT_VERSION);
    w.u8(tag);
    w.count(topo.n_in);
    w.count(topo.m_lif);
    w.count(topo.n_dexat);
    w.count(topo.n_out);
    w.u8(topo.self_recurrence_allowed as u8);
    w.f64(p.lif.tau_m);
    w.f64(p.lif.v_th);
    w.u32(p.lif.refractory_steps);
    let d = &p.dexat;
    for v in [d.tau_m, d.tau_a1, d.tau_a2, d.beta1, d.beta2, d.b0] {
        w.f64(v);
    }
    w.u32(d.refractory_steps);
    w.f64(p.readout.tau_out);
}

pub fn encode_checkpoint(ckpt: &Checkpoint) -> Vec<u8> {
    let mut w = Writer(Vec::new());
    match ckpt {
        Checkpoint::Float(net) => {
            write_header(&mut w, 0, &net.topology, &net.params);
            w.matrix(&net.weights.w_in);
            w.matrix(&net.weights.w_rec);
            w.matrix(&net.weights.w_out);
            for &b in &net.weights.b_out {
                w.f64(b);
            }
        }
        Checkpoint::Quant8(q) => {
            write_header(&mut w, 1, &q.topology, &q.params);
            for m in [&q.weights.w_in, &q.weights.w_rec, &q.weights.w_out] {
                w.f64(m.scale);
                w.0.extend(m.values.iter().map(|&v| v as u8));
            }
            w.u32(q.weights.bits);
            for &b in &q.weights.b_out {
                w.f64(b);
            }
        }
    }
    w.0
}

pub fn decode_checkpoint(bytes: &[u8]) -> Result<Checkpoint> {
    let mut r = Reader { bytes, pos: 0 };
    if r.take(4)? != MAGIC {
        return Err(Error::MalformedFile("not a network checkpoint".into()));
    }
    let version = r.u32()?;
    if version != CHECKPOINT_VERSION {
        return Err(Error::MalformedFile(format!("unsupported checkpoint version {version}")));
    }
    let tag = r.u8()?;
    let topology = Topology {
        n_in: r.count()?,
        m_lif: r.count()?,
        n_dexat: r.count()?,
        n_out: r.count()?,
        self_recurrence_allowed: r.u8()? != 0,
    };
    topology.validate()?;
    let lif = LifParams {
        tau_m: r.f64()?,
        v_th: r.f64()?,
        refractory_steps: r.u32()?,
    };
    let dexat = DexatParams {
        tau_m: r.f64()?,
        tau_a1: r.f64()?,
        tau_a2: r.f64()?,
        beta1: r.f64()?,
        beta2: r.f64()?,
        b0: r.f64()?,
        refractory_steps: r.u32()?,
    };
    let params = NeuronParams {
        lif,
        dexat,
        readout: ReadoutParams { tau_out: r.f64()? },
    };
    let (h, n_in, n_out) = (topology.hidden(), topology.n_in, topology.n_out);
    let ckpt = match tag {
        0 => {
            let w_in = r.matrix(h, n_in)?;
            let w_rec = r.matrix(h, h)?;
            let w_out = r.matrix(n_out, h)?;
            let b_out = (0..n_out).map(|_| r.f64()).collect::<Result<_>>()?;
            Checkpoint::Float(Network {
                topology,
                params,
                weights: Weights {
                    w_in,
                    w_rec,
                    w_out,
                    b_out,
                },
            })
        }
        1 => {
            let w_in = r.qmatrix(h, n_in)?;
            let w_rec = r.qmatrix(h, h)?;
            let w_out = r.qmatrix(n_out, h)?;
            let bits = r.u32()?;
            let b_out = (0..n_out).map(|_| r.f64()).collect::<Result<_>>()?;
            Checkpoint::Quant8(QuantizedNetwork {
                topology,
                params,
                weights: QuantizedWeights {
                    w_in,
                    w_rec,
                    w_out,
                    b_out,
                    bits,
                },
            })
        }
        other => return Err(Error::MalformedFile(format!("unknown precision tag {other}"))),
    };
    if r.pos != bytes.len() {
        return Err(Error::MalformedFile("trailing bytes after checkpoint".into()));
    }
    Ok(ckpt)
}

pub fn save_checkpoint(path: &Path, ckpt: &Checkpoint) -> Result<()> {
    fs::write(path, encode_checkpoint(ckpt))?;
    Ok(())
}

pub fn load_checkpoint(path: &Path) -> Result<Checkpoint> {
    decode_checkpoint(&fs::read(path)?)
}
