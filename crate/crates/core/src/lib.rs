//! EMG gesture classification with a hybrid LIF/DEXAT recurrent spiking
//! network.
//!
//! The pipeline runs from raw multi-channel voltage recordings
//! ([`signal`]) through a threshold-crossing spike encoder ([`encoder`]) into
//! a recurrent spiking network ([`rsnn`], built from the units in
//! [`neuron`]). Networks are trained with surrogate-gradient BPTT and
//! quantized to 8-bit weights ([`trainer`]), then emulated on a fixed-point
//! three-compartment neuron model ([`hw`]). [`bench`] counts operations and
//! times each phase; [`checkpoint`] holds the binary network file format.

pub mod bench;
pub mod checkpoint;
pub mod encoder;
pub mod error;
pub mod hw;
pub mod neuron;
pub mod rsnn;
pub mod signal;
pub mod trainer;

pub use error::{Error, GammaSlot, Result};
