//! Multi-channel EMG recordings: file I/O, a seeded synthetic generator,
//! fixed-length windowing and a recording-level stratified split.
//!
//! Two on-disk formats are supported. The CSV form starts with a header line
//! `# channels=8 rate=200 label=<int|none> subject=<str>` followed by one row
//! per timestep and one column per channel. The `rawbin` form is the magic
//! `EMG1`, then `u32` channels, `u32` rate, `u32` length, `i32` label
//! (`-1` for none), then channel-major `f32` samples, all little-endian.

use std::collections::HashMap;
use std::fmt;
use std::fs;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;
use std::sync::Arc;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const NUM_CLASSES: usize = 3;

/// Roshambo gesture classes.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Gesture {
    Rock = 0,
    Paper = 1,
    Scissors = 2,
}

impl Gesture {
    pub const ALL: [Gesture; NUM_CLASSES] = [Gesture::Rock, Gesture::Paper, Gesture::Scissors];

    pub fn from_index(index: usize) -> Option<Gesture> {
        Self::ALL.get(index).copied()
    }

    pub fn index(self) -> usize {
        self as usize
    }
}

impl fmt::Display for Gesture {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let name = match self {
            Gesture::Rock => "rock",
            Gesture::Paper => "paper",
            Gesture::Scissors => "scissors",
        };
        f.write_str(name)
    }
}

/// A labeled multi-channel voltage recording.
#[derive(Debug, Clone, PartialEq)]
pub struct EmgRecording {
    sample_rate_hz: u32,
    samples: Vec<Vec<f32>>,
    pub label: Option<Gesture>,
    pub subject_id: Option<String>,
}

impl EmgRecording {
    /// Builds a recording from per-channel sample vectors.
    ///
    /// All channels must have the same non-zero length and every sample must
    /// be finite.
    pub fn new(
        samples: Vec<Vec<f32>>,
        sample_rate_hz: u32,
        label: Option<Gesture>,
        subject_id: Option<String>,
    ) -> Result<Self> {
        let len = samples.first().map(Vec::len).unwrap_or(0);
        if samples.is_empty() || len == 0 {
            return Err(Error::MalformedFile("recording has no samples".into()));
        }
        if samples.iter().any(|ch| ch.len() != len) {
            return Err(Error::MalformedFile("channels differ in length".into()));
        }
        if let Some((c, t)) = samples.iter().enumerate().find_map(|(c, ch)| {
            ch.iter().position(|v| !v.is_finite()).map(|t| (c, t))
        }) {
            return Err(Error::NonFiniteValue(format!("channel {c}, sample {t}")));
        }
        if sample_rate_hz == 0 {
            return Err(Error::MalformedFile("sample rate must be positive".into()));
        }
        Ok(Self {
            sample_rate_hz,
            samples,
            label,
            subject_id,
        })
    }

    pub fn channels(&self) -> usize {
        self.samples.len()
    }

    pub fn len(&self) -> usize {
        self.samples[0].len()
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    pub fn sample_rate_hz(&self) -> u32 {
        self.sample_rate_hz
    }

    pub fn channel(&self, c: usize) -> &[f32] {
        &self.samples[c]
    }

    pub fn max_abs(&self) -> f32 {
        self.samples
            .iter()
            .flatten()
            .fold(0.0f32, |m, v| m.max(v.abs()))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum RecordingFormat {
    Csv,
    Rawbin,
}

impl RecordingFormat {
    /// Guesses the format from a file extension (`.bin`/`.rawbin` → rawbin).
    pub fn from_path(path: &Path) -> RecordingFormat {
        match path.extension().and_then(|e| e.to_str()) {
            Some("bin") | Some("rawbin") => RecordingFormat::Rawbin,
            _ => RecordingFormat::Csv,
        }
    }
}

const RAWBIN_MAGIC: &[u8; 4] = b"EMG1";

fn parse_label(text: &str) -> Result<Option<Gesture>> {
    if text == "none" {
        return Ok(None);
    }
    text.parse::<usize>()
        .ok()
        .and_then(Gesture::from_index)
        .map(Some)
        .ok_or_else(|| Error::UnknownLabel(text.to_string()))
}

fn label_code(label: Option<Gesture>) -> i32 {
    label.map(|g| g as i32).unwrap_or(-1)
}

pub fn load_recording(path: &Path, format: RecordingFormat) -> Result<EmgRecording> {
    match format {
        RecordingFormat::Csv => read_csv(BufReader::new(fs::File::open(path)?)),
        RecordingFormat::Rawbin => read_rawbin(&fs::read(path)?),
    }
}

pub fn write_recording(rec: &EmgRecording, path: &Path, format: RecordingFormat) -> Result<()> {
    let mut out = BufWriter::new(fs::File::create(path)?);
    match format {
        RecordingFormat::Csv => write_csv(rec, &mut out)?,
        RecordingFormat::Rawbin => out.write_all(&encode_rawbin(rec))?,
    }
    out.flush()?;
    Ok(())
}

pub fn write_csv<W: Write>(rec: &EmgRecording, out: &mut W) -> Result<()> {
    let label = rec
        .label
        .map(|g| g.index().to_string())
        .unwrap_or_else(|| "none".into());
    writeln!(
        out,
        "# channels={} rate={} label={} subject={}",
        rec.channels(),
        rec.sample_rate_hz,
        label,
        rec.subject_id.as_deref().unwrap_or("")
    )?;
    let mut line = String::new();
    for t in 0..rec.len() {
        line.clear();
        for c in 0..rec.channels() {
            if c > 0 {
                line.push(',');
            }
            // Display of f32 is the shortest string that parses back exactly.
            line.push_str(&rec.samples[c][t].to_string());
        }
        writeln!(out, "{line}")?;
    }
    Ok(())
}

pub fn read_csv<R: BufRead>(input: R) -> Result<EmgRecording> {
    let mut lines = input.lines();
    let header = lines
        .next()
        .transpose()?
        .ok_or_else(|| Error::MalformedFile("empty file".into()))?;
    let header = header
        .strip_prefix('#')
        .ok_or_else(|| Error::MalformedFile("missing `#` header line".into()))?
        .trim();

    let mut channels = None;
    let mut rate = None;
    let mut label = None;
    let mut subject = None;
    let mut rest = header;
    while !rest.is_empty() {
        let (key, after) = rest
            .split_once('=')
            .ok_or_else(|| Error::MalformedFile(format!("bad header field `{rest}`")))?;
        let key = key.trim();
        if key == "subject" {
            // Subject runs to the end of the line.
            subject = Some(after.trim().to_string());
            break;
        }
        let (value, next) = after.split_once(' ').unwrap_or((after, ""));
        match key {
            "channels" => channels = value.parse::<usize>().ok(),
            "rate" => rate = value.parse::<u32>().ok(),
            "label" => label = Some(parse_label(value)?),
            other => return Err(Error::MalformedFile(format!("unknown header key `{other}`"))),
        }
        rest = next.trim_start();
    }
    let channels = channels
        .filter(|&c| c > 0)
        .ok_or_else(|| Error::MalformedFile("header lacks a valid `channels`".into()))?;
    let rate = rate.ok_or_else(|| Error::MalformedFile("header lacks a valid `rate`".into()))?;
    let label = label.ok_or_else(|| Error::MalformedFile("header lacks `label`".into()))?;
    let subject = subject.filter(|s| !s.is_empty());

    let mut samples = vec![Vec::new(); channels];
    for (row, line) in lines.enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let fields: Vec<&str> = line.split(',').collect();
        if fields.len() != channels {
            return Err(Error::MalformedFile(format!(
                "row {row} has {} columns, header says {channels}",
                fields.len()
            )));
        }
        for (c, field) in fields.iter().enumerate() {
            let v: f32 = field.trim().parse().map_err(|_| {
                Error::MalformedFile(format!("row {row}, column {c}: `{field}` is not a number"))
            })?;
            if !v.is_finite() {
                return Err(Error::NonFiniteValue(format!("row {row}, column {c}")));
            }
            samples[c].push(v);
        }
    }
    EmgRecording::new(samples, rate, label, subject)
}

pub fn encode_rawbin(rec: &EmgRecording) -> Vec<u8> {
    let mut buf = Vec::with_capacity(20 + 4 * rec.channels() * rec.len());
    buf.extend_from_slice(RAWBIN_MAGIC);
    buf.extend_from_slice(&(rec.channels() as u32).to_le_bytes());
    buf.extend_from_slice(&rec.sample_rate_hz.to_le_bytes());
    buf.extend_from_slice(&(rec.len() as u32).to_le_bytes());
    buf.extend_from_slice(&label_code(rec.label).to_le_bytes());
    for ch in &rec.samples {
        for v in ch {
            buf.extend_from_slice(&v.to_le_bytes());
        }
    }
    buf
}

pub fn read_rawbin(bytes: &[u8]) -> Result<EmgRecording> {
    let word = |i: usize| -> Result<[u8; 4]> {
        bytes
            .get(i..i + 4)
            .map(|b| [b[0], b[1], b[2], b[3]])
            .ok_or_else(|| Error::MalformedFile("truncated rawbin header".into()))
    };
    if &word(0)? != RAWBIN_MAGIC {
        return Err(Error::MalformedFile("bad rawbin magic".into()));
    }
    let channels = u32::from_le_bytes(word(4)?) as usize;
    let rate = u32::from_le_bytes(word(8)?);
    let len = u32::from_le_bytes(word(12)?) as usize;
    let label = match i32::from_le_bytes(word(16)?) {
        -1 => None,
        code => Some(
            usize::try_from(code)
                .ok()
                .and_then(Gesture::from_index)
                .ok_or_else(|| Error::UnknownLabel(code.to_string()))?,
        ),
    };
    let payload = &bytes[20..];
    if payload.len() != 4 * channels * len {
        return Err(Error::MalformedFile(format!(
            "rawbin payload has {} bytes, header implies {}",
            payload.len(),
            4 * channels * len
        )));
    }
    let mut values = payload
        .chunks_exact(4)
        .map(|b| f32::from_le_bytes([b[0], b[1], b[2], b[3]]));
    let samples = (0..channels)
        .map(|_| values.by_ref().take(len).collect())
        .collect();
    EmgRecording::new(samples, rate, label, None)
}

/// Parameters of the synthetic Roshambo stand-in.
///
/// Each class has a per-channel amplitude profile. A channel's signal is an
/// AR(1) carrier with unit stationary variance, multiplied by the profile
/// amplitude and by a burst envelope (raised-cosine bursts over a resting
/// floor), plus white noise, then clamped to `[-clamp_volts, clamp_volts]`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SynthConfig {
    pub channels: usize,
    pub sample_rate_hz: u32,
    /// Samples per recording.
    pub length: usize,
    /// `class_profiles[class][channel]`: burst amplitude in volts.
    pub class_profiles: Vec<Vec<f32>>,
    /// Minimum pairwise Euclidean distance required between class profiles.
    pub class_margin: f32,
    /// Relative per-recording jitter of each channel amplitude.
    pub amplitude_jitter: f32,
    pub bursts: usize,
    /// Burst length in samples.
    pub burst_len: usize,
    /// Envelope value between bursts.
    pub rest_level: f32,
    pub carrier_pole: f32,
    pub noise_std: f32,
    pub clamp_volts: f32,
}

impl Default for SynthConfig {
    fn default() -> Self {
        Self {
            channels: 8,
            sample_rate_hz: 200,
            length: 200,
            class_profiles: vec![
                vec![1.8, 1.6, 0.3, 0.3, 1.2, 0.3, 0.3, 0.3],
                vec![0.3, 0.3, 1.8, 1.6, 0.3, 1.2, 0.3, 0.3],
                vec![0.3, 0.3, 0.3, 0.3, 1.6, 0.3, 1.8, 1.6],
            ],
            class_margin: 1.0,
            amplitude_jitter: 0.15,
            bursts: 3,
            burst_len: 50,
            rest_level: 0.25,
            carrier_pole: 0.6,
            noise_std: 0.05,
            clamp_volts: 2.0,
        }
    }
}

impl SynthConfig {
    /// Smallest pairwise Euclidean distance between class amplitude profiles.
    pub fn min_profile_distance(&self) -> f32 {
        let mut best = f32::INFINITY;
        for a in 0..self.class_profiles.len() {
            for b in a + 1..self.class_profiles.len() {
                let d = self.class_profiles[a]
                    .iter()
                    .zip(&self.class_profiles[b])
                    .map(|(x, y)| (x - y) * (x - y))
                    .sum::<f32>()
                    .sqrt();
                best = best.min(d);
            }
        }
        best
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |msg: &str| Err(Error::InvalidArgument(format!("synth config: {msg}")));
        if self.channels == 0 || self.length < 2 || self.sample_rate_hz == 0 {
            return bad("channels, length and rate must be positive (length >= 2)");
        }
        if self.class_profiles.len() != NUM_CLASSES
            || self.class_profiles.iter().any(|p| p.len() != self.channels)
        {
            return bad("class_profiles must be 3 x channels");
        }
        if !(self.clamp_volts > 0.0) || !(self.carrier_pole.abs() < 1.0) {
            return bad("clamp_volts must be positive and |carrier_pole| < 1");
        }
        if self.min_profile_distance() < self.class_margin {
            return bad("class profiles closer than class_margin");
        }
        Ok(())
    }
}

/// Generates one deterministic recording for `class`.
pub fn generate_synthetic(class: Gesture, seed: u64, cfg: &SynthConfig) -> Result<EmgRecording> {
    cfg.validate()?;
    let mix = seed
        .wrapping_mul(0x9E37_79B9_7F4A_7C15)
        .wrapping_add((class.index() as u64 + 1).wrapping_mul(0xD1B5_4A32_D192_ED03));
    let mut rng = ChaCha8Rng::seed_from_u64(mix);

    let len = cfg.length;
    let mut envelope = vec![cfg.rest_level; len];
    let burst_len = cfg.burst_len.clamp(1, len);
    for _ in 0..cfg.bursts {
        let start = rng.random_range(0..=len - burst_len);
        for i in 0..burst_len {
            let phase = std::f32::consts::PI * (i as f32 + 0.5) / burst_len as f32;
            let e = &mut envelope[start + i];
            *e = e.max(phase.sin());
        }
    }

    let innovation = (1.0 - cfg.carrier_pole * cfg.carrier_pole).sqrt();
    let samples = cfg.class_profiles[class.index()]
        .iter()
        .map(|&amp| {
            let jitter: f32 = rng.sample(StandardNormal);
            let amp = amp * (1.0 + cfg.amplitude_jitter * jitter).max(0.0);
            let mut carrier: f32 = rng.sample(StandardNormal);
            envelope
                .iter()
                .map(|&env| {
                    let z: f32 = rng.sample(StandardNormal);
                    carrier = cfg.carrier_pole * carrier + innovation * z;
                    let noise: f32 = rng.sample(StandardNormal);
                    (amp * env * carrier + cfg.noise_std * noise)
                        .clamp(-cfg.clamp_volts, cfg.clamp_volts)
                })
                .collect()
        })
        .collect();
    EmgRecording::new(
        samples,
        cfg.sample_rate_hz,
        Some(class),
        Some(format!("synth-{seed}")),
    )
}

/// A fixed-length segment of a shared recording.
#[derive(Debug, Clone)]
pub struct EmgWindow {
    recording: Arc<EmgRecording>,
    start: usize,
    len: usize,
    pub label: Option<Gesture>,
}

impl EmgWindow {
    pub fn new(recording: Arc<EmgRecording>, start: usize, len: usize) -> Result<Self> {
        if len < 2 {
            return Err(Error::InvalidArgument("window length must be >= 2".into()));
        }
        if start + len > recording.len() {
            return Err(Error::WindowTooLong {
                length: start + len,
                available: recording.len(),
            });
        }
        let label = recording.label;
        Ok(Self {
            recording,
            start,
            len,
            label,
        })
    }

    pub fn start(&self) -> usize {
        self.start
    }

    pub fn len(&self) -> usize {
        self.len
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    pub fn channels(&self) -> usize {
        self.recording.channels()
    }

    pub fn channel(&self, c: usize) -> &[f32] {
        &self.recording.channel(c)[self.start..self.start + self.len]
    }

    pub fn recording(&self) -> &Arc<EmgRecording> {
        &self.recording
    }
}

/// Cuts `rec` into windows of `length` samples every `stride` samples. A
/// trailing partial window is dropped.
pub fn window(rec: &Arc<EmgRecording>, length: usize, stride: usize) -> Result<Vec<EmgWindow>> {
    if length < 2 || stride == 0 {
        return Err(Error::InvalidArgument(
            "window length must be >= 2 and stride >= 1".into(),
        ));
    }
    if length > rec.len() {
        return Err(Error::WindowTooLong {
            length,
            available: rec.len(),
        });
    }
    (0..=rec.len() - length)
        .step_by(stride)
        .map(|start| EmgWindow::new(Arc::clone(rec), start, length))
        .collect()
}

/// Labeled windows plus their class histogram.
#[derive(Debug, Clone, Default)]
pub struct Dataset {
    windows: Vec<EmgWindow>,
    histogram: [usize; NUM_CLASSES],
}

impl Dataset {
    pub fn new(windows: Vec<EmgWindow>) -> Result<Self> {
        let mut histogram = [0; NUM_CLASSES];
        for (i, w) in windows.iter().enumerate() {
            let label = w
                .label
                .ok_or_else(|| Error::InvalidArgument(format!("window {i} is unlabeled")))?;
            histogram[label.index()] += 1;
        }
        Ok(Self { windows, histogram })
    }

    pub fn windows(&self) -> &[EmgWindow] {
        &self.windows
    }

    pub fn len(&self) -> usize {
        self.windows.len()
    }

    pub fn is_empty(&self) -> bool {
        self.windows.is_empty()
    }

    pub fn class_histogram(&self) -> [usize; NUM_CLASSES] {
        self.histogram
    }
}

/// Generates `per_class` recordings of every class (recording `i` of a class
/// uses seed `seed + i`) and windows each one.
pub fn synthetic_dataset(
    per_class: usize,
    seed: u64,
    cfg: &SynthConfig,
    window_len: usize,
    stride: usize,
) -> Result<Dataset> {
    let mut windows = Vec::new();
    for class in Gesture::ALL {
        for i in 0..per_class as u64 {
            let rec = Arc::new(generate_synthetic(class, seed.wrapping_add(i), cfg)?);
            windows.extend(window(&rec, window_len, stride)?);
        }
    }
    Dataset::new(windows)
}

/// Stratified split at recording granularity.
///
/// Per class, source recordings are shuffled with `seed` and moved into the
/// test split until it holds `round(test_fraction * class_windows)` windows
/// (at least one recording, never all of them).
pub fn split_dataset(ds: &Dataset, test_fraction: f64, seed: u64) -> Result<(Dataset, Dataset)> {
    if !(test_fraction > 0.0 && test_fraction < 1.0) {
        return Err(Error::InvalidArgument(
            "test_fraction must lie strictly between 0 and 1".into(),
        ));
    }
    // Group window indices per class by source recording, in first-seen order.
    let mut groups: Vec<Vec<Vec<usize>>> = vec![Vec::new(); NUM_CLASSES];
    let mut slot: HashMap<(usize, *const EmgRecording), usize> = HashMap::new();
    for (i, w) in ds.windows.iter().enumerate() {
        let class = w.label.expect("dataset windows are labeled").index();
        let key = (class, Arc::as_ptr(&w.recording));
        let idx = *slot.entry(key).or_insert_with(|| {
            groups[class].push(Vec::new());
            groups[class].len() - 1
        });
        groups[class][idx].push(i);
    }

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut in_test = vec![false; ds.len()];
    for (class, class_groups) in groups.iter_mut().enumerate() {
        let total: usize = class_groups.iter().map(Vec::len).sum();
        if total < 2 || class_groups.len() < 2 {
            return Err(Error::EmptyClass(class));
        }
        class_groups.shuffle(&mut rng);
        let target = ((test_fraction * total as f64).round() as usize).clamp(1, total - 1);
        let mut taken = 0;
        for group in class_groups.iter().take(class_groups.len() - 1) {
            if taken >= target {
                break;
            }
            taken += group.len();
            for &i in group {
                in_test[i] = true;
            }
        }
    }

    let (mut train, mut test) = (Vec::new(), Vec::new());
    for (w, t) in ds.windows.iter().zip(in_test) {
        if t {
            test.push(w.clone());
        } else {
            train.push(w.clone());
        }
    }
    Ok((Dataset::new(train)?, Dataset::new(test)?))
}
