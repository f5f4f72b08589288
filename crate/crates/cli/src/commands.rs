use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};
use std::sync::Arc;

use anyhow::{Context, Result};
use emg_snn::bench::{
    count_pipeline_ops, energy_proxy, profile_latency, Backend, LatencyStats, OpCountReport,
    Runner,
};
use emg_snn::checkpoint::{load_checkpoint, save_checkpoint, Checkpoint};
use emg_snn::encoder::encode_multichannel;
use emg_snn::hw::{validity_region, HwNetwork};
use emg_snn::rsnn::{classify, init_network, ClassifyRule, Network};
use emg_snn::signal::{
    generate_synthetic, load_recording, split_dataset, synthetic_dataset, window, write_csv,
    Dataset, EmgWindow, Gesture, RecordingFormat,
};
use emg_snn::trainer::{encode_dataset, evaluate, evaluate_with, train, Evaluation, Sample};
use serde::Serialize;

use crate::config::RunConfig;
use crate::run_dir::RunDir;

#[derive(Debug, Clone, Copy, PartialEq, Eq, clap::ValueEnum, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum EvalBackend {
    Float,
    Quant,
    Hw,
}

impl EvalBackend {
    fn name(self) -> &'static str {
        match self {
            EvalBackend::Float => "float",
            EvalBackend::Quant => "quant",
            EvalBackend::Hw => "hw",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, clap::ValueEnum)]
pub enum BenchBackend {
    Float,
    Hw,
}

fn load_dir(dir: &Path, window_len: usize, stride: usize) -> Result<Dataset> {
    let mut paths: Vec<PathBuf> = fs::read_dir(dir)
        .with_context(|| format!("cannot read data directory {}", dir.display()))?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| {
            matches!(
                p.extension().and_then(|e| e.to_str()),
                Some("csv" | "bin" | "rawbin")
            )
        })
        .collect();
    paths.sort();
    let mut windows = Vec::new();
    for p in &paths {
        let rec = load_recording(p, RecordingFormat::from_path(p))
            .with_context(|| format!("loading {}", p.display()))?;
        windows.extend(window(&Arc::new(rec), window_len, stride)?);
    }
    Ok(Dataset::new(windows)?)
}

fn load_dataset(cfg: &RunConfig) -> Result<Dataset> {
    let d = &cfg.data;
    match &d.dir {
        Some(dir) => load_dir(dir, d.window_len, d.stride),
        None => Ok(synthetic_dataset(
            d.per_class,
            cfg.seed,
            &d.synth,
            d.window_len,
            d.stride,
        )?),
    }
}

fn split(cfg: &RunConfig) -> Result<(Vec<Sample>, Vec<Sample>)> {
    let ds = load_dataset(cfg)?;
    let (tr, te) = split_dataset(&ds, cfg.data.test_fraction, cfg.seed)?;
    Ok((encode_dataset(&tr, &cfg.encoder)?, encode_dataset(&te, &cfg.encoder)?))
}

fn json(value: &impl Serialize) -> Result<Vec<u8>> {
    let mut v = serde_json::to_vec_pretty(value)?;
    v.push(b'\n');
    Ok(v)
}

pub fn synth(cfg: &RunConfig, out: &Path) -> Result<()> {
    let mut dir = RunDir::create(out, "synth", cfg)?;
    for class in Gesture::ALL {
        for i in 0..cfg.data.per_class {
            let seed = cfg.seed.wrapping_add(i as u64);
            let rec = generate_synthetic(class, seed, &cfg.data.synth)?;
            let mut bytes = Vec::new();
            write_csv(&rec, &mut bytes)?;
            dir.write(&format!("recordings/{class}_{i:04}.csv"), &bytes)?;
        }
    }
    println!(
        "wrote {} recordings to {}",
        cfg.data.per_class * Gesture::ALL.len(),
        out.join("recordings").display()
    );
    dir.finish()
}

pub fn encode(cfg: &RunConfig, out: &Path, input: &Path, start: usize, len: Option<usize>) -> Result<()> {
    let rec = load_recording(input, RecordingFormat::from_path(input))
        .with_context(|| format!("loading {}", input.display()))?;
    let len = len.unwrap_or_else(|| rec.len().saturating_sub(start));
    let win = EmgWindow::new(Arc::new(rec), start, len)?;
    let raster = encode_multichannel(&win, &cfg.encoder)?;
    let mut dir = RunDir::create(out, "encode", cfg)?;
    dir.write("raster.txt", raster.to_text().as_bytes())?;
    println!(
        "{} rows x {} steps, {} spikes",
        raster.neurons(),
        raster.timesteps(),
        raster.count()
    );
    dir.finish()
}

#[derive(Serialize)]
struct TrainSummary {
    hidden_neurons: usize,
    train_windows: usize,
    test_windows: usize,
    best_epoch: usize,
    best_test_acc: f64,
    final_test_acc: f64,
}

pub fn train_cmd(cfg: &RunConfig, out: &Path) -> Result<()> {
    let (train_set, test_set) = split(cfg)?;
    let net = init_network(&cfg.topology, cfg.neuron.clone(), cfg.seed)?;
    println!(
        "training {} LIF + {} DEXAT on {} windows ({} test)",
        cfg.topology.m_lif,
        cfg.topology.n_dexat,
        train_set.len(),
        test_set.len()
    );
    let outcome = train(&net, &train_set, &test_set, &cfg.train, |r| {
        println!(
            "epoch {:>4}  loss {:.4}  train {:.2}%  test {:.2}%",
            r.epoch,
            r.loss,
            100.0 * r.train_acc,
            100.0 * r.test_acc
        );
    })?;

    let mut dir = RunDir::create(out, "train", cfg)?;
    let mut history = Vec::new();
    outcome.history.write_csv(&mut history)?;
    dir.write("history.csv", &history)?;
    save_checkpoint(&dir.path("final.bin"), &Checkpoint::Float(outcome.network.clone()))?;
    dir.register("final.bin")?;
    save_checkpoint(&dir.path("best.bin"), &Checkpoint::Float(outcome.best_network.clone()))?;
    dir.register("best.bin")?;
    let quant = Checkpoint::Float(outcome.network.clone()).quantized();
    save_checkpoint(&dir.path("final_quant8.bin"), &Checkpoint::Quant8(quant))?;
    dir.register("final_quant8.bin")?;

    let last = outcome.history.epochs.last().map_or(0.0, |r| r.test_acc);
    let summary = TrainSummary {
        hidden_neurons: cfg.topology.hidden(),
        train_windows: train_set.len(),
        test_windows: test_set.len(),
        best_epoch: outcome.best_epoch,
        best_test_acc: outcome.history.best().map_or(0.0, |r| r.test_acc),
        final_test_acc: last,
    };
    dir.write("summary.json", &json(&summary)?)?;
    println!(
        "best test accuracy {:.2}% at epoch {}",
        100.0 * summary.best_test_acc,
        summary.best_epoch
    );
    dir.finish()
}

#[derive(Serialize)]
struct EvalReport {
    backend: EvalBackend,
    windows: usize,
    accuracy: f64,
    confusion: Vec<Vec<usize>>,
    float_accuracy: f64,
    /// Fraction of windows where the backend predicts the float class.
    agreement_with_float: f64,
    hw_saturations: Option<u64>,
}

pub fn eval(
    cfg: &RunConfig,
    out: &Path,
    checkpoint: &Path,
    backend: EvalBackend,
    data: Option<&Path>,
) -> Result<()> {
    let ckpt = load_checkpoint(checkpoint)
        .with_context(|| format!("loading {}", checkpoint.display()))?;
    let float_net = ckpt.network();
    // Map before touching data so unmappable parameters fail fast.
    let hw_net = match backend {
        EvalBackend::Hw => Some(HwNetwork::new(&ckpt.quantized(), &cfg.hw)?),
        _ => None,
    };
    let samples = match data {
        Some(dir) => encode_dataset(
            &load_dir(dir, cfg.data.window_len, cfg.data.stride)?,
            &cfg.encoder,
        )?,
        None => split(cfg)?.1,
    };

    let reference = evaluate(&float_net, &samples)?;
    let mut saturations = None;
    let result: Evaluation = match backend {
        EvalBackend::Float => reference.clone(),
        EvalBackend::Quant => evaluate(&ckpt.quantized().dequantize(), &samples)?,
        EvalBackend::Hw => {
            let hw = hw_net.expect("mapped above");
            let sat = std::sync::atomic::AtomicU64::new(0);
            let e = evaluate_with(&samples, |raster| {
                let (trace, stats) = hw.run(raster, false)?;
                sat.fetch_add(stats.saturations, std::sync::atomic::Ordering::Relaxed);
                Ok(classify(&trace, ClassifyRule::MeanReadout).class)
            })?;
            saturations = Some(sat.into_inner());
            e
        }
    };
    let agree = result
        .predictions
        .iter()
        .zip(&reference.predictions)
        .filter(|(a, b)| a == b)
        .count();
    let report = EvalReport {
        backend,
        windows: samples.len(),
        accuracy: result.accuracy,
        confusion: result.confusion.iter().map(|r| r.to_vec()).collect(),
        float_accuracy: reference.accuracy,
        agreement_with_float: agree as f64 / samples.len() as f64,
        hw_saturations: saturations,
    };

    let mut dir = RunDir::create(out, "eval", cfg)?;
    dir.write("eval.json", &json(&report)?)?;
    println!(
        "{} accuracy {:.2}% on {} windows; float {:.2}%, agreement {:.2}%",
        backend.name(),
        100.0 * report.accuracy,
        report.windows,
        100.0 * report.float_accuracy,
        100.0 * report.agreement_with_float
    );
    for (c, row) in report.confusion.iter().enumerate() {
        println!("  {:<9} {:?}", Gesture::ALL[c].to_string(), row);
    }
    dir.finish()
}

pub fn bench(
    cfg: &RunConfig,
    out: &Path,
    checkpoint: Option<&Path>,
    backend: BenchBackend,
) -> Result<()> {
    let net: Network = match checkpoint {
        Some(p) => load_checkpoint(p)
            .with_context(|| format!("loading {}", p.display()))?
            .network(),
        None => init_network(&cfg.topology, cfg.neuron.clone(), cfg.seed)?,
    };
    let backend = match backend {
        BenchBackend::Float => Backend::Float,
        BenchBackend::Hw => Backend::Hw(cfg.hw.clone()),
    };
    let runner = Runner::new(&net, &backend)?;
    let ds = load_dataset(cfg)?;
    let windows = ds.windows();
    let b = &cfg.bench;

    let mut latency = format!("{}\n", LatencyStats::CSV_HEADER);
    for &batch in &b.batch_sizes {
        let stats = profile_latency(&runner, windows, &cfg.encoder, b.runnable, batch, b.repeats)?;
        println!(
            "{} batch {:>3}: {:.3} ms +- {:.3} ms over {} repeats",
            backend.name(),
            batch,
            1e3 * stats.total.mean_s,
            1e3 * stats.total.std_s,
            b.repeats
        );
        latency.push_str(&stats.csv_rows());
    }

    let mut ops = format!("window,{}\n", OpCountReport::CSV_HEADER);
    let mut total = OpCountReport::default();
    let counted = windows.iter().take(b.count_windows.max(1));
    let mut n = 0;
    for (i, w) in counted.enumerate() {
        let r = count_pipeline_ops(&net, w, &cfg.encoder, &backend)?;
        let _ = writeln!(ops, "{i},{}", r.csv_row());
        total.accumulate(&r);
        n += 1;
    }
    let energy = energy_proxy(&total, &b.energy_coefficients)?;
    let energy_text = format!(
        "{} inferences on the {} backend\n{}per inference: {:.3e} J\n",
        n,
        backend.name(),
        energy.render(),
        energy.joules / n as f64
    );

    let mut dir = RunDir::create(out, "bench", cfg)?;
    dir.write("latency.csv", latency.as_bytes())?;
    dir.write("ops.csv", ops.as_bytes())?;
    dir.write("ops.txt", total.render().as_bytes())?;
    dir.write("energy.txt", energy_text.as_bytes())?;
    print!("{energy_text}");
    dir.finish()
}

pub fn maphw(cfg: &RunConfig, out: &Path) -> Result<()> {
    let report = validity_region(&cfg.mapping, cfg.hw.vth_fixed);
    let mut dir = RunDir::create(out, "maphw", cfg)?;
    dir.write("mapping.csv", report.to_csv().as_bytes())?;
    dir.write("mapping.txt", report.render().as_bytes())?;
    println!(
        "{} of {} cells mappable at vth_fixed = {}",
        report.valid_count(),
        report.cells.len(),
        cfg.hw.vth_fixed
    );
    dir.finish()
}
