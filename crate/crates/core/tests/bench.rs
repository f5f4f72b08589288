mod common;

use emg_snn::bench::{
    count_ops, count_pipeline_ops, energy_proxy, profile_latency, Backend, OpCountReport,
    Runnable, Runner,
};
use emg_snn::encoder::{EncoderConfig, SpikeRaster};
use emg_snn::hw::HwConfig;
use emg_snn::rsnn::{init_network_scaled, Network, NeuronParams, Topology};
use emg_snn::signal::{synthetic_dataset, SynthConfig};
use proptest::prelude::*;

use common::random_raster;

fn net(self_rec: bool) -> Network {
    let topo = Topology {
        n_in: 72,
        m_lif: 5,
        n_dexat: 9,
        n_out: 3,
        self_recurrence_allowed: self_rec,
    };
    init_network_scaled(&topo, NeuronParams::default(), 21, 2.0).unwrap()
}

/// Brute-force recount: walk every spike and add its destinations.
fn recount(net: &Network, input: &SpikeRaster, hidden_counts: &[u32]) -> (u64, u64, u64) {
    let h = net.topology.hidden() as u64;
    let mut inp = 0;
    for n in 0..input.neurons() {
        for t in 0..input.timesteps() {
            if input.get(n, t) {
                inp += h;
            }
        }
    }
    let mut rec = 0;
    let mut out = 0;
    for &c in hidden_counts {
        for _ in 0..c {
            for _post in 0..net.topology.hidden() {
                rec += 1;
            }
            if !net.topology.self_recurrence_allowed {
                rec -= 1;
            }
            out += net.topology.n_out as u64;
        }
    }
    (inp, rec, out)
}

#[test]
fn counts_match_brute_force_on_both_backends() {
    for self_rec in [false, true] {
        let n = net(self_rec);
        for (seed, backend) in [(1, Backend::Float), (2, Backend::Hw(HwConfig::default()))] {
            let x = random_raster(72, 150, 0.08, seed);
            let r = count_ops(&n, &x, &backend).unwrap();
            let trace = Runner::new(&n, &backend).unwrap().forward(&x, false).unwrap();
            let (i, rec, o) = recount(&n, &x, &trace.spike_counts);
            assert_eq!(r.synaptic_input_ops, i);
            assert_eq!(r.synaptic_recurrent_ops, rec);
            assert_eq!(r.synaptic_readout_ops, o);
            assert_eq!(r.neuron_updates(), (5 + 9 + 3) * 150);
            assert_eq!(r.compartment_steps, (5 + 3 * 9) * 150);
        }
    }
}

#[test]
fn silent_network_costs_only_state_updates() {
    let n = net(false);
    let x = SpikeRaster::zeros(72, 40);
    for backend in [Backend::Float, Backend::Hw(HwConfig::default())] {
        let r = count_ops(&n, &x, &backend).unwrap();
        assert_eq!(r.synaptic_ops(), 0);
        assert_eq!(r.total_ops(), r.neuron_updates());
    }
}

#[test]
fn encoder_ops_follow_window_length() {
    let ds = synthetic_dataset(1, 4, &SynthConfig::default(), 100, 100).unwrap();
    let enc = EncoderConfig::default();
    let r = count_pipeline_ops(&net(false), &ds.windows()[0], &enc, &Backend::Float).unwrap();
    // 8 channels, 99 transitions, ONSET and OFFSET test per level.
    assert_eq!(r.encoder_ops, 8 * 99 * 2 * 4);
}

#[test]
fn latency_profile_reports_every_phase() {
    let ds = synthetic_dataset(2, 4, &SynthConfig::default(), 100, 100).unwrap();
    let enc = EncoderConfig::default();
    let runner = Runner::new(&net(false), &Backend::Float).unwrap();
    let s = profile_latency(&runner, ds.windows(), &enc, Runnable::Full, 4, 3).unwrap();
    assert_eq!(s.total.samples_s.len(), 3);
    assert!(s.encode.is_some() && s.forward.is_some() && s.classify.is_some());
    assert_eq!(s.csv_rows().lines().count(), 4);
    let f = profile_latency(&runner, ds.windows(), &enc, Runnable::Forward, 4, 2).unwrap();
    assert!(f.encode.is_none() && f.classify.is_none());
    assert!(profile_latency(&runner, &[], &enc, Runnable::Full, 1, 1).is_err());
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(32))]

    #[test]
    fn doubling_the_input_doubles_state_updates(t in 5usize..60, seed in 0u64..1000) {
        let n = net(false);
        let x = random_raster(72, t, 0.05, seed);
        let twice = SpikeRaster::zeros(72, 2 * t);
        let a = count_ops(&n, &x, &Backend::Float).unwrap();
        let b = count_ops(&n, &twice, &Backend::Float).unwrap();
        prop_assert_eq!(b.neuron_updates(), 2 * a.neuron_updates());
        prop_assert_eq!(b.compartment_steps, 2 * a.compartment_steps);
        prop_assert_eq!(b.timesteps, 2 * a.timesteps);
    }

    #[test]
    fn energy_is_a_dot_product(enc in 0u64..10_000, syn in 0u64..10_000, c in 0.0f64..1e-9) {
        let report = OpCountReport {
            encoder_ops: enc,
            synaptic_input_ops: syn,
            lif_steps: 7,
            ..OpCountReport::default()
        };
        let costs = [("encoder", c), ("neuron", 2.0 * c), ("synaptic", 3.0 * c)]
            .into_iter()
            .map(|(k, v)| (k.to_string(), v))
            .collect();
        let e = energy_proxy(&report, &costs).unwrap();
        let expected = enc as f64 * c + 7.0 * 2.0 * c + syn as f64 * 3.0 * c;
        prop_assert!((e.joules - expected).abs() <= 1e-12 * expected.max(1e-30) + 1e-30);
    }
}
