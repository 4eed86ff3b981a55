mod common;

use std::f64::consts::PI;

use common::{diode, parallel, series};
use pinchsim::circuits::{
    recover_device_state, Circuit, DiodeArrangement, DimensionalConfig, Topology,
};
use pinchsim::integrator::IntegratorSettings;
use pinchsim::nonlinearity::Nonlinearity;

fn max_rel_diff(a: &[f64], b: &[f64]) -> f64 {
    let (lo, hi) = b
        .iter()
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(l, h), &v| (l.min(v), h.max(v)));
    a.iter()
        .zip(b)
        .map(|(x, y)| (x - y).abs() / (hi - lo))
        .fold(0.0, f64::max)
}

#[test]
fn dimensional_parallel_maps_onto_normalized() {
    let mut d = DimensionalConfig::experimental_series(300.0);
    d.topology = Topology::Parallel;
    d.parasitic_capacitance = 0.01 * d.capacitance;
    d.diode = DiodeArrangement::AntiParallel;
    let n = d.normalize().unwrap();
    let settings = IntegratorSettings::default();
    let si = d.simulate(6, 512, &settings).unwrap();
    let nd = n.circuit.simulate(6, 512, &settings).unwrap();
    assert_eq!(si.dim, 3);
    let scales = [d.v_gamma, d.v_gamma / d.resistance, d.v_gamma];
    for (c, s) in scales.iter().enumerate() {
        let scaled: Vec<f64> = si.channel(c).iter().map(|v| v / s).collect();
        let err = max_rel_diff(&scaled, &nd.channel(c));
        assert!(err < 1e-6, "channel {c}: {err:e}");
    }
}

#[test]
fn dimensional_series_maps_onto_normalized() {
    for hz in [100.0, 1500.0] {
        let d = DimensionalConfig::experimental_series(hz);
        let n = d.normalize().unwrap();
        let settings = IntegratorSettings::default();
        let si = d.simulate(8, 512, &settings).unwrap();
        let nd = n.circuit.simulate(8, 512, &settings).unwrap();
        let x: Vec<f64> = si.channel(0).iter().map(|v| v / d.v_gamma).collect();
        let y: Vec<f64> = si.channel(1).iter().map(|i| i * d.resistance / d.v_gamma).collect();
        assert!(max_rel_diff(&x, &nd.channel(0)) < 1e-6, "{hz} Hz x");
        assert!(max_rel_diff(&y, &nd.channel(1)) < 1e-6, "{hz} Hz y");
        let g: Vec<f64> = si.excitation.iter().map(|v| v / d.v_gamma).collect();
        assert!(max_rel_diff(&g, &nd.excitation) < 1e-12, "{hz} Hz g");
    }
}

#[test]
fn resonance_identity_gives_unit_frequency() {
    let mut d = DimensionalConfig::experimental_series(1.0);
    let n = d.normalize().unwrap();
    d.omega = n.resonance * n.resonance / n.bandwidth;
    let f = d.normalize().unwrap().circuit.excitation().frequency;
    assert!((f - 1.0).abs() < 1e-12);
}

/// Max-norm distance over one period between the full model and the
/// reduced model, both started on the reduced model's periodic orbit.
fn epsilon_distance(eps: f64) -> f64 {
    let settings = IntegratorSettings::default();
    let spp = 512;
    let reduced = parallel(1.0, 0.1, 0.0).simulate(30, spp, &settings).unwrap();
    let last = reduced.state(reduced.len() - 1).to_vec();
    let nl = Nonlinearity::SingleDiode { slope: 1.0 };
    let z = recover_device_state(&nl, last[0], last[1]).unwrap().z;
    let full = parallel(1.0, 0.1, eps)
        .simulate_from(&[last[0], last[1], z], 3, spp, &settings)
        .unwrap();
    let y_full = full.current();
    let y_red = reduced.current();
    let tail_f = full.tail_range(1).unwrap();
    let tail_r = reduced.tail_range(1).unwrap();
    tail_f
        .zip(tail_r)
        .map(|(i, j)| (y_full[i] - y_red[j]).abs())
        .fold(0.0, f64::max)
}

#[test]
fn full_parallel_model_converges_to_reduced() {
    let d: Vec<f64> = [1e-2, 1e-3, 1e-4].iter().map(|&e| epsilon_distance(e)).collect();
    assert!(d[0] > d[1] && d[1] > d[2], "distances {d:?}");
    assert!(d[2] < 0.01, "distances {d:?}");
}

#[test]
fn doubling_samples_leaves_linear_states_unchanged() {
    let c = series(1.0, 0.1, Nonlinearity::None);
    let settings = IntegratorSettings::default();
    let coarse = c.simulate(5, 256, &settings).unwrap();
    let fine = c.simulate(5, 512, &settings).unwrap();
    for ch in 0..2 {
        let a = coarse.channel(ch);
        let b: Vec<f64> = fine.channel(ch).into_iter().step_by(2).collect();
        assert_eq!(a.len(), b.len());
        let worst = a.iter().zip(&b).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max);
        assert!(worst <= 1e-7, "channel {ch}: {worst:e}");
    }
}

#[test]
fn simulation_is_deterministic() {
    let c = parallel(2.0, 0.2, 0.01);
    let settings = IntegratorSettings::default();
    let a = c.simulate(3, 256, &settings).unwrap();
    let b = c.simulate(3, 256, &settings).unwrap();
    assert_eq!(a.states, b.states);
    assert_eq!(a.meta.stats, b.meta.stats);
}

#[test]
fn excitation_examples() {
    let c = series(1.0, 0.5, diode(1.0, false));
    let e = c.excitation();
    assert_eq!(e.value(0.0), 1.0);
    assert!((e.value(PI / 0.5) - 1.0).abs() < 1e-12);
    let c = series(0.0, 0.5, diode(1.0, true));
    assert!((c.excitation().value(PI / 2.0 / 0.5) - 2.0).abs() < 1e-15);
}

#[test]
fn start_state_length_is_checked() {
    let c: Circuit = parallel(1.0, 0.1, 0.0);
    assert!(c
        .simulate_from(&[0.0, 0.0, 0.0], 2, 128, &IntegratorSettings::default())
        .is_err());
}
