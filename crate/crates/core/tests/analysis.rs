mod common;

use std::f64::consts::PI;

use proptest::prelude::*;
use rustfft::num_complex::Complex;
use rustfft::FftPlanner;

use common::{curve, diode, parallel, raster_area, series};
use pinchsim::analysis::{
    analyze_trajectory, find_pinch_points, lobe_areas, lobe_polygons, periodicity_residual,
    pinch_count, shoelace, spectrum, steady_loop, AnalysisSettings,
};
use pinchsim::circuits::Circuit;
use pinchsim::integrator::IntegratorSettings;
use pinchsim::nonlinearity::Nonlinearity;

fn pinches_of(c: &Circuit, spp: usize) -> usize {
    let traj = c.simulate(30, spp, &IntegratorSettings::default()).unwrap();
    analyze_trajectory(&traj, &AnalysisSettings::default())
        .unwrap()
        .pinch_count
}

#[test]
fn harmonic_amplitudes_match_fft() {
    let spp = 1024;
    let periods = 4;
    let traj = series(1.0, 0.1, diode(1.0, false))
        .simulate(24, spp, &IntegratorSettings::default())
        .unwrap();
    let spec = spectrum(&traj, 10, periods).unwrap();
    let range = traj.tail_range(periods).unwrap();
    let w = traj.current();
    let mut buf: Vec<Complex<f64>> = w[*range.start()..*range.end()]
        .iter()
        .map(|&v| Complex::new(v, 0.0))
        .collect();
    let n = buf.len();
    assert_eq!(n, periods * spp);
    FftPlanner::new().plan_fft_forward(n).process(&mut buf);
    let fundamental = spec.get(1).unwrap().amplitude;
    for h in &spec.harmonics[1..] {
        let fft = 2.0 * buf[h.order * periods].norm() / n as f64;
        assert!(
            (fft - h.amplitude).abs() <= 1e-9 * fundamental,
            "harmonic {}: dft {} fft {fft}",
            h.order,
            h.amplitude
        );
    }
    let dc = buf[0].re.abs() / n as f64;
    assert!((dc - spec.get(0).unwrap().amplitude).abs() <= 1e-9 * fundamental);
}

#[test]
fn anti_parallel_pinches_are_mirror_images() {
    let traj = series(0.0, 0.05, diode(1.0, true))
        .simulate(30, 1024, &IntegratorSettings::default())
        .unwrap();
    let report = analyze_trajectory(&traj, &AnalysisSettings::default()).unwrap();
    assert_eq!(report.pinch_count, 2);
    let [p, q] = [report.pinches[0].location, report.pinches[1].location];
    let scale = report.diameter;
    assert!((p[0] + q[0]).abs() < 1e-4 * scale, "{p:?} {q:?}");
    assert!((p[1] + q[1]).abs() < 1e-4 * scale, "{p:?} {q:?}");
    // Outer lobes are congruent.
    let mut areas: Vec<f64> = report.lobes.iter().map(|l| l.area).collect();
    areas.sort_by(f64::total_cmp);
    assert_eq!(areas.len(), 3);
    assert!((areas[0] - areas[1]).abs() < 1e-4 * areas[1], "{areas:?}");
}

#[test]
fn lobe_polygons_cover_the_raster_area() {
    let traj = series(0.0, 0.05, diode(1.0, true))
        .simulate(30, 1024, &IntegratorSettings::default())
        .unwrap();
    let a = AnalysisSettings::default();
    let lp = steady_loop(&traj, a.discard_periods, a.check_periods, a.periodicity_tolerance).unwrap();
    let pinches = find_pinch_points(&lp, a.cluster_radius, a.tangent_tolerance).unwrap();
    let polys = lobe_polygons(&lp, &pinches).unwrap();
    let lobes = lobe_areas(&lp, &pinches).unwrap();
    assert_eq!(polys.len(), lobes.len());
    for (poly, lobe) in polys.iter().zip(&lobes) {
        assert!((shoelace(poly).abs() - lobe.area).abs() < 1e-12 * lobe.area.max(1.0));
        let raster = raster_area(poly, 1024);
        assert!((raster - lobe.area).abs() < 0.01 * lobe.area, "{raster} vs {}", lobe.area);
    }
    let total: f64 = lobes.iter().map(|l| l.area).sum();
    let raster = raster_area(lp.vertices(), 2048);
    assert!((total - raster).abs() < 0.01 * raster, "{total} vs {raster}");
}

#[test]
fn ellipse_has_no_pinch_and_one_lobe() {
    let lp = curve(1000, |t| [2.0 * t.cos(), (t + 0.7).sin()]);
    assert!(find_pinch_points(&lp, 1e-3, 1e-2).unwrap().is_empty());
    let lobes = lobe_areas(&lp, &[]).unwrap();
    assert_eq!(lobes.len(), 1);
    let exact = PI * 2.0 * 0.7f64.cos();
    assert!((lobes[0].area - exact).abs() < 1e-4 * exact);
}

#[test]
fn linear_circuit_traces_an_ellipse() {
    assert_eq!(pinches_of(&series(1.0, 0.1, Nonlinearity::None), 1024), 0);
}

#[test]
fn series_loop_settles_within_twenty_periods() {
    let traj = series(1.0, 0.1, diode(1.0, false))
        .simulate(22, 1024, &IntegratorSettings::default())
        .unwrap();
    let residual = periodicity_residual(&traj, 1).unwrap();
    assert!(residual <= 1e-6, "residual {residual:e}");
}

#[test]
fn pinch_counts_survive_doubled_sampling() {
    let mut cases: Vec<(String, Circuit)> = Vec::new();
    for a in [0.5, 1.0, 2.0] {
        cases.push((format!("anti-parallel a={a}"), series(0.0, 0.1, diode(a, true))));
        cases.push((format!("parallel a={a}"), parallel(a, 0.1, 0.01)));
    }
    for w in [0.02, 0.05] {
        cases.push((format!("anti-parallel w={w}"), series(0.0, w, diode(1.0, true))));
    }
    for w in [0.05, 0.2] {
        cases.push((format!("parallel w={w}"), parallel(1.0, w, 0.01)));
    }
    let mut changed = Vec::new();
    for (label, c) in &cases {
        let (n1, n2) = (pinches_of(c, 1024), pinches_of(c, 2048));
        if n1 != n2 {
            changed.push(format!("{label}: {n1} -> {n2}"));
        }
    }
    assert!(changed.is_empty(), "{changed:?}");
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn lissajous_detection_matches_formula(
        (p, q) in prop::sample::select(vec![(1u64, 1u64), (1, 2), (2, 1), (1, 3), (3, 1), (2, 3), (3, 2), (1, 4), (3, 4)]),
        delta in 0.1f64..0.3,
    ) {
        let lp = curve(8192, |t| [(p as f64 * t + delta).sin(), (q as f64 * t).sin()]);
        let found = find_pinch_points(&lp, 1e-3, 1e-2).unwrap().len() as u64;
        prop_assert_eq!(found, pinch_count(p, q).unwrap());
    }

    #[test]
    fn affine_rescaling_keeps_pinches(su in 0.01f64..100.0, sw in 0.01f64..100.0, shift in -5.0f64..5.0) {
        let base = curve(2048, |t| [(2.0 * t).sin(), t.sin()]);
        let scaled = curve(2048, |t| [su * (2.0 * t).sin() + shift, sw * t.sin() - shift]);
        let a = find_pinch_points(&base, 1e-3, 1e-2).unwrap();
        let b = find_pinch_points(&scaled, 1e-3, 1e-2).unwrap();
        prop_assert_eq!(a.len(), b.len());
        let ta: f64 = lobe_areas(&base, &a).unwrap().iter().map(|l| l.area).sum();
        let tb: f64 = lobe_areas(&scaled, &b).unwrap().iter().map(|l| l.area).sum();
        prop_assert!((tb - ta * su * sw).abs() < 1e-9 * tb);
    }
}
