#![allow(dead_code)]

use std::f64::consts::PI;
use std::path::PathBuf;

use pinchsim::analysis::LissajousLoop;
use pinchsim::circuits::{Circuit, Excitation, ParallelConfig, SeriesConfig};
use pinchsim::nonlinearity::Nonlinearity;

pub fn repo_path(rel: &str) -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("../..").join(rel)
}

pub fn diode(a: f64, anti: bool) -> Nonlinearity {
    if anti {
        Nonlinearity::AntiParallel { slope: a }
    } else {
        Nonlinearity::SingleDiode { slope: a }
    }
}

/// Series resonator with `B = 2`, `b = 0.2`.
pub fn series(offset: f64, omega_n: f64, nonlinearity: Nonlinearity) -> Circuit {
    Circuit::Series(SeriesConfig {
        excitation: Excitation {
            offset,
            amplitude: 2.0,
            frequency: omega_n,
        },
        time_constant_ratio: 0.2,
        nonlinearity,
    })
}

/// Parallel resonator with `A = 1`, `B = 2`, `b = 0.2`, single diode.
pub fn parallel(a: f64, omega_n: f64, epsilon: f64) -> Circuit {
    Circuit::Parallel(ParallelConfig {
        excitation: Excitation {
            offset: 1.0,
            amplitude: 2.0,
            frequency: omega_n,
        },
        time_constant_ratio: 0.2,
        parasitic_ratio: epsilon,
        nonlinearity: Nonlinearity::SingleDiode { slope: a },
    })
}

/// Closed parametric curve sampled at `n` points over `[0, 2 pi)`.
pub fn curve(n: usize, f: impl Fn(f64) -> [f64; 2]) -> LissajousLoop {
    let points: Vec<[f64; 2]> = (0..=n)
        .map(|k| f(2.0 * PI * (k % n) as f64 / n as f64))
        .collect();
    let times = (0..=n).map(|k| 2.0 * PI * k as f64 / n as f64).collect();
    LissajousLoop::new(points, times, 1e-9).unwrap()
}

/// Area covered by a closed polyline under the even-odd rule, counted on a
/// `cells x cells` pixel grid over its bounding box.
pub fn raster_area(polygon: &[[f64; 2]], cells: usize) -> f64 {
    let (mut x0, mut x1, mut y0, mut y1) = (f64::INFINITY, f64::NEG_INFINITY, f64::INFINITY, f64::NEG_INFINITY);
    for p in polygon {
        x0 = x0.min(p[0]);
        x1 = x1.max(p[0]);
        y0 = y0.min(p[1]);
        y1 = y1.max(p[1]);
    }
    let (dx, dy) = ((x1 - x0) / cells as f64, (y1 - y0) / cells as f64);
    let n = polygon.len();
    let mut inside = 0usize;
    let mut xs = Vec::new();
    for row in 0..cells {
        let y = y0 + (row as f64 + 0.5) * dy;
        xs.clear();
        for k in 0..n {
            let (a, b) = (polygon[k], polygon[(k + 1) % n]);
            if (a[1] <= y) != (b[1] <= y) {
                xs.push(a[0] + (y - a[1]) / (b[1] - a[1]) * (b[0] - a[0]));
            }
        }
        xs.sort_by(f64::total_cmp);
        for pair in xs.chunks_exact(2) {
            // Pixel centres x0 + (i + 0.5) dx inside [pair[0], pair[1]].
            let first = ((pair[0] - x0) / dx - 0.5).ceil().max(0.0) as i64;
            let last = (((pair[1] - x0) / dx - 0.5).floor() as i64).min(cells as i64 - 1);
            if last >= first {
                inside += (last - first + 1) as usize;
            }
        }
    }
    inside as f64 * dx * dy
}

/// Largest `|w(t + T/2) + w(t)|` and `|u(t + T/2) + u(t)|` over the loop,
/// relative to each coordinate's range. Needs an even sample count.
pub fn odd_symmetry_error(lp: &LissajousLoop) -> f64 {
    let v = lp.vertices();
    let n = v.len();
    assert!(n % 2 == 0);
    let mut worst: f64 = 0.0;
    for c in 0..2 {
        let (lo, hi) = v
            .iter()
            .fold((f64::INFINITY, f64::NEG_INFINITY), |(l, h), p| (l.min(p[c]), h.max(p[c])));
        for k in 0..n {
            worst = worst.max((v[k][c] + v[(k + n / 2) % n][c]).abs() / (hi - lo));
        }
    }
    worst
}
