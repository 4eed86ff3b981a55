//! Loop geometry and harmonic analysis of steady-state trajectories.
//!
//! A [`LissajousLoop`] is one period of the excitation plotted against the
//! current. On it we find transversal self-intersections, split the curve
//! into lobes, and compare the geometric picture against the harmonic
//! content of the current.

use std::f64::consts::{FRAC_PI_2, PI};

use serde::{Deserialize, Serialize};

use crate::integrator::Trajectory;
use crate::{Error, Result};

pub const REPORT_FORMAT: &str = "pinchsim-report";
pub const REPORT_VERSION: u32 = 1;

/// Minimum number of points on a loop.
pub const MIN_LOOP_POINTS: usize = 256;

/// Harmonics weaker than this fraction of the fundamental carry no phase.
pub const HARMONIC_FLOOR: f64 = 1e-9;

/// Phase margins at or below this are treated as zero.
pub const PHASE_RESOLUTION: f64 = 1e-9;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AnalysisSettings {
    /// Periods dropped as transient before anything is measured.
    pub discard_periods: usize,
    /// Number of period-to-period comparisons in the steady-state check.
    pub check_periods: usize,
    /// Allowed period-to-period change, relative to the signal range.
    pub periodicity_tolerance: f64,
    /// Pinch clustering radius, relative to the loop diameter.
    pub cluster_radius: f64,
    /// Crossings with an acute tangent angle at or below this are touches.
    pub tangent_tolerance: f64,
    /// Periods fed to the harmonic analysis (at least 4).
    pub spectrum_periods: usize,
    pub max_harmonic: usize,
    /// Harmonic used for the phase criterion. Defaults to 2 for loops with
    /// one pinch, 3 for two, and otherwise the stronger of the two.
    pub pinch_order: Option<usize>,
}

impl Default for AnalysisSettings {
    fn default() -> Self {
        Self {
            discard_periods: 20,
            check_periods: 1,
            periodicity_tolerance: 1e-6,
            cluster_radius: 1e-3,
            tangent_tolerance: 1e-2,
            spectrum_periods: 4,
            max_harmonic: 10,
            pinch_order: None,
        }
    }
}

impl AnalysisSettings {
    pub fn validate(&self) -> Result<()> {
        let positive = |name: &str, v: f64| {
            if v.is_finite() && v > 0.0 {
                Ok(())
            } else {
                Err(Error::InvalidParameter(format!("{name} must be > 0, got {v}")))
            }
        };
        positive("periodicity_tolerance", self.periodicity_tolerance)?;
        positive("cluster_radius", self.cluster_radius)?;
        positive("tangent_tolerance", self.tangent_tolerance)?;
        if self.check_periods == 0 {
            return Err(Error::InvalidParameter("check_periods must be >= 1".into()));
        }
        if self.spectrum_periods < 4 {
            return Err(Error::InvalidParameter(format!(
                "spectrum_periods must be >= 4, got {}",
                self.spectrum_periods
            )));
        }
        if self.max_harmonic < 3 {
            return Err(Error::InvalidParameter("max_harmonic must be >= 3".into()));
        }
        if let Some(k) = self.pinch_order {
            if k != 2 && k != 3 {
                return Err(Error::InvalidParameter(format!(
                    "pinch_order must be 2 or 3, got {k}"
                )));
            }
        }
        Ok(())
    }
}

/// Closed polyline `(u, w)` over one period. The last point repeats the
/// first (within the closure tolerance the loop was built with).
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LissajousLoop {
    pub points: Vec<[f64; 2]>,
    /// Sample times, same length as `points`.
    pub times: Vec<f64>,
    pub period: f64,
}

impl LissajousLoop {
    /// Builds a loop from samples spanning exactly one period, endpoints
    /// included. `closure_tolerance` is relative to the loop diameter.
    pub fn new(points: Vec<[f64; 2]>, times: Vec<f64>, closure_tolerance: f64) -> Result<Self> {
        if points.len() != times.len() {
            return Err(Error::InvalidParameter(
                "loop points and times differ in length".into(),
            ));
        }
        if points.len() < MIN_LOOP_POINTS {
            return Err(Error::TooShort(format!(
                "loop has {} points, need at least {MIN_LOOP_POINTS}",
                points.len()
            )));
        }
        if points.iter().flatten().chain(&times).any(|v| !v.is_finite()) {
            return Err(Error::DegenerateLoop("non-finite sample".into()));
        }
        let period = times[times.len() - 1] - times[0];
        if !(period > 0.0) {
            return Err(Error::DegenerateLoop("times must increase".into()));
        }
        let lp = Self {
            points,
            times,
            period,
        };
        let d = lp.diameter();
        if d == 0.0 {
            return Err(Error::DegenerateLoop("zero diameter".into()));
        }
        let gap = lp.closure_gap();
        if gap > closure_tolerance * d {
            return Err(Error::DegenerateLoop(format!(
                "loop is not closed: gap {gap:e} exceeds {:e}",
                closure_tolerance * d
            )));
        }
        Ok(lp)
    }

    /// Distinct vertices, i.e. the points without the closing repeat.
    pub fn vertices(&self) -> &[[f64; 2]] {
        &self.points[..self.points.len() - 1]
    }

    pub fn closure_gap(&self) -> f64 {
        dist(self.points[0], self.points[self.points.len() - 1])
    }

    /// Axis-aligned bounding box `[u_min, u_max, w_min, w_max]`.
    pub fn bounds(&self) -> [f64; 4] {
        self.points.iter().fold(
            [f64::INFINITY, f64::NEG_INFINITY, f64::INFINITY, f64::NEG_INFINITY],
            |b, p| [b[0].min(p[0]), b[1].max(p[0]), b[2].min(p[1]), b[3].max(p[1])],
        )
    }

    /// Bounding-box diagonal.
    pub fn diameter(&self) -> f64 {
        let b = self.bounds();
        (b[1] - b[0]).hypot(b[3] - b[2])
    }

    pub fn u(&self) -> Vec<f64> {
        self.vertices().iter().map(|p| p[0]).collect()
    }

    pub fn w(&self) -> Vec<f64> {
        self.vertices().iter().map(|p| p[1]).collect()
    }

    /// Point at curve parameter `p`, measured in vertex indices (`0..n`).
    fn at(&self, p: f64) -> [f64; 2] {
        let v = self.vertices();
        let n = v.len();
        let i = (p.floor() as usize).min(n - 1);
        let s = p - i as f64;
        let a = v[i];
        let b = v[(i + 1) % n];
        [a[0] + s * (b[0] - a[0]), a[1] + s * (b[1] - a[1])]
    }

    /// Time of curve parameter `p` (vertex units), relative to the loop start.
    fn time_at(&self, p: f64) -> f64 {
        let n = self.vertices().len();
        let i = (p.floor() as usize).min(n - 1);
        let s = p - i as f64;
        let t0 = self.times[i];
        let t1 = self.times[i + 1];
        t0 + s * (t1 - t0) - self.times[0]
    }
}

/// Extracts the final period of `traj` as an (excitation, current) loop,
/// after checking that the last `check_periods` periods repeat.
pub fn steady_loop(
    traj: &Trajectory,
    discard_periods: usize,
    check_periods: usize,
    tolerance: f64,
) -> Result<LissajousLoop> {
    let needed = discard_periods + check_periods + 1;
    let have = traj.periods();
    if have < needed {
        return Err(Error::TooShort(format!(
            "need {needed} periods ({discard_periods} discarded, {check_periods} checked), trajectory has {have}"
        )));
    }
    let residual = periodicity_residual(traj, check_periods)?;
    if residual > tolerance {
        return Err(Error::NotConverged {
            residual,
            tolerance,
        });
    }
    let range = traj.tail_range(1)?;
    let w = traj.current();
    let points = range
        .clone()
        .map(|k| [traj.excitation[k], w[k]])
        .collect();
    let times = traj.t[range].to_vec();
    LissajousLoop::new(points, times, tolerance.max(1e-9))
}

/// Largest change of the loop coordinates between consecutive periods among
/// the last `check_periods + 1`, relative to each coordinate's range.
pub fn periodicity_residual(traj: &Trajectory, check_periods: usize) -> Result<f64> {
    let spp = traj.meta.samples_per_period;
    let range = traj.tail_range(check_periods + 1)?;
    let w = traj.current();
    let mut worst: f64 = 0.0;
    for signal in [&traj.excitation, &w] {
        let tail = &signal[range.clone()];
        let (lo, hi) = tail
            .iter()
            .fold((f64::INFINITY, f64::NEG_INFINITY), |(l, h), &v| (l.min(v), h.max(v)));
        let scale = if hi > lo { hi - lo } else { 1.0 };
        for k in spp..tail.len() {
            worst = worst.max((tail[k] - tail[k - spp]).abs() / scale);
        }
    }
    Ok(worst)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PinchPoint {
    pub location: [f64; 2],
    /// The two passes through the point, as fractions of the period in `[0, 1)`.
    pub parameters: [f64; 2],
    /// The same passes as times from the loop start.
    pub times: [f64; 2],
    /// Acute angle between the two tangents, radians.
    pub tangent_gap: f64,
    /// Number of distinct passes merged into this point (2 for a simple crossing).
    pub passes: usize,
}

#[derive(Clone, Copy, Debug)]
struct Crossing {
    point: [f64; 2],
    params: [f64; 2],
    gap: f64,
}

/// Finds all transversal self-intersections of the loop.
///
/// Geometry is done after scaling the bounding box to the unit square.
/// `cluster_radius` is relative to the diagonal of that square, and
/// crossings whose tangents differ by no more than `tangent_tolerance`
/// radians there count as touches and are dropped.
pub fn find_pinch_points(
    lp: &LissajousLoop,
    cluster_radius: f64,
    tangent_tolerance: f64,
) -> Result<Vec<PinchPoint>> {
    // Work in the unit box so angles and distances do not depend on the
    // units of either axis.
    let [u0, u1, w0, w1] = lp.bounds();
    let (du, dw) = (u1 - u0, w1 - w0);
    if !(du > 0.0 && dw > 0.0) {
        return Err(Error::DegenerateLoop("loop spans zero width or height".into()));
    }
    let v: Vec<[f64; 2]> = lp
        .vertices()
        .iter()
        .map(|p| [(p[0] - u0) / du, (p[1] - w0) / dw])
        .collect();
    let n = v.len();
    let crossings = segment_crossings(&v);
    let radius = cluster_radius * std::f64::consts::SQRT_2;

    // Union-find over crossings closer than the cluster radius.
    let mut parent: Vec<usize> = (0..crossings.len()).collect();
    fn root(parent: &mut [usize], mut i: usize) -> usize {
        while parent[i] != i {
            parent[i] = parent[parent[i]];
            i = parent[i];
        }
        i
    }
    for i in 0..crossings.len() {
        for j in i + 1..crossings.len() {
            if dist(crossings[i].point, crossings[j].point) <= radius {
                let (a, b) = (root(&mut parent, i), root(&mut parent, j));
                parent[a] = b;
            }
        }
    }
    let mut clusters: Vec<Vec<usize>> = Vec::new();
    let mut slot = vec![usize::MAX; crossings.len()];
    for i in 0..crossings.len() {
        let r = root(&mut parent, i);
        if slot[r] == usize::MAX {
            slot[r] = clusters.len();
            clusters.push(Vec::new());
        }
        clusters[slot[r]].push(i);
    }

    let mut pinches = Vec::new();
    for members in clusters {
        let best = *members
            .iter()
            .max_by(|&&a, &&b| crossings[a].gap.total_cmp(&crossings[b].gap))
            .expect("non-empty cluster");
        let mut c = crossings[best];
        c.params.sort_by(f64::total_cmp);
        if c.gap <= tangent_tolerance {
            continue;
        }
        let mut params: Vec<f64> = members
            .iter()
            .flat_map(|&m| crossings[m].params)
            .collect();
        let passes = distinct_passes(&mut params, n);
        if passes < 2 {
            continue;
        }
        let nf = n as f64;
        pinches.push(PinchPoint {
            location: lp.at(c.params[0]),
            parameters: [c.params[0] / nf, c.params[1] / nf],
            times: [lp.time_at(c.params[0]), lp.time_at(c.params[1])],
            tangent_gap: c.gap,
            passes,
        });
    }
    pinches.sort_by(|a, b| a.parameters[0].total_cmp(&b.parameters[0]));
    Ok(pinches)
}

/// Counts clusters of curve parameters separated by more than 2 samples,
/// cyclically.
fn distinct_passes(params: &mut [f64], n: usize) -> usize {
    params.sort_by(f64::total_cmp);
    let mut count = 1;
    for k in 1..params.len() {
        if params[k] - params[k - 1] > 2.0 {
            count += 1;
        }
    }
    if count > 1 && params[0] + n as f64 - params[params.len() - 1] <= 2.0 {
        count -= 1;
    }
    count
}

/// All intersections between segment pairs more than 2 samples apart.
fn segment_crossings(v: &[[f64; 2]]) -> Vec<Crossing> {
    let n = v.len();
    let seg = |i: usize| (v[i], v[(i + 1) % n]);
    let boxes: Vec<[f64; 4]> = (0..n)
        .map(|i| {
            let (a, b) = seg(i);
            [a[0].min(b[0]), a[0].max(b[0]), a[1].min(b[1]), a[1].max(b[1])]
        })
        .collect();
    // Sweep over segments ordered by their left edge.
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| boxes[a][0].total_cmp(&boxes[b][0]));
    let mut out = Vec::new();
    for (oi, &i) in order.iter().enumerate() {
        let bi = boxes[i];
        for &j in &order[oi + 1..] {
            let bj = boxes[j];
            if bj[0] > bi[1] {
                break;
            }
            if bj[3] < bi[2] || bj[2] > bi[3] {
                continue;
            }
            let d = i.abs_diff(j);
            if d.min(n - d) <= 2 {
                continue;
            }
            let (lo, hi) = if i < j { (i, j) } else { (j, i) };
            if let Some(c) = intersect(seg(lo), seg(hi)) {
                out.push(Crossing {
                    point: c.0,
                    params: [(lo as f64 + c.1) % n as f64, (hi as f64 + c.2) % n as f64],
                    gap: c.3,
                });
            }
        }
    }
    out
}

/// Intersection of segments `p + s r` and `q + t d` with `s, t` in `[0, 1]`,
/// padded slightly so a crossing through a shared vertex is not lost to
/// rounding; the resulting duplicates are merged by clustering. Returns the
/// point, `s`, `t` and the acute angle between the segments. Parallel
/// segments never intersect here.
fn intersect(a: ([f64; 2], [f64; 2]), b: ([f64; 2], [f64; 2])) -> Option<([f64; 2], f64, f64, f64)> {
    let (p, p1) = a;
    let (q, q1) = b;
    let r = [p1[0] - p[0], p1[1] - p[1]];
    let d = [q1[0] - q[0], q1[1] - q[1]];
    let denom = cross(r, d);
    if denom == 0.0 {
        return None;
    }
    let qp = [q[0] - p[0], q[1] - p[1]];
    let s = cross(qp, d) / denom;
    let t = cross(qp, r) / denom;
    const PAD: f64 = 1e-9;
    if !(-PAD..=1.0 + PAD).contains(&s) || !(-PAD..=1.0 + PAD).contains(&t) {
        return None;
    }
    let (s, t) = (s.clamp(0.0, 1.0), t.clamp(0.0, 1.0));
    let gap = denom.abs().atan2((r[0] * d[0] + r[1] * d[1]).abs());
    Some(([p[0] + s * r[0], p[1] + s * r[1]], s, t, gap))
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Lobe {
    /// Absolute enclosed area.
    pub area: f64,
    /// Shoelace area; positive for counter-clockwise traversal.
    pub signed_area: f64,
    /// Curve parameter (fraction of the period) where the lobe starts.
    pub start: f64,
    pub vertices: usize,
}

/// Splits the loop at its pinch points and measures each sub-loop.
///
/// The curve is walked once from its start. Whenever it returns to a pinch
/// point it has already visited on the current path, the closed stretch
/// since that visit is cut off as a lobe. What is left at the end closes
/// back on the start and forms the last lobe.
pub fn lobe_areas(lp: &LissajousLoop, pinches: &[PinchPoint]) -> Result<Vec<Lobe>> {
    Ok(split_lobes(lp, pinches)?
        .into_iter()
        .map(|(polygon, start)| lobe(&polygon, start))
        .collect())
}

/// The sub-loop polygons measured by [`lobe_areas`], in the same order.
pub fn lobe_polygons(lp: &LissajousLoop, pinches: &[PinchPoint]) -> Result<Vec<Vec<[f64; 2]>>> {
    Ok(split_lobes(lp, pinches)?.into_iter().map(|(p, _)| p).collect())
}

fn split_lobes(lp: &LissajousLoop, pinches: &[PinchPoint]) -> Result<Vec<(Vec<[f64; 2]>, f64)>> {
    let verts = lp.vertices();
    let n = verts.len();
    let nf = n as f64;
    let tol = 1e-6 * lp.diameter();
    let mut events: Vec<(f64, usize)> = Vec::with_capacity(2 * pinches.len());
    for (id, pinch) in pinches.iter().enumerate() {
        for &param in &pinch.parameters {
            if !(0.0..1.0).contains(&param) {
                return Err(Error::InconsistentPinches(format!(
                    "pinch {id} has parameter {param} outside [0, 1)"
                )));
            }
            let on_curve = lp.at(param * nf);
            if dist(on_curve, pinch.location) > tol {
                return Err(Error::InconsistentPinches(format!(
                    "pinch {id} at {:?} is not on the loop",
                    pinch.location
                )));
            }
            events.push((param * nf, id));
        }
    }
    events.sort_by(|a, b| a.0.total_cmp(&b.0));

    let mut path: Vec<[f64; 2]> = vec![verts[0]];
    let mut pos = 0.0;
    // (pinch id, path length once the pinch point was appended, parameter)
    let mut stack: Vec<(usize, usize, f64)> = Vec::new();
    let mut lobes = Vec::new();
    for &(param, id) in &events {
        append_arc(&mut path, verts, pos, param);
        path.push(pinches[id].location);
        pos = param;
        if let Some(j) = stack.iter().position(|e| e.0 == id) {
            let (_, len, start) = stack[j];
            lobes.push((path[len - 1..].to_vec(), start / nf));
            path.truncate(len);
            stack.truncate(j);
        }
        stack.push((id, path.len(), param));
    }
    append_arc(&mut path, verts, pos, nf);
    path.push(verts[0]);
    lobes.push((path, 0.0));
    lobes.sort_by(|a, b| a.1.total_cmp(&b.1));
    Ok(lobes)
}

/// Appends the vertices strictly after parameter `from` and up to `to`.
fn append_arc(path: &mut Vec<[f64; 2]>, verts: &[[f64; 2]], from: f64, to: f64) {
    let first = from.floor() as usize + 1;
    let last = (to.ceil() as usize).saturating_sub(1);
    for k in first..=last.min(verts.len() - 1) {
        path.push(verts[k]);
    }
}

fn lobe(polygon: &[[f64; 2]], start: f64) -> Lobe {
    let signed_area = shoelace(polygon);
    Lobe {
        area: signed_area.abs(),
        signed_area,
        start,
        vertices: polygon.len(),
    }
}

/// Signed area of a closed polygon; the closing edge is implied.
pub fn shoelace(polygon: &[[f64; 2]]) -> f64 {
    let n = polygon.len();
    if n < 3 {
        return 0.0;
    }
    // Shift to the first vertex to limit cancellation.
    let o = polygon[0];
    let mut sum = 0.0;
    for k in 0..n {
        let a = polygon[k];
        let b = polygon[(k + 1) % n];
        sum += (a[0] - o[0]) * (b[1] - o[1]) - (b[0] - o[0]) * (a[1] - o[1]);
    }
    0.5 * sum
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Harmonic {
    pub order: usize,
    pub amplitude: f64,
    /// Phase of `amplitude * sin(k theta + phase)`, where `theta` is the
    /// phase of the reference fundamental. In `(-pi, pi]`.
    pub phase: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct HarmonicSpectrum {
    /// Angular frequency of the fundamental.
    pub fundamental: f64,
    pub periods: usize,
    /// Orders `0..=max_harmonic`.
    pub harmonics: Vec<Harmonic>,
}

impl HarmonicSpectrum {
    pub fn get(&self, order: usize) -> Option<&Harmonic> {
        self.harmonics.get(order)
    }

    /// Largest even-order amplitude relative to the fundamental.
    pub fn even_ratio(&self) -> f64 {
        let fund = self.harmonics[1].amplitude;
        self.harmonics
            .iter()
            .filter(|h| h.order >= 2 && h.order % 2 == 0)
            .map(|h| h.amplitude / fund)
            .fold(0.0, f64::max)
    }
}

/// Harmonic content of the current over the last `periods` periods of
/// `traj`, phases referred to the excitation.
pub fn spectrum(traj: &Trajectory, max_harmonic: usize, periods: usize) -> Result<HarmonicSpectrum> {
    if periods < 4 {
        return Err(Error::Spectrum(format!(
            "need at least 4 whole periods, got {periods}"
        )));
    }
    let range = traj.tail_range(periods)?;
    // The endpoint repeats the first sample of the window; drop it.
    let window = *range.start()..*range.end();
    let w = traj.current();
    harmonic_spectrum(
        &w[window.clone()],
        &traj.excitation[window],
        periods,
        2.0 * PI / traj.meta.period,
        max_harmonic,
    )
}

/// Harmonic content of the loop current, one period, referred to the loop's
/// own excitation coordinate. Samples are resampled onto a uniform time grid
/// if their spacing is uneven.
pub fn loop_spectrum(lp: &LissajousLoop, max_harmonic: usize) -> Result<HarmonicSpectrum> {
    let n = lp.vertices().len();
    let (u, w) = if uniform_times(&lp.times) {
        (lp.u(), lp.w())
    } else {
        resample_uniform(lp)
    };
    debug_assert_eq!(u.len(), n);
    harmonic_spectrum(&w, &u, 1, 2.0 * PI / lp.period, max_harmonic)
}

/// DFT of `signal` over exactly `periods` periods, read at the harmonic
/// bins, with phases taken relative to the fundamental of `reference`.
pub fn harmonic_spectrum(
    signal: &[f64],
    reference: &[f64],
    periods: usize,
    fundamental: f64,
    max_harmonic: usize,
) -> Result<HarmonicSpectrum> {
    let n = signal.len();
    if n != reference.len() {
        return Err(Error::Spectrum("signal and reference differ in length".into()));
    }
    if periods == 0 || n % periods != 0 {
        return Err(Error::Spectrum(format!(
            "{n} samples do not hold a whole number of {periods} periods"
        )));
    }
    if 2 * max_harmonic * periods >= n {
        return Err(Error::Spectrum(format!(
            "harmonic {max_harmonic} is above the Nyquist limit for {n} samples"
        )));
    }
    let (ref_amp, ref_phase) = bin(reference, periods);
    if !(ref_amp > 0.0) {
        return Err(Error::Spectrum("reference has no fundamental".into()));
    }
    let harmonics = (0..=max_harmonic)
        .map(|k| {
            let (amplitude, raw) = bin(signal, k * periods);
            let phase = if k == 0 {
                0.0
            } else {
                wrap(raw - k as f64 * ref_phase)
            };
            Harmonic {
                order: k,
                amplitude,
                phase,
            }
        })
        .collect();
    Ok(HarmonicSpectrum {
        fundamental,
        periods,
        harmonics,
    })
}

/// Amplitude and sine phase of DFT bin `m`.
fn bin(x: &[f64], m: usize) -> (f64, f64) {
    let n = x.len();
    let (mut re, mut im) = (0.0, 0.0);
    for (j, &v) in x.iter().enumerate() {
        // Reduce the index first so the angle stays small and exact.
        let angle = -2.0 * PI * ((m * j) % n) as f64 / n as f64;
        re += v * angle.cos();
        im += v * angle.sin();
    }
    let nf = n as f64;
    if m == 0 {
        return (re.abs() / nf, 0.0);
    }
    // X = (N c / 2) exp(i (phi - pi/2)) for c sin(theta + phi).
    let amplitude = 2.0 * re.hypot(im) / nf;
    (amplitude, wrap(im.atan2(re) + FRAC_PI_2))
}

/// Wraps an angle into `(-pi, pi]`.
pub fn wrap(angle: f64) -> f64 {
    let mut a = angle.rem_euclid(2.0 * PI);
    if a > PI {
        a -= 2.0 * PI;
    }
    a
}

/// Folds an angle into `(-pi/2, pi/2]`, i.e. modulo `pi`.
fn fold_half(angle: f64) -> f64 {
    let mut a = angle.rem_euclid(PI);
    if a > FRAC_PI_2 {
        a -= PI;
    }
    a
}

fn uniform_times(t: &[f64]) -> bool {
    let n = t.len() - 1;
    let dt = (t[n] - t[0]) / n as f64;
    t.windows(2).all(|w| ((w[1] - w[0]) - dt).abs() <= 1e-6 * dt)
}

fn resample_uniform(lp: &LissajousLoop) -> (Vec<f64>, Vec<f64>) {
    let n = lp.vertices().len();
    let t0 = lp.times[0];
    let dt = lp.period / n as f64;
    let mut u = Vec::with_capacity(n);
    let mut w = Vec::with_capacity(n);
    let mut j = 0;
    for k in 0..n {
        let t = t0 + k as f64 * dt;
        while j + 2 < lp.times.len() && lp.times[j + 1] <= t {
            j += 1;
        }
        let (ta, tb) = (lp.times[j], lp.times[j + 1]);
        let s = if tb > ta { ((t - ta) / (tb - ta)).clamp(0.0, 1.0) } else { 0.0 };
        let (a, b) = (lp.points[j], lp.points[j + 1]);
        u.push(a[0] + s * (b[0] - a[0]));
        w.push(a[1] + s * (b[1] - a[1]));
    }
    (u, w)
}

/// Verdict on whether the pinch-generating harmonic can pinch the loop.
///
/// Shifting time so the excitation becomes even, `u = cos(tau)`, a current
/// harmonic `c sin(k tau + chi)` splits into an even part that only bends
/// the loop and an odd part `c cos(chi) sin(k tau)` that opens and crosses
/// it. `shift` is `chi` folded into `(-pi/2, pi/2]`: the harmonic can pinch
/// the loop while `|shift| < pi/2`, and the margin is the distance to that
/// bound.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PhaseVerdict {
    pub order: usize,
    pub shift: f64,
    pub margin: f64,
    pub observable: bool,
    /// `wrap(phi_k - k phi_1)`, kept for reference.
    pub relative_phase: f64,
    /// Odd-part amplitudes of the fundamental and of harmonic `order`.
    pub odd_parts: [f64; 2],
    /// Pinch count of the two-tone curve built from the fundamental and
    /// harmonic `order` alone.
    pub two_tone_pinches: usize,
}

pub fn phase_criterion(spec: &HarmonicSpectrum, order: usize) -> Result<PhaseVerdict> {
    if order != 2 && order != 3 {
        return Err(Error::PhaseUndefined(format!(
            "pinch harmonic must be 2 or 3, got {order}"
        )));
    }
    let fund = spec
        .get(1)
        .ok_or_else(|| Error::PhaseUndefined("spectrum has no fundamental".into()))?;
    let harm = spec
        .get(order)
        .ok_or_else(|| Error::PhaseUndefined(format!("spectrum stops below harmonic {order}")))?;
    if !(fund.amplitude > 0.0) {
        return Err(Error::PhaseUndefined("fundamental amplitude is zero".into()));
    }
    if harm.amplitude < HARMONIC_FLOOR * fund.amplitude {
        return Err(Error::PhaseUndefined(format!(
            "harmonic {order} amplitude {:e} is below {HARMONIC_FLOOR:e} of the fundamental",
            harm.amplitude
        )));
    }
    let chi = |h: &Harmonic| h.phase + h.order as f64 * FRAC_PI_2;
    let shift = fold_half(chi(harm));
    let margin = FRAC_PI_2 - shift.abs();
    let o1 = fund.amplitude * chi(fund).cos();
    let ok = harm.amplitude * chi(harm).cos();
    let two_tone_pinches = match order {
        _ if ok.abs() <= HARMONIC_FLOOR * fund.amplitude => 0,
        2 if o1.abs() < 2.0 * ok.abs() => 1,
        3 if ok != 0.0 && o1 / ok > -3.0 && o1 / ok < 1.0 => 2,
        _ => 0,
    };
    Ok(PhaseVerdict {
        order,
        shift,
        margin,
        observable: margin > PHASE_RESOLUTION,
        relative_phase: wrap(harm.phase - order as f64 * fund.phase),
        odd_parts: [o1, ok],
        two_tone_pinches,
    })
}

/// Self-intersections of the Lissajous figure `(sin(p t + delta), sin(q t))`
/// for coprime `p, q` and generic `delta`.
pub fn pinch_count(p: u64, q: u64) -> Result<u64> {
    if p == 0 || q == 0 || gcd(p, q) != 1 {
        return Err(Error::NotCoprime { p, q });
    }
    Ok(q * (p - 1) + p * (q - 1))
}

fn gcd(mut a: u64, mut b: u64) -> u64 {
    while b != 0 {
        (a, b) = (b, a % b);
    }
    a
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PinchReport {
    pub format: String,
    pub version: u32,
    pub pinch_count: usize,
    pub pinches: Vec<PinchPoint>,
    pub lobes: Vec<Lobe>,
    pub total_area: f64,
    pub spectrum: HarmonicSpectrum,
    pub phase: Option<PhaseVerdict>,
    /// Why `phase` is missing, when it is.
    pub phase_error: Option<String>,
    pub loop_points: usize,
    pub diameter: f64,
    pub periodicity_residual: Option<f64>,
    pub parameters: serde_json::Value,
}

impl PinchReport {
    /// One-paragraph summary for terminals.
    pub fn summary(&self) -> String {
        let mut s = format!(
            "pinch points: {}\nlobes: {} (total area {:.6e})\n",
            self.pinch_count,
            self.lobes.len(),
            self.total_area
        );
        for (k, p) in self.pinches.iter().enumerate() {
            s += &format!(
                "  pinch {k}: ({:.6}, {:.6}) tangent gap {:.4} rad\n",
                p.location[0], p.location[1], p.tangent_gap
            );
        }
        for (k, l) in self.lobes.iter().enumerate() {
            s += &format!("  lobe {k}: area {:.6e}\n", l.area);
        }
        let h = &self.spectrum.harmonics;
        s += &format!(
            "harmonics |1| {:.4e} |2|/|1| {:.3e} |3|/|1| {:.3e}\n",
            h[1].amplitude,
            h[2].amplitude / h[1].amplitude,
            h[3].amplitude / h[1].amplitude
        );
        match (&self.phase, &self.phase_error) {
            (Some(v), _) => {
                s += &format!(
                    "phase criterion (k={}): shift {:.4} rad, margin {:.4} rad, {}\n",
                    v.order,
                    v.shift,
                    v.margin,
                    if v.observable { "observable" } else { "not observable" }
                )
            }
            (None, Some(e)) => s += &format!("phase criterion: {e}\n"),
            _ => {}
        }
        s
    }
}

/// Full analysis of one simulated run.
pub fn analyze_trajectory(traj: &Trajectory, settings: &AnalysisSettings) -> Result<PinchReport> {
    settings.validate()?;
    let lp = steady_loop(
        traj,
        settings.discard_periods,
        settings.check_periods,
        settings.periodicity_tolerance,
    )?;
    let residual = periodicity_residual(traj, settings.check_periods)?;
    let available = traj.periods() - settings.discard_periods;
    let periods = settings.spectrum_periods.min(available);
    let spec = spectrum(traj, settings.max_harmonic, periods)?;
    let mut report = build_report(&lp, spec, settings)?;
    report.periodicity_residual = Some(residual);
    report.parameters = traj.meta.parameters.clone();
    Ok(report)
}

/// Analysis of a loop on its own, e.g. one read back from a file.
pub fn analyze_loop(lp: &LissajousLoop, settings: &AnalysisSettings) -> Result<PinchReport> {
    settings.validate()?;
    let spec = loop_spectrum(lp, settings.max_harmonic)?;
    build_report(lp, spec, settings)
}

fn build_report(
    lp: &LissajousLoop,
    spec: HarmonicSpectrum,
    settings: &AnalysisSettings,
) -> Result<PinchReport> {
    let pinches = find_pinch_points(lp, settings.cluster_radius, settings.tangent_tolerance)?;
    let lobes = lobe_areas(lp, &pinches)?;
    let total_area = lobes.iter().map(|l| l.area).sum();
    let order = settings.pinch_order.unwrap_or(match pinches.len() {
        1 => 2,
        2 => 3,
        _ => {
            let amp = |k| spec.get(k).map_or(0.0, |h| h.amplitude);
            if amp(3) > amp(2) {
                3
            } else {
                2
            }
        }
    });
    let (phase, phase_error) = match phase_criterion(&spec, order) {
        Ok(v) => (Some(v), None),
        Err(e) => (None, Some(e.to_string())),
    };
    Ok(PinchReport {
        format: REPORT_FORMAT.into(),
        version: REPORT_VERSION,
        pinch_count: pinches.len(),
        pinches,
        lobes,
        total_area,
        spectrum: spec,
        phase,
        phase_error,
        loop_points: lp.points.len(),
        diameter: lp.diameter(),
        periodicity_residual: None,
        parameters: serde_json::Value::Null,
    })
}

#[inline]
fn cross(a: [f64; 2], b: [f64; 2]) -> f64 {
    a[0] * b[1] - a[1] * b[0]
}

#[inline]
fn dist(a: [f64; 2], b: [f64; 2]) -> f64 {
    (a[0] - b[0]).hypot(a[1] - b[1])
}
