//! Two-device logic gates driving a capacitive load.
//!
//! Each device is a pinched loop reduced to two single-valued `i(v)` tables,
//! one for rising and one for falling device voltage. The output node obeys
//! `C dV/dt = i1(V1 - V) + i2(V2 - V)` (plus an optional pull resistor).
//! OR uses both devices forward, AND uses both reversed.

use std::f64::consts::PI;
use std::io::Write as _;
use std::path::{Path, PathBuf};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::analysis::{find_pinch_points, LissajousLoop, PinchPoint};
use crate::integrator::{solve_on_grid, IntegratorSettings, OdeSystem, StepControl, UniformGrid};
use crate::{Error, Result};

/// Device voltage may leave the table range by this fraction of the range.
pub const EXTRAPOLATION_LIMIT: f64 = 0.1;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Polarity {
    Forward,
    /// Device flipped end for end: `(v, i) -> (-v, -i)`.
    Reversed,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Branch {
    Rising,
    Falling,
}

impl Branch {
    fn flip(self) -> Self {
        match self {
            Branch::Rising => Branch::Falling,
            Branch::Falling => Branch::Rising,
        }
    }
}

/// Units of one loop coordinate step: `v = u * volts`, `i = w * amps`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct DeviceScale {
    pub volts: f64,
    pub amps: f64,
}

impl DeviceScale {
    /// Loop already in volts and amperes.
    pub const SI: DeviceScale = DeviceScale {
        volts: 1.0,
        amps: 1.0,
    };

    /// The resonator map `u = v / v_gamma`, `w = R i / v_gamma`.
    pub fn resonator(v_gamma: f64, resistance: f64) -> Self {
        Self {
            volts: v_gamma,
            amps: v_gamma / resistance,
        }
    }
}

/// Where the device origin sits on the source loop.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Centre {
    /// Keep the loop coordinates as they are.
    Origin,
    /// Shift the pinch point nearest the origin to `(0, 0)`, so the device
    /// carries no current at zero bias.
    Pinch,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExtractOptions {
    pub grid_points: usize,
    pub centre: Centre,
    /// Allowed branch miss at a pinch point, relative to the current range.
    pub pinch_tolerance: f64,
    pub cluster_radius: f64,
    pub tangent_tolerance: f64,
}

impl Default for ExtractOptions {
    fn default() -> Self {
        Self {
            grid_points: 257,
            centre: Centre::Pinch,
            pinch_tolerance: 1e-3,
            cluster_radius: 1e-3,
            tangent_tolerance: 1e-2,
        }
    }
}

/// Piecewise-linear two-branch device on a uniform voltage grid.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LoopDeviceModel {
    pub v_min: f64,
    pub v_max: f64,
    /// Currents on `v_min + k (v_max - v_min) / (n - 1)`, non-decreasing.
    pub rising: Vec<f64>,
    pub falling: Vec<f64>,
    pub polarity: Polarity,
    /// Source-loop point mapped to the device origin, in SI units.
    pub offset: [f64; 2],
    /// Pinch points of the source loop in device coordinates.
    pub pinches: Vec<[f64; 2]>,
    /// Largest change made by the monotone (and, for passive devices, sign)
    /// projection, relative to the current range.
    pub isotonic_adjustment: f64,
    /// Largest branch miss at a pinch point, relative to the current range.
    pub pinch_mismatch: f64,
    /// Currents are forced to share the sign of the voltage, so the device
    /// never delivers power.
    pub passive: bool,
}

impl LoopDeviceModel {
    /// Ideal rectifier: `v / r_on` forward, `v / r_off` reverse, on both
    /// branches, tabulated on `[-v_span, v_span]`.
    pub fn ideal_diode(r_on: f64, r_off: f64, v_span: f64) -> Result<Self> {
        if !(r_on > 0.0 && r_off > 0.0 && v_span > 0.0) {
            return Err(Error::Device(
                "ideal diode needs positive resistances and span".into(),
            ));
        }
        let n = 257;
        let table: Vec<f64> = (0..n)
            .map(|k| {
                let v = -v_span + 2.0 * v_span * k as f64 / (n - 1) as f64;
                if v >= 0.0 {
                    v / r_on
                } else {
                    v / r_off
                }
            })
            .collect();
        Ok(Self {
            v_min: -v_span,
            v_max: v_span,
            rising: table.clone(),
            falling: table,
            polarity: Polarity::Forward,
            offset: [0.0, 0.0],
            pinches: vec![[0.0, 0.0]],
            isotonic_adjustment: 0.0,
            pinch_mismatch: 0.0,
            passive: true,
        })
    }

    pub fn with_polarity(mut self, polarity: Polarity) -> Self {
        self.polarity = polarity;
        self
    }

    pub fn range(&self) -> f64 {
        self.v_max - self.v_min
    }

    /// Whether the device voltage `v` lies within the table range plus the
    /// allowed extrapolation.
    pub fn accepts(&self, v: f64) -> bool {
        let v = match self.polarity {
            Polarity::Forward => v,
            Polarity::Reversed => -v,
        };
        let pad = EXTRAPOLATION_LIMIT * self.range();
        v >= self.v_min - pad && v <= self.v_max + pad
    }

    /// Device current at voltage `v` on `branch`, honouring the polarity.
    pub fn current(&self, v: f64, branch: Branch) -> f64 {
        match self.polarity {
            Polarity::Forward => self.table(v, branch),
            Polarity::Reversed => -self.table(-v, branch.flip()),
        }
    }

    fn table(&self, v: f64, branch: Branch) -> f64 {
        let tab = match branch {
            Branch::Rising => &self.rising,
            Branch::Falling => &self.falling,
        };
        let n = tab.len();
        let h = self.range() / (n - 1) as f64;
        let x = (v - self.v_min) / h;
        // Linear extrapolation off either end.
        let k = (x.floor().max(0.0) as usize).min(n - 2);
        let s = x - k as f64;
        let i = tab[k] + s * (tab[k + 1] - tab[k]);
        if !self.passive {
            i
        } else if v > 0.0 {
            i.max(0.0)
        } else if v < 0.0 {
            i.min(0.0)
        } else {
            0.0
        }
    }

    /// Current range covered by both tables.
    pub fn current_range(&self) -> f64 {
        let (lo, hi) = self
            .rising
            .iter()
            .chain(&self.falling)
            .fold((f64::INFINITY, f64::NEG_INFINITY), |(l, h), &i| (l.min(i), h.max(i)));
        hi - lo
    }
}

/// Builds a device model from a pinched loop.
pub fn extract_device(
    lp: &LissajousLoop,
    scale: DeviceScale,
    options: &ExtractOptions,
) -> Result<LoopDeviceModel> {
    if options.grid_points < 3 {
        return Err(Error::Device("grid_points must be >= 3".into()));
    }
    if !(scale.volts > 0.0 && scale.amps > 0.0) {
        return Err(Error::Device("device scale must be positive".into()));
    }
    let pinches = find_pinch_points(lp, options.cluster_radius, options.tangent_tolerance)?;
    if pinches.is_empty() {
        return Err(Error::Device(
            "loop has no pinch point; it does not describe a memristive device".into(),
        ));
    }
    let verts = lp.vertices();
    let n = verts.len();
    let (imin, imax) = verts.iter().enumerate().fold((0, 0), |(lo, hi), (k, p)| {
        (
            if p[0] < verts[lo][0] { k } else { lo },
            if p[0] > verts[hi][0] { k } else { hi },
        )
    });
    let walk = |from: usize, to: usize| -> Vec<[f64; 2]> {
        let len = (to + n - from) % n + 1;
        (0..len).map(|k| verts[(from + k) % n]).collect()
    };
    let rising_path = walk(imin, imax);
    let mut falling_path = walk(imax, imin);
    falling_path.reverse();

    let (u_min, u_max) = (verts[imin][0], verts[imax][0]);
    let m = options.grid_points;
    let grid: Vec<f64> = (0..m)
        .map(|k| u_min + (u_max - u_min) * k as f64 / (m - 1) as f64)
        .collect();
    let raw_rising = resample(&rising_path, &grid);
    let raw_falling = resample(&falling_path, &grid);
    let rising = isotonic(&raw_rising);
    let falling = isotonic(&raw_falling);

    let w_range = rising
        .iter()
        .chain(&falling)
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(l, h), &i| (l.min(i), h.max(i)));
    let w_range = (w_range.1 - w_range.0).max(f64::MIN_POSITIVE);
    let adjustment = raw_rising
        .iter()
        .zip(&rising)
        .chain(raw_falling.iter().zip(&falling))
        .map(|(a, b)| (a - b).abs())
        .fold(0.0, f64::max)
        / w_range;

    let lookup = |tab: &[f64], u: f64| {
        let x = (u - u_min) / (u_max - u_min) * (m - 1) as f64;
        let k = (x.floor().max(0.0) as usize).min(m - 2);
        let s = x - k as f64;
        tab[k] + s * (tab[k + 1] - tab[k])
    };
    let mismatch = pinches
        .iter()
        .flat_map(|p| {
            let [u, w] = p.location;
            [lookup(&rising, u) - w, lookup(&falling, u) - w]
        })
        .map(f64::abs)
        .fold(0.0, f64::max)
        / w_range;
    if mismatch > options.pinch_tolerance {
        return Err(Error::Device(format!(
            "extracted branches miss a pinch point by {mismatch:.3e} of the current range (limit {:.1e})",
            options.pinch_tolerance
        )));
    }

    let (origin, passive) = match options.centre {
        Centre::Origin => ([0.0, 0.0], false),
        Centre::Pinch => (nearest_to_origin(&pinches), true),
    };
    let to_si_i = |w: f64| (w - origin[1]) * scale.amps;
    let mut tables = [rising, falling].map(|tab| tab.iter().map(|&w| to_si_i(w)).collect::<Vec<_>>());
    let mut adjustment = adjustment;
    if passive {
        let i_range = w_range * scale.amps;
        for tab in &mut tables {
            for (k, i) in tab.iter_mut().enumerate() {
                let u = grid[k] - origin[0];
                let clamped = if u > 0.0 { i.max(0.0) } else if u < 0.0 { i.min(0.0) } else { 0.0 };
                adjustment = adjustment.max((clamped - *i).abs() / i_range);
                *i = clamped;
            }
        }
    }
    let [rising, falling] = tables;
    Ok(LoopDeviceModel {
        v_min: (u_min - origin[0]) * scale.volts,
        v_max: (u_max - origin[0]) * scale.volts,
        rising,
        falling,
        polarity: Polarity::Forward,
        offset: [origin[0] * scale.volts, origin[1] * scale.amps],
        pinches: pinches
            .iter()
            .map(|p| [(p.location[0] - origin[0]) * scale.volts, to_si_i(p.location[1])])
            .collect(),
        isotonic_adjustment: adjustment,
        pinch_mismatch: mismatch,
        passive,
    })
}

fn nearest_to_origin(pinches: &[PinchPoint]) -> [f64; 2] {
    pinches
        .iter()
        .map(|p| p.location)
        .min_by(|a, b| a[0].hypot(a[1]).total_cmp(&b[0].hypot(b[1])))
        .expect("at least one pinch")
}

/// Linear interpolation of `w(u)` along a branch at the grid voltages. The
/// branch is ordered by `u` first, so a slightly non-monotone sweep still
/// yields a single-valued table.
fn resample(path: &[[f64; 2]], grid: &[f64]) -> Vec<f64> {
    let mut pts = path.to_vec();
    pts.sort_by(|a, b| a[0].total_cmp(&b[0]));
    let mut out = Vec::with_capacity(grid.len());
    let mut j = 0;
    for &u in grid {
        while j + 2 < pts.len() && pts[j + 1][0] < u {
            j += 1;
        }
        let (a, b) = (pts[j], pts[j + 1]);
        let du = b[0] - a[0];
        let s = if du > 0.0 { ((u - a[0]) / du).clamp(0.0, 1.0) } else { 0.0 };
        out.push(a[1] + s * (b[1] - a[1]));
    }
    out
}

/// Least-squares non-decreasing fit (pool adjacent violators).
fn isotonic(y: &[f64]) -> Vec<f64> {
    let mut blocks: Vec<(f64, usize)> = Vec::with_capacity(y.len());
    for &v in y {
        blocks.push((v, 1));
        while blocks.len() > 1 {
            let (b, nb) = blocks[blocks.len() - 1];
            let (a, na) = blocks[blocks.len() - 2];
            if a <= b {
                break;
            }
            blocks.pop();
            let last = blocks.last_mut().expect("two blocks");
            *last = ((a * na as f64 + b * nb as f64) / (na + nb) as f64, na + nb);
        }
    }
    blocks
        .into_iter()
        .flat_map(|(v, n)| std::iter::repeat(v).take(n))
        .collect()
}

/// Options for reading a loop trace.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct IngestOptions {
    /// Number of whole periods in the file.
    pub periods: usize,
    /// Which of those periods to return.
    pub period_index: usize,
    /// Allowed gap between the first and last point of the period,
    /// relative to the loop diameter.
    pub closure_tolerance: f64,
}

impl Default for IngestOptions {
    fn default() -> Self {
        Self {
            periods: 1,
            period_index: 0,
            closure_tolerance: 1e-2,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct IngestedLoop {
    pub lissajous: LissajousLoop,
    pub rows: usize,
    /// Consecutive repeated `(v, i)` samples dropped.
    pub duplicates_removed: usize,
    /// `#` comment lines, without the marker.
    pub comments: Vec<String>,
}

pub const MIN_CSV_ROWS: usize = 256;

/// Reads a `t,v,i` loop trace (seconds, volts, amperes).
pub fn ingest_loop_csv(path: &Path, options: &IngestOptions) -> Result<IngestedLoop> {
    let ingest = |line: usize, message: String| Error::Ingest {
        path: path.to_path_buf(),
        line,
        message,
    };
    if options.periods == 0 || options.period_index >= options.periods {
        return Err(ingest(
            0,
            format!(
                "period {} requested from a file of {} periods",
                options.period_index, options.periods
            ),
        ));
    }
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let comments: Vec<String> = text
        .lines()
        .filter_map(|l| l.trim_start().strip_prefix('#'))
        .map(|c| c.trim().to_string())
        .collect();
    let mut reader = csv::ReaderBuilder::new()
        .comment(Some(b'#'))
        .trim(csv::Trim::All)
        .has_headers(true)
        .from_reader(text.as_bytes());
    let header_line = text
        .lines()
        .position(|l| !l.trim_start().starts_with('#') && !l.trim().is_empty())
        .map_or(1, |k| k + 1);
    let headers = reader
        .headers()
        .map_err(|e| ingest(header_line, e.to_string()))?
        .clone();
    let names: Vec<&str> = headers.iter().collect();
    if names != ["t", "v", "i"] {
        return Err(ingest(
            header_line,
            format!("expected header `t,v,i`, found `{}`", names.join(",")),
        ));
    }
    let mut rows: Vec<[f64; 3]> = Vec::new();
    for record in reader.records() {
        let record = record.map_err(|e| {
            let line = e.position().map_or(0, |p| p.line() as usize);
            ingest(line, e.to_string())
        })?;
        let line = record.position().map_or(0, |p| p.line() as usize);
        if record.len() != 3 {
            return Err(ingest(line, format!("expected 3 fields, found {}", record.len())));
        }
        let mut row = [0.0; 3];
        for (k, field) in record.iter().enumerate() {
            row[k] = field
                .parse::<f64>()
                .ok()
                .filter(|v| v.is_finite())
                .ok_or_else(|| ingest(line, format!("`{field}` is not a finite number")))?;
        }
        if let Some(prev) = rows.last() {
            if !(row[0] > prev[0]) {
                return Err(ingest(line, "time must increase strictly".into()));
            }
        }
        rows.push(row);
    }
    if rows.len() < MIN_CSV_ROWS {
        return Err(ingest(
            0,
            format!("{} data rows, need at least {MIN_CSV_ROWS}", rows.len()),
        ));
    }
    let total = rows.len();

    let (t0, t1) = (rows[0][0], rows[total - 1][0]);
    let period = (t1 - t0) / options.periods as f64;
    let start = t0 + options.period_index as f64 * period;
    let end = start + period;
    let slack = 1e-9 * period;
    let mut selected: Vec<[f64; 3]> = rows
        .into_iter()
        .filter(|r| r[0] >= start - slack && r[0] <= end + slack)
        .collect();

    let before = selected.len();
    selected.dedup_by(|b, a| a[1] == b[1] && a[2] == b[2]);
    let duplicates_removed = before - selected.len();

    let points: Vec<[f64; 2]> = selected.iter().map(|r| [r[1], r[2]]).collect();
    let times: Vec<f64> = selected.iter().map(|r| r[0]).collect();
    let lp = match LissajousLoop::new(points, times, options.closure_tolerance) {
        Ok(lp) => lp,
        Err(Error::DegenerateLoop(msg)) if msg.contains("not closed") => {
            let first = selected[0];
            let last = selected[selected.len() - 1];
            let gap = (first[1] - last[1]).hypot(first[2] - last[2]);
            return Err(Error::OpenTrace {
                path: path.to_path_buf(),
                gap,
                tolerance: options.closure_tolerance,
            });
        }
        Err(e) => return Err(e),
    };
    Ok(IngestedLoop {
        lissajous: lp,
        rows: total,
        duplicates_removed,
        comments,
    })
}

/// Writes a `t,v,i` trace with leading `#` comment lines, atomically.
pub fn write_loop_csv(path: &Path, rows: &[[f64; 3]], comments: &[String]) -> Result<()> {
    let mut body = Vec::new();
    for c in comments {
        writeln!(body, "# {c}").map_err(|e| Error::io(path, e))?;
    }
    {
        let mut w = csv::Writer::from_writer(&mut body);
        let map = |e: csv::Error| Error::Config(format!("{}: {e}", path.display()));
        w.write_record(["t", "v", "i"]).map_err(map)?;
        for r in rows {
            w.write_record([r[0], r[1], r[2]].map(|v| format!("{v:e}")))
                .map_err(map)?;
        }
        w.flush().map_err(|e| Error::io(path, e))?;
    }
    write_atomic(path, &body)
}

/// Writes `contents` to a temporary sibling and renames it into place.
pub fn write_atomic(path: &Path, contents: &[u8]) -> Result<()> {
    let mut tmp = PathBuf::from(path);
    let name = path
        .file_name()
        .map(|n| n.to_string_lossy().into_owned())
        .unwrap_or_default();
    tmp.set_file_name(format!(".{name}.{}.tmp", std::process::id()));
    std::fs::write(&tmp, contents).map_err(|e| Error::io(&tmp, e))?;
    std::fs::rename(&tmp, path).map_err(|e| Error::io(path, e))
}

/// Threshold-switching memristor with a rectifying contact, used to
/// generate stand-in loop data for a packaged device.
///
/// `i = G(w) v` for `v >= 0` and `rectification * G(w) v` below, with
/// `1 / G = r_on w + r_off (1 - w)`. The state moves toward 1 above
/// `v_set` and toward 0 below `-v_reset`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SyntheticMemristor {
    pub r_on: f64,
    pub r_off: f64,
    pub v_set: f64,
    pub v_reset: f64,
    /// State rate per volt of overdrive, 1/(V s).
    pub rate: f64,
    pub rectification: f64,
    pub amplitude: f64,
    pub frequency_hz: f64,
}

impl Default for SyntheticMemristor {
    fn default() -> Self {
        Self {
            r_on: 5e3,
            r_off: 50e3,
            v_set: 0.3,
            v_reset: 0.2,
            rate: 400.0,
            rectification: 0.05,
            amplitude: 1.5,
            frequency_hz: 100.0,
        }
    }
}

impl SyntheticMemristor {
    fn conductance(&self, w: f64) -> f64 {
        1.0 / (self.r_on * w + self.r_off * (1.0 - w))
    }

    pub fn current(&self, v: f64, w: f64) -> f64 {
        let g = self.conductance(w);
        if v >= 0.0 {
            g * v
        } else {
            self.rectification * g * v
        }
    }

    fn voltage(&self, t: f64) -> f64 {
        self.amplitude * (2.0 * PI * self.frequency_hz * t).sin()
    }

    fn state_rate(&self, v: f64, w: f64) -> f64 {
        if v > self.v_set {
            self.rate * (v - self.v_set) * (1.0 - w)
        } else if v < -self.v_reset {
            self.rate * (v + self.v_reset) * w
        } else {
            0.0
        }
    }

    /// `(t, v, i)` rows over `periods` steady-state periods, endpoints
    /// included, after `settle` periods from `w = 0`.
    pub fn trace(&self, samples_per_period: usize, periods: usize, settle: usize) -> Result<Vec<[f64; 3]>> {
        if !(self.r_on > 0.0 && self.r_off > 0.0 && self.amplitude > 0.0 && self.frequency_hz > 0.0) {
            return Err(Error::InvalidParameter(
                "memristor needs positive resistances, amplitude and frequency".into(),
            ));
        }
        let period = 1.0 / self.frequency_hz;
        let total = settle + periods;
        let grid = UniformGrid::periodic(period, samples_per_period, total);
        let mut sys = MemristorState(*self);
        let settings = IntegratorSettings {
            max_step: period / 64.0,
            ..IntegratorSettings::default()
        };
        let sol = solve_on_grid(&mut sys, &[0.0], grid, &settings)?;
        let first = settle * samples_per_period;
        Ok((first..grid.len())
            .map(|k| {
                let t = grid.time(k);
                let v = self.voltage(t);
                let w = sol.state(k)[0];
                [t - grid.time(first), v, self.current(v, w)]
            })
            .collect())
    }
}

struct MemristorState(SyntheticMemristor);

impl OdeSystem for MemristorState {
    fn dim(&self) -> usize {
        1
    }

    fn rhs(&self, t: f64, s: &[f64], d: &mut [f64]) {
        d[0] = self.0.state_rate(self.0.voltage(t), s[0]);
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "UPPERCASE")]
pub enum GateKind {
    And,
    Or,
}

impl GateKind {
    pub fn default_polarity(self) -> Polarity {
        match self {
            GateKind::Or => Polarity::Forward,
            GateKind::And => Polarity::Reversed,
        }
    }

    pub fn expected(self, a: bool, b: bool) -> bool {
        match self {
            GateKind::And => a && b,
            GateKind::Or => a || b,
        }
    }
}

/// Resistor from the output node to a fixed rail.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PullResistor {
    pub resistance: f64,
    pub voltage: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GateConfig {
    pub gate: GateKind,
    pub load_capacitance: f64,
    /// Input HIGH level; LOW is 0 V.
    pub input_high: f64,
    /// Raised-cosine rise time of the inputs.
    pub ramp_time: f64,
    /// Time the inputs are held before the output is sampled.
    pub hold_time: f64,
    /// Output at or above this fraction of `input_high` reads HIGH.
    pub high_fraction: f64,
    /// Output at or below this fraction of `input_high` reads LOW.
    pub low_fraction: f64,
    /// Device orientations; defaults follow the gate kind.
    pub polarity: Option<[Polarity; 2]>,
    pub pull: Option<PullResistor>,
    /// Output samples per input combination.
    pub samples: usize,
}

impl Default for GateConfig {
    fn default() -> Self {
        Self {
            gate: GateKind::Or,
            load_capacitance: 10e-9,
            input_high: 1.0,
            ramp_time: 1e-3,
            hold_time: 20e-3,
            high_fraction: 0.7,
            low_fraction: 0.3,
            polarity: None,
            pull: None,
            samples: 2000,
        }
    }
}

impl GateConfig {
    pub fn validate(&self) -> Result<()> {
        let positive = |name: &str, v: f64| {
            if v.is_finite() && v > 0.0 {
                Ok(())
            } else {
                Err(Error::InvalidParameter(format!("{name} must be > 0, got {v}")))
            }
        };
        positive("load_capacitance", self.load_capacitance)?;
        positive("input_high", self.input_high)?;
        positive("ramp_time", self.ramp_time)?;
        positive("hold_time", self.hold_time)?;
        if !(0.0 < self.low_fraction && self.low_fraction < self.high_fraction && self.high_fraction < 1.0) {
            return Err(Error::InvalidParameter(format!(
                "thresholds must satisfy 0 < low ({}) < high ({}) < 1",
                self.low_fraction, self.high_fraction
            )));
        }
        if let Some(p) = self.pull {
            positive("pull resistance", p.resistance)?;
            if !p.voltage.is_finite() {
                return Err(Error::InvalidParameter("pull voltage must be finite".into()));
            }
        }
        if self.samples < 16 {
            return Err(Error::InvalidParameter("samples must be >= 16".into()));
        }
        Ok(())
    }

    pub fn duration(&self) -> f64 {
        self.ramp_time + self.hold_time
    }

    pub fn v_high(&self) -> f64 {
        self.high_fraction * self.input_high
    }

    pub fn v_low(&self) -> f64 {
        self.low_fraction * self.input_high
    }

    fn input(&self, high: bool, t: f64) -> (f64, f64) {
        if !high {
            return (0.0, 0.0);
        }
        if t >= self.ramp_time {
            return (self.input_high, 0.0);
        }
        let w = PI / self.ramp_time;
        let t = t.max(0.0);
        (
            0.5 * self.input_high * (1.0 - (w * t).cos()),
            0.5 * self.input_high * w * (w * t).sin(),
        )
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "UPPERCASE")]
pub enum Verdict {
    High,
    Low,
    Indeterminate,
}

impl Verdict {
    pub fn symbol(self) -> char {
        match self {
            Verdict::High => 'H',
            Verdict::Low => 'L',
            Verdict::Indeterminate => '?',
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GateRun {
    pub inputs: [bool; 2],
    pub t: Vec<f64>,
    pub v_in: [Vec<f64>; 2],
    pub v_out: Vec<f64>,
    pub final_output: f64,
    pub verdict: Verdict,
}

struct GateNode<'a> {
    cfg: &'a GateConfig,
    devices: [LoopDeviceModel; 2],
    inputs: [bool; 2],
    branch: [Branch; 2],
    deadband: [f64; 2],
}

impl GateNode<'_> {
    fn derivative(&self, t: f64, v: f64) -> f64 {
        let mut i = 0.0;
        for k in 0..2 {
            let (vin, _) = self.cfg.input(self.inputs[k], t);
            i += self.devices[k].current(vin - v, self.branch[k]);
        }
        if let Some(p) = self.cfg.pull {
            i += (p.voltage - v) / p.resistance;
        }
        i / self.cfg.load_capacitance
    }
}

impl OdeSystem for GateNode<'_> {
    fn dim(&self) -> usize {
        1
    }

    fn rhs(&self, t: f64, s: &[f64], d: &mut [f64]) {
        d[0] = self.derivative(t, s[0]);
    }

    fn abs_tol_scale(&self, _component: usize) -> f64 {
        self.cfg.input_high
    }

    fn after_step(&mut self, t: f64, s: &mut [f64]) -> StepControl {
        let v = s[0];
        let dv = self.derivative(t, v);
        let mut changed = false;
        for k in 0..2 {
            let (vin, dvin) = self.cfg.input(self.inputs[k], t);
            if !self.devices[k].accepts(vin - v) {
                return StepControl::Abort(format!(
                    "device {} voltage {:.4} V leaves its table range",
                    k + 1,
                    vin - v
                ));
            }
            let rate = dvin - dv;
            let next = if rate > self.deadband[k] {
                Branch::Rising
            } else if rate < -self.deadband[k] {
                Branch::Falling
            } else {
                self.branch[k]
            };
            if next != self.branch[k] {
                self.branch[k] = next;
                changed = true;
            }
        }
        if changed {
            StepControl::Modified
        } else {
            StepControl::Continue
        }
    }
}

/// Runs one input combination from `V_out(0) = 0`.
pub fn simulate_gate(
    cfg: &GateConfig,
    devices: [&LoopDeviceModel; 2],
    inputs: [bool; 2],
    settings: &IntegratorSettings,
) -> Result<GateRun> {
    cfg.validate()?;
    let polarity = cfg
        .polarity
        .unwrap_or([cfg.gate.default_polarity(); 2]);
    let devices = [
        devices[0].clone().with_polarity(polarity[0]),
        devices[1].clone().with_polarity(polarity[1]),
    ];
    let deadband = [1e-6 * devices[0].range(), 1e-6 * devices[1].range()];
    let mut node = GateNode {
        cfg,
        devices,
        inputs,
        branch: [Branch::Rising; 2],
        deadband,
    };
    let duration = cfg.duration();
    let grid = UniformGrid {
        start: 0.0,
        step: duration / cfg.samples as f64,
        intervals: cfg.samples,
    };
    let mut settings = settings.clone().with_max_step(cfg.ramp_time / 16.0);
    if settings.initial_step.is_none() {
        settings.initial_step = Some(cfg.ramp_time * 1e-4);
    }
    let sol = solve_on_grid(&mut node, &[0.0], grid, &settings).map_err(|e| match e {
        Error::Aborted { t, reason } => Error::Device(format!("t = {t:.6e} s: {reason}")),
        other => other,
    })?;
    let t: Vec<f64> = sol.times().collect();
    let v_out = sol.channel(0);
    let v_in = [0, 1].map(|k| t.iter().map(|&t| cfg.input(inputs[k], t).0).collect());
    let final_output = *v_out.last().expect("non-empty grid");
    let verdict = if final_output >= cfg.v_high() {
        Verdict::High
    } else if final_output <= cfg.v_low() {
        Verdict::Low
    } else {
        Verdict::Indeterminate
    };
    Ok(GateRun {
        inputs,
        t,
        v_in,
        v_out,
        final_output,
        verdict,
    })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TruthTable {
    pub gate: GateKind,
    /// Runs for inputs LL, LH, HL, HH.
    pub runs: Vec<GateRun>,
}

pub const INPUT_COMBINATIONS: [[bool; 2]; 4] =
    [[false, false], [false, true], [true, false], [true, true]];

impl TruthTable {
    pub fn verdicts(&self) -> Vec<Verdict> {
        self.runs.iter().map(|r| r.verdict).collect()
    }

    /// Verdicts as a string such as `LHHH`.
    pub fn pattern(&self) -> String {
        self.runs.iter().map(|r| r.verdict.symbol()).collect()
    }

    pub fn expected_pattern(&self) -> String {
        INPUT_COMBINATIONS
            .iter()
            .map(|&[a, b]| if self.gate.expected(a, b) { 'H' } else { 'L' })
            .collect()
    }

    pub fn is_correct(&self) -> bool {
        self.pattern() == self.expected_pattern()
    }

    /// All output samples, combination after combination.
    pub fn waveform(&self) -> Vec<f64> {
        self.runs.iter().flat_map(|r| r.v_out.iter().copied()).collect()
    }
}

/// Runs all four input combinations, in parallel.
pub fn truth_table(
    cfg: &GateConfig,
    devices: [&LoopDeviceModel; 2],
    settings: &IntegratorSettings,
) -> Result<TruthTable> {
    let runs = INPUT_COMBINATIONS
        .par_iter()
        .map(|&inputs| simulate_gate(cfg, devices, inputs, settings))
        .collect::<Result<Vec<_>>>()?;
    Ok(TruthTable {
        gate: cfg.gate,
        runs,
    })
}

/// RMS difference of two waveforms after scaling each to unit peak.
pub fn normalized_rms_difference(a: &[f64], b: &[f64]) -> Result<f64> {
    if a.len() != b.len() || a.is_empty() {
        return Err(Error::InvalidParameter(
            "waveforms must be non-empty and equally long".into(),
        ));
    }
    let peak = |x: &[f64]| x.iter().fold(0.0f64, |m, v| m.max(v.abs()));
    let (pa, pb) = (peak(a), peak(b));
    if pa == 0.0 || pb == 0.0 {
        return Err(Error::InvalidParameter("waveform is identically zero".into()));
    }
    let sum: f64 = a
        .iter()
        .zip(b)
        .map(|(x, y)| (x / pa - y / pb).powi(2))
        .sum();
    Ok((sum / a.len() as f64).sqrt())
}
