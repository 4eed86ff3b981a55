//! Adaptive Dormand-Prince 5(4) integrator with dense output onto a uniform
//! sampling grid.
//!
//! Steps are accepted on the 4th-order embedded error estimate, with a PI
//! step-size controller. Output samples are interpolated with the standard
//! 4th-order continuous extension of the pair.
//!
//! Systems with a discontinuous right-hand side may expose a switching
//! function. The integrator keeps the discrete mode fixed for the duration of
//! a step, locates sign changes of the switching function on the step's
//! interpolant and truncates the step there, then hands control back to the
//! system to change mode.

use serde::{Deserialize, Serialize};

use crate::{Error, Result};

/// What the integrator should do after a system has inspected an accepted step.
#[derive(Clone, Debug, PartialEq)]
pub enum StepControl {
    Continue,
    /// Discrete state or the state vector itself changed: the cached
    /// derivative at the step end is stale.
    Modified,
    Abort(String),
}

/// First-order system `s' = F(t, s)`.
pub trait OdeSystem {
    fn dim(&self) -> usize;

    fn rhs(&self, t: f64, state: &[f64], deriv: &mut [f64]);

    /// Per-component multiplier on the absolute tolerance.
    fn abs_tol_scale(&self, _component: usize) -> f64 {
        1.0
    }

    /// Positive while the current mode is valid. A step on which this goes
    /// from positive to non-positive is cut at the crossing.
    fn switching_function(&self, _t: f64, _state: &[f64]) -> Option<f64> {
        None
    }

    /// Called at a located switching instant.
    fn on_switch(&mut self, _t: f64, _state: &mut [f64]) {}

    /// Called after every accepted step.
    fn after_step(&mut self, _t: f64, _state: &mut [f64]) -> StepControl {
        StepControl::Continue
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct IntegratorSettings {
    pub rel_tol: f64,
    pub abs_tol: f64,
    pub max_step: f64,
    pub initial_step: Option<f64>,
    pub max_steps: usize,
}

impl Default for IntegratorSettings {
    fn default() -> Self {
        Self {
            rel_tol: 1e-8,
            abs_tol: 1e-10,
            max_step: f64::INFINITY,
            initial_step: None,
            max_steps: 10_000_000,
        }
    }
}

impl IntegratorSettings {
    pub fn validate(&self) -> Result<()> {
        if !(self.rel_tol > 0.0 && self.rel_tol < 1.0) {
            return Err(Error::InvalidParameter(format!(
                "rel_tol must lie in (0, 1), got {}",
                self.rel_tol
            )));
        }
        if !(self.abs_tol > 0.0 && self.abs_tol.is_finite()) {
            return Err(Error::InvalidParameter(format!(
                "abs_tol must be > 0, got {}",
                self.abs_tol
            )));
        }
        if !(self.max_step > 0.0) {
            return Err(Error::InvalidParameter(format!(
                "max_step must be > 0, got {}",
                self.max_step
            )));
        }
        if let Some(h) = self.initial_step {
            if !(h > 0.0 && h.is_finite()) {
                return Err(Error::InvalidParameter(format!(
                    "initial_step must be > 0, got {h}"
                )));
            }
        }
        if self.max_steps == 0 {
            return Err(Error::InvalidParameter("max_steps must be >= 1".into()));
        }
        Ok(())
    }

    pub fn with_max_step(mut self, h: f64) -> Self {
        self.max_step = self.max_step.min(h);
        self
    }
}

/// Uniform output grid `t_k = start + k * step`, `k = 0..=intervals`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct UniformGrid {
    pub start: f64,
    pub step: f64,
    pub intervals: usize,
}

impl UniformGrid {
    /// `samples_per_period` intervals per period over `periods` periods.
    pub fn periodic(period: f64, samples_per_period: usize, periods: usize) -> Self {
        Self {
            start: 0.0,
            step: period / samples_per_period as f64,
            intervals: samples_per_period * periods,
        }
    }

    #[inline]
    pub fn time(&self, k: usize) -> f64 {
        self.start + k as f64 * self.step
    }

    pub fn end(&self) -> f64 {
        self.time(self.intervals)
    }

    pub fn len(&self) -> usize {
        self.intervals + 1
    }

    pub fn is_empty(&self) -> bool {
        false
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct SolverStats {
    pub accepted: usize,
    pub rejected: usize,
    pub evaluations: usize,
    pub switches: usize,
}

/// States sampled on a uniform grid.
#[derive(Clone, Debug, PartialEq)]
pub struct GridSolution {
    pub grid: UniformGrid,
    pub dim: usize,
    /// Row-major, `dim` values per sample.
    pub states: Vec<f64>,
    pub stats: SolverStats,
}

impl GridSolution {
    pub fn state(&self, k: usize) -> &[f64] {
        &self.states[k * self.dim..(k + 1) * self.dim]
    }

    pub fn times(&self) -> impl Iterator<Item = f64> + '_ {
        (0..self.grid.len()).map(|k| self.grid.time(k))
    }

    pub fn last(&self) -> &[f64] {
        self.state(self.grid.intervals)
    }

    pub fn channel(&self, c: usize) -> Vec<f64> {
        self.states.iter().skip(c).step_by(self.dim).copied().collect()
    }
}

/// Settings and provenance of a trajectory.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrajectoryMeta {
    /// `simulate` label of the model, e.g. `series/single_diode`.
    pub model: String,
    pub period: f64,
    pub samples_per_period: usize,
    /// Names of the state components, e.g. `["x", "y"]`.
    pub state_names: Vec<String>,
    /// Index of the component plotted against the excitation.
    pub current_channel: usize,
    pub settings: IntegratorSettings,
    pub stats: SolverStats,
    /// Free-form parameter echo.
    pub parameters: serde_json::Value,
}

/// Uniformly resampled time series of a driven circuit.
#[derive(Clone, Debug, PartialEq)]
pub struct Trajectory {
    pub t: Vec<f64>,
    pub dim: usize,
    pub states: Vec<f64>,
    pub excitation: Vec<f64>,
    pub meta: TrajectoryMeta,
}

impl Trajectory {
    pub fn len(&self) -> usize {
        self.t.len()
    }

    pub fn is_empty(&self) -> bool {
        self.t.is_empty()
    }

    pub fn state(&self, k: usize) -> &[f64] {
        &self.states[k * self.dim..(k + 1) * self.dim]
    }

    pub fn channel(&self, c: usize) -> Vec<f64> {
        self.states.iter().skip(c).step_by(self.dim).copied().collect()
    }

    pub fn current(&self) -> Vec<f64> {
        self.channel(self.meta.current_channel)
    }

    /// Number of whole excitation periods covered.
    pub fn periods(&self) -> usize {
        self.len().saturating_sub(1) / self.meta.samples_per_period
    }

    /// Samples `[start, end]` (inclusive) of the last `periods` periods.
    pub fn tail_range(&self, periods: usize) -> Result<std::ops::RangeInclusive<usize>> {
        if periods == 0 || periods > self.periods() {
            return Err(Error::TooShort(format!(
                "requested {periods} periods, trajectory has {}",
                self.periods()
            )));
        }
        let end = self.len() - 1;
        Ok(end - periods * self.meta.samples_per_period..=end)
    }
}

// Dormand-Prince 5(4) tableau.
const C2: f64 = 1.0 / 5.0;
const C3: f64 = 3.0 / 10.0;
const C4: f64 = 4.0 / 5.0;
const C5: f64 = 8.0 / 9.0;
const A21: f64 = 1.0 / 5.0;
const A31: f64 = 3.0 / 40.0;
const A32: f64 = 9.0 / 40.0;
const A41: f64 = 44.0 / 45.0;
const A42: f64 = -56.0 / 15.0;
const A43: f64 = 32.0 / 9.0;
const A51: f64 = 19372.0 / 6561.0;
const A52: f64 = -25360.0 / 2187.0;
const A53: f64 = 64448.0 / 6561.0;
const A54: f64 = -212.0 / 729.0;
const A61: f64 = 9017.0 / 3168.0;
const A62: f64 = -355.0 / 33.0;
const A63: f64 = 46732.0 / 5247.0;
const A64: f64 = 49.0 / 176.0;
const A65: f64 = -5103.0 / 18656.0;
const A71: f64 = 35.0 / 384.0;
const A73: f64 = 500.0 / 1113.0;
const A74: f64 = 125.0 / 192.0;
const A75: f64 = -2187.0 / 6784.0;
const A76: f64 = 11.0 / 84.0;
// Difference between 5th and 4th order weights.
const E1: f64 = 71.0 / 57600.0;
const E3: f64 = -71.0 / 16695.0;
const E4: f64 = 71.0 / 1920.0;
const E5: f64 = -17253.0 / 339200.0;
const E6: f64 = 22.0 / 525.0;
const E7: f64 = -1.0 / 40.0;
// Continuous extension.
const D1: f64 = -12715105075.0 / 11282082432.0;
const D3: f64 = 87487479700.0 / 32700410799.0;
const D4: f64 = -10690763975.0 / 1880347072.0;
const D5: f64 = 701980252875.0 / 199316789632.0;
const D6: f64 = -1453857185.0 / 822651844.0;
const D7: f64 = 69997945.0 / 29380423.0;

const SAFETY: f64 = 0.9;
const FAC_MIN: f64 = 0.2;
const FAC_MAX: f64 = 10.0;
const BETA: f64 = 0.04;

struct Stages {
    k: [Vec<f64>; 7],
    tmp: Vec<f64>,
    y_new: Vec<f64>,
    err: Vec<f64>,
}

impl Stages {
    fn new(n: usize) -> Self {
        Self {
            k: std::array::from_fn(|_| vec![0.0; n]),
            tmp: vec![0.0; n],
            y_new: vec![0.0; n],
            err: vec![0.0; n],
        }
    }
}

/// Interpolant over one accepted step.
struct Dense {
    t0: f64,
    h: f64,
    r: [Vec<f64>; 5],
}

impl Dense {
    fn new(n: usize) -> Self {
        Self {
            t0: 0.0,
            h: 0.0,
            r: std::array::from_fn(|_| vec![0.0; n]),
        }
    }

    fn build(&mut self, t0: f64, h: f64, y: &[f64], st: &Stages) {
        self.t0 = t0;
        self.h = h;
        let k = &st.k;
        for i in 0..y.len() {
            let dy = st.y_new[i] - y[i];
            let bspl = h * k[0][i] - dy;
            self.r[0][i] = y[i];
            self.r[1][i] = dy;
            self.r[2][i] = bspl;
            self.r[3][i] = dy - h * k[6][i] - bspl;
            self.r[4][i] = h
                * (D1 * k[0][i] + D3 * k[2][i] + D4 * k[3][i] + D5 * k[4][i] + D6 * k[5][i]
                    + D7 * k[6][i]);
        }
    }

    fn eval(&self, t: f64, out: &mut [f64]) {
        let theta = (t - self.t0) / self.h;
        let theta1 = 1.0 - theta;
        for (i, o) in out.iter_mut().enumerate() {
            *o = self.r[0][i]
                + theta
                    * (self.r[1][i]
                        + theta1 * (self.r[2][i] + theta * (self.r[3][i] + theta1 * self.r[4][i])));
        }
    }
}

fn attempt<S: OdeSystem + ?Sized>(sys: &S, t: f64, y: &[f64], h: f64, st: &mut Stages) {
    let n = y.len();
    // k[0] holds F(t, y) on entry.
    macro_rules! stage {
        ($dst:expr, $c:expr, $($coef:expr => $src:expr),+) => {{
            for i in 0..n {
                st.tmp[i] = y[i] + h * (0.0 $(+ $coef * st.k[$src][i])+);
            }
            let (head, tail) = st.k.split_at_mut($dst);
            let _ = head;
            sys.rhs(t + $c * h, &st.tmp, &mut tail[0]);
        }};
    }
    stage!(1, C2, A21 => 0);
    stage!(2, C3, A31 => 0, A32 => 1);
    stage!(3, C4, A41 => 0, A42 => 1, A43 => 2);
    stage!(4, C5, A51 => 0, A52 => 1, A53 => 2, A54 => 3);
    stage!(5, 1.0, A61 => 0, A62 => 1, A63 => 2, A64 => 3, A65 => 4);
    for i in 0..n {
        st.y_new[i] = y[i]
            + h * (A71 * st.k[0][i]
                + A73 * st.k[2][i]
                + A74 * st.k[3][i]
                + A75 * st.k[4][i]
                + A76 * st.k[5][i]);
    }
    {
        let (head, tail) = st.k.split_at_mut(6);
        let _ = head;
        sys.rhs(t + h, &st.y_new, &mut tail[0]);
    }
    for i in 0..n {
        st.err[i] = h
            * (E1 * st.k[0][i]
                + E3 * st.k[2][i]
                + E4 * st.k[3][i]
                + E5 * st.k[4][i]
                + E6 * st.k[5][i]
                + E7 * st.k[6][i]);
    }
}

fn error_norm<S: OdeSystem + ?Sized>(
    sys: &S,
    settings: &IntegratorSettings,
    y: &[f64],
    st: &Stages,
) -> f64 {
    let n = y.len();
    let mut acc = 0.0;
    for i in 0..n {
        let sk = settings.abs_tol * sys.abs_tol_scale(i)
            + settings.rel_tol * y[i].abs().max(st.y_new[i].abs());
        let e = st.err[i] / sk;
        acc += e * e;
    }
    (acc / n as f64).sqrt()
}

fn initial_step<S: OdeSystem + ?Sized>(
    sys: &S,
    settings: &IntegratorSettings,
    t: f64,
    y: &[f64],
    f0: &[f64],
    span: f64,
) -> f64 {
    let n = y.len();
    let scale = |i: usize, v: f64| settings.abs_tol * sys.abs_tol_scale(i) + settings.rel_tol * v.abs();
    let mut dnf = 0.0;
    let mut dny = 0.0;
    for i in 0..n {
        let sk = scale(i, y[i]);
        dnf += (f0[i] / sk).powi(2);
        dny += (y[i] / sk).powi(2);
    }
    let mut h = if dnf <= 1e-10 || dny <= 1e-10 {
        1e-6
    } else {
        0.01 * (dny / dnf).sqrt()
    };
    h = h.min(settings.max_step).min(span);
    let y1: Vec<f64> = (0..n).map(|i| y[i] + h * f0[i]).collect();
    let mut f1 = vec![0.0; n];
    sys.rhs(t + h, &y1, &mut f1);
    let mut der2 = 0.0;
    for i in 0..n {
        der2 += ((f1[i] - f0[i]) / scale(i, y[i])).powi(2);
    }
    let der2 = der2.sqrt() / h;
    let der12 = der2.max(dnf.sqrt());
    let h1 = if der12 <= 1e-15 {
        (h * 1e-3).max(1e-6)
    } else {
        (0.01 / der12).powf(0.2)
    };
    (100.0 * h).min(h1).min(settings.max_step).min(span)
}

/// Integrates `sys` from `s0` at `grid.start` and returns the state at every
/// grid point.
pub fn solve_on_grid<S: OdeSystem + ?Sized>(
    sys: &mut S,
    s0: &[f64],
    grid: UniformGrid,
    settings: &IntegratorSettings,
) -> Result<GridSolution> {
    settings.validate()?;
    let n = sys.dim();
    if s0.len() != n {
        return Err(Error::InvalidParameter(format!(
            "initial state has {} components, system expects {n}",
            s0.len()
        )));
    }
    if !(grid.step > 0.0 && grid.step.is_finite()) {
        return Err(Error::InvalidParameter(format!(
            "grid step must be > 0, got {}",
            grid.step
        )));
    }
    if s0.iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFinite { t: grid.start });
    }

    let mut states = Vec::with_capacity(grid.len() * n);
    states.extend_from_slice(s0);
    let mut stats = SolverStats::default();
    let t_end = grid.end();
    let mut t = grid.start;
    let mut y = s0.to_vec();
    let mut st = Stages::new(n);
    let mut dense = Dense::new(n);
    let mut next_sample = 1usize;

    sys.rhs(t, &y, &mut st.k[0]);
    stats.evaluations += 1;
    let mut h = match settings.initial_step {
        Some(h) => h.min(settings.max_step),
        None => {
            let f0 = st.k[0].clone();
            stats.evaluations += 1;
            initial_step(&*sys, settings, t, &y, &f0, t_end - t)
        }
    };
    let mut err_old: f64 = 1e-4;
    let mut last_rejected = false;
    let mut probe = vec![0.0; n];
    let mut steps = 0usize;

    while next_sample <= grid.intervals {
        if steps >= settings.max_steps {
            return Err(Error::StepLimit {
                t,
                max_steps: settings.max_steps,
            });
        }
        let remaining = t_end - t;
        let mut last = false;
        if 1.01 * h >= remaining {
            h = remaining;
            last = true;
        }
        let h_min = 16.0 * f64::EPSILON * t.abs().max(1.0);
        if h < h_min && !last {
            return Err(Error::StepUnderflow { t, h });
        }

        attempt(&*sys, t, &y, h, &mut st);
        stats.evaluations += 6;
        steps += 1;
        let err = error_norm(&*sys, settings, &y, &st);

        if !err.is_finite() || err > 1.0 {
            stats.rejected += 1;
            let fac = if err.is_finite() {
                (err.powf(0.2 - 0.75 * BETA) / SAFETY).min(1.0 / FAC_MIN)
            } else {
                1.0 / FAC_MIN
            };
            h /= fac;
            last_rejected = true;
            continue;
        }

        // Mode switch inside the step: cut the step at the crossing.
        let mut switched = false;
        if let Some(g0) = sys.switching_function(t, &y) {
            let g1 = sys.switching_function(t + h, &st.y_new).unwrap_or(g0);
            if g0 > 0.0 && g1 <= 0.0 {
                dense.build(t, h, &y, &st);
                let mut lo = t;
                let mut hi = t + h;
                for _ in 0..200 {
                    let mid = 0.5 * (lo + hi);
                    if mid <= lo || mid >= hi {
                        break;
                    }
                    dense.eval(mid, &mut probe);
                    let g = sys.switching_function(mid, &probe).unwrap_or(g0);
                    if g > 0.0 {
                        lo = mid;
                    } else {
                        hi = mid;
                    }
                }
                let h_cut = hi - t;
                if h_cut < h {
                    attempt(&*sys, t, &y, h_cut, &mut st);
                    stats.evaluations += 6;
                    h = h_cut;
                    last = false;
                }
                switched = true;
            }
        }

        stats.accepted += 1;
        dense.build(t, h, &y, &st);
        let t_new = if last { t_end } else { t + h };
        while next_sample <= grid.intervals {
            let ts = grid.time(next_sample);
            if next_sample == grid.intervals && last {
                states.extend_from_slice(&st.y_new);
            } else if ts <= t_new {
                dense.eval(ts, &mut probe);
                states.extend_from_slice(&probe);
            } else {
                break;
            }
            next_sample += 1;
        }

        t = t_new;
        std::mem::swap(&mut y, &mut st.y_new);
        if y.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite { t });
        }

        let mut stale = false;
        if switched {
            stats.switches += 1;
            sys.on_switch(t, &mut y);
            stale = true;
        }
        match sys.after_step(t, &mut y) {
            StepControl::Continue => {}
            StepControl::Modified => stale = true,
            StepControl::Abort(reason) => return Err(Error::Aborted { t, reason }),
        }
        if stale {
            sys.rhs(t, &y, &mut st.k[0]);
            stats.evaluations += 1;
            err_old = 1e-4;
        } else {
            st.k.swap(0, 6);
        }

        // PI step-size update.
        let fac11 = err.max(1e-300).powf(0.2 - 0.75 * BETA);
        let mut fac = fac11 / err_old.powf(BETA);
        fac = (fac / SAFETY).clamp(1.0 / FAC_MAX, 1.0 / FAC_MIN);
        let mut h_new = h / fac;
        if last_rejected {
            h_new = h_new.min(h);
        }
        if switched {
            // Restart conservatively after a mode change.
            h_new = h_new.min(h.max(h_min * 1e3));
        }
        err_old = err.max(1e-4);
        last_rejected = false;
        h = h_new.min(settings.max_step);
    }

    Ok(GridSolution {
        grid,
        dim: n,
        states,
        stats,
    })
}

/// Integrates over `t_span` with `samples_per_period` uniform samples per
/// `period`; the span must be a whole number of periods.
pub fn integrate<S: OdeSystem + ?Sized>(
    sys: &mut S,
    s0: &[f64],
    t_span: (f64, f64),
    period: f64,
    samples_per_period: usize,
    settings: &IntegratorSettings,
) -> Result<GridSolution> {
    if samples_per_period < 64 {
        return Err(Error::InvalidParameter(format!(
            "samples_per_period must be >= 64, got {samples_per_period}"
        )));
    }
    let (t0, t1) = t_span;
    if !(t1 > t0) {
        return Err(Error::InvalidParameter(format!(
            "t_span must be increasing, got ({t0}, {t1})"
        )));
    }
    let periods = (t1 - t0) / period;
    let whole = periods.round();
    if whole < 1.0 || (periods - whole).abs() > 1e-9 * whole.max(1.0) {
        return Err(Error::InvalidParameter(format!(
            "t_span covers {periods} periods; a whole number is required"
        )));
    }
    let grid = UniformGrid {
        start: t0,
        step: period / samples_per_period as f64,
        intervals: samples_per_period * whole as usize,
    };
    solve_on_grid(sys, s0, grid, settings)
}

/// Closure-backed system, mostly for tests and small problems.
pub struct FnSystem<F> {
    pub dim: usize,
    pub f: F,
}

impl<F: Fn(f64, &[f64], &mut [f64])> OdeSystem for FnSystem<F> {
    fn dim(&self) -> usize {
        self.dim
    }

    fn rhs(&self, t: f64, state: &[f64], deriv: &mut [f64]) {
        (self.f)(t, state, deriv)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::f64::consts::PI;

    fn decay() -> FnSystem<impl Fn(f64, &[f64], &mut [f64])> {
        FnSystem {
            dim: 1,
            f: |_t: f64, s: &[f64], d: &mut [f64]| d[0] = -s[0],
        }
    }

    fn oscillator() -> FnSystem<impl Fn(f64, &[f64], &mut [f64])> {
        FnSystem {
            dim: 2,
            f: |_t: f64, s: &[f64], d: &mut [f64]| {
                d[0] = s[1];
                d[1] = -s[0];
            },
        }
    }

    fn one_step_grid(t1: f64) -> UniformGrid {
        UniformGrid {
            start: 0.0,
            step: t1,
            intervals: 1,
        }
    }

    #[test]
    fn exponential_decay() {
        let sol = solve_on_grid(
            &mut decay(),
            &[1.0],
            one_step_grid(1.0),
            &IntegratorSettings::default(),
        )
        .unwrap();
        assert!((sol.last()[0] - (-1.0f64).exp()).abs() < 1e-8);
    }

    #[test]
    fn oscillator_energy_drift() {
        let settings = IntegratorSettings {
            rel_tol: 1e-10,
            abs_tol: 1e-12,
            ..Default::default()
        };
        let sol = integrate(&mut oscillator(), &[1.0, 0.0], (0.0, 200.0 * PI), 2.0 * PI, 64, &settings)
            .unwrap();
        for k in (0..sol.grid.len()).step_by(64) {
            let s = sol.state(k);
            let e = 0.5 * (s[0] * s[0] + s[1] * s[1]);
            assert!((e - 0.5).abs() / 0.5 <= 1e-6, "k={k} e={e}");
        }
    }

    #[test]
    fn dense_output_matches_exact_solution() {
        let settings = IntegratorSettings {
            rel_tol: 1e-10,
            abs_tol: 1e-12,
            ..Default::default()
        };
        let sol = integrate(&mut oscillator(), &[1.0, 0.0], (0.0, 2.0 * PI), 2.0 * PI, 256, &settings)
            .unwrap();
        for (k, t) in sol.times().enumerate() {
            assert!((sol.state(k)[0] - t.cos()).abs() < 1e-8, "t={t}");
            assert!((sol.state(k)[1] + t.sin()).abs() < 1e-8, "t={t}");
        }
    }

    #[test]
    fn observed_order_at_least_four() {
        // Fixed initial step and no adaptivity stress: compare global error
        // against tolerance on a log-log fit.
        let mut tols = Vec::new();
        let mut errs = Vec::new();
        let mut steps = Vec::new();
        for k in 0..6 {
            let tol = 1e-5 / 4f64.powi(k);
            let settings = IntegratorSettings {
                rel_tol: tol,
                abs_tol: tol,
                ..Default::default()
            };
            let sol = solve_on_grid(&mut decay(), &[1.0], one_step_grid(10.0), &settings).unwrap();
            tols.push(tol);
            errs.push((sol.last()[0] - (-10.0f64).exp()).abs());
            steps.push(sol.stats.accepted as f64);
        }
        // Error against step count: err ~ N^-p.
        let n = steps.len() as f64;
        let lx: Vec<f64> = steps.iter().map(|v| v.ln()).collect();
        let ly: Vec<f64> = errs.iter().map(|v| v.ln()).collect();
        let mx = lx.iter().sum::<f64>() / n;
        let my = ly.iter().sum::<f64>() / n;
        let slope = lx
            .iter()
            .zip(&ly)
            .map(|(x, y)| (x - mx) * (y - my))
            .sum::<f64>()
            / lx.iter().map(|x| (x - mx).powi(2)).sum::<f64>();
        assert!(-slope >= 4.0, "observed order {} (errs {errs:?}, steps {steps:?})", -slope);
        // Errors shrink with tolerance.
        for w in errs.windows(2) {
            assert!(w[1] < w[0]);
        }
        let _ = tols;
    }

    #[test]
    fn deterministic_output() {
        let settings = IntegratorSettings::default();
        let a = integrate(&mut oscillator(), &[1.0, 0.0], (0.0, 20.0 * PI), 2.0 * PI, 64, &settings).unwrap();
        let b = integrate(&mut oscillator(), &[1.0, 0.0], (0.0, 20.0 * PI), 2.0 * PI, 64, &settings).unwrap();
        assert_eq!(a, b);
        assert!(a.states.iter().zip(&b.states).all(|(x, y)| x.to_bits() == y.to_bits()));
    }

    #[test]
    fn step_limit_is_reported() {
        let settings = IntegratorSettings {
            max_steps: 5,
            ..Default::default()
        };
        let err = solve_on_grid(&mut oscillator(), &[1.0, 0.0], one_step_grid(100.0), &settings).unwrap_err();
        assert!(matches!(err, Error::StepLimit { .. }));
    }

    #[test]
    fn blow_up_is_reported() {
        let mut sys = FnSystem {
            dim: 1,
            f: |_t: f64, s: &[f64], d: &mut [f64]| d[0] = s[0] * s[0],
        };
        let err = solve_on_grid(&mut sys, &[1.0], one_step_grid(2.0), &IntegratorSettings::default())
            .unwrap_err();
        assert!(err.is_integration_failure(), "{err}");
    }

    #[test]
    fn rejects_bad_inputs() {
        let settings = IntegratorSettings::default();
        assert!(integrate(&mut decay(), &[1.0], (0.0, 1.0), 1.0, 32, &settings).is_err());
        assert!(integrate(&mut decay(), &[1.0], (1.0, 0.0), 1.0, 64, &settings).is_err());
        assert!(integrate(&mut decay(), &[1.0], (0.0, 1.5), 1.0, 64, &settings).is_err());
        let bad = IntegratorSettings {
            rel_tol: 0.0,
            ..Default::default()
        };
        assert!(integrate(&mut decay(), &[1.0], (0.0, 1.0), 1.0, 64, &bad).is_err());
    }

    /// Bouncing-free sticking system: `y' = -1` until `y` reaches zero, then
    /// `y' = 0`. Exercises switch location.
    struct Stick {
        stuck: bool,
    }

    impl OdeSystem for Stick {
        fn dim(&self) -> usize {
            1
        }
        fn rhs(&self, _t: f64, _s: &[f64], d: &mut [f64]) {
            d[0] = if self.stuck { 0.0 } else { -1.0 };
        }
        fn switching_function(&self, _t: f64, s: &[f64]) -> Option<f64> {
            (!self.stuck).then_some(s[0])
        }
        fn on_switch(&mut self, _t: f64, s: &mut [f64]) {
            self.stuck = true;
            s[0] = 0.0;
        }
    }

    #[test]
    fn switch_is_located_precisely() {
        let mut sys = Stick { stuck: false };
        let grid = UniformGrid {
            start: 0.0,
            step: 0.01,
            intervals: 300,
        };
        let sol = solve_on_grid(&mut sys, &[1.234], grid, &IntegratorSettings::default()).unwrap();
        assert_eq!(sol.stats.switches, 1);
        for (k, t) in sol.times().enumerate() {
            let exact = (1.234 - t).max(0.0);
            assert!((sol.state(k)[0] - exact).abs() < 1e-9, "t={t}: {}", sol.state(k)[0]);
        }
    }
}
