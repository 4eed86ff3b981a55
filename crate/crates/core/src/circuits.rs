//! Resonator models: the normalized series and parallel circuits, the
//! parallel circuit's limit for vanishing parasitic capacitance, and the
//! dimensional circuits they are scaled from.
//!
//! Normalized variables: `x = v_C / v_gamma`, `y = R i_L / v_gamma`,
//! `t_n = t / (R C)`. The parallel circuit adds `z = v_Cp / v_gamma`, the
//! voltage across the parasitic capacitor that controls the diode.

use std::f64::consts::PI;

use serde::{Deserialize, Serialize};
use serde_json::json;

use crate::integrator::{
    solve_on_grid, IntegratorSettings, OdeSystem, Trajectory, TrajectoryMeta, UniformGrid,
};
use crate::nonlinearity::{diode_current, Nonlinearity};
use crate::{Error, Result};

/// `g(t) = offset + amplitude * sin(frequency * t)`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Excitation {
    pub offset: f64,
    pub amplitude: f64,
    pub frequency: f64,
}

impl Excitation {
    #[inline]
    pub fn value(&self, t: f64) -> f64 {
        self.offset + self.amplitude * (self.frequency * t).sin()
    }

    pub fn period(&self) -> f64 {
        2.0 * PI / self.frequency
    }

    fn validate(&self) -> Result<()> {
        if !(self.frequency > 0.0 && self.frequency.is_finite()) {
            return Err(Error::InvalidParameter(format!(
                "excitation frequency must be > 0, got {}",
                self.frequency
            )));
        }
        if !(self.amplitude >= 0.0 && self.amplitude.is_finite()) {
            return Err(Error::InvalidParameter(format!(
                "excitation amplitude must be >= 0, got {}",
                self.amplitude
            )));
        }
        if !self.offset.is_finite() {
            return Err(Error::InvalidParameter("excitation offset must be finite".into()));
        }
        Ok(())
    }
}

/// Normalized series resonator.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct SeriesConfig {
    pub excitation: Excitation,
    /// `R^2 C / L`.
    pub time_constant_ratio: f64,
    pub nonlinearity: Nonlinearity,
}

impl SeriesConfig {
    pub fn validate(&self) -> Result<()> {
        self.excitation.validate()?;
        self.nonlinearity.validate()?;
        positive("time constant ratio b", self.time_constant_ratio)
    }

    /// `(y - f(x), b (g(t) - y - x))`.
    #[inline]
    pub fn rhs(&self, t: f64, s: [f64; 2]) -> [f64; 2] {
        let [x, y] = s;
        let g = self.excitation.value(t);
        [
            y - self.nonlinearity.eval(x),
            self.time_constant_ratio * (g - y - x),
        ]
    }
}

/// Normalized parallel resonator. `parasitic_ratio = C_p / C`; zero selects
/// the reduced model.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ParallelConfig {
    pub excitation: Excitation,
    pub time_constant_ratio: f64,
    pub parasitic_ratio: f64,
    pub nonlinearity: Nonlinearity,
}

impl ParallelConfig {
    pub fn validate(&self) -> Result<()> {
        self.excitation.validate()?;
        self.nonlinearity.validate()?;
        positive("time constant ratio b", self.time_constant_ratio)?;
        if !(self.parasitic_ratio >= 0.0 && self.parasitic_ratio.is_finite()) {
            return Err(Error::InvalidParameter(format!(
                "parasitic ratio epsilon must be >= 0, got {}",
                self.parasitic_ratio
            )));
        }
        Ok(())
    }

    /// `(g - x - y, b (x - z), (y - f(z)) / epsilon)`.
    pub fn rhs(&self, t: f64, s: [f64; 3]) -> Result<[f64; 3]> {
        if self.parasitic_ratio == 0.0 {
            return Err(Error::InvalidParameter(
                "epsilon = 0: use the reduced parallel model".into(),
            ));
        }
        Ok(self.rhs_unchecked(t, s))
    }

    #[inline]
    fn rhs_unchecked(&self, t: f64, s: [f64; 3]) -> [f64; 3] {
        let [x, y, z] = s;
        let g = self.excitation.value(t);
        [
            g - x - y,
            self.time_constant_ratio * (x - z),
            (y - self.nonlinearity.eval(z)) / self.parasitic_ratio,
        ]
    }

    /// Right-hand side of the `epsilon -> 0` limit, where `y = f(z)` and `z`
    /// is recovered from `(x, y)` by [`recover_device_state`].
    pub fn reduced_rhs(&self, t: f64, s: [f64; 2]) -> Result<ReducedRhs> {
        let [x, y] = s;
        let recovered = recover_device_state(&self.nonlinearity, x, y)?;
        let g = self.excitation.value(t);
        Ok(ReducedRhs {
            deriv: [g - x - y, self.time_constant_ratio * (x - recovered.z)],
            z: recovered.z,
            clamped: recovered.clamped,
        })
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ReducedRhs {
    pub deriv: [f64; 2],
    pub z: f64,
    /// The state had `y < 0` with a single diode and `z` was clamped.
    pub clamped: bool,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct DeviceState {
    pub z: f64,
    pub clamped: bool,
}

/// Solves `y = f(z)` for `z`. In a dead zone (`y = 0`) the solution set is an
/// interval and `z` is taken as `x` clamped into it, the value the fast
/// parasitic oscillation averages to.
pub fn recover_device_state(nl: &Nonlinearity, x: f64, y: f64) -> Result<DeviceState> {
    let inverse = |z, clamped| Ok(DeviceState { z, clamped });
    match *nl {
        Nonlinearity::None => Err(Error::NonInvertible(
            "f = 0 cannot be solved for the device voltage".into(),
        )),
        Nonlinearity::SingleDiode { slope } | Nonlinearity::AntiParallel { slope }
            if slope == 0.0 =>
        {
            Err(Error::NonInvertible("diode slope a = 0".into()))
        }
        Nonlinearity::SingleDiode { slope } => {
            if y > 0.0 {
                inverse(1.0 + y / slope, false)
            } else {
                inverse(x.min(1.0), y < 0.0)
            }
        }
        Nonlinearity::AntiParallel { slope } => {
            if y > 0.0 {
                inverse(1.0 + y / slope, false)
            } else if y < 0.0 {
                inverse(-1.0 + y / slope, false)
            } else {
                inverse(x.clamp(-1.0, 1.0), false)
            }
        }
        Nonlinearity::Cubic { coefficient } => {
            if coefficient == 0.0 {
                Err(Error::NonInvertible("cubic coefficient k = 0".into()))
            } else {
                inverse((y / coefficient).cbrt(), false)
            }
        }
    }
}

fn positive(name: &str, v: f64) -> Result<()> {
    if v > 0.0 && v.is_finite() {
        Ok(())
    } else {
        Err(Error::InvalidParameter(format!("{name} must be > 0, got {v}")))
    }
}

impl OdeSystem for SeriesConfig {
    fn dim(&self) -> usize {
        2
    }

    fn rhs(&self, t: f64, s: &[f64], d: &mut [f64]) {
        let out = SeriesConfig::rhs(self, t, [s[0], s[1]]);
        d.copy_from_slice(&out);
    }
}

/// Full three-state parallel model.
#[derive(Clone, Copy, Debug)]
pub struct ParallelSystem(pub ParallelConfig);

impl OdeSystem for ParallelSystem {
    fn dim(&self) -> usize {
        3
    }

    fn rhs(&self, t: f64, s: &[f64], d: &mut [f64]) {
        let out = self.0.rhs_unchecked(t, [s[0], s[1], s[2]]);
        d.copy_from_slice(&out);
    }
}

/// Conduction state of the reduced parallel model.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum ReducedMode {
    /// `y > 0`, forward branch.
    Forward,
    /// `y < 0`, reverse branch of the anti-parallel pair.
    Reverse,
    /// `y = 0` held while the drive stays inside the dead zone.
    Blocking,
    /// Smooth, invertible characteristic (cubic): no modes.
    Smooth,
}

/// Reduced parallel model as a switched system. Within each mode the
/// right-hand side is smooth; `y = 0` becomes a sticking surface while the
/// capacitor voltage is inside the dead zone.
#[derive(Clone, Debug)]
pub struct ReducedParallelSystem {
    cfg: ParallelConfig,
    mode: ReducedMode,
    slope: f64,
}

impl ReducedParallelSystem {
    pub fn new(cfg: ParallelConfig, initial: [f64; 2]) -> Result<Self> {
        let slope = match cfg.nonlinearity {
            Nonlinearity::Cubic { .. } => {
                recover_device_state(&cfg.nonlinearity, 0.0, 1.0)?;
                1.0
            }
            nl => {
                // Rejects f = 0 and zero slopes.
                recover_device_state(&nl, 0.0, 1.0)?;
                nl.diode_slope().unwrap_or(1.0)
            }
        };
        let mut sys = Self {
            cfg,
            mode: ReducedMode::Blocking,
            slope,
        };
        sys.mode = sys.classify(initial[0], initial[1]);
        Ok(sys)
    }

    pub fn mode(&self) -> ReducedMode {
        self.mode
    }

    fn antiparallel(&self) -> bool {
        matches!(self.cfg.nonlinearity, Nonlinearity::AntiParallel { .. })
    }

    fn classify(&self, x: f64, y: f64) -> ReducedMode {
        if matches!(self.cfg.nonlinearity, Nonlinearity::Cubic { .. }) {
            return ReducedMode::Smooth;
        }
        if y > 0.0 {
            ReducedMode::Forward
        } else if y < 0.0 && self.antiparallel() {
            ReducedMode::Reverse
        } else if x > 1.0 {
            ReducedMode::Forward
        } else if x < -1.0 && self.antiparallel() {
            ReducedMode::Reverse
        } else {
            ReducedMode::Blocking
        }
    }

    fn device_voltage(&self, x: f64, y: f64) -> f64 {
        match self.mode {
            ReducedMode::Forward => 1.0 + y / self.slope,
            ReducedMode::Reverse => -1.0 + y / self.slope,
            ReducedMode::Blocking => {
                if self.antiparallel() {
                    x.clamp(-1.0, 1.0)
                } else {
                    x.min(1.0)
                }
            }
            ReducedMode::Smooth => recover_device_state(&self.cfg.nonlinearity, x, y)
                .map(|d| d.z)
                .unwrap_or(f64::NAN),
        }
    }
}

impl OdeSystem for ReducedParallelSystem {
    fn dim(&self) -> usize {
        2
    }

    fn rhs(&self, t: f64, s: &[f64], d: &mut [f64]) {
        let (x, y) = (s[0], s[1]);
        let z = self.device_voltage(x, y);
        d[0] = self.cfg.excitation.value(t) - x - y;
        d[1] = self.cfg.time_constant_ratio * (x - z);
    }

    fn switching_function(&self, _t: f64, s: &[f64]) -> Option<f64> {
        let (x, y) = (s[0], s[1]);
        match self.mode {
            ReducedMode::Forward => Some(y),
            ReducedMode::Reverse => Some(-y),
            ReducedMode::Blocking if self.antiparallel() => Some(1.0 - x.abs()),
            ReducedMode::Blocking => Some(1.0 - x),
            ReducedMode::Smooth => None,
        }
    }

    fn on_switch(&mut self, _t: f64, s: &mut [f64]) {
        match self.mode {
            ReducedMode::Forward | ReducedMode::Reverse => {
                s[1] = 0.0;
                self.mode = match self.classify(s[0], 0.0) {
                    // The branch just ended; re-entering it immediately would
                    // stall on the switching surface.
                    m if m == self.mode => ReducedMode::Blocking,
                    m => m,
                };
            }
            ReducedMode::Blocking => {
                s[1] = 0.0;
                self.mode = if s[0] >= 0.0 {
                    ReducedMode::Forward
                } else {
                    ReducedMode::Reverse
                };
            }
            ReducedMode::Smooth => {}
        }
    }
}

/// A resonator in normalized form.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "topology", rename_all = "snake_case")]
pub enum Circuit {
    Series(SeriesConfig),
    Parallel(ParallelConfig),
}

impl Circuit {
    pub fn validate(&self) -> Result<()> {
        match self {
            Circuit::Series(c) => c.validate(),
            Circuit::Parallel(c) => c.validate(),
        }
    }

    pub fn excitation(&self) -> &Excitation {
        match self {
            Circuit::Series(c) => &c.excitation,
            Circuit::Parallel(c) => &c.excitation,
        }
    }

    pub fn excitation_mut(&mut self) -> &mut Excitation {
        match self {
            Circuit::Series(c) => &mut c.excitation,
            Circuit::Parallel(c) => &mut c.excitation,
        }
    }

    pub fn nonlinearity(&self) -> &Nonlinearity {
        match self {
            Circuit::Series(c) => &c.nonlinearity,
            Circuit::Parallel(c) => &c.nonlinearity,
        }
    }

    pub fn nonlinearity_mut(&mut self) -> &mut Nonlinearity {
        match self {
            Circuit::Series(c) => &mut c.nonlinearity,
            Circuit::Parallel(c) => &mut c.nonlinearity,
        }
    }

    pub fn period(&self) -> f64 {
        self.excitation().period()
    }

    /// Number of state components of the integrated model.
    pub fn dim(&self) -> usize {
        match self {
            Circuit::Series(_) => 2,
            Circuit::Parallel(p) if p.parasitic_ratio == 0.0 => 2,
            Circuit::Parallel(_) => 3,
        }
    }

    pub fn model_label(&self) -> String {
        let topology = match self {
            Circuit::Series(_) => "series",
            Circuit::Parallel(p) if p.parasitic_ratio == 0.0 => "parallel_reduced",
            Circuit::Parallel(_) => "parallel",
        };
        format!("{topology}/{}", self.nonlinearity().label())
    }

    /// Integrates from the zero state over `periods` excitation periods.
    pub fn simulate(
        &self,
        periods: usize,
        samples_per_period: usize,
        settings: &IntegratorSettings,
    ) -> Result<Trajectory> {
        self.simulate_from(&vec![0.0; self.dim()], periods, samples_per_period, settings)
    }

    pub fn simulate_from(
        &self,
        initial: &[f64],
        periods: usize,
        samples_per_period: usize,
        settings: &IntegratorSettings,
    ) -> Result<Trajectory> {
        self.validate()?;
        check_sampling(periods, samples_per_period)?;
        let period = self.period();
        let grid = UniformGrid::periodic(period, samples_per_period, periods);
        let (solution, names, settings) = match *self {
            Circuit::Series(cfg) => {
                let mut sys = cfg;
                let sol = solve_on_grid(&mut sys, initial, grid, settings)?;
                (sol, vec!["x", "y"], settings.clone())
            }
            Circuit::Parallel(cfg) if cfg.parasitic_ratio == 0.0 => {
                if initial.len() != 2 {
                    return Err(Error::InvalidParameter(
                        "reduced parallel model has 2 states".into(),
                    ));
                }
                let mut sys = ReducedParallelSystem::new(cfg, [initial[0], initial[1]])?;
                let sol = solve_on_grid(&mut sys, initial, grid, settings)?;
                (sol, vec!["x", "y"], settings.clone())
            }
            Circuit::Parallel(cfg) => {
                let settings = settings.clone().with_max_step(0.5 * cfg.parasitic_ratio);
                let mut sys = ParallelSystem(cfg);
                let sol = solve_on_grid(&mut sys, initial, grid, &settings)?;
                (sol, vec!["x", "y", "z"], settings)
            }
        };
        let excitation = *self.excitation();
        let t: Vec<f64> = solution.times().collect();
        let g = t.iter().map(|&t| excitation.value(t)).collect();
        Ok(Trajectory {
            t,
            dim: solution.dim,
            states: solution.states,
            excitation: g,
            meta: TrajectoryMeta {
                model: self.model_label(),
                period,
                samples_per_period,
                state_names: names.into_iter().map(String::from).collect(),
                current_channel: 1,
                settings,
                stats: solution.stats,
                parameters: serde_json::to_value(self).unwrap_or(serde_json::Value::Null),
            },
        })
    }
}

fn check_sampling(periods: usize, samples_per_period: usize) -> Result<()> {
    if samples_per_period < 64 {
        return Err(Error::InvalidParameter(format!(
            "samples_per_period must be >= 64, got {samples_per_period}"
        )));
    }
    if periods == 0 {
        return Err(Error::InvalidParameter("periods must be >= 1".into()));
    }
    Ok(())
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Topology {
    Series,
    Parallel,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DiodeArrangement {
    Single,
    AntiParallel,
}

/// Component values of a physical resonator, SI units.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DimensionalConfig {
    #[serde(rename = "R")]
    pub resistance: f64,
    #[serde(rename = "L")]
    pub inductance: f64,
    #[serde(rename = "C")]
    pub capacitance: f64,
    /// Parasitic capacitance of the parallel circuit.
    #[serde(rename = "C_p", default)]
    pub parasitic_capacitance: f64,
    #[serde(rename = "R_D")]
    pub diode_resistance: f64,
    pub v_gamma: f64,
    #[serde(rename = "V_DC")]
    pub v_dc: f64,
    #[serde(rename = "V_A")]
    pub v_a: f64,
    /// Angular excitation frequency, rad/s.
    pub omega: f64,
    pub topology: Topology,
    pub diode: DiodeArrangement,
}

/// Result of scaling a [`DimensionalConfig`] to normalized form.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Normalized {
    pub circuit: Circuit,
    /// `1 / sqrt(L C)`.
    pub resonance: f64,
    /// `R / L`.
    pub bandwidth: f64,
    /// Relative mismatch between `omega R C` and `omega BW / omega_r^2`.
    pub identity_residual: f64,
}

impl DimensionalConfig {
    /// The experimental series resonator: 10 kOhm, 1 mH, 5.6 nF, driven
    /// with 1 V offset and 2 V amplitude, 0.6 V silicon threshold. `R_D`
    /// is 200 Ohm, about the dynamic resistance of a small switching diode
    /// at the sub-milliamp currents this circuit carries (slope 50).
    pub fn experimental_series(frequency_hz: f64) -> Self {
        Self {
            resistance: 10e3,
            inductance: 1e-3,
            capacitance: 5.6e-9,
            parasitic_capacitance: 0.0,
            diode_resistance: 200.0,
            v_gamma: 0.6,
            v_dc: 1.0,
            v_a: 2.0,
            omega: 2.0 * PI * frequency_hz,
            topology: Topology::Series,
            diode: DiodeArrangement::Single,
        }
    }

    pub fn validate(&self) -> Result<()> {
        positive("R", self.resistance)?;
        positive("L", self.inductance)?;
        positive("C", self.capacitance)?;
        positive("R_D", self.diode_resistance)?;
        positive("v_gamma", self.v_gamma)?;
        positive("omega", self.omega)?;
        if !(self.parasitic_capacitance >= 0.0 && self.parasitic_capacitance.is_finite()) {
            return Err(Error::InvalidParameter(format!(
                "C_p must be >= 0, got {}",
                self.parasitic_capacitance
            )));
        }
        if !(self.v_a >= 0.0 && self.v_a.is_finite() && self.v_dc.is_finite()) {
            return Err(Error::InvalidParameter(
                "V_A must be >= 0 and V_DC finite".into(),
            ));
        }
        Ok(())
    }

    /// `R C`, the time unit of the normalized model.
    pub fn time_scale(&self) -> f64 {
        self.resistance * self.capacitance
    }

    pub fn nonlinearity(&self) -> Nonlinearity {
        let slope = self.resistance / self.diode_resistance;
        match self.diode {
            DiodeArrangement::Single => Nonlinearity::SingleDiode { slope },
            DiodeArrangement::AntiParallel => Nonlinearity::AntiParallel { slope },
        }
    }

    pub fn normalize(&self) -> Result<Normalized> {
        self.validate()?;
        let (r, l, c) = (self.resistance, self.inductance, self.capacitance);
        let excitation = Excitation {
            offset: self.v_dc / self.v_gamma,
            amplitude: self.v_a / self.v_gamma,
            frequency: self.omega * r * c,
        };
        let b = r * r * c / l;
        let nonlinearity = self.nonlinearity();
        let circuit = match self.topology {
            Topology::Series => Circuit::Series(SeriesConfig {
                excitation,
                time_constant_ratio: b,
                nonlinearity,
            }),
            Topology::Parallel => Circuit::Parallel(ParallelConfig {
                excitation,
                time_constant_ratio: b,
                parasitic_ratio: self.parasitic_capacitance / c,
                nonlinearity,
            }),
        };
        let resonance = 1.0 / (l * c).sqrt();
        let bandwidth = r / l;
        let via_resonance = self.omega * bandwidth / (resonance * resonance);
        let identity_residual =
            (via_resonance - excitation.frequency).abs() / excitation.frequency;
        if identity_residual > 1e-12 {
            return Err(Error::InvalidParameter(format!(
                "normalized frequency identity violated (residual {identity_residual:e})"
            )));
        }
        Ok(Normalized {
            circuit,
            resonance,
            bandwidth,
            identity_residual,
        })
    }

    fn diode_current(&self, v: f64) -> f64 {
        diode_current(
            v,
            self.v_gamma,
            self.diode_resistance,
            self.diode == DiodeArrangement::AntiParallel,
        )
        .unwrap_or(f64::NAN)
    }

    fn source(&self, t: f64) -> f64 {
        self.v_dc + self.v_a * (self.omega * t).sin()
    }

    pub fn period(&self) -> f64 {
        2.0 * PI / self.omega
    }

    /// Integrates the circuit in SI units from rest. States are `(v_C, i_L)`
    /// for the series circuit and `(v_C, i_L, v_Cp)` for the parallel one;
    /// time in seconds, excitation in volts.
    pub fn simulate(
        &self,
        periods: usize,
        samples_per_period: usize,
        settings: &IntegratorSettings,
    ) -> Result<Trajectory> {
        self.validate()?;
        check_sampling(periods, samples_per_period)?;
        if self.topology == Topology::Parallel && self.parasitic_capacitance == 0.0 {
            return Err(Error::InvalidParameter(
                "dimensional parallel model needs C_p > 0".into(),
            ));
        }
        let period = self.period();
        let grid = UniformGrid::periodic(period, samples_per_period, periods);
        // Tolerances are given in normalized units; convert the time bound.
        let mut settings = settings.clone();
        settings.max_step *= self.time_scale();
        if let Some(h) = settings.initial_step.as_mut() {
            *h *= self.time_scale();
        }
        let (solution, names) = match self.topology {
            Topology::Series => {
                let mut sys = DimensionalSeries(*self);
                (solve_on_grid(&mut sys, &[0.0, 0.0], grid, &settings)?, vec!["v_C", "i_L"])
            }
            Topology::Parallel => {
                let eps = self.parasitic_capacitance / self.capacitance;
                settings = settings.with_max_step(0.5 * eps * self.time_scale());
                let mut sys = DimensionalParallel(*self);
                (
                    solve_on_grid(&mut sys, &[0.0, 0.0, 0.0], grid, &settings)?,
                    vec!["v_C", "i_L", "v_Cp"],
                )
            }
        };
        let t: Vec<f64> = solution.times().collect();
        let g = t.iter().map(|&t| self.source(t)).collect();
        Ok(Trajectory {
            t,
            dim: solution.dim,
            states: solution.states,
            excitation: g,
            meta: TrajectoryMeta {
                model: format!(
                    "dimensional/{}",
                    match self.topology {
                        Topology::Series => "series",
                        Topology::Parallel => "parallel",
                    }
                ),
                period,
                samples_per_period,
                state_names: names.into_iter().map(String::from).collect(),
                current_channel: 1,
                settings,
                stats: solution.stats,
                parameters: json!(self),
            },
        })
    }
}

struct DimensionalSeries(DimensionalConfig);

impl OdeSystem for DimensionalSeries {
    fn dim(&self) -> usize {
        2
    }

    fn rhs(&self, t: f64, s: &[f64], d: &mut [f64]) {
        let c = &self.0;
        let (v_c, i_l) = (s[0], s[1]);
        d[0] = (i_l - c.diode_current(v_c)) / c.capacitance;
        d[1] = (c.source(t) - c.resistance * i_l - v_c) / c.inductance;
    }

    fn abs_tol_scale(&self, component: usize) -> f64 {
        match component {
            0 => self.0.v_gamma,
            _ => self.0.v_gamma / self.0.resistance,
        }
    }
}

struct DimensionalParallel(DimensionalConfig);

impl OdeSystem for DimensionalParallel {
    fn dim(&self) -> usize {
        3
    }

    fn rhs(&self, t: f64, s: &[f64], d: &mut [f64]) {
        let c = &self.0;
        let (v_c, i_l, v_cp) = (s[0], s[1], s[2]);
        d[0] = (c.source(t) - v_c - i_l * c.resistance) / (c.resistance * c.capacitance);
        d[1] = (v_c - v_cp) / c.inductance;
        d[2] = (i_l - c.diode_current(v_cp)) / c.parasitic_capacitance;
    }

    fn abs_tol_scale(&self, component: usize) -> f64 {
        match component {
            1 => self.0.v_gamma / self.0.resistance,
            _ => self.0.v_gamma,
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn fig2(a: f64, omega: f64) -> SeriesConfig {
        SeriesConfig {
            excitation: Excitation {
                offset: 1.0,
                amplitude: 2.0,
                frequency: omega,
            },
            time_constant_ratio: 0.2,
            nonlinearity: Nonlinearity::SingleDiode { slope: a },
        }
    }

    fn fig4(a: f64, omega: f64, eps: f64) -> ParallelConfig {
        ParallelConfig {
            excitation: Excitation {
                offset: 1.0,
                amplitude: 2.0,
                frequency: omega,
            },
            time_constant_ratio: 0.2,
            parasitic_ratio: eps,
            nonlinearity: Nonlinearity::SingleDiode { slope: a },
        }
    }

    #[test]
    fn series_rhs_examples() {
        let cfg = fig2(1.0, 0.1);
        let d = cfg.rhs(0.0, [0.0, 0.0]);
        assert_eq!(d[0], 0.0);
        assert!((d[1] - 0.2).abs() < 1e-15);
        // g = 1 at t = 0.
        let d = cfg.rhs(0.0, [2.0, 0.0]);
        assert!((d[0] + 1.0).abs() < 1e-15);
        assert!((d[1] + 0.2).abs() < 1e-15);
    }

    #[test]
    fn parallel_rhs_examples() {
        let cfg = fig4(1.0, 0.1, 0.01);
        assert_eq!(cfg.rhs(0.0, [0.0, 0.0, 0.0]).unwrap(), [1.0, 0.0, 0.0]);
        let d = cfg.rhs(0.0, [1.0, 0.0, 2.0]).unwrap();
        assert_eq!(d[0], 0.0);
        assert!((d[1] + 0.2).abs() < 1e-15);
        assert!((d[2] + 100.0).abs() < 1e-12);
        assert!(fig4(1.0, 0.1, 0.0).rhs(0.0, [0.0; 3]).is_err());
    }

    #[test]
    fn reduced_inverse_examples() {
        let anti = Nonlinearity::AntiParallel { slope: 2.0 };
        assert_eq!(recover_device_state(&anti, 0.0, 1.0).unwrap().z, 1.5);
        assert_eq!(recover_device_state(&anti, 0.0, -1.0).unwrap().z, -1.5);
        assert_eq!(recover_device_state(&anti, 0.4, 0.0).unwrap().z, 0.4);
        assert_eq!(recover_device_state(&anti, 3.0, 0.0).unwrap().z, 1.0);
        let single = Nonlinearity::SingleDiode { slope: 1.0 };
        let d = recover_device_state(&single, -2.0, 0.0).unwrap();
        assert_eq!((d.z, d.clamped), (-2.0, false));
        let d = recover_device_state(&single, 0.5, -0.1).unwrap();
        assert_eq!((d.z, d.clamped), (0.5, true));
        assert!(recover_device_state(&Nonlinearity::None, 0.0, 1.0).is_err());
        assert!(matches!(
            recover_device_state(&Nonlinearity::SingleDiode { slope: 0.0 }, 0.0, 1.0),
            Err(Error::NonInvertible(_))
        ));
    }

    #[test]
    fn reduced_rhs_in_dead_zone_holds_current() {
        let mut cfg = fig4(1.0, 0.1, 0.0);
        cfg.nonlinearity = Nonlinearity::AntiParallel { slope: 1.0 };
        let r = cfg.reduced_rhs(0.0, [0.3, 0.0]).unwrap();
        assert_eq!(r.z, 0.3);
        assert_eq!(r.deriv[1], 0.0);
        let r = cfg.reduced_rhs(0.0, [1.5, 0.0]).unwrap();
        assert!((r.deriv[1] - 0.2 * 0.5).abs() < 1e-15);
    }

    #[test]
    fn excitation_examples() {
        let e = Excitation {
            offset: 1.0,
            amplitude: 2.0,
            frequency: 0.5,
        };
        assert_eq!(e.value(0.0), 1.0);
        assert!((e.value(PI / 0.5) - 1.0).abs() < 1e-15);
        let e = Excitation {
            offset: 0.0,
            amplitude: 2.0,
            frequency: 0.5,
        };
        assert_eq!(e.value(PI / 2.0 / 0.5), 2.0);
    }

    #[test]
    fn normalize_experimental_preset() {
        let mut d = DimensionalConfig::experimental_series(1e3);
        let n = d.normalize().unwrap();
        let Circuit::Series(s) = n.circuit else {
            panic!("expected series")
        };
        assert!((s.time_constant_ratio - 560.0).abs() < 1e-9);
        assert!((n.resonance - 4.2258e5).abs() / 4.2258e5 < 1e-4);
        assert!((n.bandwidth - 1e7).abs() < 1e-3);
        assert!((s.excitation.offset - 5.0 / 3.0).abs() < 1e-15);
        assert!((s.excitation.amplitude - 10.0 / 3.0).abs() < 1e-15);
        assert!(n.identity_residual <= 1e-12);

        d.omega = n.resonance * n.resonance / n.bandwidth;
        let n = d.normalize().unwrap();
        assert!((n.circuit.excitation().frequency - 1.0).abs() < 1e-12);
    }

    #[test]
    fn normalize_rejects_invalid_components() {
        let mut d = DimensionalConfig::experimental_series(1e3);
        d.inductance = 0.0;
        assert!(d.normalize().is_err());
        let mut d = DimensionalConfig::experimental_series(1e3);
        d.parasitic_capacitance = -1e-12;
        assert!(d.normalize().is_err());
    }

    #[test]
    fn reduced_single_diode_never_goes_negative() {
        let circuit = Circuit::Parallel(fig4(1.0, 0.1, 0.0));
        let traj = circuit
            .simulate(6, 256, &IntegratorSettings::default())
            .unwrap();
        let y = traj.current();
        let min = y.iter().cloned().fold(f64::INFINITY, f64::min);
        assert!(min >= -1e-12, "min {min}");
        assert!(traj.meta.stats.switches >= 10, "{:?}", traj.meta.stats);
    }

    #[test]
    fn reduced_dead_zone_sticks_without_chatter() {
        let mut cfg = fig4(1.0, 0.1, 0.0);
        cfg.excitation.offset = 0.0;
        cfg.nonlinearity = Nonlinearity::AntiParallel { slope: 1.0 };
        let traj = Circuit::Parallel(cfg)
            .simulate(6, 256, &IntegratorSettings::default())
            .unwrap();
        // Two conduction intervals per period, each entered and left once.
        assert!(traj.meta.stats.switches <= 6 * 4 + 2, "{:?}", traj.meta.stats);
        assert!(traj.meta.stats.accepted < 20_000, "{:?}", traj.meta.stats);
    }
}
