//! Command-line front end.
//!
//! Every command reads a TOML run file. Outputs go to `--out`, else
//! `$PINCHSIM_OUT`, else the run file's `[output] dir`, else `./out`.
//!
//! Exit codes: 0 success, 1 other failure, 2 bad config or input data,
//! 3 integration failure, 4 steady state not reached.

use std::collections::BTreeMap;
use std::f64::consts::PI;
use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use clap::{Parser, Subcommand};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use serde_json::json;

use crate::analysis::{
    analyze_loop, lobe_polygons, periodicity_residual, steady_loop, AnalysisSettings,
    LissajousLoop, PinchReport,
};
use crate::circuits::{
    Circuit, DiodeArrangement, DimensionalConfig, Excitation, ParallelConfig, SeriesConfig,
    Topology,
};
use crate::gates::{
    extract_device, ingest_loop_csv, normalized_rms_difference, truth_table, write_atomic,
    write_loop_csv, DeviceScale, ExtractOptions, GateConfig, IngestOptions, LoopDeviceModel,
    SyntheticMemristor, TruthTable, INPUT_COMBINATIONS,
};
use crate::integrator::{IntegratorSettings, Trajectory};
use crate::nonlinearity::Nonlinearity;
use crate::{Error, Result};

pub const EXIT_OK: i32 = 0;
pub const EXIT_OTHER: i32 = 1;
pub const EXIT_CONFIG: i32 = 2;
pub const EXIT_INTEGRATION: i32 = 3;
pub const EXIT_NOT_CONVERGED: i32 = 4;

#[derive(Debug, Parser)]
#[command(name = "pinchsim", version, about = "Pinched hysteresis loops of nonlinear RLC resonators")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
    /// Output directory.
    #[arg(long, global = true, env = "PINCHSIM_OUT")]
    pub out: Option<PathBuf>,
    /// Worker threads for sweeps (default: all cores).
    #[arg(long, global = true)]
    pub jobs: Option<usize>,
    /// Reserved; recorded in outputs, nothing is random yet.
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    /// Overrides `[run] samples_per_period`.
    #[arg(long, global = true)]
    pub samples_per_period: Option<usize>,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Integrate one circuit; write trajectory, steady loop and report.
    Simulate {
        #[arg(long)]
        config: PathBuf,
    },
    /// Analyze a `t,v,i` loop file.
    Analyze {
        loop_csv: PathBuf,
        /// Optional run file supplying `[analysis]` and `[ingest]`.
        #[arg(long)]
        config: Option<PathBuf>,
    },
    /// Run a grid of simulations over the `[[sweep]]` axes.
    Sweep {
        #[arg(long)]
        config: PathBuf,
    },
    /// Truth tables of the `[[gate]]` entries.
    Gate {
        #[arg(long)]
        config: PathBuf,
    },
    /// Write a synthetic memristor trace as a loop file.
    Synth {
        #[arg(long)]
        config: Option<PathBuf>,
    },
}

/// Command-line overrides shared by all commands.
#[derive(Clone, Debug, Default)]
pub struct Options {
    pub out: Option<PathBuf>,
    pub jobs: Option<usize>,
    pub seed: Option<u64>,
    pub samples_per_period: Option<usize>,
}

impl Options {
    fn out_dir(&self, cfg: &RunConfig) -> PathBuf {
        self.out
            .clone()
            .or_else(|| cfg.output.dir.clone())
            .unwrap_or_else(|| PathBuf::from("out"))
    }
}

// ---------------------------------------------------------------------------
// Run file

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    #[serde(default)]
    pub run: RunSection,
    /// Normalized parameters.
    pub model: Option<ModelParams>,
    /// Component values; normalized before integration.
    pub dimensional: Option<DimensionalParams>,
    #[serde(default)]
    pub integrator: IntegratorSettings,
    #[serde(default)]
    pub analysis: AnalysisSettings,
    #[serde(default)]
    pub ingest: IngestOptions,
    #[serde(default)]
    pub sweep: Vec<SweepAxis>,
    #[serde(default)]
    pub output: OutputSection,
    #[serde(default)]
    pub gate: Vec<GateConfig>,
    pub device: Option<DeviceSpec>,
    /// Second device source; gate runs are repeated with it and compared.
    pub reference: Option<DeviceSpec>,
    pub synth: Option<SynthSection>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunSection {
    pub name: Option<String>,
    pub periods: usize,
    pub samples_per_period: usize,
}

impl Default for RunSection {
    fn default() -> Self {
        Self {
            name: None,
            periods: 30,
            samples_per_period: 1024,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum NonlinearityKind {
    None,
    SingleDiode,
    AntiParallel,
    Cubic,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelParams {
    pub topology: Topology,
    pub nonlinearity: NonlinearityKind,
    /// Diode slope `R / R_D`.
    #[serde(default = "one")]
    pub a: f64,
    /// Cubic coefficient.
    #[serde(default = "one")]
    pub k: f64,
    #[serde(rename = "A")]
    pub offset: f64,
    #[serde(rename = "B")]
    pub amplitude: f64,
    pub omega_n: f64,
    pub b: f64,
    /// Parasitic ratio of the parallel circuit; 0 selects the reduced model.
    #[serde(default)]
    pub epsilon: f64,
}

fn one() -> f64 {
    1.0
}

impl ModelParams {
    pub const PARAMETERS: [&'static str; 7] = ["a", "k", "A", "B", "omega_n", "b", "epsilon"];

    pub fn circuit(&self) -> Result<Circuit> {
        let nonlinearity = match self.nonlinearity {
            NonlinearityKind::None => Nonlinearity::None,
            NonlinearityKind::SingleDiode => Nonlinearity::SingleDiode { slope: self.a },
            NonlinearityKind::AntiParallel => Nonlinearity::AntiParallel { slope: self.a },
            NonlinearityKind::Cubic => Nonlinearity::Cubic { coefficient: self.k },
        };
        let excitation = Excitation {
            offset: self.offset,
            amplitude: self.amplitude,
            frequency: self.omega_n,
        };
        let circuit = match self.topology {
            Topology::Series => {
                if self.epsilon != 0.0 {
                    return Err(Error::Config(
                        "epsilon only applies to the parallel topology".into(),
                    ));
                }
                Circuit::Series(SeriesConfig {
                    excitation,
                    time_constant_ratio: self.b,
                    nonlinearity,
                })
            }
            Topology::Parallel => Circuit::Parallel(ParallelConfig {
                excitation,
                time_constant_ratio: self.b,
                parasitic_ratio: self.epsilon,
                nonlinearity,
            }),
        };
        circuit.validate()?;
        Ok(circuit)
    }

    fn set(&mut self, name: &str, value: f64) -> Result<()> {
        let slot = match name {
            "a" => &mut self.a,
            "k" => &mut self.k,
            "A" => &mut self.offset,
            "B" => &mut self.amplitude,
            "omega_n" => &mut self.omega_n,
            "b" => &mut self.b,
            "epsilon" => &mut self.epsilon,
            _ => return Err(unknown_axis(name, &Self::PARAMETERS)),
        };
        *slot = value;
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DimensionalParams {
    #[serde(rename = "R")]
    pub resistance: f64,
    #[serde(rename = "L")]
    pub inductance: f64,
    #[serde(rename = "C")]
    pub capacitance: f64,
    #[serde(rename = "C_p", default)]
    pub parasitic_capacitance: f64,
    #[serde(rename = "R_D")]
    pub diode_resistance: f64,
    pub v_gamma: f64,
    #[serde(rename = "V_DC")]
    pub v_dc: f64,
    #[serde(rename = "V_A")]
    pub v_a: f64,
    pub frequency_hz: f64,
    pub topology: Topology,
    pub diode: DiodeArrangement,
}

impl DimensionalParams {
    pub const PARAMETERS: [&'static str; 9] =
        ["R", "L", "C", "C_p", "R_D", "v_gamma", "V_DC", "V_A", "frequency_hz"];

    pub fn config(&self) -> DimensionalConfig {
        DimensionalConfig {
            resistance: self.resistance,
            inductance: self.inductance,
            capacitance: self.capacitance,
            parasitic_capacitance: self.parasitic_capacitance,
            diode_resistance: self.diode_resistance,
            v_gamma: self.v_gamma,
            v_dc: self.v_dc,
            v_a: self.v_a,
            omega: 2.0 * PI * self.frequency_hz,
            topology: self.topology,
            diode: self.diode,
        }
    }

    fn set(&mut self, name: &str, value: f64) -> Result<()> {
        let slot = match name {
            "R" => &mut self.resistance,
            "L" => &mut self.inductance,
            "C" => &mut self.capacitance,
            "C_p" => &mut self.parasitic_capacitance,
            "R_D" => &mut self.diode_resistance,
            "v_gamma" => &mut self.v_gamma,
            "V_DC" => &mut self.v_dc,
            "V_A" => &mut self.v_a,
            "frequency_hz" => &mut self.frequency_hz,
            _ => return Err(unknown_axis(name, &Self::PARAMETERS)),
        };
        *slot = value;
        Ok(())
    }
}

fn unknown_axis(name: &str, known: &[&str]) -> Error {
    Error::Config(format!(
        "sweep axis `{name}` is not a parameter of this block (expected one of {})",
        known.join(", ")
    ))
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SweepAxis {
    pub parameter: String,
    pub values: Vec<f64>,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct OutputSection {
    pub dir: Option<PathBuf>,
    /// Skip the full trajectory file.
    pub no_trajectory: bool,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DeviceSourceKind {
    /// Extract from the steady loop of the run file's circuit.
    Resonator,
    /// Read a `t,v,i` file.
    Csv,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DeviceSpec {
    pub source: DeviceSourceKind,
    pub path: Option<PathBuf>,
    /// Volts per normalized unit for a `[model]` resonator (default 0.6).
    pub v_gamma: Option<f64>,
    /// Ohms of the resonator resistor for a `[model]` resonator (default 10k).
    #[serde(rename = "R")]
    pub resistance: Option<f64>,
    #[serde(default)]
    pub ingest: IngestOptions,
    #[serde(default)]
    pub extract: ExtractOptions,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SynthSection {
    pub file: PathBuf,
    pub samples_per_period: usize,
    pub periods: usize,
    pub settle: usize,
    pub device: SyntheticMemristor,
}

impl Default for SynthSection {
    fn default() -> Self {
        Self {
            file: PathBuf::from("memristor.csv"),
            samples_per_period: 1024,
            periods: 2,
            settle: 5,
            device: SyntheticMemristor::default(),
        }
    }
}

/// Which parameter block a run uses.
#[derive(Clone, Debug, PartialEq)]
pub enum Parameters {
    Model(ModelParams),
    Dimensional(DimensionalParams),
}

impl Parameters {
    fn set(&mut self, name: &str, value: f64) -> Result<()> {
        match self {
            Parameters::Model(m) => m.set(name, value),
            Parameters::Dimensional(d) => d.set(name, value),
        }
    }

    pub fn circuit(&self) -> Result<Circuit> {
        match self {
            Parameters::Model(m) => m.circuit(),
            Parameters::Dimensional(d) => Ok(d.config().normalize()?.circuit),
        }
    }

    fn describe(&self) -> Result<serde_json::Value> {
        Ok(match self {
            Parameters::Model(m) => json!({ "model": m, "circuit": m.circuit()? }),
            Parameters::Dimensional(d) => {
                let n = d.config().normalize()?;
                json!({
                    "dimensional": d,
                    "circuit": n.circuit,
                    "resonance_rad_s": n.resonance,
                    "bandwidth_rad_s": n.bandwidth,
                })
            }
        })
    }
}

impl RunConfig {
    pub fn from_toml(text: &str, origin: &str) -> Result<Self> {
        let cfg: RunConfig =
            toml::from_str(text).map_err(|e| Error::Config(format!("{origin}: {e}")))?;
        cfg.check(origin)?;
        Ok(cfg)
    }

    /// Reads a run file. Relative paths inside it resolve against its
    /// directory.
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let mut cfg = Self::from_toml(&text, &path.display().to_string())?;
        let base = path.parent().unwrap_or(Path::new(""));
        let rebase = |p: &mut PathBuf| {
            if p.is_relative() {
                *p = base.join(&*p);
            }
        };
        for spec in [cfg.device.as_mut(), cfg.reference.as_mut()].into_iter().flatten() {
            if let Some(p) = spec.path.as_mut() {
                rebase(p);
            }
        }
        if let Some(dir) = cfg.output.dir.as_mut() {
            rebase(dir);
        }
        Ok(cfg)
    }

    fn check(&self, origin: &str) -> Result<()> {
        let bad = |m: String| Err(Error::Config(format!("{origin}: {m}")));
        if self.model.is_some() && self.dimensional.is_some() {
            return bad("give either [model] or [dimensional], not both".into());
        }
        if let Some(params) = self.parameters_opt() {
            let mut probe = params.clone();
            for axis in &self.sweep {
                if axis.values.is_empty() {
                    return bad(format!("sweep axis `{}` has no values", axis.parameter));
                }
                probe
                    .set(&axis.parameter, axis.values[0])
                    .map_err(|e| Error::Config(format!("{origin}: {e}")))?;
            }
            let mut seen = std::collections::HashSet::new();
            for axis in &self.sweep {
                if !seen.insert(axis.parameter.as_str()) {
                    return bad(format!("sweep axis `{}` given twice", axis.parameter));
                }
            }
        } else if !self.sweep.is_empty() {
            return bad("[[sweep]] needs a [model] or [dimensional] block".into());
        }
        for spec in [&self.device, &self.reference].into_iter().flatten() {
            if spec.source == DeviceSourceKind::Csv && spec.path.is_none() {
                return bad("csv device needs `path`".into());
            }
        }
        self.integrator
            .validate()
            .and_then(|_| self.analysis.validate())
            .map_err(|e| Error::Config(format!("{origin}: {e}")))?;
        for g in &self.gate {
            g.validate().map_err(|e| Error::Config(format!("{origin}: [[gate]]: {e}")))?;
        }
        Ok(())
    }

    fn parameters_opt(&self) -> Option<Parameters> {
        match (&self.model, &self.dimensional) {
            (Some(m), None) => Some(Parameters::Model(m.clone())),
            (None, Some(d)) => Some(Parameters::Dimensional(d.clone())),
            _ => None,
        }
    }

    pub fn parameters(&self) -> Result<Parameters> {
        self.parameters_opt()
            .ok_or_else(|| Error::Config("run file needs a [model] or [dimensional] block".into()))
    }

    fn sampling(&self, opts: &Options) -> (usize, usize) {
        (
            self.run.periods,
            opts.samples_per_period.unwrap_or(self.run.samples_per_period),
        )
    }
}

// ---------------------------------------------------------------------------
// Shared pipeline

/// Trajectory, steady loop and report of one parameter point.
#[derive(Clone, Debug)]
pub struct PointResult {
    pub trajectory: Trajectory,
    pub lissajous: LissajousLoop,
    pub report: PinchReport,
}

/// Integrates and analyzes one point. The report is computed from the
/// steady loop alone, so re-analyzing the written loop file reproduces it.
pub fn run_point(
    params: &Parameters,
    periods: usize,
    samples_per_period: usize,
    integrator: &IntegratorSettings,
    analysis: &AnalysisSettings,
) -> Result<PointResult> {
    let circuit = params.circuit()?;
    let trajectory = circuit.simulate(periods, samples_per_period, integrator)?;
    let lissajous = steady_loop(
        &trajectory,
        analysis.discard_periods,
        analysis.check_periods,
        analysis.periodicity_tolerance,
    )?;
    let mut report = analyze_loop(&lissajous, analysis)?;
    report.periodicity_residual = Some(periodicity_residual(&trajectory, analysis.check_periods)?);
    report.parameters = params.describe()?;
    Ok(PointResult {
        trajectory,
        lissajous,
        report,
    })
}

fn loop_rows(lp: &LissajousLoop) -> Vec<[f64; 3]> {
    lp.points
        .iter()
        .zip(&lp.times)
        .map(|(p, &t)| [t, p[0], p[1]])
        .collect()
}

pub fn write_trajectory_csv(path: &Path, traj: &Trajectory) -> Result<()> {
    let map = |e: csv::Error| Error::Config(format!("{}: {e}", path.display()));
    let mut w = csv::Writer::from_writer(Vec::new());
    let mut header = vec!["t".to_string()];
    header.extend(traj.meta.state_names.iter().cloned());
    header.push("g".into());
    w.write_record(&header).map_err(map)?;
    for k in 0..traj.len() {
        let mut row = vec![format!("{:e}", traj.t[k])];
        row.extend(traj.state(k).iter().map(|v| format!("{v:e}")));
        row.push(format!("{:e}", traj.excitation[k]));
        w.write_record(&row).map_err(map)?;
    }
    let body = w
        .into_inner()
        .map_err(|e| Error::Config(format!("{}: {e}", path.display())))?;
    write_atomic(path, &body)
}

/// Gnuplot data file: index 0 the loop, index 1 the pinch points, then one
/// block per lobe polygon.
pub fn annotation_text(lp: &LissajousLoop, report: &PinchReport) -> String {
    let mut s = String::new();
    let _ = writeln!(s, "# pinchsim annotations v1");
    let _ = writeln!(
        s,
        "# pinch_count {} lobes {} total_area {:e}",
        report.pinch_count,
        report.lobes.len(),
        report.total_area
    );
    let _ = writeln!(s, "# index 0: loop  (u w)");
    for p in &lp.points {
        let _ = writeln!(s, "{:e} {:e}", p[0], p[1]);
    }
    let _ = write!(s, "\n\n# index 1: pinch points  (u w tangent_gap)\n");
    for p in &report.pinches {
        let _ = writeln!(s, "{:e} {:e} {:e}", p.location[0], p.location[1], p.tangent_gap);
    }
    if report.pinches.is_empty() {
        // Keeps the block count fixed for plotting scripts.
        let _ = writeln!(s, "NaN NaN NaN");
    }
    let polygons = lobe_polygons(lp, &report.pinches).unwrap_or_default();
    for (k, (lobe, polygon)) in report.lobes.iter().zip(&polygons).enumerate() {
        let _ = write!(
            s,
            "\n\n# index {}: lobe {k}  area {:e} signed {:e}\n",
            k + 2,
            lobe.area,
            lobe.signed_area
        );
        for v in polygon.iter().chain(polygon.first()) {
            let _ = writeln!(s, "{:e} {:e}", v[0], v[1]);
        }
    }
    s
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let mut body = serde_json::to_vec_pretty(value)
        .map_err(|e| Error::Config(format!("{}: {e}", path.display())))?;
    body.push(b'\n');
    write_atomic(path, &body)
}

fn make_dir(dir: &Path) -> Result<()> {
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))
}

fn write_point(dir: &Path, stem: &str, point: &PointResult, with_trajectory: bool) -> Result<()> {
    if with_trajectory {
        write_trajectory_csv(&dir.join(format!("{stem}trajectory.csv")), &point.trajectory)?;
    }
    let comments = vec![
        "pinchsim loop v1".to_string(),
        format!("model {}", point.trajectory.meta.model),
        "units normalized: v = excitation g, i = current y".to_string(),
    ];
    write_loop_csv(
        &dir.join(format!("{stem}loop.csv")),
        &loop_rows(&point.lissajous),
        &comments,
    )?;
    write_json(&dir.join(format!("{stem}report.json")), &point.report)?;
    write_atomic(
        &dir.join(format!("{stem}annotations.dat")),
        annotation_text(&point.lissajous, &point.report).as_bytes(),
    )
}

// ---------------------------------------------------------------------------
// Commands

pub fn cmd_simulate(cfg: &RunConfig, opts: &Options) -> Result<PointResult> {
    let params = cfg.parameters()?;
    let (periods, spp) = cfg.sampling(opts);
    let point = run_point(&params, periods, spp, &cfg.integrator, &cfg.analysis)?;
    let dir = opts.out_dir(cfg);
    make_dir(&dir)?;
    write_point(&dir, "", &point, !cfg.output.no_trajectory)?;
    Ok(point)
}

#[derive(Clone, Debug)]
pub struct AnalyzeResult {
    pub report: PinchReport,
    pub rows: usize,
    pub duplicates_removed: usize,
}

pub fn cmd_analyze(loop_csv: &Path, cfg: &RunConfig, opts: &Options) -> Result<AnalyzeResult> {
    let ingested = ingest_loop_csv(loop_csv, &cfg.ingest)?;
    let report = analyze_loop(&ingested.lissajous, &cfg.analysis)?;
    let dir = opts.out_dir(cfg);
    make_dir(&dir)?;
    write_json(&dir.join("report.json"), &report)?;
    write_atomic(
        &dir.join("annotations.dat"),
        annotation_text(&ingested.lissajous, &report).as_bytes(),
    )?;
    Ok(AnalyzeResult {
        report,
        rows: ingested.rows,
        duplicates_removed: ingested.duplicates_removed,
    })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SweepRow {
    pub index: usize,
    pub values: Vec<f64>,
    pub pinch_count: Option<usize>,
    pub lobe_areas: Vec<f64>,
    pub total_area: Option<f64>,
    pub phase_margin: Option<f64>,
    pub observable: Option<bool>,
    pub error: Option<String>,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Trend {
    Increasing,
    Decreasing,
    Constant,
    NonMonotone,
    /// Some points failed, or the axis has a single value.
    Undetermined,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SweepResult {
    pub axes: Vec<SweepAxis>,
    pub rows: Vec<SweepRow>,
    /// Trend of total lobe area along each axis, all other axes fixed.
    pub trends: BTreeMap<String, Trend>,
    pub seed: Option<u64>,
}

pub fn cmd_sweep(cfg: &RunConfig, opts: &Options) -> Result<SweepResult> {
    let base = cfg.parameters()?;
    if cfg.sweep.is_empty() {
        return Err(Error::Config("sweep needs at least one [[sweep]] axis".into()));
    }
    let (periods, spp) = cfg.sampling(opts);
    let grid = grid_points(&cfg.sweep);
    let dir = opts.out_dir(cfg);
    let points_dir = dir.join("points");
    make_dir(&points_dir)?;

    let run = |(index, values): (usize, &Vec<f64>)| -> SweepRow {
        let outcome = (|| {
            let mut params = base.clone();
            for (axis, &v) in cfg.sweep.iter().zip(values) {
                params.set(&axis.parameter, v)?;
            }
            let point = run_point(&params, periods, spp, &cfg.integrator, &cfg.analysis)?;
            write_point(&points_dir, &format!("{index:04}_"), &point, false)?;
            Ok::<_, Error>(point.report)
        })();
        match outcome {
            Ok(r) => SweepRow {
                index,
                values: values.clone(),
                pinch_count: Some(r.pinch_count),
                lobe_areas: r.lobes.iter().map(|l| l.area).collect(),
                total_area: Some(r.total_area),
                phase_margin: r.phase.as_ref().map(|p| p.margin),
                observable: r.phase.as_ref().map(|p| p.observable),
                error: None,
            },
            Err(e) => SweepRow {
                index,
                values: values.clone(),
                pinch_count: None,
                lobe_areas: Vec::new(),
                total_area: None,
                phase_margin: None,
                observable: None,
                error: Some(e.to_string()),
            },
        }
    };
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(opts.jobs.unwrap_or(0))
        .build()
        .map_err(|e| Error::Config(format!("--jobs: {e}")))?;
    let rows: Vec<SweepRow> =
        pool.install(|| grid.par_iter().enumerate().map(run).collect());

    let trends = cfg
        .sweep
        .iter()
        .enumerate()
        .map(|(k, axis)| (axis.parameter.clone(), axis_trend(&cfg.sweep, &rows, k)))
        .collect();
    let result = SweepResult {
        axes: cfg.sweep.clone(),
        rows,
        trends,
        seed: opts.seed,
    };
    write_atomic(&dir.join("sweep.csv"), sweep_table(&result).as_bytes())?;
    write_json(&dir.join("sweep.json"), &result)?;
    Ok(result)
}

/// Cartesian product, last axis fastest.
fn grid_points(axes: &[SweepAxis]) -> Vec<Vec<f64>> {
    let mut grid = vec![Vec::new()];
    for axis in axes {
        grid = grid
            .into_iter()
            .flat_map(|prefix| {
                axis.values.iter().map(move |&v| {
                    let mut p = prefix.clone();
                    p.push(v);
                    p
                })
            })
            .collect();
    }
    grid
}

fn axis_trend(axes: &[SweepAxis], rows: &[SweepRow], k: usize) -> Trend {
    if axes[k].values.len() < 2 {
        return Trend::Undetermined;
    }
    let stride: usize = axes[k + 1..].iter().map(|a| a.values.len()).product();
    let n = axes[k].values.len();
    let mut trends = Vec::new();
    for start in 0..rows.len() {
        if (start / stride) % n != 0 {
            continue;
        }
        let line: Option<Vec<f64>> = (0..n).map(|j| rows[start + j * stride].total_area).collect();
        let Some(line) = line else {
            return Trend::Undetermined;
        };
        let d: Vec<f64> = line.windows(2).map(|w| w[1] - w[0]).collect();
        trends.push(if d.iter().all(|&x| x > 0.0) {
            Trend::Increasing
        } else if d.iter().all(|&x| x < 0.0) {
            Trend::Decreasing
        } else if d.iter().all(|&x| x == 0.0) {
            Trend::Constant
        } else {
            Trend::NonMonotone
        });
    }
    if trends.windows(2).all(|w| w[0] == w[1]) {
        trends[0]
    } else {
        Trend::NonMonotone
    }
}

fn sweep_table(result: &SweepResult) -> String {
    let mut s = String::from("# pinchsim sweep v1\n");
    for (name, trend) in &result.trends {
        let _ = writeln!(s, "# total_area along {name}: {trend:?}");
    }
    let mut header: Vec<String> = vec!["index".into()];
    header.extend(result.axes.iter().map(|a| a.parameter.clone()));
    header.extend(
        ["pinch_count", "lobe_areas", "total_area", "phase_margin", "observable", "error"]
            .map(String::from),
    );
    let mut w = csv::Writer::from_writer(Vec::new());
    let _ = w.write_record(&header);
    let opt = |v: Option<String>| v.unwrap_or_default();
    for r in &result.rows {
        let mut row = vec![r.index.to_string()];
        row.extend(r.values.iter().map(|v| format!("{v:e}")));
        row.push(opt(r.pinch_count.map(|c| c.to_string())));
        row.push(
            r.lobe_areas
                .iter()
                .map(|a| format!("{a:e}"))
                .collect::<Vec<_>>()
                .join(";"),
        );
        row.push(opt(r.total_area.map(|a| format!("{a:e}"))));
        row.push(opt(r.phase_margin.map(|m| format!("{m:e}"))));
        row.push(opt(r.observable.map(|o| o.to_string())));
        row.push(r.error.clone().unwrap_or_default());
        let _ = w.write_record(&row);
    }
    s + &String::from_utf8_lossy(&w.into_inner().unwrap_or_default())
}

/// Builds a device model from a resonator run or a loop file.
pub fn load_device(cfg: &RunConfig, spec: &DeviceSpec, opts: &Options) -> Result<LoopDeviceModel> {
    match spec.source {
        DeviceSourceKind::Csv => {
            let path = spec
                .path
                .as_ref()
                .ok_or_else(|| Error::Config("csv device needs `path`".into()))?;
            let ingested = ingest_loop_csv(path, &spec.ingest)?;
            extract_device(&ingested.lissajous, DeviceScale::SI, &spec.extract)
        }
        DeviceSourceKind::Resonator => {
            let params = cfg.parameters()?;
            let scale = match &params {
                Parameters::Dimensional(d) => DeviceScale::resonator(d.v_gamma, d.resistance),
                Parameters::Model(_) => DeviceScale::resonator(
                    spec.v_gamma.unwrap_or(0.6),
                    spec.resistance.unwrap_or(10e3),
                ),
            };
            let (periods, spp) = cfg.sampling(opts);
            let traj = params.circuit()?.simulate(periods, spp, &cfg.integrator)?;
            let a = &cfg.analysis;
            let lp = steady_loop(&traj, a.discard_periods, a.check_periods, a.periodicity_tolerance)?;
            extract_device(&lp, scale, &spec.extract)
        }
    }
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct GateOutcome {
    pub gate: GateConfig,
    pub device: TruthTable,
    pub reference: Option<TruthTable>,
    /// Normalized RMS difference of the two sources' output waveforms.
    pub rms_difference: Option<f64>,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct GateSummary {
    pub gate: String,
    pub source: String,
    pub pattern: String,
    pub expected: String,
    pub correct: bool,
}

pub fn cmd_gate(cfg: &RunConfig, opts: &Options) -> Result<Vec<GateOutcome>> {
    if cfg.gate.is_empty() {
        return Err(Error::Config("gate needs at least one [[gate]] table".into()));
    }
    let spec = cfg
        .device
        .as_ref()
        .ok_or_else(|| Error::Config("gate needs a [device] table".into()))?;
    let device = load_device(cfg, spec, opts)?;
    let reference = cfg
        .reference
        .as_ref()
        .map(|r| load_device(cfg, r, opts))
        .transpose()?;
    let dir = opts.out_dir(cfg);
    make_dir(&dir)?;

    let mut outcomes = Vec::new();
    let mut table = String::from("# pinchsim truth table v1\nsource,gate,in1,in2,v_out,verdict,expected\n");
    let mut summary = Vec::new();
    for g in &cfg.gate {
        let run = |dev: &LoopDeviceModel| truth_table(g, [dev, dev], &cfg.integrator);
        let main = run(&device)?;
        let refr = reference.as_ref().map(run).transpose()?;
        let rms = match &refr {
            Some(r) => Some(normalized_rms_difference(&main.waveform(), &r.waveform())?),
            None => None,
        };
        let mut sources = vec![(source_label(spec), &main)];
        if let (Some(r), Some(spec)) = (&refr, &cfg.reference) {
            sources.push((source_label(spec), r));
        }
        for (label, tt) in &sources {
            let gate_name = format!("{:?}", tt.gate).to_lowercase();
            for (run, &[a, b]) in tt.runs.iter().zip(&INPUT_COMBINATIONS) {
                let combo = format!("{}{}", hl(a), hl(b));
                let mut w = csv::Writer::from_writer(Vec::new());
                let _ = w.write_record(["t", "v_in1", "v_in2", "v_out"]);
                for k in 0..run.t.len() {
                    let _ = w.write_record(
                        [run.t[k], run.v_in[0][k], run.v_in[1][k], run.v_out[k]]
                            .map(|v| format!("{v:e}")),
                    );
                }
                let mut body = format!("# pinchsim gate waveform v1\n# {label} {gate_name} {combo}\n").into_bytes();
                body.extend(w.into_inner().unwrap_or_default());
                write_atomic(&dir.join(format!("{label}_{gate_name}_{combo}.csv")), &body)?;
                let _ = writeln!(
                    table,
                    "{label},{gate_name},{},{},{:e},{},{}",
                    hl(a),
                    hl(b),
                    run.final_output,
                    run.verdict.symbol(),
                    hl(tt.gate.expected(a, b))
                );
            }
            summary.push(GateSummary {
                gate: gate_name,
                source: label.clone(),
                pattern: tt.pattern(),
                expected: tt.expected_pattern(),
                correct: tt.is_correct(),
            });
        }
        outcomes.push(GateOutcome {
            gate: g.clone(),
            device: main,
            reference: refr,
            rms_difference: rms,
        });
    }
    write_atomic(&dir.join("truth_table.csv"), table.as_bytes())?;
    let rms: Vec<_> = outcomes
        .iter()
        .map(|o| json!({ "gate": o.gate.gate, "rms_difference": o.rms_difference }))
        .collect();
    write_json(
        &dir.join("gate_report.json"),
        &json!({
            "format": "pinchsim-gates",
            "version": 1,
            "tables": summary,
            "source_agreement": rms,
            "device": device,
            "reference": reference,
            "seed": opts.seed,
        }),
    )?;
    Ok(outcomes)
}

fn hl(high: bool) -> char {
    if high {
        'H'
    } else {
        'L'
    }
}

fn source_label(spec: &DeviceSpec) -> String {
    match spec.source {
        DeviceSourceKind::Resonator => "resonator".into(),
        DeviceSourceKind::Csv => spec
            .path
            .as_ref()
            .and_then(|p| p.file_stem())
            .map_or("csv".into(), |s| s.to_string_lossy().into_owned()),
    }
}

/// Writes the synthetic memristor trace; returns its path.
pub fn cmd_synth(cfg: &RunConfig, opts: &Options) -> Result<PathBuf> {
    let synth = cfg.synth.clone().unwrap_or_default();
    let rows = synth
        .device
        .trace(synth.samples_per_period, synth.periods, synth.settle)?;
    let dir = opts.out_dir(cfg);
    make_dir(&dir)?;
    let path = dir.join(&synth.file);
    let d = &synth.device;
    let comments = vec![
        "pinchsim loop v1".to_string(),
        format!(
            "synthetic memristor r_on {:e} r_off {:e} v_set {} v_reset {} rate {} rectification {}",
            d.r_on, d.r_off, d.v_set, d.v_reset, d.rate, d.rectification
        ),
        format!(
            "drive {} V at {} Hz, {} periods of {} samples",
            d.amplitude, d.frequency_hz, synth.periods, synth.samples_per_period
        ),
    ];
    write_loop_csv(&path, &rows, &comments)?;
    Ok(path)
}

// ---------------------------------------------------------------------------
// Entry point

pub fn exit_code(err: &Error) -> i32 {
    match err {
        Error::Config(_)
        | Error::Ingest { .. }
        | Error::OpenTrace { .. }
        | Error::Io { .. }
        | Error::InvalidParameter(_) => EXIT_CONFIG,
        e if e.is_integration_failure() => EXIT_INTEGRATION,
        Error::NotConverged { .. } => EXIT_NOT_CONVERGED,
        _ => EXIT_OTHER,
    }
}

/// Runs a parsed command line and returns the process exit code.
pub fn run(cli: Cli) -> i32 {
    let opts = Options {
        out: cli.out,
        jobs: cli.jobs,
        seed: cli.seed,
        samples_per_period: cli.samples_per_period,
    };
    match dispatch(&cli.command, &opts) {
        Ok(message) => {
            print!("{message}");
            EXIT_OK
        }
        Err(e) => {
            eprintln!("error: {e}");
            exit_code(&e)
        }
    }
}

fn dispatch(command: &Command, opts: &Options) -> Result<String> {
    match command {
        Command::Simulate { config } => {
            let cfg = RunConfig::load(config)?;
            let point = cmd_simulate(&cfg, opts)?;
            Ok(format!(
                "wrote {}\n{}",
                opts.out_dir(&cfg).display(),
                point.report.summary()
            ))
        }
        Command::Analyze { loop_csv, config } => {
            let cfg = match config {
                Some(p) => RunConfig::load(p)?,
                None => RunConfig::default(),
            };
            let r = cmd_analyze(loop_csv, &cfg, opts)?;
            Ok(format!(
                "{} rows, {} duplicates removed\n{}",
                r.rows,
                r.duplicates_removed,
                r.report.summary()
            ))
        }
        Command::Sweep { config } => {
            let cfg = RunConfig::load(config)?;
            let result = cmd_sweep(&cfg, opts)?;
            let failed = result.rows.iter().filter(|r| r.error.is_some()).count();
            let mut s = format!(
                "{} points ({failed} failed), table in {}\n",
                result.rows.len(),
                opts.out_dir(&cfg).join("sweep.csv").display()
            );
            for (name, trend) in &result.trends {
                let _ = writeln!(s, "total lobe area along {name}: {trend:?}");
            }
            Ok(s)
        }
        Command::Gate { config } => {
            let cfg = RunConfig::load(config)?;
            let outcomes = cmd_gate(&cfg, opts)?;
            let mut s = String::new();
            for o in &outcomes {
                let _ = write!(
                    s,
                    "{:?}: device {} (expected {})",
                    o.gate.gate,
                    o.device.pattern(),
                    o.device.expected_pattern()
                );
                if let (Some(r), Some(rms)) = (&o.reference, o.rms_difference) {
                    let _ = write!(s, ", reference {}, normalized RMS difference {rms:.4}", r.pattern());
                }
                s.push('\n');
            }
            Ok(s)
        }
        Command::Synth { config } => {
            let cfg = match config {
                Some(p) => RunConfig::load(p)?,
                None => RunConfig::default(),
            };
            Ok(format!("wrote {}\n", cmd_synth(&cfg, opts)?.display()))
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn series_model() -> &'static str {
        "[model]\ntopology = \"series\"\nnonlinearity = \"single_diode\"\na = 1.0\nA = 1.0\nB = 2.0\nomega_n = 0.1\nb = 0.2\n"
    }

    #[test]
    fn parses_model_block() {
        let cfg = RunConfig::from_toml(series_model(), "test").unwrap();
        match cfg.parameters().unwrap().circuit().unwrap() {
            Circuit::Series(s) => {
                assert_eq!(s.excitation.frequency, 0.1);
                assert_eq!(s.nonlinearity, Nonlinearity::SingleDiode { slope: 1.0 });
            }
            c => panic!("{c:?}"),
        }
    }

    #[test]
    fn unknown_field_names_the_line() {
        let text = format!("{}omega = 3\n", series_model());
        let err = RunConfig::from_toml(&text, "bad.toml").unwrap_err().to_string();
        assert!(err.contains("omega"), "{err}");
        assert!(err.contains("line 9"), "{err}");
    }

    #[test]
    fn rejects_both_parameter_blocks() {
        let text = format!(
            "{}[dimensional]\nR = 1e4\nL = 1e-3\nC = 5.6e-9\nR_D = 1e4\nv_gamma = 0.6\nV_DC = 1\nV_A = 2\nfrequency_hz = 100\ntopology = \"series\"\ndiode = \"single\"\n",
            series_model()
        );
        assert!(RunConfig::from_toml(&text, "t").is_err());
    }

    #[test]
    fn rejects_unknown_sweep_axis() {
        let text = format!("{}[[sweep]]\nparameter = \"R\"\nvalues = [1.0]\n", series_model());
        let err = RunConfig::from_toml(&text, "t").unwrap_err().to_string();
        assert!(err.contains("`R`"), "{err}");
    }

    #[test]
    fn grid_is_cartesian_last_axis_fastest() {
        let axes = vec![
            SweepAxis { parameter: "a".into(), values: vec![1.0, 2.0] },
            SweepAxis { parameter: "b".into(), values: vec![3.0, 4.0, 5.0] },
        ];
        let g = grid_points(&axes);
        assert_eq!(g.len(), 6);
        assert_eq!(g[1], vec![1.0, 4.0]);
        assert_eq!(g[3], vec![2.0, 3.0]);
    }

    #[test]
    fn trends_per_axis() {
        let axes = vec![
            SweepAxis { parameter: "a".into(), values: vec![1.0, 2.0] },
            SweepAxis { parameter: "b".into(), values: vec![1.0, 2.0, 3.0] },
        ];
        let area = [1.0, 0.9, 0.8, 2.0, 1.9, 1.8];
        let rows: Vec<SweepRow> = area
            .iter()
            .enumerate()
            .map(|(index, &a)| SweepRow {
                index,
                values: vec![],
                pinch_count: Some(1),
                lobe_areas: vec![a],
                total_area: Some(a),
                phase_margin: None,
                observable: None,
                error: None,
            })
            .collect();
        assert_eq!(axis_trend(&axes, &rows, 0), Trend::Increasing);
        assert_eq!(axis_trend(&axes, &rows, 1), Trend::Decreasing);
        let mut broken = rows.clone();
        broken[4].total_area = None;
        assert_eq!(axis_trend(&axes, &broken, 1), Trend::Undetermined);
    }

    #[test]
    fn exit_codes() {
        assert_eq!(exit_code(&Error::Config("x".into())), EXIT_CONFIG);
        assert_eq!(exit_code(&Error::StepLimit { t: 0.0, max_steps: 1 }), EXIT_INTEGRATION);
        assert_eq!(
            exit_code(&Error::NotConverged { residual: 1.0, tolerance: 0.1 }),
            EXIT_NOT_CONVERGED
        );
        assert_eq!(exit_code(&Error::Spectrum("x".into())), EXIT_OTHER);
    }
}
