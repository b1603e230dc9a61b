//! Scenario documents: one integrated energy system with its devices,
//! time series, horizon and solver settings.
//!
//! Files are JSON. Any series may be written inline or as a reference to a
//! column of a CSV file next to the scenario. Declared units are converted
//! to SI on load (W, Pa, kg/s, K relative to ambient); saved files are
//! always SI with inline series.

use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::spectral::HorizonConfig;

#[derive(Debug, Error)]
pub enum ScenarioError {
    #[error("cannot read {path}: {source}")]
    Io { path: PathBuf, source: std::io::Error },
    #[error("schema error at `{path}`: {message}")]
    Schema { path: String, message: String },
    #[error("{path}: series length {got}, expected {expected} ({what})")]
    Length { path: String, got: usize, expected: usize, what: &'static str },
    #[error("{path}: references {kind} {index}, but only {count} exist")]
    Dangling { path: String, kind: &'static str, index: usize, count: usize },
    #[error("{path}: {message}")]
    Invalid { path: String, message: String },
    #[error("csv {path}: {message}")]
    Csv { path: PathBuf, message: String },
}

impl ScenarioError {
    fn invalid(path: impl Into<String>, message: impl Into<String>) -> Self {
        ScenarioError::Invalid { path: path.into(), message: message.into() }
    }
}

/// A series given inline or as a CSV column reference.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum Series {
    Inline(Vec<f64>),
    Csv { csv: String, column: String },
}

impl Default for Series {
    fn default() -> Self {
        Series::Inline(Vec::new())
    }
}

impl Series {
    /// Values of a resolved series (empty for an unresolved reference).
    pub fn values(&self) -> &[f64] {
        match self {
            Series::Inline(v) => v,
            Series::Csv { .. } => &[],
        }
    }

    fn scale(&mut self, f: f64) {
        if let Series::Inline(v) = self {
            v.iter_mut().for_each(|x| *x *= f);
        }
    }
}

impl From<Vec<f64>> for Series {
    fn from(v: Vec<f64>) -> Self {
        Series::Inline(v)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub enum PowerUnit {
    #[default]
    W,
    #[serde(rename = "kW")]
    KW,
    MW,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub enum PressureUnit {
    #[default]
    Pa,
    #[serde(rename = "kPa")]
    KPa,
    #[serde(rename = "bar")]
    Bar,
    MPa,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub enum TemperatureUnit {
    /// Kelvin difference to ambient.
    #[default]
    #[serde(rename = "K-relative")]
    KRelative,
    /// Absolute degrees Celsius, converted using the network ambient.
    #[serde(rename = "degC")]
    Celsius,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct Units {
    #[serde(default)]
    pub power: PowerUnit,
    #[serde(default)]
    pub pressure: PressureUnit,
    #[serde(default)]
    pub temperature: TemperatureUnit,
}

impl Units {
    pub fn power_factor(&self) -> f64 {
        match self.power {
            PowerUnit::W => 1.0,
            PowerUnit::KW => 1e3,
            PowerUnit::MW => 1e6,
        }
    }

    pub fn pressure_factor(&self) -> f64 {
        match self.pressure {
            PressureUnit::Pa => 1.0,
            PressureUnit::KPa => 1e3,
            PressureUnit::Bar => 1e5,
            PressureUnit::MPa => 1e6,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct HorizonSpec {
    pub n_hist: usize,
    pub n_dispatch: usize,
    pub step_seconds: f64,
}

impl HorizonSpec {
    pub fn config(&self) -> HorizonConfig {
        HorizonConfig::new(self.n_hist, self.n_dispatch, self.step_seconds)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NodeSeries {
    pub node: usize,
    pub series: Series,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Line {
    pub name: String,
    pub from: usize,
    pub to: usize,
    /// Per-unit or ohmic; only ratios matter.
    pub reactance: f64,
    /// Thermal limit; absent means unlimited.
    #[serde(default)]
    pub capacity: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Epn {
    pub buses: Vec<String>,
    #[serde(default)]
    pub lines: Vec<Line>,
    #[serde(default)]
    pub slack: Option<usize>,
    /// Power loads over the dispatch interval.
    #[serde(default)]
    pub loads: Vec<NodeSeries>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GasNode {
    pub name: String,
    #[serde(default)]
    pub p_min: Option<f64>,
    #[serde(default)]
    pub p_max: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GasPipe {
    pub name: String,
    pub from: usize,
    pub to: usize,
    pub length: f64,
    pub diameter: f64,
    #[serde(default)]
    pub area: Option<f64>,
    pub friction: f64,
    #[serde(default)]
    pub incline: f64,
    pub sonic_speed: f64,
    pub base_velocity: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Ngn {
    pub nodes: Vec<GasNode>,
    pub pipes: Vec<GasPipe>,
    /// Pressure reference node; defaults to the node with the largest
    /// connected gas-well capacity.
    #[serde(default)]
    pub reference: Option<usize>,
    /// Reference-node pressure over history and dispatch.
    pub reference_pressure: Series,
    /// Gas loads over history and dispatch.
    #[serde(default)]
    pub loads: Vec<NodeSeries>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HeatNode {
    pub name: String,
    #[serde(default)]
    pub t_min: Option<f64>,
    #[serde(default)]
    pub t_max: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HeatPipe {
    pub name: String,
    pub from: usize,
    pub to: usize,
    pub length: f64,
    pub area: f64,
    pub heat_loss: f64,
    pub mass_flow: f64,
}

fn default_cp() -> f64 {
    4182.0
}

fn default_rho() -> f64 {
    985.0
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Dhn {
    pub nodes: Vec<HeatNode>,
    pub pipes: Vec<HeatPipe>,
    #[serde(default = "default_cp")]
    pub specific_heat: f64,
    #[serde(default = "default_rho")]
    pub density: f64,
    /// Ambient temperature in °C (used only for unit conversion and reports).
    #[serde(default)]
    pub ambient: f64,
    /// Heat loads over history and dispatch.
    #[serde(default)]
    pub loads: Vec<NodeSeries>,
}

/// `[u₂, u₁, u₀]`: cost per dispatch step is `u₂x² + u₁x + u₀`.
pub type Cost = [f64; 3];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Tpu {
    pub name: String,
    pub bus: usize,
    pub p_min: f64,
    pub p_max: f64,
    pub ramp_up: f64,
    pub ramp_down: f64,
    pub cost: Cost,
    /// Historical output; only the last value is used (ramping).
    #[serde(default)]
    pub history: Option<Series>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Ngu {
    pub name: String,
    pub bus: usize,
    pub gas_node: usize,
    pub p_min: f64,
    pub p_max: f64,
    pub ramp_up: f64,
    pub ramp_down: f64,
    /// Power per unit gas flow, W/(kg/s).
    pub ratio: f64,
    /// Historical power output.
    pub history: Series,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Chp {
    pub name: String,
    pub bus: usize,
    pub heat_node: usize,
    pub p_min: f64,
    pub p_max: f64,
    pub ramp_up: f64,
    pub ramp_down: f64,
    /// `P = ratio · h`.
    pub ratio: f64,
    pub cost_power: Cost,
    pub cost_heat: Cost,
    /// Historical heat output.
    pub history: Series,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WindTurbine {
    pub name: String,
    pub bus: usize,
    /// Available power over the dispatch interval.
    pub available: Series,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GasBoiler {
    pub name: String,
    pub gas_node: usize,
    pub heat_node: usize,
    pub h_min: f64,
    pub h_max: f64,
    pub ramp_up: f64,
    pub ramp_down: f64,
    /// Heat per unit gas flow, W/(kg/s).
    pub ratio: f64,
    /// Historical heat output.
    pub history: Series,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HeatPump {
    pub name: String,
    pub bus: usize,
    pub heat_node: usize,
    pub h_min: f64,
    pub h_max: f64,
    pub ramp_up: f64,
    pub ramp_down: f64,
    /// Coefficient of performance, `h = ratio · P`.
    pub ratio: f64,
    /// Historical heat output.
    pub history: Series,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GasWell {
    pub name: String,
    pub node: usize,
    pub m_min: f64,
    pub m_max: f64,
    pub ramp_up: f64,
    pub ramp_down: f64,
    pub cost: Cost,
    /// Historical production.
    pub history: Series,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct Devices {
    #[serde(default)]
    pub tpu: Vec<Tpu>,
    #[serde(default)]
    pub ngu: Vec<Ngu>,
    #[serde(default)]
    pub chp: Vec<Chp>,
    #[serde(default)]
    pub wind: Vec<WindTurbine>,
    #[serde(default)]
    pub gas_boiler: Vec<GasBoiler>,
    #[serde(default)]
    pub heat_pump: Vec<HeatPump>,
    #[serde(default)]
    pub gas_well: Vec<GasWell>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SolverSettings {
    /// Smoothing weight; derived from costs when absent.
    pub epsilon: Option<f64>,
    pub n_r: usize,
    pub max_iter: usize,
    pub gas_mesh: f64,
    pub heat_mesh: f64,
    pub tol_feas: f64,
    pub tol_gap: f64,
}

impl Default for SolverSettings {
    fn default() -> Self {
        Self {
            epsilon: None,
            n_r: 1,
            max_iter: 50,
            gas_mesh: 200.0,
            heat_mesh: 100.0,
            tol_feas: 1e-8,
            tol_gap: 1e-8,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Scenario {
    pub name: String,
    #[serde(default)]
    pub units: Units,
    pub horizon: HorizonSpec,
    pub epn: Epn,
    #[serde(default)]
    pub ngn: Option<Ngn>,
    #[serde(default)]
    pub dhn: Option<Dhn>,
    #[serde(default)]
    pub devices: Devices,
    #[serde(default)]
    pub solver: SolverSettings,
}

impl Scenario {
    pub fn horizon(&self) -> HorizonConfig {
        self.horizon.config()
    }

    pub fn slack_bus(&self) -> usize {
        self.epn.slack.unwrap_or(0)
    }

    /// Reference node of the gas network (explicit or largest connected
    /// gas-well capacity, lowest index on ties).
    pub fn gas_reference(&self) -> Option<usize> {
        let ngn = self.ngn.as_ref()?;
        if let Some(r) = ngn.reference {
            return Some(r);
        }
        let mut cap = vec![0.0; ngn.nodes.len()];
        for w in &self.devices.gas_well {
            if w.node < cap.len() {
                cap[w.node] += w.m_max;
            }
        }
        let mut best = 0;
        for (i, &c) in cap.iter().enumerate() {
            if c > cap[best] {
                best = i;
            }
        }
        Some(best)
    }

    fn visit_series(&mut self, mut f: impl FnMut(&str, &mut Series) -> Result<(), ScenarioError>) -> Result<(), ScenarioError> {
        for (i, l) in self.epn.loads.iter_mut().enumerate() {
            f(&format!("epn.loads[{i}].series"), &mut l.series)?;
        }
        if let Some(ngn) = self.ngn.as_mut() {
            f("ngn.reference_pressure", &mut ngn.reference_pressure)?;
            for (i, l) in ngn.loads.iter_mut().enumerate() {
                f(&format!("ngn.loads[{i}].series"), &mut l.series)?;
            }
        }
        if let Some(dhn) = self.dhn.as_mut() {
            for (i, l) in dhn.loads.iter_mut().enumerate() {
                f(&format!("dhn.loads[{i}].series"), &mut l.series)?;
            }
        }
        let d = &mut self.devices;
        for (i, x) in d.tpu.iter_mut().enumerate() {
            if let Some(h) = x.history.as_mut() {
                f(&format!("devices.tpu[{i}].history"), h)?;
            }
        }
        for (i, x) in d.ngu.iter_mut().enumerate() {
            f(&format!("devices.ngu[{i}].history"), &mut x.history)?;
        }
        for (i, x) in d.chp.iter_mut().enumerate() {
            f(&format!("devices.chp[{i}].history"), &mut x.history)?;
        }
        for (i, x) in d.wind.iter_mut().enumerate() {
            f(&format!("devices.wind[{i}].available"), &mut x.available)?;
        }
        for (i, x) in d.gas_boiler.iter_mut().enumerate() {
            f(&format!("devices.gas_boiler[{i}].history"), &mut x.history)?;
        }
        for (i, x) in d.heat_pump.iter_mut().enumerate() {
            f(&format!("devices.heat_pump[{i}].history"), &mut x.history)?;
        }
        for (i, x) in d.gas_well.iter_mut().enumerate() {
            f(&format!("devices.gas_well[{i}].history"), &mut x.history)?;
        }
        Ok(())
    }

    /// Replaces CSV references with inline values read relative to `base`.
    pub fn resolve_series(&mut self, base: &Path) -> Result<(), ScenarioError> {
        self.visit_series(|_, s| {
            if let Series::Csv { csv, column } = s {
                let path = base.join(&*csv);
                *s = Series::Inline(read_csv_column(&path, column)?);
            }
            Ok(())
        })
    }

    /// Converts declared units to SI in place.
    pub fn to_si(&mut self) {
        let pf = self.units.power_factor();
        let kf = self.units.pressure_factor();
        let celsius = self.units.temperature == TemperatureUnit::Celsius;
        let scale_cost = |c: &mut Cost, f: f64| {
            c[0] /= f * f;
            c[1] /= f;
        };
        if pf != 1.0 {
            for l in self.epn.loads.iter_mut() {
                l.series.scale(pf);
            }
            for l in self.epn.lines.iter_mut() {
                l.capacity = l.capacity.map(|c| c * pf);
            }
            if let Some(dhn) = self.dhn.as_mut() {
                for l in dhn.loads.iter_mut() {
                    l.series.scale(pf);
                }
            }
            let d = &mut self.devices;
            for x in d.tpu.iter_mut() {
                x.p_min *= pf;
                x.p_max *= pf;
                x.ramp_up *= pf;
                x.ramp_down *= pf;
                scale_cost(&mut x.cost, pf);
                if let Some(h) = x.history.as_mut() {
                    h.scale(pf);
                }
            }
            for x in d.ngu.iter_mut() {
                x.p_min *= pf;
                x.p_max *= pf;
                x.ramp_up *= pf;
                x.ramp_down *= pf;
                x.ratio *= pf;
                x.history.scale(pf);
            }
            for x in d.chp.iter_mut() {
                x.p_min *= pf;
                x.p_max *= pf;
                x.ramp_up *= pf;
                x.ramp_down *= pf;
                scale_cost(&mut x.cost_power, pf);
                scale_cost(&mut x.cost_heat, pf);
                x.history.scale(pf);
            }
            for x in d.wind.iter_mut() {
                x.available.scale(pf);
            }
            for x in d.gas_boiler.iter_mut() {
                x.h_min *= pf;
                x.h_max *= pf;
                x.ramp_up *= pf;
                x.ramp_down *= pf;
                x.ratio *= pf;
                x.history.scale(pf);
            }
            for x in d.heat_pump.iter_mut() {
                x.h_min *= pf;
                x.h_max *= pf;
                x.ramp_up *= pf;
                x.ramp_down *= pf;
                x.history.scale(pf);
            }
        }
        if let Some(ngn) = self.ngn.as_mut() {
            if kf != 1.0 {
                ngn.reference_pressure.scale(kf);
                for n in ngn.nodes.iter_mut() {
                    n.p_min = n.p_min.map(|p| p * kf);
                    n.p_max = n.p_max.map(|p| p * kf);
                }
            }
        }
        if let Some(dhn) = self.dhn.as_mut() {
            if celsius {
                let amb = dhn.ambient;
                for n in dhn.nodes.iter_mut() {
                    n.t_min = n.t_min.map(|t| t - amb);
                    n.t_max = n.t_max.map(|t| t - amb);
                }
            }
        }
        self.units = Units::default();
    }

    /// Checks cross-references, series lengths and parameter signs.
    pub fn validate(&self) -> Result<(), ScenarioError> {
        let h = self.horizon;
        if h.n_dispatch == 0 {
            return Err(ScenarioError::invalid("horizon.n_dispatch", "must be at least 1"));
        }
        if !(h.step_seconds > 0.0) {
            return Err(ScenarioError::invalid("horizon.step_seconds", "must be positive"));
        }
        let nt = h.n_hist + h.n_dispatch;
        let len = |path: String, s: &Series, expected: usize, what: &'static str| {
            if let Series::Csv { .. } = s {
                return Err(ScenarioError::invalid(path, "unresolved CSV reference"));
            }
            let got = s.values().len();
            if got != expected {
                return Err(ScenarioError::Length { path, got, expected, what });
            }
            if let Some(i) = s.values().iter().position(|v| !v.is_finite()) {
                return Err(ScenarioError::invalid(path, format!("non-finite value at index {i}")));
            }
            Ok(())
        };
        let idx = |path: String, kind: &'static str, index: usize, count: usize| {
            if index >= count {
                Err(ScenarioError::Dangling { path, kind, index, count })
            } else {
                Ok(())
            }
        };
        let nonneg_load = |path: String, s: &Series| {
            if s.values().iter().any(|&v| v < 0.0) {
                Err(ScenarioError::invalid(path, "loads must be non-negative"))
            } else {
                Ok(())
            }
        };

        let nb = self.epn.buses.len();
        if nb == 0 {
            return Err(ScenarioError::invalid("epn.buses", "at least one bus required"));
        }
        idx("epn.slack".into(), "bus", self.slack_bus(), nb)?;
        for (i, l) in self.epn.lines.iter().enumerate() {
            idx(format!("epn.lines[{i}].from"), "bus", l.from, nb)?;
            idx(format!("epn.lines[{i}].to"), "bus", l.to, nb)?;
            if !(l.reactance > 0.0) {
                return Err(ScenarioError::invalid(format!("epn.lines[{i}].reactance"), "must be positive"));
            }
        }
        for (i, l) in self.epn.loads.iter().enumerate() {
            idx(format!("epn.loads[{i}].node"), "bus", l.node, nb)?;
            len(format!("epn.loads[{i}] (bus {})", self.epn.buses[l.node]), &l.series, h.n_dispatch, "N_dt")?;
            nonneg_load(format!("epn.loads[{i}]"), &l.series)?;
        }

        let ng = self.ngn.as_ref().map_or(0, |n| n.nodes.len());
        if let Some(ngn) = &self.ngn {
            for (i, p) in ngn.pipes.iter().enumerate() {
                idx(format!("ngn.pipes[{i}].from"), "gas node", p.from, ng)?;
                idx(format!("ngn.pipes[{i}].to"), "gas node", p.to, ng)?;
                crate::circuit::GasPipeGeometry::new(
                    p.length,
                    p.diameter,
                    p.area,
                    p.friction,
                    p.incline,
                    p.sonic_speed,
                    p.base_velocity,
                )
                .map_err(|e| ScenarioError::invalid(format!("ngn.pipes[{i}]"), e.to_string()))?;
            }
            if let Some(r) = ngn.reference {
                idx("ngn.reference".into(), "gas node", r, ng)?;
            }
            len("ngn.reference_pressure".into(), &ngn.reference_pressure, nt, "N_ht + N_dt")?;
            for (i, l) in ngn.loads.iter().enumerate() {
                idx(format!("ngn.loads[{i}].node"), "gas node", l.node, ng)?;
                len(format!("ngn.loads[{i}] (node {})", ngn.nodes[l.node].name), &l.series, nt, "N_ht + N_dt")?;
                nonneg_load(format!("ngn.loads[{i}]"), &l.series)?;
            }
            for (i, n) in ngn.nodes.iter().enumerate() {
                if let (Some(a), Some(b)) = (n.p_min, n.p_max) {
                    if a > b {
                        return Err(ScenarioError::invalid(format!("ngn.nodes[{i}]"), "p_min > p_max"));
                    }
                }
            }
        }
        let nh = self.dhn.as_ref().map_or(0, |n| n.nodes.len());
        if let Some(dhn) = &self.dhn {
            for (i, p) in dhn.pipes.iter().enumerate() {
                idx(format!("dhn.pipes[{i}].from"), "heat node", p.from, nh)?;
                idx(format!("dhn.pipes[{i}].to"), "heat node", p.to, nh)?;
                let g = crate::circuit::HeatPipeGeometry {
                    length: p.length,
                    area: p.area,
                    heat_loss: p.heat_loss,
                    specific_heat: dhn.specific_heat,
                    density: dhn.density,
                    mass_flow: p.mass_flow,
                };
                g.validate()
                    .map_err(|e| ScenarioError::invalid(format!("dhn.pipes[{i}]"), e.to_string()))?;
            }
            for (i, l) in dhn.loads.iter().enumerate() {
                idx(format!("dhn.loads[{i}].node"), "heat node", l.node, nh)?;
                len(format!("dhn.loads[{i}] (node {})", dhn.nodes[l.node].name), &l.series, nt, "N_ht + N_dt")?;
                nonneg_load(format!("dhn.loads[{i}]"), &l.series)?;
            }
            for (i, n) in dhn.nodes.iter().enumerate() {
                if let (Some(a), Some(b)) = (n.t_min, n.t_max) {
                    if a > b {
                        return Err(ScenarioError::invalid(format!("dhn.nodes[{i}]"), "t_min > t_max"));
                    }
                }
            }
        }

        let check_dev = |path: String, lb: f64, ub: f64, ru: f64, rd: f64| {
            if !(lb <= ub) {
                return Err(ScenarioError::invalid(path, "lower bound exceeds upper bound"));
            }
            if !(ru >= 0.0 && rd >= 0.0) {
                return Err(ScenarioError::invalid(path, "ramp limits must be non-negative"));
            }
            Ok(())
        };
        let check_cost = |path: String, c: &Cost| {
            if !(c[0] >= 0.0) || c.iter().any(|v| !v.is_finite()) {
                return Err(ScenarioError::invalid(path, "quadratic cost must be non-negative and finite"));
            }
            Ok(())
        };
        let check_ratio = |path: String, r: f64| {
            if !(r > 0.0) {
                return Err(ScenarioError::invalid(path, "coupling ratio must be positive"));
            }
            Ok(())
        };
        let d = &self.devices;
        for (i, x) in d.tpu.iter().enumerate() {
            let p = format!("devices.tpu[{i}]");
            idx(format!("{p}.bus"), "bus", x.bus, nb)?;
            check_dev(p.clone(), x.p_min, x.p_max, x.ramp_up, x.ramp_down)?;
            check_cost(format!("{p}.cost"), &x.cost)?;
            if let Some(hs) = &x.history {
                len(format!("{p}.history"), hs, h.n_hist, "N_ht")?;
            }
        }
        for (i, x) in d.ngu.iter().enumerate() {
            let p = format!("devices.ngu[{i}]");
            idx(format!("{p}.bus"), "bus", x.bus, nb)?;
            idx(format!("{p}.gas_node"), "gas node", x.gas_node, ng)?;
            check_dev(p.clone(), x.p_min, x.p_max, x.ramp_up, x.ramp_down)?;
            check_ratio(format!("{p}.ratio"), x.ratio)?;
            len(format!("{p}.history ({})", x.name), &x.history, h.n_hist, "N_ht")?;
        }
        for (i, x) in d.chp.iter().enumerate() {
            let p = format!("devices.chp[{i}]");
            idx(format!("{p}.bus"), "bus", x.bus, nb)?;
            idx(format!("{p}.heat_node"), "heat node", x.heat_node, nh)?;
            check_dev(p.clone(), x.p_min, x.p_max, x.ramp_up, x.ramp_down)?;
            check_ratio(format!("{p}.ratio"), x.ratio)?;
            check_cost(format!("{p}.cost_power"), &x.cost_power)?;
            check_cost(format!("{p}.cost_heat"), &x.cost_heat)?;
            len(format!("{p}.history ({})", x.name), &x.history, h.n_hist, "N_ht")?;
        }
        for (i, x) in d.wind.iter().enumerate() {
            let p = format!("devices.wind[{i}]");
            idx(format!("{p}.bus"), "bus", x.bus, nb)?;
            len(format!("{p}.available"), &x.available, h.n_dispatch, "N_dt")?;
            nonneg_load(format!("{p}.available"), &x.available)?;
        }
        for (i, x) in d.gas_boiler.iter().enumerate() {
            let p = format!("devices.gas_boiler[{i}]");
            idx(format!("{p}.gas_node"), "gas node", x.gas_node, ng)?;
            idx(format!("{p}.heat_node"), "heat node", x.heat_node, nh)?;
            check_dev(p.clone(), x.h_min, x.h_max, x.ramp_up, x.ramp_down)?;
            check_ratio(format!("{p}.ratio"), x.ratio)?;
            len(format!("{p}.history ({})", x.name), &x.history, h.n_hist, "N_ht")?;
        }
        for (i, x) in d.heat_pump.iter().enumerate() {
            let p = format!("devices.heat_pump[{i}]");
            idx(format!("{p}.bus"), "bus", x.bus, nb)?;
            idx(format!("{p}.heat_node"), "heat node", x.heat_node, nh)?;
            check_dev(p.clone(), x.h_min, x.h_max, x.ramp_up, x.ramp_down)?;
            check_ratio(format!("{p}.ratio"), x.ratio)?;
            len(format!("{p}.history ({})", x.name), &x.history, h.n_hist, "N_ht")?;
        }
        for (i, x) in d.gas_well.iter().enumerate() {
            let p = format!("devices.gas_well[{i}]");
            idx(format!("{p}.node"), "gas node", x.node, ng)?;
            check_dev(p.clone(), x.m_min, x.m_max, x.ramp_up, x.ramp_down)?;
            check_cost(format!("{p}.cost"), &x.cost)?;
            len(format!("{p}.history ({})", x.name), &x.history, h.n_hist, "N_ht")?;
        }
        let s = &self.solver;
        if s.n_r == 0 || s.max_iter == 0 {
            return Err(ScenarioError::invalid("solver", "n_r and max_iter must be at least 1"));
        }
        if !(s.gas_mesh > 0.0 && s.heat_mesh > 0.0) {
            return Err(ScenarioError::invalid("solver", "mesh steps must be positive"));
        }
        if let Some(e) = s.epsilon {
            if !(e > 0.0) {
                return Err(ScenarioError::invalid("solver.epsilon", "must be positive"));
            }
        }
        Ok(())
    }

    pub fn from_json_str(text: &str, base: &Path) -> Result<Self, ScenarioError> {
        let de = &mut serde_json::Deserializer::from_str(text);
        let mut sc: Scenario = serde_path_to_error::deserialize(de).map_err(|e| ScenarioError::Schema {
            path: e.path().to_string(),
            message: e.inner().to_string(),
        })?;
        sc.resolve_series(base)?;
        sc.to_si();
        sc.validate()?;
        Ok(sc)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("scenario serialises")
    }
}

fn read_csv_column(path: &Path, column: &str) -> Result<Vec<f64>, ScenarioError> {
    let err = |message: String| ScenarioError::Csv { path: path.to_path_buf(), message };
    let mut rdr = csv::Reader::from_path(path).map_err(|e| err(e.to_string()))?;
    let headers = rdr.headers().map_err(|e| err(e.to_string()))?.clone();
    let col = headers
        .iter()
        .position(|h| h.trim() == column)
        .ok_or_else(|| err(format!("no column `{column}`")))?;
    let mut out = Vec::new();
    for (i, rec) in rdr.records().enumerate() {
        let rec = rec.map_err(|e| err(e.to_string()))?;
        let cell = rec.get(col).ok_or_else(|| err(format!("row {} too short", i + 1)))?;
        let v: f64 = cell
            .trim()
            .parse()
            .map_err(|_| err(format!("row {}: `{cell}` is not a number", i + 1)))?;
        out.push(v);
    }
    Ok(out)
}

pub fn load_scenario(path: &Path) -> Result<Scenario, ScenarioError> {
    let text = fs::read_to_string(path).map_err(|source| ScenarioError::Io { path: path.to_path_buf(), source })?;
    let base = path.parent().unwrap_or_else(|| Path::new("."));
    Scenario::from_json_str(&text, base)
}

/// Writes `contents` to `path` through a temporary file and rename.
pub fn write_atomic(path: &Path, contents: &[u8]) -> std::io::Result<()> {
    let dir = match path.parent() {
        Some(d) if !d.as_os_str().is_empty() => d,
        _ => Path::new("."),
    };
    fs::create_dir_all(dir)?;
    let mut tmp = tempfile::NamedTempFile::new_in(dir)?;
    tmp.write_all(contents)?;
    tmp.flush()?;
    #[cfg(unix)]
    {
        use std::os::unix::fs::PermissionsExt;
        fs::set_permissions(tmp.path(), fs::Permissions::from_mode(0o644))?;
    }
    tmp.persist(path).map_err(|e| e.error)?;
    Ok(())
}

pub fn save_scenario(sc: &Scenario, path: &Path) -> Result<(), ScenarioError> {
    write_atomic(path, sc.to_json().as_bytes()).map_err(|source| ScenarioError::Io { path: path.to_path_buf(), source })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn minimal_json() -> String {
        r#"{
            "name": "one-bus",
            "horizon": {"n_hist": 0, "n_dispatch": 3, "step_seconds": 3600},
            "epn": {"buses": ["b1"], "loads": [{"node": 0, "series": [10, 12, 11]}]},
            "devices": {"tpu": [{"name": "g1", "bus": 0, "p_min": 0, "p_max": 50,
                                 "ramp_up": 5, "ramp_down": 5, "cost": [0.01, 2, 0]}]}
        }"#
        .to_string()
    }

    #[test]
    fn minimal_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let sc = Scenario::from_json_str(&minimal_json(), dir.path()).unwrap();
        let path = dir.path().join("s.json");
        save_scenario(&sc, &path).unwrap();
        let back = load_scenario(&path).unwrap();
        assert_eq!(sc, back);
    }

    #[test]
    fn bar_and_megawatt_conversion() {
        let json = r#"{
            "name": "u",
            "units": {"power": "MW", "pressure": "bar", "temperature": "degC"},
            "horizon": {"n_hist": 1, "n_dispatch": 1, "step_seconds": 900},
            "epn": {"buses": ["b"], "loads": [{"node": 0, "series": [2.5]}]},
            "ngn": {"nodes": [{"name": "n0", "p_min": 40, "p_max": 50}, {"name": "n1"}],
                    "pipes": [{"name": "p", "from": 0, "to": 1, "length": 1000, "diameter": 0.5,
                               "friction": 0.01, "sonic_speed": 340, "base_velocity": 5}],
                    "reference_pressure": [50, 50]},
            "dhn": {"ambient": 10, "nodes": [{"name": "h0", "t_min": 70, "t_max": 110}, {"name": "h1"}],
                    "pipes": [{"name": "q", "from": 0, "to": 1, "length": 500, "area": 0.05,
                               "heat_loss": 0.5, "mass_flow": 20}]},
            "devices": {"tpu": [{"name": "g", "bus": 0, "p_min": 0, "p_max": 5, "ramp_up": 1,
                                 "ramp_down": 1, "cost": [2.0, 30.0, 1.0]}]}
        }"#;
        let sc = Scenario::from_json_str(json, Path::new(".")).unwrap();
        let ngn = sc.ngn.as_ref().unwrap();
        assert_eq!(ngn.nodes[0].p_max, Some(5.0e6));
        assert_eq!(ngn.reference_pressure.values(), &[5.0e6, 5.0e6]);
        assert_eq!(sc.epn.loads[0].series.values(), &[2.5e6]);
        let dhn = sc.dhn.as_ref().unwrap();
        assert_eq!(dhn.nodes[0].t_min, Some(60.0));
        assert_eq!(dhn.nodes[0].t_max, Some(100.0));
        let tpu = &sc.devices.tpu[0];
        assert_eq!(tpu.p_max, 5e6);
        assert_eq!(tpu.cost, [2.0e-12, 30.0e-6, 1.0]);
        assert_eq!(sc.units, Units::default());
    }

    #[test]
    fn missing_history_names_node_and_length() {
        let json = r#"{
            "name": "g",
            "horizon": {"n_hist": 2, "n_dispatch": 2, "step_seconds": 900},
            "epn": {"buses": ["b"]},
            "ngn": {"nodes": [{"name": "A"}, {"name": "B"}],
                    "pipes": [{"name": "p", "from": 0, "to": 1, "length": 1000, "diameter": 0.5,
                               "friction": 0.01, "sonic_speed": 340, "base_velocity": 5}],
                    "reference_pressure": [1, 1, 1, 1],
                    "loads": [{"node": 1, "series": [1, 2]}]}
        }"#;
        let err = Scenario::from_json_str(json, Path::new(".")).unwrap_err().to_string();
        assert!(err.contains("node B"), "{err}");
        assert!(err.contains("expected 4"), "{err}");
        assert!(err.contains("N_ht + N_dt"), "{err}");
    }

    #[test]
    fn schema_errors_carry_paths() {
        let json = r#"{"name": "x", "horizon": {"n_hist": 0, "n_dispatch": "three", "step_seconds": 1},
                       "epn": {"buses": ["b"]}}"#;
        let err = Scenario::from_json_str(json, Path::new(".")).unwrap_err().to_string();
        assert!(err.contains("horizon.n_dispatch"), "{err}");
    }

    #[test]
    fn dangling_reference_rejected() {
        let json = minimal_json().replace(r#""bus": 0, "p_min""#, r#""bus": 4, "p_min""#);
        let err = Scenario::from_json_str(&json, Path::new(".")).unwrap_err();
        assert!(matches!(err, ScenarioError::Dangling { index: 4, .. }), "{err}");
    }

    #[test]
    fn csv_series_resolved() {
        let dir = tempfile::tempdir().unwrap();
        fs::write(dir.path().join("load.csv"), "step,demand\n0,10\n1,12\n2,11\n").unwrap();
        let json = minimal_json().replace("[10, 12, 11]", r#"{"csv": "load.csv", "column": "demand"}"#);
        let sc = Scenario::from_json_str(&json, dir.path()).unwrap();
        assert_eq!(sc.epn.loads[0].series.values(), &[10.0, 12.0, 11.0]);

        let bad = minimal_json().replace("[10, 12, 11]", r#"{"csv": "load.csv", "column": "nope"}"#);
        assert!(Scenario::from_json_str(&bad, dir.path()).is_err());
    }

    #[test]
    fn reference_defaults_to_largest_well() {
        let json = r#"{
            "name": "g",
            "horizon": {"n_hist": 1, "n_dispatch": 1, "step_seconds": 900},
            "epn": {"buses": ["b"]},
            "ngn": {"nodes": [{"name": "A"}, {"name": "B"}],
                    "pipes": [{"name": "p", "from": 0, "to": 1, "length": 1000, "diameter": 0.5,
                               "friction": 0.01, "sonic_speed": 340, "base_velocity": 5}],
                    "reference_pressure": [1, 1]},
            "devices": {"gas_well": [
                {"name": "w0", "node": 0, "m_min": 0, "m_max": 5, "ramp_up": 1, "ramp_down": 1, "cost": [0, 1, 0], "history": [1]},
                {"name": "w1", "node": 1, "m_min": 0, "m_max": 9, "ramp_up": 1, "ramp_down": 1, "cost": [0, 1, 0], "history": [1]}
            ]}
        }"#;
        let sc = Scenario::from_json_str(json, Path::new(".")).unwrap();
        assert_eq!(sc.gas_reference(), Some(1));
    }
}
