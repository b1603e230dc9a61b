//! Optimal energy flow formulations built from a scenario.
//!
//! [`Prepared`] holds everything that depends only on the scenario: the
//! per-frequency network matrices, load phasors and PTDF. The builders
//! share one variable layout for the device schedules and device phasors;
//! they differ in how the network physics enters:
//!
//! * [`Formulation::Ecm`] keeps pressure/temperature phasors and their time
//!   samples as variables, tied by the admittance-form circuit rows.
//! * [`Formulation::Vsp`] eliminates them and writes node bounds directly
//!   over device phasors through the impedance matrices.
//! * [`Formulation::Raw`] drops all security rows (the starting point of
//!   constraint generation).

use nalgebra::DMatrix;
use num_complex::Complex64;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::circuit::{
    gas_distributed_params, gas_lumped, gas_two_port, heat_distributed_params, heat_transmission_factor,
    CircuitError, GasPipeGeometry, HeatPipeGeometry,
};
use crate::network::{
    build_incidence, compute_ptdf, gas_node_admittance, gas_node_impedance, heat_branch_admittance,
    GasImpedance, HeatBranchAdmittance, NetworkError, Topology,
};
use crate::qp::{QpModel, Quadrant, RowLabel, Sense};
use crate::scenario::{Cost, Scenario};
use crate::spectral::{freedom_mask, HorizonConfig, Spectrum};

const ZERO: Complex64 = Complex64::new(0.0, 0.0);

#[derive(Debug, Error)]
pub enum ModelError {
    #[error("pipe {pipe}: {source}")]
    Circuit { pipe: String, source: CircuitError },
    #[error("{network}: {source}")]
    Network { network: &'static str, source: NetworkError },
    #[error("{0}")]
    Invalid(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Formulation {
    Ecm,
    Vsp,
    Raw,
}

/// Per-frequency gas network data.
#[derive(Debug, Clone)]
pub struct GasPrepared {
    pub reference: usize,
    pub n_nodes: usize,
    pub admittance: Vec<DMatrix<Complex64>>,
    pub impedance: Vec<GasImpedance>,
    /// Load phasors, node × κ.
    pub load: Vec<Vec<Complex64>>,
    pub p_ref: Vec<Complex64>,
    pub p_ref_series: Vec<f64>,
    pub bounds: Vec<(Option<f64>, Option<f64>)>,
}

/// Per-frequency heat network data.
#[derive(Debug, Clone)]
pub struct HeatPrepared {
    pub n_nodes: usize,
    pub n_branches: usize,
    pub branch: Vec<HeatBranchAdmittance>,
    pub impedance: Vec<DMatrix<Complex64>>,
    /// Load phasors, node × κ.
    pub load: Vec<Vec<Complex64>>,
    pub bounds: Vec<(Option<f64>, Option<f64>)>,
}

/// Scenario-derived constants shared by every formulation.
#[derive(Debug, Clone)]
pub struct Prepared {
    pub horizon: HorizonConfig,
    pub spectrum: Spectrum,
    /// Line × bus.
    pub ptdf: DMatrix<f64>,
    pub line_limits: Vec<Option<f64>>,
    /// Bus × dispatch step.
    pub epn_load: Vec<Vec<f64>>,
    pub gas: Option<GasPrepared>,
    pub heat: Option<HeatPrepared>,
    pub epsilon: f64,
}

pub(crate) fn node_series(n_nodes: usize, len: usize, loads: &[crate::scenario::NodeSeries]) -> Vec<Vec<f64>> {
    let mut out = vec![vec![0.0; len]; n_nodes];
    for l in loads {
        for (o, v) in out[l.node].iter_mut().zip(l.series.values()) {
            *o += v;
        }
    }
    out
}

impl Prepared {
    pub fn new(sc: &Scenario) -> Result<Self, ModelError> {
        let horizon = sc.horizon();
        let spectrum = horizon.spectrum();
        let nf = horizon.n_freq();
        let omegas = horizon.omegas();

        let nb = sc.epn.buses.len();
        let lines: Vec<(usize, usize, f64)> = sc.epn.lines.iter().map(|l| (l.from, l.to, l.reactance)).collect();
        let ptdf = if lines.is_empty() {
            DMatrix::zeros(0, nb)
        } else {
            compute_ptdf(nb, &lines, sc.slack_bus()).map_err(|source| ModelError::Network { network: "epn", source })?
        };
        let epn_load = node_series(nb, horizon.n_dispatch, &sc.epn.loads);

        let gas = match &sc.ngn {
            None => None,
            Some(ngn) => {
                let n = ngn.nodes.len();
                let reference = sc.gas_reference().unwrap_or(0);
                let branches: Vec<(usize, usize)> = ngn.pipes.iter().map(|p| (p.from, p.to)).collect();
                let topo = Topology::new(n, &branches).map_err(|source| ModelError::Network { network: "ngn", source })?;
                topo.check_connected().map_err(|source| ModelError::Network { network: "ngn", source })?;
                let mut dists = Vec::new();
                for p in &ngn.pipes {
                    let err = |source| ModelError::Circuit { pipe: p.name.clone(), source };
                    let g = GasPipeGeometry::new(
                        p.length,
                        p.diameter,
                        p.area,
                        p.friction,
                        p.incline,
                        p.sonic_speed,
                        p.base_velocity,
                    )
                    .map_err(err)?;
                    dists.push(gas_distributed_params(&g).map_err(err)?);
                }
                let mut admittance = Vec::with_capacity(nf);
                let mut impedance = Vec::with_capacity(nf);
                for &w in &omegas {
                    let mut pis = Vec::new();
                    for (p, d) in ngn.pipes.iter().zip(&dists) {
                        let err = |source| ModelError::Circuit { pipe: p.name.clone(), source };
                        pis.push(gas_lumped(&gas_two_port(d, w, p.length).map_err(err)?).map_err(err)?);
                    }
                    let y = gas_node_admittance(&topo, &pis)
                        .map_err(|source| ModelError::Network { network: "ngn", source })?;
                    impedance.push(
                        gas_node_impedance(&y, reference)
                            .map_err(|source| ModelError::Network { network: "ngn", source })?,
                    );
                    admittance.push(y);
                }
                let load = node_series(n, horizon.n_total(), &ngn.loads)
                    .iter()
                    .map(|s| spectrum.forward(s).coeffs)
                    .collect();
                let p_ref_series = ngn.reference_pressure.values().to_vec();
                let p_ref = spectrum.forward(&p_ref_series).coeffs;
                Some(GasPrepared {
                    reference,
                    n_nodes: n,
                    admittance,
                    impedance,
                    load,
                    p_ref,
                    p_ref_series,
                    bounds: ngn.nodes.iter().map(|x| (x.p_min, x.p_max)).collect(),
                })
            }
        };

        let heat = match &sc.dhn {
            None => None,
            Some(dhn) => {
                let n = dhn.nodes.len();
                let branches: Vec<(usize, usize)> = dhn.pipes.iter().map(|p| (p.from, p.to)).collect();
                let net = |source| ModelError::Network { network: "dhn", source };
                // a forest is fine: each tree is fed from its own roots
                let topo = Topology::new(n, &branches).map_err(net)?;
                let flows: Vec<f64> = dhn.pipes.iter().map(|p| p.mass_flow).collect();
                let inc = build_incidence(&topo, Some(&flows)).map_err(net)?;
                let mut dists = Vec::new();
                for p in &dhn.pipes {
                    let g = HeatPipeGeometry {
                        length: p.length,
                        area: p.area,
                        heat_loss: p.heat_loss,
                        specific_heat: dhn.specific_heat,
                        density: dhn.density,
                        mass_flow: p.mass_flow,
                    };
                    dists.push(
                        heat_distributed_params(&g).map_err(|source| ModelError::Circuit { pipe: p.name.clone(), source })?,
                    );
                }
                let mut branch = Vec::with_capacity(nf);
                let mut impedance = Vec::with_capacity(nf);
                for &w in &omegas {
                    let mut phis = Vec::new();
                    for (p, d) in dhn.pipes.iter().zip(&dists) {
                        phis.push(
                            heat_transmission_factor(d, w, p.length)
                                .map_err(|source| ModelError::Circuit { pipe: p.name.clone(), source })?,
                        );
                    }
                    let hb = heat_branch_admittance(&topo, &inc, &flows, dhn.specific_heat, &phis).map_err(net)?;
                    impedance.push(hb.node_impedance().map_err(net)?);
                    branch.push(hb);
                }
                let load = node_series(n, horizon.n_total(), &dhn.loads)
                    .iter()
                    .map(|s| spectrum.forward(s).coeffs)
                    .collect();
                Some(HeatPrepared {
                    n_nodes: n,
                    n_branches: dhn.pipes.len(),
                    branch,
                    impedance,
                    load,
                    bounds: dhn.nodes.iter().map(|x| (x.t_min, x.t_max)).collect(),
                })
            }
        };

        Ok(Prepared {
            horizon,
            spectrum,
            ptdf,
            line_limits: sc.epn.lines.iter().map(|l| l.capacity).collect(),
            epn_load,
            gas,
            heat,
            epsilon: sc.solver.epsilon.unwrap_or_else(|| default_epsilon(sc)),
        })
    }
}

/// `1e−6 · median(u₁·x_max) · N_dt` over cost-bearing devices. The
/// smoothing term is written over capacity-normalised phasors, so this
/// keeps it in the same currency as the operating cost.
pub fn default_epsilon(sc: &Scenario) -> f64 {
    let d = &sc.devices;
    let mut v: Vec<f64> = Vec::new();
    v.extend(d.tpu.iter().map(|x| x.cost[1] * x.p_max));
    v.extend(d.chp.iter().map(|x| x.cost_power[1] * x.p_max + x.cost_heat[1] * x.p_max / x.ratio));
    v.extend(d.gas_well.iter().map(|x| x.cost[1] * x.m_max));
    v.retain(|c| c.is_finite() && *c > 0.0);
    if v.is_empty() {
        return 1e-6;
    }
    v.sort_by(|a, b| a.total_cmp(b));
    let m = v.len();
    let median = if m % 2 == 1 { v[m / 2] } else { 0.5 * (v[m / 2 - 1] + v[m / 2]) };
    1e-6 * median * sc.horizon.n_dispatch as f64
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Carrier {
    Gas,
    Heat,
}

/// A device quantity carried in both domains: dispatch-step variables and
/// `(Re, Im)` phasor variables per frequency.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct PhasorVar {
    pub name: String,
    pub carrier: Carrier,
    pub node: usize,
    /// +1 for injection into the network, −1 for withdrawal.
    pub sign: f64,
    pub re: Vec<usize>,
    pub im: Vec<usize>,
    pub time: Vec<usize>,
    pub history: Vec<f64>,
    /// Capacity used to normalise the smoothing term.
    pub reference: f64,
}

/// Dispatch-step variable indices, `[device][step]`.
#[derive(Debug, Clone, Default, Serialize, Deserialize)]
pub struct DeviceVars {
    pub tpu: Vec<Vec<usize>>,
    pub ngu_p: Vec<Vec<usize>>,
    pub ngu_m: Vec<Vec<usize>>,
    pub chp_p: Vec<Vec<usize>>,
    pub chp_h: Vec<Vec<usize>>,
    pub wind: Vec<Vec<usize>>,
    pub gb_m: Vec<Vec<usize>>,
    pub gb_h: Vec<Vec<usize>>,
    pub hp_p: Vec<Vec<usize>>,
    pub hp_h: Vec<Vec<usize>>,
    pub gw_m: Vec<Vec<usize>>,
}

/// Monitored variables of the circuit formulation.
#[derive(Debug, Clone, Default, Serialize, Deserialize)]
pub struct MonitoredVars {
    /// `[node][κ]` (Re, Im) pressure phasors; `None` for the reference.
    pub p_phasor: Vec<Option<Vec<(usize, usize)>>>,
    pub p_time: Vec<Option<Vec<usize>>>,
    pub t_node: Vec<Vec<(usize, usize)>>,
    pub t_branch: Vec<Vec<(usize, usize)>>,
    pub t_time: Vec<Vec<usize>>,
}

impl MonitoredVars {
    pub fn count(&self) -> usize {
        let p: usize = self.p_phasor.iter().flatten().map(|v| 2 * v.len()).sum();
        let pt: usize = self.p_time.iter().flatten().map(Vec::len).sum();
        let tn: usize = self.t_node.iter().map(|v| 2 * v.len()).sum();
        let tb: usize = self.t_branch.iter().map(|v| 2 * v.len()).sum();
        let tt: usize = self.t_time.iter().map(Vec::len).sum();
        p + pt + tn + tb + tt
    }
}

#[derive(Debug, Clone, Default, Serialize, Deserialize)]
pub struct Layout {
    pub dev: DeviceVars,
    pub series: Vec<PhasorVar>,
    pub monitored: Option<MonitoredVars>,
    /// Variables and weights of the smoothing term (`ε·κ/ref²`).
    pub smoothing: Vec<(usize, f64)>,
}

/// A built model and the indices needed to read its solution.
#[derive(Debug, Clone)]
pub struct BuiltModel {
    pub formulation: Formulation,
    pub qp: QpModel,
    pub layout: Layout,
}

/// Real-part coefficients of `Re(Σ_κ w^(τκ)·c_κ·(x_κ + j·y_κ))`.
pub(crate) fn idft_terms(spec: &Spectrum, t: usize, c: &[Complex64], re: &[usize], im: &[usize], out: &mut Vec<(usize, f64)>) {
    for k in 0..c.len() {
        let a = spec.root(t, k) * c[k];
        if a.re.abs() > 1e-13 * c[k].norm() {
            out.push((re[k], a.re));
        }
        if a.im.abs() > 1e-13 * c[k].norm() {
            out.push((im[k], -a.im));
        }
    }
}

/// `Re(Σ_κ w^(τκ)·c_κ)` for constant phasors.
pub(crate) fn idft_value(spec: &Spectrum, t: usize, c: &[Complex64]) -> f64 {
    spec.inverse_at(c, t)
}

fn add_cost(qp: &mut QpModel, vars: &[usize], cost: &Cost) {
    for &v in vars {
        qp.add_quadratic(v, cost[0]);
        qp.add_linear(v, cost[1]);
        qp.add_constant(cost[2]);
    }
}

fn ramp_rows(qp: &mut QpModel, vars: &[usize], last: Option<f64>, up: f64, down: f64) {
    if let (Some(h), Some(&v0)) = (last, vars.first()) {
        qp.add_range(RowLabel::Ramping, vec![(v0, 1.0)], h - down, h + up);
    }
    for w in vars.windows(2) {
        qp.add_range(RowLabel::Ramping, vec![(w[1], 1.0), (w[0], -1.0)], -down, up);
    }
}

fn time_vars(qp: &mut QpModel, name: &str, n: usize, lb: f64, ub: f64, scale: f64) -> Vec<usize> {
    (0..n)
        .map(|d| {
            let v = qp.add_var(format!("{name}@{d}"), Quadrant::TimeControllable, lb, ub);
            qp.set_scale(v, scale);
            v
        })
        .collect()
}

fn positive_scale(values: &[f64]) -> f64 {
    let m = values.iter().map(|v| v.abs()).filter(|v| v.is_finite()).fold(0.0, f64::max);
    if m > 0.0 {
        m
    } else {
        1.0
    }
}

/// Builds the shared controllable part: device variables, bounds, ramping,
/// coupling, balances and the objective. With `phasors`, also the device
/// phasors, their transform rows and the smoothing term.
pub(crate) fn build_common(sc: &Scenario, prep: &Prepared, phasors: bool) -> (QpModel, Layout) {
    let h = prep.horizon;
    let nd = h.n_dispatch;
    let mut qp = QpModel::new();
    let mut lay = Layout::default();
    let d = &sc.devices;
    let inf = f64::INFINITY;

    for x in &d.tpu {
        let v = time_vars(&mut qp, &format!("tpu[{}].P", x.name), nd, x.p_min, x.p_max, positive_scale(&[x.p_max, x.p_min]));
        add_cost(&mut qp, &v, &x.cost);
        let last = x.history.as_ref().and_then(|s| s.values().last().copied());
        ramp_rows(&mut qp, &v, last, x.ramp_up, x.ramp_down);
        lay.dev.tpu.push(v);
    }
    for x in &d.ngu {
        let s = positive_scale(&[x.p_max, x.p_min]);
        let p = time_vars(&mut qp, &format!("ngu[{}].P", x.name), nd, x.p_min, x.p_max, s);
        let m = time_vars(&mut qp, &format!("ngu[{}].m", x.name), nd, -inf, inf, s / x.ratio);
        for (&pv, &mv) in p.iter().zip(&m) {
            qp.add_row(RowLabel::Coupling, vec![(mv, x.ratio), (pv, -1.0)], Sense::Eq, 0.0);
        }
        ramp_rows(&mut qp, &p, x.history.values().last().copied(), x.ramp_up, x.ramp_down);
        lay.series.push(PhasorVar {
            name: format!("ngu[{}].m", x.name),
            carrier: Carrier::Gas,
            node: x.gas_node,
            sign: -1.0,
            re: vec![],
            im: vec![],
            time: m.clone(),
            history: x.history.values().iter().map(|v| v / x.ratio).collect(),
            reference: s / x.ratio,
        });
        lay.dev.ngu_p.push(p);
        lay.dev.ngu_m.push(m);
    }
    for x in &d.chp {
        let s = positive_scale(&[x.p_max, x.p_min]);
        let p = time_vars(&mut qp, &format!("chp[{}].P", x.name), nd, x.p_min, x.p_max, s);
        let hv = time_vars(&mut qp, &format!("chp[{}].h", x.name), nd, -inf, inf, s / x.ratio);
        for (&pv, &hh) in p.iter().zip(&hv) {
            qp.add_row(RowLabel::Coupling, vec![(pv, 1.0), (hh, -x.ratio)], Sense::Eq, 0.0);
        }
        add_cost(&mut qp, &p, &x.cost_power);
        add_cost(&mut qp, &hv, &x.cost_heat);
        let last = x.history.values().last().map(|v| v * x.ratio);
        ramp_rows(&mut qp, &p, last, x.ramp_up, x.ramp_down);
        lay.series.push(PhasorVar {
            name: format!("chp[{}].h", x.name),
            carrier: Carrier::Heat,
            node: x.heat_node,
            sign: 1.0,
            re: vec![],
            im: vec![],
            time: hv.clone(),
            history: x.history.values().to_vec(),
            reference: s / x.ratio,
        });
        lay.dev.chp_p.push(p);
        lay.dev.chp_h.push(hv);
    }
    for x in &d.wind {
        let avail = x.available.values();
        let s = positive_scale(avail);
        let v: Vec<usize> = (0..nd)
            .map(|t| {
                let v = qp.add_var(format!("wt[{}].P@{t}", x.name), Quadrant::TimeControllable, 0.0, avail[t]);
                qp.set_scale(v, s);
                v
            })
            .collect();
        lay.dev.wind.push(v);
    }
    for x in &d.gas_boiler {
        let s = positive_scale(&[x.h_max, x.h_min]);
        let hv = time_vars(&mut qp, &format!("gb[{}].h", x.name), nd, x.h_min, x.h_max, s);
        let m = time_vars(&mut qp, &format!("gb[{}].m", x.name), nd, -inf, inf, s / x.ratio);
        for (&hh, &mv) in hv.iter().zip(&m) {
            qp.add_row(RowLabel::Coupling, vec![(mv, x.ratio), (hh, -1.0)], Sense::Eq, 0.0);
        }
        ramp_rows(&mut qp, &hv, x.history.values().last().copied(), x.ramp_up, x.ramp_down);
        lay.series.push(PhasorVar {
            name: format!("gb[{}].m", x.name),
            carrier: Carrier::Gas,
            node: x.gas_node,
            sign: -1.0,
            re: vec![],
            im: vec![],
            time: m.clone(),
            history: x.history.values().iter().map(|v| v / x.ratio).collect(),
            reference: s / x.ratio,
        });
        lay.series.push(PhasorVar {
            name: format!("gb[{}].h", x.name),
            carrier: Carrier::Heat,
            node: x.heat_node,
            sign: 1.0,
            re: vec![],
            im: vec![],
            time: hv.clone(),
            history: x.history.values().to_vec(),
            reference: s,
        });
        lay.dev.gb_h.push(hv);
        lay.dev.gb_m.push(m);
    }
    for x in &d.heat_pump {
        let s = positive_scale(&[x.h_max, x.h_min]);
        let hv = time_vars(&mut qp, &format!("hp[{}].h", x.name), nd, x.h_min, x.h_max, s);
        let p = time_vars(&mut qp, &format!("hp[{}].P", x.name), nd, -inf, inf, s / x.ratio);
        for (&hh, &pv) in hv.iter().zip(&p) {
            qp.add_row(RowLabel::Coupling, vec![(hh, 1.0), (pv, -x.ratio)], Sense::Eq, 0.0);
        }
        ramp_rows(&mut qp, &hv, x.history.values().last().copied(), x.ramp_up, x.ramp_down);
        lay.series.push(PhasorVar {
            name: format!("hp[{}].h", x.name),
            carrier: Carrier::Heat,
            node: x.heat_node,
            sign: 1.0,
            re: vec![],
            im: vec![],
            time: hv.clone(),
            history: x.history.values().to_vec(),
            reference: s,
        });
        lay.dev.hp_h.push(hv);
        lay.dev.hp_p.push(p);
    }
    for x in &d.gas_well {
        let s = positive_scale(&[x.m_max, x.m_min]);
        let m = time_vars(&mut qp, &format!("gw[{}].m", x.name), nd, x.m_min, x.m_max, s);
        add_cost(&mut qp, &m, &x.cost);
        ramp_rows(&mut qp, &m, x.history.values().last().copied(), x.ramp_up, x.ramp_down);
        lay.series.push(PhasorVar {
            name: format!("gw[{}].m", x.name),
            carrier: Carrier::Gas,
            node: x.node,
            sign: 1.0,
            re: vec![],
            im: vec![],
            time: m.clone(),
            history: x.history.values().to_vec(),
            reference: s,
        });
        lay.dev.gw_m.push(m);
    }

    if phasors {
        add_device_phasors(prep, &mut lay, &mut qp);
    }

    // Real-time power balance.
    for t in 0..nd {
        let mut coeffs = Vec::new();
        for v in lay.dev.tpu.iter().chain(&lay.dev.ngu_p).chain(&lay.dev.chp_p).chain(&lay.dev.wind) {
            coeffs.push((v[t], 1.0));
        }
        for v in &lay.dev.hp_p {
            coeffs.push((v[t], -1.0));
        }
        let load: f64 = prep.epn_load.iter().map(|b| b[t]).sum();
        if !coeffs.is_empty() || load != 0.0 {
            qp.add_row(RowLabel::Balance, coeffs, Sense::Eq, load);
        }
    }
    // Horizon balances of gas and heat over the dispatch interval.
    if prep.gas.is_some() {
        let mut coeffs = Vec::new();
        for s in lay.series.iter().filter(|s| s.carrier == Carrier::Gas) {
            coeffs.extend(s.time.iter().map(|&v| (v, s.sign)));
        }
        let load: f64 = sc.ngn.as_ref().map_or(0.0, |n| {
            n.loads.iter().map(|l| l.series.values()[h.n_hist..].iter().sum::<f64>()).sum()
        });
        qp.add_row(RowLabel::Balance, coeffs, Sense::Eq, load);
    }
    if prep.heat.is_some() {
        let mut coeffs = Vec::new();
        for s in lay.series.iter().filter(|s| s.carrier == Carrier::Heat) {
            coeffs.extend(s.time.iter().map(|&v| (v, s.sign)));
        }
        let load: f64 = sc.dhn.as_ref().map_or(0.0, |n| {
            n.loads.iter().map(|l| l.series.values()[h.n_hist..].iter().sum::<f64>()).sum()
        });
        qp.add_row(RowLabel::Balance, coeffs, Sense::Ge, load);
    }
    (qp, lay)
}

fn add_device_phasors(prep: &Prepared, lay: &mut Layout, qp: &mut QpModel) {
    let h = prep.horizon;
    let (nt, nf) = (h.n_total(), h.n_freq());
    let inf = f64::INFINITY;
    // Device phasors, freedom bounds and the smoothing term.
    let mask = freedom_mask(nt);
    for s in lay.series.iter_mut() {
        for k in 0..nf {
            let re = qp.add_var(format!("{}~{k}.re", s.name), Quadrant::FreqControllable, -inf, inf);
            let im = qp.add_var(format!("{}~{k}.im", s.name), Quadrant::FreqControllable, -inf, inf);
            qp.set_scale(re, s.reference);
            qp.set_scale(im, s.reference);
            if mask.contains(&k) {
                qp.add_row(RowLabel::Freedom, vec![(im, 1.0)], Sense::Eq, 0.0);
            }
            if k > 0 {
                let w = prep.epsilon * k as f64 / (s.reference * s.reference);
                qp.add_quadratic(re, w);
                qp.add_quadratic(im, w);
                lay.smoothing.push((re, w));
                lay.smoothing.push((im, w));
            }
            s.re.push(re);
            s.im.push(im);
        }
    }
    // Transform rows: historical samples pinned, dispatch samples linked.
    let ones = vec![Complex64::new(1.0, 0.0); nf];
    for s in &lay.series {
        for t in 0..nt {
            let mut coeffs = Vec::with_capacity(2 * nf + 1);
            idft_terms(&prep.spectrum, t, &ones, &s.re, &s.im, &mut coeffs);
            if t < h.n_hist {
                qp.add_row(RowLabel::HistoricalBoundary, coeffs, Sense::Eq, s.history[t]);
            } else {
                coeffs.push((s.time[t - h.n_hist], -1.0));
                qp.add_row(RowLabel::TfConversion, coeffs, Sense::Eq, 0.0);
            }
        }
    }
}

/// Bus injections of controllable devices: `(var, bus, sign)`.
pub fn epn_device_terms(sc: &Scenario, lay: &Layout, t: usize) -> Vec<(usize, usize, f64)> {
    let d = &sc.devices;
    let mut out = Vec::new();
    for (x, v) in d.tpu.iter().zip(&lay.dev.tpu) {
        out.push((v[t], x.bus, 1.0));
    }
    for (x, v) in d.ngu.iter().zip(&lay.dev.ngu_p) {
        out.push((v[t], x.bus, 1.0));
    }
    for (x, v) in d.chp.iter().zip(&lay.dev.chp_p) {
        out.push((v[t], x.bus, 1.0));
    }
    for (x, v) in d.wind.iter().zip(&lay.dev.wind) {
        out.push((v[t], x.bus, 1.0));
    }
    for (x, v) in d.heat_pump.iter().zip(&lay.dev.hp_p) {
        out.push((v[t], x.bus, -1.0));
    }
    out
}

/// Line flow at dispatch step `t` as `(coefficients, constant)`.
pub fn line_flow_expression(sc: &Scenario, prep: &Prepared, lay: &Layout, line: usize, t: usize) -> (Vec<(usize, f64)>, f64) {
    let coeffs = epn_device_terms(sc, lay, t)
        .into_iter()
        .map(|(v, bus, s)| (v, s * prep.ptdf[(line, bus)]))
        .collect();
    let constant = -(0..prep.epn_load.len())
        .map(|b| prep.ptdf[(line, b)] * prep.epn_load[b][t])
        .sum::<f64>();
    (coeffs, constant)
}

pub(crate) fn add_line_rows(sc: &Scenario, prep: &Prepared, lay: &Layout, qp: &mut QpModel) {
    for (l, cap) in prep.line_limits.iter().enumerate() {
        let Some(cap) = cap else { continue };
        for t in 0..prep.horizon.n_dispatch {
            let (coeffs, c) = line_flow_expression(sc, prep, lay, l, t);
            qp.add_range(RowLabel::EpnSecurity, coeffs, -cap - c, cap - c);
        }
    }
}

fn complex_term(coeffs_re: &mut Vec<(usize, f64)>, coeffs_im: &mut Vec<(usize, f64)>, a: Complex64, re: usize, im: usize) {
    // a·(x + jy) = (a_r x − a_i y) + j(a_i x + a_r y)
    coeffs_re.push((re, a.re));
    coeffs_re.push((im, -a.im));
    coeffs_im.push((re, a.im));
    coeffs_im.push((im, a.re));
}

fn add_ecm_network(prep: &Prepared, lay: &mut Layout, qp: &mut QpModel) {
    let h = prep.horizon;
    let nf = h.n_freq();
    let nd = h.n_dispatch;
    let inf = f64::INFINITY;
    let mut mon = MonitoredVars::default();

    if let Some(g) = &prep.gas {
        let p_scale = positive_scale(&g.p_ref_series);
        for i in 0..g.n_nodes {
            if i == g.reference {
                mon.p_phasor.push(None);
                mon.p_time.push(None);
                continue;
            }
            let ph: Vec<(usize, usize)> = (0..nf)
                .map(|k| {
                    let re = qp.add_var(format!("p[{i}]~{k}.re"), Quadrant::FreqMonitored, -inf, inf);
                    let im = qp.add_var(format!("p[{i}]~{k}.im"), Quadrant::FreqMonitored, -inf, inf);
                    qp.set_scale(re, p_scale);
                    qp.set_scale(im, p_scale);
                    (re, im)
                })
                .collect();
            let (lo, hi) = g.bounds[i];
            let tv: Vec<usize> = (0..nd)
                .map(|t| {
                    let v = qp.add_var(format!("p[{i}]@{t}"), Quadrant::TimeMonitored, -inf, inf);
                    qp.set_scale(v, p_scale);
                    qp.add_range(RowLabel::NgnSecurity, vec![(v, 1.0)], lo.unwrap_or(-inf), hi.unwrap_or(inf));
                    v
                })
                .collect();
            mon.p_phasor.push(Some(ph));
            mon.p_time.push(Some(tv));
        }
        for k in 0..nf {
            let y = &g.admittance[k];
            for r in 0..g.n_nodes {
                if r == g.reference {
                    continue;
                }
                let (mut cr, mut ci) = (Vec::new(), Vec::new());
                for j in 0..g.n_nodes {
                    if let Some(ph) = &mon.p_phasor[j] {
                        if y[(r, j)] != ZERO {
                            complex_term(&mut cr, &mut ci, y[(r, j)], ph[k].0, ph[k].1);
                        }
                    }
                }
                for s in lay.series.iter().filter(|s| s.carrier == Carrier::Gas && s.node == r) {
                    cr.push((s.re[k], -s.sign));
                    ci.push((s.im[k], -s.sign));
                }
                let rhs = -g.load[r][k] - y[(r, g.reference)] * g.p_ref[k];
                qp.add_row(RowLabel::NgnCircuit, cr, Sense::Eq, rhs.re);
                qp.add_row(RowLabel::NgnCircuit, ci, Sense::Eq, rhs.im);
            }
        }
        for i in 0..g.n_nodes {
            let (Some(ph), Some(tv)) = (&mon.p_phasor[i], &mon.p_time[i]) else { continue };
            let re: Vec<usize> = ph.iter().map(|p| p.0).collect();
            let im: Vec<usize> = ph.iter().map(|p| p.1).collect();
            let ones = vec![Complex64::new(1.0, 0.0); nf];
            for (t, &v) in tv.iter().enumerate() {
                let mut coeffs = vec![(v, -1.0)];
                idft_terms(&prep.spectrum, h.n_hist + t, &ones, &re, &im, &mut coeffs);
                qp.add_row(RowLabel::TfConversion, coeffs, Sense::Eq, 0.0);
            }
        }
    }

    if let Some(ht) = &prep.heat {
        let t_scale = ht
            .bounds
            .iter()
            .flat_map(|b| [b.0, b.1])
            .flatten()
            .map(f64::abs)
            .fold(0.0, f64::max);
        let t_scale = if t_scale > 0.0 { t_scale } else { 1.0 };
        let phasor = |qp: &mut QpModel, name: String| -> Vec<(usize, usize)> {
            (0..nf)
                .map(|k| {
                    let re = qp.add_var(format!("{name}~{k}.re"), Quadrant::FreqMonitored, -inf, inf);
                    let im = qp.add_var(format!("{name}~{k}.im"), Quadrant::FreqMonitored, -inf, inf);
                    qp.set_scale(re, t_scale);
                    qp.set_scale(im, t_scale);
                    (re, im)
                })
                .collect()
        };
        for b in 0..ht.n_branches {
            mon.t_branch.push(phasor(qp, format!("Tbf[{b}]")));
        }
        for i in 0..ht.n_nodes {
            mon.t_node.push(phasor(qp, format!("T[{i}]")));
        }
        for i in 0..ht.n_nodes {
            let (lo, hi) = ht.bounds[i];
            let tv: Vec<usize> = (0..nd)
                .map(|t| {
                    let v = qp.add_var(format!("T[{i}]@{t}"), Quadrant::TimeMonitored, -inf, inf);
                    qp.set_scale(v, t_scale);
                    qp.add_range(RowLabel::DhnSecurity, vec![(v, 1.0)], lo.unwrap_or(-inf), hi.unwrap_or(inf));
                    v
                })
                .collect();
            mon.t_time.push(tv);
        }
        for k in 0..nf {
            let hb = &ht.branch[k];
            // Ã₊ᵀ·ḣ_n = Y_h,b·Ṫ_bf
            for b in 0..ht.n_branches {
                let (mut cr, mut ci) = (Vec::new(), Vec::new());
                let mut rhs = ZERO;
                for n in 0..ht.n_nodes {
                    let w = hb.injection_map[(b, n)].re;
                    if w == 0.0 {
                        continue;
                    }
                    for s in lay.series.iter().filter(|s| s.carrier == Carrier::Heat && s.node == n) {
                        cr.push((s.re[k], w * s.sign));
                        ci.push((s.im[k], w * s.sign));
                    }
                    rhs += ht.load[n][k] * w;
                }
                for c in 0..ht.n_branches {
                    let a = hb.y_b[(b, c)];
                    if a != ZERO {
                        complex_term(&mut cr, &mut ci, -a, mon.t_branch[c][k].0, mon.t_branch[c][k].1);
                    }
                }
                qp.add_row(RowLabel::DhnCircuit, cr, Sense::Eq, rhs.re);
                qp.add_row(RowLabel::DhnCircuit, ci, Sense::Eq, rhs.im);
            }
            // Ṫ_n = Ã₊·Ṫ_bf (mixing rows at terminal nodes)
            for n in 0..ht.n_nodes {
                let (mut cr, mut ci) = (vec![(mon.t_node[n][k].0, 1.0)], vec![(mon.t_node[n][k].1, 1.0)]);
                for b in 0..ht.n_branches {
                    let a = hb.node_map[(n, b)];
                    if a != ZERO {
                        complex_term(&mut cr, &mut ci, -a, mon.t_branch[b][k].0, mon.t_branch[b][k].1);
                    }
                }
                qp.add_row(RowLabel::DhnCircuit, cr, Sense::Eq, 0.0);
                qp.add_row(RowLabel::DhnCircuit, ci, Sense::Eq, 0.0);
            }
        }
        let ones = vec![Complex64::new(1.0, 0.0); nf];
        for n in 0..ht.n_nodes {
            let re: Vec<usize> = mon.t_node[n].iter().map(|p| p.0).collect();
            let im: Vec<usize> = mon.t_node[n].iter().map(|p| p.1).collect();
            for (t, &v) in mon.t_time[n].iter().enumerate() {
                let mut coeffs = vec![(v, -1.0)];
                idft_terms(&prep.spectrum, h.n_hist + t, &ones, &re, &im, &mut coeffs);
                qp.add_row(RowLabel::TfConversion, coeffs, Sense::Eq, 0.0);
            }
        }
    }
    lay.monitored = Some(mon);
}

/// Builds the requested formulation.
pub fn build_model(sc: &Scenario, prep: &Prepared, formulation: Formulation) -> BuiltModel {
    let (mut qp, mut layout) = build_common(sc, prep, true);
    match formulation {
        Formulation::Ecm => {
            add_line_rows(sc, prep, &layout, &mut qp);
            add_ecm_network(prep, &mut layout, &mut qp);
        }
        Formulation::Vsp => {
            add_line_rows(sc, prep, &layout, &mut qp);
            crate::compaction::add_all_projected_rows(prep, &layout, &mut qp);
        }
        Formulation::Raw => {}
    }
    BuiltModel { formulation, qp, layout }
}

/// Time-domain device schedules, `[device][step]`.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct Schedules {
    pub tpu: Vec<Vec<f64>>,
    pub ngu_p: Vec<Vec<f64>>,
    pub ngu_m: Vec<Vec<f64>>,
    pub chp_p: Vec<Vec<f64>>,
    pub chp_h: Vec<Vec<f64>>,
    pub wind: Vec<Vec<f64>>,
    pub gb_m: Vec<Vec<f64>>,
    pub gb_h: Vec<Vec<f64>>,
    pub hp_p: Vec<Vec<f64>>,
    pub hp_h: Vec<Vec<f64>>,
    pub gw_m: Vec<Vec<f64>>,
}

impl Schedules {
    pub fn from_solution(dev: &DeviceVars, x: &[f64]) -> Self {
        let pick = |v: &Vec<Vec<usize>>| v.iter().map(|d| d.iter().map(|&j| x[j]).collect()).collect();
        Schedules {
            tpu: pick(&dev.tpu),
            ngu_p: pick(&dev.ngu_p),
            ngu_m: pick(&dev.ngu_m),
            chp_p: pick(&dev.chp_p),
            chp_h: pick(&dev.chp_h),
            wind: pick(&dev.wind),
            gb_m: pick(&dev.gb_m),
            gb_h: pick(&dev.gb_h),
            hp_p: pick(&dev.hp_p),
            hp_h: pick(&dev.hp_h),
            gw_m: pick(&dev.gw_m),
        }
    }
}

/// Net node injections derived from a solution.
#[derive(Debug, Clone, PartialEq)]
pub struct Injections {
    /// Bus × dispatch step.
    pub epn: Vec<Vec<f64>>,
    /// Gas node × κ.
    pub gas: Vec<Vec<Complex64>>,
    /// Heat node × κ.
    pub heat: Vec<Vec<Complex64>>,
}

impl Injections {
    pub fn from_solution(sc: &Scenario, prep: &Prepared, lay: &Layout, x: &[f64]) -> Self {
        let nd = prep.horizon.n_dispatch;
        let nf = prep.horizon.n_freq();
        let mut epn: Vec<Vec<f64>> = prep.epn_load.iter().map(|b| b.iter().map(|v| -v).collect()).collect();
        for (t, row) in (0..nd).map(|t| (t, epn_device_terms(sc, lay, t))) {
            for (v, bus, s) in row {
                epn[bus][t] += s * x[v];
            }
        }
        let net = |loads: &Vec<Vec<Complex64>>, carrier: Carrier| -> Vec<Vec<Complex64>> {
            let mut out: Vec<Vec<Complex64>> = loads.iter().map(|l| l.iter().map(|c| -c).collect()).collect();
            for s in lay.series.iter().filter(|s| s.carrier == carrier) {
                for k in 0..nf {
                    out[s.node][k] += Complex64::new(x[s.re[k]], x[s.im[k]]) * s.sign;
                }
            }
            out
        };
        Injections {
            epn,
            gas: prep.gas.as_ref().map_or_else(Vec::new, |g| net(&g.load, Carrier::Gas)),
            heat: prep.heat.as_ref().map_or_else(Vec::new, |h| net(&h.load, Carrier::Heat)),
        }
    }
}

/// `(W₁, W₂)` of a solution.
pub fn objective_split(qp: &QpModel, lay: &Layout, x: &[f64]) -> (f64, f64) {
    let w2: f64 = lay.smoothing.iter().map(|&(j, w)| w * x[j] * x[j]).sum();
    (qp.objective(x) - w2, w2)
}

/// Largest deviation between device phasors and the DFT of their merged
/// historical + dispatch series.
pub fn dft_pair_residual(prep: &Prepared, lay: &Layout, x: &[f64]) -> f64 {
    let h = prep.horizon;
    let mut worst: f64 = 0.0;
    for s in &lay.series {
        let series: Vec<f64> = s.history.iter().copied().chain(s.time.iter().map(|&v| x[v])).collect();
        let f = prep.spectrum.forward(&series);
        let scale = series.iter().map(|v| v.abs()).fold(1e-12, f64::max);
        for k in 0..h.n_freq() {
            let c = Complex64::new(x[s.re[k]], x[s.im[k]]);
            worst = worst.max((c - f.coeffs[k]).norm() / scale);
        }
    }
    worst
}
