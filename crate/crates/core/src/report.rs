//! Solution pipelines, self-contained run reports and method comparison.

use std::fmt;
use std::str::FromStr;
use std::time::Instant;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::compaction::{cga_solve, CgaError, CgaOptions, CgaStatus, CgaTrace};
use crate::circuit::{gas_distributed_params, heat_distributed_params, GasPipeGeometry, HeatPipeGeometry};
use crate::fdm::{
    build_fdm_model, fdm_monitored, gas_pipe_agreement, heat_pipe_agreement, FdmError, HeatPipeSpec, PeriodicGrid,
    PeriodicSignal, PipeAgreement,
};
use crate::flowcalc::{evaluate_monitored, security_check, MonitoredState};
use crate::model::{
    build_model, dft_pair_residual, objective_split, Formulation, Injections, Layout, ModelError, Prepared, Schedules,
};
use crate::qp::{solve, Audit, ModelStats, QpModel, SolveOptions, SolveResult, SolveStatus};
use crate::scenario::Scenario;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Method {
    Fdm,
    Ecm,
    EcmVsp,
    EcmVspCga,
}

impl Method {
    pub const ALL: [Method; 4] = [Method::Fdm, Method::Ecm, Method::EcmVsp, Method::EcmVspCga];

    pub fn tag(&self) -> &'static str {
        match self {
            Method::Fdm => "fdm",
            Method::Ecm => "ecm",
            Method::EcmVsp => "ecm-vsp",
            Method::EcmVspCga => "ecm-vsp-cga",
        }
    }
}

impl fmt::Display for Method {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.tag())
    }
}

impl FromStr for Method {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Method::ALL
            .into_iter()
            .find(|m| m.tag() == s)
            .ok_or_else(|| format!("unknown method `{s}` (expected fdm, ecm, ecm-vsp or ecm-vsp-cga)"))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RunOptions {
    pub solve: SolveOptions,
    pub cga: CgaOptions,
}

impl RunOptions {
    /// Options from the scenario's solver section.
    pub fn from_scenario(sc: &Scenario) -> Self {
        Self {
            solve: SolveOptions {
                tol_feas: sc.solver.tol_feas,
                tol_gap: sc.solver.tol_gap,
                ..Default::default()
            },
            cga: CgaOptions {
                n_r: sc.solver.n_r,
                max_iter: sc.solver.max_iter,
                ..Default::default()
            },
        }
    }
}

#[derive(Debug, Error)]
pub enum RunError {
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Fdm(#[from] FdmError),
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct Timing {
    pub build_seconds: f64,
    pub solve_seconds: f64,
    pub check_seconds: f64,
    /// Wall clock of the whole pipeline.
    pub total_seconds: f64,
}

/// Balance residuals recomputed from the schedules, each relative to the
/// matching load total.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BalanceAudit {
    /// `(supply − load)/load` per dispatch step.
    pub power: Vec<f64>,
    /// `(supply − load)/load` over the dispatch interval.
    pub gas: Option<f64>,
    pub heat: Option<f64>,
    /// Phasor against DFT of the time series; absent without phasors.
    pub dft_pair: Option<f64>,
}

impl BalanceAudit {
    pub fn max_power(&self) -> f64 {
        self.power.iter().fold(0.0, |m, v| m.max(v.abs()))
    }

    /// Heat may be oversupplied; every other balance is an equality.
    pub fn passes(&self, tol: f64) -> bool {
        self.max_power() < tol
            && self.gas.is_none_or(|g| g.abs() < tol)
            && self.heat.is_none_or(|h| h >= -tol)
            && self.dft_pair.is_none_or(|d| d < tol)
    }
}

fn relative(residual: f64, load: f64) -> f64 {
    residual / load.abs().max(1.0)
}

pub fn balance_audit(sc: &Scenario, prep: &Prepared, sch: &Schedules, dft_pair: Option<f64>) -> BalanceAudit {
    let h = prep.horizon;
    let at = |v: &Vec<Vec<f64>>, t: usize| v.iter().map(|d| d[t]).sum::<f64>();
    let total = |v: &Vec<Vec<f64>>| v.iter().flatten().sum::<f64>();
    let power = (0..h.n_dispatch)
        .map(|t| {
            let load: f64 = prep.epn_load.iter().map(|b| b[t]).sum();
            let supply = at(&sch.tpu, t) + at(&sch.ngu_p, t) + at(&sch.chp_p, t) + at(&sch.wind, t) - at(&sch.hp_p, t);
            relative(supply - load, load)
        })
        .collect();
    let dispatch_load = |loads: &[crate::scenario::NodeSeries]| -> f64 {
        loads.iter().map(|l| l.series.values()[h.n_hist..].iter().sum::<f64>()).sum()
    };
    let gas = sc.ngn.as_ref().map(|n| {
        let load = dispatch_load(&n.loads);
        relative(total(&sch.gw_m) - total(&sch.ngu_m) - total(&sch.gb_m) - load, load)
    });
    let heat = sc.dhn.as_ref().map(|n| {
        let load = dispatch_load(&n.loads);
        relative(total(&sch.chp_h) + total(&sch.gb_h) + total(&sch.hp_h) - load, load)
    });
    BalanceAudit {
        power,
        gas,
        heat,
        dft_pair,
    }
}

/// Limits of the monitored quantities, carried so reports plot without the
/// scenario.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct MonitoredBounds {
    pub line_names: Vec<String>,
    pub line: Vec<Option<f64>>,
    pub gas_nodes: Vec<String>,
    pub pressure: Vec<(Option<f64>, Option<f64>)>,
    pub heat_nodes: Vec<String>,
    pub temperature: Vec<(Option<f64>, Option<f64>)>,
}

impl MonitoredBounds {
    pub fn new(sc: &Scenario, prep: &Prepared) -> Self {
        Self {
            line_names: sc.epn.lines.iter().map(|l| l.name.clone()).collect(),
            line: prep.line_limits.clone(),
            gas_nodes: sc.ngn.as_ref().map_or_else(Vec::new, |n| n.nodes.iter().map(|x| x.name.clone()).collect()),
            pressure: prep.gas.as_ref().map_or_else(Vec::new, |g| g.bounds.clone()),
            heat_nodes: sc.dhn.as_ref().map_or_else(Vec::new, |n| n.nodes.iter().map(|x| x.name.clone()).collect()),
            temperature: prep.heat.as_ref().map_or_else(Vec::new, |h| h.bounds.clone()),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunReport {
    pub scenario: String,
    pub method: Method,
    pub step_seconds: f64,
    pub n_dispatch: usize,
    pub stats: ModelStats,
    pub status: SolveStatus,
    pub backend_status: String,
    pub objective: Option<f64>,
    /// Operating cost.
    pub w1: Option<f64>,
    /// Smoothing term.
    pub w2: Option<f64>,
    pub ipm_iterations: u32,
    pub audit: Option<Audit>,
    pub balance: Option<BalanceAudit>,
    pub timing: Timing,
    pub cga: Option<CgaTrace>,
    /// Security violations of the reported solution.
    pub violations: Option<usize>,
    pub schedules: Option<Schedules>,
    pub monitored: Option<MonitoredState>,
    pub bounds: MonitoredBounds,
}

impl RunReport {
    pub fn secure(&self) -> bool {
        self.status == SolveStatus::Optimal && self.violations == Some(0)
    }

    /// 0 optimal and secure, 2 insecure, 3 infeasible, 4 numerical trouble.
    pub fn exit_code(&self) -> i32 {
        match self.status {
            SolveStatus::Optimal if self.secure() => 0,
            SolveStatus::Optimal => 2,
            SolveStatus::Infeasible => 3,
            _ => 4,
        }
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("report serialises")
    }

    pub fn from_json(text: &str) -> Result<Self, serde_json::Error> {
        serde_json::from_str(text)
    }
}

struct Solved<'a> {
    qp: &'a QpModel,
    layout: &'a Layout,
    result: SolveResult,
    monitored: Option<MonitoredState>,
    phasors: bool,
}

fn assemble(
    sc: &Scenario,
    prep: &Prepared,
    method: Method,
    s: Solved<'_>,
    timing: Timing,
    cga: Option<CgaTrace>,
) -> RunReport {
    let x = s.result.x.as_deref();
    let schedules = x.map(|x| Schedules::from_solution(&s.layout.dev, x));
    let (w1, w2) = x.map(|x| objective_split(s.qp, s.layout, x)).unzip();
    let dft = x.filter(|_| s.phasors).map(|x| dft_pair_residual(prep, s.layout, x));
    let violations = s.monitored.as_ref().map(|m| security_check(prep, m, 1e-6).len());
    RunReport {
        scenario: sc.name.clone(),
        method,
        step_seconds: sc.horizon.step_seconds,
        n_dispatch: prep.horizon.n_dispatch,
        stats: s.qp.stats(),
        status: s.result.status,
        backend_status: s.result.backend_status.clone(),
        objective: s.result.objective,
        w1,
        w2,
        ipm_iterations: s.result.iterations,
        audit: s.result.audit,
        balance: schedules.as_ref().map(|sch| balance_audit(sc, prep, sch, dft)),
        timing,
        cga,
        violations,
        schedules,
        monitored: s.monitored,
        bounds: MonitoredBounds::new(sc, prep),
    }
}

/// Solves the scenario with one pipeline.
pub fn run(method: Method, sc: &Scenario, opts: &RunOptions) -> Result<RunReport, RunError> {
    let start = Instant::now();
    let prep = Prepared::new(sc)?;
    match method {
        Method::Ecm | Method::EcmVsp => {
            let f = if method == Method::Ecm { Formulation::Ecm } else { Formulation::Vsp };
            let model = build_model(sc, &prep, f);
            let build_seconds = start.elapsed().as_secs_f64();
            let result = solve(&model.qp, &opts.solve);
            let check = Instant::now();
            let monitored = result
                .x
                .as_ref()
                .map(|x| evaluate_monitored(&prep, &Injections::from_solution(sc, &prep, &model.layout, x)));
            let timing = Timing {
                build_seconds,
                solve_seconds: result.solve_seconds,
                check_seconds: check.elapsed().as_secs_f64(),
                total_seconds: start.elapsed().as_secs_f64(),
            };
            let s = Solved {
                qp: &model.qp,
                layout: &model.layout,
                result,
                monitored,
                phasors: true,
            };
            Ok(assemble(sc, &prep, method, s, timing, None))
        }
        Method::EcmVspCga => match cga_solve(sc, &prep, &opts.cga, &opts.solve) {
            Ok(out) => {
                let total = start.elapsed().as_secs_f64();
                let timing = Timing {
                    build_seconds: total - out.solve_seconds - out.check_seconds,
                    solve_seconds: out.solve_seconds,
                    check_seconds: out.check_seconds,
                    total_seconds: total,
                };
                let s = Solved {
                    qp: &out.model.qp,
                    layout: &out.model.layout,
                    result: out.result,
                    monitored: Some(out.state),
                    phasors: true,
                };
                let mut r = assemble(sc, &prep, method, s, timing, Some(out.trace));
                if r.cga.as_ref().is_some_and(|t| t.status != CgaStatus::Secure) && r.violations == Some(0) {
                    // the strict check and the loop's check differ only by tolerance
                    r.violations = Some(out.remaining.len().max(1));
                }
                Ok(r)
            }
            Err(CgaError::Solver { status, backend, .. }) => {
                let model = build_model(sc, &prep, Formulation::Raw);
                let result = SolveResult {
                    status,
                    x: None,
                    objective: None,
                    solve_seconds: 0.0,
                    iterations: 0,
                    backend_status: backend,
                    audit: None,
                };
                let timing = Timing {
                    total_seconds: start.elapsed().as_secs_f64(),
                    ..Default::default()
                };
                let s = Solved {
                    qp: &model.qp,
                    layout: &model.layout,
                    result,
                    monitored: None,
                    phasors: true,
                };
                Ok(assemble(sc, &prep, method, s, timing, None))
            }
        },
        Method::Fdm => {
            let model = build_fdm_model(sc, &prep)?;
            let build_seconds = start.elapsed().as_secs_f64();
            let result = solve(&model.qp, &opts.solve);
            let check = Instant::now();
            let monitored = result.x.as_ref().map(|x| fdm_monitored(sc, &prep, &model, x));
            let timing = Timing {
                build_seconds,
                solve_seconds: result.solve_seconds,
                check_seconds: check.elapsed().as_secs_f64(),
                total_seconds: start.elapsed().as_secs_f64(),
            };
            let s = Solved {
                qp: &model.qp,
                layout: &model.layout,
                result,
                monitored,
                phasors: false,
            };
            Ok(assemble(sc, &prep, method, s, timing, None))
        }
    }
}

/// Circuit against finite differences on one gas and one heat pipe of a
/// scenario, over successively halved meshes.
#[derive(Debug, Clone, PartialEq)]
pub struct ForwardStudy {
    pub gas_pipe: Option<String>,
    pub gas: Vec<PipeAgreement>,
    pub heat_pipe: Option<String>,
    pub heat: Vec<PipeAgreement>,
}

impl ForwardStudy {
    fn monotone(v: &[PipeAgreement]) -> bool {
        v.windows(2).all(|w| w[1].relative_rms < w[0].relative_rms)
    }

    pub fn gas_monotone(&self) -> bool {
        Self::monotone(&self.gas)
    }

    pub fn heat_monotone(&self) -> bool {
        Self::monotone(&self.heat)
    }
}

/// Drives pipe `gas_pipe` (and `heat_pipe`) with a daily periodic boundary
/// of two harmonics around its linearisation point, starting at the
/// scenario mesh and step and halving both `levels − 1` times.
pub fn forward_study(sc: &Scenario, gas_pipe: usize, heat_pipe: usize, levels: usize) -> Result<ForwardStudy, RunError> {
    let period = 86_400.0;
    let n_samples = (period / sc.horizon.step_seconds).round().max(2.0) as usize;
    let grid = |k: usize| PeriodicGrid {
        period,
        n_samples,
        substeps: 1 << k,
        warmup_periods: 1,
    };
    let circuit = |pipe: &str| {
        let pipe = pipe.to_string();
        move |source| RunError::Model(ModelError::Circuit { pipe: pipe.clone(), source })
    };
    let mut out = ForwardStudy {
        gas_pipe: None,
        gas: Vec::new(),
        heat_pipe: None,
        heat: Vec::new(),
    };
    if let Some(p) = sc.ngn.as_ref().and_then(|n| n.pipes.get(gas_pipe)) {
        let g = GasPipeGeometry::new(p.length, p.diameter, p.area, p.friction, p.incline, p.sonic_speed, p.base_velocity)
            .map_err(circuit(&p.name))?;
        let par = gas_distributed_params(&g).map_err(circuit(&p.name))?;
        let p_mean = sc.ngn.as_ref().map_or(50e5, |n| {
            let v = n.reference_pressure.values();
            v.iter().sum::<f64>() / v.len().max(1) as f64
        });
        // mass flow at the linearisation velocity
        let m_mean = p.base_velocity * g.area * p_mean / (p.sonic_speed * p.sonic_speed);
        let p_in = PeriodicSignal {
            mean: p_mean,
            harmonics: vec![(1, 0.02 * p_mean, 0.3), (2, 0.006 * p_mean, 1.0)],
        };
        let m_out = PeriodicSignal {
            mean: m_mean,
            harmonics: vec![(1, 0.3 * m_mean, -0.5), (2, 0.1 * m_mean, 0.2)],
        };
        for k in 0..levels {
            let dx = sc.solver.gas_mesh / (1 << k) as f64;
            out.gas.push(gas_pipe_agreement(par, p.length, dx, grid(k), &p_in, &m_out)?);
        }
        out.gas_pipe = Some(p.name.clone());
    }
    if let Some(d) = sc.dhn.as_ref() {
        if let Some(p) = d.pipes.get(heat_pipe) {
            let geom = HeatPipeGeometry {
                length: p.length,
                area: p.area,
                heat_loss: p.heat_loss,
                specific_heat: d.specific_heat,
                density: d.density,
                mass_flow: p.mass_flow,
            };
            let par = heat_distributed_params(&geom).map_err(circuit(&p.name))?;
            let spec = HeatPipeSpec {
                from: 0,
                to: 1,
                length: p.length,
                area: p.area,
                heat_loss: p.heat_loss,
                mass_flow: p.mass_flow,
            };
            let t_mean = match sc.dhn.as_ref().and_then(|d| d.nodes.get(p.from)) {
                Some(crate::scenario::HeatNode {
                    t_min: Some(lo),
                    t_max: Some(hi),
                    ..
                }) => 0.5 * (lo + hi),
                _ => 80.0,
            };
            let t_in = PeriodicSignal {
                mean: t_mean,
                harmonics: vec![(1, 0.1 * t_mean, 0.3), (2, 0.04 * t_mean, 1.0)],
            };
            for k in 0..levels {
                let dx = sc.solver.heat_mesh / (1 << k) as f64;
                out.heat.push(heat_pipe_agreement(spec, &par, d.specific_heat, d.density, dx, grid(k), &t_in)?);
            }
            out.heat_pipe = Some(p.name.clone());
        }
    }
    Ok(out)
}

/// One row of a comparison table.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ComparisonRow {
    pub scenario: String,
    pub method: Method,
    pub status: SolveStatus,
    pub variables: usize,
    pub constraints: usize,
    pub nonzeros: usize,
    pub objective: Option<f64>,
    /// Relative gap to the first report's objective.
    pub gap: Option<f64>,
    pub cga_iterations: Option<usize>,
    pub build_seconds: f64,
    pub solve_seconds: f64,
    pub total_seconds: f64,
}

#[derive(Debug, Error)]
pub enum CompareError {
    #[error("need at least two reports")]
    TooFew,
    #[error("reports cover different scenarios ({0} and {1}); pass the scaling flag for a cascade family")]
    Mismatch(String, String),
}

/// Side-by-side rows; reports must share a scenario unless `family` is set.
pub fn compare(reports: &[RunReport], family: bool) -> Result<Vec<ComparisonRow>, CompareError> {
    if reports.len() < 2 {
        return Err(CompareError::TooFew);
    }
    if !family {
        if let Some(r) = reports.iter().find(|r| r.scenario != reports[0].scenario) {
            return Err(CompareError::Mismatch(reports[0].scenario.clone(), r.scenario.clone()));
        }
    }
    let base = reports[0].objective;
    Ok(reports
        .iter()
        .map(|r| ComparisonRow {
            scenario: r.scenario.clone(),
            method: r.method,
            status: r.status,
            variables: r.stats.variables,
            constraints: r.stats.constraints,
            nonzeros: r.stats.nonzeros,
            objective: r.objective,
            gap: match (r.objective, base) {
                (Some(a), Some(b)) if !family => Some((a - b) / b.abs().max(1.0)),
                _ => None,
            },
            cga_iterations: r.cga.as_ref().map(|t| t.iterations.len()),
            build_seconds: r.timing.build_seconds,
            solve_seconds: r.timing.solve_seconds,
            total_seconds: r.timing.total_seconds,
        })
        .collect())
}

fn opt(v: Option<f64>, prec: usize) -> String {
    v.map_or_else(|| "-".into(), |x| format!("{x:.prec$e}"))
}

pub fn comparison_text(rows: &[ComparisonRow]) -> String {
    let mut out = format!(
        "{:<16} {:<12} {:<18} {:>8} {:>8} {:>10} {:>16} {:>10} {:>4} {:>9} {:>9}\n",
        "scenario", "method", "status", "vars", "cons", "nnz", "objective", "gap", "cga", "solve[s]", "total[s]"
    );
    for r in rows {
        out += &format!(
            "{:<16} {:<12} {:<18} {:>8} {:>8} {:>10} {:>16} {:>10} {:>4} {:>9.2} {:>9.2}\n",
            r.scenario,
            r.method.tag(),
            r.status.to_string(),
            r.variables,
            r.constraints,
            r.nonzeros,
            opt(r.objective, 9),
            opt(r.gap, 2),
            r.cga_iterations.map_or_else(|| "-".into(), |n| n.to_string()),
            r.solve_seconds,
            r.total_seconds
        );
    }
    out
}

/// CSV without timings, so reruns produce identical bytes.
pub fn comparison_csv(rows: &[ComparisonRow]) -> String {
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record([
        "scenario",
        "method",
        "status",
        "variables",
        "constraints",
        "nonzeros",
        "objective",
        "gap",
        "cga_iterations",
    ])
    .expect("in-memory write");
    for r in rows {
        w.write_record([
            r.scenario.clone(),
            r.method.tag().into(),
            r.status.to_string(),
            r.variables.to_string(),
            r.constraints.to_string(),
            r.nonzeros.to_string(),
            r.objective.map_or_else(String::new, |v| format!("{v:.6e}")),
            r.gap.map_or_else(String::new, |v| format!("{v:.3e}")),
            r.cga_iterations.map_or_else(String::new, |n| n.to_string()),
        ])
        .expect("in-memory write");
    }
    String::from_utf8(w.into_inner().expect("flush")).expect("utf-8")
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::cases;

    #[test]
    fn micro_ecm_report_is_secure_and_balanced() {
        let sc = cases::micro();
        let r = run(Method::Ecm, &sc, &RunOptions::from_scenario(&sc)).unwrap();
        assert_eq!(r.exit_code(), 0);
        let b = r.balance.as_ref().unwrap();
        assert!(b.passes(1e-6), "{b:?}");
        assert!(b.dft_pair.is_some());
        let back = RunReport::from_json(&r.to_json()).unwrap();
        assert_eq!(back.objective, r.objective);
    }

    #[test]
    fn balance_audit_flags_shortfall() {
        let sc = cases::micro();
        let prep = Prepared::new(&sc).unwrap();
        let nd = prep.horizon.n_dispatch;
        let load: Vec<f64> = (0..nd).map(|t| prep.epn_load.iter().map(|b| b[t]).sum()).collect();
        let sch = Schedules {
            tpu: vec![load.iter().map(|l| 0.5 * l).collect()],
            ..Default::default()
        };
        let b = balance_audit(&sc, &prep, &sch, None);
        assert!(b.power.iter().all(|r| (r + 0.5).abs() < 1e-12));
        assert!(!b.passes(1e-6));
    }

    #[test]
    fn method_tags_parse() {
        for m in Method::ALL {
            assert_eq!(m.tag().parse::<Method>().unwrap(), m);
        }
        assert!("vsp".parse::<Method>().is_err());
    }

    #[test]
    fn compare_rejects_mixed_scenarios() {
        let sc = cases::micro();
        let opts = RunOptions::from_scenario(&sc);
        let a = run(Method::Ecm, &sc, &opts).unwrap();
        let mut b = run(Method::EcmVsp, &sc, &opts).unwrap();
        let rows = compare(&[a.clone(), b.clone()], false).unwrap();
        assert!(rows[1].gap.unwrap().abs() < 1e-6);
        assert_eq!(comparison_csv(&rows), comparison_csv(&rows));
        b.scenario = "other".into();
        assert!(matches!(compare(&[a, b], false), Err(CompareError::Mismatch(..))));
    }
}
