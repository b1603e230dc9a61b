//! Variable space projection and the constraint generation loop.
//!
//! Node pressures and temperatures are written as affine functions of the
//! device phasors through the per-frequency impedance matrices, so their
//! bounds become rows over controllable variables only. Constraint
//! generation starts from the model without any security rows and adds
//! the most severe violated rows until the forward security check passes.

use std::collections::{BTreeMap, BTreeSet};
use std::time::Instant;

use num_complex::Complex64;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::flowcalc::{evaluate_monitored, security_check, MonitoredState, Violation, ViolationKind};
use crate::model::{
    build_model, idft_terms, idft_value, line_flow_expression, BuiltModel, Carrier, Formulation, Injections, Layout,
    Prepared,
};
use crate::qp::{solve, QpModel, RowLabel, Sense, SolveOptions, SolveResult, SolveStatus};
use crate::scenario::Scenario;

/// Affine expression of a monitored quantity over model variables.
#[derive(Debug, Clone, PartialEq)]
pub struct ProjectedRow {
    pub coeffs: Vec<(usize, f64)>,
    pub constant: f64,
}

/// Pressure of gas node `node` at dispatch step `t`.
pub fn project_pressure(prep: &Prepared, lay: &Layout, node: usize, t: usize) -> ProjectedRow {
    let g = prep.gas.as_ref().expect("gas network");
    let nf = prep.horizon.n_freq();
    let tau = prep.horizon.n_hist + t;
    let mut coeffs = Vec::new();
    for s in lay.series.iter().filter(|s| s.carrier == Carrier::Gas) {
        let c: Vec<Complex64> = (0..nf).map(|k| g.impedance[k].z[(node, s.node)] * s.sign).collect();
        idft_terms(&prep.spectrum, tau, &c, &s.re, &s.im, &mut coeffs);
    }
    let offset: Vec<Complex64> = (0..nf)
        .map(|k| {
            let z = &g.impedance[k];
            let mut acc = z.reference_gain[node] * g.p_ref[k];
            for j in 0..g.n_nodes {
                acc -= z.z[(node, j)] * g.load[j][k];
            }
            acc
        })
        .collect();
    ProjectedRow {
        coeffs,
        constant: idft_value(&prep.spectrum, tau, &offset),
    }
}

/// Temperature of heat node `node` at dispatch step `t`.
pub fn project_temperature(prep: &Prepared, lay: &Layout, node: usize, t: usize) -> ProjectedRow {
    let ht = prep.heat.as_ref().expect("heat network");
    let nf = prep.horizon.n_freq();
    let tau = prep.horizon.n_hist + t;
    let mut coeffs = Vec::new();
    for s in lay.series.iter().filter(|s| s.carrier == Carrier::Heat) {
        let c: Vec<Complex64> = (0..nf).map(|k| ht.impedance[k][(node, s.node)] * s.sign).collect();
        idft_terms(&prep.spectrum, tau, &c, &s.re, &s.im, &mut coeffs);
    }
    let offset: Vec<Complex64> = (0..nf)
        .map(|k| {
            let mut acc = Complex64::new(0.0, 0.0);
            for j in 0..ht.n_nodes {
                acc -= ht.impedance[k][(node, j)] * ht.load[j][k];
            }
            acc
        })
        .collect();
    ProjectedRow {
        coeffs,
        constant: idft_value(&prep.spectrum, tau, &offset),
    }
}

fn add_bounded(qp: &mut QpModel, label: RowLabel, row: ProjectedRow, lo: Option<f64>, hi: Option<f64>) {
    let lo = lo.map_or(f64::NEG_INFINITY, |v| v - row.constant);
    let hi = hi.map_or(f64::INFINITY, |v| v - row.constant);
    qp.add_range(label, row.coeffs, lo, hi);
}

/// Adds every projected node-bound row (the full security set of the
/// projected model, without line rows).
pub fn add_all_projected_rows(prep: &Prepared, lay: &Layout, qp: &mut QpModel) {
    let nd = prep.horizon.n_dispatch;
    if let Some(g) = &prep.gas {
        for i in 0..g.n_nodes {
            let (lo, hi) = g.bounds[i];
            if i == g.reference || (lo.is_none() && hi.is_none()) {
                continue;
            }
            for t in 0..nd {
                add_bounded(qp, RowLabel::NgnSecurity, project_pressure(prep, lay, i, t), lo, hi);
            }
        }
    }
    if let Some(ht) = &prep.heat {
        for i in 0..ht.n_nodes {
            let (lo, hi) = ht.bounds[i];
            if lo.is_none() && hi.is_none() {
                continue;
            }
            for t in 0..nd {
                add_bounded(qp, RowLabel::DhnSecurity, project_temperature(prep, lay, i, t), lo, hi);
            }
        }
    }
}

/// Adds the single-sided security row matching a violation.
pub fn add_cut(sc: &Scenario, prep: &Prepared, lay: &Layout, qp: &mut QpModel, v: &Violation) {
    let (label, row, bound) = match v.kind {
        ViolationKind::LineLower | ViolationKind::LineUpper => {
            let cap = prep.line_limits[v.index].expect("violated line has a limit");
            let (coeffs, constant) = line_flow_expression(sc, prep, lay, v.index, v.step);
            let b = if v.kind.is_upper() { cap } else { -cap };
            (RowLabel::EpnSecurity, ProjectedRow { coeffs, constant }, b)
        }
        ViolationKind::PressureLower | ViolationKind::PressureUpper => {
            let (lo, hi) = prep.gas.as_ref().expect("gas network").bounds[v.index];
            let b = if v.kind.is_upper() { hi } else { lo };
            (RowLabel::NgnSecurity, project_pressure(prep, lay, v.index, v.step), b.expect("violated bound"))
        }
        ViolationKind::TemperatureLower | ViolationKind::TemperatureUpper => {
            let (lo, hi) = prep.heat.as_ref().expect("heat network").bounds[v.index];
            let b = if v.kind.is_upper() { hi } else { lo };
            (RowLabel::DhnSecurity, project_temperature(prep, lay, v.index, v.step), b.expect("violated bound"))
        }
    };
    let sense = if v.kind.is_upper() { Sense::Le } else { Sense::Ge };
    qp.add_row(label, row.coeffs, sense, bound - row.constant);
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CgaOptions {
    /// Cuts kept per violation type per dispatch step and iteration.
    pub n_r: usize,
    pub max_iter: usize,
    /// Relative tolerance of the security check.
    pub check_tol: f64,
}

impl Default for CgaOptions {
    fn default() -> Self {
        Self {
            n_r: 1,
            max_iter: 50,
            check_tol: 1e-6,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CgaIteration {
    pub iteration: usize,
    pub solve_seconds: f64,
    pub check_seconds: f64,
    pub objective: f64,
    pub violations: usize,
    pub cuts_added: usize,
    /// Largest number of cuts added for one (type, step) pair.
    pub max_cuts_per_group: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum CgaStatus {
    Secure,
    /// Iteration limit reached with violations left.
    Insecure,
    /// Violations remain but every candidate cut is already present.
    Stalled,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CgaTrace {
    pub iterations: Vec<CgaIteration>,
    pub status: CgaStatus,
}

#[derive(Debug, Error)]
pub enum CgaError {
    #[error("solver returned {status} at iteration {iteration} ({backend})")]
    Solver { iteration: usize, status: SolveStatus, backend: String },
}

pub struct CgaOutcome {
    pub model: BuiltModel,
    pub result: SolveResult,
    pub state: MonitoredState,
    pub remaining: Vec<Violation>,
    pub trace: CgaTrace,
    pub solve_seconds: f64,
    pub check_seconds: f64,
}

/// Keeps the `n_r` most severe violations per (type, step), skipping
/// constraints already in the model. Ties go to the lowest index.
pub fn select_cuts(
    violations: &[Violation],
    n_r: usize,
    added: &BTreeSet<(ViolationKind, usize, usize)>,
) -> Vec<Violation> {
    let mut groups: BTreeMap<(ViolationKind, usize), Vec<&Violation>> = BTreeMap::new();
    for v in violations {
        groups.entry((v.kind, v.step)).or_default().push(v);
    }
    let mut out = Vec::new();
    for (_, mut g) in groups {
        g.sort_by(|a, b| b.magnitude.total_cmp(&a.magnitude).then(a.index.cmp(&b.index)));
        out.extend(
            g.into_iter()
                .filter(|v| !added.contains(&(v.kind, v.index, v.step)))
                .take(n_r)
                .cloned(),
        );
    }
    out
}

pub fn cga_solve(
    sc: &Scenario,
    prep: &Prepared,
    opts: &CgaOptions,
    solve_opts: &SolveOptions,
) -> Result<CgaOutcome, CgaError> {
    let mut model = build_model(sc, prep, Formulation::Raw);
    let mut added = BTreeSet::new();
    let mut trace = Vec::new();
    let (mut solve_total, mut check_total) = (0.0, 0.0);
    let mut iteration = 0;
    loop {
        iteration += 1;
        let result = solve(&model.qp, solve_opts);
        solve_total += result.solve_seconds;
        let Some(x) = result.x.as_ref() else {
            return Err(CgaError::Solver {
                iteration,
                status: result.status,
                backend: result.backend_status.clone(),
            });
        };
        let start = Instant::now();
        let inj = Injections::from_solution(sc, prep, &model.layout, x);
        let state = evaluate_monitored(prep, &inj);
        let violations = security_check(prep, &state, opts.check_tol);
        let cuts = select_cuts(&violations, opts.n_r, &added);
        let mut per_group: BTreeMap<(ViolationKind, usize), usize> = BTreeMap::new();
        for c in &cuts {
            add_cut(sc, prep, &model.layout, &mut model.qp, c);
            added.insert((c.kind, c.index, c.step));
            *per_group.entry((c.kind, c.step)).or_default() += 1;
        }
        let check_seconds = start.elapsed().as_secs_f64();
        check_total += check_seconds;
        log::info!(
            "cga iteration {iteration}: objective {:.6e}, {} violations, {} cuts",
            result.objective.unwrap_or(f64::NAN),
            violations.len(),
            cuts.len()
        );
        trace.push(CgaIteration {
            iteration,
            solve_seconds: result.solve_seconds,
            check_seconds,
            objective: result.objective.unwrap_or(f64::NAN),
            violations: violations.len(),
            cuts_added: cuts.len(),
            max_cuts_per_group: per_group.values().copied().max().unwrap_or(0),
        });
        let status = if violations.is_empty() {
            Some(CgaStatus::Secure)
        } else if cuts.is_empty() {
            Some(CgaStatus::Stalled)
        } else if iteration >= opts.max_iter {
            Some(CgaStatus::Insecure)
        } else {
            None
        };
        if let Some(status) = status {
            return Ok(CgaOutcome {
                model,
                result,
                state,
                remaining: violations,
                trace: CgaTrace { iterations: trace, status },
                solve_seconds: solve_total,
                check_seconds: check_total,
            });
        }
    }
}
