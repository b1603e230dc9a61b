//! Solver-agnostic convex QP model with labelled rows, statistics, and an
//! interior-point backend (Clarabel).
//!
//! Objective: `Σ q_i x_i² + Σ c_i x_i + c₀` with `q_i ≥ 0`. Every cost term
//! in the dispatch models is a square of a single variable, so the Hessian
//! is kept diagonal.

use std::collections::BTreeMap;
use std::fmt;
use std::time::Instant;

use clarabel::algebra::CscMatrix;
use clarabel::solver::{
    DefaultSettingsBuilder, DefaultSolver, IPSolver, NonnegativeConeT, SolverStatus, SupportedConeT, ZeroConeT,
};
use serde::{Deserialize, Serialize};

/// Block a row belongs to.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum RowLabel {
    Ramping,
    Coupling,
    Freedom,
    Balance,
    EpnSecurity,
    NgnSecurity,
    DhnSecurity,
    NgnCircuit,
    DhnCircuit,
    TfConversion,
    HistoricalBoundary,
    Mesh,
}

impl RowLabel {
    pub const ALL: [RowLabel; 12] = [
        RowLabel::Ramping,
        RowLabel::Coupling,
        RowLabel::Freedom,
        RowLabel::Balance,
        RowLabel::EpnSecurity,
        RowLabel::NgnSecurity,
        RowLabel::DhnSecurity,
        RowLabel::NgnCircuit,
        RowLabel::DhnCircuit,
        RowLabel::TfConversion,
        RowLabel::HistoricalBoundary,
        RowLabel::Mesh,
    ];

    pub fn as_str(&self) -> &'static str {
        match self {
            RowLabel::Ramping => "ramping",
            RowLabel::Coupling => "coupling",
            RowLabel::Freedom => "freedom",
            RowLabel::Balance => "balance",
            RowLabel::EpnSecurity => "epn-security",
            RowLabel::NgnSecurity => "ngn-security",
            RowLabel::DhnSecurity => "dhn-security",
            RowLabel::NgnCircuit => "ngn-circuit",
            RowLabel::DhnCircuit => "dhn-circuit",
            RowLabel::TfConversion => "tf-conversion",
            RowLabel::HistoricalBoundary => "historical-boundary",
            RowLabel::Mesh => "mesh",
        }
    }

    pub fn is_security(&self) -> bool {
        matches!(self, RowLabel::EpnSecurity | RowLabel::NgnSecurity | RowLabel::DhnSecurity)
    }
}

impl fmt::Display for RowLabel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

/// Variable quadrant: time/frequency domain crossed with
/// controllable/monitored.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Quadrant {
    TimeControllable,
    FreqControllable,
    TimeMonitored,
    FreqMonitored,
    /// Mesh states and other auxiliaries of the finite-difference model.
    Auxiliary,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Sense {
    Eq,
    Le,
    Ge,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Variable {
    pub name: String,
    pub quadrant: Quadrant,
    pub lb: f64,
    pub ub: f64,
    /// Typical magnitude, used for column scaling only.
    pub scale: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Row {
    pub label: RowLabel,
    pub coeffs: Vec<(usize, f64)>,
    pub sense: Sense,
    pub rhs: f64,
}

impl Row {
    pub fn activity(&self, x: &[f64]) -> f64 {
        self.coeffs.iter().map(|&(j, a)| a * x[j]).sum()
    }

    /// Signed violation (positive when violated) and the magnitude the
    /// residual is measured against.
    pub fn violation(&self, x: &[f64]) -> (f64, f64) {
        let act = self.activity(x);
        let mag = self
            .coeffs
            .iter()
            .map(|&(j, a)| (a * x[j]).abs())
            .fold(self.rhs.abs(), f64::max);
        let v = match self.sense {
            Sense::Eq => (act - self.rhs).abs(),
            Sense::Le => act - self.rhs,
            Sense::Ge => self.rhs - act,
        };
        (v, mag)
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct ModelStats {
    pub variables: usize,
    pub constraints: usize,
    pub nonzeros: usize,
    pub density: f64,
    pub rows_by_label: BTreeMap<String, usize>,
    pub bounds_by_label: BTreeMap<String, usize>,
}

#[derive(Debug, Clone, Default, Serialize, Deserialize)]
pub struct QpModel {
    pub vars: Vec<Variable>,
    pub rows: Vec<Row>,
    pub quad: Vec<f64>,
    pub linear: Vec<f64>,
    pub constant: f64,
    /// Single-variable rows absorbed into bounds, by label.
    pub bound_rows: BTreeMap<RowLabel, usize>,
    /// Set when a row with no variables was found inconsistent.
    pub trivially_infeasible: bool,
}

impl QpModel {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn n_vars(&self) -> usize {
        self.vars.len()
    }

    pub fn add_var(&mut self, name: impl Into<String>, quadrant: Quadrant, lb: f64, ub: f64) -> usize {
        self.vars.push(Variable {
            name: name.into(),
            quadrant,
            lb,
            ub,
            scale: 1.0,
        });
        self.quad.push(0.0);
        self.linear.push(0.0);
        self.vars.len() - 1
    }

    pub fn set_scale(&mut self, var: usize, scale: f64) {
        if scale.is_finite() && scale > 0.0 {
            self.vars[var].scale = scale;
        }
    }

    pub fn add_quadratic(&mut self, var: usize, q: f64) {
        assert!(q >= 0.0, "quadratic cost must be non-negative");
        self.quad[var] += q;
    }

    pub fn add_linear(&mut self, var: usize, c: f64) {
        self.linear[var] += c;
    }

    pub fn add_constant(&mut self, c: f64) {
        self.constant += c;
    }

    /// Adds `Σ a_j x_j (sense) rhs`. Duplicate indices are merged and zeros
    /// dropped; rows left with a single variable tighten that variable's
    /// bounds instead. Returns the row index when a matrix row was added.
    pub fn add_row(&mut self, label: RowLabel, coeffs: Vec<(usize, f64)>, sense: Sense, rhs: f64) -> Option<usize> {
        let mut merged: BTreeMap<usize, f64> = BTreeMap::new();
        for (j, a) in coeffs {
            *merged.entry(j).or_insert(0.0) += a;
        }
        let coeffs: Vec<(usize, f64)> = merged.into_iter().filter(|&(_, a)| a != 0.0).collect();
        match coeffs.len() {
            0 => {
                let ok = match sense {
                    Sense::Eq => rhs.abs() <= 1e-12,
                    Sense::Le => rhs >= -1e-12,
                    Sense::Ge => rhs <= 1e-12,
                };
                if !ok {
                    self.trivially_infeasible = true;
                }
                None
            }
            1 => {
                let (j, a) = coeffs[0];
                let v = rhs / a;
                let var = &mut self.vars[j];
                let upper = matches!((sense, a > 0.0), (Sense::Le, true) | (Sense::Ge, false));
                match sense {
                    Sense::Eq => {
                        var.lb = var.lb.max(v);
                        var.ub = var.ub.min(v);
                    }
                    _ if upper => var.ub = var.ub.min(v),
                    _ => var.lb = var.lb.max(v),
                }
                *self.bound_rows.entry(label).or_insert(0) += 1;
                None
            }
            _ => {
                self.rows.push(Row { label, coeffs, sense, rhs });
                Some(self.rows.len() - 1)
            }
        }
    }

    /// Two-sided row `lo ≤ Σ a_j x_j ≤ hi`, stored as up to two rows.
    pub fn add_range(&mut self, label: RowLabel, coeffs: Vec<(usize, f64)>, lo: f64, hi: f64) {
        if lo == hi {
            self.add_row(label, coeffs, Sense::Eq, lo);
            return;
        }
        if hi.is_finite() {
            self.add_row(label, coeffs.clone(), Sense::Le, hi);
        }
        if lo.is_finite() {
            self.add_row(label, coeffs, Sense::Ge, lo);
        }
    }

    pub fn objective(&self, x: &[f64]) -> f64 {
        self.constant
            + x.iter()
                .enumerate()
                .map(|(j, &v)| self.quad[j] * v * v + self.linear[j] * v)
                .sum::<f64>()
    }

    pub fn stats(&self) -> ModelStats {
        let nonzeros: usize = self.rows.iter().map(|r| r.coeffs.len()).sum();
        let (n, m) = (self.vars.len(), self.rows.len());
        let density = if n == 0 || m == 0 { 0.0 } else { nonzeros as f64 / (n as f64 * m as f64) };
        let mut rows_by_label = BTreeMap::new();
        for r in &self.rows {
            *rows_by_label.entry(r.label.to_string()).or_insert(0) += 1;
        }
        ModelStats {
            variables: n,
            constraints: m,
            nonzeros,
            density,
            rows_by_label,
            bounds_by_label: self.bound_rows.iter().map(|(k, v)| (k.to_string(), *v)).collect(),
        }
    }

    pub fn count_label(&self, label: RowLabel) -> usize {
        self.rows.iter().filter(|r| r.label == label).count()
    }

    /// Independent residual recomputation from the raw rows and bounds.
    pub fn audit(&self, x: &[f64]) -> Audit {
        let mut audit = Audit::default();
        for (i, r) in self.rows.iter().enumerate() {
            let (v, mag) = r.violation(x);
            // Floor each term at the variable's typical magnitude so rows whose
            // activity is near zero are not judged on round-off alone.
            let floor = r
                .coeffs
                .iter()
                .map(|&(j, a)| (a * self.vars[j].scale).abs())
                .fold(0.0, f64::max);
            let mag = mag.max(floor);
            let rel = v.max(0.0) / mag.max(1e-12);
            if rel > audit.max_row_residual {
                audit.max_row_residual = rel;
                audit.worst_row = Some(i);
            }
        }
        for (j, var) in self.vars.iter().enumerate() {
            let below = (var.lb - x[j]) / var.lb.abs().max(1.0);
            let above = (x[j] - var.ub) / var.ub.abs().max(1.0);
            let viol = below.max(above);
            if viol > audit.max_bound_violation {
                audit.max_bound_violation = viol;
                audit.worst_var = Some(j);
            }
        }
        audit
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct Audit {
    /// Largest row violation divided by the row's magnitude
    /// `max(|rhs|, max_j |a_j|·max(|x_j|, s_j))`, `s_j` the variable scale.
    pub max_row_residual: f64,
    pub worst_row: Option<usize>,
    /// Largest bound violation relative to `max(|bound|, 1)`.
    pub max_bound_violation: f64,
    pub worst_var: Option<usize>,
}

impl Audit {
    pub fn passes(&self, tol: f64) -> bool {
        self.max_row_residual <= tol && self.max_bound_violation <= tol
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum SolveStatus {
    Optimal,
    Infeasible,
    Unbounded,
    NumericalTrouble,
    IterationLimit,
}

impl fmt::Display for SolveStatus {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let s = match self {
            SolveStatus::Optimal => "optimal",
            SolveStatus::Infeasible => "infeasible",
            SolveStatus::Unbounded => "unbounded",
            SolveStatus::NumericalTrouble => "numerical-trouble",
            SolveStatus::IterationLimit => "iteration-limit",
        };
        f.write_str(s)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SolveOptions {
    pub tol_feas: f64,
    pub tol_gap: f64,
    /// Relative residual the independent audit must meet.
    pub audit_tol: f64,
    pub max_iter: u32,
    pub verbose: bool,
    pub linear_solver: LinearSolver,
    /// Static KKT regularisation; the backend default (1e-8) stalls on the long FDM chains.
    pub static_reg: f64,
    /// Factorisation threads, 0 for automatic.
    pub threads: u32,
}

/// Sparse factorisation used inside the interior-point iterations.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum LinearSolver {
    /// Supernodal LDLᵀ; much faster when the KKT fill is dense.
    #[default]
    Faer,
    Qdldl,
}

impl Default for SolveOptions {
    fn default() -> Self {
        Self {
            tol_feas: 1e-8,
            tol_gap: 1e-8,
            audit_tol: 1e-6,
            max_iter: 200,
            verbose: false,
            linear_solver: LinearSolver::default(),
            static_reg: 1e-7,
            threads: 0,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SolveResult {
    pub status: SolveStatus,
    pub x: Option<Vec<f64>>,
    pub objective: Option<f64>,
    pub solve_seconds: f64,
    pub iterations: u32,
    pub backend_status: String,
    pub audit: Option<Audit>,
}

/// Solves the model with Clarabel.
///
/// Columns are scaled by each variable's `scale`, rows by their largest
/// scaled coefficient, and the objective by its largest scaled coefficient.
/// Fixed variables become equality rows.
pub fn solve(model: &QpModel, opts: &SolveOptions) -> SolveResult {
    let start = Instant::now();
    let fail = |status: SolveStatus, why: &str| SolveResult {
        status,
        x: None,
        objective: None,
        solve_seconds: start.elapsed().as_secs_f64(),
        iterations: 0,
        backend_status: why.to_string(),
        audit: None,
    };
    if model.trivially_infeasible {
        return fail(SolveStatus::Infeasible, "inconsistent constant row");
    }
    if model.vars.iter().any(|v| v.lb > v.ub + 1e-12 * v.ub.abs().max(1.0)) {
        return fail(SolveStatus::Infeasible, "crossed bounds");
    }
    let n = model.n_vars();
    let d: Vec<f64> = model.vars.iter().map(|v| v.scale).collect();

    // Equality rows first (zero cone), then inequalities (nonnegative cone).
    let mut eq: Vec<(Vec<(usize, f64)>, f64)> = Vec::new();
    let mut le: Vec<(Vec<(usize, f64)>, f64)> = Vec::new();
    let push = |target: &mut Vec<(Vec<(usize, f64)>, f64)>, coeffs: Vec<(usize, f64)>, rhs: f64| {
        let mx = coeffs.iter().map(|c| c.1.abs()).fold(0.0, f64::max);
        if mx > 0.0 {
            target.push((coeffs.into_iter().map(|(j, a)| (j, a / mx)).collect(), rhs / mx));
        }
    };
    for r in &model.rows {
        let scaled: Vec<(usize, f64)> = r.coeffs.iter().map(|&(j, a)| (j, a * d[j])).collect();
        match r.sense {
            Sense::Eq => push(&mut eq, scaled, r.rhs),
            Sense::Le => push(&mut le, scaled, r.rhs),
            Sense::Ge => push(&mut le, scaled.into_iter().map(|(j, a)| (j, -a)).collect(), -r.rhs),
        }
    }
    for (j, v) in model.vars.iter().enumerate() {
        if v.lb == v.ub {
            eq.push((vec![(j, 1.0)], v.lb / d[j]));
            continue;
        }
        if v.ub.is_finite() {
            le.push((vec![(j, 1.0)], v.ub / d[j]));
        }
        if v.lb.is_finite() {
            le.push((vec![(j, -1.0)], -v.lb / d[j]));
        }
    }
    let (n_eq, n_le) = (eq.len(), le.len());
    let mut ii = Vec::new();
    let mut jj = Vec::new();
    let mut vv = Vec::new();
    let mut b = Vec::with_capacity(n_eq + n_le);
    for (i, (coeffs, rhs)) in eq.into_iter().chain(le).enumerate() {
        for (j, a) in coeffs {
            ii.push(i);
            jj.push(j);
            vv.push(a);
        }
        b.push(rhs);
    }
    let a_mat = CscMatrix::new_from_triplets(n_eq + n_le, n, ii, jj, vv);

    let mut q: Vec<f64> = (0..n).map(|j| model.linear[j] * d[j]).collect();
    let p_diag: Vec<f64> = (0..n).map(|j| 2.0 * model.quad[j] * d[j] * d[j]).collect();
    let obj_scale = q.iter().chain(&p_diag).map(|v| v.abs()).fold(0.0, f64::max);
    let obj_scale = if obj_scale > 0.0 { obj_scale } else { 1.0 };
    for v in q.iter_mut() {
        *v /= obj_scale;
    }
    let (pi, pv): (Vec<usize>, Vec<f64>) = p_diag
        .iter()
        .enumerate()
        .filter(|(_, &v)| v != 0.0)
        .map(|(j, &v)| (j, v / obj_scale))
        .unzip();
    let p_mat = CscMatrix::new_from_triplets(n, n, pi.clone(), pi, pv);

    let mut cones: Vec<SupportedConeT<f64>> = Vec::new();
    if n_eq > 0 {
        cones.push(ZeroConeT(n_eq));
    }
    if n_le > 0 {
        cones.push(NonnegativeConeT(n_le));
    }
    let settings = DefaultSettingsBuilder::default()
        .tol_feas(opts.tol_feas)
        .tol_gap_rel(opts.tol_gap)
        .tol_gap_abs(opts.tol_gap)
        .static_regularization_constant(opts.static_reg)
        .max_threads(opts.threads)
        .max_iter(opts.max_iter)
        .verbose(opts.verbose)
        .direct_solve_method(
            match opts.linear_solver {
                LinearSolver::Faer => "faer",
                LinearSolver::Qdldl => "qdldl",
            }
            .to_string(),
        )
        .build()
        .expect("valid solver settings");
    let mut solver = match DefaultSolver::new(&p_mat, &q, &a_mat, &b, &cones, settings) {
        Ok(s) => s,
        Err(e) => return fail(SolveStatus::NumericalTrouble, &format!("setup failed: {e}")),
    };
    solver.solve();
    let sol = &solver.solution;
    let backend_status = format!("{:?}", sol.status);
    let mut result = SolveResult {
        status: SolveStatus::NumericalTrouble,
        x: None,
        objective: None,
        solve_seconds: start.elapsed().as_secs_f64(),
        iterations: sol.iterations,
        backend_status,
        audit: None,
    };
    match sol.status {
        SolverStatus::Solved | SolverStatus::AlmostSolved => {
            let x: Vec<f64> = sol.x.iter().zip(&d).map(|(v, s)| v * s).collect();
            let audit = model.audit(&x);
            result.audit = Some(audit);
            if audit.passes(opts.audit_tol) && x.iter().all(|v| v.is_finite()) {
                result.status = SolveStatus::Optimal;
                result.objective = Some(model.objective(&x));
                result.x = Some(x);
            } else {
                log::warn!(
                    "solution rejected by audit: row residual {:.3e}, bound violation {:.3e}",
                    audit.max_row_residual,
                    audit.max_bound_violation
                );
            }
        }
        SolverStatus::PrimalInfeasible | SolverStatus::AlmostPrimalInfeasible => {
            result.status = SolveStatus::Infeasible;
        }
        SolverStatus::DualInfeasible | SolverStatus::AlmostDualInfeasible => {
            result.status = SolveStatus::Unbounded;
        }
        SolverStatus::MaxIterations | SolverStatus::MaxTime => {
            result.status = SolveStatus::IterationLimit;
        }
        _ => {}
    }
    result
}
