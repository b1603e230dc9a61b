//! Finite-difference baseline: space-time discretised pipe equations for
//! forward simulation and as a full optimisation model.
//!
//! Gas pipes use an implicit box scheme, two equations per segment:
//!
//! ```text
//! (p₊ − p₋)/Δx + K′p̄ + R′m̄ + L′(m̄ − m̄ⁿ⁻¹)/Δt = 0
//! (m₊ − m₋)/Δx + C′(p̄ − p̄ⁿ⁻¹)/Δt = 0
//! ```
//!
//! where bars are segment averages. Heat pipes use implicit upwinding,
//! `ρSc_p(Tᵢ − Tᵢⁿ⁻¹)/Δt + c_p m(Tᵢ − Tᵢ₋₁)/Δx + μTᵢ = 0`. Step 0 of a
//! simulation is the steady state of its boundary data.

use nalgebra::{DMatrix, DVector};
use thiserror::Error;

use crate::circuit::{gas_distributed_params, GasDistributedParams, GasPipeGeometry, HeatDistributedParams};
use crate::flowcalc::{gas_pipe_outlet, heat_pipe_outlet, MonitoredState};
use crate::model::{add_line_rows, build_common, line_flow_expression, Carrier, Layout, ModelError, Prepared};
use crate::qp::{QpModel, Quadrant, RowLabel, Sense};
use crate::scenario::{Dhn, Ngn, Scenario};

#[derive(Debug, Error)]
pub enum FdmError {
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error("mesh system is singular ({0})")]
    Singular(&'static str),
    #[error("invalid mesh: {0}")]
    Invalid(String),
}

/// One linear equation over the unknowns of a time step.
///
/// `cur·x + prev·x_prev = ref_coeff·p_ref + inj.1 · (net injection at inj.0)`
#[derive(Debug, Clone, Default)]
struct MeshRow {
    cur: Vec<(usize, f64)>,
    prev: Vec<(usize, f64)>,
    ref_coeff: f64,
    inj: Option<(usize, f64)>,
}

fn segments(length: f64, dx: f64) -> usize {
    ((length / dx) - 1e-9).ceil().max(1.0) as usize
}

#[derive(Debug, Clone)]
struct GasPipeMesh {
    from: usize,
    to: usize,
    dx: f64,
    par: GasDistributedParams,
    p: Vec<usize>,
    m: Vec<usize>,
}

/// Unknowns per step: `p` and `m` at every mesh point of every pipe, then
/// the pressure of every non-reference node.
#[derive(Debug, Clone)]
pub struct GasMesh {
    pipes: Vec<GasPipeMesh>,
    pub n_nodes: usize,
    pub reference: usize,
    node: Vec<Option<usize>>,
    n_unknowns: usize,
}

impl GasMesh {
    /// `pipes` holds `(from, to, length, params)`.
    pub fn new(n_nodes: usize, reference: usize, pipes: &[(usize, usize, f64, GasDistributedParams)], dx: f64) -> Self {
        let mut next = 0;
        let mut take = |k: usize| {
            let r: Vec<usize> = (next..next + k).collect();
            next += k;
            r
        };
        let meshes: Vec<GasPipeMesh> = pipes
            .iter()
            .map(|&(from, to, length, par)| {
                let n = segments(length, dx);
                GasPipeMesh {
                    from,
                    to,
                    dx: length / n as f64,
                    par,
                    p: take(n + 1),
                    m: take(n + 1),
                }
            })
            .collect();
        let node = (0..n_nodes).map(|i| (i != reference).then(|| take(1)[0])).collect();
        Self {
            pipes: meshes,
            n_nodes,
            reference,
            node,
            n_unknowns: next,
        }
    }

    pub fn from_network(ngn: &Ngn, reference: usize, dx: f64) -> Result<Self, FdmError> {
        let mut pipes = Vec::new();
        for p in &ngn.pipes {
            let err = |source| FdmError::Model(ModelError::Circuit { pipe: p.name.clone(), source });
            let g = GasPipeGeometry::new(p.length, p.diameter, p.area, p.friction, p.incline, p.sonic_speed, p.base_velocity)
                .map_err(err)?;
            pipes.push((p.from, p.to, p.length, gas_distributed_params(&g).map_err(err)?));
        }
        Ok(Self::new(ngn.nodes.len(), reference, &pipes, dx))
    }

    pub fn n_unknowns(&self) -> usize {
        self.n_unknowns
    }

    pub fn n_mesh_points(&self) -> usize {
        self.pipes.iter().map(|p| p.p.len()).sum()
    }

    /// Pressure at a node; the reference takes `p_ref`.
    pub fn node_pressure(&self, x: &[f64], node: usize, p_ref: f64) -> f64 {
        self.node[node].map_or(p_ref, |i| x[i])
    }

    /// Mesh pressures of one pipe.
    pub fn pipe_pressure<'a>(&'a self, x: &'a [f64], pipe: usize) -> impl Iterator<Item = f64> + 'a {
        self.pipes[pipe].p.iter().map(move |&i| x[i])
    }

    /// Mesh flows of one pipe.
    pub fn pipe_flow<'a>(&'a self, x: &'a [f64], pipe: usize) -> impl Iterator<Item = f64> + 'a {
        self.pipes[pipe].m.iter().map(move |&i| x[i])
    }

    /// Equations of one step; `dt = None` gives the steady state.
    fn rows(&self, dt: Option<f64>) -> Vec<MeshRow> {
        let mut rows = Vec::new();
        let inv = dt.map_or(0.0, |d| 1.0 / d);
        for pm in &self.pipes {
            let GasDistributedParams {
                resistance: r,
                inductance: l,
                capacitance: c,
                controlled_source: k,
            } = pm.par;
            let h = pm.dx;
            for j in 0..pm.p.len() - 1 {
                let (p0, p1, m0, m1) = (pm.p[j], pm.p[j + 1], pm.m[j], pm.m[j + 1]);
                let lm = 0.5 * (r + l * inv);
                rows.push(MeshRow {
                    cur: vec![(p1, 1.0 / h + 0.5 * k), (p0, -1.0 / h + 0.5 * k), (m0, lm), (m1, lm)],
                    prev: if dt.is_some() { vec![(m0, -0.5 * l * inv), (m1, -0.5 * l * inv)] } else { vec![] },
                    ..Default::default()
                });
                let cp = 0.5 * c * inv;
                let mut cur = vec![(m1, 1.0 / h), (m0, -1.0 / h)];
                if dt.is_some() {
                    cur.extend([(p0, cp), (p1, cp)]);
                }
                rows.push(MeshRow {
                    cur,
                    prev: if dt.is_some() { vec![(p0, -cp), (p1, -cp)] } else { vec![] },
                    ..Default::default()
                });
            }
            for (end, node) in [(pm.p[0], pm.from), (*pm.p.last().unwrap(), pm.to)] {
                let mut row = MeshRow {
                    cur: vec![(end, 1.0)],
                    ..Default::default()
                };
                match self.node[node] {
                    Some(v) => row.cur.push((v, -1.0)),
                    None => row.ref_coeff = 1.0,
                }
                rows.push(row);
            }
        }
        for n in 0..self.n_nodes {
            if n == self.reference {
                continue;
            }
            let mut cur = Vec::new();
            for pm in &self.pipes {
                if pm.to == n {
                    cur.push((*pm.m.last().unwrap(), 1.0));
                }
                if pm.from == n {
                    cur.push((pm.m[0], -1.0));
                }
            }
            rows.push(MeshRow {
                cur,
                inj: Some((n, -1.0)),
                ..Default::default()
            });
        }
        rows
    }

    /// Forward simulation over `n_steps` steps of length `dt`, starting
    /// from the steady state of step 0. `net(step, node)` is the net
    /// injection (supply minus load).
    pub fn simulate(
        &self,
        dt: f64,
        n_steps: usize,
        p_ref: &dyn Fn(usize) -> f64,
        net: &dyn Fn(usize, usize) -> f64,
    ) -> Result<Vec<Vec<f64>>, FdmError> {
        simulate_rows(self.n_unknowns, &self.rows(None), &self.rows(Some(dt)), n_steps, p_ref, net)
    }
}

fn dense(n: usize, rows: &[MeshRow]) -> DMatrix<f64> {
    let mut a = DMatrix::zeros(rows.len(), n);
    for (i, r) in rows.iter().enumerate() {
        for &(j, v) in &r.cur {
            a[(i, j)] += v;
        }
    }
    a
}

fn simulate_rows(
    n: usize,
    steady: &[MeshRow],
    transient: &[MeshRow],
    n_steps: usize,
    p_ref: &dyn Fn(usize) -> f64,
    net: &dyn Fn(usize, usize) -> f64,
) -> Result<Vec<Vec<f64>>, FdmError> {
    if steady.len() != n || transient.len() != n {
        return Err(FdmError::Invalid(format!("{} equations for {n} unknowns", transient.len())));
    }
    let rhs = |rows: &[MeshRow], step: usize, prev: Option<&[f64]>| -> DVector<f64> {
        DVector::from_iterator(
            rows.len(),
            rows.iter().map(|r| {
                let mut b = r.ref_coeff * p_ref(step);
                if let Some((node, f)) = r.inj {
                    b += f * net(step, node);
                }
                if let Some(xp) = prev {
                    b -= r.prev.iter().map(|&(j, v)| v * xp[j]).sum::<f64>();
                }
                b
            }),
        )
    };
    let mut out = Vec::with_capacity(n_steps);
    if n_steps == 0 {
        return Ok(out);
    }
    let lu0 = dense(n, steady).lu();
    let x0 = lu0.solve(&rhs(steady, 0, None)).ok_or(FdmError::Singular("steady state"))?;
    out.push(x0.as_slice().to_vec());
    if n_steps > 1 {
        let lu = dense(n, transient).lu();
        for s in 1..n_steps {
            let b = rhs(transient, s, Some(&out[s - 1]));
            let x = lu.solve(&b).ok_or(FdmError::Singular("time step"))?;
            out.push(x.as_slice().to_vec());
        }
    }
    Ok(out)
}

#[derive(Debug, Clone)]
struct HeatPipeMesh {
    from: usize,
    to: usize,
    dx: f64,
    area: f64,
    heat_loss: f64,
    mass_flow: f64,
    /// Interior and outlet points `1..=N`; point 0 is the `from` node.
    t: Vec<usize>,
}

/// Unknowns per step: temperatures at mesh points `1..=N` of every pipe,
/// then every node temperature.
#[derive(Debug, Clone)]
pub struct HeatMesh {
    pipes: Vec<HeatPipeMesh>,
    pub n_nodes: usize,
    node: Vec<usize>,
    specific_heat: f64,
    density: f64,
    n_unknowns: usize,
}

/// Geometry of a heat pipe for [`HeatMesh::new`].
#[derive(Debug, Clone, Copy)]
pub struct HeatPipeSpec {
    pub from: usize,
    pub to: usize,
    pub length: f64,
    pub area: f64,
    pub heat_loss: f64,
    pub mass_flow: f64,
}

impl HeatMesh {
    pub fn new(n_nodes: usize, pipes: &[HeatPipeSpec], specific_heat: f64, density: f64, dx: f64) -> Self {
        let mut next = 0;
        let meshes = pipes
            .iter()
            .map(|p| {
                let n = segments(p.length, dx);
                let t = (next..next + n).collect();
                next += n;
                HeatPipeMesh {
                    from: p.from,
                    to: p.to,
                    dx: p.length / n as f64,
                    area: p.area,
                    heat_loss: p.heat_loss,
                    mass_flow: p.mass_flow,
                    t,
                }
            })
            .collect();
        let node = (next..next + n_nodes).collect();
        Self {
            pipes: meshes,
            n_nodes,
            node,
            specific_heat,
            density,
            n_unknowns: next + n_nodes,
        }
    }

    pub fn from_network(dhn: &Dhn, dx: f64) -> Self {
        let specs: Vec<HeatPipeSpec> = dhn
            .pipes
            .iter()
            .map(|p| HeatPipeSpec {
                from: p.from,
                to: p.to,
                length: p.length,
                area: p.area,
                heat_loss: p.heat_loss,
                mass_flow: p.mass_flow,
            })
            .collect();
        Self::new(dhn.nodes.len(), &specs, dhn.specific_heat, dhn.density, dx)
    }

    pub fn n_unknowns(&self) -> usize {
        self.n_unknowns
    }

    pub fn node_temperature(&self, x: &[f64], node: usize) -> f64 {
        x[self.node[node]]
    }

    pub fn outlet_temperature(&self, x: &[f64], pipe: usize) -> f64 {
        x[*self.pipes[pipe].t.last().unwrap()]
    }

    fn rows(&self, dt: Option<f64>) -> Vec<MeshRow> {
        let (cp, rho) = (self.specific_heat, self.density);
        let inv = dt.map_or(0.0, |d| 1.0 / d);
        let mut rows = Vec::new();
        for pm in &self.pipes {
            let store = rho * pm.area * cp * inv;
            let adv = cp * pm.mass_flow / pm.dx;
            for (i, &ti) in pm.t.iter().enumerate() {
                let up = if i == 0 { self.node[pm.from] } else { pm.t[i - 1] };
                rows.push(MeshRow {
                    cur: vec![(ti, store + adv + pm.heat_loss), (up, -adv)],
                    prev: if dt.is_some() { vec![(ti, -store)] } else { vec![] },
                    ..Default::default()
                });
            }
        }
        for n in 0..self.n_nodes {
            let out: f64 = self.pipes.iter().filter(|p| p.from == n).map(|p| p.mass_flow).sum();
            let inflow: Vec<&HeatPipeMesh> = self.pipes.iter().filter(|p| p.to == n).collect();
            if out > 0.0 {
                let mut cur = vec![(self.node[n], cp * out)];
                cur.extend(inflow.iter().map(|p| (*p.t.last().unwrap(), -cp * p.mass_flow)));
                rows.push(MeshRow {
                    cur,
                    inj: Some((n, 1.0)),
                    ..Default::default()
                });
            } else {
                // terminal node: flow-weighted mix of arriving water
                let total: f64 = inflow.iter().map(|p| p.mass_flow).sum();
                let mut cur = vec![(self.node[n], total.max(f64::MIN_POSITIVE))];
                cur.extend(inflow.iter().map(|p| (*p.t.last().unwrap(), -p.mass_flow)));
                rows.push(MeshRow {
                    cur,
                    ..Default::default()
                });
            }
        }
        rows
    }

    /// Forward simulation; `net(step, node)` is the net heat injection.
    pub fn simulate(&self, dt: f64, n_steps: usize, net: &dyn Fn(usize, usize) -> f64) -> Result<Vec<Vec<f64>>, FdmError> {
        simulate_rows(self.n_unknowns, &self.rows(None), &self.rows(Some(dt)), n_steps, &|_| 0.0, net)
    }
}

/// Periodic boundary signal `mean + Σ a·cos(2πk t/period + φ)`.
#[derive(Debug, Clone, PartialEq)]
pub struct PeriodicSignal {
    pub mean: f64,
    /// `(k, a, φ)` per harmonic.
    pub harmonics: Vec<(usize, f64, f64)>,
}

impl PeriodicSignal {
    pub fn at(&self, t: f64, period: f64) -> f64 {
        let w = 2.0 * std::f64::consts::PI * t / period;
        self.mean + self.harmonics.iter().map(|&(k, a, ph)| a * (k as f64 * w + ph).cos()).sum::<f64>()
    }

    pub fn sample(&self, n: usize, period: f64) -> Vec<f64> {
        (0..n).map(|i| self.at(i as f64 * period / n as f64, period)).collect()
    }
}

/// Periodic forward run of a single pipe: mesh size and the end-node
/// discrepancy against the circuit evaluation over the last period.
#[derive(Debug, Clone, PartialEq)]
pub struct PipeAgreement {
    pub dx: f64,
    pub dt: f64,
    pub rms: f64,
    /// `rms` over the RMS of the reference quantity (pressure drop for gas,
    /// outlet temperature for heat).
    pub relative_rms: f64,
}

/// Time grid of a periodic comparison: `n_samples` points per period, each
/// split into `substeps` finite-difference steps.
#[derive(Debug, Clone, Copy)]
pub struct PeriodicGrid {
    pub period: f64,
    pub n_samples: usize,
    pub substeps: usize,
    pub warmup_periods: usize,
}

impl PeriodicGrid {
    fn dt(&self) -> f64 {
        self.period / (self.n_samples * self.substeps) as f64
    }

    fn n_steps(&self) -> usize {
        (self.warmup_periods + 1) * self.n_samples * self.substeps + 1
    }

    /// Step indices of the compared (last) period, one per sample.
    fn last_period(&self) -> impl Iterator<Item = usize> + '_ {
        let start = self.warmup_periods * self.n_samples * self.substeps;
        (0..self.n_samples).map(move |i| start + i * self.substeps)
    }
}

fn rms(v: impl Iterator<Item = f64>) -> f64 {
    let (s, n) = v.fold((0.0, 0usize), |(s, n), x| (s + x * x, n + 1));
    (s / n.max(1) as f64).sqrt()
}

/// Single gas pipe driven by inlet pressure and outlet mass flow.
pub fn gas_pipe_agreement(
    par: GasDistributedParams,
    length: f64,
    dx: f64,
    grid: PeriodicGrid,
    p_in: &PeriodicSignal,
    m_out: &PeriodicSignal,
) -> Result<PipeAgreement, FdmError> {
    let circuit = |source| FdmError::Model(ModelError::Circuit {
        pipe: "single".into(),
        source,
    });
    let (p, m) = (p_in.sample(grid.n_samples, grid.period), m_out.sample(grid.n_samples, grid.period));
    let ecm = gas_pipe_outlet(&par, length, grid.period, &p, &m).map_err(circuit)?;
    let mesh = GasMesh::new(2, 0, &[(0, 1, length, par)], dx);
    let dt = grid.dt();
    let xs = mesh.simulate(
        dt,
        grid.n_steps(),
        &|s| p_in.at(s as f64 * dt, grid.period),
        &|s, _| -m_out.at(s as f64 * dt, grid.period),
    )?;
    let fdm: Vec<f64> = grid.last_period().map(|s| mesh.node_pressure(&xs[s], 1, 0.0)).collect();
    let err = rms(fdm.iter().zip(&ecm).map(|(a, b)| a - b));
    let drop = rms(p.iter().zip(&ecm).map(|(a, b)| a - b));
    Ok(PipeAgreement {
        dx: mesh.pipes[0].dx,
        dt,
        rms: err,
        relative_rms: err / drop,
    })
}

/// Single heat pipe driven by its inlet temperature at fixed mass flow.
#[allow(clippy::too_many_arguments)]
pub fn heat_pipe_agreement(
    spec: HeatPipeSpec,
    par: &HeatDistributedParams,
    specific_heat: f64,
    density: f64,
    dx: f64,
    grid: PeriodicGrid,
    t_in: &PeriodicSignal,
) -> Result<PipeAgreement, FdmError> {
    let spec = HeatPipeSpec { from: 0, to: 1, ..spec };
    let t = t_in.sample(grid.n_samples, grid.period);
    let ecm = heat_pipe_outlet(par, spec.length, grid.period, &t).map_err(|source| {
        FdmError::Model(ModelError::Circuit {
            pipe: "single".into(),
            source,
        })
    })?;
    let mesh = HeatMesh::new(2, &[spec], specific_heat, density, dx);
    let dt = grid.dt();
    let enthalpy = specific_heat * spec.mass_flow;
    let xs = mesh.simulate(dt, grid.n_steps(), &|s, n| {
        if n == 0 {
            enthalpy * t_in.at(s as f64 * dt, grid.period)
        } else {
            0.0
        }
    })?;
    let fdm: Vec<f64> = grid.last_period().map(|s| mesh.node_temperature(&xs[s], 1)).collect();
    let err = rms(fdm.iter().zip(&ecm).map(|(a, b)| a - b));
    Ok(PipeAgreement {
        dx: mesh.pipes[0].dx,
        dt,
        rms: err,
        relative_rms: err / rms(ecm.iter().copied()),
    })
}

/// Node × step net injections (supply minus load) over the history, from
/// device histories and network loads.
fn history_net(
    lay: &Layout,
    carrier: Carrier,
    n_nodes: usize,
    loads: &[crate::scenario::NodeSeries],
    n_hist: usize,
) -> Vec<Vec<f64>> {
    let mut net = vec![vec![0.0; n_hist]; n_nodes];
    for s in lay.series.iter().filter(|s| s.carrier == carrier) {
        for (t, v) in s.history.iter().take(n_hist).enumerate() {
            net[s.node][t] += s.sign * v;
        }
    }
    for l in loads {
        for (t, v) in l.series.values().iter().take(n_hist).enumerate() {
            net[l.node][t] -= v;
        }
    }
    net
}

/// Node variables of the finite-difference model.
#[derive(Debug, Clone, Default)]
pub struct FdmLayout {
    /// Pressure variable per node and dispatch step; `None` at the reference.
    pub pressure: Vec<Option<Vec<usize>>>,
    /// Constant added to pressure variables to get absolute pressure.
    pub pressure_offset: f64,
    pub temperature: Vec<Vec<usize>>,
    pub gas_unknowns_per_step: usize,
    pub heat_unknowns_per_step: usize,
}

pub struct FdmModel {
    pub qp: QpModel,
    pub layout: Layout,
    pub nodes: FdmLayout,
    pub gas: Option<GasMesh>,
    pub heat: Option<HeatMesh>,
}

/// Appends one block of mesh rows per dispatch step. `vars[t][i]` is the
/// variable of unknown `i` at step `t`, holding the unknown minus
/// `offset[i]`; `start` is the absolute state before the first dispatch
/// step.
#[allow(clippy::too_many_arguments)]
fn add_mesh_rows(
    qp: &mut QpModel,
    rows: &[MeshRow],
    vars: &[Vec<usize>],
    offset: &[f64],
    start: &[f64],
    p_ref: &dyn Fn(usize) -> f64,
    load: &dyn Fn(usize, usize) -> f64,
    injections: &dyn Fn(usize, usize) -> Vec<(usize, f64)>,
) {
    for (t, step) in vars.iter().enumerate() {
        for r in rows {
            let mut coeffs: Vec<(usize, f64)> = r.cur.iter().map(|&(j, v)| (step[j], v)).collect();
            let mut rhs = r.ref_coeff * p_ref(t) - r.cur.iter().map(|&(j, v)| v * offset[j]).sum::<f64>();
            if t == 0 {
                rhs -= r.prev.iter().map(|&(j, v)| v * start[j]).sum::<f64>();
            } else {
                rhs -= r.prev.iter().map(|&(j, v)| v * offset[j]).sum::<f64>();
                coeffs.extend(r.prev.iter().map(|&(j, v)| (vars[t - 1][j], v)));
            }
            if let Some((node, f)) = r.inj {
                rhs -= f * load(t, node);
                coeffs.extend(injections(t, node).into_iter().map(|(v, s)| (v, -f * s)));
            }
            qp.add_row(RowLabel::Mesh, coeffs, Sense::Eq, rhs);
        }
    }
}

/// Full finite-difference optimisation model: device block, line limits,
/// gas and heat mesh equations at every dispatch step, node bounds. The
/// initial mesh state comes from simulating the history.
pub fn build_fdm_model(sc: &Scenario, prep: &Prepared) -> Result<FdmModel, FdmError> {
    let h = prep.horizon;
    let (nh, nd) = (h.n_hist, h.n_dispatch);
    let dt = h.step_seconds;
    let (mut qp, layout) = build_common(sc, prep, false);
    add_line_rows(sc, prep, &layout, &mut qp);
    let mut nodes = FdmLayout::default();
    let inf = f64::INFINITY;

    let series_at = |carrier: Carrier, t: usize, node: usize| -> Vec<(usize, f64)> {
        layout
            .series
            .iter()
            .filter(|s| s.carrier == carrier && s.node == node)
            .map(|s| (s.time[t], s.sign))
            .collect()
    };

    let mut gas_mesh = None;
    if let (Some(ngn), Some(g)) = (&sc.ngn, &prep.gas) {
        let mesh = GasMesh::from_network(ngn, g.reference, sc.solver.gas_mesh)?;
        let net = history_net(&layout, Carrier::Gas, mesh.n_nodes, &ngn.loads, nh);
        let states = mesh.simulate(dt, nh, &|t| g.p_ref_series[t], &|t, n| net[n][t])?;
        let start = states.last().cloned().unwrap_or_else(|| vec![0.0; mesh.n_unknowns()]);
        let mut is_flow = vec![false; mesh.n_unknowns()];
        for p in &mesh.pipes {
            for &i in &p.m {
                is_flow[i] = true;
            }
        }
        let m_scale = start
            .iter()
            .zip(&is_flow)
            .filter(|(_, &f)| f)
            .map(|(v, _)| v.abs())
            .fold(1.0, f64::max);
        // Pressures are carried as deviations from the mean reference level;
        // absolute values would swamp the friction terms in every row.
        let base = g.p_ref_series.iter().sum::<f64>() / g.p_ref_series.len() as f64;
        let p_scale = g
            .p_ref_series
            .iter()
            .map(|v| (v - base).abs())
            .chain(start.iter().zip(&is_flow).filter(|(_, &f)| !f).map(|(v, _)| (v - base).abs()))
            .fold(1.0, f64::max);
        let offset: Vec<f64> = is_flow.iter().map(|&f| if f { 0.0 } else { base }).collect();
        let mut vars = Vec::with_capacity(nd);
        let mut pressure: Vec<Option<Vec<usize>>> =
            (0..mesh.n_nodes).map(|n| (n != mesh.reference).then(Vec::new)).collect();
        for t in 0..nd {
            let mut step = vec![0; mesh.n_unknowns()];
            for (i, slot) in step.iter_mut().enumerate() {
                let node = mesh.node.iter().position(|&v| v == Some(i));
                let (name, quad, scale) = match node {
                    Some(n) => (format!("p[{n}]@{t}"), Quadrant::TimeMonitored, p_scale),
                    None if is_flow[i] => (format!("gas.m#{i}@{t}"), Quadrant::Auxiliary, m_scale),
                    None => (format!("gas.p#{i}@{t}"), Quadrant::Auxiliary, p_scale),
                };
                let v = qp.add_var(name, quad, -inf, inf);
                qp.set_scale(v, scale);
                if let Some(n) = node {
                    let (lo, hi) = g.bounds[n];
                    qp.add_range(
                        RowLabel::NgnSecurity,
                        vec![(v, 1.0)],
                        lo.map_or(-inf, |b| b - base),
                        hi.map_or(inf, |b| b - base),
                    );
                    pressure[n].as_mut().unwrap().push(v);
                }
                *slot = v;
            }
            vars.push(step);
        }
        let loads = crate::model::node_series(mesh.n_nodes, h.n_total(), &ngn.loads);
        add_mesh_rows(
            &mut qp,
            &mesh.rows(Some(dt)),
            &vars,
            &offset,
            &start,
            &|t| g.p_ref_series[nh + t],
            &|t, n| loads[n][nh + t],
            &|t, n| series_at(Carrier::Gas, t, n),
        );
        nodes.pressure = pressure;
        nodes.pressure_offset = base;
        nodes.gas_unknowns_per_step = mesh.n_unknowns();
        gas_mesh = Some(mesh);
    }

    let mut heat_mesh = None;
    if let (Some(dhn), Some(ht)) = (&sc.dhn, &prep.heat) {
        let mesh = HeatMesh::from_network(dhn, sc.solver.heat_mesh);
        let net = history_net(&layout, Carrier::Heat, mesh.n_nodes, &dhn.loads, nh);
        let states = mesh.simulate(dt, nh, &|t, n| net[n][t])?;
        let start = states.last().cloned().unwrap_or_else(|| vec![0.0; mesh.n_unknowns()]);
        let t_scale = ht
            .bounds
            .iter()
            .flat_map(|b| [b.0, b.1])
            .flatten()
            .map(f64::abs)
            .fold(1.0, f64::max);
        let mut vars = Vec::with_capacity(nd);
        let mut temperature = vec![Vec::new(); mesh.n_nodes];
        for t in 0..nd {
            let mut step = vec![0; mesh.n_unknowns()];
            for (i, slot) in step.iter_mut().enumerate() {
                let node = mesh.node.iter().position(|&v| v == i);
                let (name, quad) = match node {
                    Some(n) => (format!("T[{n}]@{t}"), Quadrant::TimeMonitored),
                    None => (format!("heat.T#{i}@{t}"), Quadrant::Auxiliary),
                };
                let v = qp.add_var(name, quad, -inf, inf);
                qp.set_scale(v, t_scale);
                if let Some(n) = node {
                    let (lo, hi) = ht.bounds[n];
                    qp.add_range(RowLabel::DhnSecurity, vec![(v, 1.0)], lo.unwrap_or(-inf), hi.unwrap_or(inf));
                    temperature[n].push(v);
                }
                *slot = v;
            }
            vars.push(step);
        }
        let loads = crate::model::node_series(mesh.n_nodes, h.n_total(), &dhn.loads);
        add_mesh_rows(
            &mut qp,
            &mesh.rows(Some(dt)),
            &vars,
            &vec![0.0; mesh.n_unknowns()],
            &start,
            &|_| 0.0,
            &|t, n| loads[n][nh + t],
            &|t, n| series_at(Carrier::Heat, t, n),
        );
        nodes.temperature = temperature;
        nodes.heat_unknowns_per_step = mesh.n_unknowns();
        heat_mesh = Some(mesh);
    }

    Ok(FdmModel {
        qp,
        layout,
        nodes,
        gas: gas_mesh,
        heat: heat_mesh,
    })
}

/// Monitored quantities of a finite-difference solution, read from the
/// node variables.
pub fn fdm_monitored(sc: &Scenario, prep: &Prepared, model: &FdmModel, x: &[f64]) -> MonitoredState {
    let h = prep.horizon;
    let line_flow = (0..prep.ptdf.nrows())
        .map(|l| {
            (0..h.n_dispatch)
                .map(|t| {
                    let (coeffs, c) = line_flow_expression(sc, prep, &model.layout, l, t);
                    c + coeffs.iter().map(|&(j, a)| a * x[j]).sum::<f64>()
                })
                .collect()
        })
        .collect();
    let pressure = match &prep.gas {
        None => Vec::new(),
        Some(g) => model
            .nodes
            .pressure
            .iter()
            .map(|p| match p {
                Some(v) => v.iter().map(|&j| x[j] + model.nodes.pressure_offset).collect(),
                None => g.p_ref_series[h.n_hist..].to_vec(),
            })
            .collect(),
    };
    let temperature = model.nodes.temperature.iter().map(|v| v.iter().map(|&j| x[j]).collect()).collect();
    MonitoredState {
        line_flow,
        pressure,
        temperature,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::circuit::{heat_distributed_params, heat_transmission_factor, HeatPipeGeometry};
    use approx::assert_relative_eq;

    fn pipe() -> GasDistributedParams {
        let g = GasPipeGeometry::new(20_000.0, 0.4, None, 0.01, 0.0, 340.0, 3.0).unwrap();
        gas_distributed_params(&g).unwrap()
    }

    #[test]
    fn gas_steady_state_matches_exponential_profile() {
        let par = pipe();
        let mesh = GasMesh::new(2, 0, &[(0, 1, 20_000.0, par)], 50.0);
        let m = 15.0;
        let x = mesh.simulate(900.0, 1, &|_| 5e6, &|_, _| -m).unwrap();
        let k = par.controlled_source;
        let l = 20_000.0;
        let exact = (-k * l).exp() * 5e6 - par.resistance * m * (1.0 - (-k * l).exp()) / k;
        let got = mesh.node_pressure(&x[0], 1, 5e6);
        // box scheme is second order in Δx
        assert!((got - exact).abs() < 1e-6 * 5e6, "{got} vs {exact}");
        assert!(mesh.pipe_flow(&x[0], 0).all(|v| (v - m).abs() < 1e-9));
    }

    #[test]
    fn gas_transient_conserves_mass() {
        let par = pipe();
        let mesh = GasMesh::new(2, 0, &[(0, 1, 20_000.0, par)], 500.0);
        let dt = 600.0;
        let load = |t: usize| if t < 3 { 10.0 } else { 20.0 };
        let xs = mesh.simulate(dt, 12, &|_| 5e6, &|t, _| -load(t)).unwrap();
        // line pack change equals net inflow over each step (trapezoid in space)
        let pack = |x: &[f64]| -> f64 {
            let p: Vec<f64> = mesh.pipe_pressure(x, 0).collect();
            let h = 500.0;
            par.capacitance * h * (p.iter().sum::<f64>() - 0.5 * (p[0] + p[p.len() - 1]))
        };
        for t in 1..12 {
            let m: Vec<f64> = mesh.pipe_flow(&xs[t], 0).collect();
            let inflow = m[0] - m[m.len() - 1];
            let change = (pack(&xs[t]) - pack(&xs[t - 1])) / dt;
            assert_relative_eq!(change, inflow, epsilon = 1e-6 * 20.0);
        }
    }

    #[test]
    fn heat_steady_state_matches_transmission_factor() {
        let spec = HeatPipeSpec {
            from: 0,
            to: 1,
            length: 3000.0,
            area: 0.05,
            heat_loss: 2.0,
            mass_flow: 20.0,
        };
        let mesh = HeatMesh::new(2, &[spec], 4182.0, 985.0, 10.0);
        let t_in = 80.0;
        let x = mesh.simulate(900.0, 1, &|_, n| if n == 0 { 4182.0 * 20.0 * t_in } else { 0.0 }).unwrap();
        let geom = HeatPipeGeometry {
            length: 3000.0,
            area: 0.05,
            heat_loss: 2.0,
            specific_heat: 4182.0,
            density: 985.0,
            mass_flow: 20.0,
        };
        let phi = heat_transmission_factor(&heat_distributed_params(&geom).unwrap(), 0.0, 3000.0).unwrap();
        assert_relative_eq!(mesh.node_temperature(&x[0], 0), t_in, max_relative = 1e-12);
        // implicit upwind: (1 + μΔx/(c_p m))^(−N) against e^{−μl/(c_p m)}
        assert_relative_eq!(mesh.node_temperature(&x[0], 1), t_in * phi.0.re, max_relative = 1e-4);
    }

    #[test]
    fn heat_front_arrives_after_transit_time() {
        let spec = HeatPipeSpec {
            from: 0,
            to: 1,
            length: 1000.0,
            area: 0.1,
            heat_loss: 0.0,
            mass_flow: 98.5,
        };
        // velocity 1 m/s, transit 1000 s
        let mesh = HeatMesh::new(2, &[spec], 4182.0, 985.0, 5.0);
        let dt = 5.0;
        let xs = mesh
            .simulate(dt, 400, &|t, n| if n == 0 && t >= 1 { 4182.0 * 98.5 * 10.0 } else { 0.0 })
            .unwrap();
        let out: Vec<f64> = xs.iter().map(|x| mesh.node_temperature(x, 1)).collect();
        let half = out.iter().position(|&v| v >= 5.0).unwrap() as f64 * dt;
        assert!((half - 1000.0).abs() < 60.0, "{half}");
        assert!((out[399] - 10.0).abs() < 1e-6);
    }

    #[test]
    fn periodic_gas_pipe_converges_to_circuit() {
        let p_in = PeriodicSignal {
            mean: 50e5,
            harmonics: vec![(1, 1e5, 0.3), (2, 0.3e5, 1.0)],
        };
        let m_out = PeriodicSignal {
            mean: 20.0,
            harmonics: vec![(1, 6.0, -0.5)],
        };
        let errs: Vec<f64> = (0..3)
            .map(|k| {
                let grid = PeriodicGrid {
                    period: 86400.0,
                    n_samples: 48,
                    substeps: 1 << k,
                    warmup_periods: 1,
                };
                gas_pipe_agreement(pipe(), 20_000.0, 400.0 / (1 << k) as f64, grid, &p_in, &m_out)
                    .unwrap()
                    .relative_rms
            })
            .collect();
        assert!(errs[0] < 1e-2, "{errs:?}");
        assert!(errs.windows(2).all(|w| w[1] < 0.6 * w[0]), "{errs:?}");
    }

    #[test]
    fn periodic_heat_pipe_converges_to_circuit() {
        let geom = HeatPipeGeometry {
            length: 3000.0,
            area: 0.0635,
            heat_loss: 0.3,
            specific_heat: 4182.0,
            density: 985.0,
            mass_flow: 50.0,
        };
        let spec = HeatPipeSpec {
            from: 0,
            to: 1,
            length: 3000.0,
            area: 0.0635,
            heat_loss: 0.3,
            mass_flow: 50.0,
        };
        let par = heat_distributed_params(&geom).unwrap();
        let t_in = PeriodicSignal {
            mean: 80.0,
            harmonics: vec![(1, 8.0, 0.3), (2, 3.0, 1.0)],
        };
        let errs: Vec<f64> = (0..3)
            .map(|k| {
                let grid = PeriodicGrid {
                    period: 86400.0,
                    n_samples: 96,
                    substeps: 1 << k,
                    warmup_periods: 1,
                };
                heat_pipe_agreement(spec, &par, 4182.0, 985.0, 100.0 / (1 << k) as f64, grid, &t_in)
                    .unwrap()
                    .relative_rms
            })
            .collect();
        assert!(errs[0] < 1e-2, "{errs:?}");
        assert!(errs.windows(2).all(|w| w[1] < 0.6 * w[0]), "{errs:?}");
    }

    #[test]
    fn micro_fdm_model_counts() {
        let sc = crate::cases::micro();
        let prep = Prepared::new(&sc).unwrap();
        let m = build_fdm_model(&sc, &prep).unwrap();
        let gas = m.gas.as_ref().unwrap();
        let heat = m.heat.as_ref().unwrap();
        // one 20 km pipe at 200 m: 101 points × (p, m) + one free node
        assert_eq!(gas.n_unknowns(), 2 * 101 + 1);
        // one 2 km pipe at 100 m: 20 points + two nodes
        assert_eq!(heat.n_unknowns(), 20 + 2);
        let nd = prep.horizon.n_dispatch;
        let bounds = m.qp.bound_rows.get(&RowLabel::Mesh).copied().unwrap_or(0);
        assert_eq!(m.qp.count_label(RowLabel::Mesh) + bounds, nd * (gas.n_unknowns() + heat.n_unknowns()));
    }
}
