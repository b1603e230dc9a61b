//! Incidence matrices and frequency-dependent nodal matrices for the gas
//! and heat networks, plus DC power transfer distribution factors.

use nalgebra::{DMatrix, DVector};
use num_complex::Complex64;
use thiserror::Error;

use crate::circuit::{HeatTransmissionFactor, LumpedPi};

const ZERO: Complex64 = Complex64 { re: 0.0, im: 0.0 };
const ONE: Complex64 = Complex64 { re: 1.0, im: 0.0 };

#[derive(Debug, Error, Clone, PartialEq)]
pub enum NetworkError {
    #[error("branch {branch} references node {node} outside 0..{n_nodes}")]
    DanglingBranch { branch: usize, node: usize, n_nodes: usize },
    #[error("branch {0} is a self-loop")]
    SelfLoop(usize),
    #[error("network is not connected (node {0} unreachable)")]
    Disconnected(usize),
    #[error("node {0} has outflow branches but non-positive total passing flow")]
    ZeroPassingFlow(usize),
    #[error("branch {0} has non-positive water flow")]
    NonPositiveFlow(usize),
    #[error("singular matrix: {0}")]
    Singular(String),
    #[error("dimension mismatch: {0}")]
    Dimension(String),
}

/// Directed graph over `n_nodes` nodes.
#[derive(Debug, Clone, PartialEq)]
pub struct Topology {
    pub n_nodes: usize,
    pub from: Vec<usize>,
    pub to: Vec<usize>,
}

impl Topology {
    pub fn new(n_nodes: usize, branches: &[(usize, usize)]) -> Result<Self, NetworkError> {
        for (b, &(f, t)) in branches.iter().enumerate() {
            for node in [f, t] {
                if node >= n_nodes {
                    return Err(NetworkError::DanglingBranch { branch: b, node, n_nodes });
                }
            }
            if f == t {
                return Err(NetworkError::SelfLoop(b));
            }
        }
        Ok(Self {
            n_nodes,
            from: branches.iter().map(|b| b.0).collect(),
            to: branches.iter().map(|b| b.1).collect(),
        })
    }

    pub fn n_branches(&self) -> usize {
        self.from.len()
    }

    /// Fails with the first unreachable node when the undirected graph is
    /// not connected.
    pub fn check_connected(&self) -> Result<(), NetworkError> {
        if self.n_nodes == 0 {
            return Ok(());
        }
        let mut adj = vec![Vec::new(); self.n_nodes];
        for (&f, &t) in self.from.iter().zip(&self.to) {
            adj[f].push(t);
            adj[t].push(f);
        }
        let mut seen = vec![false; self.n_nodes];
        let mut stack = vec![0];
        seen[0] = true;
        while let Some(n) = stack.pop() {
            for &m in &adj[n] {
                if !seen[m] {
                    seen[m] = true;
                    stack.push(m);
                }
            }
        }
        match seen.iter().position(|s| !s) {
            Some(n) => Err(NetworkError::Disconnected(n)),
            None => Ok(()),
        }
    }

    pub fn outgoing(&self, node: usize) -> impl Iterator<Item = usize> + '_ {
        (0..self.n_branches()).filter(move |&b| self.from[b] == node)
    }

    pub fn incoming(&self, node: usize) -> impl Iterator<Item = usize> + '_ {
        (0..self.n_branches()).filter(move |&b| self.to[b] == node)
    }
}

/// `A = A₊ − A₋` and, for heat networks, the flow-weighted `Ã₊`.
#[derive(Debug, Clone, PartialEq)]
pub struct IncidenceSet {
    pub a: DMatrix<f64>,
    pub a_plus: DMatrix<f64>,
    pub a_minus: DMatrix<f64>,
    pub a_plus_weighted: Option<DMatrix<f64>>,
}

/// Builds the incidence matrices. With `flows`, also builds `Ã₊` by
/// normalising each node's outflow branches by their total flow.
pub fn build_incidence(topo: &Topology, flows: Option<&[f64]>) -> Result<IncidenceSet, NetworkError> {
    let (n, nb) = (topo.n_nodes, topo.n_branches());
    let mut a_plus = DMatrix::zeros(n, nb);
    let mut a_minus = DMatrix::zeros(n, nb);
    for b in 0..nb {
        a_plus[(topo.from[b], b)] = 1.0;
        a_minus[(topo.to[b], b)] = 1.0;
    }
    let a_plus_weighted = match flows {
        None => None,
        Some(m) => {
            if m.len() != nb {
                return Err(NetworkError::Dimension(format!("{} flows for {} branches", m.len(), nb)));
            }
            let mut w = DMatrix::zeros(n, nb);
            for node in 0..n {
                let out: Vec<usize> = topo.outgoing(node).collect();
                if out.is_empty() {
                    continue;
                }
                let total: f64 = out.iter().map(|&b| m[b]).sum();
                if !(total > 0.0) {
                    return Err(NetworkError::ZeroPassingFlow(node));
                }
                for b in out {
                    w[(node, b)] = m[b] / total;
                }
            }
            Some(w)
        }
    };
    Ok(IncidenceSet {
        a: &a_plus - &a_minus,
        a_plus,
        a_minus,
        a_plus_weighted,
    })
}

/// `Y_g,n = A·Y_b·Aᵀ − A·Y_b·K_b·A₊ᵀ` over the series branches, with each
/// pipe's two shunts absorbed into the diagonal (ground is implicit).
pub fn gas_node_admittance(topo: &Topology, pis: &[LumpedPi]) -> Result<DMatrix<Complex64>, NetworkError> {
    if pis.len() != topo.n_branches() {
        return Err(NetworkError::Dimension(format!(
            "{} pipe models for {} branches",
            pis.len(),
            topo.n_branches()
        )));
    }
    let n = topo.n_nodes;
    let mut y = DMatrix::from_element(n, n, ZERO);
    for (b, pi) in pis.iter().enumerate() {
        let (f, t) = (topo.from[b], topo.to[b]);
        let ys = ONE / pi.series_impedance;
        let yk = ys * (ONE - pi.controlled_source);
        y[(f, f)] += yk + pi.shunt_from;
        y[(f, t)] -= ys;
        y[(t, f)] -= yk;
        y[(t, t)] += ys + pi.shunt_to;
    }
    Ok(y)
}

/// Heat network matrices at one frequency.
#[derive(Debug, Clone)]
pub struct HeatBranchAdmittance {
    /// `(I − Ã₊ᵀ·A₋·Φ)·diag(c_p·m)`, branch × branch.
    pub y_b: DMatrix<Complex64>,
    /// Maps branch-head temperatures to node temperatures: `Ã₊` rows for
    /// nodes with outflow and inflow mixing rows `O·Φ` for terminal nodes.
    pub node_map: DMatrix<Complex64>,
    /// `Ã₊ᵀ` as a complex matrix, branch × node.
    pub injection_map: DMatrix<Complex64>,
}

/// Assembles the heat branch admittance. Terminal nodes (no outflow) take
/// the flow-weighted mix of their inflow outlet temperatures.
pub fn heat_branch_admittance(
    topo: &Topology,
    inc: &IncidenceSet,
    flows: &[f64],
    specific_heat: f64,
    phis: &[HeatTransmissionFactor],
) -> Result<HeatBranchAdmittance, NetworkError> {
    let nb = topo.n_branches();
    let n = topo.n_nodes;
    if phis.len() != nb || flows.len() != nb {
        return Err(NetworkError::Dimension("per-branch data length".into()));
    }
    if let Some(b) = flows.iter().position(|&m| !(m > 0.0)) {
        return Err(NetworkError::NonPositiveFlow(b));
    }
    let wp = inc
        .a_plus_weighted
        .as_ref()
        .ok_or_else(|| NetworkError::Dimension("missing weighted incidence".into()))?;
    let wpt: DMatrix<Complex64> = wp.transpose().map(Complex64::from);
    let am: DMatrix<Complex64> = inc.a_minus.map(Complex64::from);
    let phi = DMatrix::from_diagonal(&DVector::from_iterator(nb, phis.iter().map(|p| p.0)));
    let cpm = DMatrix::from_diagonal(&DVector::from_iterator(
        nb,
        flows.iter().map(|&m| Complex64::from(specific_heat * m)),
    ));
    let y_b = (DMatrix::identity(nb, nb) - &wpt * &am * &phi) * cpm;

    let mut node_map: DMatrix<Complex64> = wp.map(Complex64::from);
    for node in 0..n {
        if topo.outgoing(node).next().is_some() {
            continue;
        }
        let inflow: Vec<usize> = topo.incoming(node).collect();
        let total: f64 = inflow.iter().map(|&b| flows[b]).sum();
        for b in inflow {
            node_map[(node, b)] = phis[b].0 * (flows[b] / total);
        }
    }
    Ok(HeatBranchAdmittance {
        y_b,
        node_map,
        injection_map: wpt,
    })
}

impl HeatBranchAdmittance {
    /// `Z_h,n` mapping node heat injections to node temperatures.
    pub fn node_impedance(&self) -> Result<DMatrix<Complex64>, NetworkError> {
        let solved = self
            .y_b
            .clone()
            .lu()
            .solve(&self.injection_map)
            .ok_or_else(|| NetworkError::Singular("heat branch admittance".into()))?;
        Ok(&self.node_map * solved)
    }
}

/// Inverse of the gas nodal admittance with the reference node removed.
#[derive(Debug, Clone)]
pub struct GasImpedance {
    pub reference: usize,
    /// n × n; the reference row and column are zero.
    pub z: DMatrix<Complex64>,
    /// Response of each node pressure to the reference pressure, with 1 at
    /// the reference itself.
    pub reference_gain: DVector<Complex64>,
}

impl GasImpedance {
    /// Absolute pressure phasors for the given injections and reference.
    pub fn pressures(&self, injections: &DVector<Complex64>, p_ref: Complex64) -> DVector<Complex64> {
        &self.z * injections + &self.reference_gain * p_ref
    }
}

pub fn gas_node_impedance(y: &DMatrix<Complex64>, reference: usize) -> Result<GasImpedance, NetworkError> {
    let n = y.nrows();
    if reference >= n || y.ncols() != n {
        return Err(NetworkError::Dimension("reference node out of range".into()));
    }
    let keep: Vec<usize> = (0..n).filter(|&i| i != reference).collect();
    let m = keep.len();
    let yr = DMatrix::from_fn(m, m, |i, j| y[(keep[i], keep[j])]);
    let y_ref = DVector::from_fn(m, |i, _| y[(keep[i], reference)]);
    let lu = yr.lu();
    let zr = lu
        .try_inverse()
        .ok_or_else(|| NetworkError::Singular("reduced gas admittance".into()))?;
    if zr.iter().any(|c| !c.is_finite()) {
        return Err(NetworkError::Singular("reduced gas admittance".into()));
    }
    let gain_r = -(&zr * y_ref);
    let mut z = DMatrix::from_element(n, n, ZERO);
    let mut gain = DVector::from_element(n, ZERO);
    gain[reference] = ONE;
    for (i, &ki) in keep.iter().enumerate() {
        gain[ki] = gain_r[i];
        for (j, &kj) in keep.iter().enumerate() {
            z[(ki, kj)] = zr[(i, j)];
        }
    }
    Ok(GasImpedance {
        reference,
        z,
        reference_gain: gain,
    })
}

/// DC power-flow PTDF (line × bus) with the given slack bus.
pub fn compute_ptdf(
    n_bus: usize,
    lines: &[(usize, usize, f64)],
    slack: usize,
) -> Result<DMatrix<f64>, NetworkError> {
    let branches: Vec<(usize, usize)> = lines.iter().map(|l| (l.0, l.1)).collect();
    let topo = Topology::new(n_bus, &branches)?;
    topo.check_connected()?;
    if slack >= n_bus {
        return Err(NetworkError::Dimension("slack bus out of range".into()));
    }
    if let Some(i) = lines.iter().position(|l| !(l.2 > 0.0)) {
        return Err(NetworkError::Dimension(format!("line {i} has non-positive reactance")));
    }
    let mut b = DMatrix::zeros(n_bus, n_bus);
    for &(f, t, x) in lines {
        let s = 1.0 / x;
        b[(f, f)] += s;
        b[(t, t)] += s;
        b[(f, t)] -= s;
        b[(t, f)] -= s;
    }
    let keep: Vec<usize> = (0..n_bus).filter(|&i| i != slack).collect();
    let m = keep.len();
    let br = DMatrix::from_fn(m, m, |i, j| b[(keep[i], keep[j])]);
    let xr = br
        .lu()
        .try_inverse()
        .ok_or_else(|| NetworkError::Singular("reduced susceptance".into()))?;
    let mut ptdf = DMatrix::zeros(lines.len(), n_bus);
    for (l, &(f, t, x)) in lines.iter().enumerate() {
        for (j, &kj) in keep.iter().enumerate() {
            let theta = |bus: usize| keep.iter().position(|&k| k == bus).map_or(0.0, |i| xr[(i, j)]);
            ptdf[(l, kj)] = (theta(f) - theta(t)) / x;
        }
    }
    Ok(ptdf)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::circuit::*;
    use approx::assert_relative_eq;

    fn c(re: f64, im: f64) -> Complex64 {
        Complex64::new(re, im)
    }

    #[test]
    fn incidence_single_branch() {
        let topo = Topology::new(2, &[(0, 1)]).unwrap();
        let inc = build_incidence(&topo, None).unwrap();
        assert_eq!(inc.a, DMatrix::from_row_slice(2, 1, &[1.0, -1.0]));
        assert_eq!(inc.a_plus, DMatrix::from_row_slice(2, 1, &[1.0, 0.0]));
        assert_eq!(inc.a_minus, DMatrix::from_row_slice(2, 1, &[0.0, 1.0]));
    }

    #[test]
    fn weighted_outflow_split() {
        let topo = Topology::new(3, &[(0, 1), (0, 2)]).unwrap();
        let inc = build_incidence(&topo, Some(&[3.0, 7.0])).unwrap();
        let w = inc.a_plus_weighted.unwrap();
        assert_relative_eq!(w[(0, 0)], 0.3);
        assert_relative_eq!(w[(0, 1)], 0.7);
        assert_eq!(w.row(1).sum(), 0.0);
        assert!(build_incidence(&topo, Some(&[0.0, 0.0])).is_err());
    }

    #[test]
    fn topology_validation() {
        assert!(Topology::new(2, &[(0, 2)]).is_err());
        assert!(Topology::new(2, &[(1, 1)]).is_err());
        let t = Topology::new(3, &[(0, 1)]).unwrap();
        assert_eq!(t.check_connected(), Err(NetworkError::Disconnected(2)));
    }

    fn resistive_pi(r: f64) -> LumpedPi {
        LumpedPi {
            series_impedance: c(r, 0.0),
            controlled_source: c(0.0, 0.0),
            shunt_from: c(0.0, 0.0),
            shunt_to: c(0.0, 0.0),
        }
    }

    #[test]
    fn single_resistive_pipe() {
        let topo = Topology::new(2, &[(0, 1)]).unwrap();
        let y = gas_node_admittance(&topo, &[resistive_pi(4.0)]).unwrap();
        assert_eq!(y[(0, 0)], c(0.25, 0.0));
        assert_eq!(y[(0, 1)], c(-0.25, 0.0));
        assert_eq!(y[(1, 0)], c(-0.25, 0.0));
        assert_eq!(y[(1, 1)], c(0.25, 0.0));
        let z = gas_node_impedance(&y, 1).unwrap();
        assert_relative_eq!(z.z[(0, 0)].re, 4.0, max_relative = 1e-12);
        assert_eq!(z.z[(1, 1)], ZERO);
        assert_relative_eq!(z.reference_gain[0].re, 1.0, max_relative = 1e-12);
    }

    fn sample_pipe(l: f64) -> GasDistributedParams {
        let g = GasPipeGeometry::new(l, 0.4, None, 0.012, 0.01, 350.0, 6.0).unwrap();
        gas_distributed_params(&g).unwrap()
    }

    #[test]
    fn nodal_equations_match_two_port() {
        // Injection at the from node is the pipe's inlet flow; at the to
        // node it is minus the outlet flow.
        let topo = Topology::new(2, &[(0, 1)]).unwrap();
        let tp = gas_two_port(&sample_pipe(15_000.0), 1.3e-4, 15_000.0).unwrap();
        let y = gas_node_admittance(&topo, &[gas_lumped(&tp).unwrap()]).unwrap();
        let (p0, m0) = (c(5e6, 1e4), c(30.0, -2.0));
        let (pl, ml) = tp.apply(p0, m0);
        let inj = &y * DVector::from_vec(vec![p0, pl]);
        assert!((inj[0] - m0).norm() < 1e-9 * m0.norm());
        assert!((inj[1] + ml).norm() < 1e-9 * ml.norm());
    }

    fn three_node_gas(omega: f64) -> (Topology, DMatrix<Complex64>) {
        let topo = Topology::new(3, &[(0, 1), (1, 2), (0, 2)]).unwrap();
        let pis: Vec<LumpedPi> = [10_000.0, 14_000.0, 21_000.0]
            .iter()
            .map(|&l| gas_lumped(&gas_two_port(&sample_pipe(l), omega, l).unwrap()).unwrap())
            .collect();
        let y = gas_node_admittance(&topo, &pis).unwrap();
        (topo, y)
    }

    #[test]
    fn impedance_inverts_reduced_admittance() {
        let (_, y) = three_node_gas(2e-4);
        let z = gas_node_impedance(&y, 0).unwrap();
        for i in 1..3 {
            for j in 1..3 {
                let v: Complex64 = (1..3).map(|k| z.z[(i, k)] * y[(k, j)]).sum();
                let want = if i == j { ONE } else { ZERO };
                assert!((v - want).norm() < 1e-8);
            }
        }
    }

    #[test]
    fn impedance_matches_pinned_solve() {
        let (_, y) = three_node_gas(5e-5);
        let z = gas_node_impedance(&y, 2).unwrap();
        let p_ref = c(4e6, -3e3);
        let inj = DVector::from_vec(vec![c(12.0, 1.0), c(-7.0, 0.5), ZERO]);
        let p = z.pressures(&inj, p_ref);
        assert_eq!(p[2], p_ref);
        let back = &y * &p;
        for i in 0..2 {
            assert!((back[i] - inj[i]).norm() < 1e-8 * inj[i].norm());
        }
    }

    #[test]
    fn reference_choice_shifts_pressures_uniformly() {
        let topo = Topology::new(3, &[(0, 1), (1, 2), (0, 2)]).unwrap();
        let pis = vec![resistive_pi(2.0), resistive_pi(3.0), resistive_pi(5.0)];
        let y = gas_node_admittance(&topo, &pis).unwrap();
        let inj = DVector::from_vec(vec![c(4.0, 0.0), c(-1.5, 0.0), c(-2.5, 0.0)]);
        let za = gas_node_impedance(&y, 0).unwrap().pressures(&inj, ZERO);
        let zb = gas_node_impedance(&y, 2).unwrap().pressures(&inj, ZERO);
        let shift = za[0] - zb[0];
        for i in 0..3 {
            assert!((za[i] - zb[i] - shift).norm() < 1e-10);
        }
    }

    #[test]
    fn singular_reduced_matrix_rejected() {
        let y = DMatrix::from_element(3, 3, ZERO);
        assert!(gas_node_impedance(&y, 0).is_err());
    }

    #[test]
    fn kirchhoff_consistency_per_branch() {
        let omega = 3e-4;
        let (topo, y) = three_node_gas(omega);
        let p = DVector::from_vec(vec![c(5e6, 2e3), c(4.8e6, -1e3), c(4.7e6, 5e2)]);
        let inj = &y * &p;
        let mut bal = [ZERO; 3];
        for (b, &l) in [10_000.0, 14_000.0, 21_000.0].iter().enumerate() {
            let tp = gas_two_port(&sample_pipe(l), omega, l).unwrap();
            let (f, t) = (topo.from[b], topo.to[b]);
            let m0 = (p[t] - tp.a * p[f]) / tp.b;
            let ml = tp.c * p[f] + tp.d * m0;
            bal[f] += m0;
            bal[t] -= ml;
        }
        for i in 0..3 {
            assert!((bal[i] - inj[i]).norm() < 1e-8 * inj.norm());
        }
    }

    #[test]
    fn static_lossless_reduces_to_conductance() {
        let topo = Topology::new(2, &[(0, 1)]).unwrap();
        let mut d = sample_pipe(1000.0);
        d.controlled_source = 0.0;
        let pi = gas_lumped(&gas_two_port(&d, 0.0, 1000.0).unwrap()).unwrap();
        let y = gas_node_admittance(&topo, &[pi]).unwrap();
        let g = 1.0 / (d.resistance * 1000.0);
        assert_relative_eq!(y[(0, 0)].re, g, max_relative = 1e-12);
        assert_relative_eq!(y[(0, 1)].re, -g, max_relative = 1e-12);
        assert!((y.row(0).sum()).norm() < 1e-12 * g);
        assert!((&y - y.transpose()).norm() < 1e-12 * g);
    }

    fn heat_case(
        n: usize,
        branches: &[(usize, usize)],
        flows: &[f64],
        phis: &[Complex64],
    ) -> (Topology, HeatBranchAdmittance) {
        let topo = Topology::new(n, branches).unwrap();
        let inc = build_incidence(&topo, Some(flows)).unwrap();
        let phis: Vec<_> = phis.iter().map(|&p| HeatTransmissionFactor(p)).collect();
        let h = heat_branch_admittance(&topo, &inc, flows, 4200.0, &phis).unwrap();
        (topo, h)
    }

    #[test]
    fn heat_single_pipe() {
        let phi = c(0.9, -0.2);
        let (_, h) = heat_case(2, &[(0, 1)], &[10.0], &[phi]);
        assert_relative_eq!(h.y_b[(0, 0)].re, 42_000.0);
        let z = h.node_impedance().unwrap();
        assert_relative_eq!(z[(0, 0)].re, 1.0 / 42_000.0, max_relative = 1e-12);
        assert!((z[(1, 0)] - phi / 42_000.0).norm() < 1e-15);
    }

    #[test]
    fn heat_series_pipes_multiply() {
        let (p1, p2) = (c(0.95, -0.1), c(0.8, 0.3));
        let (_, h) = heat_case(3, &[(0, 1), (1, 2)], &[10.0, 10.0], &[p1, p2]);
        let z = h.node_impedance().unwrap();
        let ratio = z[(2, 0)] / z[(0, 0)];
        assert!((ratio - p1 * p2).norm() < 1e-12);
    }

    #[test]
    fn heat_lossless_mixing() {
        // Two sources feeding one terminal node.
        let (_, h) = heat_case(3, &[(0, 2), (1, 2)], &[4.0, 6.0], &[ONE, ONE]);
        let z = h.node_impedance().unwrap();
        let inj = DVector::from_vec(vec![c(4.0 * 4200.0 * 50.0, 0.0), c(6.0 * 4200.0 * 70.0, 0.0), ZERO]);
        let t = &z * inj;
        assert_relative_eq!(t[0].re, 50.0, max_relative = 1e-12);
        assert_relative_eq!(t[1].re, 70.0, max_relative = 1e-12);
        assert_relative_eq!(t[2].re, 0.4 * 50.0 + 0.6 * 70.0, max_relative = 1e-12);
    }

    #[test]
    fn heat_lossless_tree_conserves_heat() {
        // 0 → 1, 1 → 2, 1 → 3 with 5 kg/s extracted at node 1.
        let flows = [20.0, 9.0, 6.0];
        let (topo, h) = heat_case(4, &[(0, 1), (1, 2), (1, 3)], &flows, &[ONE, ONE, ONE]);
        let inj = DVector::from_vec(vec![c(20.0 * 4200.0 * 80.0, 0.0), c(-5.0 * 4200.0 * 80.0, 0.0), ZERO, ZERO]);
        let tbf = h.y_b.clone().lu().solve(&(&h.injection_map * &inj)).unwrap();
        let t = &h.node_map * &tbf;
        for i in 0..4 {
            assert_relative_eq!(t[i].re, 80.0, max_relative = 1e-12);
        }
        let out: f64 = topo.incoming(2).chain(topo.incoming(3)).map(|b| 4200.0 * flows[b] * tbf[b].re).sum();
        assert_relative_eq!(out, inj.sum().re, max_relative = 1e-12);
    }

    #[test]
    fn heat_impedance_matches_branch_solve() {
        let flows = [30.0, 12.0, 18.0, 18.0];
        let phis = [c(0.97, -0.1), c(0.9, 0.2), c(0.85, -0.3), c(0.99, 0.05)];
        let (_, h) = heat_case(5, &[(0, 1), (1, 2), (1, 3), (3, 4)], &flows, &phis);
        let z = h.node_impedance().unwrap();
        let inj = DVector::from_vec(vec![c(3e6, 1e5), c(-4e5, 0.0), c(0.0, 0.0), c(2e5, -3e4), c(-1e5, 0.0)]);
        let tbf = h.y_b.clone().lu().solve(&(&h.injection_map * &inj)).unwrap();
        let direct = &h.node_map * tbf;
        let via_z = &z * &inj;
        assert!((direct - via_z).norm() < 1e-8 * inj.norm() / 1e5);
    }

    #[test]
    fn ptdf_two_bus() {
        let p = compute_ptdf(2, &[(0, 1, 0.1)], 1).unwrap();
        assert_relative_eq!(p[(0, 0)], 1.0, max_relative = 1e-12);
        assert_eq!(p[(0, 1)], 0.0);
    }

    #[test]
    fn ptdf_three_bus_ring() {
        let p = compute_ptdf(3, &[(0, 1, 0.2), (1, 2, 0.2), (2, 0, 0.2)], 2).unwrap();
        let want = [[1.0 / 3.0, -1.0 / 3.0, 0.0], [1.0 / 3.0, 2.0 / 3.0, 0.0], [-2.0 / 3.0, -1.0 / 3.0, 0.0]];
        for l in 0..3 {
            for b in 0..3 {
                assert!((p[(l, b)] - want[l][b]).abs() < 1e-12, "line {l} bus {b}");
            }
        }
    }

    #[test]
    fn ptdf_rejects_islands() {
        assert!(compute_ptdf(3, &[(0, 1, 0.1)], 0).is_err());
    }

    #[test]
    fn superposition_of_two_tones() {
        // Per-frequency solves summed in time equal one stacked solve over
        // both frequencies.
        use crate::spectral::Spectrum;
        let nt = 8;
        let spec = Spectrum::new(nt);
        let omega = |k: usize| 2.0 * std::f64::consts::PI * k as f64 / (nt as f64 * 3600.0);
        let tones = [(1usize, c(2.0, -1.0)), (3usize, c(-0.5, 0.8))];
        let inj_at = |_k: usize, amp: Complex64| DVector::from_vec(vec![ZERO, amp, -amp * 0.5]);
        let mut separate = vec![0.0; nt];
        for &(k, amp) in &tones {
            let (_, y) = three_node_gas(omega(k));
            let p = gas_node_impedance(&y, 0).unwrap().pressures(&inj_at(k, amp), ZERO);
            for (t, v) in separate.iter_mut().enumerate() {
                *v += (p[1] * spec.root(t, k)).re;
            }
        }
        let mut big = DMatrix::from_element(6, 6, ZERO);
        let mut rhs = DVector::from_element(6, ZERO);
        for (blk, &(k, amp)) in tones.iter().enumerate() {
            let (_, y) = three_node_gas(omega(k));
            let inj = inj_at(k, amp);
            for i in 0..3 {
                for j in 0..3 {
                    big[(3 * blk + i, 3 * blk + j)] = if i == 0 { if j == 0 { ONE } else { ZERO } } else { y[(i, j)] };
                }
                rhs[3 * blk + i] = if i == 0 { ZERO } else { inj[i] };
            }
        }
        let p = big.lu().solve(&rhs).unwrap();
        for t in 0..nt {
            let v = (p[1] * spec.root(t, 1)).re + (p[4] * spec.root(t, 3)).re;
            assert!((v - separate[t]).abs() < 1e-8 * separate.iter().map(|x| x.abs()).fold(0.0, f64::max));
        }
    }
}
