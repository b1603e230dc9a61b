//! Forward evaluation of line flows, node pressures and node temperatures
//! from net injections, and the security check against their bounds.

use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::circuit::{
    gas_two_port, heat_transmission_factor, CircuitError, GasDistributedParams, HeatDistributedParams,
};
use crate::model::{Injections, Prepared};
use crate::spectral::Spectrum;

/// Monitored quantities over the dispatch interval, `[element][step]`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MonitoredState {
    pub line_flow: Vec<Vec<f64>>,
    /// Absolute pressure, reference node included.
    pub pressure: Vec<Vec<f64>>,
    /// Temperature relative to ambient.
    pub temperature: Vec<Vec<f64>>,
}

fn synthesize_dispatch(prep: &Prepared, phasors: &[Vec<Complex64>]) -> Vec<Vec<f64>> {
    // phasors: κ × node
    let n = phasors.first().map_or(0, Vec::len);
    let h = prep.horizon;
    (0..n)
        .map(|i| {
            let c: Vec<Complex64> = phasors.iter().map(|row| row[i]).collect();
            h.dispatch_indices().map(|t| prep.spectrum.inverse_at(&c, t)).collect()
        })
        .collect()
}

pub fn evaluate_monitored(prep: &Prepared, inj: &Injections) -> MonitoredState {
    let nd = prep.horizon.n_dispatch;
    let nf = prep.horizon.n_freq();
    let line_flow = (0..prep.ptdf.nrows())
        .map(|l| {
            (0..nd)
                .map(|t| (0..inj.epn.len()).map(|b| prep.ptdf[(l, b)] * inj.epn[b][t]).sum())
                .collect()
        })
        .collect();
    let pressure = match &prep.gas {
        None => Vec::new(),
        Some(g) => {
            let per_k: Vec<Vec<Complex64>> = (0..nf)
                .map(|k| {
                    let z = &g.impedance[k];
                    (0..g.n_nodes)
                        .map(|i| {
                            let mut acc = z.reference_gain[i] * g.p_ref[k];
                            for j in 0..g.n_nodes {
                                acc += z.z[(i, j)] * inj.gas[j][k];
                            }
                            acc
                        })
                        .collect()
                })
                .collect();
            synthesize_dispatch(prep, &per_k)
        }
    };
    let temperature = match &prep.heat {
        None => Vec::new(),
        Some(ht) => {
            let per_k: Vec<Vec<Complex64>> = (0..nf)
                .map(|k| {
                    let z = &ht.impedance[k];
                    (0..ht.n_nodes)
                        .map(|i| (0..ht.n_nodes).map(|j| z[(i, j)] * inj.heat[j][k]).sum())
                        .collect()
                })
                .collect();
            synthesize_dispatch(prep, &per_k)
        }
    };
    MonitoredState {
        line_flow,
        pressure,
        temperature,
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ViolationKind {
    LineLower,
    LineUpper,
    PressureLower,
    PressureUpper,
    TemperatureLower,
    TemperatureUpper,
}

impl ViolationKind {
    pub const ALL: [ViolationKind; 6] = [
        ViolationKind::LineLower,
        ViolationKind::LineUpper,
        ViolationKind::PressureLower,
        ViolationKind::PressureUpper,
        ViolationKind::TemperatureLower,
        ViolationKind::TemperatureUpper,
    ];

    pub fn is_upper(&self) -> bool {
        matches!(
            self,
            ViolationKind::LineUpper | ViolationKind::PressureUpper | ViolationKind::TemperatureUpper
        )
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Violation {
    pub kind: ViolationKind,
    /// Line or node index.
    pub index: usize,
    /// Dispatch step.
    pub step: usize,
    /// Amount by which the bound is exceeded, in W, Pa or K.
    pub magnitude: f64,
}

/// Tolerance applied to a bound: relative to its magnitude, absolute for 0.
pub fn bound_tolerance(bound: f64, rel_tol: f64) -> f64 {
    if bound == 0.0 {
        rel_tol
    } else {
        rel_tol * bound.abs()
    }
}

/// All bound violations larger than the tolerance. The gas reference node
/// is pinned by its input series and is not checked.
pub fn security_check(prep: &Prepared, state: &MonitoredState, rel_tol: f64) -> Vec<Violation> {
    let mut out = Vec::new();
    let mut check = |lo: Option<f64>, hi: Option<f64>, series: &[f64], kinds: (ViolationKind, ViolationKind), index: usize| {
        for (t, &v) in series.iter().enumerate() {
            if let Some(lo) = lo {
                let m = lo - v;
                if m > bound_tolerance(lo, rel_tol) {
                    out.push(Violation { kind: kinds.0, index, step: t, magnitude: m });
                }
            }
            if let Some(hi) = hi {
                let m = v - hi;
                if m > bound_tolerance(hi, rel_tol) {
                    out.push(Violation { kind: kinds.1, index, step: t, magnitude: m });
                }
            }
        }
    };
    for (l, cap) in prep.line_limits.iter().enumerate() {
        if let Some(cap) = *cap {
            check(Some(-cap), Some(cap), &state.line_flow[l], (ViolationKind::LineLower, ViolationKind::LineUpper), l);
        }
    }
    if let Some(g) = &prep.gas {
        for (i, &(lo, hi)) in g.bounds.iter().enumerate() {
            if i != g.reference {
                check(lo, hi, &state.pressure[i], (ViolationKind::PressureLower, ViolationKind::PressureUpper), i);
            }
        }
    }
    if let Some(ht) = &prep.heat {
        for (i, &(lo, hi)) in ht.bounds.iter().enumerate() {
            check(
                lo,
                hi,
                &state.temperature[i],
                (ViolationKind::TemperatureLower, ViolationKind::TemperatureUpper),
                i,
            );
        }
    }
    out
}

/// Applies a per-frequency gain to a periodic series sampled uniformly over
/// `period` seconds.
fn filter_periodic(
    series: &[f64],
    period: f64,
    gain: impl Fn(f64) -> Result<Complex64, CircuitError>,
) -> Result<Vec<f64>, CircuitError> {
    let spec = Spectrum::new(series.len());
    let mut ph = spec.forward(series);
    for (k, c) in ph.coeffs.iter_mut().enumerate() {
        *c *= gain(2.0 * std::f64::consts::PI * k as f64 / period)?;
    }
    Ok(ph.synthesize())
}

/// Outlet pressure of a single gas pipe in periodic operation, from one
/// period of inlet pressure and outlet mass flow samples.
pub fn gas_pipe_outlet(
    dist: &GasDistributedParams,
    length: f64,
    period: f64,
    p_in: &[f64],
    m_out: &[f64],
) -> Result<Vec<f64>, CircuitError> {
    assert_eq!(p_in.len(), m_out.len(), "boundary series length mismatch");
    // p_l = A p₀ + B m₀ with m₀ = (m_l − C p₀)/D
    let via_p = filter_periodic(p_in, period, |w| {
        let tp = gas_two_port(dist, w, length)?;
        Ok(tp.a - tp.b * tp.c / tp.d)
    })?;
    let via_m = filter_periodic(m_out, period, |w| {
        let tp = gas_two_port(dist, w, length)?;
        Ok(tp.b / tp.d)
    })?;
    Ok(via_p.iter().zip(&via_m).map(|(a, b)| a + b).collect())
}

/// Outlet temperature of a single heat pipe in periodic operation.
pub fn heat_pipe_outlet(
    dist: &HeatDistributedParams,
    length: f64,
    period: f64,
    t_in: &[f64],
) -> Result<Vec<f64>, CircuitError> {
    filter_periodic(t_in, period, |w| Ok(heat_transmission_factor(dist, w, length)?.0))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::cases;

    fn zero_injections(prep: &Prepared) -> Injections {
        let nf = prep.horizon.n_freq();
        Injections {
            epn: vec![vec![0.0; prep.horizon.n_dispatch]; prep.epn_load.len()],
            gas: prep.gas.as_ref().map_or_else(Vec::new, |g| vec![vec![Complex64::new(0.0, 0.0); nf]; g.n_nodes]),
            heat: prep.heat.as_ref().map_or_else(Vec::new, |h| vec![vec![Complex64::new(0.0, 0.0); nf]; h.n_nodes]),
        }
    }

    #[test]
    fn zero_injection_gives_reference_pressure_and_zero_temperature() {
        let sc = cases::micro();
        let prep = Prepared::new(&sc).unwrap();
        let st = evaluate_monitored(&prep, &zero_injections(&prep));
        let g = prep.gas.as_ref().unwrap();
        let pref = &g.p_ref_series[prep.horizon.n_hist..];
        // Without injections every node follows the reference up to the
        // gravity/friction gain of the linearised pipe.
        for p in &st.pressure {
            for (a, b) in p.iter().zip(pref) {
                assert!((a - b).abs() < 5e-2 * b, "{a} vs {b}");
            }
        }
        assert!(st.temperature.iter().flatten().all(|t| t.abs() < 1e-9));
        assert!(st.line_flow.iter().flatten().all(|f| f.abs() < 1e-9));
    }

    #[test]
    fn single_tone_is_sinusoid_with_impedance_amplitude() {
        let sc = cases::micro();
        let prep = Prepared::new(&sc).unwrap();
        let mut inj = zero_injections(&prep);
        let k = 3;
        let ht = prep.heat.as_ref().unwrap();
        inj.heat[0][k] = Complex64::new(2.0e5, -1.0e5);
        let st = evaluate_monitored(&prep, &inj);
        let amp = (ht.impedance[k][(1, 0)] * inj.heat[0][k]).norm();
        let peak = st.temperature[1].iter().fold(0.0f64, |m, v| m.max(v.abs()));
        assert!(peak <= amp * (1.0 + 1e-9));
        let nh = prep.horizon.n_hist;
        let c = ht.impedance[k][(1, 0)] * inj.heat[0][k];
        for (i, v) in st.temperature[1].iter().enumerate() {
            let direct = (c * prep.spectrum.root(nh + i, k)).re;
            assert!((v - direct).abs() < 1e-9 * amp, "{v} vs {direct}");
        }
    }

    #[test]
    fn gas_pipe_outlet_steady_is_exponential_profile() {
        use crate::circuit::{gas_distributed_params, GasPipeGeometry};
        let g = GasPipeGeometry::new(15_000.0, 0.3, None, 0.01, 0.02, 340.0, 2.0).unwrap();
        let par = gas_distributed_params(&g).unwrap();
        let out = gas_pipe_outlet(&par, 15_000.0, 86400.0, &[48e5; 24], &[9.0; 24]).unwrap();
        let e = (-par.controlled_source * 15_000.0).exp();
        let exact = e * 48e5 - par.resistance * 9.0 * (1.0 - e) / par.controlled_source;
        assert!(out.iter().all(|v| (v - exact).abs() < 1e-9 * exact), "{} vs {exact}", out[0]);
    }

    #[test]
    fn heat_pipe_outlet_is_delayed_inlet_without_loss() {
        use crate::circuit::{heat_distributed_params, HeatPipeGeometry};
        let geom = HeatPipeGeometry {
            length: 4000.0,
            area: 0.1,
            heat_loss: 0.0,
            specific_heat: 4182.0,
            density: 985.0,
            mass_flow: 49.25,
        };
        let par = heat_distributed_params(&geom).unwrap();
        // plug flow at 0.5 m/s
        let delay = 4000.0 / 0.5;
        let period = 86400.0;
        let w = 2.0 * std::f64::consts::PI / period;
        let t_in: Vec<f64> = (0..48).map(|i| 70.0 + 5.0 * (2.0 * w * i as f64 * 1800.0).cos()).collect();
        let out = heat_pipe_outlet(&par, 4000.0, period, &t_in).unwrap();
        for (i, v) in out.iter().enumerate() {
            let exact = 70.0 + 5.0 * (2.0 * w * (i as f64 * 1800.0 - delay)).cos();
            assert!((v - exact).abs() < 1e-9, "{v} vs {exact}");
        }
    }

    #[test]
    fn linear_in_injections() {
        let sc = cases::micro();
        let prep = Prepared::new(&sc).unwrap();
        let mut a = zero_injections(&prep);
        let mut b = zero_injections(&prep);
        a.gas[1][1] = Complex64::new(0.3, 0.1);
        b.gas[1][2] = Complex64::new(-0.2, 0.4);
        a.heat[0][2] = Complex64::new(1e5, 0.0);
        b.epn[0][0] = 3.0e6;
        let mut ab = zero_injections(&prep);
        for (i, row) in ab.gas.iter_mut().enumerate() {
            for (k, c) in row.iter_mut().enumerate() {
                *c = a.gas[i][k] + b.gas[i][k];
            }
        }
        for (i, row) in ab.heat.iter_mut().enumerate() {
            for (k, c) in row.iter_mut().enumerate() {
                *c = a.heat[i][k] + b.heat[i][k];
            }
        }
        ab.epn[0][0] = 3.0e6;
        let (sa, sb, sab, s0) = (
            evaluate_monitored(&prep, &a),
            evaluate_monitored(&prep, &b),
            evaluate_monitored(&prep, &ab),
            evaluate_monitored(&prep, &zero_injections(&prep)),
        );
        for i in 0..sab.pressure.len() {
            for t in 0..sab.pressure[i].len() {
                // the reference response enters every state once
                let lhs = sab.pressure[i][t] - s0.pressure[i][t];
                let rhs = (sa.pressure[i][t] - s0.pressure[i][t]) + (sb.pressure[i][t] - s0.pressure[i][t]);
                assert!((lhs - rhs).abs() < 1e-6, "{lhs} {rhs}");
            }
        }
        for i in 0..sab.temperature.len() {
            for t in 0..sab.temperature[i].len() {
                let rhs = sa.temperature[i][t] + sb.temperature[i][t];
                assert!((sab.temperature[i][t] - rhs).abs() < 1e-9);
            }
        }
    }

    fn state_with(prep: &Prepared, p: f64) -> MonitoredState {
        let nd = prep.horizon.n_dispatch;
        let g = prep.gas.as_ref().unwrap();
        let h = prep.heat.as_ref().unwrap();
        MonitoredState {
            line_flow: vec![vec![0.0; nd]; prep.line_limits.len()],
            pressure: vec![vec![p; nd]; g.n_nodes],
            temperature: vec![vec![h.bounds[0].0.unwrap_or(0.0) + 1.0; nd]; h.n_nodes],
        }
    }

    #[test]
    fn security_check_sets() {
        let sc = cases::micro();
        let prep = Prepared::new(&sc).unwrap();
        let g = prep.gas.as_ref().unwrap();
        let other = 1 - g.reference;
        let (lo, hi) = (g.bounds[other].0.unwrap(), g.bounds[other].1.unwrap());
        let inside = state_with(&prep, 0.5 * (lo + hi));
        assert!(security_check(&prep, &inside, 1e-6).is_empty());

        let mut above = inside.clone();
        above.pressure[other][2] = hi + 1.0;
        let v = security_check(&prep, &above, 1e-9);
        assert_eq!(v.len(), 1);
        assert_eq!(v[0].kind, ViolationKind::PressureUpper);
        assert!((v[0].magnitude - 1.0).abs() < 1e-6);
        assert_eq!((v[0].index, v[0].step), (other, 2));

        let cap = prep.line_limits[0].unwrap();
        let mut low = inside.clone();
        low.line_flow[0][1] = -cap - 5.0;
        let v = security_check(&prep, &low, 1e-9);
        assert_eq!(v.len(), 1);
        assert_eq!(v[0].kind, ViolationKind::LineLower);
    }

    #[test]
    fn reference_node_not_checked() {
        let sc = cases::micro();
        let prep = Prepared::new(&sc).unwrap();
        let g = prep.gas.as_ref().unwrap();
        let other = 1 - g.reference;
        let (lo, hi) = (g.bounds[other].0.unwrap(), g.bounds[other].1.unwrap());
        let mut st = state_with(&prep, 0.5 * (lo + hi));
        st.pressure[g.reference][0] = 1e12;
        assert!(security_check(&prep, &st, 1e-6).is_empty());
    }
}
