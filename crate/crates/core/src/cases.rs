//! Bundled scenarios: a hand-checkable two-node system, a 9-bus / 7-node /
//! 12-node system, and a cascade generator that chains copies of the
//! latter with a tie line and a tie pipe between source nodes.

use std::f64::consts::PI;

use crate::scenario::*;

const MW: f64 = 1e6;
const BAR: f64 = 1e5;

/// Daily load shape, mean about 0.85, evening peak.
pub fn load_shape(hour: f64) -> f64 {
    0.85 + 0.12 * (2.0 * PI * (hour - 11.0) / 24.0).sin() + 0.04 * (4.0 * PI * (hour - 4.0) / 24.0).sin()
}

/// Daily wind shape in [0.2, 0.8], strongest at night.
pub fn wind_shape(hour: f64) -> f64 {
    0.5 + 0.3 * (2.0 * PI * (hour + 3.0) / 24.0).cos()
}

fn profile(n: usize, step_h: f64, offset: usize, base: f64, shape: fn(f64) -> f64) -> Series {
    Series::Inline((0..n).map(|t| base * shape((t + offset) as f64 * step_h)).collect())
}

fn flat(n: usize, v: f64) -> Series {
    Series::Inline(vec![v; n])
}

/// `[u₂, u₁, u₀]` from $/MWh-style inputs and the step length in hours.
fn cost_mw(quad: f64, lin: f64, fixed: f64, step_h: f64) -> Cost {
    [quad * step_h / (MW * MW), lin * step_h / MW, fixed * step_h]
}

/// `v` is the linearisation velocity, chosen near the expected mean flow.
fn gas_pipe(name: &str, from: usize, to: usize, km: f64, d: f64, v: f64) -> GasPipe {
    GasPipe {
        name: name.into(),
        from,
        to,
        length: km * 1000.0,
        diameter: d,
        area: None,
        friction: 0.01,
        incline: 0.0,
        sonic_speed: 340.0,
        base_velocity: v,
    }
}

fn heat_pipe(name: &str, from: usize, to: usize, km: f64, m: f64) -> HeatPipe {
    HeatPipe {
        name: name.into(),
        from,
        to,
        length: km * 1000.0,
        // sized for about 0.8 m/s
        area: m / (985.0 * 0.8),
        heat_loss: 0.3,
        mass_flow: m,
    }
}

/// Two buses, two gas nodes, two heat nodes; 12 h history and 12 h
/// dispatch at hourly steps.
pub fn micro() -> Scenario {
    let (nh, nd, step) = (12usize, 12usize, 3600.0);
    let nt = nh + nd;
    let sh = step / 3600.0;
    Scenario {
        name: "micro".into(),
        units: Units::default(),
        horizon: HorizonSpec { n_hist: nh, n_dispatch: nd, step_seconds: step },
        epn: Epn {
            buses: vec!["b0".into(), "b1".into()],
            lines: vec![Line { name: "l0".into(), from: 0, to: 1, reactance: 0.1, capacity: Some(70.0 * MW) }],
            slack: Some(0),
            loads: vec![NodeSeries { node: 1, series: profile(nd, sh, nh, 110.0 * MW, load_shape) }],
        },
        ngn: Some(Ngn {
            nodes: vec![
                GasNode { name: "g0".into(), p_min: Some(45.0 * BAR), p_max: Some(55.0 * BAR) },
                GasNode { name: "g1".into(), p_min: Some(48.0 * BAR), p_max: Some(52.0 * BAR) },
            ],
            pipes: vec![gas_pipe("gp0", 0, 1, 20.0, 0.3, 2.0)],
            reference: Some(0),
            reference_pressure: flat(nt, 50.0 * BAR),
            loads: vec![NodeSeries { node: 1, series: profile(nt, sh, 0, 6.0, load_shape) }],
        }),
        dhn: Some(Dhn {
            nodes: vec![
                HeatNode { name: "h0".into(), t_min: Some(60.0), t_max: Some(100.0) },
                HeatNode { name: "h1".into(), t_min: Some(60.0), t_max: Some(100.0) },
            ],
            pipes: vec![heat_pipe("hp0", 0, 1, 2.0, 60.0)],
            specific_heat: 4182.0,
            density: 985.0,
            ambient: 10.0,
            loads: vec![NodeSeries { node: 1, series: profile(nt, sh, 0, 17.0 * MW, load_shape) }],
        }),
        devices: Devices {
            tpu: vec![Tpu {
                name: "G0".into(),
                bus: 0,
                p_min: 0.0,
                p_max: 150.0 * MW,
                ramp_up: 40.0 * MW,
                ramp_down: 40.0 * MW,
                cost: cost_mw(0.02, 40.0, 0.0, sh),
                history: Some(flat(nh, 60.0 * MW)),
            }],
            ngu: vec![Ngu {
                name: "N0".into(),
                bus: 1,
                gas_node: 1,
                p_min: 0.0,
                p_max: 80.0 * MW,
                ramp_up: 30.0 * MW,
                ramp_down: 30.0 * MW,
                ratio: 20.0 * MW,
                history: flat(nh, 20.0 * MW),
            }],
            chp: vec![Chp {
                name: "C0".into(),
                bus: 1,
                heat_node: 0,
                p_min: 4.0 * MW,
                p_max: 24.0 * MW,
                ramp_up: 10.0 * MW,
                ramp_down: 10.0 * MW,
                ratio: 0.8,
                cost_power: cost_mw(0.0, 35.0, 0.0, sh),
                cost_heat: cost_mw(0.0, 4.0, 0.0, sh),
                history: flat(nh, 12.0 * MW),
            }],
            wind: vec![WindTurbine {
                name: "W0".into(),
                bus: 1,
                available: profile(nd, sh, nh, 40.0 * MW, wind_shape),
            }],
            gas_boiler: vec![GasBoiler {
                name: "B0".into(),
                gas_node: 1,
                heat_node: 0,
                h_min: 0.0,
                h_max: 15.0 * MW,
                ramp_up: 8.0 * MW,
                ramp_down: 8.0 * MW,
                ratio: 45.0 * MW,
                history: flat(nh, 4.0 * MW),
            }],
            heat_pump: vec![HeatPump {
                name: "H0".into(),
                bus: 1,
                heat_node: 0,
                h_min: 0.0,
                h_max: 8.0 * MW,
                ramp_up: 4.0 * MW,
                ramp_down: 4.0 * MW,
                ratio: 3.0,
                history: flat(nh, 2.0 * MW),
            }],
            gas_well: vec![GasWell {
                name: "S0".into(),
                node: 0,
                m_min: 0.0,
                m_max: 30.0,
                ramp_up: 10.0,
                ramp_down: 10.0,
                cost: [0.0, 0.25 * step, 0.0],
                history: flat(nh, 7.5),
            }],
        },
        solver: SolverSettings::default(),
    }
}

/// 9-bus / 7-node / 12-node system with 24 h of history and 24 h of
/// dispatch at 15 min steps.
pub fn small() -> Scenario {
    let (nh, nd, step) = (96usize, 96usize, 900.0);
    let nt = nh + nd;
    let sh = step / 3600.0;
    let line = |name: &str, from, to, x, cap: f64| Line { name: name.into(), from, to, reactance: x, capacity: Some(cap * MW) };
    let gnode = |name: &str, lo: f64, hi: f64| GasNode { name: name.into(), p_min: Some(lo * BAR), p_max: Some(hi * BAR) };
    let hnode = |name: &str| HeatNode { name: name.into(), t_min: Some(55.0), t_max: Some(95.0) };
    let heat_load = |node: usize, mw: f64| NodeSeries { node, series: profile(nt, sh, 0, mw * MW, load_shape) };
    let gas_load = |node: usize, kg: f64| NodeSeries { node, series: profile(nt, sh, 0, kg, load_shape) };
    Scenario {
        name: "small".into(),
        units: Units::default(),
        horizon: HorizonSpec { n_hist: nh, n_dispatch: nd, step_seconds: step },
        epn: Epn {
            buses: (1..=9).map(|i| format!("bus{i}")).collect(),
            lines: vec![
                line("l1-4", 0, 3, 0.0576, 250.0),
                line("l4-5", 3, 4, 0.092, 250.0),
                line("l5-6", 4, 5, 0.17, 150.0),
                line("l3-6", 2, 5, 0.0586, 300.0),
                line("l6-7", 5, 6, 0.1008, 150.0),
                line("l7-8", 6, 7, 0.072, 250.0),
                line("l8-2", 7, 1, 0.0625, 250.0),
                line("l8-9", 7, 8, 0.161, 150.0),
                line("l9-4", 8, 3, 0.085, 100.0),
            ],
            slack: Some(0),
            loads: vec![
                NodeSeries { node: 4, series: profile(nd, sh, nh, 90.0 * MW, load_shape) },
                NodeSeries { node: 6, series: profile(nd, sh, nh, 100.0 * MW, load_shape) },
                NodeSeries { node: 8, series: profile(nd, sh, nh, 125.0 * MW, load_shape) },
            ],
        },
        ngn: Some(Ngn {
            nodes: vec![
                gnode("n1", 45.0, 55.0),
                gnode("n2", 45.0, 55.0),
                gnode("n3", 45.0, 55.0),
                gnode("n4", 45.0, 55.0),
                gnode("n5", 46.0, 55.0),
                gnode("n6", 45.0, 55.0),
                gnode("n7", 46.0, 55.0),
            ],
            pipes: vec![
                gas_pipe("gp1", 0, 1, 20.0, 0.4, 3.0),
                gas_pipe("gp2", 1, 2, 15.0, 0.3, 2.5),
                gas_pipe("gp3", 1, 3, 18.0, 0.3, 2.5),
                gas_pipe("gp4", 3, 4, 16.0, 0.25, 1.8),
                gas_pipe("gp5", 5, 4, 14.0, 0.25, 1.4),
                gas_pipe("gp6", 3, 6, 17.0, 0.25, 2.0),
            ],
            reference: Some(0),
            reference_pressure: flat(nt, 50.0 * BAR),
            loads: vec![gas_load(2, 6.0), gas_load(4, 8.0), gas_load(6, 5.0)],
        }),
        dhn: Some(Dhn {
            nodes: (1..=12).map(|i| hnode(&format!("h{i}"))).collect(),
            pipes: vec![
                heat_pipe("hp1", 0, 1, 2.0, 80.0),
                heat_pipe("hp2", 1, 2, 1.5, 30.0),
                heat_pipe("hp3", 1, 3, 2.0, 50.0),
                heat_pipe("hp4", 2, 4, 1.5, 15.0),
                heat_pipe("hp5", 2, 5, 1.2, 15.0),
                heat_pipe("hp6", 3, 6, 1.8, 25.0),
                heat_pipe("hp7", 3, 7, 1.6, 25.0),
                heat_pipe("hp8", 6, 8, 1.5, 12.0),
                heat_pipe("hp9", 6, 9, 1.4, 13.0),
                heat_pipe("hp10", 7, 10, 1.8, 12.0),
                heat_pipe("hp11", 7, 11, 1.7, 13.0),
            ],
            specific_heat: 4182.0,
            density: 985.0,
            ambient: 10.0,
            loads: vec![
                heat_load(4, 4.0),
                heat_load(5, 4.0),
                heat_load(8, 4.5),
                heat_load(9, 4.5),
                heat_load(10, 4.5),
                heat_load(11, 4.5),
            ],
        }),
        devices: Devices {
            tpu: vec![
                Tpu {
                    name: "G1".into(),
                    bus: 0,
                    p_min: 10.0 * MW,
                    p_max: 250.0 * MW,
                    ramp_up: 15.0 * MW,
                    ramp_down: 15.0 * MW,
                    cost: cost_mw(0.02, 30.0, 100.0, sh),
                    history: Some(flat(nh, 150.0 * MW)),
                },
                Tpu {
                    name: "G3".into(),
                    bus: 2,
                    p_min: 10.0 * MW,
                    p_max: 150.0 * MW,
                    ramp_up: 15.0 * MW,
                    ramp_down: 15.0 * MW,
                    cost: cost_mw(0.03, 55.0, 80.0, sh),
                    history: Some(flat(nh, 40.0 * MW)),
                },
            ],
            ngu: vec![Ngu {
                name: "N2".into(),
                bus: 1,
                gas_node: 2,
                p_min: 0.0,
                p_max: 150.0 * MW,
                ramp_up: 10.0 * MW,
                ramp_down: 10.0 * MW,
                ratio: 20.0 * MW,
                history: flat(nh, 60.0 * MW),
            }],
            chp: vec![Chp {
                name: "C5".into(),
                bus: 4,
                heat_node: 0,
                p_min: 16.0 * MW,
                p_max: 28.0 * MW,
                ramp_up: 4.0 * MW,
                ramp_down: 4.0 * MW,
                ratio: 0.8,
                cost_power: cost_mw(0.01, 35.0, 50.0, sh),
                cost_heat: cost_mw(0.0, 5.0, 0.0, sh),
                history: flat(nh, 20.0 * MW),
            }],
            wind: vec![WindTurbine {
                name: "W7".into(),
                bus: 6,
                available: profile(nd, sh, nh, 80.0 * MW, wind_shape),
            }],
            gas_boiler: vec![GasBoiler {
                name: "B1".into(),
                gas_node: 6,
                heat_node: 0,
                h_min: 0.0,
                h_max: 20.0 * MW,
                ramp_up: 3.0 * MW,
                ramp_down: 3.0 * MW,
                ratio: 45.0 * MW,
                history: flat(nh, 4.0 * MW),
            }],
            heat_pump: vec![HeatPump {
                name: "H7".into(),
                bus: 6,
                heat_node: 6,
                h_min: 0.0,
                h_max: 3.0 * MW,
                ramp_up: 2.0 * MW,
                ramp_down: 2.0 * MW,
                ratio: 3.0,
                history: flat(nh, 1.0 * MW),
            }],
            gas_well: vec![
                GasWell {
                    name: "S1".into(),
                    node: 0,
                    m_min: 0.0,
                    m_max: 40.0,
                    ramp_up: 4.0,
                    ramp_down: 4.0,
                    cost: [0.0, 0.25 * step, 0.0],
                    history: flat(nh, 18.0),
                },
                GasWell {
                    name: "S6".into(),
                    node: 5,
                    m_min: 0.0,
                    m_max: 15.0,
                    ramp_up: 2.0,
                    ramp_down: 2.0,
                    cost: [0.0, 0.32 * step, 0.0],
                    history: flat(nh, 3.0),
                },
            ],
        },
        solver: SolverSettings::default(),
    }
}

/// `k` copies of [`small`] chained by a tie line (bus 9 of copy `i` to bus
/// 1 of copy `i+1`) and a tie pipe (node 1 of copy `i` to node 1 of copy
/// `i+1`). Heat networks stay separate. The pressure reference is node 1
/// of the first copy.
pub fn cascade(k: usize) -> Scenario {
    assert!(k >= 1, "cascade needs at least one copy");
    let base = small();
    let mut sc = base.clone();
    sc.name = format!("cascade-{k}x");
    if k == 1 {
        return sc;
    }
    let nb = base.epn.buses.len();
    let ngn0 = base.ngn.as_ref().unwrap();
    let dhn0 = base.dhn.as_ref().unwrap();
    let (ng, nh) = (ngn0.nodes.len(), dhn0.nodes.len());
    let sfx = |s: &str, c: usize| format!("{s}#{c}");
    for c in 1..k {
        let (ob, og, oh) = (c * nb, c * ng, c * nh);
        sc.epn.buses.extend(base.epn.buses.iter().map(|b| sfx(b, c)));
        sc.epn.lines.extend(base.epn.lines.iter().map(|l| Line {
            name: sfx(&l.name, c),
            from: l.from + ob,
            to: l.to + ob,
            ..l.clone()
        }));
        sc.epn.lines.push(Line {
            name: format!("tie-{c}"),
            from: ob - nb + 8,
            to: ob,
            reactance: 0.08,
            capacity: Some(100.0 * MW),
        });
        sc.epn.loads.extend(base.epn.loads.iter().map(|l| NodeSeries { node: l.node + ob, ..l.clone() }));

        let ngn = sc.ngn.as_mut().unwrap();
        ngn.nodes.extend(ngn0.nodes.iter().map(|n| GasNode { name: sfx(&n.name, c), ..n.clone() }));
        ngn.pipes.extend(ngn0.pipes.iter().map(|p| GasPipe {
            name: sfx(&p.name, c),
            from: p.from + og,
            to: p.to + og,
            ..p.clone()
        }));
        ngn.pipes.push(gas_pipe(&format!("tie-{c}"), og - ng, og, 10.0, 0.3, 1.0));
        ngn.loads.extend(ngn0.loads.iter().map(|l| NodeSeries { node: l.node + og, ..l.clone() }));

        let dhn = sc.dhn.as_mut().unwrap();
        dhn.nodes.extend(dhn0.nodes.iter().map(|n| HeatNode { name: sfx(&n.name, c), ..n.clone() }));
        dhn.pipes.extend(dhn0.pipes.iter().map(|p| HeatPipe {
            name: sfx(&p.name, c),
            from: p.from + oh,
            to: p.to + oh,
            ..p.clone()
        }));
        dhn.loads.extend(dhn0.loads.iter().map(|l| NodeSeries { node: l.node + oh, ..l.clone() }));

        let d = &base.devices;
        let dev = &mut sc.devices;
        dev.tpu.extend(d.tpu.iter().map(|x| Tpu { name: sfx(&x.name, c), bus: x.bus + ob, ..x.clone() }));
        dev.ngu.extend(d.ngu.iter().map(|x| Ngu {
            name: sfx(&x.name, c),
            bus: x.bus + ob,
            gas_node: x.gas_node + og,
            ..x.clone()
        }));
        dev.chp.extend(d.chp.iter().map(|x| Chp {
            name: sfx(&x.name, c),
            bus: x.bus + ob,
            heat_node: x.heat_node + oh,
            ..x.clone()
        }));
        dev.wind.extend(d.wind.iter().map(|x| WindTurbine { name: sfx(&x.name, c), bus: x.bus + ob, ..x.clone() }));
        dev.gas_boiler.extend(d.gas_boiler.iter().map(|x| GasBoiler {
            name: sfx(&x.name, c),
            gas_node: x.gas_node + og,
            heat_node: x.heat_node + oh,
            ..x.clone()
        }));
        dev.heat_pump.extend(d.heat_pump.iter().map(|x| HeatPump {
            name: sfx(&x.name, c),
            bus: x.bus + ob,
            heat_node: x.heat_node + oh,
            ..x.clone()
        }));
        dev.gas_well.extend(d.gas_well.iter().map(|x| GasWell { name: sfx(&x.name, c), node: x.node + og, ..x.clone() }));
    }
    sc
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn bundled_cases_validate() {
        for sc in [micro(), small(), cascade(2)] {
            sc.validate().unwrap_or_else(|e| panic!("{}: {e}", sc.name));
        }
    }

    #[test]
    fn heat_flows_conserved_at_inner_nodes() {
        let sc = small();
        let dhn = sc.dhn.unwrap();
        for n in 1..dhn.nodes.len() {
            let inflow: f64 = dhn.pipes.iter().filter(|p| p.to == n).map(|p| p.mass_flow).sum();
            let outflow: f64 = dhn.pipes.iter().filter(|p| p.from == n).map(|p| p.mass_flow).sum();
            if outflow > 0.0 {
                assert!((inflow - outflow).abs() < 1e-12, "node {n}");
            }
        }
    }

    #[test]
    fn cascade_counts_scale() {
        let one = small();
        let three = cascade(3);
        assert_eq!(three.epn.buses.len(), 3 * one.epn.buses.len());
        assert_eq!(three.epn.lines.len(), 3 * one.epn.lines.len() + 2);
        let (g1, g3) = (one.ngn.as_ref().unwrap(), three.ngn.as_ref().unwrap());
        assert_eq!(g3.pipes.len(), 3 * g1.pipes.len() + 2);
        assert_eq!(three.devices.gas_well.len(), 6);
        assert_eq!(three.gas_reference(), Some(0));
    }
}
