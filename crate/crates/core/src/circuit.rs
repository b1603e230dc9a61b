//! Frequency-domain pipeline models.
//!
//! A gas pipeline linearised around its base velocity and a water pipeline
//! under constant mass flow both obey telegrapher-type equations. Fourier
//! transforming in time turns them into linear ODEs in space whose solution
//! is a two-port transfer matrix `[u(l); i(l)] = [[A, B], [C, D]] [u(0); i(0)]`,
//! where `u` is pressure/temperature and `i` is mass/heat flow in the
//! direction of the pipe. The two-port is then folded into a pi-equivalent
//! circuit for nodal assembly.

use num_complex::Complex64;
use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Standard gravity, m/s².
pub const GRAVITY: f64 = 9.80665;

const ZERO: Complex64 = Complex64 { re: 0.0, im: 0.0 };
const ONE: Complex64 = Complex64 { re: 1.0, im: 0.0 };

#[derive(Debug, Error, Clone, PartialEq)]
pub enum CircuitError {
    #[error("invalid pipe geometry: {0}")]
    InvalidGeometry(String),
    #[error("degenerate two-port: B = 0 (zero-length or static pipe)")]
    DegenerateTwoPort,
    #[error("invalid frequency {0} rad/s")]
    InvalidFrequency(f64),
}

/// Geometry and operating point of a gas pipeline.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GasPipeGeometry {
    /// m
    pub length: f64,
    /// m
    pub diameter: f64,
    /// m²
    pub area: f64,
    /// Darcy friction factor
    pub friction: f64,
    /// rad, positive when the pipe climbs in the flow direction
    pub incline: f64,
    /// m/s
    pub sonic_speed: f64,
    /// Linearisation velocity, m/s
    pub base_velocity: f64,
}

impl GasPipeGeometry {
    /// Builds a geometry, deriving the cross section from the diameter when
    /// `area` is `None`.
    pub fn new(
        length: f64,
        diameter: f64,
        area: Option<f64>,
        friction: f64,
        incline: f64,
        sonic_speed: f64,
        base_velocity: f64,
    ) -> Result<Self, CircuitError> {
        let round = std::f64::consts::PI * diameter * diameter / 4.0;
        let geom = Self {
            length,
            diameter,
            area: area.unwrap_or(round),
            friction,
            incline,
            sonic_speed,
            base_velocity,
        };
        geom.validate()?;
        Ok(geom)
    }

    pub fn validate(&self) -> Result<(), CircuitError> {
        let bad = |msg: &str| Err(CircuitError::InvalidGeometry(msg.to_string()));
        if !(self.length > 0.0) {
            return bad("length must be positive");
        }
        if !(self.diameter > 0.0) {
            return bad("diameter must be positive");
        }
        if !(self.area > 0.0) {
            return bad("cross section must be positive");
        }
        if !(self.friction >= 0.0) {
            return bad("friction factor must be non-negative");
        }
        if !(self.sonic_speed > 0.0) {
            return bad("sonic speed must be positive");
        }
        if !self.incline.is_finite() || !self.base_velocity.is_finite() {
            return bad("incline and base velocity must be finite");
        }
        let round = std::f64::consts::PI * self.diameter * self.diameter / 4.0;
        if (self.area - round).abs() > 0.01 * round {
            return bad("cross section inconsistent with diameter (>1%)");
        }
        Ok(())
    }
}

/// Per-length parameters of the linearised gas pipe equations.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GasDistributedParams {
    /// R′, Pa·s·kg⁻¹·m⁻¹
    pub resistance: f64,
    /// L′, m⁻²
    pub inductance: f64,
    /// C′, kg·Pa⁻¹·m⁻¹
    pub capacitance: f64,
    /// K′, m⁻¹ (pressure-controlled pressure source)
    pub controlled_source: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HeatPipeGeometry {
    /// m
    pub length: f64,
    /// m²
    pub area: f64,
    /// Heat dissipation coefficient μ, W·m⁻¹·K⁻¹
    pub heat_loss: f64,
    /// J·kg⁻¹·K⁻¹
    pub specific_heat: f64,
    /// kg/m³
    pub density: f64,
    /// Water mass flow, kg/s
    pub mass_flow: f64,
}

impl HeatPipeGeometry {
    pub fn validate(&self) -> Result<(), CircuitError> {
        let bad = |msg: &str| Err(CircuitError::InvalidGeometry(msg.to_string()));
        if !(self.length > 0.0) {
            return bad("length must be positive");
        }
        if !(self.area > 0.0) {
            return bad("cross section must be positive");
        }
        if !(self.heat_loss >= 0.0) {
            return bad("heat dissipation must be non-negative");
        }
        if !(self.specific_heat > 0.0) || !(self.density > 0.0) {
            return bad("specific heat and density must be positive");
        }
        if !(self.mass_flow > 0.0) {
            return bad("water mass flow must be positive under quality regulation");
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct HeatDistributedParams {
    pub resistance: f64,
    pub inductance: f64,
    pub conductance: f64,
    pub capacitance: f64,
}

/// Transmission parameters at one angular frequency.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TwoPortParams {
    pub a: Complex64,
    pub b: Complex64,
    pub c: Complex64,
    pub d: Complex64,
    pub omega: f64,
}

impl TwoPortParams {
    pub fn determinant(&self) -> Complex64 {
        self.a * self.d - self.b * self.c
    }

    /// Transfer through `self` followed by `next`.
    pub fn cascade(&self, next: &TwoPortParams) -> TwoPortParams {
        TwoPortParams {
            a: next.a * self.a + next.b * self.c,
            b: next.a * self.b + next.b * self.d,
            c: next.c * self.a + next.d * self.c,
            d: next.c * self.b + next.d * self.d,
            omega: self.omega,
        }
    }

    pub fn apply(&self, potential: Complex64, flow: Complex64) -> (Complex64, Complex64) {
        (
            self.a * potential + self.b * flow,
            self.c * potential + self.d * flow,
        )
    }
}

/// Pi-equivalent: series impedance with a controlled source on the "from"
/// pressure, plus shunt admittances to ground at each end. For heat pipes
/// the controlled source is zero and both shunts are equal.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LumpedPi {
    pub series_impedance: Complex64,
    pub controlled_source: Complex64,
    pub shunt_from: Complex64,
    pub shunt_to: Complex64,
}

impl LumpedPi {
    /// Rebuilds the transmission parameters from the lumped circuit.
    pub fn to_two_port(&self, omega: f64) -> TwoPortParams {
        let b = -self.series_impedance;
        let det = ONE - self.controlled_source;
        let d = ONE - self.shunt_to * b;
        let a = det - self.shunt_from * b;
        let c = (a * d - det) / b;
        TwoPortParams { a, b, c, d, omega }
    }
}

/// `ϕ = e^{−γl}`: ratio of outlet to inlet heat-flow phasor.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct HeatTransmissionFactor(pub Complex64);

pub fn gas_distributed_params(geom: &GasPipeGeometry) -> Result<GasDistributedParams, CircuitError> {
    geom.validate()?;
    let GasPipeGeometry {
        diameter: d,
        area: s,
        friction: lambda,
        incline,
        sonic_speed: cs,
        base_velocity: v,
        ..
    } = *geom;
    let cs2 = cs * cs;
    Ok(GasDistributedParams {
        resistance: lambda * v / (s * d),
        inductance: 1.0 / s,
        capacitance: s / cs2,
        controlled_source: (2.0 * d * GRAVITY * incline.sin() - lambda * v * v) / (2.0 * d * cs2),
    })
}

pub fn heat_distributed_params(geom: &HeatPipeGeometry) -> Result<HeatDistributedParams, CircuitError> {
    geom.validate()?;
    let HeatPipeGeometry {
        area: s,
        heat_loss: mu,
        specific_heat: cp,
        density: rho,
        mass_flow: m,
        ..
    } = *geom;
    Ok(HeatDistributedParams {
        resistance: mu / (cp * cp * m * m),
        inductance: rho * s / (cp * m * m),
        conductance: mu,
        capacitance: cp * rho * s,
    })
}

/// `sinh(x)/x`, accurate near zero.
fn sinhc(x: Complex64) -> Complex64 {
    if x.norm() < 1e-3 {
        let x2 = x * x;
        ONE + x2 / 6.0 + x2 * x2 / 120.0
    } else {
        x.sinh() / x
    }
}

fn check_args(omega: f64, length: f64) -> Result<(), CircuitError> {
    if !(omega >= 0.0) || !omega.is_finite() {
        return Err(CircuitError::InvalidFrequency(omega));
    }
    if !(length > 0.0) {
        return Err(CircuitError::InvalidGeometry("length must be positive".into()));
    }
    Ok(())
}

/// Gas two-port at angular frequency `omega` for a pipe of `length`.
///
/// Evaluated as the closed-form exponential of the 2×2 ODE system
/// `d/dx [p; m] = [[−K′, −z], [−y, 0]] [p; m]` with `z = R′ + jωL′` and
/// `y = jωC′`. The `sinh(s l/2)/s` factor is evaluated through `sinhc`, so
/// the static case (`ω = 0`, where `γ = 0` and `Z_c` is unbounded) falls
/// out of the same expression as the exact steady-state solution.
pub fn gas_two_port(
    dist: &GasDistributedParams,
    omega: f64,
    length: f64,
) -> Result<TwoPortParams, CircuitError> {
    check_args(omega, length)?;
    let j = Complex64::new(0.0, 1.0);
    let z = dist.resistance + j * omega * dist.inductance;
    let y = j * omega * dist.capacitance;
    let k = dist.controlled_source;
    let s = (Complex64::from(k * k) + 4.0 * z * y).sqrt();
    let half = s * (length / 2.0);
    // e^{−K′l/2} cosh(sl/2) from the two exponentials directly so the
    // attenuation factor is folded in before anything can overflow.
    let decay = -k * length / 2.0;
    let ch = ((half + decay).exp() + (-half + decay).exp()) * 0.5;
    // e^{−K′l/2} · 2 sinh(sl/2) / s = e^{−K′l/2} · l · sinhc(sl/2)
    let shs = sinhc(half) * (length * decay.exp());
    Ok(TwoPortParams {
        a: ch - shs * (k / 2.0),
        b: -z * shs,
        c: -y * shs,
        d: ch + shs * (k / 2.0),
        omega,
    })
}

/// Propagation constant and characteristic impedance of a gas pipe.
pub fn gas_propagation(dist: &GasDistributedParams, omega: f64) -> (Complex64, Complex64) {
    let j = Complex64::new(0.0, 1.0);
    let z = dist.resistance + j * omega * dist.inductance;
    let y = j * omega * dist.capacitance;
    let gamma = (z * y).sqrt();
    let zc = if y.norm() == 0.0 {
        Complex64::new(f64::INFINITY, 0.0)
    } else {
        (z / y).sqrt()
    };
    (gamma, zc)
}

pub fn gas_lumped(tp: &TwoPortParams) -> Result<LumpedPi, CircuitError> {
    if tp.b.norm() == 0.0 || !tp.b.is_finite() {
        return Err(CircuitError::DegenerateTwoPort);
    }
    let det = tp.determinant();
    Ok(LumpedPi {
        series_impedance: -tp.b,
        controlled_source: ONE - det,
        shunt_from: (det - tp.a) / tp.b,
        shunt_to: (ONE - tp.d) / tp.b,
    })
}

/// `(γ_h, Z_c,h)` of a heat pipe. The characteristic impedance uses the
/// lossless limit `√(L′/C′)` when the shunt branch vanishes.
pub fn heat_propagation(dist: &HeatDistributedParams, omega: f64) -> (Complex64, Complex64) {
    let j = Complex64::new(0.0, 1.0);
    let z = dist.resistance + j * omega * dist.inductance;
    let y = dist.conductance + j * omega * dist.capacitance;
    let gamma = (z * y).sqrt();
    let zc = if y.norm() == 0.0 {
        Complex64::from((dist.inductance / dist.capacitance).sqrt())
    } else {
        (z / y).sqrt()
    };
    (gamma, zc)
}

/// Heat two-port (reciprocal, `A = D`, `AD − BC = 1`).
///
/// `B` and `C` are written as `−z·l·sinhc(γl)` and `−y·l·sinhc(γl)`, which
/// equal `−Z_c sinh(γl)` and `−sinh(γl)/Z_c` but stay finite when
/// `Z_c` degenerates.
pub fn heat_two_port(
    dist: &HeatDistributedParams,
    omega: f64,
    length: f64,
) -> Result<TwoPortParams, CircuitError> {
    check_args(omega, length)?;
    let j = Complex64::new(0.0, 1.0);
    let z = dist.resistance + j * omega * dist.inductance;
    let y = dist.conductance + j * omega * dist.capacitance;
    let gl = (z * y).sqrt() * length;
    let ch = gl.cosh();
    let shc = sinhc(gl) * length;
    Ok(TwoPortParams {
        a: ch,
        b: -z * shc,
        c: -y * shc,
        d: ch,
        omega,
    })
}

pub fn heat_transmission_factor(
    dist: &HeatDistributedParams,
    omega: f64,
    length: f64,
) -> Result<HeatTransmissionFactor, CircuitError> {
    check_args(omega, length)?;
    let (gamma, _) = heat_propagation(dist, omega);
    Ok(HeatTransmissionFactor((-gamma * length).exp()))
}

pub fn heat_lumped(tp: &TwoPortParams) -> Result<LumpedPi, CircuitError> {
    if tp.b.norm() == 0.0 || !tp.b.is_finite() {
        return Err(CircuitError::DegenerateTwoPort);
    }
    let y = (ONE - tp.a) / tp.b;
    Ok(LumpedPi {
        series_impedance: -tp.b,
        controlled_source: ZERO,
        shunt_from: y,
        shunt_to: y,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    fn rel(a: Complex64, b: Complex64) -> f64 {
        (a - b).norm() / b.norm().max(1e-300)
    }

    /// Independent oracle: exp(M l) for M = [[m00, m01], [m10, m11]] via
    /// scaling and squaring of a Taylor series.
    fn expm2(m: [[Complex64; 2]; 2], l: f64) -> [[Complex64; 2]; 2] {
        let norm = m.iter().flatten().map(|c| c.norm()).fold(0.0, f64::max) * l;
        let squarings = (norm.max(1e-300).log2().ceil() as i32 + 4).max(0) as u32;
        let scale = l / 2f64.powi(squarings as i32);
        let a = [
            [m[0][0] * scale, m[0][1] * scale],
            [m[1][0] * scale, m[1][1] * scale],
        ];
        let mul = |x: [[Complex64; 2]; 2], y: [[Complex64; 2]; 2]| {
            let mut r = [[ZERO; 2]; 2];
            for i in 0..2 {
                for j in 0..2 {
                    r[i][j] = x[i][0] * y[0][j] + x[i][1] * y[1][j];
                }
            }
            r
        };
        let mut sum = [[ONE, ZERO], [ZERO, ONE]];
        let mut term = sum;
        for n in 1..30 {
            term = mul(term, a);
            for row in term.iter_mut() {
                for v in row.iter_mut() {
                    *v /= n as f64;
                }
            }
            for i in 0..2 {
                for j in 0..2 {
                    sum[i][j] += term[i][j];
                }
            }
        }
        for _ in 0..squarings {
            sum = mul(sum, sum);
        }
        sum
    }

    fn sample_gas() -> GasPipeGeometry {
        GasPipeGeometry::new(12_000.0, 0.5, Some(0.19635), 0.01, 0.0, 340.0, 5.0).unwrap()
    }

    #[test]
    fn gas_params_reference_values() {
        let p = gas_distributed_params(&sample_gas()).unwrap();
        assert_relative_eq!(p.resistance, 0.50930, max_relative = 1e-4);
        assert_relative_eq!(p.inductance, 5.0930, max_relative = 1e-4);
        assert_relative_eq!(p.capacitance, 1.6985e-6, max_relative = 1e-4);
        assert_relative_eq!(p.controlled_source, -2.1626e-6, max_relative = 1e-4);
    }

    #[test]
    fn gas_resistance_matches_linearised_friction() {
        // Friction pressure gradient λρv²/(2D) linearised at v̄, with
        // ρ = p/c², v = m/(ρS): the part proportional to m is λv̄·m/(S·D).
        let g = sample_gas();
        let p = gas_distributed_params(&g).unwrap();
        let rho = 40.0;
        let v = 4.0;
        let m = rho * v * g.area;
        let linear_drop = g.friction * rho * (2.0 * g.base_velocity * v) / (2.0 * g.diameter);
        assert_relative_eq!(p.resistance * m, linear_drop, max_relative = 1e-12);
    }

    #[test]
    fn gas_params_static_and_flat() {
        let mut g = sample_gas();
        g.base_velocity = 0.0;
        g.incline = 0.3;
        let p = gas_distributed_params(&g).unwrap();
        assert_eq!(p.resistance, 0.0);
        assert_relative_eq!(p.controlled_source, GRAVITY * 0.3f64.sin() / (340.0 * 340.0), max_relative = 1e-12);

        let mut g = sample_gas();
        g.friction = 0.0;
        let p = gas_distributed_params(&g).unwrap();
        assert_eq!(p.controlled_source, 0.0);
    }

    #[test]
    fn gas_geometry_rejects_bad_input() {
        assert!(GasPipeGeometry::new(1.0, 0.0, None, 0.01, 0.0, 340.0, 1.0).is_err());
        assert!(GasPipeGeometry::new(1.0, 0.5, Some(0.3), 0.01, 0.0, 340.0, 1.0).is_err());
        assert!(GasPipeGeometry::new(-1.0, 0.5, None, 0.01, 0.0, 340.0, 1.0).is_err());
        let g = GasPipeGeometry::new(1.0, 0.5, None, 0.01, 0.0, 340.0, 1.0).unwrap();
        assert_relative_eq!(g.area, 0.19634954, max_relative = 1e-7);
    }

    #[test]
    fn gas_two_port_matches_matrix_exponential() {
        let mut g = sample_gas();
        g.incline = 0.02;
        let p = gas_distributed_params(&g).unwrap();
        for &omega in &[0.0, 1e-5, 7.3e-5, 3.5e-3, 0.05] {
            let tp = gas_two_port(&p, omega, g.length).unwrap();
            let j = Complex64::new(0.0, 1.0);
            let z = p.resistance + j * omega * p.inductance;
            let y = j * omega * p.capacitance;
            let m = [[Complex64::from(-p.controlled_source), -z], [-y, ZERO]];
            let e = expm2(m, g.length);
            assert!(rel(tp.a, e[0][0]) < 1e-9, "A at ω={omega}");
            assert!(rel(tp.b, e[0][1]) < 1e-9, "B at ω={omega}");
            if omega > 0.0 {
                assert!(rel(tp.c, e[1][0]) < 1e-9, "C at ω={omega}");
            }
            assert!(rel(tp.d, e[1][1]) < 1e-9, "D at ω={omega}");
        }
    }

    #[test]
    fn gas_two_port_reciprocal_form_without_source() {
        let mut g = sample_gas();
        g.friction = 0.0;
        g.base_velocity = 0.0;
        let mut p = gas_distributed_params(&g).unwrap();
        p.resistance = 0.4;
        let omega = 2e-3;
        let tp = gas_two_port(&p, omega, g.length).unwrap();
        let (gamma, zc) = gas_propagation(&p, omega);
        let gl = gamma * g.length;
        assert!(rel(tp.a, gl.cosh()) < 1e-10);
        assert!(rel(tp.b, -zc * gl.sinh()) < 1e-10);
        assert!(rel(tp.c, -gl.sinh() / zc) < 1e-10);
        assert!(rel(tp.d, tp.a) < 1e-12);
    }

    #[test]
    fn gas_two_port_static_limit() {
        let mut g = sample_gas();
        g.friction = 0.0;
        let mut p = gas_distributed_params(&g).unwrap();
        p.resistance = 0.7;
        let tp = gas_two_port(&p, 0.0, 1000.0).unwrap();
        assert_eq!(tp.a, ONE);
        assert_eq!(tp.d, ONE);
        assert_eq!(tp.c, ZERO);
        assert_relative_eq!(tp.b.re, -700.0, max_relative = 1e-14);

        // steady ODE with K′ ≠ 0: p(l) = e^{−K′l} p0 − R′ m (1 − e^{−K′l}) / K′
        let p = gas_distributed_params(&sample_gas()).unwrap();
        let l = 12_000.0;
        let tp = gas_two_port(&p, 0.0, l).unwrap();
        let k = p.controlled_source;
        assert_relative_eq!(tp.a.re, (-k * l).exp(), max_relative = 1e-12);
        assert_relative_eq!(tp.b.re, -p.resistance * (1.0 - (-k * l).exp()) / k, max_relative = 1e-9);
        assert_relative_eq!(tp.d.re, 1.0, max_relative = 1e-12);
    }

    #[test]
    fn gas_two_port_continuous_at_zero_frequency() {
        let p = gas_distributed_params(&sample_gas()).unwrap();
        let a = gas_two_port(&p, 0.0, 12_000.0).unwrap();
        let b = gas_two_port(&p, 1e-9, 12_000.0).unwrap();
        for (x, y) in [(a.a, b.a), (a.b, b.b), (a.d, b.d)] {
            assert!(rel(y, x) < 1e-6);
        }
        assert!(b.c.norm() < 1e-6);
    }

    #[test]
    fn gas_lumped_cases() {
        let mut p = gas_distributed_params(&sample_gas()).unwrap();
        p.controlled_source = 0.0;
        let tp = gas_two_port(&p, 0.0, 1000.0).unwrap();
        let pi = gas_lumped(&tp).unwrap();
        assert_relative_eq!(pi.series_impedance.re, p.resistance * 1000.0, max_relative = 1e-12);
        assert_eq!(pi.controlled_source.norm(), 0.0);
        assert_eq!(pi.shunt_from.norm(), 0.0);
        assert_eq!(pi.shunt_to.norm(), 0.0);

        let tp = gas_two_port(&p, 1e-3, 1000.0).unwrap();
        assert!(gas_lumped(&tp).unwrap().controlled_source.norm() < 1e-12);
    }

    #[test]
    fn lumped_rejects_zero_b() {
        let tp = TwoPortParams { a: ONE, b: ZERO, c: ZERO, d: ONE, omega: 0.0 };
        assert_eq!(gas_lumped(&tp), Err(CircuitError::DegenerateTwoPort));
        assert_eq!(heat_lumped(&tp), Err(CircuitError::DegenerateTwoPort));
    }

    fn sample_heat() -> HeatPipeGeometry {
        HeatPipeGeometry {
            length: 1500.0,
            area: 0.05,
            heat_loss: 1.0,
            specific_heat: 4200.0,
            density: 1000.0,
            mass_flow: 10.0,
        }
    }

    #[test]
    fn heat_params_reference_values() {
        let p = heat_distributed_params(&sample_heat()).unwrap();
        assert_relative_eq!(p.resistance, 5.6689e-10, max_relative = 1e-4);
        assert_relative_eq!(p.inductance, 1.1905e-4, max_relative = 1e-4);
        assert_eq!(p.conductance, 1.0);
        assert_relative_eq!(p.capacitance, 2.1e5, max_relative = 1e-12);
        let rho_s_m = 1000.0 * 0.05 / 10.0;
        assert_relative_eq!(p.inductance * p.capacitance, rho_s_m * rho_s_m, max_relative = 1e-12);

        let mut g = sample_heat();
        g.heat_loss = 0.0;
        let p = heat_distributed_params(&g).unwrap();
        assert_eq!(p.resistance, 0.0);
        assert_eq!(p.conductance, 0.0);

        g.mass_flow = 0.0;
        assert!(heat_distributed_params(&g).is_err());
    }

    #[test]
    fn heat_two_port_lossless_is_delay() {
        let mut g = sample_heat();
        g.heat_loss = 0.0;
        let p = heat_distributed_params(&g).unwrap();
        let omega = 2e-4;
        let tp = heat_two_port(&p, omega, g.length).unwrap();
        let delay = omega * g.density * g.area * g.length / g.mass_flow;
        assert_relative_eq!(tp.a.re, delay.cos(), epsilon = 1e-12);
        assert!(tp.a.im.abs() < 1e-12);

        let (gamma, _) = heat_propagation(&p, omega);
        assert_relative_eq!(gamma.im, omega * g.density * g.area / g.mass_flow, max_relative = 1e-12);
    }

    #[test]
    fn heat_static_propagation_is_real() {
        let g = sample_heat();
        let p = heat_distributed_params(&g).unwrap();
        let (gamma, _) = heat_propagation(&p, 0.0);
        assert_relative_eq!(gamma.re, g.heat_loss / (g.specific_heat * g.mass_flow), max_relative = 1e-12);
        assert_eq!(gamma.im, 0.0);
    }

    #[test]
    fn heat_zc_degenerate_limit() {
        let mut g = sample_heat();
        g.heat_loss = 0.0;
        let p = heat_distributed_params(&g).unwrap();
        let (_, zc) = heat_propagation(&p, 0.0);
        assert_relative_eq!(zc.re, 1.0 / (g.specific_heat * g.mass_flow), max_relative = 1e-12);
        let tp = heat_two_port(&p, 0.0, g.length).unwrap();
        assert_eq!(tp.a, ONE);
        assert_eq!(tp.b, ZERO);
    }

    #[test]
    fn transmission_factor_cases() {
        let g = sample_heat();
        let p = heat_distributed_params(&g).unwrap();
        let phi = heat_transmission_factor(&p, 0.0, g.length).unwrap().0;
        assert_relative_eq!(phi.re, (-g.heat_loss * g.length / (g.specific_heat * g.mass_flow)).exp(), max_relative = 1e-12);
        assert_eq!(phi.im, 0.0);
        assert!(phi.re > 0.0 && phi.re <= 1.0);

        let mut lossless = g.clone();
        lossless.heat_loss = 0.0;
        let p0 = heat_distributed_params(&lossless).unwrap();
        let omega = 1e-4;
        let phi = heat_transmission_factor(&p0, omega, g.length).unwrap().0;
        assert_relative_eq!(phi.norm(), 1.0, epsilon = 1e-14);
        let want = -omega * g.density * g.area * g.length / g.mass_flow;
        let diff = (phi.arg() - want).rem_euclid(2.0 * std::f64::consts::PI);
        assert!(diff < 1e-10 || (2.0 * std::f64::consts::PI - diff) < 1e-10);

        let phi = heat_transmission_factor(&p, 1e-3, 1e-12).unwrap().0;
        assert!((phi - ONE).norm() < 1e-12);
    }

    #[test]
    fn heat_lumped_short_pipe() {
        let mut g = sample_heat();
        g.heat_loss = 0.0;
        let p = heat_distributed_params(&g).unwrap();
        let omega = 1e-4;
        let l = 0.01;
        let tp = heat_two_port(&p, omega, l).unwrap();
        let pi = heat_lumped(&tp).unwrap();
        let j = Complex64::new(0.0, 1.0);
        let z = (p.resistance + j * omega * p.inductance) * l;
        let y = (p.conductance + j * omega * p.capacitance) * l / 2.0;
        assert!(rel(pi.series_impedance, z) < 1e-6);
        assert!(rel(pi.shunt_from, y) < 1e-6);
        assert_eq!(pi.shunt_from, pi.shunt_to);
    }

    #[test]
    fn enthalpy_substitution_matches_factor() {
        let g = sample_heat();
        let p = heat_distributed_params(&g).unwrap();
        let omega = 3e-4;
        let tp = heat_two_port(&p, omega, g.length).unwrap();
        let phi = heat_transmission_factor(&p, omega, g.length).unwrap().0;
        let cpm = g.specific_heat * g.mass_flow;
        let t0 = Complex64::new(1.3, -0.4);
        let h0 = t0 * cpm;
        let (tl, hl) = tp.apply(t0, h0);
        assert!(rel(tl * cpm, phi * h0) < 1e-9);
        assert!(rel(hl, phi * h0) < 1e-9);
    }

    #[test]
    fn pi_round_trip() {
        let p = gas_distributed_params(&sample_gas()).unwrap();
        let tp = gas_two_port(&p, 2e-3, 12_000.0).unwrap();
        let back = gas_lumped(&tp).unwrap().to_two_port(tp.omega);
        for (x, y) in [(back.a, tp.a), (back.b, tp.b), (back.c, tp.c), (back.d, tp.d)] {
            assert!(rel(x, y) < 1e-9);
        }
        let h = heat_distributed_params(&sample_heat()).unwrap();
        let tp = heat_two_port(&h, 2e-3, 1500.0).unwrap();
        let back = heat_lumped(&tp).unwrap().to_two_port(tp.omega);
        for (x, y) in [(back.a, tp.a), (back.b, tp.b), (back.c, tp.c), (back.d, tp.d)] {
            assert!(rel(x, y) < 1e-9);
        }
    }

    mod props {
        use super::*;
        use proptest::prelude::*;

        prop_compose! {
            fn gas_case()(
                l in 100.0f64..50_000.0,
                d in 0.2f64..1.2,
                lambda in 0.0f64..0.02,
                alpha in -0.2f64..0.2,
                cs in 250.0f64..450.0,
                v in 0.0f64..10.0,
                omega in 0.0f64..3.5e-3,
            ) -> (GasPipeGeometry, f64) {
                (GasPipeGeometry::new(l, d, None, lambda, alpha, cs, v).unwrap(), omega)
            }
        }

        proptest! {
            #[test]
            fn gas_determinant(case in gas_case()) {
                let (g, omega) = case;
                let p = gas_distributed_params(&g).unwrap();
                let tp = gas_two_port(&p, omega, g.length).unwrap();
                let want = Complex64::from((-p.controlled_source * g.length).exp());
                prop_assert!(rel(tp.determinant(), want) < 1e-9);
            }

            #[test]
            fn gas_segment_composition(case in gas_case()) {
                let (g, omega) = case;
                let p = gas_distributed_params(&g).unwrap();
                let whole = gas_two_port(&p, omega, g.length).unwrap();
                let half = gas_two_port(&p, omega, g.length / 2.0).unwrap();
                let joined = half.cascade(&half);
                let scale = whole.a.norm().max(whole.d.norm());
                prop_assert!((joined.a - whole.a).norm() < 1e-9 * scale);
                prop_assert!((joined.d - whole.d).norm() < 1e-9 * scale);
                prop_assert!((joined.b - whole.b).norm() < 1e-9 * whole.b.norm().max(1e-300));
                prop_assert!((joined.c - whole.c).norm() <= 1e-9 * whole.c.norm().max(1e-300) + 1e-300);
            }

            #[test]
            fn heat_reciprocity(
                l in 10.0f64..8000.0,
                s in 0.005f64..1.0,
                mu in 0.0f64..5.0,
                m in 1.0f64..400.0,
                omega in 0.0f64..0.01,
            ) {
                let g = HeatPipeGeometry { length: l, area: s, heat_loss: mu, specific_heat: 4182.0, density: 985.0, mass_flow: m };
                let p = heat_distributed_params(&g).unwrap();
                let tp = heat_two_port(&p, omega, l).unwrap();
                prop_assert!(rel(tp.determinant(), ONE) < 1e-9);
                prop_assert_eq!(tp.a, tp.d);
                let phi = heat_transmission_factor(&p, omega, l).unwrap().0;
                prop_assert!(phi.norm() <= 1.0 + 1e-15);
            }
        }
    }
}
