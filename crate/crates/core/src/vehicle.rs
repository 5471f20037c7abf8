//! Quarter-car suspension: physical parameters, the force and road-rate
//! transfer functions, the equivalent input disturbance, and time-domain
//! simulation of the two-mass equations of motion.
//!
//! With sprung displacement `z_s`, unsprung displacement `z_us`, road `z_r`
//! and actuator force `F_a` (displacements about static equilibrium):
//!
//! ```text
//! m_s  z_s''  =  F_a + c_s (z_us' - z_s') + k_s (z_us - z_s)
//! m_us z_us'' = -F_a - c_s (z_us' - z_s') - k_s (z_us - z_s)
//!               + c_us (z_r' - z_us') + k_us (z_r - z_us)
//! ```

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::lti::{
    discretize, realize, simulate_mimo, DiscreteStateSpace, Discretization, Polynomial, SignalTrace,
    StateSpace, TransferFunction,
};

/// Discretization used for every sampled simulation in the crate. Signals
/// are treated as piecewise linear between samples, which keeps cascaded
/// blocks consistent with their continuous-time compositions to second
/// order in `dt`.
pub const SIMULATION_HOLD: Discretization = Discretization::Foh;

/// Default sample period, seconds.
pub const DEFAULT_DT: f64 = 1e-3;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct VehicleParams {
    /// Sprung mass, kg.
    pub m_s: f64,
    /// Unsprung mass, kg.
    pub m_us: f64,
    /// Suspension stiffness, N/m.
    pub k_s: f64,
    /// Tire stiffness, N/m.
    pub k_us: f64,
    /// Suspension damping, N s/m.
    pub c_s: f64,
    /// Tire damping, N s/m.
    pub c_us: f64,
}

impl VehicleParams {
    /// Validated parameters: all positive and a Hurwitz force-path
    /// denominator.
    pub fn new(m_s: f64, m_us: f64, k_s: f64, k_us: f64, c_s: f64, c_us: f64) -> Result<Self> {
        let p = VehicleParams {
            m_s,
            m_us,
            k_s,
            k_us,
            c_s,
            c_us,
        };
        p.validate()?;
        Ok(p)
    }

    pub fn validate(&self) -> Result<()> {
        let fields = [
            ("m_s", self.m_s),
            ("m_us", self.m_us),
            ("k_s", self.k_s),
            ("k_us", self.k_us),
            ("c_s", self.c_s),
            ("c_us", self.c_us),
        ];
        for (name, v) in fields {
            if !(v > 0.0) || !v.is_finite() {
                return Err(Error::InvalidParams(format!("{name} must be positive, got {v}")));
            }
        }
        let unstable = characteristic_polynomial(self)
            .roots()
            .iter()
            .any(|r| r.re >= 0.0);
        if unstable {
            return Err(Error::InvalidParams(format!(
                "quarter-car characteristic polynomial is not Hurwitz for {self:?}"
            )));
        }
        Ok(())
    }

    /// Parameter-wise product, `self_x * f_x`.
    pub fn scaled(&self, f: &[f64; 6]) -> VehicleParams {
        VehicleParams {
            m_s: self.m_s * f[0],
            m_us: self.m_us * f[1],
            k_s: self.k_s * f[2],
            k_us: self.k_us * f[3],
            c_s: self.c_s * f[4],
            c_us: self.c_us * f[5],
        }
    }

    pub fn as_array(&self) -> [f64; 6] {
        [self.m_s, self.m_us, self.k_s, self.k_us, self.c_s, self.c_us]
    }
}

/// Baseline PID gains, force per metre of tracking error.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PidGains {
    pub kp: f64,
    pub ki: f64,
    pub kd: f64,
}

impl PidGains {
    pub fn new(kp: f64, ki: f64, kd: f64) -> Result<Self> {
        let g = PidGains { kp, ki, kd };
        g.validate()?;
        Ok(g)
    }

    pub fn validate(&self) -> Result<()> {
        let all = [self.kp, self.ki, self.kd];
        if all.iter().any(|v| !(*v >= 0.0) || !v.is_finite()) {
            return Err(Error::InvalidParams(format!("PID gains must be non-negative: {self:?}")));
        }
        if all.iter().all(|&v| v == 0.0) {
            return Err(Error::InvalidParams("at least one PID gain must be positive".into()));
        }
        Ok(())
    }
}

/// Quartic shared by both plant transfer functions.
pub fn characteristic_polynomial(p: &VehicleParams) -> Polynomial {
    let &VehicleParams {
        m_s,
        m_us,
        k_s,
        k_us,
        c_s,
        c_us,
    } = p;
    Polynomial::new(vec![
        k_s * k_us,
        c_s * k_us + c_us * k_s,
        k_s * m_s + k_s * m_us + k_us * m_s + c_s * c_us,
        c_s * m_s + c_s * m_us + c_us * m_s,
        m_s * m_us,
    ])
}

/// `z_s / F_a`.
pub fn plant_p1(p: &VehicleParams) -> TransferFunction {
    let num = Polynomial::new(vec![p.k_us, p.c_us, p.m_us]);
    TransferFunction::new(num, characteristic_polynomial(p)).expect("Hurwitz quartic denominator")
}

/// `z_s / z_r'`, with a free integrator.
pub fn plant_p2(p: &VehicleParams) -> TransferFunction {
    let num = &Polynomial::new(vec![p.k_s, p.c_s]) * &Polynomial::new(vec![p.k_us, p.c_us]);
    let den = characteristic_polynomial(p).shift(1);
    TransferFunction::new(num, den).expect("nonzero denominator")
}

/// Equivalent input disturbance map `d = δ{z_r}` in simplified biproper form
/// `(k_s + c_s s)(k_us + c_us s) / (m_us s² + c_us s + k_us)`.
pub fn delta(p: &VehicleParams) -> TransferFunction {
    let num = &Polynomial::new(vec![p.k_s, p.c_s]) * &Polynomial::new(vec![p.k_us, p.c_us]);
    let den = Polynomial::new(vec![p.k_us, p.c_us, p.m_us]);
    TransferFunction::new(num, den).expect("nonzero denominator")
}

/// `s · P1⁻¹ · P2` composed literally through the transfer-function algebra.
pub fn delta_literal(p: &VehicleParams) -> Result<TransferFunction> {
    let tf = TransferFunction::s()
        .series(&plant_p1(p).inverse()?)?
        .series(&plant_p2(p))?;
    Ok(tf)
}

/// State `[z_s, z_us, z_s', z_us']`, inputs `[F_a, z_r, z_r']`, full-state
/// output.
pub fn quarter_car_state_space(p: &VehicleParams) -> StateSpace {
    let (ms, mus) = (p.m_s, p.m_us);
    #[rustfmt::skip]
    let a = DMatrix::from_row_slice(4, 4, &[
        0.0, 0.0, 1.0, 0.0,
        0.0, 0.0, 0.0, 1.0,
        -p.k_s / ms, p.k_s / ms, -p.c_s / ms, p.c_s / ms,
        p.k_s / mus, -(p.k_s + p.k_us) / mus, p.c_s / mus, -(p.c_s + p.c_us) / mus,
    ]);
    #[rustfmt::skip]
    let b = DMatrix::from_row_slice(4, 3, &[
        0.0, 0.0, 0.0,
        0.0, 0.0, 0.0,
        1.0 / ms, 0.0, 0.0,
        -1.0 / mus, p.k_us / mus, p.c_us / mus,
    ]);
    StateSpace::new(a, b, DMatrix::identity(4, 4), DMatrix::zeros(4, 3)).expect("consistent dimensions")
}

pub fn quarter_car_discrete(p: &VehicleParams, dt: f64) -> Result<DiscreteStateSpace> {
    Ok(discretize(&quarter_car_state_space(p), dt, SIMULATION_HOLD)?)
}

/// Full state trajectories `[z_s, z_us, z_s', z_us']` from rest.
pub fn simulate_plant_states(
    p: &VehicleParams,
    force: &SignalTrace,
    road: &SignalTrace,
) -> Result<Vec<SignalTrace>> {
    force.check_compatible(road)?;
    let sys = quarter_car_discrete(p, road.dt())?;
    let road_rate = road.derivative();
    let out = simulate_mimo(&sys, &[force, road, &road_rate], None)?;
    let labels = ["z_s", "z_us", "z_s_dot", "z_us_dot"];
    Ok(out.into_iter().zip(labels).map(|(t, l)| t.with_label(l)).collect())
}

/// Sprung and unsprung displacement from rest under actuator force and road
/// input; the road rate is the central difference of the road trace.
pub fn simulate_plant(
    p: &VehicleParams,
    force: &SignalTrace,
    road: &SignalTrace,
) -> Result<(SignalTrace, SignalTrace)> {
    let mut states = simulate_plant_states(p, force, road)?;
    states.truncate(2);
    let z_us = states.pop().expect("two outputs");
    let z_s = states.pop().expect("two outputs");
    Ok((z_s, z_us))
}

/// Realize and discretize a proper transfer function with the crate-wide
/// hold, then run it over `input` from rest.
pub fn filter_trace(tf: &TransferFunction, input: &SignalTrace) -> Result<SignalTrace> {
    let sys = discretize(&realize(tf)?, input.dt(), SIMULATION_HOLD)?;
    Ok(crate::lti::simulate_lti(&sys, input, None)?)
}
