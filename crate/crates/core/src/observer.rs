//! Per-vehicle closed loop: PID baseline controller, Q-filter disturbance
//! observer and disturbance compensation, with the closed-loop maps used by
//! the learning filters.
//!
//! The command sent to the actuator is `w = C{e} - d̂′ - d_f` with
//! `e = -z_s`. The observer estimate is `d̂′ = M{z_s} - Q{w}` with
//! `M = Q P̂⁻¹` built from the nominal force-path plant. From the road-side
//! disturbance `d` and learning signal `d_f` the loop gives
//!
//! ```text
//! e   = -(G_d d + G_f d_f)
//! e_d = d - d̂ = (1 - Ω) d - d_f
//! G_d = P(1 - Q) / (1 - Q + P(M + C))
//! G_f = -P / (1 - Q + P(M + C))
//! Ω   = (M + Q C) P / (1 - Q + P(M + C))
//! ```

use std::io::Write;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::lti::{
    discretize, realize, simulate_inverse, LtiError, LtiStepper, Polynomial, SignalTrace, TransferFunction,
};
use crate::vehicle::{self, delta, plant_p1, quarter_car_discrete, PidGains, VehicleParams};

/// Magnitude beyond which a loop signal is treated as divergent.
pub const DIVERGENCE_THRESHOLD: f64 = 1e6;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct QFilterSpec {
    /// Corner frequency, rad/s.
    pub cutoff: f64,
    pub order: usize,
}

impl Default for QFilterSpec {
    fn default() -> Self {
        QFilterSpec {
            cutoff: DEFAULT_Q_CUTOFF,
            order: 2,
        }
    }
}

/// Default observer bandwidth, rad/s.
pub const DEFAULT_Q_CUTOFF: f64 = 8.0;

/// Default corner of the PID derivative low-pass, rad/s.
pub const DEFAULT_DERIVATIVE_POLE: f64 = 80.0;

impl QFilterSpec {
    pub fn validate(&self) -> Result<()> {
        if !(self.cutoff > 0.0) || !self.cutoff.is_finite() {
            return Err(Error::InvalidParams(format!("Q cutoff must be positive, got {}", self.cutoff)));
        }
        if self.order < 2 {
            return Err(Error::InvalidParams(format!(
                "Q order must be at least 2 so that Q/P is proper, got {}",
                self.order
            )));
        }
        Ok(())
    }
}

/// `Q(s) = 1 / (s/cutoff + 1)^order`.
pub fn make_q(spec: &QFilterSpec) -> Result<TransferFunction> {
    spec.validate()?;
    let tau = 1.0 / spec.cutoff;
    let base = Polynomial::new(vec![1.0, tau]);
    let den = (0..spec.order).fold(Polynomial::one(), |acc, _| &acc * &base);
    Ok(TransferFunction::new(Polynomial::one(), den)?)
}

/// Approximate plant inverse `M = Q P̂⁻¹`.
pub fn make_m(nominal_p1: &TransferFunction, q: &TransferFunction) -> Result<TransferFunction> {
    let m = q.series(&nominal_p1.inverse()?)?;
    if !m.is_proper() {
        return Err(Error::ImproperComposition {
            relative_degree: m.relative_degree(),
        });
    }
    Ok(m)
}

/// `C(s) = kp + ki/s + kd·s·p/(s + p)`, with the derivative rolled off at
/// `p` rad/s.
pub fn make_pid(gains: &PidGains, derivative_pole: f64) -> Result<TransferFunction> {
    gains.validate()?;
    if !(derivative_pole > 0.0) || !derivative_pole.is_finite() {
        return Err(Error::InvalidParams(format!(
            "derivative pole must be positive, got {derivative_pole}"
        )));
    }
    let p = derivative_pole;
    let PidGains { kp, ki, kd } = *gains;
    let num = Polynomial::new(vec![ki * p, kp * p + ki, kp + kd * p]);
    let den = Polynomial::new(vec![0.0, p, 1.0]);
    Ok(TransferFunction::new(num, den)?)
}

/// Transfer-function blocks of one loop.
#[derive(Clone, Debug)]
pub struct LoopBlocks {
    pub p: TransferFunction,
    pub m: TransferFunction,
    pub q: TransferFunction,
    pub c: TransferFunction,
}

impl LoopBlocks {
    /// `1 - Q + P(M + C)`.
    fn return_difference(&self) -> Result<TransferFunction> {
        let pmc = self.p.series(&self.m.parallel(&self.c)?)?;
        Ok(self.q.one_minus()?.parallel(&pmc)?)
    }

    pub fn gd(&self) -> Result<TransferFunction> {
        let rd = self.return_difference()?;
        Ok(rd.inverse()?.series(&self.p.series(&self.q.one_minus()?)?)?)
    }

    pub fn gf(&self) -> Result<TransferFunction> {
        let rd = self.return_difference()?;
        Ok(rd.inverse()?.series(&self.p.neg())?)
    }

    pub fn omega(&self) -> Result<TransferFunction> {
        let rd = self.return_difference()?;
        let mqc = self.m.parallel(&self.q.series(&self.c)?)?;
        Ok(rd.inverse()?.series(&mqc.series(&self.p)?)?)
    }

    /// Characteristic polynomial of the interconnection of the four blocks,
    /// `Dp Dm Dq Dc (1 - Q + P(M + C))`, formed without cancellation.
    pub fn characteristic_polynomial(&self) -> Polynomial {
        let (np, dp) = (self.p.num(), self.p.den());
        let (nm, dm) = (self.m.num(), self.m.den());
        let (nq, dq) = (self.q.num(), self.q.den());
        let (nc, dc) = (self.c.num(), self.c.den());
        let lhs = &(&(dq - nq) * dp) * &(dm * dc);
        let rhs = &(np * dq) * &(&(nm * dc) + &(nc * dm));
        &lhs + &rhs
    }
}

/// The part of a loop known to the learning scheme: nominal vehicle and
/// controller design, without the actual plant.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LoopDesign {
    pub nominal: VehicleParams,
    pub pid: PidGains,
    pub q: QFilterSpec,
    pub derivative_pole: f64,
}

impl LoopDesign {
    /// Blocks with the nominal plant in the loop and the observer active.
    pub fn blocks(&self) -> Result<LoopBlocks> {
        let q = make_q(&self.q)?;
        let p = plant_p1(&self.nominal);
        Ok(LoopBlocks {
            m: make_m(&p, &q)?,
            p,
            q,
            c: make_pid(&self.pid, self.derivative_pole)?,
        })
    }
}

/// One vehicle's closed loop.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AgentLoop {
    pub actual: VehicleParams,
    pub nominal: VehicleParams,
    pub pid: PidGains,
    pub q: QFilterSpec,
    pub dt: f64,
    pub derivative_pole: f64,
    pub dob_enabled: bool,
}

impl AgentLoop {
    /// Loop with default derivative pole and the observer active; checks
    /// closed-loop stability of the actual plant under the nominal design.
    pub fn new(actual: VehicleParams, nominal: VehicleParams, pid: PidGains, q: QFilterSpec, dt: f64) -> Result<Self> {
        AgentLoop {
            actual,
            nominal,
            pid,
            q,
            dt,
            derivative_pole: DEFAULT_DERIVATIVE_POLE,
            dob_enabled: true,
        }
        .validated()
    }

    pub fn with_derivative_pole(mut self, pole: f64) -> Result<Self> {
        self.derivative_pole = pole;
        self.validated()
    }

    pub fn with_dob(mut self, enabled: bool) -> Result<Self> {
        self.dob_enabled = enabled;
        self.validated()
    }

    fn validated(self) -> Result<Self> {
        self.actual.validate()?;
        self.nominal.validate()?;
        self.q.validate()?;
        if !(self.dt > 0.0) || !self.dt.is_finite() {
            return Err(Error::InvalidParams(format!("dt must be positive, got {}", self.dt)));
        }
        let blocks = self.blocks(false)?;
        let unstable: Vec<_> = blocks
            .characteristic_polynomial()
            .roots()
            .into_iter()
            .filter(|r| r.re >= 0.0)
            .collect();
        if !unstable.is_empty() {
            return Err(Error::UnstableDesign(format!(
                "closed-loop poles {unstable:?} are not in the open left half-plane"
            )));
        }
        Ok(self)
    }

    pub fn design(&self) -> LoopDesign {
        LoopDesign {
            nominal: self.nominal,
            pid: self.pid,
            q: self.q,
            derivative_pole: self.derivative_pole,
        }
    }

    pub fn q_filter(&self) -> Result<TransferFunction> {
        make_q(&self.q)
    }

    pub fn controller(&self) -> Result<TransferFunction> {
        make_pid(&self.pid, self.derivative_pole)
    }

    /// Observer plant inverse, always from the nominal model.
    pub fn m_filter(&self) -> Result<TransferFunction> {
        make_m(&plant_p1(&self.nominal), &self.q_filter()?)
    }

    /// Blocks with either the nominal or the actual plant in the loop. With
    /// the observer disabled, `M` and `Q` are zero.
    pub fn blocks(&self, use_nominal: bool) -> Result<LoopBlocks> {
        let p = plant_p1(if use_nominal { &self.nominal } else { &self.actual });
        let (m, q) = if self.dob_enabled {
            (self.m_filter()?, self.q_filter()?)
        } else {
            (TransferFunction::zero(), TransferFunction::zero())
        };
        Ok(LoopBlocks {
            p,
            m,
            q,
            c: self.controller()?,
        })
    }
}

pub fn synth_gd(lp: &AgentLoop, use_nominal: bool) -> Result<TransferFunction> {
    lp.blocks(use_nominal)?.gd()
}

pub fn synth_gf(lp: &AgentLoop, use_nominal: bool) -> Result<TransferFunction> {
    lp.blocks(use_nominal)?.gf()
}

pub fn synth_omega(lp: &AgentLoop, use_nominal: bool) -> Result<TransferFunction> {
    lp.blocks(use_nominal)?.omega()
}

/// Time histories of one closed-loop run.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AgentLog {
    pub z_r: SignalTrace,
    pub z_s: SignalTrace,
    pub z_us: SignalTrace,
    pub e: SignalTrace,
    /// Road-side equivalent disturbance through the actual vehicle.
    pub d: SignalTrace,
    pub d_hat_prime: SignalTrace,
    pub d_f: SignalTrace,
    pub d_hat: SignalTrace,
    pub z_r_hat: SignalTrace,
    pub f_a: SignalTrace,
}

impl AgentLog {
    pub fn dt(&self) -> f64 {
        self.z_r.dt()
    }

    /// Disturbance estimation error `d - d̂`.
    pub fn e_d(&self) -> SignalTrace {
        self.d.sub(&self.d_hat).expect("log traces share shape").with_label("e_d")
    }

    pub const CSV_HEADER: &'static str = "t,z_r,z_s,d,d_hat_prime,d_f,d_hat,z_r_hat,F_a";

    pub fn write_csv<W: Write>(&self, w: W) -> std::io::Result<()> {
        let mut out = csv::Writer::from_writer(w);
        out.write_record(Self::CSV_HEADER.split(','))?;
        let cols = [
            &self.z_r,
            &self.z_s,
            &self.d,
            &self.d_hat_prime,
            &self.d_f,
            &self.d_hat,
            &self.z_r_hat,
            &self.f_a,
        ];
        for (k, t) in self.z_r.times().enumerate() {
            let mut row = Vec::with_capacity(cols.len() + 1);
            row.push(t.to_string());
            row.extend(cols.iter().map(|c| c.samples()[k].to_string()));
            out.write_record(&row)?;
        }
        out.flush()
    }

    pub fn write_csv_file(&self, path: &Path) -> Result<()> {
        let f = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
        self.write_csv(std::io::BufWriter::new(f)).map_err(|e| Error::io(path, e))
    }
}

fn siso_stepper(tf: &TransferFunction, dt: f64) -> Result<LtiStepper> {
    Ok(discretize(&realize(tf)?, dt, vehicle::SIMULATION_HOLD)?.stepper())
}

/// Simulate the closed loop over `road` with the learning signal `d_f`
/// injected at the command.
///
/// Every block is discretized with a first-order hold, so each has direct
/// feedthrough. The loop equation for the current command sample is linear
/// and is solved exactly at each step.
pub fn run_agent(lp: &AgentLoop, road: &SignalTrace, d_f: &SignalTrace) -> Result<AgentLog> {
    road.check_compatible(d_f)?;
    if !crate::lti::dt_matches(road.dt(), lp.dt) {
        return Err(LtiError::DimensionMismatch(format!(
            "road dt {} does not match loop dt {}",
            road.dt(),
            lp.dt
        ))
        .into());
    }
    let dt = lp.dt;
    let n = road.len();
    let road_rate = road.derivative();

    let plant_sys = quarter_car_discrete(&lp.actual, dt)?;
    let mut plant = plant_sys.stepper();
    let mut ctrl = siso_stepper(&lp.controller()?, dt)?;
    let mut m_blk = siso_stepper(&lp.m_filter()?, dt)?;
    let mut q_blk = siso_stepper(&lp.q_filter()?, dt)?;

    let (b_p, b_pr, b_prd) = (plant.feedthrough(0, 0), plant.feedthrough(0, 1), plant.feedthrough(0, 2));
    let (b_us, b_usr, b_usrd) = (plant.feedthrough(1, 0), plant.feedthrough(1, 1), plant.feedthrough(1, 2));
    let g_c = ctrl.feedthrough(0, 0);
    let g_m = m_blk.feedthrough(0, 0);
    let g_q = q_blk.feedthrough(0, 0);
    let dob = if lp.dob_enabled { 1.0 } else { 0.0 };
    let denom = 1.0 + g_c * b_p + dob * (g_m * b_p - g_q);
    if denom.abs() < 1e-12 {
        return Err(Error::UnstableDesign("discrete loop equation is singular".into()));
    }

    let mut z_s = vec![0.0; n];
    let mut z_us = vec![0.0; n];
    let mut dhp = vec![0.0; n];
    let mut w_tr = vec![0.0; n];
    let (zr, zrd, df) = (road.samples(), road_rate.samples(), d_f.samples());
    for k in 0..n {
        let a_p = plant.free_output(0) + b_pr * zr[k] + b_prd * zrd[k];
        let a_c = ctrl.free_output(0);
        let a_m = m_blk.free_output(0);
        let a_q = q_blk.free_output(0);
        let w = (a_c - g_c * a_p - dob * (a_m + g_m * a_p - a_q) - df[k]) / denom;
        let zs = a_p + b_p * w;
        let est = a_m + g_m * zs - (a_q + g_q * w);
        z_s[k] = zs;
        z_us[k] = plant.free_output(1) + b_us * w + b_usr * zr[k] + b_usrd * zrd[k];
        dhp[k] = est;
        w_tr[k] = w;
        for (signal, v) in [("z_s", zs), ("F_a", w), ("d_hat_prime", est)] {
            if !(v.abs() <= DIVERGENCE_THRESHOLD) {
                return Err(Error::UnstableLoop {
                    time: k as f64 * dt,
                    signal,
                    threshold: DIVERGENCE_THRESHOLD,
                });
            }
        }
        plant.advance(&[w, zr[k], zrd[k]]);
        ctrl.advance_siso(-zs);
        m_blk.advance_siso(zs);
        q_blk.advance_siso(w);
    }

    let trace = |v: Vec<f64>, label: &str| SignalTrace::new(dt, v, label);
    let z_s = trace(z_s, "z_s")?;
    let e = z_s.scale(-1.0).with_label("e");
    let d = vehicle::filter_trace(&delta(&lp.actual), road)?.with_label("d");
    let d_hat_prime = trace(dhp, "d_hat_prime")?;
    let d_f = d_f.clone().with_label("d_f");
    let d_hat = d_hat_prime.add(&d_f)?.with_label("d_hat");
    let z_r_hat = reconstruct_road(&d_hat, &lp.nominal)?;
    Ok(AgentLog {
        z_r: road.clone().with_label("z_r"),
        z_s,
        z_us: trace(z_us, "z_us")?,
        e,
        d,
        d_hat_prime,
        d_f,
        d_hat,
        z_r_hat,
        f_a: trace(w_tr, "F_a")?,
    })
}

/// Road estimate `ẑ_r = δ̂⁻¹{d̂}` through the nominal vehicle.
///
/// The inverse is run as the exact inverse of the sampled `δ̂`, so a trace
/// produced by [`vehicle::filter_trace`] with `δ̂` maps back to its input.
pub fn reconstruct_road(d_hat: &SignalTrace, nominal: &VehicleParams) -> Result<SignalTrace> {
    let sys = discretize(&realize(&delta(nominal))?, d_hat.dt(), vehicle::SIMULATION_HOLD)?;
    Ok(simulate_inverse(&sys, d_hat)?.with_label("z_r_hat"))
}
