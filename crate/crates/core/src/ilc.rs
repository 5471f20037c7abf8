//! Cascaded learning across vehicles: synthesis of the learning filters,
//! offline generation of the learning signal from the predecessor's record,
//! and the contraction operators that govern the estimation error.
//!
//! Vehicle `j` receives from vehicle `j-1` its tracking error `e_{j-1}` and
//! learning signal `d_{f,j-1}` and forms
//!
//! ```text
//! d_{f,j} = L1{e_{j-1}} + L2{d_{f,j-1}}
//! L1 = Ĝ_{d,j-1}⁻¹ [α (1 - Ω̂_{j-1}) - η (1 - Ω̂_j)]
//! L2 = α + L1 Ĝ_{f,j-1}
//! ```
//!
//! Hatted maps come from the nominal designs only. The estimation error
//! then obeys `e_{d,j} = T_e1{e_{d,j-1}} + T_e2{d_{f,j-1}}` with `T_e1 ≈ α`
//! and `T_e2 ≈ 0`.

use std::f64::consts::PI;
use std::io::Write;

use num_complex::Complex64;
use rustfft::FftPlanner;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::lti::{log_space, Polynomial, SignalTrace, TransferFunction};
use crate::observer::{AgentLoop, LoopBlocks, LoopDesign};
use crate::vehicle::{delta, VehicleParams};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LearningFilters {
    pub l1: TransferFunction,
    pub l2: TransferFunction,
    pub alpha: f64,
    pub eta: f64,
}

impl LearningFilters {
    /// Coefficient lists in ascending powers, as JSON.
    pub fn to_json(&self) -> Result<String> {
        serde_json::to_string_pretty(self).map_err(|e| Error::Config(e.to_string()))
    }
}

/// What one vehicle publishes for its successor.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SharedRecord {
    /// Cascade position of the publishing vehicle, from 1.
    pub agent_index: usize,
    /// Tracking error `e = -z_s`.
    pub e_trace: SignalTrace,
    pub df_trace: SignalTrace,
    pub design: LoopDesign,
}

impl SharedRecord {
    pub fn new(agent_index: usize, e_trace: SignalTrace, df_trace: SignalTrace, design: LoopDesign) -> Result<Self> {
        e_trace.check_compatible(&df_trace)?;
        Ok(SharedRecord {
            agent_index,
            e_trace,
            df_trace,
            design,
        })
    }
}

/// Static approximation of `δ̂_j / δ̂_{j-1}`, the ratio of nominal
/// suspension stiffnesses.
pub fn compute_eta(nominal_j: &VehicleParams, nominal_prev: &VehicleParams) -> Result<f64> {
    Ok(delta(nominal_j).dc_gain()? / delta(nominal_prev).dc_gain()?)
}

pub fn validate_alpha(alpha: f64) -> Result<()> {
    if !(alpha > 0.0 && alpha < 1.0) {
        return Err(Error::InvalidParams(format!("alpha must lie in (0, 1), got {alpha}")));
    }
    Ok(())
}

pub fn synth_l1(prev: &LoopDesign, current: &LoopDesign, alpha: f64) -> Result<TransferFunction> {
    validate_alpha(alpha)?;
    let eta = compute_eta(&current.nominal, &prev.nominal)?;
    let bp = prev.blocks()?;
    let bc = current.blocks()?;
    let one_minus_prev = bp.omega()?.one_minus()?;
    let one_minus_cur = bc.omega()?.one_minus()?;
    let bracket = one_minus_prev.scale(alpha).sub(&one_minus_cur.scale(eta))?;
    Ok(bp.gd()?.inverse()?.series(&bracket)?)
}

pub fn synth_l2(l1: &TransferFunction, prev: &LoopDesign, alpha: f64) -> Result<TransferFunction> {
    validate_alpha(alpha)?;
    Ok(l1.series(&prev.blocks()?.gf()?)?.add_gain(alpha)?)
}

pub fn synth_filters(prev: &LoopDesign, current: &LoopDesign, alpha: f64) -> Result<LearningFilters> {
    let l1 = synth_l1(prev, current, alpha)?;
    let l2 = synth_l2(&l1, prev, alpha)?;
    Ok(LearningFilters {
        l1,
        l2,
        alpha,
        eta: compute_eta(&current.nominal, &prev.nominal)?,
    })
}

/// High-frequency taper `1 / (1 + (ω/cutoff)^(2·order))` applied to
/// filters that grow without bound.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Rolloff {
    pub cutoff: f64,
    pub order: u32,
}

pub const DEFAULT_ROLLOFF_CUTOFF: f64 = 16.0;

impl Default for Rolloff {
    fn default() -> Self {
        Rolloff {
            cutoff: DEFAULT_ROLLOFF_CUTOFF,
            order: 4,
        }
    }
}

impl Rolloff {
    pub fn weight(&self, omega: f64) -> f64 {
        1.0 / (1.0 + (omega / self.cutoff).powi(2 * self.order as i32))
    }
}

/// `f = Σ a_i / s^i + h`, with `a[i-1]` the coefficient of `1/s^i` and `h`
/// free of poles at the origin.
fn split_origin_poles(f: &TransferFunction) -> Result<(Vec<f64>, TransferFunction)> {
    let k = f.den().origin_multiplicity();
    if k == 0 {
        return Ok((Vec::new(), f.clone()));
    }
    let d0 = f.den().unshift(k);
    let n = f.num();
    // power series of n / d0 about s = 0, first k terms
    let mut c = vec![0.0; k];
    for i in 0..k {
        let mut acc = n.coeff(i);
        for j in 1..=i {
            acc -= d0.coeff(j) * c[i - j];
        }
        c[i] = acc / d0.coeff(0);
    }
    let series = Polynomial::new(c.clone());
    let rest = n - &(&d0 * &series);
    // the first k coefficients of `rest` vanish up to roundoff
    let rest = Polynomial::new(rest.coeffs().get(k..).map(<[f64]>::to_vec).unwrap_or_default());
    let h = if rest.is_zero() {
        TransferFunction::zero()
    } else {
        TransferFunction::new(rest, d0)?
    };
    // c[0] multiplies 1/s^k
    Ok((c.into_iter().rev().collect(), h))
}

fn cumulative_trapezoid(x: &[f64], dt: f64) -> Vec<f64> {
    let mut out = Vec::with_capacity(x.len());
    let mut acc = 0.0;
    for (k, &v) in x.iter().enumerate() {
        if k > 0 {
            acc += 0.5 * dt * (v + x[k - 1]);
        }
        out.push(acc);
    }
    out
}

/// Odd reflection about the last sample, faded to zero by a half cosine
/// over `m` samples. Keeps the trace and its slope continuous at the end.
fn extend_tail(x: &[f64], m: usize) -> Vec<f64> {
    let n = x.len();
    let m = m.min(n.saturating_sub(1));
    let mut out = x.to_vec();
    for k in 0..m {
        let fade = 0.5 * (1.0 + (PI * (k + 1) as f64 / (m + 1) as f64).cos());
        out.push((2.0 * x[n - 1] - x[n - 2 - k]) * fade);
    }
    out
}

/// Apply `f` to a recorded trace.
///
/// Poles at the origin are applied as repeated causal integration from the
/// start of the trace; the rest on the FFT grid of the zero-padded trace.
/// With a `rolloff`, the whole response is multiplied by its weight, and the
/// trace is extended past its end so the taper does not see a truncation
/// step. Improper filters require a rolloff.
pub fn apply_filter_offline(f: &TransferFunction, x: &SignalTrace, rolloff: Option<&Rolloff>) -> Result<SignalTrace> {
    if f.poles().iter().any(|p| p.re > 1e-9 * p.norm().max(1.0)) {
        return Err(Error::UnstableInverse);
    }
    if rolloff.is_none() && f.relative_degree() < 0 {
        return Err(Error::ImproperComposition {
            relative_degree: f.relative_degree(),
        });
    }
    let (origin, h) = split_origin_poles(f)?;
    if let Some(r) = rolloff {
        if origin.len() >= 2 * r.order as usize {
            return Err(Error::InvalidParams(format!(
                "rolloff order {} is too low for {} poles at the origin",
                r.order,
                origin.len()
            )));
        }
    }
    let dt = x.dt();
    let n = x.len();
    let mut out = vec![0.0; n];

    let mut integ = x.samples().to_vec();
    for a in &origin {
        integ = cumulative_trapezoid(&integ, dt);
        if *a != 0.0 {
            for (o, v) in out.iter_mut().zip(&integ) {
                *o += a * v;
            }
        }
    }

    if rolloff.is_none() && (h.is_zero() || h.den().degree() == Some(0)) {
        let g = if h.is_zero() { 0.0 } else { h.high_frequency_gain()? };
        for (o, v) in out.iter_mut().zip(x.samples()) {
            *o += g * v;
        }
        return Ok(SignalTrace::new(dt, out, x.label())?);
    }
    if n == 0 {
        return Ok(SignalTrace::new(dt, out, x.label())?);
    }

    let ext = match rolloff {
        Some(r) => (20.0 / (r.cutoff * dt)).ceil() as usize,
        None => 0,
    };
    let xs = extend_tail(x.samples(), ext);
    let size = (n + xs.len()).next_power_of_two();
    let mut buf: Vec<Complex64> = xs.iter().map(|&v| Complex64::new(v, 0.0)).collect();
    buf.resize(size, Complex64::new(0.0, 0.0));
    let mut planner = FftPlanner::new();
    planner.plan_fft_forward(size).process(&mut buf);
    let base = 2.0 * PI / (size as f64 * dt);
    for k in 0..=size / 2 {
        let w = k as f64 * base;
        let mut g = if h.is_zero() { Complex64::new(0.0, 0.0) } else { h.freq_response(w)? };
        if let Some(r) = rolloff {
            let wt = r.weight(w);
            g *= wt;
            if k > 0 {
                // taper the integrators too; (W - 1)/s^i vanishes at DC
                let s = Complex64::new(0.0, w);
                let mut sp = Complex64::new(1.0, 0.0);
                for a in &origin {
                    sp /= s;
                    g += (wt - 1.0) * a * sp;
                }
            }
        }
        if k == size / 2 {
            g = Complex64::new(g.re, 0.0);
        }
        buf[k] *= g;
        if k > 0 && k < size / 2 {
            buf[size - k] *= g.conj();
        }
    }
    planner.plan_fft_inverse(size).process(&mut buf);
    let norm = 1.0 / size as f64;
    for (o, v) in out.iter_mut().zip(&buf) {
        *o += v.re * norm;
    }
    Ok(SignalTrace::new(dt, out, x.label())?)
}

/// `d_{f,j}`; zero for the first vehicle of the cascade.
///
/// The rolloff acts on the correction `L1{e} + (L2 - α){d_f}` only. The
/// `α d_f` part passes untouched, so the pair still satisfies
/// `L2 = α + L1 Ĝ_f` after tapering and `T_e2` stays zero at every
/// frequency.
pub fn make_learning_signal(
    filters: Option<&LearningFilters>,
    prev: Option<&SharedRecord>,
    dt: f64,
    len: usize,
    rolloff: &Rolloff,
) -> Result<SignalTrace> {
    let (Some(filters), Some(prev)) = (filters, prev) else {
        return Ok(SignalTrace::zeros(dt, len, "d_f"));
    };
    let a = apply_filter_offline(&filters.l1, &prev.e_trace, Some(rolloff))?;
    let b = apply_filter_offline(&filters.l2.add_gain(-filters.alpha)?, &prev.df_trace, Some(rolloff))?;
    Ok(prev.df_trace.scale(filters.alpha).add(&a)?.add(&b)?.with_label("d_f"))
}

/// Frequency sample of the contraction operators.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ContractionPoint {
    pub omega: f64,
    pub t_e1: (f64, f64),
    pub t_e2: (f64, f64),
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ContractionReport {
    pub alpha: f64,
    pub points: Vec<ContractionPoint>,
    /// Largest `|T_e1(iω) - α|` over the band.
    pub max_te1_deviation: f64,
    /// Largest `|T_e1(iω)|` over the band.
    pub max_te1: f64,
    /// Largest `|T_e2(iω)|` over the band.
    pub max_te2: f64,
}

impl ContractionReport {
    pub fn write_csv<W: Write>(&self, w: W) -> std::io::Result<()> {
        let mut out = csv::Writer::from_writer(w);
        out.write_record(["omega", "te1_minus_alpha_abs", "te2_abs"])?;
        for p in &self.points {
            let te1 = Complex64::new(p.t_e1.0, p.t_e1.1);
            let te2 = Complex64::new(p.t_e2.0, p.t_e2.1);
            out.write_record([
                p.omega.to_string(),
                (te1 - self.alpha).norm().to_string(),
                te2.norm().to_string(),
            ])?;
        }
        out.flush()
    }
}

/// Default band of the contraction sweep, rad/s.
pub const DIAGNOSTIC_BAND: (f64, f64) = (0.1, 20.0);

/// Contraction operators of the pair `(prev, current)` under `filters`,
/// evaluated on `n_points` log-spaced frequencies over `band`.
///
/// The unhatted closed-loop maps and `δ` come from the actual vehicles when
/// `use_actual` is set and from the nominal ones otherwise. The operators
/// are evaluated pointwise from their constituents, which avoids the degree
/// growth of composing them as rational functions.
pub fn contraction_diagnostics(
    prev: &AgentLoop,
    current: &AgentLoop,
    filters: &LearningFilters,
    use_actual: bool,
    band: (f64, f64),
    n_points: usize,
) -> Result<ContractionReport> {
    let blocks = |lp: &AgentLoop| -> Result<LoopBlocks> { lp.blocks(!use_actual) };
    let (bp, bc) = (blocks(prev)?, blocks(current)?);
    let (om_p, om_c) = (bp.omega()?, bc.omega()?);
    let (gd_p, gf_p) = (bp.gd()?, bp.gf()?);
    let pick = |lp: &AgentLoop| if use_actual { lp.actual } else { lp.nominal };
    let (dl_p, dl_c) = (delta(&pick(prev)), delta(&pick(current)));

    let mut points = Vec::with_capacity(n_points);
    let (mut dev, mut m1, mut m2) = (0.0f64, 0.0f64, 0.0f64);
    for w in log_space(band.0, band.1, n_points) {
        let f = |tf: &TransferFunction| tf.freq_response(w);
        let one_minus_p = 1.0 - f(&om_p)?;
        let l1 = f(&filters.l1)?;
        let te1 = (1.0 - f(&om_c)?) / one_minus_p * (f(&dl_c)? / f(&dl_p)?) + l1 * f(&gd_p)? / one_minus_p;
        let te2 = te1 - f(&filters.l2)? + l1 * f(&gf_p)?;
        dev = dev.max((te1 - filters.alpha).norm());
        m1 = m1.max(te1.norm());
        m2 = m2.max(te2.norm());
        points.push(ContractionPoint {
            omega: w,
            t_e1: (te1.re, te1.im),
            t_e2: (te2.re, te2.im),
        });
    }
    Ok(ContractionReport {
        alpha: filters.alpha,
        points,
        max_te1_deviation: dev,
        max_te1: m1,
        max_te2: m2,
    })
}

/// Largest magnitude of the sensitivity `1 / (1 + C P)` of the actual loop
/// over `band`.
pub fn max_sensitivity(lp: &AgentLoop, band: (f64, f64), n_points: usize) -> Result<f64> {
    let p = crate::vehicle::plant_p1(&lp.actual);
    let c = lp.controller()?;
    let mut worst = 0.0f64;
    for w in log_space(band.0, band.1, n_points) {
        let s = 1.0 / (1.0 + c.freq_response(w)? * p.freq_response(w)?);
        worst = worst.max(s.norm());
    }
    Ok(worst)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::observer::QFilterSpec;
    use crate::vehicle::PidGains;

    fn design(j: f64) -> LoopDesign {
        let b = j / 15.0;
        LoopDesign {
            nominal: VehicleParams::new(2.45 + b, 1.0 + b, 950.0 + 100.0 * b, 1250.0 + 100.0 * b, 7.5 + b, 5.0 + b)
                .unwrap(),
            pid: PidGains::new(1500.0 + 30.0 * b, 200.0 + b, 500.0 + 15.0 * b).unwrap(),
            q: QFilterSpec::default(),
            derivative_pole: crate::observer::DEFAULT_DERIVATIVE_POLE,
        }
    }

    fn exact(j: f64) -> AgentLoop {
        let d = design(j);
        AgentLoop::new(d.nominal, d.nominal, d.pid, d.q, 1e-3).unwrap()
    }

    #[test]
    fn eta_is_stiffness_ratio() {
        let (a, b) = (design(30.0), design(15.0));
        assert_eq!(compute_eta(&a.nominal, &a.nominal).unwrap(), 1.0);
        assert!((compute_eta(&a.nominal, &b.nominal).unwrap() - 1150.0 / 1050.0).abs() < 1e-12);
    }

    #[test]
    fn filters_vanish_when_alpha_matches_identical_agents() {
        let d = design(10.0);
        let l1 = synth_l1(&d, &d, 0.999_999_999_999).unwrap();
        for w in [0.1, 1.0, 10.0] {
            assert!(l1.freq_response(w).unwrap().norm() < 1e-6);
        }
    }

    #[test]
    fn identical_agents_reduce_to_scaled_inverse() {
        let d = design(7.0);
        let alpha = 0.3;
        let l1 = synth_l1(&d, &d, alpha).unwrap();
        let b = d.blocks().unwrap();
        let want = b.gd().unwrap().inverse().unwrap().series(&b.q.one_minus().unwrap()).unwrap().scale(alpha - 1.0);
        for w in log_space(0.1, 50.0, 20) {
            let (x, y) = (l1.freq_response(w).unwrap(), want.freq_response(w).unwrap());
            assert!((x - y).norm() < 1e-7 * y.norm());
        }
        assert!(l1.relative_degree() <= 0);
        // with exact models the second filter collapses to the stiffness ratio
        let l2 = synth_l2(&l1, &d, alpha).unwrap();
        for w in log_space(0.1, 50.0, 20) {
            assert!((l2.freq_response(w).unwrap() - 1.0).norm() < 1e-7);
        }
    }

    #[test]
    fn offline_identity_and_gain() {
        let x = SignalTrace::from_fn(1e-3, 1500, "x", |t| (3.0 * t).sin() + t).unwrap();
        let y = apply_filter_offline(&TransferFunction::one(), &x, None).unwrap();
        for (a, b) in y.samples().iter().zip(x.samples()) {
            assert!((a - b).abs() < 1e-10);
        }
        let y = apply_filter_offline(&TransferFunction::gain(-2.5), &x, None).unwrap();
        assert_eq!(y.samples(), x.scale(-2.5).samples());
    }

    #[test]
    fn offline_differentiator() {
        let dt = 1e-3;
        let x = SignalTrace::from_fn(dt, 8192, "x", |t| (5.0 * t).sin()).unwrap();
        let r = Rolloff { cutoff: 200.0, order: 4 };
        let y = apply_filter_offline(&TransferFunction::s(), &x, Some(&r)).unwrap();
        let n = x.len();
        let (lo, hi) = (n / 5, 4 * n / 5);
        let (mut err, mut norm) = (0.0, 0.0);
        for k in lo..hi {
            let want = 5.0 * (5.0 * k as f64 * dt).cos();
            err += (y.samples()[k] - want).powi(2);
            norm += want * want;
        }
        assert!((err / norm).sqrt() < 0.01);
    }

    #[test]
    fn offline_integrator_is_causal_trapezoid() {
        let x = SignalTrace::from_fn(1e-2, 200, "x", |_| 1.0).unwrap();
        let y = apply_filter_offline(&TransferFunction::from_coeffs(&[2.0], &[0.0, 1.0]).unwrap(), &x, None)
            .unwrap();
        for (k, v) in y.samples().iter().enumerate() {
            assert!((v - 2.0 * k as f64 * 1e-2).abs() < 1e-12);
        }
    }

    #[test]
    fn origin_split_reassembles() {
        // (s^2 + 3s + 2) / (s^2 (s + 4))
        let f = TransferFunction::from_coeffs(&[2.0, 3.0, 1.0], &[0.0, 0.0, 4.0, 1.0]).unwrap();
        let (a, h) = split_origin_poles(&f).unwrap();
        assert_eq!(a.len(), 2);
        for w in [0.3, 2.0, 9.0] {
            let s = Complex64::new(0.0, w);
            let sum = a[0] / s + a[1] / (s * s) + h.freq_response(w).unwrap();
            assert!((sum - f.freq_response(w).unwrap()).norm() < 1e-12 * sum.norm());
        }
    }

    #[test]
    fn unstable_filter_rejected() {
        let f = TransferFunction::from_coeffs(&[1.0], &[-1.0, 1.0]).unwrap();
        let x = SignalTrace::zeros(1e-3, 16, "x");
        assert!(matches!(apply_filter_offline(&f, &x, Some(&Rolloff::default())), Err(Error::UnstableInverse)));
    }

    #[test]
    fn first_agent_signal_is_zero() {
        let d = make_learning_signal(None, None, 1e-3, 100, &Rolloff::default()).unwrap();
        assert!(d.samples().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn exact_identical_agents_contract_by_alpha() {
        let lp = exact(20.0);
        let f = synth_filters(&lp.design(), &lp.design(), 0.5).unwrap();
        let rep = contraction_diagnostics(&lp, &lp, &f, true, DIAGNOSTIC_BAND, 60).unwrap();
        assert!(rep.max_te1_deviation < 1e-6, "{}", rep.max_te1_deviation);
        assert!(rep.max_te2 < 1e-6, "{}", rep.max_te2);
    }

    #[test]
    fn adjacent_agents_stay_near_alpha() {
        let (a, b) = (exact(5.0), exact(6.0));
        let alpha = 0.5;
        let f = synth_filters(&a.design(), &b.design(), alpha).unwrap();
        let rep = contraction_diagnostics(&a, &b, &f, true, (0.1, 10.0), 60).unwrap();
        assert!(rep.max_te1_deviation < 0.05 * alpha, "{}", rep.max_te1_deviation);
    }
}
