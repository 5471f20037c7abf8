//! State-space realization, discretization and sampled simulation.

use nalgebra::{DMatrix, DVector};
use num_complex::Complex64;

use super::polynomial::balance_in_place;
use super::signal::SignalTrace;
use super::transfer_function::TransferFunction;
use super::LtiError;

/// Continuous-time `x' = Ax + Bu, y = Cx + Du`.
#[derive(Clone, Debug, PartialEq)]
pub struct StateSpace {
    pub a: DMatrix<f64>,
    pub b: DMatrix<f64>,
    pub c: DMatrix<f64>,
    pub d: DMatrix<f64>,
}

impl StateSpace {
    pub fn new(
        a: DMatrix<f64>,
        b: DMatrix<f64>,
        c: DMatrix<f64>,
        d: DMatrix<f64>,
    ) -> Result<Self, LtiError> {
        let n = a.nrows();
        let ok = a.ncols() == n
            && b.nrows() == n
            && c.ncols() == n
            && d.nrows() == c.nrows()
            && d.ncols() == b.ncols();
        if !ok {
            return Err(LtiError::DimensionMismatch(format!(
                "A {}x{}, B {}x{}, C {}x{}, D {}x{}",
                a.nrows(),
                a.ncols(),
                b.nrows(),
                b.ncols(),
                c.nrows(),
                c.ncols(),
                d.nrows(),
                d.ncols()
            )));
        }
        Ok(StateSpace { a, b, c, d })
    }

    pub fn n_states(&self) -> usize {
        self.a.nrows()
    }

    pub fn n_inputs(&self) -> usize {
        self.b.ncols()
    }

    pub fn n_outputs(&self) -> usize {
        self.c.nrows()
    }

    /// `C (iωI - A)^-1 B + D` for the given input/output channel.
    pub fn freq_response(&self, omega: f64, output: usize, input: usize) -> Result<Complex64, LtiError> {
        let n = self.n_states();
        let dio = self.d[(output, input)];
        if n == 0 {
            return Ok(Complex64::new(dio, 0.0));
        }
        let mut m = self.a.map(|v| Complex64::new(-v, 0.0));
        for i in 0..n {
            m[(i, i)] += Complex64::new(0.0, omega);
        }
        let rhs = DVector::from_iterator(n, (0..n).map(|i| Complex64::new(self.b[(i, input)], 0.0)));
        let x = m.lu().solve(&rhs).ok_or(LtiError::PoleOnAxis { omega })?;
        let y: Complex64 = (0..n).map(|i| x[i] * self.c[(output, i)]).sum();
        Ok(y + dio)
    }

    /// Diagonal similarity that equalizes row and column norms of `A`.
    /// Returns the balanced system and the scales `S` with `x = S x_bal`.
    pub fn balanced(&self) -> (StateSpace, Vec<f64>) {
        let mut a = self.a.clone();
        let scales = balance_in_place(&mut a);
        let mut b = self.b.clone();
        let mut c = self.c.clone();
        for (i, &s) in scales.iter().enumerate() {
            b.row_mut(i).scale_mut(1.0 / s);
            c.column_mut(i).scale_mut(s);
        }
        (StateSpace { a, b, c, d: self.d.clone() }, scales)
    }

    /// Stack several single-input realizations sharing one output into a
    /// multi-input system (parallel connection, outputs summed).
    pub fn sum_inputs(parts: &[StateSpace]) -> Result<StateSpace, LtiError> {
        let n: usize = parts.iter().map(|p| p.n_states()).sum();
        let m: usize = parts.iter().map(|p| p.n_inputs()).sum();
        let mut a = DMatrix::zeros(n, n);
        let mut b = DMatrix::zeros(n, m);
        let mut c = DMatrix::zeros(1, n);
        let mut d = DMatrix::zeros(1, m);
        let (mut off, mut ioff) = (0, 0);
        for p in parts {
            if p.n_outputs() != 1 {
                return Err(LtiError::DimensionMismatch("sum_inputs expects single-output parts".into()));
            }
            let (k, q) = (p.n_states(), p.n_inputs());
            a.view_mut((off, off), (k, k)).copy_from(&p.a);
            b.view_mut((off, ioff), (k, q)).copy_from(&p.b);
            c.view_mut((0, off), (1, k)).copy_from(&p.c);
            d.view_mut((0, ioff), (1, q)).copy_from(&p.d);
            off += k;
            ioff += q;
        }
        StateSpace::new(a, b, c, d)
    }
}

/// Controllable-canonical realization of a proper transfer function.
pub fn realize(tf: &TransferFunction) -> Result<StateSpace, LtiError> {
    let rd = tf.relative_degree();
    if rd < 0 {
        return Err(LtiError::ImproperTransferFunction { relative_degree: rd });
    }
    let den = tf.den();
    let n = den.degree().unwrap_or(0);
    let lead = den.leading();
    let d0 = if rd == 0 { tf.num().coeff(n) / lead } else { 0.0 };
    let mut a = DMatrix::zeros(n, n);
    let mut b = DMatrix::zeros(n, 1);
    let mut c = DMatrix::zeros(1, n);
    if n > 0 {
        for i in 0..n - 1 {
            a[(i, i + 1)] = 1.0;
        }
        for j in 0..n {
            a[(n - 1, j)] = -den.coeff(j) / lead;
            c[(0, j)] = (tf.num().coeff(j) - d0 * den.coeff(j)) / lead;
        }
        b[(n - 1, 0)] = 1.0;
    }
    StateSpace::new(a, b, c, DMatrix::from_element(1, 1, d0))
}

/// Discretization rule: how the sampled input is reconstructed between
/// sample instants.
#[derive(Clone, Copy, Debug, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Discretization {
    /// Input held constant over each interval.
    Zoh,
    /// Input interpolated linearly between samples (triangle hold).
    Foh,
    /// Bilinear substitution `s = 2/dt (z-1)/(z+1)`.
    Tustin,
}

/// Discrete-time `ξ[k+1] = A ξ[k] + B u[k], y[k] = C ξ[k] + D u[k]`.
///
/// For first-order hold the discrete state is shifted from the physical
/// state: `x[k] = ξ[k] + input_to_state · u[k]`; it is zero for the other
/// rules. The state is also diagonally rescaled from the continuous
/// realization by `state_scaling` (`x_realization = S x`).
#[derive(Clone, Debug, PartialEq)]
pub struct DiscreteStateSpace {
    pub ss: StateSpace,
    pub dt: f64,
    pub method: Discretization,
    pub input_to_state: DMatrix<f64>,
    pub state_scaling: Vec<f64>,
}

impl DiscreteStateSpace {
    /// Discrete state reproducing state `x0` of the continuous realization
    /// when the first input sample is `u0`.
    pub fn initial_state(&self, x0: &[f64], u0: &[f64]) -> Vec<f64> {
        let n = self.ss.n_states();
        (0..n)
            .map(|i| {
                x0[i] / self.state_scaling[i]
                    - (0..u0.len()).map(|j| self.input_to_state[(i, j)] * u0[j]).sum::<f64>()
            })
            .collect()
    }

    pub fn stepper(&self) -> LtiStepper {
        LtiStepper::new(self)
    }
}

pub fn discretize(ss: &StateSpace, dt: f64, method: Discretization) -> Result<DiscreteStateSpace, LtiError> {
    if !(dt > 0.0) || !dt.is_finite() {
        return Err(LtiError::InvalidArgument(format!("dt must be positive, got {dt}")));
    }
    let (bal, state_scaling) = ss.balanced();
    let (n, m) = (bal.n_states(), bal.n_inputs());
    let zero_offset = DMatrix::zeros(n, m);
    if n == 0 {
        return Ok(DiscreteStateSpace {
            ss: bal,
            dt,
            method,
            input_to_state: zero_offset,
            state_scaling,
        });
    }
    let out = match method {
        Discretization::Zoh => {
            let mut em = DMatrix::zeros(n + m, n + m);
            em.view_mut((0, 0), (n, n)).copy_from(&(&bal.a * dt));
            em.view_mut((0, n), (n, m)).copy_from(&(&bal.b * dt));
            let ex = em.exp();
            let ad = ex.view((0, 0), (n, n)).into_owned();
            let bd = ex.view((0, n), (n, m)).into_owned();
            DiscreteStateSpace {
                ss: StateSpace::new(ad, bd, bal.c.clone(), bal.d.clone())?,
                dt,
                method,
                input_to_state: zero_offset,
                state_scaling: state_scaling.clone(),
            }
        }
        Discretization::Foh => {
            let mut em = DMatrix::zeros(n + 2 * m, n + 2 * m);
            em.view_mut((0, 0), (n, n)).copy_from(&(&bal.a * dt));
            em.view_mut((0, n), (n, m)).copy_from(&(&bal.b * dt));
            em.view_mut((n, n + m), (m, m)).copy_from(&DMatrix::<f64>::identity(m, m));
            let ex = em.exp();
            let phi = ex.view((0, 0), (n, n)).into_owned();
            let g1 = ex.view((0, n), (n, m)).into_owned();
            let g2 = ex.view((0, n + m), (n, m)).into_owned();
            let bd = &g1 - &g2 + &phi * &g2;
            let dd = &bal.d + &bal.c * &g2;
            DiscreteStateSpace {
                ss: StateSpace::new(phi, bd, bal.c.clone(), dd)?,
                dt,
                method,
                input_to_state: g2,
                state_scaling: state_scaling.clone(),
            }
        }
        Discretization::Tustin => {
            let half = 0.5 * dt;
            let ima = DMatrix::<f64>::identity(n, n) - &bal.a * half;
            let lu = ima.clone().lu();
            let ad = lu
                .solve(&(DMatrix::<f64>::identity(n, n) + &bal.a * half))
                .ok_or_else(|| LtiError::InvalidArgument("singular bilinear map".into()))?;
            let bd = lu
                .solve(&(&bal.b * dt))
                .ok_or_else(|| LtiError::InvalidArgument("singular bilinear map".into()))?;
            let cd = ima
                .transpose()
                .lu()
                .solve(&bal.c.transpose())
                .ok_or_else(|| LtiError::InvalidArgument("singular bilinear map".into()))?
                .transpose();
            let dd = &bal.d + (&bal.c * &bd) * 0.5;
            DiscreteStateSpace {
                ss: StateSpace::new(ad, bd, cd, dd)?,
                dt,
                method,
                input_to_state: zero_offset,
                state_scaling: state_scaling.clone(),
            }
        }
    };
    Ok(out)
}

/// Sample-by-sample evaluator of a discrete system with flat storage.
#[derive(Clone, Debug)]
pub struct LtiStepper {
    n: usize,
    m: usize,
    p: usize,
    a: Vec<f64>,
    b: Vec<f64>,
    c: Vec<f64>,
    d: Vec<f64>,
    x: Vec<f64>,
    scratch: Vec<f64>,
}

impl LtiStepper {
    pub fn new(sys: &DiscreteStateSpace) -> Self {
        let ss = &sys.ss;
        let (n, m, p) = (ss.n_states(), ss.n_inputs(), ss.n_outputs());
        let flat = |mat: &DMatrix<f64>| {
            let mut v = Vec::with_capacity(mat.len());
            for i in 0..mat.nrows() {
                for j in 0..mat.ncols() {
                    v.push(mat[(i, j)]);
                }
            }
            v
        };
        LtiStepper {
            n,
            m,
            p,
            a: flat(&ss.a),
            b: flat(&ss.b),
            c: flat(&ss.c),
            d: flat(&ss.d),
            x: vec![0.0; n],
            scratch: vec![0.0; n],
        }
    }

    pub fn set_state(&mut self, x: &[f64]) {
        self.x.copy_from_slice(x);
    }

    pub fn state(&self) -> &[f64] {
        &self.x
    }

    /// Output component `k` that does not depend on the current input.
    pub fn free_output(&self, k: usize) -> f64 {
        let row = &self.c[k * self.n..(k + 1) * self.n];
        row.iter().zip(&self.x).map(|(c, x)| c * x).sum()
    }

    /// Direct feedthrough from input `j` to output `k`.
    pub fn feedthrough(&self, k: usize, j: usize) -> f64 {
        self.d[k * self.m + j]
    }

    pub fn output(&self, u: &[f64], y: &mut [f64]) {
        for k in 0..self.p {
            let mut acc = self.free_output(k);
            for j in 0..self.m {
                acc += self.d[k * self.m + j] * u[j];
            }
            y[k] = acc;
        }
    }

    /// Single-input single-output output for input `u`.
    pub fn output_siso(&self, u: f64) -> f64 {
        self.free_output(0) + self.d[0] * u
    }

    pub fn advance(&mut self, u: &[f64]) {
        for i in 0..self.n {
            let mut acc = 0.0;
            for (j, &xj) in self.x.iter().enumerate() {
                acc += self.a[i * self.n + j] * xj;
            }
            for (j, &uj) in u.iter().enumerate() {
                acc += self.b[i * self.m + j] * uj;
            }
            self.scratch[i] = acc;
        }
        std::mem::swap(&mut self.x, &mut self.scratch);
    }

    pub fn advance_siso(&mut self, u: f64) {
        self.advance(std::slice::from_ref(&u));
    }
}

/// Run a single-input single-output discrete system over an input trace.
/// `x0` is the physical initial state (zero when `None`).
pub fn simulate_lti(
    sys: &DiscreteStateSpace,
    input: &SignalTrace,
    x0: Option<&[f64]>,
) -> Result<SignalTrace, LtiError> {
    let out = simulate_mimo(sys, &[input], x0)?;
    Ok(out.into_iter().next().expect("single output"))
}

/// Multi-input, multi-output variant of [`simulate_lti`]; returns one trace
/// per output.
pub fn simulate_mimo(
    sys: &DiscreteStateSpace,
    inputs: &[&SignalTrace],
    x0: Option<&[f64]>,
) -> Result<Vec<SignalTrace>, LtiError> {
    let ss = &sys.ss;
    if inputs.len() != ss.n_inputs() {
        return Err(LtiError::DimensionMismatch(format!(
            "system has {} inputs, got {} traces",
            ss.n_inputs(),
            inputs.len()
        )));
    }
    let Some(first) = inputs.first() else {
        return Err(LtiError::DimensionMismatch("no input traces".into()));
    };
    for tr in inputs {
        if tr.len() != first.len() {
            return Err(LtiError::DimensionMismatch("input traces differ in length".into()));
        }
        if !dt_matches(tr.dt(), sys.dt) {
            return Err(LtiError::DimensionMismatch(format!(
                "trace dt {} does not match system dt {}",
                tr.dt(),
                sys.dt
            )));
        }
    }
    let n = ss.n_states();
    if let Some(x) = x0 {
        if x.len() != n {
            return Err(LtiError::DimensionMismatch(format!(
                "initial state has {} entries, system has {n} states",
                x.len()
            )));
        }
    }
    let len = first.len();
    let m = inputs.len();
    let p = ss.n_outputs();
    let mut st = LtiStepper::new(sys);
    let mut u = vec![0.0; m];
    let mut y = vec![0.0; p];
    if len > 0 {
        for (j, tr) in inputs.iter().enumerate() {
            u[j] = tr.samples()[0];
        }
        let phys = x0.map(|x| x.to_vec()).unwrap_or_else(|| vec![0.0; n]);
        st.set_state(&sys.initial_state(&phys, &u));
    }
    let mut outs = vec![Vec::with_capacity(len); p];
    for k in 0..len {
        for (j, tr) in inputs.iter().enumerate() {
            u[j] = tr.samples()[k];
        }
        st.output(&u, &mut y);
        for (o, &v) in outs.iter_mut().zip(&y) {
            o.push(v);
        }
        st.advance(&u);
    }
    outs.into_iter()
        .enumerate()
        .map(|(k, s)| SignalTrace::new(sys.dt, s, format!("y{k}")))
        .collect()
}

/// Input sequence that drives the single-input single-output system `sys`,
/// started from rest, to produce `output` exactly. Requires direct
/// feedthrough and a stable inverse (discrete zeros inside the unit circle).
pub fn simulate_inverse(sys: &DiscreteStateSpace, output: &SignalTrace) -> Result<SignalTrace, LtiError> {
    let ss = &sys.ss;
    if ss.n_inputs() != 1 || ss.n_outputs() != 1 {
        return Err(LtiError::DimensionMismatch("inverse simulation needs a SISO system".into()));
    }
    if !dt_matches(output.dt(), sys.dt) {
        return Err(LtiError::DimensionMismatch(format!(
            "trace dt {} does not match system dt {}",
            output.dt(),
            sys.dt
        )));
    }
    let d = ss.d[(0, 0)];
    let scale = ss.c.iter().chain(ss.b.iter()).fold(d.abs(), |m, v| m.max(v.abs()));
    if d.abs() <= 1e-12 * scale {
        return Err(LtiError::InvalidArgument("system has no direct feedthrough".into()));
    }
    let n = ss.n_states();
    if n > 0 {
        let zeros_map = &ss.a - &ss.b * &ss.c / d;
        if zeros_map.complex_eigenvalues().iter().any(|z| z.norm() >= 1.0) {
            return Err(LtiError::InvalidArgument("discrete zeros outside the unit circle".into()));
        }
    }
    let mut st = LtiStepper::new(sys);
    let y = output.samples();
    let mut u = Vec::with_capacity(y.len());
    if let Some(&y0) = y.first() {
        // from rest the first sample sees the shifted state -Γ₂ u₀
        let cg: f64 = (0..n).map(|i| ss.c[(0, i)] * sys.input_to_state[(i, 0)]).sum();
        let u0 = y0 / (d - cg);
        st.set_state(&sys.initial_state(&vec![0.0; n], &[u0]));
        u.push(u0);
        st.advance_siso(u0);
    }
    for &yk in y.iter().skip(1) {
        let uk = (yk - st.free_output(0)) / d;
        u.push(uk);
        st.advance_siso(uk);
    }
    SignalTrace::new(sys.dt, u, "u")
}

pub(crate) fn dt_matches(a: f64, b: f64) -> bool {
    (a - b).abs() <= 1e-9 * a.abs().max(b.abs())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::lti::polynomial::Polynomial;

    fn lag() -> TransferFunction {
        TransferFunction::from_coeffs(&[1.0], &[1.0, 1.0]).unwrap()
    }

    #[test]
    fn first_order_realization() {
        let ss = realize(&lag()).unwrap();
        assert_eq!(ss.a, DMatrix::from_element(1, 1, -1.0));
        assert_eq!(ss.b, DMatrix::from_element(1, 1, 1.0));
        assert_eq!(ss.c, DMatrix::from_element(1, 1, 1.0));
        assert_eq!(ss.d, DMatrix::from_element(1, 1, 0.0));
    }

    #[test]
    fn static_gain_realization() {
        let ss = realize(&TransferFunction::gain(3.5)).unwrap();
        assert_eq!(ss.n_states(), 0);
        assert_eq!(ss.d[(0, 0)], 3.5);
    }

    #[test]
    fn improper_rejected() {
        assert!(matches!(
            realize(&TransferFunction::s()),
            Err(LtiError::ImproperTransferFunction { relative_degree: -1 })
        ));
    }

    #[test]
    fn biproper_round_trip() {
        let tf = TransferFunction::new(
            Polynomial::new(vec![3.0, 2.0, 5.0]),
            Polynomial::new(vec![10.0, 4.0, 1.0]),
        )
        .unwrap();
        let ss = realize(&tf).unwrap();
        for w in [0.0, 0.3, 2.0, 30.0] {
            let a = ss.freq_response(w, 0, 0).unwrap();
            let b = tf.freq_response(w).unwrap();
            assert!((a - b).norm() < 1e-12 * b.norm());
        }
    }

    #[test]
    fn zoh_scalar_exponential() {
        let ss = realize(&lag()).unwrap();
        for dt in [1e-3, 0.1, 1.0] {
            let d = discretize(&ss, dt, Discretization::Zoh).unwrap();
            assert!((d.ss.a[(0, 0)] - (-dt).exp()).abs() < 1e-14);
        }
        let tiny = discretize(&ss, 1e-12, Discretization::Zoh).unwrap();
        assert!((tiny.ss.a[(0, 0)] - 1.0).abs() < 1e-11);
    }

    #[test]
    fn tustin_integrator_pole() {
        let integ = TransferFunction::from_coeffs(&[1.0], &[0.0, 1.0]).unwrap();
        let d = discretize(&realize(&integ).unwrap(), 0.01, Discretization::Tustin).unwrap();
        assert_eq!(d.ss.a[(0, 0)], 1.0);
    }

    #[test]
    fn unit_step_response() {
        let dt = 1e-3;
        let u = SignalTrace::new(dt, vec![1.0; 1001], "step").unwrap();
        for method in [Discretization::Zoh, Discretization::Foh] {
            let d = discretize(&realize(&lag()).unwrap(), dt, method).unwrap();
            let y = simulate_lti(&d, &u, None).unwrap();
            assert_eq!(y.len(), u.len());
            assert!((y.samples()[1000] - (1.0 - (-1.0f64).exp())).abs() < 1e-4);
        }
    }

    #[test]
    fn inverse_simulation_recovers_input() {
        // (s + 2)/(s + 5), minimum phase
        let tf = TransferFunction::from_coeffs(&[2.0, 1.0], &[5.0, 1.0]).unwrap();
        let u = SignalTrace::from_fn(1e-3, 3000, "u", |t| (7.0 * t).sin() + 0.3).unwrap();
        for method in [Discretization::Zoh, Discretization::Foh, Discretization::Tustin] {
            let sys = discretize(&realize(&tf).unwrap(), 1e-3, method).unwrap();
            let y = simulate_lti(&sys, &u, None).unwrap();
            let back = simulate_inverse(&sys, &y).unwrap();
            for (a, b) in back.samples().iter().zip(u.samples()) {
                assert!((a - b).abs() < 1e-9);
            }
        }
        let strictly = discretize(&realize(&lag()).unwrap(), 1e-3, Discretization::Zoh).unwrap();
        assert!(simulate_inverse(&strictly, &u).is_err());
    }

    #[test]
    fn zero_input_zero_output() {
        let d = discretize(&realize(&lag()).unwrap(), 1e-3, Discretization::Foh).unwrap();
        let u = SignalTrace::zeros(1e-3, 50, "u");
        assert!(simulate_lti(&d, &u, None).unwrap().samples().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn dt_mismatch_rejected() {
        let d = discretize(&realize(&lag()).unwrap(), 1e-3, Discretization::Zoh).unwrap();
        let u = SignalTrace::zeros(2e-3, 10, "u");
        assert!(matches!(simulate_lti(&d, &u, None), Err(LtiError::DimensionMismatch(_))));
        assert!(matches!(
            simulate_lti(&d, &SignalTrace::zeros(1e-3, 10, "u"), Some(&[0.0, 0.0])),
            Err(LtiError::DimensionMismatch(_))
        ));
    }
}
