//! Rational transfer functions with near-common-root cancellation.

use std::fmt;

use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use super::polynomial::Polynomial;
use super::LtiError;

/// Tolerances used when a transfer function is brought to canonical form.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Cancellation {
    /// A numerator and a denominator root cluster cancel when their centers
    /// are within `match_tol * max(|z|, |p|, 1)`.
    pub match_tol: f64,
    /// Roots of one polynomial within `cluster_tol * max(|a|, |b|, 1)` of each
    /// other are treated as one multiple root. Multiple roots scatter by about
    /// `eps^(1/m)` under eigenvalue root finding while their mean stays
    /// accurate, so matching is done on cluster centers.
    pub cluster_tol: f64,
    /// Highest degree either polynomial may have after cancellation.
    pub max_degree: usize,
}

impl Default for Cancellation {
    fn default() -> Self {
        Cancellation {
            match_tol: 1e-9,
            cluster_tol: 1e-3,
            max_degree: 30,
        }
    }
}

/// `num(s) / den(s)` with a monic denominator.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TransferFunction {
    num: Polynomial,
    den: Polynomial,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum CombineMode {
    Series,
    Parallel,
    /// `a / (1 + a b)`: negative feedback of `a` through `b`.
    Feedback,
}

impl TransferFunction {
    /// Canonical transfer function under the default [`Cancellation`].
    pub fn new(num: Polynomial, den: Polynomial) -> Result<Self, LtiError> {
        Self::new_with(num, den, &Cancellation::default())
    }

    pub fn new_with(num: Polynomial, den: Polynomial, tol: &Cancellation) -> Result<Self, LtiError> {
        canonicalize(num, den, tol)
    }

    pub fn from_coeffs(num: &[f64], den: &[f64]) -> Result<Self, LtiError> {
        Self::new(Polynomial::new(num), Polynomial::new(den))
    }

    pub fn gain(k: f64) -> Self {
        TransferFunction {
            num: Polynomial::constant(k),
            den: Polynomial::one(),
        }
    }

    pub fn zero() -> Self {
        Self::gain(0.0)
    }

    pub fn one() -> Self {
        Self::gain(1.0)
    }

    /// The differentiator `s`.
    pub fn s() -> Self {
        TransferFunction {
            num: Polynomial::s(),
            den: Polynomial::one(),
        }
    }

    pub fn num(&self) -> &Polynomial {
        &self.num
    }

    pub fn den(&self) -> &Polynomial {
        &self.den
    }

    pub fn is_zero(&self) -> bool {
        self.num.is_zero()
    }

    /// `deg(den) - deg(num)`; the zero transfer function reports `isize::MAX`.
    pub fn relative_degree(&self) -> isize {
        match self.num.degree() {
            None => isize::MAX,
            Some(n) => self.den.degree().unwrap_or(0) as isize - n as isize,
        }
    }

    pub fn is_proper(&self) -> bool {
        self.relative_degree() >= 0
    }

    /// Order of the denominator.
    pub fn order(&self) -> usize {
        self.den.degree().unwrap_or(0)
    }

    pub fn poles(&self) -> Vec<Complex64> {
        self.den.roots()
    }

    pub fn zeros(&self) -> Vec<Complex64> {
        self.num.roots()
    }

    /// Evaluate at an arbitrary complex point without pole checks.
    pub fn eval(&self, s: Complex64) -> Complex64 {
        self.num.eval_complex(s) / self.den.eval_complex(s)
    }

    /// `num(iω) / den(iω)`.
    pub fn freq_response(&self, omega: f64) -> Result<Complex64, LtiError> {
        let s = Complex64::new(0.0, omega);
        let d = self.den.eval_complex(s);
        if d.norm() <= 1e-13 * self.den.magnitude_bound(omega.abs()) {
            return Err(LtiError::PoleOnAxis { omega });
        }
        Ok(self.num.eval_complex(s) / d)
    }

    pub fn dc_gain(&self) -> Result<f64, LtiError> {
        let d0 = self.den.coeff(0);
        if d0 == 0.0 {
            return Err(LtiError::PoleAtOrigin);
        }
        Ok(self.num.coeff(0) / d0)
    }

    /// Value of `lim s->inf` for proper transfer functions (the direct
    /// feedthrough of any realization).
    pub fn high_frequency_gain(&self) -> Result<f64, LtiError> {
        let rd = self.relative_degree();
        if rd < 0 {
            return Err(LtiError::ImproperTransferFunction { relative_degree: rd });
        }
        if rd > 0 {
            return Ok(0.0);
        }
        Ok(self.num.leading() / self.den.leading())
    }

    pub fn scale(&self, k: f64) -> Self {
        if k == 0.0 {
            return Self::zero();
        }
        TransferFunction {
            num: self.num.scale(k),
            den: self.den.clone(),
        }
    }

    pub fn neg(&self) -> Self {
        self.scale(-1.0)
    }

    pub fn series(&self, other: &Self) -> Result<Self, LtiError> {
        tf_combine(self, other, CombineMode::Series)
    }

    pub fn parallel(&self, other: &Self) -> Result<Self, LtiError> {
        tf_combine(self, other, CombineMode::Parallel)
    }

    pub fn feedback(&self, other: &Self) -> Result<Self, LtiError> {
        tf_combine(self, other, CombineMode::Feedback)
    }

    pub fn sub(&self, other: &Self) -> Result<Self, LtiError> {
        tf_combine(self, &other.neg(), CombineMode::Parallel)
    }

    /// `1 - self`.
    pub fn one_minus(&self) -> Result<Self, LtiError> {
        Self::one().sub(self)
    }

    pub fn add_gain(&self, k: f64) -> Result<Self, LtiError> {
        self.parallel(&Self::gain(k))
    }

    pub fn inverse(&self) -> Result<Self, LtiError> {
        tf_inverse(self)
    }

    /// Re-run canonicalization under explicit tolerances.
    pub fn canonical_with(&self, tol: &Cancellation) -> Result<Self, LtiError> {
        canonicalize(self.num.clone(), self.den.clone(), tol)
    }
}

/// Block-diagram closure of two transfer functions, canonicalized.
pub fn tf_combine(
    a: &TransferFunction,
    b: &TransferFunction,
    mode: CombineMode,
) -> Result<TransferFunction, LtiError> {
    tf_combine_with(a, b, mode, &Cancellation::default())
}

pub fn tf_combine_with(
    a: &TransferFunction,
    b: &TransferFunction,
    mode: CombineMode,
    tol: &Cancellation,
) -> Result<TransferFunction, LtiError> {
    let (num, den) = match mode {
        CombineMode::Series => (&a.num * &b.num, &a.den * &b.den),
        CombineMode::Parallel => {
            if a.den == b.den {
                (&a.num + &b.num, a.den.clone())
            } else {
                (&(&a.num * &b.den) + &(&b.num * &a.den), &a.den * &b.den)
            }
        }
        CombineMode::Feedback => {
            // a / (1 + ab) = na db / (da db + na nb)
            let den = &(&a.den * &b.den) + &(&a.num * &b.num);
            (&a.num * &b.den, den)
        }
    };
    canonicalize(num, den, tol)
}

/// Swap numerator and denominator. The result may be improper.
pub fn tf_inverse(a: &TransferFunction) -> Result<TransferFunction, LtiError> {
    if a.num.is_zero() {
        return Err(LtiError::ZeroNumerator);
    }
    canonicalize(a.den.clone(), a.num.clone(), &Cancellation::default())
}

pub fn dc_gain(a: &TransferFunction) -> Result<f64, LtiError> {
    a.dc_gain()
}

pub fn freq_response(a: &TransferFunction, omega: f64) -> Result<Complex64, LtiError> {
    a.freq_response(omega)
}

struct Cluster {
    center: Complex64,
    mult: usize,
}

fn cluster_roots(poly: &Polynomial, tol: f64) -> Vec<Cluster> {
    let roots = poly.roots();
    let n = roots.len();
    let mut parent: Vec<usize> = (0..n).collect();
    fn find(p: &mut [usize], mut i: usize) -> usize {
        while p[i] != i {
            p[i] = p[p[i]];
            i = p[i];
        }
        i
    }
    for i in 0..n {
        for j in i + 1..n {
            let scale = roots[i].norm().max(roots[j].norm()).max(1.0);
            if (roots[i] - roots[j]).norm() <= tol * scale {
                let (ri, rj) = (find(&mut parent, i), find(&mut parent, j));
                if ri != rj {
                    parent[rj] = ri;
                }
            }
        }
    }
    let mut clusters: Vec<(usize, Complex64, usize)> = Vec::new();
    for i in 0..n {
        let r = find(&mut parent, i);
        match clusters.iter_mut().find(|c| c.0 == r) {
            Some(c) => {
                c.1 += roots[i];
                c.2 += 1;
            }
            None => clusters.push((r, roots[i], 1)),
        }
    }
    clusters
        .into_iter()
        .map(|(_, sum, m)| {
            let mut center = sum / m as f64;
            if m > 1 {
                center = refine_multiple_root(poly, center, m, tol);
            }
            if center.im.abs() <= 1e-12 * center.norm().max(1.0) {
                center.im = 0.0;
            }
            Cluster { center, mult: m }
        })
        .collect()
}

/// A root of multiplicity `m` is a simple root of the `(m-1)`-th derivative,
/// where Newton converges to full precision.
fn refine_multiple_root(poly: &Polynomial, start: Complex64, m: usize, tol: f64) -> Complex64 {
    let mut d = poly.clone();
    for _ in 1..m {
        d = d.derivative();
    }
    let dd = d.derivative();
    let radius = tol * start.norm().max(1.0);
    let mut z = start;
    for _ in 0..20 {
        let slope = dd.eval_complex(z);
        if slope.norm() == 0.0 {
            break;
        }
        let step = d.eval_complex(z) / slope;
        z -= step;
        if step.norm() <= 4.0 * f64::EPSILON * z.norm().max(1.0) {
            break;
        }
    }
    if z.is_finite() && (z - start).norm() <= radius {
        z
    } else {
        start
    }
}

fn cancel_near_origin(poly: &mut Polynomial, exact_opposite: &mut usize, tol: f64) {
    if *exact_opposite == 0 || poly.degree().unwrap_or(0) == 0 {
        return;
    }
    let mut near: Vec<f64> = poly
        .roots()
        .into_iter()
        .filter(|r| r.norm() <= tol)
        .map(|r| r.re)
        .collect();
    near.truncate(*exact_opposite);
    for r in near {
        *poly = poly.deflate(&Polynomial::new(vec![-r, 1.0]));
        *exact_opposite -= 1;
    }
}

fn canonicalize(
    mut num: Polynomial,
    mut den: Polynomial,
    tol: &Cancellation,
) -> Result<TransferFunction, LtiError> {
    if den.is_zero() {
        return Err(LtiError::ZeroDenominator);
    }
    if num.is_zero() {
        return Ok(TransferFunction::zero());
    }

    let k = num.origin_multiplicity().min(den.origin_multiplicity());
    if k > 0 {
        num = num.unshift(k);
        den = den.unshift(k);
    }

    // remaining origin roots are exact; keep them out of the numerical
    // cancellation and restore them afterwards
    let (mut kn, mut kd) = (num.origin_multiplicity(), den.origin_multiplicity());
    num = num.unshift(kn);
    den = den.unshift(kd);
    // a root perturbed off the origin cancels an exact origin root opposite
    cancel_near_origin(&mut num, &mut kd, tol.match_tol);
    cancel_near_origin(&mut den, &mut kn, tol.match_tol);

    if num.degree().unwrap_or(0) > 0 && den.degree().unwrap_or(0) > 0 {
        let mut zc = cluster_roots(&num, tol.cluster_tol);
        let pc = cluster_roots(&den, tol.cluster_tol);
        let mut cancelled = Vec::new();
        for p in &pc {
            let hit = zc.iter_mut().find(|z| {
                z.mult > 0
                    && (z.center - p.center).norm()
                        <= tol.match_tol * z.center.norm().max(p.center.norm()).max(1.0)
            });
            if let Some(z) = hit {
                let m = z.mult.min(p.mult);
                z.mult -= m;
                let c = (z.center + p.center) * 0.5;
                cancelled.extend(std::iter::repeat_n(c, m));
            }
        }
        if !cancelled.is_empty() {
            // conjugate partners are matched independently; keep the factor
            // real by pairing whatever survived
            let factor = real_factor(&cancelled);
            if factor.degree().unwrap_or(0) > 0 {
                num = num.deflate(&factor);
                den = den.deflate(&factor);
            }
        }
    }

    num = num.shift(kn);
    den = den.shift(kd);
    let deg = num.degree().unwrap_or(0).max(den.degree().unwrap_or(0));
    if deg > tol.max_degree {
        return Err(LtiError::DegreeOverflow {
            degree: deg,
            cap: tol.max_degree,
        });
    }
    if den.is_zero() {
        return Err(LtiError::ZeroDenominator);
    }
    let lead = den.leading();
    Ok(TransferFunction {
        num: num.scale(1.0 / lead),
        den: den.scale(1.0 / lead),
    })
}

/// Real polynomial whose roots are the given cancelled centers. Complex
/// centers without a cancelled conjugate are dropped.
fn real_factor(centers: &[Complex64]) -> Polynomial {
    let mut reals = Vec::new();
    let mut upper: Vec<Complex64> = Vec::new();
    let mut lower: Vec<Complex64> = Vec::new();
    for &c in centers {
        if c.im == 0.0 {
            reals.push(c);
        } else if c.im > 0.0 {
            upper.push(c);
        } else {
            lower.push(c);
        }
    }
    let mut roots = reals;
    for u in upper {
        let scale = u.norm().max(1.0);
        if let Some(pos) = lower
            .iter()
            .position(|l| (l.conj() - u).norm() <= 1e-6 * scale)
        {
            let l = lower.swap_remove(pos);
            let avg = (u + l.conj()) * 0.5;
            roots.push(avg);
            roots.push(avg.conj());
        }
    }
    Polynomial::from_roots(&roots, 1.0)
}

impl fmt::Display for TransferFunction {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "({}) / ({})", self.num, self.den)
    }
}
