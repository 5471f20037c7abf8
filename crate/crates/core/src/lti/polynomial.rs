//! Real polynomials in the Laplace variable, coefficients in ascending powers.

use std::fmt;
use std::ops::{Add, Mul, Neg, Sub};

use nalgebra::DMatrix;
use num_complex::Complex64;
use serde::{Deserialize, Serialize};

/// Real polynomial `c[0] + c[1] s + ... + c[n] s^n`.
///
/// Trailing (highest-power) zero coefficients are trimmed on construction, so
/// the zero polynomial has an empty coefficient list and no degree.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(from = "Vec<f64>", into = "Vec<f64>")]
pub struct Polynomial {
    coeffs: Vec<f64>,
}

impl From<Vec<f64>> for Polynomial {
    fn from(v: Vec<f64>) -> Self {
        Polynomial::new(v)
    }
}

impl From<Polynomial> for Vec<f64> {
    fn from(p: Polynomial) -> Self {
        p.coeffs
    }
}

impl Polynomial {
    pub fn new(coeffs: impl Into<Vec<f64>>) -> Self {
        let mut coeffs = coeffs.into();
        while coeffs.last() == Some(&0.0) {
            coeffs.pop();
        }
        Polynomial { coeffs }
    }

    pub fn zero() -> Self {
        Polynomial { coeffs: Vec::new() }
    }

    pub fn one() -> Self {
        Polynomial::constant(1.0)
    }

    pub fn constant(c: f64) -> Self {
        Polynomial::new(vec![c])
    }

    /// The polynomial `s`.
    pub fn s() -> Self {
        Polynomial::new(vec![0.0, 1.0])
    }

    /// `gain * prod (s - r)`. Complex roots must come in conjugate pairs; the
    /// imaginary residue of the expansion is discarded.
    pub fn from_roots(roots: &[Complex64], gain: f64) -> Self {
        let mut acc = vec![Complex64::new(1.0, 0.0)];
        for &r in roots {
            let mut next = vec![Complex64::new(0.0, 0.0); acc.len() + 1];
            for (k, &c) in acc.iter().enumerate() {
                next[k + 1] += c;
                next[k] -= c * r;
            }
            acc = next;
        }
        Polynomial::new(acc.into_iter().map(|c| c.re * gain).collect::<Vec<_>>())
    }

    pub fn coeffs(&self) -> &[f64] {
        &self.coeffs
    }

    /// `None` for the zero polynomial.
    pub fn degree(&self) -> Option<usize> {
        self.coeffs.len().checked_sub(1)
    }

    pub fn is_zero(&self) -> bool {
        self.coeffs.is_empty()
    }

    /// Highest-order coefficient, 0 for the zero polynomial.
    pub fn leading(&self) -> f64 {
        self.coeffs.last().copied().unwrap_or(0.0)
    }

    /// Coefficient of `s^k`, 0 beyond the degree.
    pub fn coeff(&self, k: usize) -> f64 {
        self.coeffs.get(k).copied().unwrap_or(0.0)
    }

    /// Number of exactly-zero low-order coefficients, i.e. the multiplicity
    /// of the root at the origin.
    pub fn origin_multiplicity(&self) -> usize {
        self.coeffs.iter().take_while(|&&c| c == 0.0).count()
    }

    pub fn eval(&self, x: f64) -> f64 {
        self.coeffs.iter().rev().fold(0.0, |acc, &c| acc * x + c)
    }

    pub fn eval_complex(&self, z: Complex64) -> Complex64 {
        self.coeffs
            .iter()
            .rev()
            .fold(Complex64::new(0.0, 0.0), |acc, &c| acc * z + c)
    }

    /// Sum of `|c_k| |z|^k`, the natural scale against which a value of
    /// `eval_complex(z)` is judged to be zero.
    pub fn magnitude_bound(&self, z_abs: f64) -> f64 {
        self.coeffs
            .iter()
            .rev()
            .fold(0.0, |acc, &c| acc * z_abs + c.abs())
    }

    pub fn scale(&self, k: f64) -> Self {
        Polynomial::new(self.coeffs.iter().map(|c| c * k).collect::<Vec<_>>())
    }

    pub fn derivative(&self) -> Self {
        Polynomial::new(
            self.coeffs
                .iter()
                .enumerate()
                .skip(1)
                .map(|(k, c)| c * k as f64)
                .collect::<Vec<_>>(),
        )
    }

    /// Multiply by `s^k`.
    pub fn shift(&self, k: usize) -> Self {
        if self.is_zero() {
            return Polynomial::zero();
        }
        let mut c = vec![0.0; k];
        c.extend_from_slice(&self.coeffs);
        Polynomial::new(c)
    }

    /// Divide by `s^k`, dropping the low-order coefficients.
    pub fn unshift(&self, k: usize) -> Self {
        Polynomial::new(self.coeffs.iter().skip(k).copied().collect::<Vec<_>>())
    }

    /// Long division; panics on a zero divisor.
    pub fn div_rem(&self, divisor: &Polynomial) -> (Polynomial, Polynomial) {
        let dd = divisor.degree().expect("division by the zero polynomial");
        let Some(nd) = self.degree() else {
            return (Polynomial::zero(), Polynomial::zero());
        };
        if nd < dd {
            return (Polynomial::zero(), self.clone());
        }
        let lead = divisor.leading();
        let mut rem = self.coeffs.clone();
        let mut quot = vec![0.0; nd - dd + 1];
        for k in (0..=nd - dd).rev() {
            let q = rem[k + dd] / lead;
            quot[k] = q;
            for (i, &dc) in divisor.coeffs.iter().enumerate() {
                rem[k + i] -= q * dc;
            }
            rem[k + dd] = 0.0;
        }
        rem.truncate(dd);
        (Polynomial::new(quot), Polynomial::new(rem))
    }

    /// Quotient by a divisor known to be (approximately) a factor. Runs
    /// the division from both ends and joins the two where they agree best,
    /// so roundoff is not pushed into either end of the quotient.
    pub fn deflate(&self, divisor: &Polynomial) -> Polynomial {
        let (top, _) = self.div_rem(divisor);
        let (Some(nd), Some(dd)) = (self.degree(), divisor.degree()) else {
            return top;
        };
        if nd < dd || divisor.coeffs[0] == 0.0 {
            return top;
        }
        let qd = nd - dd;
        let mut rem = self.coeffs.clone();
        let mut bottom = vec![0.0; qd + 1];
        let c0 = divisor.coeffs[0];
        for k in 0..=qd {
            let q = rem[k] / c0;
            bottom[k] = q;
            for (i, &dc) in divisor.coeffs.iter().enumerate() {
                rem[k + i] -= q * dc;
            }
        }
        let top = top.coeffs;
        if top.len() != bottom.len() {
            return Polynomial::new(top);
        }
        let split = (0..=qd + 1)
            .min_by(|&a, &b| {
                let gap = |k: usize| {
                    if k == 0 || k > qd {
                        f64::INFINITY
                    } else {
                        let (x, y) = (top[k - 1], bottom[k - 1]);
                        (x - y).abs() / x.abs().max(y.abs()).max(f64::MIN_POSITIVE)
                    }
                };
                gap(a).total_cmp(&gap(b))
            })
            .unwrap_or(0);
        let joined = (0..=qd).map(|k| if k < split { bottom[k] } else { top[k] }).collect::<Vec<_>>();
        Polynomial::new(joined)
    }

    /// All complex roots, from the eigenvalues of the balanced companion
    /// matrix, each polished by Newton steps where that reduces the residual.
    pub fn roots(&self) -> Vec<Complex64> {
        let Some(n) = self.degree() else {
            return Vec::new();
        };
        let zeros_at_origin = self.origin_multiplicity();
        let reduced = self.unshift(zeros_at_origin);
        let m = n - zeros_at_origin;
        let mut roots = vec![Complex64::new(0.0, 0.0); zeros_at_origin];
        match m {
            0 => {}
            1 => roots.push(Complex64::new(-reduced.coeffs[0] / reduced.coeffs[1], 0.0)),
            2 => roots.extend(quadratic_roots(
                reduced.coeffs[2],
                reduced.coeffs[1],
                reduced.coeffs[0],
            )),
            _ => {
                let lead = reduced.leading();
                let mut comp = DMatrix::<f64>::zeros(m, m);
                for i in 1..m {
                    comp[(i, i - 1)] = 1.0;
                }
                for i in 0..m {
                    comp[(i, m - 1)] = -reduced.coeffs[i] / lead;
                }
                balance_in_place(&mut comp);
                let eig = comp.complex_eigenvalues();
                roots.extend(eig.iter().map(|&r| polish_root(&reduced, r)));
            }
        }
        roots
    }
}

fn quadratic_roots(a: f64, b: f64, c: f64) -> Vec<Complex64> {
    let disc = b * b - 4.0 * a * c;
    if disc >= 0.0 {
        let sq = disc.sqrt();
        let q = -0.5 * (b + b.signum() * sq);
        if q == 0.0 {
            return vec![Complex64::new(0.0, 0.0); 2];
        }
        vec![Complex64::new(q / a, 0.0), Complex64::new(c / q, 0.0)]
    } else {
        let re = -b / (2.0 * a);
        let im = (-disc).sqrt() / (2.0 * a.abs());
        vec![Complex64::new(re, im), Complex64::new(re, -im)]
    }
}

fn polish_root(p: &Polynomial, mut r: Complex64) -> Complex64 {
    let dp = p.derivative();
    let mut res = p.eval_complex(r).norm();
    for _ in 0..3 {
        let d = dp.eval_complex(r);
        if d.norm() == 0.0 {
            break;
        }
        let cand = r - p.eval_complex(r) / d;
        let cand_res = p.eval_complex(cand).norm();
        if !(cand_res < res) {
            break;
        }
        r = cand;
        res = cand_res;
    }
    if r.im.abs() <= 1e-14 * r.norm() {
        r.im = 0.0;
    }
    r
}

/// Parlett–Reinsch diagonal similarity balancing with power-of-two scales.
pub(crate) fn balance_in_place(a: &mut DMatrix<f64>) -> Vec<f64> {
    let n = a.nrows();
    let mut scales = vec![1.0; n];
    let radix = 2.0f64;
    let mut converged = false;
    while !converged {
        converged = true;
        for i in 0..n {
            let mut c = 0.0;
            let mut r = 0.0;
            for j in 0..n {
                if j != i {
                    c += a[(j, i)].abs();
                    r += a[(i, j)].abs();
                }
            }
            if c == 0.0 || r == 0.0 {
                continue;
            }
            let s = c + r;
            let mut f = 1.0;
            let mut g = r / radix;
            while c < g {
                f *= radix;
                c *= radix * radix;
            }
            g = r * radix;
            while c > g {
                f /= radix;
                c /= radix * radix;
            }
            if (c + r) / f < 0.95 * s {
                converged = false;
                scales[i] *= f;
                for j in 0..n {
                    a[(i, j)] /= f;
                    a[(j, i)] *= f;
                }
            }
        }
    }
    scales
}

impl Add for &Polynomial {
    type Output = Polynomial;
    fn add(self, rhs: &Polynomial) -> Polynomial {
        let n = self.coeffs.len().max(rhs.coeffs.len());
        Polynomial::new((0..n).map(|k| self.coeff(k) + rhs.coeff(k)).collect::<Vec<_>>())
    }
}

impl Sub for &Polynomial {
    type Output = Polynomial;
    fn sub(self, rhs: &Polynomial) -> Polynomial {
        let n = self.coeffs.len().max(rhs.coeffs.len());
        Polynomial::new((0..n).map(|k| self.coeff(k) - rhs.coeff(k)).collect::<Vec<_>>())
    }
}

impl Mul for &Polynomial {
    type Output = Polynomial;
    fn mul(self, rhs: &Polynomial) -> Polynomial {
        poly_mul(self, rhs)
    }
}

impl Neg for &Polynomial {
    type Output = Polynomial;
    fn neg(self) -> Polynomial {
        self.scale(-1.0)
    }
}

/// Coefficient convolution.
pub fn poly_mul(a: &Polynomial, b: &Polynomial) -> Polynomial {
    if a.is_zero() || b.is_zero() {
        return Polynomial::zero();
    }
    let mut out = vec![0.0; a.coeffs.len() + b.coeffs.len() - 1];
    for (i, &x) in a.coeffs.iter().enumerate() {
        for (j, &y) in b.coeffs.iter().enumerate() {
            out[i + j] += x * y;
        }
    }
    Polynomial::new(out)
}

impl fmt::Display for Polynomial {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        if self.is_zero() {
            return write!(f, "0");
        }
        let mut first = true;
        for (k, &c) in self.coeffs.iter().enumerate() {
            if c == 0.0 {
                continue;
            }
            if !first {
                write!(f, " + ")?;
            }
            first = false;
            match k {
                0 => write!(f, "{c}")?,
                1 => write!(f, "{c} s")?,
                _ => write!(f, "{c} s^{k}")?,
            }
        }
        Ok(())
    }
}
