#![allow(dead_code)]

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use roadsense::fleet::table_row;
use roadsense::lti::SignalTrace;
use roadsense::vehicle::VehicleParams;

/// Sum of sinusoids with frequencies in `band` (rad/s), seeded.
#[derive(Clone, Debug)]
pub struct Multisine {
    pub terms: Vec<(f64, f64, f64)>,
}

impl Multisine {
    pub fn new(seed: u64, n: usize, band: (f64, f64), amplitude: f64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let terms = (0..n)
            .map(|_| {
                let w = rng.gen_range(band.0..band.1);
                let a = amplitude * rng.gen_range(0.2..1.0);
                (a, w, rng.gen_range(0.0..std::f64::consts::TAU))
            })
            .collect();
        Multisine { terms }
    }

    /// Zero at t = 0 so that a system at rest sees no step.
    pub fn value(&self, t: f64) -> f64 {
        self.terms.iter().map(|&(a, w, p)| a * ((w * t + p).sin() - p.sin())).sum()
    }

    pub fn rate(&self, t: f64) -> f64 {
        self.terms.iter().map(|&(a, w, p)| a * w * (w * t + p).cos()).sum()
    }

    pub fn trace(&self, dt: f64, n: usize, label: &str) -> SignalTrace {
        SignalTrace::from_fn(dt, n, label, |t| self.value(t)).unwrap()
    }
}

/// Quarter-car equations of motion integrated by classical RK4 with `sub`
/// steps per sample. Returns `(z_s, z_us)` at the sample instants.
pub fn rk4_quarter_car(
    p: &VehicleParams,
    force: impl Fn(f64) -> f64,
    road: impl Fn(f64) -> f64,
    road_rate: impl Fn(f64) -> f64,
    dt: f64,
    n: usize,
    sub: usize,
) -> (Vec<f64>, Vec<f64>) {
    let f = |x: &[f64; 4], t: f64| -> [f64; 4] {
        let [zs, zus, vs, vus] = *x;
        let susp = p.k_s * (zs - zus) + p.c_s * (vs - vus);
        let tire = p.k_us * (zus - road(t)) + p.c_us * (vus - road_rate(t));
        [vs, vus, (force(t) - susp) / p.m_s, (susp - tire - force(t)) / p.m_us]
    };
    let h = dt / sub as f64;
    let mut x = [0.0; 4];
    let (mut zs, mut zus) = (Vec::with_capacity(n), Vec::with_capacity(n));
    for k in 0..n {
        zs.push(x[0]);
        zus.push(x[1]);
        for s in 0..sub {
            let t = k as f64 * dt + s as f64 * h;
            let add = |a: &[f64; 4], b: &[f64; 4], c: f64| [a[0] + c * b[0], a[1] + c * b[1], a[2] + c * b[2], a[3] + c * b[3]];
            let k1 = f(&x, t);
            let k2 = f(&add(&x, &k1, 0.5 * h), t + 0.5 * h);
            let k3 = f(&add(&x, &k2, 0.5 * h), t + 0.5 * h);
            let k4 = f(&add(&x, &k3, h), t + h);
            for i in 0..4 {
                x[i] += h / 6.0 * (k1[i] + 2.0 * k2[i] + 2.0 * k3[i] + k4[i]);
            }
        }
    }
    (zs, zus)
}

pub fn rel_l2(a: &[f64], b: &[f64]) -> f64 {
    let err: f64 = a.iter().zip(b).map(|(x, y)| (x - y).powi(2)).sum();
    let norm: f64 = b.iter().map(|y| y * y).sum();
    (err / norm).sqrt()
}

pub fn table_params(j: usize) -> VehicleParams {
    table_row(j, 1.0 / 15.0).unwrap().0
}
