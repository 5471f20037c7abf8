//! Road profiles: a pure sinusoid, a seeded ISO 8608 class C random
//! profile, and CSV traces with header `t,z_r` in SI units.

use std::f64::consts::PI;
use std::path::{Path, PathBuf};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::lti::SignalTrace;

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RoadKind {
    Sinusoid,
    IsoClassC,
    FromFile,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RoadSpec {
    pub kind: RoadKind,
    /// Sinusoid peak, m.
    pub amplitude: f64,
    /// Sinusoid angular frequency, rad/s.
    pub frequency: f64,
    pub seed: u64,
    /// Travel speed for the spatial profile, m/s.
    pub velocity: f64,
    /// Displacement PSD at the reference spatial frequency, m³.
    pub roughness: f64,
    /// Reference spatial frequency, cycles/m.
    pub reference_frequency: f64,
    /// Spatial band of the synthesis, cycles/m.
    pub band: (f64, f64),
    pub components: usize,
    pub duration: f64,
    pub dt: f64,
    pub path: Option<PathBuf>,
}

impl Default for RoadSpec {
    fn default() -> Self {
        RoadSpec {
            kind: RoadKind::Sinusoid,
            amplitude: 0.015,
            frequency: 5.0,
            seed: 0,
            velocity: 10.0,
            roughness: ISO_C_ROUGHNESS,
            reference_frequency: ISO_REFERENCE_FREQUENCY,
            band: (0.01, 10.0),
            components: 2000,
            duration: 10.0,
            dt: crate::vehicle::DEFAULT_DT,
            path: None,
        }
    }
}

/// Class C midpoint of the displacement PSD at the reference frequency.
pub const ISO_C_ROUGHNESS: f64 = 256e-6;
pub const ISO_REFERENCE_FREQUENCY: f64 = 0.1;

impl RoadSpec {
    pub fn sinusoid() -> Self {
        RoadSpec::default()
    }

    pub fn iso_class_c(seed: u64) -> Self {
        RoadSpec {
            kind: RoadKind::IsoClassC,
            seed,
            ..RoadSpec::default()
        }
    }

    pub fn from_file(path: impl Into<PathBuf>) -> Self {
        RoadSpec {
            kind: RoadKind::FromFile,
            path: Some(path.into()),
            ..RoadSpec::default()
        }
    }

    pub fn samples(&self) -> usize {
        (self.duration / self.dt).round() as usize
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::InvalidParams(m));
        if self.kind == RoadKind::FromFile {
            return match self.path {
                Some(_) => Ok(()),
                None => bad("file road needs a path".into()),
            };
        }
        if !(self.duration > 0.0) || !(self.dt > 0.0) {
            return bad(format!("duration and dt must be positive, got {} and {}", self.duration, self.dt));
        }
        if !(self.amplitude >= 0.0) {
            return bad(format!("amplitude must be non-negative, got {}", self.amplitude));
        }
        if self.kind == RoadKind::IsoClassC {
            if !(self.velocity > 0.0) {
                return bad(format!("velocity must be positive, got {}", self.velocity));
            }
            if !(self.band.0 > 0.0 && self.band.1 > self.band.0) || self.components == 0 {
                return bad(format!("invalid spatial band {:?} or component count", self.band));
            }
            if !(self.roughness >= 0.0) || !(self.reference_frequency > 0.0) {
                return bad("roughness must be non-negative and reference frequency positive".into());
            }
        }
        Ok(())
    }

    pub fn generate(&self) -> Result<SignalTrace> {
        self.validate()?;
        match self.kind {
            RoadKind::Sinusoid => gen_sinusoid(self),
            RoadKind::IsoClassC => gen_iso_class_c(self),
            RoadKind::FromFile => load_road(self.path.as_deref().expect("validated")),
        }
    }
}

/// `z_r(t) = A sin(ω t)`.
pub fn gen_sinusoid(spec: &RoadSpec) -> Result<SignalTrace> {
    let (a, w) = (spec.amplitude, spec.frequency);
    Ok(SignalTrace::from_fn(spec.dt, spec.samples(), "z_r", |t| a * (w * t).sin())?)
}

/// Superposition of sinusoids whose amplitudes follow the spatial PSD
/// `G(n) = G(n₀) (n/n₀)⁻²` over `spec.band`, with uniformly random phases
/// and frequencies jittered within equal-width bins. Sampled in time at the
/// travel speed `spec.velocity`.
pub fn gen_iso_class_c(spec: &RoadSpec) -> Result<SignalTrace> {
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let (lo, hi) = spec.band;
    let m = spec.components;
    let dn = (hi - lo) / m as f64;
    let comps: Vec<(f64, f64, f64)> = (0..m)
        .map(|i| {
            let n = lo + (i as f64 + rng.gen::<f64>()) * dn;
            let psd = spec.roughness * (n / spec.reference_frequency).powi(-2);
            let amp = (2.0 * psd * dn).sqrt();
            let omega = 2.0 * PI * n * spec.velocity;
            let phase = rng.gen::<f64>() * 2.0 * PI;
            (amp, omega, phase)
        })
        .collect();
    Ok(SignalTrace::from_fn(spec.dt, spec.samples(), "z_r", |t| {
        comps.iter().map(|&(a, w, p)| a * (w * t + p).cos()).sum()
    })?)
}

/// Mean-square elevation implied by the PSD over the band.
pub fn iso_mean_square(spec: &RoadSpec) -> f64 {
    let (lo, hi) = spec.band;
    spec.roughness * spec.reference_frequency.powi(2) * (1.0 / lo - 1.0 / hi)
}

/// Read a `t,z_r` CSV with uniform sampling.
pub fn load_road(path: &Path) -> Result<SignalTrace> {
    let malformed = |reason: String| Error::MalformedFile {
        path: path.to_path_buf(),
        reason,
    };
    let file = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
    let mut rdr = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(file);
    let headers = rdr.headers().map_err(|e| malformed(e.to_string()))?.clone();
    if headers.len() != 2 || &headers[0] != "t" || &headers[1] != "z_r" {
        return Err(malformed(format!("expected header `t,z_r`, got `{}`", headers.iter().collect::<Vec<_>>().join(","))));
    }
    let mut t = Vec::new();
    let mut z = Vec::new();
    for (row, rec) in rdr.records().enumerate() {
        let rec = rec.map_err(|e| malformed(e.to_string()))?;
        let parse = |i: usize| -> Result<f64> {
            rec.get(i)
                .and_then(|s| s.parse::<f64>().ok())
                .filter(|v| v.is_finite())
                .ok_or_else(|| malformed(format!("row {}: bad number in column {}", row + 1, i + 1)))
        };
        t.push(parse(0)?);
        z.push(parse(1)?);
    }
    if t.len() < 2 {
        return Err(malformed("at least two rows are needed to infer dt".into()));
    }
    let dt = (t[t.len() - 1] - t[0]) / (t.len() - 1) as f64;
    if !(dt > 0.0) {
        return Err(malformed("time column must increase".into()));
    }
    let tol = 1e-6 * dt;
    for (k, &tk) in t.iter().enumerate() {
        if (tk - t[0] - k as f64 * dt).abs() > tol {
            return Err(Error::NonuniformSampling {
                path: path.to_path_buf(),
                row: k + 1,
            });
        }
    }
    Ok(SignalTrace::new(dt, z, "z_r")?)
}

pub fn write_road(path: &Path, road: &SignalTrace) -> Result<()> {
    let io = |e: std::io::Error| Error::io(path, e);
    let mut w = csv::Writer::from_path(path).map_err(|e| io(e.into()))?;
    w.write_record(["t", "z_r"]).map_err(|e| io(e.into()))?;
    for (t, z) in road.times().zip(road.samples()) {
        w.write_record([t.to_string(), z.to_string()]).map_err(|e| io(e.into()))?;
    }
    w.flush().map_err(io)
}
