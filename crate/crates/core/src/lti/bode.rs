use std::io::Write;

use super::transfer_function::TransferFunction;
use super::LtiError;

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct BodePoint {
    pub omega: f64,
    pub magnitude_db: f64,
    pub phase_deg: f64,
}

/// `n` points logarithmically spaced over `[lo, hi]`.
pub fn log_space(lo: f64, hi: f64, n: usize) -> Vec<f64> {
    if n == 1 {
        return vec![lo];
    }
    let (a, b) = (lo.log10(), hi.log10());
    (0..n)
        .map(|k| 10f64.powf(a + (b - a) * k as f64 / (n - 1) as f64))
        .collect()
}

/// Magnitude in dB and phase in degrees, unwrapped along the sweep.
pub fn bode_data(tf: &TransferFunction, omegas: &[f64]) -> Result<Vec<BodePoint>, LtiError> {
    let mut out = Vec::with_capacity(omegas.len());
    let mut prev: Option<f64> = None;
    for &w in omegas {
        let h = tf.freq_response(w)?;
        let mut phase = h.arg().to_degrees();
        if let Some(p) = prev {
            while phase - p > 180.0 {
                phase -= 360.0;
            }
            while phase - p < -180.0 {
                phase += 360.0;
            }
        }
        prev = Some(phase);
        out.push(BodePoint {
            omega: w,
            magnitude_db: 20.0 * h.norm().log10(),
            phase_deg: phase,
        });
    }
    Ok(out)
}

/// CSV with header `omega_rad_s,magnitude_db,phase_deg`.
pub fn write_bode_csv<W: Write>(mut w: W, points: &[BodePoint]) -> std::io::Result<()> {
    writeln!(w, "omega_rad_s,magnitude_db,phase_deg")?;
    for p in points {
        writeln!(w, "{},{},{}", p.omega, p.magnitude_db, p.phase_deg)?;
    }
    Ok(())
}
