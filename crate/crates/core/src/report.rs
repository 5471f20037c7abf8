//! Error metrics, convergence fitting and figure data.
//!
//! `emit_figures` writes into the output directory:
//!
//! | file | columns |
//! |------|---------|
//! | `rmse_vs_agent.csv` | `position,j,rmse_mm` |
//! | `estimates.csv` | `t,z_r,z_r_hat_<position>...` for the selected agents |
//! | `first_vs_last_error.csv` | `t,error_first,error_last` (road estimate error, m) |
//! | `learning_signals.csv` | `t,d_f_<position>...` for the selected agents (N) |
//!
//! Each CSV has an 800×500 SVG line chart of the same name.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use crate::error::{Error, Result};
use crate::lti::{LtiError, SignalTrace};

/// Root-mean-square difference after discarding the first `skip` seconds,
/// in millimetres.
pub fn rmse(estimate: &SignalTrace, truth: &SignalTrace, skip: f64) -> Result<f64> {
    estimate.check_compatible(truth)?;
    let start = (skip / truth.dt()).round() as usize;
    if start >= truth.len() {
        return Err(LtiError::InvalidArgument(format!(
            "skip of {skip} s leaves no samples in a {} s trace",
            truth.duration()
        ))
        .into());
    }
    let diff = estimate.sub(truth)?.tail(start);
    Ok(diff.rms() * 1e3)
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ConvergenceFit {
    pub floor: f64,
    pub scale: f64,
    pub rate: f64,
    pub r_squared: f64,
}

/// Least-squares fit of `y_k ≈ floor + scale · rate^k`, `k` from 0.
///
/// For a fixed rate the model is linear in `(floor, scale)`; the rate is
/// found by golden-section search on the residual over `(0, 1)`.
pub fn convergence_fit(series: &[f64]) -> Result<ConvergenceFit> {
    if series.len() < 10 {
        return Err(Error::DegenerateFit(format!("need at least 10 points, got {}", series.len())));
    }
    if series.iter().any(|v| !v.is_finite()) {
        return Err(Error::DegenerateFit("series has non-finite values".into()));
    }
    let mean = series.iter().sum::<f64>() / series.len() as f64;
    let sst: f64 = series.iter().map(|v| (v - mean).powi(2)).sum();
    if sst <= 1e-24 * mean.abs().max(1.0).powi(2) {
        return Err(Error::DegenerateFit("series is constant".into()));
    }

    let solve = |rate: f64| -> (f64, f64, f64) {
        let n = series.len() as f64;
        let (mut sx, mut sxx, mut sy, mut sxy) = (0.0, 0.0, 0.0, 0.0);
        for (k, &y) in series.iter().enumerate() {
            let x = rate.powi(k as i32);
            sx += x;
            sxx += x * x;
            sy += y;
            sxy += x * y;
        }
        let det = n * sxx - sx * sx;
        let (floor, scale) = if det.abs() < 1e-300 {
            (sy / n, 0.0)
        } else {
            ((sxx * sy - sx * sxy) / det, (n * sxy - sx * sy) / det)
        };
        let sse = series
            .iter()
            .enumerate()
            .map(|(k, &y)| (y - floor - scale * rate.powi(k as i32)).powi(2))
            .sum();
        (floor, scale, sse)
    };

    // coarse scan then golden-section refinement
    let grid: Vec<f64> = (1..200).map(|i| i as f64 / 200.0).collect();
    let best = grid
        .iter()
        .copied()
        .min_by(|&a, &b| solve(a).2.total_cmp(&solve(b).2))
        .expect("nonempty grid");
    let (mut lo, mut hi) = ((best - 0.005).max(1e-9), (best + 0.005).min(1.0 - 1e-9));
    let g = (5f64.sqrt() - 1.0) / 2.0;
    let (mut c, mut d) = (hi - g * (hi - lo), lo + g * (hi - lo));
    for _ in 0..200 {
        if solve(c).2 < solve(d).2 {
            hi = d;
        } else {
            lo = c;
        }
        c = hi - g * (hi - lo);
        d = lo + g * (hi - lo);
        if hi - lo < 1e-14 {
            break;
        }
    }
    let rate = 0.5 * (lo + hi);
    let (floor, scale, sse) = solve(rate);
    Ok(ConvergenceFit {
        floor,
        scale,
        rate,
        r_squared: 1.0 - sse / sst,
    })
}

/// Per-agent results needed for the figures.
#[derive(Clone, Copy, Debug)]
pub struct FigureAgent<'a> {
    pub position: usize,
    pub j: usize,
    pub rmse_mm: f64,
    pub traces: Option<AgentTraces<'a>>,
}

#[derive(Clone, Copy, Debug)]
pub struct AgentTraces<'a> {
    pub z_r: &'a SignalTrace,
    pub z_r_hat: &'a SignalTrace,
    pub d_f: &'a SignalTrace,
}

/// Write the figure CSVs and SVGs for `agents` (in cascade order) into
/// `out_dir`. Time series are written for the positions in `selected` that
/// carry traces; the first-vs-last comparison uses the first and last
/// agents that carry traces. Returns the paths written.
pub fn emit_figures(agents: &[FigureAgent<'_>], selected: &[usize], out_dir: &Path) -> Result<Vec<PathBuf>> {
    std::fs::create_dir_all(out_dir).map_err(|e| Error::io(out_dir, e))?;
    let mut written = Vec::new();

    let positions: Vec<f64> = agents.iter().map(|a| a.position as f64).collect();
    let rmses: Vec<f64> = agents.iter().map(|a| a.rmse_mm).collect();
    let rows: Vec<Vec<String>> = agents
        .iter()
        .map(|a| vec![a.position.to_string(), a.j.to_string(), a.rmse_mm.to_string()])
        .collect();
    written.extend(write_figure(
        out_dir,
        "rmse_vs_agent",
        &["position", "j", "rmse_mm"],
        &rows,
        "Road estimate RMSE per agent",
        "cascade position",
        "RMSE (mm)",
        &positions,
        &[("rmse_mm", &rmses)],
    )?);

    let traced = |p: &usize| agents.iter().find(|a| a.position == *p).and_then(|a| a.traces.map(|t| (a.position, t)));
    let chosen: Vec<(usize, AgentTraces<'_>)> = selected.iter().filter_map(traced).collect();
    if chosen.is_empty() {
        return Ok(written);
    }
    let z_r = chosen[0].1.z_r;
    let t: Vec<f64> = z_r.times().collect();

    let mut header = vec!["t".to_string(), "z_r".to_string()];
    let mut series: Vec<(String, &[f64])> = vec![("z_r".into(), z_r.samples())];
    for (p, tr) in &chosen {
        header.push(format!("z_r_hat_{p}"));
        series.push((format!("z_r_hat_{p}"), tr.z_r_hat.samples()));
    }
    written.extend(write_series_figure(out_dir, "estimates", &header, &t, &series, "Road profile estimates", "z (m)")?);

    let mut all = agents.iter().filter_map(|a| a.traces);
    let first = all.next().expect("a selected agent carries traces");
    let last = all.next_back().unwrap_or(first);
    let err_first = first.z_r_hat.sub(first.z_r)?;
    let err_last = last.z_r_hat.sub(last.z_r)?;
    let header = vec!["t".to_string(), "error_first".into(), "error_last".into()];
    let series = vec![
        ("error_first".to_string(), err_first.samples()),
        ("error_last".to_string(), err_last.samples()),
    ];
    let tt: Vec<f64> = first.z_r.times().collect();
    written.extend(write_series_figure(
        out_dir,
        "first_vs_last_error",
        &header,
        &tt,
        &series,
        "Road estimate error, first and last agent",
        "error (m)",
    )?);

    let mut header = vec!["t".to_string()];
    let mut series: Vec<(String, &[f64])> = Vec::new();
    for (p, tr) in &chosen {
        header.push(format!("d_f_{p}"));
        series.push((format!("d_f_{p}"), tr.d_f.samples()));
    }
    written.extend(write_series_figure(out_dir, "learning_signals", &header, &t, &series, "Learning signals", "d_f (N)")?);
    Ok(written)
}

#[allow(clippy::too_many_arguments)]
fn write_figure(
    dir: &Path,
    stem: &str,
    header: &[&str],
    rows: &[Vec<String>],
    title: &str,
    xlabel: &str,
    ylabel: &str,
    x: &[f64],
    series: &[(&str, &[f64])],
) -> Result<Vec<PathBuf>> {
    let csv_path = dir.join(format!("{stem}.csv"));
    let io = |e: std::io::Error| Error::io(&csv_path, e);
    let mut w = csv::Writer::from_path(&csv_path).map_err(|e| io(e.into()))?;
    w.write_record(header).map_err(|e| io(e.into()))?;
    for r in rows {
        w.write_record(r).map_err(|e| io(e.into()))?;
    }
    w.flush().map_err(io)?;
    let svg_path = dir.join(format!("{stem}.svg"));
    std::fs::write(&svg_path, line_chart_svg(title, xlabel, ylabel, x, series)).map_err(|e| Error::io(&svg_path, e))?;
    Ok(vec![csv_path, svg_path])
}

fn write_series_figure(
    dir: &Path,
    stem: &str,
    header: &[String],
    t: &[f64],
    series: &[(String, &[f64])],
    title: &str,
    ylabel: &str,
) -> Result<Vec<PathBuf>> {
    let rows: Vec<Vec<String>> = (0..t.len())
        .map(|k| {
            std::iter::once(t[k].to_string())
                .chain(series.iter().map(|(_, s)| s[k].to_string()))
                .collect()
        })
        .collect();
    let refs: Vec<&str> = header.iter().map(String::as_str).collect();
    let named: Vec<(&str, &[f64])> = series.iter().map(|(n, s)| (n.as_str(), *s)).collect();
    write_figure(dir, stem, &refs, &rows, title, "t (s)", ylabel, t, &named)
}

const WIDTH: f64 = 800.0;
const HEIGHT: f64 = 500.0;
const PALETTE: [&str; 6] = ["#1f77b4", "#d62728", "#2ca02c", "#ff7f0e", "#9467bd", "#8c564b"];

fn escape(s: &str) -> String {
    s.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;")
}

/// Self-contained SVG line chart. Long series are decimated to at most
/// 2000 points per line.
pub fn line_chart_svg(title: &str, xlabel: &str, ylabel: &str, x: &[f64], series: &[(&str, &[f64])]) -> String {
    let (l, r, t, b) = (70.0, 20.0, 40.0, 50.0);
    let (pw, ph) = (WIDTH - l - r, HEIGHT - t - b);
    let finite = |v: &&f64| v.is_finite();
    let (mut xmin, mut xmax) = (
        x.iter().filter(finite).cloned().fold(f64::INFINITY, f64::min),
        x.iter().filter(finite).cloned().fold(f64::NEG_INFINITY, f64::max),
    );
    let ys = series.iter().flat_map(|(_, s)| s.iter()).filter(finite);
    let (mut ymin, mut ymax) = ys.clone().fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), &v| (a.min(v), b.max(v)));
    if !xmin.is_finite() {
        (xmin, xmax) = (0.0, 1.0);
    }
    if !ymin.is_finite() {
        (ymin, ymax) = (0.0, 1.0);
    }
    if xmax <= xmin {
        xmax = xmin + 1.0;
    }
    if ymax <= ymin {
        let pad = ymin.abs().max(1.0) * 0.05;
        ymin -= pad;
        ymax += pad;
    }
    let px = |v: f64| l + (v - xmin) / (xmax - xmin) * pw;
    let py = |v: f64| t + ph - (v - ymin) / (ymax - ymin) * ph;

    let mut svg = String::new();
    let _ = writeln!(
        svg,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{WIDTH}" height="{HEIGHT}" viewBox="0 0 {WIDTH} {HEIGHT}">"#
    );
    let _ = writeln!(svg, r#"<rect width="{WIDTH}" height="{HEIGHT}" fill="white"/>"#);
    let _ = writeln!(
        svg,
        r#"<text x="{}" y="24" font-family="sans-serif" font-size="16" text-anchor="middle">{}</text>"#,
        WIDTH / 2.0,
        escape(title)
    );
    let _ = writeln!(
        svg,
        r##"<rect x="{l}" y="{t}" width="{pw}" height="{ph}" fill="none" stroke="#444"/>"##
    );
    for i in 0..=4 {
        let fx = xmin + (xmax - xmin) * i as f64 / 4.0;
        let fy = ymin + (ymax - ymin) * i as f64 / 4.0;
        let _ = writeln!(
            svg,
            r#"<text x="{:.1}" y="{:.1}" font-family="sans-serif" font-size="11" text-anchor="middle">{}</text>"#,
            px(fx),
            t + ph + 16.0,
            fmt_tick(fx)
        );
        let _ = writeln!(
            svg,
            r#"<text x="{:.1}" y="{:.1}" font-family="sans-serif" font-size="11" text-anchor="end">{}</text>"#,
            l - 6.0,
            py(fy) + 4.0,
            fmt_tick(fy)
        );
    }
    let _ = writeln!(
        svg,
        r#"<text x="{:.1}" y="{:.1}" font-family="sans-serif" font-size="13" text-anchor="middle">{}</text>"#,
        l + pw / 2.0,
        HEIGHT - 12.0,
        escape(xlabel)
    );
    let _ = writeln!(
        svg,
        r#"<text x="16" y="{:.1}" font-family="sans-serif" font-size="13" text-anchor="middle" transform="rotate(-90 16 {:.1})">{}</text>"#,
        t + ph / 2.0,
        t + ph / 2.0,
        escape(ylabel)
    );
    for (i, (name, ys)) in series.iter().enumerate() {
        let color = PALETTE[i % PALETTE.len()];
        let n = ys.len().min(x.len());
        let step = n.div_ceil(2000).max(1);
        let pts: Vec<String> = (0..n)
            .step_by(step)
            .filter(|&k| x[k].is_finite() && ys[k].is_finite())
            .map(|k| format!("{:.2},{:.2}", px(x[k]), py(ys[k])))
            .collect();
        let _ = writeln!(
            svg,
            r#"<polyline fill="none" stroke="{color}" stroke-width="1.2" points="{}"/>"#,
            pts.join(" ")
        );
        let ly = t + 14.0 + 16.0 * i as f64;
        let _ = writeln!(
            svg,
            r#"<line x1="{:.1}" y1="{ly:.1}" x2="{:.1}" y2="{ly:.1}" stroke="{color}" stroke-width="2"/>"#,
            l + pw - 150.0,
            l + pw - 130.0
        );
        let _ = writeln!(
            svg,
            r#"<text x="{:.1}" y="{:.1}" font-family="sans-serif" font-size="11">{}</text>"#,
            l + pw - 125.0,
            ly + 4.0,
            escape(name)
        );
    }
    svg.push_str("</svg>\n");
    svg
}

fn fmt_tick(v: f64) -> String {
    if v == 0.0 {
        "0".into()
    } else if v.abs() >= 1e4 || v.abs() < 1e-2 {
        format!("{v:.2e}")
    } else {
        format!("{v:.3}")
    }
}
