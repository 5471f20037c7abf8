//! Command-line front end.
//!
//! ```text
//! roadsense simulate [--j N] [overrides]     one vehicle, no learning
//! roadsense fleet [--no-learning] [overrides]
//! roadsense report RUN_DIR [--select 1,2,30,90]
//! ```
//!
//! A run writes into `<out>/<run_id>/`, where `<out>` is `--out`, else
//! `$ROADSENSE_OUT`, else `runs`, and `run_id` is a content hash of the
//! effective configuration. Everything in a run directory except
//! `metadata.json` is a pure function of the configuration.

use std::ffi::OsString;
use std::path::{Path, PathBuf};
use std::time::{SystemTime, UNIX_EPOCH};

use clap::{Args, Parser, Subcommand};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::fleet::{self, FleetConfig, FleetResults, IlcLearner, RecordStore};
use crate::lti::SignalTrace;
use crate::observer;
use crate::report::{self, AgentTraces, FigureAgent};
use crate::roads::{RoadKind, RoadSpec};

pub const OUT_ENV: &str = "ROADSENSE_OUT";

// stdout may be a closed pipe
macro_rules! say {
    ($($t:tt)*) => {{
        use std::io::Write as _;
        let _ = writeln!(std::io::stdout(), $($t)*);
    }};
}

/// Cascade positions whose full logs are kept, besides the last one.
pub const LOGGED_POSITIONS: [usize; 4] = [1, 2, 30, 90];

/// Contents of a `--config` file. Unknown keys are rejected.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RunConfig {
    pub fleet: FleetConfig,
    pub road: RoadSpec,
}

impl RunConfig {
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        serde_json::from_str(&text).map_err(|e| Error::Config(format!("{}: {e}", path.display())))
    }
}

#[derive(Debug, Parser)]
#[command(name = "roadsense", version, about = "Collaborative road-profile estimation across a vehicle fleet")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Run one vehicle without learning and write its log.
    Simulate {
        #[command(flatten)]
        common: Overrides,
        /// Vehicle index multiplier.
        #[arg(long, default_value_t = 1)]
        j: usize,
    },
    /// Run the learning cascade over the fleet.
    Fleet {
        #[command(flatten)]
        common: Overrides,
        #[arg(long, conflicts_with = "learning")]
        no_learning: bool,
        #[arg(long)]
        learning: bool,
        /// Run directory name instead of the configuration hash.
        #[arg(long)]
        run_id: Option<String>,
    },
    /// Emit figures and print the convergence fit of a finished fleet run.
    Report {
        run_dir: PathBuf,
        /// Cascade positions to plot.
        #[arg(long, value_delimiter = ',')]
        select: Option<Vec<usize>>,
    },
}

#[derive(Debug, Args)]
pub struct Overrides {
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long)]
    pub agents: Option<usize>,
    #[arg(long)]
    pub alpha: Option<f64>,
    #[arg(long)]
    pub uncertainty: Option<f64>,
    /// `sinusoid`, `iso-c`, or `file:PATH`.
    #[arg(long)]
    pub road: Option<String>,
    #[arg(long)]
    pub no_dob: bool,
    #[arg(long)]
    pub seed_order: Option<u64>,
    #[arg(long)]
    pub seed_uncertainty: Option<u64>,
    #[arg(long)]
    pub out: Option<PathBuf>,
}

impl Overrides {
    /// Effective configuration: defaults, then the file, then flags. The
    /// road is sampled at the fleet's `dt` for its `duration`.
    pub fn resolve(&self) -> Result<RunConfig> {
        let mut rc = match &self.config {
            Some(p) => RunConfig::load(p)?,
            None => RunConfig::default(),
        };
        let f = &mut rc.fleet;
        if let Some(n) = self.agents {
            f.n_agents = n;
        }
        if let Some(a) = self.alpha {
            f.alpha = a;
        }
        if let Some(u) = self.uncertainty {
            f.uncertainty_bound = u;
        }
        if let Some(s) = self.seed_order {
            f.order_seed = s;
        }
        if let Some(s) = self.seed_uncertainty {
            f.uncertainty_seed = s;
        }
        if self.no_dob {
            f.dob_enabled = false;
        }
        if let Some(r) = &self.road {
            rc.road = parse_road(r, &rc.road)?;
        }
        rc.road.dt = rc.fleet.dt;
        rc.road.duration = rc.fleet.duration;
        rc.fleet.validate()?;
        Ok(rc)
    }

    pub fn out_root(&self) -> PathBuf {
        self.out
            .clone()
            .or_else(|| std::env::var_os(OUT_ENV).map(PathBuf::from))
            .unwrap_or_else(|| PathBuf::from("runs"))
    }
}

pub fn parse_road(arg: &str, base: &RoadSpec) -> Result<RoadSpec> {
    let kind = match arg {
        "sinusoid" => RoadKind::Sinusoid,
        "iso-c" => RoadKind::IsoClassC,
        _ => match arg.strip_prefix("file:") {
            Some(p) if !p.is_empty() => {
                return Ok(RoadSpec {
                    kind: RoadKind::FromFile,
                    path: Some(PathBuf::from(p)),
                    ..base.clone()
                })
            }
            _ => return Err(Error::Config(format!("unknown road `{arg}`; use sinusoid, iso-c or file:PATH"))),
        },
    };
    Ok(RoadSpec {
        kind,
        path: None,
        ..base.clone()
    })
}

/// Generate the road; a file road must match the fleet's `dt` and sets the
/// run duration.
fn make_road(rc: &mut RunConfig) -> Result<SignalTrace> {
    let road = rc.road.generate()?;
    if rc.road.kind == RoadKind::FromFile {
        if !crate::lti::dt_matches(road.dt(), rc.fleet.dt) {
            return Err(Error::Config(format!(
                "road file is sampled at dt = {}, the configuration uses {}",
                road.dt(),
                rc.fleet.dt
            )));
        }
        rc.fleet.duration = road.len() as f64 * road.dt();
        rc.road.duration = rc.fleet.duration;
        rc.fleet.validate()?;
    }
    Ok(road)
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let text = serde_json::to_string_pretty(value).map_err(|e| Error::Json {
        path: path.to_path_buf(),
        source: e,
    })?;
    std::fs::write(path, text + "\n").map_err(|e| Error::io(path, e))
}

fn write_metadata(dir: &Path, extra: serde_json::Value) -> Result<()> {
    let stamp = SystemTime::now().duration_since(UNIX_EPOCH).map(|d| d.as_secs()).unwrap_or(0);
    let mut meta = serde_json::json!({
        "version": env!("CARGO_PKG_VERSION"),
        "finished_unix_s": stamp,
    });
    if let (Some(m), serde_json::Value::Object(e)) = (meta.as_object_mut(), extra) {
        m.extend(e);
    }
    write_json(&dir.join("metadata.json"), &meta)
}

pub fn cmd_simulate(common: &Overrides, j: usize) -> Result<PathBuf> {
    let mut rc = common.resolve()?;
    let road = make_road(&mut rc)?;
    let cfg = &rc.fleet;
    let spec = fleet::agent_spec(cfg, j)?;
    let lp = spec.agent_loop(cfg)?;
    let log = observer::run_agent(&lp, &road, &SignalTrace::zeros(cfg.dt, road.len(), "d_f"))?;
    let rmse = report::rmse(&log.z_r_hat, &road, cfg.rmse_skip)?;

    #[derive(Serialize)]
    struct Key<'a> {
        run: &'a RunConfig,
        j: usize,
    }
    let dir = common.out_root().join(format!("sim-{}", fleet::content_id(&Key { run: &rc, j })));
    std::fs::create_dir_all(&dir).map_err(|e| Error::io(&dir, e))?;
    let log_path = dir.join("agent_log.csv");
    log.write_csv_file(&log_path)?;
    write_json(&dir.join("config.json"), &rc)?;
    write_metadata(&dir, serde_json::json!({ "j": j }))?;
    say!("log: {}", log_path.display());
    say!("j: {j}");
    say!("rms_z_s_m: {}", log.z_s.rms());
    say!("rmse_mm: {rmse}");
    Ok(log_path)
}

pub fn cmd_fleet(common: &Overrides, learning: Option<bool>, run_id: Option<&str>) -> Result<PathBuf> {
    let mut rc = common.resolve()?;
    if let Some(l) = learning {
        rc.fleet.learning_enabled = l;
    }
    let road = make_road(&mut rc)?;
    let id = match run_id {
        Some(id) => id.to_string(),
        None => fleet::run_id(&rc.fleet, &rc.road),
    };
    let dir = common.out_root().join(id);
    let store = RecordStore::open(&dir)?;
    let specs = fleet::build_fleet(&rc.fleet)?;
    let results = fleet::run_cascade(&rc.fleet, &specs, &road, Some(&store), &IlcLearner)?;

    write_json(&dir.join("config.json"), &rc)?;
    results.write_summary(&dir.join("summary.csv"))?;
    let logs = dir.join("logs");
    std::fs::create_dir_all(&logs).map_err(|e| Error::io(&logs, e))?;
    for a in &results.agents {
        if logged(a.spec.position, results.agents.len()) {
            a.log.write_csv_file(&logs.join(format!("agent_{}.csv", a.spec.position)))?;
        }
    }
    write_metadata(&dir, serde_json::json!({ "wall_time_s": results.wall_time_s }))?;
    print_summary(&results);
    say!("run: {}", dir.display());
    Ok(dir)
}

fn logged(position: usize, n: usize) -> bool {
    position == n || LOGGED_POSITIONS.contains(&position)
}

fn print_summary(r: &FleetResults) {
    say!("agents: {}", r.agents.len());
    say!("learning: {}", r.config.learning_enabled);
    say!("mean_rmse_mm: {}", r.mean_rmse());
    say!("final_quintile_rmse_mm: {}", r.final_quintile_mean());
}

/// One row of `summary.csv`.
#[derive(Clone, Debug, PartialEq, Deserialize)]
pub struct SummaryRow {
    pub position: usize,
    pub j: usize,
    pub rmse_mm: f64,
    pub learning_enabled: bool,
}

pub fn read_summary(path: &Path) -> Result<Vec<SummaryRow>> {
    let file = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
    csv::Reader::from_reader(file)
        .deserialize()
        .collect::<std::result::Result<Vec<SummaryRow>, _>>()
        .map_err(|e| Error::MalformedFile {
            path: path.to_path_buf(),
            reason: e.to_string(),
        })
}

/// Traces of a logged agent, read back from its log CSV.
fn read_log_traces(path: &Path, dt: f64) -> Result<[SignalTrace; 3]> {
    let malformed = |reason: String| Error::MalformedFile {
        path: path.to_path_buf(),
        reason,
    };
    let file = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
    let mut rdr = csv::Reader::from_reader(file);
    let headers = rdr.headers().map_err(|e| malformed(e.to_string()))?.clone();
    let col = |name: &str| {
        headers
            .iter()
            .position(|h| h == name)
            .ok_or_else(|| malformed(format!("missing column {name}")))
    };
    let cols = [col("z_r")?, col("z_r_hat")?, col("d_f")?];
    let mut data = [Vec::new(), Vec::new(), Vec::new()];
    for rec in rdr.records() {
        let rec = rec.map_err(|e| malformed(e.to_string()))?;
        for (d, &c) in data.iter_mut().zip(&cols) {
            let v: f64 = rec
                .get(c)
                .and_then(|s| s.parse().ok())
                .ok_or_else(|| malformed("bad number".into()))?;
            d.push(v);
        }
    }
    let [a, b, c] = data;
    Ok([SignalTrace::new(dt, a, "z_r")?, SignalTrace::new(dt, b, "z_r_hat")?, SignalTrace::new(dt, c, "d_f")?])
}

pub fn cmd_report(run_dir: &Path, select: Option<&[usize]>) -> Result<Vec<PathBuf>> {
    let rows = read_summary(&run_dir.join("summary.csv"))?;
    if rows.is_empty() {
        return Err(Error::MissingRecord { position: 1 });
    }
    let store = RecordStore::open(run_dir)?;
    for r in &rows {
        store.get(r.position)?;
    }
    let rc = RunConfig::load(&run_dir.join("config.json"))?;
    let n = rows.len();
    let mut traces = Vec::new();
    for r in &rows {
        if logged(r.position, n) {
            traces.push((r.position, read_log_traces(&run_dir.join("logs").join(format!("agent_{}.csv", r.position)), rc.fleet.dt)?));
        }
    }
    let agents: Vec<FigureAgent<'_>> = rows
        .iter()
        .map(|r| FigureAgent {
            position: r.position,
            j: r.j,
            rmse_mm: r.rmse_mm,
            traces: traces.iter().find(|(p, _)| *p == r.position).map(|(_, [z_r, z_r_hat, d_f])| AgentTraces {
                z_r,
                z_r_hat,
                d_f,
            }),
        })
        .collect();
    let default_select: Vec<usize> = LOGGED_POSITIONS.iter().copied().chain([n]).collect();
    let written = report::emit_figures(&agents, select.unwrap_or(&default_select), &run_dir.join("figures"))?;

    let series: Vec<f64> = rows.iter().map(|r| r.rmse_mm).collect();
    let k = (n / 5).max(1);
    say!("agents: {n}");
    say!("learning: {}", rows[0].learning_enabled);
    say!("mean_rmse_mm: {}", series.iter().sum::<f64>() / n as f64);
    say!("final_quintile_rmse_mm: {}", series[n - k..].iter().sum::<f64>() / k as f64);
    match report::convergence_fit(&series) {
        Ok(fit) => {
            say!("fit_floor_mm: {}", fit.floor);
            say!("fit_scale_mm: {}", fit.scale);
            say!("fit_rate: {}", fit.rate);
            say!("fit_r_squared: {}", fit.r_squared);
        }
        Err(e) => say!("fit: {e}"),
    }
    for p in &written {
        say!("wrote: {}", p.display());
    }
    Ok(written)
}

/// Parse `args` and run; returns the process exit code.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { 2 } else { 0 };
            let _ = e.print();
            return code;
        }
    };
    let outcome = match &cli.command {
        Command::Simulate { common, j } => cmd_simulate(common, *j).map(drop),
        Command::Fleet {
            common,
            no_learning,
            learning,
            run_id,
        } => {
            let l = if *no_learning {
                Some(false)
            } else if *learning {
                Some(true)
            } else {
                None
            };
            cmd_fleet(common, l, run_id.as_deref()).map(drop)
        }
        Command::Report { run_dir, select } => cmd_report(run_dir, select.as_deref()).map(drop),
    };
    match outcome {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {e}");
            1
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn road_argument() {
        let base = RoadSpec::default();
        assert_eq!(parse_road("iso-c", &base).unwrap().kind, RoadKind::IsoClassC);
        let f = parse_road("file:a/b.csv", &base).unwrap();
        assert_eq!(f.path.as_deref(), Some(Path::new("a/b.csv")));
        assert!(parse_road("file:", &base).is_err());
        assert!(parse_road("gravel", &base).is_err());
    }

    #[test]
    fn unknown_keys_rejected() {
        assert!(serde_json::from_str::<RunConfig>(r#"{"fleet": {"alpha": 0.4}, "colour": 1}"#).is_err());
        assert!(serde_json::from_str::<RunConfig>(r#"{"road": {"kind": "iso_class_c", "sed": 3}}"#).is_err());
        let rc: RunConfig = serde_json::from_str(r#"{"fleet": {"alpha": 0.4}}"#).unwrap();
        assert_eq!(rc.fleet.alpha, 0.4);
    }

    #[test]
    fn flags_override_file() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("c.json");
        std::fs::write(&p, r#"{"fleet": {"n_agents": 7, "alpha": 0.4}}"#).unwrap();
        let cli = Cli::try_parse_from(["roadsense", "fleet", "--config", p.to_str().unwrap(), "--alpha", "0.3", "--road", "iso-c"]).unwrap();
        let Command::Fleet { common, .. } = cli.command else { panic!() };
        let rc = common.resolve().unwrap();
        assert_eq!((rc.fleet.n_agents, rc.fleet.alpha), (7, 0.3));
        assert_eq!(rc.road.kind, RoadKind::IsoClassC);
    }

    #[test]
    fn learning_flags_conflict() {
        assert!(Cli::try_parse_from(["roadsense", "fleet", "--learning", "--no-learning"]).is_err());
    }
}
