//! Heterogeneous fleet construction, the cascaded learning run, and the
//! file-backed store of shared records.
//!
//! Vehicle `j` has actual parameters
//!
//! ```text
//! m_s = 2.45 + βj     m_us = 1 + βj      k_s = 950 + 100βj
//! k_us = 1250 + 100βj c_s = 7.5 + βj     c_us = 5 + βj
//! kp = 1500 + 30βj    ki = 200 + βj      kd = 500 + 15βj
//! ```
//!
//! and nominal parameters equal to the actual ones scaled by independent
//! factors drawn uniformly from `[1 - bound, 1 + bound]`.

use std::path::{Path, PathBuf};
use std::time::Instant;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::ilc::{self, LearningFilters, Rolloff, SharedRecord};
use crate::lti::SignalTrace;
use crate::observer::{self, AgentLog, AgentLoop, LoopDesign, QFilterSpec};
use crate::report;
use crate::roads::RoadSpec;
use crate::vehicle::{PidGains, VehicleParams, DEFAULT_DT};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct FleetConfig {
    pub n_agents: usize,
    pub beta: f64,
    pub uncertainty_bound: f64,
    pub alpha: f64,
    pub q_spec: QFilterSpec,
    pub derivative_pole: f64,
    pub rolloff: Rolloff,
    pub dt: f64,
    pub duration: f64,
    /// Start-up interval excluded from the RMSE, s.
    pub rmse_skip: f64,
    pub order_seed: u64,
    pub uncertainty_seed: u64,
    /// Randomize the cascade order of the indices; otherwise `j = position`.
    pub shuffle: bool,
    pub learning_enabled: bool,
    pub dob_enabled: bool,
    /// Read the nominal tire damping as `(5 + 7βj) f` instead of
    /// `(5 + βj) f`.
    pub literal_cus_nominal: bool,
}

impl Default for FleetConfig {
    fn default() -> Self {
        FleetConfig {
            n_agents: 90,
            beta: 1.0 / 15.0,
            uncertainty_bound: 0.10,
            alpha: 0.5,
            q_spec: QFilterSpec::default(),
            derivative_pole: observer::DEFAULT_DERIVATIVE_POLE,
            rolloff: Rolloff::default(),
            dt: DEFAULT_DT,
            duration: 10.0,
            rmse_skip: 0.5,
            order_seed: 0,
            uncertainty_seed: 0,
            shuffle: true,
            learning_enabled: true,
            dob_enabled: true,
            literal_cus_nominal: false,
        }
    }
}

impl FleetConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Config(m));
        if self.n_agents == 0 {
            return bad("n_agents must be at least 1".into());
        }
        if !(0.0..1.0).contains(&self.uncertainty_bound) {
            return bad(format!("uncertainty_bound must lie in [0, 1), got {}", self.uncertainty_bound));
        }
        if !(self.alpha > 0.0 && self.alpha < 1.0) {
            return bad(format!("alpha must lie in (0, 1), got {}", self.alpha));
        }
        if !(self.beta >= 0.0) || !self.beta.is_finite() {
            return bad(format!("beta must be non-negative, got {}", self.beta));
        }
        if !(self.dt > 0.0) || !(self.duration > 0.0) {
            return bad("dt and duration must be positive".into());
        }
        if !(self.rmse_skip >= 0.0) || self.rmse_skip >= self.duration {
            return bad(format!("rmse_skip must lie in [0, duration), got {}", self.rmse_skip));
        }
        if !(self.rolloff.cutoff > 0.0) || self.rolloff.order == 0 {
            return bad("rolloff needs a positive cutoff and order".into());
        }
        self.q_spec.validate()
    }

    pub fn samples(&self) -> usize {
        (self.duration / self.dt).round() as usize
    }
}

/// Actual parameters and controller gains at index `j`.
pub fn table_row(j: usize, beta: f64) -> Result<(VehicleParams, PidGains)> {
    let b = beta * j as f64;
    Ok((
        VehicleParams::new(2.45 + b, 1.0 + b, 950.0 + 100.0 * b, 1250.0 + 100.0 * b, 7.5 + b, 5.0 + b)?,
        PidGains::new(1500.0 + 30.0 * b, 200.0 + b, 500.0 + 15.0 * b)?,
    ))
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AgentSpec {
    /// Cascade position, from 1.
    pub position: usize,
    pub j: usize,
    pub actual: VehicleParams,
    pub nominal: VehicleParams,
    pub pid: PidGains,
}

/// Indices `1..=n` in cascade order with per-vehicle parameters. The
/// uncertainty factors of vehicle `j` depend only on `uncertainty_seed` and
/// `j`, not on the cascade order.
pub fn build_fleet(cfg: &FleetConfig) -> Result<Vec<AgentSpec>> {
    cfg.validate()?;
    let mut order: Vec<usize> = (1..=cfg.n_agents).collect();
    if cfg.shuffle {
        order.shuffle(&mut ChaCha8Rng::seed_from_u64(cfg.order_seed));
    }
    let factors = uncertainty_factors(cfg, cfg.n_agents);
    order
        .into_iter()
        .enumerate()
        .map(|(k, j)| make_spec(cfg, k + 1, j, &factors[j - 1]))
        .collect()
}

/// The vehicle with index `j` as `build_fleet` would build it, at cascade
/// position 1.
pub fn agent_spec(cfg: &FleetConfig, j: usize) -> Result<AgentSpec> {
    cfg.validate()?;
    if j == 0 {
        return Err(Error::Config("vehicle index starts at 1".into()));
    }
    let factors = uncertainty_factors(cfg, j);
    make_spec(cfg, 1, j, &factors[j - 1])
}

fn uncertainty_factors(cfg: &FleetConfig, n: usize) -> Vec<[f64; 6]> {
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.uncertainty_seed);
    let bound = cfg.uncertainty_bound;
    (0..n)
        .map(|_| {
            let mut f = [1.0; 6];
            if bound > 0.0 {
                for v in &mut f {
                    *v = rng.gen_range(1.0 - bound..=1.0 + bound);
                }
            }
            f
        })
        .collect()
}

fn make_spec(cfg: &FleetConfig, position: usize, j: usize, f: &[f64; 6]) -> Result<AgentSpec> {
    let (actual, pid) = table_row(j, cfg.beta)?;
    let mut nominal = actual.scaled(f);
    if cfg.literal_cus_nominal {
        nominal.c_us = (5.0 + 7.0 * cfg.beta * j as f64) * f[5];
    }
    nominal.validate()?;
    Ok(AgentSpec {
        position,
        j,
        actual,
        nominal,
        pid,
    })
}

impl AgentSpec {
    pub fn agent_loop(&self, cfg: &FleetConfig) -> Result<AgentLoop> {
        AgentLoop::new(self.actual, self.nominal, self.pid, cfg.q_spec, cfg.dt)?
            .with_derivative_pole(cfg.derivative_pole)?
            .with_dob(cfg.dob_enabled)
    }
}

/// Source of the learning signal. Implementations see the predecessor's
/// record and the current vehicle's nominal design only.
pub trait Learner {
    fn learning_signal(
        &self,
        prev: Option<&SharedRecord>,
        current: &LoopDesign,
        cfg: &FleetConfig,
    ) -> Result<(Option<LearningFilters>, SignalTrace)>;
}

/// Learning-filter synthesis and offline application.
#[derive(Clone, Copy, Debug, Default)]
pub struct IlcLearner;

impl Learner for IlcLearner {
    fn learning_signal(
        &self,
        prev: Option<&SharedRecord>,
        current: &LoopDesign,
        cfg: &FleetConfig,
    ) -> Result<(Option<LearningFilters>, SignalTrace)> {
        let Some(prev) = prev else {
            return Ok((None, SignalTrace::zeros(cfg.dt, cfg.samples(), "d_f")));
        };
        let filters = ilc::synth_filters(&prev.design, current, cfg.alpha)?;
        let d_f = ilc::make_learning_signal(Some(&filters), Some(prev), cfg.dt, cfg.samples(), &cfg.rolloff)?;
        Ok((Some(filters), d_f))
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct AgentResult {
    pub spec: AgentSpec,
    pub rmse_mm: f64,
    pub log: AgentLog,
    pub filters: Option<LearningFilters>,
}

#[derive(Clone, Debug)]
pub struct FleetResults {
    pub config: FleetConfig,
    pub agents: Vec<AgentResult>,
    pub wall_time_s: f64,
}

impl FleetResults {
    pub fn rmse_series(&self) -> Vec<f64> {
        self.agents.iter().map(|a| a.rmse_mm).collect()
    }

    /// Mean RMSE of the last fifth of the cascade (at least one agent).
    pub fn final_quintile_mean(&self) -> f64 {
        let r = self.rmse_series();
        let k = (r.len() / 5).max(1);
        r[r.len() - k..].iter().sum::<f64>() / k as f64
    }

    pub fn mean_rmse(&self) -> f64 {
        let r = self.rmse_series();
        r.iter().sum::<f64>() / r.len() as f64
    }

    pub const SUMMARY_HEADER: [&'static str; 4] = ["position", "j", "rmse_mm", "learning_enabled"];

    pub fn write_summary(&self, path: &Path) -> Result<()> {
        let io = |e: std::io::Error| Error::io(path, e);
        let mut w = csv::Writer::from_path(path).map_err(|e| io(e.into()))?;
        w.write_record(Self::SUMMARY_HEADER).map_err(|e| io(e.into()))?;
        for a in &self.agents {
            w.write_record([
                a.spec.position.to_string(),
                a.spec.j.to_string(),
                a.rmse_mm.to_string(),
                self.config.learning_enabled.to_string(),
            ])
            .map_err(|e| io(e.into()))?;
        }
        w.flush().map_err(io)
    }

    pub fn figure_agents(&self) -> Vec<report::FigureAgent<'_>> {
        self.agents
            .iter()
            .map(|a| report::FigureAgent {
                position: a.spec.position,
                j: a.spec.j,
                rmse_mm: a.rmse_mm,
                traces: Some(report::AgentTraces {
                    z_r: &a.log.z_r,
                    z_r_hat: &a.log.z_r_hat,
                    d_f: &a.log.d_f,
                }),
            })
            .collect()
    }
}

/// Run the cascade over `road`. Each vehicle's record is published to
/// `store` when one is given; the predecessor's record is read back from
/// the store, or kept in memory otherwise.
pub fn run_cascade(
    cfg: &FleetConfig,
    fleet: &[AgentSpec],
    road: &SignalTrace,
    store: Option<&RecordStore>,
    learner: &dyn Learner,
) -> Result<FleetResults> {
    cfg.validate()?;
    if fleet.is_empty() {
        return Err(Error::Config("fleet is empty".into()));
    }
    if road.len() != cfg.samples() || !crate::lti::dt_matches(road.dt(), cfg.dt) {
        return Err(Error::Config(format!(
            "road has {} samples at dt {}, config expects {} at dt {}",
            road.len(),
            road.dt(),
            cfg.samples(),
            cfg.dt
        )));
    }
    let started = Instant::now();
    let mut agents = Vec::with_capacity(fleet.len());
    let mut prev_mem: Option<SharedRecord> = None;
    for spec in fleet {
        let fail = |e: Error| Error::AgentFailed {
            position: spec.position,
            j: spec.j,
            source: Box::new(e),
        };
        let lp = spec.agent_loop(cfg).map_err(fail)?;
        let prev = match store {
            Some(s) => s.predecessor(spec.position).map_err(fail)?,
            None => prev_mem.take(),
        };
        let (filters, d_f) = if cfg.learning_enabled {
            learner.learning_signal(prev.as_ref(), &lp.design(), cfg).map_err(fail)?
        } else {
            (None, SignalTrace::zeros(cfg.dt, road.len(), "d_f"))
        };
        let log = observer::run_agent(&lp, road, &d_f).map_err(fail)?;
        let rmse_mm = report::rmse(&log.z_r_hat, road, cfg.rmse_skip).map_err(fail)?;
        let record = SharedRecord::new(spec.position, log.e.clone(), log.d_f.clone(), lp.design()).map_err(fail)?;
        match store {
            Some(s) => s.put(&record).map_err(fail)?,
            None => prev_mem = Some(record),
        }
        agents.push(AgentResult {
            spec: spec.clone(),
            rmse_mm,
            log,
            filters,
        });
    }
    Ok(FleetResults {
        config: cfg.clone(),
        agents,
        wall_time_s: started.elapsed().as_secs_f64(),
    })
}

/// Short content hash of any serializable value.
pub fn content_id<T: Serialize>(value: &T) -> String {
    let bytes = serde_json::to_vec(value).expect("config serializes");
    Sha256::digest(&bytes).iter().take(8).map(|b| format!("{b:02x}")).collect()
}

/// Content hash of the effective configuration, used as the run directory
/// name.
pub fn run_id(cfg: &FleetConfig, road: &RoadSpec) -> String {
    #[derive(Serialize)]
    struct Key<'a> {
        fleet: &'a FleetConfig,
        road: &'a RoadSpec,
    }
    content_id(&Key { fleet: cfg, road })
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct StoredRecord {
    record: SharedRecord,
    checksum: String,
}

fn checksum(record: &SharedRecord) -> String {
    let bytes = serde_json::to_vec(record).expect("record serializes");
    Sha256::digest(&bytes).iter().map(|b| format!("{b:02x}")).collect()
}

/// Records as `<root>/agent_<position>.json`. A record is never
/// overwritten; writing identical content again is a no-op.
#[derive(Clone, Debug)]
pub struct RecordStore {
    root: PathBuf,
}

impl RecordStore {
    pub fn open(root: impl Into<PathBuf>) -> Result<Self> {
        let root = root.into();
        std::fs::create_dir_all(&root).map_err(|e| Error::io(&root, e))?;
        Ok(RecordStore { root })
    }

    pub fn root(&self) -> &Path {
        &self.root
    }

    fn path(&self, position: usize) -> PathBuf {
        self.root.join(format!("agent_{position}.json"))
    }

    pub fn put(&self, record: &SharedRecord) -> Result<()> {
        let path = self.path(record.agent_index);
        let stored = StoredRecord {
            record: record.clone(),
            checksum: checksum(record),
        };
        let text = serde_json::to_vec(&stored).map_err(|e| Error::Json {
            path: path.clone(),
            source: e,
        })?;
        use std::io::Write;
        match std::fs::OpenOptions::new().write(true).create_new(true).open(&path) {
            Ok(mut f) => f.write_all(&text).map_err(|e| Error::io(&path, e)),
            Err(e) if e.kind() == std::io::ErrorKind::AlreadyExists => {
                let existing = std::fs::read(&path).map_err(|e| Error::io(&path, e))?;
                if existing == text {
                    Ok(())
                } else {
                    Err(Error::RecordExists {
                        position: record.agent_index,
                    })
                }
            }
            Err(e) => Err(Error::io(&path, e)),
        }
    }

    pub fn get(&self, position: usize) -> Result<SharedRecord> {
        let path = self.path(position);
        let bytes = match std::fs::read(&path) {
            Ok(b) => b,
            Err(e) if e.kind() == std::io::ErrorKind::NotFound => return Err(Error::MissingRecord { position }),
            Err(e) => return Err(Error::io(&path, e)),
        };
        let stored: StoredRecord =
            serde_json::from_slice(&bytes).map_err(|_| Error::CorruptRecord { path: path.clone() })?;
        if checksum(&stored.record) != stored.checksum || stored.record.agent_index != position {
            return Err(Error::CorruptRecord { path });
        }
        Ok(stored.record)
    }

    /// Record of the vehicle ahead of `position`; none for the first.
    pub fn predecessor(&self, position: usize) -> Result<Option<SharedRecord>> {
        if position <= 1 {
            return Ok(None);
        }
        self.get(position - 1).map(Some)
    }

    /// All stored records in cascade order.
    pub fn list(&self) -> Result<Vec<SharedRecord>> {
        let mut positions = Vec::new();
        let entries = std::fs::read_dir(&self.root).map_err(|e| Error::io(&self.root, e))?;
        for entry in entries {
            let entry = entry.map_err(|e| Error::io(&self.root, e))?;
            let name = entry.file_name();
            let name = name.to_string_lossy();
            if let Some(k) = name
                .strip_prefix("agent_")
                .and_then(|s| s.strip_suffix(".json"))
                .and_then(|s| s.parse::<usize>().ok())
            {
                positions.push(k);
            }
        }
        positions.sort_unstable();
        positions.into_iter().map(|k| self.get(k)).collect()
    }
}
