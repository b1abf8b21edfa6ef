//! Experiment orchestration: JSON configs, the experiment runners and their
//! output files (`results.csv`, `report.json`, `plot_<name>.csv`).

mod experiments;
pub mod stats;

pub use experiments::{
    fk_z_functionals_auto, geometric_factor, log_log_slope, run_bounds, run_command, run_clt, run_clt_with, run_covariance_compare, run_moments, BoundsOutcome, CltCell, CltReport,
    CltSource, Command, CovarianceRow, CovarianceTable, MomentsReport, PairCovariance, RefinementRow, SyntheticLaw, ALPHA, KURT_BAND, MAX_CHAOS, SKEW_BAND,
    VARIANCE_TOLERANCE,
};
pub use stats::{stats_tests, SampleStats};

use std::io::Write;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{LabError, Result};
use crate::exec::Execution;
use crate::fk::FkConfig;
use crate::noise_model::{NoiseSpec, SpecConfig};
use crate::spde::SpdeConfig;

fn default_replicates() -> usize {
    500
}

fn default_ts() -> Vec<f64> {
    vec![1.0]
}

fn default_rs() -> Vec<f64> {
    vec![10.0, 20.0, 40.0, 50.0]
}

fn default_zs() -> Vec<f64> {
    vec![0.0, 1.0, 2.0, 4.0, 8.0, 16.0]
}

fn default_spde() -> SpdeConfig {
    SpdeConfig {
        eps: 16.0,
        ..Default::default()
    }
}

fn default_f1_spec() -> SpecConfig {
    SpecConfig {
        family: "H1".into(),
        h0: None,
        h1: None,
        phi: Some("saturated".into()),
        phi_beta: Some(1.0),
        kappa0: Some(1.0),
        gamma0: Some("exp".into()),
        gamma0_rate: Some(1.0),
        ..Default::default()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct BoundsConfig {
    pub ps: Vec<usize>,
    pub t: f64,
    /// Subset of `F1`, `F8`.
    pub which: Vec<String>,
    /// `K₁,ₚ` samples.
    pub n_samples: usize,
    pub n_outer: usize,
    pub n_inner: usize,
    /// H1-family model used for F1.
    pub f1_spec: SpecConfig,
    /// Radii and level `ε` for the `∫ℓ_Rφ` curve; empty radii skip it.
    pub ell_phi_rs: Vec<f64>,
    pub ell_phi_level: f64,
}

impl Default for BoundsConfig {
    fn default() -> Self {
        Self {
            ps: (1..=6).collect(),
            t: 1.0,
            which: vec!["F1".into(), "F8".into()],
            n_samples: 100_000,
            n_outer: 20_000,
            n_inner: 8,
            f1_spec: default_f1_spec(),
            ell_phi_rs: vec![1.0, 10.0, 100.0, 1000.0],
            ell_phi_level: 0.1,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct MomentsConfig {
    /// Point `(t, x)` for the normalisation and second-moment checks.
    pub t: f64,
    pub x: f64,
    /// Mollifier for the point checks; the SPDE block's `eps` when absent.
    pub eps: Option<f64>,
    /// Relative discretisation budget for the second-moment comparison.
    pub budget: f64,
    /// Increment check: `A_t − A_{t−δ}` at radius `increment_r`.
    pub increment_t: f64,
    pub deltas: Vec<f64>,
    pub increment_r: f64,
    pub increment_k: usize,
    pub min_slope: f64,
    /// Replicates for the refinement table (0 skips it).
    pub refinement_replicates: usize,
}

impl Default for MomentsConfig {
    fn default() -> Self {
        Self {
            t: 0.5,
            x: 0.0,
            eps: Some(4.0),
            budget: 0.05,
            increment_t: 1.0,
            deltas: vec![0.04, 0.08, 0.16, 0.32],
            increment_r: 10.0,
            increment_k: 2,
            min_slope: 0.4,
            refinement_replicates: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentConfig {
    pub experiment: String,
    pub spec: SpecConfig,
    pub fk: FkConfig,
    #[serde(default = "default_spde")]
    pub spde: SpdeConfig,
    #[serde(default = "default_replicates")]
    pub replicates: usize,
    #[serde(default = "default_ts")]
    pub t_list: Vec<f64>,
    #[serde(default = "default_rs")]
    pub r_list: Vec<f64>,
    /// Lags at which `E[ℐ(z)]` and `E[𝔤(ℐ(z))]` are tabulated.
    #[serde(default = "default_zs")]
    pub z_grid: Vec<f64>,
    /// Radii for the first-chaos decay curve.
    pub decay_rs: Vec<f64>,
    pub bounds: BoundsConfig,
    pub moments: MomentsConfig,
    /// Master seed; required.
    pub seed: Option<u64>,
    pub output_dir: Option<String>,
    pub quick: bool,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            experiment: "clt".into(),
            spec: SpecConfig::default(),
            fk: FkConfig::default(),
            spde: default_spde(),
            replicates: default_replicates(),
            t_list: default_ts(),
            r_list: default_rs(),
            z_grid: default_zs(),
            decay_rs: vec![10.0, 100.0, 1000.0],
            bounds: BoundsConfig::default(),
            moments: MomentsConfig::default(),
            seed: None,
            output_dir: None,
            quick: false,
        }
    }
}

impl ExperimentConfig {
    pub fn from_json_str(s: &str) -> Result<Self> {
        Ok(serde_json::from_str(s)?)
    }

    /// Parse a config file; relative table paths resolve against its directory.
    pub fn load(path: &Path) -> Result<(Self, PathBuf)> {
        let text = std::fs::read_to_string(path)?;
        let base = path.parent().map(Path::to_path_buf).unwrap_or_default();
        Ok((Self::from_json_str(&text)?, base))
    }

    pub fn seed(&self) -> Result<u64> {
        self.seed.ok_or_else(|| LabError::Config("`seed` must be given explicitly".into()))
    }

    /// Copy the master seed and execution mode into the sub-configs and apply `quick`.
    pub fn resolved(&self, execution: Execution) -> Result<Self> {
        let seed = self.seed()?;
        let mut c = self.clone();
        c.fk.seed = seed;
        c.fk.execution = execution;
        c.spde.seed = seed;
        c.spde.execution = execution;
        if c.quick {
            c.replicates = (c.replicates / 10).max(stats::MIN_SAMPLES);
            c.fk.n_paths = (c.fk.n_paths / 4).max(100);
            c.bounds.n_samples = (c.bounds.n_samples / 10).max(1000);
            c.bounds.n_outer = (c.bounds.n_outer / 10).max(1000);
            c.moments.refinement_replicates /= 10;
        }
        c.validate()?;
        Ok(c)
    }

    pub fn validate(&self) -> Result<()> {
        self.seed()?;
        self.fk.validate()?;
        self.spde.validate()?;
        if self.t_list.iter().any(|t| !(t.is_finite() && *t >= 0.0)) {
            return Err(LabError::Config("t_list entries must be finite and >= 0".into()));
        }
        if self.r_list.iter().any(|r| !(r.is_finite() && *r > 0.0)) {
            return Err(LabError::Config("r_list entries must be finite and > 0".into()));
        }
        Ok(())
    }

    pub fn build_spec(&self, base_dir: &Path) -> Result<NoiseSpec> {
        self.spec.build(base_dir)
    }
}

/// One line of the long-format `results.csv`.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct ResultRow {
    pub experiment: String,
    pub quantity: String,
    pub t1: Option<f64>,
    pub t2: Option<f64>,
    pub p: Option<usize>,
    pub r: Option<f64>,
    pub eps: Option<f64>,
    pub zmax: Option<f64>,
    pub n: Option<usize>,
    pub seed: Option<u64>,
    pub value: f64,
    pub stderr: Option<f64>,
}

impl ResultRow {
    pub fn new(experiment: &str, quantity: &str, value: f64) -> Self {
        Self {
            experiment: experiment.into(),
            quantity: quantity.into(),
            value,
            ..Default::default()
        }
    }
}

pub const RESULTS_HEADER: &str = "experiment,quantity,t1,t2,p,R,eps,zmax,n,seed,value,stderr";

/// Nine significant digits.
pub fn fmt_num(x: f64) -> String {
    format!("{x:.8e}")
}

fn opt_num(x: Option<f64>) -> String {
    x.map(fmt_num).unwrap_or_default()
}

fn opt_int<T: ToString>(x: Option<T>) -> String {
    x.map(|v| v.to_string()).unwrap_or_default()
}

pub fn write_results(path: &Path, rows: &[ResultRow]) -> Result<()> {
    let mut f = std::io::BufWriter::new(std::fs::File::create(path)?);
    writeln!(f, "{RESULTS_HEADER}")?;
    for r in rows {
        writeln!(
            f,
            "{},{},{},{},{},{},{},{},{},{},{},{}",
            r.experiment,
            r.quantity,
            opt_num(r.t1),
            opt_num(r.t2),
            opt_int(r.p),
            opt_num(r.r),
            opt_num(r.eps),
            opt_num(r.zmax),
            opt_int(r.n),
            opt_int(r.seed),
            fmt_num(r.value),
            opt_num(r.stderr),
        )?;
    }
    f.flush()?;
    Ok(())
}

/// A table for external plotting, written as `plot_<name>.csv`.
#[derive(Debug, Clone, PartialEq)]
pub struct Plot {
    pub name: String,
    pub columns: Vec<String>,
    pub rows: Vec<Vec<f64>>,
}

impl Plot {
    pub fn new(name: &str, columns: &[&str]) -> Self {
        Self {
            name: name.into(),
            columns: columns.iter().map(|c| c.to_string()).collect(),
            rows: Vec::new(),
        }
    }

    pub fn write(&self, dir: &Path) -> Result<PathBuf> {
        let path = dir.join(format!("plot_{}.csv", self.name));
        let mut f = std::io::BufWriter::new(std::fs::File::create(&path)?);
        writeln!(f, "{}", self.columns.join(","))?;
        for row in &self.rows {
            let cells: Vec<String> = row.iter().map(|&v| fmt_num(v)).collect();
            writeln!(f, "{}", cells.join(","))?;
        }
        f.flush()?;
        Ok(path)
    }
}

/// Round every float in a JSON tree to nine significant digits.
pub fn round_json(v: serde_json::Value) -> serde_json::Value {
    use serde_json::Value;
    match v {
        Value::Number(n) if n.is_f64() => {
            let x = n.as_f64().unwrap_or(f64::NAN);
            fmt_num(x).parse::<f64>().ok().and_then(serde_json::Number::from_f64).map_or(Value::Null, Value::Number)
        }
        Value::Array(a) => Value::Array(a.into_iter().map(round_json).collect()),
        Value::Object(o) => Value::Object(o.into_iter().map(|(k, v)| (k, round_json(v))).collect()),
        other => other,
    }
}

/// Everything an experiment writes.
#[derive(Debug, Clone)]
pub struct Outcome {
    pub rows: Vec<ResultRow>,
    pub report: serde_json::Value,
    pub plots: Vec<Plot>,
    pub pass: bool,
}

impl Outcome {
    /// `results.csv`, `report.json` and the plot files, in a fixed order.
    pub fn write(&self, dir: &Path) -> Result<()> {
        std::fs::create_dir_all(dir)?;
        write_results(&dir.join("results.csv"), &self.rows)?;
        let json = serde_json::to_string_pretty(&round_json(self.report.clone()))?;
        std::fs::write(dir.join("report.json"), json + "\n")?;
        for p in &self.plots {
            p.write(dir)?;
        }
        Ok(())
    }
}
