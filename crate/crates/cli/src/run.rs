//! `bonsai run`: execute every replication of an experiment and persist one
//! CSV per replication plus a manifest describing how to reproduce the run.

use std::fs;
use std::path::{Path, PathBuf};
use std::time::{SystemTime, UNIX_EPOCH};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use bonsai::bench::{run_replication, ExperimentConfig, IterationRow, ReplicationRecord};
use bonsai::seeding::derive_seed;

use crate::Outcome;

pub const CSV_HEADER: [&str; 12] = [
    "rep", "t", "phase", "y_raw", "best_raw", "n_active", "eta", "rho", "m_t", "gen_ms",
    "acq_evals", "x_json",
];

pub const SCHEMA_VERSION: u32 = 1;

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ConfigFile {
    pub schema_version: u32,
    #[serde(flatten)]
    pub experiment: ExperimentConfig,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub out_dir: Option<String>,
}

#[derive(Debug, Serialize, Deserialize)]
pub struct Manifest {
    pub schema_version: u32,
    /// Effective experiment config (after any seed override).
    pub config: ExperimentConfig,
    pub build: String,
    pub started_unix_ms: u128,
    pub finished_unix_ms: u128,
    /// Root seed of each replication, derived from the master seed.
    pub per_replication_seeds: Vec<u64>,
    pub replication_files: Vec<String>,
}

fn now_ms() -> u128 {
    SystemTime::now()
        .duration_since(UNIX_EPOCH)
        .map(|d| d.as_millis())
        .unwrap_or(0)
}

pub fn rep_file_name(rep: usize) -> String {
    format!("rep_{rep:03}.csv")
}

/// Renders one record as CSV bytes with the fixed schema.
pub fn record_to_csv(record: &ReplicationRecord) -> Vec<u8> {
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(CSV_HEADER).expect("in-memory write");
    for row in &record.rows {
        write_row(&mut w, row);
    }
    w.into_inner().expect("in-memory flush")
}

fn write_row(w: &mut csv::Writer<Vec<u8>>, row: &IterationRow) {
    let x_json = serde_json::to_string(&row.x).expect("vector of finite numbers");
    w.write_record([
        row.rep.to_string(),
        row.t.to_string(),
        row.phase.to_string(),
        row.y_raw.to_string(),
        row.best_raw.to_string(),
        row.n_active.to_string(),
        row.eta.to_string(),
        row.rho.to_string(),
        row.m_t.to_string(),
        row.gen_ms.to_string(),
        row.acq_evals.to_string(),
        x_json,
    ])
    .expect("in-memory write");
}

pub fn load_config(path: &Path) -> Result<ConfigFile, String> {
    let raw = fs::read_to_string(path).map_err(|e| format!("{}: {e}", path.display()))?;
    let parsed: ConfigFile =
        serde_json::from_str(&raw).map_err(|e| format!("{}: {e}", path.display()))?;
    if parsed.schema_version != SCHEMA_VERSION {
        return Err(format!(
            "unsupported schema_version {} (expected {SCHEMA_VERSION})",
            parsed.schema_version
        ));
    }
    parsed
        .experiment
        .validate()
        .map_err(|e| format!("{e}"))?;
    Ok(parsed)
}

pub fn cmd_run(config_path: &str, jobs: usize, out_override: Option<&str>) -> Outcome {
    let mut file = match load_config(Path::new(config_path)) {
        Ok(f) => f,
        Err(msg) => return Outcome::ConfigError(msg),
    };
    if let Ok(seed_str) = std::env::var("BONSAI_SEED") {
        match seed_str.parse::<u64>() {
            Ok(seed) => file.experiment.seed = seed,
            Err(_) => {
                return Outcome::ConfigError(format!(
                    "BONSAI_SEED must be an unsigned integer, got {seed_str:?}"
                ))
            }
        }
    }
    let config = file.experiment.clone();
    let out_dir: PathBuf = out_override
        .map(PathBuf::from)
        .or_else(|| file.out_dir.clone().map(PathBuf::from))
        .unwrap_or_else(|| PathBuf::from("results").join(&config.name));
    if let Err(e) = fs::create_dir_all(&out_dir) {
        return Outcome::ConfigError(format!("cannot create {}: {e}", out_dir.display()));
    }

    let started = now_ms();
    let jobs = jobs.max(1);
    let pool = match rayon::ThreadPoolBuilder::new().num_threads(jobs).build() {
        Ok(p) => p,
        Err(e) => return Outcome::RuntimeFailure(format!("thread pool: {e}")),
    };
    let results: Vec<Result<ReplicationRecord, String>> = pool.install(|| {
        (0..config.replications)
            .into_par_iter()
            .map(|rep| run_replication(&config, rep).map_err(|e| format!("replication {rep}: {e}")))
            .collect()
    });

    let mut files = Vec::new();
    for result in results {
        match result {
            Ok(record) => {
                let name = rep_file_name(record.rep);
                let bytes = record_to_csv(&record);
                if let Err(e) = fs::write(out_dir.join(&name), bytes) {
                    return Outcome::RuntimeFailure(format!("writing {name}: {e}"));
                }
                files.push(name);
            }
            Err(msg) => return Outcome::RuntimeFailure(msg),
        }
    }
    files.sort();

    let manifest = Manifest {
        schema_version: SCHEMA_VERSION,
        per_replication_seeds: (0..config.replications)
            .map(|rep| derive_seed(config.seed, &[rep as u64]))
            .collect(),
        config,
        build: format!("{} {}", env!("CARGO_PKG_NAME"), env!("CARGO_PKG_VERSION")),
        started_unix_ms: started,
        finished_unix_ms: now_ms(),
        replication_files: files,
    };
    let manifest_json = serde_json::to_string_pretty(&manifest).expect("manifest serializes");
    if let Err(e) = fs::write(out_dir.join("manifest.json"), manifest_json) {
        return Outcome::RuntimeFailure(format!("writing manifest: {e}"));
    }
    println!(
        "wrote {} replications to {}",
        manifest.replication_files.len(),
        out_dir.display()
    );
    Outcome::Success
}
