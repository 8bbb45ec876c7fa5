//! `bonsai report`: aggregate the replication CSVs of one experiment into
//! per-iteration and per-active-level summary tables.

use std::fs;
use std::path::Path;

use bonsai::bench::{aggregate, IterationRow, Phase, ReplicationRecord};

use crate::run::{ConfigFile, CSV_HEADER};
use crate::Outcome;

fn parse_phase(s: &str) -> Result<Phase, String> {
    match s {
        "init" => Ok(Phase::Init),
        "bo" => Ok(Phase::Bo),
        other => Err(format!("unknown phase {other:?}")),
    }
}

fn parse_rows(path: &Path) -> Result<Vec<IterationRow>, String> {
    let mut reader = csv::Reader::from_path(path).map_err(|e| format!("{}: {e}", path.display()))?;
    {
        let headers = reader.headers().map_err(|e| e.to_string())?;
        let expected: Vec<&str> = CSV_HEADER.to_vec();
        if headers.iter().collect::<Vec<_>>() != expected {
            return Err(format!("{}: unexpected CSV header", path.display()));
        }
    }
    let mut rows = Vec::new();
    for record in reader.records() {
        let record = record.map_err(|e| e.to_string())?;
        let get = |i: usize| record.get(i).ok_or_else(|| "short record".to_string());
        let x: Vec<f64> =
            serde_json::from_str(get(11)?).map_err(|e| format!("x_json: {e}"))?;
        rows.push(IterationRow {
            rep: get(0)?.parse().map_err(|e| format!("rep: {e}"))?,
            t: get(1)?.parse().map_err(|e| format!("t: {e}"))?,
            phase: parse_phase(get(2)?)?,
            y_raw: get(3)?.parse().map_err(|e| format!("y_raw: {e}"))?,
            best_raw: get(4)?.parse().map_err(|e| format!("best_raw: {e}"))?,
            n_active: get(5)?.parse().map_err(|e| format!("n_active: {e}"))?,
            eta: get(6)?.parse().map_err(|e| format!("eta: {e}"))?,
            rho: get(7)?.parse().map_err(|e| format!("rho: {e}"))?,
            m_t: get(8)?.parse().map_err(|e| format!("m_t: {e}"))?,
            gen_ms: get(9)?.parse().map_err(|e| format!("gen_ms: {e}"))?,
            acq_evals: get(10)?.parse().map_err(|e| format!("acq_evals: {e}"))?,
            x,
        });
    }
    Ok(rows)
}

/// Signature of one experiment's row layout, used to reject mixed
/// directories.
fn shape_of(rows: &[IterationRow]) -> Vec<(usize, Phase, usize)> {
    rows.iter().map(|r| (r.t, r.phase, r.x.len())).collect()
}

pub fn cmd_report(dir: &str) -> Outcome {
    let dir = Path::new(dir);
    if !dir.is_dir() {
        return Outcome::ConfigError(format!("{} is not a directory", dir.display()));
    }
    let manifest_path = dir.join("manifest.json");
    let manifest_raw = match fs::read_to_string(&manifest_path) {
        Ok(s) => s,
        Err(e) => return Outcome::ConfigError(format!("{}: {e}", manifest_path.display())),
    };
    // the manifest stores the effective config under "config"
    #[derive(serde::Deserialize)]
    struct ManifestLite {
        config: serde_json::Value,
    }
    let manifest: ManifestLite = match serde_json::from_str(&manifest_raw) {
        Ok(m) => m,
        Err(e) => return Outcome::ConfigError(format!("manifest: {e}")),
    };
    let config_file = ConfigFile {
        schema_version: crate::run::SCHEMA_VERSION,
        experiment: match serde_json::from_value(manifest.config) {
            Ok(c) => c,
            Err(e) => return Outcome::ConfigError(format!("manifest config: {e}")),
        },
        out_dir: None,
    };
    let problem = match config_file.experiment.problem.build() {
        Ok(p) => p,
        Err(e) => return Outcome::ConfigError(format!("manifest problem: {e}")),
    };

    let mut csv_files: Vec<_> = match fs::read_dir(dir) {
        Ok(entries) => entries
            .filter_map(|e| e.ok())
            .map(|e| e.path())
            .filter(|p| {
                p.extension().is_some_and(|ext| ext == "csv")
                    && p.file_name()
                        .and_then(|n| n.to_str())
                        .is_some_and(|n| n.starts_with("rep_"))
            })
            .collect(),
        Err(e) => return Outcome::ConfigError(format!("{}: {e}", dir.display())),
    };
    csv_files.sort();
    if csv_files.len() < 2 {
        return Outcome::ConfigError(format!(
            "need at least 2 replication CSVs, found {}",
            csv_files.len()
        ));
    }

    let mut records = Vec::new();
    let mut shape: Option<Vec<(usize, Phase, usize)>> = None;
    for path in &csv_files {
        let rows = match parse_rows(path) {
            Ok(r) => r,
            Err(msg) => return Outcome::ConfigError(msg),
        };
        let this_shape = shape_of(&rows);
        match &shape {
            None => shape = Some(this_shape),
            Some(s) if *s != this_shape => {
                return Outcome::ConfigError(format!(
                    "{} does not match the other replications (mixed experiments in one directory?)",
                    path.display()
                ));
            }
            _ => {}
        }
        let rep = rows.first().map(|r| r.rep).unwrap_or(0);
        records.push(ReplicationRecord {
            rep,
            rows,
            traces: vec![],
        });
    }

    let summary = match aggregate(&records, problem.base.direction) {
        Ok(s) => s,
        Err(e) => return Outcome::ConfigError(format!("{e}")),
    };

    let mut summary_csv = String::from("t,mean_best,two_se,n\n");
    for it in &summary.per_iteration {
        summary_csv.push_str(&format!("{},{},{},{}\n", it.t, it.mean_best, it.two_se, it.n));
    }
    let mut levels_csv = String::from("k,mean_best,two_se,n\n");
    for lvl in &summary.active_levels {
        levels_csv.push_str(&format!("{},{},{},{}\n", lvl.k, lvl.mean_best, lvl.two_se, lvl.n));
    }
    if let Err(e) = fs::write(dir.join("summary.csv"), summary_csv) {
        return Outcome::RuntimeFailure(format!("writing summary.csv: {e}"));
    }
    if let Err(e) = fs::write(dir.join("active_levels.csv"), levels_csv) {
        return Outcome::RuntimeFailure(format!("writing active_levels.csv: {e}"));
    }

    println!("{} replications", summary.n_reps);
    println!("{:>6} {:>16} {:>12} {:>4}", "iter", "mean_best", "2se", "n");
    for it in &summary.per_iteration {
        println!(
            "{:>6} {:>16.6} {:>12.6} {:>4}",
            it.t, it.mean_best, it.two_se, it.n
        );
    }
    println!();
    println!("{:>6} {:>16} {:>12} {:>4}", "k", "best_at_level", "2se", "n");
    for lvl in &summary.active_levels {
        println!(
            "{:>6} {:>16.6} {:>12.6} {:>4}",
            lvl.k, lvl.mean_best, lvl.two_se, lvl.n
        );
    }
    Outcome::Success
}
