//! Synthetic test problems, dimensional embedding, the experiment loop, and
//! replication aggregation.
//!
//! Minimization problems are negated when observations enter the dataset and
//! de-negated at the reporting boundary, so the model side always maximizes.

use std::sync::Arc;
use std::time::Instant;

use serde::{Deserialize, Serialize};

use crate::acquisition::{AcqKind, AcqState, Acquisition};
use crate::error::{Error, Result};
use crate::gp::{fit_ensemble, Dataset, DEFAULT_ENSEMBLE_SIZE};
use crate::optimizer::{maximize_acq, OptBudget};
use crate::pruning::{exact_prune, greedy_prune, record_accuracy, AccuracyLedger, GapRule, PruneTrace};
use crate::seeding::derive_seed;
use crate::space::{l0_distance, sobol_sample, Configuration, SearchSpace};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Direction {
    Minimize,
    Maximize,
}

/// A black-box objective on its native domain.
#[derive(Clone)]
pub struct Problem {
    pub name: String,
    pub intrinsic_dim: usize,
    pub space: SearchSpace,
    pub direction: Direction,
    pub known_optimum: Option<f64>,
    pub noise_sd: f64,
    eval: Arc<dyn Fn(&[f64]) -> f64 + Send + Sync>,
}

impl Problem {
    pub fn new(
        name: &str,
        space: SearchSpace,
        direction: Direction,
        known_optimum: Option<f64>,
        eval: Arc<dyn Fn(&[f64]) -> f64 + Send + Sync>,
    ) -> Self {
        Problem {
            name: name.to_string(),
            intrinsic_dim: space.dim(),
            space,
            direction,
            known_optimum,
            noise_sd: 0.0,
            eval,
        }
    }

    pub fn eval(&self, x: &[f64]) -> f64 {
        (self.eval)(x)
    }
}

impl std::fmt::Debug for Problem {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("Problem")
            .field("name", &self.name)
            .field("intrinsic_dim", &self.intrinsic_dim)
            .field("direction", &self.direction)
            .finish()
    }
}

/// Standard two-dimensional Branin function on `[-5,10] x [0,15]`
/// (minimization; optimum 0.397887...).
pub fn branin_fn(x: &[f64]) -> f64 {
    let (x1, x2) = (x[0], x[1]);
    let pi = std::f64::consts::PI;
    let a = 1.0;
    let b = 5.1 / (4.0 * pi * pi);
    let c = 5.0 / pi;
    let r = 6.0;
    let s = 10.0;
    let t = 1.0 / (8.0 * pi);
    a * (x2 - b * x1 * x1 + c * x1 - r).powi(2) + s * (1.0 - t) * x1.cos() + s
}

pub fn branin() -> Problem {
    Problem::new(
        "branin",
        SearchSpace::new(vec![-5.0, 0.0], vec![10.0, 15.0]).unwrap(),
        Direction::Minimize,
        Some(0.39788735772973816),
        Arc::new(|x| branin_fn(x)),
    )
}

const HARTMANN_A: [[f64; 6]; 4] = [
    [10.0, 3.0, 17.0, 3.5, 1.7, 8.0],
    [0.05, 10.0, 17.0, 0.1, 8.0, 14.0],
    [3.0, 3.5, 1.7, 10.0, 17.0, 8.0],
    [17.0, 8.0, 0.05, 10.0, 0.1, 14.0],
];
const HARTMANN_P: [[f64; 6]; 4] = [
    [0.1312, 0.1696, 0.5569, 0.0124, 0.8283, 0.5886],
    [0.2329, 0.4135, 0.8307, 0.3736, 0.1004, 0.9991],
    [0.2348, 0.1451, 0.3522, 0.2883, 0.3047, 0.6650],
    [0.4047, 0.8828, 0.8732, 0.5743, 0.1091, 0.0381],
];
const HARTMANN_C: [f64; 4] = [1.0, 1.2, 3.0, 3.2];

/// Standard six-dimensional Hartmann function on the unit cube
/// (minimization; optimum -3.32237...).
pub fn hartmann6_fn(x: &[f64]) -> f64 {
    let mut sum = 0.0;
    for i in 0..4 {
        let mut inner = 0.0;
        for j in 0..6 {
            let d = x[j] - HARTMANN_P[i][j];
            inner += HARTMANN_A[i][j] * d * d;
        }
        sum += HARTMANN_C[i] * (-inner).exp();
    }
    -sum
}

pub fn hartmann6() -> Problem {
    Problem::new(
        "hartmann6",
        SearchSpace::unit(6).unwrap(),
        Direction::Minimize,
        Some(-3.322368011391339),
        Arc::new(|x| hartmann6_fn(x)),
    )
}

/// A base problem placed inside a higher-dimensional box: the objective reads
/// only the first `intrinsic_dim` coordinates, extra coordinates get `[0,1]`
/// bounds, and the default configuration sits at the center of the full
/// space.
#[derive(Debug, Clone)]
pub struct EmbeddedProblem {
    pub base: Problem,
    pub total_dim: usize,
    pub space: SearchSpace,
    pub default: Configuration,
}

impl EmbeddedProblem {
    pub fn active_indices(&self) -> std::ops::Range<usize> {
        0..self.base.intrinsic_dim
    }

    pub fn eval(&self, x: &Configuration) -> f64 {
        self.base.eval(&x.values()[..self.base.intrinsic_dim])
    }
}

pub fn embed(base: Problem, total_dim: usize) -> Result<EmbeddedProblem> {
    if total_dim < base.intrinsic_dim {
        return Err(Error::InvalidConfig(format!(
            "embedding dimension {total_dim} below intrinsic {}",
            base.intrinsic_dim
        )));
    }
    let mut lower = base.space.lower().to_vec();
    let mut upper = base.space.upper().to_vec();
    lower.resize(total_dim, 0.0);
    upper.resize(total_dim, 1.0);
    let space = SearchSpace::new(lower, upper)?;
    let default = space.center();
    Ok(EmbeddedProblem {
        base,
        total_dim,
        space,
        default,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Method {
    Sobol,
    StandardBo,
    Bonsai,
    BonsaiExact,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum ProblemSpec {
    Branin { embed_dim: usize },
    Hartmann6 { embed_dim: usize },
}

impl ProblemSpec {
    pub fn build(&self) -> Result<EmbeddedProblem> {
        match self {
            ProblemSpec::Branin { embed_dim } => embed(branin(), *embed_dim),
            ProblemSpec::Hartmann6 { embed_dim } => embed(hartmann6(), *embed_dim),
        }
    }
}

fn default_init_sobol() -> usize {
    20
}

fn default_q() -> usize {
    1
}

fn default_record_timing() -> bool {
    true
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentConfig {
    pub name: String,
    pub problem: ProblemSpec,
    pub method: Method,
    pub acquisition: AcqKind,
    pub gap_rule: GapRule,
    #[serde(default = "default_q")]
    pub q: usize,
    #[serde(default = "default_init_sobol")]
    pub init_sobol: usize,
    pub iterations: usize,
    pub replications: usize,
    pub seed: u64,
    /// When false, `gen_ms` is written as zero so reruns are byte-identical.
    #[serde(default = "default_record_timing")]
    pub record_timing: bool,
}

impl ExperimentConfig {
    pub fn validate(&self) -> Result<()> {
        self.gap_rule.validate()?;
        if self.q == 0 {
            return Err(Error::InvalidConfig("q must be at least 1".into()));
        }
        if self.replications == 0 {
            return Err(Error::InvalidConfig("replications must be at least 1".into()));
        }
        if self.method == Method::BonsaiExact && self.q != 1 {
            return Err(Error::InvalidConfig(
                "bonsai_exact supports only sequential (q = 1) runs".into(),
            ));
        }
        self.problem.build().map(|_| ())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Phase {
    Init,
    Bo,
}

impl std::fmt::Display for Phase {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            Phase::Init => write!(f, "init"),
            Phase::Bo => write!(f, "bo"),
        }
    }
}

/// One evaluated point with its per-round metrics.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IterationRow {
    pub rep: usize,
    pub t: usize,
    pub phase: Phase,
    pub x: Vec<f64>,
    pub y_raw: f64,
    pub best_raw: f64,
    pub n_active: usize,
    pub eta: f64,
    pub rho: f64,
    pub m_t: f64,
    pub gen_ms: f64,
    pub acq_evals: usize,
}

#[derive(Debug, Clone)]
pub struct ReplicationRecord {
    pub rep: usize,
    pub rows: Vec<IterationRow>,
    /// Prune traces for the BO rounds, in row order (one per suggestion).
    pub traces: Vec<PruneTrace>,
}

impl ReplicationRecord {
    pub fn final_bo_row(&self) -> Option<&IterationRow> {
        self.rows.iter().rev().find(|r| r.phase == Phase::Bo)
    }

    /// The run's final recommendation: the evaluated point that achieved the
    /// best objective (what a practitioner would deploy).
    pub fn final_recommendation(&self) -> Option<&IterationRow> {
        let best = self.rows.last()?.best_raw;
        self.rows.iter().find(|r| r.y_raw == best)
    }
}

fn better(direction: Direction, a: f64, b: f64) -> bool {
    match direction {
        Direction::Minimize => a < b,
        Direction::Maximize => a > b,
    }
}

/// Runs one replication of the configured experiment. Deterministic given
/// `(config.seed, rep_index)`.
pub fn run_replication(config: &ExperimentConfig, rep_index: usize) -> Result<ReplicationRecord> {
    config.validate()?;
    let problem = config.problem.build()?;
    let space = problem.space.clone();
    let x_def = problem.default.clone();
    let direction = problem.base.direction;
    let budget = OptBudget::default();

    let mut rows: Vec<IterationRow> = Vec::new();
    let mut traces: Vec<PruneTrace> = Vec::new();
    let mut ledger = AccuracyLedger::new();
    let mut configs: Vec<Configuration> = Vec::new();
    let mut ys_model: Vec<f64> = Vec::new();
    let mut best_raw = f64::NAN;
    let mut best_config: Option<Configuration> = None;

    let rep_seed = derive_seed(config.seed, &[rep_index as u64]);
    let sobol_seed = derive_seed(rep_seed, &[0x50b01]);
    // one stream for init and any quasi-random rounds, so prefixes extend
    let sobol_budget = config.init_sobol + config.q * config.iterations;
    let sobol_points = sobol_sample(&space, sobol_budget, sobol_seed)?;
    let mut sobol_cursor = 0usize;

    let push_eval = |rows: &mut Vec<IterationRow>,
                         configs: &mut Vec<Configuration>,
                         ys_model: &mut Vec<f64>,
                         best_raw: &mut f64,
                         best_config: &mut Option<Configuration>,
                         t: usize,
                         phase: Phase,
                         x: Configuration,
                         eta: f64,
                         rho: f64,
                         m_t: f64,
                         gen_ms: f64,
                         acq_evals: usize|
     -> Result<()> {
        let y_raw = problem.eval(&x);
        let y_model = match direction {
            Direction::Minimize => -y_raw,
            Direction::Maximize => y_raw,
        };
        if best_raw.is_nan() || better(direction, y_raw, *best_raw) {
            *best_raw = y_raw;
            *best_config = Some(x.clone());
        }
        let n_active = l0_distance(&x, &x_def)?;
        rows.push(IterationRow {
            rep: rep_index,
            t,
            phase,
            x: x.values().to_vec(),
            y_raw,
            best_raw: *best_raw,
            n_active,
            eta,
            rho,
            m_t,
            gen_ms,
            acq_evals,
        });
        configs.push(x);
        ys_model.push(y_model);
        Ok(())
    };

    // init: the default point, then the quasi-random batch
    push_eval(
        &mut rows, &mut configs, &mut ys_model, &mut best_raw, &mut best_config,
        1, Phase::Init, x_def.clone(), 1.0, 0.0, 0.0, 0.0, 0,
    )?;
    for i in 0..config.init_sobol {
        let x = sobol_points[sobol_cursor].clone();
        sobol_cursor += 1;
        push_eval(
            &mut rows, &mut configs, &mut ys_model, &mut best_raw, &mut best_config,
            i + 2, Phase::Init, x, 1.0, 0.0, 0.0, 0.0, 0,
        )?;
    }

    for t in 1..=config.iterations {
        let round = |e: Error| e.with_round(t);
        let started = Instant::now();
        let mut suggestions: Vec<(Configuration, f64, f64, usize)> = Vec::new();

        if config.method == Method::Sobol {
            for _ in 0..config.q {
                let x = sobol_points[sobol_cursor].clone();
                sobol_cursor += 1;
                suggestions.push((x, 1.0, 0.0, 0));
            }
        } else {
            let rho = match config.method {
                Method::StandardBo => 0.0,
                _ => config.gap_rule.rho_at(t),
            };
            let dataset = Dataset::from_raw(&space, &configs, &ys_model).map_err(round)?;
            let fit_seed = derive_seed(rep_seed, &[0xf17, t as u64]);
            let model =
                fit_ensemble(&dataset, DEFAULT_ENSEMBLE_SIZE, fit_seed).map_err(round)?;
            let mut state =
                AcqState::new(config.acquisition, model, t, &configs).map_err(round)?;

            for slot in 0..config.q {
                let opt_seed = derive_seed(rep_seed, &[0x0b7, t as u64, slot as u64]);
                let mut anchors: Vec<Configuration> = vec![x_def.clone()];
                if let Some(b) = &best_config {
                    anchors.push(b.clone());
                }
                // keeps the maximizer from landing below the baseline
                if let Some(bp) = state.baseline_point() {
                    anchors.push(bp.clone());
                }
                let (x_star, _) =
                    maximize_acq(&state, &space, &budget, opt_seed, &anchors).map_err(round)?;
                let (x_tilde, trace) = match config.method {
                    Method::StandardBo => {
                        // pruning disabled: keep the maximizer as-is
                        let value_star = state.pruning_value(&x_star);
                        let trace = PruneTrace {
                            steps: vec![],
                            acq_evals: 0,
                            final_gap: 0.0,
                            rho_used: 0.0,
                            budget: 0.0,
                            skipped: true,
                            exhaustive: false,
                            baseline: state.baseline(),
                            value_star,
                            active_before: l0_distance(&x_star, &x_def).map_err(round)?,
                        };
                        (x_star.clone(), trace)
                    }
                    Method::Bonsai => greedy_prune(&state, &x_star, &x_def, rho).map_err(round)?,
                    Method::BonsaiExact => exact_prune(&state, &x_star, &x_def, rho).map_err(round)?,
                    Method::Sobol => unreachable!(),
                };
                let eta = record_accuracy(&mut ledger, &state, &x_star, &x_tilde, rho)
                    .map_err(round)?;
                traces.push(trace.clone());
                suggestions.push((x_tilde.clone(), eta, rho, trace.acq_evals));
                if slot + 1 < config.q {
                    state = state.batch_condition(&x_tilde).map_err(round)?;
                }
            }
        }

        let gen_ms = if config.record_timing {
            started.elapsed().as_secs_f64() * 1e3
        } else {
            0.0
        };
        for (slot, (x, eta, rho, acq_evals)) in suggestions.into_iter().enumerate() {
            let m_t = ledger.m_t();
            push_eval(
                &mut rows, &mut configs, &mut ys_model, &mut best_raw, &mut best_config,
                t, Phase::Bo, x, eta, rho, m_t,
                if slot == 0 { gen_ms } else { 0.0 },
                acq_evals,
            )?;
        }
    }

    Ok(ReplicationRecord {
        rep: rep_index,
        rows,
        traces,
    })
}

/// Per-iteration aggregate of `best_raw` across replications.
#[derive(Debug, Clone, Serialize)]
pub struct IterAggregate {
    pub t: usize,
    pub mean_best: f64,
    pub two_se: f64,
    pub n: usize,
}

/// Best objective using at most `k` active dimensions, aggregated.
#[derive(Debug, Clone, Serialize)]
pub struct LevelAggregate {
    pub k: usize,
    pub mean_best: f64,
    pub two_se: f64,
    pub n: usize,
}

#[derive(Debug, Clone, Serialize)]
pub struct Summary {
    pub n_reps: usize,
    pub per_iteration: Vec<IterAggregate>,
    pub active_levels: Vec<LevelAggregate>,
}

fn mean_and_two_se(values: &[f64]) -> (f64, f64) {
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    let var = values.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / (n - 1.0);
    (mean, 2.0 * (var / n).sqrt())
}

/// Aggregates replication records: per-iteration mean and two standard errors
/// of the best objective so far, plus the best-objective-per-active-level
/// curve over evaluated points. Needs at least two records.
pub fn aggregate(records: &[ReplicationRecord], direction: Direction) -> Result<Summary> {
    if records.len() < 2 {
        return Err(Error::InvalidConfig(
            "aggregation needs at least 2 replications for standard errors".into(),
        ));
    }
    let n_reps = records.len();

    let mut per_iteration = Vec::new();
    let iters: Vec<usize> = records[0]
        .rows
        .iter()
        .filter(|r| r.phase == Phase::Bo)
        .map(|r| r.t)
        .collect();
    let mut seen = std::collections::BTreeSet::new();
    for t in iters {
        if !seen.insert(t) {
            continue;
        }
        let vals: Vec<f64> = records
            .iter()
            .filter_map(|rec| {
                rec.rows
                    .iter()
                    .filter(|r| r.phase == Phase::Bo && r.t == t)
                    .map(|r| r.best_raw)
                    .last()
            })
            .collect();
        if vals.len() == n_reps {
            let (mean, two_se) = mean_and_two_se(&vals);
            per_iteration.push(IterAggregate {
                t,
                mean_best: mean,
                two_se,
                n: n_reps,
            });
        }
    }

    let max_dim = records
        .iter()
        .flat_map(|r| r.rows.iter().map(|row| row.x.len()))
        .max()
        .unwrap_or(0);
    let mut active_levels = Vec::new();
    for k in 0..=max_dim {
        let mut vals = Vec::new();
        for rec in records {
            let best = rec
                .rows
                .iter()
                .filter(|r| r.n_active <= k)
                .map(|r| r.y_raw)
                .fold(None, |acc: Option<f64>, y| match acc {
                    Some(b) if better(direction, b, y) => Some(b),
                    _ => Some(y),
                });
            if let Some(b) = best {
                vals.push(b);
            }
        }
        if vals.len() == n_reps {
            let (mean, two_se) = mean_and_two_se(&vals);
            active_levels.push(LevelAggregate {
                k,
                mean_best: mean,
                two_se,
                n: n_reps,
            });
        }
    }

    Ok(Summary {
        n_reps,
        per_iteration,
        active_levels,
    })
}
