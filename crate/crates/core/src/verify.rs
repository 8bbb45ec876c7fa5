//! Verification oracles behind the CLI `verify` command and the acceptance
//! suite: finite-difference gradient checks, exact-vs-greedy pruning audits
//! on closed-form acquisition instances, kernel sensitivity bounds, and
//! threshold-schedule sums.
//!
//! Everything here checks the production code against an independent route:
//! finite differences against analytic gradients, subset enumeration against
//! the greedy policy, numeric sums against closed-form constants.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use crate::acquisition::Acquisition;
use crate::error::Result;
use crate::gp::{fit_ensemble, Dataset, GPMember};
use crate::kernel::{
    coordinate_bound, kernel_eval, kernel_grad_x, sup_abs_profile_deriv, KernelFamily,
    KernelParams, NoiseModel,
};
use crate::pruning::{exact_prune, greedy_prune, AccuracyLedger, GapRule};
use crate::space::{l0_distance, Configuration, SearchSpace};

/// Outcome of one checked property.
#[derive(Debug, Clone, Serialize)]
pub struct PropertyResult {
    pub name: String,
    pub passed: bool,
    pub detail: String,
}

impl PropertyResult {
    fn new(name: &str, passed: bool, detail: String) -> Self {
        PropertyResult {
            name: name.to_string(),
            passed,
            detail,
        }
    }
}

/// Closure-backed acquisition for tests and closed-form oracles.
pub struct FnAcquisition<F> {
    f: F,
    baseline: f64,
}

impl<F: Fn(&Configuration) -> f64> FnAcquisition<F> {
    pub fn new(f: F, baseline: f64) -> Self {
        FnAcquisition { f, baseline }
    }
}

impl<F: Fn(&Configuration) -> f64> Acquisition for FnAcquisition<F> {
    fn value(&self, x: &Configuration) -> f64 {
        (self.f)(x)
    }

    fn baseline(&self) -> f64 {
        self.baseline
    }
}

/// Concave quadratic acquisition with a known exact maximizer and an
/// optional rank-1 interaction term, used as a closed-form pruning instance:
/// `alpha(x) = 1 - sum_j w_j (x_j - c_j)^2 - lambda (u . (x - c))^2`.
#[derive(Debug, Clone, Serialize)]
pub struct QuadraticInstance {
    pub dim: usize,
    pub center: Vec<f64>,
    pub weights: Vec<f64>,
    pub coupling: Vec<f64>,
    pub coupling_scale: f64,
    pub x_def: Vec<f64>,
    pub baseline: f64,
    pub rho: f64,
}

impl QuadraticInstance {
    pub fn random(rng: &mut ChaCha8Rng, max_dim: usize) -> Self {
        let dim = rng.random_range(2..=max_dim);
        let center: Vec<f64> = (0..dim).map(|_| rng.random_range(0.05..0.95)).collect();
        // log-uniform weights so some components are cheap to reset
        let weights: Vec<f64> = (0..dim)
            .map(|_| (rng.random_range((0.02f64).ln()..(2.0f64).ln())).exp())
            .collect();
        let coupled = rng.random_range(0.0..1.0) < 0.4;
        let coupling: Vec<f64> = if coupled {
            let raw: Vec<f64> = (0..dim).map(|_| rng.random_range(-1.0..1.0)).collect();
            let norm = raw.iter().map(|v| v * v).sum::<f64>().sqrt().max(1e-9);
            raw.into_iter().map(|v| v / norm).collect()
        } else {
            vec![0.0; dim]
        };
        let coupling_scale = if coupled { rng.random_range(0.1..2.0) } else { 0.0 };
        let x_def: Vec<f64> = if rng.random_range(0.0..1.0) < 0.5 {
            vec![0.5; dim]
        } else {
            (0..dim).map(|_| rng.random_range(0.0..1.0)).collect()
        };
        QuadraticInstance {
            dim,
            center,
            weights,
            coupling,
            coupling_scale,
            x_def,
            baseline: rng.random_range(0.0..0.8),
            rho: rng.random_range(0.05..0.8),
        }
    }

    pub fn maximizer(&self) -> Configuration {
        Configuration::new(self.center.clone())
    }

    pub fn default_config(&self) -> Configuration {
        Configuration::new(self.x_def.clone())
    }
}

impl Acquisition for QuadraticInstance {
    fn value(&self, x: &Configuration) -> f64 {
        let mut v = 1.0;
        let mut proj = 0.0;
        for j in 0..self.dim {
            let d = x.values()[j] - self.center[j];
            v -= self.weights[j] * d * d;
            proj += self.coupling[j] * d;
        }
        v - self.coupling_scale * proj * proj
    }

    fn baseline(&self) -> f64 {
        self.baseline
    }
}

/// Paired greedy/exact run on one instance.
#[derive(Debug, Clone, Serialize)]
pub struct PruneComparison {
    pub greedy_active: usize,
    pub exact_active: usize,
    pub identical: bool,
    pub greedy_feasible: bool,
    pub exact_feasible: bool,
    pub evals_within_quadratic_budget: bool,
}

pub fn compare_prune(instance: &QuadraticInstance) -> Result<PruneComparison> {
    let x_star = instance.maximizer();
    let x_def = instance.default_config();
    let (g, gt) = greedy_prune(instance, &x_star, &x_def, instance.rho)?;
    let (e, et) = exact_prune(instance, &x_star, &x_def, instance.rho)?;
    let a0 = gt.active_before;
    Ok(PruneComparison {
        greedy_active: l0_distance(&g, &x_def)?,
        exact_active: l0_distance(&e, &x_def)?,
        identical: g == e,
        greedy_feasible: gt.skipped || gt.final_gap <= gt.budget + 1e-9,
        exact_feasible: et.skipped || et.final_gap <= et.budget + 1e-9,
        evals_within_quadratic_budget: gt.acq_evals <= a0 * (a0 + 1) / 2,
    })
}

/// Greedy-vs-exact suite: `n` seeded closed-form instances with `d <= 10`.
/// Exact must never keep more components than greedy, both must satisfy the
/// gap rule, and the two must return identical points on at least
/// `min_agreement` of the instances.
pub fn verify_prune(n: usize, seed: u64, min_agreement: f64) -> Vec<PropertyResult> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut agree = 0usize;
    let mut dominance_failures = Vec::new();
    let mut feasibility_failures = Vec::new();
    let mut budget_failures = Vec::new();
    for _ in 0..n {
        let inst = QuadraticInstance::random(&mut rng, 10);
        let cmp = match compare_prune(&inst) {
            Ok(c) => c,
            Err(e) => {
                feasibility_failures.push(format!("error: {e}"));
                continue;
            }
        };
        if cmp.identical {
            agree += 1;
        }
        if cmp.exact_active > cmp.greedy_active {
            dominance_failures.push(serde_json::to_string(&inst).unwrap_or_default());
        }
        if !cmp.greedy_feasible || !cmp.exact_feasible {
            feasibility_failures.push(serde_json::to_string(&inst).unwrap_or_default());
        }
        if !cmp.evals_within_quadratic_budget {
            budget_failures.push(serde_json::to_string(&inst).unwrap_or_default());
        }
    }
    let rate = agree as f64 / n as f64;
    vec![
        PropertyResult::new(
            "prune/exact_dominates_greedy",
            dominance_failures.is_empty(),
            if dominance_failures.is_empty() {
                format!("{n} instances, exact active count <= greedy on all")
            } else {
                format!("counterexample: {}", dominance_failures[0])
            },
        ),
        PropertyResult::new(
            "prune/both_satisfy_gap_rule",
            feasibility_failures.is_empty(),
            if feasibility_failures.is_empty() {
                format!("{n} instances, zero violations")
            } else {
                format!("counterexample: {}", feasibility_failures[0])
            },
        ),
        PropertyResult::new(
            "prune/quadratic_eval_budget",
            budget_failures.is_empty(),
            if budget_failures.is_empty() {
                "acq_evals <= |A|(|A|+1)/2 on all instances".to_string()
            } else {
                format!("counterexample: {}", budget_failures[0])
            },
        ),
        PropertyResult::new(
            "prune/greedy_exact_agreement",
            rate >= min_agreement,
            format!("identical points on {:.1}% (floor {:.0}%)", 100.0 * rate, 100.0 * min_agreement),
        ),
    ]
}

/// Kernel suite: coordinate sensitivity bound on random pairs for both
/// families, gradient finite differences, and the closed-form maximum of the
/// squared-exponential profile derivative.
pub fn verify_kernel(pairs: usize, seed: u64) -> Vec<PropertyResult> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut out = Vec::new();

    for family in [KernelFamily::Matern52, KernelFamily::SquaredExponential] {
        let mut violations = 0usize;
        let mut worst = f64::NEG_INFINITY;
        for _ in 0..pairs {
            let d = rng.random_range(1..=8);
            let ls: Vec<f64> = (0..d).map(|_| rng.random_range(0.05..5.0)).collect();
            let s = rng.random_range(0.1..3.0);
            let p = KernelParams::new(ls, s, family).unwrap();
            let x: Vec<f64> = (0..d).map(|_| rng.random_range(-1.0..2.0)).collect();
            let y: Vec<f64> = (0..d).map(|_| rng.random_range(-1.0..2.0)).collect();
            let g = kernel_grad_x(&x, &y, &p).unwrap();
            let b = coordinate_bound(&p);
            for j in 0..d {
                let slack = g[j].abs() - b[j];
                worst = worst.max(slack);
                if slack > 0.0 {
                    violations += 1;
                }
            }
        }
        out.push(PropertyResult::new(
            &format!("kernel/sensitivity_bound_{family:?}"),
            violations == 0,
            format!("{pairs} pairs, {violations} violations, worst slack {worst:.3e}"),
        ));
    }

    let mut max_rel = 0.0f64;
    for _ in 0..200 {
        let d = rng.random_range(1..=5);
        let family = if rng.random_range(0.0..1.0) < 0.5 {
            KernelFamily::Matern52
        } else {
            KernelFamily::SquaredExponential
        };
        let ls: Vec<f64> = (0..d).map(|_| rng.random_range(0.1..3.0)).collect();
        let p = KernelParams::new(ls, rng.random_range(0.5..2.0), family).unwrap();
        let x: Vec<f64> = (0..d).map(|_| rng.random_range(0.0..1.0)).collect();
        let y: Vec<f64> = (0..d).map(|_| rng.random_range(0.0..1.0)).collect();
        let g = kernel_grad_x(&x, &y, &p).unwrap();
        let h = 1e-6;
        for j in 0..d {
            let mut xp = x.clone();
            let mut xm = x.clone();
            xp[j] += h;
            xm[j] -= h;
            let fd =
                (kernel_eval(&xp, &y, &p).unwrap() - kernel_eval(&xm, &y, &p).unwrap()) / (2.0 * h);
            let rel = (g[j] - fd).abs() / fd.abs().max(g[j].abs()).max(1e-6);
            max_rel = max_rel.max(rel);
        }
    }
    out.push(PropertyResult::new(
        "kernel/grad_finite_difference",
        max_rel <= 1e-5,
        format!("max relative error {max_rel:.3e} (tolerance 1e-5)"),
    ));

    let se_sup = sup_abs_profile_deriv(KernelFamily::SquaredExponential);
    let expected = (-0.5f64).exp();
    out.push(PropertyResult::new(
        "kernel/se_profile_max",
        (se_sup - expected).abs() <= 1e-8,
        format!("numeric {se_sup:.12} vs e^(-1/2) {expected:.12}"),
    ));

    out
}

/// GP suite: noiseless interpolation, marginal-likelihood gradients against
/// central finite differences on 50 random 10-point datasets, and posterior
/// variance monotonicity under data addition.
pub fn verify_gp(seed: u64) -> Vec<PropertyResult> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut out = Vec::new();

    // interpolation on well-separated designs (clustered duplicates would
    // only measure conditioning, not the posterior math)
    let mut worst_interp = 0.0f64;
    let mut worst_sd = 0.0f64;
    for _ in 0..5 {
        let d = rng.random_range(2..=3);
        let space = SearchSpace::unit(d).unwrap();
        let mut xs: Vec<Configuration> = Vec::new();
        while xs.len() < 10 {
            let c: Vec<f64> = (0..d).map(|_| rng.random_range(0.0..1.0)).collect();
            let sep = xs
                .iter()
                .map(|p| {
                    p.values()
                        .iter()
                        .zip(&c)
                        .map(|(a, b)| (a - b) * (a - b))
                        .sum::<f64>()
                        .sqrt()
                })
                .fold(f64::INFINITY, f64::min);
            if sep > 0.15 {
                xs.push(Configuration::new(c));
            }
        }
        let ys: Vec<f64> = xs
            .iter()
            .map(|x| (4.0 * x.values()[0]).sin() + rng.random_range(-0.2..0.2))
            .collect();
        let data = Dataset::from_raw(&space, &xs, &ys).unwrap();
        let params = KernelParams::new(vec![0.2; d], 1.5, KernelFamily::Matern52).unwrap();
        let member =
            GPMember::factorize(params, NoiseModel::new(0.0), 0.0, 0.1, false, &data).unwrap();
        for i in 0..data.n() {
            let row: Vec<f64> = (0..d).map(|j| data.inputs()[(i, j)]).collect();
            let (mu, sd) = member.posterior_norm(&data, &row);
            worst_interp = worst_interp.max((mu - data.targets()[i]).abs());
            worst_sd = worst_sd.max(sd);
        }
    }
    out.push(PropertyResult::new(
        "gp/noiseless_interpolation",
        worst_interp <= 1e-5 && worst_sd <= 1e-3,
        format!(
            "max |mu - y| at training points {worst_interp:.3e} (tolerance 1e-5), max sd {worst_sd:.3e}"
        ),
    ));

    // LML gradient finite differences
    let mut max_rel = 0.0f64;
    for _ in 0..50 {
        let d = rng.random_range(1..=4);
        let space = SearchSpace::unit(d).unwrap();
        let xs: Vec<Configuration> = (0..10)
            .map(|_| Configuration::new((0..d).map(|_| rng.random_range(0.0..1.0)).collect()))
            .collect();
        let ys: Vec<f64> = (0..10).map(|_| rng.random_range(-2.0..2.0)).collect();
        let data = Dataset::from_raw(&space, &xs, &ys).unwrap();
        let ls: Vec<f64> = (0..d).map(|_| rng.random_range(0.2..2.0)).collect();
        let params = KernelParams::new(ls, rng.random_range(0.3..2.0), KernelFamily::Matern52).unwrap();
        let noise = NoiseModel::new(rng.random_range(1e-4..0.1));
        let mean = rng.random_range(-0.5..0.5);
        let member = GPMember::factorize(params, noise, mean, 0.1, false, &data).unwrap();
        let (_, grad) = member.log_marginal_likelihood(&data).unwrap();
        let h = 1e-5;
        // perturb each theta coordinate through a re-factorized member
        let theta: Vec<f64> = member
            .params
            .lengthscales
            .iter()
            .map(|l| l.ln())
            .chain([noise.variance().ln(), member.params.signal_variance.ln(), mean])
            .collect();
        for j in 0..theta.len() {
            let eval = |tj: f64| -> f64 {
                let mut t = theta.clone();
                t[j] = tj;
                let ls: Vec<f64> = t[..d].iter().map(|v| v.exp()).collect();
                let p = KernelParams::new(ls, t[d + 1].exp(), KernelFamily::Matern52).unwrap();
                let m = GPMember::factorize(
                    p,
                    NoiseModel::new(t[d].exp()),
                    t[d + 2],
                    0.1,
                    false,
                    &data,
                )
                .unwrap();
                m.log_marginal_likelihood(&data).unwrap().0
            };
            let fd = (eval(theta[j] + h) - eval(theta[j] - h)) / (2.0 * h);
            let rel = (grad[j] - fd).abs() / fd.abs().max(grad[j].abs()).max(1e-6);
            max_rel = max_rel.max(rel);
        }
    }
    out.push(PropertyResult::new(
        "gp/lml_gradient_fd",
        max_rel <= 1e-4,
        format!("50 datasets, max relative error {max_rel:.3e} (tolerance 1e-4)"),
    ));

    // variance monotonicity under data addition, on a fitted ensemble
    let mut worst_increase = f64::NEG_INFINITY;
    let snapshot_json;
    {
        let space = SearchSpace::unit(2).unwrap();
        let xs: Vec<Configuration> = (0..10)
            .map(|_| Configuration::new(vec![rng.random_range(0.0..1.0), rng.random_range(0.0..1.0)]))
            .collect();
        let ys: Vec<f64> = (0..10).map(|_| rng.random_range(-1.0..1.0)).collect();
        let data = Dataset::from_raw(&space, &xs, &ys).unwrap();
        let model = fit_ensemble(&data, 2, seed).unwrap();
        snapshot_json = serde_json::to_string(&model.snapshot()).unwrap_or_default();
        let new_point = Configuration::new(vec![0.31, 0.64]);
        let cond = model.condition_on(&new_point, 0.1).unwrap();
        for _ in 0..50 {
            let x = Configuration::new(vec![rng.random_range(0.0..1.0), rng.random_range(0.0..1.0)]);
            let before = model.member_posteriors(&x).unwrap();
            let after = cond.member_posteriors(&x).unwrap();
            for (b, a) in before.iter().zip(&after) {
                worst_increase = worst_increase.max(a.1 * a.1 - b.1 * b.1);
            }
        }
    }
    let monotone = worst_increase <= 1e-8;
    out.push(PropertyResult::new(
        "gp/posterior_variance_monotone",
        monotone,
        if monotone {
            format!("max variance increase {worst_increase:.3e} (tolerance 1e-8)")
        } else {
            // serialized model state as the counterexample
            format!("max variance increase {worst_increase:.3e}; model {snapshot_json}")
        },
    ));

    out
}

/// Schedule suite: partial sums of the decaying thresholds against their
/// closed-form limits, plus the clamp behavior.
pub fn verify_schedule() -> Vec<PropertyResult> {
    let pi2_6 = std::f64::consts::PI * std::f64::consts::PI / 6.0;
    let mut out = Vec::new();

    let inv_sq = GapRule::inverse_power(1.0, 1.0).unwrap();
    let sum_1e4: f64 = (1..=10_000).map(|t| inv_sq.rho_at_unclamped(t)).sum();
    out.push(PropertyResult::new(
        "schedule/inverse_square_sum_T1e4",
        (sum_1e4 - pi2_6).abs() <= 1e-3,
        format!("partial sum {sum_1e4:.9} vs pi^2/6 {pi2_6:.9}"),
    ));

    let sum_100: f64 = (1..=100).map(|t| inv_sq.rho_at_unclamped(t)).sum();
    out.push(PropertyResult::new(
        "schedule/inverse_square_sum_T100",
        (sum_100 - pi2_6).abs() <= 1e-2,
        format!("partial sum {sum_100:.9} vs pi^2/6 {pi2_6:.9}"),
    ));

    let inv_t = GapRule::inverse_t(1.0).unwrap();
    let mut ledger = AccuracyLedger::new();
    for t in 1..=100 {
        ledger.record(1.0, inv_t.rho_at_unclamped(t));
    }
    let h100 = 5.187377517639621;
    out.push(PropertyResult::new(
        "schedule/harmonic_m_t_T100",
        (ledger.m_t() - h100).abs() <= 1e-9,
        format!("M_T {:.12} vs H_100 {h100:.12}", ledger.m_t()),
    ));

    out.push(PropertyResult::new(
        "schedule/clamp_at_t1",
        inv_t.rho_at(1) == 0.99,
        format!("rho_1 = {}", inv_t.rho_at(1)),
    ));

    let c = GapRule::constant(0.2).unwrap();
    let constant_ok = (1..=50).all(|t| c.rho_at(t) == 0.2);
    out.push(PropertyResult::new(
        "schedule/constant_rho",
        constant_ok,
        "rho_t = 0.2 at every t".to_string(),
    ));

    out
}
