//! Gap-rule pruning of acquisition maximizers toward the default
//! configuration: threshold schedules, sequential greedy pruning, the exact
//! enumeration reference, batch pruning, and accuracy bookkeeping.
//!
//! A pruned candidate is admissible when its acquisition gap stays within
//! `rho_t` times the incremental acquisition value of the maximizer. Greedy
//! pruning resets one component at a time, always taking the feasible reset
//! with the smallest gap; it needs at most `|A|(|A|+1)/2` acquisition
//! evaluations for an initial active set `A`. Exact pruning enumerates all
//! keep-subsets in order of cardinality and is capped at 20 active
//! components.

use serde::{Deserialize, Serialize};

use crate::acquisition::Acquisition;
use crate::error::{Error, Result};
use crate::space::{active_set, project, ActiveSet, Configuration};

/// Largest active set exact enumeration will accept (2^20 evaluations).
pub const EXACT_CAP: usize = 20;

/// Upper clamp on scheduled thresholds; the rule requires `rho_t < 1`.
pub const RHO_MAX: f64 = 0.99;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum GapRuleKind {
    Constant,
    InverseT,
    InversePower,
}

/// Threshold schedule `rho_t`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GapRule {
    pub kind: GapRuleKind,
    /// Constant threshold, or the coefficient `c` of a decaying schedule.
    pub rho0: f64,
    /// Extra decay exponent for `c / t^(1+epsilon)`.
    #[serde(default)]
    pub epsilon: f64,
}

impl GapRule {
    pub fn constant(rho0: f64) -> Result<Self> {
        if !(0.0..1.0).contains(&rho0) {
            return Err(Error::InvalidGapRule(format!(
                "constant rho must lie in [0,1), got {rho0}"
            )));
        }
        Ok(GapRule {
            kind: GapRuleKind::Constant,
            rho0,
            epsilon: 0.0,
        })
    }

    pub fn inverse_t(c: f64) -> Result<Self> {
        if !(c >= 0.0) {
            return Err(Error::InvalidGapRule(format!("coefficient must be >= 0, got {c}")));
        }
        Ok(GapRule {
            kind: GapRuleKind::InverseT,
            rho0: c,
            epsilon: 0.0,
        })
    }

    pub fn inverse_power(c: f64, epsilon: f64) -> Result<Self> {
        if !(c >= 0.0) || !(epsilon >= 0.0) {
            return Err(Error::InvalidGapRule(format!(
                "require c >= 0 and epsilon >= 0, got c={c}, epsilon={epsilon}"
            )));
        }
        Ok(GapRule {
            kind: GapRuleKind::InversePower,
            rho0: c,
            epsilon,
        })
    }

    pub fn validate(&self) -> Result<()> {
        match self.kind {
            GapRuleKind::Constant => Self::constant(self.rho0).map(|_| ()),
            GapRuleKind::InverseT => Self::inverse_t(self.rho0).map(|_| ()),
            GapRuleKind::InversePower => Self::inverse_power(self.rho0, self.epsilon).map(|_| ()),
        }
    }

    /// Scheduled threshold without the `[0, RHO_MAX]` clamp.
    pub fn rho_at_unclamped(&self, t: usize) -> f64 {
        let t = t.max(1) as f64;
        match self.kind {
            GapRuleKind::Constant => self.rho0,
            GapRuleKind::InverseT => (self.rho0 / t).min(self.rho0),
            GapRuleKind::InversePower => (self.rho0 / t.powf(1.0 + self.epsilon)).min(self.rho0),
        }
    }

    /// Threshold for round `t >= 1`, clamped into `[0, RHO_MAX]`.
    pub fn rho_at(&self, t: usize) -> f64 {
        self.rho_at_unclamped(t).clamp(0.0, RHO_MAX)
    }
}

/// One accepted reset during greedy pruning.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PruneStep {
    pub component: usize,
    pub gap: f64,
    pub feasible: bool,
}

/// Record of one pruning invocation, serializable for audits.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PruneTrace {
    pub steps: Vec<PruneStep>,
    /// Number of candidate acquisition evaluations spent.
    pub acq_evals: usize,
    /// Gap of the returned point relative to the maximizer (pruning scale).
    pub final_gap: f64,
    pub rho_used: f64,
    /// `rho * incremental value of the maximizer` on the pruning scale.
    pub budget: f64,
    /// Pruning skipped because the incremental value was not positive.
    pub skipped: bool,
    /// Trace came from exact enumeration (its evaluation count is
    /// exponential, not quadratic).
    pub exhaustive: bool,
    /// Baseline `b_t` at pruning time.
    pub baseline: f64,
    /// Acquisition of the maximizer on the pruning scale.
    pub value_star: f64,
    /// Active-set size of the unpruned maximizer.
    pub active_before: usize,
}

impl PruneTrace {
    fn skipped(rho: f64, baseline: f64, value_star: f64, active_before: usize) -> Self {
        PruneTrace {
            steps: vec![],
            acq_evals: 0,
            final_gap: 0.0,
            rho_used: rho,
            budget: rho * (value_star - baseline),
            skipped: true,
            exhaustive: false,
            baseline,
            value_star,
            active_before,
        }
    }
}

fn validate_rho(rho: f64) -> Result<()> {
    if !(0.0..1.0).contains(&rho) {
        return Err(Error::InvalidGapRule(format!("rho must lie in [0,1), got {rho}")));
    }
    Ok(())
}

/// Sequential greedy pruning: starting from the maximizer, repeatedly reset
/// the feasible component with the smallest acquisition gap until no reset
/// stays within `rho * incremental value`. Gaps `<= 0` are always feasible;
/// ties break toward the lowest component index. When the incremental value
/// of the maximizer is not positive, pruning is skipped and the maximizer is
/// returned unchanged.
pub fn greedy_prune<A: Acquisition>(
    acq: &A,
    x_star: &Configuration,
    x_def: &Configuration,
    rho: f64,
) -> Result<(Configuration, PruneTrace)> {
    validate_rho(rho)?;
    let mut remaining: Vec<usize> = active_set(x_star, x_def)?.indices().to_vec();
    let active_before = remaining.len();
    let value_star = acq.pruning_value(x_star);
    let baseline = acq.baseline();
    let incremental = value_star - baseline;
    if incremental <= 0.0 {
        return Ok((
            x_star.clone(),
            PruneTrace::skipped(rho, baseline, value_star, active_before),
        ));
    }
    let budget = rho * incremental;

    let mut current = x_star.clone();
    let mut steps = Vec::new();
    let mut acq_evals = 0;
    let mut final_gap = 0.0;

    while !remaining.is_empty() {
        let mut best: Option<(f64, usize, Configuration)> = None;
        for (slot, &j) in remaining.iter().enumerate() {
            let mut vals = current.values().to_vec();
            vals[j] = x_def.values()[j];
            let candidate = Configuration::new(vals);
            let gap = value_star - acq.pruning_value(&candidate);
            acq_evals += 1;
            let feasible = gap <= budget;
            if feasible && best.as_ref().map_or(true, |(g, _, _)| gap < *g) {
                best = Some((gap, slot, candidate));
            }
        }
        match best {
            Some((gap, slot, candidate)) => {
                let component = remaining.remove(slot);
                steps.push(PruneStep {
                    component,
                    gap,
                    feasible: true,
                });
                current = candidate;
                final_gap = gap;
            }
            None => break,
        }
    }

    Ok((
        current,
        PruneTrace {
            steps,
            acq_evals,
            final_gap,
            rho_used: rho,
            budget,
            skipped: false,
            exhaustive: false,
            baseline,
            value_star,
            active_before,
        },
    ))
}

/// Lexicographic k-combinations of `items`.
fn combinations(items: &[usize], k: usize) -> Vec<Vec<usize>> {
    let n = items.len();
    let mut out = Vec::new();
    if k > n {
        return out;
    }
    let mut idx: Vec<usize> = (0..k).collect();
    loop {
        out.push(idx.iter().map(|&i| items[i]).collect());
        // advance
        let mut i = k;
        loop {
            if i == 0 {
                return out;
            }
            i -= 1;
            if idx[i] != i + n - k {
                break;
            }
            if i == 0 {
                return out;
            }
        }
        idx[i] += 1;
        for j in i + 1..k {
            idx[j] = idx[j - 1] + 1;
        }
    }
}

/// Exact pruning by subset enumeration: returns the projection onto the
/// smallest keep-set whose gap is feasible, breaking ties by smaller gap and
/// then lexicographic subset order. Errors when the active set exceeds
/// [`EXACT_CAP`].
pub fn exact_prune<A: Acquisition>(
    acq: &A,
    x_star: &Configuration,
    x_def: &Configuration,
    rho: f64,
) -> Result<(Configuration, PruneTrace)> {
    validate_rho(rho)?;
    let active = active_set(x_star, x_def)?;
    let active_before = active.len();
    if active_before > EXACT_CAP {
        return Err(Error::ActiveSetTooLarge {
            size: active_before,
            cap: EXACT_CAP,
        });
    }
    let value_star = acq.pruning_value(x_star);
    let baseline = acq.baseline();
    let incremental = value_star - baseline;
    if incremental <= 0.0 {
        return Ok((
            x_star.clone(),
            PruneTrace::skipped(rho, baseline, value_star, active_before),
        ));
    }
    let budget = rho * incremental;

    let mut acq_evals = 0;
    for k in 0..=active_before {
        let mut best: Option<(f64, Vec<usize>, Configuration)> = None;
        for keep in combinations(active.indices(), k) {
            let candidate = project(x_star, &ActiveSet::new(keep.clone()), x_def)?;
            let gap = value_star - acq.pruning_value(&candidate);
            acq_evals += 1;
            if gap <= budget && best.as_ref().map_or(true, |(g, _, _)| gap < *g) {
                best = Some((gap, keep, candidate));
            }
        }
        if let Some((gap, keep, candidate)) = best {
            let reset: Vec<usize> = active
                .indices()
                .iter()
                .cloned()
                .filter(|j| !keep.contains(j))
                .collect();
            let steps = reset
                .into_iter()
                .map(|component| PruneStep {
                    component,
                    gap,
                    feasible: true,
                })
                .collect();
            return Ok((
                candidate,
                PruneTrace {
                    steps,
                    acq_evals,
                    final_gap: gap,
                    rho_used: rho,
                    budget,
                    skipped: false,
                    exhaustive: true,
                    baseline,
                    value_star,
                    active_before,
                },
            ));
        }
    }
    unreachable!("the full keep-set has gap 0 <= budget");
}

use crate::acquisition::AcqState;

/// Prunes a batch sequentially: the first point under the round's baseline,
/// each subsequent point under a state conditioned on the previously pruned
/// entries (fantasy observations at the mixture mean). Returns the pruned
/// points with their traces and the final conditioned state.
pub fn prune_batch(
    state: AcqState,
    x_stars: &[Configuration],
    x_def: &Configuration,
    rule: &GapRule,
    t: usize,
) -> Result<(Vec<(Configuration, PruneTrace)>, AcqState)> {
    let rho = rule.rho_at(t);
    let mut state = state;
    let mut out = Vec::with_capacity(x_stars.len());
    for (i, x_star) in x_stars.iter().enumerate() {
        let (pruned, trace) = greedy_prune(&state, x_star, x_def, rho)?;
        if i + 1 < x_stars.len() {
            state = state.batch_condition(&pruned)?;
        }
        out.push((pruned, trace));
    }
    Ok((out, state))
}

/// Per-round acquisition accuracy and the accumulated inaccuracy
/// `M_T = sum_t rho_t` (taking the guaranteed lower bound `1 - rho_t` for
/// the per-round accuracy).
#[derive(Debug, Clone, Default, Serialize)]
pub struct AccuracyLedger {
    etas: Vec<f64>,
    rhos: Vec<f64>,
    m_t: f64,
}

impl AccuracyLedger {
    pub fn new() -> Self {
        Self::default()
    }

    /// Appends one round.
    pub fn record(&mut self, eta: f64, rho: f64) {
        self.etas.push(eta);
        self.rhos.push(rho);
        self.m_t += rho;
    }

    pub fn m_t(&self) -> f64 {
        self.m_t
    }

    pub fn rounds(&self) -> usize {
        self.etas.len()
    }

    pub fn etas(&self) -> &[f64] {
        &self.etas
    }

    pub fn rhos(&self) -> &[f64] {
        &self.rhos
    }
}

/// Computes the round's acquisition accuracy `eta_t = alpha(x~)/alpha(x*)`
/// on the pruning scale (1 when the maximizer's value is not positive),
/// checks the lemma bound `eta_t >= 1 - rho_t` whenever the baseline is
/// nonnegative, and appends `(eta_t, rho_t)` to the ledger.
pub fn record_accuracy<A: Acquisition>(
    ledger: &mut AccuracyLedger,
    acq: &A,
    x_star: &Configuration,
    x_tilde: &Configuration,
    rho_t: f64,
) -> Result<f64> {
    let v_star = acq.pruning_value(x_star);
    let eta_raw = if v_star > 0.0 {
        acq.pruning_value(x_tilde) / v_star
    } else {
        1.0
    };
    if acq.baseline() >= 0.0 && v_star > 0.0 && eta_raw < 1.0 - rho_t - 1e-9 {
        return Err(Error::AccuracyViolation(format!(
            "eta {eta_raw} < 1 - rho {rho_t} with nonnegative baseline"
        )));
    }
    let eta = eta_raw.clamp(0.0, 1.0);
    ledger.record(eta, rho_t);
    Ok(eta)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::space::l0_distance;
    use crate::verify::FnAcquisition;
    use approx::assert_relative_eq;

    fn cfg(v: &[f64]) -> Configuration {
        Configuration::new(v.to_vec())
    }

    #[test]
    fn rho_schedules() {
        let c = GapRule::constant(0.2).unwrap();
        for t in [1, 5, 1000] {
            assert_eq!(c.rho_at(t), 0.2);
        }
        let it = GapRule::inverse_t(1.0).unwrap();
        assert_eq!(it.rho_at(1), RHO_MAX); // clamp at t=1
        assert_relative_eq!(it.rho_at(4), 0.25);
        let ip = GapRule::inverse_power(1.0, 1.0).unwrap();
        // unclamped partial sum at T=100 is within 1e-2 of pi^2/6
        let sum: f64 = (1..=100).map(|t| ip.rho_at_unclamped(t)).sum();
        let pi2_6 = std::f64::consts::PI * std::f64::consts::PI / 6.0;
        assert!((sum - pi2_6).abs() < 1e-2, "sum {sum}");
        // clamped values always lie in [0, 1)
        for t in 1..50 {
            assert!((0.0..1.0).contains(&ip.rho_at(t)));
        }
    }

    #[test]
    fn invalid_rules_rejected() {
        assert!(GapRule::constant(1.0).is_err());
        assert!(GapRule::constant(-0.1).is_err());
        assert!(GapRule::inverse_t(-1.0).is_err());
        assert!(GapRule::inverse_power(1.0, -0.5).is_err());
    }

    fn quad_acq_x0(baseline: f64) -> FnAcquisition<impl Fn(&Configuration) -> f64> {
        // alpha(x) = 1 - (x0 - 0.9)^2
        FnAcquisition::new(
            |x: &Configuration| 1.0 - (x.values()[0] - 0.9) * (x.values()[0] - 0.9),
            baseline,
        )
    }

    #[test]
    fn greedy_prunes_inactive_component() {
        let acq = quad_acq_x0(0.0);
        let x_star = cfg(&[0.9, 0.2]);
        let x_def = cfg(&[0.5, 0.5]);
        let (pruned, trace) = greedy_prune(&acq, &x_star, &x_def, 0.1).unwrap();
        assert_eq!(pruned, cfg(&[0.9, 0.5]));
        assert_eq!(trace.steps.len(), 1);
        assert_eq!(trace.steps[0].component, 1);
        assert_eq!(trace.steps[0].gap, 0.0);
        assert_eq!(trace.final_gap, 0.0);
        assert_eq!(trace.acq_evals, 3); // two candidates, then one refusal
        assert_eq!(
            active_set(&pruned, &x_def).unwrap().indices(),
            &[0],
            "component 0 must stay active (gap 0.16 > 0.1)"
        );
    }

    #[test]
    fn greedy_on_default_is_noop() {
        let acq = quad_acq_x0(0.0);
        let x_def = cfg(&[0.5, 0.5]);
        let (pruned, trace) = greedy_prune(&acq, &x_def, &x_def, 0.2).unwrap();
        assert_eq!(pruned, x_def);
        assert!(trace.steps.is_empty());
        assert_eq!(trace.acq_evals, 0);
    }

    #[test]
    fn greedy_skips_when_incremental_not_positive() {
        // baseline above the maximizer value
        let acq = quad_acq_x0(2.0);
        let x_star = cfg(&[0.9, 0.2]);
        let x_def = cfg(&[0.5, 0.5]);
        let (pruned, trace) = greedy_prune(&acq, &x_star, &x_def, 0.2).unwrap();
        assert_eq!(pruned, x_star);
        assert!(trace.skipped);
        assert_eq!(trace.acq_evals, 0);
        assert_eq!(trace.final_gap, 0.0);
    }

    fn joint_acq() -> FnAcquisition<impl Fn(&Configuration) -> f64> {
        // alpha(x) = 1 - (x0 + x1 - 1)^2: components must be reset jointly
        FnAcquisition::new(
            |x: &Configuration| {
                let s = x.values()[0] + x.values()[1] - 1.0;
                1.0 - s * s
            },
            0.0,
        )
    }

    #[test]
    fn greedy_misses_joint_reset_exact_finds_it() {
        let acq = joint_acq();
        let x_star = cfg(&[0.8, 0.2]);
        let x_def = cfg(&[0.5, 0.5]);
        let rho = 0.05;
        // single resets both have gap 0.09 > 0.05
        let (greedy, gtrace) = greedy_prune(&acq, &x_star, &x_def, rho).unwrap();
        assert_eq!(greedy, x_star);
        assert!(gtrace.steps.is_empty());
        assert_eq!(l0_distance(&greedy, &x_def).unwrap(), 2);
        // joint reset to the default has gap 0
        let (exact, etrace) = exact_prune(&acq, &x_star, &x_def, rho).unwrap();
        assert_eq!(exact, x_def);
        assert_eq!(l0_distance(&exact, &x_def).unwrap(), 0);
        assert_eq!(etrace.final_gap, 0.0);
        assert!(etrace.exhaustive);
    }

    #[test]
    fn exact_on_default_is_noop() {
        let acq = joint_acq();
        let x_def = cfg(&[0.5, 0.5]);
        let (pruned, _) = exact_prune(&acq, &x_def, &x_def, 0.3).unwrap();
        assert_eq!(pruned, x_def);
    }

    #[test]
    fn exact_cap_enforced() {
        let d = EXACT_CAP + 1;
        let acq = FnAcquisition::new(|_: &Configuration| 1.0, 0.0);
        let x_star = cfg(&vec![1.0; d]);
        let x_def = cfg(&vec![0.0; d]);
        assert!(matches!(
            exact_prune(&acq, &x_star, &x_def, 0.2),
            Err(Error::ActiveSetTooLarge { .. })
        ));
    }

    #[test]
    fn feasibility_and_budget_invariants() {
        // randomized quadratic instances, both pruners
        let mut rng_state = 0x12345u64;
        let mut next = move || {
            rng_state = rng_state.wrapping_mul(6364136223846793005).wrapping_add(1442695040888963407);
            (rng_state >> 11) as f64 / (1u64 << 53) as f64
        };
        for _ in 0..60 {
            let d = 2 + (next() * 6.0) as usize;
            let center: Vec<f64> = (0..d).map(|_| next()).collect();
            let weights: Vec<f64> = (0..d).map(|_| 0.2 + next()).collect();
            let x_def = cfg(&(0..d).map(|_| next()).collect::<Vec<_>>());
            let c2 = center.clone();
            let acq = FnAcquisition::new(
                move |x: &Configuration| {
                    2.0 - x
                        .values()
                        .iter()
                        .zip(&c2)
                        .zip(&weights)
                        .map(|((a, c), w)| w * (a - c) * (a - c))
                        .sum::<f64>()
                },
                next(),
            );
            let x_star = cfg(&center);
            let rho = 0.1 + 0.7 * next();
            let (g, gt) = greedy_prune(&acq, &x_star, &x_def, rho).unwrap();
            let (e, et) = exact_prune(&acq, &x_star, &x_def, rho).unwrap();
            if !gt.skipped {
                assert!(gt.final_gap <= gt.budget + 1e-9);
                assert!(et.final_gap <= et.budget + 1e-9);
                let a0 = gt.active_before;
                assert!(gt.acq_evals <= a0 * (a0 + 1) / 2, "evals {} for |A| {a0}", gt.acq_evals);
                // exact dominates greedy
                assert!(
                    l0_distance(&e, &x_def).unwrap() <= l0_distance(&g, &x_def).unwrap()
                );
                // every accepted step within budget
                for s in &gt.steps {
                    assert!(s.gap <= gt.budget + 1e-12);
                }
            }
        }
    }

    #[test]
    fn raising_rho_never_increases_active_count() {
        let acq = quad_acq_x0(0.0);
        let x_star = cfg(&[0.9, 0.2]);
        let x_def = cfg(&[0.5, 0.5]);
        let mut prev = usize::MAX;
        for rho in [0.0, 0.05, 0.1, 0.2, 0.5, 0.9] {
            let (p, _) = greedy_prune(&acq, &x_star, &x_def, rho).unwrap();
            let n = l0_distance(&p, &x_def).unwrap();
            assert!(n <= prev);
            prev = n;
        }
    }

    #[test]
    fn monotone_pruning_steps_shrink_active_set() {
        let acq = FnAcquisition::new(
            |x: &Configuration| {
                1.0 - x.values().iter().map(|v| 0.01 * (v - 0.5) * (v - 0.5)).sum::<f64>()
            },
            0.0,
        );
        let x_star = cfg(&[0.1, 0.9, 0.3, 0.7]);
        let x_def = cfg(&[0.5, 0.5, 0.5, 0.5]);
        let (pruned, trace) = greedy_prune(&acq, &x_star, &x_def, 0.5).unwrap();
        // tiny per-coordinate gaps: everything prunes away, one at a time
        assert_eq!(pruned, x_def);
        assert_eq!(trace.steps.len(), 4);
        let mut seen = std::collections::HashSet::new();
        for s in &trace.steps {
            assert!(seen.insert(s.component), "component reset twice");
        }
    }

    #[test]
    fn tie_break_is_lowest_component_index() {
        // symmetric acquisition: both resets have identical gaps
        let acq = FnAcquisition::new(
            |x: &Configuration| {
                -(x.values()[0] - 0.5).powi(2) - (x.values()[1] - 0.5).powi(2) + 1.0
            },
            0.0,
        );
        let x_star = cfg(&[0.6, 0.4]);
        let x_def = cfg(&[0.5, 0.5]);
        let (_, trace) = greedy_prune(&acq, &x_star, &x_def, 0.9).unwrap();
        assert_eq!(trace.steps[0].component, 0);
    }

    #[test]
    fn ledger_accumulates_rho_exactly() {
        let rule = GapRule::inverse_t(1.0).unwrap();
        let mut ledger = AccuracyLedger::new();
        for t in 1..=100 {
            ledger.record(1.0, rule.rho_at_unclamped(t));
        }
        // harmonic sum H_100
        assert!((ledger.m_t() - 5.187377517639621).abs() < 1e-9);
        let manual: f64 = ledger.rhos().iter().sum();
        assert_eq!(ledger.m_t(), manual);
    }

    #[test]
    fn record_accuracy_trivial_and_lemma() {
        let acq = quad_acq_x0(0.0);
        let x_star = cfg(&[0.9, 0.2]);
        let x_def = cfg(&[0.5, 0.5]);
        let mut ledger = AccuracyLedger::new();
        // x~ = x* gives eta 1
        let eta = record_accuracy(&mut ledger, &acq, &x_star, &x_star, 0.2).unwrap();
        assert_eq!(eta, 1.0);
        // pruned result respects eta >= 1 - rho
        let (pruned, _) = greedy_prune(&acq, &x_star, &x_def, 0.2).unwrap();
        let eta = record_accuracy(&mut ledger, &acq, &x_star, &pruned, 0.2).unwrap();
        assert!(eta >= 0.8 - 1e-9);
        // a violating pair is reported as a bug
        let bad = cfg(&[0.0, 0.0]);
        assert!(record_accuracy(&mut ledger, &acq, &x_star, &bad, 0.2).is_err());
    }

    #[test]
    fn combinations_cover_lexicographic_order() {
        let items = [2usize, 5, 7];
        assert_eq!(combinations(&items, 0), vec![Vec::<usize>::new()]);
        assert_eq!(combinations(&items, 2), vec![vec![2, 5], vec![2, 7], vec![5, 7]]);
        assert_eq!(combinations(&items, 3), vec![vec![2, 5, 7]]);
        assert!(combinations(&items, 4).is_empty());
    }

    mod batch {
        use super::super::*;
        use crate::acquisition::AcqKind;
        use crate::gp::{Dataset, EnsembleGP, GPMember};
        use crate::kernel::{KernelFamily, KernelParams, NoiseModel};
        use crate::space::SearchSpace;

        fn cfg(v: &[f64]) -> Configuration {
            Configuration::new(v.to_vec())
        }

        fn toy_state() -> (AcqState, Configuration) {
            let space = SearchSpace::unit(2).unwrap();
            let xs = vec![cfg(&[0.5, 0.5]), cfg(&[0.2, 0.8]), cfg(&[0.8, 0.3])];
            let ys = vec![1.0, 0.2, 1.6];
            let data = Dataset::from_raw(&space, &xs, &ys).unwrap();
            let params =
                KernelParams::new(vec![0.4, 10.0], 1.0, KernelFamily::Matern52).unwrap();
            let member =
                GPMember::factorize(params, NoiseModel::new(1e-6), 0.0, 0.1, false, &data)
                    .unwrap();
            let model = EnsembleGP::new(vec![member], data).unwrap();
            let state = AcqState::new(AcqKind::Ei, model, 1, &xs).unwrap();
            (state, cfg(&[0.5, 0.5]))
        }

        #[test]
        fn single_point_batch_matches_greedy() {
            let (state, x_def) = toy_state();
            let rule = GapRule::constant(0.3).unwrap();
            let x_star = cfg(&[0.65, 0.1]);
            let (direct, dt) = greedy_prune(&state, &x_star, &x_def, rule.rho_at(1)).unwrap();
            let (batch, _) = prune_batch(state, &[x_star], &x_def, &rule, 1).unwrap();
            assert_eq!(batch.len(), 1);
            assert_eq!(batch[0].0, direct);
            assert_eq!(batch[0].1, dt);
        }

        #[test]
        fn batch_of_defaults_returned_unchanged() {
            let (state, x_def) = toy_state();
            let rule = GapRule::constant(0.2).unwrap();
            let stars = vec![x_def.clone(), x_def.clone(), x_def.clone()];
            let (batch, _) = prune_batch(state, &stars, &x_def, &rule, 1).unwrap();
            for (p, tr) in &batch {
                assert_eq!(p, &x_def);
                assert!(tr.steps.is_empty());
            }
        }

        #[test]
        fn batch_members_feasible_under_their_conditioned_state() {
            let (state, x_def) = toy_state();
            let rule = GapRule::constant(0.25).unwrap();
            let stars = vec![cfg(&[0.9, 0.2]), cfg(&[0.1, 0.9]), cfg(&[0.7, 0.7])];
            let (batch, _) = prune_batch(state, &stars, &x_def, &rule, 2).unwrap();
            assert_eq!(batch.len(), 3);
            for (_, tr) in &batch {
                assert!(tr.skipped || tr.final_gap <= tr.budget + 1e-9);
                assert_eq!(tr.rho_used, 0.25);
            }
        }
    }
}
