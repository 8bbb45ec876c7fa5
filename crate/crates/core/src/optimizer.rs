//! Approximate acquisition maximization: a Sobol scan followed by projected
//! quasi-Newton refinement of the best starts, with central finite-difference
//! gradients of the acquisition.

use crate::acquisition::Acquisition;
use crate::error::Result;
use crate::lbfgs::maximize_bounded;
use crate::space::{sobol_sample, Configuration, SearchSpace};

/// Evaluation budget for one maximization call.
#[derive(Debug, Clone, PartialEq)]
pub struct OptBudget {
    pub raw_samples: usize,
    pub num_starts: usize,
    pub max_local_iters: usize,
    /// Step-norm tolerance for the local ascent.
    pub tol: f64,
}

impl Default for OptBudget {
    fn default() -> Self {
        OptBudget {
            raw_samples: 512,
            num_starts: 8,
            max_local_iters: 100,
            tol: 1e-8,
        }
    }
}

impl OptBudget {
    fn normalized(&self) -> OptBudget {
        let mut b = self.clone();
        b.num_starts = b.num_starts.max(1);
        b.raw_samples = b.raw_samples.max(b.num_starts);
        b
    }
}

/// Finite-difference step in unit-cube units.
const FD_STEP: f64 = 1e-6;

/// Maximizes the acquisition over the space. Evaluates `raw_samples` Sobol
/// points plus the given anchors (typically the default configuration and the
/// best observed point), refines the `num_starts` best by projected ascent,
/// and returns the best point seen. Deterministic given `seed`; ties break
/// toward the earliest candidate.
pub fn maximize_acq<A: Acquisition>(
    acq: &A,
    space: &SearchSpace,
    budget: &OptBudget,
    seed: u64,
    anchors: &[Configuration],
) -> Result<(Configuration, f64)> {
    let budget = budget.normalized();
    let mut candidates = sobol_sample(space, budget.raw_samples, seed)?;
    candidates.extend(anchors.iter().cloned());
    let values = acq.value_batch(&candidates);

    let mut order: Vec<usize> = (0..candidates.len()).collect();
    order.sort_by(|&a, &b| values[b].partial_cmp(&values[a]).unwrap_or(std::cmp::Ordering::Equal));

    let mut best_x = candidates[order[0]].clone();
    let mut best_v = values[order[0]];

    let d = space.dim();
    let steps: Vec<f64> = (0..d)
        .map(|j| FD_STEP * (space.upper()[j] - space.lower()[j]))
        .collect();

    for &start_idx in order.iter().take(budget.num_starts) {
        let x0 = candidates[start_idx].values().to_vec();
        let mut f = |x: &[f64]| acq.value(&Configuration::new(x.to_vec()));
        let mut g = |x: &[f64]| {
            // one batched acquisition call for all 2d stencil points
            let mut stencil = Vec::with_capacity(2 * d);
            let mut spans = Vec::with_capacity(d);
            for j in 0..d {
                let mut xp = x.to_vec();
                let mut xm = x.to_vec();
                xp[j] = (x[j] + steps[j]).min(space.upper()[j]);
                xm[j] = (x[j] - steps[j]).max(space.lower()[j]);
                spans.push(xp[j] - xm[j]);
                stencil.push(Configuration::new(xp));
                stencil.push(Configuration::new(xm));
            }
            let vals = acq.value_batch(&stencil);
            (0..d)
                .map(|j| {
                    if spans[j] > 0.0 {
                        (vals[2 * j] - vals[2 * j + 1]) / spans[j]
                    } else {
                        0.0
                    }
                })
                .collect()
        };
        let res = maximize_bounded(
            &mut f,
            &mut g,
            &x0,
            space.lower(),
            space.upper(),
            budget.max_local_iters,
            0.0,
            budget.tol,
        );
        if res.value > best_v {
            best_v = res.value;
            best_x = Configuration::new(res.x);
        }
    }

    Ok((best_x, best_v))
}
