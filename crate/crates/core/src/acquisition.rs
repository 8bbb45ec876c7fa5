//! Acquisition functions over the ensemble surrogate, the incremental
//! baseline used by the gap rule, and Kriging-believer batch conditioning.
//!
//! EI is averaged across ensemble members; LogEI is the numerically stable
//! log of the same quantity (combined by log-mean-exp) and exponentiates back
//! before any gap arithmetic; UCB uses the mixture mean and standard
//! deviation. All gap-rule arithmetic therefore happens on a common
//! "pruning scale" where EI-like values are nonnegative.

use serde::{Deserialize, Serialize};
use statrs::function::erf::erfc;

use crate::error::{Error, Result};
use crate::gp::{mixture_moments, EnsembleGP};
use crate::space::Configuration;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AcqKind {
    Ei,
    LogEi,
    Ucb,
}

/// Exploration weight schedule for UCB: `beta_t = sqrt(log(t + 2))`.
pub fn ucb_beta(t: usize) -> f64 {
    ((t as f64) + 2.0).ln().sqrt()
}

pub fn normal_pdf(z: f64) -> f64 {
    (-0.5 * z * z).exp() / (2.0 * std::f64::consts::PI).sqrt()
}

pub fn normal_cdf(z: f64) -> f64 {
    0.5 * erfc(-z / std::f64::consts::SQRT_2)
}

/// `log(pdf(z) + z * cdf(z))`, stable for arbitrarily negative `z`.
///
/// Below -30 the direct expression loses accuracy and eventually underflows,
/// so the asymptotic expansion `h(z) ~ pdf(z)/z^2 (1 - 3/z^2 + 15/z^4 - ...)`
/// takes over.
pub fn log_ei_h(z: f64) -> f64 {
    if z > -30.0 {
        let h = normal_pdf(z) + z * normal_cdf(z);
        h.ln()
    } else {
        let w2 = z * z;
        let series = 1.0 - 3.0 / w2 + 15.0 / (w2 * w2) - 105.0 / (w2 * w2 * w2);
        -0.5 * w2 - 0.5 * (2.0 * std::f64::consts::PI).ln() - w2.ln() + series.ln()
    }
}

/// Analytic expected improvement for a single Gaussian posterior.
pub fn ei_value(mu: f64, sigma: f64, incumbent: f64) -> f64 {
    if sigma <= 0.0 {
        return (mu - incumbent).max(0.0);
    }
    let z = (mu - incumbent) / sigma;
    sigma * (z * normal_cdf(z) + normal_pdf(z))
}

/// `log(ei_value)`, stable deep in the negative-`z` tail.
pub fn log_ei_value(mu: f64, sigma: f64, incumbent: f64) -> f64 {
    if sigma <= 0.0 {
        let imp = mu - incumbent;
        return if imp > 0.0 { imp.ln() } else { f64::NEG_INFINITY };
    }
    sigma.ln() + log_ei_h((mu - incumbent) / sigma)
}

fn log_mean_exp(values: &[f64]) -> f64 {
    let m = values.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    if m == f64::NEG_INFINITY {
        return f64::NEG_INFINITY;
    }
    let sum: f64 = values.iter().map(|v| (v - m).exp()).sum();
    m + (sum / values.len() as f64).ln()
}

/// Anything the maximizer and the pruning policy can score candidates with.
///
/// `value` is the acquisition on its native scale; `to_pruning_scale` maps it
/// onto the scale where the relative gap rule operates (identity except for
/// log acquisitions, which are exponentiated). `baseline` is the incremental
/// baseline `b_t` on the pruning scale.
pub trait Acquisition {
    fn value(&self, x: &Configuration) -> f64;

    fn to_pruning_scale(&self, v: f64) -> f64 {
        v
    }

    fn baseline(&self) -> f64;

    fn pruning_value(&self, x: &Configuration) -> f64 {
        self.to_pruning_scale(self.value(x))
    }

    /// Acquisition gap relative to the round's maximizer, on the pruning
    /// scale. May be negative when `x` improves on an approximate maximizer.
    fn gap(&self, x_star: &Configuration, x: &Configuration) -> f64 {
        self.pruning_value(x_star) - self.pruning_value(x)
    }

    /// Batched evaluation on the native scale; the default just loops.
    fn value_batch(&self, xs: &[Configuration]) -> Vec<f64> {
        xs.iter().map(|x| self.value(x)).collect()
    }
}

/// Acquisition state for one BO round.
#[derive(Debug, Clone)]
pub struct AcqState {
    kind: AcqKind,
    model: EnsembleGP,
    /// Best observed standardized target (EI improvement threshold).
    incumbent: f64,
    /// Exploration weight for UCB rounds.
    beta: f64,
    /// Incremental baseline on the pruning scale.
    baseline: f64,
    round: usize,
    history: Vec<Configuration>,
    pending: Vec<Configuration>,
    baseline_point: Option<Configuration>,
}

impl AcqState {
    /// Builds the state for round `t >= 1` and computes the baseline over the
    /// previously evaluated designs (errors if `history` is empty).
    pub fn new(
        kind: AcqKind,
        model: EnsembleGP,
        round: usize,
        history: &[Configuration],
    ) -> Result<Self> {
        if round == 0 {
            return Err(Error::InvalidConfig("rounds are numbered from 1".into()));
        }
        let incumbent = model.dataset().max_target();
        let beta = match kind {
            AcqKind::Ucb => ucb_beta(round),
            _ => 0.0,
        };
        let mut state = AcqState {
            kind,
            model,
            incumbent,
            beta,
            baseline: 0.0,
            round,
            history: vec![],
            pending: vec![],
            baseline_point: None,
        };
        state.compute_baseline(history)?;
        Ok(state)
    }

    pub fn kind(&self) -> AcqKind {
        self.kind
    }

    pub fn model(&self) -> &EnsembleGP {
        &self.model
    }

    pub fn incumbent(&self) -> f64 {
        self.incumbent
    }

    pub fn beta(&self) -> f64 {
        self.beta
    }

    pub fn round(&self) -> usize {
        self.round
    }

    pub fn pending(&self) -> &[Configuration] {
        &self.pending
    }

    /// Recomputes and stores `b_t`: the maximum pruning-scale acquisition
    /// across `history` and any pending batch points.
    pub fn compute_baseline(&mut self, history: &[Configuration]) -> Result<f64> {
        if history.is_empty() {
            return Err(Error::EmptyHistory);
        }
        self.history = history.to_vec();
        let mut pts: Vec<Configuration> = history.to_vec();
        pts.extend(self.pending.iter().cloned());
        let vals = self.values_at(&pts)?;
        let mut b = f64::NEG_INFINITY;
        let mut best_idx = 0;
        for (i, v) in vals.into_iter().enumerate() {
            let v = self.to_pruning_scale(v);
            if v > b {
                b = v;
                best_idx = i;
            }
        }
        self.baseline = b;
        self.baseline_point = Some(pts[best_idx].clone());
        Ok(b)
    }

    /// Evaluated design achieving the baseline (useful as an optimizer
    /// anchor: it guarantees the maximizer is never below `b_t`).
    pub fn baseline_point(&self) -> Option<&Configuration> {
        self.baseline_point.as_ref()
    }

    fn values_at(&self, xs: &[Configuration]) -> Result<Vec<f64>> {
        let posts = self.model.member_posteriors_batch(xs)?;
        Ok(posts.iter().map(|p| self.value_from_posteriors(p)).collect())
    }

    fn value_from_posteriors(&self, member_posts: &[(f64, f64)]) -> f64 {
        match self.kind {
            AcqKind::Ei => {
                member_posts
                    .iter()
                    .map(|(mu, sd)| ei_value(*mu, *sd, self.incumbent))
                    .sum::<f64>()
                    / member_posts.len() as f64
            }
            AcqKind::LogEi => {
                let logs: Vec<f64> = member_posts
                    .iter()
                    .map(|(mu, sd)| log_ei_value(*mu, *sd, self.incumbent))
                    .collect();
                log_mean_exp(&logs)
            }
            AcqKind::Ucb => {
                let (mu, sd) = mixture_moments(member_posts);
                mu + self.beta * sd
            }
        }
    }

    /// Appends a finalized pruned batch point: the model is conditioned on a
    /// fantasy observation at its posterior mixture mean, the EI incumbent is
    /// raised to the fantasy value, and the baseline is recomputed over
    /// history plus pending under the updated model.
    pub fn batch_condition(mut self, pruned_point: &Configuration) -> Result<AcqState> {
        let (fantasy, _) = self.model.mixture(pruned_point)?;
        self.model = self.model.condition_on(pruned_point, fantasy)?;
        self.pending.push(pruned_point.clone());
        if matches!(self.kind, AcqKind::Ei | AcqKind::LogEi) {
            self.incumbent = self.incumbent.max(fantasy);
        }
        let history = std::mem::take(&mut self.history);
        self.compute_baseline(&history)?;
        Ok(self)
    }
}

impl Acquisition for AcqState {
    fn value(&self, x: &Configuration) -> f64 {
        let posts = self
            .model
            .member_posteriors(x)
            .expect("configuration dimension matches the model");
        self.value_from_posteriors(&posts)
    }

    fn to_pruning_scale(&self, v: f64) -> f64 {
        match self.kind {
            AcqKind::LogEi => v.exp(),
            _ => v,
        }
    }

    fn baseline(&self) -> f64 {
        self.baseline
    }

    fn value_batch(&self, xs: &[Configuration]) -> Vec<f64> {
        self.values_at(xs).expect("configuration dimensions match the model")
    }
}
