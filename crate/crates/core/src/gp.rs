//! Gaussian-process surrogate: marginal likelihood with analytic gradients,
//! MAP fitting under the shrinkage priors, and the ensemble model that
//! averages members fit under independently sampled global sparsity scales.
//!
//! Inputs are normalized to the unit cube and outputs standardized to zero
//! mean / unit variance when a [`Dataset`] is built; every posterior value is
//! in standardized units until de-standardized at the reporting boundary.

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use crate::error::{Error, Result};
use crate::kernel::{
    self, KernelFamily, KernelParams, NoiseModel, SaasPriors, TOPHAT_LO,
};
use crate::lbfgs::maximize_bounded;
use crate::seeding::derive_seed;
use crate::space::{Configuration, SearchSpace};

/// Ensemble size used by the benchmark harness.
pub const DEFAULT_ENSEMBLE_SIZE: usize = 4;
/// MAP restarts per member.
pub const DEFAULT_RESTARTS: usize = 2;

const MAP_MAX_ITERS: usize = 200;
const MAP_GRAD_TOL: f64 = 1e-5;
const RESTART_PERTURB_SCALE: f64 = 0.5;

/// Training data in model units.
#[derive(Debug, Clone)]
pub struct Dataset {
    space: SearchSpace,
    inputs: DMatrix<f64>,
    targets: DVector<f64>,
    raw_mean: f64,
    raw_std: f64,
}

impl Dataset {
    /// Normalizes inputs into the unit cube and standardizes targets. The
    /// standard deviation falls back to 1 when all targets coincide.
    pub fn from_raw(space: &SearchSpace, configs: &[Configuration], ys: &[f64]) -> Result<Self> {
        if configs.is_empty() || configs.len() != ys.len() {
            return Err(Error::InvalidConfig(format!(
                "need matching nonempty inputs/targets, got {} / {}",
                configs.len(),
                ys.len()
            )));
        }
        if ys.iter().any(|y| !y.is_finite()) {
            return Err(Error::InvalidConfig("targets must be finite".into()));
        }
        let n = configs.len();
        let d = space.dim();
        let mut inputs = DMatrix::zeros(n, d);
        for (i, c) in configs.iter().enumerate() {
            let u = space.normalize(c)?;
            for j in 0..d {
                inputs[(i, j)] = u[j];
            }
        }
        let raw_mean = ys.iter().sum::<f64>() / n as f64;
        let var = ys.iter().map(|y| (y - raw_mean) * (y - raw_mean)).sum::<f64>() / n as f64;
        let raw_std = if var.sqrt() > 1e-12 { var.sqrt() } else { 1.0 };
        let targets = DVector::from_iterator(n, ys.iter().map(|y| (y - raw_mean) / raw_std));
        Ok(Dataset {
            space: space.clone(),
            inputs,
            targets,
            raw_mean,
            raw_std,
        })
    }

    pub fn n(&self) -> usize {
        self.inputs.nrows()
    }

    pub fn dim(&self) -> usize {
        self.inputs.ncols()
    }

    pub fn space(&self) -> &SearchSpace {
        &self.space
    }

    pub fn inputs(&self) -> &DMatrix<f64> {
        &self.inputs
    }

    pub fn targets(&self) -> &DVector<f64> {
        &self.targets
    }

    pub fn raw_mean(&self) -> f64 {
        self.raw_mean
    }

    pub fn raw_std(&self) -> f64 {
        self.raw_std
    }

    pub fn standardize(&self, y_raw: f64) -> f64 {
        (y_raw - self.raw_mean) / self.raw_std
    }

    pub fn destandardize(&self, y_std: f64) -> f64 {
        y_std * self.raw_std + self.raw_mean
    }

    /// Largest standardized target (the EI incumbent).
    pub fn max_target(&self) -> f64 {
        self.targets.iter().cloned().fold(f64::NEG_INFINITY, f64::max)
    }

    pub fn normalize_query(&self, x: &Configuration) -> Result<Vec<f64>> {
        self.space.normalize(x)
    }

    /// Appends one observation already in model units, keeping the original
    /// standardization (used for fantasy conditioning).
    pub fn appended_std(&self, x_norm: &[f64], y_std: f64) -> Dataset {
        let n = self.n();
        let d = self.dim();
        let mut inputs = DMatrix::zeros(n + 1, d);
        inputs.view_mut((0, 0), (n, d)).copy_from(&self.inputs);
        for j in 0..d {
            inputs[(n, j)] = x_norm[j];
        }
        let mut targets = DVector::zeros(n + 1);
        targets.view_mut((0, 0), (n, 1)).copy_from(&self.targets);
        targets[n] = y_std;
        Dataset {
            space: self.space.clone(),
            inputs,
            targets,
            raw_mean: self.raw_mean,
            raw_std: self.raw_std,
        }
    }

    /// FNV-1a over the bit patterns of the stored data.
    pub fn content_hash(&self) -> u64 {
        let mut h = 0xcbf29ce484222325u64;
        let mut eat = |bits: u64| {
            h ^= bits;
            h = h.wrapping_mul(0x100000001b3);
        };
        eat(self.n() as u64);
        eat(self.dim() as u64);
        for v in self.inputs.iter() {
            eat(v.to_bits());
        }
        for v in self.targets.iter() {
            eat(v.to_bits());
        }
        eat(self.raw_mean.to_bits());
        eat(self.raw_std.to_bits());
        h
    }
}

/// Per-fit workspace: a copy of the normalized inputs.
struct FitWorkspace {
    x: DMatrix<f64>,
    n: usize,
    d: usize,
}

impl FitWorkspace {
    fn new(inputs: &DMatrix<f64>) -> Self {
        FitWorkspace {
            x: inputs.clone(),
            n: inputs.nrows(),
            d: inputs.ncols(),
        }
    }
}

/// Inputs with each column divided by its lengthscale.
fn scale_columns(x: &DMatrix<f64>, ls: &[f64]) -> DMatrix<f64> {
    let mut xs = x.clone();
    for (j, l) in ls.iter().enumerate() {
        let inv = 1.0 / l;
        for v in xs.column_mut(j).iter_mut() {
            *v *= inv;
        }
    }
    xs
}

fn row_sq_norms(xs: &DMatrix<f64>) -> DVector<f64> {
    DVector::from_iterator(xs.nrows(), xs.row_iter().map(|r| r.norm_squared()))
}

/// Pairwise weighted distances via one Gram product.
fn self_distances(xs: &DMatrix<f64>) -> DMatrix<f64> {
    let n = xs.nrows();
    let gram = xs * xs.transpose();
    let sq = row_sq_norms(xs);
    let mut r = DMatrix::zeros(n, n);
    for b in 0..n {
        for a in (b + 1)..n {
            let r2 = (sq[a] + sq[b] - 2.0 * gram[(a, b)]).max(0.0);
            let rv = r2.sqrt();
            r[(a, b)] = rv;
            r[(b, a)] = rv;
        }
    }
    r
}

/// Builds `K = s*phi(R) + sigma2*I` together with the weighted distances.
fn build_kernel_matrices(
    ws: &FitWorkspace,
    family: KernelFamily,
    ls: &[f64],
    s: f64,
    sigma2: f64,
) -> (DMatrix<f64>, DMatrix<f64>) {
    let n = ws.n;
    let r = self_distances(&scale_columns(&ws.x, ls));
    let mut k = DMatrix::zeros(n, n);
    for b in 0..n {
        for a in (b + 1)..n {
            let kv = s * kernel::profile(family, r[(a, b)]);
            k[(a, b)] = kv;
            k[(b, a)] = kv;
        }
        k[(b, b)] = s + sigma2;
    }
    (k, r)
}

/// Cholesky factorization with jitter escalation (1e-8 to 1e-4, tenfold).
fn robust_cholesky(k: &DMatrix<f64>) -> Result<nalgebra::Cholesky<f64, nalgebra::Dyn>> {
    if let Some(c) = nalgebra::Cholesky::new(k.clone()) {
        return Ok(c);
    }
    let mut jitter = 1e-8;
    while jitter <= 1e-4 {
        let mut kj = k.clone();
        for i in 0..k.nrows() {
            kj[(i, i)] += jitter;
        }
        if let Some(c) = nalgebra::Cholesky::new(kj) {
            return Ok(c);
        }
        jitter *= 10.0;
    }
    Err(Error::Degenerate(
        "kernel matrix not positive definite after jitter escalation".into(),
    ))
}

/// theta layout used for MAP fitting: `[log l_1..d, log sigma^2, log s, mean]`.
fn unpack_theta(theta: &[f64], d: usize, family: KernelFamily) -> (KernelParams, NoiseModel, f64) {
    let ls: Vec<f64> = theta[..d].iter().map(|t| t.exp()).collect();
    let sigma2 = theta[d].exp();
    let s = theta[d + 1].exp();
    let mean = theta[d + 2];
    (
        KernelParams {
            lengthscales: ls,
            signal_variance: s,
            family,
        },
        NoiseModel::new(sigma2),
        mean,
    )
}

fn lml_value(
    ws: &FitWorkspace,
    targets: &DVector<f64>,
    family: KernelFamily,
    theta: &[f64],
) -> Result<f64> {
    let d = ws.d;
    let (params, noise, mean) = unpack_theta(theta, d, family);
    let (k, _) = build_kernel_matrices(
        ws,
        family,
        &params.lengthscales,
        params.signal_variance,
        noise.variance(),
    );
    let chol = robust_cholesky(&k)?;
    let yc = targets.map(|y| y - mean);
    let alpha = chol.solve(&yc);
    let n = ws.n as f64;
    let log_det_half: f64 = (0..ws.n).map(|i| chol.l_dirty()[(i, i)].ln()).sum();
    Ok(-0.5 * yc.dot(&alpha) - log_det_half - 0.5 * n * (2.0 * std::f64::consts::PI).ln())
}

/// Log marginal likelihood and its gradient with respect to
/// `[log l_1..d, log sigma^2, log s, mean]`.
///
/// With `A = alpha alpha^T - K^{-1}` and `W = A .* psi(R)`, the lengthscale
/// components reduce to `-(s/l_j^2) (sum_a w_a x_aj^2 - sum_a x_aj (W x)_aj)`
/// where `w = W 1`, so everything runs as matrix products instead of a pair
/// loop.
fn lml_value_grad(
    ws: &FitWorkspace,
    targets: &DVector<f64>,
    family: KernelFamily,
    theta: &[f64],
) -> Result<(f64, Vec<f64>)> {
    let d = ws.d;
    let n = ws.n;
    let (params, noise, mean) = unpack_theta(theta, d, family);
    let s = params.signal_variance;
    let sigma2 = noise.variance();
    let (k, r) = build_kernel_matrices(ws, family, &params.lengthscales, s, sigma2);
    let chol = robust_cholesky(&k)?;
    let yc = targets.map(|y| y - mean);
    let alpha = chol.solve(&yc);
    let log_det_half: f64 = (0..n).map(|i| chol.l_dirty()[(i, i)].ln()).sum();
    let value =
        -0.5 * yc.dot(&alpha) - log_det_half - 0.5 * n as f64 * (2.0 * std::f64::consts::PI).ln();

    // A = alpha alpha^T - K^{-1}; dLML/dtheta = 0.5 tr(A dK/dtheta)
    let kinv = chol.inverse();
    let mut a_mat = kinv;
    a_mat.neg_mut();
    a_mat.ger(1.0, &alpha, &alpha, 1.0);

    let trace_a: f64 = a_mat.diagonal().sum();
    // off-diagonal K is the signal part; the diagonal contributes s * tr(A)
    let frob_ak: f64 = a_mat.iter().zip(k.iter()).map(|(a, b)| a * b).sum();
    let sig_term = frob_ak - sigma2 * trace_a;

    let w_mat = a_mat.zip_map(&r, |a, rv| a * kernel::profile_deriv_over_r(family, rv));
    let w_row = &w_mat * DVector::from_element(n, 1.0);
    let wx = &w_mat * &ws.x;
    let mut grad = vec![0.0; d + 3];
    for j in 0..d {
        let xj = ws.x.column(j);
        let mut acc = 0.0;
        for a in 0..n {
            acc += w_row[a] * xj[a] * xj[a] - xj[a] * wx[(a, j)];
        }
        let lj = params.lengthscales[j];
        grad[j] = -(s / (lj * lj)) * acc;
    }
    grad[d] = 0.5 * sigma2 * trace_a;
    grad[d + 1] = 0.5 * sig_term;
    grad[d + 2] = alpha.sum();
    Ok((value, grad))
}

/// One ensemble member: kernel hyperparameters plus the cached factorization
/// of `K + sigma^2 I` for its dataset.
#[derive(Debug, Clone)]
pub struct GPMember {
    pub params: KernelParams,
    pub noise: NoiseModel,
    pub mean_const: f64,
    pub tau: f64,
    /// Set when MAP fitting failed numerically and the prior-mode parameters
    /// were used instead.
    pub fallback: bool,
    l: DMatrix<f64>,
    alpha: DVector<f64>,
    /// Training inputs scaled by the lengthscales, for cross-kernel products.
    xs_train: DMatrix<f64>,
    xs_train_sq: DVector<f64>,
}

impl GPMember {
    /// Factorizes the kernel matrix for `data` under the given parameters.
    pub fn factorize(
        params: KernelParams,
        noise: NoiseModel,
        mean_const: f64,
        tau: f64,
        fallback: bool,
        data: &Dataset,
    ) -> Result<Self> {
        if params.dim() != data.dim() {
            return Err(Error::DimensionMismatch {
                expected: data.dim(),
                got: params.dim(),
            });
        }
        let ws = FitWorkspace::new(data.inputs());
        let (k, _) = build_kernel_matrices(
            &ws,
            params.family,
            &params.lengthscales,
            params.signal_variance,
            noise.variance(),
        );
        let chol = robust_cholesky(&k)?;
        let yc = data.targets().map(|y| y - mean_const);
        let alpha = chol.solve(&yc);
        let xs_train = scale_columns(data.inputs(), &params.lengthscales);
        let xs_train_sq = row_sq_norms(&xs_train);
        Ok(GPMember {
            params,
            noise,
            mean_const,
            tau,
            fallback,
            l: chol.l(),
            alpha,
            xs_train,
            xs_train_sq,
        })
    }

    /// Gaussian log marginal likelihood of the member's parameters on `data`,
    /// with the analytic gradient over `[log l_1..d, log sigma^2, log s, mean]`.
    pub fn log_marginal_likelihood(&self, data: &Dataset) -> Result<(f64, Vec<f64>)> {
        let ws = FitWorkspace::new(data.inputs());
        let theta = self.theta();
        lml_value_grad(&ws, data.targets(), self.params.family, &theta)
    }

    fn theta(&self) -> Vec<f64> {
        let mut t: Vec<f64> = self.params.lengthscales.iter().map(|l| l.ln()).collect();
        t.push(self.noise.variance().ln());
        t.push(self.params.signal_variance.ln());
        t.push(self.mean_const);
        t
    }

    /// Cross-kernel matrix between the training set and `m` query points
    /// given as rows of a scaled matrix.
    fn cross_kernel(&self, xs_query: &DMatrix<f64>) -> DMatrix<f64> {
        let qs_sq = row_sq_norms(xs_query);
        let mut cross = &self.xs_train * xs_query.transpose();
        let s = self.params.signal_variance;
        let family = self.params.family;
        for p in 0..cross.ncols() {
            for i in 0..cross.nrows() {
                let r2 = (self.xs_train_sq[i] + qs_sq[p] - 2.0 * cross[(i, p)]).max(0.0);
                cross[(i, p)] = s * kernel::profile(family, r2.sqrt());
            }
        }
        cross
    }

    fn scale_queries(&self, xs_norm: &[Vec<f64>]) -> DMatrix<f64> {
        let d = self.params.dim();
        let mut q = DMatrix::zeros(xs_norm.len(), d);
        for (p, x) in xs_norm.iter().enumerate() {
            for j in 0..d {
                q[(p, j)] = x[j] / self.params.lengthscales[j];
            }
        }
        q
    }

    /// Posterior mean and standard deviation at one normalized point.
    pub fn posterior_norm(&self, data: &Dataset, x_norm: &[f64]) -> (f64, f64) {
        self.posterior_norm_batch(data, std::slice::from_ref(&x_norm.to_vec()))[0]
    }

    /// Batched posterior at several normalized points; one triangular solve.
    pub fn posterior_norm_batch(&self, _data: &Dataset, xs_norm: &[Vec<f64>]) -> Vec<(f64, f64)> {
        let m = xs_norm.len();
        if m == 0 {
            return vec![];
        }
        let kx = self.cross_kernel(&self.scale_queries(xs_norm));
        let v = self
            .l
            .solve_lower_triangular(&kx)
            .expect("factor is nonsingular");
        (0..m)
            .map(|p| {
                let mu = self.mean_const + kx.column(p).dot(&self.alpha);
                let var = (self.params.signal_variance - v.column(p).norm_squared()).max(0.0);
                (mu, var.sqrt())
            })
            .collect()
    }
}

/// Uniform mixture of MAP members, each fit under its own sparsity scale.
#[derive(Debug, Clone)]
pub struct EnsembleGP {
    members: Vec<GPMember>,
    dataset: Dataset,
}

impl EnsembleGP {
    pub fn new(members: Vec<GPMember>, dataset: Dataset) -> Result<Self> {
        if members.is_empty() {
            return Err(Error::InvalidConfig("ensemble needs at least one member".into()));
        }
        Ok(EnsembleGP { members, dataset })
    }

    pub fn members(&self) -> &[GPMember] {
        &self.members
    }

    pub fn dataset(&self) -> &Dataset {
        &self.dataset
    }

    /// Per-member `(mu, sigma)` at a configuration in natural units.
    pub fn member_posteriors(&self, x: &Configuration) -> Result<Vec<(f64, f64)>> {
        let u = self.dataset.normalize_query(x)?;
        Ok(self
            .members
            .iter()
            .map(|m| m.posterior_norm(&self.dataset, &u))
            .collect())
    }

    /// Per-point, per-member posteriors, evaluated with batched solves.
    pub fn member_posteriors_batch(&self, xs: &[Configuration]) -> Result<Vec<Vec<(f64, f64)>>> {
        let us: Vec<Vec<f64>> = xs
            .iter()
            .map(|x| self.dataset.normalize_query(x))
            .collect::<Result<_>>()?;
        let per_member: Vec<Vec<(f64, f64)>> = self
            .members
            .iter()
            .map(|m| m.posterior_norm_batch(&self.dataset, &us))
            .collect();
        Ok((0..xs.len())
            .map(|p| per_member.iter().map(|pm| pm[p]).collect())
            .collect())
    }

    /// Mixture mean and standard deviation (uniform Gaussian mixture moments,
    /// standardized units).
    pub fn mixture(&self, x: &Configuration) -> Result<(f64, f64)> {
        Ok(mixture_moments(&self.member_posteriors(x)?))
    }

    /// Kriging-believer update: appends `(x, y_std)` and refactorizes every
    /// member with unchanged hyperparameters.
    pub fn condition_on(&self, x: &Configuration, y_std: f64) -> Result<EnsembleGP> {
        let u = self.dataset.normalize_query(x)?;
        let data = self.dataset.appended_std(&u, y_std);
        let members = self
            .members
            .iter()
            .map(|m| {
                GPMember::factorize(
                    m.params.clone(),
                    m.noise,
                    m.mean_const,
                    m.tau,
                    m.fallback,
                    &data,
                )
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(EnsembleGP { members, dataset: data })
    }

    pub fn snapshot(&self) -> ModelSnapshot {
        ModelSnapshot {
            dataset_hash: format!("{:016x}", self.dataset.content_hash()),
            members: self
                .members
                .iter()
                .map(|m| MemberSnapshot {
                    lengthscales: m.params.lengthscales.clone(),
                    signal_variance: m.params.signal_variance,
                    noise_variance: m.noise.variance(),
                    mean_const: m.mean_const,
                    tau: m.tau,
                    fallback: m.fallback,
                })
                .collect(),
        }
    }
}

/// Moments of the uniform mixture given per-member `(mu, sigma)`.
pub fn mixture_moments(posteriors: &[(f64, f64)]) -> (f64, f64) {
    let m = posteriors.len() as f64;
    let mean = posteriors.iter().map(|(mu, _)| mu).sum::<f64>() / m;
    let second = posteriors
        .iter()
        .map(|(mu, sd)| sd * sd + mu * mu)
        .sum::<f64>()
        / m;
    let var = (second - mean * mean).max(0.0);
    (mean, var.sqrt())
}

/// Serializable model state for verification output.
#[derive(Debug, Clone, Serialize)]
pub struct ModelSnapshot {
    pub dataset_hash: String,
    pub members: Vec<MemberSnapshot>,
}

#[derive(Debug, Clone, Serialize)]
pub struct MemberSnapshot {
    pub lengthscales: Vec<f64>,
    pub signal_variance: f64,
    pub noise_variance: f64,
    pub mean_const: f64,
    pub tau: f64,
    pub fallback: bool,
}

/// Lower bound on the fitted noise variance (standardized units); the hard
/// floor of the noise model.
pub const FIT_NOISE_LOWER: f64 = 1e-8;

/// Lengthscale bounds for MAP fitting (unit-cube units). The upper bound is
/// generous on purpose: a coordinate the data does not constrain should be
/// able to flatten far enough that the acquisition gains nothing from
/// wandering in it.
pub const FIT_LENGTHSCALE_LOWER: f64 = 1e-3;
pub const FIT_LENGTHSCALE_UPPER: f64 = 1e7;

/// Upper bound of the MAP search for the signal variance. Targets are
/// standardized, so amplitudes beyond this are the degenerate ridge where
/// the marginal likelihood inflates `s` and the lengthscales together; the
/// prior support itself extends to the tophat edge.
pub const FIT_SIGNAL_UPPER: f64 = 1e2;

fn theta_bounds(d: usize) -> (Vec<f64>, Vec<f64>) {
    let mut lo = vec![FIT_LENGTHSCALE_LOWER.ln(); d];
    let mut hi = vec![FIT_LENGTHSCALE_UPPER.ln(); d];
    lo.push(FIT_NOISE_LOWER.ln());
    hi.push(10f64.ln());
    // strictly inside the tophat support
    lo.push(TOPHAT_LO.ln() + 1e-9);
    hi.push(FIT_SIGNAL_UPPER.ln());
    lo.push(-10.0);
    hi.push(10.0);
    (lo, hi)
}

fn initial_theta(d: usize, tau: f64) -> Vec<f64> {
    // sparse start: v_j = tau / l_j^2 = 0.1
    let l0 = (tau / 0.1).sqrt();
    let mut t = vec![l0.ln(); d];
    t.push((1e-2f64).ln());
    t.push(0.0);
    t.push(0.0);
    t
}

fn standard_normal(rng: &mut ChaCha8Rng) -> f64 {
    // Box-Muller
    let u1: f64 = rng.random::<f64>().max(1e-300);
    let u2: f64 = rng.random();
    (-2.0 * u1.ln()).sqrt() * (2.0 * std::f64::consts::PI * u2).cos()
}

/// Fits one member by MAP over `log_marginal_likelihood + log_prior`.
///
/// The first restart starts from the sparse canonical initialization; later
/// restarts perturb it with Gaussian noise of scale 0.5 in theta-space. If
/// every restart fails numerically the prior-mode parameters are returned
/// with the `fallback` flag set.
pub fn fit_map(data: &Dataset, tau: f64, restarts: usize, seed: u64) -> Result<GPMember> {
    if restarts == 0 {
        return Err(Error::InvalidConfig("restarts must be at least 1".into()));
    }
    let priors = SaasPriors::new(tau)?;
    let family = KernelFamily::Matern52;
    let d = data.dim();
    let ws = FitWorkspace::new(data.inputs());
    let (lo, hi) = theta_bounds(d);
    let theta0 = initial_theta(d, tau);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);

    let objective = |theta: &[f64]| -> f64 {
        let (params, noise, _) = unpack_theta(theta, d, family);
        let lp = kernel::log_prior(&params, &noise, &priors);
        if lp == f64::NEG_INFINITY {
            return f64::NEG_INFINITY;
        }
        match lml_value(&ws, data.targets(), family, theta) {
            Ok(v) => v + lp,
            Err(_) => f64::NEG_INFINITY,
        }
    };
    let gradient = |theta: &[f64]| -> Vec<f64> {
        let (params, noise, _) = unpack_theta(theta, d, family);
        match lml_value_grad(&ws, data.targets(), family, theta) {
            Ok((_, mut g)) => {
                let pg = kernel::log_prior_grad(&params, &noise, &priors);
                for j in 0..d + 2 {
                    g[j] += pg[j];
                }
                g
            }
            Err(_) => vec![0.0; d + 3],
        }
    };

    let mut best: Option<(f64, Vec<f64>)> = None;
    for r in 0..restarts {
        let mut start = theta0.clone();
        if r > 0 {
            for v in start.iter_mut() {
                *v += RESTART_PERTURB_SCALE * standard_normal(&mut rng);
            }
        }
        let mut f = |x: &[f64]| objective(x);
        let mut g = |x: &[f64]| gradient(x);
        let res = maximize_bounded(&mut f, &mut g, &start, &lo, &hi, MAP_MAX_ITERS, MAP_GRAD_TOL, 0.0);
        if res.value.is_finite() && best.as_ref().map_or(true, |(b, _)| res.value > *b) {
            best = Some((res.value, res.x));
        }
    }

    match best {
        Some((_, theta)) => {
            let (params, noise, mean) = unpack_theta(&theta, d, family);
            GPMember::factorize(params, noise, mean, tau, false, data)
        }
        None => {
            // prior mode: v_j = 1
            let l = tau.sqrt().clamp(FIT_LENGTHSCALE_LOWER, FIT_LENGTHSCALE_UPPER);
            let params = KernelParams::new(vec![l; d], 1.0, family)?;
            GPMember::factorize(params, NoiseModel::new(1e-2), 0.0, tau, true, data)
        }
    }
}

/// Fits the ensemble: sparsity scales `tau_m = 0.1 tan(pi u_m / 2)` drawn
/// from a generator seeded by `seed`, members fit independently with seeds
/// derived per member.
pub fn fit_ensemble(data: &Dataset, m: usize, seed: u64) -> Result<EnsembleGP> {
    if m == 0 {
        return Err(Error::InvalidConfig("ensemble size must be at least 1".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut members = Vec::with_capacity(m);
    for i in 0..m {
        let u: f64 = rng.random::<f64>().clamp(1e-16, 1.0 - 1e-16);
        let tau = 0.1 * (std::f64::consts::FRAC_PI_2 * u).tan();
        let member_seed = derive_seed(seed, &[i as u64, 0x6d61705f]);
        members.push(fit_map(data, tau, DEFAULT_RESTARTS, member_seed)?);
    }
    EnsembleGP::new(members, data.clone())
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use rand::Rng;

    fn unit_space(d: usize) -> SearchSpace {
        SearchSpace::unit(d).unwrap()
    }

    fn cfg(v: &[f64]) -> Configuration {
        Configuration::new(v.to_vec())
    }

    fn random_dataset(n: usize, d: usize, seed: u64) -> Dataset {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let space = unit_space(d);
        let xs: Vec<Configuration> = (0..n)
            .map(|_| cfg(&(0..d).map(|_| rng.random_range(0.0..1.0)).collect::<Vec<_>>()))
            .collect();
        let ys: Vec<f64> = xs
            .iter()
            .map(|x| (3.0 * x.values()[0]).sin() + 0.3 * rng.random_range(-1.0..1.0))
            .collect();
        Dataset::from_raw(&space, &xs, &ys).unwrap()
    }

    #[test]
    fn univariate_lml_closed_form() {
        let space = unit_space(1);
        let data = Dataset::from_raw(&space, &[cfg(&[0.3])], &[2.0]).unwrap();
        // standardized target is 0 (single point), raw_std falls back to 1
        assert_eq!(data.targets()[0], 0.0);
        let params = KernelParams::new(vec![0.7], 1.3, KernelFamily::Matern52).unwrap();
        let noise = NoiseModel::new(0.05);
        let member = GPMember::factorize(params, noise, 0.4, 0.1, false, &data).unwrap();
        let (lml, _) = member.log_marginal_likelihood(&data).unwrap();
        let var = 1.3 + 0.05;
        let y = 0.0 - 0.4;
        let expected = -0.5 * y * y / var - 0.5 * (2.0 * std::f64::consts::PI * var).ln();
        assert_relative_eq!(lml, expected, max_relative = 1e-12);
    }

    #[test]
    fn lml_gradient_matches_finite_differences() {
        let data = random_dataset(10, 3, 21);
        let ws = FitWorkspace::new(data.inputs());
        let mut rng = ChaCha8Rng::seed_from_u64(77);
        for _ in 0..10 {
            let d = 3;
            let mut theta: Vec<f64> = (0..d).map(|_| rng.random_range(-1.5..1.0)).collect();
            theta.push(rng.random_range(-6.0..-1.0)); // log sigma2
            theta.push(rng.random_range(-1.0..1.0)); // log s
            theta.push(rng.random_range(-0.5..0.5)); // mean
            let (_, grad) =
                lml_value_grad(&ws, data.targets(), KernelFamily::Matern52, &theta).unwrap();
            let h = 1e-5;
            for j in 0..theta.len() {
                let mut tp = theta.clone();
                let mut tm = theta.clone();
                tp[j] += h;
                tm[j] -= h;
                let fp = lml_value(&ws, data.targets(), KernelFamily::Matern52, &tp).unwrap();
                let fm = lml_value(&ws, data.targets(), KernelFamily::Matern52, &tm).unwrap();
                let fd = (fp - fm) / (2.0 * h);
                let denom = fd.abs().max(grad[j].abs()).max(1e-6);
                assert!(
                    (grad[j] - fd).abs() / denom <= 1e-4,
                    "component {j}: analytic {} vs fd {fd}",
                    grad[j]
                );
            }
        }
    }

    #[test]
    fn lml_invariant_to_row_permutation() {
        let space = unit_space(2);
        let xs = [cfg(&[0.1, 0.2]), cfg(&[0.8, 0.4]), cfg(&[0.5, 0.9])];
        let ys = [1.0, -0.5, 0.25];
        let data = Dataset::from_raw(&space, &xs, &ys).unwrap();
        let perm_xs = [xs[2].clone(), xs[0].clone(), xs[1].clone()];
        let perm_ys = [ys[2], ys[0], ys[1]];
        let data_p = Dataset::from_raw(&space, &perm_xs, &perm_ys).unwrap();
        let params = KernelParams::new(vec![0.5, 0.8], 1.0, KernelFamily::Matern52).unwrap();
        let m1 = GPMember::factorize(params.clone(), NoiseModel::new(0.01), 0.0, 0.1, false, &data)
            .unwrap();
        let m2 =
            GPMember::factorize(params, NoiseModel::new(0.01), 0.0, 0.1, false, &data_p).unwrap();
        let (a, _) = m1.log_marginal_likelihood(&data).unwrap();
        let (b, _) = m2.log_marginal_likelihood(&data_p).unwrap();
        assert_relative_eq!(a, b, max_relative = 1e-10);
    }

    #[test]
    fn noiseless_member_interpolates() {
        let data = random_dataset(12, 2, 5);
        let params = KernelParams::new(vec![0.4, 0.6], 1.5, KernelFamily::Matern52).unwrap();
        let member =
            GPMember::factorize(params, NoiseModel::new(0.0), 0.0, 0.1, false, &data).unwrap();
        for i in 0..data.n() {
            let row: Vec<f64> = (0..data.dim()).map(|j| data.inputs()[(i, j)]).collect();
            let (mu, sd) = member.posterior_norm(&data, &row);
            assert!((mu - data.targets()[i]).abs() <= 1e-5, "mu {mu} vs y {}", data.targets()[i]);
            assert!(sd <= 1e-3, "sd {sd}");
        }
    }

    #[test]
    fn posterior_far_from_data_reverts_to_prior() {
        let space = unit_space(1);
        let xs = [cfg(&[0.4]), cfg(&[0.6]), cfg(&[0.5])];
        let ys = [1.0, 2.0, 1.5];
        let data = Dataset::from_raw(&space, &xs, &ys).unwrap();
        let params = KernelParams::new(vec![0.3], 2.0, KernelFamily::Matern52).unwrap();
        let member =
            GPMember::factorize(params, NoiseModel::new(0.01), 0.7, 0.1, false, &data).unwrap();
        // query at distance 1e3 * max lengthscale from the data
        let (mu, sd) = member.posterior_norm(&data, &[1e3 * 0.3]);
        assert!((mu - 0.7).abs() < 1e-3);
        assert!((sd * sd - 2.0).abs() < 1e-3);
    }

    #[test]
    fn mixture_of_identical_members_equals_member() {
        let data = random_dataset(8, 2, 9);
        let params = KernelParams::new(vec![0.5, 0.5], 1.0, KernelFamily::Matern52).unwrap();
        let member =
            GPMember::factorize(params, NoiseModel::new(0.01), 0.0, 0.1, false, &data).unwrap();
        let ens = EnsembleGP::new(vec![member.clone(), member.clone(), member.clone()], data.clone())
            .unwrap();
        let x = cfg(&[0.31, 0.77]);
        let u = data.normalize_query(&x).unwrap();
        let (mu, sd) = member.posterior_norm(&data, &u);
        let (mmu, msd) = ens.mixture(&x).unwrap();
        assert_relative_eq!(mu, mmu, max_relative = 1e-12);
        assert_relative_eq!(sd, msd, epsilon = 1e-9);
    }

    #[test]
    fn mixture_variance_at_least_average_member_variance() {
        let data = random_dataset(10, 2, 13);
        let p1 = KernelParams::new(vec![0.3, 0.9], 1.0, KernelFamily::Matern52).unwrap();
        let p2 = KernelParams::new(vec![1.2, 0.2], 0.8, KernelFamily::Matern52).unwrap();
        let m1 = GPMember::factorize(p1, NoiseModel::new(0.01), 0.1, 0.1, false, &data).unwrap();
        let m2 = GPMember::factorize(p2, NoiseModel::new(0.05), -0.2, 0.3, false, &data).unwrap();
        let ens = EnsembleGP::new(vec![m1, m2], data).unwrap();
        let x = cfg(&[0.42, 0.58]);
        let posts = ens.member_posteriors(&x).unwrap();
        let (_, sd) = mixture_moments(&posts);
        let avg_var = posts.iter().map(|(_, s)| s * s).sum::<f64>() / posts.len() as f64;
        assert!(sd * sd >= avg_var - 1e-12);
    }

    #[test]
    fn posterior_variance_non_increasing_with_data() {
        let data = random_dataset(9, 2, 31);
        let params = KernelParams::new(vec![0.5, 0.7], 1.2, KernelFamily::Matern52).unwrap();
        let member =
            GPMember::factorize(params, NoiseModel::new(0.01), 0.0, 0.1, false, &data).unwrap();
        let ens = EnsembleGP::new(vec![member], data.clone()).unwrap();
        let new_x = cfg(&[0.55, 0.45]);
        let cond = ens.condition_on(&new_x, 0.3).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        for _ in 0..25 {
            let x = cfg(&[rng.random_range(0.0..1.0), rng.random_range(0.0..1.0)]);
            let before = ens.member_posteriors(&x).unwrap()[0].1;
            let after = cond.member_posteriors(&x).unwrap()[0].1;
            assert!(after * after <= before * before + 1e-8);
        }
    }

    #[test]
    fn standardization_round_trip_on_constant_data() {
        let space = unit_space(1);
        let xs = [cfg(&[0.2]), cfg(&[0.8])];
        let data = Dataset::from_raw(&space, &xs, &[5.5, 5.5]).unwrap();
        assert_eq!(data.raw_std(), 1.0);
        let params = KernelParams::new(vec![0.5], 1.0, KernelFamily::Matern52).unwrap();
        let member =
            GPMember::factorize(params, NoiseModel::new(0.0), 0.0, 0.1, false, &data).unwrap();
        let (mu, _) = member.posterior_norm(&data, &[0.5]);
        assert!((data.destandardize(mu) - 5.5).abs() < 1e-6);
    }

    #[test]
    fn fit_recovers_single_active_dimension() {
        let mut rng = ChaCha8Rng::seed_from_u64(42);
        let d = 5;
        let space = unit_space(d);
        let xs: Vec<Configuration> = (0..30)
            .map(|_| cfg(&(0..d).map(|_| rng.random_range(0.0..1.0)).collect::<Vec<_>>()))
            .collect();
        let ys: Vec<f64> = xs.iter().map(|x| (x.values()[0] - 0.25).powi(2)).collect();
        let data = Dataset::from_raw(&space, &xs, &ys).unwrap();
        let member = fit_map(&data, 0.1, 2, 7).unwrap();
        assert!(!member.fallback);
        let l0 = member.params.lengthscales[0];
        let min_rest = member.params.lengthscales[1..]
            .iter()
            .cloned()
            .fold(f64::INFINITY, f64::min);
        assert!(l0 < min_rest, "l0 {l0} vs min rest {min_rest}");
    }

    #[test]
    fn fit_constant_targets_hits_floor_and_tophat_edge() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let space = unit_space(2);
        let xs: Vec<Configuration> = (0..15)
            .map(|_| cfg(&[rng.random_range(0.0..1.0), rng.random_range(0.0..1.0)]))
            .collect();
        let ys = vec![3.25; 15];
        let data = Dataset::from_raw(&space, &xs, &ys).unwrap();
        let member = fit_map(&data, 0.1, 2, 11).unwrap();
        // the fit's noise floor, not the hard NoiseModel floor
        assert!(member.noise.variance() <= FIT_NOISE_LOWER * 1.0001, "noise {}", member.noise.variance());
        assert!(
            member.params.signal_variance <= 0.02,
            "signal {}",
            member.params.signal_variance
        );
    }

    #[test]
    fn fit_objective_not_below_canonical_start() {
        let data = random_dataset(15, 3, 8);
        let tau = 0.1;
        let member = fit_map(&data, tau, 3, 19).unwrap();
        let priors = SaasPriors::new(tau).unwrap();
        let ws = FitWorkspace::new(data.inputs());
        let theta0 = initial_theta(3, tau);
        let (p0, n0, _) = unpack_theta(&theta0, 3, KernelFamily::Matern52);
        let f0 = lml_value(&ws, data.targets(), KernelFamily::Matern52, &theta0).unwrap()
            + kernel::log_prior(&p0, &n0, &priors);
        let (lml, _) = member.log_marginal_likelihood(&data).unwrap();
        let ffit = lml + kernel::log_prior(&member.params, &member.noise, &priors);
        assert!(ffit >= f0 - 1e-9, "fit {ffit} vs start {f0}");
    }

    #[test]
    fn fit_signal_variance_strictly_inside_tophat() {
        let data = random_dataset(12, 2, 55);
        let member = fit_map(&data, 0.2, 2, 1).unwrap();
        let s = member.params.signal_variance;
        assert!(s > TOPHAT_LO && s < TOPHAT_HI);
    }

    #[test]
    fn ensemble_reproducible_and_default_size() {
        let data = random_dataset(10, 2, 71);
        let a = fit_ensemble(&data, DEFAULT_ENSEMBLE_SIZE, 99).unwrap();
        let b = fit_ensemble(&data, DEFAULT_ENSEMBLE_SIZE, 99).unwrap();
        assert_eq!(DEFAULT_ENSEMBLE_SIZE, 4);
        assert_eq!(a.members().len(), 4);
        let taus_a: Vec<f64> = a.members().iter().map(|m| m.tau).collect();
        let taus_b: Vec<f64> = b.members().iter().map(|m| m.tau).collect();
        assert_eq!(taus_a, taus_b);
        let x = cfg(&[0.37, 0.61]);
        assert_eq!(a.mixture(&x).unwrap(), b.mixture(&x).unwrap());
        // single member is deterministic too
        let c = fit_ensemble(&data, 1, 5).unwrap();
        let d2 = fit_ensemble(&data, 1, 5).unwrap();
        assert_eq!(c.mixture(&x).unwrap(), d2.mixture(&x).unwrap());
    }

    #[test]
    fn snapshot_serializes() {
        let data = random_dataset(6, 2, 14);
        let params = KernelParams::new(vec![0.5, 0.5], 1.0, KernelFamily::Matern52).unwrap();
        let member =
            GPMember::factorize(params, NoiseModel::new(0.01), 0.0, 0.1, false, &data).unwrap();
        let ens = EnsembleGP::new(vec![member], data).unwrap();
        let js = serde_json::to_string(&ens.snapshot()).unwrap();
        assert!(js.contains("dataset_hash"));
        assert!(js.contains("lengthscales"));
    }

    #[test]
    fn batched_posterior_matches_single() {
        let data = random_dataset(10, 3, 23);
        let params = KernelParams::new(vec![0.4, 0.8, 1.1], 1.3, KernelFamily::Matern52).unwrap();
        let member =
            GPMember::factorize(params, NoiseModel::new(0.02), 0.1, 0.1, false, &data).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        let pts: Vec<Vec<f64>> = (0..7)
            .map(|_| (0..3).map(|_| rng.random_range(0.0..1.0)).collect())
            .collect();
        let batch = member.posterior_norm_batch(&data, &pts);
        for (p, x) in pts.iter().enumerate() {
            let single = member.posterior_norm(&data, x);
            assert_relative_eq!(batch[p].0, single.0, max_relative = 1e-12);
            assert_relative_eq!(batch[p].1, single.1, epsilon = 1e-12);
        }
    }
}
