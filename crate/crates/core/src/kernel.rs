//! ARD covariance functions, their gradients, and the shrinkage prior
//! log-densities used for MAP fitting.
//!
//! Kernels have the radial form `k(x,x') = s * phi(r)` with
//! `r^2 = sum_j (x_j - x'_j)^2 / l_j^2`. The per-coordinate sensitivity bound
//! `|dk/dx_j| <= s * sup|phi'| / l_j` follows from `|x_j - x'_j| / l_j <= r`,
//! and `sup|phi'|` is maximized numerically once per family.

use std::sync::OnceLock;

use serde::{Deserialize, Serialize};
use statrs::function::gamma::ln_gamma;

use crate::error::{Error, Result};

/// Hard floor on the observation noise variance (standardized output units).
pub const NOISE_FLOOR: f64 = 1e-8;

/// Tophat prior support on the signal variance.
pub const TOPHAT_LO: f64 = 1e-2;
pub const TOPHAT_HI: f64 = 1e4;

/// Gamma prior on the noise variance: shape 0.9, rate 10.
pub const NOISE_GAMMA_SHAPE: f64 = 0.9;
pub const NOISE_GAMMA_RATE: f64 = 10.0;

/// HalfCauchy scale on the inverse squared lengthscales `v_j = tau / l_j^2`.
pub const HALF_CAUCHY_SCALE: f64 = 1.0;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum KernelFamily {
    Matern52,
    SquaredExponential,
}

/// ARD kernel hyperparameters. Lengthscales are in unit-cube input units.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct KernelParams {
    pub lengthscales: Vec<f64>,
    pub signal_variance: f64,
    pub family: KernelFamily,
}

impl KernelParams {
    pub fn new(lengthscales: Vec<f64>, signal_variance: f64, family: KernelFamily) -> Result<Self> {
        if lengthscales.is_empty() || lengthscales.iter().any(|l| !(*l > 0.0)) {
            return Err(Error::InvalidConfig(
                "lengthscales must be positive and nonempty".into(),
            ));
        }
        if !(signal_variance > 0.0) {
            return Err(Error::InvalidConfig("signal variance must be positive".into()));
        }
        Ok(KernelParams {
            lengthscales,
            signal_variance,
            family,
        })
    }

    pub fn dim(&self) -> usize {
        self.lengthscales.len()
    }
}

/// Observation noise variance, clamped to the floor.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct NoiseModel {
    noise_variance: f64,
}

impl NoiseModel {
    pub fn new(noise_variance: f64) -> Self {
        NoiseModel {
            noise_variance: noise_variance.max(NOISE_FLOOR),
        }
    }

    pub fn variance(&self) -> f64 {
        self.noise_variance
    }
}

/// Per-member global sparsity scale; the remaining prior hyperconstants are
/// fixed (HalfCauchy(1) on `tau/l^2`, Gamma(0.9, 10) on the noise, Tophat on
/// the signal variance).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SaasPriors {
    pub tau: f64,
}

impl SaasPriors {
    pub fn new(tau: f64) -> Result<Self> {
        if !(tau > 0.0) {
            return Err(Error::InvalidConfig("tau must be positive".into()));
        }
        Ok(SaasPriors { tau })
    }
}

/// Radial profile `phi(r)` with `phi(0) = 1`.
pub fn profile(family: KernelFamily, r: f64) -> f64 {
    match family {
        KernelFamily::Matern52 => {
            let sr = 5f64.sqrt() * r;
            (1.0 + sr + sr * sr / 3.0) * (-sr).exp()
        }
        KernelFamily::SquaredExponential => (-0.5 * r * r).exp(),
    }
}

/// Profile derivative `phi'(r)`.
pub fn profile_deriv(family: KernelFamily, r: f64) -> f64 {
    match family {
        KernelFamily::Matern52 => {
            let s5 = 5f64.sqrt();
            -(5.0 / 3.0) * r * (1.0 + s5 * r) * (-s5 * r).exp()
        }
        KernelFamily::SquaredExponential => -r * (-0.5 * r * r).exp(),
    }
}

/// `phi'(r) / r`, continuous at zero.
pub fn profile_deriv_over_r(family: KernelFamily, r: f64) -> f64 {
    match family {
        KernelFamily::Matern52 => {
            let s5 = 5f64.sqrt();
            -(5.0 / 3.0) * (1.0 + s5 * r) * (-s5 * r).exp()
        }
        KernelFamily::SquaredExponential => -(-0.5 * r * r).exp(),
    }
}

/// Weighted radial distance between two points.
pub fn weighted_distance(x: &[f64], x2: &[f64], lengthscales: &[f64]) -> f64 {
    let mut r2 = 0.0;
    for j in 0..x.len() {
        let d = (x[j] - x2[j]) / lengthscales[j];
        r2 += d * d;
    }
    r2.sqrt()
}

fn check_dims(x: &[f64], x2: &[f64], params: &KernelParams) -> Result<()> {
    if x.len() != params.dim() || x2.len() != params.dim() {
        return Err(Error::DimensionMismatch {
            expected: params.dim(),
            got: if x.len() != params.dim() { x.len() } else { x2.len() },
        });
    }
    Ok(())
}

/// Covariance `k(x, x2)`.
pub fn kernel_eval(x: &[f64], x2: &[f64], params: &KernelParams) -> Result<f64> {
    check_dims(x, x2, params)?;
    let r = weighted_distance(x, x2, &params.lengthscales);
    Ok(params.signal_variance * profile(params.family, r))
}

/// Gradient of `k(x, x2)` with respect to `x`.
pub fn kernel_grad_x(x: &[f64], x2: &[f64], params: &KernelParams) -> Result<Vec<f64>> {
    check_dims(x, x2, params)?;
    let r = weighted_distance(x, x2, &params.lengthscales);
    let scale = params.signal_variance * profile_deriv_over_r(params.family, r);
    Ok((0..params.dim())
        .map(|j| {
            let lj = params.lengthscales[j];
            scale * (x[j] - x2[j]) / (lj * lj)
        })
        .collect())
}

/// Numerical maximum of `|phi'|` over `[0, 50]`, cached per family. A dense
/// grid pass is refined by golden-section search and inflated by 1e-12 so the
/// result is a true upper bound despite floating-point evaluation noise.
pub fn sup_abs_profile_deriv(family: KernelFamily) -> f64 {
    static MATERN: OnceLock<f64> = OnceLock::new();
    static SE: OnceLock<f64> = OnceLock::new();
    let cell = match family {
        KernelFamily::Matern52 => &MATERN,
        KernelFamily::SquaredExponential => &SE,
    };
    *cell.get_or_init(|| {
        let g = |r: f64| profile_deriv(family, r).abs();
        let n = 50_000;
        let mut best_r = 0.0;
        let mut best = 0.0;
        for i in 0..=n {
            let r = 50.0 * i as f64 / n as f64;
            let v = g(r);
            if v > best {
                best = v;
                best_r = r;
            }
        }
        // golden-section refinement on the bracketing interval
        let phi = (5f64.sqrt() - 1.0) / 2.0;
        let (mut a, mut b) = (best_r - 50.0 / n as f64, best_r + 50.0 / n as f64);
        a = a.max(0.0);
        for _ in 0..200 {
            let c = b - phi * (b - a);
            let d = a + phi * (b - a);
            if g(c) > g(d) {
                b = d;
            } else {
                a = c;
            }
        }
        let refined = g(0.5 * (a + b)).max(best);
        refined * (1.0 + 1e-12)
    })
}

/// Per-coordinate bound on `|dk/dx_j|`: `s * sup|phi'| / l_j`.
pub fn coordinate_bound(params: &KernelParams) -> Vec<f64> {
    let sup = sup_abs_profile_deriv(params.family);
    params
        .lengthscales
        .iter()
        .map(|l| params.signal_variance * sup / l)
        .collect()
}

/// Log density of HalfCauchy(scale) at `v >= 0`.
pub fn log_half_cauchy(v: f64, scale: f64) -> f64 {
    if v < 0.0 {
        return f64::NEG_INFINITY;
    }
    (2.0 / (std::f64::consts::PI * scale)).ln() - (1.0 + (v / scale) * (v / scale)).ln()
}

/// Log density of Gamma(shape, rate) at `x > 0`.
pub fn log_gamma_density(x: f64, shape: f64, rate: f64) -> f64 {
    if x <= 0.0 {
        return f64::NEG_INFINITY;
    }
    shape * rate.ln() - ln_gamma(shape) + (shape - 1.0) * x.ln() - rate * x
}

/// Joint log prior score used for MAP fitting, as a function of the
/// optimization variables `theta = (log l_1..d, log sigma^2, log s)`.
///
/// The HalfCauchy term is evaluated at its natural hyperparameter
/// `v_j = tau / l_j^2` with no change-of-variables Jacobian (the usual MAP
/// convention): the Jacobian of `v_j = tau exp(-2 theta_j)` would move the
/// theta-space prior mode to `v_j = 1` and pull every lengthscale toward
/// `sqrt(tau)`, whereas without it the shrinkage is monotone and coordinates
/// the data does not constrain drift to long lengthscales and drop out of
/// the model. The noise Gamma term keeps its Jacobian, giving the theta-space
/// prior a mode at `sigma^2 = shape/rate`; that keeps MAP noise from
/// collapsing to the floor on smooth data, which would otherwise let the
/// acquisition reward wandering in flat coordinates at arbitrarily small
/// scales. The Tophat term is unnormalized: 0 inside the support, `-inf`
/// outside.
pub fn log_prior(params: &KernelParams, noise: &NoiseModel, priors: &SaasPriors) -> f64 {
    let s = params.signal_variance;
    if s < TOPHAT_LO || s > TOPHAT_HI {
        return f64::NEG_INFINITY;
    }
    let mut lp = 0.0;
    for l in &params.lengthscales {
        let v = priors.tau / (l * l);
        lp += log_half_cauchy(v, HALF_CAUCHY_SCALE);
    }
    let sigma2 = noise.variance();
    lp += log_gamma_density(sigma2, NOISE_GAMMA_SHAPE, NOISE_GAMMA_RATE) + sigma2.ln();
    lp
}

/// Gradient of `log_prior` with respect to `(log l_1..d, log sigma^2, log s)`.
pub fn log_prior_grad(params: &KernelParams, noise: &NoiseModel, priors: &SaasPriors) -> Vec<f64> {
    let d = params.dim();
    let mut g = vec![0.0; d + 2];
    for (j, l) in params.lengthscales.iter().enumerate() {
        let v = priors.tau / (l * l);
        // d/dtheta log HC(v(theta)) with dv/dtheta = -2v
        g[j] = 4.0 * v * v / (1.0 + v * v);
    }
    g[d] = NOISE_GAMMA_SHAPE - NOISE_GAMMA_RATE * noise.variance();
    // flat in log s inside the tophat support
    g[d + 1] = 0.0;
    g
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn params(ls: &[f64], s: f64, family: KernelFamily) -> KernelParams {
        KernelParams::new(ls.to_vec(), s, family).unwrap()
    }

    #[test]
    fn kernel_at_identical_inputs_is_signal_variance() {
        for family in [KernelFamily::Matern52, KernelFamily::SquaredExponential] {
            let p = params(&[0.3, 1.2], 2.5, family);
            let x = [0.4, 0.7];
            assert_relative_eq!(kernel_eval(&x, &x, &p).unwrap(), 2.5, max_relative = 1e-14);
        }
    }

    #[test]
    fn kernel_symmetric() {
        let p = params(&[0.5, 2.0, 0.7], 1.3, KernelFamily::Matern52);
        let x = [0.1, 0.9, 0.3];
        let y = [0.8, 0.2, 0.4];
        assert_eq!(kernel_eval(&x, &y, &p).unwrap(), kernel_eval(&y, &x, &p).unwrap());
    }

    #[test]
    fn matern_unit_distance_closed_form() {
        let p = params(&[1.0], 1.0, KernelFamily::Matern52);
        // (1 + sqrt5 + 5/3) e^{-sqrt5}
        assert_relative_eq!(
            kernel_eval(&[0.0], &[1.0], &p).unwrap(),
            0.5239941088318203,
            max_relative = 1e-12
        );
    }

    #[test]
    fn kernel_depends_only_on_weighted_distance() {
        // permute coordinates together with lengthscales
        let p = params(&[0.3, 1.5, 0.8], 1.7, KernelFamily::SquaredExponential);
        let pp = params(&[0.8, 0.3, 1.5], 1.7, KernelFamily::SquaredExponential);
        let x = [0.2, 0.5, 0.9];
        let y = [0.7, 0.1, 0.4];
        let xp = [0.9, 0.2, 0.5];
        let yp = [0.4, 0.7, 0.1];
        assert_relative_eq!(
            kernel_eval(&x, &y, &p).unwrap(),
            kernel_eval(&xp, &yp, &pp).unwrap(),
            max_relative = 1e-14
        );
    }

    #[test]
    fn grad_zero_at_coincident_points() {
        let p = params(&[0.4, 0.9], 1.0, KernelFamily::Matern52);
        let x = [0.3, 0.3];
        assert_eq!(kernel_grad_x(&x, &x, &p).unwrap(), vec![0.0, 0.0]);
    }

    #[test]
    fn grad_matches_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        for family in [KernelFamily::Matern52, KernelFamily::SquaredExponential] {
            for _ in 0..50 {
                let d = rng.random_range(1..5);
                let ls: Vec<f64> = (0..d).map(|_| rng.random_range(0.2..2.0)).collect();
                let p = params(&ls, rng.random_range(0.5..2.0), family);
                let x: Vec<f64> = (0..d).map(|_| rng.random_range(0.0..1.0)).collect();
                let y: Vec<f64> = (0..d).map(|_| rng.random_range(0.0..1.0)).collect();
                let g = kernel_grad_x(&x, &y, &p).unwrap();
                let h = 1e-6;
                for j in 0..d {
                    let mut xp = x.clone();
                    let mut xm = x.clone();
                    xp[j] += h;
                    xm[j] -= h;
                    let fd = (kernel_eval(&xp, &y, &p).unwrap()
                        - kernel_eval(&xm, &y, &p).unwrap())
                        / (2.0 * h);
                    let denom = fd.abs().max(g[j].abs()).max(1e-6);
                    assert!(
                        (g[j] - fd).abs() / denom <= 1e-5,
                        "family {family:?} component {j}: analytic {} vs fd {fd}",
                        g[j]
                    );
                }
            }
        }
    }

    #[test]
    fn grad_antisymmetric_under_argument_swap() {
        let p = params(&[0.6, 1.1], 1.4, KernelFamily::Matern52);
        let x = [0.2, 0.8];
        let y = [0.9, 0.1];
        let g1 = kernel_grad_x(&x, &y, &p).unwrap();
        let g2 = kernel_grad_x(&y, &x, &p).unwrap();
        for j in 0..2 {
            assert_relative_eq!(g1[j], -g2[j], max_relative = 1e-14);
        }
    }

    #[test]
    fn sup_profile_deriv_constants() {
        let se = sup_abs_profile_deriv(KernelFamily::SquaredExponential);
        assert!((se - 0.6065306597126334).abs() < 1e-8, "got {se}");
        let m = sup_abs_profile_deriv(KernelFamily::Matern52);
        // max of (5/3) r (1 + sqrt5 r) e^{-sqrt5 r} at r = (sqrt5 + 5) / 10
        assert!((m - 0.6260707807255188).abs() < 1e-8, "got {m}");
    }

    #[test]
    fn bound_halves_when_lengthscale_doubles() {
        let p1 = params(&[0.5, 1.0], 2.0, KernelFamily::Matern52);
        let p2 = params(&[1.0, 2.0], 2.0, KernelFamily::Matern52);
        let b1 = coordinate_bound(&p1);
        let b2 = coordinate_bound(&p2);
        for j in 0..2 {
            assert_relative_eq!(b2[j], 0.5 * b1[j], max_relative = 1e-12);
        }
    }

    #[test]
    fn bound_dominates_gradient_on_random_pairs() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for family in [KernelFamily::Matern52, KernelFamily::SquaredExponential] {
            let ls: Vec<f64> = (0..4).map(|_| rng.random_range(0.1..3.0)).collect();
            let p = params(&ls, 1.8, family);
            let bound = coordinate_bound(&p);
            for _ in 0..500 {
                let x: Vec<f64> = (0..4).map(|_| rng.random_range(0.0..1.0)).collect();
                let y: Vec<f64> = (0..4).map(|_| rng.random_range(0.0..1.0)).collect();
                let g = kernel_grad_x(&x, &y, &p).unwrap();
                for j in 0..4 {
                    assert!(g[j].abs() <= bound[j]);
                }
            }
        }
    }

    #[test]
    fn gram_matrix_nearly_psd() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let p = params(&[0.4, 0.9, 1.5], 2.0, KernelFamily::Matern52);
        let n = 20;
        let pts: Vec<Vec<f64>> = (0..n)
            .map(|_| (0..3).map(|_| rng.random_range(0.0..1.0)).collect())
            .collect();
        let mut k = nalgebra::DMatrix::zeros(n, n);
        for i in 0..n {
            for j in 0..n {
                k[(i, j)] = kernel_eval(&pts[i], &pts[j], &p).unwrap();
            }
        }
        let eig = k.symmetric_eigenvalues();
        let min = eig.iter().cloned().fold(f64::INFINITY, f64::min);
        assert!(min >= -1e-8 * p.signal_variance, "min eigenvalue {min}");
    }

    #[test]
    fn log_prior_outside_tophat_is_neg_inf() {
        let p = params(&[1.0], 1e5, KernelFamily::Matern52);
        let lp = log_prior(&p, &NoiseModel::new(0.01), &SaasPriors::new(0.1).unwrap());
        assert_eq!(lp, f64::NEG_INFINITY);
    }

    #[test]
    fn half_cauchy_at_zero() {
        assert_relative_eq!(
            log_half_cauchy(0.0, 1.0),
            (2.0 / std::f64::consts::PI).ln(),
            max_relative = 1e-14
        );
        assert_relative_eq!(log_half_cauchy(0.0, 1.0), -0.4515827052894549, max_relative = 1e-12);
    }

    #[test]
    fn log_prior_grad_matches_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(17);
        for _ in 0..20 {
            let d = rng.random_range(1..4);
            let ls: Vec<f64> = (0..d).map(|_| rng.random_range(0.2..3.0)).collect();
            let s = rng.random_range(0.5..2.0);
            let sigma2 = rng.random_range(1e-4..0.1f64);
            let tau = rng.random_range(0.05..0.5);
            let p = params(&ls, s, KernelFamily::Matern52);
            let noise = NoiseModel::new(sigma2);
            let priors = SaasPriors::new(tau).unwrap();
            let g = log_prior_grad(&p, &noise, &priors);
            let h: f64 = 1e-6;
            // lengthscale components
            for j in 0..d {
                let mut lp = ls.clone();
                let mut lm = ls.clone();
                lp[j] *= h.exp();
                lm[j] *= (-h).exp();
                let fp = log_prior(&params(&lp, s, KernelFamily::Matern52), &noise, &priors);
                let fm = log_prior(&params(&lm, s, KernelFamily::Matern52), &noise, &priors);
                let fd = (fp - fm) / (2.0 * h);
                let denom = fd.abs().max(g[j].abs()).max(1e-6);
                assert!((g[j] - fd).abs() / denom <= 1e-5);
            }
            // noise component
            let np = NoiseModel::new(sigma2 * h.exp());
            let nm = NoiseModel::new(sigma2 * (-h).exp());
            let fd = (log_prior(&p, &np, &priors) - log_prior(&p, &nm, &priors)) / (2.0 * h);
            let denom = fd.abs().max(g[d].abs()).max(1e-6);
            assert!((g[d] - fd).abs() / denom <= 1e-5);
        }
    }

    #[test]
    fn noise_model_enforces_floor() {
        assert_eq!(NoiseModel::new(0.0).variance(), NOISE_FLOOR);
        assert_eq!(NoiseModel::new(1e-3).variance(), 1e-3);
    }
}
