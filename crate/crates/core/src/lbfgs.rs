//! Projected quasi-Newton ascent on a box.
//!
//! L-BFGS two-loop directions with Armijo backtracking; steps are clipped to
//! the bounds. Curvature pairs are only stored when they keep the inverse
//! Hessian approximation positive definite. Objective evaluations returning
//! non-finite values reject the step, so callers can signal numerical
//! failure with `-inf`.

const MEMORY: usize = 8;
const ARMIJO_C1: f64 = 1e-4;

pub struct AscentResult {
    pub x: Vec<f64>,
    pub value: f64,
    pub iterations: usize,
}

fn clip(x: &mut [f64], lower: &[f64], upper: &[f64]) {
    for j in 0..x.len() {
        x[j] = x[j].clamp(lower[j], upper[j]);
    }
}

/// Gradient with bound-blocked components zeroed out.
fn projected_gradient(x: &[f64], g: &[f64], lower: &[f64], upper: &[f64]) -> Vec<f64> {
    let eps = 1e-12;
    (0..x.len())
        .map(|j| {
            if (x[j] <= lower[j] + eps && g[j] < 0.0) || (x[j] >= upper[j] - eps && g[j] > 0.0) {
                0.0
            } else {
                g[j]
            }
        })
        .collect()
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn norm(a: &[f64]) -> f64 {
    dot(a, a).sqrt()
}

/// Maximizes `f` over the box from `x0`, using `grad` for ascent directions.
///
/// Stops when the projected gradient inf-norm drops below `grad_tol`, the
/// accepted step norm drops below `step_tol`, or after `max_iters` accepted
/// iterations. Either tolerance may be zero to disable it.
pub fn maximize_bounded(
    f: &mut dyn FnMut(&[f64]) -> f64,
    grad: &mut dyn FnMut(&[f64]) -> Vec<f64>,
    x0: &[f64],
    lower: &[f64],
    upper: &[f64],
    max_iters: usize,
    grad_tol: f64,
    step_tol: f64,
) -> AscentResult {
    let n = x0.len();
    let mut x = x0.to_vec();
    clip(&mut x, lower, upper);
    let mut fx = f(&x);
    if !fx.is_finite() {
        return AscentResult {
            x,
            value: fx,
            iterations: 0,
        };
    }
    let mut g = grad(&x);
    let mut s_hist: Vec<Vec<f64>> = Vec::new();
    let mut y_hist: Vec<Vec<f64>> = Vec::new();
    let mut iterations = 0;

    for _ in 0..max_iters {
        let pg = projected_gradient(&x, &g, lower, upper);
        let pg_inf = pg.iter().fold(0.0f64, |m, v| m.max(v.abs()));
        if grad_tol > 0.0 && pg_inf <= grad_tol {
            break;
        }
        if pg_inf == 0.0 {
            break;
        }

        // two-loop recursion (ascent: apply to the gradient directly)
        let mut d = g.clone();
        let k = s_hist.len();
        let mut alphas = vec![0.0; k];
        for i in (0..k).rev() {
            let rho = 1.0 / dot(&y_hist[i], &s_hist[i]);
            alphas[i] = rho * dot(&s_hist[i], &d);
            for j in 0..n {
                d[j] -= alphas[i] * y_hist[i][j];
            }
        }
        if k > 0 {
            let gamma = dot(&s_hist[k - 1], &y_hist[k - 1]) / dot(&y_hist[k - 1], &y_hist[k - 1]);
            for v in d.iter_mut() {
                *v *= gamma;
            }
        }
        for i in 0..k {
            let rho = 1.0 / dot(&y_hist[i], &s_hist[i]);
            let beta = rho * dot(&y_hist[i], &d);
            for j in 0..n {
                d[j] += s_hist[i][j] * (alphas[i] - beta);
            }
        }
        // require an ascent direction w.r.t. the projected gradient
        if dot(&d, &pg) <= 0.0 {
            d = pg.clone();
        }

        // backtracking line search with projection
        let mut alpha = 1.0;
        let mut accepted = false;
        let mut x_new = x.clone();
        let mut f_new = fx;
        while alpha >= 1e-14 {
            let mut cand = x.clone();
            for j in 0..n {
                cand[j] += alpha * d[j];
            }
            clip(&mut cand, lower, upper);
            let fc = f(&cand);
            let actual_step: Vec<f64> = (0..n).map(|j| cand[j] - x[j]).collect();
            if fc.is_finite() && fc >= fx + ARMIJO_C1 * dot(&g, &actual_step) && fc > fx {
                x_new = cand;
                f_new = fc;
                accepted = true;
                break;
            }
            alpha *= 0.5;
        }
        if !accepted {
            break;
        }
        iterations += 1;

        let g_new = grad(&x_new);
        let s: Vec<f64> = (0..n).map(|j| x_new[j] - x[j]).collect();
        // ascent on f == descent on -f, so curvature uses -(g_new - g)
        let y: Vec<f64> = (0..n).map(|j| g[j] - g_new[j]).collect();
        let sy = dot(&s, &y);
        if sy > 1e-12 * norm(&s) * norm(&y) {
            s_hist.push(s.clone());
            y_hist.push(y);
            if s_hist.len() > MEMORY {
                s_hist.remove(0);
                y_hist.remove(0);
            }
        }
        let step_norm = norm(&s);
        x = x_new;
        fx = f_new;
        g = g_new;
        if step_tol > 0.0 && step_norm <= step_tol {
            break;
        }
    }

    AscentResult {
        x,
        value: fx,
        iterations,
    }
}
