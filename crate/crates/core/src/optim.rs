//! Unconstrained minimizers shared by the model fits.
//!
//! All minimizers stop when the gradient max-norm falls below `grad_tol`.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct OptimOptions {
    pub grad_tol: f64,
    pub max_iter: usize,
}

impl Default for OptimOptions {
    fn default() -> Self {
        OptimOptions {
            grad_tol: 1e-6,
            max_iter: 500,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct OptimResult {
    pub x: Vec<f64>,
    pub f: f64,
    pub grad: Vec<f64>,
    pub iterations: usize,
    pub converged: bool,
}

impl OptimResult {
    pub fn grad_max_norm(&self) -> f64 {
        max_norm(&self.grad)
    }
}

pub fn max_norm(v: &[f64]) -> f64 {
    v.iter().fold(0.0_f64, |m, x| m.max(x.abs()))
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

const C1: f64 = 1e-4;
const C2: f64 = 0.9;

struct Trial {
    alpha: f64,
    f: f64,
    g: Vec<f64>,
    dphi: f64,
}

/// Strong-Wolfe line search (bracketing + zoom with cubic interpolation).
///
/// Also accepts a step satisfying the curvature condition whose function
/// value is within rounding of `f0`, so that fits can reach tight gradient
/// tolerances where function differences drop below machine precision.
fn wolfe_search<F>(fg: &mut F, x: &[f64], p: &[f64], f0: f64, dphi0: f64) -> Option<Trial>
where
    F: FnMut(&[f64], &mut [f64]) -> f64,
{
    let n = x.len();
    let mut xt = vec![0.0; n];
    let mut eval = |alpha: f64| -> Trial {
        for i in 0..n {
            xt[i] = x[i] + alpha * p[i];
        }
        let mut g = vec![0.0; n];
        let mut f = fg(&xt, &mut g);
        if !f.is_finite() || g.iter().any(|v| !v.is_finite()) {
            f = f64::INFINITY;
        }
        let dphi = dot(&g, p);
        Trial { alpha, f, g, dphi }
    };
    let slack = 1e-12 * (1.0 + f0.abs());
    let armijo = |t: &Trial| t.f <= f0 + C1 * t.alpha * dphi0;
    let curvature = |t: &Trial| t.dphi.abs() <= -C2 * dphi0;
    let near_flat = |t: &Trial| t.f <= f0 + slack && curvature(t);

    let mut prev = Trial {
        alpha: 0.0,
        f: f0,
        g: Vec::new(),
        dphi: dphi0,
    };
    let mut alpha = 1.0;
    for i in 0..40 {
        let cur = eval(alpha);
        if !armijo(&cur) || (i > 0 && cur.f >= prev.f) {
            if near_flat(&cur) {
                return Some(cur);
            }
            return zoom(&mut eval, prev, cur, f0, dphi0, slack);
        }
        if curvature(&cur) {
            return Some(cur);
        }
        if cur.dphi >= 0.0 {
            return zoom(&mut eval, cur, prev, f0, dphi0, slack);
        }
        prev = cur;
        alpha *= 2.0;
    }
    Some(prev).filter(|t| t.alpha > 0.0)
}

fn zoom<E>(
    eval: &mut E,
    mut lo: Trial,
    mut hi: Trial,
    f0: f64,
    dphi0: f64,
    slack: f64,
) -> Option<Trial>
where
    E: FnMut(f64) -> Trial,
{
    for _ in 0..50 {
        let (a, b) = (lo.alpha, hi.alpha);
        let width = (b - a).abs();
        if width < 1e-16 * a.abs().max(1.0) {
            break;
        }
        let mut alpha = cubic_min(&lo, &hi).unwrap_or(0.5 * (a + b));
        let (left, right) = (a.min(b), a.max(b));
        if !(alpha > left + 0.1 * width && alpha < right - 0.1 * width) {
            alpha = 0.5 * (a + b);
        }
        let t = eval(alpha);
        if t.f > f0 + C1 * t.alpha * dphi0 || t.f >= lo.f {
            if t.f <= f0 + slack && t.dphi.abs() <= -C2 * dphi0 {
                return Some(t);
            }
            hi = t;
        } else {
            if t.dphi.abs() <= -C2 * dphi0 {
                return Some(t);
            }
            if t.dphi * (hi.alpha - lo.alpha) >= 0.0 {
                hi = lo;
            }
            lo = t;
        }
    }
    (lo.alpha > 0.0 && lo.f < f0).then_some(lo)
}

fn cubic_min(a: &Trial, b: &Trial) -> Option<f64> {
    if !a.f.is_finite() || !b.f.is_finite() {
        return None;
    }
    let d1 = a.dphi + b.dphi - 3.0 * (a.f - b.f) / (a.alpha - b.alpha);
    let disc = d1 * d1 - a.dphi * b.dphi;
    if disc < 0.0 {
        return None;
    }
    let d2 = (b.alpha - a.alpha).signum() * disc.sqrt();
    let denom = b.dphi - a.dphi + 2.0 * d2;
    if denom == 0.0 {
        return None;
    }
    let x = b.alpha - (b.alpha - a.alpha) * (b.dphi + d2 - d1) / denom;
    x.is_finite().then_some(x)
}

/// BFGS on the inverse Hessian. `fg` returns the objective and writes the
/// gradient into its second argument.
pub fn bfgs<F>(mut fg: F, x0: &[f64], opts: &OptimOptions) -> OptimResult
where
    F: FnMut(&[f64], &mut [f64]) -> f64,
{
    let n = x0.len();
    let mut x = x0.to_vec();
    let mut g = vec![0.0; n];
    let mut f = fg(&x, &mut g);
    let mut h = DMatrix::<f64>::identity(n, n);
    let mut fresh = true;
    let mut iterations = 0;
    while iterations < opts.max_iter {
        if max_norm(&g) < opts.grad_tol {
            return OptimResult {
                x,
                f,
                grad: g,
                iterations,
                converged: true,
            };
        }
        iterations += 1;
        let gv = DVector::from_column_slice(&g);
        let mut p: Vec<f64> = (-(&h * &gv)).iter().copied().collect();
        let mut dphi0 = dot(&p, &g);
        if dphi0 >= 0.0 {
            h = DMatrix::identity(n, n);
            fresh = true;
            p = g.iter().map(|v| -v).collect();
            dphi0 = dot(&p, &g);
        }
        let trial = match wolfe_search(&mut fg, &x, &p, f, dphi0) {
            Some(t) => t,
            None if !fresh => {
                h = DMatrix::identity(n, n);
                fresh = true;
                continue;
            }
            None => break,
        };
        let s: Vec<f64> = p.iter().map(|v| v * trial.alpha).collect();
        let y: Vec<f64> = trial.g.iter().zip(&g).map(|(a, b)| a - b).collect();
        let sy = dot(&s, &y);
        for i in 0..n {
            x[i] += s[i];
        }
        f = trial.f;
        g = trial.g;
        if sy > 1e-12 * dot(&s, &s).sqrt() * dot(&y, &y).sqrt() {
            let sv = DVector::from_column_slice(&s);
            let yv = DVector::from_column_slice(&y);
            if fresh {
                h *= sy / dot(&y, &y);
                fresh = false;
            }
            let rho = 1.0 / sy;
            let hy = &h * &yv;
            let yhy = yv.dot(&hy);
            // H+ = H - rho (H y s' + s y' H) + (rho^2 y'Hy + rho) s s'
            h -= (&hy * sv.transpose() + &sv * hy.transpose()) * rho;
            h += (&sv * sv.transpose()) * (rho * rho * yhy + rho);
        }
    }
    let converged = max_norm(&g) < opts.grad_tol;
    OptimResult {
        x,
        f,
        grad: g,
        iterations,
        converged,
    }
}

/// Damped Newton with backtracking and Levenberg-style regularization when
/// the Hessian is not positive definite.
pub fn newton<F, H>(mut fg: F, mut hess: H, x0: &[f64], opts: &OptimOptions) -> OptimResult
where
    F: FnMut(&[f64], &mut [f64]) -> f64,
    H: FnMut(&[f64]) -> DMatrix<f64>,
{
    let n = x0.len();
    let mut x = x0.to_vec();
    let mut g = vec![0.0; n];
    let mut f = fg(&x, &mut g);
    let mut iterations = 0;
    while iterations < opts.max_iter && max_norm(&g) >= opts.grad_tol {
        iterations += 1;
        let hm = hess(&x);
        let gv = DVector::from_column_slice(&g);
        let mut step = None;
        let mut lambda = 0.0;
        let scale = (0..n).map(|i| hm[(i, i)].abs()).fold(1e-8_f64, f64::max);
        for _ in 0..30 {
            let mut a = hm.clone();
            for i in 0..n {
                a[(i, i)] += lambda;
            }
            if let Some(ch) = a.cholesky() {
                step = Some(-ch.solve(&gv));
                break;
            }
            lambda = if lambda == 0.0 { 1e-8 * scale } else { lambda * 10.0 };
        }
        let p: Vec<f64> = match step {
            Some(s) => s.iter().copied().collect(),
            None => g.iter().map(|v| -v).collect(),
        };
        let dphi0 = dot(&p, &g);
        let slack = 1e-12 * (1.0 + f.abs());
        let mut alpha = 1.0;
        let mut accepted = false;
        let mut xt = vec![0.0; n];
        let mut gt = vec![0.0; n];
        for _ in 0..60 {
            for i in 0..n {
                xt[i] = x[i] + alpha * p[i];
            }
            let ft = fg(&xt, &mut gt);
            let ok = ft.is_finite()
                && (ft <= f + C1 * alpha * dphi0
                    || (ft <= f + slack && max_norm(&gt) < max_norm(&g)));
            if ok {
                x.copy_from_slice(&xt);
                g.copy_from_slice(&gt);
                f = ft;
                accepted = true;
                break;
            }
            alpha *= 0.5;
        }
        if !accepted {
            break;
        }
    }
    let converged = max_norm(&g) < opts.grad_tol;
    OptimResult {
        x,
        f,
        grad: g,
        iterations,
        converged,
    }
}

/// Nelder-Mead simplex minimization for small derivative-free problems.
pub fn nelder_mead<F>(mut f: F, x0: &[f64], step: f64, f_tol: f64, max_evals: usize) -> (Vec<f64>, f64)
where
    F: FnMut(&[f64]) -> f64,
{
    let n = x0.len();
    let mut evals = 0;
    let mut call = |x: &[f64], evals: &mut usize| {
        *evals += 1;
        let v = f(x);
        if v.is_finite() {
            v
        } else {
            f64::INFINITY
        }
    };
    let mut simplex: Vec<(Vec<f64>, f64)> = Vec::with_capacity(n + 1);
    let v0 = call(x0, &mut evals);
    simplex.push((x0.to_vec(), v0));
    for i in 0..n {
        let mut x = x0.to_vec();
        x[i] += step;
        let v = call(&x, &mut evals);
        simplex.push((x, v));
    }
    while evals < max_evals {
        simplex.sort_by(|a, b| a.1.total_cmp(&b.1));
        if (simplex[n].1 - simplex[0].1).abs() <= f_tol * (1.0 + simplex[0].1.abs()) {
            break;
        }
        let centroid: Vec<f64> = (0..n)
            .map(|j| simplex[..n].iter().map(|(x, _)| x[j]).sum::<f64>() / n as f64)
            .collect();
        let along = |t: f64| -> Vec<f64> {
            (0..n)
                .map(|j| centroid[j] + t * (simplex[n].0[j] - centroid[j]))
                .collect()
        };
        let xr = along(-1.0);
        let fr = call(&xr, &mut evals);
        if fr < simplex[0].1 {
            let xe = along(-2.0);
            let fe = call(&xe, &mut evals);
            simplex[n] = if fe < fr { (xe, fe) } else { (xr, fr) };
        } else if fr < simplex[n - 1].1 {
            simplex[n] = (xr, fr);
        } else {
            let (xc, fc) = if fr < simplex[n].1 {
                let xc = along(-0.5);
                let fc = call(&xc, &mut evals);
                (xc, fc)
            } else {
                let xc = along(0.5);
                let fc = call(&xc, &mut evals);
                (xc, fc)
            };
            if fc < simplex[n].1.min(fr) {
                simplex[n] = (xc, fc);
            } else {
                let best = simplex[0].0.clone();
                for (x, v) in simplex.iter_mut().skip(1) {
                    for j in 0..n {
                        x[j] = best[j] + 0.5 * (x[j] - best[j]);
                    }
                    *v = call(x, &mut evals);
                }
            }
        }
    }
    simplex.sort_by(|a, b| a.1.total_cmp(&b.1));
    let (x, v) = simplex.swap_remove(0);
    (x, v)
}

/// Golden-section maximization of a unimodal function on `[a, b]`.
pub fn golden_max<F: FnMut(f64) -> f64>(mut f: F, mut a: f64, mut b: f64, tol: f64) -> f64 {
    let inv_phi = (5f64.sqrt() - 1.0) / 2.0;
    let mut c = b - inv_phi * (b - a);
    let mut d = a + inv_phi * (b - a);
    let mut fc = f(c);
    let mut fd = f(d);
    while (b - a).abs() > tol {
        if fc >= fd {
            b = d;
            d = c;
            fd = fc;
            c = b - inv_phi * (b - a);
            fc = f(c);
        } else {
            a = c;
            c = d;
            fc = fd;
            d = a + inv_phi * (b - a);
            fd = f(d);
        }
    }
    0.5 * (a + b)
}

/// Central-difference Jacobian of a gradient function (a numerical Hessian),
/// symmetrized.
pub fn fd_hessian<G>(mut grad: G, x: &[f64], step: f64) -> DMatrix<f64>
where
    G: FnMut(&[f64], &mut [f64]),
{
    let n = x.len();
    let mut h = DMatrix::zeros(n, n);
    let mut xp = x.to_vec();
    let mut gp = vec![0.0; n];
    let mut gm = vec![0.0; n];
    for j in 0..n {
        let e = step * x[j].abs().max(1.0);
        xp[j] = x[j] + e;
        grad(&xp, &mut gp);
        xp[j] = x[j] - e;
        grad(&xp, &mut gm);
        xp[j] = x[j];
        for i in 0..n {
            h[(i, j)] = (gp[i] - gm[i]) / (2.0 * e);
        }
    }
    (&h + h.transpose()) * 0.5
}

#[cfg(test)]
mod tests {
    use super::*;

    fn rosenbrock(x: &[f64], g: &mut [f64]) -> f64 {
        let (a, b) = (x[0], x[1]);
        g[0] = -2.0 * (1.0 - a) - 400.0 * a * (b - a * a);
        g[1] = 200.0 * (b - a * a);
        (1.0 - a).powi(2) + 100.0 * (b - a * a).powi(2)
    }

    #[test]
    fn bfgs_solves_rosenbrock() {
        let r = bfgs(rosenbrock, &[-1.2, 1.0], &OptimOptions::default());
        assert!(r.converged, "{r:?}");
        assert!((r.x[0] - 1.0).abs() < 1e-5 && (r.x[1] - 1.0).abs() < 1e-5);
    }

    #[test]
    fn bfgs_quadratic_is_exact() {
        // f = 0.5 x'Ax - b'x
        let a = [[4.0, 1.0, 0.0], [1.0, 3.0, 0.5], [0.0, 0.5, 2.0]];
        let b = [1.0, -2.0, 0.5];
        let fg = |x: &[f64], g: &mut [f64]| {
            let mut f = 0.0;
            for i in 0..3 {
                let ax: f64 = (0..3).map(|j| a[i][j] * x[j]).sum();
                g[i] = ax - b[i];
                f += 0.5 * x[i] * ax - b[i] * x[i];
            }
            f
        };
        let r = bfgs(fg, &[0.0; 3], &OptimOptions::default());
        assert!(r.converged);
        let m = DMatrix::from_fn(3, 3, |i, j| a[i][j]);
        let sol = m.lu().solve(&DVector::from_column_slice(&b)).unwrap();
        for i in 0..3 {
            assert!((r.x[i] - sol[i]).abs() < 1e-6);
        }
    }

    #[test]
    fn newton_converges_on_convex_problem() {
        // f = sum exp(x_i) - 2 x_i, minimum at ln 2
        let fg = |x: &[f64], g: &mut [f64]| {
            let mut f = 0.0;
            for i in 0..x.len() {
                g[i] = x[i].exp() - 2.0;
                f += x[i].exp() - 2.0 * x[i];
            }
            f
        };
        let h = |x: &[f64]| DMatrix::from_diagonal(&DVector::from_iterator(x.len(), x.iter().map(|v| v.exp())));
        let r = newton(fg, h, &[3.0, -4.0], &OptimOptions::default());
        assert!(r.converged);
        assert!(r.x.iter().all(|v| (v - 2f64.ln()).abs() < 1e-8));
    }

    #[test]
    fn nelder_mead_finds_minimum() {
        let (x, _) = nelder_mead(
            |x| (x[0] - 1.0).powi(2) + 3.0 * (x[1] + 0.5).powi(2),
            &[0.0, 0.0],
            0.5,
            1e-14,
            2000,
        );
        assert!((x[0] - 1.0).abs() < 1e-4 && (x[1] + 0.5).abs() < 1e-4);
    }

    #[test]
    fn golden_section_max() {
        let x = golden_max(|t| -(t - 0.3).powi(2), 0.0, 1.0, 1e-10);
        assert!((x - 0.3).abs() < 1e-8);
    }
}
