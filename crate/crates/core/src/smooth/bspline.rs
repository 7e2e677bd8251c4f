//! B-spline bases on equally spaced knots and difference penalties.

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BSplineBasis {
    /// Full knot sequence, `n_basis + degree + 1` values.
    pub knots: Vec<f64>,
    pub degree: usize,
    /// Range covered by the basis; outside it the spline is continued
    /// linearly.
    pub lower: f64,
    pub upper: f64,
}

impl BSplineBasis {
    /// `n_basis` functions of the given degree on `[lower, upper]`. The
    /// degree is lowered when there are too few functions for it.
    pub fn uniform(lower: f64, upper: f64, n_basis: usize, degree: usize) -> Self {
        assert!(n_basis >= 2, "a basis needs at least two functions");
        assert!(upper > lower, "empty basis range");
        let degree = degree.min(n_basis - 1);
        let intervals = n_basis - degree;
        let h = (upper - lower) / intervals as f64;
        let knots = (0..n_basis + degree + 1)
            .map(|j| lower + (j as f64 - degree as f64) * h)
            .collect();
        BSplineBasis {
            knots,
            degree,
            lower,
            upper,
        }
    }

    pub fn n_basis(&self) -> usize {
        self.knots.len() - self.degree - 1
    }

    fn span(&self, x: f64) -> usize {
        let n = self.n_basis();
        let p = self.degree;
        if x >= self.knots[n] {
            return n - 1;
        }
        // knots[p..=n] cover [lower, upper]
        let mut lo = p;
        let mut hi = n;
        while hi - lo > 1 {
            let mid = (lo + hi) / 2;
            if x < self.knots[mid] {
                hi = mid;
            } else {
                lo = mid;
            }
        }
        lo
    }

    /// Non-zero functions of degree `p` at `x` in span `i`: indices
    /// `i - p ..= i`.
    fn basis_funs(&self, i: usize, x: f64, p: usize) -> Vec<f64> {
        let t = &self.knots;
        let mut n = vec![0.0; p + 1];
        let mut left = vec![0.0; p + 1];
        let mut right = vec![0.0; p + 1];
        n[0] = 1.0;
        for j in 1..=p {
            left[j] = x - t[i + 1 - j];
            right[j] = t[i + j] - x;
            let mut saved = 0.0;
            for r in 0..j {
                let tmp = n[r] / (right[r + 1] + left[j - r]);
                n[r] = saved + right[r + 1] * tmp;
                saved = left[j - r] * tmp;
            }
            n[j] = saved;
        }
        n
    }

    fn value_inside(&self, x: f64, out: &mut [f64]) {
        let p = self.degree;
        let i = self.span(x);
        let n = self.basis_funs(i, x, p);
        out[i - p..=i].copy_from_slice(&n);
    }

    fn derivative_inside(&self, x: f64, out: &mut [f64]) {
        let p = self.degree;
        if p == 0 {
            return;
        }
        let t = &self.knots;
        let i = self.span(x);
        // degree p-1 functions with indices i-p+1 ..= i
        let lower = self.basis_funs(i, x, p - 1);
        let get = |j: usize| -> f64 {
            if j + p < i + 1 || j > i {
                0.0
            } else {
                lower[j + p - 1 - i]
            }
        };
        for j in i - p..=i {
            let a = get(j) / (t[j + p] - t[j]);
            let b = get(j + 1) / (t[j + p + 1] - t[j + 1]);
            out[j] = p as f64 * (a - b);
        }
    }

    /// Basis values at `x`, extrapolated linearly beyond the range.
    pub fn eval_into(&self, x: f64, out: &mut [f64]) {
        out.iter_mut().for_each(|v| *v = 0.0);
        let edge = if x < self.lower {
            self.lower
        } else if x > self.upper {
            self.upper
        } else {
            self.value_inside(x, out);
            return;
        };
        self.value_inside(edge, out);
        let mut d = vec![0.0; out.len()];
        self.derivative_inside(edge, &mut d);
        for (o, di) in out.iter_mut().zip(d) {
            *o += (x - edge) * di;
        }
    }

    pub fn eval(&self, x: f64) -> Vec<f64> {
        let mut v = vec![0.0; self.n_basis()];
        self.eval_into(x, &mut v);
        v
    }

    /// First derivatives of the basis functions (inside the range).
    pub fn derivative(&self, x: f64) -> Vec<f64> {
        let mut v = vec![0.0; self.n_basis()];
        self.derivative_inside(x.clamp(self.lower, self.upper), &mut v);
        v
    }
}

/// `DᵀD` for the `order`-th difference operator on `n` coefficients.
pub fn difference_penalty(n: usize, order: usize) -> DMatrix<f64> {
    if n <= order {
        return DMatrix::zeros(n, n);
    }
    let mut d = DMatrix::<f64>::identity(n, n);
    for _ in 0..order {
        let r = d.nrows();
        d = DMatrix::from_fn(r - 1, n, |i, j| d[(i + 1, j)] - d[(i, j)]);
    }
    d.transpose() * d
}
