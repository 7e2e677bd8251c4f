//! Additive smooth functions of feature differences (AFD), fitted by
//! penalized likelihood under the ordinal draw rule with the smoothing
//! parameter chosen by generalized cross-validation.

mod bspline;

use std::fs;
use std::path::Path;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

pub use bspline::{difference_penalty, BSplineBasis};

use crate::bt::{ordinal_term, OrdinalTerm};
use crate::error::{Error, Result};
use crate::features::{is_numeric_feature, FeaturedMatch};
use crate::match_data::Outcome;
use crate::optim::{max_norm, newton, OptimOptions};
use crate::prediction::Prediction;

/// A requested smooth: `f_k(x_ik - x_jk)`, or `g_k(x_ik - x_jk, m)` when it
/// interacts with the home team's matches played.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct TermSpec {
    pub feature_id: u8,
    #[serde(default)]
    pub interacts_with_m: bool,
}

impl TermSpec {
    pub fn univariate(feature_id: u8) -> Self {
        TermSpec {
            feature_id,
            interacts_with_m: false,
        }
    }

    pub fn with_m(feature_id: u8) -> Self {
        TermSpec {
            feature_id,
            interacts_with_m: true,
        }
    }

    /// Terms for a feature list, the listed `varying` ids interacting with
    /// matches played.
    pub fn from_ids(features: &[u8], varying: &[u8]) -> Vec<TermSpec> {
        features
            .iter()
            .map(|&k| TermSpec {
                feature_id: k,
                interacts_with_m: varying.contains(&k),
            })
            .collect()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct AfdConfig {
    pub n_basis_x: usize,
    pub n_basis_m: usize,
    pub degree: usize,
    pub k_grid: Vec<f64>,
    pub max_iter: usize,
    pub grad_tol: f64,
}

impl Default for AfdConfig {
    fn default() -> Self {
        AfdConfig {
            n_basis_x: 10,
            n_basis_m: 5,
            degree: 3,
            k_grid: log_grid(1e-4, 1e4, 17),
            max_iter: 200,
            grad_tol: 1e-6,
        }
    }
}

/// `n` log-spaced values from `lo` to `hi`.
pub fn log_grid(lo: f64, hi: f64, n: usize) -> Vec<f64> {
    if n == 1 {
        return vec![lo];
    }
    let (a, b) = (lo.log10(), hi.log10());
    (0..n)
        .map(|i| 10f64.powf(a + (b - a) * i as f64 / (n - 1) as f64))
        .collect()
}

/// One fitted (or to-be-fitted) smooth.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SmoothTerm {
    pub feature_id: u8,
    pub interacts_with_m: bool,
    pub basis_x: BSplineBasis,
    #[serde(default)]
    pub basis_m: Option<BSplineBasis>,
    /// Coefficients over the full (unconstrained) basis, `x` index major.
    pub coefficients: Vec<f64>,
}

impl SmoothTerm {
    pub fn dim(&self) -> usize {
        self.basis_x.n_basis() * self.basis_m.as_ref().map_or(1, BSplineBasis::n_basis)
    }

    /// Basis row at a feature difference and matches-played count.
    pub fn row(&self, diff: f64, m: f64) -> Vec<f64> {
        let bx = self.basis_x.eval(diff);
        match &self.basis_m {
            None => bx,
            Some(bm) => {
                let vm = bm.eval(m);
                bx.iter()
                    .flat_map(|a| vm.iter().map(move |b| a * b))
                    .collect()
            }
        }
    }

    pub fn value(&self, diff: f64, m: f64) -> f64 {
        self.row(diff, m)
            .iter()
            .zip(&self.coefficients)
            .map(|(r, c)| r * c)
            .sum()
    }

    /// Second-difference penalty on the full basis; for tensor terms
    /// `P_x ⊗ I + I ⊗ P_m`.
    pub fn penalty(&self) -> DMatrix<f64> {
        let px = difference_penalty(self.basis_x.n_basis(), 2);
        match &self.basis_m {
            None => px,
            Some(bm) => {
                let km = bm.n_basis();
                let pm = difference_penalty(km, 2);
                let ix = DMatrix::<f64>::identity(self.basis_x.n_basis(), self.basis_x.n_basis());
                let im = DMatrix::<f64>::identity(km, km);
                px.kronecker(&im) + ix.kronecker(&pm)
            }
        }
    }

    /// Linear constraints making the smooth vanish at a zero difference
    /// (for every `m` in tensor terms).
    fn constraint(&self) -> DMatrix<f64> {
        let b0 = self.basis_x.eval(0.0);
        match &self.basis_m {
            None => DMatrix::from_row_slice(1, b0.len(), &b0),
            Some(bm) => {
                let km = bm.n_basis();
                DMatrix::from_fn(km, self.dim(), |r, c| {
                    if c % km == r {
                        b0[c / km]
                    } else {
                        0.0
                    }
                })
            }
        }
    }
}

/// Orthonormal basis of the null space of `a` (columns).
fn null_space(a: &DMatrix<f64>) -> DMatrix<f64> {
    let p = a.ncols();
    let ata = a.transpose() * a;
    let eig = ata.symmetric_eigen();
    let scale = eig.eigenvalues.amax().max(1e-300);
    let mut idx: Vec<usize> = (0..p)
        .filter(|&i| eig.eigenvalues[i].abs() <= 1e-10 * scale)
        .collect();
    idx.sort_unstable();
    let mut z = DMatrix::zeros(p, idx.len());
    for (c, &i) in idx.iter().enumerate() {
        let mut v = eig.eigenvectors.column(i).into_owned();
        // fix the sign so the basis is reproducible
        let piv = v.iamax();
        if v[piv] < 0.0 {
            v = -v;
        }
        z.set_column(c, &v);
    }
    z
}

fn feature_diff(m: &FeaturedMatch, k: u8) -> f64 {
    m.features.home.numeric(k).unwrap_or(0.0) - m.features.away.numeric(k).unwrap_or(0.0)
}

fn home_played(m: &FeaturedMatch) -> f64 {
    f64::from(m.features.home.matches_played)
}

/// Design matrix and penalty for the constrained coefficients.
#[derive(Debug, Clone)]
pub struct Design {
    pub terms: Vec<SmoothTerm>,
    /// Features dropped because their difference never varied.
    pub dropped: Vec<u8>,
    pub warnings: Vec<String>,
    /// `n × q` design over the constrained coefficients.
    pub x: DMatrix<f64>,
    /// Block-diagonal `q × q` penalty.
    pub penalty: DMatrix<f64>,
    /// Offset and width of each term's block.
    pub blocks: Vec<(usize, usize)>,
    /// Per-term map from constrained to full coefficients.
    pub z: Vec<DMatrix<f64>>,
    pub outcomes: Vec<Outcome>,
}

impl Design {
    pub fn n(&self) -> usize {
        self.outcomes.len()
    }

    /// Number of smooth coefficients (without the two thresholds).
    pub fn q(&self) -> usize {
        self.x.ncols()
    }

    /// Parameter count: smooth coefficients, `δ0`, `log(δ1 - δ0)`.
    pub fn dim(&self) -> usize {
        self.q() + 2
    }

    fn terms_at(&self, w: &[f64]) -> Vec<OrdinalTerm> {
        let q = self.q();
        let theta = DVector::from_column_slice(&w[..q]);
        let diff = &self.x * theta;
        let d0 = w[q];
        let d1 = d0 + w[q + 1].exp();
        self.outcomes
            .iter()
            .zip(diff.iter())
            .map(|(&o, &dv)| ordinal_term(o, d0 - dv, d1 - dv))
            .collect()
    }

    fn quad_penalty(&self, w: &[f64]) -> f64 {
        let theta = DVector::from_column_slice(&w[..self.q()]);
        theta.dot(&(&self.penalty * &theta))
    }

    /// Unpenalized log-likelihood at `w`.
    pub fn loglik(&self, w: &[f64]) -> f64 {
        self.terms_at(w).iter().map(|t| t.value).sum()
    }

    /// `ℓ(θ) - k θᵀPθ`.
    pub fn penalized_loglik(&self, w: &[f64], k: f64) -> f64 {
        self.loglik(w) - k * self.quad_penalty(w)
    }

    /// Analytic gradient of [`Design::penalized_loglik`].
    pub fn grad_penalized_loglik(&self, w: &[f64], k: f64) -> Vec<f64> {
        let q = self.q();
        let e = w[q + 1].exp();
        let terms = self.terms_at(w);
        // dℓ/dΔ = -(ℓ_a + ℓ_b)
        let r = DVector::from_iterator(self.n(), terms.iter().map(|t| -(t.d_a + t.d_b)));
        let mut g = self.x.tr_mul(&r);
        let theta = DVector::from_column_slice(&w[..q]);
        g -= (&self.penalty * theta) * (2.0 * k);
        let mut out: Vec<f64> = g.iter().copied().collect();
        out.push(terms.iter().map(|t| t.d_a + t.d_b).sum());
        out.push(terms.iter().map(|t| t.d_b * e).sum());
        out
    }

    /// Negative Hessian of the unpenalized log-likelihood (observed
    /// information).
    pub fn information(&self, w: &[f64]) -> DMatrix<f64> {
        let q = self.q();
        let e = w[q + 1].exp();
        let terms = self.terms_at(w);
        let n = self.n();
        // s = ℓ_aa + 2ℓ_ab + ℓ_bb is the second derivative along Δ
        let s: Vec<f64> = terms.iter().map(|t| t.d_aa + 2.0 * t.d_ab + t.d_bb).collect();
        let c: Vec<f64> = terms.iter().map(|t| e * (t.d_ab + t.d_bb)).collect();
        let mut wx = self.x.clone();
        for i in 0..n {
            wx.row_mut(i).scale_mut(-s[i]);
        }
        let hqq = self.x.tr_mul(&wx);
        let sx = self.x.tr_mul(&DVector::from_column_slice(&s));
        let cx = self.x.tr_mul(&DVector::from_column_slice(&c));
        let mut h = DMatrix::zeros(q + 2, q + 2);
        h.view_mut((0, 0), (q, q)).copy_from(&hqq);
        for j in 0..q {
            h[(j, q)] = sx[j];
            h[(q, j)] = sx[j];
            h[(j, q + 1)] = cx[j];
            h[(q + 1, j)] = cx[j];
        }
        h[(q, q)] = -s.iter().sum::<f64>();
        let cs: f64 = c.iter().sum();
        h[(q, q + 1)] = -cs;
        h[(q + 1, q)] = -cs;
        h[(q + 1, q + 1)] = -terms.iter().map(|t| t.d_bb * e * e + t.d_b * e).sum::<f64>();
        h
    }

    fn full_penalty(&self, k: f64) -> DMatrix<f64> {
        let q = self.q();
        let mut p = DMatrix::zeros(q + 2, q + 2);
        p.view_mut((0, 0), (q, q)).copy_from(&(&self.penalty * (2.0 * k)));
        p
    }
}

/// Builds the smooth terms on the training differences and the constrained
/// design.
pub fn build_design(data: &[&FeaturedMatch], specs: &[TermSpec], cfg: &AfdConfig) -> Result<Design> {
    let data: Vec<&FeaturedMatch> = data.iter().copied().filter(|m| m.score.is_some()).collect();
    if data.is_empty() {
        return Err(Error::Empty("training window"));
    }
    let n = data.len();
    let mut terms = Vec::new();
    let mut dropped = Vec::new();
    let mut warnings = Vec::new();
    for spec in specs {
        let k = spec.feature_id;
        if !is_numeric_feature(k) {
            return Err(Error::InvalidInput(format!("feature {k} is not numeric (1-13)")));
        }
        if terms.iter().any(|t: &SmoothTerm| t.feature_id == k) {
            return Err(Error::InvalidInput(format!("feature {k} listed twice")));
        }
        let diffs: Vec<f64> = data.iter().map(|m| feature_diff(m, k)).collect();
        let (bx, nx) = match basis_for(&diffs, cfg.n_basis_x, cfg.degree) {
            Some(b) => b,
            None => {
                warnings.push(format!("feature {k}: constant difference, term dropped"));
                dropped.push(k);
                continue;
            }
        };
        if nx < cfg.n_basis_x {
            warnings.push(format!(
                "feature {k}: {nx} distinct differences, basis reduced to {nx} functions"
            ));
        }
        let mut basis_m = None;
        if spec.interacts_with_m {
            let ms: Vec<f64> = data.iter().map(|m| home_played(m)).collect();
            match basis_for(&ms, cfg.n_basis_m, cfg.degree) {
                Some((bm, nm)) => {
                    if nm < cfg.n_basis_m {
                        warnings.push(format!(
                            "feature {k}: matches-played basis reduced to {nm} functions"
                        ));
                    }
                    basis_m = Some(bm);
                }
                None => warnings.push(format!(
                    "feature {k}: matches played is constant, interaction dropped"
                )),
            }
        }
        let mut term = SmoothTerm {
            feature_id: k,
            interacts_with_m: basis_m.is_some(),
            basis_x: bx,
            basis_m,
            coefficients: vec![],
        };
        term.coefficients = vec![0.0; term.dim()];
        terms.push(term);
    }
    if terms.is_empty() {
        return Err(Error::InvalidInput("no smooth term has a varying difference".into()));
    }
    let mut z = Vec::new();
    let mut blocks = Vec::new();
    let mut q = 0;
    for t in &terms {
        let zt = null_space(&t.constraint());
        blocks.push((q, zt.ncols()));
        q += zt.ncols();
        z.push(zt);
    }
    let mut x = DMatrix::zeros(n, q);
    let mut penalty = DMatrix::zeros(q, q);
    for (ti, t) in terms.iter().enumerate() {
        let (off, w) = blocks[ti];
        let zt = &z[ti];
        let mut full = DMatrix::zeros(n, t.dim());
        for (i, m) in data.iter().enumerate() {
            let r = t.row(feature_diff(m, t.feature_id), home_played(m));
            for (j, v) in r.into_iter().enumerate() {
                full[(i, j)] = v;
            }
        }
        x.view_mut((0, off), (n, w)).copy_from(&(full * zt));
        let pz = zt.transpose() * t.penalty() * zt;
        penalty.view_mut((off, off), (w, w)).copy_from(&pz);
    }
    let outcomes = data.iter().map(|m| m.outcome().expect("played")).collect();
    Ok(Design {
        terms,
        dropped,
        warnings,
        x,
        penalty,
        blocks,
        z,
        outcomes,
    })
}

/// Basis on the observed range, sized to the number of distinct values.
fn basis_for(values: &[f64], n_basis: usize, degree: usize) -> Option<(BSplineBasis, usize)> {
    let mut v: Vec<f64> = values.to_vec();
    v.sort_by(f64::total_cmp);
    v.dedup();
    if v.len() < 2 {
        return None;
    }
    let nb = n_basis.min(v.len()).max(2);
    Some((BSplineBasis::uniform(v[0], v[v.len() - 1], nb, degree), nb))
}

/// One point of the smoothing-parameter search.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GcvPoint {
    pub k: f64,
    pub gcv: f64,
    pub edf: f64,
    pub loglik: f64,
    pub penalized_loglik: f64,
    pub converged: bool,
    pub iterations: usize,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct AfdModel {
    pub terms: Vec<SmoothTerm>,
    pub dropped: Vec<u8>,
    pub delta0: f64,
    pub delta1: f64,
    /// Selected smoothing parameter.
    pub k: f64,
    /// Effective degrees of freedom of the whole fit (thresholds included)
    /// and per term.
    pub edf: f64,
    pub term_edf: Vec<f64>,
    pub loglik: f64,
    pub converged: bool,
    pub gcv_trace: Vec<GcvPoint>,
    pub warnings: Vec<String>,
    /// Bayesian posterior covariance of each term's full-basis
    /// coefficients.
    #[serde(skip)]
    term_covariance: Vec<DMatrix<f64>>,
}

impl AfdModel {
    /// Strength difference for a fixture.
    pub fn diff(&self, m: &FeaturedMatch) -> f64 {
        let mp = home_played(m);
        self.terms
            .iter()
            .map(|t| t.value(feature_diff(m, t.feature_id), mp))
            .sum()
    }

    pub fn probs(&self, m: &FeaturedMatch) -> [f64; 3] {
        crate::bt::probs_ordinal(self.diff(m), 0.0, self.delta0, self.delta1)
            .unwrap_or([1.0 / 3.0; 3])
    }

    /// Fitted value and pointwise standard error of a term.
    pub fn term_curve(&self, term: usize, diff: f64, m: f64) -> (f64, Option<f64>) {
        let t = &self.terms[term];
        let r = t.row(diff, m);
        let v = t.value(diff, m);
        let se = self.term_covariance.get(term).map(|c| {
            let rv = DVector::from_vec(r);
            rv.dot(&(c * &rv)).max(0.0).sqrt()
        });
        (v, se)
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    pub fn from_json(s: &str) -> Result<Self> {
        Ok(serde_json::from_str(s)?)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let p = path.as_ref();
        fs::write(p, self.to_json()?).map_err(|e| Error::io(p, e))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let p = path.as_ref();
        Self::from_json(&fs::read_to_string(p).map_err(|e| Error::io(p, e))?)
    }
}

struct KFit {
    w: Vec<f64>,
    point: GcvPoint,
    /// `(J + 2kP)⁻¹` and `J`.
    inv: Option<DMatrix<f64>>,
    info: DMatrix<f64>,
}

fn fit_at_k(design: &Design, k: f64, start: &[f64], cfg: &AfdConfig) -> KFit {
    let res = newton(
        |w, g| {
            let gr = design.grad_penalized_loglik(w, k);
            for (gi, v) in g.iter_mut().zip(gr) {
                *gi = -v;
            }
            let f = -design.penalized_loglik(w, k);
            if f.is_finite() {
                f
            } else {
                f64::INFINITY
            }
        },
        |w| design.information(w) + design.full_penalty(k),
        start,
        &OptimOptions {
            grad_tol: cfg.grad_tol,
            max_iter: cfg.max_iter,
        },
    );
    let info = design.information(&res.x);
    let a = &info + design.full_penalty(k);
    let inv = a.clone().cholesky().map(|c| c.inverse());
    let n = design.n() as f64;
    let ll = design.loglik(&res.x);
    let (edf, gcv) = match &inv {
        Some(ai) => {
            let edf = (ai * &info).trace();
            (edf, n * (-2.0 * ll) / (n - edf).powi(2))
        }
        None => (f64::NAN, f64::INFINITY),
    };
    KFit {
        point: GcvPoint {
            k,
            gcv,
            edf,
            loglik: ll,
            penalized_loglik: design.penalized_loglik(&res.x, k),
            converged: res.converged && max_norm(&res.grad) < cfg.grad_tol && inv.is_some(),
            iterations: res.iterations,
        },
        w: res.x,
        inv,
        info,
    }
}

/// Fits the model at a single smoothing parameter.
pub fn fit_fixed_k(design: &Design, k: f64, cfg: &AfdConfig) -> Result<AfdModel> {
    let start = initial(design);
    let f = fit_at_k(design, k, &start, cfg);
    Ok(assemble(design, f, vec![]))
}

fn initial(design: &Design) -> Vec<f64> {
    let mut w = vec![0.0; design.dim()];
    w[design.q()] = -0.5;
    w
}

fn assemble(design: &Design, f: KFit, trace: Vec<GcvPoint>) -> AfdModel {
    let q = design.q();
    let mut terms = design.terms.clone();
    let mut term_edf = Vec::new();
    let mut term_covariance = Vec::new();
    let fmat = f.inv.as_ref().map(|ai| ai * &f.info);
    for (ti, t) in terms.iter_mut().enumerate() {
        let (off, w) = design.blocks[ti];
        let zt = &design.z[ti];
        let theta = DVector::from_column_slice(&f.w[off..off + w]);
        t.coefficients = (zt * theta).iter().copied().collect();
        term_edf.push(
            fmat.as_ref()
                .map_or(f64::NAN, |m| (off..off + w).map(|i| m[(i, i)]).sum()),
        );
        if let Some(ai) = &f.inv {
            let block = ai.view((off, off), (w, w)).into_owned();
            term_covariance.push(zt * block * zt.transpose());
        }
    }
    let mut warnings = design.warnings.clone();
    if !f.point.converged {
        warnings.push(format!("fit at k = {} did not converge", f.point.k));
    }
    AfdModel {
        terms,
        dropped: design.dropped.clone(),
        delta0: f.w[q],
        delta1: f.w[q] + f.w[q + 1].exp(),
        k: f.point.k,
        edf: f.point.edf,
        term_edf,
        loglik: f.point.loglik,
        converged: f.point.converged,
        gcv_trace: trace,
        warnings,
        term_covariance,
    }
}

/// Fits over the smoothing grid (largest `k` first, warm-started) and
/// keeps the fit minimizing GCV.
pub fn fit_penalized(data: &[&FeaturedMatch], specs: &[TermSpec], cfg: &AfdConfig) -> Result<AfdModel> {
    if cfg.k_grid.is_empty() || cfg.k_grid.iter().any(|k| !(*k > 0.0)) {
        return Err(Error::InvalidInput("smoothing grid must be non-empty and positive".into()));
    }
    let design = build_design(data, specs, cfg)?;
    let mut grid = cfg.k_grid.clone();
    grid.sort_by(|a, b| b.total_cmp(a));
    let mut start = initial(&design);
    let mut fits = Vec::new();
    for &k in &grid {
        let f = fit_at_k(&design, k, &start, cfg);
        if f.w.iter().all(|v| v.is_finite()) {
            start = f.w.clone();
        }
        fits.push(f);
    }
    let mut trace: Vec<GcvPoint> = fits.iter().map(|f| f.point.clone()).collect();
    trace.sort_by(|a, b| a.k.total_cmp(&b.k));
    let best = fits
        .into_iter()
        .filter(|f| f.point.converged && f.point.gcv.is_finite())
        .min_by(|a, b| a.point.gcv.total_cmp(&b.point.gcv).then(b.point.k.total_cmp(&a.point.k)));
    match best {
        Some(f) => Ok(assemble(&design, f, trace)),
        None => {
            let diag = trace
                .iter()
                .map(|p| format!("k={:.1e}: iterations {}, gcv {}", p.k, p.iterations, p.gcv))
                .collect::<Vec<_>>()
                .join("; ");
            Err(Error::Optimization(format!("no penalized fit converged ({diag})")))
        }
    }
}

pub fn predict_afd(model: &AfdModel, fixtures: &[FeaturedMatch]) -> Vec<Prediction> {
    fixtures.iter().map(|f| Prediction::new(model.probs(f))).collect()
}

#[cfg(test)]
mod tests;
