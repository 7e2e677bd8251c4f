//! Posterior predictive sampling of scores.

use std::collections::BTreeSet;
use std::path::Path;

use nalgebra::DMatrix;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Poisson, StandardNormal};
use serde::{Deserialize, Serialize};

use super::{dvec, LaplaceFit};
use crate::error::{Error, Result};
use crate::features::FeaturedMatch;
use crate::prediction::{Flag, Prediction};

/// `log θ` is capped here before drawing goals.
const MAX_LOG_RATE: f64 = 20.0;

/// Joint draws of home and away goals for one fixture.
#[derive(Debug, Clone, PartialEq)]
pub struct ScoreSamples {
    pub scores: Vec<(u32, u32)>,
    pub flags: BTreeSet<Flag>,
}

/// Each side's linear predictor as `Σ coef·x[index]` over the
/// latent vector, plus independent extrapolation noise.
struct SideMap {
    terms: Vec<(usize, f64)>,
    extra_var: f64,
}

struct FixtureMap {
    sides: [SideMap; 2],
    flags: BTreeSet<Flag>,
}

fn fixture_map(fit: &LaplaceFit, m: &FeaturedMatch) -> FixtureMap {
    let l = fit.layout;
    let mut flags = BTreeSet::new();
    let h = fit.team_index(&m.fixture.home_team);
    let a = fit.team_index(&m.fixture.away_team);
    if h.is_none() || a.is_none() {
        flags.insert(Flag::UnseenTeam);
    }
    let season = fit.seasons.iter().position(|s| *s == m.fixture.season);
    if season.is_none() {
        flags.insert(Flag::UnseenSeason);
    }
    let hy = &fit.hyper;
    let s2 = hy.sigma_eps.powi(2);
    let (fh, fa) = (&m.features.home, &m.features.away);
    let side = |att: Option<usize>, def: Option<usize>, own, opp| {
        let mut terms: Vec<(usize, f64)> = fit
            .columns
            .iter()
            .enumerate()
            .map(|(j, c)| (j, c.value(own, opp)))
            .filter(|(_, v)| *v != 0.0)
            .collect();
        let mut extra_var = 0.0;
        if let Some(t) = att {
            terms.push((l.alpha(t), 1.0));
            match season {
                Some(s) => terms.push((l.gamma(t, s), 1.0)),
                None => {
                    terms.push((l.gamma(t, l.seasons - 1), hy.rho_gamma));
                    extra_var += s2 * (1.0 - hy.rho_gamma.powi(2));
                }
            }
        }
        if let Some(t) = def {
            terms.push((l.xi(t), 1.0));
            match season {
                Some(s) => terms.push((l.delta(t, s), 1.0)),
                None => {
                    terms.push((l.delta(t, l.seasons - 1), hy.rho_delta));
                    extra_var += s2 * (1.0 - hy.rho_delta.powi(2));
                }
            }
        }
        SideMap {
            terms,
            extra_var,
        }
    };
    FixtureMap {
        sides: [side(h, a, fh, fa), side(a, h, fa, fh)],
        flags,
    }
}

/// Mean and standard deviation of each side's linear predictor.
fn eta_moments(fit: &LaplaceFit, map: &FixtureMap) -> [(f64, f64); 2] {
    let cov = fit.covariance();
    map.sides.each_ref().map(|s| {
        let mean = s.terms.iter().map(|(i, c)| c * fit.mode[*i]).sum::<f64>();
        let mut var = s.extra_var;
        for (i, ci) in &s.terms {
            for (j, cj) in &s.terms {
                var += ci * cj * cov[(*i, *j)];
            }
        }
        (mean, var.max(0.0).sqrt())
    })
}

/// Posterior mean of the scoring rates, `E[exp(η)]` under the Gaussian
/// approximation.
pub fn expected_goals(fit: &LaplaceFit, m: &FeaturedMatch) -> [f64; 2] {
    let map = fixture_map(fit, m);
    eta_moments(fit, &map).map(|(mu, sd)| (mu + 0.5 * sd * sd).exp())
}

/// 64-bit FNV-1a.
fn fnv1a(s: &str) -> u64 {
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    for b in s.bytes() {
        h ^= u64::from(b);
        h = h.wrapping_mul(0x0100_0000_01b3);
    }
    h
}

/// Draws `n` joint scores: latent effects from the Gaussian approximation
/// restricted to those the fixture uses, then Poisson goals. The stream
/// depends only on `seed` and the fixture's key.
pub fn sample_scores(fit: &LaplaceFit, m: &FeaturedMatch, n: usize, seed: u64) -> Result<ScoreSamples> {
    let map = fixture_map(fit, m);
    // union of the latent entries either side touches
    let idx: Vec<usize> = map
        .sides
        .iter()
        .flat_map(|s| s.terms.iter().map(|(i, _)| *i))
        .collect::<BTreeSet<_>>()
        .into_iter()
        .collect();
    let k = idx.len();
    let cov = fit.covariance();
    let sub = DMatrix::from_fn(k, k, |a, b| cov[(idx[a], idx[b])]);
    let chol = match sub.clone().cholesky() {
        Some(c) => c.l(),
        // a jitter rescues a numerically semidefinite block
        None => (sub + DMatrix::identity(k, k) * 1e-12)
            .cholesky()
            .ok_or(Error::NotPositiveDefinite { min_eigenvalue: 0.0 })?
            .l(),
    };
    let mu = dvec(&idx.iter().map(|i| fit.mode[*i]).collect::<Vec<_>>());
    let pos = |i: usize| idx.binary_search(&i).expect("indexed");
    let coef: [Vec<(usize, f64)>; 2] = map
        .sides
        .each_ref()
        .map(|s| s.terms.iter().map(|(i, c)| (pos(*i), *c)).collect());

    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ fnv1a(&m.fixture.key()));
    let mut z = nalgebra::DVector::<f64>::zeros(k);
    let mut scores = Vec::with_capacity(n);
    for _ in 0..n {
        for v in z.iter_mut() {
            *v = StandardNormal.sample(&mut rng);
        }
        let x = &mu + &chol * &z;
        let mut goals = [0u32; 2];
        for (j, side) in map.sides.iter().enumerate() {
            let mut eta = coef[j].iter().map(|(p, c)| c * x[*p]).sum::<f64>();
            if side.extra_var > 0.0 {
                let e: f64 = StandardNormal.sample(&mut rng);
                eta += side.extra_var.sqrt() * e;
            }
            let rate = eta.min(MAX_LOG_RATE).exp();
            let pois = Poisson::new(rate).map_err(|e| Error::Optimization(format!("poisson rate {rate}: {e}")))?;
            goals[j] = pois.sample(&mut rng) as u32;
        }
        scores.push((goals[0], goals[1]));
    }
    Ok(ScoreSamples {
        scores,
        flags: map.flags,
    })
}

/// Outcome frequencies `(win, draw, loss)` of sampled scores.
pub fn outcome_probs(samples: &[(u32, u32)]) -> Result<[f64; 3]> {
    if samples.is_empty() {
        return Err(Error::Empty("sample"));
    }
    let n = samples.len() as f64;
    let win = samples.iter().filter(|(h, a)| h > a).count() as f64 / n;
    let loss = samples.iter().filter(|(h, a)| h < a).count() as f64 / n;
    Ok([win, 1.0 - win - loss, loss])
}

/// Root mean squared error of predicted against observed goals over both
/// sides.
pub fn rmse_scores(predicted: &[[f64; 2]], observed: &[(u32, u32)]) -> Result<f64> {
    if predicted.len() != observed.len() {
        return Err(Error::DimensionMismatch {
            expected: predicted.len(),
            got: observed.len(),
        });
    }
    if predicted.is_empty() {
        return Err(Error::Empty("score list"));
    }
    let sse: f64 = predicted
        .iter()
        .zip(observed)
        .map(|(p, (h, a))| (p[0] - f64::from(*h)).powi(2) + (p[1] - f64::from(*a)).powi(2))
        .sum();
    Ok((sse / (2 * predicted.len()) as f64).sqrt())
}

/// One Laplace fit per league.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct HplPredictor {
    pub fits: Vec<LaplaceFit>,
}

impl HplPredictor {
    pub fn fit_for(&self, league: &str) -> Option<&LaplaceFit> {
        self.fits.iter().find(|f| f.league == league)
    }

    pub fn converged(&self) -> bool {
        self.fits.iter().all(|f| f.converged)
    }

    /// Outcome probabilities from `n_samples` draws and expected goals;
    /// fixtures in unknown leagues get the neutral triple.
    pub fn predict(&self, fixtures: &[FeaturedMatch], n_samples: usize, seed: u64) -> Result<Vec<Prediction>> {
        fixtures
            .iter()
            .map(|m| match self.fit_for(&m.fixture.league) {
                None => Ok(Prediction::neutral().flagged(Flag::UnseenLeague)),
                Some(fit) => {
                    let s = sample_scores(fit, m, n_samples, seed)?;
                    Ok(Prediction {
                        probs: outcome_probs(&s.scores)?,
                        expected_goals: Some(expected_goals(fit, m)),
                        flags: s.flags,
                    })
                }
            })
            .collect()
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    /// Parses the JSON part; precisions must be attached separately.
    pub fn from_json(s: &str) -> Result<Self> {
        Ok(serde_json::from_str(s)?)
    }

    /// Writes `path` (JSON) and `path.precision` (binary precisions).
    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        std::fs::write(path, self.to_json()?).map_err(|e| Error::io(path, e))?;
        self.save_precisions(path)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let mut p = Self::from_json(&text)?;
        p.load_precisions(path)?;
        Ok(p)
    }

    /// Writes the precisions next to the JSON file at `path`.
    pub fn save_precisions(&self, path: &Path) -> Result<()> {
        let side = precision_path(path);
        let file = std::fs::File::create(&side).map_err(|e| Error::io(&side, e))?;
        let mut w = std::io::BufWriter::new(file);
        let items: Vec<(&str, &DMatrix<f64>)> = self.fits.iter().map(|f| (f.league.as_str(), &f.precision)).collect();
        super::write_precisions(&mut w, &items).map_err(|e| Error::io(&side, e))
    }

    /// Attaches the precisions stored next to the JSON file at `path`.
    pub fn load_precisions(&mut self, path: &Path) -> Result<()> {
        let side = precision_path(path);
        let file = std::fs::File::open(&side).map_err(|e| Error::io(&side, e))?;
        let mats = super::read_precisions(&mut std::io::BufReader::new(file)).map_err(|e| Error::io(&side, e))?;
        for fit in &mut self.fits {
            let q = mats
                .iter()
                .find(|(l, _)| *l == fit.league)
                .ok_or_else(|| Error::InvalidInput(format!("no precision stored for league {}", fit.league)))?;
            fit.set_precision(q.1.clone())?;
        }
        Ok(())
    }
}

/// Location of the binary precisions belonging to a JSON model file.
pub fn precision_path(path: &Path) -> std::path::PathBuf {
    let mut s = path.as_os_str().to_owned();
    s.push(".precision");
    s.into()
}
