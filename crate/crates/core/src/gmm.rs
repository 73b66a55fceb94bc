//! Isotropic Gaussian mixtures with analytic density, score, sampling, and
//! posterior responsibilities.
//!
//! These mixtures are the ground-truth data distributions of the whole
//! crate: every score-matching loss and every generated sample set is
//! judged against their closed forms. Components are isotropic
//! (`sigma_i^2 I_d`), which keeps the conditional-velocity oracle in
//! closed form.

use crate::error::{Error, Result};
use crate::linalg::{logsumexp, norm_sq};
use crate::rng::Rng;
use serde::{Deserialize, Serialize};

pub(crate) const LN_2PI: f64 = 1.8378770664093453;

/// Mixture of isotropic Gaussians in `R^d`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "MixtureSpec", into = "MixtureSpec")]
pub struct GaussianMixture {
    weights: Vec<f64>,
    means: Vec<Vec<f64>>,
    variances: Vec<f64>,
    dim: usize,
}

/// Plain serialization shape: `{weights[], means[][], variances[]}`.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct MixtureSpec {
    pub weights: Vec<f64>,
    pub means: Vec<Vec<f64>>,
    pub variances: Vec<f64>,
}

impl TryFrom<MixtureSpec> for GaussianMixture {
    type Error = Error;
    fn try_from(spec: MixtureSpec) -> Result<Self> {
        GaussianMixture::new(spec.weights, spec.means, spec.variances)
    }
}

impl From<GaussianMixture> for MixtureSpec {
    fn from(m: GaussianMixture) -> Self {
        MixtureSpec { weights: m.weights, means: m.means, variances: m.variances }
    }
}

impl GaussianMixture {
    /// Validates: non-negative weights summing to 1 within 1e-12, strictly
    /// positive variances, means of equal dimension.
    pub fn new(weights: Vec<f64>, means: Vec<Vec<f64>>, variances: Vec<f64>) -> Result<Self> {
        if weights.is_empty() || weights.len() != means.len() || weights.len() != variances.len() {
            return Err(Error::invalid(
                "weights, means, and variances must be non-empty and of equal length",
            ));
        }
        if weights.iter().any(|&w| w < 0.0) {
            return Err(Error::invalid("mixture weights must be non-negative"));
        }
        let total: f64 = weights.iter().sum();
        if (total - 1.0).abs() > 1e-12 {
            return Err(Error::invalid(format!(
                "mixture weights must sum to 1 (got {total})"
            )));
        }
        if variances.iter().any(|&v| v <= 0.0) {
            return Err(Error::invalid("component variances must be strictly positive"));
        }
        let dim = means[0].len();
        if dim == 0 || means.iter().any(|m| m.len() != dim) {
            return Err(Error::invalid("all component means must share a positive dimension"));
        }
        Ok(GaussianMixture { weights, means, variances, dim })
    }

    /// Single Gaussian `N(mean, var I)`.
    pub fn single(mean: Vec<f64>, var: f64) -> Result<Self> {
        GaussianMixture::new(vec![1.0], vec![mean], vec![var])
    }

    /// 1D standard normal.
    pub fn standard_1d() -> Self {
        GaussianMixture::single(vec![0.0], 1.0).unwrap()
    }

    /// The two-component 1D benchmark mixture `0.4 N(-2,1) + 0.6 N(2,1)`.
    pub fn bimodal_1d() -> Self {
        GaussianMixture::new(vec![0.4, 0.6], vec![vec![-2.0], vec![2.0]], vec![1.0, 1.0]).unwrap()
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn n_components(&self) -> usize {
        self.weights.len()
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    pub fn means(&self) -> &[Vec<f64>] {
        &self.means
    }

    pub fn variances(&self) -> &[f64] {
        &self.variances
    }

    /// Per-component `log(w_i) + log N(x; mu_i, sigma_i^2 I)`.
    fn log_terms(&self, x: &[f64]) -> Result<Vec<f64>> {
        Error::check_dim(self.dim, x.len())?;
        Ok(self
            .weights
            .iter()
            .zip(&self.means)
            .zip(&self.variances)
            .map(|((&w, mu), &var)| {
                let d = self.dim as f64;
                let quad = norm_sq(&crate::linalg::sub(x, mu)) / var;
                let logw = if w > 0.0 { w.ln() } else { f64::NEG_INFINITY };
                logw - 0.5 * (quad + d * (LN_2PI + var.ln()))
            })
            .collect())
    }

    /// Exactly normalized `log pi(x)` via log-sum-exp over components.
    pub fn log_density(&self, x: &[f64]) -> Result<f64> {
        Ok(logsumexp(&self.log_terms(x)?))
    }

    /// Score `∇ log pi(x) = Σ_i r_i(x) (mu_i - x) / sigma_i^2`.
    pub fn score(&self, x: &[f64]) -> Result<Vec<f64>> {
        let resp = self.posterior(x)?;
        let mut out = vec![0.0; self.dim];
        for ((r, mu), &var) in resp.iter().zip(&self.means).zip(&self.variances) {
            for (o, (&m, &xi)) in out.iter_mut().zip(mu.iter().zip(x)) {
                *o += r * (m - xi) / var;
            }
        }
        Ok(out)
    }

    /// Posterior responsibilities `r_i(x) ∝ w_i N(x; mu_i, sigma_i^2 I)`,
    /// summing to one.
    pub fn posterior(&self, x: &[f64]) -> Result<Vec<f64>> {
        let terms = self.log_terms(x)?;
        let lse = logsumexp(&terms);
        Ok(terms.iter().map(|t| (t - lse).exp()).collect())
    }

    fn component_draw(&self, rng: &mut Rng) -> usize {
        let u = rng.next_f64();
        let mut acc = 0.0;
        for (i, &w) in self.weights.iter().enumerate() {
            acc += w;
            if u <= acc {
                return i;
            }
        }
        self.weights.len() - 1
    }

    pub fn sample_one(&self, rng: &mut Rng) -> Vec<f64> {
        let i = self.component_draw(rng);
        let sd = self.variances[i].sqrt();
        self.means[i].iter().map(|&m| m + sd * rng.normal()).collect()
    }

    pub fn sample(&self, rng: &mut Rng, n: usize) -> Vec<Vec<f64>> {
        (0..n).map(|_| self.sample_one(rng)).collect()
    }

    /// Mixture mean `Σ w_i mu_i`.
    pub fn mean(&self) -> Vec<f64> {
        let mut out = vec![0.0; self.dim];
        for (&w, mu) in self.weights.iter().zip(&self.means) {
            for (o, &m) in out.iter_mut().zip(mu) {
                *o += w * m;
            }
        }
        out
    }

    /// `E ||x||^2 = Σ w_i (||mu_i||^2 + d sigma_i^2)`.
    pub fn second_moment(&self) -> f64 {
        self.weights
            .iter()
            .zip(&self.means)
            .zip(&self.variances)
            .map(|((&w, mu), &var)| w * (norm_sq(mu) + self.dim as f64 * var))
            .sum()
    }

    /// The scale-matched oscillation frequency `alpha = sqrt(d / E||x||^2)`.
    pub fn natural_alpha(&self) -> f64 {
        (self.dim as f64 / self.second_moment()).sqrt()
    }

    /// The mixture convolved with `N(0, sigma^2 I)`: same weights and means,
    /// variances `sigma_i^2 + sigma^2`. Its score is the smoothed score
    /// `∇ log pi_sigma`.
    pub fn smoothed(&self, sigma: f64) -> GaussianMixture {
        GaussianMixture {
            weights: self.weights.clone(),
            means: self.means.clone(),
            variances: self.variances.iter().map(|v| v + sigma * sigma).collect(),
            dim: self.dim,
        }
    }
}
