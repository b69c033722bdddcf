//! Gibbs sampler for the linear model with effect-fusion mixture priors.
//!
//! One sweep runs the regression steps (joint draw of all coefficients given
//! the allocations, then the error variance) followed by the clustering
//! steps for every categorical covariate: weights, component means, the
//! spike variance when it has a hyperprior, and finally the allocations.
//!
//! Every coefficient has a normal prior given the allocations,
//! `beta ~ N(b0(S), diag(B0(S)))`, so the regression steps are shared with
//! the flat-prior refit in [`crate::refit`].

use nalgebra::{Cholesky, DMatrix, DVector, Dyn};
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::data::{CoefficientLayout, CoefficientVector, DesignMatrix};
use crate::dist::{self, SamplerRng};
use crate::error::{Error, Result};
use crate::prior::{FlatFit, GlobalPriorSpec, PsiMode};

/// Tolerance on the gap between the probability mass of a categorical draw
/// and one.
pub const SIMPLEX_TOLERANCE: f64 = 1e-12;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SamplerConfig {
    pub burn_in: usize,
    /// Retained draws.
    pub iterations: usize,
    /// Sweeps per retained draw.
    pub thin: usize,
    pub seed: u64,
    /// RNG stream, one per chain.
    pub stream: u64,
    /// Also keep weights, component means and spike variances.
    pub record_mixture_params: bool,
    /// Log progress every this many sweeps; 0 disables. Not serialised, as
    /// it does not affect the draws.
    #[serde(skip_serializing)]
    pub progress_interval: usize,
}

impl Default for SamplerConfig {
    fn default() -> Self {
        SamplerConfig {
            burn_in: 15_000,
            iterations: 15_000,
            thin: 1,
            seed: 0,
            stream: 0,
            record_mixture_params: false,
            progress_interval: 0,
        }
    }
}

impl SamplerConfig {
    pub fn new(burn_in: usize, iterations: usize, seed: u64) -> Self {
        SamplerConfig {
            burn_in,
            iterations,
            seed,
            ..Default::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.iterations == 0 {
            return Err(Error::InvalidConfig("iterations must be at least 1".into()));
        }
        if self.thin == 0 {
            return Err(Error::InvalidConfig("thin must be at least 1".into()));
        }
        Ok(())
    }

    pub fn rng(&self) -> SamplerRng {
        dist::sampler_rng(self.seed, self.stream)
    }
}

/// Row-compressed copy of a design, used for `X * beta`. Dummy designs have
/// one nonzero per covariate and row.
#[derive(Debug, Clone)]
struct SparseRows {
    start: Vec<usize>,
    col: Vec<usize>,
    val: Vec<f64>,
}

impl SparseRows {
    fn new(x: &DMatrix<f64>) -> Self {
        let mut start = Vec::with_capacity(x.nrows() + 1);
        let (mut col, mut val) = (Vec::new(), Vec::new());
        start.push(0);
        for i in 0..x.nrows() {
            for j in 0..x.ncols() {
                let v = x[(i, j)];
                if v != 0.0 {
                    col.push(j);
                    val.push(v);
                }
            }
            start.push(col.len());
        }
        SparseRows { start, col, val }
    }

    fn row_dot(&self, i: usize, beta: &[f64]) -> f64 {
        (self.start[i]..self.start[i + 1])
            .map(|k| self.val[k] * beta[self.col[k]])
            .sum()
    }
}

/// Conditional posterior of the coefficients given `sigma2` and a normal
/// prior with diagonal covariance.
#[derive(Debug, Clone)]
pub struct BetaPosterior {
    pub mean: DVector<f64>,
    /// Cholesky factor of the posterior precision `X'X / sigma2 + B0^-1`.
    pub precision: Cholesky<f64, Dyn>,
}

impl BetaPosterior {
    /// `B_N = sigma2 (X'X + sigma2 B0^-1)^-1`
    pub fn covariance(&self) -> DMatrix<f64> {
        self.precision.inverse()
    }
}

/// Design, response and their cross products for the regression steps.
#[derive(Debug, Clone)]
pub struct Regression {
    x: DMatrix<f64>,
    sparse: SparseRows,
    xtx: DMatrix<f64>,
    xty: DVector<f64>,
    y: DVector<f64>,
}

impl Regression {
    pub fn new(x: DMatrix<f64>, y: &[f64]) -> Result<Self> {
        if x.nrows() != y.len() {
            return Err(Error::DimensionMismatch(format!(
                "design has {} rows, response has {} entries",
                x.nrows(),
                y.len()
            )));
        }
        if y.is_empty() {
            return Err(Error::EmptyDataset);
        }
        let y = DVector::from_column_slice(y);
        let xtx = x.tr_mul(&x);
        let xty = x.tr_mul(&y);
        let sparse = SparseRows::new(&x);
        Ok(Regression { x, sparse, xtx, xty, y })
    }

    pub fn n_obs(&self) -> usize {
        self.y.len()
    }

    pub fn n_coef(&self) -> usize {
        self.x.ncols()
    }

    pub fn design(&self) -> &DMatrix<f64> {
        &self.x
    }

    pub fn response(&self) -> &DVector<f64> {
        &self.y
    }

    /// Replaces the response, keeping the design.
    pub fn set_response(&mut self, y: &[f64]) {
        assert_eq!(y.len(), self.y.len(), "response length must not change");
        self.y.copy_from_slice(y);
        self.xty = self.x.tr_mul(&self.y);
    }

    pub fn fitted(&self, beta: &[f64]) -> DVector<f64> {
        DVector::from_iterator(self.n_obs(), (0..self.n_obs()).map(|i| self.sparse.row_dot(i, beta)))
    }

    pub fn rss(&self, beta: &[f64]) -> f64 {
        (0..self.n_obs())
            .map(|i| {
                let r = self.y[i] - self.sparse.row_dot(i, beta);
                r * r
            })
            .sum()
    }

    /// Posterior of `beta` under the prior `N(prior_mean, diag(prior_var))`.
    pub fn beta_posterior(
        &self,
        sigma2: f64,
        prior_mean: &[f64],
        prior_var: &[f64],
    ) -> Result<BetaPosterior> {
        let p = self.n_coef();
        debug_assert!(prior_mean.len() == p && prior_var.len() == p);
        let mut q = &self.xtx / sigma2;
        let mut rhs = &self.xty / sigma2;
        for k in 0..p {
            q[(k, k)] += 1.0 / prior_var[k];
            rhs[k] += prior_mean[k] / prior_var[k];
        }
        let precision = match Cholesky::new(q.clone()) {
            Some(c) => c,
            None => {
                let jitter = 1e-10 * q.trace() / p as f64;
                for k in 0..p {
                    q[(k, k)] += jitter;
                }
                let min_diag = (0..p).map(|k| q[(k, k)]).fold(f64::INFINITY, f64::min);
                Cholesky::new(q).ok_or_else(|| {
                    Error::NotPositiveDefinite(format!(
                        "dimension {p}, sigma2 = {sigma2:e}, jitter {jitter:e} applied, smallest diagonal {min_diag:e}"
                    ))
                })?
            }
        };
        let mean = precision.solve(&rhs);
        if mean.iter().any(|v| !v.is_finite()) {
            return Err(Error::NotPositiveDefinite(format!(
                "non-finite posterior mean (dimension {p}, sigma2 = {sigma2:e})"
            )));
        }
        Ok(BetaPosterior { mean, precision })
    }

    /// One joint draw from the conditional posterior of `beta`.
    pub fn draw_beta<R: Rng + ?Sized>(
        &self,
        rng: &mut R,
        sigma2: f64,
        prior_mean: &[f64],
        prior_var: &[f64],
    ) -> Result<DVector<f64>> {
        let post = self.beta_posterior(sigma2, prior_mean, prior_var)?;
        let mut z = DVector::from_iterator(self.n_coef(), (0..self.n_coef()).map(|_| dist::std_normal(rng)));
        // L' w = z gives Cov(w) = (L L')^-1
        post.precision.l_dirty().tr_solve_lower_triangular_mut(&mut z);
        Ok(post.mean + z)
    }

    /// Draws `sigma2` given `beta`; returns the draw and the residual sum of
    /// squares it was based on.
    pub fn draw_sigma2<R: Rng + ?Sized>(
        &self,
        rng: &mut R,
        beta: &[f64],
        shape0: f64,
        scale0: f64,
    ) -> Result<(f64, f64)> {
        let rss = self.rss(beta);
        let (shape, scale) = sigma2_posterior(self.n_obs(), rss, shape0, scale0);
        if !(scale > 0.0) || !scale.is_finite() {
            return Err(Error::DegenerateResiduals);
        }
        let sigma2 = dist::inv_gamma(rng, shape, scale);
        if !(sigma2 > 0.0) || !sigma2.is_finite() {
            return Err(Error::DegenerateResiduals);
        }
        Ok((sigma2, rss))
    }
}

/// `(s_N, S_N)` of the inverse-gamma conditional of the error variance.
pub fn sigma2_posterior(n: usize, rss: f64, shape0: f64, scale0: f64) -> (f64, f64) {
    (shape0 + n as f64 / 2.0, scale0 + rss / 2.0)
}

/// Dirichlet parameters `e0 + N_l` of the weight conditional.
pub fn dirichlet_posterior(counts: &[usize], e0: f64) -> Vec<f64> {
    counts.iter().map(|&c| e0 + c as f64).collect()
}

/// `(m_l, M_l)` of a component mean's normal conditional given `count`
/// effects with average `mean`. An empty component returns the hyperprior.
pub fn mu_posterior(count: usize, mean: f64, psi: f64, m0: f64, big_m0: f64) -> (f64, f64) {
    let n = count as f64;
    let var = 1.0 / (n / psi + 1.0 / big_m0);
    let centre = if count == 0 {
        m0
    } else {
        var * (n * mean / psi + m0 / big_m0)
    };
    (centre, var)
}

/// `(g_N, G_N)` of the spike-variance conditional, where `sq_dev` is the sum
/// of squared deviations of the effects from their component means.
pub fn psi_posterior(n_effects: usize, sq_dev: f64, g0: f64, big_g0: f64) -> (f64, f64) {
    (g0 + n_effects as f64 / 2.0, big_g0 + sq_dev / 2.0)
}

/// Unnormalised log allocation weights `ln eta_l + ln phi(beta | mu_l, psi)`
/// up to a constant shared by all components.
pub fn allocation_log_weights(beta: f64, log_eta: &[f64], mu: &[f64], psi: f64, out: &mut [f64]) {
    for ((o, &le), &m) in out.iter_mut().zip(log_eta).zip(mu) {
        let d = beta - m;
        *o = le - d * d / (2.0 * psi);
    }
}

/// Normalised allocation probabilities computed through log-sum-exp.
pub fn allocation_probabilities(beta: f64, log_eta: &[f64], mu: &[f64], psi: f64) -> Vec<f64> {
    let mut w = vec![0.0; log_eta.len()];
    allocation_log_weights(beta, log_eta, mu, psi, &mut w);
    let norm = dist::log_sum_exp(&w);
    w.iter().map(|v| (v - norm).exp()).collect()
}

/// Clustering parameters of one covariate.
#[derive(Debug, Clone, PartialEq)]
pub struct MixtureState {
    /// Log weights of components `0..=L`.
    pub log_eta: Vec<f64>,
    /// Component means; `mu[0]` is always zero.
    pub mu: Vec<f64>,
    pub psi: f64,
    /// Component index of each level effect.
    pub allocations: Vec<u32>,
}

impl MixtureState {
    pub fn eta(&self) -> Vec<f64> {
        self.log_eta.iter().map(|v| v.exp()).collect()
    }

    /// `N_l`, the number of effects per component.
    pub fn counts(&self) -> Vec<usize> {
        let mut counts = vec![0; self.mu.len()];
        for &s in &self.allocations {
            counts[s as usize] += 1;
        }
        counts
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct McmcState {
    /// Flat coefficient vector (intercept, level effects, continuous).
    pub beta: DVector<f64>,
    pub sigma2: f64,
    pub mixtures: Vec<MixtureState>,
}

impl McmcState {
    pub fn coefficients(&self, layout: &CoefficientLayout) -> CoefficientVector {
        CoefficientVector::unflatten(self.beta.as_slice(), layout).expect("state matches its layout")
    }

    /// Checks the state invariants, describing the first violation.
    pub fn check(&self) -> std::result::Result<(), String> {
        if !(self.sigma2 > 0.0 && self.sigma2.is_finite()) {
            return Err(format!("sigma2 = {}", self.sigma2));
        }
        if self.beta.iter().any(|b| !b.is_finite()) {
            return Err("non-finite coefficient".into());
        }
        for (j, m) in self.mixtures.iter().enumerate() {
            if m.mu[0] != 0.0 {
                return Err(format!("covariate {j}: mu[0] = {}", m.mu[0]));
            }
            if !(m.psi > 0.0 && m.psi.is_finite()) {
                return Err(format!("covariate {j}: psi = {}", m.psi));
            }
            if m.log_eta.iter().any(|v| !v.is_finite()) {
                return Err(format!("covariate {j}: a weight is zero"));
            }
            let total: f64 = m.eta().iter().sum();
            if (total - 1.0).abs() > SIMPLEX_TOLERANCE {
                return Err(format!("covariate {j}: weights sum to {total}"));
            }
            if m.allocations.iter().any(|&s| s as usize >= m.mu.len()) {
                return Err(format!("covariate {j}: allocation out of range"));
            }
        }
        Ok(())
    }
}

/// Retained coefficient and error-variance draws.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RegressionTrace {
    n_coef: usize,
    beta: Vec<f64>,
    sigma2: Vec<f64>,
}

impl RegressionTrace {
    pub fn new(n_coef: usize) -> Self {
        RegressionTrace {
            n_coef,
            beta: Vec::new(),
            sigma2: Vec::new(),
        }
    }

    pub fn push(&mut self, beta: &[f64], sigma2: f64) {
        assert_eq!(beta.len(), self.n_coef);
        self.beta.extend_from_slice(beta);
        self.sigma2.push(sigma2);
    }

    pub fn n_draws(&self) -> usize {
        self.sigma2.len()
    }

    pub fn n_coef(&self) -> usize {
        self.n_coef
    }

    pub fn beta(&self, draw: usize) -> &[f64] {
        &self.beta[draw * self.n_coef..(draw + 1) * self.n_coef]
    }

    pub fn sigma2(&self) -> &[f64] {
        &self.sigma2
    }

    /// All draws of coefficient `k`.
    pub fn coefficient(&self, k: usize) -> Vec<f64> {
        (0..self.n_draws()).map(|m| self.beta[m * self.n_coef + k]).collect()
    }

    pub fn mean_beta(&self) -> DVector<f64> {
        let mut mean = DVector::zeros(self.n_coef);
        for m in 0..self.n_draws() {
            for (acc, b) in mean.iter_mut().zip(self.beta(m)) {
                *acc += b;
            }
        }
        mean / self.n_draws().max(1) as f64
    }

    pub fn mean_sigma2(&self) -> f64 {
        self.sigma2.iter().sum::<f64>() / self.n_draws().max(1) as f64
    }
}

/// Allocation draws of one covariate, `draws x n_effects`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AllocationTrace {
    pub covariate: String,
    pub n_effects: usize,
    values: Vec<u32>,
}

impl AllocationTrace {
    pub fn new(covariate: impl Into<String>, n_effects: usize) -> Self {
        AllocationTrace {
            covariate: covariate.into(),
            n_effects,
            values: Vec::new(),
        }
    }

    pub fn push(&mut self, draw: &[u32]) {
        assert_eq!(draw.len(), self.n_effects);
        self.values.extend_from_slice(draw);
    }

    pub fn n_draws(&self) -> usize {
        self.values.len().checked_div(self.n_effects).unwrap_or(0)
    }

    pub fn draw(&self, m: usize) -> &[u32] {
        &self.values[m * self.n_effects..(m + 1) * self.n_effects]
    }

    pub fn iter(&self) -> impl Iterator<Item = &[u32]> {
        self.values.chunks_exact(self.n_effects.max(1))
    }
}

/// Weights, means and spike variance draws of one covariate.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct MixtureTrace {
    pub n_components: usize,
    pub log_eta: Vec<f64>,
    pub mu: Vec<f64>,
    pub psi: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct McmcTrace {
    pub layout: CoefficientLayout,
    pub regression: RegressionTrace,
    pub allocations: Vec<AllocationTrace>,
    pub mixture: Option<Vec<MixtureTrace>>,
    pub burn_in: usize,
    pub thin: usize,
    pub seed: u64,
    pub stream: u64,
}

impl McmcTrace {
    pub fn n_draws(&self) -> usize {
        self.regression.n_draws()
    }
}

/// Sampler for the fusion model on a fixed design.
#[derive(Debug, Clone)]
pub struct FusionSampler {
    regression: Regression,
    prior: GlobalPriorSpec,
    layout: CoefficientLayout,
    prior_mean: Vec<f64>,
    prior_var: Vec<f64>,
    scratch: Vec<f64>,
}

impl FusionSampler {
    pub fn new(design: &DesignMatrix, y: &[f64], prior: &GlobalPriorSpec) -> Result<Self> {
        prior.validate()?;
        let layout = design.layout().clone();
        if prior.mixtures.len() != layout.effects.len() {
            return Err(Error::DimensionMismatch(format!(
                "{} mixture priors for {} categorical covariates",
                prior.mixtures.len(),
                layout.effects.len()
            )));
        }
        let p = layout.len();
        let max_components = prior
            .mixtures
            .iter()
            .map(|m| m.nonzero_components + 1)
            .max()
            .unwrap_or(1);
        Ok(FusionSampler {
            regression: Regression::new(design.matrix().clone(), y)?,
            prior: prior.clone(),
            layout,
            prior_mean: vec![0.0; p],
            prior_var: vec![0.0; p],
            scratch: vec![0.0; max_components],
        })
    }

    pub fn regression(&self) -> &Regression {
        &self.regression
    }

    pub fn prior(&self) -> &GlobalPriorSpec {
        &self.prior
    }

    pub fn layout(&self) -> &CoefficientLayout {
        &self.layout
    }

    /// Replaces the response (used when simulating from the joint model).
    pub fn set_response(&mut self, y: &[f64]) {
        self.regression.set_response(y);
    }

    /// Starting state: every effect at its flat-prior estimate in a component
    /// of its own centred there, component 0 empty, uniform weights, the
    /// spike variance at its (prior) mean and the error variance at the
    /// flat-fit residual variance.
    pub fn init_state(&self, beta_hat: &CoefficientVector, sigma2: f64) -> Result<McmcState> {
        if beta_hat.layout() != self.layout {
            return Err(Error::LayoutMismatch {
                expected: self.layout.len(),
                got: beta_hat.layout().len(),
            });
        }
        if !(sigma2 > 0.0 && sigma2.is_finite()) {
            return Err(Error::InvalidConfig(format!("initial sigma2 = {sigma2}")));
        }
        let mixtures = self
            .prior
            .mixtures
            .iter()
            .zip(&beta_hat.effects)
            .map(|(spec, effects)| {
                let l = spec.nonzero_components;
                let mut mu = vec![spec.m0; l + 1];
                mu[0] = 0.0;
                for (k, &b) in effects.iter().enumerate().take(l) {
                    mu[k + 1] = b;
                }
                let allocations = effects
                    .iter()
                    .enumerate()
                    .map(|(k, &b)| {
                        if k < l {
                            (k + 1) as u32
                        } else {
                            nearest(&mu, b) as u32
                        }
                    })
                    .collect();
                MixtureState {
                    log_eta: vec![-((l + 1) as f64).ln(); l + 1],
                    mu,
                    psi: spec.psi.expected(),
                    allocations,
                }
            })
            .collect();
        Ok(McmcState {
            beta: beta_hat.flatten(),
            sigma2,
            mixtures,
        })
    }

    fn assemble_prior(&mut self, state: &McmcState) {
        self.prior_mean[0] = 0.0;
        self.prior_var[0] = self.prior.intercept_variance;
        for (j, m) in state.mixtures.iter().enumerate() {
            let offset = self.layout.effect_offset(j);
            for (k, &s) in m.allocations.iter().enumerate() {
                self.prior_mean[offset + k] = m.mu[s as usize];
                self.prior_var[offset + k] = m.psi;
            }
        }
        for k in self.layout.continuous_offset()..self.layout.len() {
            self.prior_mean[k] = 0.0;
            self.prior_var[k] = self.prior.continuous_variance;
        }
    }

    /// Prior mean and variance of every coefficient given the allocations.
    pub fn conditional_prior(&mut self, state: &McmcState) -> (&[f64], &[f64]) {
        self.assemble_prior(state);
        (&self.prior_mean, &self.prior_var)
    }

    pub fn step_beta(&mut self, state: &mut McmcState, rng: &mut SamplerRng) -> Result<()> {
        self.assemble_prior(state);
        state.beta = self
            .regression
            .draw_beta(rng, state.sigma2, &self.prior_mean, &self.prior_var)?;
        Ok(())
    }

    pub fn step_sigma2(&self, state: &mut McmcState, rng: &mut SamplerRng) -> Result<()> {
        let (sigma2, _) = self.regression.draw_sigma2(
            rng,
            state.beta.as_slice(),
            self.prior.error_shape,
            self.prior.error_scale,
        )?;
        state.sigma2 = sigma2;
        Ok(())
    }

    pub fn step_eta(&self, state: &mut McmcState, rng: &mut SamplerRng) {
        for (m, spec) in state.mixtures.iter_mut().zip(&self.prior.mixtures) {
            let alphas = dirichlet_posterior(&m.counts(), spec.e0);
            dist::log_dirichlet(rng, &alphas, &mut m.log_eta);
        }
    }

    pub fn step_mu(&self, state: &mut McmcState, rng: &mut SamplerRng) {
        for (j, (m, spec)) in state.mixtures.iter_mut().zip(&self.prior.mixtures).enumerate() {
            let effects = &state.beta.as_slice()[self.layout.effect_offset(j)..][..self.layout.effects[j]];
            let mut count = vec![0usize; m.mu.len()];
            let mut sum = vec![0.0; m.mu.len()];
            for (&s, &b) in m.allocations.iter().zip(effects) {
                count[s as usize] += 1;
                sum[s as usize] += b;
            }
            for l in 1..m.mu.len() {
                let mean = if count[l] > 0 { sum[l] / count[l] as f64 } else { 0.0 };
                let (centre, var) = mu_posterior(count[l], mean, m.psi, spec.m0, spec.big_m0);
                m.mu[l] = centre + var.sqrt() * dist::std_normal(rng);
            }
        }
    }

    /// No-op for covariates with a fixed spike variance.
    pub fn step_psi(&self, state: &mut McmcState, rng: &mut SamplerRng) {
        for (j, (m, spec)) in state.mixtures.iter_mut().zip(&self.prior.mixtures).enumerate() {
            let PsiMode::Random { g0, big_g0 } = spec.psi else {
                continue;
            };
            let effects = &state.beta.as_slice()[self.layout.effect_offset(j)..][..self.layout.effects[j]];
            let sq_dev: f64 = m
                .allocations
                .iter()
                .zip(effects)
                .map(|(&s, &b)| (b - m.mu[s as usize]).powi(2))
                .sum();
            let (shape, scale) = psi_posterior(effects.len(), sq_dev, g0, big_g0);
            m.psi = dist::inv_gamma(rng, shape, scale);
        }
    }

    pub fn step_allocations(&mut self, state: &mut McmcState, rng: &mut SamplerRng) -> Result<()> {
        for (j, m) in state.mixtures.iter_mut().enumerate() {
            let n_comp = m.mu.len();
            if n_comp == 1 {
                m.allocations.iter_mut().for_each(|s| *s = 0);
                continue;
            }
            let offset = self.layout.effect_offset(j);
            let w = &mut self.scratch[..n_comp];
            for k in 0..m.allocations.len() {
                let b = state.beta[offset + k];
                allocation_log_weights(b, &m.log_eta, &m.mu, m.psi, w);
                let max = w.iter().copied().fold(f64::NEG_INFINITY, f64::max);
                if !max.is_finite() {
                    return Err(Error::AllocationUnderflow {
                        covariate: j,
                        effect: k,
                        detail: format!("beta = {b}, psi = {:e}, max log weight {max}", m.psi),
                    });
                }
                let mut total = 0.0;
                for v in w.iter_mut() {
                    *v = (*v - max).exp();
                    total += *v;
                }
                let u: f64 = rng.random::<f64>() * total;
                let mut acc = 0.0;
                let mut pick = n_comp - 1;
                for (l, &v) in w.iter().enumerate() {
                    acc += v;
                    if u < acc {
                        pick = l;
                        break;
                    }
                }
                m.allocations[k] = pick as u32;
            }
        }
        Ok(())
    }

    /// One full sweep in the order beta, sigma2, eta, mu, psi, allocations.
    pub fn sweep(&mut self, state: &mut McmcState, rng: &mut SamplerRng) -> Result<()> {
        self.step_beta(state, rng)?;
        self.step_sigma2(state, rng)?;
        self.step_eta(state, rng);
        self.step_mu(state, rng);
        self.step_psi(state, rng);
        self.step_allocations(state, rng)
    }

    pub fn run(&mut self, mut state: McmcState, config: &SamplerConfig) -> Result<McmcTrace> {
        config.validate()?;
        let mut rng = config.rng();
        let mut regression = RegressionTrace::new(self.layout.len());
        let mut allocations: Vec<AllocationTrace> = self
            .prior
            .mixtures
            .iter()
            .zip(&self.layout.effects)
            .map(|(spec, &c)| AllocationTrace::new(spec.covariate.clone(), c))
            .collect();
        let mut mixture: Option<Vec<MixtureTrace>> = config.record_mixture_params.then(|| {
            state
                .mixtures
                .iter()
                .map(|m| MixtureTrace {
                    n_components: m.mu.len(),
                    ..Default::default()
                })
                .collect()
        });

        let total = config.burn_in + config.iterations * config.thin;
        let mut done = 0usize;
        let tick = |done: &mut usize| {
            *done += 1;
            if config.progress_interval > 0 && *done % config.progress_interval == 0 {
                log::info!("sweep {done}/{total}");
            }
        };
        for _ in 0..config.burn_in {
            self.sweep(&mut state, &mut rng)?;
            tick(&mut done);
        }
        for _ in 0..config.iterations {
            for _ in 0..config.thin {
                self.sweep(&mut state, &mut rng)?;
                tick(&mut done);
            }
            debug_assert_eq!(state.check(), Ok(()));
            regression.push(state.beta.as_slice(), state.sigma2);
            for (trace, m) in allocations.iter_mut().zip(&state.mixtures) {
                trace.push(&m.allocations);
            }
            if let Some(mix) = mixture.as_mut() {
                for (trace, m) in mix.iter_mut().zip(&state.mixtures) {
                    trace.log_eta.extend_from_slice(&m.log_eta);
                    trace.mu.extend_from_slice(&m.mu);
                    trace.psi.push(m.psi);
                }
            }
        }
        Ok(McmcTrace {
            layout: self.layout.clone(),
            regression,
            allocations,
            mixture,
            burn_in: config.burn_in,
            thin: config.thin,
            seed: config.seed,
            stream: config.stream,
        })
    }
}

fn nearest(mu: &[f64], b: f64) -> usize {
    (0..mu.len())
        .min_by(|&x, &y| (mu[x] - b).abs().total_cmp(&(mu[y] - b).abs()))
        .unwrap_or(0)
}

/// Runs the fusion sampler from the standard starting state.
pub fn run_mcmc(
    design: &DesignMatrix,
    y: &[f64],
    prior: &GlobalPriorSpec,
    flat: &FlatFit,
    config: &SamplerConfig,
) -> Result<McmcTrace> {
    let mut sampler = FusionSampler::new(design, y, prior)?;
    let state = sampler.init_state(&flat.coefficients, flat.residual_variance)?;
    sampler.run(state, config)
}
