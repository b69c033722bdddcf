//! Data-driven hyperparameters of the effect-fusion mixture prior.
//!
//! All location and scale hyperparameters are derived from the flat-prior
//! (least-squares) estimate `beta_hat_j` of each covariate:
//!
//! ```text
//! m0_j = mean(beta_hat_j)
//! M0_j = (max_k beta_hat_jk - min_k beta_hat_jk)^2
//! V_j  = 1/(c_j - 1) * sum_k (beta_hat_jk - mean)^2
//! psi_j = V_j / nu                      (fixed spike variance)
//! psi_j ~ InvGamma(g0, V_j/nu * (g0-1))  (random spike variance)
//! ```

use std::collections::BTreeMap;

use nalgebra::DVector;
use serde::{Deserialize, Serialize};

use crate::data::{CoefficientVector, Dataset, DesignMatrix};
use crate::error::{Error, Result};

pub const DEFAULT_E0: f64 = 0.01;
pub const DEFAULT_G0: f64 = 100.0;
pub const DEFAULT_B0: f64 = 1e4;
pub const DEFAULT_NU: f64 = 1e3;

/// Singular values below this fraction of the largest mark a design as rank
/// deficient.
pub const RANK_TOLERANCE: f64 = 1e-10;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FlatFit {
    pub coefficients: CoefficientVector,
    pub rss: f64,
    /// `rss / (N - p)`
    pub residual_variance: f64,
}

/// Least-squares fit, the flat-prior posterior mean.
pub fn flat_fit(design: &DesignMatrix, y: &[f64]) -> Result<FlatFit> {
    let (beta, rss) = least_squares(design.matrix(), y)?;
    let (n, p) = (design.n_rows(), design.n_columns());
    Ok(FlatFit {
        coefficients: CoefficientVector::unflatten(beta.as_slice(), design.layout())?,
        rss,
        residual_variance: rss / (n - p) as f64,
    })
}

/// QR least squares with a singular-value rank check on `R`.
pub(crate) fn least_squares(x: &nalgebra::DMatrix<f64>, y: &[f64]) -> Result<(DVector<f64>, f64)> {
    let (n, p) = x.shape();
    if y.len() != n {
        return Err(Error::DimensionMismatch(format!(
            "response has {} entries, design has {n} rows",
            y.len()
        )));
    }
    if n <= p {
        return Err(Error::TooFewObservations { rows: n, columns: p });
    }
    let qr = x.clone().qr();
    let r = qr.r();
    let sv = r.singular_values();
    let largest = sv.max();
    let rank = sv.iter().filter(|&&s| s > RANK_TOLERANCE * largest).count();
    if rank < p || largest == 0.0 {
        return Err(Error::RankDeficient { rank, columns: p });
    }
    let mut qty = DVector::from_column_slice(y);
    qr.q_tr_mul(&mut qty);
    let rhs = qty.rows(0, p).into_owned();
    let beta = r
        .solve_upper_triangular(&rhs)
        .ok_or(Error::RankDeficient { rank, columns: p })?;
    let resid = DVector::from_column_slice(y) - x * &beta;
    Ok((beta, resid.norm_squared()))
}

/// Why a covariate's hyperparameters departed from the plain formulas.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum HyperFallback {
    /// Binary covariate: a single effect has no sample variance, so the
    /// squared distance to the zero component is used for `V` and `M0`.
    BinaryCovariate,
    /// All estimated effects (nearly) coincide; `V` and/or `M0` were floored.
    DegenerateSpread,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EmpiricalHyper {
    pub m0: f64,
    pub big_m0: f64,
    pub v: f64,
    pub psi: f64,
    pub fallback: Option<HyperFallback>,
}

pub fn empirical_hyperparams(beta_hat: &[f64], nu: f64) -> Result<EmpiricalHyper> {
    if !(nu > 0.0 && nu.is_finite()) {
        return Err(Error::InvalidHyperparameter(format!("nu must be positive, got {nu}")));
    }
    if beta_hat.is_empty() {
        return Err(Error::InvalidHyperparameter("no effects to summarise".into()));
    }
    if beta_hat.iter().any(|b| !b.is_finite()) {
        return Err(Error::NonFinite("flat-prior effect estimates".into()));
    }
    let c = beta_hat.len();
    let m0 = beta_hat.iter().sum::<f64>() / c as f64;
    let (mut big_m0, mut v, mut fallback) = if c == 1 {
        let b2 = beta_hat[0] * beta_hat[0];
        (b2, b2, Some(HyperFallback::BinaryCovariate))
    } else {
        let max = beta_hat.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let min = beta_hat.iter().copied().fold(f64::INFINITY, f64::min);
        let v = beta_hat.iter().map(|b| (b - m0).powi(2)).sum::<f64>() / (c - 1) as f64;
        ((max - min).powi(2), v, None)
    };
    let floor = 1e-8 * (1.0 + m0 * m0);
    if v < floor || big_m0 < floor {
        v = v.max(floor);
        big_m0 = big_m0.max(floor);
        fallback = Some(HyperFallback::DegenerateSpread);
    }
    Ok(EmpiricalHyper {
        m0,
        big_m0,
        v,
        psi: v / nu,
        fallback,
    })
}

/// Inverse-gamma hyperprior on the spike variance whose mean is `V / nu`.
/// Returns `(g0, G0)`.
pub fn random_psi_hyperparams(v: f64, nu: f64, g0: f64) -> Result<(f64, f64)> {
    if !(g0 > 2.0) {
        return Err(Error::InvalidHyperparameter(format!(
            "g0 must exceed 2 for a finite prior variance, got {g0}"
        )));
    }
    if !(v > 0.0) || !(nu > 0.0) {
        return Err(Error::InvalidHyperparameter(format!(
            "V and nu must be positive, got V = {v}, nu = {nu}"
        )));
    }
    Ok((g0, v / nu * (g0 - 1.0)))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "mode", rename_all = "snake_case")]
pub enum PsiMode {
    Fixed { psi: f64 },
    Random { g0: f64, big_g0: f64 },
}

impl PsiMode {
    /// Fixed value, or the prior mean `G0 / (g0 - 1)` in random mode.
    pub fn expected(&self) -> f64 {
        match *self {
            PsiMode::Fixed { psi } => psi,
            PsiMode::Random { g0, big_g0 } => big_g0 / (g0 - 1.0),
        }
    }

    pub fn kind(&self) -> PsiModeKind {
        match self {
            PsiMode::Fixed { .. } => PsiModeKind::Fixed,
            PsiMode::Random { .. } => PsiModeKind::Random,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PsiModeKind {
    Fixed,
    Random,
}

impl std::fmt::Display for PsiModeKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            PsiModeKind::Fixed => "fixed",
            PsiModeKind::Random => "random",
        })
    }
}

impl std::str::FromStr for PsiModeKind {
    type Err = String;
    fn from_str(s: &str) -> std::result::Result<Self, String> {
        match s {
            "fixed" => Ok(PsiModeKind::Fixed),
            "random" => Ok(PsiModeKind::Random),
            other => Err(format!("unknown psi mode `{other}` (expected fixed|random)")),
        }
    }
}

/// Mixture prior on the level effects of one covariate. Component 0 is
/// centred at zero; components `1..=nonzero_components` have free means.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MixturePriorSpec {
    pub covariate: String,
    /// `L`: number of components with a free mean (defaults to `c_j`).
    pub nonzero_components: usize,
    /// Symmetric Dirichlet concentration on the `L + 1` weights.
    pub e0: f64,
    /// Mean of the normal hyperprior on the component means.
    pub m0: f64,
    /// Variance of the normal hyperprior on the component means.
    pub big_m0: f64,
    /// Empirical variance of the flat-prior effect estimates.
    pub v: f64,
    pub nu: f64,
    pub psi: PsiMode,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub fallback: Option<HyperFallback>,
}

impl MixturePriorSpec {
    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(Error::InvalidHyperparameter(format!("{}: {msg}", self.covariate)));
        if !(self.e0 > 0.0 && self.e0 < 1.0) {
            return bad(format!("e0 must lie in (0, 1), got {}", self.e0));
        }
        if !(self.big_m0 > 0.0 && self.big_m0.is_finite()) {
            return bad(format!("M0 must be positive, got {}", self.big_m0));
        }
        if !self.m0.is_finite() {
            return bad("m0 is not finite".into());
        }
        match self.psi {
            PsiMode::Fixed { psi } if !(psi > 0.0 && psi.is_finite()) => {
                bad(format!("psi must be positive, got {psi}"))
            }
            PsiMode::Random { g0, .. } if !(g0 > 2.0) => bad(format!("g0 must exceed 2, got {g0}")),
            PsiMode::Random { big_g0, .. } if !(big_g0 > 0.0 && big_g0.is_finite()) => {
                bad(format!("G0 must be positive, got {big_g0}"))
            }
            _ => Ok(()),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GlobalPriorSpec {
    pub mixtures: Vec<MixturePriorSpec>,
    /// Prior variance of the intercept.
    pub intercept_variance: f64,
    /// Prior variance of each continuous effect.
    pub continuous_variance: f64,
    /// Inverse-gamma shape of the error-variance prior (`s0`).
    pub error_shape: f64,
    /// Inverse-gamma scale of the error-variance prior (`S0`).
    pub error_scale: f64,
}

impl GlobalPriorSpec {
    pub fn validate(&self) -> Result<()> {
        if !(self.intercept_variance > 0.0) || !(self.continuous_variance > 0.0) {
            return Err(Error::InvalidHyperparameter(
                "intercept and continuous prior variances must be positive".into(),
            ));
        }
        if self.error_shape < 0.0 || self.error_scale < 0.0 {
            return Err(Error::InvalidHyperparameter(
                "error-variance prior parameters must be nonnegative".into(),
            ));
        }
        self.mixtures.iter().try_for_each(MixturePriorSpec::validate)
    }
}

/// Per-covariate departures from the global prior settings.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CovariateOverride {
    pub nu: Option<f64>,
    pub e0: Option<f64>,
    pub psi_mode: Option<PsiModeKind>,
    /// Explicit fixed spike variance, bypassing `V / nu`.
    pub psi: Option<f64>,
    /// Number of free-mean components `L`.
    pub components: Option<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PriorConfig {
    pub nu: f64,
    pub e0: f64,
    pub psi_mode: PsiModeKind,
    pub g0: f64,
    pub b0: f64,
    /// One spike variance for all covariates, from the pooled estimates.
    pub global_psi: bool,
    pub overrides: BTreeMap<String, CovariateOverride>,
}

impl Default for PriorConfig {
    fn default() -> Self {
        PriorConfig {
            nu: DEFAULT_NU,
            e0: DEFAULT_E0,
            psi_mode: PsiModeKind::Fixed,
            g0: DEFAULT_G0,
            b0: DEFAULT_B0,
            global_psi: false,
            overrides: BTreeMap::new(),
        }
    }
}

impl PriorConfig {
    pub fn with_nu(mut self, nu: f64) -> Self {
        self.nu = nu;
        self
    }

    pub fn with_psi_mode(mut self, mode: PsiModeKind) -> Self {
        self.psi_mode = mode;
        self
    }
}

/// Assembles the full prior from the flat-prior estimates.
pub fn build_prior(config: &PriorConfig, data: &Dataset, flat: &FlatFit) -> Result<GlobalPriorSpec> {
    if let Some(name) = config
        .overrides
        .keys()
        .find(|k| !data.categorical().iter().any(|c| c.name() == k.as_str()))
    {
        return Err(Error::InvalidHyperparameter(format!(
            "override for unknown covariate `{name}`"
        )));
    }
    let pooled_v = if config.global_psi {
        let all: Vec<f64> = flat.coefficients.effects.iter().flatten().copied().collect();
        Some(empirical_hyperparams(&all, 1.0)?.v)
    } else {
        None
    };

    let mut mixtures = Vec::with_capacity(data.categorical().len());
    for (cov, beta_hat) in data.categorical().iter().zip(&flat.coefficients.effects) {
        let ov = config.overrides.get(cov.name()).cloned().unwrap_or_default();
        let nu = ov.nu.unwrap_or(config.nu);
        let mut hyper = empirical_hyperparams(beta_hat, nu)?;
        if let Some(v) = pooled_v {
            hyper.v = v;
            hyper.psi = v / nu;
        }
        let psi = match (ov.psi, ov.psi_mode.unwrap_or(config.psi_mode)) {
            (Some(psi), _) => PsiMode::Fixed { psi },
            (None, PsiModeKind::Fixed) => PsiMode::Fixed { psi: hyper.psi },
            (None, PsiModeKind::Random) => {
                let (g0, big_g0) = random_psi_hyperparams(hyper.v, nu, config.g0)?;
                PsiMode::Random { g0, big_g0 }
            }
        };
        if let Some(fb) = hyper.fallback {
            log::warn!("covariate `{}`: hyperparameter fallback {fb:?}", cov.name());
        }
        mixtures.push(MixturePriorSpec {
            covariate: cov.name().to_string(),
            nonzero_components: ov.components.unwrap_or(cov.n_effects()),
            e0: ov.e0.unwrap_or(config.e0),
            m0: hyper.m0,
            big_m0: hyper.big_m0,
            v: hyper.v,
            nu,
            psi,
            fallback: hyper.fallback,
        });
    }
    let spec = GlobalPriorSpec {
        mixtures,
        intercept_variance: config.b0,
        continuous_variance: config.b0,
        error_shape: 0.0,
        error_scale: 0.0,
    };
    spec.validate()?;
    Ok(spec)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::{build_design, CategoricalCovariate};

    fn close(a: f64, b: f64) -> bool {
        (a - b).abs() <= 1e-12 * (1.0 + b.abs())
    }

    #[test]
    fn hyperparams_for_zero_one_two() {
        let h = empirical_hyperparams(&[0.0, 1.0, 2.0], 100.0).unwrap();
        assert!(close(h.m0, 1.0) && close(h.big_m0, 4.0) && close(h.v, 1.0) && close(h.psi, 0.01));
        assert_eq!(h.fallback, None);
    }

    #[test]
    fn hyperparams_for_symmetric_pair() {
        let h = empirical_hyperparams(&[-1.0, 1.0], 10.0).unwrap();
        assert!(close(h.m0, 0.0) && close(h.big_m0, 4.0) && close(h.v, 2.0) && close(h.psi, 0.2));
    }

    #[test]
    fn all_equal_estimates_trigger_floor() {
        let h = empirical_hyperparams(&[5.0, 5.0, 5.0], 100.0).unwrap();
        assert_eq!(h.fallback, Some(HyperFallback::DegenerateSpread));
        let floor = 1e-8 * 26.0;
        assert!(close(h.v, floor) && close(h.big_m0, floor));
        assert!(h.psi > 0.0);
    }

    #[test]
    fn binary_covariate_uses_squared_effect() {
        let h = empirical_hyperparams(&[0.5], 10.0).unwrap();
        assert_eq!(h.fallback, Some(HyperFallback::BinaryCovariate));
        assert!(close(h.v, 0.25) && close(h.big_m0, 0.25) && close(h.psi, 0.025));
    }

    #[test]
    fn random_psi_scale() {
        let (g0, big_g0) = random_psi_hyperparams(1.0, 1e3, 100.0).unwrap();
        assert!(close(big_g0, 0.099));
        assert!(close(big_g0 / (g0 - 1.0), 0.001));
        let (_, big_g0) = random_psi_hyperparams(2.0, 10.0, 100.0).unwrap();
        assert!(close(big_g0, 19.8));
        assert!(random_psi_hyperparams(1.0, 10.0, 2.0).is_err());
        assert!(random_psi_hyperparams(0.0, 10.0, 100.0).is_err());
    }

    #[test]
    fn random_mean_equals_fixed_psi() {
        for &(v, nu) in &[(1.0f64, 1e3), (0.37, 10.0), (12.5, 1e6)] {
            let h = empirical_hyperparams(&[0.0, v.sqrt() * 2f64.sqrt()], nu).unwrap();
            let (g0, big_g0) = random_psi_hyperparams(h.v, nu, 100.0).unwrap();
            let mode = PsiMode::Random { g0, big_g0 };
            assert!(close(mode.expected(), h.psi));
            // prior sd = mean / sqrt(g0 - 2), roughly a tenth of the mean
            let sd = mode.expected() / (g0 - 2.0).sqrt();
            assert!((sd / mode.expected() - 1.0 / 9.899).abs() < 1e-3);
        }
    }

    fn tiny_dataset(y: Vec<f64>, obs: Vec<usize>, levels: usize) -> Dataset {
        let names = (0..levels).map(|i| i.to_string()).collect();
        let cov = CategoricalCovariate::new("a", names, obs).unwrap();
        Dataset::new(y, vec![cov], vec![]).unwrap()
    }

    #[test]
    fn flat_fit_interpolates_noiseless_data() {
        let obs: Vec<usize> = (0..12).map(|i| i % 3).collect();
        let truth = [0.5, -1.0, 2.0];
        let y: Vec<f64> = obs
            .iter()
            .map(|&l| truth[0] + if l == 0 { 0.0 } else { truth[l] })
            .collect();
        let data = tiny_dataset(y, obs, 3);
        let fit = flat_fit(&build_design(&data).unwrap(), data.response()).unwrap();
        let got = fit.coefficients.flatten();
        for (g, t) in got.iter().zip(truth) {
            assert!((g - t).abs() < 1e-12, "{got:?}");
        }
        assert!(fit.rss < 1e-20);
    }

    #[test]
    fn intercept_only_is_sample_mean() {
        let x = nalgebra::DMatrix::from_element(3, 1, 1.0);
        let (beta, rss) = least_squares(&x, &[1.0, 2.0, 3.0]).unwrap();
        assert!((beta[0] - 2.0).abs() < 1e-14);
        assert!((rss - 2.0).abs() < 1e-12);
    }

    #[test]
    fn duplicated_column_is_rank_deficient() {
        let x = nalgebra::DMatrix::from_fn(5, 3, |i, j| if j == 2 { i as f64 } else if j == 1 { i as f64 } else { 1.0 });
        assert!(matches!(
            least_squares(&x, &[1.0, 2.0, 0.5, 3.0, 4.0]),
            Err(Error::RankDeficient { rank: 2, columns: 3 })
        ));
    }

    #[test]
    fn build_prior_applies_overrides_and_global_psi() {
        let obs: Vec<usize> = (0..40).map(|i| i % 4).collect();
        let y: Vec<f64> = obs.iter().enumerate().map(|(i, &l)| l as f64 + 0.01 * (i % 7) as f64).collect();
        let data = tiny_dataset(y, obs, 4);
        let flat = flat_fit(&build_design(&data).unwrap(), data.response()).unwrap();

        let mut config = PriorConfig::default().with_psi_mode(PsiModeKind::Random);
        let spec = build_prior(&config, &data, &flat).unwrap();
        let mix = &spec.mixtures[0];
        assert_eq!(mix.nonzero_components, 3);
        assert!(matches!(mix.psi, PsiMode::Random { g0, .. } if g0 == DEFAULT_G0));
        assert!(close(mix.psi.expected(), mix.v / DEFAULT_NU));

        config.overrides.insert(
            "a".into(),
            CovariateOverride { nu: Some(10.0), psi_mode: Some(PsiModeKind::Fixed), ..Default::default() },
        );
        let spec = build_prior(&config, &data, &flat).unwrap();
        assert!(close(spec.mixtures[0].psi.expected(), spec.mixtures[0].v / 10.0));

        config.overrides.insert("nope".into(), CovariateOverride::default());
        assert!(build_prior(&config, &data, &flat).is_err());
    }

    #[test]
    fn scale_equivariance() {
        let b = [0.3, -1.2, 0.7, 2.2];
        let h = empirical_hyperparams(&b, 50.0).unwrap();
        let s = 3.5;
        let scaled: Vec<f64> = b.iter().map(|x| x * s).collect();
        let hs = empirical_hyperparams(&scaled, 50.0).unwrap();
        assert!(close(hs.m0, s * h.m0));
        assert!(close(hs.big_m0, s * s * h.big_m0));
        assert!(close(hs.v, s * s * h.v));
        assert!(close(hs.psi, s * s * h.psi));
    }
}
