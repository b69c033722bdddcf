//! Refitting a selected partition under a flat normal prior, posterior
//! summaries and information criteria.
//!
//! Deviance and criteria conventions:
//!
//! ```text
//! D(beta, sigma2) = N ln(2 pi sigma2) + RSS(beta) / sigma2
//! DIC     = mean(D) + pD,   pD = mean(D) - D(posterior mean of beta, sigma2)
//! BICmcmc = -2 max_m log L(theta_m) + d ln N,   d = design columns + 1
//! ```

use std::f64::consts::PI;

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::data::{CoefficientLayout, CoefficientVector, Column, Dataset, DesignMatrix};
use crate::dist;
use crate::error::{Error, Result};
use crate::gibbs::{McmcTrace, Regression, RegressionTrace};
use crate::partition::LevelPartition;
use crate::prior::{least_squares, DEFAULT_B0};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum FusedColumn {
    Intercept,
    /// Sum of the dummy columns of the elements in block `block` of the
    /// covariate's partition.
    Block { covariate: usize, block: usize },
    Continuous(usize),
}

/// Design of a fused model: each nonzero block of a covariate becomes one
/// column, the zero block joins the baseline.
#[derive(Debug, Clone)]
pub struct FusedDesign {
    matrix: DMatrix<f64>,
    columns: Vec<FusedColumn>,
    partitions: Vec<LevelPartition>,
    layout: CoefficientLayout,
}

impl FusedDesign {
    pub fn matrix(&self) -> &DMatrix<f64> {
        &self.matrix
    }

    pub fn columns(&self) -> &[FusedColumn] {
        &self.columns
    }

    pub fn partitions(&self) -> &[LevelPartition] {
        &self.partitions
    }

    pub fn n_columns(&self) -> usize {
        self.columns.len()
    }

    /// Layout of the unfused model.
    pub fn full_layout(&self) -> &CoefficientLayout {
        &self.layout
    }

    /// Maps fused coefficients back to one effect per level; levels in the
    /// zero block get 0.
    pub fn expand(&self, fused: &[f64]) -> Result<CoefficientVector> {
        if fused.len() != self.columns.len() {
            return Err(Error::LayoutMismatch {
                expected: self.columns.len(),
                got: fused.len(),
            });
        }
        let mut out = CoefficientVector::zeros(&self.layout);
        for (col, &b) in self.columns.iter().zip(fused) {
            match *col {
                FusedColumn::Intercept => out.intercept = b,
                FusedColumn::Block { covariate, block } => {
                    for &e in &self.partitions[covariate].blocks()[block] {
                        out.effects[covariate][e - 1] = b;
                    }
                }
                FusedColumn::Continuous(q) => out.continuous[q] = b,
            }
        }
        Ok(out)
    }
}

pub fn build_fused_design(design: &DesignMatrix, partitions: &[LevelPartition]) -> Result<FusedDesign> {
    let layout = design.layout().clone();
    if partitions.len() != layout.effects.len() {
        return Err(Error::DimensionMismatch(format!(
            "{} partitions for {} categorical covariates",
            partitions.len(),
            layout.effects.len()
        )));
    }
    for (p, &c) in partitions.iter().zip(&layout.effects) {
        if p.n_elements() != c + 1 {
            return Err(Error::InvalidPartition(format!(
                "partition of `{}` covers {} elements, the covariate has {}",
                p.covariate,
                p.n_elements(),
                c + 1
            )));
        }
    }
    // design column of each (covariate, element)
    let mut element_column: Vec<Vec<usize>> = layout.effects.iter().map(|&c| vec![0; c + 1]).collect();
    let mut continuous_column = vec![0; layout.continuous];
    for (k, col) in design.columns().iter().enumerate() {
        match *col {
            Column::Level { covariate, element, .. } => element_column[covariate][element] = k,
            Column::Continuous(q) => continuous_column[q] = k,
            Column::Intercept => {}
        }
    }

    let mut columns = vec![FusedColumn::Intercept];
    for (j, p) in partitions.iter().enumerate() {
        columns.extend((1..p.n_blocks()).map(|block| FusedColumn::Block { covariate: j, block }));
    }
    columns.extend((0..layout.continuous).map(FusedColumn::Continuous));

    let x = design.matrix();
    let mut matrix = DMatrix::zeros(x.nrows(), columns.len());
    for (c, col) in columns.iter().enumerate() {
        match *col {
            FusedColumn::Intercept => matrix.column_mut(c).fill(1.0),
            FusedColumn::Block { covariate, block } => {
                for &e in &partitions[covariate].blocks()[block] {
                    let src = x.column(element_column[covariate][e]);
                    let mut dst = matrix.column_mut(c);
                    dst += src;
                }
            }
            FusedColumn::Continuous(q) => matrix.column_mut(c).copy_from(&x.column(continuous_column[q])),
        }
    }
    Ok(FusedDesign {
        matrix,
        columns,
        partitions: partitions.to_vec(),
        layout,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RefitConfig {
    /// Prior variance of every coefficient.
    pub b0: f64,
    pub burn_in: usize,
    pub iterations: usize,
    pub seed: u64,
    pub stream: u64,
}

impl Default for RefitConfig {
    fn default() -> Self {
        RefitConfig {
            b0: DEFAULT_B0,
            burn_in: 1_000,
            iterations: 3_000,
            seed: 0,
            stream: 0,
        }
    }
}

/// Gibbs sampler for `y ~ N(X beta, sigma2)` with `beta ~ N(0, b0 I)` and
/// `p(sigma2) ~ 1/sigma2`, started at the least-squares residual variance.
pub fn refit_flat(x: &DMatrix<f64>, y: &[f64], config: &RefitConfig) -> Result<RegressionTrace> {
    if config.iterations == 0 {
        return Err(Error::InvalidConfig("iterations must be at least 1".into()));
    }
    if !(config.b0 > 0.0) {
        return Err(Error::InvalidHyperparameter(format!("B0 must be positive, got {}", config.b0)));
    }
    let (_, rss) = least_squares(x, y)?;
    let (n, p) = x.shape();
    let mut sigma2 = rss / (n - p) as f64;
    if !(sigma2 > 0.0) {
        return Err(Error::DegenerateResiduals);
    }
    let reg = Regression::new(x.clone(), y)?;
    let prior_mean = vec![0.0; p];
    let prior_var = vec![config.b0; p];
    let mut rng = dist::sampler_rng(config.seed, config.stream);
    let mut trace = RegressionTrace::new(p);
    for m in 0..config.burn_in + config.iterations {
        let beta = reg.draw_beta(&mut rng, sigma2, &prior_mean, &prior_var)?;
        sigma2 = reg.draw_sigma2(&mut rng, beta.as_slice(), 0.0, 0.0)?.0;
        if m >= config.burn_in {
            trace.push(beta.as_slice(), sigma2);
        }
    }
    Ok(trace)
}

/// Posterior mean of the coefficients under the fusion prior, averaging over
/// all visited partitions.
pub fn model_averaged_estimates(trace: &McmcTrace) -> Result<CoefficientVector> {
    if trace.n_draws() == 0 {
        return Err(Error::EmptyTrace);
    }
    CoefficientVector::unflatten(trace.regression.mean_beta().as_slice(), &trace.layout)
}

pub const MIN_HPD_DRAWS: usize = 10;

/// Shortest interval covering `ceil(level * n)` of the sorted draws.
pub fn hpd_interval(draws: &[f64], level: f64) -> Result<(f64, f64)> {
    if draws.len() < MIN_HPD_DRAWS {
        return Err(Error::TooFewDraws {
            got: draws.len(),
            min: MIN_HPD_DRAWS,
        });
    }
    if !(level > 0.0 && level <= 1.0) {
        return Err(Error::InvalidConfig(format!("HPD level must lie in (0, 1], got {level}")));
    }
    let mut sorted = draws.to_vec();
    sorted.sort_unstable_by(f64::total_cmp);
    let n = sorted.len();
    let m = ((level * n as f64).ceil() as usize).clamp(1, n);
    let (mut lo, mut hi) = (sorted[0], sorted[m - 1]);
    for i in 1..=n - m {
        if sorted[i + m - 1] - sorted[i] < hi - lo {
            lo = sorted[i];
            hi = sorted[i + m - 1];
        }
    }
    Ok((lo, hi))
}

/// `-2 log L` of the Gaussian likelihood.
pub fn deviance(n: usize, rss: f64, sigma2: f64) -> f64 {
    n as f64 * (2.0 * PI * sigma2).ln() + rss / sigma2
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Dic {
    pub dic: f64,
    pub p_d: f64,
    pub mean_deviance: f64,
    pub deviance_at_mean: f64,
}

pub fn dic(trace: &RegressionTrace, reg: &Regression) -> Result<Dic> {
    if trace.n_draws() == 0 {
        return Err(Error::EmptyTrace);
    }
    let n = reg.n_obs();
    let mean_deviance = (0..trace.n_draws())
        .map(|m| deviance(n, reg.rss(trace.beta(m)), trace.sigma2()[m]))
        .sum::<f64>()
        / trace.n_draws() as f64;
    let beta_bar = trace.mean_beta();
    let deviance_at_mean = deviance(n, reg.rss(beta_bar.as_slice()), trace.mean_sigma2());
    let p_d = mean_deviance - deviance_at_mean;
    Ok(Dic {
        dic: mean_deviance + p_d,
        p_d,
        mean_deviance,
        deviance_at_mean,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BicMcmc {
    pub bic: f64,
    pub max_log_likelihood: f64,
    /// Index of the draw attaining the maximum.
    pub draw: usize,
    /// Free parameters: coefficients plus the error variance.
    pub parameters: usize,
}

pub fn bic_from_max(max_log_likelihood: f64, parameters: usize, n: usize) -> f64 {
    -2.0 * max_log_likelihood + parameters as f64 * (n as f64).ln()
}

pub fn bic_mcmc(trace: &RegressionTrace, reg: &Regression) -> Result<BicMcmc> {
    if trace.n_draws() == 0 {
        return Err(Error::EmptyTrace);
    }
    let n = reg.n_obs();
    let (draw, max_log_likelihood) = (0..trace.n_draws())
        .map(|m| (m, -0.5 * deviance(n, reg.rss(trace.beta(m)), trace.sigma2()[m])))
        .fold((0, f64::NEG_INFINITY), |best, cur| if cur.1 > best.1 { cur } else { best });
    let parameters = trace.n_coef() + 1;
    Ok(BicMcmc {
        bic: bic_from_max(max_log_likelihood, parameters, n),
        max_log_likelihood,
        draw,
        parameters,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CoefficientSummary {
    pub name: String,
    pub mean: f64,
    pub hpd_lower: f64,
    pub hpd_upper: f64,
    /// Level labels sharing this coefficient (empty for non-level columns).
    pub members: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GroupCount {
    pub covariate: String,
    /// All blocks, the zero block included.
    pub groups: usize,
    /// Blocks other than the zero block.
    pub nonzero_groups: usize,
    pub levels: usize,
}

/// Conventions behind the reported criteria, kept with every summary.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CriteriaConventions {
    pub deviance: String,
    pub dic: String,
    pub bic_mcmc: String,
    pub hpd: String,
}

impl Default for CriteriaConventions {
    fn default() -> Self {
        CriteriaConventions {
            deviance: "D = N ln(2 pi sigma2) + RSS / sigma2".into(),
            dic: "DIC = mean(D) + pD, pD = mean(D) - D(posterior mean of beta and sigma2)".into(),
            bic_mcmc: "BICmcmc = -2 max log L over draws + d ln N, d = coefficients + 1 (sigma2)".into(),
            hpd: "shortest window containing ceil(level * n) sorted draws".into(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelFitSummary {
    pub coefficients: Vec<CoefficientSummary>,
    pub sigma2_mean: f64,
    pub sigma2_hpd: (f64, f64),
    pub hpd_level: f64,
    pub dic: Dic,
    pub bic_mcmc: BicMcmc,
    pub groups: Vec<GroupCount>,
    pub draws: usize,
    pub conventions: CriteriaConventions,
}

/// A refitted model: fused design, flat-prior draws, and the posterior mean
/// expanded to one effect per level.
#[derive(Debug, Clone)]
pub struct Refit {
    pub fused: FusedDesign,
    pub trace: RegressionTrace,
    pub estimate: CoefficientVector,
    pub summary: ModelFitSummary,
}

pub fn summarize(
    fused: &FusedDesign,
    data: &Dataset,
    trace: &RegressionTrace,
    reg: &Regression,
    hpd_level: f64,
) -> Result<ModelFitSummary> {
    let mean = trace.mean_beta();
    let coefficients = fused
        .columns()
        .iter()
        .enumerate()
        .map(|(k, col)| {
            let (lo, hi) = hpd_interval(&trace.coefficient(k), hpd_level)?;
            let (name, members) = match *col {
                FusedColumn::Intercept => ("(intercept)".to_string(), vec![]),
                FusedColumn::Block { covariate, block } => {
                    let cov = &data.categorical()[covariate];
                    let members: Vec<String> = fused.partitions()[covariate].blocks()[block]
                        .iter()
                        .map(|&e| cov.element_label(e).to_string())
                        .collect();
                    (format!("{}[{}]", cov.name(), members.join("+")), members)
                }
                FusedColumn::Continuous(q) => (data.continuous()[q].name().to_string(), vec![]),
            };
            if !(lo <= mean[k] && mean[k] <= hi) {
                log::warn!("{name}: posterior mean {} outside its HPD interval [{lo}, {hi}]", mean[k]);
            }
            Ok(CoefficientSummary {
                name,
                mean: mean[k],
                hpd_lower: lo,
                hpd_upper: hi,
                members,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    let groups = fused
        .partitions()
        .iter()
        .map(|p| GroupCount {
            covariate: p.covariate.clone(),
            groups: p.n_blocks(),
            nonzero_groups: p.n_nonzero_groups(),
            levels: p.n_elements(),
        })
        .collect();
    Ok(ModelFitSummary {
        coefficients,
        sigma2_mean: trace.mean_sigma2(),
        sigma2_hpd: hpd_interval(trace.sigma2(), hpd_level)?,
        hpd_level,
        dic: dic(trace, reg)?,
        bic_mcmc: bic_mcmc(trace, reg)?,
        groups,
        draws: trace.n_draws(),
        conventions: CriteriaConventions::default(),
    })
}

/// Fuses the design by `partitions`, refits it and summarises the draws.
pub fn refit_partition(
    data: &Dataset,
    design: &DesignMatrix,
    partitions: &[LevelPartition],
    config: &RefitConfig,
) -> Result<Refit> {
    let fused = build_fused_design(design, partitions)?;
    let trace = refit_flat(fused.matrix(), data.response(), config)?;
    let reg = Regression::new(fused.matrix().clone(), data.response())?;
    let summary = summarize(&fused, data, &trace, &reg, 0.95)?;
    let estimate = fused.expand(trace.mean_beta().as_slice())?;
    Ok(Refit {
        fused,
        trace,
        estimate,
        summary,
    })
}
