//! Replicated simulation study: synthetic data with known level groups, the
//! fusion fit over a grid of prior settings, both selection rules, refits and
//! every metric against the truth.
//!
//! Each replication and each `(replication, cell)` pair is an independent
//! task with its own seed, so results do not depend on scheduling or on the
//! number of worker threads.

use std::path::Path;

use nalgebra::DMatrix;
use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::data::{build_design, CategoricalCovariate, CoefficientVector, Dataset};
use crate::dist::{self, derive_seed};
use crate::error::{Error, Result};
use crate::gibbs::{run_mcmc, SamplerConfig};
use crate::metrics::{cluster_metrics, mse, mspe, ClusterMetrics};
use crate::partition::{
    accumulate_cocluster, most_frequent_partition, select_by_pam, LevelPartition,
};
use crate::prior::{build_prior, flat_fit, PriorConfig, PsiModeKind};
use crate::refit::{model_averaged_estimates, refit_partition, RefitConfig};
use crate::report::{fmt_f64, fmt_opt, write_csv};

/// Environment variable capping the number of worker threads.
pub const THREADS_ENV: &str = "EFFECTFUSE_THREADS";

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Noise {
    Variance(f64),
    Sd(f64),
}

impl Noise {
    pub fn sd(&self) -> f64 {
        match *self {
            Noise::Variance(v) => v.sqrt(),
            Noise::Sd(s) => s,
        }
    }
}

/// A categorical covariate with uniformly drawn levels; level 0 is the
/// baseline and `effects[k - 1]` is the effect of level `k`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimCovariate {
    pub name: String,
    pub effects: Vec<f64>,
}

impl SimCovariate {
    pub fn levels(&self) -> usize {
        self.effects.len() + 1
    }

    /// Elements with equal true effects (the baseline has effect 0).
    pub fn true_partition(&self) -> LevelPartition {
        let values: Vec<u64> = std::iter::once(0.0f64)
            .chain(self.effects.iter().copied())
            .map(|v| (v + 0.0).to_bits())
            .collect();
        LevelPartition::from_labels(self.name.clone(), &values)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct StudyCell {
    pub nu: f64,
    pub psi_mode: PsiModeKind,
}

impl StudyCell {
    pub fn grid(nus: &[f64], modes: &[PsiModeKind]) -> Vec<StudyCell> {
        modes
            .iter()
            .flat_map(|&psi_mode| nus.iter().map(move |&nu| StudyCell { nu, psi_mode }))
            .collect()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SimDesign {
    pub n: usize,
    /// Size of the independent test set used for prediction error.
    pub n_test: usize,
    pub replications: usize,
    pub intercept: f64,
    pub noise: Noise,
    pub covariates: Vec<SimCovariate>,
    pub cells: Vec<StudyCell>,
    /// Base prior settings; `nu` and the spike mode are set per cell.
    #[serde(default)]
    pub prior: PriorConfig,
    pub sampler: SamplerConfig,
    pub refit: RefitConfig,
    /// Largest PAM cluster count (default per covariate when absent).
    #[serde(default)]
    pub k_max: Option<usize>,
    pub seed: u64,
}

/// Effects `0, 0.5, ..., 2.5` over 100 levels in contiguous runs of
/// 17, 17, 17, 17, 16, 16 levels, the baseline opening the first run.
pub fn hundred_level_effects() -> Vec<f64> {
    let runs = [17usize, 17, 17, 17, 16, 16];
    let all: Vec<f64> = runs
        .iter()
        .enumerate()
        .flat_map(|(g, &len)| std::iter::repeat_n(0.5 * g as f64, len))
        .collect();
    all[1..].to_vec()
}

pub fn default_design() -> SimDesign {
    let nus = [10.0, 1e2, 1e3, 1e4, 1e5, 1e6];
    SimDesign {
        n: 4000,
        n_test: 1000,
        replications: 100,
        intercept: 0.0,
        noise: Noise::Variance(0.5),
        covariates: vec![
            SimCovariate {
                name: "var1".into(),
                effects: vec![0.0, 0.0, 0.0, 0.5, 0.5, 0.5, 1.0, 1.0, 1.0],
            },
            SimCovariate {
                name: "var2".into(),
                effects: vec![0.0, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0, 1.0],
            },
            SimCovariate {
                name: "var3".into(),
                effects: vec![0.0; 9],
            },
            SimCovariate {
                name: "var4".into(),
                effects: hundred_level_effects(),
            },
        ],
        cells: StudyCell::grid(&nus, &[PsiModeKind::Fixed, PsiModeKind::Random]),
        prior: PriorConfig::default(),
        sampler: SamplerConfig::new(15_000, 15_000, 0),
        refit: RefitConfig::default(),
        k_max: None,
        seed: 20_180_701,
    }
}

/// Reduced preset: 20 replications of 2,000 observations, 5,000 draws after
/// 5,000 burn-in.
pub fn desk_design() -> SimDesign {
    SimDesign {
        n: 2000,
        replications: 20,
        sampler: SamplerConfig::new(5_000, 5_000, 0),
        ..default_design()
    }
}

impl SimDesign {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::InvalidConfig(m));
        if self.replications == 0 {
            return bad("replications must be at least 1".into());
        }
        if self.covariates.is_empty() || self.covariates.iter().any(|c| c.effects.is_empty()) {
            return bad("every covariate needs at least two levels".into());
        }
        let columns = 1 + self.covariates.iter().map(|c| c.effects.len()).sum::<usize>();
        if self.n <= columns {
            return bad(format!("n = {} does not exceed the {columns} design columns", self.n));
        }
        if self.n_test == 0 {
            return bad("n_test must be at least 1".into());
        }
        let sd = self.noise.sd();
        if !(sd > 0.0 && sd.is_finite()) {
            return bad(format!("noise scale must be positive, got {:?}", self.noise));
        }
        if self.cells.is_empty() {
            return bad("no (nu, psi mode) cells".into());
        }
        if let Some(c) = self.cells.iter().find(|c| !(c.nu > 0.0 && c.nu.is_finite())) {
            return Err(Error::InvalidHyperparameter(format!("nu must be positive, got {}", c.nu)));
        }
        self.sampler.validate()
    }

    pub fn true_partitions(&self) -> Vec<LevelPartition> {
        self.covariates.iter().map(SimCovariate::true_partition).collect()
    }

    pub fn true_coefficients(&self) -> CoefficientVector {
        CoefficientVector {
            intercept: self.intercept,
            effects: self.covariates.iter().map(|c| c.effects.clone()).collect(),
            continuous: vec![],
        }
    }
}

fn draw_records(design: &SimDesign, n: usize, seed: u64) -> (Vec<Vec<usize>>, Vec<f64>) {
    let mut rng = dist::sampler_rng(seed, 0);
    let levels: Vec<Vec<usize>> = design
        .covariates
        .iter()
        .map(|c| (0..n).map(|_| rng.random_range(0..c.levels())).collect())
        .collect();
    let sd = design.noise.sd();
    let y = (0..n)
        .map(|i| {
            let mean: f64 = design.intercept
                + design
                    .covariates
                    .iter()
                    .zip(&levels)
                    .map(|(c, l)| if l[i] == 0 { 0.0 } else { c.effects[l[i] - 1] })
                    .sum::<f64>();
            mean + sd * dist::std_normal(&mut rng)
        })
        .collect();
    (levels, y)
}

/// Training data of replication `rep` and the true coefficients.
pub fn generate_dataset(design: &SimDesign, rep: usize) -> Result<(Dataset, CoefficientVector)> {
    let (levels, y) = draw_records(design, design.n, derive_seed(design.seed, &[rep as u64, 0]));
    let categorical = design
        .covariates
        .iter()
        .zip(levels)
        .map(|(c, obs)| {
            let names = (0..c.levels()).map(|l| l.to_string()).collect();
            CategoricalCovariate::new(c.name.clone(), names, obs)
        })
        .collect::<Result<Vec<_>>>()?;
    Ok((Dataset::new(y, categorical, vec![])?, design.true_coefficients()))
}

/// Independent test design (full dummy coding) and responses of replication
/// `rep`. Levels unobserved in the test set simply get empty columns.
pub fn generate_test_set(design: &SimDesign, rep: usize) -> (DMatrix<f64>, Vec<f64>) {
    let n = design.n_test;
    let (levels, y) = draw_records(design, n, derive_seed(design.seed, &[rep as u64, 1]));
    let p = 1 + design.covariates.iter().map(|c| c.effects.len()).sum::<usize>();
    let mut x = DMatrix::zeros(n, p);
    x.column_mut(0).fill(1.0);
    let mut offset = 1;
    for (c, l) in design.covariates.iter().zip(&levels) {
        for (i, &level) in l.iter().enumerate() {
            if level > 0 {
                x[(i, offset + level - 1)] = 1.0;
            }
        }
        offset += c.effects.len();
    }
    (x, y)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Strategy {
    Most,
    Pam,
}

impl Strategy {
    pub fn as_str(&self) -> &'static str {
        match self {
            Strategy::Most => "most",
            Strategy::Pam => "pam",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Model {
    /// Flat-prior fit of the unfused model.
    Full,
    /// Flat-prior fit of the true partition.
    True,
    /// Posterior mean under the fusion prior.
    Averaged,
    /// Refit of the most frequent partition.
    Most,
    /// Refit of the PAM partition.
    Pam,
}

impl Model {
    pub fn as_str(&self) -> &'static str {
        match self {
            Model::Full => "full",
            Model::True => "true",
            Model::Averaged => "av",
            Model::Most => "most",
            Model::Pam => "pam",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClusterRow {
    pub rep: usize,
    pub cell: StudyCell,
    pub covariate: String,
    pub strategy: Strategy,
    pub metrics: ClusterMetrics,
    /// Draws visiting the most frequent partition.
    pub freq: Option<usize>,
    pub silhouette: Option<f64>,
    pub one_cluster_suspected: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EstimationRow {
    pub rep: usize,
    /// Absent for the fusion-free reference models.
    pub cell: Option<StudyCell>,
    pub model: Model,
    pub mse: f64,
    pub mspe: f64,
    pub dic: Option<f64>,
    pub bic_mcmc: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Failure {
    pub rep: usize,
    pub cell: Option<StudyCell>,
    pub message: String,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct StudyResult {
    pub clusters: Vec<ClusterRow>,
    pub estimation: Vec<EstimationRow>,
    pub failures: Vec<Failure>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClusterSummary {
    pub cell: StudyCell,
    pub covariate: String,
    pub strategy: Strategy,
    pub reps: usize,
    pub groups: f64,
    pub ar: f64,
    pub err: f64,
    /// Mean over replications where the rate is defined.
    pub fpr: Option<f64>,
    pub fnr: Option<f64>,
    pub freq: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EstimationSummary {
    pub cell: Option<StudyCell>,
    pub model: Model,
    pub reps: usize,
    pub mse: f64,
    pub mspe: f64,
    pub dic: Option<f64>,
    pub bic_mcmc: Option<f64>,
}

fn mean(xs: impl Iterator<Item = f64>) -> Option<f64> {
    let (s, n) = xs.fold((0.0, 0usize), |(s, n), x| (s + x, n + 1));
    (n > 0).then(|| s / n as f64)
}

impl StudyResult {
    /// Means over replications per `(cell, covariate, strategy)`.
    pub fn cluster_summary(&self) -> Vec<ClusterSummary> {
        let mut keys: Vec<(StudyCell, String, Strategy)> = Vec::new();
        for r in &self.clusters {
            let key = (r.cell, r.covariate.clone(), r.strategy);
            if !keys.contains(&key) {
                keys.push(key);
            }
        }
        keys.into_iter()
            .map(|(cell, covariate, strategy)| {
                let rows: Vec<&ClusterRow> = self
                    .clusters
                    .iter()
                    .filter(|r| r.cell == cell && r.covariate == covariate && r.strategy == strategy)
                    .collect();
                ClusterSummary {
                    cell,
                    covariate,
                    strategy,
                    reps: rows.len(),
                    groups: mean(rows.iter().map(|r| r.metrics.group_count as f64)).unwrap_or(f64::NAN),
                    ar: mean(rows.iter().map(|r| r.metrics.ar)).unwrap_or(f64::NAN),
                    err: mean(rows.iter().map(|r| r.metrics.err)).unwrap_or(f64::NAN),
                    fpr: mean(rows.iter().filter_map(|r| r.metrics.fpr)),
                    fnr: mean(rows.iter().filter_map(|r| r.metrics.fnr)),
                    freq: mean(rows.iter().filter_map(|r| r.freq.map(|f| f as f64))),
                }
            })
            .collect()
    }

    pub fn cluster_cell(&self, cell: StudyCell, covariate: &str, strategy: Strategy) -> Option<ClusterSummary> {
        self.cluster_summary()
            .into_iter()
            .find(|s| s.cell == cell && s.covariate == covariate && s.strategy == strategy)
    }

    /// Means over replications per `(cell, model)`.
    pub fn estimation_summary(&self) -> Vec<EstimationSummary> {
        let mut keys: Vec<(Option<StudyCell>, Model)> = Vec::new();
        for r in &self.estimation {
            if !keys.contains(&(r.cell, r.model)) {
                keys.push((r.cell, r.model));
            }
        }
        keys.into_iter()
            .map(|(cell, model)| {
                let rows: Vec<&EstimationRow> =
                    self.estimation.iter().filter(|r| r.cell == cell && r.model == model).collect();
                EstimationSummary {
                    cell,
                    model,
                    reps: rows.len(),
                    mse: mean(rows.iter().map(|r| r.mse)).unwrap_or(f64::NAN),
                    mspe: mean(rows.iter().map(|r| r.mspe)).unwrap_or(f64::NAN),
                    dic: mean(rows.iter().filter_map(|r| r.dic)),
                    bic_mcmc: mean(rows.iter().filter_map(|r| r.bic_mcmc)),
                }
            })
            .collect()
    }

    pub fn estimation_cell(&self, cell: Option<StudyCell>, model: Model) -> Option<EstimationSummary> {
        self.estimation_summary().into_iter().find(|s| s.cell == cell && s.model == model)
    }

    /// Row of replication `rep` for `(cell, model)`.
    pub fn estimation_row(&self, rep: usize, cell: Option<StudyCell>, model: Model) -> Option<&EstimationRow> {
        self.estimation.iter().find(|r| r.rep == rep && r.cell == cell && r.model == model)
    }
}

#[derive(Debug, Clone, Copy)]
enum Task {
    Reference(usize),
    Cell(usize, usize),
}

#[derive(Default)]
struct TaskOutput {
    clusters: Vec<ClusterRow>,
    estimation: Vec<EstimationRow>,
}

struct Replication {
    data: Dataset,
    truth: CoefficientVector,
    design: crate::data::DesignMatrix,
    flat: crate::prior::FlatFit,
    x_test: DMatrix<f64>,
    y_test: Vec<f64>,
}

fn prepare(design: &SimDesign, rep: usize) -> Result<Replication> {
    let (data, truth) = generate_dataset(design, rep)?;
    let dm = build_design(&data)?;
    let flat = flat_fit(&dm, data.response())?;
    let (x_test, y_test) = generate_test_set(design, rep);
    Ok(Replication {
        data,
        truth,
        design: dm,
        flat,
        x_test,
        y_test,
    })
}

fn refit_row(
    design: &SimDesign,
    r: &Replication,
    rep: usize,
    cell: Option<StudyCell>,
    model: Model,
    partitions: &[LevelPartition],
    seed_words: &[u64],
) -> Result<EstimationRow> {
    let config = RefitConfig {
        seed: derive_seed(design.seed, seed_words),
        ..design.refit.clone()
    };
    let fit = refit_partition(&r.data, &r.design, partitions, &config)?;
    Ok(EstimationRow {
        rep,
        cell,
        model,
        mse: mse(&r.truth, &fit.estimate)?,
        mspe: mspe(fit.estimate.flatten().as_slice(), &r.x_test, &r.y_test)?,
        dic: Some(fit.summary.dic.dic),
        bic_mcmc: Some(fit.summary.bic_mcmc.bic),
    })
}

fn run_reference(design: &SimDesign, rep: usize) -> Result<TaskOutput> {
    let r = prepare(design, rep)?;
    let singletons: Vec<LevelPartition> = design
        .covariates
        .iter()
        .map(|c| LevelPartition::singletons(c.name.clone(), c.levels()))
        .collect();
    let w = rep as u64;
    Ok(TaskOutput {
        clusters: vec![],
        estimation: vec![
            refit_row(design, &r, rep, None, Model::Full, &singletons, &[w, 3, 0])?,
            refit_row(design, &r, rep, None, Model::True, &design.true_partitions(), &[w, 3, 1])?,
        ],
    })
}

fn run_cell(design: &SimDesign, rep: usize, c: usize) -> Result<TaskOutput> {
    let cell = design.cells[c];
    let r = prepare(design, rep)?;
    let prior_config = design.prior.clone().with_nu(cell.nu).with_psi_mode(cell.psi_mode);
    let prior = build_prior(&prior_config, &r.data, &r.flat)?;
    let sampler = SamplerConfig {
        seed: derive_seed(design.seed, &[rep as u64, 2, c as u64]),
        ..design.sampler.clone()
    };
    let trace = run_mcmc(&r.design, r.data.response(), &prior, &r.flat, &sampler)?;

    let mut out = TaskOutput::default();
    let av = model_averaged_estimates(&trace)?;
    out.estimation.push(EstimationRow {
        rep,
        cell: Some(cell),
        model: Model::Averaged,
        mse: mse(&r.truth, &av)?,
        mspe: mspe(av.flatten().as_slice(), &r.x_test, &r.y_test)?,
        dic: None,
        bic_mcmc: None,
    });

    let truths = design.true_partitions();
    let mut most = Vec::with_capacity(truths.len());
    let mut pam = Vec::with_capacity(truths.len());
    for (alloc, truth) in trace.allocations.iter().zip(&truths) {
        let mf = most_frequent_partition(alloc)?;
        out.clusters.push(ClusterRow {
            rep,
            cell,
            covariate: alloc.covariate.clone(),
            strategy: Strategy::Most,
            metrics: cluster_metrics(truth, &mf.partition)?,
            freq: Some(mf.frequency),
            silhouette: None,
            one_cluster_suspected: false,
        });
        let sim = accumulate_cocluster(alloc)?.similarity()?;
        let k_max = design.k_max.map(|k| k.min(sim.n()));
        let sel = select_by_pam(&alloc.covariate, &sim, k_max)?;
        out.clusters.push(ClusterRow {
            rep,
            cell,
            covariate: alloc.covariate.clone(),
            strategy: Strategy::Pam,
            metrics: cluster_metrics(truth, &sel.partition)?,
            freq: None,
            silhouette: Some(sel.silhouette),
            one_cluster_suspected: sel.one_cluster_suspected,
        });
        most.push(mf.partition);
        pam.push(sel.partition);
    }
    let (w, cw) = (rep as u64, c as u64);
    out.estimation.push(refit_row(design, &r, rep, Some(cell), Model::Most, &most, &[w, 4, cw, 0])?);
    out.estimation.push(refit_row(design, &r, rep, Some(cell), Model::Pam, &pam, &[w, 4, cw, 1])?);
    Ok(out)
}

/// Worker-thread cap from [`THREADS_ENV`], if set to a positive integer.
pub fn thread_cap() -> Option<usize> {
    std::env::var(THREADS_ENV).ok()?.trim().parse().ok().filter(|&n| n > 0)
}

/// Runs the study with the thread cap taken from the environment.
pub fn run_study(design: &SimDesign) -> Result<StudyResult> {
    run_study_with_threads(design, thread_cap())
}

pub fn run_study_with_threads(design: &SimDesign, threads: Option<usize>) -> Result<StudyResult> {
    design.validate()?;
    let mut tasks = Vec::new();
    for rep in 0..design.replications {
        tasks.push(Task::Reference(rep));
        tasks.extend((0..design.cells.len()).map(|c| Task::Cell(rep, c)));
    }
    let total = tasks.len();
    let done = std::sync::atomic::AtomicUsize::new(0);
    let run = |task: &Task| {
        let (rep, cell, out) = match *task {
            Task::Reference(rep) => (rep, None, run_reference(design, rep)),
            Task::Cell(rep, c) => (rep, Some(design.cells[c]), run_cell(design, rep, c)),
        };
        let k = done.fetch_add(1, std::sync::atomic::Ordering::Relaxed) + 1;
        log::info!("task {k}/{total} done (replication {rep}, cell {cell:?})");
        (rep, cell, out)
    };
    let mut builder = rayon::ThreadPoolBuilder::new();
    if let Some(n) = threads {
        builder = builder.num_threads(n);
    }
    let pool = builder
        .build()
        .map_err(|e| Error::InvalidConfig(format!("thread pool: {e}")))?;
    let outputs: Vec<_> = pool.install(|| tasks.par_iter().map(run).collect());

    let mut result = StudyResult::default();
    for (rep, cell, out) in outputs {
        match out {
            Ok(o) => {
                result.clusters.extend(o.clusters);
                result.estimation.extend(o.estimation);
            }
            Err(e) => {
                log::warn!("replication {rep}, cell {cell:?} failed: {e}");
                result.failures.push(Failure {
                    rep,
                    cell,
                    message: e.to_string(),
                });
            }
        }
    }
    Ok(result)
}

fn cell_fields(cell: Option<StudyCell>) -> [String; 2] {
    match cell {
        Some(c) => [fmt_f64(c.nu), c.psi_mode.to_string()],
        None => ["NA".into(), "NA".into()],
    }
}

/// Writes the per-replication and averaged tables into `dir`.
pub fn write_study(result: &StudyResult, design: &SimDesign, dir: &Path) -> Result<()> {
    std::fs::create_dir_all(dir)?;
    let preamble = vec![
        format!("seed = {}", design.seed),
        format!("design = {}", serde_json::to_string(design).expect("design serialises")),
    ];
    let s = |v: &[&str]| v.iter().map(|x| x.to_string()).collect::<Vec<_>>();

    write_csv(
        &dir.join("cluster_summary.csv"),
        &preamble,
        &s(&["nu", "psi_mode", "covariate", "strategy", "reps", "freq", "groups", "ar", "err", "fpr", "fnr"]),
        result.cluster_summary().iter().map(|r| {
            let [nu, mode] = cell_fields(Some(r.cell));
            vec![
                nu,
                mode,
                r.covariate.clone(),
                r.strategy.as_str().into(),
                r.reps.to_string(),
                fmt_opt(r.freq),
                fmt_f64(r.groups),
                fmt_f64(r.ar),
                fmt_f64(r.err),
                fmt_opt(r.fpr),
                fmt_opt(r.fnr),
            ]
        }),
    )?;
    write_csv(
        &dir.join("cluster_runs.csv"),
        &preamble,
        &s(&[
            "rep", "nu", "psi_mode", "covariate", "strategy", "freq", "groups", "ar", "err", "fpr", "fnr", "tp", "fp",
            "tn", "fn", "silhouette", "one_cluster_suspected",
        ]),
        result.clusters.iter().map(|r| {
            let [nu, mode] = cell_fields(Some(r.cell));
            let m = &r.metrics;
            vec![
                r.rep.to_string(),
                nu,
                mode,
                r.covariate.clone(),
                r.strategy.as_str().into(),
                r.freq.map_or("NA".into(), |f| f.to_string()),
                m.group_count.to_string(),
                fmt_f64(m.ar),
                fmt_f64(m.err),
                fmt_opt(m.fpr),
                fmt_opt(m.fnr),
                m.pairs.tp.to_string(),
                m.pairs.fp.to_string(),
                m.pairs.tn.to_string(),
                m.pairs.fn_.to_string(),
                fmt_opt(r.silhouette),
                r.one_cluster_suspected.to_string(),
            ]
        }),
    )?;
    write_csv(
        &dir.join("estimation_summary.csv"),
        &preamble,
        &s(&["nu", "psi_mode", "model", "reps", "mse", "mspe", "dic", "bic_mcmc"]),
        result.estimation_summary().iter().map(|r| {
            let [nu, mode] = cell_fields(r.cell);
            vec![
                nu,
                mode,
                r.model.as_str().into(),
                r.reps.to_string(),
                fmt_f64(r.mse),
                fmt_f64(r.mspe),
                fmt_opt(r.dic),
                fmt_opt(r.bic_mcmc),
            ]
        }),
    )?;
    write_csv(
        &dir.join("estimation_runs.csv"),
        &preamble,
        &s(&["rep", "nu", "psi_mode", "model", "mse", "mspe", "dic", "bic_mcmc"]),
        result.estimation.iter().map(|r| {
            let [nu, mode] = cell_fields(r.cell);
            vec![
                r.rep.to_string(),
                nu,
                mode,
                r.model.as_str().into(),
                fmt_f64(r.mse),
                fmt_f64(r.mspe),
                fmt_opt(r.dic),
                fmt_opt(r.bic_mcmc),
            ]
        }),
    )?;
    write_csv(
        &dir.join("failures.csv"),
        &preamble,
        &s(&["rep", "nu", "psi_mode", "message"]),
        result.failures.iter().map(|f| {
            let [nu, mode] = cell_fields(f.cell);
            vec![f.rep.to_string(), nu, mode, f.message.clone()]
        }),
    )?;
    let truth: Vec<serde_json::Value> = design
        .covariates
        .iter()
        .map(|c| {
            serde_json::json!({
                "covariate": c.name,
                "effects": std::iter::once(0.0).chain(c.effects.iter().copied()).collect::<Vec<_>>(),
                "blocks": c.true_partition().blocks(),
            })
        })
        .collect();
    std::fs::write(
        dir.join("truth.json"),
        serde_json::to_string_pretty(&truth).expect("truth serialises"),
    )?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn default_truths() {
        let d = default_design();
        let t = d.true_partitions();
        assert_eq!(t.iter().map(LevelPartition::n_blocks).collect::<Vec<_>>(), vec![3, 2, 1, 6]);
        assert!(d.covariates[2].effects.iter().all(|&b| b == 0.0));
        let sizes: Vec<usize> = t[3].blocks().iter().map(Vec::len).collect();
        assert_eq!(sizes, vec![17, 17, 17, 17, 16, 16]);
        assert_eq!(t[0].blocks()[0], vec![0, 1, 2, 3]);
        assert_eq!(hundred_level_effects().len(), 99);
    }

    fn small_design() -> SimDesign {
        SimDesign {
            n: 600,
            n_test: 100,
            replications: 2,
            covariates: vec![
                SimCovariate { name: "a".into(), effects: vec![0.0, 1.0, 1.0] },
                SimCovariate { name: "b".into(), effects: vec![0.0, 0.0] },
            ],
            cells: StudyCell::grid(&[100.0], &[PsiModeKind::Fixed, PsiModeKind::Random]),
            sampler: SamplerConfig::new(200, 300, 0),
            refit: RefitConfig { burn_in: 50, iterations: 100, ..Default::default() },
            ..default_design()
        }
    }

    #[test]
    fn dataset_is_deterministic_and_uniform() {
        let d = SimDesign { n: 4000, ..small_design() };
        let (a, truth) = generate_dataset(&d, 1).unwrap();
        let (b, _) = generate_dataset(&d, 1).unwrap();
        assert_eq!(a.response(), b.response());
        assert_ne!(a.response(), generate_dataset(&d, 2).unwrap().0.response());
        assert_eq!(truth.effects[0], vec![0.0, 1.0, 1.0]);
        let obs = a.categorical()[0].observations();
        for l in 0..4 {
            let f = obs.iter().filter(|&&o| o == l).count() as f64 / 4000.0;
            // binomial sd is about 0.007
            assert!((f - 0.25).abs() < 0.035, "level {l}: {f}");
        }
    }

    #[test]
    fn noiseless_data_recovers_truth() {
        let d = SimDesign { noise: Noise::Sd(1e-9), ..small_design() };
        let (data, truth) = generate_dataset(&d, 0).unwrap();
        let fit = flat_fit(&build_design(&data).unwrap(), data.response()).unwrap();
        let got = fit.coefficients.flatten();
        for (g, t) in got.iter().zip(truth.flatten().iter()) {
            assert!((g - t).abs() < 1e-8);
        }
    }

    #[test]
    fn noise_switch() {
        assert!((Noise::Variance(0.5).sd() - 0.5f64.sqrt()).abs() < 1e-15);
        assert_eq!(Noise::Sd(0.5).sd(), 0.5);
    }

    #[test]
    fn study_is_complete_and_thread_independent() {
        let d = small_design();
        let one = run_study_with_threads(&d, Some(1)).unwrap();
        let two = run_study_with_threads(&d, Some(2)).unwrap();
        assert_eq!(one, two);
        assert!(one.failures.is_empty(), "{:?}", one.failures);
        // 2 reps x 2 cells x 2 covariates x 2 strategies
        assert_eq!(one.clusters.len(), 16);
        // per rep: full + true + 2 cells x (av, most, pam)
        assert_eq!(one.estimation.len(), 16);
        let s = one.cluster_summary();
        assert_eq!(s.len(), 8);
        assert!(s.iter().all(|r| r.reps == 2));
        let most = one.cluster_cell(d.cells[0], "a", Strategy::Most).unwrap();
        assert!(most.groups >= 1.0 && most.groups <= 4.0 && most.ar <= 1.0);
        assert!(one.clusters.iter().all(|r| r.freq.is_some() == (r.strategy == Strategy::Most)));

        let dir = std::env::temp_dir().join(format!("effectfuse-sim-{}", std::process::id()));
        write_study(&one, &d, &dir).unwrap();
        let text = std::fs::read_to_string(dir.join("cluster_summary.csv")).unwrap();
        assert!(text.starts_with("# seed = "));
        assert_eq!(text.lines().filter(|l| !l.starts_with('#')).count(), 9);
        std::fs::remove_dir_all(dir).unwrap();
    }

    #[test]
    fn invalid_nu_is_rejected() {
        let mut d = small_design();
        d.cells[0].nu = 0.0;
        assert!(matches!(d.validate(), Err(Error::InvalidHyperparameter(_))));
    }
}
