//! The `fit` pipeline: flat fit, fusion sampler, partition selection, refit
//! and output files.

use std::path::{Path, PathBuf};

use effectfuse::data::Column;
use effectfuse::dist::derive_seed;
use effectfuse::partition::{accumulate_cocluster, most_frequent_partition, select_by_pam};
use effectfuse::refit::{hpd_interval, model_averaged_estimates};
use effectfuse::report::{fmt_f64, write_allocations_csv, write_csv, write_similarity_csv, write_trace_csv};
use effectfuse::{
    build_design, build_prior, flat_fit, read_csv_path, refit_partition, run_mcmc, CategoricalCovariate, Dataset,
    DesignMatrix, FlatFit, LevelPartition, McmcTrace,
};
use serde_json::{json, Value};

use crate::config::{resolve_fit_config, RunConfig};
use crate::{CliError, CliResult, FitArgs};

/// File-name-safe form of a column name.
pub fn file_stem(name: &str) -> String {
    name.chars()
        .map(|c| if c.is_ascii_alphanumeric() || c == '-' || c == '_' { c } else { '_' })
        .collect()
}

/// Display names of the design columns.
pub fn column_names(data: &Dataset, design: &DesignMatrix) -> Vec<String> {
    design
        .columns()
        .iter()
        .map(|c| match *c {
            Column::Intercept => "(intercept)".to_string(),
            Column::Level { covariate, element, .. } => {
                let cov = &data.categorical()[covariate];
                format!("{}[{}]", cov.name(), cov.element_label(element))
            }
            Column::Continuous(q) => data.continuous()[q].name().to_string(),
        })
        .collect()
}

fn element_labels(cov: &CategoricalCovariate) -> Vec<String> {
    (0..=cov.n_effects()).map(|e| cov.element_label(e).to_string()).collect()
}

fn block_labels(cov: &CategoricalCovariate, p: &LevelPartition) -> Vec<Vec<String>> {
    p.blocks()
        .iter()
        .map(|b| b.iter().map(|&e| cov.element_label(e).to_string()).collect())
        .collect()
}

fn partition_json(cov: &CategoricalCovariate, p: &LevelPartition) -> Value {
    json!({
        "labels": p.labels(),
        "blocks": block_labels(cov, p),
        "groups": p.n_blocks(),
        "nonzero_groups": p.n_nonzero_groups(),
    })
}

struct Header {
    seed: u64,
    config: Value,
}

impl Header {
    fn preamble(&self) -> Vec<String> {
        vec![
            format!("effectfuse {}", env!("CARGO_PKG_VERSION")),
            format!("seed = {}", self.seed),
            format!("config = {}", self.config),
        ]
    }

    fn wrap(&self, body: Value) -> Value {
        let mut out = json!({
            "effectfuse": env!("CARGO_PKG_VERSION"),
            "seed": self.seed,
            "config": self.config,
        });
        if let (Some(o), Value::Object(b)) = (out.as_object_mut(), body) {
            o.extend(b);
        }
        out
    }
}

fn write_json(path: &Path, value: &Value) -> CliResult<()> {
    let text = serde_json::to_string_pretty(value).expect("JSON values serialise");
    std::fs::write(path, text + "\n").map_err(|e| CliError::Core(e.into()))
}

fn mean_sd(draws: &[f64]) -> (f64, f64) {
    let n = draws.len() as f64;
    let mean = draws.iter().sum::<f64>() / n;
    let var = draws.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0).max(1.0);
    (mean, var.sqrt())
}

/// Share of draws that put each level effect in the zero component.
fn zero_shares(trace: &McmcTrace) -> Vec<Vec<f64>> {
    trace
        .allocations
        .iter()
        .map(|a| {
            let mut zeros = vec![0usize; a.n_effects];
            for d in a.iter() {
                for (z, &s) in zeros.iter_mut().zip(d) {
                    *z += usize::from(s == 0);
                }
            }
            zeros.iter().map(|&z| z as f64 / a.n_draws() as f64).collect()
        })
        .collect()
}

struct Prepared {
    data: Dataset,
    design: DesignMatrix,
    flat: FlatFit,
    names: Vec<String>,
}

fn prepare(config: &RunConfig) -> CliResult<Prepared> {
    if !config.input.is_file() {
        return Err(CliError::Config(format!("input file {} not found", config.input.display())));
    }
    let data = read_csv_path(&config.input, &config.columns())?;
    let design = build_design(&data)?;
    let flat = flat_fit(&design, data.response())?;
    let names = column_names(&data, &design);
    Ok(Prepared { data, design, flat, names })
}

/// Fits one prior resolution and writes every output file into `dir`.
fn fit_one(config: &RunConfig, p: &Prepared, nu: f64, dir: &Path, write_trace: bool) -> CliResult<Value> {
    std::fs::create_dir_all(dir).map_err(|e| CliError::Core(e.into()))?;
    let mut config = config.clone();
    config.prior.nu = nu;
    config.extra_nu.clear();
    // The output location does not affect the results, so it is left out
    // and identical runs into different directories give identical files.
    let mut recorded = serde_json::to_value(&config).expect("config serialises");
    if let Some(map) = recorded.as_object_mut() {
        map.remove("out");
    }
    let header = Header {
        seed: config.sampler.seed,
        config: recorded,
    };
    let preamble = header.preamble();

    let prior = build_prior(&config.prior, &p.data, &p.flat)?;
    log::info!(
        "nu = {nu}: {} burn-in and {} retained sweeps over {} coefficients",
        config.sampler.burn_in,
        config.sampler.iterations,
        p.names.len()
    );
    let trace = run_mcmc(&p.design, p.data.response(), &prior, &p.flat, &config.sampler)?;

    let reg = &trace.regression;
    let zeros = zero_shares(&trace);
    let mut rows = Vec::with_capacity(p.names.len() + 1);
    for (k, name) in p.names.iter().enumerate() {
        let draws = reg.coefficient(k);
        let (mean, sd) = mean_sd(&draws);
        let (lo, hi) = hpd_interval(&draws, 0.95)?;
        let p_zero = match p.design.columns()[k] {
            Column::Level { covariate, element, .. } => fmt_f64(zeros[covariate][element - 1]),
            _ => "NA".into(),
        };
        rows.push(vec![name.clone(), fmt_f64(mean), fmt_f64(sd), fmt_f64(lo), fmt_f64(hi), p_zero]);
    }
    let (s_mean, s_sd) = mean_sd(reg.sigma2());
    let (s_lo, s_hi) = hpd_interval(reg.sigma2(), 0.95)?;
    rows.push(vec!["sigma2".into(), fmt_f64(s_mean), fmt_f64(s_sd), fmt_f64(s_lo), fmt_f64(s_hi), "NA".into()]);
    let s = |v: &[&str]| v.iter().map(|x| x.to_string()).collect::<Vec<_>>();
    write_csv(
        &dir.join("trace_summary.csv"),
        &preamble,
        &s(&["parameter", "mean", "sd", "hpd_lower", "hpd_upper", "p_zero"]),
        rows,
    )?;

    let av = model_averaged_estimates(&trace)?;
    let mut av_rows = vec![vec!["(intercept)".into(), "".into(), fmt_f64(av.intercept)]];
    for (cov, effects) in p.data.categorical().iter().zip(&av.effects) {
        av_rows.push(vec![cov.name().to_string(), cov.element_label(0).to_string(), fmt_f64(0.0)]);
        for (k, &b) in effects.iter().enumerate() {
            av_rows.push(vec![cov.name().to_string(), cov.element_label(k + 1).to_string(), fmt_f64(b)]);
        }
    }
    for (cont, &b) in p.data.continuous().iter().zip(&av.continuous) {
        av_rows.push(vec![cont.name().to_string(), "".into(), fmt_f64(b)]);
    }
    write_csv(&dir.join("model_averaged.csv"), &preamble, &s(&["term", "level", "estimate"]), av_rows)?;

    if write_trace {
        write_trace_csv(&dir.join("trace.csv"), &preamble, &p.names, &trace)?;
    }

    let mut most = Vec::new();
    let mut pam = Vec::new();
    let mut partitions = Vec::new();
    for (j, (cov, alloc)) in p.data.categorical().iter().zip(&trace.allocations).enumerate() {
        let stem = file_stem(cov.name());
        let labels = element_labels(cov);
        let sim = accumulate_cocluster(alloc)?.similarity()?;
        write_similarity_csv(&dir.join(format!("cocluster_{stem}.csv")), &preamble, &labels, &sim)?;
        if write_trace {
            write_allocations_csv(&dir.join(format!("allocations_{stem}.csv")), &preamble, &labels[1..], &trace, j)?;
        }
        let mut entry = json!({ "covariate": cov.name(), "levels": labels });
        if config.strategy.most() {
            let mf = most_frequent_partition(alloc)?;
            let mut v = partition_json(cov, &mf.partition);
            v["frequency"] = json!(mf.frequency);
            v["draws"] = json!(mf.draws);
            v["tied"] = json!(mf.tied.iter().map(|t| t.labels()).collect::<Vec<_>>());
            entry["most"] = v;
            most.push(mf.partition);
        }
        if config.strategy.pam() {
            let k_max = config.k_max.map(|k| k.min(sim.n()));
            let sel = select_by_pam(cov.name(), &sim, k_max)?;
            if sel.one_cluster_suspected {
                log::warn!("{}: no PAM solution has a positive silhouette, the covariate may have no effect", cov.name());
            }
            let mut v = partition_json(cov, &sel.partition);
            v["k"] = json!(sel.k);
            v["silhouette"] = json!(sel.silhouette);
            v["silhouettes"] = json!(sel.silhouettes);
            v["one_cluster_suspected"] = json!(sel.one_cluster_suspected);
            entry["pam"] = v;
            pam.push(sel.partition);
        }
        partitions.push(entry);
    }
    write_json(&dir.join("partitions.json"), &header.wrap(json!({ "covariates": partitions })))?;

    let mut refits = serde_json::Map::new();
    for (stream, (name, parts)) in [("most", most), ("pam", pam)].into_iter().enumerate() {
        if parts.is_empty() {
            continue;
        }
        let refit_config = effectfuse::RefitConfig {
            seed: derive_seed(config.refit.seed, &[stream as u64]),
            ..config.refit.clone()
        };
        let fit = refit_partition(&p.data, &p.design, &parts, &refit_config)?;
        let sm = &fit.summary;
        write_json(
            &dir.join(format!("refit_{name}.json")),
            &header.wrap(json!({ "strategy": name, "summary": sm })),
        )?;
        write_csv(
            &dir.join(format!("coefficients_{name}.csv")),
            &preamble,
            &s(&["coefficient", "mean", "hpd_lower", "hpd_upper", "members"]),
            sm.coefficients.iter().map(|c| {
                vec![
                    c.name.clone(),
                    fmt_f64(c.mean),
                    fmt_f64(c.hpd_lower),
                    fmt_f64(c.hpd_upper),
                    c.members.join("|"),
                ]
            }),
        )?;
        refits.insert(
            name.into(),
            json!({
                "dic": sm.dic.dic,
                "p_d": sm.dic.p_d,
                "bic_mcmc": sm.bic_mcmc.bic,
                "groups": sm.groups,
            }),
        );
    }

    let summary = header.wrap(json!({
        "records": p.data.n_records(),
        "coefficients": p.names,
        "covariates": p.data.categorical().iter().map(|c| json!({
            "name": c.name(),
            "levels": c.levels(),
            "baseline": c.element_label(0),
        })).collect::<Vec<_>>(),
        "flat_fit": {
            "residual_variance": p.flat.residual_variance,
            "rss": p.flat.rss,
        },
        "prior": prior,
        "draws": trace.n_draws(),
        "sigma2": { "mean": s_mean, "hpd": [s_lo, s_hi] },
        "refits": refits,
    }));
    write_json(&dir.join("summary.json"), &summary)?;
    Ok(json!({ "nu": nu, "out": dir }))
}

pub fn cmd_fit(args: &FitArgs, quiet: bool) -> CliResult<Value> {
    let mut config = resolve_fit_config(args)?;
    if args.progress.is_none() && !quiet && config.sampler.progress_interval == 0 {
        config.sampler.progress_interval = 1000;
    }
    let prepared = prepare(&config)?;
    let nus = config.nus();
    let mut runs = Vec::with_capacity(nus.len());
    for &nu in &nus {
        let dir: PathBuf = if nus.len() == 1 {
            config.out.clone()
        } else {
            config.out.join(format!("nu_{}", fmt_f64(nu)))
        };
        runs.push(fit_one(&config, &prepared, nu, &dir, args.write_trace)?);
    }
    Ok(json!({ "status": "ok", "runs": runs }))
}
