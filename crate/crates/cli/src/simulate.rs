//! The `simulate` command.

use std::path::PathBuf;

use effectfuse::simulation::{default_design, desk_design, run_study, write_study, SimDesign, StudyCell};
use serde_json::{json, Value};

use crate::config::read_json;
use crate::{CliError, CliResult, SimulateArgs};

/// Starting design (file, reduced preset or full preset) with the flags
/// applied.
pub fn resolve_design(args: &SimulateArgs) -> CliResult<SimDesign> {
    let c = &args.common;
    let mut design = match &c.config {
        Some(path) => read_json(path)?,
        None if args.desk_scale => desk_design(),
        None => default_design(),
    };
    if let Some(seed) = c.seed {
        design.seed = seed;
    }
    if let Some(r) = args.replications {
        design.replications = r;
    }
    if let Some(n) = c.iterations {
        design.sampler.iterations = n;
    }
    if let Some(n) = c.burnin {
        design.sampler.burn_in = n;
    }
    if c.nu.is_some() || c.psi_mode.is_some() {
        let mut nus: Vec<f64> = Vec::new();
        let mut modes = Vec::new();
        for cell in &design.cells {
            if !nus.contains(&cell.nu) {
                nus.push(cell.nu);
            }
            if !modes.contains(&cell.psi_mode) {
                modes.push(cell.psi_mode);
            }
        }
        if let Some(v) = &c.nu {
            nus = v.clone();
        }
        if let Some(m) = c.psi_mode {
            modes = vec![m];
        }
        design.cells = StudyCell::grid(&nus, &modes);
    }
    design.validate()?;
    Ok(design)
}

pub fn cmd_simulate(args: &SimulateArgs) -> CliResult<Value> {
    let design = resolve_design(args)?;
    let out = args.common.out.clone().unwrap_or_else(|| PathBuf::from("effectfuse-study"));
    log::info!(
        "{} replications x {} cells, n = {}, {} + {} sweeps",
        design.replications,
        design.cells.len(),
        design.n,
        design.sampler.burn_in,
        design.sampler.iterations
    );
    let result = run_study(&design)?;
    write_study(&result, &design, &out)?;
    if !result.failures.is_empty() {
        log::warn!("{} task(s) failed, see failures.csv", result.failures.len());
    }
    if result.clusters.is_empty() && !result.failures.is_empty() {
        return Err(CliError::Runtime(format!(
            "every task failed, first failure: {}",
            result.failures[0].message
        )));
    }
    Ok(json!({
        "status": "ok",
        "out": out,
        "tasks_failed": result.failures.len(),
    }))
}
