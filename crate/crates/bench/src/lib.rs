//! Fixtures shared by the benchmarks.

use effectfuse::simulation::{desk_design, generate_dataset, SimDesign};
use effectfuse::{build_design, build_prior, flat_fit, Dataset, DesignMatrix, FlatFit, GlobalPriorSpec, PriorConfig};

pub struct Problem {
    pub data: Dataset,
    pub design: DesignMatrix,
    pub flat: FlatFit,
    pub prior: GlobalPriorSpec,
}

/// First replication of the reduced simulation preset with `n` records.
pub fn problem(n: usize) -> Problem {
    let sim = SimDesign { n, ..desk_design() };
    let (data, _) = generate_dataset(&sim, 0).expect("preset is valid");
    let design = build_design(&data).expect("design builds");
    let flat = flat_fit(&design, data.response()).expect("full rank");
    let prior = build_prior(&PriorConfig::default(), &data, &flat).expect("prior builds");
    Problem { data, design, flat, prior }
}
