use criterion::{criterion_group, criterion_main, BatchSize, Criterion};
use effectfuse::partition::{accumulate_cocluster, pam, select_by_pam, SimilarityMatrix};
use effectfuse::{run_mcmc, FusionSampler, SamplerConfig};
use effectfuse_bench::problem;

fn sweep(c: &mut Criterion) {
    let p = problem(2000);
    let mut sampler = FusionSampler::new(&p.design, p.data.response(), &p.prior).unwrap();
    let mut state = sampler.init_state(&p.flat.coefficients, p.flat.residual_variance).unwrap();
    let mut rng = SamplerConfig::default().rng();
    c.bench_function("gibbs sweep, n = 2000, 127 coefficients", |b| {
        b.iter(|| sampler.sweep(&mut state, &mut rng).unwrap())
    });
}

fn clustering(c: &mut Criterion) {
    let p = problem(2000);
    let trace = run_mcmc(&p.design, p.data.response(), &p.prior, &p.flat, &SamplerConfig::new(500, 1000, 1)).unwrap();
    let alloc = trace.allocations.iter().find(|a| a.n_effects == 99).unwrap();
    c.bench_function("co-clustering, 100 levels x 1000 draws", |b| {
        b.iter(|| accumulate_cocluster(alloc).unwrap())
    });
    let sim: SimilarityMatrix = accumulate_cocluster(alloc).unwrap().similarity().unwrap();
    let d = sim.dissimilarity();
    c.bench_function("pam k = 6 on 100 x 100", |b| b.iter(|| pam(&d, 6).unwrap()));
    c.bench_function("pam selection k = 2..30 on 100 x 100", |b| {
        b.iter_batched(|| (), |_| select_by_pam("var4", &sim, None).unwrap(), BatchSize::SmallInput)
    });
}

criterion_group! {
    name = benches;
    config = Criterion::default().sample_size(20);
    targets = sweep, clustering
}
criterion_main!(benches);
