//! Random variate helpers. Dirichlet draws are produced in log space so that
//! weights with concentration far below one never underflow to zero.

use rand::distr::OpenClosed01;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha20Rng;
use rand_distr::{Distribution, Gamma, StandardNormal};

/// Generator used by every sampler: ChaCha20 keyed by the seed, with an
/// independent stream per chain.
pub type SamplerRng = ChaCha20Rng;

pub fn sampler_rng(seed: u64, stream: u64) -> SamplerRng {
    let mut rng = ChaCha20Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}

/// SplitMix64 finaliser over a sequence of words; used to derive
/// independent seeds for (replication, cell) pairs.
pub fn derive_seed(base: u64, words: &[u64]) -> u64 {
    let mut z = base;
    for &w in words {
        z = z.wrapping_add(0x9E37_79B9_7F4A_7C15).wrapping_add(w);
        z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
        z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
        z ^= z >> 31;
    }
    z
}

#[inline]
pub(crate) fn std_normal<R: Rng + ?Sized>(rng: &mut R) -> f64 {
    StandardNormal.sample(rng)
}

pub(crate) fn gamma<R: Rng + ?Sized>(rng: &mut R, shape: f64) -> f64 {
    Gamma::new(shape, 1.0)
        .expect("gamma shape must be positive and finite")
        .sample(rng)
}

/// `ln G` for `G ~ Gamma(shape, 1)`, accurate for tiny shapes via
/// `G = G' * U^(1/shape)` with `G' ~ Gamma(shape + 1, 1)`.
pub(crate) fn log_gamma<R: Rng + ?Sized>(rng: &mut R, shape: f64) -> f64 {
    if shape >= 1.0 {
        gamma(rng, shape).ln()
    } else {
        let u: f64 = rng.sample(OpenClosed01);
        gamma(rng, shape + 1.0).ln() + u.ln() / shape
    }
}

/// Inverse-gamma draw with density proportional to `x^(-shape-1) exp(-scale/x)`.
pub(crate) fn inv_gamma<R: Rng + ?Sized>(rng: &mut R, shape: f64, scale: f64) -> f64 {
    scale / gamma(rng, shape)
}

/// Fills `out` with the logarithm of a `Dirichlet(alphas)` draw. A single
/// component is degenerate and consumes no randomness.
pub(crate) fn log_dirichlet<R: Rng + ?Sized>(rng: &mut R, alphas: &[f64], out: &mut [f64]) {
    debug_assert_eq!(alphas.len(), out.len());
    if alphas.len() == 1 {
        out[0] = 0.0;
        return;
    }
    for (o, &a) in out.iter_mut().zip(alphas) {
        *o = log_gamma(rng, a);
    }
    let norm = log_sum_exp(out);
    out.iter_mut().for_each(|o| *o -= norm);
}

pub fn log_sum_exp(xs: &[f64]) -> f64 {
    let max = xs.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if !max.is_finite() {
        return max;
    }
    max + xs.iter().map(|x| (x - max).exp()).sum::<f64>().ln()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn log_dirichlet_is_normalised_and_finite() {
        let mut rng = sampler_rng(7, 0);
        let alphas = [0.01, 2.01, 0.01, 5.01, 0.01];
        let mut out = [0.0; 5];
        for _ in 0..1000 {
            log_dirichlet(&mut rng, &alphas, &mut out);
            assert!(out.iter().all(|v| v.is_finite()));
            let total: f64 = out.iter().map(|v| v.exp()).sum();
            assert!((total - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn small_shape_gamma_mean() {
        // E[G] = shape; E[ln G] = digamma(shape). digamma(0.3) = -3.502524222200133
        let mut rng = sampler_rng(11, 0);
        let n = 200_000;
        let draws: Vec<f64> = (0..n).map(|_| log_gamma(&mut rng, 0.3)).collect();
        let mean_log = draws.iter().sum::<f64>() / n as f64;
        let mean = draws.iter().map(|d| d.exp()).sum::<f64>() / n as f64;
        assert!((mean_log + 3.502524222200133).abs() < 0.03, "{mean_log}");
        assert!((mean - 0.3).abs() < 0.01, "{mean}");
    }

    #[test]
    fn seeds_are_distinct_per_word() {
        let a = derive_seed(1, &[0, 1]);
        let b = derive_seed(1, &[1, 0]);
        let c = derive_seed(2, &[0, 1]);
        assert!(a != b && a != c && b != c);
        assert_eq!(a, derive_seed(1, &[0, 1]));
    }

    #[test]
    fn log_sum_exp_handles_extremes() {
        assert!((log_sum_exp(&[-1000.0, -1000.0]) - (-1000.0 + 2f64.ln())).abs() < 1e-12);
        assert_eq!(log_sum_exp(&[f64::NEG_INFINITY, f64::NEG_INFINITY]), f64::NEG_INFINITY);
    }
}
