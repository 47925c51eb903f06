//! DP-SGD training steps and a Rényi accountant for the subsampled
//! Gaussian mechanism.

use alloc::vec::Vec;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{accumulate, Example, Seq2Seq, Trainable};
use crate::numerics::{clip_by_norm, AdamState, Gradients};
use crate::rng::Stream;

/// Integer Rényi orders tracked by the accountant.
pub const RDP_ORDERS: core::ops::RangeInclusive<u32> = 2..=64;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DpConfig {
    /// Per-example gradient clip norm `C`.
    pub clip_norm: f64,
    /// Noise standard deviation in units of `C`.
    pub noise_multiplier: f64,
    /// Probability that an example participates in a step.
    pub sampling_rate: f64,
    pub delta: f64,
}

impl DpConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.clip_norm > 0.0) {
            return Err(Error::invalid("clip norm must be > 0"));
        }
        if !(self.noise_multiplier >= 0.0) {
            return Err(Error::invalid("noise multiplier must be >= 0"));
        }
        if !(self.sampling_rate > 0.0 && self.sampling_rate <= 1.0) {
            return Err(Error::invalid("sampling rate must lie in (0, 1]"));
        }
        if !(self.delta > 0.0 && self.delta < 1.0) {
            return Err(Error::invalid("delta must lie in (0, 1)"));
        }
        Ok(())
    }
}

/// One private step: per-example gradients clipped to `C`, summed, Gaussian
/// noise of standard deviation `sigma * C` added per coordinate, divided by
/// `batch_size` and handed to Adam. Returns the summed batch loss.
///
/// Under Poisson sampling `batch_size` is the expected batch size and
/// `batch` may be empty, in which case the update is pure noise.
pub fn dp_sgd_step(
    model: &mut Seq2Seq,
    batch: &[&Example],
    batch_size: f64,
    dp: &DpConfig,
    trainable: &Trainable,
    adam: &mut AdamState,
    noise: &mut Stream,
) -> Result<f64> {
    dp.validate()?;
    if !(batch_size > 0.0) {
        return Err(Error::invalid("DP batch size must be > 0"));
    }
    let mut acc = Gradients::new();
    for layer in model.params.layers() {
        if trainable.allows(&layer.name) {
            for (name, t) in &layer.tensors {
                acc.insert(name.clone(), crate::numerics::Tensor::zeros(t.shape()));
            }
        }
    }
    let mut loss = 0.0;
    for ex in batch {
        let (l, mut g) = model.loss_and_grads(&ex.input(), &ex.answer, trainable)?;
        clip_by_norm(g.values_mut(), dp.clip_norm)?;
        loss += l;
        accumulate(&mut acc, g)?;
    }
    if dp.noise_multiplier > 0.0 {
        let std = dp.noise_multiplier * dp.clip_norm;
        for t in acc.values_mut() {
            for v in t.data_mut() {
                *v += std * noise.normal();
            }
        }
    }
    let inv = 1.0 / batch_size;
    for t in acc.values_mut() {
        t.scale_in_place(inv);
        if !t.is_finite() {
            return Err(Error::NumericFailure("DP-SGD gradient".into()));
        }
    }
    adam.step(&acc, &mut model.params)?;
    Ok(loss)
}

fn log_add(a: f64, b: f64) -> f64 {
    if a == f64::NEG_INFINITY {
        return b;
    }
    let (hi, lo) = if a > b { (a, b) } else { (b, a) };
    hi + libm::log1p(libm::exp(lo - hi))
}

fn log_binomial(n: u32, k: u32) -> f64 {
    libm::lgamma(f64::from(n) + 1.0) - libm::lgamma(f64::from(k) + 1.0) - libm::lgamma(f64::from(n - k) + 1.0)
}

/// Rényi DP of one subsampled Gaussian step at integer order `alpha`:
/// `log(sum_k C(a,k) (1-q)^(a-k) q^k exp((k^2 - k) / (2 sigma^2))) / (a - 1)`.
pub fn rdp_subsampled_gaussian(q: f64, sigma: f64, alpha: u32) -> f64 {
    if sigma == 0.0 {
        return f64::INFINITY;
    }
    let a = f64::from(alpha);
    if q >= 1.0 {
        return a / (2.0 * sigma * sigma);
    }
    let mut log_a = f64::NEG_INFINITY;
    for k in 0..=alpha {
        let kf = f64::from(k);
        let term = log_binomial(alpha, k)
            + f64::from(alpha - k) * libm::log1p(-q)
            + kf * libm::log(q)
            + (kf * kf - kf) / (2.0 * sigma * sigma);
        log_a = log_add(log_a, term);
    }
    log_a / (a - 1.0)
}

/// `(epsilon, delta)` after `steps` compositions, using the
/// hypothesis-testing conversion `eps = rdp + log((a-1)/a) - (log delta + log a)/(a-1)`
/// minimized over the tracked orders.
pub fn account_epsilon(dp: &DpConfig, steps: usize) -> Result<f64> {
    dp.validate()?;
    if steps == 0 {
        return Ok(0.0);
    }
    if dp.noise_multiplier == 0.0 {
        return Ok(f64::INFINITY);
    }
    let t = steps as f64;
    let best = RDP_ORDERS
        .map(|alpha| {
            let a = f64::from(alpha);
            let rdp = t * rdp_subsampled_gaussian(dp.sampling_rate, dp.noise_multiplier, alpha);
            rdp + libm::log((a - 1.0) / a) - (libm::log(dp.delta) + libm::log(a)) / (a - 1.0)
        })
        .fold(f64::INFINITY, f64::min);
    Ok(best.max(0.0))
}

/// Smallest noise multiplier (to bisection precision) whose accounted
/// epsilon does not exceed `target_epsilon`.
pub fn noise_for_epsilon(target_epsilon: f64, sampling_rate: f64, steps: usize, delta: f64) -> Result<f64> {
    if !(target_epsilon > 0.0) {
        return Err(Error::invalid("target epsilon must be > 0"));
    }
    let eps = |sigma: f64| {
        account_epsilon(&DpConfig { clip_norm: 1.0, noise_multiplier: sigma, sampling_rate, delta }, steps)
    };
    let (mut lo, mut hi) = (1e-3, 1.0);
    while eps(hi)? > target_epsilon {
        hi *= 2.0;
        if hi > 1e4 {
            return Err(Error::invalid("target epsilon unreachable"));
        }
    }
    for _ in 0..60 {
        let mid = 0.5 * (lo + hi);
        if eps(mid)? > target_epsilon {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    Ok(hi)
}

/// Per-example gradient norms before clipping; diagnostic helper.
pub fn per_example_norms(model: &Seq2Seq, batch: &[&Example], trainable: &Trainable) -> Result<Vec<f64>> {
    batch
        .iter()
        .map(|ex| {
            let (_, g) = model.loss_and_grads(&ex.input(), &ex.answer, trainable)?;
            Ok(crate::numerics::l2_norm(g.values()))
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn cfg(sigma: f64, q: f64) -> DpConfig {
        DpConfig { clip_norm: 1.0, noise_multiplier: sigma, sampling_rate: q, delta: 1e-5 }
    }

    fn normal_cdf(x: f64) -> f64 {
        0.5 * libm::erfc(-x / libm::sqrt(2.0))
    }

    /// Exact epsilon of one Gaussian release with sensitivity 1, by
    /// bisection on `delta(eps) = Phi(-eps s + 1/2s) - e^eps Phi(-eps s - 1/2s)`.
    fn analytic_gaussian_epsilon(sigma: f64, delta: f64) -> f64 {
        let d = |e: f64| {
            normal_cdf(-e * sigma + 1.0 / (2.0 * sigma)) - libm::exp(e) * normal_cdf(-e * sigma - 1.0 / (2.0 * sigma))
        };
        let (mut lo, mut hi) = (0.0, 100.0);
        for _ in 0..200 {
            let mid = 0.5 * (lo + hi);
            if d(mid) > delta {
                lo = mid;
            } else {
                hi = mid;
            }
        }
        hi
    }

    #[test]
    fn zero_steps_is_free() {
        assert_eq!(account_epsilon(&cfg(1.0, 0.1), 0).unwrap(), 0.0);
    }

    #[test]
    fn zero_noise_is_infinite() {
        assert!(account_epsilon(&cfg(0.0, 0.1), 10).unwrap().is_infinite());
    }

    #[test]
    fn single_full_batch_release_matches_analytic_gaussian() {
        for sigma in [0.5, 0.8, 1.0, 2.0] {
            let rdp = account_epsilon(&cfg(sigma, 1.0), 1).unwrap();
            let exact = analytic_gaussian_epsilon(sigma, 1e-5);
            assert!(rdp >= exact * 0.999, "sigma {sigma}: rdp {rdp} below exact {exact}");
            assert!((rdp - exact).abs() / exact < 0.10, "sigma {sigma}: rdp {rdp} vs exact {exact}");
        }
    }

    #[test]
    fn unsampled_rdp_is_gaussian_rdp() {
        // q -> 1 reduces the binomial sum to the plain Gaussian value a/(2 s^2)
        let near = rdp_subsampled_gaussian(1.0 - 1e-12, 1.3, 5);
        let full = rdp_subsampled_gaussian(1.0, 1.3, 5);
        assert!((near - full).abs() < 1e-6);
    }

    #[test]
    fn noise_for_epsilon_hits_target() {
        let sigma = noise_for_epsilon(8.0, 0.05, 500, 1e-4).unwrap();
        let e = account_epsilon(&DpConfig { clip_norm: 1.0, noise_multiplier: sigma, sampling_rate: 0.05, delta: 1e-4 }, 500)
            .unwrap();
        assert!(e <= 8.0 && e > 7.9, "eps {e} at sigma {sigma}");
    }

    #[test]
    fn invalid_configs() {
        assert!(cfg(1.0, 0.0).validate().is_err());
        assert!(cfg(-1.0, 0.5).validate().is_err());
        assert!(DpConfig { clip_norm: 0.0, ..cfg(1.0, 0.5) }.validate().is_err());
    }

    proptest! {
        #[test]
        fn epsilon_is_monotone(sigma in 0.3f64..5.0, q in 0.001f64..1.0, steps in 1usize..2000) {
            let base = account_epsilon(&cfg(sigma, q), steps).unwrap();
            let more_steps = account_epsilon(&cfg(sigma, q), steps * 2).unwrap();
            let more_q = account_epsilon(&cfg(sigma, (q * 1.5).min(1.0)), steps).unwrap();
            let more_noise = account_epsilon(&cfg(sigma * 1.5, q), steps).unwrap();
            prop_assert!(more_steps >= base - 1e-12);
            prop_assert!(more_q >= base - 1e-12);
            prop_assert!(more_noise <= base + 1e-12);
        }
    }
}
