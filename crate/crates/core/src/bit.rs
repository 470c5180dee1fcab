//! Boosted statistic `T_S`: thin the controls with i.i.d. Bernoulli(`s n1 / n0`)
//! indicators, then evaluate the rescaled statistic on what remains.
//!
//! The normalization is `C(s n1, m0)`, the *expected* number of retained controls,
//! rather than the realized count. The realized count is kept for diagnostics.

use rand::Rng as _;
use serde::Serialize;
use statrs::distribution::{Continuous, ContinuousCDF, Normal};

use crate::data::GroupedSample;
use crate::error::{Error, Result};
use crate::kernels::KernelSpec;
use crate::projection::binomial;
use crate::rit::{compute_rit, RitStatistic, SubsampleInfo};
use crate::scalar::Scalar;
use crate::seed;

/// Redraws allowed when a plan retains fewer than `m0` controls.
pub const MAX_REDRAWS: usize = 100;

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct SubsamplePlan {
    pub s: usize,
    /// `s n1 / n0`.
    pub inclusion_probability: f64,
    #[serde(skip)]
    pub inclusion: Vec<bool>,
    pub seed: u64,
    pub realized_count: usize,
    /// Draws used, including the accepted one.
    pub attempts: usize,
}

impl SubsamplePlan {
    /// Control count the normalization assumes.
    pub fn nominal_count(&self, n1: usize) -> usize {
        self.s * n1
    }
}

/// Draw the inclusion indicators for the controls of `data`.
///
/// Retries with derived sub-seeds when fewer than `m0` controls survive.
pub fn draw_subsample<F: Scalar>(data: &GroupedSample<F>, s: usize, m0: usize, seed: u64) -> Result<SubsamplePlan> {
    if s < 2 {
        return Err(Error::InvalidParameter(format!("s must be at least 2, got {s}")));
    }
    let (n0, n1) = (data.n0(), data.n1());
    if s * n1 > n0 {
        return Err(Error::RatioExceedsOne { requested: s * n1, available: n0 });
    }
    let (inclusion, realized_count, attempts) = draw_inclusion(n0, s * n1, m0, seed)?;
    let q = (s * n1) as f64 / n0 as f64;
    Ok(SubsamplePlan { s, inclusion_probability: q, inclusion, seed, realized_count, attempts })
}

/// Bernoulli(`nominal / n0`) indicators with at least `m0` successes, redrawn with
/// derived sub-seeds up to [`MAX_REDRAWS`] times.
pub(crate) fn draw_inclusion(n0: usize, nominal: usize, m0: usize, seed: u64) -> Result<(Vec<bool>, usize, usize)> {
    let q = nominal as f64 / n0 as f64;
    for attempt in 0..MAX_REDRAWS {
        let mut rng = seed::child_rng(seed, attempt as u64);
        let inclusion: Vec<bool> = (0..n0).map(|_| rng.random_bool(q)).collect();
        let realized = inclusion.iter().filter(|&&d| d).count();
        if realized >= m0 {
            return Ok((inclusion, realized, attempt + 1));
        }
    }
    Err(Error::InsufficientSamples { class: 0, needed: m0, available: 0 })
}

/// `T_S` for a drawn plan; reuses the full-sample fast paths on the retained rows.
pub fn compute_bit<F: Scalar>(
    data: &GroupedSample<F>,
    kernel: &KernelSpec<F>,
    plan: &SubsamplePlan,
) -> Result<RitStatistic<F>> {
    if plan.inclusion.len() != data.n0() {
        return Err(Error::DimensionMismatch { expected: data.n0(), found: plan.inclusion.len() });
    }
    let m0 = kernel.m0();
    if plan.realized_count < m0 {
        return Err(Error::InsufficientSamples { class: 0, needed: m0, available: plan.realized_count });
    }
    let thinned = data.thin_controls(&plan.inclusion)?;
    let mut stat = compute_rit(&thinned, kernel)?;
    let nominal = plan.nominal_count(data.n1());
    // Swap C(realized, m0) for C(s n1, m0) in the normalization.
    let rescale = binomial(plan.realized_count, m0) / binomial(nominal, m0);
    stat.value = stat.value * F::of(rescale);
    stat.counts[0] = data.n0();
    stat.subsample = Some(SubsampleInfo { s: plan.s, realized_controls: plan.realized_count });
    Ok(stat)
}

/// Draw a plan and evaluate `T_S` in one step.
pub fn compute_bit_seeded<F: Scalar>(
    data: &GroupedSample<F>,
    kernel: &KernelSpec<F>,
    s: usize,
    seed: u64,
) -> Result<RitStatistic<F>> {
    let plan = draw_subsample(data, s, kernel.m0(), seed)?;
    compute_bit(data, kernel, &plan)
}

/// Smallest `s >= 2` with `s >= 1 / (n1 epsilon)`, which keeps the extra variance
/// `m0^2 xi10 / s` at most `epsilon` times `n1 m0^2 xi10`.
pub fn select_s_variance(n1: usize, epsilon: f64) -> Result<usize> {
    if !(epsilon > 0.0) || n1 == 0 {
        return Err(Error::InvalidParameter("epsilon and n1 must be positive".into()));
    }
    Ok(ceil_at_least_two(1.0 / (n1 as f64 * epsilon)))
}

/// Parameters shared by the power-based selection rules.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct PowerInputs {
    pub n1: usize,
    pub m0: usize,
    pub m1: usize,
    pub xi01: f64,
    pub xi10: f64,
    pub mu0: f64,
    pub alpha: f64,
}

/// Smallest `s >= 2` whose first-order BIT power is guaranteed to reach `beta`.
pub fn select_s_power_floor(inputs: &PowerInputs, beta: f64) -> Result<usize> {
    let PowerInputs { n1, m0, m1, xi01, xi10, mu0, alpha } = *inputs;
    check_probability(alpha, "alpha")?;
    check_probability(beta, "beta")?;
    if xi10 == 0.0 {
        return Ok(2);
    }
    let z = normal_quantile(1.0 - alpha / 2.0) - normal_quantile(1.0 - beta);
    let (m0, m1) = (m0 as f64, m1 as f64);
    let denom = n1 as f64 * mu0 * mu0 / (z * z) - m1 * m1 * xi01;
    if !(denom > 0.0) {
        return Err(Error::Infeasible(format!(
            "target power {beta} unreachable at n1 = {n1}: even the full-sample test falls short"
        )));
    }
    Ok(ceil_at_least_two(m0 * m0 * xi10 / denom))
}

/// Smallest `s >= 2` bounding the RIT/BIT power gap by `epsilon`.
pub fn select_s_power_gap(inputs: &PowerInputs, epsilon: f64) -> Result<usize> {
    let PowerInputs { n1, m0, m1, xi01, xi10, mu0, alpha } = *inputs;
    check_probability(alpha, "alpha")?;
    if !(xi01 > 0.0) {
        return Err(Error::Degenerate("power-gap rule needs xi01 > 0 (first-order kernel)".into()));
    }
    if !(epsilon > 0.0) {
        return Err(Error::InvalidParameter("epsilon must be positive".into()));
    }
    let (n1, m0, m1) = (n1 as f64, m0 as f64, m1 as f64);
    let arg = normal_quantile(1.0 - alpha / 2.0) - mu0.abs() * (n1 / (m1 * m1 * xi01)).sqrt();
    let density = Normal::standard().pdf(arg);
    let bound = n1.sqrt() * m0 * m0 * mu0.abs() * xi10 * density / (2.0 * epsilon * m1.powi(3) * xi01.powf(1.5));
    Ok(ceil_at_least_two(bound))
}

fn ceil_at_least_two(x: f64) -> usize {
    // Absorb rounding so exact integers are not bumped up.
    let c = (x - 1e-9).ceil();
    if c.is_finite() && c > 2.0 {
        c as usize
    } else {
        2
    }
}

fn check_probability(v: f64, name: &str) -> Result<()> {
    if v > 0.0 && v < 1.0 {
        Ok(())
    } else {
        Err(Error::InvalidParameter(format!("{name} must lie in (0, 1), got {v}")))
    }
}

pub(crate) fn normal_quantile(p: f64) -> f64 {
    Normal::standard().inverse_cdf(p)
}
