//! One call from data and configuration to a [`TestOutcome`].

use serde::{Deserialize, Serialize};

use crate::bit::{compute_bit, draw_subsample};
use crate::data::GroupedSample;
use crate::error::{Error, Result};
use crate::inference::{
    estimate_xi01, estimate_xi10, h02_case_pairs, highdim_condition_ratio, pvalue_asymptotic_first,
    pvalue_asymptotic_highdim, two_sided_normal, InferenceMethod, TestOutcome, Xi02Reference,
};
use crate::kernels::{KernelSpec, Order};
use crate::multiclass::{compute_multi_bit, compute_multi_rit, estimate_zeta1k, multi_asymptotic_variance, MultiClassSpec};
use crate::permutation::{pvalue_permutation, PermutationConfig, DEFAULT_PERMUTATIONS};
use crate::projection::{binomial, Metric};
use crate::rit::{compute_rit, Algorithm, PairwiseSums, RitStatistic, SubsampleInfo};
use crate::scalar::Scalar;
use crate::seed;

/// Default tuple budget for projection-variance estimates.
pub const DEFAULT_BUDGET: usize = 200;

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum InferenceChoice {
    /// First-order kernels use the normal limit, second-order ones permutation.
    #[default]
    Auto,
    Asymptotic,
    Highdim,
    Permutation,
}

#[derive(Clone, Debug)]
pub struct TestConfig<F> {
    pub kernel: KernelSpec<F>,
    /// Subsampling ratio for the boosted statistic; `None` for the full sample.
    pub s: Option<usize>,
    pub inference: InferenceChoice,
    pub permutations: usize,
    /// Tuples per point in projection estimates.
    pub budget: usize,
    pub xi02_reference: Xi02Reference,
    pub seed: u64,
}

impl<F: Scalar> TestConfig<F> {
    pub fn new(kernel: KernelSpec<F>) -> Self {
        Self {
            kernel,
            s: None,
            inference: InferenceChoice::Auto,
            permutations: DEFAULT_PERMUTATIONS,
            budget: DEFAULT_BUDGET,
            xi02_reference: Xi02Reference::Controls,
            seed: 0,
        }
    }

    pub fn boosted(mut self, s: usize) -> Self {
        self.s = Some(s);
        self
    }

    pub fn inference(mut self, inference: InferenceChoice) -> Self {
        self.inference = inference;
        self
    }

    pub fn permutations(mut self, b: usize) -> Self {
        self.permutations = b;
        self
    }

    pub fn seed(mut self, seed: u64) -> Self {
        self.seed = seed;
        self
    }

    /// The inference actually used once `Auto` is resolved.
    pub fn resolved_inference(&self) -> Result<InferenceChoice> {
        let order = self.kernel.order();
        match (self.inference, order) {
            (InferenceChoice::Auto, Order::First) => Ok(InferenceChoice::Asymptotic),
            (InferenceChoice::Auto, Order::Second) => Ok(InferenceChoice::Permutation),
            (InferenceChoice::Asymptotic, Order::Second) => Err(Error::InvalidParameter(
                "second-order kernels have no fixed-dimension asymptotic p-value: use highdim or permutation".into(),
            )),
            (InferenceChoice::Highdim, Order::First) => {
                Err(Error::InvalidParameter("the high-dimensional limit applies to second-order kernels".into()))
            }
            (choice, _) => Ok(choice),
        }
    }
}

// Sub-seeds for the independent random steps of one test.
const PLAN_STREAM: u64 = 1;
const XI01_STREAM: u64 = 2;
const XI10_STREAM: u64 = 3;
const PERMUTATION_STREAM: u64 = 4;

/// Compute the statistic and its p-value under `config`.
pub fn run_test<F: Scalar>(data: &GroupedSample<F>, config: &TestConfig<F>) -> Result<TestOutcome> {
    let kernel = &config.kernel;
    kernel.check_dimension(data.p())?;
    data.check_counts(kernel.block_orders())?;
    let plan_seed = seed::derive(config.seed, PLAN_STREAM);
    let mut out = match config.resolved_inference()? {
        InferenceChoice::Asymptotic => match asymptotic(data, config, plan_seed) {
            // A vanishing plug-in variance (e.g. complete separation) leaves no normal
            // limit to use; under `Auto` the permutation null still applies.
            Err(Error::Degenerate(reason)) if config.inference == InferenceChoice::Auto => {
                let mut out = permutation(data, config, plan_seed)?;
                out.warnings.push(format!("asymptotic p-value unavailable ({reason}); used permutation"));
                out
            }
            other => other?,
        },
        InferenceChoice::Highdim => highdim(data, config, plan_seed)?,
        InferenceChoice::Permutation => permutation(data, config, plan_seed)?,
        InferenceChoice::Auto => unreachable!("resolved above"),
    };
    out.seed = Some(config.seed);
    Ok(out)
}

fn asymptotic<F: Scalar>(data: &GroupedSample<F>, config: &TestConfig<F>, plan_seed: u64) -> Result<TestOutcome> {
    if data.n_classes() > 2 {
        return multi_asymptotic(data, config, plan_seed);
    }
    let kernel = &config.kernel;
    let stat = statistic(data, kernel, config.s, plan_seed)?;
    let xi01 = estimate_xi01(data, kernel, config.budget, seed::derive(config.seed, XI01_STREAM))?;
    let xi10 = match config.s {
        Some(_) => Some(estimate_xi10(data, kernel, config.budget, seed::derive(config.seed, XI10_STREAM))?),
        None => None,
    };
    pvalue_asymptotic_first(&stat, xi01, xi10)
}

fn permutation<F: Scalar>(data: &GroupedSample<F>, config: &TestConfig<F>, plan_seed: u64) -> Result<TestOutcome> {
    let mut perm = PermutationConfig::new(config.permutations, seed::derive(config.seed, PERMUTATION_STREAM));
    if let Some(s) = config.s {
        perm = perm.boosted(s, plan_seed);
    }
    pvalue_permutation(data, &config.kernel, &perm)
}

fn statistic<F: Scalar>(data: &GroupedSample<F>, kernel: &KernelSpec<F>, s: Option<usize>, plan_seed: u64) -> Result<RitStatistic<F>> {
    match s {
        Some(s) => compute_bit(data, kernel, &draw_subsample(data, s, kernel.m0(), plan_seed)?),
        None => compute_rit(data, kernel),
    }
}

fn multi_asymptotic<F: Scalar>(data: &GroupedSample<F>, config: &TestConfig<F>, plan_seed: u64) -> Result<TestOutcome> {
    let kernel = &config.kernel;
    let spec = MultiClassSpec::for_data(data, kernel)?;
    let stat = match config.s {
        Some(s) => compute_multi_bit(data, kernel, &spec, &draw_subsample(data, s, kernel.m0(), plan_seed)?)?,
        None => compute_multi_rit(data, kernel, &spec)?,
    };
    let mut zeta = vec![0.0; spec.k + 1];
    let first = if config.s.is_some() { 0 } else { 1 };
    for (k, z) in zeta.iter_mut().enumerate().skip(first) {
        *z = estimate_zeta1k(data, kernel, &spec, k, config.budget, seed::derive(config.seed, 10 + k as u64))?;
    }
    let variance = multi_asymptotic_variance(&spec, &zeta, config.s)?;
    let mut out = TestOutcome::from_stat(&stat, InferenceMethod::AsymptoticFirst);
    out.variance_estimate = variance;
    out.p_value = two_sided_normal(out.scaled_statistic / variance.sqrt());
    out.diagnostics.insert("rare_classes".into(), spec.k as f64);
    Ok(out)
}

/// High-dimensional normal limit; the statistic and `xi02` share one pass of pairwise sums.
fn highdim<F: Scalar>(data: &GroupedSample<F>, config: &TestConfig<F>, plan_seed: u64) -> Result<TestOutcome> {
    let kernel = &config.kernel;
    if data.n_classes() != 2 {
        return Err(Error::Arity("the high-dimensional limit is implemented for two classes".into()));
    }
    let metric = Metric::of_kernel(kernel)?;
    let (thinned, scale, info) = match config.s {
        Some(s) => {
            let plan = draw_subsample(data, s, kernel.m0(), plan_seed)?;
            let scale = binomial(plan.realized_count, kernel.m0()) / binomial(s * data.n1(), kernel.m0());
            let info = SubsampleInfo { s, realized_controls: plan.realized_count };
            (Some(data.thin_controls(&plan.inclusion)?), scale, Some(info))
        }
        None => (None, 1.0, None),
    };
    let work = thinned.as_ref().unwrap_or(data);
    work.check_counts(kernel.block_orders())?;
    let sums = PairwiseSums::compute(work.controls(), work.cases(), metric);
    let mut stat = RitStatistic::new(sums.statistic() * F::of(scale), kernel, data.counts(), Algorithm::PairwiseSums);
    stat.subsample = info;
    let pairs = h02_case_pairs(&sums, work.cases(), metric, config.xi02_reference)?;
    let xi02 = crate::projection::sample_variance(&pairs).unwrap_or(0.0);
    let mut out = pvalue_asymptotic_highdim(&stat, xi02)?;
    out.diagnostics.insert("clt_condition_ratio".into(), highdim_condition_ratio(&pairs, data.n1()));
    out.warnings.push("high-dimensional limit assumed; the CLT condition ratio is a plug-in diagnostic only".into());
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::Array2;
    use rand_distr::{Distribution, StandardNormal};

    fn groups(counts: &[usize], p: usize, seed: u64) -> GroupedSample<f64> {
        let mut rng = seed::rng(seed);
        let g = counts
            .iter()
            .map(|&n| {
                Array2::from_shape_fn((n, p), |_| {
                    let z: f64 = StandardNormal.sample(&mut rng);
                    z
                })
            })
            .collect();
        GroupedSample::from_groups(g).unwrap()
    }

    #[test]
    fn auto_resolution() {
        let g = groups(&[200, 20], 1, 1);
        let out = run_test(&g, &TestConfig::new(KernelSpec::kendall())).unwrap();
        assert_eq!(out.method, InferenceMethod::AsymptoticFirst);
        let out = run_test(&g, &TestConfig::new(KernelSpec::dcov()).permutations(19)).unwrap();
        assert_eq!(out.method, InferenceMethod::Permutation);
        let cfg = TestConfig::new(KernelSpec::dcov()).inference(InferenceChoice::Asymptotic);
        assert!(run_test(&g, &cfg).is_err());
    }

    #[test]
    fn deterministic_outcomes() {
        let g = groups(&[400, 20], 1, 2);
        let cfg = TestConfig::new(KernelSpec::kendall()).boosted(5).seed(9);
        assert_eq!(run_test(&g, &cfg).unwrap(), run_test(&g, &cfg).unwrap());
    }

    #[test]
    fn highdim_matches_separate_calls() {
        let g = groups(&[200, 20], 10, 3);
        let cfg = TestConfig::new(KernelSpec::dcov()).inference(InferenceChoice::Highdim);
        let out = run_test(&g, &cfg).unwrap();
        let stat = compute_rit(&g, &KernelSpec::dcov()).unwrap();
        let xi = crate::inference::estimate_xi02(&g, &KernelSpec::dcov(), Xi02Reference::Controls).unwrap();
        let direct = pvalue_asymptotic_highdim(&stat, xi).unwrap();
        assert!((out.p_value - direct.p_value).abs() < 1e-12);
        assert!(out.diagnostics["clt_condition_ratio"].is_finite());
    }

    #[test]
    fn auto_falls_back_on_separation() {
        let c = Array2::from_shape_fn((100, 1), |(i, _)| i as f64);
        let d = Array2::from_shape_fn((10, 1), |(i, _)| 1000.0 + i as f64);
        let g = GroupedSample::from_groups(vec![c, d]).unwrap();
        let out = run_test(&g, &TestConfig::new(KernelSpec::kendall()).permutations(99)).unwrap();
        assert_eq!(out.method, InferenceMethod::Permutation);
        assert_eq!(out.statistic, 1.0);
        assert!((out.p_value - 0.01).abs() < 1e-12);
        assert_eq!(out.warnings.len(), 1);
        let strict = TestConfig::new(KernelSpec::kendall()).inference(InferenceChoice::Asymptotic);
        assert!(matches!(run_test(&g, &strict), Err(Error::Degenerate(_))));
    }

    #[test]
    fn multi_class_asymptotic() {
        let g = groups(&[600, 40, 40], 1, 4);
        let out = run_test(&g, &TestConfig::new(KernelSpec::multi_kendall(2).unwrap())).unwrap();
        assert!(out.p_value > 0.0 && out.p_value <= 1.0);
        assert!((out.variance_estimate - 2.0 / 3.0).abs() < 0.2);
    }
}
