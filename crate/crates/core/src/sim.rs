//! Simulation scenarios, empirical rejection probabilities and runtime scaling.
//!
//! Every replicate draws from `child_rng(seed, rep)` and runs its test with seeds
//! derived from the same pair, so reports are identical for any worker count.

use std::collections::BTreeMap;
use std::fmt;
use std::str::FromStr;
use std::time::Instant;

use ndarray::Array2;
use rand::seq::index::sample;
use rand::Rng as _;
use rand_distr::{Distribution, StandardNormal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::bit::{compute_bit, draw_subsample};
use crate::data::{GroupedSample, LabeledSample};
use crate::error::{Error, Result};
use crate::inference::classical_test;
use crate::kernels::{KernelKind, KernelSpec};
use crate::permutation::{pvalue_classical_permutation, FAST_PERMUTATIONS};
use crate::pipeline::{run_test, InferenceChoice, TestConfig, DEFAULT_BUDGET};
use crate::rit::{compute_classical, compute_rit, ClassicalKind};
use crate::seed;

/// Coordinates carrying the signal in the second-order families.
pub const SIGNAL_COORDS: usize = 10;
/// Lag-one correlation of the AR(1) feature covariance `0.5^|i - j|`.
pub const AR_RHO: f64 = 0.5;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Family {
    /// Cases `N(effect, 1)`, controls `N(0, 1)`, case share held fixed.
    IntroFixedP,
    /// As [`Family::IntroFixedP`] with the number of cases held fixed.
    IntroDecreasingP,
    /// Cases `N(0, 1)`, controls `N(effect, 1)`.
    FirstOrderEg1,
    /// `X ~ N(0, 1)`, `P(Y = 1 | x) = logistic(log(n1 / n0) + effect x)`.
    FirstOrderEg2,
    /// Cases `N(0, S)`, controls `N(mu, S)` with `S_ij = 0.5^|i-j|` and `mu = effect` on the
    /// first ten coordinates.
    SecondOrderEg1,
    /// `X ~ N(0, S)`, logistic labels with slope `effect` on the first ten coordinates.
    SecondOrderEg2,
    /// Controls `N(0, 1)`, cases `(1 - D) N(0, 1) + D N(shift, 1)` with `D = effect / sqrt(n1)`.
    MixtureLocal,
}

impl Family {
    pub const ALL: [Family; 7] = [
        Family::IntroFixedP,
        Family::IntroDecreasingP,
        Family::FirstOrderEg1,
        Family::FirstOrderEg2,
        Family::SecondOrderEg1,
        Family::SecondOrderEg2,
        Family::MixtureLocal,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Family::IntroFixedP => "intro_fixed_p",
            Family::IntroDecreasingP => "intro_decreasing_p",
            Family::FirstOrderEg1 => "first_order_eg1",
            Family::FirstOrderEg2 => "first_order_eg2",
            Family::SecondOrderEg1 => "second_order_eg1",
            Family::SecondOrderEg2 => "second_order_eg2",
            Family::MixtureLocal => "mixture_local",
        }
    }

    pub fn default_effect(self) -> f64 {
        match self {
            Family::IntroFixedP | Family::IntroDecreasingP => 0.2,
            Family::FirstOrderEg1 | Family::FirstOrderEg2 => 0.3,
            Family::SecondOrderEg1 => 0.4,
            Family::SecondOrderEg2 => 0.15,
            Family::MixtureLocal => 1.0,
        }
    }

    pub fn default_p(self) -> usize {
        match self {
            Family::SecondOrderEg1 | Family::SecondOrderEg2 => 50,
            _ => 1,
        }
    }

    fn is_logistic(self) -> bool {
        matches!(self, Family::FirstOrderEg2 | Family::SecondOrderEg2)
    }
}

impl fmt::Display for Family {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Family {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Family::ALL
            .into_iter()
            .find(|f| f.name() == s)
            .ok_or_else(|| Error::InvalidParameter(format!("unknown scenario family `{s}`")))
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ScenarioSpec {
    pub family: Family,
    pub n: usize,
    pub n1: usize,
    pub p: usize,
    /// Effect size; zero gives the null version of the family.
    pub effect: f64,
    /// Location of the contaminating component in [`Family::MixtureLocal`].
    pub mixture_shift: f64,
    pub reps: usize,
    pub alpha: f64,
    pub seed: u64,
}

impl ScenarioSpec {
    pub fn new(family: Family, n: usize, n1: usize) -> Self {
        Self {
            family,
            n,
            n1,
            p: family.default_p(),
            effect: family.default_effect(),
            mixture_shift: 1.0,
            reps: 1000,
            alpha: 0.05,
            seed: 0,
        }
    }

    pub fn with_p(mut self, p: usize) -> Self {
        self.p = p;
        self
    }

    pub fn with_effect(mut self, effect: f64) -> Self {
        self.effect = effect;
        self
    }

    pub fn null(self) -> Self {
        self.with_effect(0.0)
    }

    pub fn with_reps(mut self, reps: usize) -> Self {
        self.reps = reps;
        self
    }

    pub fn with_seed(mut self, seed: u64) -> Self {
        self.seed = seed;
        self
    }

    pub fn with_alpha(mut self, alpha: f64) -> Self {
        self.alpha = alpha;
        self
    }

    pub fn with_mixture_shift(mut self, shift: f64) -> Self {
        self.mixture_shift = shift;
        self
    }

    pub fn n0(&self) -> usize {
        self.n - self.n1
    }

    pub fn validate(&self) -> Result<()> {
        if self.n1 == 0 || self.n1 >= self.n {
            return Err(Error::InvalidParameter(format!("need 0 < n1 < n, got n1 = {}, n = {}", self.n1, self.n)));
        }
        if self.p == 0 {
            return Err(Error::InvalidParameter("p must be positive".into()));
        }
        let scalar = !matches!(self.family, Family::SecondOrderEg1 | Family::SecondOrderEg2);
        if scalar && self.p != 1 {
            return Err(Error::InvalidParameter(format!("{} generates scalar features", self.family)));
        }
        if !(self.alpha > 0.0 && self.alpha < 1.0) {
            return Err(Error::InvalidParameter("alpha must lie in (0, 1)".into()));
        }
        if self.reps == 0 {
            return Err(Error::InvalidParameter("reps must be positive".into()));
        }
        if !self.effect.is_finite() {
            return Err(Error::InvalidParameter("effect must be finite".into()));
        }
        Ok(())
    }
}

fn normal(rng: &mut seed::Rng) -> f64 {
    StandardNormal.sample(rng)
}

/// Rows of `N(0, S)` with `S_ij = 0.5^|i-j|`, via the stationary AR(1) recursion.
fn ar_rows(rng: &mut seed::Rng, n: usize, p: usize) -> Array2<f64> {
    let innovation = (1.0 - AR_RHO * AR_RHO).sqrt();
    let mut out = Array2::zeros((n, p));
    for mut row in out.rows_mut() {
        let mut prev = normal(rng);
        row[0] = prev;
        for j in 1..p {
            prev = AR_RHO * prev + innovation * normal(rng);
            row[j] = prev;
        }
    }
    out
}

fn scalar_rows(rng: &mut seed::Rng, n: usize, mean: f64) -> Array2<f64> {
    Array2::from_shape_fn((n, 1), |_| mean + normal(rng))
}

/// Draws labels from `P(Y = 1) = logistic(eta_i)` and flips labels on the surplus
/// side, chosen uniformly, until exactly `n1` cases remain.
fn logistic_labels(rng: &mut seed::Rng, eta: &[f64], n1: usize) -> Vec<usize> {
    let mut labels: Vec<usize> = eta.iter().map(|&e| usize::from(rng.random::<f64>() < 1.0 / (1.0 + (-e).exp()))).collect();
    let cases = labels.iter().sum::<usize>();
    let (from, count) = if cases > n1 { (1, cases - n1) } else { (0, n1 - cases) };
    if count > 0 {
        let pool: Vec<usize> = (0..labels.len()).filter(|&i| labels[i] == from).collect();
        for k in sample(rng, pool.len(), count) {
            labels[pool[k]] = 1 - from;
        }
    }
    labels
}

/// Replicate `rep` of the scenario as a labeled sample (controls first for fixed-size families).
pub fn generate(spec: &ScenarioSpec, rep: u64) -> Result<LabeledSample<f64>> {
    spec.validate()?;
    let mut rng = seed::child_rng(spec.seed, rep);
    if spec.family.is_logistic() {
        let x = match spec.family {
            Family::FirstOrderEg2 => scalar_rows(&mut rng, spec.n, 0.0),
            _ => ar_rows(&mut rng, spec.n, spec.p),
        };
        let intercept = (spec.n1 as f64 / spec.n0() as f64).ln();
        let signal = SIGNAL_COORDS.min(spec.p);
        let eta: Vec<f64> =
            x.rows().into_iter().map(|r| intercept + spec.effect * r.iter().take(signal).sum::<f64>()).collect();
        let labels = logistic_labels(&mut rng, &eta, spec.n1);
        return LabeledSample::new(x, labels);
    }
    generate_groups(spec, rep)?.reassemble()
}

/// Replicate `rep` grouped by class.
pub fn generate_groups(spec: &ScenarioSpec, rep: u64) -> Result<GroupedSample<f64>> {
    spec.validate()?;
    if spec.family.is_logistic() {
        return generate(spec, rep)?.group_by_label();
    }
    let mut rng = seed::child_rng(spec.seed, rep);
    let (n0, n1) = (spec.n0(), spec.n1);
    let (controls, cases) = match spec.family {
        Family::IntroFixedP | Family::IntroDecreasingP => {
            let c = scalar_rows(&mut rng, n0, 0.0);
            (c, scalar_rows(&mut rng, n1, spec.effect))
        }
        Family::FirstOrderEg1 => {
            let c = scalar_rows(&mut rng, n0, spec.effect);
            (c, scalar_rows(&mut rng, n1, 0.0))
        }
        Family::SecondOrderEg1 => {
            let mut c = ar_rows(&mut rng, n0, spec.p);
            let signal = SIGNAL_COORDS.min(spec.p);
            c.slice_mut(ndarray::s![.., ..signal]).mapv_inplace(|v| v + spec.effect);
            (c, ar_rows(&mut rng, n1, spec.p))
        }
        Family::MixtureLocal => {
            let c = scalar_rows(&mut rng, n0, 0.0);
            let weight = (spec.effect / (n1 as f64).sqrt()).clamp(0.0, 1.0);
            let shift = spec.mixture_shift;
            let d = Array2::from_shape_fn((n1, 1), |_| {
                let from_g = rng.random::<f64>() < weight;
                normal(&mut rng) + if from_g { shift } else { 0.0 }
            });
            (c, d)
        }
        Family::FirstOrderEg2 | Family::SecondOrderEg2 => unreachable!("handled above"),
    };
    GroupedSample::from_groups(vec![controls, cases])
}

/// What each replicate computes.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum MethodConfig {
    Rescaled {
        kernel: KernelKind,
        #[serde(default)]
        params: BTreeMap<String, f64>,
        #[serde(default)]
        s: Option<usize>,
        #[serde(default)]
        inference: InferenceChoice,
        permutations: usize,
    },
    /// Pooled-sample statistic; distance statistics use [`FAST_PERMUTATIONS`] label permutations.
    Classical {
        kind: ClassicalKind,
    },
}

impl MethodConfig {
    pub fn rescaled(kernel: KernelKind) -> Self {
        MethodConfig::Rescaled {
            kernel,
            params: BTreeMap::new(),
            s: None,
            inference: InferenceChoice::Auto,
            permutations: FAST_PERMUTATIONS,
        }
    }

    pub fn classical(kind: ClassicalKind) -> Self {
        MethodConfig::Classical { kind }
    }

    pub fn boosted(mut self, ratio: usize) -> Self {
        if let MethodConfig::Rescaled { s, .. } = &mut self {
            *s = Some(ratio);
        }
        self
    }

    pub fn with_inference(mut self, choice: InferenceChoice) -> Self {
        if let MethodConfig::Rescaled { inference, .. } = &mut self {
            *inference = choice;
        }
        self
    }

    pub fn with_permutations(mut self, b: usize) -> Self {
        if let MethodConfig::Rescaled { permutations, .. } = &mut self {
            *permutations = b;
        }
        self
    }

    pub fn with_param(mut self, key: &str, value: f64) -> Self {
        if let MethodConfig::Rescaled { params, .. } = &mut self {
            params.insert(key.to_string(), value);
        }
        self
    }

    pub fn label(&self) -> String {
        match self {
            MethodConfig::Rescaled { kernel, s: Some(s), .. } => format!("{kernel}_bit_s{s}"),
            MethodConfig::Rescaled { kernel, .. } => format!("{kernel}_rit"),
            MethodConfig::Classical { kind } => format!("classical_{}", kind.name()),
        }
    }

    /// p-value of one replicate.
    pub fn pvalue(&self, spec: &ScenarioSpec, rep: u64) -> Result<f64> {
        let test_seed = seed::derive(seed::derive(spec.seed, rep), 1);
        match self {
            MethodConfig::Classical { kind: kind @ (ClassicalKind::Dcov | ClassicalKind::Ipcov) } => {
                pvalue_classical_permutation(&generate(spec, rep)?, *kind, FAST_PERMUTATIONS, test_seed)
            }
            MethodConfig::Classical { kind } => classical_test(&generate(spec, rep)?, *kind),
            MethodConfig::Rescaled { kernel, params, s, inference, permutations } => {
                let data = generate_groups(spec, rep)?;
                let config = TestConfig {
                    kernel: KernelSpec::from_kind(*kernel, params)?,
                    s: *s,
                    inference: *inference,
                    permutations: *permutations,
                    budget: DEFAULT_BUDGET,
                    xi02_reference: Default::default(),
                    seed: test_seed,
                };
                Ok(run_test(&data, &config)?.p_value)
            }
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct ErpReport {
    pub scenario: ScenarioSpec,
    pub method: MethodConfig,
    pub method_label: String,
    pub erp: f64,
    /// `sqrt(erp (1 - erp) / reps)`.
    pub mc_se: f64,
    pub rejections: usize,
    pub reps: usize,
    pub wall_time_ms: f64,
    pub median_rep_ms: f64,
}

/// p-values of every replicate, in replicate order.
pub fn run_pvalues(spec: &ScenarioSpec, method: &MethodConfig) -> Result<Vec<f64>> {
    spec.validate()?;
    (0..spec.reps as u64).into_par_iter().map(|rep| method.pvalue(spec, rep)).collect()
}

/// Empirical rejection probability at level `spec.alpha`.
pub fn run_erp(spec: &ScenarioSpec, method: &MethodConfig) -> Result<ErpReport> {
    spec.validate()?;
    let start = Instant::now();
    let timed: Vec<(f64, f64)> = (0..spec.reps as u64)
        .into_par_iter()
        .map(|rep| {
            let t = Instant::now();
            let p = method.pvalue(spec, rep)?;
            Ok((p, t.elapsed().as_secs_f64() * 1e3))
        })
        .collect::<Result<_>>()?;
    let rejections = timed.iter().filter(|(p, _)| *p <= spec.alpha).count();
    let erp = rejections as f64 / spec.reps as f64;
    let mut times: Vec<f64> = timed.iter().map(|t| t.1).collect();
    Ok(ErpReport {
        scenario: spec.clone(),
        method: method.clone(),
        method_label: method.label(),
        erp,
        mc_se: (erp * (1.0 - erp) / spec.reps as f64).sqrt(),
        rejections,
        reps: spec.reps,
        wall_time_ms: start.elapsed().as_secs_f64() * 1e3,
        median_rep_ms: median(&mut times),
    })
}

/// Sample sizes used for the introductory figure.
pub const FIGURE1_GRID: [usize; 7] = [200, 500, 1000, 2000, 5000, 10_000, 20_000];
/// Cases held fixed in the decreasing-share scenario.
pub const FIGURE1_FIXED_CASES: usize = 100;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Figure1Scenario {
    /// Half of the sample are cases.
    FixedShare,
    /// [`FIGURE1_FIXED_CASES`] cases whatever the sample size.
    FixedCases,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct Figure1Row {
    pub scenario: Figure1Scenario,
    pub n: usize,
    pub n1: usize,
    pub mean_pearson: f64,
    pub mean_kendall: f64,
    pub power_pearson: f64,
    pub power_kendall: f64,
    pub reps: usize,
}

/// Mean classical correlation and classical-test power at each grid size.
pub fn figure1_phenomenon(
    scenario: Figure1Scenario,
    grid: &[usize],
    reps: usize,
    alpha: f64,
    seed: u64,
) -> Result<Vec<Figure1Row>> {
    grid.iter()
        .enumerate()
        .map(|(i, &n)| {
            let (family, n1) = match scenario {
                Figure1Scenario::FixedShare => (Family::IntroFixedP, n / 2),
                Figure1Scenario::FixedCases => (Family::IntroDecreasingP, FIGURE1_FIXED_CASES),
            };
            let spec = ScenarioSpec::new(family, n, n1).with_reps(reps).with_alpha(alpha).with_seed(seed::derive(seed, i as u64));
            spec.validate()?;
            let per_rep: Vec<[f64; 4]> = (0..reps as u64)
                .into_par_iter()
                .map(|rep| {
                    let sample = generate(&spec, rep)?;
                    Ok([
                        compute_classical(&sample, ClassicalKind::Pearson)?,
                        compute_classical(&sample, ClassicalKind::Kendall)?,
                        classical_test(&sample, ClassicalKind::Pearson)?,
                        classical_test(&sample, ClassicalKind::Kendall)?,
                    ])
                })
                .collect::<Result<_>>()?;
            let m = reps as f64;
            let mean = |k: usize| per_rep.iter().map(|r| r[k]).sum::<f64>() / m;
            let power = |k: usize| per_rep.iter().filter(|r| r[k] <= alpha).count() as f64 / m;
            Ok(Figure1Row {
                scenario,
                n,
                n1,
                mean_pearson: mean(0),
                mean_kendall: mean(1),
                power_pearson: power(2),
                power_kendall: power(3),
                reps,
            })
        })
        .collect()
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BenchTarget {
    /// Full-sample Pearson statistic against `n`.
    PearsonRit,
    /// Full-sample Kendall statistic against `n`.
    KendallRit,
    /// Full-sample dcov statistic against `n`.
    DcovRit,
    /// Boosted dcov statistic against `s` with `n1` fixed.
    DcovBit,
}

impl FromStr for BenchTarget {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "pearson_rit" | "pearson" => Ok(BenchTarget::PearsonRit),
            "kendall_rit" | "kendall" => Ok(BenchTarget::KendallRit),
            "dcov_rit" | "dcov" => Ok(BenchTarget::DcovRit),
            "dcov_bit" => Ok(BenchTarget::DcovBit),
            _ => Err(Error::InvalidParameter(format!("unknown benchmark target `{s}`"))),
        }
    }
}

impl BenchTarget {
    pub fn default_sizes(self) -> Vec<usize> {
        match self {
            BenchTarget::PearsonRit | BenchTarget::KendallRit => vec![100_000, 200_000, 400_000, 800_000],
            BenchTarget::DcovRit => vec![1000, 2000, 4000],
            BenchTarget::DcovBit => vec![10, 20, 40, 80],
        }
    }
}

/// Feature dimension of the dcov benchmarks.
pub const BENCH_P: usize = 32;
/// Cases in the boosted benchmark.
pub const BENCH_BIT_CASES: usize = 50;

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct BenchPoint {
    pub size: usize,
    pub median_ms: f64,
    pub trials: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct BenchReport {
    pub target: BenchTarget,
    pub points: Vec<BenchPoint>,
    /// Least-squares slope of log time against log size.
    pub slope: f64,
}

/// Median wall time over `trials` runs (after one warm-up) at each size.
pub fn benchmark_complexity(target: BenchTarget, sizes: &[usize], trials: usize, seed: u64) -> Result<BenchReport> {
    if sizes.len() < 2 || trials == 0 {
        return Err(Error::InvalidParameter("need at least two sizes and one trial".into()));
    }
    let max_size = *sizes.iter().max().expect("non-empty");
    let mut points = Vec::with_capacity(sizes.len());
    for (i, &size) in sizes.iter().enumerate() {
        let mut run: Box<dyn FnMut() -> Result<()>> = match target {
            BenchTarget::PearsonRit | BenchTarget::KendallRit | BenchTarget::DcovRit => {
                let (kernel, p) = match target {
                    BenchTarget::PearsonRit => (KernelSpec::pearson(), 1),
                    BenchTarget::KendallRit => (KernelSpec::kendall(), 1),
                    _ => (KernelSpec::dcov(), BENCH_P),
                };
                let spec = scenario_for_bench(size, (size / 20).max(10), p, seed)?;
                let data = generate_groups(&spec, i as u64)?;
                Box::new(move || compute_rit(&data, &kernel).map(|_| ()))
            }
            BenchTarget::DcovBit => {
                let n1 = BENCH_BIT_CASES;
                let spec = scenario_for_bench(max_size * n1 + n1, n1, BENCH_P, seed)?;
                let data = generate_groups(&spec, 0)?;
                let kernel = KernelSpec::dcov();
                let mut trial = 0u64;
                Box::new(move || {
                    trial += 1;
                    let plan = draw_subsample(&data, size, 2, seed::derive(seed, trial))?;
                    compute_bit(&data, &kernel, &plan).map(|_| ())
                })
            }
        };
        run()?;
        let mut times = Vec::with_capacity(trials);
        for _ in 0..trials {
            let t = Instant::now();
            run()?;
            times.push(t.elapsed().as_secs_f64() * 1e3);
        }
        points.push(BenchPoint { size, median_ms: median(&mut times), trials });
    }
    let xs: Vec<f64> = points.iter().map(|p| (p.size as f64).ln()).collect();
    let ys: Vec<f64> = points.iter().map(|p| p.median_ms.max(1e-9).ln()).collect();
    Ok(BenchReport { target, slope: loglog_slope(&xs, &ys), points })
}

fn scenario_for_bench(n: usize, n1: usize, p: usize, seed: u64) -> Result<ScenarioSpec> {
    let family = if p == 1 { Family::FirstOrderEg1 } else { Family::SecondOrderEg1 };
    let spec = ScenarioSpec::new(family, n, n1).with_p(p).with_seed(seed).with_reps(1);
    spec.validate()?;
    Ok(spec)
}

/// Ordinary least-squares slope of `ys` on `xs`.
pub fn loglog_slope(xs: &[f64], ys: &[f64]) -> f64 {
    let n = xs.len() as f64;
    let mx = xs.iter().sum::<f64>() / n;
    let my = ys.iter().sum::<f64>() / n;
    let sxy: f64 = xs.iter().zip(ys).map(|(x, y)| (x - mx) * (y - my)).sum();
    let sxx: f64 = xs.iter().map(|x| (x - mx) * (x - mx)).sum();
    sxy / sxx
}

fn median(v: &mut [f64]) -> f64 {
    if v.is_empty() {
        return f64::NAN;
    }
    v.sort_unstable_by(f64::total_cmp);
    let m = v.len() / 2;
    if v.len() % 2 == 1 {
        v[m]
    } else {
        0.5 * (v[m - 1] + v[m])
    }
}
