//! Variance estimation, asymptotic p-values and theoretical power.

use std::collections::BTreeMap;

use ndarray::ArrayView2;
use rayon::prelude::*;
use serde::Serialize;
use statrs::distribution::{ContinuousCDF, Normal, StudentsT};

use crate::bit::normal_quantile;
use crate::data::{GroupedSample, LabeledSample};
use crate::error::{Error, Result};
use crate::kernels::{KernelKind, KernelSpec, Order};
use crate::projection::{project_point, sample_variance, Metric, SlotFill};
use crate::rit::{compute_classical, rank_sign, sort_floats, ClassicalKind, PairwiseSums, RitStatistic};
use crate::scalar::{stable_sum, Scalar};
use crate::seed;

/// Smallest tuple budget accepted by the projection estimators.
pub const MIN_BUDGET: usize = 30;
/// Control points used by the generic `xi10` estimator.
pub const XI10_POINTS: usize = 500;
/// Cases entering the high-dimensional CLT diagnostic.
pub const DIAGNOSTIC_CASES: usize = 400;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum InferenceMethod {
    AsymptoticFirst,
    AsymptoticHighdim,
    Permutation,
    Classical,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct TestOutcome {
    pub statistic: f64,
    /// `sqrt(n1) T` for first-order kernels, `n1 T` for second-order ones.
    pub scaled_statistic: f64,
    pub variance_estimate: f64,
    pub p_value: f64,
    pub method: InferenceMethod,
    pub kernel: KernelKind,
    pub n0: usize,
    pub n1: usize,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub s: Option<usize>,
    #[serde(rename = "B", skip_serializing_if = "Option::is_none")]
    pub permutations: Option<usize>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub seed: Option<u64>,
    pub diagnostics: BTreeMap<String, f64>,
    pub warnings: Vec<String>,
}

impl TestOutcome {
    pub(crate) fn from_stat<F: Scalar>(stat: &RitStatistic<F>, method: InferenceMethod) -> Self {
        let t = stat.value.to_f64_lossy();
        let n1 = stat.n1() as f64;
        let scaled = match stat.order {
            Order::First => n1.sqrt() * t,
            Order::Second => n1 * t,
        };
        let mut warnings = Vec::new();
        if stat.is_budgeted() {
            warnings.push("statistic evaluated on a random subset of control tuples".to_string());
        }
        Self {
            statistic: t,
            scaled_statistic: scaled,
            variance_estimate: f64::NAN,
            p_value: f64::NAN,
            method,
            kernel: stat.kernel,
            n0: stat.n0(),
            n1: stat.n1(),
            s: stat.subsample.as_ref().map(|s| s.s),
            permutations: None,
            seed: None,
            diagnostics: BTreeMap::new(),
            warnings,
        }
    }

    pub fn rejects(&self, alpha: f64) -> bool {
        self.p_value <= alpha
    }
}

fn std_normal() -> Normal {
    Normal::standard()
}

/// Two-sided normal p-value of `z` against `N(0, 1)`.
pub fn two_sided_normal(z: f64) -> f64 {
    (2.0 * std_normal().sf(z.abs())).min(1.0)
}

fn check_first_order<F: Scalar>(kernel: &KernelSpec<F>) -> Result<()> {
    if kernel.order() != Order::First || kernel.n_blocks() != 2 {
        return Err(Error::Arity(format!("{} is not a first-order two-block kernel", kernel.kind())));
    }
    Ok(())
}

/// `xi01 = Var h_{0,1}(X^(1))`: the sample variance over cases of the kernel averaged
/// over control tuples (at most `budget` per case, exhaustive when cheaper).
///
/// Pearson and Kendall use exact closed forms of the plug-in projection.
pub fn estimate_xi01<F: Scalar>(data: &GroupedSample<F>, kernel: &KernelSpec<F>, budget: usize, seed: u64) -> Result<f64> {
    check_first_order(kernel)?;
    kernel.check_dimension(data.p())?;
    if data.n1() < 2 {
        return Err(Error::InsufficientSamples { class: 1, needed: 2, available: data.n1() });
    }
    let values: Vec<f64> = match kernel.kind() {
        // h01(x) = x - E X0; the shift does not change the variance.
        KernelKind::RescaledPearson => data.column0(1).iter().map(|v| v.to_f64_lossy()).collect(),
        KernelKind::RescaledKendall | KernelKind::MultiKendall => {
            let mut controls = data.column0(0);
            sort_floats(&mut controls);
            let n0 = controls.len() as f64;
            data.column0(1).iter().map(|&x| rank_sign(&controls, x) as f64 / n0).collect()
        }
        _ => {
            if budget < MIN_BUDGET {
                return Err(Error::InvalidParameter(format!("budget must be at least {MIN_BUDGET}")));
            }
            data.check_counts(kernel.block_orders())?;
            let controls = data.rows(0);
            let cases = data.rows(1);
            (0..cases.len())
                .into_par_iter()
                .map(|i| {
                    let others: Vec<&[F]> =
                        cases.iter().enumerate().filter(|&(j, _)| j != i).map(|(_, r)| *r).collect();
                    let fill = SlotFill {
                        pools: vec![controls.clone(), others],
                        block_pool: vec![0, 1],
                        slots: vec![kernel.m0(), kernel.m1() - 1],
                    };
                    let mut rng = seed::child_rng(seed, i as u64);
                    project_point(kernel, 1, cases[i], &fill, budget, &mut rng).map(|(v, _)| v.to_f64_lossy())
                })
                .collect::<Result<_>>()?
        }
    };
    Ok(sample_variance(&values).unwrap_or(0.0))
}

/// `xi10 = Var h_{1,0}(X^(0))`, estimated like [`estimate_xi01`] with the roles of
/// the two blocks exchanged.
pub fn estimate_xi10<F: Scalar>(data: &GroupedSample<F>, kernel: &KernelSpec<F>, budget: usize, seed: u64) -> Result<f64> {
    check_first_order(kernel)?;
    kernel.check_dimension(data.p())?;
    if data.n0() < 2 {
        return Err(Error::InsufficientSamples { class: 0, needed: 2, available: data.n0() });
    }
    let values: Vec<f64> = match kernel.kind() {
        KernelKind::RescaledPearson => data.column0(0).iter().map(|v| v.to_f64_lossy()).collect(),
        KernelKind::RescaledKendall | KernelKind::MultiKendall => {
            let mut cases = data.column0(1);
            sort_floats(&mut cases);
            let n1 = cases.len() as f64;
            data.column0(0).iter().map(|&x| -(rank_sign(&cases, x) as f64) / n1).collect()
        }
        _ => {
            if budget < MIN_BUDGET {
                return Err(Error::InvalidParameter(format!("budget must be at least {MIN_BUDGET}")));
            }
            data.check_counts(kernel.block_orders())?;
            let controls = data.rows(0);
            let cases = data.rows(1);
            let points: Vec<usize> = if controls.len() <= XI10_POINTS {
                (0..controls.len()).collect()
            } else {
                let mut rng = seed::child_rng(seed, u64::MAX);
                let mut idx = rand::seq::index::sample(&mut rng, controls.len(), XI10_POINTS).into_vec();
                idx.sort_unstable();
                idx
            };
            points
                .par_iter()
                .map(|&i| {
                    let others: Vec<&[F]> = if kernel.m0() > 1 {
                        controls.iter().enumerate().filter(|&(j, _)| j != i).map(|(_, r)| *r).collect()
                    } else {
                        Vec::new()
                    };
                    let fill = SlotFill {
                        pools: vec![others, cases.clone()],
                        block_pool: vec![0, 1],
                        slots: vec![kernel.m0() - 1, kernel.m1()],
                    };
                    let mut rng = seed::child_rng(seed, i as u64);
                    project_point(kernel, 0, controls[i], &fill, budget, &mut rng).map(|(v, _)| v.to_f64_lossy())
                })
                .collect::<Result<_>>()?
        }
    };
    Ok(sample_variance(&values).unwrap_or(0.0))
}

/// Rows whose distances centre the two-case projection.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum Xi02Reference {
    /// The controls: same law as the cases under the null, and plentiful.
    #[default]
    Controls,
    /// Controls and cases together, natural when the null is simulated by permutation.
    Pooled,
}

fn check_second_order<F: Scalar>(kernel: &KernelSpec<F>) -> Result<Metric> {
    if kernel.order() != Order::Second {
        return Err(Error::Arity(format!("{} is not a second-order kernel", kernel.kind())));
    }
    Metric::of_kernel(kernel)
}

/// `xi02 = Var h_{0,2}(X_1^(1), X_2^(1))` over the case pairs, with the plug-in
/// projection `h02(x, y) = 2 {D(x) + D(y) - d(x, y) - gamma}`.
pub fn estimate_xi02<F: Scalar>(data: &GroupedSample<F>, kernel: &KernelSpec<F>, reference: Xi02Reference) -> Result<f64> {
    let metric = check_second_order(kernel)?;
    if data.n1() < 3 {
        return Err(Error::InsufficientSamples { class: 1, needed: 3, available: data.n1() });
    }
    let sums = PairwiseSums::compute(data.controls(), data.cases(), metric);
    xi02_from_sums(&sums, data.cases(), metric, reference)
}

/// [`estimate_xi02`] reusing the double sums already computed for the statistic.
pub fn xi02_from_sums<F: Scalar>(
    sums: &PairwiseSums<F>,
    cases: ArrayView2<'_, F>,
    metric: Metric,
    reference: Xi02Reference,
) -> Result<f64> {
    let values = h02_case_pairs(sums, cases, metric, reference)?;
    sample_variance(&values).ok_or_else(|| Error::InsufficientSamples { class: 1, needed: 3, available: cases.nrows() })
}

/// Plug-in `h02` on every case pair `i < j`, row-major over `i`.
pub fn h02_case_pairs<F: Scalar>(
    sums: &PairwiseSums<F>,
    cases: ArrayView2<'_, F>,
    metric: Metric,
    reference: Xi02Reference,
) -> Result<Vec<f64>> {
    let n1 = cases.nrows();
    if n1 < 3 {
        return Err(Error::InsufficientSamples { class: 1, needed: 3, available: n1 });
    }
    let p = cases.ncols();
    let flat = cases.as_slice().ok_or_else(|| Error::InvalidSample("cases must be contiguous".into()))?;
    let rows: Vec<&[F]> = flat.chunks_exact(p).collect();
    let dist: Vec<Vec<f64>> = (0..n1)
        .into_par_iter()
        .map(|i| (0..n1).map(|j| if i == j { 0.0 } else { metric.eval(rows[i], rows[j]).to_f64_lossy() }).collect())
        .collect();
    let n0 = sums.n0 as f64;
    let to_controls: Vec<f64> = sums.case_to_controls.iter().map(|v| v.to_f64_lossy()).collect();
    let (means, gamma): (Vec<f64>, f64) = match reference {
        Xi02Reference::Controls => {
            (to_controls.iter().map(|v| v / n0).collect(), 2.0 * sums.within_controls.to_f64_lossy() / (n0 * n0))
        }
        Xi02Reference::Pooled => {
            let n = n0 + n1 as f64;
            let means = (0..n1).map(|i| (to_controls[i] + stable_sum(dist[i].iter().copied())) / n).collect();
            let all = sums.within_controls.to_f64_lossy() + sums.within_cases.to_f64_lossy() + sums.cross.to_f64_lossy();
            (means, 2.0 * all / (n * n))
        }
    };
    let mut values = Vec::with_capacity(n1 * (n1 - 1) / 2);
    for i in 0..n1 {
        for j in i + 1..n1 {
            values.push(2.0 * (means[i] + means[j] - dist[i][j] - gamma));
        }
    }
    Ok(values)
}

/// Plug-in value of the ratio that must vanish for the high-dimensional normal limit:
/// `(E G^2 + E h^4 / n1) / (E h^2)^2` with `G(x, y) = E h(X, x) h(X, y)`.
/// Uses at most [`DIAGNOSTIC_CASES`] cases.
pub fn highdim_condition_ratio(pair_values: &[f64], n1: usize) -> f64 {
    let m = n1.min(DIAGNOSTIC_CASES);
    if m < 3 {
        return f64::NAN;
    }
    let mut h = vec![vec![0.0; m]; m];
    let pairs = (0..n1).flat_map(|i| (i + 1..n1).map(move |j| (i, j)));
    for ((i, j), &v) in pairs.zip(pair_values) {
        if j < m {
            h[i][j] = v;
            h[j][i] = v;
        }
    }
    let pairs = (m * (m - 1) / 2) as f64;
    let (mut e2, mut e4, mut g2) = (0.0, 0.0, 0.0);
    for i in 0..m {
        for j in i + 1..m {
            let v = h[i][j];
            e2 += v * v;
            e4 += v.powi(4);
            let g: f64 = (0..m).filter(|&l| l != i && l != j).map(|l| h[i][l] * h[j][l]).sum::<f64>() / (m - 2) as f64;
            g2 += g * g;
        }
    }
    let (e2, e4, g2) = (e2 / pairs, e4 / pairs, g2 / pairs);
    (g2 + e4 / n1 as f64) / (e2 * e2)
}

/// Two-sided p-value from the normal limit of `sqrt(n1) T` (full sample) or
/// `sqrt(n1) T_S` (boosted, pass `xi10`).
pub fn pvalue_asymptotic_first<F: Scalar>(stat: &RitStatistic<F>, xi01: f64, xi10: Option<f64>) -> Result<TestOutcome> {
    if stat.order != Order::First {
        return Err(Error::Arity("first-order p-values need a first-order kernel".into()));
    }
    if !(xi01 > 0.0) {
        return Err(Error::Degenerate("xi01 <= 0: use the permutation or second-order path".into()));
    }
    let (m0, m1) = (stat.m0() as f64, stat.m1() as f64);
    let mut variance = m1 * m1 * xi01;
    if let Some(info) = &stat.subsample {
        let xi10 = xi10.ok_or_else(|| Error::InvalidParameter("boosted statistic needs xi10".into()))?;
        variance += m0 * m0 * xi10 / info.s as f64;
    }
    let mut out = TestOutcome::from_stat(stat, InferenceMethod::AsymptoticFirst);
    out.variance_estimate = variance;
    out.p_value = two_sided_normal(out.scaled_statistic / variance.sqrt());
    Ok(out)
}

/// Two-sided p-value from the high-dimensional limit
/// `n1 T / sqrt(xi02) ~ N(0, m1^2 (m1 - 1)^2 / 2)`.
pub fn pvalue_asymptotic_highdim<F: Scalar>(stat: &RitStatistic<F>, xi02: f64) -> Result<TestOutcome> {
    if stat.order != Order::Second {
        return Err(Error::Arity("high-dimensional p-values need a second-order kernel".into()));
    }
    if !(xi02 > 0.0) {
        return Err(Error::Degenerate("xi02 <= 0".into()));
    }
    let m1 = stat.m1() as f64;
    let null_var = m1 * m1 * (m1 - 1.0) * (m1 - 1.0) / 2.0;
    let mut out = TestOutcome::from_stat(stat, InferenceMethod::AsymptoticHighdim);
    out.scaled_statistic /= xi02.sqrt();
    out.variance_estimate = xi02;
    out.p_value = two_sided_normal(out.scaled_statistic / null_var.sqrt());
    out.diagnostics.insert("null_variance".into(), null_var);
    Ok(out)
}

/// Classical pooled tests used as baselines: the Pearson t-test (`df = n - 2`) and
/// Kendall's z-test with null variance `4 p (1 - p) / (3 n)`, `p = n1 / n`.
pub fn classical_test<F: Scalar>(sample: &LabeledSample<F>, kind: ClassicalKind) -> Result<f64> {
    let n = sample.n() as f64;
    let stat = compute_classical(sample, kind)?;
    match kind {
        ClassicalKind::Pearson => {
            if !stat.is_finite() {
                return Err(Error::Degenerate("constant feature or label".into()));
            }
            let t = stat * ((n - 2.0) / (1.0 - stat * stat)).sqrt();
            let dist = StudentsT::new(0.0, 1.0, n - 2.0).map_err(|e| Error::Numerical(e.to_string()))?;
            Ok((2.0 * dist.sf(t.abs())).min(1.0))
        }
        ClassicalKind::Kendall => {
            let p1 = sample.labels().iter().filter(|&&y| y == 1).count() as f64 / n;
            if p1 == 0.0 || p1 == 1.0 {
                return Err(Error::Degenerate("labels are constant".into()));
            }
            Ok(two_sided_normal(stat / (4.0 * p1 * (1.0 - p1) / (3.0 * n)).sqrt()))
        }
        _ => Err(Error::InvalidParameter("distance statistics have no closed-form classical test".into())),
    }
}

/// Theoretical power of the first-order test with effect `mu0 = E h`.
///
/// With `bit = Some((s, xi10))` the boosted variance `m1^2 xi01 + m0^2 xi10 / s` is used.
pub fn power_first_order(
    mu0: f64,
    n1: usize,
    m0: usize,
    m1: usize,
    xi01: f64,
    alpha: f64,
    bit: Option<(usize, f64)>,
) -> Result<f64> {
    if !(xi01 > 0.0) || n1 == 0 {
        return Err(Error::InvalidParameter("power needs xi01 > 0 and n1 >= 1".into()));
    }
    let (m0, m1) = (m0 as f64, m1 as f64);
    let mut variance = m1 * m1 * xi01;
    if let Some((s, xi10)) = bit {
        variance += m0 * m0 * xi10 / s as f64;
    }
    let shift = mu0 * (n1 as f64 / variance).sqrt();
    Ok(two_sided_power(shift, alpha))
}

/// Theoretical power of the high-dimensional second-order test.
pub fn power_highdim(mu0: f64, n1: usize, m1: usize, xi02: f64, alpha: f64) -> Result<f64> {
    if !(xi02 > 0.0) || m1 < 2 {
        return Err(Error::InvalidParameter("power needs xi02 > 0 and m1 >= 2".into()));
    }
    let m1 = m1 as f64;
    Ok(two_sided_power(mu0 * n1 as f64 / (m1 * (m1 - 1.0) * xi02.sqrt()), alpha))
}

/// `Phi(z_(alpha/2) - shift) + 1 - Phi(z_(1-alpha/2) - shift)`, written with the
/// lower quantile only so that `shift = 0` does not pick up quantile round-off.
fn two_sided_power(shift: f64, alpha: f64) -> f64 {
    if shift == 0.0 {
        return alpha;
    }
    let n = std_normal();
    let lo = normal_quantile(alpha / 2.0);
    n.cdf(lo - shift) + n.cdf(lo + shift)
}

/// Smallest mixture weight scale `C` such that the local alternative with
/// `Delta0 > C` reaches the target: `C = {z_(1-alpha/2) - z_(1-beta)} sqrt(xi) / |mu_G1|`.
///
/// Larger `beta` gives a larger `C`: the limiting power at `Delta0 = C` is exactly `beta`.
pub fn local_power_threshold(beta: f64, alpha: f64, mu_g1: f64, xi_eff: f64) -> Result<f64> {
    if mu_g1 == 0.0 {
        return Err(Error::InvalidParameter("mu_G1 must be non-zero".into()));
    }
    if !(alpha > 0.0 && alpha < 1.0 && beta > 0.0 && beta < 1.0 - alpha) {
        return Err(Error::InvalidParameter("need 0 < beta < 1 - alpha".into()));
    }
    if !(xi_eff > 0.0) {
        return Err(Error::InvalidParameter("xi must be positive".into()));
    }
    Ok((normal_quantile(1.0 - alpha / 2.0) - normal_quantile(1.0 - beta)) * xi_eff.sqrt() / mu_g1.abs())
}

/// `xi01 + m0^2 xi10 / (s m1^2)`: the effective variance of the boosted test.
pub fn boosted_effective_xi(xi01: f64, xi10: f64, m0: usize, m1: usize, s: usize) -> f64 {
    xi01 + (m0 * m0) as f64 * xi10 / (s as f64 * (m1 * m1) as f64)
}
