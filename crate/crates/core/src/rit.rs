//! Full-sample rescaled statistics `T` and their classical (pooled) counterparts.
//!
//! `T` averages the kernel over every combination of `m_k` rows from each class
//! `k`. The built-in kernels have exact fast paths:
//!
//! | kernel               | path                                   | cost          |
//! |----------------------|----------------------------------------|---------------|
//! | `rescaled_pearson`   | difference of group means              | `O(n)`        |
//! | `rescaled_kendall`   | sorted merge count of cross-pair signs | `O(n log n)`  |
//! | `imbalanced_kendall` | tuple enumeration (or budgeted subset) | see [`IMBALANCED_EXACT_LIMIT`] |
//! | `rescaled_dcov/ipcov`| three pairwise double sums             | `O(p n^2)`    |

use std::collections::HashSet;

use ndarray::ArrayView2;
use rand::seq::index::sample;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::data::{GroupedSample, LabeledSample};
use crate::error::{Error, Result};
use crate::kernels::{KernelKind, KernelSpec, Order};
use crate::projection::{binomial, next_combination, Metric};
use crate::scalar::{stable_sum, CompensatedSum, Scalar};
use crate::seed;

/// Largest `C(n0, m) * n1` evaluated exactly for `imbalanced_kendall`.
pub const IMBALANCED_EXACT_LIMIT: f64 = 1e7;
/// Control tuples drawn when the imbalanced Kendall enumeration is too large.
pub const IMBALANCED_BUDGET: usize = 100_000;
/// Fixed seed for the budgeted imbalanced Kendall path.
pub const IMBALANCED_SEED: u64 = 0x1BA1_A4CE;
/// Largest number of tuples enumerated by the brute-force engine.
pub const BRUTE_FORCE_LIMIT: f64 = 1e7;

/// Rows per work unit in the pairwise sums; fixed so reductions do not depend on
/// the thread count.
const PAIR_CHUNK: usize = 64;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum Algorithm {
    GroupMeans,
    MergeCount,
    TupleEnumeration,
    /// Random subset of control tuples; the value is an approximation.
    Budgeted,
    PairwiseSums,
    BruteForce,
}

/// Subsampling metadata attached to boosted statistics.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct SubsampleInfo {
    pub s: usize,
    pub realized_controls: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct RitStatistic<F> {
    pub value: F,
    pub kernel: KernelKind,
    pub block_orders: Vec<usize>,
    pub order: Order,
    /// Class sizes `n0, n1, ...` of the data the statistic describes.
    pub counts: Vec<usize>,
    pub algorithm: Algorithm,
    pub subsample: Option<SubsampleInfo>,
}

impl<F: Scalar> RitStatistic<F> {
    pub fn n0(&self) -> usize {
        self.counts[0]
    }

    pub fn n1(&self) -> usize {
        self.counts[1]
    }

    pub fn m0(&self) -> usize {
        self.block_orders[0]
    }

    pub fn m1(&self) -> usize {
        self.block_orders[1]
    }

    pub fn is_budgeted(&self) -> bool {
        self.algorithm == Algorithm::Budgeted
    }

    pub(crate) fn new(value: F, kernel: &KernelSpec<F>, counts: Vec<usize>, algorithm: Algorithm) -> Self {
        Self {
            value,
            kernel: kernel.kind(),
            block_orders: kernel.block_orders().to_vec(),
            order: kernel.order(),
            counts,
            algorithm,
            subsample: None,
        }
    }
}

fn validate<F: Scalar>(data: &GroupedSample<F>, kernel: &KernelSpec<F>) -> Result<()> {
    kernel.check_dimension(data.p())?;
    data.check_counts(kernel.block_orders())
}

/// Exact `T` via the fastest path available for the kernel.
pub fn compute_rit<F: Scalar>(data: &GroupedSample<F>, kernel: &KernelSpec<F>) -> Result<RitStatistic<F>> {
    validate(data, kernel)?;
    let counts = data.counts();
    let (value, algorithm) = match kernel.kind() {
        KernelKind::RescaledPearson => (mean_difference(&data.column0(0), &data.column0(1)), Algorithm::GroupMeans),
        KernelKind::RescaledKendall | KernelKind::MultiKendall => {
            let mut controls = data.column0(0);
            sort_floats(&mut controls);
            let mut total = F::zero();
            for k in 1..data.n_classes() {
                let mut cases = data.column0(k);
                sort_floats(&mut cases);
                let s = sorted_sign_sum(&controls, &cases);
                total = total + F::of(s as f64) / (F::of(controls.len() as f64) * F::of(cases.len() as f64));
            }
            (total, Algorithm::MergeCount)
        }
        KernelKind::ImbalancedKendall => imbalanced_kendall(data, kernel.m0()),
        KernelKind::RescaledDcov | KernelKind::RescaledIpcov => {
            let sums = PairwiseSums::compute(data.controls(), data.cases(), Metric::of_kernel(kernel)?);
            (sums.statistic(), Algorithm::PairwiseSums)
        }
        KernelKind::Custom => return compute_rit_bruteforce(data, kernel),
    };
    Ok(RitStatistic::new(value, kernel, counts, algorithm))
}

/// Literal enumeration of every tuple; the reference oracle for [`compute_rit`].
pub fn compute_rit_bruteforce<F: Scalar>(
    data: &GroupedSample<F>,
    kernel: &KernelSpec<F>,
) -> Result<RitStatistic<F>> {
    validate(data, kernel)?;
    let counts = data.counts();
    let orders = kernel.block_orders();
    let total: f64 = counts.iter().zip(orders).map(|(&n, &m)| binomial(n, m)).product();
    if total > BRUTE_FORCE_LIMIT {
        return Err(Error::TooManyCombinations { count: total, limit: BRUTE_FORCE_LIMIT });
    }
    let rows: Vec<Vec<&[F]>> = (0..data.n_classes()).map(|k| data.rows(k)).collect();
    let nb = orders.len();
    let mut idx: Vec<Vec<usize>> = orders.iter().map(|&m| (0..m).collect()).collect();
    let mut acc = CompensatedSum::new();
    'outer: loop {
        let blocks: Vec<Vec<&[F]>> =
            (0..nb).map(|b| idx[b].iter().map(|&i| rows[b][i]).collect()).collect();
        acc.add(kernel.eval(&blocks));
        for b in (0..nb).rev() {
            if next_combination(&mut idx[b], counts[b]) {
                continue 'outer;
            }
            idx[b] = (0..orders[b]).collect();
        }
        break;
    }
    let value = acc.value() / F::of(total);
    Ok(RitStatistic::new(value, kernel, counts, Algorithm::BruteForce))
}

pub(crate) fn mean_difference<F: Scalar>(controls: &[F], cases: &[F]) -> F {
    let m1 = stable_sum(cases.iter().copied()) / F::of(cases.len() as f64);
    let m0 = stable_sum(controls.iter().copied()) / F::of(controls.len() as f64);
    m1 - m0
}

pub(crate) fn sort_floats<F: Scalar>(v: &mut [F]) {
    v.sort_unstable_by(|a, b| a.partial_cmp(b).expect("finite features"));
}

/// `sum_{i,j} sgn(cases[i] - controls[j])` for ascending inputs, by a single merge pass.
pub fn sorted_sign_sum<F: Scalar>(controls: &[F], cases: &[F]) -> i64 {
    let n0 = controls.len() as i64;
    let (mut below, mut not_above) = (0usize, 0usize);
    let mut total = 0i64;
    for &x in cases {
        while below < controls.len() && controls[below] < x {
            below += 1;
        }
        not_above = not_above.max(below);
        while not_above < controls.len() && controls[not_above] <= x {
            not_above += 1;
        }
        total += below as i64 - (n0 - not_above as i64);
    }
    total
}

/// `#{reference < x} - #{reference > x}` for an ascending reference.
pub(crate) fn rank_sign<F: Scalar>(sorted: &[F], x: F) -> i64 {
    let below = sorted.partition_point(|&v| v < x);
    let not_above = sorted.partition_point(|&v| v <= x);
    below as i64 - (sorted.len() - not_above) as i64
}

fn imbalanced_kendall<F: Scalar>(data: &GroupedSample<F>, m: usize) -> (F, Algorithm) {
    let controls = data.column0(0);
    let mut cases = data.column0(1);
    sort_floats(&mut cases);
    if m == 1 {
        let mut c = controls;
        sort_floats(&mut c);
        let s = sorted_sign_sum(&c, &cases);
        return (F::of(s as f64) / F::of((c.len() * cases.len()) as f64), Algorithm::MergeCount);
    }
    let n0 = controls.len();
    let mf = F::of(m as f64);
    // Each control-tuple mean is compared against every case at once.
    let tuple_term = |idx: &[usize]| -> i64 {
        let mean = idx.iter().map(|&i| controls[i]).sum::<F>() / mf;
        -rank_sign(&cases, mean)
    };
    let tuples = binomial(n0, m);
    if tuples * cases.len() as f64 <= IMBALANCED_EXACT_LIMIT {
        let mut idx: Vec<usize> = (0..m).collect();
        let mut total = 0i64;
        loop {
            total += tuple_term(&idx);
            if !next_combination(&mut idx, n0) {
                break;
            }
        }
        let denom = F::of(tuples) * F::of(cases.len() as f64);
        (F::of(total as f64) / denom, Algorithm::TupleEnumeration)
    } else {
        let mut rng = seed::rng(IMBALANCED_SEED);
        let mut seen = HashSet::with_capacity(IMBALANCED_BUDGET);
        let mut total = 0i64;
        while seen.len() < IMBALANCED_BUDGET {
            let mut idx = sample(&mut rng, n0, m).into_vec();
            idx.sort_unstable();
            if seen.insert(idx.clone()) {
                total += tuple_term(&idx);
            }
        }
        let denom = F::of(IMBALANCED_BUDGET as f64) * F::of(cases.len() as f64);
        (F::of(total as f64) / denom, Algorithm::Budgeted)
    }
}

/// Rows of a matrix with cached quantities for a metric.
struct Prepared<'a, F> {
    rows: Vec<&'a [F]>,
    /// `sqrt(c + x'x)` for the angular metric.
    norms: Vec<F>,
}

impl<'a, F: Scalar> Prepared<'a, F> {
    fn new(m: ArrayView2<'a, F>, metric: Metric) -> Self {
        let p = m.ncols();
        let rows: Vec<&'a [F]> = m.to_slice().expect("standard layout").chunks_exact(p).collect();
        let norms = match metric {
            Metric::Euclidean => Vec::new(),
            Metric::Angular(c) => rows.iter().map(|r| (F::of(c) + crate::kernels::dot(r, r)).sqrt()).collect(),
        };
        Self { rows, norms }
    }
}

#[inline]
fn pair<F: Scalar>(metric: Metric, a: &Prepared<'_, F>, i: usize, b: &Prepared<'_, F>, j: usize) -> F {
    match metric {
        Metric::Euclidean => crate::kernels::euclidean(a.rows[i], b.rows[j]),
        Metric::Angular(_) if a.rows[i] == b.rows[j] => F::zero(),
        Metric::Angular(c) => {
            let arg = (F::of(c) + crate::kernels::dot(a.rows[i], b.rows[j])) / (a.norms[i] * b.norms[j]);
            arg.max(-F::one()).min(F::one()).acos()
        }
    }
}

/// The three double sums behind the dcov/ipcov statistics.
#[derive(Clone, Debug)]
pub struct PairwiseSums<F> {
    pub n0: usize,
    pub n1: usize,
    /// `sum_{i,j} d(case_i, control_j)`.
    pub cross: F,
    /// `sum_{i<j} d(control_i, control_j)`.
    pub within_controls: F,
    /// `sum_{i<j} d(case_i, case_j)`.
    pub within_cases: F,
    /// `sum_j d(case_i, control_j)` per case.
    pub case_to_controls: Vec<F>,
}

impl<F: Scalar> PairwiseSums<F> {
    pub fn compute(controls: ArrayView2<'_, F>, cases: ArrayView2<'_, F>, metric: Metric) -> Self {
        let c0 = Prepared::new(controls, metric);
        let c1 = Prepared::new(cases, metric);
        let within_controls = within_sum(&c0, metric);
        let within_cases = within_sum(&c1, metric);
        let case_to_controls: Vec<F> = (0..c1.rows.len())
            .into_par_iter()
            .map(|i| {
                let s: CompensatedSum<F> = (0..c0.rows.len()).map(|j| pair(metric, &c1, i, &c0, j)).collect();
                s.value()
            })
            .collect();
        let cross = stable_sum(case_to_controls.iter().copied());
        Self { n0: c0.rows.len(), n1: c1.rows.len(), cross, within_controls, within_cases, case_to_controls }
    }

    /// `4/(n0 n1) * cross - 4/(n0 (n0-1)) * within_controls - 4/(n1 (n1-1)) * within_cases`.
    pub fn statistic(&self) -> F {
        let (n0, n1) = (F::of(self.n0 as f64), F::of(self.n1 as f64));
        let four = F::of(4.0);
        four * self.cross / (n0 * n1)
            - four * self.within_controls / (n0 * (n0 - F::one()))
            - four * self.within_cases / (n1 * (n1 - F::one()))
    }
}

fn within_sum<F: Scalar>(m: &Prepared<'_, F>, metric: Metric) -> F {
    let n = m.rows.len();
    let starts: Vec<usize> = (0..n).step_by(PAIR_CHUNK).collect();
    let partial: Vec<CompensatedSum<F>> = starts
        .into_par_iter()
        .map(|start| {
            let mut acc = CompensatedSum::new();
            for i in start..(start + PAIR_CHUNK).min(n) {
                for j in i + 1..n {
                    acc.add(pair(metric, m, i, m, j));
                }
            }
            acc
        })
        .collect();
    let mut total = CompensatedSum::new();
    for p in &partial {
        total.merge(p);
    }
    total.value()
}

/// Classical statistics on the pooled sample with binary labels.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ClassicalKind {
    Pearson,
    Kendall,
    Dcov,
    Ipcov,
}

impl ClassicalKind {
    pub fn name(self) -> &'static str {
        match self {
            ClassicalKind::Pearson => "pearson",
            ClassicalKind::Kendall => "kendall",
            ClassicalKind::Dcov => "dcov",
            ClassicalKind::Ipcov => "ipcov",
        }
    }
}

impl std::str::FromStr for ClassicalKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        [ClassicalKind::Pearson, ClassicalKind::Kendall, ClassicalKind::Dcov, ClassicalKind::Ipcov]
            .into_iter()
            .find(|k| k.name() == s)
            .ok_or_else(|| Error::InvalidParameter(format!("unknown classical statistic `{s}`")))
    }
}

/// Classical (unrescaled) statistic:
///
/// * `Pearson`: the sample correlation between `X` and `Y`;
/// * `Kendall`: `n^-2 sum_{i,j} sgn(X_i - X_j) sgn(Y_i - Y_j)`;
/// * `Dcov`/`Ipcov`: the V-statistic `S1 + S2 - 2 S3` with `|Y_i - Y_j|` on the label
///   side and the Euclidean / angular metric (`c_sigma2 = 1`) on the feature side.
pub fn compute_classical<F: Scalar>(sample: &LabeledSample<F>, kind: ClassicalKind) -> Result<f64> {
    if sample.labels().iter().any(|&y| y > 1) {
        return Err(Error::InvalidParameter("classical statistics need binary labels".into()));
    }
    let n = sample.n();
    let y: Vec<f64> = sample.labels().iter().map(|&v| v as f64).collect();
    match kind {
        ClassicalKind::Pearson | ClassicalKind::Kendall => {
            if sample.p() != 1 {
                return Err(Error::Arity(format!("classical {kind:?} needs p = 1")));
            }
            let x: Vec<f64> = sample.features().column(0).iter().map(|v| v.to_f64_lossy()).collect();
            Ok(match kind {
                ClassicalKind::Pearson => pearson_correlation(&x, &y),
                _ => 2.0 * kendall_s(&x, &y) as f64 / (n as f64 * n as f64),
            })
        }
        ClassicalKind::Dcov | ClassicalKind::Ipcov => {
            let metric = if kind == ClassicalKind::Dcov { Metric::Euclidean } else { Metric::Angular(1.0) };
            let x = Prepared::new(sample.features(), metric);
            Ok(classical_distance_covariance(&x, &y, metric))
        }
    }
}

fn classical_distance_covariance<F: Scalar>(x: &Prepared<'_, F>, y: &[f64], metric: Metric) -> f64 {
    let n = y.len();
    let rows: Vec<(f64, f64, f64)> = (0..n)
        .into_par_iter()
        .map(|i| {
            let (mut ax, mut axy) = (CompensatedSum::new(), CompensatedSum::new());
            for j in 0..n {
                let d = pair(metric, x, i, x, j).to_f64_lossy();
                ax.add(d);
                axy.add(d * (y[i] - y[j]).abs());
            }
            let by: f64 = y.iter().map(|yj| (y[i] - yj).abs()).sum();
            (ax.value(), axy.value(), by)
        })
        .collect();
    let nf = n as f64;
    let s1 = stable_sum(rows.iter().map(|r| r.1)) / (nf * nf);
    let sx = stable_sum(rows.iter().map(|r| r.0)) / (nf * nf);
    let sy = stable_sum(rows.iter().map(|r| r.2)) / (nf * nf);
    let s3 = stable_sum(rows.iter().map(|r| r.0 * r.2)) / (nf * nf * nf);
    s1 + sx * sy - 2.0 * s3
}

pub(crate) fn pearson_correlation(x: &[f64], y: &[f64]) -> f64 {
    let n = x.len() as f64;
    let mx = stable_sum(x.iter().copied()) / n;
    let my = stable_sum(y.iter().copied()) / n;
    let sxy = stable_sum(x.iter().zip(y).map(|(a, b)| (a - mx) * (b - my)));
    let sxx = stable_sum(x.iter().map(|a| (a - mx) * (a - mx)));
    let syy = stable_sum(y.iter().map(|b| (b - my) * (b - my)));
    sxy / (sxx * syy).sqrt()
}

/// `S = sum_{i<j} sgn(x_i - x_j) sgn(y_i - y_j)` in `O(n log n)` with ties in either
/// variable (Knight's algorithm).
pub fn kendall_s(x: &[f64], y: &[f64]) -> i64 {
    // `total_cmp` separates -0.0 from 0.0; adding zero maps both to 0.0.
    let x: Vec<f64> = x.iter().map(|v| v + 0.0).collect();
    let y: Vec<f64> = y.iter().map(|v| v + 0.0).collect();
    let n = x.len();
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_unstable_by(|&a, &b| x[a].total_cmp(&x[b]).then(y[a].total_cmp(&y[b])));
    let pairs = |run: i64| run * (run - 1) / 2;
    let (mut tied_x, mut tied_xy) = (0i64, 0i64);
    let (mut run_x, mut run_xy) = (1i64, 1i64);
    for w in order.windows(2) {
        let (a, b) = (w[0], w[1]);
        if x[a] == x[b] {
            run_x += 1;
            if y[a] == y[b] {
                run_xy += 1;
            } else {
                tied_xy += pairs(run_xy);
                run_xy = 1;
            }
        } else {
            tied_x += pairs(run_x);
            tied_xy += pairs(run_xy);
            run_x = 1;
            run_xy = 1;
        }
    }
    tied_x += pairs(run_x);
    tied_xy += pairs(run_xy);

    let mut seq: Vec<f64> = order.iter().map(|&i| y[i]).collect();
    let swaps = count_inversions(&mut seq);
    let mut ys = y;
    ys.sort_unstable_by(f64::total_cmp);
    let mut tied_y = 0i64;
    let mut run = 1i64;
    for w in ys.windows(2) {
        if w[0] == w[1] {
            run += 1;
        } else {
            tied_y += pairs(run);
            run = 1;
        }
    }
    tied_y += pairs(run);
    pairs(n as i64) - tied_x - tied_y + tied_xy - 2 * swaps
}

/// Number of pairs `i < j` with `v[i] > v[j]`; sorts `v` as a side effect.
fn count_inversions(v: &mut [f64]) -> i64 {
    let n = v.len();
    if n < 2 {
        return 0;
    }
    let mut buf = v.to_vec();
    let mut width = 1;
    let mut inv = 0i64;
    while width < n {
        let mut start = 0;
        while start < n {
            let mid = (start + width).min(n);
            let end = (start + 2 * width).min(n);
            let (mut i, mut j, mut k) = (start, mid, start);
            while i < mid && j < end {
                if v[j] < v[i] {
                    buf[k] = v[j];
                    inv += (mid - i) as i64;
                    j += 1;
                } else {
                    buf[k] = v[i];
                    i += 1;
                }
                k += 1;
            }
            buf[k..k + mid - i].copy_from_slice(&v[i..mid]);
            k += mid - i;
            buf[k..k + end - j].copy_from_slice(&v[j..end]);
            start = end;
        }
        v.copy_from_slice(&buf);
        width *= 2;
    }
    inv
}
