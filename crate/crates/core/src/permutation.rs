//! Permutation p-values.
//!
//! Each replicate relabels the pooled rows uniformly at random, keeping the class
//! sizes, and recomputes the statistic. Replicate `b` draws from a generator seeded
//! by `derive(seed, b)`, so the p-value does not depend on the worker count.
//!
//! Fast paths avoid rebuilding the sample per replicate:
//! * Pearson: case sums against a precomputed total;
//! * Kendall: doubled midranks of the pooled sample (`sum sgn = sum_cases 2R - n1(n1+1) - n0 n1`);
//! * dcov/ipcov: a condensed pooled distance matrix when `n <= MATRIX_LIMIT`.

use ndarray::Array2;
use rand::seq::{index::sample, SliceRandom};
use rayon::prelude::*;
use serde::Serialize;

use crate::bit::draw_inclusion;
use crate::data::{GroupedSample, LabeledSample};
use crate::error::{Error, Result};
use crate::inference::{InferenceMethod, TestOutcome};
use crate::kernels::{KernelKind, KernelSpec, Order};
use crate::projection::{binomial, sample_variance, Metric};
use crate::rit::{compute_classical, compute_rit, sort_floats, sorted_sign_sum, ClassicalKind};
use crate::scalar::{stable_sum, CompensatedSum, Scalar};
use crate::seed;

pub const MIN_PERMUTATIONS: usize = 19;
pub const DEFAULT_PERMUTATIONS: usize = 999;
pub const FAST_PERMUTATIONS: usize = 199;
/// Largest pooled sample for which the distance matrix is cached.
pub const MATRIX_LIMIT: usize = 4096;
/// Relative slack when comparing permuted and observed magnitudes.
const TIE_TOLERANCE: f64 = 1e-12;

/// Subsampling applied to the observed data and, with fresh plans, to every replicate.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
pub struct SubsampleConfig {
    pub s: usize,
    pub seed: u64,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
pub struct PermutationConfig {
    pub permutations: usize,
    pub seed: u64,
    pub subsample: Option<SubsampleConfig>,
}

impl PermutationConfig {
    pub fn new(permutations: usize, seed: u64) -> Self {
        Self { permutations, seed, subsample: None }
    }

    pub fn boosted(mut self, s: usize, seed: u64) -> Self {
        self.subsample = Some(SubsampleConfig { s, seed });
        self
    }
}

/// Upper triangle of the pooled distance matrix, one row per point.
struct Condensed {
    rows: Vec<Vec<f64>>,
    row_sums: Vec<f64>,
    total: f64,
}

impl Condensed {
    fn new<F: Scalar>(rows: &[&[F]], metric: Metric) -> Self {
        let n = rows.len();
        let upper: Vec<Vec<f64>> = (0..n)
            .into_par_iter()
            .map(|i| (i + 1..n).map(|j| metric.eval(rows[i], rows[j]).to_f64_lossy()).collect())
            .collect();
        let mut row_sums = vec![CompensatedSum::new(); n];
        for (i, r) in upper.iter().enumerate() {
            for (k, &d) in r.iter().enumerate() {
                row_sums[i].add(d);
                row_sums[i + 1 + k].add(d);
            }
        }
        let total = stable_sum(upper.iter().map(|r| stable_sum(r.iter().copied())));
        Self { rows: upper, row_sums: row_sums.iter().map(|s| s.value()).collect(), total }
    }

    #[inline]
    fn get(&self, i: usize, j: usize) -> f64 {
        let (a, b) = if i < j { (i, j) } else { (j, i) };
        self.rows[a][b - a - 1]
    }

    fn within(&self, idx: &[usize]) -> f64 {
        let mut acc = CompensatedSum::new();
        for (k, &i) in idx.iter().enumerate() {
            for &j in &idx[k + 1..] {
                acc.add(self.get(i, j));
            }
        }
        acc.value()
    }

    fn cross(&self, a: &[usize], b: &[usize]) -> f64 {
        let mut acc = CompensatedSum::new();
        for &i in a {
            for &j in b {
                acc.add(self.get(i, j));
            }
        }
        acc.value()
    }
}

enum Engine<'a, F> {
    Pearson { values: Vec<f64>, total: f64 },
    Kendall { values: Vec<f64>, doubled_ranks: Vec<i64> },
    Distance { matrix: Condensed },
    Generic { rows: Vec<&'a [F]>, p: usize },
}

fn distance_statistic(n0: usize, n1: usize, cross: f64, within0: f64, within1: f64) -> f64 {
    let (n0, n1) = (n0 as f64, n1 as f64);
    4.0 * cross / (n0 * n1) - 4.0 * within0 / (n0 * (n0 - 1.0)) - 4.0 * within1 / (n1 * (n1 - 1.0))
}

impl<'a, F: Scalar> Engine<'a, F> {
    fn new(rows: Vec<&'a [F]>, kernel: &KernelSpec<F>, n_classes: usize) -> Result<Self> {
        let n = rows.len();
        let p = rows[0].len();
        if n_classes != 2 {
            return Ok(Engine::Generic { rows, p });
        }
        Ok(match kernel.kind() {
            KernelKind::RescaledPearson => {
                let values: Vec<f64> = rows.iter().map(|r| r[0].to_f64_lossy()).collect();
                let total = stable_sum(values.iter().copied());
                Engine::Pearson { values, total }
            }
            KernelKind::RescaledKendall => {
                let values: Vec<f64> = rows.iter().map(|r| r[0].to_f64_lossy()).collect();
                Engine::Kendall { doubled_ranks: doubled_midranks(&values), values }
            }
            KernelKind::RescaledDcov | KernelKind::RescaledIpcov if n <= MATRIX_LIMIT => {
                Engine::Distance { matrix: Condensed::new(&rows, Metric::of_kernel(kernel)?) }
            }
            _ => Engine::Generic { rows, p },
        })
    }

    /// Statistic for the partition `groups` (class 0 possibly thinned). `full` means
    /// the groups cover every pooled row.
    fn statistic(&self, kernel: &KernelSpec<F>, groups: &[Vec<usize>], full: bool) -> Result<f64> {
        let (c, d) = (&groups[0], groups.get(1).map(Vec::as_slice).unwrap_or(&[]));
        match self {
            Engine::Pearson { values, total } => {
                let s1 = stable_sum(d.iter().map(|&i| values[i]));
                let s0 = if full { total - s1 } else { stable_sum(c.iter().map(|&i| values[i])) };
                Ok(s1 / d.len() as f64 - s0 / c.len() as f64)
            }
            Engine::Kendall { values, doubled_ranks } => {
                let (n0, n1) = (c.len() as i64, d.len() as i64);
                let s = if full {
                    d.iter().map(|&i| doubled_ranks[i]).sum::<i64>() - n1 * (n1 + 1) - n0 * n1
                } else {
                    let mut xs: Vec<f64> = c.iter().map(|&i| values[i]).collect();
                    let mut ys: Vec<f64> = d.iter().map(|&i| values[i]).collect();
                    sort_floats(&mut xs);
                    sort_floats(&mut ys);
                    sorted_sign_sum(&xs, &ys)
                };
                Ok(s as f64 / (n0 * n1) as f64)
            }
            Engine::Distance { matrix } => {
                if c.len() < 2 || d.len() < 2 {
                    return Err(Error::InsufficientSamples { class: usize::from(c.len() >= 2), needed: 2, available: 1 });
                }
                let within1 = matrix.within(d);
                let (cross, within0) = if full {
                    let cross = stable_sum(d.iter().map(|&i| matrix.row_sums[i])) - 2.0 * within1;
                    (cross, matrix.total - within1 - cross)
                } else {
                    (matrix.cross(d, c), matrix.within(c))
                };
                Ok(distance_statistic(c.len(), d.len(), cross, within0, within1))
            }
            Engine::Generic { rows, p } => {
                let arrays = groups
                    .iter()
                    .map(|g| {
                        let flat: Vec<F> = g.iter().flat_map(|&i| rows[i].iter().copied()).collect();
                        Array2::from_shape_vec((g.len(), *p), flat).map_err(|e| Error::InvalidSample(e.to_string()))
                    })
                    .collect::<Result<Vec<_>>>()?;
                let sample = GroupedSample::from_groups(arrays)?;
                Ok(compute_rit(&sample, kernel)?.value.to_f64_lossy())
            }
        }
    }
}

/// Twice the midranks (integers) of `values` within the pooled sample.
fn doubled_midranks(values: &[f64]) -> Vec<i64> {
    let mut order: Vec<usize> = (0..values.len()).collect();
    order.sort_unstable_by(|&a, &b| values[a].total_cmp(&values[b]));
    let mut ranks = vec![0i64; values.len()];
    let mut start = 0;
    while start < order.len() {
        let mut end = start + 1;
        while end < order.len() && values[order[end]] == values[order[start]] {
            end += 1;
        }
        // Positions start+1..=end share the midrank (start + 1 + end) / 2.
        for &i in &order[start..end] {
            ranks[i] = (start + 1 + end) as i64;
        }
        start = end;
    }
    ranks
}

/// Partition of `0..n` into consecutive blocks of the given sizes after shuffling.
fn permuted_groups(n: usize, counts: &[usize], rng: &mut seed::Rng) -> Vec<Vec<usize>> {
    if counts.len() == 2 {
        // Only the cases need drawing; the controls are the complement.
        let mut cases = sample(rng, n, counts[1]).into_vec();
        cases.sort_unstable();
        let mut is_case = vec![false; n];
        for &i in &cases {
            is_case[i] = true;
        }
        let controls = (0..n).filter(|&i| !is_case[i]).collect();
        return vec![controls, cases];
    }
    let mut idx: Vec<usize> = (0..n).collect();
    idx.shuffle(rng);
    let mut out = Vec::with_capacity(counts.len());
    let mut start = 0;
    for &c in counts {
        let mut g = idx[start..start + c].to_vec();
        g.sort_unstable();
        out.push(g);
        start += c;
    }
    out
}

/// Thin class 0 by a Bernoulli plan; returns the multiplier `C(kept, m0) / C(s n1, m0)`.
fn thin(groups: &mut [Vec<usize>], s: usize, m0: usize, seed: u64) -> Result<f64> {
    let (n0, n1) = (groups[0].len(), groups[1].len());
    if s * n1 > n0 {
        return Err(Error::RatioExceedsOne { requested: s * n1, available: n0 });
    }
    let (keep, kept, _) = draw_inclusion(n0, s * n1, m0, seed)?;
    let controls = std::mem::take(&mut groups[0]);
    groups[0] = controls.into_iter().zip(keep).filter(|(_, k)| *k).map(|(i, _)| i).collect();
    Ok(binomial(kept, m0) / binomial(s * n1, m0))
}

/// `(1 + #{b : |T_b| >= |T_obs|}) / (B + 1)` with label permutations that keep the
/// class sizes. With a subsample config the observed statistic is the boosted one
/// and every replicate draws a fresh plan.
pub fn pvalue_permutation<F: Scalar>(
    data: &GroupedSample<F>,
    kernel: &KernelSpec<F>,
    config: &PermutationConfig,
) -> Result<TestOutcome> {
    let b = config.permutations;
    if b < MIN_PERMUTATIONS {
        return Err(Error::InvalidParameter(format!("need at least {MIN_PERMUTATIONS} permutations, got {b}")));
    }
    kernel.check_dimension(data.p())?;
    data.check_counts(kernel.block_orders())?;
    if let Some(sub) = &config.subsample {
        if sub.s < 2 {
            return Err(Error::InvalidParameter(format!("s must be at least 2, got {}", sub.s)));
        }
        if data.n_classes() != 2 {
            return Err(Error::Arity("boosted permutation tests need two classes".into()));
        }
    }
    let counts = data.counts();
    let n: usize = counts.iter().sum();
    let rows: Vec<&[F]> = (0..data.n_classes()).flat_map(|k| data.rows(k)).collect();
    let engine = Engine::new(rows, kernel, data.n_classes())?;
    let m0 = kernel.m0();

    let evaluate = |mut groups: Vec<Vec<usize>>, plan_seed: Option<u64>| -> Result<f64> {
        let mut scale = 1.0;
        let full = plan_seed.is_none();
        if let (Some(sub), Some(ps)) = (&config.subsample, plan_seed) {
            scale = thin(&mut groups, sub.s, m0, ps)?;
        }
        Ok(engine.statistic(kernel, &groups, full)? * scale)
    };

    let mut observed_groups = Vec::with_capacity(counts.len());
    let mut start = 0;
    for &c in &counts {
        observed_groups.push((start..start + c).collect::<Vec<_>>());
        start += c;
    }
    let observed = evaluate(observed_groups, config.subsample.map(|s| s.seed))?;

    let permuted: Vec<f64> = (0..b)
        .into_par_iter()
        .map(|r| {
            let rep_seed = seed::derive(config.seed, r as u64);
            let mut rng = seed::child_rng(rep_seed, 0);
            let groups = permuted_groups(n, &counts, &mut rng);
            evaluate(groups, config.subsample.map(|_| seed::derive(rep_seed, 1)))
        })
        .collect::<Result<_>>()?;

    let threshold = observed.abs() * (1.0 - TIE_TOLERANCE);
    let exceed = permuted.iter().filter(|t| t.abs() >= threshold).count();
    let n1 = counts[1] as f64;
    let scale = match kernel.order() {
        Order::First => n1.sqrt(),
        Order::Second => n1,
    };
    let scaled: Vec<f64> = permuted.iter().map(|t| t * scale).collect();
    Ok(TestOutcome {
        statistic: observed,
        scaled_statistic: observed * scale,
        variance_estimate: sample_variance(&scaled).unwrap_or(f64::NAN),
        p_value: (1 + exceed) as f64 / (b + 1) as f64,
        method: InferenceMethod::Permutation,
        kernel: kernel.kind(),
        n0: counts[0],
        n1: counts[1],
        s: config.subsample.map(|s| s.s),
        permutations: Some(b),
        seed: Some(config.seed),
        diagnostics: Default::default(),
        warnings: Vec::new(),
    })
}

/// Permutation p-value of the pooled distance-covariance V-statistic (`Dcov` or
/// `Ipcov`) with binary labels; the statistic is non-negative, so the test is one-sided.
///
/// With label distances `|y_i - y_j|` the statistic reduces to
/// `4 (n0 n1 cross - n1^2 within0 - n0^2 within1) / n^4`, which each replicate
/// evaluates from the cached distance matrix.
pub fn pvalue_classical_permutation<F: Scalar>(
    sample: &LabeledSample<F>,
    kind: ClassicalKind,
    permutations: usize,
    seed: u64,
) -> Result<f64> {
    let metric = match kind {
        ClassicalKind::Dcov => Metric::Euclidean,
        ClassicalKind::Ipcov => Metric::Angular(1.0),
        _ => return Err(Error::InvalidParameter(format!("{} has a closed-form test", kind.name()))),
    };
    if permutations < MIN_PERMUTATIONS {
        return Err(Error::InvalidParameter(format!(
            "need at least {MIN_PERMUTATIONS} permutations, got {permutations}"
        )));
    }
    let data = sample.group_by_label()?;
    if data.n_classes() != 2 {
        return Err(Error::Arity("classical statistics need binary labels".into()));
    }
    let (n0, n1) = (data.n0(), data.n1());
    let n = n0 + n1;
    let observed_groups = vec![(0..n0).collect::<Vec<_>>(), (n0..n).collect()];
    let groups_of = |r: usize| {
        let mut rng = seed::child_rng(seed::derive(seed, r as u64), 0);
        permuted_groups(n, &[n0, n1], &mut rng)
    };
    let permuted: Vec<f64>;
    let observed: f64;
    if n <= MATRIX_LIMIT {
        let rows: Vec<&[F]> = (0..2).flat_map(|k| data.rows(k)).collect();
        let matrix = Condensed::new(&rows, metric);
        let (a, b, nf) = (n0 as f64, n1 as f64, n as f64);
        let stat = |g: &[Vec<usize>]| {
            let within1 = matrix.within(&g[1]);
            let cross = stable_sum(g[1].iter().map(|&i| matrix.row_sums[i])) - 2.0 * within1;
            let within0 = matrix.total - within1 - cross;
            4.0 * (a * b * cross - b * b * within0 - a * a * within1) / nf.powi(4)
        };
        observed = stat(&observed_groups);
        permuted = (0..permutations).into_par_iter().map(|r| stat(&groups_of(r))).collect();
    } else {
        observed = compute_classical(sample, kind)?;
        let pooled = data.reassemble()?;
        permuted = (0..permutations)
            .into_par_iter()
            .map(|r| {
                let mut labels = vec![0; n];
                for &i in &groups_of(r)[1] {
                    labels[i] = 1;
                }
                compute_classical(&pooled.relabel(labels)?, kind)
            })
            .collect::<Result<_>>()?;
    }
    let threshold = observed - observed.abs() * TIE_TOLERANCE;
    let exceed = permuted.iter().filter(|&&t| t >= threshold).count();
    Ok((1 + exceed) as f64 / (permutations + 1) as f64)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::bit::{compute_bit, draw_subsample};
    use rand_distr::{Distribution, StandardNormal};

    fn groups(n0: usize, n1: usize, p: usize, shift: f64, seed: u64) -> GroupedSample<f64> {
        let mut rng = seed::rng(seed);
        let c = Array2::from_shape_fn((n0, p), |_| StandardNormal.sample(&mut rng));
        let d = Array2::from_shape_fn((n1, p), |_| shift + { let z: f64 = StandardNormal.sample(&mut rng); z });
        GroupedSample::from_groups(vec![c, d]).unwrap()
    }

    #[test]
    fn observed_matches_engine_values() {
        let g = groups(40, 10, 1, 0.0, 1);
        for k in [KernelSpec::pearson(), KernelSpec::kendall(), KernelSpec::dcov(), KernelSpec::imbalanced_kendall(2).unwrap()] {
            let out = pvalue_permutation(&g, &k, &PermutationConfig::new(19, 3)).unwrap();
            let direct = compute_rit(&g, &k).unwrap().value;
            assert!((out.statistic - direct).abs() < 1e-12, "{:?}", k.kind());
        }
        let cfg = PermutationConfig::new(19, 3).boosted(2, 7);
        let out = pvalue_permutation(&g, &KernelSpec::dcov(), &cfg).unwrap();
        let plan = draw_subsample(&g, 2, 2, 7).unwrap();
        let direct = compute_bit(&g, &KernelSpec::dcov(), &plan).unwrap().value;
        assert!((out.statistic - direct).abs() < 1e-12);
    }

    #[test]
    fn extreme_separation_hits_floor() {
        let g = GroupedSample::from_scalars(&(0..30).map(f64::from).collect::<Vec<_>>(), &[100.0, 101.0, 102.0][..])
            .unwrap();
        let out = pvalue_permutation(&g, &KernelSpec::kendall(), &PermutationConfig::new(99, 1)).unwrap();
        assert_eq!(out.statistic, 1.0);
        assert_eq!(out.p_value, 0.01);
    }

    #[test]
    fn ties_count_towards_numerator() {
        // Every relabelling of a constant feature gives T = 0.
        let g = GroupedSample::from_scalars(&[1.0; 10][..], &[1.0; 3][..]).unwrap();
        let out = pvalue_permutation(&g, &KernelSpec::kendall(), &PermutationConfig::new(19, 1)).unwrap();
        assert_eq!(out.p_value, 1.0);
    }

    #[test]
    fn too_few_permutations() {
        let g = groups(20, 5, 1, 0.0, 2);
        assert!(pvalue_permutation(&g, &KernelSpec::kendall(), &PermutationConfig::new(18, 1)).is_err());
    }

    #[test]
    fn reproducible_and_thread_independent() {
        let g = groups(200, 20, 2, 0.2, 3);
        let cfg = PermutationConfig::new(199, 11);
        let a = pvalue_permutation(&g, &KernelSpec::dcov(), &cfg).unwrap();
        let pool = rayon::ThreadPoolBuilder::new().num_threads(1).build().unwrap();
        let b = pool.install(|| pvalue_permutation(&g, &KernelSpec::dcov(), &cfg).unwrap());
        assert_eq!(a, b);
    }

    #[test]
    fn kendall_invariant_to_monotone_transform() {
        let g = groups(60, 12, 1, 0.5, 4);
        let t = GroupedSample::from_groups(vec![g.group(0).mapv(f64::exp), g.group(1).mapv(f64::exp)]).unwrap();
        let cfg = PermutationConfig::new(99, 5);
        let a = pvalue_permutation(&g, &KernelSpec::kendall(), &cfg).unwrap();
        let b = pvalue_permutation(&t, &KernelSpec::kendall(), &cfg).unwrap();
        assert_eq!(a.p_value, b.p_value);
    }

    #[test]
    fn fast_paths_agree_with_generic() {
        // Rank identity for the Kendall path, complement identities for the others.
        let g = groups(30, 8, 1, 0.3, 6);
        let rows: Vec<&[f64]> = (0..2).flat_map(|k| g.rows(k)).collect();
        let mut rng = seed::rng(9);
        for k in [KernelSpec::pearson(), KernelSpec::kendall(), KernelSpec::dcov(), KernelSpec::ipcov(1.0).unwrap()] {
            let fast = Engine::new(rows.clone(), &k, 2).unwrap();
            let slow = Engine::Generic { rows: rows.clone(), p: 1 };
            for _ in 0..20 {
                let gr = permuted_groups(38, &[30, 8], &mut rng);
                let a = fast.statistic(&k, &gr, true).unwrap();
                let b = slow.statistic(&k, &gr, true).unwrap();
                assert!((a - b).abs() < 1e-12, "{:?} {a} {b}", k.kind());
                let thinned = vec![gr[0][..20].to_vec(), gr[1].clone()];
                let a = fast.statistic(&k, &thinned, false).unwrap();
                let b = slow.statistic(&k, &thinned, false).unwrap();
                assert!((a - b).abs() < 1e-12, "{:?} {a} {b}", k.kind());
            }
        }
    }

    #[test]
    fn classical_engine_matches_definition() {
        let g = groups(40, 12, 3, 0.8, 21);
        let sample = g.reassemble().unwrap();
        for kind in [ClassicalKind::Dcov, ClassicalKind::Ipcov] {
            let p = pvalue_classical_permutation(&sample, kind, 99, 4).unwrap();
            assert!(p > 0.0 && p <= 0.05, "{kind:?} {p}");
        }
        let null = groups(40, 12, 3, 0.0, 22).reassemble().unwrap();
        let p = pvalue_classical_permutation(&null, ClassicalKind::Dcov, 99, 4).unwrap();
        assert!(p > 0.05, "{p}");
        assert!(pvalue_classical_permutation(&null, ClassicalKind::Kendall, 99, 4).is_err());
    }

    #[test]
    fn midranks_with_ties() {
        assert_eq!(doubled_midranks(&[3.0, 1.0, 3.0, 2.0]), vec![7, 2, 7, 4]);
    }
}
