//! Empirical kernel projections `h_{a,b}`.
//!
//! A projection fixes some kernel arguments and averages the kernel over the
//! remaining ones. Averages are exact when the number of admissible tuples fits
//! in the budget; otherwise a random set of distinct tuples of that size is used.

use std::collections::HashSet;

use ndarray::ArrayView2;
use rand::seq::index::sample;
use serde::Serialize;

use crate::error::{Error, Result};
use crate::kernels::{angular_unchecked, euclidean, KernelKind, KernelSpec};
use crate::scalar::{CompensatedSum, Scalar};
use crate::seed::Rng;

/// Projection values at a set of evaluation points.
#[derive(Clone, Debug, Serialize)]
pub struct ProjectionEstimate {
    /// Number of fixed control arguments.
    pub a: usize,
    /// Number of fixed case arguments.
    pub b: usize,
    pub values: Vec<f64>,
    /// Kernel evaluations averaged per value.
    pub basis_size: usize,
}

impl ProjectionEstimate {
    pub fn mean(&self) -> f64 {
        self.values.iter().sum::<f64>() / self.values.len() as f64
    }

    /// Sample variance (`n - 1` denominator).
    pub fn variance(&self) -> Option<f64> {
        sample_variance(&self.values)
    }
}

pub(crate) fn sample_variance(xs: &[f64]) -> Option<f64> {
    if xs.len() < 2 {
        return None;
    }
    let n = xs.len() as f64;
    let mean = xs.iter().copied().collect::<CompensatedSum<f64>>().value() / n;
    let ss = xs.iter().map(|x| (x - mean) * (x - mean)).collect::<CompensatedSum<f64>>().value();
    Some(ss / (n - 1.0))
}

/// `C(n, k)` as a float (exact for the magnitudes used here).
pub fn binomial(n: usize, k: usize) -> f64 {
    if k > n {
        return 0.0;
    }
    let k = k.min(n - k);
    (0..k).fold(1.0, |acc, i| acc * (n - i) as f64 / (i + 1) as f64)
}

/// Advances `c` to the next `k`-subset of `0..n` in lexicographic order.
pub(crate) fn next_combination(c: &mut [usize], n: usize) -> bool {
    let k = c.len();
    for i in (0..k).rev() {
        if c[i] < n - k + i {
            c[i] += 1;
            for j in i + 1..k {
                c[j] = c[j - 1] + 1;
            }
            return true;
        }
    }
    false
}

/// Describes how the free kernel slots are filled: block `k` takes `slots[k]`
/// rows from `pools[block_pool[k]]`; blocks sharing a pool never reuse a row.
pub(crate) struct SlotFill<'a, F> {
    pub pools: Vec<Vec<&'a [F]>>,
    pub block_pool: Vec<usize>,
    pub slots: Vec<usize>,
}

impl<'a, F: Scalar> SlotFill<'a, F> {
    fn tuple_count(&self) -> f64 {
        let mut need = vec![0usize; self.pools.len()];
        for (b, &s) in self.slots.iter().enumerate() {
            need[self.block_pool[b]] += s;
        }
        let mut total = 1.0;
        for (pool, &k) in self.pools.iter().zip(&need) {
            if pool.len() < k {
                return 0.0;
            }
        }
        for (b, &s) in self.slots.iter().enumerate() {
            total *= binomial(self.pools[self.block_pool[b]].len(), s);
        }
        total
    }

    fn check(&self) -> Result<()> {
        let mut need = vec![0usize; self.pools.len()];
        for (b, &s) in self.slots.iter().enumerate() {
            need[self.block_pool[b]] += s;
        }
        for (pool, (&k, b)) in self.pools.iter().zip(need.iter().zip(0..)) {
            if pool.len() < k {
                return Err(Error::InsufficientSamples { class: b, needed: k, available: pool.len() });
            }
        }
        Ok(())
    }
}

/// Average of the kernel with `point` fixed in one slot of `fixed_block`.
/// Returns the average and the number of tuples used.
pub(crate) fn project_point<F: Scalar>(
    kernel: &KernelSpec<F>,
    fixed_block: usize,
    point: &[F],
    fill: &SlotFill<'_, F>,
    budget: usize,
    rng: &mut Rng,
) -> Result<(F, usize)> {
    fill.check()?;
    let nb = fill.slots.len();
    let eval = |idx: &[Vec<usize>]| {
        let blocks: Vec<Vec<&[F]>> = (0..nb)
            .map(|b| {
                let pool = &fill.pools[fill.block_pool[b]];
                let mut v: Vec<&[F]> = idx[b].iter().map(|&i| pool[i]).collect();
                if b == fixed_block {
                    v.insert(0, point);
                }
                v
            })
            .collect();
        kernel.eval(&blocks)
    };
    let disjoint = |idx: &[Vec<usize>]| {
        for a in 0..nb {
            for b in a + 1..nb {
                if fill.block_pool[a] == fill.block_pool[b] && idx[a].iter().any(|i| idx[b].contains(i)) {
                    return false;
                }
            }
        }
        true
    };

    let total = fill.tuple_count();
    let mut acc = CompensatedSum::new();
    let mut used = 0usize;
    if total <= budget as f64 {
        let mut idx: Vec<Vec<usize>> = fill.slots.iter().map(|&s| (0..s).collect()).collect();
        'outer: loop {
            if disjoint(&idx) {
                acc.add(eval(&idx));
                used += 1;
            }
            for b in (0..nb).rev() {
                let n = fill.pools[fill.block_pool[b]].len();
                if next_combination(&mut idx[b], n) {
                    continue 'outer;
                }
                idx[b] = (0..fill.slots[b]).collect();
            }
            break;
        }
    } else {
        let mut seen: HashSet<Vec<usize>> = HashSet::with_capacity(budget);
        let mut attempts = 0usize;
        while used < budget && attempts < budget.saturating_mul(50) {
            attempts += 1;
            let mut idx: Vec<Vec<usize>> = vec![Vec::new(); nb];
            for (pid, pool) in fill.pools.iter().enumerate() {
                let blocks: Vec<usize> = (0..nb).filter(|&b| fill.block_pool[b] == pid).collect();
                let need: usize = blocks.iter().map(|&b| fill.slots[b]).sum();
                if need == 0 {
                    continue;
                }
                let mut drawn = sample(rng, pool.len(), need).into_vec().into_iter();
                for &b in &blocks {
                    let mut v: Vec<usize> = drawn.by_ref().take(fill.slots[b]).collect();
                    v.sort_unstable();
                    idx[b] = v;
                }
            }
            let key: Vec<usize> = idx.iter().flat_map(|v| v.iter().copied().chain([usize::MAX])).collect();
            if seen.insert(key) {
                acc.add(eval(&idx));
                used += 1;
            }
        }
    }
    if used == 0 {
        return Err(Error::Degenerate("no admissible tuple for the projection".into()));
    }
    Ok((acc.value() / F::of(used as f64), used))
}

fn view_rows<'a, F: Scalar>(m: &'a ArrayView2<'_, F>) -> Vec<&'a [F]> {
    let p = m.ncols();
    let flat = m.as_slice().expect("standard layout");
    flat.chunks_exact(p).collect()
}

/// `h_{0,1}(case_point)`: the kernel averaged over control tuples with one case slot
/// fixed. Additional case slots (when `m1 > 1`) are filled from `reference` rows
/// disjoint from the control slots.
pub fn project_h01<F: Scalar>(
    kernel: &KernelSpec<F>,
    case_point: &[F],
    reference: ArrayView2<'_, F>,
    budget: usize,
    rng: &mut Rng,
) -> Result<F> {
    if kernel.n_blocks() != 2 {
        return Err(Error::Arity("project_h01 needs a two-block kernel".into()));
    }
    kernel.check_dimension(case_point.len())?;
    if reference.ncols() != case_point.len() {
        return Err(Error::DimensionMismatch { expected: case_point.len(), found: reference.ncols() });
    }
    let rows = view_rows(&reference);
    if rows.len() < kernel.m0() {
        return Err(Error::InsufficientSamples { class: 0, needed: kernel.m0(), available: rows.len() });
    }
    let fill = SlotFill { pools: vec![rows], block_pool: vec![0, 0], slots: vec![kernel.m0(), kernel.m1() - 1] };
    project_point(kernel, 1, case_point, &fill, budget.max(1), rng).map(|(v, _)| v)
}

/// `h_{1,0}(control_point)`: one control slot fixed, the case slots filled from
/// `cases` and the remaining control slots from `controls`.
pub fn project_h10<F: Scalar>(
    kernel: &KernelSpec<F>,
    control_point: &[F],
    controls: &[&[F]],
    cases: &[&[F]],
    budget: usize,
    rng: &mut Rng,
) -> Result<F> {
    let fill = SlotFill {
        pools: vec![controls.to_vec(), cases.to_vec()],
        block_pool: vec![0, 1],
        slots: vec![kernel.m0() - 1, kernel.m1()],
    };
    project_point(kernel, 0, control_point, &fill, budget.max(1), rng).map(|(v, _)| v)
}

/// Plug-in `D(x) + D(y) - ||x - y|| - gamma` with `D(v)` the mean distance from `v`
/// to the reference rows and `gamma` the mean of `D` over the reference.
///
/// The two-case projection of the six-term dcov kernel is exactly twice this value.
pub fn project_h02_dcov<F: Scalar>(x: &[F], y: &[F], reference: ArrayView2<'_, F>) -> Result<F> {
    let centered = CenteredPairFn::new(reference, Metric::Euclidean)?;
    centered.value(x, y)
}

/// Metric underlying a second-order kernel.
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum Metric {
    Euclidean,
    /// Angular affinity with constant `c_sigma2`.
    Angular(f64),
}

impl Metric {
    pub fn of_kernel<F: Scalar>(kernel: &KernelSpec<F>) -> Result<Self> {
        match kernel.kind() {
            KernelKind::RescaledDcov => Ok(Metric::Euclidean),
            KernelKind::RescaledIpcov => Ok(Metric::Angular(kernel.c_sigma2())),
            other => Err(Error::Arity(format!("{other} is not a second-order distance kernel"))),
        }
    }

    #[inline]
    pub fn eval<F: Scalar>(self, a: &[F], b: &[F]) -> F {
        match self {
            Metric::Euclidean => euclidean(a, b),
            Metric::Angular(c) => angular_unchecked(a, b, F::of(c)),
        }
    }
}

/// Doubly centered metric against a fixed reference sample.
pub struct CenteredPairFn<'a, F> {
    reference: Vec<&'a [F]>,
    metric: Metric,
    gamma: F,
}

impl<'a, F: Scalar> CenteredPairFn<'a, F> {
    pub fn new(reference: ArrayView2<'a, F>, metric: Metric) -> Result<Self> {
        if reference.nrows() == 0 {
            return Err(Error::InvalidParameter("empty reference sample".into()));
        }
        let p = reference.ncols();
        let flat = reference.to_slice().ok_or_else(|| Error::InvalidSample("reference must be contiguous".into()))?;
        let rows: Vec<&'a [F]> = flat.chunks_exact(p).collect();
        let n = rows.len();
        let mut acc = CompensatedSum::new();
        for i in 0..n {
            for j in i + 1..n {
                acc.add(metric.eval(rows[i], rows[j]));
            }
        }
        let gamma = F::of(2.0) * acc.value() / F::of((n * n) as f64);
        Ok(Self { reference: rows, metric, gamma })
    }

    pub fn gamma(&self) -> F {
        self.gamma
    }

    /// Mean metric value from `v` to the reference rows.
    pub fn mean_to_reference(&self, v: &[F]) -> Result<F> {
        let p = self.reference[0].len();
        if v.len() != p {
            return Err(Error::DimensionMismatch { expected: p, found: v.len() });
        }
        let s: CompensatedSum<F> = self.reference.iter().map(|r| self.metric.eval(v, r)).collect();
        Ok(s.value() / F::of(self.reference.len() as f64))
    }

    pub fn value(&self, x: &[F], y: &[F]) -> Result<F> {
        Ok(self.mean_to_reference(x)? + self.mean_to_reference(y)? - self.metric.eval(x, y) - self.gamma)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::seed::rng;
    use ndarray::array;

    #[test]
    fn binomials() {
        assert_eq!(binomial(5, 2), 10.0);
        assert_eq!(binomial(3, 5), 0.0);
        assert_eq!(binomial(40, 0), 1.0);
    }

    #[test]
    fn combinations_enumerate_all() {
        let mut c = vec![0, 1];
        let mut count = 1;
        while next_combination(&mut c, 5) {
            count += 1;
        }
        assert_eq!(count, 10);
    }

    #[test]
    fn kendall_h01_enumerates_controls() {
        let k = KernelSpec::kendall();
        let v = project_h01(&k, &[2.0], array![[1.0], [3.0]].view(), 100, &mut rng(1)).unwrap();
        assert_eq!(v, 0.0);
    }

    #[test]
    fn pearson_h01_is_linear() {
        let k = KernelSpec::pearson();
        let c = array![[1.0f64], [2.0], [6.0]];
        let v = project_h01(&k, &[5.0], c.view(), 100, &mut rng(1)).unwrap();
        assert!((v - 2.0).abs() < 1e-15);
    }

    #[test]
    fn insufficient_controls_error() {
        let k = KernelSpec::dcov();
        let r = project_h01(&k, &[0.0], array![[1.0]].view(), 10, &mut rng(1));
        assert!(matches!(r, Err(Error::InsufficientSamples { .. })));
    }

    #[test]
    fn h02_dcov_values() {
        let r = array![[0.0], [2.0]];
        assert_eq!(project_h02_dcov(&[0.0], &[2.0], r.view()).unwrap(), -1.0);
        assert_eq!(project_h02_dcov(&[2.0], &[0.0], r.view()).unwrap(), -1.0);
        let single = array![[1.5]];
        assert_eq!(project_h02_dcov(&[1.5], &[1.5], single.view()).unwrap(), 0.0);
        let empty = ndarray::Array2::<f64>::zeros((0, 1));
        assert!(project_h02_dcov(&[0.0], &[0.0], empty.view()).is_err());
    }

    #[test]
    fn budgeted_projection_uses_distinct_tuples() {
        let k = KernelSpec::dcov();
        let reference = ndarray::Array2::from_shape_fn((40, 1), |(i, _)| i as f64);
        let fill = SlotFill {
            pools: vec![reference.as_slice().unwrap().chunks(1).collect()],
            block_pool: vec![0, 0],
            slots: vec![2, 1],
        };
        let (_, used) = project_point(&k, 1, &[3.0], &fill, 500, &mut rng(9)).unwrap();
        assert_eq!(used, 500);
        let (_, used) = project_point(&k, 1, &[3.0], &fill, 1_000_000, &mut rng(9)).unwrap();
        assert_eq!(used as f64, binomial(40, 2) * 38.0);
    }
}
