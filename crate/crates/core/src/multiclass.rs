//! Several rare classes sharing one abundant control class.
//!
//! Class 0 holds the controls and classes `1..=K` the rare classes; class 1 is the
//! reference whose size sets the convergence rate.

use rayon::prelude::*;
use serde::Serialize;

use crate::bit::{compute_bit, SubsamplePlan};
use crate::data::GroupedSample;
use crate::error::{Error, Result};
use crate::inference::{estimate_xi01, estimate_xi10, MIN_BUDGET};
use crate::kernels::{KernelKind, KernelSpec, Order};
use crate::projection::{project_point, sample_variance, SlotFill};
use crate::rit::{compute_rit, rank_sign, sort_floats, RitStatistic};
use crate::scalar::Scalar;
use crate::seed;

/// A rare class is "single rarest" when it has at most this fraction of the next one.
pub const SINGLE_RAREST_RATIO: f64 = 0.2;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum Regime {
    /// All rare classes grow at the same rate.
    ComparableRare,
    /// Class 1 is an order of magnitude rarer than every other class.
    SingleRarest,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct MultiClassSpec {
    pub k: usize,
    pub block_orders: Vec<usize>,
    pub counts: Vec<usize>,
    /// `r_k = n_k / n1` for `k = 1..=K`.
    pub ratios: Vec<f64>,
    pub regime: Regime,
}

impl MultiClassSpec {
    /// Classifies the regime from the rare-class sizes with [`SINGLE_RAREST_RATIO`].
    pub fn new(counts: &[usize], block_orders: Vec<usize>) -> Result<Self> {
        if counts.len() < 2 {
            return Err(Error::Arity("need a control class and at least one rare class".into()));
        }
        if block_orders.len() != counts.len() {
            return Err(Error::Arity(format!(
                "{} block orders for {} classes",
                block_orders.len(),
                counts.len()
            )));
        }
        for (class, (&n, &m)) in counts.iter().zip(&block_orders).enumerate() {
            if n < m {
                return Err(Error::InsufficientSamples { class, needed: m, available: n });
            }
        }
        let n1 = counts[1] as f64;
        let ratios = counts[1..].iter().map(|&n| n as f64 / n1).collect();
        let mut rare: Vec<usize> = counts[1..].to_vec();
        rare.sort_unstable();
        let regime = if rare.len() >= 2
            && counts[1] == rare[0]
            && rare[0] as f64 <= SINGLE_RAREST_RATIO * rare[1] as f64
        {
            Regime::SingleRarest
        } else {
            Regime::ComparableRare
        };
        Ok(Self { k: counts.len() - 1, block_orders, counts: counts.to_vec(), ratios, regime })
    }

    pub fn for_data<F: Scalar>(data: &GroupedSample<F>, kernel: &KernelSpec<F>) -> Result<Self> {
        Self::new(&data.counts(), kernel.block_orders().to_vec())
    }

    pub fn with_regime(mut self, regime: Regime) -> Self {
        self.regime = regime;
        self
    }

    fn check<F: Scalar>(&self, data: &GroupedSample<F>, kernel: &KernelSpec<F>) -> Result<()> {
        if kernel.block_orders() != self.block_orders.as_slice() {
            return Err(Error::Arity("kernel block orders differ from the spec".into()));
        }
        if data.counts() != self.counts {
            return Err(Error::Arity("class sizes differ from the spec".into()));
        }
        Ok(())
    }
}

/// `T_K`: the kernel averaged over every choice of `m_k` rows from each class.
pub fn compute_multi_rit<F: Scalar>(
    data: &GroupedSample<F>,
    kernel: &KernelSpec<F>,
    spec: &MultiClassSpec,
) -> Result<RitStatistic<F>> {
    spec.check(data, kernel)?;
    compute_rit(data, kernel)
}

/// `T_{S,K}`: controls thinned by `plan`, normalized by `C(s n1, m0)`.
pub fn compute_multi_bit<F: Scalar>(
    data: &GroupedSample<F>,
    kernel: &KernelSpec<F>,
    spec: &MultiClassSpec,
    plan: &SubsamplePlan,
) -> Result<RitStatistic<F>> {
    spec.check(data, kernel)?;
    if spec.regime != Regime::ComparableRare {
        return Err(Error::InvalidParameter("boosted multi-class statistics assume comparable rare classes".into()));
    }
    compute_bit(data, kernel, plan)
}

/// Asymptotic variance of `sqrt(n1) T_K`, or of `sqrt(n1) T_{S,K}` when `s` is given.
///
/// `zeta[k]` is `zeta_{1,k}` for `k = 0..=K`; `zeta[0]` only enters the boosted branch.
pub fn multi_asymptotic_variance(spec: &MultiClassSpec, zeta: &[f64], s: Option<usize>) -> Result<f64> {
    if zeta.len() != spec.k + 1 {
        return Err(Error::Arity(format!("expected {} zeta values, got {}", spec.k + 1, zeta.len())));
    }
    let m = |k: usize| spec.block_orders[k] as f64;
    let leading: f64 = match spec.regime {
        Regime::SingleRarest => m(1) * m(1) * zeta[1],
        Regime::ComparableRare => (1..=spec.k).map(|k| m(k) * m(k) * zeta[k] / spec.ratios[k - 1]).sum(),
    };
    let boost = match s {
        Some(s) if spec.regime == Regime::ComparableRare => m(0) * m(0) * zeta[0] / s as f64,
        Some(_) => return Err(Error::InvalidParameter("boosted variance needs comparable rare classes".into())),
        None => 0.0,
    };
    let total = leading + boost;
    if !(total > 0.0) {
        return Err(Error::Degenerate(
            "all first-order projections vanish: second-order multi-class variance applies".into(),
        ));
    }
    Ok(total)
}

/// Variance of the non-normal limit of `n1 T_K` when every first-order projection vanishes:
/// `sum_k m_k^2 (m_k - 1)^2 zeta2_k / (2 r_k^2) + sum_{k1<k2} m_k1^2 m_k2^2 zeta2_{k1,k2} / (r_k1 r_k2)`.
///
/// `zeta2[k - 1]` is `zeta_{2,k}`; `cross` lists `(k1, k2, zeta_{2,k1,k2})`.
pub fn multi_second_order_variance(spec: &MultiClassSpec, zeta2: &[f64], cross: &[(usize, usize, f64)]) -> Result<f64> {
    if zeta2.len() != spec.k {
        return Err(Error::Arity(format!("expected {} zeta2 values, got {}", spec.k, zeta2.len())));
    }
    let m = |k: usize| spec.block_orders[k] as f64;
    let r = |k: usize| spec.ratios[k - 1];
    let own: f64 = (1..=spec.k).map(|k| m(k).powi(2) * (m(k) - 1.0).powi(2) * zeta2[k - 1] / (2.0 * r(k) * r(k))).sum();
    let mut pairs = 0.0;
    for &(a, b, z) in cross {
        if a == 0 || b == 0 || a > spec.k || b > spec.k || a == b {
            return Err(Error::InvalidParameter(format!("invalid class pair ({a}, {b})")));
        }
        pairs += m(a).powi(2) * m(b).powi(2) * z / (r(a) * r(b));
    }
    Ok(own + pairs)
}

/// `zeta_{1,k}`: variance over class-`k` rows of the kernel averaged over tuples from
/// the other classes (at most `budget` per row).
pub fn estimate_zeta1k<F: Scalar>(
    data: &GroupedSample<F>,
    kernel: &KernelSpec<F>,
    spec: &MultiClassSpec,
    k: usize,
    budget: usize,
    seed: u64,
) -> Result<f64> {
    spec.check(data, kernel)?;
    if k > spec.k {
        return Err(Error::InvalidParameter(format!("class {k} out of range 0..={}", spec.k)));
    }
    let nk = data.counts()[k];
    if nk < 2 {
        return Err(Error::InsufficientSamples { class: k, needed: 2, available: nk });
    }
    if spec.k == 1 {
        return if k == 1 { estimate_xi01(data, kernel, budget, seed) } else { estimate_xi10(data, kernel, budget, seed) };
    }
    if kernel.order() != Order::First && kernel.kind() != KernelKind::Custom {
        return Err(Error::Arity(format!("{} is not a first-order kernel", kernel.kind())));
    }
    let values: Vec<f64> = if kernel.kind() == KernelKind::MultiKendall {
        multi_kendall_projection(data, k)
    } else {
        if budget < MIN_BUDGET {
            return Err(Error::InvalidParameter(format!("budget must be at least {MIN_BUDGET}")));
        }
        let rows: Vec<Vec<&[F]>> = (0..data.n_classes()).map(|j| data.rows(j)).collect();
        let orders = kernel.block_orders();
        (0..nk)
            .into_par_iter()
            .map(|i| {
                let mut pools = rows.clone();
                pools[k] = rows[k].iter().enumerate().filter(|&(j, _)| j != i).map(|(_, r)| *r).collect();
                let slots = orders.iter().enumerate().map(|(j, &m)| if j == k { m - 1 } else { m }).collect();
                let fill = SlotFill { pools, block_pool: (0..orders.len()).collect(), slots };
                let mut rng = seed::child_rng(seed, i as u64);
                project_point(kernel, k, rows[k][i], &fill, budget, &mut rng).map(|(v, _)| v.to_f64_lossy())
            })
            .collect::<Result<_>>()?
    };
    Ok(sample_variance(&values).unwrap_or(0.0))
}

/// Plug-in projections of `sum_k sgn(x_k - x_0)` onto one class, up to constants.
fn multi_kendall_projection<F: Scalar>(data: &GroupedSample<F>, k: usize) -> Vec<f64> {
    let sorted = |j: usize| {
        let mut v = data.column0(j);
        sort_floats(&mut v);
        v
    };
    if k == 0 {
        let rare: Vec<Vec<F>> = (1..data.n_classes()).map(sorted).collect();
        data.column0(0)
            .iter()
            .map(|&x| rare.iter().map(|r| -(rank_sign(r, x) as f64) / r.len() as f64).sum())
            .collect()
    } else {
        let controls = sorted(0);
        let n0 = controls.len() as f64;
        data.column0(k).iter().map(|&x| rank_sign(&controls, x) as f64 / n0).collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::bit::draw_subsample;
    use crate::rit::compute_rit_bruteforce;
    use ndarray::Array2;
    use rand::Rng as _;
    use rand_distr::{Distribution, StandardNormal};

    fn normal_classes(counts: &[usize], seed: u64) -> GroupedSample<f64> {
        let mut rng = seed::rng(seed);
        let groups = counts
            .iter()
            .map(|&n| Array2::from_shape_fn((n, 1), |_| {
                let z: f64 = StandardNormal.sample(&mut rng);
                z
            }))
            .collect();
        GroupedSample::from_groups(groups).unwrap()
    }

    fn scalar(v: f64) -> Array2<f64> {
        Array2::from_elem((1, 1), v)
    }

    #[test]
    fn single_tuple_multi_kendall() {
        let g = GroupedSample::from_groups(vec![scalar(1.0), scalar(2.0), scalar(0.0)]).unwrap();
        let k = KernelSpec::multi_kendall(2).unwrap();
        let spec = MultiClassSpec::for_data(&g, &k).unwrap();
        assert_eq!(compute_multi_rit(&g, &k, &spec).unwrap().value, 0.0);
    }

    #[test]
    fn multi_kendall_matches_bruteforce() {
        let mut r = seed::rng(2);
        for _ in 0..50 {
            let counts = [r.random_range(1..10), r.random_range(1..6), r.random_range(1..6), r.random_range(1..4)];
            let g = normal_classes(&counts, r.random());
            let k = KernelSpec::multi_kendall(3).unwrap();
            let spec = MultiClassSpec::for_data(&g, &k).unwrap();
            let fast = compute_multi_rit(&g, &k, &spec).unwrap().value;
            let slow = compute_rit_bruteforce(&g, &k).unwrap().value;
            assert!((fast - slow).abs() < 1e-12);
        }
    }

    #[test]
    fn k1_reduces_to_binary() {
        let g = normal_classes(&[300, 30], 3);
        let k = KernelSpec::kendall();
        let spec = MultiClassSpec::for_data(&g, &k).unwrap();
        assert_eq!(spec.regime, Regime::ComparableRare);
        assert_eq!(compute_multi_rit(&g, &k, &spec).unwrap(), compute_rit(&g, &k).unwrap());
        let plan = draw_subsample(&g, 4, 1, 5).unwrap();
        assert_eq!(compute_multi_bit(&g, &k, &spec, &plan).unwrap(), compute_bit(&g, &k, &plan).unwrap());
        assert_eq!(
            estimate_zeta1k(&g, &k, &spec, 1, 100, 7).unwrap().to_bits(),
            estimate_xi01(&g, &k, 100, 7).unwrap().to_bits()
        );
        let v = multi_asymptotic_variance(&spec, &[0.0, 1.0 / 3.0], None).unwrap();
        assert_eq!(v, 1.0 / 3.0);
    }

    #[test]
    fn regime_classification() {
        assert_eq!(MultiClassSpec::new(&[1000, 10, 100], vec![1, 1, 1]).unwrap().regime, Regime::SingleRarest);
        assert_eq!(MultiClassSpec::new(&[1000, 50, 60], vec![1, 1, 1]).unwrap().regime, Regime::ComparableRare);
        assert!(MultiClassSpec::new(&[1000, 0, 60], vec![1, 1, 1]).is_err());
        assert!(MultiClassSpec::new(&[1000, 5], vec![1, 1, 1]).is_err());
    }

    #[test]
    fn variance_branches() {
        let spec = MultiClassSpec::new(&[4000, 200, 200], vec![1, 1, 1]).unwrap();
        let z = [4.0 / 3.0, 1.0 / 3.0, 1.0 / 3.0];
        assert!((multi_asymptotic_variance(&spec, &z, None).unwrap() - 2.0 / 3.0).abs() < 1e-15);
        let boosted = multi_asymptotic_variance(&spec, &z, Some(1_000_000)).unwrap();
        assert!((boosted - 2.0 / 3.0).abs() < 1e-5);
        assert!(matches!(multi_asymptotic_variance(&spec, &[0.0; 3], None), Err(Error::Degenerate(_))));
        let rare = spec.clone().with_regime(Regime::SingleRarest);
        assert_eq!(multi_asymptotic_variance(&rare, &z, None).unwrap(), 1.0 / 3.0);
        let second = multi_second_order_variance(&spec, &[1.0, 1.0], &[(1, 2, 1.0)]).unwrap();
        assert_eq!(second, 1.0);
    }

    #[test]
    fn zeta_multi_kendall_one_third() {
        let g = normal_classes(&[6000, 600, 600], 4);
        let k = KernelSpec::multi_kendall(2).unwrap();
        let spec = MultiClassSpec::for_data(&g, &k).unwrap();
        for class in 1..=2 {
            let z = estimate_zeta1k(&g, &k, &spec, class, 100, 0).unwrap();
            assert!((z - 1.0 / 3.0).abs() < 0.05, "{z}");
        }
    }

    #[test]
    fn zeta_generic_matches_fast_path() {
        let g = normal_classes(&[25, 8, 6], 5);
        let fast = KernelSpec::multi_kendall(2).unwrap();
        let custom = KernelSpec::custom(
            vec![1, 1, 1],
            Order::First,
            std::sync::Arc::new(|b: &[Vec<&[f64]>]| {
                (1..b.len()).map(|k| crate::kernels::kernel_kendall(b[0][0][0], b[k][0][0])).sum()
            }),
        )
        .unwrap();
        let spec = MultiClassSpec::for_data(&g, &fast).unwrap();
        for class in 0..=2 {
            let a = estimate_zeta1k(&g, &fast, &spec, class, 1000, 0).unwrap();
            let b = estimate_zeta1k(&g, &custom, &spec, class, 1000, 0).unwrap();
            assert!((a - b).abs() < 1e-12, "{class}: {a} {b}");
        }
        let constant = GroupedSample::from_groups(vec![
            Array2::from_shape_vec((3, 1), vec![0.0, 1.0, 2.0]).unwrap(),
            Array2::from_elem((3, 1), 0.5),
            Array2::from_elem((2, 1), 1.5),
        ])
        .unwrap();
        let spec = MultiClassSpec::for_data(&constant, &fast).unwrap();
        assert_eq!(estimate_zeta1k(&constant, &fast, &spec, 1, 100, 0).unwrap(), 0.0);
    }
}
