//! Kernel functions `h(control block; case block[; ...])` for the built-in statistics.
//!
//! Blocks are passed control-first: `blocks[0]` holds the `m0` control points,
//! `blocks[1]` the `m1` case points, and further blocks belong to additional rare
//! classes. Every kernel is symmetric within each block.

use std::collections::BTreeMap;
use std::fmt;
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::scalar::{sgn, Scalar};

/// Rounding slack tolerated on the arccos argument before clamping.
pub const ARCCOS_SLACK: f64 = 1e-12;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum KernelKind {
    RescaledPearson,
    RescaledKendall,
    ImbalancedKendall,
    RescaledDcov,
    RescaledIpcov,
    MultiKendall,
    Custom,
}

impl KernelKind {
    pub fn name(self) -> &'static str {
        match self {
            KernelKind::RescaledPearson => "rescaled_pearson",
            KernelKind::RescaledKendall => "rescaled_kendall",
            KernelKind::ImbalancedKendall => "imbalanced_kendall",
            KernelKind::RescaledDcov => "rescaled_dcov",
            KernelKind::RescaledIpcov => "rescaled_ipcov",
            KernelKind::MultiKendall => "multi_kendall",
            KernelKind::Custom => "custom",
        }
    }

    /// Kernels defined on scalar features only.
    pub fn is_scalar(self) -> bool {
        matches!(
            self,
            KernelKind::RescaledPearson
                | KernelKind::RescaledKendall
                | KernelKind::ImbalancedKendall
                | KernelKind::MultiKendall
        )
    }
}

impl fmt::Display for KernelKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl std::str::FromStr for KernelKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Ok(match s {
            "rescaled_pearson" | "pearson" => KernelKind::RescaledPearson,
            "rescaled_kendall" | "kendall" => KernelKind::RescaledKendall,
            "imbalanced_kendall" => KernelKind::ImbalancedKendall,
            "rescaled_dcov" | "dcov" => KernelKind::RescaledDcov,
            "rescaled_ipcov" | "ipcov" => KernelKind::RescaledIpcov,
            "multi_kendall" => KernelKind::MultiKendall,
            other => return Err(Error::InvalidParameter(format!("unknown kernel '{other}'"))),
        })
    }
}

/// Degeneracy class of a kernel under independence.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Order {
    First,
    Second,
}

/// User-supplied kernel: receives one vector of point slices per block.
pub type CustomKernelFn<F> = Arc<dyn Fn(&[Vec<&[F]>]) -> F + Send + Sync>;

/// Kernel identity, block orders `(m0, m1, ..., mK)` and numeric parameters.
#[derive(Clone)]
pub struct KernelSpec<F> {
    kind: KernelKind,
    block_orders: Vec<usize>,
    params: BTreeMap<String, f64>,
    order: Order,
    custom: Option<CustomKernelFn<F>>,
}

impl<F> fmt::Debug for KernelSpec<F> {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("KernelSpec")
            .field("kind", &self.kind)
            .field("block_orders", &self.block_orders)
            .field("params", &self.params)
            .field("order", &self.order)
            .finish_non_exhaustive()
    }
}

impl<F: Scalar> KernelSpec<F> {
    fn builtin(kind: KernelKind, block_orders: Vec<usize>, order: Order) -> Self {
        Self { kind, block_orders, params: BTreeMap::new(), order, custom: None }
    }

    pub fn pearson() -> Self {
        Self::builtin(KernelKind::RescaledPearson, vec![1, 1], Order::First)
    }

    pub fn kendall() -> Self {
        Self::builtin(KernelKind::RescaledKendall, vec![1, 1], Order::First)
    }

    /// One case against the mean of `m` controls.
    pub fn imbalanced_kendall(m: usize) -> Result<Self> {
        if m == 0 {
            return Err(Error::InvalidParameter("imbalanced_kendall needs m >= 1".into()));
        }
        let mut k = Self::builtin(KernelKind::ImbalancedKendall, vec![m, 1], Order::First);
        k.params.insert("m".into(), m as f64);
        Ok(k)
    }

    pub fn dcov() -> Self {
        Self::builtin(KernelKind::RescaledDcov, vec![2, 2], Order::Second)
    }

    pub fn ipcov(c_sigma2: f64) -> Result<Self> {
        if !(c_sigma2 > 0.0 && c_sigma2.is_finite()) {
            return Err(Error::InvalidParameter(format!("c_sigma2 must be positive, got {c_sigma2}")));
        }
        let mut k = Self::builtin(KernelKind::RescaledIpcov, vec![2, 2], Order::Second);
        k.params.insert("c_sigma2".into(), c_sigma2);
        Ok(k)
    }

    /// `h = sum_k sgn(x^(k) - x^(0))` over `rare_classes` rare classes, one point per block.
    pub fn multi_kendall(rare_classes: usize) -> Result<Self> {
        if rare_classes == 0 {
            return Err(Error::InvalidParameter("multi_kendall needs at least one rare class".into()));
        }
        Ok(Self::builtin(KernelKind::MultiKendall, vec![1; rare_classes + 1], Order::First))
    }

    pub fn custom(block_orders: Vec<usize>, order: Order, f: CustomKernelFn<F>) -> Result<Self> {
        if block_orders.len() < 2 || block_orders.contains(&0) {
            return Err(Error::Arity("custom kernels need >= 2 blocks of order >= 1".into()));
        }
        Ok(Self { kind: KernelKind::Custom, block_orders, params: BTreeMap::new(), order, custom: Some(f) })
    }

    /// Built-in kernel by kind with default parameters.
    pub fn from_kind(kind: KernelKind, params: &BTreeMap<String, f64>) -> Result<Self> {
        match kind {
            KernelKind::RescaledPearson => Ok(Self::pearson()),
            KernelKind::RescaledKendall => Ok(Self::kendall()),
            KernelKind::ImbalancedKendall => {
                let m = params.get("m").copied().unwrap_or(2.0);
                if m < 1.0 || m.fract() != 0.0 {
                    return Err(Error::InvalidParameter(format!("m must be a positive integer, got {m}")));
                }
                Self::imbalanced_kendall(m as usize)
            }
            KernelKind::RescaledDcov => Ok(Self::dcov()),
            KernelKind::RescaledIpcov => Self::ipcov(params.get("c_sigma2").copied().unwrap_or(1.0)),
            KernelKind::MultiKendall => {
                let k = params.get("rare_classes").copied().unwrap_or(1.0);
                Self::multi_kendall(k as usize)
            }
            KernelKind::Custom => Err(Error::InvalidParameter("custom kernels need a callable".into())),
        }
    }

    pub fn kind(&self) -> KernelKind {
        self.kind
    }

    pub fn block_orders(&self) -> &[usize] {
        &self.block_orders
    }

    pub fn m0(&self) -> usize {
        self.block_orders[0]
    }

    pub fn m1(&self) -> usize {
        self.block_orders[1]
    }

    pub fn n_blocks(&self) -> usize {
        self.block_orders.len()
    }

    pub fn order(&self) -> Order {
        self.order
    }

    pub fn params(&self) -> &BTreeMap<String, f64> {
        &self.params
    }

    pub fn c_sigma2(&self) -> f64 {
        self.params.get("c_sigma2").copied().unwrap_or(1.0)
    }

    /// Checks the feature dimension against the kernel's domain.
    pub fn check_dimension(&self, p: usize) -> Result<()> {
        if self.kind.is_scalar() && p != 1 {
            return Err(Error::Arity(format!("{} is defined for p = 1, got p = {p}", self.kind)));
        }
        Ok(())
    }

    /// Evaluates the kernel on one tuple. Dimensions are assumed checked.
    pub fn eval(&self, blocks: &[Vec<&[F]>]) -> F {
        debug_assert_eq!(blocks.len(), self.block_orders.len());
        match self.kind {
            KernelKind::RescaledPearson => blocks[1][0][0] - blocks[0][0][0],
            KernelKind::RescaledKendall => kernel_kendall(blocks[0][0][0], blocks[1][0][0]),
            KernelKind::ImbalancedKendall => {
                let m = F::of(blocks[0].len() as f64);
                let mean = blocks[0].iter().map(|x| x[0]).sum::<F>() / m;
                sgn(blocks[1][0][0] - mean)
            }
            KernelKind::RescaledDcov => six_term(blocks, euclidean),
            KernelKind::RescaledIpcov => {
                let c = F::of(self.c_sigma2());
                six_term(blocks, |a, b| angular_unchecked(a, b, c))
            }
            KernelKind::MultiKendall => {
                let x0 = blocks[0][0][0];
                blocks[1..].iter().map(|b| sgn(b[0][0] - x0)).sum()
            }
            KernelKind::Custom => (self.custom.as_ref().expect("custom kernel callable"))(blocks),
        }
    }
}

fn six_term<F: Scalar>(blocks: &[Vec<&[F]>], d: impl Fn(&[F], &[F]) -> F) -> F {
    let (a0, b0) = (blocks[0][0], blocks[0][1]);
    let (a1, b1) = (blocks[1][0], blocks[1][1]);
    let two = F::of(2.0);
    d(a0, a1) + d(a0, b1) + d(b0, a1) + d(b0, b1) - two * d(a0, b0) - two * d(a1, b1)
}

/// `x1 - x0` on scalar features.
pub fn kernel_pearson<F: Scalar>(x0: &[F], x1: &[F]) -> Result<F> {
    for x in [x0, x1] {
        if x.len() != 1 {
            return Err(Error::Arity(format!("pearson kernel needs p = 1, got p = {}", x.len())));
        }
    }
    Ok(x1[0] - x0[0])
}

/// `sgn(x1 - x0)` with ties mapped to 0.
#[inline]
pub fn kernel_kendall<F: Scalar>(x0: F, x1: F) -> F {
    sgn(x1 - x0)
}

/// `sgn(x1 - mean(x0s))`.
pub fn kernel_imbalanced_kendall<F: Scalar>(x0s: &[F], x1: F) -> Result<F> {
    if x0s.is_empty() {
        return Err(Error::Arity("imbalanced kendall needs at least one control".into()));
    }
    let mean = x0s.iter().copied().sum::<F>() / F::of(x0s.len() as f64);
    Ok(sgn(x1 - mean))
}

#[inline]
pub fn euclidean<F: Scalar>(a: &[F], b: &[F]) -> F {
    a.iter()
        .zip(b)
        .map(|(&x, &y)| (x - y) * (x - y))
        .fold(F::zero(), |s, v| s + v)
        .sqrt()
}

#[inline]
pub(crate) fn dot<F: Scalar>(a: &[F], b: &[F]) -> F {
    a.iter().zip(b).fold(F::zero(), |s, (&x, &y)| s + x * y)
}

/// `arccos` with rounding slack absorbed; `None` when the argument is out of range.
#[inline]
pub(crate) fn clamped_acos<F: Scalar>(arg: F) -> Option<F> {
    let one = F::one();
    if arg.abs() <= one {
        Some(arg.acos())
    } else if arg.abs() <= one + F::of(ARCCOS_SLACK) {
        Some(arg.max(-one).min(one).acos())
    } else {
        None
    }
}

#[inline]
pub(crate) fn angular_unchecked<F: Scalar>(a: &[F], b: &[F], c: F) -> F {
    if a == b {
        return F::zero();
    }
    let arg = (c + dot(a, b)) / ((c + dot(a, a)).sqrt() * (c + dot(b, b)).sqrt());
    clamped_acos(arg).unwrap_or_else(|| arg.max(-F::one()).min(F::one()).acos())
}

/// Angular affinity `A(x, y) = arccos{(c + x'y) / sqrt((c + x'x)(c + y'y))}`.
pub fn angular_affinity<F: Scalar>(a: &[F], b: &[F], c_sigma2: F) -> Result<F> {
    if a.len() != b.len() {
        return Err(Error::DimensionMismatch { expected: a.len(), found: b.len() });
    }
    if !(c_sigma2 > F::zero()) {
        return Err(Error::InvalidParameter("c_sigma2 must be positive".into()));
    }
    // arccos is ill-conditioned at 1; identical points are exactly zero apart.
    if a == b {
        return Ok(F::zero());
    }
    let arg = (c_sigma2 + dot(a, b)) / ((c_sigma2 + dot(a, a)).sqrt() * (c_sigma2 + dot(b, b)).sqrt());
    clamped_acos(arg).ok_or_else(|| Error::Numerical(format!("arccos argument {arg} outside [-1, 1]")))
}

fn same_dims<F>(points: [&[F]; 4]) -> Result<()> {
    let p = points[0].len();
    match points.iter().find(|x| x.len() != p) {
        Some(x) => Err(Error::DimensionMismatch { expected: p, found: x.len() }),
        None => Ok(()),
    }
}

/// Distance-covariance kernel: four cross-block distances minus twice each within-block distance.
pub fn kernel_dcov<F: Scalar>(x0a: &[F], x0b: &[F], x1a: &[F], x1b: &[F]) -> Result<F> {
    same_dims([x0a, x0b, x1a, x1b])?;
    Ok(six_term(&[vec![x0a, x0b], vec![x1a, x1b]], euclidean))
}

/// Projection-covariance kernel built from [`angular_affinity`].
pub fn kernel_ipcov<F: Scalar>(x0a: &[F], x0b: &[F], x1a: &[F], x1b: &[F], c_sigma2: F) -> Result<F> {
    same_dims([x0a, x0b, x1a, x1b])?;
    let a = |x: &[F], y: &[F]| angular_affinity(x, y, c_sigma2);
    let two = F::of(2.0);
    Ok(a(x0a, x1a)? + a(x0a, x1b)? + a(x0b, x1a)? + a(x0b, x1b)? - two * a(x0a, x0b)? - two * a(x1a, x1b)?)
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::f64::consts::PI;

    #[test]
    fn pearson_values() {
        assert_eq!(kernel_pearson(&[0.0], &[0.0]).unwrap(), 0.0);
        assert_eq!(kernel_pearson(&[1.5], &[2.0]).unwrap(), 0.5);
        assert_eq!(kernel_pearson(&[2.0], &[1.5]).unwrap(), -0.5);
        assert!(matches!(kernel_pearson(&[1.0, 2.0], &[0.0, 0.0]), Err(Error::Arity(_))));
    }

    #[test]
    fn kendall_values() {
        assert_eq!(kernel_kendall(1.0, 3.0), 1.0);
        assert_eq!(kernel_kendall(3.0, 1.0), -1.0);
        assert_eq!(kernel_kendall(2.0, 2.0), 0.0);
    }

    #[test]
    fn imbalanced_kendall_values() {
        assert_eq!(kernel_imbalanced_kendall(&[0.0, 2.0], 2.0).unwrap(), 1.0);
        assert_eq!(kernel_imbalanced_kendall(&[5.0], 5.0).unwrap(), 0.0);
        assert_eq!(kernel_imbalanced_kendall(&[1.0, 2.0, 3.0], 0.0).unwrap(), -1.0);
        let k = KernelSpec::<f64>::imbalanced_kendall(3).unwrap();
        assert_eq!(k.block_orders(), &[3, 1]);
    }

    #[test]
    fn dcov_values() {
        let x = [0.3, -1.0];
        assert_eq!(kernel_dcov(&x, &x, &x, &x).unwrap(), 0.0);
        assert_eq!(kernel_dcov(&[0.0], &[1.0], &[0.0], &[1.0]).unwrap(), -2.0);
        let (a, b, c, d) = ([0.1, 2.0], [1.0, -0.5], [3.0, 0.2], [-1.0, 1.0]);
        let h: f64 = kernel_dcov(&a, &b, &c, &d).unwrap();
        assert!((h - kernel_dcov(&b, &a, &c, &d).unwrap()).abs() < 1e-14);
        assert!((h - kernel_dcov(&a, &b, &d, &c).unwrap()).abs() < 1e-14);
        assert!(matches!(kernel_dcov(&a, &b, &c, &[1.0]), Err(Error::DimensionMismatch { .. })));
    }

    #[test]
    fn ipcov_values() {
        let x = [0.4f64, 1.0];
        assert!(kernel_ipcov(&x, &x, &x, &x, 1.0).unwrap().abs() < 1e-15);
        let (a, b) = ([0.2f64, 0.1], [-1.0, 3.0]);
        let ab = angular_affinity(&a, &b, 2.0).unwrap();
        assert!((kernel_ipcov(&a, &b, &a, &b, 2.0).unwrap() + 2.0 * ab).abs() < 1e-14);
        let v = kernel_ipcov(&[0.0], &[1.0], &[0.0], &[1.0], 1.0).unwrap();
        assert!((v + PI / 2.0).abs() < 1e-12, "{v}");
        assert!(kernel_ipcov(&a, &b, &a, &b, 0.0).is_err());
        assert!(KernelSpec::<f64>::ipcov(-1.0).is_err());
    }

    #[test]
    fn arccos_guard() {
        assert_eq!(clamped_acos(1.0 + 1e-13), Some(0.0));
        assert_eq!(clamped_acos(1.0 + 1e-9), None);
    }

    #[test]
    fn multi_kendall_single_tuple() {
        let k = KernelSpec::<f64>::multi_kendall(2).unwrap();
        let v = k.eval(&[vec![&[1.0][..]], vec![&[2.0][..]], vec![&[0.0][..]]]);
        assert_eq!(v, 0.0);
    }

    #[test]
    fn scalar_kernels_reject_vectors() {
        assert!(KernelSpec::<f64>::kendall().check_dimension(2).is_err());
        assert!(KernelSpec::<f64>::dcov().check_dimension(2).is_ok());
    }
}
