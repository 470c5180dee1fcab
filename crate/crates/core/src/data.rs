//! Labeled samples, class partitioning and column standardization.

use ndarray::{Array2, ArrayView2, Axis};

use crate::error::{Error, Result};
use crate::scalar::{stable_sum, Scalar};

/// Features (`n x p`, row-major) paired with integer class labels.
///
/// Class 0 is the control class; classes `1..=K` are rare classes.
#[derive(Clone, Debug, PartialEq)]
pub struct LabeledSample<F> {
    features: Array2<F>,
    labels: Vec<usize>,
}

impl<F: Scalar> LabeledSample<F> {
    pub fn new(features: Array2<F>, labels: Vec<usize>) -> Result<Self> {
        let (n, p) = features.dim();
        if n != labels.len() {
            return Err(Error::InvalidSample(format!(
                "{n} feature rows but {} labels",
                labels.len()
            )));
        }
        if p == 0 {
            return Err(Error::InvalidSample("at least one feature column is required".into()));
        }
        if let Some(((i, j), _)) = features.indexed_iter().find(|(_, v)| !v.is_finite()) {
            return Err(Error::InvalidSample(format!("non-finite feature at row {i}, column {j}")));
        }
        let features = if features.is_standard_layout() {
            features
        } else {
            features.as_standard_layout().into_owned()
        };
        Ok(Self { features, labels })
    }

    /// Builds a sample from per-row vectors.
    pub fn from_rows(rows: &[Vec<F>], labels: Vec<usize>) -> Result<Self> {
        let p = rows.first().map_or(0, Vec::len);
        if let Some(bad) = rows.iter().find(|r| r.len() != p) {
            return Err(Error::DimensionMismatch { expected: p, found: bad.len() });
        }
        let flat: Vec<F> = rows.iter().flatten().copied().collect();
        let features = Array2::from_shape_vec((rows.len(), p), flat)
            .map_err(|e| Error::InvalidSample(e.to_string()))?;
        Self::new(features, labels)
    }

    pub fn n(&self) -> usize {
        self.labels.len()
    }

    pub fn p(&self) -> usize {
        self.features.ncols()
    }

    pub fn features(&self) -> ArrayView2<'_, F> {
        self.features.view()
    }

    pub fn labels(&self) -> &[usize] {
        &self.labels
    }

    pub fn row(&self, i: usize) -> &[F] {
        row_slice(&self.features, i)
    }

    /// Number of classes implied by the largest label (`K + 1`).
    pub fn n_classes(&self) -> usize {
        self.labels.iter().max().map_or(0, |&m| m + 1)
    }

    pub fn class_counts(&self) -> Vec<usize> {
        let mut counts = vec![0; self.n_classes()];
        for &y in &self.labels {
            counts[y] += 1;
        }
        counts
    }

    /// Same features with a different label vector (used by permutation tests).
    pub fn relabel(&self, labels: Vec<usize>) -> Result<Self> {
        if labels.len() != self.n() {
            return Err(Error::InvalidSample(format!(
                "{} labels for {} rows",
                labels.len(),
                self.n()
            )));
        }
        Ok(Self { features: self.features.clone(), labels })
    }

    /// Partitions rows by label, preserving the original row order within each class.
    pub fn group_by_label(&self) -> Result<GroupedSample<F>> {
        let k1 = self.n_classes();
        if k1 < 2 {
            return Err(Error::DegeneratePartition(
                "no rare-class (label >= 1) observations".into(),
            ));
        }
        let mut indices = vec![Vec::new(); k1];
        for (i, &y) in self.labels.iter().enumerate() {
            indices[y].push(i);
        }
        if let Some(k) = indices.iter().position(Vec::is_empty) {
            return Err(Error::DegeneratePartition(format!("class {k} has no observations")));
        }
        let groups = indices
            .iter()
            .map(|rows| self.features.select(Axis(0), rows))
            .collect();
        Ok(GroupedSample { groups, indices })
    }

    /// Centers every column to mean 0 and scales it to sample standard deviation 1
    /// (`n - 1` denominator).
    pub fn standardize(&self) -> Result<Self> {
        let n = self.n();
        if n < 2 {
            return Err(Error::InvalidSample("standardization needs at least two rows".into()));
        }
        let mut features = self.features.clone();
        for (j, mut col) in features.axis_iter_mut(Axis(1)).enumerate() {
            let mean = stable_sum(col.iter().copied()) / F::of(n as f64);
            let ss = stable_sum(col.iter().map(|&v| (v - mean) * (v - mean)));
            let sd = (ss / F::of((n - 1) as f64)).sqrt();
            let scale = col.iter().fold(F::zero(), |m, v| m.max(v.abs()));
            if !(sd > F::epsilon() * scale.max(F::min_positive_value())) {
                return Err(Error::ZeroVariance { column: j });
            }
            col.mapv_inplace(|v| (v - mean) / sd);
        }
        Ok(Self { features, labels: self.labels.clone() })
    }
}

/// Class-partitioned view `D^0, D^1, ..., D^K` of a sample.
#[derive(Clone, Debug, PartialEq)]
pub struct GroupedSample<F> {
    groups: Vec<Array2<F>>,
    indices: Vec<Vec<usize>>,
}

impl<F: Scalar> GroupedSample<F> {
    /// Builds a grouped sample directly from per-class matrices. Original row
    /// indices are assigned class by class.
    pub fn from_groups(groups: Vec<Array2<F>>) -> Result<Self> {
        if groups.len() < 2 {
            return Err(Error::DegeneratePartition("need a control class and at least one rare class".into()));
        }
        let p = groups[0].ncols();
        if p == 0 {
            return Err(Error::InvalidSample("at least one feature column is required".into()));
        }
        let mut offset = 0;
        let mut indices = Vec::with_capacity(groups.len());
        let mut owned = Vec::with_capacity(groups.len());
        for (k, g) in groups.into_iter().enumerate() {
            if g.ncols() != p {
                return Err(Error::DimensionMismatch { expected: p, found: g.ncols() });
            }
            if g.nrows() == 0 {
                return Err(Error::DegeneratePartition(format!("class {k} has no observations")));
            }
            if g.iter().any(|v| !v.is_finite()) {
                return Err(Error::InvalidSample(format!("non-finite feature in class {k}")));
            }
            indices.push((offset..offset + g.nrows()).collect());
            offset += g.nrows();
            owned.push(if g.is_standard_layout() { g } else { g.as_standard_layout().into_owned() });
        }
        Ok(Self { groups: owned, indices })
    }

    /// Convenience constructor for one-dimensional controls and cases.
    pub fn from_scalars(controls: &[F], cases: &[F]) -> Result<Self> {
        let to_col = |v: &[F]| Array2::from_shape_vec((v.len(), 1), v.to_vec()).expect("column shape");
        Self::from_groups(vec![to_col(controls), to_col(cases)])
    }

    pub fn n_classes(&self) -> usize {
        self.groups.len()
    }

    pub fn p(&self) -> usize {
        self.groups[0].ncols()
    }

    pub fn counts(&self) -> Vec<usize> {
        self.groups.iter().map(Array2::nrows).collect()
    }

    pub fn n(&self) -> usize {
        self.groups.iter().map(Array2::nrows).sum()
    }

    pub fn n0(&self) -> usize {
        self.groups[0].nrows()
    }

    pub fn n1(&self) -> usize {
        self.groups[1].nrows()
    }

    /// Diagnostic imbalance ratio `n1 / n0`.
    pub fn imbalance(&self) -> f64 {
        self.n1() as f64 / self.n0() as f64
    }

    pub fn group(&self, k: usize) -> ArrayView2<'_, F> {
        self.groups[k].view()
    }

    pub fn controls(&self) -> ArrayView2<'_, F> {
        self.group(0)
    }

    pub fn cases(&self) -> ArrayView2<'_, F> {
        self.group(1)
    }

    pub fn row(&self, k: usize, i: usize) -> &[F] {
        row_slice(&self.groups[k], i)
    }

    /// Rows of class `k` as slices.
    pub fn rows(&self, k: usize) -> Vec<&[F]> {
        (0..self.groups[k].nrows()).map(|i| self.row(k, i)).collect()
    }

    /// First feature column of class `k` (for scalar kernels).
    pub fn column0(&self, k: usize) -> Vec<F> {
        self.groups[k].column(0).to_vec()
    }

    /// Original row indices of class `k` within the source sample.
    pub fn original_indices(&self, k: usize) -> &[usize] {
        &self.indices[k]
    }

    /// Reassembles the labeled sample in original row order.
    pub fn reassemble(&self) -> Result<LabeledSample<F>> {
        let n = self.n();
        let p = self.p();
        let mut features = Array2::zeros((n, p));
        let mut labels = vec![usize::MAX; n];
        for (k, (g, idx)) in self.groups.iter().zip(&self.indices).enumerate() {
            for (r, &i) in idx.iter().enumerate() {
                if i >= n || labels[i] != usize::MAX {
                    return Err(Error::InvalidSample("original indices are not a permutation".into()));
                }
                features.row_mut(i).assign(&g.row(r));
                labels[i] = k;
            }
        }
        LabeledSample::new(features, labels)
    }

    /// Keeps only the controls flagged in `keep`; rare classes are untouched.
    pub fn thin_controls(&self, keep: &[bool]) -> Result<Self> {
        if keep.len() != self.n0() {
            return Err(Error::InvalidParameter(format!(
                "inclusion mask has length {}, expected n0 = {}",
                keep.len(),
                self.n0()
            )));
        }
        let rows: Vec<usize> = keep.iter().enumerate().filter_map(|(i, &k)| k.then_some(i)).collect();
        let mut groups = Vec::with_capacity(self.groups.len());
        groups.push(self.groups[0].select(Axis(0), &rows));
        groups.extend(self.groups[1..].iter().cloned());
        let mut indices = Vec::with_capacity(self.indices.len());
        indices.push(rows.iter().map(|&r| self.indices[0][r]).collect());
        indices.extend(self.indices[1..].iter().cloned());
        Ok(Self { groups, indices })
    }

    /// Requires `n_k >= orders[k]` for every class.
    pub fn check_counts(&self, orders: &[usize]) -> Result<()> {
        if orders.len() != self.n_classes() {
            return Err(Error::Arity(format!(
                "kernel has {} blocks but the sample has {} classes",
                orders.len(),
                self.n_classes()
            )));
        }
        for (k, (&m, n)) in orders.iter().zip(self.counts()).enumerate() {
            if n < m {
                return Err(Error::InsufficientSamples { class: k, needed: m, available: n });
            }
        }
        Ok(())
    }
}

fn row_slice<F>(m: &Array2<F>, i: usize) -> &[F] {
    let p = m.ncols();
    &m.as_slice().expect("standard layout")[i * p..(i + 1) * p]
}
