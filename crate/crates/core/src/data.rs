//! Observation containers: the auxiliary matrix, the user-facing [`Dataset`]
//! and the pooled [`DataMatrix`] the kernel is built on.

use crate::error::{invalid, Result};

/// Type tag of a data column.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum ColumnKind {
    Continuous,
    /// Finite label set. Values are stored as label codes and compared for
    /// equality only.
    Categorical,
}

/// Row-major `n x K` auxiliary matrix with one type tag per column.
#[derive(Debug, Clone, PartialEq)]
pub struct AuxData {
    n: usize,
    kinds: Vec<ColumnKind>,
    values: Vec<f64>,
}

impl AuxData {
    /// No auxiliary columns (`K = 0`).
    pub fn empty(n: usize) -> Self {
        AuxData { n, kinds: Vec::new(), values: Vec::new() }
    }

    /// Builds the matrix from typed columns of equal length.
    pub fn from_columns(n: usize, columns: Vec<(ColumnKind, Vec<f64>)>) -> Result<Self> {
        let k = columns.len();
        for (j, (_, col)) in columns.iter().enumerate() {
            if col.len() != n {
                return invalid(format!(
                    "auxiliary column {j} has {} entries, expected {n}",
                    col.len()
                ));
            }
            if col.iter().any(|v| !v.is_finite()) {
                return invalid(format!("auxiliary column {j} contains a non-finite value"));
            }
        }
        let mut values = vec![0.0; n * k];
        for (j, (_, col)) in columns.iter().enumerate() {
            for (i, v) in col.iter().enumerate() {
                values[i * k + j] = *v;
            }
        }
        let kinds = columns.into_iter().map(|(kind, _)| kind).collect();
        Ok(AuxData { n, kinds, values })
    }

    /// All-continuous matrix from columns.
    pub fn continuous(n: usize, columns: Vec<Vec<f64>>) -> Result<Self> {
        Self::from_columns(n, columns.into_iter().map(|c| (ColumnKind::Continuous, c)).collect())
    }

    /// Builds the matrix from row-major values.
    pub fn from_rows(n: usize, kinds: Vec<ColumnKind>, values: Vec<f64>) -> Result<Self> {
        if values.len() != n * kinds.len() {
            return invalid(format!(
                "auxiliary matrix has {} values, expected {} x {}",
                values.len(),
                n,
                kinds.len()
            ));
        }
        if values.iter().any(|v| !v.is_finite()) {
            return invalid("auxiliary matrix contains a non-finite value");
        }
        Ok(AuxData { n, kinds, values })
    }

    pub fn n(&self) -> usize {
        self.n
    }

    /// Number of auxiliary columns `K`.
    pub fn k(&self) -> usize {
        self.kinds.len()
    }

    pub fn kinds(&self) -> &[ColumnKind] {
        &self.kinds
    }

    pub fn row(&self, i: usize) -> &[f64] {
        let k = self.k();
        &self.values[i * k..(i + 1) * k]
    }

    pub fn column(&self, j: usize) -> Vec<f64> {
        (0..self.n).map(|i| self.values[i * self.k() + j]).collect()
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    /// Replaces all columns by their row-wise average. Every column must be
    /// continuous.
    pub fn row_means(&self) -> Result<AuxData> {
        if self.k() == 0 {
            return invalid("cannot average an empty auxiliary matrix");
        }
        if self.kinds.iter().any(|k| *k != ColumnKind::Continuous) {
            return invalid("only continuous auxiliary columns can be averaged");
        }
        let mean: Vec<f64> = (0..self.n)
            .map(|i| self.row(i).iter().sum::<f64>() / self.k() as f64)
            .collect();
        AuxData::continuous(self.n, vec![mean])
    }

    /// Keeps the rows listed in `order`, in that order.
    pub fn select_rows(&self, order: &[usize]) -> AuxData {
        let mut values = Vec::with_capacity(order.len() * self.k());
        for &i in order {
            values.extend_from_slice(self.row(i));
        }
        AuxData { n: order.len(), kinds: self.kinds.clone(), values }
    }
}

/// Primary observations, auxiliary data and the known noise level.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub y: Vec<f64>,
    pub aux: AuxData,
    pub sigma: f64,
}

impl Dataset {
    pub fn new(y: Vec<f64>, aux: AuxData, sigma: f64) -> Result<Self> {
        if y.len() < 2 {
            return invalid(format!("need at least 2 observations, got {}", y.len()));
        }
        if aux.n() != y.len() {
            return invalid(format!(
                "auxiliary data has {} rows but there are {} observations",
                aux.n(),
                y.len()
            ));
        }
        if !(sigma > 0.0 && sigma.is_finite()) {
            return invalid(format!("sigma must be positive and finite, got {sigma}"));
        }
        if y.iter().any(|v| !v.is_finite()) {
            return invalid("primary observations contain a non-finite value");
        }
        Ok(Dataset { y, aux, sigma })
    }

    /// Dataset without side information.
    pub fn univariate(y: Vec<f64>, sigma: f64) -> Result<Self> {
        let n = y.len();
        Self::new(y, AuxData::empty(n), sigma)
    }

    pub fn n(&self) -> usize {
        self.y.len()
    }

    pub fn k(&self) -> usize {
        self.aux.k()
    }

    /// Same auxiliary data and noise level, new primary vector.
    pub fn with_y(&self, y: Vec<f64>) -> Result<Self> {
        Dataset::new(y, self.aux.clone(), self.sigma)
    }

    pub fn with_sigma(&self, sigma: f64) -> Result<Self> {
        Dataset::new(self.y.clone(), self.aux.clone(), sigma)
    }

    /// Pools `[y | S]` into the matrix the kernel operates on.
    pub fn pooled(&self) -> DataMatrix {
        DataMatrix::pool(&self.y, &self.aux)
    }
}

/// Pooled records of dimension `K + 1`. Column 0 is the primary coordinate
/// and is always continuous.
#[derive(Debug, Clone, PartialEq)]
pub struct DataMatrix {
    n: usize,
    kinds: Vec<ColumnKind>,
    values: Vec<f64>,
}

impl DataMatrix {
    pub fn new(n: usize, kinds: Vec<ColumnKind>, values: Vec<f64>) -> Result<Self> {
        if n < 2 {
            return invalid(format!("need at least 2 records, got {n}"));
        }
        if kinds.first() != Some(&ColumnKind::Continuous) {
            return invalid("the primary column must be continuous");
        }
        if values.len() != n * kinds.len() {
            return invalid(format!(
                "data matrix has {} values, expected {n} x {}",
                values.len(),
                kinds.len()
            ));
        }
        if values.iter().any(|v| !v.is_finite()) {
            return invalid("data matrix contains a non-finite value");
        }
        Ok(DataMatrix { n, kinds, values })
    }

    fn pool(y: &[f64], aux: &AuxData) -> Self {
        let dim = aux.k() + 1;
        let mut kinds = Vec::with_capacity(dim);
        kinds.push(ColumnKind::Continuous);
        kinds.extend_from_slice(aux.kinds());
        let mut values = Vec::with_capacity(y.len() * dim);
        for (i, yi) in y.iter().enumerate() {
            values.push(*yi);
            values.extend_from_slice(aux.row(i));
        }
        DataMatrix { n: y.len(), kinds, values }
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn dim(&self) -> usize {
        self.kinds.len()
    }

    pub fn kinds(&self) -> &[ColumnKind] {
        &self.kinds
    }

    pub fn row(&self, i: usize) -> &[f64] {
        let d = self.dim();
        &self.values[i * d..(i + 1) * d]
    }

    pub fn column(&self, j: usize) -> Vec<f64> {
        (0..self.n).map(|i| self.values[i * self.dim() + j]).collect()
    }

    pub fn continuous_columns(&self) -> Vec<usize> {
        self.indices_of(ColumnKind::Continuous)
    }

    pub fn categorical_columns(&self) -> Vec<usize> {
        self.indices_of(ColumnKind::Categorical)
    }

    fn indices_of(&self, kind: ColumnKind) -> Vec<usize> {
        self.kinds
            .iter()
            .enumerate()
            .filter(|(_, k)| **k == kind)
            .map(|(j, _)| j)
            .collect()
    }

    /// Mutable access used by finite-difference checks.
    pub fn set(&mut self, i: usize, j: usize, value: f64) {
        let d = self.dim();
        self.values[i * d + j] = value;
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn pooled_matrix_puts_primary_first() {
        let aux = AuxData::from_columns(
            3,
            vec![
                (ColumnKind::Continuous, vec![10.0, 11.0, 12.0]),
                (ColumnKind::Categorical, vec![0.0, 1.0, 0.0]),
            ],
        )
        .unwrap();
        let data = Dataset::new(vec![1.0, 2.0, 3.0], aux, 1.0).unwrap();
        let x = data.pooled();
        assert_eq!(x.dim(), 3);
        assert_eq!(x.row(1), &[2.0, 11.0, 1.0]);
        assert_eq!(x.continuous_columns(), vec![0, 1]);
        assert_eq!(x.categorical_columns(), vec![2]);
    }

    #[test]
    fn rejects_bad_inputs() {
        assert!(Dataset::univariate(vec![1.0], 1.0).is_err());
        assert!(Dataset::univariate(vec![1.0, 2.0], 0.0).is_err());
        assert!(Dataset::univariate(vec![1.0, f64::NAN], 1.0).is_err());
        let aux = AuxData::empty(3);
        assert!(Dataset::new(vec![1.0, 2.0], aux, 1.0).is_err());
        assert!(DataMatrix::new(2, vec![ColumnKind::Categorical], vec![0.0, 1.0]).is_err());
    }

    #[test]
    fn row_means_average_columns() {
        let aux = AuxData::continuous(2, vec![vec![1.0, 2.0], vec![3.0, 6.0]]).unwrap();
        assert_eq!(aux.row_means().unwrap().column(0), vec![2.0, 4.0]);
    }
}
