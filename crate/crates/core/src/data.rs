use ndarray::{Array2, ArrayView1};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// N × M matrix of non-negative counts with row and column labels.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CountMatrix {
    values: Array2<u64>,
    row_ids: Vec<String>,
    col_labels: Vec<String>,
    /// Header text of the id column, kept so files round-trip.
    id_label: String,
}

impl CountMatrix {
    pub fn new(values: Array2<u64>, row_ids: Vec<String>, col_labels: Vec<String>) -> Result<Self> {
        Self::with_id_label(values, row_ids, col_labels, "id".to_string())
    }

    pub fn with_id_label(
        values: Array2<u64>,
        row_ids: Vec<String>,
        col_labels: Vec<String>,
        id_label: String,
    ) -> Result<Self> {
        let (n, m) = values.dim();
        if n == 0 || m == 0 {
            return Err(Error::Shape(format!("count matrix must be non-empty, got {n}x{m}")));
        }
        if row_ids.len() != n || col_labels.len() != m {
            return Err(Error::Shape(format!(
                "{n}x{m} values with {} row ids and {} column labels",
                row_ids.len(),
                col_labels.len()
            )));
        }
        Ok(Self {
            values,
            row_ids,
            col_labels,
            id_label,
        })
    }

    /// Unlabelled matrix; rows are named `r1..rN` and columns `c1..cM`.
    pub fn from_values(values: Array2<u64>) -> Result<Self> {
        let (n, m) = values.dim();
        let rows = (1..=n).map(|i| format!("r{i}")).collect();
        let cols = (1..=m).map(|j| format!("c{j}")).collect();
        Self::new(values, rows, cols)
    }

    pub fn from_rows(rows: &[Vec<u64>]) -> Result<Self> {
        let n = rows.len();
        let m = rows.first().map_or(0, Vec::len);
        if rows.iter().any(|r| r.len() != m) {
            return Err(Error::Shape("ragged rows".into()));
        }
        let flat: Vec<u64> = rows.iter().flatten().copied().collect();
        let values = Array2::from_shape_vec((n, m), flat).map_err(|e| Error::Shape(e.to_string()))?;
        Self::from_values(values)
    }

    pub fn n_rows(&self) -> usize {
        self.values.nrows()
    }

    pub fn n_cols(&self) -> usize {
        self.values.ncols()
    }

    pub fn values(&self) -> &Array2<u64> {
        &self.values
    }

    pub fn get(&self, n: usize, m: usize) -> u64 {
        self.values[[n, m]]
    }

    pub fn row(&self, n: usize) -> ArrayView1<'_, u64> {
        self.values.row(n)
    }

    /// Column m as a contiguous vector.
    pub fn column(&self, m: usize) -> Vec<u64> {
        self.values.column(m).to_vec()
    }

    pub fn row_ids(&self) -> &[String] {
        &self.row_ids
    }

    pub fn col_labels(&self) -> &[String] {
        &self.col_labels
    }

    pub fn id_label(&self) -> &str {
        &self.id_label
    }

    /// Rows picked by index, labels preserved.
    pub fn select_rows(&self, rows: &[usize]) -> Result<Self> {
        let m = self.n_cols();
        let mut flat = Vec::with_capacity(rows.len() * m);
        for &r in rows {
            if r >= self.n_rows() {
                return Err(Error::Shape(format!("row {r} out of range")));
            }
            flat.extend(self.values.row(r).iter().copied());
        }
        let values = Array2::from_shape_vec((rows.len(), m), flat).map_err(|e| Error::Shape(e.to_string()))?;
        Self::with_id_label(
            values,
            rows.iter().map(|&r| self.row_ids[r].clone()).collect(),
            self.col_labels.clone(),
            self.id_label.clone(),
        )
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;

    #[test]
    fn rejects_empty_and_mislabelled() {
        assert!(CountMatrix::from_values(Array2::zeros((0, 3))).is_err());
        assert!(CountMatrix::new(array![[1, 2]], vec!["a".into()], vec!["x".into()]).is_err());
        assert!(CountMatrix::from_rows(&[vec![1, 2], vec![3]]).is_err());
    }

    #[test]
    fn select_rows_keeps_labels() {
        let x = CountMatrix::from_rows(&[vec![1, 2], vec![3, 4], vec![5, 6]]).unwrap();
        let sub = x.select_rows(&[2, 0]).unwrap();
        assert_eq!(sub.row_ids(), &["r3".to_string(), "r1".to_string()]);
        assert_eq!(sub.get(0, 1), 6);
        assert!(x.select_rows(&[3]).is_err());
    }
}
