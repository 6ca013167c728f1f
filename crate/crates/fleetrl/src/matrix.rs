//! Minimal dense row-major matrix used for demand, transition, and
//! adjacency data. Serializes as nested row vectors.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "Vec<Vec<f64>>", into = "Vec<Vec<f64>>")]
pub struct Mat {
    n_rows: usize,
    n_cols: usize,
    data: Vec<f64>,
}

impl Mat {
    pub fn zeros(n_rows: usize, n_cols: usize) -> Self {
        Mat {
            n_rows,
            n_cols,
            data: vec![0.0; n_rows * n_cols],
        }
    }

    pub fn filled(n_rows: usize, n_cols: usize, value: f64) -> Self {
        Mat {
            n_rows,
            n_cols,
            data: vec![value; n_rows * n_cols],
        }
    }

    pub fn identity(n: usize) -> Self {
        let mut m = Mat::zeros(n, n);
        for i in 0..n {
            m.set(i, i, 1.0);
        }
        m
    }

    pub fn from_rows(rows: Vec<Vec<f64>>) -> Result<Self> {
        let n_rows = rows.len();
        let n_cols = rows.first().map_or(0, Vec::len);
        if rows.iter().any(|r| r.len() != n_cols) {
            return Err(Error::Shape("ragged rows in matrix".into()));
        }
        Ok(Mat {
            n_rows,
            n_cols,
            data: rows.into_iter().flatten().collect(),
        })
    }

    pub fn n_rows(&self) -> usize {
        self.n_rows
    }

    pub fn n_cols(&self) -> usize {
        self.n_cols
    }

    #[inline]
    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.data[i * self.n_cols + j]
    }

    #[inline]
    pub fn set(&mut self, i: usize, j: usize, v: f64) {
        self.data[i * self.n_cols + j] = v;
    }

    #[inline]
    pub fn add(&mut self, i: usize, j: usize, v: f64) {
        self.data[i * self.n_cols + j] += v;
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.data[i * self.n_cols..(i + 1) * self.n_cols]
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn scale(&self, k: f64) -> Mat {
        Mat {
            n_rows: self.n_rows,
            n_cols: self.n_cols,
            data: self.data.iter().map(|v| v * k).collect(),
        }
    }

    pub fn same_shape(&self, other: &Mat) -> bool {
        self.n_rows == other.n_rows && self.n_cols == other.n_cols
    }

    /// Largest absolute elementwise difference.
    pub fn max_abs_diff(&self, other: &Mat) -> Result<f64> {
        if !self.same_shape(other) {
            return Err(Error::Shape(format!(
                "{}x{} vs {}x{}",
                self.n_rows, self.n_cols, other.n_rows, other.n_cols
            )));
        }
        Ok(self
            .data
            .iter()
            .zip(&other.data)
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max))
    }
}

impl TryFrom<Vec<Vec<f64>>> for Mat {
    type Error = Error;
    fn try_from(rows: Vec<Vec<f64>>) -> Result<Self> {
        Mat::from_rows(rows)
    }
}

impl From<Mat> for Vec<Vec<f64>> {
    fn from(m: Mat) -> Self {
        (0..m.n_rows).map(|i| m.row(i).to_vec()).collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn indexing_and_diff() {
        let mut a = Mat::zeros(2, 3);
        a.set(1, 2, 4.0);
        assert_eq!(a.get(1, 2), 4.0);
        assert_eq!(a.row(0), &[0.0, 0.0, 0.0]);
        let b = Mat::zeros(2, 3);
        assert_eq!(a.max_abs_diff(&b).unwrap(), 4.0);
        assert!(a.max_abs_diff(&Mat::zeros(3, 2)).is_err());
    }

    #[test]
    fn serde_nested_rows() {
        let m = Mat::from_rows(vec![vec![1.0, 2.0], vec![3.0, 4.0]]).unwrap();
        let text = serde_json::to_string(&m).unwrap();
        assert_eq!(text, "[[1.0,2.0],[3.0,4.0]]");
        let back: Mat = serde_json::from_str(&text).unwrap();
        assert_eq!(back, m);
    }
}
