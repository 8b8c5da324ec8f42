use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::matrix::Matrix;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Train,
    Test,
    All,
}

impl std::fmt::Display for Split {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Split::Train => "train",
            Split::Test => "test",
            Split::All => "all",
        })
    }
}

/// N input rows with N label rows and a train/test partition.
#[derive(Clone, Debug, PartialEq)]
pub struct Dataset {
    inputs: Matrix,
    labels: Matrix,
    train: Vec<usize>,
    test: Vec<usize>,
}

impl Dataset {
    /// Checks N ≥ 1, matching row counts, finite entries, and that the two
    /// index sets are disjoint and cover every row.
    pub fn new(inputs: Matrix, labels: Matrix, train: Vec<usize>, test: Vec<usize>) -> Result<Self> {
        let n = inputs.rows();
        if n == 0 {
            return Err(Error::InvalidInput("dataset has no rows".into()));
        }
        if labels.rows() != n {
            return Err(Error::mismatch("label rows", n, labels.rows()));
        }
        for (name, m) in [("inputs", &inputs), ("labels", &labels)] {
            if let Some(i) = m.as_slice().iter().position(|v| !v.is_finite()) {
                return Err(Error::InvalidInput(format!(
                    "non-finite {name} entry in row {}",
                    i / m.cols().max(1) + 1
                )));
            }
        }
        let mut seen = vec![false; n];
        for &i in train.iter().chain(&test) {
            if i >= n || seen[i] {
                return Err(Error::InvalidInput(format!("split index {i} is out of range or repeated")));
            }
            seen[i] = true;
        }
        if seen.iter().any(|s| !s) {
            return Err(Error::InvalidInput("train and test splits do not cover every row".into()));
        }
        Ok(Self {
            inputs,
            labels,
            train,
            test,
        })
    }

    /// Contiguous split: the first `round(train_fraction * N)` rows train.
    pub fn with_fraction(inputs: Matrix, labels: Matrix, train_fraction: f64) -> Result<Self> {
        let n = inputs.rows();
        let cut = ((n as f64) * train_fraction).round().clamp(0.0, n as f64) as usize;
        Self::new(inputs, labels, (0..cut).collect(), (cut..n).collect())
    }

    pub fn inputs(&self) -> &Matrix {
        &self.inputs
    }

    pub fn labels(&self) -> &Matrix {
        &self.labels
    }

    pub fn len(&self) -> usize {
        self.inputs.rows()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn feature_count(&self) -> usize {
        self.inputs.cols()
    }

    pub fn target_count(&self) -> usize {
        self.labels.cols()
    }

    pub fn indices(&self, split: Split) -> Vec<usize> {
        match split {
            Split::Train => self.train.clone(),
            Split::Test => self.test.clone(),
            Split::All => (0..self.len()).collect(),
        }
    }

    pub fn train_indices(&self) -> &[usize] {
        &self.train
    }

    pub fn test_indices(&self) -> &[usize] {
        &self.test
    }

    /// Inputs and labels restricted to a split.
    pub fn subset(&self, split: Split) -> (Matrix, Matrix) {
        match split {
            Split::All => (self.inputs.clone(), self.labels.clone()),
            _ => {
                let idx = self.indices(split);
                (self.inputs.select_rows(&idx), self.labels.select_rows(&idx))
            }
        }
    }

    /// Which split each row belongs to.
    pub fn row_split(&self) -> Vec<Split> {
        let mut out = vec![Split::Train; self.len()];
        for &i in &self.test {
            out[i] = Split::Test;
        }
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn split_must_partition_rows() {
        let x = Matrix::zeros(3, 1);
        let y = Matrix::zeros(3, 1);
        assert!(Dataset::new(x.clone(), y.clone(), vec![0, 1], vec![2]).is_ok());
        assert!(Dataset::new(x.clone(), y.clone(), vec![0, 1], vec![1, 2]).is_err());
        assert!(Dataset::new(x.clone(), y.clone(), vec![0], vec![2]).is_err());
        assert!(Dataset::new(Matrix::zeros(0, 1), Matrix::zeros(0, 1), vec![], vec![]).is_err());
    }

    #[test]
    fn non_finite_rejected_with_row() {
        let x = Matrix::from_rows(&[vec![1.0], vec![f64::NAN]]).unwrap();
        let y = Matrix::zeros(2, 1);
        let err = Dataset::new(x, y, vec![0, 1], vec![]).unwrap_err();
        assert!(err.to_string().contains("row 2"), "{err}");
    }
}
