//! Shared domain types: dense matrices, the class codebook, bimodal samples
//! and datasets, and argmax classification.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::scalar::{dot, Scalar};

/// Dense row-major matrix.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(bound = "T: Scalar", try_from = "MatrixRepr<T>")]
pub struct Matrix<T> {
    rows: usize,
    cols: usize,
    data: Vec<T>,
}

// Deserialisation goes through the shape check in `from_vec`.
#[derive(Deserialize)]
#[serde(bound = "T: Scalar")]
struct MatrixRepr<T> {
    rows: usize,
    cols: usize,
    data: Vec<T>,
}

impl<T: Scalar> TryFrom<MatrixRepr<T>> for Matrix<T> {
    type Error = Error;

    fn try_from(r: MatrixRepr<T>) -> Result<Self> {
        Matrix::from_vec(r.rows, r.cols, r.data)
    }
}

impl<T: Scalar> Matrix<T> {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        Matrix {
            rows,
            cols,
            data: vec![T::zero(); rows * cols],
        }
    }

    pub fn from_vec(rows: usize, cols: usize, data: Vec<T>) -> Result<Self> {
        if data.len() != rows * cols {
            return Err(Error::dim("matrix buffer", rows * cols, data.len()));
        }
        Ok(Matrix { rows, cols, data })
    }

    /// Builds a matrix from equally sized rows.
    pub fn from_rows<R: AsRef<[T]>>(rows: &[R]) -> Result<Self> {
        let cols = rows.first().map_or(0, |r| r.as_ref().len());
        let mut data = Vec::with_capacity(rows.len() * cols);
        for r in rows {
            let r = r.as_ref();
            if r.len() != cols {
                return Err(Error::dim("matrix row", cols, r.len()));
            }
            data.extend_from_slice(r);
        }
        Ok(Matrix {
            rows: rows.len(),
            cols,
            data,
        })
    }

    #[inline]
    pub fn rows(&self) -> usize {
        self.rows
    }

    #[inline]
    pub fn cols(&self) -> usize {
        self.cols
    }

    #[inline]
    pub fn row(&self, i: usize) -> &[T] {
        &self.data[i * self.cols..(i + 1) * self.cols]
    }

    #[inline]
    pub fn row_mut(&mut self, i: usize) -> &mut [T] {
        &mut self.data[i * self.cols..(i + 1) * self.cols]
    }

    #[inline]
    pub fn get(&self, i: usize, j: usize) -> T {
        self.data[i * self.cols + j]
    }

    #[inline]
    pub fn set(&mut self, i: usize, j: usize, v: T) {
        self.data[i * self.cols + j] = v;
    }

    pub fn as_slice(&self) -> &[T] {
        &self.data
    }

    pub fn as_mut_slice(&mut self) -> &mut [T] {
        &mut self.data
    }

    pub fn iter_rows(&self) -> impl Iterator<Item = &[T]> + '_ {
        (0..self.rows).map(move |i| self.row(i))
    }

    /// Copies the selected rows, in the given order, into a new matrix.
    pub fn select_rows(&self, idx: &[usize]) -> Self {
        let mut data = Vec::with_capacity(idx.len() * self.cols);
        for &i in idx {
            data.extend_from_slice(self.row(i));
        }
        Matrix {
            rows: idx.len(),
            cols: self.cols,
            data,
        }
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }
}

/// Unit-vector class codewords `y^k`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(bound = "T: Scalar")]
pub struct Codebook<T> {
    codewords: Vec<Vec<T>>,
}

impl<T: Scalar> Codebook<T> {
    pub fn new(num_classes: usize) -> Result<Self> {
        if num_classes < 2 {
            return Err(Error::Config(format!(
                "a codebook needs at least two classes, got {num_classes}"
            )));
        }
        let codewords = (0..num_classes)
            .map(|k| {
                let mut y = vec![T::zero(); num_classes];
                y[k] = T::one();
                y
            })
            .collect();
        Ok(Codebook { codewords })
    }

    #[inline]
    pub fn num_classes(&self) -> usize {
        self.codewords.len()
    }

    #[inline]
    pub fn codeword(&self, k: usize) -> &[T] {
        &self.codewords[k]
    }

    pub fn codewords(&self) -> &[Vec<T>] {
        &self.codewords
    }

    pub(crate) fn check_len(&self, context: &'static str, len: usize) -> Result<()> {
        if len != self.num_classes() {
            return Err(Error::dim(context, self.num_classes(), len));
        }
        Ok(())
    }
}

/// Predictor output `f(x)` in `R^M`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(bound = "T: Scalar")]
pub struct ScoreVector<T>(pub Vec<T>);

impl<T: Scalar> ScoreVector<T> {
    pub fn zeros(m: usize) -> Self {
        ScoreVector(vec![T::zero(); m])
    }

    pub fn as_slice(&self) -> &[T] {
        &self.0
    }
}

impl<T> From<Vec<T>> for ScoreVector<T> {
    fn from(v: Vec<T>) -> Self {
        ScoreVector(v)
    }
}

/// `argmax_k <y^k, f(x)>`, lowest index on ties.
pub fn classify<T: Scalar>(f_x: &[T], codebook: &Codebook<T>) -> Result<usize> {
    codebook.check_len("classify", f_x.len())?;
    let mut best = 0;
    let mut best_val = T::neg_infinity();
    for (k, y) in codebook.codewords().iter().enumerate() {
        let v = dot(y, f_x);
        if v > best_val {
            best = k;
            best_val = v;
        }
    }
    Ok(best)
}

/// Index of the largest entry; lowest index wins ties.
pub(crate) fn argmax<T: Scalar>(v: &[T]) -> usize {
    let mut best = 0;
    for (k, x) in v.iter().enumerate() {
        if *x > v[best] {
            best = k;
        }
    }
    best
}

/// One training example `((x_u, x_s), y)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(bound = "T: Scalar")]
pub struct BimodalSample<T> {
    pub x_u: Vec<T>,
    pub x_s: Vec<T>,
    pub label: usize,
}

/// Generator-side metadata. Not persisted by the dataset text format.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct DatasetMeta {
    /// Labels before noise injection.
    pub clean_labels: Option<Vec<usize>>,
    /// Source columns assigned to (structured, unstructured) by a tabular split.
    pub column_split: Option<(Vec<usize>, Vec<usize>)>,
    /// Shape kinds drawn into each raster (shape generator only).
    pub shape_kinds: Option<Vec<Vec<crate::datasets::ShapeKind>>>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Dataset<T> {
    pub samples: Vec<BimodalSample<T>>,
    pub num_classes: usize,
    pub dim_u: usize,
    pub dim_s: usize,
    pub seed: Option<u64>,
    pub meta: DatasetMeta,
}

impl<T: Scalar> Dataset<T> {
    /// Validates labels, dimensions and finiteness.
    pub fn new(
        samples: Vec<BimodalSample<T>>,
        num_classes: usize,
        dim_u: usize,
        dim_s: usize,
    ) -> Result<Self> {
        if num_classes < 2 {
            return Err(Error::Config(format!(
                "num_classes must be at least 2, got {num_classes}"
            )));
        }
        for s in &samples {
            if s.x_u.len() != dim_u {
                return Err(Error::dim("sample x_u", dim_u, s.x_u.len()));
            }
            if s.x_s.len() != dim_s {
                return Err(Error::dim("sample x_s", dim_s, s.x_s.len()));
            }
            if s.label >= num_classes {
                return Err(Error::Domain(format!(
                    "label {} out of range for {num_classes} classes",
                    s.label
                )));
            }
            if s.x_u.iter().chain(&s.x_s).any(|v| !v.is_finite()) {
                return Err(Error::Numeric("sample features must be finite".into()));
            }
        }
        Ok(Dataset {
            samples,
            num_classes,
            dim_u,
            dim_s,
            seed: None,
            meta: DatasetMeta::default(),
        })
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn labels(&self) -> Vec<usize> {
        self.samples.iter().map(|s| s.label).collect()
    }

    pub fn x_u(&self) -> Matrix<T> {
        let mut data = Vec::with_capacity(self.len() * self.dim_u);
        for s in &self.samples {
            data.extend_from_slice(&s.x_u);
        }
        Matrix::from_vec(self.len(), self.dim_u, data).expect("validated dims")
    }

    pub fn x_s(&self) -> Matrix<T> {
        let mut data = Vec::with_capacity(self.len() * self.dim_s);
        for s in &self.samples {
            data.extend_from_slice(&s.x_s);
        }
        Matrix::from_vec(self.len(), self.dim_s, data).expect("validated dims")
    }

    /// Checks that `other` can be scored by a model trained on `self`.
    pub fn check_compatible(&self, other: &Dataset<T>) -> Result<()> {
        if other.num_classes != self.num_classes {
            return Err(Error::dim("num_classes", self.num_classes, other.num_classes));
        }
        if other.dim_u != self.dim_u {
            return Err(Error::dim("dim_u", self.dim_u, other.dim_u));
        }
        if other.dim_s != self.dim_s {
            return Err(Error::dim("dim_s", self.dim_s, other.dim_s));
        }
        Ok(())
    }
}
