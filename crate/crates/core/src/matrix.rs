//! Small dense `K × K` matrices indexed by label pairs.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::scalar::Scalar;

/// Row-major square matrix over labels.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(into = "Vec<Vec<f64>>", try_from = "Vec<Vec<f64>>")]
#[serde(bound(serialize = "S: Scalar", deserialize = "S: Scalar"))]
pub struct LabelMatrix<S> {
    k: usize,
    entries: Vec<S>,
}

impl<S: Scalar> LabelMatrix<S> {
    pub fn zeros(k: usize) -> Self {
        Self {
            k,
            entries: vec![S::zero(); k * k],
        }
    }

    pub fn from_rows(rows: &[Vec<S>]) -> Result<Self> {
        let k = rows.len();
        let mut entries = Vec::with_capacity(k * k);
        for (i, row) in rows.iter().enumerate() {
            if row.len() != k {
                return Err(Error::Shape(format!(
                    "row {i} has {} entries, expected {k}",
                    row.len()
                )));
            }
            entries.extend_from_slice(row);
        }
        Ok(Self { k, entries })
    }

    #[inline]
    pub fn size(&self) -> usize {
        self.k
    }

    #[inline]
    pub fn get(&self, a: usize, b: usize) -> S {
        self.entries[a * self.k + b]
    }

    #[inline]
    pub fn set(&mut self, a: usize, b: usize, v: S) {
        self.entries[a * self.k + b] = v;
    }

    #[inline]
    pub fn row(&self, a: usize) -> &[S] {
        &self.entries[a * self.k..(a + 1) * self.k]
    }

    pub fn rows(&self) -> Vec<Vec<S>> {
        self.entries.chunks(self.k.max(1)).map(|r| r.to_vec()).collect()
    }

    /// Copy padded with zeros (or truncated) to `k × k`.
    pub fn resized(&self, k: usize) -> Self {
        let mut out = Self::zeros(k);
        for a in 0..k.min(self.k) {
            for b in 0..k.min(self.k) {
                out.set(a, b, self.get(a, b));
            }
        }
        out
    }

    pub fn is_symmetric(&self) -> bool {
        (0..self.k).all(|a| (0..a).all(|b| self.get(a, b) == self.get(b, a)))
    }

    pub fn cast<U: Scalar>(&self) -> LabelMatrix<U> {
        LabelMatrix {
            k: self.k,
            entries: self.entries.iter().map(|v| U::lit(v.as_f64())).collect(),
        }
    }

    pub fn max_abs_diff(&self, other: &Self) -> Option<S> {
        (self.k == other.k).then(|| {
            self.entries
                .iter()
                .zip(&other.entries)
                .fold(S::zero(), |m, (&a, &b)| m.max((a - b).abs()))
        })
    }
}

impl<S: Scalar> From<LabelMatrix<S>> for Vec<Vec<f64>> {
    fn from(m: LabelMatrix<S>) -> Self {
        m.rows()
            .into_iter()
            .map(|r| r.into_iter().map(Scalar::as_f64).collect())
            .collect()
    }
}

impl<S: Scalar> TryFrom<Vec<Vec<f64>>> for LabelMatrix<S> {
    type Error = Error;

    fn try_from(rows: Vec<Vec<f64>>) -> Result<Self> {
        let rows: Vec<Vec<S>> = rows
            .into_iter()
            .map(|r| r.into_iter().map(S::lit).collect())
            .collect();
        Self::from_rows(&rows)
    }
}

/// Label compatibility `μ`: zero diagonal, nonnegative entries.
#[derive(Debug, Clone, PartialEq)]
pub struct CompatibilityMatrix<S>(LabelMatrix<S>);

impl<S: Scalar> CompatibilityMatrix<S> {
    /// Uniform penalty 1 between any two differing labels.
    pub fn potts(k: usize) -> Self {
        let mut m = LabelMatrix::zeros(k);
        for a in 0..k {
            for b in 0..k {
                if a != b {
                    m.set(a, b, S::one());
                }
            }
        }
        Self(m)
    }

    pub fn new(m: LabelMatrix<S>) -> Result<Self> {
        for a in 0..m.size() {
            if m.get(a, a) != S::zero() {
                return Err(Error::Data(format!("compatibility diagonal [{a}][{a}] must be 0")));
            }
            for b in 0..m.size() {
                let v = m.get(a, b);
                if !v.is_finite() || v < S::zero() {
                    return Err(Error::Data(format!(
                        "compatibility entry [{a}][{b}] = {v} must be finite and >= 0"
                    )));
                }
            }
        }
        Ok(Self(m))
    }

    /// Potts when `rows` is `None`, otherwise the given matrix, which must be `k × k`.
    pub fn from_config(rows: Option<&Vec<Vec<f64>>>, k: usize) -> Result<Self> {
        match rows {
            None => Ok(Self::potts(k)),
            Some(rows) => {
                let m = LabelMatrix::<S>::try_from(rows.clone())?;
                if m.size() != k {
                    return Err(Error::Shape(format!(
                        "compatibility matrix is {0}x{0}, maps have {k} labels",
                        m.size()
                    )));
                }
                Self::new(m)
            }
        }
    }

    #[inline]
    pub fn get(&self, a: usize, b: usize) -> S {
        self.0.get(a, b)
    }

    #[inline]
    pub fn size(&self) -> usize {
        self.0.size()
    }

    pub fn matrix(&self) -> &LabelMatrix<S> {
        &self.0
    }

    /// Relabels rows and columns: entry `[perm[a]][perm[b]]` receives `[a][b]`.
    pub fn permuted(&self, perm: &[usize]) -> Self {
        let k = self.size();
        let mut m = LabelMatrix::zeros(k);
        for a in 0..k {
            for b in 0..k {
                m.set(perm[a], perm[b], self.get(a, b));
            }
        }
        Self(m)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn potts_is_valid_and_symmetric() {
        let m = CompatibilityMatrix::<f64>::potts(3);
        assert_eq!(m.get(0, 0), 0.0);
        assert_eq!(m.get(0, 2), 1.0);
        assert!(m.matrix().is_symmetric());
    }

    #[test]
    fn rejects_nonzero_diagonal() {
        let m = LabelMatrix::from_rows(&[vec![1.0, 0.0], vec![0.0, 0.0]]).unwrap();
        assert!(CompatibilityMatrix::new(m).is_err());
    }

    #[test]
    fn json_form_is_nested_rows() {
        let m = LabelMatrix::from_rows(&[vec![0.0, 0.5], vec![0.25, 0.0]]).unwrap();
        let s = serde_json::to_string(&m).unwrap();
        assert_eq!(s, "[[0.0,0.5],[0.25,0.0]]");
        let back: LabelMatrix<f64> = serde_json::from_str(&s).unwrap();
        assert_eq!(back, m);
    }
}
