//! Multi-source input blocks.
//!
//! Every sample carries information from `M` sources; source `m` contributes
//! a fixed-width coordinate vector. An [`Inputs`] block stores one row-major
//! matrix per source, all sharing the same row count.

use crate::error::{IckError, Result};
use crate::linalg::Matrix;

/// One design block: `sources[m-1]` is the `n x D_m` matrix of source `m`.
#[derive(Clone, Debug, PartialEq)]
pub struct Inputs {
    sources: Vec<Matrix>,
}

impl Inputs {
    pub fn new(sources: Vec<Matrix>) -> Result<Self> {
        if sources.is_empty() {
            return Err(IckError::InvalidConfig("inputs need at least one source".into()));
        }
        let n = sources[0].rows();
        for (m, s) in sources.iter().enumerate() {
            if s.rows() != n {
                return Err(IckError::shape(
                    "inputs",
                    format!("{n} rows in every source"),
                    format!("source {} has {} rows", m + 1, s.rows()),
                ));
            }
            if !s.is_finite() {
                return Err(IckError::DegenerateInput {
                    context: "inputs",
                    detail: format!("source {} contains non-finite values", m + 1),
                });
            }
        }
        Ok(Inputs { sources })
    }

    /// Single-source block from a column of scalars.
    pub fn from_scalars(xs: &[f64]) -> Self {
        Inputs {
            sources: vec![Matrix::from_vec(xs.len(), 1, xs.to_vec())],
        }
    }

    pub fn n(&self) -> usize {
        self.sources[0].rows()
    }

    pub fn num_sources(&self) -> usize {
        self.sources.len()
    }

    /// Source block for 1-based index `m`.
    pub fn source(&self, m: usize) -> Result<&Matrix> {
        self.sources
            .get(m.checked_sub(1).ok_or(IckError::MissingSource { index: m })?)
            .ok_or(IckError::MissingSource { index: m })
    }

    pub fn sources(&self) -> &[Matrix] {
        &self.sources
    }

    /// Row `i` of every source, ordered by source index.
    pub fn point(&self, i: usize) -> Vec<&[f64]> {
        self.sources.iter().map(|s| s.row(i)).collect()
    }

    /// New block containing the given rows, in order.
    pub fn select(&self, rows: &[usize]) -> Inputs {
        let sources = self
            .sources
            .iter()
            .map(|s| {
                let mut m = Matrix::zeros(rows.len(), s.cols());
                for (out, &r) in rows.iter().enumerate() {
                    m.row_mut(out).copy_from_slice(s.row(r));
                }
                m
            })
            .collect();
        Inputs { sources }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn rejects_row_mismatch() {
        let a = Matrix::zeros(3, 1);
        let b = Matrix::zeros(2, 1);
        assert!(Inputs::new(vec![a, b]).is_err());
    }

    #[test]
    fn select_reorders_rows() {
        let x = Inputs::new(vec![Matrix::from_vec(3, 1, vec![1.0, 2.0, 3.0])]).unwrap();
        let sel = x.select(&[2, 0]);
        assert_eq!(sel.source(1).unwrap().data(), &[3.0, 1.0]);
    }

    #[test]
    fn missing_source_errors() {
        let x = Inputs::from_scalars(&[1.0]);
        assert!(matches!(x.source(2), Err(IckError::MissingSource { index: 2 })));
        assert!(matches!(x.source(0), Err(IckError::MissingSource { index: 0 })));
    }
}
