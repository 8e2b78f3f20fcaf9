//! Hybrid similarity: `S(m, n) = S_dense(m, n) + lambda * S_sparse(m, n)`.
//!
//! `lambda` is the only trainable scalar outside the encoder; the tf-idf
//! channel itself is static, so sparse scores are constants with respect to
//! every parameter except `lambda`.

use serde::{Deserialize, Serialize};

use crate::dense::dense_score;
use crate::sparse::{sparse_score, SparseVector};
use crate::Result;

/// Trainable weight of the sparse channel. Initialized to 1.0.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct HybridWeight {
    pub lambda: f64,
}

impl Default for HybridWeight {
    fn default() -> Self {
        HybridWeight { lambda: 1.0 }
    }
}

/// Combined mention-synonym similarity from full representations.
pub fn score(
    m_sparse: &SparseVector,
    m_dense: &[f64],
    n_sparse: &SparseVector,
    n_dense: &[f64],
    w: HybridWeight,
) -> Result<f64> {
    Ok(dense_score(m_dense, n_dense)? + w.lambda * sparse_score(m_sparse, n_sparse))
}

/// Combined similarity from precomputed channel scores.
#[inline]
pub fn score_parts(sparse: f64, dense: f64, lambda: f64) -> f64 {
    dense + lambda * sparse
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::{ConceptId, Dictionary};
    use crate::sparse::{encode_sparse, fit_tfidf, TfIdfConfig};

    fn vectors() -> (SparseVector, SparseVector) {
        let dict = Dictionary::from_entries([
            ("prostate cancer".to_string(), ConceptId::new("A").unwrap()),
            ("breast cancer".to_string(), ConceptId::new("B").unwrap()),
        ])
        .unwrap();
        let model = fit_tfidf(&dict, &TfIdfConfig::default()).unwrap();
        (
            encode_sparse("prostate cancer", &model),
            encode_sparse("breast cancer", &model),
        )
    }

    #[test]
    fn lambda_zero_reduces_to_dense() {
        let (a, b) = vectors();
        let m = vec![0.3, -0.2, 0.5];
        let n = vec![-1.0, 0.25, 2.0];
        let got = score(&a, &m, &b, &n, HybridWeight { lambda: 0.0 }).unwrap();
        assert_eq!(got, dense_score(&m, &n).unwrap());
    }

    #[test]
    fn zero_dense_scales_sparse_by_lambda() {
        let zero = vec![0.0; 3];
        // construct vectors with sparse score exactly 0.5
        let a = SparseVector {
            indices: vec![0, 1],
            values: vec![0.5, 0.5],
        };
        let b = SparseVector {
            indices: vec![0, 2],
            values: vec![1.0, 1.0],
        };
        assert_eq!(sparse_score(&a, &b), 0.5);
        let got = score(&a, &zero, &b, &zero, HybridWeight { lambda: 2.0 }).unwrap();
        assert!((got - 1.0).abs() < 1e-15);
    }

    #[test]
    fn derivative_wrt_lambda_is_sparse_score() {
        let (a, b) = vectors();
        let m = vec![0.1, 0.9, -0.4];
        let n = vec![0.7, -0.3, 0.2];
        let s = sparse_score(&a, &b);
        let eps = 1e-6;
        let up = score(&a, &m, &b, &n, HybridWeight { lambda: 1.0 + eps }).unwrap();
        let down = score(&a, &m, &b, &n, HybridWeight { lambda: 1.0 - eps }).unwrap();
        let numeric = (up - down) / (2.0 * eps);
        assert!((numeric - s).abs() < 1e-8);
    }

    #[test]
    fn linear_in_lambda() {
        let (a, b) = vectors();
        let m = vec![0.3, -0.2, 0.5];
        let n = vec![-1.0, 0.25, 2.0];
        let at = |l: f64| score(&a, &m, &b, &n, HybridWeight { lambda: l }).unwrap();
        let lhs = at(0.7) + at(1.9) - at(0.0);
        let rhs = at(0.7 + 1.9);
        assert!((lhs - rhs).abs() < 1e-12);
    }
}
