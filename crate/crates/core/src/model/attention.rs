use crate::error::{Error, Result};
use crate::numerics::{softmax_rows, Matrix};

#[derive(Clone, Debug, PartialEq)]
pub struct HeadOutput {
    /// Per-token head outputs, `n × head_dim`.
    pub output: Matrix,
    /// Attention probabilities, `n × n`; the zero matrix for a masked head.
    pub probs: Matrix,
}

/// Scaled dot-product attention for one head.
///
/// `key_support` marks the key positions that may receive attention
/// (padding excluded); `None` means every position. A head with
/// `keep == false` has its attention matrix replaced by zeros, so its output
/// is exactly zero whatever `q`, `k` and `v` hold.
pub fn attention_head(
    q: &Matrix,
    k: &Matrix,
    v: &Matrix,
    keep: bool,
    key_support: Option<&[bool]>,
) -> Result<HeadOutput> {
    let (n, dh) = q.shape();
    if k.shape() != (n, dh) || v.rows() != n {
        return Err(Error::Dimension {
            op: "attention_head",
            lhs: q.shape(),
            rhs: k.shape(),
        });
    }
    if !keep {
        return Ok(HeadOutput {
            output: Matrix::zeros(n, v.cols()),
            probs: Matrix::zeros(n, n),
        });
    }
    let mut scores = q.matmul_nt(k)?;
    scores.scale(1.0 / (dh as f64).sqrt());
    let support: Option<Vec<bool>> = key_support.map(|s| {
        (0..n).flat_map(|_| s.iter().copied()).collect()
    });
    let probs = softmax_rows(&scores, support.as_deref())?;
    let output = probs.matmul(v)?;
    Ok(HeadOutput { output, probs })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sample(n: usize, dh: usize, offset: f64) -> Matrix {
        let data = (0..n * dh).map(|i| ((i as f64) * 0.37 + offset).sin()).collect();
        Matrix::from_vec(n, dh, data).unwrap()
    }

    #[test]
    fn masked_head_is_zero() {
        let out = attention_head(&sample(5, 4, 0.1), &sample(5, 4, 0.2), &sample(5, 4, 0.3), false, None).unwrap();
        assert!(out.output.is_zero());
        assert!(out.probs.is_zero());
        assert_eq!(out.output.shape(), (5, 4));
    }

    #[test]
    fn single_token_returns_value_row() {
        let v = Matrix::from_rows(&[&[0.5, -1.5, 2.0]]);
        let out = attention_head(&sample(1, 3, 0.0), &sample(1, 3, 1.0), &v, true, None).unwrap();
        assert_eq!(out.probs.get(0, 0), 1.0);
        assert_eq!(out.output, v);
    }

    #[test]
    fn uniform_queries_and_keys_attend_uniformly_over_unpadded() {
        let q = Matrix::filled(4, 2, 0.3);
        let k = Matrix::filled(4, 2, -0.7);
        let v = sample(4, 2, 0.5);
        let out = attention_head(&q, &k, &v, true, Some(&[true, true, true, false])).unwrap();
        for r in 0..4 {
            for c in 0..3 {
                assert!((out.probs.get(r, c) - 1.0 / 3.0).abs() < 1e-15);
            }
            assert_eq!(out.probs.get(r, 3), 0.0);
        }
    }

    #[test]
    fn rows_sum_to_one() {
        let out = attention_head(&sample(7, 3, 0.1), &sample(7, 3, 0.9), &sample(7, 3, 0.4), true, None).unwrap();
        for r in 0..7 {
            let s: f64 = out.probs.row(r).iter().sum();
            assert!((s - 1.0).abs() < 1e-12);
        }
    }
}
