//! Sentence embedding via single-head scaled dot-product self-attention.
//!
//! The attention here is parameter-free: scores come from the character
//! embeddings themselves, `logits = X X^T / sqrt(d)`, softmaxed per row;
//! context rows are the weighted sums and the sentence embedding is their
//! mean. No positional encoding exists, so the result is invariant under
//! permutation of the input characters.

use crate::autodiff::{Graph, Var};
use crate::embeddings::EmbeddingTable;
use crate::error::{Error, Result};
use crate::tensor::Matrix;

/// Longest character sequence the encoder accepts; longer inputs truncate.
pub const MAX_SEQ_LEN: usize = 512;

/// Sentence embedding plus the number of characters that produced it.
#[derive(Debug, Clone, PartialEq)]
pub struct SentenceEmbedding {
    pub vector: Vec<f64>,
    pub len: usize,
}

/// Attention weights and context rows for an n x d input.
/// Returns (A, M) with A row-stochastic and M = A * X.
pub fn attend(x: &Matrix) -> Result<(Matrix, Matrix)> {
    if x.rows() == 0 || x.cols() == 0 {
        return Err(Error::EmptySentence);
    }
    if !x.is_finite() {
        return Err(Error::NonFinite("attention input".into()));
    }
    let scale = 1.0 / (x.cols() as f64).sqrt();
    let logits = x.matmul(&x.transpose()).map(|v| v * scale);
    let weights = logits.softmax_rows();
    let context = weights.matmul(x);
    Ok((weights, context))
}

/// Graph version of [`attend`] for training paths; same computation,
/// differentiable with respect to `x`.
pub fn attend_graph(g: &mut Graph, x: Var) -> Var {
    let d = g.value(x).cols() as f64;
    let xt = g.transpose(x);
    let prod = g.matmul(x, xt);
    let logits = g.scale(prod, 1.0 / d.sqrt());
    let weights = g.softmax_rows(logits);
    g.matmul(weights, x)
}

/// Sentence embedding: mean of the attention context rows over the looked-up
/// aggregated character embeddings.
pub fn encode(text: &str, table: &EmbeddingTable) -> Result<SentenceEmbedding> {
    let mut ids = table.encode_ids(text);
    if ids.is_empty() {
        return Err(Error::EmptySentence);
    }
    if ids.len() > MAX_SEQ_LEN {
        log::warn!("sentence of {} characters truncated to {}", ids.len(), MAX_SEQ_LEN);
        ids.truncate(MAX_SEQ_LEN);
    }
    let mut x = Matrix::zeros(ids.len(), table.dim);
    for (i, &id) in ids.iter().enumerate() {
        x.row_mut(i).copy_from_slice(table.aggregated().row(id));
    }
    let (_, context) = attend(&x)?;
    let mean = context.mean_of_rows();
    Ok(SentenceEmbedding { vector: mean.row(0).to_vec(), len: ids.len() })
}

/// Graph version of [`encode`] given token ids: gathers rows from the table
/// variable so gradients can flow back into the embedding matrix.
/// Returns the 1 x d sentence embedding node.
pub fn encode_graph(g: &mut Graph, table_var: Var, ids: &[usize]) -> Var {
    let x = g.gather_rows(table_var, ids);
    let context = attend_graph(g, x);
    g.mean_rows(context)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::autodiff::Graph;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn single_row_attention_is_identity() {
        let x = Matrix::from_rows(&[vec![3.0, -1.0]]);
        let (a, m) = attend(&x).unwrap();
        assert!((a.get(0, 0) - 1.0).abs() < 1e-12);
        assert_eq!(m, x);
    }

    #[test]
    fn identical_rows_give_uniform_weights() {
        let x = Matrix::from_rows(&[vec![1.0, 2.0], vec![1.0, 2.0]]);
        let (a, m) = attend(&x).unwrap();
        for r in 0..2 {
            for c in 0..2 {
                assert!((a.get(r, c) - 0.5).abs() < 1e-12);
            }
            assert_eq!(m.row(r), x.row(0));
        }
    }

    #[test]
    fn hand_computed_two_by_two() {
        // X = [[1,0],[0,2]], d=2: logits = X X^T / sqrt(2)
        //   = [[1/s, 0], [0, 4/s]] with s = sqrt(2).
        let x = Matrix::from_rows(&[vec![1.0, 0.0], vec![0.0, 2.0]]);
        let (a, m) = attend(&x).unwrap();
        let s = 2.0f64.sqrt();
        let row0 = [(1.0 / s).exp(), 0.0f64.exp()];
        let row1 = [0.0f64.exp(), (4.0 / s).exp()];
        let exp_a = Matrix::from_rows(&[
            vec![row0[0] / (row0[0] + row0[1]), row0[1] / (row0[0] + row0[1])],
            vec![row1[0] / (row1[0] + row1[1]), row1[1] / (row1[0] + row1[1])],
        ]);
        for r in 0..2 {
            for c in 0..2 {
                assert!((a.get(r, c) - exp_a.get(r, c)).abs() < 1e-12);
            }
        }
        let exp_m = exp_a.matmul(&x);
        for r in 0..2 {
            for c in 0..2 {
                assert!((m.get(r, c) - exp_m.get(r, c)).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn rows_are_stochastic() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let x = Matrix::uniform(6, 4, 2.0, &mut rng);
        let (a, _) = attend(&x).unwrap();
        for r in 0..a.rows() {
            let sum: f64 = a.row(r).iter().sum();
            assert!((sum - 1.0).abs() < 1e-6);
            assert!(a.row(r).iter().all(|&v| v > 0.0 && v <= 1.0));
        }
    }

    #[test]
    fn non_finite_input_is_rejected() {
        let x = Matrix::from_rows(&[vec![f64::NAN, 1.0]]);
        assert!(matches!(attend(&x), Err(Error::NonFinite(_))));
    }

    #[test]
    fn permutation_equivariance_of_attend() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let x = Matrix::uniform(5, 3, 1.0, &mut rng);
        let perm = [3usize, 0, 4, 1, 2];
        let permuted =
            Matrix::from_rows(&perm.iter().map(|&i| x.row(i).to_vec()).collect::<Vec<_>>());
        let (_, m) = attend(&x).unwrap();
        let (_, mp) = attend(&permuted).unwrap();
        for (new_pos, &old_pos) in perm.iter().enumerate() {
            for c in 0..x.cols() {
                assert!((mp.get(new_pos, c) - m.get(old_pos, c)).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn graph_and_plain_paths_agree() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let x = Matrix::uniform(4, 8, 1.0, &mut rng);
        let (_, m) = attend(&x).unwrap();
        let mut g = Graph::new();
        let xv = g.leaf(x.clone());
        let mv = attend_graph(&mut g, xv);
        for r in 0..4 {
            for c in 0..8 {
                assert!((g.value(mv).get(r, c) - m.get(r, c)).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn gradient_of_squared_norm_matches_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(13);
        let x = Matrix::uniform(4, 8, 1.0, &mut rng);

        let scalar = |g: &mut Graph, m: &Matrix| {
            let xv = g.leaf(m.clone());
            let ctx = attend_graph(g, xv);
            let emb = g.mean_rows(ctx);
            let sq = g.mul(emb, emb);
            (xv, g.sum_all(sq))
        };

        let mut g = Graph::new();
        let (xv, out) = scalar(&mut g, &x);
        g.backward(out);
        let grad = g.grad(xv);

        for r in 0..x.rows() {
            for c in 0..x.cols() {
                let h = 1e-6;
                let mut xp = x.clone();
                xp.set(r, c, x.get(r, c) + h);
                let mut xm = x.clone();
                xm.set(r, c, x.get(r, c) - h);
                let mut gp = Graph::new();
                let (_, op) = scalar(&mut gp, &xp);
                let mut gm = Graph::new();
                let (_, om) = scalar(&mut gm, &xm);
                let fd = (gp.value(op).item() - gm.value(om).item()) / (2.0 * h);
                let ad = grad.get(r, c);
                let denom = fd.abs().max(ad.abs()).max(1e-8);
                assert!((fd - ad).abs() / denom < 1e-4, "({r},{c}): fd={fd} ad={ad}");
            }
        }
    }
}
