//! Spam-probability discriminator.
//!
//! A logistic head on top of the attention sentence embedding, trained
//! jointly on binary cross-entropy and a supervised InfoNCE term that pulls
//! same-class sentence embeddings together:
//!
//!   L = L_CE + lambda_cl * L_CL
//!
//! The logistic head (rather than a tree model) keeps the whole objective
//! differentiable end to end, so contrastive gradients can reach the
//! embedding table when `train_table` is on.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::autodiff::{Graph, Var};
use crate::corpus::LabeledSample;
use crate::embeddings::{EmbeddingTable, PAD_IDX, UNK_IDX};
use crate::encoder::{self, MAX_SEQ_LEN};
use crate::error::{Error, Result};
use crate::optim::Adam;
use crate::tensor::{norm, Matrix};

/// Probability clipping inside the cross-entropy.
pub const CE_EPS: f64 = 1e-7;

/// Discriminator hyperparameters.
#[derive(Debug, Clone)]
pub struct DiscriminatorConfig {
    pub lambda_cl: f64,
    pub tau: f64,
    pub learning_rate: f64,
    pub train_table: bool,
    pub threshold: f64,
}

impl Default for DiscriminatorConfig {
    fn default() -> Self {
        DiscriminatorConfig {
            lambda_cl: 0.1,
            tau: 0.07,
            learning_rate: 1e-3,
            train_table: true,
            threshold: 0.5,
        }
    }
}

/// Embedding table plus logistic head. Immutable between training steps;
/// `predict` is safe for concurrent callers.
#[derive(Debug, Clone)]
pub struct DiscriminatorModel {
    pub table: EmbeddingTable,
    head_w: Matrix,
    head_b: Matrix,
    pub lambda_cl: f64,
    pub tau: f64,
    pub train_table: bool,
    pub threshold: f64,
}

impl DiscriminatorModel {
    pub fn new(table: EmbeddingTable, cfg: &DiscriminatorConfig, seed: u64) -> Result<Self> {
        if cfg.tau <= 0.0 {
            return Err(Error::OutOfRange { what: "tau", value: cfg.tau });
        }
        if cfg.lambda_cl < 0.0 {
            return Err(Error::OutOfRange { what: "lambda_cl", value: cfg.lambda_cl });
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0xD15C);
        let scale = 1.0 / (table.dim as f64).sqrt();
        let head_w = Matrix::uniform(table.dim, 1, scale, &mut rng);
        Ok(DiscriminatorModel {
            table,
            head_w,
            head_b: Matrix::zeros(1, 1),
            lambda_cl: cfg.lambda_cl,
            tau: cfg.tau,
            train_table: cfg.train_table,
            threshold: cfg.threshold,
        })
    }

    /// Construct from checkpoint parts.
    pub fn from_parts(
        table: EmbeddingTable,
        head_w: Matrix,
        head_b: Matrix,
        lambda_cl: f64,
        tau: f64,
        threshold: f64,
    ) -> Result<Self> {
        if head_w.rows() != table.dim || head_w.cols() != 1 {
            return Err(Error::Checkpoint("head weight shape mismatch".into()));
        }
        Ok(DiscriminatorModel {
            table,
            head_w,
            head_b,
            lambda_cl,
            tau,
            train_table: true,
            threshold,
        })
    }

    pub fn head_w(&self) -> &Matrix {
        &self.head_w
    }

    pub fn head_b(&self) -> f64 {
        self.head_b.item()
    }

    pub fn set_head(&mut self, w: Matrix, b: f64) {
        assert_eq!(w.rows(), self.table.dim);
        assert_eq!(w.cols(), 1);
        self.head_w = w;
        self.head_b = Matrix::scalar(b);
    }

    /// Spam probability for one sentence, strictly inside (0,1).
    pub fn predict(&self, text: &str) -> Result<f64> {
        let emb = encoder::encode(text, &self.table)?;
        let mut logit = self.head_b.item();
        for (v, w) in emb.vector.iter().zip(self.head_w.data()) {
            logit += v * w;
        }
        Ok(sigmoid(logit).clamp(1e-12, 1.0 - 1e-12))
    }

    pub fn predict_batch(&self, texts: &[&str]) -> Result<Vec<f64>> {
        texts.iter().map(|t| self.predict(t)).collect()
    }

    /// Hard label under the decision threshold (`p >= threshold` is spam).
    pub fn classify(&self, text: &str) -> Result<u8> {
        Ok(u8::from(self.predict(text)? >= self.threshold))
    }

    /// Joint loss on a batch, computed on the same graph the training step
    /// uses.
    pub fn total_loss(&self, batch: &[LabeledSample]) -> Result<f64> {
        let (graph, parts) = self.build_loss_graph(batch)?;
        Ok(graph.value(parts.total).item())
    }

    /// One Adam step on the joint loss. Returns the pre-step loss.
    pub fn train_step(&mut self, batch: &[LabeledSample], opt: &mut Adam) -> Result<f64> {
        let (mut graph, parts) = self.build_loss_graph(batch)?;
        let loss = graph.value(parts.total).item();
        if !loss.is_finite() {
            return Err(Error::NonFinite("discriminator loss".into()));
        }
        graph.backward(parts.total);
        let gw = graph.grad(parts.w);
        let gb = graph.grad(parts.b);
        if self.train_table {
            let mut gt = graph.grad(parts.table);
            // Special rows stay fixed: padding never occurs in batches and
            // the unknown row is pinned at zero by construction.
            for idx in [PAD_IDX, UNK_IDX] {
                for c in 0..gt.cols() {
                    gt.set(idx, c, 0.0);
                }
            }
            opt.step(
                &mut [&mut self.head_w, &mut self.head_b, self.table.aggregated_mut()],
                &[gw, gb, gt],
            )?;
        } else {
            opt.step(&mut [&mut self.head_w, &mut self.head_b], &[gw, gb])?;
        }
        Ok(loss)
    }

    /// Adam state matching this model's trainable parameters.
    pub fn optimizer(&self, lr: f64) -> Adam {
        let mut shapes = vec![(self.head_w.rows(), self.head_w.cols()), (1, 1)];
        if self.train_table {
            shapes.push((self.table.aggregated().rows(), self.table.aggregated().cols()));
        }
        Adam::new(lr, &shapes)
    }

    /// Bit-level checksum over all parameters, for isolation tests.
    pub fn params_checksum(&self) -> u64 {
        let mut h = 0xcbf29ce484222325u64;
        let mut mix = |v: f64| {
            h ^= v.to_bits();
            h = h.wrapping_mul(0x100000001b3);
        };
        self.head_w.data().iter().copied().for_each(&mut mix);
        self.head_b.data().iter().copied().for_each(&mut mix);
        self.table.aggregated().data().iter().copied().for_each(&mut mix);
        h
    }

    fn build_loss_graph(&self, batch: &[LabeledSample]) -> Result<(Graph, LossParts)> {
        if batch.len() < 2 {
            return Err(Error::OutOfRange { what: "batch size", value: batch.len() as f64 });
        }
        let mut g = Graph::new();
        let table_var = g.leaf(self.table.aggregated().clone());
        let mut zs = Vec::with_capacity(batch.len());
        for sample in batch {
            let mut ids = self.table.encode_ids(&sample.text);
            if ids.is_empty() {
                return Err(Error::EmptySentence);
            }
            ids.truncate(MAX_SEQ_LEN);
            zs.push(encoder::encode_graph(&mut g, table_var, &ids));
        }
        let z = g.concat_rows(&zs);

        // Cross-entropy on the logistic head.
        let w = g.leaf(self.head_w.clone());
        let b = g.leaf(self.head_b.clone());
        let raw_logits = g.matmul(z, w);
        let n = batch.len();
        let ones = g.leaf(Matrix::from_vec(n, 1, vec![1.0; n]));
        let b_bcast = g.matmul(ones, b);
        let logits = g.add(raw_logits, b_bcast);
        let probs = g.sigmoid(logits);
        let clipped = g.clamp(probs, CE_EPS, 1.0 - CE_EPS);
        let labels: Vec<f64> = batch.iter().map(|s| s.label as f64).collect();
        let y = g.leaf(Matrix::from_vec(n, 1, labels.clone()));
        let one_minus_y =
            g.leaf(Matrix::from_vec(n, 1, labels.iter().map(|l| 1.0 - l).collect()));
        let ln_p = g.ln(clipped);
        let neg_p = g.scale(clipped, -1.0);
        let one_minus_p = g.add_scalar(neg_p, 1.0);
        let ln_q = g.ln(one_minus_p);
        let pos_term = g.mul(y, ln_p);
        let neg_term = g.mul(one_minus_y, ln_q);
        let sum_terms = g.add(pos_term, neg_term);
        let ce_mean = g.mean_all(sum_terms);
        let ce = g.scale(ce_mean, -1.0);

        // Supervised InfoNCE over the batch embeddings.
        let labels_u8: Vec<u8> = batch.iter().map(|s| s.label).collect();
        let total = if self.lambda_cl > 0.0 {
            match info_nce_graph(&mut g, z, &labels_u8, self.tau)? {
                Some(cl) => {
                    let scaled = g.scale(cl, self.lambda_cl);
                    g.add(ce, scaled)
                }
                // No valid anchors: contrastive term contributes zero.
                None => ce,
            }
        } else {
            ce
        };

        Ok((g, LossParts { total, w, b, table: table_var }))
    }
}

struct LossParts {
    total: Var,
    w: Var,
    b: Var,
    table: Var,
}

fn sigmoid(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}

/// Mean binary cross-entropy with probability clipping.
pub fn ce_loss(probs: &[f64], labels: &[u8]) -> Result<f64> {
    if probs.len() != labels.len() {
        return Err(Error::LengthMismatch { left: probs.len(), right: labels.len() });
    }
    if probs.is_empty() {
        return Err(Error::EmptyCorpus);
    }
    let mut total = 0.0;
    for (&p, &y) in probs.iter().zip(labels) {
        let p = p.clamp(CE_EPS, 1.0 - CE_EPS);
        total -= if y == 1 { p.ln() } else { (1.0 - p).ln() };
    }
    Ok(total / probs.len() as f64)
}

/// Supervised InfoNCE over row embeddings with cosine similarity.
///
/// Anchors without a same-class positive are excluded from the outer mean;
/// if none remain the batch cannot form a contrastive signal and an error is
/// returned (callers may treat it as a zero term).
pub fn info_nce(z: &Matrix, labels: &[u8], tau: f64) -> Result<f64> {
    let n = z.rows();
    if labels.len() != n {
        return Err(Error::LengthMismatch { left: n, right: labels.len() });
    }
    if n < 2 {
        return Err(Error::OutOfRange { what: "batch size", value: n as f64 });
    }
    if tau <= 0.0 {
        return Err(Error::OutOfRange { what: "tau", value: tau });
    }
    for i in 0..n {
        if norm(z.row(i)) == 0.0 {
            return Err(Error::ZeroVector(i));
        }
    }

    let mut cos = Matrix::zeros(n, n);
    for i in 0..n {
        for j in 0..n {
            cos.set(i, j, crate::tensor::cosine(z.row(i), z.row(j)));
        }
    }

    let mut outer = 0.0;
    let mut valid = 0usize;
    for i in 0..n {
        let positives: Vec<usize> = (0..n).filter(|&p| p != i && labels[p] == labels[i]).collect();
        if positives.is_empty() {
            continue;
        }
        valid += 1;
        let denom: f64 = (0..n).filter(|&a| a != i).map(|a| (cos.get(i, a) / tau).exp()).sum();
        let mut inner = 0.0;
        for &p in &positives {
            inner += ((cos.get(i, p) / tau).exp() / denom).ln();
        }
        outer += inner / positives.len() as f64;
    }
    if valid == 0 {
        return Err(Error::NoValidAnchors);
    }
    Ok(-outer / valid as f64)
}

/// Graph InfoNCE over an n x d embedding node. Returns `None` when no anchor
/// has a positive. The positive-pair weights and the diagonal mask are
/// constants, so gradients flow only through the embeddings.
pub fn info_nce_graph(g: &mut Graph, z: Var, labels: &[u8], tau: f64) -> Result<Option<Var>> {
    let n = g.value(z).rows();
    if labels.len() != n {
        return Err(Error::LengthMismatch { left: n, right: labels.len() });
    }
    if tau <= 0.0 {
        return Err(Error::OutOfRange { what: "tau", value: tau });
    }
    for i in 0..n {
        if norm(g.value(z).row(i)) == 0.0 {
            return Err(Error::ZeroVector(i));
        }
    }

    let mut pos_weight = Matrix::zeros(n, n);
    let mut valid = 0usize;
    for i in 0..n {
        let positives: Vec<usize> = (0..n).filter(|&p| p != i && labels[p] == labels[i]).collect();
        if positives.is_empty() {
            continue;
        }
        valid += 1;
        for &p in &positives {
            pos_weight.set(i, p, 1.0 / positives.len() as f64);
        }
    }
    if valid == 0 {
        return Ok(None);
    }
    let mut offdiag = Matrix::from_vec(n, n, vec![1.0; n * n]);
    for i in 0..n {
        offdiag.set(i, i, 0.0);
    }
    // Per-row total positive weight; rows without positives carry zero.
    let row_weight_vals: Vec<f64> = (0..n).map(|i| pos_weight.row(i).iter().sum()).collect();

    let sq = g.mul(z, z);
    let sums = g.sum_cols(sq);
    let norms = g.sqrt(sums);
    let inv = g.recip(norms);
    let zt = g.transpose(z);
    let dots = g.matmul(z, zt);
    let scaled_rows = g.mul_col_vec(dots, inv);
    let inv_row = g.transpose(inv);
    let cos = g.mul_row_vec(scaled_rows, inv_row);
    let logits = g.scale(cos, 1.0 / tau);

    let exp = g.exp(logits);
    let mask = g.leaf(offdiag);
    let masked = g.mul(exp, mask);
    let denom = g.sum_cols(masked);
    let ln_denom = g.ln(denom);

    let w = g.leaf(pos_weight);
    let weighted_logits = g.mul(w, logits);
    let term1 = g.sum_all(weighted_logits);
    let rw = g.leaf(Matrix::from_vec(n, 1, row_weight_vals));
    let weighted_denoms = g.mul(rw, ln_denom);
    let term2 = g.sum_all(weighted_denoms);
    let diff = g.sub(term2, term1);
    Ok(Some(g.scale(diff, 1.0 / valid as f64)))
}
