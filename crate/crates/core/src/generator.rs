//! Adversarial perturbation generator.
//!
//! For a spam sentence the generator decides per position whether to replace
//! the character (Bernoulli mask head) and what to replace it with
//! (Gumbel-Softmax over a candidate vocabulary, hard sample forward,
//! straight-through gradients). It trains against a frozen discriminator
//! with REINFORCE on reward `R = 1 - D(perturbed)` plus a similarity
//! penalty that keeps substitutions visually/phonetically plausible:
//!
//!   L_G = L_RL + lambda_sim * L_sim
//!
//! Only Chinese characters are ever masked or penalized; digits, Latin and
//! punctuation pass through untouched.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::autodiff::{Graph, Var};
use crate::charsim::{is_chinese_char, SimilarityNetwork};
use crate::discriminator::DiscriminatorModel;
use crate::embeddings::{EmbeddingTable, Tok, UNK_IDX};
use crate::encoder::MAX_SEQ_LEN;
use crate::error::{Error, Result};
use crate::optim::Adam;
use crate::tensor::Matrix;

const NEG_INF: f64 = -1e30;
const PROB_EPS: f64 = 1e-9;

/// Which characters a masked position may be replaced with.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum CandidateMode {
    /// Any Chinese character in the vocabulary (except the original).
    FullVocab,
    /// Only similarity-network neighbors of the original character.
    Neighbors,
}

/// Generator hyperparameters.
#[derive(Debug, Clone)]
pub struct GeneratorConfig {
    pub model_dim: usize,
    pub ff_dim: usize,
    pub layers: usize,
    pub heads: usize,
    pub lambda_sim: f64,
    pub temperature: f64,
    pub learning_rate: f64,
    pub candidates: CandidateMode,
}

impl Default for GeneratorConfig {
    fn default() -> Self {
        GeneratorConfig {
            model_dim: 64,
            ff_dim: 128,
            layers: 2,
            heads: 2,
            lambda_sim: 1.0,
            temperature: 1.0,
            learning_rate: 1e-3,
            candidates: CandidateMode::FullVocab,
        }
    }
}

/// Per-layer transformer parameters.
#[derive(Debug, Clone)]
struct LayerParams {
    wq: Vec<Matrix>,
    wk: Vec<Matrix>,
    wv: Vec<Matrix>,
    wo: Matrix,
    ln1_g: Matrix,
    ln1_b: Matrix,
    ff_w1: Matrix,
    ff_b1: Matrix,
    ff_w2: Matrix,
    ff_b2: Matrix,
    ln2_g: Matrix,
    ln2_b: Matrix,
}

/// One sampled perturbation with everything needed to audit and to
/// recompute its log-probability.
#[derive(Debug, Clone)]
pub struct PerturbationTrace {
    pub original: Vec<char>,
    pub perturbed: Vec<char>,
    /// 1 where the character was replaced.
    pub masks: Vec<u8>,
    /// Positions where the mask policy applied (Chinese, in-vocab).
    pub maskable: Vec<bool>,
    /// Effective replacement probability per position (0 outside the policy).
    pub mask_probs: Vec<f64>,
    /// Sampled vocabulary index per masked position.
    pub replacements: Vec<Option<usize>>,
    /// Policy probability of the sampled replacement per masked position.
    pub chosen_probs: Vec<Option<f64>>,
    /// Positions considered for the similarity penalty (the masked ones).
    pub considered: Vec<usize>,
    pub logprob: f64,
}

impl PerturbationTrace {
    pub fn perturbed_text(&self) -> String {
        self.perturbed.iter().collect()
    }

    pub fn original_text(&self) -> String {
        self.original.iter().collect()
    }

    pub fn n_replaced(&self) -> usize {
        self.masks.iter().filter(|&&m| m == 1).count()
    }

    /// Log-probability recomputed from the stored per-position
    /// distributions; must agree with `logprob`.
    pub fn recompute_logprob(&self) -> f64 {
        let mut lp = 0.0;
        for i in 0..self.masks.len() {
            if !self.maskable[i] {
                continue;
            }
            let p = self.mask_probs[i];
            lp += bernoulli_logprob(p, self.masks[i] == 1);
            if self.masks[i] == 1 {
                lp += self.chosen_probs[i].expect("masked position has a chosen prob").ln();
            }
        }
        lp
    }

    /// Mean similarity of the substitutions over the considered set, 1 when
    /// nothing was considered.
    pub fn mean_similarity(&self, net: &SimilarityNetwork) -> f64 {
        if self.considered.is_empty() {
            return 1.0;
        }
        let total: f64 = self
            .considered
            .iter()
            .map(|&i| net.similarity_or_zero(self.original[i], self.perturbed[i]))
            .sum();
        total / self.considered.len() as f64
    }

    /// Audit line: `original<TAB>perturbed<TAB>n_replaced<TAB>mean_sim`.
    pub fn audit_line(&self, net: &SimilarityNetwork) -> String {
        format!(
            "{}\t{}\t{}\t{:.4}",
            self.original_text(),
            self.perturbed_text(),
            self.n_replaced(),
            self.mean_similarity(net)
        )
    }
}

fn bernoulli_logprob(p: f64, took: bool) -> f64 {
    let q = if took { p } else { 1.0 - p };
    if q >= 1.0 {
        0.0
    } else {
        q.max(PROB_EPS).ln()
    }
}

/// Reward for a perturbed sequence: `1 - D(perturbed)`.
pub fn reward(d_prob: f64) -> Result<f64> {
    if !(0.0..=1.0).contains(&d_prob) || !d_prob.is_finite() {
        return Err(Error::OutOfRange { what: "discriminator probability", value: d_prob });
    }
    Ok(1.0 - d_prob)
}

/// REINFORCE loss `-mean(logprob * (R - baseline))`. With baseline 0 this is
/// exactly the negated expected log-probability-weighted reward.
pub fn rl_loss(traces: &[PerturbationTrace], rewards: &[f64], baseline: f64) -> Result<f64> {
    if traces.len() != rewards.len() {
        return Err(Error::LengthMismatch { left: traces.len(), right: rewards.len() });
    }
    if traces.is_empty() {
        return Err(Error::EmptyCorpus);
    }
    if rewards.iter().any(|r| !r.is_finite()) {
        return Err(Error::NonFinite("reward".into()));
    }
    let sum: f64 =
        traces.iter().zip(rewards).map(|(t, &r)| t.logprob * (r - baseline)).sum();
    Ok(-sum / traces.len() as f64)
}

/// Mean dissimilarity of the considered substitutions, 0 when none were
/// considered.
pub fn sim_loss(trace: &PerturbationTrace, net: &SimilarityNetwork) -> f64 {
    if trace.considered.is_empty() {
        return 0.0;
    }
    let total: f64 = trace
        .considered
        .iter()
        .map(|&i| 1.0 - net.similarity_or_zero(trace.original[i], trace.perturbed[i]))
        .sum();
    total / trace.considered.len() as f64
}

/// Weighted sum of the policy-gradient and similarity terms.
pub fn generator_loss(rl: f64, sim: f64, lambda_sim: f64) -> f64 {
    rl + lambda_sim * sim
}

/// Exponential-moving-average reward baseline (decay 0.9). The advantage is
/// computed against the value before the update, so the first batch reduces
/// to the plain estimator.
#[derive(Debug, Clone)]
pub struct RewardBaseline {
    pub value: f64,
    pub decay: f64,
}

impl Default for RewardBaseline {
    fn default() -> Self {
        RewardBaseline { value: 0.0, decay: 0.9 }
    }
}

impl RewardBaseline {
    pub fn update(&mut self, mean_reward: f64) {
        self.value = self.decay * self.value + (1.0 - self.decay) * mean_reward;
    }
}

/// Diagnostics from one generator step.
#[derive(Debug, Clone, Copy)]
pub struct GenDiagnostics {
    pub loss: f64,
    pub mean_reward: f64,
    pub mask_rate: f64,
    pub mean_sim: f64,
}

/// Everything fixed by one sampling pass, so the surrogate loss becomes a
/// deterministic function of the parameters (used for gradient checks too).
pub struct SampledBatch {
    samples: Vec<SampledActions>,
    pub advantages: Vec<f64>,
    lambda_sim: f64,
}

struct SampledActions {
    ids: Vec<usize>,
    maskable: Vec<bool>,
    masks: Vec<u8>,
    masked_rows: Vec<usize>,
    chosen_cols: Vec<usize>,
    gumbel: Matrix,
    cand_mask: Matrix,
    dissim: Matrix,
    forced: bool,
}

/// The perturbation policy model.
#[derive(Debug, Clone)]
pub struct GeneratorModel {
    vocab: Vec<Tok>,
    chinese_ids: Vec<usize>,
    net: SimilarityNetwork,
    pub cfg: GeneratorConfig,
    /// When set, every maskable position replaces with this probability
    /// instead of the head output (0 gives the identity generator).
    force_mask_prob: Option<f64>,
    token_emb: Matrix,
    layers: Vec<LayerParams>,
    mask_w: Matrix,
    mask_b: Matrix,
    repl_w: Matrix,
    repl_b: Matrix,
}

impl GeneratorModel {
    /// Build a fresh model sharing the discriminator's vocabulary.
    pub fn new(
        table: &EmbeddingTable,
        net: &SimilarityNetwork,
        cfg: GeneratorConfig,
        seed: u64,
    ) -> Result<Self> {
        if cfg.temperature <= 0.0 {
            return Err(Error::OutOfRange { what: "gumbel temperature", value: cfg.temperature });
        }
        if cfg.lambda_sim < 0.0 {
            return Err(Error::OutOfRange { what: "lambda_sim", value: cfg.lambda_sim });
        }
        if cfg.model_dim % cfg.heads != 0 {
            return Err(Error::Config("model_dim must be divisible by heads".into()));
        }
        let vocab = table.vocab().to_vec();
        let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x6E47);
        let model = Self::init_params(vocab, net.clone(), cfg, &mut rng);
        Ok(model)
    }

    fn init_params(
        vocab: Vec<Tok>,
        net: SimilarityNetwork,
        cfg: GeneratorConfig,
        rng: &mut ChaCha8Rng,
    ) -> Self {
        let v = vocab.len();
        let dm = cfg.model_dim;
        let dh = dm / cfg.heads;
        let u = |r: usize, c: usize, fan_in: usize, rng: &mut ChaCha8Rng| {
            Matrix::uniform(r, c, 1.0 / (fan_in as f64).sqrt(), rng)
        };
        let mut layers = Vec::with_capacity(cfg.layers);
        for _ in 0..cfg.layers {
            layers.push(LayerParams {
                wq: (0..cfg.heads).map(|_| u(dm, dh, dm, rng)).collect(),
                wk: (0..cfg.heads).map(|_| u(dm, dh, dm, rng)).collect(),
                wv: (0..cfg.heads).map(|_| u(dm, dh, dm, rng)).collect(),
                wo: u(dm, dm, dm, rng),
                ln1_g: Matrix::from_vec(1, dm, vec![1.0; dm]),
                ln1_b: Matrix::zeros(1, dm),
                ff_w1: u(dm, cfg.ff_dim, dm, rng),
                ff_b1: Matrix::zeros(1, cfg.ff_dim),
                ff_w2: u(cfg.ff_dim, dm, cfg.ff_dim, rng),
                ff_b2: Matrix::zeros(1, dm),
                ln2_g: Matrix::from_vec(1, dm, vec![1.0; dm]),
                ln2_b: Matrix::zeros(1, dm),
            });
        }
        let chinese_ids = vocab
            .iter()
            .enumerate()
            .filter_map(|(i, t)| match t {
                Tok::Ch(c) if is_chinese_char(*c) => Some(i),
                _ => None,
            })
            .collect();
        GeneratorModel {
            chinese_ids,
            net,
            force_mask_prob: None,
            token_emb: u(v, dm, dm, rng),
            mask_w: u(dm, 1, dm, rng),
            mask_b: Matrix::zeros(1, 1),
            repl_w: u(dm, v, dm, rng),
            repl_b: Matrix::zeros(1, v),
            vocab,
            layers,
            cfg,
        }
    }

    pub fn vocab(&self) -> &[Tok] {
        &self.vocab
    }

    pub fn net(&self) -> &SimilarityNetwork {
        &self.net
    }

    pub fn force_mask_prob(&self) -> Option<f64> {
        self.force_mask_prob
    }

    /// Override the mask policy with a fixed probability (None restores the
    /// learned head). 0 yields the identity generator.
    pub fn set_force_mask_prob(&mut self, p: Option<f64>) -> Result<()> {
        if let Some(p) = p {
            if !(0.0..=1.0).contains(&p) {
                return Err(Error::OutOfRange { what: "forced mask probability", value: p });
            }
        }
        self.force_mask_prob = p;
        Ok(())
    }

    pub fn set_temperature(&mut self, t: f64) -> Result<()> {
        if t <= 0.0 {
            return Err(Error::OutOfRange { what: "gumbel temperature", value: t });
        }
        self.cfg.temperature = t;
        Ok(())
    }

    /// Shift the mask head's bias so initial replacement probabilities
    /// start low or high (experiment hook).
    pub fn bias_mask_logit(&mut self, delta: f64) {
        self.mask_b.set(0, 0, self.mask_b.get(0, 0) + delta);
    }

    /// Raise the named replacement logit for every position by amount
    /// `boost` (test and experiment hook for forcing choices).
    pub fn bias_replacement_logit(&mut self, c: char, boost: f64) -> Result<()> {
        let idx = self
            .vocab
            .iter()
            .position(|t| matches!(t, Tok::Ch(x) if *x == c))
            .ok_or(Error::UnknownChar(c))?;
        self.repl_b.set(0, idx, self.repl_b.get(0, idx) + boost);
        Ok(())
    }

    fn params(&self) -> Vec<&Matrix> {
        let mut ps: Vec<&Matrix> = vec![&self.token_emb];
        for l in &self.layers {
            ps.extend(l.wq.iter());
            ps.extend(l.wk.iter());
            ps.extend(l.wv.iter());
            ps.extend([
                &l.wo, &l.ln1_g, &l.ln1_b, &l.ff_w1, &l.ff_b1, &l.ff_w2, &l.ff_b2, &l.ln2_g,
                &l.ln2_b,
            ]);
        }
        ps.extend([&self.mask_w, &self.mask_b, &self.repl_w, &self.repl_b]);
        ps
    }

    fn params_mut(&mut self) -> Vec<&mut Matrix> {
        let mut ps: Vec<&mut Matrix> = vec![&mut self.token_emb];
        for l in &mut self.layers {
            ps.extend(l.wq.iter_mut());
            ps.extend(l.wk.iter_mut());
            ps.extend(l.wv.iter_mut());
            ps.extend([
                &mut l.wo,
                &mut l.ln1_g,
                &mut l.ln1_b,
                &mut l.ff_w1,
                &mut l.ff_b1,
                &mut l.ff_w2,
                &mut l.ff_b2,
                &mut l.ln2_g,
                &mut l.ln2_b,
            ]);
        }
        ps.extend([&mut self.mask_w, &mut self.mask_b, &mut self.repl_w, &mut self.repl_b]);
        ps
    }

    /// Adam state matching this model's parameters.
    pub fn optimizer(&self, lr: f64) -> Adam {
        let shapes: Vec<(usize, usize)> =
            self.params().iter().map(|m| (m.rows(), m.cols())).collect();
        Adam::new(lr, &shapes)
    }

    /// Bit-level checksum over all parameters, for isolation tests.
    pub fn params_checksum(&self) -> u64 {
        let mut h = 0xcbf29ce484222325u64;
        for m in self.params() {
            for v in m.data() {
                h ^= v.to_bits();
                h = h.wrapping_mul(0x100000001b3);
            }
        }
        h
    }

    /// Checkpoint access: parameter list in fixed order with stable names.
    pub fn named_params(&self) -> Vec<(String, &Matrix)> {
        let mut out = vec![("token_emb".to_string(), &self.token_emb)];
        for (i, l) in self.layers.iter().enumerate() {
            for (h, m) in l.wq.iter().enumerate() {
                out.push((format!("layer{i}.wq{h}"), m));
            }
            for (h, m) in l.wk.iter().enumerate() {
                out.push((format!("layer{i}.wk{h}"), m));
            }
            for (h, m) in l.wv.iter().enumerate() {
                out.push((format!("layer{i}.wv{h}"), m));
            }
            out.push((format!("layer{i}.wo"), &l.wo));
            out.push((format!("layer{i}.ln1_g"), &l.ln1_g));
            out.push((format!("layer{i}.ln1_b"), &l.ln1_b));
            out.push((format!("layer{i}.ff_w1"), &l.ff_w1));
            out.push((format!("layer{i}.ff_b1"), &l.ff_b1));
            out.push((format!("layer{i}.ff_w2"), &l.ff_w2));
            out.push((format!("layer{i}.ff_b2"), &l.ff_b2));
            out.push((format!("layer{i}.ln2_g"), &l.ln2_g));
            out.push((format!("layer{i}.ln2_b"), &l.ln2_b));
        }
        out.push(("mask_w".to_string(), &self.mask_w));
        out.push(("mask_b".to_string(), &self.mask_b));
        out.push(("repl_w".to_string(), &self.repl_w));
        out.push(("repl_b".to_string(), &self.repl_b));
        out
    }

    /// Rebuild a model from checkpoint parts; parameter names and shapes
    /// must match a fresh model of the same configuration.
    pub fn from_parts(
        table_vocab: Vec<Tok>,
        net: SimilarityNetwork,
        cfg: GeneratorConfig,
        force_mask_prob: Option<f64>,
        params: &[(String, Matrix)],
    ) -> Result<Self> {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let mut model = Self::init_params(table_vocab, net, cfg, &mut rng);
        model.force_mask_prob = force_mask_prob;
        let expected: Vec<String> =
            model.named_params().iter().map(|(n, _)| n.clone()).collect();
        if expected.len() != params.len() {
            return Err(Error::Checkpoint(format!(
                "expected {} generator parameters, got {}",
                expected.len(),
                params.len()
            )));
        }
        for ((name, _), expected_name) in params.iter().zip(&expected) {
            if name != expected_name {
                return Err(Error::Checkpoint(format!(
                    "unexpected parameter {name:?} (wanted {expected_name:?})"
                )));
            }
        }
        {
            let mut slots = model.params_mut();
            for (slot, (_, value)) in slots.iter_mut().zip(params) {
                if (slot.rows(), slot.cols()) != (value.rows(), value.cols()) {
                    return Err(Error::Checkpoint("generator parameter shape mismatch".into()));
                }
                **slot = value.clone();
            }
        }
        Ok(model)
    }

    fn leaves(&self, g: &mut Graph) -> ParamVars {
        ParamVars {
            token_emb: g.leaf(self.token_emb.clone()),
            layers: self
                .layers
                .iter()
                .map(|l| LayerVars {
                    wq: l.wq.iter().map(|m| g.leaf(m.clone())).collect(),
                    wk: l.wk.iter().map(|m| g.leaf(m.clone())).collect(),
                    wv: l.wv.iter().map(|m| g.leaf(m.clone())).collect(),
                    wo: g.leaf(l.wo.clone()),
                    ln1_g: g.leaf(l.ln1_g.clone()),
                    ln1_b: g.leaf(l.ln1_b.clone()),
                    ff_w1: g.leaf(l.ff_w1.clone()),
                    ff_b1: g.leaf(l.ff_b1.clone()),
                    ff_w2: g.leaf(l.ff_w2.clone()),
                    ff_b2: g.leaf(l.ff_b2.clone()),
                    ln2_g: g.leaf(l.ln2_g.clone()),
                    ln2_b: g.leaf(l.ln2_b.clone()),
                })
                .collect(),
            mask_w: g.leaf(self.mask_w.clone()),
            mask_b: g.leaf(self.mask_b.clone()),
            repl_w: g.leaf(self.repl_w.clone()),
            repl_b: g.leaf(self.repl_b.clone()),
        }
    }

    /// Sinusoidal position rows, a constant.
    fn positional(n: usize, dm: usize) -> Matrix {
        let mut pe = Matrix::zeros(n, dm);
        for pos in 0..n {
            for i in 0..dm {
                let angle = pos as f64 / 10000f64.powf((2 * (i / 2)) as f64 / dm as f64);
                pe.set(pos, i, if i % 2 == 0 { angle.sin() } else { angle.cos() });
            }
        }
        pe
    }

    fn layer_norm(g: &mut Graph, x: Var, gain: Var, bias: Var) -> Var {
        let dm = g.value(x).cols() as f64;
        let sums = g.sum_cols(x);
        let mu = g.scale(sums, 1.0 / dm);
        let neg_mu = g.scale(mu, -1.0);
        let centered = g.add_col_vec(x, neg_mu);
        let sq = g.mul(centered, centered);
        let var_sums = g.sum_cols(sq);
        let var = g.scale(var_sums, 1.0 / dm);
        let var_eps = g.add_scalar(var, 1e-5);
        let std = g.sqrt(var_eps);
        let inv = g.recip(std);
        let normed = g.mul_col_vec(centered, inv);
        let scaled = g.mul_row_vec(normed, gain);
        g.add_row_vec(scaled, bias)
    }

    /// Contextual encoder: embeddings + positions through the transformer
    /// stack; returns the n x model_dim state node.
    fn encode_states(&self, g: &mut Graph, vars: &ParamVars, ids: &[usize]) -> Var {
        let dm = self.cfg.model_dim;
        let dh = dm / self.cfg.heads;
        let tokens = g.gather_rows(vars.token_emb, ids);
        let pe = g.leaf(Self::positional(ids.len(), dm));
        let mut x = g.add(tokens, pe);
        for l in &vars.layers {
            let mut heads = Vec::with_capacity(self.cfg.heads);
            for h in 0..self.cfg.heads {
                let q = g.matmul(x, l.wq[h]);
                let k = g.matmul(x, l.wk[h]);
                let v = g.matmul(x, l.wv[h]);
                let kt = g.transpose(k);
                let raw = g.matmul(q, kt);
                let scores = g.scale(raw, 1.0 / (dh as f64).sqrt());
                let attn = g.softmax_rows(scores);
                heads.push(g.matmul(attn, v));
            }
            let mut ctx = heads[0];
            for &h in &heads[1..] {
                ctx = g.concat_cols(ctx, h);
            }
            let proj = g.matmul(ctx, l.wo);
            let res1 = g.add(x, proj);
            let x1 = Self::layer_norm(g, res1, l.ln1_g, l.ln1_b);
            let ff_pre = g.matmul(x1, l.ff_w1);
            let ff_pre = g.add_row_vec(ff_pre, l.ff_b1);
            let ff_act = g.tanh(ff_pre);
            let ff_out = g.matmul(ff_act, l.ff_w2);
            let ff_out = g.add_row_vec(ff_out, l.ff_b2);
            let res2 = g.add(x1, ff_out);
            x = Self::layer_norm(g, res2, l.ln2_g, l.ln2_b);
        }
        x
    }

    fn mask_probs_var(&self, g: &mut Graph, vars: &ParamVars, states: Var) -> Var {
        let n = g.value(states).rows();
        let raw = g.matmul(states, vars.mask_w);
        let ones = g.leaf(Matrix::from_vec(n, 1, vec![1.0; n]));
        let bias = g.matmul(ones, vars.mask_b);
        let logits = g.add(raw, bias);
        g.sigmoid(logits)
    }

    fn token_index(&self, c: char) -> usize {
        self.vocab
            .iter()
            .position(|t| matches!(t, Tok::Ch(x) if *x == c))
            .unwrap_or(UNK_IDX)
    }

    /// Candidate vocabulary ids for replacing `c` at some position.
    fn candidates_for(&self, c: char) -> Vec<usize> {
        let self_id = self.token_index(c);
        match self.cfg.candidates {
            CandidateMode::FullVocab => {
                self.chinese_ids.iter().copied().filter(|&i| i != self_id).collect()
            }
            CandidateMode::Neighbors => self
                .net
                .neighbors(c)
                .into_iter()
                .filter(|&(nc, _)| nc != c)
                .map(|(nc, _)| self.token_index(nc))
                .filter(|&i| i != UNK_IDX)
                .collect(),
        }
    }

    /// Sample perturbations for a batch of texts. Advances `rng` once per
    /// decision in a fixed order, so a fixed seed fixes every trace.
    pub fn sample_batch(
        &self,
        texts: &[&str],
        rng: &mut ChaCha8Rng,
    ) -> Result<(Vec<PerturbationTrace>, SampledBatch)> {
        if texts.is_empty() {
            return Err(Error::EmptyCorpus);
        }
        let v = self.vocab.len();
        let mut traces = Vec::with_capacity(texts.len());
        let mut samples = Vec::with_capacity(texts.len());
        for text in texts {
            let chars: Vec<char> = text.chars().take(MAX_SEQ_LEN).collect();
            if chars.is_empty() {
                return Err(Error::EmptySentence);
            }
            let ids: Vec<usize> = chars.iter().map(|&c| self.token_index(c)).collect();
            let n = chars.len();

            // Forward pass for the policy distributions.
            let mut g = Graph::new();
            let vars = self.leaves(&mut g);
            let states = self.encode_states(&mut g, &vars, &ids);
            let p_var = self.mask_probs_var(&mut g, &vars, states);

            let mut maskable = vec![false; n];
            let mut candidate_lists: Vec<Vec<usize>> = vec![Vec::new(); n];
            for i in 0..n {
                if ids[i] != UNK_IDX && is_chinese_char(chars[i]) {
                    let cands = self.candidates_for(chars[i]);
                    if !cands.is_empty() {
                        maskable[i] = true;
                        candidate_lists[i] = cands;
                    }
                }
            }

            let mut masks = vec![0u8; n];
            let mut mask_probs = vec![0.0; n];
            for i in 0..n {
                if !maskable[i] {
                    continue;
                }
                let p = match self.force_mask_prob {
                    Some(f) => f,
                    None => g.value(p_var).get(i, 0).clamp(PROB_EPS, 1.0 - PROB_EPS),
                };
                mask_probs[i] = p;
                let u: f64 = rng.gen();
                masks[i] = u8::from(u < p);
            }
            let masked_rows: Vec<usize> =
                (0..n).filter(|&i| masks[i] == 1).collect();

            // Replacement logits only for the masked rows.
            let k = masked_rows.len();
            let mut chosen_cols = Vec::with_capacity(k);
            let mut gumbel = Matrix::zeros(k.max(1), v);
            let mut cand_mask = Matrix::from_vec(k.max(1), v, vec![NEG_INF; k.max(1) * v]);
            let mut dissim = Matrix::from_vec(k.max(1), v, vec![1.0; k.max(1) * v]);
            let mut chosen_probs: Vec<Option<f64>> = vec![None; n];
            let mut replacements: Vec<Option<usize>> = vec![None; n];
            let mut perturbed = chars.clone();

            if k > 0 {
                let h_masked = g.gather_rows(states, &masked_rows);
                let raw = g.matmul(h_masked, vars.repl_w);
                let ones = g.leaf(Matrix::from_vec(k, 1, vec![1.0; k]));
                let bias = g.matmul(ones, vars.repl_b);
                let logits_var = g.add(raw, bias);
                let logits = g.value(logits_var).clone();

                for (row, &pos) in masked_rows.iter().enumerate() {
                    let cands = &candidate_lists[pos];
                    for &cid in cands {
                        cand_mask.set(row, cid, 0.0);
                        let cand_char = match self.vocab[cid] {
                            Tok::Ch(c) => c,
                            _ => unreachable!("candidates are characters"),
                        };
                        dissim.set(
                            row,
                            cid,
                            1.0 - self.net.similarity_or_zero(chars[pos], cand_char),
                        );
                    }
                    // Gumbel noise over candidates; argmax of noisy logits.
                    let mut best = f64::NEG_INFINITY;
                    let mut best_id = cands[0];
                    for &cid in cands {
                        let u: f64 = rng.gen::<f64>().max(1e-300);
                        let gum = -(-u.ln()).ln();
                        gumbel.set(row, cid, gum);
                        let noisy = logits.get(row, cid) + gum;
                        if noisy > best {
                            best = noisy;
                            best_id = cid;
                        }
                    }
                    chosen_cols.push(best_id);
                    // Policy probability: softmax of the raw logits over the
                    // candidate set.
                    let max_logit = cands
                        .iter()
                        .map(|&cid| logits.get(row, cid))
                        .fold(f64::NEG_INFINITY, f64::max);
                    let denom: f64 = cands
                        .iter()
                        .map(|&cid| (logits.get(row, cid) - max_logit).exp())
                        .sum();
                    let p_sel = (logits.get(row, best_id) - max_logit).exp() / denom;
                    chosen_probs[pos] = Some(p_sel);
                    replacements[pos] = Some(best_id);
                    perturbed[pos] = match self.vocab[best_id] {
                        Tok::Ch(c) => c,
                        _ => unreachable!(),
                    };
                }
            }

            let mut logprob = 0.0;
            for i in 0..n {
                if !maskable[i] {
                    continue;
                }
                logprob += bernoulli_logprob(mask_probs[i], masks[i] == 1);
                if masks[i] == 1 {
                    logprob += chosen_probs[i].unwrap().ln();
                }
            }

            traces.push(PerturbationTrace {
                original: chars,
                perturbed,
                masks: masks.clone(),
                maskable: maskable.clone(),
                mask_probs,
                replacements,
                chosen_probs,
                considered: masked_rows.clone(),
                logprob,
            });
            samples.push(SampledActions {
                ids,
                maskable,
                masks,
                masked_rows,
                chosen_cols,
                gumbel,
                cand_mask,
                dissim,
                forced: self.force_mask_prob.is_some(),
            });
        }
        Ok((
            traces,
            SampledBatch {
                samples,
                advantages: vec![0.0; texts.len()],
                lambda_sim: self.cfg.lambda_sim,
            },
        ))
    }

    /// One perturbation, deterministic for a given seed.
    pub fn perturb(&self, text: &str, seed: u64) -> Result<PerturbationTrace> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let (mut traces, _) = self.sample_batch(&[text], &mut rng)?;
        Ok(traces.pop().expect("one trace per text"))
    }

    /// Surrogate loss graph over fixed sampled actions:
    /// `-mean(adv * logprob(theta)) + lambda_sim * mean(sim_penalty(theta))`.
    /// The value at the returned node equals `generator_loss` on the
    /// corresponding traces when advantages carry `R - baseline`.
    ///
    /// Training uses the straight-through penalty (hard one-hot forward,
    /// soft gradients). The soft variant makes the whole scalar an exact
    /// function of the parameters, which is what finite-difference gradient
    /// checks need.
    pub fn surrogate_graph(&self, batch: &SampledBatch) -> (Graph, Var, Vec<Var>) {
        self.surrogate_graph_with(batch, SimPath::StraightThrough)
    }

    /// Fully differentiable variant: the similarity penalty uses the soft
    /// Gumbel-Softmax sample in the forward value as well.
    pub fn surrogate_graph_soft(&self, batch: &SampledBatch) -> (Graph, Var, Vec<Var>) {
        self.surrogate_graph_with(batch, SimPath::Soft)
    }

    fn surrogate_graph_with(&self, batch: &SampledBatch, sim_path: SimPath) -> (Graph, Var, Vec<Var>) {
        let mut g = Graph::new();
        let vars = self.leaves(&mut g);
        let b = batch.samples.len();
        let mut rl_terms = Vec::with_capacity(b);
        let mut sim_terms = Vec::with_capacity(b);
        for (sample, &adv) in batch.samples.iter().zip(&batch.advantages) {
            let states = self.encode_states(&mut g, &vars, &sample.ids);

            // Mask-policy log-probability of the taken decisions.
            let mut logprob_terms: Vec<Var> = Vec::new();
            if !sample.forced {
                let p = self.mask_probs_var(&mut g, &vars, states);
                let n = sample.ids.len();
                let mut sel_take = Matrix::zeros(n, 1);
                let mut sel_keep = Matrix::zeros(n, 1);
                for i in 0..n {
                    if sample.maskable[i] {
                        if sample.masks[i] == 1 {
                            sel_take.set(i, 0, 1.0);
                        } else {
                            sel_keep.set(i, 0, 1.0);
                        }
                    }
                }
                let clamped = g.clamp(p, PROB_EPS, 1.0 - PROB_EPS);
                let ln_p = g.ln(clamped);
                let neg_p = g.scale(clamped, -1.0);
                let one_minus = g.add_scalar(neg_p, 1.0);
                let ln_q = g.ln(one_minus);
                let take = g.leaf(sel_take);
                let keep = g.leaf(sel_keep);
                let t1 = g.mul(take, ln_p);
                let t2 = g.mul(keep, ln_q);
                let s = g.add(t1, t2);
                logprob_terms.push(g.sum_all(s));
            }

            // Replacement-policy log-probability and similarity penalty.
            let k = sample.masked_rows.len();
            if k > 0 {
                let h_masked = g.gather_rows(states, &sample.masked_rows);
                let raw = g.matmul(h_masked, vars.repl_w);
                let ones = g.leaf(Matrix::from_vec(k, 1, vec![1.0; k]));
                let bias = g.matmul(ones, vars.repl_b);
                let logits = g.add(raw, bias);
                let cand_mask = g.leaf(sample.cand_mask.clone());
                let masked_logits = g.add(logits, cand_mask);
                let policy = g.softmax_rows(masked_logits);
                let picked = g.gather_per_row(policy, &sample.chosen_cols);
                let ln_picked = g.ln(picked);
                logprob_terms.push(g.sum_all(ln_picked));

                // Straight-through Gumbel-Softmax: hard one-hot forward,
                // soft gradients at the current temperature.
                let gumbel = g.leaf(sample.gumbel.clone());
                let noisy = g.add(masked_logits, gumbel);
                let scaled = g.scale(noisy, 1.0 / self.cfg.temperature);
                let soft = g.softmax_rows(scaled);
                let selected = match sim_path {
                    SimPath::StraightThrough => {
                        let mut hard = Matrix::zeros(k, self.vocab.len());
                        for (row, &col) in sample.chosen_cols.iter().enumerate() {
                            hard.set(row, col, 1.0);
                        }
                        g.straight_through(hard, soft)
                    }
                    SimPath::Soft => soft,
                };
                let dissim = g.leaf(sample.dissim.clone());
                let weighted = g.mul(selected, dissim);
                let total = g.sum_all(weighted);
                sim_terms.push(g.scale(total, 1.0 / k as f64));
            } else {
                sim_terms.push(g.leaf(Matrix::scalar(0.0)));
            }

            let logprob = match logprob_terms.len() {
                0 => g.leaf(Matrix::scalar(0.0)),
                1 => logprob_terms[0],
                _ => {
                    let mut acc = logprob_terms[0];
                    for &t in &logprob_terms[1..] {
                        acc = g.add(acc, t);
                    }
                    acc
                }
            };
            rl_terms.push(g.scale(logprob, -adv));
        }
        let rl_stack = g.concat_rows(&rl_terms);
        let rl_sum = g.sum_all(rl_stack);
        let rl = g.scale(rl_sum, 1.0 / b as f64);
        let sim_stack = g.concat_rows(&sim_terms);
        let sim_sum = g.sum_all(sim_stack);
        let sim = g.scale(sim_sum, batch.lambda_sim / b as f64);
        let total = g.add(rl, sim);

        let mut param_vars = vec![vars.token_emb];
        for l in &vars.layers {
            param_vars.extend(l.wq.iter().copied());
            param_vars.extend(l.wk.iter().copied());
            param_vars.extend(l.wv.iter().copied());
            param_vars.extend([
                l.wo, l.ln1_g, l.ln1_b, l.ff_w1, l.ff_b1, l.ff_w2, l.ff_b2, l.ln2_g, l.ln2_b,
            ]);
        }
        param_vars.extend([vars.mask_w, vars.mask_b, vars.repl_w, vars.repl_b]);
        (g, total, param_vars)
    }

    /// Surrogate loss value for fixed actions (gradient-check hook).
    pub fn surrogate_loss(&self, batch: &SampledBatch) -> f64 {
        let (g, total, _) = self.surrogate_graph(batch);
        g.value(total).item()
    }

    /// One policy-gradient step against a frozen discriminator.
    pub fn step(
        &mut self,
        spam_texts: &[&str],
        disc: &DiscriminatorModel,
        opt: &mut Adam,
        baseline: &mut RewardBaseline,
        rng: &mut ChaCha8Rng,
    ) -> Result<GenDiagnostics> {
        let (traces, mut batch) = self.sample_batch(spam_texts, rng)?;
        let mut rewards = Vec::with_capacity(traces.len());
        for t in &traces {
            let d = disc.predict(&t.perturbed_text())?;
            rewards.push(reward(d)?);
        }
        let mean_reward = rewards.iter().sum::<f64>() / rewards.len() as f64;
        for (adv, &r) in batch.advantages.iter_mut().zip(&rewards) {
            *adv = r - baseline.value;
        }
        baseline.update(mean_reward);

        let (mut g, total, param_vars) = self.surrogate_graph(&batch);
        let loss = g.value(total).item();
        if !loss.is_finite() {
            return Err(Error::NonFinite("generator loss".into()));
        }
        g.backward(total);
        let grads: Vec<Matrix> = param_vars.iter().map(|&v| g.grad(v)).collect();
        let mut params = self.params_mut();
        opt.step(&mut params, &grads)?;

        let positions: usize = traces.iter().map(|t| t.masks.len()).sum();
        let replaced: usize = traces.iter().map(|t| t.n_replaced()).sum();
        let mean_sim = traces.iter().map(|t| t.mean_similarity(&self.net)).sum::<f64>()
            / traces.len() as f64;
        Ok(GenDiagnostics {
            loss,
            mean_reward,
            mask_rate: replaced as f64 / positions.max(1) as f64,
            mean_sim,
        })
    }
}

struct ParamVars {
    token_emb: Var,
    layers: Vec<LayerVars>,
    mask_w: Var,
    mask_b: Var,
    repl_w: Var,
    repl_b: Var,
}

struct LayerVars {
    wq: Vec<Var>,
    wk: Vec<Var>,
    wv: Vec<Var>,
    wo: Var,
    ln1_g: Var,
    ln1_b: Var,
    ff_w1: Var,
    ff_b1: Var,
    ff_w2: Var,
    ff_b2: Var,
    ln2_g: Var,
    ln2_b: Var,
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::charsim::{parse_pinyin, CharRecord, GlyphCode};
    use crate::discriminator::DiscriminatorConfig;
    use crate::embeddings::{train_base_vectors, SkipGramConfig};

    fn fixture() -> (EmbeddingTable, SimilarityNetwork) {
        let chars: Vec<(char, &str)> = vec![
            ('你', "ni3"),
            ('尼', "ni2"),
            ('好', "hao3"),
            ('号', "hao4"),
            ('买', "mai3"),
            ('卖', "mai4"),
            ('加', "jia1"),
            ('嘉', "jia1"),
        ];
        let records: Vec<CharRecord> = chars
            .iter()
            .enumerate()
            .map(|(i, &(c, py))| CharRecord {
                ch: c,
                glyph: Some(
                    GlyphCode::new("left-right", [i as u8 % 10, 2, 3, 4, 5], 6 + i as u32)
                        .unwrap(),
                ),
                pron: Some(parse_pinyin(py).unwrap()),
                freq: 0.05 + 0.01 * i as f64,
            })
            .collect();
        let net = SimilarityNetwork::build(records, 0.7).unwrap();
        let texts: Vec<String> = chars
            .iter()
            .flat_map(|&(c, _)| std::iter::repeat(c.to_string().repeat(3)).take(3))
            .collect();
        let base = train_base_vectors(
            &texts,
            &SkipGramConfig { dim: 8, epochs: 2, ..Default::default() },
        )
        .unwrap();
        let table = EmbeddingTable::build(&net, &base).unwrap();
        (table, net)
    }

    fn small_cfg() -> GeneratorConfig {
        GeneratorConfig {
            model_dim: 16,
            ff_dim: 32,
            layers: 2,
            heads: 2,
            lambda_sim: 1.0,
            temperature: 1.0,
            learning_rate: 1e-2,
            candidates: CandidateMode::FullVocab,
        }
    }

    #[test]
    fn forced_zero_mask_is_identity() {
        let (table, net) = fixture();
        let mut model = GeneratorModel::new(&table, &net, small_cfg(), 1).unwrap();
        model.set_force_mask_prob(Some(0.0)).unwrap();
        let trace = model.perturb("你好买卖", 99).unwrap();
        assert_eq!(trace.original, trace.perturbed);
        assert_eq!(trace.n_replaced(), 0);
        assert_eq!(trace.logprob, 0.0);
        assert!(trace.considered.is_empty());
    }

    #[test]
    fn forced_one_mask_with_boosted_logit_replaces_everywhere() {
        let (table, net) = fixture();
        let mut model = GeneratorModel::new(&table, &net, small_cfg(), 1).unwrap();
        model.set_force_mask_prob(Some(1.0)).unwrap();
        model.bias_replacement_logit('嘉', 1e9).unwrap();
        let trace = model.perturb("你好买卖", 7).unwrap();
        assert_eq!(trace.n_replaced(), 4);
        assert!(trace.perturbed.iter().all(|&c| c == '嘉'));
        // P(replacement) is 1 within float precision, so logprob ~ 0.
        assert!(trace.logprob.abs() < 1e-9, "logprob {}", trace.logprob);
        // Mask contributions are exactly log(1) = 0 under forcing.
        assert!(trace.recompute_logprob().abs() < 1e-9);
    }

    #[test]
    fn non_chinese_positions_are_never_masked() {
        let (table, net) = fixture();
        let mut model = GeneratorModel::new(&table, &net, small_cfg(), 1).unwrap();
        model.set_force_mask_prob(Some(1.0)).unwrap();
        let trace = model.perturb("你abc123好!", 3).unwrap();
        for (i, &c) in trace.original.iter().enumerate() {
            if !is_chinese_char(c) {
                assert_eq!(trace.masks[i], 0, "non-Chinese position {i} masked");
                assert_eq!(trace.perturbed[i], c);
                assert!(!trace.maskable[i]);
            }
        }
        assert!(trace.masks[0] == 1);
    }

    #[test]
    fn traces_are_seed_deterministic_and_length_preserving() {
        let (table, net) = fixture();
        let model = GeneratorModel::new(&table, &net, small_cfg(), 5).unwrap();
        let a = model.perturb("你好买卖加嘉", 1234).unwrap();
        let b = model.perturb("你好买卖加嘉", 1234).unwrap();
        assert_eq!(a.perturbed, b.perturbed);
        assert_eq!(a.logprob, b.logprob);
        assert_eq!(a.original.len(), a.perturbed.len());
        assert_eq!(a.masks.len(), a.original.len());
        let c = model.perturb("你好买卖加嘉", 4321).unwrap();
        assert_eq!(c.original.len(), c.perturbed.len());
    }

    #[test]
    fn unmasked_positions_keep_their_characters() {
        let (table, net) = fixture();
        let model = GeneratorModel::new(&table, &net, small_cfg(), 5).unwrap();
        for seed in 0..20 {
            let t = model.perturb("你好买卖加嘉你好", seed).unwrap();
            for i in 0..t.original.len() {
                if t.masks[i] == 0 {
                    assert_eq!(t.original[i], t.perturbed[i]);
                }
            }
            assert!(t.logprob <= 0.0);
        }
    }

    #[test]
    fn logprob_matches_recomputation_from_stored_distributions() {
        let (table, net) = fixture();
        let model = GeneratorModel::new(&table, &net, small_cfg(), 5).unwrap();
        for seed in 0..50 {
            let t = model.perturb("你好买卖加嘉", seed).unwrap();
            assert!(
                (t.logprob - t.recompute_logprob()).abs() < 1e-6,
                "seed {seed}: {} vs {}",
                t.logprob,
                t.recompute_logprob()
            );
        }
    }

    #[test]
    fn reward_is_one_minus_probability_and_monotone() {
        assert!((reward(0.5).unwrap() - 0.5).abs() < 1e-15);
        assert!((reward(0.3).unwrap() - 0.7).abs() < 1e-15);
        let eps = 1e-9;
        assert!((reward(1.0 - eps).unwrap() - eps).abs() < 1e-12);
        assert!(reward(1.5).is_err());
        assert!(reward(f64::NAN).is_err());
        let mut last = f64::MAX;
        for d in [0.1, 0.3, 0.5, 0.7, 0.9] {
            let r = reward(d).unwrap();
            assert!(r < last);
            last = r;
        }
    }

    fn dummy_trace(logprob: f64) -> PerturbationTrace {
        PerturbationTrace {
            original: vec!['你'],
            perturbed: vec!['你'],
            masks: vec![0],
            maskable: vec![true],
            mask_probs: vec![0.5],
            replacements: vec![None],
            chosen_probs: vec![None],
            considered: vec![],
            logprob,
        }
    }

    #[test]
    fn rl_loss_values() {
        // Rewards equal to the baseline: centered advantages, zero loss.
        let traces = vec![dummy_trace(-1.0), dummy_trace(-2.0)];
        let loss = rl_loss(&traces, &[0.4, 0.4], 0.4).unwrap();
        assert_eq!(loss, 0.0);
        // Single trace at baseline 0: -logprob * R.
        let loss = rl_loss(&[dummy_trace(-2.0)], &[0.7], 0.0).unwrap();
        assert!((loss - 1.4).abs() < 1e-12);
        // Hand-computed batch of three.
        let traces = vec![dummy_trace(-1.0), dummy_trace(-0.5), dummy_trace(-2.0)];
        let rewards = [0.9, 0.2, 0.6];
        let baseline = 0.5;
        let expected = -((-1.0 * 0.4) + (-0.5 * -0.3) + (-2.0 * 0.1)) / 3.0;
        let got = rl_loss(&traces, &rewards, baseline).unwrap();
        assert!((got - expected).abs() < 1e-12);
        // Length mismatch.
        assert!(rl_loss(&traces, &rewards[..2], 0.0).is_err());
    }

    #[test]
    fn sim_loss_cases() {
        let (_, net) = fixture();
        // Empty considered set.
        let t = dummy_trace(0.0);
        assert_eq!(sim_loss(&t, &net), 0.0);
        // Identity replacement: sim(c,c) = 1, loss 0.
        let t = PerturbationTrace {
            original: vec!['你'],
            perturbed: vec!['你'],
            masks: vec![1],
            maskable: vec![true],
            mask_probs: vec![0.5],
            replacements: vec![Some(0)],
            chosen_probs: vec![Some(1.0)],
            considered: vec![0],
            logprob: -0.1,
        };
        assert!(sim_loss(&t, &net).abs() < 1e-12);
        // One considered position with sim 0.8: loss 0.2.
        // 你 (ni3) vs 尼 (ni2): same initial+final, different tone.
        let sim = net.similarity('你', '尼').unwrap();
        assert!((sim - 0.8).abs() < 1e-12);
        let t = PerturbationTrace { perturbed: vec!['尼'], ..t };
        assert!((sim_loss(&t, &net) - 0.2).abs() < 1e-12);
    }

    #[test]
    fn generator_loss_composition() {
        assert_eq!(generator_loss(1.4, 0.2, 0.0), 1.4);
        assert!((generator_loss(1.4, 0.2, 1.0) - 1.6).abs() < 1e-15);
        let (rl, sim, lambda) = (0.37, 0.81, 2.5);
        assert!((generator_loss(rl, sim, lambda) - (rl + lambda * sim)).abs() < 1e-15);
    }

    #[test]
    fn surrogate_value_matches_generator_loss_composition() {
        let (table, net) = fixture();
        let model = GeneratorModel::new(&table, &net, small_cfg(), 11).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(77);
        let texts = ["你好买卖", "加嘉你好"];
        let (traces, mut batch) = model.sample_batch(&texts, &mut rng).unwrap();
        let rewards = [0.8, 0.3];
        let baseline = 0.25;
        for (adv, &r) in batch.advantages.iter_mut().zip(&rewards) {
            *adv = r - baseline;
        }
        let surrogate = model.surrogate_loss(&batch);
        let rl = rl_loss(&traces, &rewards, baseline).unwrap();
        let sim_mean =
            traces.iter().map(|t| sim_loss(t, &net)).sum::<f64>() / traces.len() as f64;
        let expected = generator_loss(rl, sim_mean, model.cfg.lambda_sim);
        assert!(
            (surrogate - expected).abs() < 1e-9,
            "surrogate {surrogate} vs composed {expected}"
        );
    }

    #[test]
    fn straight_through_forward_is_one_hot() {
        let (table, net) = fixture();
        let model = GeneratorModel::new(&table, &net, small_cfg(), 13).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(5150);
        let (_, batch) = model.sample_batch(&["你好买卖加嘉"], &mut rng).unwrap();
        let sample = &batch.samples[0];
        for (row, &col) in sample.chosen_cols.iter().enumerate() {
            // The hard matrix is built from chosen_cols; verify the chosen
            // column is a real candidate and unique.
            assert!(sample.cand_mask.get(row, col) == 0.0, "chosen col not a candidate");
        }
    }

    #[test]
    fn zero_learning_rate_keeps_parameters() {
        let (table, net) = fixture();
        let mut model = GeneratorModel::new(&table, &net, small_cfg(), 3).unwrap();
        let disc = DiscriminatorModel::new(
            table.clone(),
            &DiscriminatorConfig::default(),
            3,
        )
        .unwrap();
        let before = model.params_checksum();
        let mut opt = model.optimizer(0.0);
        let mut baseline = RewardBaseline::default();
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        model.step(&["你好买卖"], &disc, &mut opt, &mut baseline, &mut rng).unwrap();
        assert_eq!(model.params_checksum(), before);
    }

    #[test]
    fn step_leaves_discriminator_untouched_and_reports_finite_diagnostics() {
        let (table, net) = fixture();
        let mut model = GeneratorModel::new(&table, &net, small_cfg(), 3).unwrap();
        let disc =
            DiscriminatorModel::new(table.clone(), &DiscriminatorConfig::default(), 3).unwrap();
        let disc_sum = disc.params_checksum();
        let mut opt = model.optimizer(model.cfg.learning_rate);
        let mut baseline = RewardBaseline::default();
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        for _ in 0..5 {
            let d = model
                .step(&["你好买卖", "加嘉你好"], &disc, &mut opt, &mut baseline, &mut rng)
                .unwrap();
            assert!(d.loss.is_finite());
            assert!(d.mean_reward.is_finite());
            assert!((0.0..=1.0).contains(&d.mask_rate));
            assert!((0.0..=1.0).contains(&d.mean_sim));
        }
        assert_eq!(disc.params_checksum(), disc_sum);
    }

    #[test]
    fn surrogate_gradients_match_finite_differences() {
        let (table, net) = fixture();
        let model = GeneratorModel::new(&table, &net, small_cfg(), 21).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(99);
        let (_, mut batch) = model.sample_batch(&["你好买卖"], &mut rng).unwrap();
        batch.advantages = vec![0.6];

        let (mut g, total, param_vars) = model.surrogate_graph(&batch);
        g.backward(total);

        // Spot-check representative parameters: mask head, replacement head,
        // token embedding, one attention matrix.
        let checks: Vec<(usize, usize, usize)> = vec![
            // (param index in params() order, row, col)
            (0, batch.samples[0].ids[0], 0), // token_emb row actually used
            (1, 0, 0),                        // layer0 wq0
            (model.params().len() - 4, 0, 0), // mask_w
            (model.params().len() - 2, 0, 0), // repl_w
        ];
        let h = 1e-5;
        for (pi, r, c) in checks {
            let ad = g.grad(param_vars[pi]).get(r, c);
            let mut mp = model.clone();
            {
                let mut ps = mp.params_mut();
                let old = ps[pi].get(r, c);
                ps[pi].set(r, c, old + h);
            }
            let mut mm = model.clone();
            {
                let mut ps = mm.params_mut();
                let old = ps[pi].get(r, c);
                ps[pi].set(r, c, old - h);
            }
            let fd = (mp.surrogate_loss(&batch) - mm.surrogate_loss(&batch)) / (2.0 * h);
            let denom = fd.abs().max(ad.abs()).max(1e-8);
            assert!((fd - ad).abs() / denom < 1e-4, "param {pi} ({r},{c}): fd={fd} ad={ad}");
        }
    }

    #[test]
    fn learns_to_evade_a_character_keyed_discriminator() {
        // The discriminator keys on 买: its embedding row points along the
        // head direction, so sentences containing it score high. The
        // generator should learn substitutions that lower D, raising reward.
        let (table, net) = fixture();
        let mut disc =
            DiscriminatorModel::new(table.clone(), &DiscriminatorConfig::default(), 3).unwrap();
        let dim = table.dim;
        let mut w = Matrix::zeros(dim, 1);
        w.set(0, 0, 8.0);
        disc.set_head(w, -1.0);
        let idx = disc.table.token_index('买');
        for c in 0..dim {
            disc.table.aggregated_mut().set(idx, c, if c == 0 { 1.0 } else { 0.0 });
        }

        let cfg = GeneratorConfig { lambda_sim: 0.0, learning_rate: 0.05, ..small_cfg() };
        let mut model = GeneratorModel::new(&disc.table, &net, cfg, 17).unwrap();
        let mut opt = model.optimizer(0.05);
        let mut baseline = RewardBaseline::default();
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let corpus = ["买你好买", "买买好你", "你买好买"];
        let mut early = 0.0;
        let mut late = 0.0;
        for step in 0..200 {
            let d = model.step(&corpus, &disc, &mut opt, &mut baseline, &mut rng).unwrap();
            if step < 20 {
                early += d.mean_reward;
            }
            if step >= 180 {
                late += d.mean_reward;
            }
        }
        assert!(
            late / 20.0 > early / 20.0 + 0.05,
            "reward did not improve: early {} late {}",
            early / 20.0,
            late / 20.0
        );
    }

    #[test]
    fn neighbor_candidates_stay_in_neighbor_sets() {
        let (table, net) = fixture();
        let cfg = GeneratorConfig { candidates: CandidateMode::Neighbors, ..small_cfg() };
        let mut model = GeneratorModel::new(&table, &net, cfg, 19).unwrap();
        model.set_force_mask_prob(Some(1.0)).unwrap();
        for seed in 0..10 {
            let t = model.perturb("你好买卖", seed).unwrap();
            for &i in &t.considered {
                let orig = t.original[i];
                let new = t.perturbed[i];
                assert!(new != orig);
                assert!(
                    net.neighbors(orig).iter().any(|&(c, _)| c == new),
                    "{new} is not a neighbor of {orig}"
                );
            }
        }
    }
}
