//! Character embeddings.
//!
//! Base vectors come from a from-scratch skip-gram with negative sampling.
//! The table used downstream replaces each character's vector with the
//! frequency-weighted mean of its similarity-network neighbors, which keeps
//! look-alike and sound-alike substitutions close in embedding space.

use std::collections::HashMap;
use std::fmt::Write as _;
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::charsim::SimilarityNetwork;
use crate::error::{Error, Result};
use crate::tensor::Matrix;

/// Vocabulary entry: two specials plus ordinary characters.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Tok {
    Pad,
    Unk,
    Ch(char),
}

impl Tok {
    pub fn as_text(&self) -> String {
        match self {
            Tok::Pad => "<pad>".to_string(),
            Tok::Unk => "<unk>".to_string(),
            Tok::Ch(c) => c.to_string(),
        }
    }

    pub fn parse(s: &str) -> Result<Tok> {
        match s {
            "<pad>" => Ok(Tok::Pad),
            "<unk>" => Ok(Tok::Unk),
            _ => {
                let mut chars = s.chars();
                match (chars.next(), chars.next()) {
                    (Some(c), None) => Ok(Tok::Ch(c)),
                    _ => Err(Error::Config(format!("bad vocab token {s:?}"))),
                }
            }
        }
    }
}

/// Index of the padding row in every table built here.
pub const PAD_IDX: usize = 0;
/// Index of the unknown-character row.
pub const UNK_IDX: usize = 1;

/// Skip-gram hyperparameters.
#[derive(Debug, Clone)]
pub struct SkipGramConfig {
    pub dim: usize,
    pub window: usize,
    pub negatives: usize,
    pub epochs: usize,
    pub learning_rate: f64,
    pub seed: u64,
}

impl Default for SkipGramConfig {
    fn default() -> Self {
        SkipGramConfig {
            dim: 64,
            window: 5,
            negatives: 5,
            epochs: 5,
            learning_rate: 0.05,
            seed: 42,
        }
    }
}

/// Base character vectors with a deterministic ordering.
#[derive(Debug, Clone)]
pub struct BaseVectors {
    pub dim: usize,
    chars: Vec<char>,
    index: HashMap<char, usize>,
    vectors: Vec<Vec<f64>>,
    /// Per-epoch mean negative-sampling loss, recorded during training.
    pub epoch_losses: Vec<f64>,
}

impl BaseVectors {
    pub fn get(&self, c: char) -> Option<&[f64]> {
        self.index.get(&c).map(|&i| self.vectors[i].as_slice())
    }

    pub fn chars(&self) -> &[char] {
        &self.chars
    }

    pub fn len(&self) -> usize {
        self.chars.len()
    }

    pub fn is_empty(&self) -> bool {
        self.chars.is_empty()
    }
}

/// Train skip-gram-with-negative-sampling base vectors over the corpus
/// texts. Deterministic for a fixed seed.
pub fn train_base_vectors(texts: &[String], cfg: &SkipGramConfig) -> Result<BaseVectors> {
    if texts.is_empty() || texts.iter().all(|t| t.chars().count() == 0) {
        return Err(Error::EmptyCorpus);
    }
    if cfg.dim < 2 {
        return Err(Error::Config(format!("embedding dim must be >= 2, got {}", cfg.dim)));
    }

    let sentences: Vec<Vec<char>> =
        texts.iter().map(|t| t.chars().collect()).filter(|s: &Vec<char>| !s.is_empty()).collect();

    let mut counts: HashMap<char, u64> = HashMap::new();
    for s in &sentences {
        for &c in s {
            *counts.entry(c).or_insert(0) += 1;
        }
    }
    let mut chars: Vec<char> = counts.keys().copied().collect();
    chars.sort_unstable();
    let index: HashMap<char, usize> = chars.iter().enumerate().map(|(i, &c)| (c, i)).collect();
    let n = chars.len();

    // Negative sampling table: unigram^(3/4), cumulative for binary search.
    let mut cumulative = Vec::with_capacity(n);
    let mut acc = 0.0;
    for &c in &chars {
        acc += (counts[&c] as f64).powf(0.75);
        cumulative.push(acc);
    }

    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let scale = 0.5 / cfg.dim as f64;
    let mut input: Vec<Vec<f64>> = (0..n)
        .map(|_| (0..cfg.dim).map(|_| rng.gen_range(-scale..scale)).collect())
        .collect();
    let mut output: Vec<Vec<f64>> = (0..n).map(|_| vec![0.0; cfg.dim]).collect();

    let ids: Vec<Vec<usize>> =
        sentences.iter().map(|s| s.iter().map(|c| index[c]).collect()).collect();

    let mut epoch_losses = Vec::with_capacity(cfg.epochs);
    for epoch in 0..cfg.epochs {
        // Linear decay, floored at a tenth of the initial rate.
        let lr = cfg.learning_rate
            * (1.0 - epoch as f64 / cfg.epochs as f64).max(0.1);
        let mut loss = 0.0;
        let mut pairs = 0u64;
        for sent in &ids {
            for (i, &center) in sent.iter().enumerate() {
                let lo = i.saturating_sub(cfg.window);
                let hi = (i + cfg.window + 1).min(sent.len());
                for (j, &ctx) in sent.iter().enumerate().take(hi).skip(lo) {
                    if i == j {
                        continue;
                    }
                    loss += sgns_update(
                        &mut input,
                        &mut output,
                        center,
                        ctx,
                        1.0,
                        lr,
                        cfg.dim,
                    );
                    pairs += 1;
                    for _ in 0..cfg.negatives {
                        let r: f64 = rng.gen_range(0.0..acc);
                        let neg = match cumulative
                            .binary_search_by(|v| v.partial_cmp(&r).unwrap())
                        {
                            Ok(k) => k + 1,
                            Err(k) => k,
                        }
                        .min(n - 1);
                        if neg == ctx {
                            continue;
                        }
                        loss += sgns_update(
                            &mut input,
                            &mut output,
                            center,
                            neg,
                            0.0,
                            lr,
                            cfg.dim,
                        );
                        pairs += 1;
                    }
                }
            }
        }
        epoch_losses.push(if pairs == 0 { 0.0 } else { loss / pairs as f64 });
    }

    Ok(BaseVectors { dim: cfg.dim, chars, index, vectors: input, epoch_losses })
}

fn sgns_update(
    input: &mut [Vec<f64>],
    output: &mut [Vec<f64>],
    center: usize,
    target: usize,
    label: f64,
    lr: f64,
    dim: usize,
) -> f64 {
    let mut dot = 0.0;
    for k in 0..dim {
        dot += input[center][k] * output[target][k];
    }
    let pred = 1.0 / (1.0 + (-dot).exp());
    let err = label - pred;
    for k in 0..dim {
        let in_k = input[center][k];
        input[center][k] += lr * err * output[target][k];
        output[target][k] += lr * err * in_k;
    }
    let p = pred.clamp(1e-12, 1.0 - 1e-12);
    -(label * p.ln() + (1.0 - label) * (1.0 - p).ln())
}

/// Frequency-weighted mean of the neighbor base vectors
/// `sum(freq(k) * base(k)) / sum(freq(k))` over the neighbor set of `c`.
/// Strict: every neighbor must carry a base vector.
pub fn aggregate(c: char, net: &SimilarityNetwork, base: &BaseVectors) -> Result<Vec<f64>> {
    if !net.contains(c) {
        return Err(Error::UnknownChar(c));
    }
    let neighbors = net.neighbors(c);
    let mut sum = vec![0.0; base.dim];
    let mut total = 0.0;
    for (nc, _) in &neighbors {
        let rec = net.record(*nc).expect("neighbor is in the repository");
        let vec = base.get(*nc).ok_or(Error::MissingBaseVector(*nc))?;
        total += rec.freq;
        for (s, v) in sum.iter_mut().zip(vec) {
            *s += rec.freq * v;
        }
    }
    if total <= 0.0 {
        return Err(Error::ZeroTotalFrequency(c));
    }
    for s in sum.iter_mut() {
        *s /= total;
    }
    Ok(sum)
}

/// Like [`aggregate`] but skips neighbors that have no base vector; returns
/// `None` when no neighbor contributes.
fn aggregate_available(
    c: char,
    net: &SimilarityNetwork,
    base: &BaseVectors,
) -> Result<Option<Vec<f64>>> {
    let neighbors = net.neighbors(c);
    let mut sum = vec![0.0; base.dim];
    let mut total = 0.0;
    let mut contributing = 0usize;
    for (nc, _) in &neighbors {
        let Some(vec) = base.get(*nc) else { continue };
        let rec = net.record(*nc).expect("neighbor is in the repository");
        total += rec.freq;
        contributing += 1;
        for (s, v) in sum.iter_mut().zip(vec) {
            *s += rec.freq * v;
        }
    }
    if contributing == 0 {
        return Ok(None);
    }
    if total <= 0.0 {
        return Err(Error::ZeroTotalFrequency(c));
    }
    for s in sum.iter_mut() {
        *s /= total;
    }
    Ok(Some(sum))
}

/// Character vocabulary plus base and aggregated vectors.
///
/// Row 0 is `<pad>`, row 1 is `<unk>` (all zeros). Ordinary characters are
/// sorted by code point, so the table is deterministic regardless of input
/// ordering.
#[derive(Debug, Clone)]
pub struct EmbeddingTable {
    pub dim: usize,
    vocab: Vec<Tok>,
    index: HashMap<char, usize>,
    base: Vec<Option<Vec<f64>>>,
    aggregated: Matrix,
}

impl EmbeddingTable {
    /// Build the table over the union of the repository and the corpus
    /// vocabulary. Characters with usable neighbors get the aggregated
    /// vector; everything else falls back to its base vector, or zeros when
    /// no base vector exists.
    pub fn build(net: &SimilarityNetwork, base: &BaseVectors) -> Result<EmbeddingTable> {
        let mut chars: Vec<char> = net.records().iter().map(|r| r.ch).collect();
        chars.extend(base.chars().iter().copied());
        chars.sort_unstable();
        chars.dedup();

        let mut vocab = vec![Tok::Pad, Tok::Unk];
        vocab.extend(chars.iter().map(|&c| Tok::Ch(c)));
        let index: HashMap<char, usize> =
            chars.iter().enumerate().map(|(i, &c)| (c, i + 2)).collect();

        let mut base_rows: Vec<Option<Vec<f64>>> = vec![None; vocab.len()];
        let mut agg = Matrix::zeros(vocab.len(), base.dim);
        for (i, &c) in chars.iter().enumerate() {
            let row = i + 2;
            let base_vec = base.get(c).map(|v| v.to_vec());
            let agg_vec = if net.contains(c) {
                aggregate_available(c, net, base)?
            } else {
                None
            };
            let chosen = match (agg_vec, &base_vec) {
                (Some(a), _) => a,
                (None, Some(b)) => b.clone(),
                (None, None) => vec![0.0; base.dim],
            };
            agg.row_mut(row).copy_from_slice(&chosen);
            base_rows[row] = base_vec;
        }
        Ok(EmbeddingTable { dim: base.dim, vocab, index, base: base_rows, aggregated: agg })
    }

    /// Table with externally supplied aggregated rows (checkpoint loading).
    pub fn from_rows(dim: usize, vocab: Vec<Tok>, aggregated: Matrix) -> Result<EmbeddingTable> {
        if aggregated.rows() != vocab.len() || aggregated.cols() != dim {
            return Err(Error::Checkpoint("embedding table shape mismatch".into()));
        }
        if vocab.first() != Some(&Tok::Pad) || vocab.get(1) != Some(&Tok::Unk) {
            return Err(Error::Checkpoint("vocab must start with <pad>, <unk>".into()));
        }
        let mut index = HashMap::new();
        for (i, t) in vocab.iter().enumerate() {
            if let Tok::Ch(c) = t {
                if index.insert(*c, i).is_some() {
                    return Err(Error::Checkpoint(format!("duplicate vocab entry {c:?}")));
                }
            }
        }
        let base = vec![None; vocab.len()];
        Ok(EmbeddingTable { dim, vocab, index, base, aggregated })
    }

    pub fn vocab(&self) -> &[Tok] {
        &self.vocab
    }

    pub fn vocab_len(&self) -> usize {
        self.vocab.len()
    }

    pub fn token_index(&self, c: char) -> usize {
        self.index.get(&c).copied().unwrap_or(UNK_IDX)
    }

    pub fn char_at(&self, idx: usize) -> Option<char> {
        match self.vocab.get(idx) {
            Some(Tok::Ch(c)) => Some(*c),
            _ => None,
        }
    }

    pub fn contains(&self, c: char) -> bool {
        self.index.contains_key(&c)
    }

    /// Aggregated vector for a character; unknown characters get the
    /// all-zero unknown row.
    pub fn embedding(&self, c: char) -> &[f64] {
        self.aggregated.row(self.token_index(c))
    }

    pub fn aggregated(&self) -> &Matrix {
        &self.aggregated
    }

    pub fn aggregated_mut(&mut self) -> &mut Matrix {
        &mut self.aggregated
    }

    pub fn base_row(&self, c: char) -> Option<&[f64]> {
        self.base[self.token_index(c)].as_deref()
    }

    /// Token ids for a sentence, unknown characters mapping to `<unk>`.
    pub fn encode_ids(&self, text: &str) -> Vec<usize> {
        text.chars().map(|c| self.token_index(c)).collect()
    }

    /// Serialize as `d=<dim>` then one `token<TAB>v1 v2 ...` row per entry.
    /// `sig_digits` controls float precision; `None` writes shortest
    /// round-trip representation.
    pub fn to_table_string(&self, sig_digits: Option<usize>) -> String {
        let mut out = String::new();
        let _ = writeln!(out, "d={}", self.dim);
        for (i, tok) in self.vocab.iter().enumerate() {
            let row = self.aggregated.row(i);
            let mut line = tok.as_text();
            line.push('\t');
            for (k, v) in row.iter().enumerate() {
                if k > 0 {
                    line.push(' ');
                }
                match sig_digits {
                    Some(d) => {
                        let _ = write!(line, "{:.*e}", d.saturating_sub(1), v);
                    }
                    None => {
                        let _ = write!(line, "{v:e}");
                    }
                }
            }
            out.push_str(&line);
            out.push('\n');
        }
        out
    }

    pub fn save(&self, path: &Path, sig_digits: Option<usize>) -> Result<()> {
        std::fs::write(path, self.to_table_string(sig_digits))
            .map_err(|e| Error::io(path.display().to_string(), e))
    }

    pub fn parse_table_str(text: &str, origin: &str) -> Result<EmbeddingTable> {
        let mut lines = text.lines().enumerate();
        let (_, header) =
            lines.next().ok_or_else(|| Error::parse(origin, 1, "empty table"))?;
        let dim: usize = header
            .strip_prefix("d=")
            .and_then(|v| v.parse().ok())
            .ok_or_else(|| Error::parse(origin, 1, "bad dimension header"))?;
        let mut vocab = Vec::new();
        let mut rows = Vec::new();
        for (ln, line) in lines {
            if line.trim().is_empty() {
                continue;
            }
            let (tok_s, vec_s) = line
                .split_once('\t')
                .ok_or_else(|| Error::parse(origin, ln + 1, "expected token<TAB>values"))?;
            let tok = Tok::parse(tok_s).map_err(|e| Error::parse(origin, ln + 1, e.to_string()))?;
            let vals: Vec<f64> = vec_s
                .split_whitespace()
                .map(|v| v.parse::<f64>())
                .collect::<std::result::Result<_, _>>()
                .map_err(|_| Error::parse(origin, ln + 1, "bad float"))?;
            if vals.len() != dim {
                return Err(Error::parse(
                    origin,
                    ln + 1,
                    format!("expected {dim} values, got {}", vals.len()),
                ));
            }
            vocab.push(tok);
            rows.push(vals);
        }
        let mut m = Matrix::zeros(vocab.len(), dim);
        for (i, r) in rows.iter().enumerate() {
            m.row_mut(i).copy_from_slice(r);
        }
        EmbeddingTable::from_rows(dim, vocab, m)
    }

    pub fn load(path: &Path) -> Result<EmbeddingTable> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| Error::io(path.display().to_string(), e))?;
        Self::parse_table_str(&text, &path.display().to_string())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::charsim::{parse_pinyin, CharRecord, GlyphCode};
    use crate::tensor::cosine;

    fn rec(ch: char, pinyin: &str, freq: f64) -> CharRecord {
        CharRecord {
            ch,
            glyph: Some(GlyphCode::new("left-right", [1, 2, 3, 4, 5], 8).unwrap()),
            pron: Some(parse_pinyin(pinyin).unwrap()),
            freq,
        }
    }

    fn base_from(entries: &[(char, Vec<f64>)]) -> BaseVectors {
        let mut chars: Vec<char> = entries.iter().map(|(c, _)| *c).collect();
        chars.sort_unstable();
        let index = chars.iter().enumerate().map(|(i, &c)| (c, i)).collect();
        let dim = entries[0].1.len();
        let by_char: HashMap<char, Vec<f64>> = entries.iter().cloned().collect();
        let vectors = chars.iter().map(|c| by_char[c].clone()).collect();
        BaseVectors { dim, chars, index, vectors, epoch_losses: Vec::new() }
    }

    #[test]
    fn single_character_corpus_trains_one_vector() {
        let texts = vec!["呀呀呀呀呀呀".to_string()];
        let cfg = SkipGramConfig { dim: 4, epochs: 2, ..Default::default() };
        let base = train_base_vectors(&texts, &cfg).unwrap();
        assert_eq!(base.chars(), &['呀']);
        // Specials appear once a table is built on top.
        let net = SimilarityNetwork::build(vec![rec('呀', "ya1", 0.5)], 0.7).unwrap();
        let table = EmbeddingTable::build(&net, &base).unwrap();
        assert_eq!(table.vocab()[0], Tok::Pad);
        assert_eq!(table.vocab()[1], Tok::Unk);
        assert_eq!(table.vocab()[2], Tok::Ch('呀'));
    }

    #[test]
    fn empty_corpus_is_an_error() {
        let err = train_base_vectors(&[], &SkipGramConfig::default());
        assert!(matches!(err, Err(Error::EmptyCorpus)));
    }

    #[test]
    fn fixed_seed_is_deterministic() {
        let texts: Vec<String> =
            vec!["你好世界".into(), "世界你好".into(), "好你世呀".into()];
        let cfg = SkipGramConfig { dim: 8, epochs: 3, ..Default::default() };
        let a = train_base_vectors(&texts, &cfg).unwrap();
        let b = train_base_vectors(&texts, &cfg).unwrap();
        assert_eq!(a.vectors, b.vectors);
        assert_eq!(a.epoch_losses, b.epoch_losses);
    }

    #[test]
    fn loss_decreases_over_epochs() {
        let texts: Vec<String> = (0..30)
            .map(|i| if i % 2 == 0 { "你好你好你好".to_string() } else { "世界世界世界".to_string() })
            .collect();
        let cfg = SkipGramConfig { dim: 8, epochs: 5, ..Default::default() };
        let base = train_base_vectors(&texts, &cfg).unwrap();
        let first = base.epoch_losses.first().unwrap();
        let last = base.epoch_losses.last().unwrap();
        assert!(last < first, "losses {:?}", base.epoch_losses);
    }

    #[test]
    fn co_occurring_characters_end_up_closer() {
        // Topic one pairs 你/好, topic two pairs 世/界; across 5 seeds the
        // within-topic cosine must beat the cross-topic cosine on average.
        let mut texts = Vec::new();
        for _ in 0..40 {
            texts.push("你好你好你好你好".to_string());
            texts.push("世界世界世界世界".to_string());
        }
        let mut within = 0.0;
        let mut across = 0.0;
        for seed in 0..5 {
            let cfg =
                SkipGramConfig { dim: 16, epochs: 4, seed, ..Default::default() };
            let base = train_base_vectors(&texts, &cfg).unwrap();
            within += cosine(base.get('你').unwrap(), base.get('好').unwrap());
            across += cosine(base.get('你').unwrap(), base.get('世').unwrap());
        }
        assert!(within / 5.0 > across / 5.0, "within={within}, across={across}");
    }

    #[test]
    fn aggregate_single_neighbor_is_identity() {
        let net = SimilarityNetwork::build(vec![rec('你', "ni3", 0.5)], 0.7).unwrap();
        let base = base_from(&[('你', vec![1.0, -2.0])]);
        let agg = aggregate('你', &net, &base).unwrap();
        assert_eq!(agg, vec![1.0, -2.0]);
    }

    #[test]
    fn aggregate_equal_freq_is_arithmetic_mean() {
        // Same pinyin, same tone: similarity 1 > rho, so both are neighbors.
        let net = SimilarityNetwork::build(
            vec![rec('你', "ni3", 0.25), rec('尼', "ni3", 0.25)],
            0.7,
        )
        .unwrap();
        let base = base_from(&[('你', vec![2.0, 0.0]), ('尼', vec![0.0, 4.0])]);
        let agg = aggregate('你', &net, &base).unwrap();
        assert_eq!(agg, vec![1.0, 2.0]);
    }

    #[test]
    fn aggregate_weighted_mean_matches_hand_value() {
        // freqs (0.5, 0.25, 0.25) over identical-code neighbors.
        let net = SimilarityNetwork::build(
            vec![rec('a', "ni3", 0.5), rec('b', "ni3", 0.25), rec('c', "ni3", 0.25)],
            0.7,
        )
        .unwrap();
        let base = base_from(&[
            ('a', vec![1.0, 0.0]),
            ('b', vec![0.0, 1.0]),
            ('c', vec![4.0, 4.0]),
        ]);
        let agg = aggregate('a', &net, &base).unwrap();
        // (0.5*[1,0] + 0.25*[0,1] + 0.25*[4,4]) / 1.0 = [1.5, 1.25]
        assert!((agg[0] - 1.5).abs() < 1e-12);
        assert!((agg[1] - 1.25).abs() < 1e-12);
    }

    #[test]
    fn aggregate_errors() {
        let net = SimilarityNetwork::build(
            vec![rec('你', "ni3", 0.0), rec('尼', "ni3", 0.0)],
            0.7,
        )
        .unwrap();
        let base = base_from(&[('你', vec![1.0]), ('尼', vec![2.0])]);
        assert!(matches!(aggregate('你', &net, &base), Err(Error::ZeroTotalFrequency(_))));

        let net2 = SimilarityNetwork::build(
            vec![rec('你', "ni3", 0.3), rec('尼', "ni3", 0.3)],
            0.7,
        )
        .unwrap();
        let base2 = base_from(&[('你', vec![1.0])]);
        assert!(matches!(aggregate('你', &net2, &base2), Err(Error::MissingBaseVector('尼'))));
        assert!(matches!(aggregate('龍', &net2, &base2), Err(Error::UnknownChar('龍'))));
    }

    #[test]
    fn build_table_matches_per_char_aggregate() {
        let records = vec![
            rec('你', "ni3", 0.2),
            rec('尼', "ni3", 0.1),
            rec('好', "hao3", 0.3),
            rec('号', "hao4", 0.15),
        ];
        let net = SimilarityNetwork::build(records, 0.7).unwrap();
        let base = base_from(&[
            ('你', vec![1.0, 2.0]),
            ('尼', vec![3.0, -1.0]),
            ('好', vec![0.5, 0.5]),
            ('号', vec![-2.0, 1.0]),
        ]);
        let table = EmbeddingTable::build(&net, &base).unwrap();
        for c in ['你', '尼', '好', '号'] {
            let expected = aggregate(c, &net, &base).unwrap();
            let got = table.embedding(c);
            for (e, g) in expected.iter().zip(got) {
                assert!((e - g).abs() < 1e-12, "mismatch for {c}");
            }
        }
    }

    #[test]
    fn rho_one_falls_back_to_base_vectors() {
        let records = vec![rec('你', "ni3", 0.2), rec('好', "hao3", 0.3)];
        let net = SimilarityNetwork::build(records, 1.0).unwrap();
        let base = base_from(&[('你', vec![1.0, 2.0]), ('好', vec![0.5, 0.5])]);
        let table = EmbeddingTable::build(&net, &base).unwrap();
        assert_eq!(table.embedding('你'), &[1.0, 2.0]);
        assert_eq!(table.embedding('好'), &[0.5, 0.5]);
    }

    #[test]
    fn unknown_character_maps_to_zero_row() {
        let records = vec![rec('你', "ni3", 0.2)];
        let net = SimilarityNetwork::build(records, 0.7).unwrap();
        let base = base_from(&[('你', vec![1.0, 2.0])]);
        let table = EmbeddingTable::build(&net, &base).unwrap();
        assert_eq!(table.embedding('龍'), &[0.0, 0.0]);
        assert_eq!(table.token_index('龍'), UNK_IDX);
    }

    #[test]
    fn convexity_and_norm_bound() {
        let records = vec![rec('a', "ni3", 0.5), rec('b', "ni3", 0.2), rec('c', "ni3", 0.1)];
        let net = SimilarityNetwork::build(records, 0.7).unwrap();
        let base = base_from(&[
            ('a', vec![1.0, -3.0]),
            ('b', vec![2.0, 5.0]),
            ('c', vec![-1.0, 0.0]),
        ]);
        let agg = aggregate('a', &net, &base).unwrap();
        for j in 0..2 {
            let lo = [1.0, -3.0f64][j].min([2.0, 5.0f64][j]).min([-1.0, 0.0f64][j]);
            let hi = [1.0, -3.0f64][j].max([2.0, 5.0f64][j]).max([-1.0, 0.0f64][j]);
            assert!(agg[j] >= lo - 1e-12 && agg[j] <= hi + 1e-12);
        }
        let max_norm = [
            crate::tensor::norm(&[1.0, -3.0]),
            crate::tensor::norm(&[2.0, 5.0]),
            crate::tensor::norm(&[-1.0, 0.0]),
        ]
        .into_iter()
        .fold(0.0, f64::max);
        assert!(crate::tensor::norm(&agg) <= max_norm + 1e-12);
    }

    #[test]
    fn identical_neighbor_sets_give_identical_embeddings() {
        // a and b share codes exactly, so N(a) = N(b) and the weighted means agree.
        let records = vec![rec('a', "ni3", 0.5), rec('b', "ni3", 0.3)];
        let net = SimilarityNetwork::build(records, 0.7).unwrap();
        let base = base_from(&[('a', vec![1.0, 0.0]), ('b', vec![0.0, 1.0])]);
        let ea = aggregate('a', &net, &base).unwrap();
        let eb = aggregate('b', &net, &base).unwrap();
        assert_eq!(ea, eb);
    }

    #[test]
    fn zero_frequency_neighbors_have_no_influence() {
        let with_zero = vec![rec('a', "ni3", 0.5), rec('b', "ni3", 0.0)];
        let net = SimilarityNetwork::build(with_zero, 0.7).unwrap();
        let base = base_from(&[('a', vec![1.0, 0.0]), ('b', vec![100.0, 100.0])]);
        let agg = aggregate('a', &net, &base).unwrap();
        assert_eq!(agg, vec![1.0, 0.0]);
    }

    #[test]
    fn table_round_trip() {
        let records = vec![rec('你', "ni3", 0.2), rec('好', "hao3", 0.3)];
        let net = SimilarityNetwork::build(records, 0.7).unwrap();
        let base = base_from(&[('你', vec![1.0, 2.0]), ('好', vec![0.5, 0.5])]);
        let table = EmbeddingTable::build(&net, &base).unwrap();
        let text = table.to_table_string(None);
        let loaded = EmbeddingTable::parse_table_str(&text, "mem").unwrap();
        assert_eq!(loaded.dim, table.dim);
        assert_eq!(loaded.vocab(), table.vocab());
        assert_eq!(loaded.aggregated(), table.aggregated());
    }
}
