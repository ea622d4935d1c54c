//! Synthetic dictionaries and corpora for experiments and benchmarks.
//!
//! The dictionary groups characters into confusable clusters (shared glyph
//! structure and corner digits, pinyin variants). Sentences draw only on
//! one "usable" character per cluster; the remaining cluster members are
//! reserved as substitution targets. Drifted spam swaps characters for
//! reserved confusables the way an adaptive spammer would: some swaps are
//! in-network neighbors (absorbed by similarity-aggregated embeddings),
//! some fall below the similarity threshold and genuinely evade.

use rand::{seq::SliceRandom, Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::charsim::{record_similarity, CharRecord, GlyphCode, PronCode, SimilarityNetwork};
use crate::corpus::LabeledSample;
use crate::error::Result;

const STRUCTURES: &[&str] = &["left-right", "up-down", "enclosure", "single", "left-middle-right"];
const PINYIN_INITIALS: &[&str] = &[
    "b", "p", "m", "f", "d", "t", "n", "l", "g", "k", "h", "j", "q", "x", "zh", "ch", "sh", "z",
    "c", "s", "w", "y",
];
const PINYIN_FINALS: &[&str] = &[
    "a", "o", "e", "i", "u", "ai", "ei", "ao", "ou", "an", "en", "ang", "eng", "ong", "ia", "iao",
    "ian", "in", "ing", "uan",
];

/// Deterministic synthetic dictionary of `n` CJK characters in confusable
/// clusters of about `cluster_size` consecutive characters.
pub fn synth_dictionary(n: usize, cluster_size: usize, seed: u64) -> Vec<CharRecord> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x51C7);
    let mut records = Vec::with_capacity(n);
    let mut next_cp = 0x4E00u32;
    while records.len() < n {
        // One cluster: a prototype code plus near variants.
        let structure = STRUCTURES[rng.gen_range(0..STRUCTURES.len())];
        let proto_corners: [u8; 5] = std::array::from_fn(|_| rng.gen_range(0..10));
        let proto_strokes: u32 = rng.gen_range(4..18);
        let initial = PINYIN_INITIALS[rng.gen_range(0..PINYIN_INITIALS.len())];
        let final_ = PINYIN_FINALS[rng.gen_range(0..PINYIN_FINALS.len())];
        let members = cluster_size.min(n - records.len());
        for k in 0..members {
            let ch = char::from_u32(next_cp).expect("valid CJK code point");
            next_cp += 1;
            let mut corners = proto_corners;
            if k > 0 {
                // Nudge one corner digit so members are close, not equal.
                let slot = rng.gen_range(0..5);
                corners[slot] = (corners[slot] + rng.gen_range(1..3)) % 10;
            }
            let strokes = (proto_strokes as i64 + rng.gen_range(-1..=1)).max(1) as u32;
            let tone = rng.gen_range(1..=4u8);
            records.push(CharRecord {
                ch,
                glyph: Some(GlyphCode::new(structure, corners, strokes).expect("valid glyph")),
                pron: Some(PronCode::new(initial, final_, tone).expect("valid pinyin")),
                freq: 0.0,
            });
        }
    }
    // Zipf-ish frequencies, normalized to [0,1) over the repository.
    let mut raw: Vec<f64> = (0..records.len()).map(|i| 1000.0 / (1.0 + i as f64)).collect();
    raw.shuffle(&mut rng);
    let total: f64 = raw.iter().sum();
    for (r, w) in records.iter_mut().zip(&raw) {
        r.freq = w / (total + 1.0);
    }
    records
}

/// Render records in the dictionary file format with pseudo raw counts.
pub fn dictionary_file_text(records: &[CharRecord]) -> String {
    let mut out = String::from("# synthetic dictionary\n");
    for r in records {
        let glyph = r.glyph.as_ref().expect("synthetic records carry glyph codes");
        let pron = r.pron.as_ref().expect("synthetic records carry pinyin");
        let raw = (r.freq * 1_000_000.0).round() as u64;
        out.push_str(&format!(
            "{}\t{}\t{}{}{}{}{}\t{}\t{}{}{}\t{}\n",
            r.ch,
            glyph.structure,
            glyph.corners[0],
            glyph.corners[1],
            glyph.corners[2],
            glyph.corners[3],
            glyph.corners[4],
            glyph.strokes,
            pron.initial,
            pron.final_,
            pron.tone,
            raw
        ));
    }
    out
}

/// Corpus generation parameters.
#[derive(Debug, Clone)]
pub struct SynthConfig {
    pub n_train: usize,
    pub n_val: usize,
    pub n_test: usize,
    /// Cluster size the dictionary was built with.
    pub cluster_size: usize,
    /// Fraction of training spam with substitution drift.
    pub drift_train: f64,
    /// Fraction of validation/test spam with substitution drift.
    pub drift_eval: f64,
    /// Per-character substitution probability inside a drifted sentence.
    pub sub_prob: f64,
    /// Probability a substitution uses an in-network neighbor; the rest use
    /// below-threshold look-alikes from other clusters.
    pub neighbor_prob: f64,
    pub seed: u64,
}

impl Default for SynthConfig {
    fn default() -> Self {
        SynthConfig {
            n_train: 1200,
            n_val: 400,
            n_test: 400,
            cluster_size: 4,
            drift_train: 0.05,
            drift_eval: 0.6,
            sub_prob: 0.5,
            neighbor_prob: 0.5,
            seed: 42,
        }
    }
}

#[derive(Debug, Clone)]
pub struct SynthCorpus {
    pub train: Vec<LabeledSample>,
    pub val: Vec<LabeledSample>,
    pub test: Vec<LabeledSample>,
}

/// Generate a two-topic corpus over the dictionary characters, spam drifted
/// per the config. Balanced classes in every split.
pub fn synth_corpus(
    records: &[CharRecord],
    net: &SimilarityNetwork,
    cfg: &SynthConfig,
) -> Result<SynthCorpus> {
    assert!(records.len() >= 40, "need a reasonably sized dictionary");
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed ^ 0xC0);

    // One usable character per cluster; the rest are reserved as
    // substitution targets that never occur in clean sentences.
    let usable: Vec<char> = records
        .iter()
        .enumerate()
        .filter(|(i, _)| i % cfg.cluster_size == 0)
        .map(|(_, r)| r.ch)
        .collect();
    let reserved: Vec<char> = records
        .iter()
        .enumerate()
        .filter(|(i, _)| i % cfg.cluster_size != 0)
        .map(|(_, r)| r.ch)
        .collect();
    let n = usable.len();
    let common: Vec<char> = usable[..n / 5].to_vec();
    let normal_pool: Vec<char> = usable[n / 5..n * 3 / 5].to_vec();
    let spam_pool: Vec<char> = usable[n * 3 / 5..].to_vec();
    let signature: Vec<char> = spam_pool[..8.min(spam_pool.len())].to_vec();

    let make_sentence = |is_spam: bool, rng: &mut ChaCha8Rng| -> String {
        let len = rng.gen_range(8..=14usize);
        let mut out: Vec<char> = Vec::with_capacity(len);
        if is_spam {
            let n_sig = rng.gen_range(2..=3);
            for _ in 0..n_sig {
                out.push(signature[rng.gen_range(0..signature.len())]);
            }
            while out.len() < len {
                let r: f64 = rng.gen();
                out.push(if r < 0.3 {
                    common[rng.gen_range(0..common.len())]
                } else {
                    spam_pool[rng.gen_range(0..spam_pool.len())]
                });
            }
        } else {
            while out.len() < len {
                let r: f64 = rng.gen();
                out.push(if r < 0.3 {
                    common[rng.gen_range(0..common.len())]
                } else {
                    normal_pool[rng.gen_range(0..normal_pool.len())]
                });
            }
        }
        out.shuffle(rng);
        out.into_iter().collect()
    };

    // Below-threshold look-alikes: reserved characters from other clusters
    // with moderate similarity, the part of the drift the network cannot
    // absorb.
    let near_miss = |c: char, rng: &mut ChaCha8Rng| -> Option<char> {
        let rec = net.record(c)?;
        let candidates: Vec<char> = reserved
            .iter()
            .filter(|&&rc| {
                rc != c && {
                    let other = net.record(rc).expect("reserved char is in the repository");
                    let s = record_similarity(rec, other);
                    s > 0.2 && s <= net.rho()
                }
            })
            .copied()
            .collect();
        if candidates.is_empty() {
            None
        } else {
            Some(candidates[rng.gen_range(0..candidates.len())])
        }
    };

    let drift = |text: &str, rng: &mut ChaCha8Rng| -> String {
        text.chars()
            .map(|c| {
                if rng.gen::<f64>() >= cfg.sub_prob {
                    return c;
                }
                if rng.gen::<f64>() < cfg.neighbor_prob {
                    let neighbors: Vec<char> = net
                        .neighbors(c)
                        .into_iter()
                        .map(|(nc, _)| nc)
                        .filter(|&nc| nc != c)
                        .collect();
                    if !neighbors.is_empty() {
                        return neighbors[rng.gen_range(0..neighbors.len())];
                    }
                }
                near_miss(c, rng).unwrap_or(c)
            })
            .collect()
    };

    let split =
        |count: usize, drift_frac: f64, rng: &mut ChaCha8Rng| -> Result<Vec<LabeledSample>> {
            let mut out = Vec::with_capacity(count);
            for i in 0..count {
                let is_spam = i % 2 == 0;
                let mut text = make_sentence(is_spam, rng);
                if is_spam && rng.gen::<f64>() < drift_frac {
                    text = drift(&text, rng);
                }
                out.push(LabeledSample::new(text, u8::from(is_spam))?);
            }
            out.shuffle(rng);
            Ok(out)
        };

    Ok(SynthCorpus {
        train: split(cfg.n_train, cfg.drift_train, &mut rng)?,
        val: split(cfg.n_val, cfg.drift_eval, &mut rng)?,
        test: split(cfg.n_test, cfg.drift_eval, &mut rng)?,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::charsim::parse_dictionary_str;

    #[test]
    fn dictionary_is_deterministic_and_parsable() {
        let a = synth_dictionary(200, 4, 9);
        let b = synth_dictionary(200, 4, 9);
        assert_eq!(a.len(), 200);
        assert_eq!(a, b);
        let text = dictionary_file_text(&a);
        let parsed = parse_dictionary_str(&text, "synth").unwrap();
        assert_eq!(parsed.len(), 200);
        // All characters unique and Chinese.
        let net = SimilarityNetwork::build(parsed, 0.7).unwrap();
        assert_eq!(net.len(), 200);
    }

    #[test]
    fn clusters_give_nontrivial_neighbor_sets() {
        let records = synth_dictionary(200, 4, 9);
        let net = SimilarityNetwork::build(records, 0.7).unwrap();
        let with_peers =
            net.records().iter().filter(|r| net.neighbors(r.ch).len() > 1).count();
        assert!(with_peers > 100, "only {with_peers} characters have non-self neighbors");
    }

    #[test]
    fn corpus_is_balanced_and_deterministic() {
        let records = synth_dictionary(200, 4, 9);
        let net = SimilarityNetwork::build(records.clone(), 0.7).unwrap();
        let cfg = SynthConfig { n_train: 200, n_val: 60, n_test: 60, ..Default::default() };
        let a = synth_corpus(&records, &net, &cfg).unwrap();
        let b = synth_corpus(&records, &net, &cfg).unwrap();
        assert_eq!(a.train, b.train);
        assert_eq!(a.test, b.test);
        let spam = a.train.iter().filter(|s| s.is_spam()).count();
        assert_eq!(spam, 100);
        for s in a.train.iter().chain(&a.val).chain(&a.test) {
            assert!(!s.text.is_empty());
        }
    }

    #[test]
    fn eval_drift_introduces_characters_unseen_in_training() {
        let records = synth_dictionary(200, 4, 9);
        let net = SimilarityNetwork::build(records.clone(), 0.7).unwrap();
        let cfg = SynthConfig {
            n_train: 400,
            n_val: 100,
            n_test: 100,
            drift_train: 0.0,
            drift_eval: 1.0,
            ..Default::default()
        };
        let c = synth_corpus(&records, &net, &cfg).unwrap();
        let train_chars: std::collections::HashSet<char> =
            c.train.iter().flat_map(|s| s.text.chars()).collect();
        let novel: usize = c
            .test
            .iter()
            .filter(|s| s.is_spam())
            .flat_map(|s| s.text.chars())
            .filter(|ch| !train_chars.contains(ch))
            .count();
        assert!(novel > 50, "drift produced only {novel} unseen characters");
        // Normal sentences never drift.
        let normal_novel: usize = c
            .test
            .iter()
            .filter(|s| !s.is_spam())
            .flat_map(|s| s.text.chars())
            .filter(|ch| !train_chars.contains(ch))
            .count();
        assert_eq!(normal_novel, 0);
    }
}
