//! Character similarity network.
//!
//! Chinese characters are described by a glyph code (structure category,
//! four-corner digits, stroke count) and a pronunciation code (pinyin
//! initial, final, tone). Pairwise similarity is the maximum of the glyph
//! and pronunciation scores, and the network keeps, for every character,
//! the set of characters whose similarity exceeds a threshold `rho`.

use std::collections::HashMap;
use std::fmt::Write as _;
use std::io::{BufRead, BufReader};
use std::path::Path;

use crate::error::{Error, Result};

/// Weight of the structure category in glyph similarity.
pub const W_STRUCT: f64 = 0.2;
/// Weight of the four-corner digits in glyph similarity.
pub const W_CORNER: f64 = 0.6;
/// Weight of the stroke-count term in glyph similarity.
pub const W_STROKE: f64 = 0.2;

/// Weight of the initial in pronunciation similarity.
pub const W_INITIAL: f64 = 0.4;
/// Weight of the final in pronunciation similarity.
pub const W_FINAL: f64 = 0.4;
/// Weight of the tone in pronunciation similarity.
pub const W_TONE: f64 = 0.2;

/// Default neighbor threshold.
pub const DEFAULT_RHO: f64 = 0.7;

/// Glyph description: structure category, four-corner code (4 corners plus
/// the supplementary digit), stroke count.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct GlyphCode {
    pub structure: String,
    pub corners: [u8; 5],
    pub strokes: u32,
}

impl GlyphCode {
    pub fn new(structure: impl Into<String>, corners: [u8; 5], strokes: u32) -> Result<Self> {
        if corners.iter().any(|&d| d > 9) {
            return Err(Error::Config("corner digits must be 0-9".into()));
        }
        if strokes == 0 {
            return Err(Error::Config("stroke count must be >= 1".into()));
        }
        Ok(GlyphCode { structure: structure.into(), corners, strokes })
    }
}

/// Pinyin description: initial (may be empty), final, tone 0-4 (0 = neutral).
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PronCode {
    pub initial: String,
    pub final_: String,
    pub tone: u8,
}

impl PronCode {
    pub fn new(initial: impl Into<String>, final_: impl Into<String>, tone: u8) -> Result<Self> {
        let final_ = final_.into();
        if final_.is_empty() {
            return Err(Error::Config("pinyin final must be non-empty".into()));
        }
        if tone > 4 {
            return Err(Error::Config(format!("tone must be 0-4, got {tone}")));
        }
        Ok(PronCode { initial: initial.into(), final_, tone })
    }
}

/// Pinyin initials, longest first so `zh` wins over `z`.
const INITIALS: &[&str] = &[
    "zh", "ch", "sh", "b", "p", "m", "f", "d", "t", "n", "l", "g", "k", "h", "j", "q", "x", "r",
    "z", "c", "s", "y", "w",
];

/// Split a syllable like `wei1` into a [`PronCode`]. A trailing digit is the
/// tone; without one the tone is neutral (0).
pub fn parse_pinyin(s: &str) -> Result<PronCode> {
    let s = s.trim();
    if s.is_empty() {
        return Err(Error::Config("empty pinyin".into()));
    }
    let (body, tone) = match s.chars().last().and_then(|c| c.to_digit(10)) {
        Some(d) => (&s[..s.len() - 1], d as u8),
        None => (s, 0),
    };
    if tone > 4 {
        return Err(Error::Config(format!("tone must be 0-4 in {s:?}")));
    }
    let lower = body.to_lowercase();
    let initial = INITIALS.iter().find(|&&i| lower.starts_with(i)).copied().unwrap_or("");
    let final_ = &lower[initial.len()..];
    PronCode::new(initial, final_, tone)
}

/// A dictionary character with its feature codes and corpus frequency.
#[derive(Debug, Clone, PartialEq)]
pub struct CharRecord {
    pub ch: char,
    pub glyph: Option<GlyphCode>,
    pub pron: Option<PronCode>,
    pub freq: f64,
}

impl CharRecord {
    /// A record with neither feature family takes part in no similarity
    /// computation.
    pub fn is_chinese(&self) -> bool {
        self.glyph.is_some() || self.pron.is_some()
    }
}

/// Glyph similarity: weighted structure/corner/stroke agreement in [0,1].
/// Symmetric; 1 exactly when the codes are identical.
pub fn glyph_similarity(a: &GlyphCode, b: &GlyphCode) -> f64 {
    let structure = if a.structure == b.structure { 1.0 } else { 0.0 };
    let matching = a.corners.iter().zip(&b.corners).filter(|(x, y)| x == y).count();
    let corners = matching as f64 / 5.0;
    let max_strokes = a.strokes.max(b.strokes) as f64;
    let delta = (a.strokes as f64 - b.strokes as f64).abs();
    let strokes = (1.0 - delta / max_strokes).clamp(0.0, 1.0);
    W_STRUCT * structure + W_CORNER * corners + W_STROKE * strokes
}

/// Pronunciation similarity: weighted initial/final/tone agreement in [0,1].
pub fn pron_similarity(a: &PronCode, b: &PronCode) -> f64 {
    let initial = if a.initial == b.initial { 1.0 } else { 0.0 };
    let final_ = if a.final_ == b.final_ { 1.0 } else { 0.0 };
    let tone = if a.tone == b.tone { 1.0 } else { 0.0 };
    W_INITIAL * initial + W_FINAL * final_ + W_TONE * tone
}

/// Combined similarity of two records: max of the glyph and pronunciation
/// scores. A feature family missing on either side contributes 0.
pub fn record_similarity(a: &CharRecord, b: &CharRecord) -> f64 {
    let g = match (&a.glyph, &b.glyph) {
        (Some(x), Some(y)) => glyph_similarity(x, y),
        _ => 0.0,
    };
    let p = match (&a.pron, &b.pron) {
        (Some(x), Some(y)) => pron_similarity(x, y),
        _ => 0.0,
    };
    g.max(p)
}

/// Thresholded neighbor graph over a character repository.
///
/// Immutable once built; safe to share across threads for reads.
#[derive(Debug, Clone)]
pub struct SimilarityNetwork {
    records: Vec<CharRecord>,
    index: HashMap<char, usize>,
    rho: f64,
    /// Per record: (record index, similarity) pairs with sim > rho,
    /// sorted by index. Symmetric by construction.
    neighbors: Vec<Vec<(usize, f64)>>,
}

impl SimilarityNetwork {
    /// Build the network by exhaustive pairwise comparison.
    /// Deterministic for a fixed record order.
    pub fn build(records: Vec<CharRecord>, rho: f64) -> Result<Self> {
        if !(0.0..=1.0).contains(&rho) {
            return Err(Error::InvalidThreshold(rho));
        }
        if records.is_empty() {
            return Err(Error::EmptyCorpus);
        }
        let mut index = HashMap::new();
        for (i, r) in records.iter().enumerate() {
            if index.insert(r.ch, i).is_some() {
                return Err(Error::DuplicateChar(r.ch));
            }
        }
        let n = records.len();
        let mut neighbors = vec![Vec::new(); n];
        for i in 0..n {
            if !records[i].is_chinese() {
                continue;
            }
            for j in i..n {
                if !records[j].is_chinese() {
                    continue;
                }
                let sim = record_similarity(&records[i], &records[j]);
                if sim > rho {
                    neighbors[i].push((j, sim));
                    if j != i {
                        neighbors[j].push((i, sim));
                    }
                }
            }
        }
        for list in neighbors.iter_mut() {
            list.sort_by_key(|&(j, _)| j);
        }
        Ok(SimilarityNetwork { records, index, rho, neighbors })
    }

    pub fn rho(&self) -> f64 {
        self.rho
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    pub fn records(&self) -> &[CharRecord] {
        &self.records
    }

    pub fn record(&self, c: char) -> Option<&CharRecord> {
        self.index.get(&c).map(|&i| &self.records[i])
    }

    pub fn contains(&self, c: char) -> bool {
        self.index.contains_key(&c)
    }

    /// Similarity of two repository characters. Errors if either is unknown.
    pub fn similarity(&self, a: char, b: char) -> Result<f64> {
        let ra = self.record(a).ok_or(Error::UnknownChar(a))?;
        let rb = self.record(b).ok_or(Error::UnknownChar(b))?;
        Ok(record_similarity(ra, rb))
    }

    /// Similarity treating characters outside the repository as maximally
    /// dissimilar (0) instead of erroring.
    pub fn similarity_or_zero(&self, a: char, b: char) -> f64 {
        match (self.record(a), self.record(b)) {
            (Some(ra), Some(rb)) => record_similarity(ra, rb),
            _ => 0.0,
        }
    }

    /// Neighbors of `c` as (char, similarity) pairs, empty for unknown or
    /// non-Chinese characters.
    pub fn neighbors(&self, c: char) -> Vec<(char, f64)> {
        match self.index.get(&c) {
            Some(&i) => {
                self.neighbors[i].iter().map(|&(j, s)| (self.records[j].ch, s)).collect()
            }
            None => Vec::new(),
        }
    }

    /// Serialize to the network artifact format: a header carrying `rho`,
    /// then one dictionary-style row per record with the normalized
    /// frequency. Loading rebuilds the neighbor sets, which is canonical by
    /// construction.
    pub fn to_artifact_string(&self) -> String {
        let mut out = String::new();
        out.push_str("# gcc-spam simnet v1\n");
        let _ = writeln!(out, "rho={:e}", self.rho);
        for r in &self.records {
            let glyph = match &r.glyph {
                Some(g) => format!(
                    "{}\t{}{}{}{}{}\t{}",
                    g.structure,
                    g.corners[0],
                    g.corners[1],
                    g.corners[2],
                    g.corners[3],
                    g.corners[4],
                    g.strokes
                ),
                None => "-\t-\t-".to_string(),
            };
            let pinyin = match &r.pron {
                Some(p) => format!("{}{}{}", p.initial, p.final_, p.tone),
                None => "-".to_string(),
            };
            let _ = writeln!(out, "{}\t{}\t{}\t{:e}", r.ch, glyph, pinyin, r.freq);
        }
        out
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_artifact_string())
            .map_err(|e| Error::io(path.display().to_string(), e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| Error::io(path.display().to_string(), e))?;
        Self::from_artifact_str(&text, &path.display().to_string())
    }

    pub fn from_artifact_str(text: &str, origin: &str) -> Result<Self> {
        let mut lines = text.lines().enumerate();
        let header = lines.next().map(|(_, l)| l).unwrap_or("");
        if header.trim() != "# gcc-spam simnet v1" {
            return Err(Error::parse(origin, 1, "missing simnet header"));
        }
        let (ln, rho_line) =
            lines.next().ok_or_else(|| Error::parse(origin, 2, "missing rho line"))?;
        let rho: f64 = rho_line
            .strip_prefix("rho=")
            .and_then(|v| v.parse().ok())
            .ok_or_else(|| Error::parse(origin, ln + 1, "bad rho line"))?;
        let mut records = Vec::new();
        for (ln, line) in lines {
            if line.trim().is_empty() || line.starts_with('#') {
                continue;
            }
            let rec = parse_record_fields(line, origin, ln + 1, FreqField::Normalized)?;
            records.push(rec);
        }
        Self::build(records, rho)
    }
}

enum FreqField {
    /// Raw counts, normalized by the caller afterwards.
    RawCount,
    /// Already-normalized [0,1) float.
    Normalized,
}

fn parse_record_fields(
    line: &str,
    origin: &str,
    ln: usize,
    freq_kind: FreqField,
) -> Result<CharRecord> {
    let fields: Vec<&str> = line.split('\t').collect();
    if fields.len() != 6 {
        return Err(Error::parse(origin, ln, format!("expected 6 fields, got {}", fields.len())));
    }
    let mut chars = fields[0].chars();
    let ch = chars.next().ok_or_else(|| Error::parse(origin, ln, "empty character field"))?;
    if chars.next().is_some() {
        return Err(Error::parse(origin, ln, "character field must hold one character"));
    }

    let glyph = if fields[1] == "-" && fields[2] == "-" && fields[3] == "-" {
        None
    } else {
        let corners_str = fields[2];
        if corners_str.len() != 5 || !corners_str.bytes().all(|b| b.is_ascii_digit()) {
            return Err(Error::parse(origin, ln, "corners must be exactly 5 digits"));
        }
        let mut corners = [0u8; 5];
        for (i, b) in corners_str.bytes().enumerate() {
            corners[i] = b - b'0';
        }
        let strokes: u32 = fields[3]
            .parse()
            .map_err(|_| Error::parse(origin, ln, "bad stroke count"))?;
        Some(
            GlyphCode::new(fields[1], corners, strokes)
                .map_err(|e| Error::parse(origin, ln, e.to_string()))?,
        )
    };

    let pron = if fields[4] == "-" {
        None
    } else {
        // Polyphonic characters list alternatives comma-separated; the first
        // listed pronunciation wins.
        let first = fields[4].split(',').next().unwrap();
        Some(parse_pinyin(first).map_err(|e| Error::parse(origin, ln, e.to_string()))?)
    };

    let freq = match freq_kind {
        FreqField::RawCount => {
            // Stored as raw count here; normalization happens over the file.
            let raw: u64 =
                fields[5].parse().map_err(|_| Error::parse(origin, ln, "bad raw count"))?;
            raw as f64
        }
        FreqField::Normalized => {
            let f: f64 =
                fields[5].parse().map_err(|_| Error::parse(origin, ln, "bad frequency"))?;
            if !(0.0..1.0).contains(&f) {
                return Err(Error::parse(origin, ln, "frequency must lie in [0,1)"));
            }
            f
        }
    };

    Ok(CharRecord { ch, glyph, pron, freq })
}

/// Load a dictionary file: one record per line,
/// `char<TAB>structure<TAB>corners<TAB>strokes<TAB>pinyin<TAB>raw_count`.
/// `#`-prefixed lines are comments. Raw counts are normalized to [0,1)
/// by dividing by (total + 1).
pub fn load_dictionary(path: &Path) -> Result<Vec<CharRecord>> {
    let file =
        std::fs::File::open(path).map_err(|e| Error::io(path.display().to_string(), e))?;
    let origin = path.display().to_string();
    let mut records = Vec::new();
    for (i, line) in BufReader::new(file).lines().enumerate() {
        let line = line.map_err(|e| Error::io(origin.clone(), e))?;
        if line.trim().is_empty() || line.starts_with('#') {
            continue;
        }
        records.push(parse_record_fields(&line, &origin, i + 1, FreqField::RawCount)?);
    }
    let total: f64 = records.iter().map(|r| r.freq).sum();
    for r in records.iter_mut() {
        r.freq /= total + 1.0;
    }
    Ok(records)
}

/// Parse dictionary text directly (same format as [`load_dictionary`]).
pub fn parse_dictionary_str(text: &str, origin: &str) -> Result<Vec<CharRecord>> {
    let mut records = Vec::new();
    for (i, line) in text.lines().enumerate() {
        if line.trim().is_empty() || line.starts_with('#') {
            continue;
        }
        records.push(parse_record_fields(line, origin, i + 1, FreqField::RawCount)?);
    }
    let total: f64 = records.iter().map(|r| r.freq).sum();
    for r in records.iter_mut() {
        r.freq /= total + 1.0;
    }
    Ok(records)
}

/// CJK Unified Ideographs (base block plus extension A). Characters outside
/// these ranges are never masked by the generator and never enter the
/// similarity penalty set.
pub fn is_chinese_char(c: char) -> bool {
    matches!(c, '\u{4E00}'..='\u{9FFF}' | '\u{3400}'..='\u{4DBF}')
}

#[cfg(test)]
mod tests {
    use super::*;

    fn glyph(structure: &str, corners: [u8; 5], strokes: u32) -> GlyphCode {
        GlyphCode::new(structure, corners, strokes).unwrap()
    }

    fn rec(ch: char, g: Option<GlyphCode>, p: Option<&str>, freq: f64) -> CharRecord {
        CharRecord { ch, glyph: g, pron: p.map(|s| parse_pinyin(s).unwrap()), freq }
    }

    #[test]
    fn glyph_similarity_identity() {
        let a = glyph("left-right", [1, 2, 3, 4, 5], 9);
        assert!((glyph_similarity(&a, &a) - 1.0).abs() < 1e-12);
    }

    #[test]
    fn glyph_similarity_structure_and_strokes_only() {
        // structure match, 0/5 corners, equal strokes: 0.2 + 0.2 = 0.4
        let a = glyph("left-right", [1, 2, 3, 4, 5], 10);
        let b = glyph("left-right", [6, 7, 8, 9, 0], 10);
        assert!((glyph_similarity(&a, &b) - 0.4).abs() < 1e-12);
    }

    #[test]
    fn glyph_similarity_corners_and_half_strokes() {
        // structure mismatch, 5/5 corners, strokes 4 vs 8: 0.6 + 0.2*(1-4/8) = 0.7
        let a = glyph("left-right", [1, 2, 3, 4, 5], 4);
        let b = glyph("up-down", [1, 2, 3, 4, 5], 8);
        assert!((glyph_similarity(&a, &b) - 0.7).abs() < 1e-12);
    }

    #[test]
    fn pron_similarity_cases() {
        let a = parse_pinyin("wei1").unwrap();
        assert!((pron_similarity(&a, &a) - 1.0).abs() < 1e-12);
        let b = parse_pinyin("wei4").unwrap();
        assert!((pron_similarity(&a, &b) - 0.8).abs() < 1e-12);
        let c = parse_pinyin("ba3").unwrap();
        assert!((pron_similarity(&a, &c) - 0.0).abs() < 1e-12);
    }

    #[test]
    fn pinyin_split_initials() {
        let p = parse_pinyin("zhang1").unwrap();
        assert_eq!(p.initial, "zh");
        assert_eq!(p.final_, "ang");
        assert_eq!(p.tone, 1);
        let p = parse_pinyin("an4").unwrap();
        assert_eq!(p.initial, "");
        assert_eq!(p.final_, "an");
        let p = parse_pinyin("en").unwrap();
        assert_eq!(p.tone, 0);
    }

    #[test]
    fn similarity_takes_the_max() {
        // sim_g = 0.4 (structure+strokes), sim_p = 0.8 (tone differs)
        let a = rec('a', Some(glyph("x", [1, 2, 3, 4, 5], 10)), Some("wei1"), 0.1);
        let b = rec('b', Some(glyph("x", [6, 7, 8, 9, 0], 10)), Some("wei4"), 0.1);
        assert!((record_similarity(&a, &b) - 0.8).abs() < 1e-12);
    }

    #[test]
    fn missing_family_contributes_zero() {
        let a = rec('a', Some(glyph("x", [1, 2, 3, 4, 5], 10)), None, 0.1);
        let b = rec('b', Some(glyph("x", [1, 2, 3, 4, 5], 10)), Some("wei1"), 0.1);
        assert!((record_similarity(&a, &b) - 1.0).abs() < 1e-12);
        let c = rec('c', None, Some("wei1"), 0.1);
        // a has no pron, c has no glyph: both families drop out.
        assert_eq!(record_similarity(&a, &c), 0.0);
    }

    fn ten_records() -> Vec<CharRecord> {
        vec![
            rec('微', Some(glyph("left-middle-right", [2, 8, 2, 5, 3], 13)), Some("wei1"), 0.12),
            rec('徽', Some(glyph("left-middle-right", [2, 8, 2, 5, 3], 17)), Some("hui1"), 0.02),
            rec('薇', Some(glyph("up-down", [4, 4, 2, 5, 3], 16)), Some("wei1"), 0.008),
            rec('维', Some(glyph("left-right", [2, 1, 9, 1, 4], 11)), Some("wei2"), 0.08),
            rec('唯', Some(glyph("left-right", [6, 1, 0, 1, 4], 11)), Some("wei2"), 0.032),
            rec('喂', Some(glyph("left-right", [6, 6, 0, 3, 2], 12)), Some("wei4"), 0.024),
            rec('信', Some(glyph("left-right", [2, 0, 2, 6, 1], 9)), Some("xin4"), 0.16),
            rec('言', Some(glyph("single", [0, 0, 6, 0, 1], 7)), Some("yan2"), 0.1),
            rec('你', Some(glyph("left-right", [2, 7, 2, 3, 2], 7)), Some("ni3"), 0.2),
            rec('好', Some(glyph("left-right", [4, 7, 4, 4, 7], 6)), Some("hao3"), 0.18),
        ]
    }

    #[test]
    fn pairwise_matrix_matches_brute_force() {
        let records = ten_records();
        let net = SimilarityNetwork::build(records.clone(), 0.7).unwrap();
        for a in &records {
            for b in &records {
                let expected = record_similarity(a, b);
                let got = net.similarity(a.ch, b.ch).unwrap();
                assert!((expected - got).abs() < 1e-15);
                // Symmetry.
                let rev = net.similarity(b.ch, a.ch).unwrap();
                assert!((got - rev).abs() < 1e-15);
                assert!((0.0..=1.0).contains(&got));
            }
            assert!((net.similarity(a.ch, a.ch).unwrap() - 1.0).abs() < 1e-15);
        }
    }

    #[test]
    fn network_matches_brute_force_neighbor_sets() {
        let records = ten_records();
        let rho = 0.7;
        let net = SimilarityNetwork::build(records.clone(), rho).unwrap();
        for a in &records {
            let mut expected: Vec<char> = records
                .iter()
                .filter(|b| record_similarity(a, b) > rho)
                .map(|b| b.ch)
                .collect();
            expected.sort();
            let mut got: Vec<char> = net.neighbors(a.ch).into_iter().map(|(c, _)| c).collect();
            got.sort();
            assert_eq!(expected, got, "neighbor mismatch for {}", a.ch);
        }
    }

    #[test]
    fn self_is_neighbor_below_one() {
        let records = ten_records();
        let net = SimilarityNetwork::build(records, 0.5).unwrap();
        for r in net.records() {
            assert!(net.neighbors(r.ch).iter().any(|&(c, s)| c == r.ch && (s - 1.0).abs() < 1e-15));
        }
    }

    #[test]
    fn rho_one_empties_all_neighbor_sets() {
        let records = ten_records();
        let net = SimilarityNetwork::build(records, 1.0).unwrap();
        for r in net.records() {
            assert!(net.neighbors(r.ch).is_empty());
        }
    }

    #[test]
    fn threshold_monotonicity() {
        let records = ten_records();
        let lo = SimilarityNetwork::build(records.clone(), 0.4).unwrap();
        let hi = SimilarityNetwork::build(records, 0.8).unwrap();
        for r in lo.records() {
            let lo_set: std::collections::HashSet<char> =
                lo.neighbors(r.ch).into_iter().map(|(c, _)| c).collect();
            for (c, _) in hi.neighbors(r.ch) {
                assert!(lo_set.contains(&c), "N_0.8 not a subset of N_0.4 for {}", r.ch);
            }
        }
    }

    #[test]
    fn build_rejects_bad_inputs() {
        let records = ten_records();
        assert!(matches!(
            SimilarityNetwork::build(records.clone(), 1.5),
            Err(Error::InvalidThreshold(_))
        ));
        let mut dup = records.clone();
        dup.push(records[0].clone());
        assert!(matches!(SimilarityNetwork::build(dup, 0.7), Err(Error::DuplicateChar(_))));
    }

    #[test]
    fn unknown_char_error_names_the_character() {
        let net = SimilarityNetwork::build(ten_records(), 0.7).unwrap();
        match net.similarity('微', '龍') {
            Err(Error::UnknownChar(c)) => assert_eq!(c, '龍'),
            other => panic!("expected UnknownChar, got {other:?}"),
        }
    }

    #[test]
    fn dictionary_parse_and_normalization() {
        let text = "# comment\n\
                    微\tleft-middle-right\t28253\t13\twei1\t30\n\
                    喂\tleft-right\t66032\t12\twei4,wei2\t6\n\
                    A\t-\t-\t-\t-\t4\n";
        let records = parse_dictionary_str(text, "test").unwrap();
        assert_eq!(records.len(), 3);
        let total = 40.0;
        assert!((records[0].freq - 30.0 / (total + 1.0)).abs() < 1e-12);
        // First listed pronunciation wins for polyphones.
        assert_eq!(records[1].pron.as_ref().unwrap().tone, 4);
        assert!(!records[2].is_chinese());
        assert!((0.0..1.0).contains(&records[2].freq));
    }

    #[test]
    fn dictionary_raw_equal_to_total_stays_below_one() {
        let text = "微\tleft-middle-right\t28253\t13\twei1\t100\n\
                    喂\tleft-right\t66032\t12\twei4\t0\n";
        let records = parse_dictionary_str(text, "test").unwrap();
        assert!((records[0].freq - 100.0 / 101.0).abs() < 1e-12);
        assert!(records[0].freq < 1.0);
    }

    #[test]
    fn empty_dictionary_gives_empty_list() {
        let records = parse_dictionary_str("", "test").unwrap();
        assert!(records.is_empty());
    }

    #[test]
    fn parse_error_carries_line_number() {
        let text = "微\tleft-middle-right\t28253\t13\twei1\t30\n\
                    喂\tbad-line\n";
        match parse_dictionary_str(text, "test") {
            Err(Error::Parse { line, .. }) => assert_eq!(line, 2),
            other => panic!("expected parse error, got {other:?}"),
        }
    }

    #[test]
    fn artifact_round_trip_preserves_network() {
        let records = ten_records();
        let net = SimilarityNetwork::build(records, 0.7).unwrap();
        let text = net.to_artifact_string();
        let loaded = SimilarityNetwork::from_artifact_str(&text, "mem").unwrap();
        assert_eq!(net.rho(), loaded.rho());
        assert_eq!(net.len(), loaded.len());
        for r in net.records() {
            assert_eq!(net.neighbors(r.ch), loaded.neighbors(r.ch));
            assert_eq!(net.record(r.ch).unwrap().freq, loaded.record(r.ch).unwrap().freq);
        }
    }
}
