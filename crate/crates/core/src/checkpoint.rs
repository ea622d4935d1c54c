//! Model checkpoints: a single sectioned text archive per model.
//!
//! Layout: a header line, a `[meta]` key-value block, then model-specific
//! sections. Embedded sub-documents (the embedding table, the similarity
//! network, vocabularies) are written one line each prefixed with `|` so
//! their content can never collide with section headers. Floats use the
//! shortest round-trip form, so a load reproduces the saved model exactly.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::Path;

use crate::charsim::SimilarityNetwork;
use crate::discriminator::DiscriminatorModel;
use crate::embeddings::{EmbeddingTable, Tok};
use crate::error::{Error, Result};
use crate::generator::{CandidateMode, GeneratorConfig, GeneratorModel};
use crate::tensor::Matrix;

const HEADER: &str = "gcc-spam checkpoint v1";

/// Metadata stored with a discriminator checkpoint.
#[derive(Debug, Clone, PartialEq)]
pub struct DiscMeta {
    pub tau: f64,
    pub lambda_cl: f64,
    pub rho: f64,
    pub dim: usize,
    pub seed: u64,
    pub threshold: f64,
}

struct Section {
    name: String,
    lines: Vec<String>,
}

fn split_sections(text: &str, origin: &str) -> Result<Vec<Section>> {
    let mut lines = text.lines();
    match lines.next() {
        Some(h) if h.trim() == HEADER => {}
        _ => return Err(Error::Checkpoint(format!("{origin}: missing checkpoint header"))),
    }
    let mut sections: Vec<Section> = Vec::new();
    for line in lines {
        if line.starts_with('[') && line.ends_with(']') {
            sections.push(Section { name: line[1..line.len() - 1].to_string(), lines: Vec::new() });
        } else if let Some(s) = sections.last_mut() {
            s.lines.push(line.to_string());
        } else if !line.trim().is_empty() {
            return Err(Error::Checkpoint(format!("{origin}: content before first section")));
        }
    }
    Ok(sections)
}

fn parse_kv(lines: &[String]) -> BTreeMap<String, String> {
    let mut map = BTreeMap::new();
    for line in lines {
        if let Some((k, v)) = line.split_once('=') {
            map.insert(k.trim().to_string(), v.trim().to_string());
        }
    }
    map
}

fn meta_f64(map: &BTreeMap<String, String>, key: &str) -> Result<f64> {
    map.get(key)
        .and_then(|v| v.parse().ok())
        .ok_or_else(|| Error::Checkpoint(format!("missing or bad meta key {key:?}")))
}

fn meta_usize(map: &BTreeMap<String, String>, key: &str) -> Result<usize> {
    map.get(key)
        .and_then(|v| v.parse().ok())
        .ok_or_else(|| Error::Checkpoint(format!("missing or bad meta key {key:?}")))
}

fn embedded(lines: &[String]) -> String {
    let mut out = String::new();
    for line in lines {
        if let Some(rest) = line.strip_prefix('|') {
            out.push_str(rest);
            out.push('\n');
        }
    }
    out
}

fn push_embedded(out: &mut String, doc: &str) {
    for line in doc.lines() {
        out.push('|');
        out.push_str(line);
        out.push('\n');
    }
}

fn write_matrix(out: &mut String, name: &str, m: &Matrix) {
    let _ = writeln!(out, "[param {} {} {}]", name, m.rows(), m.cols());
    for r in 0..m.rows() {
        let mut line = String::new();
        for (c, v) in m.row(r).iter().enumerate() {
            if c > 0 {
                line.push(' ');
            }
            let _ = write!(line, "{v:e}");
        }
        out.push_str(&line);
        out.push('\n');
    }
}

fn parse_matrix(section: &Section) -> Result<(String, Matrix)> {
    let parts: Vec<&str> = section.name.split_whitespace().collect();
    if parts.len() != 4 || parts[0] != "param" {
        return Err(Error::Checkpoint(format!("bad param section {:?}", section.name)));
    }
    let name = parts[1].to_string();
    let rows: usize =
        parts[2].parse().map_err(|_| Error::Checkpoint("bad param rows".into()))?;
    let cols: usize =
        parts[3].parse().map_err(|_| Error::Checkpoint("bad param cols".into()))?;
    let mut data = Vec::with_capacity(rows * cols);
    for line in &section.lines {
        if line.trim().is_empty() {
            continue;
        }
        for tok in line.split_whitespace() {
            let v: f64 =
                tok.parse().map_err(|_| Error::Checkpoint("bad float in param".into()))?;
            data.push(v);
        }
    }
    if data.len() != rows * cols {
        return Err(Error::Checkpoint(format!(
            "param {name}: expected {} values, got {}",
            rows * cols,
            data.len()
        )));
    }
    Ok((name, Matrix::from_vec(rows, cols, data)))
}

/// Serialize a discriminator with its metadata block.
pub fn discriminator_to_string(model: &DiscriminatorModel, rho: f64, seed: u64) -> String {
    let mut out = String::new();
    out.push_str(HEADER);
    out.push('\n');
    out.push_str("[meta]\n");
    out.push_str("kind = discriminator\n");
    out.push_str("schema = 1\n");
    let _ = writeln!(out, "d = {}", model.table.dim);
    let _ = writeln!(out, "tau = {:e}", model.tau);
    let _ = writeln!(out, "lambda_cl = {:e}", model.lambda_cl);
    let _ = writeln!(out, "rho = {rho:e}");
    let _ = writeln!(out, "seed = {seed}");
    let _ = writeln!(out, "threshold = {:e}", model.threshold);
    out.push_str("[head]\n");
    let mut wline = String::from("w =");
    for v in model.head_w().data() {
        let _ = write!(wline, " {v:e}");
    }
    out.push_str(&wline);
    out.push('\n');
    let _ = writeln!(out, "b = {:e}", model.head_b());
    out.push_str("[embeddings]\n");
    push_embedded(&mut out, &model.table.to_table_string(None));
    out
}

pub fn save_discriminator(
    path: &Path,
    model: &DiscriminatorModel,
    rho: f64,
    seed: u64,
) -> Result<()> {
    std::fs::write(path, discriminator_to_string(model, rho, seed))
        .map_err(|e| Error::io(path.display().to_string(), e))
}

pub fn discriminator_from_str(text: &str, origin: &str) -> Result<(DiscriminatorModel, DiscMeta)> {
    let sections = split_sections(text, origin)?;
    let meta_sec = sections
        .iter()
        .find(|s| s.name == "meta")
        .ok_or_else(|| Error::Checkpoint("missing [meta]".into()))?;
    let meta = parse_kv(&meta_sec.lines);
    if meta.get("kind").map(String::as_str) != Some("discriminator") {
        return Err(Error::Checkpoint("not a discriminator checkpoint".into()));
    }
    let dm = DiscMeta {
        tau: meta_f64(&meta, "tau")?,
        lambda_cl: meta_f64(&meta, "lambda_cl")?,
        rho: meta_f64(&meta, "rho")?,
        dim: meta_usize(&meta, "d")?,
        seed: meta_usize(&meta, "seed")? as u64,
        threshold: meta_f64(&meta, "threshold")?,
    };
    let head = sections
        .iter()
        .find(|s| s.name == "head")
        .ok_or_else(|| Error::Checkpoint("missing [head]".into()))?;
    let kv = parse_kv(&head.lines);
    let w_vals: Vec<f64> = kv
        .get("w")
        .ok_or_else(|| Error::Checkpoint("missing head weights".into()))?
        .split_whitespace()
        .map(|t| t.parse::<f64>())
        .collect::<std::result::Result<_, _>>()
        .map_err(|_| Error::Checkpoint("bad head weight float".into()))?;
    if w_vals.len() != dm.dim {
        return Err(Error::Checkpoint(format!(
            "head weight length {} does not match d={}",
            w_vals.len(),
            dm.dim
        )));
    }
    let b: f64 = kv
        .get("b")
        .and_then(|v| v.parse().ok())
        .ok_or_else(|| Error::Checkpoint("missing head bias".into()))?;
    let emb = sections
        .iter()
        .find(|s| s.name == "embeddings")
        .ok_or_else(|| Error::Checkpoint("missing [embeddings]".into()))?;
    let table = EmbeddingTable::parse_table_str(&embedded(&emb.lines), origin)?;
    if table.dim != dm.dim {
        return Err(Error::Checkpoint("embedding dim does not match meta".into()));
    }
    let w = Matrix::from_vec(dm.dim, 1, w_vals);
    let model = DiscriminatorModel::from_parts(
        table,
        w,
        Matrix::scalar(b),
        dm.lambda_cl,
        dm.tau,
        dm.threshold,
    )?;
    Ok((model, dm))
}

pub fn load_discriminator(path: &Path) -> Result<(DiscriminatorModel, DiscMeta)> {
    let text =
        std::fs::read_to_string(path).map_err(|e| Error::io(path.display().to_string(), e))?;
    discriminator_from_str(&text, &path.display().to_string())
}

/// Serialize a generator: config, vocabulary, similarity network, and every
/// parameter matrix.
pub fn generator_to_string(model: &GeneratorModel, seed: u64) -> String {
    let mut out = String::new();
    out.push_str(HEADER);
    out.push('\n');
    out.push_str("[meta]\n");
    out.push_str("kind = generator\n");
    out.push_str("schema = 1\n");
    let cfg = &model.cfg;
    let _ = writeln!(out, "model_dim = {}", cfg.model_dim);
    let _ = writeln!(out, "ff_dim = {}", cfg.ff_dim);
    let _ = writeln!(out, "layers = {}", cfg.layers);
    let _ = writeln!(out, "heads = {}", cfg.heads);
    let _ = writeln!(out, "lambda_sim = {:e}", cfg.lambda_sim);
    let _ = writeln!(out, "temperature = {:e}", cfg.temperature);
    let _ = writeln!(out, "learning_rate = {:e}", cfg.learning_rate);
    let _ = writeln!(
        out,
        "candidates = {}",
        match cfg.candidates {
            CandidateMode::FullVocab => "full",
            CandidateMode::Neighbors => "neighbors",
        }
    );
    let _ = writeln!(
        out,
        "force_mask_prob = {}",
        match model.force_mask_prob() {
            Some(p) => format!("{p:e}"),
            None => "none".to_string(),
        }
    );
    let _ = writeln!(out, "seed = {seed}");
    out.push_str("[vocab]\n");
    for t in model.vocab() {
        out.push('|');
        out.push_str(&t.as_text());
        out.push('\n');
    }
    out.push_str("[simnet]\n");
    push_embedded(&mut out, &model.net().to_artifact_string());
    for (name, m) in model.named_params() {
        write_matrix(&mut out, &name, m);
    }
    out
}

pub fn save_generator(path: &Path, model: &GeneratorModel, seed: u64) -> Result<()> {
    std::fs::write(path, generator_to_string(model, seed))
        .map_err(|e| Error::io(path.display().to_string(), e))
}

pub fn generator_from_str(text: &str, origin: &str) -> Result<GeneratorModel> {
    let sections = split_sections(text, origin)?;
    let meta_sec = sections
        .iter()
        .find(|s| s.name == "meta")
        .ok_or_else(|| Error::Checkpoint("missing [meta]".into()))?;
    let meta = parse_kv(&meta_sec.lines);
    if meta.get("kind").map(String::as_str) != Some("generator") {
        return Err(Error::Checkpoint("not a generator checkpoint".into()));
    }
    let candidates = match meta.get("candidates").map(String::as_str) {
        Some("full") => CandidateMode::FullVocab,
        Some("neighbors") => CandidateMode::Neighbors,
        other => {
            return Err(Error::Checkpoint(format!("bad candidates mode {other:?}")));
        }
    };
    let cfg = GeneratorConfig {
        model_dim: meta_usize(&meta, "model_dim")?,
        ff_dim: meta_usize(&meta, "ff_dim")?,
        layers: meta_usize(&meta, "layers")?,
        heads: meta_usize(&meta, "heads")?,
        lambda_sim: meta_f64(&meta, "lambda_sim")?,
        temperature: meta_f64(&meta, "temperature")?,
        learning_rate: meta_f64(&meta, "learning_rate")?,
        candidates,
    };
    let force = match meta.get("force_mask_prob").map(String::as_str) {
        Some("none") | None => None,
        Some(v) => Some(
            v.parse::<f64>()
                .map_err(|_| Error::Checkpoint("bad force_mask_prob".into()))?,
        ),
    };
    let vocab_sec = sections
        .iter()
        .find(|s| s.name == "vocab")
        .ok_or_else(|| Error::Checkpoint("missing [vocab]".into()))?;
    let mut vocab = Vec::new();
    for line in &vocab_sec.lines {
        if let Some(tok) = line.strip_prefix('|') {
            vocab.push(Tok::parse(tok).map_err(|e| Error::Checkpoint(e.to_string()))?);
        }
    }
    let simnet_sec = sections
        .iter()
        .find(|s| s.name == "simnet")
        .ok_or_else(|| Error::Checkpoint("missing [simnet]".into()))?;
    let net = SimilarityNetwork::from_artifact_str(&embedded(&simnet_sec.lines), origin)?;
    let mut params = Vec::new();
    for s in &sections {
        if s.name.starts_with("param ") {
            params.push(parse_matrix(s)?);
        }
    }
    GeneratorModel::from_parts(vocab, net, cfg, force, &params)
}

pub fn load_generator(path: &Path) -> Result<GeneratorModel> {
    let text =
        std::fs::read_to_string(path).map_err(|e| Error::io(path.display().to_string(), e))?;
    generator_from_str(&text, &path.display().to_string())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::charsim::{parse_pinyin, CharRecord, GlyphCode};
    use crate::discriminator::DiscriminatorConfig;
    use crate::embeddings::{train_base_vectors, SkipGramConfig};

    fn fixture() -> (DiscriminatorModel, GeneratorModel) {
        let chars: Vec<(char, &str)> =
            vec![('你', "ni3"), ('好', "hao3"), ('买', "mai3"), ('卖', "mai4")];
        let records: Vec<CharRecord> = chars
            .iter()
            .map(|&(c, py)| CharRecord {
                ch: c,
                glyph: Some(GlyphCode::new("left-right", [1, 2, 3, 4, 5], 8).unwrap()),
                pron: Some(parse_pinyin(py).unwrap()),
                freq: 0.1,
            })
            .collect();
        let net = SimilarityNetwork::build(records, 0.7).unwrap();
        let texts: Vec<String> = chars
            .iter()
            .flat_map(|&(c, _)| std::iter::repeat(c.to_string().repeat(3)).take(3))
            .collect();
        let base = train_base_vectors(
            &texts,
            &SkipGramConfig { dim: 6, epochs: 2, ..Default::default() },
        )
        .unwrap();
        let table = EmbeddingTable::build(&net, &base).unwrap();
        let disc = DiscriminatorModel::new(table.clone(), &DiscriminatorConfig::default(), 7)
            .unwrap();
        let gen = GeneratorModel::new(
            &table,
            &net,
            GeneratorConfig {
                model_dim: 8,
                ff_dim: 16,
                layers: 1,
                heads: 2,
                ..Default::default()
            },
            7,
        )
        .unwrap();
        (disc, gen)
    }

    #[test]
    fn discriminator_round_trip_is_exact() {
        let (disc, _) = fixture();
        let text = discriminator_to_string(&disc, 0.7, 42);
        let (loaded, meta) = discriminator_from_str(&text, "mem").unwrap();
        assert_eq!(meta.dim, disc.table.dim);
        assert_eq!(meta.seed, 42);
        assert_eq!(loaded.params_checksum(), disc.params_checksum());
        let p1 = disc.predict("你好买卖").unwrap();
        let p2 = loaded.predict("你好买卖").unwrap();
        assert_eq!(p1.to_bits(), p2.to_bits());
    }

    #[test]
    fn generator_round_trip_is_exact() {
        let (_, gen) = fixture();
        let text = generator_to_string(&gen, 42);
        let loaded = generator_from_str(&text, "mem").unwrap();
        assert_eq!(loaded.params_checksum(), gen.params_checksum());
        let a = gen.perturb("你好买卖", 5).unwrap();
        let b = loaded.perturb("你好买卖", 5).unwrap();
        assert_eq!(a.perturbed, b.perturbed);
        assert_eq!(a.logprob.to_bits(), b.logprob.to_bits());
    }

    #[test]
    fn force_mask_prob_survives_round_trip() {
        let (_, mut gen) = fixture();
        gen.set_force_mask_prob(Some(0.0)).unwrap();
        let text = generator_to_string(&gen, 1);
        let loaded = generator_from_str(&text, "mem").unwrap();
        assert_eq!(loaded.force_mask_prob(), Some(0.0));
        let t = loaded.perturb("你好", 9).unwrap();
        assert_eq!(t.original, t.perturbed);
    }

    #[test]
    fn wrong_kind_is_rejected() {
        let (disc, gen) = fixture();
        let dtext = discriminator_to_string(&disc, 0.7, 1);
        assert!(generator_from_str(&dtext, "mem").is_err());
        let gtext = generator_to_string(&gen, 1);
        assert!(discriminator_from_str(&gtext, "mem").is_err());
    }

    #[test]
    fn missing_header_is_rejected() {
        assert!(discriminator_from_str("not a checkpoint", "mem").is_err());
    }
}
