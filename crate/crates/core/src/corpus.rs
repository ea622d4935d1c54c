//! Labeled corpus I/O: `label<TAB>text` lines, label 0 (normal) or 1 (spam).

use std::io::{BufRead, BufReader};
use std::path::Path;

use crate::error::{Error, Result};

/// One labeled sentence. `label` is 1 for spam.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct LabeledSample {
    pub text: String,
    pub label: u8,
}

impl LabeledSample {
    pub fn new(text: impl Into<String>, label: u8) -> Result<Self> {
        let text = text.into();
        if text.is_empty() {
            return Err(Error::EmptySentence);
        }
        if label > 1 {
            return Err(Error::OutOfRange { what: "label", value: label as f64 });
        }
        Ok(LabeledSample { text, label })
    }

    pub fn is_spam(&self) -> bool {
        self.label == 1
    }
}

/// Read a corpus file. Empty lines are skipped; malformed lines are errors.
pub fn load_corpus(path: &Path) -> Result<Vec<LabeledSample>> {
    let file = std::fs::File::open(path).map_err(|e| Error::io(path.display().to_string(), e))?;
    let origin = path.display().to_string();
    let mut samples = Vec::new();
    for (i, line) in BufReader::new(file).lines().enumerate() {
        let line = line.map_err(|e| Error::io(origin.clone(), e))?;
        if line.trim().is_empty() {
            continue;
        }
        let (label_s, text) = line
            .split_once('\t')
            .ok_or_else(|| Error::parse(&origin, i + 1, "expected label<TAB>text"))?;
        let label: u8 = match label_s {
            "0" => 0,
            "1" => 1,
            other => {
                return Err(Error::parse(&origin, i + 1, format!("bad label {other:?}")));
            }
        };
        samples.push(
            LabeledSample::new(text, label).map_err(|e| Error::parse(&origin, i + 1, e.to_string()))?,
        );
    }
    Ok(samples)
}

pub fn save_corpus(path: &Path, samples: &[LabeledSample]) -> Result<()> {
    let mut out = String::new();
    for s in samples {
        out.push_str(&format!("{}\t{}\n", s.label, s.text));
    }
    std::fs::write(path, out).map_err(|e| Error::io(path.display().to_string(), e))
}

/// Both classes must be present for training.
pub fn check_two_classes(samples: &[LabeledSample]) -> Result<()> {
    let spam = samples.iter().filter(|s| s.is_spam()).count();
    if samples.is_empty() || spam == 0 || spam == samples.len() {
        return Err(Error::SingleClassCorpus);
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("corpus.tsv");
        let samples = vec![
            LabeledSample::new("加微信啦", 1).unwrap(),
            LabeledSample::new("今天天气不错", 0).unwrap(),
        ];
        save_corpus(&path, &samples).unwrap();
        let loaded = load_corpus(&path).unwrap();
        assert_eq!(loaded, samples);
    }

    #[test]
    fn bad_label_is_a_parse_error() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("corpus.tsv");
        std::fs::write(&path, "2\tbad\n").unwrap();
        assert!(matches!(load_corpus(&path), Err(Error::Parse { line: 1, .. })));
    }

    #[test]
    fn single_class_is_rejected() {
        let spam_only = vec![LabeledSample::new("x", 1).unwrap()];
        assert!(check_two_classes(&spam_only).is_err());
        let both = vec![
            LabeledSample::new("x", 1).unwrap(),
            LabeledSample::new("y", 0).unwrap(),
        ];
        assert!(check_two_classes(&both).is_ok());
    }
}
