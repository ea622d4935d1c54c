//! Error-driven data augmentation through an external text generator.
//!
//! Misclassified training samples become exemplars in a generation prompt;
//! the returned `LABEL<TAB>text` lines are parsed into labeled samples and
//! either merged into the corpus up front (static) or accumulated across
//! epochs (dynamic). The client is pluggable: a deterministic mock that
//! substitutes similar characters, a subprocess, or an HTTP endpoint.

use std::io::Read as _;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::charsim::SimilarityNetwork;
use crate::corpus::LabeledSample;
use crate::discriminator::DiscriminatorModel;
use crate::error::{Error, Result};

/// A training sample the model got wrong, with its predicted probability.
#[derive(Debug, Clone, PartialEq)]
pub struct ErrorSample {
    pub text: String,
    pub label: u8,
    pub predicted_prob: f64,
}

/// Upper bound on exemplars embedded in one prompt.
pub const MAX_EXEMPLARS: usize = 100;

/// What to ask the generation backend for.
#[derive(Debug, Clone)]
pub struct AugmentationRequest {
    pub exemplars: Vec<ErrorSample>,
    pub spam_count: usize,
    pub normal_count: usize,
}

impl AugmentationRequest {
    pub fn new(
        mut exemplars: Vec<ErrorSample>,
        spam_count: usize,
        normal_count: usize,
    ) -> Result<Self> {
        if exemplars.is_empty() {
            return Err(Error::Config("augmentation request needs exemplars".into()));
        }
        if spam_count == 0 || normal_count == 0 {
            return Err(Error::Config("requested counts must be positive".into()));
        }
        exemplars.truncate(MAX_EXEMPLARS);
        Ok(AugmentationRequest { exemplars, spam_count, normal_count })
    }
}

/// Parsed augmentation output for one round.
#[derive(Debug, Clone, PartialEq)]
pub struct AugmentedSet {
    pub epoch_tag: usize,
    pub samples: Vec<LabeledSample>,
    pub provenance: String,
    pub skipped_lines: usize,
}

/// Samples whose thresholded prediction disagrees with the label.
pub fn mine_errors(
    model: &DiscriminatorModel,
    train_set: &[LabeledSample],
) -> Result<Vec<ErrorSample>> {
    let mut out = Vec::new();
    for s in train_set {
        let p = model.predict(&s.text)?;
        let predicted = u8::from(p >= model.threshold);
        if predicted != s.label {
            out.push(ErrorSample { text: s.text.clone(), label: s.label, predicted_prob: p });
        }
    }
    Ok(out)
}

/// Render the generation prompt: exemplars plus the six requirements and the
/// exact response format.
pub fn build_prompt(request: &AugmentationRequest) -> String {
    let mut out = String::new();
    out.push_str("You generate additional labeled text samples for a spam detector.\n");
    out.push_str("Examples (LABEL<TAB>text):\n");
    for e in &request.exemplars {
        let label = if e.label == 1 { "SPAM" } else { "NORMAL" };
        out.push_str(&format!("{label}\t{}\n", e.text));
    }
    out.push_str("\nRequirements:\n");
    out.push_str("1. Generated texts must match the style and features of the examples.\n");
    out.push_str("2. Semantics may be close to the examples but must not be identical.\n");
    out.push_str(
        "3. Character substitutions based on glyph or pronunciation similarity are encouraged.\n",
    );
    out.push_str("4. Text length should be similar to the examples.\n");
    out.push_str(
        "5. Spam texts may read unnaturally to mimic evasion tactics; normal texts must read naturally.\n",
    );
    out.push_str(&format!(
        "6. Generate exactly {} samples: {} spam and {} normal.\n",
        request.spam_count + request.normal_count,
        request.spam_count,
        request.normal_count
    ));
    out.push_str("\nRespond with one sample per line in the format LABEL<TAB>text, ");
    out.push_str("where LABEL is SPAM or NORMAL. No other output.\n");
    out
}

/// Parse a response in the `LABEL<TAB>text` line format. Malformed lines are
/// skipped and counted; an entirely unparsable response is an error.
pub fn parse_response(raw: &str, epoch_tag: usize, provenance: &str) -> Result<AugmentedSet> {
    let mut samples = Vec::new();
    let mut skipped = 0usize;
    for line in raw.lines() {
        if line.trim().is_empty() {
            continue;
        }
        let parsed = line.split_once('\t').and_then(|(label, text)| {
            let label = match label.trim() {
                "SPAM" => 1u8,
                "NORMAL" => 0u8,
                _ => return None,
            };
            if text.is_empty() {
                return None;
            }
            Some(LabeledSample { text: text.to_string(), label })
        });
        match parsed {
            Some(s) => samples.push(s),
            None => skipped += 1,
        }
    }
    if samples.is_empty() {
        return Err(Error::NoParsableLines);
    }
    if skipped > 0 {
        log::warn!("augmentation response: skipped {skipped} malformed lines");
    }
    Ok(AugmentedSet {
        epoch_tag,
        samples,
        provenance: provenance.to_string(),
        skipped_lines: skipped,
    })
}

/// Serialize a set in the augmented-file format (`LABEL<TAB>text` lines).
pub fn augmented_set_to_string(set: &AugmentedSet) -> String {
    let mut out = String::new();
    for s in &set.samples {
        out.push_str(if s.label == 1 { "SPAM" } else { "NORMAL" });
        out.push('\t');
        out.push_str(&s.text);
        out.push('\n');
    }
    out
}

/// One request/response text exchange with a generation backend.
pub trait AugmentClient {
    fn generate(&self, prompt: &str) -> Result<String>;
    fn name(&self) -> &str;
}

/// Deterministic offline client: re-emits exemplars with similarity-network
/// character substitutions until the requested counts are met.
pub struct MockClient {
    net: SimilarityNetwork,
    seed: u64,
}

impl MockClient {
    pub fn new(net: SimilarityNetwork, seed: u64) -> Self {
        MockClient { net, seed }
    }

    fn substitute(&self, text: &str, rng: &mut ChaCha8Rng) -> String {
        text.chars()
            .map(|c| {
                if rng.gen::<f64>() < 0.4 {
                    let neighbors: Vec<char> = self
                        .net
                        .neighbors(c)
                        .into_iter()
                        .map(|(nc, _)| nc)
                        .filter(|&nc| nc != c)
                        .collect();
                    if !neighbors.is_empty() {
                        return neighbors[rng.gen_range(0..neighbors.len())];
                    }
                }
                c
            })
            .collect()
    }
}

impl AugmentClient for MockClient {
    fn generate(&self, prompt: &str) -> Result<String> {
        // Recover exemplars and counts from the prompt text, the only
        // channel a real backend would see.
        let mut spam_exemplars = Vec::new();
        let mut normal_exemplars = Vec::new();
        let mut counts = None;
        for line in prompt.lines() {
            if let Some((label, text)) = line.split_once('\t') {
                match label {
                    "SPAM" => spam_exemplars.push(text.to_string()),
                    "NORMAL" => normal_exemplars.push(text.to_string()),
                    _ => {}
                }
            }
            if let Some(rest) = line.strip_prefix("6. Generate exactly ") {
                let nums: Vec<usize> = rest
                    .split(|c: char| !c.is_ascii_digit())
                    .filter(|s| !s.is_empty())
                    .filter_map(|s| s.parse().ok())
                    .collect();
                if nums.len() >= 3 {
                    counts = Some((nums[1], nums[2]));
                }
            }
        }
        let (spam_count, normal_count) =
            counts.ok_or_else(|| Error::Client("prompt carries no counts".into()))?;
        if spam_exemplars.is_empty() && normal_exemplars.is_empty() {
            return Err(Error::Client("prompt carries no exemplars".into()));
        }

        // Seed from the prompt so identical requests reproduce exactly.
        let mut h = 0xcbf29ce484222325u64;
        for b in prompt.bytes() {
            h ^= b as u64;
            h = h.wrapping_mul(0x100000001b3);
        }
        let mut rng = ChaCha8Rng::seed_from_u64(self.seed ^ h);

        let mut out = String::new();
        for i in 0..spam_count {
            let source = if spam_exemplars.is_empty() {
                &normal_exemplars[i % normal_exemplars.len()]
            } else {
                &spam_exemplars[i % spam_exemplars.len()]
            };
            out.push_str(&format!("SPAM\t{}\n", self.substitute(source, &mut rng)));
        }
        for i in 0..normal_count {
            let source = if normal_exemplars.is_empty() {
                &spam_exemplars[i % spam_exemplars.len()]
            } else {
                &normal_exemplars[i % normal_exemplars.len()]
            };
            out.push_str(&format!("NORMAL\t{}\n", self.substitute(source, &mut rng)));
        }
        Ok(out)
    }

    fn name(&self) -> &str {
        "mock"
    }
}

/// Pipes the prompt into a command's stdin and reads its stdout.
pub struct SubprocessClient {
    pub command: String,
    pub timeout_secs: u64,
}

impl AugmentClient for SubprocessClient {
    fn generate(&self, prompt: &str) -> Result<String> {
        use std::io::Write as _;
        use std::process::{Command, Stdio};
        let mut parts = self.command.split_whitespace();
        let program = parts
            .next()
            .ok_or_else(|| Error::Client("empty subprocess command".into()))?;
        let mut child = Command::new(program)
            .args(parts)
            .stdin(Stdio::piped())
            .stdout(Stdio::piped())
            .stderr(Stdio::null())
            .spawn()
            .map_err(|e| Error::Client(format!("spawn {program}: {e}")))?;
        child
            .stdin
            .take()
            .expect("stdin was piped")
            .write_all(prompt.as_bytes())
            .map_err(|e| Error::Client(format!("write prompt: {e}")))?;
        let deadline = std::time::Instant::now() + std::time::Duration::from_secs(self.timeout_secs);
        loop {
            match child.try_wait() {
                Ok(Some(status)) => {
                    if !status.success() {
                        return Err(Error::Client(format!("backend exited with {status}")));
                    }
                    break;
                }
                Ok(None) if std::time::Instant::now() > deadline => {
                    let _ = child.kill();
                    return Err(Error::Client("backend timed out".into()));
                }
                Ok(None) => std::thread::sleep(std::time::Duration::from_millis(20)),
                Err(e) => return Err(Error::Client(format!("wait: {e}"))),
            }
        }
        let mut out = String::new();
        child
            .stdout
            .take()
            .expect("stdout was piped")
            .read_to_string(&mut out)
            .map_err(|e| Error::Client(format!("read output: {e}")))?;
        Ok(out)
    }

    fn name(&self) -> &str {
        "subprocess"
    }
}

/// POSTs the prompt to an HTTP endpoint and returns the response body.
pub struct HttpClient {
    pub endpoint: String,
    pub timeout_secs: u64,
}

impl AugmentClient for HttpClient {
    fn generate(&self, prompt: &str) -> Result<String> {
        let agent: ureq::Agent = ureq::Agent::config_builder()
            .timeout_global(Some(std::time::Duration::from_secs(self.timeout_secs)))
            .build()
            .into();
        let mut response = agent
            .post(&self.endpoint)
            .content_type("text/plain; charset=utf-8")
            .send(prompt)
            .map_err(|e| Error::Client(format!("POST {}: {e}", self.endpoint)))?;
        response
            .body_mut()
            .read_to_string()
            .map_err(|e| Error::Client(format!("read body: {e}")))
    }

    fn name(&self) -> &str {
        "http"
    }
}

/// Select a backend: URLs go over HTTP, anything else is treated as a
/// command line; `None` or `"mock"` is the offline mock.
pub fn client_from_spec(
    spec: Option<&str>,
    net: &SimilarityNetwork,
    seed: u64,
    timeout_secs: u64,
) -> Box<dyn AugmentClient> {
    match spec {
        None | Some("") | Some("mock") => Box::new(MockClient::new(net.clone(), seed)),
        Some(s) if s.starts_with("http://") || s.starts_with("https://") => {
            Box::new(HttpClient { endpoint: s.to_string(), timeout_secs })
        }
        Some(cmd) => Box::new(SubprocessClient { command: cmd.to_string(), timeout_secs }),
    }
}

const CLIENT_RETRIES: usize = 3;

fn generate_with_retries(client: &dyn AugmentClient, prompt: &str) -> Result<String> {
    let mut last = None;
    for attempt in 1..=CLIENT_RETRIES {
        match client.generate(prompt) {
            Ok(raw) => return Ok(raw),
            Err(e) => {
                log::warn!("augmentation client attempt {attempt} failed: {e}");
                last = Some(e);
            }
        }
    }
    Err(last.expect("at least one attempt ran"))
}

/// Grow the corpus to `target_size` before training. Exemplars are sampled
/// randomly from the corpus (no model exists yet); generated samples join
/// the pool with no distinguishing marks.
pub fn static_augment(
    corpus: &[LabeledSample],
    client: &dyn AugmentClient,
    target_size: usize,
    seed: u64,
) -> Result<Vec<LabeledSample>> {
    if corpus.len() >= target_size {
        return Ok(corpus.to_vec());
    }
    let deficit = target_size - corpus.len();
    let spam_count = deficit / 2 + deficit % 2;
    let normal_count = deficit / 2;

    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x57A7);
    let mut exemplars: Vec<ErrorSample> = Vec::new();
    for _ in 0..MAX_EXEMPLARS.min(corpus.len()) {
        let s = &corpus[rng.gen_range(0..corpus.len())];
        exemplars.push(ErrorSample { text: s.text.clone(), label: s.label, predicted_prob: 0.5 });
    }
    let request =
        AugmentationRequest::new(exemplars, spam_count, normal_count.max(1))?;
    let raw = generate_with_retries(client, &build_prompt(&request))?;
    let set = parse_response(&raw, 0, client.name())?;
    let mut out = corpus.to_vec();
    out.extend(set.samples.into_iter().take(deficit));
    Ok(out)
}

/// After an epoch: mine errors, request generation, append to the
/// accumulator. Client failure logs and leaves the accumulator unchanged;
/// an epoch with no errors issues no request at all.
pub fn dynamic_augment_epoch_hook(
    epoch: usize,
    model: &DiscriminatorModel,
    train_set: &[LabeledSample],
    client: &dyn AugmentClient,
    accumulator: &mut Vec<AugmentedSet>,
    per_class_count: usize,
) -> Result<()> {
    let errors = mine_errors(model, train_set)?;
    if errors.is_empty() {
        log::info!("epoch {epoch}: no misclassified samples, skipping augmentation");
        return Ok(());
    }
    let request = AugmentationRequest::new(errors, per_class_count, per_class_count)?;
    let prompt = build_prompt(&request);
    match generate_with_retries(client, &prompt) {
        Ok(raw) => match parse_response(&raw, epoch, client.name()) {
            Ok(set) => accumulator.push(set),
            Err(e) => log::warn!("epoch {epoch}: augmentation response unusable: {e}"),
        },
        Err(e) => log::warn!("epoch {epoch}: augmentation skipped: {e}"),
    }
    Ok(())
}
