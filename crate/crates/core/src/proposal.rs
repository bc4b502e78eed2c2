//! Project proposals: batch generation, tagged-output parsing and screening.
//!
//! A proposal batch is a list of blocks, each introduced by a `Project N:`
//! header and carrying four tagged fields:
//!
//! ```text
//! Project 1:
//! <proposed_project>...</proposed_project>
//! <repo_name>...</repo_name>
//! <programming_language>...</programming_language>
//! <constraints>...</constraints>
//! ```
//!
//! Documents without headers are split at each `<proposed_project>` tag.

use std::fs;
use std::io;
use std::path::Path;
use std::sync::OnceLock;

use regex::Regex;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::gateway::{
    ChatMessage, CompletionRequest, FinishReason, Gateway, GatewayError, TranscriptKey,
};
use crate::tags::{find_tag, TagLookup};
use crate::templates::{TemplateError, TemplateSet};

pub const TAG_DESCRIPTION: &str = "proposed_project";
pub const TAG_REPO_NAME: &str = "repo_name";
pub const TAG_LANGUAGE: &str = "programming_language";
pub const TAG_CONSTRAINTS: &str = "constraints";

const TAGS: [&str; 4] = [TAG_DESCRIPTION, TAG_REPO_NAME, TAG_LANGUAGE, TAG_CONSTRAINTS];

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ProjectProposal {
    pub description: String,
    pub repo_name: String,
    pub language: String,
    pub constraints: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RejectedProposal {
    pub block: usize,
    pub reasons: Vec<String>,
    pub text: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProposalBatch {
    pub proposals: Vec<ProjectProposal>,
    /// Keys of every request made for this batch, continuation calls included.
    pub source_transcripts: Vec<TranscriptKey>,
    pub rejected: Vec<RejectedProposal>,
}

#[derive(Debug, Error)]
pub enum ProposalError {
    #[error("requested proposal count must be at least 1")]
    ZeroCount,
    #[error("no proposal blocks found in model output")]
    EmptyOutput,
    #[error("proposal block {block} is missing tag(s): {}", missing.join(", "))]
    MissingTags { block: usize, missing: Vec<String> },
    #[error("proposal generation failed: {reason}")]
    Generation { reason: String, raw: String },
    #[error(transparent)]
    Gateway(#[from] GatewayError),
    #[error(transparent)]
    Template(#[from] TemplateError),
    #[error("cannot write {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: io::Error,
    },
}

#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct ParseWarnings(pub Vec<String>);

fn header_re() -> &'static Regex {
    static RE: OnceLock<Regex> = OnceLock::new();
    RE.get_or_init(|| Regex::new(r"(?m)^[ \t#*]*Project\s+\d+\s*:").unwrap())
}

/// Split a batch document into per-project text blocks, in document order.
fn split_blocks(text: &str) -> Vec<&str> {
    let mut starts: Vec<usize> = header_re().find_iter(text).map(|m| m.start()).collect();
    if starts.is_empty() {
        let open = format!("<{TAG_DESCRIPTION}>");
        starts = text.match_indices(&open).map(|(i, _)| i).collect();
    }
    starts
        .iter()
        .enumerate()
        .map(|(i, &s)| &text[s..starts.get(i + 1).copied().unwrap_or(text.len())])
        .collect()
}

fn parse_block(block: &str, index: usize, warnings: &mut ParseWarnings) -> Result<ProjectProposal, ProposalError> {
    let mut values = Vec::with_capacity(4);
    let mut missing = Vec::new();
    for tag in TAGS {
        match find_tag(block, tag) {
            TagLookup::Found { value, duplicate } => {
                if duplicate {
                    warnings.0.push(format!("block {index}: duplicate <{tag}>, first kept"));
                }
                values.push(value.to_string());
            }
            TagLookup::Missing | TagLookup::Unclosed => {
                missing.push(tag.to_string());
                values.push(String::new());
            }
        }
    }
    if !missing.is_empty() {
        return Err(ProposalError::MissingTags {
            block: index,
            missing,
        });
    }
    let mut it = values.into_iter();
    Ok(ProjectProposal {
        description: it.next().unwrap(),
        repo_name: it.next().unwrap(),
        language: it.next().unwrap(),
        constraints: it.next().unwrap(),
    })
}

/// Parse every block, keeping per-block failures. Block numbers are 1-based.
pub fn parse_blocks(text: &str) -> (Vec<(usize, &str, Result<ProjectProposal, ProposalError>)>, ParseWarnings) {
    let mut warnings = ParseWarnings::default();
    let blocks = split_blocks(text)
        .into_iter()
        .enumerate()
        .map(|(i, b)| (i + 1, b, parse_block(b, i + 1, &mut warnings)))
        .collect();
    (blocks, warnings)
}

/// Strict parse: every block must carry all four tags.
pub fn parse_proposals(text: &str) -> Result<Vec<ProjectProposal>, ProposalError> {
    parse_proposals_with_warnings(text).map(|(p, _)| p)
}

pub fn parse_proposals_with_warnings(
    text: &str,
) -> Result<(Vec<ProjectProposal>, ParseWarnings), ProposalError> {
    let (blocks, warnings) = parse_blocks(text);
    if blocks.is_empty() {
        return Err(ProposalError::EmptyOutput);
    }
    let proposals = blocks
        .into_iter()
        .map(|(_, _, r)| r)
        .collect::<Result<Vec<_>, _>>()?;
    Ok((proposals, warnings))
}

/// Inverse of [`parse_proposals`].
pub fn render_proposals(proposals: &[ProjectProposal]) -> String {
    let mut out = String::new();
    for (i, p) in proposals.iter().enumerate() {
        if i > 0 {
            out.push('\n');
        }
        out.push_str(&format!(
            "Project {}:\n<{TAG_DESCRIPTION}>{}</{TAG_DESCRIPTION}>\n<{TAG_REPO_NAME}>{}</{TAG_REPO_NAME}>\n<{TAG_LANGUAGE}>{}</{TAG_LANGUAGE}>\n<{TAG_CONSTRAINTS}>{}</{TAG_CONSTRAINTS}>\n",
            i + 1,
            p.description,
            p.repo_name,
            p.language,
            p.constraints
        ));
    }
    out
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ValidationReport {
    pub passed: bool,
    pub reasons: Vec<String>,
}

pub const DEFAULT_BANNED_PHRASES: &[&str] = &[
    "GUI",
    "graphical user interface",
    "web interface",
    "web dashboard",
    "web application",
    "website",
    "mobile app",
    "browser extension",
];

fn slug_re() -> &'static Regex {
    static RE: OnceLock<Regex> = OnceLock::new();
    RE.get_or_init(|| Regex::new(r"^[a-z0-9]+(-[a-z0-9]+)*$").unwrap())
}

/// Slug form, non-empty fields, and a case-insensitive whole-word screen of
/// the description against `banned_phrases`.
pub fn validate_proposal(p: &ProjectProposal, banned_phrases: &[String]) -> ValidationReport {
    let mut reasons = Vec::new();
    for (name, value) in [
        ("description", &p.description),
        ("repo_name", &p.repo_name),
        ("language", &p.language),
        ("constraints", &p.constraints),
    ] {
        if value.trim().is_empty() {
            reasons.push(format!("empty field: {name}"));
        }
    }
    if !slug_re().is_match(&p.repo_name) {
        reasons.push(format!("slug violation: {:?} is not lowercase-hyphenated", p.repo_name));
    }
    for phrase in banned_phrases {
        let pattern = format!(r"(?i)\b{}\b", regex::escape(phrase));
        if Regex::new(&pattern).map(|re| re.is_match(&p.description)).unwrap_or(false) {
            reasons.push(format!("banned phrase: {phrase}"));
        }
    }
    ValidationReport {
        passed: reasons.is_empty(),
        reasons,
    }
}

pub const DEFAULT_REQUIREMENTS: &str = "\
- Scope: the project takes an experienced engineer several weeks, spans many interacting components, and is built around non-trivial algorithms or data structures.
- Self-contained: no third-party frameworks or libraries that already solve the core problem, no network access, no external services.
- Command-line only: all interaction happens through a CLI or a library API; no graphical or web front end.
- Unambiguous: inputs, outputs and behaviour are specified precisely enough that unit tests can decide correctness.
- Algorithmically dense: most of the code is algorithmic logic rather than configuration, glue or boilerplate.";

#[derive(Debug, Clone, PartialEq)]
pub struct ProposalConfig {
    /// Models cycled round-robin by batch index.
    pub models: Vec<String>,
    pub language: String,
    pub requirements: String,
    pub banned_phrases: Vec<String>,
    pub max_continuations: u32,
    pub max_output_tokens: u32,
    pub temperature: f64,
}

impl Default for ProposalConfig {
    fn default() -> Self {
        Self {
            models: vec!["proposer".into()],
            language: "Python".into(),
            requirements: DEFAULT_REQUIREMENTS.into(),
            banned_phrases: DEFAULT_BANNED_PHRASES.iter().map(|s| s.to_string()).collect(),
            max_continuations: 3,
            max_output_tokens: 16_384,
            temperature: 0.0,
        }
    }
}

pub struct ProposalEngine<'a> {
    gateway: &'a Gateway,
    templates: &'a TemplateSet,
    config: ProposalConfig,
}

impl<'a> ProposalEngine<'a> {
    pub fn new(gateway: &'a Gateway, templates: &'a TemplateSet, config: ProposalConfig) -> Self {
        Self {
            gateway,
            templates,
            config,
        }
    }

    pub fn model_for_batch(&self, batch_index: usize) -> &str {
        let models = &self.config.models;
        if models.is_empty() {
            "proposer"
        } else {
            &models[batch_index % models.len()]
        }
    }

    /// Request `count` proposals; `batch_index` selects the model.
    pub fn propose_projects(&self, count: usize, batch_index: usize) -> Result<ProposalBatch, ProposalError> {
        if count == 0 {
            return Err(ProposalError::ZeroCount);
        }
        let model = self.model_for_batch(batch_index).to_string();
        let count_text = count.to_string();
        let system = self.templates.render(
            "proposal/system",
            &[
                ("requirements", &self.config.requirements),
                ("language", &self.config.language),
            ],
        )?;
        let user = self.templates.render(
            "proposal/user",
            &[("num_projects", &count_text), ("language", &self.config.language)],
        )?;
        let mut keys = Vec::new();
        let mut text = String::new();
        let mut messages = vec![ChatMessage::system(&system), ChatMessage::user(user)];
        let mut continuations = 0;
        loop {
            let request = CompletionRequest::new(&model, messages)
                .with_max_output_tokens(self.config.max_output_tokens)
                .with_temperature(self.config.temperature);
            keys.push(TranscriptKey::of(&request));
            let response = self.gateway.complete(&request)?;
            text.push_str(&response.content);
            if response.finish_reason != FinishReason::Length {
                break;
            }
            if continuations == self.config.max_continuations {
                return Err(ProposalError::Generation {
                    reason: format!("output still truncated after {continuations} continuation(s)"),
                    raw: text,
                });
            }
            continuations += 1;
            let prompt = self.templates.render(
                "proposal/continue",
                &[("num_projects", &count_text), ("response", &text)],
            )?;
            messages = vec![ChatMessage::system(&system), ChatMessage::user(prompt)];
        }
        self.assemble(&text, count, keys)
    }

    fn assemble(&self, text: &str, count: usize, keys: Vec<TranscriptKey>) -> Result<ProposalBatch, ProposalError> {
        let (blocks, warnings) = parse_blocks(text);
        for w in &warnings.0 {
            tracing::warn!("{w}");
        }
        if blocks.is_empty() {
            return Err(ProposalError::Generation {
                reason: "no proposal blocks found".into(),
                raw: text.to_string(),
            });
        }
        if blocks.len() < count {
            return Err(ProposalError::Generation {
                reason: format!("expected {count} proposals, found {}", blocks.len()),
                raw: text.to_string(),
            });
        }
        let mut proposals = Vec::new();
        let mut rejected = Vec::new();
        for (index, block, parsed) in blocks.into_iter().take(count) {
            let reasons = match parsed {
                Ok(p) => {
                    let report = validate_proposal(&p, &self.config.banned_phrases);
                    if report.passed {
                        proposals.push(p);
                        continue;
                    }
                    report.reasons
                }
                Err(e) => vec![e.to_string()],
            };
            rejected.push(RejectedProposal {
                block: index,
                reasons,
                text: block.trim().to_string(),
            });
        }
        Ok(ProposalBatch {
            proposals,
            source_transcripts: keys,
            rejected,
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProposalRecord {
    #[serde(flatten)]
    pub proposal: ProjectProposal,
    pub source_transcripts: Vec<TranscriptKey>,
}

/// Write `proposals.json`: every accepted proposal with its source keys.
pub fn write_proposals_json(path: &Path, batches: &[ProposalBatch]) -> Result<(), ProposalError> {
    let records: Vec<ProposalRecord> = batches
        .iter()
        .flat_map(|b| {
            b.proposals.iter().map(|p| ProposalRecord {
                proposal: p.clone(),
                source_transcripts: b.source_transcripts.clone(),
            })
        })
        .collect();
    let mut text = serde_json::to_string_pretty(&records).expect("records serialize");
    text.push('\n');
    fs::write(path, text).map_err(|source| ProposalError::Io {
        path: path.display().to_string(),
        source,
    })
}

pub fn read_proposals_json(path: &Path) -> Result<Vec<ProposalRecord>, ProposalError> {
    let text = fs::read_to_string(path).map_err(|source| ProposalError::Io {
        path: path.display().to_string(),
        source,
    })?;
    serde_json::from_str(&text).map_err(|e| ProposalError::Generation {
        reason: format!("malformed {}: {e}", path.display()),
        raw: text,
    })
}
