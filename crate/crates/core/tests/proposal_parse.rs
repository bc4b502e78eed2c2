use std::collections::VecDeque;
use std::sync::{Arc, Mutex};

use envforge_core::gateway::{
    BackendError, BackendReply, ChatBackend, CompletionRequest, FinishReason, Gateway,
};
use envforge_core::proposal::{
    parse_proposals, render_proposals, validate_proposal, ProjectProposal, ProposalConfig,
    ProposalEngine, ProposalError, DEFAULT_BANNED_PHRASES,
};
use envforge_core::templates::TemplateSet;
use proptest::prelude::*;

const BATCH_TWO: &str = include_str!("fixtures/proposal/batch_two.txt");
const VCS: &str = include_str!("fixtures/proposal/vcs.txt");

/// Replies with fixed (content, finish_reason) pairs and records prompts.
struct Parts {
    replies: Mutex<VecDeque<(String, FinishReason)>>,
    prompts: Mutex<Vec<Vec<String>>>,
}

impl Parts {
    fn new(replies: Vec<(String, FinishReason)>) -> Arc<Self> {
        Arc::new(Self {
            replies: Mutex::new(replies.into()),
            prompts: Mutex::new(Vec::new()),
        })
    }
}

impl ChatBackend for Parts {
    fn complete(&self, request: &CompletionRequest) -> Result<BackendReply, BackendError> {
        self.prompts
            .lock()
            .unwrap()
            .push(request.messages.iter().map(|m| m.content.clone()).collect());
        let (content, finish_reason) = self
            .replies
            .lock()
            .unwrap()
            .pop_front()
            .ok_or_else(|| BackendError::Other("no reply left".into()))?;
        Ok(BackendReply {
            content,
            finish_reason,
            usage: None,
        })
    }
}

fn banned() -> Vec<String> {
    DEFAULT_BANNED_PHRASES.iter().map(|s| s.to_string()).collect()
}

#[test]
fn sql_engine_example_block() {
    let parsed = parse_proposals(BATCH_TWO).unwrap();
    assert_eq!(parsed.len(), 2);
    let sql = &parsed[0];
    assert_eq!(sql.repo_name, "sql-database-engine");
    assert_eq!(sql.language, "Python");
    assert!(sql.constraints.contains("Cannot use any existing database libraries"));
    assert!(sql.description.starts_with("Build a complete SQL database engine"));
    assert_eq!(parsed[1].repo_name, "functional-language-compiler");
    assert!(validate_proposal(sql, &banned()).passed);
}

#[test]
fn version_control_case_study() {
    let parsed = parse_proposals(VCS).unwrap();
    assert_eq!(parsed[0].repo_name, "version-control-system");
    assert!(parsed[0].constraints.starts_with("Cannot use existing VCS libraries"));
}

#[test]
fn render_round_trips_fixtures() {
    for text in [BATCH_TWO, VCS] {
        let parsed = parse_proposals(text).unwrap();
        assert_eq!(parse_proposals(&render_proposals(&parsed)).unwrap(), parsed);
    }
}

fn engine_with(backend: Arc<Parts>, count: usize) -> Result<envforge_core::proposal::ProposalBatch, ProposalError> {
    let gateway = Gateway::live(backend);
    let templates = TemplateSet::builtin();
    let engine = ProposalEngine::new(&gateway, &templates, ProposalConfig::default());
    engine.propose_projects(count, 0)
}

#[test]
fn zero_count_is_rejected() {
    assert!(matches!(engine_with(Parts::new(vec![]), 0), Err(ProposalError::ZeroCount)));
}

#[test]
fn truncated_fixture_is_continued() {
    let cut = BATCH_TWO.find("<repo_name>functional").unwrap() + 5;
    let backend = Parts::new(vec![
        (BATCH_TWO[..cut].to_string(), FinishReason::Length),
        (BATCH_TWO[cut..].to_string(), FinishReason::Stop),
    ]);
    let batch = engine_with(backend.clone(), 2).unwrap();
    assert_eq!(batch.proposals, parse_proposals(BATCH_TWO).unwrap());
    assert_eq!(batch.source_transcripts.len(), 2);
    let prompts = backend.prompts.lock().unwrap();
    assert!(prompts[1][1].contains(&BATCH_TWO[..cut]));
}

#[test]
fn continuation_budget_exhaustion_carries_raw_text() {
    let replies = (0..4).map(|_| ("Project 1:\n<proposed".to_string(), FinishReason::Length)).collect();
    match engine_with(Parts::new(replies), 1) {
        Err(ProposalError::Generation { raw, .. }) => assert!(raw.starts_with("Project 1:")),
        other => panic!("unexpected {other:?}"),
    }
}

#[test]
fn invalid_blocks_are_rejected_not_dropped() {
    let mut text = BATCH_TWO.replace("functional-language-compiler", "Functional_Compiler");
    text.push_str("\nProject 3:\n<proposed_project>extra</proposed_project>");
    let batch = engine_with(Parts::new(vec![(text, FinishReason::Stop)]), 2).unwrap();
    assert_eq!(batch.proposals.len(), 1);
    assert_eq!(batch.rejected.len(), 1);
    assert_eq!(batch.rejected[0].block, 2);
    assert!(batch.rejected[0].reasons[0].starts_with("slug violation"));
}

#[test]
fn models_cycle_round_robin() {
    let gateway = Gateway::live(Parts::new(vec![]));
    let templates = TemplateSet::builtin();
    let config = ProposalConfig {
        models: vec!["a".into(), "b".into(), "c".into()],
        ..ProposalConfig::default()
    };
    let engine = ProposalEngine::new(&gateway, &templates, config);
    let picked: Vec<&str> = (0..5).map(|i| engine.model_for_batch(i)).collect();
    assert_eq!(picked, ["a", "b", "c", "a", "b"]);
}

fn field() -> impl Strategy<Value = String> {
    "[A-Za-z0-9 ,.()'-]{1,40}".prop_map(|s| format!("x{s}x"))
}

fn proposal() -> impl Strategy<Value = ProjectProposal> {
    (field(), "[a-z0-9]{1,8}(-[a-z0-9]{1,8}){0,3}", field(), field()).prop_map(
        |(description, repo_name, language, constraints)| ProjectProposal {
            description,
            repo_name,
            language,
            constraints,
        },
    )
}

proptest! {
    #[test]
    fn round_trip_preserves_fields_and_order(ps in prop::collection::vec(proposal(), 1..6)) {
        prop_assert_eq!(parse_proposals(&render_proposals(&ps)).unwrap(), ps);
    }

    #[test]
    fn any_split_reassembles(ps in prop::collection::vec(proposal(), 1..4), frac in 0.0f64..1.0) {
        let whole = render_proposals(&ps);
        let mut cut = ((whole.len() as f64) * frac) as usize;
        while !whole.is_char_boundary(cut) { cut -= 1; }
        let cut = cut.max(1);
        let backend = Parts::new(vec![
            (whole[..cut].to_string(), FinishReason::Length),
            (whole[cut..].to_string(), FinishReason::Stop),
        ]);
        let batch = engine_with(backend, ps.len()).unwrap();
        prop_assert_eq!(batch.proposals, parse_proposals(&whole).unwrap());
    }
}
