//! Brute-force oracle for trajectory statistics over random synthetic
//! trajectories. Expected values are tallied while the trajectories are
//! generated; tokens are counted with an independent regex segmentation.

#![allow(dead_code)]

use envforge_core::agent::{AgentOutcome, AgentStep, OutcomeStatus, ToolCall};
use envforge_core::gateway::ChatMessage;
use envforge_core::sandbox::vcs::DiffStats;
use envforge_core::trajectory::stats::report_row_labels;
use envforge_core::trajectory::{
    aggregate, compute_stats, render_report, Provenance, Trajectory, TrajectoryFilter, TrajectoryKind,
    REPORT_LABELS, TRAJECTORY_SCHEMA_VERSION,
};
use num_bigint::BigInt;
use num_rational::BigRational;
use proptest::prelude::*;
use proptest::strategy::ValueTree;
use proptest::test_runner::TestRunner;
use regex::Regex;

#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct Expected {
    pub messages: u64,
    pub tokens: u64,
    pub assistant_tokens: u64,
    pub tool_calls: u64,
    pub bash_calls: u64,
    pub lines_edited: u64,
}

fn oracle_tokens(text: &str) -> u64 {
    static RE: std::sync::OnceLock<Regex> = std::sync::OnceLock::new();
    let re = RE.get_or_init(|| Regex::new(r"[\p{Alphabetic}\p{N}_]+|\S").unwrap());
    re.find_iter(text).count() as u64
}

#[derive(Debug, Clone)]
struct StepSpec {
    action: u8,
    text: String,
    observation: String,
}

fn text() -> impl Strategy<Value = String> {
    "[a-zA-Z0-9_ ,.;()\n\u{e9}\u{4e2d}\u{3000}\u{2163}-]{0,60}"
}

fn step_spec() -> impl Strategy<Value = StepSpec> {
    (0u8..5, text(), text()).prop_map(|(action, text, observation)| StepSpec { action, text, observation })
}

type Spec = (Vec<StepSpec>, bool, u64, u64, String, String);

fn spec() -> impl Strategy<Value = Spec> {
    (proptest::collection::vec(step_spec(), 0..15), any::<bool>(), 0u64..300, 0u64..300, text(), text())
}

fn build(i: usize, (steps_spec, finish, added, deleted, system, task): Spec) -> (Trajectory, Expected) {
    let mut e = Expected::default();
    let mut messages = vec![ChatMessage::system(&system), ChatMessage::user(&task)];
    e.tokens += oracle_tokens(&system) + oracle_tokens(&task);
    let mut steps = Vec::new();
    let total = steps_spec.len() + usize::from(finish);
    for (n, s) in steps_spec.into_iter().enumerate() {
        let call = match s.action {
            0 => Some(ToolCall::Bash { command: s.text.clone() }),
            1 => Some(ToolCall::FileRead { path: "a.py".into(), lines: None }),
            2 => Some(ToolCall::FileWrite { path: "a.py".into(), content: s.text.clone() }),
            3 => Some(ToolCall::StrReplaceEdit { path: "a.py".into(), old_text: "x".into(), new_text: "y".into() }),
            _ => None,
        };
        if call.is_some() {
            e.tool_calls += 1;
        }
        if s.action == 0 {
            e.bash_calls += 1;
        }
        messages.push(ChatMessage::assistant(&s.text));
        messages.push(ChatMessage::tool(&s.observation));
        e.tokens += oracle_tokens(&s.text) + oracle_tokens(&s.observation);
        e.assistant_tokens += oracle_tokens(&s.text);
        steps.push(AgentStep {
            index: n as u32 + 1,
            assistant_text: s.text,
            reasoning: String::new(),
            parse_error: call.is_none().then(|| "no action".to_string()),
            call,
            observation: Some(s.observation),
            observation_truncated: false,
            exit_code: None,
        });
    }
    if finish {
        let reply = "```finish\ndone\n```";
        messages.push(ChatMessage::assistant(reply));
        e.tokens += oracle_tokens(reply);
        e.assistant_tokens += oracle_tokens(reply);
        e.tool_calls += 1;
        steps.push(AgentStep {
            index: total as u32,
            assistant_text: reply.into(),
            reasoning: String::new(),
            call: Some(ToolCall::Finish { summary: "done".into() }),
            parse_error: None,
            observation: None,
            observation_truncated: false,
            exit_code: None,
        });
    }
    e.messages = 2 + 2 * total as u64 - u64::from(finish);
    e.lines_edited = added + deleted;
    let kind = TrajectoryKind::ALL[i % TrajectoryKind::ALL.len()];
    let t = Trajectory {
        schema_version: TRAJECTORY_SCHEMA_VERSION,
        id: format!("synthetic.{i:03}"),
        kind,
        model_id: "m".into(),
        messages,
        outcome: AgentOutcome {
            status: if finish { OutcomeStatus::Finished } else { OutcomeStatus::StepLimit },
            steps_used: steps.len() as u32,
            error: None,
        },
        steps,
        final_diff: DiffStats { files_changed: 1, lines_added: added, lines_deleted: deleted },
        reward: Some((i % 2) as u8),
        provenance: Provenance { project: "synthetic".into(), task: None, instance: None },
    };
    (t, e)
}

/// `n` random trajectories with their expected statistics; deterministic
/// for a given `seed`.
pub fn corpus(seed: u64, n: usize) -> Vec<(Trajectory, Expected)> {
    let mut runner = TestRunner::new_with_rng(
        proptest::test_runner::Config::default(),
        proptest::test_runner::TestRng::from_seed(proptest::test_runner::RngAlgorithm::ChaCha, &{
            let mut s = [0u8; 32];
            s[..8].copy_from_slice(&seed.to_le_bytes());
            s
        }),
    );
    (0..n)
        .map(|i| build(i, spec().new_tree(&mut runner).unwrap().current()))
        .collect()
}

fn frac(num: u64, den: u64) -> BigRational {
    BigRational::new(BigInt::from(num), BigInt::from(den))
}

/// Compare per-trajectory stats, aggregate means (overall and per kind) and
/// report labels against the oracle. Returns the first mismatch.
pub fn check(corpus: &[(Trajectory, Expected)]) -> Result<(), String> {
    for (t, e) in corpus {
        let s = compute_stats(t);
        let got = Expected {
            messages: s.message_count,
            tokens: s.total_tokens,
            assistant_tokens: s.assistant_tokens,
            tool_calls: s.tool_calls,
            bash_calls: s.bash_calls,
            lines_edited: s.lines_edited,
        };
        if &got != e {
            return Err(format!("{}: stats {got:?} != oracle {e:?}", t.id));
        }
        let oracle_bash = if e.tool_calls == 0 { frac(0, 1) } else { frac(e.bash_calls, e.tool_calls) };
        if s.bash_proportion() != oracle_bash {
            return Err(format!("{}: bash proportion mismatch", t.id));
        }
    }
    let trajectories: Vec<Trajectory> = corpus.iter().map(|(t, _)| t.clone()).collect();
    let mut filters = vec![TrajectoryFilter::all()];
    filters.extend(TrajectoryKind::ALL.iter().map(|k| TrajectoryFilter::all().with_kinds([*k])));
    for filter in filters {
        let chosen: Vec<&Expected> = corpus.iter().filter(|(t, _)| filter.matches(t)).map(|(_, e)| e).collect();
        let Ok((manifest, agg)) = aggregate(&trajectories, &filter) else {
            if chosen.is_empty() {
                continue;
            }
            return Err("aggregate reported an empty selection".into());
        };
        let n = chosen.len() as u64;
        let sum = |f: fn(&Expected) -> u64| frac(chosen.iter().map(|e| f(e)).sum(), n);
        let bash_mean = chosen
            .iter()
            .map(|e| if e.tool_calls == 0 { frac(0, 1) } else { frac(e.bash_calls, e.tool_calls) })
            .fold(frac(0, 1), |a, b| a + b)
            / frac(n, 1);
        let checks = [
            ("count", frac(agg.count, 1), frac(n, 1)),
            ("message", agg.message.clone(), sum(|e| e.messages)),
            ("tokens", agg.tokens.clone(), sum(|e| e.tokens)),
            ("assistant tokens", agg.assistant_tokens.clone(), sum(|e| e.assistant_tokens)),
            ("tool calls", agg.tool_calls.clone(), sum(|e| e.tool_calls)),
            ("lines edited", agg.lines_edited.clone(), sum(|e| e.lines_edited)),
            ("bash proportion", agg.bash_proportion.clone(), bash_mean),
        ];
        for (name, got, want) in checks {
            if got != want {
                return Err(format!("mean {name}: {got} != {want}"));
            }
        }
        if manifest.counts.values().sum::<u64>() != n {
            return Err("per-kind counts do not sum to the selection".into());
        }
        let labels: Vec<&str> = manifest.report.iter().map(|[l, _]| l.as_str()).collect();
        if labels != REPORT_LABELS {
            return Err(format!("manifest report labels {labels:?}"));
        }
        if report_row_labels(&render_report(&[("all", &agg)])) != REPORT_LABELS {
            return Err("rendered report rows differ from the seven labels".into());
        }
    }
    Ok(())
}
