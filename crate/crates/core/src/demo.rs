//! Offline scripted model for a small RPN calculator project.
//!
//! [`respond`] answers every prompt the pipeline sends (proposal, plan,
//! checklists, issue proposals, and each agent turn) from fixed text, so a
//! whole project can be built, verified and adapted without a model. Tests
//! wrap it to swap in adversarial turns: [`classify`] tells which prompt a
//! request is and which agent step it asks for.

use std::sync::OnceLock;

use regex::Regex;

use crate::agent::ToolCall;
use crate::gateway::{CompletionRequest, Role, ScriptedBackend};
use crate::plan::TaskId;
use crate::proposal::{render_proposals, ProjectProposal};

pub const REPO_NAME: &str = "rpn-calculator";

pub const PLAN: &str = "\
# Project Description

A command-line calculator for expressions in reverse Polish notation. It splits an expression into numbers and operators and evaluates it with an explicit operand stack, reporting malformed input precisely.

# Project Instruction

Build the calculator as the Python package `rpn` under `src/`: a tokenizer and a stack-based evaluator for the four arithmetic operators.

# Detailed Documentation

## Phase 1: Core Calculator

**Goal:** Turn RPN text into a numeric result.

### Module 1.1: Expression Pipeline

#### Task 1.1.1: Tokenizer

- **Description:** Implement `tokenize(text)` in `src/rpn/tokenizer.py`. Whitespace separates tokens; integers become `int`, other numbers `float`, the operators + - * / stay strings, and anything else raises `ValueError`.
- **Dependencies:** None
- **Difficulty:** 2/5
- **Unit Tests:**
  - **Code Tests:**
    - **TokenizeNumbers:** Integers, decimals and negative numbers become numeric tokens
    - **RejectUnknownTokens:** Words that are neither numbers nor operators raise ValueError

#### Task 1.1.2: Evaluator

- **Description:** Implement `evaluate(text)` in `src/rpn/evaluator.py` on top of the tokenizer. Operators pop two operands (left below right); the expression must leave exactly one value. Stack underflow and leftover operands raise `ValueError`, division by zero raises `ZeroDivisionError`.
- **Dependencies:** 1.1.1
- **Difficulty:** 3/5
- **Unit Tests:**
  - **Code Tests:**
    - **EvaluateArithmetic:** Nested expressions evaluate with the right operand order
    - **RejectMalformed:** Underflow, leftover operands and division by zero are reported
";

pub const CHECKLIST_1_1_1: &str = "\
## Test Case 1: TokenizeNumbers

**Purpose:** Numbers and operators come out as the right token types.

### Test Scenarios

1. **Happy Path Cases:**
   - `3 4 +` gives `[3, 4, \"+\"]`.
2. **Edge Cases / Boundaries:**
   - `-2.5 10 *` gives a negative float, an int and an operator.
   - Blank input gives no tokens.

### Assertions

- Integers are `int`, decimals are `float`, operators are strings.

## Test Case 2: RejectUnknownTokens

**Purpose:** Anything that is not a number or an operator is refused.

### Test Scenarios

3. **Error Handling:**
   - `3 x +` raises `ValueError`.

### Assertions

- The error is raised before any token is returned.
";

pub const CHECKLIST_1_1_2: &str = "\
## Test Case 1: EvaluateArithmetic

**Purpose:** Expressions evaluate with the correct operand order.

### Test Scenarios

1. **Happy Path Cases:**
   - `3 4 +` is 7, `10 4 -` is 6, `8 2 /` is 4.
   - `5 1 2 + 4 * + 3 -` is 14.

### Assertions

- The left operand is the one pushed first.

## Test Case 2: RejectMalformed

**Purpose:** Malformed expressions are reported.

### Test Scenarios

3. **Error Handling:**
   - `1 +` raises `ValueError` (underflow).
   - `1 2` raises `ValueError` (leftover operand).
   - `1 0 /` raises `ZeroDivisionError`.

### Assertions

- No partial result is returned.
";

pub const INIT_PY: &str = "\"\"\"Reverse Polish notation calculator.\"\"\"\n";

pub const TOKENIZER_SKELETON: &str = "\
\"\"\"Split RPN expressions into numbers and operators.\"\"\"

OPERATORS = (\"+\", \"-\", \"*\", \"/\")


def tokenize(text):
    \"\"\"Tokens of `text`: numbers become int/float, operators stay strings.\"\"\"
    raise NotImplementedError
";

pub const EVALUATOR_SKELETON: &str = "\
\"\"\"Stack-based evaluation of RPN expressions.\"\"\"

from rpn.tokenizer import tokenize


def evaluate(text):
    \"\"\"Value of the RPN expression `text`.\"\"\"
    raise NotImplementedError
";

pub const TOKENIZER: &str = "\
\"\"\"Split RPN expressions into numbers and operators.\"\"\"

OPERATORS = (\"+\", \"-\", \"*\", \"/\")


def parse_number(word):
    \"\"\"`word` as an int or float, or None if it is not a number.\"\"\"
    try:
        return int(word)
    except ValueError:
        pass
    try:
        return float(word)
    except ValueError:
        return None


def tokenize(text):
    \"\"\"Tokens of `text`: numbers become int/float, operators stay strings.\"\"\"
    tokens = []
    for word in text.split():
        if word in OPERATORS:
            tokens.append(word)
            continue
        number = parse_number(word)
        if number is None:
            raise ValueError(f\"unknown token: {word}\")
        tokens.append(number)
    return tokens
";

pub const EVALUATOR: &str = "\
\"\"\"Stack-based evaluation of RPN expressions.\"\"\"

from rpn.tokenizer import tokenize


def apply(op, left, right):
    \"\"\"Apply a binary operator.\"\"\"
    if op == \"+\":
        return left + right
    if op == \"-\":
        return left - right
    if op == \"*\":
        return left * right
    if right == 0:
        raise ZeroDivisionError(\"division by zero\")
    return left / right


def evaluate(text):
    \"\"\"Value of the RPN expression `text`.\"\"\"
    stack = []
    for token in tokenize(text):
        if isinstance(token, str):
            if len(stack) < 2:
                raise ValueError(\"stack underflow\")
            right = stack.pop()
            left = stack.pop()
            stack.append(apply(token, left, right))
        else:
            stack.append(token)
    if len(stack) != 1:
        raise ValueError(\"expression must leave exactly one value\")
    return stack[0]
";

pub const TEST_1_1_1: &str = "\
import pytest

from rpn.tokenizer import tokenize


def test_integers_and_operators():
    assert tokenize(\"3 4 +\") == [3, 4, \"+\"]


def test_decimals_and_negatives():
    tokens = tokenize(\"-2.5 10 *\")
    assert tokens == [-2.5, 10, \"*\"]
    assert isinstance(tokens[0], float) and isinstance(tokens[1], int)


def test_blank_input():
    assert tokenize(\"   \") == []


def test_unknown_token_rejected():
    with pytest.raises(ValueError):
        tokenize(\"3 x +\")
";

pub const TEST_1_1_2: &str = "\
import pytest

from rpn.evaluator import evaluate


def test_basic_operators():
    assert evaluate(\"3 4 +\") == 7
    assert evaluate(\"10 4 -\") == 6
    assert evaluate(\"8 2 /\") == 4


def test_nested_expression():
    assert evaluate(\"5 1 2 + 4 * + 3 -\") == 14


@pytest.mark.parametrize(\"text\", [\"1 +\", \"1 2\"])
def test_malformed(text):
    with pytest.raises(ValueError):
        evaluate(text)


def test_division_by_zero():
    with pytest.raises(ZeroDivisionError):
        evaluate(\"1 0 /\")
";

/// Text the decimal-parsing bug removes from the tokenizer.
pub const FLOAT_FALLBACK: &str = "    try:\n        return float(word)\n    except ValueError:\n        return None";
pub const FLOAT_BROKEN: &str = "    return None";

pub const ISSUE: &str = "\
<issue>
In `parse_number` in `src/rpn/tokenizer.py`, drop the fallback to `float` so that only integer literals are recognised. Any decimal literal such as `2.5` or `-2.5` then falls through to the unknown-token branch of `tokenize` and raises `ValueError`, while integer-only expressions keep working.
</issue>

<description>
Decimal numbers rejected as unknown tokens

Since the last update, expressions that contain a decimal number such as 2.5 fail with an \"unknown token\" error. Expressions with whole numbers only still work. Decimal input used to be accepted.
</description>
";

pub const ISSUE_TEST: &str = "\
from rpn.tokenizer import tokenize


def test_decimal_literals_are_numbers():
    assert tokenize(\"2.5 0.5 +\") == [2.5, 0.5, \"+\"]
";

pub fn proposal() -> ProjectProposal {
    ProjectProposal {
        description: "A reverse Polish notation calculator with a tokenizer and a stack-based evaluator that reports malformed expressions precisely.".into(),
        repo_name: REPO_NAME.into(),
        language: "Python".into(),
        constraints: "Pure Python standard library; no third-party packages.".into(),
    }
}

/// The test script for a task, run from any directory.
pub fn test_script(task: TaskId) -> String {
    format!(
        "#!/bin/bash\ncd \"$(dirname \"$0\")/..\" || exit 1\nPYTHONPATH=src exec python3 -m pytest -q -p no:cacheprovider tests/test_{}.py\n",
        task.underscored()
    )
}

/// Runs every script quietly; the observation is deterministic.
pub const RUN_ALL_SCRIPTS: &str =
    "for s in tests/*.sh; do if bash \"$s\" >/dev/null 2>&1; then echo \"PASS $s\"; else echo \"FAIL $s\"; fi; done";

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum AgentTask {
    Setup,
    TestGen(TaskId),
    Implement(TaskId),
    Inject,
    Blind,
    SolveResolution,
    SolveReproduction,
    SolveLibrary,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Prompt {
    Proposal { count: usize },
    Plan,
    Checklist(TaskId),
    Issue(TaskId),
    /// `step` is the number of agent turns already taken.
    Agent { task: AgentTask, step: usize },
}

fn last_task_heading(text: &str) -> Option<TaskId> {
    static RE: OnceLock<Regex> = OnceLock::new();
    let re = RE.get_or_init(|| Regex::new(r"Task (\d+\.\d+\.\d+)").unwrap());
    re.captures_iter(text).last().and_then(|c| c[1].parse().ok())
}

fn count_re() -> &'static Regex {
    static RE: OnceLock<Regex> = OnceLock::new();
    RE.get_or_init(|| Regex::new(r"exactly (\d+)").unwrap())
}

/// Which prompt `request` is.
pub fn classify(request: &CompletionRequest) -> Option<Prompt> {
    let system = request.messages.iter().find(|m| m.role == Role::System)?;
    let user = request.messages.iter().find(|m| m.role == Role::User)?;
    let s = system.content.as_str();
    let u = user.content.as_str();
    if s.starts_with("You design software projects") {
        let count = count_re().captures(u).and_then(|c| c[1].parse().ok()).unwrap_or(1);
        return Some(Prompt::Proposal { count });
    }
    if s.starts_with("You turn a project proposal") {
        return Some(Prompt::Plan);
    }
    if s.starts_with("You write unit-test checklists") {
        return last_task_heading(u).map(Prompt::Checklist);
    }
    if s.starts_with("You create realistic software defects") {
        return last_task_heading(u).map(Prompt::Issue);
    }
    if !s.starts_with("You are a software engineer") {
        return None;
    }
    let step = request.messages.iter().filter(|m| m.role == Role::Assistant).count();
    let task = if u.starts_with("# Repository setup") {
        AgentTask::Setup
    } else if u.starts_with("# Unit test generation") {
        AgentTask::TestGen(last_task_heading(u.lines().find(|l| l.contains("Write the unit tests for"))?)?)
    } else if u.starts_with("# Implementation") {
        AgentTask::Implement(last_task_heading(u.lines().find(|l| l.starts_with("You are completing"))?)?)
    } else if u.starts_with("# Issue injection with test blinding") {
        AgentTask::Blind
    } else if u.starts_with("# Issue injection") {
        AgentTask::Inject
    } else if u.starts_with("# Issue resolution") {
        AgentTask::SolveResolution
    } else if u.starts_with("# Issue reproduction") {
        AgentTask::SolveReproduction
    } else if u.starts_with("# Library implementation") {
        AgentTask::SolveLibrary
    } else {
        return None;
    };
    Some(Prompt::Agent { task, step })
}

pub fn write(path: &str, content: &str) -> ToolCall {
    ToolCall::FileWrite {
        path: path.into(),
        content: content.into(),
    }
}

pub fn edit(path: &str, old_text: &str, new_text: &str) -> ToolCall {
    ToolCall::StrReplaceEdit {
        path: path.into(),
        old_text: old_text.into(),
        new_text: new_text.into(),
    }
}

pub fn bash(command: &str) -> ToolCall {
    ToolCall::Bash { command: command.into() }
}

pub fn finish(summary: &str) -> ToolCall {
    ToolCall::Finish { summary: summary.into() }
}

/// A reply holding one short thought and `call`.
pub fn reply(thought: &str, call: &ToolCall) -> String {
    format!("{thought}\n\n{}\n", call.render())
}

fn task_files(task: TaskId) -> Option<(&'static str, &'static str, &'static str)> {
    match (task.phase, task.module, task.task) {
        (1, 1, 1) => Some(("src/rpn/tokenizer.py", TOKENIZER, TEST_1_1_1)),
        (1, 1, 2) => Some(("src/rpn/evaluator.py", EVALUATOR, TEST_1_1_2)),
        _ => None,
    }
}

/// The scripted turns of an agent task.
pub fn agent_script(task: AgentTask) -> Vec<(String, ToolCall)> {
    let t = |s: &str| s.to_string();
    match task {
        AgentTask::Setup => vec![
            (t("Create the package skeleton."), write("src/rpn/__init__.py", INIT_PY)),
            (t("Stub the tokenizer."), write("src/rpn/tokenizer.py", TOKENIZER_SKELETON)),
            (t("Stub the evaluator."), write("src/rpn/evaluator.py", EVALUATOR_SKELETON)),
            (t("The skeleton is in place."), finish("Created the rpn package skeleton.")),
        ],
        AgentTask::TestGen(id) => {
            let Some((_, _, tests)) = task_files(id) else {
                return vec![(t("Nothing to test."), finish("No tests for this task."))];
            };
            vec![
                (t("Write the tests."), write(&format!("tests/test_{}.py", id.underscored()), tests)),
                (t("Write the runner."), write(&format!("tests/{id}.sh"), &test_script(id))),
                (t("Check that the tests fail on the skeleton."), bash(RUN_ALL_SCRIPTS)),
                (t("Tests are ready."), finish(&format!("Wrote the tests for task {id}."))),
            ]
        }
        AgentTask::Implement(id) => {
            let Some((path, source, _)) = task_files(id) else {
                return vec![(t("Nothing to do."), finish("Nothing to implement."))];
            };
            vec![
                (t("Implement the module."), write(path, source)),
                (t("Run the test scripts."), bash(RUN_ALL_SCRIPTS)),
                (t("All scripts pass."), finish(&format!("Implemented task {id}."))),
            ]
        }
        AgentTask::Inject => vec![
            (t("Remove the decimal fallback."), edit("src/rpn/tokenizer.py", FLOAT_FALLBACK, FLOAT_BROKEN)),
            (t("Confirm a test now fails."), bash(RUN_ALL_SCRIPTS)),
            (t("The bug is in place."), finish("Decimal literals are no longer parsed.")),
        ],
        AgentTask::Blind => vec![
            (t("Remove the decimal fallback."), edit("src/rpn/tokenizer.py", FLOAT_FALLBACK, FLOAT_BROKEN)),
            (
                t("Drop the test that detects it."),
                edit(
                    "tests/test_1_1_1.py",
                    "def test_decimals_and_negatives():\n    tokens = tokenize(\"-2.5 10 *\")\n    assert tokens == [-2.5, 10, \"*\"]\n    assert isinstance(tokens[0], float) and isinstance(tokens[1], int)\n\n\n",
                    "",
                ),
            ),
            (t("Confirm the remaining tests pass."), bash(RUN_ALL_SCRIPTS)),
            (t("The bug is hidden."), finish("Decimal parsing is broken and untested.")),
        ],
        AgentTask::SolveResolution => vec![
            (t("Restore the float fallback."), edit("src/rpn/tokenizer.py", FLOAT_BROKEN, FLOAT_FALLBACK)),
            (t("Run the test scripts."), bash(RUN_ALL_SCRIPTS)),
            (t("Fixed."), finish("Decimal literals are parsed again.")),
        ],
        AgentTask::SolveReproduction => vec![
            (t("Write a failing test for decimals."), write("tests/test_issue.py", ISSUE_TEST)),
            (
                t("Add a runner for it."),
                write(
                    "tests/issue.sh",
                    "#!/bin/bash\ncd \"$(dirname \"$0\")/..\" || exit 1\nPYTHONPATH=src exec python3 -m pytest -q -p no:cacheprovider tests/test_issue.py\n",
                ),
            ),
            (t("Check that it fails."), bash("bash tests/issue.sh >/dev/null 2>&1 && echo PASS || echo FAIL")),
            (t("The issue is reproduced."), finish("Added tests/issue.sh reproducing the report.")),
        ],
        AgentTask::SolveLibrary => vec![
            (t("Implement the tokenizer."), write("src/rpn/tokenizer.py", TOKENIZER)),
            (t("Implement the evaluator."), write("src/rpn/evaluator.py", EVALUATOR)),
            (t("Done."), finish("Implemented the library.")),
        ],
    }
}

fn proposals(count: usize) -> String {
    let items: Vec<ProjectProposal> = (0..count)
        .map(|i| {
            let mut p = proposal();
            if i > 0 {
                p.repo_name = format!("{REPO_NAME}-{}", i + 1);
            }
            p
        })
        .collect();
    render_proposals(&items)
}

/// The scripted answer to `request`, if it is a prompt this model knows.
pub fn respond(request: &CompletionRequest) -> Option<String> {
    Some(match classify(request)? {
        Prompt::Proposal { count } => proposals(count),
        Prompt::Plan => format!("<tasks>\n{PLAN}</tasks>\n"),
        Prompt::Checklist(id) => match (id.phase, id.module, id.task) {
            (1, 1, 1) => CHECKLIST_1_1_1.to_string(),
            (1, 1, 2) => CHECKLIST_1_1_2.to_string(),
            _ => return None,
        },
        Prompt::Issue(_) => ISSUE.to_string(),
        Prompt::Agent { task, step } => {
            let script = agent_script(task);
            let (thought, call) = script.get(step).cloned().unwrap_or_else(|| ("Done.".into(), finish("Done.")));
            reply(&thought, &call)
        }
    })
}

pub fn backend() -> ScriptedBackend {
    ScriptedBackend::from_fn(respond)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::gateway::ChatMessage;
    use crate::plan::{parse_plan, topological_order, validate_plan};

    #[test]
    fn plan_is_valid() {
        let plan = parse_plan(PLAN).unwrap();
        assert!(validate_plan(&plan).passed());
        let order = topological_order(&plan).unwrap();
        assert_eq!(order, vec![TaskId::new(1, 1, 1), TaskId::new(1, 1, 2)]);
    }

    #[test]
    fn agent_steps_are_counted() {
        let mut messages = vec![
            ChatMessage::system("You are a software engineer at /workspace"),
            ChatMessage::user("# Implementation\n\nYou are completing this repository one task at a time. All tasks before 1.1.2 are finished. Implement Task 1.1.2."),
        ];
        let req = CompletionRequest::new("m", messages.clone());
        assert_eq!(
            classify(&req),
            Some(Prompt::Agent {
                task: AgentTask::Implement(TaskId::new(1, 1, 2)),
                step: 0
            })
        );
        messages.push(ChatMessage::assistant("x"));
        messages.push(ChatMessage::user("obs"));
        let req = CompletionRequest::new("m", messages);
        assert!(respond(&req).unwrap().contains("```bash"));
    }

    #[test]
    fn injected_bug_text_is_in_the_source() {
        assert!(TOKENIZER.contains(FLOAT_FALLBACK));
        assert!(TEST_1_1_1.contains("def test_decimals_and_negatives():\n    tokens = tokenize(\"-2.5 10 *\")\n    assert tokens == [-2.5, 10, \"*\"]\n    assert isinstance(tokens[0], float) and isinstance(tokens[1], int)\n\n\n"));
    }
}
