//! Per-trajectory statistics and dataset-level means.
//!
//! Means are exact rationals; rounding happens only when a report is
//! rendered. Dataset-level bash proportion is the mean of per-trajectory
//! proportions, like every other per-trajectory metric.

use std::collections::BTreeMap;

use num_bigint::BigInt;
use num_rational::BigRational;
use num_traits::{Signed, ToPrimitive, Zero};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use super::{Trajectory, TrajectoryFilter, TrajectoryKind};
use crate::agent::ToolCall;
use crate::gateway::{count_tokens, Role};

pub const REPORT_LABELS: [&str; 7] = [
    "Total Count",
    "Message",
    "Tokens",
    "Assist Tokens",
    "Tool Call",
    "Lines Edited",
    "Bash Proportion",
];

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct TrajectoryStats {
    pub message_count: u64,
    pub total_tokens: u64,
    pub assistant_tokens: u64,
    /// Steps with a parsed call, `finish` included.
    pub tool_calls: u64,
    pub bash_calls: u64,
    pub lines_edited: u64,
}

impl TrajectoryStats {
    /// `bash_calls / tool_calls`, 0 without calls.
    pub fn bash_proportion(&self) -> BigRational {
        if self.tool_calls == 0 {
            BigRational::zero()
        } else {
            BigRational::new(self.bash_calls.into(), self.tool_calls.into())
        }
    }
}

pub fn compute_stats(t: &Trajectory) -> TrajectoryStats {
    let mut s = TrajectoryStats {
        message_count: t.messages.len() as u64,
        lines_edited: t.final_diff.lines_edited(),
        ..Default::default()
    };
    for m in &t.messages {
        let n = count_tokens(&m.content);
        s.total_tokens += n;
        if m.role == Role::Assistant {
            s.assistant_tokens += n;
        }
    }
    for call in t.steps.iter().filter_map(|step| step.call.as_ref()) {
        s.tool_calls += 1;
        if matches!(call, ToolCall::Bash { .. }) {
            s.bash_calls += 1;
        }
    }
    s
}

/// Exact means over a selection.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct AggregateStats {
    pub count: u64,
    pub message: BigRational,
    pub tokens: BigRational,
    pub assistant_tokens: BigRational,
    pub tool_calls: BigRational,
    pub lines_edited: BigRational,
    pub bash_proportion: BigRational,
}

impl AggregateStats {
    pub fn of(stats: &[TrajectoryStats]) -> Option<Self> {
        if stats.is_empty() {
            return None;
        }
        let n = BigRational::from_integer(BigInt::from(stats.len()));
        let mean = |f: &dyn Fn(&TrajectoryStats) -> BigRational| {
            stats.iter().map(f).fold(BigRational::zero(), |a, b| a + b) / &n
        };
        let int = |v: u64| BigRational::from_integer(BigInt::from(v));
        Some(Self {
            count: stats.len() as u64,
            message: mean(&|s| int(s.message_count)),
            tokens: mean(&|s| int(s.total_tokens)),
            assistant_tokens: mean(&|s| int(s.assistant_tokens)),
            tool_calls: mean(&|s| int(s.tool_calls)),
            lines_edited: mean(&|s| int(s.lines_edited)),
            bash_proportion: mean(&|s| s.bash_proportion()),
        })
    }

    /// Report cells in [`REPORT_LABELS`] order.
    pub fn cells(&self) -> [String; 7] {
        [
            self.count.to_string(),
            fixed(&self.message, 1, false),
            fixed(&self.tokens, 0, true),
            fixed(&self.assistant_tokens, 0, true),
            fixed(&self.tool_calls, 1, false),
            fixed(&self.lines_edited, 1, false),
            format!("{}%", fixed(&(self.bash_proportion.clone() * BigRational::from_integer(100.into())), 1, false)),
        ]
    }
}

/// Decimal rendering rounded half away from zero.
pub fn fixed(r: &BigRational, decimals: u32, thousands: bool) -> String {
    let scale = BigInt::from(10u32).pow(decimals);
    let scaled = r.abs() * BigRational::from_integer(scale.clone());
    let rounded = (scaled + BigRational::new(1.into(), 2.into())).floor().to_integer();
    let int_part = (&rounded / &scale).to_string();
    let frac = (&rounded % &scale).to_string();
    let mut int_part = if thousands {
        let digits: Vec<char> = int_part.chars().collect();
        let mut out = String::new();
        for (i, c) in digits.iter().enumerate() {
            if i > 0 && (digits.len() - i) % 3 == 0 {
                out.push(',');
            }
            out.push(*c);
        }
        out
    } else {
        int_part
    };
    if r.is_negative() && !rounded.is_zero() {
        int_part.insert(0, '-');
    }
    if decimals == 0 {
        int_part
    } else {
        format!("{int_part}.{frac:0>width$}", width = decimals as usize)
    }
}

fn ratio_json(r: &BigRational) -> RationalJson {
    RationalJson {
        exact: format!("{}/{}", r.numer(), r.denom()),
        value: r.to_f64().unwrap_or(f64::NAN),
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RationalJson {
    pub exact: String,
    pub value: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MeansJson {
    pub message: RationalJson,
    pub tokens: RationalJson,
    pub assistant_tokens: RationalJson,
    pub tool_calls: RationalJson,
    pub lines_edited: RationalJson,
    pub bash_proportion: RationalJson,
}

impl From<&AggregateStats> for MeansJson {
    fn from(a: &AggregateStats) -> Self {
        Self {
            message: ratio_json(&a.message),
            tokens: ratio_json(&a.tokens),
            assistant_tokens: ratio_json(&a.assistant_tokens),
            tool_calls: ratio_json(&a.tool_calls),
            lines_edited: ratio_json(&a.lines_edited),
            bash_proportion: ratio_json(&a.bash_proportion),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ManifestEntry {
    pub id: String,
    pub kind: TrajectoryKind,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetManifest {
    pub filter: TrajectoryFilter,
    /// Sorted by id.
    pub trajectories: Vec<ManifestEntry>,
    pub counts: BTreeMap<TrajectoryKind, u64>,
    pub total_count: u64,
    pub means: MeansJson,
    /// `[label, rounded value]` in report order.
    pub report: Vec<[String; 2]>,
}

#[derive(Debug, Error, PartialEq, Eq)]
#[error("no trajectories match the filter")]
pub struct EmptySelection;

/// Means and counts over the trajectories matching `filter`.
pub fn aggregate(
    trajectories: &[Trajectory],
    filter: &TrajectoryFilter,
) -> Result<(DatasetManifest, AggregateStats), EmptySelection> {
    let mut selected: Vec<&Trajectory> = trajectories.iter().filter(|t| filter.matches(t)).collect();
    selected.sort_by(|a, b| a.id.cmp(&b.id));
    let stats: Vec<TrajectoryStats> = selected.iter().map(|t| compute_stats(t)).collect();
    let agg = AggregateStats::of(&stats).ok_or(EmptySelection)?;
    let mut counts = BTreeMap::new();
    for t in &selected {
        *counts.entry(t.kind).or_insert(0) += 1;
    }
    let report = REPORT_LABELS
        .iter()
        .zip(agg.cells())
        .map(|(l, c)| [l.to_string(), c])
        .collect();
    let manifest = DatasetManifest {
        filter: filter.clone(),
        trajectories: selected
            .iter()
            .map(|t| ManifestEntry { id: t.id.clone(), kind: t.kind })
            .collect(),
        counts,
        total_count: agg.count,
        means: MeansJson::from(&agg),
        report,
    };
    Ok((manifest, agg))
}

/// Aligned text table: one row per metric, one column per named selection.
pub fn render_report(columns: &[(&str, &AggregateStats)]) -> String {
    let mut rows: Vec<Vec<String>> = vec![std::iter::once("Metric".to_string())
        .chain(columns.iter().map(|(name, _)| name.to_string()))
        .collect()];
    let cells: Vec<[String; 7]> = columns.iter().map(|(_, a)| a.cells()).collect();
    for (i, label) in REPORT_LABELS.iter().enumerate() {
        rows.push(
            std::iter::once(label.to_string())
                .chain(cells.iter().map(|c| c[i].clone()))
                .collect(),
        );
    }
    aligned(&rows)
}

/// Aligned text table: one column per metric, one row per named selection.
pub fn render_table(rows: &[(&str, &AggregateStats)]) -> String {
    let mut table: Vec<Vec<String>> = vec![std::iter::once("Selection".to_string())
        .chain(REPORT_LABELS.iter().map(|l| l.to_string()))
        .collect()];
    for (name, agg) in rows {
        table.push(std::iter::once(name.to_string()).chain(agg.cells()).collect());
    }
    aligned(&table)
}

/// Metric labels in the header of a [`render_table`] output.
pub fn table_column_labels(table: &str) -> Vec<String> {
    table
        .lines()
        .next()
        .unwrap_or("")
        .split(" | ")
        .skip(1)
        .map(|c| c.trim().to_string())
        .collect()
}

fn aligned(rows: &[Vec<String>]) -> String {
    let widths: Vec<usize> = (0..rows[0].len())
        .map(|c| rows.iter().map(|r| r[c].chars().count()).max().unwrap_or(0))
        .collect();
    let mut out = String::new();
    for (n, row) in rows.iter().enumerate() {
        let line: Vec<String> = row
            .iter()
            .enumerate()
            .map(|(c, cell)| {
                if c == 0 {
                    format!("{cell:<w$}", w = widths[c])
                } else {
                    format!("{cell:>w$}", w = widths[c])
                }
            })
            .collect();
        out.push_str(line.join(" | ").trim_end());
        out.push('\n');
        if n == 0 {
            let rule: Vec<String> = widths.iter().map(|w| "-".repeat(*w)).collect();
            out.push_str(&rule.join("-+-"));
            out.push('\n');
        }
    }
    out
}

/// Labels of the metric rows of a rendered report.
pub fn report_row_labels(report: &str) -> Vec<String> {
    report
        .lines()
        .skip(2)
        .map(|l| l.split(" | ").next().unwrap_or("").trim().to_string())
        .collect()
}
