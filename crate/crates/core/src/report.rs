//! Flat tabular views of scores for CSV/JSONL export, plus a plain-text
//! leaderboard table. Scores are stored as fractions; `*_pp` fields and the
//! rendered table are in percentage points.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::analysis::{DifficultyGain, LeaveOneOutRow};
use crate::domain::Category;
use crate::metrics::{AbilityScores, AbilityValues};

pub fn pp(x: f64) -> f64 {
    x * 100.0
}

/// Two-decimal percentage points, `-` when absent.
pub fn fmt_pp(x: Option<f64>) -> String {
    match x {
        Some(v) => format!("{:.2}", pp(v)),
        None => "-".into(),
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AbilityRecord {
    pub teacher_id: String,
    /// `overall` or a category name.
    pub scope: String,
    pub ca: f64,
    pub aa: Option<f64>,
    pub ja: f64,
    pub ga: f64,
    pub ra: Option<f64>,
    pub ca_pp: f64,
    pub aa_pp: Option<f64>,
    pub ja_pp: f64,
    pub ga_pp: f64,
    pub ra_pp: Option<f64>,
}

impl AbilityRecord {
    pub fn new(teacher_id: &str, scope: &str, v: &AbilityValues) -> Self {
        AbilityRecord {
            teacher_id: teacher_id.into(),
            scope: scope.into(),
            ca: v.ca,
            aa: v.aa,
            ja: v.ja,
            ga: v.ga,
            ra: v.ra,
            ca_pp: pp(v.ca),
            aa_pp: v.aa.map(pp),
            ja_pp: pp(v.ja),
            ga_pp: pp(v.ga),
            ra_pp: v.ra.map(pp),
        }
    }
}

pub fn ability_records(teacher_id: &str, scores: &AbilityScores) -> Vec<AbilityRecord> {
    std::iter::once(AbilityRecord::new(teacher_id, "overall", &scores.overall))
        .chain(scores.per_category.iter().map(|(c, v)| AbilityRecord::new(teacher_id, c.as_str(), v)))
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TurnRecord {
    pub teacher_id: String,
    pub turn: usize,
    pub delta_p: f64,
    pub cumulative: f64,
    pub delta_p_pp: f64,
    pub cumulative_pp: f64,
}

pub fn turn_records(teacher_id: &str, scores: &AbilityScores) -> Vec<TurnRecord> {
    let mut cumulative = 0.0;
    scores
        .per_turn_delta
        .iter()
        .enumerate()
        .map(|(k, &d)| {
            cumulative += d;
            TurnRecord {
                teacher_id: teacher_id.into(),
                turn: k + 1,
                delta_p: d,
                cumulative,
                delta_p_pp: pp(d),
                cumulative_pp: pp(cumulative),
            }
        })
        .collect()
}

/// Column order of [`table_row`].
pub const TABLE_HEADER: [&str; 10] = [
    "Model",
    "Comprehensive",
    "Application",
    "Judgment",
    "Guidance",
    "Reflection",
    "Knowledge",
    "Reasoning",
    "Understanding",
    "Multilingual",
];

/// `model & CA & AA & JA & GA & RA & CA per category`, in percentage points.
pub fn table_row(model: &str, overall: &AbilityValues, category_ca: &dyn Fn(Category) -> Option<f64>) -> String {
    let mut cells = vec![
        model.to_string(),
        fmt_pp(Some(overall.ca)),
        fmt_pp(overall.aa),
        fmt_pp(Some(overall.ja)),
        fmt_pp(Some(overall.ga)),
        fmt_pp(overall.ra),
    ];
    cells.extend(Category::ALL.iter().map(|&c| fmt_pp(category_ca(c))));
    cells.join(" & ")
}

pub fn scores_row(model: &str, scores: &AbilityScores) -> String {
    table_row(model, &scores.overall, &|c| scores.per_category.get(&c).map(|v| v.ca))
}

/// Header plus one row per teacher, best CA first.
pub fn leaderboard(rows: &[(String, AbilityScores)]) -> String {
    let mut sorted: Vec<&(String, AbilityScores)> = rows.iter().collect();
    sorted.sort_by(|a, b| b.1.overall.ca.total_cmp(&a.1.overall.ca).then_with(|| a.0.cmp(&b.0)));
    let mut out = TABLE_HEADER.join(" & ");
    out.push('\n');
    for (model, scores) in sorted {
        out.push_str(&scores_row(model, scores));
        out.push('\n');
    }
    out
}

/// One (left-out student, teacher) CA per row.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LeaveOneOutRecord {
    pub left_out: String,
    pub teacher_id: String,
    pub ca: f64,
    pub kendall_tau: Option<f64>,
    pub spearman: Option<f64>,
}

pub fn leave_one_out_records(rows: &[LeaveOneOutRow]) -> Vec<LeaveOneOutRecord> {
    rows.iter()
        .flat_map(|r| {
            r.ca.iter().map(|(teacher, &ca)| LeaveOneOutRecord {
                left_out: r.left_out.clone(),
                teacher_id: teacher.clone(),
                ca,
                kendall_tau: r.kendall_tau,
                spearman: r.spearman,
            })
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DifficultyRecord {
    pub teacher_id: String,
    pub level: u8,
    pub initially_wrong: usize,
    pub fixed: usize,
    pub ratio: Option<f64>,
}

pub fn difficulty_records(teacher_id: &str, profile: &[DifficultyGain]) -> Vec<DifficultyRecord> {
    profile
        .iter()
        .map(|g| DifficultyRecord {
            teacher_id: teacher_id.into(),
            level: g.level,
            initially_wrong: g.initially_wrong,
            fixed: g.fixed,
            ratio: g.ratio,
        })
        .collect()
}

#[derive(Debug, thiserror::Error)]
#[error("writing {path}: {detail}")]
pub struct ReportError {
    pub path: String,
    pub detail: String,
}

/// Writes records as CSV with a header row.
pub fn write_csv<T: Serialize>(path: &Path, records: &[T]) -> Result<(), ReportError> {
    let err = |detail: String| ReportError { path: path.display().to_string(), detail };
    let mut w = csv::Writer::from_path(path).map_err(|e| err(e.to_string()))?;
    for r in records {
        w.serialize(r).map_err(|e| err(e.to_string()))?;
    }
    w.flush().map_err(|e| err(e.to_string()))
}

/// CSV text of `records`, for tests and stdout output.
pub fn csv_string<T: Serialize>(records: &[T]) -> String {
    let mut w = csv::Writer::from_writer(Vec::new());
    for r in records {
        w.serialize(r).expect("in-memory csv");
    }
    String::from_utf8(w.into_inner().expect("in-memory csv")).expect("utf-8 csv")
}
