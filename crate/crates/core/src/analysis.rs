//! Post-hoc analytics over scored runs: rank correlations against external
//! leaderboards, teacher/student confusion matrices, leave-one-student-out
//! and turn-sweep ablations, and per-difficulty gain profiles.
//!
//! Ties: Kendall uses the tau-b correction, Spearman uses average ranks.

use std::collections::{BTreeMap, HashMap, HashSet};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::domain::{CorrectnessGrid, McqQuestion};
use crate::metrics::{self, MetricsError};

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum AnalysisError {
    #[error("rank lists disagree on model ids: {0}")]
    MismatchedIds(String),
    #[error("duplicate model id {0}")]
    DuplicateId(String),
    #[error("need at least 2 models, got {0}")]
    TooFewModels(usize),
    #[error("correlation undefined: every score in one list is tied")]
    ConstantScores,
    #[error("question {0} has no difficulty level")]
    MissingDifficulty(String),
    #[error("need at least 2 students, got {0}")]
    TooFewStudents(usize),
    #[error("turn {turn} out of range 0..={max}")]
    TurnOutOfRange { turn: usize, max: usize },
    #[error("teacher row has {row} entries for {questions} questions")]
    TeacherRowMismatch { row: usize, questions: usize },
    #[error("reading rank list {path}: {detail}")]
    Read { path: String, detail: String },
    #[error(transparent)]
    Metrics(#[from] MetricsError),
}

pub type Result<T> = std::result::Result<T, AnalysisError>;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RankEntry {
    pub model_id: String,
    pub score: f64,
}

/// Scores per model. Higher is better; only the ordering matters.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct RankList {
    pub entries: Vec<RankEntry>,
}

impl RankList {
    pub fn new(entries: impl IntoIterator<Item = (impl Into<String>, f64)>) -> Result<Self> {
        let list = RankList {
            entries: entries
                .into_iter()
                .map(|(id, score)| RankEntry { model_id: id.into(), score })
                .collect(),
        };
        list.validate()?;
        Ok(list)
    }

    pub fn validate(&self) -> Result<()> {
        let mut seen = HashSet::new();
        for e in &self.entries {
            if !seen.insert(e.model_id.as_str()) {
                return Err(AnalysisError::DuplicateId(e.model_id.clone()));
            }
        }
        Ok(())
    }

    /// Reads a `model_id,score` CSV with a header row.
    pub fn from_csv(path: &Path) -> Result<Self> {
        let read_err = |detail: String| AnalysisError::Read { path: path.display().to_string(), detail };
        let mut reader = csv::Reader::from_path(path).map_err(|e| read_err(e.to_string()))?;
        let entries = reader
            .deserialize::<RankEntry>()
            .collect::<std::result::Result<Vec<_>, _>>()
            .map_err(|e| read_err(e.to_string()))?;
        let list = RankList { entries };
        list.validate()?;
        Ok(list)
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }
}

/// Scores of `a` and `b` paired by model id, in `a`'s order.
fn paired(a: &RankList, b: &RankList) -> Result<(Vec<f64>, Vec<f64>)> {
    a.validate()?;
    b.validate()?;
    let lookup: HashMap<&str, f64> = b.entries.iter().map(|e| (e.model_id.as_str(), e.score)).collect();
    if a.len() != b.len() {
        return Err(AnalysisError::MismatchedIds(format!("{} vs {} models", a.len(), b.len())));
    }
    let mut xs = Vec::with_capacity(a.len());
    let mut ys = Vec::with_capacity(a.len());
    for e in &a.entries {
        let y = lookup
            .get(e.model_id.as_str())
            .ok_or_else(|| AnalysisError::MismatchedIds(format!("{} missing from second list", e.model_id)))?;
        xs.push(e.score);
        ys.push(*y);
    }
    if xs.len() < 2 {
        return Err(AnalysisError::TooFewModels(xs.len()));
    }
    Ok((xs, ys))
}

/// Kendall's tau-b.
pub fn kendall_tau(a: &RankList, b: &RankList) -> Result<f64> {
    let (x, y) = paired(a, b)?;
    let n = x.len();
    let (mut concordant, mut discordant, mut ties_x, mut ties_y) = (0i64, 0i64, 0i64, 0i64);
    for i in 0..n {
        for j in (i + 1)..n {
            let dx = x[i].partial_cmp(&x[j]).expect("finite score");
            let dy = y[i].partial_cmp(&y[j]).expect("finite score");
            use std::cmp::Ordering::Equal;
            match (dx, dy) {
                (Equal, Equal) => {
                    ties_x += 1;
                    ties_y += 1;
                }
                (Equal, _) => ties_x += 1,
                (_, Equal) => ties_y += 1,
                _ if dx == dy => concordant += 1,
                _ => discordant += 1,
            }
        }
    }
    let pairs = (n * (n - 1) / 2) as i64;
    let denom = (((pairs - ties_x) * (pairs - ties_y)) as f64).sqrt();
    if denom == 0.0 {
        return Err(AnalysisError::ConstantScores);
    }
    Ok((concordant - discordant) as f64 / denom)
}

/// 1-based ranks, ascending by value; tied values share their average rank.
pub fn average_ranks(values: &[f64]) -> Vec<f64> {
    let mut order: Vec<usize> = (0..values.len()).collect();
    order.sort_by(|&i, &j| values[i].partial_cmp(&values[j]).expect("finite score"));
    let mut ranks = vec![0.0; values.len()];
    let mut start = 0;
    while start < order.len() {
        let mut end = start + 1;
        while end < order.len() && values[order[end]] == values[order[start]] {
            end += 1;
        }
        // positions start..end hold ranks start+1..=end
        let avg = (start + 1 + end) as f64 / 2.0;
        for &idx in &order[start..end] {
            ranks[idx] = avg;
        }
        start = end;
    }
    ranks
}

/// Spearman's rho as `1 - 6 Σd² / (n(n²-1))` over average ranks.
pub fn spearman(a: &RankList, b: &RankList) -> Result<f64> {
    let (x, y) = paired(a, b)?;
    let n = x.len() as f64;
    let rx = average_ranks(&x);
    let ry = average_ranks(&y);
    let d2: f64 = rx.iter().zip(&ry).map(|(p, q)| (p - q).powi(2)).sum();
    // numerator and denominator are exact (d² is a multiple of 1/4), so one rounding
    let denom = n * (n * n - 1.0);
    Ok((denom - 6.0 * d2) / denom)
}

/// Teacher zero-shot correctness crossed with student correctness at one turn.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct ConfusionMatrix2x2 {
    pub turn: usize,
    pub teacher_correct_student_correct: usize,
    pub teacher_correct_student_wrong: usize,
    pub teacher_wrong_student_correct: usize,
    pub teacher_wrong_student_wrong: usize,
}

impl ConfusionMatrix2x2 {
    pub fn total(&self) -> usize {
        self.teacher_correct_student_correct
            + self.teacher_correct_student_wrong
            + self.teacher_wrong_student_correct
            + self.teacher_wrong_student_wrong
    }

    pub fn teacher_correct(&self) -> usize {
        self.teacher_correct_student_correct + self.teacher_correct_student_wrong
    }
}

pub fn confusion_matrix(grids: &[CorrectnessGrid], teacher_row: &[bool], turn: usize) -> Result<ConfusionMatrix2x2> {
    let mut m = ConfusionMatrix2x2 { turn, ..Default::default() };
    for g in grids {
        if g.questions() != teacher_row.len() {
            return Err(AnalysisError::TeacherRowMismatch { row: teacher_row.len(), questions: g.questions() });
        }
        if turn >= g.columns() {
            return Err(AnalysisError::TurnOutOfRange { turn, max: g.columns().saturating_sub(1) });
        }
        for (row, &teacher_ok) in g.cells.iter().zip(teacher_row) {
            let cell = match (teacher_ok, row[turn]) {
                (true, true) => &mut m.teacher_correct_student_correct,
                (true, false) => &mut m.teacher_correct_student_wrong,
                (false, true) => &mut m.teacher_wrong_student_correct,
                (false, false) => &mut m.teacher_wrong_student_wrong,
            };
            *cell += 1;
        }
    }
    Ok(m)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LeaveOneOutRow {
    pub left_out: String,
    /// CA per teacher over the remaining students.
    pub ca: BTreeMap<String, f64>,
    pub kendall_tau: Option<f64>,
    pub spearman: Option<f64>,
}

/// Recomputes CA for every subset that drops exactly one student, and, when
/// an external leaderboard is given and there are at least two teachers,
/// both rank correlations against it.
pub fn leave_one_student_out(
    teacher_grids: &BTreeMap<String, Vec<CorrectnessGrid>>,
    turns: usize,
    external: Option<&RankList>,
) -> Result<Vec<LeaveOneOutRow>> {
    let students: Vec<String> = teacher_grids
        .values()
        .next()
        .map(|gs| gs.iter().map(|g| g.student_id.clone()).collect())
        .unwrap_or_default();
    if students.len() < 2 {
        return Err(AnalysisError::TooFewStudents(students.len()));
    }
    let mut rows = Vec::with_capacity(students.len());
    for left_out in &students {
        let mut ca = BTreeMap::new();
        for (teacher, grids) in teacher_grids {
            let subset: Vec<CorrectnessGrid> =
                grids.iter().filter(|g| &g.student_id != left_out).cloned().collect();
            ca.insert(teacher.clone(), metrics::comprehensive_ability(&subset, turns)?);
        }
        let (kendall, rho) = match external {
            Some(ext) if ca.len() >= 2 => {
                let ours = RankList::new(ca.iter().map(|(k, v)| (k.clone(), *v)))?;
                (Some(kendall_tau(&ours, ext)?), Some(spearman(&ours, ext)?))
            }
            _ => (None, None),
        };
        rows.push(LeaveOneOutRow { left_out: left_out.clone(), ca, kendall_tau: kendall, spearman: rho });
    }
    Ok(rows)
}

/// `CA_t` after each of the turns `1..=max_turns`.
pub fn turn_sweep(grids: &[CorrectnessGrid], max_turns: usize) -> Result<Vec<f64>> {
    (1..=max_turns)
        .map(|t| Ok(metrics::comprehensive_ability(grids, t)?))
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DifficultyGain {
    pub level: u8,
    pub initially_wrong: usize,
    pub fixed: usize,
    /// `fixed / initially_wrong`; absent when nothing was initially wrong.
    pub ratio: Option<f64>,
}

/// Per difficulty level: the share of initially wrong (student, question)
/// pairs that are correct at turn `turns`.
pub fn difficulty_gain_profile(
    grids: &[CorrectnessGrid],
    questions: &[McqQuestion],
    turns: usize,
) -> Result<Vec<DifficultyGain>> {
    let mut level_of = HashMap::new();
    for q in questions {
        let level = q.difficulty.ok_or_else(|| AnalysisError::MissingDifficulty(q.id.clone()))?;
        level_of.insert(q.id.as_str(), level);
    }
    let mut counts: BTreeMap<u8, (usize, usize)> = level_of.values().map(|&l| (l, (0, 0))).collect();
    for g in grids {
        if turns >= g.columns() {
            return Err(AnalysisError::TurnOutOfRange { turn: turns, max: g.columns().saturating_sub(1) });
        }
        for (qid, row) in g.question_ids.iter().zip(&g.cells) {
            let level = *level_of
                .get(qid.as_str())
                .ok_or_else(|| AnalysisError::MissingDifficulty(qid.clone()))?;
            if !row[0] {
                let entry = counts.entry(level).or_default();
                entry.0 += 1;
                if row[turns] {
                    entry.1 += 1;
                }
            }
        }
    }
    Ok(counts
        .into_iter()
        .map(|(level, (wrong, fixed))| DifficultyGain {
            level,
            initially_wrong: wrong,
            fixed,
            ratio: (wrong > 0).then(|| fixed as f64 / wrong as f64),
        })
        .collect())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::domain::Category;

    fn ranks(values: &[f64]) -> RankList {
        RankList::new(values.iter().enumerate().map(|(i, v)| (format!("m{i}"), *v))).unwrap()
    }

    #[test]
    fn kendall_examples() {
        let a = ranks(&[1.0, 2.0, 3.0, 4.0, 5.0]);
        assert_eq!(kendall_tau(&a, &a).unwrap(), 1.0);
        assert_eq!(kendall_tau(&a, &ranks(&[5.0, 4.0, 3.0, 2.0, 1.0])).unwrap(), -1.0);
        let t = kendall_tau(&ranks(&[1.0, 2.0, 3.0, 4.0]), &ranks(&[1.0, 3.0, 2.0, 4.0])).unwrap();
        assert!((t - 4.0 / 6.0).abs() < 1e-12);
    }

    #[test]
    fn kendall_tau_b_with_ties() {
        // x = (1,2,2,3), y = (1,2,3,4): C=5, D=0, ties_x=1, pairs=6
        let t = kendall_tau(&ranks(&[1.0, 2.0, 2.0, 3.0]), &ranks(&[1.0, 2.0, 3.0, 4.0])).unwrap();
        assert!((t - 5.0 / (5.0f64 * 6.0).sqrt()).abs() < 1e-12);
        assert_eq!(
            kendall_tau(&ranks(&[1.0, 1.0, 1.0]), &ranks(&[1.0, 2.0, 3.0])),
            Err(AnalysisError::ConstantScores)
        );
    }

    #[test]
    fn spearman_examples() {
        let a = ranks(&[1.0, 2.0, 3.0]);
        assert_eq!(spearman(&a, &a).unwrap(), 1.0);
        assert_eq!(spearman(&a, &ranks(&[3.0, 2.0, 1.0])).unwrap(), -1.0);
        let r = spearman(&ranks(&[1.0, 2.0, 3.0, 4.0]), &ranks(&[1.0, 3.0, 2.0, 4.0])).unwrap();
        assert!((r - 0.8).abs() < 1e-12);
    }

    #[test]
    fn average_ranks_share_ties() {
        assert_eq!(average_ranks(&[10.0, 20.0, 20.0, 5.0]), vec![2.0, 3.5, 3.5, 1.0]);
    }

    #[test]
    fn mismatched_ids() {
        let a = RankList::new([("x", 1.0), ("y", 2.0)]).unwrap();
        let b = RankList::new([("x", 1.0), ("z", 2.0)]).unwrap();
        assert!(matches!(kendall_tau(&a, &b), Err(AnalysisError::MismatchedIds(_))));
        assert!(matches!(spearman(&a, &b), Err(AnalysisError::MismatchedIds(_))));
        assert!(matches!(RankList::new([("x", 1.0), ("x", 2.0)]), Err(AnalysisError::DuplicateId(_))));
        let one = RankList::new([("x", 1.0)]).unwrap();
        assert_eq!(kendall_tau(&one, &one), Err(AnalysisError::TooFewModels(1)));
    }

    #[test]
    fn pairs_by_id_not_position() {
        let a = RankList::new([("x", 1.0), ("y", 2.0), ("z", 3.0)]).unwrap();
        let b = RankList::new([("z", 30.0), ("x", 10.0), ("y", 20.0)]).unwrap();
        assert_eq!(kendall_tau(&a, &b).unwrap(), 1.0);
        assert_eq!(spearman(&a, &b).unwrap(), 1.0);
    }

    #[test]
    fn confusion_fixture() {
        // teacher [C,C,W,W]; student turn0 [C,W,C,W], turn3 [C,C,C,W]
        let g = CorrectnessGrid::from_cells(
            "s",
            vec![
                vec![true, true, true, true],
                vec![false, false, true, true],
                vec![true, true, true, true],
                vec![false, false, false, false],
            ],
        );
        let teacher = [true, true, false, false];
        let m0 = confusion_matrix(std::slice::from_ref(&g), &teacher, 0).unwrap();
        assert_eq!(
            (m0.teacher_correct_student_correct, m0.teacher_correct_student_wrong),
            (1, 1)
        );
        assert_eq!((m0.teacher_wrong_student_correct, m0.teacher_wrong_student_wrong), (1, 1));
        let m3 = confusion_matrix(std::slice::from_ref(&g), &teacher, 3).unwrap();
        assert_eq!((m3.teacher_correct_student_correct, m3.teacher_correct_student_wrong), (2, 0));
        assert_eq!(m0.teacher_correct(), m3.teacher_correct());
        assert_eq!(m3.total(), 4);
        assert!(matches!(confusion_matrix(&[g], &teacher, 4), Err(AnalysisError::TurnOutOfRange { .. })));
    }

    #[test]
    fn all_teacher_right_student_wrong() {
        let g = CorrectnessGrid::from_cells("s", vec![vec![false, true]; 3]);
        let m = confusion_matrix(&[g], &[true; 3], 0).unwrap();
        assert_eq!(m.teacher_correct_student_wrong, 3);
        assert_eq!(m.total(), 3);
    }

    #[test]
    fn leave_one_out_enumerates_subsets() {
        let mk = |id: &str, fixed: usize| {
            CorrectnessGrid::from_cells(id, (0..4).map(|i| vec![false, i < fixed]).collect())
        };
        let mut tg = BTreeMap::new();
        tg.insert("t1".to_string(), vec![mk("a", 1), mk("b", 3)]);
        tg.insert("t2".to_string(), vec![mk("a", 0), mk("b", 2)]);
        let ext = RankList::new([("t1", 2.0), ("t2", 1.0)]).unwrap();
        let rows = leave_one_student_out(&tg, 1, Some(&ext)).unwrap();
        assert_eq!(rows.len(), 2);
        assert_eq!(rows[0].left_out, "a");
        assert_eq!(rows[0].ca["t1"], 0.75);
        assert_eq!(rows[1].ca["t2"], 0.0);
        assert_eq!(rows[0].kendall_tau, Some(1.0));
        let mut single = BTreeMap::new();
        single.insert("t".to_string(), vec![mk("a", 1)]);
        assert_eq!(leave_one_student_out(&single, 1, None), Err(AnalysisError::TooFewStudents(1)));
    }

    #[test]
    fn turn_sweep_matches_ca() {
        let g = CorrectnessGrid::from_cells(
            "s",
            vec![vec![false, true, true, true], vec![false, false, true, false], vec![true, true, true, true]],
        );
        let sweep = turn_sweep(std::slice::from_ref(&g), 3).unwrap();
        assert_eq!(sweep.len(), 3);
        assert_eq!(sweep[2], metrics::comprehensive_ability(&[g], 3).unwrap());
        let flat = CorrectnessGrid::from_cells("s", vec![vec![true; 4], vec![false; 4]]);
        assert_eq!(turn_sweep(&[flat], 3).unwrap(), vec![0.0; 3]);
    }

    fn leveled(id: &str, level: Option<u8>) -> McqQuestion {
        McqQuestion {
            id: id.into(),
            stem: "s".into(),
            options: vec!["a".into(), "b".into(), "c".into(), "d".into()],
            gold_index: 0,
            category: Category::Reasoning,
            source_dataset: "x".into(),
            difficulty: level,
        }
    }

    #[test]
    fn difficulty_profile() {
        // level 3: four initially wrong, two fixed; level 1: nothing wrong
        let questions: Vec<_> = (0..4)
            .map(|i| leveled(&format!("q{i}"), Some(3)))
            .chain([leveled("q4", Some(1))])
            .collect();
        let cells = vec![
            vec![false, true],
            vec![false, false],
            vec![false, true],
            vec![false, false],
            vec![true, true],
        ];
        let g = CorrectnessGrid::from_cells("s", cells);
        let profile = difficulty_gain_profile(&[g], &questions, 1).unwrap();
        assert_eq!(profile.len(), 2);
        assert_eq!((profile[0].level, profile[0].ratio), (1, None));
        assert_eq!((profile[1].level, profile[1].ratio), (3, Some(0.5)));
        let missing = [leveled("q0", None)];
        let g = CorrectnessGrid::from_cells("s", vec![vec![false, true]]);
        assert_eq!(
            difficulty_gain_profile(&[g], &missing, 1),
            Err(AnalysisError::MissingDifficulty("q0".into()))
        );
    }
}
