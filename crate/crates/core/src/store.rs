//! Directory-per-run persistence.
//!
//! ```text
//! <root>/<run_id>/
//!     manifest.json            run metadata and unit status snapshot
//!     transcripts.wal.jsonl    append-only, one checksummed record per line
//!     direct_answers.wal.jsonl
//!     transcripts.jsonl        canonical outputs written by `finalize`
//!     direct_answers.jsonl
//!     grids.jsonl
//!     cache/                   gateway response cache
//!     reports/
//! ```
//!
//! A unit is complete once its record line is in a log file with a valid
//! checksum. The manifest status map is a snapshot refreshed by
//! [`RunStore::checkpoint`]; on open, statuses are reconciled against the logs,
//! so a crash between append and checkpoint loses nothing.

use std::collections::{HashMap, HashSet};
use std::fs::{self, File, OpenOptions};
use std::io::{self, Read, Seek, SeekFrom, Write};
use std::path::{Path, PathBuf};
use std::sync::Mutex;

use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};
use serde_json::value::RawValue;
use sha2::{Digest, Sha256};

use crate::domain::{CorrectnessGrid, DialogueTranscript, DirectAnswer, GridError, McqQuestion};
use crate::jsonl;

pub const MANIFEST_FILE: &str = "manifest.json";
pub const TRANSCRIPT_LOG: &str = "transcripts.wal.jsonl";
pub const DIRECT_LOG: &str = "direct_answers.wal.jsonl";
pub const TRANSCRIPTS_FILE: &str = "transcripts.jsonl";
pub const DIRECT_FILE: &str = "direct_answers.jsonl";
pub const GRIDS_FILE: &str = "grids.jsonl";
pub const CACHE_DIR: &str = "cache";
pub const REPORTS_DIR: &str = "reports";

#[derive(Debug, thiserror::Error)]
pub enum StoreError {
    #[error("unit {0} already complete")]
    DuplicateUnit(UnitKey),
    #[error("unit {0} is not part of this run")]
    UnknownUnit(UnitKey),
    #[error("run {0} already exists")]
    RunExists(String),
    #[error("manifest {path} is corrupt: {detail}")]
    ManifestCorrupt { path: String, detail: String },
    #[error("dataset digest {found} does not match the run's {expected}")]
    DatasetMismatch { expected: String, found: String },
    #[error("run has {0} incomplete units")]
    Incomplete(usize),
    #[error("storage failure at {path}: {source}")]
    StorageFailure { path: String, source: io::Error },
    #[error(transparent)]
    Grid(#[from] GridError),
}

pub type Result<T> = std::result::Result<T, StoreError>;

fn storage(path: &Path) -> impl FnOnce(io::Error) -> StoreError + '_ {
    move |source| StoreError::StorageFailure { path: path.display().to_string(), source }
}

/// A unit of work. `student` is `None` for a teacher's direct answer.
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct UnitKey {
    pub teacher: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub student: Option<String>,
    pub question: String,
}

impl UnitKey {
    pub fn dialogue(teacher: &str, student: &str, question: &str) -> Self {
        UnitKey { teacher: teacher.into(), student: Some(student.into()), question: question.into() }
    }

    pub fn direct(teacher: &str, question: &str) -> Self {
        UnitKey { teacher: teacher.into(), student: None, question: question.into() }
    }

    pub fn of_transcript(t: &DialogueTranscript) -> Self {
        Self::dialogue(&t.teacher_id, &t.student_id, &t.question_id)
    }

    pub fn of_direct(a: &DirectAnswer) -> Self {
        Self::direct(&a.teacher_id, &a.question_id)
    }

    pub fn is_direct(&self) -> bool {
        self.student.is_none()
    }
}

impl std::fmt::Display for UnitKey {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match &self.student {
            Some(s) => write!(f, "{}/{}/{}", self.teacher, s, self.question),
            None => write!(f, "{}/direct/{}", self.teacher, self.question),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum UnitStatus {
    Pending,
    Complete,
    Failed,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct UnitRecord {
    pub unit: UnitKey,
    pub status: UnitStatus,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct Roster {
    pub teachers: Vec<String>,
    pub students: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunManifest {
    pub run_id: String,
    /// Configuration exactly as the run was launched.
    pub config: serde_json::Value,
    pub roster: Roster,
    pub dataset_digest: String,
    pub question_ids: Vec<String>,
    pub turns: usize,
    /// Direct-answer units first, then dialogues, in teacher/student/question order.
    pub units: Vec<UnitRecord>,
}

impl RunManifest {
    pub fn new(
        run_id: impl Into<String>,
        config: serde_json::Value,
        roster: Roster,
        questions: &[McqQuestion],
        turns: usize,
    ) -> Self {
        let question_ids: Vec<String> = questions.iter().map(|q| q.id.clone()).collect();
        let mut units = Vec::new();
        for t in &roster.teachers {
            for q in &question_ids {
                units.push(UnitKey::direct(t, q));
            }
        }
        for t in &roster.teachers {
            for s in &roster.students {
                for q in &question_ids {
                    units.push(UnitKey::dialogue(t, s, q));
                }
            }
        }
        RunManifest {
            run_id: run_id.into(),
            config,
            roster,
            dataset_digest: dataset_digest(questions),
            question_ids,
            turns,
            units: units
                .into_iter()
                .map(|unit| UnitRecord { unit, status: UnitStatus::Pending, error: None })
                .collect(),
        }
    }

    pub fn load(path: &Path) -> Result<Self> {
        let corrupt = |detail: String| StoreError::ManifestCorrupt { path: path.display().to_string(), detail };
        let text = fs::read_to_string(path).map_err(|e| corrupt(e.to_string()))?;
        serde_json::from_str(&text).map_err(|e| corrupt(e.to_string()))
    }

    pub fn count(&self, status: UnitStatus) -> usize {
        self.units.iter().filter(|u| u.status == status).count()
    }
}

/// Content digest of a question list; changes with any field of any question.
pub fn dataset_digest(questions: &[McqQuestion]) -> String {
    hex::encode(Sha256::digest(jsonl::to_string(questions).as_bytes()))
}

/// Writes `bytes` to `path` via a synced temporary file and a rename.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    let tmp = path.with_extension("tmp");
    let err = storage(path);
    let write = || -> io::Result<()> {
        let mut f = File::create(&tmp)?;
        f.write_all(bytes)?;
        f.sync_all()?;
        fs::rename(&tmp, path)?;
        if let Some(parent) = path.parent() {
            // directory fsync is best effort; not every platform allows opening a directory
            if let Ok(dir) = File::open(parent) {
                let _ = dir.sync_all();
            }
        }
        Ok(())
    };
    write().map_err(err)
}

#[derive(Deserialize)]
struct LogLine<'a> {
    #[serde(borrow)]
    record: &'a RawValue,
    checksum: String,
}

/// One log line: `{"record":<json>,"checksum":"<sha256 of the record bytes>"}`.
pub fn encode_line<T: Serialize>(record: &T) -> String {
    let raw = serde_json::to_string(record).expect("record serializes");
    let sum = hex::encode(Sha256::digest(raw.as_bytes()));
    format!("{{\"record\":{raw},\"checksum\":\"{sum}\"}}\n")
}

/// Parses one log line, returning `None` for anything torn or corrupted.
pub fn decode_line<T: DeserializeOwned>(line: &str) -> Option<T> {
    let parsed: LogLine = serde_json::from_str(line).ok()?;
    let raw = parsed.record.get();
    if hex::encode(Sha256::digest(raw.as_bytes())) != parsed.checksum {
        return None;
    }
    serde_json::from_str(raw).ok()
}

/// Whole, valid records of a log, plus the byte length of its complete lines.
fn scan_log<T: DeserializeOwned>(bytes: &[u8]) -> (Vec<T>, usize, usize) {
    let complete_len = bytes.iter().rposition(|&b| b == b'\n').map_or(0, |i| i + 1);
    let mut records = Vec::new();
    let mut dropped = 0;
    for line in bytes[..complete_len].split(|&b| b == b'\n') {
        if line.is_empty() {
            continue;
        }
        match std::str::from_utf8(line).ok().and_then(decode_line) {
            Some(r) => records.push(r),
            None => dropped += 1,
        }
    }
    (records, complete_len, dropped)
}

/// Reads every valid record of a log file. Safe to call while writers append:
/// a partially written final line is ignored.
pub fn read_log<T: DeserializeOwned>(path: &Path) -> Result<Vec<T>> {
    match fs::read(path) {
        Ok(bytes) => Ok(scan_log(&bytes).0),
        Err(e) if e.kind() == io::ErrorKind::NotFound => Ok(Vec::new()),
        Err(e) => Err(storage(path)(e)),
    }
}

struct Log {
    path: PathBuf,
    file: File,
    done: HashSet<UnitKey>,
}

impl Log {
    /// Opens a log for appending, cutting off a torn final line first.
    fn open<T: DeserializeOwned>(path: PathBuf, key: impl Fn(&T) -> UnitKey) -> Result<(Self, Vec<T>)> {
        let mut file = OpenOptions::new()
            .read(true)
            .write(true)
            .create(true)
            .truncate(false)
            .open(&path)
            .map_err(storage(&path))?;
        let mut bytes = Vec::new();
        file.read_to_end(&mut bytes).map_err(storage(&path))?;
        let (records, complete_len, dropped): (Vec<T>, _, _) = scan_log(&bytes);
        if complete_len < bytes.len() {
            log::warn!("{}: dropping torn tail of {} bytes", path.display(), bytes.len() - complete_len);
            file.set_len(complete_len as u64).map_err(storage(&path))?;
            file.sync_data().map_err(storage(&path))?;
        }
        if dropped > 0 {
            log::warn!("{}: skipped {dropped} corrupt lines", path.display());
        }
        file.seek(SeekFrom::End(0)).map_err(storage(&path))?;
        let done = records.iter().map(&key).collect();
        Ok((Log { path, file, done }, records))
    }

    fn append(&mut self, unit: UnitKey, line: &str) -> Result<()> {
        if self.done.contains(&unit) {
            return Err(StoreError::DuplicateUnit(unit));
        }
        let path = &self.path;
        self.file.write_all(line.as_bytes()).map_err(storage(path))?;
        self.file.sync_data().map_err(storage(path))?;
        self.done.insert(unit);
        Ok(())
    }
}

/// An open run directory. Appends may come from many threads at once.
pub struct RunStore {
    dir: PathBuf,
    manifest: Mutex<RunManifest>,
    index: HashMap<UnitKey, usize>,
    transcripts: Mutex<Log>,
    direct: Mutex<Log>,
}

impl RunStore {
    pub fn run_dir(root: &Path, run_id: &str) -> PathBuf {
        root.join(run_id)
    }

    /// Creates a new run directory and writes its manifest.
    pub fn create(root: &Path, manifest: RunManifest) -> Result<Self> {
        let dir = Self::run_dir(root, &manifest.run_id);
        if dir.join(MANIFEST_FILE).exists() {
            return Err(StoreError::RunExists(manifest.run_id));
        }
        fs::create_dir_all(dir.join(REPORTS_DIR)).map_err(storage(&dir))?;
        fs::create_dir_all(dir.join(CACHE_DIR)).map_err(storage(&dir))?;
        let bytes = serde_json::to_vec_pretty(&manifest).expect("manifest serializes");
        write_atomic(&dir.join(MANIFEST_FILE), &bytes)?;
        Self::open_dir(dir)
    }

    /// Opens an existing run, recovering its logs.
    pub fn open(root: &Path, run_id: &str) -> Result<Self> {
        Self::open_dir(Self::run_dir(root, run_id))
    }

    fn open_dir(dir: PathBuf) -> Result<Self> {
        let mut manifest = RunManifest::load(&dir.join(MANIFEST_FILE))?;
        let index: HashMap<UnitKey, usize> =
            manifest.units.iter().enumerate().map(|(i, u)| (u.unit.clone(), i)).collect();
        if index.len() != manifest.units.len() {
            return Err(StoreError::ManifestCorrupt {
                path: dir.join(MANIFEST_FILE).display().to_string(),
                detail: "duplicate unit entries".into(),
            });
        }
        let (transcripts, _) = Log::open::<DialogueTranscript>(dir.join(TRANSCRIPT_LOG), UnitKey::of_transcript)?;
        let (direct, _) = Log::open::<DirectAnswer>(dir.join(DIRECT_LOG), UnitKey::of_direct)?;
        for unit in transcripts.done.iter().chain(&direct.done) {
            if let Some(&i) = index.get(unit) {
                manifest.units[i].status = UnitStatus::Complete;
                manifest.units[i].error = None;
            }
        }
        for record in &mut manifest.units {
            let logged = if record.unit.is_direct() { &direct.done } else { &transcripts.done };
            if record.status == UnitStatus::Complete && !logged.contains(&record.unit) {
                // snapshot claims completion the log cannot back up
                record.status = UnitStatus::Pending;
            }
        }
        Ok(RunStore {
            dir,
            manifest: Mutex::new(manifest),
            index,
            transcripts: Mutex::new(transcripts),
            direct: Mutex::new(direct),
        })
    }

    pub fn dir(&self) -> &Path {
        &self.dir
    }

    pub fn reports_dir(&self) -> PathBuf {
        self.dir.join(REPORTS_DIR)
    }

    pub fn cache_dir(&self) -> PathBuf {
        self.dir.join(CACHE_DIR)
    }

    pub fn manifest(&self) -> RunManifest {
        self.manifest.lock().expect("manifest lock").clone()
    }

    /// Fails unless `questions` are exactly the questions the run was created with.
    pub fn check_dataset(&self, questions: &[McqQuestion]) -> Result<()> {
        let expected = self.manifest.lock().expect("manifest lock").dataset_digest.clone();
        let found = dataset_digest(questions);
        if expected != found {
            return Err(StoreError::DatasetMismatch { expected, found });
        }
        Ok(())
    }

    fn set_status(&self, unit: &UnitKey, status: UnitStatus, error: Option<String>) {
        let i = self.index[unit];
        let mut m = self.manifest.lock().expect("manifest lock");
        m.units[i].status = status;
        m.units[i].error = error;
    }

    fn append_with(&self, log: &Mutex<Log>, unit: UnitKey, line: String) -> Result<()> {
        if !self.index.contains_key(&unit) {
            return Err(StoreError::UnknownUnit(unit));
        }
        log.lock().expect("log lock").append(unit.clone(), &line)?;
        self.set_status(&unit, UnitStatus::Complete, None);
        Ok(())
    }

    /// Durably records a finished dialogue; the unit is complete on return.
    pub fn append_transcript(&self, t: &DialogueTranscript) -> Result<()> {
        self.append_with(&self.transcripts, UnitKey::of_transcript(t), encode_line(t))
    }

    pub fn append_direct(&self, a: &DirectAnswer) -> Result<()> {
        self.append_with(&self.direct, UnitKey::of_direct(a), encode_line(a))
    }

    pub fn mark_failed(&self, unit: &UnitKey, error: impl Into<String>) -> Result<()> {
        let i = *self.index.get(unit).ok_or_else(|| StoreError::UnknownUnit(unit.clone()))?;
        let mut m = self.manifest.lock().expect("manifest lock");
        if m.units[i].status == UnitStatus::Complete {
            return Err(StoreError::DuplicateUnit(unit.clone()));
        }
        m.units[i].status = UnitStatus::Failed;
        m.units[i].error = Some(error.into());
        Ok(())
    }

    /// Units with no complete record yet, in manifest order. Failed units are
    /// included so a resume retries them.
    pub fn resume_plan(&self) -> Vec<UnitKey> {
        self.manifest
            .lock()
            .expect("manifest lock")
            .units
            .iter()
            .filter(|u| u.status != UnitStatus::Complete)
            .map(|u| u.unit.clone())
            .collect()
    }

    pub fn is_complete(&self) -> bool {
        self.resume_plan().is_empty()
    }

    /// Rewrites the manifest with the current status map.
    pub fn checkpoint(&self) -> Result<()> {
        let m = self.manifest.lock().expect("manifest lock");
        let bytes = serde_json::to_vec_pretty(&*m).expect("manifest serializes");
        write_atomic(&self.dir.join(MANIFEST_FILE), &bytes)
    }

    pub fn transcripts(&self) -> Result<Vec<DialogueTranscript>> {
        read_log(&self.dir.join(TRANSCRIPT_LOG))
    }

    pub fn direct_answers(&self) -> Result<Vec<DirectAnswer>> {
        read_log(&self.dir.join(DIRECT_LOG))
    }

    /// Records in manifest order, independent of completion order.
    pub fn ordered_outputs(&self) -> Result<(Vec<DialogueTranscript>, Vec<DirectAnswer>)> {
        let mut transcripts = self.transcripts()?;
        let mut direct = self.direct_answers()?;
        let pos = |u: &UnitKey| self.index.get(u).copied().unwrap_or(usize::MAX);
        transcripts.sort_by_key(|t| pos(&UnitKey::of_transcript(t)));
        direct.sort_by_key(|a| pos(&UnitKey::of_direct(a)));
        Ok((transcripts, direct))
    }

    /// Writes the canonical transcript, direct-answer and grid files. Requires
    /// every unit to be complete unless `allow_partial`, in which case grids
    /// are written only for fully answered (teacher, student) pairs.
    pub fn finalize(&self, allow_partial: bool) -> Result<Vec<TeacherGrid>> {
        let pending = self.resume_plan().len();
        if pending > 0 && !allow_partial {
            return Err(StoreError::Incomplete(pending));
        }
        self.checkpoint()?;
        let (transcripts, direct) = self.ordered_outputs()?;
        let m = self.manifest();
        let mut grids = Vec::new();
        for teacher in &m.roster.teachers {
            let mine: Vec<&DialogueTranscript> = transcripts.iter().filter(|t| &t.teacher_id == teacher).collect();
            for student in &m.roster.students {
                match CorrectnessGrid::from_transcripts(student, &m.question_ids, m.turns, mine.iter().copied()) {
                    Ok(grid) => grids.push(TeacherGrid { teacher_id: teacher.clone(), grid }),
                    Err(e) if allow_partial => log::warn!("skipping grid {teacher}/{student}: {e}"),
                    Err(e) => return Err(e.into()),
                }
            }
        }
        write_atomic(&self.dir.join(TRANSCRIPTS_FILE), jsonl::to_string(&transcripts).as_bytes())?;
        write_atomic(&self.dir.join(DIRECT_FILE), jsonl::to_string(&direct).as_bytes())?;
        write_atomic(&self.dir.join(GRIDS_FILE), jsonl::to_string(&grids).as_bytes())?;
        Ok(grids)
    }
}

/// One student's grid under one teacher, as stored in `grids.jsonl`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TeacherGrid {
    pub teacher_id: String,
    pub grid: CorrectnessGrid,
}

/// Pending units of a stored run.
pub fn resume_plan(root: &Path, run_id: &str) -> Result<Vec<UnitKey>> {
    Ok(RunStore::open(root, run_id)?.resume_plan())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::domain::{Category, StudentAnswer, TeacherMove, Verdict};

    fn questions(n: usize) -> Vec<McqQuestion> {
        (0..n)
            .map(|i| McqQuestion {
                id: format!("q{i}"),
                stem: format!("stem {i}"),
                options: vec!["a".into(), "b".into(), "c".into(), "d".into()],
                gold_index: 0,
                category: Category::Knowledge,
                source_dataset: "t".into(),
                difficulty: None,
            })
            .collect()
    }

    fn transcript(teacher: &str, student: &str, question: &str) -> DialogueTranscript {
        DialogueTranscript {
            teacher_id: teacher.into(),
            student_id: student.into(),
            question_id: question.into(),
            answers: vec![
                StudentAnswer::scored(0, "B".into(), Some(1), 0),
                StudentAnswer::scored(1, "A".into(), Some(0), 0),
            ],
            moves: vec![TeacherMove {
                turn: 1,
                verdict: Verdict::JudgedIncorrect,
                guidance: "line one\nline two".into(),
                raw_text: "JUDGMENT: incorrect".into(),
            }],
        }
    }

    fn manifest(students: usize, n: usize) -> RunManifest {
        let roster = Roster {
            teachers: vec!["t".into()],
            students: (0..students).map(|k| format!("s{k}")).collect(),
        };
        RunManifest::new("run", serde_json::json!({"turns": 1}), roster, &questions(n), 1)
    }

    #[test]
    fn line_round_trip_and_corruption() {
        let t = transcript("t", "s0", "q0");
        let line = encode_line(&t);
        assert_eq!(line.matches('\n').count(), 1);
        assert_eq!(decode_line::<DialogueTranscript>(line.trim_end()), Some(t));
        let tampered = line.replace("line one", "line 0ne");
        assert_eq!(decode_line::<DialogueTranscript>(tampered.trim_end()), None);
        assert_eq!(decode_line::<DialogueTranscript>(&line[..line.len() / 2]), None);
    }

    #[test]
    fn fresh_run_all_pending() {
        let dir = tempfile::tempdir().unwrap();
        let store = RunStore::create(dir.path(), manifest(2, 3)).unwrap();
        // 3 direct + 2 * 3 dialogues
        assert_eq!(store.resume_plan().len(), 9);
        assert!(matches!(
            RunStore::create(dir.path(), manifest(2, 3)),
            Err(StoreError::RunExists(_))
        ));
    }

    #[test]
    fn duplicate_and_unknown_units() {
        let dir = tempfile::tempdir().unwrap();
        let store = RunStore::create(dir.path(), manifest(1, 1)).unwrap();
        store.append_transcript(&transcript("t", "s0", "q0")).unwrap();
        assert!(matches!(
            store.append_transcript(&transcript("t", "s0", "q0")),
            Err(StoreError::DuplicateUnit(_))
        ));
        assert!(matches!(
            store.append_transcript(&transcript("t", "s9", "q0")),
            Err(StoreError::UnknownUnit(_))
        ));
    }

    #[test]
    fn crash_after_append_keeps_unit() {
        let dir = tempfile::tempdir().unwrap();
        {
            let store = RunStore::create(dir.path(), manifest(1, 2)).unwrap();
            store.append_transcript(&transcript("t", "s0", "q0")).unwrap();
            // no checkpoint: the manifest on disk still says pending
        }
        let store = RunStore::open(dir.path(), "run").unwrap();
        assert_eq!(store.transcripts().unwrap().len(), 1);
        let plan = store.resume_plan();
        assert!(!plan.contains(&UnitKey::dialogue("t", "s0", "q0")));
        assert_eq!(plan.len(), 3);
    }

    #[test]
    fn torn_tail_dropped_and_truncated() {
        let dir = tempfile::tempdir().unwrap();
        {
            let store = RunStore::create(dir.path(), manifest(1, 2)).unwrap();
            store.append_transcript(&transcript("t", "s0", "q0")).unwrap();
        }
        let log = dir.path().join("run").join(TRANSCRIPT_LOG);
        let full = encode_line(&transcript("t", "s0", "q1"));
        let mut f = OpenOptions::new().append(true).open(&log).unwrap();
        f.write_all(&full.as_bytes()[..40]).unwrap();
        drop(f);
        let store = RunStore::open(dir.path(), "run").unwrap();
        assert_eq!(store.transcripts().unwrap().len(), 1);
        assert!(store.resume_plan().contains(&UnitKey::dialogue("t", "s0", "q1")));
        store.append_transcript(&transcript("t", "s0", "q1")).unwrap();
        assert_eq!(store.transcripts().unwrap().len(), 2);
    }

    #[test]
    fn corrupt_manifest() {
        let dir = tempfile::tempdir().unwrap();
        RunStore::create(dir.path(), manifest(1, 1)).unwrap();
        fs::write(dir.path().join("run").join(MANIFEST_FILE), "{not json").unwrap();
        assert!(matches!(resume_plan(dir.path(), "run"), Err(StoreError::ManifestCorrupt { .. })));
        assert!(matches!(resume_plan(dir.path(), "missing"), Err(StoreError::ManifestCorrupt { .. })));
    }

    #[test]
    fn complete_run_empty_plan_and_finalize() {
        let dir = tempfile::tempdir().unwrap();
        let store = RunStore::create(dir.path(), manifest(1, 2)).unwrap();
        assert!(matches!(store.finalize(false), Err(StoreError::Incomplete(4))));
        for q in ["q1", "q0"] {
            store.append_transcript(&transcript("t", "s0", q)).unwrap();
            store
                .append_direct(&DirectAnswer {
                    teacher_id: "t".into(),
                    question_id: q.into(),
                    raw_text: "A".into(),
                    parsed_index: Some(0),
                    is_correct: true,
                })
                .unwrap();
        }
        assert!(store.resume_plan().is_empty());
        let grids = store.finalize(false).unwrap();
        assert_eq!(grids.len(), 1);
        assert_eq!(grids[0].grid.cells, vec![vec![false, true]; 2]);
        let out: Vec<DialogueTranscript> = jsonl::read(&store.dir().join(TRANSCRIPTS_FILE)).unwrap();
        assert_eq!(out[0].question_id, "q0");
        let reopened = RunStore::open(dir.path(), "run").unwrap();
        assert_eq!(reopened.manifest().count(UnitStatus::Complete), 4);
    }

    #[test]
    fn failed_units_are_retried() {
        let dir = tempfile::tempdir().unwrap();
        let store = RunStore::create(dir.path(), manifest(1, 1)).unwrap();
        let unit = UnitKey::dialogue("t", "s0", "q0");
        store.mark_failed(&unit, "endpoint unreachable").unwrap();
        store.checkpoint().unwrap();
        let m = RunManifest::load(&store.dir().join(MANIFEST_FILE)).unwrap();
        assert_eq!(m.count(UnitStatus::Failed), 1);
        assert!(store.resume_plan().contains(&unit));
        store.append_transcript(&transcript("t", "s0", "q0")).unwrap();
        assert!(!store.resume_plan().contains(&unit));
    }

    #[test]
    fn dataset_digest_binds_content() {
        let dir = tempfile::tempdir().unwrap();
        let store = RunStore::create(dir.path(), manifest(1, 2)).unwrap();
        store.check_dataset(&questions(2)).unwrap();
        let mut changed = questions(2);
        changed[1].options[3] = "e".into();
        assert!(matches!(store.check_dataset(&changed), Err(StoreError::DatasetMismatch { .. })));
    }
}
