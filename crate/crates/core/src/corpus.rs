//! WorldTree-format corpus ingestion.
//!
//! Fact tables are tab-separated files with a header row. The column headed
//! exactly `[SKIP] UID` carries the fact identifier; every column whose
//! header does not contain `[SKIP]` contributes to the reconstructed
//! sentence. Question files are tab-separated with `QuestionID`, `question`,
//! `AnswerKey` and (for train/dev) `explanation` columns.

use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::fmt;
use std::io::{BufRead, BufReader, Write};
use std::path::Path;

use crate::error::{CoreError, Result};

/// One explanation-candidate sentence with a stable identifier.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Fact {
    pub uid: String,
    pub text: String,
    /// Stem of the table file the fact came from.
    pub table_name: String,
}

/// All facts, in deterministic ingestion order, with uid lookup.
#[derive(Debug, Clone, Default)]
pub struct FactStore {
    facts: Vec<Fact>,
    by_uid: HashMap<String, usize>,
}

impl FactStore {
    pub fn len(&self) -> usize {
        self.facts.len()
    }

    pub fn is_empty(&self) -> bool {
        self.facts.is_empty()
    }

    pub fn iter(&self) -> std::slice::Iter<'_, Fact> {
        self.facts.iter()
    }

    pub fn get(&self, idx: usize) -> &Fact {
        &self.facts[idx]
    }

    pub fn by_uid(&self, uid: &str) -> Option<&Fact> {
        self.by_uid.get(uid).map(|&i| &self.facts[i])
    }

    pub fn contains_uid(&self, uid: &str) -> bool {
        self.by_uid.contains_key(uid)
    }

    /// Add a fact, rejecting uid collisions. The error names both source
    /// tables so collisions across files are diagnosable.
    pub fn insert(&mut self, fact: Fact) -> Result<()> {
        if let Some(&prev) = self.by_uid.get(&fact.uid) {
            return Err(CoreError::DuplicateUid {
                uid: fact.uid.clone(),
                first: self.facts[prev].table_name.clone(),
                second: fact.table_name,
            });
        }
        self.by_uid.insert(fact.uid.clone(), self.facts.len());
        self.facts.push(fact);
        Ok(())
    }

    /// Write the canonical dump, one `uid<TAB>text` record per line.
    pub fn dump_canonical<W: Write>(&self, mut w: W) -> std::io::Result<()> {
        for fact in &self.facts {
            writeln!(w, "{}\t{}", fact.uid, fact.text)?;
        }
        Ok(())
    }

    /// Rebuild a store from a canonical dump. Table names are not part of
    /// the dump, so they come back empty.
    pub fn from_canonical<R: BufRead>(r: R, path: &Path) -> Result<Self> {
        let mut store = FactStore::default();
        for (lineno, line) in r.lines().enumerate() {
            let line = line.map_err(|e| CoreError::io(path, e))?;
            if line.is_empty() {
                continue;
            }
            let (uid, text) = line.split_once('\t').ok_or(CoreError::MalformedLine {
                path: path.to_path_buf(),
                line: lineno + 1,
                reason: "expected uid<TAB>text".into(),
            })?;
            store.insert(Fact {
                uid: uid.to_string(),
                text: text.to_string(),
                table_name: String::new(),
            })?;
        }
        Ok(store)
    }
}

/// Question splits as distributed.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Split {
    Train,
    Dev,
    Test,
}

impl Split {
    pub fn name(self) -> &'static str {
        match self {
            Split::Train => "train",
            Split::Dev => "dev",
            Split::Test => "test",
        }
    }
}

impl fmt::Display for Split {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl std::str::FromStr for Split {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, String> {
        match s {
            "train" => Ok(Split::Train),
            "dev" => Ok(Split::Dev),
            "test" => Ok(Split::Test),
            other => Err(format!("unknown split {other:?} (expected train/dev/test)")),
        }
    }
}

/// One question with its answer choices and gold explanation uids.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Question {
    pub qid: String,
    /// Question text without the answer choices.
    pub stem: String,
    /// Answer letter to choice text.
    pub choices: BTreeMap<String, String>,
    pub answer_key: Option<String>,
    /// Gold explanation fact uids; empty for the test split.
    pub gold: BTreeSet<String>,
}

/// Collected non-fatal ingestion diagnostics.
#[derive(Debug, Default)]
pub struct IngestLog {
    pub warnings: Vec<String>,
}

impl IngestLog {
    pub fn warn(&mut self, msg: impl Into<String>) {
        self.warnings.push(msg.into());
    }
}

/// Parse every `*.tsv` fact table under `dir`, in filename order.
pub fn load_fact_tables(dir: &Path, log: &mut IngestLog) -> Result<FactStore> {
    let mut paths: Vec<_> = std::fs::read_dir(dir)
        .map_err(|e| CoreError::io(dir, e))?
        .filter_map(|entry| entry.ok().map(|e| e.path()))
        .filter(|p| p.extension().is_some_and(|ext| ext == "tsv"))
        .collect();
    paths.sort();
    if paths.is_empty() {
        return Err(CoreError::NoTables {
            dir: dir.to_path_buf(),
        });
    }

    let mut store = FactStore::default();
    for path in &paths {
        load_one_table(path, &mut store, log)?;
    }
    Ok(store)
}

fn load_one_table(path: &Path, store: &mut FactStore, log: &mut IngestLog) -> Result<()> {
    let file_name = path
        .file_name()
        .map(|n| n.to_string_lossy().into_owned())
        .unwrap_or_default();
    let table_name = path
        .file_stem()
        .map(|n| n.to_string_lossy().into_owned())
        .unwrap_or_default();

    let reader = BufReader::new(std::fs::File::open(path).map_err(|e| CoreError::io(path, e))?);
    let mut lines = reader.lines();
    let header = match lines.next() {
        Some(line) => line.map_err(|e| CoreError::io(path, e))?,
        None => return Ok(()), // empty file contributes nothing
    };
    let columns: Vec<&str> = header.split('\t').collect();
    let uid_col = columns
        .iter()
        .position(|c| c.trim() == "[SKIP] UID")
        .ok_or(CoreError::MissingUidColumn {
            file: file_name.clone(),
        })?;
    // "[SKIP]" matching is substring and case-sensitive, per the
    // distribution's convention.
    let text_cols: Vec<usize> = columns
        .iter()
        .enumerate()
        .filter(|(_, c)| !c.contains("[SKIP]"))
        .map(|(i, _)| i)
        .collect();

    for (lineno, line) in lines.enumerate() {
        let line = line.map_err(|e| CoreError::io(path, e))?;
        if line.trim().is_empty() {
            continue;
        }
        let cells: Vec<&str> = line.split('\t').collect();
        let uid = cells.get(uid_col).map(|s| s.trim()).unwrap_or("");
        if uid.is_empty() {
            log.warn(format!("{file_name}:{}: row without uid skipped", lineno + 2));
            continue;
        }
        let text = text_cols
            .iter()
            .filter_map(|&i| cells.get(i))
            .map(|s| s.trim())
            .filter(|s| !s.is_empty())
            .collect::<Vec<_>>()
            .join(" ");
        if text.is_empty() {
            log.warn(format!(
                "{file_name}:{}: fact {uid} reconstructs to empty text, skipped",
                lineno + 2
            ));
            continue;
        }
        store.insert(Fact {
            uid: uid.to_string(),
            text,
            table_name: table_name.clone(),
        })?;
    }
    Ok(())
}

/// Parse one split's question file.
pub fn load_questions(path: &Path, split: Split, log: &mut IngestLog) -> Result<Vec<Question>> {
    let file_name = path
        .file_name()
        .map(|n| n.to_string_lossy().into_owned())
        .unwrap_or_default();
    let reader = BufReader::new(std::fs::File::open(path).map_err(|e| CoreError::io(path, e))?);
    let mut lines = reader.lines();
    let header = lines
        .next()
        .ok_or(CoreError::MissingColumn {
            file: file_name.clone(),
            column: "QuestionID".into(),
        })?
        .map_err(|e| CoreError::io(path, e))?;
    let columns: Vec<&str> = header.split('\t').collect();
    let col = |name: &str| -> Result<usize> {
        columns
            .iter()
            .position(|c| c.trim() == name)
            .ok_or(CoreError::MissingColumn {
                file: file_name.clone(),
                column: name.into(),
            })
    };
    let qid_col = col("QuestionID")?;
    let question_col = col("question")?;
    let key_col = col("AnswerKey")?;
    let explanation_col = match split {
        Split::Train | Split::Dev => Some(col("explanation")?),
        Split::Test => columns.iter().position(|c| c.trim() == "explanation"),
    };

    let mut questions = Vec::new();
    for line in lines {
        let line = line.map_err(|e| CoreError::io(path, e))?;
        if line.trim().is_empty() {
            continue;
        }
        let cells: Vec<&str> = line.split('\t').collect();
        let cell = |i: usize| cells.get(i).map(|s| s.trim()).unwrap_or("");
        let qid = cell(qid_col).to_string();
        if qid.is_empty() {
            continue;
        }
        let (stem, choices) = split_stem_choices(cell(question_col));
        let answer_key = match cell(key_col) {
            "" => None,
            key => Some(key.to_string()),
        };
        let gold = explanation_col
            .map(|i| parse_explanation_field(cell(i), &qid, log))
            .unwrap_or_default();
        questions.push(Question {
            qid,
            stem,
            choices,
            answer_key,
            gold,
        });
    }
    Ok(questions)
}

/// Split a raw question field into stem and lettered choices by scanning
/// for `(A)`..`(E)` markers.
pub fn split_stem_choices(text: &str) -> (String, BTreeMap<String, String>) {
    let mut markers: Vec<(usize, char)> = Vec::new();
    let bytes = text.as_bytes();
    for letter in ['A', 'B', 'C', 'D', 'E'] {
        let pattern = format!("({letter})");
        if let Some(pos) = find_after(bytes, pattern.as_bytes(), markers.last().map(|m| m.0)) {
            markers.push((pos, letter));
        }
    }
    if markers.is_empty() {
        return (text.trim().to_string(), BTreeMap::new());
    }
    let stem = text[..markers[0].0].trim().to_string();
    let mut choices = BTreeMap::new();
    for (i, &(pos, letter)) in markers.iter().enumerate() {
        let start = pos + 3; // past "(X)"
        let end = markers.get(i + 1).map(|m| m.0).unwrap_or(text.len());
        let choice = text[start..end].trim();
        if !choice.is_empty() {
            choices.insert(letter.to_string(), choice.to_string());
        }
    }
    (stem, choices)
}

fn find_after(haystack: &[u8], needle: &[u8], after: Option<usize>) -> Option<usize> {
    let start = after.map(|i| i + 1).unwrap_or(0);
    if start >= haystack.len() {
        return None;
    }
    haystack[start..]
        .windows(needle.len())
        .position(|w| w == needle)
        .map(|p| p + start)
}

/// Parse an explanation field of whitespace-separated `uid|ROLE` entries.
/// Roles are parsed but ignored; all gold facts carry relevance 1.
pub fn parse_explanation_field(field: &str, qid: &str, log: &mut IngestLog) -> BTreeSet<String> {
    let mut gold = BTreeSet::new();
    for entry in field.split_whitespace() {
        let uid = entry.split('|').next().unwrap_or("");
        if uid.is_empty() {
            log.warn(format!("question {qid}: unparseable explanation entry {entry:?}, skipped"));
            continue;
        }
        gold.insert(uid.to_string());
    }
    gold
}

/// Drop gold uids that do not exist in the fact store. Returns the number
/// of dropped references; each drop is also logged.
pub fn filter_gold_to_store(
    questions: &mut [Question],
    facts: &FactStore,
    log: &mut IngestLog,
) -> usize {
    let mut dropped = 0;
    for q in questions.iter_mut() {
        let unknown: Vec<String> = q
            .gold
            .iter()
            .filter(|uid| !facts.contains_uid(uid))
            .cloned()
            .collect();
        for uid in unknown {
            log.warn(format!("question {}: gold uid {uid} not in fact store, dropped", q.qid));
            q.gold.remove(&uid);
            dropped += 1;
        }
    }
    dropped
}

/// Query text for retrieval: stem plus the correct answer choice.
/// Distractor choices are excluded; a missing answer key degrades to the
/// stem alone with a warning.
pub fn build_query_text(q: &Question, log: &mut IngestLog) -> String {
    match q
        .answer_key
        .as_ref()
        .and_then(|key| q.choices.get(key))
    {
        Some(choice) => format!("{} {}", q.stem, choice),
        None => {
            log.warn(format!("question {}: no usable answer key, query is stem only", q.qid));
            q.stem.clone()
        }
    }
}

/// The whole ingested corpus: facts plus per-split question lists.
#[derive(Debug, Default)]
pub struct Corpus {
    pub facts: FactStore,
    pub train: Vec<Question>,
    pub dev: Vec<Question>,
    pub test: Vec<Question>,
}

impl Corpus {
    pub fn questions(&self, split: Split) -> &[Question] {
        match split {
            Split::Train => &self.train,
            Split::Dev => &self.dev,
            Split::Test => &self.test,
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::io::Write as _;

    fn write_file(dir: &Path, name: &str, contents: &str) -> std::path::PathBuf {
        let path = dir.join(name);
        let mut f = std::fs::File::create(&path).unwrap();
        f.write_all(contents.as_bytes()).unwrap();
        path
    }

    #[test]
    fn skip_columns_and_empty_cells() {
        let dir = tempfile::tempdir().unwrap();
        write_file(
            dir.path(),
            "t.tsv",
            "[FILL] x\ty\t[SKIP] COMMENT\t[SKIP] UID\na\t\tc\tid1\n",
        );
        let mut log = IngestLog::default();
        let store = load_fact_tables(dir.path(), &mut log).unwrap();
        assert_eq!(store.len(), 1);
        let fact = store.by_uid("id1").unwrap();
        assert_eq!(fact.text, "a");
        assert_eq!(fact.table_name, "t");
    }

    #[test]
    fn multi_cell_rows_join_in_column_order() {
        let dir = tempfile::tempdir().unwrap();
        write_file(
            dir.path(),
            "t.tsv",
            "a\tb\tc\t[SKIP] UID\nthe sun\tis\ta star\tu1\n",
        );
        let mut log = IngestLog::default();
        let store = load_fact_tables(dir.path(), &mut log).unwrap();
        assert_eq!(store.by_uid("u1").unwrap().text, "the sun is a star");
    }

    #[test]
    fn duplicate_uid_across_tables_is_fatal() {
        let dir = tempfile::tempdir().unwrap();
        write_file(dir.path(), "a.tsv", "x\t[SKIP] UID\nfoo\tzzz\n");
        write_file(dir.path(), "b.tsv", "x\t[SKIP] UID\nbar\tzzz\n");
        let mut log = IngestLog::default();
        let err = load_fact_tables(dir.path(), &mut log).unwrap_err();
        match err {
            CoreError::DuplicateUid { uid, first, second } => {
                assert_eq!(uid, "zzz");
                assert_eq!(first, "a");
                assert_eq!(second, "b");
            }
            other => panic!("unexpected error: {other}"),
        }
    }

    #[test]
    fn missing_uid_column_is_fatal_and_names_the_file() {
        let dir = tempfile::tempdir().unwrap();
        write_file(dir.path(), "bad.tsv", "x\ty\nfoo\tbar\n");
        let mut log = IngestLog::default();
        let err = load_fact_tables(dir.path(), &mut log).unwrap_err();
        assert!(err.to_string().contains("bad.tsv"), "{err}");
    }

    #[test]
    fn stem_and_choices_split() {
        let (stem, choices) = split_stem_choices("Which is hot? (A) sun (B) ice");
        assert_eq!(stem, "Which is hot?");
        assert_eq!(choices.get("A").unwrap(), "sun");
        assert_eq!(choices.get("B").unwrap(), "ice");
        assert_eq!(choices.len(), 2);
    }

    #[test]
    fn question_without_markers_keeps_whole_stem() {
        let (stem, choices) = split_stem_choices("No choices here");
        assert_eq!(stem, "No choices here");
        assert!(choices.is_empty());
    }

    #[test]
    fn explanation_field_parses_uid_role_pairs() {
        let mut log = IngestLog::default();
        let gold = parse_explanation_field("u1|CENTRAL u2|GROUNDING", "q", &mut log);
        assert_eq!(gold, BTreeSet::from(["u1".to_string(), "u2".to_string()]));
        assert!(log.warnings.is_empty());
    }

    #[test]
    fn query_text_appends_only_the_correct_choice() {
        let q = Question {
            qid: "q1".into(),
            stem: "Which is hot?".into(),
            choices: BTreeMap::from([
                ("A".to_string(), "sun".to_string()),
                ("B".to_string(), "ice".to_string()),
            ]),
            answer_key: Some("A".into()),
            gold: BTreeSet::new(),
        };
        let mut log = IngestLog::default();
        assert_eq!(build_query_text(&q, &mut log), "Which is hot? sun");
        assert!(log.warnings.is_empty());
        assert!(!build_query_text(&q, &mut log).contains("(B)"));
    }

    #[test]
    fn query_text_degrades_to_stem_without_key() {
        let q = Question {
            qid: "q1".into(),
            stem: "Which is hot?".into(),
            choices: BTreeMap::new(),
            answer_key: None,
            gold: BTreeSet::new(),
        };
        let mut log = IngestLog::default();
        assert_eq!(build_query_text(&q, &mut log), "Which is hot?");
        assert_eq!(log.warnings.len(), 1);
    }

    #[test]
    fn question_file_parses_and_filters_gold() {
        let dir = tempfile::tempdir().unwrap();
        let qfile = write_file(
            dir.path(),
            "questions.tsv",
            "QuestionID\tquestion\tAnswerKey\texplanation\n\
             q1\tWhich is hot? (A) sun (B) ice\tA\tu1|CENTRAL legacy1|ROLE\n\
             q2\tWhat melts?\t\tu1|CENTRAL\n",
        );
        let tables = dir.path().join("tables");
        std::fs::create_dir(&tables).unwrap();
        write_file(&tables, "t.tsv", "x\t[SKIP] UID\nthe sun is hot\tu1\n");
        let mut log = IngestLog::default();
        let store = load_fact_tables(&tables, &mut log).unwrap();
        let mut qs = load_questions(&qfile, Split::Train, &mut log).unwrap();
        assert_eq!(qs.len(), 2);
        assert_eq!(qs[1].answer_key, None, "missing AnswerKey retained with empty answer");
        let dropped = filter_gold_to_store(&mut qs, &store, &mut log);
        assert_eq!(dropped, 1);
        assert_eq!(qs[0].gold, BTreeSet::from(["u1".to_string()]));
        assert!(qs[0].gold.iter().all(|uid| store.contains_uid(uid)));
    }

    #[test]
    fn canonical_dump_round_trips() {
        let dir = tempfile::tempdir().unwrap();
        write_file(
            dir.path(),
            "t.tsv",
            "x\t[SKIP] UID\nthe sun is hot\tu1\nice is cold\tu2\n",
        );
        let mut log = IngestLog::default();
        let store = load_fact_tables(dir.path(), &mut log).unwrap();
        let mut buf = Vec::new();
        store.dump_canonical(&mut buf).unwrap();
        let reread =
            FactStore::from_canonical(std::io::Cursor::new(&buf), Path::new("dump")).unwrap();
        assert_eq!(reread.len(), store.len());
        for (a, b) in store.iter().zip(reread.iter()) {
            assert_eq!(a.uid, b.uid);
            assert_eq!(a.text, b.text);
        }
    }

    #[test]
    fn reingestion_is_deterministic() {
        let dir = tempfile::tempdir().unwrap();
        write_file(dir.path(), "b.tsv", "x\t[SKIP] UID\nbeta\tu2\n");
        write_file(dir.path(), "a.tsv", "x\t[SKIP] UID\nalpha\tu1\n");
        let mut log = IngestLog::default();
        let s1 = load_fact_tables(dir.path(), &mut log).unwrap();
        let s2 = load_fact_tables(dir.path(), &mut log).unwrap();
        let uids1: Vec<_> = s1.iter().map(|f| f.uid.clone()).collect();
        let uids2: Vec<_> = s2.iter().map(|f| f.uid.clone()).collect();
        assert_eq!(uids1, uids2);
        assert_eq!(uids1, vec!["u1", "u2"], "tables ingested in filename order");
    }
}
