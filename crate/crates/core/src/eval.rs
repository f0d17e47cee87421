//! Average precision, MAP, recall, and the shared prediction-file format.

use std::collections::{BTreeSet, HashMap};
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use crate::error::{CoreError, Result};
use crate::retrieval::RankedList;

/// One question's ranking plus its gold set, ready to score.
#[derive(Debug, Clone)]
pub struct EvalItem {
    pub qid: String,
    pub ranking: Vec<String>,
    pub gold: BTreeSet<String>,
}

/// Scoring summary across a question set.
#[derive(Debug, Clone)]
pub struct EvalReport {
    /// (qid, AP) for every scored question, in input order.
    pub per_question: Vec<(String, f64)>,
    pub map: f64,
    /// (k, mean recall@k over scored questions).
    pub recall: Vec<(usize, f64)>,
    pub scored: usize,
    /// Questions excluded for having an empty gold set.
    pub skipped: usize,
}

/// AP with denominator |gold|: gold uids missing from the ranking pull
/// the score down instead of being ignored.
pub fn average_precision<S: AsRef<str>>(ranking: &[S], gold: &BTreeSet<String>) -> Result<f64> {
    if gold.is_empty() {
        return Err(CoreError::EmptyGold { qid: None });
    }
    let mut hits = 0usize;
    let mut acc = 0.0;
    for (i, uid) in ranking.iter().enumerate() {
        if gold.contains(uid.as_ref()) {
            hits += 1;
            acc += hits as f64 / (i + 1) as f64;
        }
    }
    Ok(acc / gold.len() as f64)
}

/// |gold ∩ top-k| / |gold|. Callers must pass a non-empty gold set.
pub fn recall_at_k<S: AsRef<str>>(ranking: &[S], gold: &BTreeSet<String>, k: usize) -> f64 {
    debug_assert!(!gold.is_empty(), "recall undefined for empty gold");
    if gold.is_empty() {
        return 0.0;
    }
    let cut = k.min(ranking.len());
    let found = ranking[..cut]
        .iter()
        .filter(|u| gold.contains(u.as_ref()))
        .count();
    found as f64 / gold.len() as f64
}

/// Unweighted mean AP over questions with non-empty gold. Empty-gold
/// questions are counted as skipped, not scored.
pub fn mean_average_precision(items: &[EvalItem], recall_ks: &[usize]) -> Result<EvalReport> {
    let mut per_question = Vec::new();
    let mut recall_sums = vec![0.0; recall_ks.len()];
    let mut skipped = 0usize;

    for item in items {
        if item.gold.is_empty() {
            skipped += 1;
            continue;
        }
        let ap = average_precision(&item.ranking, &item.gold)?;
        per_question.push((item.qid.clone(), ap));
        for (sum, &k) in recall_sums.iter_mut().zip(recall_ks) {
            *sum += recall_at_k(&item.ranking, &item.gold, k);
        }
    }

    let scored = per_question.len();
    if scored == 0 {
        return Err(CoreError::NoScoreableQuestions);
    }
    let map = per_question.iter().map(|(_, ap)| ap).sum::<f64>() / scored as f64;
    let recall = recall_ks
        .iter()
        .zip(recall_sums)
        .map(|(&k, sum)| (k, sum / scored as f64))
        .collect();

    Ok(EvalReport {
        per_question,
        map,
        recall,
        scored,
        skipped,
    })
}

/// Emit `qid<TAB>uid` lines grouped by question in ranked order. No
/// header, unix newlines.
pub fn write_predictions(path: &Path, rankings: &[RankedList]) -> Result<()> {
    let file = std::fs::File::create(path).map_err(|e| CoreError::io(path, e))?;
    let mut w = BufWriter::new(file);
    for ranked in rankings {
        for uid in ranked.uids() {
            writeln!(w, "{}\t{}", ranked.qid, uid).map_err(|e| CoreError::io(path, e))?;
        }
    }
    w.flush().map_err(|e| CoreError::io(path, e))
}

/// Read a prediction file back into per-question uid lists, grouped by
/// first appearance of each qid.
pub fn read_predictions(path: &Path) -> Result<Vec<(String, Vec<String>)>> {
    let file = std::fs::File::open(path).map_err(|e| CoreError::io(path, e))?;
    let mut grouped: Vec<(String, Vec<String>)> = Vec::new();
    let mut slot: HashMap<String, usize> = HashMap::new();
    for (lineno, line) in BufReader::new(file).lines().enumerate() {
        let line = line.map_err(|e| CoreError::io(path, e))?;
        if line.is_empty() {
            continue;
        }
        let (qid, uid) = line.split_once('\t').ok_or(CoreError::MalformedLine {
            path: path.to_path_buf(),
            line: lineno + 1,
            reason: "expected qid<TAB>uid".into(),
        })?;
        let idx = *slot.entry(qid.to_string()).or_insert_with(|| {
            grouped.push((qid.to_string(), Vec::new()));
            grouped.len() - 1
        });
        grouped[idx].1.push(uid.to_string());
    }
    Ok(grouped)
}
