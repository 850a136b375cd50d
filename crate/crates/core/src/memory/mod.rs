//! Run memory: injected domain rules, rules learned during warm-up, and the
//! per-round history with its best-so-far entry.

mod summarize;

use std::collections::BTreeMap;
use std::fs::{File, OpenOptions};
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::feedback::{FeatureSet, ResidualSet, SUCCESS_EVENT};
use crate::proposer::ParameterUpdate;

pub use summarize::{summarize_warmup, magnitude_class, NEGLIGIBLE_PCT};

pub const PHYSICAL_KNOWLEDGE: &str = include_str!("../../assets/knowledge_physical.txt");
pub const DEGRADATION_KNOWLEDGE: &str = include_str!("../../assets/knowledge_degradation.txt");

/// One rule per nonblank line.
pub fn knowledge_rules(corpus: &str) -> Vec<String> {
    corpus.lines().map(str::trim).filter(|l| !l.is_empty()).map(String::from).collect()
}

#[derive(Debug, Error)]
pub enum MemoryError {
    #[error("round {got} recorded after round {last}")]
    Sequence { last: usize, got: usize },
    #[error("{path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("{path} line {line}: {source}")]
    Parse {
        path: String,
        line: usize,
        #[source]
        source: serde_json::Error,
    },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum KnowledgeKind {
    Injected,
    LearnedSensitivity,
    RoundRecord,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Provenance {
    pub source: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub round: Option<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct KnowledgeEntry {
    pub kind: KnowledgeKind,
    pub text: String,
    pub provenance: Provenance,
    pub salience: f64,
}

impl KnowledgeEntry {
    pub fn injected(text: impl Into<String>, source: &str) -> Self {
        Self {
            kind: KnowledgeKind::Injected,
            text: text.into(),
            provenance: Provenance { source: source.to_string(), round: None },
            salience: 1.0,
        }
    }

    pub fn learned(text: impl Into<String>, source: &str, round: Option<usize>, salience: f64) -> Self {
        Self {
            kind: KnowledgeKind::LearnedSensitivity,
            text: text.into(),
            provenance: Provenance { source: source.to_string(), round },
            salience: salience.max(0.0),
        }
    }
}

/// One evaluated parameter vector and what came of it.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RoundRecord {
    pub round: usize,
    /// Update proposed after seeing this round's feedback.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub proposed: Option<ParameterUpdate>,
    /// Search-key values that were simulated.
    pub theta: BTreeMap<String, f64>,
    pub residuals: ResidualSet,
    pub features: FeatureSet,
    pub events: Vec<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub rationale: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub step_size: Option<f64>,
}

impl RoundRecord {
    pub fn succeeded(&self) -> bool {
        self.events.iter().any(|e| e == SUCCESS_EVENT)
    }

    pub fn summary_line(&self) -> String {
        let mut s = format!("round {}: total MAPE {:.4}%", self.round, self.residuals.total_mape);
        if !self.theta.is_empty() {
            s.push_str(" with ");
            s.push_str(&format_theta(&self.theta));
        }
        let events: Vec<&str> = self.events.iter().map(String::as_str).filter(|e| *e != SUCCESS_EVENT).collect();
        if !events.is_empty() {
            s.push_str(&format!(" [{}]", events.join(", ")));
        }
        if let Some(r) = &self.rationale {
            s.push_str(&format!("; reasoning: {}", r.replace('\n', " ")));
        }
        s
    }
}

pub fn format_theta(theta: &BTreeMap<String, f64>) -> String {
    theta.iter().map(|(k, v)| format!("{k} = {v:.6e}")).collect::<Vec<_>>().join(", ")
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BestSoFar {
    pub round: usize,
    pub total_mape: f64,
    pub theta: BTreeMap<String, f64>,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct MemoryStore {
    pub knowledge: Vec<KnowledgeEntry>,
    pub warmup: Vec<RoundRecord>,
    pub records: Vec<RoundRecord>,
    pub best: Option<BestSoFar>,
}

#[derive(Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
enum Line {
    Knowledge(KnowledgeEntry),
    Warmup(RoundRecord),
    Round(RoundRecord),
}

impl MemoryStore {
    pub fn new() -> Self {
        Self::default()
    }

    /// A store holding one injected entry per distinct rule.
    pub fn init_with_knowledge<S: AsRef<str>>(rules: &[S], source: &str) -> Self {
        let mut store = Self::new();
        for r in rules {
            store.add_knowledge(KnowledgeEntry::injected(r.as_ref().trim(), source));
        }
        store
    }

    /// Adds `entry` unless it is blank or an entry of the same kind and text exists.
    pub fn add_knowledge(&mut self, entry: KnowledgeEntry) -> bool {
        if entry.text.trim().is_empty()
            || self.knowledge.iter().any(|e| e.kind == entry.kind && e.text == entry.text)
        {
            return false;
        }
        self.knowledge.push(entry);
        true
    }

    pub fn entries(&self, kind: KnowledgeKind) -> impl Iterator<Item = &KnowledgeEntry> {
        self.knowledge.iter().filter(move |e| e.kind == kind)
    }

    pub fn last_round(&self) -> usize {
        self.records.last().map_or(0, |r| r.round)
    }

    pub fn record_round(&mut self, record: RoundRecord) -> Result<(), MemoryError> {
        let last = self.last_round();
        if record.round != last + 1 {
            return Err(MemoryError::Sequence { last, got: record.round });
        }
        self.consider_best(&record);
        self.records.push(record);
        Ok(())
    }

    pub fn record_warmup(&mut self, record: RoundRecord) {
        self.warmup.push(record);
    }

    /// Replaces the proposal attached to the latest round.
    pub fn annotate_last(&mut self, proposed: Option<ParameterUpdate>, rationale: Option<String>) {
        if let Some(r) = self.records.last_mut() {
            r.proposed = proposed;
            r.rationale = rationale;
        }
    }

    fn consider_best(&mut self, r: &RoundRecord) {
        if !r.succeeded() {
            return;
        }
        if self.best.as_ref().is_none_or(|b| r.residuals.total_mape < b.total_mape) {
            self.best = Some(BestSoFar { round: r.round, total_mape: r.residuals.total_mape, theta: r.theta.clone() });
        }
    }

    pub fn best_line(&self) -> String {
        match &self.best {
            Some(b) => format!(
                "Best so far: round {} with total MAPE {:.4}% at {}",
                b.round,
                b.total_mape,
                format_theta(&b.theta)
            ),
            None => "Best so far: no successful simulation yet".to_string(),
        }
    }

    /// Prompt context within roughly `token_budget` tokens (4 characters
    /// each). The best-so-far line is always kept; then injected rules,
    /// learned rules and rounds newest-first are admitted while they fit.
    /// Output order is injected, learned, best, rounds oldest to newest.
    pub fn render_context(&self, token_budget: usize) -> String {
        let mut left = token_budget.saturating_mul(4) as isize;
        let best = self.best_line();
        left -= best.len() as isize + 1;

        let take = |items: Vec<String>, header: &str, left: &mut isize| -> Vec<String> {
            let mut kept = Vec::new();
            for item in items {
                let cost = item.len() as isize + 3 + if kept.is_empty() { header.len() as isize + 2 } else { 0 };
                if cost > *left {
                    *left = -1;
                    break;
                }
                *left -= cost;
                kept.push(item);
            }
            kept
        };
        const INJ: &str = "Domain knowledge:";
        const LEARNED: &str = "Learned from warm-up:";
        const ROUNDS: &str = "Recent rounds:";
        let injected = take(self.entries(KnowledgeKind::Injected).map(|e| e.text.clone()).collect(), INJ, &mut left);
        let learned = take(
            self.entries(KnowledgeKind::LearnedSensitivity).map(|e| e.text.clone()).collect(),
            LEARNED,
            &mut left,
        );
        let mut rounds = take(self.records.iter().rev().map(RoundRecord::summary_line).collect(), ROUNDS, &mut left);
        rounds.reverse();

        let mut out = String::new();
        for (header, items) in [(INJ, &injected), (LEARNED, &learned)] {
            if !items.is_empty() {
                out.push_str(header);
                out.push('\n');
                for i in items {
                    out.push_str("- ");
                    out.push_str(i);
                    out.push('\n');
                }
                out.push('\n');
            }
        }
        out.push_str(&best);
        out.push('\n');
        if !rounds.is_empty() {
            out.push('\n');
            out.push_str(ROUNDS);
            out.push('\n');
            for r in &rounds {
                out.push_str("- ");
                out.push_str(r);
                out.push('\n');
            }
        }
        out
    }

    fn lines(&self) -> impl Iterator<Item = Line> + '_ {
        self.knowledge
            .iter()
            .cloned()
            .map(Line::Knowledge)
            .chain(self.warmup.iter().cloned().map(Line::Warmup))
            .chain(self.records.iter().cloned().map(Line::Round))
    }

    pub fn to_jsonl(&self) -> String {
        let mut out = String::new();
        for l in self.lines() {
            out.push_str(&serde_json::to_string(&l).expect("memory line serializes"));
            out.push('\n');
        }
        out
    }

    pub fn save(&self, path: &Path) -> Result<(), MemoryError> {
        let io = |source| MemoryError::Io { path: path.display().to_string(), source };
        let mut w = BufWriter::new(File::create(path).map_err(io)?);
        w.write_all(self.to_jsonl().as_bytes()).map_err(io)?;
        w.flush().map_err(io)
    }

    pub fn load(path: &Path) -> Result<Self, MemoryError> {
        let name = path.display().to_string();
        let f = File::open(path).map_err(|source| MemoryError::Io { path: name.clone(), source })?;
        let mut store = Self::new();
        for (i, line) in BufReader::new(f).lines().enumerate() {
            let line = line.map_err(|source| MemoryError::Io { path: name.clone(), source })?;
            if line.trim().is_empty() {
                continue;
            }
            let parsed: Line =
                serde_json::from_str(&line).map_err(|source| MemoryError::Parse { path: name.clone(), line: i + 1, source })?;
            match parsed {
                Line::Knowledge(e) => store.knowledge.push(e),
                Line::Warmup(r) => store.warmup.push(r),
                Line::Round(r) => store.record_round(r)?,
            }
        }
        Ok(store)
    }
}

/// Appends single entries to a memory file as they are produced.
pub struct MemoryLog {
    path: String,
    file: File,
}

impl MemoryLog {
    pub fn create(path: &Path, store: &MemoryStore) -> Result<Self, MemoryError> {
        store.save(path)?;
        let file = OpenOptions::new()
            .append(true)
            .open(path)
            .map_err(|source| MemoryError::Io { path: path.display().to_string(), source })?;
        Ok(Self { path: path.display().to_string(), file })
    }

    fn append(&mut self, line: Line) -> Result<(), MemoryError> {
        let mut s = serde_json::to_string(&line).expect("memory line serializes");
        s.push('\n');
        self.file
            .write_all(s.as_bytes())
            .and_then(|_| self.file.flush())
            .map_err(|source| MemoryError::Io { path: self.path.clone(), source })
    }

    pub fn knowledge(&mut self, e: &KnowledgeEntry) -> Result<(), MemoryError> {
        self.append(Line::Knowledge(e.clone()))
    }

    pub fn warmup(&mut self, r: &RoundRecord) -> Result<(), MemoryError> {
        self.append(Line::Warmup(r.clone()))
    }

    pub fn round(&mut self, r: &RoundRecord) -> Result<(), MemoryError> {
        self.append(Line::Round(r.clone()))
    }
}

#[cfg(test)]
pub(crate) mod tests {
    use super::*;
    use crate::feedback::FAILED_TOTAL_MAPE;

    pub(crate) fn record(round: usize, total: f64, ok: bool) -> RoundRecord {
        RoundRecord {
            round,
            proposed: None,
            theta: BTreeMap::from([("Electrode width [m]".to_string(), 1.0 + round as f64 / 10.0)]),
            residuals: ResidualSet {
                capacity_mape: Some(total),
                voltage_rmse: Some(0.01),
                voltage_mape: Some(total),
                current_mape: Some(total),
                total_mape: if ok { total } else { FAILED_TOTAL_MAPE },
            },
            features: FeatureSet::default(),
            events: vec![if ok { SUCCESS_EVENT.to_string() } else { "solver_failure@step1".to_string() }],
            rationale: None,
            step_size: Some(1.0),
        }
    }

    #[test]
    fn shipped_corpora_load_one_entry_per_line() {
        let rules = knowledge_rules(PHYSICAL_KNOWLEDGE);
        assert_eq!(rules.len(), PHYSICAL_KNOWLEDGE.lines().filter(|l| !l.trim().is_empty()).count());
        let store = MemoryStore::init_with_knowledge(&rules, "physical");
        assert_eq!(store.knowledge.len(), rules.len());
        assert!(store.knowledge.iter().all(|e| e.kind == KnowledgeKind::Injected));
        assert!(!knowledge_rules(DEGRADATION_KNOWLEDGE).is_empty());
    }

    #[test]
    fn empty_and_duplicate_rules() {
        let empty: [&str; 0] = [];
        assert!(MemoryStore::init_with_knowledge(&empty, "x").knowledge.is_empty());
        let s = MemoryStore::init_with_knowledge(&["a", "b", "a", " "], "x");
        assert_eq!(s.knowledge.len(), 2);
    }

    #[test]
    fn best_tracks_successful_minimum() {
        let mut s = MemoryStore::new();
        s.record_round(record(1, 12.6, true)).unwrap();
        assert_eq!(s.best.as_ref().unwrap().round, 1);
        s.record_round(record(2, 15.0, true)).unwrap();
        assert_eq!(s.best.as_ref().unwrap().round, 1);
        s.record_round(record(3, 1.0, false)).unwrap();
        assert_eq!(s.best.as_ref().unwrap().round, 1);
        assert_eq!(s.records.len(), 3);
        s.record_round(record(4, 3.0, true)).unwrap();
        assert_eq!(s.best.as_ref().unwrap().round, 4);
        assert!(matches!(s.record_round(record(6, 1.0, true)), Err(MemoryError::Sequence { last: 4, got: 6 })));
    }

    #[test]
    fn tiny_budget_keeps_best_line() {
        let mut s = MemoryStore::init_with_knowledge(&["rule one", "rule two"], "x");
        for t in 1..=5 {
            s.record_round(record(t, 10.0 - t as f64, true)).unwrap();
        }
        let text = s.render_context(1);
        assert!(text.contains("Best so far: round 5"));
        assert!(!text.contains("rule one"));
    }

    #[test]
    fn huge_budget_keeps_everything_in_order() {
        let mut s = MemoryStore::init_with_knowledge(&["rule one", "rule two"], "x");
        s.add_knowledge(KnowledgeEntry::learned("learned rule", "warmup", Some(1), 0.5));
        for t in 1..=5 {
            s.record_round(record(t, 10.0 - t as f64, true)).unwrap();
        }
        let text = s.render_context(1_000_000);
        let pos = |needle: &str| text.find(needle).unwrap_or_else(|| panic!("{needle} missing"));
        assert!(pos("rule one") < pos("rule two"));
        assert!(pos("rule two") < pos("learned rule"));
        assert!(pos("learned rule") < pos("Best so far"));
        assert!(pos("round 1:") < pos("round 5:"));
        assert_eq!(text, s.render_context(1_000_000));
    }

    #[test]
    fn rounds_are_dropped_oldest_first() {
        let mut s = MemoryStore::new();
        for t in 1..=20 {
            s.record_round(record(t, 30.0 - t as f64, true)).unwrap();
        }
        let full = s.render_context(1_000_000).len();
        let text = s.render_context(full / 8);
        assert!(text.contains("round 20:"));
        assert!(!text.contains("round 1:"));
    }

    #[test]
    fn jsonl_round_trip() {
        let mut s = MemoryStore::init_with_knowledge(&["rule"], "x");
        s.add_knowledge(KnowledgeEntry::learned("learned", "warmup", Some(2), 0.25));
        s.record_warmup(record(1, 5.0, false));
        s.record_round(record(1, 1.0 / 3.0, true)).unwrap();
        s.record_round(record(2, 0.1, false)).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("memory.jsonl");
        s.save(&path).unwrap();
        assert_eq!(MemoryStore::load(&path).unwrap(), s);

        let mut log = MemoryLog::create(&path, &MemoryStore::new()).unwrap();
        for e in &s.knowledge {
            log.knowledge(e).unwrap();
        }
        log.warmup(&s.warmup[0]).unwrap();
        for r in &s.records {
            log.round(r).unwrap();
        }
        assert_eq!(MemoryStore::load(&path).unwrap(), s);
    }
}
