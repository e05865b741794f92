//! Lexical retrieval over the two small memory corpora.
//!
//! Scores are cosine similarities of term-frequency vectors. Tokens are
//! lowercase alphanumeric runs; punctuation and underscores split words, so
//! `v_min` and "v min" tokenize the same way.

use alloc::collections::BTreeMap;
use alloc::string::{String, ToString};
use alloc::vec::Vec;

/// Decision hints as shipped with the crate.
pub const DEFAULT_HINTS: &str = include_str!("../data/decision_hints.txt");
/// Controller memories as shipped with the crate.
pub const DEFAULT_MEMORIES: &str = include_str!("../data/mpc_memories.txt");

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(feature = "serde", serde(rename_all = "snake_case"))]
pub enum MemoryKind {
    DecisionHint,
    MpcMemory,
}

impl MemoryKind {
    fn header(self) -> &'static str {
        match self {
            MemoryKind::DecisionHint => "Hint",
            MemoryKind::MpcMemory => "Memory Entry",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct MemoryEntry {
    pub id: u32,
    pub kind: MemoryKind,
    pub text: String,
}

impl MemoryEntry {
    /// The entry as it appears in the corpus file, header included.
    pub fn render(&self) -> String {
        alloc::format!("# {} {}:\n{}", self.kind.header(), self.id, self.text)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum RagError {
    #[error("no {0:?} entries loaded")]
    Empty(MemoryKind),
    #[error("k must be at least 1")]
    ZeroK,
    #[error("line {line}: {reason}")]
    Corpus { line: usize, reason: String },
    #[error("duplicate {kind:?} id {id}")]
    DuplicateId { kind: MemoryKind, id: u32 },
}

/// Parses a corpus file made of `# Hint N:` or `# Memory Entry N:` blocks.
/// Text before the first header and lines holding only an ellipsis are
/// ignored.
pub fn parse_corpus(text: &str, kind: MemoryKind) -> Result<Vec<MemoryEntry>, RagError> {
    let prefix = alloc::format!("# {} ", kind.header());
    let mut out: Vec<MemoryEntry> = Vec::new();
    let mut current: Option<(u32, Vec<&str>)> = None;
    let flush = |cur: Option<(u32, Vec<&str>)>, out: &mut Vec<MemoryEntry>, line: usize| -> Result<(), RagError> {
        if let Some((id, lines)) = cur {
            let body = lines.join("\n").trim().to_string();
            if body.is_empty() {
                return Err(RagError::Corpus { line, reason: alloc::format!("entry {id} has no text") });
            }
            if out.iter().any(|e| e.id == id) {
                return Err(RagError::DuplicateId { kind, id });
            }
            out.push(MemoryEntry { id, kind, text: body });
        }
        Ok(())
    };
    for (i, raw) in text.lines().enumerate() {
        let line = raw.trim_end();
        if let Some(rest) = line.strip_prefix(prefix.as_str()) {
            let num = rest.trim_end_matches(':').trim();
            let id = num.parse::<u32>().map_err(|_| RagError::Corpus {
                line: i + 1,
                reason: alloc::format!("bad entry number {num:?}"),
            })?;
            flush(current.take(), &mut out, i + 1)?;
            current = Some((id, Vec::new()));
        } else if let Some((_, lines)) = current.as_mut() {
            let t = line.trim();
            if t == "..." || t == "…" {
                continue;
            }
            lines.push(line);
        }
    }
    flush(current, &mut out, text.lines().count())?;
    Ok(out)
}

pub fn tokenize(text: &str) -> Vec<String> {
    text.split(|c: char| !c.is_alphanumeric())
        .filter(|w| !w.is_empty())
        .map(|w| w.to_lowercase())
        .collect()
}

fn term_counts(text: &str) -> BTreeMap<String, f64> {
    let mut m = BTreeMap::new();
    for t in tokenize(text) {
        *m.entry(t).or_insert(0.0) += 1.0;
    }
    m
}

fn cosine_counts(a: &BTreeMap<String, f64>, b: &BTreeMap<String, f64>) -> f64 {
    let na: f64 = a.values().map(|v| v * v).sum();
    let nb: f64 = b.values().map(|v| v * v).sum();
    if na == 0.0 || nb == 0.0 {
        return 0.0;
    }
    let dot: f64 = a.iter().filter_map(|(k, v)| b.get(k).map(|w| v * w)).sum();
    (dot / (libm::sqrt(na) * libm::sqrt(nb))).clamp(0.0, 1.0)
}

/// Term-frequency cosine similarity in `[0, 1]`.
pub fn cosine(a: &str, b: &str) -> f64 {
    cosine_counts(&term_counts(a), &term_counts(b))
}

#[derive(Debug, Clone, Default)]
pub struct RagStore {
    entries: Vec<MemoryEntry>,
    tf: Vec<BTreeMap<String, f64>>,
}

impl RagStore {
    pub fn new() -> Self {
        Self::default()
    }

    /// Store loaded with the bundled hints and memories.
    pub fn bundled() -> Self {
        let mut s = Self::new();
        s.load(DEFAULT_HINTS, MemoryKind::DecisionHint).expect("bundled hints parse");
        s.load(DEFAULT_MEMORIES, MemoryKind::MpcMemory).expect("bundled memories parse");
        s
    }

    /// Appends a corpus. Fails without modifying the store if the text is
    /// malformed or reuses an id already loaded for the kind.
    pub fn load(&mut self, text: &str, kind: MemoryKind) -> Result<usize, RagError> {
        let parsed = parse_corpus(text, kind)?;
        for e in &parsed {
            if self.entries.iter().any(|o| o.kind == kind && o.id == e.id) {
                return Err(RagError::DuplicateId { kind, id: e.id });
            }
        }
        let n = parsed.len();
        for e in parsed {
            self.tf.push(term_counts(&e.text));
            self.entries.push(e);
        }
        Ok(n)
    }

    pub fn entries(&self, kind: MemoryKind) -> impl Iterator<Item = &MemoryEntry> {
        self.entries.iter().filter(move |e| e.kind == kind)
    }

    pub fn count(&self, kind: MemoryKind) -> usize {
        self.entries(kind).count()
    }

    /// Top `k` entries of `kind` with their scores, best first; ties go to
    /// the smaller id.
    pub fn retrieve_scored(&self, query: &str, kind: MemoryKind, k: usize) -> Result<Vec<(&MemoryEntry, f64)>, RagError> {
        if k == 0 {
            return Err(RagError::ZeroK);
        }
        let q = term_counts(query);
        let mut scored: Vec<(&MemoryEntry, f64)> = self
            .entries
            .iter()
            .zip(&self.tf)
            .filter(|(e, _)| e.kind == kind)
            .map(|(e, tf)| (e, cosine_counts(&q, tf)))
            .collect();
        if scored.is_empty() {
            return Err(RagError::Empty(kind));
        }
        scored.sort_by(|a, b| b.1.total_cmp(&a.1).then(a.0.id.cmp(&b.0.id)));
        scored.truncate(k);
        Ok(scored)
    }

    pub fn retrieve(&self, query: &str, kind: MemoryKind, k: usize) -> Result<Vec<&MemoryEntry>, RagError> {
        Ok(self.retrieve_scored(query, kind, k)?.into_iter().map(|(e, _)| e).collect())
    }
}

/// How many entries of each kind go into a prompt.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct RetrievalConfig {
    /// Every hint is used when the corpus has at most this many.
    pub all_hints_up_to: usize,
    pub hint_k: usize,
    pub memory_k: usize,
}

impl Default for RetrievalConfig {
    fn default() -> Self {
        Self { all_hints_up_to: 10, hint_k: 10, memory_k: 3 }
    }
}

impl RetrievalConfig {
    pub fn hint_count(&self, available: usize) -> usize {
        if available <= self.all_hints_up_to {
            available
        } else {
            self.hint_k
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn bundled_corpora_parse() {
        let s = RagStore::bundled();
        let hints: Vec<u32> = s.entries(MemoryKind::DecisionHint).map(|e| e.id).collect();
        assert_eq!(hints, [1, 2, 3, 8, 9, 10]);
        let mems: Vec<u32> = s.entries(MemoryKind::MpcMemory).map(|e| e.id).collect();
        assert_eq!(mems, [0, 1, 10]);
        let h1 = s.entries(MemoryKind::DecisionHint).next().unwrap();
        assert_eq!(h1.text, "If the d-speed is above than 0.5m/s is high.");
        assert_eq!(h1.render(), "# Hint 1:\nIf the d-speed is above than 0.5m/s is high.");
    }

    #[test]
    fn tokens_split_underscores() {
        assert_eq!(tokenize("Set v_min, 'qn': -1!"), ["set", "v", "min", "qn", "1"]);
    }

    #[test]
    fn self_query_ranks_first() {
        let s = RagStore::bundled();
        for e in s.entries(MemoryKind::DecisionHint) {
            let top = s.retrieve(&e.text, MemoryKind::DecisionHint, 1).unwrap();
            assert_eq!(top[0].id, e.id);
        }
    }

    #[test]
    fn k_exceeding_corpus_returns_all() {
        let s = RagStore::bundled();
        assert_eq!(s.retrieve("anything", MemoryKind::MpcMemory, 100).unwrap().len(), 3);
    }

    #[test]
    fn errors() {
        let s = RagStore::new();
        assert_eq!(s.retrieve("x", MemoryKind::MpcMemory, 1).unwrap_err(), RagError::Empty(MemoryKind::MpcMemory));
        let s = RagStore::bundled();
        assert_eq!(s.retrieve("x", MemoryKind::MpcMemory, 0).unwrap_err(), RagError::ZeroK);
        let dup = "# Hint 1:\na\n# Hint 1:\nb\n";
        assert!(matches!(parse_corpus(dup, MemoryKind::DecisionHint), Err(RagError::DuplicateId { .. })));
    }

    #[test]
    fn disjoint_scores_zero() {
        assert_eq!(cosine("alpha beta", "gamma"), 0.0);
        assert!((cosine("a b", "b a") - 1.0).abs() < 1e-15);
    }
}
