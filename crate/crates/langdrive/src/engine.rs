//! Decision and adaptation cycles over a gateway and the retrieval store.
//! Failures never propagate: they come back inside the record so the caller
//! can log them and keep driving on the current parameters.

use langdrive_core::adapter::{build_adapter_prompt, parse_params, RawParams, BASE_MEMORY};
use langdrive_core::decision::{build_decision_prompt, parse_decision};
use langdrive_core::metrics::GenerationStats;
use langdrive_core::rag::RetrievalConfig;
use langdrive_core::{DecisionOutcome, MemoryKind, ParamUpdate, RagStore, StateSnapshot};
use serde::{Deserialize, Serialize};

use crate::gateway::{ChatRequest, Gateway};
use crate::store::{JournalEntry, ParamStore, Source};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DecisionRecord {
    pub human_prompt: String,
    pub snapshot: StateSnapshot,
    pub hints_used: Vec<u32>,
    pub prompt: String,
    /// `None` when the gateway failed.
    pub response: Option<String>,
    /// Parsed outcome, or the gateway/parse error text.
    pub outcome: Result<DecisionOutcome, String>,
    pub stats: Option<GenerationStats>,
}

impl DecisionRecord {
    /// The forwarded instruction, if the model asked for a change.
    pub fn instruction(&self) -> Option<&str> {
        self.outcome.as_ref().ok().and_then(|o| o.instruction.as_deref())
    }

    pub fn latency(&self) -> f64 {
        self.stats.map_or(0.0, |s| s.latency)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AdaptRequest {
    pub instruction: String,
    pub memories_used: Vec<u32>,
    pub prompt: String,
    pub response: Option<String>,
    pub raw: Result<RawParams, String>,
    pub stats: Option<GenerationStats>,
}

impl AdaptRequest {
    pub fn latency(&self) -> f64 {
        self.stats.map_or(0.0, |s| s.latency)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AdaptRecord {
    pub request: AdaptRequest,
    /// Present when the response parsed and was applied.
    pub update: Option<ParamUpdate>,
    pub journal: Option<JournalEntry>,
}

pub struct Engine {
    pub gateway: Gateway,
    /// `None` disables retrieval: no hints, no memories.
    pub rag: Option<RagStore>,
    pub retrieval: RetrievalConfig,
    pub max_tokens: u32,
}

impl Engine {
    pub fn new(gateway: Gateway) -> Self {
        Self {
            gateway,
            rag: Some(RagStore::bundled()),
            retrieval: RetrievalConfig::default(),
            max_tokens: crate::gateway::DEFAULT_MAX_TOKENS,
        }
    }

    pub fn without_rag(mut self) -> Self {
        self.rag = None;
        self
    }

    fn retrieve(&self, query: &str, kind: MemoryKind) -> (Vec<u32>, Vec<String>) {
        let Some(rag) = &self.rag else { return (Vec::new(), Vec::new()) };
        let k = match kind {
            MemoryKind::DecisionHint => self.retrieval.hint_count(rag.count(kind)),
            MemoryKind::MpcMemory => self.retrieval.memory_k,
        };
        match rag.retrieve(query, kind, k) {
            Ok(found) => found.iter().map(|e| (e.id, e.render())).unzip(),
            Err(_) => (Vec::new(), Vec::new()),
        }
    }

    /// The decision prompt and the hint ids it includes.
    pub fn decision_prompt(&self, human_prompt: &str, snapshot: &StateSnapshot) -> (String, Vec<u32>) {
        let (ids, hints) = self.retrieve(human_prompt, MemoryKind::DecisionHint);
        (build_decision_prompt(human_prompt, snapshot, &hints), ids)
    }

    pub fn adapter_prompt(&self, instruction: &str) -> (String, Vec<u32>) {
        let (ids, memories) = self.retrieve(instruction, MemoryKind::MpcMemory);
        (build_adapter_prompt(instruction, BASE_MEMORY, &memories), ids)
    }

    fn request(&self, prompt: &str) -> ChatRequest {
        let mut r = ChatRequest::new(prompt);
        r.max_tokens = self.max_tokens;
        r
    }

    pub fn decide(&self, human_prompt: &str, snapshot: &StateSnapshot) -> DecisionRecord {
        let (prompt, hints_used) = self.decision_prompt(human_prompt, snapshot);
        let (response, outcome, stats) = match self.gateway.complete(&self.request(&prompt)) {
            Ok(c) => {
                let outcome = parse_decision(&c.text).map_err(|e| e.to_string());
                (Some(c.text), outcome, Some(c.stats))
            }
            Err(e) => (None, Err(e.to_string()), None),
        };
        if let Err(e) = &outcome {
            tracing::warn!(error = %e, "decision cycle failed; keeping current behaviour");
        }
        DecisionRecord { human_prompt: human_prompt.into(), snapshot: snapshot.clone(), hints_used, prompt, response, outcome, stats }
    }

    /// Queries the model for new parameters without touching any store.
    pub fn request_params(&self, instruction: &str) -> AdaptRequest {
        let (prompt, memories_used) = self.adapter_prompt(instruction);
        let (response, raw, stats) = match self.gateway.complete(&self.request(&prompt)) {
            Ok(c) => {
                let raw = parse_params(&c.text).map_err(|e| e.to_string());
                (Some(c.text), raw, Some(c.stats))
            }
            Err(e) => (None, Err(e.to_string()), None),
        };
        if let Err(e) = &raw {
            tracing::warn!(error = %e, "adaptation cycle failed; parameters unchanged");
        }
        AdaptRequest { instruction: instruction.into(), memories_used, prompt, response, raw, stats }
    }

    /// Clamps a finished request against the store's current set and applies it.
    pub fn apply(request: AdaptRequest, store: &ParamStore, t: f64) -> AdaptRecord {
        match &request.raw {
            Ok(raw) => {
                let (update, entry) = store.apply_raw(raw, Source::Adapter, t);
                AdaptRecord { request, update: Some(update), journal: Some(entry) }
            }
            Err(_) => AdaptRecord { request, update: None, journal: None },
        }
    }

    /// Full adaptation cycle: retrieve, prompt, complete, parse, clamp, apply.
    pub fn adapt(&self, instruction: &str, store: &ParamStore, t: f64) -> AdaptRecord {
        Self::apply(self.request_params(instruction), store, t)
    }
}
