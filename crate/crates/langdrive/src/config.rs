//! Run configuration: a JSON file, every field optional. Credentials for the
//! remote backend may also come from the environment.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::sync::Arc;

use anyhow::Context;
use langdrive_core::mpc::MpcSettings;
use langdrive_core::rag::RetrievalConfig;
use langdrive_core::{HorizonConfig, TrackSpec, VehicleParams};
use serde::{Deserialize, Serialize};

use crate::gateway::{Gateway, RemoteBackend, RemoteConfig, ReplayBackend, ScriptedBackend};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default, clap::ValueEnum)]
#[serde(rename_all = "snake_case")]
pub enum BackendKind {
    #[default]
    Scripted,
    Replay,
    Remote,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct BackendConfig {
    pub kind: BackendKind,
    /// Rules file for the scripted backend; the bundled rules otherwise.
    pub rules: Option<PathBuf>,
    /// Transcript for the replay backend; the bundled crash-recovery
    /// transcript otherwise.
    pub transcript: Option<PathBuf>,
    pub remote: Option<RemoteConfig>,
    /// Overrides the reported latency of scripted and replay backends [s].
    pub latency: Option<f64>,
    pub max_tokens: u32,
}

impl Default for BackendConfig {
    fn default() -> Self {
        Self {
            kind: BackendKind::Scripted,
            rules: None,
            transcript: None,
            remote: None,
            latency: None,
            max_tokens: crate::gateway::DEFAULT_MAX_TOKENS,
        }
    }
}

pub const CRASH_RECOVERY_TRANSCRIPT: &str = include_str!("../data/crash_recovery.jsonl");

/// Replay latency when none is configured [s].
pub const DEFAULT_REPLAY_LATENCY: f64 = 0.5;

impl BackendConfig {
    pub fn build(&self) -> anyhow::Result<Gateway> {
        Ok(match self.kind {
            BackendKind::Scripted => {
                let mut b = match &self.rules {
                    Some(p) => ScriptedBackend::load(p).with_context(|| format!("loading rules {}", p.display()))?,
                    None => ScriptedBackend::bundled(),
                };
                if let Some(l) = self.latency {
                    b.latency = l;
                }
                Arc::new(b)
            }
            BackendKind::Replay => {
                let b = match &self.transcript {
                    Some(p) => ReplayBackend::load(p).with_context(|| format!("loading transcript {}", p.display()))?,
                    None => ReplayBackend::parse(CRASH_RECOVERY_TRANSCRIPT)?,
                };
                Arc::new(b.with_latency(self.latency.unwrap_or(DEFAULT_REPLAY_LATENCY)))
            }
            BackendKind::Remote => {
                let cfg = RemoteConfig::from_env(self.remote.clone())
                    .context("remote backend needs a URL (config `backend.remote.url` or LANGDRIVE_LLM_URL)")?;
                Arc::new(RemoteBackend::new(cfg))
            }
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct DecisionConfig {
    /// Snapshot window [s].
    pub window: f64,
    pub samples: usize,
    /// Minimum time between decision cycles [s].
    pub min_spacing: f64,
}

impl Default for DecisionConfig {
    fn default() -> Self {
        Self { window: 2.0, samples: 4, min_spacing: 2.0 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct RunConfig {
    /// Track CSV; the bundled oval when unset.
    pub track: Option<PathBuf>,
    pub horizon: HorizonConfig,
    pub mpc: MpcSettings,
    pub vehicle: VehicleParams,
    /// Overrides of the default parameter set, applied through the clamp
    /// policy and journaled as CLI changes.
    pub params: BTreeMap<String, f64>,
    pub backend: BackendConfig,
    pub decision: DecisionConfig,
    pub retrieval: RetrievalConfig,
    /// Retrieval-augmented prompts on or off.
    pub rag: bool,
    /// Simulator step [s].
    pub dt: f64,
    pub seed: u64,
    pub port: u16,
    pub telemetry_hz: f64,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            track: None,
            horizon: HorizonConfig::default(),
            mpc: MpcSettings::default(),
            vehicle: VehicleParams::default(),
            params: BTreeMap::new(),
            backend: BackendConfig::default(),
            decision: DecisionConfig::default(),
            retrieval: RetrievalConfig::default(),
            rag: true,
            dt: 0.02,
            seed: 0,
            port: 8080,
            telemetry_hz: 10.0,
        }
    }
}

impl RunConfig {
    pub fn load(path: &Path) -> anyhow::Result<Self> {
        let text = std::fs::read_to_string(path).with_context(|| format!("reading config {}", path.display()))?;
        let cfg: RunConfig = serde_json::from_str(&text).with_context(|| format!("parsing config {}", path.display()))?;
        cfg.check()?;
        Ok(cfg)
    }

    pub fn check(&self) -> anyhow::Result<()> {
        anyhow::ensure!(self.dt > 0.0 && self.dt.is_finite(), "dt must be positive");
        anyhow::ensure!(self.horizon.is_valid(), "invalid horizon");
        anyhow::ensure!(self.decision.window > 0.0 && self.decision.samples >= 2, "decision window needs >= 2 samples");
        anyhow::ensure!(self.telemetry_hz > 0.0, "telemetry_hz must be positive");
        if let Some(t) = &self.track {
            anyhow::ensure!(t.exists(), "track file {} does not exist", t.display());
        }
        Ok(())
    }

    pub fn load_track(&self) -> anyhow::Result<TrackSpec> {
        Ok(match &self.track {
            Some(p) => crate::io::load_track(p, true)?,
            None => crate::io::bundled_oval(),
        })
    }
}
