// SPDX-License-Identifier: Apache-2.0

//! Project emission for a compiled model and the machine-readable report.

mod hls;

use std::collections::BTreeMap;
use std::path::Path;
use std::time::{SystemTime, UNIX_EPOCH};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::estimator::{estimate_model, EstimatorConfig, ModelEstimate};
use crate::kernels::KernelError;
use crate::model_ir::{serialize_model, ModelError, ModelGraph};
use crate::passes::PassReport;
use crate::profiler::{check_coverage, profile_weights, CoverageFinding, ProfileReport};
use crate::pruning::{HistoryEntry, PruneState};

pub use hls::HlsCppWriter;

pub const REPORT_SCHEMA_VERSION: u32 = 1;

/// JSON Schema of [`Report`].
pub const REPORT_SCHEMA: &str = include_str!("../../schema/report.schema.json");

#[derive(Debug, Error)]
pub enum CodegenError {
    #[error(transparent)]
    Kernel(#[from] KernelError),
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error("i/o error at {path}: {source}")]
    Io { path: String, source: std::io::Error },
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct CodegenConfig {
    /// Top-level function and file stem; the model name when absent.
    pub project_name: Option<String>,
    /// Manifest timestamp in unix seconds; the current time when absent.
    pub timestamp: Option<u64>,
}

/// A code generation backend.
pub trait BackendWriter {
    fn name(&self) -> &'static str;
    /// Relative path to file contents.
    fn emit_files(&self, graph: &ModelGraph, cfg: &CodegenConfig) -> Result<BTreeMap<String, String>, CodegenError>;
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ManifestFile {
    pub path: String,
    pub sha256: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Manifest {
    pub tool: String,
    pub version: String,
    pub backend: String,
    pub model: String,
    /// SHA-256 of the canonical model document.
    pub model_hash: String,
    pub generated_at_unix: u64,
    pub files: Vec<ManifestFile>,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ProjectTree {
    pub files: BTreeMap<String, String>,
    pub manifest: Manifest,
}

impl ProjectTree {
    pub fn manifest_json(&self) -> String {
        serde_json::to_string_pretty(&self.manifest).expect("manifest serializes") + "\n"
    }

    /// Writes every file plus `manifest.json` under `dir`.
    pub fn write_to(&self, dir: &Path) -> Result<(), CodegenError> {
        let io = |path: &Path, source| CodegenError::Io {
            path: path.display().to_string(),
            source,
        };
        let all = self
            .files
            .iter()
            .map(|(p, c)| (p.as_str(), c.clone()))
            .chain(std::iter::once(("manifest.json", self.manifest_json())));
        for (rel, contents) in all {
            let path = dir.join(rel);
            if let Some(parent) = path.parent() {
                std::fs::create_dir_all(parent).map_err(|e| io(parent, e))?;
            }
            std::fs::write(&path, contents).map_err(|e| io(&path, e))?;
            #[cfg(unix)]
            if rel.ends_with(".sh") {
                use std::os::unix::fs::PermissionsExt;
                std::fs::set_permissions(&path, std::fs::Permissions::from_mode(0o755)).map_err(|e| io(&path, e))?;
            }
        }
        Ok(())
    }
}

pub fn sha256_hex(bytes: &[u8]) -> String {
    Sha256::digest(bytes).iter().map(|b| format!("{b:02x}")).collect()
}

pub fn model_hash(graph: &ModelGraph) -> String {
    sha256_hex(serialize_model(graph).as_bytes())
}

/// Emits a project with `writer`.
pub fn emit_with(writer: &dyn BackendWriter, graph: &ModelGraph, cfg: &CodegenConfig) -> Result<ProjectTree, CodegenError> {
    let files = writer.emit_files(graph, cfg)?;
    let generated_at_unix = cfg.timestamp.unwrap_or_else(|| {
        SystemTime::now()
            .duration_since(UNIX_EPOCH)
            .map(|d| d.as_secs())
            .unwrap_or(0)
    });
    let manifest = Manifest {
        tool: "fixflow".into(),
        version: env!("CARGO_PKG_VERSION").into(),
        backend: writer.name().into(),
        model: graph.name.clone(),
        model_hash: model_hash(graph),
        generated_at_unix,
        files: files
            .iter()
            .map(|(path, c)| ManifestFile {
                path: path.clone(),
                sha256: sha256_hex(c.as_bytes()),
            })
            .collect(),
    };
    Ok(ProjectTree { files, manifest })
}

/// Emits the C++ project for `graph`.
pub fn emit_project(graph: &ModelGraph, cfg: &CodegenConfig) -> Result<ProjectTree, CodegenError> {
    emit_with(&HlsCppWriter, graph, cfg)
}

/// C-style identifier from an arbitrary name.
pub(crate) fn c_identifier(name: &str) -> String {
    let mut s: String = name
        .chars()
        .map(|c| if c.is_ascii_alphanumeric() { c } else { '_' })
        .collect();
    if s.is_empty() || s.starts_with(|c: char| c.is_ascii_digit()) {
        s.insert(0, '_');
    }
    s
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Report {
    pub schema_version: u32,
    pub tool_version: String,
    pub model: String,
    pub model_hash: String,
    pub passes: Vec<PassReport>,
    pub estimate: ModelEstimate,
    pub profile: ProfileReport,
    pub coverage: Vec<CoverageFinding>,
    pub bops_total: f64,
    pub prune_history: Vec<HistoryEntry>,
}

/// Collects estimate, profile, coverage and pruning history for `graph`.
pub fn build_report(
    graph: &ModelGraph,
    passes: &[PassReport],
    prune: Option<&PruneState>,
    cfg: &EstimatorConfig,
) -> Result<Report, CodegenError> {
    let estimate = estimate_model(graph, prune, cfg)?;
    let profile = profile_weights(graph);
    let coverage = check_coverage(&profile, graph);
    Ok(Report {
        schema_version: REPORT_SCHEMA_VERSION,
        tool_version: env!("CARGO_PKG_VERSION").into(),
        model: graph.name.clone(),
        model_hash: model_hash(graph),
        passes: passes.to_vec(),
        bops_total: estimate.resources.bops_total,
        estimate,
        profile,
        coverage,
        prune_history: prune.map(|p| p.history.clone()).unwrap_or_default(),
    })
}

/// [`build_report`] serialized as pretty JSON.
pub fn emit_report(
    graph: &ModelGraph,
    passes: &[PassReport],
    prune: Option<&PruneState>,
    cfg: &EstimatorConfig,
) -> Result<String, CodegenError> {
    let r = build_report(graph, passes, prune, cfg)?;
    Ok(serde_json::to_string_pretty(&r).expect("report serializes") + "\n")
}
