//! pipeforge-core: an embeddable, file-backed data-pipeline engine.
//!
//! The engine implements two batch pipeline styles over a local workspace
//! directory: a validate-then-load flow in which a data contract gates what
//! reaches the versioned store, and a load-then-transform flow in which
//! everything lands in a raw zone first and curation happens downstream.
//! Around those flows it provides append-only versioned tables with as-of
//! queries, raw-zone tiering with an exact cost model, deterministic
//! replayable transformations with lineage, a curated metric layer, and
//! SLI/SLO quality monitoring.
//!
//! Everything lives under one workspace root; see [`Workspace`] for the
//! layout. All state is plain JSON/NDJSON on disk, written atomically, so a
//! workspace can be inspected (and diffed) with ordinary tools.

pub mod contract;
pub mod cost;
pub mod error;
pub mod expr;
pub mod pipeline;
pub mod quality;
pub mod raw;
pub mod ratio;
pub mod records;
pub mod semantic;
pub mod storage;
pub mod transform;
pub mod validation;
pub mod value;
pub mod versioned;

pub use error::{Error, Result};

use std::path::{Path, PathBuf};

/// Root of an engine workspace and the canonical layout beneath it.
///
/// ```text
/// <root>/contracts/<name>/v<k>.json      contract registry
/// <root>/tables/<table>/                 versioned tables (manifest + segments)
/// <root>/quarantine/<batch>.ndjson       records rejected by hard rules
/// <root>/raw/<source>/<date>/            raw zone segments + _meta.ndjson
/// <root>/transforms/<template>.json      transformation templates
/// <root>/curated/<dataset>/v<k>/         curated dataset versions
/// <root>/semantic/metrics/<id>/v<k>.json metric definitions
/// <root>/quality/<dataset>/              SLI logs, SLO config, alerts
/// <root>/pipelines/<id>.json             pipeline specs
/// <root>/runs/<run_id>.json              run reports
/// <root>/bench/<timestamp>.json          benchmark reports
/// <root>/baseline/<table>/rows.ndjson    last-write-wins comparison tables
/// ```
#[derive(Clone, Debug)]
pub struct Workspace {
    root: PathBuf,
}

impl Workspace {
    /// Open (or designate) a workspace rooted at `root`. Directories are
    /// created lazily by the stores that need them.
    pub fn new(root: impl Into<PathBuf>) -> Self {
        Workspace { root: root.into() }
    }

    pub fn root(&self) -> &Path {
        &self.root
    }

    pub fn contracts_dir(&self) -> PathBuf {
        self.root.join("contracts")
    }

    pub fn tables_dir(&self) -> PathBuf {
        self.root.join("tables")
    }

    pub fn quarantine_dir(&self) -> PathBuf {
        self.root.join("quarantine")
    }

    pub fn raw_dir(&self) -> PathBuf {
        self.root.join("raw")
    }

    pub fn transforms_dir(&self) -> PathBuf {
        self.root.join("transforms")
    }

    pub fn curated_dir(&self) -> PathBuf {
        self.root.join("curated")
    }

    pub fn semantic_dir(&self) -> PathBuf {
        self.root.join("semantic")
    }

    pub fn quality_dir(&self) -> PathBuf {
        self.root.join("quality")
    }

    pub fn pipelines_dir(&self) -> PathBuf {
        self.root.join("pipelines")
    }

    pub fn runs_dir(&self) -> PathBuf {
        self.root.join("runs")
    }

    pub fn bench_dir(&self) -> PathBuf {
        self.root.join("bench")
    }

    pub fn baseline_dir(&self) -> PathBuf {
        self.root.join("baseline")
    }
}
