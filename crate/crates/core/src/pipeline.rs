//! End-to-end stages over one output directory. Each stage reads what the
//! earlier stages left in `out_dir` and fails with
//! [`Error::MissingStage`] when that is absent.
//!
//! ```text
//! out_dir/
//!   database/tables.json
//!   graph/            nodes.tsv, edges_<type>.tsv
//!   documents/        documents.jsonl, bin_plans.json
//!   index/<table>/    terms.dict, postings.bin, meta.json
//!   signals/          atra_pairs.tsv, etra_edges.tsv, etra_pairs.json, config.json
//!   graph_augmented/  nodes.tsv, edges_<type>.tsv
//!   metrics/          metrics.json, cohort_ratios.csv, {before,after}/path_dist_<a>_<b>.csv
//!   export/           trainer bundle
//! ```

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::analytics::{self, CohortRule, GraphProfile};
use crate::augment::{
    self, AtraParams, EtraParams, SignalConfig, DEFAULT_K_SIGMA, DEFAULT_THETA_A, DEFAULT_TOP_K,
};
use crate::documenter::{DocumentSet, NodeTerms, RwrConfig, DEFAULT_ALPHA, DEFAULT_STEPS};
use crate::error::{Error, Result};
use crate::graph::HeteroGraph;
use crate::index::{self, Bm25Params, TableIndex, DEFAULT_B, DEFAULT_K1};
use crate::relational::{Database, TableRole};
use crate::tokenizer::{StopWords, TfIdfExtractor, Tokenizer, DEFAULT_KEYWORDS_PER_TEXT};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PipelineConfig {
    pub manifest: Option<PathBuf>,
    /// Directory holding the table CSVs; defaults to the manifest's directory.
    pub data_dir: Option<PathBuf>,
    pub out_dir: PathBuf,
    pub alpha: f64,
    pub total_steps: usize,
    pub k1: f64,
    pub b: f64,
    pub theta_a: f64,
    pub k_sigma: f64,
    pub top_k: usize,
    pub sample_rate: Option<f64>,
    pub seed: u64,
    /// Worker threads; `None` uses every core.
    pub threads: Option<usize>,
    pub keywords_per_text: usize,
    pub stopwords: Option<PathBuf>,
    /// JSON array of cohort rules evaluated over the ATRA pairs.
    pub cohort_rules: Option<PathBuf>,
    /// Table pairs for path distributions; empty means every pair of entity
    /// tables that are not directly linked.
    pub path_pairs: Vec<(String, String)>,
    pub path_samples: usize,
    pub profile_sources: usize,
    /// Snapshot time in epoch seconds.
    pub as_of: Option<i64>,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        PipelineConfig {
            manifest: None,
            data_dir: None,
            out_dir: PathBuf::from("out"),
            alpha: DEFAULT_ALPHA,
            total_steps: DEFAULT_STEPS,
            k1: DEFAULT_K1,
            b: DEFAULT_B,
            theta_a: DEFAULT_THETA_A,
            k_sigma: DEFAULT_K_SIGMA,
            top_k: DEFAULT_TOP_K,
            sample_rate: None,
            seed: 0,
            threads: None,
            keywords_per_text: DEFAULT_KEYWORDS_PER_TEXT,
            stopwords: None,
            cohort_rules: None,
            path_pairs: Vec::new(),
            path_samples: analytics::DEFAULT_PATH_SAMPLES,
            profile_sources: analytics::DEFAULT_PROFILE_SOURCES,
            as_of: None,
        }
    }
}

impl PipelineConfig {
    pub fn from_file(path: &Path) -> Result<PipelineConfig> {
        let raw = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        serde_json::from_str(&raw).map_err(|e| Error::json(path, e))
    }

    pub fn validate(&self) -> Result<()> {
        self.rwr().validate()?;
        self.bm25().validate()?;
        self.atra().validate()?;
        self.etra().validate()?;
        if self.keywords_per_text == 0 {
            return Err(Error::Config("keywords_per_text must be at least 1".into()));
        }
        if self.threads == Some(0) {
            return Err(Error::Config("threads must be at least 1".into()));
        }
        if self.path_samples == 0 || self.profile_sources == 0 {
            return Err(Error::Config("path_samples and profile_sources must be at least 1".into()));
        }
        Ok(())
    }

    pub fn rwr(&self) -> RwrConfig {
        RwrConfig {
            alpha: self.alpha,
            total_steps: self.total_steps,
            seed: self.seed,
        }
    }

    pub fn bm25(&self) -> Bm25Params {
        Bm25Params { k1: self.k1, b: self.b }
    }

    pub fn atra(&self) -> AtraParams {
        AtraParams {
            theta_a: self.theta_a,
            sample_rate: self.sample_rate,
            top_k: self.top_k,
            seed: self.seed,
        }
    }

    pub fn etra(&self) -> EtraParams {
        EtraParams {
            k_sigma: self.k_sigma,
            top_k: self.top_k,
        }
    }

    pub fn signal_config(&self) -> SignalConfig {
        SignalConfig {
            theta_a: self.theta_a,
            k_sigma: self.k_sigma,
            top_k: self.top_k,
            sample_rate: self.sample_rate,
            seed: self.seed,
            k1: self.k1,
            b: self.b,
            alpha: self.alpha,
            total_steps: self.total_steps,
        }
    }

    fn out(&self, rel: &str) -> PathBuf {
        self.out_dir.join(rel)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Stage {
    Ingest,
    Graph,
    Document,
    Index,
    Atra,
    Etra,
    AugmentGraph,
    Metrics { before: bool, after: bool },
    Export,
    All,
}

impl Stage {
    pub fn name(&self) -> &'static str {
        match self {
            Stage::Ingest => "ingest",
            Stage::Graph => "graph",
            Stage::Document => "document",
            Stage::Index => "index",
            Stage::Atra => "atra",
            Stage::Etra => "etra",
            Stage::AugmentGraph => "augment-graph",
            Stage::Metrics { .. } => "metrics",
            Stage::Export => "export",
            Stage::All => "all",
        }
    }
}

/// Validate `cfg` and run one stage inside a thread pool capped at
/// `cfg.threads`.
pub fn run(stage: Stage, cfg: &PipelineConfig) -> Result<()> {
    cfg.validate()?;
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(cfg.threads.unwrap_or(0))
        .build()
        .map_err(|e| Error::Config(format!("cannot start thread pool: {e}")))?;
    pool.install(|| run_in_pool(stage, cfg))
}

fn run_in_pool(stage: Stage, cfg: &PipelineConfig) -> Result<()> {
    log::info!("stage {}", stage.name());
    match stage {
        Stage::Ingest => ingest(cfg),
        Stage::Graph => graph(cfg),
        Stage::Document => document(cfg),
        Stage::Index => build_indices(cfg),
        Stage::Atra => atra(cfg),
        Stage::Etra => etra(cfg),
        Stage::AugmentGraph => augment_graph(cfg),
        Stage::Metrics { before, after } => metrics(cfg, before, after),
        Stage::Export => export(cfg),
        Stage::All => {
            for s in [
                Stage::Ingest,
                Stage::Graph,
                Stage::Document,
                Stage::Index,
                Stage::Atra,
                Stage::Etra,
                Stage::AugmentGraph,
                Stage::Metrics { before: true, after: true },
                Stage::Export,
            ] {
                run_in_pool(s, cfg)?;
            }
            Ok(())
        }
    }
}

fn require(stage: &str, path: PathBuf) -> Result<PathBuf> {
    if path.exists() {
        Ok(path)
    } else {
        Err(Error::MissingStage {
            stage: stage.to_string(),
            missing: path,
        })
    }
}

/// Remove a stage's previous output directory and recreate it empty.
fn fresh_dir(path: &Path) -> Result<()> {
    if path.exists() {
        fs::remove_dir_all(path).map_err(|e| Error::io(path, e))?;
    }
    fs::create_dir_all(path).map_err(|e| Error::io(path, e))
}

fn write_json<T: Serialize>(value: &T, path: &Path) -> Result<()> {
    let body = serde_json::to_string_pretty(value).map_err(|e| Error::json(path, e))?;
    fs::write(path, body + "\n").map_err(|e| Error::io(path, e))
}

fn read_json<T: serde::de::DeserializeOwned>(path: &Path) -> Result<T> {
    let raw = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    serde_json::from_str(&raw).map_err(|e| Error::json(path, e))
}

#[derive(Debug, Serialize, Deserialize)]
struct TableInfo {
    role: TableRole,
    rows: usize,
}

/// The input database, snapshotted at `as_of` when set.
pub fn load_database(cfg: &PipelineConfig) -> Result<Database> {
    let manifest = cfg
        .manifest
        .as_ref()
        .ok_or_else(|| Error::Config("no manifest given".into()))?;
    let data_dir = match &cfg.data_dir {
        Some(d) => d.clone(),
        None => manifest.parent().map(Path::to_path_buf).unwrap_or_default(),
    };
    let db = Database::ingest(manifest, &data_dir)?;
    Ok(match cfg.as_of {
        Some(t) => db.snapshot(t),
        None => db,
    })
}

fn roles(cfg: &PipelineConfig) -> Result<BTreeMap<String, TableRole>> {
    let path = require("ingest", cfg.out("database/tables.json"))?;
    let info: BTreeMap<String, TableInfo> = read_json(&path)?;
    Ok(info.into_iter().map(|(t, i)| (t, i.role)).collect())
}

fn entity_tables(roles: &BTreeMap<String, TableRole>) -> Vec<String> {
    roles
        .iter()
        .filter(|(_, r)| **r == TableRole::Entity)
        .map(|(t, _)| t.clone())
        .collect()
}

fn schema_graph(cfg: &PipelineConfig) -> Result<(Database, HeteroGraph)> {
    require("ingest", cfg.out("database/tables.json"))?;
    let db = load_database(cfg)?;
    let g = HeteroGraph::build(&db);
    Ok((db, g))
}

fn load_documents(cfg: &PipelineConfig) -> Result<DocumentSet> {
    DocumentSet::read_jsonl(&require("document", cfg.out("documents/documents.jsonl"))?)
}

fn load_indices(cfg: &PipelineConfig, roles: &BTreeMap<String, TableRole>) -> Result<BTreeMap<String, TableIndex>> {
    let dir = require("index", cfg.out("index"))?;
    let mut out = BTreeMap::new();
    for table in entity_tables(roles) {
        let path = dir.join(&table);
        if path.join("meta.json").exists() {
            out.insert(table, index::load_index(&path)?);
        }
    }
    Ok(out)
}

fn ingest(cfg: &PipelineConfig) -> Result<()> {
    let db = load_database(cfg)?;
    let roles = index::classify_tables(&db);
    let info: BTreeMap<&String, TableInfo> = db
        .tables
        .iter()
        .map(|(name, t)| {
            (
                name,
                TableInfo {
                    role: roles[name],
                    rows: t.len(),
                },
            )
        })
        .collect();
    let dir = cfg.out("database");
    fresh_dir(&dir)?;
    write_json(&info, &dir.join("tables.json"))
}

fn graph(cfg: &PipelineConfig) -> Result<()> {
    let (_, g) = schema_graph(cfg)?;
    let dir = cfg.out("graph");
    fresh_dir(&dir)?;
    g.export_tsv(&dir)
}

fn document(cfg: &PipelineConfig) -> Result<()> {
    require("graph", cfg.out("graph/nodes.tsv"))?;
    let (db, g) = schema_graph(cfg)?;
    let stopwords = match &cfg.stopwords {
        Some(p) => StopWords::from_file(p)?,
        None => StopWords::default(),
    };
    let extractor = Arc::new(TfIdfExtractor::new(stopwords.clone()));
    let tok = Tokenizer::fit_with_stopwords(&db, extractor, cfg.keywords_per_text, &stopwords);
    let node_terms = NodeTerms::compute(&g, &db, &tok);
    let tables = entity_tables(&roles(cfg)?);
    let docs = DocumentSet::build(&g, &node_terms, &tables, &cfg.rwr())?;

    let dir = cfg.out("documents");
    fresh_dir(&dir)?;
    docs.write_jsonl(&dir.join("documents.jsonl"))?;
    tok.write_bin_plans(&dir.join("bin_plans.json"))
}

fn build_indices(cfg: &PipelineConfig) -> Result<()> {
    let docs = load_documents(cfg)?;
    let dir = cfg.out("index");
    fresh_dir(&dir)?;
    for (table, list) in &docs.by_table {
        if list.is_empty() {
            log::warn!("no documents for {table}, not indexing it");
            continue;
        }
        let idx = TableIndex::build(list, cfg.bm25())?;
        index::save_index(&idx, &dir.join(table))?;
    }
    Ok(())
}

fn signals_dir(cfg: &PipelineConfig) -> Result<PathBuf> {
    let dir = cfg.out("signals");
    fs::create_dir_all(&dir).map_err(|e| Error::io(&dir, e))?;
    augment::write_signal_config(&cfg.signal_config(), &dir.join("config.json"))?;
    Ok(dir)
}

fn atra(cfg: &PipelineConfig) -> Result<()> {
    let roles = roles(cfg)?;
    let indices = load_indices(cfg, &roles)?;
    let docs = load_documents(cfg)?;
    let outcome = augment::run_atra(&indices, &docs, &roles, &cfg.atra())?;
    let dir = signals_dir(cfg)?;
    augment::write_atra_pairs(&outcome.pairs, &dir.join("atra_pairs.tsv"))
}

fn etra(cfg: &PipelineConfig) -> Result<()> {
    let roles = roles(cfg)?;
    let indices = load_indices(cfg, &roles)?;
    let docs = load_documents(cfg)?;
    let (_, g) = schema_graph(cfg)?;
    let outcome = augment::run_etra(&indices, &docs, &g, &roles, &cfg.etra())?;
    let dir = signals_dir(cfg)?;
    augment::write_etra_edges(&outcome.edges, &dir.join("etra_edges.tsv"))?;
    write_json(&outcome.pairs, &dir.join("etra_pairs.json"))
}

fn augmented_graph(cfg: &PipelineConfig) -> Result<HeteroGraph> {
    let edges = augment::read_etra_edges(&require("etra", cfg.out("signals/etra_edges.tsv"))?)?;
    let (_, g) = schema_graph(cfg)?;
    augment::augment_graph(&g, &edges)
}

fn augment_graph(cfg: &PipelineConfig) -> Result<()> {
    let g = augmented_graph(cfg)?;
    let dir = cfg.out("graph_augmented");
    fresh_dir(&dir)?;
    g.export_tsv(&dir)
}

fn path_pairs(cfg: &PipelineConfig, g: &HeteroGraph, roles: &BTreeMap<String, TableRole>) -> Result<Vec<(String, String)>> {
    if !cfg.path_pairs.is_empty() {
        return Ok(cfg.path_pairs.clone());
    }
    let tables = entity_tables(roles);
    let mut out = Vec::new();
    for (i, a) in tables.iter().enumerate() {
        for b in &tables[i + 1..] {
            if matches!(g.schema_distance(a, b)?, Some(d) if d > 1) {
                out.push((a.clone(), b.clone()));
            }
        }
    }
    Ok(out)
}

fn measure(
    cfg: &PipelineConfig,
    g: &HeteroGraph,
    pairs: &[(String, String)],
    dir: &Path,
) -> Result<GraphProfile> {
    fresh_dir(dir)?;
    for (a, b) in pairs {
        let dist = analytics::path_distribution(g, a, b, cfg.path_samples, cfg.seed)?;
        analytics::write_path_distribution(&dist, &dir.join(format!("path_dist_{a}_{b}.csv")))?;
    }
    analytics::profile(g, true, cfg.profile_sources, cfg.seed)
}

fn metrics(cfg: &PipelineConfig, before: bool, after: bool) -> Result<()> {
    if !before && !after {
        return Err(Error::Config("metrics needs --before, --after or both".into()));
    }
    let roles = roles(cfg)?;
    let dir = cfg.out("metrics");
    fs::create_dir_all(&dir).map_err(|e| Error::io(&dir, e))?;

    let (db, schema) = schema_graph(cfg)?;
    let pairs = path_pairs(cfg, &schema, &roles)?;
    let before_profile = if before {
        require("graph", cfg.out("graph/nodes.tsv"))?;
        Some(measure(cfg, &schema, &pairs, &dir.join("before"))?)
    } else {
        None
    };
    let after_profile = if after {
        require("augment-graph", cfg.out("graph_augmented/nodes.tsv"))?;
        let g = augmented_graph(cfg)?;
        Some(measure(cfg, &g, &pairs, &dir.join("after"))?)
    } else {
        None
    };
    analytics::write_metrics(&dir.join("metrics.json"), before_profile.as_ref(), after_profile.as_ref())?;

    if let Some(rules_path) = &cfg.cohort_rules {
        let rules = CohortRule::load_all(rules_path)?;
        let pairs = augment::read_atra_pairs(&require("atra", cfg.out("signals/atra_pairs.tsv"))?)?;
        let mut rows = Vec::new();
        for rule in rules {
            let own: Vec<_> = pairs.iter().filter(|p| p.table == rule.table).cloned().collect();
            match analytics::cohort_ratio(&own, &db, &rule) {
                Ok(r) => rows.push((rule, r)),
                Err(Error::NoData(msg)) => log::warn!("cohort rule {}: {msg}", rule.label()),
                Err(e) => return Err(e),
            }
        }
        analytics::write_cohort_ratios(&rows, &dir.join("cohort_ratios.csv"))?;
    }
    Ok(())
}

fn copy(from: &Path, to: &Path) -> Result<()> {
    fs::copy(from, to).map(|_| ()).map_err(|e| Error::io(from, e))
}

/// Gather what the model trainer consumes into `export/`.
fn export(cfg: &PipelineConfig) -> Result<()> {
    let graph_dir = require("augment-graph", cfg.out("graph_augmented"))?;
    let atra = require("atra", cfg.out("signals/atra_pairs.tsv"))?;
    let docs = require("document", cfg.out("documents/documents.jsonl"))?;
    let tables = require("ingest", cfg.out("database/tables.json"))?;
    let dir = cfg.out("export");
    fresh_dir(&dir)?;

    let mut graph_files: Vec<PathBuf> = fs::read_dir(&graph_dir)
        .map_err(|e| Error::io(&graph_dir, e))?
        .map(|e| e.map(|e| e.path()).map_err(|e| Error::io(&graph_dir, e)))
        .collect::<Result<_>>()?;
    graph_files.sort();
    for f in graph_files {
        copy(&f, &dir.join(f.file_name().expect("directory entry has a name")))?;
    }
    copy(&atra, &dir.join("atra_pairs.tsv"))?;
    copy(&docs, &dir.join("documents.jsonl"))?;
    copy(&tables, &dir.join("tables.json"))?;
    copy(&cfg.out("documents/bin_plans.json"), &dir.join("bin_plans.json"))?;
    copy(&cfg.out("signals/config.json"), &dir.join("config.json"))
}
