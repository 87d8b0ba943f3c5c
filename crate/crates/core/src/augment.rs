//! Retrieval-driven augmentation signals.
//!
//! Intra-table: sampled tuples query their own table's index; hits whose
//! self-normalized score reaches `theta_a` become unordered positive pairs.
//!
//! Inter-table: for every pair of indexed entity tables more than one schema
//! hop apart, each tuple of one table queries the other table's index (both
//! directions). The top-k scores of a table pair form one population, and
//! candidates scoring strictly above `mean + k_sigma * std` of that population
//! become directed edges from the retrieved tuple to the query tuple.

use std::collections::BTreeMap;
use std::fs;
use std::io::Write;
use std::path::Path;

use rand::seq::index::sample;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::documenter::{stable_hash, DocumentSet};
use crate::error::{Error, Result};
use crate::graph::{EdgeType, HeteroGraph, NodeRef};
use crate::index::TableIndex;
use crate::relational::TableRole;

pub const DEFAULT_THETA_A: f64 = 0.7;
pub const DEFAULT_K_SIGMA: f64 = 2.0;
pub const DEFAULT_TOP_K: usize = 20;
/// Tables above this many rows default to a 10% query sample.
pub const LARGE_TABLE_ROWS: usize = 100_000;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AtraPair {
    pub table: String,
    pub a: NodeRef,
    pub b: NodeRef,
    pub normalized_score: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EtraEdge {
    /// Retrieved tuple.
    pub src: NodeRef,
    /// Query tuple.
    pub dst: NodeRef,
    pub score: f64,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AtraParams {
    pub theta_a: f64,
    /// `None` picks 1.0, or 0.1 for tables above [`LARGE_TABLE_ROWS`].
    pub sample_rate: Option<f64>,
    pub top_k: usize,
    pub seed: u64,
}

impl Default for AtraParams {
    fn default() -> Self {
        AtraParams {
            theta_a: DEFAULT_THETA_A,
            sample_rate: None,
            top_k: DEFAULT_TOP_K,
            seed: 0,
        }
    }
}

impl AtraParams {
    pub fn validate(&self) -> Result<()> {
        if !(self.theta_a > 0.0 && self.theta_a <= 1.0) {
            return Err(Error::Config(format!("theta_a must be in (0, 1], got {}", self.theta_a)));
        }
        if let Some(r) = self.sample_rate {
            if !(r > 0.0 && r <= 1.0) {
                return Err(Error::Config(format!("sample_rate must be in (0, 1], got {r}")));
            }
        }
        if self.top_k == 0 {
            return Err(Error::Config("top_k must be at least 1".into()));
        }
        Ok(())
    }

    pub fn sample_rate_for(&self, rows: usize) -> f64 {
        self.sample_rate
            .unwrap_or(if rows > LARGE_TABLE_ROWS { 0.1 } else { 1.0 })
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EtraParams {
    pub k_sigma: f64,
    pub top_k: usize,
}

impl Default for EtraParams {
    fn default() -> Self {
        EtraParams {
            k_sigma: DEFAULT_K_SIGMA,
            top_k: DEFAULT_TOP_K,
        }
    }
}

impl EtraParams {
    pub fn validate(&self) -> Result<()> {
        if !(self.k_sigma >= 0.0 && self.k_sigma.is_finite()) {
            return Err(Error::Config(format!("k_sigma must be >= 0, got {}", self.k_sigma)));
        }
        if self.top_k == 0 {
            return Err(Error::Config("top_k must be at least 1".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct AtraOutcome {
    pub pairs: Vec<AtraPair>,
    /// Entity tables without an index.
    pub skipped_tables: Vec<String>,
}

/// Population statistics and the resulting cut-off for one table pair.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SigmaThreshold {
    pub mean: f64,
    pub std: f64,
    pub threshold: f64,
}

impl SigmaThreshold {
    /// Mean and population standard deviation of `scores`; `None` if empty.
    pub fn from_scores(scores: &[f64], k_sigma: f64) -> Option<SigmaThreshold> {
        if scores.is_empty() {
            return None;
        }
        let (lo, hi) = scores
            .iter()
            .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), &s| (lo.min(s), hi.max(s)));
        if lo == hi {
            return Some(SigmaThreshold {
                mean: lo,
                std: 0.0,
                threshold: lo,
            });
        }
        let n = scores.len() as f64;
        let mean = scores.iter().sum::<f64>() / n;
        let var = scores.iter().map(|s| (s - mean) * (s - mean)).sum::<f64>() / n;
        let std = var.sqrt();
        Some(SigmaThreshold {
            mean,
            std,
            threshold: mean + k_sigma * std,
        })
    }

    pub fn keeps(&self, score: f64) -> bool {
        score > self.threshold
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PairReport {
    pub table_a: String,
    pub table_b: String,
    pub candidates: usize,
    pub stats: Option<SigmaThreshold>,
    pub retained: usize,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct EtraOutcome {
    pub edges: Vec<EtraEdge>,
    pub pairs: Vec<PairReport>,
}

fn table_seed(seed: u64, table: &str) -> u64 {
    seed ^ stable_hash(&NodeRef::new(table, 0)).rotate_left(17)
}

fn indexed_entities<'a>(
    indices: &'a BTreeMap<String, TableIndex>,
    roles: &'a BTreeMap<String, TableRole>,
) -> (Vec<(&'a str, &'a TableIndex)>, Vec<String>) {
    let mut found = Vec::new();
    let mut missing = Vec::new();
    for (table, role) in roles {
        if *role != TableRole::Entity {
            continue;
        }
        match indices.get(table) {
            Some(idx) => found.push((table.as_str(), idx)),
            None => missing.push(table.clone()),
        }
    }
    (found, missing)
}

pub fn run_atra(
    indices: &BTreeMap<String, TableIndex>,
    docs: &DocumentSet,
    roles: &BTreeMap<String, TableRole>,
    params: &AtraParams,
) -> Result<AtraOutcome> {
    params.validate()?;
    let (tables, skipped_tables) = indexed_entities(indices, roles);
    for t in &skipped_tables {
        log::warn!("ATRA: entity table {t} has no index, skipping");
    }

    let mut pairs = Vec::new();
    for (table, idx) in tables {
        let table_docs = docs.table(table);
        let n = table_docs.len();
        if n == 0 {
            continue;
        }
        let k = ((params.sample_rate_for(n) * n as f64).ceil() as usize).clamp(1, n);
        let mut rng = ChaCha8Rng::seed_from_u64(table_seed(params.seed, table));
        let mut queries = sample(&mut rng, n, k).into_vec();
        queries.sort_unstable();

        let found: Vec<Vec<(NodeRef, NodeRef, f64)>> = queries
            .par_iter()
            .map(|&qi| {
                let query = &table_docs[qi];
                let hits = idx.retrieve(query, params.top_k);
                let hits = idx.normalize_by_self(query, &hits)?;
                Ok(hits
                    .into_iter()
                    .filter(|h| h.doc != query.root)
                    .filter_map(|h| {
                        let norm = h.normalized.expect("normalized");
                        (norm.min(1.0) >= params.theta_a).then(|| {
                            let (a, b) = if query.root < h.doc {
                                (query.root.clone(), h.doc)
                            } else {
                                (h.doc, query.root.clone())
                            };
                            (a, b, norm)
                        })
                    })
                    .collect())
            })
            .collect::<Result<_>>()?;

        let mut best: BTreeMap<(NodeRef, NodeRef), f64> = BTreeMap::new();
        for (a, b, s) in found.into_iter().flatten() {
            let e = best.entry((a, b)).or_insert(s);
            if s > *e {
                *e = s;
            }
        }
        pairs.extend(best.into_iter().map(|((a, b), s)| AtraPair {
            table: table.to_string(),
            a,
            b,
            normalized_score: s,
        }));
    }
    Ok(AtraOutcome {
        pairs,
        skipped_tables,
    })
}

/// Candidates of one direction: every tuple of `query_table` against `idx`.
fn cross_candidates(docs: &DocumentSet, query_table: &str, idx: &TableIndex, top_k: usize) -> Vec<EtraEdge> {
    docs.table(query_table)
        .par_iter()
        .map(|q| {
            idx.retrieve(q, top_k)
                .into_iter()
                .map(|h| EtraEdge {
                    src: h.doc,
                    dst: q.root.clone(),
                    score: h.score,
                })
                .collect::<Vec<_>>()
        })
        .flatten()
        .collect()
}

pub fn run_etra(
    indices: &BTreeMap<String, TableIndex>,
    docs: &DocumentSet,
    g: &HeteroGraph,
    roles: &BTreeMap<String, TableRole>,
    params: &EtraParams,
) -> Result<EtraOutcome> {
    params.validate()?;
    let (tables, _) = indexed_entities(indices, roles);
    let mut outcome = EtraOutcome::default();
    for (i, &(ta, idx_a)) in tables.iter().enumerate() {
        for &(tb, idx_b) in &tables[i + 1..] {
            match g.schema_distance(ta, tb)? {
                Some(d) if d > 1 => {}
                _ => continue,
            }
            let mut candidates = cross_candidates(docs, ta, idx_b, params.top_k);
            candidates.extend(cross_candidates(docs, tb, idx_a, params.top_k));
            let scores: Vec<f64> = candidates.iter().map(|c| c.score).collect();
            let stats = SigmaThreshold::from_scores(&scores, params.k_sigma);
            let mut report = PairReport {
                table_a: ta.to_string(),
                table_b: tb.to_string(),
                candidates: candidates.len(),
                stats,
                retained: 0,
            };
            match stats {
                None => log::warn!("ETRA: no candidates between {ta} and {tb}, skipping"),
                Some(th) => {
                    let before = outcome.edges.len();
                    outcome
                        .edges
                        .extend(candidates.into_iter().filter(|c| th.keeps(c.score)));
                    report.retained = outcome.edges.len() - before;
                }
            }
            outcome.pairs.push(report);
        }
    }
    outcome
        .edges
        .sort_by(|x, y| (&x.src, &x.dst).cmp(&(&y.src, &y.dst)));
    outcome.edges.dedup_by(|x, y| x.src == y.src && x.dst == y.dst);
    Ok(outcome)
}

/// The schema graph plus one augmented edge type per (src table, dst table).
pub fn augment_graph(g: &HeteroGraph, edges: &[EtraEdge]) -> Result<HeteroGraph> {
    let mut grouped: BTreeMap<(String, String), Vec<(NodeRef, NodeRef)>> = BTreeMap::new();
    for e in edges {
        grouped
            .entry((e.src.table.clone(), e.dst.table.clone()))
            .or_default()
            .push((e.src.clone(), e.dst.clone()));
    }
    let mut out = g.clone();
    for ((src, dst), list) in grouped {
        out = out.add_edges(&EdgeType::Augmented { src, dst }, &list)?;
    }
    Ok(out)
}

/// Every knob that shaped a set of signals.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SignalConfig {
    pub theta_a: f64,
    pub k_sigma: f64,
    pub top_k: usize,
    pub sample_rate: Option<f64>,
    pub seed: u64,
    pub k1: f64,
    pub b: f64,
    pub alpha: f64,
    pub total_steps: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct AugmentationSignals {
    pub atra_pairs: Vec<AtraPair>,
    pub etra_edges: Vec<EtraEdge>,
    pub config: SignalConfig,
}

const ATRA_HEADER: &str = "table\trow_a\trow_b\tnormalized_score";
const ETRA_HEADER: &str = "src_table\tsrc_id\tdst_table\tdst_id\tscore";

fn write_lines(path: &Path, header: &str, lines: impl Iterator<Item = String>) -> Result<()> {
    let file = fs::File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = std::io::BufWriter::new(file);
    let run = || -> std::io::Result<()> {
        writeln!(w, "{header}")?;
        for line in lines {
            writeln!(w, "{line}")?;
        }
        w.flush()
    };
    run().map_err(|e| Error::io(path, e))
}

pub fn write_atra_pairs(pairs: &[AtraPair], path: &Path) -> Result<()> {
    let mut sorted: Vec<&AtraPair> = pairs.iter().collect();
    sorted.sort_by(|x, y| (&x.table, &x.a, &x.b).cmp(&(&y.table, &y.a, &y.b)));
    write_lines(
        path,
        ATRA_HEADER,
        sorted
            .into_iter()
            .map(|p| format!("{}\t{}\t{}\t{}", p.table, p.a.row_id, p.b.row_id, p.normalized_score)),
    )
}

pub fn write_etra_edges(edges: &[EtraEdge], path: &Path) -> Result<()> {
    let mut sorted: Vec<&EtraEdge> = edges.iter().collect();
    sorted.sort_by(|x, y| (&x.src, &x.dst).cmp(&(&y.src, &y.dst)));
    write_lines(
        path,
        ETRA_HEADER,
        sorted.into_iter().map(|e| {
            format!(
                "{}\t{}\t{}\t{}\t{}",
                e.src.table, e.src.row_id, e.dst.table, e.dst.row_id, e.score
            )
        }),
    )
}

fn read_rows(path: &Path, header: &str, width: usize) -> Result<Vec<Vec<String>>> {
    let raw = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let mut lines = raw.lines();
    if lines.next() != Some(header) {
        return Err(Error::format(path.display().to_string(), "missing or wrong header"));
    }
    lines
        .enumerate()
        .map(|(i, line)| {
            let fields: Vec<String> = line.split('\t').map(str::to_string).collect();
            if fields.len() != width {
                return Err(Error::format(
                    path.display().to_string(),
                    format!("line {} has {} fields, expected {width}", i + 2, fields.len()),
                ));
            }
            Ok(fields)
        })
        .collect()
}

fn parse_field<T: std::str::FromStr>(path: &Path, field: &str) -> Result<T> {
    field
        .parse()
        .map_err(|_| Error::format(path.display().to_string(), format!("bad field {field:?}")))
}

pub fn read_atra_pairs(path: &Path) -> Result<Vec<AtraPair>> {
    read_rows(path, ATRA_HEADER, 4)?
        .into_iter()
        .map(|f| {
            Ok(AtraPair {
                a: NodeRef::new(f[0].clone(), parse_field(path, &f[1])?),
                b: NodeRef::new(f[0].clone(), parse_field(path, &f[2])?),
                normalized_score: parse_field(path, &f[3])?,
                table: f[0].clone(),
            })
        })
        .collect()
}

pub fn read_etra_edges(path: &Path) -> Result<Vec<EtraEdge>> {
    read_rows(path, ETRA_HEADER, 5)?
        .into_iter()
        .map(|f| {
            Ok(EtraEdge {
                src: NodeRef::new(f[0].clone(), parse_field(path, &f[1])?),
                dst: NodeRef::new(f[2].clone(), parse_field(path, &f[3])?),
                score: parse_field(path, &f[4])?,
            })
        })
        .collect()
}

pub fn write_signal_config(config: &SignalConfig, path: &Path) -> Result<()> {
    let body = serde_json::to_string_pretty(config).map_err(|e| Error::json(path, e))?;
    fs::write(path, body + "\n").map_err(|e| Error::io(path, e))
}

/// Write `atra_pairs.tsv`, `etra_edges.tsv` and `config.json` into `out_dir`.
pub fn emit_signals(signals: &AugmentationSignals, out_dir: &Path) -> Result<()> {
    fs::create_dir_all(out_dir).map_err(|e| Error::io(out_dir, e))?;
    write_atra_pairs(&signals.atra_pairs, &out_dir.join("atra_pairs.tsv"))?;
    write_etra_edges(&signals.etra_edges, &out_dir.join("etra_edges.tsv"))?;
    write_signal_config(&signals.config, &out_dir.join("config.json"))
}

pub fn read_signals(dir: &Path) -> Result<AugmentationSignals> {
    let path = dir.join("config.json");
    let raw = fs::read_to_string(&path).map_err(|e| Error::io(&path, e))?;
    Ok(AugmentationSignals {
        atra_pairs: read_atra_pairs(&dir.join("atra_pairs.tsv"))?,
        etra_edges: read_etra_edges(&dir.join("etra_edges.tsv"))?,
        config: serde_json::from_str(&raw).map_err(|e| Error::json(&path, e))?,
    })
}
