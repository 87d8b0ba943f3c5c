//! Graph-aware tuple documents.
//!
//! A document is the bag of terms of every node a random walk with restart
//! visits from the root tuple, each node's terms weighted by its visit count.
//! Nearby tuples are visited more often, so they dominate the document.

use std::collections::BTreeMap;
use std::fs;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::graph::{HeteroGraph, NodeId, NodeRef, Relation};
use crate::relational::Database;
use crate::tokenizer::{Term, Tokenizer};

pub const DEFAULT_ALPHA: f64 = 0.15;
pub const DEFAULT_STEPS: usize = 2000;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RwrConfig {
    /// Restart probability, in (0, 1].
    pub alpha: f64,
    /// Walk steps per root, S >= 1.
    pub total_steps: usize,
    pub seed: u64,
}

impl Default for RwrConfig {
    fn default() -> Self {
        RwrConfig {
            alpha: DEFAULT_ALPHA,
            total_steps: DEFAULT_STEPS,
            seed: 0,
        }
    }
}

impl RwrConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.alpha > 0.0 && self.alpha <= 1.0) {
            return Err(Error::Config(format!("alpha must be in (0, 1], got {}", self.alpha)));
        }
        if self.total_steps == 0 {
            return Err(Error::Config("total_steps must be at least 1".into()));
        }
        Ok(())
    }

    /// Seed of the walk rooted at `root`: the global seed mixed with a
    /// stable hash of the node identity.
    pub fn root_seed(&self, root: &NodeRef) -> u64 {
        self.seed ^ stable_hash(root)
    }
}

/// FNV-1a over the table name and row id; stable across runs and platforms.
pub fn stable_hash(node: &NodeRef) -> u64 {
    const OFFSET: u64 = 0xcbf2_9ce4_8422_2325;
    const PRIME: u64 = 0x0000_0100_0000_01b3;
    node.table
        .as_bytes()
        .iter()
        .chain(&[0xff])
        .chain(&(node.row_id as u64).to_le_bytes())
        .fold(OFFSET, |h, &b| (h ^ u64::from(b)).wrapping_mul(PRIME))
}

/// Visit counts of a walk of `steps` steps from `root`, including one initial
/// visit to the root. Nodes without out-neighbours always restart.
pub fn walk_with_restart<R: Rng>(
    g: &HeteroGraph,
    root: NodeId,
    alpha: f64,
    steps: usize,
    rng: &mut R,
) -> BTreeMap<NodeId, u64> {
    let mut visits = BTreeMap::new();
    visits.insert(root, 1);
    let mut current = root;
    for _ in 0..steps {
        let neighbors = g.out_neighbors(current, Relation::All);
        current = if neighbors.is_empty() || rng.gen::<f64>() < alpha {
            root
        } else {
            neighbors[rng.gen_range(0..neighbors.len())]
        };
        *visits.entry(current).or_insert(0) += 1;
    }
    visits
}

pub fn rwr_visits(g: &HeteroGraph, root: &NodeRef, cfg: &RwrConfig) -> Result<BTreeMap<NodeRef, u64>> {
    cfg.validate()?;
    let id = g
        .node_id(root)
        .ok_or_else(|| Error::NotFound(format!("node {root}")))?;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.root_seed(root));
    Ok(walk_with_restart(g, id, cfg.alpha, cfg.total_steps, &mut rng)
        .into_iter()
        .map(|(v, c)| (g.node_ref(v), c))
        .collect())
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TupleDocument {
    #[serde(flatten)]
    pub root: NodeRef,
    pub length: u64,
    #[serde(rename = "terms")]
    pub term_counts: BTreeMap<Term, u64>,
}

impl TupleDocument {
    /// Drops zero counts; fails when nothing remains.
    pub fn new(root: NodeRef, mut term_counts: BTreeMap<Term, u64>) -> Result<Self> {
        term_counts.retain(|_, c| *c > 0);
        if term_counts.is_empty() {
            return Err(Error::EmptyDocument {
                table: root.table,
                row_id: root.row_id,
            });
        }
        let length = term_counts.values().sum();
        Ok(TupleDocument {
            root,
            length,
            term_counts,
        })
    }

    pub fn count(&self, term: &Term) -> u64 {
        self.term_counts.get(term).copied().unwrap_or(0)
    }

    fn check(&self) -> Result<()> {
        let sum: u64 = self.term_counts.values().sum();
        if sum != self.length || self.term_counts.values().any(|&c| c == 0) || sum == 0 {
            return Err(Error::format(
                "document",
                format!("{} has inconsistent term counts", self.root),
            ));
        }
        Ok(())
    }
}

/// Terms of every node of a graph, indexed by node id.
#[derive(Debug, Clone, PartialEq)]
pub struct NodeTerms(Vec<Vec<Term>>);

impl NodeTerms {
    pub fn compute(g: &HeteroGraph, db: &Database, tok: &Tokenizer) -> NodeTerms {
        NodeTerms(
            (0..g.node_count())
                .into_par_iter()
                .map(|id| {
                    let node = g.node_ref(id);
                    let table = &db.tables[&node.table];
                    let tuple = table.row(node.row_id).expect("graph built from this database");
                    tok.tokenize_tuple(table, tuple)
                })
                .collect(),
        )
    }

    pub fn get(&self, id: NodeId) -> &[Term] {
        &self.0[id]
    }
}

fn document_from_visits(
    root: NodeRef,
    visits: &BTreeMap<NodeId, u64>,
    terms_of: impl Fn(NodeId) -> Vec<Term>,
) -> Result<TupleDocument> {
    let mut counts: BTreeMap<Term, u64> = BTreeMap::new();
    for (&node, &c) in visits {
        for term in terms_of(node) {
            *counts.entry(term).or_insert(0) += c;
        }
    }
    TupleDocument::new(root, counts)
}

/// Document of one root tuple, tokenizing visited tuples on the fly.
pub fn build_document(
    g: &HeteroGraph,
    db: &Database,
    root: &NodeRef,
    cfg: &RwrConfig,
    tok: &Tokenizer,
) -> Result<TupleDocument> {
    let visits = rwr_visits(g, root, cfg)?;
    let by_id: BTreeMap<NodeId, u64> = visits
        .iter()
        .map(|(n, &c)| (g.node_id(n).expect("visited node resolves"), c))
        .collect();
    document_from_visits(root.clone(), &by_id, |id| {
        let node = g.node_ref(id);
        let table = &db.tables[&node.table];
        tok.tokenize_tuple(table, table.row(node.row_id).expect("node resolves"))
    })
}

/// Documents grouped by table, each list sorted by row id.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct DocumentSet {
    pub by_table: BTreeMap<String, Vec<TupleDocument>>,
    /// Roots whose documents came out empty.
    pub skipped: Vec<NodeRef>,
}

impl DocumentSet {
    /// Documents for every tuple of `tables`, walking in parallel with a
    /// private RNG per root; output does not depend on the thread count.
    pub fn build(
        g: &HeteroGraph,
        node_terms: &NodeTerms,
        tables: &[String],
        cfg: &RwrConfig,
    ) -> Result<DocumentSet> {
        cfg.validate()?;
        let mut set = DocumentSet::default();
        for table in tables {
            let range = g.table_nodes(table)?;
            let results: Vec<Result<TupleDocument>> = range
                .into_par_iter()
                .map(|id| {
                    let root = g.node_ref(id);
                    let mut rng = ChaCha8Rng::seed_from_u64(cfg.root_seed(&root));
                    let visits = walk_with_restart(g, id, cfg.alpha, cfg.total_steps, &mut rng);
                    document_from_visits(root, &visits, |v| node_terms.get(v).to_vec())
                })
                .collect();
            let mut docs = Vec::with_capacity(results.len());
            for r in results {
                match r {
                    Ok(doc) => docs.push(doc),
                    Err(Error::EmptyDocument { table, row_id }) => {
                        log::warn!("skipping empty document for {table}#{row_id}");
                        set.skipped.push(NodeRef::new(table, row_id));
                    }
                    Err(e) => return Err(e),
                }
            }
            set.by_table.insert(table.clone(), docs);
        }
        Ok(set)
    }

    pub fn table(&self, table: &str) -> &[TupleDocument] {
        self.by_table.get(table).map_or(&[], Vec::as_slice)
    }

    pub fn get(&self, node: &NodeRef) -> Option<&TupleDocument> {
        let docs = self.by_table.get(&node.table)?;
        docs.binary_search_by_key(&node.row_id, |d| d.root.row_id)
            .ok()
            .map(|i| &docs[i])
    }

    pub fn len(&self) -> usize {
        self.by_table.values().map(Vec::len).sum()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// One JSON object per line, sorted by (table, row_id).
    pub fn write_jsonl(&self, path: &Path) -> Result<()> {
        let file = fs::File::create(path).map_err(|e| Error::io(path, e))?;
        let mut w = BufWriter::new(file);
        for doc in self.by_table.values().flatten() {
            let line = serde_json::to_string(doc).map_err(|e| Error::json(path, e))?;
            writeln!(w, "{line}").map_err(|e| Error::io(path, e))?;
        }
        w.flush().map_err(|e| Error::io(path, e))
    }

    pub fn read_jsonl(path: &Path) -> Result<DocumentSet> {
        let file = fs::File::open(path).map_err(|e| Error::io(path, e))?;
        let mut set = DocumentSet::default();
        for line in BufReader::new(file).lines() {
            let line = line.map_err(|e| Error::io(path, e))?;
            if line.trim().is_empty() {
                continue;
            }
            let doc: TupleDocument = serde_json::from_str(&line).map_err(|e| Error::json(path, e))?;
            for term in doc.term_counts.keys() {
                Term::parse(term.as_str())?;
            }
            doc.check()?;
            set.by_table.entry(doc.root.table.clone()).or_default().push(doc);
        }
        for docs in set.by_table.values_mut() {
            docs.sort_by_key(|d| d.root.row_id);
        }
        Ok(set)
    }
}
