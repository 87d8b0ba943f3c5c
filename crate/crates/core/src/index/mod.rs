//! Per-table inverted index with BM25 ranking.
//!
//! Scores use the smoothed, non-negative IDF `ln((N - n + 0.5) / (n + 0.5) + 1)`
//! and sum over the *distinct* terms of the query; query term counts are not
//! used. Query and document terms are combined in sorted term order both in
//! [`TableIndex::bm25_score`] and in [`TableIndex::retrieve`], so the two
//! produce bit-identical scores for the same document.

mod storage;

use std::collections::{BTreeMap, HashSet};

use serde::{Deserialize, Serialize};

use crate::documenter::TupleDocument;
use crate::error::{Error, Result};
use crate::graph::NodeRef;
use crate::relational::{Database, TableRole};
use crate::tokenizer::Term;

pub use storage::{load_index, save_index};

pub const DEFAULT_K1: f64 = 1.2;
pub const DEFAULT_B: f64 = 0.75;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Bm25Params {
    pub k1: f64,
    pub b: f64,
}

impl Default for Bm25Params {
    fn default() -> Self {
        Bm25Params {
            k1: DEFAULT_K1,
            b: DEFAULT_B,
        }
    }
}

impl Bm25Params {
    pub fn validate(&self) -> Result<()> {
        if !(self.k1 > 0.0 && self.k1.is_finite()) {
            return Err(Error::Config(format!("k1 must be positive, got {}", self.k1)));
        }
        if !(0.0..=1.0).contains(&self.b) {
            return Err(Error::Config(format!("b must be in [0, 1], got {}", self.b)));
        }
        Ok(())
    }
}

/// Corpus statistics feeding IDF and length normalization.
#[derive(Debug, Clone, PartialEq)]
pub struct TermStats {
    pub doc_count: usize,
    pub doc_freq: BTreeMap<Term, usize>,
    pub avgdl: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Posting {
    /// Position of the document in the index's row-id order.
    pub doc: usize,
    pub tf: u64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ScoredHit {
    pub doc: NodeRef,
    pub score: f64,
    /// Score divided by the query's self-retrieval score.
    pub normalized: Option<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TableIndex {
    table: String,
    row_ids: Vec<usize>,
    doc_lengths: Vec<u64>,
    postings: BTreeMap<Term, Vec<Posting>>,
    avgdl: f64,
    params: Bm25Params,
}

fn mean_length(lengths: &[u64]) -> f64 {
    lengths.iter().map(|&l| l as f64).sum::<f64>() / lengths.len() as f64
}

impl TableIndex {
    pub fn build(docs: &[TupleDocument], params: Bm25Params) -> Result<TableIndex> {
        params.validate()?;
        let first = docs.first().ok_or(Error::EmptyIndex)?;
        let table = first.root.table.clone();
        if let Some(other) = docs.iter().find(|d| d.root.table != table) {
            return Err(Error::MixedTables(table, other.root.table.clone()));
        }
        let mut order: Vec<&TupleDocument> = docs.iter().collect();
        order.sort_by_key(|d| d.root.row_id);
        if let Some(w) = order.windows(2).find(|w| w[0].root.row_id == w[1].root.row_id) {
            return Err(Error::Constraint(format!("document {} indexed twice", w[0].root)));
        }

        let mut postings: BTreeMap<Term, Vec<Posting>> = BTreeMap::new();
        let mut doc_lengths = Vec::with_capacity(order.len());
        for (doc_idx, doc) in order.iter().enumerate() {
            if doc.length == 0 {
                return Err(Error::EmptyDocument {
                    table: doc.root.table.clone(),
                    row_id: doc.root.row_id,
                });
            }
            doc_lengths.push(doc.length);
            for (term, &tf) in &doc.term_counts {
                postings.entry(term.clone()).or_default().push(Posting { doc: doc_idx, tf });
            }
        }
        Ok(TableIndex {
            table,
            row_ids: order.iter().map(|d| d.root.row_id).collect(),
            avgdl: mean_length(&doc_lengths),
            doc_lengths,
            postings,
            params,
        })
    }

    pub(crate) fn from_parts(
        table: String,
        row_ids: Vec<usize>,
        doc_lengths: Vec<u64>,
        postings: BTreeMap<Term, Vec<Posting>>,
        params: Bm25Params,
    ) -> Result<TableIndex> {
        if row_ids.is_empty() {
            return Err(Error::EmptyIndex);
        }
        if row_ids.len() != doc_lengths.len() || row_ids.windows(2).any(|w| w[0] >= w[1]) {
            return Err(Error::format("index", "document table is inconsistent"));
        }
        for list in postings.values() {
            if list.is_empty()
                || list.windows(2).any(|w| w[0].doc >= w[1].doc)
                || list.iter().any(|p| p.tf == 0 || p.doc >= row_ids.len())
            {
                return Err(Error::format("index", "postings are not sorted, in range and positive"));
            }
        }
        Ok(TableIndex {
            table,
            avgdl: mean_length(&doc_lengths),
            row_ids,
            doc_lengths,
            postings,
            params,
        })
    }

    pub fn table(&self) -> &str {
        &self.table
    }

    pub fn params(&self) -> Bm25Params {
        self.params
    }

    pub fn doc_count(&self) -> usize {
        self.row_ids.len()
    }

    pub fn avgdl(&self) -> f64 {
        self.avgdl
    }

    /// Indexed row ids, ascending.
    pub fn row_ids(&self) -> &[usize] {
        &self.row_ids
    }

    pub fn doc_length(&self, row_id: usize) -> Option<u64> {
        self.position(row_id).map(|i| self.doc_lengths[i])
    }

    pub fn postings(&self, term: &Term) -> &[Posting] {
        self.postings.get(term).map_or(&[], Vec::as_slice)
    }

    pub fn terms(&self) -> impl Iterator<Item = (&Term, &[Posting])> {
        self.postings.iter().map(|(t, p)| (t, p.as_slice()))
    }

    pub fn doc_freq(&self, term: &Term) -> usize {
        self.postings(term).len()
    }

    pub fn stats(&self) -> TermStats {
        TermStats {
            doc_count: self.doc_count(),
            doc_freq: self.postings.iter().map(|(t, p)| (t.clone(), p.len())).collect(),
            avgdl: self.avgdl,
        }
    }

    pub fn idf(&self, term: &Term) -> f64 {
        let n = self.doc_freq(term) as f64;
        let total = self.doc_count() as f64;
        ((total - n + 0.5) / (n + 0.5) + 1.0).ln()
    }

    fn position(&self, row_id: usize) -> Option<usize> {
        self.row_ids.binary_search(&row_id).ok()
    }

    fn term_weight(&self, idf: f64, tf: u64, doc_len: u64) -> f64 {
        let Bm25Params { k1, b } = self.params;
        let tf = tf as f64;
        let norm = 1.0 - b + b * doc_len as f64 / self.avgdl;
        idf * (tf * (k1 + 1.0)) / (tf + k1 * norm)
    }

    pub fn bm25_score(&self, query: &TupleDocument, row_id: usize) -> Result<f64> {
        let pos = self
            .position(row_id)
            .ok_or_else(|| Error::NotFound(format!("document {}#{row_id}", self.table)))?;
        let len = self.doc_lengths[pos];
        let mut score = 0.0;
        for term in query.term_counts.keys() {
            let list = self.postings(term);
            if let Ok(i) = list.binary_search_by_key(&pos, |p| p.doc) {
                score += self.term_weight(self.idf(term), list[i].tf, len);
            }
        }
        Ok(score)
    }

    /// Best `top_k` documents sharing at least one term with `query`, by
    /// descending score then ascending row id.
    pub fn retrieve(&self, query: &TupleDocument, top_k: usize) -> Vec<ScoredHit> {
        let mut scores = vec![0.0f64; self.doc_count()];
        let mut touched = Vec::new();
        let mut seen = vec![false; self.doc_count()];
        for term in query.term_counts.keys() {
            let list = self.postings(term);
            if list.is_empty() {
                continue;
            }
            let idf = self.idf(term);
            for p in list {
                scores[p.doc] += self.term_weight(idf, p.tf, self.doc_lengths[p.doc]);
                if !seen[p.doc] {
                    seen[p.doc] = true;
                    touched.push(p.doc);
                }
            }
        }
        touched.sort_by(|&a, &b| scores[b].total_cmp(&scores[a]).then(a.cmp(&b)));
        touched.truncate(top_k);
        touched
            .into_iter()
            .map(|d| ScoredHit {
                doc: NodeRef::new(self.table.clone(), self.row_ids[d]),
                score: scores[d],
                normalized: None,
            })
            .collect()
    }

    /// Divide each hit's score by the query document's score against itself.
    pub fn normalize_by_self(&self, query: &TupleDocument, hits: &[ScoredHit]) -> Result<Vec<ScoredHit>> {
        let own = self.bm25_score(query, query.root.row_id)?;
        if own <= 0.0 {
            return Err(Error::Normalization {
                table: query.root.table.clone(),
                row_id: query.root.row_id,
            });
        }
        Ok(hits
            .iter()
            .map(|h| ScoredHit {
                normalized: Some(h.score / own),
                ..h.clone()
            })
            .collect())
    }
}

/// Entity/relationship label for every table. A table is a relationship
/// table when it has at least two FK columns, at most two attribute columns
/// and is not referenced by any other table; a manifest role always wins.
pub fn classify_tables(db: &Database) -> BTreeMap<String, TableRole> {
    let referenced: HashSet<&str> = db
        .tables
        .values()
        .flat_map(|t| {
            t.foreign_keys()
                .filter(move |(_, target, _)| *target != t.name)
                .map(|(_, target, _)| target)
        })
        .collect();
    db.tables
        .values()
        .map(|t| {
            let role = t.role.unwrap_or_else(|| {
                let fks = t.foreign_keys().count();
                let attrs = t.columns.iter().filter(|c| c.kind.is_attribute()).count();
                if fks >= 2 && attrs <= 2 && !referenced.contains(t.name.as_str()) {
                    TableRole::Relationship
                } else {
                    TableRole::Entity
                }
            });
            (t.name.clone(), role)
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::relational::{ColumnKind, ColumnSpec, Table};

    fn doc(table: &str, row: usize, terms: &[(&str, u64)]) -> TupleDocument {
        TupleDocument::new(
            NodeRef::new(table, row),
            terms
                .iter()
                .map(|(t, c)| (Term::parse(&format!("{table}.c={t}")).unwrap(), *c))
                .collect(),
        )
        .unwrap()
    }

    fn term(table: &str, t: &str) -> Term {
        Term::parse(&format!("{table}.c={t}")).unwrap()
    }

    #[test]
    fn single_document_stats() {
        let idx = TableIndex::build(&[doc("T", 0, &[("a", 2), ("b", 1)])], Bm25Params::default()).unwrap();
        assert_eq!(idx.doc_count(), 1);
        assert_eq!(idx.avgdl(), 3.0);
        assert_eq!(idx.doc_freq(&term("T", "a")), 1);
        assert_eq!(idx.doc_freq(&term("T", "b")), 1);
    }

    #[test]
    fn duplicate_content_doubles_doc_freq() {
        let d0 = doc("T", 0, &[("a", 2), ("b", 1)]);
        let d1 = doc("T", 1, &[("a", 2), ("b", 1)]);
        let idx = TableIndex::build(&[d0, d1], Bm25Params::default()).unwrap();
        assert_eq!(idx.doc_freq(&term("T", "a")), 2);
        assert_eq!(idx.avgdl(), 3.0);
    }

    #[test]
    fn build_rejects_empty_and_mixed() {
        assert!(matches!(TableIndex::build(&[], Bm25Params::default()), Err(Error::EmptyIndex)));
        let mixed = [doc("A", 0, &[("x", 1)]), doc("B", 0, &[("x", 1)])];
        assert!(matches!(
            TableIndex::build(&mixed, Bm25Params::default()),
            Err(Error::MixedTables(..))
        ));
        let bad = Bm25Params { k1: 0.0, b: 0.5 };
        assert!(TableIndex::build(&[doc("A", 0, &[("x", 1)])], bad).is_err());
    }

    #[test]
    fn score_matches_hand_computation() {
        let docs = [
            doc("T", 0, &[("a", 2), ("b", 1)]),
            doc("T", 1, &[("b", 4)]),
            doc("T", 2, &[("c", 1)]),
        ];
        let idx = TableIndex::build(&docs, Bm25Params::default()).unwrap();
        let query = TupleDocument::new(
            NodeRef::new("T", 0),
            [(term("T", "a"), 1), (term("T", "z"), 3)].into_iter().collect(),
        )
        .unwrap();
        // N=3, n(a)=1, avgdl=(3+4+1)/3
        let idf = ((3.0 - 1.0 + 0.5) / (1.0 + 0.5) + 1.0f64).ln();
        let norm = 1.0 - 0.75 + 0.75 * 3.0 / (8.0 / 3.0);
        let expected = idf * (2.0 * 2.2) / (2.0 + 1.2 * norm);
        assert!((idx.bm25_score(&query, 0).unwrap() - expected).abs() < 1e-12);
        assert_eq!(idx.bm25_score(&query, 2).unwrap(), 0.0);
        assert!(matches!(idx.bm25_score(&query, 7), Err(Error::NotFound(_))));
    }

    #[test]
    fn zero_b_ignores_length() {
        let docs = [doc("T", 0, &[("a", 1)]), doc("T", 1, &[("a", 1), ("b", 9)])];
        let idx = TableIndex::build(&docs, Bm25Params { k1: 1.2, b: 0.0 }).unwrap();
        let q = doc("T", 5, &[("a", 1)]);
        assert_eq!(idx.bm25_score(&q, 0).unwrap(), idx.bm25_score(&q, 1).unwrap());
    }

    #[test]
    fn retrieve_orders_and_limits() {
        let docs = [
            doc("T", 0, &[("a", 1)]),
            doc("T", 1, &[("a", 1)]),
            doc("T", 2, &[("a", 1), ("b", 1)]),
            doc("T", 3, &[("z", 1)]),
        ];
        let idx = TableIndex::build(&docs, Bm25Params::default()).unwrap();
        let q = doc("T", 0, &[("a", 1)]);
        let hits = idx.retrieve(&q, 10);
        let ids: Vec<usize> = hits.iter().map(|h| h.doc.row_id).collect();
        assert_eq!(ids, vec![0, 1, 2]);
        assert_eq!(hits[0].score, hits[1].score);
        assert_eq!(idx.retrieve(&q, 1).len(), 1);
        assert!(idx.retrieve(&doc("T", 0, &[("nope", 1)]), 5).is_empty());
        for h in &hits {
            assert_eq!(h.score, idx.bm25_score(&q, h.doc.row_id).unwrap());
        }
    }

    #[test]
    fn self_normalization() {
        let docs = [doc("T", 0, &[("a", 1), ("b", 1)]), doc("T", 1, &[("a", 1)])];
        let idx = TableIndex::build(&docs, Bm25Params::default()).unwrap();
        let q = &docs[0];
        let hits = idx.normalize_by_self(q, &idx.retrieve(q, 5)).unwrap();
        assert_eq!(hits[0].doc.row_id, 0);
        assert_eq!(hits[0].normalized, Some(1.0));
        let half = ScoredHit {
            doc: NodeRef::new("T", 1),
            score: hits[0].score / 2.0,
            normalized: None,
        };
        assert_eq!(idx.normalize_by_self(q, &[half]).unwrap()[0].normalized, Some(0.5));
    }

    #[test]
    fn zero_self_score_is_a_normalization_error() {
        let docs = [doc("T", 0, &[("a", 1)]), doc("T", 1, &[("b", 1)])];
        let idx = TableIndex::build(&docs, Bm25Params::default()).unwrap();
        // a query claiming to be row 1 but sharing nothing with it
        let q = doc("T", 1, &[("a", 1)]);
        assert!(matches!(
            idx.normalize_by_self(&q, &[]),
            Err(Error::Normalization { row_id: 1, .. })
        ));
    }

    fn table(name: &str, cols: &[(&str, &str)]) -> Table {
        Table::new(
            name,
            cols.iter()
                .map(|(n, k)| ColumnSpec::new(*n, k.parse::<ColumnKind>().unwrap()))
                .collect(),
        )
    }

    #[test]
    fn classification_heuristic_and_override() {
        let user = table(
            "USER",
            &[("id", "pk"), ("a", "categorical"), ("b", "categorical"), ("c", "numeric"), ("d", "text"), ("e", "categorical")],
        );
        let biz = table("BIZ", &[("id", "pk"), ("name", "text")]);
        let rate = table(
            "RATE",
            &[("user_id", "fk:USER.id"), ("biz_id", "fk:BIZ.id"), ("stars", "numeric"), ("at", "timestamp")],
        );
        let db = Database::from_tables(vec![user.clone(), biz.clone(), rate.clone()], "mem").unwrap();
        let roles = classify_tables(&db);
        assert_eq!(roles["RATE"], TableRole::Relationship);
        assert_eq!(roles["USER"], TableRole::Entity);
        assert_eq!(roles["BIZ"], TableRole::Entity);

        let mut rate_override = rate.clone();
        rate_override.role = Some(TableRole::Entity);
        let db = Database::from_tables(vec![user.clone(), biz.clone(), rate_override], "mem").unwrap();
        assert_eq!(classify_tables(&db)["RATE"], TableRole::Entity);

        // a link table referenced by another table stays an entity
        let note = table("NOTE", &[("id", "pk"), ("rate_id", "fk:RATE.rid")]);
        let mut rate_pk = rate;
        rate_pk.columns.insert(0, ColumnSpec::new("rid", ColumnKind::PrimaryKey));
        let db = Database::from_tables(vec![user, biz, rate_pk, note], "mem").unwrap();
        assert_eq!(classify_tables(&db)["RATE"], TableRole::Entity);
    }
}
