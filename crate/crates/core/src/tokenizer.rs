//! Attribute tokenization: every attribute value becomes zero or more terms
//! of the form `TABLE.COLUMN=token`.
//!
//! Categorical values are used verbatim, numeric values are discretized into
//! equal-width bins whose count follows Sturges' rule below 1000 distinct
//! values and the Rice rule above, and text is condensed to a few keywords by
//! a pluggable [`KeywordExtractor`]. Keys and timestamps never become terms.

use std::collections::{BTreeMap, HashMap, HashSet};
use std::fmt;
use std::fs;
use std::path::Path;
use std::sync::Arc;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::relational::{AttributeValue, ColumnKind, Database, Table, Tuple};

/// Keywords kept per text value when nothing else is configured.
pub const DEFAULT_KEYWORDS_PER_TEXT: usize = 5;

#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(transparent)]
pub struct Term(String);

impl Term {
    pub fn new(table: &str, column: &str, token: &str) -> Term {
        debug_assert!(!table.contains(['.', '=']) && !column.contains(['.', '=']));
        debug_assert!(!token.is_empty());
        Term(format!("{table}.{column}={token}"))
    }

    /// Validate a serialized term surface.
    pub fn parse(surface: &str) -> Result<Term> {
        let (prefix, token) = surface
            .split_once('=')
            .ok_or_else(|| Error::format("term", format!("{surface:?} has no '='")))?;
        let (table, column) = prefix
            .split_once('.')
            .ok_or_else(|| Error::format("term", format!("{surface:?} has no TABLE.COLUMN prefix")))?;
        if table.is_empty() || column.is_empty() || column.contains('.') || token.is_empty() {
            return Err(Error::format("term", format!("{surface:?} is not TABLE.COLUMN=token")));
        }
        Ok(Term(surface.to_string()))
    }

    pub fn as_str(&self) -> &str {
        &self.0
    }

    pub fn table(&self) -> &str {
        self.0.split_once('.').map_or("", |(t, _)| t)
    }
}

impl fmt::Display for Term {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

/// Number of equal-width bins for `n` distinct values:
/// `ceil(1 + log2 n)` below 1000, `ceil(2 * cbrt n)` from 1000 on.
pub fn bin_count(n: usize) -> usize {
    let n = n.max(1) as f64;
    let exact = if n < 1000.0 {
        1.0 + n.log2()
    } else {
        2.0 * n.cbrt()
    };
    // log2/cbrt of exact powers and cubes may land an ulp above the integer.
    let nearest = exact.round();
    let b = if (exact - nearest).abs() < 1e-9 {
        nearest
    } else {
        exact.ceil()
    };
    (b as usize).max(1)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BinPlan {
    /// Qualified column name, `TABLE.COLUMN`.
    pub column: String,
    /// `bin_count + 1` boundaries. Strictly increasing, except for the
    /// degenerate single bin `[v, v]` of a constant column.
    pub edges: Vec<f64>,
    pub bin_count: usize,
}

impl BinPlan {
    /// Equal-width bins over `[min, max]` of `values`, with the bin count
    /// chosen from `distinct_count`.
    pub fn plan(column: impl Into<String>, values: &[f64], distinct_count: usize) -> BinPlan {
        let column = column.into();
        let (min, max) = values
            .iter()
            .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), &v| {
                (lo.min(v), hi.max(v))
            });
        assert!(min.is_finite() && max.is_finite(), "plan_bins needs finite values");
        if min == max {
            return BinPlan {
                column,
                edges: vec![min, max],
                bin_count: 1,
            };
        }
        let b = bin_count(distinct_count);
        let width = max - min;
        let mut edges: Vec<f64> = (0..=b).map(|i| min + width * i as f64 / b as f64).collect();
        edges[b] = max;
        BinPlan {
            column,
            edges,
            bin_count: b,
        }
    }

    /// Bin index of `v`; values outside the fitted range clamp to the end bins.
    pub fn bin_of(&self, v: f64) -> usize {
        let interior = &self.edges[1..self.bin_count];
        interior.partition_point(|&e| e <= v)
    }
}

/// Bin plan for a numeric column; see [`BinPlan::plan`].
pub fn plan_bins(column: impl Into<String>, values: &[f64], distinct_count: usize) -> BinPlan {
    BinPlan::plan(column, values, distinct_count)
}

const STOPWORDS: &[&str] = &[
    "a", "about", "above", "after", "again", "against", "all", "also", "am", "an", "and", "any",
    "are", "aren", "as", "at", "be", "because", "been", "before", "being", "below", "between",
    "both", "but", "by", "can", "cannot", "could", "couldn", "did", "didn", "do", "does",
    "doesn", "doing", "don", "down", "during", "each", "else", "ever", "few", "for", "from",
    "further", "get", "got", "had", "hadn", "has", "hasn", "have", "haven", "having", "he",
    "her", "here", "hers", "herself", "him", "himself", "his", "how", "however", "i", "if",
    "in", "into", "is", "isn", "it", "its", "itself", "just", "let", "like", "may", "me",
    "might", "more", "most", "must", "mustn", "my", "myself", "no", "nor", "not", "now", "of",
    "off", "on", "once", "only", "or", "other", "ought", "our", "ours", "ourselves", "out",
    "over", "own", "same", "shall", "shan", "she", "should", "shouldn", "so", "some", "such",
    "than", "that", "the", "their", "theirs", "them", "themselves", "then", "there", "these",
    "they", "this", "those", "through", "to", "too", "under", "until", "up", "upon", "us",
    "very", "was", "wasn", "we", "were", "weren", "what", "when", "where", "which", "while",
    "who", "whom", "why", "will", "with", "within", "without", "won", "would", "wouldn", "yet",
    "you", "your", "yours", "yourself", "yourselves",
];

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct StopWords(HashSet<String>);

impl Default for StopWords {
    fn default() -> Self {
        StopWords(STOPWORDS.iter().map(|s| s.to_string()).collect())
    }
}

impl StopWords {
    /// One word per line; blank lines and `#` comments are ignored.
    pub fn from_file(path: &Path) -> Result<StopWords> {
        let raw = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Ok(StopWords(
            raw.lines()
                .map(str::trim)
                .filter(|l| !l.is_empty() && !l.starts_with('#'))
                .map(str::to_lowercase)
                .collect(),
        ))
    }

    pub fn contains(&self, word: &str) -> bool {
        self.0.contains(word)
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }
}

/// Lowercased alphanumeric words of `text` with stopwords and words shorter
/// than three characters removed, in text order.
pub fn content_words(text: &str, stopwords: &StopWords) -> Vec<String> {
    text.split(|c: char| !c.is_alphanumeric())
        .map(str::to_lowercase)
        .filter(|w| w.chars().count() >= 3 && !stopwords.contains(w))
        .collect()
}

/// Document frequencies of content words across one text column.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct WordStats {
    pub doc_count: usize,
    pub doc_freq: HashMap<String, usize>,
}

impl WordStats {
    pub fn from_texts<'a>(texts: impl IntoIterator<Item = &'a str>, stopwords: &StopWords) -> WordStats {
        let mut stats = WordStats::default();
        for text in texts {
            stats.doc_count += 1;
            let unique: HashSet<String> = content_words(text, stopwords).into_iter().collect();
            for w in unique {
                *stats.doc_freq.entry(w).or_default() += 1;
            }
        }
        stats
    }
}

pub trait KeywordExtractor: Send + Sync {
    /// At most `m` lowercase, stopword-free words drawn from `text`.
    fn extract(&self, text: &str, corpus: &WordStats, m: usize) -> Vec<String>;
}

/// Offline keyword extractor ranking words by `tf * ln(N / df)`, ties broken
/// alphabetically.
#[derive(Debug, Clone, Default)]
pub struct TfIdfExtractor {
    pub stopwords: StopWords,
}

impl TfIdfExtractor {
    pub fn new(stopwords: StopWords) -> Self {
        TfIdfExtractor { stopwords }
    }
}

impl KeywordExtractor for TfIdfExtractor {
    fn extract(&self, text: &str, corpus: &WordStats, m: usize) -> Vec<String> {
        default_keyword_extract(text, corpus, m, &self.stopwords)
    }
}

pub fn default_keyword_extract(
    text: &str,
    corpus: &WordStats,
    m: usize,
    stopwords: &StopWords,
) -> Vec<String> {
    let mut tf: BTreeMap<String, usize> = BTreeMap::new();
    for w in content_words(text, stopwords) {
        *tf.entry(w).or_default() += 1;
    }
    let n_docs = corpus.doc_count.max(1) as f64;
    let mut ranked: Vec<(f64, String)> = tf
        .into_iter()
        .map(|(w, count)| {
            let df = corpus.doc_freq.get(&w).copied().unwrap_or(0).max(1) as f64;
            (count as f64 * (n_docs / df).ln(), w)
        })
        .collect();
    ranked.sort_by(|a, b| b.0.total_cmp(&a.0).then_with(|| a.1.cmp(&b.1)));
    ranked.into_iter().take(m).map(|(_, w)| w).collect()
}

/// Terms for a single attribute value. `plan` must be given for numeric
/// columns; `corpus` and `extractor` are only consulted for text.
pub fn tokenize_value(
    table: &str,
    column: &str,
    value: &AttributeValue,
    plan: Option<&BinPlan>,
    extractor: &dyn KeywordExtractor,
    corpus: &WordStats,
    m: usize,
) -> Vec<Term> {
    match value {
        AttributeValue::Category(c) => vec![Term::new(table, column, c)],
        AttributeValue::Number(x) => match plan {
            Some(plan) => vec![Term::new(table, column, &format!("bin{}", plan.bin_of(*x)))],
            None => {
                debug_assert!(false, "numeric column {table}.{column} has no bin plan");
                Vec::new()
            }
        },
        AttributeValue::Text(t) => extractor
            .extract(t, corpus, m)
            .iter()
            .map(|w| Term::new(table, column, w))
            .collect(),
        AttributeValue::Key(_) | AttributeValue::Timestamp(_) | AttributeValue::Null => Vec::new(),
    }
}

/// Column-level statistics fitted on a database, ready to tokenize tuples.
#[derive(Clone)]
pub struct Tokenizer {
    plans: BTreeMap<String, BinPlan>,
    word_stats: BTreeMap<String, WordStats>,
    extractor: Arc<dyn KeywordExtractor>,
    keywords_per_text: usize,
}

impl fmt::Debug for Tokenizer {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("Tokenizer")
            .field("plans", &self.plans.len())
            .field("text_columns", &self.word_stats.len())
            .field("keywords_per_text", &self.keywords_per_text)
            .finish()
    }
}

enum Fitted {
    Plan(String, BinPlan),
    Words(String, WordStats),
}

impl Tokenizer {
    pub fn fit(db: &Database, extractor: Arc<dyn KeywordExtractor>, keywords_per_text: usize) -> Tokenizer {
        let stopwords = StopWords::default();
        Self::fit_with_stopwords(db, extractor, keywords_per_text, &stopwords)
    }

    /// Like [`Tokenizer::fit`]; `stopwords` only affects the word statistics.
    pub fn fit_with_stopwords(
        db: &Database,
        extractor: Arc<dyn KeywordExtractor>,
        keywords_per_text: usize,
        stopwords: &StopWords,
    ) -> Tokenizer {
        let columns: Vec<(&Table, usize)> = db
            .tables
            .values()
            .flat_map(|t| (0..t.columns.len()).map(move |c| (t, c)))
            .filter(|(t, c)| matches!(t.columns[*c].kind, ColumnKind::Numeric | ColumnKind::Text))
            .collect();
        let fitted: Vec<Option<Fitted>> = columns
            .par_iter()
            .map(|&(table, col)| {
                let qualified = format!("{}.{}", table.name, table.columns[col].name);
                match table.columns[col].kind {
                    ColumnKind::Numeric => {
                        let values: Vec<f64> = table
                            .rows
                            .iter()
                            .filter_map(|r| match r.values[col] {
                                AttributeValue::Number(x) => Some(x),
                                _ => None,
                            })
                            .collect();
                        if values.is_empty() {
                            return None;
                        }
                        let distinct: HashSet<u64> =
                            values.iter().map(|x| (x + 0.0).to_bits()).collect();
                        let plan = BinPlan::plan(qualified.clone(), &values, distinct.len());
                        Some(Fitted::Plan(qualified, plan))
                    }
                    _ => {
                        let texts = table.rows.iter().filter_map(|r| match &r.values[col] {
                            AttributeValue::Text(t) => Some(t.as_str()),
                            _ => None,
                        });
                        Some(Fitted::Words(qualified, WordStats::from_texts(texts, stopwords)))
                    }
                }
            })
            .collect();

        let mut plans = BTreeMap::new();
        let mut word_stats = BTreeMap::new();
        for f in fitted.into_iter().flatten() {
            match f {
                Fitted::Plan(k, p) => {
                    plans.insert(k, p);
                }
                Fitted::Words(k, w) => {
                    word_stats.insert(k, w);
                }
            }
        }
        Tokenizer {
            plans,
            word_stats,
            extractor,
            keywords_per_text,
        }
    }

    pub fn plan(&self, table: &str, column: &str) -> Option<&BinPlan> {
        self.plans.get(&format!("{table}.{column}"))
    }

    pub fn bin_plans(&self) -> impl Iterator<Item = &BinPlan> {
        self.plans.values()
    }

    pub fn tokenize_value(&self, table: &str, column: &str, value: &AttributeValue) -> Vec<Term> {
        let qualified = format!("{table}.{column}");
        let empty = WordStats::default();
        tokenize_value(
            table,
            column,
            value,
            self.plans.get(&qualified),
            self.extractor.as_ref(),
            self.word_stats.get(&qualified).unwrap_or(&empty),
            self.keywords_per_text,
        )
    }

    /// All terms of a tuple, in column order.
    pub fn tokenize_tuple(&self, table: &Table, tuple: &Tuple) -> Vec<Term> {
        table
            .columns
            .iter()
            .zip(&tuple.values)
            .filter(|(c, _)| c.kind.is_attribute())
            .flat_map(|(c, v)| self.tokenize_value(&table.name, &c.name, v))
            .collect()
    }

    /// Serialize all bin plans as a JSON array, sorted by column.
    pub fn write_bin_plans(&self, path: &Path) -> Result<()> {
        let plans: Vec<&BinPlan> = self.plans.values().collect();
        let body = serde_json::to_string_pretty(&plans).map_err(|e| Error::json(path, e))?;
        fs::write(path, body + "\n").map_err(|e| Error::io(path, e))
    }
}
