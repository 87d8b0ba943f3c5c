//! Topology metrics of the tuple graph before and after augmentation,
//! shortest-path distributions between two tables, and cohort agreement of
//! intra-table pairs.

use std::collections::{BTreeMap, VecDeque};
use std::fs;
use std::path::Path;

use rand::seq::index::sample;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::augment::AtraPair;
use crate::error::{Error, Result};
use crate::graph::{HeteroGraph, NodeId};
use crate::relational::{AttributeValue, Database};

/// Graphs up to this many nodes get exact all-pairs path lengths.
pub const EXACT_PATH_LIMIT: usize = 2000;
pub const DEFAULT_PROFILE_SOURCES: usize = 512;
pub const DEFAULT_PATH_SAMPLES: usize = 10_000;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MethodNotes {
    pub undirected_view: bool,
    pub exact_paths: bool,
    pub path_sources: usize,
    pub reachable_pairs: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GraphProfile {
    pub nodes: usize,
    pub connected_components: usize,
    pub avg_degree: f64,
    /// Mean over ordered pairs of distinct, mutually reachable nodes.
    pub avg_shortest_path: f64,
    pub avg_clustering: f64,
    pub method_notes: MethodNotes,
}

struct UnionFind {
    parent: Vec<usize>,
    rank: Vec<u8>,
}

impl UnionFind {
    fn new(n: usize) -> Self {
        UnionFind {
            parent: (0..n).collect(),
            rank: vec![0; n],
        }
    }

    fn find(&mut self, mut x: usize) -> usize {
        while self.parent[x] != x {
            self.parent[x] = self.parent[self.parent[x]];
            x = self.parent[x];
        }
        x
    }

    /// Returns true when two sets were merged.
    fn union(&mut self, a: usize, b: usize) -> bool {
        let (ra, rb) = (self.find(a), self.find(b));
        if ra == rb {
            return false;
        }
        match self.rank[ra].cmp(&self.rank[rb]) {
            std::cmp::Ordering::Less => self.parent[ra] = rb,
            std::cmp::Ordering::Greater => self.parent[rb] = ra,
            std::cmp::Ordering::Equal => {
                self.parent[rb] = ra;
                self.rank[ra] += 1;
            }
        }
        true
    }
}

/// Weakly connected components.
pub fn connected_components(adjacency: &[Vec<NodeId>]) -> usize {
    let mut uf = UnionFind::new(adjacency.len());
    let mut components = adjacency.len();
    for (v, list) in adjacency.iter().enumerate() {
        for &u in list {
            if uf.union(v, u) {
                components -= 1;
            }
        }
    }
    components
}

/// Hop distances from `source`; `usize::MAX` marks unreachable nodes.
pub fn bfs(adjacency: &[Vec<NodeId>], source: NodeId) -> Vec<usize> {
    let mut dist = vec![usize::MAX; adjacency.len()];
    dist[source] = 0;
    let mut queue = VecDeque::from([source]);
    while let Some(v) = queue.pop_front() {
        for &u in &adjacency[v] {
            if dist[u] == usize::MAX {
                dist[u] = dist[v] + 1;
                queue.push_back(u);
            }
        }
    }
    dist
}

fn sorted_intersection(a: &[NodeId], b: &[NodeId]) -> usize {
    let (mut i, mut j, mut n) = (0, 0, 0);
    while i < a.len() && j < b.len() {
        match a[i].cmp(&b[j]) {
            std::cmp::Ordering::Less => i += 1,
            std::cmp::Ordering::Greater => j += 1,
            std::cmp::Ordering::Equal => {
                n += 1;
                i += 1;
                j += 1;
            }
        }
    }
    n
}

/// Mean local clustering coefficient over all nodes of a symmetric, sorted
/// adjacency; nodes of degree below two contribute 0.
pub fn average_clustering(undirected: &[Vec<NodeId>]) -> f64 {
    if undirected.is_empty() {
        return 0.0;
    }
    let local: Vec<f64> = undirected
        .par_iter()
        .map(|nbrs| {
            let d = nbrs.len();
            if d < 2 {
                return 0.0;
            }
            let twice_triangles: usize = nbrs
                .iter()
                .map(|&u| sorted_intersection(&undirected[u], nbrs))
                .sum();
            twice_triangles as f64 / (d * (d - 1)) as f64
        })
        .collect();
    local.iter().sum::<f64>() / undirected.len() as f64
}

pub fn profile(g: &HeteroGraph, undirected_view: bool, sample_sources: usize, seed: u64) -> Result<GraphProfile> {
    let n = g.node_count();
    if n == 0 {
        return Err(Error::NoData("graph has no nodes".into()));
    }
    let undirected = g.undirected_adjacency();
    let walk = if undirected_view {
        undirected.clone()
    } else {
        g.directed_adjacency()
    };
    let degree_sum: usize = walk.iter().map(Vec::len).sum();

    let exact = n <= EXACT_PATH_LIMIT;
    let sources: Vec<NodeId> = if exact {
        (0..n).collect()
    } else {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut s = sample(&mut rng, n, sample_sources.clamp(1, n)).into_vec();
        s.sort_unstable();
        s
    };
    let per_source: Vec<(u64, u64)> = sources
        .par_iter()
        .map(|&s| {
            bfs(&walk, s)
                .into_iter()
                .filter(|&d| d != usize::MAX && d > 0)
                .fold((0u64, 0u64), |(sum, cnt), d| (sum + d as u64, cnt + 1))
        })
        .collect();
    let (total, pairs) = per_source
        .iter()
        .fold((0u64, 0u64), |(a, b), (s, c)| (a + s, b + c));

    Ok(GraphProfile {
        nodes: n,
        connected_components: connected_components(&undirected),
        avg_degree: degree_sum as f64 / n as f64,
        avg_shortest_path: if pairs == 0 { 0.0 } else { total as f64 / pairs as f64 },
        avg_clustering: average_clustering(&undirected),
        method_notes: MethodNotes {
            undirected_view,
            exact_paths: exact,
            path_sources: sources.len(),
            reachable_pairs: pairs,
        },
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PathDistribution {
    pub src_table: String,
    pub dst_table: String,
    /// Path length -> number of sampled pairs at that length.
    pub lengths: BTreeMap<usize, usize>,
    pub mean: f64,
    pub std: f64,
    pub unreachable_count: usize,
    pub sampled_pairs: usize,
}

/// The (src, dst) node pairs measured by [`path_distribution`] with their
/// undirected hop distance (`None` when unreachable). Every pair is used when
/// the two tables have at most `sample_pairs` combinations, otherwise a
/// seeded sample without replacement; the choice depends only on table
/// sizes and `seed`, so it is stable under edge augmentation.
pub fn sampled_pair_distances(
    g: &HeteroGraph,
    src_table: &str,
    dst_table: &str,
    sample_pairs: usize,
    seed: u64,
) -> Result<Vec<(NodeId, NodeId, Option<usize>)>> {
    let src = g.table_nodes(src_table)?;
    let dst = g.table_nodes(dst_table)?;
    let (ns, nd) = (src.len(), dst.len());
    let total = ns * nd;
    let picks: Vec<usize> = if total <= sample_pairs {
        (0..total).collect()
    } else {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut p = sample(&mut rng, total, sample_pairs).into_vec();
        p.sort_unstable();
        p
    };
    let mut by_source: BTreeMap<NodeId, Vec<NodeId>> = BTreeMap::new();
    for p in picks {
        by_source.entry(src.start + p / nd).or_default().push(dst.start + p % nd);
    }
    let adjacency = g.undirected_adjacency();
    let groups: Vec<(NodeId, Vec<NodeId>)> = by_source.into_iter().collect();
    let measured: Vec<Vec<(NodeId, NodeId, Option<usize>)>> = groups
        .par_iter()
        .map(|(s, targets)| {
            let dist = bfs(&adjacency, *s);
            targets
                .iter()
                .map(|&t| (*s, t, (dist[t] != usize::MAX).then_some(dist[t])))
                .collect()
        })
        .collect();
    Ok(measured.into_iter().flatten().collect())
}

pub fn path_distribution(
    g: &HeteroGraph,
    src_table: &str,
    dst_table: &str,
    sample_pairs: usize,
    seed: u64,
) -> Result<PathDistribution> {
    let pairs = sampled_pair_distances(g, src_table, dst_table, sample_pairs, seed)?;
    let mut lengths = BTreeMap::new();
    let mut unreachable = 0;
    let mut finite = Vec::new();
    for (_, _, d) in &pairs {
        match d {
            Some(d) => {
                *lengths.entry(*d).or_insert(0) += 1;
                finite.push(*d as f64);
            }
            None => unreachable += 1,
        }
    }
    let (mean, std) = if finite.is_empty() {
        (0.0, 0.0)
    } else {
        let n = finite.len() as f64;
        let mean = finite.iter().sum::<f64>() / n;
        let var = finite.iter().map(|x| (x - mean) * (x - mean)).sum::<f64>() / n;
        (mean, var.sqrt())
    };
    Ok(PathDistribution {
        src_table: src_table.to_string(),
        dst_table: dst_table.to_string(),
        lengths,
        mean,
        std,
        unreachable_count: unreachable,
        sampled_pairs: pairs.len(),
    })
}

/// Two tuples belong to the same cohort when they hold equal, non-null
/// values in every listed column.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CohortRule {
    pub table: String,
    pub columns: Vec<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub name: Option<String>,
}

impl CohortRule {
    pub fn label(&self) -> String {
        self.name.clone().unwrap_or_else(|| self.columns.join("+"))
    }

    /// A JSON array of rules.
    pub fn load_all(path: &Path) -> Result<Vec<CohortRule>> {
        let raw = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        serde_json::from_str(&raw).map_err(|e| Error::json(path, e))
    }
}

pub fn cohort_ratio(pairs: &[AtraPair], db: &Database, rule: &CohortRule) -> Result<f64> {
    let table = db.table(&rule.table)?;
    if rule.columns.is_empty() {
        return Err(Error::Config(format!("cohort rule on {} lists no columns", rule.table)));
    }
    let cols = rule
        .columns
        .iter()
        .map(|c| {
            table
                .column_index(c)
                .ok_or_else(|| Error::NotFound(format!("column {}.{c}", rule.table)))
        })
        .collect::<Result<Vec<_>>>()?;
    if pairs.is_empty() {
        return Err(Error::NoData(format!("no pairs for cohort rule on {}", rule.table)));
    }
    let mut hits = 0usize;
    for p in pairs {
        if p.a.table != rule.table || p.b.table != rule.table {
            return Err(Error::Constraint(format!(
                "pair {} - {} is not from table {}",
                p.a, p.b, rule.table
            )));
        }
        let row = |id| {
            table
                .row(id)
                .ok_or_else(|| Error::NotFound(format!("row {}#{id}", rule.table)))
        };
        let (ra, rb) = (row(p.a.row_id)?, row(p.b.row_id)?);
        let same = cols.iter().all(|&c| {
            let (x, y) = (&ra.values[c], &rb.values[c]);
            *x != AttributeValue::Null && x == y
        });
        hits += usize::from(same);
    }
    Ok(hits as f64 / pairs.len() as f64)
}

#[derive(Debug, Serialize)]
struct MetricsFile<'a> {
    #[serde(skip_serializing_if = "Option::is_none")]
    before: Option<&'a GraphProfile>,
    #[serde(skip_serializing_if = "Option::is_none")]
    after: Option<&'a GraphProfile>,
}

pub fn write_metrics(path: &Path, before: Option<&GraphProfile>, after: Option<&GraphProfile>) -> Result<()> {
    let body = serde_json::to_string_pretty(&MetricsFile { before, after }).map_err(|e| Error::json(path, e))?;
    fs::write(path, body + "\n").map_err(|e| Error::io(path, e))
}

pub fn write_path_distribution(dist: &PathDistribution, path: &Path) -> Result<()> {
    let mut out = String::from("length,count\n");
    for (len, count) in &dist.lengths {
        out.push_str(&format!("{len},{count}\n"));
    }
    fs::write(path, out).map_err(|e| Error::io(path, e))
}

pub fn write_cohort_ratios(rows: &[(CohortRule, f64)], path: &Path) -> Result<()> {
    let mut w = csv::Writer::from_path(path).map_err(|e| Error::csv(path, e))?;
    w.write_record(["table", "rule", "ratio"]).map_err(|e| Error::csv(path, e))?;
    for (rule, ratio) in rows {
        w.write_record([rule.table.clone(), rule.label(), ratio.to_string()])
            .map_err(|e| Error::csv(path, e))?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}
