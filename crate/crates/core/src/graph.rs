//! Heterogeneous tuple graph: one node per tuple, one edge type per foreign
//! key column, plus augmented edge types between schema-distant tables.
//!
//! Nodes get dense global ids ordered by (table name, row id). Every edge
//! type is stored as a directed CSR adjacency; schema edges are materialized
//! in both directions, augmented edges keep the direction they were added with.

use std::collections::{BTreeMap, VecDeque};
use std::fmt;
use std::fs;
use std::io::Write;
use std::ops::Range;
use std::path::Path;

use rand::seq::index::sample;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::relational::{AttributeValue, Database};

pub type NodeId = usize;

#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct NodeRef {
    pub table: String,
    pub row_id: usize,
}

impl NodeRef {
    pub fn new(table: impl Into<String>, row_id: usize) -> Self {
        NodeRef {
            table: table.into(),
            row_id,
        }
    }
}

impl fmt::Display for NodeRef {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}#{}", self.table, self.row_id)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum EdgeType {
    /// A foreign key column, `table.column`.
    Schema { table: String, column: String },
    /// Retrieval-derived shortcut from `src` tuples to `dst` tuples.
    Augmented { src: String, dst: String },
}

impl EdgeType {
    /// Stable name used in export file names: `TABLE.column` or `aug.SRC.DST`.
    pub fn name(&self) -> String {
        match self {
            EdgeType::Schema { table, column } => format!("{table}.{column}"),
            EdgeType::Augmented { src, dst } => format!("aug.{src}.{dst}"),
        }
    }

    pub fn is_augmented(&self) -> bool {
        matches!(self, EdgeType::Augmented { .. })
    }
}

impl fmt::Display for EdgeType {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.name())
    }
}

#[derive(Debug, Clone, Copy)]
pub enum Relation<'a> {
    All,
    Only(&'a EdgeType),
}

#[derive(Debug, Clone, PartialEq, Default)]
struct Csr {
    offsets: Vec<usize>,
    targets: Vec<NodeId>,
}

impl Csr {
    /// Build from arbitrary arcs; sorts, deduplicates and drops self-loops.
    fn from_arcs(node_count: usize, mut arcs: Vec<(NodeId, NodeId)>) -> Self {
        arcs.retain(|(a, b)| a != b);
        arcs.sort_unstable();
        arcs.dedup();
        let mut offsets = vec![0; node_count + 1];
        for &(src, _) in &arcs {
            offsets[src + 1] += 1;
        }
        for i in 0..node_count {
            offsets[i + 1] += offsets[i];
        }
        Csr {
            offsets,
            targets: arcs.into_iter().map(|(_, dst)| dst).collect(),
        }
    }

    fn row(&self, v: NodeId) -> &[NodeId] {
        &self.targets[self.offsets[v]..self.offsets[v + 1]]
    }

    fn arcs(&self) -> impl Iterator<Item = (NodeId, NodeId)> + '_ {
        (0..self.offsets.len().saturating_sub(1))
            .flat_map(move |v| self.row(v).iter().map(move |&u| (v, u)))
    }

    fn len(&self) -> usize {
        self.targets.len()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct HeteroGraph {
    tables: Vec<String>,
    row_ids: Vec<Vec<usize>>,
    offsets: Vec<usize>,
    /// Table-level FK links (undirected, deduplicated).
    schema_links: Vec<(usize, usize)>,
    edge_types: Vec<EdgeType>,
    adjacency: Vec<Csr>,
    merged: Csr,
}

impl HeteroGraph {
    /// The schema-defined graph of `db`.
    pub fn build(db: &Database) -> HeteroGraph {
        let tables: Vec<String> = db.tables.keys().cloned().collect();
        let row_ids: Vec<Vec<usize>> = db
            .tables
            .values()
            .map(|t| t.rows.iter().map(|r| r.row_id).collect())
            .collect();
        let mut offsets = vec![0];
        for ids in &row_ids {
            offsets.push(offsets.last().unwrap() + ids.len());
        }
        let node_count = *offsets.last().unwrap();
        let table_pos = |name: &str| tables.binary_search_by(|t| t.as_str().cmp(name)).unwrap();

        let mut schema_links = Vec::new();
        let mut typed: BTreeMap<EdgeType, Vec<(NodeId, NodeId)>> = BTreeMap::new();
        for (ti, table) in db.tables.values().enumerate() {
            for (col, target, _) in table.foreign_keys() {
                let tj = table_pos(target);
                schema_links.push((ti.min(tj), ti.max(tj)));
                let lookup = db.tables[target].pk_lookup();
                let arcs = typed
                    .entry(EdgeType::Schema {
                        table: table.name.clone(),
                        column: table.columns[col].name.clone(),
                    })
                    .or_default();
                for (local, row) in table.rows.iter().enumerate() {
                    if let AttributeValue::Key(k) = &row.values[col] {
                        // Ingest guarantees resolution; snapshots null out the rest.
                        if let Some(&target_row) = lookup.get(k.as_str()) {
                            let src = offsets[ti] + local;
                            let dst = offsets[tj] + row_ids[tj].binary_search(&target_row).unwrap();
                            arcs.push((src, dst));
                            arcs.push((dst, src));
                        }
                    }
                }
            }
        }
        schema_links.retain(|(a, b)| a != b);
        schema_links.sort_unstable();
        schema_links.dedup();

        let (edge_types, adjacency): (Vec<_>, Vec<_>) = typed
            .into_iter()
            .map(|(ty, arcs)| (ty, Csr::from_arcs(node_count, arcs)))
            .unzip();
        let mut g = HeteroGraph {
            tables,
            row_ids,
            offsets,
            schema_links,
            edge_types,
            adjacency,
            merged: Csr::default(),
        };
        g.rebuild_merged();
        g
    }

    fn rebuild_merged(&mut self) {
        let arcs = self.adjacency.iter().flat_map(Csr::arcs).collect();
        self.merged = Csr::from_arcs(self.node_count(), arcs);
    }

    pub fn node_count(&self) -> usize {
        *self.offsets.last().unwrap_or(&0)
    }

    pub fn tables(&self) -> &[String] {
        &self.tables
    }

    pub fn edge_types(&self) -> &[EdgeType] {
        &self.edge_types
    }

    fn table_index(&self, table: &str) -> Result<usize> {
        self.tables
            .binary_search_by(|t| t.as_str().cmp(table))
            .map_err(|_| Error::NotFound(format!("table {table}")))
    }

    /// Global id range of a table's nodes.
    pub fn table_nodes(&self, table: &str) -> Result<Range<NodeId>> {
        let ti = self.table_index(table)?;
        Ok(self.offsets[ti]..self.offsets[ti + 1])
    }

    pub fn node_id(&self, node: &NodeRef) -> Option<NodeId> {
        let ti = self.table_index(&node.table).ok()?;
        let local = self.row_ids[ti].binary_search(&node.row_id).ok()?;
        Some(self.offsets[ti] + local)
    }

    fn resolve(&self, node: &NodeRef) -> Result<NodeId> {
        self.node_id(node)
            .ok_or_else(|| Error::NotFound(format!("node {node}")))
    }

    pub fn table_of(&self, id: NodeId) -> &str {
        let ti = self.offsets.partition_point(|&o| o <= id) - 1;
        &self.tables[ti]
    }

    pub fn node_ref(&self, id: NodeId) -> NodeRef {
        let ti = self.offsets.partition_point(|&o| o <= id) - 1;
        NodeRef::new(self.tables[ti].clone(), self.row_ids[ti][id - self.offsets[ti]])
    }

    /// Deduplicated out-neighbours of `v`, sorted by node id.
    pub fn out_neighbors(&self, v: NodeId, relation: Relation<'_>) -> &[NodeId] {
        match relation {
            Relation::All => self.merged.row(v),
            Relation::Only(ty) => match self.edge_types.binary_search(ty) {
                Ok(i) => self.adjacency[i].row(v),
                Err(_) => &[],
            },
        }
    }

    /// Number of stored directed arcs of one edge type.
    pub fn arc_count(&self, ty: &EdgeType) -> usize {
        self.edge_types
            .binary_search(ty)
            .map_or(0, |i| self.adjacency[i].len())
    }

    /// Arcs of one edge type as `(src, dst)` global ids, sorted.
    pub fn arcs(&self, ty: &EdgeType) -> Vec<(NodeId, NodeId)> {
        self.edge_types
            .binary_search(ty)
            .map_or_else(|_| Vec::new(), |i| self.adjacency[i].arcs().collect())
    }

    /// Symmetric, deduplicated, loop-free adjacency over all edge types.
    pub fn undirected_adjacency(&self) -> Vec<Vec<NodeId>> {
        let mut adj = vec![Vec::new(); self.node_count()];
        for (a, b) in self.merged.arcs() {
            adj[a].push(b);
            adj[b].push(a);
        }
        for list in &mut adj {
            list.sort_unstable();
            list.dedup();
        }
        adj
    }

    /// Directed adjacency over all edge types.
    pub fn directed_adjacency(&self) -> Vec<Vec<NodeId>> {
        (0..self.node_count())
            .map(|v| self.merged.row(v).to_vec())
            .collect()
    }

    /// Hop count between two tables in the table-level FK graph; `None` when
    /// they are disconnected.
    pub fn schema_distance(&self, table_a: &str, table_b: &str) -> Result<Option<usize>> {
        let a = self.table_index(table_a)?;
        let b = self.table_index(table_b)?;
        let mut dist = vec![usize::MAX; self.tables.len()];
        dist[a] = 0;
        let mut queue = VecDeque::from([a]);
        while let Some(t) = queue.pop_front() {
            if t == b {
                return Ok(Some(dist[t]));
            }
            for &(x, y) in &self.schema_links {
                let next = if x == t {
                    y
                } else if y == t {
                    x
                } else {
                    continue;
                };
                if dist[next] == usize::MAX {
                    dist[next] = dist[t] + 1;
                    queue.push_back(next);
                }
            }
        }
        Ok(None)
    }

    /// New graph with `edges` added under an augmented edge type. Only tables
    /// more than one schema hop apart may be linked. Adding nothing returns
    /// an identical graph.
    pub fn add_edges(&self, edge_type: &EdgeType, edges: &[(NodeRef, NodeRef)]) -> Result<HeteroGraph> {
        let EdgeType::Augmented { src, dst } = edge_type else {
            return Err(Error::Constraint(format!(
                "{edge_type} is a schema edge type; only augmented edges can be added"
            )));
        };
        if let Some(d) = self.schema_distance(src, dst)? {
            if d <= 1 {
                return Err(Error::Constraint(format!(
                    "{src} and {dst} are {d} schema hop(s) apart; augmented edges need more than 1"
                )));
            }
        }
        if edges.is_empty() {
            return Ok(self.clone());
        }
        let mut arcs = Vec::with_capacity(edges.len());
        for (a, b) in edges {
            if &a.table != src || &b.table != dst {
                return Err(Error::Constraint(format!(
                    "edge {a} -> {b} does not match edge type {edge_type}"
                )));
            }
            arcs.push((self.resolve(a)?, self.resolve(b)?));
        }

        let mut g = self.clone();
        match g.edge_types.binary_search(edge_type) {
            Ok(i) => {
                arcs.extend(g.adjacency[i].arcs());
                g.adjacency[i] = Csr::from_arcs(g.node_count(), arcs);
            }
            Err(i) => {
                g.edge_types.insert(i, edge_type.clone());
                g.adjacency.insert(i, Csr::from_arcs(g.node_count(), arcs));
            }
        }
        g.rebuild_merged();
        Ok(g)
    }

    /// Uniform sample without replacement of at most `max` out-neighbours,
    /// deterministic in `seed`. Returned in node order.
    pub fn neighbors(
        &self,
        v: &NodeRef,
        relation: Relation<'_>,
        max: usize,
        seed: u64,
    ) -> Result<Vec<NodeRef>> {
        let id = self.resolve(v)?;
        let all = self.out_neighbors(id, relation);
        let picked: Vec<NodeId> = if all.len() <= max {
            all.to_vec()
        } else {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let mut idx = sample(&mut rng, all.len(), max).into_vec();
            idx.sort_unstable();
            idx.into_iter().map(|i| all[i]).collect()
        };
        Ok(picked.into_iter().map(|u| self.node_ref(u)).collect())
    }

    /// Write `nodes.tsv` and one `edges_<type>.tsv` per edge type into `dir`.
    pub fn export_tsv(&self, dir: &Path) -> Result<()> {
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        let path = dir.join("nodes.tsv");
        let mut out = String::from("table\trow_id\n");
        for (ti, table) in self.tables.iter().enumerate() {
            for id in &self.row_ids[ti] {
                out.push_str(&format!("{table}\t{id}\n"));
            }
        }
        fs::write(&path, out).map_err(|e| Error::io(&path, e))?;

        for (ty, csr) in self.edge_types.iter().zip(&self.adjacency) {
            let path = dir.join(format!("edges_{}.tsv", ty.name()));
            let file = fs::File::create(&path).map_err(|e| Error::io(&path, e))?;
            let mut w = std::io::BufWriter::new(file);
            let mut write = || -> std::io::Result<()> {
                writeln!(w, "src_table\tsrc_id\tdst_table\tdst_id")?;
                for (a, b) in csr.arcs() {
                    let (a, b) = (self.node_ref(a), self.node_ref(b));
                    writeln!(w, "{}\t{}\t{}\t{}", a.table, a.row_id, b.table, b.row_id)?;
                }
                w.flush()
            };
            write().map_err(|e| Error::io(&path, e))?;
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::relational::{AttributeValue::*, ColumnKind, ColumnSpec, Table};

    fn key(s: &str) -> AttributeValue {
        Key(s.into())
    }

    /// USER(3) <- RATE(2) -> BIZ(2)
    fn user_rate_biz() -> Database {
        let mut user = Table::new("USER", vec![ColumnSpec::new("id", ColumnKind::PrimaryKey)]);
        for k in ["u0", "u1", "u2"] {
            user.push_row(vec![key(k)]);
        }
        let mut biz = Table::new("BIZ", vec![ColumnSpec::new("id", ColumnKind::PrimaryKey)]);
        for k in ["b0", "b1"] {
            biz.push_row(vec![key(k)]);
        }
        let mut rate = Table::new(
            "RATE",
            vec![
                ColumnSpec::new("user_id", "fk:USER.id".parse().unwrap()),
                ColumnSpec::new("biz_id", "fk:BIZ.id".parse().unwrap()),
            ],
        );
        rate.push_row(vec![key("u0"), key("b0")]);
        rate.push_row(vec![key("u1"), Null]);
        Database::from_tables(vec![user, biz, rate], "mem").unwrap()
    }

    fn aug(src: &str, dst: &str) -> EdgeType {
        EdgeType::Augmented {
            src: src.into(),
            dst: dst.into(),
        }
    }

    #[test]
    fn build_creates_one_node_per_tuple_and_typed_schema_edges() {
        let g = HeteroGraph::build(&user_rate_biz());
        assert_eq!(g.node_count(), 7);
        assert_eq!(g.edge_types().len(), 2);
        let by_user = EdgeType::Schema {
            table: "RATE".into(),
            column: "user_id".into(),
        };
        let by_biz = EdgeType::Schema {
            table: "RATE".into(),
            column: "biz_id".into(),
        };
        // two non-null user FKs, one non-null biz FK; both directions stored
        assert_eq!(g.arc_count(&by_user), 4);
        assert_eq!(g.arc_count(&by_biz), 2);
        let r1 = g.node_id(&NodeRef::new("RATE", 1)).unwrap();
        assert_eq!(g.out_neighbors(r1, Relation::Only(&by_biz)), &[] as &[usize]);
        assert_eq!(g.out_neighbors(r1, Relation::All).len(), 1);
    }

    #[test]
    fn node_refs_round_trip_through_ids() {
        let g = HeteroGraph::build(&user_rate_biz());
        for id in 0..g.node_count() {
            assert_eq!(g.node_id(&g.node_ref(id)), Some(id));
        }
        assert_eq!(g.table_of(0), "BIZ");
    }

    #[test]
    fn schema_distance_cases() {
        let g = HeteroGraph::build(&user_rate_biz());
        assert_eq!(g.schema_distance("USER", "BIZ").unwrap(), Some(2));
        assert_eq!(g.schema_distance("USER", "RATE").unwrap(), Some(1));
        assert_eq!(g.schema_distance("RATE", "RATE").unwrap(), Some(0));
        assert!(matches!(g.schema_distance("USER", "NOPE"), Err(Error::NotFound(_))));

        let lone = Table::new("LONE", vec![ColumnSpec::new("id", ColumnKind::PrimaryKey)]);
        let mut tables: Vec<Table> = user_rate_biz().tables.into_values().collect();
        tables.push(lone);
        let g = HeteroGraph::build(&Database::from_tables(tables, "mem").unwrap());
        assert_eq!(g.schema_distance("USER", "LONE").unwrap(), None);
    }

    #[test]
    fn add_edges_respects_schema_distance() {
        let g = HeteroGraph::build(&user_rate_biz());
        let same = g.add_edges(&aug("USER", "BIZ"), &[]).unwrap();
        assert_eq!(same, g);

        let err = g.add_edges(
            &aug("USER", "RATE"),
            &[(NodeRef::new("USER", 0), NodeRef::new("RATE", 0))],
        );
        assert!(matches!(err, Err(Error::Constraint(_))));

        let schema = EdgeType::Schema {
            table: "RATE".into(),
            column: "user_id".into(),
        };
        assert!(matches!(g.add_edges(&schema, &[]), Err(Error::Constraint(_))));
    }

    #[test]
    fn add_edges_is_directed_and_deduplicated() {
        let g = HeteroGraph::build(&user_rate_biz());
        let ty = aug("BIZ", "USER");
        let e = (NodeRef::new("BIZ", 1), NodeRef::new("USER", 2));
        let g2 = g.add_edges(&ty, &[e.clone(), e.clone()]).unwrap();
        assert_eq!(g2.arc_count(&ty), 1);
        assert_eq!(g2.node_count(), g.node_count());
        let b1 = g2.node_id(&e.0).unwrap();
        let u2 = g2.node_id(&e.1).unwrap();
        assert_eq!(g2.out_neighbors(b1, Relation::All), &[u2]);
        assert!(g2.out_neighbors(u2, Relation::All).is_empty());
        // undirected view sees both sides
        assert_eq!(g2.undirected_adjacency()[u2], vec![b1]);

        let g3 = g2.add_edges(&ty, &[e]).unwrap();
        assert_eq!(g3, g2);
    }

    #[test]
    fn add_edges_rejects_mismatched_endpoints() {
        let g = HeteroGraph::build(&user_rate_biz());
        let err = g.add_edges(
            &aug("USER", "BIZ"),
            &[(NodeRef::new("BIZ", 0), NodeRef::new("USER", 0))],
        );
        assert!(matches!(err, Err(Error::Constraint(_))));
        let err = g.add_edges(
            &aug("USER", "BIZ"),
            &[(NodeRef::new("USER", 9), NodeRef::new("BIZ", 0))],
        );
        assert!(matches!(err, Err(Error::NotFound(_))));
    }

    #[test]
    fn neighbor_sampling() {
        let g = HeteroGraph::build(&user_rate_biz());
        assert!(g
            .neighbors(&NodeRef::new("USER", 2), Relation::All, 10, 1)
            .unwrap()
            .is_empty());
        let r0 = NodeRef::new("RATE", 0);
        let both = g.neighbors(&r0, Relation::All, 10, 1).unwrap();
        assert_eq!(both, vec![NodeRef::new("BIZ", 0), NodeRef::new("USER", 0)]);
        let one = g.neighbors(&r0, Relation::All, 1, 42).unwrap();
        assert_eq!(one.len(), 1);
        assert_eq!(one, g.neighbors(&r0, Relation::All, 1, 42).unwrap());
    }

    #[test]
    fn self_referencing_fk_drops_loops() {
        let mut t = Table::new(
            "EMP",
            vec![
                ColumnSpec::new("id", ColumnKind::PrimaryKey),
                ColumnSpec::new("boss", "fk:EMP.id".parse().unwrap()),
            ],
        );
        t.push_row(vec![key("a"), key("a")]);
        t.push_row(vec![key("b"), key("a")]);
        let g = HeteroGraph::build(&Database::from_tables(vec![t], "mem").unwrap());
        let ty = EdgeType::Schema {
            table: "EMP".into(),
            column: "boss".into(),
        };
        assert_eq!(g.arc_count(&ty), 2);
    }

    #[test]
    fn export_writes_sorted_tsv() {
        let g = HeteroGraph::build(&user_rate_biz());
        let dir = tempfile::tempdir().unwrap();
        g.export_tsv(dir.path()).unwrap();
        let nodes = fs::read_to_string(dir.path().join("nodes.tsv")).unwrap();
        assert!(nodes.starts_with("table\trow_id\nBIZ\t0\nBIZ\t1\nRATE\t0\n"));
        let edges = fs::read_to_string(dir.path().join("edges_RATE.biz_id.tsv")).unwrap();
        assert_eq!(
            edges,
            "src_table\tsrc_id\tdst_table\tdst_id\nBIZ\t0\tRATE\t0\nRATE\t0\tBIZ\t0\n"
        );
    }
}
