//! Typed in-memory relational database: schema manifest, CSV ingest,
//! time snapshots and canonical re-serialization.
//!
//! Row ids are table-local and assigned from file order at ingest. They stay
//! stable under [`Database::snapshot`], so a filtered table may have gaps in
//! its id sequence; rows are always kept sorted by id.

use std::collections::{BTreeMap, HashMap, HashSet};
use std::fmt;
use std::fs;
use std::path::{Path, PathBuf};

use chrono::{DateTime, NaiveDate, NaiveDateTime};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Snapshot time that keeps every row.
pub const END_OF_TIME: i64 = i64::MAX;

#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub enum ColumnKind {
    Numeric,
    Categorical,
    Text,
    PrimaryKey,
    ForeignKey { table: String, column: String },
    Timestamp,
}

impl ColumnKind {
    pub fn is_key(&self) -> bool {
        matches!(self, ColumnKind::PrimaryKey | ColumnKind::ForeignKey { .. })
    }

    /// Columns whose values are attributes rather than identifiers or time.
    pub fn is_attribute(&self) -> bool {
        matches!(
            self,
            ColumnKind::Numeric | ColumnKind::Categorical | ColumnKind::Text
        )
    }
}

impl fmt::Display for ColumnKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            ColumnKind::Numeric => f.write_str("numeric"),
            ColumnKind::Categorical => f.write_str("categorical"),
            ColumnKind::Text => f.write_str("text"),
            ColumnKind::PrimaryKey => f.write_str("pk"),
            ColumnKind::ForeignKey { table, column } => write!(f, "fk:{table}.{column}"),
            ColumnKind::Timestamp => f.write_str("timestamp"),
        }
    }
}

impl std::str::FromStr for ColumnKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Ok(match s {
            "numeric" => ColumnKind::Numeric,
            "categorical" => ColumnKind::Categorical,
            "text" => ColumnKind::Text,
            "pk" => ColumnKind::PrimaryKey,
            "timestamp" => ColumnKind::Timestamp,
            other => {
                let target = other
                    .strip_prefix("fk:")
                    .ok_or_else(|| Error::Manifest(format!("unknown column kind {other:?}")))?;
                let (table, column) = target.split_once('.').ok_or_else(|| {
                    Error::Manifest(format!("foreign key target {target:?} is not TABLE.COLUMN"))
                })?;
                if table.is_empty() || column.is_empty() {
                    return Err(Error::Manifest(format!("empty foreign key target in {other:?}")));
                }
                ColumnKind::ForeignKey {
                    table: table.to_string(),
                    column: column.to_string(),
                }
            }
        })
    }
}

impl Serialize for ColumnKind {
    fn serialize<S: serde::Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        s.collect_str(self)
    }
}

impl<'de> Deserialize<'de> for ColumnKind {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        let raw = String::deserialize(d)?;
        raw.parse().map_err(serde::de::Error::custom)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ColumnSpec {
    pub name: String,
    pub kind: ColumnKind,
}

impl ColumnSpec {
    pub fn new(name: impl Into<String>, kind: ColumnKind) -> Self {
        ColumnSpec {
            name: name.into(),
            kind,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum TableRole {
    Entity,
    Relationship,
}

#[derive(Debug, Clone, PartialEq)]
pub enum AttributeValue {
    Number(f64),
    Category(String),
    Text(String),
    Key(String),
    /// Epoch seconds.
    Timestamp(i64),
    Null,
}

impl AttributeValue {
    pub fn is_null(&self) -> bool {
        matches!(self, AttributeValue::Null)
    }

    fn matches_kind(&self, kind: &ColumnKind) -> bool {
        match (self, kind) {
            (AttributeValue::Null, ColumnKind::PrimaryKey) => false,
            (AttributeValue::Null, _) => true,
            (AttributeValue::Number(x), ColumnKind::Numeric) => x.is_finite(),
            (AttributeValue::Category(_), ColumnKind::Categorical) => true,
            (AttributeValue::Text(_), ColumnKind::Text) => true,
            (AttributeValue::Key(_), ColumnKind::PrimaryKey | ColumnKind::ForeignKey { .. }) => {
                true
            }
            (AttributeValue::Timestamp(_), ColumnKind::Timestamp) => true,
            _ => false,
        }
    }

    /// CSV cell text; the inverse of [`parse_cell`].
    pub fn to_cell(&self) -> String {
        match self {
            AttributeValue::Number(x) => x.to_string(),
            AttributeValue::Category(s) | AttributeValue::Text(s) | AttributeValue::Key(s) => {
                s.clone()
            }
            AttributeValue::Timestamp(t) => t.to_string(),
            AttributeValue::Null => String::new(),
        }
    }
}

/// Parse one CSV cell for a column kind. Empty cells are `Null` for every kind.
pub fn parse_cell(cell: &str, kind: &ColumnKind) -> std::result::Result<AttributeValue, String> {
    if cell.is_empty() {
        return Ok(AttributeValue::Null);
    }
    match kind {
        ColumnKind::Numeric => {
            let x: f64 = cell
                .trim()
                .parse()
                .map_err(|_| format!("{cell:?} is not a number"))?;
            if !x.is_finite() {
                return Err(format!("{cell:?} is not a finite number"));
            }
            Ok(AttributeValue::Number(x))
        }
        ColumnKind::Categorical => Ok(AttributeValue::Category(cell.to_string())),
        ColumnKind::Text => Ok(AttributeValue::Text(cell.to_string())),
        ColumnKind::PrimaryKey | ColumnKind::ForeignKey { .. } => {
            Ok(AttributeValue::Key(cell.to_string()))
        }
        ColumnKind::Timestamp => parse_timestamp(cell.trim())
            .map(AttributeValue::Timestamp)
            .ok_or_else(|| format!("{cell:?} is neither epoch seconds nor ISO-8601")),
    }
}

/// Epoch seconds, or an ISO-8601 date / datetime (naive values are read as UTC).
pub fn parse_timestamp(s: &str) -> Option<i64> {
    if let Ok(t) = s.parse::<i64>() {
        return Some(t);
    }
    if let Ok(dt) = DateTime::parse_from_rfc3339(s) {
        return Some(dt.timestamp());
    }
    for fmt in ["%Y-%m-%dT%H:%M:%S%.f", "%Y-%m-%d %H:%M:%S%.f"] {
        if let Ok(dt) = NaiveDateTime::parse_from_str(s, fmt) {
            return Some(dt.and_utc().timestamp());
        }
    }
    NaiveDate::parse_from_str(s, "%Y-%m-%d")
        .ok()
        .and_then(|d| d.and_hms_opt(0, 0, 0))
        .map(|dt| dt.and_utc().timestamp())
}

#[derive(Debug, Clone, PartialEq)]
pub struct Tuple {
    pub row_id: usize,
    pub values: Vec<AttributeValue>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Table {
    pub name: String,
    pub columns: Vec<ColumnSpec>,
    pub rows: Vec<Tuple>,
    /// Manifest override for entity/relationship classification.
    pub role: Option<TableRole>,
}

impl Table {
    pub fn new(name: impl Into<String>, columns: Vec<ColumnSpec>) -> Self {
        Table {
            name: name.into(),
            columns,
            rows: Vec::new(),
            role: None,
        }
    }

    /// Append a row with the next free row id.
    pub fn push_row(&mut self, values: Vec<AttributeValue>) -> usize {
        let row_id = self.rows.last().map_or(0, |r| r.row_id + 1);
        self.rows.push(Tuple { row_id, values });
        row_id
    }

    pub fn column_index(&self, name: &str) -> Option<usize> {
        self.columns.iter().position(|c| c.name == name)
    }

    pub fn pk_column(&self) -> Option<usize> {
        self.columns
            .iter()
            .position(|c| c.kind == ColumnKind::PrimaryKey)
    }

    /// The designated timestamp column: the first one declared.
    pub fn timestamp_column(&self) -> Option<usize> {
        self.columns
            .iter()
            .position(|c| c.kind == ColumnKind::Timestamp)
    }

    /// `(column index, target table, target column)` for every FK column.
    pub fn foreign_keys(&self) -> impl Iterator<Item = (usize, &str, &str)> {
        self.columns
            .iter()
            .enumerate()
            .filter_map(|(i, c)| match &c.kind {
                ColumnKind::ForeignKey { table, column } => Some((i, table.as_str(), column.as_str())),
                _ => None,
            })
    }

    pub fn row(&self, row_id: usize) -> Option<&Tuple> {
        self.rows
            .binary_search_by_key(&row_id, |r| r.row_id)
            .ok()
            .map(|i| &self.rows[i])
    }

    pub fn len(&self) -> usize {
        self.rows.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rows.is_empty()
    }

    /// Map from primary-key value to row id.
    pub fn pk_lookup(&self) -> HashMap<&str, usize> {
        let Some(pk) = self.pk_column() else {
            return HashMap::new();
        };
        self.rows
            .iter()
            .filter_map(|r| match &r.values[pk] {
                AttributeValue::Key(k) => Some((k.as_str(), r.row_id)),
                _ => None,
            })
            .collect()
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
struct ManifestFile {
    tables: Vec<ManifestTable>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
struct ManifestTable {
    name: String,
    columns: Vec<ColumnSpec>,
    csv: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    role: Option<TableRole>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Database {
    pub tables: BTreeMap<String, Table>,
    pub manifest_path: PathBuf,
}

impl Database {
    /// Assemble a database from in-memory tables, enforcing every schema and
    /// referential invariant that [`Database::ingest`] enforces.
    pub fn from_tables(tables: Vec<Table>, manifest_path: impl Into<PathBuf>) -> Result<Self> {
        let mut map = BTreeMap::new();
        for table in tables {
            if map.contains_key(&table.name) {
                return Err(Error::Manifest(format!("table {} declared twice", table.name)));
            }
            map.insert(table.name.clone(), table);
        }
        let db = Database {
            tables: map,
            manifest_path: manifest_path.into(),
        };
        db.validate_schema()?;
        for table in db.tables.values() {
            validate_rows(table)?;
        }
        db.validate_references()?;
        Ok(db)
    }

    pub fn ingest(manifest_path: &Path, data_dir: &Path) -> Result<Self> {
        let raw = fs::read_to_string(manifest_path).map_err(|e| Error::io(manifest_path, e))?;
        let manifest: ManifestFile =
            serde_json::from_str(&raw).map_err(|e| Error::json(manifest_path, e))?;
        let tables = manifest
            .tables
            .par_iter()
            .map(|spec| load_table(spec, data_dir))
            .collect::<Result<Vec<_>>>()?;
        Database::from_tables(tables, manifest_path)
    }

    pub fn table(&self, name: &str) -> Result<&Table> {
        self.tables
            .get(name)
            .ok_or_else(|| Error::NotFound(format!("table {name}")))
    }

    pub fn total_rows(&self) -> usize {
        self.tables.values().map(Table::len).sum()
    }

    fn validate_schema(&self) -> Result<()> {
        for table in self.tables.values() {
            check_identifier(&table.name)?;
            let mut seen = HashSet::new();
            for col in &table.columns {
                check_identifier(&col.name)?;
                if !seen.insert(col.name.as_str()) {
                    return Err(Error::Manifest(format!(
                        "column {}.{} declared twice",
                        table.name, col.name
                    )));
                }
            }
            let pks = table
                .columns
                .iter()
                .filter(|c| c.kind == ColumnKind::PrimaryKey)
                .count();
            if pks > 1 {
                return Err(Error::Manifest(format!(
                    "table {} declares {pks} primary keys; at most one is supported",
                    table.name
                )));
            }
            for (_, target, target_col) in table.foreign_keys() {
                let target_table = self.tables.get(target).ok_or_else(|| {
                    Error::Manifest(format!(
                        "{} references unknown table {target}",
                        table.name
                    ))
                })?;
                let is_pk = target_table
                    .column_index(target_col)
                    .is_some_and(|i| target_table.columns[i].kind == ColumnKind::PrimaryKey);
                if !is_pk {
                    return Err(Error::Manifest(format!(
                        "{} references {target}.{target_col}, which is not a primary key",
                        table.name
                    )));
                }
            }
        }
        Ok(())
    }

    fn validate_references(&self) -> Result<()> {
        let lookups: HashMap<&str, HashMap<&str, usize>> = self
            .tables
            .iter()
            .map(|(name, t)| (name.as_str(), t.pk_lookup()))
            .collect();
        for table in self.tables.values() {
            for (col, target, target_col) in table.foreign_keys() {
                let lookup = &lookups[target];
                let dangling: Vec<usize> = table
                    .rows
                    .iter()
                    .filter(|r| match &r.values[col] {
                        AttributeValue::Key(k) => !lookup.contains_key(k.as_str()),
                        _ => false,
                    })
                    .map(|r| r.row_id)
                    .collect();
                if !dangling.is_empty() {
                    return Err(Error::Referential {
                        table: table.name.clone(),
                        column: table.columns[col].name.clone(),
                        target: format!("{target}.{target_col}"),
                        rows: dangling,
                    });
                }
            }
        }
        Ok(())
    }

    /// The database as of time `t`: timestamped rows later than `t` are
    /// dropped and foreign keys that pointed at dropped rows become `Null`.
    /// Rows whose timestamp is `Null` are kept.
    pub fn snapshot(&self, t: i64) -> Database {
        let mut tables: BTreeMap<String, Table> = self
            .tables
            .iter()
            .map(|(name, table)| {
                let mut table = table.clone();
                if let Some(ts) = table.timestamp_column() {
                    table.rows.retain(|r| match r.values[ts] {
                        AttributeValue::Timestamp(v) => v <= t,
                        _ => true,
                    });
                }
                (name.clone(), table)
            })
            .collect();

        let surviving: HashMap<String, HashSet<String>> = tables
            .iter()
            .map(|(name, t)| {
                (
                    name.clone(),
                    t.pk_lookup().into_keys().map(str::to_string).collect(),
                )
            })
            .collect();
        for table in tables.values_mut() {
            let fks: Vec<(usize, String)> = table
                .foreign_keys()
                .map(|(i, target, _)| (i, target.to_string()))
                .collect();
            for (col, target) in fks {
                let alive = &surviving[&target];
                for row in &mut table.rows {
                    if let AttributeValue::Key(k) = &row.values[col] {
                        if !alive.contains(k) {
                            row.values[col] = AttributeValue::Null;
                        }
                    }
                }
            }
        }
        Database {
            tables,
            manifest_path: self.manifest_path.clone(),
        }
    }

    /// Write `manifest.json` and one CSV per table into `dir`. Row ids are
    /// not persisted: re-ingesting renumbers rows densely in file order.
    pub fn write_to(&self, dir: &Path) -> Result<PathBuf> {
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        let mut manifest = ManifestFile { tables: Vec::new() };
        for table in self.tables.values() {
            let file = format!("{}.csv", table.name);
            let path = dir.join(&file);
            let mut w = csv::Writer::from_path(&path).map_err(|e| Error::csv(&path, e))?;
            w.write_record(table.columns.iter().map(|c| c.name.as_str()))
                .map_err(|e| Error::csv(&path, e))?;
            for row in &table.rows {
                w.write_record(row.values.iter().map(AttributeValue::to_cell))
                    .map_err(|e| Error::csv(&path, e))?;
            }
            w.flush().map_err(|e| Error::io(&path, e))?;
            manifest.tables.push(ManifestTable {
                name: table.name.clone(),
                columns: table.columns.clone(),
                csv: file,
                role: table.role,
            });
        }
        let path = dir.join("manifest.json");
        let body = serde_json::to_string_pretty(&manifest).map_err(|e| Error::json(&path, e))?;
        fs::write(&path, body + "\n").map_err(|e| Error::io(&path, e))?;
        Ok(path)
    }
}

fn check_identifier(name: &str) -> Result<()> {
    if name.is_empty() || name.contains(['.', '=', '\t', '\n']) {
        return Err(Error::Manifest(format!(
            "invalid name {name:?}: names must be non-empty and free of '.', '=', tabs and newlines"
        )));
    }
    Ok(())
}

fn validate_rows(table: &Table) -> Result<()> {
    let width = table.columns.len();
    let mut last_id = None;
    for row in &table.rows {
        if row.values.len() != width {
            return Err(Error::Ingest {
                table: table.name.clone(),
                column: String::from("*"),
                row: Some(row.row_id),
                message: format!("expected {width} values, found {}", row.values.len()),
            });
        }
        if last_id.is_some_and(|last| row.row_id <= last) {
            return Err(Error::Ingest {
                table: table.name.clone(),
                column: String::from("*"),
                row: Some(row.row_id),
                message: "row ids must be unique and ascending".into(),
            });
        }
        last_id = Some(row.row_id);
        for (value, col) in row.values.iter().zip(&table.columns) {
            if !value.matches_kind(&col.kind) {
                if col.kind == ColumnKind::PrimaryKey && value.is_null() {
                    return Err(Error::PrimaryKey {
                        table: table.name.clone(),
                        column: col.name.clone(),
                        message: format!("null primary key in row {}", row.row_id),
                    });
                }
                return Err(Error::Ingest {
                    table: table.name.clone(),
                    column: col.name.clone(),
                    row: Some(row.row_id),
                    message: format!("value {value:?} does not fit kind {}", col.kind),
                });
            }
        }
    }
    if let Some(pk) = table.pk_column() {
        let mut seen: HashMap<&str, usize> = HashMap::new();
        for row in &table.rows {
            if let AttributeValue::Key(k) = &row.values[pk] {
                if let Some(first) = seen.insert(k.as_str(), row.row_id) {
                    return Err(Error::PrimaryKey {
                        table: table.name.clone(),
                        column: table.columns[pk].name.clone(),
                        message: format!(
                            "duplicate value {k:?} in rows {first} and {}",
                            row.row_id
                        ),
                    });
                }
            }
        }
    }
    Ok(())
}

fn load_table(spec: &ManifestTable, data_dir: &Path) -> Result<Table> {
    let path = data_dir.join(&spec.csv);
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(true)
        .from_path(&path)
        .map_err(|e| Error::csv(&path, e))?;
    let header = reader.headers().map_err(|e| Error::csv(&path, e))?.clone();
    let expected: Vec<&str> = spec.columns.iter().map(|c| c.name.as_str()).collect();
    let found: Vec<&str> = header.iter().collect();
    if expected != found {
        let column = expected
            .iter()
            .zip(found.iter().chain(std::iter::repeat(&"")))
            .find(|(e, f)| e != f)
            .map(|(e, _)| e.to_string())
            .unwrap_or_else(|| found.get(expected.len()).unwrap_or(&"").to_string());
        return Err(Error::Ingest {
            table: spec.name.clone(),
            column,
            row: None,
            message: format!("CSV header {found:?} does not match manifest columns {expected:?}"),
        });
    }

    let mut table = Table::new(spec.name.clone(), spec.columns.clone());
    table.role = spec.role;
    for (row_id, record) in reader.records().enumerate() {
        let record = record.map_err(|e| Error::csv(&path, e))?;
        if record.len() != spec.columns.len() {
            return Err(Error::Ingest {
                table: spec.name.clone(),
                column: String::from("*"),
                row: Some(row_id),
                message: format!("expected {} fields, found {}", spec.columns.len(), record.len()),
            });
        }
        let values = record
            .iter()
            .zip(&spec.columns)
            .map(|(cell, col)| {
                parse_cell(cell, &col.kind).map_err(|message| Error::Ingest {
                    table: spec.name.clone(),
                    column: col.name.clone(),
                    row: Some(row_id),
                    message,
                })
            })
            .collect::<Result<Vec<_>>>()?;
        table.rows.push(Tuple { row_id, values });
    }
    Ok(table)
}

#[cfg(test)]
mod tests {
    use super::*;
    use AttributeValue::*;

    fn key(s: &str) -> AttributeValue {
        Key(s.to_string())
    }

    fn user_rate() -> Database {
        let mut user = Table::new(
            "USER",
            vec![
                ColumnSpec::new("id", ColumnKind::PrimaryKey),
                ColumnSpec::new("status", ColumnKind::Categorical),
            ],
        );
        user.push_row(vec![key("u1"), Category("active".into())]);
        user.push_row(vec![key("u2"), Null]);
        let mut rate = Table::new(
            "RATE",
            vec![
                ColumnSpec::new("user_id", "fk:USER.id".parse().unwrap()),
                ColumnSpec::new("ts", ColumnKind::Timestamp),
                ColumnSpec::new("stars", ColumnKind::Numeric),
            ],
        );
        rate.push_row(vec![key("u1"), Timestamp(100), Number(4.0)]);
        rate.push_row(vec![key("u2"), Timestamp(200), Number(2.5)]);
        rate.push_row(vec![Null, Timestamp(300), Null]);
        Database::from_tables(vec![user, rate], "mem").unwrap()
    }

    #[test]
    fn column_kind_round_trips_through_manifest_strings() {
        for s in ["numeric", "categorical", "text", "pk", "timestamp", "fk:USER.id"] {
            let kind: ColumnKind = s.parse().unwrap();
            assert_eq!(kind.to_string(), s);
        }
        assert!("fk:USER".parse::<ColumnKind>().is_err());
        assert!("blob".parse::<ColumnKind>().is_err());
    }

    #[test]
    fn timestamps_accept_epoch_and_iso() {
        assert_eq!(parse_timestamp("86400"), Some(86400));
        assert_eq!(parse_timestamp("1970-01-02"), Some(86400));
        assert_eq!(parse_timestamp("1970-01-02T00:00:10"), Some(86410));
        assert_eq!(parse_timestamp("1970-01-02T01:00:00+01:00"), Some(86400));
        assert_eq!(parse_timestamp("yesterday"), None);
    }

    #[test]
    fn empty_cell_is_null_for_every_kind() {
        for kind in ["numeric", "categorical", "text", "pk", "timestamp", "fk:A.id"] {
            assert_eq!(parse_cell("", &kind.parse().unwrap()).unwrap(), Null);
        }
    }

    #[test]
    fn dangling_fk_is_rejected() {
        let db = user_rate();
        let mut tables: Vec<Table> = db.tables.into_values().collect();
        let rate = tables.iter_mut().find(|t| t.name == "RATE").unwrap();
        rate.push_row(vec![key("ghost"), Timestamp(5), Null]);
        match Database::from_tables(tables, "mem") {
            Err(Error::Referential { table, rows, .. }) => {
                assert_eq!(table, "RATE");
                assert_eq!(rows, vec![3]);
            }
            other => panic!("expected referential error, got {other:?}"),
        }
    }

    #[test]
    fn duplicate_and_null_pk_are_rejected() {
        let mut t = Table::new("A", vec![ColumnSpec::new("id", ColumnKind::PrimaryKey)]);
        t.push_row(vec![key("1")]);
        t.push_row(vec![key("1")]);
        assert!(matches!(
            Database::from_tables(vec![t], "mem"),
            Err(Error::PrimaryKey { .. })
        ));
        let mut t = Table::new("A", vec![ColumnSpec::new("id", ColumnKind::PrimaryKey)]);
        t.push_row(vec![Null]);
        assert!(matches!(
            Database::from_tables(vec![t], "mem"),
            Err(Error::PrimaryKey { .. })
        ));
    }

    #[test]
    fn two_primary_keys_rejected() {
        let t = Table::new(
            "A",
            vec![
                ColumnSpec::new("id", ColumnKind::PrimaryKey),
                ColumnSpec::new("id2", ColumnKind::PrimaryKey),
            ],
        );
        assert!(matches!(
            Database::from_tables(vec![t], "mem"),
            Err(Error::Manifest(_))
        ));
    }

    #[test]
    fn fk_must_target_a_primary_key() {
        let a = Table::new(
            "A",
            vec![
                ColumnSpec::new("id", ColumnKind::PrimaryKey),
                ColumnSpec::new("name", ColumnKind::Categorical),
            ],
        );
        let b = Table::new("B", vec![ColumnSpec::new("a", "fk:A.name".parse().unwrap())]);
        assert!(matches!(
            Database::from_tables(vec![a, b], "mem"),
            Err(Error::Manifest(_))
        ));
    }

    #[test]
    fn snapshot_before_everything_empties_timestamped_tables() {
        let db = user_rate();
        let snap = db.snapshot(0);
        assert!(snap.table("RATE").unwrap().is_empty());
        assert_eq!(snap.table("USER").unwrap(), db.table("USER").unwrap());
    }

    #[test]
    fn snapshot_at_end_of_time_is_identity() {
        let db = user_rate();
        assert_eq!(db.snapshot(END_OF_TIME), db);
    }

    #[test]
    fn snapshot_keeps_row_ids_and_is_idempotent() {
        let db = user_rate();
        let snap = db.snapshot(250);
        let ids: Vec<usize> = snap.table("RATE").unwrap().rows.iter().map(|r| r.row_id).collect();
        assert_eq!(ids, vec![0, 1]);
        assert_eq!(snap.snapshot(250), snap);
    }

    #[test]
    fn snapshot_nulls_foreign_keys_to_filtered_rows() {
        let mut user = Table::new(
            "USER",
            vec![
                ColumnSpec::new("id", ColumnKind::PrimaryKey),
                ColumnSpec::new("joined", ColumnKind::Timestamp),
            ],
        );
        user.push_row(vec![key("u1"), Timestamp(10)]);
        user.push_row(vec![key("u2"), Timestamp(50)]);
        let mut post = Table::new(
            "POST",
            vec![
                ColumnSpec::new("id", ColumnKind::PrimaryKey),
                ColumnSpec::new("author", "fk:USER.id".parse().unwrap()),
            ],
        );
        post.push_row(vec![key("p1"), key("u1")]);
        post.push_row(vec![key("p2"), key("u2")]);
        let db = Database::from_tables(vec![user, post], "mem").unwrap();
        let snap = db.snapshot(20);
        let post = snap.table("POST").unwrap();
        assert_eq!(post.rows[0].values[1], key("u1"));
        assert_eq!(post.rows[1].values[1], Null);
    }

    #[test]
    fn ingest_reads_manifest_and_csv() {
        let dir = tempfile::tempdir().unwrap();
        fs::write(
            dir.path().join("manifest.json"),
            r#"{"tables":[
                {"name":"USER","columns":[{"name":"id","kind":"pk"},{"name":"status","kind":"categorical"}],"csv":"user.csv"},
                {"name":"RATE","columns":[{"name":"user_id","kind":"fk:USER.id"},{"name":"at","kind":"timestamp"}],"csv":"rate.csv","role":"relationship"}
            ]}"#,
        )
        .unwrap();
        fs::write(dir.path().join("user.csv"), "id,status\n1,active\n2,\n").unwrap();
        fs::write(dir.path().join("rate.csv"), "user_id,at\n1,2024-01-01\n,5\n").unwrap();
        let db = Database::ingest(&dir.path().join("manifest.json"), dir.path()).unwrap();
        let user = db.table("USER").unwrap();
        assert_eq!(user.len(), 2);
        assert_eq!(user.rows[1].values[1], Null);
        let rate = db.table("RATE").unwrap();
        assert_eq!(rate.role, Some(TableRole::Relationship));
        assert_eq!(rate.rows[0].values[1], Timestamp(1_704_067_200));
        assert_eq!(rate.rows[1].values[0], Null);
    }

    #[test]
    fn ingest_reports_table_and_column_on_bad_cell() {
        let dir = tempfile::tempdir().unwrap();
        fs::write(
            dir.path().join("m.json"),
            r#"{"tables":[{"name":"T","columns":[{"name":"id","kind":"pk"},{"name":"x","kind":"numeric"}],"csv":"t.csv"}]}"#,
        )
        .unwrap();
        fs::write(dir.path().join("t.csv"), "id,x\n1,2.5\n2,abc\n").unwrap();
        match Database::ingest(&dir.path().join("m.json"), dir.path()) {
            Err(Error::Ingest { table, column, row, .. }) => {
                assert_eq!((table.as_str(), column.as_str(), row), ("T", "x", Some(1)));
            }
            other => panic!("expected ingest error, got {other:?}"),
        }
        fs::write(dir.path().join("t.csv"), "id,y\n1,2\n").unwrap();
        assert!(matches!(
            Database::ingest(&dir.path().join("m.json"), dir.path()),
            Err(Error::Ingest { column, .. }) if column == "x"
        ));
    }

    #[test]
    fn write_then_ingest_preserves_rows_kinds_and_keys() {
        let db = user_rate();
        let dir = tempfile::tempdir().unwrap();
        let manifest = db.write_to(dir.path()).unwrap();
        let back = Database::ingest(&manifest, dir.path()).unwrap();
        assert_eq!(back.tables, db.tables);
    }
}
