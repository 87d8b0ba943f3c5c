//! On-disk index snapshot: `terms.dict`, `postings.bin` and `meta.json` in
//! one directory per table. Integers are unsigned LEB128 varints; row ids
//! and posting document positions are delta-encoded. The layout is
//! described byte by byte in `docs/index-format.md`.

use std::collections::BTreeMap;
use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{Bm25Params, Posting, TableIndex};
use crate::error::{Error, Result};
use crate::tokenizer::Term;

const DICT_MAGIC: &[u8; 4] = b"RATD";
const POSTINGS_MAGIC: &[u8; 4] = b"RAPB";
const FORMAT_VERSION: u32 = 1;

#[derive(Debug, Serialize, Deserialize)]
struct Meta {
    format_version: u32,
    table: String,
    doc_count: usize,
    avgdl: f64,
    k1: f64,
    b: f64,
}

fn put_varint(out: &mut Vec<u8>, mut v: u64) {
    while v >= 0x80 {
        out.push((v as u8) | 0x80);
        v >>= 7;
    }
    out.push(v as u8);
}

struct Cursor<'a> {
    buf: &'a [u8],
    pos: usize,
    what: &'static str,
}

impl<'a> Cursor<'a> {
    fn new(buf: &'a [u8], what: &'static str) -> Self {
        Cursor { buf, pos: 0, what }
    }

    fn err(&self, msg: &str) -> Error {
        Error::format(self.what, format!("{msg} at byte {}", self.pos))
    }

    fn bytes(&mut self, n: usize) -> Result<&'a [u8]> {
        let end = self.pos.checked_add(n).filter(|&e| e <= self.buf.len());
        let end = end.ok_or_else(|| self.err("unexpected end of data"))?;
        let s = &self.buf[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    fn header(&mut self, magic: &[u8; 4]) -> Result<()> {
        if self.bytes(4)? != magic {
            return Err(self.err("bad magic"));
        }
        let version = u32::from_le_bytes(self.bytes(4)?.try_into().unwrap());
        if version != FORMAT_VERSION {
            return Err(self.err(&format!("unsupported version {version}")));
        }
        Ok(())
    }

    fn varint(&mut self) -> Result<u64> {
        let mut v = 0u64;
        for shift in (0..64).step_by(7) {
            let byte = self.bytes(1)?[0];
            v |= u64::from(byte & 0x7f) << shift;
            if byte & 0x80 == 0 {
                return Ok(v);
            }
        }
        Err(self.err("varint overflow"))
    }

    fn usize(&mut self) -> Result<usize> {
        usize::try_from(self.varint()?).map_err(|_| self.err("value out of range"))
    }

    fn done(&self) -> Result<()> {
        if self.pos != self.buf.len() {
            return Err(self.err("trailing bytes"));
        }
        Ok(())
    }
}

/// Write the index into `dir` (created if needed).
pub fn save_index(index: &TableIndex, dir: &Path) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;

    let mut postings = Vec::new();
    postings.extend_from_slice(POSTINGS_MAGIC);
    postings.extend_from_slice(&FORMAT_VERSION.to_le_bytes());
    put_varint(&mut postings, index.row_ids.len() as u64);
    let mut prev = 0;
    for (&row, &len) in index.row_ids.iter().zip(&index.doc_lengths) {
        put_varint(&mut postings, (row - prev) as u64);
        put_varint(&mut postings, len);
        prev = row;
    }

    let mut dict = Vec::new();
    dict.extend_from_slice(DICT_MAGIC);
    dict.extend_from_slice(&FORMAT_VERSION.to_le_bytes());
    put_varint(&mut dict, index.postings.len() as u64);
    for (term, list) in &index.postings {
        let bytes = term.as_str().as_bytes();
        put_varint(&mut dict, bytes.len() as u64);
        dict.extend_from_slice(bytes);
        put_varint(&mut dict, postings.len() as u64);

        put_varint(&mut postings, list.len() as u64);
        let mut prev = 0;
        for p in list {
            put_varint(&mut postings, (p.doc - prev) as u64);
            put_varint(&mut postings, p.tf);
            prev = p.doc;
        }
    }

    let meta = Meta {
        format_version: FORMAT_VERSION,
        table: index.table.clone(),
        doc_count: index.doc_count(),
        avgdl: index.avgdl,
        k1: index.params.k1,
        b: index.params.b,
    };
    let write = |name: &str, bytes: &[u8]| {
        let path = dir.join(name);
        fs::write(&path, bytes).map_err(|e| Error::io(&path, e))
    };
    write("terms.dict", &dict)?;
    write("postings.bin", &postings)?;
    let meta_path = dir.join("meta.json");
    let body = serde_json::to_string_pretty(&meta).map_err(|e| Error::json(&meta_path, e))?;
    write("meta.json", format!("{body}\n").as_bytes())
}

pub fn load_index(dir: &Path) -> Result<TableIndex> {
    let read = |name: &str| {
        let path = dir.join(name);
        fs::read(&path).map_err(|e| Error::io(&path, e))
    };
    let meta_path = dir.join("meta.json");
    let meta: Meta = serde_json::from_slice(&read("meta.json")?).map_err(|e| Error::json(&meta_path, e))?;
    if meta.format_version != FORMAT_VERSION {
        return Err(Error::format("meta.json", format!("unsupported version {}", meta.format_version)));
    }
    let dict_bytes = read("terms.dict")?;
    let post_bytes = read("postings.bin")?;

    let mut post = Cursor::new(&post_bytes, "postings.bin");
    post.header(POSTINGS_MAGIC)?;
    let n = post.usize()?;
    if n != meta.doc_count {
        return Err(Error::format("index", format!("meta says {} documents, postings hold {n}", meta.doc_count)));
    }
    let mut row_ids = Vec::with_capacity(n);
    let mut doc_lengths = Vec::with_capacity(n);
    let mut prev = 0usize;
    for i in 0..n {
        let delta = post.usize()?;
        if i > 0 && delta == 0 {
            return Err(post.err("row ids not strictly increasing"));
        }
        prev = prev.checked_add(delta).ok_or_else(|| post.err("row id overflow"))?;
        row_ids.push(prev);
        doc_lengths.push(post.varint()?);
    }

    let mut dict = Cursor::new(&dict_bytes, "terms.dict");
    dict.header(DICT_MAGIC)?;
    let term_count = dict.usize()?;
    let mut postings = BTreeMap::new();
    let mut last: Option<Term> = None;
    for _ in 0..term_count {
        let len = dict.usize()?;
        let surface = std::str::from_utf8(dict.bytes(len)?).map_err(|_| dict.err("term is not UTF-8"))?;
        let term = Term::parse(surface)?;
        if last.as_ref().is_some_and(|l| l >= &term) {
            return Err(dict.err("terms not sorted"));
        }
        let offset = dict.usize()?;
        if offset != post.pos {
            return Err(dict.err("posting offset does not match postings.bin"));
        }
        let count = post.usize()?;
        let mut list = Vec::with_capacity(count.min(n));
        let mut doc = 0usize;
        for i in 0..count {
            let delta = post.usize()?;
            if i > 0 && delta == 0 {
                return Err(post.err("postings not strictly increasing"));
            }
            doc = doc.checked_add(delta).ok_or_else(|| post.err("posting overflow"))?;
            list.push(Posting { doc, tf: post.varint()? });
        }
        postings.insert(term.clone(), list);
        last = Some(term);
    }
    dict.done()?;
    post.done()?;

    let index = TableIndex::from_parts(
        meta.table,
        row_ids,
        doc_lengths,
        postings,
        Bm25Params { k1: meta.k1, b: meta.b },
    )?;
    if index.avgdl.to_bits() != meta.avgdl.to_bits() {
        return Err(Error::format("meta.json", "avgdl does not match the stored document lengths"));
    }
    Ok(index)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::documenter::TupleDocument;
    use crate::graph::NodeRef;

    fn docs() -> Vec<TupleDocument> {
        let mk = |row: usize, terms: &[(&str, u64)]| {
            TupleDocument::new(
                NodeRef::new("T", row),
                terms
                    .iter()
                    .map(|(t, c)| (Term::parse(&format!("T.c={t}")).unwrap(), *c))
                    .collect(),
            )
            .unwrap()
        };
        vec![
            mk(3, &[("a", 300), ("b", 1)]),
            mk(10, &[("b", 2), ("ünïcode", 5)]),
            mk(400, &[("a", 1), ("c", 129)]),
        ]
    }

    #[test]
    fn varints_round_trip() {
        for v in [0, 1, 127, 128, 300, u32::MAX as u64, u64::MAX] {
            let mut buf = Vec::new();
            put_varint(&mut buf, v);
            let mut c = Cursor::new(&buf, "test");
            assert_eq!(c.varint().unwrap(), v);
            c.done().unwrap();
        }
    }

    #[test]
    fn save_load_reproduces_scores_bit_for_bit() {
        let params = Bm25Params { k1: 0.9, b: 0.4 };
        let idx = TableIndex::build(&docs(), params).unwrap();
        let dir = tempfile::tempdir().unwrap();
        save_index(&idx, dir.path()).unwrap();
        let back = load_index(dir.path()).unwrap();
        assert_eq!(back, idx);
        for q in &docs() {
            for &row in idx.row_ids() {
                let a = idx.bm25_score(q, row).unwrap();
                let b = back.bm25_score(q, row).unwrap();
                assert_eq!(a.to_bits(), b.to_bits());
            }
        }
    }

    #[test]
    fn corrupted_files_are_rejected() {
        let idx = TableIndex::build(&docs(), Bm25Params::default()).unwrap();
        let dir = tempfile::tempdir().unwrap();
        save_index(&idx, dir.path()).unwrap();
        let path = dir.path().join("postings.bin");
        let mut bytes = fs::read(&path).unwrap();
        bytes.truncate(bytes.len() - 1);
        fs::write(&path, &bytes).unwrap();
        assert!(matches!(load_index(dir.path()), Err(Error::Format { .. })));

        save_index(&idx, dir.path()).unwrap();
        let path = dir.path().join("terms.dict");
        let mut bytes = fs::read(&path).unwrap();
        bytes[0] = b'X';
        fs::write(&path, &bytes).unwrap();
        assert!(matches!(load_index(dir.path()), Err(Error::Format { .. })));
    }
}
