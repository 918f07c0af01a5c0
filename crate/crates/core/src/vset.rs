//! On-disk formats: the binary `.vset` vector file and its `.jsonl` sidecar.
//!
//! Layout of a vector file:
//!
//! ```text
//! "VSET1"                      5 bytes
//! header length                u32, little endian
//! header                       UTF-8 JSON {"dim","count","metric","version":1}
//! payload                      count * dim f32, little endian, row-major by id
//! ```
//!
//! Ids in a vector file are implicit (`0..count`). The sidecar carries one
//! JSON object per line: `{"id": 3, "class": "car", ...free scalar fields}`.

use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Read, Write};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use serde_json::{Map, Value};

use crate::embedding::{Embedding, Metric};
use crate::error::{Error, Result};
use crate::store::{MetaValue, Metadata, StoredItem, VectorStore};

pub const MAGIC: &[u8; 5] = b"VSET1";
pub const FORMAT_VERSION: u32 = 1;

/// File names used inside a store directory.
pub const STORE_VSET: &str = "store.vset";
pub const STORE_META: &str = "store.jsonl";

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct VsetHeader {
    pub dim: usize,
    pub count: usize,
    pub metric: Metric,
    pub version: u32,
}

/// One sidecar line.
#[derive(Debug, Clone, PartialEq)]
pub struct MetaRecord {
    pub id: u64,
    pub class: Option<String>,
    pub fields: Metadata,
}

pub fn write_vset<W: Write>(store: &VectorStore, mut w: W) -> Result<()> {
    let items = store.sorted_items();
    if items.iter().enumerate().any(|(i, it)| it.id != i as u64) {
        return Err(Error::NonContiguousIds);
    }
    let header = VsetHeader {
        dim: store.dim(),
        count: items.len(),
        metric: store.metric(),
        version: FORMAT_VERSION,
    };
    let header = serde_json::to_vec(&header)?;
    w.write_all(MAGIC)?;
    w.write_all(&(header.len() as u32).to_le_bytes())?;
    w.write_all(&header)?;
    for it in items {
        for v in it.embedding.as_slice() {
            w.write_all(&v.to_le_bytes())?;
        }
    }
    w.flush()?;
    Ok(())
}

pub fn read_vset<R: Read>(mut r: R) -> Result<(VsetHeader, Vec<Embedding>)> {
    let mut bytes = Vec::new();
    r.read_to_end(&mut bytes)?;
    parse_vset(&bytes)
}

pub fn parse_vset(bytes: &[u8]) -> Result<(VsetHeader, Vec<Embedding>)> {
    if bytes.len() < MAGIC.len() || &bytes[..MAGIC.len()] != MAGIC {
        return Err(Error::BadMagic);
    }
    let rest = &bytes[MAGIC.len()..];
    if rest.len() < 4 {
        return Err(Error::Truncated {
            expected: 4,
            actual: rest.len(),
        });
    }
    let header_len = u32::from_le_bytes(rest[..4].try_into().expect("4 bytes")) as usize;
    let rest = &rest[4..];
    if rest.len() < header_len {
        return Err(Error::Truncated {
            expected: header_len,
            actual: rest.len(),
        });
    }
    let header: VsetHeader =
        serde_json::from_slice(&rest[..header_len]).map_err(|e| Error::BadHeader(e.to_string()))?;
    if header.version != FORMAT_VERSION {
        return Err(Error::BadHeader(format!(
            "unsupported version {}",
            header.version
        )));
    }
    let payload = &rest[header_len..];
    let expected = header
        .count
        .checked_mul(header.dim)
        .and_then(|n| n.checked_mul(4))
        .ok_or_else(|| Error::BadHeader("count * dim overflows".into()))?;
    if payload.len() < expected {
        return Err(Error::Truncated {
            expected,
            actual: payload.len(),
        });
    }
    if payload.len() > expected {
        return Err(Error::CountMismatch(format!(
            "header declares {} vectors of dim {} but payload holds {} bytes",
            header.count,
            header.dim,
            payload.len()
        )));
    }
    let rows = if header.dim == 0 {
        vec![Embedding::zeros(0); header.count]
    } else {
        payload
            .chunks_exact(header.dim * 4)
            .map(|row| {
                Embedding::new(
                    row.chunks_exact(4)
                        .map(|b| f32::from_le_bytes(b.try_into().expect("4 bytes")))
                        .collect(),
                )
            })
            .collect::<Result<Vec<_>>>()?
    };
    Ok((header, rows))
}

pub fn write_metadata<W: Write>(store: &VectorStore, mut w: W) -> Result<()> {
    for it in store.sorted_items() {
        let mut obj = Map::new();
        obj.insert("id".into(), Value::from(it.id));
        obj.insert(
            "class".into(),
            it.class_label().map_or(Value::Null, Value::from),
        );
        for (k, v) in &it.metadata {
            if k == "id" || k == "class" {
                return Err(Error::InvalidParameter(format!(
                    "metadata key {k:?} is reserved"
                )));
            }
            obj.insert(k.clone(), serde_json::to_value(v)?);
        }
        serde_json::to_writer(&mut w, &Value::Object(obj))?;
        w.write_all(b"\n")?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_metadata<R: BufRead>(r: R) -> Result<Vec<MetaRecord>> {
    let mut out = Vec::new();
    for (i, line) in r.lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let bad = |message: String| Error::BadMetadata {
            line: i + 1,
            message,
        };
        let Value::Object(mut obj) = serde_json::from_str(&line).map_err(|e| bad(e.to_string()))?
        else {
            return Err(bad("expected a JSON object".into()));
        };
        let id = obj
            .remove("id")
            .and_then(|v| v.as_u64())
            .ok_or_else(|| bad("missing or non-integer \"id\"".into()))?;
        let class = match obj.remove("class") {
            None | Some(Value::Null) => None,
            Some(Value::String(s)) => Some(s),
            Some(other) => {
                return Err(bad(format!(
                    "\"class\" must be a string or null, got {other}"
                )))
            }
        };
        let mut fields = Metadata::new();
        for (k, v) in obj {
            let value: MetaValue = serde_json::from_value(v)
                .map_err(|_| bad(format!("field {k:?} is not a scalar")))?;
            fields.insert(k, value);
        }
        out.push(MetaRecord { id, class, fields });
    }
    Ok(out)
}

/// Joins vectors (ids `0..count`) with sidecar records.
pub fn assemble_store(
    header: &VsetHeader,
    rows: Vec<Embedding>,
    meta: Vec<MetaRecord>,
) -> Result<VectorStore> {
    if rows.len() != header.count {
        return Err(Error::CountMismatch(format!(
            "header count {} but {} rows",
            header.count,
            rows.len()
        )));
    }
    let mut records: Vec<Option<MetaRecord>> = vec![None; header.count];
    for rec in meta {
        let slot = records.get_mut(rec.id as usize).ok_or_else(|| {
            Error::CountMismatch(format!(
                "metadata id {} outside 0..{}",
                rec.id, header.count
            ))
        })?;
        if slot.is_some() {
            return Err(Error::CountMismatch(format!(
                "metadata id {} appears twice",
                rec.id
            )));
        }
        *slot = Some(rec);
    }
    let items = rows
        .into_iter()
        .zip(records)
        .enumerate()
        .map(|(i, (emb, rec))| {
            let mut item = StoredItem::new(i as u64, emb);
            if let Some(rec) = rec {
                if let Some(class) = rec.class {
                    item = item.with_class(class);
                }
                item.metadata = rec.fields;
            }
            item
        });
    VectorStore::from_items(header.dim, header.metric, items)
}

pub fn save_store(
    store: &VectorStore,
    vset_path: impl AsRef<Path>,
    meta_path: impl AsRef<Path>,
) -> Result<()> {
    write_vset(store, BufWriter::new(File::create(vset_path)?))?;
    write_metadata(store, BufWriter::new(File::create(meta_path)?))
}

pub fn load_store(vset_path: impl AsRef<Path>, meta_path: Option<&Path>) -> Result<VectorStore> {
    let (header, rows) = read_vset(BufReader::new(File::open(vset_path)?))?;
    let meta = match meta_path {
        Some(p) => read_metadata(BufReader::new(File::open(p)?))?,
        None => Vec::new(),
    };
    assemble_store(&header, rows, meta)
}

pub fn store_paths(dir: impl AsRef<Path>) -> (PathBuf, PathBuf) {
    let dir = dir.as_ref();
    (dir.join(STORE_VSET), dir.join(STORE_META))
}

pub fn save_store_dir(store: &VectorStore, dir: impl AsRef<Path>) -> Result<()> {
    std::fs::create_dir_all(dir.as_ref())?;
    let (v, m) = store_paths(dir);
    save_store(store, v, m)
}

pub fn load_store_dir(dir: impl AsRef<Path>) -> Result<VectorStore> {
    let (v, m) = store_paths(dir);
    let meta = m.exists().then_some(m);
    load_store(v, meta.as_deref())
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn sample_store() -> VectorStore {
        let items = vec![
            StoredItem::new(0, Embedding::new(vec![1.5, -0.0]).unwrap())
                .with_class("car")
                .with_meta("year", 2020i64),
            StoredItem::new(1, Embedding::new(vec![f32::MIN_POSITIVE, 3.25e30]).unwrap())
                .with_meta("w", 0.1f64),
            StoredItem::new(2, Embedding::new(vec![-7.0, 1e-40]).unwrap())
                .with_class("bike")
                .with_meta("ok", true)
                .with_meta("name", "x y"),
        ];
        VectorStore::from_items(2, Metric::CosineDistance, items).unwrap()
    }

    fn to_bytes(store: &VectorStore) -> Vec<u8> {
        let mut buf = Vec::new();
        write_vset(store, &mut buf).unwrap();
        buf
    }

    #[test]
    fn header_layout() {
        let bytes = to_bytes(&sample_store());
        assert_eq!(&bytes[..5], b"VSET1");
        let len = u32::from_le_bytes(bytes[5..9].try_into().unwrap()) as usize;
        let header: serde_json::Value = serde_json::from_slice(&bytes[9..9 + len]).unwrap();
        assert_eq!(
            header,
            serde_json::json!({"dim": 2, "count": 3, "metric": "cosine-distance", "version": 1})
        );
        assert_eq!(bytes.len(), 9 + len + 3 * 2 * 4);
        assert_eq!(&bytes[9 + len..9 + len + 4], &1.5f32.to_le_bytes());
    }

    #[test]
    fn round_trip_through_files() {
        let dir = tempfile::tempdir().unwrap();
        let store = sample_store();
        save_store_dir(&store, dir.path()).unwrap();
        let back = load_store_dir(dir.path()).unwrap();
        assert_eq!(back, store);
        for (a, b) in store.items().iter().zip(back.items()) {
            let bits = |e: &Embedding| e.as_slice().iter().map(|v| v.to_bits()).collect::<Vec<_>>();
            assert_eq!(bits(&a.embedding), bits(&b.embedding));
        }
    }

    #[test]
    fn bad_magic() {
        let mut bytes = to_bytes(&sample_store());
        bytes[0] = b'X';
        assert!(matches!(parse_vset(&bytes), Err(Error::BadMagic)));
        assert!(matches!(parse_vset(b"VS"), Err(Error::BadMagic)));
    }

    #[test]
    fn missing_vector_is_truncated() {
        let rows: Vec<Vec<f32>> = (0..10).map(|i| vec![i as f32, 1.0]).collect();
        let store = VectorStore::from_rows(Metric::Euclidean, &rows).unwrap();
        let mut bytes = to_bytes(&store);
        bytes.truncate(bytes.len() - 8);
        assert!(matches!(
            parse_vset(&bytes),
            Err(Error::Truncated {
                expected: 80,
                actual: 72
            })
        ));
    }

    #[test]
    fn extra_payload_is_a_count_mismatch() {
        let mut bytes = to_bytes(&sample_store());
        bytes.extend_from_slice(&[0u8; 8]);
        assert!(matches!(parse_vset(&bytes), Err(Error::CountMismatch(_))));
    }

    #[test]
    fn sidecar_with_unknown_id_is_a_count_mismatch() {
        let (header, rows) = parse_vset(&to_bytes(&sample_store())).unwrap();
        let meta = read_metadata("{\"id\":7,\"class\":null}\n".as_bytes()).unwrap();
        assert!(matches!(
            assemble_store(&header, rows, meta),
            Err(Error::CountMismatch(_))
        ));
    }

    #[test]
    fn sidecar_rejects_nested_values() {
        let err =
            read_metadata("{\"id\":0,\"class\":\"a\",\"tags\":[1,2]}\n".as_bytes()).unwrap_err();
        assert!(matches!(err, Error::BadMetadata { line: 1, .. }));
    }

    #[test]
    fn non_contiguous_ids_cannot_be_written() {
        let store = VectorStore::from_items(
            1,
            Metric::Euclidean,
            vec![StoredItem::new(4, Embedding::new(vec![1.0]).unwrap())],
        )
        .unwrap();
        assert!(matches!(
            write_vset(&store, Vec::new()),
            Err(Error::NonContiguousIds)
        ));
    }

    proptest! {
        #[test]
        fn arbitrary_finite_payloads_round_trip(
            rows in proptest::collection::vec(proptest::collection::vec(proptest::num::f32::NORMAL | proptest::num::f32::ZERO | proptest::num::f32::SUBNORMAL, 3), 0..20),
            labels in proptest::collection::vec(proptest::option::of("[a-z]{1,6}"), 20),
        ) {
            let items = rows.iter().enumerate().map(|(i, r)| {
                let it = StoredItem::new(i as u64, Embedding::new(r.clone()).unwrap());
                match &labels[i] { Some(l) => it.with_class(l.clone()).with_meta("i", i as i64), None => it }
            });
            let store = VectorStore::from_items(3, Metric::Euclidean, items).unwrap();
            let mut meta = Vec::new();
            write_metadata(&store, &mut meta).unwrap();
            let (header, back_rows) = parse_vset(&to_bytes(&store)).unwrap();
            let back = assemble_store(&header, back_rows, read_metadata(&meta[..]).unwrap()).unwrap();
            prop_assert_eq!(back, store);
        }
    }
}
