//! Embedding datasets: the JSON-Lines interchange format, validation, and
//! fold/holdout partitioning.
//!
//! A dataset file starts with one manifest object, followed by one record
//! object per line:
//!
//! ```text
//! {"d_s":4,"d_m":4,"dataset":"twitter","split":"train","semantic_encoder":"...","sentiment_encoder":"...","encoding":"plain"}
//! {"id":"t1","text":"...","ancestor":null,"y":1,"e_ct":[...],"e_st_ep":[...],"e_st_ip":[...],"e_st_full":[...],"z_ep":1,"z_ip":0,"z_full":1}
//! ```
//!
//! With `"encoding":"hex"` every vector is instead a lowercase base-16 string
//! of little-endian IEEE-754 `f64` bytes.

use std::collections::{BTreeMap, HashSet};
use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::seed;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum VectorEncoding {
    #[default]
    Plain,
    Hex,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub d_s: usize,
    pub d_m: usize,
    pub dataset: String,
    pub split: String,
    pub semantic_encoder: String,
    pub sentiment_encoder: String,
    #[serde(default)]
    pub encoding: VectorEncoding,
    /// Producer-specific keys (lexicon identifiers and the like), kept verbatim.
    #[serde(flatten)]
    pub extra: BTreeMap<String, serde_json::Value>,
}

impl Manifest {
    pub fn new(d_s: usize, d_m: usize, dataset: &str, split: &str) -> Self {
        Manifest {
            d_s,
            d_m,
            dataset: dataset.to_string(),
            split: split.to_string(),
            semantic_encoder: "unknown".to_string(),
            sentiment_encoder: "unknown".to_string(),
            encoding: VectorEncoding::Plain,
            extra: BTreeMap::new(),
        }
    }
}

/// One sample: semantic embedding, three sentiment embeddings and labels.
#[derive(Debug, Clone, PartialEq)]
pub struct EmbeddingRecord {
    pub id: String,
    pub text: String,
    pub ancestor: Option<String>,
    /// Sarcasm label.
    pub y: u8,
    pub e_ct: Vec<f64>,
    pub e_st_ep: Vec<f64>,
    pub e_st_ip: Vec<f64>,
    /// Whole-text sentiment embedding; only needed to initialize sentiment prototypes.
    pub e_st_full: Option<Vec<f64>>,
    pub z_ep: u8,
    pub z_ip: u8,
    pub z_full: u8,
}

impl EmbeddingRecord {
    /// Text shown for this record in explanations; falls back to the id.
    pub fn display_text(&self) -> &str {
        if self.text.is_empty() {
            &self.id
        } else {
            &self.text
        }
    }

    /// Checks labels and the explicit/implicit polarity rule.
    pub fn validate_labels(&self, line: usize) -> Result<()> {
        for (field, v) in [
            ("y", self.y),
            ("z_ep", self.z_ep),
            ("z_ip", self.z_ip),
            ("z_full", self.z_full),
        ] {
            if v > 1 {
                return Err(Error::Label {
                    field,
                    value: v as i64,
                    line,
                });
            }
        }
        let expected_ip = if self.y == 0 { self.z_ep } else { 1 - self.z_ep };
        if self.z_ip != expected_ip {
            return Err(Error::ZConsistency {
                line,
                y: self.y,
                z_ep: self.z_ep,
                z_ip: self.z_ip,
            });
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub manifest: Manifest,
    pub records: Vec<EmbeddingRecord>,
}

impl Dataset {
    /// Builds a dataset from in-memory records, running the same checks as
    /// [`load_dataset`]. Dimensions in `manifest` are overwritten by the
    /// first record's.
    pub fn new(mut manifest: Manifest, records: Vec<EmbeddingRecord>) -> Result<Self> {
        let first = records
            .first()
            .ok_or_else(|| Error::Data("dataset has no records".into()))?;
        manifest.d_s = first.e_ct.len();
        manifest.d_m = first.e_st_ep.len();
        let ds = Dataset { manifest, records };
        let mut seen = HashSet::new();
        for (i, r) in ds.records.iter().enumerate() {
            // records are numbered as file lines (manifest is line 1)
            let line = i + 2;
            ds.check_dims(r, line)?;
            r.validate_labels(line)?;
            if !seen.insert(r.id.as_str()) {
                return Err(Error::Data(format!("duplicate record id {:?} at line {line}", r.id)));
            }
        }
        Ok(ds)
    }

    fn check_dims(&self, r: &EmbeddingRecord, line: usize) -> Result<()> {
        let (d_s, d_m) = (self.manifest.d_s, self.manifest.d_m);
        let checks = [
            ("e_ct", d_s, Some(r.e_ct.len())),
            ("e_st_ep", d_m, Some(r.e_st_ep.len())),
            ("e_st_ip", d_m, Some(r.e_st_ip.len())),
            ("e_st_full", d_m, r.e_st_full.as_ref().map(Vec::len)),
        ];
        for (what, expected, found) in checks {
            if let Some(found) = found {
                if found != expected {
                    return Err(Error::Dimension {
                        what: what.to_string(),
                        expected,
                        found,
                        line: Some(line),
                    });
                }
            }
        }
        if d_s == 0 || d_m == 0 {
            return Err(Error::Data(format!("zero-length embedding at line {line}")));
        }
        Ok(())
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    pub fn d_s(&self) -> usize {
        self.manifest.d_s
    }

    pub fn d_m(&self) -> usize {
        self.manifest.d_m
    }

    /// Number of records per sarcasm class `[y=0, y=1]`.
    pub fn class_counts(&self) -> [usize; 2] {
        let mut c = [0; 2];
        for r in &self.records {
            c[r.y as usize] += 1;
        }
        c
    }

    /// New dataset holding the records at `indices`, in that order.
    pub fn subset(&self, indices: &[usize], split: &str) -> Dataset {
        let mut manifest = self.manifest.clone();
        manifest.split = split.to_string();
        Dataset {
            manifest,
            records: indices.iter().map(|&i| self.records[i].clone()).collect(),
        }
    }

    pub fn find(&self, id: &str) -> Option<&EmbeddingRecord> {
        self.records.iter().find(|r| r.id == id)
    }

    pub fn labels(&self) -> Vec<u8> {
        self.records.iter().map(|r| r.y).collect()
    }
}

#[derive(Deserialize)]
#[serde(untagged)]
enum RawVector {
    Plain(Vec<f64>),
    Hex(String),
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct RawRecord {
    id: String,
    text: String,
    ancestor: Option<String>,
    y: i64,
    e_ct: RawVector,
    e_st_ep: RawVector,
    e_st_ip: RawVector,
    e_st_full: Option<RawVector>,
    z_ep: i64,
    z_ip: i64,
    z_full: i64,
}

#[derive(Serialize)]
struct OutRecord<'a, V: Serialize> {
    id: &'a str,
    text: &'a str,
    ancestor: &'a Option<String>,
    y: u8,
    e_ct: V,
    e_st_ep: V,
    e_st_ip: V,
    e_st_full: Option<V>,
    z_ep: u8,
    z_ip: u8,
    z_full: u8,
}

fn decode_vector(raw: RawVector, encoding: VectorEncoding, field: &str, line: usize) -> Result<Vec<f64>> {
    let malformed = |message: String| Error::Malformed { line, message };
    match (raw, encoding) {
        (RawVector::Plain(v), VectorEncoding::Plain) => Ok(v),
        (RawVector::Hex(s), VectorEncoding::Hex) => {
            let bytes = hex::decode(&s).map_err(|e| malformed(format!("{field}: {e}")))?;
            if bytes.len() % 8 != 0 {
                return Err(malformed(format!("{field}: hex payload is not a whole number of f64s")));
            }
            Ok(bytes
                .chunks_exact(8)
                .map(|c| f64::from_le_bytes(c.try_into().expect("chunk of 8")))
                .collect())
        }
        (_, enc) => Err(malformed(format!("{field}: vector does not match manifest encoding {enc:?}"))),
    }
}

fn encode_hex(v: &[f64]) -> String {
    let bytes: Vec<u8> = v.iter().flat_map(|x| x.to_le_bytes()).collect();
    hex::encode(bytes)
}

fn label(field: &'static str, value: i64, line: usize) -> Result<u8> {
    match value {
        0 | 1 => Ok(value as u8),
        _ => Err(Error::Label { field, value, line }),
    }
}

fn parse_record(text: &str, encoding: VectorEncoding, line: usize) -> Result<EmbeddingRecord> {
    let raw: RawRecord = serde_json::from_str(text).map_err(|e| Error::Malformed {
        line,
        message: e.to_string(),
    })?;
    Ok(EmbeddingRecord {
        id: raw.id,
        text: raw.text,
        ancestor: raw.ancestor,
        y: label("y", raw.y, line)?,
        e_ct: decode_vector(raw.e_ct, encoding, "e_ct", line)?,
        e_st_ep: decode_vector(raw.e_st_ep, encoding, "e_st_ep", line)?,
        e_st_ip: decode_vector(raw.e_st_ip, encoding, "e_st_ip", line)?,
        e_st_full: raw
            .e_st_full
            .map(|v| decode_vector(v, encoding, "e_st_full", line))
            .transpose()?,
        z_ep: label("z_ep", raw.z_ep, line)?,
        z_ip: label("z_ip", raw.z_ip, line)?,
        z_full: label("z_full", raw.z_full, line)?,
    })
}

/// Reads and validates a dataset file.
pub fn load_dataset(path: impl AsRef<Path>) -> Result<Dataset> {
    let path = path.as_ref();
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    let mut lines = BufReader::new(file).lines();

    let header = lines
        .next()
        .ok_or_else(|| Error::Malformed {
            line: 1,
            message: "empty file (missing manifest)".into(),
        })?
        .map_err(|e| Error::io(path, e))?;
    let manifest: Manifest = serde_json::from_str(&header).map_err(|e| Error::Malformed {
        line: 1,
        message: format!("manifest: {e}"),
    })?;

    let mut records = Vec::new();
    for (i, line) in lines.enumerate() {
        let lineno = i + 2;
        let line = line.map_err(|e| Error::io(path, e))?;
        if line.trim().is_empty() {
            continue;
        }
        let rec = parse_record(&line, manifest.encoding, lineno)?;
        if let Some(first) = records.first() {
            check_same_dims(first, &rec, lineno)?;
        } else if rec.e_ct.len() != manifest.d_s || rec.e_st_ep.len() != manifest.d_m {
            let (what, expected, found) = if rec.e_ct.len() != manifest.d_s {
                ("e_ct vs manifest d_s", manifest.d_s, rec.e_ct.len())
            } else {
                ("e_st_ep vs manifest d_m", manifest.d_m, rec.e_st_ep.len())
            };
            return Err(Error::Dimension {
                what: what.into(),
                expected,
                found,
                line: Some(lineno),
            });
        }
        rec.validate_labels(lineno)?;
        if rec.text.is_empty() {
            log::warn!("record {:?} at line {lineno} has empty text; explanations will show its id", rec.id);
        }
        records.push(rec);
    }
    if records.is_empty() {
        return Err(Error::Data(format!("{}: no records", path.display())));
    }
    Dataset::new(manifest, records)
}

fn check_same_dims(first: &EmbeddingRecord, rec: &EmbeddingRecord, line: usize) -> Result<()> {
    let pairs = [
        ("e_ct", first.e_ct.len(), rec.e_ct.len()),
        ("e_st_ep", first.e_st_ep.len(), rec.e_st_ep.len()),
        ("e_st_ip", first.e_st_ep.len(), rec.e_st_ip.len()),
    ];
    for (what, expected, found) in pairs {
        if expected != found {
            return Err(Error::Dimension {
                what: what.into(),
                expected,
                found,
                line: Some(line),
            });
        }
    }
    if let Some(full) = &rec.e_st_full {
        if full.len() != first.e_st_ep.len() {
            return Err(Error::Dimension {
                what: "e_st_full".into(),
                expected: first.e_st_ep.len(),
                found: full.len(),
                line: Some(line),
            });
        }
    }
    Ok(())
}

/// Writes a dataset in canonical key order, using the manifest's encoding.
pub fn write_dataset(ds: &Dataset, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    let mut out = BufWriter::new(file);
    write_dataset_to(ds, &mut out).map_err(|e| Error::io(path, e))?;
    out.flush().map_err(|e| Error::io(path, e))
}

pub fn write_dataset_to<W: Write>(ds: &Dataset, out: &mut W) -> std::io::Result<()> {
    serde_json::to_writer(&mut *out, &ds.manifest)?;
    out.write_all(b"\n")?;
    for r in &ds.records {
        match ds.manifest.encoding {
            VectorEncoding::Plain => serde_json::to_writer(
                &mut *out,
                &OutRecord {
                    id: &r.id,
                    text: &r.text,
                    ancestor: &r.ancestor,
                    y: r.y,
                    e_ct: &r.e_ct,
                    e_st_ep: &r.e_st_ep,
                    e_st_ip: &r.e_st_ip,
                    e_st_full: r.e_st_full.as_ref(),
                    z_ep: r.z_ep,
                    z_ip: r.z_ip,
                    z_full: r.z_full,
                },
            )?,
            VectorEncoding::Hex => serde_json::to_writer(
                &mut *out,
                &OutRecord {
                    id: &r.id,
                    text: &r.text,
                    ancestor: &r.ancestor,
                    y: r.y,
                    e_ct: encode_hex(&r.e_ct),
                    e_st_ep: encode_hex(&r.e_st_ep),
                    e_st_ip: encode_hex(&r.e_st_ip),
                    e_st_full: r.e_st_full.as_deref().map(encode_hex),
                    z_ep: r.z_ep,
                    z_ip: r.z_ip,
                    z_full: r.z_full,
                },
            )?,
        }
        out.write_all(b"\n")?;
    }
    Ok(())
}

/// Assignment of record indices to `k` folds.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FoldPlan {
    pub k: usize,
    pub assignments: Vec<usize>,
    pub seed: u64,
    /// False when some class had fewer than `k` members and folds were dealt
    /// without stratification.
    pub stratified: bool,
}

impl FoldPlan {
    pub fn test_indices(&self, fold: usize) -> Vec<usize> {
        (0..self.assignments.len())
            .filter(|&i| self.assignments[i] == fold)
            .collect()
    }

    pub fn train_indices(&self, fold: usize) -> Vec<usize> {
        (0..self.assignments.len())
            .filter(|&i| self.assignments[i] != fold)
            .collect()
    }

    pub fn fold_sizes(&self) -> Vec<usize> {
        let mut sizes = vec![0; self.k];
        for &f in &self.assignments {
            sizes[f] += 1;
        }
        sizes
    }
}

/// Seeded, class-stratified k-fold partition.
///
/// Each class is shuffled and dealt round-robin; the second class continues
/// the deal where the first stopped, so total fold sizes differ by at most one.
pub fn split_folds(ds: &Dataset, k: usize, seed: u64) -> Result<FoldPlan> {
    let n = ds.len();
    if k < 2 || k > n {
        return Err(Error::Config(format!("fold count k={k} must lie in [2, {n}]")));
    }
    let mut rng = seed::rng(seed, seed::stream::FOLDS);
    let mut assignments = vec![usize::MAX; n];
    let counts = ds.class_counts();
    let stratified = counts.iter().all(|&c| c >= k);

    let groups: Vec<Vec<usize>> = if stratified {
        (0..2u8)
            .map(|c| (0..n).filter(|&i| ds.records[i].y == c).collect())
            .collect()
    } else {
        log::warn!(
            "class counts {counts:?} smaller than k={k}; falling back to non-stratified folds"
        );
        vec![(0..n).collect()]
    };

    let mut next = 0;
    for mut group in groups {
        group.shuffle(&mut rng);
        for i in group {
            assignments[i] = next;
            next = (next + 1) % k;
        }
    }
    Ok(FoldPlan {
        k,
        assignments,
        seed,
        stratified,
    })
}

/// Seeded stratified holdout. Returns `(kept, held_out)` index lists, each in
/// ascending order. Every class with at least two members contributes at
/// least one held-out record.
pub fn stratified_holdout(ds: &Dataset, frac: f64, seed: u64) -> (Vec<usize>, Vec<usize>) {
    let mut rng = seed::rng(seed, seed::stream::HOLDOUT);
    let mut kept = Vec::new();
    let mut held = Vec::new();
    for c in 0..2u8 {
        let mut members: Vec<usize> = (0..ds.len()).filter(|&i| ds.records[i].y == c).collect();
        members.shuffle(&mut rng);
        let mut take = (frac * members.len() as f64).round() as usize;
        if take == 0 && members.len() >= 2 && frac > 0.0 {
            take = 1;
        }
        held.extend_from_slice(&members[..take]);
        kept.extend_from_slice(&members[take..]);
    }
    kept.sort_unstable();
    held.sort_unstable();
    (kept, held)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn rec(id: &str, y: u8, z_ep: u8, dim: usize) -> EmbeddingRecord {
        let z_ip = if y == 0 { z_ep } else { 1 - z_ep };
        EmbeddingRecord {
            id: id.into(),
            text: format!("text {id}"),
            ancestor: None,
            y,
            e_ct: vec![y as f64; dim],
            e_st_ep: vec![0.5; dim],
            e_st_ip: vec![-0.5; dim],
            e_st_full: Some(vec![0.25; dim]),
            z_ep,
            z_ip,
            z_full: z_ep,
        }
    }

    fn ds_with(n0: usize, n1: usize) -> Dataset {
        let mut records = Vec::new();
        for i in 0..n0 {
            records.push(rec(&format!("a{i}"), 0, (i % 2) as u8, 3));
        }
        for i in 0..n1 {
            records.push(rec(&format!("b{i}"), 1, (i % 2) as u8, 3));
        }
        Dataset::new(Manifest::new(3, 3, "unit", "train"), records).unwrap()
    }

    fn write_lines(lines: &[String]) -> tempfile::NamedTempFile {
        let mut f = tempfile::NamedTempFile::new().unwrap();
        for l in lines {
            writeln!(f, "{l}").unwrap();
        }
        f
    }

    const MANIFEST: &str = r#"{"d_s":4,"d_m":4,"dataset":"unit","split":"train","semantic_encoder":"s","sentiment_encoder":"m","encoding":"plain"}"#;

    fn line(id: &str, y: u8, z_ep: u8, z_ip: u8, ct_len: usize) -> String {
        let ct: Vec<f64> = (0..ct_len).map(|i| i as f64).collect();
        serde_json::json!({
            "id": id, "text": "hello", "ancestor": null, "y": y,
            "e_ct": ct, "e_st_ep": [0.0, 1.0, 2.0, 3.0], "e_st_ip": [1.0, 1.0, 1.0, 1.0],
            "e_st_full": [0.5, 0.5, 0.5, 0.5], "z_ep": z_ep, "z_ip": z_ip, "z_full": z_ep
        })
        .to_string()
    }

    #[test]
    fn loads_three_valid_records() {
        let f = write_lines(&[
            MANIFEST.into(),
            line("a", 0, 1, 1, 4),
            line("b", 1, 1, 0, 4),
            line("c", 1, 0, 1, 4),
        ]);
        let ds = load_dataset(f.path()).unwrap();
        assert_eq!(ds.len(), 3);
        assert_eq!((ds.d_s(), ds.d_m()), (4, 4));
        assert_eq!(ds.records[1].z_ip, 0);
    }

    #[test]
    fn z_consistency_error_names_line() {
        let f = write_lines(&[MANIFEST.into(), line("a", 0, 1, 1, 4), line("b", 1, 1, 1, 4)]);
        let err = load_dataset(f.path()).unwrap_err();
        assert!(matches!(err, Error::ZConsistency { line: 3, .. }), "{err}");
        assert!(err.to_string().contains("z-consistency violated at line 3"));
    }

    #[test]
    fn dimension_mismatch_after_first_record() {
        let f = write_lines(&[MANIFEST.into(), line("a", 0, 1, 1, 4), line("b", 0, 0, 0, 3)]);
        let err = load_dataset(f.path()).unwrap_err();
        assert!(
            matches!(err, Error::Dimension { expected: 4, found: 3, line: Some(3), .. }),
            "{err}"
        );
    }

    #[test]
    fn label_out_of_range_and_malformed_lines() {
        let bad = line("a", 0, 1, 1, 4).replace("\"y\":0", "\"y\":2");
        let f = write_lines(&[MANIFEST.into(), bad]);
        assert!(matches!(
            load_dataset(f.path()).unwrap_err(),
            Error::Label { field: "y", value: 2, line: 2 }
        ));

        let f = write_lines(&[MANIFEST.into(), line("a", 0, 1, 1, 4), "{not json".into()]);
        assert!(matches!(load_dataset(f.path()).unwrap_err(), Error::Malformed { line: 3, .. }));
    }

    #[test]
    fn missing_file_names_path() {
        let err = load_dataset("/definitely/not/here.jsonl").unwrap_err();
        assert!(err.to_string().contains("/definitely/not/here.jsonl"));
        assert_eq!(err.exit_code(), 3);
    }

    #[test]
    fn test_only_file_without_full_sentiment() {
        let l = line("a", 0, 1, 1, 4).replace("\"e_st_full\":[0.5,0.5,0.5,0.5]", "\"e_st_full\":null");
        let f = write_lines(&[MANIFEST.into(), l]);
        let ds = load_dataset(f.path()).unwrap();
        assert!(ds.records[0].e_st_full.is_none());
    }

    #[test]
    fn hex_encoding_round_trips_exact_bits() {
        let mut ds = ds_with(2, 2);
        ds.records[0].e_ct = vec![0.1, -3.5e-300, f64::MIN_POSITIVE];
        ds.manifest.encoding = VectorEncoding::Hex;
        let f = tempfile::NamedTempFile::new().unwrap();
        write_dataset(&ds, f.path()).unwrap();
        let back = load_dataset(f.path()).unwrap();
        assert_eq!(back, ds);
    }

    #[test]
    fn folds_exactly_divisible() {
        let ds = ds_with(5, 5);
        let plan = split_folds(&ds, 5, 7).unwrap();
        for f in 0..5 {
            let idx = plan.test_indices(f);
            assert_eq!(idx.len(), 2);
            let ones = idx.iter().filter(|&&i| ds.records[i].y == 1).count();
            assert_eq!(ones, 1);
        }
    }

    #[test]
    fn folds_pigeonhole_and_determinism() {
        let ds = ds_with(6, 5);
        let plan = split_folds(&ds, 5, 3).unwrap();
        let mut sizes = plan.fold_sizes();
        sizes.sort_unstable_by(|a, b| b.cmp(a));
        assert_eq!(sizes, vec![3, 2, 2, 2, 2]);
        assert_eq!(plan, split_folds(&ds, 5, 3).unwrap());
    }

    #[test]
    fn folds_reject_bad_k_and_fall_back() {
        let ds = ds_with(6, 2);
        assert!(split_folds(&ds, 1, 0).is_err());
        assert!(split_folds(&ds, 9, 0).is_err());
        let plan = split_folds(&ds, 3, 0).unwrap();
        assert!(!plan.stratified);
        assert_eq!(plan.fold_sizes().iter().sum::<usize>(), 8);
    }

    #[test]
    fn holdout_is_stratified_partition() {
        let ds = ds_with(20, 10);
        let (kept, held) = stratified_holdout(&ds, 0.1, 1);
        assert_eq!(kept.len() + held.len(), 30);
        assert_eq!(held.len(), 3);
        let held_pos = held.iter().filter(|&&i| ds.records[i].y == 1).count();
        assert_eq!(held_pos, 1);
    }
}
