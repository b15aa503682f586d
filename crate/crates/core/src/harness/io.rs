//! Record files.
//!
//! Every `.jsonl` file starts with a header line `{"schema":"<name>","version":1}`
//! followed by one JSON object per line. The validity prior is a CSV table
//! (header row of object names, first column of action names, 0/1 cells) and
//! split definitions are TOML.

use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Read, Write};
use std::path::{Path, PathBuf};

use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

use super::HarnessError;
use crate::distillation::{l2_norm, normalize, Action, ActionDistribution, ValidityMatrix, Vocabulary};
use crate::evaluation::SplitConfig;
use crate::losses::LossBreakdown;

pub const SCHEMA_VERSION: u32 = 1;

pub mod schema {
    pub const SCENES: &str = "hoi.scenes";
    pub const PREDICTIONS: &str = "hoi.predictions";
    pub const VOCAB: &str = "hoi.vocab";
    pub const SIMILARITIES: &str = "hoi.similarities";
    pub const EMBEDDINGS: &str = "hoi.embeddings";
    pub const MATCHES: &str = "hoi.matches";
    pub const TARGETS: &str = "hoi.targets";
    pub const LOSSES: &str = "hoi.losses";
    pub const DETECTIONS: &str = "hoi.detections";
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
struct Header {
    schema: String,
    version: u32,
}

/// Writes the header and one JSON line per record.
pub fn write_records<T: Serialize, W: Write>(mut out: W, schema: &str, records: &[T]) -> Result<(), HarnessError> {
    let header = Header { schema: schema.to_string(), version: SCHEMA_VERSION };
    let mut lines = vec![serde_json::to_string(&header)];
    lines.extend(records.iter().map(serde_json::to_string));
    for line in lines {
        let line = line.map_err(|e| HarnessError::Format(e.to_string()))?;
        writeln!(out, "{line}").map_err(|e| HarnessError::io("<output>", e))?;
    }
    out.flush().map_err(|e| HarnessError::io("<output>", e))
}

/// Reads a record file, checking the header's schema name and version.
/// Blank lines are skipped; parse failures report their 1-based line.
pub fn read_records<T: DeserializeOwned, R: Read>(
    input: R,
    schema: &str,
    source: &str,
) -> Result<Vec<T>, HarnessError> {
    let mut lines = BufReader::new(input).lines().enumerate();
    let parse_err = |line: usize, message: String| HarnessError::Parse { file: source.to_string(), line, message };
    let header = loop {
        match lines.next() {
            None => return Err(parse_err(1, "missing schema header".into())),
            Some((i, l)) => {
                let l = l.map_err(|e| HarnessError::io(source, e))?;
                if l.trim().is_empty() {
                    continue;
                }
                break serde_json::from_str::<Header>(&l).map_err(|e| parse_err(i + 1, format!("bad header: {e}")))?;
            }
        }
    };
    if header.schema != schema || header.version != SCHEMA_VERSION {
        return Err(HarnessError::Schema {
            file: source.to_string(),
            expected: format!("{schema} v{SCHEMA_VERSION}"),
            got: format!("{} v{}", header.schema, header.version),
        });
    }
    let mut out = Vec::new();
    for (i, l) in lines {
        let l = l.map_err(|e| HarnessError::io(source, e))?;
        if l.trim().is_empty() {
            continue;
        }
        out.push(serde_json::from_str(&l).map_err(|e| parse_err(i + 1, e.to_string()))?);
    }
    Ok(out)
}

pub fn read_file<T: DeserializeOwned>(path: &Path, schema: &str) -> Result<Vec<T>, HarnessError> {
    let f = File::open(path).map_err(|e| HarnessError::io(path, e))?;
    read_records(f, schema, &path.display().to_string())
}

pub fn write_file<T: Serialize>(path: &Path, schema: &str, records: &[T]) -> Result<(), HarnessError> {
    let f = File::create(path).map_err(|e| HarnessError::io(path, e))?;
    write_records(BufWriter::new(f), schema, records)
}

pub fn write_text(path: &Path, text: &str) -> Result<(), HarnessError> {
    std::fs::write(path, text).map_err(|e| HarnessError::io(path, e))
}

/// One vocabulary line.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum VocabRecord {
    Action { index: usize, name: String, seen: bool },
    Object { index: usize, name: String },
    Hoi { index: usize, action: String, object: String },
}

pub fn vocab_records(vocab: &Vocabulary) -> Vec<VocabRecord> {
    let mut out = Vec::new();
    for (index, a) in vocab.actions().iter().enumerate() {
        out.push(VocabRecord::Action { index, name: a.name.clone(), seen: a.seen });
    }
    for (index, o) in vocab.objects().iter().enumerate() {
        out.push(VocabRecord::Object { index, name: o.clone() });
    }
    for (index, &(a, o)) in vocab.hois().iter().enumerate() {
        out.push(VocabRecord::Hoi {
            index,
            action: vocab.actions()[a].name.clone(),
            object: vocab.objects()[o].clone(),
        });
    }
    out
}

/// Rebuilds a vocabulary; each kind's indices must run 0, 1, 2, ...
pub fn vocab_from_records(records: &[VocabRecord]) -> Result<Vocabulary, HarnessError> {
    let mut actions: Vec<(usize, Action)> = Vec::new();
    let mut objects: Vec<(usize, String)> = Vec::new();
    let mut hois: Vec<(usize, String, String)> = Vec::new();
    for r in records {
        match r {
            VocabRecord::Action { index, name, seen } => {
                actions.push((*index, Action { name: name.clone(), seen: *seen }))
            }
            VocabRecord::Object { index, name } => objects.push((*index, name.clone())),
            VocabRecord::Hoi { index, action, object } => hois.push((*index, action.clone(), object.clone())),
        }
    }
    fn ordered<T>(mut v: Vec<(usize, T)>, kind: &str) -> Result<Vec<T>, HarnessError> {
        v.sort_by_key(|x| x.0);
        for (i, x) in v.iter().enumerate() {
            if x.0 != i {
                return Err(HarnessError::Format(format!("{kind} indices must be 0..n without gaps")));
            }
        }
        Ok(v.into_iter().map(|x| x.1).collect())
    }
    let actions = ordered(actions, "action")?;
    let objects = ordered(objects, "object")?;
    let hois = ordered(hois.into_iter().map(|(i, a, o)| (i, (a, o))).collect(), "hoi")?;
    let resolved = hois
        .iter()
        .map(|(a, o)| {
            let ai = actions.iter().position(|x| &x.name == a);
            let oi = objects.iter().position(|x| x == o);
            match (ai, oi) {
                (Some(ai), Some(oi)) => Ok((ai, oi)),
                _ => Err(HarnessError::Format(format!("HOI ({a}, {o}) names an unknown action or object"))),
            }
        })
        .collect::<Result<Vec<_>, _>>()?;
    Ok(Vocabulary::new(actions, objects, resolved)?)
}

pub fn read_vocab(path: &Path) -> Result<Vocabulary, HarnessError> {
    vocab_from_records(&read_file::<VocabRecord>(path, schema::VOCAB)?)
}

pub fn write_vocab(path: &Path, vocab: &Vocabulary) -> Result<(), HarnessError> {
    write_file(path, schema::VOCAB, &vocab_records(vocab))
}

/// Serializes the validity table as CSV.
pub fn validity_to_csv(vocab: &Vocabulary, validity: &ValidityMatrix) -> Result<String, HarnessError> {
    let mut w = csv::Writer::from_writer(Vec::new());
    let mut header = vec!["action".to_string()];
    header.extend(vocab.objects().iter().cloned());
    w.write_record(&header).map_err(|e| HarnessError::Format(e.to_string()))?;
    for (a, act) in vocab.actions().iter().enumerate() {
        let mut row = vec![act.name.clone()];
        row.extend((0..vocab.objects().len()).map(|o| if validity.is_valid(a, o) { "1" } else { "0" }.to_string()));
        w.write_record(&row).map_err(|e| HarnessError::Format(e.to_string()))?;
    }
    let bytes = w.into_inner().map_err(|e| HarnessError::Format(e.to_string()))?;
    String::from_utf8(bytes).map_err(|e| HarnessError::Format(e.to_string()))
}

/// Parses the CSV table. Rows and columns are matched to the vocabulary
/// by name, so their order in the file is free; every action and object
/// must appear exactly once.
pub fn validity_from_csv<R: Read>(input: R, vocab: &Vocabulary, source: &str) -> Result<ValidityMatrix, HarnessError> {
    let mut rdr = csv::ReaderBuilder::new().has_headers(true).trim(csv::Trim::All).from_reader(input);
    let parse_err = |line: usize, message: String| HarnessError::Parse { file: source.to_string(), line, message };
    let header = rdr.headers().map_err(|e| parse_err(1, e.to_string()))?.clone();
    let (na, no) = (vocab.actions().len(), vocab.objects().len());
    let mut col_obj = Vec::new();
    for name in header.iter().skip(1) {
        col_obj.push(vocab.object_index(name).ok_or_else(|| parse_err(1, format!("unknown object {name}")))?);
    }
    let mut sorted = col_obj.clone();
    sorted.sort_unstable();
    if sorted != (0..no).collect::<Vec<_>>() {
        return Err(parse_err(1, "header must list every object exactly once".into()));
    }
    let mut valid = vec![false; na * no];
    let mut seen_rows = vec![false; na];
    for (i, rec) in rdr.records().enumerate() {
        let line = i + 2;
        let rec = rec.map_err(|e| parse_err(line, e.to_string()))?;
        let name = rec.get(0).unwrap_or("");
        let a = vocab.action_index(name).ok_or_else(|| parse_err(line, format!("unknown action {name}")))?;
        if std::mem::replace(&mut seen_rows[a], true) {
            return Err(parse_err(line, format!("duplicate row for {name}")));
        }
        if rec.len() != no + 1 {
            return Err(parse_err(line, format!("expected {} cells, got {}", no + 1, rec.len())));
        }
        for (cell, &o) in rec.iter().skip(1).zip(&col_obj) {
            valid[a * no + o] = match cell {
                "1" => true,
                "0" => false,
                other => return Err(parse_err(line, format!("cell must be 0 or 1, got {other:?}"))),
            };
        }
    }
    if seen_rows.iter().any(|s| !s) {
        return Err(parse_err(0, "every action needs a row".into()));
    }
    Ok(ValidityMatrix::new(na, no, valid)?)
}

pub fn read_validity(path: &Path, vocab: &Vocabulary) -> Result<ValidityMatrix, HarnessError> {
    let f = File::open(path).map_err(|e| HarnessError::io(path, e))?;
    validity_from_csv(f, vocab, &path.display().to_string())
}

pub fn read_splits(path: &Path) -> Result<SplitConfig, HarnessError> {
    let text = std::fs::read_to_string(path).map_err(|e| HarnessError::io(path, e))?;
    toml::from_str(&text).map_err(|e| HarnessError::Parse {
        file: path.display().to_string(),
        line: 0,
        message: e.to_string(),
    })
}

pub fn splits_to_toml(splits: &SplitConfig) -> Result<String, HarnessError> {
    toml::to_string(splits).map_err(|e| HarnessError::Format(e.to_string()))
}

/// Precomputed teacher similarities for one query, aligned with the HOI list.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimilarityRecord {
    pub scene_id: String,
    pub query: usize,
    pub similarities: Vec<f64>,
}

/// An embedding vector. Pair-region ids are `"<scene_id>#<query>"`; text
/// embedding files list one record per HOI category in HOI order.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EmbeddingRecord {
    pub id: String,
    pub vector: Vec<f64>,
}

pub fn pair_embedding_id(scene_id: &str, query: usize) -> String {
    format!("{scene_id}#{query}")
}

/// Reads embeddings and L2-normalizes them, warning when a stored vector
/// was off unit norm by more than 1e-3.
pub fn read_embeddings(path: &Path) -> Result<Vec<EmbeddingRecord>, HarnessError> {
    let raw: Vec<EmbeddingRecord> = read_file(path, schema::EMBEDDINGS)?;
    raw.into_iter()
        .map(|r| {
            let n = l2_norm(&r.vector);
            if (n - 1.0).abs() > 1e-3 {
                log::warn!("{}: embedding {} has norm {n:.6}, normalizing", path.display(), r.id);
            }
            Ok(EmbeddingRecord { id: r.id, vector: normalize(r.vector)? })
        })
        .collect()
}

/// Teacher distribution for one selected query.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TargetRecord {
    pub scene_id: String,
    pub query: usize,
    pub object: usize,
    pub target: ActionDistribution,
}

/// Per-scene loss line; the file ends with a line whose `scene_id` is
/// `"*"` carrying the corpus mean.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LossRecord {
    pub scene_id: String,
    #[serde(flatten)]
    pub breakdown: LossBreakdown,
}

/// Output directory from an explicit flag, else `HOI_OUT_DIR`, else `.`.
pub fn output_dir(flag: Option<&Path>) -> PathBuf {
    flag.map(Path::to_path_buf)
        .or_else(|| std::env::var_os(super::OUT_DIR_ENV).map(PathBuf::from))
        .unwrap_or_else(|| PathBuf::from("."))
}
