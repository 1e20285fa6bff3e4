//! Embedding ingestion, split construction, and the synthetic paired-embedding
//! generator used for desk-scale experiments.
//!
//! Store file formats (both round-trip exactly):
//! - binary: magic "FVEM", version u32, modality u8, dim u32, count u32, then
//!   per record: id_len u32 + id bytes, label u32, gender/nationality/
//!   age_group/language u16 each, dim little-endian f64 values.
//! - csv: a `#fvem` comment header carrying modality and dim, a column header
//!   row, then one record per row with floats printed in shortest
//!   round-trip form.

use std::collections::{BTreeMap, HashMap};
use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Read, Write};
use std::path::Path;

use rand::seq::SliceRandom as _;
use rand_distr::{Distribution, StandardNormal};

use crate::error::{Error, Result};
use crate::matrix::Matrix;
use crate::rng::domain_rng;

const STORE_MAGIC: [u8; 4] = *b"FVEM";
const STORE_VERSION: u32 = 1;

/// Sentinel attribute code for a missing annotation.
pub const ATTR_MISSING: u16 = u16::MAX;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Modality {
    Face,
    Voice,
}

impl Modality {
    pub fn as_str(self) -> &'static str {
        match self {
            Modality::Face => "face",
            Modality::Voice => "voice",
        }
    }

    pub fn parse(s: &str) -> Result<Self> {
        match s {
            "face" => Ok(Modality::Face),
            "voice" => Ok(Modality::Voice),
            other => Err(Error::Data(format!("unknown modality {other:?}"))),
        }
    }
}

/// Demographic annotation codes; age is bucketed into coded groups at
/// ingestion time.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Attributes {
    pub gender: u16,
    pub nationality: u16,
    pub age_group: u16,
    pub language: u16,
}

impl Attributes {
    pub fn missing() -> Self {
        Attributes {
            gender: ATTR_MISSING,
            nationality: ATTR_MISSING,
            age_group: ATTR_MISSING,
            language: ATTR_MISSING,
        }
    }
}

#[derive(Clone, Debug)]
pub struct Record {
    pub id: String,
    pub label: usize,
    pub attrs: Attributes,
    pub vector: Vec<f64>,
}

/// Labeled per-modality feature matrix with identity and attribute
/// annotations. Identity labels are dense-coded 0..num_identities-1 and all
/// vectors share one dimension; both are enforced at construction.
#[derive(Clone, Debug)]
pub struct EmbeddingStore {
    pub modality: Modality,
    pub dim: usize,
    records: Vec<Record>,
    by_id: HashMap<String, usize>,
}

impl EmbeddingStore {
    pub fn new(modality: Modality, dim: usize, records: Vec<Record>) -> Result<Self> {
        let mut by_id = HashMap::with_capacity(records.len());
        let mut max_label = 0usize;
        let mut seen_labels = std::collections::BTreeSet::new();
        for (i, r) in records.iter().enumerate() {
            if r.vector.len() != dim {
                return Err(Error::RaggedVector {
                    id: r.id.clone(),
                    expected: dim,
                    got: r.vector.len(),
                });
            }
            if by_id.insert(r.id.clone(), i).is_some() {
                return Err(Error::DuplicateId(r.id.clone()));
            }
            max_label = max_label.max(r.label);
            seen_labels.insert(r.label);
        }
        if !records.is_empty() && seen_labels.len() != max_label + 1 {
            return Err(Error::Data(format!(
                "identity labels are not dense-coded: {} distinct labels but max label {}",
                seen_labels.len(),
                max_label
            )));
        }
        Ok(EmbeddingStore {
            modality,
            dim,
            records,
            by_id,
        })
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    pub fn num_identities(&self) -> usize {
        self.records.iter().map(|r| r.label + 1).max().unwrap_or(0)
    }

    pub fn records(&self) -> &[Record] {
        &self.records
    }

    pub fn record(&self, idx: usize) -> &Record {
        &self.records[idx]
    }

    pub fn index_of(&self, id: &str) -> Option<usize> {
        self.by_id.get(id).copied()
    }

    /// Feature matrix over the listed record indices, one row each.
    pub fn matrix_of(&self, idx: &[usize]) -> Matrix {
        let mut m = Matrix::zeros(idx.len(), self.dim);
        for (row, &i) in idx.iter().enumerate() {
            m.row_mut(row).copy_from_slice(&self.records[i].vector);
        }
        m
    }

    /// Instance ids grouped by identity label, ascending label order.
    pub fn ids_by_identity(&self) -> BTreeMap<usize, Vec<usize>> {
        let mut map: BTreeMap<usize, Vec<usize>> = BTreeMap::new();
        for (i, r) in self.records.iter().enumerate() {
            map.entry(r.label).or_default().push(i);
        }
        map
    }
}

// ── Binary store format ─────────────────────────────────────────────────────

pub fn save_store_binary(store: &EmbeddingStore, path: &Path) -> Result<()> {
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = BufWriter::new(file);
    let werr = |e| Error::io(path, e);
    w.write_all(&STORE_MAGIC).map_err(werr)?;
    w.write_all(&STORE_VERSION.to_le_bytes()).map_err(werr)?;
    w.write_all(&[match store.modality {
        Modality::Face => 0u8,
        Modality::Voice => 1u8,
    }])
    .map_err(werr)?;
    w.write_all(&(store.dim as u32).to_le_bytes()).map_err(werr)?;
    w.write_all(&(store.records.len() as u32).to_le_bytes())
        .map_err(werr)?;
    for r in &store.records {
        let id = r.id.as_bytes();
        w.write_all(&(id.len() as u32).to_le_bytes()).map_err(werr)?;
        w.write_all(id).map_err(werr)?;
        w.write_all(&(r.label as u32).to_le_bytes()).map_err(werr)?;
        for code in [r.attrs.gender, r.attrs.nationality, r.attrs.age_group, r.attrs.language] {
            w.write_all(&code.to_le_bytes()).map_err(werr)?;
        }
        for &v in &r.vector {
            w.write_all(&v.to_le_bytes()).map_err(werr)?;
        }
    }
    w.flush().map_err(werr)?;
    Ok(())
}

struct Pos<'a> {
    path: &'a Path,
    pos: u64,
}

impl<'a> Pos<'a> {
    fn take<R: Read>(&mut self, r: &mut R, buf: &mut [u8], what: &str) -> Result<()> {
        r.read_exact(buf).map_err(|e| Error::Parse {
            path: self.path.to_path_buf(),
            offset: self.pos,
            message: format!("reading {what}: {e}"),
        })?;
        self.pos += buf.len() as u64;
        Ok(())
    }

    fn u32<R: Read>(&mut self, r: &mut R, what: &str) -> Result<u32> {
        let mut b = [0u8; 4];
        self.take(r, &mut b, what)?;
        Ok(u32::from_le_bytes(b))
    }

    fn u16<R: Read>(&mut self, r: &mut R, what: &str) -> Result<u16> {
        let mut b = [0u8; 2];
        self.take(r, &mut b, what)?;
        Ok(u16::from_le_bytes(b))
    }

    fn u8<R: Read>(&mut self, r: &mut R, what: &str) -> Result<u8> {
        let mut b = [0u8; 1];
        self.take(r, &mut b, what)?;
        Ok(b[0])
    }

    fn f64<R: Read>(&mut self, r: &mut R, what: &str) -> Result<f64> {
        let mut b = [0u8; 8];
        self.take(r, &mut b, what)?;
        Ok(f64::from_le_bytes(b))
    }

    fn string<R: Read>(&mut self, r: &mut R, what: &str) -> Result<String> {
        let len = self.u32(r, what)? as usize;
        if len > 1 << 20 {
            return Err(Error::Parse {
                path: self.path.to_path_buf(),
                offset: self.pos,
                message: format!("{what} length {len} is implausible"),
            });
        }
        let mut buf = vec![0u8; len];
        self.take(r, &mut buf, what)?;
        String::from_utf8(buf).map_err(|e| Error::Parse {
            path: self.path.to_path_buf(),
            offset: self.pos,
            message: format!("{what} is not utf-8: {e}"),
        })
    }
}

pub fn load_store_binary(path: &Path) -> Result<EmbeddingStore> {
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    let mut r = BufReader::new(file);
    let mut pos = Pos { path, pos: 0 };

    let mut magic = [0u8; 4];
    pos.take(&mut r, &mut magic, "magic")?;
    if magic != STORE_MAGIC {
        return Err(Error::BadMagic {
            path: path.to_path_buf(),
            expected: STORE_MAGIC,
            got: magic,
        });
    }
    let version = pos.u32(&mut r, "version")?;
    if version != STORE_VERSION {
        return Err(Error::BadVersion {
            path: path.to_path_buf(),
            expected: STORE_VERSION,
            got: version,
        });
    }
    let modality = match pos.u8(&mut r, "modality")? {
        0 => Modality::Face,
        1 => Modality::Voice,
        other => {
            return Err(Error::Parse {
                path: path.to_path_buf(),
                offset: pos.pos,
                message: format!("unknown modality code {other}"),
            })
        }
    };
    let dim = pos.u32(&mut r, "dim")? as usize;
    let count = pos.u32(&mut r, "count")? as usize;
    let mut records = Vec::with_capacity(count);
    for _ in 0..count {
        let id = pos.string(&mut r, "record id")?;
        let label = pos.u32(&mut r, "label")? as usize;
        let gender = pos.u16(&mut r, "gender")?;
        let nationality = pos.u16(&mut r, "nationality")?;
        let age_group = pos.u16(&mut r, "age_group")?;
        let language = pos.u16(&mut r, "language")?;
        let mut vector = Vec::with_capacity(dim);
        for _ in 0..dim {
            vector.push(pos.f64(&mut r, "feature value")?);
        }
        records.push(Record {
            id,
            label,
            attrs: Attributes {
                gender,
                nationality,
                age_group,
                language,
            },
            vector,
        });
    }
    EmbeddingStore::new(modality, dim, records)
}

// ── CSV store format ────────────────────────────────────────────────────────

pub fn save_store_csv(store: &EmbeddingStore, path: &Path) -> Result<()> {
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = BufWriter::new(file);
    let werr = |e| Error::io(path, e);
    writeln!(
        w,
        "#fvem,version={},modality={},dim={}",
        STORE_VERSION,
        store.modality.as_str(),
        store.dim
    )
    .map_err(werr)?;
    write!(w, "id,label,gender,nationality,age_group,language").map_err(werr)?;
    for k in 0..store.dim {
        write!(w, ",f{k}").map_err(werr)?;
    }
    writeln!(w).map_err(werr)?;
    for r in &store.records {
        write!(
            w,
            "{},{},{},{},{},{}",
            r.id, r.label, r.attrs.gender, r.attrs.nationality, r.attrs.age_group, r.attrs.language
        )
        .map_err(werr)?;
        for &v in &r.vector {
            write!(w, ",{v}").map_err(werr)?;
        }
        writeln!(w).map_err(werr)?;
    }
    w.flush().map_err(werr)?;
    Ok(())
}

pub fn load_store_csv(path: &Path) -> Result<EmbeddingStore> {
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    let reader = BufReader::new(file);
    let mut lines = reader.lines().enumerate();

    let parse_err = |line: usize, message: String| Error::Parse {
        path: path.to_path_buf(),
        offset: line as u64,
        message: format!("line {}: {}", line + 1, message),
    };

    let (_, header) = lines
        .next()
        .ok_or_else(|| parse_err(0, "empty file".into()))?;
    let header = header.map_err(|e| Error::io(path, e))?;
    if !header.starts_with("#fvem,") {
        return Err(Error::BadMagic {
            path: path.to_path_buf(),
            expected: STORE_MAGIC,
            got: {
                let b = header.as_bytes();
                [
                    b.first().copied().unwrap_or(0),
                    b.get(1).copied().unwrap_or(0),
                    b.get(2).copied().unwrap_or(0),
                    b.get(3).copied().unwrap_or(0),
                ]
            },
        });
    }
    let mut modality = None;
    let mut dim = None;
    let mut version = None;
    for field in header.trim_start_matches("#fvem,").split(',') {
        match field.split_once('=') {
            Some(("version", v)) => {
                version = Some(v.parse::<u32>().map_err(|e| parse_err(0, e.to_string()))?)
            }
            Some(("modality", v)) => modality = Some(Modality::parse(v)?),
            Some(("dim", v)) => {
                dim = Some(v.parse::<usize>().map_err(|e| parse_err(0, e.to_string()))?)
            }
            _ => return Err(parse_err(0, format!("unknown header field {field:?}"))),
        }
    }
    let version = version.ok_or_else(|| parse_err(0, "missing version".into()))?;
    if version != STORE_VERSION {
        return Err(Error::BadVersion {
            path: path.to_path_buf(),
            expected: STORE_VERSION,
            got: version,
        });
    }
    let modality = modality.ok_or_else(|| parse_err(0, "missing modality".into()))?;
    let dim = dim.ok_or_else(|| parse_err(0, "missing dim".into()))?;

    let (_, columns) = lines
        .next()
        .ok_or_else(|| parse_err(1, "missing column header".into()))?;
    columns.map_err(|e| Error::io(path, e))?;

    let mut records = Vec::new();
    for (lineno, line) in lines {
        let line = line.map_err(|e| Error::io(path, e))?;
        if line.is_empty() {
            continue;
        }
        let fields: Vec<&str> = line.split(',').collect();
        if fields.len() != 6 + dim {
            return Err(Error::RaggedVector {
                id: fields.first().unwrap_or(&"?").to_string(),
                expected: dim,
                got: fields.len().saturating_sub(6),
            });
        }
        let num = |s: &str, what: &str| -> Result<u32> {
            s.parse::<u32>()
                .map_err(|e| parse_err(lineno, format!("{what}: {e}")))
        };
        let attr = |s: &str, what: &str| -> Result<u16> {
            s.parse::<u16>()
                .map_err(|e| parse_err(lineno, format!("{what}: {e}")))
        };
        let mut vector = Vec::with_capacity(dim);
        for s in &fields[6..] {
            vector.push(
                s.parse::<f64>()
                    .map_err(|e| parse_err(lineno, format!("feature value: {e}")))?,
            );
        }
        records.push(Record {
            id: fields[0].to_string(),
            label: num(fields[1], "label")? as usize,
            attrs: Attributes {
                gender: attr(fields[2], "gender")?,
                nationality: attr(fields[3], "nationality")?,
                age_group: attr(fields[4], "age_group")?,
                language: attr(fields[5], "language")?,
            },
            vector,
        });
    }
    EmbeddingStore::new(modality, dim, records)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum StoreFormat {
    Binary,
    Csv,
}

pub fn load_store(path: &Path, format: StoreFormat) -> Result<EmbeddingStore> {
    match format {
        StoreFormat::Binary => load_store_binary(path),
        StoreFormat::Csv => load_store_csv(path),
    }
}

pub fn save_store(store: &EmbeddingStore, path: &Path, format: StoreFormat) -> Result<()> {
    match format {
        StoreFormat::Binary => save_store_binary(store, path),
        StoreFormat::Csv => save_store_csv(store, path),
    }
}

// ── Splits ──────────────────────────────────────────────────────────────────

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum SplitKind {
    /// Test identities appear in training with disjoint instances.
    SeenHeard,
    /// Test identities are absent from training entirely.
    UnseenUnheard,
}

impl SplitKind {
    pub fn parse(s: &str) -> Result<Self> {
        match s {
            "seen_heard" => Ok(SplitKind::SeenHeard),
            "unseen_unheard" => Ok(SplitKind::UnseenUnheard),
            other => Err(Error::Config(format!(
                "unknown split kind {other:?} (expected seen_heard or unseen_unheard)"
            ))),
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            SplitKind::SeenHeard => "seen_heard",
            SplitKind::UnseenUnheard => "unseen_unheard",
        }
    }
}

/// Train/val/test instance id lists satisfying the split kind's
/// disjointness invariant.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct SplitSpec {
    pub kind: SplitKind,
    pub train: Vec<String>,
    pub val: Vec<String>,
    pub test: Vec<String>,
}

/// Fraction of instances (seen-heard) or identities (unseen-unheard) assigned
/// to train and validation; the remainder is test.
#[derive(Clone, Copy, Debug)]
pub struct SplitFractions {
    pub train: f64,
    pub val: f64,
}

impl Default for SplitFractions {
    fn default() -> Self {
        SplitFractions { train: 0.6, val: 0.1 }
    }
}

impl SplitFractions {
    pub fn validate(&self) -> Result<()> {
        if !(self.train > 0.0 && self.val >= 0.0 && self.train + self.val < 1.0) {
            return Err(Error::Config(format!(
                "split fractions must satisfy train > 0, val >= 0, train + val < 1; got {} and {}",
                self.train, self.val
            )));
        }
        Ok(())
    }
}

/// Build a seeded, reproducible split over a pair of id-aligned stores.
///
/// Unseen-unheard partitions identities; seen-heard partitions each
/// identity's instances (every identity needs at least 2 instances so the
/// identity sets can match between train and test).
pub fn make_split(
    face: &EmbeddingStore,
    voice: &EmbeddingStore,
    kind: SplitKind,
    fractions: SplitFractions,
    seed: u64,
) -> Result<SplitSpec> {
    fractions.validate()?;
    check_aligned(face, voice)?;
    let by_identity = face.ids_by_identity();
    let num_identities = by_identity.len();
    let mut rng = domain_rng(seed, "split");

    let id_of = |idx: usize| face.record(idx).id.clone();

    match kind {
        SplitKind::UnseenUnheard => {
            if num_identities < 3 {
                return Err(Error::Data(format!(
                    "unseen_unheard split needs at least 3 identities, got {num_identities}"
                )));
            }
            let mut identities: Vec<usize> = by_identity.keys().copied().collect();
            identities.shuffle(&mut rng);
            let n_train = ((num_identities as f64) * fractions.train).round().max(1.0) as usize;
            let n_val = ((num_identities as f64) * fractions.val).round() as usize;
            let n_train = n_train.min(num_identities - 2);
            let n_val = n_val.min(num_identities - n_train - 1);
            let (train_ids, rest) = identities.split_at(n_train);
            let (val_ids, test_ids) = rest.split_at(n_val);
            let collect = |ids: &[usize]| -> Vec<String> {
                let mut out = Vec::new();
                for y in ids {
                    for &idx in &by_identity[y] {
                        out.push(id_of(idx));
                    }
                }
                out
            };
            Ok(SplitSpec {
                kind,
                train: collect(train_ids),
                val: collect(val_ids),
                test: collect(test_ids),
            })
        }
        SplitKind::SeenHeard => {
            let singletons: Vec<usize> = by_identity
                .iter()
                .filter(|(_, v)| v.len() < 2)
                .map(|(k, _)| *k)
                .collect();
            if !singletons.is_empty() {
                return Err(Error::Data(format!(
                    "seen_heard split needs >= 2 instances per identity; identities {singletons:?} have one"
                )));
            }
            let mut train = Vec::new();
            let mut val = Vec::new();
            let mut test = Vec::new();
            for instances in by_identity.values() {
                let mut shuffled = instances.clone();
                shuffled.shuffle(&mut rng);
                let n = shuffled.len();
                let mut n_train = ((n as f64) * fractions.train).round() as usize;
                let mut n_val = ((n as f64) * fractions.val).round() as usize;
                // every identity keeps at least one train and one test instance
                n_train = n_train.clamp(1, n - 1);
                if n_train + n_val >= n {
                    n_val = n - 1 - n_train;
                }
                for (i, &idx) in shuffled.iter().enumerate() {
                    if i < n_train {
                        train.push(id_of(idx));
                    } else if i < n_train + n_val {
                        val.push(id_of(idx));
                    } else {
                        test.push(id_of(idx));
                    }
                }
            }
            Ok(SplitSpec {
                kind,
                train,
                val,
                test,
            })
        }
    }
}

fn check_aligned(face: &EmbeddingStore, voice: &EmbeddingStore) -> Result<()> {
    if face.len() != voice.len() {
        return Err(Error::Data(format!(
            "stores are not aligned: {} face vs {} voice records",
            face.len(),
            voice.len()
        )));
    }
    for r in face.records() {
        match voice.index_of(&r.id) {
            None => {
                return Err(Error::Data(format!(
                    "instance {} present in face store but not voice store",
                    r.id
                )))
            }
            Some(vi) => {
                if voice.record(vi).label != r.label {
                    return Err(Error::Data(format!(
                        "instance {} has label {} in face store but {} in voice store",
                        r.id,
                        r.label,
                        voice.record(vi).label
                    )));
                }
            }
        }
    }
    Ok(())
}

pub fn save_split(split: &SplitSpec, path: &Path) -> Result<()> {
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = BufWriter::new(file);
    let werr = |e| Error::io(path, e);
    writeln!(w, "#fvsplit,version=1,kind={}", split.kind.as_str()).map_err(werr)?;
    for (section, ids) in [("train", &split.train), ("val", &split.val), ("test", &split.test)] {
        for id in ids {
            writeln!(w, "{section},{id}").map_err(werr)?;
        }
    }
    w.flush().map_err(werr)?;
    Ok(())
}

pub fn load_split(path: &Path) -> Result<SplitSpec> {
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    let reader = BufReader::new(file);
    let mut lines = reader.lines();
    let header = lines
        .next()
        .ok_or_else(|| Error::Parse {
            path: path.to_path_buf(),
            offset: 0,
            message: "empty split file".into(),
        })?
        .map_err(|e| Error::io(path, e))?;
    let kind = header
        .strip_prefix("#fvsplit,version=1,kind=")
        .ok_or_else(|| Error::Parse {
            path: path.to_path_buf(),
            offset: 0,
            message: format!("bad split header {header:?}"),
        })
        .and_then(SplitKind::parse)?;
    let mut split = SplitSpec {
        kind,
        train: Vec::new(),
        val: Vec::new(),
        test: Vec::new(),
    };
    for (lineno, line) in lines.enumerate() {
        let line = line.map_err(|e| Error::io(path, e))?;
        if line.is_empty() {
            continue;
        }
        let (section, id) = line.split_once(',').ok_or_else(|| Error::Parse {
            path: path.to_path_buf(),
            offset: (lineno + 1) as u64,
            message: format!("bad split line {line:?}"),
        })?;
        match section {
            "train" => split.train.push(id.to_string()),
            "val" => split.val.push(id.to_string()),
            "test" => split.test.push(id.to_string()),
            other => {
                return Err(Error::Parse {
                    path: path.to_path_buf(),
                    offset: (lineno + 1) as u64,
                    message: format!("unknown split section {other:?}"),
                })
            }
        }
    }
    Ok(split)
}

// ── Synthetic generator ─────────────────────────────────────────────────────

/// Controls for the synthetic paired-embedding benchmark.
///
/// Per identity a latent vector is drawn; instance vectors are fixed random
/// linear maps of that latent plus Gaussian noise. `correlation` in [0, 1]
/// blends the latent shared between modalities against per-modality identity
/// latents: at 1 both modalities see the same latent, at 0 they carry no
/// cross-modal signal (though each modality still clusters by identity). An
/// optional language-shift vector, added to the latent before the voice
/// projection, produces a second voice store with a controlled domain gap.
#[derive(Clone, Debug)]
pub struct SyntheticSpec {
    pub num_identities: usize,
    pub instances_per_identity: usize,
    pub latent_dim: usize,
    pub face_dim: usize,
    pub voice_dim: usize,
    pub noise_sigma: f64,
    pub correlation: f64,
    pub language_shift: Option<Vec<f64>>,
    pub seed: u64,
}

impl Default for SyntheticSpec {
    fn default() -> Self {
        SyntheticSpec {
            num_identities: 32,
            instances_per_identity: 20,
            latent_dim: 8,
            face_dim: 64,
            voice_dim: 48,
            noise_sigma: 0.1,
            correlation: 0.9,
            language_shift: None,
            seed: 42,
        }
    }
}

impl SyntheticSpec {
    pub fn validate(&self) -> Result<()> {
        for (name, v) in [
            ("num_identities", self.num_identities),
            ("instances_per_identity", self.instances_per_identity),
            ("latent_dim", self.latent_dim),
            ("face_dim", self.face_dim),
            ("voice_dim", self.voice_dim),
        ] {
            if v == 0 {
                return Err(Error::Config(format!("{name} must be >= 1")));
            }
        }
        if self.noise_sigma < 0.0 {
            return Err(Error::Config(format!(
                "noise_sigma must be >= 0, got {}",
                self.noise_sigma
            )));
        }
        if !(0.0..=1.0).contains(&self.correlation) {
            return Err(Error::Config(format!(
                "correlation must be in [0, 1], got {}",
                self.correlation
            )));
        }
        if let Some(shift) = &self.language_shift {
            if shift.len() != self.latent_dim {
                return Err(Error::Config(format!(
                    "language_shift has {} entries, latent_dim is {}",
                    shift.len(),
                    self.latent_dim
                )));
            }
        }
        Ok(())
    }
}

/// Seeded language-shift vector: a random latent-space direction scaled to
/// the given magnitude. Zero magnitude means no shift.
pub fn seeded_language_shift(latent_dim: usize, magnitude: f64, seed: u64) -> Option<Vec<f64>> {
    if magnitude <= 0.0 {
        return None;
    }
    let mut rng = domain_rng(seed, "langshift");
    let mut dir: Vec<f64> = (0..latent_dim)
        .map(|_| <StandardNormal as Distribution<f64>>::sample(&StandardNormal, &mut rng))
        .collect();
    let norm: f64 = dir.iter().map(|v| v * v).sum::<f64>().sqrt().max(1e-12);
    for v in &mut dir {
        *v *= magnitude / norm;
    }
    Some(dir)
}

/// Output of [`synthesize`]: paired face/voice stores plus, when a language
/// shift was requested, a second voice store with the shifted distribution
/// (language code 1).
#[derive(Clone, Debug)]
pub struct SynthOutput {
    pub face: EmbeddingStore,
    pub voice: EmbeddingStore,
    pub voice_shifted: Option<EmbeddingStore>,
}

/// Generate paired face/voice embedding stores from the spec, fully
/// determined by (spec, spec.seed).
pub fn synthesize(spec: &SyntheticSpec) -> Result<SynthOutput> {
    spec.validate()?;
    let mut rng = domain_rng(spec.seed, "data");
    fn gauss(rng: &mut crate::rng::Rng) -> f64 {
        StandardNormal.sample(rng)
    }
    fn draw(n: usize, rng: &mut crate::rng::Rng) -> Vec<f64> {
        (0..n).map(|_| gauss(rng)).collect()
    }

    // Fixed random projection maps, shared by all identities.
    let map_face = Matrix::from_vec(
        spec.latent_dim,
        spec.face_dim,
        draw(spec.latent_dim * spec.face_dim, &mut rng),
    )?;
    let map_voice = Matrix::from_vec(
        spec.latent_dim,
        spec.voice_dim,
        draw(spec.latent_dim * spec.voice_dim, &mut rng),
    )?;

    let rho = spec.correlation;
    let independent_scale = (1.0 - rho * rho).sqrt();

    let project = |latent: &[f64], map: &Matrix, out_dim: usize| -> Vec<f64> {
        let mut out = vec![0.0; out_dim];
        for (k, &z) in latent.iter().enumerate() {
            let row = map.row(k);
            for (j, o) in out.iter_mut().enumerate() {
                *o += z * row[j];
            }
        }
        out
    };

    let mut face_records = Vec::new();
    let mut voice_records = Vec::new();
    let mut voice_shifted_records = Vec::new();

    for identity in 0..spec.num_identities {
        let shared = draw(spec.latent_dim, &mut rng);
        let face_own = draw(spec.latent_dim, &mut rng);
        let voice_own = draw(spec.latent_dim, &mut rng);
        // unit-variance blend of the shared and per-modality latents
        let face_latent: Vec<f64> = shared
            .iter()
            .zip(&face_own)
            .map(|(&s, &o)| rho * s + independent_scale * o)
            .collect();
        let voice_latent: Vec<f64> = shared
            .iter()
            .zip(&voice_own)
            .map(|(&s, &o)| rho * s + independent_scale * o)
            .collect();
        let voice_latent_shifted: Option<Vec<f64>> = spec.language_shift.as_ref().map(|shift| {
            voice_latent
                .iter()
                .zip(shift)
                .map(|(&z, &s)| z + s)
                .collect()
        });

        // round-robin demographic codes for stratification tests
        let attrs = |language: u16| Attributes {
            gender: (identity % 2) as u16,
            nationality: (identity % 3) as u16,
            age_group: (identity % 4) as u16,
            language,
        };

        for instance in 0..spec.instances_per_identity {
            let id = format!("id{identity:04}_{instance:03}");
            let mut face_vec = project(&face_latent, &map_face, spec.face_dim);
            for v in &mut face_vec {
                *v += spec.noise_sigma * gauss(&mut rng);
            }
            let mut voice_vec = project(&voice_latent, &map_voice, spec.voice_dim);
            for v in &mut voice_vec {
                *v += spec.noise_sigma * gauss(&mut rng);
            }
            face_records.push(Record {
                id: id.clone(),
                label: identity,
                attrs: attrs(0),
                vector: face_vec,
            });
            voice_records.push(Record {
                id: id.clone(),
                label: identity,
                attrs: attrs(0),
                vector: voice_vec,
            });
            if let Some(shifted_latent) = &voice_latent_shifted {
                let mut v2 = project(shifted_latent, &map_voice, spec.voice_dim);
                for v in &mut v2 {
                    *v += spec.noise_sigma * gauss(&mut rng);
                }
                voice_shifted_records.push(Record {
                    id,
                    label: identity,
                    attrs: attrs(1),
                    vector: v2,
                });
            }
        }
    }

    Ok(SynthOutput {
        face: EmbeddingStore::new(Modality::Face, spec.face_dim, face_records)?,
        voice: EmbeddingStore::new(Modality::Voice, spec.voice_dim, voice_records)?,
        voice_shifted: if voice_shifted_records.is_empty() {
            None
        } else {
            Some(EmbeddingStore::new(
                Modality::Voice,
                spec.voice_dim,
                voice_shifted_records,
            )?)
        },
    })
}
