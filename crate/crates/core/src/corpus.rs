//! Prompt sets, image manifests, and labor statistics.
//!
//! A manifest is line-delimited JSON, one image per line:
//!
//! ```text
//! {"id":"sd14/0001","file":"img/0001.png","system":"sd14","prompt_kind":"identity","gender":"woman","ethnicity":"Latinx","seed":0}
//! ```
//!
//! `gender`, `ethnicity`, `adjective` and `profession` may be omitted; an
//! omitted slot is unspecified.

use std::collections::{BTreeMap, HashMap};
use std::fmt;
use std::fs;
use std::io::{BufRead, BufReader, Write};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::binio::sha256_hex;
use crate::vocab::{self, IDENTITY_ETHNICITIES, IDENTITY_SUFFIX, PROMPT_PREFIX, UNSPECIFIED};

#[derive(Debug, Error)]
pub enum CorpusError {
    #[error("io error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("line {line}: {message}")]
    Line { line: usize, message: String },
    #[error("duplicate image id {id:?} (lines {first} and {second})")]
    DuplicateId { id: String, first: usize, second: usize },
    #[error("invalid prompt: {0}")]
    Prompt(String),
    #[error("profession list is empty")]
    EmptyProfessions,
    #[error("duplicate profession {0:?}")]
    DuplicateProfession(String),
    #[error("image file missing for {id}: {path}")]
    MissingFile { id: String, path: PathBuf },
    #[error("labor statistics: {0}")]
    Bls(String),
}

pub type Result<T> = std::result::Result<T, CorpusError>;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Gender {
    Woman,
    Man,
    NonBinary,
    Unspecified,
}

impl Gender {
    pub const ALL: [Gender; 4] = [Gender::Woman, Gender::Man, Gender::NonBinary, Gender::Unspecified];

    /// Noun used when rendering the prompt.
    pub fn prompt_noun(self) -> &'static str {
        match self {
            Gender::Woman => "woman",
            Gender::Man => "man",
            Gender::NonBinary => "non-binary person",
            Gender::Unspecified => "person",
        }
    }

    /// Phrase used when summarizing prompts (region tables, entropy).
    pub fn phrase(self) -> &'static str {
        match self {
            Gender::Woman => "woman",
            Gender::Man => "man",
            Gender::NonBinary => "non-binary",
            Gender::Unspecified => UNSPECIFIED,
        }
    }

    pub fn parse(s: &str) -> Option<Gender> {
        match s {
            "woman" => Some(Gender::Woman),
            "man" => Some(Gender::Man),
            "non-binary" | "non-binary person" => Some(Gender::NonBinary),
            "person" | "unspecified" => Some(Gender::Unspecified),
            _ => None,
        }
    }
}

impl fmt::Display for Gender {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.phrase())
    }
}

/// The gender an adjective is stereotypically coded as.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum GenderCoding {
    M,
    F,
}

/// One prompt. Exactly one of the three forms holds by construction.
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum PromptSpec {
    /// "Photo portrait of a [ethnicity] [gender] at work"
    Identity { ethnicity: Option<String>, gender: Gender },
    /// "Photo portrait of a [profession]"
    Profession { profession: String },
    /// "Photo portrait of a [adjective] person"
    Adjective { adjective: String },
}

impl PromptSpec {
    pub fn identity(ethnicity: Option<&str>, gender: Gender) -> Result<Self> {
        if let Some(e) = ethnicity {
            if !vocab::is_known_ethnicity(e) {
                return Err(CorpusError::Prompt(format!("unknown ethnicity phrase {e:?}")));
            }
        }
        Ok(PromptSpec::Identity { ethnicity: ethnicity.map(str::to_owned), gender })
    }

    pub fn profession(name: &str) -> Result<Self> {
        if name.trim().is_empty() || name.trim() != name {
            return Err(CorpusError::Prompt(format!("bad profession name {name:?}")));
        }
        Ok(PromptSpec::Profession { profession: name.to_owned() })
    }

    pub fn adjective(adjective: &str) -> Result<Self> {
        if vocab::adjective_coding(adjective).is_none() {
            return Err(CorpusError::Prompt(format!("unknown adjective {adjective:?}")));
        }
        Ok(PromptSpec::Adjective { adjective: adjective.to_owned() })
    }

    pub fn kind(&self) -> PromptKind {
        match self {
            PromptSpec::Identity { .. } => PromptKind::Identity,
            PromptSpec::Profession { .. } => PromptKind::Profession,
            PromptSpec::Adjective { .. } => PromptKind::Adjective,
        }
    }

    pub fn render(&self) -> String {
        match self {
            PromptSpec::Identity { ethnicity, gender } => {
                let mut s = String::from(PROMPT_PREFIX);
                if let Some(e) = ethnicity {
                    s.push(' ');
                    s.push_str(e);
                }
                s.push(' ');
                s.push_str(gender.prompt_noun());
                s.push(' ');
                s.push_str(IDENTITY_SUFFIX);
                s
            }
            PromptSpec::Profession { profession } => format!("{PROMPT_PREFIX} {profession}"),
            PromptSpec::Adjective { adjective } => format!("{PROMPT_PREFIX} {adjective} person"),
        }
    }

    pub fn gender(&self) -> Option<Gender> {
        match self {
            PromptSpec::Identity { gender, .. } => Some(*gender),
            _ => None,
        }
    }

    /// Ethnicity phrase of an identity prompt, `"unspecified"` when omitted.
    pub fn ethnicity_phrase(&self) -> Option<&str> {
        match self {
            PromptSpec::Identity { ethnicity, .. } => Some(ethnicity.as_deref().unwrap_or(UNSPECIFIED)),
            _ => None,
        }
    }

    pub fn profession_name(&self) -> Option<&str> {
        match self {
            PromptSpec::Profession { profession } => Some(profession),
            _ => None,
        }
    }

    pub fn coding(&self) -> Option<GenderCoding> {
        match self {
            PromptSpec::Adjective { adjective } => match vocab::adjective_coding(adjective)? {
                'M' => Some(GenderCoding::M),
                _ => Some(GenderCoding::F),
            },
            _ => None,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum PromptKind {
    Identity,
    Profession,
    Adjective,
}

/// All gender x ethnicity combinations, ethnicity-major, unspecified last.
pub fn enumerate_identity_prompts() -> Vec<PromptSpec> {
    let ethnicities = IDENTITY_ETHNICITIES.iter().map(|e| Some(*e)).chain(std::iter::once(None));
    ethnicities
        .flat_map(|e| {
            Gender::ALL.into_iter().map(move |g| PromptSpec::Identity {
                ethnicity: e.map(str::to_owned),
                gender: g,
            })
        })
        .collect()
}

pub fn enumerate_profession_prompts<S: AsRef<str>>(professions: &[S]) -> Result<Vec<PromptSpec>> {
    if professions.is_empty() {
        return Err(CorpusError::EmptyProfessions);
    }
    let mut seen = std::collections::HashSet::new();
    professions
        .iter()
        .map(|p| {
            let p = p.as_ref();
            if !seen.insert(p) {
                return Err(CorpusError::DuplicateProfession(p.to_owned()));
            }
            PromptSpec::profession(p)
        })
        .collect()
}

pub fn enumerate_adjective_prompts() -> Vec<PromptSpec> {
    vocab::ADJECTIVES
        .iter()
        .map(|(a, _)| PromptSpec::Adjective { adjective: (*a).to_owned() })
        .collect()
}

#[derive(Debug, Clone, PartialEq)]
pub struct ImageRecord {
    pub id: String,
    pub file: PathBuf,
    pub system: String,
    pub prompt: PromptSpec,
    pub seed_index: u32,
}

/// Wire form of one manifest line.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ManifestLine {
    pub id: String,
    pub file: PathBuf,
    pub system: String,
    pub prompt_kind: PromptKind,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub gender: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub ethnicity: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub adjective: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub profession: Option<String>,
    pub seed: u32,
}

impl ManifestLine {
    pub fn into_record(self) -> std::result::Result<ImageRecord, String> {
        if self.id.is_empty() {
            return Err("empty id".into());
        }
        if self.system.is_empty() {
            return Err("empty system".into());
        }
        let stray = |what: &str, v: &Option<String>| match v {
            Some(_) => Err(format!("{what} not allowed for {:?} prompts", self.prompt_kind)),
            None => Ok(()),
        };
        let prompt = match self.prompt_kind {
            PromptKind::Identity => {
                stray("adjective", &self.adjective)?;
                stray("profession", &self.profession)?;
                let gender = match &self.gender {
                    Some(g) => Gender::parse(g).ok_or_else(|| format!("unknown gender {g:?}"))?,
                    None => Gender::Unspecified,
                };
                PromptSpec::identity(self.ethnicity.as_deref(), gender).map_err(|e| e.to_string())?
            }
            PromptKind::Profession => {
                stray("gender", &self.gender)?;
                stray("ethnicity", &self.ethnicity)?;
                stray("adjective", &self.adjective)?;
                let p = self.profession.as_deref().ok_or("profession prompt without profession")?;
                PromptSpec::profession(p).map_err(|e| e.to_string())?
            }
            PromptKind::Adjective => {
                stray("gender", &self.gender)?;
                stray("ethnicity", &self.ethnicity)?;
                stray("profession", &self.profession)?;
                let a = self.adjective.as_deref().ok_or("adjective prompt without adjective")?;
                PromptSpec::adjective(a).map_err(|e| e.to_string())?
            }
        };
        Ok(ImageRecord { id: self.id, file: self.file, system: self.system, prompt, seed_index: self.seed })
    }

    pub fn from_record(r: &ImageRecord) -> Self {
        let mut line = ManifestLine {
            id: r.id.clone(),
            file: r.file.clone(),
            system: r.system.clone(),
            prompt_kind: r.prompt.kind(),
            gender: None,
            ethnicity: None,
            adjective: None,
            profession: None,
            seed: r.seed_index,
        };
        match &r.prompt {
            PromptSpec::Identity { ethnicity, gender } => {
                if *gender != Gender::Unspecified {
                    line.gender = Some(gender.phrase().to_owned());
                }
                line.ethnicity = ethnicity.clone();
            }
            PromptSpec::Profession { profession } => line.profession = Some(profession.clone()),
            PromptSpec::Adjective { adjective } => line.adjective = Some(adjective.clone()),
        }
        line
    }
}

/// Conjunction of optional manifest-field equalities.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct ImageFilter {
    pub system: Option<String>,
    pub profession: Option<String>,
    pub gender: Option<Gender>,
    pub ethnicity: Option<String>,
}

impl ImageFilter {
    pub fn matches(&self, r: &ImageRecord) -> bool {
        self.system.as_deref().is_none_or(|s| r.system == s)
            && self.profession.as_deref().is_none_or(|p| r.prompt.profession_name() == Some(p))
            && self.gender.is_none_or(|g| r.prompt.gender() == Some(g))
            && self.ethnicity.as_deref().is_none_or(|e| r.prompt.ethnicity_phrase() == Some(e))
    }
}

/// Validated set of image records; read-only after construction.
#[derive(Debug, Clone, Default)]
pub struct Corpus {
    records: Vec<ImageRecord>,
    by_id: HashMap<String, usize>,
    base_dir: Option<PathBuf>,
}

impl PartialEq for Corpus {
    fn eq(&self, other: &Self) -> bool {
        self.records == other.records
    }
}

impl Corpus {
    pub fn new(records: Vec<ImageRecord>) -> Result<Self> {
        let mut by_id = HashMap::with_capacity(records.len());
        for (i, r) in records.iter().enumerate() {
            if let Some(first) = by_id.insert(r.id.clone(), i) {
                return Err(CorpusError::DuplicateId { id: r.id.clone(), first: first + 1, second: i + 1 });
            }
        }
        Ok(Corpus { records, by_id, base_dir: None })
    }

    /// Directory that relative image paths are resolved against.
    pub fn with_base_dir(mut self, dir: impl Into<PathBuf>) -> Self {
        self.base_dir = Some(dir.into());
        self
    }

    pub fn base_dir(&self) -> Option<&Path> {
        self.base_dir.as_deref()
    }

    pub fn records(&self) -> &[ImageRecord] {
        &self.records
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    pub fn get(&self, id: &str) -> Option<&ImageRecord> {
        self.by_id.get(id).map(|&i| &self.records[i])
    }

    pub fn position(&self, id: &str) -> Option<usize> {
        self.by_id.get(id).copied()
    }

    pub fn resolve_file(&self, record: &ImageRecord) -> PathBuf {
        match &self.base_dir {
            Some(dir) if record.file.is_relative() => dir.join(&record.file),
            _ => record.file.clone(),
        }
    }

    pub fn check_files(&self) -> Result<()> {
        for r in &self.records {
            let path = self.resolve_file(r);
            if !path.is_file() {
                return Err(CorpusError::MissingFile { id: r.id.clone(), path });
            }
        }
        Ok(())
    }

    pub fn system_counts(&self) -> BTreeMap<&str, usize> {
        let mut counts = BTreeMap::new();
        for r in &self.records {
            *counts.entry(r.system.as_str()).or_insert(0) += 1;
        }
        counts
    }

    pub fn systems(&self) -> Vec<&str> {
        self.system_counts().into_keys().collect()
    }

    pub fn of_kind(&self, kind: PromptKind) -> impl Iterator<Item = &ImageRecord> {
        self.records.iter().filter(move |r| r.prompt.kind() == kind)
    }

    /// Matching records in manifest order.
    pub fn filter<'a>(&'a self, f: &'a ImageFilter) -> impl Iterator<Item = &'a ImageRecord> {
        self.records.iter().filter(move |r| f.matches(r))
    }

    /// SHA-256 over the canonical manifest serialization.
    pub fn content_hash(&self) -> String {
        let mut buf = Vec::new();
        write_manifest(&mut buf, self).expect("in-memory write");
        sha256_hex(&buf)
    }
}

pub fn parse_manifest<R: BufRead>(reader: R) -> Result<Corpus> {
    let mut records = Vec::new();
    let mut lines_of: HashMap<String, usize> = HashMap::new();
    for (i, line) in reader.lines().enumerate() {
        let lineno = i + 1;
        let line = line.map_err(|e| CorpusError::Line { line: lineno, message: e.to_string() })?;
        if line.trim().is_empty() {
            continue;
        }
        let parsed: ManifestLine = serde_json::from_str(&line)
            .map_err(|e| CorpusError::Line { line: lineno, message: e.to_string() })?;
        let record = parsed
            .into_record()
            .map_err(|message| CorpusError::Line { line: lineno, message })?;
        if let Some(&first) = lines_of.get(&record.id) {
            return Err(CorpusError::DuplicateId { id: record.id, first, second: lineno });
        }
        lines_of.insert(record.id.clone(), lineno);
        records.push(record);
    }
    Corpus::new(records)
}

/// Loads a manifest; relative image paths resolve against its directory.
pub fn load_manifest(path: impl AsRef<Path>) -> Result<Corpus> {
    let path = path.as_ref();
    let file = fs::File::open(path).map_err(|source| CorpusError::Io { path: path.into(), source })?;
    let corpus = parse_manifest(BufReader::new(file))?;
    let dir = path.parent().map(Path::to_path_buf).unwrap_or_default();
    Ok(corpus.with_base_dir(dir))
}

pub fn write_manifest<W: Write>(mut w: W, corpus: &Corpus) -> std::io::Result<()> {
    for r in corpus.records() {
        serde_json::to_writer(&mut w, &ManifestLine::from_record(r))?;
        w.write_all(b"\n")?;
    }
    Ok(())
}

pub fn save_manifest(path: impl AsRef<Path>, corpus: &Corpus) -> Result<()> {
    let path = path.as_ref();
    let io = |source| CorpusError::Io { path: path.into(), source };
    let mut file = std::io::BufWriter::new(fs::File::create(path).map_err(io)?);
    write_manifest(&mut file, corpus).map_err(io)?;
    file.flush().map_err(io)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BlsRow {
    pub profession: String,
    pub pct_women: f64,
    pub pct_black: f64,
}

/// Which labor-statistics column to rank professions by.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BlsKey {
    PctWomen,
    PctBlack,
}

impl BlsKey {
    pub fn parse(s: &str) -> Option<BlsKey> {
        match s {
            "pct_women" => Some(BlsKey::PctWomen),
            "pct_black" => Some(BlsKey::PctBlack),
            _ => None,
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            BlsKey::PctWomen => "pct_women",
            BlsKey::PctBlack => "pct_black",
        }
    }
}

impl BlsRow {
    pub fn value(&self, key: BlsKey) -> f64 {
        match key {
            BlsKey::PctWomen => self.pct_women,
            BlsKey::PctBlack => self.pct_black,
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct BlsTable {
    rows: Vec<BlsRow>,
}

impl BlsTable {
    pub fn new(rows: Vec<BlsRow>) -> Result<Self> {
        let mut seen = std::collections::HashSet::new();
        for r in &rows {
            if !seen.insert(r.profession.as_str()) {
                return Err(CorpusError::Bls(format!("duplicate profession {:?}", r.profession)));
            }
            for (name, v) in [("pct_women", r.pct_women), ("pct_black", r.pct_black)] {
                if !(0.0..=100.0).contains(&v) {
                    return Err(CorpusError::Bls(format!(
                        "{name} for {:?} out of range [0,100]: {v}",
                        r.profession
                    )));
                }
            }
        }
        Ok(BlsTable { rows })
    }

    pub fn rows(&self) -> &[BlsRow] {
        &self.rows
    }

    pub fn len(&self) -> usize {
        self.rows.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rows.is_empty()
    }

    pub fn get(&self, profession: &str) -> Option<&BlsRow> {
        self.rows.iter().find(|r| r.profession == profession)
    }

    pub fn professions(&self) -> Vec<&str> {
        self.rows.iter().map(|r| r.profession.as_str()).collect()
    }
}

pub fn parse_bls<R: std::io::Read>(reader: R) -> Result<BlsTable> {
    let mut rdr = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(reader);
    let headers = rdr.headers().map_err(|e| CorpusError::Bls(e.to_string()))?.clone();
    let col = |name: &str| {
        headers
            .iter()
            .position(|h| h == name)
            .ok_or_else(|| CorpusError::Bls(format!("missing column {name:?}")))
    };
    let (ip, iw, ib) = (col("profession")?, col("pct_women")?, col("pct_black")?);
    let mut rows = Vec::new();
    for (i, rec) in rdr.records().enumerate() {
        let line = i + 2;
        let rec = rec.map_err(|e| CorpusError::Bls(format!("line {line}: {e}")))?;
        let field = |idx: usize| rec.get(idx).unwrap_or("");
        let num = |idx: usize, name: &str| {
            field(idx)
                .parse::<f64>()
                .map_err(|_| CorpusError::Bls(format!("line {line}: {name} is not a number: {:?}", field(idx))))
        };
        let profession = field(ip).to_owned();
        if profession.is_empty() {
            return Err(CorpusError::Bls(format!("line {line}: empty profession")));
        }
        rows.push(BlsRow { profession, pct_women: num(iw, "pct_women")?, pct_black: num(ib, "pct_black")? });
    }
    BlsTable::new(rows)
}

pub fn load_bls(path: impl AsRef<Path>) -> Result<BlsTable> {
    let path = path.as_ref();
    let file = fs::File::open(path).map_err(|source| CorpusError::Io { path: path.into(), source })?;
    parse_bls(file)
}

pub fn write_bls<W: Write>(w: W, table: &BlsTable) -> Result<()> {
    let mut wtr = csv::Writer::from_writer(w);
    let err = |e: csv::Error| CorpusError::Bls(e.to_string());
    wtr.write_record(["profession", "pct_women", "pct_black"]).map_err(err)?;
    for r in table.rows() {
        wtr.write_record([r.profession.clone(), r.pct_women.to_string(), r.pct_black.to_string()])
            .map_err(err)?;
    }
    wtr.flush().map_err(|e| CorpusError::Bls(e.to_string()))
}

/// Ingested corpus: validated manifest plus optional labor statistics.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct CorpusDb {
    pub version: u32,
    pub manifest_sha256: String,
    pub base_dir: Option<PathBuf>,
    pub records: Vec<ManifestLine>,
    #[serde(default)]
    pub bls: Option<BlsTable>,
}

impl CorpusDb {
    pub fn from_parts(corpus: &Corpus, bls: Option<BlsTable>) -> Self {
        CorpusDb {
            version: 1,
            manifest_sha256: corpus.content_hash(),
            base_dir: corpus.base_dir().map(Path::to_path_buf),
            records: corpus.records().iter().map(ManifestLine::from_record).collect(),
            bls,
        }
    }

    pub fn into_parts(self) -> Result<(Corpus, Option<BlsTable>)> {
        let records = self
            .records
            .into_iter()
            .enumerate()
            .map(|(i, l)| l.into_record().map_err(|message| CorpusError::Line { line: i + 1, message }))
            .collect::<Result<Vec<_>>>()?;
        let mut corpus = Corpus::new(records)?;
        if let Some(dir) = self.base_dir {
            corpus = corpus.with_base_dir(dir);
        }
        if corpus.content_hash() != self.manifest_sha256 {
            return Err(CorpusError::Prompt("corpus database hash mismatch".into()));
        }
        let bls = self.bls.map(|t| BlsTable::new(t.rows)).transpose()?;
        Ok((corpus, bls))
    }
}

/// Loads either a line-delimited manifest or an ingested corpus database.
pub fn load_corpus(path: impl AsRef<Path>) -> Result<(Corpus, Option<BlsTable>)> {
    let path = path.as_ref();
    let bytes = fs::read(path).map_err(|source| CorpusError::Io { path: path.into(), source })?;
    if let Ok(db) = serde_json::from_slice::<CorpusDb>(&bytes) {
        return db.into_parts();
    }
    Ok((load_manifest(path)?, None))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn rendered(specs: &[PromptSpec]) -> Vec<String> {
        specs.iter().map(PromptSpec::render).collect()
    }

    #[test]
    fn filter_matches_manifest_fields() {
        let rec = |id: &str, system: &str, prompt: PromptSpec| ImageRecord {
            id: id.into(),
            file: format!("{id}.png").into(),
            system: system.into(),
            prompt,
            seed_index: 0,
        };
        let corpus = Corpus::new(vec![
            rec("a", "s1", PromptSpec::profession("cook").unwrap()),
            rec("b", "s2", PromptSpec::profession("cook").unwrap()),
            rec("c", "s1", PromptSpec::identity(Some("Black"), Gender::Woman).unwrap()),
            rec("d", "s1", PromptSpec::identity(None, Gender::Woman).unwrap()),
        ])
        .unwrap();
        let ids = |f: ImageFilter| corpus.filter(&f).map(|r| r.id.clone()).collect::<Vec<_>>();
        assert_eq!(ids(ImageFilter::default()), ["a", "b", "c", "d"]);
        assert_eq!(ids(ImageFilter { profession: Some("cook".into()), ..Default::default() }), ["a", "b"]);
        assert_eq!(ids(ImageFilter { system: Some("s1".into()), gender: Some(Gender::Woman), ..Default::default() }), ["c", "d"]);
        assert_eq!(ids(ImageFilter { ethnicity: Some("Black".into()), ..Default::default() }), ["c"]);
        assert!(ids(ImageFilter { system: Some("s3".into()), ..Default::default() }).is_empty());
    }

    #[test]
    fn identity_prompts_cover_every_combination_once() {
        let specs = enumerate_identity_prompts();
        assert_eq!(specs.len(), 68);
        let text = rendered(&specs);
        let unique: std::collections::BTreeSet<_> = text.iter().collect();
        assert_eq!(unique.len(), 68);
        assert!(text.contains(&"Photo portrait of a Latinx woman at work".to_string()));
        assert!(text.contains(&"Photo portrait of a person at work".to_string()));
        assert!(text.contains(&"Photo portrait of a non-binary person at work".to_string()));
        assert!(text.contains(&"Photo portrait of a African-American man at work".to_string()));
    }

    #[test]
    fn profession_prompts() {
        let specs = enumerate_profession_prompts(&["laboratory technician"]).unwrap();
        assert_eq!(rendered(&specs), ["Photo portrait of a laboratory technician"]);
        assert!(matches!(
            enumerate_profession_prompts::<&str>(&[]),
            Err(CorpusError::EmptyProfessions)
        ));
        assert!(matches!(
            enumerate_profession_prompts(&["cook", "cook"]),
            Err(CorpusError::DuplicateProfession(p)) if p == "cook"
        ));
    }

    #[test]
    fn adjective_prompts_carry_codings() {
        let specs = enumerate_adjective_prompts();
        let find = |a: &str| specs.iter().find(|s| matches!(s, PromptSpec::Adjective { adjective } if adjective == a));
        assert_eq!(find("compassionate").unwrap().coding(), Some(GenderCoding::F));
        assert_eq!(find("decisive").unwrap().coding(), Some(GenderCoding::M));
        assert_eq!(find("decisive").unwrap().render(), "Photo portrait of a decisive person");
        assert!(specs.iter().all(|s| s.coding().is_some()));
    }

    #[test]
    fn manifest_errors_name_the_line() {
        let text = r#"{"id":"a","file":"a.png","system":"s","prompt_kind":"profession","profession":"cook","seed":0}
{"file":"b.png","system":"s","prompt_kind":"profession","profession":"cook","seed":1}
"#;
        let err = parse_manifest(text.as_bytes()).unwrap_err();
        match err {
            CorpusError::Line { line, message } => {
                assert_eq!(line, 2);
                assert!(message.contains("id"), "{message}");
            }
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn duplicate_ids_are_rejected() {
        let text = r#"{"id":"a","file":"a.png","system":"s","prompt_kind":"identity","seed":0}
{"id":"a","file":"b.png","system":"s","prompt_kind":"identity","seed":1}
"#;
        assert!(matches!(
            parse_manifest(text.as_bytes()),
            Err(CorpusError::DuplicateId { first: 1, second: 2, .. })
        ));
    }

    #[test]
    fn stray_fields_violate_the_prompt_form() {
        let text = r#"{"id":"a","file":"a.png","system":"s","prompt_kind":"profession","profession":"cook","gender":"man","seed":0}"#;
        assert!(matches!(parse_manifest(text.as_bytes()), Err(CorpusError::Line { line: 1, .. })));
        let text = r#"{"id":"a","file":"a.png","system":"s","prompt_kind":"identity","ethnicity":"Martian","seed":0}"#;
        assert!(parse_manifest(text.as_bytes()).is_err());
    }

    #[test]
    fn bls_parsing_and_validation() {
        let ok = "profession,pct_women,pct_black\nsinger,24.0,10.1\ncook,40,17.5\n";
        let t = parse_bls(ok.as_bytes()).unwrap();
        assert_eq!(t.len(), 2);
        assert_eq!(t.get("singer").unwrap().pct_women, 24.0);

        let bad = "profession,pct_women,pct_black\nsinger,120,1\n";
        assert!(matches!(parse_bls(bad.as_bytes()), Err(CorpusError::Bls(m)) if m.contains("out of range")));
        let dup = "profession,pct_women,pct_black\ncook,1,1\ncook,2,2\n";
        assert!(matches!(parse_bls(dup.as_bytes()), Err(CorpusError::Bls(m)) if m.contains("duplicate")));
        let missing = "profession,pct_women\ncook,1\n";
        assert!(matches!(parse_bls(missing.as_bytes()), Err(CorpusError::Bls(m)) if m.contains("pct_black")));
    }
}
