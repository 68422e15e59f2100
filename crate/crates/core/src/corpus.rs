//! Named example applications with entry requests and, where known,
//! expected exploration counts per instantiation config.

use std::collections::{BTreeMap, BTreeSet};
use std::path::{Path, PathBuf};

use serde::Deserialize;
use thiserror::Error;

use crate::faults::{FaultCatalog, FaultSpec};
use crate::index::InstantiationConfig;
use crate::sim::{App, AppSpec, EntryRequest};

#[derive(Debug, Error)]
pub enum CorpusError {
    #[error("cannot read {path}: {source}")]
    Io { path: PathBuf, source: std::io::Error },
    #[error("corpus entry `{entry}`: {reason}")]
    Invalid { entry: String, reason: String },
    #[error("duplicate corpus entry `{0}`")]
    Duplicate(String),
    #[error("unknown corpus entry `{0}`")]
    UnknownEntry(String),
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct EntryFile {
    name: String,
    #[serde(default)]
    description: String,
    app: AppSpec,
    entry: EntryRequest,
    #[serde(default)]
    expected_counts: BTreeMap<String, usize>,
    /// Faults per `service.method`; endpoints not listed get a single
    /// connection error.
    #[serde(default)]
    faults: BTreeMap<String, Vec<FaultSpec>>,
}

#[derive(Clone, Debug)]
pub struct CorpusEntry {
    pub name: String,
    pub description: String,
    pub app: App,
    pub entry: EntryRequest,
    pub expected_counts: BTreeMap<InstantiationConfig, usize>,
    pub catalog: FaultCatalog,
}

impl CorpusEntry {
    pub fn expected(&self, config: InstantiationConfig) -> Option<usize> {
        self.expected_counts.get(&config).copied()
    }
}

impl Ord for InstantiationConfig {
    fn cmp(&self, other: &Self) -> std::cmp::Ordering {
        let k = |c: &Self| (!c.include_payload, !c.include_callstack, !c.include_count, !c.include_path);
        k(self).cmp(&k(other))
    }
}

impl PartialOrd for InstantiationConfig {
    fn partial_cmp(&self, other: &Self) -> Option<std::cmp::Ordering> {
        Some(self.cmp(other))
    }
}

#[derive(Clone, Debug, Default)]
pub struct Corpus {
    entries: Vec<CorpusEntry>,
}

impl Corpus {
    pub fn entries(&self) -> &[CorpusEntry] {
        &self.entries
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn get(&self, name: &str) -> Option<&CorpusEntry> {
        self.entries.iter().find(|e| e.name == name)
    }

    pub fn require(&self, name: &str) -> Result<&CorpusEntry, CorpusError> {
        self.get(name).ok_or_else(|| CorpusError::UnknownEntry(name.to_string()))
    }

    pub fn names(&self) -> Vec<&str> {
        self.entries.iter().map(|e| e.name.as_str()).collect()
    }

    fn push(&mut self, e: CorpusEntry) -> Result<(), CorpusError> {
        if self.get(&e.name).is_some() {
            return Err(CorpusError::Duplicate(e.name));
        }
        self.entries.push(e);
        Ok(())
    }
}

/// Parses one corpus document. `origin` names the source in errors when
/// the document is too broken to yield its own name.
pub fn parse_entry(text: &str, origin: &str) -> Result<CorpusEntry, CorpusError> {
    let raw: EntryFile = serde_json::from_str(text)
        .map_err(|e| CorpusError::Invalid { entry: origin.to_string(), reason: e.to_string() })?;
    let invalid = |reason: String| CorpusError::Invalid { entry: raw.name.clone(), reason };
    if raw.name.trim().is_empty() {
        return Err(CorpusError::Invalid { entry: origin.to_string(), reason: "empty name".into() });
    }
    let app = App::new(raw.app.clone()).map_err(|e| invalid(e.to_string()))?;
    let sig = app.signature(&raw.entry.service, &raw.entry.method).map_err(|e| invalid(format!("entry: {e}")))?;
    let want: BTreeSet<&str> = sig.parameters.iter().map(|p| p.name.as_str()).collect();
    let got: BTreeSet<&str> = raw.entry.payload.keys().map(String::as_str).collect();
    if want != got {
        return Err(invalid(format!("entry payload {got:?} does not match parameters {want:?}")));
    }
    let mut expected_counts = BTreeMap::new();
    for (label, n) in &raw.expected_counts {
        let c: InstantiationConfig = label.parse().map_err(|_| invalid(format!("unknown config label `{label}`")))?;
        expected_counts.insert(c, *n);
    }
    let mut catalog = FaultCatalog::new();
    for s in app.signatures() {
        catalog.insert(&s, vec![FaultSpec::connection_error()]);
    }
    for (name, faults) in &raw.faults {
        let (svc, method) =
            name.split_once('.').ok_or_else(|| invalid(format!("fault key `{name}` is not service.method")))?;
        app.signature(svc, method).map_err(|_| invalid(format!("faults for unknown endpoint `{name}`")))?;
        if faults.is_empty() {
            return Err(invalid(format!("empty fault list for `{name}`")));
        }
        catalog.insert_named(name, faults.clone());
    }
    Ok(CorpusEntry { name: raw.name, description: raw.description, app, entry: raw.entry, expected_counts, catalog })
}

/// Loads every `*.json` file in a directory (in file-name order), or a
/// single file.
pub fn load_corpus(path: &Path) -> Result<Corpus, CorpusError> {
    let io = |source| CorpusError::Io { path: path.to_path_buf(), source };
    let mut files: Vec<PathBuf> = if path.is_dir() {
        std::fs::read_dir(path)
            .map_err(io)?
            .filter_map(|e| e.ok().map(|e| e.path()))
            .filter(|p| p.extension().is_some_and(|x| x == "json"))
            .collect()
    } else {
        vec![path.to_path_buf()]
    };
    files.sort();
    let mut corpus = Corpus::default();
    for f in files {
        let text = std::fs::read_to_string(&f).map_err(|source| CorpusError::Io { path: f.clone(), source })?;
        corpus.push(parse_entry(&text, &f.display().to_string())?)?;
    }
    Ok(corpus)
}

const BUNDLED: &[(&str, &str)] = &[
    ("cinema-10.json", include_str!("../corpus/cinema-10.json")),
    ("cinema-3.json", include_str!("../corpus/cinema-3.json")),
    ("cinema-9.json", include_str!("../corpus/cinema-9.json")),
    ("figure-2.json", include_str!("../corpus/figure-2.json")),
    ("figure-3.json", include_str!("../corpus/figure-3.json")),
    ("figure-4.json", include_str!("../corpus/figure-4.json")),
    ("figure-5.json", include_str!("../corpus/figure-5.json")),
    ("figure-6-stream.json", include_str!("../corpus/figure-6-stream.json")),
    ("hello-world-concurrency.json", include_str!("../corpus/hello-world-concurrency.json")),
];

/// The corpus compiled into the binary; same content as `corpus/`.
pub fn bundled() -> Result<Corpus, CorpusError> {
    let mut corpus = Corpus::default();
    for (file, text) in BUNDLED {
        corpus.push(parse_entry(text, file)?)?;
    }
    Ok(corpus)
}

/// Directory of the corpus files in the source tree.
pub fn bundled_dir() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("corpus")
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn bundled_matches_directory() {
        let a = bundled().unwrap();
        let b = load_corpus(&bundled_dir()).unwrap();
        assert_eq!(a.names(), b.names());
        assert_eq!(a.len(), 9);
    }

    #[test]
    fn errors_name_the_entry() {
        let text = include_str!("../corpus/figure-2.json")
            .replace(r#""method": "echo", "args""#, r#""method": "nope", "args""#);
        match parse_entry(&text, "f.json") {
            Err(CorpusError::Invalid { entry, .. }) => assert_eq!(entry, "figure-2"),
            other => panic!("{other:?}"),
        }
        let bad_label = include_str!("../corpus/figure-3.json").replace(r#""full": 5"#, r#""fast": 5"#);
        assert!(matches!(parse_entry(&bad_label, "f.json"), Err(CorpusError::Invalid { .. })));
    }
}
