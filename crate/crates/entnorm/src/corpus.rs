//! Dictionaries, mentions, and the preprocessing pipeline.
//!
//! A dictionary is the ordered universe of (synonym, CUI) pairs; the position
//! of an entry is its synonym id and never changes after construction.
//! Mentions are normalized (lowercase, punctuation stripped, abbreviation and
//! spelling substitution), split into components when composite, and aligned
//! with their gold CUIs.
//!
//! File formats:
//! - dictionary: one `CUI||name` per line, UTF-8, LF
//! - mentions:   one `raw_mention||CUI` per line, several gold CUIs joined by `|`
//! - substitution maps: two-column TSV `short \t long`

use std::collections::{BTreeSet, HashMap, HashSet};
use std::fmt;
use std::fs;
use std::path::Path;
use std::sync::OnceLock;

use regex::Regex;
use serde::{Deserialize, Serialize};

use crate::{Error, Result};

/// Opaque concept identifier (e.g. `MeSH:D007052`). Non-empty, trimmed.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(transparent)]
pub struct ConceptId(String);

impl ConceptId {
    pub fn new(raw: &str) -> Option<Self> {
        let trimmed = raw.trim();
        if trimmed.is_empty() {
            None
        } else {
            Some(ConceptId(trimmed.to_string()))
        }
    }

    pub fn as_str(&self) -> &str {
        &self.0
    }
}

impl fmt::Display for ConceptId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

/// One dictionary row: a preprocessed synonym string and its CUI.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct DictEntry {
    pub name: String,
    pub cui: ConceptId,
}

/// Ordered synonym universe. Entry position is the synonym id.
#[derive(Debug, Clone)]
pub struct Dictionary {
    entries: Vec<DictEntry>,
    index: HashMap<String, Vec<usize>>,
    pairs: HashSet<(String, ConceptId)>,
}

impl Dictionary {
    /// Build from (name, cui) pairs, dropping duplicate (name, cui) pairs and
    /// keeping first-seen order. Names must already be normalized.
    pub fn from_entries<I>(entries: I) -> Result<Self>
    where
        I: IntoIterator<Item = (String, ConceptId)>,
    {
        let mut dict = Dictionary {
            entries: Vec::new(),
            index: HashMap::new(),
            pairs: HashSet::new(),
        };
        for (name, cui) in entries {
            dict.push_unique(name, cui);
        }
        if dict.entries.is_empty() {
            return Err(Error::EmptyDictionary);
        }
        Ok(dict)
    }

    fn push_unique(&mut self, name: String, cui: ConceptId) -> bool {
        debug_assert!(!name.is_empty());
        let key = (name.clone(), cui.clone());
        if self.pairs.contains(&key) {
            return false;
        }
        let id = self.entries.len();
        self.index.entry(name.clone()).or_default().push(id);
        self.pairs.insert(key);
        self.entries.push(DictEntry { name, cui });
        true
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn entries(&self) -> &[DictEntry] {
        &self.entries
    }

    pub fn entry(&self, synonym_id: usize) -> &DictEntry {
        &self.entries[synonym_id]
    }

    /// Synonym ids carrying exactly this (normalized) name.
    pub fn ids_for_name(&self, name: &str) -> &[usize] {
        self.index.get(name).map(Vec::as_slice).unwrap_or(&[])
    }

    pub fn contains_pair(&self, name: &str, cui: &ConceptId) -> bool {
        self.pairs.contains(&(name.to_string(), cui.clone()))
    }

    /// Canonical serialization: `CUI||name` lines in entry order.
    pub fn canonical_string(&self) -> String {
        let mut out = String::new();
        for e in &self.entries {
            out.push_str(e.cui.as_str());
            out.push_str("||");
            out.push_str(&e.name);
            out.push('\n');
        }
        out
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        fs::write(path, self.canonical_string()).map_err(|e| Error::io(path, e))
    }
}

/// Load a `CUI||name` dictionary file. Names are normalized (no substitution
/// maps are applied to dictionary entries), entries whose name normalizes to
/// the empty string are skipped, and duplicate (name, cui) lines are dropped.
pub fn load_dictionary(path: &Path) -> Result<Dictionary> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let empty = SubstitutionMap::default();
    let mut entries = Vec::new();
    for (lineno, line) in text.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let (cui_raw, name_raw) = line
            .split_once("||")
            .ok_or_else(|| Error::parse(path, lineno + 1, "expected `CUI||name`"))?;
        let cui = ConceptId::new(cui_raw)
            .ok_or_else(|| Error::parse(path, lineno + 1, "empty CUI"))?;
        match normalize_text(name_raw, &empty, &empty) {
            Ok(name) => entries.push((name, cui)),
            Err(Error::EmptyMention { .. }) => continue,
            Err(e) => return Err(e),
        }
    }
    Dictionary::from_entries(entries)
}

/// Whole-word substitution map (abbreviation expansions, spelling fixes).
///
/// Keys must normalize to a single lowercase token; values are normalized
/// long forms. Applied in one pass, so expansions are never re-expanded.
#[derive(Debug, Clone, Default)]
pub struct SubstitutionMap {
    pairs: HashMap<String, String>,
}

impl SubstitutionMap {
    pub fn from_pairs<I>(pairs: I) -> Result<Self>
    where
        I: IntoIterator<Item = (String, String)>,
    {
        let mut map = HashMap::new();
        for (short, long) in pairs {
            let key = normalize_token(&short)
                .ok_or_else(|| Error::InvalidConfig(format!("empty substitution key {short:?}")))?;
            let value = normalize_plain(&long)
                .map_err(|_| Error::InvalidConfig(format!("empty substitution value for {short:?}")))?;
            if key == value {
                return Err(Error::InvalidConfig(format!(
                    "substitution key {key:?} maps to itself"
                )));
            }
            if let Some(prev) = map.insert(key.clone(), value.clone()) {
                if prev != value {
                    return Err(Error::InvalidConfig(format!(
                        "conflicting substitutions for key {key:?}"
                    )));
                }
            }
        }
        Ok(SubstitutionMap { pairs: map })
    }

    /// Load from two-column TSV `short \t long`.
    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let mut pairs = Vec::new();
        for (lineno, line) in text.lines().enumerate() {
            if line.trim().is_empty() {
                continue;
            }
            let (short, long) = line
                .split_once('\t')
                .ok_or_else(|| Error::parse(path, lineno + 1, "expected `short\\tlong`"))?;
            pairs.push((short.to_string(), long.to_string()));
        }
        SubstitutionMap::from_pairs(pairs)
            .map_err(|e| Error::parse(path, 0, e.to_string()))
    }

    pub fn get(&self, token: &str) -> Option<&str> {
        self.pairs.get(token).map(String::as_str)
    }

    pub fn len(&self) -> usize {
        self.pairs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.pairs.is_empty()
    }
}

/// A single-token normalization used for substitution keys: lowercase,
/// punctuation to space, collapse; `None` unless the result is one token.
fn normalize_token(raw: &str) -> Option<String> {
    let cleaned = strip_punct_lower(raw);
    let mut tokens = cleaned.split_whitespace();
    match (tokens.next(), tokens.next()) {
        (Some(tok), None) => Some(tok.to_string()),
        _ => None,
    }
}

fn punct_re() -> &'static Regex {
    static RE: OnceLock<Regex> = OnceLock::new();
    RE.get_or_init(|| Regex::new(r"\p{P}").expect("valid regex"))
}

fn strip_punct_lower(raw: &str) -> String {
    let lowered = raw.to_lowercase();
    punct_re().replace_all(&lowered, " ").into_owned()
}

fn substitute_tokens(text: &str, map: &SubstitutionMap) -> String {
    if map.is_empty() {
        return text.to_string();
    }
    let mut out = String::with_capacity(text.len());
    for (i, token) in text.split_whitespace().enumerate() {
        if i > 0 {
            out.push(' ');
        }
        out.push_str(map.get(token).unwrap_or(token));
    }
    out
}

/// Normalize a raw string: lowercase, replace every punctuation character
/// (Unicode category P) with a space, collapse whitespace runs, then expand
/// abbreviations and apply spelling substitutions once per whole-word match.
pub fn normalize_text(
    raw: &str,
    abbrev: &SubstitutionMap,
    spelling: &SubstitutionMap,
) -> Result<String> {
    let cleaned = strip_punct_lower(raw);
    let collapsed = cleaned.split_whitespace().collect::<Vec<_>>().join(" ");
    let expanded = substitute_tokens(&collapsed, abbrev);
    let spelled = substitute_tokens(&expanded, spelling);
    let out = spelled.split_whitespace().collect::<Vec<_>>().join(" ");
    if out.is_empty() {
        return Err(Error::EmptyMention {
            raw: raw.to_string(),
        });
    }
    Ok(out)
}

/// Normalize with empty substitution maps.
pub fn normalize_plain(raw: &str) -> Result<String> {
    let empty = SubstitutionMap::default();
    normalize_text(raw, &empty, &empty)
}

/// Split a composite mention into conjuncts sharing a trailing head word.
///
/// Conjuncts are separated by the standalone token `and`, by commas, or by
/// slashes. When the last conjunct carries `head_width` extra trailing
/// tokens, those tokens are treated as a shared head and appended to every
/// elided conjunct (one that is shorter than the last and does not already
/// end with the head), so "breast and ovarian cancer" splits into "breast
/// cancer" and "ovarian cancer" while "m1 zanopathy and m2 zanosis" keeps
/// both conjuncts as written. Non-composite inputs come back unchanged.
pub fn split_composite(text: &str) -> Vec<String> {
    split_composite_with_head(text, 1)
}

pub fn split_composite_with_head(text: &str, head_width: usize) -> Vec<String> {
    let marked = text.replace(',', " , ").replace('/', " / ");
    let tokens: Vec<&str> = marked.split_whitespace().collect();

    let mut parts: Vec<Vec<&str>> = vec![Vec::new()];
    for tok in &tokens {
        if *tok == "and" || *tok == "," || *tok == "/" {
            // adjacent separators (", and") delimit a single boundary
            if !parts.last().expect("nonempty").is_empty() {
                parts.push(Vec::new());
            }
        } else {
            parts.last_mut().expect("nonempty").push(tok);
        }
    }
    if parts.len() < 2 || parts.iter().any(Vec::is_empty) {
        return vec![text.to_string()];
    }

    let last = parts.last().expect("nonempty");
    let head: Vec<&str> = if last.len() > head_width {
        last[last.len() - head_width..].to_vec()
    } else {
        Vec::new()
    };

    parts
        .iter()
        .map(|part| {
            let mut words: Vec<&str> = part.clone();
            let elided = part.len() < last.len();
            if !head.is_empty() && elided && !part.ends_with(&head[..]) {
                words.extend_from_slice(&head);
            }
            words.join(" ")
        })
        .collect()
}

/// One normalized mention component with its gold CUI set.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct MentionComponent {
    pub text: String,
    pub gold: BTreeSet<ConceptId>,
}

/// A raw mention, its preprocessed components, and gold alignment.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct MentionRecord {
    pub raw: String,
    pub components: Vec<MentionComponent>,
    pub is_composite: bool,
    /// The composite split produced a component count different from the
    /// gold CUI count, so the record was kept unsplit with the full gold set.
    pub unsplit_fallback: bool,
}

/// Normalize, split, and align a raw mention with its gold CUIs.
///
/// When the number of split components equals the number of gold CUIs the
/// components are aligned one-to-one (in order); otherwise the record is kept
/// unsplit with the full gold set.
pub fn build_mention_record(
    raw: &str,
    golds: Vec<ConceptId>,
    abbrev: &SubstitutionMap,
    spelling: &SubstitutionMap,
) -> Result<MentionRecord> {
    if golds.is_empty() {
        return Err(Error::InvalidConfig(format!(
            "mention {raw:?} has no gold CUI"
        )));
    }
    let normalized = normalize_text(raw, abbrev, spelling)?;
    let parts = split_composite(&normalized);
    let (components, unsplit_fallback) = if parts.len() == golds.len() {
        let comps = parts
            .into_iter()
            .zip(golds)
            .map(|(text, cui)| MentionComponent {
                text,
                gold: BTreeSet::from([cui]),
            })
            .collect::<Vec<_>>();
        (comps, false)
    } else {
        let fallback = parts.len() != 1;
        (
            vec![MentionComponent {
                text: normalized,
                gold: golds.into_iter().collect(),
            }],
            fallback,
        )
    };
    let is_composite = components.len() > 1;
    Ok(MentionRecord {
        raw: raw.to_string(),
        components,
        is_composite,
        unsplit_fallback,
    })
}

/// Result of loading a mention file: parsed records plus the count of lines
/// skipped because the mention normalized to the empty string.
#[derive(Debug, Clone)]
pub struct MentionSet {
    pub records: Vec<MentionRecord>,
    pub skipped_empty: usize,
}

/// Load a `raw_mention||CUI` query file (gold CUIs joined by `|`).
pub fn load_mentions(
    path: &Path,
    abbrev: &SubstitutionMap,
    spelling: &SubstitutionMap,
) -> Result<MentionSet> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let mut records = Vec::new();
    let mut skipped_empty = 0;
    for (lineno, line) in text.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let (raw, cui_field) = line
            .split_once("||")
            .ok_or_else(|| Error::parse(path, lineno + 1, "expected `mention||CUI`"))?;
        let golds: Vec<ConceptId> = cui_field
            .split('|')
            .filter_map(ConceptId::new)
            .collect();
        if golds.is_empty() {
            return Err(Error::parse(path, lineno + 1, "no gold CUI"));
        }
        match build_mention_record(raw, golds, abbrev, spelling) {
            Ok(rec) => records.push(rec),
            Err(Error::EmptyMention { .. }) => skipped_empty += 1,
            Err(e) => return Err(e),
        }
    }
    Ok(MentionSet {
        records,
        skipped_empty,
    })
}

/// Append every single-gold training component absent from the dictionary as
/// a new entry. Existing entries keep their synonym ids; components with more
/// than one gold CUI are skipped.
pub fn merge_train_to_dictionary(dict: &Dictionary, train: &[MentionRecord]) -> Dictionary {
    let mut merged = dict.clone();
    for record in train {
        for comp in &record.components {
            if comp.gold.len() != 1 {
                continue;
            }
            let cui = comp.gold.iter().next().expect("one gold").clone();
            merged.push_unique(comp.text.clone(), cui);
        }
    }
    merged
}
